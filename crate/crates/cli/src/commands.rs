use std::fmt::{self, Write as _};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use storm_core::checkpoint::Checkpoint;
use storm_core::config::Config;
use storm_core::corpus::{synthesize_item, CorpusSpec, Split};
use storm_core::manifest::{read_manifest, write_manifest, ManifestRecord};
use storm_core::metrics::{log_spectral_distance, si_sdr, snr};
use storm_core::pipeline::{enhance_generative, enhance_predictive, enhance_storm, Enhanced};
use storm_core::score::{Dataset, TinyPredictor, TinyScoreNet, TrainOutcome, TrainState, Trainer};
use storm_core::sde_check::{verify_sde, CheckConfig};
use storm_core::signal::wav::{read_wav, write_wav, SampleFormat};
use storm_core::signal::SAMPLE_RATE;
use storm_core::wind::RecordedNoiseBank;
use storm_core::Error;

use crate::{Cli, Command, Mode, TrainMode};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug)]
pub enum Failure {
    Data(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Data(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Data(m) | Self::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical { .. } | Error::Divergence { .. } => Self::Numerical(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::Data(format!("stdout: {e}")))
        }
    }
}

fn pool(jobs: u16) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(usize::from(jobs))
        .build()
        .map_err(|e| Failure::Data(format!("thread pool: {e}")))
}

/// `.wav` files directly under `dir`, sorted by name.
fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Failure::Data(format!("{}: no .wav files", dir.display())));
    }
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Per-item generator: independent of processing order and thread count.
fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synthesize { config, out, noise_dir } => {
            synthesize(cli, config.as_deref(), out, noise_dir.as_deref())
        }
        Command::VerifySde {
            config,
            out,
            tolerance_scale,
            quick,
        } => verify(cli, config.as_deref(), out.as_deref(), *tolerance_scale, *quick),
        Command::Train {
            config,
            data,
            checkpoint,
            mode,
            resume,
            epochs,
        } => train(cli, config.as_deref(), data, checkpoint, *mode, *resume, *epochs),
        Command::Enhance {
            mode,
            checkpoint,
            input,
            out,
            steps,
        } => enhance(cli, *mode, checkpoint, input, out, *steps),
        Command::Evaluate { reference, estimate, out } => evaluate(cli, reference, estimate, out.as_deref()),
    }
}

fn synthesize(cli: &Cli, config: Option<&Path>, out: &Path, noise_dir: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let noise_bank = match noise_dir.or(cfg.noise_dir.as_deref()) {
        Some(dir) => Some(RecordedNoiseBank::load_dir(dir, cfg.corpus.sample_rate)?),
        None => None,
    };
    let spec = CorpusSpec {
        corpus: cfg.corpus.clone(),
        corruption: cfg.corruption,
        airflow: cfg.airflow.clone(),
        noise_bank,
    };
    for split in [Split::Train, Split::Valid, Split::Test] {
        for kind in ["clean", "noisy"] {
            create_dir(&out.join(split.name()).join(kind))?;
        }
    }
    let records = pool(cli.jobs)?.install(|| {
        (0..spec.corpus.total())
            .into_par_iter()
            .map(|i| -> Result<ManifestRecord> {
                let item = synthesize_item(&spec, cli.seed, i)?;
                let rel = |kind: &str| PathBuf::from(item.split.name()).join(kind).join(format!("{}.wav", item.id));
                let (clean, noisy) = (rel("clean"), rel("noisy"));
                write_wav(out.join(&clean), &item.clean, SampleFormat::Float32)?;
                write_wav(out.join(&noisy), &item.noisy, SampleFormat::Float32)?;
                Ok(ManifestRecord {
                    id: item.id,
                    split: item.split,
                    clean,
                    noisy,
                    params: item.params,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    write_manifest(out.join(MANIFEST), &records)?;
    println!("items={} manifest={}", records.len(), out.join(MANIFEST).display());
    Ok(())
}

fn verify(cli: &Cli, config: Option<&Path>, out: Option<&Path>, tolerance_scale: f64, quick: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let mut checks = CheckConfig {
        tolerance_scale,
        ..CheckConfig::default()
    };
    if quick {
        checks = CheckConfig {
            trajectories: 2000,
            forward_steps: 200,
            reverse_runs: 2000,
            reverse_steps: 100,
            mean_tol: 0.03,
            std_tol: 0.06,
            reverse_mean_tol: 0.06,
            reverse_std_tol: 0.12,
            ..checks
        };
    }
    let results = verify_sde(&cfg.process, &checks, cli.seed)?;
    let failed = results.iter().filter(|c| !c.passed()).count();
    let mut text = String::new();
    for c in &results {
        let _ = writeln!(text, "{c}");
    }
    let _ = writeln!(text, "summary checks={} passed={} failed={failed}", results.len(), results.len() - failed);
    write_text(out, &text)?;
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} of {} checks failed", results.len())));
    }
    Ok(())
}

fn load_dataset(data: &Path, cp: &Checkpoint, jobs: u16) -> Result<Dataset> {
    let records = read_manifest(data.join(MANIFEST))?;
    let pairs = pool(jobs)?.install(|| {
        records
            .par_iter()
            .filter(|r| r.split != Split::Test)
            .map(|r| -> Result<_> {
                let clean = read_wav(data.join(&r.clean), SAMPLE_RATE)?;
                let noisy = read_wav(data.join(&r.noisy), SAMPLE_RATE)?;
                Ok((r.split, cp.front_end.training_pair(&clean, &noisy)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (split, pair) in pairs {
        match split {
            Split::Train => train.push(pair),
            _ => valid.push(pair),
        }
    }
    Ok(Dataset::new(train, valid)?)
}

fn fresh_checkpoint(cfg: &Config, mode: TrainMode, seed: u64) -> Result<Checkpoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (process, sampler, n_cond) = match mode {
        TrainMode::Storm => (cfg.process, cfg.sampler, 2),
        TrainMode::Generative => (cfg.baseline_process, cfg.baseline_sampler, 1),
    };
    let score = TinyScoreNet::new(cfg.net.clone(), n_cond, process.gamma, &mut rng)?;
    let predictor = match mode {
        TrainMode::Storm => Some(TinyPredictor::new(cfg.net.clone(), &mut rng)?),
        TrainMode::Generative => None,
    };
    Ok(Checkpoint {
        net: cfg.net.clone(),
        n_cond,
        process,
        sampler,
        front_end: cfg.front_end,
        train: cfg.train.clone(),
        state: TrainState::new(&score, predictor.as_ref(), seed),
    })
}

fn train(
    cli: &Cli,
    config: Option<&Path>,
    data: &Path,
    checkpoint: &Path,
    mode: TrainMode,
    resume: bool,
    epochs: Option<usize>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let mut cp = if resume && checkpoint.exists() {
        let cp = Checkpoint::load(checkpoint)?;
        let n_cond = match mode {
            TrainMode::Storm => 2,
            TrainMode::Generative => 1,
        };
        cp.expect_architecture(&cp.net, n_cond)?;
        cp
    } else {
        fresh_checkpoint(&cfg, mode, cli.seed)?
    };
    let data = load_dataset(data, &cp, cli.jobs)?;
    let mut score = cp.score_net()?;
    let mut predictor = cp.predictor()?;
    let mut trainer = Trainer::new(&mut score, predictor.as_mut(), &data, cp.train.clone(), cp.process)?;
    let mut spent = 0;
    let outcome = loop {
        if epochs.is_some_and(|b| spent >= b) {
            break TrainOutcome::Paused;
        }
        let outcome = trainer.run(&mut cp.state, Some(1), &mut |r| {
            println!(
                "phase={} epoch={} train_loss={:.9e} valid_loss={:.9e} improved={}",
                r.phase.name(),
                r.epoch,
                r.train_loss,
                r.valid_loss,
                r.improved
            );
        })?;
        cp.save(checkpoint)?;
        spent += 1;
        if outcome != TrainOutcome::Paused {
            break outcome;
        }
    };
    cp.save(checkpoint)?;
    match outcome {
        TrainOutcome::Diverged { phase, epoch, step, what } => Err(Failure::Numerical(format!(
            "training diverged in {} epoch {epoch} at step {step}: {what}; checkpoint rolled back to the epoch start",
            phase.name()
        ))),
        TrainOutcome::Completed => {
            println!("status=completed epochs={}", cp.state.history.len());
            Ok(())
        }
        TrainOutcome::Paused => {
            println!("status=paused epochs={}", cp.state.history.len());
            Ok(())
        }
    }
}

fn enhance(cli: &Cli, mode: Mode, checkpoint: &Path, input: &Path, out: &Path, steps: Option<usize>) -> Result<()> {
    let cp = Checkpoint::load(checkpoint)?;
    let score = cp.score_net()?;
    let predictor = cp.predictor()?;
    let mut sampler = cp.sampler;
    if let Some(n) = steps {
        sampler.n_steps = n;
    }
    match (mode, &predictor) {
        (Mode::Storm | Mode::Predictive, None) => {
            return Err(Failure::Data(format!(
                "{}: {mode:?} enhancement needs a model trained with a predictor",
                checkpoint.display()
            )))
        }
        (Mode::Generative, Some(_)) => {
            return Err(Failure::Data(format!(
                "{}: generative enhancement needs a model trained without a predictor",
                checkpoint.display()
            )))
        }
        _ => {}
    }
    let files = wav_files(input)?;
    create_dir(out)?;
    let lines = pool(cli.jobs)?.install(|| {
        files
            .par_iter()
            .enumerate()
            .map(|(i, path)| -> Result<String> {
                let y = read_wav(path, SAMPLE_RATE)?;
                let mut rng = item_rng(cli.seed, i);
                let fe = &cp.front_end;
                let e: Enhanced = match (mode, &predictor) {
                    (Mode::Storm, Some(d)) => enhance_storm(&y, d, &score, fe, &cp.process, &sampler, &mut rng)?,
                    (Mode::Predictive, Some(d)) => enhance_predictive(&y, d, fe)?,
                    _ => enhance_generative(&y, &score, fe, &cp.process, &sampler, &mut rng)?,
                };
                let name = file_name(path);
                write_wav(out.join(&name), &e.waveform, SampleFormat::Float32)?;
                Ok(format!(
                    "file={name} predictor_calls={} score_calls={}",
                    e.predictor_calls, e.score_calls
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut text = lines.join("\n");
    text.push('\n');
    write_text(None, &text)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn evaluate(cli: &Cli, reference: &Path, estimate: &Path, out: Option<&Path>) -> Result<()> {
    let files = wav_files(estimate)?;
    let stft = storm_core::pipeline::FrontEnd::default().stft;
    let rows = pool(cli.jobs)?.install(|| {
        files
            .par_iter()
            .map(|path| -> Result<(String, [f64; 3])> {
                let name = file_name(path);
                let est = read_wav(path, SAMPLE_RATE)?;
                let reference = read_wav(reference.join(&name), SAMPLE_RATE)?;
                Ok((
                    name,
                    [
                        si_sdr(&reference, &est)?,
                        snr(&reference, &est)?,
                        log_spectral_distance(&reference, &est, &stft)?,
                    ],
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let names = ["si_sdr", "snr", "lsd"];
    let mut text = String::new();
    for (name, m) in &rows {
        let _ = writeln!(text, "file={name} si_sdr={:.6} snr={:.6} lsd={:.6}", m[0], m[1], m[2]);
    }
    let mut table = String::from("# metric      mean        std\n");
    for (k, metric) in names.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r.1[k]).collect();
        let (m, s) = mean_std(&col);
        let _ = writeln!(text, "aggregate metric={metric} mean={m:.6} std={s:.6} n={}", col.len());
        let _ = writeln!(table, "# {metric:<8} {m:>10.3} {s:>10.3}");
    }
    text.push_str(&table);
    write_text(out, &text)
}
