//! Versioned binary checkpoints.
//!
//! Layout (little endian): the magic `STORMCKP`, a `u32` version, the body,
//! then an FNV-1a 64 checksum of everything before it. The body holds the
//! network configuration with the architecture descriptors derived from it,
//! the diffusion, sampler, front-end and training settings, and the full
//! training state: raw, moving-average and best parameters, optimizer
//! moments, history and the generator position.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::pipeline::FrontEnd;
use crate::score::{
    AdamState, DsmWeighting, EpochRecord, ModelState, NetConfig, Phase, TinyPredictor, TinyScoreNet,
    TrainConfig, TrainState,
};
use crate::sde::{OuveParams, SamplerConfig};
use crate::signal::StftConfig;

pub const MAGIC: &[u8; 8] = b"STORMCKP";
pub const VERSION: u32 = 1;

/// A trained (or partly trained) model with everything needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: NetConfig,
    /// 2 for stochastic regeneration, 1 for the purely generative model.
    pub n_cond: usize,
    pub process: OuveParams,
    pub sampler: SamplerConfig,
    pub front_end: FrontEnd,
    pub train: TrainConfig,
    pub state: TrainState,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::format("checkpoint", msg)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(bad(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(bad(format!("invalid flag {v} at byte {}", self.pos - 1))),
        }
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| bad(format!("count {v} out of range")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    /// A length prefix for items of `width` bytes, checked against what is
    /// left in the buffer.
    fn len(&mut self, width: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.checked_mul(width).map_or(true, |b| b > self.buf.len() - self.pos) {
            return Err(bad(format!("length {n} exceeds the remaining data")));
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("string is not UTF-8"))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
}

fn put_model(w: &mut Writer, m: &ModelState) {
    w.f64s(&m.params);
    w.f64s(&m.ema);
    w.f64s(&m.adam.m);
    w.f64s(&m.adam.v);
    w.u64(m.adam.t);
    w.f64s(&m.best);
}

fn get_model(r: &mut Reader, expected: usize) -> Result<ModelState> {
    let m = ModelState {
        params: r.f64s()?,
        ema: r.f64s()?,
        adam: AdamState {
            m: r.f64s()?,
            v: r.f64s()?,
            t: r.u64()?,
        },
        best: r.f64s()?,
    };
    for (what, v) in [
        ("parameters", &m.params),
        ("moving average", &m.ema),
        ("first moments", &m.adam.m),
        ("second moments", &m.adam.v),
        ("best parameters", &m.best),
    ] {
        if v.len() != expected {
            return Err(Error::Architecture {
                expected: format!("{expected} {what}"),
                found: format!("{}", v.len()),
            });
        }
    }
    Ok(m)
}

fn phase_code(p: Phase) -> u8 {
    match p {
        Phase::Pretrain => 0,
        Phase::Joint => 1,
    }
}

fn phase_from(code: u8) -> Result<Phase> {
    match code {
        0 => Ok(Phase::Pretrain),
        1 => Ok(Phase::Joint),
        _ => Err(bad(format!("unknown phase {code}"))),
    }
}

impl Checkpoint {
    /// Score network with the best moving-average weights.
    pub fn score_net(&self) -> Result<TinyScoreNet> {
        TinyScoreNet::from_params(self.net.clone(), self.n_cond, self.process.gamma, self.state.score.best.clone())
    }

    /// Predictor with the best moving-average weights, if the model has one.
    pub fn predictor(&self) -> Result<Option<TinyPredictor>> {
        self.state
            .predictor
            .as_ref()
            .map(|m| TinyPredictor::from_params(self.net.clone(), m.best.clone()))
            .transpose()
    }

    fn descriptors(&self) -> Result<(String, Option<String>)> {
        let score = TinyScoreNet::from_params(self.net.clone(), self.n_cond, self.process.gamma, self.state.score.params.clone())?;
        let pred = self
            .state
            .predictor
            .as_ref()
            .map(|m| TinyPredictor::from_params(self.net.clone(), m.params.clone()).map(|p| p.descriptor()))
            .transpose()?;
        Ok((score.descriptor(), pred))
    }

    fn validate(&self) -> Result<()> {
        self.process.validate()?;
        self.sampler.validate()?;
        self.front_end.validate()?;
        self.train.validate()?;
        if self.state.predictor.is_some() != (self.n_cond == 2) {
            return Err(Error::Architecture {
                expected: format!("a predictor exactly when the score takes 2 conditioning inputs (got {})", self.n_cond),
                found: format!("predictor present: {}", self.state.predictor.is_some()),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let (score_desc, pred_desc) = self.descriptors()?;
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);

        w.str(&score_desc);
        w.bool(pred_desc.is_some());
        if let Some(d) = &pred_desc {
            w.str(d);
        }
        w.usize(self.net.hidden);
        w.usize(self.net.dilations.len());
        self.net.dilations.iter().for_each(|&d| w.usize(d));
        w.usize(self.net.embed_dim);
        w.usize(self.n_cond);

        let p = &self.process;
        [p.gamma, p.sigma_min, p.sigma_max, p.t_max, p.t_eps].iter().for_each(|&v| w.f64(v));
        w.usize(self.sampler.n_steps);
        w.usize(self.sampler.corrector_steps);
        w.f64(self.sampler.corrector_snr);
        w.bool(self.sampler.denoise_final);
        w.usize(self.front_end.stft.window_len);
        w.usize(self.front_end.stft.hop);
        w.f64(self.front_end.warp_exponent);
        w.f64(self.front_end.warp_scale);

        let t = &self.train;
        w.f64(t.learning_rate);
        w.usize(t.batch);
        w.f64(t.ema_decay);
        w.usize(t.patience);
        w.f64(t.alpha);
        w.usize(t.max_epochs);
        w.usize(t.pretrain_epochs);
        w.usize(t.crop_frames);
        w.u8(match t.weighting {
            DsmWeighting::Unit => 0,
            DsmWeighting::SigmaSquared => 1,
        });
        w.u64(t.valid_seed);

        let s = &self.state;
        put_model(&mut w, &s.score);
        if let Some(m) = &s.predictor {
            put_model(&mut w, m);
        }
        w.u8(phase_code(s.phase));
        w.usize(s.epoch);
        w.u64(s.steps);
        w.f64(s.best_valid);
        w.usize(s.stale_epochs);
        w.bool(s.finished);
        w.usize(s.history.len());
        for e in &s.history {
            w.u8(phase_code(e.phase));
            w.usize(e.epoch);
            w.f64(e.train_loss);
            w.f64(e.valid_loss);
            w.bool(e.improved);
            w.f64s(&e.step_losses);
        }
        w.0.extend_from_slice(&s.rng.get_seed());
        w.u64(s.rng.get_stream());
        w.0.extend_from_slice(&s.rng.get_word_pos().to_le_bytes());

        let sum = fnv1a(&w.0);
        w.u64(sum);
        Ok(w.0)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 8 {
            return Err(bad("file too short"));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let stored_sum = u64::from_le_bytes(tail.try_into().map_err(|_| bad("missing checksum"))?);
        if fnv1a(body) != stored_sum {
            return Err(bad("checksum mismatch"));
        }

        let score_desc = r.str()?;
        let pred_desc = if r.bool()? { Some(r.str()?) } else { None };
        let hidden = r.usize()?;
        let n_dil = r.len(8)?;
        let dilations = (0..n_dil).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let net = NetConfig {
            hidden,
            dilations,
            embed_dim: r.usize()?,
        };
        net.validate()?;
        let n_cond = r.usize()?;
        let process = OuveParams {
            gamma: r.f64()?,
            sigma_min: r.f64()?,
            sigma_max: r.f64()?,
            t_max: r.f64()?,
            t_eps: r.f64()?,
        };
        let sampler = SamplerConfig {
            n_steps: r.usize()?,
            corrector_steps: r.usize()?,
            corrector_snr: r.f64()?,
            denoise_final: r.bool()?,
        };
        let front_end = FrontEnd {
            stft: StftConfig {
                window_len: r.usize()?,
                hop: r.usize()?,
            },
            warp_exponent: r.f64()?,
            warp_scale: r.f64()?,
        };
        let train = TrainConfig {
            learning_rate: r.f64()?,
            batch: r.usize()?,
            ema_decay: r.f64()?,
            patience: r.usize()?,
            alpha: r.f64()?,
            max_epochs: r.usize()?,
            pretrain_epochs: r.usize()?,
            crop_frames: r.usize()?,
            weighting: match r.u8()? {
                0 => DsmWeighting::Unit,
                1 => DsmWeighting::SigmaSquared,
                v => return Err(bad(format!("unknown loss weighting {v}"))),
            },
            valid_seed: r.u64()?,
        };

        if !(1..=2).contains(&n_cond) {
            return Err(bad(format!("conditioning count {n_cond}")));
        }
        let n_score = net.score_param_count(n_cond)?;
        let score = get_model(&mut r, n_score)?;
        let predictor = match pred_desc {
            Some(_) => Some(get_model(&mut r, net.predictor_param_count()?)?),
            None => None,
        };
        let phase = phase_from(r.u8()?)?;
        let epoch = r.usize()?;
        let steps = r.u64()?;
        let best_valid = r.f64()?;
        let stale_epochs = r.usize()?;
        let finished = r.bool()?;
        // each record is at least 42 bytes
        let n_hist = r.len(42)?;
        let mut history = Vec::with_capacity(n_hist);
        for _ in 0..n_hist {
            history.push(EpochRecord {
                phase: phase_from(r.u8()?)?,
                epoch: r.usize()?,
                train_loss: r.f64()?,
                valid_loss: r.f64()?,
                improved: r.bool()?,
                step_losses: r.f64s()?,
            });
        }
        let mut rng = ChaCha8Rng::from_seed(r.array()?);
        rng.set_stream(r.u64()?);
        rng.set_word_pos(r.u128()?);
        if r.pos != body.len() {
            return Err(bad(format!("{} trailing bytes", body.len() - r.pos)));
        }

        let ckpt = Self {
            net,
            n_cond,
            process,
            sampler,
            front_end,
            train,
            state: TrainState {
                score,
                predictor,
                phase,
                epoch,
                steps,
                best_valid,
                stale_epochs,
                finished,
                history,
                rng,
            },
        };
        ckpt.validate()?;
        let (score_found, pred_found) = ckpt.descriptors()?;
        if score_found != score_desc {
            return Err(Error::Architecture {
                expected: score_desc,
                found: score_found,
            });
        }
        if pred_found != pred_desc {
            return Err(Error::Architecture {
                expected: pred_desc.unwrap_or_default(),
                found: pred_found.unwrap_or_default(),
            });
        }
        Ok(ckpt)
    }

    /// Fails with [`Error::Architecture`] unless the stored networks match
    /// `net` with `n_cond` conditioning inputs.
    pub fn expect_architecture(&self, net: &NetConfig, n_cond: usize) -> Result<()> {
        if &self.net != net || self.n_cond != n_cond {
            let describe = |c: &NetConfig, n: usize| format!("{c:?} with {n} conditioning inputs");
            return Err(Error::Architecture {
                expected: describe(net, n_cond),
                found: describe(&self.net, self.n_cond),
            });
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Writes through a temporary file so an interrupted save never leaves
    /// a truncated checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}
