//! Plain-text `key = value` configuration.
//!
//! Every key overrides one default; unknown keys, repeated keys and
//! malformed values are errors. `#` starts a comment.
//!
//! ```text
//! # corruption distributions
//! corruption.snr_min = -6
//! corruption.snr_max = 14
//! train.max_epochs = 20
//! net.dilations = 1,2,4,1
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::corpus::CorpusConfig;
use crate::corruption::CorruptionSampler;
use crate::error::{Error, Result};
use crate::pipeline::FrontEnd;
use crate::score::{DsmWeighting, NetConfig, TrainConfig};
use crate::sde::{OuveParams, SamplerConfig};
use crate::wind::{AirflowSampler, GustCount};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub corpus: CorpusConfig,
    /// Directory of recorded wind-noise clips, if any.
    pub noise_dir: Option<PathBuf>,
    pub corruption: CorruptionSampler,
    pub airflow: AirflowSampler,
    pub front_end: FrontEnd,
    pub process: OuveParams,
    pub sampler: SamplerConfig,
    pub baseline_process: OuveParams,
    pub baseline_sampler: SamplerConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Enhancement chunk length in seconds; 0 processes whole utterances,
    /// the only supported mode.
    pub chunk_seconds: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            noise_dir: None,
            corruption: CorruptionSampler::default(),
            airflow: AirflowSampler::default(),
            front_end: FrontEnd::default(),
            process: OuveParams::storm(),
            sampler: SamplerConfig::storm(),
            baseline_process: OuveParams::generative_baseline(),
            baseline_sampler: SamplerConfig::generative_baseline(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            chunk_seconds: 0.0,
        }
    }
}

/// Every key the parser accepts.
pub const KEYS: &[&str] = &[
    "corpus.train_clips",
    "corpus.valid_clips",
    "corpus.test_clips",
    "corpus.clip_seconds",
    "corpus.noise_dir",
    "corpus.recorded_fraction",
    "corruption.snr_min",
    "corruption.snr_max",
    "corruption.threshold_min",
    "corruption.threshold_max",
    "corruption.ratio_min",
    "corruption.ratio_max",
    "corruption.attack_min",
    "corruption.attack_max",
    "corruption.release_min",
    "corruption.release_max",
    "corruption.sidechain_gain_min",
    "corruption.sidechain_gain_max",
    "corruption.clip_probability",
    "corruption.eta_min",
    "corruption.eta_max",
    "wind.gusts_min",
    "wind.gusts_max",
    "wind.baseline_min",
    "wind.baseline_max",
    "wind.gust_duration_min",
    "wind.gust_duration_max",
    "wind.gust_strength_min",
    "wind.gust_strength_max",
    "stft.window_len",
    "stft.hop",
    "warp.exponent",
    "warp.scale",
    "sde.gamma",
    "sde.sigma_min",
    "sde.sigma_max",
    "sde.t_max",
    "sde.t_eps",
    "sampler.steps",
    "sampler.corrector_steps",
    "sampler.corrector_snr",
    "sampler.denoise_final",
    "baseline.gamma",
    "baseline.sigma_min",
    "baseline.sigma_max",
    "baseline.t_max",
    "baseline.t_eps",
    "baseline.steps",
    "baseline.corrector_steps",
    "baseline.corrector_snr",
    "baseline.denoise_final",
    "net.hidden",
    "net.dilations",
    "net.embed_dim",
    "train.learning_rate",
    "train.batch",
    "train.ema_decay",
    "train.patience",
    "train.alpha",
    "train.max_epochs",
    "train.pretrain_epochs",
    "train.crop_frames",
    "train.weighting",
    "train.valid_seed",
    "enhance.chunk_seconds",
];

fn real(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("{v:?} is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{v:?} is not finite"))
    }
}

fn count(v: &str) -> std::result::Result<usize, String> {
    v.parse().map_err(|_| format!("{v:?} is not a non-negative integer"))
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{v:?} is not true or false")),
    }
}

fn process_key(p: &mut OuveParams, s: &mut SamplerConfig, field: &str, v: &str) -> std::result::Result<(), String> {
    match field {
        "gamma" => p.gamma = real(v)?,
        "sigma_min" => p.sigma_min = real(v)?,
        "sigma_max" => p.sigma_max = real(v)?,
        "t_max" => p.t_max = real(v)?,
        "t_eps" => p.t_eps = real(v)?,
        "steps" => s.n_steps = count(v)?,
        "corrector_steps" => s.corrector_steps = count(v)?,
        "corrector_snr" => s.corrector_snr = real(v)?,
        "denoise_final" => s.denoise_final = flag(v)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

impl Config {
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let c = &mut self.corruption;
        let w = &mut self.airflow;
        let t = &mut self.train;
        match key {
            "corpus.train_clips" => self.corpus.train_clips = count(v)?,
            "corpus.valid_clips" => self.corpus.valid_clips = count(v)?,
            "corpus.test_clips" => self.corpus.test_clips = count(v)?,
            "corpus.clip_seconds" => self.corpus.clip_seconds = real(v)?,
            "corpus.noise_dir" => self.noise_dir = Some(PathBuf::from(v)),
            "corpus.recorded_fraction" => self.corpus.recorded_fraction = real(v)?,
            "corruption.snr_min" => c.snr.lo = real(v)?,
            "corruption.snr_max" => c.snr.hi = real(v)?,
            "corruption.threshold_min" => c.threshold.lo = real(v)?,
            "corruption.threshold_max" => c.threshold.hi = real(v)?,
            "corruption.ratio_min" => c.ratio.lo = real(v)?,
            "corruption.ratio_max" => c.ratio.hi = real(v)?,
            "corruption.attack_min" => c.attack.lo = real(v)?,
            "corruption.attack_max" => c.attack.hi = real(v)?,
            "corruption.release_min" => c.release.lo = real(v)?,
            "corruption.release_max" => c.release.hi = real(v)?,
            "corruption.sidechain_gain_min" => c.sidechain_gain.lo = real(v)?,
            "corruption.sidechain_gain_max" => c.sidechain_gain.hi = real(v)?,
            "corruption.clip_probability" => c.clip_probability = real(v)?,
            "corruption.eta_min" => c.eta.lo = real(v)?,
            "corruption.eta_max" => c.eta.hi = real(v)?,
            "wind.gusts_min" | "wind.gusts_max" => {
                let n: u32 = v.parse().map_err(|_| format!("{v:?} is not a gust count"))?;
                let g = GustCount::new(n).map_err(|e| e.to_string())?;
                if key.ends_with("min") {
                    w.gusts_min = g;
                } else {
                    w.gusts_max = g;
                }
            }
            "wind.baseline_min" => w.baseline.0 = real(v)?,
            "wind.baseline_max" => w.baseline.1 = real(v)?,
            "wind.gust_duration_min" => w.gust_duration.0 = real(v)?,
            "wind.gust_duration_max" => w.gust_duration.1 = real(v)?,
            "wind.gust_strength_min" => w.gust_strength.0 = real(v)?,
            "wind.gust_strength_max" => w.gust_strength.1 = real(v)?,
            "stft.window_len" => self.front_end.stft.window_len = count(v)?,
            "stft.hop" => self.front_end.stft.hop = count(v)?,
            "warp.exponent" => self.front_end.warp_exponent = real(v)?,
            "warp.scale" => self.front_end.warp_scale = real(v)?,
            "net.hidden" => self.net.hidden = count(v)?,
            "net.embed_dim" => self.net.embed_dim = count(v)?,
            "net.dilations" => {
                self.net.dilations = v
                    .split(',')
                    .map(|d| count(d.trim()))
                    .collect::<std::result::Result<_, _>>()?;
            }
            "train.learning_rate" => t.learning_rate = real(v)?,
            "train.batch" => t.batch = count(v)?,
            "train.ema_decay" => t.ema_decay = real(v)?,
            "train.patience" => t.patience = count(v)?,
            "train.alpha" => t.alpha = real(v)?,
            "train.max_epochs" => t.max_epochs = count(v)?,
            "train.pretrain_epochs" => t.pretrain_epochs = count(v)?,
            "train.crop_frames" => t.crop_frames = count(v)?,
            "enhance.chunk_seconds" => self.chunk_seconds = real(v)?,
            "train.valid_seed" => t.valid_seed = v.parse().map_err(|_| format!("{v:?} is not a seed"))?,
            "train.weighting" => {
                t.weighting = match v {
                    "unit" => DsmWeighting::Unit,
                    "sigma2" => DsmWeighting::SigmaSquared,
                    _ => return Err(format!("{v:?} is not unit or sigma2")),
                }
            }
            _ => {
                if let Some(field) = key.strip_prefix("sde.").or_else(|| key.strip_prefix("sampler.")) {
                    process_key(&mut self.process, &mut self.sampler, field, v)?;
                } else if let Some(field) = key.strip_prefix("baseline.") {
                    process_key(&mut self.baseline_process, &mut self.baseline_sampler, field, v)?;
                } else {
                    return Err("unknown key".into());
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.corruption.validate()?;
        self.airflow.validate()?;
        self.front_end.validate()?;
        self.process.validate()?;
        self.sampler.validate()?;
        self.baseline_process.validate()?;
        self.baseline_sampler.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        if self.chunk_seconds != 0.0 {
            return Err(Error::Parameter("chunked enhancement is not supported; set enhance.chunk_seconds = 0".into()));
        }
        Ok(())
    }

    /// Defaults overridden by `text`, then validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", i + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(at(format!("unknown key {k:?}")));
            }
            if !seen.insert(k.to_string()) {
                return Err(at(format!("{k} set twice")));
            }
            if v.is_empty() {
                return Err(at(format!("{k} has no value")));
            }
            cfg.set(k, v).map_err(|m| at(format!("{k}: {m}")))?;
        }
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
        assert_eq!(Config::parse("# nothing\n\n   \n").unwrap(), Config::default());
    }

    #[test]
    fn every_key_is_settable() {
        let mut cfg = Config::default();
        for key in KEYS {
            let value = match *key {
                "corpus.noise_dir" => "noise",
                "net.dilations" => "1,2,4,1",
                "train.weighting" => "unit",
                "sampler.denoise_final" | "baseline.denoise_final" => "true",
                k if k.starts_with("wind.gusts") => "3",
                _ => "1",
            };
            assert!(cfg.set(key, value).is_ok(), "{key}");
        }
    }

    #[test]
    fn overrides_apply() {
        let cfg = Config::parse(
            "corruption.snr_min = -3 # lower bound\ncorruption.snr_max=10\nnet.dilations = 1, 2, 8\nsampler.steps = 50\nbaseline.gamma = 2.0\ntrain.weighting = unit\ncorpus.noise_dir = /tmp/wind\n",
        )
        .unwrap();
        assert_eq!(cfg.corruption.snr.lo, -3.0);
        assert_eq!(cfg.corruption.snr.hi, 10.0);
        assert_eq!(cfg.net.dilations, vec![1, 2, 8]);
        assert_eq!(cfg.sampler.n_steps, 50);
        assert_eq!(cfg.baseline_process.gamma, 2.0);
        assert_eq!(cfg.process.gamma, 1.5);
        assert_eq!(cfg.train.weighting, DsmWeighting::Unit);
        assert_eq!(cfg.noise_dir, Some(PathBuf::from("/tmp/wind")));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "corruption.snr = 3",
            "snr_min = 3",
            "corruption.snr_min",
            "corruption.snr_min = ",
            "corruption.snr_min = loud",
            "corruption.snr_min = 1\ncorruption.snr_min = 2",
            "corruption.snr_min = 20",
            "wind.gusts_max = 11",
            "net.dilations = 1,x",
            "net.hidden = -1",
            "train.ema_decay = 1.5",
            "sampler.denoise_final = maybe",
            "train.weighting = sigma",
            "sde.gamma = nan",
            "enhance.chunk_seconds = 4",
        ] {
            assert!(matches!(Config::parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}
