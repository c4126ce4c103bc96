//! Toy "speech" and paired clean/noisy corpus generation.
//!
//! The speech stand-in is a sum of harmonics of a drifting fundamental,
//! shaped by vowel-like formant envelopes and gated into syllables.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corruption::{corrupt, CorruptionParams, CorruptionSampler};
use crate::error::{Error, Result};
use crate::signal::Waveform;
use crate::wind::{synthesize_wind_noise, AirflowSampler, RecordedNoiseBank};

// F1, F2, F3 of five vowels (Hz).
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];
const MAX_HARMONIC_HZ: f64 = 5000.0;

fn formant_gain(f: f64, formants: &[f64; 3]) -> f64 {
    formants
        .iter()
        .zip([1.0, 0.6, 0.3])
        .map(|(&fc, amp)| {
            let bw = 60.0 + 0.06 * fc;
            amp * (-0.5 * ((f - fc) / bw).powi(2)).exp()
        })
        .sum::<f64>()
        + 0.02
}

/// `duration` seconds of harmonic-plus-formant pseudo speech with peak in
/// `[0.3, 0.9]`.
pub fn synthesize_toy_speech<R: Rng + ?Sized>(duration: f64, sample_rate: u32, rng: &mut R) -> Result<Waveform> {
    if !(duration > 0.0 && duration.is_finite()) || sample_rate == 0 {
        return Err(Error::Parameter("speech needs a positive duration and sample rate".into()));
    }
    let sr = sample_rate as f64;
    let n = (duration * sr).round() as usize;

    // syllable plan: (start, length, vowel)
    let mut syllables = Vec::new();
    let mut t = rng.gen_range(0.0..0.15);
    while t < duration {
        let len = rng.gen_range(0.12..0.35);
        syllables.push((t, len, rng.gen_range(0..VOWELS.len())));
        t += len + rng.gen_range(0.03..0.2);
    }
    let base_f0 = rng.gen_range(90.0..220.0);
    let drift_rate = rng.gen_range(0.3..1.2);
    let drift_phase = rng.gen_range(0.0..2.0 * PI);

    let mut out = vec![0.0; n];
    let mut phase = 0.0;
    let mut syl = 0;
    for (i, v) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let f0 = base_f0 * (1.0 + 0.12 * (2.0 * PI * drift_rate * t + drift_phase).sin());
        phase += 2.0 * PI * f0 / sr;
        if phase > 2.0 * PI {
            phase -= 2.0 * PI;
        }
        while syl < syllables.len() && t > syllables[syl].0 + syllables[syl].1 {
            syl += 1;
        }
        let Some(&(start, len, vowel)) = syllables.get(syl) else {
            continue;
        };
        if t < start {
            continue;
        }
        let u = (t - start) / len;
        let env = (PI * u).sin().powi(2);
        // glide towards the next vowel over the syllable
        let next = syllables.get(syl + 1).map_or(vowel, |s| s.2);
        let formants: [f64; 3] =
            std::array::from_fn(|k| VOWELS[vowel][k] * (1.0 - 0.3 * u) + VOWELS[next][k] * 0.3 * u);
        let mut acc = 0.0;
        let mut h = 1;
        while (h as f64) * f0 < MAX_HARMONIC_HZ {
            let f = h as f64 * f0;
            acc += formant_gain(f, &formants) / (h as f64).sqrt() * (phase * h as f64).sin();
            h += 1;
        }
        *v = env * acc;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak <= 0.0 {
        return Err(Error::Degenerate("synthesized speech is silent".into()));
    }
    let target = rng.gen_range(0.3..0.9);
    out.iter_mut().for_each(|v| *v *= target / peak);
    Waveform::new(out, sample_rate)
}

/// Which part of the corpus an item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Valid => "valid",
            Self::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Self::Train),
            "valid" => Some(Self::Valid),
            "test" => Some(Self::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub train_clips: usize,
    pub valid_clips: usize,
    pub test_clips: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    /// Probability of taking the noise from the recorded bank (when one is
    /// supplied) instead of synthesizing it.
    pub recorded_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            train_clips: 200,
            valid_clips: 20,
            test_clips: 20,
            clip_seconds: 2.0,
            sample_rate: crate::signal::SAMPLE_RATE,
            recorded_fraction: 1.0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) || self.sample_rate == 0 {
            return Err(Error::Parameter("clip length and sample rate must be positive".into()));
        }
        if self.train_clips == 0 {
            return Err(Error::Parameter("corpus needs at least one training clip".into()));
        }
        if !(0.0..=1.0).contains(&self.recorded_fraction) {
            return Err(Error::Parameter("recorded fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.train_clips + self.valid_clips + self.test_clips
    }

    /// Split of the `index`-th item: training items first, then validation,
    /// then test.
    pub fn split_of(&self, index: usize) -> Split {
        if index < self.train_clips {
            Split::Train
        } else if index < self.train_clips + self.valid_clips {
            Split::Valid
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub id: String,
    pub split: Split,
    pub clean: Waveform,
    pub noisy: Waveform,
    pub params: CorruptionParams,
}

/// Distributions and optional recorded noise used for synthesis.
#[derive(Debug, Clone, Default)]
pub struct CorpusSpec {
    pub corpus: CorpusConfig,
    pub corruption: CorruptionSampler,
    pub airflow: AirflowSampler,
    pub noise_bank: Option<RecordedNoiseBank>,
}

pub fn item_id(index: usize) -> String {
    format!("clip{index:05}")
}

/// The `index`-th item of the corpus generated from `seed`. Every item has
/// its own random stream, so items can be produced in any order.
pub fn synthesize_item(spec: &CorpusSpec, seed: u64, index: usize) -> Result<CorpusItem> {
    let cfg = &spec.corpus;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let speech = synthesize_toy_speech(cfg.clip_seconds, cfg.sample_rate, &mut rng)?;
    let params = spec.corruption.sample(&mut rng);
    let use_bank = rng.gen_bool(cfg.recorded_fraction);
    let noise = match (&spec.noise_bank, use_bank) {
        (Some(bank), true) => bank.excerpt(speech.len(), &mut rng),
        _ => {
            let profile = spec.airflow.sample(cfg.clip_seconds, &mut rng)?;
            let mut w = synthesize_wind_noise(&profile, cfg.sample_rate, &mut rng)?;
            if w.len() != speech.len() {
                let mut s = w.into_samples();
                s.resize(speech.len(), 0.0);
                w = Waveform::new(s, cfg.sample_rate)?;
            }
            w
        }
    };
    let c = corrupt(&speech, &noise, &params)?;
    Ok(CorpusItem {
        id: item_id(index),
        split: cfg.split_of(index),
        clean: c.clean,
        noisy: c.noisy,
        params,
    })
}

/// All items in index order.
pub fn synthesize_corpus(spec: &CorpusSpec, seed: u64) -> Result<Vec<CorpusItem>> {
    spec.corpus.validate()?;
    spec.corruption.validate()?;
    spec.airflow.validate()?;
    (0..spec.corpus.total()).map(|i| synthesize_item(spec, seed, i)).collect()
}
