//! Time-domain signals and the time-frequency front end.
//!
//! The front end follows the usual complex-spectrogram diffusion setup:
//! square-root Hann STFT (510 / 128 at 16 kHz), magnitude warping, peak
//! normalization by the noisy utterance and random fixed-length crops for
//! training.

mod spectrogram;
mod stft;
pub mod wav;

pub use spectrogram::{crop_frames, crop_random_frames, unwarp, warp, ComplexSpectrogram, Crop, Warping};
pub use stft::{istft, stft, StftConfig};

use crate::error::{Error, Result};

/// Default sample rate of every signal handled by the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

/// A mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a waveform without the finiteness scan. Callers guarantee the
    /// samples came from finite arithmetic on finite inputs.
    pub(crate) fn from_parts(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::from_parts(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Maximum absolute amplitude.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Mean power over the full length.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::from_parts(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
        )
    }

    pub(crate) fn check_compatible(&self, other: &Waveform, what: &str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "{what}: lengths differ ({} vs {})",
                self.len(),
                other.len()
            )));
        }
        if self.sample_rate != other.sample_rate {
            return Err(Error::Shape(format!(
                "{what}: sample rates differ ({} vs {})",
                self.sample_rate, other.sample_rate
            )));
        }
        Ok(())
    }
}

/// Scales `clean` and `noisy` by `1 / max|noisy|`.
///
/// Returns the scaled pair and the applied gain; dividing an enhanced
/// estimate by the gain restores the original level.
pub fn normalize_by_noisy_max(
    clean: &Waveform,
    noisy: &Waveform,
) -> Result<(Waveform, Waveform, f64)> {
    let peak = noisy.peak();
    if peak <= 0.0 {
        return Err(Error::Degenerate("noisy utterance is silent".into()));
    }
    let gain = 1.0 / peak;
    Ok((clean.scaled(gain), noisy.scaled(gain), gain))
}
