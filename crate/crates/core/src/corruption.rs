//! Non-additive speech-in-wind corruption: SNR mixing, noise-sidechained
//! compression of the speech path, then optional hard clipping.

use rand::Rng;

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Feed-forward compressor settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressorParams {
    /// dBFS, full scale = 1.0.
    pub threshold: f64,
    pub ratio: f64,
    /// Milliseconds.
    pub attack: f64,
    /// Milliseconds.
    pub release: f64,
    /// Linear gain applied to the sidechain before level detection.
    pub sidechain_gain: f64,
}

impl CompressorParams {
    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() {
            return Err(Error::Parameter("compressor threshold must be finite".into()));
        }
        if !(self.ratio >= 1.0 && self.ratio.is_finite()) {
            return Err(Error::Parameter(format!(
                "compressor ratio must be >= 1, got {}",
                self.ratio
            )));
        }
        if !(self.attack > 0.0 && self.release > 0.0) {
            return Err(Error::Parameter(
                "compressor attack and release must be positive".into(),
            ));
        }
        if !(self.sidechain_gain > 0.0 && self.sidechain_gain.is_finite()) {
            return Err(Error::Parameter("sidechain gain must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionParams {
    /// dB.
    pub snr: f64,
    pub compressor: CompressorParams,
    pub clip: bool,
    pub eta: f64,
}

impl CorruptionParams {
    pub fn validate(&self) -> Result<()> {
        if !self.snr.is_finite() {
            return Err(Error::Parameter("snr must be finite".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Parameter(format!("eta must be in (0, 1], got {}", self.eta)));
        }
        self.compressor.validate()
    }
}

/// Closed interval `[lo, hi]` for a uniform draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Uniform {
    pub lo: f64,
    pub hi: f64,
}

impl Uniform {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..self.hi)
        } else {
            self.lo
        }
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Distributions for [`sample_corruption_params`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSampler {
    pub snr: Uniform,
    pub threshold: Uniform,
    pub ratio: Uniform,
    pub attack: Uniform,
    pub release: Uniform,
    pub sidechain_gain: Uniform,
    pub clip_probability: f64,
    pub eta: Uniform,
}

impl Default for CorruptionSampler {
    fn default() -> Self {
        Self {
            snr: Uniform::new(-6.0, 14.0),
            threshold: Uniform::new(-30.0, -10.0),
            ratio: Uniform::new(1.0, 20.0),
            attack: Uniform::new(5.0, 100.0),
            release: Uniform::new(5.0, 500.0),
            sidechain_gain: Uniform::new(0.8, 1.2),
            clip_probability: 0.75,
            eta: Uniform::new(0.85, 1.0),
        }
    }
}

impl CorruptionSampler {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("snr", self.snr),
            ("threshold", self.threshold),
            ("ratio", self.ratio),
            ("attack", self.attack),
            ("release", self.release),
            ("sidechain_gain", self.sidechain_gain),
            ("eta", self.eta),
        ];
        for (name, u) in ranges {
            if !(u.lo.is_finite() && u.hi.is_finite() && u.lo <= u.hi) {
                return Err(Error::Parameter(format!("{name}: invalid range [{}, {}]", u.lo, u.hi)));
            }
        }
        if self.ratio.lo < 1.0 {
            return Err(Error::Parameter("ratio range must start at >= 1".into()));
        }
        if self.attack.lo <= 0.0 || self.release.lo <= 0.0 || self.sidechain_gain.lo <= 0.0 {
            return Err(Error::Parameter(
                "attack, release and sidechain_gain ranges must be positive".into(),
            ));
        }
        if !(self.eta.lo > 0.0 && self.eta.hi <= 1.0) {
            return Err(Error::Parameter("eta range must lie within (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.clip_probability) {
            return Err(Error::Parameter("clip probability must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Draws every field independently; `eta` is drawn even when clipping is
    /// absent.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CorruptionParams {
        let snr = self.snr.sample(rng);
        let compressor = CompressorParams {
            threshold: self.threshold.sample(rng),
            ratio: self.ratio.sample(rng),
            attack: self.attack.sample(rng),
            release: self.release.sample(rng),
            sidechain_gain: self.sidechain_gain.sample(rng),
        };
        let clip = rng.gen_bool(self.clip_probability);
        let eta = self.eta.sample(rng);
        CorruptionParams {
            snr,
            compressor,
            clip,
            eta,
        }
    }
}

/// Draws parameters from the default distributions.
pub fn sample_corruption_params<R: Rng + ?Sized>(rng: &mut R) -> CorruptionParams {
    CorruptionSampler::default().sample(rng)
}

/// Scales `noise` so that `10 log10(P_speech / P_noise) = snr` over the full
/// length and returns `(speech + scaled_noise, scaled_noise)`.
pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr: f64) -> Result<(Waveform, Waveform)> {
    speech.check_compatible(noise, "mix_at_snr")?;
    if !snr.is_finite() {
        return Err(Error::Parameter("snr must be finite".into()));
    }
    let ps = speech.power();
    let pn = noise.power();
    if ps <= 0.0 {
        return Err(Error::Degenerate("speech is silent".into()));
    }
    if pn <= 0.0 {
        return Err(Error::Degenerate("noise is silent".into()));
    }
    let gain = (ps / (pn * 10f64.powf(snr / 10.0))).sqrt();
    let scaled = noise.scaled(gain);
    let noisy = speech
        .samples()
        .iter()
        .zip(scaled.samples())
        .map(|(s, n)| s + n)
        .collect();
    Ok((Waveform::from_parts(noisy, speech.sample_rate()), scaled))
}

fn one_pole_coeff(ms: f64, sample_rate: u32) -> f64 {
    (-1000.0 / (ms * sample_rate as f64)).exp()
}

/// Gain trajectory of the sidechain compressor.
///
/// A peak detector follows `sidechain_gain * |sidechain|` with separate
/// attack/release one-pole coefficients; the smoothed level goes through a
/// hard-knee static curve, `(L - T)(1 - 1/ratio)` dB of reduction above the
/// threshold `T` and none below it.
pub fn compressor_gain(sidechain: &Waveform, p: &CompressorParams) -> Result<Vec<f64>> {
    p.validate()?;
    let sr = sidechain.sample_rate();
    let a_att = one_pole_coeff(p.attack, sr);
    let a_rel = one_pole_coeff(p.release, sr);
    let slope = 1.0 - 1.0 / p.ratio;
    let threshold_lin = 10f64.powf(p.threshold / 20.0);
    let mut env = 0.0f64;
    Ok(sidechain
        .samples()
        .iter()
        .map(|&s| {
            let level = p.sidechain_gain * s.abs();
            let coeff = if level > env { a_att } else { a_rel };
            env = coeff * env + (1.0 - coeff) * level;
            if slope == 0.0 || env <= threshold_lin {
                1.0
            } else {
                let over_db = 20.0 * env.log10() - p.threshold;
                10f64.powf(-over_db * slope / 20.0)
            }
        })
        .collect())
}

/// Compresses `speech` with gain driven by `sidechain`.
pub fn sidechain_compress(
    speech: &Waveform,
    sidechain: &Waveform,
    p: &CompressorParams,
) -> Result<Waveform> {
    speech.check_compatible(sidechain, "sidechain_compress")?;
    let gain = compressor_gain(sidechain, p)?;
    let out = speech
        .samples()
        .iter()
        .zip(&gain)
        .map(|(s, g)| s * g)
        .collect();
    Ok(Waveform::from_parts(out, speech.sample_rate()))
}

/// Clamps to `[-eta * max|y|, eta * max|y|]`, the bound taken from the input.
pub fn hard_clip(y: &Waveform, eta: f64) -> Result<Waveform> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Parameter(format!("eta must be in (0, 1], got {eta}")));
    }
    let peak = y.peak();
    if peak <= 0.0 {
        return Err(Error::Degenerate("cannot clip a silent signal".into()));
    }
    let bound = eta * peak;
    Ok(Waveform::from_parts(
        y.samples().iter().map(|v| v.clamp(-bound, bound)).collect(),
        y.sample_rate(),
    ))
}

/// Output of [`corrupt`].
#[derive(Debug, Clone)]
pub struct Corrupted {
    pub noisy: Waveform,
    /// The uncompressed clean speech, i.e. the enhancement target.
    pub clean: Waveform,
    pub scaled_noise: Waveform,
}

/// Full chain: scale the noise for the requested SNR, compress the speech
/// sidechained by the scaled noise, add the noise, clip if requested.
pub fn corrupt(speech: &Waveform, noise: &Waveform, p: &CorruptionParams) -> Result<Corrupted> {
    p.validate()?;
    let (_, scaled_noise) = mix_at_snr(speech, noise, p.snr)?;
    let compressed = sidechain_compress(speech, &scaled_noise, &p.compressor)?;
    let mixture = Waveform::from_parts(
        compressed
            .samples()
            .iter()
            .zip(scaled_noise.samples())
            .map(|(s, n)| s + n)
            .collect(),
        speech.sample_rate(),
    );
    let noisy = if p.clip {
        hard_clip(&mixture, p.eta)?
    } else {
        mixture
    };
    Ok(Corrupted {
        noisy,
        clean: speech.clone(),
        scaled_noise,
    })
}
