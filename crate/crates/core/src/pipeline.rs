//! Whole-utterance enhancement: stochastic regeneration, the purely
//! generative baseline and the purely predictive baseline, all sharing one
//! analysis/synthesis front end.

use rand::Rng;

use crate::error::{Error, Result};
use crate::score::{Counting, Predictor, ScoreModel, TrainingPair};
use crate::sde::{reverse_sample_from, sample_prior, OuveParams, SamplerConfig};
use crate::signal::{istft, normalize_by_noisy_max, stft, unwarp, warp, ComplexSpectrogram, StftConfig, Waveform};

/// STFT geometry and magnitude warping of the model domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontEnd {
    pub stft: StftConfig,
    pub warp_exponent: f64,
    pub warp_scale: f64,
}

impl Default for FrontEnd {
    /// Window 510, hop 128, `0.15 * |c / sqrt(510)|^0.5`.
    fn default() -> Self {
        let stft = StftConfig::default();
        Self {
            stft,
            warp_exponent: 0.5,
            warp_scale: 0.15 * (stft.window_len as f64).powf(-0.25),
        }
    }
}

impl FrontEnd {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if !(self.warp_exponent > 0.0 && self.warp_exponent.is_finite()) {
            return Err(Error::Parameter("warp exponent must be > 0".into()));
        }
        if !(self.warp_scale > 0.0 && self.warp_scale.is_finite()) {
            return Err(Error::Parameter("warp scale must be > 0".into()));
        }
        Ok(())
    }

    /// STFT followed by warping.
    pub fn analyze(&self, w: &Waveform) -> Result<ComplexSpectrogram> {
        warp(&stft(w, &self.stft)?, self.warp_exponent, self.warp_scale)
    }

    /// Unwarping followed by the inverse STFT.
    pub fn synthesize(&self, s: &ComplexSpectrogram, len: usize) -> Result<Waveform> {
        istft(&unwarp(s)?, len)
    }

    /// Model-domain training pair after normalizing both signals by the
    /// noisy peak.
    pub fn training_pair(&self, clean: &Waveform, noisy: &Waveform) -> Result<TrainingPair> {
        let (c, n, _) = normalize_by_noisy_max(clean, noisy)?;
        TrainingPair::new(self.analyze(&c)?, self.analyze(&n)?)
    }
}

/// An enhanced utterance with the network calls spent on it.
#[derive(Debug, Clone)]
pub struct Enhanced {
    pub waveform: Waveform,
    pub predictor_calls: usize,
    pub score_calls: usize,
}

impl Enhanced {
    pub fn network_calls(&self) -> usize {
        self.predictor_calls + self.score_calls
    }
}

struct Normalized {
    spec: ComplexSpectrogram,
    len: usize,
    peak: f64,
}

fn front(y: &Waveform, fe: &FrontEnd) -> Result<Normalized> {
    fe.validate()?;
    let peak = y.peak();
    if peak <= 0.0 {
        return Err(Error::Degenerate("input utterance is silent".into()));
    }
    Ok(Normalized {
        spec: fe.analyze(&y.scaled(1.0 / peak))?,
        len: y.len(),
        peak,
    })
}

fn back(x: &ComplexSpectrogram, n: &Normalized, fe: &FrontEnd) -> Result<Waveform> {
    Ok(fe.synthesize(x, n.len)?.scaled(n.peak))
}

/// `x = G(D(y))`: predict, start the reverse process at `D(y) + sigma(T) z`
/// and regenerate conditioned on `[y, D(y)]`.
pub fn enhance_storm<R: Rng + ?Sized>(
    y: &Waveform,
    predictor: &dyn Predictor,
    score: &dyn ScoreModel,
    fe: &FrontEnd,
    p: &OuveParams,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Enhanced> {
    let n = front(y, fe)?;
    let predictor = Counting::new(predictor);
    let score = Counting::new(score);
    let d = predictor.predict(&n.spec)?;
    n.spec.check_same_shape(&d, "predictor output")?;
    let start = sample_prior(&d, p, rng)?;
    let x = reverse_sample_from(start, &d, &[&n.spec, &d], &score, p, cfg, rng)?;
    Ok(Enhanced {
        waveform: back(&x, &n, fe)?,
        predictor_calls: predictor.calls(),
        score_calls: score.calls(),
    })
}

/// Reverse diffusion from `y + sigma(T) z` conditioned on `[y]`.
pub fn enhance_generative<R: Rng + ?Sized>(
    y: &Waveform,
    score: &dyn ScoreModel,
    fe: &FrontEnd,
    p: &OuveParams,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Enhanced> {
    let n = front(y, fe)?;
    let score = Counting::new(score);
    let start = sample_prior(&n.spec, p, rng)?;
    let x = reverse_sample_from(start, &n.spec, &[&n.spec], &score, p, cfg, rng)?;
    Ok(Enhanced {
        waveform: back(&x, &n, fe)?,
        predictor_calls: 0,
        score_calls: score.calls(),
    })
}

/// One predictor pass.
pub fn enhance_predictive(y: &Waveform, predictor: &dyn Predictor, fe: &FrontEnd) -> Result<Enhanced> {
    let n = front(y, fe)?;
    let predictor = Counting::new(predictor);
    let d = predictor.predict(&n.spec)?;
    n.spec.check_same_shape(&d, "predictor output")?;
    Ok(Enhanced {
        waveform: back(&d, &n, fe)?,
        predictor_calls: predictor.calls(),
        score_calls: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{FnScore, IdentityPredictor};
    use crate::signal::SAMPLE_RATE;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn utterance(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-0.8..0.8)).collect(), SAMPLE_RATE).unwrap()
    }

    fn zero_score() -> impl ScoreModel {
        FnScore(|x: &ComplexSpectrogram, _: &[&ComplexSpectrogram], _, _| {
            Ok(vec![Complex64::new(0.0, 0.0); x.len()])
        })
    }

    #[test]
    fn predictive_identity_roundtrip() {
        let y = utterance(5000, 1);
        let out = enhance_predictive(&y, &IdentityPredictor, &FrontEnd::default()).unwrap();
        assert_eq!(out.waveform.len(), y.len());
        assert_eq!(out.network_calls(), 1);
        let err: f64 = out.waveform.samples().iter().zip(y.samples()).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((err / y.energy()).sqrt() < 1e-9);
    }

    #[test]
    fn call_accounting() {
        let y = utterance(4000, 2);
        let fe = FrontEnd::default();
        let s = zero_score();
        let out = enhance_storm(
            &y,
            &IdentityPredictor,
            &s,
            &fe,
            &OuveParams::storm(),
            &SamplerConfig::storm(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!((out.predictor_calls, out.score_calls), (1, 20));
        assert_eq!(out.waveform.len(), y.len());
        let g = enhance_generative(
            &y,
            &s,
            &fe,
            &OuveParams::generative_baseline(),
            &SamplerConfig::generative_baseline(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(g.network_calls(), 60);
        assert_eq!(g.waveform.len(), y.len());
    }

    #[test]
    fn seeded_runs_are_identical() {
        let y = utterance(3000, 3);
        let run = |seed| {
            enhance_storm(
                &y,
                &IdentityPredictor,
                &zero_score(),
                &FrontEnd::default(),
                &OuveParams::storm(),
                &SamplerConfig::storm(),
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap()
            .waveform
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn rejects_silence_and_short_input() {
        let fe = FrontEnd::default();
        assert!(matches!(
            enhance_predictive(&Waveform::zeros(2000, SAMPLE_RATE), &IdentityPredictor, &fe),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            enhance_predictive(&utterance(100, 1), &IdentityPredictor, &fe),
            Err(Error::Length { .. })
        ));
    }

    #[test]
    fn default_warp_scale() {
        let fe = FrontEnd::default();
        assert!((fe.warp_scale - 0.15 / 510f64.powf(0.25)).abs() < 1e-15);
    }
}
