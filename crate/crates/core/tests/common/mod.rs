#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Asymptotic p-value of the one-sample Kolmogorov-Smirnov statistic
/// against `cdf`, with the Stephens small-sample correction.
pub fn ks_p_value(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

pub fn ks_uniform_p(samples: &[f64], lo: f64, hi: f64) -> f64 {
    ks_p_value(samples, |v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
}

/// Pearson chi-square goodness-of-fit p-value.
pub fn chi_square_p(observed: &[u64], expected: &[f64]) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub mod grad {
    use num_complex::Complex64;
    use rand::Rng;
    use storm_core::score::{NetConfig, Predictor, ScoreModel, TinyPredictor, TinyScoreNet};
    use storm_core::signal::{ComplexSpectrogram, StftConfig, SAMPLE_RATE};

    pub const STEP: f64 = 1e-4;

    pub fn random_spec<R: Rng>(n_freq: usize, n_frames: usize, rng: &mut R) -> ComplexSpectrogram {
        let data = (0..n_freq * n_frames)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ComplexSpectrogram::from_bins(data, n_freq, n_frames, StftConfig::default(), SAMPLE_RATE).unwrap()
    }

    fn project(w: &[Complex64], v: &[Complex64]) -> f64 {
        w.iter().zip(v).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
    }

    fn relative(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
    }

    fn jitter<R: Rng>(params: &[f64], rng: &mut R) -> Vec<f64> {
        params.iter().map(|p| p + rng.gen_range(-0.1..0.1)).collect()
    }

    /// Largest relative error between backprop and central differences of
    /// `L = <w, s>` over `n_params` random parameters and `n_inputs` random
    /// inputs.
    pub fn score_net_error<R: Rng>(cfg: &NetConfig, n_inputs: usize, n_params: usize, rng: &mut R) -> f64 {
        let base = TinyScoreNet::new(cfg.clone(), 2, 1.5, rng).unwrap();
        let mut net = TinyScoreNet::from_params(cfg.clone(), 2, 1.5, jitter(base.params(), rng)).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..n_inputs {
            let (x, y, d) = (random_spec(7, 6, rng), random_spec(7, 6, rng), random_spec(7, 6, rng));
            let tau = rng.gen_range(0.1..1.0);
            let sigma = rng.gen_range(0.2..0.6);
            let w: Vec<Complex64> = random_spec(7, 6, rng).into_data();
            let g = net
                .evaluate_with_grad(&x, &[&y, &d], tau, sigma, &mut |_| Ok(w.clone()))
                .unwrap();
            let params = net.params().to_vec();
            for _ in 0..n_params {
                let i = rng.gen_range(0..params.len());
                let mut eval = |delta: f64| {
                    let mut p = params.clone();
                    p[i] += delta;
                    net.set_params(&p).unwrap();
                    project(&w, &net.evaluate(&x, &[&y, &d], tau, sigma).unwrap())
                };
                let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
                worst = worst.max(relative(g.params[i], numeric));
            }
            net.set_params(&params).unwrap();
        }
        worst
    }

    pub fn predictor_error<R: Rng>(cfg: &NetConfig, n_inputs: usize, n_params: usize, rng: &mut R) -> f64 {
        let base = TinyPredictor::new(cfg.clone(), rng).unwrap();
        let mut net = TinyPredictor::from_params(cfg.clone(), jitter(base.params(), rng)).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..n_inputs {
            let y = random_spec(7, 6, rng);
            let w: Vec<Complex64> = random_spec(7, 6, rng).into_data();
            let (_, grad) = net.predict_with_grad(&y, &mut |_| Ok(w.clone())).unwrap();
            let params = net.params().to_vec();
            for _ in 0..n_params {
                let i = rng.gen_range(0..params.len());
                let mut eval = |delta: f64| {
                    let mut p = params.clone();
                    p[i] += delta;
                    net.set_params(&p).unwrap();
                    project(&w, net.predict(&y).unwrap().data())
                };
                let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
                worst = worst.max(relative(grad[i], numeric));
            }
            net.set_params(&params).unwrap();
        }
        worst
    }
}

/// KS p-values of every uniform corruption field and the chi-square p-value
/// of the clip flag over `n` default draws.
pub fn corruption_p_values(n: usize, seed: u64) -> Vec<(&'static str, f64)> {
    use rand::SeedableRng;
    use storm_core::corruption::CorruptionSampler;

    let sampler = CorruptionSampler::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<_> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
    let field = |f: &dyn Fn(&storm_core::corruption::CorruptionParams) -> f64| -> Vec<f64> { draws.iter().map(f).collect() };
    let ks = |v: Vec<f64>, u: storm_core::corruption::Uniform| ks_uniform_p(&v, u.lo, u.hi);
    let clipped = draws.iter().filter(|p| p.clip).count() as u64;
    let q = sampler.clip_probability;
    vec![
        ("snr", ks(field(&|p| p.snr), sampler.snr)),
        ("threshold", ks(field(&|p| p.compressor.threshold), sampler.threshold)),
        ("ratio", ks(field(&|p| p.compressor.ratio), sampler.ratio)),
        ("attack", ks(field(&|p| p.compressor.attack), sampler.attack)),
        ("release", ks(field(&|p| p.compressor.release), sampler.release)),
        ("sidechain_gain", ks(field(&|p| p.compressor.sidechain_gain), sampler.sidechain_gain)),
        ("eta", ks(field(&|p| p.eta), sampler.eta)),
        (
            "clip",
            chi_square_p(&[clipped, n as u64 - clipped], &[q * n as f64, (1.0 - q) * n as f64]),
        ),
    ]
}
