//! Ornstein-Uhlenbeck variance-exploding (OUVE) diffusion.
//!
//! Forward process, per complex bin:
//!
//! ```text
//! dx = gamma (y - x) dtau + g(tau) dw,
//! g(tau) = sigma_min (sigma_max / sigma_min)^tau sqrt(2 ln(sigma_max / sigma_min))
//! ```
//!
//! with a Gaussian perturbation kernel of mean
//! `e^{-gamma tau} x0 + (1 - e^{-gamma tau}) y` and variance
//! `sigma_min^2 ((sigma_max/sigma_min)^{2 tau} - e^{-2 gamma tau}) ln(sigma_max/sigma_min) / (gamma + ln(sigma_max/sigma_min))`.
//!
//! Complex noise is circularly symmetric with unit total variance: real and
//! imaginary parts each have variance 1/2. All variances below are totals
//! over both parts.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::score::ScoreModel;
use crate::signal::ComplexSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuveParams {
    pub gamma: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub t_max: f64,
    pub t_eps: f64,
}

impl Default for OuveParams {
    fn default() -> Self {
        Self::storm()
    }
}

impl OuveParams {
    /// Settings of the stochastic regeneration model.
    pub fn storm() -> Self {
        Self {
            gamma: 1.5,
            sigma_min: 0.05,
            sigma_max: 0.5,
            t_max: 1.0,
            t_eps: 0.03,
        }
    }

    /// Settings of the purely generative baseline: stiffer, more noise.
    pub fn generative_baseline() -> Self {
        Self {
            gamma: 2.5,
            sigma_max: 0.75,
            ..Self::storm()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Parameter(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite())
        {
            return Err(Error::Parameter(format!(
                "need 0 < sigma_min < sigma_max, got {} and {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.t_eps > 0.0 && self.t_eps < self.t_max && self.t_max.is_finite()) {
            return Err(Error::Parameter(format!(
                "need 0 < t_eps < t_max, got {} and {}",
                self.t_eps, self.t_max
            )));
        }
        Ok(())
    }

    fn log_ratio(&self) -> f64 {
        (self.sigma_max / self.sigma_min).ln()
    }

    /// `g(tau)`.
    pub fn diffusion_coeff(&self, tau: f64) -> f64 {
        let lr = self.log_ratio();
        self.sigma_min * (lr * tau).exp() * (2.0 * lr).sqrt()
    }

    /// Weight of `x0` in the kernel mean, `e^{-gamma tau}`.
    pub fn mean_decay(&self, tau: f64) -> f64 {
        (-self.gamma * tau).exp()
    }

    /// Kernel variance `sigma(tau)^2`.
    pub fn kernel_var(&self, tau: f64) -> f64 {
        let lr = self.log_ratio();
        let v = self.sigma_min.powi(2)
            * ((2.0 * lr * tau).exp() - (-2.0 * self.gamma * tau).exp())
            * lr
            / (self.gamma + lr);
        v.max(0.0)
    }

    /// Kernel standard deviation `sigma(tau)`.
    pub fn kernel_std(&self, tau: f64) -> f64 {
        self.kernel_var(tau).sqrt()
    }
}

/// `g(tau)`; see [`OuveParams::diffusion_coeff`].
pub fn diffusion_coeff(tau: f64, p: &OuveParams) -> f64 {
    p.diffusion_coeff(tau)
}

/// `sigma(tau)`; see [`OuveParams::kernel_std`].
pub fn kernel_std(tau: f64, p: &OuveParams) -> f64 {
    p.kernel_std(tau)
}

fn check_len(a: &[Complex64], b: &[Complex64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{what}: {} vs {} bins", a.len(), b.len())));
    }
    Ok(())
}

/// Drift `gamma (y - x)`.
pub fn drift(x: &[Complex64], y: &[Complex64], p: &OuveParams) -> Result<Vec<Complex64>> {
    check_len(x, y, "drift")?;
    Ok(x.iter().zip(y).map(|(x, y)| (y - x) * p.gamma).collect())
}

/// Kernel mean `e^{-gamma tau} x0 + (1 - e^{-gamma tau}) y`.
pub fn kernel_mean(
    x0: &[Complex64],
    y: &[Complex64],
    tau: f64,
    p: &OuveParams,
) -> Result<Vec<Complex64>> {
    check_len(x0, y, "kernel_mean")?;
    if !(0.0..=p.t_max).contains(&tau) {
        return Err(Error::Parameter(format!("tau {tau} outside [0, {}]", p.t_max)));
    }
    let w = p.mean_decay(tau);
    Ok(x0.iter().zip(y).map(|(x, y)| x * w + y * (1.0 - w)).collect())
}

/// One draw from the circularly-symmetric complex normal with unit total
/// variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Complex64> {
    (0..n).map(|_| complex_normal(rng)).collect()
}

/// A perturbed state together with the standard-normal draw that built it.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub x_tau: ComplexSpectrogram,
    pub z: Vec<Complex64>,
    pub sigma: f64,
}

/// `x_tau = mu(x0, y, tau) + sigma(tau) z`, returning `z` as well.
///
/// `tau = 0` is accepted (the result is then the deterministic mean); the
/// training objective itself draws from `[t_eps, t_max]`.
pub fn perturb<R: Rng + ?Sized>(
    x0: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    tau: f64,
    p: &OuveParams,
    rng: &mut R,
) -> Result<Perturbation> {
    x0.check_same_shape(y, "perturbation")?;
    let mean = kernel_mean(x0.data(), y.data(), tau, p)?;
    let sigma = p.kernel_std(tau);
    let z = complex_normal_vec(mean.len(), rng);
    let data = mean.iter().zip(&z).map(|(m, z)| m + z * sigma).collect();
    Ok(Perturbation {
        x_tau: x0.with_data(data)?,
        z,
        sigma,
    })
}

pub fn sample_perturbation<R: Rng + ?Sized>(
    x0: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    tau: f64,
    p: &OuveParams,
    rng: &mut R,
) -> Result<ComplexSpectrogram> {
    perturb(x0, y, tau, p, rng).map(|pert| pert.x_tau)
}

/// The process at diffusion time `tau`.
#[derive(Debug, Clone)]
pub struct ProcessState {
    pub x: ComplexSpectrogram,
    pub tau: f64,
}

/// Euler-Maruyama simulation of the forward SDE on a uniform grid over
/// `[0, t_max]`, handing every state (including the initial one) to `visit`.
pub fn forward_simulate_with<R, F>(
    x0: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    p: &OuveParams,
    n_steps: usize,
    rng: &mut R,
    mut visit: F,
) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(usize, f64, &[Complex64]),
{
    p.validate()?;
    x0.check_same_shape(y, "forward_simulate")?;
    if n_steps == 0 {
        return Err(Error::Parameter("n_steps must be >= 1".into()));
    }
    let dt = p.t_max / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut x = x0.data().to_vec();
    visit(0, 0.0, &x);
    for k in 0..n_steps {
        let tau = k as f64 * dt;
        let g = p.diffusion_coeff(tau);
        for (xi, yi) in x.iter_mut().zip(y.data()) {
            let z = complex_normal(rng);
            *xi += (yi - *xi) * (p.gamma * dt) + z * (g * sqrt_dt);
        }
        visit(k + 1, (k + 1) as f64 * dt, &x);
    }
    Ok(())
}

/// Full forward trajectory, `n_steps + 1` states from `tau = 0` to `t_max`.
pub fn forward_simulate<R: Rng + ?Sized>(
    x0: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    p: &OuveParams,
    n_steps: usize,
    rng: &mut R,
) -> Result<Vec<ProcessState>> {
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut err = None;
    forward_simulate_with(x0, y, p, n_steps, rng, |_, tau, x| {
        match x0.with_data(x.to_vec()) {
            Ok(x) => out.push(ProcessState { x, tau }),
            Err(e) => err = Some(e),
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Draws the start state `x_T ~ N_C(mean, sigma(T)^2 I)`.
pub fn sample_prior<R: Rng + ?Sized>(
    mean: &ComplexSpectrogram,
    p: &OuveParams,
    rng: &mut R,
) -> Result<ProcessState> {
    p.validate()?;
    if !mean.is_finite() {
        return Err(Error::Degenerate("prior mean has non-finite bins".into()));
    }
    let sigma = p.kernel_std(p.t_max);
    let data = mean
        .data()
        .iter()
        .map(|m| m + complex_normal(rng) * sigma)
        .collect();
    Ok(ProcessState {
        x: mean.with_data(data)?,
        tau: p.t_max,
    })
}

/// Reverse-diffusion sampler settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Number of predictor steps `N`.
    pub n_steps: usize,
    /// Annealed Langevin corrector steps per grid point (0 or 1).
    pub corrector_steps: usize,
    /// Corrector signal-to-noise ratio `r`.
    pub corrector_snr: f64,
    /// Return the predictor mean at the last step instead of adding noise.
    pub denoise_final: bool,
}

impl SamplerConfig {
    /// Euler-Maruyama only, 20 steps.
    pub fn storm() -> Self {
        Self {
            n_steps: 20,
            corrector_steps: 0,
            corrector_snr: 0.5,
            denoise_final: true,
        }
    }

    /// 30 predictor steps, each preceded by one corrector step with r = 0.5.
    pub fn generative_baseline() -> Self {
        Self {
            n_steps: 30,
            corrector_steps: 1,
            corrector_snr: 0.5,
            denoise_final: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Parameter("n_steps must be >= 1".into()));
        }
        if self.corrector_steps > 1 {
            return Err(Error::Parameter("at most one corrector step is supported".into()));
        }
        if self.corrector_steps > 0 && !(self.corrector_snr > 0.0) {
            return Err(Error::Parameter("corrector snr must be > 0".into()));
        }
        Ok(())
    }

    /// Score evaluations one sampling run performs.
    pub fn score_calls(&self) -> usize {
        self.n_steps * (1 + self.corrector_steps)
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::storm()
    }
}

fn eval_checked(
    score: &dyn ScoreModel,
    x: &ComplexSpectrogram,
    conditioning: &[&ComplexSpectrogram],
    tau: f64,
    sigma: f64,
) -> Result<Vec<Complex64>> {
    let s = score.evaluate(x, conditioning, tau, sigma)?;
    if s.len() != x.len() {
        return Err(Error::Shape(format!(
            "score returned {} bins for a {}-bin state",
            s.len(),
            x.len()
        )));
    }
    if s.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::Numerical {
            tau,
            sigma,
            what: "score model returned non-finite values".into(),
        });
    }
    Ok(s)
}

/// Solves the reverse SDE from `tau = t_max` down to 0 starting at `start`.
///
/// `mean` is the process target the drift pulls towards (the noisy
/// spectrogram for the generative baseline, the predictor output for
/// stochastic regeneration); `conditioning` is forwarded to the score
/// model unchanged. The grid is `tau_k = T (1 - k / N)`, `k = 0..N`.
pub fn reverse_sample_from<R: Rng + ?Sized>(
    start: ProcessState,
    mean: &ComplexSpectrogram,
    conditioning: &[&ComplexSpectrogram],
    score: &dyn ScoreModel,
    p: &OuveParams,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<ComplexSpectrogram> {
    p.validate()?;
    cfg.validate()?;
    start.x.check_same_shape(mean, "reverse_sample")?;
    let mut x = start.x;
    let n = cfg.n_steps;
    let dt = p.t_max / n as f64;
    let sqrt_dt = dt.sqrt();
    for k in 0..n {
        let tau = p.t_max * (1.0 - k as f64 / n as f64);
        let sigma = p.kernel_std(tau);

        for _ in 0..cfg.corrector_steps {
            let s = eval_checked(score, &x, conditioning, tau, sigma)?;
            let z = complex_normal_vec(x.len(), rng);
            let z_norm = z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            let s_norm = s.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if s_norm > 0.0 {
                let eps = 2.0 * (cfg.corrector_snr * z_norm / s_norm).powi(2);
                let noise_scale = (2.0 * eps).sqrt();
                for ((xi, si), zi) in x.data_mut().iter_mut().zip(&s).zip(&z) {
                    *xi += si * eps + zi * noise_scale;
                }
            }
        }

        let s = eval_checked(score, &x, conditioning, tau, sigma)?;
        let g = p.diffusion_coeff(tau);
        let g2 = g * g;
        let last = k + 1 == n;
        let add_noise = !(last && cfg.denoise_final);
        for ((xi, si), mi) in x.data_mut().iter_mut().zip(&s).zip(mean.data()) {
            let f = (mi - *xi) * p.gamma;
            *xi -= (f - si * g2) * dt;
            if add_noise {
                *xi += complex_normal(rng) * (g * sqrt_dt);
            }
        }
        if !x.is_finite() {
            return Err(Error::Numerical {
                tau,
                sigma,
                what: "reverse diffusion state diverged".into(),
            });
        }
    }
    Ok(x)
}

/// Draws `x_T` around `mean` and runs [`reverse_sample_from`].
pub fn reverse_sample<R: Rng + ?Sized>(
    mean: &ComplexSpectrogram,
    conditioning: &[&ComplexSpectrogram],
    score: &dyn ScoreModel,
    p: &OuveParams,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<ComplexSpectrogram> {
    let start = sample_prior(mean, p, rng)?;
    reverse_sample_from(start, mean, conditioning, score, p, cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{AnalyticGaussianScore, FnScore};
    use crate::signal::StftConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(v: Vec<Complex64>) -> ComplexSpectrogram {
        let n = v.len();
        ComplexSpectrogram::from_bins(v, 1, n, StftConfig::default(), 16_000).unwrap()
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn drift_values() {
        let p = OuveParams::storm();
        let x = vec![c(1.0), Complex64::new(0.3, -2.0)];
        assert!(drift(&x, &x, &p).unwrap().iter().all(|d| d.norm() == 0.0));
        assert_eq!(drift(&[c(0.0)], &[c(1.0)], &p).unwrap()[0], c(1.5));
        assert!(drift(&[c(0.0)], &[c(1.0), c(2.0)], &p).is_err());
        // linear in (x, y)
        let (x1, y1, x2, y2) = (c(0.2), c(-1.0), Complex64::new(3.0, 1.0), c(0.5));
        let lhs = drift(&[x1 * 2.0 + x2 * 3.0], &[y1 * 2.0 + y2 * 3.0], &p).unwrap()[0];
        let rhs = drift(&[x1], &[y1], &p).unwrap()[0] * 2.0 + drift(&[x2], &[y2], &p).unwrap()[0] * 3.0;
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn diffusion_coeff_values() {
        let p = OuveParams::storm();
        let g0 = diffusion_coeff(0.0, &p);
        assert!((g0 - 0.05 * (2.0 * 10f64.ln()).sqrt()).abs() < 1e-15);
        assert!((g0 - 0.107_30).abs() < 1e-5);
        assert!((diffusion_coeff(1.0, &p) / g0 - 10.0).abs() < 1e-12);
        for tau in [0.1, 0.37, 0.8] {
            let ratio = diffusion_coeff(tau, &p) / g0;
            assert!((ratio - 10f64.powf(tau)).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_mean_values() {
        let p = OuveParams::storm();
        let x0 = vec![c(1.0), Complex64::new(-0.5, 2.0)];
        let y = vec![c(0.0), c(0.25)];
        assert_eq!(kernel_mean(&x0, &y, 0.0, &p).unwrap(), x0);
        let m = kernel_mean(&[c(1.0)], &[c(0.0)], 1.0, &p).unwrap()[0];
        assert!((m.re - (-1.5f64).exp()).abs() < 1e-15);
        assert!((m.re - 0.223_13).abs() < 1e-5);
        for tau in [0.0, 0.2, 1.0] {
            assert_eq!(kernel_mean(&y, &y, tau, &p).unwrap(), y);
        }
        assert!(kernel_mean(&x0, &y, 1.5, &p).is_err());
    }

    #[test]
    fn kernel_std_values() {
        let p = OuveParams::storm();
        assert_eq!(kernel_std(0.0, &p), 0.0);
        let s1 = kernel_std(1.0, &p);
        assert!((s1 - 0.3890).abs() < 1e-4, "{s1}");
    }

    #[test]
    fn params_validation() {
        assert!(OuveParams::storm().validate().is_ok());
        assert!(OuveParams { gamma: 0.0, ..OuveParams::storm() }.validate().is_err());
        assert!(OuveParams { sigma_min: 0.5, ..OuveParams::storm() }.validate().is_err());
        assert!(OuveParams { t_eps: 1.0, ..OuveParams::storm() }.validate().is_err());
    }

    #[test]
    fn perturbation_at_zero_is_mean_and_reproducible() {
        let p = OuveParams::storm();
        let x0 = spec(vec![c(1.0), c(2.0)]);
        let y = spec(vec![c(0.0), c(-1.0)]);
        let s = sample_perturbation(&x0, &y, 0.0, &p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.data(), x0.data());
        let a = sample_perturbation(&x0, &y, 0.5, &p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = sample_perturbation(&x0, &y, 0.5, &p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn complex_normal_has_unit_total_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200_000;
        let z = complex_normal_vec(n, &mut rng);
        let re: f64 = z.iter().map(|c| c.re * c.re).sum::<f64>() / n as f64;
        let im: f64 = z.iter().map(|c| c.im * c.im).sum::<f64>() / n as f64;
        assert!((re - 0.5).abs() < 0.01 && (im - 0.5).abs() < 0.01);
    }

    #[test]
    fn noiseless_forward_decays_to_target() {
        // sigma_max barely above sigma_min makes g negligible
        let p = OuveParams {
            sigma_min: 1e-9,
            sigma_max: 1e-9 * (1.0 + 1e-12),
            ..OuveParams::storm()
        };
        let x0 = spec(vec![c(1.0)]);
        let y = spec(vec![c(0.0)]);
        let traj = forward_simulate(&x0, &y, &p, 10_000, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(traj.len(), 10_001);
        for st in traj.iter().step_by(1000) {
            let expected = (-1.5 * st.tau).exp();
            assert!((st.x.data()[0].re - expected).abs() < 1e-3, "tau={}", st.tau);
        }
    }

    #[test]
    fn prior_is_centred_on_mean_with_kernel_std() {
        let p = OuveParams::storm();
        let mean = spec(vec![c(0.5); 10_000]);
        let st = sample_prior(&mean, &p, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        assert_eq!(st.tau, 1.0);
        let var = st.x.data().iter().map(|x| (x - c(0.5)).norm_sqr()).sum::<f64>() / 10_000.0;
        let sigma_t = p.kernel_std(1.0);
        assert!((var.sqrt() / sigma_t - 1.0).abs() < 0.02);
    }

    #[test]
    fn sampler_call_counts() {
        assert_eq!(SamplerConfig::storm().score_calls(), 20);
        assert_eq!(SamplerConfig::generative_baseline().score_calls(), 60);
        assert!(SamplerConfig { n_steps: 0, ..SamplerConfig::storm() }.validate().is_err());
    }

    #[test]
    fn reverse_sample_counts_calls_and_is_deterministic() {
        let p = OuveParams::storm();
        let y = spec(vec![c(0.3); 8]);
        for cfg in [SamplerConfig::storm(), SamplerConfig::generative_baseline()] {
            let calls = std::cell::Cell::new(0usize);
            let score = FnScore(|x: &ComplexSpectrogram, _: &[&ComplexSpectrogram], _tau, sigma: f64| {
                calls.set(calls.get() + 1);
                Ok(x.data().iter().map(|v| -(v - c(0.3)) / (sigma * sigma)).collect())
            });
            let a = reverse_sample(&y, &[&y], &score, &p, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            assert_eq!(calls.get(), cfg.score_calls());
            let b = reverse_sample(&y, &[&y], &score, &p, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn reverse_sample_reports_divergence() {
        let p = OuveParams::storm();
        let y = spec(vec![c(0.3); 4]);
        let score = FnScore(|x: &ComplexSpectrogram, _: &[&ComplexSpectrogram], tau: f64, _| {
            Ok(vec![if tau < 0.5 { c(f64::NAN) } else { c(0.0) }; x.len()])
        });
        let err = reverse_sample(&y, &[], &score, &p, &SamplerConfig::storm(), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap_err();
        match err {
            Error::Numerical { tau, .. } => assert!(tau < 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_dynamics_copy_the_mean() {
        // vanishing noise and stiffness with a zero score leave x_T = mean untouched
        let p = OuveParams {
            gamma: 1e-12,
            sigma_min: 1e-12,
            sigma_max: 2e-12,
            ..OuveParams::storm()
        };
        let y = spec(vec![c(0.7), Complex64::new(-0.2, 0.4)]);
        let zero = FnScore(|x: &ComplexSpectrogram, _: &[&ComplexSpectrogram], _, _| {
            Ok(vec![Complex64::new(0.0, 0.0); x.len()])
        });
        let out = reverse_sample(&y, &[], &zero, &p, &SamplerConfig::storm(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for (a, b) in out.data().iter().zip(y.data()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn analytic_score_sampler_recovers_toy_moments_small() {
        // 2000 runs, N = 100, started from the exact marginal at T
        let p = OuveParams::storm();
        let m0 = Complex64::new(1.0, 0.5);
        let y = c(-0.4);
        let oracle = AnalyticGaussianScore::new(m0, 0.6, y, p).unwrap();
        let mean = spec(vec![y; 2000]);
        let cfg = SamplerConfig { n_steps: 100, ..SamplerConfig::storm() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let start = oracle.sample_marginal(p.t_max, &mean, &mut rng).unwrap();
        let out = reverse_sample_from(start, &mean, &[], &oracle, &p, &cfg, &mut rng).unwrap();
        let n = out.len() as f64;
        let emp_mean: Complex64 = out.data().iter().sum::<Complex64>() / n;
        let emp_std = (out.data().iter().map(|x| (x - emp_mean).norm_sqr()).sum::<f64>() / n).sqrt();
        assert!((emp_mean - m0).norm() / m0.norm() < 0.05, "{emp_mean}");
        assert!((emp_std / 0.6 - 1.0).abs() < 0.1, "{emp_std}");
    }
}
