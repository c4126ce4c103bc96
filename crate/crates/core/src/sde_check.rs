//! Monte-Carlo checks of the diffusion process against its closed forms.
//!
//! - forward Euler-Maruyama moments against the perturbation kernel;
//! - reverse sampling with the exact Gaussian score against the clean
//!   distribution;
//! - the kernel variance against its ODE `d var / d tau = g^2 - 2 gamma var`.

use std::fmt;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::score::AnalyticGaussianScore;
use crate::sde::{forward_simulate_with, kernel_mean, reverse_sample_from, OuveParams, SamplerConfig};
use crate::signal::{ComplexSpectrogram, StftConfig, SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckConfig {
    pub trajectories: usize,
    pub forward_steps: usize,
    pub taus: Vec<f64>,
    pub mean_tol: f64,
    pub std_tol: f64,
    pub reverse_runs: usize,
    pub reverse_steps: usize,
    pub reverse_mean_tol: f64,
    pub reverse_std_tol: f64,
    pub ode_points: usize,
    pub ode_tol: f64,
    /// Multiplies every tolerance.
    pub tolerance_scale: f64,
    pub x0: f64,
    pub y: f64,
    pub m0: Complex64,
    pub s0: f64,
    pub reverse_y: Complex64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            trajectories: 10_000,
            forward_steps: 1000,
            taus: vec![0.25, 0.5, 1.0],
            mean_tol: 0.01,
            std_tol: 0.02,
            reverse_runs: 10_000,
            reverse_steps: 200,
            reverse_mean_tol: 0.02,
            reverse_std_tol: 0.05,
            ode_points: 50,
            ode_tol: 1e-6,
            tolerance_scale: 1.0,
            x0: 1.0,
            y: 3.0,
            m0: Complex64::new(1.0, 0.5),
            s0: 0.6,
            reverse_y: Complex64::new(-0.4, 0.0),
        }
    }
}

/// One compared quantity. `error` is relative for moments and absolute for
/// the ODE residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub tau: f64,
    pub expected: f64,
    pub observed: f64,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    fn relative(name: &'static str, tau: f64, expected: f64, observed: f64, tolerance: f64) -> Self {
        Self {
            name,
            tau,
            expected,
            observed,
            error: (observed - expected).abs() / expected.abs(),
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "check={} tau={} expected={:.9e} observed={:.9e} error={:.3e} tolerance={:.3e} status={}",
            self.name,
            self.tau,
            self.expected,
            self.observed,
            self.error,
            self.tolerance,
            if self.passed() { "pass" } else { "fail" }
        )
    }
}

fn bins(v: Vec<Complex64>) -> Result<ComplexSpectrogram> {
    let n = v.len();
    ComplexSpectrogram::from_bins(v, 1, n, StftConfig::default(), SAMPLE_RATE)
}

fn moments(x: &[Complex64]) -> (Complex64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<Complex64>() / n;
    let var = x.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn validate(cfg: &CheckConfig) -> Result<()> {
    if cfg.trajectories < 2 || cfg.reverse_runs < 2 || cfg.forward_steps == 0 || cfg.reverse_steps == 0 {
        return Err(Error::Parameter("checks need >= 2 runs and >= 1 step".into()));
    }
    if !(cfg.tolerance_scale >= 0.0 && cfg.tolerance_scale.is_finite()) {
        return Err(Error::Parameter("tolerance scale must be >= 0".into()));
    }
    Ok(())
}

/// Forward Euler-Maruyama from `x0` towards `y`, compared with the kernel
/// mean and standard deviation at each checked `tau`.
pub fn kernel_checks(p: &OuveParams, cfg: &CheckConfig, seed: u64) -> Result<Vec<Check>> {
    validate(cfg)?;
    p.validate()?;
    let n = cfg.trajectories;
    let x0 = bins(vec![Complex64::new(cfg.x0, 0.0); n])?;
    let y = bins(vec![Complex64::new(cfg.y, 0.0); n])?;
    let dt = p.t_max / cfg.forward_steps as f64;
    let wanted: Vec<usize> = cfg.taus.iter().map(|t| (t / dt).round() as usize).collect();
    if wanted.iter().any(|&k| k == 0 || k > cfg.forward_steps) {
        return Err(Error::Parameter("checked taus must lie in (0, t_max]".into()));
    }
    let mut snapshots = vec![None; wanted.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    forward_simulate_with(&x0, &y, p, cfg.forward_steps, &mut rng, |k, _, x| {
        for (slot, &w) in snapshots.iter_mut().zip(&wanted) {
            if w == k {
                *slot = Some(moments(x));
            }
        }
    })?;
    let mut out = Vec::new();
    for ((&k, snap), _) in wanted.iter().zip(snapshots).zip(&cfg.taus) {
        let tau = k as f64 * dt;
        let (mean, std) = snap.ok_or_else(|| Error::State("missing forward snapshot".into()))?;
        let expected = kernel_mean(&[Complex64::new(cfg.x0, 0.0)], &[Complex64::new(cfg.y, 0.0)], tau, p)?[0];
        out.push(Check {
            name: "kernel_mean",
            tau,
            expected: expected.re,
            observed: mean.re,
            error: (mean - expected).norm() / expected.norm(),
            tolerance: cfg.mean_tol * cfg.tolerance_scale,
        });
        out.push(Check::relative("kernel_std", tau, p.kernel_std(tau), std, cfg.std_tol * cfg.tolerance_scale));
    }
    Ok(out)
}

/// Reverse sampling with the exact score of a Gaussian clean distribution,
/// started from the exact marginal at `t_max`; the terminal moments should
/// recover `(m0, s0)`.
pub fn reverse_checks(p: &OuveParams, cfg: &CheckConfig, seed: u64) -> Result<Vec<Check>> {
    validate(cfg)?;
    let oracle = AnalyticGaussianScore::new(cfg.m0, cfg.s0, cfg.reverse_y, *p)?;
    let mean = bins(vec![cfg.reverse_y; cfg.reverse_runs])?;
    let sampler = SamplerConfig {
        n_steps: cfg.reverse_steps,
        corrector_steps: 0,
        ..SamplerConfig::storm()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = oracle.sample_marginal(p.t_max, &mean, &mut rng)?;
    let out = reverse_sample_from(start, &mean, &[], &oracle, p, &sampler, &mut rng)?;
    let (m, s) = moments(out.data());
    Ok(vec![
        Check {
            name: "reverse_mean",
            tau: 0.0,
            expected: cfg.m0.norm(),
            observed: m.norm(),
            error: (m - cfg.m0).norm() / cfg.m0.norm(),
            tolerance: cfg.reverse_mean_tol * cfg.tolerance_scale,
        },
        Check::relative("reverse_std", 0.0, cfg.s0, s, cfg.reverse_std_tol * cfg.tolerance_scale),
    ])
}

/// Central differences of the kernel variance against `g^2 - 2 gamma var` at
/// `ode_points` midpoints of `[0, t_max]`.
pub fn variance_ode_checks(p: &OuveParams, cfg: &CheckConfig) -> Result<Vec<Check>> {
    p.validate()?;
    let h = 1e-5;
    Ok((0..cfg.ode_points)
        .map(|i| {
            let tau = p.t_max * (i as f64 + 0.5) / cfg.ode_points as f64;
            let numeric = (p.kernel_var(tau + h) - p.kernel_var(tau - h)) / (2.0 * h);
            let g = p.diffusion_coeff(tau);
            let rhs = g * g - 2.0 * p.gamma * p.kernel_var(tau);
            Check {
                name: "variance_ode",
                tau,
                expected: rhs,
                observed: numeric,
                error: (numeric - rhs).abs(),
                tolerance: cfg.ode_tol * cfg.tolerance_scale,
            }
        })
        .collect())
}

/// All checks, each family on its own seeded stream.
pub fn verify_sde(p: &OuveParams, cfg: &CheckConfig, seed: u64) -> Result<Vec<Check>> {
    let mut out = kernel_checks(p, cfg, seed)?;
    out.extend(reverse_checks(p, cfg, seed.wrapping_add(1))?);
    out.extend(variance_ode_checks(p, cfg)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CheckConfig {
        CheckConfig {
            trajectories: 4000,
            forward_steps: 200,
            reverse_runs: 2000,
            reverse_steps: 100,
            mean_tol: 0.02,
            std_tol: 0.05,
            reverse_mean_tol: 0.05,
            reverse_std_tol: 0.1,
            ..CheckConfig::default()
        }
    }

    #[test]
    fn small_checks_pass_and_are_reproducible() {
        let p = OuveParams::storm();
        let a = verify_sde(&p, &small(), 4).unwrap();
        assert_eq!(a.len(), 6 + 2 + 50);
        assert!(a.iter().all(Check::passed), "{a:?}");
        assert_eq!(a, verify_sde(&p, &small(), 4).unwrap());
    }

    #[test]
    fn zero_tolerance_fails() {
        let cfg = CheckConfig {
            tolerance_scale: 0.0,
            ..small()
        };
        let r = kernel_checks(&OuveParams::storm(), &cfg, 1).unwrap();
        assert!(r.iter().any(|c| !c.passed()));
        assert!(r[0].to_string().contains("status=fail"));
    }

    #[test]
    fn rejects_bad_config() {
        let p = OuveParams::storm();
        let cfg = CheckConfig {
            taus: vec![0.0],
            ..small()
        };
        assert!(kernel_checks(&p, &cfg, 0).is_err());
        let cfg = CheckConfig {
            trajectories: 1,
            ..small()
        };
        assert!(kernel_checks(&p, &cfg, 0).is_err());
    }
}
