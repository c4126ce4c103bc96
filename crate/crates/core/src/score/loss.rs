use num_complex::Complex64;
use rand::Rng;

use super::{Predictor, ScoreGrad, ScoreModel};
use crate::error::{Error, Result};
use crate::sde::{complex_normal_vec, kernel_mean, OuveParams};
use crate::signal::ComplexSpectrogram;

/// One draw of the denoising objective: `x_tau = mu(x0, mean, tau) + sigma z`.
#[derive(Debug, Clone)]
pub struct DsmDraw {
    pub tau: f64,
    pub sigma: f64,
    pub x_tau: ComplexSpectrogram,
    pub z: Vec<Complex64>,
}

impl DsmDraw {
    /// `tau ~ U(t_eps, t_max)`, `z ~ N_C(0, I)`.
    pub fn sample<R: Rng + ?Sized>(
        x0: &ComplexSpectrogram,
        mean: &ComplexSpectrogram,
        p: &OuveParams,
        rng: &mut R,
    ) -> Result<Self> {
        p.validate()?;
        let tau = rng.gen_range(p.t_eps..=p.t_max);
        let z = complex_normal_vec(x0.len(), rng);
        Self::build(x0, mean, tau, z, p)
    }

    pub fn build(
        x0: &ComplexSpectrogram,
        mean: &ComplexSpectrogram,
        tau: f64,
        z: Vec<Complex64>,
        p: &OuveParams,
    ) -> Result<Self> {
        x0.check_same_shape(mean, "denoising draw")?;
        if z.len() != x0.len() {
            return Err(Error::Shape(format!("{} noise bins for {} bins", z.len(), x0.len())));
        }
        let sigma = p.kernel_std(tau);
        let mu = kernel_mean(x0.data(), mean.data(), tau, p)?;
        let data = mu.iter().zip(&z).map(|(m, zv)| m + zv * sigma).collect();
        Ok(Self {
            tau,
            sigma,
            x_tau: x0.with_data(data)?,
            z,
        })
    }
}

/// Per-draw scaling of the denoising term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DsmWeighting {
    /// `||s + z / sigma||^2`.
    #[default]
    Unit,
    /// `sigma^2 ||s + z / sigma||^2 = ||sigma s + z||^2`.
    SigmaSquared,
}

impl DsmWeighting {
    fn factor(self, sigma: f64) -> f64 {
        match self {
            Self::Unit => 1.0,
            Self::SigmaSquared => sigma * sigma,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Diffusion time and noise level of the draw, for denoising losses.
    pub tau: Option<f64>,
    pub sigma: Option<f64>,
    /// Parameter gradient; empty for models without parameters.
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StormLossOutput {
    /// `dsm + alpha * supervised`.
    pub loss: f64,
    pub dsm: f64,
    pub supervised: f64,
    pub tau: f64,
    pub sigma: f64,
    pub score_grad: Vec<f64>,
    pub predictor_grad: Vec<f64>,
}

fn non_finite(tau: f64, sigma: f64, what: &str) -> Error {
    Error::Numerical {
        tau,
        sigma,
        what: format!("{what} is not finite"),
    }
}

// Weighted denoising term on a fixed draw, with its gradient.
fn dsm_term(
    score: &dyn ScoreModel,
    draw: &DsmDraw,
    conditioning: &[&ComplexSpectrogram],
    weighting: DsmWeighting,
) -> Result<(f64, ScoreGrad)> {
    let w = weighting.factor(draw.sigma);
    let mut loss = 0.0;
    let grad = score.evaluate_with_grad(
        &draw.x_tau,
        conditioning,
        draw.tau,
        draw.sigma,
        &mut |s: &[Complex64]| {
            if s.len() != draw.z.len() {
                return Err(Error::Shape(format!(
                    "score returned {} bins for {}",
                    s.len(),
                    draw.z.len()
                )));
            }
            let mut acc = 0.0;
            let g = s
                .iter()
                .zip(&draw.z)
                .map(|(sv, zv)| {
                    let r = sv + zv / draw.sigma;
                    acc += r.norm_sqr();
                    r * (2.0 * w)
                })
                .collect();
            loss = w * acc;
            Ok(g)
        },
    )?;
    if !loss.is_finite() {
        return Err(non_finite(draw.tau, draw.sigma, "denoising score matching loss"));
    }
    Ok((loss, grad))
}

/// Denoising score matching on a given draw: `||s(x_tau, c, tau) + z / sigma||^2`
/// summed over bins.
pub fn dsm_loss_at(
    score: &dyn ScoreModel,
    draw: &DsmDraw,
    conditioning: &[&ComplexSpectrogram],
) -> Result<LossOutput> {
    dsm_loss_at_with(score, draw, conditioning, DsmWeighting::Unit)
}

pub fn dsm_loss_at_with(
    score: &dyn ScoreModel,
    draw: &DsmDraw,
    conditioning: &[&ComplexSpectrogram],
    weighting: DsmWeighting,
) -> Result<LossOutput> {
    let (loss, g) = dsm_term(score, draw, conditioning, weighting)?;
    Ok(LossOutput {
        loss,
        tau: Some(draw.tau),
        sigma: Some(draw.sigma),
        grad: g.params,
    })
}

/// Draws `tau` and `z` and evaluates the denoising objective for the
/// process with mean target `y`, conditioned on `[y]`.
pub fn dsm_loss<R: Rng + ?Sized>(
    score: &dyn ScoreModel,
    x0: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    p: &OuveParams,
    rng: &mut R,
) -> Result<LossOutput> {
    dsm_loss_with(score, x0, y, p, DsmWeighting::Unit, rng)
}

pub fn dsm_loss_with<R: Rng + ?Sized>(
    score: &dyn ScoreModel,
    x0: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    p: &OuveParams,
    weighting: DsmWeighting,
    rng: &mut R,
) -> Result<LossOutput> {
    let draw = DsmDraw::sample(x0, y, p, rng)?;
    dsm_loss_at_with(score, &draw, &[y], weighting)
}

/// `||x0 - D(y)||^2` summed over bins.
pub fn supervised_loss(
    predictor: &dyn Predictor,
    x0: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
) -> Result<LossOutput> {
    x0.check_same_shape(y, "supervised loss")?;
    let mut loss = 0.0;
    let (_, grad) = predictor.predict_with_grad(y, &mut |d: &ComplexSpectrogram| {
        x0.check_same_shape(d, "predictor output")?;
        let mut acc = 0.0;
        let g = d
            .data()
            .iter()
            .zip(x0.data())
            .map(|(dv, xv)| {
                let r = dv - xv;
                acc += r.norm_sqr();
                r * 2.0
            })
            .collect();
        loss = acc;
        Ok(g)
    })?;
    if !loss.is_finite() {
        return Err(non_finite(0.0, 0.0, "supervised loss"));
    }
    Ok(LossOutput {
        loss,
        tau: None,
        sigma: None,
        grad,
    })
}

/// Joint objective: denoising score matching for the process whose mean
/// target is `D(y)`, conditioned on `[y, D(y)]`, plus `alpha ||x0 - D(y)||^2`.
/// Gradients reach the predictor through the conditioning, the process mean
/// and the supervised term.
pub fn storm_loss<R: Rng + ?Sized>(
    score: &dyn ScoreModel,
    predictor: &dyn Predictor,
    x0: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    p: &OuveParams,
    alpha: f64,
    rng: &mut R,
) -> Result<StormLossOutput> {
    storm_loss_with(score, predictor, x0, y, p, alpha, DsmWeighting::Unit, rng)
}

#[allow(clippy::too_many_arguments)]
pub fn storm_loss_with<R: Rng + ?Sized>(
    score: &dyn ScoreModel,
    predictor: &dyn Predictor,
    x0: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    p: &OuveParams,
    alpha: f64,
    weighting: DsmWeighting,
    rng: &mut R,
) -> Result<StormLossOutput> {
    p.validate()?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("alpha must be >= 0, got {alpha}")));
    }
    x0.check_same_shape(y, "joint loss")?;
    let tau = rng.gen_range(p.t_eps..=p.t_max);
    let z = complex_normal_vec(x0.len(), rng);
    let decay = p.mean_decay(tau);
    let mut z_slot = Some(z);
    let mut dsm = 0.0;
    let mut sup = 0.0;
    let mut sigma = p.kernel_std(tau);
    let mut score_grad = Vec::new();
    let (_, predictor_grad) = predictor.predict_with_grad(y, &mut |d: &ComplexSpectrogram| {
        x0.check_same_shape(d, "predictor output")?;
        let z = z_slot.take().expect("predictor backward runs once");
        let draw = DsmDraw::build(x0, d, tau, z, p)?;
        sigma = draw.sigma;
        let (loss, g) = dsm_term(score, &draw, &[y, d], weighting)?;
        dsm = loss;
        score_grad = g.params;
        let mut grad = vec![Complex64::new(0.0, 0.0); d.len()];
        if let Some(dc) = g.conditioning.get(1) {
            grad.iter_mut().zip(dc).for_each(|(a, b)| *a += b);
        }
        if !g.x.is_empty() {
            // x_tau depends on D(y) through the process mean
            grad.iter_mut()
                .zip(&g.x)
                .for_each(|(a, b)| *a += b * (1.0 - decay));
        }
        let mut acc = 0.0;
        for ((gv, dv), xv) in grad.iter_mut().zip(d.data()).zip(x0.data()) {
            let r = dv - xv;
            acc += r.norm_sqr();
            *gv += r * (2.0 * alpha);
        }
        sup = acc;
        Ok(grad)
    })?;
    let loss = dsm + alpha * sup;
    if !loss.is_finite() {
        return Err(non_finite(tau, sigma, "joint loss"));
    }
    Ok(StormLossOutput {
        loss,
        dsm,
        supervised: sup,
        tau,
        sigma,
        score_grad,
        predictor_grad,
    })
}
