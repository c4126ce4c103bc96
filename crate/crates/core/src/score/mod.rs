//! Score and predictor abstractions, the analytic Gaussian oracle, the small
//! trainable networks, training losses and the training loop.

mod loss;
mod net;
mod optim;
mod train;

pub use loss::{
    dsm_loss, dsm_loss_at, dsm_loss_at_with, dsm_loss_with, storm_loss, storm_loss_with,
    supervised_loss, DsmDraw, DsmWeighting, LossOutput, StormLossOutput,
};
pub use net::{NetConfig, TinyPredictor, TinyScoreNet, MAX_PARAMS, MIN_RECEPTIVE_FIELD};
pub use optim::{ema_update, Adam, AdamState};
pub use train::{
    train, Dataset, EpochRecord, ModelState, Phase, TrainConfig, TrainOutcome, TrainState, Trainer,
    TrainingPair,
};

use std::sync::atomic::{AtomicUsize, Ordering};

use num_complex::Complex64;

use crate::error::{Error, Result};
use rand::Rng;

use crate::sde::{complex_normal_vec, OuveParams, ProcessState};
use crate::signal::ComplexSpectrogram;

/// Estimate of the score of the diffusion marginal.
///
/// `conditioning` holds the conditioning spectrograms in stacking order
/// (`[y]` for the generative path, `[y, D(y)]` for stochastic
/// regeneration). `sigma` is `sigma(tau)` of the process being solved.
pub trait ScoreModel {
    fn evaluate(
        &self,
        x: &ComplexSpectrogram,
        conditioning: &[&ComplexSpectrogram],
        tau: f64,
        sigma: f64,
    ) -> Result<Vec<Complex64>>;

    /// Evaluates the score, asks `d_loss` for the loss gradient with respect
    /// to it, and backpropagates. Complex gradients are stored as
    /// `(dL/d re, dL/d im)`. Models without parameters return empty
    /// gradient vectors.
    fn evaluate_with_grad(
        &self,
        x: &ComplexSpectrogram,
        conditioning: &[&ComplexSpectrogram],
        tau: f64,
        sigma: f64,
        d_loss: &mut dyn FnMut(&[Complex64]) -> Result<Vec<Complex64>>,
    ) -> Result<ScoreGrad> {
        let score = self.evaluate(x, conditioning, tau, sigma)?;
        d_loss(&score)?;
        Ok(ScoreGrad {
            score,
            ..ScoreGrad::default()
        })
    }
}

/// Result of [`ScoreModel::evaluate_with_grad`].
#[derive(Debug, Clone, Default)]
pub struct ScoreGrad {
    pub score: Vec<Complex64>,
    pub params: Vec<f64>,
    /// Gradient with respect to the state `x`; empty if not differentiable.
    pub x: Vec<Complex64>,
    /// Gradient with respect to each conditioning entry; empty if not
    /// differentiable.
    pub conditioning: Vec<Vec<Complex64>>,
}

/// First-stage denoiser.
pub trait Predictor {
    fn predict(&self, y: &ComplexSpectrogram) -> Result<ComplexSpectrogram>;

    /// Predicts, asks `d_loss` for the loss gradient with respect to the
    /// prediction and returns the prediction with the parameter gradient.
    fn predict_with_grad(
        &self,
        y: &ComplexSpectrogram,
        d_loss: &mut dyn FnMut(&ComplexSpectrogram) -> Result<Vec<Complex64>>,
    ) -> Result<(ComplexSpectrogram, Vec<f64>)> {
        let d = self.predict(y)?;
        d_loss(&d)?;
        Ok((d, Vec::new()))
    }
}

impl<T: ScoreModel + ?Sized> ScoreModel for &T {
    fn evaluate(
        &self,
        x: &ComplexSpectrogram,
        conditioning: &[&ComplexSpectrogram],
        tau: f64,
        sigma: f64,
    ) -> Result<Vec<Complex64>> {
        (**self).evaluate(x, conditioning, tau, sigma)
    }

    fn evaluate_with_grad(
        &self,
        x: &ComplexSpectrogram,
        conditioning: &[&ComplexSpectrogram],
        tau: f64,
        sigma: f64,
        d_loss: &mut dyn FnMut(&[Complex64]) -> Result<Vec<Complex64>>,
    ) -> Result<ScoreGrad> {
        (**self).evaluate_with_grad(x, conditioning, tau, sigma, d_loss)
    }
}

impl<T: Predictor + ?Sized> Predictor for &T {
    fn predict(&self, y: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        (**self).predict(y)
    }

    fn predict_with_grad(
        &self,
        y: &ComplexSpectrogram,
        d_loss: &mut dyn FnMut(&ComplexSpectrogram) -> Result<Vec<Complex64>>,
    ) -> Result<(ComplexSpectrogram, Vec<f64>)> {
        (**self).predict_with_grad(y, d_loss)
    }
}

/// Adapts a closure into a [`ScoreModel`].
pub struct FnScore<F>(pub F);

impl<F> ScoreModel for FnScore<F>
where
    F: Fn(&ComplexSpectrogram, &[&ComplexSpectrogram], f64, f64) -> Result<Vec<Complex64>>,
{
    fn evaluate(
        &self,
        x: &ComplexSpectrogram,
        conditioning: &[&ComplexSpectrogram],
        tau: f64,
        sigma: f64,
    ) -> Result<Vec<Complex64>> {
        (self.0)(x, conditioning, tau, sigma)
    }
}

/// Adapts a closure into a [`Predictor`].
pub struct FnPredictor<F>(pub F);

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&ComplexSpectrogram) -> Result<ComplexSpectrogram>,
{
    fn predict(&self, y: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        (self.0)(y)
    }
}

/// Returns its input.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPredictor;

impl Predictor for IdentityPredictor {
    fn predict(&self, y: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        Ok(y.clone())
    }
}

/// Counts how often the wrapped model is evaluated.
#[derive(Debug, Default)]
pub struct Counting<M> {
    inner: M,
    calls: AtomicUsize,
}

impl<M> Counting<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: ScoreModel> ScoreModel for Counting<M> {
    fn evaluate(
        &self,
        x: &ComplexSpectrogram,
        conditioning: &[&ComplexSpectrogram],
        tau: f64,
        sigma: f64,
    ) -> Result<Vec<Complex64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate(x, conditioning, tau, sigma)
    }

    fn evaluate_with_grad(
        &self,
        x: &ComplexSpectrogram,
        conditioning: &[&ComplexSpectrogram],
        tau: f64,
        sigma: f64,
        d_loss: &mut dyn FnMut(&[Complex64]) -> Result<Vec<Complex64>>,
    ) -> Result<ScoreGrad> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate_with_grad(x, conditioning, tau, sigma, d_loss)
    }
}

impl<M: Predictor> Predictor for Counting<M> {
    fn predict(&self, y: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict(y)
    }

    fn predict_with_grad(
        &self,
        y: &ComplexSpectrogram,
        d_loss: &mut dyn FnMut(&ComplexSpectrogram) -> Result<Vec<Complex64>>,
    ) -> Result<(ComplexSpectrogram, Vec<f64>)> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict_with_grad(y, d_loss)
    }
}

/// Exact score when the clean signal is complex Gaussian with mean `m0`
/// and total variance `s0^2`, and the process target is the constant `y`.
///
/// Convolving the clean distribution with the perturbation kernel gives the
/// marginal `N_C(e^{-gamma tau} m0 + (1 - e^{-gamma tau}) y, e^{-2 gamma tau} s0^2 + sigma(tau)^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticGaussianScore {
    pub m0: Complex64,
    pub s0: f64,
    pub y: Complex64,
    pub params: OuveParams,
}

impl AnalyticGaussianScore {
    pub fn new(m0: Complex64, s0: f64, y: Complex64, params: OuveParams) -> Result<Self> {
        if !(s0 >= 0.0 && s0.is_finite()) {
            return Err(Error::Parameter(format!("s0 must be >= 0, got {s0}")));
        }
        params.validate()?;
        Ok(Self { m0, s0, y, params })
    }

    pub fn marginal_mean(&self, tau: f64) -> Complex64 {
        let w = self.params.mean_decay(tau);
        self.m0 * w + self.y * (1.0 - w)
    }

    pub fn marginal_var(&self, tau: f64) -> f64 {
        let w = self.params.mean_decay(tau);
        w * w * self.s0 * self.s0 + self.params.kernel_var(tau)
    }

    /// Exact draw of the marginal at `tau`, shaped like `like`.
    pub fn sample_marginal<R: Rng + ?Sized>(
        &self,
        tau: f64,
        like: &ComplexSpectrogram,
        rng: &mut R,
    ) -> Result<ProcessState> {
        let m = self.marginal_mean(tau);
        let sd = self.marginal_var(tau).sqrt();
        let data = complex_normal_vec(like.len(), rng)
            .into_iter()
            .map(|z| m + z * sd)
            .collect();
        Ok(ProcessState {
            x: like.with_data(data)?,
            tau,
        })
    }
}

/// `-(x - mean(tau)) / var(tau)` for the oracle's marginal.
pub fn analytic_score_eval(
    x: Complex64,
    tau: f64,
    oracle: &AnalyticGaussianScore,
) -> Result<Complex64> {
    if !(0.0..=oracle.params.t_max).contains(&tau) {
        return Err(Error::Parameter(format!(
            "tau {tau} outside [0, {}]",
            oracle.params.t_max
        )));
    }
    let var = oracle.marginal_var(tau);
    if var <= 0.0 {
        return Err(Error::Numerical {
            tau,
            sigma: 0.0,
            what: "marginal variance vanishes (s0 = 0 at tau = 0)".into(),
        });
    }
    Ok(-(x - oracle.marginal_mean(tau)) / var)
}

impl ScoreModel for AnalyticGaussianScore {
    fn evaluate(
        &self,
        x: &ComplexSpectrogram,
        _conditioning: &[&ComplexSpectrogram],
        tau: f64,
        _sigma: f64,
    ) -> Result<Vec<Complex64>> {
        x.data()
            .iter()
            .map(|&v| analytic_score_eval(v, tau, self))
            .collect()
    }
}
