use num_complex::Complex64;
use rand::Rng;

use super::{Predictor, ScoreGrad, ScoreModel};
use crate::error::{Error, Result};
use crate::nn::{ConvNet, ConvNetSpec};
use crate::signal::ComplexSpectrogram;

/// Shared layout of the score network and the predictor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub hidden: usize,
    pub dilations: Vec<usize>,
    /// Width of the sinusoidal noise-level embedding (even).
    pub embed_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: 12,
            dilations: vec![1, 2, 4, 1],
            embed_dim: 8,
        }
    }
}

pub const MAX_PARAMS: usize = 100_000;
pub const MIN_RECEPTIVE_FIELD: usize = 15;

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::Parameter(format!(
                "embedding width must be even and positive, got {}",
                self.embed_dim
            )));
        }
        let spec = self.score_spec(2);
        spec.validate()?;
        if spec.receptive_field() < MIN_RECEPTIVE_FIELD {
            return Err(Error::Parameter(format!(
                "receptive field {} below {MIN_RECEPTIVE_FIELD} bins",
                spec.receptive_field()
            )));
        }
        if spec.param_count() > MAX_PARAMS {
            return Err(Error::Parameter(format!(
                "{} parameters exceed the {MAX_PARAMS} budget",
                spec.param_count()
            )));
        }
        Ok(())
    }

    /// Inputs: state, `n_cond` conditioning spectrograms (real and imaginary
    /// planes each) and a frequency coordinate plane.
    pub(crate) fn score_spec(&self, n_cond: usize) -> ConvNetSpec {
        ConvNetSpec {
            in_channels: 2 + 2 * n_cond + 1,
            hidden: self.hidden,
            dilations: self.dilations.clone(),
            cond_dim: self.embed_dim,
            out_channels: 2,
        }
    }

    /// Inputs: real, imaginary and magnitude planes of `y` and a frequency
    /// coordinate plane.
    pub(crate) fn predictor_spec(&self) -> ConvNetSpec {
        ConvNetSpec {
            in_channels: 4,
            hidden: self.hidden,
            dilations: self.dilations.clone(),
            cond_dim: 0,
            out_channels: 2,
        }
    }

    pub fn score_param_count(&self, n_cond: usize) -> Result<usize> {
        self.validate()?;
        Ok(self.score_spec(n_cond).param_count())
    }

    pub fn predictor_param_count(&self) -> Result<usize> {
        self.validate()?;
        Ok(self.predictor_spec().param_count())
    }
}

fn stack_planes(planes: &[&[Complex64]], n_freq: usize, n_frames: usize) -> Vec<f64> {
    let p = n_freq * n_frames;
    let mut out = Vec::with_capacity((2 * planes.len() + 1) * p);
    for plane in planes {
        out.extend(plane.iter().map(|c| c.re));
        out.extend(plane.iter().map(|c| c.im));
    }
    let span = (n_freq.max(2) - 1) as f64;
    for f in 0..n_freq {
        let coord = 2.0 * f as f64 / span - 1.0;
        out.extend(std::iter::repeat(coord).take(n_frames));
    }
    out
}

fn plane_pair(buf: &[f64], idx: usize, p: usize) -> Vec<Complex64> {
    let re = &buf[2 * idx * p..(2 * idx + 1) * p];
    let im = &buf[(2 * idx + 1) * p..(2 * idx + 2) * p];
    re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect()
}

fn split_complex(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|c| c.re).chain(v.iter().map(|c| c.im)).collect()
}

/// Sinusoidal features of `ln sigma`.
pub(crate) fn noise_embedding(sigma: f64, dim: usize) -> Vec<f64> {
    let l = sigma.ln();
    (0..dim / 2)
        .flat_map(|i| {
            let w = 0.5 * f64::from(1u32 << i);
            [(w * l).sin(), (w * l).cos()]
        })
        .collect()
}

/// Small noise-conditioned convolutional score model.
///
/// The network output `h` is read as an estimate of `x0 - m`, with `m` the
/// last conditioning spectrogram (the process mean target), and the score is
/// `-(x - m - e^{-gamma tau} h) / sigma^2`.
#[derive(Debug, Clone)]
pub struct TinyScoreNet {
    config: NetConfig,
    net: ConvNet,
    params: Vec<f64>,
    n_cond: usize,
    gamma: f64,
}

impl TinyScoreNet {
    pub fn new<R: Rng + ?Sized>(
        config: NetConfig,
        n_cond: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let net = Self::build(&config, n_cond, gamma)?;
        let params = net.init_params(rng);
        Ok(Self {
            config,
            net,
            params,
            n_cond,
            gamma,
        })
    }

    pub fn from_params(config: NetConfig, n_cond: usize, gamma: f64, params: Vec<f64>) -> Result<Self> {
        let net = Self::build(&config, n_cond, gamma)?;
        check_params(&net, &params)?;
        Ok(Self {
            config,
            net,
            params,
            n_cond,
            gamma,
        })
    }

    fn build(config: &NetConfig, n_cond: usize, gamma: f64) -> Result<ConvNet> {
        config.validate()?;
        if !(1..=2).contains(&n_cond) {
            return Err(Error::Parameter(format!(
                "score network takes 1 or 2 conditioning inputs, got {n_cond}"
            )));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Parameter(format!("gamma must be > 0, got {gamma}")));
        }
        ConvNet::new(config.score_spec(n_cond))
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn n_cond(&self) -> usize {
        self.n_cond
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_params(&self.net, params)?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn receptive_field(&self) -> usize {
        self.net.spec().receptive_field()
    }

    pub fn descriptor(&self) -> String {
        format!("score:{}", self.net.spec().descriptor())
    }

    fn prepare(
        &self,
        x: &ComplexSpectrogram,
        conditioning: &[&ComplexSpectrogram],
        tau: f64,
        sigma: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
        if conditioning.len() != self.n_cond {
            return Err(Error::Shape(format!(
                "expected {} conditioning inputs, got {}",
                self.n_cond,
                conditioning.len()
            )));
        }
        for c in conditioning {
            x.check_same_shape(c, "score conditioning")?;
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Numerical {
                tau,
                sigma,
                what: "score network needs sigma > 0".into(),
            });
        }
        let mut planes: Vec<&[Complex64]> = vec![x.data()];
        planes.extend(conditioning.iter().map(|c| c.data()));
        let input = stack_planes(&planes, x.n_freq(), x.n_frames());
        let embed = noise_embedding(sigma, self.config.embed_dim);
        let decay = (-self.gamma * tau).exp();
        Ok((input, embed, decay, 1.0 / (sigma * sigma)))
    }

    fn assemble(
        x: &ComplexSpectrogram,
        mean: &ComplexSpectrogram,
        head: &[f64],
        decay: f64,
        inv_var: f64,
    ) -> Vec<Complex64> {
        let h = plane_pair(head, 0, x.len());
        x.data()
            .iter()
            .zip(mean.data())
            .zip(&h)
            .map(|((xv, m), hv)| -(xv - m - hv * decay) * inv_var)
            .collect()
    }
}

fn check_params(net: &ConvNet, params: &[f64]) -> Result<()> {
    if params.len() != net.param_count() {
        return Err(Error::Architecture {
            expected: format!("{} parameters for {}", net.param_count(), net.spec().descriptor()),
            found: format!("{} parameters", params.len()),
        });
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite network parameter".into()));
    }
    Ok(())
}

impl ScoreModel for TinyScoreNet {
    fn evaluate(
        &self,
        x: &ComplexSpectrogram,
        conditioning: &[&ComplexSpectrogram],
        tau: f64,
        sigma: f64,
    ) -> Result<Vec<Complex64>> {
        let (input, embed, decay, inv_var) = self.prepare(x, conditioning, tau, sigma)?;
        let (head, _) =
            self.net
                .forward(&self.params, &input, x.n_freq(), x.n_frames(), &embed, false)?;
        Ok(Self::assemble(x, conditioning[self.n_cond - 1], &head, decay, inv_var))
    }

    fn evaluate_with_grad(
        &self,
        x: &ComplexSpectrogram,
        conditioning: &[&ComplexSpectrogram],
        tau: f64,
        sigma: f64,
        d_loss: &mut dyn FnMut(&[Complex64]) -> Result<Vec<Complex64>>,
    ) -> Result<ScoreGrad> {
        let (input, embed, decay, inv_var) = self.prepare(x, conditioning, tau, sigma)?;
        let (head, tape) =
            self.net
                .forward(&self.params, &input, x.n_freq(), x.n_frames(), &embed, true)?;
        let tape = tape.expect("forward records when asked");
        let score = Self::assemble(x, conditioning[self.n_cond - 1], &head, decay, inv_var);
        let g = d_loss(&score)?;
        if g.len() != score.len() {
            return Err(Error::Shape("loss gradient does not match the score".into()));
        }
        let d_head: Vec<f64> = split_complex(&g).iter().map(|v| v * decay * inv_var).collect();
        let mut params = vec![0.0; self.params.len()];
        let d_in = self.net.backward(&self.params, &tape, &d_head, &mut params)?;
        let p = x.len();
        let direct: Vec<Complex64> = g.iter().map(|v| v * inv_var).collect();
        let dx = plane_pair(&d_in, 0, p)
            .into_iter()
            .zip(&direct)
            .map(|(a, b)| a - b)
            .collect();
        let mut cond: Vec<Vec<Complex64>> = (0..self.n_cond).map(|i| plane_pair(&d_in, i + 1, p)).collect();
        if let Some(last) = cond.last_mut() {
            last.iter_mut().zip(&direct).for_each(|(a, b)| *a += b);
        }
        Ok(ScoreGrad {
            score,
            params,
            x: dx,
            conditioning: cond,
        })
    }
}

/// Convolutional complex-mask denoiser: `D(y) = y (1 + net(y))`.
#[derive(Debug, Clone)]
pub struct TinyPredictor {
    config: NetConfig,
    net: ConvNet,
    params: Vec<f64>,
}

impl TinyPredictor {
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let net = ConvNet::new(config.predictor_spec())?;
        let params = net.init_params(rng);
        Ok(Self { config, net, params })
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let net = ConvNet::new(config.predictor_spec())?;
        check_params(&net, &params)?;
        Ok(Self { config, net, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_params(&self.net, params)?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn descriptor(&self) -> String {
        format!("predictor:{}", self.net.spec().descriptor())
    }

    fn input(y: &ComplexSpectrogram) -> Vec<f64> {
        let mut planes = stack_planes(&[y.data()], y.n_freq(), y.n_frames());
        let p = y.len();
        let magnitude: Vec<f64> = y.data().iter().map(|c| c.norm()).collect();
        planes.splice(2 * p..2 * p, magnitude);
        planes
    }

    fn output(y: &ComplexSpectrogram, head: &[f64]) -> Result<ComplexSpectrogram> {
        let h = plane_pair(head, 0, y.len());
        y.with_data(y.data().iter().zip(&h).map(|(a, m)| a * (1.0 + m)).collect())
    }
}

impl Predictor for TinyPredictor {
    fn predict(&self, y: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        let input = Self::input(y);
        let (head, _) = self
            .net
            .forward(&self.params, &input, y.n_freq(), y.n_frames(), &[], false)?;
        Self::output(y, &head)
    }

    fn predict_with_grad(
        &self,
        y: &ComplexSpectrogram,
        d_loss: &mut dyn FnMut(&ComplexSpectrogram) -> Result<Vec<Complex64>>,
    ) -> Result<(ComplexSpectrogram, Vec<f64>)> {
        let input = Self::input(y);
        let (head, tape) = self
            .net
            .forward(&self.params, &input, y.n_freq(), y.n_frames(), &[], true)?;
        let d = Self::output(y, &head)?;
        let g = d_loss(&d)?;
        if g.len() != d.len() {
            return Err(Error::Shape("loss gradient does not match the prediction".into()));
        }
        // D = y (1 + h), so dL/dh = conj(y) dL/dD
        let d_head: Vec<Complex64> = g.iter().zip(y.data()).map(|(g, y)| y.conj() * g).collect();
        let mut params = vec![0.0; self.params.len()];
        self.net.backward(
            &self.params,
            &tape.expect("forward records when asked"),
            &split_complex(&d_head),
            &mut params,
        )?;
        Ok((d, params))
    }
}
