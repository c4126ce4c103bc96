use crate::error::{Error, Result};

/// Moment accumulators of [`Adam`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Steps taken so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// Bias-corrected adaptive-moment gradient descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&self, params: &mut [f64], grad: &[f64], state: &mut AdamState) -> Result<()> {
        let n = params.len();
        if grad.len() != n || state.m.len() != n || state.v.len() != n {
            return Err(Error::Shape(format!(
                "optimizer buffers disagree: {} params, {} grads, {} moments",
                n,
                grad.len(),
                state.m.len()
            )));
        }
        state.t += 1;
        let t = state.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..n {
            let g = grad[i];
            state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
            state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = state.m[i] / c1;
            let v_hat = state.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `ema <- decay * ema + (1 - decay) * current`.
pub fn ema_update(ema: &mut [f64], current: &[f64], decay: f64) -> Result<()> {
    if ema.len() != current.len() {
        return Err(Error::Shape(format!(
            "EMA holds {} values, current {}",
            ema.len(),
            current.len()
        )));
    }
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::Parameter(format!("EMA decay {decay} outside [0, 1]")));
    }
    for (e, c) in ema.iter_mut().zip(current) {
        *e = decay * *e + (1.0 - decay) * c;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_limits() {
        let mut ema = vec![1.0, 2.0];
        ema_update(&mut ema, &[5.0, 6.0], 0.0).unwrap();
        assert_eq!(ema, vec![5.0, 6.0]);
        ema_update(&mut ema, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(ema, vec![5.0, 6.0]);
        assert!(ema_update(&mut ema, &[0.0], 0.5).is_err());
        assert!(ema_update(&mut ema, &[0.0, 0.0], 1.5).is_err());
    }

    #[test]
    fn ema_converges_geometrically() {
        let decay: f64 = 0.9;
        let mut ema = vec![10.0];
        for k in 1..=50 {
            ema_update(&mut ema, &[3.0], decay).unwrap();
            let expected = 3.0 + 7.0 * decay.powi(k);
            assert!((ema[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let adam = Adam::new(0.01);
        let mut p = vec![1.0, -1.0, 0.5];
        let mut st = AdamState::new(3);
        adam.step(&mut p, &[3.0, -0.2, 0.0], &mut st).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
        assert_eq!(p[2], 0.5);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let adam = Adam::new(0.05);
        let mut p = vec![4.0, -3.0];
        let mut st = AdamState::new(2);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * (v - 1.0)).collect();
            adam.step(&mut p, &g, &mut st).unwrap();
        }
        assert!(p.iter().all(|v| (v - 1.0).abs() < 1e-3));
    }
}
