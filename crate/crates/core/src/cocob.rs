//! COCOB-Backprop: per-coordinate coin-betting optimiser without a step size.

use crate::error::{check_dim, Error, Result};
use crate::model::ParamVector;

/// Initial per-coordinate scale, keeps the first bet finite.
pub const SCALE_FLOOR: f64 = 1e-8;
pub const DEFAULT_ALPHA: f64 = 10_000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CocobState {
    pub w1: Vec<f64>,
    pub w: Vec<f64>,
    /// Running max of |g|.
    pub scale: Vec<f64>,
    /// Running sum of |g|.
    pub grad_abs_sum: Vec<f64>,
    pub reward: Vec<f64>,
    /// Running sum of g.
    pub grad_sum: Vec<f64>,
    pub alpha: f64,
}

impl CocobState {
    pub fn new(w0: &[f64], alpha: f64) -> Result<Self> {
        if w0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial point"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        let n = w0.len();
        Ok(CocobState {
            w1: w0.to_vec(),
            w: w0.to_vec(),
            scale: vec![SCALE_FLOOR; n],
            grad_abs_sum: vec![0.0; n],
            reward: vec![0.0; n],
            grad_sum: vec![0.0; n],
            alpha,
        })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// One update. The gradient is trusted to be finite and of the right
    /// length; [`CocobState::step`] checks both.
    pub fn step_unchecked(&mut self, grad: &[f64]) {
        let alpha = self.alpha;
        for i in 0..self.w.len() {
            let g = grad[i];
            let l = self.scale[i].max(g.abs());
            let gs = self.grad_abs_sum[i] + g.abs();
            let r = (self.reward[i] - (self.w[i] - self.w1[i]) * g).max(0.0);
            let th = self.grad_sum[i] + g;
            self.w[i] = self.w1[i] + (-th / (l * (gs + l).max(alpha * l))) * (r + l);
            self.scale[i] = l;
            self.grad_abs_sum[i] = gs;
            self.reward[i] = r;
            self.grad_sum[i] = th;
        }
    }

    pub fn step(&mut self, grad: &[f64]) -> Result<()> {
        check_dim(self.dim(), grad.len())?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.step_unchecked(grad);
        Ok(())
    }

    pub fn params(&self) -> ParamVector {
        ParamVector { values: self.w.clone() }
    }
}

pub fn cocob_init(w0: &ParamVector, alpha: f64) -> Result<CocobState> {
    CocobState::new(w0.as_slice(), alpha)
}

pub fn cocob_step(mut state: CocobState, grad: &ParamVector) -> Result<CocobState> {
    state.step(grad.as_slice())?;
    Ok(state)
}
