//! Online learner: per-example descent kept close to the previous hypothesis
//! by a log-barrier extension, and the plain online gradient baseline.

use std::io::Write;

use ndarray::ArrayView2;

use crate::batch::risks;
use crate::cocob::{CocobState, DEFAULT_ALPHA};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::losses::{batch_losses, batch_value_grad, LossConfig};
use crate::model::{euclidean, init_weights, Hypothesis, ModelSpec, ParamVector};
use crate::rng;

/// Log-barrier extension: `-(1/t) ln(-a)` for `a <= -1/t^2`, continued
/// linearly with slope `t` beyond that point.
pub fn log_barrier(a: f64, t: f64) -> f64 {
    if a <= -1.0 / (t * t) {
        barrier_log_branch(a, t)
    } else {
        barrier_linear_branch(a, t)
    }
}

pub fn log_barrier_grad(a: f64, t: f64) -> f64 {
    if a <= -1.0 / (t * t) {
        barrier_log_branch_grad(a, t)
    } else {
        t
    }
}

/// `-(1/t) ln(-a)`, defined for `a < 0`.
pub fn barrier_log_branch(a: f64, t: f64) -> f64 {
    -(-a).ln() / t
}

pub fn barrier_log_branch_grad(a: f64, t: f64) -> f64 {
    -1.0 / (t * a)
}

/// `t a - (1/t) ln(1/t^2) + 1/t`.
pub fn barrier_linear_branch(a: f64, t: f64) -> f64 {
    t * a - (1.0 / (t * t)).ln() / t + 1.0 / t
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OnlineConfig {
    pub inner_steps: usize,
    pub barrier_t: f64,
    pub radius: f64,
    /// Apply the barrier term at all; off for the gradient baseline.
    pub barrier: bool,
    /// Add the unconstrained `|w - w_prev|` term to each per-example objective.
    pub include_plain_distance: bool,
    pub loss: LossConfig,
    pub cocob_alpha: f64,
    /// Fresh optimiser state for every example.
    pub reset_optimizer: bool,
    /// Evaluation rows used for the per-step population estimate.
    pub eval_subsample: usize,
    pub keep_hypotheses: bool,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            inner_steps: 10,
            barrier_t: 100.0,
            radius: 1.0,
            barrier: true,
            include_plain_distance: false,
            loss: LossConfig::default(),
            cocob_alpha: DEFAULT_ALPHA,
            reset_optimizer: true,
            eval_subsample: 2000,
            keep_hypotheses: false,
            seed: 0,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.inner_steps == 0 {
            return Err(Error::InvalidArgument("inner steps must be at least 1".into()));
        }
        if !(self.barrier_t > 0.0 && self.barrier_t.is_finite()) {
            return Err(Error::InvalidArgument("barrier t must be positive".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidArgument("radius must be positive".into()));
        }
        Ok(())
    }

    /// The gradient baseline: one step per example, no barrier.
    pub fn ogd(&self) -> Self {
        OnlineConfig { inner_steps: 1, barrier: false, include_plain_distance: false, ..*self }
    }

    /// Largest step the softened constraint is expected to allow.
    pub fn step_bound(&self) -> f64 {
        self.radius + 10.0 / self.barrier_t
    }
}

/// Runs the inner loop from `w_prev` on `f(w) + B(|w - w_prev| - r)`, where
/// `loss_grad` writes the gradient of `f` and returns its value.
pub fn constrained_descent<F>(w_prev: &[f64], mut loss_grad: F, state: &mut CocobState, cfg: &OnlineConfig) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut grad = vec![0.0; w_prev.len()];
    for _ in 0..cfg.inner_steps {
        loss_grad(&state.w, &mut grad);
        if cfg.barrier || cfg.include_plain_distance {
            let d = euclidean(&state.w, w_prev);
            if d > 0.0 {
                let mut coef = 0.0;
                if cfg.barrier {
                    coef += log_barrier_grad(d - cfg.radius, cfg.barrier_t);
                }
                if cfg.include_plain_distance {
                    coef += 1.0;
                }
                let s = coef / d;
                for ((g, w), p) in grad.iter_mut().zip(&state.w).zip(w_prev) {
                    *g += s * (w - p);
                }
            }
        }
        state.step_unchecked(&grad);
    }
    state.w.clone()
}

/// One update on example `(x, y)` starting from `w_prev` with a fresh optimiser.
pub fn online_step(spec: &ModelSpec, w_prev: &ParamVector, x: &[f64], y: usize, cfg: &OnlineConfig) -> Result<ParamVector> {
    cfg.validate()?;
    check_dim(spec.param_count(), w_prev.dim())?;
    check_dim(spec.input_dim, x.len())?;
    let mut state = CocobState::new(w_prev.as_slice(), cfg.cocob_alpha)?;
    let view = ArrayView2::from_shape((1, x.len()), x).expect("row");
    let w = constrained_descent(
        w_prev.as_slice(),
        |w, g| batch_value_grad(spec, w, view, &[y], &cfg.loss, g),
        &mut state,
        cfg,
    );
    ParamVector::new(w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// Surrogate loss of `h_{i-1}` on `z_i`.
    pub surrogate: f64,
    /// 0/1 loss of `h_{i-1}` on `z_i`.
    pub zero_one: f64,
    pub post_surrogate: f64,
    pub post_zero_one: f64,
    /// `|w_i - w_{i-1}|`.
    pub distance: f64,
    /// Held-out 0/1 risk of `h_i`.
    pub eval_risk: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineTrace {
    pub spec: ModelSpec,
    pub initial: ParamVector,
    pub final_params: ParamVector,
    /// `w_1..w_m` when kept.
    pub hypotheses: Vec<ParamVector>,
    pub steps: Vec<StepRecord>,
    pub path_length: f64,
    /// Mean prediction 0/1 loss on the stream.
    pub cumulative_train: f64,
    /// Mean held-out 0/1 risk of the successive hypotheses.
    pub cumulative_eval: f64,
}

impl OnlineTrace {
    pub fn distances(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.distance).collect()
    }

    pub fn max_step(&self) -> f64 {
        self.steps.iter().map(|s| s.distance).fold(0.0, f64::max)
    }

    pub fn final_hypothesis(&self) -> Hypothesis {
        Hypothesis { spec: self.spec, params: self.final_params.clone() }
    }

    /// Tab-separated trace, one row per step.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "step\tsurrogate\tzero_one\tpost_surrogate\tpost_zero_one\tdistance\tcum_train\teval_risk\tcum_eval"
        )?;
        let (mut ct, mut ce) = (0.0, 0.0);
        for (i, s) in self.steps.iter().enumerate() {
            ct += s.zero_one;
            ce += s.eval_risk;
            let n = (i + 1) as f64;
            writeln!(
                out,
                "{}\t{:?}\t{}\t{:?}\t{}\t{:?}\t{:?}\t{:?}\t{:?}",
                i + 1,
                s.surrogate,
                s.zero_one,
                s.post_surrogate,
                s.post_zero_one,
                s.distance,
                ct / n,
                s.eval_risk,
                ce / n
            )?;
        }
        Ok(())
    }
}

/// Sequential pass over `stream`; `eval` estimates the population risk.
pub fn online_train(stream: &Dataset, eval: &Dataset, spec: &ModelSpec, cfg: &OnlineConfig) -> Result<OnlineTrace> {
    cfg.validate()?;
    spec.validate()?;
    if stream.is_empty() || eval.is_empty() {
        return Err(Error::InvalidArgument("stream and evaluation set must be non-empty".into()));
    }
    check_dim(spec.input_dim, stream.dim())?;
    check_dim(spec.input_dim, eval.dim())?;
    let initial = init_weights(spec, cfg.seed)?;
    let sub_idx: Vec<usize> = if eval.len() > cfg.eval_subsample {
        let mut p = rng::permutation(&mut rng::stream(cfg.seed, rng::STREAM_EVAL), eval.len());
        p.truncate(cfg.eval_subsample);
        p.sort_unstable();
        p
    } else {
        (0..eval.len()).collect()
    };
    let eval_sub = eval.subset(&sub_idx);
    let sub_risk = |w: &[f64]| {
        let view = ArrayView2::from_shape((eval_sub.len(), eval_sub.dim()), eval_sub.features.as_slice().unwrap())
            .expect("rows");
        batch_losses(spec, w, view, &eval_sub.labels, &cfg.loss).1
    };

    let mut w_prev = initial.values.clone();
    let mut state = CocobState::new(&w_prev, cfg.cocob_alpha)?;
    let mut steps = Vec::with_capacity(stream.len());
    let mut hypotheses = Vec::new();
    let mut path = 0.0;
    let m = stream.len();
    for i in 0..m {
        let x = stream.row(i);
        let y = stream.labels[i];
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row");
        let (surrogate, zero_one) = batch_losses(spec, &w_prev, view, &[y], &cfg.loss);
        if cfg.reset_optimizer {
            state = CocobState::new(&w_prev, cfg.cocob_alpha)?;
        }
        let w = constrained_descent(
            &w_prev,
            |w, g| batch_value_grad(spec, w, view, &[y], &cfg.loss, g),
            &mut state,
            cfg,
        );
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("online iterate"));
        }
        let (post_surrogate, post_zero_one) = batch_losses(spec, &w, view, &[y], &cfg.loss);
        let distance = euclidean(&w, &w_prev);
        path += distance;
        let eval_risk = if i + 1 == m {
            risks(&Hypothesis { spec: *spec, params: ParamVector { values: w.clone() } }, eval, &cfg.loss)?.1
        } else {
            sub_risk(&w)
        };
        steps.push(StepRecord { surrogate, zero_one, post_surrogate, post_zero_one, distance, eval_risk });
        if cfg.keep_hypotheses {
            hypotheses.push(ParamVector { values: w.clone() });
        }
        w_prev = w;
    }
    let cumulative_train = steps.iter().map(|s| s.zero_one).sum::<f64>() / m as f64;
    let cumulative_eval = steps.iter().map(|s| s.eval_risk).sum::<f64>() / m as f64;
    Ok(OnlineTrace {
        spec: *spec,
        initial,
        final_params: ParamVector { values: w_prev },
        hypotheses,
        steps,
        path_length: path,
        cumulative_train,
        cumulative_eval,
    })
}

/// Online gradient baseline: [`online_train`] with one step and no barrier.
pub fn ogd_train(stream: &Dataset, eval: &Dataset, spec: &ModelSpec, cfg: &OnlineConfig) -> Result<OnlineTrace> {
    online_train(stream, eval, spec, &cfg.ogd())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::tests::separable;

    #[test]
    fn barrier_values() {
        assert_eq!(log_barrier(-1.0, 1.0), 0.0);
        let t = 100.0;
        let j = -1.0 / (t * t);
        let expected = 2.0 / 100.0 * 100f64.ln();
        assert!((log_barrier(j, t) - expected).abs() < 1e-15);
        assert!((log_barrier(0.0, t) - 0.10210340371976183).abs() < 1e-15);
    }

    #[test]
    fn barrier_junction_smooth() {
        for t in [1.0, 10.0, 100.0] {
            let j = -1.0 / (t * t);
            let left = -(-j as f64).ln() / t;
            let right = t * j - (1.0 / (t * t)).ln() / t + 1.0 / t;
            assert!((left - right).abs() <= 1e-12);
            assert!((-1.0 / (t * j) - t).abs() <= 1e-12);
        }
    }

    #[test]
    fn barrier_convex_and_monotone() {
        let t = 10.0;
        let xs: Vec<f64> = (0..400).map(|i| -3.0 + i as f64 * 0.01).collect();
        for w in xs.windows(3) {
            let (a, b, c) = (log_barrier(w[0], t), log_barrier(w[1], t), log_barrier(w[2], t));
            assert!(b <= c + 1e-15);
            assert!(b <= 0.5 * (a + c) + 1e-12);
        }
    }

    #[test]
    fn stationary_example_does_not_move() {
        let spec = ModelSpec::linear(2, 2);
        let w = ParamVector::new(vec![5.0, 0.0, -5.0, 0.0, 0.0, 0.0]).unwrap();
        let out = online_step(&spec, &w, &[0.5, 0.1], 0, &OnlineConfig::default()).unwrap();
        assert!(euclidean(&out.values, &w.values) <= 1e-6);
        let one = OnlineConfig { inner_steps: 1, ..OnlineConfig::default() };
        assert_eq!(online_step(&spec, &w, &[0.5, 0.1], 0, &one).unwrap(), w);
        assert!(OnlineConfig { inner_steps: 0, ..one }.validate().is_err());
    }

    #[test]
    fn adversarial_slope_respects_radius() {
        // f(w) = -10 w in one dimension; the unconstrained minimiser runs off.
        let t = 100.0;
        let cfg = OnlineConfig { inner_steps: 20_000, cocob_alpha: 100.0, ..OnlineConfig::default() };
        let mut state = CocobState::new(&[0.0], cfg.cocob_alpha).unwrap();
        let mut w = 0.0;
        for _ in 0..cfg.inner_steps {
            w = constrained_descent(
                &[0.0],
                |_, g| {
                    g[0] = -10.0;
                    0.0
                },
                &mut state,
                &OnlineConfig { inner_steps: 1, ..cfg },
            )[0];
        }
        // The returned step, not every transient iterate, obeys the bound.
        assert!(w.abs() <= 1.0 + 10.0 / t, "final {w}");
        // Grid search of -10 w + B(|w| - 1).
        let grid_best = (0..200_001)
            .map(|i| i as f64 * 1e-5)
            .min_by(|a, b| {
                let fa = -10.0 * a + log_barrier(a - 1.0, t);
                let fb = -10.0 * b + log_barrier(b - 1.0, t);
                fa.total_cmp(&fb)
            })
            .unwrap();
        assert!((grid_best - 0.999).abs() < 1e-4);
        assert!((w - grid_best).abs() < 0.05, "final {w} vs grid {grid_best}");
    }

    fn halves(seed: u64) -> (Dataset, Dataset) {
        let d = separable(120, seed);
        (d.prefix(60), d.subset(&(60..120).collect::<Vec<_>>()))
    }

    #[test]
    fn path_length_bookkeeping() {
        let (s, e) = halves(1);
        let spec = ModelSpec::linear(3, 2);
        let cfg = OnlineConfig { keep_hypotheses: true, ..OnlineConfig::default() };
        let tr = online_train(&s, &e, &spec, &cfg).unwrap();
        let mut prev = tr.initial.clone();
        let mut sum = 0.0;
        for h in &tr.hypotheses {
            sum += euclidean(&h.values, &prev.values);
            prev = h.clone();
        }
        assert!((sum - tr.path_length).abs() <= 1e-12);
        assert_eq!(tr.hypotheses.len(), 60);
        assert!(tr.max_step() <= cfg.step_bound() + 1e-6);
    }

    #[test]
    fn ogd_is_degenerate_online() {
        let (s, e) = halves(2);
        let spec = ModelSpec::mlp(3, 2, 4, 1);
        let cfg = OnlineConfig::default();
        let a = ogd_train(&s, &e, &spec, &cfg).unwrap();
        let b = online_train(&s, &e, &spec, &OnlineConfig { inner_steps: 1, barrier: false, ..cfg }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn repeated_example_loss_settles() {
        let spec = ModelSpec::linear(2, 2);
        let x = ndarray::Array2::from_shape_vec((50, 2), [0.6, -0.3].repeat(50)).unwrap();
        let stream = Dataset::new(x, vec![1; 50], 2, "const").unwrap();
        let cfg = OnlineConfig { cocob_alpha: 100.0, reset_optimizer: false, ..OnlineConfig::default() };
        let tr = online_train(&stream, &stream, &spec, &cfg).unwrap();
        let first_ok = tr.steps.iter().position(|s| s.zero_one == 0.0).expect("learns the example");
        for w in tr.steps[first_ok..].windows(2) {
            assert!(w[1].surrogate <= w[0].surrogate + 1e-12);
        }
    }

    #[test]
    fn trace_export() {
        let (s, e) = halves(3);
        let tr = online_train(&s, &e, &ModelSpec::linear(3, 2), &OnlineConfig::default()).unwrap();
        let mut buf = Vec::new();
        tr.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 61);
        assert!(text.starts_with("step\tsurrogate"));
    }
}
