//! Multi-class margin loss, 0/1 loss and hand-written backpropagation.

use ndarray::{linalg::general_mat_mul, Array2, ArrayView2, ArrayViewMut2, Axis};

use crate::error::{check_dim, Error, Result};
use crate::model::{self, forward_pass, ForwardPass, Hypothesis, ModelKind, ModelSpec, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Normalization {
    /// Divide the hinge sum by `|Y|`.
    #[default]
    OverClasses,
    /// Divide the hinge sum by `|Y| - 1`.
    OverClassesMinusOne,
}

impl Normalization {
    pub fn divisor(self, classes: usize) -> f64 {
        match self {
            Normalization::OverClasses => classes as f64,
            Normalization::OverClassesMinusOne => (classes - 1) as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub eta: f64,
    pub normalization: Normalization,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { eta: 1.0, normalization: Normalization::OverClasses }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta > 0.0 && self.eta.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("eta must be positive, got {}", self.eta)))
        }
    }
}

fn check_label(y: usize, classes: usize) -> Result<()> {
    if y < classes {
        Ok(())
    } else {
        Err(Error::InvalidLabel { label: y, classes })
    }
}

/// `(1/N) sum_{y' != y} max(0, 1 - eta (s[y] - s[y']))`.
pub fn margin_loss(scores: &[f64], y: usize, cfg: &LossConfig) -> Result<f64> {
    check_label(y, scores.len())?;
    let sy = scores[y];
    let sum: f64 = scores
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, &s)| (1.0 - cfg.eta * (sy - s)).max(0.0))
        .sum();
    Ok(sum / cfg.normalization.divisor(scores.len()))
}

/// 1 when the true class does not strictly beat every other class.
pub fn zero_one_loss(scores: &[f64], y: usize) -> Result<f64> {
    check_label(y, scores.len())?;
    Ok(zero_one_row(scores, y))
}

fn zero_one_row(scores: &[f64], y: usize) -> f64 {
    let best_other = scores
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if scores[y] - best_other <= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Summed margin loss over the rows of `scores` and its gradient with
/// respect to the scores. Hinges sitting exactly at zero contribute nothing.
pub(crate) fn score_grad(scores: &Array2<f64>, y: &[usize], cfg: &LossConfig) -> (f64, Array2<f64>) {
    let classes = scores.ncols();
    let inv = 1.0 / cfg.normalization.divisor(classes);
    let mut ds = Array2::zeros(scores.raw_dim());
    let mut total = 0.0;
    for ((row, mut drow), &yi) in scores.rows().into_iter().zip(ds.rows_mut()).zip(y) {
        let sy = row[yi];
        let mut sum = 0.0;
        for c in 0..classes {
            if c == yi {
                continue;
            }
            let arg = 1.0 - cfg.eta * (sy - row[c]);
            if arg > 0.0 {
                sum += arg;
                drow[c] += cfg.eta * inv;
                drow[yi] -= cfg.eta * inv;
            }
        }
        total += sum * inv;
    }
    (total, ds)
}

/// Backpropagates `ds` (gradient w.r.t. the scores) into `grad`, overwriting it.
pub(crate) fn backward(spec: &ModelSpec, params: &[f64], fp: &ForwardPass, ds: Array2<f64>, grad: &mut [f64]) {
    let layers = spec.layers();
    let mut dz = ds;
    for (l, layer) in layers.iter().enumerate().rev() {
        let a = &fp.acts[l];
        {
            let mut gw = ArrayViewMut2::from_shape(
                (layer.fan_out, layer.fan_in),
                &mut grad[layer.weight_range()],
            )
            .expect("layer shape");
            general_mat_mul(1.0, &dz.t(), a, 0.0, &mut gw);
        }
        for (g, s) in grad[layer.bias_range()].iter_mut().zip(dz.sum_axis(Axis(0))) {
            *g = s;
        }
        if l > 0 {
            let mut da = dz.dot(&model::weights(layer, params));
            da.zip_mut_with(a, |d, &act| *d *= model::leaky_slope(act));
            dz = da;
        }
    }
}

/// Mean margin loss over a batch, writing the mean gradient into `grad`.
///
/// The batch must be non-empty; dimensions are trusted.
pub fn batch_value_grad(
    spec: &ModelSpec,
    params: &[f64],
    x: ArrayView2<f64>,
    y: &[usize],
    cfg: &LossConfig,
    grad: &mut [f64],
) -> f64 {
    let n = x.nrows() as f64;
    let fp = forward_pass(spec, params, x);
    let (sum, mut ds) = score_grad(&fp.scores, y, cfg);
    ds /= n;
    backward(spec, params, &fp, ds, grad);
    sum / n
}

/// Mean margin loss and mean 0/1 loss over a batch.
pub fn batch_losses(
    spec: &ModelSpec,
    params: &[f64],
    x: ArrayView2<f64>,
    y: &[usize],
    cfg: &LossConfig,
) -> (f64, f64) {
    if x.nrows() == 0 {
        return (0.0, 0.0);
    }
    let scores = forward_pass(spec, params, x).scores;
    let (sum, _) = score_grad(&scores, y, cfg);
    let errors: f64 = scores
        .rows()
        .into_iter()
        .zip(y)
        .map(|(row, &yi)| zero_one_row(row.as_slice().expect("contiguous"), yi))
        .sum();
    let n = x.nrows() as f64;
    (sum / n, errors / n)
}

/// Per-example margin losses.
pub fn per_example_losses(
    spec: &ModelSpec,
    params: &[f64],
    x: ArrayView2<f64>,
    y: &[usize],
    cfg: &LossConfig,
) -> Vec<f64> {
    let scores = forward_pass(spec, params, x).scores;
    scores
        .rows()
        .into_iter()
        .zip(y)
        .map(|(row, &yi)| margin_loss(row.as_slice().expect("contiguous"), yi, cfg).expect("label"))
        .collect()
}

/// Margin loss of `h` at `(x, y)` and its gradient in parameter space.
pub fn loss_value_grad(h: &Hypothesis, x: &[f64], y: usize, cfg: &LossConfig) -> Result<(f64, ParamVector)> {
    check_dim(h.spec.input_dim, x.len())?;
    check_dim(h.spec.param_count(), h.params.dim())?;
    check_label(y, h.spec.num_classes)?;
    let view = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
    let mut grad = vec![0.0; h.params.dim()];
    let value = batch_value_grad(&h.spec, h.params.as_slice(), view, &[y], cfg, &mut grad);
    Ok((value, ParamVector { values: grad }))
}

/// Smallest distance from a hinge argument or a hidden pre-activation to its
/// kink at `(x, y)`. Gradients are classical derivatives when this is positive.
pub fn kink_distance(h: &Hypothesis, x: &[f64], y: usize, cfg: &LossConfig) -> Result<f64> {
    check_dim(h.spec.input_dim, x.len())?;
    check_dim(h.spec.param_count(), h.params.dim())?;
    check_label(y, h.spec.num_classes)?;
    let view = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
    let fp = forward_pass(&h.spec, h.params.as_slice(), view);
    let mut d = f64::INFINITY;
    for act in &fp.acts[1..] {
        for &a in act.iter() {
            // pre-activation magnitude from the leaky output
            let pre = if a > 0.0 { a } else { -a / model::LEAK };
            d = d.min(pre);
        }
    }
    let s = fp.scores.row(0);
    for (c, &sc) in s.iter().enumerate() {
        if c != y {
            d = d.min((1.0 - cfg.eta * (s[y] - sc)).abs());
        }
    }
    Ok(d)
}

/// Where a Lipschitz constant came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LipschitzSource {
    LemmaProved,
    UserSupplied,
    EmpiricalEstimate,
}

impl LipschitzSource {
    pub fn label(self) -> &'static str {
        match self {
            LipschitzSource::LemmaProved => "lemma-proved",
            LipschitzSource::UserSupplied => "user-supplied",
            LipschitzSource::EmpiricalEstimate => "empirical estimate (heuristic, not a proof)",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lipschitz {
    pub value: f64,
    pub source: LipschitzSource,
}

impl Lipschitz {
    pub fn user(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(Lipschitz { value, source: LipschitzSource::UserSupplied })
        } else {
            Err(Error::InvalidArgument(format!("Lipschitz constant must be positive, got {value}")))
        }
    }
}

pub enum LipschitzMode<'a> {
    /// Proved constant `2 eta` for linear models on the unit ball.
    LemmaLinear,
    /// The smaller `sqrt(2) eta` quoted for linear models without proof.
    /// Reported as user-supplied.
    UnprovedLinear,
    /// Largest observed slope `|l(w,z) - l(w',z)| / |w - w'|` over the given
    /// hypothesis pairs and examples. A lower estimate of the true constant.
    Empirical {
        pairs: &'a [(ParamVector, ParamVector)],
        x: ArrayView2<'a, f64>,
        y: &'a [usize],
    },
}

pub fn lipschitz_constant(spec: &ModelSpec, cfg: &LossConfig, mode: LipschitzMode) -> Result<Lipschitz> {
    cfg.validate()?;
    match mode {
        LipschitzMode::LemmaLinear | LipschitzMode::UnprovedLinear if spec.kind != ModelKind::Linear => {
            Err(Error::InvalidArgument(
                "the lemma constant only covers linear models; supply L or use an empirical estimate".into(),
            ))
        }
        LipschitzMode::LemmaLinear => Ok(Lipschitz {
            value: 2.0 * cfg.eta,
            source: LipschitzSource::LemmaProved,
        }),
        LipschitzMode::UnprovedLinear => Ok(Lipschitz {
            value: std::f64::consts::SQRT_2 * cfg.eta,
            source: LipschitzSource::UserSupplied,
        }),
        LipschitzMode::Empirical { pairs, x, y } => {
            check_dim(spec.input_dim, x.ncols())?;
            check_dim(x.nrows(), y.len())?;
            let mut best: Option<f64> = None;
            for (a, b) in pairs {
                let dist = model::param_distance(a, b)?;
                if dist == 0.0 {
                    continue;
                }
                check_dim(spec.param_count(), a.dim())?;
                let la = per_example_losses(spec, a.as_slice(), x, y, cfg);
                let lb = per_example_losses(spec, b.as_slice(), x, y, cfg);
                for (p, q) in la.iter().zip(&lb) {
                    let slope = (p - q).abs() / dist;
                    best = Some(best.map_or(slope, |v: f64| v.max(slope)));
                }
            }
            match best {
                Some(v) if v > 0.0 => Ok(Lipschitz { value: v, source: LipschitzSource::EmpiricalEstimate }),
                _ => Err(Error::InvalidArgument(
                    "no hypothesis pair with distinct losses to estimate from".into(),
                )),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_weights};
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(eta: f64) -> LossConfig {
        LossConfig { eta, normalization: Normalization::OverClasses }
    }

    #[test]
    fn margin_examples() {
        assert_eq!(margin_loss(&[2.0, 0.0], 0, &cfg(1.0)).unwrap(), 0.0);
        assert_eq!(margin_loss(&[0.0, 0.0], 0, &cfg(1.0)).unwrap(), 0.5);
        assert_eq!(margin_loss(&[0.0, 1.0, 1.0], 0, &cfg(2.0)).unwrap(), 2.0);
        assert!(matches!(margin_loss(&[0.0, 1.0], 2, &cfg(1.0)), Err(Error::InvalidLabel { .. })));
        let minus_one = LossConfig { eta: 1.0, normalization: Normalization::OverClassesMinusOne };
        assert_eq!(margin_loss(&[0.0, 0.0, 0.0], 0, &minus_one).unwrap(), 1.0);
    }

    #[test]
    fn zero_one_examples() {
        assert_eq!(zero_one_loss(&[2.0, 0.0], 0).unwrap(), 0.0);
        assert_eq!(zero_one_loss(&[1.0, 1.0], 0).unwrap(), 1.0);
        assert_eq!(zero_one_loss(&[0.0, 3.0, 1.0], 2).unwrap(), 1.0);
    }

    #[test]
    fn linear_hand_gradient() {
        let h = Hypothesis::new(ModelSpec::linear(1, 2), ParamVector::zeros(4)).unwrap();
        let (v, g) = loss_value_grad(&h, &[1.0], 0, &cfg(1.0)).unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(g.values, vec![-0.5, 0.5, -0.5, 0.5]);
    }

    #[test]
    fn met_margin_has_zero_gradient() {
        let h = Hypothesis::new(
            ModelSpec::linear(2, 2),
            ParamVector::new(vec![5.0, 0.0, -5.0, 0.0, 0.0, 0.0]).unwrap(),
        )
        .unwrap();
        let (v, g) = loss_value_grad(&h, &[0.5, 0.1], 0, &cfg(1.0)).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn batch_gradient_is_mean_of_singles() {
        let spec = ModelSpec::mlp(3, 3, 4, 2);
        let h = Hypothesis::init(spec, 2).unwrap();
        let xs = [[0.1, -0.4, 0.3], [0.5, 0.2, -0.1]];
        let ys = [2usize, 0];
        let flat: Vec<f64> = xs.iter().flatten().copied().collect();
        let view = ArrayView2::from_shape((2, 3), &flat).unwrap();
        let mut g = vec![0.0; spec.param_count()];
        let v = batch_value_grad(&spec, h.params.as_slice(), view, &ys, &cfg(1.0), &mut g);
        let (v0, g0) = loss_value_grad(&h, &xs[0], ys[0], &cfg(1.0)).unwrap();
        let (v1, g1) = loss_value_grad(&h, &xs[1], ys[1], &cfg(1.0)).unwrap();
        assert!((v - (v0 + v1) / 2.0).abs() < 1e-15);
        for i in 0..g.len() {
            assert!((g[i] - (g0.values[i] + g1.values[i]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn lemma_constants() {
        let lin = ModelSpec::linear(3, 2);
        let l = lipschitz_constant(&lin, &cfg(1.0), LipschitzMode::LemmaLinear).unwrap();
        assert_eq!((l.value, l.source), (2.0, LipschitzSource::LemmaProved));
        let l = lipschitz_constant(&lin, &cfg(0.5), LipschitzMode::LemmaLinear).unwrap();
        assert_eq!(l.value, 1.0);
        let l = lipschitz_constant(&lin, &cfg(1.0), LipschitzMode::UnprovedLinear).unwrap();
        assert_eq!(l.source, LipschitzSource::UserSupplied);
        let mlp = ModelSpec::mlp(3, 2, 4, 1);
        assert!(lipschitz_constant(&mlp, &cfg(1.0), LipschitzMode::LemmaLinear).is_err());
    }

    #[test]
    fn eta_scales_loss_linearly_below_margin() {
        // Scores far inside the active region: loss(eta) is affine in eta, and
        // the slope ratio over parameter pairs halves with eta.
        let spec = ModelSpec::linear(2, 2);
        let mut r = rng::stream(5, 0);
        let x = [0.3, -0.2];
        let a = ParamVector::new((0..6).map(|_| r.gen_range(-0.01..0.01)).collect()).unwrap();
        let b = ParamVector::new((0..6).map(|_| r.gen_range(-0.01..0.01)).collect()).unwrap();
        let slope = |eta: f64| {
            let ha = Hypothesis::new(spec, a.clone()).unwrap();
            let hb = Hypothesis::new(spec, b.clone()).unwrap();
            let la = margin_loss(&forward(&ha, &x).unwrap(), 0, &cfg(eta)).unwrap();
            let lb = margin_loss(&forward(&hb, &x).unwrap(), 0, &cfg(eta)).unwrap();
            (la - lb).abs()
        };
        assert!((slope(0.5) / slope(1.0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn empirical_skips_coincident_pairs() {
        let spec = ModelSpec::mlp(2, 2, 3, 1);
        let a = init_weights(&spec, 1).unwrap();
        let b = init_weights(&spec, 2).unwrap();
        let pairs = vec![(a.clone(), a.clone()), (a, b)];
        let x = ndarray::array![[0.2, 0.4], [-0.5, 0.1]];
        let est = lipschitz_constant(
            &spec,
            &cfg(1.0),
            LipschitzMode::Empirical { pairs: &pairs, x: x.view(), y: &[0, 1] },
        )
        .unwrap();
        assert!(est.value.is_finite() && est.value > 0.0);
        assert_eq!(est.source, LipschitzSource::EmpiricalEstimate);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn margin_is_midpoint_convex(
            a in prop::collection::vec(-3.0f64..3.0, 4),
            b in prop::collection::vec(-3.0f64..3.0, 4),
            y in 0usize..4,
            eta in 0.1f64..3.0,
        ) {
            let mid: Vec<f64> = a.iter().zip(&b).map(|(p, q)| 0.5 * (p + q)).collect();
            let c = cfg(eta);
            let lm = margin_loss(&mid, y, &c).unwrap();
            let la = margin_loss(&a, y, &c).unwrap();
            let lb = margin_loss(&b, y, &c).unwrap();
            prop_assert!(lm <= 0.5 * (la + lb) + 1e-12);
        }

        #[test]
        fn misclassified_implies_margin_loss(
            s in prop::collection::vec(-3.0f64..3.0, 2..6),
            y in 0usize..6,
            eta in 0.1f64..3.0,
        ) {
            let y = y % s.len();
            if zero_one_loss(&s, y).unwrap() == 1.0 {
                prop_assert!(margin_loss(&s, y, &cfg(eta)).unwrap() >= 1.0 / s.len() as f64 - 1e-15);
            }
        }
    }
}
