//! Mini-batch learners: data-dependent priors, the Wasserstein-regularised
//! posterior, and the ERM / weight-decay baselines.

use ndarray::ArrayView2;

use crate::cocob::{CocobState, DEFAULT_ALPHA};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::losses::{batch_losses, batch_value_grad, LossConfig};
use crate::model::{euclidean, Hypothesis, ModelSpec, ParamVector};
use crate::rng;

/// Disjoint folds `S_1..S_K` of `0..m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub sets: Vec<Vec<usize>>,
    pub m: usize,
}

impl Partition {
    pub fn k(&self) -> usize {
        self.sets.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    /// Fold id of every index.
    pub fn fold_of(&self) -> Vec<usize> {
        let mut fold = vec![usize::MAX; self.m];
        for (k, set) in self.sets.iter().enumerate() {
            for &i in set {
                fold[i] = k;
            }
        }
        fold
    }
}

/// Uniformly random balanced partition; the first `m mod K` folds hold one
/// extra index. Each fold is sorted.
pub fn make_partition(m: usize, k: usize, seed: u64) -> Result<Partition> {
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!("need 1 <= K <= m, got K={k}, m={m}")));
    }
    let perm = rng::permutation(&mut rng::stream(seed, rng::STREAM_PARTITION), m);
    let (base, extra) = (m / k, m % k);
    let mut sets = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut set = perm[start..start + len].to_vec();
        set.sort_unstable();
        sets.push(set);
        start += len;
    }
    Ok(Partition { sets, m })
}

/// `K = max(1, round(alpha_K sqrt(m)))`, capped at `m`.
pub fn k_from_rule(alpha_k: f64, m: usize) -> usize {
    ((alpha_k * (m as f64).sqrt()).round() as usize).clamp(1, m.max(1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Epsilon {
    InvM,
    InvSqrtM,
    Value(f64),
}

impl Epsilon {
    pub fn resolve(self, m: usize) -> f64 {
        match self {
            Epsilon::InvM => 1.0 / m as f64,
            Epsilon::InvSqrtM => 1.0 / (m as f64).sqrt(),
            Epsilon::Value(v) => v,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "inv_m" => Ok(Epsilon::InvM),
            "inv_sqrt_m" => Ok(Epsilon::InvSqrtM),
            _ => s
                .parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0 && v.is_finite())
                .map(Epsilon::Value)
                .ok_or_else(|| Error::InvalidArgument(format!("bad epsilon `{s}`"))),
        }
    }
}

impl std::fmt::Display for Epsilon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Epsilon::InvM => write!(f, "inv_m"),
            Epsilon::InvSqrtM => write!(f, "inv_sqrt_m"),
            Epsilon::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchConfig {
    pub epsilon: Epsilon,
    pub k_alpha: f64,
    pub batch_size: usize,
    pub min_iterations: usize,
    pub loss: LossConfig,
    pub cocob_alpha: f64,
    /// Return the last iterate instead of the best one by training objective.
    pub final_iterate: bool,
    pub seed: u64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            epsilon: Epsilon::InvSqrtM,
            k_alpha: 0.2,
            batch_size: 100,
            min_iterations: 20_000,
            loss: LossConfig::default(),
            cocob_alpha: DEFAULT_ALPHA,
            final_iterate: false,
            seed: 0,
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.k_alpha >= 0.0 && self.k_alpha.is_finite()) {
            return Err(Error::InvalidArgument("k_alpha must be non-negative".into()));
        }
        Ok(())
    }

    /// Epochs needed for at least `min_iterations` mini-batch steps.
    pub fn epochs(&self, m: usize) -> usize {
        let per_epoch = m.div_ceil(self.batch_size).max(1);
        self.min_iterations.div_ceil(per_epoch).max(1)
    }
}

/// Objective values recorded during one training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjectiveTrace {
    /// Mini-batch objective at every step, before the update.
    pub minibatch: Vec<f64>,
    /// Full training objective at initialisation and after every epoch.
    pub epoch_full: Vec<f64>,
    /// Running minimum of `epoch_full`.
    pub best: Vec<f64>,
    pub best_epoch: usize,
}

impl ObjectiveTrace {
    fn record_epoch(&mut self, value: f64) -> bool {
        let improved = self.best.last().map_or(true, |&b| value < b);
        let best = if improved { value } else { *self.best.last().unwrap() };
        if improved {
            self.best_epoch = self.epoch_full.len();
        }
        self.epoch_full.push(value);
        self.best.push(best);
        improved
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub hypothesis: Hypothesis,
    pub trace: ObjectiveTrace,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorRecord {
    /// Index of the fold this prior never saw.
    pub excluded_fold: usize,
    pub steps: usize,
    /// Steps skipped because the mini-batch lay entirely inside the fold.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorSet {
    pub priors: Vec<Hypothesis>,
    pub partition: Partition,
    pub records: Vec<PriorRecord>,
    pub traces: Vec<ObjectiveTrace>,
}

enum Penalty<'a> {
    None,
    /// `eps sum_i c_i |w - w_i|`.
    Priors { eps: f64, centres: &'a [&'a [f64]], coef: Vec<f64> },
    /// `eps |w|^2`.
    L2 { eps: f64 },
}

impl Penalty<'_> {
    fn value(&self, w: &[f64]) -> f64 {
        match self {
            Penalty::None => 0.0,
            Penalty::Priors { eps, centres, coef } => {
                eps * centres.iter().zip(coef).map(|(c, k)| k * euclidean(w, c)).sum::<f64>()
            }
            Penalty::L2 { eps } => eps * w.iter().map(|v| v * v).sum::<f64>(),
        }
    }

    fn add_grad(&self, w: &[f64], grad: &mut [f64]) {
        match self {
            Penalty::None => {}
            Penalty::Priors { eps, centres, coef } => {
                for (c, k) in centres.iter().zip(coef) {
                    let d = euclidean(w, c);
                    // Zero subgradient where w coincides with the centre.
                    if d > 0.0 {
                        let s = eps * k / d;
                        for ((g, wi), ci) in grad.iter_mut().zip(w).zip(c.iter()) {
                            *g += s * (wi - ci);
                        }
                    }
                }
            }
            Penalty::L2 { eps } => {
                for (g, wi) in grad.iter_mut().zip(w) {
                    *g += 2.0 * eps * wi;
                }
            }
        }
    }
}

const EVAL_CHUNK: usize = 1024;

/// Mean margin loss of `params` over rows `idx` (all rows when `None`).
fn mean_loss(spec: &ModelSpec, params: &[f64], data: &Dataset, idx: Option<&[usize]>, cfg: &LossConfig) -> f64 {
    let all: Vec<usize>;
    let idx = match idx {
        Some(i) => i,
        None => {
            all = (0..data.len()).collect();
            &all
        }
    };
    if idx.is_empty() {
        return 0.0;
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        data.gather(chunk, &mut x, &mut y);
        let view = ArrayView2::from_shape((chunk.len(), data.dim()), &x).expect("rows");
        total += batch_losses(spec, params, view, &y, cfg).0 * chunk.len() as f64;
    }
    total / idx.len() as f64
}

/// Mean margin and 0/1 losses of `h` on `data`.
pub fn risks(h: &Hypothesis, data: &Dataset, cfg: &LossConfig) -> Result<(f64, f64)> {
    check_dim(h.spec.input_dim, data.dim())?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    let (mut surrogate, mut errors) = (0.0, 0.0);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        data.gather(chunk, &mut x, &mut y);
        let view = ArrayView2::from_shape((chunk.len(), data.dim()), &x).expect("rows");
        let (s, e) = batch_losses(&h.spec, h.params.as_slice(), view, &y, cfg);
        surrogate += s * chunk.len() as f64;
        errors += e * chunk.len() as f64;
    }
    let n = data.len().max(1) as f64;
    Ok((surrogate / n, errors / n))
}

fn check_data(data: &Dataset, spec: &ModelSpec) -> Result<()> {
    spec.validate()?;
    check_dim(spec.input_dim, data.dim())?;
    if data.num_classes > spec.num_classes {
        return Err(Error::InvalidArgument(format!(
            "data has {} classes, model only {}",
            data.num_classes, spec.num_classes
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    Ok(())
}

/// Shared mini-batch COCOB loop over the whole training set.
fn train_loop(data: &Dataset, spec: &ModelSpec, cfg: &BatchConfig, penalty: &Penalty) -> Result<TrainOutcome> {
    check_data(data, spec)?;
    cfg.validate()?;
    let w0 = crate::model::init_weights(spec, cfg.seed)?;
    let mut state = CocobState::new(w0.as_slice(), cfg.cocob_alpha)?;
    let mut rng = rng::stream(cfg.seed, rng::STREAM_TRAIN);
    let m = data.len();
    let mut grad = vec![0.0; spec.param_count()];
    let (mut x, mut y) = (Vec::new(), Vec::new());
    let mut trace = ObjectiveTrace::default();
    let objective = |w: &[f64]| mean_loss(spec, w, data, None, &cfg.loss) + penalty.value(w);
    trace.record_epoch(objective(&state.w));
    let mut best_w = state.w.clone();
    let mut iterations = 0;
    for _ in 0..cfg.epochs(m) {
        let perm = rng::permutation(&mut rng, m);
        for batch in perm.chunks(cfg.batch_size) {
            data.gather(batch, &mut x, &mut y);
            let view = ArrayView2::from_shape((batch.len(), data.dim()), &x).expect("rows");
            let loss = batch_value_grad(spec, &state.w, view, &y, &cfg.loss, &mut grad);
            trace.minibatch.push(loss + penalty.value(&state.w));
            penalty.add_grad(&state.w, &mut grad);
            state.step_unchecked(&grad);
            iterations += 1;
        }
        if state.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training iterate"));
        }
        if trace.record_epoch(objective(&state.w)) {
            best_w.clone_from(&state.w);
        }
    }
    let w = if cfg.final_iterate { state.w } else { best_w };
    Ok(TrainOutcome {
        hypothesis: Hypothesis { spec: *spec, params: ParamVector { values: w } },
        trace,
        iterations,
    })
}

/// Priors Learning: every mini-batch `U` updates prior `i` with the gradient
/// on `U \ S_i` only. Each prior keeps its own optimiser state and returns
/// its best iterate by risk on the data outside its fold.
pub fn train_priors(data: &Dataset, partition: &Partition, spec: &ModelSpec, cfg: &BatchConfig) -> Result<PriorSet> {
    check_data(data, spec)?;
    cfg.validate()?;
    check_dim(data.len(), partition.m)?;
    let k = partition.k();
    let fold = partition.fold_of();
    let w0 = crate::model::init_weights(spec, cfg.seed)?;
    let mut states: Vec<CocobState> = (0..k)
        .map(|_| CocobState::new(w0.as_slice(), cfg.cocob_alpha))
        .collect::<Result<_>>()?;
    let outside: Vec<Vec<usize>> = (0..k)
        .map(|i| (0..data.len()).filter(|&j| fold[j] != i).collect())
        .collect();
    let mut records: Vec<PriorRecord> =
        (0..k).map(|i| PriorRecord { excluded_fold: i, steps: 0, skipped: 0 }).collect();
    let mut traces = vec![ObjectiveTrace::default(); k];
    let mut best: Vec<Vec<f64>> = vec![w0.values.clone(); k];
    for i in 0..k {
        traces[i].record_epoch(mean_loss(spec, &w0.values, data, Some(&outside[i]), &cfg.loss));
    }
    let mut rng = rng::stream(cfg.seed, rng::STREAM_PRIORS);
    let mut grad = vec![0.0; spec.param_count()];
    let (mut x, mut y) = (Vec::new(), Vec::new());
    let mut sub = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs(data.len()) {
        let perm = rng::permutation(&mut rng, data.len());
        for batch in perm.chunks(cfg.batch_size) {
            for i in 0..k {
                sub.clear();
                sub.extend(batch.iter().copied().filter(|&j| fold[j] != i));
                if sub.is_empty() {
                    records[i].skipped += 1;
                    continue;
                }
                data.gather(&sub, &mut x, &mut y);
                let view = ArrayView2::from_shape((sub.len(), data.dim()), &x).expect("rows");
                let loss = batch_value_grad(spec, &states[i].w, view, &y, &cfg.loss, &mut grad);
                traces[i].minibatch.push(loss);
                states[i].step_unchecked(&grad);
                records[i].steps += 1;
            }
        }
        for i in 0..k {
            if states[i].w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("prior iterate"));
            }
            if records[i].steps == 0 {
                continue;
            }
            let obj = mean_loss(spec, &states[i].w, data, Some(&outside[i]), &cfg.loss);
            if traces[i].record_epoch(obj) {
                best[i].clone_from(&states[i].w);
            }
        }
    }
    let priors = states
        .into_iter()
        .zip(best)
        .map(|(s, b)| Hypothesis {
            spec: *spec,
            params: ParamVector { values: if cfg.final_iterate { s.w } else { b } },
        })
        .collect();
    Ok(PriorSet { priors, partition: partition.clone(), records, traces })
}

/// Posterior Learning: minimises `R_U(w) + eps sum_i (|S_i|/m) |w - w_i|`.
pub fn train_posterior(data: &Dataset, priors: &PriorSet, spec: &ModelSpec, cfg: &BatchConfig) -> Result<TrainOutcome> {
    let m = priors.partition.m;
    check_dim(data.len(), m)?;
    for p in &priors.priors {
        check_dim(spec.param_count(), p.params.dim())?;
    }
    let eps = cfg.epsilon.resolve(m);
    if eps == 0.0 {
        return train_loop(data, spec, cfg, &Penalty::None);
    }
    let centres: Vec<&[f64]> = priors.priors.iter().map(|p| p.params.as_slice()).collect();
    let coef: Vec<f64> = priors.partition.sets.iter().map(|s| s.len() as f64 / m as f64).collect();
    train_loop(data, spec, cfg, &Penalty::Priors { eps, centres: &centres, coef })
}

/// Plain empirical risk minimisation with the same loop.
pub fn erm_train(data: &Dataset, spec: &ModelSpec, cfg: &BatchConfig) -> Result<TrainOutcome> {
    train_loop(data, spec, cfg, &Penalty::None)
}

/// ERM with `weight_decay * |w|^2` added to every mini-batch objective.
pub fn l2_train(data: &Dataset, spec: &ModelSpec, cfg: &BatchConfig, weight_decay: f64) -> Result<TrainOutcome> {
    if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
        return Err(Error::InvalidArgument("weight decay must be non-negative".into()));
    }
    if weight_decay == 0.0 {
        return train_loop(data, spec, cfg, &Penalty::None);
    }
    train_loop(data, spec, cfg, &Penalty::L2 { eps: weight_decay })
}

/// Both phases of the batch algorithm with `K` from the configured rule.
pub fn train_batch(data: &Dataset, spec: &ModelSpec, cfg: &BatchConfig) -> Result<(PriorSet, TrainOutcome)> {
    let k = k_from_rule(cfg.k_alpha, data.len());
    let partition = make_partition(data.len(), k, cfg.seed)?;
    let priors = train_priors(data, &partition, spec, cfg)?;
    let posterior = train_posterior(data, &priors, spec, cfg)?;
    Ok((priors, posterior))
}

/// Penalty weights `|S_i|/m` sum to one, so with all priors at `w0` the
/// regulariser is exactly `eps |w - w0|`.
pub fn regulariser(w: &ParamVector, priors: &PriorSet, eps: f64) -> f64 {
    let m = priors.partition.m as f64;
    eps * priors
        .priors
        .iter()
        .zip(&priors.partition.sets)
        .map(|(p, s)| s.len() as f64 / m * euclidean(w.as_slice(), p.params.as_slice()))
        .sum::<f64>()
}
