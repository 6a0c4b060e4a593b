//! Numeric generalisation certificates.
//!
//! Every certificate is an itemised right-hand side: the Wasserstein
//! (distance to prior) contributions, the statistical contributions and,
//! for the heavy-tailed forms, the variance contributions. `total` is the
//! sum of the stored components. Under Dirac measures the Wasserstein terms
//! are parameter distances and prior expectations are point evaluations.

use std::fmt;

use ndarray::ArrayView2;

use crate::batch::PriorSet;
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::losses::{per_example_losses, Lipschitz, LipschitzSource, LossConfig};
use crate::model::{param_distance, Hypothesis};
use crate::online::OnlineTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Theorem {
    /// Batch bound for losses with bounded second moments only.
    BatchHeavy,
    /// Batch bound for non-negative losses.
    BatchNonNeg,
    /// Batch bound for losses in `[0, 1]`.
    BatchTight,
    /// Online bound on the cumulative gap, heavy-tailed losses.
    OnlineHeavy,
    /// Online bound on the averaged gap, non-negative losses.
    OnlineNonNeg,
    /// Finite hypothesis space, data-free prior.
    FiniteH,
}

impl Theorem {
    pub fn name(self) -> &'static str {
        match self {
            Theorem::BatchHeavy => "batch-heavy",
            Theorem::BatchNonNeg => "batch-nonneg",
            Theorem::BatchTight => "batch-tight",
            Theorem::OnlineHeavy => "online-heavy",
            Theorem::OnlineNonNeg => "online-nonneg",
            Theorem::FiniteH => "finite-h",
        }
    }

    /// The quantity the total bounds.
    pub fn bounds(self) -> &'static str {
        match self {
            Theorem::OnlineHeavy => "sum_i E[l(h_i,z_i)|F_(i-1)] - l(h_i,z_i) (cumulative, unnormalised)",
            Theorem::OnlineNonNeg => "(1/m) sum_i E[l(h_i,z_i)|F_(i-1)] - l(h_i,z_i)",
            _ => "E_rho[R_mu(h) - R_S(h)]",
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub name: String,
    pub formula: &'static str,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCertificate {
    pub theorem: Theorem,
    pub delta: f64,
    pub lipschitz: Lipschitz,
    pub m: usize,
    pub k: usize,
    /// `(|S_i|, W_i)` for batch forms, `(1, W_i)` per step for online forms.
    pub wasserstein_terms: Vec<(usize, f64)>,
    pub lambdas: Vec<f64>,
    /// `(V_hat_i, V_i)` per set or per step.
    pub variance_terms: Vec<(f64, f64)>,
    pub wasserstein_term: f64,
    pub statistical_term: f64,
    pub components: Vec<Component>,
    pub total: f64,
    pub notes: Vec<String>,
}

impl BoundCertificate {
    fn assemble(
        theorem: Theorem,
        delta: f64,
        lipschitz: Lipschitz,
        m: usize,
        k: usize,
        wasserstein_terms: Vec<(usize, f64)>,
        components: Vec<Component>,
        n_wasserstein: usize,
    ) -> Result<Self> {
        let wasserstein_term: f64 = components[..n_wasserstein].iter().map(|c| c.value).sum();
        let statistical_term: f64 = components[n_wasserstein..].iter().map(|c| c.value).sum();
        let total = components.iter().map(|c| c.value).sum::<f64>();
        if !total.is_finite() {
            return Err(Error::NonFinite("certificate total"));
        }
        let mut notes = vec![format!("bounds {}", theorem.bounds())];
        notes.push(format!("L = {} ({})", lipschitz.value, lipschitz.source.label()));
        if lipschitz.source == LipschitzSource::EmpiricalEstimate {
            notes.push("L is a sampled lower estimate; this certificate is heuristic, not a proof".into());
        }
        Ok(BoundCertificate {
            theorem,
            delta,
            lipschitz,
            m,
            k,
            wasserstein_terms,
            lambdas: Vec::new(),
            variance_terms: Vec::new(),
            wasserstein_term,
            statistical_term,
            components,
            total,
            notes,
        })
    }

    /// Sum of the stored components.
    pub fn recompute(&self) -> f64 {
        self.components.iter().map(|c| c.value).sum()
    }

    /// Upper bound on the population risk given the empirical risk it
    /// is paired with.
    pub fn risk_bound(&self, empirical_risk: f64) -> f64 {
        empirical_risk + self.total
    }

    /// Itemised table: component, formula, value.
    pub fn table(&self) -> String {
        let mut s = format!("# certificate {}  delta={}  m={}  K={}\n", self.theorem, self.delta, self.m, self.k);
        for n in &self.notes {
            s.push_str(&format!("# {n}\n"));
        }
        s.push_str("component\tformula\tvalue\n");
        for c in &self.components {
            s.push_str(&format!("{}\t{}\t{:.12e}\n", c.name, c.formula, c.value));
        }
        s.push_str(&format!("wasserstein\t-\t{:.12e}\n", self.wasserstein_term));
        s.push_str(&format!("statistical\t-\t{:.12e}\n", self.statistical_term));
        s.push_str(&format!("total\t-\t{:.12e}\n", self.total));
        s
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("delta must lie in (0, 1], got {delta}")))
    }
}

fn check_lipschitz(l: &Lipschitz) -> Result<()> {
    if l.value > 0.0 && l.value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("Lipschitz constant must be positive, got {}", l.value)))
    }
}

fn check_distances<'a>(w: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    for &v in w {
        if !v.is_finite() {
            return Err(Error::NonFinite("Wasserstein term"));
        }
        if v < 0.0 {
            return Err(Error::InvalidArgument(format!("Wasserstein terms must be non-negative, got {v}")));
        }
    }
    Ok(())
}

fn check_terms(terms: &[(usize, f64)], m: usize, k: usize) -> Result<()> {
    if terms.is_empty() || terms.len() != k {
        return Err(Error::InvalidArgument(format!("expected {k} (size, W) terms, got {}", terms.len())));
    }
    let total: usize = terms.iter().map(|t| t.0).sum();
    if total != m || m == 0 {
        return Err(Error::InvalidArgument(format!("set sizes sum to {total}, expected m = {m}")));
    }
    check_distances(terms.iter().map(|t| &t.1))
}

fn check_lambda(l: f64) -> Result<()> {
    if l > 0.0 && l.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must be positive, got {l}")))
    }
}

fn check_variances(v: &[(f64, f64)]) -> Result<()> {
    if v.iter().any(|&(a, b)| !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite())) {
        return Err(Error::InvalidArgument("variance terms must be finite and non-negative".into()));
    }
    Ok(())
}

fn wasserstein_components(terms: &[(usize, f64)], l: f64, m: usize) -> Vec<Component> {
    let mf = m as f64;
    terms
        .iter()
        .enumerate()
        .map(|(i, &(s, w))| Component {
            name: format!("W[{}]", i + 1),
            formula: "2|S_i| L W_i / m",
            value: 2.0 * s as f64 * l * w / mf,
        })
        .collect()
}

/// Batch certificate for non-negative losses with second moment at most 1.
pub fn bound_batch_nonneg(
    terms: &[(usize, f64)],
    lipschitz: Lipschitz,
    m: usize,
    k: usize,
    delta: f64,
) -> Result<BoundCertificate> {
    batch_sqrt(Theorem::BatchNonNeg, terms, lipschitz, m, k, delta)
}

/// Batch certificate for losses in `[0, 1]`.
pub fn bound_batch_tight(
    terms: &[(usize, f64)],
    lipschitz: Lipschitz,
    m: usize,
    k: usize,
    delta: f64,
) -> Result<BoundCertificate> {
    batch_sqrt(Theorem::BatchTight, terms, lipschitz, m, k, delta)
}

fn batch_sqrt(
    theorem: Theorem,
    terms: &[(usize, f64)],
    lipschitz: Lipschitz,
    m: usize,
    k: usize,
    delta: f64,
) -> Result<BoundCertificate> {
    check_delta(delta)?;
    check_lipschitz(&lipschitz)?;
    check_terms(terms, m, k)?;
    let mf = m as f64;
    let log_term = (k as f64 / delta).ln();
    let mut components = wasserstein_components(terms, lipschitz.value, m);
    for (i, &(s, _)) in terms.iter().enumerate() {
        let (formula, value) = match theorem {
            Theorem::BatchTight => ("sqrt(|S_i| ln(K/delta) / (2 m^2))", (s as f64 * log_term / (2.0 * mf * mf)).sqrt()),
            _ => ("sqrt(2 |S_i| ln(K/delta) / m^2)", (2.0 * s as f64 * log_term / (mf * mf)).sqrt()),
        };
        components.push(Component { name: format!("stat[{}]", i + 1), formula, value });
    }
    let mut cert = BoundCertificate::assemble(theorem, delta, lipschitz, m, k, terms.to_vec(), components, k)?;
    match theorem {
        Theorem::BatchTight => cert.notes.push("requires the loss to take values in [0, 1]".into()),
        _ => cert.notes.push("requires non-negative loss with prior second moments at most 1".into()),
    }
    if k == 1 {
        cert.notes.push(format!(
            "K = 1: the looser full-batch constant 2 sqrt(ln(1/delta)/m) would give {:.6e}",
            2.0 * ((1.0 / delta).ln() / mf).sqrt()
        ));
    }
    Ok(cert)
}

/// Batch certificate for heavy-tailed losses. `variances[i] = (V_hat_i, V_i)`
/// evaluated under prior `i`.
pub fn bound_batch_heavy(
    terms: &[(usize, f64)],
    lipschitz: Lipschitz,
    m: usize,
    k: usize,
    delta: f64,
    lambdas: &[f64],
    variances: &[(f64, f64)],
) -> Result<BoundCertificate> {
    check_delta(delta)?;
    check_lipschitz(&lipschitz)?;
    check_terms(terms, m, k)?;
    if lambdas.len() != k || variances.len() != k {
        return Err(Error::InvalidArgument(format!("expected {k} lambdas and variance pairs")));
    }
    lambdas.iter().try_for_each(|&l| check_lambda(l))?;
    check_variances(variances)?;
    let mf = m as f64;
    let log_term = (k as f64 / delta).ln();
    let mut components = wasserstein_components(terms, lipschitz.value, m);
    for (i, (&lam, &(vh, v))) in lambdas.iter().zip(variances).enumerate() {
        components.push(Component {
            name: format!("conf[{}]", i + 1),
            formula: "ln(K/delta) / (m lambda_i)",
            value: log_term / (lam * mf),
        });
        components.push(Component {
            name: format!("var[{}]", i + 1),
            formula: "lambda_i (V_hat_i + V_i) / (2m)",
            value: lam * (vh + v) / (2.0 * mf),
        });
    }
    let mut cert =
        BoundCertificate::assemble(Theorem::BatchHeavy, delta, lipschitz, m, k, terms.to_vec(), components, k)?;
    cert.lambdas = lambdas.to_vec();
    cert.variance_terms = variances.to_vec();
    Ok(cert)
}

/// The `lambda` minimising `ln(c)/lambda + lambda v / 2`.
pub fn optimal_lambda(log_term: f64, variance_sum: f64) -> f64 {
    (2.0 * log_term / variance_sum).sqrt()
}

/// Online certificate for non-negative losses; `path[i]` is `W(rho_i, P_i)`.
pub fn bound_online_nonneg(path: &[f64], lipschitz: Lipschitz, m: usize, delta: f64) -> Result<BoundCertificate> {
    check_delta(delta)?;
    check_lipschitz(&lipschitz)?;
    check_distances(path)?;
    if m == 0 || path.len() != m {
        return Err(Error::InvalidArgument(format!("path has {} entries, expected m = {m}", path.len())));
    }
    let mf = m as f64;
    let w_sum: f64 = path.iter().sum();
    let components = vec![
        Component {
            name: "W".into(),
            formula: "(2L/m) sum_i W_i",
            value: 2.0 * lipschitz.value / mf * w_sum,
        },
        Component { name: "stat".into(), formula: "sqrt(2 ln(1/delta) / m)", value: (2.0 * (1.0 / delta).ln() / mf).sqrt() },
    ];
    let terms = path.iter().map(|&w| (1, w)).collect();
    let mut cert = BoundCertificate::assemble(Theorem::OnlineNonNeg, delta, lipschitz, m, m, terms, components, 1)?;
    cert.notes.push("requires non-negative loss with conditional prior second moments at most 1".into());
    Ok(cert)
}

/// Online certificate for heavy-tailed losses. Bounds the cumulative gap.
pub fn bound_online_heavy(
    path: &[f64],
    lipschitz: Lipschitz,
    delta: f64,
    lambda: f64,
    variances: &[(f64, f64)],
) -> Result<BoundCertificate> {
    check_delta(delta)?;
    check_lipschitz(&lipschitz)?;
    check_distances(path)?;
    check_lambda(lambda)?;
    check_variances(variances)?;
    let m = path.len();
    if m == 0 || variances.len() != m {
        return Err(Error::InvalidArgument("need one variance pair per step".into()));
    }
    let w_sum: f64 = path.iter().sum();
    let v_sum: f64 = variances.iter().map(|&(a, b)| a + b).sum();
    let components = vec![
        Component { name: "W".into(), formula: "2L sum_i W_i", value: 2.0 * lipschitz.value * w_sum },
        Component { name: "var".into(), formula: "(lambda/2) sum_i (V_hat_i + V_i)", value: lambda / 2.0 * v_sum },
        Component { name: "conf".into(), formula: "ln(1/delta) / lambda", value: (1.0 / delta).ln() / lambda },
    ];
    let terms = path.iter().map(|&w| (1, w)).collect();
    let mut cert = BoundCertificate::assemble(Theorem::OnlineHeavy, delta, lipschitz, m, m, terms, components, 1)?;
    cert.lambdas = vec![lambda];
    cert.variance_terms = variances.to_vec();
    Ok(cert)
}

/// Certificate over a finite hypothesis space with a data-free prior.
pub fn bound_finite_h(card_h: usize, lipschitz: Lipschitz, w: f64, m: usize, delta: f64) -> Result<BoundCertificate> {
    check_delta(delta)?;
    check_lipschitz(&lipschitz)?;
    check_distances([w].iter())?;
    if card_h == 0 || m == 0 {
        return Err(Error::InvalidArgument("need |H| >= 1 and m >= 1".into()));
    }
    let mf = m as f64;
    let h = card_h as f64;
    let coef = lipschitz.value * (2.0 * (4.0 * h * h / delta).ln() / mf).sqrt();
    let components = vec![
        Component { name: "W".into(), formula: "L sqrt(2 ln(4|H|^2/delta) / m) W", value: coef * w },
        Component { name: "stat".into(), formula: "2 sqrt(ln(2/delta) / m)", value: 2.0 * ((2.0 / delta).ln() / mf).sqrt() },
    ];
    let mut cert = BoundCertificate::assemble(Theorem::FiniteH, delta, lipschitz, m, 1, vec![(m, w)], components, 1)?;
    cert.notes.push(format!("|H| = {card_h}; loss in [0, 1]"));
    Ok(cert)
}

/// `(|S_i|, |w_post - w_prior_i|)` for a Dirac posterior and Dirac priors.
pub fn batch_terms(posterior: &Hypothesis, priors: &PriorSet) -> Result<Vec<(usize, f64)>> {
    priors
        .priors
        .iter()
        .zip(&priors.partition.sets)
        .map(|(p, s)| Ok((s.len(), param_distance(&posterior.params, &p.params)?)))
        .collect()
}

/// Per-step Dirac-chain distances `|w_i - w_{i-1}|` of an online run.
pub fn online_path(trace: &OnlineTrace) -> Vec<f64> {
    trace.distances()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentEstimate {
    pub second_moment: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentReport {
    pub estimates: Vec<MomentEstimate>,
    pub max: f64,
    pub satisfied: bool,
}

fn losses_on(h: &Hypothesis, data: &Dataset, cfg: &LossConfig) -> Result<Vec<f64>> {
    check_dim(h.spec.input_dim, data.dim())?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation data".into()));
    }
    let view = ArrayView2::from_shape((data.len(), data.dim()), data.features.as_slice().expect("contiguous"))
        .expect("rows");
    Ok(per_example_losses(&h.spec, h.params.as_slice(), view, &data.labels, cfg))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Plug-in second moments `E[l(h, z)^2]` of Dirac priors on held-out data.
pub fn estimate_moments(priors: &[Hypothesis], eval: &Dataset, cfg: &LossConfig) -> Result<MomentReport> {
    let mut estimates = Vec::with_capacity(priors.len());
    for h in priors {
        let l = losses_on(h, eval, cfg)?;
        let sq: Vec<f64> = l.iter().map(|v| v * v).collect();
        estimates.push(MomentEstimate { second_moment: mean(&sq), samples: l.len() });
    }
    let max = estimates.iter().map(|e| e.second_moment).fold(0.0, f64::max);
    Ok(MomentReport { estimates, max, satisfied: max <= 1.0 })
}

/// Plug-in `(V_hat_i, V_i)` for each prior: the population risk is replaced
/// by the held-out risk, and `V_i` by `|S_i|` times the held-out variance.
pub fn estimate_variances(priors: &PriorSet, train: &Dataset, eval: &Dataset, cfg: &LossConfig) -> Result<Vec<(f64, f64)>> {
    priors
        .priors
        .iter()
        .zip(&priors.partition.sets)
        .map(|(h, set)| {
            let held = losses_on(h, eval, cfg)?;
            let r = mean(&held);
            let fold = losses_on(h, &train.subset(set), cfg)?;
            let v_hat: f64 = fold.iter().map(|l| (l - r) * (l - r)).sum();
            let v = set.len() as f64 * held.iter().map(|l| (l - r) * (l - r)).sum::<f64>() / held.len() as f64;
            Ok((v_hat, v))
        })
        .collect()
}

/// Plug-in per-step `(V_hat_i, V_i)` for an online run under Dirac-chain
/// priors `P_i = delta(h_{i-1})`. Needs the trace to keep its hypotheses.
pub fn estimate_online_variances(
    trace: &OnlineTrace,
    stream: &Dataset,
    eval: &Dataset,
    cfg: &LossConfig,
) -> Result<Vec<(f64, f64)>> {
    if trace.hypotheses.len() != trace.steps.len() {
        return Err(Error::InvalidArgument("trace was run without keeping hypotheses".into()));
    }
    if stream.len() < trace.steps.len() {
        return Err(Error::InvalidArgument("stream is shorter than the trace".into()));
    }
    let mut out = Vec::with_capacity(trace.steps.len());
    let mut prev = trace.initial.clone();
    for (i, next) in trace.hypotheses.iter().enumerate() {
        let h = Hypothesis { spec: trace.spec, params: prev };
        let held = losses_on(&h, eval, cfg)?;
        let r = mean(&held);
        let z = stream.subset(&[i]);
        let l = losses_on(&h, &z, cfg)?[0];
        let v = held.iter().map(|x| (x - r) * (x - r)).sum::<f64>() / held.len() as f64;
        out.push(((l - r) * (l - r), v));
        prev = next.clone();
    }
    Ok(out)
}
