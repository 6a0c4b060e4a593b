//! Browser bindings for three small interactive tools: the log-barrier
//! curve, the exact 1-D Wasserstein distance, and a batch certificate
//! calculator.

use wasm_bindgen::prelude::*;
use wasspac::bounds::{bound_batch_nonneg, bound_batch_tight, bound_online_nonneg};
use wasspac::losses::Lipschitz;
use wasspac::online::{log_barrier, log_barrier_grad};
use wasspac::ot::{w1_exact, w1_line, DiscreteMeasure};

/// Barrier values at `n` evenly spaced points of `[lo, hi]`.
#[wasm_bindgen]
pub fn barrier_curve(t: f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, String> {
    if !(t > 0.0) || !(hi > lo) || n < 2 {
        return Err("need t > 0, hi > lo and at least two points".into());
    }
    Ok((0..n)
        .map(|i| log_barrier(lo + (hi - lo) * i as f64 / (n - 1) as f64, t))
        .collect())
}

/// Slope of the barrier at `a`.
#[wasm_bindgen]
pub fn barrier_slope(a: f64, t: f64) -> f64 {
    log_barrier_grad(a, t)
}

/// Point where the logarithmic branch hands over to the linear one.
#[wasm_bindgen]
pub fn barrier_junction(t: f64) -> f64 {
    -1.0 / (t * t)
}

fn measure(points: &[f64], weights: &[f64]) -> Result<DiscreteMeasure<f64>, String> {
    if points.len() != weights.len() || points.is_empty() {
        return Err("each point needs one weight".into());
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || points.iter().any(|p| !p.is_finite()) {
        return Err("weights must be non-negative and points finite".into());
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err("weights must not all be zero".into());
    }
    DiscreteMeasure::new(points.to_vec(), weights.iter().map(|w| w / total).collect()).map_err(|e| e.to_string())
}

/// Exact W1 between two weighted point sets on the line. Weights are
/// normalised to sum to one.
#[wasm_bindgen]
pub fn wasserstein_1d(xs: &[f64], wx: &[f64], ys: &[f64], wy: &[f64]) -> Result<f64, String> {
    let mu = measure(xs, wx)?;
    let nu = measure(ys, wy)?;
    if mu.len() + nu.len() <= 200 {
        w1_exact(&mu, &nu, |a: &f64, b: &f64| (a - b).abs()).map_err(|e| e.to_string())
    } else {
        Ok(w1_line(&mu, &nu))
    }
}

/// Itemised certificate as tab-separated text. `kind` is `nonneg`, `tight`
/// or `online`; for `online` every entry of `distances` is one step and
/// `sizes` is ignored.
#[wasm_bindgen]
pub fn certificate(kind: &str, sizes: &[u32], distances: &[f64], lipschitz: f64, delta: f64) -> Result<String, String> {
    let l = Lipschitz::user(lipschitz).map_err(|e| e.to_string())?;
    let cert = if kind == "online" {
        bound_online_nonneg(distances, l, distances.len(), delta)
    } else {
        if sizes.len() != distances.len() {
            return Err("one distance per set".into());
        }
        let terms: Vec<(usize, f64)> = sizes.iter().map(|&s| s as usize).zip(distances.iter().copied()).collect();
        let m = terms.iter().map(|t| t.0).sum();
        match kind {
            "nonneg" => bound_batch_nonneg(&terms, l, m, terms.len(), delta),
            "tight" => bound_batch_tight(&terms, l, m, terms.len(), delta),
            _ => return Err(format!("unknown bound {kind:?}")),
        }
    };
    cert.map(|c| c.table()).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_matches_core() {
        let v = barrier_curve(10.0, -2.0, 0.5, 6).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v[0], log_barrier(-2.0, 10.0));
        assert_eq!(v[5], log_barrier(0.5, 10.0));
        assert!(barrier_curve(0.0, -1.0, 1.0, 3).is_err());
        assert_eq!(barrier_slope(1.0, 5.0), 5.0);
        assert_eq!(barrier_junction(10.0), -0.01);
    }

    #[test]
    fn line_distance() {
        let d = wasserstein_1d(&[0.0, 1.0], &[1.0, 1.0], &[2.0], &[3.0]).unwrap();
        assert!((d - 1.5).abs() < 1e-12);
        assert!(wasserstein_1d(&[0.0], &[0.0], &[1.0], &[1.0]).is_err());
        assert!(wasserstein_1d(&[0.0, 1.0], &[1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn certificate_text() {
        let t = certificate("nonneg", &[8], &[0.0], 1.0, (-1.0f64).exp()).unwrap();
        assert!(t.lines().any(|l| l.starts_with("total\t") && l.ends_with("5.000000000000e-1")));
        let o = certificate("online", &[], &[0.0, 0.0], 1.0, (-1.0f64).exp()).unwrap();
        assert!(o.contains("online-nonneg"));
        assert!(certificate("nonneg", &[1, 2], &[0.1], 1.0, 0.1).is_err());
        assert!(certificate("other", &[1], &[0.1], 1.0, 0.1).is_err());
    }
}
