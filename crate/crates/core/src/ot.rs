//! Exact order-1 Wasserstein distance between finite discrete measures.
//!
//! The transportation problem is solved as a min-cost flow on the bipartite
//! support graph by successive shortest paths (Dijkstra with potentials).

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::euclidean;

pub const MAX_SUPPORT: usize = 256;
pub const MAX_BRUTE_FORCE: usize = 6;
const WEIGHT_TOL: f64 = 1e-12;
const FLOW_EPS: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure<P> {
    pub support: Vec<P>,
    pub weights: Vec<f64>,
}

impl<P> DiscreteMeasure<P> {
    pub fn new(support: Vec<P>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidArgument("empty support".into()));
        }
        if support.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: support.len(), got: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("measure weights"));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument("negative weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        Ok(DiscreteMeasure { support, weights })
    }

    pub fn dirac(point: P) -> Self {
        DiscreteMeasure { support: vec![point], weights: vec![1.0] }
    }

    pub fn uniform(support: Vec<P>) -> Result<Self> {
        let n = support.len();
        Self::new(support, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Expectation of `f` under the measure.
    pub fn expect<F: Fn(&P) -> f64>(&self, f: F) -> f64 {
        self.support.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_SUPPORT {
        Err(Error::SupportTooLarge { size: n, limit: MAX_SUPPORT })
    } else {
        Ok(())
    }
}

/// Exact W1 between `mu` and `nu` under `metric`.
pub fn w1_exact<P, F>(mu: &DiscreteMeasure<P>, nu: &DiscreteMeasure<P>, metric: F) -> Result<f64>
where
    F: Fn(&P, &P) -> f64,
{
    check_size(mu.len())?;
    check_size(nu.len())?;
    if mu.len() == 1 && nu.len() == 1 {
        return Ok(metric(&mu.support[0], &nu.support[0]));
    }
    let cost: Vec<Vec<f64>> = mu
        .support
        .iter()
        .map(|a| nu.support.iter().map(|b| metric(a, b)).collect())
        .collect();
    Ok(transport(&mu.weights, &nu.weights, &cost).0)
}

/// Min-cost transport plan between `supply` and `demand` under `cost`.
/// Returns the optimal cost and the plan as a dense matrix.
pub fn transport(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let n = supply.len();
    let m = demand.len();
    // Node ids: 0 source, 1..=n rows, n+1..=n+m columns, n+m+1 sink.
    let src = 0;
    let sink = n + m + 1;
    let nodes = n + m + 2;
    let row = |i: usize| 1 + i;
    let col = |j: usize| 1 + n + j;

    let mut flow = vec![vec![0.0; m]; n];
    let mut sup = supply.to_vec();
    let mut dem = demand.to_vec();
    let mut pot = vec![0.0; nodes];
    let mut dist = vec![f64::INFINITY; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];

    loop {
        if sup.iter().all(|&s| s <= FLOW_EPS) || dem.iter().all(|&d| d <= FLOW_EPS) {
            break;
        }
        dist.fill(f64::INFINITY);
        parent.fill(usize::MAX);
        done.fill(false);
        dist[src] = 0.0;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX || u == sink {
                break;
            }
            done[u] = true;
            let relax = |v: usize, c: f64, dist: &mut [f64], parent: &mut [usize]| {
                let nd = dist[u] + (c + pot[u] - pot[v]).max(0.0);
                if nd < dist[v] {
                    dist[v] = nd;
                    parent[v] = u;
                }
            };
            if u == src {
                for i in 0..n {
                    if sup[i] > FLOW_EPS {
                        relax(row(i), 0.0, &mut dist, &mut parent);
                    }
                }
            } else if u <= n {
                let i = u - 1;
                for j in 0..m {
                    if !done[col(j)] {
                        relax(col(j), cost[i][j], &mut dist, &mut parent);
                    }
                }
            } else {
                let j = u - 1 - n;
                if dem[j] > FLOW_EPS {
                    relax(sink, 0.0, &mut dist, &mut parent);
                }
                for i in 0..n {
                    if flow[i][j] > FLOW_EPS && !done[row(i)] {
                        relax(row(i), -cost[i][j], &mut dist, &mut parent);
                    }
                }
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let cap = dist[sink];
        for v in 0..nodes {
            pot[v] += dist[v].min(cap);
        }

        // Bottleneck along the path.
        let mut amount = f64::INFINITY;
        let mut v = sink;
        while v != src {
            let u = parent[v];
            if u == src {
                amount = amount.min(sup[v - 1]);
            } else if v == sink {
                amount = amount.min(dem[u - 1 - n]);
            } else if u > n {
                // Backward edge column -> row cancels existing flow.
                amount = amount.min(flow[v - 1][u - 1 - n]);
            }
            v = u;
        }
        let mut v = sink;
        while v != src {
            let u = parent[v];
            if u == src {
                sup[v - 1] -= amount;
            } else if v == sink {
                dem[u - 1 - n] -= amount;
            } else if u > n {
                flow[v - 1][u - 1 - n] -= amount;
            } else {
                flow[u - 1][v - 1 - n] += amount;
            }
            v = u;
        }
    }

    let total = flow
        .iter()
        .zip(cost)
        .map(|(f, c)| f.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    (total, flow)
}

/// Minimum over all permutation couplings of two uniform measures of equal size.
pub fn w1_brute_force<P, F>(mu: &DiscreteMeasure<P>, nu: &DiscreteMeasure<P>, metric: F) -> Result<f64>
where
    F: Fn(&P, &P) -> f64,
{
    let n = mu.len();
    if nu.len() != n {
        return Err(Error::InvalidArgument("supports must have equal size".into()));
    }
    if n > MAX_BRUTE_FORCE {
        return Err(Error::SupportTooLarge { size: n, limit: MAX_BRUTE_FORCE });
    }
    let u = 1.0 / n as f64;
    if mu.weights.iter().chain(&nu.weights).any(|&w| (w - u).abs() > WEIGHT_TOL) {
        return Err(Error::InvalidArgument("brute force needs uniform weights".into()));
    }
    let cost: Vec<Vec<f64>> = mu
        .support
        .iter()
        .map(|a| nu.support.iter().map(|b| metric(a, b)).collect())
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        best = best.min(c);
    });
    Ok(best * u)
}

fn permute<F: FnMut(&[usize])>(p: &mut Vec<usize>, k: usize, visit: &mut F) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

/// W1 on the real line as the area between the two distribution functions.
pub fn w1_line(mu: &DiscreteMeasure<f64>, nu: &DiscreteMeasure<f64>) -> f64 {
    let mut events: Vec<(f64, f64)> = mu
        .support
        .iter()
        .zip(&mu.weights)
        .map(|(&x, &w)| (x, w))
        .chain(nu.support.iter().zip(&nu.weights).map(|(&x, &w)| (x, -w)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut diff = 0.0;
    let mut area = 0.0;
    for pair in events.windows(2) {
        diff += pair[0].1;
        area += diff.abs() * (pair[1].0 - pair[0].0);
    }
    area
}

pub fn euclidean_metric(a: &Vec<f64>, b: &Vec<f64>) -> f64 {
    euclidean(a, b)
}

/// Reads a measure file.
///
/// ```text
/// # optional comment lines
/// <n> <dim>
/// <weight> <x_1> ... <x_dim>      (n rows)
/// ```
pub fn read_measure(path: &Path) -> Result<DiscreteMeasure<Vec<f64>>> {
    let file = std::fs::File::open(path)?;
    let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut header: Option<(usize, usize)> = None;
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for (no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: Vec<&str> = line.split_whitespace().collect();
        match header {
            None => {
                if nums.len() != 2 {
                    return Err(parse_err(no + 1, "expected header `<n> <dim>`".into()));
                }
                let n = nums[0].parse().map_err(|e| parse_err(no + 1, format!("{e}")))?;
                let d = nums[1].parse().map_err(|e| parse_err(no + 1, format!("{e}")))?;
                header = Some((n, d));
            }
            Some((_, d)) => {
                if nums.len() != d + 1 {
                    return Err(parse_err(no + 1, format!("expected {} numbers", d + 1)));
                }
                let vals: Vec<f64> = nums
                    .iter()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(no + 1, format!("{e}")))?;
                weights.push(vals[0]);
                support.push(vals[1..].to_vec());
            }
        }
    }
    let (n, _) = header.ok_or_else(|| parse_err(0, "missing header".into()))?;
    if support.len() != n {
        return Err(parse_err(0, format!("header promises {n} rows, found {}", support.len())));
    }
    DiscreteMeasure::new(support, weights)
}

pub fn write_measure<W: Write>(m: &DiscreteMeasure<Vec<f64>>, mut out: W) -> Result<()> {
    let dim = m.support[0].len();
    writeln!(out, "{} {}", m.len(), dim)?;
    for (p, w) in m.support.iter().zip(&m.weights) {
        write!(out, "{w:e}")?;
        for x in p {
            write!(out, " {x:e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
