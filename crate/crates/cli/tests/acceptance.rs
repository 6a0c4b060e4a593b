//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria whose only failing part is a dataset that is not present on disk
//! are reported as FAIL with the reason, and do not fail the process.
//! Anything else that fails exits non-zero.
//!
//! Environment knobs:
//!   WASSPAC_DATA              data directory (default: <workspace>/data)
//!   WASSPAC_YEAST_ITERATIONS  minimum mini-batch iterations for the yeast
//!                             network comparison (default 2000; the full
//!                             protocol is 20000)

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use wasspac::batch::{make_partition, train_priors, BatchConfig};
use wasspac::bounds::{bound_batch_nonneg, bound_batch_tight};
use wasspac::cocob::{CocobState, DEFAULT_ALPHA};
use wasspac::data::{split_halves, Dataset};
use wasspac::experiment::{
    certify_run, run_on, write_result, Algorithm, CertKind, CertifyOptions, ExperimentConfig,
};
use wasspac::losses::{kink_distance, loss_value_grad, margin_loss, Lipschitz, LossConfig, Normalization};
use wasspac::model::{euclidean, forward, init_weights, Hypothesis, ModelKind, ModelSpec, ParamVector};
use wasspac::online::{
    barrier_linear_branch, barrier_log_branch, barrier_log_branch_grad, log_barrier, online_train, OnlineConfig,
};
use wasspac::ot::{euclidean_metric, w1_brute_force, w1_exact, w1_line, DiscreteMeasure};
use wasspac::rng::{gaussian, stream};

struct Outcome {
    pass: bool,
    /// Failure caused only by an absent dataset file.
    missing_data: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, missing_data: false, detail }
    }
}

/// Result of one part of a multi-part criterion.
struct Part {
    name: &'static str,
    pass: bool,
    missing: bool,
    detail: String,
}

fn combine(parts: Vec<Part>) -> Outcome {
    let pass = parts.iter().all(|p| p.pass);
    let missing_data = !pass && parts.iter().all(|p| p.pass || p.missing);
    let detail = parts
        .iter()
        .map(|p| format!("{} {} ({})", p.name, if p.pass { "ok" } else { "FAILED" }, p.detail))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome { pass, missing_data, detail }
}

fn data_dir() -> PathBuf {
    std::env::var_os("WASSPAC_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            let d = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
            d.canonicalize().unwrap_or(d)
        })
}

fn config(dataset: &str, algorithm: Algorithm) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = dataset.into();
    cfg.data_dir = data_dir();
    cfg.algorithm = algorithm;
    cfg.seeds = vec![0, 1, 2];
    cfg
}

fn missing(name: &'static str, file: &Path) -> Part {
    Part {
        name,
        pass: false,
        missing: true,
        detail: format!("dataset file {} not present", file.display()),
    }
}

fn loss_at(spec: ModelSpec, w: &[f64], x: &[f64], y: usize, cfg: &LossConfig) -> f64 {
    let h = Hypothesis { spec, params: ParamVector { values: w.to_vec() } };
    margin_loss(&forward(&h, x).unwrap(), y, cfg).unwrap()
}

fn gradient_check(mlp: bool, seed: u64) -> f64 {
    let mut rng = stream(seed, 200);
    let cfg = LossConfig { eta: 1.0, normalization: Normalization::OverClasses };
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    while accepted < 100 {
        let spec = if mlp {
            ModelSpec::mlp(rng.gen_range(2..10), rng.gen_range(2..6), rng.gen_range(3..12), rng.gen_range(1..4))
        } else {
            ModelSpec::linear(rng.gen_range(2..20), rng.gen_range(2..8))
        };
        let mut w = init_weights(&spec, rng.gen()).unwrap();
        w.values.iter_mut().for_each(|v| *v += 0.5 * gaussian(&mut rng));
        let x: Vec<f64> = (0..spec.input_dim).map(|_| gaussian(&mut rng)).collect();
        let y = rng.gen_range(0..spec.num_classes);
        let h = Hypothesis::new(spec, w).unwrap();
        if kink_distance(&h, &x, y, &cfg).unwrap() < 1e-3 {
            continue;
        }
        accepted += 1;
        let (_, g) = loss_value_grad(&h, &x, y, &cfg).unwrap();
        let mut p = h.params.values.clone();
        let step = 1e-6;
        let mut diff = 0.0;
        let mut fd_norm = 0.0;
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + step;
            let up = loss_at(spec, &p, &x, y, &cfg);
            p[i] = orig - step;
            let down = loss_at(spec, &p, &x, y, &cfg);
            p[i] = orig;
            let fd = (up - down) / (2.0 * step);
            diff += (fd - g.values[i]).powi(2);
            fd_norm += fd * fd;
        }
        let scale = g.norm().max(fd_norm.sqrt()).max(1e-12);
        worst = worst.max(diff.sqrt() / scale);
    }
    worst
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let lin = gradient_check(false, 1);
    let mlp = gradient_check(true, 2);
    let took = start.elapsed();
    Outcome::new(
        lin <= 1e-5 && mlp <= 1e-5 && took < Duration::from_secs(10),
        format!("worst relative error linear {lin:.2e}, network {mlp:.2e}, 200 points in {:.2}s", took.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = stream(7, 200);
    let cfg = LossConfig { eta: 1.0, normalization: Normalization::OverClassesMinusOne };
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..10_000 {
        let spec = ModelSpec::linear(rng.gen_range(1..12), rng.gen_range(2..8));
        let n = spec.param_count();
        let w: Vec<f64> = (0..n).map(|_| 3.0 * gaussian(&mut rng)).collect();
        let w2: Vec<f64> = (0..n).map(|_| 3.0 * gaussian(&mut rng)).collect();
        let mut x: Vec<f64> = (0..spec.input_dim).map(|_| gaussian(&mut rng)).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let r: f64 = rng.gen::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v *= r / norm);
        let y = rng.gen_range(0..spec.num_classes);
        let gap = (loss_at(spec, &w, &x, y, &cfg) - loss_at(spec, &w2, &x, y, &cfg)).abs();
        let d = euclidean(&w, &w2);
        worst_ratio = worst_ratio.max(gap / d);
        if gap > 2.0 * d {
            violations += 1;
        }
    }
    Outcome::new(violations == 0, format!("{violations} violations in 10^4 triples, largest slope {worst_ratio:.4}"))
}

fn criterion_3() -> Outcome {
    let mut rng = stream(3, 200);
    let mut worst_bf: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=6);
        let pts = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..3).map(|_| gaussian(rng)).collect()).collect()
        };
        let a = DiscreteMeasure::uniform(pts(&mut rng)).unwrap();
        let b = DiscreteMeasure::uniform(pts(&mut rng)).unwrap();
        let exact = w1_exact(&a, &b, euclidean_metric).unwrap();
        let brute = w1_brute_force(&a, &b, euclidean_metric).unwrap();
        worst_bf = worst_bf.max((exact - brute).abs());
    }
    let mut worst_line: f64 = 0.0;
    for _ in 0..200 {
        let measure = |rng: &mut rand_chacha::ChaCha8Rng| {
            let n = rng.gen_range(1..=8);
            let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.01).collect();
            let s: f64 = w.iter().sum();
            let x: Vec<f64> = (0..n).map(|_| 4.0 * gaussian(rng)).collect();
            DiscreteMeasure::new(x, w.iter().map(|v| v / s).collect()).unwrap()
        };
        let a = measure(&mut rng);
        let b = measure(&mut rng);
        let exact = w1_exact(&a, &b, |p: &f64, q: &f64| (p - q).abs()).unwrap();
        worst_line = worst_line.max((exact - w1_line(&a, &b)).abs());
    }
    let mut dirac_exact = true;
    for _ in 0..200 {
        let p: Vec<f64> = (0..3).map(|_| gaussian(&mut rng)).collect();
        let q: Vec<f64> = (0..3).map(|_| gaussian(&mut rng)).collect();
        let d = w1_exact(&DiscreteMeasure::dirac(p.clone()), &DiscreteMeasure::dirac(q.clone()), euclidean_metric)
            .unwrap();
        dirac_exact &= d == euclidean(&p, &q);
    }
    Outcome::new(
        worst_bf <= 1e-9 && worst_line <= 1e-9 && dirac_exact,
        format!(
            "brute force max gap {worst_bf:.1e} over 200, line CDF max gap {worst_line:.1e} over 200, Dirac exact {dirac_exact}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut worst_v: f64 = 0.0;
    let mut worst_d: f64 = 0.0;
    for t in [1.0, 10.0, 100.0] {
        let a = -1.0 / (t * t);
        worst_v = worst_v.max((barrier_log_branch(a, t) - barrier_linear_branch(a, t)).abs());
        // the linear branch has slope t everywhere
        worst_d = worst_d.max((barrier_log_branch_grad(a, t) - t).abs());
    }
    let origin = log_barrier(-1.0, 1.0) + 0.0;
    Outcome::new(
        worst_v <= 1e-12 && worst_d <= 1e-12 && origin == 0.0,
        format!("value gap {worst_v:.1e}, slope gap {worst_d:.1e}, B(-1, 1) = {origin}"),
    )
}

fn criterion_5() -> Outcome {
    let lip = |v| Lipschitz::user(v).unwrap();
    let base = bound_batch_nonneg(&[(8, 0.0)], lip(1.0), 8, 1, (-1.0f64).exp()).unwrap().total;
    let mut rng = stream(5, 200);
    let mut monotone_fail = 0;
    let mut special_fail = 0;
    let equal = |m: usize, k: usize, w: f64| -> Vec<(usize, f64)> {
        (0..k).map(|i| (m / k + usize::from(i < m % k), w)).collect()
    };
    for _ in 0..500 {
        let k = rng.gen_range(1..8);
        let m = k * rng.gen_range(2..100);
        let w: f64 = rng.gen::<f64>() * 2.0;
        let l = 0.1 + rng.gen::<f64>() * 3.0;
        let d = 1e-4 + rng.gen::<f64>() * 0.9;
        let f = |m: usize, w: f64, d: f64, tight: bool| {
            let t = equal(m, k, w);
            if tight {
                bound_batch_tight(&t, lip(l), m, k, d).unwrap().total
            } else {
                bound_batch_nonneg(&t, lip(l), m, k, d).unwrap().total
            }
        };
        for tight in [false, true] {
            let b = f(m, w, d, tight);
            if !(f(m + k, w, d, tight) < b && f(m, w + 1e-3, d, tight) > b && f(m, w, d / 2.0, tight) > b) {
                monotone_fail += 1;
            }
        }
        // single set: sqrt(2 ln(1/delta)/m) + 2 L W
        let one = bound_batch_nonneg(&[(m, w)], lip(l), m, 1, d).unwrap().total;
        let expect = (2.0 * (1.0 / d).ln() / m as f64).sqrt() + 2.0 * l * w;
        if (one - expect).abs() > 1e-12 * expect.max(1.0) {
            special_fail += 1;
        }
        // sqrt(m) equal sets: (2L/sqrt m) sum W + sqrt(2 ln(sqrt m/delta)/sqrt m)
        let r = rng.gen_range(2..30usize);
        let mm = r * r;
        let sq = bound_batch_nonneg(&vec![(r, w); r], lip(l), mm, r, d).unwrap().total;
        let s = r as f64;
        let expect = 2.0 * l / s * (s * w) + (2.0 * (s / d).ln() / s).sqrt();
        if (sq - expect).abs() > 1e-12 * expect.max(1.0) {
            special_fail += 1;
        }
    }
    let mut dominance_fail = 0;
    for _ in 0..1000 {
        let k = rng.gen_range(1..10);
        let sizes: Vec<usize> = (0..k).map(|_| rng.gen_range(1..200)).collect();
        let m = sizes.iter().sum();
        let terms: Vec<(usize, f64)> = sizes.iter().map(|&s| (s, rng.gen::<f64>() * 3.0)).collect();
        let l = 0.01 + rng.gen::<f64>() * 5.0;
        let d = 1e-6 + rng.gen::<f64>() * (1.0 - 1e-6);
        let a = bound_batch_tight(&terms, lip(l), m, k, d).unwrap();
        let b = bound_batch_nonneg(&terms, lip(l), m, k, d).unwrap();
        if a.total > b.total || a.statistical_term > b.statistical_term {
            dominance_fail += 1;
        }
    }
    Outcome::new(
        base == 0.5 && monotone_fail == 0 && special_fail == 0 && dominance_fail == 0,
        format!(
            "K=1 value {base}; monotonicity failures {monotone_fail}/1000; K=1 and K=sqrt(m) mismatches {special_fail}; tight above non-negative {dominance_fail}/1000"
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = stream(6, 200);
    let m = 200;
    let d = 5;
    let mut x = Array2::from_shape_fn((m, d), |_| gaussian(&mut rng) * 0.3);
    let labels: Vec<usize> = (0..m).map(|i| usize::from(x[[i, 0]] + x[[i, 1]] > 0.0)).collect();
    wasspac::data::normalize_unit_ball(&mut x);
    let data = Dataset::new(x, labels, 2, "toy").unwrap();
    let spec = ModelSpec::linear(d, 2);
    let cfg = BatchConfig { min_iterations: 200, batch_size: 20, cocob_alpha: 100.0, seed: 11, ..Default::default() };
    let partition = make_partition(m, 4, cfg.seed).unwrap();
    let base = train_priors(&data, &partition, &spec, &cfg).unwrap();
    let mut unchanged = 0;
    let mut others_moved = 0;
    for i in 0..4 {
        let j = partition.sets[i][0];
        let mut mutated = data.clone();
        mutated.features.row_mut(j).mapv_inplace(|v| -v * 0.5);
        mutated.labels[j] = 1 - mutated.labels[j];
        let again = train_priors(&mutated, &partition, &spec, &cfg).unwrap();
        let same = |a: &Hypothesis, b: &Hypothesis| {
            a.params.values.iter().zip(&b.params.values).all(|(p, q)| p.to_bits() == q.to_bits())
        };
        if same(&base.priors[i], &again.priors[i]) {
            unchanged += 1;
        }
        if (0..4).any(|k| k != i && !same(&base.priors[k], &again.priors[k])) {
            others_moved += 1;
        }
    }
    Outcome::new(
        unchanged == 4,
        format!("prior i bitwise unchanged after mutating S_i: {unchanged}/4 (other priors moved in {others_moved}/4)"),
    )
}

fn max_step_part(name: &'static str, dataset: &str, prefix: Option<usize>) -> Part {
    let cfg = config(dataset, Algorithm::Alg2);
    let data = match cfg.load_data() {
        Ok(d) => d,
        Err(wasspac::Error::MissingFile { path, .. }) => return missing(name, &path),
        Err(e) => return Part { name, pass: false, missing: false, detail: e.to_string() },
    };
    let (train, eval) = split_halves(&data, 0);
    let stream = match prefix {
        Some(n) => train.prefix(n),
        None => train,
    };
    let ocfg = OnlineConfig { seed: 0, ..cfg.online };
    let spec = ModelSpec::linear(stream.dim(), stream.num_classes);
    match online_train(&stream, &eval, &spec, &ocfg) {
        Ok(trace) => {
            let limit = ocfg.radius + 10.0 / ocfg.barrier_t + 1e-6;
            let over = trace.distances().iter().filter(|&&s| s > limit).count();
            Part {
                name,
                pass: over == 0,
                missing: false,
                detail: format!("{} steps, max step {:.4e}, limit {limit}, {over} over", stream.len(), trace.max_step()),
            }
        }
        Err(e) => Part { name, pass: false, missing: false, detail: e.to_string() },
    }
}

fn criterion_7() -> Outcome {
    combine(vec![
        max_step_part("mushrooms", "mushrooms", None),
        max_step_part("pendigits", "pendigits", Some(2000)),
    ])
}

fn run_part(name: &'static str, cfg: &ExperimentConfig) -> Result<(f64, f64, Duration), Part> {
    let data = match cfg.load_data() {
        Ok(d) => d,
        Err(wasspac::Error::MissingFile { path, .. }) => return Err(missing(name, &path)),
        Err(e) => return Err(Part { name, pass: false, missing: false, detail: e.to_string() }),
    };
    let start = Instant::now();
    let res = run_on(cfg, &data).map_err(|e| Part { name, pass: false, missing: false, detail: e.to_string() })?;
    Ok((res.median_train, res.median_test, start.elapsed()))
}

fn part_mushrooms() -> Part {
    let cfg = config("mushrooms", Algorithm::Alg1);
    match run_part("mushrooms", &cfg) {
        Ok((_, te, t)) => Part {
            name: "mushrooms",
            pass: te <= 0.01 && t <= Duration::from_secs(300),
            missing: false,
            detail: format!("median test risk {te:.4} <= 0.01 in {:.0}s", t.as_secs_f64()),
        },
        Err(p) => p,
    }
}

fn part_tictactoe() -> Part {
    let cfg = config("tictactoe", Algorithm::Alg1);
    match run_part("tictactoe", &cfg) {
        Ok((_, te, _)) => Part {
            name: "tictactoe",
            pass: te <= 0.08,
            missing: false,
            detail: format!("median test risk {te:.4} <= 0.08"),
        },
        Err(p) => p,
    }
}

fn part_yeast() -> Part {
    let iterations: usize = std::env::var("WASSPAC_YEAST_ITERATIONS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(2000);
    let mut alg1 = config("yeast", Algorithm::Alg1);
    alg1.model = ModelKind::Mlp;
    alg1.hidden_width = 600;
    alg1.hidden_depth = 2;
    alg1.batch.min_iterations = iterations;
    let mut erm = alg1.clone();
    erm.algorithm = Algorithm::Erm;
    let a = run_part("yeast", &alg1);
    let b = run_part("yeast", &erm);
    match (a, b) {
        (Ok((_, ta, _)), Ok((_, tb, _))) => Part {
            name: "yeast",
            pass: ta <= tb,
            missing: false,
            detail: format!("network, {iterations} iterations: alg1 median test {ta:.4} vs erm {tb:.4}"),
        },
        (Err(p), _) | (_, Err(p)) => p,
    }
}

fn part_pendigits() -> Part {
    let alg2 = config("pendigits", Algorithm::Alg2);
    let ogd = config("pendigits", Algorithm::Ogd);
    let data = match alg2.load_data() {
        Ok(d) => d,
        Err(wasspac::Error::MissingFile { path, .. }) => return missing("pendigits", &path),
        Err(e) => return Part { name: "pendigits", pass: false, missing: false, detail: e.to_string() },
    };
    let (a, b) = match (run_on(&alg2, &data), run_on(&ogd, &data)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Part { name: "pendigits", pass: false, missing: false, detail: e.to_string() },
    };
    let per_seed = a.rows().iter().zip(b.rows()).all(|(x, y)| x.test_risk <= y.test_risk);
    Part {
        name: "pendigits",
        pass: a.median_test <= 0.58 && a.median_test <= b.median_test,
        missing: false,
        detail: format!(
            "C_mu alg2 {:.4} <= 0.58, ogd {:.4}, alg2 <= ogd on every seed: {per_seed}",
            a.median_test, b.median_test
        ),
    }
}

fn part_mnist() -> Part {
    let dir = tempfile::tempdir().unwrap();
    let mut detail = Vec::new();
    for algorithm in [Algorithm::Alg1, Algorithm::Alg2] {
        let mut cfg = config("mnist5k", algorithm);
        cfg.seeds = vec![0];
        let data = match cfg.load_data() {
            Ok(d) => d,
            Err(wasspac::Error::MissingFile { path, .. }) => return missing("mnist5k", &path),
            Err(e) => return Part { name: "mnist5k", pass: false, missing: false, detail: e.to_string() },
        };
        let out = dir.path().join(algorithm.name());
        let res = match run_on(&cfg, &data).and_then(|r| write_result(&out, &cfg, &r, &data).map(|_| r)) {
            Ok(r) => r,
            Err(e) => return Part { name: "mnist5k", pass: false, missing: false, detail: e.to_string() },
        };
        for kind in [CertKind::NonNeg, CertKind::Heavy] {
            let opts = CertifyOptions { kind, ..Default::default() };
            match certify_run(&out.join("seed-0"), &opts) {
                Ok(c) if c.certificate.total.is_finite() => detail.push(format!(
                    "{} {} bound {:.3} (test {:.3})",
                    algorithm,
                    c.certificate.theorem,
                    c.certificate.total,
                    res.median_test
                )),
                Ok(_) => return Part { name: "mnist5k", pass: false, missing: false, detail: "non-finite".into() },
                Err(e) => return Part { name: "mnist5k", pass: false, missing: false, detail: e.to_string() },
            }
        }
    }
    Part { name: "mnist5k", pass: true, missing: false, detail: format!("m=5000 end to end; {}", detail.join(", ")) }
}

fn criterion_8() -> Outcome {
    combine(vec![part_mushrooms(), part_tictactoe(), part_yeast(), part_pendigits(), part_mnist()])
}

fn criterion_9() -> Outcome {
    // independent reimplementation of the update, gradient -1 from 0, alpha 10000
    const TABLE: [f64; 10] = [
        0.0001,
        0.00020002,
        0.000300090006,
        0.00040024004400240003,
        0.0005005001750250012,
        0.0006009005101350164,
        0.0007014712255146137,
        0.0008022425775685417,
        0.000903244918084421,
        0.0010045087094563301,
    ];
    let mut s = CocobState::new(&[0.0], DEFAULT_ALPHA).unwrap();
    let mut bitwise = true;
    for e in TABLE {
        s.step(&[-1.0]).unwrap();
        bitwise &= s.w[0].to_bits() == e.to_bits();
    }
    let mut s = CocobState::new(&[0.0], 100.0).unwrap();
    for _ in 0..10_000 {
        let w = s.w[0];
        let g = if w > 5.0 { 1.0 } else if w < 5.0 { -1.0 } else { 0.0 };
        s.step(&[g]).unwrap();
    }
    let gap = (s.w[0] - 5.0).abs();
    Outcome::new(
        bitwise && gap <= 0.1,
        format!("10-step table bitwise {bitwise}; |w - 5| after 10^4 steps (alpha 100) = {gap:.4}"),
    )
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_wasspac");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(bin)
            .args(["train-batch", "--dataset", "tictactoe", "--seed", "5", "--min-iterations", "400"])
            .arg("--data-dir")
            .arg(data_dir())
            .arg("--out")
            .arg(&out)
            .output()
            .expect("run cli");
        (status.status.success(), out.join("seed-5"))
    };
    let (ok_a, a) = run("a");
    let (ok_b, b) = run("b");
    if !(ok_a && ok_b) {
        return Outcome::new(false, "train-batch failed".into());
    }
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let identical = names.iter().all(|n| std::fs::read(a.join(n)).ok() == std::fs::read(b.join(n)).ok());
    let rows_identical = std::fs::read(a.parent().unwrap().join("rows.tsv")).ok()
        == std::fs::read(b.parent().unwrap().join("rows.tsv")).ok();
    Outcome::new(
        identical && rows_identical && names.iter().any(|n| n == "manifest.txt"),
        format!("{} files compared byte for byte ({}), identical {}", names.len(), names.join(", "), identical && rows_identical),
    )
}

fn main() {
    let criteria: [(u8, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut unexpected = Vec::new();
    for (id, f) in criteria {
        let o = f();
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && o.missing_data { " [dataset absent]" } else { "" };
        println!("criterion {id:>2}: {status}{note}  {}", o.detail);
        if !o.pass && !o.missing_data {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("failing criteria: {unexpected:?}");
        std::process::exit(1);
    }
}
