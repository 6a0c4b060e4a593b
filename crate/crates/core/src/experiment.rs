//! Experiment configuration, seeded runs, run directories and result tables.
//!
//! A run directory holds `manifest.txt` (ordered `key=value` lines) and the
//! hypothesis files it names. Nothing time- or host-dependent is written, so
//! two runs of the same configuration produce identical bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::batch::{self, make_partition, BatchConfig, Epsilon, PriorSet};
use crate::bounds::{self, BoundCertificate};
use crate::data::{load_csv, load_idx, read_tsv, split_halves, Dataset, Schema};
use crate::error::{Error, Result};
use crate::losses::{lipschitz_constant, Lipschitz, LipschitzMode, LossConfig, Normalization};
use crate::model::{init_weights, Hypothesis, ModelKind, ModelSpec, ParamVector};
use crate::online::{online_train, OnlineConfig, OnlineTrace};

pub const MANIFEST: &str = "manifest.txt";
pub const ROWS_HEADER: &str = "dataset\tmethod\tseed\ttrain_risk\ttest_risk\ttrain_surrogate\ttest_surrogate";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Alg1,
    Erm,
    L2,
    Alg2,
    Ogd,
}

impl Algorithm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "alg1" => Ok(Algorithm::Alg1),
            "erm" => Ok(Algorithm::Erm),
            "l2" => Ok(Algorithm::L2),
            "alg2" => Ok(Algorithm::Alg2),
            "ogd" => Ok(Algorithm::Ogd),
            _ => Err(Error::InvalidArgument(format!("unknown algorithm {s:?} (alg1|erm|l2|alg2|ogd)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::Erm => "erm",
            Algorithm::L2 => "l2",
            Algorithm::Alg2 => "alg2",
            Algorithm::Ogd => "ogd",
        }
    }

    pub fn is_online(self) -> bool {
        matches!(self, Algorithm::Alg2 | Algorithm::Ogd)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Csv { path: PathBuf, schema: PathBuf },
    Idx { images: PathBuf, labels: PathBuf },
    /// A dataset written by `ingest`.
    Table(PathBuf),
}

impl DataSource {
    /// Finds `<id>.tsv`, `<id>.csv` + `<id>.schema`, or the IDX pair
    /// `<id>-images-idx3-ubyte` / `<id>-labels-idx1-ubyte` under `dir`.
    pub fn resolve(id: &str, dir: &Path) -> Result<Self> {
        let table = dir.join(format!("{id}.tsv"));
        if table.is_file() {
            return Ok(DataSource::Table(table));
        }
        let csv = dir.join(format!("{id}.csv"));
        if csv.is_file() {
            return Ok(DataSource::Csv { path: csv, schema: dir.join(format!("{id}.schema")) });
        }
        let images = dir.join(format!("{id}-images-idx3-ubyte"));
        if images.is_file() {
            return Ok(DataSource::Idx { images, labels: dir.join(format!("{id}-labels-idx1-ubyte")) });
        }
        Err(Error::MissingFile {
            path: csv,
            hint: format!(
                "no dataset {id:?} in {}; expected {id}.tsv, {id}.csv with {id}.schema, or an IDX pair. \
                 Fetch the raw files with scripts/prepare_data.py or pass --csv/--schema",
                dir.display()
            ),
        })
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Csv { path, schema } => load_csv(path, &Schema::load(schema)?),
            DataSource::Idx { images, labels } => load_idx(images, labels),
            DataSource::Table(path) => read_tsv(path),
        }
    }

    fn manifest_entries(&self) -> Vec<(String, String)> {
        let p = |p: &PathBuf| p.display().to_string();
        match self {
            DataSource::Csv { path, schema } => vec![("csv".into(), p(path)), ("schema".into(), p(schema))],
            DataSource::Idx { images, labels } => vec![("images".into(), p(images)), ("labels".into(), p(labels))],
            DataSource::Table(path) => vec![("table".into(), p(path))],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    pub source: Option<DataSource>,
    /// Keep only the first rows of the file, before splitting.
    pub max_examples: Option<usize>,
    pub model: ModelKind,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub algorithm: Algorithm,
    pub batch: BatchConfig,
    pub online: OnlineConfig,
    pub weight_decay: Epsilon,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: String::new(),
            data_dir: PathBuf::from("data"),
            source: None,
            max_examples: None,
            model: ModelKind::Linear,
            hidden_width: 600,
            hidden_depth: 2,
            algorithm: Algorithm::Alg1,
            batch: BatchConfig::default(),
            online: OnlineConfig::default(),
            weight_decay: Epsilon::InvSqrtM,
            seeds: vec![0],
            out: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("bad boolean {v:?} for {key}"))),
    }
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: PathBuf::from("<config>"),
            line: no + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.to_string(),
            "data_dir" => self.data_dir = PathBuf::from(value),
            "csv" | "schema" => {
                let (mut path, mut schema) = match &self.source {
                    Some(DataSource::Csv { path, schema }) => (path.clone(), schema.clone()),
                    _ => (PathBuf::new(), PathBuf::new()),
                };
                if key == "csv" {
                    path = PathBuf::from(value);
                    if schema.as_os_str().is_empty() {
                        schema = path.with_extension("schema");
                    }
                } else {
                    schema = PathBuf::from(value);
                }
                self.source = Some(DataSource::Csv { path, schema });
            }
            "images" | "labels" => {
                let (mut images, mut labels) = match &self.source {
                    Some(DataSource::Idx { images, labels }) => (images.clone(), labels.clone()),
                    _ => (PathBuf::new(), PathBuf::new()),
                };
                if key == "images" {
                    images = PathBuf::from(value);
                } else {
                    labels = PathBuf::from(value);
                }
                self.source = Some(DataSource::Idx { images, labels });
            }
            "table" => self.source = Some(DataSource::Table(PathBuf::from(value))),
            "max_examples" => self.max_examples = Some(parse_num(key, value)?),
            "model" => {
                self.model = match value {
                    "linear" => ModelKind::Linear,
                    "mlp" | "nn" => ModelKind::Mlp,
                    _ => return Err(Error::InvalidArgument(format!("unknown model {value:?} (linear|mlp)"))),
                }
            }
            "hidden_width" | "width" => self.hidden_width = parse_num(key, value)?,
            "hidden_depth" | "depth" => self.hidden_depth = parse_num(key, value)?,
            "algorithm" => self.algorithm = Algorithm::parse(value)?,
            "epsilon" => self.batch.epsilon = Epsilon::parse(value)?,
            "k_alpha" => self.batch.k_alpha = parse_num(key, value)?,
            "batch_size" => self.batch.batch_size = parse_num(key, value)?,
            "min_iterations" => self.batch.min_iterations = parse_num(key, value)?,
            "final_iterate" => self.batch.final_iterate = parse_bool(key, value)?,
            "weight_decay" => self.weight_decay = Epsilon::parse(value)?,
            "eta" => {
                let eta = parse_num(key, value)?;
                self.batch.loss.eta = eta;
                self.online.loss.eta = eta;
            }
            "normalization" => {
                let n = match value {
                    "classes" => Normalization::OverClasses,
                    "classes_minus_one" => Normalization::OverClassesMinusOne,
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "unknown normalization {value:?} (classes|classes_minus_one)"
                        )))
                    }
                };
                self.batch.loss.normalization = n;
                self.online.loss.normalization = n;
            }
            "cocob_alpha" => {
                let a = parse_num(key, value)?;
                self.batch.cocob_alpha = a;
                self.online.cocob_alpha = a;
            }
            "inner_steps" => self.online.inner_steps = parse_num(key, value)?,
            "barrier_t" => self.online.barrier_t = parse_num(key, value)?,
            "radius" => self.online.radius = parse_num(key, value)?,
            "barrier" => self.online.barrier = parse_bool(key, value)?,
            "plain_distance" => self.online.include_plain_distance = parse_bool(key, value)?,
            "reset_optimizer" => self.online.reset_optimizer = parse_bool(key, value)?,
            "eval_subsample" => self.online.eval_subsample = parse_num(key, value)?,
            "seed" => self.seeds = vec![parse_num(key, value)?],
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?
            }
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(Error::InvalidArgument(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&parse_key_values(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse { path: path.to_path_buf(), line, msg },
            other => other,
        })?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        if self.dataset.is_empty() && self.source.is_none() {
            return Err(Error::InvalidArgument("no dataset given".into()));
        }
        if self.algorithm.is_online() {
            self.online.validate()
        } else {
            self.batch.validate()
        }
    }

    pub fn source(&self) -> Result<DataSource> {
        match &self.source {
            Some(s) => Ok(s.clone()),
            None => DataSource::resolve(&self.dataset, &self.data_dir),
        }
    }

    pub fn dataset_id(&self) -> String {
        if !self.dataset.is_empty() {
            return self.dataset.clone();
        }
        let p = match &self.source {
            Some(DataSource::Csv { path, .. }) | Some(DataSource::Table(path)) => path,
            Some(DataSource::Idx { images, .. }) => images,
            None => return "unnamed".into(),
        };
        p.file_stem().map_or("unnamed".into(), |s| s.to_string_lossy().into_owned())
    }

    pub fn load_data(&self) -> Result<Dataset> {
        let data = self.source()?.load()?;
        Ok(match self.max_examples {
            Some(n) if n < data.len() => data.prefix(n),
            _ => data,
        })
    }

    pub fn model_spec(&self, data: &Dataset) -> ModelSpec {
        match self.model {
            ModelKind::Linear => ModelSpec::linear(data.dim(), data.num_classes),
            ModelKind::Mlp => ModelSpec::mlp(data.dim(), data.num_classes, self.hidden_width, self.hidden_depth),
        }
    }

    /// Column label for result tables.
    pub fn method(&self) -> String {
        match self.algorithm {
            Algorithm::Alg1 => format!("alg1(eps={},k_alpha={})", self.batch.epsilon, self.batch.k_alpha),
            Algorithm::L2 => format!("l2(wd={})", self.weight_decay),
            a => a.name().to_string(),
        }
    }

    /// Ordered `key=value` entries describing the configuration.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = vec![
            ("dataset".into(), self.dataset_id()),
            ("algorithm".into(), self.algorithm.name().into()),
            ("model".into(), if self.model == ModelKind::Linear { "linear" } else { "mlp" }.into()),
        ];
        if self.model == ModelKind::Mlp {
            e.push(("hidden_width".into(), self.hidden_width.to_string()));
            e.push(("hidden_depth".into(), self.hidden_depth.to_string()));
        }
        if let Some(n) = self.max_examples {
            e.push(("max_examples".into(), n.to_string()));
        }
        let loss = if self.algorithm.is_online() { self.online.loss } else { self.batch.loss };
        e.push(("eta".into(), format!("{:?}", loss.eta)));
        e.push((
            "normalization".into(),
            match loss.normalization {
                Normalization::OverClasses => "classes",
                Normalization::OverClassesMinusOne => "classes_minus_one",
            }
            .into(),
        ));
        if self.algorithm.is_online() {
            let o = &self.online;
            e.push(("inner_steps".into(), o.inner_steps.to_string()));
            e.push(("barrier_t".into(), format!("{:?}", o.barrier_t)));
            e.push(("radius".into(), format!("{:?}", o.radius)));
            e.push(("barrier".into(), o.barrier.to_string()));
            e.push(("plain_distance".into(), o.include_plain_distance.to_string()));
            e.push(("reset_optimizer".into(), o.reset_optimizer.to_string()));
            e.push(("eval_subsample".into(), o.eval_subsample.to_string()));
            e.push(("cocob_alpha".into(), format!("{:?}", o.cocob_alpha)));
        } else {
            let b = &self.batch;
            e.push(("epsilon".into(), b.epsilon.to_string()));
            e.push(("k_alpha".into(), format!("{:?}", b.k_alpha)));
            e.push(("batch_size".into(), b.batch_size.to_string()));
            e.push(("min_iterations".into(), b.min_iterations.to_string()));
            e.push(("final_iterate".into(), b.final_iterate.to_string()));
            e.push(("cocob_alpha".into(), format!("{:?}", b.cocob_alpha)));
            if self.algorithm == Algorithm::L2 {
                e.push(("weight_decay".into(), self.weight_decay.to_string()));
            }
        }
        e
    }
}

/// One result row. Online runs report `C_S` and `C_mu` in the risk columns.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub train_risk: f64,
    pub test_risk: f64,
    pub train_surrogate: f64,
    pub test_surrogate: f64,
}

impl RunRow {
    fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}",
            self.dataset,
            self.method,
            self.seed,
            self.train_risk,
            self.test_risk,
            self.train_surrogate,
            self.test_surrogate
        )
    }
}

#[derive(Clone, Debug)]
pub enum Artifacts {
    Batch {
        initial: ParamVector,
        priors: Option<PriorSet>,
        hypothesis: Hypothesis,
        iterations: usize,
    },
    Online {
        trace: OnlineTrace,
    },
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub row: RunRow,
    pub artifacts: Artifacts,
    pub m_train: usize,
    pub m_eval: usize,
    pub eval_max_norm: f64,
}

/// Runs one seed on an already loaded dataset.
pub fn run_seed(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let (train, eval) = split_halves(data, seed);
    if train.is_empty() || eval.is_empty() {
        return Err(Error::InvalidArgument("dataset too small to split".into()));
    }
    let spec = cfg.model_spec(&train);
    let base = |train_risk, test_risk, train_surrogate, test_surrogate| RunRow {
        dataset: cfg.dataset_id(),
        method: cfg.method(),
        seed,
        train_risk,
        test_risk,
        train_surrogate,
        test_surrogate,
    };
    let (row, artifacts) = if cfg.algorithm.is_online() {
        let ocfg = OnlineConfig { seed, ..cfg.online };
        let ocfg = if cfg.algorithm == Algorithm::Ogd { ocfg.ogd() } else { ocfg };
        let trace = online_train(&train, &eval, &spec, &ocfg)?;
        let train_sur = trace.steps.iter().map(|s| s.surrogate).sum::<f64>() / trace.steps.len() as f64;
        let (test_sur, _) = batch::risks(&trace.final_hypothesis(), &eval, &ocfg.loss)?;
        (base(trace.cumulative_train, trace.cumulative_eval, train_sur, test_sur), Artifacts::Online { trace })
    } else {
        let bcfg = BatchConfig { seed, ..cfg.batch };
        let initial = init_weights(&spec, seed)?;
        let m = train.len();
        let (priors, outcome) = match cfg.algorithm {
            Algorithm::Alg1 => {
                let (p, o) = batch::train_batch(&train, &spec, &bcfg)?;
                (Some(p), o)
            }
            Algorithm::Erm => (None, batch::erm_train(&train, &spec, &bcfg)?),
            _ => (None, batch::l2_train(&train, &spec, &bcfg, cfg.weight_decay.resolve(m))?),
        };
        let (tr_s, tr_r) = batch::risks(&outcome.hypothesis, &train, &bcfg.loss)?;
        let (te_s, te_r) = batch::risks(&outcome.hypothesis, &eval, &bcfg.loss)?;
        (
            base(tr_r, te_r, tr_s, te_s),
            Artifacts::Batch { initial, priors, hypothesis: outcome.hypothesis, iterations: outcome.iterations },
        )
    };
    Ok(SeedRun { row, artifacts, m_train: train.len(), m_eval: eval.len(), eval_max_norm: eval.max_row_norm() })
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub runs: Vec<SeedRun>,
    pub median_train: f64,
    pub median_test: f64,
    pub dataset_hash: String,
}

impl ExperimentResult {
    pub fn rows(&self) -> Vec<RunRow> {
        self.runs.iter().map(|r| r.row.clone()).collect()
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Loads the data once and runs every seed, one worker per seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let data = cfg.load_data()?;
    run_on(cfg, &data)
}

pub fn run_on(cfg: &ExperimentConfig, data: &Dataset) -> Result<ExperimentResult> {
    let runs: Vec<SeedRun> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, data, s)).collect::<Result<_>>()?;
    let train: Vec<f64> = runs.iter().map(|r| r.row.train_risk).collect();
    let test: Vec<f64> = runs.iter().map(|r| r.row.test_risk).collect();
    Ok(ExperimentResult {
        median_train: median(&train),
        median_test: median(&test),
        runs,
        dataset_hash: data.provenance.hash.clone(),
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

/// Writes `<out>/seed-<s>/` for every run plus `<out>/rows.tsv`.
pub fn write_result(out: &Path, cfg: &ExperimentConfig, res: &ExperimentResult, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut rows = String::from(ROWS_HEADER);
    rows.push('\n');
    for run in &res.runs {
        rows.push_str(&run.row.to_tsv());
        rows.push('\n');
        write_run(&out.join(format!("seed-{}", run.row.seed)), cfg, run, data)?;
    }
    write_atomic(&out.join("rows.tsv"), rows.as_bytes())
}

/// Writes one run directory: manifest plus hypothesis files.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, run: &SeedRun, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut e: Vec<(String, String)> = vec![("format".into(), "wasspac-run/1".into())];
    e.extend(cfg.entries());
    e.extend(cfg.source()?.manifest_entries());
    e.push(("dataset_hash".into(), data.provenance.hash.clone()));
    e.push(("dataset_rows".into(), data.len().to_string()));
    e.push(("classes".into(), data.num_classes.to_string()));
    e.push(("input_dim".into(), data.dim().to_string()));
    e.push(("seed".into(), run.row.seed.to_string()));
    e.push(("m".into(), run.m_train.to_string()));
    e.push(("m_eval".into(), run.m_eval.to_string()));
    e.push(("eval_max_norm".into(), format!("{:?}", run.eval_max_norm)));
    match &run.artifacts {
        Artifacts::Batch { initial, priors, hypothesis, iterations } => {
            Hypothesis { spec: hypothesis.spec, params: initial.clone() }.save(&dir.join("init.wpac"))?;
            hypothesis.save(&dir.join("posterior.wpac"))?;
            e.push(("iterations".into(), iterations.to_string()));
            e.push(("init".into(), "init.wpac".into()));
            e.push(("posterior".into(), "posterior.wpac".into()));
            match priors {
                Some(p) => {
                    e.push(("k".into(), p.priors.len().to_string()));
                    let sizes: Vec<String> = p.partition.sizes().iter().map(|s| s.to_string()).collect();
                    e.push(("set_sizes".into(), sizes.join(",")));
                    let mut names = Vec::new();
                    for (i, h) in p.priors.iter().enumerate() {
                        let name = format!("prior-{}.wpac", i + 1);
                        h.save(&dir.join(&name))?;
                        names.push(name);
                    }
                    e.push(("priors".into(), names.join(",")));
                    e.push(("epsilon_value".into(), format!("{:?}", cfg.batch.epsilon.resolve(run.m_train))));
                }
                None => {
                    // the data-free initialisation is the single prior
                    e.push(("k".into(), "1".into()));
                    e.push(("set_sizes".into(), run.m_train.to_string()));
                    e.push(("priors".into(), "init.wpac".into()));
                }
            }
        }
        Artifacts::Online { trace } => {
            trace.final_hypothesis().save(&dir.join("final.wpac"))?;
            Hypothesis { spec: trace.spec, params: trace.initial.clone() }.save(&dir.join("init.wpac"))?;
            let mut buf = Vec::new();
            trace.write_tsv(&mut buf)?;
            write_atomic(&dir.join("trace.tsv"), &buf)?;
            e.push(("init".into(), "init.wpac".into()));
            e.push(("final".into(), "final.wpac".into()));
            e.push(("trace".into(), "trace.tsv".into()));
            e.push(("path_length".into(), format!("{:?}", trace.path_length)));
            e.push(("max_step".into(), format!("{:?}", trace.max_step())));
            let post = trace.steps.iter().map(|s| s.post_surrogate).sum::<f64>() / trace.steps.len() as f64;
            e.push(("stream_post_surrogate".into(), format!("{post:?}")));
        }
    }
    let r = &run.row;
    e.push(("method".into(), r.method.clone()));
    e.push(("train_risk".into(), format!("{:?}", r.train_risk)));
    e.push(("test_risk".into(), format!("{:?}", r.test_risk)));
    e.push(("train_surrogate".into(), format!("{:?}", r.train_surrogate)));
    e.push(("test_surrogate".into(), format!("{:?}", r.test_surrogate)));
    let mut text = String::new();
    for (k, v) in e {
        text.push_str(&format!("{k}={v}\n"));
    }
    write_atomic(&dir.join(MANIFEST), text.as_bytes())
}

/// A parsed run manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub entries: BTreeMap<String, String>,
}

impl Manifest {
    /// Accepts the run directory or the manifest file itself.
    pub fn load(path: &Path) -> Result<Self> {
        let (dir, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST))
        } else {
            (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
        };
        let text = std::fs::read_to_string(&file).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile {
                path: file.clone(),
                hint: "point at a directory written by train-batch or train-online".into(),
            },
            _ => e.into(),
        })?;
        let entries = parse_key_values(&text)?.into_iter().collect();
        Ok(Manifest { dir, entries })
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidArgument(format!("manifest has no {key:?} entry")))
    }

    pub fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        parse_num(key, self.get(key)?)
    }

    pub fn hypothesis(&self, name: &str) -> Result<Hypothesis> {
        Hypothesis::load(&self.dir.join(name))
    }

    pub fn is_online(&self) -> bool {
        self.entries.contains_key("trace")
    }

    pub fn loss(&self) -> Result<LossConfig> {
        let mut cfg = ExperimentConfig::default();
        cfg.set("eta", self.get("eta")?)?;
        cfg.set("normalization", self.get("normalization")?)?;
        Ok(cfg.batch.loss)
    }

    /// Rebuilds the configuration recorded in the manifest.
    pub fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in &self.entries {
            // run bookkeeping keys are not configuration
            let _ = cfg.set(k, v);
        }
        cfg.seeds = vec![self.num("seed")?];
        Ok(cfg)
    }

    /// Step distances from the stored trace.
    pub fn path(&self) -> Result<Vec<f64>> {
        let file = self.dir.join(self.get("trace")?);
        let text = std::fs::read_to_string(&file)?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split('\t').collect();
        let col = header
            .iter()
            .position(|h| *h == "distance")
            .ok_or_else(|| Error::Parse { path: file.clone(), line: 1, msg: "no distance column".into() })?;
        lines
            .enumerate()
            .map(|(i, l)| {
                l.split('\t')
                    .nth(col)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Parse { path: file.clone(), line: i + 2, msg: "bad distance".into() })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CertKind {
    NonNeg,
    Tight,
    Heavy,
}

impl CertKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nonneg" => Ok(CertKind::NonNeg),
            "tight" => Ok(CertKind::Tight),
            "heavy" => Ok(CertKind::Heavy),
            _ => Err(Error::InvalidArgument(format!("unknown bound {s:?} (nonneg|tight|heavy)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LipschitzChoice {
    /// `2 eta`, proved for linear models on the unit ball.
    Lemma,
    /// `sqrt(2) eta`, stated without proof.
    Unproved,
    Value(f64),
    /// Sampled slope between the priors and the posterior on held-out data.
    Empirical,
}

impl LipschitzChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lemma" => Ok(LipschitzChoice::Lemma),
            "unproved" => Ok(LipschitzChoice::Unproved),
            "empirical" => Ok(LipschitzChoice::Empirical),
            v => Ok(LipschitzChoice::Value(parse_num("lipschitz", v)?)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CertifyOptions {
    pub kind: CertKind,
    pub delta: f64,
    pub lipschitz: LipschitzChoice,
    /// Heavy-tailed forms; defaults are data-free (see [`default_lambdas`]).
    pub lambda: Option<f64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { kind: CertKind::NonNeg, delta: 0.05, lipschitz: LipschitzChoice::Lemma, lambda: None }
    }
}

/// Data-free `lambda_i` optimal when `V_hat_i + V_i = 2 |S_i|`, the value
/// at the second-moment ceiling of one.
pub fn default_lambdas(sizes: &[usize], delta: f64) -> Vec<f64> {
    let k = sizes.len() as f64;
    sizes
        .iter()
        .map(|&s| bounds::optimal_lambda((k / delta).ln(), 2.0 * s as f64))
        .collect()
}

/// Certificate, empirical risk it pairs with, and any moment check.
#[derive(Clone, Debug)]
pub struct Certified {
    pub certificate: BoundCertificate,
    pub empirical_risk: f64,
    pub moments: Option<bounds::MomentReport>,
}

impl Certified {
    pub fn table(&self) -> String {
        let mut s = self.certificate.table();
        s.push_str(&format!("empirical_surrogate\t-\t{:.12e}\n", self.empirical_risk));
        s.push_str(&format!(
            "risk_bound\tempirical + total\t{:.12e}\n",
            self.certificate.risk_bound(self.empirical_risk)
        ));
        if let Some(m) = &self.moments {
            s.push_str(&format!(
                "# prior second moments (held-out plug-in): max {:.6e}, {}\n",
                m.max,
                if m.satisfied { "within the bound of 1" } else { "EXCEEDS 1: precondition not met" }
            ));
        }
        s
    }
}

/// Rebuilds the held-out half a run was evaluated on.
fn reload_split(man: &Manifest) -> Result<(Dataset, Dataset)> {
    let cfg = man.config()?;
    let data = cfg.load_data()?;
    if data.provenance.hash != man.get("dataset_hash")? {
        return Err(Error::InvalidArgument(format!(
            "dataset hash mismatch: manifest {} but file gives {}",
            man.get("dataset_hash")?,
            data.provenance.hash
        )));
    }
    Ok(split_halves(&data, man.num("seed")?))
}

fn resolve_lipschitz(
    choice: LipschitzChoice,
    spec: &ModelSpec,
    loss: &LossConfig,
    pairs: &[(ParamVector, ParamVector)],
    eval: Option<&Dataset>,
) -> Result<Lipschitz> {
    match choice {
        LipschitzChoice::Lemma => lipschitz_constant(spec, loss, LipschitzMode::LemmaLinear),
        LipschitzChoice::Unproved => lipschitz_constant(spec, loss, LipschitzMode::UnprovedLinear),
        LipschitzChoice::Value(v) => Lipschitz::user(v),
        LipschitzChoice::Empirical => {
            let eval = eval.ok_or_else(|| Error::InvalidArgument("empirical L needs the dataset".into()))?;
            let view = ArrayView2::from_shape((eval.len(), eval.dim()), eval.features.as_slice().expect("contiguous"))
                .expect("rows");
            lipschitz_constant(spec, loss, LipschitzMode::Empirical { pairs, x: view, y: &eval.labels })
        }
    }
}

/// Certificate for a run directory. Data is reloaded only when needed
/// (moment checks, heavy-tailed variances, empirical `L`); if it cannot be
/// found the certificate is still produced without a moment check.
pub fn certify_run(path: &Path, opts: &CertifyOptions) -> Result<Certified> {
    let man = Manifest::load(path)?;
    let loss = man.loss()?;
    let m: usize = man.num("m")?;
    let empirical_risk: f64 = man.num("train_surrogate")?;
    let need_data = opts.kind == CertKind::Heavy || opts.lipschitz == LipschitzChoice::Empirical;
    let split = match reload_split(&man) {
        Ok(s) => Some(s),
        Err(e) if need_data => return Err(e),
        Err(_) => None,
    };
    if man.is_online() {
        let last = man.hypothesis(man.get("final")?)?;
        let init = man.hypothesis(man.get("init")?)?;
        let path_w = man.path()?;
        let pairs = vec![(init.params.clone(), last.params.clone())];
        let lip = resolve_lipschitz(opts.lipschitz, &last.spec, &loss, &pairs, split.as_ref().map(|s| &s.1))?;
        let certificate = match opts.kind {
            CertKind::Heavy => {
                let (train, eval) = split.as_ref().expect("data loaded");
                let cfg = man.config()?;
                let ocfg = OnlineConfig { keep_hypotheses: true, seed: man.num("seed")?, ..cfg.online };
                let ocfg = if cfg.algorithm == Algorithm::Ogd { ocfg.ogd() } else { ocfg };
                let trace = online_train(train, eval, &last.spec, &ocfg)?;
                let vars = bounds::estimate_online_variances(&trace, train, eval, &loss)?;
                let lambda = opts.lambda.unwrap_or_else(|| bounds::optimal_lambda((1.0 / opts.delta).ln(), 2.0 * m as f64));
                let mut c = bounds::bound_online_heavy(&path_w, lip, opts.delta, lambda, &vars)?;
                c.notes.push("variances: held-out plug-in for the conditional means".into());
                c
            }
            CertKind::Tight => {
                let mut c = bounds::bound_online_nonneg(&path_w, lip, m, opts.delta)?;
                c.notes.push("no tight online form; reporting the non-negative bound".into());
                c
            }
            CertKind::NonNeg => bounds::bound_online_nonneg(&path_w, lip, m, opts.delta)?,
        };
        // the online gap is measured on l(h_i, z_i) after the update
        let post: f64 = man.num("stream_post_surrogate")?;
        let empirical_risk = if opts.kind == CertKind::Heavy { post * m as f64 } else { post };
        return Ok(Certified { certificate, empirical_risk, moments: None });
    }
    let posterior = man.hypothesis(man.get("posterior")?)?;
    let prior_names: Vec<&str> = man.get("priors")?.split(',').collect();
    let priors: Vec<Hypothesis> = prior_names.iter().map(|n| man.hypothesis(n)).collect::<Result<_>>()?;
    let sizes: Vec<usize> = man
        .get("set_sizes")?
        .split(',')
        .map(|s| parse_num("set_sizes", s))
        .collect::<Result<_>>()?;
    if sizes.len() != priors.len() {
        return Err(Error::InvalidArgument("set_sizes and priors disagree".into()));
    }
    let terms: Vec<(usize, f64)> = sizes
        .iter()
        .zip(&priors)
        .map(|(&s, p)| Ok((s, crate::model::param_distance(&posterior.params, &p.params)?)))
        .collect::<Result<_>>()?;
    let pairs: Vec<(ParamVector, ParamVector)> =
        priors.iter().map(|p| (p.params.clone(), posterior.params.clone())).collect();
    let lip = resolve_lipschitz(opts.lipschitz, &posterior.spec, &loss, &pairs, split.as_ref().map(|s| &s.1))?;
    let k = priors.len();
    let moments = match &split {
        Some((_, eval)) => Some(bounds::estimate_moments(&priors, eval, &loss)?),
        None => None,
    };
    let mut certificate = match opts.kind {
        CertKind::NonNeg => bounds::bound_batch_nonneg(&terms, lip, m, k, opts.delta)?,
        CertKind::Tight => bounds::bound_batch_tight(&terms, lip, m, k, opts.delta)?,
        CertKind::Heavy => {
            let (train, eval) = split.as_ref().expect("data loaded");
            let partition = if k == 1 {
                batch::Partition { sets: vec![(0..m).collect()], m }
            } else {
                make_partition(m, k, man.num("seed")?)?
            };
            let set = PriorSet { priors: priors.clone(), partition, records: Vec::new(), traces: Vec::new() };
            let vars = bounds::estimate_variances(&set, train, eval, &loss)?;
            let lambdas = match opts.lambda {
                Some(l) => vec![l; k],
                None => default_lambdas(&sizes, opts.delta),
            };
            let mut c = bounds::bound_batch_heavy(&terms, lip, m, k, opts.delta, &lambdas, &vars)?;
            c.notes.push("variances: population risk replaced by the held-out half (plug-in)".into());
            c
        }
    };
    let eval_norm: f64 = man.num("eval_max_norm")?;
    if eval_norm > 1.0 + 1e-12 {
        certificate.notes.push(format!("held-out rows reach norm {eval_norm:.6}, outside the unit ball"));
    }
    if k == 1 {
        certificate.notes.push("prior: data-free initialisation".into());
    }
    Ok(Certified { certificate, empirical_risk, moments })
}

/// Reads a rows file written by [`write_result`].
pub fn read_rows(path: &Path) -> Result<Vec<RunRow>> {
    let text = std::fs::read_to_string(path)?;
    let err = |line: usize, msg: &str| Error::Parse { path: path.to_path_buf(), line, msg: msg.to_string() };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == ROWS_HEADER => {}
        _ => return Err(err(1, "schema mismatch: unexpected header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(err(i + 2, "schema mismatch: expected 7 columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(i + 2, "bad number"));
        rows.push(RunRow {
            dataset: f[0].to_string(),
            method: f[1].to_string(),
            seed: f[2].parse().map_err(|_| err(i + 2, "bad seed"))?,
            train_risk: num(f[3])?,
            test_risk: num(f[4])?,
            train_surrogate: num(f[5])?,
            test_surrogate: num(f[6])?,
        });
    }
    Ok(rows)
}

/// One dataset per line, a `train`/`test` median pair per method in order of
/// first appearance, and a `best` column naming the lowest median test risk.
pub fn report(rows: &[RunRow]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = String::from("dataset");
    for m in &methods {
        out.push_str(&format!("\t{m}:train\t{m}:test"));
    }
    out.push_str("\tbest\n");
    for d in &datasets {
        out.push_str(d);
        let mut best: Option<(f64, &str)> = None;
        for m in &methods {
            let cell: Vec<&RunRow> = rows.iter().filter(|r| r.dataset == *d && r.method == *m).collect();
            if cell.is_empty() {
                out.push_str("\t-\t-");
                continue;
            }
            let tr = median(&cell.iter().map(|r| r.train_risk).collect::<Vec<_>>());
            let te = median(&cell.iter().map(|r| r.test_risk).collect::<Vec<_>>());
            out.push_str(&format!("\t{tr:.3}\t{te:.3}"));
            if best.is_none_or(|(b, _)| te < b) {
                best = Some((te, m));
            }
        }
        out.push_str(&format!("\t{}\n", best.map_or("-", |b| b.1)));
    }
    out
}
