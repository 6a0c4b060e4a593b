use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wasspac::data::write_tsv;
use wasspac::experiment::{
    certify_run, read_rows, report, run_on, write_result, Algorithm, CertKind, CertifyOptions, ExperimentConfig,
    LipschitzChoice,
};
use wasspac::ot::{euclidean_metric, read_measure, w1_exact};

#[derive(Parser)]
#[command(name = "wasspac", version, about = "Wasserstein PAC-Bayes learners and bound certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess a raw dataset into the tab-separated dataset format.
    Ingest(IngestArgs),
    /// Batch learning: alg1 (priors + posterior), erm or l2.
    TrainBatch(RunArgs),
    /// Online learning: alg2 or ogd.
    TrainOnline(RunArgs),
    /// Itemised bound certificate for a run directory.
    Certify(CertifyArgs),
    /// Exact Wasserstein-1 distance between two measure files.
    Emd(EmdArgs),
    /// Merge row files into a table with median risks per method.
    Report(ReportArgs),
}

#[derive(Args, Default)]
struct SourceArgs {
    /// Dataset id, resolved inside --data-dir.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// IDX image file.
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// A dataset written by `ingest`.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    max_examples: Option<usize>,
}

impl SourceArgs {
    fn pairs(&self) -> Vec<(String, String)> {
        let mut p = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                p.push((k.to_string(), v));
            }
        };
        let path = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
        push("dataset", self.dataset.clone());
        push("data_dir", path(&self.data_dir));
        push("csv", path(&self.csv));
        push("schema", path(&self.schema));
        push("images", path(&self.images));
        push("labels", path(&self.labels));
        push("table", path(&self.table));
        push("max_examples", self.max_examples.map(|v| v.to_string()));
        p
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// key=value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    algorithm: Option<String>,
    /// linear or mlp.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    hidden_depth: Option<usize>,
    /// Single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// inv_m, inv_sqrt_m or a number.
    #[arg(long)]
    epsilon: Option<String>,
    /// K = floor(k_alpha * sqrt(m)), at least one.
    #[arg(long)]
    k_alpha: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// classes or classes_minus_one.
    #[arg(long)]
    normalization: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    min_iterations: Option<usize>,
    /// Keep the last iterate instead of the best one.
    #[arg(long)]
    final_iterate: bool,
    /// l2 only: inv_m, inv_sqrt_m or a number.
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    cocob_alpha: Option<f64>,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    barrier_t: Option<f64>,
    /// Disable the barrier term (online).
    #[arg(long)]
    no_barrier: bool,
    /// Keep COCOB state across examples (online).
    #[arg(long)]
    keep_optimizer: bool,
    #[arg(long)]
    eval_subsample: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self, online: bool) -> Result<ExperimentConfig, String> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p).map_err(|e| e.to_string())?,
            None => ExperimentConfig::default(),
        };
        if self.config.is_none() || self.algorithm.is_some() {
            let default = if online { "alg2" } else { "alg1" };
            cfg.algorithm = Algorithm::parse(self.algorithm.as_deref().unwrap_or(default)).map_err(|e| e.to_string())?;
        }
        let mut p = self.source.pairs();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                p.push((k.to_string(), v));
            }
        };
        push("model", self.model.clone());
        push("hidden_width", self.hidden_width.map(|v| v.to_string()));
        push("hidden_depth", self.hidden_depth.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("seeds", self.seeds.clone());
        push("epsilon", self.epsilon.clone());
        push("k_alpha", self.k_alpha.map(|v| v.to_string()));
        push("eta", self.eta.map(|v| v.to_string()));
        push("normalization", self.normalization.clone());
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("min_iterations", self.min_iterations.map(|v| v.to_string()));
        push("final_iterate", self.final_iterate.then(|| "true".into()));
        push("weight_decay", self.weight_decay.clone());
        push("cocob_alpha", self.cocob_alpha.map(|v| v.to_string()));
        push("inner_steps", self.inner_steps.map(|v| v.to_string()));
        push("barrier_t", self.barrier_t.map(|v| v.to_string()));
        push("barrier", self.no_barrier.then(|| "false".into()));
        push("reset_optimizer", self.keep_optimizer.then(|| "false".into()));
        push("eval_subsample", self.eval_subsample.map(|v| v.to_string()));
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        cfg.apply(&p).map_err(|e| e.to_string())?;
        if cfg.algorithm.is_online() != online {
            let cmd = if online { "train-online" } else { "train-batch" };
            return Err(format!("{cmd} does not run {}", cfg.algorithm));
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct CertifyArgs {
    /// Run directory (or its manifest.txt).
    run: PathBuf,
    /// nonneg, tight or heavy.
    #[arg(long, default_value = "nonneg")]
    bound: String,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// lemma (2 eta, linear only), unproved (sqrt(2) eta), empirical, or a value.
    #[arg(long, default_value = "lemma")]
    lipschitz: String,
    /// Fixed lambda for the heavy-tailed forms.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct EmdArgs {
    a: PathBuf,
    b: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    rows: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn ingest(args: &IngestArgs) -> Result<(), String> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply(&args.source.pairs()).map_err(|e| e.to_string())?;
    let data = cfg.load_data().map_err(|e| e.to_string())?;
    let file = std::fs::File::create(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    write_tsv(&data, std::io::BufWriter::new(file)).map_err(|e| e.to_string())?;
    println!(
        "rows={} dim={} classes={} dropped={} max_norm={:.6} hash={}",
        data.len(),
        data.dim(),
        data.num_classes,
        data.dropped_rows,
        data.max_row_norm(),
        data.provenance.hash
    );
    Ok(())
}

fn train(args: &RunArgs, online: bool) -> Result<(), String> {
    let cfg = args.config(online)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(cfg.dataset_id()));
    let data = cfg.load_data().map_err(|e| e.to_string())?;
    let res = run_on(&cfg, &data).map_err(|e| e.to_string())?;
    write_result(&out, &cfg, &res, &data).map_err(|e| e.to_string())?;
    let (a, b) = if online { ("C_S", "C_mu") } else { ("R_S", "R_mu") };
    println!("seed\t{a}\t{b}");
    for r in res.rows() {
        println!("{}\t{:.4}\t{:.4}", r.seed, r.train_risk, r.test_risk);
    }
    println!("median\t{:.4}\t{:.4}", res.median_train, res.median_test);
    println!("wrote {}", out.display());
    Ok(())
}

fn certify(args: &CertifyArgs) -> Result<(), String> {
    let opts = CertifyOptions {
        kind: CertKind::parse(&args.bound).map_err(|e| e.to_string())?,
        delta: args.delta,
        lipschitz: LipschitzChoice::parse(&args.lipschitz).map_err(|e| e.to_string())?,
        lambda: args.lambda,
    };
    let c = certify_run(&args.run, &opts).map_err(|e| e.to_string())?;
    print!("{}", c.table());
    Ok(())
}

fn emd(args: &EmdArgs) -> Result<(), String> {
    let a = read_measure(&args.a).map_err(|e| e.to_string())?;
    let b = read_measure(&args.b).map_err(|e| e.to_string())?;
    let d = w1_exact(&a, &b, euclidean_metric).map_err(|e| e.to_string())?;
    println!("{d:?}");
    Ok(())
}

fn report_cmd(args: &ReportArgs) -> Result<(), String> {
    let mut rows = Vec::new();
    for p in &args.rows {
        rows.extend(read_rows(p).map_err(|e| e.to_string())?);
    }
    let table = report(&rows);
    match &args.out {
        Some(p) => std::fs::write(p, &table).map_err(|e| format!("{}: {e}", p.display()))?,
        None => print!("{table}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), String> {
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::TrainBatch(a) => train(a, false),
        Command::TrainOnline(a) => train(a, true),
        Command::Certify(a) => certify(a),
        Command::Emd(a) => emd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
