//! `otsurv` command-line interface.
//!
//! Settings are resolved as built-in defaults, then the `--config` TOML file,
//! then command-line flags. Relative output paths are placed under
//! `--out-root` (or `OTSURV_OUT_ROOT`) when it is set.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use otsurv::bagdata::{generate_synthetic_dataset, load_bag, BagFormat, CaseManifest, Modality};
use otsurv::experiment::{
    ablate, bench_solver, cross_validate, km_analysis, read_risks_csv, write_bench_csv, write_km, ExperimentConfig,
};
use otsurv::microbatch::AttentionMode;
use otsurv::ot::{
    build_cost, solve_exact_emd, sinkhorn, unbalanced_sinkhorn, write_plan, Marginals, Metric, SinkhornSettings,
};
use otsurv::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "otsurv", version, about = "Optimal-transport co-attention survival models")]
struct Cli {
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, env = "OTSURV_OUT_ROOT")]
    out_root: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal survival dataset.
    GenSynth(GenSynthArgs),
    /// Solve one transport problem between two CSV bags.
    Solve(SolveArgs),
    /// Cross-validated training.
    Train(TrainArgs),
    /// Sweep micro-batch sizes and co-attention modes.
    Ablate(AblateArgs),
    /// Kaplan-Meier curves and log-rank test for a median risk split.
    Km(KmArgs),
    /// Time micro-batched transport solves for growing bags.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenSynthArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output directory.
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    #[arg(long)]
    n_cases: Option<usize>,
    /// Pathology instances per case.
    #[arg(long)]
    m_p: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Emd,
    Sinkhorn,
    Uot,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    L2,
    SquaredL2,
    Cosine,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::L2 => Metric::L2,
            MetricArg::SquaredL2 => Metric::SquaredL2,
            MetricArg::Cosine => Metric::CosineDistance,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Source bag (CSV or FBAG).
    #[arg(long)]
    source: PathBuf,
    /// Target bag (CSV or FBAG).
    #[arg(long)]
    target: PathBuf,
    #[arg(long, value_enum, default_value = "uot")]
    solver: SolverArg,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, value_enum, default_value = "l2")]
    metric: MetricArg,
    /// Divide the cost matrix by its largest entry.
    #[arg(long)]
    normalize_cost: bool,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Writes `<out>.csv` (coupling) and `<out>.json` (diagnostics).
    #[arg(long, default_value = "plan")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    micro_batch: Option<usize>,
    #[arg(long)]
    mode: Option<AttentionMode>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.folds {
            cfg.folds = v;
        }
        if let Some(v) = self.micro_batch {
            cfg.micro_batch = v;
        }
        if let Some(v) = self.mode {
            cfg.ot.mode = v;
        }
        if let Some(v) = self.epsilon {
            cfg.ot.epsilon = v;
        }
        if let Some(v) = self.tau {
            cfg.ot.tau = v;
        }
        if let Some(v) = self.lr {
            cfg.optimizer.lr = v;
        }
        cfg.validate()
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Dataset manifest JSON.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "train")]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    overrides: TrainOverrides,
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated micro-batch sizes.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256")]
    m_values: Vec<usize>,
    /// Comma-separated modes (umbot, emd, dense).
    #[arg(long, value_delimiter = ',', default_value = "umbot")]
    modes: Vec<AttentionMode>,
    #[arg(long, default_value = "ablate")]
    out: PathBuf,
}

#[derive(Args)]
struct KmArgs {
    /// CSV with `case_id` and `risk` columns.
    #[arg(long)]
    risks: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Writes `<out>_km.csv` and `<out>_logrank.json`.
    #[arg(long, default_value = "km")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated bag sizes.
    #[arg(long, value_delimiter = ',', default_value = "2048,4096,8192")]
    m_values: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    m: usize,
    #[arg(long, default_value_t = 32)]
    d: usize,
    /// Genomic instances per bag.
    #[arg(long, default_value_t = 6)]
    m_g: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Format(_) | Error::Config(_) | Error::Parameter(_) => 2,
        Error::Data(_) | Error::Shape(_) | Error::Constraint(_) | Error::UndefinedMetric(_) => 3,
        Error::Solver(_) => 4,
        Error::Numeric(_) | Error::Domain(_) => 5,
        Error::Io { .. } | Error::State(_) => 1,
    }
}

struct Ctx {
    out_root: Option<PathBuf>,
}

impl Ctx {
    fn out(&self, p: &Path) -> PathBuf {
        match &self.out_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })
        }
        _ => Ok(()),
    }
}

fn load_manifest(path: &Path) -> Result<(CaseManifest, Vec<otsurv::bagdata::LoadedCase>)> {
    let manifest = CaseManifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cases = manifest.load_cases(base)?;
    Ok((manifest, cases))
}

fn gen_synth(ctx: &Ctx, a: &GenSynthArgs) -> Result<serde_json::Value> {
    let cfg = a.cfg.load()?;
    let mut spec = cfg.data.clone();
    if let Some(s) = a.cfg.seed {
        spec.seed = s;
    }
    if let Some(n) = a.n_cases {
        spec.n_cases = n;
    }
    if let Some(m) = a.m_p {
        spec.m_p = m;
    }
    let ds = generate_synthetic_dataset(&spec, &ctx.out(&a.out))?;
    println!("{}", ds.manifest_path.display());
    Ok(json!({ "manifest": ds.manifest_path, "n_cases": ds.cases.len() }))
}

fn solve(ctx: &Ctx, a: &SolveArgs) -> Result<serde_json::Value> {
    let src = load_bag(&a.source, BagFormat::from_path(&a.source), Modality::Pathology)?;
    let tgt = load_bag(&a.target, BagFormat::from_path(&a.target), Modality::Genomic)?;
    let mut cost = build_cost(src.features().view(), tgt.features().view(), a.metric.into())?;
    if a.normalize_cost {
        cost = cost.normalized();
    }
    let marg = Marginals::uniform(src.len(), tgt.len());
    let settings = SinkhornSettings {
        epsilon: a.epsilon,
        max_iters: a.max_iters,
        tol: a.tol,
        log_domain: None,
    };
    let plan = match a.solver {
        SolverArg::Emd => solve_exact_emd(&cost, &marg)?,
        SolverArg::Sinkhorn => sinkhorn(&cost, &marg, &settings)?,
        SolverArg::Uot => unbalanced_sinkhorn(&cost, &marg, a.tau, &settings)?,
    };
    let out = ctx.out(&a.out);
    ensure_parent(&out)?;
    write_plan(&plan, &out)?;
    Ok(json!({
        "prefix": out,
        "objective": plan.objective_value,
        "converged": plan.converged,
        "iterations": plan.iterations,
    }))
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<serde_json::Value> {
    let mut cfg = a.cfg.load()?;
    a.overrides.apply(&mut cfg)?;
    let (_, cases) = load_manifest(&a.manifest)?;
    let out = ctx.out(&a.out);
    let report = cross_validate(&cases, &cfg, Some(&out))?;
    Ok(json!({
        "report": out.join("report.json"),
        "risks": out.join("risks.csv"),
        "mean_c_index": report.mean_c_index,
        "std_c_index": report.std_c_index,
        "logrank_p": report.pooled_logrank.p_value,
    }))
}

fn ablate_cmd(ctx: &Ctx, a: &AblateArgs) -> Result<serde_json::Value> {
    let mut cfg = a.cfg.load()?;
    a.overrides.apply(&mut cfg)?;
    let (_, cases) = load_manifest(&a.manifest)?;
    let out = ctx.out(&a.out);
    let report = ablate(&cases, &cfg, &a.m_values, &a.modes, Some(&out))?;
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    Ok(json!({
        "rows": out.join("ablation.csv"),
        "summary": out.join("ablation_summary.csv"),
        "n_rows": report.rows.len(),
        "failed_cells": failed,
    }))
}

fn km(ctx: &Ctx, a: &KmArgs) -> Result<serde_json::Value> {
    let risks = read_risks_csv(&a.risks)?;
    let manifest = CaseManifest::load(&a.manifest)?;
    let analysis = km_analysis(&risks, &manifest)?;
    let out = ctx.out(&a.out);
    ensure_parent(&out)?;
    write_km(&analysis, &out)?;
    Ok(json!({
        "statistic": analysis.logrank.statistic,
        "p_value": analysis.logrank.p_value,
        "degenerate_split": analysis.logrank.degenerate_split,
    }))
}

fn bench(ctx: &Ctx, a: &BenchArgs) -> Result<serde_json::Value> {
    let cfg = ExperimentConfig::default();
    let rows = bench_solver(&a.m_values, a.m, a.d, a.m_g, &cfg.ot, a.repeats, a.seed)?;
    let out = ctx.out(&a.out);
    ensure_parent(&out)?;
    write_bench_csv(&out, &rows)?;
    Ok(json!({ "out": out, "rows": rows }))
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    let ctx = Ctx {
        out_root: cli.out_root.clone(),
    };
    match &cli.command {
        Command::GenSynth(a) => gen_synth(&ctx, a),
        Command::Solve(a) => solve(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Ablate(a) => ablate_cmd(&ctx, a),
        Command::Km(a) => km(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(summary) => {
            if !matches!(cli.command, Command::GenSynth(_)) {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::from(exit_code(&e))
        }
    }
}
