//! The `cmta` command-line tool: `train`, `eval`, `stratify` and `ablate`.
//!
//! Exit codes: 0 success, 1 other failure, 2 unreadable cohort or
//! checkpoint, 3 non-finite loss (a `diagnostic.json` is written), 4 input
//! shape mismatch, 5 undefined statistic, 6 degenerate risk groups, 64 bad
//! command line.

mod report;

pub use report::SCHEMA_VERSION;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::attention::AttentionMode;
use crate::data::{generate_synthetic_cohort, load_cohort, Cohort, PatientRecord, SyntheticSpec};
use crate::error::{CmtaError, Result};
use crate::fsio::write_atomic;
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use crate::survival::{compute_bins, kaplan_meier, logrank_test, stratify, AlignmentMetric, RiskGroup};
use crate::train::{cindex_of, cross_validate, fold_seed, predict, probe_gradients, FoldOutcome, TrainConfig};

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const UNREADABLE_INPUT: i32 = 2;
    pub const NON_FINITE_LOSS: i32 = 3;
    pub const SHAPE_MISMATCH: i32 = 4;
    pub const UNDEFINED_STATISTIC: i32 = 5;
    pub const DEGENERATE_GROUPS: i32 = 6;
    pub const USAGE: i32 = 64;
}

#[derive(Debug, Parser)]
#[command(name = "cmta", version, about = "Multimodal survival analysis with cross-modal translation and alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cross-validated training; writes checkpoints, a loss log and metrics.
    Train(TrainArgs),
    /// Scores a cohort with a checkpoint.
    Eval(EvalArgs),
    /// Median-split risk groups, Kaplan-Meier curves and a logrank test.
    Stratify(StratifyArgs),
    /// Trains every ablation variant on identical folds.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("cohort").required(true).args(["manifest", "synthetic"])))]
pub struct CohortArgs {
    /// JSON-lines cohort manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// TOML synthetic-cohort spec.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    #[arg(long, default_value_t = 8)]
    pub landmarks: usize,
    #[arg(long, default_value_t = 6)]
    pub pinv_iters: usize,
    /// Self-attention kernel: nystrom or exact.
    #[arg(long, default_value = "nystrom", value_parser = parse_attention)]
    pub attention: AttentionMode,
    #[arg(long, default_value_t = 4)]
    pub bins: usize,
    /// Fusion head width; defaults to --dim.
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Alignment metric: l1, mse, cosine or kl.
    #[arg(long, default_value = "l1", value_parser = parse_metric)]
    pub metric: AlignmentMetric,
    #[arg(long)]
    pub no_cross_modal: bool,
    #[arg(long)]
    pub no_alignment: bool,
    #[arg(long)]
    pub no_detach: bool,
    #[arg(long)]
    pub no_ppeg: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("risks").required(true).args(["checkpoint", "from_train"])))]
#[command(group(ArgGroup::new("cohort").args(["manifest", "synthetic"])))]
pub struct StratifyArgs {
    /// Score the cohort with this checkpoint.
    #[arg(long, requires = "cohort")]
    pub checkpoint: Option<PathBuf>,
    /// Use the out-of-fold risks recorded by `cmta train` in this directory.
    #[arg(long)]
    pub from_train: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Repeat every variant under each alignment metric.
    #[arg(long)]
    pub sweep_metrics: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_metric(s: &str) -> std::result::Result<AlignmentMetric, String> {
    s.parse().map_err(|e: CmtaError| e.to_string())
}

fn parse_attention(s: &str) -> std::result::Result<AttentionMode, String> {
    match s {
        "exact" => Ok(AttentionMode::Exact),
        "nystrom" => Ok(AttentionMode::Nystrom),
        _ => Err(format!("unknown attention mode {s:?} (expected exact or nystrom)")),
    }
}

/// A failed command: exit code plus message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: CmtaError,
}

impl From<CmtaError> for Failure {
    fn from(error: CmtaError) -> Self {
        let code = match &error {
            CmtaError::NonFiniteLoss { .. } => exit::NON_FINITE_LOSS,
            CmtaError::Dimension { .. } => exit::SHAPE_MISMATCH,
            CmtaError::UndefinedStatistic(_) => exit::UNDEFINED_STATISTIC,
            _ => exit::FAILURE,
        };
        Failure { code, error }
    }
}

fn unreadable(error: CmtaError) -> Failure {
    Failure {
        code: exit::UNREADABLE_INPUT,
        error,
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Stratify(a) => cmd_stratify(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    };
    match result {
        Ok(()) => exit::OK,
        Err(f) => {
            eprintln!("cmta: {}", f.error);
            f.code
        }
    }
}

/// Fold-level worker count: `CMTA_THREADS` if set, else the machine's
/// available parallelism.
pub fn thread_budget() -> usize {
    std::env::var("CMTA_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn open_cohort(manifest: Option<&Path>, synthetic: Option<&Path>) -> std::result::Result<Cohort, Failure> {
    let loaded = match (manifest, synthetic) {
        (Some(m), _) => load_cohort(m),
        (None, Some(s)) => std::fs::read_to_string(s)
            .map_err(CmtaError::from)
            .and_then(|text| SyntheticSpec::from_toml(&text))
            .and_then(|spec| generate_synthetic_cohort(&spec)),
        (None, None) => Err(CmtaError::Config("a cohort (--manifest or --synthetic) is required".into())),
    };
    loaded.map_err(unreadable)
}

fn model_config(a: &ModelArgs, cohort: &Cohort) -> Result<ModelConfig> {
    let cfg = ModelConfig {
        dim: a.dim,
        heads: a.heads,
        landmarks: a.landmarks,
        pinv_iters: a.pinv_iters,
        attention: a.attention,
        bins: a.bins,
        pathology_width: cohort.pathology_width(),
        genomic_widths: cohort.genomic_widths(),
        mlp_hidden: a.mlp_hidden.unwrap_or(a.dim),
        use_cross_modal: !a.no_cross_modal,
        use_alignment: !a.no_alignment,
        detach_targets: !a.no_detach,
        use_ppeg: !a.no_ppeg,
        alignment_metric: a.metric,
        alpha: a.alpha,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(a: &OptimArgs, epochs: usize) -> Result<TrainConfig> {
    let tc = TrainConfig {
        lr: a.lr,
        weight_decay: a.weight_decay,
        epochs,
        seed: a.seed,
        ..TrainConfig::default()
    };
    tc.validate()?;
    Ok(tc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub patients: usize,
    pub censored: usize,
    pub pathology_width: usize,
    pub genomic_widths: Vec<usize>,
}

fn summary(c: &Cohort) -> CohortSummary {
    CohortSummary {
        patients: c.len(),
        censored: c.censored().iter().filter(|&&x| x).count(),
        pathology_width: c.pathology_width(),
        genomic_widths: c.genomic_widths(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub bin_edges: Vec<f64>,
    pub train_cindex: f64,
    pub test_cindex: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub checkpoint: String,
}

/// Out-of-fold prediction for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub patient_id: String,
    pub fold: Option<usize>,
    pub time_months: f64,
    pub censored: bool,
    pub risk: f64,
    pub hazards: Vec<f64>,
    pub survival: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub schema_version: u32,
    pub command: String,
    pub model: ModelConfig,
    pub optimiser: TrainConfig,
    pub folds: usize,
    pub cohort: CohortSummary,
    pub fold_metrics: Vec<FoldMetrics>,
    pub train_cindex_mean: f64,
    pub test_cindex_mean: f64,
    /// Population standard deviation across folds.
    pub test_cindex_std: f64,
    pub out_of_fold: Vec<PatientPrediction>,
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn out_of_fold(cohort: &Cohort, results: &[FoldOutcome]) -> Vec<PatientPrediction> {
    let mut rows = Vec::with_capacity(cohort.len());
    for f in results {
        for (&i, o) in f.test_indices.iter().zip(&f.test_outputs) {
            let r = &cohort.records()[i];
            rows.push((i, prediction(r, Some(f.fold), o)));
        }
    }
    rows.sort_by_key(|(i, _)| *i);
    rows.into_iter().map(|(_, p)| p).collect()
}

fn prediction(r: &PatientRecord, fold: Option<usize>, o: &crate::survival::SurvivalOutput) -> PatientPrediction {
    PatientPrediction {
        patient_id: r.patient_id.clone(),
        fold,
        time_months: r.time_months,
        censored: r.censored,
        risk: o.risk,
        hazards: o.hazards.clone(),
        survival: o.survival.clone(),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    schema_version: u32,
    error: String,
    patient_id: &'a str,
    epoch: usize,
    step: usize,
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let cohort = open_cohort(a.cohort.manifest.as_deref(), a.cohort.synthetic.as_deref())?;
    let cfg = model_config(&a.model, &cohort)?;
    let tc = train_config(&a.optim, a.optim.epochs)?;
    create_out(&a.out)?;
    let results = match cross_validate(&cohort, &cfg, &tc, a.optim.folds, thread_budget()) {
        Ok(r) => r,
        Err(e @ CmtaError::NonFiniteLoss { .. }) => {
            if let CmtaError::NonFiniteLoss { patient_id, epoch, step } = &e {
                let diag = Diagnostic {
                    schema_version: SCHEMA_VERSION,
                    error: e.to_string(),
                    patient_id,
                    epoch: *epoch,
                    step: *step,
                };
                report::write_json(&a.out.join("diagnostic.json"), &diag)?;
            }
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let metrics = write_train_outputs(&a.out, &cohort, &cfg, &tc, a.optim.folds, &results)?;
    eprintln!(
        "test c-index {:.4} ± {:.4} over {} folds",
        metrics.test_cindex_mean, metrics.test_cindex_std, a.optim.folds
    );
    Ok(())
}

fn write_train_outputs(out: &Path, cohort: &Cohort, cfg: &ModelConfig, tc: &TrainConfig, k: usize, results: &[FoldOutcome]) -> Result<TrainMetrics> {
    let mut fold_metrics = Vec::with_capacity(results.len());
    for f in results {
        let name = format!("fold_{}.ckpt", f.fold);
        save_checkpoint(&out.join(&name), cfg, &f.params)?;
        fold_metrics.push(FoldMetrics {
            fold: f.fold,
            n_train: f.train_indices.len(),
            n_test: f.test_indices.len(),
            bin_edges: f.edges.edges().to_vec(),
            train_cindex: f.train_cindex,
            test_cindex: f.test_cindex,
            initial_loss: f.log.first().map_or(f64::NAN, |e| e.total),
            final_loss: f.log.last().map_or(f64::NAN, |e| e.total),
            checkpoint: name,
        });
    }
    let logs: Vec<(usize, &[_])> = results.iter().map(|f| (f.fold, f.log.as_slice())).collect();
    write_atomic(&out.join("loss_log.csv"), report::loss_log_csv(&logs).as_bytes())?;
    let tests: Vec<f64> = results.iter().map(|f| f.test_cindex).collect();
    let trains: Vec<f64> = results.iter().map(|f| f.train_cindex).collect();
    let (test_mean, test_std) = mean_std(&tests);
    let metrics = TrainMetrics {
        schema_version: SCHEMA_VERSION,
        command: "train".into(),
        model: cfg.clone(),
        optimiser: tc.clone(),
        folds: k,
        cohort: summary(cohort),
        fold_metrics,
        train_cindex_mean: mean_std(&trains).0,
        test_cindex_mean: test_mean,
        test_cindex_std: test_std,
        out_of_fold: out_of_fold(cohort, results),
    };
    report::write_json(&out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub schema_version: u32,
    pub command: String,
    pub checkpoint: String,
    pub c_index: f64,
    pub patients: Vec<PatientPrediction>,
}

fn load_model(path: &Path) -> std::result::Result<(ModelConfig, ModelParams), Failure> {
    load_checkpoint(path).map_err(unreadable)
}

fn score(cohort: &Cohort, cfg: &ModelConfig, params: &ModelParams) -> Result<Vec<PatientPrediction>> {
    let records: Vec<&PatientRecord> = cohort.records().iter().collect();
    let outputs = predict(params, cfg, &records)?;
    Ok(records.iter().zip(&outputs).map(|(r, o)| prediction(r, None, o)).collect())
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let (cfg, params) = load_model(&a.checkpoint)?;
    let cohort = open_cohort(a.cohort.manifest.as_deref(), a.cohort.synthetic.as_deref())?;
    for r in cohort.records() {
        cfg.check_record(r)?;
    }
    let patients = score(&cohort, &cfg, &params)?;
    let records: Vec<&PatientRecord> = cohort.records().iter().collect();
    let outputs: Vec<_> = patients
        .iter()
        .map(|p| crate::survival::SurvivalOutput::from_hazards(p.hazards.clone()))
        .collect();
    let c_index = cindex_of(&outputs, &records)?;
    create_out(&a.out)?;
    let metrics = EvalMetrics {
        schema_version: SCHEMA_VERSION,
        command: "eval".into(),
        checkpoint: a.checkpoint.display().to_string(),
        c_index,
        patients,
    };
    report::write_json(&a.out.join("eval.json"), &metrics)?;
    eprintln!("c-index {c_index:.4} on {} patients", cohort.len());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub patient_id: String,
    pub risk: f64,
    pub group: RiskGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogrankReport {
    pub schema_version: u32,
    pub command: String,
    pub source: String,
    pub n_low: usize,
    pub n_high: usize,
    pub chi_square: f64,
    pub p_value: f64,
    pub observed_high: f64,
    pub expected_high: f64,
    pub variance: f64,
    pub assignments: Vec<GroupAssignment>,
}

/// Median split, per-group Kaplan-Meier curves and the logrank test,
/// written as `km.csv`, `km.svg` and `logrank.json`.
pub fn stratify_outputs(out: &Path, source: &str, rows: &[PatientPrediction]) -> std::result::Result<LogrankReport, Failure> {
    let risks: Vec<f64> = rows.iter().map(|p| p.risk).collect();
    let groups = stratify(&risks)?;
    let pick = |g: RiskGroup| -> (Vec<f64>, Vec<bool>) {
        rows.iter().zip(&groups).filter(|(_, &x)| x == g).map(|(p, _)| (p.time_months, p.censored)).unzip()
    };
    let (tl, cl) = pick(RiskGroup::Low);
    let (th, ch) = pick(RiskGroup::High);
    if tl.is_empty() || th.is_empty() {
        return Err(Failure {
            code: exit::DEGENERATE_GROUPS,
            error: CmtaError::DegenerateInput(format!(
                "median split left {} low-risk and {} high-risk patients",
                tl.len(),
                th.len()
            )),
        });
    }
    let km_low = kaplan_meier(&tl, &cl)?;
    let km_high = kaplan_meier(&th, &ch)?;
    let lr = logrank_test(&th, &ch, &tl, &cl)?;
    create_out(out)?;
    let curves = [(RiskGroup::Low, &km_low), (RiskGroup::High, &km_high)];
    write_atomic(&out.join("km.csv"), report::km_csv(&curves).as_bytes())?;
    write_atomic(&out.join("km.svg"), report::km_svg(&curves, lr.p_value).as_bytes())?;
    let rep = LogrankReport {
        schema_version: SCHEMA_VERSION,
        command: "stratify".into(),
        source: source.into(),
        n_low: tl.len(),
        n_high: th.len(),
        chi_square: lr.chi_square,
        p_value: lr.p_value,
        observed_high: lr.observed_a,
        expected_high: lr.expected_a,
        variance: lr.variance,
        assignments: rows
            .iter()
            .zip(&groups)
            .map(|(p, &group)| GroupAssignment {
                patient_id: p.patient_id.clone(),
                risk: p.risk,
                group,
            })
            .collect(),
    };
    report::write_json(&out.join("logrank.json"), &rep)?;
    Ok(rep)
}

fn cmd_stratify(a: &StratifyArgs) -> CmdResult {
    let (source, rows) = match (&a.checkpoint, &a.from_train) {
        (Some(ckpt), _) => {
            let (cfg, params) = load_model(ckpt)?;
            let cohort = open_cohort(a.manifest.as_deref(), a.synthetic.as_deref())?;
            for r in cohort.records() {
                cfg.check_record(r)?;
            }
            (ckpt.display().to_string(), score(&cohort, &cfg, &params)?)
        }
        (None, Some(dir)) => {
            let path = dir.join("metrics.json");
            let text = std::fs::read_to_string(&path).map_err(|e| unreadable(e.into()))?;
            let m: TrainMetrics = serde_json::from_str(&text).map_err(|e| {
                unreadable(CmtaError::Format {
                    path: path.display().to_string(),
                    offset: 0,
                    reason: e.to_string(),
                })
            })?;
            (format!("{} (out-of-fold)", path.display()), m.out_of_fold)
        }
        (None, None) => return Err(CmtaError::Config("--checkpoint or --from-train is required".into()).into()),
    };
    let rep = stratify_outputs(&a.out, &source, &rows)?;
    eprintln!("logrank χ² {:.4}, p {:.3e} ({} low / {} high)", rep.chi_square, rep.p_value, rep.n_low, rep.n_high);
    Ok(())
}

/// The five ablation rows, in report order.
pub const VARIANTS: [&str; 5] = ["full", "no-cross-modal", "no-alignment", "no-detach", "no-ppeg"];

pub fn variant_config(base: &ModelConfig, variant: &str) -> Result<ModelConfig> {
    let mut cfg = base.clone();
    match variant {
        "full" => {}
        "no-cross-modal" => cfg.use_cross_modal = false,
        "no-alignment" => cfg.use_alignment = false,
        "no-detach" => cfg.detach_targets = false,
        "no-ppeg" => cfg.use_ppeg = false,
        other => return Err(CmtaError::Config(format!("unknown ablation variant {other:?}"))),
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub metric: AlignmentMetric,
    pub use_cross_modal: bool,
    pub use_alignment: bool,
    pub detach_targets: bool,
    pub use_ppeg: bool,
    pub alpha_effective: f64,
    pub train_cindex_mean: f64,
    pub test_cindex_mean: f64,
    pub test_cindex_std: f64,
    pub fold_test_cindex: Vec<f64>,
    /// Parameters reached by the total-loss gradient.
    pub reachable_params: usize,
    /// Parameters the total-loss gradient does not reach.
    pub unreachable_params: Vec<String>,
    pub sim_reachable_params: usize,
    pub sim_grad_norm: f64,
    /// Alignment gradient flowing back through the targets `p`, `g`.
    pub target_path_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub command: String,
    pub base_model: ModelConfig,
    pub optimiser: TrainConfig,
    pub folds: usize,
    pub rows: Vec<AblationRow>,
}

/// Trains every variant (optionally under every metric) on the same folds
/// and seeds and probes each variant's gradient reachability on the first
/// patient.
pub fn run_ablation(cohort: &Cohort, base: &ModelConfig, tc: &TrainConfig, k: usize, sweep: bool, threads: usize) -> Result<AblationReport> {
    let metrics: Vec<AlignmentMetric> = if sweep { AlignmentMetric::ALL.to_vec() } else { vec![base.alignment_metric] };
    let edges = compute_bins(&cohort.times(), &cohort.censored(), base.bins)?;
    let mut rows = Vec::new();
    for variant in VARIANTS {
        for &metric in &metrics {
            let cfg = ModelConfig {
                alignment_metric: metric,
                ..variant_config(base, variant)?
            };
            let params = ModelParams::init(&cfg, fold_seed(tc.seed, 0))?;
            let probe = probe_gradients(&cohort.records()[0], &params, &cfg, &edges)?;
            let unreachable = params
                .named()
                .into_iter()
                .map(|(n, _)| n)
                .filter(|n| !probe.reachable.contains(n))
                .collect();
            let results = cross_validate(cohort, &cfg, tc, k, threads)?;
            let tests: Vec<f64> = results.iter().map(|f| f.test_cindex).collect();
            let trains: Vec<f64> = results.iter().map(|f| f.train_cindex).collect();
            let (mean, std) = mean_std(&tests);
            rows.push(AblationRow {
                variant: variant.into(),
                metric,
                use_cross_modal: cfg.use_cross_modal,
                use_alignment: cfg.use_alignment,
                detach_targets: cfg.detach_targets,
                use_ppeg: cfg.use_ppeg,
                alpha_effective: cfg.alpha_effective(),
                train_cindex_mean: mean_std(&trains).0,
                test_cindex_mean: mean,
                test_cindex_std: std,
                fold_test_cindex: tests,
                reachable_params: probe.reachable.len(),
                unreachable_params: unreachable,
                sim_reachable_params: probe.sim_reachable.len(),
                sim_grad_norm: probe.sim_grad_norm,
                target_path_grad_norm: probe.target_path_grad_norm,
            });
        }
    }
    Ok(AblationReport {
        schema_version: SCHEMA_VERSION,
        command: "ablate".into(),
        base_model: base.clone(),
        optimiser: tc.clone(),
        folds: k,
        rows,
    })
}

fn cmd_ablate(a: &AblateArgs) -> CmdResult {
    let cohort = open_cohort(a.cohort.manifest.as_deref(), a.cohort.synthetic.as_deref())?;
    let base = model_config(&a.model, &cohort)?;
    let tc = train_config(&a.optim, a.optim.epochs)?;
    let report = run_ablation(&cohort, &base, &tc, a.optim.folds, a.sweep_metrics, thread_budget())?;
    create_out(&a.out)?;
    report::write_json(&a.out.join("ablation.json"), &report)?;
    for r in &report.rows {
        eprintln!("{:<15} {:<6} test c-index {:.4} ± {:.4}", r.variant, r.metric.as_str(), r.test_cindex_mean, r.test_cindex_std);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_64() {
        assert_eq!(run(["cmta", "train"]), exit::USAGE);
        assert_eq!(run(["cmta", "frobnicate"]), exit::USAGE);
        assert_eq!(run(["cmta", "--help"]), exit::OK);
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn variants_flip_one_flag_each() {
        let base = ModelConfig::default();
        let flags = |c: &ModelConfig| [c.use_cross_modal, c.use_alignment, c.detach_targets, c.use_ppeg];
        assert_eq!(flags(&variant_config(&base, "full").unwrap()), [true; 4]);
        for (i, v) in VARIANTS[1..].iter().enumerate() {
            let f = flags(&variant_config(&base, v).unwrap());
            assert_eq!(f.iter().filter(|&&b| !b).count(), 1);
            assert!(!f[i]);
        }
        assert!(variant_config(&base, "nope").is_err());
    }
}
