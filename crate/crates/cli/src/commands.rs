//! Subcommand bodies. Each one merges its flags over the config file, runs
//! the library operation and writes its artifacts next to a manifest.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use smoothrank_core::baseline::{
    train_logistic_en, window_labels, ElasticNetParams, Exclusion, LogisticModel,
};
use smoothrank_core::evalstats::{
    bootstrap_auc_ci, bootstrap_ci, interval_deltas, soa_scores, ttest_one_tailed, DeltaMode,
    IntervalDeltas, Statistic, Tail, DEFAULT_RESAMPLES,
};
use smoothrank_core::experiments::{
    cohort_auc, repro_table1, subsample_smoothness, sweep_lambda_s, SweepConfig, Table1Config,
    PROBE_TEMP_STATES,
};
use smoothrank_core::io;
use smoothrank_core::ldss::{train_ldss, LdssParams, LdssProblem};
use smoothrank_core::nldss::{train_nldss, NldssParams, ScoreProblem};
use smoothrank_core::seed::derive_seed;
use smoothrank_core::simflu::{simulate_cohort, CohortSummary, Regime, SimConfig};
use smoothrank_core::supervision::{
    coarse_grade, grade_cohort, sample_dominance_pairs, sample_stage_pairs,
};
use smoothrank_core::trendfeat::{trend_features_per_sample, ScoreSeries, TrendConfig};
use smoothrank_core::{Cohort, ComparisonPair, ScoreModel, SmoothnessPair};

use crate::runner::{execute, merged, write_csv, write_json, Common};

fn is_false(b: &bool) -> bool {
    !*b
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| anyhow!("missing input path '{key}' (flag or config key)"))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn load_cohort(data: &Option<PathBuf>, treatments: &Option<PathBuf>) -> Result<Cohort> {
    let data = required(data, "data")?;
    let cohort =
        io::read_dataset_csv(open(data)?).with_context(|| format!("reading {}", data.display()))?;
    match treatments {
        Some(p) => io::read_treatments_csv(open(p)?, cohort)
            .with_context(|| format!("reading {}", p.display())),
        None => Ok(cohort),
    }
}

fn load_comparisons(path: &Option<PathBuf>) -> Result<Vec<ComparisonPair>> {
    let p = required(path, "pairs")?;
    io::read_comparison_pairs(open(p)?).with_context(|| format!("reading {}", p.display()))
}

/// Smoothness pairs from a file, or every consecutive pair of the cohort.
fn load_smoothness(path: &Option<PathBuf>, cohort: &Cohort) -> Result<Vec<SmoothnessPair>> {
    match path {
        Some(p) => {
            io::read_smoothness_pairs(open(p)?).with_context(|| format!("reading {}", p.display()))
        }
        None => Ok(cohort.smoothness_pairs()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// A severity model or a logistic baseline, told apart by the `kind` tag.
enum Scorer {
    Dss(ScoreModel),
    Logistic(LogisticModel),
}

impl Scorer {
    fn load(path: &Option<PathBuf>) -> Result<Self> {
        let p = required(path, "model")?;
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let v: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        if v.get("kind").is_some() {
            Ok(Scorer::Dss(ScoreModel::from_json(&text)?))
        } else {
            Ok(Scorer::Logistic(
                serde_json::from_value(v).with_context(|| format!("parsing {}", p.display()))?,
            ))
        }
    }

    fn score(&self, x: &[f64]) -> smoothrank_core::Result<f64> {
        match self {
            Scorer::Dss(m) => m.score(x),
            // Monotone in the probability, so rankings are unchanged.
            Scorer::Logistic(m) => m.affine_score(x),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Score series of one patient on the clock since admission, which precedes
/// the first sample by `admission_lead`.
fn series_of(
    t: &smoothrank_core::Trajectory,
    scorer: &Scorer,
    admission_lead: f64,
) -> Result<ScoreSeries> {
    let admitted = t.samples[0].time - admission_lead;
    let times = t.samples.iter().map(|s| s.time - admitted).collect();
    let scores = t
        .samples
        .iter()
        .map(|s| scorer.score(&s.features))
        .collect::<smoothrank_core::Result<_>>()?;
    ScoreSeries::new(times, scores, 0.0).with_context(|| format!("patient {}", t.patient_id))
}

// simulate

#[derive(Debug, clap::Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Number of patients.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Probability of treating a severe temperature state.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_temp: Option<f64>,
    /// Probability of treating a severe WBC state.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_wbc: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Append the coarse grade as a third feature.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub append_grade: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct SimulateConfig {
    seed: u64,
    n: usize,
    rho_temp: f64,
    rho_wbc: f64,
    #[serde(flatten)]
    sim: SimConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 1000,
            rho_temp: 0.0,
            rho_wbc: 0.0,
            sim: SimConfig::default(),
        }
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let (cfg, full): (SimulateConfig, _) = merged(&args.common, args)?;
    execute("simulate", &args.common.out, &full, |out| {
        let regime = Regime::new(cfg.rho_temp, cfg.rho_wbc)?;
        let cohort = simulate_cohort(cfg.n, &regime, cfg.seed, &cfg.sim)?;
        let data = out.join("dataset.csv");
        io::write_dataset_csv(&cohort, create(&data)?)?;
        let treatments = out.join("treatments.csv");
        io::write_treatments_csv(&cohort, create(&treatments)?)?;
        let summary = out.join("summary.json");
        let s = CohortSummary::of(&cohort);
        write_json(&summary, &s)?;
        Ok(vec![data, treatments, summary])
    })
}

// gen-pairs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// Measurement dominance with a gap of at least two states.
    Dominance,
    /// Balanced pairs across coarse grades.
    Stage,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct GenPairsArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Dataset CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<PairKind>,
    /// Number of dominance pairs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_pairs: Option<usize>,
    /// Stage pairs per ordered grade combination.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_combo: Option<usize>,
    /// Keep at most this many smoothness pairs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_smoothness_pairs: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct GenPairsConfig {
    seed: u64,
    data: Option<PathBuf>,
    kind: PairKind,
    n_pairs: usize,
    coords: usize,
    per_combo: usize,
    grades: Option<Vec<u8>>,
    max_smoothness_pairs: Option<usize>,
}

impl Default for GenPairsConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            kind: PairKind::Dominance,
            n_pairs: 6000,
            coords: smoothrank_core::supervision::MEASUREMENT_COORDS,
            per_combo: 2000,
            grades: None,
            max_smoothness_pairs: None,
        }
    }
}

pub fn gen_pairs(args: &GenPairsArgs) -> Result<()> {
    let (cfg, full): (GenPairsConfig, _) = merged(&args.common, args)?;
    execute("gen-pairs", &args.common.out, &full, |out| {
        let cohort = load_cohort(&cfg.data, &None)?;
        let ordering = match cfg.kind {
            PairKind::Dominance => sample_dominance_pairs(
                &cohort,
                cfg.n_pairs,
                derive_seed(cfg.seed, &[0]),
                cfg.coords,
            )?,
            PairKind::Stage => {
                let graded = grade_cohort(&cohort, coarse_grade)?;
                sample_stage_pairs(
                    &graded,
                    cfg.grades.as_deref(),
                    cfg.per_combo,
                    derive_seed(cfg.seed, &[0]),
                )?
            }
        };
        let smoothing = subsample_smoothness(
            cohort.smoothness_pairs(),
            cfg.max_smoothness_pairs,
            derive_seed(cfg.seed, &[1]),
        );
        let cmp = out.join("comparisons.jsonl");
        let mut w = create(&cmp)?;
        io::write_comparison_pairs(&ordering, &mut w)?;
        w.flush()?;
        let sm = out.join("smoothness.jsonl");
        let mut w = create(&sm)?;
        io::write_smoothness_pairs(&smoothing, &mut w)?;
        w.flush()?;
        Ok(vec![cmp, sm])
    })
}

// train-ldss

#[derive(Debug, clap::Args, Serialize)]
pub struct TrainLdssArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Comparison pairs (JSON lines).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    /// Smoothness pairs (JSON lines); defaults to all consecutive samples.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_o: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub huber_h: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainLdssConfig {
    seed: u64,
    data: Option<PathBuf>,
    pairs: Option<PathBuf>,
    smoothness: Option<PathBuf>,
    #[serde(flatten)]
    params: LdssParams,
}

pub fn train_ldss_cmd(args: &TrainLdssArgs) -> Result<()> {
    let (cfg, full): (TrainLdssConfig, _) = merged(&args.common, args)?;
    execute("train-ldss", &args.common.out, &full, |out| {
        let cohort = load_cohort(&cfg.data, &None)?;
        let ordering = load_comparisons(&cfg.pairs)?;
        let smoothing = load_smoothness(&cfg.smoothness, &cohort)?;
        let p = &cfg.params;
        let problem = LdssProblem::from_pairs(
            &cohort, &ordering, &smoothing, p.lambda_o, p.lambda_s, p.huber_h,
        )?;
        let fit = train_ldss(&problem, p.tol, p.max_iter)?;
        if !fit.converged {
            return Err(anyhow!(
                "Newton did not converge in {} iterations",
                p.max_iter
            ));
        }
        let model = out.join("model.json");
        fs::write(&model, ScoreModel::linear(fit.weights)?.to_json()? + "\n")?;
        let trace = write_csv(
            &out.join("trace.csv"),
            "iter,objective,grad_norm",
            fit.trace
                .iter()
                .map(|t| format!("{},{},{}", t.iter, t.objective, t.grad_norm)),
        )?;
        Ok(vec![model, trace])
    })
}

// train-nldss

#[derive(Debug, clap::Args, Serialize)]
pub struct TrainNldssArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub huber_h: Option<f64>,
    /// Number of boosting rounds.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_trees: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree_depth: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainNldssConfig {
    seed: u64,
    data: Option<PathBuf>,
    pairs: Option<PathBuf>,
    smoothness: Option<PathBuf>,
    #[serde(flatten)]
    params: NldssParams,
}

pub fn train_nldss_cmd(args: &TrainNldssArgs) -> Result<()> {
    let (cfg, full): (TrainNldssConfig, _) = merged(&args.common, args)?;
    execute("train-nldss", &args.common.out, &full, |out| {
        let cohort = load_cohort(&cfg.data, &None)?;
        let ordering = load_comparisons(&cfg.pairs)?;
        let smoothing = load_smoothness(&cfg.smoothness, &cohort)?;
        let problem = ScoreProblem::new(
            &cohort,
            &ordering,
            &smoothing,
            cfg.params.lambda_s,
            cfg.params.huber_h,
        )?;
        let fit = train_nldss(&problem, &cfg.params)?;
        let model = out.join("model.json");
        fs::write(&model, fit.model.to_json()? + "\n")?;
        let trace = write_csv(
            &out.join("trace.csv"),
            "iter,objective,alpha",
            fit.trace
                .iter()
                .map(|t| format!("{},{},{}", t.iter, t.objective, t.alpha)),
        )?;
        Ok(vec![model, trace])
    })
}

// train-lr

#[derive(Debug, clap::Args, Serialize)]
pub struct TrainLrArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Treatment sidecar CSV, needed for exclusions.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub treatments: Option<PathBuf>,
    /// Label horizon in time units.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1_weight: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2_weight: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrainLrConfig {
    seed: u64,
    data: Option<PathBuf>,
    treatments: Option<PathBuf>,
    horizon: f64,
    exclusion: Exclusion,
    #[serde(flatten)]
    params: ElasticNetParams,
}

impl Default for TrainLrConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            treatments: None,
            horizon: 10.0,
            exclusion: Exclusion::None,
            params: ElasticNetParams::default(),
        }
    }
}

pub fn train_lr(args: &TrainLrArgs) -> Result<()> {
    let (cfg, full): (TrainLrConfig, _) = merged(&args.common, args)?;
    execute("train-lr", &args.common.out, &full, |out| {
        let cohort = load_cohort(&cfg.data, &cfg.treatments)?;
        let rows = window_labels(&cohort, cfg.horizon, cfg.exclusion)?;
        let fit = train_logistic_en(&rows, &cfg.params)?;
        let model = write_json(&out.join("model.json"), &fit.model)?;
        let trace = write_csv(
            &out.join("trace.csv"),
            "iter,objective",
            fit.trace
                .iter()
                .enumerate()
                .map(|(i, f)| format!("{i},{f}")),
        )?;
        Ok(vec![model, trace])
    })
}

// eval-soa / eval-auc

#[derive(Debug, clap::Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Comparison pairs (eval-soa only).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    /// Severity model or logistic model JSON.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_bootstrap: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_level: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct EvalConfig {
    seed: u64,
    data: Option<PathBuf>,
    pairs: Option<PathBuf>,
    model: Option<PathBuf>,
    n_bootstrap: usize,
    ci_level: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            pairs: None,
            model: None,
            n_bootstrap: DEFAULT_RESAMPLES,
            ci_level: 0.95,
        }
    }
}

pub fn eval_soa(args: &EvalArgs) -> Result<()> {
    let (cfg, full): (EvalConfig, _) = merged(&args.common, args)?;
    execute("eval-soa", &args.common.out, &full, |out| {
        let cohort = load_cohort(&cfg.data, &None)?;
        let pairs = load_comparisons(&cfg.pairs)?;
        let scorer = Scorer::load(&cfg.model)?;
        let scored = pairs
            .iter()
            .map(|p| {
                Ok((
                    scorer.score(cohort.features(&p.hi)?)?,
                    scorer.score(cohort.features(&p.lo)?)?,
                ))
            })
            .collect::<smoothrank_core::Result<Vec<_>>>()?;
        let value = soa_scores(&scored)?;
        // Per-pair concordance, ties counting one half, resampled for the CI.
        let hits: Vec<f64> = scored
            .iter()
            .map(|(h, l)| {
                if h > l {
                    1.0
                } else if h == l {
                    0.5
                } else {
                    0.0
                }
            })
            .collect();
        let ci = bootstrap_ci(
            &hits,
            Statistic::Mean,
            cfg.n_bootstrap,
            cfg.ci_level,
            cfg.seed,
        )?;
        let metrics = write_json(
            &out.join("metrics.json"),
            &json!({"metric": "soa", "value": value, "ci_lo": ci.lo, "ci_hi": ci.hi, "n": pairs.len(), "seed": cfg.seed}),
        )?;
        Ok(vec![metrics])
    })
}

pub fn eval_auc(args: &EvalArgs) -> Result<()> {
    let (cfg, full): (EvalConfig, _) = merged(&args.common, args)?;
    execute("eval-auc", &args.common.out, &full, |out| {
        let cohort = load_cohort(&cfg.data, &None)?;
        let scorer = Scorer::load(&cfg.model)?;
        let r = cohort_auc(&cohort, |x| scorer.score(x))?;
        let ci = bootstrap_auc_ci(
            &r.positive_stats,
            &r.negative_stats,
            cfg.n_bootstrap,
            cfg.ci_level,
            cfg.seed,
        )?;
        let roc = write_csv(
            &out.join("roc.csv"),
            "tau,fpr,tpr",
            r.curve
                .points
                .iter()
                .map(|p| format!("{},{},{}", p.tau, p.fpr, p.tpr)),
        )?;
        let metrics = write_json(
            &out.join("metrics.json"),
            &json!({
                "metric": "auc",
                "value": r.auc,
                "ci_lo": ci.lo,
                "ci_hi": ci.hi,
                "n": r.positive_stats.len() + r.negative_stats.len(),
                "n_positive": r.positive_stats.len(),
                "seed": cfg.seed,
            }),
        )?;
        Ok(vec![roc, metrics])
    })
}

// trend-features

#[derive(Debug, clap::Args, Serialize)]
pub struct TrendArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Feature 6 as the plain sum of absolute increments.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub feature6_literal: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrendCmdConfig {
    seed: u64,
    data: Option<PathBuf>,
    model: Option<PathBuf>,
    feature6_literal: bool,
    /// Admission precedes the first sample by this much time.
    admission_lead: f64,
}

impl Default for TrendCmdConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            model: None,
            feature6_literal: false,
            admission_lead: 1.0,
        }
    }
}

pub fn trend(args: &TrendArgs) -> Result<()> {
    let (cfg, full): (TrendCmdConfig, _) = merged(&args.common, args)?;
    execute("trend-features", &args.common.out, &full, |out| {
        let cohort = load_cohort(&cfg.data, &None)?;
        let scorer = Scorer::load(&cfg.model)?;
        let tc = TrendConfig {
            feature6_literal: cfg.feature6_literal,
        };
        let mut header = vec!["patient_id".to_string(), "index".into(), "time".into()];
        header.extend((0..cohort.dim()).map(|j| format!("f{j}")));
        header.push("score".into());
        header.extend((1..=7).map(|k| format!("trend{k}")));
        let mut rows = Vec::with_capacity(cohort.num_samples());
        for t in cohort.trajectories() {
            let series = series_of(t, &scorer, cfg.admission_lead)?;
            let feats = trend_features_per_sample(&series, &tc)?;
            for ((s, score), f) in t.samples.iter().zip(&series.scores).zip(feats) {
                let mut row = vec![
                    t.patient_id.to_string(),
                    s.index.to_string(),
                    s.time.to_string(),
                ];
                row.extend(s.features.iter().map(|v| v.to_string()));
                row.push(score.to_string());
                row.extend(f.iter().map(|v| v.to_string()));
                rows.push(row.join(","));
            }
        }
        let path = write_csv(&out.join("trend_features.csv"), &header.join(","), rows)?;
        Ok(vec![path])
    })
}

// stats-deltas

#[derive(Debug, clap::Args, Serialize)]
pub struct DeltasArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub treatments: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Anchor on the last sample before death, or on the first treatment.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeArg>,
    /// Interval width in time units.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_bootstrap: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    PreEvent,
    PeriTreatment,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct DeltasConfig {
    seed: u64,
    data: Option<PathBuf>,
    treatments: Option<PathBuf>,
    model: Option<PathBuf>,
    mode: DeltaMode,
    window: f64,
    admission_lead: f64,
    n_bootstrap: usize,
    ci_level: f64,
}

impl Default for DeltasConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            treatments: None,
            model: None,
            mode: DeltaMode::PreEvent,
            window: 2.0,
            admission_lead: 1.0,
            n_bootstrap: DEFAULT_RESAMPLES,
            ci_level: 0.95,
        }
    }
}

fn summarize(
    name: &str,
    values: &[f64],
    tail: Tail,
    cfg: &DeltasConfig,
    stream: u64,
) -> Result<Value> {
    let seed = derive_seed(cfg.seed, &[stream]);
    let ci = bootstrap_ci(values, Statistic::Mean, cfg.n_bootstrap, cfg.ci_level, seed)?;
    let frac = Statistic::FractionPositive.eval(values);
    let frac_ci = bootstrap_ci(
        values,
        Statistic::FractionPositive,
        cfg.n_bootstrap,
        cfg.ci_level,
        seed,
    )?;
    let t = ttest_one_tailed(values, tail).with_context(|| format!("t-test on {name}"))?;
    Ok(json!({
        "metric": name,
        "value": Statistic::Mean.eval(values),
        "ci_lo": ci.lo,
        "ci_hi": ci.hi,
        "fraction_positive": frac,
        "fraction_positive_ci_lo": frac_ci.lo,
        "fraction_positive_ci_hi": frac_ci.hi,
        "tail": tail,
        "t": t.t,
        "dof": t.dof,
        "p_value": t.p,
        "n": values.len(),
        "seed": seed,
    }))
}

pub fn stats_deltas(args: &DeltasArgs) -> Result<()> {
    let (cfg, full): (DeltasConfig, _) = merged(&args.common, args)?;
    execute("stats-deltas", &args.common.out, &full, |out| {
        let cohort = load_cohort(&cfg.data, &cfg.treatments)?;
        let scorer = Scorer::load(&cfg.model)?;
        let mut rows = Vec::new();
        let mut kept: Vec<IntervalDeltas> = Vec::new();
        let mut skipped = Vec::new();
        for t in cohort.trajectories() {
            let anchor = match cfg.mode {
                DeltaMode::PreEvent if t.died() => t.samples.last().map(|s| s.time),
                DeltaMode::PeriTreatment => t.treatments.first().copied(),
                DeltaMode::PreEvent => None,
            };
            let Some(anchor) = anchor else { continue };
            let series = series_of(t, &scorer, cfg.admission_lead)?;
            let admitted = t.samples[0].time - cfg.admission_lead;
            match interval_deltas(&series, anchor - admitted, cfg.mode, cfg.window) {
                Ok(d) => {
                    rows.push(format!(
                        "{},{},{},{},{},{},{}",
                        t.patient_id,
                        anchor,
                        fmt_opt(d.delta1),
                        fmt_opt(d.delta2),
                        fmt_opt(d.delta_prior),
                        fmt_opt(d.delta_post),
                        fmt_opt(d.delta_treat)
                    ));
                    kept.push(d);
                }
                Err(e) if matches!(e.root(), smoothrank_core::Error::Coverage(_)) => {
                    skipped.push(t.patient_id.to_string());
                }
                Err(e) => {
                    return Err(anyhow::Error::new(e).context(format!("patient {}", t.patient_id)))
                }
            }
        }
        if kept.is_empty() {
            return Err(anyhow!(
                "no patient has enough coverage around its anchor ({} skipped)",
                skipped.len()
            ));
        }
        let csv = write_csv(
            &out.join("deltas.csv"),
            "patient_id,anchor,delta1,delta2,delta_prior,delta_post,delta_treat",
            rows,
        )?;
        let pick =
            |f: fn(&IntervalDeltas) -> Option<f64>| kept.iter().filter_map(f).collect::<Vec<f64>>();
        let tests = match cfg.mode {
            DeltaMode::PreEvent => vec![
                summarize("delta1", &pick(|d| d.delta1), Tail::Greater, &cfg, 0)?,
                summarize("delta2", &pick(|d| d.delta2), Tail::Greater, &cfg, 1)?,
            ],
            DeltaMode::PeriTreatment => {
                vec![summarize(
                    "delta_treat",
                    &pick(|d| d.delta_treat),
                    Tail::Less,
                    &cfg,
                    0,
                )?]
            }
        };
        let stats = write_json(
            &out.join("stats.json"),
            &json!({"patients": kept.len(), "skipped": skipped, "tests": tests}),
        )?;
        Ok(vec![csv, stats])
    })
}

// repro-table1

#[derive(Debug, clap::Args, Serialize)]
pub struct Table1Args {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_bootstrap: Option<usize>,
    /// Comma-separated scenario ids (default: all).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct Table1Cmd {
    seed: u64,
    #[serde(flatten)]
    table: Table1Config,
}

pub fn table1(args: &Table1Args) -> Result<()> {
    let (cfg, full): (Table1Cmd, _) = merged(&args.common, args)?;
    execute("repro-table1", &args.common.out, &full, |out| {
        let rows = repro_table1(&cfg.table, cfg.seed)?;
        let main = write_csv(
            &out.join("table1.csv"),
            "scenario,rho_temp_train,rho_wbc_train,rho_temp_test,rho_wbc_test,lr_auc,ldss_auc,nldss_auc,seed",
            rows.iter().map(|r| {
                let s = &r.scenario;
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    s.id,
                    s.train.rho_temp,
                    s.train.rho_wbc,
                    s.test.rho_temp,
                    s.test.rho_wbc,
                    r.lr.auc,
                    r.ldss.auc,
                    r.nldss.auc,
                    r.seed
                )
            }),
        )?;
        let ci = write_csv(
            &out.join("table1_ci.csv"),
            "scenario,method,auc,ci_lo,ci_hi,seed",
            rows.iter().flat_map(|r| {
                [("lr", &r.lr), ("ldss", &r.ldss), ("nldss", &r.nldss)].map(|(m, v)| {
                    format!(
                        "{},{m},{},{},{},{}",
                        r.scenario.id, v.auc, v.ci.lo, v.ci.hi, r.seed
                    )
                })
            }),
        )?;
        let details = write_json(&out.join("table1_details.json"), &rows)?;
        Ok(vec![main, ci, details])
    })
}

// sweep-lambda-s

#[derive(Debug, clap::Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Comma-separated smoothness weights.
    #[arg(long = "grid", value_delimiter = ',')]
    #[serde(rename = "lambda_s_grid", skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_o: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct SweepCmd {
    seed: u64,
    #[serde(flatten)]
    sweep: SweepConfig,
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let (cfg, full): (SweepCmd, _) = merged(&args.common, args)?;
    execute("sweep-lambda-s", &args.common.out, &full, |out| {
        let points = sweep_lambda_s(&cfg.sweep, cfg.seed)?;
        let curves = write_csv(
            &out.join("sweep_curves.csv"),
            "lambda_s,method,probe_temp_state,normalized_score",
            points.iter().flat_map(|p| {
                PROBE_TEMP_STATES
                    .zip(&p.probe_curve)
                    .map(|(state, v)| format!("{},{},{state},{v}", p.lambda_s, p.method.as_str()))
                    .collect::<Vec<_>>()
            }),
        )?;
        let soa = write_csv(
            &out.join("sweep_soa.csv"),
            "lambda_s,method,soa",
            points
                .iter()
                .map(|p| format!("{},{},{}", p.lambda_s, p.method.as_str(), p.soa)),
        )?;
        Ok(vec![curves, soa])
    })
}
