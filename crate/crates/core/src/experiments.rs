//! End-to-end synthetic experiments: transportability across treatment
//! regimes and the smoothness sweep on grade-augmented features.

use std::collections::HashSet;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{
    train_logistic_en, window_labels, ElasticNetParams, Exclusion, LogisticModel,
};
use crate::data::{Cohort, PatientId, SmoothnessPair};
use crate::error::{Error, Result};
use crate::evalstats::{
    bootstrap_auc_ci, per_patient_auc, soa, AucResult, ConfidenceInterval, PatientScores,
};
use crate::ldss::{train_ldss, LdssParams, LdssProblem};
use crate::model::ScoreModel;
use crate::nldss::{train_nldss, NldssParams, ScoreProblem};
use crate::seed::derive_seed;
use crate::simflu::{simulate_cohort, Regime, SimConfig};
use crate::supervision::{
    coarse_grade, grade_cohort, sample_dominance_pairs, sample_stage_pairs, MEASUREMENT_COORDS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: usize,
    pub train: Regime,
    pub test: Regime,
}

/// The five train/test treatment-regime combinations.
pub fn table1_scenarios() -> Vec<Scenario> {
    let r = |t, w| Regime {
        rho_temp: t,
        rho_wbc: w,
    };
    vec![
        Scenario {
            id: 1,
            train: r(0.0, 0.0),
            test: r(0.0, 0.0),
        },
        Scenario {
            id: 2,
            train: r(0.1, 0.0),
            test: r(0.1, 0.0),
        },
        Scenario {
            id: 3,
            train: r(0.1, 0.0),
            test: r(0.0, 0.0),
        },
        Scenario {
            id: 4,
            train: r(0.3, 0.0),
            test: r(0.0, 0.0),
        },
        Scenario {
            id: 5,
            train: r(0.3, 0.0),
            test: r(0.0, 0.3),
        },
    ]
}

/// Train and test scores of every patient, with deaths as positives.
pub fn cohort_auc(cohort: &Cohort, score: impl Fn(&[f64]) -> Result<f64>) -> Result<AucResult> {
    let mut patients = Vec::with_capacity(cohort.len());
    let mut positives = HashSet::new();
    for t in cohort.trajectories() {
        if t.died() {
            positives.insert(t.patient_id.clone());
        }
        patients.push(PatientScores {
            patient_id: t.patient_id.clone(),
            times: t.times(),
            scores: t
                .samples
                .iter()
                .map(|s| score(&s.features))
                .collect::<Result<_>>()?,
            event_time: t.died().then_some(t.outcome_time),
        });
    }
    per_patient_auc(&patients, &positives)
}

/// Uniform subsample of `n` smoothness pairs (all of them if fewer), kept in
/// their original order.
pub fn subsample_smoothness(
    pairs: Vec<SmoothnessPair>,
    n: Option<usize>,
    seed: u64,
) -> Vec<SmoothnessPair> {
    match n {
        Some(n) if n < pairs.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample_indices(&mut rng, pairs.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| pairs[i].clone()).collect()
        }
        _ => pairs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSelection {
    pub l1_grid: Vec<f64>,
    pub l2_grid: Vec<f64>,
    /// Fraction of training patients used for fitting during selection; the
    /// rest are the validation set.
    pub fit_fraction: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LrSelection {
    fn default() -> Self {
        Self {
            l1_grid: vec![0.0, 1e-3, 1e-2],
            l2_grid: vec![1e-4, 1e-2],
            fit_fraction: 2.0 / 3.0,
            max_iter: 2000,
            tol: 1e-9,
        }
    }
}

fn split_cohort(cohort: &Cohort, fraction: f64) -> Result<(Cohort, Cohort)> {
    let traj = cohort.trajectories();
    let k = ((traj.len() as f64) * fraction).round() as usize;
    if k == 0 || k >= traj.len() {
        return Err(Error::InvalidParameter(format!(
            "fit fraction {fraction} leaves an empty split of {} patients",
            traj.len()
        )));
    }
    Ok((
        Cohort::new(traj[..k].to_vec())?,
        Cohort::new(traj[k..].to_vec())?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrChoice {
    pub params: ElasticNetParams,
    pub validation_auc: f64,
    pub model: LogisticModel,
}

/// Picks elastic-net weights by per-patient validation AUC, then refits on
/// the whole training cohort.
pub fn select_and_train_lr(train: &Cohort, horizon: f64, sel: &LrSelection) -> Result<LrChoice> {
    let (fit, val) = split_cohort(train, sel.fit_fraction)?;
    let fit_rows = window_labels(&fit, horizon, Exclusion::None)?;
    let mut best: Option<(ElasticNetParams, f64)> = None;
    for &l1 in &sel.l1_grid {
        for &l2 in &sel.l2_grid {
            let params = ElasticNetParams {
                l1_weight: l1,
                l2_weight: l2,
                max_iter: sel.max_iter,
                tol: sel.tol,
            };
            let m = train_logistic_en(&fit_rows, &params)?.model;
            let auc = cohort_auc(&val, |x| m.affine_score(x))?.auc;
            if best.is_none_or(|(_, b)| auc > b) {
                best = Some((params, auc));
            }
        }
    }
    let (params, validation_auc) = best.ok_or(Error::EmptyInput("logistic regression grid"))?;
    let model = train_logistic_en(&window_labels(train, horizon, Exclusion::None)?, &params)?.model;
    Ok(LrChoice {
        params,
        validation_auc,
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Table1Config {
    pub n_train: usize,
    pub n_test: usize,
    pub n_dominance_pairs: usize,
    /// Cap on smoothness pairs; `None` uses every consecutive pair.
    pub max_smoothness_pairs: Option<usize>,
    pub horizon: f64,
    pub ldss: LdssParams,
    pub nldss: NldssParams,
    pub lr: LrSelection,
    pub n_bootstrap: usize,
    pub ci_level: f64,
    /// Scenario ids to run; empty runs all five.
    pub scenarios: Vec<usize>,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_test: 1000,
            n_dominance_pairs: 6000,
            max_smoothness_pairs: Some(6000),
            horizon: 10.0,
            ldss: LdssParams::default(),
            nldss: NldssParams::default(),
            lr: LrSelection::default(),
            n_bootstrap: 1000,
            ci_level: 0.95,
            scenarios: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub auc: f64,
    pub ci: ConfidenceInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub scenario: Scenario,
    pub seed: u64,
    pub lr: MethodResult,
    pub ldss: MethodResult,
    pub nldss: MethodResult,
    pub lr_params: ElasticNetParams,
    pub ldss_weights: Vec<f64>,
    pub train_mortality: f64,
    pub test_mortality: f64,
}

fn method_result(r: &AucResult, cfg: &Table1Config, seed: u64) -> Result<MethodResult> {
    Ok(MethodResult {
        auc: r.auc,
        ci: bootstrap_auc_ci(
            &r.positive_stats,
            &r.negative_stats,
            cfg.n_bootstrap,
            cfg.ci_level,
            seed,
        )?,
    })
}

fn mortality(c: &Cohort) -> f64 {
    c.trajectories().iter().filter(|t| t.died()).count() as f64 / c.len() as f64
}

/// Runs one transportability scenario under its own derived seed.
pub fn run_scenario(sc: &Scenario, cfg: &Table1Config, seed: u64) -> Result<Table1Row> {
    let sim = SimConfig::default();
    let train = simulate_cohort(cfg.n_train, &sc.train, derive_seed(seed, &[0]), &sim)?;
    let test = simulate_cohort(cfg.n_test, &sc.test, derive_seed(seed, &[1]), &sim)?;
    let ordering = sample_dominance_pairs(
        &train,
        cfg.n_dominance_pairs,
        derive_seed(seed, &[2]),
        MEASUREMENT_COORDS,
    )?;
    let smoothing = subsample_smoothness(
        train.smoothness_pairs(),
        cfg.max_smoothness_pairs,
        derive_seed(seed, &[3]),
    );

    let p = &cfg.ldss;
    let problem = LdssProblem::from_pairs(
        &train, &ordering, &smoothing, p.lambda_o, p.lambda_s, p.huber_h,
    )?;
    let ldss = ScoreModel::linear(train_ldss(&problem, p.tol, p.max_iter)?.weights)?;
    let nl_problem = ScoreProblem::new(
        &train,
        &ordering,
        &smoothing,
        cfg.nldss.lambda_s,
        cfg.nldss.huber_h,
    )?;
    let nldss = train_nldss(&nl_problem, &cfg.nldss)?.model;
    let lr = select_and_train_lr(&train, cfg.horizon, &cfg.lr)?;

    let lr_auc = cohort_auc(&test, |x| lr.model.affine_score(x))?;
    let ldss_auc = cohort_auc(&test, |x| ldss.score(x))?;
    let nldss_auc = cohort_auc(&test, |x| nldss.score(x))?;
    let ci_seed = derive_seed(seed, &[4]);
    Ok(Table1Row {
        scenario: *sc,
        seed,
        lr: method_result(&lr_auc, cfg, ci_seed)?,
        ldss: method_result(&ldss_auc, cfg, ci_seed)?,
        nldss: method_result(&nldss_auc, cfg, ci_seed)?,
        lr_params: lr.params,
        ldss_weights: match &ldss {
            ScoreModel::Linear { weights } => weights.clone(),
            ScoreModel::Ensemble { .. } => unreachable!("L-DSS is linear"),
        },
        train_mortality: mortality(&train),
        test_mortality: mortality(&test),
    })
}

/// All requested scenarios; scenario `k` uses seed `derive_seed(master, [k])`.
pub fn repro_table1(cfg: &Table1Config, master_seed: u64) -> Result<Vec<Table1Row>> {
    let scenarios: Vec<Scenario> = table1_scenarios()
        .into_iter()
        .filter(|s| cfg.scenarios.is_empty() || cfg.scenarios.contains(&s.id))
        .collect();
    if scenarios.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no known scenario in {:?}",
            cfg.scenarios
        )));
    }
    scenarios
        .par_iter()
        .map(|sc| {
            run_scenario(sc, cfg, derive_seed(master_seed, &[sc.id as u64]))
                .map_err(|e| e.context(format!("scenario {}", sc.id)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub lambda_s_grid: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub regime: Regime,
    /// Comparisons per pair of distinct grades.
    pub pairs_per_combo: usize,
    pub n_smoothness_pairs: Option<usize>,
    pub lambda_o: f64,
    pub ldss: LdssParams,
    pub nldss: NldssParams,
    /// WBC state held fixed while the temperature probe varies.
    pub probe_wbc_state: u8,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambda_s_grid: vec![0.1, 1.0, 10.0, 100.0, 1000.0],
            n_train: 1000,
            n_test: 1000,
            regime: Regime {
                rho_temp: 0.0,
                rho_wbc: 0.0,
            },
            pairs_per_combo: 2000,
            n_smoothness_pairs: Some(6000),
            lambda_o: 100.0,
            ldss: LdssParams::default(),
            nldss: NldssParams::default(),
            probe_wbc_state: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ldss,
    Nldss,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ldss => "ldss",
            Method::Nldss => "nldss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda_s: f64,
    pub method: Method,
    /// Normalized probe scores for temperature states 1..=9.
    pub probe_curve: Vec<f64>,
    pub soa: f64,
}

impl SweepPoint {
    pub fn max_increment(&self) -> f64 {
        self.probe_curve
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub const PROBE_TEMP_STATES: std::ops::RangeInclusive<u8> = 1..=9;

/// Grade-augmented probe inputs `(temp, wbc, grade)`.
pub fn probe_inputs(wbc_state: u8) -> Result<Vec<Vec<f64>>> {
    PROBE_TEMP_STATES
        .map(|t| {
            let mut x = vec![t as f64, wbc_state as f64];
            x.push(coarse_grade(&x)? as f64);
            Ok(x)
        })
        .collect()
}

/// Scores rescaled so the first probe maps to 0 and the last to 1.
pub fn normalize_curve(scores: &[f64]) -> Result<Vec<f64>> {
    let (first, last) = match (scores.first(), scores.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::EmptyInput("probe scores")),
    };
    let span = last - first;
    if span == 0.0 || !span.is_finite() {
        return Err(Error::Degenerate(format!(
            "probe scores span {span}; cannot normalize"
        )));
    }
    Ok(scores.iter().map(|s| (s - first) / span).collect())
}

/// Trains both learners on stage-balanced comparisons of grade-augmented
/// data for every smoothness weight in the grid.
pub fn sweep_lambda_s(cfg: &SweepConfig, master_seed: u64) -> Result<Vec<SweepPoint>> {
    if cfg.lambda_s_grid.is_empty() {
        return Err(Error::EmptyInput("lambda_s grid"));
    }
    let sim = SimConfig {
        append_grade: true,
        ..SimConfig::default()
    };
    let grade = |x: &[f64]| coarse_grade(x);
    let train = simulate_cohort(
        cfg.n_train,
        &cfg.regime,
        derive_seed(master_seed, &[0]),
        &sim,
    )?;
    let test = simulate_cohort(
        cfg.n_test,
        &cfg.regime,
        derive_seed(master_seed, &[1]),
        &sim,
    )?;
    let levels = [0u8, 1, 2];
    let ordering = sample_stage_pairs(
        &grade_cohort(&train, grade)?,
        Some(&levels),
        cfg.pairs_per_combo,
        derive_seed(master_seed, &[2]),
    )?;
    let held_out = sample_stage_pairs(
        &grade_cohort(&test, grade)?,
        Some(&levels),
        cfg.pairs_per_combo,
        derive_seed(master_seed, &[3]),
    )?;
    let smoothing = subsample_smoothness(
        train.smoothness_pairs(),
        cfg.n_smoothness_pairs,
        derive_seed(master_seed, &[4]),
    );
    let probes = probe_inputs(cfg.probe_wbc_state)?;

    let jobs: Vec<(f64, Method)> = cfg
        .lambda_s_grid
        .iter()
        .flat_map(|&l| [(l, Method::Ldss), (l, Method::Nldss)])
        .collect();
    jobs.par_iter()
        .map(|&(lambda_s, method)| {
            let model = match method {
                Method::Ldss => {
                    let p = &cfg.ldss;
                    let problem = LdssProblem::from_pairs(
                        &train,
                        &ordering,
                        &smoothing,
                        cfg.lambda_o,
                        lambda_s,
                        p.huber_h,
                    )?;
                    ScoreModel::linear(train_ldss(&problem, p.tol, p.max_iter)?.weights)?
                }
                Method::Nldss => {
                    let params = NldssParams {
                        lambda_s,
                        ..cfg.nldss
                    };
                    let problem =
                        ScoreProblem::new(&train, &ordering, &smoothing, lambda_s, params.huber_h)?;
                    train_nldss(&problem, &params)?.model
                }
            };
            let raw = probes
                .iter()
                .map(|x| model.score(x))
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepPoint {
                lambda_s,
                method,
                probe_curve: normalize_curve(&raw)?,
                soa: soa(&model, &test, &held_out)?,
            })
        })
        .map(|r: Result<SweepPoint>| r.map_err(|e| e.context("lambda_s sweep")))
        .collect()
}

/// Patients of `cohort` that died, as a set of ids.
pub fn deaths(cohort: &Cohort) -> HashSet<PatientId> {
    cohort
        .trajectories()
        .iter()
        .filter(|t| t.died())
        .map(|t| t.patient_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenarios_match_regime_table() {
        let s = table1_scenarios();
        assert_eq!(s.len(), 5);
        assert_eq!(s[4].train.rho_temp, 0.3);
        assert_eq!(s[4].test.rho_wbc, 0.3);
        assert_eq!(s[2].test.rho_temp, 0.0);
    }

    #[test]
    fn probe_inputs_carry_grade() {
        let p = probe_inputs(1).unwrap();
        assert_eq!(p.len(), 9);
        assert_eq!(p[1], vec![2.0, 1.0, 0.0]);
        assert_eq!(p[2], vec![3.0, 1.0, 1.0]);
    }

    #[test]
    fn normalization_endpoints() {
        let n = normalize_curve(&[2.0, 3.0, 6.0]).unwrap();
        assert_eq!(n, vec![0.0, 0.25, 1.0]);
        assert!(normalize_curve(&[1.0, 1.0]).is_err());
        let pt = SweepPoint {
            lambda_s: 1.0,
            method: Method::Ldss,
            probe_curve: n,
            soa: 1.0,
        };
        assert_eq!(pt.max_increment(), 0.75);
    }

    #[test]
    fn subsample_keeps_order_and_size() {
        let c = simulate_cohort(
            50,
            &Regime::new(0.0, 0.0).unwrap(),
            3,
            &SimConfig::default(),
        )
        .unwrap();
        let all = c.smoothness_pairs();
        let sub = subsample_smoothness(all.clone(), Some(10), 1);
        assert_eq!(sub.len(), 10.min(all.len()));
        assert_eq!(subsample_smoothness(all.clone(), None, 1), all);
    }
}
