//! Evaluation metrics and statistical tests.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, ComparisonPair, PatientId};
use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::numeric::KahanSum;
use crate::seed::stream_rng;
use crate::trendfeat::ScoreSeries;

/// Fraction of `(hi, lo)` score pairs ordered concordantly; ties count ½.
pub fn soa_scores(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("comparison pairs"));
    }
    let mut twice = 0u64;
    for &(hi, lo) in pairs {
        if hi > lo {
            twice += 2;
        } else if hi == lo {
            twice += 1;
        }
    }
    Ok(twice as f64 / (2 * pairs.len()) as f64)
}

/// Severity ordering accuracy of `model` on `pairs` drawn from `cohort`.
pub fn soa(model: &ScoreModel, cohort: &Cohort, pairs: &[ComparisonPair]) -> Result<f64> {
    let scored = pairs
        .iter()
        .map(|p| {
            Ok((
                model.score(cohort.features(&p.hi)?)?,
                model.score(cohort.features(&p.lo)?)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    soa_scores(&scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientScores {
    pub patient_id: PatientId,
    pub times: Vec<f64>,
    pub scores: Vec<f64>,
    /// Time of the adverse event, if any. Only earlier samples count for a
    /// positive patient.
    pub event_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub tau: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points ordered by threshold descending, from (0,0) to (1,1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .collect::<KahanSum>()
            .value()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    pub auc: f64,
    pub curve: RocCurve,
    pub positive_stats: Vec<f64>,
    pub negative_stats: Vec<f64>,
}

/// Per-patient alarm statistic: the maximum score, restricted to samples
/// strictly before the event for positive patients.
pub fn patient_statistic(p: &PatientScores, positive: bool) -> Result<f64> {
    if p.times.len() != p.scores.len() {
        return Err(Error::DimensionMismatch {
            expected: p.times.len(),
            got: p.scores.len(),
        });
    }
    let cutoff = if positive { p.event_time } else { None };
    p.times
        .iter()
        .zip(&p.scores)
        .filter(|(t, _)| cutoff.is_none_or(|e| **t < e))
        .map(|(_, s)| *s)
        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))
        .ok_or_else(|| {
            Error::Coverage(format!(
                "patient {} has no scored samples before its event",
                p.patient_id
            ))
        })
}

/// Mann-Whitney AUC of positive vs negative statistics, ties counted ½.
pub fn mann_whitney_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Degenerate(
            "AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidData("NaN score".into()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of (1-based, tie-averaged) ranks of the positives, kept doubled so
    // that it stays an exact integer.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u64;
        let npos = all[i..=j].iter().filter(|x| x.1).count() as u64;
        rank_sum2 += avg2 * npos;
        i = j + 1;
    }
    let np = pos.len() as u64;
    let nn = neg.len() as u64;
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2 * np * nn) as f64)
}

fn roc_curve(pos: &[f64], neg: &[f64]) -> RocCurve {
    let mut taus: Vec<f64> = pos.iter().chain(neg).copied().collect();
    taus.sort_by(|a, b| b.total_cmp(a));
    taus.dedup();
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    let mut points = vec![RocPoint {
        tau: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    for tau in taus {
        points.push(RocPoint {
            tau,
            fpr: neg.iter().filter(|&&s| s >= tau).count() as f64 / nn,
            tpr: pos.iter().filter(|&&s| s >= tau).count() as f64 / np,
        });
    }
    RocCurve { points }
}

/// Patient-level AUC: each patient is summarized by its maximum score and
/// patients in `positives` are compared against the rest.
pub fn per_patient_auc(
    patients: &[PatientScores],
    positives: &HashSet<PatientId>,
) -> Result<AucResult> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for p in patients {
        let is_pos = positives.contains(&p.patient_id);
        let stat = patient_statistic(p, is_pos)?;
        if is_pos {
            pos.push(stat);
        } else {
            neg.push(stat);
        }
    }
    let auc = mann_whitney_auc(&pos, &neg)?;
    Ok(AucResult {
        auc,
        curve: roc_curve(&pos, &neg),
        positive_stats: pos,
        negative_stats: neg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    /// Fraction of values strictly greater than zero.
    FractionPositive,
}

impl Statistic {
    pub fn eval(self, values: &[f64]) -> f64 {
        match self {
            Statistic::Mean => {
                values.iter().copied().collect::<KahanSum>().value() / values.len() as f64
            }
            Statistic::FractionPositive => {
                values.iter().filter(|&&v| v > 0.0).count() as f64 / values.len() as f64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
}

pub const DEFAULT_RESAMPLES: usize = 2000;

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_bootstrap(n_resamples: usize, level: f64) -> Result<()> {
    if n_resamples == 0 {
        return Err(Error::InvalidParameter("n_resamples must be >= 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "level={level} must lie in (0,1)"
        )));
    }
    Ok(())
}

fn percentile_interval(mut stats: Vec<f64>, level: f64) -> ConfidenceInterval {
    stats.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    ConfidenceInterval {
        lo: quantile_sorted(&stats, a),
        hi: quantile_sorted(&stats, 1.0 - a),
    }
}

fn resample<R: Rng>(values: &[f64], rng: &mut R) -> Vec<f64> {
    (0..values.len())
        .map(|_| values[rng.random_range(0..values.len())])
        .collect()
}

/// Percentile bootstrap interval. Resample `r` uses its own RNG stream, so the
/// result does not depend on the number of worker threads.
pub fn bootstrap_ci(
    values: &[f64],
    statistic: Statistic,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<ConfidenceInterval> {
    if values.is_empty() {
        return Err(Error::EmptyInput("bootstrap values"));
    }
    check_bootstrap(n_resamples, level)?;
    let stats: Vec<f64> = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            statistic.eval(&resample(values, &mut rng))
        })
        .collect();
    Ok(percentile_interval(stats, level))
}

/// Bootstrap interval for the AUC of paired positive/negative statistics.
/// Each class is resampled separately so every replicate has both classes.
pub fn bootstrap_auc_ci(
    pos: &[f64],
    neg: &[f64],
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<ConfidenceInterval> {
    mann_whitney_auc(pos, neg)?;
    check_bootstrap(n_resamples, level)?;
    let stats = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let p = resample(pos, &mut rng);
            let n = resample(neg, &mut rng);
            mann_whitney_auc(&p, &n)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(percentile_interval(stats, level))
}

/// Upper tail `P(T > t)` of Student's t with `dof` degrees of freedom.
pub fn student_t_sf(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let x = dof / (dof + t * t);
    let half = 0.5 * statrs::function::beta::beta_reg(dof / 2.0, 0.5, x);
    if t > 0.0 {
        half
    } else {
        1.0 - half
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
}

/// One-sample, one-tailed t-test of a zero mean.
pub fn ttest_one_tailed(values: &[f64], tail: Tail) -> Result<TTest> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("t-test needs n >= 2, got {n}")));
    }
    let mean = values.iter().copied().collect::<KahanSum>().value() / n as f64;
    let ss = values
        .iter()
        .map(|v| (v - mean).powi(2))
        .collect::<KahanSum>()
        .value();
    let var = ss / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::Degenerate("t-test sample has zero variance".into()));
    }
    let t = mean / (var / n as f64).sqrt();
    let dof = (n - 1) as f64;
    let p = match tail {
        Tail::Greater => student_t_sf(t, dof),
        Tail::Less => student_t_sf(-t, dof),
    };
    Ok(TTest { t, dof, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    PreEvent,
    PeriTreatment,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalDeltas {
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub delta_prior: Option<f64>,
    pub delta_post: Option<f64>,
    pub delta_treat: Option<f64>,
}

/// Score as a step function: sample `j` holds on `(t_{j-1}, t_j]`, with the
/// first piece starting at admission.
fn pieces(series: &ScoreSeries) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
    (0..series.len()).map(move |j| {
        let lo = if j == 0 {
            series.t0
        } else {
            series.times[j - 1]
        };
        (lo, series.times[j], series.scores[j])
    })
}

/// Duration-weighted mean of the score over `(a, b]`.
pub fn interval_mean(series: &ScoreSeries, a: f64, b: f64) -> Result<f64> {
    if !(b > a) {
        return Err(Error::InvalidParameter(format!(
            "empty interval ({a}, {b}]"
        )));
    }
    let last = *series
        .times
        .last()
        .ok_or(Error::EmptyInput("score series"))?;
    if a < series.t0 || b > last {
        return Err(Error::Coverage(format!(
            "interval ({a}, {b}] not covered by series on ({}, {last}]",
            series.t0
        )));
    }
    let total: KahanSum = pieces(series)
        .map(|(lo, hi, s)| s * (hi.min(b) - lo.max(a)).max(0.0))
        .collect();
    Ok(total.value() / (b - a))
}

/// Score at time `t` under the step-function convention.
pub fn score_at(series: &ScoreSeries, t: f64) -> Result<f64> {
    pieces(series)
        .find(|&(lo, hi, _)| lo < t && t <= hi)
        .map(|(_, _, s)| s)
        .ok_or_else(|| Error::Coverage(format!("no score at time {t}")))
}

pub fn interval_deltas(
    series: &ScoreSeries,
    anchor: f64,
    mode: DeltaMode,
    window: f64,
) -> Result<IntervalDeltas> {
    series.validate()?;
    if !(window > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "window={window} must be > 0"
        )));
    }
    let named = |name: &str, a: f64, b: f64| {
        interval_mean(series, a, b).map_err(|e| e.context(name.to_string()))
    };
    match mode {
        DeltaMode::PreEvent => {
            let m1 = named(
                "interval 0-1 windows before anchor",
                anchor - window,
                anchor,
            )?;
            let m2 = named(
                "interval 1-2 windows before anchor",
                anchor - 2.0 * window,
                anchor - window,
            )?;
            let m3 = named(
                "interval 2-3 windows before anchor",
                anchor - 3.0 * window,
                anchor - 2.0 * window,
            )?;
            Ok(IntervalDeltas {
                delta1: Some(m1 - m2),
                delta2: Some((m1 - m2) - (m2 - m3)),
                ..IntervalDeltas::default()
            })
        }
        DeltaMode::PeriTreatment => {
            let at = score_at(series, anchor).map_err(|e| e.context("score at anchor"))?;
            let before = named("window before anchor", anchor - window, anchor)?;
            let after = named("window after anchor", anchor, anchor + window)?;
            let prior = at - before;
            let post = after - at;
            Ok(IntervalDeltas {
                delta_prior: Some(prior),
                delta_post: Some(post),
                delta_treat: Some(post - prior),
                ..IntervalDeltas::default()
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(id: &str, scores: &[f64], event: Option<f64>) -> PatientScores {
        PatientScores {
            patient_id: id.into(),
            times: (0..scores.len()).map(|i| i as f64).collect(),
            scores: scores.to_vec(),
            event_time: event,
        }
    }

    #[test]
    fn soa_conventions() {
        assert_eq!(soa_scores(&[(2.0, 1.0), (3.0, 0.0)]).unwrap(), 1.0);
        assert_eq!(soa_scores(&[(1.0, 1.0), (1.0, 1.0)]).unwrap(), 0.5);
        assert_eq!(
            soa_scores(&[(2.0, 1.0), (1.0, 2.0), (1.0, 1.0)]).unwrap(),
            0.5
        );
        assert!(soa_scores(&[]).is_err());
    }

    #[test]
    fn hand_enumerated_auc() {
        let pats = vec![
            ps("a", &[0.9], None),
            ps("b", &[0.6], None),
            ps("c", &[0.5], None),
            ps("d", &[0.7], None),
        ];
        let pos: HashSet<PatientId> = ["a", "b"].iter().map(|s| PatientId::from(*s)).collect();
        let r = per_patient_auc(&pats, &pos).unwrap();
        assert_eq!(r.auc, 0.75);
        assert!((r.curve.trapezoid_area() - 0.75).abs() < 1e-12);
        let first = r.curve.points.first().unwrap();
        let last = r.curve.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn positives_ignore_scores_at_or_after_event() {
        let pats = vec![ps("a", &[0.1, 0.2, 9.0], Some(2.0)), ps("b", &[0.5], None)];
        let pos: HashSet<PatientId> = [PatientId::from("a")].into();
        assert_eq!(per_patient_auc(&pats, &pos).unwrap().auc, 0.0);
        let none_before = vec![ps("a", &[1.0], Some(0.0)), ps("b", &[0.5], None)];
        assert!(per_patient_auc(&none_before, &pos).is_err());
    }

    #[test]
    fn auc_ties_and_single_class() {
        assert_eq!(mann_whitney_auc(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.5);
        assert_eq!(mann_whitney_auc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(mann_whitney_auc(&[1.0], &[]).is_err());
    }

    #[test]
    fn bootstrap_constant_and_deterministic() {
        let ci = bootstrap_ci(&[2.5; 30], Statistic::Mean, 200, 0.95, 1).unwrap();
        assert_eq!((ci.lo, ci.hi), (2.5, 2.5));
        let v: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let a = bootstrap_ci(&v, Statistic::Mean, 300, 0.9, 9).unwrap();
        let b = bootstrap_ci(&v, Statistic::Mean, 300, 0.9, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.lo < a.hi);
        assert!(bootstrap_ci(&[], Statistic::Mean, 10, 0.9, 0).is_err());
        assert!(bootstrap_ci(&v, Statistic::Mean, 10, 1.0, 0).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile_sorted(&[0.0, 1.0, 2.0, 3.0], 0.5), 1.5);
        assert_eq!(quantile_sorted(&[4.0], 0.3), 4.0);
    }

    #[test]
    fn ttest_symmetric_and_degenerate() {
        let r = ttest_one_tailed(&[-1.0, 1.0], Tail::Greater).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 0.5).abs() < 1e-15);
        assert!(ttest_one_tailed(&[1.0, 1.0, 1.0], Tail::Greater).is_err());
        assert!(ttest_one_tailed(&[1.0], Tail::Less).is_err());
    }

    #[test]
    fn t_tails_are_complementary() {
        for &(t, d) in &[(0.3, 3.0), (-2.0, 10.0), (5.0, 1.0)] {
            assert!((student_t_sf(t, d) + student_t_sf(-t, d) - 1.0).abs() < 1e-14);
        }
        // Cauchy case: P(T > 1) = 1/4.
        assert!((student_t_sf(1.0, 1.0) - 0.25).abs() < 1e-14);
    }

    fn series(scores: Vec<f64>) -> ScoreSeries {
        let times = (1..=scores.len()).map(|i| i as f64).collect();
        ScoreSeries::new(times, scores, 0.0).unwrap()
    }

    #[test]
    fn linear_trend_has_zero_acceleration() {
        let s = series((1..=20).map(|i| i as f64).collect());
        let d = interval_deltas(&s, 18.0, DeltaMode::PreEvent, 5.0).unwrap();
        assert!(d.delta1.unwrap() > 0.0);
        assert!(d.delta2.unwrap().abs() < 1e-12);
    }

    #[test]
    fn constant_series_peri_treatment_is_flat() {
        let s = series(vec![3.0; 20]);
        let d = interval_deltas(&s, 10.0, DeltaMode::PeriTreatment, 5.0).unwrap();
        assert_eq!(d.delta_prior, Some(0.0));
        assert_eq!(d.delta_post, Some(0.0));
        assert_eq!(d.delta_treat, Some(0.0));
    }

    #[test]
    fn rise_then_fall_gives_negative_treatment_delta() {
        let s = series(
            (1..=20)
                .map(|t| if t <= 10 { t as f64 } else { 20.0 - t as f64 })
                .collect(),
        );
        let d = interval_deltas(&s, 10.0, DeltaMode::PeriTreatment, 5.0).unwrap();
        assert_eq!(d.delta_prior, Some(2.0));
        assert_eq!(d.delta_post, Some(-3.0));
        assert!(d.delta_treat.unwrap() < 0.0);
    }

    #[test]
    fn coverage_errors_name_the_interval() {
        let s = series(vec![1.0; 10]);
        let e = interval_deltas(&s, 10.0, DeltaMode::PreEvent, 4.0).unwrap_err();
        assert!(e.to_string().contains("2-3 windows"), "{e}");
        let e = interval_deltas(&s, 8.0, DeltaMode::PeriTreatment, 5.0).unwrap_err();
        assert!(e.to_string().contains("after"), "{e}");
    }

    #[test]
    fn interval_mean_weights_by_duration() {
        let s = ScoreSeries::new(vec![1.0, 4.0], vec![2.0, 8.0], 0.0).unwrap();
        assert!((interval_mean(&s, 0.0, 4.0).unwrap() - (2.0 + 3.0 * 8.0) / 4.0).abs() < 1e-12);
        assert_eq!(score_at(&s, 2.0).unwrap(), 8.0);
        assert_eq!(score_at(&s, 1.0).unwrap(), 2.0);
    }
}
