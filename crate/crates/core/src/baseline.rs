//! Outcome-supervised baseline: sliding-window mortality labels and
//! elastic-net logistic regression fitted by proximal gradient descent.

use serde::{Deserialize, Serialize};

use crate::data::{Cohort, Outcome, PatientId};
use crate::error::{Error, Result};
use crate::numeric::{dot, KahanSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    None,
    /// Drop every sample of patients who never die but were ever treated:
    /// their negative outcome is censored by the treatment.
    DropTreatedNegatives,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub features: Vec<f64>,
    pub label: bool,
    pub patient_id: PatientId,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindowSet {
    pub rows: Vec<LabeledRow>,
    pub horizon: f64,
}

impl LabeledWindowSet {
    pub fn num_positive(&self) -> usize {
        self.rows.iter().filter(|r| r.label).count()
    }
}

/// One row per sample, labelled positive when the patient dies no later than
/// `horizon` after the sample time.
pub fn window_labels(
    cohort: &Cohort,
    horizon: f64,
    exclusion: Exclusion,
) -> Result<LabeledWindowSet> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon={horizon} must be > 0"
        )));
    }
    let mut rows = Vec::with_capacity(cohort.num_samples());
    for t in cohort.trajectories() {
        if exclusion == Exclusion::DropTreatedNegatives && !t.died() && t.was_treated() {
            continue;
        }
        for s in &t.samples {
            let label = t.outcome == Outcome::Died && t.outcome_time - s.time <= horizon;
            rows.push(LabeledRow {
                features: s.features.clone(),
                label,
                patient_id: t.patient_id.clone(),
                time: s.time,
            });
        }
    }
    Ok(LabeledWindowSet { rows, horizon })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticNetParams {
    pub l1_weight: f64,
    pub l2_weight: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ElasticNetParams {
    fn default() -> Self {
        Self {
            l1_weight: 0.0,
            l2_weight: 1e-4,
            max_iter: 5000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Weights on standardized features.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn affine_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.intercept + dot(&self.weights, &self.standardize(x)))
    }

    /// Probability of the positive class.
    pub fn predict_prob(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.affine_score(x)?))
    }
}

/// Mean logistic loss plus penalties on standardized rows.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    l1: f64,
    l2: f64,
}

impl LogisticObjective {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<bool>, l1: f64, l2: f64) -> Self {
        Self {
            x,
            y: y.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
            l1,
            l2,
        }
    }

    /// Differentiable part: mean loss + `l2/2 ‖w‖²`.
    pub fn smooth(&self, w: &[f64], b: f64) -> f64 {
        let loss: KahanSum = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(x, y)| {
                let z = b + dot(w, x);
                softplus(z) - y * z
            })
            .collect();
        loss.value() / self.x.len() as f64 + 0.5 * self.l2 * dot(w, w)
    }

    /// Gradient of [`Self::smooth`] as `(dw, db)`.
    pub fn smooth_grad(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let n = self.x.len() as f64;
        let mut gw = vec![KahanSum::new(); w.len()];
        let mut gb = KahanSum::new();
        for (x, y) in self.x.iter().zip(&self.y) {
            let r = sigmoid(b + dot(w, x)) - y;
            gb.add(r);
            for (g, xj) in gw.iter_mut().zip(x) {
                g.add(r * xj);
            }
        }
        (
            gw.iter()
                .zip(w)
                .map(|(g, wj)| g.value() / n + self.l2 * wj)
                .collect(),
            gb.value() / n,
        )
    }

    pub fn full(&self, w: &[f64], b: f64) -> f64 {
        self.smooth(w, b) + self.l1 * w.iter().map(|v| v.abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub model: LogisticModel,
    /// Full objective after every accepted proximal step (row 0: start).
    pub trace: Vec<f64>,
}

fn soft_threshold(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

/// Elastic-net logistic regression. Features are standardized with the
/// training mean and standard deviation (constant features keep scale 1);
/// the intercept is not penalized.
pub fn train_logistic_en(
    data: &LabeledWindowSet,
    params: &ElasticNetParams,
) -> Result<LogisticFit> {
    if params.l1_weight < 0.0 || params.l2_weight < 0.0 {
        return Err(Error::InvalidParameter(
            "penalty weights must be >= 0".into(),
        ));
    }
    let n = data.rows.len();
    let pos = data.num_positive();
    if n == 0 || pos == 0 || pos == n {
        return Err(Error::Degenerate(format!(
            "logistic regression needs both classes ({pos} positive of {n})"
        )));
    }
    let d = data.rows[0].features.len();
    if let Some(r) = data.rows.iter().find(|r| r.features.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: r.features.len(),
        });
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| data.rows.iter().map(|r| r.features[j]).sum::<f64>() / n as f64)
        .collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = data
                .rows
                .iter()
                .map(|r| (r.features[j] - mean[j]).powi(2))
                .sum::<f64>()
                / n as f64;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let x: Vec<Vec<f64>> = data
        .rows
        .iter()
        .map(|r| {
            (0..d)
                .map(|j| (r.features[j] - mean[j]) / scale[j])
                .collect()
        })
        .collect();
    let obj = LogisticObjective::new(
        x,
        data.rows.iter().map(|r| r.label).collect(),
        params.l1_weight,
        params.l2_weight,
    );

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut f = obj.full(&w, b);
    let mut trace = vec![f];
    let mut step = 1.0;
    for _ in 0..params.max_iter {
        let smooth = obj.smooth(&w, b);
        let (gw, gb) = obj.smooth_grad(&w, b);
        step *= 1.25;
        let (nw, nb) = loop {
            let nw: Vec<f64> = w
                .iter()
                .zip(&gw)
                .map(|(wj, g)| soft_threshold(wj - step * g, step * params.l1_weight))
                .collect();
            let nb = b - step * gb;
            let dw: Vec<f64> = nw.iter().zip(&w).map(|(a, c)| a - c).collect();
            let db = nb - b;
            let model = smooth + dot(&gw, &dw) + gb * db + (dot(&dw, &dw) + db * db) / (2.0 * step);
            if obj.smooth(&nw, nb) <= model || step < 1e-12 {
                break (nw, nb);
            }
            step *= 0.5;
        };
        let fnew = obj.full(&nw, nb);
        let change = f - fnew;
        w = nw;
        b = nb;
        f = fnew;
        trace.push(f);
        if change.abs() < params.tol {
            break;
        }
    }

    Ok(LogisticFit {
        model: LogisticModel {
            weights: w,
            intercept: b,
            feature_mean: mean,
            feature_scale: scale,
        },
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{TimedSample, Trajectory};

    fn traj(pid: &str, n: usize, outcome: Outcome, ot: f64, treated: bool) -> Trajectory {
        let samples = (0..n)
            .map(|i| TimedSample {
                patient_id: pid.into(),
                index: i,
                time: i as f64,
                features: vec![i as f64],
            })
            .collect();
        let t = Trajectory::new(pid.into(), samples, outcome, ot).unwrap();
        if treated {
            t.with_treatments(vec![1.0])
        } else {
            t
        }
    }

    #[test]
    fn death_within_horizon_is_positive() {
        let c = Cohort::new(vec![traj("a", 12, Outcome::Died, 12.0, false)]).unwrap();
        let w = window_labels(&c, 10.0, Exclusion::None).unwrap();
        let row5 = w.rows.iter().find(|r| r.time == 5.0).unwrap();
        assert!(row5.label);
        let row1 = w.rows.iter().find(|r| r.time == 1.0).unwrap();
        assert!(!row1.label);
        assert!(w.rows.iter().find(|r| r.time == 2.0).unwrap().label);
    }

    #[test]
    fn discharged_patient_all_negative() {
        let c = Cohort::new(vec![traj("a", 5, Outcome::Discharged, 4.0, false)]).unwrap();
        let w = window_labels(&c, 10.0, Exclusion::None).unwrap();
        assert_eq!(w.rows.len(), 5);
        assert_eq!(w.num_positive(), 0);
    }

    #[test]
    fn treated_survivor_dropped() {
        let c = Cohort::new(vec![
            traj("a", 5, Outcome::Discharged, 4.0, true),
            traj("b", 3, Outcome::Died, 3.0, true),
            traj("c", 2, Outcome::Censored, 1.0, false),
        ])
        .unwrap();
        let w = window_labels(&c, 10.0, Exclusion::DropTreatedNegatives).unwrap();
        assert!(w.rows.iter().all(|r| r.patient_id.as_str() != "a"));
        assert_eq!(w.rows.len(), 5);
        assert!(window_labels(&c, 0.0, Exclusion::None).is_err());
    }

    fn set(rows: &[(f64, bool)]) -> LabeledWindowSet {
        LabeledWindowSet {
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| LabeledRow {
                    features: vec![x],
                    label: y,
                    patient_id: PatientId(format!("p{i}")),
                    time: 0.0,
                })
                .collect(),
            horizon: 1.0,
        }
    }

    #[test]
    fn single_class_rejected() {
        assert!(train_logistic_en(
            &set(&[(0.0, true), (1.0, true)]),
            &ElasticNetParams::default()
        )
        .is_err());
    }

    #[test]
    fn separable_data_positive_weight() {
        let data = set(&[(-2.0, false), (-1.0, false), (1.0, true), (2.0, true)]);
        let fit = train_logistic_en(
            &data,
            &ElasticNetParams {
                l2_weight: 0.1,
                ..ElasticNetParams::default()
            },
        )
        .unwrap();
        let m = &fit.model;
        assert!(m.weights[0] > 0.0 && m.weights[0].is_finite());
        assert!(m.predict_prob(&[2.0]).unwrap() > 0.5);
        assert!(m.predict_prob(&[-2.0]).unwrap() < 0.5);
    }

    #[test]
    fn large_l1_kills_weights() {
        let data = set(&[
            (-2.0, false),
            (-1.0, true),
            (1.0, false),
            (2.0, true),
            (3.0, true),
        ]);
        let fit = train_logistic_en(
            &data,
            &ElasticNetParams {
                l1_weight: 10.0,
                ..ElasticNetParams::default()
            },
        )
        .unwrap();
        assert_eq!(fit.model.weights, vec![0.0]);
    }

    #[test]
    fn predict_prob_limits() {
        let m = LogisticModel {
            weights: vec![0.0],
            intercept: 0.0,
            feature_mean: vec![0.0],
            feature_scale: vec![1.0],
        };
        assert_eq!(m.predict_prob(&[3.0]).unwrap(), 0.5);
        let m = LogisticModel {
            intercept: 30.0,
            ..m
        };
        assert!(m.predict_prob(&[0.0]).unwrap() > 1.0 - 1e-9);
        assert!(m.predict_prob(&[0.0, 1.0]).is_err());
    }
}
