//! Patient trajectories, sample references and the two pair sets that drive
//! learning: ordered comparisons and consecutive-sample smoothness pairs.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub String);

impl PatientId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PatientId {
    fn from(s: &str) -> Self {
        PatientId(s.to_string())
    }
}

/// Points at one sample: patient plus ordinal position in the trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRef {
    pub patient: PatientId,
    pub index: usize,
}

impl SampleRef {
    pub fn new(patient: impl Into<PatientId>, index: usize) -> Self {
        Self {
            patient: patient.into(),
            index,
        }
    }
}

impl From<String> for PatientId {
    fn from(s: String) -> Self {
        PatientId(s)
    }
}

impl fmt::Display for SampleRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.patient, self.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedSample {
    pub patient_id: PatientId,
    pub index: usize,
    pub time: f64,
    pub features: Vec<f64>,
}

impl TimedSample {
    pub fn reference(&self) -> SampleRef {
        SampleRef {
            patient: self.patient_id.clone(),
            index: self.index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Died,
    Discharged,
    Censored,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Died => "died",
            Outcome::Discharged => "discharged",
            Outcome::Censored => "censored",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "died" => Ok(Outcome::Died),
            "discharged" => Ok(Outcome::Discharged),
            "censored" => Ok(Outcome::Censored),
            other => Err(Error::InvalidData(format!("unknown outcome '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub patient_id: PatientId,
    pub samples: Vec<TimedSample>,
    pub outcome: Outcome,
    pub outcome_time: f64,
    /// Times at which a treatment was administered. Only the simulator fills
    /// this; the dataset CSV does not carry it.
    pub treatments: Vec<f64>,
}

impl Trajectory {
    /// Builds and validates a trajectory.
    pub fn new(
        patient_id: PatientId,
        samples: Vec<TimedSample>,
        outcome: Outcome,
        outcome_time: f64,
    ) -> Result<Self> {
        let t = Self {
            patient_id,
            samples,
            outcome,
            outcome_time,
            treatments: Vec::new(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn with_treatments(mut self, treatments: Vec<f64>) -> Self {
        self.treatments = treatments;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pid = &self.patient_id;
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::InvalidData(format!("patient {pid}: empty trajectory")))?;
        let d = first.features.len();
        for (i, s) in self.samples.iter().enumerate() {
            if s.index != i {
                return Err(Error::InvalidData(format!(
                    "patient {pid}: sample at position {i} has index {}",
                    s.index
                )));
            }
            if &s.patient_id != pid {
                return Err(Error::InvalidData(format!(
                    "patient {pid}: sample {i} belongs to {}",
                    s.patient_id
                )));
            }
            if !s.time.is_finite() {
                return Err(Error::InvalidData(format!(
                    "patient {pid}: non-finite time"
                )));
            }
            if s.features.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.features.len(),
                });
            }
            if i > 0 && s.time <= self.samples[i - 1].time {
                return Err(Error::InvalidData(format!(
                    "patient {pid}: times not strictly increasing at index {i}"
                )));
            }
        }
        let last = self.samples.last().map(|s| s.time).unwrap_or(0.0);
        if !(self.outcome_time >= last) {
            return Err(Error::InvalidData(format!(
                "patient {pid}: outcome time {} precedes last sample {last}",
                self.outcome_time
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.samples[0].features.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn died(&self) -> bool {
        self.outcome == Outcome::Died
    }

    pub fn was_treated(&self) -> bool {
        !self.treatments.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }
}

/// Ordered clinical comparison: `hi` is the more severe sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComparisonPair {
    pub hi: SampleRef,
    pub lo: SampleRef,
}

/// Consecutive samples `a` (index i) and `b` (index i+1) of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessPair {
    pub a: SampleRef,
    pub b: SampleRef,
    pub dt: f64,
}

/// All `T_p - 1` consecutive pairs of a trajectory in index order.
pub fn build_smoothness_pairs(trajectory: &Trajectory) -> Vec<SmoothnessPair> {
    trajectory
        .samples
        .windows(2)
        .map(|w| SmoothnessPair {
            a: w[0].reference(),
            b: w[1].reference(),
            dt: w[1].time - w[0].time,
        })
        .collect()
}

/// A validated collection of trajectories sharing one feature dimension,
/// indexed by patient id for sample lookup.
#[derive(Debug, Clone)]
pub struct Cohort {
    trajectories: Vec<Trajectory>,
    by_patient: HashMap<PatientId, usize>,
    dim: usize,
}

impl Cohort {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories.first().ok_or(Error::EmptyInput("cohort"))?;
        let dim = first.samples.first().map(|s| s.features.len()).unwrap_or(0);
        let mut by_patient = HashMap::with_capacity(trajectories.len());
        for (i, t) in trajectories.iter().enumerate() {
            t.validate()?;
            if t.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: t.dim(),
                });
            }
            if by_patient.insert(t.patient_id.clone(), i).is_some() {
                return Err(Error::InvalidData(format!(
                    "duplicate patient id {}",
                    t.patient_id
                )));
            }
        }
        Ok(Self {
            trajectories,
            by_patient,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn into_trajectories(self) -> Vec<Trajectory> {
        self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectory(&self, patient: &PatientId) -> Option<&Trajectory> {
        self.by_patient.get(patient).map(|&i| &self.trajectories[i])
    }

    pub fn sample(&self, r: &SampleRef) -> Result<&TimedSample> {
        self.trajectory(&r.patient)
            .and_then(|t| t.samples.get(r.index))
            .ok_or_else(|| Error::MissingSample(r.clone()))
    }

    pub fn features(&self, r: &SampleRef) -> Result<&[f64]> {
        self.sample(r).map(|s| s.features.as_slice())
    }

    pub fn num_samples(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = &TimedSample> {
        self.trajectories.iter().flat_map(|t| t.samples.iter())
    }

    /// Every smoothness pair of every trajectory, in cohort order.
    pub fn smoothness_pairs(&self) -> Vec<SmoothnessPair> {
        self.trajectories
            .iter()
            .flat_map(build_smoothness_pairs)
            .collect()
    }

    /// Returns a copy with `f` applied to every feature vector.
    pub fn map_features(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| {
                let mut t = t.clone();
                for s in &mut t.samples {
                    s.features = f(&s.features);
                }
                t
            })
            .collect();
        Cohort::new(trajectories)
    }
}
