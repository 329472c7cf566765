//! Severity-score learning from pairwise comparisons with a temporal
//! smoothness penalty, plus the synthetic simulator, baselines and metrics
//! used to evaluate it.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod data;
pub mod error;
pub mod evalstats;
pub mod experiments;
pub mod io;
pub mod ldss;
pub mod model;
pub mod nldss;
pub mod numeric;
pub mod seed;
pub mod simflu;
pub mod supervision;
pub mod tree;
pub mod trendfeat;

pub use data::{
    Cohort, ComparisonPair, Outcome, PatientId, SampleRef, SmoothnessPair, TimedSample, Trajectory,
};
pub use error::{Error, Result};
pub use model::ScoreModel;
