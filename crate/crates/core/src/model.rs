//! Severity score models: a linear weight vector or a weighted tree ensemble.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::dot;
use crate::tree::RegressionTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub coeff: f64,
    pub tree: RegressionTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScoreModel {
    Linear {
        weights: Vec<f64>,
    },
    Ensemble {
        dim: usize,
        members: Vec<EnsembleMember>,
    },
}

impl ScoreModel {
    pub fn linear(weights: Vec<f64>) -> Result<Self> {
        let m = ScoreModel::Linear { weights };
        m.validate()?;
        Ok(m)
    }

    pub fn ensemble(dim: usize, members: Vec<EnsembleMember>) -> Result<Self> {
        let m = ScoreModel::Ensemble { dim, members };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScoreModel::Linear { weights } => {
                if weights.iter().any(|w| !w.is_finite()) {
                    return Err(Error::InvalidData("non-finite linear weight".into()));
                }
            }
            ScoreModel::Ensemble { dim, members } => {
                for m in members {
                    if !m.coeff.is_finite() {
                        return Err(Error::InvalidData("non-finite ensemble coefficient".into()));
                    }
                    m.tree.validate()?;
                    if m.tree.min_input_dim() > *dim {
                        return Err(Error::DimensionMismatch {
                            expected: *dim,
                            got: m.tree.min_input_dim(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ScoreModel::Linear { weights } => weights.len(),
            ScoreModel::Ensemble { dim, .. } => *dim,
        }
    }

    /// Severity score of one feature vector.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.score_unchecked(x))
    }

    pub(crate) fn score_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            ScoreModel::Linear { weights } => dot(weights, x),
            ScoreModel::Ensemble { members, .. } => {
                members.iter().map(|m| m.coeff * m.tree.predict(x)).sum()
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ScoreModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}
