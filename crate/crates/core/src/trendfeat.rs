//! Seven trend features summarizing a severity-score trajectory up to the
//! current time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub times: Vec<f64>,
    pub scores: Vec<f64>,
    /// Admission time.
    pub t0: f64,
}

impl ScoreSeries {
    pub fn new(times: Vec<f64>, scores: Vec<f64>, t0: f64) -> Result<Self> {
        let s = Self { times, scores, t0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::EmptyInput("score series"));
        }
        if self.times.len() != self.scores.len() {
            return Err(Error::DimensionMismatch {
                expected: self.times.len(),
                got: self.scores.len(),
            });
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidData(
                "series times must be strictly increasing".into(),
            ));
        }
        if !(self.times[0] > self.t0) {
            return Err(Error::InvalidData(format!(
                "first time {} must follow admission time {}",
                self.times[0], self.t0
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The series truncated to its first `len` samples.
    pub fn prefix(&self, len: usize) -> ScoreSeries {
        ScoreSeries {
            times: self.times[..len].to_vec(),
            scores: self.scores[..len].to_vec(),
            t0: self.t0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrendConfig {
    /// Use the printed weight for feature 6, which is identically one, so the
    /// feature is the plain sum of absolute increments instead of their mean.
    pub feature6_literal: bool,
}

pub const NUM_TREND_FEATURES: usize = 7;

/// Features 1-7 at the last sample of `series`:
///
/// 1. duration-weighted mean score since admission
/// 2. time-weighted mean score
/// 3. squared-time-weighted mean score
/// 4. average rate of change, `(s_i - s_1)/(t_i - t_1)`
/// 5. duration-weighted sum of increments over `t_i - t_1`
/// 6. mean absolute increment
/// 7. duration-weighted sum of absolute increments over `t_i - t_1`
///
/// Features 4-7 are zero for a single sample.
pub fn trend_features(
    series: &ScoreSeries,
    config: &TrendConfig,
) -> Result<[f64; NUM_TREND_FEATURES]> {
    series.validate()?;
    let (t, s) = (&series.times, &series.scores);
    let i = t.len();

    let mut prev = series.t0;
    let mut f1 = 0.0;
    for (tj, sj) in t.iter().zip(s) {
        f1 += (tj - prev) * sj;
        prev = *tj;
    }
    f1 /= t[i - 1] - series.t0;

    let f2 = t.iter().zip(s).map(|(tj, sj)| tj * sj).sum::<f64>() / t.iter().sum::<f64>();
    let f3 = t.iter().zip(s).map(|(tj, sj)| tj * tj * sj).sum::<f64>()
        / t.iter().map(|tj| tj * tj).sum::<f64>();

    if i == 1 {
        return Ok([f1, f2, f3, 0.0, 0.0, 0.0, 0.0]);
    }
    let span = t[i - 1] - t[0];
    let f4 = (s[i - 1] - s[0]) / span;
    let (mut f5, mut abs_sum, mut f7) = (0.0, 0.0, 0.0);
    for j in 1..i {
        let ds = s[j] - s[j - 1];
        let dt = t[j] - t[j - 1];
        f5 += ds * dt;
        f7 += ds.abs() * dt;
        abs_sum += ds.abs();
    }
    let f6 = if config.feature6_literal {
        abs_sum
    } else {
        abs_sum / (i - 1) as f64
    };
    Ok([f1, f2, f3, f4, f5 / span, f6, f7 / span])
}

/// Trend features at every prefix of the series.
pub fn trend_features_per_sample(
    series: &ScoreSeries,
    config: &TrendConfig,
) -> Result<Vec<[f64; NUM_TREND_FEATURES]>> {
    series.validate()?;
    (1..=series.len())
        .map(|k| trend_features(&series.prefix(k), config))
        .collect()
}
