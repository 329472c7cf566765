//! Automatic generation of ordered comparison pairs: the measurement
//! dominance rule, coarse severity grades and stage-balanced sampling.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, ComparisonPair, SampleRef};
use crate::error::{Error, Result};

/// Minimum gap on at least one coordinate for a dominance ordering.
pub const DOMINANCE_GAP: f64 = 2.0;
/// Number of leading feature coordinates that hold the measurements.
pub const MEASUREMENT_COORDS: usize = 2;

const PROBE_DRAWS: usize = 100_000;
const MIN_ACCEPTANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominance {
    XMoreSevere,
    YMoreSevere,
    Incomparable,
}

fn dominates(x: &[f64], y: &[f64]) -> bool {
    x.iter().zip(y).all(|(a, b)| a >= b) && x.iter().zip(y).any(|(a, b)| a - b >= DOMINANCE_GAP)
}

/// `x` is more severe when every coordinate is at least as high and one is
/// higher by two or more.
pub fn dominance_compare(x: &[f64], y: &[f64]) -> Result<Dominance> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(if dominates(x, y) {
        Dominance::XMoreSevere
    } else if dominates(y, x) {
        Dominance::YMoreSevere
    } else {
        Dominance::Incomparable
    })
}

/// All sample references of a cohort in canonical `(patient, index)` order.
fn canonical_refs(cohort: &Cohort) -> Vec<(SampleRef, &[f64])> {
    let mut refs: Vec<(SampleRef, &[f64])> = cohort
        .samples()
        .map(|s| (s.reference(), s.features.as_slice()))
        .collect();
    refs.sort_by(|a, b| a.0.cmp(&b.0));
    refs
}

/// Rejection-samples `n_pairs` dominance-ordered pairs, with replacement.
///
/// Both references are drawn uniformly over all samples of the cohort; only
/// the first `coords` features take part in the comparison.
pub fn sample_dominance_pairs(
    cohort: &Cohort,
    n_pairs: usize,
    seed: u64,
    coords: usize,
) -> Result<Vec<ComparisonPair>> {
    if cohort.is_empty() {
        return Err(Error::EmptyInput("cohort"));
    }
    if coords == 0 || coords > cohort.dim() {
        return Err(Error::InvalidParameter(format!(
            "cannot compare {coords} coordinates of {}-dimensional samples",
            cohort.dim()
        )));
    }
    let refs = canonical_refs(cohort);
    let n = refs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_pairs);
    let mut draws = 0usize;
    while out.len() < n_pairs {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        draws += 1;
        let (x, y) = (&refs[i].1[..coords], &refs[j].1[..coords]);
        match dominance_compare(x, y)? {
            Dominance::XMoreSevere => out.push(ComparisonPair {
                hi: refs[i].0.clone(),
                lo: refs[j].0.clone(),
            }),
            Dominance::YMoreSevere => out.push(ComparisonPair {
                hi: refs[j].0.clone(),
                lo: refs[i].0.clone(),
            }),
            Dominance::Incomparable => {}
        }
        if draws == PROBE_DRAWS && (out.len() as f64) < MIN_ACCEPTANCE * PROBE_DRAWS as f64 {
            return Err(Error::Degenerate(format!(
                "only {} comparable pairs in {PROBE_DRAWS} draws over {n} samples",
                out.len()
            )));
        }
    }
    Ok(out)
}

/// Coarse severity grade of the two measurement states: 0 if both benign
/// (state 1 or 2), 1 if exactly one is 3 or higher, 2 if both are.
pub fn coarse_grade(x: &[f64]) -> Result<u8> {
    if x.len() < MEASUREMENT_COORDS {
        return Err(Error::DimensionMismatch {
            expected: MEASUREMENT_COORDS,
            got: x.len(),
        });
    }
    let mut grade = 0;
    for &v in &x[..MEASUREMENT_COORDS] {
        if !(1.0..=10.0).contains(&v) {
            return Err(Error::InvalidData(format!(
                "measurement state {v} outside 1..10"
            )));
        }
        if v >= 3.0 {
            grade += 1;
        }
    }
    Ok(grade)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradedSample {
    pub sample: SampleRef,
    pub grade: u8,
}

/// Grades every sample of a cohort with `grader`.
pub fn grade_cohort(
    cohort: &Cohort,
    grader: impl Fn(&[f64]) -> Result<u8>,
) -> Result<Vec<GradedSample>> {
    cohort
        .samples()
        .map(|s| {
            Ok(GradedSample {
                sample: s.reference(),
                grade: grader(&s.features)?,
            })
        })
        .collect()
}

/// Stage-balanced comparisons: for every pair of distinct grades
/// `g_hi > g_lo`, `per_combo` pairs with `hi` uniform over grade `g_hi` and
/// `lo` uniform over grade `g_lo`.
///
/// `grades` lists the required stages; `None` uses the grades present.
pub fn sample_stage_pairs(
    graded: &[GradedSample],
    grades: Option<&[u8]>,
    per_combo: usize,
    seed: u64,
) -> Result<Vec<ComparisonPair>> {
    let mut strata: BTreeMap<u8, Vec<&SampleRef>> = BTreeMap::new();
    for g in graded {
        strata.entry(g.grade).or_default().push(&g.sample);
    }
    for s in strata.values_mut() {
        s.sort();
    }
    let mut levels: Vec<u8> = match grades {
        Some(gs) => gs.to_vec(),
        None => strata.keys().copied().collect(),
    };
    levels.sort_unstable();
    levels.dedup();
    if levels.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least two grades, have {levels:?}"
        )));
    }
    for g in &levels {
        if strata.get(g).is_none_or(|s| s.is_empty()) {
            return Err(Error::MissingGrade(*g));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_combo * levels.len() * (levels.len() - 1) / 2);
    for (a, &lo_grade) in levels.iter().enumerate() {
        for &hi_grade in &levels[a + 1..] {
            let hi = &strata[&hi_grade];
            let lo = &strata[&lo_grade];
            for _ in 0..per_combo {
                out.push(ComparisonPair {
                    hi: hi[rng.random_range(0..hi.len())].clone(),
                    lo: lo[rng.random_range(0..lo.len())].clone(),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Outcome, TimedSample, Trajectory};

    fn cohort_from(points: &[(&str, Vec<[f64; 2]>)]) -> Cohort {
        Cohort::new(
            points
                .iter()
                .map(|(pid, feats)| {
                    let samples = feats
                        .iter()
                        .enumerate()
                        .map(|(i, f)| TimedSample {
                            patient_id: (*pid).into(),
                            index: i,
                            time: i as f64,
                            features: f.to_vec(),
                        })
                        .collect();
                    Trajectory::new(
                        (*pid).into(),
                        samples,
                        Outcome::Censored,
                        (feats.len() - 1) as f64,
                    )
                    .unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn dominance_examples() {
        assert_eq!(
            dominance_compare(&[5.0, 3.0], &[3.0, 3.0]).unwrap(),
            Dominance::XMoreSevere
        );
        assert_eq!(
            dominance_compare(&[4.0, 3.0], &[3.0, 3.0]).unwrap(),
            Dominance::Incomparable
        );
        assert_eq!(
            dominance_compare(&[5.0, 2.0], &[3.0, 3.0]).unwrap(),
            Dominance::Incomparable
        );
        assert_eq!(
            dominance_compare(&[3.0, 3.0], &[3.0, 5.0]).unwrap(),
            Dominance::YMoreSevere
        );
        assert!(dominance_compare(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn coarse_grade_examples() {
        assert_eq!(coarse_grade(&[1.0, 2.0]).unwrap(), 0);
        assert_eq!(coarse_grade(&[3.0, 1.0]).unwrap(), 1);
        assert_eq!(coarse_grade(&[5.0, 7.0]).unwrap(), 2);
        assert!(coarse_grade(&[0.0, 2.0]).is_err());
        assert!(coarse_grade(&[11.0, 2.0]).is_err());
    }

    #[test]
    fn constant_cohort_has_no_comparable_pairs() {
        let c = cohort_from(&[("a", vec![[3.0, 3.0]; 5]), ("b", vec![[3.0, 3.0]; 4])]);
        assert!(matches!(
            sample_dominance_pairs(&c, 10, 0, 2),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn dominance_pairs_replay_and_determinism() {
        let c = cohort_from(&[
            ("a", vec![[1.0, 1.0], [3.0, 1.0], [5.0, 2.0]]),
            ("b", vec![[1.0, 1.0], [1.0, 4.0], [2.0, 6.0]]),
        ]);
        let p = sample_dominance_pairs(&c, 200, 4, 2).unwrap();
        assert_eq!(p.len(), 200);
        for pair in &p {
            let d = dominance_compare(c.features(&pair.hi).unwrap(), c.features(&pair.lo).unwrap())
                .unwrap();
            assert_eq!(d, Dominance::XMoreSevere);
        }
        assert_eq!(p, sample_dominance_pairs(&c, 200, 4, 2).unwrap());
    }

    #[test]
    fn dominance_pairs_independent_of_cohort_order() {
        let a = ("a", vec![[1.0, 1.0], [3.0, 1.0], [5.0, 2.0]]);
        let b = ("b", vec![[1.0, 1.0], [1.0, 4.0], [2.0, 6.0]]);
        let c1 = cohort_from(&[a.clone(), b.clone()]);
        let c2 = cohort_from(&[b, a]);
        assert_eq!(
            sample_dominance_pairs(&c1, 50, 8, 2).unwrap(),
            sample_dominance_pairs(&c2, 50, 8, 2).unwrap()
        );
    }

    fn graded(spec: &[(u8, usize)]) -> Vec<GradedSample> {
        let mut out = Vec::new();
        for &(grade, n) in spec {
            for i in 0..n {
                out.push(GradedSample {
                    sample: SampleRef::new(format!("g{grade}"), i),
                    grade,
                });
            }
        }
        out
    }

    #[test]
    fn stage_pairs_three_grades() {
        let g = graded(&[(0, 10), (1, 7), (2, 3)]);
        let p = sample_stage_pairs(&g, None, 2000, 1).unwrap();
        assert_eq!(p.len(), 6000);
        let grade_of = |r: &SampleRef| g.iter().find(|x| &x.sample == r).unwrap().grade;
        for pair in p.iter().step_by(97) {
            assert!(grade_of(&pair.hi) > grade_of(&pair.lo));
        }
    }

    #[test]
    fn stage_pairs_two_grades() {
        let g = graded(&[(0, 4), (1, 4)]);
        let p = sample_stage_pairs(&g, Some(&[0, 1]), 5, 1).unwrap();
        assert_eq!(p.len(), 5);
        assert!(p.iter().all(|x| x.hi.patient.as_str() == "g1"));
    }

    #[test]
    fn stage_pairs_missing_grade() {
        let g = graded(&[(0, 4), (1, 4)]);
        assert!(matches!(
            sample_stage_pairs(&g, Some(&[0, 1, 2]), 5, 1),
            Err(Error::MissingGrade(2))
        ));
    }

    #[test]
    fn stage_pairs_exchangeable() {
        let g = graded(&[(0, 6), (1, 5), (2, 4)]);
        let mut rev = g.clone();
        rev.reverse();
        assert_eq!(
            sample_stage_pairs(&g, None, 30, 3).unwrap(),
            sample_stage_pairs(&rev, None, 30, 3).unwrap()
        );
    }
}
