//! Non-linear severity scores: gradient boosting of shallow regression trees
//! against the pairwise-plus-smoothness objective.
//!
//! The objective depends on the score function only through the scores it
//! assigns to the samples appearing in `O ∪ S`, so boosting works in that
//! score space: each round fits a tree to the negative score gradient at the
//! unique samples and picks its coefficient by a line search.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Cohort, ComparisonPair, SampleRef, SmoothnessPair};
use crate::error::{Error, Result};
use crate::ldss::Huber;
use crate::model::{EnsembleMember, ScoreModel};
use crate::numeric::KahanSum;
use crate::tree::{RegressionTree, TreeNode};

/// Scores over the unique samples referenced by a pair set, in first-seen order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub samples: Vec<SampleRef>,
    pub values: Vec<f64>,
}

impl ScoreVector {
    pub fn get(&self, r: &SampleRef) -> Option<f64> {
        self.samples
            .iter()
            .position(|s| s == r)
            .map(|i| self.values[i])
    }
}

/// The score-space objective with pairs resolved to positions in a
/// [`ScoreVector`].
#[derive(Debug, Clone)]
pub struct ScoreProblem {
    samples: Vec<SampleRef>,
    inputs: Vec<Vec<f64>>,
    ordering: Vec<(usize, usize)>,
    smoothing: Vec<(usize, usize, f64)>,
    lambda_s: f64,
    huber: Huber,
}

struct Interner {
    samples: Vec<SampleRef>,
    lookup: HashMap<SampleRef, usize>,
}

impl Interner {
    fn new() -> Self {
        Self {
            samples: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    fn intern(&mut self, r: &SampleRef) -> usize {
        if let Some(&i) = self.lookup.get(r) {
            return i;
        }
        let i = self.samples.len();
        self.samples.push(r.clone());
        self.lookup.insert(r.clone(), i);
        i
    }
}

impl ScoreProblem {
    #[allow(clippy::type_complexity)]
    fn build(
        ordering: &[ComparisonPair],
        smoothing: &[SmoothnessPair],
        lambda_s: f64,
        huber_h: f64,
    ) -> Result<(
        Interner,
        Vec<(usize, usize)>,
        Vec<(usize, usize, f64)>,
        Huber,
    )> {
        let huber = Huber::new(huber_h)?;
        if !(lambda_s >= 0.0 && lambda_s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_s={lambda_s} must be >= 0"
            )));
        }
        let mut interner = Interner::new();
        let o = ordering
            .iter()
            .map(|p| (interner.intern(&p.hi), interner.intern(&p.lo)))
            .collect();
        let s = smoothing
            .iter()
            .map(|p| {
                if !(p.dt > 0.0) {
                    return Err(Error::InvalidData(format!(
                        "smoothness pair with dt={}",
                        p.dt
                    )));
                }
                Ok((interner.intern(&p.a), interner.intern(&p.b), p.dt))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((interner, o, s, huber))
    }

    /// Resolves pairs against a cohort; every referenced sample must exist.
    pub fn new(
        cohort: &Cohort,
        ordering: &[ComparisonPair],
        smoothing: &[SmoothnessPair],
        lambda_s: f64,
        huber_h: f64,
    ) -> Result<Self> {
        let (interner, o, s, huber) = Self::build(ordering, smoothing, lambda_s, huber_h)?;
        let inputs = interner
            .samples
            .iter()
            .map(|r| cohort.features(r).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples: interner.samples,
            inputs,
            ordering: o,
            smoothing: s,
            lambda_s,
            huber,
        })
    }

    /// Score-only problem without feature vectors (for objective and gradient
    /// evaluation; cannot be boosted).
    pub fn without_inputs(
        ordering: &[ComparisonPair],
        smoothing: &[SmoothnessPair],
        lambda_s: f64,
        huber_h: f64,
    ) -> Result<Self> {
        let (interner, o, s, huber) = Self::build(ordering, smoothing, lambda_s, huber_h)?;
        Ok(Self {
            samples: interner.samples,
            inputs: Vec::new(),
            ordering: o,
            smoothing: s,
            lambda_s,
            huber,
        })
    }

    pub fn samples(&self) -> &[SampleRef] {
        &self.samples
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn check(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.samples.len() {
            return Err(Error::DimensionMismatch {
                expected: self.samples.len(),
                got: s.len(),
            });
        }
        Ok(())
    }

    /// Gathers a score vector from a map keyed by sample.
    pub fn gather(&self, scores: &HashMap<SampleRef, f64>) -> Result<Vec<f64>> {
        self.samples
            .iter()
            .map(|r| {
                scores
                    .get(r)
                    .copied()
                    .ok_or_else(|| Error::MissingSample(r.clone()))
            })
            .collect()
    }

    /// `1/|O| Σ L_h(1 - (s_hi - s_lo)) + λ_S/|S| Σ ((s_b - s_a)/dt)²`.
    pub fn objective(&self, s: &[f64]) -> Result<f64> {
        self.check(s)?;
        Ok(self.objective_unchecked(s))
    }

    fn objective_unchecked(&self, s: &[f64]) -> f64 {
        let mut total = 0.0;
        if !self.ordering.is_empty() {
            let ord: KahanSum = self
                .ordering
                .iter()
                .map(|&(hi, lo)| self.huber.value(1.0 - (s[hi] - s[lo])))
                .collect();
            total += ord.value() / self.ordering.len() as f64;
        }
        if !self.smoothing.is_empty() {
            let sm: KahanSum = self
                .smoothing
                .iter()
                .map(|&(a, b, dt)| {
                    let r = (s[b] - s[a]) / dt;
                    r * r
                })
                .collect();
            total += self.lambda_s * sm.value() / self.smoothing.len() as f64;
        }
        total
    }

    pub fn gradient(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check(s)?;
        let mut acc = vec![KahanSum::new(); s.len()];
        if !self.ordering.is_empty() {
            let c = 1.0 / self.ordering.len() as f64;
            for &(hi, lo) in &self.ordering {
                let d = c * self.huber.d1(1.0 - (s[hi] - s[lo]));
                acc[hi].add(-d);
                acc[lo].add(d);
            }
        }
        if !self.smoothing.is_empty() {
            let c = 2.0 * self.lambda_s / self.smoothing.len() as f64;
            for &(a, b, dt) in &self.smoothing {
                let d = c * (s[b] - s[a]) / (dt * dt);
                acc[b].add(d);
                acc[a].add(-d);
            }
        }
        Ok(acc.iter().map(KahanSum::value).collect())
    }
}

/// Score-space objective over an explicit score map.
pub fn objective_scores(
    scores: &HashMap<SampleRef, f64>,
    ordering: &[ComparisonPair],
    smoothing: &[SmoothnessPair],
    lambda_s: f64,
    h: f64,
) -> Result<f64> {
    let p = ScoreProblem::without_inputs(ordering, smoothing, lambda_s, h)?;
    p.objective(&p.gather(scores)?)
}

/// Gradient of [`objective_scores`] with respect to each sample's score.
pub fn score_gradient(
    scores: &HashMap<SampleRef, f64>,
    ordering: &[ComparisonPair],
    smoothing: &[SmoothnessPair],
    lambda_s: f64,
    h: f64,
) -> Result<ScoreVector> {
    let p = ScoreProblem::without_inputs(ordering, smoothing, lambda_s, h)?;
    let values = p.gradient(&p.gather(scores)?)?;
    Ok(ScoreVector {
        samples: p.samples,
        values,
    })
}

struct Cart<'a> {
    inputs: &'a [Vec<f64>],
    targets: &'a [f64],
    dim: usize,
    max_depth: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Cart<'_> {
    fn grow(&self, idx: &mut [usize], depth: usize) -> TreeNode {
        let n = idx.len();
        let (sum, sumsq) = idx.iter().fold((0.0, 0.0), |(s, q), &i| {
            let y = self.targets[i];
            (s + y, q + y * y)
        });
        let mean = sum / n as f64;
        let sse = (sumsq - sum * sum / n as f64).max(0.0);
        if depth >= self.max_depth || n < 2 {
            return TreeNode::leaf(mean);
        }
        let Some(best) = self.best_split(idx, sum, sse) else {
            return TreeNode::leaf(mean);
        };
        let split_at = partition(idx, |i| self.inputs[i][best.feature] <= best.threshold);
        let (left, right) = idx.split_at_mut(split_at);
        TreeNode::split(
            best.feature,
            best.threshold,
            self.grow(left, depth + 1),
            self.grow(right, depth + 1),
        )
    }

    fn best_split(&self, idx: &[usize], total: f64, parent_sse: f64) -> Option<BestSplit> {
        let n = idx.len() as f64;
        let mut best: Option<BestSplit> = None;
        let mut order = idx.to_vec();
        for f in 0..self.dim {
            order.sort_by(|&a, &b| self.inputs[a][f].total_cmp(&self.inputs[b][f]));
            let mut left_sum = 0.0;
            for k in 0..order.len() - 1 {
                left_sum += self.targets[order[k]];
                let (a, b) = (self.inputs[order[k]][f], self.inputs[order[k + 1]][f]);
                if a == b {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = n - nl;
                let right_sum = total - left_sum;
                // Parent SSE minus children SSE, with the Σy² terms cancelled.
                let gain =
                    left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / n;
                if best.as_ref().is_none_or(|bst| gain > bst.gain) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        let tiny = 1e-12 * parent_sse.max(f64::MIN_POSITIVE);
        best.filter(|b| b.gain > tiny)
    }
}

fn partition(idx: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut k = 0;
    for j in 0..idx.len() {
        if pred(idx[j]) {
            idx.swap(k, j);
            k += 1;
        }
    }
    k
}

/// Greedy CART regression tree minimizing squared error.
///
/// Split candidates are midpoints between consecutive distinct feature values;
/// growth stops at `depth`, at nodes with fewer than two samples, or when no
/// split reduces the squared error.
pub fn fit_tree(inputs: &[Vec<f64>], targets: &[f64], depth: usize) -> Result<RegressionTree> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("tree inputs"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    let dim = inputs[0].len();
    if let Some(x) = inputs.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    let cart = Cart {
        inputs,
        targets,
        dim,
        max_depth: depth,
    };
    let mut idx: Vec<usize> = (0..inputs.len()).collect();
    RegressionTree::new(cart.grow(&mut idx, 0), depth)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NldssParams {
    pub lambda_s: f64,
    pub huber_h: f64,
    pub num_trees: usize,
    pub tree_depth: usize,
    /// Upper end of the step-size search interval.
    pub alpha_max: f64,
    /// Objective evaluations spent by the golden-section search.
    pub line_search_evals: usize,
}

impl Default for NldssParams {
    fn default() -> Self {
        Self {
            lambda_s: 1.0,
            huber_h: 0.5,
            num_trees: 5,
            tree_depth: 3,
            alpha_max: 10.0,
            line_search_evals: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostIter {
    pub iter: usize,
    pub objective: f64,
    pub alpha: f64,
    /// Pearson correlation of the fitted tree with the negative gradient.
    pub grad_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NldssFit {
    pub model: ScoreModel,
    /// Row 0 is the zero model; row k follows the k-th tree.
    pub trace: Vec<BoostIter>,
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of `phi` on `[0, hi]`, returning the best
/// evaluated point. `phi(0)` is supplied so α = 0 is always a candidate.
fn golden_section(phi: impl Fn(f64) -> f64, phi0: f64, hi: f64, evals: usize) -> (f64, f64) {
    let mut best = (0.0, phi0);
    let consider = |a: f64, v: f64, best: &mut (f64, f64)| {
        if v < best.1 {
            *best = (a, v);
        }
    };
    if evals == 0 {
        return best;
    }
    let (mut a, mut b) = (0.0, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = phi(c);
    consider(c, fc, &mut best);
    if evals == 1 {
        return best;
    }
    let mut fd = phi(d);
    consider(d, fd, &mut best);
    for _ in 2..evals {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = phi(c);
            consider(c, fc, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = phi(d);
            consider(d, fd, &mut best);
        }
    }
    best
}

/// Boosts `params.num_trees` trees from `g ≡ 0`.
pub fn train_nldss(problem: &ScoreProblem, params: &NldssParams) -> Result<NldssFit> {
    if problem.inputs.len() != problem.samples.len() {
        return Err(Error::InvalidParameter(
            "score problem has no feature inputs".into(),
        ));
    }
    if !(params.alpha_max > 0.0) {
        return Err(Error::InvalidParameter("alpha_max must be > 0".into()));
    }
    let dim = problem.inputs.first().map_or(0, Vec::len);
    let n = problem.len();
    let mut scores = vec![0.0; n];
    let mut objective = problem.objective_unchecked(&scores);
    let mut trace = vec![BoostIter {
        iter: 0,
        objective,
        alpha: 0.0,
        grad_correlation: 0.0,
    }];
    let mut members = Vec::with_capacity(params.num_trees);

    for k in 1..=params.num_trees {
        let grad = problem.gradient(&scores)?;
        if k == 1 && !problem.ordering.is_empty() && grad.iter().all(|&g| g == 0.0) {
            return Err(Error::Degenerate(
                "score gradient vanishes at g = 0; comparisons cancel out".into(),
            ));
        }
        let targets: Vec<f64> = grad.iter().map(|g| -g).collect();
        let tree = fit_tree(&problem.inputs, &targets, params.tree_depth)?;
        let mut preds: Vec<f64> = problem.inputs.iter().map(|x| tree.predict(x)).collect();
        let scale = preds.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        let tree = if scale > 0.0 {
            preds.iter_mut().for_each(|p| *p /= scale);
            tree.scaled(1.0 / scale)
        } else {
            tree
        };

        let phi = |alpha: f64| {
            let cand: Vec<f64> = scores
                .iter()
                .zip(&preds)
                .map(|(s, p)| s + alpha * p)
                .collect();
            problem.objective_unchecked(&cand)
        };
        let (alpha, _) = if scale > 0.0 {
            golden_section(phi, objective, params.alpha_max, params.line_search_evals)
        } else {
            (0.0, objective)
        };
        for (s, p) in scores.iter_mut().zip(&preds) {
            *s += alpha * p;
        }
        objective = problem.objective_unchecked(&scores);
        trace.push(BoostIter {
            iter: k,
            objective,
            alpha,
            grad_correlation: correlation(&preds, &targets),
        });
        members.push(EnsembleMember { coeff: alpha, tree });
    }

    Ok(NldssFit {
        model: ScoreModel::ensemble(dim, members)?,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(p: &str, i: usize) -> SampleRef {
        SampleRef::new(p, i)
    }

    #[test]
    fn zero_scores_objective_is_one() {
        let o = vec![ComparisonPair {
            hi: r("a", 0),
            lo: r("b", 0),
        }];
        let s = vec![SmoothnessPair {
            a: r("a", 0),
            b: r("a", 1),
            dt: 1.0,
        }];
        let scores: HashMap<_, _> = [(r("a", 0), 0.0), (r("b", 0), 0.0), (r("a", 1), 0.0)].into();
        assert_eq!(objective_scores(&scores, &o, &s, 3.0, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn margin_beyond_h_has_zero_loss() {
        let h = 0.5;
        let o = vec![
            ComparisonPair {
                hi: r("a", 0),
                lo: r("b", 0),
            },
            ComparisonPair {
                hi: r("c", 0),
                lo: r("b", 0),
            },
        ];
        let scores: HashMap<_, _> =
            [(r("a", 0), 1.0 + h), (r("b", 0), 0.0), (r("c", 0), 1.0 + h)].into();
        assert_eq!(objective_scores(&scores, &o, &[], 1.0, h).unwrap(), 0.0);
    }

    #[test]
    fn missing_score_entry() {
        let o = vec![ComparisonPair {
            hi: r("a", 0),
            lo: r("b", 0),
        }];
        let scores: HashMap<_, _> = [(r("a", 0), 0.0)].into();
        assert!(matches!(
            objective_scores(&scores, &o, &[], 1.0, 0.5),
            Err(Error::MissingSample(_))
        ));
    }

    #[test]
    fn symmetric_pair_gradient() {
        let o = vec![ComparisonPair {
            hi: r("a", 0),
            lo: r("b", 0),
        }];
        let scores: HashMap<_, _> = [(r("a", 0), 0.3), (r("b", 0), 0.3)].into();
        let g = score_gradient(&scores, &o, &[], 1.0, 0.5).unwrap();
        let (ga, gb) = (g.get(&r("a", 0)).unwrap(), g.get(&r("b", 0)).unwrap());
        assert!(ga < 0.0);
        assert_eq!(ga, -gb);
    }

    #[test]
    fn constant_targets_single_leaf() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let t = fit_tree(&x, &[2.5; 6], 3).unwrap();
        assert_eq!(t.root, TreeNode::leaf(2.5));
    }

    #[test]
    fn perfect_axis_split() {
        let x: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| vec![v]).collect();
        let t = fit_tree(&x, &[0.0, 0.0, 5.0, 5.0], 1).unwrap();
        assert_eq!(
            t.root,
            TreeNode::split(0, 2.5, TreeNode::leaf(0.0), TreeNode::leaf(5.0))
        );
    }

    #[test]
    fn fit_tree_errors() {
        assert!(fit_tree(&[], &[], 2).is_err());
        assert!(fit_tree(&[vec![1.0]], &[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn depth_zero_is_mean() {
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let t = fit_tree(&x, &[1.0, 2.0, 3.0, 6.0], 0).unwrap();
        assert_eq!(t.root, TreeNode::leaf(3.0));
    }

    #[test]
    fn golden_section_finds_quadratic_minimum() {
        let (a, v) = golden_section(|x| (x - 3.3) * (x - 3.3), 3.3 * 3.3, 10.0, 40);
        assert!((a - 3.3).abs() < 1e-6);
        assert!(v < 1e-12);
        // Minimum at the left end: α = 0 stays best.
        let (a, _) = golden_section(|x| x, 0.0, 10.0, 40);
        assert_eq!(a, 0.0);
    }

    #[test]
    fn zero_trees_scores_zero() {
        let cohort = {
            use crate::data::{Outcome, TimedSample, Trajectory};
            let samples = (0..3)
                .map(|i| TimedSample {
                    patient_id: "a".into(),
                    index: i,
                    time: i as f64,
                    features: vec![i as f64],
                })
                .collect();
            Cohort::new(vec![Trajectory::new(
                "a".into(),
                samples,
                Outcome::Censored,
                2.0,
            )
            .unwrap()])
            .unwrap()
        };
        let o = vec![ComparisonPair {
            hi: r("a", 2),
            lo: r("a", 0),
        }];
        let p = ScoreProblem::new(&cohort, &o, &[], 1.0, 0.5).unwrap();
        let fit = train_nldss(
            &p,
            &NldssParams {
                num_trees: 0,
                ..NldssParams::default()
            },
        )
        .unwrap();
        assert_eq!(fit.model.score(&[7.0]).unwrap(), 0.0);
        assert_eq!(fit.trace.len(), 1);

        let fit = train_nldss(&p, &NldssParams::default()).unwrap();
        let s = |x: f64| fit.model.score(&[x]).unwrap();
        assert!(s(2.0) > s(0.0));
    }
}
