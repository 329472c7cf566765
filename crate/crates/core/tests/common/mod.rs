//! Independent oracles shared by the integration tests. Nothing here calls
//! the library's own loss or gradient code.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use smoothrank_core::data::{ComparisonPair, SampleRef, SmoothnessPair};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Huber loss written from its piecewise definition.
pub fn huber_oracle(a: f64, h: f64) -> f64 {
    if a < -h {
        0.0
    } else if a > h {
        a
    } else {
        (a + h) * (a + h) / (4.0 * h)
    }
}

pub fn hinge(a: f64) -> f64 {
    a.max(0.0)
}

/// A random linear problem as raw pair differences.
#[derive(Debug, Clone)]
pub struct LinearInstance {
    pub dim: usize,
    pub ordering: Vec<Vec<f64>>,
    pub smoothing: Vec<(Vec<f64>, f64)>,
    pub lambda_o: f64,
    pub lambda_s: f64,
    pub h: f64,
}

impl LinearInstance {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let dim = r.random_range(2..=5);
        let n_o = r.random_range(5..=40);
        let n_s = r.random_range(0..=30);
        let ordering = (0..n_o).map(|_| normal_vec(&mut r, dim)).collect();
        let smoothing = (0..n_s)
            .map(|_| (normal_vec(&mut r, dim), r.random_range(0.2..3.0)))
            .collect();
        Self {
            dim,
            ordering,
            smoothing,
            lambda_o: 10f64.powf(r.random_range(-1.0..2.5)),
            lambda_s: 10f64.powf(r.random_range(-2.0..2.0)),
            h: r.random_range(0.05..0.95),
        }
    }

    pub fn problem(&self) -> smoothrank_core::ldss::LdssProblem {
        smoothrank_core::ldss::LdssProblem::from_deltas(
            self.dim,
            self.ordering.clone(),
            self.smoothing.clone(),
            self.lambda_o,
            self.lambda_s,
            self.h,
        )
        .unwrap()
    }

    /// Objective from the textbook formula with a pluggable margin loss.
    pub fn objective_with(&self, w: &[f64], loss: impl Fn(f64) -> f64) -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let ridge = 0.5 * dot(w, w);
        let ord = if self.ordering.is_empty() {
            0.0
        } else {
            self.lambda_o / self.ordering.len() as f64
                * self
                    .ordering
                    .iter()
                    .map(|d| loss(1.0 - dot(w, d)))
                    .sum::<f64>()
        };
        let sm = if self.smoothing.is_empty() {
            0.0
        } else {
            self.lambda_s / self.smoothing.len() as f64
                * self
                    .smoothing
                    .iter()
                    .map(|(d, dt)| (dot(w, d) / dt).powi(2))
                    .sum::<f64>()
        };
        ridge + ord + sm
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        self.objective_with(w, |a| huber_oracle(a, self.h))
    }
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[k] += eps;
            m[k] -= eps;
            (f(&p) - f(&m)) / (2.0 * eps)
        })
        .collect()
}

/// `‖a - b‖ / max(‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let nb = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / nb.max(floor)
}

/// A random score-space instance over synthetic sample references.
#[derive(Debug, Clone)]
pub struct ScoreInstance {
    pub ordering: Vec<ComparisonPair>,
    pub smoothing: Vec<SmoothnessPair>,
    pub lambda_s: f64,
    pub h: f64,
}

impl ScoreInstance {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let patients = r.random_range(2..=6);
        let lens: Vec<usize> = (0..patients).map(|_| r.random_range(2..=6)).collect();
        let refs: Vec<SampleRef> = lens
            .iter()
            .enumerate()
            .flat_map(|(p, &n)| (0..n).map(move |i| SampleRef::new(format!("q{p}"), i)))
            .collect();
        let n_o = r.random_range(5..=30);
        let mut ordering = Vec::new();
        while ordering.len() < n_o {
            let a = r.random_range(0..refs.len());
            let b = r.random_range(0..refs.len());
            if a != b {
                ordering.push(ComparisonPair {
                    hi: refs[a].clone(),
                    lo: refs[b].clone(),
                });
            }
        }
        let mut smoothing = Vec::new();
        for (p, &n) in lens.iter().enumerate() {
            for i in 0..n - 1 {
                smoothing.push(SmoothnessPair {
                    a: SampleRef::new(format!("q{p}"), i),
                    b: SampleRef::new(format!("q{p}"), i + 1),
                    dt: r.random_range(0.5..2.0),
                });
            }
        }
        Self {
            ordering,
            smoothing,
            lambda_s: 10f64.powf(r.random_range(-1.0..1.5)),
            h: r.random_range(0.1..0.9),
        }
    }
}
