//! Linear severity scores: a max-margin pairwise objective with a temporal
//! smoothness penalty, solved in the primal by damped Newton-Raphson.
//!
//! The slack variables of the constrained max-margin program are eliminated
//! in closed form, giving a hinge on `1 - w'(x_hi - x_lo)`. The hinge is
//! replaced by the Huber loss so the objective
//!
//! ```text
//! ½‖w‖² + λ_O/|O| Σ_O L_h(1 - w'Δ_O) + λ_S/|S| Σ_S (w'Δ_S / dt)²
//! ```
//!
//! is convex and twice differentiable.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, ComparisonPair, SmoothnessPair};
use crate::error::{Error, Result};
use crate::numeric::{dot, norm2, sub, KahanSum};

/// Huber approximation of the hinge `max(0, a)` with half-width `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Huber {
    h: f64,
}

impl Huber {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "huber h={h} outside (0,1)"
            )));
        }
        Ok(Self { h })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn value(&self, a: f64) -> f64 {
        let h = self.h;
        if a < -h {
            0.0
        } else if a <= h {
            (a + h) * (a + h) / (4.0 * h)
        } else {
            a
        }
    }

    #[inline]
    pub fn d1(&self, a: f64) -> f64 {
        let h = self.h;
        if a < -h {
            0.0
        } else if a <= h {
            (a + h) / (2.0 * h)
        } else {
            1.0
        }
    }

    #[inline]
    pub fn d2(&self, a: f64) -> f64 {
        if a.abs() <= self.h {
            1.0 / (2.0 * self.h)
        } else {
            0.0
        }
    }
}

pub fn huber(a: f64, h: f64) -> Result<f64> {
    Ok(Huber::new(h)?.value(a))
}

pub fn huber_d1(a: f64, h: f64) -> Result<f64> {
    Ok(Huber::new(h)?.d1(a))
}

pub fn huber_d2(a: f64, h: f64) -> Result<f64> {
    Ok(Huber::new(h)?.d2(a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdssParams {
    pub lambda_o: f64,
    pub lambda_s: f64,
    pub huber_h: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LdssParams {
    fn default() -> Self {
        Self {
            lambda_o: 100.0,
            lambda_s: 1.0,
            huber_h: 0.5,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// The L-DSS objective with pair differences resolved against a dataset.
#[derive(Debug, Clone)]
pub struct LdssProblem {
    dim: usize,
    ordering: Vec<Vec<f64>>,
    smoothing: Vec<(Vec<f64>, f64)>,
    lambda_o: f64,
    lambda_s: f64,
    huber: Huber,
}

impl LdssProblem {
    /// Builds a problem from already differenced pairs: `x_hi - x_lo` for each
    /// comparison and `(x_b - x_a, dt)` for each smoothness pair.
    pub fn from_deltas(
        dim: usize,
        ordering: Vec<Vec<f64>>,
        smoothing: Vec<(Vec<f64>, f64)>,
        lambda_o: f64,
        lambda_s: f64,
        huber_h: f64,
    ) -> Result<Self> {
        let huber = Huber::new(huber_h)?;
        for (name, l) in [("lambda_o", lambda_o), ("lambda_s", lambda_s)] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name}={l} must be finite and >= 0"
                )));
            }
        }
        if lambda_o > 0.0 && ordering.is_empty() {
            return Err(Error::EmptyInput("ordering pairs (lambda_o > 0)"));
        }
        for d in ordering.iter().chain(smoothing.iter().map(|(d, _)| d)) {
            if d.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: d.len(),
                });
            }
        }
        if let Some((_, dt)) = smoothing.iter().find(|(_, dt)| !(*dt > 0.0)) {
            return Err(Error::InvalidData(format!("smoothness pair with dt={dt}")));
        }
        Ok(Self {
            dim,
            ordering,
            smoothing,
            lambda_o,
            lambda_s,
            huber,
        })
    }

    pub fn from_pairs(
        cohort: &Cohort,
        ordering: &[ComparisonPair],
        smoothing: &[SmoothnessPair],
        lambda_o: f64,
        lambda_s: f64,
        huber_h: f64,
    ) -> Result<Self> {
        let o = ordering
            .iter()
            .map(|p| Ok(sub(cohort.features(&p.hi)?, cohort.features(&p.lo)?)))
            .collect::<Result<Vec<_>>>()?;
        let s = smoothing
            .iter()
            .map(|p| Ok((sub(cohort.features(&p.b)?, cohort.features(&p.a)?), p.dt)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_deltas(cohort.dim(), o, s, lambda_o, lambda_s, huber_h)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda_o(&self) -> f64 {
        self.lambda_o
    }

    pub fn lambda_s(&self) -> f64 {
        self.lambda_s
    }

    pub fn huber(&self) -> Huber {
        self.huber
    }

    pub fn ordering_deltas(&self) -> &[Vec<f64>] {
        &self.ordering
    }

    pub fn smoothing_deltas(&self) -> &[(Vec<f64>, f64)] {
        &self.smoothing
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: w.len(),
            });
        }
        Ok(())
    }

    fn ordering_coef(&self) -> f64 {
        if self.ordering.is_empty() {
            0.0
        } else {
            self.lambda_o / self.ordering.len() as f64
        }
    }

    fn smoothing_coef(&self) -> f64 {
        if self.smoothing.is_empty() {
            0.0
        } else {
            self.lambda_s / self.smoothing.len() as f64
        }
    }

    /// Mean squared score rate over the smoothness pairs, without `λ_S`.
    pub fn smoothness_penalty(&self, w: &[f64]) -> Result<f64> {
        self.check(w)?;
        if self.smoothing.is_empty() {
            return Ok(0.0);
        }
        let s: KahanSum = self
            .smoothing
            .iter()
            .map(|(d, dt)| {
                let r = dot(w, d) / dt;
                r * r
            })
            .collect();
        Ok(s.value() / self.smoothing.len() as f64)
    }

    pub fn objective(&self, w: &[f64]) -> Result<f64> {
        self.check(w)?;
        let ridge = 0.5 * dot(w, w);
        let ord: KahanSum = self
            .ordering
            .iter()
            .map(|d| self.huber.value(1.0 - dot(w, d)))
            .collect();
        let smooth: KahanSum = self
            .smoothing
            .iter()
            .map(|(d, dt)| {
                let r = dot(w, d) / dt;
                r * r
            })
            .collect();
        Ok(ridge + self.ordering_coef() * ord.value() + self.smoothing_coef() * smooth.value())
    }

    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        let mut ord = vec![KahanSum::new(); self.dim];
        for d in &self.ordering {
            let c = self.huber.d1(1.0 - dot(w, d));
            if c != 0.0 {
                for (acc, x) in ord.iter_mut().zip(d) {
                    acc.add(c * x);
                }
            }
        }
        let mut smooth = vec![KahanSum::new(); self.dim];
        for (d, dt) in &self.smoothing {
            let c = dot(w, d) / (dt * dt);
            for (acc, x) in smooth.iter_mut().zip(d) {
                acc.add(c * x);
            }
        }
        let (co, cs) = (self.ordering_coef(), 2.0 * self.smoothing_coef());
        Ok((0..self.dim)
            .map(|k| w[k] - co * ord[k].value() + cs * smooth[k].value())
            .collect())
    }

    fn smoothing_hessian(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let cs = 2.0 * self.smoothing_coef();
        for (d, dt) in &self.smoothing {
            let c = cs / (dt * dt);
            for i in 0..self.dim {
                for j in 0..=i {
                    m[(i, j)] += c * d[i] * d[j];
                }
            }
        }
        symmetrize_lower(&mut m);
        m
    }

    fn hessian_with(&self, w: &[f64], smoothing: &DMatrix<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.dim, self.dim) + smoothing;
        let co = self.ordering_coef();
        let mut ord = DMatrix::zeros(self.dim, self.dim);
        for d in &self.ordering {
            let c = self.huber.d2(1.0 - dot(w, d));
            if c != 0.0 {
                for i in 0..self.dim {
                    for j in 0..=i {
                        ord[(i, j)] += c * d[i] * d[j];
                    }
                }
            }
        }
        symmetrize_lower(&mut ord);
        m += ord * co;
        m
    }

    pub fn hessian(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        self.check(w)?;
        Ok(self.hessian_with(w, &self.smoothing_hessian()))
    }
}

fn symmetrize_lower(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonIter {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdssFit {
    pub weights: Vec<f64>,
    /// Objective and gradient norm at every iterate, starting from `w = 0`.
    pub trace: Vec<NewtonIter>,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;

/// Damped Newton from `w = 0`: solve `H d = -g` by Cholesky, halve the step
/// until the Armijo condition holds, stop once `‖g‖ < tol`.
pub fn train_ldss(problem: &LdssProblem, tol: f64, max_iter: usize) -> Result<LdssFit> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol={tol} must be > 0")));
    }
    let smoothing = problem.smoothing_hessian();
    let mut w = vec![0.0; problem.dim()];
    let mut f = problem.objective(&w)?;
    let mut g = problem.gradient(&w)?;
    let mut trace = vec![NewtonIter {
        iter: 0,
        objective: f,
        grad_norm: norm2(&g),
    }];
    let mut converged = norm2(&g) < tol;
    let mut iter = 0;

    while !converged && iter < max_iter {
        iter += 1;
        let hess = problem.hessian_with(&w, &smoothing);
        let chol = hess
            .cholesky()
            .expect("Hessian is identity plus PSD terms, hence positive definite");
        let dir = chol.solve(&-DVector::from_column_slice(&g));
        let slope = dot(&g, dir.as_slice());

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = w.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect();
            let fc = problem.objective(&cand)?;
            if fc <= f + ARMIJO * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let (next, fnext) = match accepted {
            Some(x) => x,
            // The predicted decrease is below the rounding level of f: take
            // the full Newton step.
            None if -slope <= 64.0 * f64::EPSILON * f.abs().max(1.0) => {
                let cand: Vec<f64> = w.iter().zip(dir.iter()).map(|(a, b)| a + b).collect();
                let fc = problem.objective(&cand)?;
                (cand, fc)
            }
            None => {
                return Err(Error::LineSearch {
                    iter,
                    objective: f,
                    grad_norm: norm2(&g),
                })
            }
        };
        w = next;
        f = fnext;
        g = problem.gradient(&w)?;
        let gn = norm2(&g);
        trace.push(NewtonIter {
            iter,
            objective: f,
            grad_norm: gn,
        });
        converged = gn < tol;
    }

    Ok(LdssFit {
        weights: w,
        trace,
        converged,
    })
}
