mod common;

use std::collections::HashMap;

use common::*;
use rand::Rng;
use smoothrank_core::baseline::{
    train_logistic_en, ElasticNetParams, LabeledRow, LabeledWindowSet, LogisticObjective,
};
use smoothrank_core::data::SampleRef;
use smoothrank_core::ldss::{train_ldss, LdssProblem};
use smoothrank_core::nldss::{
    objective_scores, score_gradient, train_nldss, NldssParams, ScoreProblem,
};
use smoothrank_core::simflu::{simulate_cohort, Regime, SimConfig};
use smoothrank_core::supervision::sample_dominance_pairs;

#[test]
fn ldss_objective_matches_direct_formula() {
    for seed in 0..40 {
        let inst = LinearInstance::random(seed);
        let p = inst.problem();
        let w = normal_vec(&mut rng(seed + 1000), inst.dim);
        let got = p.objective(&w).unwrap();
        let want = inst.objective(&w);
        assert!(
            (got - want).abs() <= 1e-10 * want.abs().max(1.0),
            "seed {seed}: {got} vs {want}"
        );
    }
}

#[test]
fn ldss_gradient_matches_finite_differences() {
    for seed in 0..25 {
        let inst = LinearInstance::random(seed);
        let p = inst.problem();
        let w = normal_vec(&mut rng(seed + 7), inst.dim);
        let fd = fd_gradient(|x| inst.objective(x), &w, 1e-6);
        let g = p.gradient(&w).unwrap();
        assert!(
            rel_err(&g, &fd, 1e-8) < 1e-6,
            "seed {seed}: {g:?} vs {fd:?}"
        );
    }
}

#[test]
fn ldss_hessian_matches_finite_differences() {
    for seed in 0..25 {
        let inst = LinearInstance::random(seed);
        let p = inst.problem();
        let w = normal_vec(&mut rng(seed + 11), inst.dim);
        let hess = p.hessian(&w).unwrap();
        for k in 0..inst.dim {
            let col: Vec<f64> = (0..inst.dim).map(|i| hess[(i, k)]).collect();
            let eps = 1e-6;
            let mut a = w.clone();
            let mut b = w.clone();
            a[k] += eps;
            b[k] -= eps;
            let ga = p.gradient(&a).unwrap();
            let gb = p.gradient(&b).unwrap();
            let fd: Vec<f64> = ga
                .iter()
                .zip(&gb)
                .map(|(x, y)| (x - y) / (2.0 * eps))
                .collect();
            assert!(rel_err(&col, &fd, 1e-8) < 1e-6, "seed {seed} col {k}");
        }
    }
}

#[test]
fn single_pair_closed_form() {
    // One pair, one dimension, no smoothing: inside the quadratic zone the
    // stationarity condition gives w = λc(1+h) / (2h + λc²).
    for &(lambda, c, h) in &[(1.0, 1.0, 0.5), (4.0, 0.5, 0.3), (0.5, 2.0, 0.8)] {
        let p = LdssProblem::from_deltas(1, vec![vec![c]], vec![], lambda, 0.0, h).unwrap();
        let w = train_ldss(&p, 1e-12, 100).unwrap().weights[0];
        let want: f64 = lambda * c * (1.0 + h) / (2.0 * h + lambda * c * c);
        assert!(
            (1.0 - want * c).abs() <= h,
            "case leaves the quadratic zone"
        );
        assert!((w - want).abs() < 1e-10, "{w} vs {want}");
    }
}

#[test]
fn huber_objective_within_hinge_bound() {
    for seed in 0..30 {
        let inst = LinearInstance::random(seed);
        for k in 0..5 {
            let w: Vec<f64> = normal_vec(&mut rng(seed * 31 + k), inst.dim)
                .iter()
                .map(|v| v * 2.0)
                .collect();
            let gap = inst.objective(&w) - inst.objective_with(&w, hinge);
            assert!(
                gap >= -1e-12 && gap <= inst.lambda_o * inst.h / 4.0 + 1e-12,
                "gap {gap}"
            );
        }
    }
}

#[test]
fn newton_converges_monotonically() {
    for seed in 0..50 {
        let p = LinearInstance::random(seed).problem();
        let fit = train_ldss(&p, 1e-8, 100).unwrap();
        assert!(fit.converged, "seed {seed}");
        assert!(fit.trace.last().unwrap().grad_norm < 1e-8);
        for w in fit.trace.windows(2) {
            assert!(
                w[1].objective < w[0].objective,
                "seed {seed}: {:?}",
                fit.trace
            );
        }
    }
}

#[test]
fn ldss_scale_invariance_of_ordering() {
    // x -> c x with λ -> λ / c² maps the optimum to w / c exactly, so held-out
    // ordering is unchanged.
    let inst = LinearInstance::random(3);
    let held: Vec<Vec<f64>> = (0..2000)
        .map(|k| normal_vec(&mut rng(50_000 + k), inst.dim))
        .collect();
    let base = train_ldss(&inst.problem(), 1e-10, 100).unwrap().weights;
    let soa = |w: &[f64], c: f64| {
        held.iter()
            .filter(|d| d.iter().zip(w).map(|(x, y)| c * x * y).sum::<f64>() > 0.0)
            .count() as f64
            / held.len() as f64
    };
    for &c in &[0.1, 3.0, 20.0] {
        let scaled = LdssProblem::from_deltas(
            inst.dim,
            inst.ordering
                .iter()
                .map(|d| d.iter().map(|x| c * x).collect())
                .collect(),
            inst.smoothing
                .iter()
                .map(|(d, dt)| (d.iter().map(|x| c * x).collect(), *dt))
                .collect(),
            inst.lambda_o / (c * c),
            inst.lambda_s / (c * c),
            inst.h,
        )
        .unwrap();
        let w = train_ldss(&scaled, 1e-12, 100).unwrap().weights;
        assert!((soa(&w, c) - soa(&base, 1.0)).abs() <= 0.005);
        for (a, b) in w.iter().zip(&base) {
            assert!((a * c - b).abs() < 1e-6 * b.abs().max(1.0));
        }
    }
}

fn random_scores(inst: &ScoreInstance, seed: u64) -> HashMap<SampleRef, f64> {
    let mut r = rng(seed);
    inst.ordering
        .iter()
        .flat_map(|p| [p.hi.clone(), p.lo.clone()])
        .chain(
            inst.smoothing
                .iter()
                .flat_map(|p| [p.a.clone(), p.b.clone()]),
        )
        .map(|s| (s, r.random_range(-2.0..2.0)))
        .collect()
}

fn score_objective_oracle(inst: &ScoreInstance, s: &HashMap<SampleRef, f64>) -> f64 {
    let ord = inst
        .ordering
        .iter()
        .map(|p| huber_oracle(1.0 - (s[&p.hi] - s[&p.lo]), inst.h))
        .sum::<f64>()
        / inst.ordering.len() as f64;
    let sm = inst
        .smoothing
        .iter()
        .map(|p| ((s[&p.b] - s[&p.a]) / p.dt).powi(2))
        .sum::<f64>()
        / inst.smoothing.len() as f64;
    ord + inst.lambda_s * sm
}

#[test]
fn score_objective_matches_direct_formula() {
    for seed in 0..30 {
        let inst = ScoreInstance::random(seed);
        let s = random_scores(&inst, seed + 99);
        let got =
            objective_scores(&s, &inst.ordering, &inst.smoothing, inst.lambda_s, inst.h).unwrap();
        let want = score_objective_oracle(&inst, &s);
        assert!((got - want).abs() < 1e-12 * want.max(1.0));
    }
}

#[test]
fn score_gradient_matches_finite_differences() {
    for seed in 0..25 {
        let inst = ScoreInstance::random(seed);
        let s = random_scores(&inst, seed + 5);
        let g = score_gradient(&s, &inst.ordering, &inst.smoothing, inst.lambda_s, inst.h).unwrap();
        let keys = g.samples.clone();
        let x0: Vec<f64> = keys.iter().map(|k| s[k]).collect();
        let f = |x: &[f64]| {
            let m: HashMap<SampleRef, f64> = keys.iter().cloned().zip(x.iter().copied()).collect();
            score_objective_oracle(&inst, &m)
        };
        let fd = fd_gradient(f, &x0, 1e-6);
        assert!(rel_err(&g.values, &fd, 1e-8) < 1e-5, "seed {seed}");
    }
}

#[test]
fn boosting_trace_nonincreasing() {
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let regime = Regime::new(r.random_range(0.0..0.5), r.random_range(0.0..0.5)).unwrap();
        let cohort = simulate_cohort(40, &regime, seed, &SimConfig::default()).unwrap();
        let o = sample_dominance_pairs(&cohort, 120, seed, 2).unwrap();
        let s = cohort.smoothness_pairs();
        let params = NldssParams {
            lambda_s: 10f64.powf(r.random_range(-1.0..2.0)),
            num_trees: 6,
            tree_depth: r.random_range(1..=4),
            ..NldssParams::default()
        };
        let p = ScoreProblem::new(&cohort, &o, &s, params.lambda_s, params.huber_h).unwrap();
        let fit = train_nldss(&p, &params).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective, "seed {seed}");
        }
    }
}

fn logistic_rows(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut r = rng(seed);
    let truth = normal_vec(&mut r, d);
    let x: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(&mut r, d)).collect();
    let y = x
        .iter()
        .map(|xi| {
            let z: f64 = xi.iter().zip(&truth).map(|(a, b)| a * b).sum();
            r.random::<f64>() < 1.0 / (1.0 + (-z).exp())
        })
        .collect();
    (x, y)
}

fn logistic_smooth_oracle(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, l2: f64) -> f64 {
    let n = x.len() as f64;
    x.iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let z = b + xi.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            -(if yi { p.ln() } else { (1.0 - p).ln() })
        })
        .sum::<f64>()
        / n
        + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    for seed in 0..25 {
        let d = 1 + (seed as usize % 4);
        let (x, y) = logistic_rows(seed, 60, d);
        let l2 = 0.1 * (seed % 3) as f64;
        let obj = LogisticObjective::new(x.clone(), y.clone(), 0.0, l2);
        let mut params = normal_vec(&mut rng(seed + 3), d + 1);
        params[d] *= 0.5;
        let (gw, gb) = obj.smooth_grad(&params[..d], params[d]);
        let f = |v: &[f64]| logistic_smooth_oracle(&x, &y, &v[..d], v[d], l2);
        let fd = fd_gradient(f, &params, 1e-6);
        let mut g = gw.clone();
        g.push(gb);
        assert!(rel_err(&g, &fd, 1e-8) < 1e-6, "seed {seed}");
        let direct = f(&params);
        assert!((obj.smooth(&params[..d], params[d]) - direct).abs() < 1e-12 * direct.max(1.0));
    }
}

fn window_set(x: Vec<Vec<f64>>, y: Vec<bool>) -> LabeledWindowSet {
    LabeledWindowSet {
        rows: x
            .into_iter()
            .zip(y)
            .enumerate()
            .map(|(i, (features, label))| LabeledRow {
                features,
                label,
                patient_id: format!("r{i}").into(),
                time: 0.0,
            })
            .collect(),
        horizon: 10.0,
    }
}

#[test]
fn intercept_only_fit_is_log_odds() {
    let y: Vec<bool> = (0..40).map(|i| i % 4 == 0 || i % 7 == 0).collect();
    let p_hat = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
    let data = window_set(vec![vec![0.0, 0.0]; 40], y);
    let params = ElasticNetParams {
        l1_weight: 0.0,
        l2_weight: 0.0,
        max_iter: 100_000,
        tol: 1e-16,
    };
    let fit = train_logistic_en(&data, &params).unwrap();
    assert!((fit.model.intercept - (p_hat / (1.0 - p_hat)).ln()).abs() < 1e-6);
}

#[test]
fn logistic_trace_nonincreasing() {
    for seed in 0..30 {
        let (x, y) = logistic_rows(seed, 80, 3);
        let params = ElasticNetParams {
            l1_weight: 0.01 * (seed % 4) as f64,
            l2_weight: 0.01 * (seed % 3) as f64,
            max_iter: 500,
            tol: 1e-12,
        };
        let fit = train_logistic_en(&window_set(x, y), &params).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "seed {seed}");
        }
    }
}
