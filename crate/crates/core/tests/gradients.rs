use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spr_core::denoiser::FilterBank;
use spr_core::operators::{pseudo_inverse, CoilMaps, EncodingOperator, ForwardModel, MeasuredData};
use spr_core::solver::{network_forward, NetworkConfig};
use spr_core::train::{
    finite_diff_check, network_backward, network_backward_with_stats, train, FdProblem, Gradients, Sample,
    TrainConfig,
};
use spr_core::{ComplexVolume, Shape};

struct Problem {
    op: ForwardModel,
    y: MeasuredData,
    x0: ComplexVolume,
    target: ComplexVolume,
}

fn coils(nx: usize, ny: usize, n: usize) -> CoilMaps {
    let maps = (0..n)
        .map(|j| {
            (0..nx * ny)
                .map(|p| {
                    let (x, y) = ((p / ny) as f64, (p % ny) as f64);
                    Complex64::from_polar(0.6 + 0.05 * (x + 2.0 * j as f64), 0.15 * y - 0.4 * j as f64)
                })
                .collect()
        })
        .collect();
    CoilMaps::new(nx, ny, maps).unwrap()
}

fn problem(shape: Shape, seed: u64) -> Problem {
    let op = ForwardModel::golden_angle(shape, coils(shape.nx, shape.ny, 2), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cx, cy) = (shape.nx as f64 / 2.0, shape.ny as f64 / 2.0);
    let target = ComplexVolume::from_fn(shape, |x, y, t| {
        let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
        let v = if r < 2.5 + 0.5 * t as f64 { 1.0 } else { 0.2 };
        Complex64::new(v + 0.05 * rng.random_range(-1.0..1.0), 0.1 * rng.random_range(-1.0..1.0))
    });
    let mut y = op.forward(&target).unwrap();
    for v in y.as_mut_slice() {
        *v += Complex64::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
    }
    let x0 = pseudo_inverse(&op, &y).unwrap();
    Problem { op, y, x0, target }
}

fn small_cfg() -> NetworkConfig {
    NetworkConfig {
        depth: 2,
        n_cg: 3,
        ..NetworkConfig::default()
    }
}

fn bank(seed: u64) -> FilterBank {
    let mut fb = FilterBank::random(2, 3, seed).unwrap();
    // make the threshold bite on part of the responses
    fb.alpha_raw = spr_core::denoiser::inverse_softplus(0.02);
    fb.lambda_raw = spr_core::denoiser::inverse_softplus(0.7);
    fb
}

#[test]
fn reverse_mode_matches_central_differences() {
    let shape = Shape::new(8, 8, 2);
    let cfg = small_cfg();
    for seed in 0..5 {
        let p = problem(shape, 100 + seed);
        let fb = bank(seed);
        let fd = FdProblem {
            op: &p.op,
            y: &p.y,
            x0: &p.x0,
            target: &p.target,
            fb: &fb,
            cfg: &cfg,
        };
        let report = finite_diff_check(&fd, 1e-5).unwrap();
        println!(
            "seed {seed}: filters {:.2e} alpha {:.2e} lambda {:.2e}",
            report.filters, report.alpha_raw, report.lambda_raw
        );
        assert!(report.max() <= 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn exact_threshold_gradients_match_away_from_kinks() {
    let shape = Shape::new(8, 8, 2);
    let cfg = NetworkConfig {
        exact_threshold: true,
        ..small_cfg()
    };
    let p = problem(shape, 7);
    let fb = bank(3);
    let fd = FdProblem {
        op: &p.op,
        y: &p.y,
        x0: &p.x0,
        target: &p.target,
        fb: &fb,
        cfg: &cfg,
    };
    let report = finite_diff_check(&fd, 1e-6).unwrap();
    assert!(report.max() <= 1e-4, "{report:?}");
}

#[test]
fn central_difference_error_shrinks_with_step() {
    let shape = Shape::new(8, 8, 2);
    let cfg = small_cfg();
    let p = problem(shape, 11);
    let fb = bank(11);
    let fd = FdProblem {
        op: &p.op,
        y: &p.y,
        x0: &p.x0,
        target: &p.target,
        fb: &fb,
        cfg: &cfg,
    };
    let coarse = finite_diff_check(&fd, 1e-2).unwrap().max();
    let fine = finite_diff_check(&fd, 5e-3).unwrap().max();
    // O(h^2) truncation: halving h cuts the error by about four
    assert!(fine < coarse * 0.4, "coarse {coarse:e} fine {fine:e}");
}

#[test]
fn zero_upstream_gradient_gives_zero() {
    let shape = Shape::new(8, 8, 2);
    let cfg = small_cfg();
    let p = problem(shape, 1);
    let fb = bank(1);
    let (_, tape) = network_forward(&p.x0, &p.y, &p.op, &fb, &cfg, true).unwrap();
    let g = network_backward(&tape.unwrap(), &ComplexVolume::zeros(shape), &p.op, &fb, &cfg).unwrap();
    assert!(g.to_vec().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_depth_has_no_parameter_gradient() {
    let shape = Shape::new(8, 8, 2);
    let cfg = NetworkConfig {
        depth: 0,
        ..small_cfg()
    };
    let p = problem(shape, 2);
    let fb = bank(2);
    let (x, tape) = network_forward(&p.x0, &p.y, &p.op, &fb, &cfg, true).unwrap();
    assert_eq!(x, p.x0);
    let g = network_backward(&tape.unwrap(), &x.sub(&p.target).unwrap(), &p.op, &fb, &cfg).unwrap();
    assert_eq!(g, Gradients::zeros(&fb));
}

#[test]
fn alpha_gradient_vanishes_in_dead_zone() {
    let shape = Shape::new(8, 8, 2);
    let cfg = NetworkConfig {
        exact_threshold: true,
        ..small_cfg()
    };
    let p = problem(shape, 3);
    let mut fb = bank(3);
    // threshold far above every response: all codes are zero
    fb.alpha_raw = spr_core::denoiser::inverse_softplus(1e3);
    let (x, tape) = network_forward(&p.x0, &p.y, &p.op, &fb, &cfg, true).unwrap();
    let g = network_backward(&tape.unwrap(), &x.sub(&p.target).unwrap(), &p.op, &fb, &cfg).unwrap();
    assert_eq!(g.d_alpha_raw, 0.0);
    assert!(g.d_filters.iter().all(|&v| v == 0.0));
    assert!(g.d_lambda_raw != 0.0);
}

#[test]
fn backward_cost_is_linear_in_depth() {
    let shape = Shape::new(8, 8, 2);
    let p = problem(shape, 4);
    let fb = bank(4);
    let mut counts = Vec::new();
    for depth in [1, 2, 4] {
        let cfg = NetworkConfig { depth, ..small_cfg() };
        let (x, tape) = network_forward(&p.x0, &p.y, &p.op, &fb, &cfg, true).unwrap();
        let (_, stats) =
            network_backward_with_stats(&tape.unwrap(), &x.sub(&p.target).unwrap(), &p.op, &fb, &cfg).unwrap();
        counts.push((stats.normal_ops, stats.convolutions));
    }
    assert_eq!(counts[1].0, 2 * counts[0].0);
    assert_eq!(counts[2].0, 4 * counts[0].0);
    assert_eq!(counts[2].1, 4 * counts[0].1);
}

fn samples(shape: Shape, seeds: std::ops::Range<u64>) -> Vec<Sample> {
    seeds
        .map(|s| {
            let p = problem(shape, s);
            Sample {
                id: format!("rec_{s:04}"),
                op: Arc::new(p.op),
                y: p.y,
                x0: p.x0,
                target: p.target,
            }
        })
        .collect()
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let shape = Shape::new(8, 8, 2);
    let set = samples(shape, 20..23);
    let cfg = small_cfg();
    let tc = TrainConfig {
        learning_rate: 1e-2,
        epochs: 6,
        seed: 5,
        ..TrainConfig::default()
    };
    let fb0 = bank(9);
    let a = train(&set, &set, &fb0, &cfg, &tc, false, |_| {}).unwrap();
    assert!(a.aborted.is_none());
    assert_eq!(a.history.len(), 7);
    assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
    assert!(a.history[a.best_epoch].val_loss <= a.history[0].val_loss);
    let b = train(&set, &set, &fb0, &cfg, &tc, false, |_| {}).unwrap();
    assert_eq!(a.best, b.best);
    assert_eq!(a.history, b.history);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let shape = Shape::new(8, 8, 2);
    let set = samples(shape, 30..32);
    let tc = TrainConfig {
        learning_rate: 0.0,
        epochs: 2,
        ..TrainConfig::default()
    };
    let fb0 = bank(2);
    let out = train(&set, &[], &fb0, &small_cfg(), &tc, false, |_| {}).unwrap();
    assert_eq!(out.last, fb0);
    let l0 = out.history[0].train_loss;
    assert!(out.history.iter().all(|r| (r.val_loss - l0).abs() <= 1e-12 * l0));
}

#[test]
fn frozen_filters_only_move_scalars() {
    let shape = Shape::new(8, 8, 2);
    let set = samples(shape, 40..42);
    let tc = TrainConfig {
        learning_rate: 1e-2,
        epochs: 2,
        ..TrainConfig::default()
    };
    let fb0 = bank(6);
    let out = train(&set, &[], &fb0, &small_cfg(), &tc, true, |_| {}).unwrap();
    assert_eq!(out.last.filters(), fb0.filters());
    assert_ne!(out.last.alpha_raw, fb0.alpha_raw);
    assert_ne!(out.last.lambda_raw, fb0.lambda_raw);
}
