//! Fast internal consistency checks run by `spr selftest`.

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{alternating_min_reconstruct, caol_pretrain, CaolConfig};
use crate::denoiser::{inverse_softplus, soft_threshold, smooth_soft_threshold, smooth_soft_threshold_grad, FilterBank};
use crate::error::Result;
use crate::operators::{
    centered_fft2, ndft_forward, pseudo_inverse, CartesianModel, CoilMaps, EncodingOperator, ForwardModel, MeasuredData,
};
use crate::sim::{make_cine_phantom, make_coil_maps, simulate_kspace, PhantomSpec};
use crate::solver::{cg_solve, data_consistency_step, NetworkConfig};
use crate::tensor::{ComplexVolume, Shape};
use crate::train::{finite_diff_check, FdProblem};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_volume(shape: Shape, rng: &mut ChaCha8Rng) -> ComplexVolume {
    ComplexVolume::from_fn(shape, |_, _, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_data(like: &MeasuredData, rng: &mut ChaCha8Rng) -> MeasuredData {
    let mut y = like.clone();
    for v in y.as_mut_slice() {
        *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    y
}

/// Worst relative adjoint mismatch over `trials` random pairs.
fn adjoint_error<A: EncodingOperator>(op: &A, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = random_volume(op.image_shape(), &mut rng);
        let ax = op.forward(&x)?;
        let y = random_data(&ax, &mut rng);
        let lhs = ax.inner(&y)?;
        let rhs = x.inner(&op.adjoint(&y)?)?;
        worst = worst.max((lhs - rhs).norm() / (x.norm() * y.norm()));
    }
    Ok(worst)
}

fn check_adjoints() -> Result<Check> {
    let shape = Shape::new(8, 8, 2);
    let coils = make_coil_maps(8, 8, 2, 1)?;
    let radial = ForwardModel::golden_angle(shape, coils.clone(), 3)?;
    let mut mask = vec![false; shape.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    mask.iter_mut().for_each(|m| *m = rng.random_bool(0.4));
    let cart = CartesianModel::new(shape, coils, &mask)?;
    let e = adjoint_error(&radial, 10, 3)?.max(adjoint_error(&cart, 10, 4)?);
    Ok(Check {
        name: "adjoint identity (radial, Cartesian)",
        passed: e <= 1e-10,
        detail: format!("max relative mismatch {e:.2e}"),
    })
}

fn check_ndft_grid() -> Result<Check> {
    let (nx, ny) = (8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_volume(Shape::new(nx, ny, 1), &mut rng);
    let cart = CartesianModel::fully_sampled(Shape::new(nx, ny, 1), CoilMaps::uniform(nx, ny))?;
    let coords = cart.sample_coords(0);
    let ndft = ndft_forward(x.frame(0), nx, ny, &coords)?;
    let fft = centered_fft2(x.frame(0), nx, ny, false)?;
    let num: f64 = ndft.iter().zip(&fft).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = fft.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let e = num / den;
    Ok(Check {
        name: "NDFT equals unitary FFT on grid",
        passed: e <= 1e-10,
        detail: format!("relative difference {e:.2e}"),
    })
}

fn check_cg_dense() -> Result<Check> {
    let shape = Shape::new(4, 4, 2);
    let n = shape.len();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b_mat = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let h = b_mat.adjoint() * &b_mat + DMatrix::identity(n, n) * Complex64::new(n as f64 * 0.5, 0.0);
    let rhs = random_volume(shape, &mut rng);
    let apply = |v: &ComplexVolume| {
        let out = &h * nalgebra::DVector::from_column_slice(v.as_slice());
        ComplexVolume::from_vec(shape, out.as_slice().to_vec())
    };
    let cg = cg_solve(apply, &rhs, 2 * n, 0.0, false)?;
    let direct = h
        .lu()
        .solve(&nalgebra::DVector::from_column_slice(rhs.as_slice()))
        .expect("positive definite");
    let direct = ComplexVolume::from_vec(shape, direct.as_slice().to_vec())?;
    let e = cg.x.sub(&direct)?.norm() / direct.norm();
    Ok(Check {
        name: "CG matches dense solve",
        passed: e <= 1e-8,
        detail: format!("relative error {e:.2e}"),
    })
}

fn check_identity_dc() -> Result<Check> {
    let shape = Shape::new(6, 6, 2);
    let op = CartesianModel::fully_sampled(shape, CoilMaps::uniform(6, 6))?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (img, z) = (random_volume(shape, &mut rng), random_volume(shape, &mut rng));
    let y = op.forward(&img)?;
    let lambda = 0.7;
    let cfg = NetworkConfig {
        n_cg: 1,
        ..NetworkConfig::default()
    };
    let x = data_consistency_step(&z, &y, &op, lambda, &cfg)?;
    let mut expect = img.clone();
    expect.axpy(lambda, &z);
    expect.scale(1.0 / (1.0 + lambda));
    let e = x.sub(&expect)?.norm() / expect.norm();
    Ok(Check {
        name: "data consistency with unitary A",
        passed: e <= 1e-12,
        detail: format!("relative error {e:.2e}"),
    })
}

fn check_smooth_threshold() -> Result<Check> {
    let (t, b) = (0.2, 1e-3);
    let mut dev: f64 = 0.0;
    for i in 0..=4000 {
        let z = -2.0 + i as f64 * 1e-3;
        dev = dev.max((smooth_soft_threshold(z, t, b)? - soft_threshold(z, t)?).abs());
    }
    let (z, h) = (0.3, 1e-6);
    let (dz, dt) = smooth_soft_threshold_grad(z, t, b);
    let fz = (smooth_soft_threshold(z + h, t, b)? - smooth_soft_threshold(z - h, t, b)?) / (2.0 * h);
    let ft = (smooth_soft_threshold(z, t + h, b)? - smooth_soft_threshold(z, t - h, b)?) / (2.0 * h);
    let e = ((dz - fz) / dz).abs().max(((dt - ft) / dt).abs());
    Ok(Check {
        name: "smooth soft threshold",
        passed: dev <= b.sqrt() && e <= 1e-6,
        detail: format!("max deviation {dev:.2e}, derivative error {e:.2e}"),
    })
}

fn check_gradients() -> Result<Check> {
    let shape = Shape::new(8, 8, 2);
    let op = ForwardModel::golden_angle(shape, make_coil_maps(8, 8, 2, 8)?, 3)?;
    let target = make_cine_phantom(&PhantomSpec::new(shape, 8))?;
    let y = simulate_kspace(&target, &op, 0.02, 9)?;
    let x0 = pseudo_inverse(&op, &y)?;
    let mut fb = FilterBank::random(2, 3, 10)?;
    fb.alpha_raw = inverse_softplus(0.02);
    let cfg = NetworkConfig {
        depth: 2,
        n_cg: 3,
        ..NetworkConfig::default()
    };
    let report = finite_diff_check(
        &FdProblem {
            op: &op,
            y: &y,
            x0: &x0,
            target: &target,
            fb: &fb,
            cfg: &cfg,
        },
        1e-5,
    )?;
    let e = report.max();
    Ok(Check {
        name: "network gradient vs finite differences",
        passed: e <= 1e-4,
        detail: format!("max relative error {e:.2e}"),
    })
}

fn monotone(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0))
}

fn check_altmin() -> Result<Check> {
    let shape = Shape::new(8, 8, 2);
    let op = ForwardModel::golden_angle(shape, make_coil_maps(8, 8, 2, 11)?, 3)?;
    let x = make_cine_phantom(&PhantomSpec::new(shape, 11))?;
    let y = simulate_kspace(&x, &op, 0.02, 12)?;
    let mut fb = FilterBank::random(4, 3, 13)?;
    fb.alpha_raw = inverse_softplus(0.01);
    let out = alternating_min_reconstruct(&y, &op, &fb, 10, 30)?;
    Ok(Check {
        name: "alternating minimization descent",
        passed: monotone(&out.objective),
        detail: format!(
            "objective {:.6e} -> {:.6e}",
            out.objective[0],
            out.objective.last().copied().unwrap_or(f64::NAN)
        ),
    })
}

fn check_caol() -> Result<Check> {
    let shape = Shape::new(8, 8, 3);
    let volumes = (0..2)
        .map(|s| make_cine_phantom(&PhantomSpec::new(shape, 20 + s)))
        .collect::<Result<Vec<_>>>()?;
    let cfg = CaolConfig {
        outer_iters: 5,
        ..CaolConfig::default()
    };
    let out = caol_pretrain(&volumes, &cfg, 14)?;
    let p = out.filters.kernel_len();
    let f = DMatrix::from_row_slice(out.filters.n_filters(), p, out.filters.filters());
    let defect = (f.transpose() * &f - DMatrix::<f64>::identity(p, p) / p as f64).norm();
    Ok(Check {
        name: "tight-frame pretraining",
        passed: monotone(&out.objective) && defect <= 1e-8,
        detail: format!("frame defect {defect:.2e}"),
    })
}

/// Runs every check, converting errors into failures.
pub fn run_all() -> Vec<(Check, f64)> {
    let checks: [fn() -> Result<Check>; 8] = [
        check_adjoints,
        check_ndft_grid,
        check_cg_dense,
        check_identity_dc,
        check_smooth_threshold,
        check_gradients,
        check_altmin,
        check_caol,
    ];
    checks
        .iter()
        .map(|c| {
            let start = Instant::now();
            let check = c().unwrap_or_else(|e| Check {
                name: "check raised an error",
                passed: false,
                detail: e.to_string(),
            });
            (check, start.elapsed().as_secs_f64())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for (c, _) in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
