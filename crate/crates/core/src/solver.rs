//! The unrolled reconstruction network: `T` alternations of the denoising
//! step and a conjugate-gradient data-consistency solve of
//! `(A# A + lambda I) x = A# y + lambda z`.

use serde::{Deserialize, Serialize};

use crate::denoiser::{denoise_with_responses, FilterBank, Responses, Shrinkage};
use crate::error::{Error, Result};
use crate::objective::{objective_analysis, objective_relaxed};
use crate::operators::{normal_op, pseudo_inverse, EncodingOperator, MeasuredData};
use crate::tensor::ComplexVolume;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Unroll depth `T`.
    pub depth: usize,
    /// CG iterations per data-consistency step.
    pub n_cg: usize,
    /// Relative residual for early CG exit; 0 runs exactly `n_cg` iterations.
    pub cg_tol: f64,
    /// Use exact soft thresholding instead of the smooth surrogate.
    pub exact_threshold: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            n_cg: 4,
            cg_tol: 0.0,
            exact_threshold: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cg == 0 {
            return Err(Error::InvalidArgument("n_cg must be at least 1".into()));
        }
        if !(self.cg_tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("cg_tol must be nonnegative, got {}", self.cg_tol)));
        }
        Ok(())
    }

    pub fn shrinkage(&self, fb: &FilterBank) -> Shrinkage {
        if self.exact_threshold {
            Shrinkage::Exact
        } else {
            fb.smooth()
        }
    }
}

/// One recorded CG iteration.
#[derive(Clone, Debug)]
pub struct CgStep {
    pub p: ComplexVolume,
    pub q: ComplexVolume,
    /// Residual after the update.
    pub r_next: ComplexVolume,
    pub rho: f64,
    pub rho_next: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Present when another iteration followed.
    pub beta: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct CgResult {
    pub x: ComplexVolume,
    pub iterations: usize,
    /// `||r_i||` for `i = 0..=iterations`.
    pub residual_norms: Vec<f64>,
    pub steps: Option<Vec<CgStep>>,
}

impl CgResult {
    pub fn final_residual(&self) -> f64 {
        *self.residual_norms.last().unwrap_or(&0.0)
    }
}

/// Conjugate gradient from `x = 0` for a Hermitian positive definite `H`.
///
/// Runs `n_iter` iterations or stops once `||r|| <= tol ||b||`. All scalars
/// are real since the iteration is carried out in the real inner product
/// `Re <u, v>`.
pub fn cg_solve<F>(apply_h: F, b: &ComplexVolume, n_iter: usize, tol: f64, record: bool) -> Result<CgResult>
where
    F: FnMut(&ComplexVolume) -> Result<ComplexVolume>,
{
    cg_core(apply_h, b, None, n_iter, tol, record)
}

/// Conjugate gradient started at `x0`. Each iteration decreases the
/// quadratic `1/2 <x, Hx> - <b, x>`, so the result never scores worse than
/// `x0`.
pub fn cg_solve_from<F>(apply_h: F, b: &ComplexVolume, x0: &ComplexVolume, n_iter: usize, tol: f64) -> Result<CgResult>
where
    F: FnMut(&ComplexVolume) -> Result<ComplexVolume>,
{
    cg_core(apply_h, b, Some(x0), n_iter, tol, false)
}

fn cg_core<F>(
    mut apply_h: F,
    b: &ComplexVolume,
    x0: Option<&ComplexVolume>,
    n_iter: usize,
    tol: f64,
    record: bool,
) -> Result<CgResult>
where
    F: FnMut(&ComplexVolume) -> Result<ComplexVolume>,
{
    let (mut x, mut r) = match x0 {
        Some(x0) => {
            x0.check_same_shape(b)?;
            let hx = apply_h(x0)?;
            (x0.clone(), b.sub(&hx)?)
        }
        None => (ComplexVolume::zeros(b.shape()), b.clone()),
    };
    let b_norm = b.norm();
    let mut p = r.clone();
    let mut rho = r.norm_sqr();
    let mut residual_norms = vec![rho.sqrt()];
    let mut steps = record.then(Vec::new);
    let done = |rho: f64| rho == 0.0 || rho.sqrt() <= tol * b_norm;
    let mut iterations = 0;
    if done(rho) {
        return Ok(CgResult {
            x,
            iterations,
            residual_norms,
            steps,
        });
    }
    for i in 0..n_iter {
        let q = apply_h(&p)?;
        let gamma = p.real_dot(&q);
        if !(gamma > 0.0) {
            return Err(Error::CgBreakdown {
                iteration: i,
                curvature: gamma,
            });
        }
        let alpha = rho / gamma;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &q);
        let rho_next = r.norm_sqr();
        residual_norms.push(rho_next.sqrt());
        iterations += 1;
        let stop = i + 1 == n_iter || done(rho_next);
        let beta = (!stop).then(|| rho_next / rho);
        if let Some(steps) = steps.as_mut() {
            steps.push(CgStep {
                p: p.clone(),
                q,
                r_next: r.clone(),
                rho,
                rho_next,
                gamma,
                alpha,
                beta,
            });
        }
        if stop {
            break;
        }
        let beta = beta.unwrap();
        // p <- r + beta p
        p.scale(beta);
        p.axpy(1.0, &r);
        rho = rho_next;
    }
    Ok(CgResult {
        x,
        iterations,
        residual_norms,
        steps,
    })
}

/// Approximately minimizes `1/2 ||Ax - y||_W^2 + lambda/2 ||x - z||^2` with
/// `cfg.n_cg` CG iterations from zero.
pub fn data_consistency_step<A: EncodingOperator + ?Sized>(
    z: &ComplexVolume,
    y: &MeasuredData,
    op: &A,
    lambda: f64,
    cfg: &NetworkConfig,
) -> Result<ComplexVolume> {
    let atb = pseudo_inverse(op, y)?;
    Ok(solve_data_consistency(&atb, z, op, lambda, cfg, false)?.x)
}

pub(crate) fn solve_data_consistency<A: EncodingOperator + ?Sized>(
    atb: &ComplexVolume,
    z: &ComplexVolume,
    op: &A,
    lambda: f64,
    cfg: &NetworkConfig,
    record: bool,
) -> Result<CgResult> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    z.check_same_shape(atb)?;
    let mut b = atb.clone();
    b.axpy(lambda, z);
    cg_solve(|v| normal_op(op, v, lambda), &b, cfg.n_cg, cfg.cg_tol, record)
}

/// Intermediates of one unrolled iteration.
#[derive(Clone, Debug)]
pub struct UnrollStep {
    pub x_in: ComplexVolume,
    pub responses: Responses,
    pub z: ComplexVolume,
    pub cg: Vec<CgStep>,
}

/// Everything the reverse pass needs from a forward evaluation.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    pub params: FilterBank,
    pub config: NetworkConfig,
    pub shrinkage: Shrinkage,
    pub steps: Vec<UnrollStep>,
    pub output: ComplexVolume,
    /// Normal-operator applications performed during the forward pass.
    pub normal_ops: usize,
}

impl ForwardTape {
    /// Rebuilds the network output from the recorded CG coefficients and
    /// directions of the final step, in the original operation order.
    pub fn replay_output(&self) -> ComplexVolume {
        match self.steps.last() {
            None => self.output.clone(),
            Some(step) => {
                let mut x = ComplexVolume::zeros(self.output.shape());
                for s in &step.cg {
                    x.axpy(s.alpha, &s.p);
                }
                x
            }
        }
    }
}

/// Objective values logged after each unrolled iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub analysis_value: f64,
    pub relaxed_value: f64,
    pub cg_final_residual: f64,
}

#[derive(Clone, Debug)]
pub struct NetworkOutput {
    pub x: ComplexVolume,
    pub tape: Option<ForwardTape>,
    pub log: Vec<StepLog>,
}

/// Runs the unrolled network from `x0` (conventionally `A# y`).
pub fn network_forward<A: EncodingOperator + ?Sized>(
    x0: &ComplexVolume,
    y: &MeasuredData,
    op: &A,
    fb: &FilterBank,
    cfg: &NetworkConfig,
    record: bool,
) -> Result<(ComplexVolume, Option<ForwardTape>)> {
    let out = run_network(x0, y, op, fb, cfg, record, false)?;
    Ok((out.x, out.tape))
}

/// Like [`network_forward`] but also evaluates the relaxed objectives after
/// every iteration.
pub fn network_forward_logged<A: EncodingOperator + ?Sized>(
    x0: &ComplexVolume,
    y: &MeasuredData,
    op: &A,
    fb: &FilterBank,
    cfg: &NetworkConfig,
) -> Result<NetworkOutput> {
    run_network(x0, y, op, fb, cfg, false, true)
}

fn run_network<A: EncodingOperator + ?Sized>(
    x0: &ComplexVolume,
    y: &MeasuredData,
    op: &A,
    fb: &FilterBank,
    cfg: &NetworkConfig,
    record: bool,
    log_objectives: bool,
) -> Result<NetworkOutput> {
    cfg.validate()?;
    op.check_image(x0)?;
    op.check_data(y)?;
    let shrink = cfg.shrinkage(fb);
    let lambda = fb.lambda();
    let atb = if cfg.depth > 0 { Some(pseudo_inverse(op, y)?) } else { None };
    let mut x = x0.clone();
    let mut steps = Vec::new();
    let mut log = Vec::new();
    let mut normal_ops = 0;
    for j in 0..cfg.depth {
        let (z, responses) = denoise_with_responses(&x, fb, shrink, record)?;
        let cg = solve_data_consistency(atb.as_ref().unwrap(), &z, op, lambda, cfg, record)?;
        normal_ops += cg.iterations;
        if !cg.x.is_finite() {
            return Err(Error::NonFinite(format!("network iterate {}", j + 1)));
        }
        if log_objectives {
            log.push(StepLog {
                step: j + 1,
                analysis_value: objective_analysis(op, &cg.x, y, fb)?,
                relaxed_value: objective_relaxed(op, &cg.x, y, fb)?,
                cg_final_residual: cg.final_residual(),
            });
        }
        let x_next = cg.x;
        if record {
            steps.push(UnrollStep {
                x_in: std::mem::replace(&mut x, x_next),
                responses: responses.unwrap(),
                z,
                cg: cg.steps.unwrap(),
            });
        } else {
            x = x_next;
        }
    }
    let tape = record.then(|| ForwardTape {
        params: fb.clone(),
        config: cfg.clone(),
        shrinkage: shrink,
        steps,
        output: x.clone(),
        normal_ops,
    });
    Ok(NetworkOutput { x, tape, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::test_util::*;
    use crate::operators::{CartesianModel, CoilMaps, ForwardModel};
    use crate::tensor::Shape;
    use nalgebra::{DMatrix, DVector};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};

    fn dense_apply(h: &DMatrix<Complex64>, v: &ComplexVolume) -> Result<ComplexVolume> {
        let out = h * DVector::from_column_slice(v.as_slice());
        ComplexVolume::from_vec(v.shape(), out.as_slice().to_vec())
    }

    fn random_hpd(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        g.adjoint() * &g + DMatrix::identity(n, n) * Complex64::new(0.5, 0.0)
    }

    #[test]
    fn cg_identity_converges_in_one_step() {
        let b = random_volume(Shape::new(3, 3, 1), 1);
        let res = cg_solve(|v| Ok(v.clone()), &b, 10, 0.0, false).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.x.sub(&b).unwrap().norm() < 1e-15);
    }

    #[test]
    fn cg_two_by_two_diagonal() {
        let s = Shape::new(2, 1, 1);
        let b = ComplexVolume::from_vec(s, vec![Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0)]).unwrap();
        let h = |v: &ComplexVolume| {
            let d = v.as_slice();
            ComplexVolume::from_vec(s, vec![d[0], d[1] * 2.0])
        };
        let res = cg_solve(h, &b, 2, 0.0, false).unwrap();
        assert!(res.iterations <= 2);
        for v in res.x.as_slice() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn cg_matches_dense_solve() {
        let s = Shape::new(8, 1, 1);
        let h = random_hpd(8, 2);
        let b = random_volume(s, 3);
        let res = cg_solve(|v| dense_apply(&h, v), &b, 8, 0.0, false).unwrap();
        let direct = h.clone().lu().solve(&DVector::from_column_slice(b.as_slice())).unwrap();
        let err: f64 = res.x.as_slice().iter().zip(direct.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err <= 1e-8 * direct.norm(), "relative error {}", err / direct.norm());
    }

    #[test]
    fn cg_residuals_monotone_and_breakdown_reported() {
        let s = Shape::new(12, 1, 1);
        let h = random_hpd(12, 4);
        let b = random_volume(s, 5);
        // the energy norm decreases monotonically; the 2-norm does on
        // well-conditioned problems like this diagonal-dominant one
        let hd = DMatrix::from_fn(12, 12, |i, j| {
            if i == j { Complex64::new(2.0 + i as f64 * 0.1, 0.0) } else { h[(i, j)] * 0.01 }
        });
        let hd = (&hd + hd.adjoint()) * Complex64::new(0.5, 0.0);
        let res = cg_solve(|v| dense_apply(&hd, v), &b, 12, 0.0, false).unwrap();
        for w in res.residual_norms.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }

        let neg = |v: &ComplexVolume| Ok(v.scaled(-1.0));
        assert!(matches!(cg_solve(neg, &b, 3, 0.0, false), Err(Error::CgBreakdown { iteration: 0, .. })));
    }

    #[test]
    fn cg_tolerance_exits_early() {
        let s = Shape::new(16, 1, 1);
        let h = random_hpd(16, 6);
        let b = random_volume(s, 7);
        let res = cg_solve(|v| dense_apply(&h, v), &b, 200, 1e-6, false).unwrap();
        assert!(res.iterations < 200);
        assert!(res.final_residual() <= 1e-6 * b.norm());
    }

    #[test]
    fn warm_start_never_increases_energy() {
        let s = Shape::new(10, 1, 1);
        let h = random_hpd(10, 8);
        let b = random_volume(s, 9);
        let x0 = random_volume(s, 10);
        let energy = |x: &ComplexVolume| 0.5 * x.real_dot(&dense_apply(&h, x).unwrap()) - b.real_dot(x);
        let mut prev = energy(&x0);
        for n in 1..6 {
            let res = cg_solve_from(|v| dense_apply(&h, v), &b, &x0, n, 0.0).unwrap();
            let e = energy(&res.x);
            assert!(e <= prev + 1e-12);
            prev = e;
        }
    }

    #[test]
    fn identity_model_data_consistency_is_closed_form() {
        let shape = Shape::new(8, 8, 2);
        let m = CartesianModel::fully_sampled(shape, CoilMaps::uniform(8, 8)).unwrap();
        let x = random_volume(shape, 11);
        let z = random_volume(shape, 12);
        let y = m.forward(&x).unwrap();
        let lambda = 0.7;
        let cfg = NetworkConfig { n_cg: 1, ..Default::default() };
        let out = data_consistency_step(&z, &y, &m, lambda, &cfg).unwrap();
        let mut expect = m.adjoint(&y).unwrap();
        expect.axpy(lambda, &z);
        expect.scale(1.0 / (1.0 + lambda));
        assert!(out.sub(&expect).unwrap().norm() <= 1e-12 * expect.norm());
    }

    #[test]
    fn large_lambda_returns_prior() {
        let shape = Shape::new(8, 8, 2);
        let m = ForwardModel::golden_angle(shape, test_coils(8, 8, 2), 3).unwrap();
        let y = m.forward(&random_volume(shape, 13)).unwrap();
        let z = random_volume(shape, 14);
        let out = data_consistency_step(&z, &y, &m, 1e6, &NetworkConfig::default()).unwrap();
        assert!(out.sub(&z).unwrap().norm() <= 1e-4 * z.norm());
    }

    #[test]
    fn converged_data_consistency_residual() {
        let shape = Shape::new(8, 8, 1);
        let m = ForwardModel::golden_angle(shape, test_coils(8, 8, 2), 3).unwrap();
        let y = m.forward(&random_volume(shape, 15)).unwrap();
        let z = random_volume(shape, 16);
        let lambda = 0.3;
        let cfg = NetworkConfig { n_cg: 2 * shape.len(), cg_tol: 1e-13, ..Default::default() };
        let x = data_consistency_step(&z, &y, &m, lambda, &cfg).unwrap();
        let mut b = pseudo_inverse(&m, &y).unwrap();
        b.axpy(lambda, &z);
        let hx = normal_op(&m, &x, lambda).unwrap();
        assert!(hx.sub(&b).unwrap().norm() <= 1e-8 * b.norm());
        assert!(data_consistency_step(&z, &y, &m, 0.0, &cfg).is_err());
    }

    #[test]
    fn zero_depth_returns_input_and_runs_are_deterministic() {
        let shape = Shape::new(8, 8, 3);
        let m = ForwardModel::golden_angle(shape, test_coils(8, 8, 2), 2).unwrap();
        let y = m.forward(&random_volume(shape, 17)).unwrap();
        let x0 = pseudo_inverse(&m, &y).unwrap();
        let fb = FilterBank::random(2, 3, 18).unwrap();
        let cfg0 = NetworkConfig { depth: 0, ..Default::default() };
        let (out, _) = network_forward(&x0, &y, &m, &fb, &cfg0, false).unwrap();
        assert_eq!(out, x0);

        let cfg = NetworkConfig { depth: 2, n_cg: 3, ..Default::default() };
        let (a, tape) = network_forward(&x0, &y, &m, &fb, &cfg, true).unwrap();
        let (b, _) = network_forward(&x0, &y, &m, &fb, &cfg, false).unwrap();
        assert_eq!(a, b);
        let tape = tape.unwrap();
        assert_eq!(tape.replay_output(), a);
        assert_eq!(tape.steps.len(), 2);
        assert_eq!(tape.normal_ops, 6);
    }

    #[test]
    fn objectives_are_logged_per_step() {
        let shape = Shape::new(8, 8, 3);
        let m = CartesianModel::fully_sampled(shape, CoilMaps::uniform(8, 8)).unwrap();
        let y = m.forward(&random_volume(shape, 19)).unwrap();
        let x0 = pseudo_inverse(&m, &y).unwrap();
        let fb = FilterBank::random(2, 3, 20).unwrap();
        let cfg = NetworkConfig { depth: 3, n_cg: 50, cg_tol: 1e-12, ..Default::default() };
        let out = network_forward_logged(&x0, &y, &m, &fb, &cfg).unwrap();
        assert_eq!(out.log.len(), 3);
        for l in &out.log {
            assert!(l.analysis_value.is_finite() && l.relaxed_value.is_finite());
            assert!(l.relaxed_value <= l.analysis_value + 1e-12);
        }
    }

    #[test]
    fn trained_network_runs_at_other_frame_counts() {
        let fb = FilterBank::random(2, 3, 21).unwrap();
        let cfg = NetworkConfig { depth: 1, ..Default::default() };
        for nt in [3, 5, 8] {
            let shape = Shape::new(8, 8, nt);
            let m = ForwardModel::golden_angle(shape, test_coils(8, 8, 1), 2).unwrap();
            let y = m.forward(&random_volume(shape, 22)).unwrap();
            let x0 = pseudo_inverse(&m, &y).unwrap();
            let (x, _) = network_forward(&x0, &y, &m, &fb, &cfg, false).unwrap();
            assert_eq!(x.shape(), shape);
        }
    }
}
