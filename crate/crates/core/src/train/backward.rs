//! Reverse pass through a recorded network evaluation.
//!
//! The forward computation is differentiated exactly as executed: every CG
//! iteration, the shrinkage, both convolution directions and the Soft-Plus
//! maps of the raw scalars.

use crate::denoiser::{conv_accumulate, kernel_grad_accumulate, logistic, FilterBank};
use crate::error::{shape_mismatch, Error, Result};
use crate::operators::{normal_op, EncodingOperator};
use crate::solver::{CgStep, ForwardTape, NetworkConfig, UnrollStep};
use crate::tensor::{ComplexVolume, RealVolume};

/// `dL/dTheta` for the filters and raw regularization scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub d_filters: Vec<f64>,
    pub d_alpha_raw: f64,
    pub d_lambda_raw: f64,
}

impl Gradients {
    pub fn zeros(fb: &FilterBank) -> Self {
        Self {
            d_filters: vec![0.0; fb.filters().len()],
            d_alpha_raw: 0.0,
            d_lambda_raw: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_alpha_raw.is_finite() && self.d_lambda_raw.is_finite() && self.d_filters.iter().all(|v| v.is_finite())
    }

    /// Flattened as `[filters..., alpha_raw, lambda_raw]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.d_filters.clone();
        v.push(self.d_alpha_raw);
        v.push(self.d_lambda_raw);
        v
    }
}

/// Work counted during a reverse pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BackwardStats {
    pub normal_ops: usize,
    pub convolutions: usize,
}

/// Accumulated adjoints of the effective (post-Soft-Plus) parameters.
struct Adjoints {
    filters: Vec<f64>,
    threshold: f64,
    lambda: f64,
}

pub fn network_backward<A: EncodingOperator + ?Sized>(
    tape: &ForwardTape,
    grad_out: &ComplexVolume,
    op: &A,
    fb: &FilterBank,
    cfg: &NetworkConfig,
) -> Result<Gradients> {
    Ok(network_backward_with_stats(tape, grad_out, op, fb, cfg)?.0)
}

pub fn network_backward_with_stats<A: EncodingOperator + ?Sized>(
    tape: &ForwardTape,
    grad_out: &ComplexVolume,
    op: &A,
    fb: &FilterBank,
    cfg: &NetworkConfig,
) -> Result<(Gradients, BackwardStats)> {
    if &tape.params != fb || &tape.config != cfg {
        return Err(Error::InvalidArgument("tape was recorded with different parameters or config".into()));
    }
    if grad_out.shape() != tape.output.shape() || op.image_shape() != tape.output.shape() {
        return Err(shape_mismatch(tape.output.shape(), grad_out.shape()));
    }
    let lambda = fb.lambda();
    let mut adj = Adjoints {
        filters: vec![0.0; fb.filters().len()],
        threshold: 0.0,
        lambda: 0.0,
    };
    let mut stats = BackwardStats::default();
    let mut x_bar = grad_out.clone();
    for step in tape.steps.iter().rev() {
        let b_bar = cg_backward(&step.cg, &x_bar, op, lambda, &mut adj.lambda, &mut stats)?;
        // b = A# y + lambda z
        adj.lambda += b_bar.real_dot(&step.z);
        let z_bar = b_bar.scaled(lambda);
        x_bar = denoise_backward(step, &z_bar, tape, fb, &mut adj, &mut stats)?;
    }

    let (alpha, t) = (fb.alpha(), fb.threshold());
    // t = alpha / lambda
    let alpha_bar = adj.threshold / lambda;
    let lambda_bar = adj.lambda - adj.threshold * t / lambda;
    let grads = Gradients {
        d_filters: adj.filters,
        d_alpha_raw: alpha_bar * logistic(fb.alpha_raw),
        d_lambda_raw: lambda_bar * logistic(fb.lambda_raw),
    };
    debug_assert!(alpha > 0.0);
    if !grads.is_finite() {
        return Err(Error::NonFinite("parameter gradients".into()));
    }
    Ok((grads, stats))
}

/// Pulls the adjoint of the CG output back to the right-hand side `b`,
/// accumulating the contribution of `lambda` inside `H = A# A + lambda I`.
fn cg_backward<A: EncodingOperator + ?Sized>(
    steps: &[CgStep],
    x_bar: &ComplexVolume,
    op: &A,
    lambda: f64,
    lambda_bar: &mut f64,
    stats: &mut BackwardStats,
) -> Result<ComplexVolume> {
    let shape = x_bar.shape();
    let n = steps.len();
    // adjoints of r_{i+1}, p_{i+1}, rho_{i+1}
    let mut r_bar = ComplexVolume::zeros(shape);
    let mut p_bar = ComplexVolume::zeros(shape);
    let mut rho_bar = 0.0;
    for (i, s) in steps.iter().enumerate().rev() {
        let mut p_bar_i = ComplexVolume::zeros(shape);
        let mut rho_bar_i = 0.0;
        if i + 1 < n {
            let beta = s.beta.expect("non-final CG step records beta");
            // p_{i+1} = r_{i+1} + beta p_i
            r_bar.axpy(1.0, &p_bar);
            let beta_bar = p_bar.real_dot(&s.p);
            p_bar_i.axpy(beta, &p_bar);
            // beta = rho_{i+1} / rho_i
            rho_bar += beta_bar / s.rho;
            rho_bar_i -= beta_bar * s.rho_next / (s.rho * s.rho);
        }
        // rho_{i+1} = <r_{i+1}, r_{i+1}>
        r_bar.axpy(2.0 * rho_bar, &s.r_next);
        // r_{i+1} = r_i - a q_i
        let mut q_bar = r_bar.scaled(-s.alpha);
        let mut a_bar = -r_bar.real_dot(&s.q);
        // x_{i+1} = x_i + a p_i
        p_bar_i.axpy(s.alpha, x_bar);
        a_bar += x_bar.real_dot(&s.p);
        // a = rho_i / gamma_i
        rho_bar_i += a_bar / s.gamma;
        let gamma_bar = -a_bar * s.rho / (s.gamma * s.gamma);
        // gamma = <p_i, q_i>
        p_bar_i.axpy(gamma_bar, &s.q);
        q_bar.axpy(gamma_bar, &s.p);
        // q_i = H p_i, H self-adjoint
        p_bar_i.axpy(1.0, &normal_op(op, &q_bar, lambda)?);
        stats.normal_ops += 1;
        *lambda_bar += q_bar.real_dot(&s.p);

        p_bar = p_bar_i;
        rho_bar = rho_bar_i;
    }
    // r_0 = b, p_0 = b, rho_0 = <b, b>
    let mut b_bar = r_bar;
    b_bar.axpy(1.0, &p_bar);
    if let Some(first) = steps.first() {
        // r_0 == p_0 == b
        b_bar.axpy(2.0 * rho_bar, &first.p);
    }
    Ok(b_bar)
}

/// Reverse of `z = sum_k h_k^T * S_t(h_k * x)` on both channels. Returns the
/// adjoint of `x`.
fn denoise_backward(
    step: &UnrollStep,
    z_bar: &ComplexVolume,
    tape: &ForwardTape,
    fb: &FilterBank,
    adj: &mut Adjoints,
    stats: &mut BackwardStats,
) -> Result<ComplexVolume> {
    let shape = z_bar.shape();
    let kf = fb.kernel_side();
    let klen = fb.kernel_len();
    let t = fb.threshold();
    let shrink = tape.shrinkage;
    let zb = z_bar.as_two_channel();
    let xin = step.x_in.as_two_channel();
    let mut x_bar = RealVolume::zeros(2, shape);
    for c in 0..2 {
        let g = zb.channel(c);
        let u = xin.channel(c);
        for k in 0..fb.n_filters() {
            let h = fb.kernel(k);
            let coeff = &step.responses[c][k];
            let dh = &mut adj.filters[k * klen..(k + 1) * klen];
            let s: Vec<f64> = coeff.iter().map(|&v| shrink.apply(v, t)).collect();
            // z += h^T * s
            kernel_grad_accumulate(g, &s, shape, kf, dh);
            let mut s_bar = vec![0.0; s.len()];
            conv_accumulate(g, shape, h, kf, false, &mut s_bar);
            // s = S_t(coeff)
            let mut c_bar = s_bar;
            for (cb, &v) in c_bar.iter_mut().zip(coeff) {
                let (dz, dt) = shrink.grad(v, t);
                adj.threshold += *cb * dt;
                *cb *= dz;
            }
            // coeff = h * x
            kernel_grad_accumulate(u, &c_bar, shape, kf, dh);
            conv_accumulate(&c_bar, shape, h, kf, true, x_bar.channel_mut(c));
            stats.convolutions += 4;
        }
    }
    ComplexVolume::from_two_channel(&x_bar)
}
