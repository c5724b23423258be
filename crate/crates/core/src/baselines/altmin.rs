use crate::denoiser::{conv_accumulate, filter_gram, FilterBank};
use crate::error::Result;
use crate::objective::{objective_relaxed, optimal_codes};
use crate::operators::{pseudo_inverse, EncodingOperator, MeasuredData};
use crate::solver::cg_solve_from;
use crate::tensor::{ComplexVolume, RealVolume};

#[derive(Clone, Debug)]
pub struct AltMinOutcome {
    pub x: ComplexVolume,
    /// Relaxed objective at the start and after every outer iteration, with
    /// the auxiliary variables at their exact minimizers.
    pub objective: Vec<f64>,
}

/// `sum_k h_k^T * s_k` per channel.
fn synthesize(codes: &[Vec<Vec<f64>>], fb: &FilterBank, like: &ComplexVolume) -> Result<ComplexVolume> {
    let shape = like.shape();
    let mut out = RealVolume::zeros(2, shape);
    for (c, chan) in codes.iter().enumerate() {
        let dst = out.channel_mut(c);
        for (k, s) in chan.iter().enumerate() {
            conv_accumulate(s, shape, fb.kernel(k), fb.kernel_side(), true, dst);
        }
    }
    ComplexVolume::from_two_channel(&out)
}

/// Minimizes the relaxed objective by alternating exact soft-thresholding
/// of the codes with warm-started CG on
/// `(A# A + lambda sum_k h_k^T h_k) x = A# y + lambda sum_k h_k^T s_k`,
/// starting from `x = A# y`.
pub fn alternating_min_reconstruct<A: EncodingOperator + ?Sized>(
    y: &MeasuredData,
    op: &A,
    fb: &FilterBank,
    iters: usize,
    inner_cg: usize,
) -> Result<AltMinOutcome> {
    let lambda = fb.lambda();
    let atb = pseudo_inverse(op, y)?;
    let mut x = atb.clone();
    let mut objective = vec![objective_relaxed(op, &x, y, fb)?];
    let apply_h = |v: &ComplexVolume| -> Result<ComplexVolume> {
        let mut out = crate::operators::normal_op(op, v, 0.0)?;
        out.axpy(lambda, &filter_gram(v, fb)?);
        Ok(out)
    };
    for _ in 0..iters {
        let codes = optimal_codes(&x, fb);
        let mut b = atb.clone();
        b.axpy(lambda, &synthesize(&codes, fb, &x)?);
        x = cg_solve_from(apply_h, &b, &x, inner_cg, 0.0)?.x;
        objective.push(objective_relaxed(op, &x, y, fb)?);
    }
    Ok(AltMinOutcome { x, objective })
}
