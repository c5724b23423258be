//! Values of the analysis-sparsity objective and its quadratic-penalty
//! relaxation.
//!
//! With the data term `D(x) = 1/2 <Ax - y, W^{1/2} (Ax - y)>` and filter
//! responses taken per real/imaginary channel:
//!
//! - `analysis(x) = D(x) + alpha sum_k ||h_k * x||_1`
//! - `relaxed(x, s) = D(x) + lambda/2 sum_k ||h_k * x - s_k||^2 + alpha sum_k ||s_k||_1`

use crate::denoiser::{conv_accumulate, FilterBank, Shrinkage};
use crate::error::{shape_mismatch, Result};
use crate::operators::{data_fidelity, EncodingOperator, MeasuredData};
use crate::tensor::ComplexVolume;

/// Filter responses `h_k * x_c` indexed `[channel][filter]`.
pub fn filter_responses(x: &ComplexVolume, fb: &FilterBank) -> Vec<Vec<Vec<f64>>> {
    let two = x.as_two_channel();
    let kf = fb.kernel_side();
    (0..2)
        .map(|c| {
            (0..fb.n_filters())
                .map(|k| {
                    let mut out = vec![0.0; x.len()];
                    conv_accumulate(two.channel(c), x.shape(), fb.kernel(k), kf, false, &mut out);
                    out
                })
                .collect()
        })
        .collect()
}

pub fn objective_analysis<A: EncodingOperator + ?Sized>(op: &A, x: &ComplexVolume, y: &MeasuredData, fb: &FilterBank) -> Result<f64> {
    let l1: f64 = filter_responses(x, fb).iter().flatten().flatten().map(|v| v.abs()).sum();
    Ok(data_fidelity(op, x, y)? + fb.alpha() * l1)
}

/// `relaxed` at the given auxiliary variables `s[channel][filter]`.
pub fn objective_relaxed_with<A: EncodingOperator + ?Sized>(
    op: &A,
    x: &ComplexVolume,
    s: &[Vec<Vec<f64>>],
    y: &MeasuredData,
    fb: &FilterBank,
) -> Result<f64> {
    let resp = filter_responses(x, fb);
    if s.len() != 2 || s.iter().any(|c| c.len() != fb.n_filters()) {
        return Err(shape_mismatch((2, fb.n_filters()), (s.len(), s.first().map_or(0, Vec::len))));
    }
    let mut penalty = 0.0;
    let mut l1 = 0.0;
    for (rc, sc) in resp.iter().zip(s) {
        for (r, sk) in rc.iter().zip(sc) {
            penalty += r.iter().zip(sk).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            l1 += sk.iter().map(|v| v.abs()).sum::<f64>();
        }
    }
    Ok(data_fidelity(op, x, y)? + 0.5 * fb.lambda() * penalty + fb.alpha() * l1)
}

/// Exact-threshold auxiliary variables `s_k = S_{alpha/lambda}(h_k * x)`,
/// the minimizers of `relaxed` for fixed `x`.
pub fn optimal_codes(x: &ComplexVolume, fb: &FilterBank) -> Vec<Vec<Vec<f64>>> {
    let t = fb.threshold();
    let mut resp = filter_responses(x, fb);
    resp.iter_mut()
        .flatten()
        .flatten()
        .for_each(|v| *v = Shrinkage::Exact.apply(*v, t));
    resp
}

/// `relaxed` with the auxiliary variables set to their exact minimizers.
pub fn objective_relaxed<A: EncodingOperator + ?Sized>(op: &A, x: &ComplexVolume, y: &MeasuredData, fb: &FilterBank) -> Result<f64> {
    let s = optimal_codes(x, fb);
    objective_relaxed_with(op, x, &s, y, fb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::test_util::*;
    use crate::operators::ForwardModel;
    use crate::tensor::Shape;

    #[test]
    fn optimal_codes_minimize_relaxed() {
        let shape = Shape::new(6, 6, 3);
        let m = ForwardModel::golden_angle(shape, test_coils(6, 6, 2), 2).unwrap();
        let y = m.forward(&random_volume(shape, 1)).unwrap();
        let x = random_volume(shape, 2);
        let fb = FilterBank::random(3, 3, 3).unwrap();
        let best = objective_relaxed(&m, &x, &y, &fb).unwrap();
        let mut s = optimal_codes(&x, &fb);
        for delta in [1e-3, -1e-3] {
            s[1][2][5] += delta;
            assert!(objective_relaxed_with(&m, &x, &s, &y, &fb).unwrap() > best);
            s[1][2][5] -= delta;
        }
        // with s = h * x the penalty vanishes and the relaxed objective equals the analysis one
        let resp = filter_responses(&x, &fb);
        let analysis = objective_analysis(&m, &x, &y, &fb).unwrap();
        assert!((objective_relaxed_with(&m, &x, &resp, &y, &fb).unwrap() - analysis).abs() < 1e-10 * analysis);
    }
}
