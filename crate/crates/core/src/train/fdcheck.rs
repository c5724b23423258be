use crate::denoiser::FilterBank;
use crate::error::{Error, Result};
use crate::operators::{EncodingOperator, MeasuredData};
use crate::solver::{network_forward, NetworkConfig};
use crate::tensor::ComplexVolume;

use super::{loss_l2, loss_l2_grad, network_backward, Gradients};

/// A small end-to-end instance whose loss can be evaluated repeatedly.
pub struct FdProblem<'a> {
    pub op: &'a dyn EncodingOperator,
    pub y: &'a MeasuredData,
    pub x0: &'a ComplexVolume,
    pub target: &'a ComplexVolume,
    pub fb: &'a FilterBank,
    pub cfg: &'a NetworkConfig,
}

impl FdProblem<'_> {
    pub fn loss_at(&self, fb: &FilterBank) -> Result<f64> {
        let (x, _) = network_forward(self.x0, self.y, self.op, fb, self.cfg, false)?;
        let l = loss_l2(&x, self.target)?;
        if !l.is_finite() {
            return Err(Error::NonFinite("loss during finite differencing".into()));
        }
        Ok(l)
    }

    pub fn analytic_gradient(&self) -> Result<Gradients> {
        let (x, tape) = network_forward(self.x0, self.y, self.op, self.fb, self.cfg, true)?;
        let g = loss_l2_grad(&x, self.target)?;
        network_backward(&tape.unwrap(), &g, self.op, self.fb, self.cfg)
    }
}

/// Relative discrepancies between reverse-mode and central-difference
/// gradients, per parameter block.
#[derive(Clone, Debug)]
pub struct FdReport {
    /// `||fd - analytic||_2 / ||analytic||_2` over all filter coefficients.
    pub filters: f64,
    pub alpha_raw: f64,
    pub lambda_raw: f64,
    pub analytic: Gradients,
    pub numeric: Gradients,
}

impl FdReport {
    pub fn max(&self) -> f64 {
        self.filters.max(self.alpha_raw).max(self.lambda_raw)
    }
}

fn relative(numeric: &[f64], analytic: &[f64]) -> f64 {
    let diff: f64 = numeric.iter().zip(analytic).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    if scale == 0.0 {
        // both vanish: report the absolute discrepancy
        diff
    } else {
        diff / scale
    }
}

/// Compares [`network_backward`] against coordinate-wise central
/// differences with step `step * max(|theta_i|, 1)`.
pub fn finite_diff_check(problem: &FdProblem<'_>, step: f64) -> Result<FdReport> {
    let fb = problem.fb;
    if fb.n_parameters() > 500 {
        return Err(Error::InvalidArgument(format!(
            "finite differencing is limited to 500 parameters, got {}",
            fb.n_parameters()
        )));
    }
    let analytic = problem.analytic_gradient()?;
    let n_f = fb.filters().len();
    let mut numeric = Gradients::zeros(fb);
    for i in 0..n_f + 2 {
        let central = |sign: f64| -> Result<f64> {
            let mut p = fb.clone();
            let v = match i {
                i if i < n_f => &mut p.filters_mut()[i],
                i if i == n_f => &mut p.alpha_raw,
                _ => &mut p.lambda_raw,
            };
            let h = step * v.abs().max(1.0);
            *v += sign * h;
            Ok(problem.loss_at(&p)? / h)
        };
        let d = 0.5 * (central(1.0)? - central(-1.0)?);
        match i {
            i if i < n_f => numeric.d_filters[i] = d,
            i if i == n_f => numeric.d_alpha_raw = d,
            _ => numeric.d_lambda_raw = d,
        }
    }
    Ok(FdReport {
        filters: relative(&numeric.d_filters, &analytic.d_filters),
        alpha_raw: relative(&[numeric.d_alpha_raw], &[analytic.d_alpha_raw]),
        lambda_raw: relative(&[numeric.d_lambda_raw], &[analytic.d_lambda_raw]),
        analytic,
        numeric,
    })
}
