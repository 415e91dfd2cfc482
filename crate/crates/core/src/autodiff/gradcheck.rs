//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |g_a − g_fd| / max(1, |g_a|, |g_fd|)` over every coordinate.
    pub max_rel_error: f64,
    /// `(input, flat element)` where the maximum was attained.
    pub worst: (usize, usize),
    pub coordinates: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares tape gradients of the scalar function `f` with central differences.
///
/// `f` receives a fresh tape and one differentiable leaf per entry of `point`.
pub fn check_gradients<T, F>(f: F, point: &[Tensor<T>], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<T>]| -> Result<T> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|&v| grads.get(v)).collect();

    let mut shifted: Vec<Tensor<T>> = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
        tol,
        passed: true,
    };
    let h = T::lit(eps);
    for (i, input) in point.iter().enumerate() {
        for j in 0..input.len() {
            let base = input.data()[j];
            shifted[i].data_mut()[j] = base + h;
            let fp = eval(&shifted)?;
            shifted[i].data_mut()[j] = base - h;
            let fm = eval(&shifted)?;
            shifted[i].data_mut()[j] = base;

            let fd = (fp - fm).to_f64_lossy() / (2.0 * eps);
            let ga = analytic[i].data()[j].to_f64_lossy();
            if !fd.is_finite() || !ga.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient check at input {i}, element {j}: analytic {ga}, numeric {fd}"
                )));
            }
            let rel = (ga - fd).abs() / 1f64.max(ga.abs()).max(fd.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, j);
            }
            report.coordinates += 1;
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
