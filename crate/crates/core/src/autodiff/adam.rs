use crate::error::{dim_err, Result};
use crate::scalar::Real;

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return dim_err(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        );
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return dim_err("adam_step", format!("{:?} vs {:?}", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let (lr, eps) = (T::lit(lr), T::lit(cfg.eps));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_but_counts_step() {
        let mut p = Tensor::<f64>::matrix(1, 3, vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[Tensor::zeros(&[1, 3])], &mut st, 0.1, AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        let mut p = Tensor::<f64>::matrix(1, 3, vec![1.0, -2.0, 3.0]).unwrap();
        let g = Tensor::<f64>::matrix(1, 3, vec![0.5, -4.0, 0.0]).unwrap();
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[g], &mut st, 0.01, AdamConfig::default()).unwrap();
        let d = p.data();
        assert!((d[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((d[1] - (-2.0 + 0.01)).abs() < 1e-9);
        assert_eq!(d[2], 3.0);
    }

    #[test]
    fn quadratic_descent_is_monotone() {
        // oracle: the same recurrence in plain scalars
        let (mut x_ref, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut p = Tensor::<f64>::scalar(1.0);
        let mut st = AdamState::new(&[&p]);
        let mut prev = 1.0f64;
        for t in 1..=10 {
            let g = 2.0 * x_ref;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x_ref -= 0.1 * mh / (vh.sqrt() + 1e-8);

            let grad = Tensor::scalar(2.0 * p.item());
            adam_step(&mut [&mut p], &[grad], &mut st, 0.1, AdamConfig::default()).unwrap();
            assert!((p.item() - x_ref).abs() < 1e-15);
            assert!(p.item().abs() < prev.abs());
            prev = p.item();
        }
    }
}
