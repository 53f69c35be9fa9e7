//! Bias-corrected Adam over flat parameter blocks.

use crate::tensorcore::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams<F> {
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Real> Default for AdamParams<F> {
    fn default() -> Self {
        Self {
            beta1: F::zero(),
            beta2: F::lit(0.99),
            eps: F::lit(1e-8),
        }
    }
}

/// First and second moments for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub t: u32,
}

impl<F: Real> AdamState<F> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = F::zero());
        self.v.iter_mut().for_each(|x| *x = F::zero());
        self.t = 0;
    }
}

/// One Adam update of `x` in place. A learning rate of zero leaves both the
/// variable and the moments untouched.
pub fn adam_step<F: Real>(state: &mut AdamState<F>, x: &mut [F], grad: &[F], lr: F, p: &AdamParams<F>) {
    assert_eq!(x.len(), grad.len(), "parameter and gradient lengths differ");
    assert_eq!(x.len(), state.m.len(), "parameter and moment lengths differ");
    if lr == F::zero() {
        return;
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = F::one() - p.beta1.powi(t);
    let c2 = F::one() - p.beta2.powi(t);
    for i in 0..x.len() {
        let g = grad[i];
        state.m[i] = p.beta1 * state.m[i] + (F::one() - p.beta1) * g;
        state.v[i] = p.beta2 * state.v[i] + (F::one() - p.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        x[i] -= lr * m_hat / (v_hat.sqrt() + p.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_on_unit_gradient() {
        let mut s = AdamState::<f64>::new(1);
        let mut x = [0.0];
        adam_step(&mut s, &mut x, &[1.0], 0.1, &AdamParams::default());
        assert!((x[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_beta1_keeps_raw_gradient() {
        let mut s = AdamState::<f64>::new(2);
        let mut x = [0.0, 0.0];
        let p = AdamParams::default();
        adam_step(&mut s, &mut x, &[1.0, -2.0], 0.1, &p);
        adam_step(&mut s, &mut x, &[3.0, 0.5], 0.1, &p);
        assert_eq!(s.m, vec![3.0, 0.5]);
    }

    #[test]
    fn zero_gradient_and_zero_rate_leave_variable() {
        let p = AdamParams::default();
        let mut s = AdamState::<f64>::new(2);
        let mut x = [0.3, -1.7];
        adam_step(&mut s, &mut x, &[0.0, 0.0], 0.1, &p);
        assert_eq!(x, [0.3, -1.7]);
        let mut s = AdamState::<f64>::new(2);
        adam_step(&mut s, &mut x, &[5.0, 1.0], 0.0, &p);
        assert_eq!(x, [0.3, -1.7]);
        assert_eq!(s.t, 0);
    }
}
