//! Loss-weight schedule and the Adam update.

use crate::tensor::Real;

/// `(gamma, lambda)` for a main-stage epoch counted from 1: lambda rises
/// linearly over epochs 1 to 7 with gamma at zero, then gamma rises over
/// epochs 8 to 14. Both stay at 1 afterwards.
pub fn schedule(epoch: usize) -> (f64, f64) {
    let e = epoch as f64;
    let lambda = (e / 7.0).min(1.0);
    let gamma = ((e - 7.0) / 7.0).clamp(0.0, 1.0);
    (gamma, lambda)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments of one parameter plus its own step count.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub t: u32,
}

impl<F: Real> Moments<F> {
    pub fn new(len: usize) -> Self {
        Moments {
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step.
pub fn adam_step<F: Real>(param: &mut [F], grad: &[F], mom: &mut Moments<F>, cfg: &AdamConfig) {
    mom.t += 1;
    let c = |x: f64| F::from_f64c(x);
    let (b1, b2) = (c(cfg.beta1), c(cfg.beta2));
    let bc1 = c(1.0 - cfg.beta1.powi(mom.t as i32));
    let bc2 = c(1.0 - cfg.beta2.powi(mom.t as i32));
    let (lr, eps) = (c(cfg.lr), c(cfg.eps));
    for k in 0..param.len() {
        let g = grad[k];
        mom.m[k] = b1 * mom.m[k] + (F::one() - b1) * g;
        mom.v[k] = b2 * mom.v[k] + (F::one() - b2) * g * g;
        let mh = mom.m[k] / bc1;
        let vh = mom.v[k] / bc2;
        param[k] = param[k] - lr * mh / (vh.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: AdamConfig = AdamConfig {
        lr: 0.002,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    #[test]
    fn schedule_endpoints() {
        assert_eq!(schedule(1), (0.0, 1.0 / 7.0));
        assert_eq!(schedule(7), (0.0, 1.0));
        assert_eq!(schedule(8), (1.0 / 7.0, 1.0));
        assert_eq!(schedule(14), (1.0, 1.0));
        assert_eq!(schedule(40), (1.0, 1.0));
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![0.3f64, -1.0];
        let mut m = Moments::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut m, &CFG);
        assert_eq!(p, vec![0.3, -1.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0f64, 0.0];
        let mut m = Moments::new(2);
        adam_step(&mut p, &[3.0, -0.5], &mut m, &CFG);
        assert!((p[0] + 0.002).abs() < 1e-10);
        assert!((p[1] - 0.002).abs() < 1e-10);
    }

    #[test]
    fn three_step_scalar_trajectory() {
        let grads = [0.5f64, -0.2, 0.9];
        let mut p = vec![1.0f64];
        let mut mom = Moments::new(1);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            adam_step(&mut p, &[*g], &mut mom, &CFG);
            let t = (t + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.002 * mh / (vh.sqrt() + 1e-8);
            assert!((p[0] - x).abs() < 1e-12);
        }
        assert_eq!(mom.t, 3);
    }
}
