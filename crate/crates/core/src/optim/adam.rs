use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adaptive-moment (Adam) optimizer state with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradOptState {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl GradOptState {
    pub fn new(dim: usize, step_size: f64) -> Self {
        Self::with_betas(dim, step_size, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(dim: usize, step_size: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            step_size,
            beta1,
            beta2,
            epsilon,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.step_size > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid gradient optimizer settings: step {}, betas {} {}, eps {}",
                self.step_size, self.beta1, self.beta2, self.epsilon
            )))
        }
    }
}

/// One descent step. Returns the advanced state and the new parameters.
pub fn grad_step(state: &GradOptState, params: &[f64], gradient: &[f64]) -> Result<(GradOptState, Vec<f64>)> {
    if params.len() != gradient.len() || params.len() != state.first_moment.len() {
        return Err(Error::dims(format!(
            "params {}, gradient {}, optimizer {}",
            params.len(),
            gradient.len(),
            state.first_moment.len()
        )));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidGradient);
    }
    let mut next = state.clone();
    next.step += 1;
    let t = next.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let mut out = params.to_vec();
    for i in 0..params.len() {
        let g = gradient[i];
        next.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
        next.second_moment[i] = state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
        let m_hat = next.first_moment[i] / bc1;
        let v_hat = next.second_moment[i] / bc2;
        out[i] -= state.step_size * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok((next, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let s = GradOptState::new(3, 0.1);
        let (_, p) = grad_step(&s, &[1.0, -2.0, 3.0], &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let s = GradOptState::new(1, 0.1);
        assert_eq!(
            grad_step(&s, &[0.0], &[f64::INFINITY]).unwrap_err().code(),
            "INVALID_GRADIENT"
        );
    }

    #[test]
    fn quadratic_descends_until_overshoot() {
        // Adam's momentum carries x = 1 past the minimum of x^2 at step 12
        // with step size 0.1; descent is strict up to that crossing and the
        // loss after 50 steps is far below the start.
        let mut s = GradOptState::new(1, 0.1);
        let mut x = vec![1.0];
        let mut f = 1.0;
        for step in 1..=50 {
            let (ns, nx) = grad_step(&s, &x, &[2.0 * x[0]]).unwrap();
            let nf = nx[0] * nx[0];
            if step <= 11 {
                assert!(nf < f, "step {step}");
            }
            s = ns;
            x = nx;
            f = nf;
        }
        assert!(f < 1e-3);
    }

    #[test]
    fn two_steps_match_closed_form() {
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let s = GradOptState::new(1, lr);
        let (s1, x1) = grad_step(&s, &[1.0], &[2.0]).unwrap();
        // step 1: m = 0.2, v = 0.004, m_hat = 2, v_hat = 4
        let e1 = 1.0 - lr * 2.0 / (2.0 + eps);
        assert!((x1[0] - e1).abs() < 1e-15);
        let g2 = 2.0 * e1;
        let m2 = b1 * 0.2 + (1.0 - b1) * g2;
        let v2 = b2 * 0.004 + (1.0 - b2) * g2 * g2;
        let e2 = e1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        let (s2, x2) = grad_step(&s1, &x1, &[g2]).unwrap();
        assert!((x2[0] - e2).abs() < 1e-15);
        assert!((x2[0] - 0.800_412_228_7).abs() < 1e-9);
        assert_eq!(s2.step, 2);
    }
}
