//! Scalar Ornstein–Uhlenbeck model: the closed-form oracle of the linear
//! SDE family, `dX = -theta X dt + sigma dB`, output `X_T`.

use crate::error::Result;
use crate::models::{lambda_label, KolmogorovPayload, Model, ModelDescriptor};
use crate::params::ParameterPoint;
use crate::sde::{Boundary, SdeSpec};

pub const OU_PARAM_NAMES: [&str; 2] = ["theta", "sigma"];

/// Exact terminal moments of `dX = -theta X dt + sigma dB`, `X_0 = x0`:
/// mean `x0 e^{-theta T}`, variance `sigma^2 (1 - e^{-2 theta T}) / (2 theta)`
/// with the Brownian limit `sigma^2 T` as `theta -> 0`.
pub fn ou_exact_moments(theta: f64, sigma: f64, x0: f64, horizon: f64) -> (f64, f64) {
    let mean = x0 * (-theta * horizon).exp();
    let variance = if theta.abs() < 1e-12 {
        sigma * sigma * horizon
    } else {
        sigma * sigma * (-(-2.0 * theta * horizon).exp_m1()) / (2.0 * theta)
    };
    (mean, variance)
}

/// Exact mean of the Euler chain itself, `x0 (1 - theta dt)^N`; handy where
/// a test wants the discrete scheme's own expectation with no bias term.
pub fn ou_euler_mean(theta: f64, x0: f64, horizon: f64, steps: usize) -> f64 {
    let dt = horizon / steps as f64;
    x0 * (1.0 - theta * dt).powi(steps as i32)
}

#[derive(Debug, Clone, Copy)]
pub struct OuModel {
    pub x0: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl Model for OuModel {
    fn name(&self) -> &'static str {
        "ou"
    }

    fn param_names(&self) -> &'static [&'static str] {
        &OU_PARAM_NAMES
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn sde_spec(&self, lambda: &ParameterPoint) -> Result<SdeSpec> {
        let theta = lambda.coords()[0];
        let sigma = lambda.coords()[1];
        Ok(SdeSpec {
            dim: 1,
            drift: Box::new(move |_t, x, out| out[0] = -theta * x[0]),
            diffusion: Box::new(move |_t, _x, out| out[0] = sigma),
            initial: vec![self.x0],
            horizon: self.horizon,
            steps: self.steps,
            boundary: Boundary::None,
            label: lambda_label("ou", &OU_PARAM_NAMES, lambda),
        })
    }

    fn payoff(&self, terminal: &[f64]) -> f64 {
        terminal[0]
    }

    // The oracle model is wired for recycled control variates only; gradient
    // control variates use the bs and dumbbell models.
    fn solve_kolmogorov(&self, _lambda: &ParameterPoint) -> Result<KolmogorovPayload> {
        Err(crate::error::Error::invalid(
            "gradient control variates are not wired for the ou oracle model",
        ))
    }

    fn gradient_integrand<'a>(
        &self,
        _payload: &'a KolmogorovPayload,
    ) -> Result<Box<dyn Fn(f64, &[f64], &mut [f64]) + Sync + 'a>> {
        Err(crate::error::Error::invalid(
            "gradient control variates are not wired for the ou oracle model",
        ))
    }

    fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor::Ou {
            x0: self.x0,
            horizon: self.horizon,
            steps: self.steps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        let (mean, var) = ou_exact_moments(1.0, std::f64::consts::SQRT_2, 1.0, 1.0);
        assert!((mean - (-1.0f64).exp()).abs() < 1e-15);
        assert!((var - (1.0 - (-2.0f64).exp())).abs() < 1e-15);

        let (mean, var) = ou_exact_moments(0.0, 0.7, 3.0, 2.0);
        assert_eq!(mean, 3.0);
        assert!((var - 0.49 * 2.0).abs() < 1e-15);

        let (mean, var) = ou_exact_moments(1.3, 0.7, 3.0, 0.0);
        assert_eq!(mean, 3.0);
        assert_eq!(var, 0.0);
    }

    #[test]
    fn tiny_theta_matches_brownian_limit_smoothly() {
        let (_, v_small) = ou_exact_moments(1e-13, 1.0, 0.0, 1.0);
        let (_, v_zero) = ou_exact_moments(0.0, 1.0, 0.0, 1.0);
        assert!((v_small - v_zero).abs() < 1e-9);
    }
}
