//! Hookean and FENE dumbbells under a parametrized velocity gradient.
//!
//! The end-to-end vector follows the Langevin equation
//!
//! ```text
//! dX = (lambda X - F(X)) dt + dB
//! ```
//!
//! with spring force `F(X) = X` (Hookean) or `F(X) = X / (1 - |X|^2 / b_ext)`
//! (FENE, confined to `|X| < sqrt(b_ext)` by a reflecting boundary). The
//! velocity-gradient matrix is trace-free and stored through its `d^2 - 1`
//! free entries. The output is one component of the Kramers stress,
//! `g(X) = X_i F_j(X)`.
//!
//! The Kolmogorov approximation used for gradient control variates is the
//! exact Hookean solution whatever the spring type: for FENE it is a
//! surrogate that stays effective while the boundary is rarely touched.

use crate::error::{Error, Result};
use crate::models::{lambda_label, KolmogorovPayload, Model, ModelDescriptor};
use crate::params::ParameterPoint;
use crate::pde::solve_hookean_kolmogorov;
use crate::sde::{Boundary, SdeSpec};

pub const DUMBBELL_PARAM_NAMES: [&str; 3] = ["l11", "l12", "l21"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spring {
    Hookean,
    Fene { b_ext: f64 },
}

impl Spring {
    /// Spring force `F(x)` written into `out`.
    pub fn force(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            Spring::Hookean => out.copy_from_slice(x),
            Spring::Fene { b_ext } => {
                let norm2: f64 = x.iter().map(|v| v * v).sum();
                let denom = 1.0 - norm2 / b_ext;
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v / denom;
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Spring::Hookean => "hookean",
            Spring::Fene { .. } => "fene",
        }
    }
}

/// Reconstructs the trace-free `d x d` matrix from its free entries: all
/// entries row-major with the last diagonal slot omitted and completed as
/// minus the sum of the other diagonal entries.
pub fn traceless_from_free(free: &[f64], dim: usize) -> Result<Vec<f64>> {
    if free.len() != dim * dim - 1 {
        return Err(Error::invalid(format!(
            "expected {} free entries for a trace-free {dim}x{dim} matrix, got {}",
            dim * dim - 1,
            free.len()
        )));
    }
    let mut mat = vec![0.0; dim * dim];
    mat[..free.len()].copy_from_slice(free);
    let partial: f64 = (0..dim - 1).map(|i| mat[i * dim + i]).sum();
    mat[dim * dim - 1] = -partial;
    Ok(mat)
}

/// Two-bead dumbbell model in dimension two.
#[derive(Debug, Clone)]
pub struct DumbbellModel {
    pub spring: Spring,
    /// Zero-based Kramers component `(i, j)`.
    pub component: (usize, usize),
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub steps: usize,
}

impl DumbbellModel {
    pub fn new(
        spring: Spring,
        component_one_based: (usize, usize),
        x0: Vec<f64>,
        horizon: f64,
        steps: usize,
    ) -> Result<Self> {
        if x0.len() != 2 {
            return Err(Error::config("dumbbell model is two-dimensional"));
        }
        let (i, j) = component_one_based;
        if i == 0 || j == 0 || i > 2 || j > 2 {
            return Err(Error::config(format!(
                "output component must be in 1..=2, got ({i},{j})"
            )));
        }
        if let Spring::Fene { b_ext } = spring {
            if b_ext <= 0.0 {
                return Err(Error::config("b_ext must be positive"));
            }
            let norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm >= b_ext.sqrt() {
                return Err(Error::config(format!(
                    "FENE initial condition |x0| = {norm} must lie inside the ball of radius sqrt(b_ext) = {}",
                    b_ext.sqrt()
                )));
            }
        }
        Ok(DumbbellModel {
            spring,
            component: (i - 1, j - 1),
            x0,
            horizon,
            steps,
        })
    }

    pub fn lambda_matrix(&self, lambda: &ParameterPoint) -> Result<Vec<f64>> {
        traceless_from_free(lambda.coords(), 2)
    }
}

impl Model for DumbbellModel {
    fn name(&self) -> &'static str {
        match self.spring {
            Spring::Hookean => "hookean",
            Spring::Fene { .. } => "fene",
        }
    }

    fn param_names(&self) -> &'static [&'static str] {
        &DUMBBELL_PARAM_NAMES
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn sde_spec(&self, lambda: &ParameterPoint) -> Result<SdeSpec> {
        let mat = self.lambda_matrix(lambda)?;
        let spring = self.spring;
        let d = 2;
        let boundary = match spring {
            Spring::Hookean => Boundary::None,
            Spring::Fene { b_ext } => Boundary::ReflectingBall {
                radius: b_ext.sqrt(),
            },
        };
        Ok(SdeSpec {
            dim: d,
            drift: Box::new(move |_t, x, out| {
                let mut force = [0.0; 2];
                spring.force(x, &mut force);
                for i in 0..d {
                    out[i] = mat[i * d] * x[0] + mat[i * d + 1] * x[1] - force[i];
                }
            }),
            diffusion: Box::new(|_t, _x, out| {
                out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
            }),
            initial: self.x0.clone(),
            horizon: self.horizon,
            steps: self.steps,
            boundary,
            label: lambda_label(self.name(), &DUMBBELL_PARAM_NAMES, lambda),
        })
    }

    fn payoff(&self, terminal: &[f64]) -> f64 {
        let mut force = [0.0; 2];
        self.spring.force(terminal, &mut force);
        terminal[self.component.0] * force[self.component.1]
    }

    fn solve_kolmogorov(&self, lambda: &ParameterPoint) -> Result<KolmogorovPayload> {
        let mat = self.lambda_matrix(lambda)?;
        let hk = solve_hookean_kolmogorov(&mat, 2, self.component, self.horizon, self.steps)?;
        Ok(KolmogorovPayload::Quadratic(hk))
    }

    fn gradient_integrand<'a>(
        &self,
        payload: &'a KolmogorovPayload,
    ) -> Result<Box<dyn Fn(f64, &[f64], &mut [f64]) + Sync + 'a>> {
        let hk = match payload {
            KolmogorovPayload::Quadratic(hk) => hk,
            KolmogorovPayload::Grid(_) => {
                return Err(Error::BasisMismatch(
                    "dumbbell model expects quadratic payloads".into(),
                ))
            }
        };
        Ok(Box::new(move |t, x, out| hk.gradient(t, x, out)))
    }

    fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor::Dumbbell {
            spring: self.spring.name().to_string(),
            b_ext: match self.spring {
                Spring::Hookean => None,
                Spring::Fene { b_ext } => Some(b_ext),
            },
            component: (self.component.0 + 1, self.component.1 + 1),
            x0: self.x0.clone(),
            horizon: self.horizon,
            steps: self.steps,
        }
    }
}
