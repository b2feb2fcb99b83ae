//! Concrete parametrized models and the interface the variance-reduction
//! machinery drives them through.

pub mod bs;
pub mod dumbbell;
pub mod ou;

pub use bs::{hyperbolic_vol, BsModel, HyperbolicVol};
pub use dumbbell::{traceless_from_free, DumbbellModel, Spring};
pub use ou::{ou_exact_moments, OuModel};

use crate::error::Result;
use crate::params::ParameterPoint;
use crate::pde::{GridFunction, HookeanKolmogorov};
use crate::sde::SdeSpec;
use serde::{Deserialize, Serialize};

/// Offline data stored per reduced-basis element when the control variates
/// are built from Kolmogorov gradients.
#[derive(Debug, Clone)]
pub enum KolmogorovPayload {
    Grid(GridFunction),
    Quadratic(HookeanKolmogorov),
}

/// One parametrized SDE model with a scalar output functional.
pub trait Model: Sync {
    fn name(&self) -> &'static str;
    fn param_names(&self) -> &'static [&'static str];
    fn param_dim(&self) -> usize {
        self.param_names().len()
    }
    fn state_dim(&self) -> usize;
    fn steps(&self) -> usize;
    fn horizon(&self) -> f64;

    /// Dynamics for one parameter point; the point is baked into the
    /// returned closures.
    fn sde_spec(&self, lambda: &ParameterPoint) -> Result<SdeSpec>;

    /// Output functional `g` applied to a terminal state.
    fn payoff(&self, terminal: &[f64]) -> f64;

    /// Offline Kolmogorov approximation for one selected parameter.
    fn solve_kolmogorov(&self, lambda: &ParameterPoint) -> Result<KolmogorovPayload>;

    /// The gradient field `grad u(t, x)` of a stored element, as an SDE
    /// integrand. The simulation engine contracts it against the *queried*
    /// parameter's diffusion and the shared Gaussians.
    fn gradient_integrand<'a>(
        &self,
        payload: &'a KolmogorovPayload,
    ) -> Result<Box<dyn Fn(f64, &[f64], &mut [f64]) + Sync + 'a>>;

    /// Serializable identity, persisted in basis manifests so a basis
    /// cannot be replayed against a different model.
    fn descriptor(&self) -> ModelDescriptor;
}

/// Everything needed to reconstruct a model (and to detect mismatches
/// between a stored basis and the model it is queried with).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ModelDescriptor {
    Bs {
        spot: f64,
        strike: f64,
        rate: f64,
        horizon: f64,
        steps: usize,
        pde_time_steps: usize,
        pde_space_steps: usize,
        s_max: f64,
    },
    Dumbbell {
        spring: String,
        b_ext: Option<f64>,
        /// One-based output component, `(i, j)`.
        component: (usize, usize),
        x0: Vec<f64>,
        horizon: f64,
        steps: usize,
    },
    Ou {
        x0: f64,
        horizon: f64,
        steps: usize,
    },
}

/// Rebuilds the model a descriptor identifies.
pub fn build_model(desc: &ModelDescriptor) -> Result<Box<dyn Model>> {
    match desc {
        ModelDescriptor::Bs {
            spot,
            strike,
            rate,
            horizon,
            steps,
            pde_time_steps,
            pde_space_steps,
            s_max,
        } => Ok(Box::new(BsModel {
            spot: *spot,
            strike: *strike,
            rate: *rate,
            horizon: *horizon,
            steps: *steps,
            pde_time_steps: *pde_time_steps,
            pde_space_steps: *pde_space_steps,
            s_max: *s_max,
        })),
        ModelDescriptor::Dumbbell {
            spring,
            b_ext,
            component,
            x0,
            horizon,
            steps,
        } => {
            let spring = match (spring.as_str(), b_ext) {
                ("hookean", _) => Spring::Hookean,
                ("fene", Some(b)) => Spring::Fene { b_ext: *b },
                ("fene", None) => {
                    return Err(crate::error::Error::config("fene spring needs b_ext"))
                }
                (other, _) => {
                    return Err(crate::error::Error::config(format!(
                        "unknown spring type '{other}'"
                    )))
                }
            };
            DumbbellModel::new(spring, *component, x0.clone(), *horizon, *steps)
                .map(|m| Box::new(m) as Box<dyn Model>)
        }
        ModelDescriptor::Ou { x0, horizon, steps } => Ok(Box::new(OuModel {
            x0: *x0,
            horizon: *horizon,
            steps: *steps,
        })),
    }
}

pub(crate) fn lambda_label(name: &str, names: &[&str], lambda: &ParameterPoint) -> String {
    let coords: Vec<String> = names
        .iter()
        .zip(lambda.coords())
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    format!("{name}({})", coords.join(","))
}
