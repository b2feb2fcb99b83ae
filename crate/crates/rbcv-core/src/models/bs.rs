//! Black–Scholes model with "hyperbolic" local volatility.
//!
//! The asset follows `dS = S (r dt + sigma(t, S) dB)` and the output is the
//! discounted call payoff `e^{-rT} max(S_T - K, 0)`. The local volatility is
//! the seven-parameter practitioner surface
//!
//! ```text
//! sigma(t, S) = (gamma + 1) / (1 / C(0, S0) + gamma / C(t, S))
//! C(t, S)     = (sqrt(C_A^2 + c_min^2) + C_A) / 2
//! C_A(t, S)   = a + sqrt((vol_b - vol_c)^2 L^2 + 4 a^2 vol_d^2) / 2
//!                 + (vol_b + vol_c) L / 2,       L = log(S / (alpha S0 e^{r t}))
//! ```
//!
//! parametrized by `lambda = (a, vol_b, vol_c, vol_d, alpha, gamma, c_min)`.

use crate::error::{Error, Result};
use crate::models::{lambda_label, KolmogorovPayload, Model, ModelDescriptor};
use crate::params::ParameterPoint;
use crate::pde::{solve_bs_crank_nicolson, GridField};
use crate::sde::{Boundary, SdeSpec};

pub const BS_PARAM_NAMES: [&str; 7] = ["a", "vol_b", "vol_c", "vol_d", "alpha", "gamma", "c_min"];

/// One evaluated hyperbolic volatility surface (parameter point plus the
/// spot/rate context it is anchored to).
#[derive(Debug, Clone, Copy)]
pub struct HyperbolicVol {
    a: f64,
    vol_b: f64,
    vol_c: f64,
    vol_d: f64,
    alpha: f64,
    gamma: f64,
    c_min: f64,
    spot: f64,
    rate: f64,
    /// Precomputed `C(0, S0)`.
    c00: f64,
}

impl HyperbolicVol {
    pub fn new(lambda: &[f64], spot: f64, rate: f64) -> Result<Self> {
        if lambda.len() != 7 {
            return Err(Error::invalid(format!(
                "hyperbolic volatility needs 7 parameters, got {}",
                lambda.len()
            )));
        }
        let [a, vol_b, vol_c, vol_d, alpha, gamma, c_min] =
            [lambda[0], lambda[1], lambda[2], lambda[3], lambda[4], lambda[5], lambda[6]];
        if c_min <= 0.0 {
            return Err(Error::invalid(format!("c_min must be positive, got {c_min}")));
        }
        if alpha <= 0.0 {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        if gamma < 0.0 {
            return Err(Error::invalid(format!("gamma must be nonnegative, got {gamma}")));
        }
        if spot <= 0.0 {
            return Err(Error::invalid("spot must be positive"));
        }
        let mut v = HyperbolicVol {
            a,
            vol_b,
            vol_c,
            vol_d,
            alpha,
            gamma,
            c_min,
            spot,
            rate,
            c00: 0.0,
        };
        v.c00 = v.c_fn(0.0, spot);
        Ok(v)
    }

    fn c_a(&self, t: f64, s: f64) -> f64 {
        let l = (s / (self.alpha * self.spot * (self.rate * t).exp())).ln();
        let bc = self.vol_b - self.vol_c;
        self.a
            + 0.5 * (bc * bc * l * l + 4.0 * self.a * self.a * self.vol_d * self.vol_d).sqrt()
            + 0.5 * (self.vol_b + self.vol_c) * l
    }

    fn c_fn(&self, t: f64, s: f64) -> f64 {
        let ca = self.c_a(t, s);
        0.5 * ((ca * ca + self.c_min * self.c_min).sqrt() + ca)
    }

    /// `sigma(t, s)` for `s > 0`; the caller guarantees positivity.
    pub fn vol_unchecked(&self, t: f64, s: f64) -> f64 {
        (self.gamma + 1.0) / (1.0 / self.c00 + self.gamma / self.c_fn(t, s))
    }
}

/// The local volatility `sigma(t, S)`; errors on non-positive prices.
pub fn hyperbolic_vol(surface: &HyperbolicVol, t: f64, s: f64) -> Result<f64> {
    if s <= 0.0 {
        return Err(Error::invalid(format!("price must be positive, got {s}")));
    }
    Ok(surface.vol_unchecked(t, s))
}

/// European call under local volatility; see the module docs.
#[derive(Debug, Clone, Copy)]
pub struct BsModel {
    pub spot: f64,
    pub strike: f64,
    pub rate: f64,
    pub horizon: f64,
    pub steps: usize,
    pub pde_time_steps: usize,
    pub pde_space_steps: usize,
    pub s_max: f64,
}

impl BsModel {
    pub fn surface(&self, lambda: &ParameterPoint) -> Result<HyperbolicVol> {
        HyperbolicVol::new(lambda.coords(), self.spot, self.rate)
    }
}

impl Model for BsModel {
    fn name(&self) -> &'static str {
        "bs"
    }

    fn param_names(&self) -> &'static [&'static str] {
        &BS_PARAM_NAMES
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
        let surface = self.surface(lambda)?;
        let rate = self.rate;
        Ok(SdeSpec {
            dim: 1,
            drift: Box::new(move |_t, x, out| out[0] = rate * x[0]),
            // The diffusion is proportional to S, so S = 0 is absorbing; the
            // guard keeps the surface away from log(0) on degenerate states.
            diffusion: Box::new(move |t, x, out| {
                out[0] = if x[0] > 0.0 {
                    surface.vol_unchecked(t, x[0]) * x[0]
                } else {
                    0.0
                };
            }),
            initial: vec![self.spot],
            horizon: self.horizon,
            steps: self.steps,
            boundary: Boundary::None,
            label: lambda_label("bs", &BS_PARAM_NAMES, lambda),
        })
    }

    fn payoff(&self, terminal: &[f64]) -> f64 {
        (-self.rate * self.horizon).exp() * (terminal[0] - self.strike).max(0.0)
    }

    fn solve_kolmogorov(&self, lambda: &ParameterPoint) -> Result<KolmogorovPayload> {
        let surface = self.surface(lambda)?;
        let grid = solve_bs_crank_nicolson(
            &move |t: f64, s: f64| surface.vol_unchecked(t, s),
            self.strike,
            self.rate,
            self.horizon,
            self.pde_time_steps,
            self.pde_space_steps,
            self.s_max,
        )?;
        Ok(KolmogorovPayload::Grid(grid))
    }

    fn gradient_integrand<'a>(
        &self,
        payload: &'a KolmogorovPayload,
    ) -> Result<Box<dyn Fn(f64, &[f64], &mut [f64]) + Sync + 'a>> {
        let grid = match payload {
            KolmogorovPayload::Grid(g) => g,
            KolmogorovPayload::Quadratic(_) => {
                return Err(Error::BasisMismatch(
                    "bs model expects grid payloads".into(),
                ))
            }
        };
        let rate = self.rate;
        // grad u(t, S) = e^{-rt} dC/dS(t, S) after the discounting change of
        // variables u = e^{-rt} C.
        Ok(Box::new(move |t, x, out| {
            out[0] = (-rate * t).exp() * grid.interpolate(t, x[0], GridField::Derivative);
        }))
    }

    fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor::Bs {
            spot: self.spot,
            strike: self.strike,
            rate: self.rate,
            horizon: self.horizon,
            steps: self.steps,
            pde_time_steps: self.pde_time_steps,
            pde_space_steps: self.pde_space_steps,
            s_max: self.s_max,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::confidence_interval;
    use crate::rng::PathBundle;
    use crate::sde::simulate;

    fn preset_model() -> BsModel {
        BsModel {
            spot: 90.0,
            strike: 100.0,
            rate: 0.04,
            horizon: 1.0,
            steps: 100,
            pde_time_steps: 100,
            pde_space_steps: 300,
            s_max: 300.0,
        }
    }

    fn preset_lambda(a: f64, b: f64) -> ParameterPoint {
        ParameterPoint(vec![a, b, b, 1.0, 1.1, 5.0, 0.05])
    }

    #[test]
    fn gamma_zero_collapses_to_a_constant() {
        let mut coords = preset_lambda(0.08, 1.2).0;
        coords[5] = 0.0; // gamma
        let surf = HyperbolicVol::new(&coords, 90.0, 0.04).unwrap();
        let c00 = surf.c_fn(0.0, 90.0);
        for &(t, s) in &[(0.0, 50.0), (0.3, 90.0), (0.9, 149.0), (1.0, 260.0)] {
            let v = hyperbolic_vol(&surf, t, s).unwrap();
            assert!((v - c00).abs() < 1e-14, "sigma({t},{s}) = {v} vs {c00}");
        }
    }

    #[test]
    fn vol_matches_independent_formula_evaluation() {
        // Re-derivation of the three displayed formulas, factored
        // differently, evaluated at scattered points.
        let surf = HyperbolicVol::new(&[0.05, 1.0, 0.7, 1.1, 5.0, 5.0, 0.05], 90.0, 0.04).unwrap();
        let reference = |t: f64, s: f64| -> f64 {
            let (a, b, c, d, alpha, gamma, c_min) =
                (0.05f64, 1.0f64, 0.7f64, 1.1f64, 5.0f64, 5.0f64, 0.05f64);
            let ca = |t: f64, s: f64| {
                let l = (s / (alpha * 90.0 * f64::exp(0.04 * t))).ln();
                a + f64::sqrt((b - c).powi(2) * l * l + (2.0 * a * d).powi(2)) / 2.0
                    + (b + c) / 2.0 * l
            };
            let cc = |t: f64, s: f64| {
                let v = ca(t, s);
                (f64::hypot(v, c_min) + v) / 2.0
            };
            (gamma + 1.0) * cc(0.0, 90.0) * cc(t, s) / (cc(t, s) + gamma * cc(0.0, 90.0))
        };
        for &(t, s) in &[(0.0, 90.0), (0.2, 55.0), (0.5, 120.0), (1.0, 200.0), (0.77, 66.6)] {
            let got = hyperbolic_vol(&surf, t, s).unwrap();
            let want = reference(t, s);
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "sigma({t},{s}): {got} vs {want}"
            );
        }
    }

    #[test]
    fn vol_families_are_positive_and_monotone_with_tied_bc() {
        // For b = c the surface is increasing in S; check the six corner
        // families over S in [50, 150], t in {0, .1, ..., 1}.
        let model = preset_model();
        for &a in &[-0.05, 0.05, 0.15] {
            for &b in &[0.5, 1.5] {
                let surf = model.surface(&preset_lambda(a, b)).unwrap();
                for k in 0..=10 {
                    let t = 0.1 * k as f64;
                    let mut prev = 0.0;
                    for step in 0..=100 {
                        let s = 50.0 + step as f64;
                        let v = hyperbolic_vol(&surf, t, s).unwrap();
                        assert!(v > 0.0, "sigma must stay positive");
                        if step > 0 {
                            assert!(v >= prev - 1e-12, "not monotone at a={a}, b={b}, t={t}, s={s}");
                        }
                        prev = v;
                    }
                }
            }
        }
    }

    #[test]
    fn vol_rejects_nonpositive_price() {
        let surf = HyperbolicVol::new(&preset_lambda(0.05, 1.0).0, 90.0, 0.04).unwrap();
        assert!(hyperbolic_vol(&surf, 0.0, 0.0).is_err());
        assert!(hyperbolic_vol(&surf, 0.0, -3.0).is_err());
    }

    #[test]
    fn constant_vol_zero_rate_is_a_martingale() {
        let model = BsModel {
            rate: 0.0,
            ..preset_model()
        };
        // gamma = 0 freezes the surface at C(0, S0).
        let mut coords = preset_lambda(0.1, 1.0).0;
        coords[5] = 0.0;
        let lambda = ParameterPoint(coords);
        let spec = model.sde_spec(&lambda).unwrap();
        let m = 40_000;
        let paths = PathBundle::generate(2024, 0, m, model.steps, 1);
        let out = simulate(&spec, &paths, &[], false).unwrap();
        let r = confidence_interval(&out.terminal, 1.96).unwrap();
        assert!(
            (r.mean - 90.0).abs() <= r.half_width,
            "E[S_T] = {} +- {}",
            r.mean,
            r.half_width
        );
    }

    #[test]
    fn preset_configuration_constructs() {
        let model = preset_model();
        let spec = model.sde_spec(&preset_lambda(0.05, 1.0)).unwrap();
        assert_eq!(spec.dim, 1);
        assert_eq!(spec.steps, 100);
        assert_eq!(spec.initial, vec![90.0]);
        assert!((spec.dt() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_spot_is_absorbing() {
        let model = BsModel {
            spot: 1e-300,
            ..preset_model()
        };
        let spec = model.sde_spec(&preset_lambda(0.05, 1.0)).unwrap();
        let paths = PathBundle::generate(7, 0, 50, 100, 1);
        let out = simulate(&spec, &paths, &[], false).unwrap();
        for r in 0..50 {
            assert!(out.terminal[r] <= 1e-290, "S_T = {}", out.terminal[r]);
        }
    }

    #[test]
    fn call_surface_is_monotone_on_the_experiment_box() {
        // Corners of the experiment's (a, b=c) box: every time slice of the
        // solved call surface must be nondecreasing in S.
        let model = preset_model();
        for &(a, b) in &[(-0.05, 0.5), (-0.05, 1.5), (0.15, 0.5), (0.15, 1.5)] {
            let payload = model.solve_kolmogorov(&preset_lambda(a, b)).unwrap();
            let grid = match payload {
                KolmogorovPayload::Grid(g) => g,
                _ => unreachable!(),
            };
            for l in 0..=grid.time_steps() {
                for j in 0..grid.space_steps() {
                    assert!(
                        grid.node(l, j + 1) >= grid.node(l, j) - 1e-9,
                        "a={a}, b={b}: slice {l} not monotone at column {j}"
                    );
                }
            }
        }
    }

    #[test]
    fn payoff_is_the_discounted_call() {
        let model = preset_model();
        let df = (-0.04f64).exp();
        assert_eq!(model.payoff(&[130.0]), df * 30.0);
        assert_eq!(model.payoff(&[90.0]), 0.0);
    }
}
