//! Euler–Maruyama time stepping with simultaneous stochastic-integral
//! accumulation.
//!
//! One [`simulate`] call advances all replicates of a [`PathBundle`] through
//!
//! ```text
//! X_{n+1} = X_n + dt * b(t_n, X_n) + sqrt(dt) * sigma(t_n, X_n) G_n
//! ```
//!
//! while every registered integrand `h` accumulates the left-endpoint Itô
//! sum `Σ_n h(t_n, X_n) · sigma(t_n, X_n) sqrt(dt) G_n` on the same
//! Gaussians. Sharing the bundle across many integrands (and across calls
//! for different parameters) is the common-random-numbers discipline the
//! control variates rely on.

use crate::error::{Error, Result};
use crate::rng::PathBundle;
use rayon::prelude::*;

/// Boundary rule applied after each Euler step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    None,
    /// Radial reflection about the sphere of radius `radius`.
    ReflectingBall { radius: f64 },
}

/// Dynamics of one parametrized SDE instance on a uniform grid
/// `t_n = n T / N`. The parameter is baked into the drift/diffusion
/// closures; `label` carries it for diagnostics.
pub struct SdeSpec {
    pub dim: usize,
    /// `b(t, x)` written into a `dim` slice.
    pub drift: Box<dyn Fn(f64, &[f64], &mut [f64]) + Sync>,
    /// `sigma(t, x)` written row-major into a `dim * dim` slice.
    pub diffusion: Box<dyn Fn(f64, &[f64], &mut [f64]) + Sync>,
    pub initial: Vec<f64>,
    pub horizon: f64,
    pub steps: usize,
    pub boundary: Boundary,
    pub label: String,
}

impl SdeSpec {
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// Integrand of a stochastic-integral accumulator: `h(t, x)` written into
/// a `dim` slice.
pub type Integrand<'a> = &'a (dyn Fn(f64, &[f64], &mut [f64]) + Sync);

/// Per-bundle simulation results, replicate-indexed.
#[derive(Debug, Clone)]
pub struct TrajectoryOutput {
    /// Terminal states, `m * dim` row-major.
    pub terminal: Vec<f64>,
    /// One accumulated Itô sum per registered integrand, each of length `m`.
    pub integrals: Vec<Vec<f64>>,
    /// All states including the initial one, `m * (steps+1) * dim`, when
    /// requested.
    pub paths: Option<Vec<f64>>,
    /// Number of boundary reflections that needed the safety clamp.
    pub clamped_reflections: u64,
}

impl TrajectoryOutput {
    pub fn terminal_state(&self, r: usize, dim: usize) -> &[f64] {
        &self.terminal[r * dim..(r + 1) * dim]
    }
}

/// Radial reflection of `x` about the sphere of radius `radius`.
///
/// Interior points pass through unchanged. Exterior points map to
/// `x (2R - |x|) / |x|`; a grazing hit whose image would land at norm
/// `>= R (1 - EPS_BOUNDARY)` is clamped to that norm and reported.
///
/// A pathological overstep past `2R` (where the single-reflection formula
/// inverts) is folded: the radius is reflected repeatedly into `[0, R]`,
/// period `2R`, and then subjected to the same grazing clamp. Landing the
/// state *at* the clamp norm instead would pin it in a force-overshoot-
/// reclamp cycle for stiff drifts (the FENE force at the clamp norm is
/// `~R / (2 EPS_BOUNDARY)`, so every explicit Euler step jumps past `2R`
/// again); the fold keeps such events transient. Either way the event is
/// flagged.
pub const EPS_BOUNDARY: f64 = 1e-6;

pub fn reflect_ball(x: &mut [f64], radius: f64) -> bool {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < radius {
        return false;
    }
    let safe = radius * (1.0 - EPS_BOUNDARY);
    let reflected = 2.0 * radius - norm;
    if reflected < safe && reflected > 0.0 {
        let f = reflected / norm;
        for v in x.iter_mut() {
            *v *= f;
        }
        false
    } else if norm < 2.0 * radius {
        // Grazing hit: the image would sit within EPS_BOUNDARY of the wall.
        let f = safe / norm;
        for v in x.iter_mut() {
            *v *= f;
        }
        true
    } else {
        let m = norm % (2.0 * radius);
        let folded = m.min(2.0 * radius - m).min(safe);
        let f = folded / norm;
        for v in x.iter_mut() {
            *v *= f;
        }
        true
    }
}

struct Scratch {
    state: Vec<f64>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    h: Vec<f64>,
}

fn run_replicate(
    spec: &SdeSpec,
    gaussians: &[f64],
    integrands: &[Integrand],
    scratch: &mut Scratch,
    accum: &mut [f64],
    path_out: Option<&mut [f64]>,
    replicate: usize,
) -> Result<u64> {
    let d = spec.dim;
    let n_steps = spec.steps;
    let dt = spec.dt();
    let sqrt_dt = dt.sqrt();
    let mut clamped = 0u64;

    scratch.state.copy_from_slice(&spec.initial);
    accum.fill(0.0);
    let mut path_out = path_out;
    if let Some(p) = path_out.as_deref_mut() {
        p[..d].copy_from_slice(&scratch.state);
    }

    for n in 0..n_steps {
        let t = n as f64 * dt;
        let g = &gaussians[n * d..(n + 1) * d];
        (spec.drift)(t, &scratch.state, &mut scratch.drift);
        (spec.diffusion)(t, &scratch.state, &mut scratch.sigma);

        for (k, h) in integrands.iter().enumerate() {
            h(t, &scratch.state, &mut scratch.h);
            let mut s = 0.0;
            for i in 0..d {
                let hi = scratch.h[i];
                if hi != 0.0 {
                    let row = &scratch.sigma[i * d..(i + 1) * d];
                    let mut dot = 0.0;
                    for j in 0..d {
                        dot += row[j] * g[j];
                    }
                    s += hi * dot;
                }
            }
            accum[k] += s * sqrt_dt;
        }

        for i in 0..d {
            let row = &scratch.sigma[i * d..(i + 1) * d];
            let mut noise = 0.0;
            for j in 0..d {
                noise += row[j] * g[j];
            }
            scratch.state[i] += dt * scratch.drift[i] + sqrt_dt * noise;
        }

        if let Boundary::ReflectingBall { radius } = spec.boundary {
            if reflect_ball(&mut scratch.state, radius) {
                clamped += 1;
            }
        }

        if !scratch.state.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState {
                label: spec.label.clone(),
                step: n,
                replicate,
            });
        }

        if let Some(p) = path_out.as_deref_mut() {
            p[(n + 1) * d..(n + 2) * d].copy_from_slice(&scratch.state);
        }
    }
    Ok(clamped)
}

/// Advances every replicate of `paths` through the Euler scheme.
///
/// Replicates are independent and processed in parallel over disjoint output
/// slices; all reductions are taken afterwards in replicate order, so the
/// output is bit-identical for any worker count.
pub fn simulate(
    spec: &SdeSpec,
    paths: &PathBundle,
    integrands: &[Integrand],
    record_paths: bool,
) -> Result<TrajectoryOutput> {
    if paths.dim() != spec.dim {
        return Err(Error::invalid(format!(
            "path bundle dimension {} does not match SDE dimension {}",
            paths.dim(),
            spec.dim
        )));
    }
    if paths.steps() != spec.steps {
        return Err(Error::invalid(format!(
            "path bundle has {} steps, SDE spec has {}",
            paths.steps(),
            spec.steps
        )));
    }
    if spec.initial.len() != spec.dim {
        return Err(Error::invalid("initial condition dimension mismatch"));
    }
    if let Boundary::ReflectingBall { radius } = spec.boundary {
        if radius <= 0.0 {
            return Err(Error::invalid("reflecting-ball radius must be positive"));
        }
    }

    let m = paths.replicates();
    let d = spec.dim;
    let n_int = integrands.len();
    let mut terminal = vec![0.0; m * d];
    // One padding slot per replicate when there are no integrands, so the
    // zipped chunk iterators stay in lockstep.
    let mut accum_flat = vec![0.0; m * n_int.max(1)];
    let mut paths_rec = if record_paths {
        vec![0.0; m * (spec.steps + 1) * d]
    } else {
        Vec::new()
    };

    let path_len = (spec.steps + 1) * d;
    let results: Vec<Result<u64>> = terminal
        .par_chunks_exact_mut(d)
        .zip(accum_flat.par_chunks_exact_mut(n_int.max(1)))
        .enumerate()
        .map(|(r, (term, acc))| {
            let mut scratch = Scratch {
                state: vec![0.0; d],
                drift: vec![0.0; d],
                sigma: vec![0.0; d * d],
                h: vec![0.0; d],
            };
            let acc = &mut acc[..n_int];
            let clamped = run_replicate(
                spec,
                paths.replicate(r),
                integrands,
                &mut scratch,
                acc,
                None,
                r,
            )?;
            term.copy_from_slice(&scratch.state);
            Ok(clamped)
        })
        .collect();

    // Path recording is test-scale only; rerun sequentially when asked.
    if record_paths {
        for r in 0..m {
            let mut scratch = Scratch {
                state: vec![0.0; d],
                drift: vec![0.0; d],
                sigma: vec![0.0; d * d],
                h: vec![0.0; d],
            };
            let mut acc = vec![0.0; n_int];
            run_replicate(
                spec,
                paths.replicate(r),
                integrands,
                &mut scratch,
                &mut acc,
                Some(&mut paths_rec[r * path_len..(r + 1) * path_len]),
                r,
            )?;
        }
    }

    let mut clamped_total = 0u64;
    for res in results {
        clamped_total += res?;
    }

    let mut integrals = vec![vec![0.0; m]; n_int];
    for r in 0..m {
        for k in 0..n_int {
            integrals[k][r] = accum_flat[r * n_int.max(1) + k];
        }
    }

    Ok(TrajectoryOutput {
        terminal,
        integrals,
        paths: if record_paths { Some(paths_rec) } else { None },
        clamped_reflections: clamped_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{confidence_interval, empirical_mean, empirical_var};
    use crate::rng::PathBundle;

    fn ou_spec(theta: f64, sigma: f64, x0: f64, horizon: f64, steps: usize) -> SdeSpec {
        SdeSpec {
            dim: 1,
            drift: Box::new(move |_t, x, out| out[0] = -theta * x[0]),
            diffusion: Box::new(move |_t, _x, out| out[0] = sigma),
            initial: vec![x0],
            horizon,
            steps,
            boundary: Boundary::None,
            label: format!("ou(theta={theta},sigma={sigma})"),
        }
    }

    #[test]
    fn frozen_dynamics_keep_initial_state() {
        let spec = SdeSpec {
            dim: 2,
            drift: Box::new(|_, _, out| out.fill(0.0)),
            diffusion: Box::new(|_, _, out| out.fill(0.0)),
            initial: vec![1.5, -2.0],
            horizon: 1.0,
            steps: 16,
            boundary: Boundary::None,
            label: "frozen".into(),
        };
        let paths = PathBundle::generate(3, 0, 25, 16, 2);
        let out = simulate(&spec, &paths, &[], false).unwrap();
        for r in 0..25 {
            assert_eq!(out.terminal_state(r, 2), &[1.5, -2.0]);
        }
    }

    #[test]
    fn brownian_motion_terminal_variance() {
        let spec = SdeSpec {
            dim: 1,
            drift: Box::new(|_, _, out| out[0] = 0.0),
            diffusion: Box::new(|_, _, out| out[0] = 1.0),
            initial: vec![0.0],
            horizon: 1.0,
            steps: 64,
            boundary: Boundary::None,
            label: "bm".into(),
        };
        let m = 100_000;
        let paths = PathBundle::generate(17, 0, m, 64, 1);
        let out = simulate(&spec, &paths, &[], false).unwrap();
        let var = empirical_var(&out.terminal).unwrap();
        // Var_M of M iid draws with variance T fluctuates with sd about
        // T sqrt(2/M); allow three of those.
        let tol = 3.0 * (2.0 / m as f64).sqrt();
        assert!((var - 1.0).abs() < tol, "Var(X_T) = {var}");
    }

    #[test]
    fn ou_terminal_moments_match_closed_form() {
        let m = 20_000;
        let steps = 1000;
        let spec = ou_spec(1.0, std::f64::consts::SQRT_2, 1.0, 1.0, steps);
        let paths = PathBundle::generate(23, 0, m, steps, 1);
        let out = simulate(&spec, &paths, &[], false).unwrap();
        let report = confidence_interval(&out.terminal, 1.96).unwrap();
        let exact_mean = (-1.0f64).exp();
        let exact_var = 1.0 - (-2.0f64).exp();
        let dt = 1.0 / steps as f64;
        assert!(
            (report.mean - exact_mean).abs() <= report.half_width + 2.0 * dt,
            "mean {} vs {}",
            report.mean,
            exact_mean
        );
        assert!(
            (report.variance - exact_var).abs() < 0.05 * exact_var,
            "variance {} vs {}",
            report.variance,
            exact_var
        );
    }

    #[test]
    fn euler_weak_error_is_linear_in_dt() {
        // Couple three step sizes through one fine bundle: coarse Gaussians
        // are pairwise sums of fine ones over sqrt(2). The successive mean
        // differences then estimate bias(dt) - bias(dt/2) with tiny noise,
        // and weak order one makes their ratio approach 2.
        let m = 100_000;
        let fine_steps = 200;
        let fine = PathBundle::generate(31, 0, m, fine_steps, 1);

        let coarsen = |src: &PathBundle, factor: usize| -> PathBundle {
            let steps = src.steps() / factor;
            let mut incs = Vec::with_capacity(m * steps);
            for r in 0..m {
                let g = src.replicate(r);
                for n in 0..steps {
                    let mut s = 0.0;
                    for j in 0..factor {
                        s += g[n * factor + j];
                    }
                    incs.push(s / (factor as f64).sqrt());
                }
            }
            PathBundle::from_raw_for_test(m, steps, 1, incs)
        };

        let mut means = Vec::new();
        for (bundle, steps) in [
            (coarsen(&fine, 4), 50usize),
            (coarsen(&fine, 2), 100),
            (fine.clone(), 200),
        ] {
            let spec = ou_spec(1.0, std::f64::consts::SQRT_2, 1.0, 1.0, steps);
            let out = simulate(&spec, &bundle, &[], false).unwrap();
            means.push(empirical_mean(&out.terminal).unwrap());
        }
        let d1 = means[0] - means[1];
        let d2 = means[1] - means[2];
        let ratio = d1 / d2;
        assert!(
            (1.6..=2.6).contains(&ratio),
            "weak-order ratio {ratio} (diffs {d1}, {d2})"
        );
    }

    #[test]
    fn same_bundle_same_lambda_is_bit_identical() {
        let spec = ou_spec(0.7, 1.3, 0.5, 1.0, 32);
        let paths = PathBundle::generate(5, 9, 500, 32, 1);
        let a = simulate(&spec, &paths, &[], false).unwrap();
        let b = simulate(&spec, &paths, &[], false).unwrap();
        assert_eq!(a.terminal, b.terminal);
    }

    #[test]
    fn zero_integrand_accumulates_exact_zero() {
        let spec = ou_spec(1.0, 1.0, 1.0, 1.0, 32);
        let paths = PathBundle::generate(5, 0, 200, 32, 1);
        let zero: Integrand = &|_t, _x, out: &mut [f64]| out.fill(0.0);
        let out = simulate(&spec, &paths, &[zero], false).unwrap();
        assert!(out.integrals[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ito_sum_of_unit_integrand_reconstructs_brownian_increment() {
        // h = 1, sigma = 1: the accumulator must equal sqrt(dt) Σ G_n.
        let spec = SdeSpec {
            dim: 1,
            drift: Box::new(|_, _, out| out[0] = 0.0),
            diffusion: Box::new(|_, _, out| out[0] = 1.0),
            initial: vec![0.0],
            horizon: 1.0,
            steps: 16,
            boundary: Boundary::None,
            label: "bm".into(),
        };
        let paths = PathBundle::generate(77, 0, 50, 16, 1);
        let one: Integrand = &|_t, _x, out: &mut [f64]| out[0] = 1.0;
        let out = simulate(&spec, &paths, &[one], false).unwrap();
        let dt: f64 = 1.0 / 16.0;
        for r in 0..50 {
            let manual: f64 = paths.replicate(r).iter().sum::<f64>() * dt.sqrt();
            assert!((out.integrals[0][r] - manual).abs() < 1e-14);
            // For driftless unit diffusion the terminal state is that sum.
            assert!((out.terminal[r] - manual).abs() < 1e-14);
        }
    }

    #[test]
    fn reflecting_ball_keeps_states_inside() {
        let spec = SdeSpec {
            dim: 2,
            drift: Box::new(|_, x, out| {
                out[0] = 2.0 * x[0];
                out[1] = 2.0 * x[1];
            }),
            diffusion: Box::new(|_, _, out| {
                out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
            }),
            initial: vec![1.0, 1.0],
            horizon: 1.0,
            steps: 100,
            boundary: Boundary::ReflectingBall { radius: 2.0 },
            label: "outward".into(),
        };
        let paths = PathBundle::generate(8, 0, 200, 100, 2);
        let out = simulate(&spec, &paths, &[], true).unwrap();
        let rec = out.paths.as_ref().unwrap();
        for chunk in rec.chunks_exact(2) {
            let norm = (chunk[0] * chunk[0] + chunk[1] * chunk[1]).sqrt();
            assert!(norm < 2.0, "state outside ball: |x| = {norm}");
        }
    }

    #[test]
    fn reflect_ball_examples() {
        let r = 3.0;
        let mut x = [1.0, 1.0];
        assert!(!reflect_ball(&mut x, r));
        assert_eq!(x, [1.0, 1.0]);

        let mut x = [1.1 * r, 0.0];
        assert!(!reflect_ball(&mut x, r));
        assert!((x[0] - 0.9 * r).abs() < 1e-12, "{:?}", x);
        assert_eq!(x[1], 0.0);

        // On the boundary: reflection is a no-op, so the clamp fires.
        let mut x = [r, 0.0];
        assert!(reflect_ball(&mut x, r));
        assert!((x[0] - r * (1.0 - EPS_BOUNDARY)).abs() < 1e-12);

        // Pathological overshoot past 2R: folded back inside, flagged.
        // |x| = 2.5 R folds to (2.5 R mod 2R) = 0.5 R.
        let mut x = [0.0, 2.5 * r];
        assert!(reflect_ball(&mut x, r));
        assert!((x[1] - 0.5 * r).abs() < 1e-12, "{:?}", x);

        // A fold landing on the wall itself is pulled to the clamp norm.
        let mut x = [17.0 * r, 0.0];
        assert!(reflect_ball(&mut x, r));
        assert!((x[0] - r * (1.0 - EPS_BOUNDARY)).abs() < 1e-12, "{:?}", x);

        // Idempotent on interior points.
        let mut x = [0.9 * r * (1.0 - EPS_BOUNDARY), 0.0];
        let before = x;
        assert!(!reflect_ball(&mut x, r));
        assert_eq!(x, before);
    }

    #[test]
    fn non_finite_drift_aborts_with_location() {
        let spec = SdeSpec {
            dim: 1,
            drift: Box::new(|t, _, out| out[0] = if t > 0.5 { f64::NAN } else { 0.0 }),
            diffusion: Box::new(|_, _, out| out[0] = 0.0),
            initial: vec![0.0],
            horizon: 1.0,
            steps: 10,
            boundary: Boundary::None,
            label: "bad-drift".into(),
        };
        let paths = PathBundle::generate(4, 0, 3, 10, 1);
        let err = simulate(&spec, &paths, &[], false).unwrap_err();
        match err {
            Error::NonFiniteState { label, step, .. } => {
                assert_eq!(label, "bad-drift");
                assert_eq!(step, 6);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}

