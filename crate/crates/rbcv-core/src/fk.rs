//! Pathwise gradient estimation through the first-variation process.
//!
//! For dynamics `dX = b dt + sigma dB` started at `(t0, y)`, the sensitivity
//! of `X_s` to its initial point evolves as
//!
//! ```text
//! Phi_{n+1} = Phi_n (I + dt grad_b(t_n, X_n) + sqrt(dt) grad_sigma(t_n, X_n) . G_n)
//! Phi_0     = I
//! ```
//!
//! with the convention `Phi[i][j] = d(X_s)_j / d y_i`, so the gradient
//! estimate of `u(t0, y) = E[g(X_T) - int f]` is the Monte-Carlo average of
//! `Phi_T . grad_g(X_T) - Σ_n Phi_n . grad_f(t_n, X_n) dt`. Gradients of
//! vector fields follow the same row convention: `grad_b[k][j] = d b_j / d
//! x_k`, and `grad_sigma[k][j][l] = d sigma_{jl} / d x_k` (row-major
//! `d*d*d`).
//!
//! This route exists for models where no PDE grid is practical; it is
//! validated against the linear-SDE and Hookean closed forms but is not
//! wired into the default gradient-basis pipeline.

use crate::error::{Error, Result};
use crate::estimators::{confidence_interval, EstimatorReport};
use crate::rng::PathBundle;
use crate::sde::{reflect_ball, Boundary};
use rayon::prelude::*;

/// Dynamics plus gradients for one first-variation run, on the absolute
/// time window `[t0, horizon]`.
pub struct FvProblem<'a> {
    pub dim: usize,
    pub drift: &'a (dyn Fn(f64, &[f64], &mut [f64]) + Sync),
    /// Row convention: `out[k*d + j] = d b_j / d x_k`.
    pub grad_drift: &'a (dyn Fn(f64, &[f64], &mut [f64]) + Sync),
    pub diffusion: &'a (dyn Fn(f64, &[f64], &mut [f64]) + Sync),
    /// `out[(k*d + j)*d + l] = d sigma_{jl} / d x_k`; `None` for
    /// state-independent diffusion.
    pub grad_diffusion: Option<&'a (dyn Fn(f64, &[f64], &mut [f64]) + Sync)>,
    pub initial: Vec<f64>,
    pub t0: f64,
    pub horizon: f64,
    pub steps: usize,
    pub boundary: Boundary,
    pub label: String,
}

/// Per-replicate results of a coupled `(X, Phi)` simulation.
#[derive(Debug, Clone)]
pub struct FirstVariationOutput {
    /// `m * d` terminal trajectory states.
    pub terminal: Vec<f64>,
    /// `m * d * d` terminal first-variation matrices.
    pub phi_terminal: Vec<f64>,
    /// `m * (steps+1) * d * d` when node recording is on.
    pub phi_nodes: Option<Vec<f64>>,
    /// `m * (steps+1) * d` trajectory nodes when recording is on.
    pub state_nodes: Option<Vec<f64>>,
    /// `m * d` accumulated `Σ Phi grad_f dt` when a running-cost gradient is
    /// supplied.
    pub running: Option<Vec<f64>>,
}

struct FvScratch {
    state: Vec<f64>,
    phi: Vec<f64>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    grad_b: Vec<f64>,
    grad_sigma: Vec<f64>,
    step_mat: Vec<f64>,
    phi_next: Vec<f64>,
    gf: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_fv_replicate(
    p: &FvProblem,
    grad_running: Option<&(dyn Fn(f64, &[f64], &mut [f64]) + Sync)>,
    gaussians: &[f64],
    s: &mut FvScratch,
    running_out: &mut [f64],
    mut phi_nodes: Option<&mut [f64]>,
    mut state_nodes: Option<&mut [f64]>,
    replicate: usize,
) -> Result<()> {
    let d = p.dim;
    let dt = (p.horizon - p.t0) / p.steps.max(1) as f64;
    let sqrt_dt = dt.sqrt();

    s.state.copy_from_slice(&p.initial);
    s.phi.fill(0.0);
    for i in 0..d {
        s.phi[i * d + i] = 1.0;
    }
    running_out.fill(0.0);
    if let Some(nodes) = phi_nodes.as_deref_mut() {
        nodes[..d * d].copy_from_slice(&s.phi);
    }
    if let Some(nodes) = state_nodes.as_deref_mut() {
        nodes[..d].copy_from_slice(&s.state);
    }

    for n in 0..p.steps {
        let t = p.t0 + n as f64 * dt;
        let g = &gaussians[n * d..(n + 1) * d];

        if let Some(gr) = grad_running {
            gr(t, &s.state, &mut s.gf);
            for i in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += s.phi[i * d + k] * s.gf[k];
                }
                running_out[i] += acc * dt;
            }
        }

        (p.drift)(t, &s.state, &mut s.drift);
        (p.diffusion)(t, &s.state, &mut s.sigma);
        (p.grad_drift)(t, &s.state, &mut s.grad_b);

        // Step matrix S = I + dt grad_b + sqrt(dt) grad_sigma . G.
        for k in 0..d {
            for j in 0..d {
                let mut v = dt * s.grad_b[k * d + j];
                if k == j {
                    v += 1.0;
                }
                s.step_mat[k * d + j] = v;
            }
        }
        if let Some(gs) = p.grad_diffusion {
            gs(t, &s.state, &mut s.grad_sigma);
            for k in 0..d {
                for j in 0..d {
                    let mut v = 0.0;
                    for l in 0..d {
                        v += s.grad_sigma[(k * d + j) * d + l] * g[l];
                    }
                    s.step_mat[k * d + j] += sqrt_dt * v;
                }
            }
        }

        // Phi <- Phi . S
        for i in 0..d {
            for j in 0..d {
                let mut v = 0.0;
                for k in 0..d {
                    v += s.phi[i * d + k] * s.step_mat[k * d + j];
                }
                s.phi_next[i * d + j] = v;
            }
        }
        std::mem::swap(&mut s.phi, &mut s.phi_next);

        for i in 0..d {
            let row = &s.sigma[i * d..(i + 1) * d];
            let mut noise = 0.0;
            for j in 0..d {
                noise += row[j] * g[j];
            }
            s.state[i] += dt * s.drift[i] + sqrt_dt * noise;
        }
        if let Boundary::ReflectingBall { radius } = p.boundary {
            reflect_ball(&mut s.state, radius);
        }

        if !s.state.iter().all(|v| v.is_finite()) || !s.phi.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState {
                label: p.label.clone(),
                step: n,
                replicate,
            });
        }
        if let Some(nodes) = phi_nodes.as_deref_mut() {
            nodes[(n + 1) * d * d..(n + 2) * d * d].copy_from_slice(&s.phi);
        }
        if let Some(nodes) = state_nodes.as_deref_mut() {
            nodes[(n + 1) * d..(n + 2) * d].copy_from_slice(&s.state);
        }
    }
    Ok(())
}

/// Simulates the coupled trajectory and first-variation chain for every
/// replicate of `paths`.
pub fn simulate_first_variation(
    p: &FvProblem,
    paths: &PathBundle,
    grad_running: Option<&(dyn Fn(f64, &[f64], &mut [f64]) + Sync)>,
    record_nodes: bool,
) -> Result<FirstVariationOutput> {
    let d = p.dim;
    if paths.dim() != d || paths.steps() != p.steps {
        return Err(Error::invalid("path bundle shape does not match the problem"));
    }
    if p.initial.len() != d {
        return Err(Error::invalid("initial condition dimension mismatch"));
    }
    if p.horizon < p.t0 {
        return Err(Error::invalid("window end precedes its start"));
    }

    let m = paths.replicates();
    let mut terminal = vec![0.0; m * d];
    let mut phi_terminal = vec![0.0; m * d * d];
    let mut running = vec![0.0; m * d];
    let node_len = (p.steps + 1) * d * d;
    let state_len = (p.steps + 1) * d;
    let mut phi_nodes = if record_nodes { vec![0.0; m * node_len] } else { Vec::new() };
    let mut state_nodes = if record_nodes { vec![0.0; m * state_len] } else { Vec::new() };

    let results: Vec<Result<()>> = terminal
        .par_chunks_exact_mut(d)
        .zip(phi_terminal.par_chunks_exact_mut(d * d))
        .zip(running.par_chunks_exact_mut(d))
        .enumerate()
        .map(|(r, ((term, phi_out), run_out))| {
            let mut scratch = FvScratch {
                state: vec![0.0; d],
                phi: vec![0.0; d * d],
                drift: vec![0.0; d],
                sigma: vec![0.0; d * d],
                grad_b: vec![0.0; d * d],
                grad_sigma: vec![0.0; d * d * d],
                step_mat: vec![0.0; d * d],
                phi_next: vec![0.0; d * d],
                gf: vec![0.0; d],
            };
            run_fv_replicate(
                p,
                grad_running,
                paths.replicate(r),
                &mut scratch,
                run_out,
                None,
                None,
                r,
            )?;
            term.copy_from_slice(&scratch.state);
            phi_out.copy_from_slice(&scratch.phi);
            Ok(())
        })
        .collect();
    for res in results {
        res?;
    }

    if record_nodes {
        for r in 0..m {
            let mut scratch = FvScratch {
                state: vec![0.0; d],
                phi: vec![0.0; d * d],
                drift: vec![0.0; d],
                sigma: vec![0.0; d * d],
                grad_b: vec![0.0; d * d],
                grad_sigma: vec![0.0; d * d * d],
                step_mat: vec![0.0; d * d],
                phi_next: vec![0.0; d * d],
                gf: vec![0.0; d],
            };
            let mut run_out = vec![0.0; d];
            run_fv_replicate(
                p,
                grad_running,
                paths.replicate(r),
                &mut scratch,
                &mut run_out,
                Some(&mut phi_nodes[r * node_len..(r + 1) * node_len]),
                Some(&mut state_nodes[r * state_len..(r + 1) * state_len]),
                r,
            )?;
        }
    }

    Ok(FirstVariationOutput {
        terminal,
        phi_terminal,
        phi_nodes: if record_nodes { Some(phi_nodes) } else { None },
        state_nodes: if record_nodes { Some(state_nodes) } else { None },
        running: if grad_running.is_some() { Some(running) } else { None },
    })
}

/// Pathwise estimate of `grad u(t0, y)`; one report per component.
#[derive(Debug, Clone)]
pub struct GradUEstimate {
    pub estimate: Vec<f64>,
    pub reports: Vec<EstimatorReport>,
}

/// Monte-Carlo average of `Phi_T grad_g(X_T) - Σ Phi grad_f dt` from
/// `(t0, y)`, with per-component confidence reports.
///
/// At `t0 = horizon` the window is empty and the estimate is `grad_g(y)`
/// exactly.
#[allow(clippy::too_many_arguments)]
pub fn grad_u_estimate(
    p: &FvProblem,
    grad_output: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    grad_running: Option<&(dyn Fn(f64, &[f64], &mut [f64]) + Sync)>,
    m: usize,
    seed: u64,
    query: u64,
    quantile: f64,
) -> Result<GradUEstimate> {
    let d = p.dim;
    if p.horizon == p.t0 {
        let mut g = vec![0.0; d];
        grad_output(&p.initial, &mut g);
        let reports = g
            .iter()
            .map(|&v| EstimatorReport {
                mean: v,
                variance: 0.0,
                half_width: 0.0,
                m,
            })
            .collect();
        return Ok(GradUEstimate { estimate: g, reports });
    }
    let paths = PathBundle::generate(seed, query, m, p.steps, d);
    let out = simulate_first_variation(p, &paths, grad_running, false)?;

    let mut per_component: Vec<Vec<f64>> = vec![vec![0.0; m]; d];
    let mut gg = vec![0.0; d];
    for r in 0..m {
        let x_t = &out.terminal[r * d..(r + 1) * d];
        let phi = &out.phi_terminal[r * d * d..(r + 1) * d * d];
        grad_output(x_t, &mut gg);
        for i in 0..d {
            let mut v = 0.0;
            for k in 0..d {
                v += phi[i * d + k] * gg[k];
            }
            if let Some(running) = &out.running {
                v -= running[r * d + i];
            }
            per_component[i][r] = v;
        }
    }
    let reports: Vec<EstimatorReport> = per_component
        .iter()
        .map(|samples| confidence_interval(samples, quantile))
        .collect::<Result<_>>()?;
    Ok(GradUEstimate {
        estimate: reports.iter().map(|r| r.mean).collect(),
        reports,
    })
}
