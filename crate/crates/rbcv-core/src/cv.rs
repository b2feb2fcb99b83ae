//! Reduced-basis control variates: basis evaluation on shared paths,
//! covariance assembly, the SVD least-squares solve for the combination
//! coefficients, and controlled estimation.
//!
//! Two kinds of basis element exist:
//!
//! - *recycled* elements re-simulate a selected parameter on the query's
//!   Gaussians and subtract a stored high-accuracy mean
//!   (`Y_i = Z^{lambda_i} - E_large(Z^{lambda_i})`);
//! - *gradient* elements accumulate the Itô integral of a stored Kolmogorov
//!   gradient along the *queried* parameter's trajectory
//!   (`Y_i = integral of grad u^{lambda_i}(s, X_s) . sigma(s, X_s) dB_s`).
//!
//! The coefficients solve `C mu = b` with `C_{ij} = Cov_M(Y_i, Y_j)` and
//! `b_i = Cov_M(Y_i, Z)`; quasi-colinear elements make `C` ill-conditioned,
//! so the solve goes through an SVD pseudo-inverse with a relative cutoff
//! rather than a direct factorization.

use crate::error::{Error, Result};
use crate::estimators::{confidence_interval, empirical_cov, EstimatorReport};
use crate::models::{KolmogorovPayload, Model, ModelDescriptor};
use crate::params::ParameterPoint;
use crate::rng::PathBundle;
use crate::sde::{simulate, Integrand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

/// Relative singular-value cutoff of the covariance solve.
pub const SVD_RELATIVE_CUTOFF: f64 = 1e-10;

/// Fraction of clamped interpolation queries above which an evaluation is
/// flagged.
pub const CLAMP_WARN_RATE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Pathwise-recycled control variates (stored scalar means).
    Recycled,
    /// Kolmogorov-gradient stochastic-integral control variates.
    Gradient,
}

impl Algorithm {
    pub fn index(self) -> u8 {
        match self {
            Algorithm::Recycled => 1,
            Algorithm::Gradient => 2,
        }
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Algorithm::Recycled),
            2 => Ok(Algorithm::Gradient),
            other => Err(Error::invalid(format!("algorithm must be 1 or 2, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    Absolute,
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lambda1Rule {
    MaxVariance,
    MaxCorrelation,
}

/// The residual variance in the configured criterion's units: absolute, or
/// relative to the squared estimator mean. `0/0` counts as fully reduced.
pub fn criterion_value(criterion: Criterion, variance: f64, mean: f64) -> f64 {
    match criterion {
        Criterion::Absolute => variance,
        Criterion::Relative => relative_variance(variance, mean),
    }
}

/// `Var / E^2` with the `0/0` convention above.
pub fn relative_variance(variance: f64, mean: f64) -> f64 {
    if variance == 0.0 {
        0.0
    } else {
        variance / (mean * mean)
    }
}

/// Per-element stored offline data.
#[derive(Debug, Clone)]
pub enum ElementPayload {
    /// `E_{M_large}(Z^{lambda_i})`.
    RecycledMean(f64),
    Kolmogorov(KolmogorovPayload),
}

#[derive(Debug, Clone)]
pub struct BasisElement {
    pub lambda: ParameterPoint,
    pub payload: ElementPayload,
}

/// Creation metadata persisted with a basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisMeta {
    pub m_small: usize,
    pub m_large: usize,
    pub seed_trial: u64,
    pub seed_offline: u64,
    pub criterion: Criterion,
    pub lambda1_rule: Lambda1Rule,
}

/// Selected parameters plus their per-algorithm stored data.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    pub algorithm: Algorithm,
    pub model: ModelDescriptor,
    pub elements: Vec<BasisElement>,
    pub meta: BasisMeta,
    /// Optional covariance of the recycled elements on a dedicated offline
    /// stream, row-major `I x I`; enables the offline-reference solve mode.
    pub reference_cov: Option<Vec<f64>>,
}

impl ReducedBasis {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.elements.is_empty() {
            return Err(Error::invalid("a reduced basis needs at least one element"));
        }
        for (i, a) in self.elements.iter().enumerate() {
            for b in &self.elements[i + 1..] {
                if a.lambda == b.lambda {
                    return Err(Error::invalid(format!(
                        "selected parameters must be pairwise distinct ({:?} repeats)",
                        a.lambda
                    )));
                }
            }
        }
        for e in &self.elements {
            match (self.algorithm, &e.payload) {
                (Algorithm::Recycled, ElementPayload::RecycledMean(_)) => {}
                (Algorithm::Gradient, ElementPayload::Kolmogorov(_)) => {}
                _ => {
                    return Err(Error::invalid(
                        "element payload kind does not match the basis algorithm",
                    ))
                }
            }
        }
        if let Some(cov) = &self.reference_cov {
            if cov.len() != self.len() * self.len() {
                return Err(Error::invalid("reference covariance has wrong shape"));
            }
        }
        Ok(())
    }
}

/// Condition diagnostics of one covariance solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveDiagnostics {
    /// `sigma_max / sigma_min` over the retained singular values; infinite
    /// for a rank-zero system.
    pub condition: f64,
    pub rank: usize,
    /// Number of singular values dropped by the cutoff.
    pub truncated: usize,
}

/// Minimum-norm least-squares solve of `C mu = b` from an assembled system.
pub fn solve_mu_from_cov(c: &DMatrix<f64>, b: &DVector<f64>) -> Result<(Vec<f64>, SolveDiagnostics)> {
    let i = c.nrows();
    if i == 0 {
        return Ok((
            Vec::new(),
            SolveDiagnostics {
                condition: 0.0,
                rank: 0,
                truncated: 0,
            },
        ));
    }
    let svd = c.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        // All-zero elements: nothing to control, coefficient zero.
        return Ok((
            vec![0.0; i],
            SolveDiagnostics {
                condition: f64::INFINITY,
                rank: 0,
                truncated: i,
            },
        ));
    }
    let cutoff = SVD_RELATIVE_CUTOFF * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let sigma_min = svd
        .singular_values
        .iter()
        .cloned()
        .filter(|&s| s > cutoff)
        .fold(f64::INFINITY, f64::min);
    let mu = svd
        .solve(b, cutoff)
        .map_err(|e| Error::Solver(format!("SVD solve failed: {e}")))?;
    Ok((
        mu.iter().cloned().collect(),
        SolveDiagnostics {
            condition: if rank == 0 { f64::INFINITY } else { sigma_max / sigma_min },
            rank,
            truncated: i - rank,
        },
    ))
}

/// Assembles the empirical covariance system for basis outputs `ys` against
/// the target `z`.
pub fn assemble_cov(z: &[f64], ys: &[&[f64]]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let i = ys.len();
    let mut c = DMatrix::zeros(i, i);
    let mut b = DVector::zeros(i);
    for p in 0..i {
        for q in p..i {
            let v = empirical_cov(ys[p], ys[q])?;
            c[(p, q)] = v;
            c[(q, p)] = v;
        }
        b[p] = empirical_cov(ys[p], z)?;
    }
    Ok((c, b))
}

/// Variance-minimizing coefficients for `Var_M(z - mu . y)`.
///
/// Preconditions: `z.len() > ys.len() >= 1` (more replicates than elements).
pub fn solve_mu(z: &[f64], ys: &[&[f64]]) -> Result<(Vec<f64>, SolveDiagnostics)> {
    if !ys.is_empty() && z.len() <= ys.len() {
        return Err(Error::invalid(format!(
            "need more replicates ({}) than basis elements ({})",
            z.len(),
            ys.len()
        )));
    }
    for y in ys {
        if y.len() != z.len() {
            return Err(Error::LengthMismatch {
                left: y.len(),
                right: z.len(),
            });
        }
    }
    let (c, b) = assemble_cov(z, ys)?;
    solve_mu_from_cov(&c, &b)
}

/// `z - Σ mu_i y_i`, sample by sample.
pub fn residual_samples(z: &[f64], ys: &[&[f64]], mu: &[f64]) -> Vec<f64> {
    let mut r = z.to_vec();
    for (coeff, y) in mu.iter().zip(ys) {
        if *coeff != 0.0 {
            for (rm, ym) in r.iter_mut().zip(y.iter()) {
                *rm -= coeff * ym;
            }
        }
    }
    r
}

/// Diagnostics of one controlled estimation.
#[derive(Debug, Clone)]
pub struct EstimateDiagnostics {
    pub solve: SolveDiagnostics,
    /// Fraction of clamped grid-interpolation queries (gradient bases only).
    pub clamp_rate: f64,
    pub warnings: Vec<String>,
}

/// A controlled estimate together with the raw one for reduction reporting.
#[derive(Debug, Clone)]
pub struct ControlledEstimate {
    /// Report on `Z - Σ mu_i Y_i`.
    pub report: EstimatorReport,
    /// Report on `Z` alone, from the same paths.
    pub raw: EstimatorReport,
    pub mu: Vec<f64>,
    pub diagnostics: EstimateDiagnostics,
}

impl ControlledEstimate {
    /// Raw-over-controlled variance; infinite when the control is exact.
    pub fn reduction_factor(&self) -> f64 {
        if self.report.variance == 0.0 {
            if self.raw.variance == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            self.raw.variance / self.report.variance
        }
    }

    pub fn relative_variance(&self) -> f64 {
        relative_variance(self.report.variance, self.report.mean)
    }
}

/// Simulates the target payoffs `Z^lambda` on the given paths.
pub fn target_samples(
    model: &dyn Model,
    lambda: &ParameterPoint,
    paths: &PathBundle,
) -> Result<Vec<f64>> {
    let spec = model.sde_spec(lambda)?;
    let out = simulate(&spec, paths, &[], false)?;
    Ok((0..paths.replicates())
        .map(|r| model.payoff(out.terminal_state(r, spec.dim)))
        .collect())
}

/// Evaluates one recycled element on the given paths: simulate the element's
/// parameter on the *shared* Gaussians and subtract the stored offline mean.
pub fn eval_basis_recycled(
    model: &dyn Model,
    basis: &ReducedBasis,
    index: usize,
    paths: &PathBundle,
) -> Result<Vec<f64>> {
    if basis.algorithm != Algorithm::Recycled {
        return Err(Error::invalid("basis does not hold recycled elements"));
    }
    let element = basis
        .elements
        .get(index)
        .ok_or_else(|| Error::invalid(format!("element index {index} out of range")))?;
    let mean = match element.payload {
        ElementPayload::RecycledMean(m) => m,
        _ => return Err(Error::invalid("payload kind mismatch")),
    };
    let mut samples = target_samples(model, &element.lambda, paths)?;
    for s in samples.iter_mut() {
        *s -= mean;
    }
    Ok(samples)
}

/// Evaluates one gradient element along the queried parameter's trajectory:
/// the discretized Itô integral of the stored gradient against the queried
/// diffusion, on the shared Gaussians.
pub fn eval_basis_gradient(
    model: &dyn Model,
    basis: &ReducedBasis,
    index: usize,
    lambda: &ParameterPoint,
    paths: &PathBundle,
) -> Result<(Vec<f64>, EstimateDiagnostics)> {
    if basis.algorithm != Algorithm::Gradient {
        return Err(Error::invalid("basis does not hold gradient elements"));
    }
    if index >= basis.len() {
        return Err(Error::invalid(format!("element index {index} out of range")));
    }
    let (_z, mut ys, diag) = eval_gradient_batch(
        model,
        basis,
        lambda,
        paths,
        std::slice::from_ref(&index),
    )?;
    Ok((ys.pop().expect("one integrand"), diag))
}

/// One trajectory pass at `lambda` accumulating the selected elements'
/// stochastic integrals; returns the target payoffs and one sample vector
/// per requested element.
fn eval_gradient_batch(
    model: &dyn Model,
    basis: &ReducedBasis,
    lambda: &ParameterPoint,
    paths: &PathBundle,
    indices: &[usize],
) -> Result<(Vec<f64>, Vec<Vec<f64>>, EstimateDiagnostics)> {
    let payloads: Vec<&KolmogorovPayload> = indices
        .iter()
        .map(|&i| match &basis.elements[i].payload {
            ElementPayload::Kolmogorov(p) => Ok(p),
            _ => Err(Error::invalid("payload kind mismatch")),
        })
        .collect::<Result<_>>()?;

    // Snapshot clamp counters around the pass.
    for p in &payloads {
        if let KolmogorovPayload::Grid(g) = p {
            g.reset_clamp_stats();
        }
    }

    let integrands: Vec<Box<dyn Fn(f64, &[f64], &mut [f64]) + Sync>> = payloads
        .iter()
        .map(|p| model.gradient_integrand(p))
        .collect::<Result<_>>()?;
    let integrand_refs: Vec<Integrand> = integrands.iter().map(|b| b.as_ref() as Integrand).collect();

    let spec = model.sde_spec(lambda)?;
    let out = simulate(&spec, paths, &integrand_refs, false)?;
    let z = (0..paths.replicates())
        .map(|r| model.payoff(out.terminal_state(r, spec.dim)))
        .collect();

    let mut clamped = 0u64;
    let mut queries = 0u64;
    for p in &payloads {
        if let KolmogorovPayload::Grid(g) = p {
            let (c, q) = g.clamp_stats();
            clamped += c;
            queries += q;
        }
    }
    let clamp_rate = if queries > 0 {
        clamped as f64 / queries as f64
    } else {
        0.0
    };
    let mut warnings = Vec::new();
    if clamp_rate > CLAMP_WARN_RATE {
        warnings.push(format!(
            "interpolation clamped {:.1}% of queries; trajectories leave the stored grid",
            100.0 * clamp_rate
        ));
    }
    Ok((
        z,
        out.integrals,
        EstimateDiagnostics {
            solve: SolveDiagnostics {
                condition: 0.0,
                rank: 0,
                truncated: 0,
            },
            clamp_rate,
            warnings,
        },
    ))
}

/// Evaluates the target and the whole basis on shared paths.
///
/// Returns `(z, ys, diagnostics)`; for a recycled basis each element costs
/// one extra simulation, for a gradient basis everything comes from a single
/// trajectory pass.
pub fn eval_basis_all(
    model: &dyn Model,
    basis: &ReducedBasis,
    lambda: &ParameterPoint,
    paths: &PathBundle,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, EstimateDiagnostics)> {
    match basis.algorithm {
        Algorithm::Recycled => {
            let z = target_samples(model, lambda, paths)?;
            let ys: Vec<Vec<f64>> = (0..basis.len())
                .map(|i| eval_basis_recycled(model, basis, i, paths))
                .collect::<Result<_>>()?;
            Ok((
                z,
                ys,
                EstimateDiagnostics {
                    solve: SolveDiagnostics {
                        condition: 0.0,
                        rank: 0,
                        truncated: 0,
                    },
                    clamp_rate: 0.0,
                    warnings: Vec::new(),
                },
            ))
        }
        Algorithm::Gradient => {
            let indices: Vec<usize> = (0..basis.len()).collect();
            eval_gradient_batch(model, basis, lambda, paths, &indices)
        }
    }
}

/// Full controlled estimation for one queried parameter: evaluate everything
/// on the shared paths, solve for the coefficients, report on the residual.
///
/// An empty basis degrades to the raw Monte-Carlo report.
pub fn controlled_estimate(
    model: &dyn Model,
    basis: &ReducedBasis,
    lambda: &ParameterPoint,
    paths: &PathBundle,
    quantile: f64,
) -> Result<ControlledEstimate> {
    if basis.is_empty() {
        let z = target_samples(model, lambda, paths)?;
        let raw = confidence_interval(&z, quantile)?;
        return Ok(ControlledEstimate {
            report: raw,
            raw,
            mu: Vec::new(),
            diagnostics: EstimateDiagnostics {
                solve: SolveDiagnostics {
                    condition: 0.0,
                    rank: 0,
                    truncated: 0,
                },
                clamp_rate: 0.0,
                warnings: Vec::new(),
            },
        });
    }
    let (z, ys, mut diagnostics) = eval_basis_all(model, basis, lambda, paths)?;
    let y_refs: Vec<&[f64]> = ys.iter().map(|y| y.as_slice()).collect();
    let (mu, solve) = solve_mu(&z, &y_refs)?;
    diagnostics.solve = solve;
    let residual = residual_samples(&z, &y_refs, &mu);
    Ok(ControlledEstimate {
        report: confidence_interval(&residual, quantile)?,
        raw: confidence_interval(&z, quantile)?,
        mu,
        diagnostics,
    })
}

/// Coefficient-solve source for online sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuMode {
    /// Assemble the covariance on the online paths (default).
    OnlineAssembly,
    /// Reuse the covariance stored offline in the manifest; only the
    /// right-hand side comes from the online paths.
    OfflineReference,
}

impl Default for MuMode {
    fn default() -> Self {
        MuMode::OnlineAssembly
    }
}

/// Online query session for a recycled basis under the seed-reset
/// discipline: all queries share one path bundle, so the basis outputs and
/// the covariance matrix are parameter-independent. They are evaluated and
/// factorized once; each query only simulates its own target.
pub struct RecycledOnlineSession<'a> {
    model: &'a dyn Model,
    basis: &'a ReducedBasis,
    paths: &'a PathBundle,
    ys: Vec<Vec<f64>>,
    cov: DMatrix<f64>,
    /// SVD factorizations of the leading principal blocks; entry `i` solves
    /// the `i`-element prefix system (none for the empty prefix).
    prefix: Vec<Option<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>>>,
    element_evals: AtomicU64,
}

impl<'a> RecycledOnlineSession<'a> {
    pub fn new(
        model: &'a dyn Model,
        basis: &'a ReducedBasis,
        paths: &'a PathBundle,
        mode: MuMode,
    ) -> Result<Self> {
        if basis.algorithm != Algorithm::Recycled {
            return Err(Error::invalid("online sessions cache recycled bases only"));
        }
        basis.validate()?;
        let ys: Vec<Vec<f64>> = (0..basis.len())
            .map(|i| eval_basis_recycled(model, basis, i, paths))
            .collect::<Result<_>>()?;
        let element_evals = AtomicU64::new(basis.len() as u64);

        let cov = match mode {
            MuMode::OnlineAssembly => {
                let i = basis.len();
                let mut c = DMatrix::zeros(i, i);
                for p in 0..i {
                    for q in p..i {
                        let v = empirical_cov(&ys[p], &ys[q])?;
                        c[(p, q)] = v;
                        c[(q, p)] = v;
                    }
                }
                c
            }
            MuMode::OfflineReference => {
                let flat = basis.reference_cov.as_ref().ok_or_else(|| {
                    Error::invalid("basis carries no offline reference covariance")
                })?;
                DMatrix::from_row_slice(basis.len(), basis.len(), flat)
            }
        };

        let prefix = (0..=basis.len())
            .map(|i| {
                if i == 0 {
                    None
                } else {
                    Some(cov.view((0, 0), (i, i)).into_owned().svd(true, true))
                }
            })
            .collect();

        Ok(RecycledOnlineSession {
            model,
            basis,
            paths,
            ys,
            cov,
            prefix,
            element_evals,
        })
    }

    /// Total element simulations since construction; stays at the basis size
    /// however many queries run, which is the observable form of the
    /// factorize-once reuse.
    pub fn element_evaluations(&self) -> u64 {
        self.element_evals.load(Ordering::Relaxed)
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn estimate_for_prefix(
        &self,
        z: &[f64],
        b_full: &DVector<f64>,
        i: usize,
        quantile: f64,
        raw: EstimatorReport,
    ) -> Result<ControlledEstimate> {
        let (mu, solve) = if i == 0 {
            (
                Vec::new(),
                SolveDiagnostics {
                    condition: 0.0,
                    rank: 0,
                    truncated: 0,
                },
            )
        } else {
            let svd = self.prefix[i].as_ref().expect("non-empty prefix");
            let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
            if sigma_max == 0.0 {
                (
                    vec![0.0; i],
                    SolveDiagnostics {
                        condition: f64::INFINITY,
                        rank: 0,
                        truncated: i,
                    },
                )
            } else {
                let cutoff = SVD_RELATIVE_CUTOFF * sigma_max;
                let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
                let sigma_min = svd
                    .singular_values
                    .iter()
                    .cloned()
                    .filter(|&s| s > cutoff)
                    .fold(f64::INFINITY, f64::min);
                let b_head = DVector::from_iterator(i, b_full.iter().take(i).cloned());
                let mu = svd
                    .solve(&b_head, cutoff)
                    .map_err(|e| Error::Solver(format!("SVD solve failed: {e}")))?;
                (
                    mu.iter().cloned().collect(),
                    SolveDiagnostics {
                        condition: if rank == 0 {
                            f64::INFINITY
                        } else {
                            sigma_max / sigma_min
                        },
                        rank,
                        truncated: i - rank,
                    },
                )
            }
        };
        let y_refs: Vec<&[f64]> = self.ys[..i].iter().map(|y| y.as_slice()).collect();
        let residual = residual_samples(z, &y_refs, &mu);
        Ok(ControlledEstimate {
            report: confidence_interval(&residual, quantile)?,
            raw,
            mu,
            diagnostics: EstimateDiagnostics {
                solve,
                clamp_rate: 0.0,
                warnings: Vec::new(),
            },
        })
    }

    /// Controlled estimate with the full basis.
    pub fn query(&self, lambda: &ParameterPoint, quantile: f64) -> Result<ControlledEstimate> {
        let z = target_samples(self.model, lambda, self.paths)?;
        let raw = confidence_interval(&z, quantile)?;
        let b = self.rhs(&z)?;
        self.estimate_for_prefix(&z, &b, self.basis.len(), quantile, raw)
    }

    /// Controlled estimates for every basis prefix `0..=I` (the truncated
    /// bases used to trace reduction against basis size).
    ///
    /// Each prefix keeps the previous prefix's fit when the fresh solve is
    /// worse (possible under the SVD cutoff for quasi-colinear elements),
    /// so the variance curve is non-increasing by construction.
    pub fn query_prefixes(
        &self,
        lambda: &ParameterPoint,
        quantile: f64,
    ) -> Result<Vec<ControlledEstimate>> {
        let z = target_samples(self.model, lambda, self.paths)?;
        let raw = confidence_interval(&z, quantile)?;
        let b = self.rhs(&z)?;
        let mut out: Vec<ControlledEstimate> = Vec::with_capacity(self.basis.len() + 1);
        for i in 0..=self.basis.len() {
            let mut est = self.estimate_for_prefix(&z, &b, i, quantile, raw)?;
            if let Some(prev) = out.last() {
                if prev.report.variance < est.report.variance {
                    est = prev.clone();
                    est.mu.resize(i, 0.0);
                }
            }
            out.push(est);
        }
        Ok(out)
    }

    fn rhs(&self, z: &[f64]) -> Result<DVector<f64>> {
        let mut b = DVector::zeros(self.basis.len());
        for (i, y) in self.ys.iter().enumerate() {
            b[i] = empirical_cov(y, z)?;
        }
        Ok(b)
    }
}

/// Prefix estimates for a gradient basis; the covariance depends on the
/// queried parameter, so everything is assembled per query from one
/// trajectory pass. As in [`RecycledOnlineSession::query_prefixes`], each
/// prefix keeps the previous fit when the fresh truncated solve is worse.
pub fn gradient_query_prefixes(
    model: &dyn Model,
    basis: &ReducedBasis,
    lambda: &ParameterPoint,
    paths: &PathBundle,
    quantile: f64,
) -> Result<Vec<ControlledEstimate>> {
    let (z, ys, diag) = eval_basis_all(model, basis, lambda, paths)?;
    let raw = confidence_interval(&z, quantile)?;
    let y_refs: Vec<&[f64]> = ys.iter().map(|y| y.as_slice()).collect();
    let (c, b) = assemble_cov(&z, &y_refs)?;
    let mut out: Vec<ControlledEstimate> = Vec::with_capacity(basis.len() + 1);
    for i in 0..=basis.len() {
        let (mu, solve) = solve_mu_from_cov(
            &c.view((0, 0), (i, i)).into_owned(),
            &DVector::from_iterator(i, b.iter().take(i).cloned()),
        )?;
        let residual = residual_samples(&z, &y_refs[..i], &mu);
        let mut est = ControlledEstimate {
            report: confidence_interval(&residual, quantile)?,
            raw,
            mu,
            diagnostics: EstimateDiagnostics {
                solve,
                clamp_rate: diag.clamp_rate,
                warnings: diag.warnings.clone(),
            },
        };
        if let Some(prev) = out.last() {
            if prev.report.variance < est.report.variance {
                est = prev.clone();
                est.mu.resize(i, 0.0);
            }
        }
        out.push(est);
    }
    Ok(out)
}
