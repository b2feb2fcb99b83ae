//! Experiment orchestration: the offline build, the online sweep, single
//! queries and the oracle battery, with deterministic CSV emission.
//!
//! All floats are written with 17 significant digits so CSV outputs
//! round-trip losslessly and are byte-identical across reruns with the same
//! seeds.

use crate::basis_io::{load_basis, save_basis};
use crate::config::{ResolvedExperiment, TestBox};
use crate::cv::{controlled_estimate, ControlledEstimate, ReducedBasis};
use crate::error::{Error, Result};
use crate::estimators::confidence_interval;
use crate::greedy::{evaluate_basis, greedy_build, EvalRow, EvalSummaryRow, GreedyConfig, GreedyTrace};
use crate::params::ParameterPoint;
use crate::rng::{streams, PathBundle};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Lossless float formatting for CSV cells.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Runs `f` on a rayon pool with the configured worker count (0 = default).
pub fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub struct OfflineOutputs {
    pub manifest_path: PathBuf,
    pub trace_path: PathBuf,
    pub basis: ReducedBasis,
    pub trace: GreedyTrace,
}

/// Offline stage: sample the trial box, run the greedy selection, persist
/// the basis and the selection trace.
pub fn run_offline(exp: &ResolvedExperiment) -> Result<OfflineOutputs> {
    let trial = exp.parameter_box.sample(
        exp.raw.seed_trial,
        streams::TRIAL_SAMPLE_QUERY,
        exp.raw.trial_size,
    )?;
    let cfg = GreedyConfig {
        trial,
        small_trial_size: exp.raw.small_trial_size,
        criterion: exp.criterion,
        epsilon: exp.raw.epsilon,
        i_max: exp.raw.i_max,
        m_small: exp.raw.m_small,
        m_large: exp.m_large,
        seed_trial: exp.raw.seed_trial,
        seed_offline: exp.raw.seed_offline,
        lambda1_rule: exp.lambda1_rule,
        quantile: exp.raw.quantile,
    };
    let model = exp.model.as_ref();
    let (basis, trace) = with_pool(exp.raw.workers, || {
        greedy_build(model, exp.algorithm, &cfg)
    })??;

    std::fs::create_dir_all(&exp.out_dir)?;
    let manifest_path = save_basis(&basis, &exp.out_dir)?;
    let trace_path = exp.out_dir.join("trace.csv");
    std::fs::write(&trace_path, trace_csv(&trace, model.param_names()))?;
    Ok(OfflineOutputs {
        manifest_path,
        trace_path,
        basis,
        trace,
    })
}

fn trace_csv(trace: &GreedyTrace, names: &[&str]) -> String {
    let mut out = String::new();
    out.push_str("step");
    for n in names {
        let _ = write!(out, ",{n}");
    }
    out.push_str(",criterion_value,resid_min,resid_mean,resid_max,stopped\n");
    for s in &trace.steps {
        let _ = write!(out, "{}", s.basis_size);
        for v in s.selected.coords() {
            let _ = write!(out, ",{}", fmt_float(*v));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{}",
            fmt_float(s.criterion_value),
            fmt_float(s.resid_min),
            fmt_float(s.resid_mean),
            fmt_float(s.resid_max),
            s.stopped
        );
    }
    out
}

pub struct OnlineOutputs {
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
    pub rows: Vec<EvalRow>,
    pub summary: Vec<EvalSummaryRow>,
}

/// Online stage: load a basis, check it matches the configured model,
/// evaluate it over a fresh test sample and write the per-query and summary
/// tables.
pub fn run_online(exp: &ResolvedExperiment, basis_path: &Path) -> Result<OnlineOutputs> {
    let basis = load_basis(basis_path)?;
    run_online_with_basis(exp, &basis)
}

pub fn run_online_with_basis(exp: &ResolvedExperiment, basis: &ReducedBasis) -> Result<OnlineOutputs> {
    if basis.model != exp.descriptor {
        return Err(Error::BasisMismatch(format!(
            "basis was built for {:?}, configuration describes {:?}",
            basis.model, exp.descriptor
        )));
    }
    if basis.algorithm != exp.algorithm {
        return Err(Error::BasisMismatch(format!(
            "basis holds algorithm-{} elements, configuration asks for algorithm {}",
            basis.algorithm.index(),
            exp.algorithm.index()
        )));
    }
    let test_box = exp.test_parameter_box();
    let test = test_box.sample(
        exp.raw.seed_trial,
        streams::TEST_SAMPLE_QUERY,
        exp.test_size,
    )?;
    let model = exp.model.as_ref();
    let (rows, summary) = with_pool(exp.raw.workers, || {
        evaluate_basis(
            model,
            basis,
            &test,
            exp.raw.m_small,
            exp.raw.seed_online,
            exp.raw.quantile,
            exp.mu_mode,
        )
    })??;

    std::fs::create_dir_all(&exp.out_dir)?;
    let suffix = match exp.test_box {
        TestBox::Paper => "",
        TestBox::Wide => "_wide",
    };
    let results_path = exp.out_dir.join(format!("results{suffix}.csv"));
    let summary_path = exp.out_dir.join(format!("summary{suffix}.csv"));
    std::fs::write(&results_path, results_csv(&rows, model.param_names()))?;
    std::fs::write(&summary_path, summary_csv(&summary))?;
    Ok(OnlineOutputs {
        results_path,
        summary_path,
        rows,
        summary,
    })
}

fn results_csv(rows: &[EvalRow], names: &[&str]) -> String {
    let mut out = String::new();
    out.push_str("prefix");
    for n in names {
        let _ = write!(out, ",{n}");
    }
    out.push_str(",raw_variance,controlled_variance,relative_variance,mean,half_width,reduction_factor\n");
    for r in rows {
        let _ = write!(out, "{}", r.prefix);
        for v in r.lambda.coords() {
            let _ = write!(out, ",{}", fmt_float(*v));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{},{}",
            fmt_float(r.raw_variance),
            fmt_float(r.controlled_variance),
            fmt_float(r.relative_variance),
            fmt_float(r.mean),
            fmt_float(r.half_width),
            fmt_float(r.reduction_factor)
        );
    }
    out
}

fn summary_csv(rows: &[EvalSummaryRow]) -> String {
    let mut out = String::from(
        "prefix,var_min,var_mean,var_max,relvar_min,relvar_mean,relvar_max,reduction_min,reduction_mean,reduction_max\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.prefix,
            fmt_float(r.var_min),
            fmt_float(r.var_mean),
            fmt_float(r.var_max),
            fmt_float(r.relvar_min),
            fmt_float(r.relvar_mean),
            fmt_float(r.relvar_max),
            fmt_float(r.reduction_min),
            fmt_float(r.reduction_mean),
            fmt_float(r.reduction_max)
        );
    }
    out
}

pub struct SingleOutput {
    pub estimate: ControlledEstimate,
    pub extrapolating: bool,
}

/// One estimation at an explicit parameter vector, optionally controlled by
/// a stored basis. Points outside the configured box still run; the caller
/// is warned through `extrapolating`.
pub fn run_single(
    exp: &ResolvedExperiment,
    lambda: &ParameterPoint,
    basis_path: Option<&Path>,
    m_override: Option<usize>,
) -> Result<SingleOutput> {
    let m = m_override.unwrap_or(exp.raw.m_small);
    let model = exp.model.as_ref();
    let paths = PathBundle::generate(
        exp.raw.seed_online,
        streams::ONLINE_QUERY,
        m,
        model.steps(),
        model.state_dim(),
    );
    let extrapolating = !exp.parameter_box.contains(lambda);
    let estimate = match basis_path {
        Some(path) => {
            let basis = load_basis(path)?;
            if basis.model != exp.descriptor {
                return Err(Error::BasisMismatch(
                    "basis model does not match the configuration".into(),
                ));
            }
            with_pool(exp.raw.workers, || {
                controlled_estimate(model, &basis, lambda, &paths, exp.raw.quantile)
            })??
        }
        None => {
            let z = with_pool(exp.raw.workers, || {
                crate::cv::target_samples(model, lambda, &paths)
            })??;
            let raw = confidence_interval(&z, exp.raw.quantile)?;
            ControlledEstimate {
                report: raw,
                raw,
                mu: Vec::new(),
                diagnostics: crate::cv::EstimateDiagnostics {
                    solve: crate::cv::SolveDiagnostics {
                        condition: 0.0,
                        rank: 0,
                        truncated: 0,
                    },
                    clamp_rate: 0.0,
                    warnings: Vec::new(),
                },
            }
        }
    };
    Ok(SingleOutput {
        estimate,
        extrapolating,
    })
}

/// One oracle-battery row.
pub struct OracleCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Fast self-validation against closed forms; used by the `oracle-check`
/// subcommand.
pub fn oracle_checks() -> Vec<OracleCheck> {
    use crate::models::ou::{ou_exact_moments, OuModel};
    use crate::models::Model;
    use crate::oracles::{black_scholes_call, expm};
    use crate::pde::{solve_bs_crank_nicolson, solve_hookean_kolmogorov, GridField};
    use crate::sde::{reflect_ball, simulate};

    let mut checks = Vec::new();

    // Ornstein-Uhlenbeck terminal moments.
    {
        let model = OuModel {
            x0: 1.0,
            horizon: 1.0,
            steps: 100,
        };
        let lambda = ParameterPoint(vec![1.0, std::f64::consts::SQRT_2]);
        let spec = model.sde_spec(&lambda).unwrap();
        let paths = PathBundle::generate(424_242, 0, 20_000, 100, 1);
        let out = simulate(&spec, &paths, &[], false).unwrap();
        let rep = confidence_interval(&out.terminal, 1.96).unwrap();
        let (mean, var) = ou_exact_moments(1.0, std::f64::consts::SQRT_2, 1.0, 1.0);
        let mean_ok = (rep.mean - mean).abs() <= rep.half_width + 2.0 * spec.dt();
        let var_ok = (rep.variance - var).abs() <= 0.05 * var;
        checks.push(OracleCheck {
            name: "ou-terminal-moments",
            pass: mean_ok && var_ok,
            detail: format!(
                "mean {:.6} vs {:.6} (hw {:.6}), var {:.6} vs {:.6}",
                rep.mean, mean, rep.half_width, rep.variance, var
            ),
        });
    }

    // Crank-Nicolson against the closed-form call price.
    {
        let grid = solve_bs_crank_nicolson(&|_t: f64, _s: f64| 0.2, 100.0, 0.04, 1.0, 100, 300, 300.0)
            .unwrap();
        let got = grid.interpolate(0.0, 90.0, GridField::Value);
        let exact = black_scholes_call(90.0, 100.0, 0.04, 0.2, 1.0);
        let rel = (got - exact).abs() / exact;
        checks.push(OracleCheck {
            name: "crank-nicolson-call-price",
            pass: rel < 1e-2,
            detail: format!("price {got:.6} vs {exact:.6} (relative error {rel:.2e})"),
        });
    }

    // Exact Hookean solution against the matrix exponential.
    {
        let lambda = [0.4, 0.7, -0.3, -0.4];
        let hk = solve_hookean_kolmogorov(&lambda, 2, (0, 1), 1.0, 400).unwrap();
        // A(0) = exp(drift' T) A(T) exp(drift T) with drift = lambda - I.
        let drift_t = [lambda[0] - 1.0, lambda[2], lambda[1], lambda[3] - 1.0];
        let e = expm(&drift_t, 2);
        let a_t = hk.a_at_node(400);
        let mut tmp = [0.0; 4];
        let mut expect = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                tmp[i * 2 + j] = (0..2).map(|k| e[i * 2 + k] * a_t[k * 2 + j]).sum();
            }
        }
        let et = [e[0], e[2], e[1], e[3]];
        for i in 0..2 {
            for j in 0..2 {
                expect[i * 2 + j] = (0..2).map(|k| tmp[i * 2 + k] * et[k * 2 + j]).sum();
            }
        }
        let a0 = hk.a_at_node(0);
        let err = (0..4).map(|i| (a0[i] - expect[i]).abs()).fold(0.0, f64::max);
        checks.push(OracleCheck {
            name: "hookean-matrix-ode",
            pass: err < 1e-8,
            detail: format!("max entry error {err:.2e}"),
        });
    }

    // Radial reflection identities.
    {
        let mut x = [3.3, 0.0];
        reflect_ball(&mut x, 3.0);
        let a = (x[0] - 2.7).abs() < 1e-12;
        let mut y = [3.0, 0.0];
        let clamped = reflect_ball(&mut y, 3.0);
        let b = clamped && (y[0] - 3.0 * (1.0 - crate::sde::EPS_BOUNDARY)).abs() < 1e-12;
        checks.push(OracleCheck {
            name: "radial-reflection",
            pass: a && b,
            detail: format!("reflected {:?}, clamped {:?}", x, y),
        });
    }

    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    const OU_SMALL: &str = r#"
model = "ou"
algorithm = 1
criterion = "abs"
i_max = 3
m_small = 200
m_large = 2000
trial_size = 8
test_size = 6
small_trial_size = 3
steps = 20
horizon = 1.0
out_dir = "OVERRIDDEN"
box_active = ["theta", "sigma"]
box_lo = [0.5, 0.5]
box_hi = [1.5, 2.0]
"#;

    fn resolved_into(dir: &Path) -> ResolvedExperiment {
        let mut cfg = ExperimentConfig::from_toml(OU_SMALL).unwrap();
        cfg.out_dir = dir.to_string_lossy().into_owned();
        cfg.resolve().unwrap()
    }

    #[test]
    fn offline_then_online_produces_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let exp = resolved_into(dir.path());
        let off = run_offline(&exp).unwrap();
        assert!(off.manifest_path.exists());
        assert!(off.trace_path.exists());
        assert_eq!(off.basis.len(), 3);

        let on = run_online(&exp, &off.manifest_path).unwrap();
        assert!(on.results_path.exists());
        assert!(on.summary_path.exists());
        // prefixes 0..=3 per test point
        assert_eq!(on.rows.len(), 6 * 4);
        for s in &on.summary {
            assert!(s.var_min <= s.var_mean && s.var_mean <= s.var_max);
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let exp_a = resolved_into(dir_a.path());
        let exp_b = resolved_into(dir_b.path());
        let off_a = run_offline(&exp_a).unwrap();
        let off_b = run_offline(&exp_b).unwrap();
        let on_a = run_online(&exp_a, &off_a.manifest_path).unwrap();
        let on_b = run_online(&exp_b, &off_b.manifest_path).unwrap();
        for (a, b) in [
            (&off_a.trace_path, &off_b.trace_path),
            (&off_a.manifest_path, &off_b.manifest_path),
            (&on_a.results_path, &on_b.results_path),
            (&on_a.summary_path, &on_b.summary_path),
        ] {
            assert_eq!(
                std::fs::read(a).unwrap(),
                std::fs::read(b).unwrap(),
                "{} differs between reruns",
                a.display()
            );
        }
    }

    #[test]
    fn online_rejects_model_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let exp = resolved_into(dir.path());
        let off = run_offline(&exp).unwrap();
        let mut cfg2 = ExperimentConfig::from_toml(OU_SMALL).unwrap();
        cfg2.out_dir = dir.path().to_string_lossy().into_owned();
        cfg2.ou_x0 = 2.0;
        let exp2 = cfg2.resolve().unwrap();
        match run_online(&exp2, &off.manifest_path) {
            Err(Error::BasisMismatch(_)) => {}
            Err(other) => panic!("unexpected error {other:?}"),
            Ok(_) => panic!("mismatched basis was accepted"),
        }
    }

    #[test]
    fn single_query_warns_on_extrapolation() {
        let dir = tempfile::tempdir().unwrap();
        let exp = resolved_into(dir.path());
        let inside = ParameterPoint(vec![1.0, 1.0]);
        let outside = ParameterPoint(vec![9.0, 1.0]);
        assert!(!run_single(&exp, &inside, None, None).unwrap().extrapolating);
        assert!(run_single(&exp, &outside, None, None).unwrap().extrapolating);
    }

    #[test]
    fn oracle_battery_passes() {
        for check in oracle_checks() {
            assert!(check.pass, "{}: {}", check.name, check.detail);
        }
    }

    #[test]
    fn float_formatting_is_lossless_and_total() {
        for v in [1.0, -2.5e-300, 3.141592653589793, 1e308] {
            let s = fmt_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt_float(f64::INFINITY), "inf");
        assert_eq!(fmt_float(f64::NEG_INFINITY), "-inf");
    }
}
