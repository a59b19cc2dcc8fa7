//! Command implementations and exit-code policy.
//!
//! Exit contract: 0 success, 2 condition-failure (mu-check below threshold),
//! 3 tolerance-failure (simulation ran but missed its mode's acceptance
//! tolerance; files are still written), 64 usage/validation, 65 runtime.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use gramstab_core::bilinear::{
    rate_and_prefactor, sample_perturbed_state, simulate_bilinear, NonlinearRunConfig,
};
use gramstab_core::cost::{cost_scaling_experiment, min_energy_control, phi21_target, SteeringProblem};
use gramstab_core::export::{self, Provenance, TrajectoryExtras};
use gramstab_core::feedback::{certify_decay, costate_oracle, simulate_linear, Integrator};
use gramstab_core::finite_time::{
    build_schedule, simulate_finite_time, stage_bound_audit, DtRule, ScheduleRule, StageMode,
};
use gramstab_core::gramian::{build_gramian, lambda_scaling_scan};
use gramstab_core::spectral::{build_coupling, mu_condition_check, DipoleProfile, SobolevWeights};

use crate::config::ExperimentConfig;

pub enum Outcome {
    Success,
    /// Exit 2: the checked condition does not hold (not an error).
    ConditionFailure(String),
    /// Exit 3: outputs written, tolerance missed.
    ToleranceFailure(String),
}

pub enum CliFailure {
    /// Exit 64.
    Usage(String),
    /// Exit 65.
    Runtime(String),
}

impl From<gramstab_core::Error> for CliFailure {
    fn from(e: gramstab_core::Error) -> Self {
        CliFailure::Runtime(e.to_string())
    }
}

type CmdResult = Result<Outcome, CliFailure>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SimulateMode {
    Linear,
    Oracle,
    Bilinear,
    #[value(name = "finite-time")]
    FiniteTime,
}

fn ensure_out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliFailure> {
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliFailure::Runtime(format!("cannot create output dir: {e}")))?;
    Ok(cfg.output_dir.clone())
}

fn parse_profile(cfg: &ExperimentConfig) -> Result<DipoleProfile, CliFailure> {
    DipoleProfile::parse(&cfg.mu_id).map_err(|e| CliFailure::Usage(e.to_string()))
}

fn validate(cfg: &ExperimentConfig) -> Result<(), CliFailure> {
    cfg.validate_common().map_err(CliFailure::Usage)
}

/// The deterministic bench state `Phi^2_1 + 0.3 Phi^1_2` used by the linear
/// and staged modes.
fn bench_state(n: usize) -> DVector<f64> {
    let mut y = DVector::zeros(2 * n);
    y[1] = 1.0;
    y[2] = 0.3;
    y
}

fn write_table_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliFailure> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliFailure::Runtime(format!("serialize: {e}")))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliFailure::Runtime(format!("write {}: {e}", path.display())))?;
    Ok(())
}

/// JSON report tables carry the provenance wrapper so every output file
/// embeds the tool version and config hash.
#[derive(Serialize)]
struct TableFile<R: Serialize> {
    version: String,
    config_sha256: String,
    rows: Vec<R>,
}

fn table_file<R: Serialize>(prov: &Provenance, rows: Vec<R>) -> TableFile<R> {
    TableFile {
        version: prov.version.clone(),
        config_sha256: prov.config_sha256.clone(),
        rows,
    }
}

// ---------------------------------------------------------------------------
// mu-check
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct MuCheckSummary {
    mu_id: String,
    n_modes: usize,
    min_k3_abs_bk: f64,
    argmin_k: usize,
    threshold: f64,
    passed: bool,
    version: String,
    config_sha256: String,
}

pub fn cmd_mu_check(cfg: &ExperimentConfig) -> CmdResult {
    validate(cfg)?;
    let profile = parse_profile(cfg)?;
    let out = ensure_out_dir(cfg)?;
    let prov = Provenance::new(cfg.sha256());
    let coupling = build_coupling(&profile, cfg.n_modes)?;
    let report = mu_condition_check(&coupling);
    match cfg.format.as_str() {
        "json" => {
            #[derive(Serialize)]
            struct Row {
                k: usize,
                k3_abs_bk: f64,
            }
            let rows: Vec<Row> = report
                .rows
                .iter()
                .map(|(k, v)| Row { k: *k, k3_abs_bk: *v })
                .collect();
            write_table_json(&out.join("mu_check.json"), &table_file(&prov, rows))?;
        }
        _ => export::write_mu_check_csv(&out.join("mu_check.csv"), &prov, &report.rows)?,
    }
    let passed = report.min_value > cfg.mu_threshold;
    write_table_json(
        &out.join("mu_check_summary.json"),
        &MuCheckSummary {
            mu_id: cfg.mu_id.clone(),
            n_modes: cfg.n_modes,
            min_k3_abs_bk: report.min_value,
            argmin_k: report.argmin_k,
            threshold: cfg.mu_threshold,
            passed,
            version: prov.version.clone(),
            config_sha256: prov.config_sha256.clone(),
        },
    )?;
    println!(
        "mu-check {}: min k^3 |b_k| = {:.6e} at k = {} (threshold {:.3e})",
        cfg.mu_id, report.min_value, report.argmin_k, cfg.mu_threshold
    );
    if passed {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::ConditionFailure(format!(
            "min k^3 |b_k| = {:.6e} <= threshold {:.3e}",
            report.min_value, cfg.mu_threshold
        )))
    }
}

// ---------------------------------------------------------------------------
// gramian
// ---------------------------------------------------------------------------

pub fn cmd_gramian(cfg: &ExperimentConfig) -> CmdResult {
    validate(cfg)?;
    let profile = parse_profile(cfg)?;
    let out = ensure_out_dir(cfg)?;
    let prov = Provenance::new(cfg.sha256());
    let coupling = build_coupling(&profile, cfg.n_modes)?;
    let q = build_gramian(&coupling, cfg.lambda)?;
    export::write_coupling_csv(&out.join("coupling.csv"), &prov, &coupling)?;
    export::write_gramian(
        &out.join("gramian.csv"),
        &out.join("gramian.json"),
        &prov,
        &q,
        &cfg.mu_id,
    )?;
    println!(
        "gramian lambda={} N={}: sigma_min={:.6e} sigma_max={:.6e}",
        cfg.lambda, cfg.n_modes, q.sigma_min, q.sigma_max
    );
    Ok(Outcome::Success)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(cfg: &ExperimentConfig, mode: SimulateMode) -> CmdResult {
    validate(cfg)?;
    let profile = parse_profile(cfg)?;
    let out = ensure_out_dir(cfg)?;
    let prov = Provenance::new(cfg.sha256());
    let coupling = build_coupling(&profile, cfg.n_modes)?;

    match mode {
        SimulateMode::Linear | SimulateMode::Oracle => {
            let q = build_gramian(&coupling, cfg.lambda)?;
            let y0 = bench_state(cfg.n_modes);
            let (traj, tolerance) = match mode {
                SimulateMode::Oracle => (
                    costate_oracle(&y0, &q, &coupling, cfg.horizon, cfg.dt)?,
                    1e-10,
                ),
                _ => {
                    let integrator = match cfg.integrator.as_str() {
                        "expm" => Integrator::Expm,
                        _ => Integrator::Rk4,
                    };
                    let tol = if integrator == Integrator::Expm { 1e-9 } else { 1e-5 };
                    (
                        simulate_linear(&y0, &q, &coupling, cfg.horizon, cfg.dt, integrator)?,
                        tol,
                    )
                }
            };
            let cert = certify_decay(&traj, &q)?;
            export::write_trajectory_csv(
                &out.join("trajectory.csv"),
                &prov,
                &traj,
                TrajectoryExtras::None,
            )?;
            export::write_certificate_json(
                &out.join("certificate.json"),
                &prov,
                cfg.lambda,
                cfg.n_modes,
                &cert,
            )?;
            println!(
                "simulate {}: identity violation {:.3e} (tolerance {:.1e})",
                traj.meta.integrator, cert.max_identity_violation, tolerance
            );
            if cert.max_identity_violation <= tolerance {
                Ok(Outcome::Success)
            } else {
                Ok(Outcome::ToleranceFailure(format!(
                    "identity violation {:.3e} > {tolerance:.1e}",
                    cert.max_identity_violation
                )))
            }
        }
        SimulateMode::Bilinear => {
            if !(0.0 < cfg.lambda_hat && cfg.lambda_hat < cfg.lambda) {
                return Err(CliFailure::Usage(format!(
                    "need 0 < lambda_hat < lambda, got {} vs {}",
                    cfg.lambda_hat, cfg.lambda
                )));
            }
            if !(cfg.epsilon > 0.0) {
                return Err(CliFailure::Usage("epsilon must be positive".into()));
            }
            let q = build_gramian(&coupling, cfg.lambda)?;
            // the splitting resolves the fastest retained rotation; clamp and say so
            let dt_bound = (0.1 / coupling.omega_max()).min(1e-2);
            let dt = if cfg.dt > dt_bound {
                println!("note: bilinear dt clamped from {} to {dt_bound:.3e}", cfg.dt);
                dt_bound
            } else {
                cfg.dt
            };
            let run_cfg = NonlinearRunConfig {
                epsilon: cfg.epsilon,
                lambda: cfg.lambda,
                lambda_hat: cfg.lambda_hat,
                horizon: cfg.horizon,
                dt,
                n_modes: cfg.n_modes,
                normalize: false,
            };
            let weights = SobolevWeights::new(cfg.n_modes)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let y0 = sample_perturbed_state(cfg.n_modes, cfg.epsilon, &weights, &mut rng)?;
            let run = simulate_bilinear(&y0, &run_cfg, &q, &coupling)?;
            let (rate, prefactor) = rate_and_prefactor(&run, cfg.lambda_hat, cfg.horizon);
            export::write_trajectory_csv(
                &out.join("trajectory.csv"),
                &prov,
                &run.traj,
                TrajectoryExtras::Bilinear(&run),
            )?;
            #[derive(Serialize)]
            struct BilinearCertificate {
                lambda: f64,
                lambda_hat: f64,
                #[serde(rename = "N")]
                n_modes: usize,
                epsilon: f64,
                seed: u64,
                max_l2_drift: f64,
                fitted_rate: Option<f64>,
                prefactor_c: f64,
                version: String,
                config_sha256: String,
            }
            write_table_json(
                &out.join("bilinear_certificate.json"),
                &BilinearCertificate {
                    lambda: cfg.lambda,
                    lambda_hat: cfg.lambda_hat,
                    n_modes: cfg.n_modes,
                    epsilon: cfg.epsilon,
                    seed: cfg.seed,
                    max_l2_drift: run.max_l2_drift,
                    fitted_rate: rate,
                    prefactor_c: prefactor,
                    version: prov.version.clone(),
                    config_sha256: prov.config_sha256.clone(),
                },
            )?;
            println!(
                "simulate bilinear: L2 drift {:.3e}, fitted rate {:?}, C {:.3}",
                run.max_l2_drift, rate, prefactor
            );
            if run.max_l2_drift <= 1e-8 {
                Ok(Outcome::Success)
            } else {
                Ok(Outcome::ToleranceFailure(format!(
                    "L2 drift {:.3e} > 1e-8",
                    run.max_l2_drift
                )))
            }
        }
        SimulateMode::FiniteTime => {
            let schedule = build_schedule(
                cfg.horizon,
                cfg.n_stages,
                &ScheduleRule::default(),
                cfg.lambda_cap,
                cfg.gamma,
            )
            .map_err(|e| CliFailure::Usage(e.to_string()))?;
            let y0 = bench_state(cfg.n_modes);
            let run =
                simulate_finite_time(&y0, &schedule, &coupling, &DtRule::default(), StageMode::Oracle)?;
            let audit = stage_bound_audit(&run.report);
            export::write_trajectory_csv(
                &out.join("trajectory.csv"),
                &prov,
                &run.traj,
                TrajectoryExtras::Stage(&run.stage_of_sample),
            )?;
            export::write_stage_csv(&out.join("stage_report.csv"), &prov, &run, &audit)?;
            #[derive(Serialize)]
            struct StageSummary {
                #[serde(rename = "N")]
                n_modes: usize,
                n_stages: usize,
                lambda_cap: f64,
                gamma: f64,
                gamma_warning: bool,
                c_state: f64,
                c_control: f64,
                ln_initial: f64,
                ln_final: f64,
                max_identity_violation: f64,
                regularized_stages: Vec<usize>,
                version: String,
                config_sha256: String,
            }
            let max_violation = run
                .report
                .stages
                .iter()
                .map(|s| s.identity_violation)
                .fold(0.0f64, f64::max);
            write_table_json(
                &out.join("stage_audit.json"),
                &StageSummary {
                    n_modes: cfg.n_modes,
                    n_stages: cfg.n_stages,
                    lambda_cap: cfg.lambda_cap,
                    gamma: cfg.gamma,
                    gamma_warning: schedule.gamma_warning,
                    c_state: audit.c_state,
                    c_control: audit.c_control,
                    ln_initial: run.report.initial_ln_norm,
                    ln_final: run.report.final_ln_norm,
                    max_identity_violation: max_violation,
                    regularized_stages: run
                        .report
                        .stages
                        .iter()
                        .filter(|s| s.regularized)
                        .map(|s| s.n)
                        .collect(),
                    version: prov.version.clone(),
                    config_sha256: prov.config_sha256.clone(),
                },
            )?;
            let knots_decreasing = run
                .report
                .stages
                .windows(2)
                .all(|w| w[1].ln_ynorm < w[0].ln_ynorm)
                && run.report.final_ln_norm < run.report.stages.last().unwrap().ln_ynorm;
            println!(
                "simulate finite-time: ln||y|| {:.3} -> {:.3}, max stage violation {:.3e}",
                run.report.initial_ln_norm, run.report.final_ln_norm, max_violation
            );
            if max_violation <= 1e-10 && knots_decreasing {
                Ok(Outcome::Success)
            } else {
                Ok(Outcome::ToleranceFailure(format!(
                    "stage violation {max_violation:.3e} or non-decreasing knots"
                )))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// cost
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CostSummary {
    slopes_ln_cost_vs_inv_t: Vec<(usize, f64)>,
    failed_cells: usize,
    note: String,
    version: String,
    config_sha256: String,
}

pub fn cmd_cost(cfg: &ExperimentConfig) -> CmdResult {
    validate(cfg)?;
    if cfg.cost_n_modes.is_empty() || cfg.cost_horizons.is_empty() {
        return Err(CliFailure::Usage("empty cost grid".into()));
    }
    if cfg.cost_n_modes.iter().any(|&n| n < 2) {
        return Err(CliFailure::Usage("cost grid needs n >= 2".into()));
    }
    if cfg.cost_horizons.iter().any(|&t| !(t > 0.0)) {
        return Err(CliFailure::Usage("cost grid needs positive horizons".into()));
    }
    let profile = parse_profile(cfg)?;
    let out = ensure_out_dir(cfg)?;
    let prov = Provenance::new(cfg.sha256());
    let table = cost_scaling_experiment(&profile, &cfg.cost_n_modes, &cfg.cost_horizons)?;
    match cfg.format.as_str() {
        "json" => {
            #[derive(Serialize)]
            struct Row {
                #[serde(rename = "N")]
                n: usize,
                #[serde(rename = "T")]
                t: f64,
                inv_t: f64,
                ln_cost: f64,
                cond_gt: f64,
                terminal_err: f64,
                error: Option<String>,
            }
            let rows: Vec<Row> = table
                .cells
                .iter()
                .map(|c| Row {
                    n: c.n_modes,
                    t: c.horizon,
                    inv_t: c.inv_horizon,
                    ln_cost: c.ln_cost,
                    cond_gt: c.gramian_cond,
                    terminal_err: c.terminal_error,
                    error: c.error.clone(),
                })
                .collect();
            write_table_json(&out.join("experiment.json"), &table_file(&prov, rows))?;
        }
        _ => export::write_experiment_csv(&out.join("experiment.csv"), &prov, &table)?,
    }
    let failed = table.cells.iter().filter(|c| c.error.is_some()).count();
    write_table_json(
        &out.join("cost_summary.json"),
        &CostSummary {
            slopes_ln_cost_vs_inv_t: table.slopes.clone(),
            failed_cells: failed,
            note: "exp(C/T) small-time blow-up is an infinite-dimensional law; at fixed \
                   truncation the certified content is the monotone trend in T and N plus \
                   the slope growth with N"
                .into(),
            version: prov.version.clone(),
            config_sha256: prov.config_sha256.clone(),
        },
    )?;
    // single-cell runs export the synthesized control itself
    if cfg.cost_n_modes.len() == 1 && cfg.cost_horizons.len() == 1 {
        let coupling = build_coupling(&profile, cfg.cost_n_modes[0])?;
        let problem = SteeringProblem::to_target(cfg.cost_horizons[0], phi21_target(&coupling))?;
        let ctrl = min_energy_control(&problem, &coupling)?;
        export::write_control_csv(&out.join("control.csv"), &prov, &ctrl)?;
    }
    println!(
        "cost: {} cells, {} failed, slopes {:?}",
        table.cells.len(),
        failed,
        table.slopes
    );
    if failed == table.cells.len() {
        Err(CliFailure::Runtime("every cost cell failed".into()))
    } else {
        Ok(Outcome::Success)
    }
}

// ---------------------------------------------------------------------------
// scan-lambda
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ScanSummary {
    slope_vs_sqrt: Option<f64>,
    slope_vs_ln: Option<f64>,
    version: String,
    config_sha256: String,
}

pub fn cmd_scan_lambda(cfg: &ExperimentConfig) -> CmdResult {
    validate(cfg)?;
    if cfg.scan_lambdas.is_empty() {
        return Err(CliFailure::Usage("empty lambda scan".into()));
    }
    if cfg.scan_lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(CliFailure::Usage("scan lambdas must be positive".into()));
    }
    let profile = parse_profile(cfg)?;
    let out = ensure_out_dir(cfg)?;
    let prov = Provenance::new(cfg.sha256());
    let coupling = build_coupling(&profile, cfg.n_modes)?;
    let report = lambda_scaling_scan(&coupling, &cfg.scan_lambdas)?;
    match cfg.format.as_str() {
        "json" => {
            #[derive(Serialize)]
            struct Row {
                lambda: f64,
                sigma_min: f64,
                sigma_max: f64,
                ln_sigma_min: f64,
            }
            let rows: Vec<Row> = report
                .rows
                .iter()
                .map(|r| Row {
                    lambda: r.lambda,
                    sigma_min: r.sigma_min,
                    sigma_max: r.sigma_max,
                    ln_sigma_min: r.ln_sigma_min,
                })
                .collect();
            write_table_json(&out.join("scan.json"), &table_file(&prov, rows))?;
        }
        _ => export::write_scan_csv(&out.join("scan.csv"), &prov, &report)?,
    }
    write_table_json(
        &out.join("scan_summary.json"),
        &ScanSummary {
            slope_vs_sqrt: report.slope_vs_sqrt,
            slope_vs_ln: report.slope_vs_ln,
            version: prov.version.clone(),
            config_sha256: prov.config_sha256.clone(),
        },
    )?;
    println!(
        "scan-lambda: {} gains, slope vs -sqrt(lambda) {:?}",
        report.rows.len(),
        report.slope_vs_sqrt
    );
    Ok(Outcome::Success)
}
