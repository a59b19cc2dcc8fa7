//! Machine-readable emission: CSV tables and JSON certificates.
//!
//! Every file embeds a provenance comment (tool version plus the hash of the
//! config that produced it) ahead of the exact column header, and all floats
//! print with 17 significant digits so downstream plotting round-trips the
//! values bit-exactly. Output is deterministic: same config, same bytes.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::bilinear::{BasinRow, BilinearRun};
use crate::cost::{CostTable, MinEnergyControl};
use crate::error::Result;
use crate::feedback::{DecayCertificate, Trajectory};
use crate::finite_time::{FiniteTimeRun, StageAudit};
use crate::gramian::{GramianMatrix, ScanReport};
use crate::spectral::DipoleCoupling;

/// Tool identity stamped into every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config_sha256: String,
}

impl Provenance {
    pub fn new(config_sha256: impl Into<String>) -> Self {
        Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: config_sha256.into(),
        }
    }

    fn comment_line(&self) -> String {
        format!(
            "# gramstab {} config_sha256={}",
            self.version, self.config_sha256
        )
    }
}

/// 17 significant digits; round-trips f64 exactly.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_csv(path: &Path, prov: &Provenance, header: &str, rows: Vec<String>) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 64 + 128);
    out.push_str(&prov.comment_line());
    out.push('\n');
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value).expect("serializable export");
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Coupling table: "k,b_k,beta_k,omega_k,w_k".
pub fn write_coupling_csv(path: &Path, prov: &Provenance, c: &DipoleCoupling) -> Result<()> {
    let rows = (1..=c.n_modes())
        .map(|k| {
            format!(
                "{k},{},{},{},{}",
                fmt_g17(c.b[k - 1]),
                fmt_g17(c.beta[k - 1]),
                fmt_g17(c.omega[k - 1]),
                fmt_g17(c.weights.get(k))
            )
        })
        .collect();
    write_csv(path, prov, "k,b_k,beta_k,omega_k,w_k", rows)
}

/// Genericity-check table: "k,k3_abs_bk".
pub fn write_mu_check_csv(path: &Path, prov: &Provenance, rows: &[(usize, f64)]) -> Result<()> {
    let lines = rows
        .iter()
        .map(|(k, v)| format!("{k},{}", fmt_g17(*v)))
        .collect();
    write_csv(path, prov, "k,k3_abs_bk", lines)
}

/// Optional per-sample columns appended to the trajectory CSV.
pub enum TrajectoryExtras<'a> {
    None,
    /// "l2_norm,b_component,h3_gap" columns of a bilinear run.
    Bilinear(&'a BilinearRun),
    /// "stage" column of a staged run.
    Stage(&'a [usize]),
}

/// Trajectory CSV: "t,u,re_a1,im_a1,...,re_aN,im_aN,h3_norm,qinv_norm"
/// plus the extras of the producing mode.
pub fn write_trajectory_csv(
    path: &Path,
    prov: &Provenance,
    traj: &Trajectory,
    extras: TrajectoryExtras<'_>,
) -> Result<()> {
    let n = traj.meta.n_modes;
    let weights = crate::spectral::SobolevWeights::new(n)?;
    let mut header = String::from("t,u");
    for k in 1..=n {
        header.push_str(&format!(",re_a{k},im_a{k}"));
    }
    header.push_str(",h3_norm,qinv_norm");
    match extras {
        TrajectoryExtras::Bilinear(_) => header.push_str(",l2_norm,b_component,h3_gap"),
        TrajectoryExtras::Stage(_) => header.push_str(",stage"),
        TrajectoryExtras::None => {}
    }
    let mut rows = Vec::with_capacity(traj.len());
    for i in 0..traj.len() {
        let state = &traj.states[i];
        let mut row = format!("{},{}", fmt_g17(traj.times[i]), fmt_g17(traj.controls[i]));
        for k in 0..n {
            row.push_str(&format!(
                ",{},{}",
                fmt_g17(state[2 * k]),
                fmt_g17(state[2 * k + 1])
            ));
        }
        let h3 = crate::spectral::h3_norm(&weights, state)?;
        let qinv = traj.qinv_norms.as_ref().map(|v| v[i]).unwrap_or(f64::NAN);
        row.push_str(&format!(",{},{}", fmt_g17(h3), fmt_g17(qinv)));
        match &extras {
            TrajectoryExtras::Bilinear(run) => {
                row.push_str(&format!(
                    ",{},{},{}",
                    fmt_g17(run.l2_norms[i]),
                    fmt_g17(run.b_components[i]),
                    fmt_g17(run.h3_gaps[i])
                ));
            }
            TrajectoryExtras::Stage(stages) => {
                row.push_str(&format!(",{}", stages[i]));
            }
            TrajectoryExtras::None => {}
        }
        rows.push(row);
    }
    write_csv(path, prov, &header, rows)
}

#[derive(Serialize)]
struct CertificateFile<'a> {
    lambda: f64,
    #[serde(rename = "N")]
    n_modes: usize,
    fitted_rate: Option<f64>,
    theoretical_rate: f64,
    max_identity_violation: f64,
    #[serde(rename = "C1")]
    c1: Option<f64>,
    #[serde(rename = "C2")]
    c2: Option<f64>,
    version: &'a str,
    config_sha256: &'a str,
}

/// Certificate JSON: {lambda, N, fitted_rate, theoretical_rate,
/// max_identity_violation, C1, C2} plus provenance.
pub fn write_certificate_json(
    path: &Path,
    prov: &Provenance,
    lambda: f64,
    n_modes: usize,
    cert: &DecayCertificate,
) -> Result<()> {
    write_json(
        path,
        &CertificateFile {
            lambda,
            n_modes,
            fitted_rate: cert.fitted_rate,
            theoretical_rate: cert.theoretical_rate,
            max_identity_violation: cert.max_identity_violation,
            c1: cert.c1,
            c2: cert.c2,
            version: &prov.version,
            config_sha256: &prov.config_sha256,
        },
    )
}

#[derive(Serialize)]
struct GramianSidecar<'a> {
    lambda: f64,
    #[serde(rename = "N")]
    n_modes: usize,
    sigma_min: f64,
    sigma_max: f64,
    mu_id: &'a str,
    regularized: bool,
    version: &'a str,
    config_sha256: &'a str,
}

/// Dense Gramian CSV plus its JSON sidecar
/// {lambda, N, sigma_min, sigma_max, mu_id}.
pub fn write_gramian(
    csv_path: &Path,
    sidecar_path: &Path,
    prov: &Provenance,
    q: &GramianMatrix,
    mu_id: &str,
) -> Result<()> {
    let dim = q.dim();
    let header: String = (0..dim)
        .map(|j| format!("c{j}"))
        .collect::<Vec<_>>()
        .join(",");
    let rows = (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| fmt_g17(q.mat[(i, j)]))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    write_csv(csv_path, prov, &header, rows)?;
    write_json(
        sidecar_path,
        &GramianSidecar {
            lambda: q.lambda,
            n_modes: q.n_modes,
            sigma_min: q.sigma_min,
            sigma_max: q.sigma_max,
            mu_id,
            regularized: q.regularized,
            version: &prov.version,
            config_sha256: &prov.config_sha256,
        },
    )
}

/// Scan CSV: "lambda,sigma_min,sigma_max,ln_sigma_min".
pub fn write_scan_csv(path: &Path, prov: &Provenance, report: &ScanReport) -> Result<()> {
    let rows = report
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{}",
                fmt_g17(r.lambda),
                fmt_g17(r.sigma_min),
                fmt_g17(r.sigma_max),
                fmt_g17(r.ln_sigma_min)
            )
        })
        .collect();
    write_csv(path, prov, "lambda,sigma_min,sigma_max,ln_sigma_min", rows)
}

/// Stage report CSV:
/// "n,t_n,lambda_n,s_n,ynorm,unorm_sup,bound_state,bound_control,slack".
pub fn write_stage_csv(
    path: &Path,
    prov: &Provenance,
    run: &FiniteTimeRun,
    audit: &StageAudit,
) -> Result<()> {
    let rows = run
        .report
        .stages
        .iter()
        .zip(audit.rows.iter())
        .map(|(rec, row)| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                rec.n,
                fmt_g17(rec.t_start),
                fmt_g17(rec.lambda),
                fmt_g17(rec.s_at_start),
                fmt_g17(rec.ynorm),
                fmt_g17(rec.usup),
                fmt_g17(row.ln_state_bound.exp()),
                fmt_g17(row.ln_control_bound.exp()),
                fmt_g17(row.state_slack.min(row.control_slack))
            )
        })
        .collect();
    write_csv(
        path,
        prov,
        "n,t_n,lambda_n,s_n,ynorm,unorm_sup,bound_state,bound_control,slack",
        rows,
    )
}

/// Basin report CSV: "epsilon,trials,successes,worst_C,median_rate".
pub fn write_basin_csv(path: &Path, prov: &Provenance, rows: &[BasinRow]) -> Result<()> {
    let lines = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{}",
                fmt_g17(r.epsilon),
                r.trials,
                r.successes,
                fmt_g17(r.worst_c),
                fmt_g17(r.median_rate)
            )
        })
        .collect();
    write_csv(path, prov, "epsilon,trials,successes,worst_C,median_rate", lines)
}

/// Experiment CSV: "N,T,inv_T,ln_cost,cond_GT,terminal_err".
pub fn write_experiment_csv(path: &Path, prov: &Provenance, table: &CostTable) -> Result<()> {
    let rows = table
        .cells
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{},{},{}",
                c.n_modes,
                fmt_g17(c.horizon),
                fmt_g17(c.inv_horizon),
                fmt_g17(c.ln_cost),
                fmt_g17(c.gramian_cond),
                fmt_g17(c.terminal_error)
            )
        })
        .collect();
    write_csv(path, prov, "N,T,inv_T,ln_cost,cond_GT,terminal_err", rows)
}

/// Control CSV: "t,u".
pub fn write_control_csv(path: &Path, prov: &Provenance, ctrl: &MinEnergyControl) -> Result<()> {
    let rows = ctrl
        .times
        .iter()
        .zip(ctrl.samples.iter())
        .map(|(t, u)| format!("{},{}", fmt_g17(*t), fmt_g17(*u)))
        .collect();
    write_csv(path, prov, "t,u", rows)
}
