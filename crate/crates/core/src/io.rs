//! File formats: scenario and solution JSON documents, convergence-trace
//! CSVs, rate-report CSV rows, and sweep output files.
//!
//! Every JSON document carries a `schema` tag (`nfisac.<kind>/<version>`)
//! so older files stay recognizable when formats evolve. Complex matrices
//! are stored as flat interleaved `[re, im, re, im, …]` arrays in
//! column-major order with explicit dimensions; coordinates are stored in
//! meters and degrees. CSV floats use Rust's shortest round-trip formatting
//! and contain no timing data, so identical inputs give identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{PolarCoord, ScatterPath, Scenario, Wavefront};
use crate::config::SystemConfig;
use crate::experiments::{SweepResult, SweepRow, SweepSpec};
use crate::optimizer::{Solution, TraceRow};
use crate::rates::RateReport;
use crate::{C64, CMat, CVec, Error, Result};

pub const SCENARIO_SCHEMA: &str = "nfisac.scenario/1";
pub const SOLUTION_SCHEMA: &str = "nfisac.solution/1";
pub const SWEEP_SCHEMA: &str = "nfisac.sweep/1";
pub const SWEEP_SPEC_SCHEMA: &str = "nfisac.sweepspec/1";

// ---------------------------------------------------------------------------
// JSON primitives
// ---------------------------------------------------------------------------

/// Complex matrix as dimensions plus column-major interleaved re/im data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub nrows: usize,
    pub ncols: usize,
    pub data: Vec<f64>,
}

impl MatrixDoc {
    pub fn from_matrix(m: &CMat) -> Self {
        let data = m.iter().flat_map(|z| [z.re, z.im]).collect();
        MatrixDoc { nrows: m.nrows(), ncols: m.ncols(), data }
    }

    pub fn from_vector(v: &CVec) -> Self {
        let data = v.iter().flat_map(|z| [z.re, z.im]).collect();
        MatrixDoc { nrows: v.len(), ncols: 1, data }
    }

    pub fn to_matrix(&self) -> Result<CMat> {
        if self.data.len() != 2 * self.nrows * self.ncols {
            return Err(Error::Dimension(format!(
                "matrix document claims {}x{} but carries {} scalars",
                self.nrows,
                self.ncols,
                self.data.len()
            )));
        }
        let complex: Vec<C64> =
            self.data.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect();
        Ok(CMat::from_column_slice(self.nrows, self.ncols, &complex))
    }

    pub fn to_vector(&self) -> Result<CVec> {
        if self.ncols != 1 {
            return Err(Error::Dimension(format!(
                "expected a column vector, got {}x{}",
                self.nrows, self.ncols
            )));
        }
        Ok(CVec::from_iterator(
            self.nrows,
            self.to_matrix()?.column(0).iter().copied(),
        ))
    }
}

fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::Config(format!("schema mismatch: file is `{found}`, expected `{expected}`")))
    }
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

// ---------------------------------------------------------------------------
// Scenario documents
// ---------------------------------------------------------------------------

/// Polar coordinate in export units.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoordDoc {
    pub range_m: f64,
    pub angle_deg: f64,
}

impl CoordDoc {
    fn from_coord(c: &PolarCoord) -> Self {
        CoordDoc { range_m: c.range_m, angle_deg: c.angle_rad.to_degrees() }
    }

    fn to_coord(self) -> Result<PolarCoord> {
        PolarCoord::from_degrees(self.range_m, self.angle_deg)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScatterDoc {
    pub range_m: f64,
    pub angle_deg: f64,
    pub link_range_m: f64,
}

/// Channels inlined alongside the geometry: one vector per user, one
/// matrix per target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelsDoc {
    pub comm: Vec<MatrixDoc>,
    pub sense: Vec<MatrixDoc>,
}

/// Scenario file: config block, geometry, and optionally the synthesized
/// channels. On load, inlined channels take precedence over re-synthesis,
/// so archived instances survive changes to the gain model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioDoc {
    pub schema: String,
    pub config: SystemConfig,
    pub wavefront: Wavefront,
    pub users: Vec<CoordDoc>,
    pub scatterers: Vec<Vec<ScatterDoc>>,
    pub targets: Vec<CoordDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<ChannelsDoc>,
}

impl ScenarioDoc {
    pub fn from_scenario(scenario: &Scenario, cfg: &SystemConfig, inline_channels: bool) -> Self {
        ScenarioDoc {
            schema: SCENARIO_SCHEMA.to_string(),
            config: cfg.clone(),
            wavefront: scenario.wavefront,
            users: scenario.users.iter().map(CoordDoc::from_coord).collect(),
            scatterers: scenario
                .scatterers
                .iter()
                .map(|paths| {
                    paths
                        .iter()
                        .map(|p| ScatterDoc {
                            range_m: p.coord.range_m,
                            angle_deg: p.coord.angle_rad.to_degrees(),
                            link_range_m: p.link_range_m,
                        })
                        .collect()
                })
                .collect(),
            targets: scenario.targets.iter().map(CoordDoc::from_coord).collect(),
            channels: inline_channels.then(|| ChannelsDoc {
                comm: scenario.comm_channels.iter().map(MatrixDoc::from_vector).collect(),
                sense: scenario.sense_channels.iter().map(MatrixDoc::from_matrix).collect(),
            }),
        }
    }

    /// Rebuilds the scenario (and returns the embedded config). Geometry is
    /// always re-synthesized; inlined channels then replace the synthesized
    /// ones after a dimension check.
    pub fn to_scenario(&self) -> Result<(Scenario, SystemConfig)> {
        check_schema(&self.schema, SCENARIO_SCHEMA)?;
        let cfg = self.config.clone();
        cfg.validate()?;
        let users =
            self.users.iter().map(|c| c.to_coord()).collect::<Result<Vec<_>>>()?;
        let scatterers = self
            .scatterers
            .iter()
            .map(|paths| {
                paths
                    .iter()
                    .map(|p| {
                        Ok(ScatterPath {
                            coord: PolarCoord::from_degrees(p.range_m, p.angle_deg)?,
                            link_range_m: p.link_range_m,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let targets =
            self.targets.iter().map(|c| c.to_coord()).collect::<Result<Vec<_>>>()?;
        let mut scenario =
            Scenario::synthesize_with(self.wavefront, &cfg, users, scatterers, targets)?;
        if let Some(chans) = &self.channels {
            if chans.comm.len() != cfg.n_users || chans.sense.len() != cfg.n_targets {
                return Err(Error::Dimension(format!(
                    "inlined channels cover {} users / {} targets, config has {} / {}",
                    chans.comm.len(),
                    chans.sense.len(),
                    cfg.n_users,
                    cfg.n_targets
                )));
            }
            let comm = chans.comm.iter().map(|d| d.to_vector()).collect::<Result<Vec<_>>>()?;
            let sense = chans.sense.iter().map(|d| d.to_matrix()).collect::<Result<Vec<_>>>()?;
            for h in &comm {
                if h.len() != cfg.n_tx {
                    return Err(Error::Dimension(format!(
                        "inlined user channel has {} entries, expected {}",
                        h.len(),
                        cfg.n_tx
                    )));
                }
            }
            for g in &sense {
                if g.nrows() != cfg.n_rx || g.ncols() != cfg.n_tx {
                    return Err(Error::Dimension(format!(
                        "inlined sensing channel is {}x{}, expected {}x{}",
                        g.nrows(),
                        g.ncols(),
                        cfg.n_rx,
                        cfg.n_tx
                    )));
                }
            }
            scenario.comm_channels = comm;
            scenario.sense_channels = sense;
        }
        Ok((scenario, cfg))
    }
}

pub fn save_scenario(
    path: &Path,
    scenario: &Scenario,
    cfg: &SystemConfig,
    inline_channels: bool,
) -> Result<()> {
    write_json(path, &ScenarioDoc::from_scenario(scenario, cfg, inline_channels))
}

pub fn load_scenario(path: &Path) -> Result<(Scenario, SystemConfig)> {
    read_json::<ScenarioDoc>(path)?.to_scenario()
}

// ---------------------------------------------------------------------------
// Solution documents
// ---------------------------------------------------------------------------

/// Convergence summary without the per-iteration trace (the trace is CSV).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsDoc {
    pub outer_iterations: usize,
    pub inner_iterations_total: usize,
    pub final_residual_inf: f64,
    pub converged: bool,
    pub rho_final: f64,
}

/// Solution file: analog phases in radians (absent for fully digital
/// designs), digital stage, delivered and consensus precoders, common-rate
/// shares, receive filters, and the rate reports for both precoders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionDoc {
    pub schema: String,
    /// Phase of each analog entry, radians, row-major `n_tx` rows of
    /// `n_rf` values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analog_phases_rad: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digital: Option<MatrixDoc>,
    pub precoder: MatrixDoc,
    pub aux_precoder: MatrixDoc,
    pub common_shares: Vec<f64>,
    pub receive_filters: Vec<MatrixDoc>,
    pub report: RateReport,
    pub report_aux: RateReport,
    pub diagnostics: DiagnosticsDoc,
}

impl SolutionDoc {
    pub fn from_solution(sol: &Solution) -> Self {
        SolutionDoc {
            schema: SOLUTION_SCHEMA.to_string(),
            analog_phases_rad: sol.hybrid.as_ref().map(|h| {
                (0..h.analog.nrows())
                    .map(|i| h.analog.row(i).iter().map(|z| z.arg()).collect())
                    .collect()
            }),
            digital: sol.hybrid.as_ref().map(|h| MatrixDoc::from_matrix(&h.digital)),
            precoder: MatrixDoc::from_matrix(&sol.precoder.matrix),
            aux_precoder: MatrixDoc::from_matrix(&sol.aux_precoder.matrix),
            common_shares: sol.alloc.shares.clone(),
            receive_filters: sol.filters.filters.iter().map(MatrixDoc::from_vector).collect(),
            report: sol.report.clone(),
            report_aux: sol.report_aux.clone(),
            diagnostics: DiagnosticsDoc {
                outer_iterations: sol.diagnostics.outer_iterations,
                inner_iterations_total: sol.diagnostics.inner_iterations_total,
                final_residual_inf: sol.diagnostics.final_residual_inf,
                converged: sol.diagnostics.converged,
                rho_final: sol.diagnostics.rho_final,
            },
        }
    }
}

pub fn save_solution(path: &Path, sol: &Solution) -> Result<()> {
    write_json(path, &SolutionDoc::from_solution(sol))
}

pub fn load_solution(path: &Path) -> Result<SolutionDoc> {
    let doc: SolutionDoc = read_json(path)?;
    check_schema(&doc.schema, SOLUTION_SCHEMA)?;
    Ok(doc)
}

// ---------------------------------------------------------------------------
// Sweep request documents
// ---------------------------------------------------------------------------

/// Sweep request file: a schema tag wrapping [`SweepSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpecDoc {
    pub schema: String,
    #[serde(flatten)]
    pub spec: SweepSpec,
}

pub fn save_sweep_spec(path: &Path, spec: &SweepSpec) -> Result<()> {
    write_json(path, &SweepSpecDoc { schema: SWEEP_SPEC_SCHEMA.to_string(), spec: spec.clone() })
}

pub fn load_sweep_spec(path: &Path) -> Result<SweepSpec> {
    let doc: SweepSpecDoc = read_json(path)?;
    check_schema(&doc.schema, SWEEP_SPEC_SCHEMA)?;
    doc.spec.validate()?;
    Ok(doc.spec)
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Convergence trace. Columns: `outer_iter`, `inner_iter` (1-based within
/// its outer iteration), `al_objective` (augmented objective after the
/// iteration's last block), `residual_inf` (`||P - FW||_inf`, 0 for fully
/// digital runs), `min_rate` (true max-min rate of the current P),
/// `min_sensing_rate` (worst target, `inf` when sensing is off), and `rho`
/// (current penalty weight, 0 for fully digital runs).
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut out =
        String::from("outer_iter,inner_iter,al_objective,residual_inf,min_rate,min_sensing_rate,rho\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.outer_iter,
            row.inner_iter,
            row.al_objective,
            row.residual_inf,
            row.min_rate,
            row.min_sensing_rate,
            row.rho
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Header for [`rate_report_row`]: `common_rate`, one `common_share_k` per
/// user, one `private_rate_k` per user, one `total_k` per user, `min_total`,
/// one `sensing_rate_m` per target, `objective`, `common_sum_violation`.
pub fn rate_report_header(n_users: usize, n_targets: usize) -> String {
    let mut cols = vec!["common_rate".to_string()];
    cols.extend((1..=n_users).map(|k| format!("common_share_{k}")));
    cols.extend((1..=n_users).map(|k| format!("private_rate_{k}")));
    cols.extend((1..=n_users).map(|k| format!("total_{k}")));
    cols.push("min_total".to_string());
    cols.extend((1..=n_targets).map(|m| format!("sensing_rate_{m}")));
    cols.push("objective".to_string());
    cols.push("common_sum_violation".to_string());
    cols.join(",")
}

/// One CSV row in [`rate_report_header`] order.
pub fn rate_report_row(report: &RateReport) -> String {
    let mut cols = vec![report.common_rate.to_string()];
    cols.extend(report.common_shares.iter().map(|v| v.to_string()));
    cols.extend(report.private_rates.iter().map(|v| v.to_string()));
    cols.extend(report.totals.iter().map(|v| v.to_string()));
    cols.push(report.min_total.to_string());
    cols.extend(report.sensing_rates.iter().map(|v| v.to_string()));
    cols.push(report.objective.to_string());
    cols.push((report.common_sum_violation as u8).to_string());
    cols.join(",")
}

/// Writes a rate report as a two-line CSV (header + row).
pub fn write_rate_report_csv(path: &Path, report: &RateReport) -> Result<()> {
    let mut out = rate_report_header(report.common_shares.len(), report.sensing_rates.len());
    out.push('\n');
    out.push_str(&rate_report_row(report));
    out.push('\n');
    fs::write(path, out)?;
    Ok(())
}

fn sweep_row_csv(row: &SweepRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}\n",
        row.scheme,
        row.axis,
        row.value,
        row.power_dbm,
        row.power_mw,
        row.trials,
        row.solved,
        row.infeasible,
        row.failed,
        opt(row.mean_min_rate),
        opt(row.std_error),
        opt(row.mean_outer_iterations),
    )
}

#[derive(Serialize)]
struct SweepDoc<'a> {
    schema: &'static str,
    #[serde(flatten)]
    result: &'a SweepResult,
}

/// Writes the per-cell rate CSV (`rate_vs_<axis>.csv`), the infeasibility
/// count CSV (`infeasible_vs_<axis>.csv`), and the JSON summary
/// (`sweep_summary.json`, the only file holding wall-clock times).
pub fn write_sweep_outputs(result: &SweepResult, out_dir: &Path) -> Result<()> {
    let axis = result.spec.axis.name();
    let mut rates = String::from(
        "scheme,axis,value,power_dbm,power_mw,trials,solved,infeasible,failed,mean_min_rate,std_error,mean_outer_iterations\n",
    );
    for row in &result.rows {
        rates.push_str(&sweep_row_csv(row));
    }
    fs::write(out_dir.join(format!("rate_vs_{axis}.csv")), rates)?;

    let mut infeasible = String::from("scheme,axis,value,infeasible,trials\n");
    for row in &result.rows {
        infeasible.push_str(&format!(
            "{},{},{},{},{}\n",
            row.scheme, row.axis, row.value, row.infeasible, row.trials
        ));
    }
    fs::write(out_dir.join(format!("infeasible_vs_{axis}.csv")), infeasible)?;

    write_json(&out_dir.join("sweep_summary.json"), &SweepDoc { schema: SWEEP_SCHEMA, result })
}
