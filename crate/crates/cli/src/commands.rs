//! Subcommand implementations. Each takes a parsed [`RunConfig`] and an
//! output directory, writes its artifacts, and returns the document it wrote
//! so callers (and tests) can inspect results without re-reading files.
//!
//! All floating-point output is formatted with 17 significant digits, so
//! files round-trip losslessly and identical runs are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use plastibite_core::heatgrid::{AgeGrid, CircleGrid};
use plastibite_core::model::ModelParams;
use plastibite_core::simulate::{Engine, PopulationField, Trajectory};
use plastibite_core::spectral::{find_lambda0, SpectralResult};
use plastibite_core::steady::{self, build_steady, classify, criticalize, verify_steady, Regime};

use crate::config::{AxisParam, RunConfig, SweepSpec};
use crate::error::{CliError, Result};
use crate::render;

/// 17 significant digits: enough to reproduce any f64 exactly.
fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_text(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e.into(),
    })?;
    text.push('\n');
    write_text(path, &text)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn grids(run: &RunConfig) -> Result<(CircleGrid, AgeGrid)> {
    Ok((
        CircleGrid::new(run.sim.n_x)?,
        AgeGrid::new(run.sim.n_a, run.params.a_dagger)?,
    ))
}

/// Spectral document: the engine's result plus the classification band in
/// force, which every output reports.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralDocument {
    pub tol_zero: f64,
    pub regime: Regime,
    #[serde(flatten)]
    pub result: SpectralResult,
}

/// Solve the eigenproblem and write `spectral.json`.
pub fn cmd_spectral(run: &RunConfig, out: &Path) -> Result<SpectralDocument> {
    ensure_dir(out)?;
    let (xg, ag) = grids(run)?;
    let result = find_lambda0(&run.params, &run.rates, &xg, &ag)?;
    let regime = classify(result.lambda0, run.tol_zero)?;
    let doc = SpectralDocument {
        tol_zero: run.tol_zero,
        regime,
        result,
    };
    write_json(&out.join("spectral.json"), &doc)?;
    Ok(doc)
}

/// Paths and headline numbers from one simulation run.
#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub trajectory_path: PathBuf,
    pub snapshot_paths: Vec<PathBuf>,
    pub final_time: f64,
    pub final_l2: f64,
}

/// Run the lockstep solver and write `trajectory.csv` plus one snapshot CSV
/// per recorded step.
pub fn cmd_simulate(run: &RunConfig, out: &Path) -> Result<SimulateSummary> {
    ensure_dir(out)?;
    let (xg, ag) = grids(run)?;
    let engine = Engine::new(&run.params, &run.rates, &run.sim)?;
    let p0 = PopulationField::from_initial(&run.initial, xg, ag);
    let trajectory = engine.run(p0)?;

    let trajectory_path = out.join("trajectory.csv");
    write_text(&trajectory_path, &trajectory_csv(&trajectory))?;

    let mut snapshot_paths = Vec::new();
    for (field, step) in trajectory
        .snapshots
        .iter()
        .zip(&trajectory.snapshot_steps)
    {
        let path = out.join(format!("snapshot_{step:06}.csv"));
        write_text(&path, &snapshot_csv(field))?;
        snapshot_paths.push(path);
    }

    Ok(SimulateSummary {
        trajectory_path,
        snapshot_paths,
        final_time: *trajectory.times.last().unwrap_or(&0.0),
        final_l2: *trajectory.l2.last().unwrap_or(&0.0),
    })
}

/// Certificate for a constructed critical steady state.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateDocument {
    pub lambda0: f64,
    pub c: f64,
    /// Positivity floor of the profile over ages in (0, a1].
    pub rho0: f64,
    pub a1: f64,
    /// One-step relative residual ‖step(p_s) − p_s‖ / ‖p_s‖.
    pub residual: f64,
    /// Relative norm drift over the verification horizon.
    pub drift: f64,
    pub horizon: f64,
    pub tol_zero: f64,
    pub regime: Regime,
    /// Fertility multiplier applied when criticalize was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fertility_scale: Option<f64>,
}

/// Report for regimes admitting no nontrivial steady state.
#[derive(Debug, Clone, Serialize)]
pub struct RegimeDocument {
    pub regime: Regime,
    pub lambda0: f64,
    pub tol_zero: f64,
    pub statement: String,
    /// Log-slope of the simulated norm; None if the population died out
    /// before the window closed (decay evidence in itself).
    pub growth_rate: Option<f64>,
    /// Sign of the simulated growth: +1 growing, -1 decaying.
    pub growth_sign: i8,
}

#[derive(Debug, Clone)]
pub enum SteadyOutcome {
    Certificate(CertificateDocument),
    Report(RegimeDocument),
}

/// Classify the regime; in the critical band construct and verify the steady
/// state (`steady_profile.csv` + `certificate.json`), otherwise write
/// `regime.json` with simulated growth evidence.
pub fn cmd_steady(run: &RunConfig, out: &Path) -> Result<SteadyOutcome> {
    ensure_dir(out)?;
    let (xg, ag) = grids(run)?;
    let mut rates = run.rates.clone();
    let mut fertility_scale = None;
    if run.steady.criticalize {
        let (scaling, scaled) =
            criticalize(&run.params, &rates, &xg, &ag, steady::DEFAULT_TOL_ZERO)?;
        rates = scaled;
        fertility_scale = Some(scaling.m_star);
    }
    let spec = find_lambda0(&run.params, &rates, &xg, &ag)?;
    let regime = classify(spec.lambda0, run.tol_zero)?;

    if regime == Regime::Critical {
        let state = build_steady(&run.params, &rates, &spec, run.steady.c, run.tol_zero)?;
        let check = verify_steady(&run.params, &rates, &state, run.steady.horizon)?;
        write_text(&out.join("steady_profile.csv"), &snapshot_csv(&state.profile))?;
        let doc = CertificateDocument {
            lambda0: spec.lambda0,
            c: state.c,
            rho0: state.rho0,
            a1: 0.9 * run.params.a_dagger,
            residual: check.one_step_residual,
            drift: check.drift,
            horizon: check.horizon,
            tol_zero: run.tol_zero,
            regime,
            fertility_scale,
        };
        write_json(&out.join("certificate.json"), &doc)?;
        return Ok(SteadyOutcome::Certificate(doc));
    }

    // No nontrivial steady state exists; simulate to witness the sign.
    let engine = Engine::new(&run.params, &rates, &run.sim)?;
    let p0 = PopulationField::from_initial(&run.initial, xg, ag);
    let trajectory = engine.run(p0)?;
    let window = ((run.sim.t_end - run.params.a_dagger) / run.sim.t_end).clamp(0.1, 0.9);
    let growth_rate = match trajectory.growth_rate(window) {
        Ok(g) => Some(g),
        Err(plastibite_core::Error::Extinct { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let growth_sign = match growth_rate {
        Some(g) if g > 0.0 => 1,
        Some(g) if g < 0.0 => -1,
        Some(_) => 0,
        None => -1,
    };
    let statement = match regime {
        Regime::Supercritical => "no nonnegative steady state".to_string(),
        _ => "trivial only".to_string(),
    };
    let doc = RegimeDocument {
        regime,
        lambda0: spec.lambda0,
        tol_zero: run.tol_zero,
        statement,
        growth_rate,
        growth_sign,
    };
    write_json(&out.join("regime.json"), &doc)?;
    Ok(SteadyOutcome::Report(doc))
}

/// One evaluated sweep point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub index: usize,
    /// (column name, value) per axis, in axis order.
    pub coordinates: Vec<(&'static str, f64)>,
    pub lambda0: f64,
    pub gamma_residual: f64,
    pub regime: Regime,
}

/// Evaluate the sweep grid in parallel. Each point writes its own JSON file;
/// the long-format index `sweep.csv` is written last, in axis order.
pub fn cmd_sweep(run: &RunConfig, out: &Path) -> Result<Vec<SweepRow>> {
    let Some(sweep) = &run.sweep else {
        return Err(CliError::Usage(
            "the sweep subcommand needs a [sweep] section in the config".to_string(),
        ));
    };
    ensure_dir(out)?;
    let points = enumerate_points(sweep);
    let results: Vec<Result<SweepRow>> = points
        .par_iter()
        .enumerate()
        .map(|(index, coords)| evaluate_point(run, sweep, index, coords, out))
        .collect();

    // Scan sequentially so a failure reports the lowest-index bad point
    // regardless of worker scheduling.
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?);
    }

    let mut csv = String::new();
    for (name, _) in &rows[0].coordinates {
        let _ = write!(csv, "{name},");
    }
    csv.push_str("lambda0,regime\n");
    for row in &rows {
        for (_, v) in &row.coordinates {
            let _ = write!(csv, "{},", fmt17(*v));
        }
        let _ = writeln!(csv, "{},{}", fmt17(row.lambda0), row.regime);
    }
    write_text(&out.join("sweep.csv"), &csv)?;
    Ok(rows)
}

/// Cartesian grid in axis-major order: the last axis varies fastest.
fn enumerate_points(sweep: &SweepSpec) -> Vec<Vec<(AxisParam, f64)>> {
    let mut points: Vec<Vec<(AxisParam, f64)>> = vec![Vec::new()];
    for axis in &sweep.axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for base in &points {
            for &v in &axis.values {
                let mut p = base.clone();
                p.push((axis.param, v));
                next.push(p);
            }
        }
        points = next;
    }
    points
}

fn evaluate_point(
    run: &RunConfig,
    sweep: &SweepSpec,
    index: usize,
    coords: &[(AxisParam, f64)],
    out: &Path,
) -> Result<SweepRow> {
    let mut params = run.params.clone();
    let mut rates = run.rates.clone();
    for &(param, v) in coords {
        match param {
            AxisParam::Eta => {
                params = ModelParams::new(params.delta, v, params.a_dagger, params.t_end)?
                    .with_kernel_wrap(params.kernel_wrap)?;
            }
            AxisParam::FertilityScale => {
                rates = rates.scale_fertility(v)?;
            }
        }
    }
    let xg = CircleGrid::new(run.sim.n_x)?;
    let ag = AgeGrid::new(run.sim.n_a, params.a_dagger)?;
    let spec = find_lambda0(&params, &rates, &xg, &ag)?;
    let regime = classify(spec.lambda0, run.tol_zero)?;

    let mut doc = serde_json::Map::new();
    doc.insert("index".to_string(), index.into());
    for &(param, v) in coords {
        doc.insert(param.column_name().to_string(), v.into());
    }
    doc.insert("lambda0".to_string(), spec.lambda0.into());
    doc.insert("gamma_residual".to_string(), spec.gamma_residual.into());
    doc.insert("regime".to_string(), regime.to_string().into());
    doc.insert("tol_zero".to_string(), run.tol_zero.into());
    doc.insert("task".to_string(), task_name(sweep).into());
    write_json(&out.join(format!("sweep_point_{index:05}.json")), &doc)?;

    Ok(SweepRow {
        index,
        coordinates: coords
            .iter()
            .map(|&(p, v)| (p.column_name(), v))
            .collect(),
        lambda0: spec.lambda0,
        gamma_residual: spec.gamma_residual,
        regime,
    })
}

fn task_name(sweep: &SweepSpec) -> &'static str {
    match sweep.task {
        crate::config::SweepTask::Lambda0 => "lambda0",
        crate::config::SweepTask::Regime => "regime",
    }
}

/// Render a snapshot CSV to an SVG heatmap named after the input file.
pub fn cmd_render(run: &RunConfig, input: &Path, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let svg = render::render_file(input, run.params.a_dagger)?;
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("snapshot");
    let path = out.join(format!("{stem}.svg"));
    write_text(&path, &svg)?;
    Ok(path)
}

/// Norm history as CSV: one row per lockstep step.
fn trajectory_csv(trajectory: &Trajectory) -> String {
    let mut csv = String::with_capacity(64 * trajectory.times.len());
    csv.push_str("t,l2_norm,total_pop\n");
    for i in 0..trajectory.times.len() {
        let _ = writeln!(
            csv,
            "{},{},{}",
            fmt17(trajectory.times[i]),
            fmt17(trajectory.l2[i]),
            fmt17(trajectory.total[i]),
        );
    }
    csv
}

/// Field snapshot as CSV: header row of x-nodes, one row per age cell,
/// youngest cell first.
fn snapshot_csv(field: &PopulationField) -> String {
    let n_x = field.xgrid().len();
    let n_a = field.agrid().len();
    let mut csv = String::with_capacity(24 * n_x * (n_a + 1));
    for j in 0..n_x {
        if j > 0 {
            csv.push(',');
        }
        csv.push_str(&fmt17(field.xgrid().node(j)));
    }
    csv.push('\n');
    for k in 0..n_a {
        let row = field.row(k);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                csv.push(',');
            }
            csv.push_str(&fmt17(*v));
        }
        csv.push('\n');
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;
    use plastibite_core::heatgrid::{AgeGrid, CircleGrid};

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for &v in &[0.1, 1.0 / 3.0, 6.02e23, -2.5e-308, 0.0] {
            let s = fmt17(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
            let mantissa: String = s
                .chars()
                .take_while(|c| *c != 'e')
                .filter(|c| c.is_ascii_digit())
                .collect();
            assert_eq!(mantissa.len(), 17, "{s}");
        }
    }

    #[test]
    fn snapshot_csv_has_header_and_one_row_per_age_cell() {
        let xg = CircleGrid::new(4).unwrap();
        let ag = AgeGrid::new(3, 6.0).unwrap();
        let field = PopulationField::from_fn(xg, ag, |a, x| a + x);
        let csv = snapshot_csv(&field);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with(&fmt17(0.0)));
        assert_eq!(lines[1].split(',').count(), 4);
        let grid = render::parse_snapshot(&csv, "roundtrip").unwrap();
        assert_eq!(grid.x_nodes, vec![0.0, 6.0, 12.0, 18.0]);
        assert_eq!(grid.rows[2][1], field.value(2, 1));
    }

    #[test]
    fn trajectory_csv_lists_every_step() {
        let t = Trajectory {
            times: vec![0.0, 0.5, 1.0],
            l2: vec![1.0, 2.0, 4.0],
            total: vec![3.0, 6.0, 12.0],
            snapshots: Vec::new(),
            snapshot_steps: Vec::new(),
        };
        let csv = trajectory_csv(&t);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,l2_norm,total_pop");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with(&fmt17(0.5)));
    }

    #[test]
    fn point_enumeration_is_axis_major() {
        use crate::config::{SweepAxis, SweepTask};
        let sweep = SweepSpec {
            task: SweepTask::Lambda0,
            axes: vec![
                SweepAxis {
                    param: AxisParam::Eta,
                    values: vec![1.0, 2.0],
                },
                SweepAxis {
                    param: AxisParam::FertilityScale,
                    values: vec![0.5, 1.5, 2.5],
                },
            ],
        };
        let points = enumerate_points(&sweep);
        assert_eq!(points.len(), 6);
        assert_eq!(points[0], vec![(AxisParam::Eta, 1.0), (AxisParam::FertilityScale, 0.5)]);
        assert_eq!(points[1], vec![(AxisParam::Eta, 1.0), (AxisParam::FertilityScale, 1.5)]);
        assert_eq!(points[5], vec![(AxisParam::Eta, 2.0), (AxisParam::FertilityScale, 2.5)]);
    }
}
