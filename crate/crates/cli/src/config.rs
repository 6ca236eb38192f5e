//! Run configuration: a flat INI-style text file.
//!
//! Grammar: `[section]` headers and `key = value` lines; `#` starts a
//! comment (whole-line or trailing); blank lines are skipped. Unknown
//! sections, unknown keys and duplicate keys are hard errors carrying the
//! offending line number. Table paths resolve relative to the config file,
//! so a config directory can be moved as a unit.
//!
//! Sections and their keys (all optional unless noted):
//!
//! ```text
//! [params]    delta, eta, a_dagger, t_end, kernel_wrap, tol_zero
//! [mortality] family = constant | blowup | table, mu0, kappa, file
//! [fertility] family = constant | table, beta0, file
//! [initial]   shape = uniform | gaussian, value,
//!             amplitude, a_center, a_width, x_center, x_width
//! [sim]       n_x, n_a, t_end, record_every
//! [steady]    c, criticalize, horizon
//! [sweep]     task = lambda0 | regime,
//!             axis1, axis1_min, axis1_max, axis1_points,
//!             axis2, axis2_min, axis2_max, axis2_points  (axis1 required)
//! ```
//!
//! A missing key takes its documented default, so the empty file is a valid
//! configuration.

use std::collections::BTreeMap;
use std::path::Path;

use plastibite_core::model::{
    validate, Fertility, InitialData, ModelParams, Mortality, TabulatedRate, Verdict, VitalRates,
    DOMAIN_LEN,
};
use plastibite_core::simulate::SimConfig;
use plastibite_core::Error as CoreError;

use crate::error::{CliError, Result};

/// Default half-width of the numerical "λ₀ = 0" band. Regimes are classified
/// against this band and every JSON output reports the value in force.
pub const DEFAULT_TOL_ZERO: f64 = 1e-6;

const KNOWN: &[(&str, &[&str])] = &[
    (
        "params",
        &["delta", "eta", "a_dagger", "t_end", "kernel_wrap", "tol_zero"],
    ),
    ("mortality", &["family", "mu0", "kappa", "file"]),
    ("fertility", &["family", "beta0", "file"]),
    (
        "initial",
        &[
            "shape", "value", "amplitude", "a_center", "a_width", "x_center", "x_width",
        ],
    ),
    ("sim", &["n_x", "n_a", "t_end", "record_every"]),
    ("steady", &["c", "criticalize", "horizon"]),
    (
        "sweep",
        &[
            "task",
            "axis1",
            "axis1_min",
            "axis1_max",
            "axis1_points",
            "axis2",
            "axis2_min",
            "axis2_max",
            "axis2_points",
        ],
    ),
];

/// Everything a subcommand needs, parsed and validated.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: ModelParams,
    pub rates: VitalRates,
    pub initial: InitialData,
    pub sim: SimConfig,
    /// Half-width of the "λ₀ = 0" classification band.
    pub tol_zero: f64,
    pub steady: SteadyOptions,
    pub sweep: Option<SweepSpec>,
    /// Non-fatal validation findings; the binary echoes them to stderr.
    pub warnings: Vec<String>,
}

/// Knobs consumed only by the steady subcommand.
#[derive(Debug, Clone, Copy)]
pub struct SteadyOptions {
    /// Amplitude of the constructed stationary state.
    pub c: f64,
    /// Rescale fertility onto criticality before classifying.
    pub criticalize: bool,
    /// Drift-verification horizon; defaults to ten lifetimes.
    pub horizon: f64,
}

/// Which parameter an axis varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisParam {
    Eta,
    FertilityScale,
}

impl AxisParam {
    pub fn column_name(self) -> &'static str {
        match self {
            AxisParam::Eta => "eta",
            AxisParam::FertilityScale => "fertility_scale",
        }
    }
}

/// One sweep axis with its grid of values materialized up front.
#[derive(Debug, Clone)]
pub struct SweepAxis {
    pub param: AxisParam,
    pub values: Vec<f64>,
}

/// What each sweep point computes. The eigenvalue is needed for either task,
/// so both columns appear in the output; the task name records intent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepTask {
    Lambda0,
    Regime,
}

/// One or two parameter axes, bounded to at most 10⁴ grid points.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub task: SweepTask,
    pub axes: Vec<SweepAxis>,
}

impl SweepSpec {
    pub fn point_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }
}

impl RunConfig {
    /// Apply the `--grid NX NA` command-line override.
    pub fn override_grid(&mut self, n_x: usize, n_a: usize) -> Result<()> {
        plastibite_core::heatgrid::CircleGrid::new(n_x)?;
        plastibite_core::heatgrid::AgeGrid::new(n_a, self.params.a_dagger)?;
        self.sim.n_x = n_x;
        self.sim.n_a = n_a;
        Ok(())
    }

    /// Apply the `--tol-zero` command-line override.
    pub fn override_tol_zero(&mut self, tol: f64) -> Result<()> {
        if !tol.is_finite() || tol <= 0.0 {
            return Err(CliError::Usage(format!(
                "--tol-zero must be finite and positive, got {tol}"
            )));
        }
        self.tol_zero = tol;
        Ok(())
    }
}

/// Parse and fully validate a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, &path.display().to_string(), base)
}

/// Parse configuration text. `label` names the source in errors and
/// `base_dir` anchors relative table paths.
pub fn parse_config_str(text: &str, label: &str, base_dir: &Path) -> Result<RunConfig> {
    let raw = Raw::scan(text, label)?;

    let delta = raw.f64("params", "delta", 1.0)?;
    let eta = raw.f64("params", "eta", 3.0)?;
    let a_dagger = raw.f64("params", "a_dagger", 10.0)?;
    let t_end = raw.f64("params", "t_end", 50.0)?;
    let kernel_wrap = raw.bool("params", "kernel_wrap", false)?;
    let tol_zero = raw.f64("params", "tol_zero", DEFAULT_TOL_ZERO)?;
    if !tol_zero.is_finite() || tol_zero <= 0.0 {
        return Err(raw.key_error(
            "params",
            "tol_zero",
            format!("tol_zero must be finite and positive, got {tol_zero}"),
        ));
    }

    let params = ModelParams::new(delta, eta, a_dagger, t_end)
        .and_then(|p| p.with_kernel_wrap(kernel_wrap))
        .map_err(|e| raw.localize("params", e))?;

    let mortality = parse_mortality(&raw, base_dir, a_dagger)?;
    let fertility = parse_fertility(&raw, base_dir, a_dagger)?;
    let rates =
        VitalRates::new(a_dagger, mortality, fertility).map_err(|e| raw.localize("mortality", e))?;

    let initial = parse_initial(&raw, a_dagger)?;

    let sim = SimConfig {
        n_x: raw.usize("sim", "n_x", 64)?,
        n_a: raw.usize("sim", "n_a", 200)?,
        t_end: raw.f64("sim", "t_end", params.t_end)?,
        record_every: raw.usize("sim", "record_every", 0)?,
    };
    sim.validate().map_err(|e| raw.localize("sim", e))?;
    plastibite_core::heatgrid::CircleGrid::new(sim.n_x).map_err(|e| raw.localize("sim", e))?;
    plastibite_core::heatgrid::AgeGrid::new(sim.n_a, a_dagger)
        .map_err(|e| raw.localize("sim", e))?;

    let steady = SteadyOptions {
        c: raw.f64("steady", "c", 1.0)?,
        criticalize: raw.bool("steady", "criticalize", false)?,
        horizon: raw.f64("steady", "horizon", 10.0 * a_dagger)?,
    };
    if !steady.c.is_finite() || steady.c < 0.0 {
        return Err(raw.key_error(
            "steady",
            "c",
            format!("steady amplitude must be finite and nonnegative, got {}", steady.c),
        ));
    }
    if !steady.horizon.is_finite() || steady.horizon <= 0.0 {
        return Err(raw.key_error(
            "steady",
            "horizon",
            format!("horizon must be finite and positive, got {}", steady.horizon),
        ));
    }

    let sweep = parse_sweep(&raw)?;

    let report = validate(&params, &rates, &initial)?;
    if let Some(name) = report.fatal_assumption() {
        let detail = match name {
            "J2" => verdict_detail(&report.j2_fertility_positive),
            _ => verdict_detail(&report.j3_initial_nonnegative),
        };
        return Err(CliError::Core(CoreError::AssumptionViolated {
            assumption: name,
            detail,
        }));
    }
    let mut warnings = Vec::new();
    match &report.j1_mortality_divergence {
        Verdict::Pass => {}
        Verdict::Fail(msg) => warnings.push(format!("(J1) not satisfied: {msg}")),
        Verdict::Unverifiable(msg) => warnings.push(format!("(J1) unverifiable: {msg}")),
    }

    Ok(RunConfig {
        params,
        rates,
        initial,
        sim,
        tol_zero,
        steady,
        sweep,
        warnings,
    })
}

fn verdict_detail(v: &Verdict) -> String {
    match v {
        Verdict::Pass => "passed".to_string(),
        Verdict::Fail(msg) | Verdict::Unverifiable(msg) => msg.clone(),
    }
}

fn parse_mortality(raw: &Raw, base_dir: &Path, a_dagger: f64) -> Result<Mortality> {
    match raw.str("mortality", "family").unwrap_or(("blowup", 0)) {
        ("constant", _) => {
            raw.forbid("mortality", "kappa", "mortality family 'constant'")?;
            raw.forbid("mortality", "file", "mortality family 'constant'")?;
            Ok(Mortality::Constant {
                mu0: raw.f64("mortality", "mu0", 0.1)?,
            })
        }
        ("blowup", _) => {
            raw.forbid("mortality", "file", "mortality family 'blowup'")?;
            Ok(Mortality::Blowup {
                mu0: raw.f64("mortality", "mu0", 0.1)?,
                kappa: raw.f64("mortality", "kappa", 1.0)?,
            })
        }
        ("table", line) => {
            raw.forbid("mortality", "mu0", "mortality family 'table'")?;
            raw.forbid("mortality", "kappa", "mortality family 'table'")?;
            let (file, file_line) = raw.str("mortality", "file").ok_or_else(|| {
                raw.line_error(line, "mortality family 'table' needs a 'file' key")
            })?;
            load_table(raw, base_dir, file, file_line, a_dagger)
                .map(Mortality::Tabulated)
        }
        (other, line) => Err(raw.line_error(
            line,
            format!("unknown mortality family '{other}' (constant | blowup | table)"),
        )),
    }
}

fn parse_fertility(raw: &Raw, base_dir: &Path, a_dagger: f64) -> Result<Fertility> {
    match raw.str("fertility", "family").unwrap_or(("constant", 0)) {
        ("constant", _) => {
            raw.forbid("fertility", "file", "fertility family 'constant'")?;
            Ok(Fertility::Constant {
                beta0: raw.f64("fertility", "beta0", 0.5)?,
            })
        }
        ("table", line) => {
            raw.forbid("fertility", "beta0", "fertility family 'table'")?;
            let (file, file_line) = raw.str("fertility", "file").ok_or_else(|| {
                raw.line_error(line, "fertility family 'table' needs a 'file' key")
            })?;
            load_table(raw, base_dir, file, file_line, a_dagger)
                .map(Fertility::Tabulated)
        }
        (other, line) => Err(raw.line_error(
            line,
            format!("unknown fertility family '{other}' (constant | table)"),
        )),
    }
}

fn parse_initial(raw: &Raw, a_dagger: f64) -> Result<InitialData> {
    const GAUSSIAN_KEYS: [&str; 5] = ["amplitude", "a_center", "a_width", "x_center", "x_width"];
    match raw.str("initial", "shape").unwrap_or(("uniform", 0)) {
        ("uniform", _) => {
            for key in GAUSSIAN_KEYS {
                raw.forbid("initial", key, "initial shape 'uniform'")?;
            }
            Ok(InitialData::Uniform {
                value: raw.f64("initial", "value", 1.0)?,
            })
        }
        ("gaussian", _) => {
            raw.forbid("initial", "value", "initial shape 'gaussian'")?;
            let a_width = raw.f64("initial", "a_width", a_dagger / 8.0)?;
            let x_width = raw.f64("initial", "x_width", 2.0)?;
            if !a_width.is_finite() || a_width <= 0.0 {
                return Err(raw.key_error(
                    "initial",
                    "a_width",
                    format!("width must be finite and positive, got {a_width}"),
                ));
            }
            if !x_width.is_finite() || x_width <= 0.0 {
                return Err(raw.key_error(
                    "initial",
                    "x_width",
                    format!("width must be finite and positive, got {x_width}"),
                ));
            }
            Ok(InitialData::Gaussian {
                amplitude: raw.f64("initial", "amplitude", 1.0)?,
                a_center: raw.f64("initial", "a_center", a_dagger / 4.0)?,
                a_width,
                x_center: raw.f64("initial", "x_center", 12.0)?,
                x_width,
            })
        }
        (other, line) => Err(raw.line_error(
            line,
            format!("unknown initial shape '{other}' (uniform | gaussian)"),
        )),
    }
}

fn parse_sweep(raw: &Raw) -> Result<Option<SweepSpec>> {
    let Some(section_line) = raw.section_line("sweep") else {
        return Ok(None);
    };
    let task = match raw.str("sweep", "task").unwrap_or(("lambda0", 0)) {
        ("lambda0", _) => SweepTask::Lambda0,
        ("regime", _) => SweepTask::Regime,
        (other, line) => {
            return Err(raw.line_error(
                line,
                format!("unknown sweep task '{other}' (lambda0 | regime)"),
            ))
        }
    };
    let axis1 = parse_axis(raw, "axis1")?
        .ok_or_else(|| raw.line_error(section_line, "a sweep needs at least the axis1 keys"))?;
    let axis2 = parse_axis(raw, "axis2")?;

    let mut axes = vec![axis1];
    axes.extend(axis2);
    let spec = SweepSpec { task, axes };
    if spec.point_count() > 10_000 {
        return Err(raw.line_error(
            section_line,
            format!(
                "sweep would evaluate {} points; the guard allows at most 10000",
                spec.point_count()
            ),
        ));
    }
    Ok(Some(spec))
}

fn parse_axis(raw: &Raw, axis: &str) -> Result<Option<SweepAxis>> {
    let min_key = format!("{axis}_min");
    let max_key = format!("{axis}_max");
    let pts_key = format!("{axis}_points");
    let Some((name, line)) = raw.str("sweep", axis) else {
        for key in [&min_key, &max_key, &pts_key] {
            if let Some((_, l)) = raw.entry("sweep", key) {
                return Err(raw.line_error(*l, format!("'{key}' is set but '{axis}' is not")));
            }
        }
        return Ok(None);
    };
    let param = match name {
        "eta" => AxisParam::Eta,
        "fertility_scale" => AxisParam::FertilityScale,
        other => {
            return Err(raw.line_error(
                line,
                format!("unknown sweep axis '{other}' (eta | fertility_scale)"),
            ))
        }
    };
    if raw.entry("sweep", &min_key).is_none() {
        return Err(raw.line_error(line, format!("axis '{axis}' needs '{min_key}'")));
    }
    let min = raw.f64("sweep", &min_key, f64::NAN)?;
    let max = raw.f64("sweep", &max_key, min)?;
    let points = raw.usize("sweep", &pts_key, 1)?;
    if points == 0 {
        return Err(raw.key_error("sweep", &pts_key, "an axis needs at least one point"));
    }
    let (lo, hi) = (min.min(max), min.max(max));
    let (allowed_lo, allowed_hi) = match param {
        AxisParam::Eta => (0.0, DOMAIN_LEN),
        AxisParam::FertilityScale => (0.0, f64::INFINITY),
    };
    if !lo.is_finite() || !hi.is_finite() || lo <= allowed_lo || hi > allowed_hi {
        return Err(raw.key_error(
            "sweep",
            &min_key,
            format!(
                "axis '{}' values must lie in ({}, {}], got [{lo}, {hi}]",
                param.column_name(),
                allowed_lo,
                allowed_hi
            ),
        ));
    }
    Ok(Some(SweepAxis {
        param,
        values: linspace(min, max, points),
    }))
}

/// Evenly spaced grid hitting both endpoints exactly.
fn linspace(min: f64, max: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![min];
    }
    let step = (max - min) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            if i == points - 1 {
                max
            } else {
                min + step * i as f64
            }
        })
        .collect()
}

fn load_table(
    raw: &Raw,
    base_dir: &Path,
    file: &str,
    file_line: usize,
    a_dagger: f64,
) -> Result<TabulatedRate> {
    let path = base_dir.join(file);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut ages = Vec::new();
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line == "age,value" {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let bad = |what: &str| {
            raw.line_error(
                file_line,
                format!("table {} line {}: {what}", path.display(), i + 1),
            )
        };
        let age = parts.next().unwrap_or("").trim();
        let val = parts.next().ok_or_else(|| bad("expected 'age,value'"))?.trim();
        ages.push(
            age.parse::<f64>()
                .map_err(|_| bad(&format!("bad age '{age}'")))?,
        );
        values.push(
            val.parse::<f64>()
                .map_err(|_| bad(&format!("bad value '{val}'")))?,
        );
    }
    TabulatedRate::new(ages, values, a_dagger).map_err(|e| {
        raw.line_error(file_line, format!("table {}: {e}", path.display()))
    })
}

/// Scanned key/value entries with their line numbers.
struct Raw {
    label: String,
    entries: BTreeMap<(String, String), (String, usize)>,
    section_lines: BTreeMap<String, usize>,
}

impl Raw {
    fn scan(text: &str, label: &str) -> Result<Raw> {
        let mut raw = Raw {
            label: label.to_string(),
            entries: BTreeMap::new(),
            section_lines: BTreeMap::new(),
        };
        let mut section: Option<String> = None;
        for (i, full_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = full_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| raw.line_error(line_no, "unterminated section header"))?
                    .trim()
                    .to_string();
                if !KNOWN.iter().any(|(s, _)| *s == name) {
                    return Err(raw.line_error(line_no, format!("unknown section [{name}]")));
                }
                if raw.section_lines.insert(name.clone(), line_no).is_some() {
                    return Err(raw.line_error(line_no, format!("duplicate section [{name}]")));
                }
                section = Some(name);
                continue;
            }
            let Some(section) = section.as_deref() else {
                return Err(raw.line_error(line_no, "key outside any [section]"));
            };
            let Some((key, value)) = line.split_once('=') else {
                return Err(raw.line_error(line_no, "expected 'key = value'"));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let allowed = KNOWN.iter().find(|(s, _)| *s == section).unwrap().1;
            if !allowed.contains(&key.as_str()) {
                return Err(
                    raw.line_error(line_no, format!("unknown key '{key}' in [{section}]"))
                );
            }
            if raw
                .entries
                .insert((section.to_string(), key.clone()), (value, line_no))
                .is_some()
            {
                return Err(raw.line_error(
                    line_no,
                    format!("duplicate key '{key}' in [{section}]"),
                ));
            }
        }
        Ok(raw)
    }

    fn line_error(&self, line: usize, message: impl Into<String>) -> CliError {
        CliError::Config {
            path: self.label.clone(),
            line,
            message: message.into(),
        }
    }

    fn key_error(&self, section: &str, key: &str, message: impl Into<String>) -> CliError {
        let line = self
            .entry(section, key)
            .map(|(_, l)| *l)
            .or_else(|| self.section_line(section))
            .unwrap_or(0);
        self.line_error(line, message)
    }

    /// Re-home a core validation error onto the config line that set the
    /// offending value, when there is one.
    fn localize(&self, section: &str, e: CoreError) -> CliError {
        let name = match &e {
            CoreError::InvalidParameter { name, .. } | CoreError::OutOfDomain { name, .. } => name,
            _ => return CliError::Core(e),
        };
        match self.entry(section, name) {
            Some((_, line)) => self.line_error(*line, e.to_string()),
            None => CliError::Core(e),
        }
    }

    fn entry(&self, section: &str, key: &str) -> Option<&(String, usize)> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    fn section_line(&self, section: &str) -> Option<usize> {
        self.section_lines.get(section).copied()
    }

    fn str(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.entry(section, key).map(|(v, l)| (v.as_str(), *l))
    }

    fn f64(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.entry(section, key) {
            None => Ok(default),
            Some((v, line)) => v.parse::<f64>().map_err(|_| {
                self.line_error(*line, format!("'{key}' expects a number, got '{v}'"))
            }),
        }
    }

    fn usize(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        match self.entry(section, key) {
            None => Ok(default),
            Some((v, line)) => v.parse::<usize>().map_err(|_| {
                self.line_error(
                    *line,
                    format!("'{key}' expects a nonnegative integer, got '{v}'"),
                )
            }),
        }
    }

    fn bool(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.entry(section, key) {
            None => Ok(default),
            Some((v, line)) => match v.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(self.line_error(
                    *line,
                    format!("'{key}' expects true or false, got '{other}'"),
                )),
            },
        }
    }

    /// Reject a key that does not apply to the selected family or shape.
    fn forbid(&self, section: &str, key: &str, context: &str) -> Result<()> {
        match self.entry(section, key) {
            Some((_, line)) => Err(self.line_error(
                *line,
                format!("key '{key}' does not apply to {context}"),
            )),
            None => Ok(()),
        }
    }
}
