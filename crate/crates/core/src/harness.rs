//! Monte Carlo NMSE-versus-power sweeps, configuration files and result
//! emission (CSV and SVG).
//!
//! Every trial draws from its own ChaCha stream keyed by
//! `(seed, power_index, trial_index)`, and all methods score the same
//! received block, so parallel and serial runs agree bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::warn;
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{sample_channel, synthesize_rx, Scenario, ScenarioConfig};
use crate::error::{Error, Result};
use crate::estimators::{ls_baseline, nmse, run_algorithm1, Method, Target, TrialRecord};
use crate::neural::{estimate_channels_offgrid, NeuralEstimator, OffgridMode};

/// Lower clamp for NMSE values on the log plot axis.
pub const PLOT_FLOOR: f64 = 1e-12;

/// A full sweep: scenario, power axis, trial count and what to score.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub scenario: ScenarioConfig,
    pub power_grid_dbm: Vec<f64>,
    pub trials_per_point: usize,
    pub methods: Vec<Method>,
    pub targets: Vec<Target>,
    /// Directory with trained models, needed when `nn` is requested.
    pub model_dir: Option<PathBuf>,
    /// Run trials on the rayon pool.
    pub parallel: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            power_grid_dbm: default_power_grid(),
            trials_per_point: 500,
            methods: vec![Method::Alg1, Method::Ls],
            targets: Target::ALL.to_vec(),
            model_dir: None,
            parallel: true,
        }
    }
}

/// −10 dBm to 30 dBm in 5 dB steps.
pub fn default_power_grid() -> Vec<f64> {
    (0..9).map(|i| -10.0 + 5.0 * i as f64).collect()
}

impl SweepSpec {
    pub fn off_grid(&self) -> bool {
        self.scenario.off_grid
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.trials_per_point == 0 {
            return Err(Error::InvalidConfig("trials_per_point must be at least 1".into()));
        }
        if self.power_grid_dbm.is_empty() {
            return Err(Error::InvalidConfig("power grid is empty".into()));
        }
        if let Some(p) = self.power_grid_dbm.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig(format!("power {p} dBm is not finite")));
        }
        if self.methods.is_empty() || self.targets.is_empty() {
            return Err(Error::InvalidConfig("methods and targets must be nonempty".into()));
        }
        Ok(())
    }
}

/// Aggregate over the trials of one (power, method, target) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub power_dbm: f64,
    pub method: Method,
    pub target: Target,
    pub mean_nmse: f64,
    pub std_nmse: f64,
    pub n_trials: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Every scored trial, in (power, trial, method, target) order.
    pub trials: Vec<TrialRecord>,
    /// Structured-estimator trials whose OMP support differed from the truth.
    pub support_failures: usize,
}

impl SweepResult {
    pub fn row(&self, power_dbm: f64, method: Method, target: Target) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.power_dbm == power_dbm && r.method == method && r.target == target)
    }

    /// Rows of one curve, by increasing power.
    pub fn curve(&self, method: Method, target: Target) -> Vec<&SweepRow> {
        let mut rows: Vec<&SweepRow> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.target == target)
            .collect();
        rows.sort_by(|a, b| a.power_dbm.total_cmp(&b.power_dbm));
        rows
    }
}

fn trial_rng(seed: u64, power_index: usize, trial_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((power_index as u64) << 32) | trial_index as u64);
    rng
}

struct TrialOutcome {
    records: Vec<TrialRecord>,
    support_failure: bool,
}

fn run_trial(
    scenario: &Scenario<f64>,
    spec: &SweepSpec,
    neural: Option<&NeuralEstimator>,
    power_index: usize,
    trial: usize,
) -> Result<TrialOutcome> {
    let mut rng = trial_rng(scenario.config.seed, power_index, trial);
    let (real, truth) = sample_channel(scenario, &mut rng)?;
    let y = synthesize_rx(scenario, &real, &truth, &mut rng)?;
    let power = scenario.config.tx_power_dbm;
    let mut records = Vec::with_capacity(spec.methods.len() * spec.targets.len());
    let mut support_failure = false;
    for &method in &spec.methods {
        let (h_d, phi) = match method {
            Method::Alg1 => {
                let est = run_algorithm1(&y, &scenario.dictionary, &scenario.codebook, &scenario.config)?;
                if !est.support_matches(&real) {
                    support_failure = true;
                    // Off-grid data makes grid mismatches expected.
                    let level = if scenario.config.off_grid {
                        log::Level::Debug
                    } else {
                        log::Level::Warn
                    };
                    log::log!(
                        level,
                        "support mismatch at {power} dBm, trial {trial}: detected {:?}, true {:?}",
                        est.sorted_support(),
                        real.support()
                    );
                }
                (est.h_d_hat, est.phi_hat)
            }
            Method::Alg1PerfectAoa => {
                let est = estimate_channels_offgrid(&y, scenario, OffgridMode::PerfectAoa(&real))?;
                (est.h_d_hat, est.phi_hat)
            }
            Method::Ls => ls_baseline(&y, &scenario.codebook, &scenario.config)?,
            Method::Nn => {
                let model = neural.ok_or_else(|| Error::InvalidArgument("nn requested without models".into()))?;
                let est = estimate_channels_offgrid(&y, scenario, OffgridMode::Predicted(model))?;
                (est.h_d_hat, est.phi_hat)
            }
        };
        for &target in &spec.targets {
            let value = match target {
                Target::Direct => nmse(&h_d, &truth.h_d)?,
                Target::Ris => nmse(&phi, &truth.phi)?,
            };
            records.push(TrialRecord {
                trial,
                power_dbm: power,
                method,
                target,
                nmse: value,
            });
        }
    }
    Ok(TrialOutcome {
        records,
        support_failure,
    })
}

/// Loads the neural estimator for a sweep, failing before any simulation
/// when a model file is missing.
pub fn load_models(spec: &SweepSpec) -> Result<Option<NeuralEstimator>> {
    if !spec.methods.contains(&Method::Nn) {
        return Ok(None);
    }
    let dir = spec
        .model_dir
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("method nn needs model_dir".into()))?;
    let missing: Vec<String> = NeuralEstimator::required_files(dir, spec.scenario.grid_points)
        .into_iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Model {
            path: dir.display().to_string(),
            message: format!("missing model files: {}", missing.join(", ")),
        });
    }
    Ok(Some(NeuralEstimator::load(dir, spec.scenario.grid_points)?))
}

/// Runs every power point of the sweep and aggregates NMSE in linear scale.
pub fn run_power_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let neural = load_models(spec)?;
    let base = Scenario::<f64>::new(spec.scenario.clone())?;
    let mut trials = Vec::new();
    let mut support_failures = 0;
    for (pi, &power) in spec.power_grid_dbm.iter().enumerate() {
        let scenario = base.with_tx_power(power);
        let run = |t: usize| run_trial(&scenario, spec, neural.as_ref(), pi, t);
        let outcomes: Vec<TrialOutcome> = if spec.parallel {
            (0..spec.trials_per_point)
                .into_par_iter()
                .map(run)
                .collect::<Result<_>>()?
        } else {
            (0..spec.trials_per_point).map(run).collect::<Result<_>>()?
        };
        for o in outcomes {
            support_failures += o.support_failure as usize;
            trials.extend(o.records);
        }
    }
    if support_failures > 0 {
        warn!("{support_failures} structured-estimator trials recovered the wrong support");
    }
    Ok(SweepResult {
        rows: aggregate(&trials),
        trials,
        support_failures,
    })
}

/// Mean and sample standard deviation per (power, method, target), summed
/// in trial order. Rows come out sorted by (method, target, power).
pub fn aggregate(trials: &[TrialRecord]) -> Vec<SweepRow> {
    let mut rows = aggregate_cells(trials);
    rows.sort_by(|a, b| {
        a.method
            .name()
            .cmp(b.method.name())
            .then(a.target.name().cmp(b.target.name()))
            .then(a.power_dbm.total_cmp(&b.power_dbm))
    });
    rows
}

/// Power in dBm plus the (trial, nmse) pairs scored at it.
type Cell = (f64, Vec<(usize, f64)>);

fn aggregate_cells(trials: &[TrialRecord]) -> Vec<SweepRow> {
    let mut cells: BTreeMap<(Method, Target, u64), Cell> = BTreeMap::new();
    for r in trials {
        cells
            .entry((r.method, r.target, r.power_dbm.to_bits()))
            .or_insert_with(|| (r.power_dbm, Vec::new()))
            .1
            .push((r.trial, r.nmse));
    }
    cells
        .into_iter()
        .map(|((method, target, _), (power_dbm, mut values))| {
            values.sort_by_key(|v| v.0);
            let n = values.len();
            let mean = values.iter().map(|v| v.1).sum::<f64>() / n as f64;
            let var = if n > 1 {
                values.iter().map(|v| (v.1 - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            SweepRow {
                power_dbm,
                method,
                target,
                mean_nmse: mean,
                std_nmse: var.sqrt(),
                n_trials: n,
            }
        })
        .collect()
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_real(v: f64) -> String {
    let plain = format!("{v}");
    let sci = format!("{v:e}");
    if sci.len() < plain.len() {
        sci
    } else {
        plain
    }
}

pub const SWEEP_CSV_HEADER: &str = "power_dbm,method,target,mean_nmse,std_nmse,n_trials";

fn sorted_rows(result: &SweepResult) -> Vec<&SweepRow> {
    let mut rows: Vec<&SweepRow> = result.rows.iter().collect();
    rows.sort_by(|a, b| {
        a.method
            .name()
            .cmp(b.method.name())
            .then(a.target.name().cmp(b.target.name()))
            .then(a.power_dbm.total_cmp(&b.power_dbm))
    });
    rows
}

pub fn write_csv<W: Write>(result: &SweepResult, mut out: W) -> Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in sorted_rows(result) {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            format_real(r.power_dbm),
            r.method,
            r.target,
            format_real(r.mean_nmse),
            format_real(r.std_nmse),
            r.n_trials
        )?;
    }
    Ok(())
}

/// Writes the aggregate table, sorted by (method, target, power).
pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(result, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Writes every per-trial record.
pub fn emit_trials_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    TrialRecord::write_csv(&result.trials, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_csv_from<R: BufRead>(input: R) -> Result<SweepResult> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != SWEEP_CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header '{SWEEP_CSV_HEADER}'"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let no = i + 2;
        let perr = |m: String| Error::Parse { line: no, message: m };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(perr(format!("expected 6 fields, found {}", f.len())));
        }
        let real = |s: &str| s.trim().parse::<f64>().map_err(|e| perr(format!("'{s}': {e}")));
        rows.push(SweepRow {
            power_dbm: real(f[0])?,
            method: f[1].parse().map_err(|e: Error| perr(e.to_string()))?,
            target: f[2].parse().map_err(|e: Error| perr(e.to_string()))?,
            mean_nmse: real(f[3])?,
            std_nmse: real(f[4])?,
            n_trials: f[5].trim().parse().map_err(|e| perr(format!("'{}': {e}", f[5])))?,
        });
    }
    Ok(SweepResult {
        rows,
        ..Default::default()
    })
}

pub fn read_csv(path: &Path) -> Result<SweepResult> {
    read_csv_from(BufReader::new(fs::File::open(path)?))
}

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Renders mean NMSE (dB, log axis) against power as an SVG document.
pub fn render_svg(result: &SweepResult) -> Result<String> {
    if result.rows.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let (w, h) = (720.0, 480.0);
    let (left, right, top, bottom) = (80.0, 190.0, 30.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;

    let xs: Vec<f64> = result.rows.iter().map(|r| r.power_dbm).collect();
    let (mut x0, mut x1) = (
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    if x0 == x1 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let logs: Vec<f64> = result
        .rows
        .iter()
        .map(|r| r.mean_nmse.max(PLOT_FLOOR).log10())
        .collect();
    let y0 = logs.iter().copied().fold(f64::INFINITY, f64::min).floor();
    let mut y1 = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil();
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let py = |l: f64| top + (y1 - l) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let step = ((y1 - y0) / 8.0).ceil().max(1.0);
    let mut d = y0;
    while d <= y1 + 1e-9 {
        let y = py(d);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            left + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{}</text>"#,
            left - 6.0,
            y + 4.0,
            d as i64
        );
        d += step;
    }
    let mut powers: Vec<f64> = xs.clone();
    powers.sort_by(f64::total_cmp);
    powers.dedup();
    for p in &powers {
        let x = px(*p);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            top + ph + 18.0,
            format_real(*p)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Transmit power (dBm)</text>"#,
        left + pw / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(20 {:.2}) rotate(-90)" text-anchor="middle">NMSE</text>"#,
        top + ph / 2.0
    );

    let mut curves: Vec<(Method, Target)> = result.rows.iter().map(|r| (r.method, r.target)).collect();
    curves.sort_by(|a, b| a.0.name().cmp(b.0.name()).then(a.1.name().cmp(b.1.name())));
    curves.dedup();
    for (i, (m, t)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let dash = if *t == Target::Ris {
            r#" stroke-dasharray="6 3""#
        } else {
            ""
        };
        let points: Vec<String> = result
            .curve(*m, *t)
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r.power_dbm), py(r.mean_nmse.max(PLOT_FLOOR).log10())))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 16.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
            lx + 24.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{m} / {t}</text>"#, lx + 30.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot(result: &SweepResult, path: &Path) -> Result<()> {
    fs::write(path, render_svg(result)?)?;
    Ok(())
}

fn parse_list<T>(value: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

/// Parses `key = value` lines with `#` comments. Absent keys keep their
/// defaults; unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<SweepSpec> {
    let mut spec = SweepSpec::default();
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |m: String| Error::Parse { line: no, message: m };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| perr(format!("expected 'key = value', found '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        let real = || -> Result<f64> {
            match value {
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => value.parse::<f64>().map_err(|e| perr(format!("{key}: {e}"))),
            }
        };
        let count = |min: usize| -> Result<usize> {
            let v: usize = value.parse().map_err(|e| perr(format!("{key}: {e}")))?;
            if v < min {
                return Err(perr(format!("{key} must be at least {min}")));
            }
            Ok(v)
        };
        let flag = || -> Result<bool> {
            match value {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(perr(format!("{key}: expected true or false"))),
            }
        };
        let sc = &mut spec.scenario;
        match key {
            "M" => sc.num_antennas = count(1)?,
            "ny" => sc.ris_ny = count(1)?,
            "nz" => sc.ris_nz = count(1)?,
            "G" => sc.num_groups = count(1)?,
            "K" => sc.grid_points = count(1)?,
            "L" => sc.num_slots = count(2)?,
            "S" => sc.num_paths = count(0)?,
            "noise_dbm" => sc.noise_dbm = real()?,
            "tx_power_dbm" => sc.tx_power_dbm = real()?,
            "pilot_symbol" => {
                let parts = parse_list(value, |s| s.parse::<f64>().map_err(|e| perr(format!("{key}: {e}"))))?;
                sc.pilot_symbol = match parts.as_slice() {
                    [re] => Complex::new(*re, 0.0),
                    [re, im] => Complex::new(*re, *im),
                    _ => return Err(perr("pilot_symbol takes 're' or 're, im'".into())),
                };
            }
            "seed" => sc.seed = value.parse().map_err(|e| perr(format!("{key}: {e}")))?,
            "off_grid" => sc.off_grid = flag()?,
            "theta0_deg" => sc.theta0_deg = real()?,
            "element_spacing" => sc.element_spacing = real()?,
            "path_separation" => sc.path_separation = real()?,
            "power_grid_dbm" => {
                spec.power_grid_dbm = parse_list(value, |s| s.parse::<f64>().map_err(|e| perr(format!("{key}: {e}"))))?
            }
            "trials_per_point" => spec.trials_per_point = count(1)?,
            "methods" => spec.methods = parse_list(value, |s| s.parse().map_err(|e: Error| perr(e.to_string())))?,
            "targets" => spec.targets = parse_list(value, |s| s.parse().map_err(|e: Error| perr(e.to_string())))?,
            "model_dir" => spec.model_dir = Some(PathBuf::from(value)),
            "parallel" => spec.parallel = flag()?,
            _ => return Err(perr(format!("unknown key '{key}'"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}

pub fn load_config(path: &Path) -> Result<SweepSpec> {
    parse_config(&fs::read_to_string(path)?)
}

/// Serializes a spec so that [`parse_config`] reproduces it.
pub fn to_config_string(spec: &SweepSpec) -> String {
    let sc = &spec.scenario;
    let join = |v: Vec<String>| v.join(", ");
    let mut s = String::new();
    let _ = writeln!(s, "M = {}", sc.num_antennas);
    let _ = writeln!(s, "ny = {}", sc.ris_ny);
    let _ = writeln!(s, "nz = {}", sc.ris_nz);
    let _ = writeln!(s, "G = {}", sc.num_groups);
    let _ = writeln!(s, "K = {}", sc.grid_points);
    let _ = writeln!(s, "L = {}", sc.num_slots);
    let _ = writeln!(s, "S = {}", sc.num_paths);
    let _ = writeln!(s, "noise_dbm = {}", format_real(sc.noise_dbm));
    let _ = writeln!(s, "tx_power_dbm = {}", format_real(sc.tx_power_dbm));
    let _ = writeln!(
        s,
        "pilot_symbol = {}, {}",
        format_real(sc.pilot_symbol.re),
        format_real(sc.pilot_symbol.im)
    );
    let _ = writeln!(s, "seed = {}", sc.seed);
    let _ = writeln!(s, "off_grid = {}", sc.off_grid);
    let _ = writeln!(s, "theta0_deg = {}", format_real(sc.theta0_deg));
    let _ = writeln!(s, "element_spacing = {}", format_real(sc.element_spacing));
    let _ = writeln!(s, "path_separation = {}", format_real(sc.path_separation));
    let _ = writeln!(
        s,
        "power_grid_dbm = {}",
        join(spec.power_grid_dbm.iter().map(|&p| format_real(p)).collect())
    );
    let _ = writeln!(s, "trials_per_point = {}", spec.trials_per_point);
    let _ = writeln!(
        s,
        "methods = {}",
        join(spec.methods.iter().map(|m| m.to_string()).collect())
    );
    let _ = writeln!(
        s,
        "targets = {}",
        join(spec.targets.iter().map(|t| t.to_string()).collect())
    );
    if let Some(dir) = &spec.model_dir {
        let _ = writeln!(s, "model_dir = {}", dir.display());
    }
    let _ = writeln!(s, "parallel = {}", spec.parallel);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SweepSpec {
        SweepSpec {
            scenario: ScenarioConfig {
                ris_ny: 4,
                ris_nz: 4,
                num_groups: 4,
                num_slots: 5,
                seed: 11,
                ..Default::default()
            },
            power_grid_dbm: vec![-10.0, 10.0, 30.0],
            trials_per_point: 6,
            methods: vec![Method::Alg1, Method::Ls, Method::Alg1PerfectAoa],
            ..Default::default()
        }
    }

    #[test]
    fn empty_config_is_default() {
        let spec = parse_config("").unwrap();
        assert_eq!(spec, SweepSpec::default());
        assert_eq!(spec.scenario.num_antennas, 16);
        assert_eq!(spec.scenario.ris_ny * spec.scenario.ris_nz, 256);
        assert_eq!(spec.scenario.grid_points, 32);
        assert_eq!(spec.scenario.noise_dbm, -110.0);
        assert_eq!(
            spec.power_grid_dbm,
            vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
        );
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        let cases = [
            ("# comment\nK = 0\n", 2),
            ("M = 8\nbogus = 1\n", 2),
            ("M = 8\n\nS 3\n", 3),
            ("off_grid = maybe", 1),
            ("methods = alg1, omp", 1),
        ];
        for (text, line) in cases {
            match parse_config(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(parse_config("L = 4"), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn config_round_trip() {
        let mut spec = small_spec();
        spec.scenario.noise_dbm = f64::NEG_INFINITY;
        spec.scenario.pilot_symbol = Complex::new(0.6, -0.8);
        spec.scenario.off_grid = true;
        spec.model_dir = Some(PathBuf::from("models/a"));
        spec.parallel = false;
        spec.power_grid_dbm = vec![0.1, 1e-7, 25.0];
        let text = to_config_string(&spec);
        assert_eq!(parse_config(&text).unwrap(), spec);
        let with_comments = format!("# header\n{}  # trailing\n", text.replace("M = 16", "M = 16 # bs"));
        assert_eq!(parse_config(&with_comments).unwrap(), spec);
    }

    #[test]
    fn noiseless_single_trial_is_exact() {
        let spec = SweepSpec {
            scenario: ScenarioConfig {
                noise_dbm: f64::NEG_INFINITY,
                ..Default::default()
            },
            power_grid_dbm: vec![0.0],
            trials_per_point: 1,
            methods: vec![Method::Alg1],
            ..Default::default()
        };
        let r = run_power_sweep(&spec).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|row| row.mean_nmse < 1e-8 && row.n_trials == 1));
    }

    #[test]
    fn parallel_equals_serial_and_reruns_match() {
        let spec = small_spec();
        let a = run_power_sweep(&spec).unwrap();
        let b = run_power_sweep(&SweepSpec {
            parallel: false,
            ..spec.clone()
        })
        .unwrap();
        let c = run_power_sweep(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.rows.len(), 3 * 3 * 2);
        assert_eq!(a.trials.len(), 3 * 6 * 3 * 2);
    }

    #[test]
    fn all_methods_see_the_same_block() {
        // On-grid, noiseless-limit power: the perfect-AoA variant and
        // the structured estimator agree whenever OMP finds the true support.
        let spec = SweepSpec {
            power_grid_dbm: vec![30.0],
            ..small_spec()
        };
        let r = run_power_sweep(&spec).unwrap();
        let alg1 = r.row(30.0, Method::Alg1, Target::Direct).unwrap().mean_nmse;
        let perfect = r.row(30.0, Method::Alg1PerfectAoa, Target::Direct).unwrap().mean_nmse;
        assert_eq!(r.support_failures, 0);
        assert!((alg1 / perfect - 1.0).abs() < 1e-6, "{alg1} vs {perfect}");
    }

    #[test]
    fn missing_models_fail_before_simulating() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            methods: vec![Method::Nn],
            model_dir: Some(dir.path().to_path_buf()),
            ..small_spec()
        };
        assert!(matches!(run_power_sweep(&spec), Err(Error::Model { .. })));
        let no_dir = SweepSpec {
            methods: vec![Method::Nn],
            ..small_spec()
        };
        assert!(run_power_sweep(&no_dir).is_err());
    }

    #[test]
    fn csv_sorted_and_round_trips() {
        let r = run_power_sweep(&small_spec()).unwrap();
        let mut buf = Vec::new();
        write_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SWEEP_CSV_HEADER);
        assert_eq!(lines.len(), 1 + 18);
        assert!(lines[1].starts_with("-10,alg1,direct,"));
        assert!(lines[4].starts_with("-10,alg1,ris,"));
        assert!(lines[7].starts_with("-10,alg1-perfect-aoa,direct,"));
        let back = read_csv_from(buf.as_slice()).unwrap();
        let mut expect: Vec<SweepRow> = sorted_rows(&r).into_iter().cloned().collect();
        assert_eq!(back.rows.len(), expect.len());
        for (a, b) in back.rows.iter().zip(expect.drain(..)) {
            assert_eq!(*a, b);
        }
        let mut empty = Vec::new();
        write_csv(&SweepResult::default(), &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), format!("{SWEEP_CSV_HEADER}\n"));
    }

    #[test]
    fn shortest_reals() {
        for v in [
            0.0,
            1.0,
            -10.0,
            0.1,
            1e-10,
            3.2e-15,
            123456.789,
            f64::MIN_POSITIVE,
            1e300,
        ] {
            let s = format_real(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(format_real(1e-10), "1e-10");
        assert_eq!(format_real(-10.0), "-10");
        assert_eq!(format_real(0.25), "0.25");
    }

    fn row(p: f64, m: Method, t: Target, v: f64) -> SweepRow {
        SweepRow {
            power_dbm: p,
            method: m,
            target: t,
            mean_nmse: v,
            std_nmse: 0.0,
            n_trials: 1,
        }
    }

    #[test]
    fn plot_one_curve_three_vertices() {
        let r = SweepResult {
            rows: vec![
                row(0.0, Method::Alg1, Target::Direct, 1e-2),
                row(10.0, Method::Alg1, Target::Direct, 1e-3),
                row(20.0, Method::Alg1, Target::Direct, 0.0),
            ],
            ..Default::default()
        };
        let svg = render_svg(&r).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 3);
        // Zero NMSE is drawn at the floor, the bottom of a 1e-12..1e-2 axis.
        assert!(svg.contains(">1e-12<"));
        assert_eq!(svg, render_svg(&r).unwrap());
        assert!(render_svg(&SweepResult::default()).is_err());
    }

    #[test]
    fn aggregate_statistics() {
        let recs: Vec<TrialRecord> = [1.0, 2.0, 3.0, 6.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| TrialRecord {
                trial: i,
                power_dbm: 5.0,
                method: Method::Ls,
                target: Target::Ris,
                nmse: v,
            })
            .collect();
        let rows = aggregate(&recs);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean_nmse, 3.0);
        assert!((rows[0].std_nmse - (14.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(rows[0].n_trials, 4);
    }
}
