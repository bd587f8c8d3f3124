//! Experiment driver: configuration, solve, diagnostics and artifacts.
//!
//! A run directory contains `manifest.json`, `regime.json` and, when the
//! configuration solves, `solution.bin` with its sidecar, `fbcurve.csv`
//! and one artifact per enabled diagnostic. Every JSON artifact carries a
//! `schema_version`; CSV files start with a `# schema_version=` line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::flat;
use crate::freeboundary::{self, FBCurve};
use crate::grid::{self, Grid, SmoothingParams};
use crate::io::{self, SCHEMA_VERSION};
use crate::minimizer::{self, CheckpointSpec, MinimizeOptions, Solution, StageReport, Start, StartSummary};
use crate::regimes::{self, ProblemParams, RegimeReport};
use crate::weiss::{self, BlowupClass, BlowupField, ProbeOptions, QuadratureSpec, WeissSeries};

pub const SOLUTION_FILE: &str = "solution.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub y_max: f64,
}

/// Either an explicit decreasing schedule or a geometric halving from
/// `start` down to `floor` (default `4 dx`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSpec {
    #[serde(default = "default_eps_start")]
    pub start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
}

fn default_eps_start() -> f64 {
    0.2
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        SmoothingSpec {
            start: default_eps_start(),
            floor: None,
            schedule: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub max_iters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    pub armijo: f64,
    pub even: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symmetrize_every: Option<usize>,
    pub levels: usize,
    /// Checkpoint cadence in iterations; checkpoints go to `<out>/checkpoints`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = MinimizeOptions::default();
        SolverSpec {
            max_iters: d.max_iters,
            grad_tol: d.grad_tol,
            armijo: d.armijo,
            even: d.even,
            symmetrize_every: d.symmetrize_every,
            levels: d.levels,
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeissDiag {
    pub enabled: bool,
    /// Radii as multiples of `min(gamma, h - gamma)`.
    pub radii: Vec<f64>,
    pub angular: usize,
    /// Radial nodes; `None` uses `max(64, r/dx)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radial: Option<usize>,
}

impl Default for WeissDiag {
    fn default() -> Self {
        WeissDiag {
            enabled: true,
            radii: vec![0.05, 0.1, 0.2, 0.4],
            angular: 512,
            radial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlowupDiag {
    pub enabled: bool,
    pub rhos: Vec<f64>,
    pub radius: f64,
    /// Nodes per side of the patch (odd).
    pub nodes: usize,
    /// Width of the excluded neighbourhood of the nonnegative `t`-axis.
    pub eta: f64,
    /// Classification tolerance as a multiple of `h - gamma`.
    pub tol_factor: f64,
}

impl Default for BlowupDiag {
    fn default() -> Self {
        BlowupDiag {
            enabled: true,
            rhos: vec![0.1, 0.05, 0.025],
            radius: 1.0,
            nodes: 101,
            eta: 0.1,
            tol_factor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactDiag {
    pub enabled: bool,
    pub depth: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl Default for ContactDiag {
    fn default() -> Self {
        ContactDiag {
            enabled: true,
            depth: 6,
            delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BernoulliDiag {
    pub enabled: bool,
}

impl Default for BernoulliDiag {
    fn default() -> Self {
        BernoulliDiag { enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeDiag {
    pub enabled: bool,
    pub k: f64,
    pub samples: usize,
    pub angular: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<(f64, f64)>,
}

impl Default for ProbeDiag {
    fn default() -> Self {
        let d = ProbeOptions::default();
        ProbeDiag {
            enabled: true,
            k: d.k,
            samples: d.samples,
            angular: d.angular,
            radii: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Diagnostics {
    pub weiss: WeissDiag,
    pub blowup: BlowupDiag,
    pub contact: ContactDiag,
    pub bernoulli: BernoulliDiag,
    pub probe: ProbeDiag,
}

impl Diagnostics {
    /// All diagnostics switched off.
    pub fn none() -> Diagnostics {
        let mut d = Diagnostics::default();
        d.weiss.enabled = false;
        d.blowup.enabled = false;
        d.contact.enabled = false;
        d.bernoulli.enabled = false;
        d.probe.enabled = false;
        d
    }

    fn needs_contact_point(&self) -> bool {
        self.weiss.enabled || self.blowup.enabled || self.contact.enabled || self.probe.enabled
    }
}

fn default_true() -> bool {
    true
}

fn default_starts() -> Vec<Start> {
    Start::defaults()
}

/// One experiment, read from TOML (or from the `config` echo of a manifest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ProblemParams,
    pub grid: GridSpec,
    #[serde(default)]
    pub smoothing: SmoothingSpec,
    #[serde(default = "default_starts")]
    pub starts: Vec<Start>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    /// When false the run stops after the regime analysis.
    #[serde(default = "default_true")]
    pub solve: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Defaults for the given parameters and grid.
    pub fn new(params: ProblemParams, grid: GridSpec) -> RunConfig {
        RunConfig {
            params,
            grid,
            smoothing: SmoothingSpec::default(),
            starts: Start::defaults(),
            solver: SolverSpec::default(),
            diagnostics: Diagnostics::default(),
            solve: true,
            output_dir: None,
            deterministic: false,
            seed: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::config(toml_field(&e), e.message().to_string()))
    }

    /// Reads a TOML config, or the config echoed in a `manifest.json`.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            let manifest: Manifest = serde_json::from_str(&text)
                .map_err(|e| Error::config("--config", format!("{}: not a run manifest: {e}", path.display())))?;
            manifest.config
        } else {
            RunConfig::from_toml(&text)?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate().map_err(|e| prefix_field("params", e))?;
        if self.solve {
            self.build_grid()?;
            self.smoothing_params()?;
            self.minimize_options(None)?;
            if self.starts.is_empty() {
                return Err(Error::config("starts", "must name at least one initializer"));
            }
            for (k, s) in self.starts.iter().enumerate() {
                if let Start::Checkpoint { path } = s {
                    if !path.exists() {
                        return Err(Error::config(format!("starts[{k}].path"), format!("{} does not exist", path.display())));
                    }
                }
                if let Start::Flat { t } = s {
                    if !(*t > 0.0) {
                        return Err(Error::config(format!("starts[{k}].t"), "must be positive"));
                    }
                }
            }
            self.validate_diagnostics()?;
        }
        Ok(())
    }

    fn validate_diagnostics(&self) -> Result<()> {
        let d = &self.diagnostics;
        let p = &self.params;
        if d.needs_contact_point() && p.gamma >= p.h {
            return Err(Error::config(
                "params.gamma",
                "contact-point diagnostics need gamma < h; disable weiss, blowup, contact and probe",
            ));
        }
        let r0 = weiss::contact_radius_bound(p);
        let scale = p.gamma.min(p.h - p.gamma);
        if d.weiss.enabled {
            let r = &d.weiss.radii;
            if r.is_empty() || r.iter().any(|f| !(*f > 0.0)) || r.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config("diagnostics.weiss.radii", "must be positive and increasing"));
            }
            let last = r.last().unwrap() * scale;
            if last >= r0 {
                return Err(Error::config(
                    "diagnostics.weiss.radii",
                    format!("largest radius {last} reaches the contact neighbourhood bound {r0}"),
                ));
            }
            if d.weiss.angular < 8 || d.weiss.radial.is_some_and(|n| n == 0) {
                return Err(Error::config("diagnostics.weiss", "too few quadrature nodes"));
            }
        }
        if d.blowup.enabled {
            let b = &d.blowup;
            if b.rhos.is_empty() || b.rhos.iter().any(|r| !(*r > 0.0)) {
                return Err(Error::config("diagnostics.blowup.rhos", "must be positive"));
            }
            if !(b.radius >= 1.0) {
                return Err(Error::config("diagnostics.blowup.radius", "must be at least 1 to cover B_1"));
            }
            if let Some(rho) = b.rhos.iter().find(|&&rho| rho * b.radius >= r0) {
                return Err(Error::config(
                    "diagnostics.blowup.rhos",
                    format!("rho R = {} reaches the contact neighbourhood bound {r0}", rho * b.radius),
                ));
            }
            if b.nodes < 3 || b.nodes % 2 == 0 {
                return Err(Error::config("diagnostics.blowup.nodes", "must be odd and at least 3"));
            }
            if !(b.eta >= 0.0) || !(b.tol_factor > 0.0) {
                return Err(Error::config("diagnostics.blowup", "eta must be nonnegative and tol_factor positive"));
            }
        }
        if d.contact.enabled && d.contact.delta.is_some_and(|x| !(x > 0.0)) {
            return Err(Error::config("diagnostics.contact.delta", "must be positive"));
        }
        if d.probe.enabled {
            if !(d.probe.k > 0.0 && d.probe.k < 1.0) {
                return Err(Error::config("diagnostics.probe.k", "must lie in (0, 1)"));
            }
            if d.probe.samples == 0 || d.probe.angular < 8 {
                return Err(Error::config("diagnostics.probe", "samples and angular nodes must be positive"));
            }
            if let Some((a, b)) = d.probe.radii {
                if !(a > 0.0 && a <= b) {
                    return Err(Error::config("diagnostics.probe.radii", "need 0 < r_min <= r_max"));
                }
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid> {
        let g = &self.grid;
        if g.nx < 4 || g.nx % 2 != 0 {
            return Err(Error::config("grid.nx", format!("must be even and at least 4, got {}", g.nx)));
        }
        if g.ny < 2 {
            return Err(Error::config("grid.ny", format!("must be at least 2, got {}", g.ny)));
        }
        if !(g.y_max > self.params.h) {
            return Err(Error::config("grid.y_max", format!("must exceed h = {}, got {}", self.params.h, g.y_max)));
        }
        Grid::build(self.params, g.nx, g.ny, g.y_max).map_err(|e| prefix_field("grid", e))
    }

    pub fn smoothing_params(&self) -> Result<SmoothingParams> {
        let grid = self.build_grid()?;
        let s = match &self.smoothing.schedule {
            Some(list) => SmoothingParams {
                eps: *list.last().unwrap_or(&0.0),
                schedule: list.clone(),
            },
            None => {
                let floor = self.smoothing.floor.unwrap_or(4.0 * grid.dx);
                if !(self.smoothing.start > 0.0 && floor > 0.0) {
                    return Err(Error::config("smoothing", "start and floor must be positive"));
                }
                SmoothingParams::geometric(self.smoothing.start.max(floor), floor)
            }
        };
        s.validate(&grid)?;
        Ok(s)
    }

    pub fn minimize_options(&self, checkpoint_dir: Option<&Path>) -> Result<MinimizeOptions> {
        let s = &self.solver;
        if s.max_iters == 0 {
            return Err(Error::config("solver.max_iters", "must be positive"));
        }
        if s.levels == 0 {
            return Err(Error::config("solver.levels", "must be positive"));
        }
        if !(s.armijo > 0.0 && s.armijo < 1.0) {
            return Err(Error::config("solver.armijo", "must lie in (0, 1)"));
        }
        if s.grad_tol.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::config("solver.grad_tol", "must be positive"));
        }
        if s.symmetrize_every == Some(0) || s.checkpoint_every == Some(0) {
            return Err(Error::config("solver", "cadences must be positive"));
        }
        Ok(MinimizeOptions {
            max_iters: s.max_iters,
            grad_tol: s.grad_tol,
            armijo: s.armijo,
            even: s.even,
            symmetrize_every: s.symmetrize_every,
            levels: s.levels,
            checkpoint: match (s.checkpoint_every, checkpoint_dir) {
                (Some(every), Some(dir)) => Some(CheckpointSpec {
                    dir: dir.join("checkpoints"),
                    every,
                }),
                _ => None,
            },
            exec: Exec::Parallel,
        })
    }
}

fn toml_field(e: &toml::de::Error) -> String {
    // The message names the offending key when there is one.
    let msg = e.message();
    match msg.split('`').nth(1) {
        Some(key) if msg.contains("unknown field") || msg.contains("missing field") => key.to_string(),
        _ => "config".to_string(),
    }
}

fn prefix_field(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::config(format!("{prefix}.{field}"), message),
        Error::Domain(message) => Error::config(prefix, message),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl ToolInfo {
    fn current() -> ToolInfo {
        ToolInfo {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub solve_seconds: f64,
    pub diagnostics_seconds: f64,
}

/// Energies of the run next to the flat references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub energy: f64,
    /// Energy with the sharp indicator `u_bar > eps_final / 2`.
    pub sharp_energy: f64,
    pub eps_final: f64,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
    pub starts_used: usize,
    pub start_label: String,
    /// `lambda E_star`, the best flat energy without the lateral constraint.
    pub flat_best_energy: f64,
    /// `lambda E(gamma)`, the energy of the datum itself.
    pub datum_energy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oscillation: Option<f64>,
    pub dy: f64,
    pub stages: Vec<StageReport>,
    pub starts: Vec<StartSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticError {
    pub diagnostic: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: ToolInfo,
    pub command: String,
    /// The resolved configuration; `output_dir` is not echoed.
    pub config: RunConfig,
    pub deterministic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<SolutionSummary>,
    pub artifacts: Vec<ArtifactEntry>,
    #[serde(default)]
    pub diagnostic_errors: Vec<DiagnosticError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeArtifact {
    pub schema_version: u32,
    pub params: ProblemParams,
    #[serde(flatten)]
    pub report: RegimeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliArtifact {
    pub schema_version: u32,
    pub threshold: f64,
    #[serde(flatten)]
    pub stats: freeboundary::BernoulliStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupEntry {
    pub rho: f64,
    pub file: String,
    /// Classification against `(h - gamma)(-t)_+`.
    pub class: BlowupClass,
    /// Classification against the slope `sqrt(h - gamma)` of the gradient condition.
    pub class_gradient_slope: BlowupClass,
    /// Hausdorff distance of the free boundary to that of the classified
    /// half-plane; absent when either boundary is empty.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hausdorff_to_limit: Option<f64>,
    pub max_gradient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationArtifact {
    pub schema_version: u32,
    pub coeff: f64,
    pub tol: f64,
    pub eta: f64,
    pub radius: f64,
    pub entries: Vec<BlowupEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ErrorArtifact {
    schema_version: u32,
    error: DiagnosticError,
}

/// Process-level options that are not part of the experiment itself.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    pub threads: Option<usize>,
    /// Overrides the config's `deterministic` flag when true.
    pub deterministic: bool,
}

/// Writes `regime.json` and a manifest.
pub fn run_regimes(cfg: &RunConfig, opts: &RunOptions) -> Result<Manifest> {
    cfg.params.validate().map_err(|e| prefix_field("params", e))?;
    let mut writer = ArtifactWriter::new(&opts.out)?;
    write_regime(&mut writer, &cfg.params)?;
    let deterministic = opts.deterministic || cfg.deterministic;
    let mut echo = cfg.clone();
    echo.output_dir = None;
    echo.deterministic = deterministic;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool: ToolInfo::current(),
        command: "regimes".into(),
        config: echo,
        deterministic,
        threads: None,
        timings: None,
        solution: None,
        artifacts: writer.entries(),
        diagnostic_errors: Vec::new(),
    };
    io::write_json(&opts.out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn write_regime(writer: &mut ArtifactWriter, params: &ProblemParams) -> Result<()> {
    let report = regimes::classify_gamma(params).map_err(|e| prefix_field("params", e))?;
    writer.json(
        "regime.json",
        &RegimeArtifact {
            schema_version: SCHEMA_VERSION,
            params: *params,
            report,
        },
    )
}

/// Full pipeline: regime analysis, solve, and the enabled diagnostics.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<Manifest> {
    cfg.validate()?;
    if !cfg.solve {
        return run_regimes(cfg, opts);
    }
    exec::with_threads(opts.threads, || run_inner(cfg, opts))
}

fn run_inner(cfg: &RunConfig, opts: &RunOptions) -> Result<Manifest> {
    let deterministic = opts.deterministic || cfg.deterministic;
    let mut writer = ArtifactWriter::new(&opts.out)?;
    write_regime(&mut writer, &cfg.params)?;

    let grid = cfg.build_grid()?;
    let smoothing = cfg.smoothing_params()?;
    let mopts = cfg.minimize_options(Some(&opts.out))?;
    let t0 = Instant::now();
    let solution = minimizer::minimize(&grid, &smoothing, &cfg.starts, &mopts)?;
    let solve_seconds = t0.elapsed().as_secs_f64();
    if !solution.converged {
        log::warn!("solver stopped at the iteration cap; recording converged = false");
    }
    let header = io::write_field(&opts.out.join(SOLUTION_FILE), &solution.field, solution.eps_final)?;
    writer.record_file(SOLUTION_FILE, header.sha256.clone());
    writer.record_json_file("solution.json")?;

    let t1 = Instant::now();
    let (curve, errors) = run_diagnostics(&solution, cfg, &mut writer)?;
    let diagnostics_seconds = t1.elapsed().as_secs_f64();

    let summary = summarize(&solution, &curve)?;
    let mut echo = cfg.clone();
    echo.output_dir = None;
    echo.deterministic = deterministic;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool: ToolInfo::current(),
        command: "solve".into(),
        config: echo,
        deterministic,
        threads: if deterministic { None } else { Some(current_threads()) },
        timings: (!deterministic).then_some(Timings {
            solve_seconds,
            diagnostics_seconds,
        }),
        solution: Some(summary),
        artifacts: writer.entries(),
        diagnostic_errors: errors,
    };
    io::write_json(&opts.out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

fn summarize(solution: &Solution, curve: &FBCurve) -> Result<SolutionSummary> {
    let g = &solution.field.grid;
    let p = g.params;
    let (_, e_star) = flat::best_flat_profile(p.m, p.h)?;
    Ok(SolutionSummary {
        energy: solution.energy,
        sharp_energy: grid::sharp_energy(&solution.field, 0.5 * solution.eps_final)?,
        eps_final: solution.eps_final,
        converged: solution.converged,
        grad_norm: solution.grad_norm,
        iterations: solution.iterations,
        starts_used: solution.starts_used,
        start_label: solution.start_label.clone(),
        flat_best_energy: p.lambda * e_star,
        datum_energy: flat::dirichlet_datum_energy(&p)?,
        oscillation: freeboundary::oscillation(curve).ok(),
        dy: g.dy,
        stages: solution.stages.clone(),
        starts: solution.starts.clone(),
    })
}

/// Re-runs the enabled diagnostics on the solution stored in `run_dir`.
///
/// `cfg` defaults to the configuration echoed in the run's manifest.
pub fn diagnose(run_dir: &Path, cfg: Option<&RunConfig>, threads: Option<usize>) -> Result<Manifest> {
    let manifest_path = run_dir.join(MANIFEST_FILE);
    let mut manifest: Manifest = io::read_json(&manifest_path)?;
    let (field, header) = io::read_field(&run_dir.join(SOLUTION_FILE))?;
    let mut cfg = cfg.cloned().unwrap_or_else(|| manifest.config.clone());
    if cfg.params != header.params {
        return Err(Error::config("params", "configuration parameters differ from the stored solution"));
    }
    cfg.solve = true;
    cfg.validate_diagnostics()?;
    let solution = Solution::from_field(field, header.eps_final)?;
    exec::with_threads(threads, || {
        let mut writer = ArtifactWriter::new(run_dir)?;
        let t0 = Instant::now();
        let (curve, errors) = run_diagnostics(&solution, &cfg, &mut writer)?;
        let mut merged: BTreeMap<String, String> =
            manifest.artifacts.iter().map(|a| (a.name.clone(), a.sha256.clone())).collect();
        for a in writer.entries() {
            merged.insert(a.name, a.sha256);
        }
        manifest.artifacts = merged.into_iter().map(|(name, sha256)| ArtifactEntry { name, sha256 }).collect();
        manifest.diagnostic_errors = errors;
        manifest.config.diagnostics = cfg.diagnostics.clone();
        if let Some(s) = manifest.solution.as_mut() {
            s.oscillation = freeboundary::oscillation(&curve).ok();
        }
        if let Some(t) = manifest.timings.as_mut() {
            t.diagnostics_seconds = t0.elapsed().as_secs_f64();
        }
        io::write_json(&manifest_path, &manifest)?;
        Ok(manifest)
    })
}

/// Writes `fbcurve.csv` and every enabled diagnostic. Failures that only
/// concern one diagnostic are written into its artifact and returned.
fn run_diagnostics(
    solution: &Solution,
    cfg: &RunConfig,
    writer: &mut ArtifactWriter,
) -> Result<(FBCurve, Vec<DiagnosticError>)> {
    let params = solution.field.grid.params;
    let d = &cfg.diagnostics;
    let mut errors = Vec::new();
    let cell = solution.field.grid.dx.max(solution.field.grid.dy);
    let scale = params.gamma.min(params.h - params.gamma);
    if d.weiss.enabled && d.weiss.radii.first().is_some_and(|f| f * scale < cell) {
        log::warn!("smallest Weiss radius is below one grid cell ({cell})");
    }
    if d.blowup.enabled && d.blowup.rhos.iter().any(|&rho| rho < cell) {
        log::warn!("a blow-up scale is below one grid cell ({cell})");
    }
    let curve = freeboundary::extract_graph(solution, None);
    writer.text("fbcurve.csv", &curve.to_csv())?;

    if d.bernoulli.enabled {
        let res = freeboundary::bernoulli_check(solution, &curve).map(|stats| BernoulliArtifact {
            schema_version: SCHEMA_VERSION,
            threshold: curve.threshold,
            stats,
        });
        writer.json_or_error("bernoulli.json", "bernoulli", res, &mut errors)?;
    }
    if d.contact.enabled {
        let res = freeboundary::contact_ratios(&curve, &params, d.contact.depth, d.contact.delta);
        writer.json_or_error("contact.json", "contact", res, &mut errors)?;
    }
    if d.weiss.enabled {
        let radii: Vec<f64> = d.weiss.radii.iter().map(|f| f * scale).collect();
        let quad = QuadratureSpec {
            angular: d.weiss.angular,
            radial: d
                .weiss
                .radial
                .unwrap_or_else(|| QuadratureSpec::default_for(*radii.last().unwrap(), solution.field.grid.dx).radial),
        };
        match weiss::weiss_series(solution, &radii, Some(quad)) {
            Ok(series) => writer.text("weiss.csv", &series.to_csv())?,
            Err(e) => {
                let err = diag_error("weiss", &e);
                writer.text("weiss.csv", &format!("# schema_version={SCHEMA_VERSION}\n# error={}: {}\n", err.kind, err.message))?;
                errors.push(err);
            }
        }
    }
    if d.blowup.enabled {
        match blowup_diagnostic(solution, &d.blowup, writer) {
            Ok(art) => writer.json("classification.json", &art)?,
            Err(e) => {
                let err = diag_error("blowup", &e);
                writer.json("classification.json", &ErrorArtifact { schema_version: SCHEMA_VERSION, error: err.clone() })?;
                errors.push(err);
            }
        }
    }
    if d.probe.enabled {
        let opts = ProbeOptions {
            k: d.probe.k,
            samples: d.probe.samples,
            seed: cfg.seed,
            radii: d.probe.radii,
            angular: d.probe.angular,
        };
        let res = weiss::nondegeneracy_probe(solution, &opts);
        writer.json_or_error("probe.json", "probe", res, &mut errors)?;
    }
    Ok((curve, errors))
}

fn blowup_diagnostic(solution: &Solution, b: &BlowupDiag, writer: &mut ArtifactWriter) -> Result<ClassificationArtifact> {
    let p = solution.field.grid.params;
    let coeff = p.h - p.gamma;
    let tol = b.tol_factor * coeff;
    let slope = coeff.sqrt();
    let mut entries = Vec::with_capacity(b.rhos.len());
    for (k, &rho) in b.rhos.iter().enumerate() {
        let field = weiss::blowup_rescale(solution, rho, b.radius, b.nodes)?;
        let file = format!("blowup_{k}.bin");
        let header = weiss::write_blowup(&writer.dir.join(&file), &field)?;
        writer.record_file(&file, header.sha256);
        writer.record_json_file(&format!("blowup_{k}.json"))?;
        let class = weiss::classify_blowup(&field, coeff, tol);
        let class_gradient_slope = weiss::classify_blowup(&field, slope, b.tol_factor * slope);
        let limit_coeff = if class_gradient_slope.distance_halfplane < class.distance_halfplane { slope } else { coeff };
        let limit = BlowupField::from_fn(p, rho, b.radius, b.nodes, field.threshold, |_, t| limit_coeff * (-t).max(0.0))?;
        let hausdorff_to_limit = weiss::hausdorff_fb_distance(&field, &limit, b.eta).ok();
        entries.push(BlowupEntry {
            rho,
            file,
            class,
            class_gradient_slope,
            hausdorff_to_limit,
            max_gradient: field.max_gradient(),
        });
    }
    Ok(ClassificationArtifact {
        schema_version: SCHEMA_VERSION,
        coeff,
        tol,
        eta: b.eta,
        radius: b.radius,
        entries,
    })
}

fn diag_error(diagnostic: &str, e: &Error) -> DiagnosticError {
    log::warn!("{diagnostic} diagnostic failed: {e}");
    DiagnosticError {
        diagnostic: diagnostic.into(),
        kind: e.kind().into(),
        message: e.to_string(),
    }
}

/// Writes files into a run directory and records their checksums.
struct ArtifactWriter {
    dir: PathBuf,
    entries: BTreeMap<String, String>,
}

impl ArtifactWriter {
    fn new(dir: &Path) -> Result<ArtifactWriter> {
        fs::create_dir_all(dir).map_err(|e| Error::config("--out", format!("{}: {e}", dir.display())))?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            entries: BTreeMap::new(),
        })
    }

    fn record_file(&mut self, name: &str, sha256: String) {
        self.entries.insert(name.to_string(), sha256);
    }

    fn record_json_file(&mut self, name: &str) -> Result<()> {
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.record_file(name, io::sha256_hex(&bytes));
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        io::write_bytes(&self.dir.join(name), text.as_bytes())?;
        self.record_file(name, io::sha256_hex(text.as_bytes()));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        io::write_json(&self.dir.join(name), value)?;
        self.record_json_file(name)
    }

    fn json_or_error<T: Serialize>(
        &mut self,
        name: &str,
        diagnostic: &str,
        res: Result<T>,
        errors: &mut Vec<DiagnosticError>,
    ) -> Result<()> {
        match res {
            Ok(v) => self.json(name, &v),
            Err(e) => {
                let err = diag_error(diagnostic, &e);
                self.json(name, &ErrorArtifact { schema_version: SCHEMA_VERSION, error: err.clone() })?;
                errors.push(err);
                Ok(())
            }
        }
    }

    fn entries(&self) -> Vec<ArtifactEntry> {
        self.entries
            .iter()
            .map(|(name, sha256)| ArtifactEntry {
                name: name.clone(),
                sha256: sha256.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeissDelta {
    pub r: f64,
    pub phi_a: f64,
    pub phi_b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub grid_a: (usize, usize),
    pub grid_b: (usize, usize),
    pub energy_a: f64,
    pub energy_b: f64,
    /// `energy_b - energy_a`.
    pub energy_delta: f64,
    /// Largest `|g_a - g_b|` over samples where both curves are defined.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fbcurve_sup_distance: Option<f64>,
    pub fbcurve_common_samples: usize,
    pub weiss: Vec<WeissDelta>,
}

fn load_run(dir: &Path) -> Result<(Manifest, FBCurve, Option<Vec<(f64, f64)>>)> {
    let manifest: Manifest = io::read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.solution.is_none() {
        return Err(Error::Artifact {
            path: dir.join(MANIFEST_FILE),
            message: "run has no solution".into(),
        });
    }
    let csv_path = dir.join("fbcurve.csv");
    let text = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let curve = FBCurve::from_csv(&text, 0.0, manifest.config.params.lambda).map_err(|e| Error::Artifact {
        path: csv_path.clone(),
        message: e.to_string(),
    })?;
    let weiss_path = dir.join("weiss.csv");
    let weiss = match fs::read_to_string(&weiss_path) {
        Ok(text) => Some(WeissSeries::from_csv(&text).map_err(|e| Error::Artifact {
            path: weiss_path.clone(),
            message: e.to_string(),
        })?),
        Err(_) => None,
    };
    Ok((manifest, curve, weiss))
}

fn one_sided_sup(a: &FBCurve, b: &FBCurve) -> (f64, usize) {
    let mut sup: f64 = 0.0;
    let mut n = 0;
    for (y, ga) in a.defined() {
        if let Some(gb) = b.eval(y) {
            sup = sup.max((ga - gb).abs());
            n += 1;
        }
    }
    (sup, n)
}

/// Energy, free-boundary and Weiss differences between two completed runs.
pub fn compare(run_a: &Path, run_b: &Path) -> Result<CompareReport> {
    let (ma, ca, wa) = load_run(run_a)?;
    let (mb, cb, wb) = load_run(run_b)?;
    if ma.config.params != mb.config.params {
        return Err(Error::config(
            "params",
            format!("runs have different parameters: {:?} vs {:?}", ma.config.params, mb.config.params),
        ));
    }
    let sa = ma.solution.as_ref().unwrap();
    let sb = mb.solution.as_ref().unwrap();
    let (d1, n1) = one_sided_sup(&ca, &cb);
    let (d2, n2) = one_sided_sup(&cb, &ca);
    let mut weiss = Vec::new();
    if let (Some(wa), Some(wb)) = (wa, wb) {
        for &(r, phi_a) in &wa {
            if let Some(&(_, phi_b)) = wb.iter().find(|(rb, _)| (rb - r).abs() <= 1e-12 * r.abs().max(1.0)) {
                weiss.push(WeissDelta {
                    r,
                    phi_a,
                    phi_b,
                    delta: phi_b - phi_a,
                });
            }
        }
    }
    Ok(CompareReport {
        schema_version: SCHEMA_VERSION,
        grid_a: (ma.config.grid.nx, ma.config.grid.ny),
        grid_b: (mb.config.grid.nx, mb.config.grid.ny),
        energy_a: sa.energy,
        energy_b: sb.energy,
        energy_delta: sb.energy - sa.energy,
        fbcurve_sup_distance: (n1 + n2 > 0).then_some(d1.max(d2)),
        fbcurve_common_samples: n1 + n2,
        weiss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::new(
            ProblemParams::new(1.0, 3.0, 0.3, 1.0).unwrap(),
            GridSpec { nx: 32, ny: 32, y_max: 3.5 },
        );
        cfg.solver.levels = 2;
        cfg.diagnostics.probe.samples = 50;
        cfg.deterministic = true;
        cfg
    }

    #[test]
    fn toml_roundtrip_with_defaults() {
        let text = r#"
            seed = 7
            [params]
            m = 1.0
            h = 3.0
            gamma = 0.3
            lambda = 1.0
            [grid]
            nx = 64
            ny = 64
            y_max = 3.5
            [[starts]]
            kind = "flat_at_gamma"
            [[starts]]
            kind = "flat"
            t = 0.5
            [diagnostics.probe]
            samples = 20
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.starts, vec![Start::FlatAtGamma, Start::Flat { t: 0.5 }]);
        assert_eq!(cfg.diagnostics.probe.samples, 20);
        assert!(cfg.diagnostics.weiss.enabled);
        cfg.validate().unwrap();
        let back: RunConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn reference_config_spells_out_the_defaults() {
        let text = include_str!("../configs/reference.toml");
        let cfg = RunConfig::from_toml(text).unwrap();
        cfg.validate().unwrap();
        let mut expected = RunConfig::new(cfg.params, GridSpec { nx: 256, ny: 256, y_max: 3.5 });
        expected.output_dir = Some("runs/reference".into());
        expected.deterministic = true;
        assert_eq!(cfg, expected);
    }

    #[test]
    fn config_errors_name_the_field() {
        let bad = "[params]\nm = 1.0\nh = 3.0\ngamma = -0.3\nlambda = 1.0\n[grid]\nnx = 8\nny = 8\ny_max = 3.5\n";
        let err = RunConfig::from_toml(bad).unwrap().validate().unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "params.gamma"), "{err}");
        assert_eq!(err.exit_code(), 2);

        let unknown = "[params]\nm = 1.0\nh = 3.0\ngamma = 0.3\nlambda = 1.0\nbogus = 1\n[grid]\nnx = 8\nny = 8\ny_max = 3.5\n";
        let err = RunConfig::from_toml(unknown).unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "bogus"), "{err}");

        let mut cfg = small_config();
        cfg.grid.nx = 31;
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "grid.nx"));
        let mut cfg = small_config();
        cfg.grid.y_max = 2.0;
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "grid.y_max"));
        let mut cfg = small_config();
        cfg.diagnostics.weiss.radii = vec![0.1, 0.9];
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "diagnostics.weiss.radii"));
        let mut cfg = small_config();
        cfg.diagnostics.blowup.rhos = vec![0.5];
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "diagnostics.blowup.rhos"));
        let mut cfg = small_config();
        cfg.starts = vec![Start::Checkpoint { path: "/nonexistent/cp.bin".into() }];
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "starts[0].path"));
    }

    #[test]
    fn regimes_only_run_writes_regime_json() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.solve = false;
        cfg.diagnostics = Diagnostics::none();
        let m = run(&cfg, &RunOptions { out: dir.path().to_path_buf(), ..Default::default() }).unwrap();
        assert_eq!(m.command, "regimes");
        let names: Vec<&str> = m.artifacts.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, vec!["regime.json"]);
        let regime: serde_json::Value = io::read_json(&dir.path().join("regime.json")).unwrap();
        for key in ["schema_version", "h_sharp", "h_star", "t_h", "tau_h", "gamma_class"] {
            assert!(regime.get(key).is_some(), "missing {key}");
        }
        assert!(!dir.path().join(SOLUTION_FILE).exists());
    }

    #[test]
    fn toggles_control_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.diagnostics = Diagnostics::none();
        cfg.diagnostics.contact.enabled = true;
        let m = run(&cfg, &RunOptions { out: dir.path().to_path_buf(), ..Default::default() }).unwrap();
        let names: Vec<&str> = m.artifacts.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, vec!["contact.json", "fbcurve.csv", "regime.json", "solution.bin", "solution.json"]);
        for absent in ["weiss.csv", "bernoulli.json", "probe.json", "classification.json"] {
            assert!(!dir.path().join(absent).exists(), "{absent}");
        }
    }

    #[test]
    fn compare_identical_and_mismatched_runs() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = small_config();
        run(&cfg, &RunOptions { out: a.path().to_path_buf(), ..Default::default() }).unwrap();
        run(&cfg, &RunOptions { out: b.path().to_path_buf(), ..Default::default() }).unwrap();
        let rep = compare(a.path(), b.path()).unwrap();
        assert_eq!(rep.energy_delta, 0.0);
        assert_eq!(rep.fbcurve_sup_distance.unwrap_or(0.0), 0.0);
        assert!(!rep.weiss.is_empty());
        assert!(rep.weiss.iter().all(|w| w.delta == 0.0));

        let c = tempfile::tempdir().unwrap();
        let mut other = small_config();
        other.params.gamma = 0.4;
        run(&other, &RunOptions { out: c.path().to_path_buf(), ..Default::default() }).unwrap();
        let err = compare(a.path(), c.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        let empty = tempfile::tempdir().unwrap();
        assert_eq!(compare(a.path(), empty.path()).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn diagnose_reproduces_solve_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let first = run(&cfg, &RunOptions { out: dir.path().to_path_buf(), ..Default::default() }).unwrap();
        let again = diagnose(dir.path(), None, None).unwrap();
        assert_eq!(first.artifacts, again.artifacts);
    }
}
