//! Continuation minimisation of the smoothed energy over the admissible set.
//!
//! Each start is carried through a coarse-to-fine grid sequence and, on each
//! grid, through the decreasing smoothing schedule. Within one `(grid, eps)`
//! stage the iteration is projected gradient descent: a Barzilai-Borwein
//! trial step, projection (datum, clamp at zero, optional row
//! rearrangement), and Armijo backtracking on the projected point, so the
//! energy never increases between accepted iterates.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flat::FlatProfile;
use crate::grid::{self, Field, Grid, SmoothingParams};
use crate::io;
use crate::regimes;

/// Initial guesses understood by [`minimize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Start {
    /// The datum `m (1 - y/gamma)_+`.
    FlatAtGamma,
    /// The flat profile at the cubic root `t_h`; skipped when `h < h#`.
    FlatAtRoot,
    /// Datum plus an even bump `0.1 m cos(2 pi x/lambda) b(y)`.
    NonFlatSeed,
    Flat { t: f64 },
    /// A field file written by [`io::write_field`], resampled as needed.
    Checkpoint { path: PathBuf },
}

impl Start {
    pub fn defaults() -> Vec<Start> {
        vec![Start::FlatAtGamma, Start::FlatAtRoot, Start::NonFlatSeed]
    }

    pub fn label(&self) -> String {
        match self {
            Start::FlatAtGamma => "flat_at_gamma".into(),
            Start::FlatAtRoot => "flat_at_root".into(),
            Start::NonFlatSeed => "non_flat_seed".into(),
            Start::Flat { t } => format!("flat_t={t}"),
            Start::Checkpoint { path } => format!("checkpoint:{}", path.display()),
        }
    }

    /// Samples the start on `grid`; `Ok(None)` when the start does not exist
    /// for these parameters.
    pub fn realize(&self, grid: &Grid) -> Result<Option<Field>> {
        let p = grid.params;
        let field = match self {
            Start::FlatAtGamma => FlatProfile::datum(&p).sample(grid),
            Start::FlatAtRoot => match regimes::flat_height_root(p.m, p.h) {
                Ok(t) => FlatProfile::new(p.m, t)?.sample(grid),
                Err(Error::NoRoot { .. }) => return Ok(None),
                Err(e) => return Err(e),
            },
            Start::NonFlatSeed => non_flat_seed(grid),
            Start::Flat { t } => FlatProfile::new(p.m, *t)?.sample(grid),
            Start::Checkpoint { path } => {
                let (field, _) = io::read_field(path)?;
                if field.grid.params != p {
                    return Err(Error::Artifact {
                        path: path.clone(),
                        message: "checkpoint parameters differ from the run".into(),
                    });
                }
                if field.grid == *grid {
                    field
                } else {
                    field.resample(grid)
                }
            }
        };
        Ok(Some(field))
    }
}

fn non_flat_seed(grid: &Grid) -> Field {
    let p = grid.params;
    let t_h = regimes::flat_height_root(p.m, p.h).unwrap_or(p.gamma);
    let top = (2.0 * p.gamma.max(t_h)).min(0.9 * grid.y_max);
    let datum = FlatProfile::datum(&p);
    let delta = 0.1 * p.m;
    let mut f = Field::from_fn(grid, |x, y| {
        let s = y / top;
        let bump = if s < 1.0 { 4.0 * s * (1.0 - s) } else { 0.0 };
        datum.value(y) + delta * (2.0 * std::f64::consts::PI * x / p.lambda).cos() * bump
    });
    f.project();
    f
}

/// Row-wise symmetric decreasing rearrangement about `x = 0`.
///
/// Each row is sorted in decreasing order (stable) and laid out from the
/// centre column outward, alternating right then left, so the largest value
/// sits at `x = 0` and the smallest at `x = -lambda/2`. The row multiset is
/// preserved; Dirichlet nodes are re-imposed afterwards.
///
/// Rows that are already even up to rounding are rearranged on the half
/// row `x in [0, lambda/2]` and mirrored, so they stay exactly even even
/// when the node at `x = -lambda/2` is not the row minimum.
pub fn symmetrize(field: &Field) -> Field {
    let mut out = field.clone();
    symmetrize_in_place(&mut out);
    out
}

const EVEN_ROW_TOL: f64 = 1e-12;

fn row_is_even(row: &[f64], c: usize) -> bool {
    let scale = row.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    (1..c).all(|d| (row[c + d] - row[c - d]).abs() <= EVEN_ROW_TOL * scale)
}

pub(crate) fn symmetrize_in_place(field: &mut Field) {
    let g = field.grid.clone();
    let nx = g.nx;
    let c = g.center_column();
    let mut sorted = vec![0.0; nx];
    let mut half = vec![0.0; c + 1];
    for j in 0..=g.ny {
        let row = &mut field.values[j * nx..(j + 1) * nx];
        if row_is_even(row, c) {
            half[0] = row[c];
            for d in 1..c {
                half[d] = 0.5 * (row[c + d] + row[c - d]);
            }
            half[c] = row[0];
            half.sort_by(|a, b| b.total_cmp(a));
            row[c] = half[0];
            for d in 1..c {
                row[c + d] = half[d];
                row[c - d] = half[d];
            }
            row[0] = half[c];
            continue;
        }
        sorted.copy_from_slice(row);
        sorted.sort_by(|a, b| b.total_cmp(a));
        row[c] = sorted[0];
        let mut k = 1;
        for d in 1..c {
            row[c + d] = sorted[k];
            row[c - d] = sorted[k + 1];
            k += 2;
        }
        row[0] = sorted[nx - 1];
    }
    field.project();
}

/// Averages mirrored nodes `x` and `-x` in every row.
pub(crate) fn even_part_in_place(field: &mut Field) {
    let nx = field.grid.nx;
    let c = field.grid.center_column();
    for row in field.values.chunks_exact_mut(nx) {
        for d in 1..c {
            let v = 0.5 * (row[c + d] + row[c - d]);
            row[c + d] = v;
            row[c - d] = v;
        }
    }
}

/// Checkpoint destination and cadence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSpec {
    pub dir: PathBuf,
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    /// Iteration cap per `(grid, eps)` stage.
    pub max_iters: usize,
    /// Tolerance on the largest free-node partial derivative; `None` uses
    /// `1e-6 m / dx`.
    pub grad_tol: Option<f64>,
    pub armijo: f64,
    /// Replace each iterate by its even part in `x`, and symmetrize starts.
    pub even: bool,
    /// Apply [`symmetrize`] inside the projection every `k` iterations.
    pub symmetrize_every: Option<usize>,
    /// Number of grids in the coarse-to-fine sequence (1 = target grid only).
    pub levels: usize,
    pub checkpoint: Option<CheckpointSpec>,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            max_iters: 4000,
            grad_tol: None,
            armijo: 1e-4,
            even: true,
            symmetrize_every: None,
            levels: 3,
            checkpoint: None,
            exec: Exec::default(),
        }
    }
}

/// Summary of one `(grid, eps)` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub nx: usize,
    pub ny: usize,
    pub eps: f64,
    pub iterations: usize,
    pub energy: f64,
    pub grad_norm: f64,
    pub converged: bool,
    /// Every accepted iterate lowered (or kept) the energy.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub label: String,
    pub energy: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Best candidate minimiser found.
#[derive(Debug, Clone)]
pub struct Solution {
    pub field: Field,
    /// Smoothed energy at `eps_final`.
    pub energy: f64,
    pub eps_final: f64,
    pub iterations: usize,
    pub starts_used: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub start_label: String,
    pub stages: Vec<StageReport>,
    pub starts: Vec<StartSummary>,
}

impl Solution {
    /// Wraps a fixed field (e.g. an analytic profile) as a solution at `eps`.
    pub fn from_field(field: Field, eps: f64) -> Result<Solution> {
        let energy = grid::energy(&field, eps)?;
        Ok(Solution {
            field,
            energy,
            eps_final: eps,
            iterations: 0,
            starts_used: 0,
            converged: true,
            grad_norm: 0.0,
            start_label: "given".into(),
            stages: Vec::new(),
            starts: Vec::new(),
        })
    }
}

/// Largest free-node partial derivative; components that would push a zero
/// node negative are dropped.
fn projected_grad_norm(field: &Field, grad: &[f64]) -> f64 {
    field
        .values
        .iter()
        .zip(grad)
        .zip(&field.mask)
        .filter(|(_, &m)| !m)
        .map(|((&u, &g), _)| if u <= 0.0 && g > 0.0 { 0.0 } else { g.abs() })
        .fold(0.0, f64::max)
}

struct StageState {
    field: Field,
    energy: f64,
    grad: Vec<f64>,
}

fn run_stage(
    field: Field,
    eps: f64,
    opts: &MinimizeOptions,
    tol: f64,
    total_iters: &mut usize,
    checkpoint_name: &str,
) -> Result<(Field, StageReport)> {
    let exec = opts.exec;
    let mut grad = vec![0.0; field.values.len()];
    grid::gradient_into(&field, eps, exec, &mut grad);
    let mut st = StageState {
        energy: grid::energy_unchecked(&field, eps, exec),
        field,
        grad,
    };
    let area = st.field.grid.dx * st.field.grid.dy;
    let mut alpha = 0.5 / area.sqrt().max(1.0);
    let mut trial = st.field.clone();
    let mut trial_grad = vec![0.0; st.grad.len()];
    let mut monotone = true;
    let mut converged = false;
    let mut grad_norm = projected_grad_norm(&st.field, &st.grad);
    let mut iters = 0;

    while iters < opts.max_iters {
        if grad_norm <= tol {
            converged = true;
            break;
        }
        let sym = opts
            .symmetrize_every
            .is_some_and(|k| k > 0 && (*total_iters + iters) % k == 0);
        let mut step = alpha;
        let mut accepted = false;
        for _ in 0..60 {
            for (k, t) in trial.values.iter_mut().enumerate() {
                *t = st.field.values[k] - step * st.grad[k];
            }
            if opts.even {
                even_part_in_place(&mut trial);
            }
            trial.project();
            if sym {
                symmetrize_in_place(&mut trial);
            }
            let e = grid::energy_unchecked(&trial, eps, exec);
            let decrease: f64 = trial
                .values
                .iter()
                .zip(&st.field.values)
                .zip(&st.grad)
                .map(|((t, x), g)| g * (t - x))
                .sum();
            if e <= st.energy + opts.armijo * decrease {
                if e > st.energy {
                    monotone = false;
                }
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            log::debug!("line search stalled at eps = {eps} after {iters} iterations");
            break;
        }
        grid::gradient_into(&trial, eps, exec, &mut trial_grad);
        let mut ss = 0.0;
        let mut sy = 0.0;
        for k in 0..trial.values.len() {
            let s = trial.values[k] - st.field.values[k];
            let y = trial_grad[k] - st.grad[k];
            ss += s * s;
            sy += s * y;
        }
        alpha = if sy > 0.0 && ss > 0.0 {
            (ss / sy).clamp(1e-10, 1e6)
        } else {
            (2.0 * step).min(1e6)
        };
        std::mem::swap(&mut st.field, &mut trial);
        std::mem::swap(&mut st.grad, &mut trial_grad);
        st.energy = grid::energy_unchecked(&st.field, eps, exec);
        grad_norm = projected_grad_norm(&st.field, &st.grad);
        iters += 1;

        if let Some(cp) = &opts.checkpoint {
            if cp.every > 0 && (*total_iters + iters) % cp.every == 0 {
                let path = cp.dir.join(format!("{checkpoint_name}.bin"));
                io::write_field(&path, &st.field, eps)?;
            }
        }
    }
    if !converged && grad_norm <= tol {
        converged = true;
    }
    *total_iters += iters;
    let report = StageReport {
        nx: st.field.grid.nx,
        ny: st.field.grid.ny,
        eps,
        iterations: iters,
        energy: st.energy,
        grad_norm,
        converged,
        monotone,
    };
    Ok((st.field, report))
}

/// Grid sequence, coarsest first, ending at `target`.
fn level_grids(target: &Grid, levels: usize) -> Result<Vec<Grid>> {
    let mut grids = vec![target.clone()];
    let (mut nx, mut ny) = (target.nx, target.ny);
    for _ in 1..levels.max(1) {
        if nx % 4 != 0 || ny % 2 != 0 || nx / 2 < 8 || ny / 2 < 8 {
            break;
        }
        nx /= 2;
        ny /= 2;
        grids.push(target.with_resolution(nx, ny)?);
    }
    grids.reverse();
    Ok(grids)
}

fn stage_plan(grids: &[Grid], schedule: &[f64]) -> Vec<Vec<f64>> {
    let mut plan = Vec::with_capacity(grids.len());
    let mut last = f64::INFINITY;
    for (l, g) in grids.iter().enumerate() {
        let final_level = l + 1 == grids.len();
        let floor = 4.0 * g.dx;
        let mut eps: Vec<f64> = schedule
            .iter()
            .copied()
            .filter(|&e| e <= last && (final_level || e >= floor))
            .collect();
        if eps.is_empty() {
            eps.push(if last.is_finite() { last } else { schedule[0] });
        }
        last = *eps.last().unwrap();
        plan.push(eps);
    }
    plan
}

struct StartOutcome {
    field: Field,
    energy: f64,
    iterations: usize,
    converged: bool,
    grad_norm: f64,
    stages: Vec<StageReport>,
}

fn run_start(
    index: usize,
    start: &Field,
    grids: &[Grid],
    plan: &[Vec<f64>],
    opts: &MinimizeOptions,
) -> Result<StartOutcome> {
    let mut field = start.resample(&grids[0]);
    if opts.even || opts.symmetrize_every.is_some() {
        symmetrize_in_place(&mut field);
    }
    let mut stages = Vec::new();
    let mut iterations = 0;
    for (g, eps_list) in grids.iter().zip(plan) {
        if field.grid != *g {
            field = field.resample(g);
        }
        let tol = opts.grad_tol.unwrap_or(1e-6 * g.params.m / g.dx);
        for &eps in eps_list {
            let (f, report) = run_stage(field, eps, opts, tol, &mut iterations, &format!("checkpoint_start{index}"))?;
            log::info!(
                "start {index}: {}x{} eps={:.4} iters={} E={:.6} |g|={:.3e}",
                report.nx, report.ny, eps, report.iterations, report.energy, report.grad_norm
            );
            field = f;
            stages.push(report);
        }
    }
    let last = stages.last().expect("at least one stage");
    Ok(StartOutcome {
        energy: last.energy,
        converged: last.converged,
        grad_norm: last.grad_norm,
        field,
        iterations,
        stages,
    })
}

/// Multistart continuation minimisation; returns the lowest-energy result.
///
/// Non-convergence is reported through `Solution::converged`, never as an error.
pub fn minimize(
    grid: &Grid,
    smoothing: &SmoothingParams,
    starts: &[Start],
    opts: &MinimizeOptions,
) -> Result<Solution> {
    smoothing.validate(grid)?;
    let mut labelled = Vec::new();
    for s in starts {
        if let Some(f) = s.realize(grid)? {
            labelled.push((s.label(), f));
        }
    }
    if labelled.is_empty() {
        return Err(Error::config("starts", "no start is defined for these parameters"));
    }
    let grids = level_grids(grid, opts.levels)?;
    let plan = stage_plan(&grids, &smoothing.schedule);

    let outcomes = opts.exec.map(labelled.len(), |k| {
        run_start(k, &labelled[k].1, &grids, &plan, opts)
    });
    let mut results = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        results.push(o?);
    }
    let summaries: Vec<StartSummary> = results
        .iter()
        .zip(&labelled)
        .map(|(r, (label, _))| StartSummary {
            label: label.clone(),
            energy: r.energy,
            converged: r.converged,
            iterations: r.iterations,
        })
        .collect();
    // Lowest energy, ties to the earlier start.
    let best = (0..results.len())
        .min_by(|&a, &b| results[a].energy.total_cmp(&results[b].energy).then(a.cmp(&b)))
        .unwrap();
    let starts_used = results.len();
    let label = labelled[best].0.clone();
    let r = results.swap_remove(best);
    Ok(Solution {
        field: r.field,
        energy: r.energy,
        eps_final: smoothing.final_eps(),
        iterations: r.iterations,
        starts_used,
        converged: r.converged,
        grad_norm: r.grad_norm,
        start_label: label,
        stages: r.stages,
        starts: summaries,
    })
}
