//! Discretisation of the periodic strip and the smoothed energy.
//!
//! Nodes sit at `x_i = -lambda/2 + i dx` (`i in 0..nx`, periodic) and
//! `y_j = j dy` (`j in 0..=ny`). Every cell carries the bilinear interpolant
//! of its four corner values; the Dirichlet integral is integrated exactly on
//! each cell, and the positivity term uses the smoothed indicator of the cell
//! average weighted by `(h - y_c)_+` at the cell centre.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::regimes::ProblemParams;

/// Uniform node grid on `(-lambda/2, lambda/2) x (0, y_max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub params: ProblemParams,
    pub nx: usize,
    pub ny: usize,
    pub y_max: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Grid {
    pub fn build(params: ProblemParams, nx: usize, ny: usize, y_max: f64) -> Result<Grid> {
        params.validate()?;
        if nx < 4 || nx % 2 != 0 {
            return Err(Error::config("nx", format!("must be even and at least 4, got {nx}")));
        }
        if ny < 2 {
            return Err(Error::config("ny", format!("must be at least 2, got {ny}")));
        }
        if !(y_max > params.h) || !y_max.is_finite() {
            return Err(Error::config(
                "y_max",
                format!("truncation height {y_max} must exceed h = {}", params.h),
            ));
        }
        Ok(Grid {
            params,
            nx,
            ny,
            y_max,
            dx: params.lambda / nx as f64,
            dy: y_max / ny as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        -0.5 * self.params.lambda + i as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy
    }

    /// Column index of the symmetry axis `x = 0`.
    pub fn center_column(&self) -> usize {
        self.nx / 2
    }

    /// Whether node `(i, j)` belongs to the constrained set: the bottom row,
    /// the truncation row, and the lateral line strictly above `gamma`.
    pub fn is_dirichlet(&self, i: usize, j: usize) -> bool {
        j == 0 || j == self.ny || (i == 0 && self.y(j) > self.params.gamma + 1e-12 * self.y_max)
    }

    /// Datum value at a constrained node.
    pub fn datum(&self, _i: usize, j: usize) -> f64 {
        if j == 0 {
            self.params.m
        } else {
            0.0
        }
    }

    /// The same strip at a different resolution.
    pub fn with_resolution(&self, nx: usize, ny: usize) -> Result<Grid> {
        Grid::build(self.params, nx, ny, self.y_max)
    }
}

/// Node values on a [`Grid`] together with the Dirichlet mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

fn build_mask(grid: &Grid) -> Vec<bool> {
    let mut mask = vec![false; grid.len()];
    for j in 0..=grid.ny {
        for i in 0..grid.nx {
            mask[grid.idx(i, j)] = grid.is_dirichlet(i, j);
        }
    }
    mask
}

impl Field {
    /// Raw values, no constraints applied.
    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(Error::Invariant(format!(
                "expected {} node values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Field {
            mask: build_mask(grid),
            grid: grid.clone(),
            values,
        })
    }

    /// Evaluates `f(x, y)` at every node; no constraints applied.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Field {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..=grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        Field {
            mask: build_mask(grid),
            grid: grid.clone(),
            values,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.grid.nx..(j + 1) * self.grid.nx]
    }

    /// Projection onto the admissible set: clamp at zero, then impose the datum.
    pub fn project(&mut self) {
        let grid = &self.grid;
        for (k, v) in self.values.iter_mut().enumerate() {
            if self.mask[k] {
                *v = grid.datum(k % grid.nx, k / grid.nx);
            } else if *v < 0.0 || v.is_nan() {
                *v = 0.0;
            }
        }
    }

    /// Checks the datum on masked nodes and nonnegativity everywhere.
    pub fn check_admissible(&self) -> Result<()> {
        let grid = &self.grid;
        for (k, &v) in self.values.iter().enumerate() {
            let (i, j) = (k % grid.nx, k / grid.nx);
            if self.mask[k] && v != grid.datum(i, j) {
                return Err(Error::Invariant(format!(
                    "node ({i}, {j}) is constrained to {} but holds {v}",
                    grid.datum(i, j)
                )));
            }
            if !(v >= 0.0) {
                return Err(Error::Invariant(format!("node ({i}, {j}) holds {v} < 0")));
            }
        }
        Ok(())
    }

    /// Cyclic shift of every row by `k` columns.
    pub fn shift_x(&self, k: usize) -> Field {
        let nx = self.grid.nx;
        let mut out = self.clone();
        for j in 0..=self.grid.ny {
            for i in 0..nx {
                out.values[self.grid.idx((i + k) % nx, j)] = self.get(i, j);
            }
        }
        out
    }

    /// Reflection `x -> -x`, which maps column `i` to `nx - i` (mod `nx`).
    pub fn reflect_x(&self) -> Field {
        let nx = self.grid.nx;
        let mut out = self.clone();
        for j in 0..=self.grid.ny {
            for i in 0..nx {
                out.values[self.grid.idx((nx - i) % nx, j)] = self.get(i, j);
            }
        }
        out
    }

    fn locate(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let g = &self.grid;
        let lambda = g.params.lambda;
        let s = (x + 0.5 * lambda).rem_euclid(lambda) / g.dx;
        let i0 = (s.floor() as usize).min(g.nx - 1);
        let fx = s - i0 as f64;
        let t = (y / g.dy).clamp(0.0, g.ny as f64);
        let j0 = (t.floor() as usize).min(g.ny - 1);
        let fy = t - j0 as f64;
        (i0, j0, fx, fy)
    }

    /// Periodic bilinear interpolation; `y` is clamped to `[0, y_max]`.
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        let (i0, j0, fx, fy) = self.locate(x, y);
        let i1 = (i0 + 1) % self.grid.nx;
        let (u00, u10) = (self.get(i0, j0), self.get(i1, j0));
        let (u01, u11) = (self.get(i0, j0 + 1), self.get(i1, j0 + 1));
        (1.0 - fy) * ((1.0 - fx) * u00 + fx * u10) + fy * ((1.0 - fx) * u01 + fx * u11)
    }

    /// Gradient of the bilinear interpolant at `(x, y)`.
    pub fn gradient_at(&self, x: f64, y: f64) -> [f64; 2] {
        let (i0, j0, fx, fy) = self.locate(x, y);
        let i1 = (i0 + 1) % self.grid.nx;
        let (u00, u10) = (self.get(i0, j0), self.get(i1, j0));
        let (u01, u11) = (self.get(i0, j0 + 1), self.get(i1, j0 + 1));
        [
            ((1.0 - fy) * (u10 - u00) + fy * (u11 - u01)) / self.grid.dx,
            ((1.0 - fx) * (u01 - u00) + fx * (u11 - u10)) / self.grid.dy,
        ]
    }

    /// Bilinear transfer onto another grid of the same strip, then projection.
    pub fn resample(&self, grid: &Grid) -> Field {
        let mut out = Field::from_fn(grid, |x, y| self.value_at(x, y));
        out.project();
        out
    }

    /// Largest `|u|` over the top quarter of the strip.
    pub fn top_quarter_max(&self) -> f64 {
        let g = &self.grid;
        let j0 = (3 * g.ny) / 4;
        (j0..=g.ny)
            .flat_map(|j| self.row(j).iter().copied())
            .fold(0.0, |a: f64, v| a.max(v.abs()))
    }
}

/// Indicator smoothing width and its continuation schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub eps: f64,
    pub schedule: Vec<f64>,
}

impl SmoothingParams {
    /// Halving from `start` down to `floor`; the last entry is exactly `floor`.
    pub fn geometric(start: f64, floor: f64) -> SmoothingParams {
        let mut schedule = Vec::new();
        let mut e = start;
        while e > floor * (1.0 + 1e-12) {
            schedule.push(e);
            e *= 0.5;
        }
        schedule.push(floor);
        SmoothingParams {
            eps: floor,
            schedule,
        }
    }

    /// Default continuation for a grid: `0.2, 0.1, ...` down to `4 dx`.
    pub fn default_for(grid: &Grid) -> SmoothingParams {
        SmoothingParams::geometric(0.2, 4.0 * grid.dx)
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::config("smoothing.schedule", "must not be empty"));
        }
        if self.schedule.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::config("smoothing.schedule", "entries must be positive"));
        }
        if self.schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("smoothing.schedule", "must be strictly decreasing"));
        }
        let last = *self.schedule.last().unwrap();
        if last < grid.dx / 4.0 {
            return Err(Error::config(
                "smoothing.schedule",
                format!("final width {last} is below the resolution floor dx/4 = {}", grid.dx / 4.0),
            ));
        }
        Ok(())
    }

    pub fn final_eps(&self) -> f64 {
        *self.schedule.last().unwrap_or(&self.eps)
    }
}

/// `H_eps(s)`: 0 for `s <= 0`, `3 r^2 - 2 r^3` with `r = s/eps` on `(0, eps)`, 1 beyond.
#[inline]
pub fn smoothed_indicator(s: f64, eps: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= eps {
        1.0
    } else {
        let r = s / eps;
        r * r * (3.0 - 2.0 * r)
    }
}

#[inline]
pub fn smoothed_indicator_derivative(s: f64, eps: f64) -> f64 {
    if s <= 0.0 || s >= eps {
        0.0
    } else {
        let r = s / eps;
        6.0 * r * (1.0 - r) / eps
    }
}

/// How the positivity indicator is evaluated on a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Indicator {
    Smoothed(f64),
    /// `u_bar > threshold`.
    Sharp(f64),
}

impl Indicator {
    #[inline]
    fn value(self, s: f64) -> f64 {
        match self {
            Indicator::Smoothed(eps) => smoothed_indicator(s, eps),
            Indicator::Sharp(threshold) => {
                if s > threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

struct CellGeom {
    rx: f64,
    ry: f64,
    area: f64,
}

impl CellGeom {
    fn new(g: &Grid) -> Self {
        CellGeom {
            rx: g.dy / g.dx / 3.0,
            ry: g.dx / g.dy / 3.0,
            area: g.dx * g.dy,
        }
    }
}

/// Exact Dirichlet integral of the bilinear interpolant on one cell with
/// corners `a = (0,0)`, `b = (1,0)`, `c = (0,1)`, `d = (1,1)`.
#[inline]
fn cell_dirichlet(geom: &CellGeom, a: f64, b: f64, c: f64, d: f64) -> f64 {
    let (p, q) = (b - a, d - c);
    let (r, s) = (c - a, d - b);
    geom.rx * (p * p + p * q + q * q) + geom.ry * (r * r + r * s + s * s)
}

fn cell_coefficient(g: &Grid, j: usize) -> f64 {
    (g.params.h - (j as f64 + 0.5) * g.dy).max(0.0)
}

fn energy_impl(field: &Field, indicator: Indicator, exec: Exec) -> f64 {
    let g = &field.grid;
    let geom = CellGeom::new(g);
    let nx = g.nx;
    exec.sum(g.ny, |j| {
        let coef = cell_coefficient(g, j) * geom.area;
        let lower = field.row(j);
        let upper = field.row(j + 1);
        let mut row = 0.0;
        for i in 0..nx {
            let i1 = if i + 1 == nx { 0 } else { i + 1 };
            let (a, b, c, d) = (lower[i], lower[i1], upper[i], upper[i1]);
            row += cell_dirichlet(&geom, a, b, c, d);
            if coef > 0.0 {
                row += coef * indicator.value(0.25 * (a + b + c + d));
            }
        }
        row
    })
}

/// Smoothed energy `sum_cells (int |grad u|^2 + H_eps(u_bar) (h - y_c)_+ dx dy)`.
pub fn energy(field: &Field, eps: f64) -> Result<f64> {
    energy_with(field, eps, Exec::default())
}

pub fn energy_with(field: &Field, eps: f64, exec: Exec) -> Result<f64> {
    check_eps(eps)?;
    field.check_admissible()?;
    Ok(energy_impl(field, Indicator::Smoothed(eps), exec))
}

/// Same discretisation with the sharp indicator `u_bar > threshold`.
pub fn sharp_energy(field: &Field, threshold: f64) -> Result<f64> {
    field.check_admissible()?;
    Ok(energy_impl(field, Indicator::Sharp(threshold), Exec::default()))
}

pub(crate) fn energy_unchecked(field: &Field, eps: f64, exec: Exec) -> f64 {
    energy_impl(field, Indicator::Smoothed(eps), exec)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("smoothing width must be positive, got {eps}")))
    }
}

/// Partial derivatives of the smoothed energy with respect to every free
/// node; zero on the Dirichlet mask.
pub fn energy_gradient(field: &Field, eps: f64) -> Result<Field> {
    energy_gradient_with(field, eps, Exec::default())
}

pub fn energy_gradient_with(field: &Field, eps: f64, exec: Exec) -> Result<Field> {
    check_eps(eps)?;
    field.check_admissible()?;
    let mut out = field.clone();
    gradient_into(field, eps, exec, &mut out.values);
    Ok(out)
}

pub(crate) fn gradient_into(field: &Field, eps: f64, exec: Exec, out: &mut [f64]) {
    let g = &field.grid;
    let geom = CellGeom::new(g);
    let nx = g.nx;

    // Per-cell partials with respect to the corners (a, b, c, d).
    let mut cells = vec![[0.0f64; 4]; nx * g.ny];
    exec.for_each_chunk(&mut cells, nx, |j, row_out| {
        let w = cell_coefficient(g, j) * geom.area * 0.25;
        let lower = field.row(j);
        let upper = field.row(j + 1);
        for i in 0..nx {
            let i1 = if i + 1 == nx { 0 } else { i + 1 };
            let (a, b, c, d) = (lower[i], lower[i1], upper[i], upper[i1]);
            let (p, q) = (b - a, d - c);
            let (r, s) = (c - a, d - b);
            let dp = geom.rx * (2.0 * p + q);
            let dq = geom.rx * (p + 2.0 * q);
            let dr = geom.ry * (2.0 * r + s);
            let ds = geom.ry * (r + 2.0 * s);
            let chi = if w > 0.0 {
                w * smoothed_indicator_derivative(0.25 * (a + b + c + d), eps)
            } else {
                0.0
            };
            row_out[i] = [-dp - dr + chi, dp - ds + chi, -dq + dr + chi, dq + ds + chi];
        }
    });

    exec.for_each_chunk(out, nx, |j, row_out| {
        for (i, o) in row_out.iter_mut().enumerate() {
            if field.mask[g.idx(i, j)] {
                *o = 0.0;
                continue;
            }
            let im = if i == 0 { nx - 1 } else { i - 1 };
            let mut acc = 0.0;
            if j < g.ny {
                acc += cells[j * nx + i][0];
                acc += cells[j * nx + im][1];
            }
            if j > 0 {
                acc += cells[(j - 1) * nx + i][2];
                acc += cells[(j - 1) * nx + im][3];
            }
            *o = acc;
        }
    });
}

/// `max(0, -Delta_5 u)` over nodes whose five-point stencil lies in the strip.
pub fn subharmonicity_residual(field: &Field) -> f64 {
    let g = &field.grid;
    let (idx2, idy2) = (1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy));
    let nx = g.nx;
    let per_row = Exec::default().map(g.ny.saturating_sub(1), |k| {
        let j = k + 1;
        let (below, row, above) = (field.row(j - 1), field.row(j), field.row(j + 1));
        let mut worst = 0.0f64;
        for i in 0..nx {
            let im = if i == 0 { nx - 1 } else { i - 1 };
            let ip = if i + 1 == nx { 0 } else { i + 1 };
            let lap = (row[ip] + row[im] - 2.0 * row[i]) * idx2
                + (above[i] + below[i] - 2.0 * row[i]) * idy2;
            worst = worst.max(-lap);
        }
        worst
    });
    per_row.into_iter().fold(0.0, f64::max)
}
