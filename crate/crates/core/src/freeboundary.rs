//! Free-boundary graph `x = g(y)` on the left half-period and its diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::minimizer::Solution;
use crate::regimes::{self, ProblemParams};

/// Value of the graph in one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "g", rename_all = "snake_case")]
pub enum GraphValue {
    Defined(f64),
    /// No node of the half row exceeds the threshold.
    AllZero,
    /// Positive already at `x = -lambda/2`; `g = -lambda/2` by convention.
    AllPositive,
}

impl GraphValue {
    pub fn defined(self) -> Option<f64> {
        match self {
            GraphValue::Defined(g) => Some(g),
            _ => None,
        }
    }

    pub fn flag(self) -> &'static str {
        match self {
            GraphValue::Defined(_) => "defined",
            GraphValue::AllZero => "all_zero",
            GraphValue::AllPositive => "all_positive",
        }
    }
}

/// Sampled free-boundary graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FBCurve {
    pub ys: Vec<f64>,
    pub gs: Vec<GraphValue>,
    pub threshold: f64,
    pub lambda: f64,
    /// Rows that were not nonincreasing in `|x|` (to within `1e-9`).
    pub asymmetric_rows: usize,
}

impl FBCurve {
    /// A curve from explicit samples (used for synthetic checks).
    pub fn from_samples(ys: Vec<f64>, gs: Vec<GraphValue>, threshold: f64, lambda: f64) -> Self {
        assert_eq!(ys.len(), gs.len());
        FBCurve {
            ys,
            gs,
            threshold,
            lambda,
            asymmetric_rows: 0,
        }
    }

    pub fn defined(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.ys
            .iter()
            .zip(&self.gs)
            .filter_map(|(&y, g)| g.defined().map(|g| (y, g)))
    }

    /// Largest `|g_{k+1} - g_k|` over adjacent rows that are both defined.
    pub fn max_jump(&self) -> f64 {
        self.gs
            .windows(2)
            .filter_map(|w| match (w[0], w[1]) {
                (GraphValue::Defined(a), GraphValue::Defined(b)) => Some((b - a).abs()),
                _ => None,
            })
            .fold(0.0, f64::max)
    }

    /// Linear interpolation between defined neighbours; exact at samples.
    pub fn eval(&self, y: f64) -> Option<f64> {
        let n = self.ys.len();
        if n == 0 {
            return None;
        }
        let k = self.ys.partition_point(|&v| v < y);
        if k < n && self.ys[k] == y {
            return self.gs[k].defined();
        }
        if k == 0 || k == n {
            return None;
        }
        let (y0, y1) = (self.ys[k - 1], self.ys[k]);
        let (g0, g1) = (self.gs[k - 1].defined()?, self.gs[k].defined()?);
        Some(g0 + (g1 - g0) * (y - y0) / (y1 - y0))
    }

    /// CSV with columns `y,g,flag`; `g` is empty for `all_zero` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# schema_version=1\ny,g,flag\n");
        for (&y, g) in self.ys.iter().zip(&self.gs) {
            let gv = match g {
                GraphValue::Defined(v) => format!("{v:.17e}"),
                GraphValue::AllPositive => format!("{:.17e}", -0.5 * self.lambda),
                GraphValue::AllZero => String::new(),
            };
            out.push_str(&format!("{y:.17e},{gv},{}\n", g.flag()));
        }
        out
    }

    pub fn from_csv(text: &str, threshold: f64, lambda: f64) -> Result<FBCurve> {
        let mut ys = Vec::new();
        let mut gs = Vec::new();
        for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::NotDefined(format!("malformed curve row `{line}`"));
            if cols.len() != 3 {
                return Err(bad());
            }
            ys.push(cols[0].parse::<f64>().map_err(|_| bad())?);
            gs.push(match cols[2] {
                "defined" => GraphValue::Defined(cols[1].parse().map_err(|_| bad())?),
                "all_zero" => GraphValue::AllZero,
                "all_positive" => GraphValue::AllPositive,
                _ => return Err(bad()),
            });
        }
        Ok(FBCurve::from_samples(ys, gs, threshold, lambda))
    }
}

fn row_is_symmetric_decreasing(field: &Field, j: usize) -> bool {
    let g = &field.grid;
    let c = g.center_column();
    let row = field.row(j);
    let tol = 1e-9;
    (0..c).all(|i| row[i] <= row[i + 1] + tol)
        && (c..g.nx - 1).all(|i| row[i + 1] <= row[i] + tol)
        && row[g.nx - 1] + tol >= row[0]
}

/// Extraction on one half row. `mirrored` scans from `+lambda/2` toward 0 and
/// returns `x > 0` positions.
fn extract_rows(field: &Field, threshold: f64, mirrored: bool) -> FBCurve {
    let g = &field.grid;
    let c = g.center_column();
    let column = |k: usize| if mirrored { (g.nx - k) % g.nx } else { k };
    let sign = if mirrored { -1.0 } else { 1.0 };
    let mut ys = Vec::with_capacity(g.ny + 1);
    let mut gs = Vec::with_capacity(g.ny + 1);
    let mut asymmetric = 0;
    for j in 0..=g.ny {
        if !row_is_symmetric_decreasing(field, j) {
            asymmetric += 1;
        }
        let value = |k: usize| field.get(column(k), j);
        let v = if value(0) > threshold {
            GraphValue::AllPositive
        } else {
            match (1..=c).find(|&k| value(k) > threshold) {
                None => GraphValue::AllZero,
                Some(k) => {
                    let (u0, u1) = (value(k - 1), value(k));
                    let frac = (threshold - u0) / (u1 - u0);
                    let x = g.x(0) + (k as f64 - 1.0 + frac) * g.dx;
                    GraphValue::Defined(sign * x)
                }
            }
        };
        ys.push(g.y(j));
        gs.push(v);
    }
    if asymmetric > 0 {
        log::warn!("free-boundary extraction: {asymmetric} rows are not symmetric decreasing; using the left half");
    }
    FBCurve {
        ys,
        gs,
        threshold,
        lambda: g.params.lambda,
        asymmetric_rows: asymmetric,
    }
}

/// `g(y) = inf { x in (-lambda/2, 0) : u(x, y) > threshold }` per row, with
/// linear interpolation between the bracketing nodes.
pub fn extract_graph(solution: &Solution, threshold: Option<f64>) -> FBCurve {
    extract_graph_field(&solution.field, threshold.unwrap_or(0.5 * solution.eps_final))
}

pub fn extract_graph_field(field: &Field, threshold: f64) -> FBCurve {
    extract_rows(field, threshold, false)
}

/// The same construction on `(0, lambda/2)`; for even fields this is `-g`.
pub fn extract_graph_mirrored(field: &Field, threshold: f64) -> FBCurve {
    extract_rows(field, threshold, true)
}

/// `max g - min g` over defined samples; 0 for an all-sentinel curve.
pub fn oscillation(curve: &FBCurve) -> Result<f64> {
    let vals: Vec<f64> = curve.defined().map(|(_, g)| g).collect();
    match vals.len() {
        0 => Ok(0.0),
        1 => Err(Error::NotDefined("oscillation needs at least two defined samples".into())),
        _ => {
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            Ok(max - min)
        }
    }
}

/// Relative mismatch statistics of `|grad u|` against `sqrt(h - y)` along the curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliStats {
    pub samples: usize,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
    pub offset: f64,
    pub exclusion_band: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Samples `|grad u|` at distance `2 dx` inside the positivity set along the
/// curve normal and compares with `sqrt(h - y)`.
///
/// Rows within `4 max(dx, dy)` of `y = gamma`, near the axis `x = 0`, or
/// whose neighbours are undefined are skipped.
pub fn bernoulli_check(solution: &Solution, curve: &FBCurve) -> Result<BernoulliStats> {
    bernoulli_check_field(&solution.field, curve)
}

pub fn bernoulli_check_field(field: &Field, curve: &FBCurve) -> Result<BernoulliStats> {
    let g = &field.grid;
    let p = g.params;
    let offset = 2.0 * g.dx;
    let band = 4.0 * g.dx.max(g.dy);
    let n = curve.gs.len();
    let slope_at = |k: usize| -> Option<f64> {
        if k == 0 || k + 1 >= n {
            return None;
        }
        let (a, b) = (curve.gs[k - 1].defined()?, curve.gs[k + 1].defined()?);
        Some((b - a) / (curve.ys[k + 1] - curve.ys[k - 1]))
    };
    let mut residuals = Vec::new();
    for k in 0..n {
        let Some(gx) = curve.gs[k].defined() else { continue };
        let y = curve.ys[k];
        if y >= p.h || (y - p.gamma).abs() < band || gx > -2.0 * offset || gx < -0.5 * p.lambda + offset {
            continue;
        }
        // Three-sample smoothing of the central-difference slope.
        let slopes: Vec<f64> = [k.wrapping_sub(1), k, k + 1]
            .iter()
            .filter_map(|&q| if q < n { slope_at(q) } else { None })
            .collect();
        if slopes.len() < 3 {
            continue;
        }
        let gp = slopes.iter().sum::<f64>() / 3.0;
        // Tangent (g', 1); the positivity set lies toward larger x.
        let norm = (1.0 + gp * gp).sqrt();
        let nrm = [1.0 / norm, -gp / norm];
        let (sx, sy) = (gx + offset * nrm[0], y + offset * nrm[1]);
        let [ux, uy] = field.gradient_at(sx, sy);
        let target = (p.h - y).sqrt();
        residuals.push(((ux * ux + uy * uy).sqrt() - target).abs() / target);
    }
    if residuals.is_empty() {
        return Err(Error::NotDefined("no curve samples qualify for the gradient check".into()));
    }
    residuals.sort_by(f64::total_cmp);
    Ok(BernoulliStats {
        samples: residuals.len(),
        median: percentile(&residuals, 0.5),
        p90: percentile(&residuals, 0.9),
        max: *residuals.last().unwrap(),
        offset,
        exclusion_band: band,
    })
}

/// `|m/t_h - sqrt(h - t_h)|`: the gradient condition on the flat solution at the cubic root.
pub fn flat_bernoulli_residual(m: f64, h: f64) -> Result<f64> {
    let t = regimes::flat_height_root(m, h)?;
    Ok((m / t - (h - t).sqrt()).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Above,
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSample {
    pub side: Approach,
    pub k: u32,
    pub y: f64,
    pub ratio: f64,
}

/// Quotients `|g(y_k) - g(gamma)| / |y_k - gamma|` on `y_k = gamma +- 2^-k delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub schema_version: u32,
    pub delta: f64,
    pub ratios: Vec<ContactSample>,
    /// Last three ratios on the reported side strictly increasing.
    pub monotone_tail: bool,
    pub max_ratio: f64,
    pub first_ratio: f64,
}

/// Contact-angle ratios with `g(gamma) := -lambda/2`.
///
/// `delta` defaults to `min(gamma, h - gamma) / 4`. The tail test uses the
/// side approached from above when it has samples, otherwise from below.
pub fn contact_ratios(curve: &FBCurve, params: &ProblemParams, depth: u32, delta: Option<f64>) -> Result<ContactReport> {
    let delta = delta.unwrap_or(0.25 * params.gamma.min(params.h - params.gamma).abs());
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("contact approach distance must be positive, got {delta}")));
    }
    let g_gamma = -0.5 * params.lambda;
    let mut ratios = Vec::new();
    for side in [Approach::Above, Approach::Below] {
        let s = if side == Approach::Above { 1.0 } else { -1.0 };
        for k in 0..=depth {
            let dist = delta * 0.5f64.powi(k as i32);
            let y = params.gamma + s * dist;
            if let Some(gy) = curve.eval(y) {
                ratios.push(ContactSample {
                    side,
                    k,
                    y,
                    ratio: (gy - g_gamma).abs() / dist,
                });
            }
        }
    }
    if ratios.is_empty() {
        return Err(Error::NotDefined("the curve is undefined near y = gamma".into()));
    }
    let tail_side = if ratios.iter().any(|r| r.side == Approach::Above) {
        Approach::Above
    } else {
        Approach::Below
    };
    let side: Vec<f64> = ratios.iter().filter(|r| r.side == tail_side).map(|r| r.ratio).collect();
    let monotone_tail = side.len() >= 3 && {
        let t = &side[side.len() - 3..];
        t[0] < t[1] && t[1] < t[2]
    };
    Ok(ContactReport {
        schema_version: 1,
        delta,
        max_ratio: ratios.iter().map(|r| r.ratio).fold(0.0, f64::max),
        first_ratio: side[0],
        ratios,
        monotone_tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flat::FlatProfile;
    use crate::grid::Grid;

    fn params() -> ProblemParams {
        ProblemParams::new(1.0, 3.0, 0.3, 1.0).unwrap()
    }

    fn dyadic_curve(params: &ProblemParams, delta: f64, depth: u32, g: impl Fn(f64) -> f64) -> FBCurve {
        let mut ys: Vec<f64> = (0..=depth)
            .flat_map(|k| {
                let d = delta * 0.5f64.powi(k as i32);
                [params.gamma - d, params.gamma + d]
            })
            .collect();
        ys.sort_by(f64::total_cmp);
        let gs = ys.iter().map(|&y| GraphValue::Defined(g(y))).collect();
        FBCurve::from_samples(ys, gs, 0.0, params.lambda)
    }

    #[test]
    fn flat_profile_rows_are_sentinels() {
        let g = Grid::build(params(), 16, 35, 3.5).unwrap();
        let f = FlatProfile::new(1.0, 0.25).unwrap().sample(&g);
        let c = extract_graph_field(&f, 1e-3);
        for (&y, v) in c.ys.iter().zip(&c.gs) {
            if y < 0.24 {
                assert_eq!(*v, GraphValue::AllPositive);
            } else if y > 0.25 {
                assert_eq!(*v, GraphValue::AllZero);
            }
        }
        assert_eq!(oscillation(&c).unwrap(), 0.0);
    }

    #[test]
    fn half_plane_rows() {
        let p = params();
        let g = Grid::build(p, 16, 35, 3.5).unwrap();
        let f = Field::from_fn(&g, |_, y| (p.h - p.gamma) * (p.gamma - y).max(0.0));
        let c = extract_graph_field(&f, 1e-9);
        for (&y, v) in c.ys.iter().zip(&c.gs) {
            let expect = if y < p.gamma - 1e-9 { GraphValue::AllPositive } else { GraphValue::AllZero };
            assert_eq!(*v, expect, "y = {y}");
        }
    }

    #[test]
    fn extraction_interpolates_and_mirrors() {
        let p = params();
        let g = Grid::build(p, 64, 35, 3.5).unwrap();
        // Linear in x on each half, so interpolation is exact:
        // u = 0.3 - |x| - 0.1 y crosses 0 at x = -(0.3 - 0.1 y) for y < 3.
        let f = Field::from_fn(&g, |x, y| 0.3 - x.abs() - 0.1 * y);
        let c = extract_graph_field(&f, 0.0);
        let m = extract_graph_mirrored(&f, 0.0);
        for ((&y, v), w) in c.ys.iter().zip(&c.gs).zip(&m.gs) {
            if y >= 3.0 - 1e-9 {
                assert_eq!(*v, GraphValue::AllZero);
                continue;
            }
            let gv = v.defined().unwrap();
            assert!((gv + (0.3 - 0.1 * y)).abs() < 1e-12, "y = {y}: {gv}");
            assert!((w.defined().unwrap() + gv).abs() < 1e-12);
        }
        assert_eq!(c.asymmetric_rows, 0);
        // Raising the threshold moves g toward 0.
        let hi = extract_graph_field(&f, 0.05);
        for (a, b) in c.gs.iter().zip(&hi.gs) {
            if let (Some(a), Some(b)) = (a.defined(), b.defined()) {
                assert!(b >= a);
            }
        }
    }

    #[test]
    fn oscillation_examples() {
        let ys: Vec<f64> = (0..200).map(|k| k as f64 * 0.05).collect();
        let gs = ys.iter().map(|&y| GraphValue::Defined(-0.25 + 0.1 * y.sin())).collect();
        let c = FBCurve::from_samples(ys.clone(), gs, 0.0, 1.0);
        let sins: Vec<f64> = ys.iter().map(|y| y.sin()).collect();
        let expect = 0.1 * (sins.iter().copied().fold(f64::MIN, f64::max) - sins.iter().copied().fold(f64::MAX, f64::min));
        assert!((oscillation(&c).unwrap() - expect).abs() < 1e-15);

        let one = FBCurve::from_samples(vec![0.0, 1.0], vec![GraphValue::Defined(-0.1), GraphValue::AllZero], 0.0, 1.0);
        assert!(matches!(oscillation(&one), Err(Error::NotDefined(_))));
    }

    #[test]
    fn csv_roundtrip() {
        let c = FBCurve::from_samples(
            vec![0.0, 0.5, 1.0],
            vec![GraphValue::AllPositive, GraphValue::Defined(-0.125), GraphValue::AllZero],
            0.01,
            1.0,
        );
        let back = FBCurve::from_csv(&c.to_csv(), 0.01, 1.0).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn flat_gradient_condition_at_root() {
        assert!(flat_bernoulli_residual(2.0, 3.0).unwrap() <= 1e-10);
        for (m, h) in [(1.0, 3.0), (0.5, 1.5), (3.0, 10.0)] {
            assert!(flat_bernoulli_residual(m, h).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn bernoulli_check_on_a_matching_wedge() {
        // u = sqrt(h - y) (0.2 - |x|)_+ has a vertical free boundary at
        // x = -0.2 with |grad u| = sqrt(h - y) up to O(offset^2 / (h - y)^2).
        let p = ProblemParams::new(1.0, 100.0, 0.3, 1.0).unwrap();
        let g = Grid::build(p, 128, 404, 101.0).unwrap();
        let f = Field::from_fn(&g, |x, y| {
            if y < 5.0 { (100.0 - y).sqrt() * (0.2 - x.abs()).max(0.0) } else { 0.0 }
        });
        let curve = extract_graph_field(&f, 0.0);
        let stats = bernoulli_check_field(&f, &curve).unwrap();
        assert!(stats.samples >= 10);
        assert!(stats.median < 1e-3, "{stats:?}");
        assert!(stats.p90 < 1e-3);

        let none = FBCurve::from_samples(vec![1.0], vec![GraphValue::AllZero], 0.0, 1.0);
        assert!(matches!(bernoulli_check_field(&f, &none), Err(Error::NotDefined(_))));
    }

    #[test]
    fn contact_ratio_synthetics() {
        let p = params();
        let delta = 0.1;
        let cusp = dyadic_curve(&p, delta, 12, |y| -0.5 + (y - p.gamma).abs().sqrt());
        let r = contact_ratios(&cusp, &p, 12, Some(delta)).unwrap();
        let above: Vec<f64> = r.ratios.iter().filter(|s| s.side == Approach::Above).map(|s| s.ratio).collect();
        assert_eq!(above.len(), 13);
        for w in above.windows(2) {
            assert!((w[1] / w[0] - 2f64.sqrt()).abs() < 1e-12);
        }
        assert!(r.monotone_tail);

        let alpha = 0.7;
        let line = dyadic_curve(&p, delta, 12, |y| -0.5 + alpha * (y - p.gamma).abs());
        let r = contact_ratios(&line, &p, 12, Some(delta)).unwrap();
        assert!(r.ratios.iter().all(|s| (s.ratio - alpha).abs() < 1e-12));
        assert!(!r.monotone_tail);

        let empty = FBCurve::from_samples(vec![0.0, 1.0], vec![GraphValue::AllZero; 2], 0.0, 1.0);
        assert!(matches!(contact_ratios(&empty, &p, 4, Some(delta)), Err(Error::NotDefined(_))));
    }
}
