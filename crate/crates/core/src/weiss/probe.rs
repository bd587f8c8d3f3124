//! Empirical non-degeneracy constant.
//!
//! For random balls `B_r(x)` that avoid the contact points `(+-lambda/2,
//! gamma)` and on which `u` is nontrivial in `B_{kr}(x)`, the quotient
//!
//! ```text
//! C = (1/r) avg_{dB_r(x)} u / sqrt((h - y - k r)_+)
//! ```
//!
//! is evaluated and its infimum reported.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{contact_radius_bound, Sampler};
use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::io::SCHEMA_VERSION;
use crate::minimizer::Solution;
use crate::regimes::ProblemParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub k: f64,
    pub samples: usize,
    pub seed: u64,
    /// Radius range; defaults to `[min(4 max(dx, dy), r0/2), r0]` for solutions.
    #[serde(default)]
    pub radii: Option<(f64, f64)>,
    pub angular: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            k: 0.5,
            samples: 200,
            seed: 0,
            radii: None,
            angular: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeBall {
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub schema_version: u32,
    pub k: f64,
    pub seed: u64,
    pub sampled: usize,
    pub qualifying: usize,
    pub c_emp: f64,
    /// Ball attaining `c_emp`.
    pub worst: ProbeBall,
}

/// Trapezoid-rule average of `u` over the circle of radius `r`.
pub fn circle_average<S: Sampler + ?Sized>(s: &S, center: [f64; 2], r: f64, angular: usize) -> f64 {
    let dtheta = 2.0 * std::f64::consts::PI / angular as f64;
    let vals: Vec<f64> = (0..angular)
        .map(|a| {
            let th = a as f64 * dtheta;
            s.value([center[0] + r * th.cos(), center[1] + r * th.sin()])
        })
        .collect();
    pairwise_sum(&vals) / angular as f64
}

/// Whether `u > threshold` somewhere on a polar sampling of `B_rad(center)`.
fn nontrivial<S: Sampler + ?Sized>(s: &S, center: [f64; 2], rad: f64, threshold: f64) -> bool {
    const RINGS: usize = 16;
    const SPOKES: usize = 64;
    if s.value(center) > threshold {
        return true;
    }
    (1..=RINGS).any(|k| {
        let rr = rad * k as f64 / RINGS as f64;
        (0..SPOKES).any(|a| {
            let th = 2.0 * std::f64::consts::PI * a as f64 / SPOKES as f64;
            s.value([center[0] + rr * th.cos(), center[1] + rr * th.sin()]) > threshold
        })
    })
}

/// Probe on any sampler over the strip `y in (0, y_max)`.
pub fn nondegeneracy_probe_sampler<S: Sampler + ?Sized>(
    s: &S,
    params: &ProblemParams,
    y_max: f64,
    threshold: f64,
    radii: (f64, f64),
    opts: &ProbeOptions,
) -> Result<ProbeReport> {
    if !(opts.k > 0.0 && opts.k < 1.0) {
        return Err(Error::config("probe.k", format!("must lie in (0, 1), got {}", opts.k)));
    }
    let (r_lo, r_hi) = radii;
    if !(r_lo > 0.0 && r_lo <= r_hi) {
        return Err(Error::Domain(format!("invalid probe radii ({r_lo}, {r_hi})")));
    }
    let lambda = params.lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut balls = Vec::with_capacity(opts.samples);
    for _ in 0..opts.samples {
        let r = if r_hi > r_lo { rng.random_range(r_lo..r_hi) } else { r_lo };
        let x = rng.random_range(-0.5 * lambda..0.5 * lambda);
        let y_hi = (params.h - opts.k * r).min(y_max - r);
        if y_hi <= r {
            continue;
        }
        let y = rng.random_range(r..y_hi);
        balls.push([x, y, r]);
    }
    let contact = [-0.5 * lambda, params.gamma];
    let avoids_contact = |x: f64, y: f64, r: f64| {
        let dx = (x - contact[0]).rem_euclid(lambda);
        let dx = dx.min(lambda - dx);
        dx.hypot(y - contact[1]) > r
    };
    let results = Exec::default().map(balls.len(), |b| {
        let [x, y, r] = balls[b];
        let weight = params.h - y - opts.k * r;
        if weight <= 0.0 || !avoids_contact(x, y, r) || !nontrivial(s, [x, y], opts.k * r, threshold) {
            return None;
        }
        let c = circle_average(s, [x, y], r, opts.angular) / r / weight.sqrt();
        Some(ProbeBall { x, y, r, c })
    });
    let qualifying: Vec<ProbeBall> = results.into_iter().flatten().collect();
    let worst = qualifying
        .iter()
        .copied()
        .reduce(|a, b| if b.c < a.c { b } else { a })
        .ok_or_else(|| Error::NotDefined("no sampled ball meets u on its inner ball".into()))?;
    Ok(ProbeReport {
        schema_version: SCHEMA_VERSION,
        k: opts.k,
        seed: opts.seed,
        sampled: balls.len(),
        qualifying: qualifying.len(),
        c_emp: worst.c,
        worst,
    })
}

pub fn nondegeneracy_probe(solution: &Solution, opts: &ProbeOptions) -> Result<ProbeReport> {
    let grid = &solution.field.grid;
    let params = grid.params;
    params.require_gamma_below_h()?;
    let radii = opts.radii.unwrap_or_else(|| {
        let hi = contact_radius_bound(&params);
        ((4.0 * grid.dx.max(grid.dy)).min(0.5 * hi), hi)
    });
    nondegeneracy_probe_sampler(&solution.field, &params, grid.y_max, 0.5 * solution.eps_final, radii, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flat::FlatProfile;
    use crate::grid::Grid;
    use crate::weiss::Analytic;
    use std::f64::consts::PI;

    fn ramp(m: f64, t: f64) -> Analytic<impl Fn([f64; 2]) -> f64 + Sync, impl Fn([f64; 2]) -> [f64; 2] + Sync> {
        Analytic {
            value: move |p: [f64; 2]| m * (1.0 - p[1] / t).max(0.0),
            gradient: move |p: [f64; 2]| if p[1] < t { [0.0, -m / t] } else { [0.0, 0.0] },
        }
    }

    #[test]
    fn circle_average_on_the_free_line() {
        // avg over the circle of (m/t)(t - y)_+ centred at y = t is (m/t) r / pi.
        let (m, t) = (1.0, 0.8);
        for r in [0.05, 0.2, 0.5] {
            let avg = circle_average(&ramp(m, t), [0.1, t], r, 4096);
            let exact = m / t * r / PI;
            assert!((avg - exact).abs() < 1e-6 * exact.max(1.0), "{avg} vs {exact}");
        }
    }

    #[test]
    fn flat_profile_has_a_positive_constant() {
        let p = ProblemParams::new(1.0, 3.0, 0.3, 1.0).unwrap();
        let g = Grid::build(p, 64, 64, 3.5).unwrap();
        let f = FlatProfile::new(1.0, 1.5).unwrap().sample(&g);
        let sol = Solution::from_field(f, 4.0 * g.dx).unwrap();
        let report = nondegeneracy_probe(&sol, &ProbeOptions::default()).unwrap();
        assert!(report.qualifying > 0);
        assert!(report.c_emp > 0.0, "{report:?}");
        let again = nondegeneracy_probe(&sol, &ProbeOptions::default()).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn zero_field_is_not_defined() {
        let p = ProblemParams::new(1.0, 3.0, 0.3, 1.0).unwrap();
        let zero = Analytic { value: |_: [f64; 2]| 0.0, gradient: |_: [f64; 2]| [0.0, 0.0] };
        let r = nondegeneracy_probe_sampler(&zero, &p, 3.5, 0.0, (0.05, 0.1), &ProbeOptions::default());
        assert!(matches!(r, Err(Error::NotDefined(_))));
    }

    #[test]
    fn k_outside_unit_interval_is_rejected() {
        let p = ProblemParams::new(1.0, 3.0, 0.3, 1.0).unwrap();
        let opts = ProbeOptions { k: 1.0, ..ProbeOptions::default() };
        let r = nondegeneracy_probe_sampler(&ramp(1.0, 1.0), &p, 3.5, 0.0, (0.05, 0.1), &opts);
        assert!(matches!(r, Err(Error::Config { .. })));
    }
}
