//! Boundary Weiss density at the contact point `x0 = (-lambda/2, gamma)`.
//!
//! For a ball `B_r(c)`
//!
//! ```text
//! Phi(r) = r^-2 int_{B_r} (|grad u|^2 + chi_{u > 0} q) - r^-3 int_{dB_r} u^2
//! ```
//!
//! with `q = h - y` for solutions and `q = h - gamma` (constant) in blow-up
//! coordinates. The increment identity
//!
//! ```text
//! Phi(s) - Phi(p) = int_p^s r^-2 int_{dB_r} 2 (d_nu u - u/r)^2 dr
//!                 + int_p^s r^-3 int_{B_r} chi_{u > 0} (z . grad q) dr
//! ```
//!
//! is checked by evaluating both sides with the same quadrature; for
//! `q = h - y` the second integrand is `-(y - gamma)`.
//!
//! Balls around `x0` extend across `x = -lambda/2`; for even, periodic fields
//! the periodic wrap of the grid interpolant is the reflected extension.

mod blowup;
mod probe;

pub use blowup::{
    blowup_rescale, classify_blowup, hausdorff_fb_distance, read_blowup, write_blowup, BlowupClass,
    BlowupField, BlowupLabel,
};
pub use probe::{circle_average, nondegeneracy_probe, nondegeneracy_probe_sampler, ProbeOptions, ProbeReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::grid::Field;
use crate::minimizer::Solution;
use crate::regimes::ProblemParams;

/// Point evaluation of a scalar field and its gradient.
pub trait Sampler: Sync {
    fn value(&self, p: [f64; 2]) -> f64;
    fn gradient(&self, p: [f64; 2]) -> [f64; 2];
}

impl Sampler for Field {
    fn value(&self, p: [f64; 2]) -> f64 {
        self.value_at(p[0], p[1])
    }

    fn gradient(&self, p: [f64; 2]) -> [f64; 2] {
        self.gradient_at(p[0], p[1])
    }
}

/// A closed-form field given by value and gradient closures.
pub struct Analytic<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<V, G> Sampler for Analytic<V, G>
where
    V: Fn([f64; 2]) -> f64 + Sync,
    G: Fn([f64; 2]) -> [f64; 2] + Sync,
{
    fn value(&self, p: [f64; 2]) -> f64 {
        (self.value)(p)
    }

    fn gradient(&self, p: [f64; 2]) -> [f64; 2] {
        (self.gradient)(p)
    }
}

/// Half-plane profile `c (-t)_+` in blow-up coordinates.
pub fn half_plane(c: f64) -> Analytic<impl Fn([f64; 2]) -> f64 + Sync, impl Fn([f64; 2]) -> [f64; 2] + Sync> {
    Analytic {
        value: move |p: [f64; 2]| c * (-p[1]).max(0.0),
        gradient: move |p: [f64; 2]| if p[1] < 0.0 { [0.0, -c] } else { [0.0, 0.0] },
    }
}

/// Weight `q` of the positivity term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    /// `q(x, y) = h - y` in strip coordinates.
    Head { h: f64 },
    Constant { value: f64 },
}

impl Coefficient {
    #[inline]
    fn value(self, p: [f64; 2]) -> f64 {
        match self {
            Coefficient::Head { h } => h - p[1],
            Coefficient::Constant { value } => value,
        }
    }

    /// `(p - c) . grad q`.
    #[inline]
    fn radial(self, p: [f64; 2], c: [f64; 2]) -> f64 {
        match self {
            Coefficient::Head { .. } => -(p[1] - c[1]),
            Coefficient::Constant { .. } => 0.0,
        }
    }
}

/// Angular and radial node counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub angular: usize,
    pub radial: usize,
}

impl QuadratureSpec {
    /// 512 angular nodes and `max(64, r/dx)` radial nodes.
    pub fn default_for(r: f64, dx: f64) -> QuadratureSpec {
        QuadratureSpec {
            angular: 512,
            radial: 64usize.max((r / dx).ceil() as usize),
        }
    }
}

/// Centre, weight and indicator threshold of a density evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeissSetup {
    pub center: [f64; 2],
    pub coefficient: Coefficient,
    /// `chi` is the sharp indicator `u > threshold`.
    pub threshold: f64,
    /// Largest admissible radius (exclusive).
    pub r_max: f64,
}

impl WeissSetup {
    /// Setup at `x0` for a solution on the strip.
    pub fn at_contact(params: &ProblemParams, threshold: f64) -> WeissSetup {
        WeissSetup {
            center: [-0.5 * params.lambda, params.gamma],
            coefficient: Coefficient::Head { h: params.h },
            threshold,
            r_max: contact_radius_bound(params),
        }
    }

    /// Setup at the origin of blow-up coordinates with constant weight `c`.
    pub fn blowup(c: f64, r_max: f64) -> WeissSetup {
        WeissSetup {
            center: [0.0, 0.0],
            coefficient: Coefficient::Constant { value: c },
            threshold: 0.0,
            r_max,
        }
    }

    fn check(&self, r: f64) -> Result<()> {
        if r > 0.0 && r < self.r_max {
            Ok(())
        } else {
            Err(Error::Domain(format!("radius {r} outside (0, {})", self.r_max)))
        }
    }

    #[inline]
    fn point(&self, rho: f64, theta: f64) -> [f64; 2] {
        [self.center[0] + rho * theta.cos(), self.center[1] + rho * theta.sin()]
    }
}

/// `0.5 min(gamma, h - gamma, lambda)`: radii stay inside the neighbourhood
/// where the gradient bound is assumed.
pub fn contact_radius_bound(params: &ProblemParams) -> f64 {
    0.5 * params.gamma.min(params.h - params.gamma).min(params.lambda)
}

struct BallTerms {
    dirichlet: f64,
    positivity: f64,
    radial_weight: f64,
}

/// Polar midpoint quadrature over `B_r`, one partial per angular sector.
fn ball_terms<S: Sampler + ?Sized>(s: &S, setup: &WeissSetup, r: f64, quad: QuadratureSpec) -> BallTerms {
    let na = quad.angular;
    let nr = quad.radial;
    let dtheta = 2.0 * std::f64::consts::PI / na as f64;
    let dr = r / nr as f64;
    let parts = Exec::default().map(na, |a| {
        let theta = (a as f64 + 0.5) * dtheta;
        let (mut d, mut p, mut w) = (0.0, 0.0, 0.0);
        for k in 0..nr {
            let rho = (k as f64 + 0.5) * dr;
            let pt = setup.point(rho, theta);
            let weight = rho * dr * dtheta;
            let [gx, gy] = s.gradient(pt);
            d += weight * (gx * gx + gy * gy);
            if s.value(pt) > setup.threshold {
                p += weight * setup.coefficient.value(pt);
                w += weight * setup.coefficient.radial(pt, setup.center);
            }
        }
        [d, p, w]
    });
    let col = |k: usize| pairwise_sum(&parts.iter().map(|v| v[k]).collect::<Vec<_>>());
    BallTerms {
        dirichlet: col(0),
        positivity: col(1),
        radial_weight: col(2),
    }
}

/// Trapezoid rule on `dB_r` for `int u^2` and `int 2 (d_nu u - u/r)^2`.
fn circle_terms<S: Sampler + ?Sized>(s: &S, setup: &WeissSetup, r: f64, na: usize) -> (f64, f64) {
    let dtheta = 2.0 * std::f64::consts::PI / na as f64;
    let parts = Exec::default().map(na, |a| {
        let theta = a as f64 * dtheta;
        let pt = setup.point(r, theta);
        let u = s.value(pt);
        let [gx, gy] = s.gradient(pt);
        let dnu = gx * theta.cos() + gy * theta.sin();
        let defect = dnu - u / r;
        [u * u * r * dtheta, 2.0 * defect * defect * r * dtheta]
    });
    (
        pairwise_sum(&parts.iter().map(|v| v[0]).collect::<Vec<_>>()),
        pairwise_sum(&parts.iter().map(|v| v[1]).collect::<Vec<_>>()),
    )
}

/// `Phi(r)` for any sampler.
pub fn weiss_density_sampler<S: Sampler + ?Sized>(s: &S, setup: &WeissSetup, r: f64, quad: QuadratureSpec) -> Result<f64> {
    setup.check(r)?;
    let ball = ball_terms(s, setup, r, quad);
    let (circle, _) = circle_terms(s, setup, r, quad.angular);
    Ok((ball.dirichlet + ball.positivity) / (r * r) - circle / (r * r * r))
}

/// `Phi(r)` at the contact point of a computed solution.
pub fn weiss_density(solution: &Solution, r: f64, quad: Option<QuadratureSpec>) -> Result<f64> {
    let params = solution.field.grid.params;
    params.require_gamma_below_h()?;
    let setup = WeissSetup::at_contact(&params, 0.5 * solution.eps_final);
    let quad = quad.unwrap_or_else(|| QuadratureSpec::default_for(r, solution.field.grid.dx));
    weiss_density_sampler(&solution.field, &setup, r, quad)
}

/// Both sides of the increment identity between radii `rho < sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub rho: f64,
    pub sigma: f64,
    pub lhs: f64,
    /// `int r^-2 int_{dB_r} 2 (d_nu u - u/r)^2`.
    pub homogeneity_term: f64,
    /// `int r^-3 int_{B_r} chi (z . grad q)`.
    pub weight_term: f64,
    pub residual: f64,
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Number of Gauss-Legendre nodes for the outer `dr` integrals.
pub const OUTER_NODES: usize = 16;

pub fn weiss_identity_sampler<S: Sampler + ?Sized>(
    s: &S,
    setup: &WeissSetup,
    rho: f64,
    sigma: f64,
    quad: QuadratureSpec,
) -> Result<IdentityCheck> {
    if !(rho < sigma) {
        return Err(Error::Domain(format!("need rho < sigma, got {rho} and {sigma}")));
    }
    setup.check(rho)?;
    setup.check(sigma)?;
    let lhs = weiss_density_sampler(s, setup, sigma, quad)? - weiss_density_sampler(s, setup, rho, quad)?;
    let (mid, half) = (0.5 * (sigma + rho), 0.5 * (sigma - rho));
    let mut homogeneity = 0.0;
    let mut weight = 0.0;
    for (x, w) in gauss_legendre(OUTER_NODES) {
        let r = mid + half * x;
        let (_, defect) = circle_terms(s, setup, r, quad.angular);
        let ball = ball_terms(s, setup, r, quad);
        homogeneity += half * w * defect / (r * r);
        weight += half * w * ball.radial_weight / (r * r * r);
    }
    Ok(IdentityCheck {
        rho,
        sigma,
        lhs,
        homogeneity_term: homogeneity,
        weight_term: weight,
        residual: (lhs - homogeneity - weight).abs(),
    })
}

/// `|Phi(sigma) - Phi(rho) - RHS|` for a computed solution.
pub fn weiss_identity_residual(solution: &Solution, rho: f64, sigma: f64, quad: Option<QuadratureSpec>) -> Result<IdentityCheck> {
    let params = solution.field.grid.params;
    params.require_gamma_below_h()?;
    let setup = WeissSetup::at_contact(&params, 0.5 * solution.eps_final);
    let quad = quad.unwrap_or_else(|| QuadratureSpec::default_for(sigma, solution.field.grid.dx));
    weiss_identity_sampler(&solution.field, &setup, rho, sigma, quad)
}

/// `Phi` on increasing radii with identity residuals between neighbours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeissSeries {
    pub radii: Vec<f64>,
    pub phi: Vec<f64>,
    pub identity: Vec<IdentityCheck>,
    pub quadrature: QuadratureSpec,
}

impl WeissSeries {
    /// CSV `r,phi,pair_sigma,identity_residual`; the last row has no pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# schema_version=1\nr,phi,pair_sigma,identity_residual\n");
        for (k, (&r, &phi)) in self.radii.iter().zip(&self.phi).enumerate() {
            match self.identity.get(k) {
                Some(c) => out.push_str(&format!("{r:.17e},{phi:.17e},{:.17e},{:.17e}\n", c.sigma, c.residual)),
                None => out.push_str(&format!("{r:.17e},{phi:.17e},,\n")),
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Vec<(f64, f64)>> {
        text.lines()
            .filter(|l| !l.starts_with('#'))
            .skip(1)
            .map(|line| {
                let mut cols = line.split(',');
                let parse = |c: Option<&str>| c.and_then(|v| v.parse::<f64>().ok());
                match (parse(cols.next()), parse(cols.next())) {
                    (Some(r), Some(phi)) => Ok((r, phi)),
                    _ => Err(Error::NotDefined(format!("malformed Weiss row `{line}`"))),
                }
            })
            .collect()
    }
}

pub fn weiss_series(solution: &Solution, radii: &[f64], quad: Option<QuadratureSpec>) -> Result<WeissSeries> {
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("radii must be nonempty and increasing".into()));
    }
    let dx = solution.field.grid.dx;
    let quad = quad.unwrap_or_else(|| QuadratureSpec::default_for(*radii.last().unwrap(), dx));
    let phi = radii
        .iter()
        .map(|&r| weiss_density(solution, r, Some(quad)))
        .collect::<Result<Vec<_>>>()?;
    let identity = radii
        .windows(2)
        .map(|w| weiss_identity_residual(solution, w[0], w[1], Some(quad)))
        .collect::<Result<Vec<_>>>()?;
    Ok(WeissSeries {
        radii: radii.to_vec(),
        phi,
        identity,
        quadrature: quad,
    })
}
