//! Parameter regimes of the periodic problem.
//!
//! The one-dimensional energy `E(t) = m^2/t + (h^2 - ((h-t)_+)^2)/2` has
//! derivative `-p(t)/t^2` with `p(t) = t^3 - h t^2 + m^2`, so its critical
//! points are the positive roots of `p`. Two critical heads organise the
//! picture:
//!
//! * `h# = 3 (m/2)^{2/3}`: below it `p` has no positive root;
//! * `h* = 3 (m/sqrt 2)^{2/3}`: from here on the first root `t_h` beats the
//!   `t -> inf` limit `h^2/2`.
//!
//! Between the two, `tau_h > t_h` is where the decreasing branch of `E`
//! returns to the level `E(t_h)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flat;

/// The quadruple `(m, h, gamma, lambda)` of one problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    /// Mass-flux constant; the datum on the bottom is `u = m`.
    pub m: f64,
    /// Hydraulic head.
    pub h: f64,
    /// Height above which the datum vanishes on the lateral line.
    pub gamma: f64,
    /// Period in `x`.
    pub lambda: f64,
}

impl ProblemParams {
    pub fn new(m: f64, h: f64, gamma: f64, lambda: f64) -> Result<Self> {
        let p = ProblemParams { m, h, gamma, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m", self.m),
            ("h", self.h),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be a positive finite number, got {v}")));
            }
        }
        Ok(())
    }

    /// Fails unless `gamma < h`, the standing hypothesis of the blow-up analysis.
    pub fn require_gamma_below_h(&self) -> Result<()> {
        if self.gamma < self.h {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "gamma = {} must lie below h = {}",
                self.gamma, self.h
            )))
        }
    }
}

/// Tolerances for the root finders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootConfig {
    /// Relative bracket width at which bisection stops.
    pub rel_tol: f64,
    /// Relative residual accepted for the energy balance defining `tau_h`.
    pub balance_tol: f64,
    /// Relative distance to `h#` below which the double root `2h/3` is returned.
    pub snap_tol: f64,
}

impl Default for RootConfig {
    fn default() -> Self {
        RootConfig {
            rel_tol: 1e-12,
            balance_tol: 1e-10,
            snap_tol: 1e-12,
        }
    }
}

/// Whether `gamma` falls in the range where every global minimiser is non-flat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaClass {
    NonFlatGuaranteed,
    NoGuarantee,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub h_sharp: f64,
    pub h_star: f64,
    pub t_h: Option<f64>,
    pub tau_h: Option<f64>,
    pub gamma_class: GammaClass,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {v}")))
    }
}

/// `p(t) = t^3 - h t^2 + m^2`.
pub fn cubic(m: f64, h: f64, t: f64) -> f64 {
    t * t * (t - h) + m * m
}

/// Returns `(h#, h*)` for the mass flux `m`.
pub fn critical_heights(m: f64) -> Result<(f64, f64)> {
    check_positive("m", m)?;
    let h_sharp = 3.0 * (m / 2.0).powf(2.0 / 3.0);
    let h_star = 3.0 * (m / std::f64::consts::SQRT_2).powf(2.0 / 3.0);
    Ok((h_sharp, h_star))
}

fn at_double_root(m: f64, h: f64, cfg: &RootConfig) -> Result<bool> {
    let (h_sharp, _) = critical_heights(m)?;
    if (h - h_sharp).abs() <= cfg.snap_tol * h_sharp {
        Ok(true)
    } else if h < h_sharp {
        Err(Error::NoRoot { h, h_sharp })
    } else {
        Ok(false)
    }
}

/// Bisection on `[lo, hi]` where `f(lo)` and `f(hi)` have opposite signs.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    let f_lo_positive = f(lo) > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= rel_tol * hi.abs() {
            break;
        }
        if (f(mid) > 0.0) == f_lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Newton polish of a cubic root, kept only while it stays in `[lo, hi]` and
/// shrinks the residual.
fn polish(m: f64, h: f64, mut t: f64, lo: f64, hi: f64) -> f64 {
    for _ in 0..4 {
        let dp = t * (3.0 * t - 2.0 * h);
        if dp == 0.0 {
            break;
        }
        let next = t - cubic(m, h, t) / dp;
        if !(lo..=hi).contains(&next) || cubic(m, h, next).abs() >= cubic(m, h, t).abs() {
            break;
        }
        t = next;
    }
    t
}

/// First positive root `t_h` of `t^3 - h t^2 + m^2`.
pub fn flat_height_root(m: f64, h: f64) -> Result<f64> {
    flat_height_root_with(m, h, &RootConfig::default())
}

pub fn flat_height_root_with(m: f64, h: f64, cfg: &RootConfig) -> Result<f64> {
    check_positive("m", m)?;
    check_positive("h", h)?;
    if at_double_root(m, h, cfg)? {
        return Ok(2.0 * h / 3.0);
    }
    // p(0) = m^2 > 0 and p(2h/3) = m^2 - 4h^3/27 <= 0 for h >= h#.
    let lo = 1e-14 * h;
    let hi = 2.0 * h / 3.0;
    let t = bisect(|t| cubic(m, h, t), lo, hi, cfg.rel_tol);
    Ok(polish(m, h, t, lo, hi))
}

/// Second positive root of the cubic: the local maximum of `E`, in `[2h/3, h]`.
fn second_root(m: f64, h: f64, cfg: &RootConfig) -> f64 {
    let lo = 2.0 * h / 3.0;
    let t = bisect(|t| cubic(m, h, t), lo, h, cfg.rel_tol);
    polish(m, h, t, lo, h)
}

/// The balance height `tau_h` for `h# <= h < h*`.
pub fn tau_threshold(m: f64, h: f64) -> Result<f64> {
    tau_threshold_with(m, h, &RootConfig::default())
}

pub fn tau_threshold_with(m: f64, h: f64, cfg: &RootConfig) -> Result<f64> {
    check_positive("m", m)?;
    check_positive("h", h)?;
    let (h_sharp, h_star) = critical_heights(m)?;
    let outside = || Error::Domain(format!("tau_h needs h in [{h_sharp}, {h_star}), got h = {h}"));
    if h >= h_star {
        return Err(outside());
    }
    match at_double_root(m, h, cfg) {
        Ok(true) => return Ok(2.0 * h / 3.0),
        Ok(false) => {}
        Err(_) => return Err(outside()),
    }
    let t_h = flat_height_root_with(m, h, cfg)?;
    let level = flat::energy_density_unchecked(m, h, t_h);
    let balance = |t: f64| flat::energy_density_unchecked(m, h, t) - level;

    let lo = second_root(m, h, cfg);
    let mut hi = 2.0 * lo;
    let mut grown = 0;
    while balance(hi) >= 0.0 {
        hi *= 2.0;
        grown += 1;
        if grown > 1000 || !hi.is_finite() {
            return Err(Error::Domain(format!(
                "no sign change of the energy balance beyond t = {lo} for m = {m}, h = {h}"
            )));
        }
    }
    let tau = bisect(balance, lo, hi, cfg.rel_tol);
    let residual = balance(tau).abs() / level.abs().max(1.0);
    if residual > cfg.balance_tol {
        log::warn!("tau_h balance residual {residual:e} above {:e}", cfg.balance_tol);
    }
    Ok(tau)
}

/// Full regime analysis for one parameter set.
pub fn classify_gamma(params: &ProblemParams) -> Result<RegimeReport> {
    params.validate()?;
    let ProblemParams { m, h, gamma, .. } = *params;
    let cfg = RootConfig::default();
    let (h_sharp, h_star) = critical_heights(m)?;

    let t_h = match flat_height_root_with(m, h, &cfg) {
        Ok(t) => Some(t),
        Err(Error::NoRoot { .. }) => None,
        Err(e) => return Err(e),
    };
    let tau_h = match t_h {
        Some(_) if h < h_star => Some(tau_threshold_with(m, h, &cfg)?),
        _ => None,
    };

    // Open intervals: endpoints fall in NoGuarantee.
    let non_flat = match (t_h, tau_h) {
        (None, _) => true,
        (Some(t), Some(tau)) => gamma < t || gamma > tau,
        (Some(t), None) => gamma < t,
    };
    Ok(RegimeReport {
        h_sharp,
        h_star,
        t_h,
        tau_h,
        gamma_class: if non_flat {
            GammaClass::NonFlatGuaranteed
        } else {
            GammaClass::NoGuarantee
        },
    })
}
