//! One-dimensional (flat) profiles `u_t(y) = m (1 - y/t)_+` and their energies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::regimes::{self, ProblemParams};

/// Free-boundary height of a flat profile; `Infinite` is the `t -> inf` limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FlatHeight {
    Finite(f64),
    Infinite,
}

impl FlatHeight {
    pub fn finite(self) -> Option<f64> {
        match self {
            FlatHeight::Finite(t) => Some(t),
            FlatHeight::Infinite => None,
        }
    }
}

/// The linear ramp from `m` at `y = 0` to zero at `y = t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatProfile {
    pub t: f64,
    pub m: f64,
}

impl FlatProfile {
    pub fn new(m: f64, t: f64) -> Result<Self> {
        if !(m > 0.0 && t > 0.0 && m.is_finite() && t.is_finite()) {
            return Err(Error::Domain(format!("flat profile needs m, t > 0, got m = {m}, t = {t}")));
        }
        Ok(FlatProfile { t, m })
    }

    /// The Dirichlet datum `u_0`, i.e. the profile with `t = gamma`.
    pub fn datum(params: &ProblemParams) -> Self {
        FlatProfile {
            t: params.gamma,
            m: params.m,
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        self.m * (1.0 - y / self.t).max(0.0)
    }

    /// `|du/dy|` on the positivity side.
    pub fn slope(&self) -> f64 {
        self.m / self.t
    }

    /// Samples the profile on `grid` and applies the Dirichlet constraints.
    pub fn sample(&self, grid: &Grid) -> Field {
        let mut field = Field::from_fn(grid, |_, y| self.value(y));
        field.project();
        field
    }
}

pub(crate) fn energy_density_unchecked(m: f64, h: f64, t: f64) -> f64 {
    let rest = (h - t).max(0.0);
    m * m / t + (h * h - rest * rest) / 2.0
}

/// Energy per unit wavelength of the flat profile with height `t`.
pub fn energy_density(m: f64, h: f64, t: f64) -> Result<f64> {
    for (name, v) in [("m", m), ("h", h), ("t", t)] {
        if !(v > 0.0) {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(energy_density_unchecked(m, h, t))
}

/// Energy density at a possibly infinite height; `E(inf) = h^2/2` exactly.
pub fn energy_density_at(m: f64, h: f64, t: FlatHeight) -> Result<f64> {
    match t {
        FlatHeight::Finite(t) => energy_density(m, h, t),
        FlatHeight::Infinite => {
            energy_density(m, h, 1.0)?;
            Ok(h * h / 2.0)
        }
    }
}

/// Global minimum of the flat energy over `t in (0, inf]`.
///
/// Ties within `1e-12` go to the finite height.
pub fn best_flat_profile(m: f64, h: f64) -> Result<(FlatHeight, f64)> {
    let limit = energy_density_at(m, h, FlatHeight::Infinite)?;
    match regimes::flat_height_root(m, h) {
        Ok(t_h) => {
            let e = energy_density_unchecked(m, h, t_h);
            if e <= limit + 1e-12 {
                Ok((FlatHeight::Finite(t_h), e))
            } else {
                Ok((FlatHeight::Infinite, limit))
            }
        }
        Err(Error::NoRoot { .. }) => Ok((FlatHeight::Infinite, limit)),
        Err(e) => Err(e),
    }
}

/// `J_h(u_0)` over one period: an upper bound for the constrained minimum.
pub fn dirichlet_datum_energy(params: &ProblemParams) -> Result<f64> {
    params.validate().map_err(|e| Error::Domain(e.to_string()))?;
    Ok(params.lambda * energy_density(params.m, params.h, params.gamma)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_examples() {
        assert_eq!(energy_density(2.0, 3.0, 2.0).unwrap(), 6.0);
        assert!((energy_density(1.0, 3.0, 1e6).unwrap() - 4.5).abs() < 1e-5);
        // t_h from the cubic oracle: 0.652703644666139; mpmath E = 3.27718879635614
        let e = energy_density(1.0, 3.0, 0.652_703_644_666_139_3).unwrap();
        assert!((e - 3.277_188_796_356_143).abs() < 1e-12);
        assert!(energy_density(1.0, 3.0, 0.0).is_err());
        assert!(energy_density(-1.0, 3.0, 1.0).is_err());
    }

    #[test]
    fn best_profile_examples() {
        let (t, e) = best_flat_profile(1.0, 3.0).unwrap();
        assert!((t.finite().unwrap() - 0.652_703_644_666_139_3).abs() < 1e-12);
        assert!((e - 3.277_188_796_356_143).abs() < 1e-12);

        assert_eq!(best_flat_profile(1.0, 1.5).unwrap(), (FlatHeight::Infinite, 1.125));
        // At h = h#, E(t_h) = 6 > 4.5.
        assert_eq!(best_flat_profile(2.0, 3.0).unwrap(), (FlatHeight::Infinite, 4.5));
    }

    #[test]
    fn datum_energy_examples() {
        let p = ProblemParams { m: 2.0, h: 3.0, gamma: 2.0, lambda: 1.0 };
        assert_eq!(dirichlet_datum_energy(&p).unwrap(), 6.0);
        let p = ProblemParams { m: 1.0, h: 3.0, gamma: 0.3, lambda: 2.0 };
        assert!((dirichlet_datum_energy(&p).unwrap() - 8.376_666_666_666_667).abs() < 1e-12);
        let p = ProblemParams { m: 1.0, h: 3.0, gamma: 0.3, lambda: 0.0 };
        assert!(matches!(dirichlet_datum_energy(&p), Err(Error::Domain(_))));
    }

    #[test]
    fn finite_difference_derivative_matches_cubic() {
        let cases = [(1.0, 3.0), (0.5, 2.0), (2.0, 4.0)];
        for (m, h) in cases {
            for k in 0..50 {
                // Log-spaced in (0, h); beyond h the energy is m^2/t + h^2/2.
                let t = 0.01 * h * (99f64).powf(k as f64 / 49.0);
                let step = 1e-5 * t;
                let fd = (energy_density(m, h, t + step).unwrap()
                    - energy_density(m, h, t - step).unwrap())
                    / (2.0 * step);
                let exact = -regimes::cubic(m, h, t) / (t * t);
                assert!(
                    (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0),
                    "m={m} h={h} t={t}: {fd} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn sign_pattern_above_h_sharp() {
        // decreasing, increasing, decreasing
        let (m, h) = (1.0, 3.0);
        let e = |t: f64| energy_density(m, h, t).unwrap();
        let mut signs = Vec::new();
        let mut t = 0.05;
        while t < 20.0 {
            let s = (e(t * 1.01) - e(t)).signum();
            if signs.last() != Some(&s) {
                signs.push(s);
            }
            t *= 1.01;
        }
        assert_eq!(signs, vec![-1.0, 1.0, -1.0]);
    }

    #[test]
    fn datum_is_above_flat_optimum() {
        for &(m, h, g) in &[(1.0, 3.0, 0.3), (1.0, 1.5, 0.5), (2.0, 3.0, 2.0), (0.7, 5.0, 4.0)] {
            let p = ProblemParams { m, h, gamma: g, lambda: 1.3 };
            let (_, e_star) = best_flat_profile(m, h).unwrap();
            assert!(dirichlet_datum_energy(&p).unwrap() >= p.lambda * e_star);
        }
    }
}
