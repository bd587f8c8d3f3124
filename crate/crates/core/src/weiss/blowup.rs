//! Rescalings `u_n(z) = u(x0 + rho z) / rho` around the contact point.
//!
//! Blow-up coordinates are `z = (s, t)` with `x0` at the origin. Fields are
//! sampled on an `n x n` Cartesian patch covering `[-R, R]^2`, so the ball
//! `B_R(0)` is always contained in the patch.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{contact_radius_bound, Sampler};
use crate::error::{Error, Result};
use crate::io::{self, BlowupHeader, FieldHeader};
use crate::minimizer::Solution;
use crate::regimes::ProblemParams;

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupField {
    pub params: ProblemParams,
    pub rho: f64,
    pub radius: f64,
    /// Nodes per side (odd); the origin is the centre node.
    pub n: usize,
    /// Positivity threshold in rescaled units.
    pub threshold: f64,
    /// Row-major, `n` rows of increasing `t`, each of increasing `s`.
    pub values: Vec<f64>,
}

impl BlowupField {
    /// Samples `f(s, t)` on the patch.
    pub fn from_fn(
        params: ProblemParams,
        rho: f64,
        radius: f64,
        n: usize,
        threshold: f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<BlowupField> {
        if n < 3 || n % 2 == 0 {
            return Err(Error::Domain(format!("patch size must be odd and at least 3, got {n}")));
        }
        if !(radius > 0.0 && rho > 0.0) {
            return Err(Error::Domain(format!("need rho > 0 and R > 0, got {rho} and {radius}")));
        }
        let h = 2.0 * radius / (n - 1) as f64;
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                values.push(f(-radius + i as f64 * h, -radius + j as f64 * h));
            }
        }
        Ok(BlowupField {
            params,
            rho,
            radius,
            n,
            threshold,
            values,
        })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.radius + i as f64 * self.spacing()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n + i]
    }

    pub fn x0(&self) -> [f64; 2] {
        [-0.5 * self.params.lambda, self.params.gamma]
    }

    /// Cell index and local coordinate along one axis, clamped to the patch.
    fn locate(&self, v: f64) -> (usize, f64) {
        let h = self.spacing();
        let u = ((v + self.radius) / h).clamp(0.0, (self.n - 1) as f64);
        let i = (u.floor() as usize).min(self.n - 2);
        (i, u - i as f64)
    }

    /// Largest cell gradient magnitude over cells inside `B_R`.
    pub fn max_gradient(&self) -> f64 {
        let h = self.spacing();
        let mut best: f64 = 0.0;
        for j in 0..self.n - 1 {
            for i in 0..self.n - 1 {
                let (s, t) = (self.coord(i) + 0.5 * h, self.coord(j) + 0.5 * h);
                if s.hypot(t) > self.radius {
                    continue;
                }
                let [gx, gy] = self.gradient([s, t]);
                best = best.max(gx.hypot(gy));
            }
        }
        best
    }
}

impl Sampler for BlowupField {
    fn value(&self, p: [f64; 2]) -> f64 {
        let (i, a) = self.locate(p[0]);
        let (j, b) = self.locate(p[1]);
        let v00 = self.get(i, j);
        let v10 = self.get(i + 1, j);
        let v01 = self.get(i, j + 1);
        let v11 = self.get(i + 1, j + 1);
        (1.0 - b) * ((1.0 - a) * v00 + a * v10) + b * ((1.0 - a) * v01 + a * v11)
    }

    fn gradient(&self, p: [f64; 2]) -> [f64; 2] {
        let h = self.spacing();
        let (i, a) = self.locate(p[0]);
        let (j, b) = self.locate(p[1]);
        let v00 = self.get(i, j);
        let v10 = self.get(i + 1, j);
        let v01 = self.get(i, j + 1);
        let v11 = self.get(i + 1, j + 1);
        [
            ((1.0 - b) * (v10 - v00) + b * (v11 - v01)) / h,
            ((1.0 - a) * (v01 - v00) + a * (v11 - v10)) / h,
        ]
    }
}

/// `u(x0 + rho z) / rho` on `[-R, R]^2` with `n` nodes per side.
pub fn blowup_rescale(solution: &Solution, rho: f64, radius: f64, n: usize) -> Result<BlowupField> {
    let params = solution.field.grid.params;
    params.require_gamma_below_h()?;
    let bound = contact_radius_bound(&params);
    if !(rho * radius < bound) {
        return Err(Error::Domain(format!(
            "window rho*R = {} exceeds the contact neighbourhood {bound}",
            rho * radius
        )));
    }
    let [cx, cy] = [-0.5 * params.lambda, params.gamma];
    let field = &solution.field;
    BlowupField::from_fn(params, rho, radius, n, 0.5 * solution.eps_final / rho, |s, t| {
        field.value_at(cx + rho * s, cy + rho * t) / rho
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlowupLabel {
    Zero,
    HalfPlane,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupClass {
    pub label: BlowupLabel,
    pub distance_zero: f64,
    pub distance_halfplane: f64,
    /// Sup-distance to the cone `coeff |s|`.
    pub distance_cone: f64,
    pub coeff: f64,
    pub tol: f64,
}

/// Sup-distances on the nodes of `B_1` to `0`, `coeff (-t)_+` and `coeff |s|`.
///
/// The label is the nearer of the first two when that distance is within
/// `tol`, and `Other` when neither is or when the cone is strictly nearer.
pub fn classify_blowup(field: &BlowupField, coeff: f64, tol: f64) -> BlowupClass {
    let reach = field.radius.min(1.0) + 1e-12;
    let (mut d0, mut dh, mut dc) = (0.0f64, 0.0f64, 0.0f64);
    for j in 0..field.n {
        let t = field.coord(j);
        for i in 0..field.n {
            let s = field.coord(i);
            if s.hypot(t) > reach {
                continue;
            }
            let u = field.get(i, j);
            d0 = d0.max(u.abs());
            dh = dh.max((u - coeff * (-t).max(0.0)).abs());
            dc = dc.max((u - coeff * s.abs()).abs());
        }
    }
    let label = if dc < d0.min(dh) || d0.min(dh) > tol {
        BlowupLabel::Other
    } else if d0 <= dh {
        BlowupLabel::Zero
    } else {
        BlowupLabel::HalfPlane
    };
    BlowupClass {
        label,
        distance_zero: d0,
        distance_halfplane: dh,
        distance_cone: dc,
        coeff,
        tol,
    }
}

/// Level-set crossings along patch edges inside the square inscribed in
/// `B_R`, excluding the `eta`-neighbourhood of `{(0, t) : t >= 0}`.
fn boundary_points(field: &BlowupField, eta: f64) -> Vec<[f64; 2]> {
    let half = field.radius / std::f64::consts::SQRT_2 + 1e-12;
    let inside = |v: f64| v.abs() <= half;
    let excluded = |p: [f64; 2]| {
        let d = if p[1] >= 0.0 { p[0].abs() } else { p[0].hypot(p[1]) };
        d < eta
    };
    let thr = field.threshold;
    let mut out = Vec::new();
    let mut edge = |a: [f64; 2], b: [f64; 2], ua: f64, ub: f64| {
        if (ua > thr) != (ub > thr) {
            let w = (thr - ua) / (ub - ua);
            let p = [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])];
            if !excluded(p) {
                out.push(p);
            }
        }
    };
    for j in 0..field.n {
        let t = field.coord(j);
        if !inside(t) {
            continue;
        }
        for i in 0..field.n {
            let s = field.coord(i);
            if !inside(s) {
                continue;
            }
            let u = field.get(i, j);
            if i + 1 < field.n && inside(field.coord(i + 1)) {
                edge([s, t], [field.coord(i + 1), t], u, field.get(i + 1, j));
            }
            if j + 1 < field.n && inside(field.coord(j + 1)) {
                edge([s, t], [s, field.coord(j + 1)], u, field.get(i, j + 1));
            }
        }
    }
    out
}

fn directed(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .map(|p| b.iter().map(|q| (p[0] - q[0]).hypot(p[1] - q[1])).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between the free boundaries of two
/// blow-ups on a common patch, away from the `eta`-neighbourhood of the
/// nonnegative `t`-axis.
pub fn hausdorff_fb_distance(a: &BlowupField, b: &BlowupField, eta: f64) -> Result<f64> {
    if a.n != b.n || a.radius != b.radius {
        return Err(Error::Domain(format!(
            "patches differ: n {} vs {}, R {} vs {}",
            a.n, b.n, a.radius, b.radius
        )));
    }
    let (pa, pb) = (boundary_points(a, eta), boundary_points(b, eta));
    if pa.is_empty() || pb.is_empty() {
        return Err(Error::NotDefined("a free boundary is empty outside the exclusion region".into()));
    }
    Ok(directed(&pa, &pb).max(directed(&pb, &pa)))
}

/// Writes the patch in the field format with a blow-up header. The header
/// stores `eps_final = 2 rho threshold`.
pub fn write_blowup(path: &Path, field: &BlowupField) -> Result<FieldHeader> {
    let bytes = io::encode_values(&field.values);
    let header = FieldHeader {
        schema_version: io::SCHEMA_VERSION,
        nx: field.n,
        ny: field.n - 1,
        y_max: 2.0 * field.radius,
        params: field.params,
        eps_final: 2.0 * field.rho * field.threshold,
        sha256: io::sha256_hex(&bytes),
        blowup: Some(BlowupHeader {
            rho: field.rho,
            radius: field.radius,
            x0: field.x0(),
        }),
    };
    io::write_bytes(path, &bytes)?;
    io::write_json(&io::sidecar_path(path), &header)?;
    Ok(header)
}

pub fn read_blowup(path: &Path) -> Result<BlowupField> {
    let (values, header) = io::read_payload(path)?;
    let Some(b) = header.blowup else {
        return Err(Error::Artifact {
            path: path.to_path_buf(),
            message: "header has no blow-up section".into(),
        });
    };
    if header.nx != header.ny + 1 {
        return Err(Error::Artifact {
            path: path.to_path_buf(),
            message: "blow-up patch must be square".into(),
        });
    }
    Ok(BlowupField {
        params: header.params,
        rho: b.rho,
        radius: b.radius,
        n: header.nx,
        threshold: header.eps_final / (2.0 * b.rho),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flat::FlatProfile;
    use crate::grid::Grid;
    use crate::weiss::{weiss_density_sampler, QuadratureSpec, WeissSetup};

    fn params() -> ProblemParams {
        ProblemParams::new(1.0, 3.0, 0.3, 1.0).unwrap()
    }

    fn generator(c: f64, kind: u8) -> BlowupField {
        BlowupField::from_fn(params(), 0.1, 1.0, 41, 0.0, |s, t| match kind {
            0 => 0.0,
            1 => c * (-t).max(0.0),
            _ => c * s.abs(),
        })
        .unwrap()
    }

    #[test]
    fn generators_classify_exactly() {
        let c = 2.7;
        let tol = 0.1 * c;
        let zero = classify_blowup(&generator(c, 0), c, tol);
        assert_eq!(zero.label, BlowupLabel::Zero);
        assert_eq!(zero.distance_zero, 0.0);
        let hp = classify_blowup(&generator(c, 1), c, tol);
        assert_eq!(hp.label, BlowupLabel::HalfPlane);
        assert_eq!(hp.distance_halfplane, 0.0);
        let cone = classify_blowup(&generator(c, 2), c, tol);
        assert_eq!(cone.label, BlowupLabel::Other);
        assert_eq!(cone.distance_cone, 0.0);
        assert!(cone.distance_zero.min(cone.distance_halfplane) > tol);
    }

    #[test]
    fn far_field_is_other() {
        let f = BlowupField::from_fn(params(), 0.1, 1.0, 21, 0.0, |_, _| 5.0).unwrap();
        assert_eq!(classify_blowup(&f, 1.0, 0.1).label, BlowupLabel::Other);
    }

    #[test]
    fn hausdorff_identical_and_shifted() {
        let hp = generator(1.0, 1);
        assert_eq!(hausdorff_fb_distance(&hp, &hp, 0.1).unwrap(), 0.0);
        let delta = 2.0 * hp.spacing();
        let shifted = BlowupField::from_fn(params(), 0.1, 1.0, 41, 0.0, |_, t| (delta - t).max(0.0)).unwrap();
        let d = hausdorff_fb_distance(&hp, &shifted, 0.1).unwrap();
        assert!((d - delta).abs() < 1e-12, "{d} vs {delta}");
    }

    #[test]
    fn hausdorff_rejects_empty_and_mismatched() {
        assert!(matches!(
            hausdorff_fb_distance(&generator(1.0, 0), &generator(1.0, 1), 0.1),
            Err(Error::NotDefined(_))
        ));
        let other = BlowupField::from_fn(params(), 0.1, 1.0, 21, 0.0, |_, _| 0.0).unwrap();
        assert!(matches!(hausdorff_fb_distance(&other, &generator(1.0, 1), 0.1), Err(Error::Domain(_))));
    }

    fn flat_solution(n: usize) -> Solution {
        let p = params();
        let g = Grid::build(p, n, n, 3.5).unwrap();
        let f = FlatProfile::new(p.m, 0.6).unwrap().sample(&g);
        Solution::from_field(f, 4.0 * g.dx).unwrap()
    }

    #[test]
    fn flat_profile_at_gamma_rescales_to_the_half_plane() {
        // u = m (1 - y/gamma)_+ rescales about x0 to (m/gamma)(-t)_+ exactly
        // once gamma is a grid row.
        let p = params();
        let g = Grid::build(p, 96, 96, 3.6).unwrap();
        let f = FlatProfile::new(p.m, p.gamma).unwrap().sample(&g);
        let sol = Solution::from_field(f, 4.0 * g.dx).unwrap();
        let rho = 0.05;
        let b = blowup_rescale(&sol, rho, 1.0, 41).unwrap();
        let c = p.m / p.gamma;
        let class = classify_blowup(&b, c, 0.1 * c);
        assert_eq!(class.label, BlowupLabel::HalfPlane);
        assert!(class.distance_halfplane < 1e-9, "{class:?}");
        assert!((b.max_gradient() - c).abs() < 1e-9);
        for j in b.n / 2..b.n {
            assert!(b.get(b.n / 2, j).abs() < 1e-9);
        }
    }

    #[test]
    fn rescale_window_is_checked() {
        let sol = flat_solution(16);
        assert!(matches!(blowup_rescale(&sol, 0.5, 1.0, 11), Err(Error::Domain(_))));
        assert!(matches!(blowup_rescale(&sol, 0.01, 1.0, 10), Err(Error::Domain(_))));
    }

    #[test]
    fn scale_consistency_with_the_original_density() {
        // Phi of the blow-up with constant weight h - gamma differs from
        // Phi(rho r) of the original only through the weight drift rho t.
        let p = params();
        let g = Grid::build(p, 96, 96, 3.6).unwrap();
        let f = FlatProfile::new(p.m, p.gamma).unwrap().sample(&g);
        let sol = Solution::from_field(f, 4.0 * g.dx).unwrap();
        let rho = 0.1;
        let b = blowup_rescale(&sol, rho, 1.0, 201).unwrap();
        let quad = QuadratureSpec { angular: 512, radial: 64 };
        let mut setup_b = WeissSetup::blowup(p.h - p.gamma, 1.0 + 1e-9);
        setup_b.threshold = b.threshold;
        let setup = WeissSetup::at_contact(&p, 0.5 * sol.eps_final);
        for r in [0.5, 1.0] {
            let phi_b = weiss_density_sampler(&b, &setup_b, r, quad).unwrap();
            let phi = weiss_density_sampler(&sol.field, &setup, rho * r, quad).unwrap();
            assert!((phi - phi_b).abs() <= rho * r * std::f64::consts::FRAC_PI_2, "{phi} vs {phi_b}");
        }
    }

    #[test]
    fn blowup_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = generator(1.3, 1);
        f.threshold = 0.25;
        let path = dir.path().join("b.bin");
        let header = write_blowup(&path, &f).unwrap();
        assert_eq!(header.blowup.as_ref().unwrap().x0, [-0.5, 0.3]);
        let back = read_blowup(&path).unwrap();
        assert_eq!(back.values, f.values);
        assert_eq!((back.n, back.radius, back.rho), (f.n, f.radius, f.rho));
        assert!((back.threshold - 0.25).abs() < 1e-15);
    }
}
