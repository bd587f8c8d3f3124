//! Frozen measurements of the reference run `m = 1, h = 3, gamma = 0.3,
//! lambda = 1` on a 256 x 256 grid with `y_max = 3.5` and default settings.
//!
//! The energy margin against `lambda E_star` is negative: every admissible
//! field has energy at least `lambda E_star`. The contact, Weiss and
//! blow-up values are resolution-limited trend values, not convergence claims.

use std::path::Path;

use periodic_bernoulli::freeboundary::{BernoulliStats, ContactReport};
use periodic_bernoulli::io;
use periodic_bernoulli::pipeline::{self, ClassificationArtifact, GridSpec, Manifest, RunConfig, RunOptions};
use periodic_bernoulli::regimes::ProblemParams;
use periodic_bernoulli::weiss::{BlowupLabel, ProbeReport, WeissSeries};

const ENERGY: f64 = 3.5960869662681145;
const SHARP_ENERGY: f64 = 3.5916527614074107;
const FLAT_BEST: f64 = 3.2771887963561435;
const OSCILLATION: f64 = 0.37690105696754944;
const BERNOULLI_MEDIAN: f64 = 0.07160200124965492;
const CONTACT_FIRST: f64 = 0.22525210614481095;
const CONTACT_MAX: f64 = 0.6683183271249978;
const PROBE_C: f64 = 0.12823816742477007;
const WEISS_PHI: [(f64, f64); 4] = [
    (0.015, -147.723663226075018),
    (0.03, -74.9473656858121871),
    (0.06, -34.8467519650360344),
    (0.12, -13.6066717865920310),
];
const WEISS_RESIDUAL: [f64; 3] = [5.68771444033727658, 1.18292240936290893, 0.0364684696596613567];
const BLOWUP_HALFPLANE_DISTANCE: [f64; 3] = [2.5653250376187944, 3.8073869714185027, 5.767140593761032];
const HAUSDORFF_FIRST: f64 = 0.8973307314043544;

fn close(actual: f64, expected: f64, what: &str) {
    let tol = 1e-8 * expected.abs().max(1.0);
    assert!((actual - expected).abs() <= tol, "{what}: {actual} vs frozen {expected}");
}

fn reference_run(dir: &Path) -> Manifest {
    let mut cfg = RunConfig::new(
        ProblemParams::new(1.0, 3.0, 0.3, 1.0).unwrap(),
        GridSpec { nx: 256, ny: 256, y_max: 3.5 },
    );
    cfg.deterministic = true;
    pipeline::run(&cfg, &RunOptions { out: dir.to_path_buf(), threads: None, deterministic: true }).unwrap()
}

#[test]
fn reference_run_matches_frozen_values() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = reference_run(dir.path());
    let s = manifest.solution.as_ref().unwrap();
    assert!(s.converged);
    close(s.energy, ENERGY, "energy");
    close(s.sharp_energy, SHARP_ENERGY, "sharp energy");
    close(s.flat_best_energy, FLAT_BEST, "lambda E_star");
    assert!(s.energy > s.flat_best_energy, "lower bound J >= lambda E_star violated");
    assert!(s.energy < s.datum_energy, "solver did not improve on the datum");
    close(s.oscillation.unwrap(), OSCILLATION, "oscillation");
    assert!(s.oscillation.unwrap() > 5.0 * s.dy);

    let b: BernoulliStats = io::read_json(&dir.path().join("bernoulli.json")).unwrap();
    close(b.median, BERNOULLI_MEDIAN, "Bernoulli median residual");

    let c: ContactReport = io::read_json(&dir.path().join("contact.json")).unwrap();
    close(c.first_ratio, CONTACT_FIRST, "first contact ratio");
    close(c.max_ratio, CONTACT_MAX, "max contact ratio");
    assert!(c.monotone_tail);
    assert!(c.max_ratio > 2.0 * c.first_ratio);

    let text = std::fs::read_to_string(dir.path().join("weiss.csv")).unwrap();
    let series = WeissSeries::from_csv(&text).unwrap();
    assert_eq!(series.len(), WEISS_PHI.len());
    for ((r, phi), (r0, phi0)) in series.iter().zip(WEISS_PHI) {
        close(*r, r0, "Weiss radius");
        close(*phi, phi0, "Weiss density");
    }
    let residuals: Vec<f64> = text
        .lines()
        .skip(2)
        .filter_map(|l| l.split(',').nth(3).and_then(|v| v.parse().ok()))
        .collect();
    assert_eq!(residuals.len(), WEISS_RESIDUAL.len());
    for (a, e) in residuals.iter().zip(WEISS_RESIDUAL) {
        close(*a, e, "identity residual");
    }

    let cl: ClassificationArtifact = io::read_json(&dir.path().join("classification.json")).unwrap();
    for (entry, d) in cl.entries.iter().zip(BLOWUP_HALFPLANE_DISTANCE) {
        assert_eq!(entry.class.label, BlowupLabel::Other);
        close(entry.class.distance_halfplane, d, "blow-up half-plane distance");
    }
    close(cl.entries[0].hausdorff_to_limit.unwrap(), HAUSDORFF_FIRST, "Hausdorff distance");

    let p: ProbeReport = io::read_json(&dir.path().join("probe.json")).unwrap();
    close(p.c_emp, PROBE_C, "empirical non-degeneracy constant");
    assert!(p.c_emp > 0.0);
}
