//! Run the generic pipeline on a model and compare with its oracle pack.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ModelSpec;
use crate::comparison::off_leaf_samples;
use crate::connection::{transverse_sectional, verify_structure_identities, PointGeometry};
use crate::error::Result;
use crate::geodesic::distance_to_leaf;
use crate::jacobi::{hessian_form, DEFAULT_STEP};
use crate::metric::{check_bundle_like, random_orthonormal_pair};

/// Tolerances and sample sizes for [`oracle_check`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToleranceProfile {
    pub structure: f64,
    pub bundle_like: f64,
    pub mean_curvature: f64,
    pub curvature: f64,
    pub distance: f64,
    pub hessian: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for ToleranceProfile {
    fn default() -> Self {
        ToleranceProfile {
            structure: 1e-7,
            bundle_like: 1e-8,
            mean_curvature: 1e-6,
            curvature: 1e-7,
            distance: 1e-6,
            hessian: 1e-6,
            samples: 20,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleEntry {
    pub check: String,
    pub expected: String,
    pub observed: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub model: String,
    pub entries: Vec<OracleEntry>,
    pub pass: bool,
}

impl OracleReport {
    pub fn entry(&self, check: &str) -> Option<&OracleEntry> {
        self.entries.iter().find(|e| e.check == check)
    }
}

struct Collector {
    entries: Vec<OracleEntry>,
}

impl Collector {
    fn push(&mut self, check: &str, expected: impl Into<String>, observed: f64, tolerance: f64, pass: bool, detail: impl Into<String>) {
        self.entries.push(OracleEntry {
            check: check.into(),
            expected: expected.into(),
            observed,
            tolerance,
            pass,
            detail: detail.into(),
        });
    }

    /// Record a pipeline error as a failed entry.
    fn run(&mut self, check: &str, f: impl FnOnce(&mut Self) -> Result<()>) {
        if let Err(e) = f(self) {
            self.push(check, "pipeline completes", f64::NAN, 0.0, false, e.to_string());
        }
    }
}

/// Compare the generic pipeline against the model's hand-derived facts.
/// Mismatches and pipeline errors become failed entries.
pub fn oracle_check(spec: &ModelSpec, profile: &ToleranceProfile) -> OracleReport {
    let chart = &spec.chart;
    let n = chart.dim_total();
    let nh = chart.dim_horizontal();
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let points: Vec<Vec<f64>> = (0..profile.samples).map(|_| chart.sample_box().sample(&mut rng)).collect();
    let mut c = Collector { entries: Vec::new() };

    c.run("structure_identities", |c| {
        let rep = verify_structure_identities(chart, profile.samples, profile.seed)?;
        let worst = rep.max_residual();
        // the adapted connection is only metric when the metric is bundle-like
        let expected = if spec.flags.bundle_like { "all residuals vanish" } else { "identities break" };
        let holds = worst < profile.structure;
        c.push("structure_identities", expected, worst, profile.structure, holds == spec.flags.bundle_like, "");
        Ok(())
    });

    c.run("bundle_like", |c| {
        let rep = check_bundle_like(chart, &points, 4, profile.seed, profile.bundle_like)?;
        let ok = rep.pass == spec.flags.bundle_like;
        let expected = if spec.flags.bundle_like { "bundle-like" } else { "not bundle-like" };
        c.push("bundle_like", expected, rep.max_residual, profile.bundle_like, ok, format!("worst point {:?}", rep.worst_point));
        Ok(())
    });

    let mut geos = Vec::new();
    c.run("mean_curvature", |c| {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for p in &points {
            let geo = PointGeometry::with_curvature(chart, p)?;
            let h = geo.mean_curvature_frame();
            let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            lo = lo.min(norm);
            hi = hi.max(norm);
            geos.push(geo);
        }
        let want = spec.oracle.mean_curvature_norm;
        let dev = (hi - want).abs().max((lo - want).abs());
        c.push("mean_curvature", format!("|H| = {want}"), dev, profile.mean_curvature, dev < profile.mean_curvature, format!("range [{lo}, {hi}]"));
        let minimal = hi < profile.mean_curvature;
        c.push(
            "minimal_leaves",
            format!("{}", spec.flags.minimal_leaves),
            hi,
            profile.mean_curvature,
            minimal == spec.flags.minimal_leaves,
            "",
        );
        Ok(())
    });

    if !geos.is_empty() {
        let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let tor = geos.iter().map(|g| max_abs(&g.torsion)).fold(0.0, f64::max);
        let vanish = tor < profile.structure;
        c.push("torsion", format!("vanishes: {}", spec.oracle.torsion_vanishes), tor, profile.structure, vanish == spec.oracle.torsion_vanishes, "");
        let cmax = geos.iter().map(|g| max_abs(&g.c_tensor)).fold(0.0, f64::max);
        let geodesic = cmax < profile.structure;
        c.push(
            "totally_geodesic",
            format!("{}", spec.oracle.leaves_totally_geodesic),
            cmax,
            profile.structure,
            geodesic == spec.oracle.leaves_totally_geodesic,
            "",
        );
    }

    if nh >= 2 {
        c.run("transverse_curvature", |c| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for p in &points {
                let geo = PointGeometry::first_order(chart, p)?;
                let (mut x, mut y) = random_orthonormal_pair(&mut rng, nh);
                x.resize(n, 0.0);
                y.resize(n, 0.0);
                let k = transverse_sectional(chart, p, &geo.coordinates(&x), &geo.coordinates(&y))?;
                lo = lo.min(k);
                hi = hi.max(k);
            }
            if let Some(want) = spec.oracle.transverse_curvature {
                let dev = (hi - want).abs().max((lo - want).abs());
                c.push("transverse_curvature", format!("{want}"), dev, profile.curvature, dev < profile.curvature, format!("range [{lo}, {hi}]"));
            }
            let (expected, holds) = match spec.flags.transverse_bound_k {
                Some(k) => (format!("≤ {}", -k), hi <= -k + profile.curvature),
                // no bound is claimed; report whether the nonpositive one fails
                None => ("no nonpositive bound".to_string(), hi > profile.curvature),
            };
            c.push("transverse_bound", expected, hi, profile.curvature, holds, "");
            Ok(())
        });
    }

    if spec.flags.bundle_like {
        if let Some(dist) = spec.oracle.distance.clone() {
            c.run("distance", |c| {
                let count = profile.samples.min(6);
                let samples = off_leaf_samples(chart, &spec.leaf, &spec.seed_point, count, (0.2, 1.5), profile.seed)?;
                let mut worst: f64 = 0.0;
                for s in &samples {
                    let shot = distance_to_leaf(chart, &spec.leaf, &spec.seed_point, &s.target)?;
                    let want = dist(&spec.seed_point, &s.target);
                    worst = worst.max((shot - want).abs()).max((s.r - want).abs());
                }
                c.push("distance", "shooting and exp length match the closed form", worst, profile.distance, worst < profile.distance, "");
                Ok(())
            });
        }
        if let (Some(kappa), true) = (spec.oracle.transverse_curvature, nh >= 2) {
            c.run("hessian", |c| {
                let samples = off_leaf_samples(chart, &spec.leaf, &spec.seed_point, 2, (0.3, 1.2), profile.seed ^ 1)?;
                let mut worst: f64 = 0.0;
                for s in &samples {
                    let hess = hessian_form(chart, &spec.leaf, &spec.seed_point, &s.target, DEFAULT_STEP)?;
                    let r = hess.rho;
                    let want = if kappa < 0.0 {
                        (-kappa).sqrt() / ((-kappa).sqrt() * r).tanh()
                    } else if kappa == 0.0 {
                        1.0 / r
                    } else {
                        kappa.sqrt() / (kappa.sqrt() * r).tan()
                    };
                    let d = hess.dim();
                    for i in 0..d {
                        for j in 0..d {
                            let w = if i == j { want } else { 0.0 };
                            worst = worst.max((hess.shape[i * d + j] - w).abs());
                        }
                    }
                }
                c.push("hessian", "constant-curvature shape operator", worst, profile.hessian, worst < profile.hessian, "");
                Ok(())
            });
        }
    }

    let pass = c.entries.iter().all(|e| e.pass);
    OracleReport { model: spec.id.clone(), entries: c.entries, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_default, MODEL_IDS};

    #[test]
    fn every_model_matches_its_oracles() {
        let profile = ToleranceProfile { samples: 8, ..Default::default() };
        for id in MODEL_IDS {
            let spec = build_default(id).unwrap();
            let rep = oracle_check(&spec, &profile);
            assert!(rep.pass, "{id}: {:#?}", rep.entries.iter().filter(|e| !e.pass).collect::<Vec<_>>());
        }
    }

    #[test]
    fn sphere_reports_missing_bound() {
        let spec = build_default("sphere_product").unwrap();
        let rep = oracle_check(&spec, &ToleranceProfile { samples: 4, ..Default::default() });
        let e = rep.entry("transverse_bound").unwrap();
        assert!(e.observed > 0.5 && e.pass);
    }

    #[test]
    fn sol_has_nonzero_c_and_is_minimal() {
        let spec = build_default("sol").unwrap();
        let rep = oracle_check(&spec, &ToleranceProfile { samples: 4, ..Default::default() });
        assert!(rep.entry("totally_geodesic").unwrap().observed > 0.5);
        assert!(rep.entry("mean_curvature").unwrap().observed < 1e-9);
    }
}
