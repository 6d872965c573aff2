//! Numerical witnesses that the normal exponential map of a leaf is a
//! diffeomorphism onto the manifold.

use serde::Serialize;

use crate::connection::PointGeometry;
use crate::error::Result;
use crate::geodesic::{fallback_directions, invert_normal_exp, normal_exp_with, GeodesicOptions, ShootingOptions};
use crate::jacobi::{detect_focal, DEFAULT_STEP, FOCAL_THRESHOLD};
use crate::zoo::ModelSpec;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CartanOptions {
    pub t_max: f64,
    /// Leaf points in the grid (spread over the sample box).
    pub leaf_points: usize,
    pub directions: usize,
    pub radii: usize,
    pub focal_step: f64,
    /// Minimum coordinate distance between images of distinct preimages.
    pub separation: f64,
    /// Tolerance on recovered preimages and on `d(exp(y, u), leaf) − |u|`.
    pub tolerance: f64,
    pub max_newton: usize,
}

impl Default for CartanOptions {
    fn default() -> Self {
        CartanOptions {
            t_max: 10.0,
            leaf_points: 5,
            directions: 8,
            radii: 5,
            focal_step: DEFAULT_STEP,
            separation: 1e-6,
            tolerance: 1e-6,
            max_newton: 20,
        }
    }
}

/// One grid point of the round trip.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundTrip {
    pub base: Vec<f64>,
    pub u: Vec<f64>,
    pub length: f64,
    pub image: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub rho: f64,
    /// Coordinate distance between recovered and original `(y, u)`.
    pub preimage_error: f64,
    /// `|ρ − |u||`, and against the closed-form distance when the model has one.
    pub distance_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CartanReport {
    pub model: String,
    pub hypotheses_hold: bool,
    pub options: CartanOptions,
    /// Earliest focal time found by the scans, if any.
    pub first_focal: Option<f64>,
    pub witnesses: Vec<Witness>,
    pub samples: Vec<RoundTrip>,
    pub pass: bool,
}

impl CartanReport {
    pub fn witness(&self, name: &str) -> Option<&Witness> {
        self.witnesses.iter().find(|w| w.name == name)
    }
}

fn leaf_grid(spec: &ModelSpec, count: usize) -> Vec<Vec<f64>> {
    let bx = spec.chart.sample_box();
    (0..count)
        .map(|i| {
            let s: Vec<f64> = spec
                .leaf
                .free
                .iter()
                .enumerate()
                .map(|(a, &k)| {
                    // stagger the axes so the points are not collinear
                    let f = ((i as f64 + 0.5) / count as f64 + 0.382 * a as f64).fract();
                    bx.lower[k] + f * (bx.upper[k] - bx.lower[k])
                })
                .collect();
            spec.leaf.point(&spec.seed_point, &s)
        })
        .collect()
}

/// Run the four witnesses: no focal points up to `t_max`, convergence of
/// the inversion from the heuristic start, injectivity of the round trip
/// and `d(exp(y, u), leaf) = |u|`.
pub fn verify_cartan(spec: &ModelSpec, opts: &CartanOptions) -> Result<CartanReport> {
    let chart = &spec.chart;
    let n = chart.dim_total();
    let nh = chart.dim_horizontal();
    let bases = leaf_grid(spec, opts.leaf_points);
    let dirs = fallback_directions(nh, opts.directions);

    let mut first_focal: Option<f64> = None;
    let mut min_sigma = f64::INFINITY;
    let mut scan_errors = Vec::new();
    for y in &bases {
        let geo = PointGeometry::first_order(chart, y)?;
        for d in &dirs {
            let mut comps = d.clone();
            comps.resize(n, 0.0);
            let u = geo.coordinates(&comps);
            match detect_focal(chart, y, &u, opts.t_max, opts.focal_step) {
                Ok(rep) => {
                    min_sigma = min_sigma.min(rep.min_relative_sigma);
                    if let Some(t) = rep.first_focal {
                        first_focal = Some(first_focal.map_or(t, |f: f64| f.min(t)));
                    }
                }
                Err(e) => scan_errors.push(e.to_string()),
            }
        }
    }
    let focal_free = first_focal.is_none() && scan_errors.is_empty();
    let mut witnesses = vec![Witness {
        name: "a_no_focal_points".into(),
        pass: focal_free,
        value: first_focal.unwrap_or(min_sigma),
        detail: match (first_focal, scan_errors.first()) {
            (Some(t), _) => format!("focal point at t = {t}"),
            (None, Some(e)) => format!("scan failed: {e}"),
            (None, None) => format!("smallest relative singular value {min_sigma:e} (threshold {FOCAL_THRESHOLD:e})"),
        },
    }];

    // the round trip amplifies forward error like the Jacobi growth, ~e^t
    let forward = GeodesicOptions { tol: 1e-12, ..Default::default() };
    let shoot = ShootingOptions { max_iter: opts.max_newton, ..Default::default() };
    let mut samples = Vec::new();
    for y in &bases {
        let geo = PointGeometry::first_order(chart, y)?;
        for d in &dirs {
            let mut comps = d.clone();
            comps.resize(n, 0.0);
            let dir = geo.coordinates(&comps);
            for j in 1..=opts.radii {
                let length = opts.t_max * j as f64 / opts.radii as f64;
                let u: Vec<f64> = dir.iter().map(|v| v * length).collect();
                let image = normal_exp_with(chart, y, &u, forward)?;
                let mut rt = RoundTrip {
                    base: y.clone(),
                    u: u.clone(),
                    length,
                    image: image.clone(),
                    converged: false,
                    iterations: 0,
                    rho: f64::NAN,
                    preimage_error: f64::INFINITY,
                    distance_error: f64::INFINITY,
                };
                if let Ok(res) = invert_normal_exp(chart, &spec.leaf, &spec.seed_point, &image, None, shoot) {
                    rt.converged = true;
                    rt.iterations = res.iterations;
                    rt.rho = res.rho;
                    let du: f64 = res.u.components.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    let dy: f64 = res.base.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    rt.preimage_error = du.max(dy);
                    let mut err = (res.rho - length).abs();
                    if let Some(dist) = &spec.oracle.distance {
                        err = err.max((dist(&spec.seed_point, &image) - length).abs());
                    }
                    rt.distance_error = err;
                }
                samples.push(rt);
            }
        }
    }
    let converged = samples.iter().filter(|s| s.converged).count();
    let max_iter = samples.iter().map(|s| s.iterations).max().unwrap_or(0);
    witnesses.push(Witness {
        name: "b_inversion_converges".into(),
        pass: converged == samples.len(),
        value: converged as f64 / samples.len().max(1) as f64,
        detail: format!("{converged} of {} converged, at most {max_iter} Newton steps", samples.len()),
    });

    let worst_pre = samples.iter().map(|s| s.preimage_error).fold(0.0, f64::max);
    let mut min_sep = f64::INFINITY;
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            let d: f64 = a.image.iter().zip(&b.image).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            min_sep = min_sep.min(d);
        }
    }
    witnesses.push(Witness {
        name: "c_injective".into(),
        pass: worst_pre < opts.tolerance && min_sep > opts.separation,
        value: worst_pre,
        detail: format!("largest preimage error {worst_pre:e}, smallest image separation {min_sep:e}"),
    });

    let worst_dist = samples.iter().map(|s| s.distance_error).fold(0.0, f64::max);
    witnesses.push(Witness {
        name: "d_distance_equals_length".into(),
        pass: worst_dist < opts.tolerance,
        value: worst_dist,
        detail: format!("max |d(exp(y,u), leaf) − |u|| = {worst_dist:e}"),
    });

    let pass = witnesses.iter().all(|w| w.pass);
    Ok(CartanReport {
        model: spec.id.clone(),
        hypotheses_hold: spec.flags.comparison_ready(),
        options: opts.clone(),
        first_focal,
        witnesses,
        samples,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::build_default;

    fn small(t_max: f64) -> CartanOptions {
        CartanOptions { t_max, leaf_points: 2, directions: 4, radii: 2, ..Default::default() }
    }

    #[test]
    fn heisenberg_passes_every_witness() {
        let rep = verify_cartan(&build_default("heisenberg").unwrap(), &small(6.0)).unwrap();
        assert!(rep.hypotheses_hold);
        assert!(rep.pass, "{:#?}", rep.witnesses);
        assert_eq!(rep.samples.len(), 16);
    }

    #[test]
    fn sphere_fails_the_focal_witness_at_pi() {
        let rep = verify_cartan(&build_default("sphere_product").unwrap(), &small(4.0)).unwrap();
        assert!(!rep.hypotheses_hold);
        let a = rep.witness("a_no_focal_points").unwrap();
        assert!(!a.pass);
        assert!((rep.first_focal.unwrap() - std::f64::consts::PI).abs() < 1e-4);
    }

    #[test]
    fn leaf_grid_stays_on_the_leaf() {
        let spec = build_default("hyperbolic_product").unwrap();
        for p in leaf_grid(&spec, 5) {
            assert!(spec.leaf.contains(&spec.seed_point, &p, 0.0));
        }
    }
}
