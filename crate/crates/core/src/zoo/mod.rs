//! Shipped foliated models with hand-derived ground truth.

mod check;
pub mod models;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{GeometryError, Result};
use crate::metric::{Domain, FoliatedChart, SampleBox};
use models::*;

pub use check::{oracle_check, OracleEntry, OracleReport, ToleranceProfile};

/// Model ids accepted by [`build`].
pub const MODEL_IDS: [&str; 7] = [
    "euclidean_product",
    "hyperbolic_product",
    "heisenberg",
    "sol",
    "sphere_product",
    "horosphere_h3",
    "perturbed_product",
];

/// A leaf given as a coordinate slice: coordinates outside `free` are fixed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeafSlice {
    pub free: Vec<usize>,
}

impl LeafSlice {
    /// Point of the leaf through `seed` with free coordinates `s`.
    pub fn point(&self, seed: &[f64], s: &[f64]) -> Vec<f64> {
        let mut p = seed.to_vec();
        for (a, &k) in self.free.iter().enumerate() {
            p[k] = s[a];
        }
        p
    }

    /// Free coordinates of `p`.
    pub fn coordinates(&self, p: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&k| p[k]).collect()
    }

    /// Whether `p` lies on the leaf through `seed`.
    pub fn contains(&self, seed: &[f64], p: &[f64], tol: f64) -> bool {
        (0..seed.len()).filter(|k| !self.free.contains(k)).all(|k| (p[k] - seed[k]).abs() <= tol * (1.0 + seed[k].abs()))
    }

    /// Base of the leaf through `seed` sharing `p`'s free coordinates.
    pub fn foot(&self, seed: &[f64], p: &[f64]) -> Vec<f64> {
        self.point(seed, &self.coordinates(p))
    }
}

/// Which hypotheses of the comparison theory a model satisfies.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionFlags {
    pub bundle_like: bool,
    pub minimal_leaves: bool,
    /// `Some(K)` when every horizontal sectional curvature is `≤ −K`, `K ≥ 0`.
    pub transverse_bound_k: Option<f64>,
    pub simply_connected_leaf_space: bool,
}

impl AssumptionFlags {
    /// Whether the hypotheses of the no-focal-point theory hold.
    pub fn comparison_ready(&self) -> bool {
        self.bundle_like && self.transverse_bound_k.is_some() && self.simply_connected_leaf_space
    }
}

/// Distance from a target to the leaf through a seed.
pub type DistanceOracle = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Hand-derived facts the numerical pipeline must reproduce.
#[derive(Clone)]
pub struct OraclePack {
    /// Constant horizontal sectional curvature, when there is one.
    pub transverse_curvature: Option<f64>,
    /// Constant Levi-Civita sectional curvature of horizontal planes.
    pub lc_horizontal_sectional: Option<f64>,
    pub torsion_vanishes: bool,
    pub leaves_totally_geodesic: bool,
    pub mean_curvature_norm: f64,
    pub distance: Option<DistanceOracle>,
}

impl fmt::Debug for OraclePack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OraclePack")
            .field("transverse_curvature", &self.transverse_curvature)
            .field("lc_horizontal_sectional", &self.lc_horizontal_sectional)
            .field("torsion_vanishes", &self.torsion_vanishes)
            .field("leaves_totally_geodesic", &self.leaves_totally_geodesic)
            .field("mean_curvature_norm", &self.mean_curvature_norm)
            .field("distance", &self.distance.is_some())
            .finish()
    }
}

/// A fully specified model: chart, reference leaf, hypotheses and oracles.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub id: String,
    pub params: BTreeMap<String, f64>,
    pub chart: FoliatedChart,
    pub leaf: LeafSlice,
    /// A point of the reference leaf.
    pub seed_point: Vec<f64>,
    pub flags: AssumptionFlags,
    pub oracle: OraclePack,
}

impl ModelSpec {
    /// The transverse curvature bound used by comparison checks (0 if none).
    pub fn k(&self) -> f64 {
        self.flags.transverse_bound_k.unwrap_or(0.0)
    }
}

struct Params<'a> {
    id: &'a str,
    given: &'a BTreeMap<String, f64>,
    used: Vec<(&'static str, f64)>,
}

impl<'a> Params<'a> {
    fn get(&mut self, key: &'static str, default: f64) -> f64 {
        let v = self.given.get(key).copied().unwrap_or(default);
        self.used.push((key, v));
        v
    }

    fn count(&mut self, key: &'static str, default: usize, min: usize) -> Result<usize> {
        let v = self.get(key, default as f64);
        if v.fract() != 0.0 || v < min as f64 || v > 16.0 {
            return Err(GeometryError::BadParameters(format!(
                "{}: `{key}` must be an integer in [{min}, 16], got {v}",
                self.id
            )));
        }
        Ok(v as usize)
    }

    fn positive(&mut self, key: &'static str, default: f64) -> Result<f64> {
        let v = self.get(key, default);
        if !(v > 0.0 && v.is_finite()) {
            return Err(GeometryError::BadParameters(format!("{}: `{key}` must be positive, got {v}", self.id)));
        }
        Ok(v)
    }

    fn finish(self) -> Result<BTreeMap<String, f64>> {
        if let Some(k) = self.given.keys().find(|k| !self.used.iter().any(|(u, _)| u == k)) {
            return Err(GeometryError::BadParameters(format!("{}: unknown parameter `{k}`", self.id)));
        }
        Ok(self.used.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }
}

fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> SampleBox {
    SampleBox::new(lower, upper)
}

/// Build a model by id. Unknown parameters are rejected; missing ones take
/// their defaults.
pub fn build(id: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let mut p = Params { id, given: params, used: Vec::new() };
    let spec = match id {
        "euclidean_product" => {
            let n = p.count("n", 2, 1)?;
            let m = p.count("m", 1, 1)?;
            let dim = n + m;
            let chart = FoliatedChart::new(
                id,
                n,
                m,
                Domain::whole(dim),
                boxed(vec![-2.0; dim], vec![2.0; dim]),
                EuclideanProduct { n, m },
            )?;
            let dist: DistanceOracle =
                Arc::new(move |seed, t| (0..n).map(|i| (t[i] - seed[i]).powi(2)).sum::<f64>().sqrt());
            ModelSpec {
                id: id.into(),
                params: BTreeMap::new(),
                chart,
                leaf: LeafSlice { free: (n..dim).collect() },
                seed_point: vec![0.0; dim],
                flags: AssumptionFlags {
                    bundle_like: true,
                    minimal_leaves: true,
                    transverse_bound_k: Some(0.0),
                    simply_connected_leaf_space: true,
                },
                oracle: OraclePack {
                    transverse_curvature: Some(0.0),
                    lc_horizontal_sectional: Some(0.0),
                    torsion_vanishes: true,
                    leaves_totally_geodesic: true,
                    mean_curvature_norm: 0.0,
                    distance: Some(dist),
                },
            }
        }
        "hyperbolic_product" => {
            let d = p.count("d", 2, 2)?;
            let k = p.positive("K", 1.0)?;
            let m = p.count("m", 1, 1)?;
            let dim = d + m;
            let mut lo = vec![-1.0; dim];
            let mut hi = vec![1.0; dim];
            lo[d - 1] = 0.5;
            hi[d - 1] = 2.0;
            let chart = FoliatedChart::new(
                id,
                d,
                m,
                Domain::whole(dim).with_open_axis(d - 1, 0.0, f64::INFINITY),
                boxed(lo, hi),
                HyperbolicProduct { d, k, m },
            )?;
            let mut seed = vec![0.0; dim];
            seed[d - 1] = 1.0;
            let dist: DistanceOracle = Arc::new(move |s, t| {
                let q: f64 = (0..d).map(|i| (t[i] - s[i]).powi(2)).sum();
                (1.0 + q / (2.0 * s[d - 1] * t[d - 1])).acosh() / k.sqrt()
            });
            ModelSpec {
                id: id.into(),
                params: BTreeMap::new(),
                chart,
                leaf: LeafSlice { free: (d..dim).collect() },
                seed_point: seed,
                flags: AssumptionFlags {
                    bundle_like: true,
                    minimal_leaves: true,
                    transverse_bound_k: Some(k),
                    simply_connected_leaf_space: true,
                },
                oracle: OraclePack {
                    transverse_curvature: Some(-k),
                    lc_horizontal_sectional: Some(-k),
                    torsion_vanishes: true,
                    leaves_totally_geodesic: true,
                    mean_curvature_norm: 0.0,
                    distance: Some(dist),
                },
            }
        }
        "heisenberg" => {
            let chart = FoliatedChart::new(
                id,
                2,
                1,
                Domain::whole(3),
                boxed(vec![-1.5; 3], vec![1.5; 3]),
                Heisenberg,
            )?;
            let dist: DistanceOracle = Arc::new(|s, t| ((t[0] - s[0]).powi(2) + (t[1] - s[1]).powi(2)).sqrt());
            ModelSpec {
                id: id.into(),
                params: BTreeMap::new(),
                chart,
                leaf: LeafSlice { free: vec![2] },
                seed_point: vec![0.0; 3],
                flags: AssumptionFlags {
                    bundle_like: true,
                    minimal_leaves: true,
                    transverse_bound_k: Some(0.0),
                    simply_connected_leaf_space: true,
                },
                oracle: OraclePack {
                    transverse_curvature: Some(0.0),
                    lc_horizontal_sectional: Some(-0.75),
                    torsion_vanishes: false,
                    leaves_totally_geodesic: true,
                    mean_curvature_norm: 0.0,
                    distance: Some(dist),
                },
            }
        }
        "sol" => {
            let chart = FoliatedChart::new(id, 1, 2, Domain::whole(3), boxed(vec![-1.0; 3], vec![1.0; 3]), Sol)?;
            let dist: DistanceOracle = Arc::new(|s, t| (t[2] - s[2]).abs());
            ModelSpec {
                id: id.into(),
                params: BTreeMap::new(),
                chart,
                leaf: LeafSlice { free: vec![0, 1] },
                seed_point: vec![0.0; 3],
                flags: AssumptionFlags {
                    bundle_like: true,
                    minimal_leaves: true,
                    transverse_bound_k: None,
                    simply_connected_leaf_space: true,
                },
                oracle: OraclePack {
                    transverse_curvature: None,
                    lc_horizontal_sectional: None,
                    torsion_vanishes: false,
                    leaves_totally_geodesic: false,
                    mean_curvature_norm: 0.0,
                    distance: Some(dist),
                },
            }
        }
        "sphere_product" => {
            let k = p.positive("K", 1.0)?;
            let m = p.count("m", 1, 1)?;
            let dim = 2 + m;
            let chart = FoliatedChart::new(
                id,
                2,
                m,
                Domain::whole(dim),
                boxed(vec![-1.0; dim], vec![1.0; dim]),
                SphereProduct { k, m },
            )?;
            let mut seed = vec![0.0; dim];
            seed[0] = 1.0;
            let dist: DistanceOracle = Arc::new(move |s, t| {
                let d2 = (t[0] - s[0]).powi(2) + (t[1] - s[1]).powi(2);
                let ns = 1.0 + s[0] * s[0] + s[1] * s[1];
                let nt = 1.0 + t[0] * t[0] + t[1] * t[1];
                (1.0 - 2.0 * d2 / (ns * nt)).clamp(-1.0, 1.0).acos() / k.sqrt()
            });
            ModelSpec {
                id: id.into(),
                params: BTreeMap::new(),
                chart,
                leaf: LeafSlice { free: (2..dim).collect() },
                seed_point: seed,
                flags: AssumptionFlags {
                    bundle_like: true,
                    minimal_leaves: true,
                    transverse_bound_k: None,
                    simply_connected_leaf_space: true,
                },
                oracle: OraclePack {
                    transverse_curvature: Some(k),
                    lc_horizontal_sectional: Some(k),
                    torsion_vanishes: true,
                    leaves_totally_geodesic: true,
                    mean_curvature_norm: 0.0,
                    distance: Some(dist),
                },
            }
        }
        "horosphere_h3" => {
            let chart = FoliatedChart::new(
                id,
                1,
                2,
                Domain::whole(3).with_open_axis(2, 0.0, f64::INFINITY),
                boxed(vec![-1.0, -1.0, 0.5], vec![1.0, 1.0, 2.0]),
                HorosphereH3,
            )?;
            let dist: DistanceOracle = Arc::new(|s, t| (t[2] / s[2]).ln().abs());
            ModelSpec {
                id: id.into(),
                params: BTreeMap::new(),
                chart,
                leaf: LeafSlice { free: vec![0, 1] },
                seed_point: vec![0.0, 0.0, 1.0],
                flags: AssumptionFlags {
                    bundle_like: true,
                    minimal_leaves: false,
                    transverse_bound_k: None,
                    simply_connected_leaf_space: true,
                },
                oracle: OraclePack {
                    transverse_curvature: None,
                    lc_horizontal_sectional: None,
                    torsion_vanishes: false,
                    leaves_totally_geodesic: false,
                    mean_curvature_norm: 2.0,
                    distance: Some(dist),
                },
            }
        }
        "perturbed_product" => {
            let chart = FoliatedChart::new(
                id,
                2,
                1,
                Domain::whole(3).with_open_axis(1, 0.0, f64::INFINITY),
                boxed(vec![-1.0, 0.5, 0.5], vec![1.0, 2.0, 1.5]),
                PerturbedProduct,
            )?;
            ModelSpec {
                id: id.into(),
                params: BTreeMap::new(),
                chart,
                leaf: LeafSlice { free: vec![2] },
                seed_point: vec![0.0, 1.0, 0.0],
                flags: AssumptionFlags {
                    bundle_like: false,
                    minimal_leaves: true,
                    transverse_bound_k: Some(1.0),
                    simply_connected_leaf_space: true,
                },
                oracle: OraclePack {
                    transverse_curvature: Some(-1.0),
                    lc_horizontal_sectional: None,
                    torsion_vanishes: true,
                    leaves_totally_geodesic: true,
                    mean_curvature_norm: 0.0,
                    distance: None,
                },
            }
        }
        other => return Err(GeometryError::UnknownModel(other.to_string())),
    };
    let params = p.finish()?;
    Ok(ModelSpec { params, ..spec })
}

/// Build with default parameters.
pub fn build_default(id: &str) -> Result<ModelSpec> {
    build(id, &BTreeMap::new())
}
