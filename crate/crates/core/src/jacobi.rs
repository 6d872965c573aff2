//! Transverse Jacobi fields along horizontal geodesics, focal detection and
//! the Hessian of the distance to a leaf.
//!
//! Fields are carried in a parallel frame `P_0 = γ̇, P_1, …, P_{n−1}`
//! (horizontal) and `P_n, …` (vertical). The state of one field is
//! `(V_H, V_V, W)` with `V_H' = W`, `W' = −R(V_H, γ̇)γ̇` and
//! `V_V' = −Tor(V, γ̇)_V`; the fundamental matrix of that system is
//! propagated together with the frame by classical RK4.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::connection::PointGeometry;
use crate::error::{GeometryError, Result};
use crate::geodesic::{invert_normal_exp, unit_geodesic, GeodesicOptions, GeodesicPath, ShootingOptions, ShootingResult};
use crate::metric::{FoliatedChart, SplitVector};
use crate::ode::rk4_step;
use crate::zoo::LeafSlice;

/// Default RK4 step for Jacobi propagation.
pub const DEFAULT_STEP: f64 = 0.01;

struct Stage {
    geo: PointGeometry,
    /// Frame components of `γ̇`.
    vel: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Node {
    t: f64,
    y: Vec<f64>,
}

/// Parallel frame and fundamental matrix along a geodesic.
#[derive(Debug)]
pub struct Propagator {
    chart: FoliatedChart,
    pub geodesic: GeodesicPath,
    n: usize,
    nh: usize,
    m: usize,
    step: f64,
    nodes: Vec<Node>,
    frame0: Vec<f64>,
}

impl std::fmt::Debug for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stage").field("point", &self.geo.point).finish()
    }
}

/// Orthonormal completion of a unit vector in `R^nh`; column 0 is `u`.
fn complete_basis(u: &[f64]) -> Vec<f64> {
    let nh = u.len();
    let mut cols: Vec<Vec<f64>> = vec![u.to_vec()];
    for k in 0..nh {
        if cols.len() == nh {
            break;
        }
        let mut v = vec![0.0; nh];
        v[k] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
            }
        }
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if s > 1e-6 {
            cols.push(v.iter().map(|x| x / s).collect());
        }
    }
    let mut q = vec![0.0; nh * nh];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..nh {
            q[i * nh + j] = c[i];
        }
    }
    q
}

impl Propagator {
    /// Propagate along the whole of `geodesic`, which must start with a unit
    /// horizontal velocity.
    pub fn new(chart: &FoliatedChart, geodesic: GeodesicPath, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(GeometryError::BadParameters("Jacobi step must be positive".into()));
        }
        let n = chart.dim_total();
        let nh = chart.dim_horizontal();
        let m = n - nh;
        let (x0, v0) = geodesic.state(0.0);
        let geo0 = PointGeometry::first_order(chart, &x0)?;
        let vf = geo0.frame_components(&v0);
        let speed = vf.iter().map(|v| v * v).sum::<f64>().sqrt();
        let vert = vf[nh..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if vert > 1e-8 * speed.max(1.0) {
            return Err(GeometryError::NotHorizontal { vertical_norm: vert });
        }
        if (speed - 1.0).abs() > 1e-8 {
            return Err(GeometryError::NotOrthonormal { defect: (speed - 1.0).abs() });
        }
        let u: Vec<f64> = vf[..nh].iter().map(|v| v / speed).collect();
        let q = complete_basis(&u);
        let mut frame0 = vec![0.0; n * n];
        for i in 0..nh {
            for j in 0..nh {
                frame0[i * n + j] = q[i * nh + j];
            }
        }
        for a in nh..n {
            frame0[a * n + a] = 1.0;
        }
        let mut prop = Propagator {
            chart: chart.clone(),
            geodesic,
            n,
            nh,
            m,
            step,
            nodes: Vec::new(),
            frame0,
        };
        prop.run()?;
        Ok(prop)
    }

    /// Dimension `2n + m` of one field's state.
    pub fn state_dim(&self) -> usize {
        2 * self.nh + self.m
    }

    /// Initial parallel frame; `frame[C*N + α]` is the `C`-th adapted
    /// component of `P_α`.
    pub fn initial_frame(&self) -> &[f64] {
        &self.frame0
    }

    pub fn t_end(&self) -> f64 {
        self.geodesic.t_end()
    }

    /// Grid times.
    pub fn times(&self) -> Vec<f64> {
        self.nodes.iter().map(|nd| nd.t).collect()
    }

    fn stage(&self, t: f64) -> Result<Stage> {
        let (x, v) = self.geodesic.state(t);
        let geo = PointGeometry::with_curvature(&self.chart, &x)?;
        let vel = geo.frame_components(&v);
        Ok(Stage { geo, vel })
    }

    fn rhs(&self, s: &Stage, y: &[f64]) -> Vec<f64> {
        let (n, nh, m) = (self.n, self.nh, self.m);
        let k = self.state_dim();
        let idx = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
        let p = &y[..n * n];
        let phi = &y[n * n..];
        let omega = &s.geo.gamma_nabla;
        let vf = &s.vel;
        let mut out = vec![0.0; y.len()];

        let mut wv = vec![0.0; n * n];
        for a in 0..n {
            if vf[a] == 0.0 {
                continue;
            }
            for b in 0..n {
                for c in 0..n {
                    wv[c * n + b] += vf[a] * omega[idx(a, b, c)];
                }
            }
        }
        for c in 0..n {
            for al in 0..n {
                out[c * n + al] = -(0..n).map(|b| wv[c * n + b] * p[b * n + al]).sum::<f64>();
            }
        }

        let r = s.geo.curvature.as_ref().expect("stage geometry has curvature");
        let mut rv = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let w = vf[b] * vf[c];
                    if w == 0.0 {
                        continue;
                    }
                    let base = ((a * n + b) * n + c) * n;
                    for d in 0..n {
                        rv[a * n + d] += w * r[base + d];
                    }
                }
            }
        }
        let mut tv = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                for c in nh..n {
                    tv[a * n + c] += vf[b] * s.geo.torsion[idx(a, b, c)];
                }
            }
        }
        // Rm[j][i] = ⟨R(P_i, γ̇)γ̇, P_j⟩, Tm[c][α] = ⟨Tor(P_α, γ̇), P_{n+c}⟩
        let col = |al: usize| (0..n).map(move |cc| p[cc * n + al]);
        let mut rm = vec![0.0; nh * nh];
        for i in 0..nh {
            let pi: Vec<f64> = col(i).collect();
            let mut rvp = vec![0.0; n];
            for a in 0..n {
                for d in 0..n {
                    rvp[d] += pi[a] * rv[a * n + d];
                }
            }
            for j in 0..nh {
                rm[j * nh + i] = col(j).zip(&rvp).map(|(x, y)| x * y).sum();
            }
        }
        let mut tm = vec![0.0; m * n];
        for al in 0..n {
            let pa: Vec<f64> = col(al).collect();
            let mut tvp = vec![0.0; n];
            for a in 0..n {
                for c in nh..n {
                    tvp[c] += pa[a] * tv[a * n + c];
                }
            }
            for c in 0..m {
                tm[c * n + al] = col(nh + c).zip(&tvp).map(|(x, y)| x * y).sum();
            }
        }

        let dphi = &mut out[n * n..];
        for cidx in 0..k {
            let at = |row: usize| phi[row * k + cidx];
            for i in 0..nh {
                dphi[i * k + cidx] = at(nh + m + i);
            }
            for c in 0..m {
                dphi[(nh + c) * k + cidx] = -(0..n).map(|al| tm[c * n + al] * at(al)).sum::<f64>();
            }
            for j in 0..nh {
                dphi[(nh + m + j) * k + cidx] = -(0..nh).map(|i| rm[j * nh + i] * at(i)).sum::<f64>();
            }
        }
        out
    }

    fn rk4(&self, y: &[f64], h: f64, s0: &Stage, sm: &Stage, s1: &Stage) -> Vec<f64> {
        let mut call = 0;
        rk4_step(
            |_, yy| {
                let s = match call {
                    0 => s0,
                    1 | 2 => sm,
                    _ => s1,
                };
                call += 1;
                self.rhs(s, yy)
            },
            0.0,
            y,
            h,
        )
    }

    fn run(&mut self) -> Result<()> {
        let n = self.n;
        let k = self.state_dim();
        let mut y = self.frame0.clone();
        let mut phi = vec![0.0; k * k];
        for i in 0..k {
            phi[i * k + i] = 1.0;
        }
        y.extend(phi);
        let t_end = self.geodesic.t_end();
        let steps = (t_end / self.step).ceil().max(0.0) as usize;
        self.nodes.push(Node { t: 0.0, y: y.clone() });
        if steps == 0 {
            return Ok(());
        }
        let h = t_end / steps as f64;
        let mut s0 = self.stage(0.0)?;
        for i in 0..steps {
            let t = i as f64 * h;
            let sm = self.stage(t + 0.5 * h)?;
            let s1 = self.stage(t + h)?;
            y = self.rk4(&y, h, &s0, &sm, &s1);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(GeometryError::StepFailure { t });
            }
            self.nodes.push(Node { t: t + h, y: y.clone() });
            s0 = s1;
        }
        debug_assert_eq!(self.nodes[0].y.len(), n * n + k * k);
        Ok(())
    }

    /// Frame and fundamental matrix at `t`, by a partial RK4 step from the
    /// grid node below `t`.
    pub fn state_at(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n;
        let t = t.clamp(0.0, self.t_end());
        let i = match self.nodes.binary_search_by(|nd| nd.t.partial_cmp(&t).unwrap()) {
            Ok(i) => {
                let y = &self.nodes[i].y;
                return Ok((y[..n * n].to_vec(), y[n * n..].to_vec()));
            }
            Err(i) => i - 1,
        };
        let nd = &self.nodes[i];
        let h = t - nd.t;
        let s0 = self.stage(nd.t)?;
        let sm = self.stage(nd.t + 0.5 * h)?;
        let s1 = self.stage(t)?;
        let y = self.rk4(&nd.y, h, &s0, &sm, &s1);
        Ok((y[..n * n].to_vec(), y[n * n..].to_vec()))
    }

    /// State `(V_H, V_V, W)` at `γ(0)` from adapted-frame components of the
    /// value and of the horizontal covariant derivative.
    pub fn initial_state(&self, value: &[f64], derivative: &[f64]) -> Vec<f64> {
        let (n, nh, m) = (self.n, self.nh, self.m);
        let to_par = |v: &[f64]| -> Vec<f64> {
            (0..n).map(|al| (0..n).map(|c| self.frame0[c * n + al] * v[c]).sum()).collect()
        };
        let v = to_par(value);
        let w = to_par(derivative);
        let mut s = v;
        s.extend_from_slice(&w[..nh]);
        debug_assert_eq!(s.len(), 2 * nh + m);
        s
    }

    /// State of the field with initial state `init` at time `t`.
    pub fn field_state(&self, t: f64, init: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = self.state_dim();
        let (p, phi) = self.state_at(t)?;
        let s: Vec<f64> = (0..k).map(|r| (0..k).map(|c| phi[r * k + c] * init[c]).sum()).collect();
        Ok((p, s))
    }

    /// Coordinates at `γ(t)` of the vector with parallel components `par`
    /// (length `N`), given the frame `p` at `t`.
    pub fn parallel_to_coordinates(&self, t: f64, p: &[f64], par: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let comps: Vec<f64> = (0..n).map(|c| (0..n).map(|al| p[c * n + al] * par[al]).sum()).collect();
        let geo = PointGeometry::first_order(&self.chart, &self.geodesic.position(t))?;
        Ok(geo.coordinates(&comps))
    }

    /// Coordinates of `V(t)` for the field with initial state `init`.
    pub fn vector_at(&self, t: f64, init: &[f64]) -> Result<Vec<f64>> {
        let (p, s) = self.field_state(t, init)?;
        self.parallel_to_coordinates(t, &p, &s[..self.n])
    }

    pub fn vector_at_end(&self, init: &[f64]) -> Result<Vec<f64>> {
        self.vector_at(self.t_end(), init)
    }

    /// Focal block of the fundamental matrix at a grid node or time:
    /// initial data `W(0) ⟂ γ̇` and `V_V(0)` mapped to `V_⟂(t)`.
    fn focal_matrix(&self, phi: &[f64]) -> DMatrix<f64> {
        let (n, nh, m) = (self.n, self.nh, self.m);
        let k = self.state_dim();
        let cols: Vec<usize> = (1..nh).map(|j| nh + m + j).chain(nh..nh + m).collect();
        let rows: Vec<usize> = (1..n).collect();
        DMatrix::from_fn(n - 1, n - 1, |r, c| phi[rows[r] * k + cols[c]])
    }

    fn focal_values(&self, phi: &[f64]) -> (f64, f64) {
        let mat = self.focal_matrix(phi);
        let det = mat.clone().determinant();
        let sv = mat.singular_values();
        (sv.min(), det)
    }

    fn focal_at(&self, t: f64) -> Result<(f64, f64)> {
        let (_, phi) = self.state_at(t)?;
        Ok(self.focal_values(&phi))
    }

    /// Focal column indices inside the state vector.
    fn focal_columns(&self) -> Vec<usize> {
        let (nh, m) = (self.nh, self.m);
        (1..nh).map(|j| nh + m + j).chain(nh..nh + m).collect()
    }
}

/// A transverse Jacobi field sampled on the propagation grid.
#[derive(Clone, Debug, Serialize)]
pub struct JacobiField {
    pub samples: Vec<JacobiSample>,
}

#[derive(Clone, Debug, Serialize)]
pub struct JacobiSample {
    pub t: f64,
    /// `V(t)` in coordinates.
    pub value: Vec<f64>,
    /// `(V_H, V_V)` in the parallel frame.
    pub parallel: Vec<f64>,
    /// Horizontal covariant derivative in the parallel frame.
    pub derivative: Vec<f64>,
}

/// Propagate the field with `V(0) = v0` and horizontal `∇_γ̇ V(0) = w0`
/// (coordinates at `γ(0)`) along a unit-speed horizontal geodesic.
pub fn integrate_jacobi(chart: &FoliatedChart, geodesic: &GeodesicPath, v0: &[f64], w0: &[f64], step: f64) -> Result<JacobiField> {
    let prop = Propagator::new(chart, geodesic.clone(), step)?;
    let geo0 = PointGeometry::first_order(chart, &geodesic.position(0.0))?;
    let init = prop.initial_state(&geo0.frame_components(v0), &geo0.frame_components(w0));
    let n = chart.dim_total();
    let mut samples = Vec::new();
    for nd in &prop.nodes {
        let (p, s) = prop.field_state(nd.t, &init)?;
        let value = prop.parallel_to_coordinates(nd.t, &p, &s[..n])?;
        samples.push(JacobiSample { t: nd.t, value, parallel: s[..n].to_vec(), derivative: s[n..].to_vec() });
    }
    Ok(JacobiField { samples })
}

/// Differential of the normal exponential map at horizontal `u` applied to
/// `v` in `T_y M`: the vertical part moves the base along the leaf, the
/// horizontal part varies `u`.
pub fn exp_differential(chart: &FoliatedChart, y: &[f64], u: &[f64], v: &[f64]) -> Result<SplitVector> {
    let geo0 = PointGeometry::first_order(chart, y)?;
    let nh = chart.dim_horizontal();
    let uf = geo0.frame_components(u);
    let len = uf.iter().map(|x| x * x).sum::<f64>().sqrt();
    if len == 0.0 {
        return Ok(geo0.split(v));
    }
    let (path, len) = unit_geodesic(chart, y, u, GeodesicOptions { tol: 1e-11, max_step: DEFAULT_STEP })?;
    let prop = Propagator::new(chart, path, DEFAULT_STEP)?;
    let vf = geo0.frame_components(v);
    let mut value = vf.clone();
    value[..nh].iter_mut().for_each(|x| *x = 0.0);
    let mut deriv = vf;
    deriv[nh..].iter_mut().for_each(|x| *x = 0.0);
    deriv.iter_mut().for_each(|x| *x /= len);
    let init = prop.initial_state(&value, &deriv);
    let out = prop.vector_at(len, &init)?;
    let geo1 = PointGeometry::first_order(chart, &prop.geodesic.position(len))?;
    Ok(geo1.split(&out))
}

/// A candidate focal time after refinement.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FocalCandidate {
    pub t: f64,
    pub sigma_min: f64,
    /// `sigma_min` relative to its value one grid step from the start.
    pub relative_sigma: f64,
    pub determinant: f64,
    pub focal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FocalReport {
    pub t_max: f64,
    pub grid_step: f64,
    pub sigma_ref: f64,
    /// Smallest relative singular value seen on the grid after the first step.
    pub min_relative_sigma: f64,
    pub candidates: Vec<FocalCandidate>,
    pub first_focal: Option<f64>,
}

/// Threshold on the relative smallest singular value for a focal verdict.
pub const FOCAL_THRESHOLD: f64 = 1e-6;

/// Scan the horizontal geodesic from `y` in direction `u` up to `t_max`.
pub fn detect_focal(chart: &FoliatedChart, y: &[f64], u: &[f64], t_max: f64, step: f64) -> Result<FocalReport> {
    let geo = PointGeometry::first_order(chart, y)?;
    let uf = geo.frame_components(u);
    let len = uf.iter().map(|x| x * x).sum::<f64>().sqrt();
    if len == 0.0 {
        return Err(GeometryError::ZeroVector);
    }
    let dir: Vec<f64> = u.iter().map(|x| x * t_max / len).collect();
    let (path, _) = unit_geodesic(chart, y, &dir, GeodesicOptions { tol: 1e-11, max_step: step })?;
    let prop = Propagator::new(chart, path, step)?;
    scan_focal(&prop)
}

/// Focal scan along an existing propagation.
pub fn scan_focal(prop: &Propagator) -> Result<FocalReport> {
    let nodes = &prop.nodes;
    let t_max = prop.t_end();
    if nodes.len() < 3 {
        return Err(GeometryError::BadParameters("focal scan needs at least two steps".into()));
    }
    let grid_step = nodes[1].t - nodes[0].t;
    let n = prop.n;
    let vals: Vec<(f64, f64)> = nodes.iter().map(|nd| prop.focal_values(&nd.y[n * n..])).collect();
    let sigma_ref = vals[1].0;
    let rel = |s: f64| s / sigma_ref;
    let min_relative_sigma = vals[1..].iter().map(|v| rel(v.0)).fold(f64::INFINITY, f64::min);
    let mut raw: Vec<f64> = Vec::new();
    for i in 2..nodes.len() {
        let (d0, d1) = (vals[i - 1].1, vals[i].1);
        if d0 == 0.0 || d1 == 0.0 || d0.signum() != d1.signum() {
            let t = bisect_sign(prop, nodes[i - 1].t, nodes[i].t, d0)?;
            raw.push(t);
        }
        // strict local minimum; plateaus and rounding noise are ignored
        let dips = |a: f64, b: f64| a - b > 1e-10 * a;
        if i + 1 < nodes.len() && dips(vals[i - 1].0, vals[i].0) && dips(vals[i + 1].0, vals[i].0) {
            raw.push(golden_min(prop, nodes[i - 1].t, nodes[i + 1].t)?);
        }
    }
    raw.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut candidates: Vec<FocalCandidate> = Vec::new();
    for t in raw {
        let (sigma, det) = prop.focal_at(t)?;
        let cand = FocalCandidate { t, sigma_min: sigma, relative_sigma: rel(sigma), determinant: det, focal: rel(sigma) < FOCAL_THRESHOLD };
        match candidates.last_mut() {
            Some(last) if (t - last.t).abs() < grid_step => {
                if cand.sigma_min < last.sigma_min {
                    *last = cand;
                }
            }
            _ => candidates.push(cand),
        }
    }
    let first_focal = candidates.iter().find(|c| c.focal).map(|c| c.t);
    Ok(FocalReport { t_max, grid_step, sigma_ref, min_relative_sigma, candidates, first_focal })
}

fn bisect_sign(prop: &Propagator, mut a: f64, mut b: f64, det_a: f64) -> Result<f64> {
    let sa = det_a.signum();
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let (_, d) = prop.focal_at(mid)?;
        if d == 0.0 {
            return Ok(mid);
        }
        if d.signum() == sa {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

fn golden_min(prop: &Propagator, mut a: f64, mut b: f64) -> Result<f64> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = prop.focal_at(c)?.0;
    let mut fd = prop.focal_at(d)?.0;
    for _ in 0..200 {
        if (b - a) <= 1e-15 * b.abs().max(1.0) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = prop.focal_at(c)?.0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = prop.focal_at(d)?.0;
        }
    }
    Ok(0.5 * (a + b))
}

/// Hessian of the distance to a leaf at a target, restricted to the
/// horizontal directions orthogonal to the minimizing geodesic.
#[derive(Debug)]
pub struct DistanceHessian {
    pub shooting: ShootingResult,
    pub rho: f64,
    /// Shape operator in the parallel basis `P_1, …, P_{n−1}` at the target.
    pub shape: Vec<f64>,
    /// `P_1, …, P_{n−1}` at the target, in coordinates.
    pub basis: Vec<Vec<f64>>,
    /// Unit velocity of the geodesic at the target (the gradient of r).
    pub gradient: Vec<f64>,
    pub propagator: Propagator,
    /// Initial states of the boundary-value fields with `V(ρ) = P_j`.
    bvp_states: Vec<Vec<f64>>,
    frame_end: Vec<f64>,
}

impl DistanceHessian {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Parallel components of coordinate vector `x` at the target along
    /// `P_1, …, P_{n−1}`.
    pub fn components(&self, x: &[f64]) -> Result<Vec<f64>> {
        let chart = &self.propagator.chart;
        let geo = PointGeometry::first_order(chart, &self.shooting.target)?;
        let xf = geo.frame_components(x);
        let n = chart.dim_total();
        Ok((1..chart.dim_horizontal())
            .map(|al| (0..n).map(|c| self.frame_end[c * n + al] * xf[c]).sum())
            .collect())
    }

    /// `Hess r(ξ, η)` on parallel components.
    pub fn bilinear(&self, xi: &[f64], eta: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += xi[i] * self.shape[i * d + j] * eta[j];
            }
        }
        s
    }

    /// `Hess r(X, X)` for a coordinate vector at the target.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let c = self.components(x)?;
        Ok(self.bilinear(&c, &c))
    }

    /// Horizontal Laplacian of r: the trace of the shape operator.
    pub fn trace(&self) -> f64 {
        let d = self.dim();
        (0..d).map(|i| self.shape[i * d + i]).sum()
    }

    /// Largest entry of `S − Sᵀ`.
    pub fn asymmetry(&self) -> f64 {
        let d = self.dim();
        let mut a: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                a = a.max((self.shape[i * d + j] - self.shape[j * d + i]).abs());
            }
        }
        a
    }

    /// Parallel-frame state `(V_H, V_V, W)` at time `t` of the
    /// boundary-value field with `V(ρ) = Σ ξ_j P_j`.
    pub fn bvp_field(&self, xi: &[f64], t: f64) -> Result<Vec<f64>> {
        let k = self.propagator.state_dim();
        let mut init = vec![0.0; k];
        for (j, x) in xi.iter().enumerate() {
            for (r, v) in self.bvp_states[j].iter().enumerate() {
                init[r] += x * v;
            }
        }
        Ok(self.propagator.field_state(t, &init)?.1)
    }

    /// Riccati ratio `⟨V_H, W⟩ / |V_H|²` at time `t` of the boundary-value
    /// field with `V(ρ) = Σ ξ_j P_j`.
    pub fn riccati_ratio(&self, xi: &[f64], t: f64) -> Result<f64> {
        let nh = self.propagator.nh;
        let m = self.propagator.m;
        let s = self.bvp_field(xi, t)?;
        let vh = &s[..nh];
        let w = &s[nh + m..];
        let num: f64 = vh.iter().zip(w).map(|(a, b)| a * b).sum();
        let den: f64 = vh.iter().map(|a| a * a).sum();
        if den < 1e-300 {
            return Err(GeometryError::DivisionNearZero { t });
        }
        Ok(num / den)
    }
}

/// Build the distance Hessian at `target`, shooting from the leaf through
/// `seed`.
pub fn hessian_form(
    chart: &FoliatedChart,
    leaf: &LeafSlice,
    seed: &[f64],
    target: &[f64],
    step: f64,
) -> Result<DistanceHessian> {
    let shooting = invert_normal_exp(chart, leaf, seed, target, None, ShootingOptions::default())?;
    hessian_from_shooting(chart, shooting, step)
}

/// Hessian along an already-converged shooting solution.
pub fn hessian_from_shooting(chart: &FoliatedChart, shooting: ShootingResult, step: f64) -> Result<DistanceHessian> {
    let rho = shooting.rho;
    if rho <= 1e-12 {
        return Err(GeometryError::DivisionNearZero { t: rho });
    }
    let path = crate::geodesic::integrate_geodesic_with(
        chart,
        &shooting.base,
        &shooting.direction,
        rho,
        GeodesicOptions { tol: 1e-11, max_step: step },
    )?;
    let prop = Propagator::new(chart, path, step)?;
    let (n, nh, m) = (prop.n, prop.nh, prop.m);
    let k = prop.state_dim();
    let (p_end, phi) = prop.state_at(rho)?;
    let mat = prop.focal_matrix(&phi);
    let sigma = mat.singular_values().min();
    let sigma_ref = prop.focal_values(&prop.nodes[1.min(prop.nodes.len() - 1)].y[n * n..]).0;
    if !(sigma > 1e-10 * sigma_ref) {
        return Err(GeometryError::SingularBvp { t: rho, sigma });
    }
    let lu = mat.lu();
    let cols = prop.focal_columns();
    let d = nh - 1;
    let mut shape = vec![0.0; d * d];
    let mut bvp_states = Vec::with_capacity(d);
    for j in 0..d {
        let mut rhs = DVector::zeros(n - 1);
        rhs[j] = 1.0;
        let c = lu.solve(&rhs).ok_or(GeometryError::SingularBvp { t: rho, sigma })?;
        let mut init = vec![0.0; k];
        for (ci, &col) in cols.iter().enumerate() {
            init[col] = c[ci];
        }
        let end: Vec<f64> = (0..k).map(|r| (0..k).map(|cc| phi[r * k + cc] * init[cc]).sum()).collect();
        for i in 0..d {
            shape[i * d + j] = end[nh + m + 1 + i];
        }
        bvp_states.push(init);
    }
    let basis = (1..nh)
        .map(|al| {
            let mut par = vec![0.0; n];
            par[al] = 1.0;
            prop.parallel_to_coordinates(rho, &p_end, &par)
        })
        .collect::<Result<Vec<_>>>()?;
    let gradient = prop.geodesic.velocity(rho);
    Ok(DistanceHessian { shooting, rho, shape, basis, gradient, propagator: prop, bvp_states, frame_end: p_end })
}

/// `Hess r(X, X)` at `target` for coordinate vector `x`.
pub fn hessian_distance(chart: &FoliatedChart, leaf: &LeafSlice, seed: &[f64], target: &[f64], x: &[f64]) -> Result<f64> {
    hessian_form(chart, leaf, seed, target, DEFAULT_STEP)?.eval(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::normal_exp;
    use crate::zoo::build_default;

    #[test]
    fn basis_completion_is_orthonormal() {
        let u = [0.6, 0.0, 0.8];
        let q = complete_basis(&u);
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|r| q[r * 3 + i] * q[r * 3 + j]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
        assert_eq!(q[0], 0.6);
    }

    #[test]
    fn sphere_focal_at_pi_over_root_k() {
        let spec = build_default("sphere_product").unwrap();
        let k = spec.k().max(1.0);
        let y = spec.seed_point.clone();
        let mut u = vec![0.0; y.len()];
        u[1] = 1.0;
        let rep = detect_focal(&spec.chart, &y, &u, 4.0, 0.01).unwrap();
        let t = rep.first_focal.expect("focal point");
        assert!((t - std::f64::consts::PI / k.sqrt()).abs() < 1e-4, "t = {t}");
    }

    #[test]
    fn hyperbolic_has_no_focal_points() {
        let spec = build_default("hyperbolic_product").unwrap();
        let y = spec.seed_point.clone();
        let mut u = vec![0.0; y.len()];
        u[0] = 1.0;
        let rep = detect_focal(&spec.chart, &y, &u, 6.0, 0.01).unwrap();
        assert!(rep.first_focal.is_none(), "{rep:?}");
        assert!(rep.min_relative_sigma > 0.5);
    }

    #[test]
    fn exp_differential_matches_finite_differences() {
        for id in ["heisenberg", "hyperbolic_product", "sphere_product"] {
            let spec = build_default(id).unwrap();
            let y = spec.seed_point.clone();
            let geo = PointGeometry::first_order(&spec.chart, &y).unwrap();
            let n = y.len();
            let mut uf = vec![0.0; n];
            uf[0] = 0.7;
            uf[1] = -0.4;
            let u = geo.coordinates(&uf);
            let mut wf = vec![0.0; n];
            wf[0] = 0.3;
            wf[1] = 0.5;
            let w = geo.coordinates(&wf);
            let d = exp_differential(&spec.chart, &y, &u, &w).unwrap();
            let h = 1e-5;
            let up: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a + h * b).collect();
            let um: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a - h * b).collect();
            let ep = normal_exp(&spec.chart, &y, &up).unwrap();
            let em = normal_exp(&spec.chart, &y, &um).unwrap();
            for i in 0..n {
                let fd = (ep[i] - em[i]) / (2.0 * h);
                assert!((fd - d.components[i]).abs() < 1e-6, "{id}: {fd} vs {}", d.components[i]);
            }
        }
    }

    #[test]
    fn exp_differential_at_zero_is_identity() {
        let spec = build_default("heisenberg").unwrap();
        let y = vec![0.2, -0.1, 0.3];
        let v = [0.1, 0.2, 0.3];
        let d = exp_differential(&spec.chart, &y, &[0.0; 3], &v).unwrap();
        assert_eq!(d.components, v.to_vec());
    }

    #[test]
    fn hyperbolic_hessian_is_coth() {
        // H^3 × R: the leaf is a point of H^3, so Hess r = √K coth(√K r).
        let mut p = std::collections::BTreeMap::new();
        p.insert("d".to_string(), 3.0);
        let spec = crate::zoo::build("hyperbolic_product", &p).unwrap();
        let target = vec![0.0, 0.0, 1.5f64.exp(), 0.3];
        let hess = hessian_form(&spec.chart, &spec.leaf, &spec.seed_point, &target, 0.01).unwrap();
        let r = hess.rho;
        assert!(hess.asymmetry() < 1e-8);
        for i in 0..2 {
            for j in 0..2 {
                let sk = spec.k().sqrt();
                let want = if i == j { sk / (sk * r).tanh() } else { 0.0 };
                assert!((hess.shape[i * 2 + j] - want).abs() < 1e-7, "{:?} r={r}", hess.shape);
            }
        }
    }
}
