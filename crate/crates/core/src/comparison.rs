//! Laplacian comparison for the distance to a leaf, Rayleigh quotients of
//! bump functions and radial Dirichlet eigenvalues.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::connection::PointGeometry;
use crate::error::{GeometryError, Result};
use crate::geodesic::{invert_normal_exp, normal_exp, InitialGuess, ShootingOptions, ShootingResult};
use crate::jacobi::{hessian_from_shooting, DistanceHessian, DEFAULT_STEP};
use crate::metric::{random_unit, FoliatedChart};
use crate::quadrature::gauss_legendre;
use crate::zoo::LeafSlice;

/// `Δr` and `Δ_H r` at one target.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LaplacianValue {
    pub target: Vec<f64>,
    pub r: f64,
    pub delta_r: f64,
    pub delta_h_r: f64,
    /// `⟨H, ∇r⟩` with `H` the mean curvature vector of the leaf through the target.
    pub mean_curvature_term: f64,
}

/// Full and horizontal Laplacian of the distance to the leaf through `seed`.
pub fn laplacian_r(chart: &FoliatedChart, leaf: &LeafSlice, seed: &[f64], target: &[f64]) -> Result<LaplacianValue> {
    let shot = invert_normal_exp(chart, leaf, seed, target, None, ShootingOptions::default())?;
    laplacian_from_shooting(chart, shot)
}

pub fn laplacian_from_shooting(chart: &FoliatedChart, shot: ShootingResult) -> Result<LaplacianValue> {
    let hess = hessian_from_shooting(chart, shot, DEFAULT_STEP)?;
    laplacian_from_hessian(chart, &hess)
}

pub fn laplacian_from_hessian(chart: &FoliatedChart, hess: &DistanceHessian) -> Result<LaplacianValue> {
    let target = &hess.shooting.target;
    let geo = PointGeometry::first_order(chart, target)?;
    let h = geo.coordinates(&geo.mean_curvature_frame());
    let term = geo.inner(&h, &hess.gradient);
    let delta_h_r = hess.trace();
    Ok(LaplacianValue { target: target.clone(), r: hess.rho, delta_r: delta_h_r - term, delta_h_r, mean_curvature_term: term })
}

/// Model Laplacian of the distance in constant curvature `−k`:
/// `(d−1)√k coth(√k r)`, or `(d−1)/r` when `k = 0`.
pub fn comparison_bound(d_h: usize, k: f64, r: f64) -> f64 {
    let c = (d_h as f64) - 1.0;
    if k == 0.0 {
        c / r
    } else {
        let s = k.sqrt();
        c * s / (s * r).tanh()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub target: Vec<f64>,
    pub r: f64,
    pub delta_r: f64,
    pub delta_h_r: f64,
    pub bound: f64,
    /// `Δr − bound`, signed.
    pub margin: f64,
    /// `Δ_H r − bound`, signed.
    pub margin_h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub k: f64,
    pub d_h: usize,
    pub tolerance: f64,
    pub rows: Vec<ComparisonRow>,
    pub min_margin: f64,
    pub min_margin_h: f64,
    /// Largest `|Δr − Δ_H r|`.
    pub max_minimality_gap: f64,
    pub violations: usize,
    pub pass: bool,
}

/// Margin below which a comparison row counts as a violation.
pub const COMPARISON_TOLERANCE: f64 = 1e-6;

/// Evaluate the comparison inequality at each target.
pub fn check_laplacian_comparison(
    chart: &FoliatedChart,
    leaf: &LeafSlice,
    seed: &[f64],
    k: f64,
    targets: &[Vec<f64>],
) -> Result<ComparisonReport> {
    if !(k >= 0.0) {
        return Err(GeometryError::BadParameters(format!("curvature bound must be nonnegative, got {k}")));
    }
    let d_h = chart.dim_horizontal();
    let mut rows = Vec::with_capacity(targets.len());
    for t in targets {
        let lap = laplacian_r(chart, leaf, seed, t)?;
        if !(lap.r > 0.0) {
            return Err(GeometryError::BadParameters("comparison target lies on the leaf".into()));
        }
        let bound = comparison_bound(d_h, k, lap.r);
        rows.push(ComparisonRow {
            target: t.clone(),
            r: lap.r,
            delta_r: lap.delta_r,
            delta_h_r: lap.delta_h_r,
            bound,
            margin: lap.delta_r - bound,
            margin_h: lap.delta_h_r - bound,
        });
    }
    let min_margin = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let min_margin_h = rows.iter().map(|r| r.margin_h).fold(f64::INFINITY, f64::min);
    let max_minimality_gap = rows.iter().map(|r| (r.delta_r - r.delta_h_r).abs()).fold(0.0, f64::max);
    let violations = rows.iter().filter(|r| r.margin_h < -COMPARISON_TOLERANCE).count();
    Ok(ComparisonReport {
        k,
        d_h,
        tolerance: COMPARISON_TOLERANCE,
        rows,
        min_margin,
        min_margin_h,
        max_minimality_gap,
        violations,
        pass: violations == 0,
    })
}

/// A point reached from the leaf by a known normal geodesic.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OffLeafSample {
    pub base: Vec<f64>,
    /// Unit horizontal direction at `base`, in coordinates.
    pub direction: Vec<f64>,
    pub r: f64,
    pub target: Vec<f64>,
}

/// Random targets `exp(y, r·u)` with `y` on the leaf (free coordinates drawn
/// from the chart's sample box), `u` a random unit horizontal vector and
/// `r` uniform in `r_range`.
pub fn off_leaf_samples(
    chart: &FoliatedChart,
    leaf: &LeafSlice,
    seed: &[f64],
    count: usize,
    r_range: (f64, f64),
    rng_seed: u64,
) -> Result<Vec<OffLeafSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let bx = chart.sample_box();
    let nh = chart.dim_horizontal();
    let n = chart.dim_total();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let s: Vec<f64> = leaf.free.iter().map(|&k| rng.gen_range(bx.lower[k]..=bx.upper[k])).collect();
        let base = leaf.point(seed, &s);
        let geo = PointGeometry::first_order(chart, &base)?;
        let mut comps = random_unit(&mut rng, nh);
        comps.resize(n, 0.0);
        let direction = geo.coordinates(&comps);
        let r = rng.gen_range(r_range.0..=r_range.1);
        let u: Vec<f64> = direction.iter().map(|d| d * r).collect();
        let target = normal_exp(chart, &base, &u)?;
        out.push(OffLeafSample { base, direction, r, target });
    }
    Ok(out)
}

fn warm_guess(chart: &FoliatedChart, leaf: &LeafSlice, shot: &ShootingResult) -> Result<InitialGuess> {
    let geo = PointGeometry::first_order(chart, &shot.base)?;
    let d = geo.frame_components(&shot.direction);
    Ok(InitialGuess {
        leaf_coords: leaf.coordinates(&shot.base),
        direction: d[..chart.dim_horizontal()].to_vec(),
        rho: shot.rho,
    })
}

/// Distance to the leaf along a stencil, warm-started from `center`.
struct Stencil<'a> {
    chart: &'a FoliatedChart,
    leaf: &'a LeafSlice,
    seed: &'a [f64],
    guess: InitialGuess,
}

impl Stencil<'_> {
    fn r(&self, p: &[f64]) -> Result<f64> {
        let opts = ShootingOptions { residual_tol: 1e-12, ..Default::default() };
        Ok(invert_normal_exp(self.chart, self.leaf, self.seed, p, Some(self.guess.clone()), opts)?.rho)
    }

    fn shifted(&self, x: &[f64], moves: &[(usize, f64)]) -> Result<f64> {
        let mut p = x.to_vec();
        for &(i, d) in moves {
            p[i] += d;
        }
        self.r(&p)
    }
}

/// Coordinate Hessian `∂_i∂_j r` and gradient covector of the distance by
/// central differences, plus the shooting solution at the center.
fn fd_second_derivatives(
    chart: &FoliatedChart,
    leaf: &LeafSlice,
    seed: &[f64],
    target: &[f64],
    h: f64,
) -> Result<(Vec<f64>, Vec<f64>, ShootingResult)> {
    let n = chart.dim_total();
    let center = invert_normal_exp(chart, leaf, seed, target, None, ShootingOptions::default())?;
    let st = Stencil { chart, leaf, seed, guess: warm_guess(chart, leaf, &center)? };
    let r0 = st.r(target)?;
    let mut hess = vec![0.0; n * n];
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let p = st.shifted(target, &[(i, h)])?;
        let m = st.shifted(target, &[(i, -h)])?;
        hess[i * n + i] = (p - 2.0 * r0 + m) / (h * h);
        grad[i] = (p - m) / (2.0 * h);
        for j in 0..i {
            let pp = st.shifted(target, &[(i, h), (j, h)])?;
            let pm = st.shifted(target, &[(i, h), (j, -h)])?;
            let mp = st.shifted(target, &[(i, -h), (j, h)])?;
            let mm = st.shifted(target, &[(i, -h), (j, -h)])?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            hess[i * n + j] = v;
            hess[j * n + i] = v;
        }
    }
    Ok((hess, grad, center))
}

/// `Hess r(X, X)` by finite differences of the shooting distance.
pub fn fd_hessian_r(chart: &FoliatedChart, leaf: &LeafSlice, seed: &[f64], target: &[f64], x: &[f64], h: f64) -> Result<f64> {
    let n = chart.dim_total();
    let (d2, grad, _) = fd_second_derivatives(chart, leaf, seed, target, h)?;
    let geo = PointGeometry::first_order(chart, target)?;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let gk: f64 = (0..n).map(|k| geo.christoffel[(k * n + i) * n + j] * grad[k]).sum();
            s += x[i] * x[j] * (d2[i * n + j] - gk);
        }
    }
    Ok(s)
}

/// `Δr = g^{ij}(∂_i∂_j r − Γ^k_ij ∂_k r)` by finite differences.
pub fn fd_laplacian_r(chart: &FoliatedChart, leaf: &LeafSlice, seed: &[f64], target: &[f64], h: f64) -> Result<f64> {
    let n = chart.dim_total();
    let (d2, grad, _) = fd_second_derivatives(chart, leaf, seed, target, h)?;
    let geo = PointGeometry::first_order(chart, target)?;
    let ginv = nalgebra::DMatrix::from_row_slice(n, n, &geo.metric)
        .try_inverse()
        .ok_or(GeometryError::DegenerateMetric { point: target.to_vec(), min_eigenvalue: 0.0 })?;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let gk: f64 = (0..n).map(|k| geo.christoffel[(k * n + i) * n + j] * grad[k]).sum();
            s += ginv[(i, j)] * (d2[i * n + j] - gk);
        }
    }
    Ok(s)
}

/// Smooth compactly supported test function
/// `A·exp(−1/(1 − s²))`, `s² = (x − c)ᵀ g(c) (x − c) / radius²`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BumpFunction {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: f64,
    /// Profile id; only the exponential cutoff is implemented.
    pub profile: &'static str,
    metric_at_center: Vec<f64>,
}

impl BumpFunction {
    /// Build a bump whose support lies inside the chart domain and misses
    /// the leaf through `seed`.
    pub fn new(
        chart: &FoliatedChart,
        leaf: &LeafSlice,
        seed: &[f64],
        center: &[f64],
        radius: f64,
        amplitude: f64,
    ) -> Result<Self> {
        if !(radius > 0.0 && amplitude != 0.0 && amplitude.is_finite()) {
            return Err(GeometryError::BadParameters("bump needs positive radius and finite nonzero amplitude".into()));
        }
        let g = chart.metric(center)?;
        let bump = BumpFunction { center: center.to_vec(), radius, amplitude, profile: "exp_cutoff", metric_at_center: g };
        let (lo, hi) = bump.bounding_box();
        let dom = chart.domain();
        for i in 0..center.len() {
            let below = if dom.lower_open[i] { lo[i] <= dom.lower[i] } else { lo[i] < dom.lower[i] };
            let above = if dom.upper_open[i] { hi[i] >= dom.upper[i] } else { hi[i] > dom.upper[i] };
            if below || above {
                return Err(GeometryError::BadParameters(format!("bump support leaves the domain along axis {i}")));
            }
        }
        if bump.leaf_clearance(leaf, seed) <= 1.0 {
            return Err(GeometryError::BadParameters("bump support meets the reference leaf".into()));
        }
        Ok(bump)
    }

    /// Smallest `s²` over the leaf through `seed`; above 1 when the support misses it.
    pub fn leaf_clearance(&self, leaf: &LeafSlice, seed: &[f64]) -> f64 {
        let n = self.center.len();
        let g = &self.metric_at_center;
        let free = &leaf.free;
        let fixed: Vec<usize> = (0..n).filter(|k| !free.contains(k)).collect();
        let mut d = vec![0.0; n];
        for &k in &fixed {
            d[k] = seed[k] - self.center[k];
        }
        // minimize dᵀ g d over the free components
        let gff = nalgebra::DMatrix::from_fn(free.len(), free.len(), |a, b| g[free[a] * n + free[b]]);
        let rhs = nalgebra::DVector::from_fn(free.len(), |a, _| -fixed.iter().map(|&k| g[free[a] * n + k] * d[k]).sum::<f64>());
        if let Some(sol) = gff.cholesky().map(|c| c.solve(&rhs)) {
            for (a, &k) in free.iter().enumerate() {
                d[k] = sol[a];
            }
        }
        self.s2(&d)
    }

    fn s2(&self, d: &[f64]) -> f64 {
        let n = d.len();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += d[i] * self.metric_at_center[i * n + j] * d[j];
            }
        }
        q / (self.radius * self.radius)
    }

    /// Coordinate box containing the support.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.center.len();
        let ginv = nalgebra::DMatrix::from_row_slice(n, n, &self.metric_at_center)
            .try_inverse()
            .expect("metric at the center is positive definite");
        let half: Vec<f64> = (0..n).map(|i| self.radius * ginv[(i, i)].sqrt()).collect();
        (
            self.center.iter().zip(&half).map(|(c, h)| c - h).collect(),
            self.center.iter().zip(&half).map(|(c, h)| c + h).collect(),
        )
    }

    /// Value and coordinate differential at `x`.
    pub fn eval(&self, x: &[f64], df: &mut [f64]) -> f64 {
        let n = x.len();
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let q = self.s2(&d);
        if q >= 1.0 {
            df.iter_mut().for_each(|v| *v = 0.0);
            return 0.0;
        }
        let f = self.amplitude * (-1.0 / (1.0 - q)).exp();
        let dfdq = -f / ((1.0 - q) * (1.0 - q));
        let r2 = self.radius * self.radius;
        for i in 0..n {
            let gd: f64 = (0..n).map(|j| self.metric_at_center[i * n + j] * d[j]).sum();
            df[i] = dfdq * 2.0 * gd / r2;
        }
        f
    }
}

/// In-place Cholesky of a small SPD matrix (lower factor).
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// `|L^{-1} b|²` for the Cholesky factor `L`, i.e. `bᵀ A^{-1} b`.
fn inverse_quadratic(l: &[f64], n: usize, b: &[f64], work: &mut [f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * work[k];
        }
        work[i] = v / l[i * n + i];
        s += work[i] * work[i];
    }
    s
}

/// Pointwise quantities on the quadrature grid.
struct GridPoint<'a> {
    x: &'a [f64],
    weight: f64,
    f: f64,
    df: &'a [f64],
    /// `|∇f|²` and `|∇_V f|²`.
    grad_sq: f64,
    vert_sq: f64,
}

/// Visit every tensor-product node inside the support of `bump`.
fn for_each_node(chart: &FoliatedChart, bump: &BumpFunction, nodes: usize, mut visit: impl FnMut(GridPoint<'_>) -> Result<()>) -> Result<()> {
    let n = chart.dim_total();
    let m = chart.dim_vertical();
    let (x1d, w1d) = gauss_legendre(nodes);
    let (lo, hi) = bump.bounding_box();
    let half: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).collect();
    let jac: f64 = half.iter().product();
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    let mut df = vec![0.0; n];
    let mut gl = vec![0.0; n * n];
    let mut zg = vec![0.0; m * m];
    let mut zdf = vec![0.0; m];
    let mut work = vec![0.0; n.max(m)];
    loop {
        let mut w = jac;
        for k in 0..n {
            x[k] = bump.center[k] + half[k] * x1d[idx[k]];
            w *= w1d[idx[k]];
        }
        let f = bump.eval(&x, &mut df);
        if f != 0.0 {
            let (g, z) = chart.eval::<f64>(&x);
            gl.copy_from_slice(&g);
            if !cholesky(&mut gl, n) {
                return Err(GeometryError::DegenerateMetric { point: x.clone(), min_eigenvalue: 0.0 });
            }
            let det: f64 = (0..n).map(|i| gl[i * n + i]).product();
            let grad_sq = inverse_quadratic(&gl, n, &df, &mut work);
            // |∇_V f|² = (Z df)ᵀ (Z g Zᵀ)^{-1} (Z df)
            for a in 0..m {
                zdf[a] = (0..n).map(|i| z[a * n + i] * df[i]).sum();
                for b in 0..m {
                    let mut s = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            s += z[a * n + i] * g[i * n + j] * z[b * n + j];
                        }
                    }
                    zg[a * m + b] = s;
                }
            }
            let vert_sq = if m > 0 {
                if !cholesky(&mut zg, m) {
                    return Err(GeometryError::SingularVerticalFrame { point: x.clone() });
                }
                inverse_quadratic(&zg, m, &zdf, &mut work)
            } else {
                0.0
            };
            visit(GridPoint { x: &x, weight: w * det, f, df: &df, grad_sq, vert_sq })?;
        }
        let mut k = 0;
        loop {
            if k == n {
                return Ok(());
            }
            idx[k] += 1;
            if idx[k] < nodes {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RayleighQuotient {
    /// `∫|∇f|² / ∫f²`.
    pub full: f64,
    /// `∫|∇_H f|² / ∫f²`.
    pub horizontal: f64,
    pub mass: f64,
    pub nodes: usize,
    /// Largest relative change of either quotient against half the nodes.
    pub refinement_change: f64,
}

/// Refinement change above which a quotient is rejected.
pub const REFINEMENT_TOLERANCE: f64 = 1e-3;

fn quotients(chart: &FoliatedChart, bump: &BumpFunction, nodes: usize) -> Result<(f64, f64, f64)> {
    let (mut mass, mut full, mut hor) = (0.0, 0.0, 0.0);
    for_each_node(chart, bump, nodes, |p| {
        mass += p.weight * p.f * p.f;
        full += p.weight * p.grad_sq;
        hor += p.weight * (p.grad_sq - p.vert_sq).max(0.0);
        Ok(())
    })?;
    if !(mass > 0.0) {
        return Err(GeometryError::QuadratureUnderresolved { relative_change: f64::INFINITY });
    }
    Ok((full / mass, hor / mass, mass))
}

/// Full and horizontal Rayleigh quotients of `bump` with `nodes` Gauss–Legendre
/// nodes per axis, checked against `nodes / 2`.
pub fn rayleigh_quotient(chart: &FoliatedChart, bump: &BumpFunction, nodes: usize) -> Result<RayleighQuotient> {
    let (full, horizontal, mass) = quotients(chart, bump, nodes)?;
    let (cf, ch, _) = quotients(chart, bump, (nodes / 2).max(1))?;
    let rel = |a: f64, b: f64| if a == 0.0 && b == 0.0 { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
    // quotients near zero are compared absolutely
    let rel_h = if horizontal.abs().max(ch.abs()) < 1e-8 * full { 0.0 } else { rel(horizontal, ch) };
    let change = rel(full, cf).max(rel_h);
    if change > REFINEMENT_TOLERANCE {
        return Err(GeometryError::QuadratureUnderresolved { relative_change: change });
    }
    Ok(RayleighQuotient { full, horizontal, mass, nodes, refinement_change: change })
}

/// Random bumps off the leaf: centers from the chart's sample box, radius
/// uniform in `radius_range`; draws that violate the support conditions
/// are redrawn.
pub fn random_bumps(
    chart: &FoliatedChart,
    leaf: &LeafSlice,
    seed: &[f64],
    count: usize,
    radius_range: (f64, f64),
    rng_seed: u64,
) -> Result<Vec<BumpFunction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err(GeometryError::BadParameters("could not place bumps inside the sample box".into()));
        }
        let c = chart.sample_box().sample(&mut rng);
        let radius = rng.gen_range(radius_range.0..=radius_range.1);
        let amplitude = rng.gen_range(0.5..2.0);
        if let Ok(b) = BumpFunction::new(chart, leaf, seed, &c, radius, amplitude) {
            out.push(b);
        }
    }
    Ok(out)
}

/// Numerical replay of the integration-by-parts argument behind the
/// Poincaré inequality.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProofReplication {
    pub nodes: usize,
    pub mass: f64,
    /// `(n−1)√K ∫f²`.
    pub lower: f64,
    /// `∫ f² Δ_H r`.
    pub weighted_laplacian: f64,
    /// `−∫⟨∇_H f², ∇_H r⟩`.
    pub by_parts: f64,
    /// `∫|∇_H f²|`.
    pub gradient_l1: f64,
    /// `2 (∫f²)^{1/2} (∫|∇_H f|²)^{1/2}`.
    pub cauchy_schwarz: f64,
    /// `|weighted_laplacian − by_parts|` relative to their size.
    pub by_parts_residual: f64,
    /// Whether `lower ≤ weighted_laplacian`, `by_parts ≤ gradient_l1 ≤ cauchy_schwarz`.
    pub chain_holds: bool,
}

/// Replay the chain of the Poincaré argument for one bump. `r`, `Δ_H r` and
/// `∇r` are cached by the fixed (non-leaf) coordinates of each node, which
/// assumes the leaf coordinates act by isometric translations.
pub fn replicate_poincare_proof(
    chart: &FoliatedChart,
    leaf: &LeafSlice,
    seed: &[f64],
    bump: &BumpFunction,
    k: f64,
    nodes: usize,
) -> Result<ProofReplication> {
    let n = chart.dim_total();
    let nh = chart.dim_horizontal();
    let fixed: Vec<usize> = (0..n).filter(|i| !leaf.free.contains(i)).collect();
    let mut cache: HashMap<Vec<u64>, (f64, Vec<f64>)> = HashMap::new();
    let (mut mass, mut weighted, mut by_parts, mut l1, mut hor) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut warm: Option<InitialGuess> = None;
    for_each_node(chart, bump, nodes, |p| {
        let key: Vec<u64> = fixed.iter().map(|&i| p.x[i].to_bits()).collect();
        if !cache.contains_key(&key) {
            let opts = ShootingOptions::default();
            let shot = match &warm {
                Some(g) => invert_normal_exp(chart, leaf, seed, p.x, Some(g.clone()), opts),
                None => invert_normal_exp(chart, leaf, seed, p.x, None, opts),
            }?;
            warm = Some(warm_guess(chart, leaf, &shot)?);
            let hess = hessian_from_shooting(chart, shot, DEFAULT_STEP)?;
            cache.insert(key.clone(), (hess.trace(), hess.gradient.clone()));
        }
        let (lap_h, grad_r) = &cache[&key];
        let fr: f64 = p.df.iter().zip(grad_r).map(|(a, b)| a * b).sum();
        let hsq = (p.grad_sq - p.vert_sq).max(0.0);
        mass += p.weight * p.f * p.f;
        weighted += p.weight * p.f * p.f * lap_h;
        by_parts -= p.weight * 2.0 * p.f * fr;
        l1 += p.weight * 2.0 * p.f.abs() * hsq.sqrt();
        hor += p.weight * hsq;
        Ok(())
    })?;
    let lower = (nh as f64 - 1.0) * k.sqrt() * mass;
    let cauchy_schwarz = 2.0 * mass.sqrt() * hor.sqrt();
    let by_parts_residual = (weighted - by_parts).abs() / weighted.abs().max(by_parts.abs()).max(f64::MIN_POSITIVE);
    let slack = 1e-9 * cauchy_schwarz.abs().max(1e-300);
    let chain_holds = lower <= weighted + slack && by_parts <= l1 + slack && l1 <= cauchy_schwarz + slack;
    Ok(ProofReplication {
        nodes,
        mass,
        lower,
        weighted_laplacian: weighted,
        by_parts,
        gradient_l1: l1,
        cauchy_schwarz,
        by_parts_residual,
        chain_holds,
    })
}

/// `(n − m − 1)² K / 4` for total dimension `n` and leaf dimension `m`.
pub fn mckean_bound(d_total: usize, d_vertical: usize, k: f64) -> Result<f64> {
    if d_total <= d_vertical + 1 {
        return Err(GeometryError::BadDimensions(format!(
            "need a transverse dimension of at least 2, got total {d_total} and vertical {d_vertical}"
        )));
    }
    if !(k >= 0.0 && k.is_finite()) {
        return Err(GeometryError::BadParameters(format!("curvature bound must be nonnegative, got {k}")));
    }
    let t = (d_total - d_vertical - 1) as f64;
    Ok(t * t * k / 4.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumResult {
    pub model: String,
    pub d_h: usize,
    pub k: f64,
    pub radius: f64,
    pub grid: usize,
    pub lambda: f64,
    pub bound: f64,
    pub gap: f64,
}

/// Tolerance of the Sturm bisection.
pub const EIGEN_TOLERANCE: f64 = 1e-10;

/// `ln` of the radial volume weight `sinh^{d−1}(√K r)` (or `r^{d−1}`).
fn log_weight(d_h: usize, k: f64, r: f64) -> f64 {
    let p = d_h as f64 - 1.0;
    if p == 0.0 {
        return 0.0;
    }
    if k == 0.0 {
        p * r.ln()
    } else {
        let x = k.sqrt() * r;
        // ln sinh x without overflow
        p * (x + (-(-2.0 * x).exp_m1()).ln() - std::f64::consts::LN_2)
    }
}

/// Smallest Dirichlet eigenvalue on the geodesic ball of radius `radius` in
/// the model of dimension `d_h` and curvature `−k`, restricted to radial
/// functions.
pub fn radial_dirichlet_eigenvalue(d_h: usize, k: f64, radius: f64, grid: usize) -> Result<SpectrumResult> {
    if !(radius > 0.0 && radius.is_finite()) || grid < 100 {
        return Err(GeometryError::BadParameters(format!("need radius > 0 and grid ≥ 100, got {radius} and {grid}")));
    }
    if d_h < 1 || !(k >= 0.0 && k.is_finite()) {
        return Err(GeometryError::BadParameters(format!("need d_h ≥ 1 and k ≥ 0, got {d_h} and {k}")));
    }
    let h = radius / (grid as f64 + 0.5);
    let lw = |x: f64| if x == 0.0 { f64::NEG_INFINITY } else { log_weight(d_h, k, x) };
    let node = |i: usize| (i as f64 + 0.5) * h;
    let lw_node: Vec<f64> = (0..grid).map(|i| lw(node(i))).collect();
    let lw_face: Vec<f64> = (0..=grid).map(|i| lw(i as f64 * h)).collect();
    let h2 = h * h;
    let mut diag = vec![0.0; grid];
    let mut off = vec![0.0; grid.saturating_sub(1)];
    for i in 0..grid {
        let lo = if d_h == 1 && i == 0 { 0.0 } else { (lw_face[i] - lw_node[i]).exp() };
        let hi = (lw_face[i + 1] - lw_node[i]).exp();
        diag[i] = (lo + hi) / h2;
        if i + 1 < grid {
            off[i] = -(lw_face[i + 1] - 0.5 * (lw_node[i] + lw_node[i + 1])).exp() / h2;
        }
    }
    if diag.iter().chain(&off).any(|v| !v.is_finite()) {
        return Err(GeometryError::EigensolveFailure("non-finite matrix entries".into()));
    }
    let lambda = smallest_eigenvalue(&diag, &off)?;
    let bound = (d_h as f64 - 1.0).powi(2) * k / 4.0;
    Ok(SpectrumResult { model: "radial".into(), d_h, k, radius, grid, lambda, bound, gap: lambda - bound })
}

/// Number of eigenvalues below `x` of the symmetric tridiagonal matrix.
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..diag.len() {
        let b2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        q = diag[i] - x - if i == 0 { 0.0 } else { b2 / q };
        if q == 0.0 {
            q = -f64::EPSILON * (diag[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn smallest_eigenvalue(diag: &[f64], off: &[f64]) -> Result<f64> {
    let n = diag.len();
    let radius = |i: usize| {
        let a = if i > 0 { off[i - 1].abs() } else { 0.0 };
        let b = if i + 1 < n { off[i].abs() } else { 0.0 };
        a + b
    };
    let mut lo = (0..n).map(|i| diag[i] - radius(i)).fold(f64::INFINITY, f64::min);
    let mut hi = (0..n).map(|i| diag[i] + radius(i)).fold(f64::NEG_INFINITY, f64::max);
    let pad = 1e-9 * (lo.abs() + hi.abs()) + f64::MIN_POSITIVE;
    lo -= pad;
    hi += pad;
    if sturm_count(diag, off, lo) != 0 || sturm_count(diag, off, hi) == 0 {
        return Err(GeometryError::EigensolveFailure("Gershgorin bracket does not isolate the spectrum".into()));
    }
    for _ in 0..400 {
        if hi - lo <= EIGEN_TOLERANCE * lo.abs().max(1.0) {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        if sturm_count(diag, off, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(GeometryError::EigensolveFailure("bisection did not converge".into()))
}

/// Least-squares slope of `ln(λ(R) − bound)` against `ln R`, negated.
pub fn decay_exponent(results: &[SpectrumResult]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = results.iter().filter(|r| r.gap > 0.0).map(|r| (r.radius.ln(), r.gap.ln())).collect();
    if pts.len() < 2 {
        return Err(GeometryError::BadParameters("need two radii with a positive gap".into()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(-sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::build_default;

    /// First zero of the Bessel function J_0, by Newton on its series.
    fn bessel_j0_zero() -> f64 {
        let j0 = |x: f64| {
            let mut term = 1.0;
            let mut s = 1.0;
            for k in 1..60 {
                term *= -(x * x) / (4.0 * (k * k) as f64);
                s += term;
            }
            s
        };
        let mut x = 2.4;
        for _ in 0..50 {
            let d = (j0(x + 1e-6) - j0(x - 1e-6)) / 2e-6;
            x -= j0(x) / d;
        }
        x
    }

    #[test]
    fn disk_eigenvalue_is_bessel_zero_squared() {
        let z = bessel_j0_zero();
        assert!((z - 2.404825557695773).abs() < 1e-9);
        let res = radial_dirichlet_eigenvalue(2, 0.0, 1.0, 4000).unwrap();
        assert!((res.lambda - z * z).abs() < 1e-4, "{}", res.lambda);
    }

    #[test]
    fn interval_eigenvalue_in_one_dimension() {
        // d = 1: −u'' on (0, R) with a natural condition at 0 gives (π/2R)².
        let res = radial_dirichlet_eigenvalue(1, 0.0, 2.0, 2000).unwrap();
        let want = (std::f64::consts::PI / 4.0).powi(2);
        assert!((res.lambda - want).abs() < 1e-5, "{}", res.lambda);
    }

    #[test]
    fn three_dimensional_hyperbolic_ball_is_exact() {
        // d = 3, K = 1: u = sin(πr/R)/sinh r, λ = 1 + π²/R².
        let r = 5.0;
        let res = radial_dirichlet_eigenvalue(3, 1.0, r, 4000).unwrap();
        let want = 1.0 + (std::f64::consts::PI / r).powi(2);
        assert!((res.lambda - want).abs() < 1e-5, "{} vs {want}", res.lambda);
    }

    /// First radial Dirichlet eigenvalue of the hyperbolic disk by shooting
    /// `u'' + coth(r) u' + λu = 0` from the regular series at the origin.
    fn shooting_oracle(radius: f64) -> f64 {
        let end_value = |lambda: f64| {
            let r0 = 1e-4;
            let mut y = [1.0 - lambda * r0 * r0 / 4.0, -lambda * r0 / 2.0];
            let steps = 40_000;
            let h = (radius - r0) / steps as f64;
            let f = |r: f64, y: [f64; 2]| [y[1], -y[1] / r.tanh() - lambda * y[0]];
            let mut r = r0;
            for _ in 0..steps {
                let k1 = f(r, y);
                let k2 = f(r + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
                let k3 = f(r + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
                let k4 = f(r + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
                for i in 0..2 {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                r += h;
            }
            y[0]
        };
        let (mut lo, mut hi) = (0.25, 0.25 + 30.0 / (radius * radius));
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if end_value(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn hyperbolic_disk_radius_twenty_matches_shooting() {
        let oracle = shooting_oracle(20.0);
        assert!((oracle - 0.271_679).abs() < 2e-6, "{oracle}");
        let res = radial_dirichlet_eigenvalue(2, 1.0, 20.0, 4000).unwrap();
        assert!((res.lambda - oracle).abs() < 1e-5, "{} vs {oracle}", res.lambda);
        // well below the naive 1/4 + π²/R²
        assert!(0.25 + (std::f64::consts::PI / 20.0).powi(2) - res.lambda > 2.5e-3);
    }

    #[test]
    fn mckean_bound_values() {
        assert_eq!(mckean_bound(3, 1, 1.0).unwrap(), 0.25);
        assert_eq!(mckean_bound(5, 2, 0.0).unwrap(), 0.0);
        assert_eq!(mckean_bound(4, 1, 2.0).unwrap(), 2.0);
        assert!(matches!(mckean_bound(2, 1, 1.0), Err(GeometryError::BadDimensions(_))));
    }

    #[test]
    fn sturm_count_on_diagonal() {
        assert_eq!(sturm_count(&[1.0, 2.0, 3.0], &[0.0, 0.0], 2.5), 2);
        let l = smallest_eigenvalue(&[2.0, 2.0], &[-1.0]).unwrap();
        assert!((l - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bump_scale_invariance_of_quotients() {
        let spec = build_default("hyperbolic_product").unwrap();
        let c = [0.5, 2.0, 0.0];
        let b1 = BumpFunction::new(&spec.chart, &spec.leaf, &spec.seed_point, &c, 0.5, 1.0).unwrap();
        let b2 = BumpFunction::new(&spec.chart, &spec.leaf, &spec.seed_point, &c, 0.5, 7.5).unwrap();
        let q1 = rayleigh_quotient(&spec.chart, &b1, 64).unwrap();
        let q2 = rayleigh_quotient(&spec.chart, &b2, 64).unwrap();
        assert!((q1.full - q2.full).abs() < 1e-10 * q1.full);
        assert!((q1.horizontal - q2.horizontal).abs() < 1e-10 * q1.full);
        assert!(q1.horizontal <= q1.full);
    }

    #[test]
    fn bump_touching_leaf_is_rejected() {
        let spec = build_default("hyperbolic_product").unwrap();
        let err = BumpFunction::new(&spec.chart, &spec.leaf, &spec.seed_point, &[0.1, 1.0, 0.0], 0.5, 1.0);
        assert!(matches!(err, Err(GeometryError::BadParameters(_))));
    }

    #[test]
    fn euclidean_laplacian_is_radial() {
        let spec = build_default("euclidean_product").unwrap();
        let target = [0.6, 0.8, 0.3];
        let lap = laplacian_r(&spec.chart, &spec.leaf, &spec.seed_point, &target).unwrap();
        assert!((lap.r - 1.0).abs() < 1e-9);
        assert!((lap.delta_h_r - 1.0).abs() < 1e-7);
        assert!(lap.mean_curvature_term.abs() < 1e-12);
    }

    #[test]
    fn horosphere_laplacian_sees_mean_curvature() {
        let spec = build_default("horosphere_h3").unwrap();
        let target = [0.2, -0.1, 1.0f64.exp()];
        let lap = laplacian_r(&spec.chart, &spec.leaf, &spec.seed_point, &target).unwrap();
        assert!((lap.r - 1.0).abs() < 1e-8);
        assert!(lap.delta_h_r.abs() < 1e-9);
        // Δ ln z = −2 in the upper half-space model of H³
        assert!((lap.delta_r + 2.0).abs() < 1e-7, "{lap:?}");
    }
}
