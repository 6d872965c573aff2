//! Foliated coordinate charts: metric and vertical-frame oracles, adapted
//! frames, projections onto the horizontal/vertical split, volume density.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{GeometryError, Result};
use crate::jet::{Dual, Real, D1, D2};

/// Metric and vertical frame written once for every scalar type.
///
/// `g` receives the `N×N` metric row-major, `z` receives the `m` vertical
/// fields as rows of length `N`.
pub trait Fields: Send + Sync {
    fn eval<T: Real>(&self, x: &[T], g: &mut [T], z: &mut [T]);
}

/// Metric and vertical frame available only at plain `f64` points. Charts
/// built from these always differentiate by finite differences.
pub trait PlainFields: Send + Sync {
    fn eval(&self, x: &[f64], g: &mut [f64], z: &mut [f64]);
}

pub(crate) trait DynFields: Send + Sync {
    fn eval_f64(&self, x: &[f64], g: &mut [f64], z: &mut [f64]);
    fn eval_d1(&self, x: &[D1], g: &mut [D1], z: &mut [D1]);
    fn eval_d2(&self, x: &[D2], g: &mut [D2], z: &mut [D2]);
}

struct Analytic<F>(F);

impl<F: Fields> DynFields for Analytic<F> {
    fn eval_f64(&self, x: &[f64], g: &mut [f64], z: &mut [f64]) {
        self.0.eval(x, g, z)
    }
    fn eval_d1(&self, x: &[D1], g: &mut [D1], z: &mut [D1]) {
        self.0.eval(x, g, z)
    }
    fn eval_d2(&self, x: &[D2], g: &mut [D2], z: &mut [D2]) {
        self.0.eval(x, g, z)
    }
}

/// Scalar types the chart can evaluate its oracles at.
pub(crate) trait Jet: Real {
    fn eval_dyn(f: &dyn DynFields, x: &[Self], g: &mut [Self], z: &mut [Self]);
}

impl Jet for f64 {
    fn eval_dyn(f: &dyn DynFields, x: &[Self], g: &mut [Self], z: &mut [Self]) {
        f.eval_f64(x, g, z)
    }
}

impl Jet for D1 {
    fn eval_dyn(f: &dyn DynFields, x: &[Self], g: &mut [Self], z: &mut [Self]) {
        f.eval_d1(x, g, z)
    }
}

impl Jet for D2 {
    fn eval_dyn(f: &dyn DynFields, x: &[Self], g: &mut [Self], z: &mut [Self]) {
        f.eval_d2(x, g, z)
    }
}

#[derive(Clone)]
enum Source {
    Analytic(Arc<dyn DynFields>),
    Plain(Arc<dyn PlainFields>),
}

/// How derivatives of the oracles are obtained.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum DerivativeMode {
    /// Exact, by nested dual numbers.
    Analytic,
    /// Centered differences. Second partials use `max(step, 1e-4)`.
    FiniteDifference { step: f64 },
}

impl Default for DerivativeMode {
    fn default() -> Self {
        DerivativeMode::Analytic
    }
}

/// Axis-aligned coordinate box; each face may be open or closed, and may sit
/// at infinity.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower_open: Vec<bool>,
    pub upper_open: Vec<bool>,
}

impl Domain {
    /// All of `R^dim`.
    pub fn whole(dim: usize) -> Self {
        Domain {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            lower_open: vec![true; dim],
            upper_open: vec![true; dim],
        }
    }

    /// Restrict one axis to an open interval.
    pub fn with_open_axis(mut self, axis: usize, lo: f64, hi: f64) -> Self {
        self.lower[axis] = lo;
        self.upper[axis] = hi;
        self.lower_open[axis] = true;
        self.upper_open[axis] = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter().enumerate().all(|(k, &x)| {
                let lo_ok = if self.lower_open[k] { x > self.lower[k] } else { x >= self.lower[k] };
                let hi_ok = if self.upper_open[k] { x < self.upper[k] } else { x <= self.upper[k] };
                x.is_finite() && lo_ok && hi_ok
            })
    }
}

/// Finite box random samples are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SampleBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        SampleBox { lower, upper }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&a, &b)| if a == b { a } else { rng.gen_range(a..b) })
            .collect()
    }
}

/// A coordinate chart carrying a metric, a frame of the vertical
/// distribution, and the means to differentiate both.
#[derive(Clone)]
pub struct FoliatedChart {
    name: String,
    dim_h: usize,
    dim_v: usize,
    domain: Domain,
    sample_box: SampleBox,
    source: Source,
    mode: DerivativeMode,
}

impl fmt::Debug for FoliatedChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FoliatedChart")
            .field("name", &self.name)
            .field("dim_horizontal", &self.dim_h)
            .field("dim_vertical", &self.dim_v)
            .field("mode", &self.mode)
            .finish()
    }
}

fn check_dims(dim_h: usize, dim_v: usize, domain: &Domain, sample_box: &SampleBox) -> Result<()> {
    if dim_h == 0 || dim_v == 0 {
        return Err(GeometryError::BadDimensions(format!(
            "horizontal ({dim_h}) and vertical ({dim_v}) dimensions must both be at least 1"
        )));
    }
    let n = dim_h + dim_v;
    if domain.dim() != n || sample_box.lower.len() != n || sample_box.upper.len() != n {
        return Err(GeometryError::BadDimensions(format!(
            "domain and sample box must have dimension {n}"
        )));
    }
    Ok(())
}

impl FoliatedChart {
    /// Chart with oracles generic over the scalar type, differentiated exactly.
    pub fn new<F: Fields + 'static>(
        name: impl Into<String>,
        dim_h: usize,
        dim_v: usize,
        domain: Domain,
        sample_box: SampleBox,
        fields: F,
    ) -> Result<Self> {
        check_dims(dim_h, dim_v, &domain, &sample_box)?;
        Ok(FoliatedChart {
            name: name.into(),
            dim_h,
            dim_v,
            domain,
            sample_box,
            source: Source::Analytic(Arc::new(Analytic(fields))),
            mode: DerivativeMode::Analytic,
        })
    }

    /// Chart with `f64`-only oracles, differentiated by centered differences.
    pub fn from_plain<F: PlainFields + 'static>(
        name: impl Into<String>,
        dim_h: usize,
        dim_v: usize,
        domain: Domain,
        sample_box: SampleBox,
        fields: F,
        step: f64,
    ) -> Result<Self> {
        check_dims(dim_h, dim_v, &domain, &sample_box)?;
        if !(step > 0.0) {
            return Err(GeometryError::BadParameters(format!("difference step {step} must be positive")));
        }
        Ok(FoliatedChart {
            name: name.into(),
            dim_h,
            dim_v,
            domain,
            sample_box,
            source: Source::Plain(Arc::new(fields)),
            mode: DerivativeMode::FiniteDifference { step },
        })
    }

    /// Switch derivative mode. Plain charts stay on finite differences.
    pub fn with_derivative_mode(mut self, mode: DerivativeMode) -> Self {
        self.mode = match (&self.source, mode) {
            (Source::Plain(_), DerivativeMode::Analytic) => self.mode,
            _ => mode,
        };
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim_total(&self) -> usize {
        self.dim_h + self.dim_v
    }
    pub fn dim_horizontal(&self) -> usize {
        self.dim_h
    }
    pub fn dim_vertical(&self) -> usize {
        self.dim_v
    }
    pub fn domain(&self) -> &Domain {
        &self.domain
    }
    pub fn sample_box(&self) -> &SampleBox {
        &self.sample_box
    }
    pub fn derivative_mode(&self) -> DerivativeMode {
        self.mode
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.domain.contains(p)
    }

    pub(crate) fn require_inside(&self, p: &[f64]) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(GeometryError::OutsideDomain { point: p.to_vec() })
        }
    }

    fn eval_plain(&self, x: &[f64], g: &mut [f64], z: &mut [f64]) {
        match &self.source {
            Source::Analytic(f) => f.eval_f64(x, g, z),
            Source::Plain(f) => f.eval(x, g, z),
        }
    }

    /// Metric and vertical fields at a point of any supported jet type.
    pub(crate) fn eval<T: Jet>(&self, x: &[T]) -> (Vec<T>, Vec<T>) {
        let n = self.dim_total();
        let mut g = vec![T::zero(); n * n];
        let mut z = vec![T::zero(); self.dim_v * n];
        match (&self.source, self.mode) {
            (Source::Analytic(f), DerivativeMode::Analytic) => T::eval_dyn(f.as_ref(), x, &mut g, &mut z),
            (_, DerivativeMode::FiniteDifference { step }) => self.eval_taylor(x, step, &mut g, &mut z),
            (Source::Plain(_), DerivativeMode::Analytic) => unreachable!("plain charts never run analytically"),
        }
        (g, z)
    }

    // Second-order Taylor polynomial built from centered differences at the
    // real part of `x`. Exact for the jet orders the crate ever asks for.
    fn eval_taylor<T: Real>(&self, x: &[T], step: f64, g: &mut [T], z: &mut [T]) {
        let n = self.dim_total();
        let len = n * n + self.dim_v * n;
        let base: Vec<f64> = x.iter().map(|v| v.value()).collect();
        let sample = |offsets: &[(usize, f64)]| -> Vec<f64> {
            let mut p = base.clone();
            for &(k, d) in offsets {
                p[k] += d;
            }
            let mut gg = vec![0.0; n * n];
            let mut zz = vec![0.0; self.dim_v * n];
            self.eval_plain(&p, &mut gg, &mut zz);
            gg.extend(zz);
            gg
        };
        let f0 = sample(&[]);
        let h = step;
        let h2 = step.max(1e-4);
        let mut first = vec![vec![0.0; len]; n];
        let mut second = vec![vec![vec![0.0; len]; n]; n];
        for k in 0..n {
            let (p, m) = (sample(&[(k, h)]), sample(&[(k, -h)]));
            let (p2, m2) = if h2 == h { (p.clone(), m.clone()) } else { (sample(&[(k, h2)]), sample(&[(k, -h2)])) };
            for i in 0..len {
                first[k][i] = (p[i] - m[i]) / (2.0 * h);
                second[k][k][i] = (p2[i] - 2.0 * f0[i] + m2[i]) / (h2 * h2);
            }
            for l in 0..k {
                let pp = sample(&[(k, h2), (l, h2)]);
                let pm = sample(&[(k, h2), (l, -h2)]);
                let mp = sample(&[(k, -h2), (l, h2)]);
                let mm = sample(&[(k, -h2), (l, -h2)]);
                for i in 0..len {
                    let v = (pp[i] - pm[i] - mp[i] + mm[i]) / (4.0 * h2 * h2);
                    second[k][l][i] = v;
                    second[l][k][i] = v;
                }
            }
        }
        let delta: Vec<T> = x.iter().zip(&base).map(|(&xv, &b)| xv - T::cst(b)).collect();
        for i in 0..len {
            let mut v = T::cst(f0[i]);
            for k in 0..n {
                v += delta[k].scale(first[k][i]);
                for l in 0..n {
                    v += (delta[k] * delta[l]).scale(0.5 * second[k][l][i]);
                }
            }
            if i < n * n {
                g[i] = v;
            } else {
                z[i - n * n] = v;
            }
        }
    }

    /// Metric matrix (row-major) at `p`, checked to be positive definite.
    pub fn metric(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.require_inside(p)?;
        let (g, _) = self.eval::<f64>(p);
        check_positive_definite(&g, self.dim_total(), p)?;
        Ok(g)
    }

    /// The oracle's vertical fields `Z_1..Z_m` at `p`, as coordinate vectors.
    pub fn vertical_fields(&self, p: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.require_inside(p)?;
        let n = self.dim_total();
        let (_, z) = self.eval::<f64>(p);
        Ok(z.chunks(n).map(|c| c.to_vec()).collect())
    }

    /// Metric, vertical fields and their first coordinate partials.
    pub fn first_jet(&self, p: &[f64]) -> Result<FieldJet> {
        self.require_inside(p)?;
        let n = self.dim_total();
        let m = self.dim_v;
        let mut jet = FieldJet {
            dim: n,
            g: vec![0.0; n * n],
            dg: vec![0.0; n * n * n],
            z: vec![0.0; m * n],
            dz: vec![0.0; n * m * n],
        };
        for k in 0..n {
            let x: Vec<D1> = p
                .iter()
                .enumerate()
                .map(|(i, &v)| Dual::new(v, if i == k { 1.0 } else { 0.0 }))
                .collect();
            let (g, z) = self.eval::<D1>(&x);
            for i in 0..n * n {
                jet.g[i] = g[i].re;
                jet.dg[k * n * n + i] = g[i].eps;
            }
            for i in 0..m * n {
                jet.z[i] = z[i].re;
                jet.dz[k * m * n + i] = z[i].eps;
            }
        }
        check_positive_definite(&jet.g, n, p)?;
        Ok(jet)
    }
}

/// Metric and vertical fields with first partials at one point.
/// `dg[(k*N + i)*N + j] = ∂_k g_ij`, `dz[(k*m + a)*N + i] = ∂_k Z_a^i`.
#[derive(Clone, Debug)]
pub struct FieldJet {
    pub dim: usize,
    pub g: Vec<f64>,
    pub dg: Vec<f64>,
    pub z: Vec<f64>,
    pub dz: Vec<f64>,
}

pub(crate) fn check_positive_definite(g: &[f64], n: usize, p: &[f64]) -> Result<()> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::DegenerateMetric { point: p.to_vec(), min_eigenvalue: f64::NAN });
    }
    // Jacobi-scaled to unit diagonal so that metrics like dx²/y² stay
    // acceptable at any height
    let diag: Vec<f64> = (0..n).map(|i| g[i * n + i]).collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| {
        if diag[i] > 0.0 && diag[j] > 0.0 {
            g[i * n + j] / (diag[i] * diag[j]).sqrt()
        } else {
            g[i * n + j]
        }
    });
    if diag.iter().all(|&d| d > 0.0) {
        if let Some(ch) = scaled.clone().cholesky() {
            let l = ch.l();
            if (0..n).all(|i| l[(i, i)] * l[(i, i)] > 1e-12) {
                return Ok(());
            }
        }
    }
    let min = SymmetricEigen::new(scaled).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    Err(GeometryError::DegenerateMetric { point: p.to_vec(), min_eigenvalue: min })
}

pub(crate) fn inner<T: Real>(g: &[T], u: &[T], v: &[T]) -> T {
    let n = u.len();
    let mut s = T::zero();
    for i in 0..n {
        let mut row = T::zero();
        for j in 0..n {
            row += g[i * n + j] * v[j];
        }
        s += u[i] * row;
    }
    s
}

/// Orthonormal adapted frame, rows `e_A` in coordinates: horizontal first.
///
/// The vertical fields are orthonormalized first; then coordinate basis
/// vectors are projected onto the horizontal space and orthonormalized in
/// order, skipping those whose projection is short relative to their length.
pub(crate) fn gram_schmidt<T: Real>(g: &[T], z: &[T], n_h: usize, m: usize, point: &[f64]) -> Result<Vec<T>> {
    let n = n_h + m;
    let mut e = vec![T::zero(); n * n];
    let degenerate = |v: f64| GeometryError::DegenerateMetric { point: point.to_vec(), min_eigenvalue: v };
    for a in 0..m {
        let mut v: Vec<T> = z[a * n..(a + 1) * n].to_vec();
        let len0 = inner(g, &v, &v).value();
        if !(len0 > 0.0) {
            return Err(degenerate(len0));
        }
        for b in 0..a {
            let eb = &e[(n_h + b) * n..(n_h + b + 1) * n];
            let c = inner(g, &v, eb);
            for i in 0..n {
                v[i] -= c * eb[i];
            }
        }
        let len = inner(g, &v, &v);
        if !(len.value() > 1e-12 * len0) {
            return Err(GeometryError::SingularVerticalFrame { point: point.to_vec() });
        }
        let inv = len.sqrt().recip();
        for i in 0..n {
            e[(n_h + a) * n + i] = v[i] * inv;
        }
    }
    let mut count = 0;
    for k in 0..n {
        if count == n_h {
            break;
        }
        let mut v = vec![T::zero(); n];
        v[k] = T::one();
        let len0 = g[k * n + k].value();
        if !(len0 > 0.0) {
            return Err(degenerate(len0));
        }
        let previous = (0..count).chain(n_h..n);
        for b in previous {
            let eb = &e[b * n..(b + 1) * n];
            let c = inner(g, &v, eb);
            for i in 0..n {
                v[i] -= c * eb[i];
            }
        }
        let len = inner(g, &v, &v);
        if !(len.value() > 1e-16 * len0) {
            continue;
        }
        let inv = len.sqrt().recip();
        for i in 0..n {
            e[count * n + i] = v[i] * inv;
        }
        count += 1;
    }
    if count < n_h {
        return Err(degenerate(0.0));
    }
    Ok(e)
}

/// A tangent vector with its horizontal and vertical parts.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitVector {
    pub point: Vec<f64>,
    pub components: Vec<f64>,
    pub h_part: Vec<f64>,
    pub v_part: Vec<f64>,
}

impl SplitVector {
    pub fn is_horizontal(&self, chart: &FoliatedChart, tol: f64) -> Result<bool> {
        let g = chart.metric(&self.point)?;
        Ok(inner(&g, &self.v_part, &self.v_part).sqrt() <= tol)
    }
}

/// Orthonormal frame at a point, horizontal vectors first.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedFrame {
    pub point: Vec<f64>,
    pub dim_horizontal: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl AdaptedFrame {
    pub fn horizontal(&self) -> &[Vec<f64>] {
        &self.vectors[..self.dim_horizontal]
    }
    pub fn vertical(&self) -> &[Vec<f64>] {
        &self.vectors[self.dim_horizontal..]
    }
}

/// Split `u` at `p` into its horizontal and vertical parts.
pub fn project(chart: &FoliatedChart, p: &[f64], u: &[f64]) -> Result<SplitVector> {
    let frame = adapted_frame(chart, p)?;
    let g = chart.metric(p)?;
    Ok(split_with_frame(&g, &frame, u))
}

pub(crate) fn split_with_frame(g: &[f64], frame: &AdaptedFrame, u: &[f64]) -> SplitVector {
    let n = u.len();
    let mut v_part = vec![0.0; n];
    for e in frame.vertical() {
        let c = inner(g, u, e);
        for i in 0..n {
            v_part[i] += c * e[i];
        }
    }
    let h_part = u.iter().zip(&v_part).map(|(a, b)| a - b).collect();
    SplitVector { point: frame.point.clone(), components: u.to_vec(), h_part, v_part }
}

/// Deterministic orthonormal frame adapted to the split at `p`.
pub fn adapted_frame(chart: &FoliatedChart, p: &[f64]) -> Result<AdaptedFrame> {
    let g = chart.metric(p)?;
    let (_, z) = chart.eval::<f64>(p);
    let n = chart.dim_total();
    let e = gram_schmidt(&g, &z, chart.dim_horizontal(), chart.dim_vertical(), p)?;
    Ok(AdaptedFrame {
        point: p.to_vec(),
        dim_horizontal: chart.dim_horizontal(),
        vectors: e.chunks(n).map(|c| c.to_vec()).collect(),
    })
}

/// Riemannian volume density `sqrt(det g)`.
pub fn volume_density(chart: &FoliatedChart, p: &[f64]) -> Result<f64> {
    let g = chart.metric(p)?;
    let n = chart.dim_total();
    Ok(DMatrix::from_row_slice(n, n, &g).determinant().sqrt())
}

/// Outcome of the bundle-like test.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct BundleLikeReport {
    pub max_residual: f64,
    pub worst_point: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

/// `(L_Z g)(X, X)` for the vertical field `Σ coeffs_a Z_a` and a vector `x`.
pub fn lie_derivative_residual(jet: &FieldJet, coeffs: &[f64], x: &[f64]) -> f64 {
    let n = jet.dim;
    let m = coeffs.len();
    let mut zf = vec![0.0; n];
    let mut dzf = vec![0.0; n * n]; // dzf[k*n + i] = ∂_k Z^i
    for a in 0..m {
        for i in 0..n {
            zf[i] += coeffs[a] * jet.z[a * n + i];
            for k in 0..n {
                dzf[k * n + i] += coeffs[a] * jet.dz[(k * m + a) * n + i];
            }
        }
    }
    // (L_Z g)_kl = Z^j ∂_j g_kl + g_jl ∂_k Z^j + g_kj ∂_l Z^j
    let mut total = 0.0;
    for k in 0..n {
        for l in 0..n {
            let mut lg = 0.0;
            for j in 0..n {
                lg += zf[j] * jet.dg[(j * n + k) * n + l]
                    + jet.g[j * n + l] * dzf[k * n + j]
                    + jet.g[k * n + j] * dzf[l * n + j];
            }
            total += lg * x[k] * x[l];
        }
    }
    total
}

/// Max of `|(L_Z g)(X, X)|` over the given points and `pairs_per_point`
/// random unit horizontal `X` and unit vertical `Z` at each.
pub fn check_bundle_like(
    chart: &FoliatedChart,
    sample_points: &[Vec<f64>],
    pairs_per_point: usize,
    seed: u64,
    tolerance: f64,
) -> Result<BundleLikeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = chart.dim_total();
    let (nh, m) = (chart.dim_horizontal(), chart.dim_vertical());
    let mut worst = 0.0;
    let mut worst_point = sample_points.first().cloned().unwrap_or_default();
    for p in sample_points {
        let jet = chart.first_jet(p)?;
        let frame = gram_schmidt(&jet.g, &jet.z, nh, m, p)?;
        // coefficients of the orthonormal vertical frame in terms of Z_a
        let zg: Vec<f64> = (0..m * m)
            .map(|ab| inner(&jet.g, &jet.z[(ab / m) * n..(ab / m + 1) * n], &jet.z[(ab % m) * n..(ab % m + 1) * n]))
            .collect();
        for _ in 0..pairs_per_point {
            let hc = random_unit(&mut rng, nh);
            let mut x = vec![0.0; n];
            for i in 0..nh {
                for k in 0..n {
                    x[k] += hc[i] * frame[i * n + k];
                }
            }
            // unit vertical field Σ c_a Z_a with c ∝ random direction
            let mut c = random_unit(&mut rng, m);
            let len2: f64 = (0..m).map(|a| (0..m).map(|b| c[a] * c[b] * zg[a * m + b]).sum::<f64>()).sum();
            let s = len2.sqrt();
            c.iter_mut().for_each(|v| *v /= s);
            let r = lie_derivative_residual(&jet, &c, &x).abs();
            if r > worst {
                worst = r;
                worst_point = p.clone();
            }
        }
    }
    Ok(BundleLikeReport { max_residual: worst, worst_point, tolerance, pass: worst < tolerance })
}

pub(crate) fn random_unit(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if s > 1e-3 && s <= 1.0 {
            return v.into_iter().map(|x| x / s).collect();
        }
    }
}

/// Random orthonormal pair in `R^n`, `n ≥ 2`.
pub(crate) fn random_orthonormal_pair(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let x = random_unit(rng, n);
    loop {
        let mut y = random_unit(rng, n);
        let d: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        y.iter_mut().zip(&x).for_each(|(b, a)| *b -= d * a);
        let s = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if s > 1e-3 {
            y.iter_mut().for_each(|v| *v /= s);
            return (x, y);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct HalfPlaneLine;
    impl Fields for HalfPlaneLine {
        fn eval<T: Real>(&self, x: &[T], g: &mut [T], z: &mut [T]) {
            let w = x[1].sq().recip();
            g.iter_mut().for_each(|v| *v = T::zero());
            g[0] = w;
            g[4] = w;
            g[8] = T::one();
            z.iter_mut().for_each(|v| *v = T::zero());
            z[2] = T::one();
        }
    }

    fn chart() -> FoliatedChart {
        FoliatedChart::new(
            "half-plane",
            2,
            1,
            Domain::whole(3).with_open_axis(1, 0.0, f64::INFINITY),
            SampleBox::new(vec![-1.0, 0.5, -1.0], vec![1.0, 2.0, 1.0]),
            HalfPlaneLine,
        )
        .unwrap()
    }

    #[test]
    fn frame_scales_by_height() {
        let f = adapted_frame(&chart(), &[0.0, 2.0, 0.0]).unwrap();
        assert_eq!(f.vectors[0], vec![2.0, 0.0, 0.0]);
        assert_eq!(f.vectors[1], vec![0.0, 2.0, 0.0]);
        assert_eq!(f.vectors[2], vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn volume_density_is_inverse_square_height() {
        let v = volume_density(&chart(), &[0.3, 2.0, 0.0]).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn projection_splits_product_vector() {
        let s = project(&chart(), &[0.0, 1.0, 0.0], &[1.5, 0.0, -2.0]).unwrap();
        assert_eq!(s.v_part, vec![0.0, 0.0, -2.0]);
        assert_eq!(s.h_part, vec![1.5, 0.0, 0.0]);
    }

    #[test]
    fn outside_domain_is_rejected() {
        assert!(matches!(
            adapted_frame(&chart(), &[0.0, -1.0, 0.0]),
            Err(GeometryError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn degenerate_metric_is_reported() {
        struct Flat;
        impl Fields for Flat {
            fn eval<T: Real>(&self, _x: &[T], g: &mut [T], z: &mut [T]) {
                g.iter_mut().for_each(|v| *v = T::zero());
                g[0] = T::one();
                z.iter_mut().for_each(|v| *v = T::zero());
                z[1] = T::one();
            }
        }
        let c = FoliatedChart::new("flat", 1, 1, Domain::whole(2), SampleBox::new(vec![0.0; 2], vec![1.0; 2]), Flat)
            .unwrap();
        assert!(matches!(c.metric(&[0.0, 0.0]), Err(GeometryError::DegenerateMetric { .. })));
    }

    #[test]
    fn taylor_mode_reproduces_first_jet() {
        let exact = chart().first_jet(&[0.2, 1.3, 0.0]).unwrap();
        let fd = chart()
            .with_derivative_mode(DerivativeMode::FiniteDifference { step: 1e-5 })
            .first_jet(&[0.2, 1.3, 0.0])
            .unwrap();
        for (a, b) in exact.dg.iter().zip(&fd.dg) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn bad_dimensions_are_rejected() {
        let r = FoliatedChart::new("x", 0, 1, Domain::whole(1), SampleBox::new(vec![0.0], vec![1.0]), HalfPlaneLine);
        assert!(matches!(r, Err(GeometryError::BadDimensions(_))));
    }
}
