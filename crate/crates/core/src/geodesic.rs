//! Horizontal geodesics, the normal exponential map of a leaf and its
//! inversion by Newton shooting.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::connection::PointGeometry;
use crate::error::{GeometryError, Result};
use crate::jacobi::Propagator;
use crate::metric::{inner, FoliatedChart, SplitVector};
use crate::ode::{Dopri5, Trajectory};
use crate::quadrature::gauss_legendre;
use crate::zoo::LeafSlice;

/// A geodesic as a dense trajectory of `(position, velocity)`.
#[derive(Clone, Debug)]
pub struct GeodesicPath {
    pub dim: usize,
    pub trajectory: Trajectory,
    /// Tolerance the integrator ran at.
    pub tolerance: f64,
}

/// Largest deviations along a geodesic from horizontality and constant speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Drift {
    pub vertical: f64,
    pub speed: f64,
}

impl GeodesicPath {
    pub fn t_end(&self) -> f64 {
        self.trajectory.t_end()
    }

    /// Position and velocity at `t`.
    pub fn state(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let (y, _) = self.trajectory.eval(t);
        let n = self.dim;
        (y[..n].to_vec(), y[n..].to_vec())
    }

    pub fn position(&self, t: f64) -> Vec<f64> {
        self.state(t).0
    }

    pub fn velocity(&self, t: f64) -> Vec<f64> {
        self.state(t).1
    }

    /// Accepted sample times.
    pub fn times(&self) -> Vec<f64> {
        self.trajectory.samples.iter().map(|s| s.t).collect()
    }

    /// Max over samples of `|γ̇_V|` and `||γ̇| − |γ̇(0)||`.
    pub fn drifts(&self, chart: &FoliatedChart) -> Result<Drift> {
        let n = self.dim;
        let nh = chart.dim_horizontal();
        let mut out = Drift { vertical: 0.0, speed: 0.0 };
        let mut speed0 = None;
        for s in &self.trajectory.samples {
            let geo = PointGeometry::first_order(chart, &s.y[..n])?;
            let vf = geo.frame_components(&s.y[n..]);
            let vert = vf[nh..].iter().map(|v| v * v).sum::<f64>().sqrt();
            let speed = vf.iter().map(|v| v * v).sum::<f64>().sqrt();
            let s0 = *speed0.get_or_insert(speed);
            out.vertical = out.vertical.max(vert);
            out.speed = out.speed.max((speed - s0).abs());
        }
        Ok(out)
    }

    /// Metric length of the path between two times.
    pub fn length(&self, chart: &FoliatedChart, t0: f64, t1: f64) -> Result<f64> {
        let (nodes, weights) = gauss_legendre(32);
        let mut total = 0.0;
        for (x, w) in nodes.iter().zip(&weights) {
            let t = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * x;
            let (p, v) = self.state(t);
            let g = chart.metric(&p)?;
            total += w * inner(&g, &v, &v).sqrt();
        }
        Ok(0.5 * (t1 - t0).abs() * total)
    }
}

/// Integrator settings for geodesics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeodesicOptions {
    pub tol: f64,
    pub max_step: f64,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        GeodesicOptions { tol: 1e-10, max_step: f64::INFINITY }
    }
}

/// Geodesic acceleration `−Γ(v, v)`; NaN outside the domain so the
/// integrator rejects the step.
fn acceleration(chart: &FoliatedChart, x: &[f64], v: &[f64], out: &mut [f64]) {
    let n = x.len();
    if !chart.contains(x) {
        out.iter_mut().for_each(|a| *a = f64::NAN);
        return;
    }
    let jet = match chart.first_jet(x) {
        Ok(j) => j,
        Err(_) => {
            out.iter_mut().for_each(|a| *a = f64::NAN);
            return;
        }
    };
    // w_l = Σ (∂_i g_lj − ½ ∂_l g_ij) v^i v^j, then g a = −w
    let mut w = vec![0.0; n];
    for l in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += (jet.dg[(i * n + l) * n + j] - 0.5 * jet.dg[(l * n + i) * n + j]) * v[i] * v[j];
            }
        }
        w[l] = -s;
    }
    let g = DMatrix::from_row_slice(n, n, &jet.g);
    match g.cholesky() {
        Some(ch) => {
            let a = ch.solve(&DVector::from_vec(w));
            out.copy_from_slice(a.as_slice());
        }
        None => out.iter_mut().for_each(|a| *a = f64::NAN),
    }
}

/// Integrate the Levi-Civita geodesic from `p` with initial velocity `u`
/// up to `t_end`.
pub fn integrate_geodesic(chart: &FoliatedChart, p: &[f64], u: &[f64], t_end: f64, tol: f64) -> Result<GeodesicPath> {
    integrate_geodesic_with(chart, p, u, t_end, GeodesicOptions { tol, ..Default::default() })
}

pub fn integrate_geodesic_with(
    chart: &FoliatedChart,
    p: &[f64],
    u: &[f64],
    t_end: f64,
    opts: GeodesicOptions,
) -> Result<GeodesicPath> {
    chart.require_inside(p)?;
    if u.iter().all(|&x| x == 0.0) {
        return Err(GeometryError::ZeroVector);
    }
    let n = chart.dim_total();
    let mut y0 = p.to_vec();
    y0.extend_from_slice(u);
    let solver = Dopri5::with_tol(opts.tol).max_step(opts.max_step);
    let trajectory = solver.integrate(
        |_, y, dy| {
            dy[..n].copy_from_slice(&y[n..]);
            acceleration(chart, &y[..n], &y[n..], &mut dy[n..]);
        },
        0.0,
        &y0,
        t_end,
        |t, y| if chart.contains(&y[..n]) { Ok(()) } else { Err(GeometryError::LeftDomain { t }) },
    )?;
    Ok(GeodesicPath { dim: n, trajectory, tolerance: opts.tol })
}

fn require_horizontal(geo: &PointGeometry, u: &[f64]) -> Result<Vec<f64>> {
    let uf = geo.frame_components(u);
    let vert = uf[geo.dim_h..].iter().map(|v| v * v).sum::<f64>().sqrt();
    let len = uf.iter().map(|v| v * v).sum::<f64>().sqrt();
    if vert > 1e-8 * len.max(1.0) {
        return Err(GeometryError::NotHorizontal { vertical_norm: vert });
    }
    Ok(uf)
}

/// Unit-speed geodesic from `y` in the direction of horizontal `u`, run for
/// time `|u|`, with its frame-component direction.
pub(crate) fn unit_geodesic(
    chart: &FoliatedChart,
    y: &[f64],
    u: &[f64],
    opts: GeodesicOptions,
) -> Result<(GeodesicPath, f64)> {
    let geo = PointGeometry::first_order(chart, y)?;
    let uf = require_horizontal(&geo, u)?;
    let len = uf.iter().map(|v| v * v).sum::<f64>().sqrt();
    if len == 0.0 {
        return Err(GeometryError::ZeroVector);
    }
    let dir: Vec<f64> = u.iter().map(|v| v / len).collect();
    Ok((integrate_geodesic_with(chart, y, &dir, len, opts)?, len))
}

/// Endpoint of the horizontal geodesic from leaf point `y` with initial
/// velocity `u`, at time 1.
pub fn normal_exp(chart: &FoliatedChart, y: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    normal_exp_with(chart, y, u, GeodesicOptions::default())
}

pub fn normal_exp_with(chart: &FoliatedChart, y: &[f64], u: &[f64], opts: GeodesicOptions) -> Result<Vec<f64>> {
    chart.require_inside(y)?;
    if u.iter().all(|&v| v == 0.0) {
        return Ok(y.to_vec());
    }
    let (path, len) = unit_geodesic(chart, y, u, opts)?;
    Ok(path.position(len))
}

/// Outcome of inverting the normal exponential map at a target.
#[derive(Clone, Debug, PartialEq)]
pub struct ShootingResult {
    pub target: Vec<f64>,
    /// Foot of the normal geodesic on the leaf.
    pub base: Vec<f64>,
    /// Initial velocity at the base; horizontal, of length `rho`.
    pub u: SplitVector,
    /// Unit initial direction in coordinates.
    pub direction: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    /// Metric norm of `exp(base, u) − target` at the target.
    pub residual: f64,
}

/// Newton shooting settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShootingOptions {
    pub geodesic_tol: f64,
    pub residual_tol: f64,
    pub max_iter: usize,
    /// Step of the Jacobi propagation behind the Newton Jacobian.
    pub jacobi_step: f64,
    /// Try the deterministic set of fallback directions on failure.
    pub multistart: bool,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions { geodesic_tol: 1e-11, residual_tol: 1e-10, max_iter: 20, jacobi_step: 0.05, multistart: true }
    }
}

/// Starting point for Newton: leaf coordinates, horizontal frame direction, length.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialGuess {
    pub leaf_coords: Vec<f64>,
    /// Horizontal frame components at the base (normalized internally).
    pub direction: Vec<f64>,
    pub rho: f64,
}

struct Shooter<'a> {
    chart: &'a FoliatedChart,
    leaf: &'a LeafSlice,
    seed: &'a [f64],
    target: &'a [f64],
    g_target: Vec<f64>,
    opts: ShootingOptions,
}

struct Trial {
    endpoint: Vec<f64>,
    path: GeodesicPath,
    residual: f64,
}

impl Shooter<'_> {
    fn base(&self, s: &[f64]) -> Vec<f64> {
        self.leaf.point(self.seed, s)
    }

    fn residual(&self, endpoint: &[f64]) -> f64 {
        let d: Vec<f64> = endpoint.iter().zip(self.target).map(|(a, b)| a - b).collect();
        inner(&self.g_target, &d, &d).max(0.0).sqrt()
    }

    fn shoot(&self, s: &[f64], dir: &[f64], rho: f64) -> Result<Trial> {
        let base = self.base(s);
        let geo = PointGeometry::first_order(self.chart, &base)?;
        let mut comps = dir.to_vec();
        comps.resize(self.chart.dim_total(), 0.0);
        let v = geo.coordinates(&comps);
        let path = integrate_geodesic_with(
            self.chart,
            &base,
            &v,
            rho,
            GeodesicOptions { tol: self.opts.geodesic_tol, max_step: self.opts.jacobi_step },
        )?;
        let endpoint = path.position(rho);
        let residual = self.residual(&endpoint);
        Ok(Trial { endpoint, path, residual })
    }

    fn run(&self, guess: &InitialGuess) -> Result<ShootingResult> {
        let n = self.chart.dim_total();
        let nh = self.chart.dim_horizontal();
        let m = self.chart.dim_vertical();
        let mut s = guess.leaf_coords.clone();
        let mut dir = normalized(&guess.direction[..nh]).ok_or(GeometryError::ZeroVector)?;
        let mut rho = guess.rho;
        if !(rho > 0.0) {
            return Err(GeometryError::BadParameters("initial arc length must be positive".into()));
        }
        let mut trial = self.shoot(&s, &dir, rho)?;
        for iter in 0..=self.opts.max_iter {
            if trial.residual < self.opts.residual_tol {
                return Ok(self.finish(&s, &dir, rho, iter, trial.residual)?);
            }
            if iter == self.opts.max_iter {
                break;
            }
            let prop = Propagator::new(self.chart, trial.path.clone(), self.opts.jacobi_step)?;
            let base = self.base(&s);
            let geo0 = PointGeometry::first_order(self.chart, &base)?;
            let q = prop.initial_frame();
            let mut jac = DMatrix::<f64>::zeros(n, n);
            // leaf coordinates
            for (a, &k) in self.leaf.free.iter().enumerate() {
                let mut w = vec![0.0; n];
                w[k] = 1.0;
                let wf = geo0.frame_components(&w);
                let mut dwf = vec![0.0; n];
                for c in 0..nh {
                    let mut acc = 0.0;
                    for i in 0..nh {
                        for b in 0..n {
                            acc += dir[i] * wf[b] * geo0.gamma_nabla[(b * n + i) * n + c];
                        }
                    }
                    dwf[c] = acc;
                }
                let init = prop.initial_state(&wf, &dwf);
                let col = prop.vector_at_end(&init)?;
                jac.set_column(a, &DVector::from_vec(col));
            }
            // direction offsets in the local sphere chart
            for j in 1..nh {
                let mut init = vec![0.0; prop.state_dim()];
                init[nh + m + j] = 1.0;
                let col = prop.vector_at_end(&init)?;
                jac.set_column(m + j - 1, &DVector::from_vec(col));
            }
            let gdot = trial.path.velocity(rho);
            jac.set_column(n - 1, &DVector::from_vec(gdot));
            let rhs = DVector::from_iterator(n, trial.endpoint.iter().zip(self.target).map(|(a, b)| b - a));
            let delta = match jac.clone().lu().solve(&rhs) {
                Some(d) if d.iter().all(|v| v.is_finite()) => d,
                _ => return Err(GeometryError::SingularBvp { t: rho, sigma: 0.0 }),
            };
            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..=8 {
                let s_new: Vec<f64> = (0..m).map(|a| s[a] + lambda * delta[a]).collect();
                let mut d_new: Vec<f64> = dir.clone();
                for j in 1..nh {
                    for i in 0..nh {
                        d_new[i] += lambda * delta[m + j - 1] * q[i * n + j];
                    }
                }
                let mut d_new = normalized(&d_new).ok_or(GeometryError::ZeroVector)?;
                let mut rho_new = rho + lambda * delta[n - 1];
                if rho_new < 0.0 {
                    rho_new = -rho_new;
                    d_new.iter_mut().for_each(|v| *v = -*v);
                }
                if rho_new > 1e-12 {
                    if let Ok(t) = self.shoot(&s_new, &d_new, rho_new) {
                        if t.residual < trial.residual {
                            accepted = Some((s_new, d_new, rho_new, t));
                            break;
                        }
                    }
                }
                lambda *= 0.5;
            }
            match accepted {
                Some((s1, d1, r1, t1)) => {
                    s = s1;
                    dir = d1;
                    rho = r1;
                    trial = t1;
                }
                None => {
                    return Err(GeometryError::NoConvergence { iterations: iter + 1, residual: trial.residual });
                }
            }
        }
        Err(GeometryError::NoConvergence { iterations: self.opts.max_iter, residual: trial.residual })
    }

    fn finish(&self, s: &[f64], dir: &[f64], rho: f64, iterations: usize, residual: f64) -> Result<ShootingResult> {
        let base = self.base(s);
        let geo = PointGeometry::first_order(self.chart, &base)?;
        let mut comps = dir.to_vec();
        comps.resize(self.chart.dim_total(), 0.0);
        let direction = geo.coordinates(&comps);
        let u: Vec<f64> = direction.iter().map(|v| v * rho).collect();
        Ok(ShootingResult {
            target: self.target.to_vec(),
            base,
            u: geo.split(&u),
            direction,
            rho,
            iterations,
            residual,
        })
    }
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if s > 0.0 && s.is_finite() {
        Some(v.iter().map(|x| x / s).collect())
    } else {
        None
    }
}

/// Straight-line heuristic: base shares the target's leaf coordinates,
/// direction is the horizontal part of the coordinate difference, length
/// is the metric length of the coordinate segment.
pub fn straight_line_guess(chart: &FoliatedChart, leaf: &LeafSlice, seed: &[f64], target: &[f64]) -> Result<InitialGuess> {
    let s = leaf.coordinates(target);
    let base = leaf.point(seed, &s);
    let geo = PointGeometry::first_order(chart, &base)?;
    let diff: Vec<f64> = target.iter().zip(&base).map(|(a, b)| a - b).collect();
    let df = geo.frame_components(&diff);
    let nh = chart.dim_horizontal();
    let direction = normalized(&df[..nh]).ok_or(GeometryError::ZeroVector)?;
    let (nodes, weights) = gauss_legendre(16);
    let mut len = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let t = 0.5 * (1.0 + x);
        let p: Vec<f64> = base.iter().zip(&diff).map(|(b, d)| b + t * d).collect();
        let g = chart.metric(&p)?;
        len += 0.5 * w * inner(&g, &diff, &diff).sqrt();
    }
    Ok(InitialGuess { leaf_coords: s, direction, rho: len })
}

/// Deterministic, well-spread unit vectors in `R^dim` (Halton points pushed
/// to the sphere; the circle is split evenly).
pub fn fallback_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    if dim == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    if dim == 2 {
        return (0..count)
            .map(|k| {
                let a = std::f64::consts::TAU * (k as f64 + 0.5) / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
    }
    const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    let halton = |mut i: u64, b: u64| {
        let (mut f, mut r) = (1.0, 0.0);
        while i > 0 {
            f /= b as f64;
            r += f * (i % b) as f64;
            i /= b;
        }
        r
    };
    let mut out = Vec::with_capacity(count);
    let mut i = 1;
    while out.len() < count {
        let v: Vec<f64> = (0..dim).map(|k| 2.0 * halton(i, PRIMES[k % PRIMES.len()]) - 1.0).collect();
        i += 1;
        if let Some(u) = normalized(&v) {
            if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                out.push(u);
            }
        }
    }
    out
}

/// Find the foot `y` on the leaf through `seed` and horizontal `u` with
/// `exp(y, u) = target`.
pub fn invert_normal_exp(
    chart: &FoliatedChart,
    leaf: &LeafSlice,
    seed: &[f64],
    target: &[f64],
    guess: Option<InitialGuess>,
    opts: ShootingOptions,
) -> Result<ShootingResult> {
    chart.require_inside(target)?;
    let nh = chart.dim_horizontal();
    let g_target = chart.metric(target)?;
    let shooter = Shooter { chart, leaf, seed, target, g_target, opts };
    if leaf.contains(seed, target, 1e-14) {
        let s = leaf.coordinates(target);
        let mut dir = vec![0.0; nh];
        dir[0] = 1.0;
        return shooter.finish(&s, &dir, 0.0, 0, 0.0);
    }
    let heuristic = straight_line_guess(chart, leaf, seed, target);
    let first = guess.clone().or_else(|| heuristic.clone().ok());
    let mut best_err = GeometryError::NoConvergence { iterations: 0, residual: f64::INFINITY };
    if let Some(g) = &first {
        match shooter.run(g) {
            Ok(r) => return Ok(r),
            Err(e) => best_err = e,
        }
    }
    if !opts.multistart {
        return Err(best_err);
    }
    if let Ok(r) = continuation(chart, leaf, seed, target, opts) {
        return Ok(r);
    }
    let base_guess = match (heuristic, guess) {
        (Ok(h), _) => h,
        (Err(_), Some(g)) => g,
        (Err(e), None) => return Err(e),
    };
    for d in fallback_directions(nh, 16) {
        for scale in [1.0, 0.5] {
            let g = InitialGuess { direction: d.clone(), rho: base_guess.rho * scale, ..base_guess.clone() };
            match shooter.run(&g) {
                Ok(r) => return Ok(r),
                Err(e) => best_err = e,
            }
        }
    }
    Err(best_err)
}

/// Walk the target in from the leaf along the coordinate segment from its
/// straight-line foot, warm-starting each solve from the previous one.
fn continuation(
    chart: &FoliatedChart,
    leaf: &LeafSlice,
    seed: &[f64],
    target: &[f64],
    opts: ShootingOptions,
) -> Result<ShootingResult> {
    let foot = leaf.point(seed, &leaf.coordinates(target));
    let at = |tau: f64| -> Vec<f64> { foot.iter().zip(target).map(|(a, b)| a + tau * (b - a)).collect() };
    let solve = |x: &[f64], guess: &InitialGuess| -> Result<ShootingResult> {
        chart.require_inside(x)?;
        let shooter = Shooter { chart, leaf, seed, target: x, g_target: chart.metric(x)?, opts };
        shooter.run(guess)
    };
    let mut tau = 0.125;
    let mut step = 0.125;
    let first = at(tau);
    let mut prev = solve(&first, &straight_line_guess(chart, leaf, seed, &first)?)?;
    let mut prev_rho_rate = prev.rho / tau;
    while tau < 1.0 {
        if step < 1e-3 {
            return Err(GeometryError::NoConvergence { iterations: 0, residual: f64::INFINITY });
        }
        let next = (tau + step).min(1.0);
        let x = at(next);
        let geo = PointGeometry::first_order(chart, &prev.base)?;
        let df = geo.frame_components(&prev.direction);
        let guess = InitialGuess {
            leaf_coords: leaf.coordinates(&prev.base),
            direction: df[..chart.dim_horizontal()].to_vec(),
            rho: prev.rho + prev_rho_rate * (next - tau),
        };
        match solve(&x, &guess) {
            Ok(r) => {
                prev_rho_rate = (r.rho - prev.rho) / (next - tau);
                prev = r;
                tau = next;
                step *= 2.0;
            }
            Err(_) => step *= 0.5,
        }
    }
    Ok(prev)
}

/// Distance from `target` to the leaf through `seed`.
pub fn distance_to_leaf(chart: &FoliatedChart, leaf: &LeafSlice, seed: &[f64], target: &[f64]) -> Result<f64> {
    Ok(invert_normal_exp(chart, leaf, seed, target, None, ShootingOptions::default())?.rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::build_default;

    #[test]
    fn vertical_geodesic_of_upper_half_plane_is_exponential() {
        let spec = build_default("hyperbolic_product").unwrap();
        let path = integrate_geodesic(&spec.chart, &[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0], 4.0, 1e-12).unwrap();
        for t in [0.5, 1.7, 4.0] {
            let p = path.position(t);
            assert!((p[1] - t.exp()).abs() < 1e-9 * t.exp(), "{t}: {p:?}");
            assert!(p[0].abs() < 1e-12 && p[2].abs() < 1e-12);
        }
        assert!((path.length(&spec.chart, 0.0, 4.0).unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn normal_exp_of_zero_is_the_base() {
        let spec = build_default("heisenberg").unwrap();
        let y = [0.3, -0.2, 0.1];
        assert_eq!(normal_exp(&spec.chart, &y, &[0.0; 3]).unwrap(), y.to_vec());
    }

    #[test]
    fn vertical_initial_velocity_is_rejected() {
        let spec = build_default("heisenberg").unwrap();
        let err = normal_exp(&spec.chart, &[0.0; 3], &[0.0, 0.0, 1.0]).unwrap_err();
        assert!(matches!(err, GeometryError::NotHorizontal { .. }));
    }

    #[test]
    fn points_outside_the_chart_are_rejected() {
        let spec = build_default("hyperbolic_product").unwrap();
        let err = integrate_geodesic(&spec.chart, &[0.0, -1.0, 0.0], &[1.0, 0.0, 0.0], 1.0, 1e-10).unwrap_err();
        assert!(matches!(err, GeometryError::OutsideDomain { .. }));
    }

    #[test]
    fn shooting_recovers_a_normal_geodesic() {
        let spec = build_default("hyperbolic_product").unwrap();
        let y = [0.0, 1.0, 0.4];
        let u = [1.2, -0.7, 0.0];
        let target = normal_exp(&spec.chart, &y, &u).unwrap();
        let res = invert_normal_exp(&spec.chart, &spec.leaf, &spec.seed_point, &target, None, ShootingOptions::default()).unwrap();
        let len = (1.2f64 * 1.2 + 0.7 * 0.7).sqrt();
        assert!((res.rho - len).abs() < 1e-9);
        assert!((res.base[2] - 0.4).abs() < 1e-9);
        for (a, b) in res.u.components.iter().zip(&u) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn far_targets_converge_through_continuation() {
        // the straight-line guess overshoots the length threefold here
        let spec = build_default("hyperbolic_product").unwrap();
        let a = 1.5 * std::f64::consts::TAU / 8.0;
        let u = [10.0 * a.cos(), 10.0 * a.sin(), 0.0];
        let target = normal_exp(&spec.chart, &spec.seed_point, &u).unwrap();
        let guess = straight_line_guess(&spec.chart, &spec.leaf, &spec.seed_point, &target).unwrap();
        assert!(guess.rho > 25.0);
        let res = invert_normal_exp(&spec.chart, &spec.leaf, &spec.seed_point, &target, None, ShootingOptions::default()).unwrap();
        assert!((res.rho - 10.0).abs() < 1e-6);
    }

    #[test]
    fn target_on_the_leaf_has_zero_distance() {
        let spec = build_default("heisenberg").unwrap();
        let res = invert_normal_exp(&spec.chart, &spec.leaf, &spec.seed_point, &[0.0, 0.0, 0.7], None, ShootingOptions::default()).unwrap();
        assert_eq!(res.rho, 0.0);
        assert_eq!(res.base, vec![0.0, 0.0, 0.7]);
    }

    #[test]
    fn straight_line_guess_is_exact_in_flat_space() {
        let spec = build_default("euclidean_product").unwrap();
        let g = straight_line_guess(&spec.chart, &spec.leaf, &spec.seed_point, &[3.0, 4.0, 1.0]).unwrap();
        assert!((g.rho - 5.0).abs() < 1e-12);
        assert!((g.direction[0] - 0.6).abs() < 1e-12 && (g.direction[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn fallback_directions_are_unit_and_distinct() {
        for dim in [2, 3, 5] {
            let dirs = fallback_directions(dim, 16);
            assert_eq!(dirs.len(), 16);
            for (i, d) in dirs.iter().enumerate() {
                assert!((d.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
                for e in &dirs[i + 1..] {
                    assert!(d.iter().zip(e).map(|(a, b)| (a - b).abs()).sum::<f64>() > 1e-6);
                }
            }
        }
    }
}
