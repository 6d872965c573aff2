//! Metric and vertical-frame oracles of the shipped models.

use crate::jet::Real;
use crate::metric::Fields;

fn clear<T: Real>(v: &mut [T]) {
    v.iter_mut().for_each(|x| *x = T::zero());
}

/// `R^n × R^m` with the flat metric; leaves are the `R^m` factors.
pub struct EuclideanProduct {
    pub n: usize,
    pub m: usize,
}

impl Fields for EuclideanProduct {
    fn eval<T: Real>(&self, _x: &[T], g: &mut [T], z: &mut [T]) {
        let dim = self.n + self.m;
        clear(g);
        clear(z);
        for i in 0..dim {
            g[i * dim + i] = T::one();
        }
        for a in 0..self.m {
            z[a * dim + self.n + a] = T::one();
        }
    }
}

/// Upper half-space model of hyperbolic `d`-space with curvature `−k`,
/// times `R^m`. Coordinates `(x_1, …, x_{d−1}, y, z_1, …, z_m)`, `y > 0`.
pub struct HyperbolicProduct {
    pub d: usize,
    pub k: f64,
    pub m: usize,
}

impl Fields for HyperbolicProduct {
    fn eval<T: Real>(&self, x: &[T], g: &mut [T], z: &mut [T]) {
        let dim = self.d + self.m;
        clear(g);
        clear(z);
        let w = (x[self.d - 1].sq().scale(self.k)).recip();
        for i in 0..self.d {
            g[i * dim + i] = w;
        }
        for a in 0..self.m {
            let j = self.d + a;
            g[j * dim + j] = T::one();
            z[a * dim + j] = T::one();
        }
    }
}

/// First Heisenberg group, foliated by the orbits of its center.
///
/// Orthonormal frame `X = ∂x − (y/2)∂z`, `Y = ∂y + (x/2)∂z`, `Z = ∂z`, so
/// `[X, Y] = Z`.
pub struct Heisenberg;

impl Fields for Heisenberg {
    fn eval<T: Real>(&self, x: &[T], g: &mut [T], z: &mut [T]) {
        let (a, b) = (x[0], x[1]);
        let q = T::cst(0.25);
        let h = T::cst(0.5);
        g[0] = T::one() + q * b * b;
        g[1] = -(q * a * b);
        g[2] = h * b;
        g[3] = g[1];
        g[4] = T::one() + q * a * a;
        g[5] = -(h * a);
        g[6] = g[2];
        g[7] = g[5];
        g[8] = T::one();
        clear(z);
        z[2] = T::one();
    }
}

/// Sol geometry `e^{2z}dx² + e^{−2z}dy² + dz²`, leaves `z = const`.
pub struct Sol;

impl Fields for Sol {
    fn eval<T: Real>(&self, x: &[T], g: &mut [T], z: &mut [T]) {
        let e = x[2].exp();
        let ei = e.recip();
        clear(g);
        g[0] = e * e;
        g[4] = ei * ei;
        g[8] = T::one();
        clear(z);
        z[0] = ei;
        z[4] = e;
    }
}

/// Round sphere of curvature `k` in stereographic coordinates, times `R^m`.
pub struct SphereProduct {
    pub k: f64,
    pub m: usize,
}

impl Fields for SphereProduct {
    fn eval<T: Real>(&self, x: &[T], g: &mut [T], z: &mut [T]) {
        let dim = 2 + self.m;
        clear(g);
        clear(z);
        let s = T::one() + x[0] * x[0] + x[1] * x[1];
        let w = T::cst(4.0 / self.k) / (s * s);
        g[0] = w;
        g[dim + 1] = w;
        for a in 0..self.m {
            let j = 2 + a;
            g[j * dim + j] = T::one();
            z[a * dim + j] = T::one();
        }
    }
}

/// Hyperbolic 3-space `(dx² + dy² + dz²)/z²` foliated by horospheres `z = const`.
pub struct HorosphereH3;

impl Fields for HorosphereH3 {
    fn eval<T: Real>(&self, x: &[T], g: &mut [T], z: &mut [T]) {
        let w = x[2].sq().recip();
        clear(g);
        g[0] = w;
        g[4] = w;
        g[8] = w;
        clear(z);
        z[0] = x[2];
        z[4] = x[2];
    }
}

/// Half-plane times a line with `g_xx` stretched by `1 + z²`; not bundle-like.
pub struct PerturbedProduct;

impl Fields for PerturbedProduct {
    fn eval<T: Real>(&self, x: &[T], g: &mut [T], z: &mut [T]) {
        let w = x[1].sq().recip();
        clear(g);
        g[0] = (T::one() + x[2] * x[2]) * w;
        g[4] = w;
        g[8] = T::one();
        clear(z);
        z[2] = T::one();
    }
}
