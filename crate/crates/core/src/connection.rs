//! Levi-Civita connection, the adapted connection and its torsion, the
//! `C` tensor, the `J` map and curvature, all expressed in the adapted
//! orthonormal frame.
//!
//! Index conventions for frame arrays (`A, B, C, D` run over the frame,
//! horizontal indices first):
//!
//! * `brackets[A][B][C] = ⟨[e_A, e_B], e_C⟩`
//! * `gamma_lc[A][B][C] = ⟨D_{e_A} e_B, e_C⟩`
//! * `gamma_nabla[A][B][C] = ⟨∇_{e_A} e_B, e_C⟩`
//! * `torsion[A][B][C] = ⟨Tor(e_A, e_B), e_C⟩`
//! * `curvature[A][B][C][D] = ⟨R(e_A, e_B) e_C, e_D⟩`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{GeometryError, Result};
use crate::jet::{Dual, Real, D1};
use crate::metric::{gram_schmidt, inner, FoliatedChart, Jet, SplitVector};

/// Frame data generic over the scalar type: metric, frame, Christoffel
/// symbols and connection coefficients at one point.
#[derive(Clone, Debug)]
pub(crate) struct FrameData<T> {
    pub n: usize,
    pub nh: usize,
    pub g: Vec<T>,
    pub dg: Vec<T>,
    pub e: Vec<T>,
    pub de: Vec<T>,
    pub theta: Vec<T>,
    pub gamma: Vec<T>,
    pub c: Vec<T>,
    pub lc: Vec<T>,
    pub omega: Vec<T>,
}

pub(crate) fn frame_data<T>(chart: &FoliatedChart, x: &[T]) -> Result<FrameData<T>>
where
    T: Real,
    Dual<T>: Jet,
{
    let n = chart.dim_total();
    let nh = chart.dim_horizontal();
    let m = chart.dim_vertical();
    let point: Vec<f64> = x.iter().map(|v| v.value()).collect();
    let zero = T::zero();
    let mut g = vec![zero; n * n];
    let mut dg = vec![zero; n * n * n];
    let mut e = vec![zero; n * n];
    let mut de = vec![zero; n * n * n];
    for k in 0..n {
        let xd: Vec<Dual<T>> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::new(v, if i == k { T::one() } else { T::zero() }))
            .collect();
        let (gd, zd) = chart.eval::<Dual<T>>(&xd);
        let ed = gram_schmidt(&gd, &zd, nh, m, &point)?;
        for i in 0..n * n {
            if k == 0 {
                g[i] = gd[i].re;
                e[i] = ed[i].re;
            }
            dg[k * n * n + i] = gd[i].eps;
            de[k * n * n + i] = ed[i].eps;
        }
    }
    // inverse metric from the orthonormal frame
    let mut ginv = vec![zero; n * n];
    for a in 0..n {
        for k in 0..n {
            for l in 0..n {
                ginv[k * n + l] += e[a * n + k] * e[a * n + l];
            }
        }
    }
    let mut theta = vec![zero; n * n];
    for a in 0..n {
        for k in 0..n {
            let mut s = zero;
            for l in 0..n {
                s += g[k * n + l] * e[a * n + l];
            }
            theta[a * n + k] = s;
        }
    }
    let dgi = |k: usize, i: usize, j: usize| dg[(k * n + i) * n + j];
    let mut gamma = vec![zero; n * n * n];
    for i in 0..n {
        for j in i..n {
            let lowered: Vec<T> = (0..n).map(|l| dgi(i, l, j) + dgi(j, l, i) - dgi(l, i, j)).collect();
            for k in 0..n {
                let mut s = zero;
                for l in 0..n {
                    s += ginv[k * n + l] * lowered[l];
                }
                let v = s.scale(0.5);
                gamma[(k * n + i) * n + j] = v;
                gamma[(k * n + j) * n + i] = v;
            }
        }
    }
    let dei = |j: usize, a: usize, k: usize| de[(j * n + a) * n + k];
    let mut c = vec![zero; n * n * n];
    let mut lc = vec![zero; n * n * n];
    let mut br = vec![zero; n];
    let mut cov = vec![zero; n];
    for a in 0..n {
        for b in 0..n {
            for k in 0..n {
                let mut s = zero;
                let mut d = zero;
                for j in 0..n {
                    let ea = e[a * n + j];
                    s += ea * dei(j, b, k) - e[b * n + j] * dei(j, a, k);
                    let mut t = dei(j, b, k);
                    for l in 0..n {
                        t += gamma[(k * n + j) * n + l] * e[b * n + l];
                    }
                    d += ea * t;
                }
                br[k] = s;
                cov[k] = d;
            }
            for cc in 0..n {
                let mut s = zero;
                let mut d = zero;
                for k in 0..n {
                    s += theta[cc * n + k] * br[k];
                    d += theta[cc * n + k] * cov[k];
                }
                c[(a * n + b) * n + cc] = s;
                lc[(a * n + b) * n + cc] = d;
            }
        }
    }
    let omega = adapted_coefficients(n, nh, &c, &lc);
    Ok(FrameData { n, nh, g, dg, e, de, theta, gamma, c, lc, omega })
}

// The four-case definition of ∇ on frame fields.
fn adapted_coefficients<T: Real>(n: usize, nh: usize, c: &[T], lc: &[T]) -> Vec<T> {
    let idx = |a: usize, b: usize, cc: usize| (a * n + b) * n + cc;
    let mut w = vec![T::zero(); n * n * n];
    for a in 0..n {
        for b in 0..n {
            let (ha, hb) = (a < nh, b < nh);
            for cc in 0..n {
                let hc = cc < nh;
                w[idx(a, b, cc)] = match (ha, hb) {
                    (true, true) if hc => lc[idx(a, b, cc)],
                    (false, true) if hc => c[idx(a, b, cc)],
                    (true, false) if !hc => (c[idx(a, b, cc)] - c[idx(a, cc, b)]).scale(0.5),
                    (false, false) if !hc => lc[idx(a, b, cc)],
                    _ => T::zero(),
                };
            }
        }
    }
    w
}

fn re_part(v: &[D1]) -> Vec<f64> {
    v.iter().map(|d| d.re).collect()
}
fn eps_part(v: &[D1]) -> Vec<f64> {
    v.iter().map(|d| d.eps).collect()
}

/// Everything the crate knows about the connections at one point.
#[derive(Clone, Debug)]
pub struct PointGeometry {
    pub point: Vec<f64>,
    pub dim: usize,
    pub dim_h: usize,
    pub metric: Vec<f64>,
    /// Rows are the adapted frame vectors in coordinates.
    pub frame: Vec<f64>,
    /// Rows are the dual covectors `θ^A_k = g_kl e_A^l`.
    pub coframe: Vec<f64>,
    /// `frame_derivatives[(j*N + A)*N + k] = ∂_j e_A^k`.
    pub frame_derivatives: Vec<f64>,
    pub metric_derivatives: Vec<f64>,
    /// `christoffel[(k*N + i)*N + j] = Γ^k_ij`.
    pub christoffel: Vec<f64>,
    pub brackets: Vec<f64>,
    pub gamma_lc: Vec<f64>,
    pub gamma_nabla: Vec<f64>,
    pub c_tensor: Vec<f64>,
    pub torsion: Vec<f64>,
    pub curvature: Option<Vec<f64>>,
    /// Levi-Civita curvature `⟨R^D(e_A, e_B) e_C, e_D⟩` from coordinate Christoffels.
    pub curvature_lc: Option<Vec<f64>>,
}

impl PointGeometry {
    /// Connection data without curvature.
    pub fn first_order(chart: &FoliatedChart, p: &[f64]) -> Result<Self> {
        chart.require_inside(p)?;
        let fd = frame_data::<f64>(chart, p)?;
        Ok(Self::assemble(p, fd, None))
    }

    /// Connection data including both curvature tensors.
    pub fn with_curvature(chart: &FoliatedChart, p: &[f64]) -> Result<Self> {
        chart.require_inside(p)?;
        let n = chart.dim_total();
        let mut base: Option<FrameData<f64>> = None;
        let mut d_omega = Vec::with_capacity(n);
        let mut d_gamma = Vec::with_capacity(n);
        for k in 0..n {
            let x: Vec<D1> = p
                .iter()
                .enumerate()
                .map(|(i, &v)| Dual::new(v, if i == k { 1.0 } else { 0.0 }))
                .collect();
            let fd = frame_data::<D1>(chart, &x)?;
            d_omega.push(eps_part(&fd.omega));
            d_gamma.push(eps_part(&fd.gamma));
            if base.is_none() {
                base = Some(FrameData {
                    n: fd.n,
                    nh: fd.nh,
                    g: re_part(&fd.g),
                    dg: re_part(&fd.dg),
                    e: re_part(&fd.e),
                    de: re_part(&fd.de),
                    theta: re_part(&fd.theta),
                    gamma: re_part(&fd.gamma),
                    c: re_part(&fd.c),
                    lc: re_part(&fd.lc),
                    omega: re_part(&fd.omega),
                });
            }
        }
        let base = base.expect("chart has positive dimension");
        let curv = nabla_curvature(&base, &d_omega);
        let curv_lc = levi_civita_curvature(&base, &d_gamma);
        Ok(Self::assemble(p, base, Some((curv, curv_lc))))
    }

    fn assemble(p: &[f64], fd: FrameData<f64>, curv: Option<(Vec<f64>, Vec<f64>)>) -> Self {
        let (n, nh) = (fd.n, fd.nh);
        let idx = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
        // ⟨C_{e_i} e_a, e_b⟩ = -½(c[i][a][b] + c[i][b][a])
        let mut cten = vec![0.0; n * n * n];
        for i in 0..nh {
            for a in nh..n {
                for b in nh..n {
                    cten[idx(i, a, b)] = -0.5 * (fd.c[idx(i, a, b)] + fd.c[idx(i, b, a)]);
                }
            }
        }
        let mut tor = vec![0.0; n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in nh..n {
                    tor[idx(a, b, c)] = match (a < nh, b < nh) {
                        (true, true) => -fd.c[idx(a, b, c)],
                        (true, false) => cten[idx(a, b, c)],
                        (false, true) => -cten[idx(b, a, c)],
                        (false, false) => 0.0,
                    };
                }
            }
        }
        let (curvature, curvature_lc) = match curv {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        };
        PointGeometry {
            point: p.to_vec(),
            dim: n,
            dim_h: nh,
            metric: fd.g,
            frame: fd.e,
            coframe: fd.theta,
            frame_derivatives: fd.de,
            metric_derivatives: fd.dg,
            christoffel: fd.gamma,
            brackets: fd.c,
            gamma_lc: fd.lc,
            gamma_nabla: fd.omega,
            c_tensor: cten,
            torsion: tor,
            curvature,
            curvature_lc,
        }
    }

    fn idx3(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.dim + b) * self.dim + c
    }

    /// Components of a coordinate vector in the adapted frame.
    pub fn frame_components(&self, u: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n).map(|a| (0..n).map(|k| self.coframe[a * n + k] * u[k]).sum()).collect()
    }

    /// Coordinate vector with the given frame components.
    pub fn coordinates(&self, comps: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut u = vec![0.0; n];
        for a in 0..n {
            for k in 0..n {
                u[k] += comps[a] * self.frame[a * n + k];
            }
        }
        u
    }

    pub fn split(&self, u: &[f64]) -> SplitVector {
        let comps = self.frame_components(u);
        let mut h = comps.clone();
        let mut v = comps;
        h[self.dim_h..].iter_mut().for_each(|x| *x = 0.0);
        v[..self.dim_h].iter_mut().for_each(|x| *x = 0.0);
        SplitVector {
            point: self.point.clone(),
            components: u.to_vec(),
            h_part: self.coordinates(&h),
            v_part: self.coordinates(&v),
        }
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        inner(&self.metric, u, v)
    }

    fn contract2(&self, arr: &[f64], x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n];
        for a in 0..n {
            if x[a] == 0.0 {
                continue;
            }
            for b in 0..n {
                let w = x[a] * y[b];
                if w == 0.0 {
                    continue;
                }
                for c in 0..n {
                    out[c] += w * arr[self.idx3(a, b, c)];
                }
            }
        }
        out
    }

    /// `Tor(X, Y)` on frame components.
    pub fn torsion_frame(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.contract2(&self.torsion, x, y)
    }

    /// `C_X Y` on frame components.
    pub fn c_frame(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.contract2(&self.c_tensor, x, y)
    }

    /// `∇_X Y` for constant-coefficient frame extensions.
    pub fn nabla_frame(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.contract2(&self.gamma_nabla, x, y)
    }

    /// `D_X Y` for constant-coefficient frame extensions.
    pub fn levi_civita_frame(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.contract2(&self.gamma_lc, x, y)
    }

    /// `J_Z X` on frame components; only the vertical part of `Z` acts.
    pub fn j_frame(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n];
        for a in self.dim_h..n {
            if z[a] == 0.0 {
                continue;
            }
            for b in 0..n {
                for c in 0..n {
                    out[c] += z[a] * x[b] * self.torsion[self.idx3(b, c, a)];
                }
            }
        }
        out
    }

    fn contract3(arr: &[f64], n: usize, x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for a in 0..n {
            if x[a] == 0.0 {
                continue;
            }
            for b in 0..n {
                let xy = x[a] * y[b];
                if xy == 0.0 {
                    continue;
                }
                for c in 0..n {
                    let w = xy * z[c];
                    if w == 0.0 {
                        continue;
                    }
                    let base = ((a * n + b) * n + c) * n;
                    for d in 0..n {
                        out[d] += w * arr[base + d];
                    }
                }
            }
        }
        out
    }

    /// `R(X, Y) Z` on frame components. Requires [`PointGeometry::with_curvature`].
    pub fn curvature_frame(&self, x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
        let r = self.curvature.as_ref().expect("geometry computed without curvature");
        Self::contract3(r, self.dim, x, y, z)
    }

    /// Levi-Civita `R^D(X, Y) Z` on frame components.
    pub fn curvature_lc_frame(&self, x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
        let r = self.curvature_lc.as_ref().expect("geometry computed without curvature");
        Self::contract3(r, self.dim, x, y, z)
    }

    /// Horizontal part of `Σ_a D_{Z_a} Z_a` in frame components.
    pub fn mean_curvature_frame(&self) -> Vec<f64> {
        let n = self.dim;
        let mut h = vec![0.0; n];
        for a in self.dim_h..n {
            for i in 0..self.dim_h {
                h[i] += self.gamma_lc[self.idx3(a, a, i)];
            }
        }
        h
    }

    /// `D_X Y` for vector fields given by value and coordinate Jacobian.
    pub fn levi_civita_fields(&self, x: &FieldStencil, y: &FieldStencil) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n];
        for k in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                let mut t = y.jacobian[j * n + k];
                for l in 0..n {
                    t += self.christoffel[(k * n + j) * n + l] * y.value[l];
                }
                s += x.value[j] * t;
            }
            out[k] = s;
        }
        out
    }

    /// `∇_X Y` for vector fields, through the frame coefficients of `∇`.
    pub fn nabla_fields(&self, x: &FieldStencil, y: &FieldStencil) -> Vec<f64> {
        let n = self.dim;
        // X(Y^A) with Y^A = θ^A_k Y^k
        let mut dy = vec![0.0; n];
        for a in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if x.value[j] == 0.0 {
                    continue;
                }
                let mut t = 0.0;
                for k in 0..n {
                    let mut dtheta = 0.0;
                    for l in 0..n {
                        dtheta += self.metric_derivatives[(j * n + k) * n + l] * self.frame[a * n + l]
                            + self.metric[k * n + l] * self.frame_derivatives[(j * n + a) * n + l];
                    }
                    t += dtheta * y.value[k] + self.coframe[a * n + k] * y.jacobian[j * n + k];
                }
                s += x.value[j] * t;
            }
            dy[a] = s;
        }
        let xf = self.frame_components(&x.value);
        let yf = self.frame_components(&y.value);
        let rest = self.nabla_frame(&xf, &yf);
        let total: Vec<f64> = dy.iter().zip(&rest).map(|(a, b)| a + b).collect();
        self.coordinates(&total)
    }
}

/// A vector field near a point: value and `jacobian[j*N + k] = ∂_j Y^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldStencil {
    pub value: Vec<f64>,
    pub jacobian: Vec<f64>,
}

impl FieldStencil {
    /// The field with constant coordinate components.
    pub fn constant(value: Vec<f64>) -> Self {
        let n = value.len();
        FieldStencil { value, jacobian: vec![0.0; n * n] }
    }

    pub fn bracket(&self, other: &FieldStencil) -> Vec<f64> {
        let n = self.value.len();
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|j| self.value[j] * other.jacobian[j * n + k] - other.value[j] * self.jacobian[j * n + k])
                    .sum()
            })
            .collect()
    }
}

fn nabla_curvature(fd: &FrameData<f64>, d_omega: &[Vec<f64>]) -> Vec<f64> {
    let n = fd.n;
    let idx = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
    let w = &fd.omega;
    // e_A(ω[B][C][D])
    let mut ew = vec![0.0; n * n * n * n];
    for a in 0..n {
        for bcd in 0..n * n * n {
            let mut s = 0.0;
            for k in 0..n {
                s += fd.e[a * n + k] * d_omega[k][bcd];
            }
            ew[a * n * n * n + bcd] = s;
        }
    }
    let mut r = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut s = ew[a * n * n * n + idx(b, c, d)] - ew[b * n * n * n + idx(a, c, d)];
                    for e in 0..n {
                        s += w[idx(b, c, e)] * w[idx(a, e, d)] - w[idx(a, c, e)] * w[idx(b, e, d)]
                            - fd.c[idx(a, b, e)] * w[idx(e, c, d)];
                    }
                    r[((a * n + b) * n + c) * n + d] = s;
                }
            }
        }
    }
    r
}

fn levi_civita_curvature(fd: &FrameData<f64>, d_gamma: &[Vec<f64>]) -> Vec<f64> {
    let n = fd.n;
    let gm = |i: usize, j: usize, k: usize| fd.gamma[(i * n + j) * n + k];
    // R(∂_k, ∂_l)∂_j = R^i_jkl ∂_i
    let mut rc = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut s = d_gamma[k][(i * n + l) * n + j] - d_gamma[l][(i * n + k) * n + j];
                    for mm in 0..n {
                        s += gm(i, k, mm) * gm(mm, l, j) - gm(i, l, mm) * gm(mm, k, j);
                    }
                    rc[((i * n + j) * n + k) * n + l] = s;
                }
            }
        }
    }
    // frame version: ⟨R(e_A, e_B) e_C, e_D⟩
    let mut out = vec![0.0; n * n * n * n];
    let e = &fd.e;
    for a in 0..n {
        for b in 0..n {
            // t[i][j] = Σ_kl R^i_jkl e_A^k e_B^l
            let mut t = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        for l in 0..n {
                            s += rc[((i * n + j) * n + k) * n + l] * e[a * n + k] * e[b * n + l];
                        }
                    }
                    t[i * n + j] = s;
                }
            }
            for c in 0..n {
                for d in 0..n {
                    let mut s = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            s += fd.theta[d * n + i] * t[i * n + j] * e[c * n + j];
                        }
                    }
                    out[((a * n + b) * n + c) * n + d] = s;
                }
            }
        }
    }
    out
}

fn split_from_frame(geo: &PointGeometry, comps: &[f64]) -> SplitVector {
    let u = geo.coordinates(comps);
    geo.split(&u)
}

/// `D_X Y` at `p` for vector fields given as stencils.
pub fn levi_civita(chart: &FoliatedChart, p: &[f64], x: &FieldStencil, y: &FieldStencil) -> Result<SplitVector> {
    let geo = PointGeometry::first_order(chart, p)?;
    Ok(geo.split(&geo.levi_civita_fields(x, y)))
}

/// `C_X Y` at `p`.
pub fn c_tensor(chart: &FoliatedChart, p: &[f64], x: &[f64], y: &[f64]) -> Result<SplitVector> {
    let geo = PointGeometry::first_order(chart, p)?;
    let v = geo.c_frame(&geo.frame_components(x), &geo.frame_components(y));
    Ok(split_from_frame(&geo, &v))
}

/// `∇_X Y` at `p` for vector fields given as stencils.
pub fn nabla(chart: &FoliatedChart, p: &[f64], x: &FieldStencil, y: &FieldStencil) -> Result<SplitVector> {
    let geo = PointGeometry::first_order(chart, p)?;
    Ok(geo.split(&geo.nabla_fields(x, y)))
}

/// `Tor(X, Y)` at `p`.
pub fn torsion(chart: &FoliatedChart, p: &[f64], x: &[f64], y: &[f64]) -> Result<SplitVector> {
    let geo = PointGeometry::first_order(chart, p)?;
    let v = geo.torsion_frame(&geo.frame_components(x), &geo.frame_components(y));
    Ok(split_from_frame(&geo, &v))
}

/// `J_Z X` at `p`.
pub fn j_map(chart: &FoliatedChart, p: &[f64], z: &[f64], x: &[f64]) -> Result<SplitVector> {
    let geo = PointGeometry::first_order(chart, p)?;
    let v = geo.j_frame(&geo.frame_components(z), &geo.frame_components(x));
    Ok(split_from_frame(&geo, &v))
}

/// `R(X, Y) Z` at `p` for the adapted connection.
pub fn curvature_r(chart: &FoliatedChart, p: &[f64], x: &[f64], y: &[f64], z: &[f64]) -> Result<SplitVector> {
    let geo = PointGeometry::with_curvature(chart, p)?;
    let v = geo.curvature_frame(&geo.frame_components(x), &geo.frame_components(y), &geo.frame_components(z));
    Ok(split_from_frame(&geo, &v))
}

/// Curvature of both connections on one triple, with torsion of the first pair.
#[derive(Clone, Debug)]
pub struct CurvatureSample {
    pub point: Vec<f64>,
    pub inputs: [SplitVector; 3],
    pub value: SplitVector,
    pub sectional_nabla: f64,
    pub sectional_lc: f64,
    pub torsion_xy: SplitVector,
}

/// Evaluate [`CurvatureSample`] at `p`. Sectional values are for the
/// plane of `X, Y` and assume they are orthonormal.
pub fn curvature_sample(chart: &FoliatedChart, p: &[f64], x: &[f64], y: &[f64], z: &[f64]) -> Result<CurvatureSample> {
    let geo = PointGeometry::with_curvature(chart, p)?;
    let (xf, yf, zf) = (geo.frame_components(x), geo.frame_components(y), geo.frame_components(z));
    let r = geo.curvature_frame(&xf, &yf, &zf);
    let ryy = geo.curvature_frame(&xf, &yf, &yf);
    let ryy_lc = geo.curvature_lc_frame(&xf, &yf, &yf);
    Ok(CurvatureSample {
        point: p.to_vec(),
        inputs: [geo.split(x), geo.split(y), geo.split(z)],
        value: split_from_frame(&geo, &r),
        sectional_nabla: dot(&ryy, &xf),
        sectional_lc: dot(&ryy_lc, &xf),
        torsion_xy: split_from_frame(&geo, &geo.torsion_frame(&xf, &yf)),
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn orthonormal_horizontal_pair(geo: &PointGeometry, x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let xf = geo.frame_components(x);
    let yf = geo.frame_components(y);
    let nh = geo.dim_h;
    let vert = norm(&xf[nh..]).max(norm(&yf[nh..]));
    if vert > 1e-8 {
        return Err(GeometryError::NotHorizontal { vertical_norm: vert });
    }
    let defect = (dot(&xf, &xf) - 1.0).abs().max((dot(&yf, &yf) - 1.0).abs()).max(dot(&xf, &yf).abs());
    if defect > 1e-8 {
        return Err(GeometryError::NotOrthonormal { defect });
    }
    Ok((xf, yf))
}

/// `⟨R(X, Y) Y, X⟩` for an orthonormal horizontal pair.
pub fn transverse_sectional(chart: &FoliatedChart, p: &[f64], x: &[f64], y: &[f64]) -> Result<f64> {
    let geo = PointGeometry::with_curvature(chart, p)?;
    let (xf, yf) = orthonormal_horizontal_pair(&geo, x, y)?;
    Ok(dot(&geo.curvature_frame(&xf, &yf, &yf), &xf))
}

/// Terms of the comparison between the adapted and Levi-Civita sectional
/// curvatures of a horizontal plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OneillTerms {
    pub sectional_nabla: f64,
    pub sectional_lc: f64,
    pub torsion_norm_sq: f64,
    pub residual: f64,
}

pub(crate) fn oneill_terms(geo: &PointGeometry, xf: &[f64], yf: &[f64]) -> OneillTerms {
    let kn = dot(&geo.curvature_frame(xf, yf, yf), xf);
    let kl = dot(&geo.curvature_lc_frame(xf, yf, yf), xf);
    let t = geo.torsion_frame(xf, yf);
    let t2 = dot(&t, &t);
    OneillTerms { sectional_nabla: kn, sectional_lc: kl, torsion_norm_sq: t2, residual: kn - kl - 0.75 * t2 }
}

/// `⟨R(X,Y)Y,X⟩ − K_LC(X,Y) − ¾|Tor(X,Y)|²` for an orthonormal horizontal pair.
pub fn oneill_check(chart: &FoliatedChart, p: &[f64], x: &[f64], y: &[f64]) -> Result<OneillTerms> {
    let geo = PointGeometry::with_curvature(chart, p)?;
    let (xf, yf) = orthonormal_horizontal_pair(&geo, x, y)?;
    Ok(oneill_terms(&geo, &xf, &yf))
}

/// Mean curvature vector of the leaf through `p`: horizontal part of
/// `Σ_a D_{Z_a} Z_a` over an orthonormal vertical frame, not divided by `m`.
pub fn mean_curvature(chart: &FoliatedChart, p: &[f64]) -> Result<SplitVector> {
    let geo = PointGeometry::first_order(chart, p)?;
    Ok(split_from_frame(&geo, &geo.mean_curvature_frame()))
}

/// Largest residual of each structural identity over random samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StructureReport {
    pub samples: usize,
    pub levi_civita_relation: f64,
    pub metric_compatibility: f64,
    pub torsion_vertical: f64,
    pub torsion_case_formula: f64,
    pub j_skew: f64,
    pub mixed_curvature: f64,
    pub bianchi_horizontal: f64,
    pub block_preservation: f64,
    pub curvature_antisymmetry: f64,
}

impl StructureReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.levi_civita_relation,
            self.metric_compatibility,
            self.torsion_vertical,
            self.torsion_case_formula,
            self.j_skew,
            self.mixed_curvature,
            self.bianchi_horizontal,
            self.block_preservation,
            self.curvature_antisymmetry,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("levi_civita_relation", self.levi_civita_relation),
            ("metric_compatibility", self.metric_compatibility),
            ("torsion_vertical", self.torsion_vertical),
            ("torsion_case_formula", self.torsion_case_formula),
            ("j_skew", self.j_skew),
            ("mixed_curvature", self.mixed_curvature),
            ("bianchi_horizontal", self.bianchi_horizontal),
            ("block_preservation", self.block_preservation),
            ("curvature_antisymmetry", self.curvature_antisymmetry),
        ]
    }
}

fn random_stencil(rng: &mut impl Rng, n: usize) -> FieldStencil {
    FieldStencil {
        value: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        jacobian: (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

fn random_frame_vector(rng: &mut impl Rng, n: usize, range: std::ops::Range<usize>) -> Vec<f64> {
    (0..n).map(|a| if range.contains(&a) { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect()
}

/// Check the structural identities of the adapted connection on
/// `sample_count` random points of the chart's sample box.
pub fn verify_structure_identities(chart: &FoliatedChart, sample_count: usize, seed: u64) -> Result<StructureReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = chart.dim_total();
    let nh = chart.dim_horizontal();
    let mut rep = StructureReport { samples: sample_count, ..Default::default() };
    let upd = |slot: &mut f64, v: f64| {
        if !(v <= *slot) {
            *slot = v;
        }
    };
    for _ in 0..sample_count {
        let p = chart.sample_box().sample(&mut rng);
        let geo = PointGeometry::with_curvature(chart, &p)?;
        let x = random_stencil(&mut rng, n);
        let y = random_stencil(&mut rng, n);
        let z = random_stencil(&mut rng, n);
        let (xf, yf) = (geo.frame_components(&x.value), geo.frame_components(&y.value));

        // ∇_X Y = D_X Y + ½Tor(X,Y) − ½J_X Y − ½J_Y X
        let nab = geo.frame_components(&geo.nabla_fields(&x, &y));
        let lc = geo.frame_components(&geo.levi_civita_fields(&x, &y));
        let tor = geo.torsion_frame(&xf, &yf);
        let jxy = geo.j_frame(&xf, &yf);
        let jyx = geo.j_frame(&yf, &xf);
        let rel: Vec<f64> = (0..n).map(|a| nab[a] - lc[a] - 0.5 * tor[a] + 0.5 * jxy[a] + 0.5 * jyx[a]).collect();
        upd(&mut rep.levi_civita_relation, norm(&rel));

        // X⟨Y,Z⟩ − ⟨∇_X Y, Z⟩ − ⟨Y, ∇_X Z⟩
        let mut xyz = 0.0;
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    xyz += x.value[j]
                        * (geo.metric_derivatives[(j * n + k) * n + l] * y.value[k] * z.value[l]
                            + geo.metric[k * n + l] * (y.jacobian[j * n + k] * z.value[l] + y.value[k] * z.jacobian[j * n + l]));
                }
            }
        }
        let nxy = geo.nabla_fields(&x, &y);
        let nxz = geo.nabla_fields(&x, &z);
        upd(&mut rep.metric_compatibility, (xyz - geo.inner(&nxy, &z.value) - geo.inner(&y.value, &nxz)).abs());

        // torsion from its definition against the case formula
        let nyx = geo.nabla_fields(&y, &x);
        let br = x.bracket(&y);
        let generic: Vec<f64> = (0..n).map(|k| nxy[k] - nyx[k] - br[k]).collect();
        let gf = geo.frame_components(&generic);
        upd(&mut rep.torsion_vertical, norm(&gf[..nh]));
        let diff: Vec<f64> = gf.iter().zip(&tor).map(|(a, b)| a - b).collect();
        upd(&mut rep.torsion_case_formula, norm(&diff));

        // ⟨J_Z X, Y⟩ + ⟨J_Z Y, X⟩
        let zf = geo.frame_components(&z.value);
        upd(&mut rep.j_skew, (dot(&geo.j_frame(&zf, &xf), &yf) + dot(&geo.j_frame(&zf, &yf), &xf)).abs());

        // R(V, H)H = 0
        let hv = random_frame_vector(&mut rng, n, 0..nh);
        let vv = random_frame_vector(&mut rng, n, nh..n);
        upd(&mut rep.mixed_curvature, norm(&geo.curvature_frame(&vv, &hv, &hv)));

        // horizontal part of the cyclic sum
        let a = random_frame_vector(&mut rng, n, 0..n);
        let b = random_frame_vector(&mut rng, n, 0..n);
        let c = random_frame_vector(&mut rng, n, 0..n);
        let r1 = geo.curvature_frame(&a, &b, &c);
        let r2 = geo.curvature_frame(&b, &c, &a);
        let r3 = geo.curvature_frame(&c, &a, &b);
        let cyc: Vec<f64> = (0..nh).map(|i| r1[i] + r2[i] + r3[i]).collect();
        upd(&mut rep.bianchi_horizontal, norm(&cyc));

        // R(X,Y) keeps the split and is skew in the last pair
        let rh = geo.curvature_frame(&a, &b, &hv);
        let rv = geo.curvature_frame(&a, &b, &vv);
        upd(&mut rep.block_preservation, norm(&rh[nh..]).max(norm(&rv[..nh])));
        let d = random_frame_vector(&mut rng, n, 0..n);
        let skew = dot(&r1, &d) + dot(&geo.curvature_frame(&a, &b, &d), &c);
        let anti: Vec<f64> = r1.iter().zip(geo.curvature_frame(&b, &a, &c)).map(|(u, v)| u + v).collect();
        upd(&mut rep.curvature_antisymmetry, skew.abs().max(norm(&anti)));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::build_default;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    fn heisenberg_frame_fields(p: &[f64]) -> (FieldStencil, FieldStencil) {
        let mut jx = vec![0.0; 9];
        jx[3 + 2] = -0.5;
        let mut jy = vec![0.0; 9];
        jy[2] = 0.5;
        (
            FieldStencil { value: vec![1.0, 0.0, -p[1] / 2.0], jacobian: jx },
            FieldStencil { value: vec![0.0, 1.0, p[0] / 2.0], jacobian: jy },
        )
    }

    #[test]
    fn heisenberg_levi_civita_of_frame_is_half_bracket() {
        let chart = build_default("heisenberg").unwrap().chart;
        let p = [0.0; 3];
        let (x, y) = heisenberg_frame_fields(&p);
        let d = levi_civita(&chart, &p, &x, &y).unwrap();
        close(&d.components, &[0.0, 0.0, 0.5], 1e-14);
    }

    #[test]
    fn heisenberg_nabla_of_x_along_x_vanishes() {
        let chart = build_default("heisenberg").unwrap().chart;
        let p = [0.7, -0.3, 1.1];
        let (x, _) = heisenberg_frame_fields(&p);
        close(&nabla(&chart, &p, &x, &x).unwrap().components, &[0.0; 3], 1e-14);
    }

    #[test]
    fn half_plane_christoffel() {
        let chart = build_default("hyperbolic_product").unwrap().chart;
        let dx = FieldStencil::constant(vec![1.0, 0.0, 0.0]);
        let d = levi_civita(&chart, &[0.0, 1.0, 0.0], &dx, &dx).unwrap();
        close(&d.components, &[0.0, 1.0, 0.0], 1e-14);
    }

    #[test]
    fn heisenberg_torsion_and_j() {
        let chart = build_default("heisenberg").unwrap().chart;
        let p = [1.0, 2.0, -0.5];
        let x = [1.0, 0.0, -1.0];
        let y = [0.0, 1.0, 0.5];
        let z = [0.0, 0.0, 1.0];
        close(&torsion(&chart, &p, &x, &y).unwrap().components, &[0.0, 0.0, -1.0], 1e-13);
        close(&j_map(&chart, &p, &z, &x).unwrap().components, &[0.0, -1.0, -0.5], 1e-13);
        close(&j_map(&chart, &p, &z, &y).unwrap().components, &[1.0, 0.0, -1.0], 1e-13);
        close(&c_tensor(&chart, &p, &x, &z).unwrap().components, &[0.0; 3], 1e-14);
    }

    #[test]
    fn sol_c_tensor() {
        let chart = build_default("sol").unwrap().chart;
        let p = [0.2, -0.4, 0.6];
        let c = c_tensor(&chart, &p, &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]).unwrap();
        close(&c.components, &[1.0, 0.0, 0.0], 1e-13);
        let geo = PointGeometry::first_order(&chart, &p).unwrap();
        assert!((geo.inner(&c.components, &[1.0, 0.0, 0.0]) - (2.0 * p[2]).exp()).abs() < 1e-12);
        // vertical first argument, horizontal second: both vanish
        close(&c_tensor(&chart, &p, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap().components, &[0.0; 3], 1e-14);
        close(&c_tensor(&chart, &p, &[0.0, 0.0, 1.0], &[0.0, 0.0, 2.0]).unwrap().components, &[0.0; 3], 1e-14);
    }

    #[test]
    fn sectional_curvatures_of_models() {
        let h = build_default("hyperbolic_product").unwrap().chart;
        let p = [0.3, 1.7, -0.2];
        let k = transverse_sectional(&h, &p, &[1.7, 0.0, 0.0], &[0.0, 1.7, 0.0]).unwrap();
        assert!((k + 1.0).abs() < 1e-10, "{k}");
        let s = build_default("sphere_product").unwrap().chart;
        let p = [0.4, -0.1, 0.0];
        let w = (1.0 + 0.16 + 0.01) / 2.0;
        let k = transverse_sectional(&s, &p, &[w, 0.0, 0.0], &[0.0, w, 0.0]).unwrap();
        assert!((k - 1.0).abs() < 1e-10, "{k}");
        let e = build_default("euclidean_product").unwrap().chart;
        let k = transverse_sectional(&e, &[0.1, 0.2, 0.3], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(k, 0.0);
    }

    #[test]
    fn heisenberg_oneill_terms() {
        let chart = build_default("heisenberg").unwrap().chart;
        let p = [0.5, -1.0, 0.3];
        let t = oneill_check(&chart, &p, &[1.0, 0.0, 0.5], &[0.0, 1.0, 0.25]).unwrap();
        assert!(t.sectional_nabla.abs() < 1e-12);
        assert!((t.sectional_lc + 0.75).abs() < 1e-12);
        assert!((t.torsion_norm_sq - 1.0).abs() < 1e-12);
        assert!(t.residual.abs() < 1e-12);
    }

    #[test]
    fn sectional_rejects_bad_pairs() {
        let chart = build_default("heisenberg").unwrap().chart;
        let p = [0.0; 3];
        assert!(matches!(
            transverse_sectional(&chart, &p, &[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0]),
            Err(GeometryError::NotHorizontal { .. })
        ));
        assert!(matches!(
            transverse_sectional(&chart, &p, &[2.0, 0.0, 0.0], &[0.0, 1.0, 0.0]),
            Err(GeometryError::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn mean_curvature_of_models() {
        let norm_at = |id: &str, p: &[f64]| {
            let chart = build_default(id).unwrap().chart;
            let h = mean_curvature(&chart, p).unwrap();
            let geo = PointGeometry::first_order(&chart, p).unwrap();
            geo.inner(&h.components, &h.components).sqrt()
        };
        assert!(norm_at("sol", &[0.1, 0.2, 0.3]) < 1e-12);
        assert!(norm_at("heisenberg", &[0.1, 0.2, 0.3]) < 1e-12);
        assert!((norm_at("horosphere_h3", &[0.1, 0.2, 1.3]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_curvature_vanishes_on_heisenberg() {
        let chart = build_default("heisenberg").unwrap().chart;
        let p = [0.3, 0.4, 0.0];
        let x = [1.0, 0.0, -0.2];
        let r = curvature_r(&chart, &p, &[0.0, 0.0, 1.0], &x, &x).unwrap();
        close(&r.components, &[0.0; 3], 1e-12);
    }

    #[test]
    fn structure_identities_hold_on_product() {
        let chart = build_default("hyperbolic_product").unwrap().chart;
        let rep = verify_structure_identities(&chart, 20, 3).unwrap();
        assert!(rep.max_residual() < 1e-9, "{rep:?}");
    }

    #[test]
    fn torsion_from_definition_matches_case_formula_on_sol() {
        let chart = build_default("sol").unwrap().chart;
        let rep = verify_structure_identities(&chart, 20, 5).unwrap();
        assert!(rep.torsion_case_formula < 1e-10, "{rep:?}");
        assert!(rep.max_residual() < 1e-9, "{rep:?}");
    }

    #[test]
    fn frame_derivatives_feed_consistent_brackets() {
        // [e_A, e_B] antisymmetric, frame orthonormal
        let chart = build_default("heisenberg").unwrap().chart;
        let geo = PointGeometry::first_order(&chart, &[0.4, 0.9, -0.2]).unwrap();
        let n = geo.dim;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let i = (a * n + b) * n + c;
                    let j = (b * n + a) * n + c;
                    assert!((geo.brackets[i] + geo.brackets[j]).abs() < 1e-13);
                    // metric: ω antisymmetric in the last two slots
                    let k = (a * n + c) * n + b;
                    assert!((geo.gamma_nabla[i] + geo.gamma_nabla[k]).abs() < 1e-13);
                }
            }
        }
    }
}
