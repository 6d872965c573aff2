//! Adaptive Dormand–Prince 5(4) integration with PI step control and cubic
//! Hermite dense output.

use crate::error::{GeometryError, Result};

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One accepted state with its derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
}

/// Dense trajectory: accepted samples joined by cubic Hermite pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn t_start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn t_end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Interpolated state and derivative at `t`, clamped to the covered span.
    pub fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let s = &self.samples;
        let t = t.clamp(self.t_start(), self.t_end());
        let i = match s.binary_search_by(|p| p.t.partial_cmp(&t).unwrap()) {
            Ok(i) => return (s[i].y.clone(), s[i].dy.clone()),
            Err(i) => i.max(1) - 1,
        };
        let (a, b) = (&s[i], &s[i + 1]);
        hermite(a, b, t)
    }
}

fn hermite(a: &Sample, b: &Sample, t: f64) -> (Vec<f64>, Vec<f64>) {
    let h = b.t - a.t;
    let s = (t - a.t) / h;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let d00 = (6.0 * s2 - 6.0 * s) / h;
    let d10 = 3.0 * s2 - 4.0 * s + 1.0;
    let d01 = (-6.0 * s2 + 6.0 * s) / h;
    let d11 = 3.0 * s2 - 2.0 * s;
    let n = a.y.len();
    let mut y = vec![0.0; n];
    let mut dy = vec![0.0; n];
    for i in 0..n {
        y[i] = h00 * a.y[i] + h * h10 * a.dy[i] + h01 * b.y[i] + h * h11 * b.dy[i];
        dy[i] = d00 * a.y[i] + d10 * a.dy[i] + d01 * b.y[i] + d11 * b.dy[i];
    }
    (y, dy)
}

/// Integrator settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on accepted steps, which also bounds dense-output error.
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5 { rtol: 1e-10, atol: 1e-10, max_step: f64::INFINITY, max_steps: 2_000_000 }
    }
}

impl Dopri5 {
    pub fn with_tol(tol: f64) -> Self {
        Dopri5 { rtol: tol, atol: tol, ..Default::default() }
    }

    pub fn max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }

    fn err_norm(&self, y0: &[f64], y1: &[f64], err: &[f64]) -> f64 {
        let n = y0.len() as f64;
        let s: f64 = (0..y0.len())
            .map(|i| {
                let sc = self.atol + self.rtol * y0[i].abs().max(y1[i].abs());
                (err[i] / sc).powi(2)
            })
            .sum();
        (s / n).sqrt()
    }

    /// Integrate `y' = f(t, y)` from `t0` to `t_end`. `accept` vets every
    /// accepted state and may abort the run with its own error.
    pub fn integrate<F, G>(&self, mut f: F, t0: f64, y0: &[f64], t_end: f64, mut accept: G) -> Result<Trajectory>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
        G: FnMut(f64, &[f64]) -> Result<()>,
    {
        let n = y0.len();
        let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
        let mut y = y0.to_vec();
        let mut t = t0;
        f(t, &y, &mut k[0]);
        let mut samples = vec![Sample { t, y: y.clone(), dy: k[0].clone() }];
        if t_end == t0 {
            return Ok(Trajectory { samples });
        }
        let dir = (t_end - t0).signum();
        let span = (t_end - t0).abs();
        let mut h = self.initial_step(&mut f, t, &y, &k[0], dir).min(span).min(self.max_step);
        let mut facold: f64 = 1e-4;
        let mut ynew = vec![0.0; n];
        let mut ystage = vec![0.0; n];
        let mut err = vec![0.0; n];
        let mut reject = false;
        for _ in 0..self.max_steps {
            let remaining = (t_end - t) * dir;
            if remaining <= 1e-14 * span.max(1.0) {
                return Ok(Trajectory { samples });
            }
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(GeometryError::StepFailure { t });
            }
            let hs = h * dir;
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..s {
                        acc += A[s][j] * k[j][i];
                    }
                    ystage[i] = y[i] + hs * acc;
                }
                let (head, tail) = k.split_at_mut(s);
                let _ = head;
                f(t + C[s] * hs, &ystage, &mut tail[0]);
            }
            // the seventh stage is evaluated at the fifth-order solution
            ynew.copy_from_slice(&ystage);
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..7 {
                    acc += E[j] * k[j][i];
                }
                err[i] = hs * acc;
            }
            let finite = ynew.iter().chain(k[6].iter()).all(|v| v.is_finite());
            let en = if finite { self.err_norm(&y, &ynew, &err) } else { f64::INFINITY };
            if en <= 1.0 {
                let tn = if last { t_end } else { t + hs };
                accept(tn, &ynew)?;
                let fac11 = en.max(1e-16).powf(0.2 - 0.04 * 0.75);
                let fac = (fac11 / facold.powf(0.04) / 0.9).clamp(0.1, 5.0);
                let mut hnew = (h / fac).min(self.max_step);
                if reject {
                    hnew = hnew.min(h);
                }
                facold = en.max(1e-4);
                t = tn;
                y.copy_from_slice(&ynew);
                let last_k = k[6].clone();
                k[0].copy_from_slice(&last_k);
                samples.push(Sample { t, y: y.clone(), dy: k[0].clone() });
                h = hnew;
                reject = false;
            } else {
                let shrink = if en.is_finite() { (en.powf(0.2 - 0.04 * 0.75) / 0.9).min(5.0) } else { 5.0 };
                h /= shrink.max(1.0 / 0.9);
                reject = true;
            }
        }
        Err(GeometryError::StepFailure { t })
    }

    fn initial_step<F: FnMut(f64, &[f64], &mut [f64])>(&self, f: &mut F, t: f64, y: &[f64], f0: &[f64], dir: f64) -> f64 {
        let n = y.len();
        let sc: Vec<f64> = y.iter().map(|v| self.atol + self.rtol * v.abs()).collect();
        let rms = |v: &[f64]| ((0..n).map(|i| (v[i] / sc[i]).powi(2)).sum::<f64>() / n as f64).sqrt();
        let (d0, d1) = (rms(y), rms(f0));
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(self.max_step);
        let y1: Vec<f64> = (0..n).map(|i| y[i] + dir * h0 * f0[i]).collect();
        let mut f1 = vec![0.0; n];
        f(t + dir * h0, &y1, &mut f1);
        let diff: Vec<f64> = (0..n).map(|i| f1[i] - f0[i]).collect();
        let d2 = rms(&diff) / h0;
        let h1 = if !d2.is_finite() {
            h0
        } else if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).max(1e-12)
    }
}

/// One classical Runge–Kutta step of a linear or nonlinear system.
pub(crate) fn rk4_step<F>(mut f: F, t: f64, y: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let n = y.len();
    let k1 = f(t, y);
    let y2: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k1[i]).collect();
    let k2 = f(t + 0.5 * h, &y2);
    let y3: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k2[i]).collect();
    let k3 = f(t + 0.5 * h, &y3);
    let y4: Vec<f64> = (0..n).map(|i| y[i] + h * k3[i]).collect();
    let k4 = f(t + h, &y4);
    (0..n).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_to_tolerance() {
        let traj = Dopri5::with_tol(1e-11)
            .integrate(|_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            }, 0.0, &[0.0, 1.0], 10.0, |_, _| Ok(()))
            .unwrap();
        let last = traj.samples.last().unwrap();
        assert_eq!(last.t, 10.0);
        assert!((last.y[0] - 10f64.sin()).abs() < 1e-9);
        assert!((last.y[1] - 10f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn dense_output_with_capped_step() {
        let traj = Dopri5::with_tol(1e-12)
            .max_step(0.01)
            .integrate(|_, y, dy| dy[0] = y[0], 0.0, &[1.0], 2.0, |_, _| Ok(()))
            .unwrap();
        // cubic Hermite: error at most h^4 max|y''''| / 384
        for t in [0.0033, 0.51234, 1.9999] {
            let (y, dy) = traj.eval(t);
            assert!((y[0] - f64::exp(t)).abs() < 3e-11 * f64::exp(t));
            assert!((dy[0] - f64::exp(t)).abs() < 1e-7 * f64::exp(t));
        }
    }

    #[test]
    fn backward_integration() {
        let traj = Dopri5::with_tol(1e-10)
            .integrate(|_, y, dy| dy[0] = -y[0], 1.0, &[1.0], 0.0, |_, _| Ok(()))
            .unwrap();
        assert!((traj.samples.last().unwrap().y[0] - 1f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn accept_hook_aborts() {
        let r = Dopri5::default().integrate(|_, _, dy| dy[0] = 1.0, 0.0, &[0.0], 5.0, |t, y| {
            if y[0] > 1.0 {
                Err(GeometryError::LeftDomain { t })
            } else {
                Ok(())
            }
        });
        assert!(matches!(r, Err(GeometryError::LeftDomain { .. })));
    }

    #[test]
    fn blow_up_reports_step_failure() {
        // y' = y², y(0)=1 blows up at t = 1
        let r = Dopri5::with_tol(1e-8).integrate(|_, y, dy| dy[0] = y[0] * y[0], 0.0, &[1.0], 2.0, |_, _| Ok(()));
        assert!(matches!(r, Err(GeometryError::StepFailure { .. })), "{r:?}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let run = |h: f64| {
            let mut y = vec![1.0];
            let mut t = 0.0;
            while t < 1.0 - 1e-12 {
                y = rk4_step(|_, y| vec![y[0]], t, &y, h);
                t += h;
            }
            (y[0] - 1f64.exp()).abs()
        };
        let ratio = run(0.1) / run(0.05);
        assert!(ratio > 14.0 && ratio < 18.0, "{ratio}");
    }
}
