//! Classical fixed-step RK4 with step-doubling level selection.

use serde::{Deserialize, Serialize};

use crate::linalg;

/// Default tolerance for the step-doubling error estimate.
pub const DEFAULT_TOL_ODE: f64 = 1e-10;

/// Right-hand side `dy = f(t, y)`.
pub trait Rhs {
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

impl<F: Fn(f64, &[f64], &mut [f64])> Rhs for F {
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        self(t, y, dy)
    }
}

/// Fixed-step RK4 driver that picks `2^k` substeps per interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Integrator {
    /// Accept level `k` once `|y_{k} − y_{k−1}| ≤ tol · max(|y_k|, 1)`.
    pub tol: f64,
    pub min_level: u32,
    pub max_level: u32,
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator {
            tol: DEFAULT_TOL_ODE,
            min_level: 3,
            max_level: 14,
        }
    }
}

/// Outcome of [`Integrator::solve`].
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub level: u32,
    pub endpoint: Vec<f64>,
    pub err_estimate: f64,
    pub converged: bool,
}

impl Solution {
    pub fn steps(&self) -> usize {
        1 << self.level
    }
}

impl Integrator {
    pub fn with_tol(tol: f64) -> Self {
        Integrator {
            tol,
            ..Default::default()
        }
    }

    /// Integrates over `[t0, t0 + duration]`, doubling the step count until
    /// successive endpoints agree to `tol`.
    pub fn solve<F: Rhs + ?Sized>(&self, f: &F, t0: f64, y0: &[f64], duration: f64) -> Solution {
        let mut prev = run_fixed(f, t0, y0, duration, 1 << self.min_level, |_, _| {});
        let mut level = self.min_level;
        let mut err = f64::INFINITY;
        while level < self.max_level {
            level += 1;
            let next = run_fixed(f, t0, y0, duration, 1 << level, |_, _| {});
            err = linalg::dist(&next, &prev);
            prev = next;
            if err <= self.tol * linalg::norm(&prev).max(1.0) {
                return Solution {
                    level,
                    endpoint: prev,
                    err_estimate: err,
                    converged: true,
                };
            }
        }
        Solution {
            level,
            endpoint: prev,
            err_estimate: err,
            converged: false,
        }
    }
}

/// One RK4 step of size `h` from `(t, y)`, in place.
pub fn rk4_step<F: Rhs + ?Sized>(f: &F, t: f64, y: &mut [f64], h: f64, work: &mut RkWork) {
    let n = y.len();
    work.ensure(n);
    let RkWork { k1, k2, k3, k4, tmp } = work;
    f.eval(t, y, k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f.eval(t + 0.5 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f.eval(t + 0.5 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f.eval(t + h, tmp, k4);
    for i in 0..n {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Scratch buffers for [`rk4_step`].
#[derive(Default, Debug, Clone)]
pub struct RkWork {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl RkWork {
    fn ensure(&mut self, n: usize) {
        for v in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
            v.resize(n, 0.0);
        }
    }
}

/// `steps` equal RK4 steps over `[t0, t0 + duration]`; `observe` sees the
/// state at every node including both ends.
pub fn run_fixed<F: Rhs + ?Sized>(
    f: &F,
    t0: f64,
    y0: &[f64],
    duration: f64,
    steps: usize,
    mut observe: impl FnMut(f64, &[f64]),
) -> Vec<f64> {
    let mut y = y0.to_vec();
    let h = duration / steps as f64;
    let mut work = RkWork::default();
    observe(t0, &y);
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        rk4_step(f, t, &mut y, h, &mut work);
        // node times computed from the index so the final node is exactly t0 + duration
        let tn = if s + 1 == steps {
            t0 + duration
        } else {
            t0 + (s + 1) as f64 * h
        };
        observe(tn, &y);
    }
    y
}
