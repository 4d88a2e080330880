//! Independent reference solvers: projected SOR for 1D obstacle problems
//! and central finite differences.

use crate::{Error, Result};

/// Uniform grid on `[a, b]` with `n` interior nodes and zero Dirichlet data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if n < 3 || !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid needs a < b and n >= 3 (a {a}, b {b}, n {n})"
            )));
        }
        Ok(Self { a, b, n })
    }

    pub fn h(&self) -> f64 {
        (self.b - self.a) / (self.n + 1) as f64
    }

    /// Interior node `i` in `0..n`.
    pub fn node(&self, i: usize) -> f64 {
        self.a + (i + 1) as f64 * self.h()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsorOptions {
    pub omega: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PsorOptions {
    fn default() -> Self {
        Self {
            omega: 1.5,
            tol: 1e-10,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsorSolution {
    pub grid: Grid1D,
    /// Values at the interior nodes.
    pub u: Vec<f64>,
    pub sweeps: usize,
    /// Max-norm change of the last sweep.
    pub last_change: f64,
    /// Discrete energy recorded every 100 sweeps, starting at the initial
    /// guess.
    pub energy_trace: Vec<f64>,
}

impl PsorSolution {
    /// Piecewise-linear interpolant, zero at the endpoints.
    pub fn interpolate(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x <= g.a || x >= g.b {
            return 0.0;
        }
        let s = (x - g.a) / g.h();
        let k = (s.floor() as usize).min(g.n);
        let t = s - k as f64;
        let at = |j: usize| if j == 0 || j == g.n + 1 { 0.0 } else { self.u[j - 1] };
        (1.0 - t) * at(k) + t * at(k + 1)
    }
}

/// Discrete energy `Σ (u_{i+1} - u_i)² / (2h) - h Σ f_i u_i`.
pub fn discrete_energy(grid: &Grid1D, f: &[f64], u: &[f64]) -> f64 {
    let h = grid.h();
    let n = grid.n;
    let mut e = 0.0;
    for i in 0..=n {
        let left = if i == 0 { 0.0 } else { u[i - 1] };
        let right = if i == n { 0.0 } else { u[i] };
        e += (right - left).powi(2) / (2.0 * h);
    }
    e - h * f.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
}

/// Projected SOR for `min{-u'' - f, u - g} = 0` with `u(a) = u(b) = 0`.
pub fn psor_1d(
    grid: &Grid1D,
    f: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
    opts: PsorOptions,
) -> Result<PsorSolution> {
    if !(opts.omega > 0.0 && opts.omega < 2.0) || !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidArgument(format!(
            "need omega in (0, 2), tol > 0, max_iter > 0 (got {opts:?})"
        )));
    }
    let n = grid.n;
    let h2 = grid.h() * grid.h();
    let xs = grid.nodes();
    let fv: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let gv: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
    let mut u: Vec<f64> = gv.iter().map(|&gi| gi.max(0.0)).collect();
    let mut trace = vec![discrete_energy(grid, &fv, &u)];
    let mut change = f64::INFINITY;
    for sweep in 1..=opts.max_iter {
        change = 0.0f64;
        for i in 0..n {
            let left = if i == 0 { 0.0 } else { u[i - 1] };
            let right = if i + 1 == n { 0.0 } else { u[i + 1] };
            let gs = 0.5 * (left + right + h2 * fv[i]);
            let new = ((1.0 - opts.omega) * u[i] + opts.omega * gs).max(gv[i]);
            change = change.max((new - u[i]).abs());
            u[i] = new;
        }
        if sweep % 100 == 0 {
            trace.push(discrete_energy(grid, &fv, &u));
        }
        if change <= opts.tol {
            return Ok(PsorSolution {
                grid: *grid,
                u,
                sweeps: sweep,
                last_change: change,
                energy_trace: trace,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual: change,
    })
}

/// Central-difference gradient of `loss` at `theta`.
pub fn fd_gradient(
    mut loss: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let mut t = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        t[i] = theta[i] + step;
        let plus = loss(&t);
        t[i] = theta[i] - step;
        let minus = loss(&t);
        t[i] = theta[i];
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}
