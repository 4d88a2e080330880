//! Benchmark obstacle problems and Monte-Carlo error metrics.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::admissible::{LiftConfig, TripleField};
use crate::geometry::{norm, unit_sphere_area, Domain};
use crate::stats::pairwise_sum;
use crate::{Error, Result};

/// Names accepted by [`benchmark`].
pub const BENCHMARKS: [&str; 5] = [
    "radial-d1",
    "radial-d2",
    "radial-d10",
    "radial-d20",
    "slit-2peaks",
];

/// Closed-form solution data at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPoint {
    pub u: f64,
    pub grad_u: Vec<f64>,
    /// Lagrange multiplier `-Δu - f`.
    pub lambda: f64,
    pub laplacian: f64,
    /// `u - g`, computed without cancellation on the contact set.
    pub gap: f64,
    pub grad_gap: Vec<f64>,
}

/// An obstacle problem `min{-Δu - f, u - g} = 0` with zero boundary data.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;
    fn domain(&self) -> &Domain;
    fn source(&self, x: &[f64]) -> f64;
    /// Obstacle value and gradient.
    fn obstacle(&self, x: &[f64]) -> (f64, Vec<f64>);

    fn exact(&self, _x: &[f64]) -> Option<ExactPoint> {
        None
    }

    fn has_exact(&self) -> bool {
        false
    }

    fn surrogate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.domain().surrogate_dist_grad(x)
    }
}

/// Build a named benchmark.
pub fn benchmark(name: &str) -> Result<Box<dyn Problem>> {
    Ok(match name {
        "radial-d1" => Box::new(RadialBenchmark::new(1, 0.5, 1.0)?),
        "radial-d2" => Box::new(RadialBenchmark::new(2, 0.5, 1.0)?),
        "radial-d10" => Box::new(RadialBenchmark::new(10, 0.7, 2.0)?),
        "radial-d20" => Box::new(RadialBenchmark::new(20, 0.9, 2.0)?),
        "slit-2peaks" => Box::new(SlitTwoPeaks::new()),
        other => return Err(Error::UnknownBenchmark(other.to_string())),
    })
}

/// Fundamental solution of `-Δ` as a function of the radius: value and
/// radial derivative.
pub fn fundamental_solution(d: usize, r: f64) -> Result<(f64, f64)> {
    if d == 0 || !(r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "fundamental solution needs d >= 1 and r > 0 (d {d}, r {r})"
        )));
    }
    Ok(match d {
        1 => (-r / 2.0, -0.5),
        2 => {
            let c = 1.0 / (2.0 * std::f64::consts::PI);
            (-r.ln() * c, -c / r)
        }
        _ => {
            let area = unit_sphere_area(d);
            let value = r.powi(2 - d as i32) / ((d - 2) as f64 * area);
            let slope = -r.powi(1 - d as i32) / area;
            (value, slope)
        }
    })
}

#[cfg(test)]
fn fundamental_second_derivative(d: usize, r: f64) -> f64 {
    match d {
        1 => 0.0,
        2 => 1.0 / (2.0 * std::f64::consts::PI * r * r),
        _ => (d - 1) as f64 * r.powi(-(d as i32)) / unit_sphere_area(d),
    }
}

/// Quartic `Q(r) = qa r^4 + qb r^2 + qc` matching the fundamental solution
/// in value and slope at `r0` and vanishing at `R0`.
pub fn solve_radial_coeffs(d: usize, r0: f64, big_r: f64) -> Result<(f64, f64, f64)> {
    if !(0.0 < r0 && r0 < big_r) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < r0 < R0 (r0 {r0}, R0 {big_r})"
        )));
    }
    let (f0, df0) = fundamental_solution(d, r0)?;
    let (f_big, _) = fundamental_solution(d, big_r)?;
    let m = Matrix3::new(
        r0.powi(4),
        r0 * r0,
        1.0,
        4.0 * r0.powi(3),
        2.0 * r0,
        0.0,
        big_r.powi(4),
        big_r * big_r,
        1.0,
    );
    let rhs = Vector3::new(f0 - f_big, df0, 0.0);
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidArgument("singular radial coefficient system".into()))?;
    Ok((sol[0], sol[1], sol[2]))
}

/// Radially symmetric obstacle problem on a ball with known solution.
#[derive(Debug, Clone)]
pub struct RadialBenchmark {
    name: String,
    domain: Domain,
    pub d: usize,
    pub r0: f64,
    pub big_r: f64,
    pub qa: f64,
    pub qb: f64,
    pub qc: f64,
}

impl RadialBenchmark {
    pub fn new(d: usize, r0: f64, big_r: f64) -> Result<Self> {
        let (qa, qb, qc) = solve_radial_coeffs(d, r0, big_r)?;
        Ok(Self {
            name: format!("radial-d{d}"),
            domain: Domain::Ball { dim: d, radius: big_r },
            d,
            r0,
            big_r,
            qa,
            qb,
            qc,
        })
    }

    pub fn q(&self, r: f64) -> f64 {
        let r2 = r * r;
        (self.qa * r2 + self.qb) * r2 + self.qc
    }

    pub fn dq(&self, r: f64) -> f64 {
        (4.0 * self.qa * r * r + 2.0 * self.qb) * r
    }

    /// `Q'(r) / r`, regular at the origin.
    fn dq_over_r(&self, r: f64) -> f64 {
        4.0 * self.qa * r * r + 2.0 * self.qb
    }

    fn laplacian_q(&self, r: f64) -> f64 {
        let q2 = 12.0 * self.qa * r * r + 2.0 * self.qb;
        q2 + (self.d - 1) as f64 * self.dq_over_r(r)
    }

    /// Radial profile of the exact solution.
    pub fn u_radial(&self, r: f64) -> f64 {
        if r <= self.r0 {
            self.q(r)
        } else {
            self.outer(r) - self.outer(self.big_r)
        }
    }

    /// Radial profile of the exact multiplier `-ΔQ` on the contact set.
    pub fn lambda_radial(&self, r: f64) -> f64 {
        if r <= self.r0 {
            -self.laplacian_q(r)
        } else {
            0.0
        }
    }

    fn outer(&self, r: f64) -> f64 {
        fundamental_solution(self.d, r).expect("r > 0").0
    }

    fn outer_slope(&self, r: f64) -> f64 {
        fundamental_solution(self.d, r).expect("r > 0").1
    }

    /// Exact `(u, ∇u, λ)` at `x`.
    pub fn radial_exact(&self, x: &[f64]) -> Result<ExactPoint> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        let r = norm(x);
        if r > self.big_r * (1.0 + 1e-12) {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        let radial = |s: f64| -> Vec<f64> { x.iter().map(|xi| s * xi).collect() };
        Ok(if r <= self.r0 {
            let lap = self.laplacian_q(r);
            ExactPoint {
                u: self.q(r),
                grad_u: radial(self.dq_over_r(r)),
                lambda: -lap,
                laplacian: lap,
                gap: 0.0,
                grad_gap: vec![0.0; self.d],
            }
        } else {
            let slope = self.outer_slope(r);
            let u = self.outer(r) - self.outer(self.big_r);
            ExactPoint {
                u,
                grad_u: radial(slope / r),
                lambda: 0.0,
                // the fundamental solution is harmonic away from the origin
                laplacian: 0.0,
                gap: u - self.q(r),
                grad_gap: radial((slope - self.dq(r)) / r),
            }
        })
    }
}

impl Problem for RadialBenchmark {
    fn name(&self) -> &str {
        &self.name
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn source(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn obstacle(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let r = norm(x);
        let s = self.dq_over_r(r);
        (self.q(r), x.iter().map(|xi| s * xi).collect())
    }

    fn exact(&self, x: &[f64]) -> Option<ExactPoint> {
        self.radial_exact(x).ok()
    }

    fn has_exact(&self) -> bool {
        true
    }
}

const PEAKS: [([f64; 2], f64); 2] = [([-0.4, -0.5], 10.0), ([-0.4, 0.5], 15.0)];
const PEAK_DECAY: f64 = 30.0;

/// Two-peak obstacle on the slit disk, `f = 0`; no closed-form solution.
#[derive(Debug, Clone)]
pub struct SlitTwoPeaks {
    domain: Domain,
}

impl SlitTwoPeaks {
    pub fn new() -> Self {
        Self {
            domain: Domain::UnitDiskSlit,
        }
    }
}

impl Default for SlitTwoPeaks {
    fn default() -> Self {
        Self::new()
    }
}

/// Two-peak obstacle `Σ max{A exp(-30 |x - c|²) - 1, 0}` and its gradient.
pub fn slit_obstacle(x: &[f64]) -> (f64, Vec<f64>) {
    let mut g = 0.0;
    let mut grad = vec![0.0, 0.0];
    for (c, amp) in PEAKS {
        let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
        let bump = amp * (-PEAK_DECAY * (dx * dx + dy * dy)).exp();
        if bump - 1.0 >= 0.0 {
            g += bump - 1.0;
            grad[0] -= 2.0 * PEAK_DECAY * bump * dx;
            grad[1] -= 2.0 * PEAK_DECAY * bump * dy;
        }
    }
    (g, grad)
}

impl Problem for SlitTwoPeaks {
    fn name(&self) -> &str {
        "slit-2peaks"
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn source(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn obstacle(&self, x: &[f64]) -> (f64, Vec<f64>) {
        slit_obstacle(x)
    }
}

/// A problem assembled from plain functions; useful for tests and
/// user-defined setups without closed-form solutions.
#[derive(Debug, Clone)]
pub struct FieldProblem {
    pub name: String,
    pub domain: Domain,
    pub f: fn(&[f64]) -> f64,
    pub g: fn(&[f64]) -> (f64, Vec<f64>),
}

impl Problem for FieldProblem {
    fn name(&self) -> &str {
        &self.name
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn source(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn obstacle(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (self.g)(x)
    }
}

/// `sqrt(|Ω|/N Σ (u_Θ - u₀)²)` over a fresh uniform sample.
pub fn l2_error_mc(
    problem: &dyn Problem,
    lift: &LiftConfig,
    field: &dyn TripleField,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if !problem.has_exact() {
        return Err(Error::MissingExact(problem.name().to_string()));
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let dom = problem.domain();
    let pts = dom.sample_uniform(&mut ChaCha8Rng::seed_from_u64(seed), n);
    let evs = field.lift_batch(problem, lift, pts.coords(), pts.dim())?;
    let sq = pts
        .iter()
        .zip(&evs)
        .map(|(x, ev)| Ok((ev.u - exact_at(problem, x)?.u).powi(2)))
        .collect::<Result<Vec<f64>>>()?;
    Ok((dom.volume() / n as f64 * pairwise_sum(&sq)).sqrt())
}

/// Triple error in the product norm, with its three components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleError {
    pub total: f64,
    /// `‖∇(u_Θ - u₀)‖`
    pub grad_u: f64,
    /// `‖φ_Θ - ∇u₀‖`
    pub flux: f64,
    /// `‖γ_Θ + f‖`
    pub gamma: f64,
}

/// Monte-Carlo estimate of `‖p_Θ - p₀‖` with `p₀ = (u₀, ∇u₀, -f)`.
pub fn triple_error_mc(
    problem: &dyn Problem,
    lift: &LiftConfig,
    field: &dyn TripleField,
    n: usize,
    seed: u64,
) -> Result<TripleError> {
    if !problem.has_exact() {
        return Err(Error::MissingExact(problem.name().to_string()));
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let dom = problem.domain();
    let pts = dom.sample_uniform(&mut ChaCha8Rng::seed_from_u64(seed), n);
    let mut parts = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    let evs = field.lift_batch(problem, lift, pts.coords(), pts.dim())?;
    for (x, ev) in pts.iter().zip(&evs) {
        let ex = exact_at(problem, x)?;
        parts[0].push(sq_dist(&ev.grad_u, &ex.grad_u));
        parts[1].push(sq_dist(&ev.phi, &ex.grad_u));
        parts[2].push((ev.gamma + problem.source(x)).powi(2));
    }
    let scale = dom.volume() / n as f64;
    let [a, b, c] = parts.map(|p| scale * pairwise_sum(&p));
    Ok(TripleError {
        total: (a + b + c).sqrt(),
        grad_u: a.sqrt(),
        flux: b.sqrt(),
        gamma: c.sqrt(),
    })
}

fn exact_at(problem: &dyn Problem, x: &[f64]) -> Result<ExactPoint> {
    problem
        .exact(x)
        .ok_or_else(|| Error::MissingExact(problem.name().to_string()))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}
