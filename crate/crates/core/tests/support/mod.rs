//! Admissible perturbations of the exact triple of a radial benchmark.
//!
//! The displacement of `u` lives off the contact set and the extra
//! multiplier lives on it, so the pairing terms stay quadratic.

#![allow(dead_code)]

use deepfosls::admissible::{AdmissiblePointEval, LiftConfig, TripleField};
use deepfosls::problems::{Problem, RadialBenchmark};
use deepfosls::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Perturbation {
    pub r0: f64,
    pub big_r: f64,
    pub eps: f64,
    alpha0: f64,
    alpha: Vec<f64>,
    beta0: f64,
    beta: Vec<f64>,
    c: Vec<f64>,
    cm: Vec<f64>,
}

/// Direction of the perturbation at one point.
pub struct Delta {
    pub w: f64,
    pub grad_w: Vec<f64>,
    pub lambda: f64,
    pub phi: Vec<f64>,
    pub div_phi: f64,
}

impl Delta {
    /// Pointwise integrand of the squared product norm of the direction.
    pub fn norm_sq(&self) -> f64 {
        let a: f64 = self.grad_w.iter().map(|g| g * g).sum();
        let b: f64 = self.phi.iter().map(|p| p * p).sum();
        a + b + (self.div_phi + self.lambda).powi(2)
    }
}

impl Perturbation {
    pub fn random(bench: &RadialBenchmark, seed: u64) -> Self {
        let d = bench.d;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let alpha0 = 0.5 + draw(1)[0].abs();
        let alpha = draw(d);
        let beta0 = draw(1)[0];
        let beta = draw(d);
        let c = draw(d);
        let cm = draw(d * d);
        Self {
            r0: bench.r0,
            big_r: bench.big_r,
            eps: 0.0,
            alpha0,
            alpha,
            beta0,
            beta,
            c,
            cm,
        }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self {
            eps,
            ..self.clone()
        }
    }

    pub fn delta(&self, x: &[f64]) -> Delta {
        let d = x.len();
        let (r0, rr) = (self.r0, self.big_r);
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot = |a: &[f64]| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();

        // b(r) = ((r - r0)(R - r))² off the contact set
        let (b, db) = if r > r0 && r < rr {
            let s = (r - r0) * (rr - r);
            (s * s, 2.0 * s * (rr + r0 - 2.0 * r))
        } else {
            (0.0, 0.0)
        };
        let p = self.alpha0 + dot(&self.alpha);
        let w = b * p * p;
        let grad_w = (0..d)
            .map(|j| {
                let gb = if r > 0.0 { db * x[j] / r } else { 0.0 };
                gb * p * p + 2.0 * b * p * self.alpha[j]
            })
            .collect();

        let m = if r < r0 { (r0 * r0 - r * r).powi(2) } else { 0.0 };
        let lambda = (self.beta0 + dot(&self.beta)).powi(2) * m;

        let bubble = rr * rr - r * r;
        let mut phi = Vec::with_capacity(d);
        let mut div_phi = 0.0;
        for j in 0..d {
            let row = &self.cm[j * d..(j + 1) * d];
            let lin = self.c[j] + dot(row);
            phi.push(bubble * lin);
            div_phi += -2.0 * x[j] * lin + bubble * row[j];
        }
        Delta {
            w,
            grad_w,
            lambda,
            phi,
            div_phi,
        }
    }
}

impl TripleField for Perturbation {
    fn lift(&self, problem: &dyn Problem, _lift: &LiftConfig, x: &[f64]) -> Result<AdmissiblePointEval> {
        let ex = problem
            .exact(x)
            .ok_or_else(|| Error::MissingExact(problem.name().to_string()))?;
        let (d, _) = problem.surrogate(x)?;
        let (g, _) = problem.obstacle(x);
        let del = self.delta(x);
        let e = self.eps;
        let w = ex.gap + e * del.w;
        let div_phi = ex.laplacian + e * del.div_phi;
        let lambda = ex.lambda + e * del.lambda;
        Ok(AdmissiblePointEval {
            u: ex.u + e * del.w,
            grad_u: ex.grad_u.iter().zip(&del.grad_w).map(|(a, b)| a + e * b).collect(),
            phi: ex.grad_u.iter().zip(&del.phi).map(|(a, b)| a + e * b).collect(),
            div_phi,
            gamma: div_phi + lambda,
            lambda,
            d,
            a_v: if d > 0.0 { w / d } else { 0.0 },
            g,
            w,
            grad_w: ex.grad_gap.iter().zip(&del.grad_w).map(|(a, b)| a + e * b).collect(),
        })
    }
}
