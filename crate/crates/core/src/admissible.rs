//! Admissible lifts of raw networks and the least-squares losses.
//!
//! Given networks `v`, `ψ`, `η`, the lift builds
//! `u = g + d·a(v)`, `φ = ψ`, `λ = a(η)` and `γ = div φ + λ`, so the
//! constraints `u ≥ g`, `λ ≥ 0` and `u = 0` on the boundary hold by
//! construction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::PointCloud;
use crate::netcore::{Network, Tape};
use crate::problems::Problem;
use crate::stats::{loglog_slope, mean_std, pairwise_sum};
use crate::{Error, Result};

/// Points per parallel work item. Fixed so reductions do not depend on the
/// thread count.
const CHUNK: usize = 64;

/// Non-negative map used in the lifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AKind {
    Relu,
    Square,
}

impl AKind {
    /// `(a(t), a'(t), a''(t))`, with `a'(0) = 0` for ReLU.
    #[inline]
    pub fn eval(self, t: f64) -> (f64, f64, f64) {
        match self {
            AKind::Relu => {
                if t > 0.0 {
                    (t, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            AKind::Square => (t * t, 2.0 * t, 2.0),
        }
    }
}

/// Which discrete functional to minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Residual plus the `γ(u-g) + φ·∇(u-g)` pairing.
    L,
    /// Residual plus the complementarity term `λ(u-g)`.
    J,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftConfig {
    pub a_kind: AKind,
    pub loss_kind: LossKind,
    /// Optional radius of the admissible parameter ball.
    #[serde(default)]
    pub radius: Option<f64>,
}

impl LiftConfig {
    pub fn new(a_kind: AKind, loss_kind: LossKind) -> Self {
        Self {
            a_kind,
            loss_kind,
            radius: None,
        }
    }
}

/// The lifted triple at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissiblePointEval {
    pub u: f64,
    pub grad_u: Vec<f64>,
    pub phi: Vec<f64>,
    pub div_phi: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Surrogate distance.
    pub d: f64,
    pub a_v: f64,
    pub g: f64,
    /// `u - g`
    pub w: f64,
    /// `∇(u - g)`
    pub grad_w: Vec<f64>,
}

/// Pointwise integrands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// `(γ + f)²`
    pub g1: f64,
    /// `|∇u - φ|²`
    pub g2: f64,
    /// `γ (u - g)`
    pub g3: f64,
    /// `φ · ∇(u - g)`
    pub g4: f64,
    /// `λ (u - g)`
    pub complementarity: f64,
}

impl LossTerms {
    pub fn from_eval(ev: &AdmissiblePointEval, f: f64) -> Self {
        let g2 = ev
            .grad_u
            .iter()
            .zip(&ev.phi)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let g4 = ev.phi.iter().zip(&ev.grad_w).map(|(a, b)| a * b).sum();
        Self {
            g1: (ev.gamma + f).powi(2),
            g2,
            g3: ev.gamma * ev.w,
            g4,
            complementarity: ev.lambda * ev.w,
        }
    }

    pub fn total(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::L => self.g1 + self.g2 + self.g3 + self.g4,
            LossKind::J => self.g1 + self.g2 + self.complementarity,
        }
    }

    /// The three summands of the selected loss, for diagnostics.
    pub fn parts(&self, kind: LossKind) -> [f64; 3] {
        match kind {
            LossKind::L => [self.g1, self.g2, self.g3 + self.g4],
            LossKind::J => [self.g1, self.g2, self.complementarity],
        }
    }
}

/// Anything that yields a lifted triple pointwise.
pub trait TripleField: Sync {
    fn lift(
        &self,
        problem: &dyn Problem,
        lift: &LiftConfig,
        x: &[f64],
    ) -> Result<AdmissiblePointEval>;

    /// Lift every point of `xs` (row-major, `dim` values per point).
    fn lift_batch(
        &self,
        problem: &dyn Problem,
        lift: &LiftConfig,
        xs: &[f64],
        dim: usize,
    ) -> Result<Vec<AdmissiblePointEval>> {
        xs.chunks_exact(dim)
            .map(|x| self.lift(problem, lift, x))
            .collect()
    }

    /// Euclidean norm of the underlying parameters, if any.
    fn param_norm(&self) -> Option<f64> {
        None
    }
}

/// The three raw networks `v: R^d -> R`, `ψ: R^d -> R^d`, `η: R^d -> R`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleNets {
    pub v: Network,
    pub psi: Network,
    pub eta: Network,
}

/// Reusable tapes for the three networks.
#[derive(Debug, Clone)]
pub struct TripleTapes {
    v: Tape,
    psi: Tape,
    eta: Tape,
}

/// Intermediate quantities kept for the reverse pass.
struct PointState {
    ev: AdmissiblePointEval,
    grad_d: Vec<f64>,
    grad_v: Vec<f64>,
    da_v: f64,
    dda_v: f64,
    da_eta: f64,
}

impl TripleNets {
    pub fn new(v: Network, psi: Network, eta: Network) -> Result<Self> {
        let d = v.input_dim();
        let checks = [
            ("v", v.input_dim(), v.output_dim(), 1),
            ("psi", psi.input_dim(), psi.output_dim(), d),
            ("eta", eta.input_dim(), eta.output_dim(), 1),
        ];
        for (name, n_in, n_out, want_out) in checks {
            if n_in != d || n_out != want_out {
                return Err(Error::InvalidSpec(format!(
                    "{name} network maps R^{n_in} -> R^{n_out}, expected R^{d} -> R^{want_out}"
                )));
            }
        }
        Ok(Self { v, psi, eta })
    }

    pub fn dim(&self) -> usize {
        self.v.input_dim()
    }

    /// Single-point tapes.
    pub fn tapes(&self) -> TripleTapes {
        self.batch_tapes(1)
    }

    pub fn batch_tapes(&self, capacity: usize) -> TripleTapes {
        TripleTapes {
            v: self.v.batch_tape(true, capacity),
            psi: self.psi.batch_tape(true, capacity),
            eta: self.eta.batch_tape(false, capacity),
        }
    }

    pub fn param_norm_sq(&self) -> f64 {
        self.v.params().norm_sq() + self.psi.params().norm_sq() + self.eta.params().norm_sq()
    }

    pub fn lift_point(
        &self,
        problem: &dyn Problem,
        lift: &LiftConfig,
        x: &[f64],
    ) -> Result<AdmissiblePointEval> {
        let mut tapes = self.tapes();
        self.forward_block(&mut tapes, x)?;
        Ok(self.state_at(&tapes, problem, lift, x, 0)?.ev)
    }

    fn forward_block(&self, tapes: &mut TripleTapes, xs: &[f64]) -> Result<()> {
        let dim = self.dim();
        if xs.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: xs.len() % dim,
            });
        }
        self.v.forward(&mut tapes.v, xs)?;
        self.psi.forward(&mut tapes.psi, xs)?;
        self.eta.forward(&mut tapes.eta, xs)
    }

    /// Lifted quantities at point `p` of the block last run through
    /// `forward_block`; `x` is that point.
    fn state_at(
        &self,
        tapes: &TripleTapes,
        problem: &dyn Problem,
        lift: &LiftConfig,
        x: &[f64],
        p: usize,
    ) -> Result<PointState> {
        let dim = self.dim();
        let (d, grad_d) = problem.surrogate(x)?;
        let (g, grad_g) = problem.obstacle(x);
        let v = tapes.v.value(0, p);
        let grad_v: Vec<f64> = (0..dim).map(|j| tapes.v.jac_at(0, j, p)).collect();
        let (a_v, da_v, dda_v) = lift.a_kind.eval(v);
        let (lambda, da_eta, _) = lift.a_kind.eval(tapes.eta.value(0, p));

        let w = d * a_v;
        let grad_w: Vec<f64> = (0..dim)
            .map(|j| grad_d[j] * a_v + d * da_v * grad_v[j])
            .collect();
        let grad_u = grad_g.iter().zip(&grad_w).map(|(a, b)| a + b).collect();
        let phi = (0..dim).map(|j| tapes.psi.value(j, p)).collect();
        let div_phi: f64 = (0..dim).map(|j| tapes.psi.jac_at(j, j, p)).sum();

        Ok(PointState {
            ev: AdmissiblePointEval {
                u: g + w,
                grad_u,
                phi,
                div_phi,
                gamma: div_phi + lambda,
                lambda,
                d,
                a_v,
                g,
                w,
                grad_w,
            },
            grad_d,
            grad_v,
            da_v,
            dda_v,
            da_eta,
        })
    }
}

impl TripleField for TripleNets {
    fn lift(
        &self,
        problem: &dyn Problem,
        lift: &LiftConfig,
        x: &[f64],
    ) -> Result<AdmissiblePointEval> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        self.lift_point(problem, lift, x)
    }

    fn lift_batch(
        &self,
        problem: &dyn Problem,
        lift: &LiftConfig,
        xs: &[f64],
        dim: usize,
    ) -> Result<Vec<AdmissiblePointEval>> {
        if dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: dim,
            });
        }
        let mut tapes = self.batch_tapes(CHUNK);
        let mut out = Vec::with_capacity(xs.len() / dim);
        for block in xs.chunks(CHUNK * dim) {
            self.forward_block(&mut tapes, block)?;
            for (p, x) in block.chunks_exact(dim).enumerate() {
                out.push(self.state_at(&tapes, problem, lift, x, p)?.ev);
            }
        }
        Ok(out)
    }

    fn param_norm(&self) -> Option<f64> {
        Some(self.param_norm_sq().sqrt())
    }
}

/// The closed-form minimizer `(u₀, ∇u₀, -f)` of a problem with an exact
/// solution, presented as a lifted triple.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactTriple;

impl TripleField for ExactTriple {
    fn lift(
        &self,
        problem: &dyn Problem,
        _lift: &LiftConfig,
        x: &[f64],
    ) -> Result<AdmissiblePointEval> {
        let ex = problem
            .exact(x)
            .ok_or_else(|| Error::MissingExact(problem.name().to_string()))?;
        let (d, _) = problem.surrogate(x)?;
        let (g, _) = problem.obstacle(x);
        Ok(AdmissiblePointEval {
            u: ex.u,
            phi: ex.grad_u.clone(),
            grad_u: ex.grad_u,
            div_phi: ex.laplacian,
            gamma: ex.laplacian + ex.lambda,
            lambda: ex.lambda,
            d,
            a_v: if d > 0.0 { ex.gap / d } else { 0.0 },
            g,
            w: ex.gap,
            grad_w: ex.grad_gap,
        })
    }
}

/// `(G1, G2, G3, G4)` and the complementarity term at `x`.
pub fn loss_terms(
    problem: &dyn Problem,
    lift: &LiftConfig,
    field: &dyn TripleField,
    x: &[f64],
) -> Result<LossTerms> {
    let ev = field.lift(problem, lift, x)?;
    Ok(LossTerms::from_eval(&ev, problem.source(x)))
}

fn pointwise_totals(
    problem: &dyn Problem,
    lift: &LiftConfig,
    field: &dyn TripleField,
    points: &PointCloud,
) -> Result<Vec<f64>> {
    let dim = points.dim();
    points
        .coords()
        .par_chunks(CHUNK * dim)
        .map(|chunk| {
            let evs = field.lift_batch(problem, lift, chunk, dim)?;
            Ok(evs
                .iter()
                .zip(chunk.chunks_exact(dim))
                .map(|(ev, x)| LossTerms::from_eval(ev, problem.source(x)).total(lift.loss_kind))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<Vec<f64>>>>()
        .map(|v| v.concat())
}

/// `(|Ω|/N) Σ` of the selected integrand.
pub fn batch_loss(
    problem: &dyn Problem,
    lift: &LiftConfig,
    field: &dyn TripleField,
    points: &PointCloud,
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let totals = pointwise_totals(problem, lift, field, points)?;
    Ok(problem.domain().volume() / points.len() as f64 * pairwise_sum(&totals))
}

/// Loss value, parameter gradients and a breakdown of the loss into its
/// three summands (see [`LossTerms::parts`]).
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub parts: [f64; 3],
    pub v: Vec<f64>,
    pub psi: Vec<f64>,
    pub eta: Vec<f64>,
}

impl LossGrad {
    fn zeros(nets: &TripleNets) -> Self {
        Self {
            loss: 0.0,
            parts: [0.0; 3],
            v: vec![0.0; nets.v.params().len()],
            psi: vec![0.0; nets.psi.params().len()],
            eta: vec![0.0; nets.eta.params().len()],
        }
    }

    fn add(mut self, other: &Self) -> Self {
        self.loss += other.loss;
        for (a, b) in self.parts.iter_mut().zip(other.parts) {
            *a += b;
        }
        for (dst, src) in [
            (&mut self.v, &other.v),
            (&mut self.psi, &other.psi),
            (&mut self.eta, &other.eta),
        ] {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
        self
    }

    fn scale(&mut self, s: f64) {
        self.loss *= s;
        for p in &mut self.parts {
            *p *= s;
        }
        for g in [&mut self.v, &mut self.psi, &mut self.eta] {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
}

fn tree_reduce(items: &[LossGrad]) -> LossGrad {
    match items.len() {
        1 => items[0].clone(),
        n => {
            let (l, r) = items.split_at(n / 2);
            tree_reduce(l).add(&tree_reduce(r))
        }
    }
}

/// Batch loss and its exact parameter gradient. Step activations in `η`
/// contribute through their straight-through surrogate.
pub fn batch_loss_grad(
    problem: &dyn Problem,
    lift: &LiftConfig,
    nets: &TripleNets,
    points: &PointCloud,
) -> Result<LossGrad> {
    if points.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let dim = nets.dim();
    if points.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: points.dim(),
        });
    }
    let partials = points
        .coords()
        .par_chunks(CHUNK * dim)
        .map(|chunk| {
            let mut tapes = nets.batch_tapes(CHUNK);
            let mut acc = LossGrad::zeros(nets);
            let mut totals = Vec::with_capacity(CHUNK);
            let mut parts = [const { Vec::new() }; 3];
            let mut scratch = Scratch::new(dim);
            nets.forward_block(&mut tapes, chunk)?;
            for (p, x) in chunk.chunks_exact(dim).enumerate() {
                let terms = point_cotangents(problem, lift, nets, &mut tapes, &mut scratch, x, p)?;
                totals.push(terms.total(lift.loss_kind));
                for (dst, t) in parts.iter_mut().zip(terms.parts(lift.loss_kind)) {
                    dst.push(t);
                }
            }
            nets.v.pullback_batch(&mut tapes.v, &mut acc.v)?;
            nets.psi.pullback_batch(&mut tapes.psi, &mut acc.psi)?;
            nets.eta.pullback_batch(&mut tapes.eta, &mut acc.eta)?;
            acc.loss = pairwise_sum(&totals);
            for (dst, p) in acc.parts.iter_mut().zip(&parts) {
                *dst = pairwise_sum(p);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<LossGrad>>>()?;
    let mut out = tree_reduce(&partials);
    out.scale(problem.domain().volume() / points.len() as f64);
    Ok(out)
}

struct Scratch {
    cot_v_jac: Vec<f64>,
    cot_psi_jac: Vec<f64>,
    cot_phi: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Self {
            cot_v_jac: vec![0.0; dim],
            cot_psi_jac: vec![0.0; dim * dim],
            cot_phi: vec![0.0; dim],
        }
    }
}

/// Loss terms at point `p` of the current block; writes the output
/// cotangents of that point into the tapes.
fn point_cotangents(
    problem: &dyn Problem,
    lift: &LiftConfig,
    nets: &TripleNets,
    tapes: &mut TripleTapes,
    scratch: &mut Scratch,
    x: &[f64],
    p: usize,
) -> Result<LossTerms> {
    let dim = nets.dim();
    let st = nets.state_at(tapes, problem, lift, x, p)?;
    let f = problem.source(x);
    let ev = &st.ev;
    let terms = LossTerms::from_eval(ev, f);

    let r1 = ev.gamma + f;
    // Partial derivatives of the integrand with respect to the lifted
    // quantities; `e = ∇u - φ`.
    let (bar_div, bar_lambda, bar_w) = match lift.loss_kind {
        LossKind::L => (2.0 * r1 + ev.w, 2.0 * r1 + ev.w, ev.gamma),
        LossKind::J => (2.0 * r1, 2.0 * r1 + ev.w, ev.lambda),
    };
    let mut bar_grad_w = vec![0.0; dim];
    for j in 0..dim {
        let e = ev.grad_u[j] - ev.phi[j];
        let (bgw, bphi) = match lift.loss_kind {
            LossKind::L => (2.0 * e + ev.phi[j], -2.0 * e + ev.grad_w[j]),
            LossKind::J => (2.0 * e, -2.0 * e),
        };
        bar_grad_w[j] = bgw;
        scratch.cot_phi[j] = bphi;
    }

    // w = d a(v), ∇w = ∇d a(v) + d a'(v) ∇v
    let mut cot_v = bar_w * ev.d * st.da_v;
    for j in 0..dim {
        cot_v += bar_grad_w[j] * (st.grad_d[j] * st.da_v + ev.d * st.dda_v * st.grad_v[j]);
        scratch.cot_v_jac[j] = ev.d * st.da_v * bar_grad_w[j];
    }
    tapes.v.set_cotangent(p, &[cot_v], Some(&scratch.cot_v_jac))?;

    scratch.cot_psi_jac.fill(0.0);
    for j in 0..dim {
        scratch.cot_psi_jac[j * dim + j] = bar_div;
    }
    tapes
        .psi
        .set_cotangent(p, &scratch.cot_phi, Some(&scratch.cot_psi_jac))?;
    tapes.eta.set_cotangent(p, &[bar_lambda * st.da_eta], None)?;
    Ok(terms)
}

/// Monte-Carlo estimate of the continuous functional with its standard
/// error. Returns `(+∞, 0)` when the parameters leave the configured ball.
pub fn continuous_loss_ref(
    problem: &dyn Problem,
    lift: &LiftConfig,
    field: &dyn TripleField,
    quad_points: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if quad_points < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "reference loss needs at least 10000 points, got {quad_points}"
        )));
    }
    if let (Some(radius), Some(norm)) = (lift.radius, field.param_norm()) {
        if norm > radius {
            return Ok((f64::INFINITY, 0.0));
        }
    }
    let dom = problem.domain();
    let pts = dom.sample_uniform(&mut ChaCha8Rng::seed_from_u64(seed), quad_points);
    let vol = dom.volume();
    let values: Vec<f64> = pointwise_totals(problem, lift, field, &pts)?
        .into_iter()
        .map(|t| vol * t)
        .collect();
    let (mean, std) = mean_std(&values);
    Ok((mean, std / (quad_points as f64).sqrt()))
}

/// Spread of the batch loss across independent samples.
#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub sizes: Vec<usize>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Log-log slope of the standard deviation against `N`; `None` when the
    /// integrand is deterministic.
    pub slope: Option<f64>,
}

impl McReport {
    pub fn zero_variance(&self) -> bool {
        self.slope.is_none()
    }
}

/// Standard deviation of `batch_loss` over `repeats` fresh samples for each
/// batch size, and its fitted decay rate.
pub fn mc_consistency(
    problem: &dyn Problem,
    lift: &LiftConfig,
    field: &dyn TripleField,
    sizes: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<McReport> {
    if sizes.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 batch sizes, got {}",
            sizes.len()
        )));
    }
    if repeats < 2 || sizes.contains(&0) {
        return Err(Error::InvalidArgument(
            "need at least 2 repeats and positive batch sizes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dom = problem.domain();
    let mut means = Vec::with_capacity(sizes.len());
    let mut stds = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut losses = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let pts = dom.sample_uniform(&mut rng, n);
            losses.push(batch_loss(problem, lift, field, &pts)?);
        }
        let (m, s) = mean_std(&losses);
        means.push(m);
        stds.push(s);
    }
    let slope = if stds.iter().all(|&s| s == 0.0) {
        None
    } else {
        let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
        Some(loglog_slope(&xs, &stds))
    };
    Ok(McReport {
        sizes: sizes.to_vec(),
        means,
        stds,
        slope,
    })
}
