//! Dense feed-forward networks with input Jacobians and parameter pullbacks.
//!
//! The least-squares losses depend on a network's value *and* its spatial
//! derivatives, so the forward pass carries `1 + input_dim` columns through
//! every layer: column 0 is the value path, column `1 + j` is the tangent
//! along input coordinate `j`. The reverse pass differentiates that extended
//! computation with respect to the parameters.
//!
//! Parameter layout (per layer, in order): weight matrix row-major with shape
//! `(out, in)`, followed by the bias vector. The final layer is affine.

mod activation;
pub mod checkpoint;

pub use activation::{Activation, Pointwise};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One hidden layer: width and activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

/// Architecture of a fully-connected network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<LayerSpec>,
    pub output_dim: usize,
}

/// Resolved shape of one affine layer plus its activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerShape {
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: Vec<LayerSpec>, output_dim: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden,
            output_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Uniform-width network with the same activation in every hidden layer.
    pub fn mlp(
        input_dim: usize,
        width: usize,
        depth: usize,
        activation: Activation,
        output_dim: usize,
    ) -> Result<Self> {
        Self::new(
            input_dim,
            vec![LayerSpec::new(width, activation); depth],
            output_dim,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidSpec(
                "input and output dimensions must be positive".into(),
            ));
        }
        for (i, layer) in self.hidden.iter().enumerate() {
            if layer.width == 0 {
                return Err(Error::InvalidSpec(format!("hidden layer {i} has width 0")));
            }
            layer.activation.validate()?;
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut n_in = self.input_dim;
        let mut offset = 0;
        let widths = self
            .hidden
            .iter()
            .map(|l| (l.width, l.activation))
            .chain(std::iter::once((self.output_dim, Activation::Identity)));
        for (n_out, activation) in widths {
            shapes.push(LayerShape {
                n_in,
                n_out,
                activation,
                weight_offset: offset,
                bias_offset: offset + n_in * n_out,
            });
            offset += n_in * n_out + n_out;
            n_in = n_out;
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|s| s.n_in * s.n_out + s.n_out).sum()
    }

    pub fn hidden_neurons(&self) -> usize {
        self.hidden.iter().map(|l| l.width).sum()
    }

    /// True when every activation has a Lipschitz derivative, i.e. the
    /// parameter gradient of Jacobian-dependent losses is exact.
    pub fn is_smooth(&self) -> bool {
        self.hidden.iter().all(|l| l.activation.is_smooth())
    }

    pub fn has_step(&self) -> bool {
        self.hidden
            .iter()
            .any(|l| matches!(l.activation, Activation::Heaviside { .. }))
    }
}

/// Flat parameter vector in the documented layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }
}

/// Network value and, optionally, its input Jacobian (row-major,
/// `output_dim x input_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct PointEval {
    pub y: Vec<f64>,
    pub jac: Option<Vec<f64>>,
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![0.0; spec.param_count()];
    for shape in spec.layers() {
        let limit = (6.0 / (shape.n_in + shape.n_out) as f64).sqrt();
        let dist = Uniform::new(-limit, limit).expect("finite positive limit");
        for w in &mut theta[shape.weight_offset..shape.bias_offset] {
            *w = dist.sample(&mut rng);
        }
    }
    Ok(ParamVector(theta))
}

/// A network architecture bound to a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: ParamVector,
    layout: Vec<LayerShape>,
}

impl Network {
    pub fn new(spec: NetworkSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        let layout = spec.layers();
        Ok(Self {
            spec,
            params,
            layout,
        })
    }

    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let params = init_params(&spec, seed)?;
        Self::new(spec, params)
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let n = spec.param_count();
        Self::new(spec, ParamVector::zeros(n))
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.params.as_mut_slice()
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Tape for single-point evaluation.
    pub fn tape(&self, want_jac: bool) -> Tape {
        Tape::new(self, want_jac, 1)
    }

    /// Tape for blocks of up to `capacity` points.
    pub fn batch_tape(&self, want_jac: bool, capacity: usize) -> Tape {
        Tape::new(self, want_jac, capacity.max(1))
    }

    /// Forward pass over the points in `xs` (row-major, `input_dim` values
    /// per point), recording everything the reverse pass needs.
    pub fn forward(&self, tape: &mut Tape, xs: &[f64]) -> Result<()> {
        let d = self.spec.input_dim;
        if xs.is_empty() || xs.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: xs.len(),
            });
        }
        let n = xs.len() / d;
        if tape.pre.len() != self.layout.len() || tape.input_dim != d {
            return Err(Error::ShapeMismatch("tape built for another network".into()));
        }
        if n > tape.capacity {
            return Err(Error::ShapeMismatch(format!(
                "{n} points exceed tape capacity {}",
                tape.capacity
            )));
        }
        tape.n = n;
        let ncols = tape.ncols;
        let m = ncols * n;

        let input = &mut tape.input[..d * m];
        input.fill(0.0);
        for (p, x) in xs.chunks_exact(d).enumerate() {
            for k in 0..d {
                input[k * m + p] = x[k];
            }
        }
        for j in 0..ncols - 1 {
            input[j * m + (1 + j) * n..j * m + (2 + j) * n].fill(1.0);
        }

        let theta = self.params.as_slice();
        for (l, shape) in self.layout.iter().enumerate() {
            let (n_in, n_out) = (shape.n_in, shape.n_out);
            let w = &theta[shape.weight_offset..shape.bias_offset];
            let b = &theta[shape.bias_offset..shape.bias_offset + n_out];

            let (before, after) = tape.post.split_at_mut(l);
            let inp: &[f64] = if l == 0 {
                &tape.input[..n_in * m]
            } else {
                &before[l - 1][..n_in * m]
            };
            let pre = &mut tape.pre[l][..n_out * m];
            for i in 0..n_out {
                let out = &mut pre[i * m..(i + 1) * m];
                out[..n].fill(b[i]);
                out[n..].fill(0.0);
                for k in 0..n_in {
                    axpy(w[i * n_in + k], &inp[k * m..(k + 1) * m], out);
                }
            }

            let post = &mut after[0][..n_out * m];
            let act = shape.activation;
            if act == Activation::Identity {
                post.copy_from_slice(pre);
                continue;
            }
            let derivs = &mut tape.derivs[l][..n_out * n];
            for i in 0..n_out {
                let row = i * m;
                for p in 0..n {
                    let pw = act.eval_full(pre[row + p]);
                    post[row + p] = pw.value;
                    derivs[i * n + p] = pw;
                }
                for c in 1..ncols {
                    let off = row + c * n;
                    for p in 0..n {
                        post[off + p] = derivs[i * n + p].first * pre[off + p];
                    }
                }
            }
        }
        let n_y = self.spec.output_dim;
        tape.bar[..n_y * m].fill(0.0);
        Ok(())
    }

    /// Accumulate into `grad` the parameter gradient of
    /// `Σ_p <cot_y_p, y_p> + <cot_jac_p, jac_p>`, with the cotangents set by
    /// [`Tape::set_cotangent`] after the last `forward`.
    pub fn pullback_batch(&self, tape: &mut Tape, grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        if tape.n == 0 {
            return Err(Error::ShapeMismatch("pullback before forward".into()));
        }
        let Tape {
            ncols,
            n,
            input,
            pre,
            post,
            derivs,
            bar,
            bar_prev,
            ..
        } = tape;
        let (ncols, n) = (*ncols, *n);
        let m = ncols * n;

        let theta = self.params.as_slice();
        for (l, shape) in self.layout.iter().enumerate().rev() {
            let (n_in, n_out) = (shape.n_in, shape.n_out);
            let act = shape.activation;

            // Post-activation cotangents -> pre-activation cotangents.
            if act != Activation::Identity {
                let z = &pre[l];
                let dv = &derivs[l];
                for i in 0..n_out {
                    let row = i * m;
                    for p in 0..n {
                        let pw = dv[i * n + p];
                        let mut zb = bar[row + p] * pw.train;
                        if pw.second != 0.0 {
                            let mut acc = 0.0;
                            for c in 1..ncols {
                                acc += bar[row + c * n + p] * z[row + c * n + p];
                            }
                            zb += pw.second * acc;
                        }
                        bar[row + p] = zb;
                    }
                    for c in 1..ncols {
                        let off = row + c * n;
                        for p in 0..n {
                            bar[off + p] *= dv[i * n + p].first;
                        }
                    }
                }
            }

            let inp: &[f64] = if l == 0 { &input[..n_in * m] } else { &post[l - 1][..n_in * m] };
            let (gw, gb) =
                grad[shape.weight_offset..shape.bias_offset + n_out].split_at_mut(n_in * n_out);
            for i in 0..n_out {
                let bi = &bar[i * m..(i + 1) * m];
                gb[i] += bi[..n].iter().sum::<f64>();
                for k in 0..n_in {
                    gw[i * n_in + k] += dot(bi, &inp[k * m..(k + 1) * m]);
                }
            }

            if l > 0 {
                let w = &theta[shape.weight_offset..shape.bias_offset];
                let prev = &mut bar_prev[..n_in * m];
                prev.fill(0.0);
                for i in 0..n_out {
                    let bi = &bar[i * m..(i + 1) * m];
                    for k in 0..n_in {
                        axpy(w[i * n_in + k], bi, &mut prev[k * m..(k + 1) * m]);
                    }
                }
                std::mem::swap(bar, bar_prev);
            }
        }
        Ok(())
    }

    /// Single-point pullback: accumulate into `grad` the parameter gradient
    /// of `<cot_y, y> + <cot_jac, jac>` at the point recorded in `tape`.
    ///
    /// `cot_jac` is row-major `output_dim x input_dim`; `None` means zero.
    pub fn pullback_into(
        &self,
        tape: &mut Tape,
        cot_y: &[f64],
        cot_jac: Option<&[f64]>,
        grad: &mut [f64],
    ) -> Result<()> {
        if tape.n != 1 {
            return Err(Error::ShapeMismatch(format!(
                "single-point pullback on a tape holding {} points",
                tape.n
            )));
        }
        tape.set_cotangent(0, cot_y, cot_jac)?;
        self.pullback_batch(tape, grad)
    }

    /// Convenience single-point evaluation.
    pub fn eval(&self, x: &[f64], want_jac: bool) -> Result<PointEval> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        let mut tape = self.tape(want_jac);
        self.forward(&mut tape, x)?;
        Ok(tape.point_eval(0))
    }
}

/// Reusable forward/backward workspace.
///
/// Every layer buffer is laid out as `[neuron][column][point]`, so each
/// neuron owns one contiguous row of `columns x points` entries.
#[derive(Debug, Clone)]
pub struct Tape {
    ncols: usize,
    capacity: usize,
    n: usize,
    input_dim: usize,
    output_dim: usize,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    derivs: Vec<Vec<Pointwise>>,
    bar: Vec<f64>,
    bar_prev: Vec<f64>,
}

impl Tape {
    fn new(net: &Network, want_jac: bool, capacity: usize) -> Self {
        let d = net.spec.input_dim;
        let ncols = if want_jac { 1 + d } else { 1 };
        let m = ncols * capacity;
        let zero = Pointwise {
            value: 0.0,
            first: 0.0,
            train: 0.0,
            second: 0.0,
        };
        let pre: Vec<Vec<f64>> = net.layout.iter().map(|s| vec![0.0; s.n_out * m]).collect();
        let post = pre.clone();
        let derivs = net
            .layout
            .iter()
            .map(|s| vec![zero; s.n_out * capacity])
            .collect();
        let max_w = net
            .layout
            .iter()
            .map(|s| s.n_out.max(s.n_in))
            .max()
            .unwrap_or(d);
        Self {
            ncols,
            capacity,
            n: 0,
            input_dim: d,
            output_dim: net.spec.output_dim,
            input: vec![0.0; d * m],
            pre,
            post,
            derivs,
            bar: vec![0.0; max_w * m],
            bar_prev: vec![0.0; max_w * m],
        }
    }

    pub fn has_jac(&self) -> bool {
        self.ncols > 1
    }

    /// Points held after the last `forward`.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Output `o` at point `p`.
    #[inline]
    pub fn value(&self, o: usize, p: usize) -> f64 {
        self.post.last().expect("at least one layer")[o * self.ncols * self.n + p]
    }

    /// Entry `(o, j)` of the input Jacobian at point `p`.
    #[inline]
    pub fn jac_at(&self, o: usize, j: usize, p: usize) -> f64 {
        debug_assert!(self.has_jac());
        self.post.last().expect("at least one layer")[(o * self.ncols + 1 + j) * self.n + p]
    }

    /// Entry `(o, j)` of the input Jacobian at the first point.
    #[inline]
    pub fn jac(&self, o: usize, j: usize) -> f64 {
        self.jac_at(o, j, 0)
    }

    /// Set the output cotangents of point `p` for the next pullback.
    pub fn set_cotangent(&mut self, p: usize, cot_y: &[f64], cot_jac: Option<&[f64]>) -> Result<()> {
        let (n_y, d, n, ncols) = (self.output_dim, self.input_dim, self.n, self.ncols);
        if p >= n {
            return Err(Error::ShapeMismatch(format!("point {p} not in tape of {n}")));
        }
        if cot_y.len() != n_y {
            return Err(Error::ShapeMismatch(format!(
                "output cotangent has length {}, expected {n_y}",
                cot_y.len()
            )));
        }
        if let Some(cj) = cot_jac {
            if ncols == 1 {
                return Err(Error::ShapeMismatch(
                    "Jacobian cotangent given but tape has no Jacobian".into(),
                ));
            }
            if cj.len() != n_y * d {
                return Err(Error::ShapeMismatch(format!(
                    "Jacobian cotangent has length {}, expected {}",
                    cj.len(),
                    n_y * d
                )));
            }
        }
        for o in 0..n_y {
            let row = o * ncols * n;
            self.bar[row + p] = cot_y[o];
            for j in 0..ncols - 1 {
                self.bar[row + (1 + j) * n + p] = cot_jac.map_or(0.0, |cj| cj[o * d + j]);
            }
        }
        Ok(())
    }

    pub fn point_eval(&self, p: usize) -> PointEval {
        let (n_y, d) = (self.output_dim, self.input_dim);
        let y = (0..n_y).map(|o| self.value(o, p)).collect();
        let jac = self.has_jac().then(|| {
            let mut m = vec![0.0; n_y * d];
            for o in 0..n_y {
                for j in 0..d {
                    m[o * d + j] = self.jac_at(o, j, p);
                }
            }
            m
        });
        PointEval { y, jac }
    }
}

/// Network value and optional input Jacobian at `x`.
pub fn forward_jac(
    spec: &NetworkSpec,
    theta: &ParamVector,
    x: &[f64],
    want_jac: bool,
) -> Result<PointEval> {
    Network::new(spec.clone(), theta.clone())?.eval(x, want_jac)
}

/// Gradient with respect to `theta` of `<cot_y, y(theta, x)> + <cot_jac, jac(theta, x)>`.
pub fn pullback(
    spec: &NetworkSpec,
    theta: &ParamVector,
    x: &[f64],
    cot_y: &[f64],
    cot_jac: Option<&[f64]>,
) -> Result<ParamVector> {
    let net = Network::new(spec.clone(), theta.clone())?;
    if x.len() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            got: x.len(),
        });
    }
    let mut tape = net.tape(cot_jac.is_some());
    net.forward(&mut tape, x)?;
    let mut grad = vec![0.0; net.params.len()];
    net.pullback_into(&mut tape, cot_y, cot_jac, &mut grad)?;
    Ok(ParamVector(grad))
}

/// Dot product with four interleaved partial sums, so it vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
