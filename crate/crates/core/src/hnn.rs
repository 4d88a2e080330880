//! Hybrid networks with a single Heaviside layer.
//!
//! A min-gadget built from four ReLUs computes `min(a, b)` exactly; stacking
//! gadgets in a binary tree gives the minimum of `k` inputs. Feeding the
//! Heaviside indicators of the `d + 1` facet half-spaces of a simplex into
//! such a tree yields its characteristic function.

use nalgebra::{DMatrix, DVector};

use crate::netcore::{Activation, LayerSpec, Network, NetworkSpec, ParamVector};
use crate::{Error, Result};

/// Heaviside layers built here never train, so the surrogate width only
/// matters if someone does.
const STE_WIDTH: f64 = 1.0;

/// Dense layer in explicit form, used to assemble networks by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
            activation,
        }
    }

    fn set(&mut self, row: usize, col: usize, value: f64) {
        self.weights[row * self.n_in + col] = value;
    }

    /// `self ∘ prev` for an affine `prev` without activation.
    fn compose_affine(&self, prev: &DenseLayer) -> DenseLayer {
        let mut out = DenseLayer::zeros(prev.n_in, self.n_out, self.activation);
        for i in 0..self.n_out {
            let mut b = self.bias[i];
            for k in 0..self.n_in {
                let w = self.weights[i * self.n_in + k];
                if w == 0.0 {
                    continue;
                }
                b += w * prev.bias[k];
                for j in 0..prev.n_in {
                    out.weights[i * prev.n_in + j] += w * prev.weights[k * prev.n_in + j];
                }
            }
            out.bias[i] = b;
        }
        out
    }
}

/// Pack explicit layers into a network. The last layer must be affine.
pub fn network_from_layers(layers: &[DenseLayer]) -> Result<Network> {
    let (last, hidden) = layers
        .split_last()
        .ok_or_else(|| Error::InvalidSpec("no layers".into()))?;
    if last.activation != Activation::Identity {
        return Err(Error::InvalidSpec("output layer must be affine".into()));
    }
    for pair in layers.windows(2) {
        if pair[0].n_out != pair[1].n_in {
            return Err(Error::InvalidSpec("layer widths do not chain".into()));
        }
    }
    let spec = NetworkSpec::new(
        layers[0].n_in,
        hidden
            .iter()
            .map(|l| LayerSpec::new(l.n_out, l.activation))
            .collect(),
        last.n_out,
    )?;
    let mut theta = Vec::with_capacity(spec.param_count());
    for l in layers {
        theta.extend_from_slice(&l.weights);
        theta.extend_from_slice(&l.bias);
    }
    Network::new(spec, ParamVector(theta))
}

/// Explicit layers of a network.
pub fn layers_of(net: &Network) -> Vec<DenseLayer> {
    let theta = net.params().as_slice();
    net.layout()
        .iter()
        .map(|s| DenseLayer {
            n_in: s.n_in,
            n_out: s.n_out,
            weights: theta[s.weight_offset..s.bias_offset].to_vec(),
            bias: theta[s.bias_offset..s.bias_offset + s.n_out].to_vec(),
            activation: s.activation,
        })
        .collect()
}

/// Fold every hidden layer with identity activation into the layer after it.
pub fn collapse_identity_layers(net: &Network) -> Result<Network> {
    let mut out: Vec<DenseLayer> = Vec::new();
    let mut pending: Option<DenseLayer> = None;
    for layer in layers_of(net) {
        let layer = match pending.take() {
            Some(prev) => layer.compose_affine(&prev),
            None => layer,
        };
        if layer.activation == Activation::Identity {
            pending = Some(layer);
        } else {
            out.push(layer);
        }
    }
    out.push(pending.expect("output layer is affine"));
    network_from_layers(&out)
}

/// Layers of one min-tree level on `k` inputs: a ReLU layer followed by an
/// affine combine layer with `ceil(k/2)` outputs.
fn min_level(k: usize) -> (DenseLayer, DenseLayer) {
    let pairs = k / 2;
    let odd = k % 2;
    let mut relu = DenseLayer::zeros(k, 4 * pairs + 2 * odd, Activation::Relu);
    let mut comb = DenseLayer::zeros(relu.n_out, pairs + odd, Activation::Identity);
    for p in 0..pairs {
        let (a, b) = (2 * p, 2 * p + 1);
        let r = 4 * p;
        // ReLU(a+b), ReLU(-a-b), ReLU(a-b), ReLU(b-a)
        for (row, (ca, cb)) in [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)]
            .into_iter()
            .enumerate()
        {
            relu.set(r + row, a, ca);
            relu.set(r + row, b, cb);
        }
        // min = ((a+b) - |a-b|) / 2
        for (row, c) in [0.5, -0.5, -0.5, -0.5].into_iter().enumerate() {
            comb.set(p, r + row, c);
        }
    }
    if odd == 1 {
        // x = ReLU(x) - ReLU(-x)
        let (x, r) = (k - 1, 4 * pairs);
        relu.set(r, x, 1.0);
        relu.set(r + 1, x, -1.0);
        comb.set(pairs, r, 1.0);
        comb.set(pairs, r + 1, -1.0);
    }
    (relu, comb)
}

fn min_tree_layers(k: usize) -> Vec<DenseLayer> {
    let mut layers = Vec::new();
    let mut width = k;
    while width > 1 {
        let (relu, comb) = min_level(width);
        width = comb.n_out;
        layers.push(relu);
        layers.push(comb);
    }
    layers
}

/// Number of gadget levels for `k` inputs, `ceil(log2 k)`.
pub fn min_tree_depth(k: usize) -> usize {
    let mut levels = 0;
    let mut width = k;
    while width > 1 {
        width = width.div_ceil(2);
        levels += 1;
    }
    levels
}

/// ReLU neurons used by the min tree on `k` inputs.
pub fn min_tree_neurons(k: usize) -> usize {
    let mut total = 0;
    let mut width = k;
    while width > 1 {
        total += 4 * (width / 2) + 2 * (width % 2);
        width = width.div_ceil(2);
    }
    total
}

/// ReLU network computing the minimum of its `k` inputs. Each gadget level
/// appears as a ReLU layer followed by an identity combine layer.
pub fn min_tree_net(k: usize) -> Result<Network> {
    if k == 0 {
        return Err(Error::InvalidArgument("min of zero inputs".into()));
    }
    let mut layers = min_tree_layers(k);
    if layers.is_empty() {
        let mut id = DenseLayer::zeros(1, 1, Activation::Identity);
        id.set(0, 0, 1.0);
        layers.push(id);
    }
    network_from_layers(&layers)
}

/// A network with exactly one Heaviside layer and ReLU layers otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Hnn {
    net: Network,
}

impl Hnn {
    pub fn new(net: Network) -> Result<Self> {
        let hidden = &net.spec().hidden;
        let steps = hidden
            .iter()
            .filter(|l| matches!(l.activation, Activation::Heaviside { .. }))
            .count();
        if steps != 1 {
            return Err(Error::InvalidSpec(format!(
                "hybrid network needs exactly one step layer, found {steps}"
            )));
        }
        if hidden.iter().any(|l| {
            !matches!(
                l.activation,
                Activation::Heaviside { .. } | Activation::Relu
            )
        }) {
            return Err(Error::InvalidSpec(
                "hybrid network layers must be step or ReLU".into(),
            ));
        }
        Ok(Self { net })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    /// Index of the step layer among the hidden layers.
    pub fn step_layer(&self) -> usize {
        self.net
            .spec()
            .hidden
            .iter()
            .position(|l| matches!(l.activation, Activation::Heaviside { .. }))
            .expect("validated")
    }

    pub fn hidden_layers(&self) -> usize {
        self.net.spec().hidden.len()
    }

    pub fn hidden_neurons(&self) -> usize {
        self.net.spec().hidden_neurons()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.eval(x, false)?.y)
    }
}

/// `d + 1` affinely independent points in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    vertices: Vec<Vec<f64>>,
}

/// Relative volume below which a simplex counts as degenerate.
const DEGENERATE_VOLUME: f64 = 1e-12;

impl Simplex {
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let d = vertices.len().saturating_sub(1);
        if d == 0 || vertices.iter().any(|v| v.len() != d) {
            return Err(Error::InvalidArgument(
                "a simplex in R^d needs d + 1 vertices of length d, d >= 1".into(),
            ));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite vertex".into()));
        }
        let s = Self { vertices };
        let scale = s.bbox_extent().powi(d as i32);
        let vol = s.volume();
        if !(vol > DEGENERATE_VOLUME * scale) {
            return Err(Error::DegenerateSimplex { volume: vol });
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    fn edge_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        let v0 = &self.vertices[0];
        DMatrix::from_fn(d, d, |i, j| self.vertices[j + 1][i] - v0[i])
    }

    fn bbox_extent(&self) -> f64 {
        (0..self.dim())
            .map(|i| {
                let (lo, hi) = self.vertices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v[i]), hi.max(v[i]))
                });
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    pub fn volume(&self) -> f64 {
        let d = self.dim();
        let fact: f64 = (1..=d).map(|k| k as f64).product();
        self.edge_matrix().determinant().abs() / fact
    }

    pub fn centroid(&self) -> Vec<f64> {
        let d = self.dim();
        let n = (d + 1) as f64;
        (0..d)
            .map(|i| self.vertices.iter().map(|v| v[i]).sum::<f64>() / n)
            .collect()
    }

    /// Barycentric coordinates of `x`.
    pub fn barycentric(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let rhs = DVector::from_fn(d, |i, _| x[i] - self.vertices[0][i]);
        let tail = self
            .edge_matrix()
            .lu()
            .solve(&rhs)
            .ok_or(Error::DegenerateSimplex { volume: 0.0 })?;
        let mut out = Vec::with_capacity(d + 1);
        out.push(1.0 - tail.iter().sum::<f64>());
        out.extend(tail.iter());
        Ok(out)
    }

    /// Unit normal and offset `(n, c)` of the facet opposite vertex `i`,
    /// oriented so `n·x + c > 0` at the opposite vertex.
    pub fn facet(&self, i: usize) -> (Vec<f64>, f64) {
        let d = self.dim();
        let facet: Vec<&Vec<f64>> = self
            .vertices
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, v)| v)
            .collect();
        let base = facet[0];
        // Generalized cross product of the facet edges: cofactors of the
        // (d-1) x d edge matrix.
        let mut n: Vec<f64> = if d == 1 {
            vec![1.0]
        } else {
            (0..d)
                .map(|k| {
                    let minor = DMatrix::from_fn(d - 1, d - 1, |r, c| {
                        let col = if c < k { c } else { c + 1 };
                        facet[r + 1][col] - base[col]
                    });
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sign * minor.determinant()
                })
                .collect()
        };
        let len = n.iter().map(|a| a * a).sum::<f64>().sqrt();
        for a in &mut n {
            *a /= len;
        }
        let offset = |n: &[f64]| -n.iter().zip(base).map(|(a, b)| a * b).sum::<f64>();
        let opposite = &self.vertices[i];
        let side = n.iter().zip(opposite).map(|(a, b)| a * b).sum::<f64>() + offset(&n);
        if side < 0.0 {
            for a in &mut n {
                *a = -*a;
            }
        }
        let c = offset(&n);
        (n, c)
    }
}

/// Closed-simplex membership via barycentric coordinates.
pub fn in_simplex(s: &Simplex, x: &[f64]) -> Result<bool> {
    Ok(s.barycentric(x)?.iter().all(|&l| l >= -1e-12))
}

/// Hidden layer count of [`simplex_chi_net`] in dimension `d`.
pub fn chi_hidden_layers(d: usize) -> usize {
    if d == 1 {
        1
    } else {
        min_tree_depth(d + 1) + 1
    }
}

/// Hidden neuron count of [`simplex_chi_net`] in dimension `d`.
pub fn chi_hidden_neurons(d: usize) -> usize {
    if d == 1 {
        2
    } else {
        (d + 1) + min_tree_neurons(d + 1)
    }
}

/// Hybrid network equal to the characteristic function of the closed
/// simplex: 1 inside or on the boundary, 0 outside.
pub fn simplex_chi_net(s: &Simplex) -> Result<Hnn> {
    let d = s.dim();
    let step = Activation::Heaviside {
        ste_width: STE_WIDTH,
    };
    if d == 1 {
        // H(x - lo) + H(hi - x) - 1
        let (v0, v1) = (s.vertices[0][0], s.vertices[1][0]);
        let (lo, hi) = (v0.min(v1), v0.max(v1));
        let first = DenseLayer {
            n_in: 1,
            n_out: 2,
            weights: vec![1.0, -1.0],
            bias: vec![-lo, hi],
            activation: step,
        };
        let out = DenseLayer {
            n_in: 2,
            n_out: 1,
            weights: vec![1.0, 1.0],
            bias: vec![-1.0],
            activation: Activation::Identity,
        };
        return Hnn::new(network_from_layers(&[first, out])?);
    }
    let mut first = DenseLayer::zeros(d, d + 1, step);
    for i in 0..=d {
        let (n, c) = s.facet(i);
        first.weights[i * d..(i + 1) * d].copy_from_slice(&n);
        first.bias[i] = c;
    }
    let mut layers = vec![first];
    layers.extend(min_tree_layers(d + 1));
    Hnn::new(collapse_identity_layers(&network_from_layers(&layers)?)?)
}

/// `Σ c_k χ_k` over simplices of a common dimension, as one hybrid network
/// built by stacking the characteristic networks side by side.
pub fn piecewise_constant_net(cells: &[Simplex], coeffs: &[f64]) -> Result<Hnn> {
    if cells.is_empty() || cells.len() != coeffs.len() {
        return Err(Error::InvalidArgument(
            "need one coefficient per cell and at least one cell".into(),
        ));
    }
    let d = cells[0].dim();
    if cells.iter().any(|c| c.dim() != d) {
        return Err(Error::InvalidArgument("cells differ in dimension".into()));
    }
    let blocks = cells
        .iter()
        .map(|c| Ok(layers_of(simplex_chi_net(c)?.network())))
        .collect::<Result<Vec<_>>>()?;
    let depth = blocks[0].len();
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let shared_input = l == 0;
        let n_in: usize = if shared_input {
            d
        } else {
            blocks.iter().map(|b| b[l].n_in).sum()
        };
        let last = l + 1 == depth;
        let n_out = if last {
            1
        } else {
            blocks.iter().map(|b| b[l].n_out).sum()
        };
        let mut layer = DenseLayer::zeros(n_in, n_out, blocks[0][l].activation);
        let (mut row0, mut col0) = (0, 0);
        for (b, &coef) in blocks.iter().zip(coeffs) {
            let src = &b[l];
            for i in 0..src.n_out {
                let row = if last { 0 } else { row0 + i };
                let scale = if last { coef } else { 1.0 };
                for j in 0..src.n_in {
                    let col = if shared_input { j } else { col0 + j };
                    layer.weights[row * n_in + col] += scale * src.weights[i * src.n_in + j];
                }
                layer.bias[row] += scale * src.bias[i];
            }
            row0 += src.n_out;
            if !shared_input {
                col0 += src.n_in;
            }
        }
        layers.push(layer);
    }
    Hnn::new(network_from_layers(&layers)?)
}
