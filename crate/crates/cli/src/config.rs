//! Run configuration, read from a JSON document.

use std::path::{Path, PathBuf};

use deepfosls::admissible::{AKind, LiftConfig, LossKind, TripleNets};
use deepfosls::netcore::{Activation, LayerSpec, Network, NetworkSpec};
use deepfosls::optim::{AdamConfig, TrainSettings};
use deepfosls::problems::{benchmark, Problem};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Hidden-layer activation of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Softplus,
    Relu,
    Identity,
}

/// Architecture of one of the three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub depth: usize,
    pub width: usize,
    pub activation: ActivationKind,
    /// SoftPlus sharpness; required for softplus, rejected otherwise.
    pub beta: Option<f64>,
    /// Hidden layer (0-based) that uses the step activation instead.
    pub step_layer: Option<usize>,
    /// Straight-through window of the step layer.
    pub ste_c: Option<f64>,
}

impl NetConfig {
    fn validate(&self, which: &str) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(format!("nets.{which}: {msg}")));
        if self.depth == 0 || self.width == 0 {
            return bad("depth and width must be positive".into());
        }
        match (self.activation, self.beta) {
            (ActivationKind::Softplus, Some(b)) if b > 0.0 && b.is_finite() => {}
            (ActivationKind::Softplus, _) => return bad("softplus needs a positive beta".into()),
            (_, Some(_)) => return bad("beta only applies to softplus".into()),
            _ => {}
        }
        match (self.step_layer, self.ste_c) {
            (Some(k), _) if k >= self.depth => {
                return bad(format!("step_layer {k} but only {} hidden layers", self.depth))
            }
            (Some(_), Some(c)) if c > 0.0 && c.is_finite() => {}
            (Some(_), _) => return bad("a step layer needs a positive ste_c".into()),
            (None, Some(_)) => return bad("ste_c given without a step_layer".into()),
            (None, None) => {}
        }
        Ok(())
    }

    pub fn spec(&self, input_dim: usize, output_dim: usize) -> Result<NetworkSpec, CliError> {
        let base = match self.activation {
            ActivationKind::Softplus => Activation::SoftPlus {
                beta: self.beta.unwrap_or(1.0),
            },
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::Identity => Activation::Identity,
        };
        let hidden = (0..self.depth)
            .map(|k| {
                let act = match (self.step_layer, self.ste_c) {
                    (Some(s), Some(c)) if s == k => Activation::Heaviside { ste_width: c },
                    _ => base,
                };
                LayerSpec::new(self.width, act)
            })
            .collect();
        Ok(NetworkSpec::new(input_dim, hidden, output_dim)?)
    }

    pub fn has_step(&self) -> bool {
        self.step_layer.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetsConfig {
    pub v: NetConfig,
    pub psi: NetConfig,
    pub eta: NetConfig,
}

/// Seeds of the three random streams. The networks use `init`, `init + 1`
/// and `init + 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub sampling: u64,
    pub eval: u64,
}

/// A 1D or 2D grid through the domain. Coordinates off the axes take the
/// values in `fixed` (all zero when empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceConfig {
    pub axes: Vec<usize>,
    #[serde(default)]
    pub fixed: Vec<f64>,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub benchmark: String,
    pub loss_kind: LossKind,
    pub a_kind: AKind,
    pub nets: NetsConfig,
    /// Collocation points per iteration.
    pub n_points: usize,
    pub iterations: usize,
    pub l0: f64,
    pub seeds: Seeds,
    /// 0 turns off the periodic error columns.
    pub eval_every: usize,
    pub eval_points: usize,
    /// Fresh collocation sample every iteration.
    pub resample: bool,
    pub output_dir: PathBuf,
    pub slice: SliceConfig,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let problem = self.problem()?;
        let d = problem.domain().dim();
        if self.n_points == 0 || self.eval_points == 0 {
            return Err(CliError::Config("n_points and eval_points must be positive".into()));
        }
        if !(self.l0 > 0.0 && self.l0.is_finite()) {
            return Err(CliError::Config(format!("l0 must be positive, got {}", self.l0)));
        }
        self.adam.validate()?;
        self.nets.v.validate("v")?;
        self.nets.psi.validate("psi")?;
        self.nets.eta.validate("eta")?;
        if self.nets.v.has_step() || self.nets.psi.has_step() {
            return Err(CliError::Config(
                "step layers are only supported in the eta network".into(),
            ));
        }
        let s = &self.slice;
        if s.axes.is_empty() || s.axes.len() > 2 || s.axes.iter().any(|&a| a >= d) {
            return Err(CliError::Config(format!(
                "slice needs one or two axes below {d}, got {:?}",
                s.axes
            )));
        }
        if s.axes.len() == 2 && s.axes[0] == s.axes[1] {
            return Err(CliError::Config("slice axes must differ".into()));
        }
        if !s.fixed.is_empty() && s.fixed.len() != d {
            return Err(CliError::Config(format!(
                "slice.fixed has {} entries for a {d}-dimensional domain",
                s.fixed.len()
            )));
        }
        if s.resolution < 2 {
            return Err(CliError::Config("slice resolution must be at least 2".into()));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<Box<dyn Problem>, CliError> {
        Ok(benchmark(&self.benchmark)?)
    }

    pub fn lift(&self) -> LiftConfig {
        LiftConfig::new(self.a_kind, self.loss_kind)
    }

    /// Networks at their seeded initialization.
    pub fn init_nets(&self, dim: usize) -> Result<TripleNets, CliError> {
        let s = self.seeds.init;
        let v = Network::init(self.nets.v.spec(dim, 1)?, s)?;
        let psi = Network::init(self.nets.psi.spec(dim, dim)?, s.wrapping_add(1))?;
        let eta = Network::init(self.nets.eta.spec(dim, 1)?, s.wrapping_add(2))?;
        Ok(TripleNets::new(v, psi, eta)?)
    }

    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            n_points: self.n_points,
            iterations: self.iterations,
            l0: self.l0,
            sampling_seed: self.seeds.sampling,
            resample: self.resample,
            eval_every: self.eval_every,
            eval_points: self.eval_points,
            eval_seed: self.seeds.eval,
            adam: self.adam,
        }
    }

    /// Replace the init and sampling seeds with `k` and `k + 3`.
    pub fn override_seed(&mut self, k: u64) {
        self.seeds.init = k;
        self.seeds.sampling = k.wrapping_add(3);
    }
}
