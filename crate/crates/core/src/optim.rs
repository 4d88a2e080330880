//! ADAM with a linearly decaying learning rate, and the training loop.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admissible::{batch_loss, batch_loss_grad, LiftConfig, LossKind, TripleNets};
use crate::problems::{l2_error_mc, triple_error_mc, Problem};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ADAM needs 0 <= beta < 1 and eps > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            config,
        })
    }

    /// One bias-corrected ADAM update of `theta` in place.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer state has {} entries, theta {}, gradient {}",
                self.m.len(),
                theta.len(),
                grad.len()
            )));
        }
        if !(lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative learning rate {lr}")));
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Linear decay from `l0` at `t = 0` to zero at `t = total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub l0: f64,
    pub total: usize,
}

impl Schedule {
    pub fn lr_at(&self, t: usize) -> Result<f64> {
        if t > self.total {
            return Err(Error::InvalidArgument(format!(
                "step {t} beyond schedule length {}",
                self.total
            )));
        }
        if self.total == 0 {
            return Ok(self.l0);
        }
        Ok(self.l0 * (1.0 - t as f64 / self.total as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    /// Collocation points per iteration.
    pub n_points: usize,
    pub iterations: usize,
    pub l0: f64,
    pub sampling_seed: u64,
    /// Draw a fresh sample every iteration; otherwise reuse the first one.
    pub resample: bool,
    /// Evaluate errors every this many iterations; 0 disables.
    pub eval_every: usize,
    pub eval_points: usize,
    pub eval_seed: u64,
    pub adam: AdamConfig,
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
    pub l2_error: Option<f64>,
    pub triple_error: Option<f64>,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub nets: TripleNets,
    pub history: Vec<LogRecord>,
}

fn term_name(kind: LossKind, part: usize) -> &'static str {
    match (kind, part) {
        (_, 0) => "G1 (div phi + lambda + f)^2",
        (_, 1) => "G2 |grad u - phi|^2",
        (LossKind::L, _) => "G3 + G4 (pairing)",
        (LossKind::J, _) => "lambda (u - g)",
    }
}

/// Train the three networks for `settings.iterations` ADAM steps.
///
/// Row `t < T` of the history holds the loss on the sample drawn at step
/// `t`, before that step's update, and the learning rate used for it. If
/// `T > 0` a last row with `iter = T` reports the loss of the trained
/// networks on one more fresh sample. Error columns are filled every
/// `eval_every` rows and on the last row, when the problem has an exact
/// solution.
pub fn train(
    problem: &dyn Problem,
    lift: &LiftConfig,
    mut nets: TripleNets,
    settings: &TrainSettings,
    mut observer: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    if settings.n_points == 0 || !(settings.l0 > 0.0) {
        return Err(Error::InvalidArgument(
            "training needs N > 0 and l0 > 0".into(),
        ));
    }
    if settings.eval_every > 0 && settings.eval_points == 0 {
        return Err(Error::InvalidArgument("eval_points must be positive".into()));
    }
    let sched = Schedule {
        l0: settings.l0,
        total: settings.iterations,
    };
    let mut states = [
        AdamState::new(nets.v.params().len(), settings.adam)?,
        AdamState::new(nets.psi.params().len(), settings.adam)?,
        AdamState::new(nets.eta.params().len(), settings.adam)?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(settings.sampling_seed);
    let domain = problem.domain();
    let start = Instant::now();
    let mut history = Vec::with_capacity(settings.iterations + 1);
    let mut fixed = None;

    let errors = |nets: &TripleNets, iter: usize, force: bool| -> Result<(Option<f64>, Option<f64>)> {
        let due = settings.eval_every > 0 && (force || iter % settings.eval_every == 0);
        if !due || !problem.has_exact() {
            return Ok((None, None));
        }
        let l2 = l2_error_mc(problem, lift, nets, settings.eval_points, settings.eval_seed)?;
        let tri = triple_error_mc(problem, lift, nets, settings.eval_points, settings.eval_seed)?;
        Ok((Some(l2), Some(tri.total)))
    };

    for t in 0..settings.iterations {
        let points = if settings.resample {
            domain.sample_uniform(&mut rng, settings.n_points)
        } else {
            fixed
                .get_or_insert_with(|| domain.sample_uniform(&mut rng, settings.n_points))
                .clone()
        };
        let lg = batch_loss_grad(problem, lift, &nets, &points)?;
        if !lg.loss.is_finite() {
            let bad = lg.parts.iter().position(|p| !p.is_finite()).unwrap_or(0);
            return Err(Error::NonFinite {
                iteration: t,
                term: term_name(lift.loss_kind, bad).to_string(),
            });
        }
        for (name, g) in [("v", &lg.v), ("psi", &lg.psi), ("eta", &lg.eta)] {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    iteration: t,
                    term: format!("gradient of {name}"),
                });
            }
        }
        let (l2_error, triple_error) = errors(&nets, t, false)?;
        let lr = sched.lr_at(t)?;
        states[0].step(nets.v.params_mut(), &lg.v, lr)?;
        states[1].step(nets.psi.params_mut(), &lg.psi, lr)?;
        states[2].step(nets.eta.params_mut(), &lg.eta, lr)?;
        let rec = LogRecord {
            iter: t,
            loss: lg.loss,
            lr,
            l2_error,
            triple_error,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        observer(&rec);
        history.push(rec);
    }

    if settings.iterations > 0 {
        let t = settings.iterations;
        let points = domain.sample_uniform(&mut rng, settings.n_points);
        let loss = batch_loss(problem, lift, &nets, &points)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                iteration: t,
                term: "final loss".into(),
            });
        }
        let (l2_error, triple_error) = errors(&nets, t, true)?;
        let rec = LogRecord {
            iter: t,
            loss,
            lr: sched.lr_at(t)?,
            l2_error,
            triple_error,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        observer(&rec);
        history.push(rec);
    }
    Ok(TrainOutcome { nets, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_theta() {
        let mut st = AdamState::new(3, AdamConfig::default()).unwrap();
        let mut theta = [1.0, -2.0, 0.5];
        st.step(&mut theta, &[0.0; 3], 0.1).unwrap();
        assert_eq!(theta, [1.0, -2.0, 0.5]);
        assert_eq!(st.m, vec![0.0; 3]);
        assert_eq!(st.v, vec![0.0; 3]);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut st = AdamState::new(2, AdamConfig::default()).unwrap();
        let mut theta = [1.0, 1.0];
        st.step(&mut theta, &[1.0, 1.0], 0.01).unwrap();
        let expected = 1.0 - 0.01 / (1.0 + 1e-8);
        for t in theta {
            assert!((t - expected).abs() <= 1e-15);
        }
    }

    #[test]
    fn zero_lr_advances_counter() {
        let mut st = AdamState::new(1, AdamConfig::default()).unwrap();
        let mut theta = [3.0];
        st.step(&mut theta, &[2.0], 0.0).unwrap();
        assert_eq!(theta, [3.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn shape_and_config_errors() {
        let mut st = AdamState::new(2, AdamConfig::default()).unwrap();
        assert!(st.step(&mut [0.0; 3], &[0.0; 3], 0.1).is_err());
        assert!(st.step(&mut [0.0; 2], &[0.0; 2], -1.0).is_err());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(2, bad).is_err());
    }

    #[test]
    fn schedule_values() {
        let s = Schedule {
            l0: 0.001,
            total: 10_000,
        };
        assert_eq!(s.lr_at(0).unwrap(), 0.001);
        assert_eq!(s.lr_at(10_000).unwrap(), 0.0);
        assert!((s.lr_at(5000).unwrap() - 0.0005).abs() <= 1e-18);
        assert!(s.lr_at(10_001).is_err());
    }
}
