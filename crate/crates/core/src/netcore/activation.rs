use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Element-wise activation of a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Activation {
    /// `s(x) = ln(1 + exp(beta x)) / beta`.
    SoftPlus { beta: f64 },
    /// `max(0, x)`, with slope 0 at the origin.
    Relu,
    /// Step function with `H(0) = 1`. Trained with the straight-through
    /// surrogate `(1/c) 1_[0,c]` in place of its derivative.
    Heaviside { ste_width: f64 },
    Identity,
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::SoftPlus { beta } if !(beta > 0.0 && beta.is_finite()) => Err(
                Error::InvalidSpec(format!("softplus beta must be positive, got {beta}")),
            ),
            Activation::Heaviside { ste_width } if !(ste_width > 0.0 && ste_width.is_finite()) => {
                Err(Error::InvalidSpec(format!(
                    "ste width must be positive, got {ste_width}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self, Activation::SoftPlus { .. } | Activation::Identity)
    }

    /// Value and training derivative at `z`.
    ///
    /// For the step function the derivative returned is the straight-through
    /// surrogate; values are never affected by it.
    pub fn eval(&self, z: f64) -> (f64, f64) {
        (self.value(z), self.train_derivative(z))
    }

    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        self.eval_full(z).value
    }

    /// Exact (almost-everywhere) derivative, used for input Jacobians.
    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        self.eval_full(z).first
    }

    /// Derivative used on the value path of the reverse pass.
    #[inline]
    pub fn train_derivative(&self, z: f64) -> f64 {
        self.eval_full(z).train
    }

    #[inline]
    pub fn second_derivative(&self, z: f64) -> f64 {
        self.eval_full(z).second
    }

    /// Value and all derivatives at `z`, sharing one exponential.
    #[inline]
    pub fn eval_full(&self, z: f64) -> Pointwise {
        match *self {
            Activation::SoftPlus { beta } => {
                let bz = beta * z;
                let e = (-bz.abs()).exp();
                let s = if bz >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                Pointwise {
                    value: z.max(0.0) + e.ln_1p() / beta,
                    first: s,
                    train: s,
                    second: beta * s * (1.0 - s),
                }
            }
            Activation::Relu => {
                let on = z > 0.0;
                let d = if on { 1.0 } else { 0.0 };
                Pointwise {
                    value: if on { z } else { 0.0 },
                    first: d,
                    train: d,
                    second: 0.0,
                }
            }
            Activation::Heaviside { ste_width } => Pointwise {
                value: if z >= 0.0 { 1.0 } else { 0.0 },
                first: 0.0,
                train: if (0.0..=ste_width).contains(&z) {
                    1.0 / ste_width
                } else {
                    0.0
                },
                second: 0.0,
            },
            Activation::Identity => Pointwise {
                value: z,
                first: 1.0,
                train: 1.0,
                second: 0.0,
            },
        }
    }
}

/// Activation value with its exact, training and second derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pointwise {
    pub value: f64,
    pub first: f64,
    pub train: f64,
    pub second: f64,
}
