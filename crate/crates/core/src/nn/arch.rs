use serde::{Deserialize, Serialize};

use super::params::ParamLayout;
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative evaluated at the pre-activation `z`. ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

/// A dropout mask on the output of hidden layer `layer` with keep
/// probability `rate` (a unit survives with probability `rate`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutLayer {
    pub layer: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    widths: Vec<usize>,
    activation: Activation,
    dropout: Vec<DropoutLayer>,
}

impl Architecture {
    pub fn new(
        widths: Vec<usize>,
        activation: Activation,
        mut dropout: Vec<DropoutLayer>,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "architecture needs at least input and output widths, got {widths:?}"
            )));
        }
        if let Some(pos) = widths.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!("layer width {pos} is zero")));
        }
        let depth = widths.len() - 1;
        dropout.sort_by_key(|d| d.layer);
        for pair in dropout.windows(2) {
            if pair[0].layer == pair[1].layer {
                return Err(Error::Config(format!(
                    "dropout layer {} listed twice",
                    pair[0].layer
                )));
            }
        }
        for d in &dropout {
            if d.layer < 1 || d.layer >= depth {
                return Err(Error::Config(format!(
                    "dropout layer {} outside hidden range 1..={}",
                    d.layer,
                    depth - 1
                )));
            }
            if !(0.0..=1.0).contains(&d.rate) {
                return Err(Error::Config(format!(
                    "dropout rate {} on layer {} is outside [0, 1]",
                    d.rate, d.layer
                )));
            }
        }
        Ok(Self {
            widths,
            activation,
            dropout,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of affine maps, `L`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.depth()]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dropout(&self) -> &[DropoutLayer] {
        &self.dropout
    }

    pub fn dropout_rate(&self, layer: usize) -> Option<f64> {
        self.dropout
            .iter()
            .find(|d| d.layer == layer)
            .map(|d| d.rate)
    }

    /// Same network with a different dropout placement.
    pub fn with_dropout(&self, dropout: Vec<DropoutLayer>) -> Result<Self> {
        Self::new(self.widths.clone(), self.activation, dropout)
    }

    pub fn without_dropout(&self) -> Self {
        Self {
            widths: self.widths.clone(),
            activation: self.activation,
            dropout: Vec::new(),
        }
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::from_widths(&self.widths)
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}
