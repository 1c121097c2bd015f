//! Classifier heads and feature-wise batch normalization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{NodeId, Tape, Value};
use crate::error::{dim_mismatch, Result};

pub const NUM_CLASSES: usize = 10;
pub const FCNN_HIDDEN: usize = 800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierChoice {
    #[default]
    Logistic,
    Fcnn800,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fully connected layer with row-major `out_dim x in_dim` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Uniform initialization in `±1/sqrt(in_dim)`.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let b = 1.0 / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| rng.random_range(-b..b)).collect(),
            bias: (0..out_dim).map(|_| rng.random_range(-b..b)).collect(),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn record(&self, tape: &mut Tape, x: NodeId, batch: usize) -> Result<(NodeId, [NodeId; 2])> {
        let w = tape.leaf(self.weight.clone());
        let b = tape.leaf(self.bias.clone());
        let y = tape.affine(x, w, b, batch, self.in_dim, self.out_dim)?;
        Ok((y, [w, b]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm1d {
    pub dim: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Record normalization; training mode also updates the running statistics.
    pub fn record(&mut self, tape: &mut Tape, x: NodeId, batch: usize, mode: Mode) -> (NodeId, [NodeId; 2]) {
        let g = tape.leaf(self.gamma.clone());
        let b = tape.leaf(self.beta.clone());
        let y = match mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm(x, g, b, batch, self.dim, self.eps);
                let unbias = if batch > 1 {
                    batch as f64 / (batch as f64 - 1.0)
                } else {
                    1.0
                };
                let m = self.momentum;
                for f in 0..self.dim {
                    self.running_mean[f] = (1.0 - m) * self.running_mean[f] + m * stats.mean[f];
                    self.running_var[f] = (1.0 - m) * self.running_var[f] + m * stats.var[f] * unbias;
                }
                y
            }
            Mode::Eval => tape.batch_norm_eval(x, g, b, self.dim, &self.running_mean, &self.running_var, self.eps),
        };
        (y, [g, b])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Classifier {
    Logistic(Linear),
    Fcnn {
        fc1: Linear,
        bn: BatchNorm1d,
        fc2: Linear,
    },
}

impl Classifier {
    pub fn new(choice: ClassifierChoice, in_dim: usize, rng: &mut impl Rng) -> Self {
        match choice {
            ClassifierChoice::Logistic => Classifier::Logistic(Linear::init(in_dim, NUM_CLASSES, rng)),
            ClassifierChoice::Fcnn800 => Classifier::Fcnn {
                fc1: Linear::init(in_dim, FCNN_HIDDEN, rng),
                bn: BatchNorm1d::new(FCNN_HIDDEN),
                fc2: Linear::init(FCNN_HIDDEN, NUM_CLASSES, rng),
            },
        }
    }

    /// All-zero parameters with the layout of `choice`.
    pub fn zeros(choice: ClassifierChoice, in_dim: usize) -> Self {
        match choice {
            ClassifierChoice::Logistic => Classifier::Logistic(Linear::zeros(in_dim, NUM_CLASSES)),
            ClassifierChoice::Fcnn800 => Classifier::Fcnn {
                fc1: Linear::zeros(in_dim, FCNN_HIDDEN),
                bn: BatchNorm1d::new(FCNN_HIDDEN),
                fc2: Linear::zeros(FCNN_HIDDEN, NUM_CLASSES),
            },
        }
    }

    pub fn choice(&self) -> ClassifierChoice {
        match self {
            Classifier::Logistic(_) => ClassifierChoice::Logistic,
            Classifier::Fcnn { .. } => ClassifierChoice::Fcnn800,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Classifier::Logistic(l) => l.in_dim,
            Classifier::Fcnn { fc1, .. } => fc1.in_dim,
        }
    }

    /// Record the head on `tape`. Returns the score node and the parameter
    /// leaves in [`Classifier::params_mut`] order.
    pub fn record(&mut self, tape: &mut Tape, x: NodeId, batch: usize, mode: Mode) -> Result<(NodeId, Vec<NodeId>)> {
        let n = tape.real(x).len();
        if n != batch * self.in_dim() {
            return Err(dim_mismatch("classifier input", batch * self.in_dim(), n));
        }
        match self {
            Classifier::Logistic(fc) => {
                let (y, p) = fc.record(tape, x, batch)?;
                Ok((y, p.to_vec()))
            }
            Classifier::Fcnn { fc1, bn, fc2 } => {
                let (h, p1) = fc1.record(tape, x, batch)?;
                let (h, p2) = bn.record(tape, h, batch, mode);
                let h = tape.relu(h);
                let (y, p3) = fc2.record(tape, h, batch)?;
                Ok((y, [p1, p2, p3].concat()))
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Classifier::Logistic(fc) => vec![&mut fc.weight, &mut fc.bias],
            Classifier::Fcnn { fc1, bn, fc2 } => vec![
                &mut fc1.weight,
                &mut fc1.bias,
                &mut bn.gamma,
                &mut bn.beta,
                &mut fc2.weight,
                &mut fc2.bias,
            ],
        }
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        match self {
            Classifier::Logistic(fc) => vec![fc.weight.len(), fc.bias.len()],
            Classifier::Fcnn { fc1, bn, fc2 } => vec![
                fc1.weight.len(),
                fc1.bias.len(),
                bn.dim,
                bn.dim,
                fc2.weight.len(),
                fc2.bias.len(),
            ],
        }
    }

    /// Batch-norm layer inside the head, if any.
    pub fn batch_norm(&self) -> Option<&BatchNorm1d> {
        match self {
            Classifier::Logistic(_) => None,
            Classifier::Fcnn { bn, .. } => Some(bn),
        }
    }

    pub fn batch_norm_mut(&mut self) -> Option<&mut BatchNorm1d> {
        match self {
            Classifier::Logistic(_) => None,
            Classifier::Fcnn { bn, .. } => Some(bn),
        }
    }

    /// Eval-mode scores for `batch` flattened inputs.
    pub fn predict(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xi = tape.constant(Value::Real(x.to_vec()));
        let mut me = self.clone();
        let (y, _) = me.record(&mut tape, xi, batch, Mode::Eval)?;
        Ok(tape.real(y).to_vec())
    }
}

/// Index of the largest score in each row of `classes` entries.
pub fn argmax_rows(scores: &[f64], classes: usize) -> Vec<usize> {
    scores
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
