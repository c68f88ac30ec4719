use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::cross_entropy;
use super::model::{argmax_grade, ModelInput, SeverityModel};
use super::stream_rng;
use crate::error::{Error, Result};
use crate::model::SeverityGrade;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Weight each class by inverse frequency in the training set.
    pub class_weights: bool,
    /// Rescale each gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
    /// Stop once training accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 200,
            seed: 0,
            class_weights: false,
            clip_norm: Some(5.0),
            target_accuracy: None,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter(format!("clip norm {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:.17e},{:.17e}\n", e.epoch, e.loss, e.accuracy));
        }
        s
    }
}

/// Inverse-frequency weights `n / (3 · n_k)`; absent classes get 0.
pub fn inverse_frequency_weights(labels: &[SeverityGrade]) -> [f64; 3] {
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    let n = labels.len() as f64;
    counts.map(|c| if c == 0 { 0.0 } else { n / (3.0 * c as f64) })
}

/// Mean cross-entropy and accuracy; per-item work in parallel, summed in order.
pub fn evaluate<S: ModelInput + Sync>(model: &SeverityModel, data: &[(S, SeverityGrade)]) -> Result<(f64, f64)> {
    let rows: Vec<(f64, bool)> = data
        .par_iter()
        .map(|(s, y)| {
            let (p, _) = s.run(model)?;
            Ok((cross_entropy(&p, y.index()), argmax_grade(&p) == *y))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let loss = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let acc = rows.iter().filter(|r| r.1).count() as f64 / n;
    Ok((loss, acc))
}

fn step_params(model: &mut SeverityModel, velocity: &mut SeverityModel, grad: &SeverityModel, lr: f64, mu: f64, scale: f64) {
    for (((_, p), (_, v)), (_, g)) in model
        .tensors_mut()
        .into_iter()
        .zip(velocity.tensors_mut())
        .zip(grad.tensors())
    {
        for ((p, v), g) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *v = mu * *v - lr * scale * g;
            *p += *v;
        }
    }
}

/// Per-sequence SGD with momentum, shuffled each epoch from `params.seed`.
pub fn train<S: ModelInput + Sync>(
    mut model: SeverityModel,
    data: &[(S, SeverityGrade)],
    params: &TrainParams,
) -> Result<(SeverityModel, TrainHistory)> {
    params.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let labels: Vec<SeverityGrade> = data.iter().map(|d| d.1).collect();
    let weights = if params.class_weights {
        inverse_frequency_weights(&labels)
    } else {
        [1.0; 3]
    };
    let mut velocity = model.zeros_like();
    let mut rng = stream_rng(params.seed, 0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();
    let (loss, accuracy) = evaluate(&model, data)?;
    history.epochs.push(EpochStats { epoch: 0, loss, accuracy });

    for epoch in 1..=params.epochs {
        if params.target_accuracy.is_some_and(|t| history.last().unwrap().accuracy >= t) {
            break;
        }
        order.shuffle(&mut rng);
        for &i in &order {
            let (seq, y) = &data[i];
            let w = weights[y.index()];
            let (p, cache) = seq.run(&model)?;
            let loss = w * cross_entropy(&p, y.index());
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch} on {}: loss {loss}",
                    seq.image_id()
                )));
            }
            let grad = model.backward_weighted(&cache, *y, w)?;
            let norm = grad
                .tensors()
                .iter()
                .flat_map(|(_, t)| t.data().iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch} on {}: non-finite gradient",
                    seq.image_id()
                )));
            }
            let scale = match params.clip_norm {
                Some(c) if norm > c => c / norm,
                _ => 1.0,
            };
            step_params(&mut model, &mut velocity, &grad, params.learning_rate, params.momentum, scale);
        }
        let (loss, accuracy) = evaluate(&model, data)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training diverged at epoch {epoch}: loss {loss}")));
        }
        history.epochs.push(EpochStats { epoch, loss, accuracy });
    }
    Ok((model, history))
}
