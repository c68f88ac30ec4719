use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::layers::{cross_entropy, softmax, Dense};
use super::lstm::{LstmCellParams, LstmStepCache};
use super::mask_encoder::{MaskEncoder, MaskEncoderCache, MaskEncoderConfig};
use super::stream_rng;
use super::tensor::Tensor;
use crate::encoder::{Combine, EncoderConfig, FeatureSequence, SequenceInput};
use crate::error::{Error, Result};
use crate::model::SeverityGrade;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Length of the base (box/kind) vector.
    pub feature_dim: usize,
    pub hidden_size: usize,
    pub combine: Combine,
    /// Present when the model owns a trainable mask branch.
    pub mask: Option<MaskEncoderConfig>,
}

impl ModelConfig {
    pub fn from_encoder(enc: &EncoderConfig, hidden_size: usize) -> Self {
        Self {
            feature_dim: enc.feature_dim,
            hidden_size,
            combine: enc.combine,
            mask: enc.use_masks.then(|| MaskEncoderConfig {
                crop_size: enc.mask_crop_size,
                ..MaskEncoderConfig::default()
            }),
        }
    }

    pub fn step_dim(&self) -> usize {
        if self.mask.is_some() && self.combine == Combine::Concat {
            2 * self.feature_dim
        } else {
            self.feature_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_size == 0 {
            return Err(Error::InvalidParameter("feature_dim and hidden_size must be positive".into()));
        }
        if let Some(m) = &self.mask {
            m.validate()?;
        }
        Ok(())
    }
}

/// Mask branch, LSTM and a dense head producing three severity logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SeverityModel {
    config: ModelConfig,
    pub mask_encoder: Option<MaskEncoder>,
    pub lstm: LstmCellParams,
    pub head: Dense,
}

#[derive(Debug, Clone)]
struct StepCache {
    lstm: LstmStepCache,
    mask: Option<MaskEncoderCache>,
}

/// Activations of one forward pass, tied to the parameters that made them.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    steps: Vec<StepCache>,
    h_final: Vec<f64>,
    pub probs: [f64; 3],
}

/// Something the model can run on: a raw sequence (mask crops encoded by
/// the model itself) or an already encoded one.
pub trait ModelInput {
    fn image_id(&self) -> &str;
    fn run(&self, model: &SeverityModel) -> Result<([f64; 3], ForwardCache)>;
}

impl ModelInput for SequenceInput {
    fn image_id(&self) -> &str {
        &self.image_id
    }

    fn run(&self, model: &SeverityModel) -> Result<([f64; 3], ForwardCache)> {
        model.forward(self)
    }
}

impl ModelInput for FeatureSequence {
    fn image_id(&self) -> &str {
        &self.image_id
    }

    fn run(&self, model: &SeverityModel) -> Result<([f64; 3], ForwardCache)> {
        model.forward_features(self)
    }
}

impl SeverityModel {
    fn assemble(config: ModelConfig, mask_encoder: Option<MaskEncoder>, lstm: LstmCellParams, head: Dense) -> Self {
        Self {
            config,
            mask_encoder,
            lstm,
            head,
        }
    }

    /// All parameters zero, forget bias included.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let enc = config.mask.as_ref().map(|m| MaskEncoder::zeros(m, config.feature_dim));
        let lstm = LstmCellParams::zeros(config.step_dim(), config.hidden_size);
        let head = Dense::zeros(config.hidden_size, 3);
        Ok(Self::assemble(config, enc, lstm, head))
    }

    /// Glorot initialization; each weight tensor draws from its own stream
    /// of the root `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut stream = 0u64;
        let mut next = || {
            stream += 1;
            stream_rng(seed, stream)
        };
        let lstm = LstmCellParams::init(config.step_dim(), config.hidden_size, &mut next());
        let head = Dense::init(config.hidden_size, 3, &mut next());
        let enc = config.mask.as_ref().map(|m| MaskEncoder::init(m, config.feature_dim, &mut next));
        Ok(Self::assemble(config, enc, lstm, head))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Model of the same shape with every value zero.
    pub fn zeros_like(&self) -> Self {
        let mut m = self.clone();
        m.tensors_mut().into_iter().for_each(|(_, t)| t.fill(0.0));
        m
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        if let Some(enc) = &self.mask_encoder {
            for (k, c) in enc.convs.iter().enumerate() {
                v.push((format!("mask.conv{k}.weight"), &c.weight));
                v.push((format!("mask.conv{k}.bias"), &c.bias));
            }
            v.push(("mask.proj.weight".into(), &enc.proj.weight));
            v.push(("mask.proj.bias".into(), &enc.proj.bias));
        }
        v.push(("lstm.weight".into(), &self.lstm.weight));
        v.push(("lstm.bias".into(), &self.lstm.bias));
        v.push(("head.weight".into(), &self.head.weight));
        v.push(("head.bias".into(), &self.head.bias));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = Vec::new();
        if let Some(enc) = &mut self.mask_encoder {
            for (k, c) in enc.convs.iter_mut().enumerate() {
                v.push((format!("mask.conv{k}.weight"), &mut c.weight));
                v.push((format!("mask.conv{k}.bias"), &mut c.bias));
            }
            v.push(("mask.proj.weight".into(), &mut enc.proj.weight));
            v.push(("mask.proj.bias".into(), &mut enc.proj.bias));
        }
        v.push(("lstm.weight".into(), &mut self.lstm.weight));
        v.push(("lstm.bias".into(), &mut self.lstm.bias));
        v.push(("head.weight".into(), &mut self.head.weight));
        v.push(("head.bias".into(), &mut self.head.bias));
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for (_, t) in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Hash of the exact parameter bits, used to reject stale caches.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (_, t) in self.tensors() {
            t.shape().hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    fn run_steps(&self, steps: Vec<(Vec<f64>, Option<MaskEncoderCache>)>) -> Result<([f64; 3], ForwardCache)> {
        if steps.is_empty() {
            return Err(Error::Contract("severity model needs at least one step".into()));
        }
        let n_h = self.config.hidden_size;
        let (mut h, mut c) = (vec![0.0; n_h], vec![0.0; n_h]);
        let mut caches = Vec::with_capacity(steps.len());
        for (x, mask) in steps {
            let (h2, c2, lstm) = self.lstm.forward_step(&x, &h, &c)?;
            h = h2;
            c = c2;
            caches.push(StepCache { lstm, mask });
        }
        let logits = self.head.forward(&h)?;
        let p = softmax(&logits);
        let probs = [p[0], p[1], p[2]];
        if !probs.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite class probabilities".into()));
        }
        Ok((
            probs,
            ForwardCache {
                fingerprint: self.fingerprint(),
                steps: caches,
                h_final: h,
                probs,
            },
        ))
    }

    /// Runs the mask branch on each crop, then the LSTM and head.
    pub fn forward(&self, seq: &SequenceInput) -> Result<([f64; 3], ForwardCache)> {
        let fd = self.config.feature_dim;
        let mut steps = Vec::with_capacity(seq.steps.len());
        for step in &seq.steps {
            if step.features.len() != fd {
                return Err(Error::Shape(format!(
                    "step has {} features, model expects {fd}",
                    step.features.len()
                )));
            }
            let (m, cache) = match (&step.mask_crop, &self.mask_encoder) {
                (None, _) => (None, None),
                (Some(crop), Some(enc)) => {
                    let (m, cache) = enc.forward(crop)?;
                    (Some(m), Some(cache))
                }
                (Some(_), None) => {
                    return Err(Error::Shape("mask crop given to a model without a mask branch".into()))
                }
            };
            let x = match (self.mask_encoder.is_some(), self.config.combine, m) {
                (true, Combine::Concat, m) => {
                    let mut x = step.features.clone();
                    x.extend(m.unwrap_or_else(|| vec![0.0; fd]));
                    x
                }
                (_, _, Some(m)) => step.features.iter().zip(&m).map(|(a, b)| a + b).collect(),
                (_, _, None) => step.features.clone(),
            };
            steps.push((x, cache));
        }
        self.run_steps(steps)
    }

    /// Runs on already encoded step vectors of length `step_dim`.
    pub fn forward_features(&self, seq: &FeatureSequence) -> Result<([f64; 3], ForwardCache)> {
        self.run_steps(seq.steps.iter().map(|s| (s.clone(), None)).collect())
    }

    pub fn backward(&self, cache: &ForwardCache, label: SeverityGrade) -> Result<SeverityModel> {
        self.backward_weighted(cache, label, 1.0)
    }

    /// Gradients of `weight · CE(probs, label)` for every parameter.
    pub fn backward_weighted(&self, cache: &ForwardCache, label: SeverityGrade, weight: f64) -> Result<SeverityModel> {
        if cache.fingerprint != self.fingerprint() {
            return Err(Error::Contract("activation cache does not belong to these parameters".into()));
        }
        let mut grad = self.zeros_like();
        let mut dlogits = cache.probs;
        dlogits[label.index()] -= 1.0;
        dlogits.iter_mut().for_each(|v| *v *= weight);
        let mut dh = self.head.backward(&cache.h_final, &dlogits, &mut grad.head);
        let mut dc = vec![0.0; self.config.hidden_size];
        let fd = self.config.feature_dim;
        for step in cache.steps.iter().rev() {
            let (dx, dh_prev, dc_prev) = self.lstm.backward_step(&step.lstm, &dh, &dc, &mut grad.lstm);
            if let (Some(mc), Some(enc), Some(genc)) = (&step.mask, &self.mask_encoder, &mut grad.mask_encoder) {
                let dm = match self.config.combine {
                    Combine::Add => &dx[..fd],
                    Combine::Concat => &dx[fd..2 * fd],
                };
                enc.backward(mc, dm, genc);
            }
            dh = dh_prev;
            dc = dc_prev;
        }
        Ok(grad)
    }
}

pub fn forward<S: ModelInput + ?Sized>(model: &SeverityModel, seq: &S) -> Result<([f64; 3], ForwardCache)> {
    seq.run(model)
}

pub fn backward(model: &SeverityModel, cache: &ForwardCache, label: SeverityGrade) -> Result<SeverityModel> {
    model.backward(cache, label)
}

/// Weighted cross-entropy of one sequence.
pub fn sequence_loss<S: ModelInput + ?Sized>(model: &SeverityModel, seq: &S, label: SeverityGrade, weight: f64) -> Result<f64> {
    let (p, _) = seq.run(model)?;
    Ok(weight * cross_entropy(&p, label.index()))
}

/// Most probable grade; ties go to the lower grade.
pub fn argmax_grade(probs: &[f64; 3]) -> SeverityGrade {
    let mut best = 0;
    for k in 1..3 {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    SeverityGrade::from_index(best).expect("index below 3")
}

pub fn predict_severity<S: ModelInput + ?Sized>(model: &SeverityModel, seq: &S) -> Result<(SeverityGrade, [f64; 3])> {
    let (p, _) = seq.run(model)?;
    Ok((argmax_grade(&p), p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::SequenceStep;

    fn cfg(mask: bool) -> ModelConfig {
        ModelConfig {
            feature_dim: 6,
            hidden_size: 4,
            combine: Combine::Add,
            mask: mask.then_some(MaskEncoderConfig {
                crop_size: 8,
                filters: [2, 2, 2],
                kernel: 3,
            }),
        }
    }

    fn seq(n: usize) -> FeatureSequence {
        FeatureSequence {
            image_id: "s".into(),
            steps: (0..n).map(|k| vec![0.1 * k as f64, 0.2, 0.3, 0.4, 1.0, 0.0]).collect(),
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = SeverityModel::zeros(cfg(false)).unwrap();
        let (g, p) = predict_severity(&m, &seq(2)).unwrap();
        assert_eq!(p, [1.0 / 3.0; 3]);
        assert_eq!(g, SeverityGrade::Healthy);
    }

    #[test]
    fn empty_sequence_is_contract_violation() {
        let m = SeverityModel::init(cfg(false), 1).unwrap();
        assert!(matches!(forward(&m, &seq(0)), Err(Error::Contract(_))));
    }

    #[test]
    fn head_bias_gradient_closed_form() {
        let m = SeverityModel::init(cfg(false), 3).unwrap();
        let (p, cache) = forward(&m, &seq(3)).unwrap();
        let g = backward(&m, &cache, SeverityGrade::Medium).unwrap();
        let expect = [p[0], p[1] - 1.0, p[2]];
        assert_eq!(g.head.bias.data(), &expect);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut m = SeverityModel::init(cfg(false), 3).unwrap();
        let (_, cache) = forward(&m, &seq(2)).unwrap();
        m.head.bias.data_mut()[0] += 1.0;
        assert!(matches!(backward(&m, &cache, SeverityGrade::Healthy), Err(Error::Contract(_))));
    }

    #[test]
    fn init_is_seeded() {
        let a = SeverityModel::init(cfg(true), 9).unwrap();
        assert_eq!(a, SeverityModel::init(cfg(true), 9).unwrap());
        assert_ne!(a, SeverityModel::init(cfg(true), 10).unwrap());
        assert!(a.lstm.bias.data()[4..8].iter().all(|v| *v == 1.0));
        let mut b = a.zeros_like();
        b.set_flat(&a.to_flat()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sequence_input_without_crops_matches_features() {
        let m = SeverityModel::init(cfg(false), 5).unwrap();
        let f = seq(3);
        let raw = SequenceInput {
            image_id: "s".into(),
            steps: f
                .steps
                .iter()
                .map(|s| SequenceStep {
                    features: s.clone(),
                    mask_crop: None,
                })
                .collect(),
        };
        assert_eq!(forward(&m, &raw).unwrap().0, forward(&m, &f).unwrap().0);
    }
}
