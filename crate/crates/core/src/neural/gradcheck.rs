use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use rand::Rng;

use super::mask_encoder::MaskEncoderConfig;
use super::model::{forward, sequence_loss, ModelConfig, ModelInput, SeverityModel};
use super::stream_rng;
use crate::encoder::{Combine, SequenceInput, SequenceStep};
use crate::error::{Error, Result};
use crate::model::SeverityGrade;

/// Above this many parameters only a seeded subsample is checked.
pub const GRAD_CHECK_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst parameter.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    pub total: usize,
}

/// `|a − n| / max(|a|, |n|, 1e−8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    Ok(())
}

/// Compares `analytic` with central differences of `loss` at `params` for
/// the listed indices. Parallel over indices, reduced in index order.
pub fn check_gradient<F>(params: &[f64], analytic: &[f64], epsilon: f64, indices: &[usize], loss: F) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    check_epsilon(epsilon)?;
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters vs {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let numerics: Vec<f64> = indices
        .par_iter()
        .map_init(
            || params.to_vec(),
            |p, &i| {
                let orig = p[i];
                p[i] = orig + epsilon;
                let up = loss(p);
                p[i] = orig - epsilon;
                let down = loss(p);
                p[i] = orig;
                let (up, down) = (up?, down?);
                if !up.is_finite() || !down.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss perturbing parameter {i}")));
                }
                Ok((up - down) / (2.0 * epsilon))
            },
        )
        .collect::<Result<_>>()?;
    let (mut worst, mut max, mut worst_numeric) = (indices.first().copied().unwrap_or(0), 0.0, 0.0);
    for (&i, &numeric) in indices.iter().zip(&numerics) {
        let e = relative_error(analytic[i], numeric);
        if e > max {
            (max, worst, worst_numeric) = (e, i, numeric);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max,
        worst_index: worst,
        worst_analytic: analytic.get(worst).copied().unwrap_or(0.0),
        worst_numeric,
        checked: indices.len(),
        total: params.len(),
    })
}

/// Full-model check of the cross-entropy gradient on one labelled sequence.
pub fn grad_check_report<S: ModelInput + Sync + ?Sized>(
    model: &SeverityModel,
    seq: &S,
    label: SeverityGrade,
    epsilon: f64,
    sample_seed: u64,
) -> Result<GradCheckReport> {
    check_epsilon(epsilon)?;
    let (_, cache) = seq.run(model)?;
    let analytic = model.backward(&cache, label)?.to_flat();
    let params = model.to_flat();
    let n = params.len();
    let indices: Vec<usize> = if n > GRAD_CHECK_LIMIT {
        let mut idx = sample(&mut stream_rng(sample_seed, 0), n, GRAD_CHECK_LIMIT).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    check_gradient(&params, &analytic, epsilon, &indices, |p| {
        let mut m = model.clone();
        m.set_flat(p)?;
        sequence_loss(&m, seq, label, 1.0)
    })
}

/// Maximum relative gradient error of the full model.
pub fn grad_check<S: ModelInput + Sync + ?Sized>(model: &SeverityModel, seq: &S, label: SeverityGrade, epsilon: f64) -> Result<f64> {
    Ok(grad_check_report(model, seq, label, epsilon, 0)?.max_rel_error)
}

/// Small model with a mask branch (hidden 8, three steps of 8x8 crops) and a
/// random sequence, labelled with its least likely class so the loss
/// gradient is large compared with finite-difference roundoff.
pub fn reference_case(seed: u64) -> Result<(SeverityModel, SequenceInput, SeverityGrade)> {
    let cfg = ModelConfig {
        feature_dim: 6,
        hidden_size: 8,
        combine: Combine::Add,
        mask: Some(MaskEncoderConfig {
            crop_size: 8,
            filters: [3, 4, 4],
            kernel: 3,
        }),
    };
    let model = SeverityModel::init(cfg, seed)?;
    let mut rng = stream_rng(seed, 99);
    let seq = SequenceInput {
        image_id: format!("g{seed}"),
        steps: (0..3)
            .map(|_| {
                let mut features: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
                let ex = rng.gen_bool(0.5);
                features.extend([ex as u8 as f64, !ex as u8 as f64]);
                let crop = (0..64).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
                SequenceStep {
                    features,
                    mask_crop: Some(crop),
                }
            })
            .collect(),
    };
    let (p, _) = forward(&model, &seq)?;
    let mut label = 0;
    for k in 1..3 {
        if p[k] < p[label] {
            label = k;
        }
    }
    Ok((model, seq, SeverityGrade::from_index(label)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_range() {
        let f = |_: &[f64]| Ok(0.0);
        assert!(check_gradient(&[0.0], &[0.0], 0.0, &[0], f).is_err());
        assert!(check_gradient(&[0.0], &[0.0], 1e-2, &[0], f).is_err());
        assert!(check_gradient(&[0.0], &[0.0], 1e-5, &[0], f).is_ok());
    }

    #[test]
    fn quadratic() {
        let p = [1.0, -2.0, 0.5];
        let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        let r = check_gradient(&p, &g, 1e-5, &[0, 1, 2], |p| Ok(p.iter().map(|v| v * v).sum())).unwrap();
        assert!(r.max_rel_error < 1e-9);
        let r = check_gradient(&p, &[0.0, 0.0, 0.0], 1e-5, &[0, 1, 2], |p| Ok(p.iter().map(|v| v * v).sum())).unwrap();
        assert!(r.max_rel_error > 0.9);
        assert!(check_gradient(&p, &g, 1e-5, &[0], |_| Ok(f64::NAN)).is_err());
    }
}
