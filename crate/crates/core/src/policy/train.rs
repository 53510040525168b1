use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_nn::{
    accumulate, sgd_step, softmax, DropoutMask, GradientSet, NetworkWeights, Params, PolicyOutput,
};

/// `KL(p ‖ q) = Σ p (ln p − ln q)` with `0 ln 0 := 0`.
pub fn kl_divergence(p: &[f64], log_q: &[f64]) -> f64 {
    p.iter()
        .zip(log_q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &lq)| pi * (pi.ln() - lq))
        .sum()
}

/// Loss value and its gradient at the two network heads.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLoss {
    pub loss: f64,
    pub d_logits: Vec<f64>,
    pub d_perception: Vec<f64>,
}

/// Mean squared error of the perception head and its gradient.
pub fn perception_loss(prediction: &[f64], truth: &[f64]) -> (f64, Vec<f64>) {
    let n = prediction.len().max(1) as f64;
    let loss = prediction.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let grad = prediction.iter().zip(truth).map(|(a, b)| 2.0 * (a - b) / n).collect();
    (loss, grad)
}

/// `L_perception + α · KL(target ‖ softmax(logits))`.
pub fn pretrain_loss(output: &PolicyOutput, target: &[f64], perception_truth: &[f64], alpha: f64) -> Result<HeadLoss> {
    if target.len() != output.logits.len() {
        return Err(Error::shape(
            "pretrain_loss",
            format!("target has {} entries, logits {}", target.len(), output.logits.len()),
        ));
    }
    if perception_truth.len() != output.perception.len() {
        return Err(Error::shape(
            "pretrain_loss",
            format!(
                "perception truth has {} entries, head {}",
                perception_truth.len(),
                output.perception.len()
            ),
        ));
    }
    let log_q = output.log_probs();
    let q = softmax(&output.logits);
    let (per, d_perception) = perception_loss(&output.perception, perception_truth);
    let kl = kl_divergence(target, &log_q);
    // Target mass is normalized, so ∂KL/∂z = q − p.
    let d_logits = q.iter().zip(target).map(|(qi, pi)| alpha * (qi - pi)).collect();
    Ok(HeadLoss {
        loss: per + alpha * kl,
        d_logits,
        d_perception,
    })
}

/// One supervised example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub features: Vec<f64>,
    pub target: Vec<f64>,
    pub perception: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the distribution-matching term.
    pub alpha: f64,
    /// Drop probability of hidden units.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 8,
            batch_size: 32,
            learning_rate: 1e-4,
            alpha: 1.0,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("pretrain.batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("pretrain.learning_rate must be non-negative".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("pretrain.alpha must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("pretrain.dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-epoch record of a pretraining run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub epoch_loss: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Loss and parameter gradient of one sample.
pub fn sample_gradient(
    weights: &NetworkWeights,
    sample: &TrainingSample,
    alpha: f64,
    dropout: Option<&DropoutMask>,
) -> Result<(f64, GradientSet)> {
    let (out, cache) = weights.forward_cached(&sample.features, dropout)?;
    let head = pretrain_loss(&out, &sample.target, &sample.perception, alpha)?;
    let grads = weights.backward(&cache, &head.d_logits, &head.d_perception)?;
    Ok((head.loss, grads))
}

/// Adds `scale` times one sample's gradient into `acc` and returns its loss.
fn accumulate_sample(
    weights: &NetworkWeights,
    sample: &TrainingSample,
    alpha: f64,
    dropout: Option<&DropoutMask>,
    scale: f64,
    acc: &mut GradientSet,
) -> Result<f64> {
    let (out, cache) = weights.forward_cached(&sample.features, dropout)?;
    let head = pretrain_loss(&out, &sample.target, &sample.perception, alpha)?;
    weights.backward_into(&cache, &head.d_logits, &head.d_perception, scale, acc)?;
    Ok(head.loss)
}

const SMOOTHING_WINDOW: usize = 2;
/// Samples per gradient partial sum within a batch.
const GRAD_CHUNK: usize = 8;

/// Minibatch SGD on the pretraining loss. Per-sample gradients are computed
/// in parallel and summed in sample order, so results do not depend on the
/// thread count.
pub fn pretrain(
    init: NetworkWeights,
    samples: &[TrainingSample],
    config: &PretrainConfig,
) -> Result<(NetworkWeights, PretrainLog)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Input("pretraining dataset is empty".into()));
    }
    let mut weights = init;
    let mut log = PretrainLog::default();
    let shape = weights.shape();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let masks: Vec<Option<DropoutMask>> = batch
                .iter()
                .map(|_| (config.dropout > 0.0).then(|| DropoutMask::sample(&shape, config.dropout, &mut rng)))
                .collect();
            // Fixed-size chunks accumulated in order, then summed in order.
            let scale = 1.0 / batch.len() as f64;
            let partials = batch
                .par_chunks(GRAD_CHUNK)
                .zip(masks.par_chunks(GRAD_CHUNK))
                .map(|(idx, mask)| {
                    let mut acc = weights.zeros_like();
                    let mut loss = 0.0;
                    for (&i, m) in idx.iter().zip(mask) {
                        loss += accumulate_sample(&weights, &samples[i], config.alpha, m.as_ref(), scale, &mut acc)?;
                    }
                    Ok((loss, acc))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut acc = weights.zeros_like();
            let mut batch_loss = 0.0;
            for (loss, g) in partials {
                batch_loss += loss;
                accumulate(&mut acc, &g, 1.0)?;
            }
            if !batch_loss.is_finite() || !acc.all_finite() {
                return Err(Error::Training(format!("epoch {epoch} batch {b}: loss {batch_loss}")));
            }
            sgd_step(&mut weights, &acc, config.learning_rate)?;
            total += batch_loss;
        }
        log.epoch_loss.push(total / samples.len() as f64);
        let n = log.epoch_loss.len();
        if n > SMOOTHING_WINDOW {
            let window = |end: usize| log.epoch_loss[end - SMOOTHING_WINDOW..end].iter().sum::<f64>();
            if window(n) > window(n - 1) {
                log.warnings.push(format!(
                    "epoch {epoch}: smoothed training loss rose to {:.6}",
                    window(n) / SMOOTHING_WINDOW as f64
                ));
            }
        }
    }
    Ok((weights, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_nn::NetworkShape;

    fn out(logits: Vec<f64>, perception: Vec<f64>) -> PolicyOutput {
        PolicyOutput { logits, perception }
    }

    #[test]
    fn matching_distribution_has_zero_loss() {
        let o = out(vec![0.3, -1.0, 2.0], vec![0.5]);
        let p = o.probs();
        let l = pretrain_loss(&o, &p, &[0.5], 1.0).unwrap();
        assert!(l.loss.abs() < 1e-12);
        assert!(l.d_logits.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn one_hot_against_half_is_ln2() {
        let o = out(vec![0.0, 0.0], vec![]);
        let l = pretrain_loss(&o, &[1.0, 0.0], &[], 1.0).unwrap();
        assert!((l.loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn alpha_scales_kl_linearly() {
        let o = out(vec![0.1, 0.7, -0.4], vec![1.0, 2.0]);
        let t = [0.2, 0.5, 0.3];
        let truth = [0.0, 1.0];
        let (per, _) = perception_loss(&o.perception, &truth);
        let a = pretrain_loss(&o, &t, &truth, 1.0).unwrap().loss - per;
        let b = pretrain_loss(&o, &t, &truth, 2.0).unwrap().loss - per;
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let shape = NetworkShape {
            input: 3,
            hidden: vec![4, 4],
            vocab: 2,
            perception: 1,
        };
        let w = NetworkWeights::init(&shape, 1);
        let s = TrainingSample {
            features: vec![1.0, 0.0, -1.0],
            target: vec![1.0, 0.0],
            perception: vec![0.5],
        };
        let cfg = PretrainConfig {
            epochs: 0,
            ..PretrainConfig::default()
        };
        let (w2, log) = pretrain(w.clone(), &[s], &cfg).unwrap();
        assert_eq!(w, w2);
        assert!(log.epoch_loss.is_empty());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let shape = NetworkShape {
            input: 1,
            hidden: vec![2],
            vocab: 2,
            perception: 1,
        };
        let w = NetworkWeights::init(&shape, 1);
        assert!(matches!(pretrain(w, &[], &PretrainConfig::default()), Err(Error::Input(_))));
    }
}
