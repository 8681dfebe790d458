//! Pretext pretraining: plain SGD cross-entropy training on data held out
//! from the continual stream, producing the strong initialization the
//! stream starts from.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, MlpSpec, ParamVector};
use crate::optim::{sgd_step, SgdConfig};
use crate::rngstream;
use crate::scalar::Scalar;

/// Train freshly initialized weights on the pretext dataset and return
/// them. With zero epochs this is exactly the initializer output, so the
/// whole pipeline degrades gracefully to a cold start.
pub fn pretext_pretrain<F: Scalar>(
    spec: &MlpSpec,
    pretext_ds: &Dataset<F>,
    epochs: usize,
    lr: F,
    batch_size: usize,
    seed: u64,
) -> Result<ParamVector<F>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    let mut params = nn::init_params::<F>(spec, seed);
    if epochs == 0 {
        return Ok(params);
    }
    let sgd = SgdConfig::new(lr)?;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..pretext_ds.len()).collect();
        let mut rng = rngstream::derive(seed, rngstream::PRETRAIN_BASE + epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let batch = pretext_ds.batch(chunk)?;
            let (loss, grad) = nn::backward(spec, &params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::non_finite(format!(
                    "pretraining loss became non-finite in epoch {epoch}"
                )));
            }
            params = sgd_step(&params, &grad, &sgd)?;
        }
    }
    Ok(params)
}

/// Fraction of the dataset the model labels correctly, in percent, with
/// the argmax over the full output head.
pub fn train_accuracy<F: Scalar>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    ds: &Dataset<F>,
) -> Result<F> {
    let batch = ds.full_batch()?;
    let logits = nn::forward(spec, params, batch.inputs())?;
    let mut correct = 0usize;
    for (row, &label) in batch.labels().iter().enumerate() {
        let mut best = 0usize;
        let mut best_logit = logits[(row, 0)];
        for k in 1..spec.output_dim() {
            if logits[(row, k)] > best_logit {
                best_logit = logits[(row, k)];
                best = k;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(crate::scalar::from_count::<F>(100 * correct) / crate::scalar::from_count::<F>(ds.len()))
}
