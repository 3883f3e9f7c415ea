use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_parallel, Forecaster, ModelConfig, ModelError};
use crate::sampling::WindowSample;
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Mini-batch Adam on mean binary cross-entropy.
///
/// Per-sample gradients may be computed on several threads; they are summed
/// in batch order and every sample's dropout stream is keyed by
/// `(seed, step, position)`, so results do not depend on the thread count.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Forecaster,
    adam: AdamState,
    step: usize,
    epoch: usize,
}

fn dropout_seed(seed: u64, step: usize, pos: usize) -> u64 {
    let mut z = seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (pos as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Trainer {
    pub fn new(model: Forecaster) -> Self {
        let adam = AdamState::new(
            &model.params,
            AdamConfig { lr: model.config.lr, ..AdamConfig::default() },
        );
        Self { model, adam, step: 0, epoch: 0 }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn diverged(&self, detail: String) -> ModelError {
        ModelError::Diverged {
            epoch: self.epoch,
            step: self.step,
            lr: self.model.config.lr,
            detail,
        }
    }

    /// One optimiser step on `batch`; returns the batch's mean loss.
    pub fn step(&mut self, batch: &[&WindowSample]) -> Result<f64, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        let model = &self.model;
        let step = self.step;
        let per_sample = |(pos, s): (usize, &&WindowSample)| -> Result<(f64, Vec<Tensor>), ModelError> {
            let mut tape = Tape::new(dropout_seed(model.config.seed, step, pos));
            let loss = model.sample_loss(&mut tape, s, true)?;
            let value = tape.value(loss).item();
            let grads = tape.backward(loss)?.param_grads(&model.params);
            Ok((value, grads))
        };
        let results: Vec<Result<(f64, Vec<Tensor>), ModelError>> = run_parallel(model.config.threads, || {
            batch.par_iter().enumerate().map(per_sample).collect()
        });

        let mut total = 0.0;
        let mut sum: Option<Vec<Tensor>> = None;
        for r in results {
            let (loss, grads) = r.map_err(|e| match e {
                ModelError::Tensor(TensorError::NonFinite { op }) => self.diverged(format!("forward produced NaN/Inf in {op}")),
                other => other,
            })?;
            total += loss;
            match &mut sum {
                None => sum = Some(grads),
                Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
            }
        }
        let n = batch.len() as f64;
        let grads: Vec<Tensor> = sum
            .unwrap_or_default()
            .into_iter()
            .map(|g| g.map(|v| v / n))
            .collect();
        if !grads.iter().all(Tensor::all_finite) {
            return Err(self.diverged("gradient is not finite".into()));
        }
        self.adam.step(&mut self.model.params, &grads)?;
        if !self.model.params.tensors().iter().all(Tensor::all_finite) {
            return Err(self.diverged("parameters overflowed after the update".into()));
        }
        self.step += 1;
        let mean = total / n;
        if !mean.is_finite() {
            return Err(self.diverged(format!("batch loss {mean}")));
        }
        Ok(mean)
    }

    /// One pass over `samples` in a seeded shuffled order; returns the
    /// per-sample mean loss.
    pub fn epoch(&mut self, samples: &[WindowSample], rng: &mut ChaCha8Rng) -> Result<f64, ModelError> {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(rng);
        let bs = self.model.config.batch_size;
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| &samples[i]).collect();
            total += self.step(&batch)? * batch.len() as f64;
        }
        self.epoch += 1;
        Ok(total / samples.len() as f64)
    }

    /// The trained model with parameters rounded to checkpoint precision.
    pub fn into_model(self) -> Forecaster {
        let mut m = self.model;
        m.params.round_to_f32();
        m
    }
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn train(
    samples: &[WindowSample],
    n_vars: usize,
    config: ModelConfig,
) -> Result<(Forecaster, Vec<EpochLoss>), ModelError> {
    train_with(samples, n_vars, config, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    samples: &[WindowSample],
    n_vars: usize,
    config: ModelConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<(Forecaster, Vec<EpochLoss>), ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let positives = samples.iter().filter(|s| s.label == 1).count();
    if positives == 0 || positives == samples.len() {
        log::warn!("training set has a single class ({positives} of {} positive)", samples.len());
    }
    let mut trainer = Trainer::new(Forecaster::new(config, n_vars)?);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mean_loss = trainer.epoch(samples, &mut rng)?;
        log::info!("epoch {epoch}/{}: mean loss {mean_loss:.5}", config.epochs);
        let entry = EpochLoss { epoch, mean_loss };
        on_epoch(&entry);
        history.push(entry);
    }
    Ok((trainer.into_model(), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::VariableId;
    use crate::sampling::Token;

    fn samples(n: usize) -> Vec<WindowSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand::Rng;
        (0..n)
            .map(|i| {
                let label = u8::from(i % 3 == 0);
                let k = rng.random_range(2..6);
                let tokens = (0..k)
                    .map(|j| Token {
                        t_rel: -(j as f64) * 0.1,
                        var: VariableId(rng.random_range(0..30)),
                        v_norm: rng.random_range(-1.0..1.0) + if label == 1 { 1.0 } else { 0.0 },
                    })
                    .collect();
                WindowSample {
                    patient_id: format!("p{i}"),
                    cutoff_days: 20.0,
                    tokens,
                    static_vec: [0.0, 1.0, 0.0],
                    label,
                }
            })
            .collect()
    }

    fn small() -> ModelConfig {
        ModelConfig { d_model: 8, n_blocks: 1, n_heads: 2, batch_size: 4, epochs: 3, lr: 1e-2, ..Default::default() }
    }

    #[test]
    fn training_is_deterministic_across_thread_counts() {
        let data = samples(12);
        let (a, ha) = train(&data, 30, small()).unwrap();
        let (b, hb) = train(&data, 30, small()).unwrap();
        let (c, _) = train(&data, 30, ModelConfig { threads: 3, ..small() }).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.params, b.params);
        assert_eq!(a.params, c.params);
        assert_eq!(ha.len(), 3);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(matches!(train(&[], 30, small()), Err(ModelError::EmptyTrainingSet)));
    }

    #[test]
    fn divergence_is_reported() {
        let data = samples(4);
        let cfg = ModelConfig { lr: 1e300, epochs: 5, ..small() };
        let err = train(&data, 30, cfg).unwrap_err();
        assert!(matches!(err, ModelError::Diverged { .. }), "{err}");
        assert!(err.to_string().contains("learning rate"));
    }
}
