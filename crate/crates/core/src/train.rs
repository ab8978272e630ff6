//! Input preparation, the training loop and accuracy evaluation.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{augment_train, batch_iter, eval_transform, Sample};
use crate::error::{Error, Result};
use crate::imgio::GrayImage;
use crate::nn::{argmax_rows, softmax_cross_entropy, Mode, ModelGraph, Tensor};
use crate::optim::{lr_at, OptimConfig, Sgd};
use crate::pipeline::{build_pipeline, PipelineSpec, PipelineVariant};

/// Samples per forward pass during evaluation and feature extraction.
pub const EVAL_CHUNK: usize = 64;

/// Turns raw images into network inputs: geometric transform, then the
/// Gabor pipeline.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub pipeline: PipelineSpec,
    pub input_side: usize,
}

impl Preprocessor {
    pub fn new(variant: PipelineVariant, input_side: usize) -> Result<Self> {
        if input_side == 0 {
            return Err(Error::ZeroDimension);
        }
        Ok(Self {
            pipeline: build_pipeline(variant)?,
            input_side,
        })
    }

    pub fn channels(&self) -> usize {
        self.pipeline.out_channels()
    }

    pub fn train_input<R: Rng>(&self, img: &GrayImage, rng: &mut R) -> Result<Tensor> {
        self.pipeline
            .apply(&augment_train(img, rng, self.input_side)?)
    }

    pub fn eval_input(&self, img: &GrayImage) -> Result<Tensor> {
        self.pipeline.apply(&eval_transform(img, self.input_side)?)
    }

    /// Eval inputs for `samples`, stacked to `N x C x H x W`.
    pub fn eval_batch(&self, samples: &[Sample]) -> Result<Tensor> {
        let items = samples
            .iter()
            .map(|s| self.eval_input(&s.image))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&items)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

impl TrainReport {
    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epoch_seconds.is_empty() {
            return 0.0;
        }
        self.epoch_seconds.iter().sum::<f64>() / self.epoch_seconds.len() as f64
    }
}

/// Trains `model` for `cfg.total_epochs` epochs of augmented, shuffled
/// mini-batches. `seed` drives shuffling and augmentation.
pub fn train_model(
    model: &mut ModelGraph,
    prep: &Preprocessor,
    samples: &[Sample],
    cfg: &OptimConfig,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sgd = Sgd::new(*cfg);
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(cfg.total_epochs),
        epoch_seconds: Vec::with_capacity(cfg.total_epochs),
    };
    for epoch in 0..cfg.total_epochs {
        let start = Instant::now();
        let lr = lr_at(epoch, cfg)?;
        let mut loss_sum = 0.0;
        let batches = batch_iter(samples, cfg.batch_size, &mut rng, |s, r| {
            prep.train_input(&s.image, r)
        })?;
        for batch in batches {
            let batch = batch?;
            model.zero_grad();
            let logits = model.forward(&batch.inputs, Mode::Train)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &batch.labels)?;
            model.backward(&grad)?;
            sgd.step(model.params_mut(), lr)?;
            loss_sum += loss * batch.labels.len() as f64;
        }
        let mean_loss = loss_sum / samples.len() as f64;
        let secs = start.elapsed().as_secs_f64();
        log::info!(
            "epoch {:>3}  lr {lr:.3e}  loss {mean_loss:.4}  {secs:.1}s",
            epoch + 1
        );
        report.epoch_losses.push(mean_loss);
        report.epoch_seconds.push(secs);
    }
    Ok(report)
}

/// Eval-mode class predictions for already-prepared inputs.
pub fn predict(model: &ModelGraph, inputs: &Tensor) -> Result<Vec<usize>> {
    Ok(argmax_rows(&model.forward_eval(inputs)?))
}

/// Eval-mode predictions for raw samples, prepared in chunks.
pub fn predict_samples(
    model: &ModelGraph,
    prep: &Preprocessor,
    samples: &[Sample],
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        out.extend(predict(model, &prep.eval_batch(chunk)?)?);
    }
    Ok(out)
}

/// Fraction of samples whose eval-mode prediction matches the object label.
pub fn evaluate(model: &ModelGraph, prep: &Preprocessor, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pred = predict_samples(model, prep, samples)?;
    let hits = pred
        .iter()
        .zip(samples)
        .filter(|(p, s)| **p == s.label())
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, DatasetConfig};
    use crate::nn::{build_model, Arch};

    fn tiny() -> Vec<Sample> {
        let cfg = DatasetConfig {
            objects: 2,
            distances: vec![39.5],
            heights: vec![22.0],
            angles: 8,
            width: 16,
            height: 16,
        };
        generate_dataset(&cfg, 2).unwrap().samples().to_vec()
    }

    fn short_cfg() -> OptimConfig {
        OptimConfig {
            total_epochs: 4,
            warmup_epochs: 1,
            batch_size: 8,
            ..OptimConfig::default()
        }
    }

    #[test]
    fn preprocessor_shapes() {
        let img = GrayImage::filled(20, 16, 0.3);
        for v in PipelineVariant::ALL {
            let p = Preprocessor::new(v, 8).unwrap();
            assert_eq!(p.eval_input(&img).unwrap().shape(), &[v.channels(), 8, 8]);
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let samples = tiny();
        let prep = Preprocessor::new(PipelineVariant::A, 8).unwrap();
        let run = || {
            let mut m = build_model(Arch::MiniCnn, 1, 2, 8, 11).unwrap();
            let r = train_model(&mut m, &prep, &samples, &short_cfg(), 5).unwrap();
            (m, r.epoch_losses)
        };
        let (m1, l1) = run();
        let (m2, l2) = run();
        assert_eq!(m1.checksum(), m2.checksum());
        assert_eq!(l1, l2);
        assert_eq!(l1.len(), 4);
        assert!(l1.iter().all(|l| l.is_finite()));
        let acc = evaluate(&m1, &prep, &samples).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn evaluation_leaves_model_untouched() {
        let samples = tiny();
        let prep = Preprocessor::new(PipelineVariant::B, 8).unwrap();
        let m = build_model(Arch::MiniResNet8, 8, 2, 8, 1).unwrap();
        let before = m.checksum();
        let a = predict_samples(&m, &prep, &samples).unwrap();
        assert_eq!(a, predict_samples(&m, &prep, &samples).unwrap());
        assert_eq!(m.checksum(), before);
        assert!(matches!(evaluate(&m, &prep, &[]), Err(Error::EmptyDataset)));
    }
}
