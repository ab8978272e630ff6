//! Linear-SVM probes on intermediate block activations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::nn::{ModelGraph, Tensor};
use crate::svm::{accuracy, svm_fit, svm_predict, SvmConfig};
use crate::train::{Preprocessor, EVAL_CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub block_index: usize,
    pub feature_dim: usize,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub rows: Vec<ProbeRow>,
}

impl ProbeResult {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let rows = csv::Reader::from_path(path)?
            .deserialize()
            .collect::<std::result::Result<Vec<ProbeRow>, _>>()?;
        Ok(Self { rows })
    }
}

/// `N x C x H x W` -> `N x C` channel means.
pub fn global_average(t: &Tensor) -> Result<Tensor> {
    t.expect_rank(4, "block activation")?;
    let (n, c) = (t.shape()[0], t.shape()[1]);
    let plane = t.shape()[2] * t.shape()[3];
    if plane == 0 {
        return Err(Error::ZeroDimension);
    }
    let data = t
        .data()
        .chunks(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new(vec![n, c], data)
}

fn concat_rows(parts: Vec<Tensor>) -> Result<Tensor> {
    let dim = parts.first().map_or(0, |t| t.shape()[1]);
    let rows: usize = parts.iter().map(|t| t.shape()[0]).sum();
    let data = parts.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::new(vec![rows, dim], data)
}

/// GAP features after the 1-based `block` for every sample.
pub fn extract_features(
    model: &ModelGraph,
    prep: &Preprocessor,
    samples: &[Sample],
    block: usize,
) -> Result<Tensor> {
    model.tap_layer(block)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let parts = samples
        .chunks(EVAL_CHUNK)
        .map(|chunk| global_average(&model.forward_to_tap(&prep.eval_batch(chunk)?, block)?))
        .collect::<Result<Vec<_>>>()?;
    concat_rows(parts)
}

/// GAP features at every tap from a single pass per chunk, in tap order.
pub fn extract_all_features(
    model: &ModelGraph,
    prep: &Preprocessor,
    samples: &[Sample],
) -> Result<Vec<Tensor>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let taps = model.block_taps.len();
    let mut per_tap: Vec<Vec<Tensor>> = vec![Vec::new(); taps];
    for chunk in samples.chunks(EVAL_CHUNK) {
        let acts = model.forward_taps(&prep.eval_batch(chunk)?)?;
        for (slot, a) in per_tap.iter_mut().zip(acts) {
            slot.push(global_average(&a)?);
        }
    }
    per_tap.into_iter().map(concat_rows).collect()
}

/// Fits one SVM per tap on training features and scores both splits.
pub fn probe_curve(
    model: &ModelGraph,
    prep: &Preprocessor,
    train: &[Sample],
    test: &[Sample],
    cfg: &SvmConfig,
) -> Result<ProbeResult> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train_labels: Vec<usize> = train.iter().map(Sample::label).collect();
    let test_labels: Vec<usize> = test.iter().map(Sample::label).collect();
    let train_feats = extract_all_features(model, prep, train)?;
    let test_feats = extract_all_features(model, prep, test)?;
    let mut rows = Vec::with_capacity(train_feats.len());
    for (i, (tr, te)) in train_feats.iter().zip(&test_feats).enumerate() {
        let svm = svm_fit(tr, &train_labels, cfg)?;
        let row = ProbeRow {
            block_index: i + 1,
            feature_dim: tr.shape()[1],
            train_acc: accuracy(&svm_predict(&svm, tr)?, &train_labels),
            test_acc: accuracy(&svm_predict(&svm, te)?, &test_labels),
        };
        log::info!(
            "block {}  dim {:>3}  train {:.3}  test {:.3}",
            row.block_index,
            row.feature_dim,
            row.train_acc,
            row.test_acc
        );
        rows.push(row);
    }
    Ok(ProbeResult { rows })
}
