use gabor_cnn::dataset::{generate_dataset, split_by_distance, DatasetConfig, SplitSpec, MANIFEST};
use gabor_cnn::harness::report::ResultTable;
use gabor_cnn::harness::{cells, run_experiment_with, ExperimentConfig, RunOptions};
use gabor_cnn::nn::{build_model, load_checkpoint, softmax_cross_entropy, Arch, Mode};
use gabor_cnn::optim::{OptimConfig, Sgd};
use gabor_cnn::pipeline::PipelineVariant;
use gabor_cnn::probe::probe_curve;
use gabor_cnn::svm::SvmConfig;
use gabor_cnn::train::{evaluate, train_model, Preprocessor};

fn tiny_dataset() -> DatasetConfig {
    DatasetConfig {
        objects: 2,
        distances: vec![39.5, 47.0],
        heights: vec![22.0],
        angles: 6,
        width: 16,
        height: 16,
    }
}

#[test]
fn experiment_on_disk_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = ExperimentConfig {
        seed: 11,
        data_dir: Some(data.clone()),
        input_side: 16,
        variants: vec![PipelineVariant::A, PipelineVariant::B],
        architectures: vec![Arch::MiniCnn],
        train_distances: vec![39.5],
        trials: 1,
        dataset: tiny_dataset(),
        optim: OptimConfig {
            total_epochs: 2,
            warmup_epochs: 1,
            batch_size: 4,
            ..OptimConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let opts = RunOptions {
        cell_dir: Some(dir.path().join("cells")),
        checkpoint_dir: Some(dir.path().join("ckpt")),
    };
    let table = run_experiment_with(&cfg, &opts).unwrap();
    assert!(data.join(MANIFEST).exists());
    assert_eq!(table.rows.len(), 2);
    assert!(table.rows.iter().all(|r| !r.failed()));
    assert_eq!(
        ResultTable::merge_dir(dir.path().join("cells")).unwrap(),
        table
    );

    let ds = gabor_cnn::dataset::load_dataset(&data).unwrap();
    let (_, test) = split_by_distance(&ds, &SplitSpec::train_on(&ds, 39.5).unwrap()).unwrap();
    for (cell, row) in cells(&cfg).iter().zip(&table.rows) {
        let path = dir
            .path()
            .join("ckpt")
            .join(format!("{}.gbnn", cell.file_stem()));
        let (model, side) = load_checkpoint(&path).unwrap();
        assert_eq!(side, 16);
        let prep = Preprocessor::new(cell.variant, side).unwrap();
        let acc = evaluate(&model, &prep, &test).unwrap();
        assert!((acc - row.test_acc.unwrap()).abs() <= 1.0 / test.len() as f64);
    }

    let strip = |t: ResultTable| {
        t.rows
            .into_iter()
            .map(|mut r| {
                r.epoch_seconds = None;
                r
            })
            .collect::<Vec<_>>()
    };
    let again = run_experiment_with(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(strip(again), strip(table));
}

#[test]
fn small_sgd_step_lowers_batch_loss() {
    let ds = generate_dataset(&tiny_dataset(), 1).unwrap();
    let prep = Preprocessor::new(PipelineVariant::C, 16).unwrap();
    let inputs = prep.eval_batch(&ds.samples()[..8]).unwrap();
    let labels: Vec<usize> = ds.samples()[..8].iter().map(|s| s.label()).collect();
    for arch in [Arch::MiniCnn, Arch::MiniResNet8] {
        let mut m = build_model(arch, prep.channels(), 2, 16, 5).unwrap();
        m.zero_grad();
        let (before, grad) =
            softmax_cross_entropy(&m.forward(&inputs, Mode::Train).unwrap(), &labels).unwrap();
        m.backward(&grad).unwrap();
        let mut sgd = Sgd::new(OptimConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            ..OptimConfig::default()
        });
        sgd.step(m.params_mut(), 1e-3).unwrap();
        let (after, _) =
            softmax_cross_entropy(&m.forward(&inputs, Mode::Train).unwrap(), &labels).unwrap();
        assert!(after < before, "{arch:?}: {before} -> {after}");
    }
}

#[test]
fn training_is_seed_deterministic_and_probe_reads_every_block() {
    let ds = generate_dataset(&tiny_dataset(), 2).unwrap();
    let (train, test) = split_by_distance(&ds, &SplitSpec::train_on(&ds, 47.0).unwrap()).unwrap();
    let prep = Preprocessor::new(PipelineVariant::D, 16).unwrap();
    let cfg = OptimConfig {
        total_epochs: 2,
        warmup_epochs: 1,
        batch_size: 4,
        ..OptimConfig::default()
    };
    let fit = |seed| {
        let mut m = build_model(Arch::MiniResNet8, prep.channels(), 2, 16, seed).unwrap();
        let report = train_model(&mut m, &prep, &train, &cfg, seed).unwrap();
        (m, report)
    };
    let (a, ra) = fit(7);
    let (b, rb) = fit(7);
    let (c, _) = fit(8);
    assert_eq!(a.checksum(), b.checksum());
    assert_eq!(ra.epoch_losses, rb.epoch_losses);
    assert_ne!(a.checksum(), c.checksum());
    assert!(ra.epoch_losses.iter().all(|l| l.is_finite()));

    let curve = probe_curve(&a, &prep, &train, &test, &SvmConfig::default()).unwrap();
    let dims: Vec<usize> = curve.rows.iter().map(|r| r.feature_dim).collect();
    assert_eq!(dims.len(), 8);
    assert!(dims.windows(2).all(|w| w[0] <= w[1]));
}
