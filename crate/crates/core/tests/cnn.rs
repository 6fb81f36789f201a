use clayshape::classify::{cnn_build, cnn_train};
use clayshape::ingest::{split_dataset, synth_generate, SynthConfig, DEFAULT_RATIOS};
use clayshape::nn::TrainConfig;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(lr: f64, epochs: usize, patience: usize) -> TrainConfig {
    let mut cfg = TrainConfig::cnn_defaults();
    cfg.learning_rate = lr;
    cfg.max_epochs = epochs;
    cfg.early_stop_patience = patience;
    cfg.seed = 3;
    cfg
}

#[test]
fn fixed_seed_gives_identical_histories() {
    let (images, labels) = synth_generate(&SynthConfig::with_default_classes(4, 10, 32, 1)).unwrap();
    let split = split_dataset(images.len(), None::<&[String]>, DEFAULT_RATIOS, 2).unwrap();
    let run = || {
        let mut m = cnn_build(32, 4, &[4, 4, 8, 8], 5).unwrap();
        let h = cnn_train(&mut m, &images, &labels, &split, &config(1e-3, 2, 2), |_| {}).unwrap();
        (h, m)
    };
    let (h1, m1) = run();
    let (h2, m2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1, m2);
}

#[test]
fn unlearnable_labels_stop_early() {
    let (images, mut labels) = synth_generate(&SynthConfig::with_default_classes(4, 12, 32, 6)).unwrap();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(7));
    let split = split_dataset(images.len(), None::<&[String]>, DEFAULT_RATIOS, 8).unwrap();
    let mut m = cnn_build(32, 4, &[4, 4, 8, 8], 9).unwrap();
    let h = cnn_train(&mut m, &images, &labels, &split, &config(3e-3, 40, 2), |_| {}).unwrap();
    assert!(h.stopped_early);
    assert!(h.epochs.len() < 40);
    let best = h.epochs.iter().map(|e| e.validation_loss).fold(f64::INFINITY, f64::min);
    let tail = &h.epochs[h.epochs.len() - 2..];
    assert!(tail.iter().all(|e| e.validation_loss >= best));
}
