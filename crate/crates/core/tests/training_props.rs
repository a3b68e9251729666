use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vortcast::datasets::{generate_dataset, Dataset, Regime, Split};
use vortcast::dns::{InitialCondition, SimConfig};
use vortcast::model::{HdsConfig, ModelConfig, Variant};
use vortcast::tensor::Tensor;
use vortcast::training::*;
use vortcast::Error;

fn tiny_data(dir: &Path) -> Dataset {
    let sim = SimConfig { init: InitialCondition::McWilliams { k0: 3.0, tau0: 1.0, energy: 0.5 }, ..Regime::Decaying.sim_config(16) };
    generate_dataset(Regime::Decaying, 3, 6, &sim, 7, dir).unwrap();
    Dataset::open(dir).unwrap()
}

fn tiny_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        n: 16,
        strides: vec![1, 2],
        widths: vec![4, 8],
        variant,
        hds: HdsConfig { heads: 2, ..HdsConfig::default() },
        ..ModelConfig::default()
    }
}

#[test]
fn zero_epochs_returns_the_initial_model_and_an_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(dir.path());
    let out = tempfile::tempdir().unwrap();
    let mc = tiny_model(Variant::Full);
    let tc = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let outcome = train(&mc, &tc, &data, Some(out.path())).unwrap();
    let init = vortcast::model::Model::new(mc).unwrap();
    assert_eq!(outcome.last.model.params().tensors(), init.params().tensors());
    assert_eq!(outcome.best.model.params().tensors(), init.params().tensors());
    assert!(outcome.log.rows.is_empty());
    assert_eq!(std::fs::read_to_string(out.path().join(LOG_FILE)).unwrap(), "step,epoch,split,loss\n");
    let back = Checkpoint::load(&out.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(back.epoch, 0);
    assert_eq!(back.normalization, data.normalization());
}

#[test]
fn identical_configs_give_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(dir.path());
    let mc = tiny_model(Variant::Full);
    let tc = TrainConfig { epochs: 2, batch_size: 3, ..TrainConfig::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = train(&mc, &tc, &data, Some(a.path())).unwrap();
    let rb = train(&mc, &tc, &data, Some(b.path())).unwrap();
    assert_eq!(ra.log.to_csv(), rb.log.to_csv());
    for f in [LOG_FILE, BEST_CHECKPOINT, FINAL_CHECKPOINT, CONFIG_ECHO] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let other = train(&mc, &TrainConfig { seed: 9, ..tc }, &data, None).unwrap();
    assert_ne!(other.log.to_csv(), ra.log.to_csv());
}

#[test]
fn log_has_one_row_per_step_plus_two_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(dir.path());
    let tc = TrainConfig { epochs: 2, batch_size: 2, ..TrainConfig::default() };
    let r = train(&tiny_model(Variant::NoHds), &tc, &data, None).unwrap();
    // one training trajectory of 6 frames gives 5 pairs, 3 batches of 2
    assert_eq!(r.log.losses(LogSplit::Train).len(), 6);
    assert_eq!(r.log.losses(LogSplit::Val).len(), 2);
    assert_eq!(r.log.losses(LogSplit::TrainEpoch).len(), 2);
    let best = r.log.losses(LogSplit::Val).into_iter().fold(f64::INFINITY, f64::min);
    assert_eq!(best, r.best_val_loss);
}

#[test]
fn exploding_updates_abort_with_non_finite_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(dir.path());
    let tc = TrainConfig { epochs: 3, batch_size: 1, learning_rate: 1e300, clip_norm: 0.0, ..TrainConfig::default() };
    match train(&tiny_model(Variant::NoHds), &tc, &data, None) {
        Err(Error::NonFiniteLoss { step }) => assert!(step >= 1),
        other => panic!("expected a non-finite loss abort, got {:?}", other.map(|o| o.best_val_loss)),
    }
}

#[test]
fn batch_results_do_not_depend_on_thread_count() {
    let model = vortcast::model::Model::new(tiny_model(Variant::Full)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::randn(&[5, 1, 16, 16], 1.0, &mut rng);
    let y = Tensor::randn(&[5, 1, 16, 16], 1.0, &mut rng);
    let (l1, g1) = batch_loss_with_threads(&model, &x, &y, true, 1).unwrap();
    for t in [2, 3, 8] {
        let (lt, gt) = batch_loss_with_threads(&model, &x, &y, true, t).unwrap();
        assert_eq!(l1.to_bits(), lt.to_bits());
        assert_eq!(g1, gt);
    }
    // the batch loss is the mean of the per-sample losses
    let direct = mse_loss(&model.predict(&x).unwrap(), &y).unwrap();
    assert!((direct - l1).abs() < 1e-12 * direct);
}

#[test]
fn validation_leaves_parameters_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(dir.path());
    let model = vortcast::model::Model::new(tiny_model(Variant::Full)).unwrap();
    let before = model.params().tensors().to_vec();
    let a = evaluate_loss(&model, &data, Split::Val, 2).unwrap();
    let b = evaluate_loss(&model, &data, Split::Val, 4).unwrap();
    assert_eq!(model.params().tensors(), &before[..]);
    assert!((a - b).abs() < 1e-12 * a);
}
