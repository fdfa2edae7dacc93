mod common;

use csc_core::corpus::{synthesize, CorpusSpec};
use csc_core::encoder::EncoderHyper;
use csc_core::model::{ModelState, OracleMode};
use csc_core::plugplay::{transfer_corpus, CorrectionModel, DrModule};
use csc_core::train::{
    current_decisions, encode_corpus, fit, fit_encoded, sentence_objective, EncodedPair, GateMode,
    Grads, TrainConfig,
};
use csc_core::CscError;

const SMALL: EncoderHyper = EncoderHyper {
    d_e: 8,
    hidden: 16,
    window: 1,
    max_len: 32,
};

fn corpus(w: &common::World, sentences: usize, seed: u64) -> Vec<EncodedPair> {
    let spec = CorpusSpec {
        sentences,
        seed,
        ..CorpusSpec::default()
    };
    let pairs = synthesize(&spec, &w.vocab, &w.index).unwrap().pairs;
    encode_corpus(&pairs, &w.vocab, &w.index).unwrap()
}

#[test]
fn small_steps_along_the_negative_gradient_decrease_the_loss() {
    let w = common::world(20, 1);
    let data = corpus(&w, 12, 2);
    let model = ModelState::new_toy(&w.vocab, &w.index, SMALL, 3);
    let config = TrainConfig {
        gate: GateMode::Gold,
        ..TrainConfig::default()
    };
    let frozen: Vec<_> = data
        .iter()
        .map(|ex| current_decisions(&model, ex, &w.index, config.gate).unwrap())
        .collect();
    let objective = |m: &ModelState| -> f64 {
        data.iter()
            .zip(&frozen)
            .map(|(ex, f)| {
                sentence_objective(m, ex, &w.index, &config, Some(f), None)
                    .unwrap()
                    .total
            })
            .sum()
    };
    let mut grads = Grads::zeros_like(&model);
    for (ex, f) in data.iter().zip(&frozen) {
        sentence_objective(&model, ex, &w.index, &config, Some(f), Some(&mut grads)).unwrap();
    }
    let before = objective(&model);
    for lr in [1e-2, 1e-3, 1e-4] {
        let mut stepped = model.clone();
        for ((_, p), (_, g)) in stepped.param_blocks_mut().into_iter().zip(grads.blocks()) {
            for (p, g) in p.iter_mut().zip(g) {
                *p -= lr * g;
            }
        }
        let after = objective(&stepped);
        assert!(after < before, "lr {lr}: {after} >= {before}");
    }
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let w = common::world(20, 1);
    let data = corpus(&w, 10, 2);
    let model = ModelState::new_toy(&w.vocab, &w.index, SMALL, 3);
    let config = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let (trained, logs) = fit_encoded(&data, model.clone(), &w.index, &config).unwrap();
    assert!(logs.is_empty());
    assert_eq!(trained.to_json().unwrap(), model.to_json().unwrap());
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let w = common::world(20, 1);
    let data = corpus(&w, 40, 2);
    let config = TrainConfig {
        epochs: 3,
        seed: 9,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let run = || {
        let m = ModelState::new_toy(&w.vocab, &w.index, SMALL, 4);
        let (m, logs) = fit_encoded(&data, m, &w.index, &config).unwrap();
        (m.to_json().unwrap(), serde_json::to_string(&logs).unwrap())
    };
    assert_eq!(run(), run());
    let other = fit_encoded(
        &data,
        ModelState::new_toy(&w.vocab, &w.index, SMALL, 4),
        &w.index,
        &TrainConfig {
            seed: 10,
            ..config.clone()
        },
    )
    .unwrap()
    .0;
    assert_ne!(other.to_json().unwrap(), run().0);
}

#[test]
fn thirty_epochs_halve_the_loss() {
    let w = common::world(30, 0);
    let spec = CorpusSpec::default();
    assert_eq!(spec.sentences, 200);
    let pairs = synthesize(&spec, &w.vocab, &w.index).unwrap().pairs;
    let model = ModelState::new_toy(&w.vocab, &w.index, EncoderHyper::default(), 0);
    let (_, logs) = fit(&pairs, model, &w.vocab, &w.index, &TrainConfig::default()).unwrap();
    assert_eq!(logs.len(), 30);
    let (first, last) = (logs[0].l, logs[29].l);
    assert!(last <= 0.5 * first, "L went from {first} to {last}");
}

#[test]
fn divergence_is_reported() {
    let w = common::world(20, 1);
    let data = corpus(&w, 20, 2);
    let model = ModelState::new_toy(&w.vocab, &w.index, SMALL, 3);
    let config = TrainConfig {
        learning_rate: 1e300,
        epochs: 2,
        ..TrainConfig::default()
    };
    let err = fit_encoded(&data, model, &w.index, &config).unwrap_err();
    assert!(matches!(err, CscError::Divergence { .. }), "{err}");
}

#[test]
fn self_transfer_reproduces_native_predictions() {
    let w = common::world(24, 2);
    let data = corpus(&w, 60, 5);
    let config = TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    };
    let (model, _) = fit_encoded(
        &data,
        ModelState::new_toy(&w.vocab, &w.index, SMALL, 1),
        &w.index,
        &config,
    )
    .unwrap();
    let dr = DrModule::from_model(&model);
    let cm = CorrectionModel::from_model(&model);
    for oracle in [
        OracleMode::Predicted,
        OracleMode::GoldDetection,
        OracleMode::GoldDetectionReasoning,
    ] {
        for masking in [true, false] {
            let native = model
                .predict_corpus(&data, &w.index, oracle, masking)
                .unwrap();
            let transferred = transfer_corpus(&data, &dr, &cm, &w.index, oracle, masking).unwrap();
            assert_eq!(native, transferred);
        }
    }
}

#[test]
fn transfer_across_vocabularies_is_refused() {
    let a = common::world(24, 2);
    let b = common::world(25, 2);
    let ma = ModelState::new_toy(&a.vocab, &a.index, SMALL, 1);
    let mb = ModelState::new_toy(&b.vocab, &b.index, SMALL, 1);
    let data = corpus(&a, 3, 1);
    let err = transfer_corpus(
        &data,
        &DrModule::from_model(&mb),
        &CorrectionModel::from_model(&ma),
        &a.index,
        OracleMode::Predicted,
        true,
    )
    .unwrap_err();
    assert_eq!(err.class(), "hash-mismatch");
}

#[test]
fn transfer_between_independently_trained_models() {
    let w = common::world(24, 2);
    let data = corpus(&w, 60, 5);
    let config = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let (a, _) = fit_encoded(
        &data,
        ModelState::new_toy(&w.vocab, &w.index, SMALL, 1),
        &w.index,
        &config,
    )
    .unwrap();
    let fixed = ModelState::new_fixed(&w.vocab, &w.index, 6, 1, 32, 2);
    let (b, _) = fit_encoded(&data, fixed, &w.index, &config).unwrap();
    let preds = transfer_corpus(
        &data,
        &DrModule::from_model(&a),
        &CorrectionModel::from_model(&b),
        &w.index,
        OracleMode::Predicted,
        true,
    )
    .unwrap();
    let native_a = a
        .predict_corpus(&data, &w.index, OracleMode::Predicted, true)
        .unwrap();
    for (p, q) in preds.iter().zip(&native_a) {
        assert_eq!(p.y_d, q.y_d);
        assert_eq!(p.y_r, q.y_r);
    }
}
