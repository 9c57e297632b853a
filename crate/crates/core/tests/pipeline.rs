mod common;

use common::*;
use dsgg_autodiff::{finite_diff_check, seed, Checkpoint, Graph};
use dsgg_core::{
    compute_memory_bank, corpus_batches, evaluate_corpus, train, Error, Model, OraclePredictor, Pass, Toggles,
    TrainConfig,
};
use dsgg_metrics::{EvalOptions, Regime, TaskMode};
use dsgg_synth::LabelSource;

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, lr: 1e-3, ..Default::default() }
}

#[test]
fn full_model_gradients_match_finite_differences_in_sgcls() {
    let corpus = tiny_corpus(3);
    let batches = corpus_batches(&corpus, TaskMode::SgCls).unwrap();
    let mut model = Model::init(tiny_config(TaskMode::SgCls, Toggles::ALL_ON), 5).unwrap();
    jitter(&mut model.params, &mut seed::stream(9, 9), 0.05);
    let bank = compute_memory_bank(&model, &batches, 2).unwrap();
    let cfg = model.config.gmm();
    let eps = cfg.sample_eps(batches[0].pairs(), &mut seed::stream(1, 1));
    let batch = &batches[0];
    let report = finite_diff_check(&model.params, 1e-5, |g, b| {
        let f = model
            .forward(g, b, batch, Pass::Train { eps: Some(&eps), bank: Some(&bank) })
            .map_err(|e| dsgg_autodiff::Error::Contract(e.to_string()))?;
        Ok(f.losses.unwrap().total)
    })
    .unwrap();
    // Coordinate-wise agreement is limited by f64 roundoff in the loss for
    // gradients near 1e-6; whole tensors are compared norm-wise.
    assert!(report.max_param_error() < 1e-4, "{:?}", report.params);
    assert!(report.max_rel_error < 1e-2, "{:?}", report.worst);
}

#[test]
fn disabled_memory_matches_lambda_one() {
    let corpus = tiny_corpus(4);
    let batches = corpus_batches(&corpus, TaskMode::PredCls).unwrap();
    let mut off = Model::init(tiny_config(TaskMode::PredCls, Toggles { mdu: false, ..Toggles::ALL_ON }), 2).unwrap();
    let mut one = Model::init(ModelConfigExt::lambda(tiny_config(TaskMode::PredCls, Toggles::ALL_ON), 1.0), 2).unwrap();
    let a = train(&mut off, &batches, &quick(3), |_| Ok(())).unwrap();
    let b = train(&mut one, &batches, &quick(3), |_| Ok(())).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x.loss - y.loss).abs() <= 1e-12, "epoch {}: {} vs {}", x.epoch, x.loss, y.loss);
        assert!((x.u_al - y.u_al).abs() <= 1e-12);
    }
}

trait ModelConfigExt {
    fn lambda(self, l: f64) -> Self;
}

impl ModelConfigExt for dsgg_core::ModelConfig {
    fn lambda(mut self, l: f64) -> Self {
        self.lambda = l;
        self
    }
}

#[test]
fn short_run_is_finite_and_logs_every_epoch() {
    let corpus = tiny_corpus(5);
    let batches = corpus_batches(&corpus, TaskMode::SgDet).unwrap();
    let mut model = Model::init(tiny_config(TaskMode::SgDet, Toggles::ALL_ON), 0).unwrap();
    let mut banks = Vec::new();
    let logs = train(&mut model, &batches, &quick(3), |ev| {
        banks.push(ev.next_bank.map(|b| b.source_epoch));
        Ok(())
    })
    .unwrap();
    assert_eq!(logs.len(), 3);
    assert!(logs.iter().all(|l| l.loss.is_finite() && l.u_al.is_finite() && l.u_ep >= 0.0));
    assert_eq!(banks, vec![Some(1), Some(2), None]);

    let mut plain = Model::init(tiny_config(TaskMode::SgDet, Toggles::ALL_OFF), 0).unwrap();
    let logs = train(&mut plain, &batches, &quick(1), |_| Ok(())).unwrap();
    assert!(logs[0].u_al.is_nan() && logs[0].loss.is_finite());
}

#[test]
fn non_finite_loss_aborts_with_the_step() {
    let corpus = tiny_corpus(6);
    let batches = corpus_batches(&corpus, TaskMode::PredCls).unwrap();
    let mut model = Model::init(tiny_config(TaskMode::PredCls, Toggles::ALL_ON), 0).unwrap();
    model.params.get_mut("ospu.cls2.b").unwrap().data_mut()[0] = f64::NAN;
    match train(&mut model, &batches, &quick(2), |_| Ok(())) {
        Err(Error::Numeric { epoch: 1, step: 0, .. }) => {}
        other => panic!("expected numeric failure, got {:?}", other.map(|l| l.len())),
    }
}

#[test]
fn oracle_predictions_recall_everything_without_constraint() {
    let corpus = tiny_corpus(7);
    let batches = corpus_batches(&corpus, TaskMode::PredCls).unwrap();
    let oracle = OraclePredictor { object_classes: 3, predicate_classes: 4 };
    let counts = corpus.predicate_counts(LabelSource::Observed);
    let (report, _) = evaluate_corpus(&oracle, &batches, &counts, &EvalOptions::new(TaskMode::PredCls, 4)).unwrap();
    assert_eq!(report.at(Regime::NoConstraints, 50).unwrap().recall, 1.0);
    assert_eq!(report.at(Regime::NoConstraints, 50).unwrap().mean_recall, 1.0);
}

#[test]
fn random_weights_give_bounded_metrics_and_replay_exactly() {
    let corpus = tiny_corpus(8);
    let counts = corpus.predicate_counts(LabelSource::Observed);
    for task in [TaskMode::PredCls, TaskMode::SgCls, TaskMode::SgDet] {
        let batches = corpus_batches(&corpus, task).unwrap();
        let model = Model::init(tiny_config(task, Toggles::ALL_ON), 1).unwrap();
        let opts = EvalOptions::new(task, 4);
        let (a, _) = evaluate_corpus(&model, &batches, &counts, &opts).unwrap();
        let (b, _) = evaluate_corpus(&model, &batches, &counts, &opts).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        for r in &a.regimes {
            for k in &r.at_k {
                assert!((0.0..=1.0).contains(&k.recall) && (0.0..=1.0).contains(&k.mean_recall));
            }
        }
    }
}

#[test]
fn checkpoints_restore_the_same_predictions() {
    let corpus = tiny_corpus(9);
    let batches = corpus_batches(&corpus, TaskMode::SgCls).unwrap();
    let mut model = Model::init(tiny_config(TaskMode::SgCls, Toggles::ALL_ON), 4).unwrap();
    train(&mut model, &batches, &quick(1), |_| Ok(())).unwrap();
    let bytes = model.to_checkpoint().to_bytes();
    let back = Model::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.config, model.config);
    let opts = EvalOptions::new(TaskMode::SgCls, 4);
    let counts = corpus.predicate_counts(LabelSource::Observed);
    let (a, _) = evaluate_corpus(&model, &batches, &counts, &opts).unwrap();
    let (b, _) = evaluate_corpus(&back, &batches, &counts, &opts).unwrap();
    assert_eq!(a.to_json(), b.to_json());

    let mut wrong = model.to_checkpoint();
    wrong.params.insert("extra", dsgg_autodiff::Tensor::zeros(&[1, 1]));
    assert!(matches!(Model::from_checkpoint(wrong), Err(Error::Config { .. })));
}

#[test]
fn inference_ignores_the_memory_unit() {
    let corpus = tiny_corpus(10);
    let batches = corpus_batches(&corpus, TaskMode::PredCls).unwrap();
    let model = Model::init(tiny_config(TaskMode::PredCls, Toggles::ALL_ON), 3).unwrap();
    let mut g = Graph::new();
    let b = model.params.bind_frozen(&mut g);
    let f = model.forward(&mut g, &b, &batches[0], Pass::Infer).unwrap();
    assert_eq!(f.r_hat, f.r_tem);
    assert!(f.losses.is_none());
}
