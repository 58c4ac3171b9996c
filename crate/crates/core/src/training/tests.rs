use super::*;
use proptest::prelude::*;
use crate::corpus::{prepare, Split};
use crate::model::ModelConfig;
use crate::numeric::Graph;
use crate::toy;
use crate::tokenizer::train_bpe;

fn toy_data(max_seq: usize) -> (BpeVocab, Vec<Encoding>, Vec<Encoding>) {
    let (canon, _) = prepare(toy::generate(&toy::ToyConfig::default())).unwrap();
    let (text, _) = crate::corpus::build_corpus_text(&canon);
    let vocab = train_bpe(&text, 420, 1000).unwrap();
    let train = encode_split(&vocab, &canon, Split::Train, max_seq);
    let valid = encode_split(&vocab, &canon, Split::Validation, max_seq);
    (vocab, train, valid)
}

fn tiny(vocab: &BpeVocab) -> ModelConfig {
    ModelConfig {
        ffn_dim: 32,
        ..ModelConfig::new(1, 2, 16, 256, vocab.size())
    }
}

fn quick(objective: Objective) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        max_epochs: 2,
        peak_lr: 3e-3,
        seed: 5,
        ..TrainConfig::recipe("toy-a", objective).unwrap()
    }
}

#[test]
fn schedule_examples() {
    let cfg = TrainConfig::full_scale(Objective::Mlm);
    let total = 200_000;
    assert_eq!(lr_at_step(10_000, &cfg, total), 1e-4);
    assert_eq!(lr_at_step(0, &cfg, total), 0.0);
    let mid = lr_at_step((10_000 + total) / 2, &cfg, total);
    assert!((mid - 5e-5).abs() < 1e-12);
    assert_eq!(lr_at_step(total, &cfg, total), 0.0);
    assert!((lr_at_step(5_000, &cfg, total) - 5e-5).abs() < 1e-18);

    let toy = TrainConfig::recipe("toy-a", Objective::Mlm).unwrap();
    assert_eq!(toy.warmup(600), 36);
    assert_eq!(toy.warmup(10_000_000), 10_000);
}

proptest! {
    #[test]
    fn peak_is_exact_for_any_run_length(total in 10_001u64..5_000_000) {
        let cfg = TrainConfig::full_scale(Objective::Cmlm);
        prop_assert_eq!(lr_at_step(10_000, &cfg, total), 1e-4);
    }
}

#[test]
fn schedule_is_monotone_up_then_down() {
    let cfg = TrainConfig::recipe("toy-b", Objective::Cmlm).unwrap();
    let total = 500;
    let w = cfg.warmup(total);
    let lrs: Vec<f64> = (0..=total).map(|s| lr_at_step(s, &cfg, total)).collect();
    assert!(lrs[..=w as usize].windows(2).all(|p| p[0] < p[1]));
    assert!(lrs[w as usize..].windows(2).all(|p| p[0] > p[1]));
    assert_eq!(lrs[w as usize], cfg.peak_lr);
}

fn adam(lr: f64, wd: f64) -> AdamStep {
    AdamStep {
        lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-6,
        weight_decay: wd,
    }
}

fn scalar(x: f64) -> Tensor<f64> {
    Tensor::from_vec(&[1], vec![x])
}

#[test]
fn adam_constant_gradient_by_hand() {
    // With g = 1 every bias-corrected moment is exactly 1, so each step
    // moves θ by lr / (1 + ε).
    let (mut t, mut m, mut v) = (scalar(0.5), scalar(0.0), scalar(0.0));
    for step in 1..=3 {
        adam_update(&mut t, &scalar(1.0), &mut m, &mut v, step, &adam(1e-3, 0.0));
    }
    let expected = 0.5 - 3.0 * 1e-3 / (1.0 + 1e-6);
    assert!((t.data()[0] - expected).abs() < 1e-10, "{}", t.data()[0]);
}

#[test]
fn adam_three_step_trace() {
    // Hand evaluation with g = 1, -2, 0.5, lr 0.1, wd 0.01, θ0 = 1:
    //   m1 = 0.1          v1 = 0.001          m̂ = 1     v̂ = 1
    //   θ1 = 1 - 0.1·(1/(1+ε) + 0.01)                        = 0.899000100
    //   m2 = 0.09 - 0.2 = -0.11   v2 = 0.000999 + 0.004 = 0.004999
    //   m̂ = -0.11/0.19, v̂ = 0.004999/0.001999
    //   m3 = -0.099 + 0.05 = -0.049
    //   v3 = 0.004994001 + 0.00025 = 0.005244001
    let eps = 1e-6;
    let mut th = 1.0f64;
    th -= 0.1 * (1.0 / (1.0 + eps) + 0.01 * th);
    let m2: f64 = -0.11;
    let v2: f64 = 0.004999;
    th -= 0.1 * ((m2 / 0.19) / ((v2 / (1.0 - 0.998001)).sqrt() + eps) + 0.01 * th);
    let m3: f64 = -0.049;
    let v3: f64 = 0.005244001;
    let c1 = 1.0 - 0.729;
    let c2 = 1.0 - 0.997002999;
    th -= 0.1 * ((m3 / c1) / ((v3 / c2).sqrt() + eps) + 0.01 * th);

    let (mut t, mut m, mut v) = (scalar(1.0), scalar(0.0), scalar(0.0));
    for (step, g) in [(1, 1.0), (2, -2.0), (3, 0.5)] {
        adam_update(&mut t, &scalar(g), &mut m, &mut v, step, &adam(0.1, 0.01));
    }
    assert!((t.data()[0] - th).abs() < 1e-10, "{} vs {th}", t.data()[0]);
    assert!((m.data()[0] - m3).abs() < 1e-12);
    assert!((v.data()[0] - v3).abs() < 1e-12);
}

#[test]
fn adam_fixed_point_and_decay() {
    let (mut t, mut m, mut v) = (scalar(0.7), scalar(0.0), scalar(0.0));
    adam_update(&mut t, &scalar(0.0), &mut m, &mut v, 1, &adam(1e-2, 0.0));
    assert_eq!(t.data()[0], 0.7);
    for step in 1..=4 {
        let before = t.data()[0];
        adam_update(&mut t, &scalar(0.0), &mut m, &mut v, step, &adam(1e-2, 0.01));
        assert!((t.data()[0] - before * (1.0 - 1e-2 * 0.01)).abs() < 1e-15);
    }
}

#[test]
fn config_validation() {
    let mut c = quick(Objective::Mlm);
    assert!(c.validate(100).is_ok());
    c.warmup_steps = Some(100);
    assert!(c.validate(100).is_err());
    c.warmup_steps = None;
    c.peak_lr = 0.0;
    assert!(c.validate(100).is_err());
    assert_eq!(RECIPES.len(), 6);
    for r in RECIPES {
        assert!(TrainConfig::recipe(r, Objective::MlmWholeWord).is_some());
    }
}

#[test]
fn dynamic_masking_differs_across_epochs() {
    let (vocab, train, _) = toy_data(256);
    for enc in train.iter().take(20) {
        assert!(enc.len() >= 50);
        let plans: Vec<Vec<(usize, u32)>> = (0..10u64)
            .map(|e| make_instance(enc, Objective::Mlm, vocab.size(), seed::derive(3, &[e, 0])).1)
            .collect();
        let distinct = plans.iter().enumerate().filter(|(i, p)| !plans[..*i].contains(p)).count();
        assert!(distinct >= 9, "{distinct}");
    }
}

#[test]
fn one_small_step_reduces_loss() {
    let (vocab, train, _) = toy_data(256);
    let mut model = Model::<f64>::new(tiny(&vocab), 1).unwrap();
    let (input, targets) = make_instance(&train[0], Objective::Cmlm, vocab.size(), 0);
    let loss_of = |m: &Model<f64>| {
        let mut g = Graph::new(m.params());
        let l = m.loss(&mut g, &input, &targets, None, None).unwrap();
        (g.scalar(l), g.backward(l))
    };
    let (before, grads) = loss_of(&model);
    let mut opt = OptimizerState::zeros_like(model.params());
    for (p, g) in grads.into_iter().enumerate() {
        if let Some(g) = g {
            adam_update(&mut model.params_mut()[p], &g, &mut opt.m[p], &mut opt.v[p], 1, &adam(1e-4, 0.0));
        }
    }
    let (after, _) = loss_of(&model);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn training_is_deterministic_and_resumable() {
    let (vocab, train, valid) = toy_data(256);
    let train = &train[..24];
    let cfg = quick(Objective::MlmWholeWord);
    let init = || Checkpoint::new(Model::<f64>::new(tiny(&vocab), 2).unwrap(), vocab.hash());

    let a = pretrain(init(), &vocab, train, &valid[..4], &cfg).unwrap();
    let b = pretrain(init(), &vocab, train, &valid[..4], &cfg).unwrap();
    assert_eq!(a.checkpoint.model.params(), b.checkpoint.model.params());
    assert_eq!(a.log, b.log);
    assert_eq!(a.checkpoint.step, 12);
    assert_eq!(a.log.epochs.len(), 2);
    assert!(a.log.epochs.iter().all(|e| e.val_perplexity.is_some()));
    let total = Trainer::new(&cfg, train, &valid).total_steps();
    for s in &a.log.steps {
        assert_eq!(s.lr, lr_at_step(s.step, &cfg, total));
    }

    // Interrupt after 5 steps, round-trip through a file, continue.
    let mut t = Trainer::new(&cfg, train, &valid[..4]);
    t.stop_at = Some(5);
    let half = t.run(init()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    half.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::<f64>::load(&path, &vocab.hash()).unwrap();
    let rest = Trainer::new(&cfg, train, &valid[..4]).run(loaded).unwrap();
    assert_eq!(rest.log.steps[0], a.log.steps[5]);
    assert_eq!(rest.checkpoint.model.params(), a.checkpoint.model.params());
}

#[test]
fn zero_epochs_returns_initialization() {
    let (vocab, train, valid) = toy_data(256);
    let cfg = TrainConfig {
        max_epochs: 0,
        ..quick(Objective::Mlm)
    };
    let init = Checkpoint::new(Model::<f64>::new(tiny(&vocab), 3).unwrap(), vocab.hash());
    let out = pretrain(init.clone(), &vocab, &train, &valid, &cfg).unwrap();
    assert_eq!(out.checkpoint.model.params(), init.model.params());
    assert!(out.log.steps.is_empty());
}

#[test]
fn finetune_refuses_bad_input() {
    let (vocab, train, valid) = toy_data(256);
    let cfg = quick(Objective::Cmlm);
    let init = || Checkpoint::new(Model::<f32>::new(tiny(&vocab), 4).unwrap(), vocab.hash());
    assert!(matches!(finetune(init(), &vocab, &[], &valid, &cfg), Err(TrainError::EmptyDataset)));
    let mut other = init();
    other.vocab_hash = "elsewhere".into();
    assert!(matches!(
        finetune(other, &vocab, &train, &valid, &cfg),
        Err(TrainError::VocabMismatch { .. })
    ));
    assert!(matches!(
        finetune(init(), &vocab, &train, &valid, &quick(Objective::Mlm)),
        Err(TrainError::Config(_))
    ));
    assert!(matches!(pretrain(init(), &vocab, &train, &valid, &cfg), Err(TrainError::Config(_))));
}

#[test]
fn divergence_aborts_with_last_good_state() {
    let (vocab, train, valid) = toy_data(256);
    let mut model = Model::<f64>::new(tiny(&vocab), 5).unwrap();
    let ln = model.param_index("embeddings.ln.gamma").unwrap();
    model.params_mut()[ln].data_mut()[0] = f64::NAN;
    let init = Checkpoint::new(model, vocab.hash());
    match pretrain(init, &vocab, &train[..8], &valid, &quick(Objective::Mlm)) {
        Err(TrainError::Diverged { step, last_good, .. }) => {
            assert_eq!(step, 1);
            assert_eq!(last_good.step, 0);
        }
        other => panic!("expected divergence, got {:?}", other.err()),
    }
}

#[test]
fn cmlm_loss_falls_over_a_short_run() {
    let (vocab, train, valid) = toy_data(256);
    let cfg = TrainConfig {
        max_epochs: 6,
        batch_size: 8,
        ..quick(Objective::Cmlm)
    };
    let init = Checkpoint::new(Model::<f32>::new(tiny(&vocab), 6).unwrap(), vocab.hash());
    let out = finetune(init, &vocab, &train[..64], &valid, &cfg).unwrap();
    let e = &out.log.epochs;
    assert!(e.last().unwrap().mean_loss < e[0].mean_loss);
    assert_eq!(out.checkpoint.metadata.get("objective").unwrap(), "cmlm");
    let tmp = tempfile::tempdir().unwrap();
    out.log.write_jsonl(&tmp.path().join("log.jsonl")).unwrap();
    let lines = std::fs::read_to_string(tmp.path().join("log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    for key in ["step", "lr", "loss", "masked_tokens", "epoch"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}
