use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::tests::seq;
use crate::model::ModelConfig;
use crate::tensor::{finite_diff_check_at, DEFAULT_FD_STEP};

fn toy_config(seed: u64) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        hidden: 16,
        ff_dim: 32,
        max_len: 12,
        vocab_size: 24,
        seed,
        ..ModelConfig::default()
    }
}

/// Label 1 exactly when token 5 occurs.
fn toy_data(n: usize, seed: u64) -> Vec<Labeled> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(2..8);
            let mut ids: Vec<usize> = (0..len).map(|_| rng.random_range(6..24)).collect();
            let label = i % 2;
            if label == 1 {
                let at = rng.random_range(0..len);
                ids[at] = 5;
            }
            Labeled { seq: seq(&ids, 12), label }
        })
        .collect()
}

fn fast_config(steps: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        steps,
        eval_every: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let mut x = vec![1.0, -2.0];
    let mut state = AdamState::new([2]);
    adam_step(&mut [&mut x[..]], &[vec![0.0, 0.0]], &mut state, 0.1, &AdamConfig::default()).unwrap();
    assert_eq!(x, [1.0, -2.0]);
}

#[test]
fn adam_first_step_moves_by_lr_against_gradient() {
    let mut x = vec![0.0; 3];
    let mut state = AdamState::new([3]);
    adam_step(&mut [&mut x[..]], &[vec![2.0, -0.5, 1e-3]], &mut state, 0.01, &AdamConfig::default()).unwrap();
    assert!((x[0] + 0.01).abs() < 1e-6);
    assert!((x[1] - 0.01).abs() < 1e-6);
    assert!((x[2] + 0.01).abs() < 1e-4);
}

#[test]
fn adam_minimizes_quadratic() {
    let mut x = vec![1.0];
    let mut state = AdamState::new([1]);
    let cfg = AdamConfig::default();
    for _ in 0..500 {
        let g = vec![2.0 * x[0]];
        adam_step(&mut [&mut x[..]], &[g], &mut state, 0.1, &cfg).unwrap();
    }
    assert!(x[0].abs() < 1e-3, "{}", x[0]);
}

#[test]
fn adam_rejects_nan_without_touching_parameters() {
    let mut x = vec![1.0, 2.0];
    let mut state = AdamState::new([2]);
    let err = adam_step(&mut [&mut x[..]], &[vec![0.5, f64::NAN]], &mut state, 0.1, &AdamConfig::default());
    assert!(matches!(err, Err(Error::Numeric(_))));
    assert_eq!(x, [1.0, 2.0]);
    assert_eq!(state.steps(), 0);
}

#[test]
fn metrics_from_hand_confusion_matrix() {
    let m = Metrics::from_counts(3, 1, 5, 1).unwrap();
    assert_eq!((m.precision, m.recall, m.accuracy, m.f1), (0.75, 0.75, 0.8, 0.75));
    assert_eq!(m.summary(), "P=0.75 R=0.75 Acc=0.8 F1=0.75");
    assert!(!m.degenerate);
    assert_eq!(
        Metrics::table_csv(&[("test", m)]).unwrap(),
        "split,precision,recall,accuracy,f1,tp,fp,tn,fn\ntest,0.75,0.75,0.8,0.75,3,1,5,1\n"
    );
}

#[test]
fn metrics_edge_cases() {
    let perfect = Metrics::from_predictions(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap();
    assert_eq!((perfect.precision, perfect.recall, perfect.accuracy, perfect.f1), (1.0, 1.0, 1.0, 1.0));
    let all_pos = Metrics::from_predictions(&[1, 0, 1, 0], &[1, 1, 1, 1]).unwrap();
    assert_eq!((all_pos.recall, all_pos.accuracy), (1.0, 0.5));
    let none_pos = Metrics::from_predictions(&[0, 0], &[0, 0]).unwrap();
    assert!(none_pos.degenerate);
    assert_eq!((none_pos.precision, none_pos.f1, none_pos.accuracy), (0.0, 0.0, 1.0));
    assert!(matches!(Metrics::from_counts(0, 0, 0, 0), Err(Error::Data(_))));
    assert!(Metrics::from_predictions(&[1], &[]).is_err());
}

proptest! {
    #[test]
    fn metric_identities(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
        prop_assume!(tp + fp + tn + fn_ > 0);
        let m = Metrics::from_counts(tp, fp, tn, fn_).unwrap();
        prop_assert_eq!(m.total(), tp + fp + tn + fn_);
        prop_assert_eq!(m.accuracy, (tp + tn) as f64 / m.total() as f64);
        if tp + fp > 0 { prop_assert_eq!(m.precision, tp as f64 / (tp + fp) as f64); }
        if tp + fn_ > 0 { prop_assert_eq!(m.recall, tp as f64 / (tp + fn_) as f64); }
        if m.precision + m.recall > 0.0 {
            prop_assert_eq!(m.f1, 2.0 * m.precision * m.recall / (m.precision + m.recall));
        }
        for v in [m.precision, m.recall, m.accuracy, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn overfits_toy_set() {
    let data = toy_data(64, 1);
    let mut model = TransformerClassifier::new(toy_config(1)).unwrap();
    let history = train_supervised(&mut model, &data, None, &fast_config(300)).unwrap();
    let acc = history.last_metrics().unwrap().accuracy;
    assert!(acc > 0.95, "{acc}");
    assert_eq!(history.losses.len(), 300);
}

#[test]
fn training_is_deterministic() {
    let data = toy_data(32, 2);
    let cfg = TrainConfig {
        adv: AdvConfig {
            method: AdvMethod::Fgm,
            ..AdvConfig::default()
        },
        eval_every: 5,
        ..fast_config(12)
    };
    let run = || {
        let mut m = TransformerClassifier::new(toy_config(3)).unwrap();
        let h = train_supervised(&mut m, &data, None, &cfg).unwrap();
        (m, h)
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1, m2);
    assert_eq!(h1.to_csv().unwrap(), h2.to_csv().unwrap());
    assert_eq!(h1.records.iter().map(|r| r.step).collect::<Vec<_>>(), [5, 10, 12]);
}

#[test]
fn zero_radius_fgm_matches_plain_training() {
    let data = toy_data(32, 4);
    let plain = fast_config(10);
    let fgm = TrainConfig {
        adv: AdvConfig {
            method: AdvMethod::Fgm,
            epsilon: 0.0,
            ..AdvConfig::default()
        },
        ..plain.clone()
    };
    let mut a = TransformerClassifier::new(toy_config(5)).unwrap();
    let mut b = a.clone();
    let ha = train_supervised(&mut a, &data, None, &plain).unwrap();
    let hb = train_supervised(&mut b, &data, None, &fgm).unwrap();
    assert_eq!(ha.losses, hb.losses);
    assert_eq!(a, b);
}

#[test]
fn adversarial_terms_are_logged() {
    let data = toy_data(32, 4);
    for method in [AdvMethod::Fgm, AdvMethod::Pgd] {
        let cfg = TrainConfig {
            adv: AdvConfig {
                method,
                ..AdvConfig::default()
            },
            ..fast_config(3)
        };
        let mut m = TransformerClassifier::new(toy_config(5)).unwrap();
        let h = train_supervised(&mut m, &data, None, &cfg).unwrap();
        assert!(h.losses.iter().all(|l| l[1] > 0.0 && l[2] == 0.0));
    }
}

#[test]
fn zero_lds_weight_matches_supervised_training() {
    let data = toy_data(32, 6);
    let unlabeled: Vec<TokenSeq> = toy_data(40, 7).into_iter().map(|e| e.seq).collect();
    let plain = fast_config(10);
    let vat = TrainConfig {
        lds_weight: 0.0,
        adv: AdvConfig {
            method: AdvMethod::Vat,
            ..AdvConfig::default()
        },
        ..plain.clone()
    };
    let mut a = TransformerClassifier::new(toy_config(8)).unwrap();
    let mut b = a.clone();
    let ha = train_supervised(&mut a, &data, None, &plain).unwrap();
    let hb = train_semisupervised(&mut b, &data, &unlabeled, None, &vat).unwrap();
    assert_eq!(ha.losses, hb.losses);
    assert_eq!(a, b);
}

#[test]
fn semisupervised_logs_nonnegative_lds() {
    let data = toy_data(16, 6);
    let unlabeled: Vec<TokenSeq> = toy_data(40, 7).into_iter().map(|e| e.seq).collect();
    let cfg = TrainConfig {
        adv: AdvConfig {
            method: AdvMethod::Vat,
            ..AdvConfig::default()
        },
        ..fast_config(8)
    };
    let mut m = TransformerClassifier::new(toy_config(8)).unwrap();
    let h = train_semisupervised(&mut m, &data, &unlabeled, None, &cfg).unwrap();
    assert!(h.losses.iter().all(|l| l[2] >= 0.0));
    assert!(h.losses.iter().any(|l| l[2] > 0.0));
    assert!(h.warnings.is_empty());

    let mut m = TransformerClassifier::new(toy_config(8)).unwrap();
    let h = train_semisupervised(&mut m, &data, &[], None, &cfg).unwrap();
    assert_eq!(h.warnings.len(), 1);
}

#[test]
fn invalid_setups_are_rejected() {
    let data = toy_data(8, 1);
    let mut m = TransformerClassifier::new(toy_config(1)).unwrap();
    let vat = TrainConfig {
        adv: AdvConfig {
            method: AdvMethod::Vat,
            ..AdvConfig::default()
        },
        ..fast_config(1)
    };
    assert!(matches!(train_supervised(&mut m, &data, None, &vat), Err(Error::Config(_))));
    assert!(matches!(
        train_semisupervised(&mut m, &data, &[], None, &fast_config(1)),
        Err(Error::Config(_))
    ));
    assert!(matches!(train_supervised(&mut m, &[], None, &fast_config(1)), Err(Error::Data(_))));
    assert!(matches!(evaluate(&m, &[]), Err(Error::Data(_))));
    let bad = TrainConfig { batch_size: 0, ..fast_config(1) };
    assert!(matches!(train_supervised(&mut m, &data, None, &bad), Err(Error::Config(_))));
}

#[test]
fn combined_adversarial_loss_gradient_matches_finite_differences() {
    let mut model = TransformerClassifier::new(ModelConfig { head_layers: 1, ..toy_config(9) }).unwrap();
    for p in model.params_mut() {
        if p.name.ends_with(".weight") {
            p.value = Arc::new(p.value.iter().map(|v| v * 20.0).collect());
        }
    }
    let data = toy_data(3, 9);
    let batch = Batch::new(data.iter().map(|e| &e.seq));
    let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
    let delta = fgm_attack(&model, &batch, &labels, 0.5).unwrap();
    let model = &model;
    for idx in [5, 12, model.params().len() - 2] {
        let param = &model.params()[idx];
        let coords: Vec<usize> = (0..param.value.len()).step_by(9).collect();
        let err = finite_diff_check_at(
            |g, x| {
                let p = model.bind_with(g, idx, x)?;
                Ok::<_, Error>(supervised_loss(model, &p, &batch, &labels, Some(&delta), (Mode::Eval, Mode::Eval))?.2)
            },
            &param.value,
            &param.shape,
            DEFAULT_FD_STEP,
            Some(&coords),
        )
        .unwrap();
        assert!(err < 1e-4, "{}: {err}", param.name);
    }
}

#[test]
fn history_csv_has_expected_columns() {
    let data = toy_data(8, 1);
    let mut m = TransformerClassifier::new(toy_config(1)).unwrap();
    let h = train_supervised(&mut m, &data, Some(&data), &fast_config(2)).unwrap();
    let csv = h.to_csv().unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "step,clean_loss,adv_loss,lds,precision,accuracy,recall,f1");
    assert!(lines.next().unwrap().starts_with("2,"));
}

#[test]
fn sampler_visits_every_index_each_epoch() {
    let mut s = EpochSampler::new(10, 3);
    let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next_batch(4)).take(20).collect();
    let mut first: Vec<usize> = seen.drain(..10).collect();
    first.sort_unstable();
    assert_eq!(first, (0..10).collect::<Vec<_>>());
    assert_eq!(EpochSampler::new(3, 1).next_batch(8).len(), 3);
}
