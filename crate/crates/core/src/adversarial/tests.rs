use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::tests::seq;
use crate::model::ModelConfig;
use crate::tensor::{finite_diff_check_at, DEFAULT_FD_STEP};
use crate::text::TokenSeq;

struct Instance {
    model: TransformerClassifier,
    seqs: Vec<TokenSeq>,
    labels: Vec<usize>,
}

impl Instance {
    fn batch(&self) -> Batch {
        Batch::new(&self.seqs)
    }
}

fn instance(seed: u64, batch: usize) -> Instance {
    let cfg = ModelConfig {
        layers: 2,
        heads: 2,
        hidden: 16,
        ff_dim: 32,
        max_len: 12,
        vocab_size: 30,
        seed,
        ..ModelConfig::default()
    };
    let model = TransformerClassifier::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let seqs = (0..batch)
        .map(|_| {
            let n = rng.random_range(1..9);
            let ids: Vec<usize> = (0..n).map(|_| rng.random_range(4..30)).collect();
            seq(&ids, 12)
        })
        .collect();
    let labels = (0..batch).map(|_| rng.random_range(0..2)).collect();
    Instance { model, seqs, labels }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn fgm_reference_values() {
    assert_eq!(fgm_perturb(&[3.0, 4.0], 1.0), [0.6, 0.8]);
    assert_eq!(fgm_perturb(&[0.0, 0.0], 1.0), [0.0, 0.0]);
    assert_eq!(fgm_perturb(&[1e-13, 0.0], 1.0), [0.0, 0.0]);
}

#[test]
fn fgm_norm_and_direction_over_seeds() {
    for seed in 0..1000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..200);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d = fgm_perturb(&g, 0.5);
        let nd = l2(&d);
        assert!((nd - 0.5).abs() < 1e-9);
        assert!((dot(&d, &g) / (nd * l2(&g)) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn config_validation() {
    AdvConfig::default().validate().unwrap();
    assert!(AdvConfig { epsilon: -1.0, ..AdvConfig::default() }.validate().is_err());
    assert!(AdvConfig { pgd_steps: 0, ..AdvConfig::default() }.validate().is_err());
    assert!(AdvConfig { vat_xi: Some(0.0), ..AdvConfig::default() }.validate().is_err());
    assert_eq!(AdvConfig { epsilon: 2.0, ..AdvConfig::default() }.step_size(), 0.5);
    assert_eq!("PGD".parse::<AdvMethod>().unwrap(), AdvMethod::Pgd);
    assert!("foo".parse::<AdvMethod>().is_err());
}

#[test]
fn single_full_pgd_step_is_fgm_bitwise() {
    for seed in 0..20 {
        let inst = instance(seed, 3);
        let b = inst.batch();
        let fgm = fgm_attack(&inst.model, &b, &inst.labels, 0.7).unwrap();
        let cfg = AdvConfig {
            epsilon: 0.7,
            pgd_steps: 1,
            pgd_step_size: Some(0.7),
            ..AdvConfig::default()
        };
        let pgd = pgd_perturb(&inst.model, &b, &inst.labels, &cfg).unwrap();
        let bits = |p: &Perturbation| p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&fgm), bits(&pgd));
    }
}

#[test]
fn fgm_attack_has_exact_norm_per_sequence() {
    let inst = instance(4, 5);
    let d = fgm_attack(&inst.model, &inst.batch(), &inst.labels, 0.3).unwrap();
    for n in d.norms() {
        assert!((n - 0.3).abs() < 1e-9);
    }
}

#[test]
fn pgd_stays_in_ball() {
    for seed in 0..50 {
        let inst = instance(seed, 2);
        let cfg = AdvConfig {
            epsilon: 0.5,
            pgd_steps: 1 + (seed as usize % 6),
            pgd_step_size: Some(0.1 + 0.05 * (seed % 7) as f64),
            ..AdvConfig::default()
        };
        let d = pgd_perturb(&inst.model, &inst.batch(), &inst.labels, &cfg).unwrap();
        assert!(d.norms().iter().all(|&n| n <= 0.5 + 1e-9));
    }
}

#[test]
fn pgd_loss_at_least_fgm_loss_mostly() {
    let mut wins = 0;
    let trials = 50;
    for seed in 0..trials {
        let inst = instance(seed, 1);
        let b = inst.batch();
        let cfg = AdvConfig {
            epsilon: 1.0,
            pgd_steps: 5,
            ..AdvConfig::default()
        };
        let fgm = fgm_attack(&inst.model, &b, &inst.labels, 1.0).unwrap();
        let pgd = pgd_perturb(&inst.model, &b, &inst.labels, &cfg).unwrap();
        let lf = loss_and_embedding_grad(&inst.model, &b, &inst.labels, &fgm).unwrap().0;
        let lp = loss_and_embedding_grad(&inst.model, &b, &inst.labels, &pgd).unwrap().0;
        wins += usize::from(lp >= lf);
    }
    assert!(wins * 10 >= trials as usize * 8, "{wins}/{trials}");
}

#[test]
fn fgm_raises_loss_on_small_radius() {
    let mut wins = 0;
    let trials = 100;
    for seed in 0..trials {
        let inst = instance(seed, 1);
        let b = inst.batch();
        let g = Graph::new();
        let p = inst.model.bind_frozen(&g).unwrap();
        let x_norm = l2(&inst.model.embed(&p, &b, Mode::Eval).unwrap().to_vec());
        let d = fgm_attack(&inst.model, &b, &inst.labels, 0.1 * x_norm).unwrap();
        let zero = Perturbation::zeros(&b, 16);
        let clean = loss_and_embedding_grad(&inst.model, &b, &inst.labels, &zero).unwrap().0;
        let adv = loss_and_embedding_grad(&inst.model, &b, &inst.labels, &d).unwrap().0;
        wins += usize::from(adv >= clean);
    }
    assert!(wins * 100 >= trials as usize * 95, "{wins}/{trials}");
}

#[test]
fn vat_norm_is_epsilon() {
    for seed in 0..30 {
        let inst = instance(seed, 3);
        let cfg = AdvConfig {
            epsilon: 0.8,
            ..AdvConfig::default()
        };
        let r = vat_perturb(&inst.model, &inst.batch(), &cfg, seed).unwrap();
        assert!(r.norms().iter().all(|n| (n - 0.8).abs() < 1e-9));
    }
}

#[test]
fn vat_beats_random_directions() {
    let mut wins = 0;
    let trials = 40;
    for seed in 0..trials {
        let inst = instance(seed, 1);
        let b = inst.batch();
        let cfg = AdvConfig::default();
        let t = virtual_targets(&inst.model, &b).unwrap();
        let r = vat_perturb(&inst.model, &b, &cfg, seed).unwrap();
        let d = lds_value(&inst.model, &b, &t, &r).unwrap();
        let mean: f64 = (0..20)
            .map(|k| {
                let rr = Perturbation::random(&b, 16, cfg.epsilon, 1000 * seed + k);
                lds_value(&inst.model, &b, &t, &rr).unwrap()
            })
            .sum::<f64>()
            / 20.0;
        wins += usize::from(d >= mean);
    }
    assert!(wins * 10 >= trials as usize * 9, "{wins}/{trials}");
}

#[test]
fn second_power_iteration_does_not_hurt() {
    let mut wins = 0;
    let trials = 40;
    for seed in 0..trials {
        let inst = instance(seed, 1);
        let b = inst.batch();
        let t = virtual_targets(&inst.model, &b).unwrap();
        let one = AdvConfig::default();
        let two = AdvConfig {
            vat_power_iters: 2,
            ..one.clone()
        };
        let d1 = lds_value(&inst.model, &b, &t, &vat_perturb(&inst.model, &b, &one, seed).unwrap()).unwrap();
        let d2 = lds_value(&inst.model, &b, &t, &vat_perturb(&inst.model, &b, &two, seed).unwrap()).unwrap();
        wins += usize::from(d2 >= d1);
    }
    assert!(wins * 10 >= trials as usize * 8, "{wins}/{trials}");
}

#[test]
fn lds_is_zero_without_perturbation_and_nonnegative_otherwise() {
    for seed in 0..20 {
        let inst = instance(seed, 3);
        let b = inst.batch();
        let t = virtual_targets(&inst.model, &b).unwrap();
        assert_eq!(lds_value(&inst.model, &b, &t, &Perturbation::zeros(&b, 16)).unwrap(), 0.0);
        let r = Perturbation::random(&b, 16, 2.0, seed);
        assert!(lds_value(&inst.model, &b, &t, &r).unwrap() >= 0.0);
    }
}

#[test]
fn lds_parameter_gradient_matches_finite_differences() {
    let mut inst = instance(3, 2);
    // Sharpen the model so the divergence is well above rounding noise.
    for p in inst.model.params_mut() {
        if p.name.ends_with(".weight") {
            p.value = Arc::new(p.value.iter().map(|v| v * 20.0).collect());
        }
    }
    let b = inst.batch();
    let t = virtual_targets(&inst.model, &b).unwrap();
    let r = Perturbation::random(&b, 16, 1.0, 5);
    let model = &inst.model;
    let last = model.params().len() - 2;
    for idx in [4, last] {
        let param = &model.params()[idx];
        let coords: Vec<usize> = (0..param.value.len()).step_by(5).collect();
        let err = finite_diff_check_at(
            |g, x| {
                let p = model.bind_with(g, idx, x)?;
                compute_lds(model, &p, &b, &t, &r, Mode::Eval)
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
fn adversarial_loss_at_zero_is_clean_loss() {
    let inst = instance(9, 4);
    let b = inst.batch();
    let g = Graph::new();
    let p = inst.model.bind(&g).unwrap();
    let clean = inst
        .model
        .forward(&p, &b, Mode::Eval, false)
        .unwrap()
        .logits
        .cross_entropy(&inst.labels)
        .unwrap()
        .item();
    let zero = Perturbation::zeros(&b, 16);
    let adv = adversarial_loss(&inst.model, &p, &b, &inst.labels, &zero, Mode::Eval).unwrap();
    assert_eq!(adv.item(), clean);
    g.backward(adv).unwrap();
    let grads = p.grads();
    assert!(grads.iter().flatten().any(|&v| v != 0.0));
}

#[test]
fn searches_do_not_mutate_the_model() {
    let inst = instance(12, 3);
    let before = inst.model.clone();
    let b = inst.batch();
    let cfg = AdvConfig {
        pgd_steps: 3,
        ..AdvConfig::default()
    };
    fgm_attack(&inst.model, &b, &inst.labels, 1.0).unwrap();
    pgd_perturb(&inst.model, &b, &inst.labels, &cfg).unwrap();
    vat_perturb(&inst.model, &b, &cfg, 1).unwrap();
    assert_eq!(before, inst.model);
}

#[test]
fn label_count_must_match_batch() {
    let inst = instance(1, 3);
    assert!(matches!(
        fgm_attack(&inst.model, &inst.batch(), &[0], 1.0),
        Err(Error::Data(_))
    ));
}

proptest! {
    #[test]
    fn projection_never_leaves_ball(v in prop::collection::vec(-10.0f64..10.0, 1..50), eps in 0.01f64..5.0) {
        let mut d = v.clone();
        project(&mut d, eps);
        prop_assert!(l2(&d) <= eps + 1e-9);
        if l2(&v) <= eps {
            prop_assert_eq!(d, v);
        }
    }
}
