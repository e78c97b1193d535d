use std::collections::BTreeSet;

use molalign_core::augment::{augment, AlignmentPair, PairClass};
use molalign_core::encoder::{EncoderConfig, Params};
use molalign_core::eval;
use molalign_core::fragment::{RuleSet, Scheme};
use molalign_core::phrase::PhraseExtractor;
use molalign_core::synth;
use molalign_core::train::{
    check_gradients, evaluate, plan_epoch, Batch, LossWeights, Sampling, TrainConfig, TrainError, Trainer,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> TrainConfig {
    TrainConfig {
        max_vocab: Some(32),
        sampling: Sampling {
            batch_origins: 2,
            k_m: 2,
            k_t: 2,
        },
        encoder: EncoderConfig {
            dim: 8,
            ffn_dim: 16,
            layers: 1,
            max_len: 40,
        },
        ..TrainConfig::default()
    }
}

fn planted_pairs(n: usize) -> Vec<AlignmentPair> {
    let corpus = synth::planted_biaryls();
    augment(
        &corpus[..n],
        RuleSet::builtin(Scheme::Brics),
        &PhraseExtractor::default(),
    )
    .unwrap()
}

/// A trainer over `n` planted molecules and the first batch of a seeded plan.
fn random_batch(n: usize, seed: u64) -> (Trainer, Batch) {
    let pairs = planted_pairs(n);
    let config = TrainConfig { seed, ..small_config() };
    let t = Trainer::new(pairs.clone(), config.clone());
    let plan = plan_epoch(&pairs, config.sampling, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let batch = t.batch(&plan[0]);
    (t, batch)
}

#[test]
fn full_objective_gradient_matches_central_differences() {
    for seed in 0..8 {
        let (t, batch) = random_batch(6, seed);
        let mut params = t.model().params.clone();
        // Keep the temperature away from its clamp bounds.
        params.log_inv_temp.data_mut()[0] = 2f64.ln();
        let check = check_gradients(&params, &batch, LossWeights::total(1.0), 1e-4);
        assert!(check.max_relative < 1e-5, "seed {seed}: {check:?}");
        assert!(check.max_absolute < 1e-8, "seed {seed}: {check:?}");
        let analytic = evaluate(&params, &batch, LossWeights::total(1.0)).gradients;
        assert!(
            analytic[params.tensors().len() - 3].frobenius_norm() > 0.0,
            "temperature gets a gradient"
        );
    }
}

#[test]
fn zero_learning_rate_leaves_params_bitwise() {
    let pairs = planted_pairs(8);
    let mut t = Trainer::new(
        pairs,
        TrainConfig {
            lr: 0.0,
            ..small_config()
        },
    );
    let before = t.model().params.clone();
    for _ in 0..3 {
        t.train_epoch().unwrap();
    }
    let bits = |p: &Params| -> Vec<u64> {
        p.tensors()
            .iter()
            .flat_map(|(_, m)| m.data().iter().map(|x| x.to_bits()))
            .collect()
    };
    assert_eq!(bits(&before), bits(&t.model().params));
}

#[test]
fn single_pair_loss_strictly_decreases() {
    let pairs = vec![AlignmentPair::new("x", PairClass::S, "CCO", "ethanol")];
    let mut t = Trainer::new(
        pairs,
        TrainConfig {
            lr: 1e-3,
            window: 0,
            ..small_config()
        },
    );
    let losses: Vec<f64> = (0..10).map(|_| t.train_epoch().unwrap().loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn seeded_runs_are_identical() {
    let run = || {
        let mut t = Trainer::new(
            planted_pairs(10),
            TrainConfig {
                seed: 11,
                ..small_config()
            },
        );
        let reports: Vec<_> = (0..4).map(|_| t.train_epoch().unwrap()).collect();
        (reports, t.into_model().params)
    };
    assert_eq!(run(), run());
}

#[test]
fn temperature_does_not_change_retrieval() {
    let pairs = synth::token_bijection(20, 2);
    let mut t = Trainer::new(
        pairs.clone(),
        TrainConfig {
            lr: 1e-3,
            window: 0,
            ..small_config()
        },
    );
    for _ in 0..3 {
        t.train_epoch().unwrap();
    }
    let eval_pairs: Vec<(&str, &str)> = pairs.iter().map(|p| (p.mol.as_str(), p.text.as_str())).collect();
    let mut model = t.into_model();
    let base = eval::evaluate(&model, &eval_pairs).unwrap();
    for lit in [0.0, 1.0, 4.0] {
        model.params.log_inv_temp.data_mut()[0] = lit;
        assert_eq!(eval::evaluate(&model, &eval_pairs).unwrap(), base);
    }
}

#[test]
fn active_set_shrinks_monotonically_and_filtered_pairs_stay_out() {
    let (pairs, _) = synth::shuffle_captions(&planted_pairs(12), 0.5, 3);
    let mut t = Trainer::new(
        pairs,
        TrainConfig {
            window: 2,
            lr: 1e-3,
            ..small_config()
        },
    );
    let mut last_active = usize::MAX;
    let mut filtered: BTreeSet<String> = BTreeSet::new();
    for _ in 0..8 {
        let r = match t.train_epoch() {
            Ok(r) => r,
            // Filtering every whole pair leaves nothing to anchor a batch.
            Err(TrainError::AllFiltered | TrainError::EmptyDataset) => break,
            Err(e) => panic!("{e}"),
        };
        assert!(r.n_active <= last_active);
        last_active = r.n_active;
        let now = t.refinement().filtered_ids().clone();
        assert!(now.is_superset(&filtered));
        filtered = now;
        for &i in r.outcomes.keys() {
            // Outcomes are recorded before the epoch's own refinement, so
            // only pairs filtered at an earlier boundary are checked.
            let id = &t.pairs()[i].pair_id;
            if r.epoch % 2 == 1 {
                assert!(!filtered.contains(id), "{id} trained after filtering");
            }
        }
        assert!(t.pairs().iter().all(|p| p.active != filtered.contains(&p.pair_id)));
    }
}

#[test]
fn empty_dataset_is_rejected() {
    let mut t = Trainer::new(Vec::new(), small_config());
    assert!(matches!(t.train_epoch(), Err(TrainError::EmptyDataset)));
}

#[test]
fn non_finite_parameters_abort_with_location() {
    let t = Trainer::new(planted_pairs(4), small_config());
    let mut model = t.into_model();
    model.params.cls_b.data_mut()[0] = f64::NAN;
    let mut t = Trainer::with_model(model, planted_pairs(4), small_config());
    assert!(matches!(
        t.train_epoch(),
        Err(TrainError::DivergenceDetected { epoch: 1, batch: 1 })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn losses_are_non_negative(n in 2usize..10, seed in 0u64..1000, cl in 0.0f64..2.0) {
        let (t, batch) = random_batch(n, seed);
        for a in batch.mol_anchors.iter().chain(&batch.text_anchors) {
            prop_assert!(!a.positives.is_empty());
            prop_assert!(a.positives.iter().all(|p| a.candidates.contains(p)));
        }
        let e = evaluate(&t.model().params, &batch, LossWeights::total(cl));
        prop_assert!(e.loss.mol2txt >= 0.0);
        prop_assert!(e.loss.txt2mol >= 0.0);
        prop_assert!(e.loss.classification >= 0.0);
        prop_assert!(e.loss.total >= 0.0);
    }
}
