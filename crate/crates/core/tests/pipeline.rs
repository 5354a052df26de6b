use std::collections::BTreeSet;

use sgl_optim::data::{generate, load_libsvm, split_point, write_libsvm, SynthSpec};
use sgl_optim::metrics::sparsity;
use sgl_optim::model::{Model, ModelConfig};
use sgl_optim::optim::{OptimizerName, OptimizerSpec, RegConfig};
use sgl_optim::prune::{prune_finetune_prune, PruneSchedule};
use sgl_optim::regret::{measure_bound_constants, run_regret, LrDecay, OnlineProblem, ProblemKind};
use sgl_optim::train::Trainer;

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        num_fields: 4,
        vocab_per_field: 50,
        informative_fraction: 0.1,
        num_samples: 4000,
        seed,
        ..SynthSpec::default()
    }
}

fn model_for(spec: &SynthSpec, embed_dim: usize, seed: u64) -> Model {
    Model::new(ModelConfig {
        num_features: spec.num_fields * spec.vocab_per_field,
        embed_dim,
        num_fields: spec.num_fields,
        hidden_dims: vec![16, 8],
        seed,
    })
    .unwrap()
}

fn adam(group: bool, lr: f64) -> OptimizerSpec {
    OptimizerSpec::new(OptimizerName::Adam, group, lr)
}

#[test]
fn clean_separable_data_is_learnable() {
    let spec = SynthSpec {
        num_fields: 5,
        vocab_per_field: 20,
        informative_fraction: 1.0,
        num_samples: 20_000,
        noise: 0.0,
        weight_scale: 4.0,
        seed: 3,
    };
    let data = generate(&spec).unwrap();
    let mut trainer = Trainer::new(model_for(&spec, 8, 3), adam(false, 1e-2), RegConfig::none(), 64, 3).unwrap();
    for _ in 0..3 {
        trainer.train_epoch(&data.train).unwrap();
    }
    let auc = trainer.evaluate(&data.test).unwrap().auc.unwrap();
    assert!(auc > 0.95, "test AUC {auc}");
}

#[test]
fn one_epoch_of_adam_lowers_training_loss() {
    let spec = SynthSpec {
        noise: 0.0,
        informative_fraction: 1.0,
        ..small_spec(1)
    };
    let data = generate(&spec).unwrap();
    let model = model_for(&spec, 8, 1);
    let before = model.loss(&data.train).unwrap();
    let mut trainer = Trainer::new(model, adam(false, 1e-2), RegConfig::none(), 32, 1).unwrap();
    trainer.train_epoch(&data.train).unwrap();
    let after = trainer.model.loss(&data.train).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn untouched_zero_rows_stay_exactly_zero() {
    let spec = small_spec(2);
    let data = generate(&spec).unwrap();
    // drop every sample that uses field 0 ids 0..10
    let banned: BTreeSet<usize> = (0..10).collect();
    let train: Vec<_> = data
        .train
        .iter()
        .filter(|s| !s.feature_ids.iter().any(|id| banned.contains(id)))
        .cloned()
        .collect();
    let mut model = model_for(&spec, 4, 2);
    for &g in &banned {
        model.embedding_mut().group_mut(g).unwrap().fill(0.0);
    }
    let reg = RegConfig::new(0.0, 1e-4, 1e-5, &["embedding"]);
    for opt in [OptimizerName::Adam, OptimizerName::Adagrad, OptimizerName::Amsgrad] {
        let mut trainer =
            Trainer::new(model.clone(), OptimizerSpec::new(opt, true, 1e-2), reg.clone(), 32, 2).unwrap();
        trainer.train_epoch(&train).unwrap();
        for &g in &banned {
            assert!(trainer.model.embedding().group(g).unwrap().iter().all(|&v| v == 0.0));
        }
        assert!(trainer.features_seen.is_disjoint(&banned));
    }
}

#[test]
fn prune_pipeline_hits_target_exactly() {
    let spec = small_spec(4);
    let data = generate(&spec).unwrap();
    let mut trainer = Trainer::new(model_for(&spec, 4, 4), adam(false, 1e-2), RegConfig::none(), 32, 4).unwrap();
    trainer.train_epoch(&data.train).unwrap();
    let seen = trainer.features_seen.clone();
    let before = sparsity(trainer.model.embedding(), &seen).unwrap();
    for fraction in [0.0, 0.1, 0.2, 0.3] {
        let schedule = PruneSchedule {
            target_keep: 25,
            finetune_fraction: fraction,
        };
        let pruned = prune_finetune_prune(&trainer.model, &data.train, &schedule, &adam(false, 1e-2), 32, 9).unwrap();
        assert_eq!(pruned.embedding().nonzero_groups().unwrap(), 25, "fraction {fraction}");
        let after = sparsity(pruned.embedding(), &seen).unwrap();
        assert!(after <= before);
        assert!((after - 25.0 / seen.len() as f64).abs() < 1e-15);
    }
}

#[test]
fn synthetic_data_round_trips_through_libsvm_file() {
    let data = generate(&small_spec(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.libsvm");
    write_libsvm(&path, &data.train).unwrap();
    assert_eq!(load_libsvm(&path).unwrap(), data.train);
}

#[test]
fn split_sizes_and_determinism() {
    for n in [2usize, 9, 10, 11, 4000, 4001] {
        let spec = SynthSpec {
            num_samples: n,
            ..small_spec(6)
        };
        let data = generate(&spec).unwrap();
        assert_eq!(data.train.len() + data.test.len(), n);
        assert_eq!(data.train.len(), split_point(n));
        assert!((data.train.len() as f64 - 0.9 * n as f64).abs() <= 1.0);
        assert_eq!(generate(&spec).unwrap(), data);
    }
}

fn adagrad_run(kind: ProblemKind, seed: u64) -> sgl_optim::regret::RegretRun {
    let problem = OnlineProblem {
        kind,
        dim: 4,
        horizon: 1 << 14,
        radius: 1.0,
        seed,
    };
    let spec = OptimizerSpec::new(OptimizerName::Adagrad, true, 0.5);
    run_regret(&problem, &spec, &RegConfig::none(), LrDecay::Constant).unwrap()
}

#[test]
fn stationary_quadratic_regret_is_sublinear() {
    let run = adagrad_run(ProblemKind::StationaryQuadratic, 7);
    let slope = run.slope().unwrap();
    assert!(slope <= 0.6, "slope {slope}");
}

#[test]
fn alternating_quadratic_regret_grows_sublinearly() {
    let run = adagrad_run(ProblemKind::AlternatingQuadratic, 8);
    let first = run.curve.first().unwrap().regret;
    assert!(run.final_regret() > first);
    let slope = run.slope().unwrap();
    assert!(slope <= 0.6, "slope {slope}");
}

#[test]
fn bounded_quadratic_run_respects_the_bound() {
    for seed in 0..3 {
        let run = adagrad_run(ProblemKind::Quadratic, seed);
        let c = measure_bound_constants(&run);
        assert!(c.g.is_finite() && c.d1.is_finite() && c.d2.is_finite());
        assert!(c.condition_met);
        assert_eq!(c.holds, Some(true), "R_T {} vs {:?}", run.final_regret(), c.rhs);
    }
}

#[test]
fn penalized_regret_run_respects_the_bound() {
    let problem = OnlineProblem {
        kind: ProblemKind::Quadratic,
        dim: 6,
        horizon: 1 << 12,
        radius: 1.0,
        seed: 11,
    };
    let reg = RegConfig::new(1e-3, 1e-2, 1e-4, &[sgl_optim::regret::BLOCK]);
    let spec = OptimizerSpec::new(OptimizerName::Adagrad, true, 0.5);
    let run = run_regret(&problem, &spec, &reg, LrDecay::Constant).unwrap();
    let c = measure_bound_constants(&run);
    assert_eq!(c.holds, Some(true));
}
