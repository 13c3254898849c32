use superinfo::data::{generate_synthetic, AugmentationConfig, SyntheticSpec, ViewSource};
use superinfo::loss::{superinfo_total, LossWeights};
use superinfo::model::{ModelBundle, ModelDims};
use superinfo::tensor::{Rng, Tensor};
use superinfo::train::{
    pretrain, read_checkpoint, train_epochs, write_checkpoint, JsonlSink, MetricsRecord, Objective,
    SuperInfoConfig, TrainError, TrainState,
};

fn spec(n: usize) -> SyntheticSpec {
    SyntheticSpec {
        d_shared: 4,
        d_specific: 2,
        d_nuisance: 6,
        n_samples: n,
        ..Default::default()
    }
}

fn source(n: usize, seed: u64) -> ViewSource {
    ViewSource::paired(&generate_synthetic(&spec(n), &mut Rng::seed_from_u64(seed)).unwrap())
}

fn config(seed: u64, epochs: u64) -> SuperInfoConfig {
    SuperInfoConfig {
        seed,
        epochs,
        batch_size: 16,
        model: ModelDims {
            input_dim: 12,
            hidden: vec![24],
            repr_dim: 12,
            proj_hidden: vec![],
            proj_dim: 8,
            decoder_hidden: vec![24],
        },
        ..Default::default()
    }
}

fn jsonl(cfg: &SuperInfoConfig, src: &ViewSource) -> (Vec<u8>, TrainState<f32>) {
    let mut sink = JsonlSink::new(Vec::new());
    let state = pretrain::<f32>(cfg, src, &mut sink).unwrap();
    (sink.into_inner(), state)
}

#[test]
fn zero_epochs_returns_init_bundle() {
    let cfg = config(3, 0);
    let mut records: Vec<MetricsRecord> = Vec::new();
    let state = pretrain::<f32>(&cfg, &source(64, 1), &mut records).unwrap();
    let init: ModelBundle<f32> = ModelBundle::init(&mut Rng::substream(3, "init"), cfg.model.clone()).unwrap();
    assert_eq!(state.bundle, init);
    assert!(records.is_empty());
}

#[test]
fn one_epoch_is_finite_and_consistent() {
    let cfg = config(5, 1);
    let mut records: Vec<MetricsRecord> = Vec::new();
    pretrain::<f32>(&cfg, &source(64, 1), &mut records).unwrap();
    assert_eq!(records.len(), 4 + 1);
    assert!(records[4].step.is_none());
    for r in &records {
        let l = r.losses();
        for (name, v) in l.named() {
            assert!(v.is_finite(), "{name}");
        }
        assert!(r.grad_norm.is_finite());
        assert!(l.l_kl_1 >= -1e-9 && l.l_kl_2 >= -1e-9);
        assert!(l.l_re_1 >= 0.0 && l.l_re_2 >= 0.0);
        let recombined = superinfo_total(l.parts(), &cfg.weights).l_total;
        assert!((recombined - l.l_total).abs() <= 1e-6, "{recombined} vs {}", l.l_total);
        assert_eq!(r.seed, 5);
        assert_eq!(r.wall_ms, 0);
    }
    let steps: Vec<_> = records.iter().filter_map(|r| r.step).collect();
    assert_eq!(steps, vec![1, 2, 3, 4]);
}

#[test]
fn identical_seeds_give_identical_streams() {
    let src = source(64, 2);
    let (a, sa) = jsonl(&config(9, 2), &src);
    let (b, sb) = jsonl(&config(9, 2), &src);
    assert_eq!(a, b);
    let cfg = config(9, 2);
    assert_eq!(
        write_checkpoint(&sa.to_checkpoint(&cfg)).unwrap(),
        write_checkpoint(&sb.to_checkpoint(&cfg)).unwrap()
    );
    let (c, _) = jsonl(&config(10, 2), &src);
    assert_ne!(a, c);
}

#[test]
fn resume_matches_uninterrupted_training() {
    let src = source(64, 3);
    let (full_metrics, full) = jsonl(&config(4, 2), &src);

    let (first_metrics, half) = jsonl(&config(4, 1), &src);
    let bytes = write_checkpoint(&half.to_checkpoint(&config(4, 1))).unwrap();
    let ckpt = read_checkpoint(&bytes).unwrap();
    let cfg2 = config(4, 2);
    let mut resumed: TrainState<f32> = TrainState::from_checkpoint(&ckpt, &cfg2).unwrap();
    assert_eq!(resumed, half);
    let mut sink = JsonlSink::new(first_metrics);
    train_epochs(&mut resumed, &cfg2, &src, &mut sink).unwrap();
    assert_eq!(sink.into_inner(), full_metrics);
    assert_eq!(
        write_checkpoint(&resumed.to_checkpoint(&cfg2)).unwrap(),
        write_checkpoint(&full.to_checkpoint(&cfg2)).unwrap()
    );
}

#[test]
fn checkpoint_dtype_must_match() {
    let cfg = config(1, 0);
    let state = TrainState::<f32>::init(&cfg).unwrap();
    let ckpt = state.to_checkpoint(&cfg);
    assert!(matches!(
        TrainState::<f64>::from_checkpoint(&ckpt, &cfg),
        Err(TrainError::CheckpointMismatch(_))
    ));
    let mut other = cfg.clone();
    other.model.repr_dim = 10;
    assert!(TrainState::<f32>::from_checkpoint(&ckpt, &other).is_err());
}

#[test]
fn zero_lambdas_follow_the_contrastive_trajectory() {
    let src = source(64, 4);
    for dtype_f64 in [false, true] {
        let weighted = SuperInfoConfig {
            weights: LossWeights::contrastive_only(0.5),
            ..config(6, 2)
        };
        let plain = SuperInfoConfig {
            objective: Objective::Contrastive,
            ..weighted.clone()
        };
        let (a, b) = if dtype_f64 {
            let a = pretrain::<f64>(&weighted, &src, &mut Vec::new()).unwrap();
            let b = pretrain::<f64>(&plain, &src, &mut Vec::new()).unwrap();
            (
                write_checkpoint(&a.to_checkpoint(&weighted)).unwrap(),
                write_checkpoint(&b.to_checkpoint(&weighted)).unwrap(),
            )
        } else {
            let a = pretrain::<f32>(&weighted, &src, &mut Vec::new()).unwrap();
            let b = pretrain::<f32>(&plain, &src, &mut Vec::new()).unwrap();
            (
                write_checkpoint(&a.to_checkpoint(&weighted)).unwrap(),
                write_checkpoint(&b.to_checkpoint(&weighted)).unwrap(),
            )
        };
        assert!(a == b, "trajectories differ (f64: {dtype_f64})");
    }
}

#[test]
fn unweighted_terms_are_still_logged() {
    let cfg = SuperInfoConfig {
        weights: LossWeights::contrastive_only(0.5),
        ..config(6, 1)
    };
    let mut records: Vec<MetricsRecord> = Vec::new();
    pretrain::<f32>(&cfg, &source(64, 4), &mut records).unwrap();
    assert!(records.iter().all(|r| r.l_re_1 > 0.0 && r.l_total == r.l_cl));
}

#[test]
fn freeze_heads_keeps_heads_fixed() {
    let cfg = SuperInfoConfig {
        freeze_heads: true,
        ..config(2, 1)
    };
    let init = TrainState::<f32>::init(&cfg).unwrap();
    let trained = pretrain::<f32>(&cfg, &source(64, 5), &mut Vec::new()).unwrap();
    assert_eq!(trained.bundle.q_mu, init.bundle.q_mu);
    assert_eq!(trained.bundle.q_logvar, init.bundle.q_logvar);
    assert_eq!(trained.bundle.r, init.bundle.r);
    assert_ne!(trained.bundle.f, init.bundle.f);
    assert_ne!(trained.bundle.g, init.bundle.g);
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let mut data = generate_synthetic(&spec(32), &mut Rng::seed_from_u64(1)).unwrap();
    let mut v1 = data.v1.to_f64_vec();
    v1[5] = f64::NAN;
    data.v1 = Tensor::from_f64(data.v1.shape().to_vec(), &v1).unwrap();
    let cfg = SuperInfoConfig {
        augmentation: AugmentationConfig::identity(),
        batch_size: 32,
        ..config(1, 1)
    };
    let mut records: Vec<MetricsRecord> = Vec::new();
    let err = pretrain::<f32>(&cfg, &ViewSource::paired(&data), &mut records).unwrap_err();
    match err {
        TrainError::NonFinite { component, epoch, step } => {
            assert_eq!((component, epoch, step), ("l_cl", 1, 1));
        }
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(records.len(), 1);
    assert!(records[0].l_cl.is_nan());
}

#[test]
fn dataset_smaller_than_batch_is_rejected() {
    let err = pretrain::<f32>(&config(1, 1), &source(8, 1), &mut Vec::new()).unwrap_err();
    assert!(matches!(err, TrainError::Data(_)));
}

#[test]
fn loss_falls_over_the_first_steps() {
    let data = generate_synthetic(&SyntheticSpec::default(), &mut Rng::seed_from_u64(0)).unwrap();
    let src = ViewSource::paired(&data);
    let mut improved = 0;
    let mut report = Vec::new();
    for seed in 0..10 {
        let mut cfg = SuperInfoConfig {
            seed,
            epochs: 1,
            ..Default::default()
        };
        cfg.model.input_dim = data.dim();
        let mut records: Vec<MetricsRecord> = Vec::new();
        pretrain::<f32>(&cfg, &src, &mut records).unwrap();
        let first = records[0].l_total;
        let tenth = records[9].l_total;
        report.push((first, tenth));
        if tenth < first {
            improved += 1;
        }
    }
    assert!(improved >= 8, "{report:?}");
}
