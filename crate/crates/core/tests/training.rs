use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stpp_core::model::{ModelConfig, ModelVariant, Sequence, StppModel};
use stpp_core::nn::IntensityActivation;
use stpp_core::pointprocess::EventGrid;
use stpp_core::tensor::gradcheck::DEFAULT_STEP;
use stpp_core::training::{gradient_check, loss_and_gradient, train, LossTrace, TrainConfig, TrainSample};
use stpp_core::{Error, Graph, Tensor};

fn random_sample(rng: &mut ChaCha8Rng, t: usize, h: usize, w: usize, p: f64) -> TrainSample {
    let frames = (0..t)
        .map(|_| Tensor::new(vec![1, h, w], (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap())
        .collect();
    let masks = (0..t)
        .map(|_| {
            let m = (0..h * w)
                .map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 })
                .collect();
            Tensor::new(vec![1, h, w], m).unwrap()
        })
        .collect();
    let labels = (0..t)
        .map(|f| EventGrid::from_cells(f, h, w, (0..h * w).map(|_| rng.random_bool(p)).collect()).unwrap())
        .collect();
    TrainSample::new(Sequence::new(frames, masks).unwrap(), labels).unwrap()
}

#[test]
fn gradient_check_passes_for_every_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let sample = random_sample(&mut rng, 3, 4, 4, 0.3);
    for variant in ModelVariant::ALL {
        let model = StppModel::new(variant, ModelConfig::default(), 1).unwrap();
        assert!(model.params().scalar_count() <= 10_000);
        let err = gradient_check(&model, &sample, DEFAULT_STEP).unwrap();
        assert!(err < 1e-4, "{variant}: {err}");
    }
}

#[test]
fn gradient_check_is_deterministic_and_handles_empty_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sample = random_sample(&mut rng, 3, 4, 4, 0.0);
    assert!(sample.labels.iter().all(EventGrid::is_empty));
    let model = StppModel::new(ModelVariant::SyncAsync, ModelConfig::default(), 2).unwrap();
    let a = gradient_check(&model, &sample, DEFAULT_STEP).unwrap();
    let b = gradient_check(&model, &sample, DEFAULT_STEP).unwrap();
    assert!(a < 1e-4);
    assert_eq!(a.to_bits(), b.to_bits());

    // Without events only the integral term remains: d(-LL)/d(lambda) = 1.
    let mut g = Graph::new();
    let lam = g.leaf(&Tensor::full(&[1, 4, 4], 0.3));
    let ll = g.event_log_likelihood(lam, &[false; 16]).unwrap();
    let nll = g.scale(ll, -1.0).unwrap();
    let grads = g.backward(nll).unwrap();
    assert!(grads.get(lam).unwrap().iter().all(|&d| d == 1.0));
}

#[test]
fn zero_iterations_leave_the_model_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = vec![random_sample(&mut rng, 2, 4, 4, 0.2)];
    let mut model = StppModel::new(ModelVariant::SyncOnly, ModelConfig::default(), 3).unwrap();
    let before = model.params().clone();
    let cfg = TrainConfig {
        iterations: 0,
        ..TrainConfig::default()
    };
    let trace = train(&mut model, &data, &cfg, None).unwrap();
    assert!(trace.is_empty());
    assert_eq!(model.params(), &before);
}

#[test]
fn training_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<_> = (0..3).map(|_| random_sample(&mut rng, 6, 5, 5, 0.1)).collect();
    let cfg = TrainConfig {
        iterations: 5,
        batch_size: 2,
        window: 3,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = || {
        let mut model = StppModel::new(ModelVariant::SyncAsync, ModelConfig::default(), 4).unwrap();
        let trace = train(&mut model, &data, &cfg, None).unwrap();
        (trace, model.params().clone())
    };
    let (ta, pa) = run();
    let (tb, pb) = run();
    assert_eq!(ta.len(), 5);
    assert_eq!(ta, tb);
    assert_eq!(pa, pb);
}

#[test]
fn single_event_toy_converges_to_the_event_cell() {
    let (h, w) = (4, 4);
    let sequence = Sequence::new(vec![Tensor::full(&[1, h, w], 0.5)], vec![Tensor::zeros(&[1, h, w])]).unwrap();
    let mut grid = EventGrid::empty(0, h, w);
    grid.set(1, 2, true);
    let data = vec![TrainSample::new(sequence, vec![grid]).unwrap()];
    for variant in ModelVariant::ALL {
        let mut model = StppModel::new(variant, ModelConfig::default(), 5).unwrap();
        let cfg = TrainConfig {
            iterations: 500,
            batch_size: 1,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let trace = train(&mut model, &data, &cfg, None).unwrap();
        assert!(trace.values[499] < trace.values[0]);
        let (maps, _) = model
            .forward_sequence(&data[0].sequence, stpp_core::model::EventFeed::Teacher(&data[0].labels))
            .unwrap();
        let event = maps[0].get(1, 2);
        for r in 0..h {
            for c in 0..w {
                if (r, c) != (1, 2) {
                    assert!(event > maps[0].get(r, c), "{variant}: ({r},{c})");
                }
            }
        }
    }
}

#[test]
fn zero_intensity_at_an_event_aborts_with_location() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut sample = random_sample(&mut rng, 2, 4, 4, 0.0);
    sample.labels[1].set(2, 3, true);
    let config = ModelConfig {
        activation: IntensityActivation::Sigmoid,
        head_bias: -1e4,
        ..ModelConfig::default()
    };
    let mut model = StppModel::new(ModelVariant::SyncOnly, config, 7).unwrap();
    let err = train(&mut model, &[sample], &TrainConfig::default(), None).unwrap_err();
    match err {
        Error::Numeric { detail, .. } => assert!(detail.contains("frame 1 row 2 col 3"), "{detail}"),
        other => panic!("{other}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = vec![random_sample(&mut rng, 2, 4, 4, 0.2)];
    let mut model = StppModel::new(ModelVariant::SyncOnly, ModelConfig::default(), 8).unwrap();
    for cfg in [
        TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            decay_interval: 0,
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(train(&mut model, &data, &cfg, None), Err(Error::Config(_))));
    }
    assert!(train(&mut model, &[], &TrainConfig::default(), None).is_err());
}

#[test]
fn learning_rate_schedule_and_trace_csv() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.learning_rate_at(0), 1e-3);
    assert_eq!(cfg.learning_rate_at(799), 1e-3);
    assert!((cfg.learning_rate_at(800) - 1e-4).abs() < 1e-18);
    assert!((cfg.learning_rate_at(1600) - 1e-5).abs() < 1e-19);
    let trace = LossTrace {
        values: vec![3.0, 1.0, 2.0],
    };
    assert_eq!(trace.smoothed(2, 2), Some(1.5));
    assert_eq!(trace.smoothed(0, 50), Some(3.0));
    assert!(trace.to_csv().starts_with("iteration,nll\n0,3.0"));
    assert_eq!(trace.to_csv().lines().count(), 4);
}

#[test]
fn loss_and_gradient_are_repeatable() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sample = random_sample(&mut rng, 2, 4, 4, 0.3);
    let model = StppModel::new(ModelVariant::SyncAsync, ModelConfig::default(), 9).unwrap();
    let (l1, g1) = loss_and_gradient(&model, &sample).unwrap();
    let (l2, g2) = loss_and_gradient(&model, &sample).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(g1, g2);
}
