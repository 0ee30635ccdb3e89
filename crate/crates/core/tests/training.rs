use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rehar_core::backbone::BackboneConfig;
use rehar_core::model::*;
use rehar_core::tensor::Tensor;
use rehar_core::training::*;
use rehar_core::Error;

fn tiny(categories: usize) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            input_size: 8,
            stage_channels: vec![3, 4],
            convs_per_stage: vec![1, 1],
        },
        hidden_units: 6,
        num_categories: categories,
        time_step: 2,
        fusion: Fusion::Lstm,
    }
}

fn clips(n: usize, categories: usize, seed: u64) -> Vec<PreparedClip<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| PreparedClip {
            id: format!("clip{i}"),
            label: i % categories,
            pairs: (0..2)
                .map(|_| PairTensors {
                    frame: Tensor::from_fn(&[8, 8, 3], |_| rng.random()),
                    flow: Tensor::from_fn(&[8, 8, 3], |_| rng.random()),
                })
                .collect(),
        })
        .collect()
}

#[test]
fn overfits_a_single_clip() {
    let data = clips(1, 2, 0);
    let mut model = ReharModel::<f64>::new(&tiny(2), 0).unwrap();
    let initial = model
        .loss_and_gradients(&data[0].pairs, data[0].label, 2.0)
        .unwrap()
        .breakdown
        .total;
    let config = TrainingConfig {
        max_epochs: 50,
        batch_size: 1,
        rmsprop_lr: 1e-2,
        ..TrainingConfig::default()
    };
    let history = train(&mut model, &data, &config, 1).unwrap();
    assert_eq!(history.switch_epoch(), None, "{}", history.to_tsv());
    let last = history.records.last().unwrap().total_loss;
    let fin = model
        .loss_and_gradients(&data[0].pairs, data[0].label, 2.0)
        .unwrap()
        .breakdown
        .total;
    assert!(
        fin < 0.1 * initial,
        "initial {initial}, final {fin} (last epoch mean {last})"
    );
}

#[test]
fn training_is_deterministic_and_thread_independent() {
    let data = clips(10, 3, 1);
    let config = TrainingConfig {
        max_epochs: 3,
        batch_size: 4,
        seed: 9,
        ..TrainingConfig::default()
    };
    let run = |threads: usize| {
        let mut model = ReharModel::<f64>::new(&tiny(3), 9).unwrap();
        let history = train(&mut model, &data, &config, threads).unwrap();
        (history, model)
    };
    let (h1, m1) = run(1);
    let (h2, m2) = run(1);
    let (h3, m3) = run(3);
    assert_eq!(h1, h2);
    assert_eq!(m1, m2);
    assert_eq!(h1.to_tsv(), h3.to_tsv());
    assert_eq!(m1, m3);
    assert_eq!(h1.records.len(), 3);
}

#[test]
fn phase_switches_once_and_stays() {
    let data = clips(4, 2, 2);
    let config = TrainingConfig {
        max_epochs: 12,
        batch_size: 4,
        switch_patience: 1,
        switch_threshold: 0.5,
        ..TrainingConfig::default()
    };
    let mut model = ReharModel::<f64>::new(&tiny(2), 2).unwrap();
    let history = train(&mut model, &data, &config, 1).unwrap();
    let phases: Vec<Phase> = history.records.iter().map(|r| r.phase).collect();
    let switch = history
        .switch_epoch()
        .expect("a 50% threshold stalls at once");
    assert_eq!(phases[0], Phase::Rmsprop);
    for (i, p) in phases.iter().enumerate() {
        let want = if i + 1 < switch {
            Phase::Rmsprop
        } else {
            Phase::Sgd
        };
        assert_eq!(*p, want);
    }
    assert!(history
        .to_tsv()
        .lines()
        .nth(switch)
        .unwrap()
        .contains("\tsgd\t"));
}

#[test]
fn sgd_update_is_linear_in_the_gradient() {
    let w = Tensor::vector(vec![0.5, -1.25, 2.0]);
    let g1 = Tensor::vector(vec![0.5, 0.25, -1.0]);
    let g2 = Tensor::vector(vec![-0.125, 2.0, 0.75]);
    let sum = Tensor::vector(
        g1.data()
            .iter()
            .zip(g2.data())
            .map(|(a, b)| a + b)
            .collect(),
    );
    let mut once = w.clone();
    sgd_step(&mut once, &sum, 0.25).unwrap();
    let mut twice = w.clone();
    sgd_step(&mut twice, &g1, 0.25).unwrap();
    sgd_step(&mut twice, &g2, 0.25).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn non_finite_gradient_names_the_group() {
    let data = clips(2, 2, 3);
    let mut model = ReharModel::<f64>::new(&tiny(2), 3).unwrap();
    for (name, p) in model.parameters_mut() {
        if name == "fc2.bias" {
            p.data_mut()[0] = f64::NAN;
        }
    }
    let err = train(&mut model, &data, &TrainingConfig::default(), 1).unwrap_err();
    assert!(
        matches!(err, Error::NonFinite(_) | Error::NonFiniteGradient { .. }),
        "{err}"
    );
}
