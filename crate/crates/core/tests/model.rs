use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rehar_core::backbone::{Backbone, BackboneConfig};
use rehar_core::data::VideoClip;
use rehar_core::flow::FlowParams;
use rehar_core::graph::Graph;
use rehar_core::image::RgbImage;
use rehar_core::model::*;
use rehar_core::tensor::Tensor;

fn config(fusion: Fusion, categories: usize, time_step: usize) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            input_size: 8,
            stage_channels: vec![3, 4],
            convs_per_stage: vec![1, 1],
        },
        hidden_units: 6,
        num_categories: categories,
        time_step,
        fusion,
    }
}

fn pairs(n: usize, rng: &mut impl Rng) -> Vec<PairTensors<f64>> {
    (0..n)
        .map(|_| PairTensors {
            frame: Tensor::from_fn(&[8, 8, 3], |_| rng.random()),
            flow: Tensor::from_fn(&[8, 8, 3], |_| rng.random()),
        })
        .collect()
}

fn vectors(g: &mut Graph<f64>, vs: &[Tensor<f64>]) -> [rehar_core::graph::NodeId; 4] {
    [0, 1, 2, 3].map(|i| g.constant(vs[i].clone()))
}

#[test]
fn probabilities_are_distributions_across_seeds() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fusion = if seed % 2 == 0 {
            Fusion::Lstm
        } else {
            Fusion::Sum
        };
        let model = ReharModel::<f64>::new(&config(fusion, 11, 3), seed).unwrap();
        let out = model.predict(&pairs(3, &mut rng)).unwrap();
        assert_eq!(out.probs.shape(), &[11]);
        assert_eq!(out.reprs.len(), 3);
        for p in out.reprs.iter().chain([&out.probs]) {
            assert!(p.data().iter().all(|&v| v >= 0.0));
            assert!((p.sum() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn zeroed_heads_give_uniform_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = ReharModel::<f64>::new(&config(Fusion::Lstm, 4, 3), 3).unwrap();
    let zero = |m: &mut ReharModel<f64>, prefixes: &[&str]| {
        for (name, p) in m.parameters_mut() {
            if prefixes.contains(&parameter_group(&name)) {
                p.data_mut().fill(0.0);
            }
        }
    };
    let input = pairs(3, &mut rng);
    zero(&mut model, &["lstm2", "fc2"]);
    let out = model.predict(&input).unwrap();
    assert!(out.probs.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    assert!(out
        .reprs
        .iter()
        .any(|r| r.data().iter().any(|&p| (p - 0.25).abs() > 1e-6)));
    zero(&mut model, &["lstm1", "fc1"]);
    let out = model.predict(&input).unwrap();
    for r in &out.reprs {
        assert!(r.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }
}

#[test]
fn lstm_fusion_is_order_sensitive_and_sum_is_not() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vs: Vec<Tensor<f64>> = (0..4)
        .map(|_| Tensor::from_fn(&[4], |_| rng.random()))
        .collect();
    let permuted = [vs[2].clone(), vs[0].clone(), vs[3].clone(), vs[1].clone()];
    let repr = |m: &ReharModel<f64>, v: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let nodes = m.bind(&mut g);
        let pooled = vectors(&mut g, v);
        let r = nodes.frame_representation(&mut g, pooled).unwrap();
        g.value(r).clone()
    };
    let mut sensitive = 0;
    for seed in 0..5 {
        let lstm = ReharModel::<f64>::new(&config(Fusion::Lstm, 3, 2), seed).unwrap();
        if repr(&lstm, &vs) != repr(&lstm, &permuted) {
            sensitive += 1;
        }
        let sum = ReharModel::<f64>::new(&config(Fusion::Sum, 3, 2), seed).unwrap();
        let (a, b) = (repr(&sum, &vs), repr(&sum, &permuted));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }
    assert_eq!(sensitive, 5);
}

#[test]
fn sum_fusion_adds_before_projecting() {
    // identity projection and FC1, so the frame logits are the summed vector
    let mut model = ReharModel::<f64>::zeros(&ModelConfig {
        hidden_units: 2,
        num_categories: 2,
        backbone: BackboneConfig {
            input_size: 8,
            stage_channels: vec![2],
            convs_per_stage: vec![1],
        },
        ..config(Fusion::Sum, 2, 2)
    })
    .unwrap();
    for (name, p) in model.parameters_mut() {
        if name == "sum_projection.weight" || name == "fc1.weight" {
            p.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        }
    }
    let mut g = Graph::new();
    let nodes = model.bind(&mut g);
    let vs = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]].map(|v| Tensor::vector(v.to_vec()));
    let pooled = vectors(&mut g, &vs);
    let logits = nodes.frame_logits(&mut g, pooled).unwrap();
    assert_eq!(g.value(logits).data(), &[2.0, 2.0]);

    let zero = ReharModel::<f64>::zeros(&config(Fusion::Sum, 3, 2)).unwrap();
    let out = zero
        .predict(&pairs(2, &mut ChaCha8Rng::seed_from_u64(0)))
        .unwrap();
    assert!(out.reprs[0]
        .data()
        .iter()
        .all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn clip_of_24_frames_gives_23_steps() {
    let frame = |t: usize| {
        RgbImage::new(
            8,
            8,
            (0..192).map(|i| ((i * 7 + t * 13) % 256) as u8).collect(),
        )
        .unwrap()
    };
    let clip = VideoClip {
        id: "c".into(),
        label: 0,
        fps: 6.0,
        frames: (0..24).map(frame).collect(),
    };
    let cfg = config(Fusion::Lstm, 3, 23);
    let prepared = PreparedClip::<f64>::from_clip(&clip, &cfg, &FlowParams::default()).unwrap();
    assert_eq!(prepared.pairs.len(), 23);
    let model = ReharModel::<f64>::new(&cfg, 0).unwrap();
    let out = model.loss_and_gradients(&prepared.pairs, 0, 2.0).unwrap();
    assert_eq!(out.breakdown.frame_losses.len(), 23);
}

#[test]
fn backbone_has_no_dense_parameters() {
    let b = Backbone::<f64>::build(&BackboneConfig::default(), 0).unwrap();
    for layer in &b.layers {
        assert_eq!(layer.kernel.rank(), 4);
        assert_eq!(layer.kernel.shape()[..2], [3, 3]);
    }
    let model = ReharModel::<f64>::new(&ModelConfig::default(), 0).unwrap();
    for (name, t) in model.parameters() {
        if name.starts_with("backbone") {
            assert!(name.contains(".conv"), "{name}");
            assert!(t.rank() == 4 || name.ends_with(".bias"), "{name}");
        }
    }
}
