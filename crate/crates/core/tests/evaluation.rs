use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rehar_core::backbone::BackboneConfig;
use rehar_core::evaluation::*;
use rehar_core::model::{Fusion, ModelConfig, PairTensors, ReharModel};
use rehar_core::tensor::Tensor;

type Q = Ratio<i128>;

/// Rectangle integration of the full precision/recall staircase, with the
/// rank of every item counted directly from pairwise comparisons.
fn staircase_ap(scores: &[f64], positives: &[bool]) -> Q {
    let n = scores.len();
    let n_pos = positives.iter().filter(|&&p| p).count() as i128;
    let rank = |i: usize| {
        (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let mut at_rank = vec![false; n];
    for i in 0..n {
        at_rank[rank(i)] = positives[i];
    }
    let mut area = Q::from_integer(0);
    let mut prev_recall = Q::from_integer(0);
    let mut tp = 0i128;
    for (k, &pos) in at_rank.iter().enumerate() {
        tp += i128::from(pos);
        let recall = Q::new(tp, n_pos);
        let precision = Q::new(tp, k as i128 + 1);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

#[test]
fn ap_matches_brute_force_staircase_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 200 {
        let n = rng.random_range(1..=20);
        // coarse integer scores so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let positives: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if !positives.contains(&true) {
            continue;
        }
        let ap: Q = average_precision(&scores, &positives).unwrap();
        assert_eq!(
            ap,
            staircase_ap(&scores, &positives),
            "{scores:?} {positives:?}"
        );
        checked += 1;
    }
}

#[test]
fn ap_examples() {
    let perfect =
        average_precision::<f64>(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
    assert_eq!(perfect, 1.0);
    assert_eq!(
        average_precision::<f64>(&[0.7, 0.2], &[false, true]).unwrap(),
        0.5
    );
    let single = mean_average_precision(&[vec![0.2], vec![0.9]], &[0, 0], 1).unwrap();
    assert_eq!(single.mean, single.per_category[0].unwrap());
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..25)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0..10.0f64, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("needs a positive", |(_, p)| p.contains(&true))
}

proptest! {
    #[test]
    fn ap_lies_in_unit_interval((scores, positives) in instance()) {
        let ap: f64 = average_precision(&scores, &positives).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn ap_depends_only_on_ranking((scores, positives) in instance(), a in 0.1..5.0f64, b in -3.0..3.0f64) {
        let ap: Q = average_precision(&scores, &positives).unwrap();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        // Strictly monotone maps can still merge nearby floats; only compare
        // when the ordering survived.
        for t in [affine, cubed] {
            if ranking(&t) == ranking(&scores) {
                prop_assert_eq!(average_precision::<Q>(&t, &positives).unwrap(), ap);
            }
        }
    }
}

/// Expected AP of a uniformly random ranking with `p` positives among `n`,
/// by enumerating every arrangement of the positive positions.
fn random_ranking_expectation(n: usize, p: usize) -> Q {
    let mut total = Q::from_integer(0);
    let mut count = 0i128;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != p {
            continue;
        }
        let positives: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        total += average_precision::<Q>(&scores, &positives).unwrap();
        count += 1;
    }
    total / Q::from_integer(count)
}

#[test]
fn best_and_worst_rankings_bracket_random_expectation() {
    for n in [2, 4, 6, 8, 10] {
        let p = n / 2;
        let expected = random_ranking_expectation(n, p);
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let best: Vec<bool> = (0..n).map(|i| i < p).collect();
        let worst: Vec<bool> = best.iter().rev().copied().collect();
        let hi: Q = average_precision(&scores, &best).unwrap();
        let lo: Q = average_precision(&scores, &worst).unwrap();
        assert!(
            lo < expected && expected < hi,
            "n={n}: {lo} {expected} {hi}"
        );
    }
}

#[test]
fn confusion_matrix_convention() {
    let m = ConfusionMatrix::new(&[0, 1], &[1, 1], 2).unwrap();
    assert_eq!(m.get(0, 1), 1);
    assert_eq!(m.get(1, 1), 1);
    assert_eq!(m.get(0, 0) + m.get(1, 0), 0);
    assert_eq!(m.total(), 2);

    // predicted A = 2, actual B = 0 lands in row 2, column 0
    let m = ConfusionMatrix::new(&[2], &[0], 3).unwrap();
    assert_eq!(m.get(2, 0), 1);
    assert_eq!(m.get(0, 2), 0);

    let labels = [0, 0, 1, 2, 2, 2];
    let m = ConfusionMatrix::new(&labels, &labels, 3).unwrap();
    for r in 0..3 {
        for c in 0..3 {
            let want = if r == c {
                labels.iter().filter(|&&l| l == c).count()
            } else {
                0
            };
            assert_eq!(m.get(r, c), want);
        }
    }
    assert_eq!(m.total(), labels.len());
}

fn toy_model(seed: u64) -> ReharModel<f64> {
    let config = ModelConfig {
        backbone: BackboneConfig {
            input_size: 8,
            stage_channels: vec![3, 4],
            convs_per_stage: vec![1, 1],
        },
        hidden_units: 5,
        num_categories: 3,
        time_step: 2,
        fusion: Fusion::Lstm,
    };
    let mut model = ReharModel::new(&config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    // keep ReLU inputs off their kinks (see the gradient tests)
    for (name, p) in model.parameters_mut() {
        if name.ends_with(".bias") {
            for v in p.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
    }
    model
}

fn toy_pairs(seed: u64) -> Vec<PairTensors<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2)
        .map(|_| PairTensors {
            frame: Tensor::from_fn(&[8, 8, 3], |_| rng.random()),
            flow: Tensor::from_fn(&[8, 8, 3], |_| rng.random()),
        })
        .collect()
}

#[test]
fn saliency_matches_pixel_perturbation() {
    let eps = 1e-5;
    for seed in 0..3 {
        let model = toy_model(seed);
        let pairs = toy_pairs(seed);
        let category = seed as usize % 3;
        let result = input_saliency(&model, &pairs, category).unwrap();
        assert_eq!(result.frame_maps.len(), 2);
        for m in result.frame_maps.iter().chain(&result.flow_maps) {
            assert_eq!((m.width, m.height, m.data.len()), (8, 8, 64));
        }
        let logit = |p: &[PairTensors<f64>]| input_saliency(&model, p, category).unwrap().logit;

        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        for _ in 0..5 {
            let (t, flow, y, x) = (
                rng.random_range(0..2),
                rng.random_bool(0.5),
                rng.random_range(0..8),
                rng.random_range(0..8),
            );
            let numeric = (0..3)
                .map(|c| {
                    let bump = |d: f64| {
                        let mut p = pairs.clone();
                        let img = if flow {
                            &mut p[t].flow
                        } else {
                            &mut p[t].frame
                        };
                        img.data_mut()[(y * 8 + x) * 3 + c] += d;
                        logit(&p)
                    };
                    ((bump(eps) - bump(-eps)) / (2.0 * eps)).abs()
                })
                .fold(0.0, f64::max);
            let map = if flow {
                &result.flow_maps[t]
            } else {
                &result.frame_maps[t]
            };
            let analytic = map.data[y * 8 + x];
            let rel = (analytic - numeric).abs() / (analytic + numeric).max(1e-8);
            assert!(
                rel < 1e-3,
                "seed {seed} pair {t} flow {flow} ({x},{y}): {analytic} vs {numeric}"
            );
        }
    }
}

#[test]
fn zero_fc2_gives_black_maps() {
    let mut model = toy_model(4);
    for (name, p) in model.parameters_mut() {
        if name == "fc2.weight" {
            p.data_mut().fill(0.0);
        }
    }
    let result = input_saliency(&model, &toy_pairs(4), 1).unwrap();
    assert_eq!(result.max_value(), 0.0);
    let maps = result.to_gray_maps();
    assert_eq!(maps.len(), 4);
    assert!(maps.iter().all(|m| m.data.iter().all(|&v| v == 0)));
}

#[test]
fn saliency_is_pure() {
    let model = toy_model(5);
    let pairs = toy_pairs(5);
    let a = input_saliency(&model, &pairs, 2).unwrap();
    let b = input_saliency(&model, &pairs, 2).unwrap();
    assert_eq!(a, b);
    assert!(input_saliency(&model, &pairs, 3).is_err());
}

#[test]
fn evaluation_totals_match_clip_count() {
    let model = toy_model(6);
    let clips: Vec<_> = (0..7)
        .map(|i| rehar_core::model::PreparedClip {
            id: format!("c{i}"),
            label: i % 3,
            pairs: toy_pairs(100 + i as u64),
        })
        .collect();
    let ev = evaluate(&model, &clips).unwrap();
    assert_eq!(ev.confusion.total(), 7);
    assert_eq!(ev.map.per_category.len(), 3);
    let zeroed = zero_stream(&clips, Stream::Flow);
    assert!(zeroed
        .iter()
        .flat_map(|c| &c.pairs)
        .all(|p| p.flow.data().iter().all(|&v| v == 0.0)));
    assert_eq!(zeroed[3].pairs[1].frame, clips[3].pairs[1].frame);
}
