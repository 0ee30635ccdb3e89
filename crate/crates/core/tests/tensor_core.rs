use proptest::prelude::*;
use rehar_core::gradcheck::check_gradients;
use rehar_core::graph::{softmax, Graph};
use rehar_core::tensor::Tensor;

fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0..30.0f64, 1..12)
}

fn feature_map() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..6, 1usize..6, 1usize..4).prop_flat_map(|(h, w, c)| {
        prop::collection::vec(-5.0..5.0f64, h * w * c)
            .prop_map(move |data| Tensor::new(&[h, w, c], data).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_sums_to_one(x in logits()) {
        let p = softmax(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }

    /// Whenever the shift leaves every `x - max` unchanged in floating
    /// point, the outputs are bitwise equal; otherwise they agree to
    /// rounding.
    #[test]
    fn softmax_shift_invariant(x in logits(), shift in -50.0..50.0f64) {
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let a = softmax(&x).unwrap();
        let b = softmax(&shifted).unwrap();
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (m, ms) = (max(&x), max(&shifted));
        let exact = x.iter().zip(&shifted).all(|(v, s)| v - m == s - ms);
        if exact {
            prop_assert_eq!(a, b);
        } else {
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gap_never_exceeds_gmax(x in feature_map()) {
        let mut g = Graph::new();
        let n = g.constant(x);
        let avg = g.global_avg_pool(n).unwrap();
        let max = g.global_max_pool(n).unwrap();
        for (a, m) in g.value(avg).data().iter().zip(g.value(max).data()) {
            prop_assert!(a <= m);
        }
    }

    #[test]
    fn backward_leaves_forward_values_untouched(x in feature_map()) {
        let mut g = Graph::new();
        let p = g.parameter(x);
        let r = g.relu(p);
        let avg = g.global_avg_pool(r).unwrap();
        let max = g.global_max_pool(p).unwrap();
        let both = g.add(avg, max).unwrap();
        let s = g.sigmoid(both);
        let out = g.sum(s);
        let before: Vec<Tensor<f64>> = g.node_ids().map(|i| g.value(i).clone()).collect();
        let first = g.backward(out).unwrap();
        let second = g.backward(out).unwrap();
        for (i, v) in g.node_ids().zip(&before) {
            prop_assert_eq!(g.value(i), v);
        }
        prop_assert_eq!(first.get(p), second.get(p));
    }
}

#[test]
fn softmax_matches_direct_exponential_sum() {
    let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (v, x) in p.iter().zip([1.0f64, 2.0, 3.0]) {
        assert!((v - x.exp() / z).abs() < 1e-15);
    }
    assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
}

#[test]
fn pooling_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let mp = g.max_pool2d(x).unwrap();
    let avg = g.global_avg_pool(x).unwrap();
    let max = g.global_max_pool(x).unwrap();
    assert_eq!(g.value(mp).data(), &[4.0]);
    assert_eq!(g.value(avg).data(), &[2.5]);
    assert_eq!(g.value(max).data(), &[4.0]);

    let c = g.constant(Tensor::full(&[4, 6, 2], 3.0));
    let mp = g.max_pool2d(c).unwrap();
    let avg = g.global_avg_pool(c).unwrap();
    let max = g.global_max_pool(c).unwrap();
    assert!(g.value(mp).data().iter().all(|&v| v == 3.0));
    assert_eq!(g.value(avg).data(), &[3.0, 3.0]);
    assert_eq!(g.value(max).data(), &[3.0, 3.0]);

    let big = g.constant(Tensor::full(&[7, 7, 512], 0.5));
    let avg = g.global_avg_pool(big).unwrap();
    let max = g.global_max_pool(big).unwrap();
    assert_eq!(g.value(avg).shape(), &[512]);
    assert_eq!(g.value(max).shape(), &[512]);
}

#[test]
fn max_pool_gradient_routes_to_the_max_cell() {
    let x = Tensor::new(&[2, 2, 1], vec![0.3, 0.9, -0.2, 0.1]).unwrap();
    let mut g = Graph::new();
    let p = g.parameter(x.clone());
    let out = g.max_pool2d(p).unwrap();
    let s = g.sum(out);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(p).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    let err = check_gradients(&x, 1e-5, |g, p| {
        let out = g.max_pool2d(p)?;
        Ok(g.sum(out))
    })
    .unwrap();
    assert!(err < 1e-9);
}
