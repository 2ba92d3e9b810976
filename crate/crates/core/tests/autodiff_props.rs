use cmmlp_core::autodiff::{gradcheck, GradcheckOptions};
use cmmlp_core::verify::{primitive_suite, primitive_suite_training, PRIMITIVE_TOLERANCE};
use cmmlp_core::{Bindings, Error, Graph, Tensor, Var};
use proptest::prelude::*;

fn vector(values: &[f64]) -> Tensor<f64> {
    Tensor::new(vec![values.len()], values.to_vec()).unwrap()
}

fn square_sum(x: &[f64]) -> (Graph<f64>, Var) {
    let mut g = Graph::new();
    let x = g.param("x", vector(x)).unwrap();
    let sq = g.mul(x, x).unwrap();
    let y = g.sum(sq).unwrap();
    (g, y)
}

#[test]
fn identity_graph_returns_its_input() {
    let mut g = Graph::<f64>::new();
    let x = g.input("x", vector(&[0.0, 0.0, 0.0])).unwrap();
    let _y = g.scale(x, 1.0).unwrap();
    let mut b = Bindings::new();
    b.insert("x".into(), vector(&[1.0, 2.0, 3.0]));
    assert_eq!(g.forward(&b).unwrap().data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn sum_of_squares_value_and_gradient() {
    let (g, y) = square_sum(&[1.0, 2.0, 3.0]);
    assert_eq!(g.value(y).item(), 14.0);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads["x"].data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn gradient_of_sum_is_all_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.param("x", Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin())).unwrap();
    let y = g.sum(x).unwrap();
    let grads = g.backward(y).unwrap();
    assert!(grads["x"].data().iter().all(|&v| v == 1.0));
}

#[test]
fn gradient_of_summed_product_is_column_sums() {
    let (m, n) = (3, 4);
    let a = Tensor::from_fn(&[1, m, n], |i| (i as f64 * 0.7).cos() * 2.0);
    let mut g = Graph::<f64>::new();
    let av = g.constant(a.clone());
    let x = g.param("x", Tensor::from_fn(&[1, n, 1], |i| i as f64 - 1.5)).unwrap();
    let ax = g.bmm(av, x).unwrap();
    let y = g.sum(ax).unwrap();
    let grads = g.backward(y).unwrap();
    for j in 0..n {
        let col: f64 = (0..m).map(|i| a.at(&[0, i, j])).sum();
        assert!((grads["x"].data()[j] - col).abs() < 1e-12);
    }
    let bind = g.bindings();
    let r = gradcheck(&mut g, y, &bind, "x", &GradcheckOptions::with_tolerance(1e-6)).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn unused_leaves_get_zero_gradients() {
    let mut g = Graph::<f64>::new();
    let x = g.param("x", vector(&[1.0, 2.0])).unwrap();
    let _z = g.param("unused", vector(&[5.0, 6.0, 7.0])).unwrap();
    let y = g.sum(x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads["unused"].data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn square_sum_passes_tight_gradcheck() {
    let x = [0.37, -0.81, 0.55];
    let (mut g, y) = square_sum(&x);
    let bind = g.bindings();
    let r = gradcheck(&mut g, y, &bind, "x", &GradcheckOptions::with_tolerance(1e-6)).unwrap();
    assert!(r.pass && r.checked == 3, "{r:?}");
}

#[test]
fn linear_layer_passes_tight_gradcheck() {
    let mut g = Graph::<f64>::new();
    let w = g.param("w", Tensor::from_fn(&[1, 3, 5], |i| (i as f64 * 0.3).sin())).unwrap();
    let x = g.param("x", Tensor::from_fn(&[1, 5, 1], |i| (i as f64 * 0.9).cos())).unwrap();
    let wx = g.bmm(w, x).unwrap();
    let y = g.sum(wx).unwrap();
    let bind = g.bindings();
    for leaf in ["w", "x"] {
        let r = gradcheck(&mut g, y, &bind, leaf, &GradcheckOptions::with_tolerance(1e-6)).unwrap();
        assert!(r.pass, "{r:?}");
    }
}

#[test]
fn binarize_is_excluded_from_gradcheck() {
    let mut g = Graph::<f64>::new();
    let x = g.param("x", vector(&[0.2, 0.7])).unwrap();
    let b = g.binarize(x, 0.5).unwrap();
    let y = g.sum(b).unwrap();
    assert!(!g.is_differentiable(y));
    let bind = g.bindings();
    let r = gradcheck(&mut g, y, &bind, "x", &GradcheckOptions::default()).unwrap();
    assert!(r.excluded && r.checked == 0);
}

#[test]
fn forward_reports_missing_and_misshaped_leaves_by_name() {
    let mut g = Graph::<f64>::new();
    let a = g.param("alpha", vector(&[1.0, 2.0])).unwrap();
    let b = g.input("beta", vector(&[3.0, 4.0])).unwrap();
    let _ = g.add(a, b).unwrap();

    let mut bind = Bindings::new();
    bind.insert("alpha".into(), vector(&[1.0, 1.0]));
    match g.forward(&bind).unwrap_err() {
        Error::MissingBinding { leaf } => assert_eq!(leaf, "beta"),
        e => panic!("unexpected {e}"),
    }

    bind.insert("beta".into(), vector(&[1.0, 1.0, 1.0]));
    let err = g.forward(&bind).unwrap_err();
    assert!(matches!(&err, Error::BindingShape { leaf, .. } if leaf == "beta"));
    assert!(err.to_string().contains("beta"));
}

#[test]
fn backward_rejects_non_scalar_outputs() {
    let mut g = Graph::<f64>::new();
    let x = g.param("x", vector(&[1.0, 2.0])).unwrap();
    let y = g.relu(x).unwrap();
    assert!(matches!(g.backward(y), Err(Error::NonScalarOutput(_))));
}

#[test]
fn tensors_reject_empty_extents_and_bad_lengths() {
    assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
}

#[test]
fn primitives_pass_gradcheck_in_wide_precision() {
    let results = primitive_suite(PRIMITIVE_TOLERANCE).unwrap();
    assert!(results.len() >= 28 * 3);
    for r in &results {
        assert!(r.pass && r.max_rel_err < 1e-5, "{r:?}");
    }
}

#[test]
fn primitives_pass_gradcheck_in_training_precision() {
    for r in primitive_suite_training(1e-3).unwrap() {
        assert!(r.pass && r.max_rel_err < 1e-3, "{r:?}");
    }
}

/// A small random graph over leaves `a` and `b` (shape 2x3x4) chosen by
/// `ops`, returning a scalar.
fn random_graph(g: &mut Graph<f64>, a: Var, b: Var, ops: &[u8]) -> Var {
    let mut cur = a;
    for &op in ops {
        cur = match op % 8 {
            0 => g.add(cur, b).unwrap(),
            1 => g.mul(cur, b).unwrap(),
            2 => g.sigmoid(cur).unwrap(),
            3 => g.scale(cur, -0.7).unwrap(),
            4 => g.sub(b, cur).unwrap(),
            5 => g.softmax(cur).unwrap(),
            6 => {
                let r = g.resize(cur, 3, 2).unwrap();
                g.resize(r, 3, 4).unwrap()
            }
            _ => g.shift(cur, 0.25).unwrap(),
        };
    }
    g.sum(cur).unwrap()
}

fn leaves(g: &mut Graph<f64>, av: &[f64], bv: &[f64]) -> (Var, Var) {
    let a = g.param("a", Tensor::new(vec![2, 3, 4], av.to_vec()).unwrap()).unwrap();
    let b = g.param("b", Tensor::new(vec![2, 3, 4], bv.to_vec()).unwrap()).unwrap();
    (a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear_over_summed_graphs(
        av in prop::collection::vec(-2.0f64..2.0, 24),
        bv in prop::collection::vec(-2.0f64..2.0, 24),
        f_ops in prop::collection::vec(any::<u8>(), 1..6),
        h_ops in prop::collection::vec(any::<u8>(), 1..6),
    ) {
        let mut g = Graph::new();
        let (a, b) = leaves(&mut g, &av, &bv);
        let f = random_graph(&mut g, a, b, &f_ops);
        let gf = g.backward(f).unwrap();
        let mut g2 = Graph::new();
        let (a2, b2) = leaves(&mut g2, &av, &bv);
        let h = random_graph(&mut g2, a2, b2, &h_ops);
        let gh = g2.backward(h).unwrap();

        let mut g3 = Graph::new();
        let (a3, b3) = leaves(&mut g3, &av, &bv);
        let f3 = random_graph(&mut g3, a3, b3, &f_ops);
        let h3 = random_graph(&mut g3, a3, b3, &h_ops);
        let s = g3.add(f3, h3).unwrap();
        let gs = g3.backward(s).unwrap();
        for leaf in ["a", "b"] {
            for ((x, y), z) in gf[leaf].data().iter().zip(gh[leaf].data()).zip(gs[leaf].data()) {
                prop_assert!((x + y - z).abs() <= 1e-12 * (1.0 + z.abs()), "{leaf}: {x} + {y} vs {z}");
            }
        }
    }

    #[test]
    fn replay_is_bitwise_deterministic(
        av in prop::collection::vec(-2.0f64..2.0, 24),
        bv in prop::collection::vec(-2.0f64..2.0, 24),
        cv in prop::collection::vec(-2.0f64..2.0, 24),
        ops in prop::collection::vec(any::<u8>(), 1..8),
    ) {
        let mut g = Graph::new();
        let (a, b) = leaves(&mut g, &av, &bv);
        let y = random_graph(&mut g, a, b, &ops);
        let mut bind = g.bindings();
        bind.insert("a".into(), Tensor::new(vec![2, 3, 4], cv).unwrap());
        let first = g.forward(&bind).unwrap();
        let first_grads = g.backward(y).unwrap();
        let second = g.forward(&bind).unwrap();
        let second_grads = g.backward(y).unwrap();
        prop_assert_eq!(first.to_le_bytes(), second.to_le_bytes());
        for leaf in ["a", "b"] {
            prop_assert_eq!(first_grads[leaf].to_le_bytes(), second_grads[leaf].to_le_bytes());
        }
    }
}
