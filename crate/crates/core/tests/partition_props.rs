use cmmlp_core::autodiff::{gradcheck, GradcheckOptions};
use cmmlp_core::partition::{block, block_var, grid, grid_var, unblock, ungrid};
use cmmlp_core::{Error, Graph, Tensor};
use proptest::prelude::*;

fn ramp(c: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(&[c, h, w], |i| i as f64)
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

fn sorted_bits(t: &Tensor<f64>) -> Vec<u64> {
    let mut v: Vec<u64> = t.data().iter().map(|x| x.to_bits()).collect();
    v.sort_unstable();
    v
}

#[test]
fn eight_by_eight_grid_of_four() {
    let x = ramp(3, 8, 8);
    let t = grid(&x, 4).unwrap();
    assert_eq!(t.shape(), &[16, 4, 3]);
    // Patch (1, 2) is the 2x2 square whose top-left pixel is (2, 4).
    for c in 0..3 {
        let expect = [(2, 4), (2, 5), (3, 4), (3, 5)];
        for (pos, &(i, j)) in expect.iter().enumerate() {
            assert_eq!(t.at(&[4 + 2, pos, c]), x.at(&[c, i, j]));
        }
    }
}

#[test]
fn eight_by_eight_blocks_of_four() {
    let x = ramp(2, 8, 8);
    let t = block(&x, 4).unwrap();
    assert_eq!(t.shape(), &[4, 16, 2]);
    // Patch 3 is the bottom-right 4x4 square, row-major inside.
    for c in 0..2 {
        for pos in 0..16 {
            assert_eq!(t.at(&[3, pos, c]), x.at(&[c, 4 + pos / 4, 4 + pos % 4]));
        }
    }
}

#[test]
fn unit_grid_flattens_row_major() {
    let x = ramp(2, 4, 6);
    let t = grid(&x, 1).unwrap();
    assert_eq!(t.shape(), &[1, 24, 2]);
    for c in 0..2 {
        for p in 0..24 {
            assert_eq!(t.at(&[0, p, c]), x.at(&[c, p / 6, p % 6]));
        }
    }
    let whole = block(&x.reshape(&[2, 4, 6]).unwrap(), 2).unwrap();
    assert_eq!(whole.shape(), &[6, 4, 2]);
    let square = ramp(2, 4, 4);
    assert_eq!(block(&square, 4).unwrap().shape(), &[1, 16, 2]);
}

#[test]
fn exhaustive_round_trips() {
    for &h in &[2, 4, 8, 16, 32] {
        for &w in &[2, 4, 8, 16, 32] {
            let x = Tensor::from_fn(&[2, h, w], |i| ((i * 7919) % 1013) as f64 * 0.37 - 11.0);
            let common: Vec<usize> = divisors(h).into_iter().filter(|d| w % d == 0).collect();
            for &d in &common {
                let g = ungrid(&grid(&x, d).unwrap(), d, h, w).unwrap();
                assert_eq!(g.data(), x.data(), "grid {d} on {h}x{w}");
                let b = unblock(&block(&x, d).unwrap(), d, h, w).unwrap();
                assert_eq!(b.data(), x.data(), "block {d} on {h}x{w}");
            }
        }
    }
}

#[test]
fn non_divisible_extents_are_rejected() {
    let x = ramp(1, 6, 8);
    let err = grid(&x, 4).unwrap_err();
    assert!(matches!(err, Error::Divisibility { factor: 4, extent: 6, .. }));
    let text = err.to_string();
    assert!(text.contains('4') && text.contains('6') && text.contains('8'), "{text}");
    assert!(block(&x, 4).is_err());
    assert!(grid(&x, 0).is_err());
}

#[test]
fn partition_gradients_are_inverse_permutations() {
    let mut g = Graph::<f64>::new();
    let x = g.param("x", Tensor::from_fn(&[2, 4, 4], |i| (i as f64 * 0.61).sin())).unwrap();
    let w = g.constant(Tensor::from_fn(&[4, 4, 2], |i| (i as f64 * 1.3).cos()));
    let t = grid_var(&mut g, x, 2).unwrap();
    let p = g.mul(t, w).unwrap();
    let s = g.sum(p).unwrap();
    let bind = g.bindings();
    let r = gradcheck(&mut g, s, &bind, "x", &GradcheckOptions::with_tolerance(1e-6)).unwrap();
    assert!(r.pass, "{r:?}");

    let mut g = Graph::<f64>::new();
    let x = g.param("x", Tensor::from_fn(&[2, 4, 4], |i| (i as f64 * 0.61).sin())).unwrap();
    let w = g.constant(Tensor::from_fn(&[4, 4, 2], |i| (i as f64 * 1.3).cos()));
    let t = block_var(&mut g, x, 2).unwrap();
    let p = g.mul(t, w).unwrap();
    let s = g.sum(p).unwrap();
    let bind = g.bindings();
    let r = gradcheck(&mut g, s, &bind, "x", &GradcheckOptions::with_tolerance(1e-6)).unwrap();
    assert!(r.pass, "{r:?}");
}

fn map_and_divisor() -> impl Strategy<Value = (usize, usize, usize, usize, Vec<f64>)> {
    (1usize..4, 0u32..6, 0u32..6).prop_flat_map(|(c, eh, ew)| {
        let (h, w) = (1usize << eh, 1usize << ew);
        let d_max = eh.min(ew);
        (Just(c), Just(h), Just(w), 0..=d_max, prop::collection::vec(-1e3f64..1e3, c * h * w))
            .prop_map(|(c, h, w, e, v)| (c, h, w, 1usize << e, v))
    })
}

proptest! {
    #[test]
    fn grid_round_trip_is_bitwise((c, h, w, d, v) in map_and_divisor()) {
        let x = Tensor::new(vec![c, h, w], v).unwrap();
        let t = grid(&x, d).unwrap();
        prop_assert_eq!(t.shape(), &[d * d, (h / d) * (w / d), c]);
        let back = ungrid(&t, d, h, w).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn block_round_trip_is_bitwise((c, h, w, d, v) in map_and_divisor()) {
        let x = Tensor::new(vec![c, h, w], v).unwrap();
        let t = block(&x, d).unwrap();
        prop_assert_eq!(t.shape(), &[(h / d) * (w / d), d * d, c]);
        let back = unblock(&t, d, h, w).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn grid_and_block_hold_the_same_values((c, h, _w, d, v) in map_and_divisor()) {
        // Square maps so that b = H/g divides both sides.
        let v: Vec<f64> = v.into_iter().chain(std::iter::repeat(0.5)).take(c * h * h).collect();
        let x = Tensor::new(vec![c, h, h], v).unwrap();
        let gt = grid(&x, d).unwrap();
        let bt = block(&x, h / d).unwrap();
        prop_assert_eq!(gt.shape(), bt.shape());
        prop_assert_eq!(sorted_bits(&gt), sorted_bits(&x));
        prop_assert_eq!(sorted_bits(&bt), sorted_bits(&x));
    }
}
