mod common;

use cmmlp_core::autodiff::{gradcheck, GradcheckOptions};
use cmmlp_core::loss::{boundary_weights, total_loss, total_loss_value, weighted_bce_iou};
use cmmlp_core::metrics::{aggregate, metrics, Confusion};
use cmmlp_core::{Error, Graph, LossConfig, MetricReport, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mask(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Tensor<f64> {
    Tensor::from_fn(&[1, h, w], |i| if f(i / w, i % w) { 1.0 } else { 0.0 })
}

fn random_binary(side: usize, p: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(&[1, side, side], |_| if rng.gen_bool(p) { 1.0 } else { 0.0 })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Independent counting oracle: (tp, fp, fn) by direct comparison.
fn counts(pred: &Tensor<f64>, target: &Tensor<f64>) -> (u64, u64, u64) {
    let mut c = (0, 0, 0);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        match (p >= 0.5, t == 1.0) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            _ => {}
        }
    }
    c
}

#[test]
fn iou_equals_dice_over_two_minus_dice_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let side = rng.gen_range(1..=12);
        let (pp, pt) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let pred = random_binary(side, pp, &mut rng);
        let target = random_binary(side, pt, &mut rng);
        let (tp, fp, fn_) = counts(&pred, &target);
        let c = Confusion::count(&pred, &target, 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (tp, fp, fn_));

        // Exact in rationals: dice = 2tp/(2tp+fp+fn), so
        // dice/(2-dice) = 2tp/(2(2tp+fp+fn) - 2tp) = tp/(tp+fp+fn).
        let (dn, dd) = (2 * tp, 2 * tp + fp + fn_);
        if dd == 0 {
            assert_eq!((c.dice(), c.iou()), (1.0, 1.0));
            continue;
        }
        let (qn, qd) = (dn, 2 * dd - dn);
        let (inum, iden) = (tp, tp + fp + fn_);
        assert_eq!(qn as u128 * iden as u128, inum as u128 * qd as u128);
        let (ga, gb) = (gcd(qn, qd), gcd(inum, iden));
        assert!((qn / ga, qd / ga) == (inum / gb, iden / gb) || inum == 0);

        let r = metrics(&pred, &target, 0.5).unwrap();
        let via_dice = r.dice / (2.0 - r.dice);
        assert!((via_dice - r.miou).abs() <= 4.0 * f64::EPSILON, "{via_dice} vs {}", r.miou);
    }
}

#[test]
fn dice_0_9696_maps_to_iou_0_9412_within_rounding() {
    let dice: f64 = 0.9696;
    let iou = dice / (2.0 - dice);
    assert!((iou - 0.9410).abs() < 5e-5, "{iou}");
    assert!((iou - 0.9412).abs() <= 0.0003);
}

#[test]
fn perfect_prediction_scores_one() {
    let g = mask(6, 6, |i, j| (1..4).contains(&i) && (2..5).contains(&j));
    let r = metrics(&g, &g, 0.5).unwrap();
    assert_eq!((r.dice, r.miou, r.mae, r.mpa), (1.0, 1.0, 0.0, 1.0));
}

#[test]
fn half_coverage_without_false_positives() {
    let g = mask(4, 4, |i, _| i < 2);
    let p = mask(4, 4, |i, _| i < 1);
    let r = metrics(&p, &g, 0.5).unwrap();
    assert!((r.dice - 2.0 / 3.0).abs() < 1e-15);
    assert!((r.miou - 0.5).abs() < 1e-15);
    assert!((r.mpa - 0.75).abs() < 1e-15);
    assert!((r.mae - 0.25).abs() < 1e-15);
}

#[test]
fn empty_against_empty_scores_one() {
    let z = Tensor::<f64>::zeros(&[1, 5, 5]);
    let r = metrics(&z, &z, 0.5).unwrap();
    assert_eq!((r.dice, r.miou, r.mpa), (1.0, 1.0, 1.0));
}

#[test]
fn mae_uses_unthresholded_probabilities() {
    let g = mask(2, 2, |i, j| i == j);
    let p = Tensor::from_fn(&[1, 2, 2], |i| if i == 0 || i == 3 { 0.9 } else { 0.2 });
    let r = metrics(&p, &g, 0.5).unwrap();
    assert!((r.mae - 0.15).abs() < 1e-12);
    assert_eq!(r.dice, 1.0);
}

#[test]
fn metric_shape_mismatch_is_an_error() {
    let a = Tensor::<f64>::zeros(&[1, 4, 4]);
    let b = Tensor::<f64>::zeros(&[1, 4, 5]);
    assert!(metrics(&a, &b, 0.5).is_err());
}

#[test]
fn aggregate_is_order_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut reports: Vec<MetricReport> = (0..257)
        .map(|_| MetricReport {
            dice: rng.gen_range(0.0..1.0),
            miou: rng.gen_range(0.0..1.0),
            mae: rng.gen_range(0.0..1e-3),
            mpa: rng.gen_range(0.0..1.0),
        })
        .collect();
    let a = aggregate(&reports);
    reports.reverse();
    reports.swap(3, 100);
    let b = aggregate(&reports);
    assert_eq!(a.values().map(f64::to_bits), b.values().map(f64::to_bits));
}

#[test]
fn uniform_target_gets_unit_weights() {
    let ones = Tensor::<f64>::ones(&[1, 9, 7]);
    let w = boundary_weights(&ones, &LossConfig::default()).unwrap();
    assert!(w.data().iter().all(|&v| v == 1.0));
}

#[test]
fn confident_correct_logits_give_near_zero_loss() {
    let target = mask(16, 16, |i, j| (i as i32 - 8).pow(2) + (j as i32 - 7).pow(2) < 20);
    let logits = target.map(|t| if t == 1.0 { 20.0 } else { -20.0 });
    let mut g = Graph::new();
    let m = g.input("m", logits).unwrap();
    let (iou, bce) = weighted_bce_iou(&mut g, m, &target, &LossConfig::default()).unwrap();
    assert!(g.value(iou).item() < 1e-6);
    assert!(g.value(bce).item() < 1e-6);
}

#[test]
fn loss_rejects_bad_targets() {
    let mut g = Graph::<f64>::new();
    let m = g.input("m", Tensor::zeros(&[1, 4, 4])).unwrap();
    let gray = Tensor::full(&[1, 4, 4], 0.5);
    assert!(matches!(weighted_bce_iou(&mut g, m, &gray, &LossConfig::default()), Err(Error::Data(_))));
    let wrong = Tensor::zeros(&[1, 4, 5]);
    assert!(matches!(weighted_bce_iou(&mut g, m, &wrong, &LossConfig::default()), Err(Error::Shape { .. })));
}

fn random_logits(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-3.0..3.0))
}

#[test]
fn total_is_the_sum_of_branch_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let target = random_binary(32, 0.3, &mut rng);
        let masks = [
            random_logits(&[1, 4, 4], &mut rng),
            random_logits(&[1, 8, 8], &mut rng),
            random_logits(&[1, 16, 16], &mut rng),
            random_logits(&[1, 32, 32], &mut rng),
        ];
        let mut g = Graph::new();
        let vars = masks.clone().map(|m| g.constant(m));
        let (total, report) = total_loss(&mut g, &target, &vars, &LossConfig::default()).unwrap();
        let branch_sum: f64 = report.branches.iter().map(|b| b.total).sum();
        assert_eq!(report.total, branch_sum);
        assert!((g.value(total).item() - report.total).abs() <= 8.0 * f64::EPSILON * report.total);
        for b in &report.branches {
            assert!(b.iou >= 0.0 && b.bce >= 0.0);
            assert_eq!(b.total, b.iou + b.bce);
        }
        assert_eq!(total_loss_value(&target, &masks, &LossConfig::default()).unwrap(), report);
    }
}

#[test]
fn identical_branches_give_four_times_one_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let target = random_binary(16, 0.4, &mut rng);
    let m = random_logits(&[1, 16, 16], &mut rng);
    let report = total_loss_value(&target, &[m.clone(), m.clone(), m.clone(), m.clone()], &LossConfig::default()).unwrap();
    let mut g = Graph::new();
    let v = g.constant(m);
    let (iou, bce) = weighted_bce_iou(&mut g, v, &target, &LossConfig::default()).unwrap();
    let single = g.value(iou).item() + g.value(bce).item();
    assert!((report.total - 4.0 * single).abs() <= 4.0 * f64::EPSILON * report.total);
}

#[test]
fn weighted_loss_matches_pixelwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let target = random_binary(8, 0.5, &mut rng);
        let logits = random_logits(&[1, 8, 8], &mut rng);
        let cfg = LossConfig { kernel_size: 3, gain: 5.0 };
        let mut g = Graph::new();
        let v = g.constant(logits.clone());
        let (iou, bce) = weighted_bce_iou(&mut g, v, &target, &cfg).unwrap();
        let (oi, ob) = common::weighted_bce_iou(
            &common::Map::from_tensor(&target),
            &common::Map::from_tensor(&logits),
            3,
            5.0,
        );
        assert!((g.value(iou).item() - oi).abs() < 1e-12);
        assert!((g.value(bce).item() - ob).abs() < 1e-12);
    }
}

#[test]
fn total_loss_passes_gradcheck_at_sixteen() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let target = random_binary(16, 0.4, &mut rng);
    let mut g = Graph::new();
    let vars = [2usize, 4, 8, 16].map(|s| {
        let t = random_logits(&[1, s, s], &mut rng);
        g.param(&format!("m{s}"), t).unwrap()
    });
    let (total, _) = total_loss(&mut g, &target, &vars, &LossConfig::default()).unwrap();
    let bind = g.bindings();
    for leaf in ["m2", "m4", "m8", "m16"] {
        let r = gradcheck(&mut g, total, &bind, leaf, &GradcheckOptions::with_tolerance(1e-5)).unwrap();
        assert!(r.pass, "{r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_is_permutation_equivariant_without_pooling(
        bits in prop::collection::vec(any::<bool>(), 36),
        logits in prop::collection::vec(-4.0f64..4.0, 36),
        seed in any::<u64>(),
    ) {
        let cfg = LossConfig { kernel_size: 15, gain: 0.0 };
        let target = Tensor::new(vec![1, 6, 6], bits.iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let m = Tensor::new(vec![1, 6, 6], logits.clone()).unwrap();
        let mut perm: Vec<usize> = (0..36).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..36).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let pt = Tensor::new(vec![1, 6, 6], perm.iter().map(|&i| target.data()[i]).collect()).unwrap();
        let pm = Tensor::new(vec![1, 6, 6], perm.iter().map(|&i| logits[i]).collect()).unwrap();

        let value = |t: &Tensor<f64>, m: Tensor<f64>| {
            let mut g = Graph::new();
            let v = g.constant(m);
            let (iou, bce) = weighted_bce_iou(&mut g, v, t, &cfg).unwrap();
            (g.value(iou).item(), g.value(bce).item())
        };
        let (a, b) = (value(&target, m), value(&pt, pm));
        prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    }

    #[test]
    fn metrics_stay_in_unit_range(
        probs in prop::collection::vec(0.0f64..1.0, 25),
        bits in prop::collection::vec(any::<bool>(), 25),
    ) {
        let p = Tensor::new(vec![1, 5, 5], probs).unwrap();
        let t = Tensor::new(vec![1, 5, 5], bits.iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let r = metrics(&p, &t, 0.5).unwrap();
        for v in r.values() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(r.mae == 0.0, p.data() == t.data());
    }
}
