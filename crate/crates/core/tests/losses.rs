use ndarray::Array2;
use panoptic_core::synth::rng::XorShift64Star;
use panoptic_core::{deep_supervised_loss, dice_loss, dice_loss_grad, focal_loss, FocalParams, LossWeights};
use proptest::prelude::*;

/// Class-balanced binary cross-entropy summed over classes.
fn balanced_ce(pred: &[f64], target: Option<usize>, alpha: f64) -> f64 {
    pred.iter()
        .enumerate()
        .map(|(j, &p)| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            if Some(j) == target {
                -alpha * p.ln()
            } else {
                -(1.0 - alpha) * (1.0 - p).ln()
            }
        })
        .sum()
}

#[test]
fn focal_without_focusing_is_balanced_cross_entropy() {
    let mut rng = XorShift64Star::new(17);
    for case in 0..1000 {
        let c = rng.range_inclusive(1, 12);
        let pred: Vec<f64> = (0..c).map(|_| rng.uniform(0.001, 0.999)).collect();
        let target = if case % 5 == 0 { None } else { Some(rng.below(c as u64) as usize) };
        let alpha = rng.uniform(0.05, 0.95);
        let focal = focal_loss(&pred, target, &FocalParams { gamma: 0.0, alpha }).unwrap();
        let ce = balanced_ce(&pred, target, alpha);
        assert!((focal - ce).abs() <= 1e-6, "case {case}: {focal} vs {ce}");
    }
}

#[test]
fn dice_gradient_matches_central_differences() {
    let mut rng = XorShift64Star::new(23);
    let step = 1e-5;
    for case in 0..100 {
        let pred = Array2::from_shape_fn((8, 8), |_| rng.uniform(0.0, 1.0));
        let gt = Array2::from_shape_fn((8, 8), |_| rng.next_f64() < 0.4);
        let grad = dice_loss_grad(pred.view(), gt.view(), 1.0).unwrap();
        for ((r, c), &g) in grad.indexed_iter() {
            let mut up = pred.clone();
            up[[r, c]] += step;
            let mut down = pred.clone();
            down[[r, c]] -= step;
            let fd = (dice_loss(up.view(), gt.view(), 1.0).unwrap() - dice_loss(down.view(), gt.view(), 1.0).unwrap())
                / (2.0 * step);
            assert!((fd - g).abs() <= 1e-4, "case {case} pixel ({r}, {c}): {fd} vs {g}");
        }
    }
}

proptest! {
    #[test]
    fn dice_bounded_and_symmetric_on_binary_maps(bits_a in prop::collection::vec(any::<bool>(), 36), bits_b in prop::collection::vec(any::<bool>(), 36)) {
        let a = Array2::from_shape_vec((6, 6), bits_a).unwrap();
        let b = Array2::from_shape_vec((6, 6), bits_b).unwrap();
        let af = a.mapv(|x| x as u8 as f64);
        let bf = b.mapv(|x| x as u8 as f64);
        let ab = dice_loss(af.view(), b.view(), 1.0).unwrap();
        let ba = dice_loss(bf.view(), a.view(), 1.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn focal_is_nonnegative(pred in prop::collection::vec(0.0f64..=1.0, 1..10), gamma in 0.0f64..4.0, alpha in 0.0f64..=1.0, t in any::<prop::sample::Index>()) {
        let target = Some(t.index(pred.len()));
        let params = FocalParams { gamma, alpha };
        prop_assert!(focal_loss(&pred, target, &params).unwrap() >= 0.0);
    }

    #[test]
    fn deep_supervision_is_linear_per_layer(layers in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), 6), k in 0usize..6, scale in 0.0f64..3.0, det in 0.0f64..2.0) {
        let w = LossWeights::default();
        let base = deep_supervised_loss(&layers, Some(det), &w).unwrap();
        let mut scaled = layers.clone();
        scaled[k] = (layers[k].0 * scale, layers[k].1 * scale);
        let expected = base + (scale - 1.0) * (w.cls * layers[k].0 + w.seg * layers[k].1);
        prop_assert!((deep_supervised_loss(&scaled, Some(det), &w).unwrap() - expected).abs() < 1e-9);
    }
}
