mod common;

use std::collections::BTreeSet;

use common::*;
use rand::Rng;
use selar::attribute_maps::{top_attributes, upsample_bilinear, Heatmap, MapSource};
use selar::evaluator::{per_class_top1, predict, predict_from_logits};
use selar::semantic_head::{forward, project_local};
use selar::trainer::softmax_cross_entropy;
use selar::{Classifier, FeatureMap, Matrix, PoolingConfig};

#[test]
fn project_local_matches_triple_loop() {
    let mut r = rng(10);
    for _ in 0..40 {
        let (m, d, l, c) = random_dims(&mut r, (1, 6), (1, 16), (1, 8), (1, 3));
        let inst = random_instance(&mut r, m, d, l, c);
        let local = project_local(&inst.weights(), &inst.feature_map()).unwrap();
        for i in 0..m {
            for j in 0..m {
                for k in 0..l {
                    let mut s = 0.0;
                    for dd in 0..d {
                        s += inst.w[k][dd] * inst.v[i][j][dd];
                    }
                    assert!((local.get(i, j, k) - s).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn single_precision_forward_tracks_the_oracle() {
    let mut r = rng(11);
    for i in 0..60 {
        let (m, d, l, c) = random_dims(&mut r, (1, 5), (1, 16), (1, 8), (1, 6));
        let inst = random_instance(&mut r, m, d, l, c);
        let cfg = all_configs()[i % 6];
        let got = forward(
            &inst.weights().cast::<f32>(),
            &inst.classifier().cast::<f32>(),
            &inst.feature_map_f32(),
            cfg,
        )
        .unwrap()
        .logits;
        let want = oracle_logits(&inst, &inst.w, cfg);
        let scale = want.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        for (a, b) in got.iter().zip(&want) {
            assert!((*a as f64 - b).abs() <= 1e-5 * scale, "{cfg}: {a} vs {b}");
        }
    }
}

#[test]
fn cross_entropy_matches_naive_log_sum_exp() {
    let mut r = rng(12);
    for _ in 0..200 {
        let c = r.random_range(1..10);
        let z: Vec<f64> = (0..c).map(|_| r.random_range(-20.0..20.0)).collect();
        let y = r.random_range(0..c);
        let (loss, dz) = softmax_cross_entropy(&z, y).unwrap();
        assert!((loss - oracle_ce(&z, y)).abs() < 1e-6);
        let total: f64 = z.iter().map(|x| x.exp()).sum();
        for (k, g) in dz.iter().enumerate() {
            let want = z[k].exp() / total - if k == y { 1.0 } else { 0.0 };
            assert!((g - want).abs() < 1e-9);
        }
    }
}

#[test]
fn cross_entropy_survives_huge_logits() {
    let (loss, dz) = softmax_cross_entropy(&[1000.0f32, 0.0, -1000.0], 0).unwrap();
    assert_eq!(loss, 0.0);
    assert!(dz.iter().all(|g| g.is_finite()));
    let (loss, _) = softmax_cross_entropy(&[1000.0f32, 0.0], 1).unwrap();
    assert!((loss - 1000.0).abs() < 1e-3);
}

#[test]
fn per_class_accuracy_matches_tally() {
    let mut r = rng(13);
    for _ in 0..50 {
        let pairs: Vec<(usize, usize)> = (0..r.random_range(1..80))
            .map(|_| (r.random_range(0..4), r.random_range(0..4)))
            .collect();
        let subset: BTreeSet<usize> = pairs.iter().map(|p| p.1).collect();
        let mut correct = [0usize; 4];
        let mut total = [0usize; 4];
        for &(p, t) in &pairs {
            total[t] += 1;
            if p == t {
                correct[t] += 1;
            }
        }
        let mut sum = 0.0;
        for &c in &subset {
            sum += correct[c] as f64 / total[c] as f64;
        }
        let want = sum / subset.len() as f64;
        assert!((per_class_top1(&pairs, &subset).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn per_class_accuracy_is_not_per_image() {
    let mut pairs = vec![(0, 0); 10];
    pairs.extend(vec![(0, 1); 30]);
    let subset: BTreeSet<usize> = [0, 1].into();
    assert_eq!(per_class_top1(&pairs, &subset).unwrap(), 0.5);
}

#[test]
fn two_class_prediction_follows_offset_rule() {
    let mut r = rng(14);
    let seen = [true, false];
    for _ in 0..500 {
        let z = [r.random_range(-3.0f32..3.0), r.random_range(-3.0f32..3.0)];
        let gamma = r.random_range(0.0..2.0);
        let shifted = z[0] as f64 - gamma;
        let want = if shifted >= z[1] as f64 { 0 } else { 1 };
        assert_eq!(
            predict_from_logits(&z, &seen, gamma),
            want,
            "{z:?} gamma {gamma}"
        );
    }
}

#[test]
fn predict_returns_class_ids_in_joint_space() {
    // One attribute per class; the image strongly expresses attribute 2.
    let attrs = Matrix::<f32>::identity(3);
    let clf = Classifier::joint(&attrs).unwrap();
    let w = Matrix::<f32>::identity(3);
    let mut v = FeatureMap::<f32>::zeros(2, 3);
    v.at_mut(3)[2] = 5.0;
    let seen = [true, true, false];
    let got = predict(&w, &clf, &seen, &v, PoolingConfig::SELAR, 0.0).unwrap();
    assert_eq!(got, 2);
    assert!(predict(&w, &clf, &seen[..2], &v, PoolingConfig::SELAR, 0.0).is_err());
}

#[test]
fn top_attributes_match_full_sort() {
    let mut r = rng(15);
    for _ in 0..100 {
        let l = r.random_range(1..20);
        // Coarse values force ties.
        let row: Vec<f32> = (0..l).map(|_| r.random_range(0..5) as f32 * 0.25).collect();
        let k = r.random_range(1..=l);
        let mut order: Vec<(f32, usize)> = row.iter().copied().zip(0..).collect();
        order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<usize> = order.iter().take(k).map(|p| p.1).collect();
        assert_eq!(top_attributes(&row, k).unwrap(), want);
    }
    assert!(top_attributes(&[1.0, 2.0], 0).is_err());
    assert!(top_attributes(&[1.0, 2.0], 3).is_err());
}

#[test]
fn upsampling_matches_closed_form() {
    // A 2x2 map upsampled to 3x3 with aligned corners: centre is the mean.
    let h = Heatmap::from_raw(2, &[0.0, 1.0, 2.0, 4.0], MapSource::Attribute(0)).unwrap();
    let up = upsample_bilinear(&h, 3).unwrap();
    let n = |x: f32| x / 4.0;
    let want = [
        n(0.0),
        n(0.5),
        n(1.0),
        n(1.0),
        n(1.75),
        n(2.5),
        n(2.0),
        n(3.0),
        n(4.0),
    ];
    for (a, b) in up.values.iter().zip(want) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    // Identity when sizes match, and corners are always preserved.
    assert_eq!(upsample_bilinear(&h, 2).unwrap().values, h.values);
    let big = upsample_bilinear(&h, 17).unwrap();
    assert_eq!(big.get(0, 0), h.get(0, 0));
    assert_eq!(big.get(16, 16), h.get(1, 1));
    assert!(upsample_bilinear(&h, 1).is_err());
}
