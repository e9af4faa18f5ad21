mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use selar::attribute_maps::raw_cam;
use selar::evaluator::{self, calibrate_scores, gamma_grid, harmonic_mean, ScoredImage};
use selar::feature_store::{open_store, synthesize_dataset, SynthSpec};
use selar::semantic_head::{backward, forward, forward_retaining, pool};
use selar::trainer::{batch_gradient, init_weights, seen_classifier, softmax_cross_entropy};
use selar::{FeatureMap, PoolMethod, PoolSpace, PoolingConfig};

fn instance() -> impl Strategy<Value = Instance> {
    (
        1usize..=5,
        1usize..=12,
        1usize..=8,
        1usize..=6,
        any::<u64>(),
    )
        .prop_map(|(m, d, l, c, seed)| random_instance(&mut rng(seed), m, d, l, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn gap_logits_do_not_depend_on_space(inst in instance()) {
        let (v, w, clf) = (inst.feature_map(), inst.weights(), inst.classifier());
        let z: Vec<Vec<f64>> = [PoolSpace::Visual, PoolSpace::Attribute, PoolSpace::Class]
            .into_iter()
            .map(|s| forward(&w, &clf, &v, PoolingConfig::new(PoolMethod::Gap, s)).unwrap().logits)
            .collect();
        for other in &z[1..] {
            for (a, b) in z[0].iter().zip(other) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn max_pooling_dominates_average_pooling(inst in instance()) {
        let local = selar::semantic_head::project_local(&inst.weights(), &inst.feature_map()).unwrap();
        let gmp = pool(&local, PoolMethod::Gmp).values;
        let gap = pool(&local, PoolMethod::Gap).values;
        for (mx, avg) in gmp.iter().zip(&gap) {
            prop_assert!(mx + 1e-12 >= *avg);
        }
    }

    #[test]
    fn logits_scale_with_positive_feature_scaling(inst in instance(), alpha in 0.1f64..10.0) {
        let (w, clf) = (inst.weights(), inst.classifier());
        let v = inst.feature_map();
        let scaled = FeatureMap::new(v.side(), v.depth(), v.as_slice().iter().map(|x| x * alpha).collect()).unwrap();
        for cfg in all_configs() {
            let a = forward(&w, &clf, &v, cfg).unwrap();
            let b = forward(&w, &clf, &scaled, cfg).unwrap();
            for (x, y) in a.logits.iter().zip(&b.logits) {
                prop_assert!((x * alpha - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
            prop_assert_eq!(a.argmax_locations, b.argmax_locations);
        }
    }

    #[test]
    fn max_pooling_gradient_touches_only_argmax_features(inst in instance(), space_ix in 0usize..3) {
        let space = [PoolSpace::Visual, PoolSpace::Attribute, PoolSpace::Class][space_ix];
        let cfg = PoolingConfig::new(PoolMethod::Gmp, space);
        let (v, w, clf) = (inst.feature_map(), inst.weights(), inst.classifier());
        let trace = forward(&w, &clf, &v, cfg).unwrap();
        let (_, dz) = softmax_cross_entropy(&trace.logits, inst.label).unwrap();
        let grad = backward(&trace, &v, &clf, &dz).unwrap();
        // Backward reads features only at the recorded argmax locations.
        let winners: BTreeSet<usize> = trace.argmax_locations.clone().unwrap().into_iter().collect();
        let mut poked = v.clone();
        for loc in 0..v.locations() {
            if !winners.contains(&loc) {
                for x in poked.at_mut(loc) {
                    *x = *x * -3.0 + 7.0;
                }
            }
        }
        let grad2 = backward(&trace, &poked, &clf, &dz).unwrap();
        prop_assert_eq!(grad.as_slice(), grad2.as_slice());
    }

    #[test]
    fn cam_is_linear_in_the_class_row(inst in instance(), s in -3.0f32..3.0, t in -3.0f32..3.0) {
        let (v, w, clf) = (inst.feature_map_f32(), inst.weights().cast::<f32>(), inst.classifier().cast::<f32>());
        let trace = forward_retaining(&w, &clf, &v, PoolingConfig::SELAR, true).unwrap();
        let local = trace.local_semantic.unwrap();
        let l = inst.l();
        let p: Vec<f32> = (0..l).map(|i| (i as f32 * 0.37).sin()).collect();
        let q: Vec<f32> = (0..l).map(|i| (i as f32 * 1.3).cos()).collect();
        let mix: Vec<f32> = p.iter().zip(&q).map(|(a, b)| s * a + t * b).collect();
        let (cp, cq, cm) = (raw_cam(&local, &p).unwrap(), raw_cam(&local, &q).unwrap(), raw_cam(&local, &mix).unwrap());
        for i in 0..cm.len() {
            let want = s as f64 * cp[i] as f64 + t as f64 * cq[i] as f64;
            prop_assert!((cm[i] as f64 - want).abs() <= 1e-4 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn harmonic_mean_identities(u in 0.0f64..100.0, s in 0.0f64..100.0) {
        let h = harmonic_mean(u, s);
        prop_assert!((h - harmonic_mean(s, u)).abs() < 1e-12);
        prop_assert!(h <= u.max(s) + 1e-12);
        prop_assert!(h + 1e-9 >= u.min(s));
        prop_assert!((harmonic_mean(u, u) - u).abs() < 1e-9);
        if u == 0.0 || s == 0.0 {
            prop_assert_eq!(h, 0.0);
        }
        match evaluator::s_over_u(u, s) {
            Some(r) => prop_assert!((r * u - s).abs() < 1e-9 * (1.0 + s)),
            None => prop_assert_eq!(u, 0.0),
        }
    }

    #[test]
    fn calibration_sweep_is_monotone(seed in any::<u64>(), n_seen_cls in 1usize..4, n_unseen_cls in 1usize..4) {
        let mut r = rng(seed);
        let c = n_seen_cls + n_unseen_cls;
        let seen: Vec<bool> = (0..c).map(|k| k < n_seen_cls).collect();
        let mut make = |classes: std::ops::Range<usize>| -> Vec<ScoredImage> {
            (0..24)
                .map(|i| {
                    use rand::Rng;
                    ScoredImage {
                        index: i,
                        label: classes.start + i % classes.len(),
                        logits: (0..c).map(|_| r.random_range(-2.0f32..2.0)).collect(),
                    }
                })
                .collect()
        };
        let val_seen = make(0..n_seen_cls);
        let val_unseen = make(n_seen_cls..c);
        let all: Vec<ScoredImage> = val_seen.iter().chain(&val_unseen).cloned().collect();
        let grid = gamma_grid(&all, 41);
        let res = calibrate_scores(&val_unseen, &val_seen, &seen, &grid).unwrap();
        for pair in res.sweep.windows(2) {
            prop_assert!(pair[1].1.acc_s <= pair[0].1.acc_s);
            prop_assert!(pair[1].1.acc_u >= pair[0].1.acc_u);
        }
        let best = res.sweep.iter().map(|(_, m)| m.h).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(res.metrics_at_gamma.h, best);
        let first = res.sweep.iter().find(|(_, m)| m.h == best).unwrap().0;
        prop_assert_eq!(res.gamma, first);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn store_round_trip_is_bit_exact(seed in any::<u64>(), m in 1usize..4, l in 1usize..5) {
        let spec = SynthSpec {
            spatial_size: m,
            feature_depth: l * 2,
            num_attributes: l,
            num_classes: 4,
            per_class_count: 3,
            num_seen: 2,
            ..SynthSpec::default()
        };
        let ds = synthesize_dataset(&spec, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let store = open_store(dir.path()).unwrap();
        prop_assert_eq!(store.features.len(), ds.features.len());
        prop_assert_eq!(store.features.labels(), ds.features.labels());
        for i in 0..ds.features.len() {
            let a = ds.features.get(i).unwrap();
            let b = store.features.get(i).unwrap();
            let bits = |f: &FeatureMap<f32>| f.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a), bits(&b));
        }
        prop_assert_eq!(store.attributes, ds.attributes);
        prop_assert_eq!(store.splits, ds.splits);
    }

    #[test]
    fn batch_gradient_is_mean_of_example_gradients(seed in any::<u64>(), cfg_ix in 0usize..6, n in 1usize..30) {
        let spec = SynthSpec {
            spatial_size: 3,
            feature_depth: 12,
            num_attributes: 6,
            num_classes: 6,
            per_class_count: 8,
            num_seen: 4,
            ..SynthSpec::default()
        };
        let ds = synthesize_dataset(&spec, seed).unwrap();
        let clf = seen_classifier(&ds.attributes, &ds.splits).unwrap();
        let w = init_weights(6, 12, seed, 1.0);
        let cfg = all_configs()[cfg_ix];
        let idx: Vec<usize> = ds.splits.train_indices.iter().copied().take(n).collect();
        let (loss, grad, _) = batch_gradient(&w, &clf, &ds.features, &idx, cfg).unwrap();
        let clf64 = clf.cast::<f64>();
        let w64 = w.cast::<f64>();
        let mut sum = vec![0.0f64; grad.as_slice().len()];
        let mut loss_sum = 0.0;
        for &i in &idx {
            let (v, y) = ds.features.example(i).unwrap();
            let v = v.cast::<f64>();
            let trace = forward(&w64, &clf64, &v, cfg).unwrap();
            let (l, dz) = softmax_cross_entropy(&trace.logits, clf64.position(y).unwrap()).unwrap();
            loss_sum += l;
            let g = backward(&trace, &v, &clf64, &dz).unwrap();
            for (s, x) in sum.iter_mut().zip(g.as_slice()) {
                *s += x;
            }
        }
        let k = idx.len() as f64;
        prop_assert!((loss - loss_sum / k).abs() <= 1e-5 * (1.0 + loss.abs()));
        let mean: Vec<f64> = sum.iter().map(|s| s / k).collect();
        let got: Vec<f64> = grad.as_slice().iter().map(|&x| x as f64).collect();
        let scale = mean.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        for (g, m) in got.iter().zip(&mean) {
            prop_assert!((g - m).abs() <= 1e-5 * scale, "{} vs {}", g, m);
        }
    }
}
