//! Graph construction and aggregation against exhaustive references.

mod common;

use std::sync::Arc;

use common::{
    exhaustive_knn, max_abs_diff, monolithic_plane_gcn, naive_aggregate, naive_depth_gcn,
    pixel_vec, NaiveEcc,
};
use ridnet_core::autodiff::Tape;
use ridnet_core::graph::{
    build_depth_edges, build_plane_edges, depth_gcn, ecc_aggregate, edge_weights, knn_neighbors,
    plane_gcn, EccParams, GraphConfig, ThetaMode,
};
use ridnet_core::rng::{seeded, uniform_tensor};
use ridnet_core::tensor::Tensor;

#[test]
fn knn_matches_exhaustive_sort_on_200_maps() {
    let mut rng = seeded(100);
    for trial in 0..200u64 {
        let h = 6 + (trial % 7) as usize;
        let w = 6 + ((trial * 5) % 7) as usize;
        let c = 1 + (trial % 3) as usize;
        let k = 2 + (trial % 7) as usize;
        let map: Tensor<f64> = uniform_tensor(&mut rng, &[c, h, w], 0.0, 1.0);
        let cfg = GraphConfig {
            k,
            ..GraphConfig::default()
        };
        let edges = build_plane_edges(&map, &cfg).unwrap();
        for r in 0..h {
            for col in 0..w {
                let want = exhaustive_knn(&map, (r, col), cfg.d, k);
                let got_single = knn_neighbors(&map, (r, col), &cfg).unwrap();
                assert_eq!(got_single, want, "trial {trial} pixel ({r},{col})");
                let entry = edges.entry(r * w + col);
                assert_eq!(entry.indices, &want[..], "edge set at ({r},{col})");
            }
        }
    }
}

#[test]
fn edge_weights_sum_to_one_on_every_pixel() {
    let mut rng = seeded(101);
    for trial in 0..20 {
        let map: Tensor<f64> = uniform_tensor(&mut rng, &[2, 10, 10], 0.0, 1.0);
        let edges = build_plane_edges(&map, &GraphConfig::default()).unwrap();
        for p in 0..100 {
            let s: f64 = edges.entry(p).weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "trial {trial} pixel {p}: {s}");
        }
    }
}

#[test]
fn softmax_shift_invariance_100_instances() {
    let mut rng = seeded(102);
    for trial in 0..100 {
        let n = 2 + trial % 9;
        let d: Tensor<f64> = uniform_tensor(&mut rng, &[n], 0.0, 3.0);
        let shift = (trial as f64) * 0.07 + 0.1;
        let shifted: Vec<f64> = d.data().iter().map(|&x| x + shift).collect();
        let a = edge_weights(d.data()).unwrap();
        let b = edge_weights(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "trial {trial}");
        }
    }
}

#[test]
fn ecc_matches_naive_aggregation_loop() {
    let mut rng = seeded(103);
    for trial in 0..30 {
        let c = 2 + trial % 3;
        let full = trial % 2 == 0;
        let mode = if full {
            ThetaMode::Full
        } else {
            ThetaMode::Diagonal
        };
        let map: Tensor<f64> = uniform_tensor(&mut rng, &[c, 9, 9], 0.0, 1.0);
        let cfg = GraphConfig {
            k: 2 + trial % 6,
            theta: mode,
            ..GraphConfig::default()
        };
        let edges = build_plane_edges(&map, &cfg).unwrap();
        let params = EccParams::<f64>::init(&mut seeded(trial as u64), c, 5, mode);
        let center = (3 * 9 + 4 + trial) % 81;
        let got = ecc_aggregate(center, &edges, &map, &params).unwrap();
        let naive = NaiveEcc {
            w1: &params.w1,
            b1: &params.b1,
            w2: &params.w2,
            b2: &params.b2,
            bias: &params.bias,
            full,
        };
        let center_vec = pixel_vec(&map, center / 9, center % 9);
        let neighbor_vecs: Vec<Vec<f64>> = edges
            .entry(center)
            .indices
            .iter()
            .map(|&p| pixel_vec(&map, p / 9, p % 9))
            .collect();
        let want = naive_aggregate(&center_vec, &neighbor_vecs, &naive);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "trial {trial}");
        }
    }
}

#[test]
fn ecc_permutation_invariance_100_instances() {
    use rand::seq::SliceRandom;
    let mut rng = seeded(104);
    for trial in 0..100u64 {
        let c = 2 + (trial % 3) as usize;
        let mode = if trial % 2 == 0 {
            ThetaMode::Full
        } else {
            ThetaMode::Diagonal
        };
        let map: Tensor<f64> = uniform_tensor(&mut rng, &[c, 9, 9], 0.0, 1.0);
        let cfg = GraphConfig {
            k: 5,
            theta: mode,
            ..GraphConfig::default()
        };
        let mut edges = build_plane_edges(&map, &cfg).unwrap();
        let params = EccParams::<f64>::init(&mut seeded(trial), c, 4, mode);
        let center = 40;
        let before = ecc_aggregate(center, &edges, &map, &params).unwrap();

        // permute that center's neighbor list in place
        let range = edges.segments.range(center);
        let mut perm: Vec<usize> = edges.indices[range.clone()].to_vec();
        perm.shuffle(&mut seeded(trial + 1000));
        let mut indices = (*edges.indices).clone();
        indices[range].copy_from_slice(&perm);
        edges.indices = Arc::new(indices);

        let after = ecc_aggregate(center, &edges, &map, &params).unwrap();
        assert!(
            before.max_abs_diff(&after) < 1e-12,
            "trial {trial}: {}",
            before.max_abs_diff(&after)
        );
    }
}

#[test]
fn plane_gcn_matches_monolithic_reference_16x16() {
    let mut rng = seeded(105);
    for (trial, &mode) in [ThetaMode::Full, ThetaMode::Diagonal].iter().enumerate() {
        let c = 3;
        let map: Tensor<f64> = uniform_tensor(&mut rng, &[c, 16, 16], 0.0, 1.0);
        let cfg = GraphConfig {
            k: 6,
            theta: mode,
            ..GraphConfig::default()
        };
        let params = EccParams::<f64>::init(&mut seeded(50 + trial as u64), c, 6, mode);
        let mut tape = Tape::new();
        let id = tape.constant(map.clone());
        let ecc = params.bind(&mut tape, false);
        let (out, _) = plane_gcn(&mut tape, id, &cfg, &ecc).unwrap();
        let got = tape.value(out).clone();
        let naive = NaiveEcc {
            w1: &params.w1,
            b1: &params.b1,
            w2: &params.w2,
            b2: &params.b2,
            bias: &params.bias,
            full: mode == ThetaMode::Full,
        };
        let want = monolithic_plane_gcn(&map, cfg.d, cfg.k, &naive);
        let diff = max_abs_diff(&got, &want);
        assert!(diff < 1e-10, "mode {mode:?}: max diff {diff}");
    }
}

#[test]
fn depth_gcn_matches_naive_per_pixel_loop() {
    let mut rng = seeded(106);
    for trial in 0..10u64 {
        let c = 2 + (trial % 3) as usize;
        let mode = if trial % 2 == 0 {
            ThetaMode::Full
        } else {
            ThetaMode::Diagonal
        };
        let stack: Tensor<f64> = uniform_tensor(&mut rng, &[3, c, 6, 6], 0.0, 1.0);
        let params = EccParams::<f64>::init(&mut seeded(60 + trial), c, 4, mode);
        let mut tape = Tape::new();
        let id = tape.constant(stack.clone());
        let ecc = params.bind(&mut tape, false);
        let out = depth_gcn(&mut tape, id, &ecc).unwrap();
        let got = tape.value(out).clone();
        let naive = NaiveEcc {
            w1: &params.w1,
            b1: &params.b1,
            w2: &params.w2,
            b2: &params.b2,
            bias: &params.bias,
            full: mode == ThetaMode::Full,
        };
        let want = naive_depth_gcn(&stack, &naive);
        let diff = max_abs_diff(&got, &want);
        assert!(diff < 1e-10, "trial {trial}: max diff {diff}");
    }
}

#[test]
fn depth_edges_weights_sum_to_one() {
    let mut rng = seeded(107);
    let stack: Tensor<f64> = uniform_tensor(&mut rng, &[3, 4, 8, 8], 0.0, 1.0);
    let edges = build_depth_edges(&stack).unwrap();
    for p in 0..64 {
        let s: f64 = edges.entry(p).weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn plane_gcn_locality_outside_window_has_no_effect() {
    // perturbing a pixel outside the d x d window of a center must not
    // change that center's output at all
    let mut rng = seeded(108);
    let c = 2;
    let map: Tensor<f64> = uniform_tensor(&mut rng, &[c, 16, 16], 0.0, 1.0);
    let cfg = GraphConfig {
        k: 5,
        ..GraphConfig::default()
    };
    let params = EccParams::<f64>::init(&mut seeded(70), c, 4, ThetaMode::Full);

    let run = |m: &Tensor<f64>| -> Tensor<f64> {
        let mut tape = Tape::new();
        let id = tape.constant(m.clone());
        let ecc = params.bind(&mut tape, false);
        let (out, _) = plane_gcn(&mut tape, id, &cfg, &ecc).unwrap();
        tape.value(out).clone()
    };
    let base = run(&map);

    // center (2,2); with d = 9 the window spans rows/cols 0..=6, so
    // (15,15) is far outside
    let mut data = map.to_vec();
    for ch in 0..c {
        data[ch * 256 + 15 * 16 + 15] += 0.5;
    }
    let perturbed = run(&Tensor::from_vec(&[c, 16, 16], data).unwrap());
    let center_pixel = 2 * 16 + 2;
    for ch in 0..c {
        let a = base.data()[ch * 256 + center_pixel];
        let b = perturbed.data()[ch * 256 + center_pixel];
        assert_eq!(a, b, "center output changed with an out-of-window edit");
    }
}
