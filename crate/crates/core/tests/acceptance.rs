//! Acceptance suite. One test per criterion; each prints a PASS line
//! with its headline numbers once its assertions hold.

mod common;

use std::sync::Arc;
use std::time::Instant;

use common::{
    exhaustive_knn, max_abs_diff, monolithic_plane_gcn, naive_depth_gcn, pixel_vec, NaiveEcc,
};
use ridnet_core::audit::{audit_model, audit_ops};
use ridnet_core::autodiff::Tape;
use ridnet_core::data::{
    extract_patches, generate_phantom, insert_poisson_noise, NoiseConfig, PatchConfig,
    PatchSample, WindowSpec,
};
use ridnet_core::gradcheck::grad_check;
use ridnet_core::graph::{
    build_plane_edges, depth_gcn, ecc_aggregate, edge_weights, plane_gcn, EccParams, GraphConfig,
    ThetaMode,
};
use ridnet_core::metrics::{glcm_features, psnr, ssim, ConfigEcho, GlcmConfig, SsimConfig};
use ridnet_core::model::{block_forward, embed_block, GeneratorParams, ModelConfig};
use ridnet_core::pipeline::{evaluate_patches, noisy_baseline};
use ridnet_core::rng::{seeded, uniform_tensor};
use ridnet_core::sweep::{run_sweep, SweepAxis, SweepSpec};
use ridnet_core::tensor::Tensor;
use ridnet_core::train::{
    critic_input_gradient, critic_value, discriminator_loss, train, CriticConfig,
    DiscriminatorParams, LossMode, TrainConfig,
};

fn desk_patches(count: usize, extra: usize, patch: usize) -> Vec<PatchSample<f32>> {
    let mut samples = Vec::new();
    let mut volume_seed = 0u64;
    while samples.len() < count + extra {
        let clean = generate_phantom(100 + volume_seed, (9, 128, 128)).unwrap();
        let noisy =
            insert_poisson_noise(&clean, 0.25, &NoiseConfig::default(), 200 + volume_seed).unwrap();
        samples.extend(
            extract_patches::<f32>(
                &noisy,
                &clean,
                WindowSpec::abdomen(),
                &PatchConfig {
                    patch,
                    ..PatchConfig::default()
                },
            )
            .unwrap(),
        );
        volume_seed += 1;
    }
    samples.truncate(count + extra);
    samples
}

#[test]
fn criterion_1_gradient_audit() {
    let started = Instant::now();
    for seed in 0..20 {
        for r in audit_ops(seed).unwrap() {
            assert!(
                r.max_rel_error < 1e-5,
                "op {} at seed {seed}: {:.3e}",
                r.name,
                r.max_rel_error
            );
        }
    }
    // full generator: 8x8 toy, 4 channels, K = 4, 1 block
    let model = audit_model(5).unwrap();
    for r in &model {
        assert!(r.max_rel_error < 1e-4, "{}: {:.3e}", r.name, r.max_rel_error);
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 120,
        "gradient audit took {elapsed:?}, budget is 2 min"
    );
    println!(
        "criterion 1 (gradient audit, ops over 20 seeds + generator end-to-end, {:.1}s): PASS",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_2_graph_oracles() {
    let started = Instant::now();
    let mut rng = seeded(2000);

    // KNN vs exhaustive sort on 200 random maps, exact
    for trial in 0..200u64 {
        let h = 6 + (trial % 7) as usize;
        let w = 6 + ((trial * 3) % 7) as usize;
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
                assert_eq!(
                    edges.entry(r * w + col).indices,
                    &want[..],
                    "knn mismatch, trial {trial} pixel ({r},{col})"
                );
            }
        }
    }

    // ECC aggregation and both branch forwards vs naive references, 1e-10
    for (i, &mode) in [ThetaMode::Full, ThetaMode::Diagonal].iter().enumerate() {
        let c = 3;
        let map: Tensor<f64> = uniform_tensor(&mut rng, &[c, 16, 16], 0.0, 1.0);
        let cfg = GraphConfig {
            k: 6,
            theta: mode,
            ..GraphConfig::default()
        };
        let params = EccParams::<f64>::init(&mut seeded(77 + i as u64), c, 6, mode);
        let naive = NaiveEcc {
            w1: &params.w1,
            b1: &params.b1,
            w2: &params.w2,
            b2: &params.b2,
            bias: &params.bias,
            full: mode == ThetaMode::Full,
        };

        let edges = build_plane_edges(&map, &cfg).unwrap();
        let center = 7 * 16 + 9;
        let got = ecc_aggregate(center, &edges, &map, &params).unwrap();
        let center_vec = pixel_vec(&map, center / 16, center % 16);
        let neighbor_vecs: Vec<Vec<f64>> = edges
            .entry(center)
            .indices
            .iter()
            .map(|&p| pixel_vec(&map, p / 16, p % 16))
            .collect();
        let want = common::naive_aggregate(&center_vec, &neighbor_vecs, &naive);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "ecc_aggregate mode {mode:?}");
        }

        let mut tape = Tape::new();
        let id = tape.constant(map.clone());
        let ecc = params.bind(&mut tape, false);
        let (out, plane_edges) = plane_gcn(&mut tape, id, &cfg, &ecc).unwrap();
        let diff = max_abs_diff(tape.value(out), &monolithic_plane_gcn(&map, cfg.d, cfg.k, &naive));
        assert!(diff < 1e-10, "plane forward mode {mode:?}: {diff}");

        // softmax weights sum to one on every pixel
        for p in 0..256 {
            let s: f64 = plane_edges.entry(p).weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "weight sum at pixel {p}: {s}");
        }

        let stack: Tensor<f64> = uniform_tensor(&mut rng, &[3, c, 8, 8], 0.0, 1.0);
        let mut tape = Tape::new();
        let sid = tape.constant(stack.clone());
        let ecc = params.bind(&mut tape, false);
        let out = depth_gcn(&mut tape, sid, &ecc).unwrap();
        let diff = max_abs_diff(tape.value(out), &naive_depth_gcn(&stack, &naive));
        assert!(diff < 1e-10, "depth forward mode {mode:?}: {diff}");
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "graph oracles took {elapsed:?}, budget is 1 min");
    println!(
        "criterion 2 (graph oracles: 200-map KNN, ECC/plane/depth vs naive, weight sums, {:.1}s): PASS",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_3_fusion_and_replacement_identities() {
    // fusion endpoints, 1e-12
    let mut rng = seeded(3000);
    let nl: Tensor<f64> = uniform_tensor(&mut rng, &[4, 6, 6], -1.0, 1.0);
    let lo: Tensor<f64> = uniform_tensor(&mut rng, &[4, 6, 6], -1.0, 1.0);
    let cx: Tensor<f64> = uniform_tensor(&mut rng, &[4, 6, 6], -1.0, 1.0);
    let fuse_at = |alpha: f64| {
        let mut tape = Tape::<f64>::new();
        let n = tape.constant(nl.clone());
        let l = tape.constant(lo.clone());
        let c = tape.constant(cx.clone());
        let a = tape.constant(Tensor::scalar(alpha));
        let out = tape.fuse(n, l, c, a).unwrap();
        tape.value(out).clone()
    };
    assert!(max_abs_diff(&fuse_at(0.0), &cx) < 1e-12, "alpha=0 must yield the context branch");
    let mean = Tensor::from_vec(
        &[4, 6, 6],
        nl.data().iter().zip(lo.data()).map(|(&a, &b)| (a + b) / 2.0).collect(),
    )
    .unwrap();
    assert!(max_abs_diff(&fuse_at(1.0), &mean) < 1e-12, "alpha=1 must average the inner branches");

    // replacement conservation through every block of a 3-block model
    let cfg = ModelConfig {
        graph: GraphConfig {
            k: 4,
            ..GraphConfig::default()
        },
        blocks: 3,
        embed_channels: 6,
        feature_channels: 3,
        tail_channels: 2,
        ecc_hidden: 4,
    };
    let params = GeneratorParams::<f64>::init(cfg, 31).unwrap();
    let raw: Tensor<f64> = uniform_tensor(&mut seeded(3001), &[3, 8, 8], 0.0, 1.0);
    let mut tape = Tape::new();
    let mut stack = tape.constant(raw);
    let (vars, _) = params.bind(&mut tape, false);
    let plane = 3 * 8 * 8;
    for (b, block) in vars.blocks.iter().enumerate() {
        let embedded = embed_block(&mut tape, stack, block, &cfg, b == 0).unwrap();
        let (out, _) = block_forward(&mut tape, stack, block, &cfg, b == 0, None).unwrap();
        for slice in [0usize, 2] {
            assert_eq!(
                &tape.value(embedded).data()[slice * plane..(slice + 1) * plane],
                &tape.value(out).data()[slice * plane..(slice + 1) * plane],
                "block {b}: non-center slice {slice} not bit-identical"
            );
        }
        stack = out;
    }
    println!("criterion 3 (fusion endpoint identities at 1e-12, bit-identical pass-through in 3 blocks): PASS");
}

#[test]
fn criterion_4_shift_and_permutation_invariance() {
    use rand::seq::SliceRandom;
    let mut rng = seeded(4000);

    // softmax shift invariance, 100 instances, 1e-12
    for trial in 0..100 {
        let n = 2 + trial % 9;
        let d: Tensor<f64> = uniform_tensor(&mut rng, &[n], 0.0, 4.0);
        let shift = 0.05 + trial as f64 * 0.03;
        let a = edge_weights(d.data()).unwrap();
        let shifted: Vec<f64> = d.data().iter().map(|&x| x + shift).collect();
        let b = edge_weights(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "shift invariance, trial {trial}");
        }
    }

    // ECC permutation invariance, 100 instances, 1e-12
    for trial in 0..100u64 {
        let c = 2 + (trial % 3) as usize;
        let mode = if trial % 2 == 0 { ThetaMode::Full } else { ThetaMode::Diagonal };
        let map: Tensor<f64> = uniform_tensor(&mut rng, &[c, 9, 9], 0.0, 1.0);
        let cfg = GraphConfig {
            k: 5,
            theta: mode,
            ..GraphConfig::default()
        };
        let mut edges = build_plane_edges(&map, &cfg).unwrap();
        let params = EccParams::<f64>::init(&mut seeded(400 + trial), c, 4, mode);
        let center = (13 + trial as usize * 7) % 81;
        let before = ecc_aggregate(center, &edges, &map, &params).unwrap();
        let range = edges.segments.range(center);
        let mut perm: Vec<usize> = edges.indices[range.clone()].to_vec();
        perm.shuffle(&mut seeded(500 + trial));
        let mut indices = (*edges.indices).clone();
        indices[range].copy_from_slice(&perm);
        edges.indices = Arc::new(indices);
        let after = ecc_aggregate(center, &edges, &map, &params).unwrap();
        assert!(
            before.max_abs_diff(&after) < 1e-12,
            "permutation invariance, trial {trial}"
        );
    }
    println!("criterion 4 (shift + permutation invariance, 100 instances each at 1e-12): PASS");
}

#[test]
fn criterion_5_desk_denoising_gain() {
    let started = Instant::now();
    let samples = desk_patches(500, 60, 32);
    let (train_set, eval_set) = samples.split_at(500);

    let config = TrainConfig::desk();
    assert_eq!(config.model.blocks, 1);
    assert_eq!(config.model.feature_channels, 8);
    assert_eq!(config.model.graph.theta, ThetaMode::Diagonal);
    assert_eq!(config.model.graph.k, 4);
    assert_eq!(config.loss, LossMode::MseOnly);
    assert_eq!(config.epochs, 2);

    let dir = tempfile::tempdir().unwrap();
    let outcome = train(&config, train_set, &[], dir.path()).unwrap();

    let echo = ConfigEcho {
        k: config.model.graph.k,
        block_count: config.model.blocks,
        seed: config.seed,
        phi_seed: config.phi_seed,
        theta_mode: config.model.graph.theta,
    };
    let denoised = evaluate_patches(&outcome.generator, eval_set, echo).unwrap();
    let baseline = noisy_baseline(eval_set, echo).unwrap();
    let gain = denoised.aggregate.psnr_db - baseline.aggregate.psnr_db;
    assert!(
        gain >= 1.0,
        "PSNR gain {gain:.3} dB below 1.0 (noisy {:.3}, denoised {:.3})",
        baseline.aggregate.psnr_db,
        denoised.aggregate.psnr_db
    );
    assert!(
        denoised.aggregate.glcm_contrast_loss < baseline.aggregate.glcm_contrast_loss,
        "GLCM contrast loss did not decrease: {} vs {}",
        denoised.aggregate.glcm_contrast_loss,
        baseline.aggregate.glcm_contrast_loss
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 900, "desk run took {elapsed:?}, budget is 15 min");
    println!(
        "criterion 5 (desk gain: noisy {:.2} dB -> denoised {:.2} dB (+{:.2}), contrast loss {:.2} -> {:.2}, {:.0}s): PASS",
        baseline.aggregate.psnr_db,
        denoised.aggregate.psnr_db,
        gain,
        baseline.aggregate.glcm_contrast_loss,
        denoised.aggregate.glcm_contrast_loss,
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_6_wgan_gp_correctness() {
    // unit-norm linear critic: zero penalty within 1e-10
    let cfg = CriticConfig::linear((4, 4));
    let mut unit = DiscriminatorParams::<f64>::init(cfg.clone(), 1).unwrap();
    let mut w = vec![0.0; 16];
    w[2] = 0.28;
    w[7] = -0.96; // norm exactly 1
    unit.set_mut()
        .set("d.fc.weight", Tensor::from_vec(&[16, 1], w).unwrap())
        .unwrap();
    let mut rng = seeded(6000);
    let real: Vec<Tensor<f64>> = (0..4).map(|_| uniform_tensor(&mut rng, &[1, 4, 4], 0.0, 1.0)).collect();
    let fake: Vec<Tensor<f64>> = (0..4).map(|_| uniform_tensor(&mut rng, &[1, 4, 4], 0.0, 1.0)).collect();
    let with_pen = discriminator_loss(&real, &fake, &unit, 10.0, 9).unwrap();
    let without_pen = discriminator_loss(&real, &fake, &unit, 0.0, 9).unwrap();
    assert!(
        (with_pen - without_pen).abs() < 1e-10,
        "unit-norm penalty: {}",
        (with_pen - without_pen).abs()
    );

    // constant critic: penalty equals lambda_gp within 1e-10
    let mut constant = DiscriminatorParams::<f64>::init(cfg, 2).unwrap();
    constant.set_mut().set("d.fc.weight", Tensor::zeros(&[16, 1])).unwrap();
    constant.set_mut().set("d.fc.bias", Tensor::scalar(1.3)).unwrap();
    let loss = discriminator_loss(&real, &fake, &constant, 10.0, 11).unwrap();
    assert!((loss - 10.0).abs() < 1e-10, "constant-critic loss {loss}");

    // analytic interpolate-gradient norm vs finite differences, 1e-4
    let ccfg = CriticConfig {
        channels: vec![3, 4],
        input_hw: (8, 8),
    };
    let critic = DiscriminatorParams::<f64>::init(ccfg.clone(), 3).unwrap();
    let x_hat: Tensor<f64> = uniform_tensor(&mut rng, &[1, 8, 8], 0.1, 0.9);

    let mut tape = Tape::new();
    let (vars, _) = critic.bind(&mut tape, false);
    let xid = tape.constant(x_hat.clone());
    let g = critic_input_gradient(&mut tape, xid, &vars, &ccfg).unwrap();
    let analytic_norm: f64 = tape.value(g).data().iter().map(|v| v * v).sum::<f64>().sqrt();

    // coordinate-wise central differences of the critic score
    let check = grad_check(
        |t, ids| {
            let (vars, _) = critic.bind(t, false);
            critic_value(t, ids[0], &vars, &ccfg)
        },
        std::slice::from_ref(&x_hat),
        1e-4,
    )
    .unwrap();
    assert!(check.max_rel_error < 1e-5, "coordinate FD: {}", check.max_rel_error);
    let mut fd_sq = 0.0;
    for i in 0..x_hat.numel() {
        let eval = |v: f64| {
            let mut data = x_hat.to_vec();
            data[i] = v;
            let img = Tensor::from_vec(&[1, 8, 8], data).unwrap();
            critic.score(&img).unwrap()
        };
        let d = (eval(x_hat.data()[i] + 1e-4) - eval(x_hat.data()[i] - 1e-4)) / 2e-4;
        fd_sq += d * d;
    }
    let fd_norm = fd_sq.sqrt();
    let rel = (analytic_norm - fd_norm).abs() / fd_norm.max(1e-8);
    assert!(rel < 1e-4, "norm mismatch: analytic {analytic_norm} vs fd {fd_norm}");
    println!(
        "criterion 6 (WGAN-GP: unit-norm/constant critic penalties, gradient norm vs FD rel {rel:.2e}): PASS"
    );
}

#[test]
fn criterion_7_desk_determinism() {
    let started = Instant::now();
    // full desk configuration, two identical runs
    let samples = desk_patches(200, 0, 32);
    let config = TrainConfig::desk();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = train(&config, &samples, &[], dir_a.path()).unwrap();
    let b = train(&config, &samples, &[], dir_b.path()).unwrap();
    let blob_a = std::fs::read(a.final_checkpoint.with_extension("bin")).unwrap();
    let blob_b = std::fs::read(b.final_checkpoint.with_extension("bin")).unwrap();
    assert_eq!(blob_a, blob_b, "final checkpoints differ");
    let manifest_a = std::fs::read(a.final_checkpoint.with_extension("json")).unwrap();
    let manifest_b = std::fs::read(b.final_checkpoint.with_extension("json")).unwrap();
    assert_eq!(manifest_a, manifest_b, "manifests differ");
    let log_a = std::fs::read(&a.loss_log).unwrap();
    let log_b = std::fs::read(&b.loss_log).unwrap();
    assert_eq!(log_a, log_b, "loss logs differ");
    println!(
        "criterion 7 (two desk runs bit-identical: {} checkpoint bytes, {} log bytes, {:.0}s): PASS",
        blob_a.len(),
        log_a.len(),
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_8_sweep_harness() {
    let micro = TrainConfig {
        epochs: 1,
        batch_size: 4,
        model: ModelConfig {
            graph: GraphConfig {
                k: 4,
                theta: ThetaMode::Diagonal,
                ..GraphConfig::default()
            },
            blocks: 1,
            embed_channels: 6,
            feature_channels: 3,
            tail_channels: 2,
            ecc_hidden: 4,
        },
        ..TrainConfig::desk()
    };
    let base = SweepSpec {
        axis: SweepAxis::BlockCount,
        values: vec![1, 2, 3, 4, 5],
        train: micro.clone(),
        data_seed: 80,
        dims: (9, 64, 64),
        dose_fraction: 0.25,
        patch: 16,
        eval_fraction: 0.25,
    };
    let dir = tempfile::tempdir().unwrap();
    let blocks_table = run_sweep::<f32>(&base, &dir.path().join("blocks")).unwrap();
    assert_eq!(blocks_table.rows.len(), 5);

    let k_spec = SweepSpec {
        axis: SweepAxis::KNeighbors,
        values: vec![2, 4, 8, 12],
        ..base
    };
    let k_table = run_sweep::<f32>(&k_spec, &dir.path().join("k")).unwrap();
    assert_eq!(k_table.rows.len(), 4);

    for (name, table) in [("block_count", &blocks_table), ("k_neighbors", &k_table)] {
        for row in &table.rows {
            assert!(row.error.is_none(), "{name} value {} failed: {:?}", row.value, row.error);
            for v in [
                row.psnr_db,
                row.ssim,
                row.glcm_contrast_loss,
                row.glcm_dissimilarity_loss,
            ] {
                let v = v.expect("complete row");
                assert!(v.is_finite(), "{name} value {}: non-finite metric", row.value);
            }
            assert!(row.glcm_contrast_loss.unwrap() >= 0.0);
            assert!(row.glcm_dissimilarity_loss.unwrap() >= 0.0);
        }
        let csv = table.to_csv();
        assert_eq!(csv.trim().lines().count(), table.rows.len() + 1);
    }
    println!(
        "criterion 8 (sweep harness: block_count 1..5 and K in {{2,4,8,12}}, complete finite CSVs): PASS"
    );
}

#[test]
fn criterion_9_metric_oracles() {
    // PSNR: hand-computed MSE
    let mut rng = seeded(9000);
    let a: Tensor<f64> = uniform_tensor(&mut rng, &[8, 8], 0.0, 1.0);
    let b = a.map(|v| v + 0.1);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);

    // SSIM identity and bounds
    assert_eq!(ssim(&a, &a, &SsimConfig::default()).unwrap(), 1.0);

    // worked GLCM example reproduces exactly
    let img = Tensor::from_vec(&[2, 2], vec![0.0f64, 1.0, 0.0, 1.0]).unwrap();
    let f = glcm_features(
        &img,
        &GlcmConfig {
            levels: 2,
            offset: (0, 1),
            symmetric: false,
        },
    )
    .unwrap();
    assert_eq!(f.contrast, 1.0);
    assert_eq!(f.dissimilarity, 1.0);
    println!("criterion 9 (metric oracles incl. worked GLCM example contrast=1, dissimilarity=1): PASS");
}
