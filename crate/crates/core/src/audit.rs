//! Finite-difference audit suites over the differentiable operation set,
//! the model building blocks and the full generator.
//!
//! Every check builds a scalar probe function (a randomly weighted sum of
//! the operation output, so permutation mistakes cannot cancel) and
//! compares the reverse sweep against central differences in double
//! precision. Activation inputs are sampled away from the kinks.

use std::sync::Arc;

use crate::autodiff::{Padding, Segments, Tape, TensorId};
use crate::error::Result;
use crate::gradcheck::grad_check;
use crate::graph::{build_plane_edges, depth_gcn, plane_gcn_with_edges, EccParams, GraphConfig, ThetaMode};
use crate::model::{block_forward, generator_forward, generator_forward_frozen, GeneratorParams, ModelConfig};
use crate::params::BoundParams;
use crate::rng::{derive, seeded, uniform_tensor};
use crate::tensor::Tensor;
use crate::train::{critic_input_gradient, critic_value, CriticConfig, DiscriminatorParams, FeatureExtractor};

pub const OPS_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;
pub const AUDIT_EPSILON: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct AuditResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl AuditResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Formats results as an aligned table, one line per check.
pub fn format_table(results: &[AuditResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(8).max(8);
    let mut out = format!("{:width$}  {:>14}  {:>10}  status\n", "check", "max_rel_err", "tolerance");
    for r in results {
        out.push_str(&format!(
            "{:width$}  {:>14.3e}  {:>10.0e}  {}\n",
            r.name,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        ));
    }
    out
}

/// Sampler that keeps activation inputs away from the relu kink, so a
/// central difference never straddles it.
fn kink_free(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let raw: Tensor<f64> = uniform_tensor(rng, shape, 0.05, 1.0);
    let signs: Tensor<f64> = uniform_tensor(rng, shape, -1.0, 1.0);
    let data = raw
        .data()
        .iter()
        .zip(signs.data())
        .map(|(&m, &s)| if s >= 0.0 { m } else { -m })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Weighted sum of a tape value with fixed random weights.
fn probe(tape: &mut Tape<f64>, id: TensorId, weights: &Tensor<f64>) -> Result<TensorId> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(id, w)?;
    Ok(tape.sum(prod))
}

struct Check {
    name: &'static str,
    result: Result<crate::gradcheck::GradCheck>,
    tolerance: f64,
}

fn collect(checks: Vec<Check>) -> Result<Vec<AuditResult>> {
    let mut out = Vec::with_capacity(checks.len());
    for c in checks {
        let gc = c.result?;
        out.push(AuditResult {
            name: c.name.to_string(),
            max_rel_error: gc.max_rel_error,
            tolerance: c.tolerance,
        });
    }
    Ok(out)
}

/// Finite-difference checks of every differentiable tape operation.
pub fn audit_ops(seed: u64) -> Result<Vec<AuditResult>> {
    let mut rng = seeded(derive(seed, 0xa0, 0));
    let eps = AUDIT_EPSILON;
    let mut checks: Vec<Check> = Vec::new();
    let mut push = |name: &'static str, tol: f64, r: Result<crate::gradcheck::GradCheck>| {
        checks.push(Check {
            name,
            result: r,
            tolerance: tol,
        });
    };

    // elementwise
    {
        let a: Tensor<f64> = uniform_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let b: Tensor<f64> = uniform_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let w: Tensor<f64> = uniform_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        push(
            "add",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.add(ids[0], ids[1])?;
                    probe(t, y, &w)
                },
                &[a.clone(), b.clone()],
                eps,
            ),
        );
        push(
            "sub",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.sub(ids[0], ids[1])?;
                    probe(t, y, &w)
                },
                &[a.clone(), b.clone()],
                eps,
            ),
        );
        push(
            "mul",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.mul(ids[0], ids[1])?;
                    probe(t, y, &w)
                },
                &[a.clone(), b.clone()],
                eps,
            ),
        );
        push(
            "scale",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.scale(ids[0], 1.7);
                    probe(t, y, &w)
                },
                std::slice::from_ref(&a),
                eps,
            ),
        );
        push(
            "add_scalar",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.add_scalar(ids[0], -0.3);
                    probe(t, y, &w)
                },
                std::slice::from_ref(&a),
                eps,
            ),
        );
        let k = kink_free(&mut rng, &[3, 4]);
        push(
            "relu",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.relu(ids[0]);
                    probe(t, y, &w)
                },
                std::slice::from_ref(&k),
                eps,
            ),
        );
        push(
            "leaky_relu",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.leaky_relu(ids[0], 0.2)?;
                    probe(t, y, &w)
                },
                &[k],
                eps,
            ),
        );
    }

    // reductions
    {
        let a: Tensor<f64> = uniform_tensor(&mut rng, &[11], -1.0, 1.0);
        push(
            "sum",
            OPS_TOLERANCE,
            grad_check(|t, ids| Ok(t.sum(ids[0])), std::slice::from_ref(&a), eps),
        );
        push(
            "mean",
            OPS_TOLERANCE,
            grad_check(|t, ids| Ok(t.mean(ids[0])), std::slice::from_ref(&a), eps),
        );
        push(
            "l2_norm",
            OPS_TOLERANCE,
            grad_check(|t, ids| Ok(t.l2_norm(ids[0])), &[a], eps),
        );
    }

    // linear algebra
    {
        let a: Tensor<f64> = uniform_tensor(&mut rng, &[3, 5], -1.0, 1.0);
        let b: Tensor<f64> = uniform_tensor(&mut rng, &[5, 2], -1.0, 1.0);
        let w: Tensor<f64> = uniform_tensor(&mut rng, &[3, 2], -1.0, 1.0);
        push(
            "matmul",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.matmul(ids[0], ids[1])?;
                    probe(t, y, &w)
                },
                &[a, b],
                eps,
            ),
        );
        let x: Tensor<f64> = uniform_tensor(&mut rng, &[4, 3], -1.0, 1.0);
        let bias: Tensor<f64> = uniform_tensor(&mut rng, &[3], -1.0, 1.0);
        let w2: Tensor<f64> = uniform_tensor(&mut rng, &[4, 3], -1.0, 1.0);
        push(
            "add_row_bias",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.add_row_bias(ids[0], ids[1])?;
                    probe(t, y, &w2)
                },
                &[x, bias],
                eps,
            ),
        );
    }

    // convolution family
    for (name, padding) in [
        ("conv2d_reflect", Padding::Reflect),
        ("conv2d_zero", Padding::Zero),
        ("conv2d_none", Padding::None),
    ] {
        let x: Tensor<f64> = uniform_tensor(&mut rng, &[2, 6, 6], -1.0, 1.0);
        let k: Tensor<f64> = uniform_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let b: Tensor<f64> = uniform_tensor(&mut rng, &[3], -0.5, 0.5);
        let out_hw = if padding == Padding::None { 4 } else { 6 };
        let w: Tensor<f64> = uniform_tensor(&mut rng, &[3, out_hw, out_hw], -1.0, 1.0);
        push(
            name,
            OPS_TOLERANCE,
            grad_check(
                move |t, ids| {
                    let y = t.conv2d(ids[0], ids[1], Some(ids[2]), padding)?;
                    probe(t, y, &w)
                },
                &[x, k, b],
                eps,
            ),
        );
    }
    {
        let x: Tensor<f64> = uniform_tensor(&mut rng, &[2, 7, 7], -1.0, 1.0);
        let k: Tensor<f64> = uniform_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let b: Tensor<f64> = uniform_tensor(&mut rng, &[3], -0.5, 0.5);
        let w: Tensor<f64> = uniform_tensor(&mut rng, &[3, 4, 4], -1.0, 1.0);
        push(
            "conv2d_strided",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.conv2d_strided(ids[0], ids[1], Some(ids[2]), Padding::Zero, (2, 2))?;
                    probe(t, y, &w)
                },
                &[x, k, b],
                eps,
            ),
        );
        let gy: Tensor<f64> = uniform_tensor(&mut rng, &[3, 4, 4], -1.0, 1.0);
        let k2: Tensor<f64> = uniform_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let w2: Tensor<f64> = uniform_tensor(&mut rng, &[2, 7, 7], -1.0, 1.0);
        push(
            "conv2d_input_grad",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.conv2d_input_grad(ids[0], ids[1], Padding::Zero, (2, 2), (7, 7))?;
                    probe(t, y, &w2)
                },
                &[gy, k2],
                eps,
            ),
        );
    }
    for (name, padding) in [
        ("conv3d_reflect", Padding::Reflect),
        ("conv3d_none", Padding::None),
    ] {
        let x: Tensor<f64> = uniform_tensor(&mut rng, &[1, 3, 5, 5], -1.0, 1.0);
        let k: Tensor<f64> = uniform_tensor(&mut rng, &[2, 1, 3, 3, 3], -1.0, 1.0);
        let b: Tensor<f64> = uniform_tensor(&mut rng, &[2], -0.5, 0.5);
        let w = if padding == Padding::None {
            uniform_tensor(&mut rng, &[2, 1, 3, 3], -1.0, 1.0)
        } else {
            uniform_tensor(&mut rng, &[2, 3, 5, 5], -1.0, 1.0)
        };
        push(
            name,
            OPS_TOLERANCE,
            grad_check(
                move |t, ids| {
                    let y = t.conv3d(ids[0], ids[1], Some(ids[2]), padding)?;
                    probe(t, y, &w)
                },
                &[x, k, b],
                eps,
            ),
        );
    }
    {
        let x: Tensor<f64> = uniform_tensor(&mut rng, &[2, 6, 6], -1.0, 1.0);
        let w: Tensor<f64> = uniform_tensor(&mut rng, &[2, 3, 3], -1.0, 1.0);
        push(
            "avg_pool2",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.avg_pool2(ids[0])?;
                    probe(t, y, &w)
                },
                &[x],
                eps,
            ),
        );
    }

    // layout ops
    {
        let x: Tensor<f64> = uniform_tensor(&mut rng, &[3, 4, 2], -1.0, 1.0);
        let w: Tensor<f64> = uniform_tensor(&mut rng, &[4, 3, 2], -1.0, 1.0);
        push(
            "swap01",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.swap01(ids[0])?;
                    probe(t, y, &w)
                },
                std::slice::from_ref(&x),
                eps,
            ),
        );
        let w2: Tensor<f64> = uniform_tensor(&mut rng, &[8, 3], -1.0, 1.0);
        push(
            "pixels_to_rows",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.pixels_to_rows(ids[0])?;
                    probe(t, y, &w2)
                },
                std::slice::from_ref(&x),
                eps,
            ),
        );
        let rows: Tensor<f64> = uniform_tensor(&mut rng, &[8, 3], -1.0, 1.0);
        let w3: Tensor<f64> = uniform_tensor(&mut rng, &[3, 2, 4], -1.0, 1.0);
        push(
            "rows_to_pixels",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.rows_to_pixels(ids[0], 2, 4)?;
                    probe(t, y, &w3)
                },
                std::slice::from_ref(&rows),
                eps,
            ),
        );
        let w4: Tensor<f64> = uniform_tensor(&mut rng, &[24], -1.0, 1.0);
        push(
            "reshape",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.reshape(ids[0], &[24])?;
                    probe(t, y, &w4)
                },
                std::slice::from_ref(&x),
                eps,
            ),
        );
        let other: Tensor<f64> = uniform_tensor(&mut rng, &[5, 3], -1.0, 1.0);
        let w5: Tensor<f64> = uniform_tensor(&mut rng, &[13, 3], -1.0, 1.0);
        push(
            "concat_rows",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.concat_rows(&[ids[0], ids[1]])?;
                    probe(t, y, &w5)
                },
                &[rows, other],
                eps,
            ),
        );
        let w6: Tensor<f64> = uniform_tensor(&mut rng, &[4, 2], -1.0, 1.0);
        push(
            "slice_entry",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.slice_entry(ids[0], 1)?;
                    probe(t, y, &w6)
                },
                std::slice::from_ref(&x),
                eps,
            ),
        );
        let slice: Tensor<f64> = uniform_tensor(&mut rng, &[4, 2], -1.0, 1.0);
        let w7: Tensor<f64> = uniform_tensor(&mut rng, &[3, 4, 2], -1.0, 1.0);
        push(
            "replace_entry",
            OPS_TOLERANCE,
            grad_check(
                |t, ids| {
                    let y = t.replace_entry(ids[0], ids[1], 2)?;
                    probe(t, y, &w7)
                },
                &[x, slice],
                eps,
            ),
        );
    }

    // graph machinery
    {
        let source: Tensor<f64> = uniform_tensor(&mut rng, &[6, 3], -1.0, 1.0);
        let indices = Arc::new(vec![0usize, 2, 5, 1, 1, 4, 3]);
        let segments = Arc::new(Segments::from_offsets(vec![0, 3, 5, 7]).unwrap());
        let centers: Tensor<f64> = uniform_tensor(&mut rng, &[3, 3], -1.0, 1.0);
        let w: Tensor<f64> = uniform_tensor(&mut rng, &[7, 3], -1.0, 1.0);
        push(
            "gather_rows",
            OPS_TOLERANCE,
            grad_check(
                {
                    let indices = Arc::clone(&indices);
                    let w = w.clone();
                    move |t, ids| {
                        let y = t.gather_rows(ids[0], Arc::clone(&indices))?;
                        probe(t, y, &w)
                    }
                },
                std::slice::from_ref(&source),
                eps,
            ),
        );
        let we: Tensor<f64> = uniform_tensor(&mut rng, &[7], -1.0, 1.0);
        push(
            "pair_distance",
            OPS_TOLERANCE,
            grad_check(
                {
                    let indices = Arc::clone(&indices);
                    let segments = Arc::clone(&segments);
                    let we = we.clone();
                    move |t, ids| {
                        let n = t.gather_rows(ids[0], Arc::clone(&indices))?;
                        let e = t.pair_distance(ids[1], n, Arc::clone(&segments))?;
                        probe(t, e, &we)
                    }
                },
                &[source.clone(), centers.clone()],
                eps,
            ),
        );
        push(
            "segment_softmax_neg",
            OPS_TOLERANCE,
            grad_check(
                {
                    let segments = Arc::clone(&segments);
                    let we = we.clone();
                    move |t, ids| {
                        let sq = t.mul(ids[0], ids[0])?; // keep distances >= 0
                        let a = t.segment_softmax_neg(sq, Arc::clone(&segments))?;
                        probe(t, a, &we)
                    }
                },
                &[uniform_tensor(&mut rng, &[7], -1.0, 1.0)],
                eps,
            ),
        );
        let vals: Tensor<f64> = uniform_tensor(&mut rng, &[7, 3], -1.0, 1.0);
        let wm: Tensor<f64> = uniform_tensor(&mut rng, &[3, 3], -1.0, 1.0);
        push(
            "segment_mean",
            OPS_TOLERANCE,
            grad_check(
                {
                    let segments = Arc::clone(&segments);
                    move |t, ids| {
                        let m = t.segment_mean(ids[0], Arc::clone(&segments))?;
                        probe(t, m, &wm)
                    }
                },
                std::slice::from_ref(&vals),
                eps,
            ),
        );
        let mats: Tensor<f64> = uniform_tensor(&mut rng, &[7, 9], -1.0, 1.0);
        let wv: Tensor<f64> = uniform_tensor(&mut rng, &[7, 3], -1.0, 1.0);
        push(
            "edge_matvec",
            OPS_TOLERANCE,
            grad_check(
                move |t, ids| {
                    let y = t.edge_matvec(ids[0], ids[1])?;
                    probe(t, y, &wv)
                },
                &[mats, vals],
                eps,
            ),
        );
    }

    // fusion, alpha strictly inside (0, 1)
    {
        let nl: Tensor<f64> = uniform_tensor(&mut rng, &[2, 3, 3], -1.0, 1.0);
        let lo: Tensor<f64> = uniform_tensor(&mut rng, &[2, 3, 3], -1.0, 1.0);
        let cx: Tensor<f64> = uniform_tensor(&mut rng, &[2, 3, 3], -1.0, 1.0);
        let alpha = Tensor::scalar(0.37);
        let w: Tensor<f64> = uniform_tensor(&mut rng, &[2, 3, 3], -1.0, 1.0);
        push(
            "fuse",
            OPS_TOLERANCE,
            grad_check(
                move |t, ids| {
                    let y = t.fuse(ids[0], ids[1], ids[2], ids[3])?;
                    probe(t, y, &w)
                },
                &[nl, lo, cx, alpha],
                eps,
            ),
        );
    }

    collect(checks)
}

/// Finite-difference checks of the model building blocks: graph
/// branches, embedding, a whole block, the perceptual distance and the
/// critic's penalty path.
pub fn audit_blocks(seed: u64) -> Result<Vec<AuditResult>> {
    let mut rng = seeded(derive(seed, 0xa1, 0));
    let eps = AUDIT_EPSILON;
    let mut checks: Vec<Check> = Vec::new();

    // plane branch over a frozen topology, full and diagonal edge maps
    for (name, mode) in [
        ("plane_gcn_full", ThetaMode::Full),
        ("plane_gcn_diagonal", ThetaMode::Diagonal),
    ] {
        let cfg = GraphConfig {
            k: 4,
            theta: mode,
            ..GraphConfig::default()
        };
        let map: Tensor<f64> = uniform_tensor(&mut rng, &[3, 7, 7], -1.0, 1.0);
        let edges = build_plane_edges(&map, &cfg)?;
        let params = EccParams::<f64>::init(&mut rng, 3, 4, mode);
        let w: Tensor<f64> = uniform_tensor(&mut rng, &[3, 7, 7], -1.0, 1.0);
        let inputs = vec![
            map,
            params.w1.clone(),
            params.b1.clone(),
            params.w2.clone(),
            params.b2.clone(),
            params.bias.clone(),
        ];
        checks.push(Check {
            name,
            tolerance: MODEL_TOLERANCE,
            result: grad_check(
                move |t, ids| {
                    let ecc = crate::graph::EccVars {
                        w1: ids[1],
                        b1: ids[2],
                        w2: ids[3],
                        b2: ids[4],
                        bias: ids[5],
                        mode,
                    };
                    let y = plane_gcn_with_edges(t, ids[0], &edges, &ecc)?;
                    probe(t, y, &w)
                },
                &inputs,
                eps,
            ),
        });
    }

    // depth branch (topology is data-independent)
    {
        let mode = ThetaMode::Full;
        let stack: Tensor<f64> = uniform_tensor(&mut rng, &[3, 2, 5, 5], -1.0, 1.0);
        let params = EccParams::<f64>::init(&mut rng, 2, 4, mode);
        let w: Tensor<f64> = uniform_tensor(&mut rng, &[2, 5, 5], -1.0, 1.0);
        let inputs = vec![
            stack,
            params.w1.clone(),
            params.b1.clone(),
            params.w2.clone(),
            params.b2.clone(),
            params.bias.clone(),
        ];
        checks.push(Check {
            name: "depth_gcn",
            tolerance: MODEL_TOLERANCE,
            result: grad_check(
                move |t, ids| {
                    let ecc = crate::graph::EccVars {
                        w1: ids[1],
                        b1: ids[2],
                        w2: ids[3],
                        b2: ids[4],
                        bias: ids[5],
                        mode,
                    };
                    let y = depth_gcn(t, ids[0], &ecc)?;
                    probe(t, y, &w)
                },
                &inputs,
                eps,
            ),
        });
    }

    // one whole block over a frozen topology
    {
        let cfg = ModelConfig {
            graph: GraphConfig {
                k: 4,
                ..GraphConfig::default()
            },
            blocks: 1,
            embed_channels: 4,
            feature_channels: 2,
            tail_channels: 2,
            ecc_hidden: 3,
        };
        let gen = GeneratorParams::<f64>::init(cfg, derive(seed, 0xa2, 0))?;
        let raw: Tensor<f64> = uniform_tensor(&mut rng, &[3, 7, 7], 0.0, 1.0);
        // capture the base-point topology
        let edges = {
            let mut tape = Tape::new();
            let input = tape.constant(raw.clone());
            let (vars, _) = gen.bind(&mut tape, false);
            let (_, edges) = block_forward(&mut tape, input, &vars.blocks[0], &cfg, true, None)?;
            edges
        };
        let w: Tensor<f64> = uniform_tensor(&mut rng, &[3, 2, 7, 7], -1.0, 1.0);
        let mut inputs: Vec<Tensor<f64>> = gen.set().iter().map(|e| e.value.clone()).collect();
        // perturb alpha off its 0 boundary so central differences see the
        // same linear segment on both sides
        let alpha_idx = gen.set().index_of("g.block0.alpha").unwrap();
        inputs[alpha_idx] = Tensor::scalar(0.5);
        inputs.push(raw);
        let gen2 = gen.clone();
        checks.push(Check {
            name: "block_forward",
            tolerance: MODEL_TOLERANCE,
            result: grad_check(
                move |t, ids| {
                    let (param_ids, rest) = ids.split_at(ids.len() - 1);
                    let bound = BoundParams::from_ids(param_ids.to_vec());
                    let vars = gen2.vars_from_bound(&bound);
                    let (y, _) =
                        block_forward(t, rest[0], &vars.blocks[0], &cfg, true, Some(&edges))?;
                    probe(t, y, &w)
                },
                &inputs,
                eps,
            ),
        });
    }

    // perceptual distance with respect to the image
    {
        let phi = FeatureExtractor::<f64>::new(derive(seed, 0xa3, 0));
        let x: Tensor<f64> = uniform_tensor(&mut rng, &[1, 12, 12], 0.1, 0.9);
        let y: Tensor<f64> = uniform_tensor(&mut rng, &[1, 12, 12], 0.1, 0.9);
        checks.push(Check {
            name: "perceptual_distance",
            tolerance: MODEL_TOLERANCE,
            result: grad_check(
                move |t, ids| {
                    let fy = {
                        let yid = t.constant(y.clone());
                        phi.features(t, yid)?
                    };
                    let fx = phi.features(t, ids[0])?;
                    let d = t.sub(fx, fy)?;
                    let sq = t.mul(d, d)?;
                    Ok(t.sum(sq))
                },
                &[x],
                eps,
            ),
        });
    }

    // critic gradient-penalty path with respect to the critic parameters;
    // resample until every pre-activation clears the kink by a wide
    // margin, otherwise a central difference can flip an activation mask
    {
        let ccfg = CriticConfig {
            channels: vec![2, 3],
            input_hw: (8, 8),
        };
        let (critic, x) = (0u64..64)
            .find_map(|attempt| {
                let critic =
                    DiscriminatorParams::<f64>::init(ccfg.clone(), derive(seed, 0xa4, attempt))
                        .ok()?;
                let x: Tensor<f64> = uniform_tensor(
                    &mut seeded(derive(seed, 0xa7, attempt)),
                    &[1, 8, 8],
                    -0.5,
                    0.5,
                );
                (critic.preactivation_margin(&x).ok()? > 5e-3).then_some((critic, x))
            })
            .expect("a kink-free probe point exists within a few attempts");
        let inputs: Vec<Tensor<f64>> = critic.set().iter().map(|e| e.value.clone()).collect();
        checks.push(Check {
            name: "critic_penalty",
            tolerance: MODEL_TOLERANCE,
            result: grad_check(
                move |t, ids| {
                    let bound = BoundParams::from_ids(ids.to_vec());
                    let vars = critic.vars_from_bound(&bound);
                    let xid = t.constant(x.clone());
                    let d = critic_value(t, xid, &vars, critic.config())?;
                    let g = critic_input_gradient(t, xid, &vars, critic.config())?;
                    let n = t.l2_norm(g);
                    let dev = t.add_scalar(n, -1.0);
                    let pen = t.mul(dev, dev)?;
                    let weighted = t.scale(pen, 10.0);
                    t.add(d, weighted)
                },
                &inputs,
                eps,
            ),
        });
    }

    collect(checks)
}

/// End-to-end finite-difference check of the full generator on a small
/// stack: every parameter plus the input, over the base point's frozen
/// graph topology (neighbor selection is discrete and must not flip
/// between probes).
pub fn audit_model(seed: u64) -> Result<Vec<AuditResult>> {
    let cfg = ModelConfig {
        graph: GraphConfig {
            k: 4,
            ..GraphConfig::default()
        },
        blocks: 1,
        embed_channels: 8,
        feature_channels: 4,
        tail_channels: 2,
        ecc_hidden: 4,
    };
    let gen = GeneratorParams::<f64>::init(cfg, derive(seed, 0xa5, 0))?;
    let mut rng = seeded(derive(seed, 0xa6, 0));
    let raw: Tensor<f64> = uniform_tensor(&mut rng, &[3, 8, 8], 0.0, 1.0);
    let w: Tensor<f64> = uniform_tensor(&mut rng, &[8, 8], -1.0, 1.0);

    let mut inputs: Vec<Tensor<f64>> = gen.set().iter().map(|e| e.value.clone()).collect();
    let alpha_idx = gen.set().index_of("g.block0.alpha").unwrap();
    inputs[alpha_idx] = Tensor::scalar(0.5);
    inputs.push(raw.clone());

    // base-point topology, captured with the same perturbed alpha
    let edges = {
        let mut tape = Tape::new();
        let mut base = gen.clone();
        base.set_mut().set("g.block0.alpha", Tensor::scalar(0.5))?;
        let input = tape.constant(raw);
        let (vars, _) = base.bind(&mut tape, false);
        let (_, edges) = generator_forward(&mut tape, input, &vars, &cfg)?;
        edges
    };

    let gen2 = gen.clone();
    let check = grad_check(
        move |t, ids| {
            let (param_ids, rest) = ids.split_at(ids.len() - 1);
            let bound = BoundParams::from_ids(param_ids.to_vec());
            let vars = gen2.vars_from_bound(&bound);
            let y = generator_forward_frozen(t, rest[0], &vars, &cfg, &edges)?;
            probe(t, y, &w)
        },
        &inputs,
        AUDIT_EPSILON,
    )?;
    Ok(vec![AuditResult {
        name: "generator_end_to_end".to_string(),
        max_rel_error: check.max_rel_error,
        tolerance: MODEL_TOLERANCE,
    }])
}
