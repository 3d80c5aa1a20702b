//! Property suite behind `dgcnn verify`.
//!
//! Families:
//!
//! * `permutation`: network outputs under reordered input points.
//! * `translation`: the displacement-only EdgeConv under global shifts.
//! * `pointnet`: the global-only edge function ignores the graph.
//! * `gradient`: tape gradients against central finite differences.
//! * `knn`: graph construction against a brute-force oracle.
//! * `shared-mlp`: the batched single-layer path against the per-edge
//!   reference formula.
//!
//! A check that errors is reported as failed; the suite itself only fails
//! on an unknown filter.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::edgeconv::{asym_edge_feature, edgeconv_forward, Aggregation, EdgeConv, EdgeFunction};
use crate::error::{Error, Result};
use crate::graph::{knn_graph, FeatureMatrix, NeighborGraph};
use crate::models::{
    Activation, BatchNormSettings, Classifier, ClassifierConfig, DenseOptions, Forward, Init, ParamStore,
    Segmenter, SegmenterConfig, TransformConfig,
};
use crate::parallel::{set_strict_deterministic, strict_deterministic};
use crate::tensor::{grad_check_with, GradCheckOptions, Real, Tape, Tensor, Var};

pub const FAMILIES: [&str; 6] = ["permutation", "translation", "pointnet", "gradient", "knn", "shared-mlp"];

pub const PERMUTATION_TRIALS: usize = 100;
pub const TRANSLATION_TRIALS: usize = 20;
pub const TRANSLATION_TOL: Real = 1e-9;
pub const POINTNET_GRAPHS: usize = 10;
pub const POINTNET_TOL: Real = 1e-12;
pub const GRAD_STEP: Real = 1e-5;
pub const GRAD_TOL: Real = 1e-6;
pub const GRAD_SEEDS: u64 = 10;
pub const KNN_MAX_N: usize = 64;
pub const KNN_SETS: usize = 100;
pub const SHARED_MLP_EDGES: usize = 1000;
pub const SHARED_MLP_TOL: Real = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub family: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn check(family: &'static str, name: impl Into<String>, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult { family, name: name.into(), passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Runs every family whose name contains `filter` (all when `None`), in
/// strict-deterministic mode.
pub fn run_suite(filter: Option<&str>) -> Result<Vec<CheckResult>> {
    let families: Vec<&str> = FAMILIES.iter().copied().filter(|f| filter.is_none_or(|p| f.contains(p))).collect();
    if families.is_empty() {
        return Err(Error::Config(format!(
            "filter `{}` matches no family; known: {}",
            filter.unwrap_or_default(),
            FAMILIES.join(", ")
        )));
    }
    let was_strict = strict_deterministic();
    set_strict_deterministic(true);
    let mut out = Vec::new();
    for f in families {
        out.extend(run_family(f)?);
    }
    set_strict_deterministic(was_strict);
    Ok(out)
}

pub fn run_family(family: &str) -> Result<Vec<CheckResult>> {
    Ok(match family {
        "permutation" => permutation_checks(),
        "translation" => translation_checks(),
        "pointnet" => pointnet_checks(),
        "gradient" => gradient_checks(),
        "knn" => knn_checks(),
        "shared-mlp" => shared_mlp_checks(),
        other => return Err(Error::Config(format!("unknown verify family `{other}`"))),
    })
}

/// Fixed-width text table, one row per check.
pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.family.len() + r.name.len() + 1).max().unwrap_or(0);
    let mut s = String::new();
    for r in results {
        let label = format!("{}/{}", r.family, r.name);
        s.push_str(&format!(
            "{:<4}  {label:<width$}  {:>7.2}s  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        ));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    s.push_str(&format!("{} checks, {failed} failed\n", results.len()));
    s
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, f: usize) -> FeatureMatrix {
    let values = (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureMatrix::new(n, f, values).expect("sized by construction")
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

fn bitwise_equal(a: &[Real], b: &[Real]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn max_abs_diff(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, Real::max)
}

// ---------------------------------------------------------------- permutation

fn permutation_checks() -> Vec<CheckResult> {
    const FAMILY: &str = "permutation";
    let n = 128;
    let mut out = Vec::new();
    let fixtures: Vec<(&str, ClassifierConfig)> = vec![
        ("classifier", ClassifierConfig::desk(4)),
        ("classifier-transform", ClassifierConfig { use_spatial_transformer: true, ..ClassifierConfig::desk(4) }),
        ("classifier-static", ClassifierConfig { dynamic_graph: false, ..ClassifierConfig::desk(4) }),
        ("classifier-sum", ClassifierConfig { aggregation: Aggregation::Sum, ..ClassifierConfig::desk(4) }),
    ];
    for (name, cfg) in fixtures {
        out.push(check(FAMILY, format!("{name} logits bitwise invariant x{PERMUTATION_TRIALS}"), || {
            // Summed neighbour features depend on summation order, which a
            // relabelling can change; that fixture gets a tolerance.
            let exact = cfg.aggregation == Aggregation::Max;
            let model = Classifier::new(cfg, 11)?;
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let cloud = random_cloud(&mut rng, n, 3);
            let base = model.logits(&cloud)?;
            let mut worst: Real = 0.0;
            for _ in 0..PERMUTATION_TRIALS {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                let logits = model.logits(&cloud.select_rows(&order)?)?;
                if exact && !bitwise_equal(&base, &logits) {
                    return Ok((false, format!("logits changed by {:e}", max_abs_diff(&base, &logits))));
                }
                worst = worst.max(max_abs_diff(&base, &logits));
            }
            if exact {
                Ok((true, "bitwise equal".into()))
            } else {
                Ok((worst <= 1e-12, format!("max diff {worst:.2e} (tol 1e-12)")))
            }
        }));
    }
    out.push(check(FAMILY, format!("segmenter scores equivariant x{PERMUTATION_TRIALS}"), || {
        let cfg = SegmenterConfig { use_spatial_transformer: false, ..SegmenterConfig::desk(5, 2) };
        let model = Segmenter::new(cfg, 13)?;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cloud = random_cloud(&mut rng, 64, 3);
        let onehot = [1.0, 0.0];
        let base = model.segment(&cloud, Some(&onehot))?;
        for _ in 0..PERMUTATION_TRIALS {
            let mut order: Vec<usize> = (0..cloud.n()).collect();
            order.shuffle(&mut rng);
            let scores = model.segment(&cloud.select_rows(&order)?, Some(&onehot))?;
            for (new_row, &old_row) in order.iter().enumerate() {
                if !bitwise_equal(scores.row(new_row), base.row(old_row)) {
                    return Ok((false, format!("point {old_row} changed after relabelling")));
                }
            }
        }
        Ok((true, "bitwise equal per point".into()))
    }));
    out
}

// ---------------------------------------------------------------- translation

/// Displacement-only EdgeConv: centralized edge input with the block that
/// multiplies `x_i` zeroed, no bias, no batch norm.
fn displacement_layer(seed: u64, aggregation: Aggregation) -> Result<(ParamStore, EdgeConv)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = DenseOptions { batch_norm: None, activation: Activation::LeakyRelu(0.2), bias: false, init: Init::Glorot };
    let layer = EdgeConv::new(&mut store, "t", 3, &[16, 8], EdgeFunction::CentralizedAsym, aggregation, opts, &mut rng)?;
    let w = store.get_mut(layer.mlp[0].weight);
    let cols = w.shape()[1];
    w.data_mut()[..3 * cols].fill(0.0);
    Ok((store, layer))
}

fn translation_checks() -> Vec<CheckResult> {
    const FAMILY: &str = "translation";
    [Aggregation::Max, Aggregation::Sum]
        .into_iter()
        .map(|agg| {
            check(FAMILY, format!("centralized zero-phi {agg:?} x{TRANSLATION_TRIALS}"), move || {
                let (store, layer) = displacement_layer(21, agg)?;
                let mut rng = ChaCha8Rng::seed_from_u64(22);
                let cloud = random_cloud(&mut rng, 96, 3);
                let graph = knn_graph(&cloud, 10, true)?;
                let base = edgeconv_forward(&cloud, &graph, &layer, &store)?;
                let mut worst: Real = 0.0;
                for _ in 0..TRANSLATION_TRIALS {
                    let t: Vec<Real> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
                    let moved = cloud.translated(&t)?;
                    let moved_graph = knn_graph(&moved, 10, true)?;
                    if moved_graph != graph {
                        return Ok((false, "input-space graph changed under translation".into()));
                    }
                    let y = edgeconv_forward(&moved, &moved_graph, &layer, &store)?;
                    worst = worst.max(max_abs_diff(base.values(), y.values()));
                }
                Ok((worst <= TRANSLATION_TOL, format!("max diff {worst:.2e} (tol {TRANSLATION_TOL:e})")))
            })
        })
        .collect()
}

// ---------------------------------------------------------------- pointnet

fn random_graph(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Result<NeighborGraph> {
    let table = (0..n * k).map(|_| rng.random_range(0..n)).collect();
    NeighborGraph::from_table(n, k, table, false)
}

fn pointnet_checks() -> Vec<CheckResult> {
    const FAMILY: &str = "pointnet";
    let mut out: Vec<CheckResult> = [Aggregation::Max, Aggregation::Sum]
        .into_iter()
        .map(|agg| {
            check(FAMILY, format!("global-only {agg:?} ignores {POINTNET_GRAPHS} random graphs"), move || {
                let mut store = ParamStore::new();
                let mut rng = ChaCha8Rng::seed_from_u64(31);
                let opts = DenseOptions::hidden(Activation::LeakyRelu(0.2), BatchNormSettings::default());
                let layer =
                    EdgeConv::new(&mut store, "g", 3, &[16, 8], EdgeFunction::GlobalOnly, agg, opts, &mut rng)?;
                let cloud = random_cloud(&mut rng, 64, 3);
                let base = edgeconv_forward(&cloud, &random_graph(&mut rng, 64, 6)?, &layer, &store)?;
                let mut worst: Real = 0.0;
                for _ in 0..POINTNET_GRAPHS {
                    let g = random_graph(&mut rng, 64, 6)?;
                    let y = edgeconv_forward(&cloud, &g, &layer, &store)?;
                    worst = worst.max(max_abs_diff(base.values(), y.values()));
                }
                Ok((worst <= POINTNET_TOL, format!("max diff {worst:.2e} (tol {POINTNET_TOL:e})")))
            })
        })
        .collect();
    out.push(check(FAMILY, "k=1 self-loop centralized equals global-only", || {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let opts = DenseOptions { batch_norm: None, activation: Activation::Relu, bias: false, init: Init::Glorot };
        let mut cs = ParamStore::new();
        let cent = EdgeConv::new(&mut cs, "c", 3, &[8], EdgeFunction::CentralizedAsym, Aggregation::Max, opts, &mut rng)?;
        let mut gs = ParamStore::new();
        let glob = EdgeConv::new(&mut gs, "g", 3, &[8], EdgeFunction::GlobalOnly, Aggregation::Max, opts, &mut rng)?;
        let w = cs.get(cent.mlp[0].weight).data()[..3 * 8].to_vec();
        gs.get_mut(glob.mlp[0].weight).data_mut().copy_from_slice(&w);
        let cloud = random_cloud(&mut rng, 40, 3);
        let self_only = NeighborGraph::from_table(40, 1, (0..40).collect(), true)?;
        let a = edgeconv_forward(&cloud, &self_only, &cent, &cs)?;
        let b = edgeconv_forward(&cloud, &self_only, &glob, &gs)?;
        let d = max_abs_diff(a.values(), b.values());
        Ok((d <= POINTNET_TOL, format!("max diff {d:.2e}")))
    }));
    out
}

// ---------------------------------------------------------------- gradient

type Probe = Box<dyn Fn(&mut ChaCha8Rng) -> Result<(Tensor, Box<dyn Fn(&mut Tape, Var) -> Result<Var>>)>>;

/// `Σ y ⊙ R` for a fixed random `R`, so every output element carries a
/// distinct weight into the scalar being checked.
fn contract(tape: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let rv = tape.constant(r.clone())?;
    let p = tape.mul(y, rv)?;
    tape.sum(p)
}

/// Builds a probe for a unary op on a `shape` input, with a random
/// contraction of its output.
fn unary(shape: &'static [usize], out: &'static [usize], op: fn(&mut Tape, Var) -> Result<Var>) -> Probe {
    Box::new(move |rng| {
        let x = random_tensor(rng, shape);
        let r = random_tensor(rng, out);
        Ok((x, Box::new(move |t: &mut Tape, v| {
            let y = op(t, v)?;
            contract(t, y, &r)
        }) as Box<dyn Fn(&mut Tape, Var) -> Result<Var>>))
    })
}

/// Probe for a binary op: differentiates with respect to operand `which`
/// while the other is a random constant.
fn binary(
    which: usize,
    a_shape: &'static [usize],
    b_shape: &'static [usize],
    out: &'static [usize],
    op: fn(&mut Tape, Var, Var) -> Result<Var>,
) -> Probe {
    Box::new(move |rng| {
        let a = random_tensor(rng, a_shape);
        let b = random_tensor(rng, b_shape);
        let r = random_tensor(rng, out);
        let (x, other) = if which == 0 { (a, b) } else { (b, a) };
        Ok((x, Box::new(move |t: &mut Tape, v| {
            let c = t.constant(other.clone())?;
            let y = if which == 0 { op(t, v, c)? } else { op(t, c, v)? };
            contract(t, y, &r)
        }) as Box<dyn Fn(&mut Tape, Var) -> Result<Var>>))
    })
}

fn primitive_probes() -> Vec<(&'static str, Probe)> {
    vec![
        ("matmul/a", binary(0, &[3, 4], &[4, 5], &[3, 5], |t, a, b| t.matmul(a, b))),
        ("matmul/b", binary(1, &[3, 4], &[4, 5], &[3, 5], |t, a, b| t.matmul(a, b))),
        ("batched_matmul/a", binary(0, &[2, 3, 3], &[2, 3, 4], &[2, 3, 4], |t, a, b| t.batched_matmul(a, b))),
        ("batched_matmul/b", binary(1, &[2, 3, 3], &[2, 3, 4], &[2, 3, 4], |t, a, b| t.batched_matmul(a, b))),
        ("add_bias/x", binary(0, &[4, 3], &[3], &[4, 3], |t, a, b| t.add_bias(a, b))),
        ("add_bias/bias", binary(1, &[4, 3], &[3], &[4, 3], |t, a, b| t.add_bias(a, b))),
        ("add", binary(0, &[3, 4], &[3, 4], &[3, 4], |t, a, b| t.add(a, b))),
        ("sub/a", binary(0, &[3, 4], &[3, 4], &[3, 4], |t, a, b| t.sub(a, b))),
        ("sub/b", binary(1, &[3, 4], &[3, 4], &[3, 4], |t, a, b| t.sub(a, b))),
        ("mul/a", binary(0, &[3, 4], &[3, 4], &[3, 4], |t, a, b| t.mul(a, b))),
        ("mul/b", binary(1, &[3, 4], &[3, 4], &[3, 4], |t, a, b| t.mul(a, b))),
        ("scale_rows/x", binary(0, &[4, 3], &[4], &[4, 3], |t, a, b| t.scale_rows(a, b))),
        ("scale_rows/w", binary(1, &[4, 3], &[4], &[4, 3], |t, a, b| t.scale_rows(a, b))),
        ("gaussian_weight", unary(&[5, 3], &[5], |t, x| t.gaussian_weight(x, 0.8))),
        ("leaky_relu", unary(&[4, 5], &[4, 5], |t, x| t.leaky_relu(x, 0.2))),
        ("relu", unary(&[4, 5], &[4, 5], |t, x| t.relu(x))),
        ("batch_norm_train/x", unary(&[6, 3], &[6, 3], |t, x| bn_train(t, x, 0))),
        ("batch_norm_train/gamma", unary(&[3], &[6, 3], |t, x| bn_train(t, x, 1))),
        ("batch_norm_train/beta", unary(&[3], &[6, 3], |t, x| bn_train(t, x, 2))),
        ("batch_norm_eval/x", unary(&[6, 3], &[6, 3], |t, x| bn_eval(t, x, 0))),
        ("batch_norm_eval/gamma", unary(&[3], &[6, 3], |t, x| bn_eval(t, x, 1))),
        ("max_axis/0", unary(&[5, 4], &[4], |t, x| Ok(t.max_axis(x, 0)?.0))),
        ("max_axis/1", unary(&[2, 5, 4], &[2, 4], |t, x| Ok(t.max_axis(x, 1)?.0))),
        ("max_row_groups", unary(&[12, 3], &[4, 3], |t, x| Ok(t.max_row_groups(x, 3)?.0))),
        ("sum_axis", unary(&[2, 5, 4], &[2, 4], |t, x| t.sum_axis(x, 1))),
        ("sum_row_groups", unary(&[12, 3], &[4, 3], |t, x| t.sum_row_groups(x, 3))),
        ("sum", unary(&[3, 4], &[], |t, x| t.sum(x))),
        ("concat/0", binary(0, &[2, 3], &[4, 3], &[6, 3], |t, a, b| t.concat(&[a, b], 0))),
        ("concat/1", binary(1, &[4, 2], &[4, 3], &[4, 5], |t, a, b| t.concat(&[a, b], 1))),
        ("gather_rows", unary(&[4, 3], &[6, 3], |t, x| t.gather_rows(x, &[3, 0, 0, 2, 3, 1]))),
        ("gather_add/a", binary(0, &[4, 3], &[5, 3], &[6, 3], |t, a, b| {
            t.gather_add(a, &[0, 1, 1, 3, 2, 0], b, &[4, 4, 0, 1, 2, 3])
        })),
        ("gather_add/b", binary(1, &[4, 3], &[5, 3], &[6, 3], |t, a, b| {
            t.gather_add(a, &[0, 1, 1, 3, 2, 0], b, &[4, 4, 0, 1, 2, 3])
        })),
        ("slice_cols", unary(&[4, 5], &[4, 2], |t, x| t.slice_cols(x, 1, 3))),
        ("reshape", unary(&[4, 6], &[2, 12], |t, x| t.reshape(x, &[2, 12]))),
        ("dropout", unary(&[5, 4], &[5, 4], |t, x| {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            t.dropout(x, 0.6, true, &mut rng)
        })),
        ("softmax_cross_entropy", unary(&[3, 4], &[], |t, x| t.softmax_cross_entropy(x, &[2, 0, 3]))),
    ]
}

fn bn_train(t: &mut Tape, v: Var, which: usize) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut fixed = |shape: &[usize]| t.constant(random_tensor(&mut rng, shape));
    let (x, g, b) = match which {
        0 => (v, fixed(&[3])?, fixed(&[3])?),
        1 => (fixed(&[6, 3])?, v, fixed(&[3])?),
        _ => (fixed(&[6, 3])?, fixed(&[3])?, v),
    };
    Ok(t.batch_norm_train(x, g, b, 1e-5)?.0)
}

fn bn_eval(t: &mut Tape, v: Var, which: usize) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut fixed = |shape: &[usize]| t.constant(random_tensor(&mut rng, shape));
    let (x, g) = if which == 0 { (v, fixed(&[3])?) } else { (fixed(&[6, 3])?, v) };
    let b = fixed(&[3])?;
    t.batch_norm_eval(x, g, b, &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5)
}

/// EdgeConv stage (two layers with batch norm in training mode) on a fixed
/// input-space graph, differentiated with respect to the point features.
fn edgeconv_probe(function: EdgeFunction, aggregation: Aggregation) -> Probe {
    Box::new(move |rng| {
        let seed = rng.random::<u64>();
        let mut store = ParamStore::new();
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let opts = DenseOptions::hidden(Activation::LeakyRelu(0.2), BatchNormSettings::default());
        let layer = EdgeConv::new(&mut store, "e", 3, &[6, 4], function, aggregation, opts, &mut init)?;
        let cloud = random_cloud(rng, 12, 3);
        let graph = knn_graph(&cloud, 4, true)?;
        let r = random_tensor(rng, &[12, 4]);
        Ok((cloud.to_tensor(), Box::new(move |t: &mut Tape, v| {
            let mut fwd = Forward::with_tape(std::mem::take(t), &store, true, 0);
            let y = layer.forward(&mut fwd, v, std::slice::from_ref(&graph))?;
            let loss = contract(&mut fwd.tape, y, &r);
            *t = fwd.finish().tape;
            loss
        }) as Box<dyn Fn(&mut Tape, Var) -> Result<Var>>))
    })
}

fn tiny_classifier(transform: bool) -> ClassifierConfig {
    ClassifierConfig {
        k: 4,
        edgeconv_widths: vec![6, 6, 8, 8],
        embed_width: 12,
        head_widths: vec![8, 6],
        num_classes: 3,
        use_spatial_transformer: transform,
        transform: TransformConfig { edge_widths: vec![6, 8], embed_width: 12, head_widths: vec![8, 6] },
        ..ClassifierConfig::default()
    }
}

/// Cross-entropy of a small classifier on a batch of clouds, differentiated
/// with respect to the input coordinates or, when `param` names one, a
/// parameter tensor. The transformer's zero-initialised output layer is
/// randomised so gradient reaches the layers behind it.
fn classifier_probe(transform: bool, param: Option<&'static str>, training: bool, batch: usize) -> Probe {
    Box::new(move |rng| {
        let mut model = Classifier::new(tiny_classifier(transform), rng.random::<u64>())?;
        if let Some(id) = model.store.find("transform.out.weight") {
            let shape = model.store.get(id).shape().to_vec();
            let mut w = random_tensor(rng, &shape);
            w.data_mut().iter_mut().for_each(|v| *v *= 0.2);
            *model.store.get_mut(id) = w;
        }
        let clouds = random_tensor(rng, &[batch * 16, 3]);
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..3)).collect();
        let target = match param {
            Some(name) => Some(model.store.find(name).ok_or_else(|| Error::param(format!("no parameter {name}")))?),
            None => None,
        };
        let x = match target {
            Some(id) => model.store.get(id).clone(),
            None => clouds.clone(),
        };
        Ok((x, Box::new(move |t: &mut Tape, v| {
            let mut fwd = Forward::with_tape(std::mem::take(t), &model.store, training, 7);
            let points = match target {
                Some(id) => {
                    fwd.bind(id, v);
                    fwd.tape.constant(clouds.clone())?
                }
                None => v,
            };
            let out = model.forward_var(&mut fwd, points, batch)?;
            let loss = fwd.tape.softmax_cross_entropy(out.logits, &labels);
            *t = fwd.finish().tape;
            loss
        }) as Box<dyn Fn(&mut Tape, Var) -> Result<Var>>))
    })
}

fn gradient_checks() -> Vec<CheckResult> {
    const FAMILY: &str = "gradient";
    let mut probes = primitive_probes();
    for function in [
        EdgeFunction::GlobalOnly,
        EdgeFunction::NeighborOnly,
        EdgeFunction::NeighborGaussian { bandwidth: 0.7 },
        EdgeFunction::LocalOnly,
        EdgeFunction::CentralizedAsym,
        EdgeFunction::PairConcat,
    ] {
        for agg in [Aggregation::Max, Aggregation::Sum] {
            let name: &'static str = Box::leak(format!("edgeconv/{}/{agg:?}", function_name(function)).into_boxed_str());
            probes.push((name, edgeconv_probe(function, agg)));
        }
    }
    for (mode, training, batch) in [("eval", false, 2), ("train", true, 12)] {
        let name = |what: &str| -> &'static str { Box::leak(format!("classifier-loss/{mode}/{what}").into_boxed_str()) };
        probes.push((name("points"), classifier_probe(false, None, training, batch)));
        probes.push((name("points+transform"), classifier_probe(true, None, training, batch)));
        probes.push((name("edgeconv2.weight"), classifier_probe(false, Some("edgeconv2.mlp0.weight"), training, batch)));
        probes.push((name("transform.weight"), classifier_probe(true, Some("transform.edge.mlp0.weight"), training, batch)));
    }
    probes
        .into_iter()
        .map(|(name, probe)| {
            // only the whole-network losses have gradients near the noise floor
            let end_to_end = name.starts_with("classifier-loss");
            check(FAMILY, name, || {
                let mut worst: Real = 0.0;
                let (mut checked, mut skipped, mut unresolved) = (0, 0, 0);
                for seed in 0..GRAD_SEEDS {
                    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                    let (x, f) = probe(&mut rng)?;
                    let opts = GradCheckOptions {
                        step: GRAD_STEP,
                        seed,
                        resolution_tol: end_to_end.then_some(GRAD_TOL),
                        ..GradCheckOptions::default()
                    };
                    let report = grad_check_with(f, &x, &opts)?;
                    worst = worst.max(report.max_rel_error);
                    checked += report.checked;
                    skipped += report.skipped;
                    unresolved += report.unresolved;
                }
                Ok((
                    worst < GRAD_TOL && checked > 0,
                    format!(
                        "max rel err {worst:.2e} over {GRAD_SEEDS} seeds ({checked} coords, {skipped} near kinks, {unresolved} below resolution)"
                    ),
                ))
            })
        })
        .collect()
}

fn function_name(f: EdgeFunction) -> &'static str {
    match f {
        EdgeFunction::GlobalOnly => "global_only",
        EdgeFunction::NeighborOnly => "neighbor_only",
        EdgeFunction::NeighborGaussian { .. } => "neighbor_gaussian",
        EdgeFunction::LocalOnly => "local_only",
        EdgeFunction::CentralizedAsym => "centralized_asym",
        EdgeFunction::PairConcat => "pair_concat",
    }
}

// ---------------------------------------------------------------- knn

/// Brute-force neighbour rows: distances summed coordinate by coordinate,
/// every candidate sorted by `(distance, index)`.
pub fn knn_oracle(x: &FeatureMatrix, k: usize, self_loop: bool) -> Vec<Vec<usize>> {
    let n = x.n();
    (0..n)
        .map(|i| {
            let mut cand: Vec<(Real, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, j)
                })
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut row = Vec::with_capacity(k);
            if self_loop {
                row.push(i);
            }
            row.extend(cand.iter().map(|c| c.1).take(k - row.len()));
            row
        })
        .collect()
}

fn knn_checks() -> Vec<CheckResult> {
    const FAMILY: &str = "knn";
    vec![check(FAMILY, format!("oracle agreement n<={KNN_MAX_N}, all k, {KNN_SETS} sets"), || {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut graphs = 0usize;
        for set in 0..KNN_SETS {
            let f = rng.random_range(1..=4);
            // Every other set lies on a small integer lattice, where exact
            // distance ties exercise the index tie rule.
            let values: Vec<Real> = (0..KNN_MAX_N * f)
                .map(|_| if set % 2 == 0 { rng.random_range(-1.0..1.0) } else { rng.random_range(0..4) as Real })
                .collect();
            for n in 1..=KNN_MAX_N {
                let x = FeatureMatrix::new(n, f, values[..n * f].to_vec())?;
                for self_loop in [true, false] {
                    let max_k = if self_loop { n } else { n - 1 };
                    if max_k == 0 {
                        continue;
                    }
                    let full = knn_oracle(&x, max_k, self_loop);
                    for k in 1..=max_k {
                        let g = knn_graph(&x, k, self_loop)?;
                        for (i, row) in full.iter().enumerate() {
                            if g.row(i) != &row[..k] {
                                return Ok((
                                    false,
                                    format!(
                                        "set {set} n={n} k={k} self_loop={self_loop} point {i}: {:?} vs oracle {:?}",
                                        g.row(i),
                                        &row[..k]
                                    ),
                                ));
                            }
                        }
                        graphs += 1;
                    }
                }
            }
        }
        Ok((true, format!("{graphs} graphs agree")))
    })]
}

// ---------------------------------------------------------------- shared-mlp

fn shared_mlp_checks() -> Vec<CheckResult> {
    const FAMILY: &str = "shared-mlp";
    vec![check(FAMILY, format!("single layer vs per-edge formula on {SHARED_MLP_EDGES} edges"), || {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let (n, f, m) = (SHARED_MLP_EDGES, 3, 8);
        let mut store = ParamStore::new();
        let opts = DenseOptions { batch_norm: None, activation: Activation::Relu, bias: false, init: Init::Glorot };
        let layer = EdgeConv::new(&mut store, "s", f, &[m], EdgeFunction::CentralizedAsym, Aggregation::Max, opts, &mut rng)?;
        let cloud = random_cloud(&mut rng, n, f);
        // One edge per point, to a random other point.
        let table: Vec<usize> = (0..n).map(|i| (i + rng.random_range(1..n)) % n).collect();
        let graph = NeighborGraph::from_table(n, 1, table.clone(), false)?;
        let y = edgeconv_forward(&cloud, &graph, &layer, &store)?;
        // Rows 0..f of the weight multiply x_i (phi), rows f..2f the
        // displacement (theta); transpose both into M × F.
        let w = store.get(layer.mlp[0].weight);
        let block = |offset: usize| {
            let v = (0..m).flat_map(|c| (0..f).map(move |d| (c, d))).map(|(c, d)| w.at(&[offset + d, c])).collect();
            Tensor::new(vec![m, f], v)
        };
        let (phi, theta) = (block(0)?, block(f)?);
        let mut worst: Real = 0.0;
        for (i, &j) in table.iter().enumerate() {
            let e = asym_edge_feature(cloud.row(i), cloud.row(j), &theta, &phi)?;
            worst = worst.max(max_abs_diff(&e, y.row(i)));
        }
        Ok((worst <= SHARED_MLP_TOL, format!("max diff {worst:.2e} (tol {SHARED_MLP_TOL:e})")))
    })]
}
