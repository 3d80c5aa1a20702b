//! Wall-clock timing of graph construction, single EdgeConv stages and
//! whole classifier forward passes.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edgeconv::{edgeconv_forward, Aggregation, EdgeConv, EdgeFunction};
use crate::error::{Error, Result};
use crate::graph::{knn_graph, FeatureMatrix};
use crate::models::{Activation, BatchNormSettings, Classifier, ClassifierConfig, DenseOptions, ParamStore};

pub const BENCH_CSV_HEADER: &str = "op,n,k,f,repetitions,median_ms,p95_ms";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub ks: Vec<usize>,
    /// Feature widths for the graph and EdgeConv rows.
    pub widths: Vec<usize>,
    pub repetitions: usize,
    /// Adds static- and dynamic-graph classifier forward rows (desk widths).
    pub classifier: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { sizes: vec![256, 1024], ks: vec![10, 20], widths: vec![3, 64], repetitions: 20, classifier: true, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub op: String,
    pub n: usize,
    pub k: usize,
    pub f: usize,
    pub repetitions: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl BenchRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6}",
            self.op, self.n, self.k, self.f, self.repetitions, self.median_ms, self.p95_ms
        )
    }
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{BENCH_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Median of a sample; even lengths average the two middle values.
pub fn median(samples: &[f64]) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Nearest-rank 95th percentile. A single sample is its own p95 and median.
pub fn p95(samples: &[f64]) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    if v.len() == 1 {
        return v[0];
    }
    let rank = (0.95 * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Milliseconds per call over `reps` calls, after one untimed warm-up.
pub fn time_calls(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    f()?;
    (0..reps)
        .map(|_| {
            let start = Instant::now();
            f()?;
            Ok(start.elapsed().as_secs_f64() * 1e3)
        })
        .collect()
}

fn row(op: &str, n: usize, k: usize, f: usize, samples: &[f64]) -> BenchRow {
    BenchRow { op: op.into(), n, k, f, repetitions: samples.len(), median_ms: median(samples), p95_ms: p95(samples) }
}

/// Classifier forward pass on one `n`-point cloud, static or dynamic graph.
pub fn time_classifier_forward(n: usize, k: usize, dynamic: bool, reps: usize, seed: u64) -> Result<Vec<f64>> {
    let cfg = ClassifierConfig { k, dynamic_graph: dynamic, ..ClassifierConfig::desk(4) };
    let model = Classifier::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = FeatureMatrix::new(n, 3, (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    time_calls(reps, || model.logits(&cloud).map(|_| ()))
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repetitions == 0 {
        return Err(Error::Config("bench needs at least one repetition".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        for &k in cfg.ks.iter().filter(|&&k| k >= 1 && k <= n) {
            for &f in &cfg.widths {
                let x = FeatureMatrix::new(n, f, (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect())?;
                let knn = time_calls(cfg.repetitions, || knn_graph(&x, k, true).map(|_| ()))?;
                rows.push(row("knn_graph", n, k, f, &knn));

                let mut store = ParamStore::new();
                let opts = DenseOptions::hidden(Activation::LeakyRelu(0.2), BatchNormSettings::default());
                let layer = EdgeConv::new(
                    &mut store,
                    "bench",
                    f,
                    &[64],
                    EdgeFunction::CentralizedAsym,
                    Aggregation::Max,
                    opts,
                    &mut rng,
                )?;
                let graph = knn_graph(&x, k, true)?;
                let conv = time_calls(cfg.repetitions, || edgeconv_forward(&x, &graph, &layer, &store).map(|_| ()))?;
                rows.push(row("edgeconv_forward", n, k, f, &conv));
            }
            if cfg.classifier {
                let s = time_classifier_forward(n, k, false, cfg.repetitions, cfg.seed)?;
                rows.push(row("classifier_static", n, k, 3, &s));
                let d = time_classifier_forward(n, k, true, cfg.repetitions, cfg.seed)?;
                rows.push(row("classifier_dynamic", n, k, 3, &d));
            }
        }
    }
    Ok(rows)
}
