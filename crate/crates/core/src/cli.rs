//! Command-line front end. `main` parses arguments with [`Cli`] and hands
//! them to [`run`], which maps every error onto a documented exit code.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{bench_csv, run_bench, BenchConfig};
use crate::config::{RunConfig, Task};
use crate::data::{export_feature_distances, Dataset, DistanceLayer};
use crate::error::{Error, Result};
use crate::graph::inject_tie_rule_fault;
use crate::models::{Classifier, Segmenter};
use crate::parallel::set_strict_deterministic;
use crate::tensor::Real;
use crate::train::{
    evaluate_classification, evaluate_segmentation, random_subsample_indices, side_drop_indices, subset_cloud, train,
    MetricsReport, Side, TrainOptions,
};
use crate::verify::{format_table, run_suite};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_MISMATCH: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "dgcnn", version, about = "Dynamic graph CNNs for point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier or segmenter and write metrics and checkpoints.
    Train(RunArgs),
    /// Score a checkpoint on the test split.
    Eval(EvalArgs),
    /// Run the property suite and print a pass/fail table.
    Verify(VerifyArgs),
    /// Time graph construction, EdgeConv stages and classifier forwards.
    Bench(BenchArgs),
    /// Per-point feature-space distances from one source point, as CSV.
    ExportDistances(ExportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration, merged over the preset it names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "dgcnn-out")]
    pub out: PathBuf,
    /// Serial kernels only, for byte-identical reruns.
    #[arg(long)]
    pub strict_deterministic: bool,
    /// `dotted.key=value` override, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Progress lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Parameter checkpoint. Without --config, a `config.resolved.toml`
    /// next to it is used.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Uniformly keep this fraction of every test cloud.
    #[arg(long)]
    pub keep_fraction: Option<Real>,
    /// Drop points from one side of every test cloud.
    #[arg(long, value_parser = ["top", "bottom", "left", "right", "front", "back"])]
    pub side_drop: Option<String>,
    /// Fraction kept by --side-drop.
    #[arg(long, default_value_t = 0.5)]
    pub keep: Real,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Only families whose name contains this string.
    #[arg(long)]
    pub filter: Option<String>,
    /// Test hook: `tie-rule` flips the k-NN tie rule so the oracle check
    /// must fail.
    #[arg(long, value_parser = ["tie-rule"])]
    pub inject_fault: Option<String>,
    /// Also write the table to `<out>/verify.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 1024])]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 20])]
    pub ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [3usize, 64])]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub repetitions: usize,
    /// Skip the classifier forward rows.
    #[arg(long)]
    pub no_classifier: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "dgcnn-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test cloud to export.
    #[arg(long, default_value_t = 0)]
    pub cloud: usize,
    /// Source point within the cloud.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// `input`, `transform` or `edgeconvN`.
    #[arg(long, default_value = "edgeconv1")]
    pub layer: String,
}

/// Exit code for an error: configuration and missing paths are usage
/// errors, malformed checkpoints and data are mismatches.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parameter(_) | Error::Io { .. } => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Checkpoint(_)
        | Error::Data(_)
        | Error::Parse { .. }
        | Error::Dimension(_)
        | Error::Index(_)
        | Error::Contract(_)
        | Error::DegenerateBatch(_) => EXIT_MISMATCH,
    }
}

/// Runs a parsed command, printing errors to stderr.
pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::ExportDistances(a) => cmd_export(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(args: &RunArgs, fallback_config: Option<&Path>) -> Result<RunConfig> {
    let file = args.config.as_deref().or(fallback_config);
    let mut cfg = RunConfig::resolve(file, &args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.strict_deterministic |= args.strict_deterministic;
    set_strict_deterministic(cfg.strict_deterministic);
    Ok(cfg)
}

fn check_classes(data: &Dataset, outputs: usize, what: &str) -> Result<()> {
    let needed = match what {
        "classes" => data.num_classes(),
        _ => data.num_part_labels(),
    };
    if needed > outputs {
        return Err(Error::Data(format!("dataset has {needed} {what} but the model predicts {outputs}")));
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_train(args: &RunArgs) -> Result<u8> {
    let cfg = resolve(args, None)?;
    let (train_set, test_set) = cfg.datasets()?;
    cfg.write_snapshot(&args.out)?;
    let opts = TrainOptions { out_dir: Some(&args.out), progress: !args.quiet };
    let outcome = match cfg.task {
        Task::Classification => {
            let mut model = Classifier::new(cfg.classifier.clone(), cfg.seed)?;
            check_classes(&train_set, model.config.num_classes, "classes")?;
            train(&mut model, &train_set, Some(&test_set), &cfg.train, cfg.seed, opts)?
        }
        Task::Segmentation => {
            let mut model = Segmenter::new(cfg.segmenter.clone(), cfg.seed)?;
            check_classes(&train_set, model.config.num_part_labels, "part labels")?;
            train(&mut model, &train_set, Some(&test_set), &cfg.train, cfg.seed, opts)?
        }
    };
    if let Some(m) = &outcome.final_metrics {
        write(&args.out.join("final_metrics.csv"), &m.to_csv())?;
        print!("{}", m.to_csv());
    }
    eprintln!("trained in {:.1}s, outputs in {}", outcome.seconds, args.out.display());
    Ok(EXIT_OK)
}

/// Test split after the requested point dropping.
fn reduced_test_set(args: &EvalArgs, cfg: &RunConfig, test: Dataset) -> Result<Dataset> {
    let mut data = test;
    if let Some(fraction) = args.keep_fraction {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(11);
        for c in &mut data.clouds {
            let keep = random_subsample_indices(c.points.n(), fraction, &mut rng)?;
            *c = subset_cloud(c, &keep)?;
        }
    }
    if let Some(side) = &args.side_drop {
        let side: Side = side.parse()?;
        for c in &mut data.clouds {
            let keep = side_drop_indices(&c.points, args.keep, side)?;
            *c = subset_cloud(c, &keep)?;
        }
    }
    Ok(data)
}

fn load_classifier(cfg: &RunConfig, checkpoint: &Path) -> Result<Classifier> {
    let mut model = Classifier::new(cfg.classifier.clone(), cfg.seed)?;
    model.store.load(checkpoint)?;
    Ok(model)
}

fn sibling_config(checkpoint: &Path) -> Option<PathBuf> {
    let p = checkpoint.parent()?.join("config.resolved.toml");
    p.exists().then_some(p)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<u8> {
    let sibling = sibling_config(&args.checkpoint);
    let cfg = resolve(&args.run, sibling.as_deref())?;
    let (_, test) = cfg.datasets()?;
    let test = reduced_test_set(args, &cfg, test)?;
    let report: MetricsReport = match cfg.task {
        Task::Classification => {
            let model = load_classifier(&cfg, &args.checkpoint)?;
            check_classes(&test, model.config.num_classes, "classes")?;
            if let Some(small) = test.clouds.iter().map(|c| c.points.n()).min().filter(|&n| n < model.config.k) {
                return Err(Error::param(format!("{small} surviving points cannot support k = {}", model.config.k)));
            }
            evaluate_classification(&model, &test)?
        }
        Task::Segmentation => {
            let mut model = Segmenter::new(cfg.segmenter.clone(), cfg.seed)?;
            model.store.load(&args.checkpoint)?;
            check_classes(&test, model.config.num_part_labels, "part labels")?;
            evaluate_segmentation(&model, &test)?
        }
    };
    write(&args.run.out.join("eval_metrics.csv"), &report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(EXIT_OK)
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<u8> {
    inject_tie_rule_fault(args.inject_fault.is_some());
    let results = run_suite(args.filter.as_deref());
    inject_tie_rule_fault(false);
    let results = results?;
    let table = format_table(&results);
    print!("{table}");
    if let Some(dir) = &args.out {
        write(&dir.join("verify.txt"), &table)?;
    }
    let failed: Vec<String> =
        results.iter().filter(|r| !r.passed).map(|r| format!("{}/{}", r.family, r.name)).collect();
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("failed: {}", failed.join(", "));
        Ok(EXIT_VERIFY_FAILED)
    }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<u8> {
    let cfg = BenchConfig {
        sizes: args.sizes.clone(),
        ks: args.ks.clone(),
        widths: args.widths.clone(),
        repetitions: args.repetitions,
        classifier: !args.no_classifier,
        seed: args.seed,
    };
    let csv = bench_csv(&run_bench(&cfg)?);
    write(&args.out.join("bench.csv"), &csv)?;
    print!("{csv}");
    Ok(EXIT_OK)
}

pub fn cmd_export(args: &ExportArgs) -> Result<u8> {
    let sibling = sibling_config(&args.checkpoint);
    let cfg = resolve(&args.run, sibling.as_deref())?;
    if cfg.task != Task::Classification {
        return Err(Error::Config("distance export needs a classification run".into()));
    }
    let layer: DistanceLayer = args.layer.parse()?;
    let model = load_classifier(&cfg, &args.checkpoint)?;
    let (_, test) = cfg.datasets()?;
    let cloud = test
        .clouds
        .get(args.cloud)
        .ok_or_else(|| Error::param(format!("test split has {} clouds, asked for {}", test.len(), args.cloud)))?;
    let csv = export_feature_distances(&model, &cloud.points, args.index, layer)?;
    let path = args.run.out.join(format!("distances_{}_{}.csv", args.layer, args.index));
    write(&path, &csv)?;
    eprintln!("wrote {}", path.display());
    Ok(EXIT_OK)
}
