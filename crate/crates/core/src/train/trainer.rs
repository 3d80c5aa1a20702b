use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::metrics::{classification_metrics, miou_shapenet, MetricsReport};
use super::optim::SgdMomentum;
use super::robust::random_subsample;
use super::schedule::{cosine_lr, CosineSchedule};
use crate::data::{Dataset, LabeledCloud};
use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;
use crate::models::{Classifier, Forward, ParamStore, Segmenter};
use crate::tensor::{Real, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: Real,
    pub lr_min: Real,
    pub momentum: Real,
    pub augment: AugmentConfig,
    /// Checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Evaluate on the test set every this many epochs and after the last.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            batch_size: 32,
            lr_max: 0.1,
            lr_min: 0.001,
            momentum: 0.9,
            augment: AugmentConfig::default(),
            checkpoint_every: 10,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    /// Short schedule for small synthetic runs. Scale augmentation is off:
    /// with so few clouds it hides the size cue that separates the shapes.
    pub fn desk() -> Self {
        let augment = AugmentConfig { scale: false, ..AugmentConfig::default() };
        Self { epochs: 50, batch_size: 16, eval_every: 5, augment, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("at least one epoch is required".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch norm needs batches of at least two clouds".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} is outside [0, 1)", self.momentum)));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        self.augment.validate()?;
        cosine_lr(0, &self.schedule()).map(|_| ())
    }

    pub fn schedule(&self) -> CosineSchedule {
        CosineSchedule { lr_max: self.lr_max, lr_min: self.lr_min, total_epochs: self.epochs }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: Real,
    pub loss: Real,
    pub train_accuracy: Real,
    pub test_accuracy: Option<Real>,
    pub test_mean_class_accuracy: Option<Real>,
    pub test_miou: Option<Real>,
}

pub const METRICS_CSV_HEADER: &str = "epoch,lr,loss,train_accuracy,test_accuracy,test_mean_class_accuracy,test_miou";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<Real>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.loss,
            self.train_accuracy,
            opt(self.test_accuracy),
            opt(self.test_mean_class_accuracy),
            opt(self.test_miou)
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    pub final_metrics: Option<MetricsReport>,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions<'a> {
    /// Receives `metrics.csv`, `metrics.jsonl` and checkpoints.
    pub out_dir: Option<&'a Path>,
    /// Progress lines on stderr.
    pub progress: bool,
}

/// Anything the loop can fit: a parameter store, a batch loss and a test
/// evaluation.
pub trait Trainable {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Mean loss over the batch plus `(correct, counted)` predictions.
    fn batch_loss(
        &self,
        fwd: &mut Forward,
        clouds: &[&LabeledCloud],
        points: &[&FeatureMatrix],
    ) -> Result<(Var, usize, usize)>;
    fn evaluate(&self, data: &Dataset) -> Result<MetricsReport>;
}

fn argmax_rows(values: &[Real], width: usize) -> Vec<usize> {
    values.chunks(width).map(crate::models::argmax).collect()
}

impl Trainable for Classifier {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss(
        &self,
        fwd: &mut Forward,
        clouds: &[&LabeledCloud],
        points: &[&FeatureMatrix],
    ) -> Result<(Var, usize, usize)> {
        let labels: Vec<usize> = clouds
            .iter()
            .map(|c| c.class_label.ok_or_else(|| Error::Data("training cloud without class label".into())))
            .collect::<Result<_>>()?;
        let out = self.forward(fwd, points)?;
        let loss = fwd.tape.softmax_cross_entropy(out.logits, &labels)?;
        let pred = argmax_rows(fwd.tape.value(out.logits).data(), self.config.num_classes);
        let correct = pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        Ok((loss, correct, labels.len()))
    }

    fn evaluate(&self, data: &Dataset) -> Result<MetricsReport> {
        evaluate_classification(self, data)
    }
}

fn one_hot(category: Option<usize>, width: usize) -> Result<Option<Vec<Real>>> {
    if width == 0 {
        return Ok(None);
    }
    let c = category.ok_or_else(|| Error::Data("segmentation cloud without category".into()))?;
    if c >= width {
        return Err(Error::Data(format!("category {c} does not fit a one-hot of width {width}")));
    }
    let mut v = vec![0.0; width];
    v[c] = 1.0;
    Ok(Some(v))
}

fn categories_for(model: &Segmenter, clouds: &[&LabeledCloud]) -> Result<Option<Vec<Vec<Real>>>> {
    let w = model.config.category_vector_width;
    let v: Vec<Option<Vec<Real>>> = clouds.iter().map(|c| one_hot(c.category, w)).collect::<Result<_>>()?;
    Ok(if w == 0 { None } else { Some(v.into_iter().flatten().collect()) })
}

impl Trainable for Segmenter {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss(
        &self,
        fwd: &mut Forward,
        clouds: &[&LabeledCloud],
        points: &[&FeatureMatrix],
    ) -> Result<(Var, usize, usize)> {
        let mut labels = Vec::new();
        for c in clouds {
            c.validate()?;
            labels.extend(
                c.point_labels.as_ref().ok_or_else(|| Error::Data("training cloud without point labels".into()))?,
            );
        }
        let cats = categories_for(self, clouds)?;
        let out = self.forward(fwd, points, cats.as_deref())?;
        let loss = fwd.tape.softmax_cross_entropy(out.logits, &labels)?;
        let pred = argmax_rows(fwd.tape.value(out.logits).data(), self.config.num_part_labels);
        let correct = pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        Ok((loss, correct, labels.len()))
    }

    fn evaluate(&self, data: &Dataset) -> Result<MetricsReport> {
        evaluate_segmentation(self, data)
    }
}

const EVAL_BATCH: usize = 32;

/// Evaluation-mode class predictions, batched.
pub fn predict_classes(model: &Classifier, clouds: &[&FeatureMatrix]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(clouds.len());
    for chunk in clouds.chunks(EVAL_BATCH) {
        let logits = model.logits_batch(chunk)?;
        out.extend(argmax_rows(logits.data(), model.config.num_classes));
    }
    Ok(out)
}

pub fn evaluate_classification(model: &Classifier, data: &Dataset) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::param("cannot evaluate on an empty dataset"));
    }
    let truth = data.class_labels()?;
    let pts: Vec<&FeatureMatrix> = data.clouds.iter().map(|c| &c.points).collect();
    let pred = predict_classes(model, &pts)?;
    classification_metrics(&pred, &truth, model.config.num_classes)
}

/// Evaluates on uniformly subsampled copies of every cloud.
pub fn random_dropout_eval<R: Rng + ?Sized>(
    model: &Classifier,
    data: &Dataset,
    keep_fraction: Real,
    rng: &mut R,
) -> Result<MetricsReport> {
    let mut reduced = data.clone();
    for c in &mut reduced.clouds {
        c.points = random_subsample(&c.points, keep_fraction, rng)?;
        c.point_labels = None;
        if c.points.n() < model.config.k {
            return Err(Error::param(format!(
                "{} surviving points cannot support k = {}",
                c.points.n(),
                model.config.k
            )));
        }
    }
    evaluate_classification(model, &reduced)
}

/// Per-point predictions restricted to each shape's part set, scored by
/// mean shape IoU.
pub fn evaluate_segmentation(model: &Segmenter, data: &Dataset) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::param("cannot evaluate on an empty dataset"));
    }
    let part_sets = &data.metadata.part_sets;
    let (mut preds, mut truth, mut cats) = (Vec::new(), Vec::new(), Vec::new());
    for cloud in &data.clouds {
        cloud.validate()?;
        let cat = cloud.category.ok_or_else(|| Error::Data("segmentation cloud without category".into()))?;
        let parts = part_sets.get(cat).ok_or_else(|| Error::Data(format!("unknown category {cat}")))?;
        let onehot = one_hot(Some(cat), model.config.category_vector_width)?;
        let logits = model.segment(&cloud.points, onehot.as_deref())?;
        let (n, p) = logits.dims2()?;
        if let Some(&bad) = parts.iter().find(|&&l| l >= p) {
            return Err(Error::Data(format!("part label {bad} exceeds the model's {p} outputs")));
        }
        let pred = (0..n)
            .map(|i| {
                let row = logits.row(i);
                let mut best = parts[0];
                for &l in &parts[1..] {
                    if row[l] > row[best] {
                        best = l;
                    }
                }
                best
            })
            .collect();
        preds.push(pred);
        truth.push(cloud.point_labels.clone().ok_or_else(|| Error::Data("cloud without point labels".into()))?);
        cats.push(cat);
    }
    miou_shapenet(&preds, &truth, &cats, part_sets)
}

struct Logs {
    csv: File,
    jsonl: File,
}

impl Logs {
    fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("metrics.csv");
        let mut csv = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        writeln!(csv, "{METRICS_CSV_HEADER}").map_err(|e| Error::io(&csv_path, e))?;
        let jsonl_path = dir.join("metrics.jsonl");
        let jsonl = File::create(&jsonl_path).map_err(|e| Error::io(&jsonl_path, e))?;
        Ok(Self { csv, jsonl })
    }

    fn write(&mut self, dir: &Path, log: &EpochLog) -> Result<()> {
        let json = serde_json::to_string(log).expect("epoch log serialises");
        writeln!(self.csv, "{}", log.csv_row()).map_err(|e| Error::io(dir.join("metrics.csv"), e))?;
        writeln!(self.jsonl, "{json}").map_err(|e| Error::io(dir.join("metrics.jsonl"), e))
    }
}

/// SGD with momentum under a per-epoch cosine schedule. Batches are drawn
/// from a seeded shuffle; a trailing batch of one cloud is skipped because
/// batch norm cannot normalise it.
pub fn train<M: Trainable>(
    model: &mut M,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    seed: u64,
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::param("training needs at least two clouds"));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let mut opt = SgdMomentum::new(cfg.momentum);
    let mut logs = opts.out_dir.map(Logs::open).transpose()?;
    let schedule = cfg.schedule();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut final_metrics = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, &schedule)?;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches, mut correct, mut counted) = (0.0, 0usize, 0usize, 0usize);
        for idx in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let clouds: Vec<&LabeledCloud> = idx.iter().map(|&i| &train_set.clouds[i]).collect();
            let points: Vec<FeatureMatrix> = clouds
                .iter()
                .map(|c| augment(&c.points, &cfg.augment, &mut rng))
                .collect::<Result<_>>()?;
            let refs: Vec<&FeatureMatrix> = points.iter().collect();
            let dropout_seed = rng.random::<u64>();
            let (record, grads, loss) = {
                let mut fwd = Forward::new(model.store(), true, dropout_seed);
                let (loss, c, n) = model.batch_loss(&mut fwd, &clouds, &refs)?;
                correct += c;
                counted += n;
                let record = fwd.finish();
                let grads = record.tape.backward(loss)?;
                let value = record.tape.value(loss).item()?;
                (record, grads, value)
            };
            let param_grads = record.param_grads(model.store(), &grads);
            record.apply_running_updates(model.store_mut());
            opt.step(model.store_mut(), &param_grads, lr)?;
            loss_sum += loss;
            batches += 1;
        }
        let last = epoch + 1 == cfg.epochs;
        let metrics = match test_set {
            Some(t) if last || (epoch + 1) % cfg.eval_every == 0 => Some(model.evaluate(t)?),
            _ => None,
        };
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            loss: loss_sum / batches.max(1) as Real,
            train_accuracy: correct as Real / counted.max(1) as Real,
            test_accuracy: metrics.as_ref().map(|m| m.overall_accuracy),
            test_mean_class_accuracy: metrics.as_ref().map(|m| m.mean_class_accuracy),
            test_miou: metrics.as_ref().and_then(|m| m.miou),
        };
        if opts.progress {
            eprintln!(
                "epoch {}/{} lr {:.5} loss {:.4} train acc {:.3}{}",
                log.epoch,
                cfg.epochs,
                lr,
                log.loss,
                log.train_accuracy,
                log.test_accuracy.map(|a| format!(" test acc {a:.3}")).unwrap_or_default()
            );
        }
        if let (Some(dir), Some(l)) = (opts.out_dir, logs.as_mut()) {
            l.write(dir, &log)?;
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                model.store().save(&dir.join(format!("checkpoint_epoch{:04}.ckpt", epoch + 1)))?;
            }
            if last {
                model.store().save(&dir.join("final.ckpt"))?;
            }
        }
        history.push(log);
        if last {
            final_metrics = metrics;
        }
    }
    Ok(TrainOutcome { history, final_metrics, seconds: start.elapsed().as_secs_f64() })
}
