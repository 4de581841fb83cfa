//! Training, evaluation, equivariance checking and dataset generation behind
//! the `gpx` command line.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::cloud_ops::{sample_and_group, transform_cloud, LiftedCloud, PointCloud};
use crate::data_io::{
    augment, gen_scene_with, gen_shapes_with, write_cloud, AugmentMode, DatasetIndex, IndexEntry, ShapeClass, Split,
    FLOOR_LABEL,
};
use crate::diffcore::{adam_step, AdamConfig, AdamState, Parameters, Real, Tensor};
use crate::equivariant_layers::{g_layer, CoordMode, GLayerParams, LayerKind};
use crate::group_algebra::{act_on_lifted, dist2, make_group, FiniteRotationGroup, GroupName, RigidMotion, Vec3};
use crate::models::{build_model, parse_usize, Model, ModelConfig, StageSpec, Target, Task};
use crate::{Error, Result};

/// Floating point width used for training and evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "32",
            Precision::F64 => "64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "32" | "f32" => Ok(Precision::F32),
            "64" | "f64" => Ok(Precision::F64),
            _ => Err(Error::ConfigError(format!("precision must be 32 or 64, got `{s}`"))),
        }
    }
}

/// Architecture size presets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModelPreset {
    /// The full-size defaults of [`ModelConfig::classify`] and
    /// [`ModelConfig::segment`].
    Default,
    /// A smaller trunk that trains on one CPU core in minutes.
    #[default]
    Desk,
}

impl FromStr for ModelPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(ModelPreset::Default),
            "desk" => Ok(ModelPreset::Desk),
            _ => Err(Error::ConfigError(format!("unknown model preset `{s}`"))),
        }
    }
}

impl fmt::Display for ModelPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelPreset::Default => "default",
            ModelPreset::Desk => "desk",
        })
    }
}

/// Builds the model config for a preset.
pub fn preset_config(
    preset: ModelPreset,
    task: Task,
    backbone: LayerKind,
    group: GroupName,
    num_classes: usize,
) -> ModelConfig {
    let st = |k, c, width| StageSpec { k, c, width };
    match (preset, task) {
        (ModelPreset::Default, Task::Classify) => ModelConfig::classify(backbone, group, num_classes),
        (ModelPreset::Default, Task::Segment) => ModelConfig::segment(backbone, group, num_classes),
        (ModelPreset::Desk, Task::Classify) => ModelConfig {
            stages: vec![st(32, 16, 16), st(8, 8, 32), st(1, 8, 64)],
            head_widths: vec![32],
            ..ModelConfig::classify(backbone, group, num_classes)
        },
        (ModelPreset::Desk, Task::Segment) => ModelConfig {
            stages: vec![st(64, 12, 16), st(16, 8, 32)],
            head_widths: vec![16],
            ..ModelConfig::segment(backbone, group, num_classes)
        },
    }
}

/// Everything a training run needs; read from `key=value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub backbone: LayerKind,
    pub group: GroupName,
    pub preset: ModelPreset,
    /// Optional overrides of the preset architecture.
    pub stages: Option<Vec<StageSpec>>,
    pub head: Option<Vec<usize>>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub train_data: PathBuf,
    pub test_data: Option<PathBuf>,
    pub augment: AugmentMode,
    pub eval_rotate: AugmentMode,
    pub output: PathBuf,
    pub log: Option<PathBuf>,
    pub workers: usize,
    pub precision: Precision,
}

impl RunConfig {
    pub fn new(task: Task, backbone: LayerKind, group: GroupName, train_data: PathBuf, output: PathBuf) -> Self {
        RunConfig {
            task,
            backbone,
            group,
            preset: ModelPreset::Desk,
            stages: None,
            head: None,
            epochs: 30,
            batch: 16,
            lr: 1e-3,
            seed: 42,
            train_data,
            test_data: None,
            augment: AugmentMode::None,
            eval_rotate: AugmentMode::None,
            output,
            log: None,
            workers: 1,
            precision: Precision::F32,
        }
    }

    /// Parses `key=value` lines; relative paths are resolved against `base`.
    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigError(format!("expected key=value, got `{line}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let take = |map: &mut BTreeMap<String, String>, k: &str| map.remove(k);
        let need = |map: &mut BTreeMap<String, String>, k: &str| {
            map.remove(k).ok_or_else(|| Error::ConfigError(format!("run config lacks `{k}`")))
        };
        let path = |p: String| {
            let p = PathBuf::from(p);
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        let mut cfg = RunConfig::new(
            need(&mut map, "task")?.parse()?,
            need(&mut map, "backbone")?.parse()?,
            need(&mut map, "group")?.parse()?,
            path(need(&mut map, "train")?),
            path(need(&mut map, "output")?),
        );
        if let Some(v) = take(&mut map, "model") {
            cfg.preset = v.parse()?;
        }
        if let Some(v) = take(&mut map, "stages") {
            let parsed = ModelConfig::from_text(&format!("task=segment\nbackbone=g_pointnet\ngroup=g1\nnum_classes=1\nstages={v}\n"))?;
            cfg.stages = Some(parsed.stages);
        }
        if let Some(v) = take(&mut map, "head") {
            cfg.head = Some(v.split(',').filter(|s| !s.is_empty()).map(|s| parse_usize("head", s)).collect::<Result<_>>()?);
        }
        if let Some(v) = take(&mut map, "epochs") {
            cfg.epochs = parse_usize("epochs", &v)?;
        }
        if let Some(v) = take(&mut map, "batch") {
            cfg.batch = parse_usize("batch", &v)?;
        }
        if let Some(v) = take(&mut map, "lr") {
            cfg.lr = v.parse().map_err(|_| Error::ConfigError(format!("bad learning rate `{v}`")))?;
        }
        if let Some(v) = take(&mut map, "seed") {
            cfg.seed = v.parse().map_err(|_| Error::ConfigError(format!("bad seed `{v}`")))?;
        }
        if let Some(v) = take(&mut map, "test") {
            cfg.test_data = Some(path(v));
        }
        if let Some(v) = take(&mut map, "augment") {
            cfg.augment = v.parse()?;
        }
        if let Some(v) = take(&mut map, "eval_rotate") {
            cfg.eval_rotate = v.parse()?;
        }
        if let Some(v) = take(&mut map, "log") {
            cfg.log = Some(path(v));
        }
        if let Some(v) = take(&mut map, "workers") {
            cfg.workers = parse_usize("workers", &v)?;
        }
        if let Some(v) = take(&mut map, "precision") {
            cfg.precision = v.parse()?;
        }
        if let Some(k) = map.keys().next() {
            return Err(Error::ConfigError(format!("unknown run config key `{k}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_text(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::ConfigError("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::ConfigError("batch must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::ConfigError("workers must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::ConfigError(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        let mut cfg = preset_config(self.preset, self.task, self.backbone, self.group, num_classes);
        if let Some(s) = &self.stages {
            cfg.stages = s.clone();
        }
        if let Some(h) = &self.head {
            cfg.head_widths = h.clone();
        }
        cfg
    }
}

/// A loaded dataset split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub samples: Vec<(PointCloud, Option<usize>)>,
}

impl Dataset {
    pub fn load(root: &Path, split: Split) -> Result<Self> {
        let index = DatasetIndex::read(root, split)?;
        Ok(Dataset {
            samples: index.load()?,
            class_names: index.class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    fn target(&self, i: usize, task: Task) -> Result<Target<'_>> {
        let (cloud, label) = &self.samples[i];
        match (task, label, &cloud.labels) {
            (Task::Classify, Some(l), _) => Ok(Target::Class(*l)),
            (Task::Segment, None, Some(l)) => Ok(Target::PerPoint(l)),
            _ => Err(Error::ConfigError(format!(
                "sample {i} does not carry {} labels",
                if task == Task::Classify { "per-cloud" } else { "per-point" }
            ))),
        }
    }
}

/// Seeded sub-streams of one run seed, one per purpose.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
}

impl EpochLog {
    pub fn to_json(&self) -> String {
        json!({"epoch": self.epoch, "train_loss": self.train_loss, "train_acc": self.train_acc}).to_string()
    }
}

struct SampleResult<T> {
    loss: f64,
    grads: Vec<Vec<T>>,
    correct: usize,
    total: usize,
}

fn count_correct<T: Real>(logits: &Tensor<T>, target: Target<'_>) -> (usize, usize) {
    let preds = argmax_rows(&logits.to_f64());
    match target {
        Target::Class(c) => ((preds[0] == c) as usize, 1),
        Target::PerPoint(l) => (preds.iter().zip(l).filter(|(p, l)| p == l).count(), l.len()),
    }
}

/// Row-wise argmax, first maximum on ties.
pub fn argmax_rows(logits: &Tensor<f64>) -> Vec<usize> {
    let (rows, cols) = logits.dims2().expect("logits are a matrix");
    (0..rows)
        .map(|r| {
            let row = &logits.data()[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn run_samples<T: Real>(
    model: &Model<T>,
    inputs: &[(PointCloud, Target<'_>)],
    workers: usize,
) -> Result<Vec<SampleResult<T>>> {
    let one = |(x, target): &(PointCloud, Target<'_>)| -> Result<SampleResult<T>> {
        let (loss, grads, logits) = model.loss_and_grad(x, *target)?;
        let (correct, total) = count_correct(&logits, *target);
        Ok(SampleResult { loss, grads, correct, total })
    };
    if workers <= 1 || inputs.len() <= 1 {
        return inputs.iter().map(one).collect();
    }
    let chunk = inputs.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(one).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(inputs.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

/// Mean loss and accuracy of `model` over a dataset without updating it.
fn score<T: Real>(model: &Model<T>, data: &Dataset, task: Task) -> Result<(f64, f64)> {
    let (mut loss, mut correct, mut total) = (0.0, 0, 0);
    for i in 0..data.samples.len() {
        let target = data.target(i, task)?;
        let logits = model.forward(&data.samples[i].0)?;
        let labels: Vec<usize> = match target {
            Target::Class(c) => vec![c],
            Target::PerPoint(l) => l.to_vec(),
        };
        loss += crate::models::loss(&logits, &labels)?;
        let (c, t) = count_correct(&logits, target);
        correct += c;
        total += t;
    }
    let n = data.samples.len().max(1) as f64;
    Ok((loss / n, correct as f64 / total.max(1) as f64))
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub model: Model<f64>,
    pub logs: Vec<EpochLog>,
}

/// Trains on `data`, calling `on_epoch` after the initial evaluation
/// (epoch 0) and after every epoch.
pub fn train_on(cfg: &RunConfig, data: &Dataset, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.samples.is_empty() {
        return Err(Error::ConfigError("the training set is empty".into()));
    }
    let model_cfg = cfg.model_config(data.num_classes());
    let model = build_model(&model_cfg, &mut stream(cfg.seed, STREAM_INIT))?;
    match cfg.precision {
        Precision::F32 => train_typed(cfg, data, model.cast::<f32>(), &mut on_epoch),
        Precision::F64 => train_typed(cfg, data, model, &mut on_epoch),
    }
}

fn train_typed<T: Real>(
    cfg: &RunConfig,
    data: &Dataset,
    mut model: Model<T>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let mut shuffle_rng = stream(cfg.seed, STREAM_SHUFFLE);
    let mut aug_rng = stream(cfg.seed, STREAM_AUGMENT);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new();
    let mut logs = Vec::with_capacity(cfg.epochs + 1);

    let (loss0, acc0) = score(&model, data, cfg.task)?;
    let first = EpochLog {
        epoch: 0,
        train_loss: loss0,
        train_acc: acc0,
    };
    on_epoch(&first);
    logs.push(first);

    let mut order: Vec<usize> = (0..data.samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct, mut total) = (0.0, 0, 0);
        for batch in order.chunks(cfg.batch) {
            let mut inputs = Vec::with_capacity(batch.len());
            for &i in batch {
                let x = augment(&data.samples[i].0, cfg.augment, &model.group, &mut aug_rng)?;
                inputs.push((x, data.target(i, cfg.task)?));
            }
            let results = run_samples(&model, &inputs, cfg.workers)?;
            let mut grads: Vec<Vec<T>> = model.params.tensors().iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
            for r in &results {
                loss_sum += r.loss;
                correct += r.correct;
                total += r.total;
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    for (a, &v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
            }
            let scale = T::of(1.0 / batch.len() as f64);
            for g in &mut grads {
                g.iter_mut().for_each(|v| *v = *v * scale);
            }
            if !grads.iter().flatten().all(|v| v.is_finite()) {
                return Err(Error::DivergenceError {
                    epoch,
                    loss: f64::NAN,
                });
            }
            adam_step(&mut model.params.tensors_mut(), &grads, &mut state, &adam)?;
        }
        let train_loss = loss_sum / data.samples.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::DivergenceError { epoch, loss: train_loss });
        }
        let log = EpochLog {
            epoch,
            train_loss,
            train_acc: correct as f64 / total.max(1) as f64,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(TrainOutcome {
        model: model.cast::<f64>(),
        logs,
    })
}

/// `gpx train`: loads the data named in the config, trains, writes the
/// checkpoint with its config sidecar and the metrics log. Each epoch line is
/// also written to `out`.
pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = Dataset::load(&cfg.train_data, Split::Train)?;
    let mut lines = Vec::new();
    let mut io_err = None;
    let outcome = train_on(cfg, &data, |log| {
        let line = log.to_json();
        if let Err(e) = writeln!(out, "{line}") {
            io_err.get_or_insert(e);
        }
        lines.push(line);
    })?;
    if let Some(e) = io_err {
        return Err(Error::io("<stdout>", e));
    }
    if let Some(parent) = cfg.output.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    outcome.model.save(&cfg.output)?;
    if let Some(log) = &cfg.log {
        let mut text = lines.join("\n");
        text.push('\n');
        std::fs::write(log, text).map_err(|e| Error::io(log, e))?;
    }
    Ok(outcome)
}

/// Evaluation metrics. For classification `per_class` holds accuracies; for
/// segmentation it holds IoUs, `None` for classes absent from both
/// prediction and ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub rotate: AugmentMode,
    pub samples: usize,
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    pub miou: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut v = json!({
            "task": self.task.to_string(),
            "rotate": self.rotate.to_string(),
            "samples": self.samples,
            "accuracy": self.accuracy,
        });
        match self.task {
            Task::Classify => v["per_class_accuracy"] = json!(self.per_class),
            Task::Segment => {
                v["miou"] = json!(self.miou);
                v["per_class_iou"] = json!(self.per_class);
                v["miou_convention"] = json!("classes absent from both prediction and ground truth are skipped");
            }
        }
        v.to_string()
    }
}

/// Overall and per-class accuracy. Classes with no samples get `None`.
pub fn classification_metrics(preds: &[usize], labels: &[usize], classes: usize) -> (f64, Vec<Option<f64>>) {
    let mut hit = vec![0usize; classes];
    let mut count = vec![0usize; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        count[l] += 1;
        hit[l] += (p == l) as usize;
    }
    let correct: usize = hit.iter().sum();
    let acc = correct as f64 / preds.len().max(1) as f64;
    let per = hit
        .iter()
        .zip(&count)
        .map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64))
        .collect();
    (acc, per)
}

/// Per-class IoU `TP / (TP + FP + FN)` and their mean over classes with a
/// nonzero union.
pub fn iou_metrics(preds: &[usize], labels: &[usize], classes: usize) -> (Option<f64>, Vec<Option<f64>>) {
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fneg = vec![0usize; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            tp[l] += 1;
        } else {
            fp[p] += 1;
            fneg[l] += 1;
        }
    }
    let per: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let union = tp[c] + fp[c] + fneg[c];
            (union > 0).then(|| tp[c] as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let miou = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    (miou, per)
}

/// Logits for every sample after a seeded rotation, computed at the given
/// precision.
pub fn predict(
    model: &Model<f64>,
    data: &Dataset,
    rotate: AugmentMode,
    seed: u64,
    precision: Precision,
) -> Result<Vec<Tensor<f64>>> {
    let mut rng = stream(seed, STREAM_AUGMENT);
    let m32 = model.cast::<f32>();
    data.samples
        .iter()
        .map(|(x, _)| {
            let x = augment(x, rotate, &model.group, &mut rng)?;
            match precision {
                Precision::F32 => m32.forward(&x),
                Precision::F64 => model.forward(&x),
            }
        })
        .collect()
}

/// Scores a model on a dataset under a rotation protocol.
pub fn evaluate(
    model: &Model<f64>,
    data: &Dataset,
    rotate: AugmentMode,
    seed: u64,
    precision: Precision,
) -> Result<EvalReport> {
    let classes = model.config.num_classes;
    if data.num_classes() != classes {
        return Err(Error::ConfigError(format!(
            "checkpoint predicts {classes} classes, dataset has {}",
            data.num_classes()
        )));
    }
    let task = model.config.task;
    let logits = predict(model, data, rotate, seed, precision)?;
    let (mut preds, mut labels) = (Vec::new(), Vec::new());
    for (i, l) in logits.iter().enumerate() {
        let p = argmax_rows(l);
        match data.target(i, task)? {
            Target::Class(c) => {
                preds.push(p[0]);
                labels.push(c);
            }
            Target::PerPoint(ls) => {
                preds.extend(p);
                labels.extend_from_slice(ls);
            }
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelError { label: bad, classes });
    }
    let (accuracy, per_class, miou) = match task {
        Task::Classify => {
            let (a, per) = classification_metrics(&preds, &labels, classes);
            (a, per, None)
        }
        Task::Segment => {
            let (a, _) = classification_metrics(&preds, &labels, classes);
            let (miou, per) = iou_metrics(&preds, &labels, classes);
            (a, per, miou)
        }
    };
    Ok(EvalReport {
        task,
        rotate,
        samples: data.samples.len(),
        accuracy,
        per_class,
        miou,
    })
}

pub fn cmd_eval(checkpoint: &Path, data: &Path, rotate: AugmentMode, seed: u64, precision: Precision) -> Result<EvalReport> {
    let model = Model::load(checkpoint)?;
    let data = Dataset::load(data, Split::Test)?;
    evaluate(&model, &data, rotate, seed, precision)
}

/// Settings for the both-paths equivariance oracle.
#[derive(Clone, Debug)]
pub struct EquivSettings {
    pub group: GroupName,
    pub kind: LayerKind,
    pub trials: usize,
    pub tol: f64,
    pub precision: Precision,
    pub coords: CoordMode,
    pub seed: u64,
    pub points: usize,
}

impl EquivSettings {
    pub fn new(group: GroupName, kind: LayerKind) -> Self {
        EquivSettings {
            group,
            kind,
            trials: 20,
            tol: 1e-10,
            precision: Precision::F64,
            coords: CoordMode::Conjugated,
            seed: 0,
            points: 48,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivReport {
    pub group: GroupName,
    pub kind: LayerKind,
    pub checks: usize,
    pub layer_violation: f64,
    pub model_violation: f64,
    pub tol: f64,
}

impl EquivReport {
    pub fn max_violation(&self) -> f64 {
        self.layer_violation.max(self.model_violation)
    }

    pub fn passed(&self) -> bool {
        self.max_violation() <= self.tol
    }

    pub fn to_json(&self) -> String {
        json!({
            "group": self.group.to_string(),
            "layer": self.kind.to_string(),
            "checks": self.checks,
            "layer_violation": self.layer_violation,
            "model_violation": self.model_violation,
            "tol": self.tol,
            "result": if self.passed() { "PASS" } else { "FAIL" },
        })
        .to_string()
    }
}

/// Grid spacing of generated test clouds. Coordinates and translations on a
/// dyadic grid keep translations exact in floating point.
const GRID: f64 = 1.0 / 4096.0;

/// A random cloud whose pairwise distances are all distinct, so sampling and
/// grouping have no ties to break.
pub fn random_tie_free_positions<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Vec3> {
    loop {
        let pts: Vec<Vec3> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-4096i32..=4096) as f64 * GRID))
            .collect();
        let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in 0..i {
                d.push(dist2(pts[i], pts[j]));
            }
        }
        d.sort_by(f64::total_cmp);
        if d.windows(2).all(|w| w[1] - w[0] > 1e-9) && d.first().is_none_or(|&v| v > 1e-9) {
            return pts;
        }
    }
}

fn random_translation<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    std::array::from_fn(|_| rng.random_range(-8192i32..=8192) as f64 * GRID)
}

fn layer_violation<T: Real>(
    x: &LiftedCloud<T>,
    params: &GLayerParams<T>,
    m: &RigidMotion,
    coords: CoordMode,
) -> Result<f64> {
    let nbr = sample_and_group(&x.positions, params.k, params.c)?;
    let y = g_layer(x, params, &nbr, coords)?;
    let mx = act_on_lifted(m, x)?;
    let nbr_m = sample_and_group(&mx.positions, params.k, params.c)?;
    if nbr_m != nbr {
        return Err(Error::ConfigError("sampling picked different indices on the moved cloud".into()));
    }
    let y_m = g_layer(&mx, params, &nbr_m, coords)?;
    Ok(act_on_lifted(m, &y)?.features.max_abs_diff(&y_m.features))
}

fn equiv_typed<T: Real>(s: &EquivSettings, group: Arc<FiniteRotationGroup>) -> Result<EquivReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let (d_in, d_out, k, c) = (3, 4, 12, 8);
    let mut model_cfg = preset_config(ModelPreset::Desk, Task::Classify, s.kind, s.group, 5);
    model_cfg.stages = vec![
        StageSpec { k: 16, c: 8, width: 8 },
        StageSpec { k: 4, c: 4, width: 12 },
        StageSpec { k: 1, c: 4, width: 16 },
    ];
    model_cfg.head_widths = vec![8];
    let (mut lv, mut mv, mut checks) = (0.0f64, 0.0f64, 0);
    for _ in 0..s.trials {
        let params = GLayerParams::<f64>::init(s.kind, d_in, d_out, k, c, &mut rng)?.cast::<T>();
        let model = build_model(&model_cfg, &mut rng)?.cast::<T>();
        let positions = random_tie_free_positions(&mut rng, s.points);
        let data = (0..s.points * group.order() * d_in).map(|_| T::of(rng.random_range(-1.0..1.0))).collect();
        let x = LiftedCloud::new(positions.clone(), group.clone(), Tensor::new(vec![s.points, group.order(), d_in], data)?)?;
        let cloud = PointCloud::with_unit_features(positions, None)?;
        let base = model_logits(&model, &cloud, s.coords)?;
        for h0 in 0..group.order() {
            let m = RigidMotion::in_group(group.clone(), h0, random_translation(&mut rng))?;
            lv = lv.max(layer_violation(&x, &params, &m, s.coords)?);
            let moved = model_logits(&model, &transform_cloud(&m, &cloud)?, s.coords)?;
            mv = mv.max(base.max_abs_diff(&moved));
            checks += 1;
        }
    }
    Ok(EquivReport {
        group: s.group,
        kind: s.kind,
        checks,
        layer_violation: lv,
        model_violation: mv,
        tol: s.tol,
    })
}

fn model_logits<T: Real>(model: &Model<T>, x: &PointCloud, coords: CoordMode) -> Result<Tensor<f64>> {
    let tape = crate::diffcore::Tape::new();
    let bound = model.bind(&tape);
    Ok(model.logits_var(&tape, &bound, x, coords)?.to_tensor().to_f64())
}

/// Runs the equivariance oracle on random tie-free clouds, every group
/// element as rotation and random translations, for one layer and for a
/// small classifier built from it.
pub fn equiv_check(s: &EquivSettings) -> Result<EquivReport> {
    if !(s.tol > 0.0) {
        return Err(Error::ConfigError(format!("tolerance {} must be positive", s.tol)));
    }
    let group = Arc::new(make_group(s.group)?);
    match s.precision {
        Precision::F32 => equiv_typed::<f32>(s, group),
        Precision::F64 => equiv_typed::<f64>(s, group),
    }
}

pub fn cmd_group_info(name: &str) -> Result<String> {
    Ok(crate::group_algebra::make_group_by_name(name)?.info_text())
}

/// Flags of `gpx gen-data`.
#[derive(Clone, Debug)]
pub struct GenDataSettings {
    pub task: Task,
    pub classes: usize,
    pub train: usize,
    pub test: usize,
    pub points: usize,
    pub noise: f64,
    pub objects: usize,
    pub seed: u64,
}

/// Writes `<out>/train` and `<out>/test`, each with numbered cloud files and
/// an `index.txt`. Returns the number of clouds per split.
pub fn cmd_gen_data(s: &GenDataSettings, out: &Path) -> Result<(usize, usize)> {
    if s.classes == 0 || s.classes > ShapeClass::ALL.len() {
        return Err(Error::ConfigError(format!(
            "--classes must be between 1 and {}, got {}",
            ShapeClass::ALL.len(),
            s.classes
        )));
    }
    let classes = &ShapeClass::ALL[..s.classes];
    for (split, count, id) in [(Split::Train, s.train, 0u64), (Split::Test, s.test, 1)] {
        let dir = out.join(split.to_string());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut rng = stream(s.seed, id);
        let (samples, class_names): (Vec<(PointCloud, Option<usize>)>, Vec<String>) = match s.task {
            Task::Classify => (
                gen_shapes_with(classes, count, s.points, s.noise, &mut rng)?
                    .into_iter()
                    .map(|(c, l)| (c, Some(l)))
                    .collect(),
                classes.iter().map(|c| c.name().to_string()).collect(),
            ),
            Task::Segment => {
                let scenes = (0..count)
                    .map(|_| Ok((gen_scene_with(s.objects, s.points, &mut rng)?, None)))
                    .collect::<Result<_>>()?;
                let mut names = vec!["floor".to_string()];
                names.extend(ShapeClass::ALL.iter().map(|c| c.name().to_string()));
                debug_assert_eq!(FLOOR_LABEL, 0);
                (scenes, names)
            }
        };
        let mut entries = Vec::with_capacity(samples.len());
        for (i, (cloud, label)) in samples.iter().enumerate() {
            let name = PathBuf::from(format!("{i:05}.txt"));
            write_cloud(&dir.join(&name), cloud)?;
            entries.push(IndexEntry {
                path: name,
                label: *label,
            });
        }
        DatasetIndex {
            root: dir,
            split,
            class_names,
            entries,
        }
        .write()?;
    }
    Ok((s.train, s.test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_examples() {
        let labels: Vec<usize> = (0..10).map(|i| i % 5).collect();
        let (acc, _) = classification_metrics(&labels, &labels, 5);
        assert_eq!(acc, 1.0);
        let (acc, per) = classification_metrics(&[0; 10], &labels, 5);
        assert_eq!(acc, 0.2);
        assert_eq!(per[0], Some(1.0));
        assert_eq!(per[1], Some(0.0));

        let (miou, per) = iou_metrics(&labels, &labels, 6);
        assert_eq!(miou, Some(1.0));
        assert_eq!(per[5], None);
        // class 0: TP 1, FN 1; class 1: FP 1
        let (miou, per) = iou_metrics(&[0, 1], &[0, 0], 3);
        assert_eq!(per, vec![Some(0.5), Some(0.0), None]);
        assert_eq!(miou, Some(0.25));
    }

    #[test]
    fn run_config_parsing() {
        let text = "task=cls\nbackbone=g_pointconv\ngroup=g4\ntrain=data/train\noutput=out/m.gpxm\nepochs=3\nstages=16:8:8,1:8:16\n";
        let cfg = RunConfig::from_text(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.train_data, PathBuf::from("/base/data/train"));
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.model_config(5).stages.len(), 2);
        let zero = text.replace("epochs=3", "epochs=0");
        assert!(matches!(RunConfig::from_text(&zero, Path::new(".")), Err(Error::ConfigError(_))));
        let extra = format!("{text}colour=red\n");
        assert!(matches!(RunConfig::from_text(&extra, Path::new(".")), Err(Error::ConfigError(_))));
    }

    #[test]
    fn equiv_check_trivial_group_is_exact() {
        for kind in [LayerKind::GPointNet, LayerKind::GPointConv] {
            let mut s = EquivSettings::new(GroupName::G1, kind);
            s.trials = 3;
            let r = equiv_check(&s).unwrap();
            assert_eq!(r.max_violation(), 0.0);
            assert!(r.passed());
        }
    }

    #[test]
    fn equiv_check_catches_unconjugated_offsets() {
        let mut s = EquivSettings::new(GroupName::G4, LayerKind::GPointNet);
        s.trials = 2;
        assert!(equiv_check(&s).unwrap().passed());
        s.coords = CoordMode::Unconjugated;
        let r = equiv_check(&s).unwrap();
        assert!(r.layer_violation > 1e-2 && !r.passed());
    }

    #[test]
    fn gen_data_counts() {
        let dir = tempfile::tempdir().unwrap();
        let s = GenDataSettings {
            task: Task::Classify,
            classes: 3,
            train: 6,
            test: 3,
            points: 32,
            noise: 0.01,
            objects: 0,
            seed: 1,
        };
        cmd_gen_data(&s, dir.path()).unwrap();
        let train = Dataset::load(&dir.path().join("train"), Split::Train).unwrap();
        assert_eq!(train.samples.len(), 6);
        assert_eq!(train.num_classes(), 3);
        let bad = GenDataSettings { classes: 0, ..s };
        assert!(matches!(cmd_gen_data(&bad, dir.path()), Err(Error::ConfigError(_))));
    }
}
