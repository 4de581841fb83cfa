//! Classification and segmentation networks built from lifted layers.
//!
//! Classify: lift → grouping stages (ReLU after each) → group pool → global
//! pool → head MLP. Segment: lift → grouping stages → one feature
//! propagation step per stage back to the input points → group pool →
//! per-point head MLP.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::cloud_ops::{sample_and_group, PointCloud};
use crate::diffcore::{
    read_checkpoint_file, write_checkpoint_file, BoundMlp, Gradients, MlpParams, Parameters, Real, ReduceMode, Tape,
    Tensor, Var,
};
use crate::equivariant_layers::{
    feature_propagate_var, g_layer_forward, global_pool_var, group_pool_var, lift_on_tape, BoundGLayer, CoordMode,
    GLayerParams, LayerKind, LiftedVar,
};
use crate::group_algebra::{make_group, FiniteRotationGroup, GroupName};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Classify,
    Segment,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classify => "classify",
            Task::Segment => "segment",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classify" | "cls" => Ok(Task::Classify),
            "segment" | "seg" => Ok(Task::Segment),
            _ => Err(Error::ConfigError(format!("unknown task `{s}`"))),
        }
    }
}

/// One grouping stage: `k` centroids, `c` neighbors each, `width` output
/// channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub k: usize,
    pub c: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub backbone: LayerKind,
    pub group: GroupName,
    /// Scalar feature channels per input point.
    pub in_dim: usize,
    pub stages: Vec<StageSpec>,
    /// Hidden widths of the head MLP.
    pub head_widths: Vec<usize>,
    pub num_classes: usize,
    pub pool_mode: ReduceMode,
    pub group_pool_mode: ReduceMode,
}

fn stage(k: usize, c: usize, width: usize) -> StageSpec {
    StageSpec { k, c, width }
}

impl ModelConfig {
    /// Three stages (K 128/32/1, C 16/16/32, widths 32/64/128) and a
    /// 128 → 64 → classes head.
    pub fn classify(backbone: LayerKind, group: GroupName, num_classes: usize) -> Self {
        ModelConfig {
            task: Task::Classify,
            backbone,
            group,
            in_dim: 1,
            stages: vec![stage(128, 16, 32), stage(32, 16, 64), stage(1, 32, 128)],
            head_widths: vec![64],
            num_classes,
            pool_mode: ReduceMode::Max,
            group_pool_mode: ReduceMode::Max,
        }
    }

    /// Two down stages (K 64/16, C 16/16, widths 32/64), two propagation
    /// steps and a 32 → 32 → classes per-point head.
    pub fn segment(backbone: LayerKind, group: GroupName, num_classes: usize) -> Self {
        ModelConfig {
            task: Task::Segment,
            backbone,
            group,
            in_dim: 1,
            stages: vec![stage(64, 16, 32), stage(16, 16, 64)],
            head_widths: vec![32],
            num_classes,
            pool_mode: ReduceMode::Max,
            group_pool_mode: ReduceMode::Max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::ConfigError(m));
        if self.stages.is_empty() {
            return err("at least one stage is required".into());
        }
        if self.num_classes == 0 {
            return err("num_classes must be positive".into());
        }
        if self.in_dim == 0 {
            return err("in_dim must be positive".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.k == 0 || s.c == 0 || s.width == 0 {
                return err(format!("stage {i} has a zero size: {s:?}"));
            }
        }
        for (i, w) in self.stages.windows(2).enumerate() {
            if w[1].k >= w[0].k {
                return err(format!("stage {} keeps {} centroids, not fewer than {}", i + 1, w[1].k, w[0].k));
            }
            if w[1].c > w[0].k {
                return err(format!("stage {} asks for {} neighbors among {} points", i + 1, w[1].c, w[0].k));
            }
        }
        if self.task == Task::Classify && self.stages.last().map(|s| s.k) != Some(1) {
            return err("the last classification stage must keep a single centroid".into());
        }
        if self.head_widths.contains(&0) {
            return err("head widths must be positive".into());
        }
        Ok(())
    }

    /// Channel counts `(coarse, skip, out)` of each propagation step, from the
    /// coarsest level back to the input points.
    pub fn decoder_dims(&self) -> Vec<(usize, usize, usize)> {
        let l = self.stages.len();
        let mut cur = self.stages[l - 1].width;
        let mut dims = Vec::with_capacity(l);
        for j in (1..=l).rev() {
            let (skip, out) = if j == 1 {
                (self.in_dim, self.stages[0].width)
            } else {
                (self.stages[j - 2].width, self.stages[j - 2].width)
            };
            dims.push((cur, skip, out));
            cur = out;
        }
        dims
    }

    fn head_dims(&self) -> Vec<usize> {
        let trunk = match self.task {
            Task::Classify => self.stages[self.stages.len() - 1].width,
            Task::Segment => self.stages[0].width,
        };
        let mut dims = vec![trunk];
        dims.extend(&self.head_widths);
        dims.push(self.num_classes);
        dims
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let stages: Vec<String> = self.stages.iter().map(|s| format!("{}:{}:{}", s.k, s.c, s.width)).collect();
        let head: Vec<String> = self.head_widths.iter().map(|w| w.to_string()).collect();
        format!(
            "task={}\nbackbone={}\ngroup={}\nin_dim={}\nstages={}\nhead={}\nnum_classes={}\npool={}\ngroup_pool={}\n",
            self.task,
            self.backbone,
            self.group,
            self.in_dim,
            stages.join(","),
            head.join(","),
            self.num_classes,
            self.pool_mode,
            self.group_pool_mode
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut task = None;
        let mut backbone = None;
        let mut group = None;
        let mut in_dim = 1;
        let mut stages = None;
        let mut head_widths = Vec::new();
        let mut num_classes = None;
        let mut pool_mode = ReduceMode::Max;
        let mut group_pool_mode = ReduceMode::Max;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigError(format!("expected key=value, got `{line}`")))?;
            let value = value.trim();
            match key.trim() {
                "task" => task = Some(value.parse()?),
                "backbone" => backbone = Some(value.parse()?),
                "group" => group = Some(value.parse()?),
                "in_dim" => in_dim = parse_usize(key, value)?,
                "stages" => {
                    let parsed = value
                        .split(',')
                        .map(|s| {
                            let parts: Vec<&str> = s.split(':').collect();
                            match parts[..] {
                                [k, c, w] => Ok(stage(parse_usize(key, k)?, parse_usize(key, c)?, parse_usize(key, w)?)),
                                _ => Err(Error::ConfigError(format!("stage `{s}` is not k:c:width"))),
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    stages = Some(parsed);
                }
                "head" => {
                    head_widths = value
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| parse_usize(key, s))
                        .collect::<Result<_>>()?
                }
                "num_classes" => num_classes = Some(parse_usize(key, value)?),
                "pool" => pool_mode = value.parse()?,
                "group_pool" => group_pool_mode = value.parse()?,
                other => return Err(Error::ConfigError(format!("unknown model key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::ConfigError(format!("model config lacks `{k}`"));
        let cfg = ModelConfig {
            task: task.ok_or_else(|| missing("task"))?,
            backbone: backbone.ok_or_else(|| missing("backbone"))?,
            group: group.ok_or_else(|| missing("group"))?,
            in_dim,
            stages: stages.ok_or_else(|| missing("stages"))?,
            head_widths,
            num_classes: num_classes.ok_or_else(|| missing("num_classes"))?,
            pool_mode,
            group_pool_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::ConfigError(format!("`{key}` expects a non-negative integer, got `{value}`")))
}

/// All trainable blocks of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub stages: Vec<GLayerParams<T>>,
    /// Empty for classification.
    pub decoder: Vec<MlpParams<T>>,
    pub head: MlpParams<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            stages: self.stages.iter().map(|s| s.cast()).collect(),
            decoder: self.decoder.iter().map(|m| m.cast()).collect(),
            head: self.head.cast(),
        }
    }
}

impl<T: Real> Parameters<T> for ModelParams<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            out.extend(s.tensors().into_iter().map(|(n, t)| (format!("stage{i}.{n}"), t)));
        }
        for (i, m) in self.decoder.iter().enumerate() {
            out.extend(m.tensors().into_iter().map(|(n, t)| (format!("decoder{i}.{n}"), t)));
        }
        out.extend(self.head.tensors().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.extend(s.tensors_mut());
        }
        for m in &mut self.decoder {
            out.extend(m.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        out
    }
}

/// Model parameters recorded on a tape.
pub struct BoundModel<'t, T: Real> {
    pub stages: Vec<BoundGLayer<'t, T>>,
    pub decoder: Vec<BoundMlp<'t, T>>,
    pub head: BoundMlp<'t, T>,
}

impl<'t, T: Real> BoundModel<'t, T> {
    /// Handles in [`Parameters::tensors`] order.
    pub fn vars(&self) -> Vec<Var<'t, T>> {
        let mut v: Vec<Var<'t, T>> = self.stages.iter().flat_map(|s| s.vars()).collect();
        v.extend(self.decoder.iter().flat_map(|m| m.vars()));
        v.extend(self.head.vars());
        v
    }
}

/// What a training sample is scored against.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Class(usize),
    PerPoint(&'a [usize]),
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub group: Arc<FiniteRotationGroup>,
    pub params: ModelParams<T>,
}

/// Deterministic initialization from `cfg` and the random stream.
pub fn build_model<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Model<f64>> {
    cfg.validate()?;
    let mut d_in = cfg.in_dim;
    let mut stages = Vec::with_capacity(cfg.stages.len());
    for s in &cfg.stages {
        stages.push(GLayerParams::init(cfg.backbone, d_in, s.width, s.k, s.c, rng)?);
        d_in = s.width;
    }
    let decoder = match cfg.task {
        Task::Classify => Vec::new(),
        Task::Segment => cfg
            .decoder_dims()
            .into_iter()
            .map(|(coarse, skip, out)| MlpParams::init(&[coarse + skip, out], rng))
            .collect::<Result<_>>()?,
    };
    let head = MlpParams::init(&cfg.head_dims(), rng)?;
    Ok(Model {
        config: cfg.clone(),
        group: Arc::new(make_group(cfg.group)?),
        params: ModelParams { stages, decoder, head },
    })
}

impl<T: Real> Model<T> {
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            group: self.group.clone(),
            params: self.params.cast(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundModel<'t, T> {
        BoundModel {
            stages: self.params.stages.iter().map(|s| s.bind(tape)).collect(),
            decoder: self.params.decoder.iter().map(|m| m.bind(tape)).collect(),
            head: self.params.head.bind(tape),
        }
    }

    fn check_input(&self, x: &PointCloud) -> Result<()> {
        if x.feature_dim != self.config.in_dim {
            return Err(Error::ShapeError(format!(
                "model expects {} input channels, cloud has {}",
                self.config.in_dim, x.feature_dim
            )));
        }
        Ok(())
    }

    /// Runs the lifted trunk; returns the lifted output of every stage, the
    /// lifted input first.
    fn trunk<'t>(
        &self,
        tape: &'t Tape<T>,
        bound: &BoundModel<'t, T>,
        x: &PointCloud,
        mode: CoordMode,
    ) -> Result<Vec<LiftedVar<'t, T>>> {
        self.check_input(x)?;
        let mut levels = vec![lift_on_tape(tape, x, self.group.clone())?];
        for (spec, layer) in self.config.stages.iter().zip(&bound.stages) {
            let cur = &levels[levels.len() - 1];
            let nbr = sample_and_group(&cur.positions, spec.k, spec.c)?;
            let next = g_layer_forward(cur, layer, &nbr, mode)?.relu();
            levels.push(next);
        }
        Ok(levels)
    }

    /// `[1, num_classes]` logits on the tape.
    pub fn classify_var<'t>(
        &self,
        tape: &'t Tape<T>,
        bound: &BoundModel<'t, T>,
        x: &PointCloud,
        mode: CoordMode,
    ) -> Result<Var<'t, T>> {
        let levels = self.trunk(tape, bound, x, mode)?;
        let top = &levels[levels.len() - 1];
        let pooled = group_pool_var(top, self.config.group_pool_mode)?;
        let global = global_pool_var(pooled, self.config.pool_mode)?;
        bound.head.forward(global)
    }

    /// `[N, num_classes]` logits on the tape, rows in input order.
    pub fn segment_var<'t>(
        &self,
        tape: &'t Tape<T>,
        bound: &BoundModel<'t, T>,
        x: &PointCloud,
        mode: CoordMode,
    ) -> Result<Var<'t, T>> {
        let levels = self.trunk(tape, bound, x, mode)?;
        let mut cur = levels[levels.len() - 1].clone();
        for (step, mlp) in bound.decoder.iter().enumerate() {
            let fine = &levels[levels.len() - 2 - step];
            cur = feature_propagate_var(&cur, &fine.positions, Some(fine), mlp)?.relu();
        }
        let pooled = group_pool_var(&cur, self.config.group_pool_mode)?;
        bound.head.forward(pooled)
    }

    pub fn logits_var<'t>(
        &self,
        tape: &'t Tape<T>,
        bound: &BoundModel<'t, T>,
        x: &PointCloud,
        mode: CoordMode,
    ) -> Result<Var<'t, T>> {
        match self.config.task {
            Task::Classify => self.classify_var(tape, bound, x, mode),
            Task::Segment => self.segment_var(tape, bound, x, mode),
        }
    }

    /// Classification logits.
    pub fn forward_classify(&self, x: &PointCloud) -> Result<Vec<f64>> {
        if self.config.task != Task::Classify {
            return Err(Error::ConfigError("forward_classify on a segmentation model".into()));
        }
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let logits = self.classify_var(&tape, &bound, x, CoordMode::Conjugated)?;
        let v = logits.value();
        Ok(v.data().iter().map(|t| t.as_f64()).collect())
    }

    /// Per-point logits `[N, num_classes]`.
    pub fn forward_segment(&self, x: &PointCloud) -> Result<Tensor<f64>> {
        if self.config.task != Task::Segment {
            return Err(Error::ConfigError("forward_segment on a classification model".into()));
        }
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let logits = self.segment_var(&tape, &bound, x, CoordMode::Conjugated)?;
        Ok(logits.to_tensor().to_f64())
    }

    /// Logits as `[rows, num_classes]`: one row for classification, one per
    /// point for segmentation.
    pub fn forward(&self, x: &PointCloud) -> Result<Tensor<f64>> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let logits = self.logits_var(&tape, &bound, x, CoordMode::Conjugated)?;
        Ok(logits.to_tensor().to_f64())
    }

    /// Loss, parameter gradients in [`Parameters::tensors`] order, and the
    /// logits.
    pub fn loss_and_grad(&self, x: &PointCloud, target: Target<'_>) -> Result<(f64, Vec<Vec<T>>, Tensor<T>)> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let logits = self.logits_var(&tape, &bound, x, CoordMode::Conjugated)?;
        let loss = loss_var(logits, target)?;
        let value = loss.item().as_f64();
        let grads: Gradients<T> = loss.backward()?;
        let per_param = bound.vars().iter().map(|v| grads.get_or_zeros(v)).collect();
        Ok((value, per_param, logits.to_tensor()))
    }

    /// Named parameter tensors in 64-bit for checkpoints.
    pub fn export(&self) -> Vec<(String, Tensor<f64>)> {
        self.params.tensors().into_iter().map(|(n, t)| (n, t.to_f64())).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint_file(path, &self.export())?;
        let side = sidecar_path(path);
        std::fs::write(&side, self.config.to_text()).map_err(|e| Error::io(&side, e))
    }
}

impl Model<f64> {
    /// Rebuilds a model from its config and named tensors. Names and shapes
    /// must match the config exactly.
    pub fn import(cfg: &ModelConfig, records: &[(String, Tensor<f64>)]) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = build_model(cfg, &mut rng)?;
        let names: Vec<String> = model.params.tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != records.len() {
            return Err(Error::ConfigError(format!(
                "checkpoint has {} tensors, config implies {}",
                records.len(),
                names.len()
            )));
        }
        for ((name, slot), (rname, rt)) in names.iter().zip(model.params.tensors_mut()).zip(records) {
            if name != rname || slot.shape() != rt.shape() {
                return Err(Error::ConfigError(format!(
                    "checkpoint tensor `{rname}` {:?} does not match `{name}` {:?}",
                    rt.shape(),
                    slot.shape()
                )));
            }
            *slot = rt.clone();
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let cfg = ModelConfig::from_text(&text)?;
        Model::import(&cfg, &read_checkpoint_file(path)?)
    }
}

/// The config sidecar sits next to the checkpoint: `<path>.cfg`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// Cross-entropy: per cloud for classification, mean over points for
/// segmentation.
pub fn loss_var<'t, T: Real>(logits: Var<'t, T>, target: Target<'_>) -> Result<Var<'t, T>> {
    match target {
        Target::Class(c) => logits.softmax_cross_entropy(&[c]),
        Target::PerPoint(labels) => logits.softmax_cross_entropy(labels),
    }
}

pub fn loss(logits: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let tape = Tape::new();
    let v = tape.constant(logits.clone());
    Ok(v.softmax_cross_entropy(labels)?.item())
}

/// Direct, unlifted implementations of the two set-abstraction layers and the
/// classifier, written as plain loops. With the trivial group they must agree
/// bit for bit with the lifted network.
pub mod baseline {
    use super::*;
    use crate::cloud_ops::NeighborIndex;
    use crate::diffcore::{Activation, DenseLayer};
    use crate::group_algebra::{norm, sub, Vec3};

    fn dense<T: Real>(layer: &DenseLayer<T>, x: &[T]) -> Vec<T> {
        let (w, b) = (layer.weight.data(), layer.bias.data());
        let d_in = layer.d_in();
        (0..layer.d_out())
            .map(|o| {
                let mut acc = T::zero();
                for k in 0..d_in {
                    acc += w[o * d_in + k] * x[k];
                }
                let y = acc + b[o];
                match layer.activation {
                    Activation::Relu => y.max(T::zero()),
                    Activation::None => y,
                }
            })
            .collect()
    }

    pub fn mlp<T: Real>(m: &MlpParams<T>, x: &[T]) -> Vec<T> {
        m.layers.iter().fold(x.to_vec(), |h, l| dense(l, &h))
    }

    fn offset<T: Real>(q: Vec3, p: Vec3) -> Vec<T> {
        sub(p, q).iter().map(|&v| T::of(v)).collect()
    }

    /// `f′_q = mlp_b(max_p mlp_a((p − q) ⊕ f_p))`; `features` is `[N, d_in]`
    /// row-major.
    pub fn pointnet_layer<T: Real>(
        positions: &[Vec3],
        features: &[T],
        params: &GLayerParams<T>,
        nbr: &NeighborIndex,
    ) -> Vec<T> {
        let d = params.d_in;
        let mut out = Vec::new();
        for (k, &qi) in nbr.centroid_indices.iter().enumerate() {
            let q = positions[qi];
            let mut best: Option<Vec<T>> = None;
            for &pi in nbr.neighbors(k) {
                let mut input = offset::<T>(q, positions[pi]);
                input.extend_from_slice(&features[pi * d..(pi + 1) * d]);
                let a = mlp(&params.mlp_a, &input);
                best = Some(match best {
                    None => a,
                    Some(b) => b.iter().zip(&a).map(|(&b, &a)| if a > b { a } else { b }).collect(),
                });
            }
            out.extend(mlp(&params.mlp_b, &best.expect("non-empty neighborhood")));
        }
        out
    }

    /// `f′_q = Σ_p s(‖p − q‖) · W(p − q) · f_p`.
    pub fn pointconv_layer<T: Real>(
        positions: &[Vec3],
        features: &[T],
        params: &GLayerParams<T>,
        nbr: &NeighborIndex,
    ) -> Vec<T> {
        let (d_in, d_out) = (params.d_in, params.d_out);
        let mut out = Vec::new();
        for (k, &qi) in nbr.centroid_indices.iter().enumerate() {
            let q = positions[qi];
            let mut acc = vec![T::zero(); d_out];
            for &pi in nbr.neighbors(k) {
                let p = positions[pi];
                let s = mlp(&params.mlp_a, &[T::of(norm(sub(p, q)))])[0];
                let w = mlp(&params.mlp_b, &offset::<T>(q, p));
                let f = &features[pi * d_in..(pi + 1) * d_in];
                for (o, a) in acc.iter_mut().enumerate() {
                    let mut dot = T::zero();
                    for i in 0..d_in {
                        dot += w[o * d_in + i] * f[i];
                    }
                    *a += s * dot;
                }
            }
            out.extend(acc);
        }
        out
    }

    fn pool<T: Real>(rows: &[T], n: usize, d: usize, mode: ReduceMode) -> Vec<T> {
        (0..d)
            .map(|c| match mode {
                ReduceMode::Max => {
                    let mut best = rows[c];
                    for r in 1..n {
                        if rows[r * d + c] > best {
                            best = rows[r * d + c];
                        }
                    }
                    best
                }
                ReduceMode::Sum | ReduceMode::Mean => {
                    let mut acc = T::zero();
                    for r in 0..n {
                        acc += rows[r * d + c];
                    }
                    if mode == ReduceMode::Mean {
                        acc * (T::one() / T::of(n as f64))
                    } else {
                        acc
                    }
                }
            })
            .collect()
    }

    /// The unlifted classifier sharing `params` with a lifted model.
    pub fn classify<T: Real>(cfg: &ModelConfig, params: &ModelParams<T>, x: &PointCloud) -> Result<Vec<T>> {
        let mut positions = x.positions.clone();
        let mut features: Vec<T> = x.features.iter().map(|&v| T::of(v)).collect();
        for (spec, layer) in cfg.stages.iter().zip(&params.stages) {
            let nbr = sample_and_group(&positions, spec.k, spec.c)?;
            let out = match layer.kind {
                LayerKind::GPointNet => pointnet_layer(&positions, &features, layer, &nbr),
                LayerKind::GPointConv => pointconv_layer(&positions, &features, layer, &nbr),
            };
            features = out.into_iter().map(|v| v.max(T::zero())).collect();
            positions = nbr.centroid_indices.iter().map(|&i| positions[i]).collect();
        }
        let d = cfg.stages[cfg.stages.len() - 1].width;
        // one group slot: pooling over it returns each value unchanged
        let slot = pool(&features, 1, features.len(), cfg.group_pool_mode);
        let global = pool(&slot, positions.len(), d, cfg.pool_mode);
        Ok(mlp(&params.head, &global))
    }
}
