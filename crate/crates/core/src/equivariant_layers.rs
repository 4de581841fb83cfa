//! Lifted layers on `P × G`.
//!
//! A lifted layer runs the base point cloud aggregation once per group slot
//! `h`, with every neighbor offset expressed in the frame of `h`:
//! `h⁻¹(p − q)`. Neighborhoods are diagonal in the group axis, so slot `h` of
//! a centroid only sees slot `h` of its neighbors. Because
//! `(g·h)⁻¹((g·p + t) − (g·q + t)) = h⁻¹(p − q)`, moving the input by
//! `(t, g)` moves the output by the same motion.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::cloud_ops::{knn_group, relative_coords, LiftedCloud, NeighborIndex, PointCloud};
use crate::diffcore::{BoundMlp, MlpParams, Parameters, Real, ReduceMode, Tape, Tensor, Var};
use crate::group_algebra::{dist2, norm, sub, FiniteRotationGroup, Vec3};
use crate::{Error, Result};

/// Hidden width of the PointConv weight network `‖p − q‖ ↦ s`.
pub const WEIGHT_NET_HIDDEN: usize = 8;
/// Hidden width of the PointConv kernel network `offset ↦ W`.
pub const KERNEL_NET_HIDDEN: usize = 16;
/// Distances below this are clamped when interpolating features.
pub const INTERP_MIN_DIST: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    GPointNet,
    GPointConv,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::GPointNet => "g_pointnet",
            LayerKind::GPointConv => "g_pointconv",
        })
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g_pointnet" | "pointnet" => Ok(LayerKind::GPointNet),
            "g_pointconv" | "pointconv" => Ok(LayerKind::GPointConv),
            _ => Err(Error::ConfigError(format!("unknown layer kind `{s}`"))),
        }
    }
}

/// How neighbor offsets enter the layer. `Unconjugated` feeds the raw
/// `p − q` to every slot and breaks equivariance; it exists for
/// mutation-testing the equivariance checker.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CoordMode {
    #[default]
    Conjugated,
    Unconjugated,
}

/// Parameters of one lifted grouping layer.
///
/// For `GPointNet`, `mlp_a` maps `offset ⊕ feature` per neighbor and `mlp_b`
/// maps the neighborhood max. For `GPointConv`, `mlp_a` is the scalar weight
/// net on `‖p − q‖` and `mlp_b` the kernel net producing a `d_out × d_in`
/// matrix from the offset.
#[derive(Clone, Debug, PartialEq)]
pub struct GLayerParams<T> {
    pub kind: LayerKind,
    pub mlp_a: MlpParams<T>,
    pub mlp_b: MlpParams<T>,
    pub k: usize,
    pub c: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl<T: Real> GLayerParams<T> {
    /// Random initialization. For `GPointNet`, `mlp_a` is
    /// `3 + d_in → d_out → d_out` and `mlp_b` is `d_out → d_out`.
    pub fn init<R: Rng + ?Sized>(
        kind: LayerKind,
        d_in: usize,
        d_out: usize,
        k: usize,
        c: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (mlp_a, mlp_b) = match kind {
            LayerKind::GPointNet => (
                MlpParams::init(&[3 + d_in, d_out, d_out], rng)?,
                MlpParams::init(&[d_out, d_out], rng)?,
            ),
            LayerKind::GPointConv => (
                MlpParams::init(&[1, WEIGHT_NET_HIDDEN, 1], rng)?,
                MlpParams::init(&[3, KERNEL_NET_HIDDEN, d_out * d_in], rng)?,
            ),
        };
        let p = GLayerParams {
            kind,
            mlp_a,
            mlp_b,
            k,
            c,
            d_in,
            d_out,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = (&self.mlp_a, &self.mlp_b);
        let ok = match self.kind {
            LayerKind::GPointNet => {
                a.d_in() == 3 + self.d_in && b.d_in() == a.d_out() && b.d_out() == self.d_out
            }
            LayerKind::GPointConv => {
                a.d_in() == 1 && a.d_out() == 1 && b.d_in() == 3 && b.d_out() == self.d_out * self.d_in
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeError(format!(
                "{} layer {}→{}: mlp_a {}→{}, mlp_b {}→{}",
                self.kind,
                self.d_in,
                self.d_out,
                a.d_in(),
                a.d_out(),
                b.d_in(),
                b.d_out()
            )))
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundGLayer<'t, T> {
        BoundGLayer {
            kind: self.kind,
            mlp_a: self.mlp_a.bind(tape),
            mlp_b: self.mlp_b.bind(tape),
            d_in: self.d_in,
            d_out: self.d_out,
        }
    }

    pub fn cast<U: Real>(&self) -> GLayerParams<U> {
        GLayerParams {
            kind: self.kind,
            mlp_a: self.mlp_a.cast(),
            mlp_b: self.mlp_b.cast(),
            k: self.k,
            c: self.c,
            d_in: self.d_in,
            d_out: self.d_out,
        }
    }
}

impl<T: Real> Parameters<T> for GLayerParams<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let a = self.mlp_a.tensors().into_iter().map(|(n, t)| (format!("mlp_a.{n}"), t));
        let b = self.mlp_b.tensors().into_iter().map(|(n, t)| (format!("mlp_b.{n}"), t));
        a.chain(b).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.mlp_a.tensors_mut();
        v.extend(self.mlp_b.tensors_mut());
        v
    }
}

/// Layer parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundGLayer<'t, T: Real> {
    pub kind: LayerKind,
    pub mlp_a: BoundMlp<'t, T>,
    pub mlp_b: BoundMlp<'t, T>,
    pub d_in: usize,
    pub d_out: usize,
}

impl<'t, T: Real> BoundGLayer<'t, T> {
    pub fn vars(&self) -> Vec<Var<'t, T>> {
        let mut v = self.mlp_a.vars();
        v.extend(self.mlp_b.vars());
        v
    }
}

/// A lifted cloud whose features live on a tape, as a `[N·|G|, d]` matrix
/// with row `p·|G| + h`.
#[derive(Clone, Debug)]
pub struct LiftedVar<'t, T: Real> {
    pub positions: Vec<Vec3>,
    pub group: Arc<FiniteRotationGroup>,
    pub features: Var<'t, T>,
}

impl<'t, T: Real> LiftedVar<'t, T> {
    pub fn constant(tape: &'t Tape<T>, x: &LiftedCloud<T>) -> Result<Self> {
        let (n, g, d) = (x.len(), x.group.order(), x.channels());
        Ok(LiftedVar {
            positions: x.positions.clone(),
            group: x.group.clone(),
            features: tape.constant(x.features.clone().reshape(vec![n * g, d])?),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn to_cloud(&self) -> Result<LiftedCloud<T>> {
        let (n, g) = (self.len(), self.group.order());
        let d = self.channels();
        LiftedCloud::new(
            self.positions.clone(),
            self.group.clone(),
            self.features.to_tensor().reshape(vec![n, g, d])?,
        )
    }

    pub fn relu(&self) -> Self {
        LiftedVar {
            features: self.features.relu(),
            ..self.clone()
        }
    }
}

/// Copies each point's scalar features to every group slot.
pub fn lift<T: Real>(x: &PointCloud, group: Arc<FiniteRotationGroup>) -> Result<LiftedCloud<T>> {
    let (n, g, d) = (x.len(), group.order(), x.feature_dim);
    let mut data = Vec::with_capacity(n * g * d);
    for p in 0..n {
        for _ in 0..g {
            data.extend(x.feature(p).iter().map(|&v| T::of(v)));
        }
    }
    LiftedCloud::new(x.positions.clone(), group, Tensor::new(vec![n, g, d], data)?)
}

pub fn lift_on_tape<'t, T: Real>(
    tape: &'t Tape<T>,
    x: &PointCloud,
    group: Arc<FiniteRotationGroup>,
) -> Result<LiftedVar<'t, T>> {
    LiftedVar::constant(tape, &lift(x, group)?)
}

struct Grouping<T> {
    /// `[R, 3]`, rows ordered (centroid, slot, neighbor)
    offsets: Tensor<T>,
    /// `[R, 1]`
    distances: Tensor<T>,
    /// rows of the input feature matrix to gather, same order
    gather: Vec<usize>,
}

fn check_neighbors(x_len: usize, nbr: &NeighborIndex) -> Result<()> {
    let c = nbr.neighbors_per_centroid;
    if nbr.neighbor_indices.len() != nbr.num_centroids() * c {
        return Err(Error::ShapeError(format!(
            "neighbor table has {} entries for {} centroids × {c}",
            nbr.neighbor_indices.len(),
            nbr.num_centroids()
        )));
    }
    if c == 0 {
        return Err(Error::EmptyReduction("empty neighborhood"));
    }
    for &i in nbr.centroid_indices.iter().chain(&nbr.neighbor_indices) {
        if i >= x_len {
            return Err(Error::IndexError { index: i, len: x_len });
        }
    }
    Ok(())
}

fn build_grouping<T: Real>(
    positions: &[Vec3],
    group: &FiniteRotationGroup,
    nbr: &NeighborIndex,
    mode: CoordMode,
) -> Grouping<T> {
    let (g, c) = (group.order(), nbr.neighbors_per_centroid);
    let rows = nbr.num_centroids() * g * c;
    let mut offsets = Vec::with_capacity(rows * 3);
    let mut distances = Vec::with_capacity(rows);
    let mut gather = Vec::with_capacity(rows);
    for (k, &qi) in nbr.centroid_indices.iter().enumerate() {
        let q = positions[qi];
        let nb = nbr.neighbors(k);
        for (h, rot) in group.elements.iter().enumerate() {
            for &pi in nb {
                let p = positions[pi];
                let off = match mode {
                    CoordMode::Conjugated => relative_coords(q, p, rot),
                    CoordMode::Unconjugated => sub(p, q),
                };
                offsets.extend(off.iter().map(|&v| T::of(v)));
                distances.push(T::of(norm(sub(p, q))));
                gather.push(pi * g + h);
            }
        }
    }
    Grouping {
        offsets: Tensor::new(vec![rows, 3], offsets).expect("sized above"),
        distances: Tensor::new(vec![rows, 1], distances).expect("sized above"),
        gather,
    }
}

/// Lifted PointNet++ set abstraction:
/// `f′(q, h) = mlp_b( max_{p ∈ N(q)} mlp_a( h⁻¹(p − q) ⊕ f(p, h) ) )`.
pub fn g_pointnet_forward<'t, T: Real>(
    x: &LiftedVar<'t, T>,
    layer: &BoundGLayer<'t, T>,
    nbr: &NeighborIndex,
    mode: CoordMode,
) -> Result<LiftedVar<'t, T>> {
    if layer.kind != LayerKind::GPointNet {
        return Err(Error::ShapeError(format!("expected g_pointnet parameters, got {}", layer.kind)));
    }
    check_inputs(x, layer, nbr)?;
    let tape = x.features.tape();
    let (g, c) = (x.group.order(), nbr.neighbors_per_centroid);
    let k = nbr.num_centroids();
    let grouping = build_grouping::<T>(&x.positions, &x.group, nbr, mode);
    let offsets = tape.constant(grouping.offsets);
    let feats = x.features.gather_rows(grouping.gather)?;
    let per_neighbor = layer.mlp_a.forward(offsets.concat(feats)?)?;
    let width = per_neighbor.shape()[1];
    let pooled = per_neighbor
        .reshape(vec![k * g, c, width])?
        .reduce(1, ReduceMode::Max)?;
    let out = layer.mlp_b.forward(pooled)?;
    Ok(LiftedVar {
        positions: nbr.centroid_indices.iter().map(|&i| x.positions[i]).collect(),
        group: x.group.clone(),
        features: out,
    })
}

/// Lifted PointConv:
/// `f′(q, h) = Σ_{p ∈ N(q)} s(‖p − q‖) · W(h⁻¹(p − q)) · f(p, h)`,
/// summed in neighbor-list order.
pub fn g_pointconv_forward<'t, T: Real>(
    x: &LiftedVar<'t, T>,
    layer: &BoundGLayer<'t, T>,
    nbr: &NeighborIndex,
    mode: CoordMode,
) -> Result<LiftedVar<'t, T>> {
    if layer.kind != LayerKind::GPointConv {
        return Err(Error::ShapeError(format!("expected g_pointconv parameters, got {}", layer.kind)));
    }
    check_inputs(x, layer, nbr)?;
    let tape = x.features.tape();
    let (g, c) = (x.group.order(), nbr.neighbors_per_centroid);
    let k = nbr.num_centroids();
    let grouping = build_grouping::<T>(&x.positions, &x.group, nbr, mode);
    let scale = layer.mlp_a.forward(tape.constant(grouping.distances))?;
    let kernel = layer.mlp_b.forward(tape.constant(grouping.offsets))?;
    let feats = x.features.gather_rows(grouping.gather)?;
    let out = scale
        .kernel_apply(kernel, feats, layer.d_out)?
        .reshape(vec![k * g, c, layer.d_out])?
        .reduce(1, ReduceMode::Sum)?;
    Ok(LiftedVar {
        positions: nbr.centroid_indices.iter().map(|&i| x.positions[i]).collect(),
        group: x.group.clone(),
        features: out,
    })
}

fn check_inputs<T: Real>(x: &LiftedVar<'_, T>, layer: &BoundGLayer<'_, T>, nbr: &NeighborIndex) -> Result<()> {
    if x.channels() != layer.d_in {
        return Err(Error::ShapeError(format!(
            "layer expects {} input channels, cloud has {}",
            layer.d_in,
            x.channels()
        )));
    }
    check_neighbors(x.len(), nbr)
}

/// Dispatches on the layer kind.
pub fn g_layer_forward<'t, T: Real>(
    x: &LiftedVar<'t, T>,
    layer: &BoundGLayer<'t, T>,
    nbr: &NeighborIndex,
    mode: CoordMode,
) -> Result<LiftedVar<'t, T>> {
    match layer.kind {
        LayerKind::GPointNet => g_pointnet_forward(x, layer, nbr, mode),
        LayerKind::GPointConv => g_pointconv_forward(x, layer, nbr, mode),
    }
}

fn eval_layer<T: Real>(
    x: &LiftedCloud<T>,
    params: &GLayerParams<T>,
    nbr: &NeighborIndex,
    mode: CoordMode,
) -> Result<LiftedCloud<T>> {
    let tape = Tape::new();
    let xv = LiftedVar::constant(&tape, x)?;
    let layer = params.bind(&tape);
    let out = g_layer_forward(&xv, &layer, nbr, mode)?;
    out.to_cloud()
}

pub fn g_pointnet_layer<T: Real>(
    x: &LiftedCloud<T>,
    params: &GLayerParams<T>,
    nbr: &NeighborIndex,
) -> Result<LiftedCloud<T>> {
    if params.kind != LayerKind::GPointNet {
        return Err(Error::ShapeError("g_pointnet_layer needs g_pointnet parameters".into()));
    }
    eval_layer(x, params, nbr, CoordMode::Conjugated)
}

pub fn g_pointconv_layer<T: Real>(
    x: &LiftedCloud<T>,
    params: &GLayerParams<T>,
    nbr: &NeighborIndex,
) -> Result<LiftedCloud<T>> {
    if params.kind != LayerKind::GPointConv {
        return Err(Error::ShapeError("g_pointconv_layer needs g_pointconv parameters".into()));
    }
    eval_layer(x, params, nbr, CoordMode::Conjugated)
}

/// Evaluates either layer kind, optionally with unconjugated offsets.
pub fn g_layer<T: Real>(
    x: &LiftedCloud<T>,
    params: &GLayerParams<T>,
    nbr: &NeighborIndex,
    mode: CoordMode,
) -> Result<LiftedCloud<T>> {
    eval_layer(x, params, nbr, mode)
}

/// Pools the group axis: `[N·|G|, d] → [N, d]`.
pub fn group_pool_var<'t, T: Real>(x: &LiftedVar<'t, T>, mode: ReduceMode) -> Result<Var<'t, T>> {
    let (n, g, d) = (x.len(), x.group.order(), x.channels());
    x.features.reshape(vec![n, g, d])?.reduce(1, mode)
}

/// Pools the group axis. Each pooled feature is invariant under
/// [`act_on_lifted`](crate::group_algebra::act_on_lifted), which only
/// permutes the axis being pooled.
pub fn group_pool<T: Real>(x: &LiftedCloud<T>, mode: ReduceMode) -> Result<PointCloud> {
    let tape = Tape::new();
    let xv = LiftedVar::constant(&tape, x)?;
    let pooled = group_pool_var(&xv, mode)?;
    let d = x.channels();
    let features = pooled.value().data().iter().map(|v| v.as_f64()).collect();
    PointCloud::new(x.positions.clone(), features, d, None)
}

/// Pools over points: `[N, d] → [1, d]`.
pub fn global_pool_var<'t, T: Real>(x: Var<'t, T>, mode: ReduceMode) -> Result<Var<'t, T>> {
    let d = x.shape()[1];
    if x.shape()[0] == 0 {
        return Err(Error::EmptyReduction("global pool over zero points"));
    }
    x.reduce(0, mode)?.reshape(vec![1, d])
}

pub fn global_pool(x: &PointCloud, mode: ReduceMode) -> Result<Vec<f64>> {
    let tape = Tape::<f64>::new();
    let v = tape.constant(Tensor::new(vec![x.len(), x.feature_dim], x.features.clone())?);
    Ok(global_pool_var(v, mode)?.to_tensor().into_data())
}

/// Pools a lifted cloud over both the group axis and the points.
pub fn global_pool_lifted<T: Real>(x: &LiftedCloud<T>, mode: ReduceMode) -> Result<Vec<f64>> {
    global_pool(&group_pool(x, mode)?, mode)
}

/// Inverse-squared-distance interpolation weights from each fine point to its
/// (up to) three nearest coarse points. Returns `(indices, weights, k)`.
pub fn interpolation_weights(coarse: &[Vec3], fine: &[Vec3]) -> Result<(Vec<usize>, Vec<f64>, usize)> {
    if coarse.is_empty() {
        return Err(Error::EmptyReduction("feature propagation from an empty cloud"));
    }
    let k = coarse.len().min(3);
    let mut idx = Vec::with_capacity(fine.len() * k);
    let mut weights = Vec::with_capacity(fine.len() * k);
    let mut positions = coarse.to_vec();
    for &f in fine {
        positions.push(f);
        let nb = knn_group(&positions, &[coarse.len()], k + 1)?;
        positions.pop();
        // the query point itself sits at index coarse.len(); drop it
        let nearest: Vec<usize> = nb.neighbors(0).iter().copied().filter(|&i| i < coarse.len()).take(k).collect();
        let w: Vec<f64> = nearest
            .iter()
            .map(|&i| {
                let d = dist2(coarse[i], f).sqrt().max(INTERP_MIN_DIST);
                1.0 / (d * d)
            })
            .collect();
        let total: f64 = w.iter().sum();
        idx.extend(nearest);
        weights.extend(w.iter().map(|v| v / total));
    }
    Ok((idx, weights, k))
}

/// Upsamples `coarse` onto `fine_positions` slot by slot, concatenates the
/// skip features and applies `mlp`.
pub fn feature_propagate_var<'t, T: Real>(
    coarse: &LiftedVar<'t, T>,
    fine_positions: &[Vec3],
    fine_skip: Option<&LiftedVar<'t, T>>,
    mlp: &BoundMlp<'t, T>,
) -> Result<LiftedVar<'t, T>> {
    let g = coarse.group.order();
    let (idx, weights, k) = interpolation_weights(&coarse.positions, fine_positions)?;
    let m = fine_positions.len();
    let mut rows = Vec::with_capacity(m * g * k);
    let mut w = Vec::with_capacity(m * g * k);
    for i in 0..m {
        for h in 0..g {
            for j in 0..k {
                rows.push(idx[i * k + j] * g + h);
                w.push(T::of(weights[i * k + j]));
            }
        }
    }
    let mut feats = coarse.features.weighted_gather(rows, w, k)?;
    if let Some(skip) = fine_skip {
        if skip.len() != m || *skip.group != *coarse.group {
            return Err(Error::ShapeError(format!(
                "skip cloud has {} points over {}, expected {m} over {}",
                skip.len(),
                skip.group.name,
                coarse.group.name
            )));
        }
        feats = feats.concat(skip.features)?;
    }
    Ok(LiftedVar {
        positions: fine_positions.to_vec(),
        group: coarse.group.clone(),
        features: mlp.forward(feats)?,
    })
}

pub fn feature_propagate<T: Real>(
    coarse: &LiftedCloud<T>,
    fine_positions: &[Vec3],
    fine_skip: Option<&LiftedCloud<T>>,
    mlp: &MlpParams<T>,
) -> Result<LiftedCloud<T>> {
    let tape = Tape::new();
    let c = LiftedVar::constant(&tape, coarse)?;
    let skip = fine_skip.map(|s| LiftedVar::constant(&tape, s)).transpose()?;
    let out = feature_propagate_var(&c, fine_positions, skip.as_ref(), &mlp.bind(&tape))?;
    out.to_cloud()
}
