use std::cell::{Ref, RefCell};

use super::tensor::{Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceMode {
    Max,
    Sum,
    Mean,
}

impl std::str::FromStr for ReduceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(ReduceMode::Max),
            "sum" => Ok(ReduceMode::Sum),
            "mean" => Ok(ReduceMode::Mean),
            _ => Err(Error::ConfigError(format!("unknown reduction `{s}`"))),
        }
    }
}

impl std::fmt::Display for ReduceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReduceMode::Max => "max",
            ReduceMode::Sum => "sum",
            ReduceMode::Mean => "mean",
        })
    }
}

enum Op<T> {
    Leaf,
    Linear { x: usize, w: usize, b: usize },
    Relu(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Concat { a: usize, b: usize },
    Gather { x: usize, idx: Vec<usize> },
    Reshape(usize),
    Reduce {
        x: usize,
        outer: usize,
        n: usize,
        inner: usize,
        mode: ReduceMode,
        argmax: Vec<usize>,
    },
    Kernel {
        s: usize,
        w: usize,
        f: usize,
        d_out: usize,
        d_in: usize,
    },
    WeightedGather {
        x: usize,
        idx: Vec<usize>,
        weights: Vec<T>,
        k: usize,
    },
    SoftmaxCe {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    SumAll(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations in creation order. Node ids are topologically sorted
/// by construction, so the backward pass is a single reverse sweep.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        debug_assert!(value.all_finite(), "non-finite value produced on tape");
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A trainable leaf. Its gradient is reported by [`Var::backward`].
    pub fn param(&self, value: &Tensor<T>) -> Var<'_, T> {
        self.push(value.clone(), Op::Leaf, true)
    }

    /// A leaf that takes part in the forward pass only.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }
}

fn shape_err(msg: String) -> Error {
    Error::ShapeError(msg)
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// First element; the value of a scalar node.
    pub fn item(&self) -> T {
        self.value().data()[0]
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.value().clone()
    }

    fn same_tape(&self, other: &Var<'t, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(shape_err("operands live on different tapes".into()))
        }
    }

    /// `x·Wᵀ + b` for `x: [B, d_in]`, `W: [d_out, d_in]`, `b: [d_out]`.
    pub fn linear(self, w: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&w)?;
        self.same_tape(&b)?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (x, wv, bv) = (&nodes[self.id].value, &nodes[w.id].value, &nodes[b.id].value);
            let (rows, d_in) = x.dims2()?;
            let (d_out, w_in) = wv.dims2()?;
            if w_in != d_in || bv.shape() != [d_out] {
                return Err(shape_err(format!(
                    "linear: x {:?}, W {:?}, b {:?}",
                    x.shape(),
                    wv.shape(),
                    bv.shape()
                )));
            }
            let (xd, wd, bd) = (x.data(), wv.data(), bv.data());
            let mut out = vec![T::zero(); rows * d_out];
            for i in 0..rows {
                let xr = &xd[i * d_in..(i + 1) * d_in];
                let or = &mut out[i * d_out..(i + 1) * d_out];
                for (o, y) in or.iter_mut().enumerate() {
                    let wr = &wd[o * d_in..(o + 1) * d_in];
                    let mut acc = T::zero();
                    for k in 0..d_in {
                        acc += wr[k] * xr[k];
                    }
                    *y = acc + bd[o];
                }
            }
            Tensor::new(vec![rows, d_out], out)?
        };
        let needs = self.tape.needs(&[self.id, w.id, b.id]);
        Ok(self.tape.push(
            out,
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.id,
            },
            needs,
        ))
    }

    pub fn relu(self) -> Var<'t, T> {
        let out = {
            let v = self.value();
            let data = v.data().iter().map(|&x| x.max(T::zero())).collect();
            Tensor::new(v.shape().to_vec(), data).expect("same shape")
        };
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(out, Op::Relu(self.id), needs)
    }

    fn zip_with(self, other: Var<'t, T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_tape(&other)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        if a.shape() != b.shape() {
            return Err(shape_err(format!(
                "elementwise op on {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.zip_with(other, |a, b| a + b)?;
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(out, Op::Add(self.id, other.id), needs))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.zip_with(other, |a, b| a * b)?;
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(out, Op::Mul(self.id, other.id), needs))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let out = {
            let v = self.value();
            let data = v.data().iter().map(|&x| x * c).collect();
            Tensor::new(v.shape().to_vec(), data).expect("same shape")
        };
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(out, Op::Scale(self.id, c), needs)
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (ra, ca) = a.dims2()?;
            let (rb, cb) = b.dims2()?;
            if ra != rb {
                return Err(shape_err(format!("concat rows {ra} vs {rb}")));
            }
            let mut data = Vec::with_capacity(ra * (ca + cb));
            for i in 0..ra {
                data.extend_from_slice(&a.data()[i * ca..(i + 1) * ca]);
                data.extend_from_slice(&b.data()[i * cb..(i + 1) * cb]);
            }
            Tensor::new(vec![ra, ca + cb], data)?
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(
            out,
            Op::Concat {
                a: self.id,
                b: other.id,
            },
            needs,
        ))
    }

    /// Selects rows of a matrix; indices may repeat.
    pub fn gather_rows(self, idx: Vec<usize>) -> Result<Var<'t, T>> {
        let out = {
            let v = self.value();
            let (rows, cols) = v.dims2()?;
            let mut data = Vec::with_capacity(idx.len() * cols);
            for &i in &idx {
                if i >= rows {
                    return Err(Error::IndexError { index: i, len: rows });
                }
                data.extend_from_slice(&v.data()[i * cols..(i + 1) * cols]);
            }
            Tensor::new(vec![idx.len(), cols], data)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Gather { x: self.id, idx }, needs))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t, T>> {
        let out = self.value().clone().reshape(shape)?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Reshape(self.id), needs))
    }

    /// Reduces one axis. Sums run in ascending index order; max keeps the
    /// first maximal entry, which is where its gradient goes.
    pub fn reduce(self, axis: usize, mode: ReduceMode) -> Result<Var<'t, T>> {
        let (out, outer, n, inner, argmax) = {
            let v = self.value();
            let shape = v.shape();
            if axis >= shape.len() {
                return Err(shape_err(format!("axis {axis} out of range for {shape:?}")));
            }
            let outer: usize = shape[..axis].iter().product();
            let n = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            if n == 0 && mode == ReduceMode::Max {
                return Err(Error::EmptyReduction("max over an empty axis"));
            }
            let mut out_shape = shape.to_vec();
            out_shape.remove(axis);
            if out_shape.is_empty() {
                out_shape.push(1);
            }
            let d = v.data();
            let mut out = vec![T::zero(); outer * inner];
            let mut argmax = Vec::new();
            match mode {
                ReduceMode::Max => {
                    argmax = vec![0usize; outer * inner];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * n * inner + i;
                            let mut best = d[base];
                            let mut arg = 0;
                            for j in 1..n {
                                let x = d[base + j * inner];
                                if x > best {
                                    best = x;
                                    arg = j;
                                }
                            }
                            out[o * inner + i] = best;
                            argmax[o * inner + i] = arg;
                        }
                    }
                }
                ReduceMode::Sum | ReduceMode::Mean => {
                    let scale = if mode == ReduceMode::Mean {
                        T::one() / T::of(n as f64)
                    } else {
                        T::one()
                    };
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * n * inner + i;
                            let mut acc = T::zero();
                            for j in 0..n {
                                acc += d[base + j * inner];
                            }
                            out[o * inner + i] = if mode == ReduceMode::Mean {
                                acc * scale
                            } else {
                                acc
                            };
                        }
                    }
                }
            }
            (Tensor::new(out_shape, out)?, outer, n, inner, argmax)
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(
            out,
            Op::Reduce {
                x: self.id,
                outer,
                n,
                inner,
                mode,
                argmax,
            },
            needs,
        ))
    }

    /// Continuous-convolution product: row `r` of the output is
    /// `s[r] · W_r · f[r]`, where `W_r` is row `r` of `w` read as a
    /// `d_out × d_in` matrix.
    pub fn kernel_apply(self, w: Var<'t, T>, f: Var<'t, T>, d_out: usize) -> Result<Var<'t, T>> {
        self.same_tape(&w)?;
        self.same_tape(&f)?;
        let (out, d_in) = {
            let nodes = self.tape.nodes.borrow();
            let (sv, wv, fv) = (&nodes[self.id].value, &nodes[w.id].value, &nodes[f.id].value);
            let (rows, one) = sv.dims2()?;
            let (wr, wc) = wv.dims2()?;
            let (fr, d_in) = fv.dims2()?;
            if one != 1 || wr != rows || fr != rows || wc != d_out * d_in {
                return Err(shape_err(format!(
                    "kernel_apply: s {:?}, W {:?}, f {:?}, d_out {d_out}",
                    sv.shape(),
                    wv.shape(),
                    fv.shape()
                )));
            }
            let (sd, wd, fd) = (sv.data(), wv.data(), fv.data());
            let mut out = vec![T::zero(); rows * d_out];
            for r in 0..rows {
                let fr = &fd[r * d_in..(r + 1) * d_in];
                for o in 0..d_out {
                    let wrow = &wd[r * wc + o * d_in..r * wc + (o + 1) * d_in];
                    let mut acc = T::zero();
                    for i in 0..d_in {
                        acc += wrow[i] * fr[i];
                    }
                    out[r * d_out + o] = sd[r] * acc;
                }
            }
            (Tensor::new(vec![rows, d_out], out)?, d_in)
        };
        let needs = self.tape.needs(&[self.id, w.id, f.id]);
        Ok(self.tape.push(
            out,
            Op::Kernel {
                s: self.id,
                w: w.id,
                f: f.id,
                d_out,
                d_in,
            },
            needs,
        ))
    }

    /// Row `m` of the output is `Σ_j weights[m·k + j] · x[idx[m·k + j]]`,
    /// summed in ascending `j`.
    pub fn weighted_gather(self, idx: Vec<usize>, weights: Vec<T>, k: usize) -> Result<Var<'t, T>> {
        if k == 0 || idx.len() != weights.len() || idx.len() % k != 0 {
            return Err(shape_err(format!(
                "weighted_gather: {} indices, {} weights, k = {k}",
                idx.len(),
                weights.len()
            )));
        }
        let out = {
            let v = self.value();
            let (rows, cols) = v.dims2()?;
            let m = idx.len() / k;
            let mut out = vec![T::zero(); m * cols];
            for r in 0..m {
                let orow = &mut out[r * cols..(r + 1) * cols];
                for j in 0..k {
                    let src = idx[r * k + j];
                    if src >= rows {
                        return Err(Error::IndexError { index: src, len: rows });
                    }
                    let wgt = weights[r * k + j];
                    for (y, &x) in orow.iter_mut().zip(v.row(src)) {
                        *y += wgt * x;
                    }
                }
            }
            Tensor::new(vec![m, cols], out)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(
            out,
            Op::WeightedGather {
                x: self.id,
                idx,
                weights,
                k,
            },
            needs,
        ))
    }

    /// Mean over rows of `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<Var<'t, T>> {
        let (out, probs) = {
            let v = self.value();
            let (rows, classes) = v.dims2()?;
            if labels.len() != rows {
                return Err(shape_err(format!(
                    "{} labels for {rows} rows of logits",
                    labels.len()
                )));
            }
            let mut probs = vec![T::zero(); rows * classes];
            let mut total = T::zero();
            for (r, &label) in labels.iter().enumerate() {
                if label >= classes {
                    return Err(Error::LabelError { label, classes });
                }
                let row = v.row(r);
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for (p, &x) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                    *p = (x - max).exp();
                    z += *p;
                }
                for p in probs[r * classes..(r + 1) * classes].iter_mut() {
                    *p = *p / z;
                }
                total += z.ln() - (row[label] - max);
            }
            (Tensor::scalar(total / T::of(rows as f64)), probs)
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(
            out,
            Op::SoftmaxCe {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    pub fn sum_all(self) -> Var<'t, T> {
        let out = {
            let v = self.value();
            let mut acc = T::zero();
            for &x in v.data() {
                acc += x;
            }
            Tensor::scalar(acc)
        };
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(out, Op::SumAll(self.id), needs)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(self) -> Result<Gradients<T>> {
        let nodes = self.tape.nodes.borrow();
        if nodes[self.id].value.numel() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar root, got shape {:?}",
                nodes[self.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[self.id] = Some(vec![T::one()]);
        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                grads[id] = Some(g);
                continue;
            }
            backprop(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        let keep: Vec<bool> = nodes
            .iter()
            .map(|n| matches!(n.op, Op::Leaf) && n.needs_grad)
            .collect();
        for (g, keep) in grads.iter_mut().zip(keep) {
            if !keep {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn acc<'a, T: Real>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    id: usize,
) -> Option<&'a mut Vec<T>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let n = nodes[id].value.numel();
    Some(grads[id].get_or_insert_with(|| vec![T::zero(); n]))
}

fn backprop<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    match &node.op {
        Op::Leaf => {}
        Op::Linear { x, w, b } => {
            let (xv, wv) = (&nodes[*x].value, &nodes[*w].value);
            let (rows, d_in) = xv.dims2().expect("checked in forward");
            let d_out = wv.shape()[0];
            if let Some(gx) = acc(nodes, grads, *x) {
                let wd = wv.data();
                for i in 0..rows {
                    let gy = &g[i * d_out..(i + 1) * d_out];
                    let gxr = &mut gx[i * d_in..(i + 1) * d_in];
                    for (o, &go) in gy.iter().enumerate() {
                        let wr = &wd[o * d_in..(o + 1) * d_in];
                        for k in 0..d_in {
                            gxr[k] += go * wr[k];
                        }
                    }
                }
            }
            if let Some(gw) = acc(nodes, grads, *w) {
                let xd = xv.data();
                for i in 0..rows {
                    let xr = &xd[i * d_in..(i + 1) * d_in];
                    for o in 0..d_out {
                        let go = g[i * d_out + o];
                        let gwr = &mut gw[o * d_in..(o + 1) * d_in];
                        for k in 0..d_in {
                            gwr[k] += go * xr[k];
                        }
                    }
                }
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                for i in 0..rows {
                    for o in 0..d_out {
                        gb[o] += g[i * d_out + o];
                    }
                }
            }
        }
        Op::Relu(x) => {
            let out = node.value.data();
            if let Some(gx) = acc(nodes, grads, *x) {
                for ((gx, &go), &y) in gx.iter_mut().zip(g).zip(out) {
                    if y > T::zero() {
                        *gx += go;
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for id in [*a, *b] {
                if let Some(gi) = acc(nodes, grads, id) {
                    for (gi, &go) in gi.iter_mut().zip(g) {
                        *gi += go;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            if let Some(ga) = acc(nodes, grads, *a) {
                for i in 0..ga.len() {
                    ga[i] += g[i] * bv[i];
                }
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                for i in 0..gb.len() {
                    gb[i] += g[i] * av[i];
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(gx) = acc(nodes, grads, *x) {
                for (gx, &go) in gx.iter_mut().zip(g) {
                    *gx += go * *c;
                }
            }
        }
        Op::Concat { a, b } => {
            let ca = nodes[*a].value.shape()[1];
            let cb = nodes[*b].value.shape()[1];
            let rows = node.value.shape()[0];
            if let Some(ga) = acc(nodes, grads, *a) {
                for i in 0..rows {
                    for j in 0..ca {
                        ga[i * ca + j] += g[i * (ca + cb) + j];
                    }
                }
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                for i in 0..rows {
                    for j in 0..cb {
                        gb[i * cb + j] += g[i * (ca + cb) + ca + j];
                    }
                }
            }
        }
        Op::Gather { x, idx } => {
            let cols = node.value.shape()[1];
            if let Some(gx) = acc(nodes, grads, *x) {
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..cols {
                        gx[src * cols + j] += g[r * cols + j];
                    }
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(gx) = acc(nodes, grads, *x) {
                for (gx, &go) in gx.iter_mut().zip(g) {
                    *gx += go;
                }
            }
        }
        Op::Reduce {
            x,
            outer,
            n,
            inner,
            mode,
            argmax,
        } => {
            let (outer, n, inner) = (*outer, *n, *inner);
            if let Some(gx) = acc(nodes, grads, *x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let go = g[o * inner + i];
                        let base = o * n * inner + i;
                        match mode {
                            ReduceMode::Max => gx[base + argmax[o * inner + i] * inner] += go,
                            ReduceMode::Sum => {
                                for j in 0..n {
                                    gx[base + j * inner] += go;
                                }
                            }
                            ReduceMode::Mean => {
                                let share = go / T::of(n as f64);
                                for j in 0..n {
                                    gx[base + j * inner] += share;
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::Kernel {
            s,
            w,
            f,
            d_out,
            d_in,
        } => {
            let (d_out, d_in) = (*d_out, *d_in);
            let (sv, wv, fv) = (&nodes[*s].value, &nodes[*w].value, &nodes[*f].value);
            let rows = sv.shape()[0];
            let wc = d_out * d_in;
            let (sd, wd, fd) = (sv.data(), wv.data(), fv.data());
            if let Some(gs) = acc(nodes, grads, *s) {
                for r in 0..rows {
                    let mut total = T::zero();
                    for o in 0..d_out {
                        let wrow = &wd[r * wc + o * d_in..r * wc + (o + 1) * d_in];
                        let mut inner = T::zero();
                        for i in 0..d_in {
                            inner += wrow[i] * fd[r * d_in + i];
                        }
                        total += g[r * d_out + o] * inner;
                    }
                    gs[r] += total;
                }
            }
            if let Some(gw) = acc(nodes, grads, *w) {
                for r in 0..rows {
                    for o in 0..d_out {
                        let c = g[r * d_out + o] * sd[r];
                        for i in 0..d_in {
                            gw[r * wc + o * d_in + i] += c * fd[r * d_in + i];
                        }
                    }
                }
            }
            if let Some(gf) = acc(nodes, grads, *f) {
                for r in 0..rows {
                    for o in 0..d_out {
                        let c = g[r * d_out + o] * sd[r];
                        let wrow = &wd[r * wc + o * d_in..r * wc + (o + 1) * d_in];
                        for i in 0..d_in {
                            gf[r * d_in + i] += c * wrow[i];
                        }
                    }
                }
            }
        }
        Op::WeightedGather { x, idx, weights, k } => {
            let cols = node.value.shape()[1];
            if let Some(gx) = acc(nodes, grads, *x) {
                for (e, (&src, &wgt)) in idx.iter().zip(weights).enumerate() {
                    let r = e / k;
                    for j in 0..cols {
                        gx[src * cols + j] += wgt * g[r * cols + j];
                    }
                }
            }
        }
        Op::SoftmaxCe {
            logits,
            labels,
            probs,
        } => {
            let rows = labels.len();
            let classes = probs.len() / rows;
            let scale = g[0] / T::of(rows as f64);
            if let Some(gl) = acc(nodes, grads, *logits) {
                for (r, &label) in labels.iter().enumerate() {
                    for c in 0..classes {
                        let target = if c == label { T::one() } else { T::zero() };
                        gl[r * classes + c] += (probs[r * classes + c] - target) * scale;
                    }
                }
            }
        }
        Op::SumAll(x) => {
            if let Some(gx) = acc(nodes, grads, *x) {
                for v in gx.iter_mut() {
                    *v += g[0];
                }
            }
        }
    }
}

/// Gradients of trainable leaves, indexed by their [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: &Var<'_, T>) -> Option<&[T]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Gradient of `var`, or zeros when the root does not depend on it.
    pub fn get_or_zeros(&self, var: &Var<'_, T>) -> Vec<T> {
        match self.get(var) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); var.value().numel()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn square_derivative() {
        let tape = Tape::new();
        let x = tape.param(&t(vec![1], &[3.0]));
        let y = x.mul(x).unwrap();
        let g = y.backward().unwrap();
        assert_eq!(y.value().data(), &[9.0]);
        assert_eq!(g.get(&x).unwrap(), &[6.0]);
    }

    #[test]
    fn max_routes_to_winner() {
        let tape = Tape::new();
        let x = tape.param(&t(vec![2], &[2.0, 1.0]));
        let y = x.reduce(0, ReduceMode::Max).unwrap();
        let g = y.backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn reduce_examples() {
        let tape = Tape::new();
        let x = tape.param(&t(vec![3], &[3.0, 1.0, 2.0]));
        assert_eq!(x.reduce(0, ReduceMode::Max).unwrap().value().data(), &[3.0]);
        let y = tape.param(&t(vec![3], &[1.0, 2.0, 3.0]));
        let s = y.reduce(0, ReduceMode::Sum).unwrap();
        assert_eq!(s.value().data(), &[6.0]);
        let g = s.backward().unwrap();
        assert_eq!(g.get(&y).unwrap(), &[1.0, 1.0, 1.0]);

        // first encountered maximum wins ties
        let z = tape.param(&t(vec![1, 3], &[5.0, 5.0, 1.0]));
        let m = z.reduce(1, ReduceMode::Max).unwrap().sum_all();
        assert_eq!(m.backward().unwrap().get(&z).unwrap(), &[1.0, 0.0, 0.0]);

        let e = tape.param(&Tensor::<f64>::zeros(vec![2, 0]));
        assert!(matches!(
            e.reduce(1, ReduceMode::Max),
            Err(Error::EmptyReduction(_))
        ));
        assert!(matches!(x.reduce(1, ReduceMode::Sum), Err(Error::ShapeError(_))));
    }

    #[test]
    fn reduce_middle_axis() {
        let tape = Tape::new();
        // shape [2, 3, 2]
        let data: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let x = tape.param(&t(vec![2, 3, 2], &data));
        let m = x.reduce(1, ReduceMode::Mean).unwrap();
        assert_eq!(m.shape(), vec![2, 2]);
        assert_eq!(m.value().data(), &[2.0, 3.0, 8.0, 9.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let x = tape.param(&t(vec![2], &[1.0, 2.0]));
        assert!(matches!(x.backward(), Err(Error::ShapeError(_))));
    }

    #[test]
    fn cross_entropy_values() {
        let tape = Tape::new();
        let logits = tape.param(&t(vec![1, 4], &[0.5; 4]));
        let loss = logits.softmax_cross_entropy(&[2]).unwrap();
        assert!((loss.value().data()[0] - 4f64.ln()).abs() < 1e-15);

        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 10.0] {
            let tape = Tape::new();
            let l = tape.constant(t(vec![1, 3], &[margin, 0.0, 0.0]));
            let v = l.softmax_cross_entropy(&[0]).unwrap().value().data()[0];
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-4);

        assert!(matches!(
            logits.softmax_cross_entropy(&[4]),
            Err(Error::LabelError { label: 4, classes: 4 })
        ));
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(t(vec![2], &[1.0, 2.0]));
        let x = tape.param(&t(vec![2], &[3.0, 4.0]));
        let g = c.mul(x).unwrap().sum_all().backward().unwrap();
        assert!(g.get(&c).is_none());
        assert_eq!(g.get(&x).unwrap(), &[1.0, 2.0]);
    }
}
