use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use super::Parameters;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    /// `[d_out, d_in]`
    pub weight: Tensor<T>,
    /// `[d_out]`
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Real> DenseLayer<T> {
    pub fn d_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// A chain of affine layers with per-layer activations.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Real> MlpParams<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeError("an MLP needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weight.rank() != 2 || l.bias.shape() != [l.d_out()] {
                return Err(Error::ShapeError(format!(
                    "layer {k}: weight {:?} and bias {:?} do not match",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::ShapeError(format!(
                    "layer {k} outputs {} channels but layer {} expects {}",
                    pair[0].d_out(),
                    k + 1,
                    pair[1].d_in()
                )));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Layer widths `dims[0] → dims[1] → …`, ReLU after every layer except
    /// the last. Weights are uniform in `±√(6 / (d_in + d_out))`, biases zero.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::ConfigError(format!("MLP widths {dims:?} need at least two entries")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (d_in, d_out) = (w[0], w[1]);
                let bound = (6.0 / (d_in + d_out) as f64).sqrt();
                let data = (0..d_in * d_out)
                    .map(|_| T::of(rng.random_range(-bound..=bound)))
                    .collect();
                DenseLayer {
                    weight: Tensor::new(vec![d_out, d_in], data).expect("sized above"),
                    bias: Tensor::zeros(vec![d_out]),
                    activation: if k + 2 == dims.len() {
                        Activation::None
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        MlpParams::new(layers)
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundMlp<'t, T> {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.param(&l.weight), tape.param(&l.bias), l.activation))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

impl<T: Real> Parameters<T> for MlpParams<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(k, l)| {
                [
                    (format!("layer{k}.weight"), &l.weight),
                    (format!("layer{k}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// MLP parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp<'t, T: Real> {
    layers: Vec<(Var<'t, T>, Var<'t, T>, Activation)>,
}

impl<'t, T: Real> BoundMlp<'t, T> {
    pub fn forward(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        mlp_forward(self, x)
    }

    /// Parameter handles in [`Parameters::tensors`] order.
    pub fn vars(&self) -> Vec<Var<'t, T>> {
        self.layers.iter().flat_map(|(w, b, _)| [*w, *b]).collect()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].0.shape()[0]
    }
}

/// Applies the affine + activation chain to `x: [B, d_in]`.
pub fn mlp_forward<'t, T: Real>(params: &BoundMlp<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let mut h = x;
    for (w, b, act) in &params.layers {
        h = h.linear(*w, *b)?;
        if *act == Activation::Relu {
            h = h.relu();
        }
    }
    Ok(h)
}
