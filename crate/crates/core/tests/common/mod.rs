#![allow(dead_code)]

use gpointx::cloud_ops::{sample_and_group, LiftedCloud, PointCloud};
use gpointx::diffcore::{gradient_check, GradCheckReport, MlpParams, Parameters, Tape, Tensor, Var};
use gpointx::equivariant_layers::{
    feature_propagate_var, g_layer_forward, CoordMode, GLayerParams, LayerKind, LiftedVar,
};
use gpointx::group_algebra::{FiniteRotationGroup, Vec3};
use gpointx::models::{Model, Target};
use gpointx::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Finite-difference step used by the gradient checks.
pub const STEP: f64 = 1e-5;

/// Plain list of trainable tensors.
#[derive(Clone)]
pub struct Leaves(pub Vec<Tensor<f64>>);

impl Parameters<f64> for Leaves {
    fn tensors(&self) -> Vec<(String, &Tensor<f64>)> {
        self.0.iter().enumerate().map(|(i, t)| (format!("leaf{i}"), t)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        self.0.iter_mut().collect()
    }
}

pub fn flatten<P: Parameters<f64>>(p: &P) -> Vec<f64> {
    p.tensors().iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

pub fn unflatten<P: Parameters<f64>>(p: &mut P, x: &[f64]) {
    let mut at = 0;
    for t in p.tensors_mut() {
        let n = t.numel();
        t.data_mut().copy_from_slice(&x[at..at + n]);
        at += n;
    }
}

/// Checks the gradient of a scalar built by `f`, which must return the loss
/// and the handles of `p`'s tensors in [`Parameters::tensors`] order.
pub fn check<P, F>(p: &P, f: F) -> GradCheckReport
where
    P: Parameters<f64> + Clone,
    F: for<'t> Fn(&'t Tape<f64>, &P) -> Result<(Var<'t, f64>, Vec<Var<'t, f64>>)>,
{
    let x0 = flatten(p);
    let mut work = p.clone();
    gradient_check(
        |x| {
            unflatten(&mut work, x);
            let tape = Tape::new();
            let (loss, vars) = f(&tape, &work).unwrap();
            let value = loss.item();
            let grads = loss.backward().unwrap();
            (value, vars.iter().flat_map(|v| grads.get_or_zeros(v)).collect())
        },
        &x0,
        STEP,
    )
    .unwrap()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_positions(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect()
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::with_unit_features(random_positions(rng, n), None).unwrap()
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output entry matters.
pub fn project<'t>(out: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let r = random_tensor(&mut rng, out.shape());
    Ok(out.mul(out.tape().constant(r))?.sum_all())
}

/// A grouping layer together with its lifted input features.
#[derive(Clone)]
pub struct LayerWithInput {
    pub input: Tensor<f64>,
    pub layer: GLayerParams<f64>,
}

impl Parameters<f64> for LayerWithInput {
    fn tensors(&self) -> Vec<(String, &Tensor<f64>)> {
        let mut v = vec![("input".to_string(), &self.input)];
        v.extend(self.layer.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        let mut v = vec![&mut self.input];
        v.extend(self.layer.tensors_mut());
        v
    }
}

pub fn layer_report(
    rng: &mut ChaCha8Rng,
    group: &Arc<FiniteRotationGroup>,
    kind: LayerKind,
) -> GradCheckReport {
    let (n, d_in, d_out, k, c) = (20, 3, 4, 5, 6);
    let positions = random_positions(rng, n);
    let nbr = sample_and_group(&positions, k, c).unwrap();
    let p = LayerWithInput {
        input: random_tensor(rng, vec![n * group.order(), d_in]),
        layer: GLayerParams::init(kind, d_in, d_out, k, c, rng).unwrap(),
    };
    check(&p, |tape, p| {
        let x = LiftedVar {
            positions: positions.clone(),
            group: group.clone(),
            features: tape.param(&p.input),
        };
        let bound = p.layer.bind(tape);
        let y = g_layer_forward(&x, &bound, &nbr, CoordMode::Conjugated)?;
        let mut vars = vec![x.features];
        vars.extend(bound.vars());
        Ok((project(y.features, 7)?, vars))
    })
}

/// Feature propagation with coarse and skip features as leaves.
#[derive(Clone)]
pub struct PropagateLeaves {
    pub coarse: Tensor<f64>,
    pub skip: Tensor<f64>,
    pub mlp: MlpParams<f64>,
}

impl Parameters<f64> for PropagateLeaves {
    fn tensors(&self) -> Vec<(String, &Tensor<f64>)> {
        let mut v = vec![("coarse".to_string(), &self.coarse), ("skip".to_string(), &self.skip)];
        v.extend(self.mlp.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        let mut v = vec![&mut self.coarse, &mut self.skip];
        v.extend(self.mlp.tensors_mut());
        v
    }
}

pub fn propagate_report(rng: &mut ChaCha8Rng, group: &Arc<FiniteRotationGroup>) -> GradCheckReport {
    let g = group.order();
    let coarse_pos = random_positions(rng, 6);
    let fine_pos = random_positions(rng, 10);
    let p = PropagateLeaves {
        coarse: random_tensor(rng, vec![6 * g, 3]),
        skip: random_tensor(rng, vec![10 * g, 2]),
        mlp: MlpParams::init(&[5, 4], rng).unwrap(),
    };
    check(&p, |tape, p| {
        let coarse = LiftedVar {
            positions: coarse_pos.clone(),
            group: group.clone(),
            features: tape.param(&p.coarse),
        };
        let skip = LiftedVar {
            positions: fine_pos.clone(),
            group: group.clone(),
            features: tape.param(&p.skip),
        };
        let mlp = p.mlp.bind(tape);
        let y = feature_propagate_var(&coarse, &fine_pos, Some(&skip), &mlp)?;
        let mut vars = vec![coarse.features, skip.features];
        vars.extend(mlp.vars());
        Ok((project(y.features, 8)?, vars))
    })
}

pub fn lifted_random(rng: &mut ChaCha8Rng, group: &Arc<FiniteRotationGroup>, n: usize, d: usize) -> LiftedCloud<f64> {
    let positions = random_positions(rng, n);
    let t = random_tensor(rng, vec![n, group.order(), d]);
    LiftedCloud::new(positions, group.clone(), t).unwrap()
}

/// Gradient check of `t ↦ loss(θ + t·u)` at `t = 0` along random unit
/// directions `u`; the analytic slope is `∇loss · u`. Returns the worst
/// report.
pub fn directional_report(
    model: &Model<f64>,
    x: &PointCloud,
    target: Target<'_>,
    directions: usize,
    rng: &mut ChaCha8Rng,
) -> GradCheckReport {
    let x0 = flatten(&model.params);
    let mut work = model.clone();
    let mut worst: Option<GradCheckReport> = None;
    for _ in 0..directions {
        let u: Vec<f64> = (0..x0.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u: Vec<f64> = u.iter().map(|v| v / n).collect();
        let r = gradient_check(
            |t| {
                let p: Vec<f64> = x0.iter().zip(&u).map(|(a, b)| a + t[0] * b).collect();
                unflatten(&mut work.params, &p);
                let (loss, grads, _) = work.loss_and_grad(x, target).unwrap();
                let slope = grads.concat().iter().zip(&u).map(|(g, d)| g * d).sum();
                (loss, vec![slope])
            },
            &[0.0],
            STEP,
        )
        .unwrap();
        if worst.as_ref().is_none_or(|w| r.max_rel_error > w.max_rel_error || r.checked == 0) {
            worst = Some(r);
        }
    }
    worst.expect("at least one direction")
}
