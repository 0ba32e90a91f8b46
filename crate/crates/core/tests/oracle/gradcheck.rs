//! Finite-difference harness and one random case per differentiable op.
//!
//! Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-2)`;
//! the floor keeps components whose true gradient is ~0 from turning the
//! O(h^2) truncation error of the central difference into a false alarm.

use std::rc::Rc;

use floodguard::autodiff::layers::{conv2d, dense, upsample_map, ConvGeometry};
use floodguard::autodiff::{Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;
pub const TRIALS: usize = 100;

pub type Builder = dyn Fn(&mut Graph, &[NodeId]) -> NodeId;

fn eval(inputs: &[Tensor], build: &Builder) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let out = build(&mut g, &ids);
    g.forward(out, &[]).unwrap().item()
}

/// Max relative error between backward() and central differences.
pub fn max_rel_error(inputs: &[Tensor], build: &Builder) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let out = build(&mut g, &ids);
    g.forward(out, &[]).unwrap();
    let grads = g.backward(out, None).unwrap();
    let mut worst = 0.0f64;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get_or_zeros(*id, inputs[k].shape());
        for j in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= H;
            let numeric = (eval(&plus, build) - eval(&minus, build)) / (2.0 * H);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
            worst = worst.max(err);
        }
    }
    worst
}

/// Projects a tensor onto random fixed weights so every output matters.
fn project(g: &mut Graph, x: NodeId, weights: &Tensor) -> NodeId {
    let p = g.mul_const(x, weights.clone());
    g.sum(p)
}

/// Values bounded away from zero so kinks stay further than `H` away.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Inputs plus the scalar-valued graph built over them.
pub type Trial = (Vec<Tensor>, Box<Builder>);
pub type Case = fn(&mut ChaCha8Rng) -> Trial;

/// Worst relative error of `case` over `TRIALS` random draws.
pub fn worst_error(name: &str, case: Case) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ name.len() as u64);
    (0..TRIALS)
        .map(|_| {
            let (inputs, build) = case(&mut rng);
            max_rel_error(&inputs, &*build)
        })
        .fold(0.0, f64::max)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn elementwise(rng: &mut ChaCha8Rng, op: fn(&mut Graph, NodeId) -> NodeId, kinked: bool) -> Trial {
    let x = if kinked { away_from_zero(rng, &[3, 4]) } else { randn(rng, &[3, 4]) };
    let r = randn(rng, &[3, 4]);
    (
        vec![x],
        Box::new(move |g: &mut Graph, ids: &[NodeId]| {
            let y = op(g, ids[0]);
            project(g, y, &r)
        }),
    )
}

/// Penalty `mean((|d critic / d x|_2 - 1)^2)` built through `grad_graph`.
fn penalty(g: &mut Graph, ids: &[NodeId], x: &Tensor, geom: &ConvGeometry) -> NodeId {
    let xi = g.parameter(x.clone());
    let h = conv2d(g, xi, geom, ids[0], ids[1]).unwrap();
    let h = g.leaky_relu(h, 0.2);
    let rows = geom.batch;
    let flat = g.reshape(h, &[rows, geom.out_h() * geom.out_w() * 2]);
    let d = dense(g, flat, ids[2], ids[3]);
    g.forward(d, &[]).unwrap();
    let grad = g.grad_graph(d, &[xi]).unwrap()[0];
    let per_sample = g.reshape(grad, &[rows, geom.in_h * geom.in_w]);
    let sq = g.square(per_sample);
    let norm2 = g.sum_cols(sq);
    let norm = g.sqrt(norm2);
    let dev = g.add_scalar(norm, -1.0);
    let dev2 = g.square(dev);
    g.mean(dev2)
}

/// Every differentiable op (and the layers built from them) by name.
pub fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("dense", |rng| {
            let x = randn(rng, &[3, 4]);
            let w = randn(rng, &[4, 2]);
            let b = randn(rng, &[2]);
            let r = randn(rng, &[3, 2]);
            (
                vec![x, w, b],
                Box::new(move |g: &mut Graph, ids: &[NodeId]| {
                    let y = dense(g, ids[0], ids[1], ids[2]);
                    project(g, y, &r)
                }),
            )
        }),
        ("conv2d", |rng| {
            let geom =
                ConvGeometry { batch: 2, in_h: 4, in_w: 5, in_c: 2, k_h: 3, k_w: 3, stride: 2, pad_h: 1, pad_w: 1 };
            let x = randn(rng, &[2 * 4 * 5, 2]);
            let w = randn(rng, &[geom.patch_len(), 3]);
            let b = randn(rng, &[3]);
            let r = randn(rng, &[2 * geom.out_h() * geom.out_w(), 3]);
            (
                vec![x, w, b],
                Box::new(move |g: &mut Graph, ids: &[NodeId]| {
                    let y = conv2d(g, ids[0], &geom, ids[1], ids[2]).unwrap();
                    project(g, y, &r)
                }),
            )
        }),
        ("max_pool", |rng| {
            // Distinct values at least 0.01 apart so the argmax cannot flip.
            let mut vals: Vec<f64> = (0..24).map(|i| i as f64 * 0.01).collect();
            for i in (1..vals.len()).rev() {
                let j = rng.random_range(0..=i);
                vals.swap(i, j);
            }
            let x = Tensor::new(vec![8, 3], vals).unwrap();
            let r = randn(rng, &[2, 3]);
            (
                vec![x],
                Box::new(move |g: &mut Graph, ids: &[NodeId]| {
                    let y = g.max_pool_rows(ids[0], 4);
                    project(g, y, &r)
                }),
            )
        }),
        ("relu", |rng| elementwise(rng, |g, x| g.relu(x), true)),
        ("leaky_relu", |rng| elementwise(rng, |g, x| g.leaky_relu(x, 0.2), true)),
        ("tanh", |rng| elementwise(rng, |g, x| g.tanh(x), false)),
        ("sigmoid", |rng| elementwise(rng, |g, x| g.sigmoid(x), false)),
        ("square", |rng| elementwise(rng, |g, x| g.square(x), false)),
        ("sqrt", |rng| {
            let x = Tensor::uniform(&[3, 4], 0.2, 2.0, rng);
            let r = randn(rng, &[3, 4]);
            (
                vec![x],
                Box::new(move |g: &mut Graph, ids: &[NodeId]| {
                    let y = g.sqrt(ids[0]);
                    project(g, y, &r)
                }),
            )
        }),
        ("mean", |rng| {
            let x = randn(rng, &[3, 4]);
            (
                vec![x],
                Box::new(|g: &mut Graph, ids: &[NodeId]| {
                    let t = g.tanh(ids[0]);
                    g.mean(t)
                }),
            )
        }),
        ("sum_cols", |rng| {
            let x = randn(rng, &[3, 4]);
            let r = randn(rng, &[3]);
            (
                vec![x],
                Box::new(move |g: &mut Graph, ids: &[NodeId]| {
                    let s = g.square(ids[0]);
                    let y = g.sum_cols(s);
                    project(g, y, &r)
                }),
            )
        }),
        ("mul_div_sub", |rng| {
            let a = randn(rng, &[2, 3]);
            let b = Tensor::uniform(&[2, 3], 0.5, 2.0, rng);
            let r = randn(rng, &[3, 2]);
            (
                vec![a, b],
                Box::new(move |g: &mut Graph, ids: &[NodeId]| {
                    let m = g.mul(ids[0], ids[1]);
                    let d = g.div(m, ids[1]);
                    let d2 = g.div(ids[0], ids[1]);
                    let s = g.sub(d, d2);
                    let s = g.add(s, m);
                    let t = g.transpose(s);
                    project(g, t, &r)
                }),
            )
        }),
        ("upsample", |rng| {
            let map = Rc::new(upsample_map(1, 2, 3, 2, 2, 3, 5).unwrap());
            let x = randn(rng, &[6, 2]);
            let r = randn(rng, &[15, 2]);
            (
                vec![x],
                Box::new(move |g: &mut Graph, ids: &[NodeId]| {
                    let y = g.gather(ids[0], map.clone());
                    let y = g.tanh(y);
                    let back = g.scatter_add(y, map.clone());
                    let z = g.gather(back, map.clone());
                    project(g, z, &r)
                }),
            )
        }),
        ("bce", |rng| {
            let z = randn(rng, &[5, 1]);
            let t = Tensor::new(vec![5, 1], (0..5).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect())
                .unwrap();
            (vec![z], Box::new(move |g: &mut Graph, ids: &[NodeId]| g.bce_with_logits(ids[0], t.clone())))
        }),
        ("two_layer", |rng| {
            let x = randn(rng, &[4, 5]);
            let w1 = Tensor::randn(&[5, 6], 0.5, rng);
            let b1 = randn(rng, &[6]);
            let w2 = Tensor::randn(&[6, 1], 0.5, rng);
            let b2 = randn(rng, &[1]);
            (
                vec![w1, w2, b1, b2],
                Box::new(move |g: &mut Graph, ids: &[NodeId]| {
                    let xi = g.constant(x.clone());
                    let h = dense(g, xi, ids[0], ids[2]);
                    let h = g.tanh(h);
                    let o = dense(g, h, ids[1], ids[3]);
                    let o = g.sigmoid(o);
                    g.mean(o)
                }),
            )
        }),
        ("gradient_penalty", |rng| {
            let geom =
                ConvGeometry { batch: 2, in_h: 4, in_w: 3, in_c: 1, k_h: 3, k_w: 3, stride: 2, pad_h: 1, pad_w: 1 };
            let x = randn(rng, &[2 * 4 * 3, 1]);
            // Pre-activations of the leaky unit are checked away from the kink by
            // keeping weights modest; a kink crossing would show up as an error.
            let w = Tensor::randn(&[9, 2], 0.7, rng);
            let b = away_from_zero(rng, &[2]);
            let w2 = Tensor::randn(&[geom.out_h() * geom.out_w() * 2, 1], 0.7, rng);
            let b2 = randn(rng, &[1]);
            (vec![w, b, w2, b2], Box::new(move |g: &mut Graph, ids: &[NodeId]| penalty(g, ids, &x, &geom)))
        }),
    ]
}
