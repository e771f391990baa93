//! Randomized finite-difference checks for every graph op.

use rand::Rng;

use super::{grad_check_with, Graph, Result, Tensor, Var};
use crate::rng::{derive_seed, seeded_rng, SvRng};

const H: f64 = 1e-4;

/// Worst relative gradient error of one op over several random shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub shapes: usize,
    pub worst: f64,
}

/// Deterministic, index-dependent weights so that a weighted sum gives every
/// output element a distinct O(1) gradient.
pub fn probe_weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 + (1.7 * i as f64 + 0.3).sin()).collect()
}

/// `sum(y * w)` for fixed [`probe_weights`].
pub fn weighted_sum(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(Tensor::new(&shape, probe_weights(g.value(y).numel()))?);
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

fn rand_tensor(rng: &mut SvRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("rank <= 3")
}

/// Values bounded away from zero by at least `gap`.
fn rand_away_from_zero(rng: &mut SvRng, shape: &[usize], gap: f64) -> Tensor {
    let mut t = rand_tensor(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (gap + v.abs());
    }
    t
}

fn rand_shape(rng: &mut SvRng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.gen_range(1..=5)).collect()
}

fn rand_any_shape(rng: &mut SvRng) -> Vec<usize> {
    let rank = rng.gen_range(1..=3);
    rand_shape(rng, rank)
}

type Case = (Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

fn case(rng: &mut SvRng, op: &str) -> Case {
    match op {
        "matmul" => {
            let (m, k, n) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6));
            (
                vec![rand_tensor(rng, &[m, k]), rand_tensor(rng, &[k, n])],
                Box::new(|g, v| {
                    let y = g.matmul(v[0], v[1])?;
                    weighted_sum(g, y)
                }),
            )
        }
        "add" | "sub" | "mul" => {
            let rank = rng.gen_range(1..=3);
            let a = rand_shape(rng, rank);
            // Broadcast: the second operand drops leading axes and collapses
            // random remaining axes to 1.
            let keep = rng.gen_range(1..=rank);
            let b: Vec<usize> = a[rank - keep..]
                .iter()
                .map(|&d| if rng.gen_bool(0.4) { 1 } else { d })
                .collect();
            let (ta, tb) = if rng.gen_bool(0.5) {
                (rand_tensor(rng, &a), rand_tensor(rng, &b))
            } else {
                (rand_tensor(rng, &b), rand_tensor(rng, &a))
            };
            let kind = op.to_string();
            (
                vec![ta, tb],
                Box::new(move |g, v| {
                    let y = match kind.as_str() {
                        "add" => g.add(v[0], v[1])?,
                        "sub" => g.sub(v[0], v[1])?,
                        _ => g.mul(v[0], v[1])?,
                    };
                    weighted_sum(g, y)
                }),
            )
        }
        "add_scalar" | "mul_scalar" | "tanh" => {
            let shape = rand_any_shape(rng);
            let s: f64 = rng.gen_range(-2.0..2.0);
            let kind = op.to_string();
            (
                vec![rand_tensor(rng, &shape)],
                Box::new(move |g, v| {
                    let y = match kind.as_str() {
                        "add_scalar" => g.add_scalar(v[0], s),
                        "mul_scalar" => g.mul_scalar(v[0], s),
                        _ => g.tanh(v[0]),
                    };
                    weighted_sum(g, y)
                }),
            )
        }
        "relu" => {
            let shape = rand_any_shape(rng);
            (
                vec![rand_away_from_zero(rng, &shape, 1e-3)],
                Box::new(|g, v| {
                    let y = g.relu(v[0]);
                    weighted_sum(g, y)
                }),
            )
        }
        "sqrt" => {
            let shape = rand_any_shape(rng);
            let mut t = rand_tensor(rng, &shape);
            t.data_mut().iter_mut().for_each(|v| *v = 0.1 + v.abs());
            (
                vec![t],
                Box::new(|g, v| {
                    let y = g.sqrt(v[0]);
                    weighted_sum(g, y)
                }),
            )
        }
        "softmax" | "sum" | "mean" | "l2_normalize" => {
            let rank = rng.gen_range(1..=3);
            let mut shape = rand_shape(rng, rank);
            let axis = rng.gen_range(0..rank);
            shape[axis] = rng.gen_range(2..=6);
            let kind = op.to_string();
            (
                vec![rand_away_from_zero(rng, &shape, 0.1)],
                Box::new(move |g, v| {
                    let y = match kind.as_str() {
                        "softmax" => g.softmax(v[0], axis)?,
                        "sum" => g.sum(v[0], axis)?,
                        "mean" => g.mean(v[0], axis)?,
                        _ => g.l2_normalize(v[0], axis)?,
                    };
                    weighted_sum(g, y)
                }),
            )
        }
        "std" => {
            let rank = rng.gen_range(1..=3);
            let mut shape = rand_shape(rng, rank);
            let axis = rng.gen_range(0..rank);
            shape[axis] = rng.gen_range(2..=6);
            (
                vec![rand_tensor(rng, &shape)],
                Box::new(move |g, v| {
                    let y = g.std(v[0], axis, 1e-5)?;
                    weighted_sum(g, y)
                }),
            )
        }
        "layer_norm" => {
            let rank = rng.gen_range(1..=3);
            let mut shape = rand_shape(rng, rank);
            let axis = rng.gen_range(0..rank);
            // Two-element slices normalize to +-1 almost regardless of x, which
            // leaves an input gradient too small to difference reliably.
            shape[axis] = rng.gen_range(3..=6);
            let len = shape[axis];
            (
                vec![
                    rand_tensor(rng, &shape),
                    rand_tensor(rng, &[len]),
                    rand_tensor(rng, &[len]),
                ],
                Box::new(move |g, v| {
                    let y = g.layer_norm(v[0], v[1], v[2], axis)?;
                    weighted_sum(g, y)
                }),
            )
        }
        "conv1d" => {
            let batch = rng.gen_range(0..3);
            let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let k = rng.gen_range(1..=5);
            let dilation = rng.gen_range(1..=3);
            let len = rng.gen_range(3..12);
            let xs = if batch == 0 { vec![cin, len] } else { vec![batch, cin, len] };
            let with_bias = rng.gen_bool(0.5);
            let mut inputs = vec![rand_tensor(rng, &xs), rand_tensor(rng, &[cout, cin, k])];
            if with_bias {
                inputs.push(rand_tensor(rng, &[cout]));
            }
            (
                inputs,
                Box::new(move |g, v| {
                    let y = g.conv1d(v[0], v[1], v.get(2).copied(), dilation)?;
                    weighted_sum(g, y)
                }),
            )
        }
        "sum_all" | "mean_all" => {
            let shape = rand_any_shape(rng);
            let kind = op.to_string();
            (
                vec![rand_tensor(rng, &shape)],
                Box::new(move |g, v| {
                    let y = g.mul(v[0], v[0])?;
                    Ok(if kind == "sum_all" { g.sum_all(y) } else { g.mean_all(y) })
                }),
            )
        }
        "concat" => {
            let rank = rng.gen_range(1..=3);
            let axis = rng.gen_range(0..rank);
            let base = rand_shape(rng, rank);
            let parts = rng.gen_range(1..=3);
            let inputs: Vec<Tensor> = (0..parts)
                .map(|_| {
                    let mut s = base.clone();
                    s[axis] = rng.gen_range(1..=4);
                    rand_tensor(rng, &s)
                })
                .collect();
            (
                inputs,
                Box::new(move |g, v| {
                    let y = g.concat(v, axis)?;
                    weighted_sum(g, y)
                }),
            )
        }
        "reshape" => {
            let (a, b, c) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
            (
                vec![rand_tensor(rng, &[a, b * c])],
                Box::new(move |g, v| {
                    let y = g.reshape(v[0], &[b, a, c])?;
                    weighted_sum(g, y)
                }),
            )
        }
        "transpose" => {
            let (r, c) = (rng.gen_range(1..6), rng.gen_range(1..6));
            (
                vec![rand_tensor(rng, &[r, c])],
                Box::new(|g, v| {
                    let y = g.transpose(v[0])?;
                    weighted_sum(g, y)
                }),
            )
        }
        "cross_entropy" => {
            let n = rng.gen_range(2..10);
            let label = rng.gen_range(0..n);
            let shape = if rng.gen_bool(0.5) { vec![n] } else { vec![1, n] };
            let mut t = rand_tensor(rng, &shape);
            t.data_mut().iter_mut().for_each(|v| *v *= 3.0);
            (vec![t], Box::new(move |g, v| g.cross_entropy(v[0], label)))
        }
        "cosine" => {
            let n = rng.gen_range(2..10);
            (
                vec![rand_tensor(rng, &[n]), rand_tensor(rng, &[n])],
                Box::new(|g, v| g.cosine(v[0], v[1])),
            )
        }
        "angular_margin" => {
            let n = rng.gen_range(2..8);
            let label = rng.gen_range(0..n);
            let margin: f64 = rng.gen_range(0.0..0.4);
            let scale: f64 = rng.gen_range(1.0..30.0);
            let mut t = rand_tensor(rng, &[1, n]);
            t.data_mut().iter_mut().for_each(|v| *v *= 0.9);
            (
                vec![t],
                Box::new(move |g, v| {
                    let y = g.angular_margin(v[0], label, margin, scale)?;
                    weighted_sum(g, y)
                }),
            )
        }
        other => unreachable!("no case for op {other}"),
    }
}

/// Every op exercised by [`op_suite`].
pub const OPS: &[&str] = &[
    "matmul",
    "add",
    "sub",
    "mul",
    "add_scalar",
    "mul_scalar",
    "relu",
    "tanh",
    "sqrt",
    "softmax",
    "layer_norm",
    "conv1d",
    "sum",
    "mean",
    "sum_all",
    "mean_all",
    "std",
    "concat",
    "reshape",
    "transpose",
    "cross_entropy",
    "cosine",
    "l2_normalize",
    "angular_margin",
];

/// Runs `shapes` random finite-difference checks for each op in [`OPS`].
pub fn op_suite(seed: u64, shapes: usize) -> Result<Vec<OpCheck>> {
    OPS.iter()
        .map(|&name| {
            let mut rng = seeded_rng(derive_seed(seed, name));
            let mut worst = 0.0f64;
            for _ in 0..shapes {
                let (inputs, f) = case(&mut rng, name);
                worst = worst.max(grad_check_with(f, &inputs, H)?);
            }
            Ok(OpCheck { name, shapes, worst })
        })
        .collect()
}
