//! Central finite-difference verification of every differentiable tape op.
//!
//! Each case draws a random small instance in `f64`, reduces the op output to a
//! scalar through a fixed random projection, and compares the tape gradient of
//! every leaf against `(L(x + h) - L(x - h)) / 2h`.

use crate::tape::{Mode, Tape, Var};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_STEP: f64 = 1e-5;
/// Denominator floor of the elementwise relative error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

/// A random instance: leaf values plus a closure that rebuilds the scalar loss.
pub struct Case {
    pub leaves: Vec<Tensor<f64>>,
    build: Build,
}

impl Case {
    fn new(leaves: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var + 'static) -> Self {
        Self {
            leaves,
            build: Box::new(build),
        }
    }

    fn loss(&self, leaves: &[Tensor<f64>]) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
        let l = (self.build)(&mut tape, &vars);
        tape.value(l).data()[0]
    }

    /// Largest elementwise relative error between analytic and numeric gradients.
    pub fn max_rel_err(&self, h: f64) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.leaves.iter().map(|t| tape.param(t.clone())).collect();
        let l = (self.build)(&mut tape, &vars);
        tape.backward(l).expect("scalar loss");
        let mut worst = 0.0f64;
        let mut probe = self.leaves.clone();
        for (li, var) in vars.iter().enumerate() {
            let analytic = tape
                .grad(*var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(self.leaves[li].shape()));
            for e in 0..self.leaves[li].len() {
                let orig = self.leaves[li].data()[e];
                probe[li].data_mut()[e] = orig + h;
                let up = self.loss(&probe);
                probe[li].data_mut()[e] = orig - h;
                let down = self.loss(&probe);
                probe[li].data_mut()[e] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.data()[e];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
                worst = worst.max(rel);
            }
        }
        worst
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, rng)
}

/// Values with magnitude in [0.05, 1], so relu kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Reduces `y` to a scalar as `sum(y * r)` with fixed random `r`.
fn project(tape: &mut Tape<f64>, y: Var, r: &Tensor<f64>) -> Var {
    let p = tape.mul_const(y, r);
    tape.sum(p)
}

fn projected(
    rng: &mut ChaCha8Rng,
    leaves: Vec<Tensor<f64>>,
    out_shape: &[usize],
    op: impl Fn(&mut Tape<f64>, &[Var]) -> Var + 'static,
) -> Case {
    let r = rand_tensor(rng, out_shape, -1.0, 1.0);
    Case::new(leaves, move |t, v| {
        let y = op(t, v);
        project(t, y, &r)
    })
}

/// Names of all checked ops, in report order.
pub const OPS: &[&str] = &[
    "conv2d",
    "conv_transpose2d",
    "batch_norm_train",
    "batch_norm_eval",
    "dense",
    "relu",
    "sigmoid",
    "softmax",
    "dropout",
    "reshape",
    "add",
    "scale",
    "mul_const",
    "sum",
    "bce",
    "smooth_l1",
    "cross_entropy",
];

/// Draws one random instance of `op`.
pub fn random_case(op: &str, rng: &mut ChaCha8Rng) -> Case {
    match op {
        "conv2d" => {
            let (n, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
            let k = rng.gen_range(2..=4);
            let stride = rng.gen_range(1..=2);
            let pad = rng.gen_range(0..=1);
            let (h, w) = (rng.gen_range(k..=k + 4), rng.gen_range(k..=k + 4));
            let geom = crate::ConvGeom::new(k, stride, pad);
            let out = [n, cout, geom.conv_out(h), geom.conv_out(w)];
            let leaves = vec![
                rand_tensor(rng, &[n, cin, h, w], -1.0, 1.0),
                rand_tensor(rng, &[cout, cin, k, k], -1.0, 1.0),
                rand_tensor(rng, &[cout], -1.0, 1.0),
            ];
            projected(rng, leaves, &out, move |t, v| t.conv2d(v[0], v[1], v[2], stride, pad))
        }
        "conv_transpose2d" => {
            let (n, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
            let k = rng.gen_range(2..=4);
            let stride = rng.gen_range(1..=2);
            let op_pad = rng.gen_range(0..stride);
            let (h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let geom = crate::ConvGeom::new(k, stride, 0);
            let out = [n, cout, geom.transpose_out(h, op_pad), geom.transpose_out(w, op_pad)];
            let leaves = vec![
                rand_tensor(rng, &[n, cin, h, w], -1.0, 1.0),
                rand_tensor(rng, &[cin, cout, k, k], -1.0, 1.0),
                rand_tensor(rng, &[cout], -1.0, 1.0),
            ];
            projected(rng, leaves, &out, move |t, v| {
                t.conv_transpose2d(v[0], v[1], v[2], stride, op_pad)
            })
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let train = op == "batch_norm_train";
            let c = rng.gen_range(1..=3);
            let shape: Vec<usize> = if rng.gen::<bool>() {
                vec![rng.gen_range(2..=4), c, rng.gen_range(1..=3), rng.gen_range(1..=3)]
            } else {
                vec![rng.gen_range(2..=6), c]
            };
            let leaves = vec![
                rand_tensor(rng, &shape, -2.0, 2.0),
                rand_tensor(rng, &[c], 0.5, 1.5),
                rand_tensor(rng, &[c], -0.5, 0.5),
            ];
            let rm = rand_tensor(rng, &[c], -0.5, 0.5).into_data();
            let rv = rand_tensor(rng, &[c], 0.5, 2.0).into_data();
            projected(rng, leaves, &shape, move |t, v| {
                let (mut m, mut s) = (rm.clone(), rv.clone());
                let mode = if train { Mode::Train } else { Mode::Eval };
                t.batch_norm(v[0], v[1], v[2], &mut m, &mut s, mode).expect("valid batch")
            })
        }
        "dense" => {
            let (n, fin, fout) = (rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=5));
            let leaves = vec![
                rand_tensor(rng, &[n, fin], -1.0, 1.0),
                rand_tensor(rng, &[fout, fin], -1.0, 1.0),
                rand_tensor(rng, &[fout], -1.0, 1.0),
            ];
            projected(rng, leaves, &[n, fout], |t, v| t.dense(v[0], v[1], v[2]))
        }
        "relu" | "sigmoid" | "softmax" | "dropout" | "scale" | "mul_const" | "sum" | "reshape" | "add" => {
            let shape = [rng.gen_range(1..=3), rng.gen_range(2..=5)];
            let x = away_from_zero(rng, &shape);
            match op {
                "relu" => projected(rng, vec![x], &shape, |t, v| t.relu(v[0])),
                "sigmoid" => projected(rng, vec![x], &shape, |t, v| t.sigmoid(v[0])),
                "softmax" => projected(rng, vec![x], &shape, |t, v| t.softmax(v[0])),
                "dropout" => {
                    let seed = rng.gen::<u64>();
                    projected(rng, vec![x], &shape, move |t, v| {
                        let mut drng = ChaCha8Rng::seed_from_u64(seed);
                        t.dropout(v[0], 0.5, Mode::Train, &mut drng)
                    })
                }
                "scale" => {
                    let f = rng.gen_range(-2.0..2.0);
                    projected(rng, vec![x], &shape, move |t, v| t.scale(v[0], f))
                }
                "mul_const" => {
                    let c = rand_tensor(rng, &shape, -2.0, 2.0);
                    projected(rng, vec![x], &shape, move |t, v| t.mul_const(v[0], &c))
                }
                "sum" => Case::new(vec![x], |t, v| {
                    let s = t.sum(v[0]);
                    t.scale(s, 0.75)
                }),
                "reshape" => {
                    let flat = [shape[0] * shape[1]];
                    projected(rng, vec![x], &flat, move |t, v| t.reshape(v[0], &flat))
                }
                _ => {
                    let y = rand_tensor(rng, &shape, -1.0, 1.0);
                    projected(rng, vec![x, y], &shape, |t, v| t.add(v[0], v[1]))
                }
            }
        }
        "bce" => {
            let shape = [rng.gen_range(1..=3), rng.gen_range(1..=6)];
            let pred = rand_tensor(rng, &shape, 0.05, 0.95);
            let target = rand_tensor(rng, &shape, 0.0, 1.0);
            Case::new(vec![pred], move |t, v| t.bce(v[0], &target))
        }
        "smooth_l1" => {
            let n = rng.gen_range(1..=8);
            let target = rand_tensor(rng, &[n], -1.0, 1.0);
            // keep |pred - target| away from the quadratic/linear switch at 1
            let diffs: Vec<f64> = (0..n)
                .map(|_| {
                    let d = if rng.gen::<bool>() {
                        rng.gen_range(0.0..0.9)
                    } else {
                        rng.gen_range(1.1..3.0)
                    };
                    if rng.gen::<bool>() {
                        d
                    } else {
                        -d
                    }
                })
                .collect();
            let pred = Tensor::from_vec(
                &[n],
                target.data().iter().zip(&diffs).map(|(t, d)| t + d).collect(),
            )
            .unwrap();
            Case::new(vec![pred], move |t, v| t.smooth_l1(v[0], &target))
        }
        "cross_entropy" => {
            let n = rng.gen_range(1..=5);
            let logits = rand_tensor(rng, &[n, 3], -2.0, 2.0);
            let classes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            Case::new(vec![logits], move |t, v| {
                let p = t.softmax(v[0]);
                t.cross_entropy(p, &classes)
            })
        }
        other => panic!("unknown op {other:?}"),
    }
}

/// Runs `instances` random cases of every op in [`OPS`].
pub fn check_all(instances: usize, seed: u64, h: f64) -> Vec<OpReport> {
    OPS.iter()
        .enumerate()
        .map(|(i, &op)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64 * 0x9E37_79B9));
            let max_rel_err = (0..instances)
                .map(|_| random_case(op, &mut rng).max_rel_err(h))
                .fold(0.0, f64::max);
            OpReport {
                op,
                instances,
                max_rel_err,
            }
        })
        .collect()
}
