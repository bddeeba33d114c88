//! Central finite-difference gradient checks in 64-bit precision, shared by
//! the core test suite and the acceptance runner.

use lungseg_core::models::{attach_deep_supervision, build_graph, Architecture, GraphConfig, Mode};
use lungseg_core::nn::{BatchNormMode, DeepSupervisionSpec, LossKind, Padding, Tape, Tensor, Var};
use lungseg_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
/// Second step for the full network, where a 1e-5 perturbation can cross a
/// ReLU or pooling kink.
pub const NETWORK_STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn random(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    let vals = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::from_vec(dims, vals).unwrap()
}

fn targets(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| f64::from(rng.gen::<bool>())).collect()).unwrap()
}

type Op = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Scalar loss `bce(sigmoid(op(inputs)), target)` unless `raw_loss`, in
/// which case `op` already returns the scalar.
fn loss_of(op: &Op, inputs: &[Tensor<f64>], target: Option<&Tensor<f64>>) -> (Tape<f64>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = op(&mut tape, &vars).unwrap();
    let loss = match target {
        Some(t) => {
            let p = tape.sigmoid(out);
            tape.bce_loss(p, t).unwrap()
        }
        None => out,
    };
    (tape, vars, loss)
}

/// Worst relative error over every entry of every input.
pub fn check(op: &Op, inputs: Vec<Tensor<f64>>, target: Option<Tensor<f64>>) -> f64 {
    let (tape, vars, loss) = loss_of(op, &inputs, target.as_ref());
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("gradient for every leaf").values().to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let mut moved = inputs.clone();
                moved[i].values_mut()[j] += delta;
                let (tape, _, loss) = loss_of(op, &moved, target.as_ref());
                tape.value(loss).values()[0]
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn conv2d_same_and_valid() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    for (stride, padding, seed) in [(1, Padding::Same, 1), (2, Padding::Same, 2), (1, Padding::Valid, 3), (2, Padding::Valid, 4)] {
        let mut r = rng(seed);
        let x = random(&mut r, &[2, 7, 6, 3], -1.0, 1.0);
        let k = random(&mut r, &[3, 3, 3, 4], -0.5, 0.5);
        let (oh, ow) = match padding {
            Padding::Same => (7usize.div_ceil(stride), 6usize.div_ceil(stride)),
            Padding::Valid => ((7 - 3) / stride + 1, (6 - 3) / stride + 1),
        };
        let t = targets(&mut r, &[2, oh, ow, 4]);
        let op = move |tape: &mut Tape<f64>, v: &[Var]| tape.conv2d(v[0], v[1], stride, padding);
        out.push(("conv2d", check(&op, vec![x, k], Some(t))));
    }
    out
}

pub fn pointwise_conv_and_bias() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut r = rng(5);
    let x = random(&mut r, &[3, 4, 4, 3], -1.0, 1.0);
    let k = random(&mut r, &[1, 1, 3, 2], -1.0, 1.0);
    let b = random(&mut r, &[2], -0.5, 0.5);
    let t = targets(&mut r, &[3, 4, 4, 2]);
    let op = |tape: &mut Tape<f64>, v: &[Var]| {
        let y = tape.conv2d(v[0], v[1], 1, Padding::Same)?;
        tape.add_bias(y, v[2])
    };
    out.push(("conv1x1+bias", check(&op, vec![x, k, b], Some(t))));
    out
}

pub fn maxpool_and_upsample() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut r = rng(6);
    // a permutation keeps every pool window free of near-ties
    let n = 2 * 8 * 8 * 3;
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    for i in (1..n).rev() {
        vals.swap(i, r.gen_range(0..=i));
    }
    let x = Tensor::from_vec(&[2, 8, 8, 3], vals).unwrap();
    let t = targets(&mut r, &[2, 4, 4, 3]);
    let op = |tape: &mut Tape<f64>, v: &[Var]| tape.maxpool2(v[0]);
    out.push(("maxpool2", check(&op, vec![x.clone()], Some(t))));

    let t = targets(&mut r, &[2, 16, 16, 3]);
    let op = |tape: &mut Tape<f64>, v: &[Var]| tape.upsample2(v[0]);
    out.push(("upsample2", check(&op, vec![x], Some(t))));
    out
}

pub fn batchnorm_train_and_infer() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut r = rng(7);
    let x = random(&mut r, &[4, 8, 8, 3], -2.0, 3.0);
    let scale = random(&mut r, &[3], 0.5, 1.5);
    let shift = random(&mut r, &[3], -0.5, 0.5);
    let t = targets(&mut r, &[4, 8, 8, 3]);
    let op = |tape: &mut Tape<f64>, v: &[Var]| {
        let (mut m, mut s) = (vec![0.0; 3], vec![1.0; 3]);
        tape.batchnorm(v[0], v[1], v[2], BatchNormMode::Train { running_mean: &mut m, running_var: &mut s })
    };
    out.push(("batchnorm/train", check(&op, vec![x.clone(), scale.clone(), shift.clone()], Some(t.clone()))));
    let op = |tape: &mut Tape<f64>, v: &[Var]| {
        tape.batchnorm(v[0], v[1], v[2], BatchNormMode::Infer { mean: &[0.3, -0.2, 0.5], var: &[1.5, 0.7, 2.0] })
    };
    out.push(("batchnorm/infer", check(&op, vec![x, scale, shift], Some(t))));
    out
}

pub fn relu_sigmoid_concat_add() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut r = rng(8);
    let a = away_from_zero(&mut r, &[2, 5, 5, 3]);
    let b = away_from_zero(&mut r, &[2, 5, 5, 3]);
    let c = random(&mut r, &[2, 5, 5, 2], -1.0, 1.0);
    let t3 = targets(&mut r, &[2, 5, 5, 3]);
    let t5 = targets(&mut r, &[2, 5, 5, 5]);
    let op = |tape: &mut Tape<f64>, v: &[Var]| Ok(tape.relu(v[0]));
    out.push(("relu", check(&op, vec![a.clone()], Some(t3.clone()))));
    let op = |tape: &mut Tape<f64>, v: &[Var]| {
        let s = tape.sigmoid(v[0]);
        Ok(tape.sigmoid(s))
    };
    out.push(("sigmoid", check(&op, vec![a.clone()], Some(t3.clone()))));
    let op = |tape: &mut Tape<f64>, v: &[Var]| tape.concat_channels(v[0], v[1]);
    out.push(("concat", check(&op, vec![a.clone(), c], Some(t5))));
    let op = |tape: &mut Tape<f64>, v: &[Var]| tape.add(v[0], v[1]);
    out.push(("add", check(&op, vec![a, b], Some(t3))));
    out
}

pub fn losses_and_weighted_sum() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut r = rng(9);
    let x = random(&mut r, &[2, 6, 6, 1], -3.0, 3.0);
    let y = random(&mut r, &[2, 3, 3, 1], -3.0, 3.0);
    let tx = targets(&mut r, &[2, 6, 6, 1]);
    let ty = targets(&mut r, &[2, 3, 3, 1]);
    let a = tx.clone();
    let op = move |tape: &mut Tape<f64>, v: &[Var]| {
        let p = tape.sigmoid(v[0]);
        tape.bce_loss(p, &a)
    };
    out.push(("bce", check(&op, vec![x.clone()], None)));
    let a = tx.clone();
    let op = move |tape: &mut Tape<f64>, v: &[Var]| {
        let p = tape.sigmoid(v[0]);
        tape.soft_dice_loss(p, &a)
    };
    out.push(("soft_dice", check(&op, vec![x.clone()], None)));
    let op = move |tape: &mut Tape<f64>, v: &[Var]| {
        let (p, q) = (tape.sigmoid(v[0]), tape.sigmoid(v[1]));
        let l1 = tape.bce_loss(p, &tx)?;
        let l2 = LossKind::SoftDice.apply(tape, q, &ty)?;
        tape.weighted_sum(&[(l1, 1.0), (l2, 0.6)])
    };
    out.push(("weighted_sum", check(&op, vec![x, y], None)));
    out
}

pub struct NetworkCheck {
    pub checked: usize,
    pub worst: f64,
    /// Parameter name and entry of the worst disagreement.
    pub worst_at: String,
}

/// Every parameter gradient of a deeply supervised MultiResUNet on a
/// 2x16x16x5 input; large tensors are sampled at 12 seeded entries.
pub fn deeply_supervised_multires_unet() -> NetworkCheck {
    let cfg = GraphConfig {
        architecture: Architecture::MultiResUNet { alpha: 1.67 },
        in_channels: 5,
        base_filters: 4,
        input_size: 16,
        seed: 11,
    };
    let graph = attach_deep_supervision(build_graph::<f64>(cfg).unwrap(), DeepSupervisionSpec::default()).unwrap();
    let mut r = rng(12);
    let input = random(&mut r, &[2, 16, 16, 5], 0.0, 1.0);
    let mask = targets(&mut r, &[2, 16, 16, 1]);
    let level_targets: Vec<Tensor<f64>> = graph
        .head_sizes()
        .iter()
        .map(|&s| {
            let f = 16 / s;
            let mut v = Vec::with_capacity(2 * s * s);
            for n in 0..2 {
                for row in 0..s {
                    for col in 0..s {
                        let any = (0..f * f).any(|k| mask.values()[((n * 16 + row * f + k / f) * 16) + col * f + k % f] > 0.5);
                        v.push(f64::from(any));
                    }
                }
            }
            Tensor::from_vec(&[2, s, s, 1], v).unwrap()
        })
        .collect();
    let spec = graph.supervision().unwrap().clone();

    let loss = |g: &lungseg_core::models::Graph<f64>| -> (Tape<f64>, Vec<Option<Var>>, Var) {
        let mut g = g.clone();
        let mut tape = Tape::new();
        let fwd = g.forward(&mut tape, input.clone(), Mode::Train).unwrap();
        let total = lungseg_core::nn::deep_supervised_loss(&mut tape, &fwd.outputs, &level_targets, &spec, LossKind::Bce).unwrap();
        (tape, fwd.params, total)
    };

    let (tape, params, total) = loss(&graph);
    let grads = tape.backward(total).unwrap();
    let mut result = NetworkCheck { checked: 0, worst: 0.0, worst_at: String::new() };
    for (idx, var) in params.iter().enumerate() {
        let Some(var) = var else { continue };
        let analytic = grads.get(*var).unwrap().values().to_vec();
        let len = analytic.len();
        // every entry of small tensors, a seeded sample of large ones
        let picks: Vec<usize> = if len <= 12 { (0..len).collect() } else { (0..12).map(|_| r.gen_range(0..len)).collect() };
        for j in picks {
            let eval = |delta: f64| {
                let mut g = graph.clone();
                g.parameters_mut()[idx].tensor.values_mut()[j] += delta;
                let (tape, _, total) = loss(&g);
                tape.value(total).values()[0]
            };
            // kinks favour the small step, rounding noise the large one; a
            // wrong gradient disagrees at both
            let e = [STEP, NETWORK_STEP]
                .iter()
                .map(|&h| rel_err(analytic[j], (eval(h) - eval(-h)) / (2.0 * h)))
                .fold(f64::INFINITY, f64::min);
            if e > result.worst {
                result.worst = e;
                result.worst_at = format!("{}[{j}]", graph.parameters()[idx].name);
            }
            result.checked += 1;
        }
    }
    result
}

/// Every tape operation group, flattened.
pub fn all_operations() -> Vec<(&'static str, f64)> {
    [conv2d_same_and_valid, pointwise_conv_and_bias, maxpool_and_upsample, batchnorm_train_and_infer, relu_sigmoid_concat_add, losses_and_weighted_sum]
        .iter()
        .flat_map(|group| group())
        .collect()
}
