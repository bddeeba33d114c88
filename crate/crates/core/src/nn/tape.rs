//! Reverse-mode differentiation over a linear tape of tensor operations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::conv::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight kept on the previous running statistics at each training step.
pub const BN_MOMENTUM: f64 = 0.9;
/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the
/// cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;
const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    Same,
    Valid,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub enum BatchNormMode<'a, T> {
    /// Normalize with batch statistics and fold them into the running ones.
    Train { running_mean: &'a mut [T], running_var: &'a mut [T] },
    /// Normalize with stored statistics.
    Infer { mean: &'a [T], var: &'a [T] },
}

enum Op<T> {
    Leaf,
    Conv { x: usize, kernel: usize, geom: ConvGeom },
    Bias { x: usize, bias: usize },
    MaxPool { x: usize, argmax: Vec<u32> },
    Upsample { x: usize },
    BatchNorm { x: usize, scale: usize, shift: usize, mean: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Relu { x: usize },
    Sigmoid { x: usize },
    Concat { a: usize, b: usize },
    Add { a: usize, b: usize },
    Bce { pred: usize, target: Tensor<T> },
    SoftDice { pred: usize, target: Tensor<T> },
    WeightedSum { terms: Vec<(usize, T)> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records values and the operations that produced them.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar with respect to every trainable leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_dims<T: Real>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        core::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(T::ZERO))
    }

    /// Cross-correlation of an NHWC input with a `k×k×Cin×Cout` kernel.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let geom = ConvGeom::new(self.value(x).dims(), self.value(kernel).dims(), stride, padding)?;
        let out = conv::forward(self.value(x).values(), self.value(kernel).values(), &geom);
        let t = Tensor::from_vec(&[geom.n, geom.oh, geom.ow, geom.cout], out)?;
        let ng = self.needs(x.0) || self.needs(kernel.0);
        Ok(self.push(t, Op::Conv { x: x.0, kernel: kernel.0, geom }, ng))
    }

    /// Per-channel bias on the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = *xv.dims().last().unwrap_or(&0);
        if bv.dims() != [c] {
            return Err(Error::ShapeMismatch(format!("bias {:?} for {c} channels", bv.dims())));
        }
        let mut out = xv.clone();
        for chunk in out.values_mut().chunks_mut(c) {
            for (o, &b) in chunk.iter_mut().zip(bv.values()) {
                *o += b;
            }
        }
        let ng = self.needs(x.0) || self.needs(bias.0);
        Ok(self.push(out, Op::Bias { x: x.0, bias: bias.0 }, ng))
    }

    /// 2×2 max pooling with stride 2. Ties resolve to the first cell in
    /// row-major order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (n, h, w, c) = self.value(x).nhwc()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::OddDimension { rows: h, cols: w });
        }
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x).values();
        let mut out = vec![T::ZERO; n * oh * ow * c];
        let mut argmax = vec![0u32; out.len()];
        for s in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let o = ((s * oh + oy) * ow + ox) * c + ch;
                        let mut best = ((s * h + 2 * oy) * w + 2 * ox) * c + ch;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let i = ((s * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                            if xv[i] > xv[best] {
                                best = i;
                            }
                        }
                        out[o] = xv[best];
                        argmax[o] = best as u32;
                    }
                }
            }
        }
        let t = Tensor::from_vec(&[n, oh, ow, c], out)?;
        let ng = self.needs(x.0);
        Ok(self.push(t, Op::MaxPool { x: x.0, argmax }, ng))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (n, h, w, c) = self.value(x).nhwc()?;
        let xv = self.value(x).values();
        let mut out = vec![T::ZERO; n * 4 * h * w * c];
        for s in 0..n {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    let src = ((s * h + y / 2) * w + xx / 2) * c;
                    let dst = ((s * 2 * h + y) * 2 * w + xx) * c;
                    out[dst..dst + c].copy_from_slice(&xv[src..src + c]);
                }
            }
        }
        let t = Tensor::from_vec(&[n, 2 * h, 2 * w, c], out)?;
        let ng = self.needs(x.0);
        Ok(self.push(t, Op::Upsample { x: x.0 }, ng))
    }

    /// Per-channel normalization over every axis but the last.
    pub fn batchnorm(&mut self, x: Var, scale: Var, shift: Var, mode: BatchNormMode<'_, T>) -> Result<Var> {
        let xv = self.value(x);
        let c = *xv.dims().last().unwrap_or(&0);
        for (name, p) in [("scale", self.value(scale)), ("shift", self.value(shift))] {
            if p.dims() != [c] {
                return Err(Error::ShapeMismatch(format!("batchnorm {name} {:?} for {c} channels", p.dims())));
            }
        }
        let eps = T::from_f64(BN_EPSILON);
        let m = xv.len() / c;
        let (mean, inv_std, batch_stats) = match mode {
            BatchNormMode::Train { running_mean, running_var } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(Error::ShapeMismatch("batchnorm running statistics".into()));
                }
                let mut mean = vec![T::ZERO; c];
                let mut var = vec![T::ZERO; c];
                for chunk in xv.values().chunks(c) {
                    for (acc, &v) in mean.iter_mut().zip(chunk) {
                        *acc += v;
                    }
                }
                let inv_m = T::ONE / T::from_f64(m as f64);
                mean.iter_mut().for_each(|v| *v *= inv_m);
                for chunk in xv.values().chunks(c) {
                    for ((acc, &v), &mu) in var.iter_mut().zip(chunk).zip(&mean) {
                        let d = v - mu;
                        *acc += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v *= inv_m);
                let keep = T::from_f64(BN_MOMENTUM);
                let blend = T::ONE - keep;
                for i in 0..c {
                    running_mean[i] = keep * running_mean[i] + blend * mean[i];
                    running_var[i] = keep * running_var[i] + blend * var[i];
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
                (mean, inv_std, true)
            }
            BatchNormMode::Infer { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::ShapeMismatch("batchnorm stored statistics".into()));
                }
                (mean.to_vec(), var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect(), false)
            }
        };
        let (sc, sh) = (self.value(scale).values(), self.value(shift).values());
        let mut out = xv.clone();
        for chunk in out.values_mut().chunks_mut(c) {
            for i in 0..c {
                chunk[i] = sc[i] * ((chunk[i] - mean[i]) * inv_std[i]) + sh[i];
            }
        }
        let ng = self.needs(x.0) || self.needs(scale.0) || self.needs(shift.0);
        Ok(self.push(out, Op::BatchNorm { x: x.0, scale: scale.0, shift: shift.0, mean, inv_std, batch_stats }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::ZERO { v } else { T::ZERO });
        let ng = self.needs(x.0);
        self.push(out, Op::Relu { x: x.0 }, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.needs(x.0);
        self.push(out, Op::Sigmoid { x: x.0 }, ng)
    }

    /// Concatenation along the channel (last) axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ad, bd) = (av.dims(), bv.dims());
        if ad.len() != bd.len() || ad.is_empty() || ad[..ad.len() - 1] != bd[..bd.len() - 1] {
            return Err(Error::ShapeMismatch(format!("concat {ad:?} with {bd:?}")));
        }
        let (ca, cb) = (ad[ad.len() - 1], bd[bd.len() - 1]);
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for (x, y) in av.values().chunks(ca).zip(bv.values().chunks(cb)) {
            out.extend_from_slice(x);
            out.extend_from_slice(y);
        }
        let mut dims = ad.to_vec();
        *dims.last_mut().unwrap() = ca + cb;
        let t = Tensor::from_vec(&dims, out)?;
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(t, Op::Concat { a: a.0, b: b.0 }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims("add", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(out, Op::Add { a: a.0, b: b.0 }, ng))
    }

    /// Mean binary cross-entropy against a fixed target.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        same_dims("bce_loss", self.value(pred), target)?;
        let lo = T::from_f64(BCE_CLAMP);
        let hi = T::ONE - lo;
        let mut total = 0.0f64;
        for (&p, &t) in self.value(pred).values().iter().zip(target.values()) {
            let p = p.max(lo).min(hi);
            total -= (t * p.ln() + (T::ONE - t) * (T::ONE - p).ln()).to_f64();
        }
        let loss = Tensor::scalar(T::from_f64(total / target.len() as f64));
        let ng = self.needs(pred.0);
        Ok(self.push(loss, Op::Bce { pred: pred.0, target: target.clone() }, ng))
    }

    /// `1 - (2·Σpt + 1) / (Σp + Σt + 1)`.
    pub fn soft_dice_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        same_dims("soft_dice_loss", self.value(pred), target)?;
        let (i, p, t) = dice_sums(self.value(pred).values(), target.values());
        let s = T::from_f64(DICE_SMOOTH);
        let loss = Tensor::scalar(T::ONE - (T::from_f64(2.0) * i + s) / (p + t + s));
        let ng = self.needs(pred.0);
        Ok(self.push(loss, Op::SoftDice { pred: pred.0, target: target.clone() }, ng))
    }

    /// `Σ weightₖ · termₖ` over scalar vars.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::ZERO;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::ShapeMismatch(format!("weighted_sum term {:?} is not scalar", t.dims())));
            }
            total += w * t.values()[0];
        }
        let ng = terms.iter().any(|(v, _)| self.needs(v.0));
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum { terms: terms.iter().map(|&(v, w)| (v.0, w)).collect() }, ng))
    }

    /// Back-propagates from the scalar `loss`. Only leaves keep their
    /// gradients in the result.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch(format!("backward from non-scalar {:?}", self.value(loss).dims())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).dims(), T::ONE));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], i: usize, g: Tensor<T>) {
        if !self.nodes[i].needs_grad {
            return;
        }
        match &mut grads[i] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, kernel, geom } => {
                let (dx, dk) = conv::backward(val(*x).values(), val(*kernel).values(), g.values(), geom, self.needs(*x));
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, Tensor::from_vec(val(*x).dims(), dx).expect("dx shape"));
                }
                self.accumulate(grads, *kernel, Tensor::from_vec(val(*kernel).dims(), dk).expect("dk shape"));
            }
            Op::Bias { x, bias } => {
                let c = val(*bias).len();
                let mut db = vec![T::ZERO; c];
                for chunk in g.values().chunks(c) {
                    for (d, &v) in db.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                self.accumulate(grads, *bias, Tensor::from_vec(&[c], db).expect("db shape"));
                self.accumulate(grads, *x, g.clone());
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = Tensor::zeros(val(*x).dims());
                let d = dx.values_mut();
                for (&a, &v) in argmax.iter().zip(g.values()) {
                    d[a as usize] += v;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Upsample { x } => {
                let (n, h, w, c) = val(*x).nhwc().expect("nhwc");
                let mut dx = Tensor::zeros(val(*x).dims());
                let d = dx.values_mut();
                let gv = g.values();
                for s in 0..n {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            let dst = ((s * h + y / 2) * w + xx / 2) * c;
                            let src = ((s * 2 * h + y) * 2 * w + xx) * c;
                            for ch in 0..c {
                                d[dst + ch] += gv[src + ch];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::BatchNorm { x, scale, shift, mean, inv_std, batch_stats } => {
                let xv = val(*x).values();
                let sc = val(*scale).values();
                let c = sc.len();
                let m = xv.len() / c;
                let mut dscale = vec![T::ZERO; c];
                let mut dshift = vec![T::ZERO; c];
                let mut sum_gx = vec![T::ZERO; c];
                for (xc, gc) in xv.chunks(c).zip(g.values().chunks(c)) {
                    for i in 0..c {
                        let xhat = (xc[i] - mean[i]) * inv_std[i];
                        dscale[i] += gc[i] * xhat;
                        dshift[i] += gc[i];
                        sum_gx[i] += gc[i] * sc[i] * xhat;
                    }
                }
                if self.needs(*x) {
                    let mut dx = Tensor::zeros(val(*x).dims());
                    let inv_m = T::ONE / T::from_f64(m as f64);
                    for ((dc, xc), gc) in dx.values_mut().chunks_mut(c).zip(xv.chunks(c)).zip(g.values().chunks(c)) {
                        for i in 0..c {
                            let gh = gc[i] * sc[i];
                            dc[i] = if *batch_stats {
                                let xhat = (xc[i] - mean[i]) * inv_std[i];
                                inv_std[i] * (gh - dshift[i] * sc[i] * inv_m - xhat * sum_gx[i] * inv_m)
                            } else {
                                gh * inv_std[i]
                            };
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *scale, Tensor::from_vec(&[c], dscale).expect("dscale"));
                self.accumulate(grads, *shift, Tensor::from_vec(&[c], dshift).expect("dshift"));
            }
            Op::Relu { x } => {
                let mut dx = g.clone();
                for (d, &y) in dx.values_mut().iter_mut().zip(node.value.values()) {
                    if y <= T::ZERO {
                        *d = T::ZERO;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let mut dx = g.clone();
                for (d, &y) in dx.values_mut().iter_mut().zip(node.value.values()) {
                    *d *= y * (T::ONE - y);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat { a, b } => {
                let (ad, bd) = (val(*a).dims(), val(*b).dims());
                let (ca, cb) = (ad[ad.len() - 1], bd[bd.len() - 1]);
                let mut da = Vec::with_capacity(val(*a).len());
                let mut db = Vec::with_capacity(val(*b).len());
                for chunk in g.values().chunks(ca + cb) {
                    da.extend_from_slice(&chunk[..ca]);
                    db.extend_from_slice(&chunk[ca..]);
                }
                self.accumulate(grads, *a, Tensor::from_vec(ad, da).expect("da"));
                self.accumulate(grads, *b, Tensor::from_vec(bd, db).expect("db"));
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Bce { pred, target } => {
                let lo = T::from_f64(BCE_CLAMP);
                let hi = T::ONE - lo;
                let scale = g.values()[0] / T::from_f64(target.len() as f64);
                let mut dp = Tensor::zeros(val(*pred).dims());
                for ((d, &p), &t) in dp.values_mut().iter_mut().zip(val(*pred).values()).zip(target.values()) {
                    if p >= lo && p <= hi {
                        *d = -scale * (t / p - (T::ONE - t) / (T::ONE - p));
                    }
                }
                self.accumulate(grads, *pred, dp);
            }
            Op::SoftDice { pred, target } => {
                let (i, p, t) = dice_sums(val(*pred).values(), target.values());
                let s = T::from_f64(DICE_SMOOTH);
                let two = T::from_f64(2.0);
                let den = p + t + s;
                let num = two * i + s;
                let up = g.values()[0];
                let dp = Tensor::from_vec(
                    val(*pred).dims(),
                    target.values().iter().map(|&tk| -up * (two * tk * den - num) / (den * den)).collect(),
                )
                .expect("dice grad");
                self.accumulate(grads, *pred, dp);
            }
            Op::WeightedSum { terms } => {
                let up = g.values()[0];
                for &(v, w) in terms {
                    self.accumulate(grads, v, Tensor::scalar(up * w));
                }
            }
        }
    }
}

fn dice_sums<T: Real>(pred: &[T], target: &[T]) -> (T, T, T) {
    let mut i = T::ZERO;
    let mut p = T::ZERO;
    let mut t = T::ZERO;
    for (&a, &b) in pred.iter().zip(target) {
        i += a * b;
        p += a;
        t += b;
    }
    (i, p, t)
}
