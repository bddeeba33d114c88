use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{check_config, Architecture, Graph, GraphBuilder, GraphConfig, NodeId};
use super::unet::LEVELS;
use crate::error::{Error, Result};
use crate::nn::Real;

pub const DEFAULT_ALPHA: f64 = 1.67;

/// Filter counts of the three chained 3×3 stages for `W = alpha · U`.
pub fn multires_filters(u: usize, alpha: f64) -> Result<[usize; 3]> {
    let w = alpha * u as f64;
    if !(alpha > 0.0 && w >= 6.0) {
        return Err(Error::InvalidConfig(format!("multires width alpha·U = {w} must be at least 6")));
    }
    Ok([(w / 6.0) as usize, (w / 3.0) as usize, (w / 2.0) as usize])
}

/// Three chained 3×3 conv+BN+ReLU stages, concatenated, plus a 1×1
/// projection of the input, followed by batch norm.
pub fn multires_block<T: Real>(
    b: &mut GraphBuilder<T>,
    input: NodeId,
    u: usize,
    alpha: f64,
    name: &str,
) -> Result<NodeId> {
    let [f1, f2, f3] = multires_filters(u, alpha)?;
    let s1 = b.conv_bn_relu(input, f1, 3, &format!("{name}.conv3x3_1"))?;
    let s2 = b.conv_bn_relu(s1, f2, 3, &format!("{name}.conv3x3_2"))?;
    let s3 = b.conv_bn_relu(s2, f3, 3, &format!("{name}.conv3x3_3"))?;
    let cat = b.concat(s1, s2)?;
    let cat = b.concat(cat, s3)?;
    let shortcut = b.conv(input, f1 + f2 + f3, 1, &format!("{name}.shortcut"), false)?;
    let sum = b.add(cat, shortcut)?;
    b.batchnorm(sum, &format!("{name}.bn"))
}

/// `length` residual units of `relu(conv3x3(x) + conv1x1(x))`, channel count
/// preserved.
pub fn res_path<T: Real>(b: &mut GraphBuilder<T>, input: NodeId, length: usize, name: &str) -> Result<NodeId> {
    if !(1..=4).contains(&length) {
        return Err(Error::InvalidConfig(format!("res path length {length} outside 1..=4")));
    }
    let c = b.channels(input);
    let mut x = input;
    for i in 0..length {
        let main = b.conv(x, c, 3, &format!("{name}.unit{i}.conv3x3"), false)?;
        let short = b.conv(x, c, 1, &format!("{name}.unit{i}.conv1x1"), false)?;
        let sum = b.add(main, short)?;
        x = b.relu(sum);
    }
    Ok(x)
}

/// MultiResUNet over the same five-level topology as [`build_unet`](super::build_unet).
pub fn build_multires_unet<T: Real>(config: GraphConfig) -> Result<Graph<T>> {
    check_config(&config)?;
    let alpha = match config.architecture {
        Architecture::MultiResUNet { alpha } => alpha,
        other => return Err(Error::InvalidConfig(format!("build_multires_unet called with {}", other.name()))),
    };
    let mut b = GraphBuilder::<T>::new(config);
    let width = |l: usize| config.base_filters << l;

    let mut skips: Vec<NodeId> = Vec::with_capacity(LEVELS - 1);
    let mut x = GraphBuilder::<T>::INPUT;
    for l in 0..LEVELS - 1 {
        let e = multires_block(&mut b, x, width(l), alpha, &format!("enc{l}"))?;
        skips.push(res_path(&mut b, e, LEVELS - 1 - l, &format!("respath{l}"))?);
        x = b.maxpool(e)?;
    }
    let bottleneck = multires_block(&mut b, x, width(LEVELS - 1), alpha, "bottleneck")?;

    let mut stages = vec![bottleneck];
    x = bottleneck;
    for l in (0..LEVELS - 1).rev() {
        let up = b.upsample(x);
        let up = b.conv_bn_relu(up, b.channels(skips[l]), 3, &format!("dec{l}.up"))?;
        let cat = b.concat(skips[l], up)?;
        x = multires_block(&mut b, cat, width(l), alpha, &format!("dec{l}"))?;
        stages.push(x);
    }
    stages.reverse();
    let logits = b.conv(x, 1, 1, "head", true)?;
    let out = b.sigmoid(logits);
    b.set_stages(stages);
    Ok(b.finish(out))
}
