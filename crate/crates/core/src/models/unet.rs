use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{check_config, Architecture, Graph, GraphBuilder, GraphConfig, NodeId};
use crate::error::{Error, Result};
use crate::nn::Real;

pub(crate) const LEVELS: usize = 5;

/// Five-level U-Net: two 3×3 conv+BN+ReLU per level, filters
/// `base · 2^level`, nearest upsampling followed by a 3×3 conv in the decoder.
pub fn build_unet<T: Real>(config: GraphConfig) -> Result<Graph<T>> {
    check_config(&config)?;
    if config.architecture != Architecture::UNet {
        return Err(Error::InvalidConfig(format!("build_unet called with {}", config.architecture.name())));
    }
    let mut b = GraphBuilder::<T>::new(config);
    let filters = |l: usize| config.base_filters << l;
    let double = |b: &mut GraphBuilder<T>, x: NodeId, f: usize, name: &str| -> Result<NodeId> {
        let y = b.conv_bn_relu(x, f, 3, &format!("{name}.conv1"))?;
        b.conv_bn_relu(y, f, 3, &format!("{name}.conv2"))
    };

    let mut skips: Vec<NodeId> = Vec::with_capacity(LEVELS - 1);
    let mut x = GraphBuilder::<T>::INPUT;
    for l in 0..LEVELS - 1 {
        let e = double(&mut b, x, filters(l), &format!("enc{l}"))?;
        skips.push(e);
        x = b.maxpool(e)?;
    }
    let bottleneck = double(&mut b, x, filters(LEVELS - 1), "bottleneck")?;

    let mut stages = vec![bottleneck];
    x = bottleneck;
    for l in (0..LEVELS - 1).rev() {
        let up = b.upsample(x);
        let up = b.conv_bn_relu(up, filters(l), 3, &format!("dec{l}.up"))?;
        let cat = b.concat(skips[l], up)?;
        x = double(&mut b, cat, filters(l), &format!("dec{l}"))?;
        stages.push(x);
    }
    stages.reverse();
    let logits = b.conv(x, 1, 1, "head", true)?;
    let out = b.sigmoid(logits);
    b.set_stages(stages);
    Ok(b.finish(out))
}
