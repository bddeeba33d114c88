//! Network descriptions for U-Net, MultiResUNet and their deeply supervised
//! variants.
//!
//! A [`Graph`] is a topologically ordered list of [`Layer`]s over a named
//! parameter inventory. Running it records the layers on an
//! [`nn::Tape`](crate::nn::Tape), which provides the backward pass.

mod graph;
mod multires;
pub mod train;
mod unet;

pub use graph::{Architecture, Graph, GraphBuilder, GraphConfig, Head, Layer, Mode, NodeId, ParamId, Parameter};
pub use multires::{build_multires_unet, multires_block, multires_filters, res_path, DEFAULT_ALPHA};
pub use unet::build_unet;

use crate::error::{Error, Result};
use crate::nn::{DeepSupervisionSpec, Real};

/// Adds a 1×1 convolution + sigmoid head to the bottleneck and to every
/// decoder stage below the final one. Heads end up ordered final → deepest.
pub fn attach_deep_supervision<T: Real>(mut graph: Graph<T>, spec: DeepSupervisionSpec) -> Result<Graph<T>> {
    if graph.supervision().is_some() {
        return Err(Error::AlreadySupervised);
    }
    let stages = graph.stages().to_vec();
    let mut b = GraphBuilder::resume(graph, 0x005e_edd5);
    let mut heads = alloc::vec![b.graph_heads()[0]];
    for (level, &node) in stages.iter().enumerate().skip(1) {
        let name = alloc::format!("ds{level}.head");
        let logits = b.conv(node, 1, 1, &name, true)?;
        let out = b.sigmoid(logits);
        heads.push(Head { node: out, size: b.size(out) });
    }
    graph = b.into_graph(heads);
    graph.set_supervision(spec);
    Ok(graph)
}

/// Builds the network selected by `config.architecture`.
pub fn build_graph<T: Real>(config: GraphConfig) -> Result<Graph<T>> {
    match config.architecture {
        Architecture::UNet => build_unet(config),
        Architecture::MultiResUNet { .. } => build_multires_unet(config),
    }
}
