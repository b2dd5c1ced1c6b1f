//! Decoder: regress max-pooled text features from latent codes under a unit-variance
//! Gaussian likelihood.

use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::model::ModelNodes;

/// Per-row maximum over real-token columns of `x` (`[d_w, L]`), as a constant `[d_w, 1]`.
pub fn target_feature(g: &mut Graph, x: NodeId, mask: &[bool]) -> Result<NodeId> {
    let pooled = g.max_pool(x, 1, Some(mask.to_vec()))?;
    g.detach(pooled)
}

/// `x̂ = W₂ tanh(W₁ z + b₁) + b₂`.
pub fn reconstruct(g: &mut Graph, nodes: &ModelNodes, z: NodeId) -> Result<NodeId> {
    let h = g.matmul(nodes.dec_w1, z)?;
    let h = g.add(h, nodes.dec_b1)?;
    let h = g.tanh(h)?;
    let out = g.matmul(nodes.dec_w2, h)?;
    g.add(out, nodes.dec_b2)
}

/// `−(‖x̊ᵢ − x̂ᵢ‖² + ‖x̊ⱼ − x̂ⱼ‖²)`.
pub fn recon_loglik(
    g: &mut Graph,
    nodes: &ModelNodes,
    target_i: NodeId,
    target_j: NodeId,
    z_i: NodeId,
    z_j: NodeId,
) -> Result<NodeId> {
    let xi = reconstruct(g, nodes, z_i)?;
    let xj = reconstruct(g, nodes, z_j)?;
    squared_error_loglik(g, target_i, target_j, xi, xj)
}

pub(crate) fn squared_error_loglik(
    g: &mut Graph,
    target_i: NodeId,
    target_j: NodeId,
    xhat_i: NodeId,
    xhat_j: NodeId,
) -> Result<NodeId> {
    let ri = g.sub(target_i, xhat_i)?;
    let rj = g.sub(target_j, xhat_j)?;
    let si = g.square(ri)?;
    let sj = g.square(rj)?;
    let si = g.sum(si)?;
    let sj = g.sum(sj)?;
    let total = g.add(si, sj)?;
    g.neg(total)
}
