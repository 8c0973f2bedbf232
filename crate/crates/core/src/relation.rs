//! Cross-regional AU dependency modeling: activation-gated adjacency, a
//! single-head graph attention layer, and temporal aggregation of the node
//! features.
//!
//! Neighbor reductions run in a canonical order (score, then feature bytes)
//! rather than index order, so relabeling the nodes and permuting the
//! adjacency consistently reproduces the same floating-point results bit for
//! bit.

use crate::region::AuAssignment;
use crate::rng::Rng;
use crate::tensor::{Graph, NodeId, ParamStore, TensorError};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelationError {
    #[error("node {0} has an empty neighborhood")]
    EmptyNeighborhood(usize),
    #[error("temporal kernel must be odd and the sequence non-empty (kernel {kernel}, frames {frames})")]
    BadWindow { kernel: usize, frames: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Connect each AU to every AU of a *different* region whose predicted
/// activation marginal reaches `threshold`, plus a self-edge. Neighbor lists
/// are ascending.
pub fn build_adjacency(
    marginals: &[f64],
    assignment: &AuAssignment,
    threshold: f64,
) -> Vec<Vec<usize>> {
    let n = assignment.num_aus();
    let mut adj = Vec::with_capacity(n);
    for a in 0..n {
        let mut neigh = vec![a];
        for m in 0..n {
            if m != a
                && assignment.region_of(m) != assignment.region_of(a)
                && marginals[m] >= threshold
            {
                neigh.push(m);
            }
        }
        neigh.sort_unstable();
        adj.push(neigh);
    }
    adj
}

/// Shared transform W [b,b] and attention vector r [2b].
pub fn init_gat(store: &mut ParamStore, prefix: &str, latent_dim: usize, rng: &mut Rng) {
    store.insert_uniform(&format!("{prefix}.w"), vec![latent_dim, latent_dim], latent_dim, rng);
    store.insert_uniform(&format!("{prefix}.r"), vec![2 * latent_dim], 2 * latent_dim, rng);
}

/// Output of one attention layer.
#[derive(Debug)]
pub struct GatOutput {
    /// Updated node features (post-ELU), one node id per AU.
    pub updated: Vec<NodeId>,
    /// Attention weights per node as (neighbor, weight), in the canonical
    /// reduction order.
    pub attention: Vec<Vec<(usize, f64)>>,
}

/// One graph-attention layer:
/// e_{n,m} = LeakyReLU(r · [W v_n ‖ W v_m]), α = softmax over the
/// neighborhood, v̂_n = ELU(Σ α_{n,m} W v_m).
pub fn gat_layer(
    g: &mut Graph,
    node_feats: &[NodeId],
    adjacency: &[Vec<usize>],
    w: NodeId,
    r: NodeId,
    leaky_slope: f64,
) -> Result<GatOutput, RelationError> {
    let b = g.value(node_feats[0]).shape()[0];
    let r1 = g.slice(r, 0, 0, b)?;
    let r2 = g.slice(r, 0, b, 2 * b)?;

    let wv: Vec<NodeId> = node_feats
        .iter()
        .map(|&v| g.matmul(w, v))
        .collect::<Result<_, _>>()?;
    // Split the pair score: e_{n,m} = LeakyReLU(r1·Wv_n + r2·Wv_m).
    let self_score: Vec<NodeId> = wv
        .iter()
        .map(|&x| {
            let p = g.mul(r1, x)?;
            g.sum_all(p)
        })
        .collect::<Result<_, TensorError>>()?;
    let neigh_score: Vec<NodeId> = wv
        .iter()
        .map(|&x| {
            let p = g.mul(r2, x)?;
            g.sum_all(p)
        })
        .collect::<Result<_, TensorError>>()?;

    let mut updated = Vec::with_capacity(node_feats.len());
    let mut attention = Vec::with_capacity(node_feats.len());
    for (n, neigh) in adjacency.iter().enumerate() {
        if neigh.is_empty() {
            return Err(RelationError::EmptyNeighborhood(n));
        }
        let mut scored: Vec<(usize, NodeId)> = Vec::with_capacity(neigh.len());
        for &m in neigh {
            let s = g.add(self_score[n], neigh_score[m])?;
            let e = g.leaky_relu(s, leaky_slope)?;
            scored.push((m, e));
        }
        // Canonical reduction order: by score value, ties by the transformed
        // feature bytes. Invariant under node relabeling.
        scored.sort_by(|&(ma, ea), &(mb, eb)| {
            let va = g.value(ea).item();
            let vb = g.value(eb).item();
            va.total_cmp(&vb).then_with(|| {
                let fa = g.value(wv[ma]).data();
                let fb = g.value(wv[mb]).data();
                fa.iter()
                    .map(|x| x.to_bits())
                    .cmp(fb.iter().map(|x| x.to_bits()))
            })
        });
        let cols: Vec<NodeId> = scored
            .iter()
            .map(|&(_, e)| g.reshape(e, vec![1]))
            .collect::<Result<_, _>>()?;
        let stacked = g.concat0(&cols)?;
        let alpha = g.softmax(stacked, 0)?;
        let alpha_vals = g.value(alpha).data().to_vec();
        let mut agg: Option<NodeId> = None;
        for (i, &(m, _)) in scored.iter().enumerate() {
            let coef = g.slice(alpha, 0, i, i + 1)?;
            let term = g.scale_by(wv[m], coef)?;
            agg = Some(match agg {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
        let summed = agg.expect("non-empty neighborhood");
        updated.push(g.elu(summed)?);
        attention.push(
            scored
                .iter()
                .enumerate()
                .map(|(i, &(m, _))| (m, alpha_vals[i]))
                .collect(),
        );
    }
    Ok(GatOutput { updated, attention })
}

/// Depthwise temporal convolution shared across AUs: weight [b,k], bias [b].
pub fn init_tcn(store: &mut ParamStore, prefix: &str, latent_dim: usize, kernel: usize, rng: &mut Rng) {
    store.insert_uniform(&format!("{prefix}.w"), vec![latent_dim, kernel], kernel, rng);
    store.insert_zeros(&format!("{prefix}.b"), vec![latent_dim]);
}

/// Aggregate per-frame node features over time with a per-channel 1-D
/// convolution (odd kernel, edge frames duplicated). Input and output are
/// indexed [frame][au].
pub fn temporal_aggregate(
    g: &mut Graph,
    frames: &[Vec<NodeId>],
    tcn_w: NodeId,
    tcn_b: NodeId,
) -> Result<Vec<Vec<NodeId>>, RelationError> {
    let t = frames.len();
    let kernel = g.value(tcn_w).shape()[1];
    if t == 0 || kernel % 2 == 0 || kernel == 0 || kernel > 2 * t - 1 {
        return Err(RelationError::BadWindow { kernel, frames: t });
    }
    let n_aus = frames[0].len();
    let b = g.value(frames[0][0]).shape()[0];
    let pad = (kernel - 1) / 2;
    let mut out: Vec<Vec<NodeId>> = vec![Vec::with_capacity(n_aus); t];
    for au in 0..n_aus {
        let rows: Vec<NodeId> = frames
            .iter()
            .map(|f| g.reshape(f[au], vec![1, b]))
            .collect::<Result<_, _>>()?;
        let seq = g.concat0(&rows)?;
        let padded = g.replicate_pad_1d(seq, pad)?;
        let conv = g.conv1d_depthwise(padded, tcn_w)?;
        let conv = g.add_row(conv, tcn_b)?;
        for (ti, slot) in out.iter_mut().enumerate() {
            let row = g.slice(conv, 0, ti, ti + 1)?;
            slot.push(g.reshape(row, vec![b])?);
        }
    }
    Ok(out)
}
