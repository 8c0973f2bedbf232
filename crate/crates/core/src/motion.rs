//! Toy-scale spatio-temporal frontend: multi-scale temporal differencing,
//! learned scale alignment, adaptive per-pixel scale fusion, and the
//! dual-directional global attention, fused into the per-frame feature map.

use crate::rng::Rng;
use crate::tensor::{Graph, NodeId, ParamStore, TensorError};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MotionError {
    #[error("scale {h}x{w} does not divide into target {target} (factor must be integral)")]
    NonDivisible { h: usize, w: usize, target: usize },
    #[error("window must be odd and fit the sequence (window {window}, frames {frames})")]
    BadWindow { window: usize, frames: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// d = x_t − x_{t−1}, elementwise.
pub fn temporal_difference(g: &mut Graph, x_t: NodeId, x_prev: NodeId) -> Result<NodeId, MotionError> {
    Ok(g.sub(x_t, x_prev)?)
}

/// Alignment conv parameters for one scale: kernel = stride = factor.
pub fn init_scale_align(
    store: &mut ParamStore,
    prefix: &str,
    channels: usize,
    factor: usize,
    rng: &mut Rng,
) {
    let fan_in = channels * factor * factor;
    store.insert_uniform(
        &format!("{prefix}.w"),
        vec![channels, channels, factor, factor],
        fan_in,
        rng,
    );
    store.insert_zeros(&format!("{prefix}.b"), vec![channels]);
}

/// Map a scale-l map to the target resolution with a learned conv whose
/// kernel and stride equal the resolution ratio.
pub fn scale_align(
    g: &mut Graph,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    target: usize,
) -> Result<NodeId, MotionError> {
    let shape = g.value(x).shape().to_vec();
    let (h, wd) = (shape[1], shape[2]);
    if h % target != 0 || wd % target != 0 || h / target != wd / target || h < target {
        return Err(MotionError::NonDivisible { h, w: wd, target });
    }
    let factor = h / target;
    let kshape = g.value(w).shape();
    if kshape[2] != factor || kshape[3] != factor {
        return Err(MotionError::NonDivisible { h, w: wd, target });
    }
    let c = g.conv2d(x, w, factor, 0)?;
    Ok(g.add_chan(c, b)?)
}

/// Mean of `seq` over an odd window centered at `t`, duplicating edge frames.
pub fn temporal_window_aggregate(
    g: &mut Graph,
    seq: &[NodeId],
    t: usize,
    window: usize,
) -> Result<NodeId, MotionError> {
    let frames = seq.len();
    if window % 2 == 0 || window == 0 || frames == 0 || window > 2 * frames - 1 {
        return Err(MotionError::BadWindow { window, frames });
    }
    let half = (window as isize - 1) / 2;
    let mut acc: Option<NodeId> = None;
    for off in -half..=half {
        let idx = (t as isize + off).clamp(0, frames as isize - 1) as usize;
        acc = Some(match acc {
            Some(a) => g.add(a, seq[idx])?,
            None => seq[idx],
        });
    }
    let summed = acc.expect("window is non-empty");
    Ok(g.mul_scalar(summed, 1.0 / window as f64)?)
}

/// Fusion parameters: 1x1 conv from the concatenated scales to one weight
/// map per scale.
pub fn init_fusion(
    store: &mut ParamStore,
    prefix: &str,
    channels: usize,
    num_scales: usize,
    rng: &mut Rng,
) {
    let fan_in = channels * num_scales;
    store.insert_uniform(
        &format!("{prefix}.w"),
        vec![num_scales, channels * num_scales, 1, 1],
        fan_in,
        rng,
    );
    store.insert_zeros(&format!("{prefix}.b"), vec![num_scales]);
}

/// Adaptive fusion: concat(aligned) -> 1x1 conv -> per-pixel softmax over
/// scales -> Σ_l w_l ⊗ d̄_l.
pub fn adaptive_scale_fusion(
    g: &mut Graph,
    aligned: &[NodeId],
    w: NodeId,
    b: NodeId,
) -> Result<NodeId, MotionError> {
    let cat = g.concat0(aligned)?;
    let logits = g.conv2d(cat, w, 1, 0)?;
    let logits = g.add_chan(logits, b)?;
    let weights = g.softmax(logits, 0)?; // [L,H,W], softmax over scales
    let mut acc: Option<NodeId> = None;
    for (l, &map) in aligned.iter().enumerate() {
        let wl = g.slice(weights, 0, l, l + 1)?;
        let shape = g.value(wl).shape().to_vec();
        let wl = g.reshape(wl, vec![shape[1], shape[2]])?;
        let term = g.mul_spatial(map, wl)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("at least one scale"))
}

/// Node ids for the dual-directional attention parameters.
#[derive(Debug, Clone, Copy)]
pub struct GdaNodes {
    pub h_w: NodeId,
    pub h_b: NodeId,
    pub v_w: NodeId,
    pub v_b: NodeId,
    pub p_w: NodeId,
    pub p_b: NodeId,
}

/// Horizontal/vertical depthwise kernels (1xk and kx1) plus the pointwise
/// projection producing one logit map per direction.
pub fn init_gda(store: &mut ParamStore, prefix: &str, channels: usize, k: usize, rng: &mut Rng) {
    store.insert_uniform(&format!("{prefix}.h.w"), vec![channels, 1, k], k, rng);
    store.insert_zeros(&format!("{prefix}.h.b"), vec![channels]);
    store.insert_uniform(&format!("{prefix}.v.w"), vec![channels, k, 1], k, rng);
    store.insert_zeros(&format!("{prefix}.v.b"), vec![channels]);
    store.insert_uniform(
        &format!("{prefix}.p.w"),
        vec![2 * channels, 2 * channels, 1, 1],
        2 * channels,
        rng,
    );
    store.insert_zeros(&format!("{prefix}.p.b"), vec![2 * channels]);
}

/// F' = F ⊗ σ(A): directional depthwise context, pointwise projection into
/// per-direction logits, summed and squashed.
pub fn gda_attention(g: &mut Graph, f: NodeId, p: &GdaNodes) -> Result<NodeId, MotionError> {
    let channels = g.value(f).shape()[0];
    let kh = g.value(p.h_w).shape()[2];
    let kv = g.value(p.v_w).shape()[1];
    let dir_h = g.depthwise_conv2d(f, p.h_w, 0, (kh - 1) / 2)?;
    let dir_h = g.add_chan(dir_h, p.h_b)?;
    let dir_v = g.depthwise_conv2d(f, p.v_w, (kv - 1) / 2, 0)?;
    let dir_v = g.add_chan(dir_v, p.v_b)?;
    let cat = g.concat0(&[dir_h, dir_v])?;
    let proj = g.conv2d(cat, p.p_w, 1, 0)?;
    let proj = g.add_chan(proj, p.p_b)?;
    let logit_h = g.slice(proj, 0, 0, channels)?;
    let logit_v = g.slice(proj, 0, channels, 2 * channels)?;
    let logits = g.add(logit_h, logit_v)?;
    let att = g.sigmoid(logits)?;
    Ok(g.mul(f, att)?)
}

/// F_t = x_motion + F'.
pub fn fuse(g: &mut Graph, motion: NodeId, f_prime: NodeId) -> Result<NodeId, MotionError> {
    Ok(g.add(motion, f_prime)?)
}
