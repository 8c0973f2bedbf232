//! Probabilistic per-AU embedding: Gaussian posterior heads, reparameterized
//! sampling, the closed-form KL regularizer, and the auxiliary classifier.
//!
//! One head serves one AU. The trunk consumes the AU feature concatenated
//! with that AU's region-combination conditioning vector, then two parallel
//! branches emit the mean and the log-variance (σ = exp(lv/2) keeps the
//! scale positive).

use crate::rng::Rng;
use crate::tensor::{Graph, NodeId, ParamStore, Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CvaeError {
    #[error("class label {label} out of range (C = {classes})")]
    LabelRange { label: usize, classes: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Diagonal Gaussian posterior over one AU's latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Node ids of one embedding head registered on a graph.
#[derive(Debug, Clone)]
pub struct HeadNodes {
    pub trunk_w: NodeId,
    pub trunk_b: NodeId,
    pub mu_w: NodeId,
    pub mu_b: NodeId,
    pub lv_w: NodeId,
    pub lv_b: NodeId,
    pub cls_w: NodeId,
}

/// Parameter names for one embedding head under `prefix`.
pub fn head_param_names(prefix: &str) -> [String; 7] {
    [
        format!("{prefix}.trunk.w"),
        format!("{prefix}.trunk.b"),
        format!("{prefix}.mu.w"),
        format!("{prefix}.mu.b"),
        format!("{prefix}.lv.w"),
        format!("{prefix}.lv.b"),
        format!("{prefix}.cls.w"),
    ]
}

/// Insert one head's parameters: trunk (latent × (feature+cond)), mu/lv
/// branches (latent × latent), classifier (classes × latent).
///
/// `logvar_bias` sets the initial posterior spread (σ = exp(bias/2));
/// starting below zero keeps early latent samples close to the mean while
/// the KL term pulls the spread back up where the data allows.
pub fn init_head(
    store: &mut ParamStore,
    prefix: &str,
    feature_dim: usize,
    cond_dim: usize,
    latent_dim: usize,
    classes: usize,
    logvar_bias: f64,
    rng: &mut Rng,
) {
    let input = feature_dim + cond_dim;
    store.insert_uniform(&format!("{prefix}.trunk.w"), vec![latent_dim, input], input, rng);
    store.insert_zeros(&format!("{prefix}.trunk.b"), vec![latent_dim]);
    store.insert_uniform(&format!("{prefix}.mu.w"), vec![latent_dim, latent_dim], latent_dim, rng);
    store.insert_zeros(&format!("{prefix}.mu.b"), vec![latent_dim]);
    store.insert_uniform(&format!("{prefix}.lv.w"), vec![latent_dim, latent_dim], latent_dim, rng);
    store.insert_filled(&format!("{prefix}.lv.b"), vec![latent_dim], logvar_bias);
    store.insert_uniform(&format!("{prefix}.cls.w"), vec![classes, latent_dim], latent_dim, rng);
}

/// Build the encoder: x ‖ cond -> trunk -> LeakyReLU -> (mu, log-variance).
pub fn encode_nodes(
    g: &mut Graph,
    head: &HeadNodes,
    x: NodeId,
    cond: Option<NodeId>,
    leaky_slope: f64,
) -> Result<(NodeId, NodeId), CvaeError> {
    let input = match cond {
        Some(c) => g.concat0(&[x, c])?,
        None => x,
    };
    let t = g.matmul(head.trunk_w, input)?;
    let t = g.add(t, head.trunk_b)?;
    let h = g.leaky_relu(t, leaky_slope)?;
    let mu = g.matmul(head.mu_w, h)?;
    let mu = g.add(mu, head.mu_b)?;
    let lv = g.matmul(head.lv_w, h)?;
    let lv = g.add(lv, head.lv_b)?;
    Ok((mu, lv))
}

/// σ = exp(lv / 2).
pub fn sigma_node(g: &mut Graph, lv: NodeId) -> Result<NodeId, TensorError> {
    let half = g.mul_scalar(lv, 0.5)?;
    g.exp(half)
}

/// z = μ + σ ⊙ ε with ε fixed at build time; gradients flow to μ and σ.
pub fn reparameterize_node(
    g: &mut Graph,
    mu: NodeId,
    sigma: NodeId,
    eps: &Tensor,
) -> Result<NodeId, TensorError> {
    let e = g.input(eps.clone());
    let scaled = g.mul(sigma, e)?;
    g.add(mu, scaled)
}

/// Value-level reparameterization z = μ + σ ⊙ ε.
pub fn reparameterize(post: &GaussianPosterior, eps: &[f64]) -> Vec<f64> {
    post.mu
        .iter()
        .zip(&post.sigma)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect()
}

/// KL(N(μ, σ²) ‖ N(0, I)) as a graph node:
/// 0.5 Σ (μ² + exp(lv) − lv − 1).
pub fn kl_node(g: &mut Graph, mu: NodeId, lv: NodeId) -> Result<NodeId, TensorError> {
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(lv)?;
    let s = g.add(mu2, var)?;
    let s = g.sub(s, lv)?;
    let s = g.add_scalar(s, -1.0)?;
    let total = g.sum_all(s)?;
    g.mul_scalar(total, 0.5)
}

/// Closed-form KL(N(μ, σ²) ‖ N(0, I)) = 0.5 Σ (μ² + σ² − ln σ² − 1).
pub fn kl_to_standard_normal(post: &GaussianPosterior) -> f64 {
    post.mu
        .iter()
        .zip(&post.sigma)
        .map(|(m, s)| {
            let var = s * s;
            0.5 * (m * m + var - var.ln() - 1.0)
        })
        .sum()
}

/// Mean softmax cross-entropy of a latent batch against integer labels.
///
/// `z_rows` is one node per example (latent vectors); the classifier weight
/// node has shape [C, latent].
pub fn cls_loss_node(
    g: &mut Graph,
    cls_w: NodeId,
    z_rows: &[NodeId],
    labels: &[usize],
) -> Result<NodeId, CvaeError> {
    let classes = g.value(cls_w).shape()[0];
    for &l in labels {
        if l >= classes {
            return Err(CvaeError::LabelRange { label: l, classes });
        }
    }
    let mut terms = Vec::with_capacity(z_rows.len());
    for (&z, &y) in z_rows.iter().zip(labels) {
        let logits = g.matmul(cls_w, z)?;
        let lsm = g.log_softmax(logits, 0)?;
        let picked = g.slice(lsm, 0, y, y + 1)?;
        terms.push(picked);
    }
    let stacked = g.concat0(&terms)?;
    let mean = g.mean_all(stacked)?;
    Ok(g.mul_scalar(mean, -1.0)?)
}

/// Embedding-stage objective: classification + λ1 · KL.
pub fn cvafe_loss(cls: f64, kl: f64, lambda1: f64) -> f64 {
    cls + lambda1 * kl
}

/// Value-level encoder: runs [`encode_nodes`] on a scratch graph with
/// parameters taken from the store by `prefix`.
pub fn encode_values(
    store: &ParamStore,
    prefix: &str,
    x: &Tensor,
    cond: Option<&Tensor>,
    leaky_slope: f64,
) -> Result<GaussianPosterior, CvaeError> {
    let mut g = Graph::new();
    let names = head_param_names(prefix);
    let fetch = |n: &String| {
        store
            .get(n)
            .unwrap_or_else(|| panic!("missing parameter {n}"))
            .clone()
    };
    let x_id = g.input(x.clone());
    let cond_id = cond.map(|c| g.input(c.clone()));
    let head = HeadNodes {
        trunk_w: g.input(fetch(&names[0])),
        trunk_b: g.input(fetch(&names[1])),
        mu_w: g.input(fetch(&names[2])),
        mu_b: g.input(fetch(&names[3])),
        lv_w: g.input(fetch(&names[4])),
        lv_b: g.input(fetch(&names[5])),
        cls_w: g.input(fetch(&names[6])),
    };
    let (mu, lv) = encode_nodes(&mut g, &head, x_id, cond_id, leaky_slope)?;
    let sigma = sigma_node(&mut g, lv)?;
    Ok(GaussianPosterior {
        mu: g.value(mu).data().to_vec(),
        sigma: g.value(sigma).data().to_vec(),
    })
}
