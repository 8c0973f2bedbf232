//! The assembled detector: spatio-temporal frontend, per-AU probabilistic
//! embeddings, ACP-gated graph attention, temporal aggregation, and
//! Beta-evidence heads.

use super::{HarnessError, SequenceData};
use crate::cvae::{self, HeadNodes};
use crate::loss::LossConfig;
use crate::motion::{self, GdaNodes};
use crate::region::{self, AuAssignment, Region, REGIONS};
use crate::relation;
use crate::rng::Rng;
use crate::tensor::{Graph, NodeId, ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    /// Probabilistic embedding: sampled latents during training, KL
    /// regularizer in the embedding stage.
    Cvae,
    /// σ-suppressed ablation: the latent is always the posterior mean.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_aus: usize,
    pub au_regions: Vec<Region>,
    pub channels: usize,
    pub latent_dim: usize,
    pub scales: Vec<usize>,
    pub temporal_window: usize,
    pub tcn_kernel: usize,
    pub gda_kernel: usize,
    pub acp_threshold: f64,
    pub leaky_slope: f64,
    pub embedding: EmbeddingMode,
    pub evidence_bias_init: f64,
    pub logvar_bias_init: f64,
}

impl ModelConfig {
    pub fn defaults(num_aus: usize, au_regions: Vec<Region>) -> Self {
        ModelConfig {
            num_aus,
            au_regions,
            channels: 8,
            latent_dim: 64,
            scales: vec![28, 14, 7],
            temporal_window: 3,
            tcn_kernel: 3,
            gda_kernel: 5,
            acp_threshold: 0.5,
            leaky_slope: 0.2,
            embedding: EmbeddingMode::Cvae,
            evidence_bias_init: -1.5,
            logvar_bias_init: -5.0,
        }
    }

    pub fn assignment(&self) -> AuAssignment {
        AuAssignment::new(self.au_regions.clone())
    }

    pub fn target_scale(&self) -> usize {
        *self.scales.last().expect("at least one scale")
    }
}

/// Which parameters a training stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    /// Evaluation: every parameter is a constant.
    None,
    /// Embedding stage: only the AU extractors and encoder heads train.
    EmbeddingOnly,
    /// Joint stage: everything trains.
    All,
}

/// Where the encoder's conditioning vector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    /// Ground-truth region combination one-hot (embedding stage).
    GroundTruth,
    /// Predicted ACP distribution, detached (joint stage and inference).
    Predicted,
}

pub struct ForwardOptions<'a> {
    pub trainable: Trainable,
    pub conditioning: Conditioning,
    /// Draw latent samples from this stream; `None` uses z = μ.
    pub sample: Option<&'a mut Rng>,
    /// Build the relation module and evidence heads (the embedding stage
    /// skips them).
    pub build_evidence: bool,
}

pub struct FrameForward {
    pub acp_logits: [NodeId; 3],
    pub gt_combos: [usize; 3],
    pub mu: Vec<NodeId>,
    pub lv: Vec<NodeId>,
    pub z: Vec<NodeId>,
    /// α, β vectors over AUs; present when evidence was built.
    pub alpha: Option<NodeId>,
    pub beta: Option<NodeId>,
    /// Frame uncertainty u = 2N / Σ(α+β) from forward values.
    pub uncertainty: f64,
}

pub struct SequenceForward {
    pub param_ids: BTreeMap<String, NodeId>,
    pub frames: Vec<FrameForward>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub loss_cfg: LossConfig,
    pub params: ParamStore,
}

impl Model {
    /// Initialize all parameters from a seed.
    pub fn init(cfg: ModelConfig, loss_cfg: LossConfig, seed: u64) -> Model {
        let mut params = ParamStore::new();
        let assignment = cfg.assignment();
        let target = cfg.target_scale();
        let mut layer = 0u64;
        let mut stream = |tag: u64| {
            layer += 1;
            Rng::derive(seed, &[tag, layer])
        };
        for (l, &h) in cfg.scales.iter().enumerate() {
            let mut rng = stream(1);
            motion::init_scale_align(&mut params, &format!("align.{l}"), cfg.channels, h / target, &mut rng);
        }
        {
            let mut rng = stream(2);
            motion::init_fusion(&mut params, "fusion", cfg.channels, cfg.scales.len(), &mut rng);
        }
        {
            let mut rng = stream(3);
            motion::init_gda(&mut params, "gda", cfg.channels, cfg.gda_kernel, &mut rng);
        }
        for au in 0..cfg.num_aus {
            let mut rng = stream(4);
            region::init_au_extractor(&mut params, &format!("afe.{au}"), cfg.channels, cfg.latent_dim, &mut rng);
            let cond_dim = assignment.combo_classes(cfg.au_regions[au]);
            let mut rng = stream(5);
            cvae::init_head(
                &mut params,
                &format!("enc.{au}"),
                cfg.latent_dim,
                cond_dim,
                cfg.latent_dim,
                2,
                cfg.logvar_bias_init,
                &mut rng,
            );
        }
        for r in REGIONS {
            let mut rng = stream(6);
            region::init_acp_head(
                &mut params,
                &format!("acp.{}", r.name()),
                cfg.channels,
                assignment.combo_classes(r),
                &mut rng,
            );
        }
        {
            let mut rng = stream(7);
            relation::init_gat(&mut params, "gat", cfg.latent_dim, &mut rng);
        }
        {
            let mut rng = stream(8);
            relation::init_tcn(&mut params, "tcn", cfg.latent_dim, cfg.tcn_kernel, &mut rng);
        }
        for au in 0..cfg.num_aus {
            let mut rng = stream(9);
            params.insert_uniform(&format!("ev.{au}.w"), vec![2, cfg.latent_dim], cfg.latent_dim, &mut rng);
            params.insert_filled(&format!("ev.{au}.b"), vec![2], cfg.evidence_bias_init);
        }
        Model { cfg, loss_cfg, params }
    }

    fn is_embedding_param(name: &str) -> bool {
        name.starts_with("afe.") || name.starts_with("enc.")
    }

    /// True when `name` receives gradient under the given stage.
    pub fn trainable_under(name: &str, t: Trainable) -> bool {
        match t {
            Trainable::None => false,
            Trainable::EmbeddingOnly => Self::is_embedding_param(name),
            Trainable::All => true,
        }
    }

    fn register_params(&self, g: &mut Graph, t: Trainable) -> BTreeMap<String, NodeId> {
        let mut ids = BTreeMap::new();
        for (name, tensor) in self.params.iter() {
            let id = if Self::trainable_under(name, t) {
                g.param(name, tensor.clone())
            } else {
                g.input(tensor.clone())
            };
            ids.insert(name.clone(), id);
        }
        ids
    }

    /// Run the full forward pass over one sequence.
    ///
    /// `frames[t]` holds the multi-scale maps of frame t (finest first).
    pub fn forward_sequence(
        &self,
        g: &mut Graph,
        frames: &[Vec<Tensor>],
        seq_data: &SequenceData,
        opts: &mut ForwardOptions,
    ) -> Result<SequenceForward, HarnessError> {
        let cfg = &self.cfg;
        let t_len = frames.len();
        if t_len == 0 {
            return Err(HarnessError::NotEnoughFrames { need: 1, got: 0 });
        }
        let assignment = cfg.assignment();
        let target = cfg.target_scale();
        let ids = self.register_params(g, opts.trainable);
        let p = |name: &str| -> Result<NodeId, HarnessError> {
            ids.get(name)
                .copied()
                .ok_or_else(|| HarnessError::MissingParam(name.to_string()))
        };

        // Frame inputs.
        let mut x: Vec<Vec<NodeId>> = Vec::with_capacity(t_len);
        for fr in frames {
            x.push(fr.iter().map(|m| g.input(m.clone())).collect());
        }

        // Aligned temporal differences per (frame, scale); the first frame's
        // predecessor is itself (edge duplication), so its difference is 0.
        let num_scales = cfg.scales.len();
        let mut aligned_diffs: Vec<Vec<NodeId>> = vec![Vec::with_capacity(t_len); num_scales];
        for l in 0..num_scales {
            let w = p(&format!("align.{l}.w"))?;
            let b = p(&format!("align.{l}.b"))?;
            for t in 0..t_len {
                let prev = if t == 0 { 0 } else { t - 1 };
                let d = motion::temporal_difference(g, x[t][l], x[prev][l])?;
                aligned_diffs[l].push(motion::scale_align(g, d, w, b, target)?);
            }
        }

        let gda = GdaNodes {
            h_w: p("gda.h.w")?,
            h_b: p("gda.h.b")?,
            v_w: p("gda.v.w")?,
            v_b: p("gda.v.b")?,
            p_w: p("gda.p.w")?,
            p_b: p("gda.p.b")?,
        };
        let fusion_w = p("fusion.w")?;
        let fusion_b = p("fusion.b")?;

        let mut frame_outputs: Vec<FrameForward> = Vec::with_capacity(t_len);
        let mut per_frame_nodes: Vec<Vec<NodeId>> = Vec::with_capacity(t_len);

        for t in 0..t_len {
            // Motion pathway.
            let mut dbar = Vec::with_capacity(num_scales);
            for diffs in aligned_diffs.iter() {
                dbar.push(motion::temporal_window_aggregate(g, diffs, t, cfg.temporal_window)?);
            }
            let x_motion = motion::adaptive_scale_fusion(g, &dbar, fusion_w, fusion_b)?;
            // Global pathway on the coarsest (target-resolution) map.
            let f_prime = motion::gda_attention(g, x[t][num_scales - 1], &gda)?;
            let f_t = motion::fuse(g, x_motion, f_prime)?;

            let region_nodes = region::partition_regions(g, f_t)?;

            // ACP per region: logits for the loss, probabilities for
            // conditioning and adjacency.
            let mut acp_logits = [0usize; 3];
            let mut acp_probs: Vec<Vec<f64>> = Vec::with_capacity(3);
            let mut gt_combos = [0usize; 3];
            for r in REGIONS {
                let ri = r.index();
                let w = p(&format!("acp.{}.w", r.name()))?;
                let b = p(&format!("acp.{}.b", r.name()))?;
                let logits = region::acp_logits(g, region_nodes[ri], w, b)?;
                acp_logits[ri] = logits;
                let probs = g.softmax(logits, 0)?;
                acp_probs.push(g.value(probs).data().to_vec());
                let members = assignment.members(r);
                let bits: Vec<u8> = members.iter().map(|&au| seq_data.labels[t][au]).collect();
                gt_combos[ri] = region::combo_index(&bits);
            }

            // Per-AU embedding.
            let mut mu_nodes = Vec::with_capacity(cfg.num_aus);
            let mut lv_nodes = Vec::with_capacity(cfg.num_aus);
            let mut z_nodes = Vec::with_capacity(cfg.num_aus);
            for au in 0..cfg.num_aus {
                let r = cfg.au_regions[au];
                let ri = r.index();
                let afe_w = p(&format!("afe.{au}.w"))?;
                let afe_b = p(&format!("afe.{au}.b"))?;
                let x_au = region::au_feature_extract(g, region_nodes[ri], afe_w, afe_b)?;
                let classes = assignment.combo_classes(r);
                // Conditioning carries the region's *other* AUs: the AU's
                // own bit is masked out so its label never leaks into its
                // own embedding.
                let own_bit = assignment.bit_of(au)?;
                let cond_values = match opts.conditioning {
                    Conditioning::GroundTruth => {
                        let mut onehot = vec![0.0; classes];
                        onehot[region::mask_combo_index(gt_combos[ri], own_bit)] = 1.0;
                        onehot
                    }
                    // Detached: the conditioning context enters as a
                    // constant, so combination supervision alone trains the
                    // ACP head.
                    Conditioning::Predicted => region::mask_combo_probs(&acp_probs[ri], own_bit),
                };
                let cond = g.input(Tensor::vector(cond_values));
                let head = HeadNodes {
                    trunk_w: p(&format!("enc.{au}.trunk.w"))?,
                    trunk_b: p(&format!("enc.{au}.trunk.b"))?,
                    mu_w: p(&format!("enc.{au}.mu.w"))?,
                    mu_b: p(&format!("enc.{au}.mu.b"))?,
                    lv_w: p(&format!("enc.{au}.lv.w"))?,
                    lv_b: p(&format!("enc.{au}.lv.b"))?,
                    cls_w: p(&format!("enc.{au}.cls.w"))?,
                };
                let (mu, lv) = cvae::encode_nodes(g, &head, x_au, Some(cond), cfg.leaky_slope)?;
                let z = match (cfg.embedding, opts.sample.as_deref_mut()) {
                    (EmbeddingMode::Cvae, Some(rng)) => {
                        let eps =
                            Tensor::vector((0..cfg.latent_dim).map(|_| rng.normal()).collect());
                        let sigma = cvae::sigma_node(g, lv)?;
                        cvae::reparameterize_node(g, mu, sigma, &eps)?
                    }
                    _ => mu,
                };
                mu_nodes.push(mu);
                lv_nodes.push(lv);
                z_nodes.push(z);
            }

            if opts.build_evidence {
                // Relation module: adjacency gated by predicted activation
                // marginals, recomputed every frame.
                let mut marginals = vec![0.0; cfg.num_aus];
                for r in REGIONS {
                    let m = region::acp_marginals(&acp_probs[r.index()], assignment.n_sub(r));
                    for (k, &au) in assignment.members(r).iter().enumerate() {
                        marginals[au] = m[k];
                    }
                }
                let adjacency = relation::build_adjacency(&marginals, &assignment, cfg.acp_threshold);
                let gat_w = p("gat.w")?;
                let gat_r = p("gat.r")?;
                let gat =
                    relation::gat_layer(g, &z_nodes, &adjacency, gat_w, gat_r, cfg.leaky_slope)?;
                per_frame_nodes.push(gat.updated);
            }
            frame_outputs.push(FrameForward {
                acp_logits,
                gt_combos,
                mu: mu_nodes,
                lv: lv_nodes,
                z: z_nodes,
                alpha: None,
                beta: None,
                uncertainty: 1.0,
            });
        }

        if opts.build_evidence {
            let tcn_w = p("tcn.w")?;
            let tcn_b = p("tcn.b")?;
            let aggregated = relation::temporal_aggregate(g, &per_frame_nodes, tcn_w, tcn_b)?;
            for (t, frame) in frame_outputs.iter_mut().enumerate() {
                let mut alphas = Vec::with_capacity(cfg.num_aus);
                let mut betas = Vec::with_capacity(cfg.num_aus);
                for au in 0..cfg.num_aus {
                    let w = p(&format!("ev.{au}.w"))?;
                    let b = p(&format!("ev.{au}.b"))?;
                    let logits = g.matmul(w, aggregated[t][au])?;
                    let logits = g.add(logits, b)?;
                    let ev = g.softplus(logits)?;
                    let e_pos = g.slice(ev, 0, 0, 1)?;
                    let e_neg = g.slice(ev, 0, 1, 2)?;
                    alphas.push(g.add_scalar(e_pos, 1.0)?);
                    betas.push(g.add_scalar(e_neg, 1.0)?);
                }
                let alpha = g.concat0(&alphas)?;
                let beta = g.concat0(&betas)?;
                let total: f64 = g
                    .value(alpha)
                    .data()
                    .iter()
                    .zip(g.value(beta).data())
                    .map(|(a, b)| a + b)
                    .sum();
                frame.uncertainty = 2.0 * cfg.num_aus as f64 / total;
                frame.alpha = Some(alpha);
                frame.beta = Some(beta);
            }
        }

        Ok(SequenceForward {
            param_ids: ids,
            frames: frame_outputs,
        })
    }

    /// Serialize config + loss config + parameters as one text document.
    pub fn to_text(&self) -> String {
        let header = ModelHeader {
            schema: "betau-model-v1".to_string(),
            model: self.cfg.clone(),
            loss: self.loss_cfg.clone(),
        };
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&header).expect("config serializes"));
        out.push('\n');
        out.push_str(&crate::tensor::write_tensors(&self.params));
        out
    }

    pub fn from_text(text: &str) -> Result<Model, HarnessError> {
        let mut split = text.splitn(2, '\n');
        let first = split.next().unwrap_or_default();
        let rest = split.next().unwrap_or_default();
        let header: ModelHeader =
            serde_json::from_str(first).map_err(|e| HarnessError::Io(format!("model header: {e}")))?;
        if header.schema != "betau-model-v1" {
            return Err(HarnessError::Io(format!("unknown model schema '{}'", header.schema)));
        }
        let params = crate::tensor::read_tensors(rest)
            .map_err(|e| HarnessError::Io(format!("model tensors: {e}")))?;
        Ok(Model {
            cfg: header.model,
            loss_cfg: header.loss,
            params,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    schema: String,
    model: ModelConfig,
    loss: LossConfig,
}
