//! Two-stage training: the embedding stage (classification + KL) and the
//! joint stage (asymmetric Beta loss + combination supervision).

use super::adam::{adam_step, AdamHyper, AdamState};
use super::model::{Conditioning, EmbeddingMode, ForwardOptions, Model, Trainable};
use super::synth::{generate_sequence, Dataset, FeatureGen, Split};
use super::HarnessError;
use crate::cvae;
use crate::region;
use crate::rng::Rng;
use crate::tensor::{Graph, NodeId, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const TAG_ORDER: u64 = 0x0011;
const TAG_SAMPLE: u64 = 0x5A11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuWeightMode {
    /// Inverse occurrence rate on the training split, normalized to mean 1.
    InverseFreq,
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: u8,
    pub epochs: usize,
    pub batch_sequences: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub au_weight_mode: AuWeightMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: 1,
            epochs: 3,
            batch_sequences: 1,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            au_weight_mode: AuWeightMode::InverseFreq,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub cls: f64,
    pub kl: f64,
    pub l_ab: f64,
    pub l_sub: f64,
    pub mean_uncertainty: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub schema: String,
    pub stage: u8,
    pub epochs: Vec<EpochLog>,
}

fn shuffled(ids: &[u64], seed: u64, epoch: usize) -> Vec<u64> {
    let mut out = ids.to_vec();
    let mut rng = Rng::derive(seed, &[TAG_ORDER, epoch as u64]);
    for i in (1..out.len()).rev() {
        let j = rng.below(i + 1);
        out.swap(i, j);
    }
    out
}

fn accumulate_grads(
    graph: &Graph,
    grads: &crate::tensor::Gradients,
    param_ids: &BTreeMap<String, NodeId>,
    trainable: Trainable,
    acc: &mut BTreeMap<String, Vec<f64>>,
) {
    for (name, &id) in param_ids {
        if !Model::trainable_under(name, trainable) {
            continue;
        }
        if let Some(gt) = grads.get(id) {
            let slot = acc
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; graph.value(id).len()]);
            for (s, g) in slot.iter_mut().zip(gt.data()) {
                *s += g;
            }
        }
    }
}

fn grads_to_tensors(
    acc: BTreeMap<String, Vec<f64>>,
    scale: f64,
    model: &Model,
) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    for (name, mut data) in acc {
        for v in &mut data {
            *v *= scale;
        }
        let shape = model.params.get(&name).expect("accumulated over model params").shape().to_vec();
        out.insert(name, Tensor::new(shape, data).expect("gradient matches parameter"));
    }
    out
}

/// Inverse-frequency AU weights (mean 1) from the training split.
pub fn au_weights_from_dataset(data: &Dataset) -> Vec<f64> {
    let n = data.cfg.num_aus;
    let mut counts = vec![0usize; n];
    let mut frames = 0usize;
    for seq in data.sequence_ids(Split::Train) {
        for r in data.records_for(seq) {
            frames += 1;
            for (au, &y) in r.labels.iter().enumerate() {
                counts[au] += y as usize;
            }
        }
    }
    let raw: Vec<f64> = counts
        .iter()
        .map(|&c| frames as f64 / (c.max(1) as f64))
        .collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    raw.iter().map(|w| w / mean).collect()
}

/// Stage I: train the AU extractors and encoder heads with the
/// classification + KL objective, ground-truth conditioning.
pub fn train_stage1(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainLog, HarnessError> {
    run_training(model, data, cfg, 1)
}

/// Stage II: joint training with the frame-weighted asymmetric Beta loss
/// plus λ2-weighted combination supervision, predicted conditioning.
pub fn train_stage2(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainLog, HarnessError> {
    if cfg.au_weight_mode == AuWeightMode::InverseFreq {
        model.loss_cfg.au_weights = au_weights_from_dataset(data);
    } else {
        model.loss_cfg.au_weights = vec![1.0; data.cfg.num_aus];
    }
    run_training(model, data, cfg, 2)
}

struct SeqLoss {
    loss: NodeId,
    cls: f64,
    kl: f64,
    l_ab: f64,
    l_sub: f64,
    mean_u: f64,
}

fn run_training(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    stage: u8,
) -> Result<TrainLog, HarnessError> {
    let train_ids = data.sequence_ids(Split::Train);
    let batches_per_epoch = train_ids.len().div_ceil(cfg.batch_sequences.max(1));
    let hyper = AdamHyper::new(
        cfg.lr,
        cfg.beta1,
        cfg.beta2,
        cfg.weight_decay,
        (cfg.epochs * batches_per_epoch) as u64,
    );
    let mut state = AdamState::default();
    let trainable = if stage == 1 {
        Trainable::EmbeddingOnly
    } else {
        Trainable::All
    };
    let mut log = TrainLog {
        schema: "train-v1".to_string(),
        stage,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let feature_gen = FeatureGen::new(&data.cfg);

    for epoch in 0..cfg.epochs {
        let order = shuffled(&train_ids, cfg.seed, epoch);
        let mut totals = EpochLog {
            epoch,
            loss: 0.0,
            cls: 0.0,
            kl: 0.0,
            l_ab: 0.0,
            l_sub: 0.0,
            mean_uncertainty: 0.0,
            lr: 0.0,
        };
        for batch in order.chunks(cfg.batch_sequences.max(1)) {
            let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for &seq in batch {
                let mut g = Graph::new();
                let seq_data = generate_sequence(&data.cfg, seq);
                let frames: Vec<Vec<Tensor>> = (0..data.cfg.frames_per_seq)
                    .map(|t| feature_gen.frame(&seq_data, t))
                    .collect();
                let mut sample_rng = Rng::derive(cfg.seed, &[TAG_SAMPLE, epoch as u64, seq]);
                let sample = matches!(model.cfg.embedding, EmbeddingMode::Cvae);
                let mut opts = ForwardOptions {
                    trainable,
                    conditioning: if stage == 1 {
                        Conditioning::GroundTruth
                    } else {
                        Conditioning::Predicted
                    },
                    sample: if sample { Some(&mut sample_rng) } else { None },
                    build_evidence: stage == 2,
                };
                let fwd = model.forward_sequence(&mut g, &frames, &seq_data, &mut opts)?;
                let sl = if stage == 1 {
                    stage1_loss(&mut g, model, &fwd, &seq_data)?
                } else {
                    stage2_loss(&mut g, model, &fwd, &seq_data)?
                };
                let loss_val = g.value(sl.loss).item();
                if !loss_val.is_finite() {
                    return Err(HarnessError::Diverged {
                        epoch,
                        seq,
                        loss: loss_val,
                    });
                }
                totals.loss += loss_val;
                totals.cls += sl.cls;
                totals.kl += sl.kl;
                totals.l_ab += sl.l_ab;
                totals.l_sub += sl.l_sub;
                totals.mean_uncertainty += sl.mean_u;
                let grads = g.backward(sl.loss)?;
                accumulate_grads(&g, &grads, &fwd.param_ids, trainable, &mut acc);
            }
            let grads = grads_to_tensors(acc, 1.0 / batch.len() as f64, model);
            totals.lr = adam_step(&mut model.params, &grads, &mut state, &hyper)?;
        }
        let n = train_ids.len() as f64;
        totals.loss /= n;
        totals.cls /= n;
        totals.kl /= n;
        totals.l_ab /= n;
        totals.l_sub /= n;
        totals.mean_uncertainty /= n;
        log.epochs.push(totals);
    }
    Ok(log)
}

fn stage1_loss(
    g: &mut Graph,
    model: &Model,
    fwd: &super::model::SequenceForward,
    seq_data: &super::synth::SequenceData,
) -> Result<SeqLoss, HarnessError> {
    let n_aus = model.cfg.num_aus;
    // Per-AU classification over all frames (each AU has its own head).
    let mut au_losses = Vec::with_capacity(n_aus);
    for au in 0..n_aus {
        let cls_w = fwd.param_ids[&format!("enc.{au}.cls.w")];
        let z_rows: Vec<NodeId> = fwd.frames.iter().map(|f| f.z[au]).collect();
        let labels: Vec<usize> = (0..fwd.frames.len())
            .map(|t| seq_data.labels[t][au] as usize)
            .collect();
        let l = cvae::cls_loss_node(g, cls_w, &z_rows, &labels)?;
        au_losses.push(g.reshape(l, vec![1])?);
    }
    let stacked = g.concat0(&au_losses)?;
    let cls_mean = g.mean_all(stacked)?;
    let cls_val = g.value(cls_mean).item();

    let lambda1 = model.loss_cfg.kl_weight;
    let (loss, kl_val) = if matches!(model.cfg.embedding, EmbeddingMode::Cvae) && lambda1 > 0.0 {
        let mut kls = Vec::with_capacity(fwd.frames.len() * n_aus);
        for f in &fwd.frames {
            for au in 0..n_aus {
                let kl = cvae::kl_node(g, f.mu[au], f.lv[au])?;
                kls.push(g.reshape(kl, vec![1])?);
            }
        }
        let kstack = g.concat0(&kls)?;
        let kl_mean = g.mean_all(kstack)?;
        let kl_val = g.value(kl_mean).item();
        let scaled = g.mul_scalar(kl_mean, lambda1)?;
        (g.add(cls_mean, scaled)?, kl_val)
    } else {
        (cls_mean, 0.0)
    };

    Ok(SeqLoss {
        loss,
        cls: cls_val,
        kl: kl_val,
        l_ab: 0.0,
        l_sub: 0.0,
        mean_u: 0.0,
    })
}

fn stage2_loss(
    g: &mut Graph,
    model: &Model,
    fwd: &super::model::SequenceForward,
    seq_data: &super::synth::SequenceData,
) -> Result<SeqLoss, HarnessError> {
    let n_aus = model.cfg.num_aus;
    let w_vec = g.input(Tensor::vector(model.loss_cfg.au_weights.clone()));
    let mut total: Option<NodeId> = None;
    let mut mean_u = 0.0;
    for (t, f) in fwd.frames.iter().enumerate() {
        let alpha = f.alpha.expect("joint stage builds evidence");
        let beta = f.beta.expect("joint stage builds evidence");
        let labels: Vec<bool> = (0..n_aus).map(|au| seq_data.labels[t][au] == 1).collect();
        let abl = g.abl_loss(alpha, beta, &labels, &model.loss_cfg)?;
        let weighted = g.mul(abl, w_vec)?;
        let s = g.sum_all(weighted)?;
        // (1 − u) enters as a detached constant: differentiating through the
        // frame weight would reward shedding evidence everywhere.
        let s = g.mul_scalar(s, 1.0 - f.uncertainty)?;
        mean_u += f.uncertainty;
        total = Some(match total {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
    }
    let l_ab = total.expect("at least one frame");
    let l_ab_val = g.value(l_ab).item();
    mean_u /= fwd.frames.len() as f64;

    let lambda2 = model.loss_cfg.sub_weight;
    let (loss, l_sub_val) = if lambda2 > 0.0 {
        let pairs: Vec<(NodeId, usize)> = fwd
            .frames
            .iter()
            .flat_map(|f| {
                f.acp_logits
                    .iter()
                    .zip(f.gt_combos.iter())
                    .map(|(&l, &c)| (l, c))
                    .collect::<Vec<_>>()
            })
            .collect();
        let l_sub = region::acp_loss(g, &pairs)?;
        let l_sub_val = g.value(l_sub).item();
        let scaled = g.mul_scalar(l_sub, lambda2)?;
        (g.add(l_ab, scaled)?, l_sub_val)
    } else {
        (l_ab, 0.0)
    };

    Ok(SeqLoss {
        loss,
        cls: 0.0,
        kl: 0.0,
        l_ab: l_ab_val,
        l_sub: l_sub_val,
        mean_u,
    })
}
