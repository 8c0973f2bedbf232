//! Evaluation metrics and uncertainty stratification.

use super::model::{Conditioning, ForwardOptions, Model, Trainable};
use super::synth::{generate_sequence, Dataset, FeatureGen, Split};
use super::HarnessError;
use crate::tensor::{Graph, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuMetrics {
    pub au: usize,
    pub tp: usize,
    pub fp: usize,
    pub false_neg: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameEval {
    pub seq: u64,
    pub t: usize,
    pub uncertainty: f64,
    pub occluded: bool,
    /// Misclassified labels in this frame (0..num_aus).
    pub wrong: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub num_aus: usize,
    pub per_au: Vec<AuMetrics>,
    pub avg_f1: f64,
    pub mean_uncertainty: f64,
    pub num_frames: usize,
    pub frames: Vec<FrameEval>,
}

fn f1_from_counts(tp: usize, fp: usize, false_neg: usize) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + false_neg == 0 { 0.0 } else { tp as f64 / (tp + false_neg) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Evaluate on one split: decision rule p̄ ≥ 0.5 on the Beta mean.
pub fn evaluate(model: &Model, data: &Dataset, split: Split) -> Result<EvalReport, HarnessError> {
    let n_aus = model.cfg.num_aus;
    let mut tp = vec![0usize; n_aus];
    let mut fp = vec![0usize; n_aus];
    let mut fneg = vec![0usize; n_aus];
    let mut tn = vec![0usize; n_aus];
    let mut frames_out = Vec::new();
    let mut u_sum = 0.0;
    let feature_gen = FeatureGen::new(&data.cfg);

    for seq in data.sequence_ids(split) {
        let seq_data = generate_sequence(&data.cfg, seq);
        let frames: Vec<Vec<Tensor>> = (0..data.cfg.frames_per_seq)
            .map(|t| feature_gen.frame(&seq_data, t))
            .collect();
        let mut g = Graph::new();
        let mut opts = ForwardOptions {
            trainable: Trainable::None,
            conditioning: Conditioning::Predicted,
            sample: None,
            build_evidence: true,
        };
        let fwd = model.forward_sequence(&mut g, &frames, &seq_data, &mut opts)?;
        let records = data.records_for(seq);
        for (t, f) in fwd.frames.iter().enumerate() {
            let alpha = g.value(f.alpha.expect("evidence built"));
            let beta = g.value(f.beta.expect("evidence built"));
            let mut wrong = 0usize;
            for au in 0..n_aus {
                let p_bar = alpha.data()[au] / (alpha.data()[au] + beta.data()[au]);
                let pred = p_bar >= 0.5;
                let truth = seq_data.labels[t][au] == 1;
                match (pred, truth) {
                    (true, true) => tp[au] += 1,
                    (true, false) => fp[au] += 1,
                    (false, true) => fneg[au] += 1,
                    (false, false) => tn[au] += 1,
                }
                if pred != truth {
                    wrong += 1;
                }
            }
            u_sum += f.uncertainty;
            frames_out.push(FrameEval {
                seq,
                t,
                uncertainty: f.uncertainty,
                occluded: records[t].occluded(),
                wrong,
            });
        }
    }

    let per_au: Vec<AuMetrics> = (0..n_aus)
        .map(|au| {
            let (precision, recall, f1) = f1_from_counts(tp[au], fp[au], fneg[au]);
            AuMetrics {
                au,
                tp: tp[au],
                fp: fp[au],
                false_neg: fneg[au],
                tn: tn[au],
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let avg_f1 = per_au.iter().map(|m| m.f1).sum::<f64>() / n_aus as f64;
    let num_frames = frames_out.len();
    Ok(EvalReport {
        schema: "eval-v1".to_string(),
        num_aus: n_aus,
        per_au,
        avg_f1,
        mean_uncertainty: if num_frames == 0 { 0.0 } else { u_sum / num_frames as f64 },
        num_frames,
        frames: frames_out,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stratum {
    pub index: usize,
    pub u_lo: f64,
    pub u_hi: f64,
    pub frames: usize,
    /// Misclassified labels / (frames × AUs).
    pub error_rate: f64,
    pub occluded: usize,
    pub occluded_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrataReport {
    pub schema: String,
    pub bins: Vec<Stratum>,
    pub monotone_non_decreasing: bool,
    /// All uncertainties identical: the quantile split is arbitrary.
    pub degenerate: bool,
    pub occluded_base_rate: f64,
    /// Occluded-frame rate in the highest-uncertainty stratum over base.
    pub high_bin_occlusion_ratio: f64,
}

/// Split evaluated frames into uncertainty quantile bins (population sizes
/// differing by at most one frame) and report error/occlusion per bin.
pub fn stratify_uncertainty(report: &EvalReport, bins: usize) -> Result<StrataReport, HarnessError> {
    if bins == 0 || report.frames.len() < bins {
        return Err(HarnessError::NotEnoughFrames {
            need: bins.max(1),
            got: report.frames.len(),
        });
    }
    let mut order: Vec<usize> = (0..report.frames.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = &report.frames[a];
        let fb = &report.frames[b];
        fa.uncertainty
            .total_cmp(&fb.uncertainty)
            .then(fa.seq.cmp(&fb.seq))
            .then(fa.t.cmp(&fb.t))
    });
    let n = order.len();
    let base = n / bins;
    let extra = n % bins;
    let mut strata = Vec::with_capacity(bins);
    let mut start = 0usize;
    for b in 0..bins {
        let size = base + usize::from(b < extra);
        let idxs = &order[start..start + size];
        start += size;
        let mut wrong = 0usize;
        let mut occl = 0usize;
        let mut u_lo = f64::INFINITY;
        let mut u_hi = f64::NEG_INFINITY;
        for &i in idxs {
            let f = &report.frames[i];
            wrong += f.wrong;
            occl += f.occluded as usize;
            u_lo = u_lo.min(f.uncertainty);
            u_hi = u_hi.max(f.uncertainty);
        }
        strata.push(Stratum {
            index: b,
            u_lo,
            u_hi,
            frames: size,
            error_rate: wrong as f64 / (size * report.num_aus) as f64,
            occluded: occl,
            occluded_rate: occl as f64 / size as f64,
        });
    }
    let monotone = strata.windows(2).all(|w| w[1].error_rate >= w[0].error_rate - 1e-12);
    let u_min = report.frames.iter().map(|f| f.uncertainty).fold(f64::INFINITY, f64::min);
    let u_max = report
        .frames
        .iter()
        .map(|f| f.uncertainty)
        .fold(f64::NEG_INFINITY, f64::max);
    let degenerate = (u_max - u_min).abs() < 1e-12;
    let total_occl: usize = report.frames.iter().map(|f| f.occluded as usize).sum();
    let base_rate = total_occl as f64 / n as f64;
    let high = strata.last().expect("bins >= 1");
    let ratio = if base_rate > 0.0 { high.occluded_rate / base_rate } else { 0.0 };
    Ok(StrataReport {
        schema: "strata-v1".to_string(),
        bins: strata,
        monotone_non_decreasing: monotone,
        degenerate,
        occluded_base_rate: base_rate,
        high_bin_occlusion_ratio: ratio,
    })
}
