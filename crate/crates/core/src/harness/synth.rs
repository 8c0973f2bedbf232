//! Synthetic labeled frame sequences with deterministic regeneration.
//!
//! The dataset file stores only labels and generator metadata; features are
//! recomputed on demand from (seed, sequence, frame). The generative model:
//! a fixed per-channel base pattern, a per-sequence subject offset, per-AU
//! spatial bumps gated by correlated Markov label chains with onset/offset
//! amplitude ramps, additive Gaussian noise, and occasional region-wide
//! occlusion spans that replace a band with pure noise.

use super::HarnessError;
use crate::region::{partition_bounds, Region, REGIONS};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

// Stream tags for keyed RNG derivation.
const TAG_BASE: u64 = 0xBA5E;
const TAG_SUBJECT: u64 = 0x5AB7;
const TAG_AU_GEOM: u64 = 0xA0;
const TAG_AU_CHAN: u64 = 0xA1;
const TAG_AU_JITTER: u64 = 0xA2;
const TAG_LABELS: u64 = 0x1ABE1;
const TAG_OCCLUSION: u64 = 0x0CC1;
const TAG_NOISE: u64 = 0xF0;
const TAG_OCCL_NOISE: u64 = 0xCC;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_aus: usize,
    pub au_regions: Vec<Region>,
    pub positive_rates: Vec<f64>,
    pub train_sequences: usize,
    pub eval_sequences: usize,
    pub frames_per_seq: usize,
    pub subject_offset_scale: f64,
    pub noise_scale: f64,
    pub occlusion_prob: f64,
    /// Probability that an AU's transition draw reuses its region's shared
    /// uniform, inducing within-region co-occurrence without changing the
    /// per-AU marginals.
    pub cooccur_corr: f64,
    /// Markov persistence P(active -> active).
    pub persistence: f64,
    pub bump_amplitude: f64,
    /// Normalized bump radius (fraction of the map height).
    pub bump_sigma: f64,
    /// Square map heights per scale, finest first; the last is the target.
    pub scales: Vec<usize>,
    pub channels: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_aus: 8,
            au_regions: vec![
                Region::Up,
                Region::Up,
                Region::Up,
                Region::Mid,
                Region::Mid,
                Region::Low,
                Region::Low,
                Region::Low,
            ],
            positive_rates: vec![0.40, 0.30, 0.25, 0.20, 0.15, 0.10, 0.07, 0.05],
            train_sequences: 200,
            eval_sequences: 60,
            frames_per_seq: 32,
            subject_offset_scale: 0.15,
            noise_scale: 0.3,
            occlusion_prob: 0.08,
            cooccur_corr: 0.5,
            persistence: 0.8,
            bump_amplitude: 2.6,
            bump_sigma: 0.18,
            scales: vec![28, 14, 7],
            channels: 8,
            seed: 17,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.num_aus == 0
            || self.au_regions.len() != self.num_aus
            || self.positive_rates.len() != self.num_aus
        {
            return Err(HarnessError::BadConfig(format!(
                "num_aus {} must match au_regions ({}) and positive_rates ({})",
                self.num_aus,
                self.au_regions.len(),
                self.positive_rates.len()
            )));
        }
        for (i, &p) in self.positive_rates.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(HarnessError::BadConfig(format!(
                    "positive_rates[{i}] = {p} outside (0,1)"
                )));
            }
            // Stationarity of the two-state chain needs P(0->1) <= 1.
            if p * (1.0 - self.persistence) / (1.0 - p) > 1.0 {
                return Err(HarnessError::BadConfig(format!(
                    "positive_rates[{i}] = {p} too high for persistence {}",
                    self.persistence
                )));
            }
        }
        if !(0.0..1.0).contains(&self.occlusion_prob) {
            return Err(HarnessError::BadConfig(format!(
                "occlusion_prob {} outside [0,1)",
                self.occlusion_prob
            )));
        }
        if !(0.0..=1.0).contains(&self.cooccur_corr) || !(0.0..1.0).contains(&self.persistence) {
            return Err(HarnessError::BadConfig(
                "cooccur_corr in [0,1] and persistence in [0,1) required".into(),
            ));
        }
        if self.frames_per_seq == 0 || self.train_sequences == 0 {
            return Err(HarnessError::BadConfig("empty dataset".into()));
        }
        if self.scales.is_empty() || self.channels == 0 {
            return Err(HarnessError::BadConfig("need at least one scale and channel".into()));
        }
        let target = *self.scales.last().unwrap();
        if target < 7 {
            return Err(HarnessError::BadConfig(format!(
                "target scale {target} is below the minimum region height 7"
            )));
        }
        for &s in &self.scales {
            if s % target != 0 {
                return Err(HarnessError::BadConfig(format!(
                    "scale {s} does not divide into target {target}"
                )));
            }
        }
        Ok(())
    }

    pub fn total_sequences(&self) -> usize {
        self.train_sequences + self.eval_sequences
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

/// One frame's stored record: labels plus generator metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub seq: u64,
    pub t: usize,
    pub split: Split,
    pub labels: Vec<u8>,
    /// Per-region occlusion flags (up, mid, low).
    pub occl: [bool; 3],
}

impl Record {
    pub fn occluded(&self) -> bool {
        self.occl.iter().any(|&o| o)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub cfg: SyntheticConfig,
    pub records: Vec<Record>,
}

/// Labels, occlusion, bump amplitudes, and per-sequence generator constants.
#[derive(Debug, Clone)]
pub struct SequenceData {
    pub seq: u64,
    /// labels[t][n]
    pub labels: Vec<Vec<u8>>,
    /// occl[t][region]
    pub occl: Vec<[bool; 3]>,
    /// amps[t][n]: bump amplitude with onset/offset ramps inside active runs
    pub amps: Vec<Vec<f64>>,
    /// per-AU normalized bump centers for this sequence (subject geometry)
    pub centers: Vec<(f64, f64)>,
    /// per-AU channel signatures (scaled to the bump amplitude)
    pub signatures: Vec<Vec<f64>>,
    /// per-channel subject offsets
    pub offsets: Vec<f64>,
}

/// Generate labels/occlusion/amplitudes for one sequence.
///
/// Each AU follows a two-state Markov chain whose stationary probability is
/// exactly its configured rate; chains within one region share transition
/// randomness with probability `cooccur_corr`, which correlates activations
/// without moving the marginals.
pub fn generate_sequence(cfg: &SyntheticConfig, seq: u64) -> SequenceData {
    let t_len = cfg.frames_per_seq;
    let n = cfg.num_aus;
    let mut rng = Rng::derive(cfg.seed, &[TAG_LABELS, seq]);
    let s = cfg.persistence;

    let mut labels = vec![vec![0u8; n]; t_len];
    let mut state = vec![false; n];
    for (au, st) in state.iter_mut().enumerate() {
        *st = rng.uniform() < cfg.positive_rates[au];
    }
    for t in 0..t_len {
        if t > 0 {
            // One shared uniform per region per step, mixed in per AU.
            let shared: Vec<f64> = REGIONS.iter().map(|_| rng.uniform()).collect();
            for au in 0..n {
                let region = cfg.au_regions[au].index();
                let mix = rng.uniform();
                let own = rng.uniform();
                let u = if mix < cfg.cooccur_corr { shared[region] } else { own };
                let p = cfg.positive_rates[au];
                let q_on = p * (1.0 - s) / (1.0 - p);
                state[au] = if state[au] { u < s } else { u < q_on };
            }
        }
        for au in 0..n {
            labels[t][au] = state[au] as u8;
        }
    }

    // Occlusion spans: a region goes to pure noise for 3-6 frames.
    let mut occl = vec![[false; 3]; t_len];
    let mut orng = Rng::derive(cfg.seed, &[TAG_OCCLUSION, seq]);
    let start_prob = cfg.occlusion_prob / 7.5;
    let mut remaining = 0usize;
    let mut region = 0usize;
    for slot in occl.iter_mut() {
        if remaining == 0 && orng.uniform() < start_prob {
            remaining = 6 + orng.below(4);
            region = orng.below(3);
        }
        if remaining > 0 {
            slot[region] = true;
            remaining -= 1;
        }
    }

    // Amplitude ramps: half strength on the first and last frame of each
    // active run, zero outside runs.
    let mut amps = vec![vec![0.0; n]; t_len];
    for au in 0..n {
        let mut t = 0;
        while t < t_len {
            if labels[t][au] == 1 {
                let start = t;
                let mut end = t;
                while end + 1 < t_len && labels[end + 1][au] == 1 {
                    end += 1;
                }
                for (k, amp_t) in amps.iter_mut().enumerate().take(end + 1).skip(start) {
                    let edge = k == start || k == end;
                    amp_t[au] = if edge { 0.75 } else { 1.0 };
                }
                t = end + 1;
            } else {
                t += 1;
            }
        }
    }

    let centers = (0..n).map(|au| au_center(cfg, au, seq)).collect();
    let signatures = (0..n).map(|au| au_channel_signature(cfg, au)).collect();
    let mut subject = Rng::derive(cfg.seed, &[TAG_SUBJECT, seq]);
    let offsets = (0..cfg.channels)
        .map(|_| cfg.subject_offset_scale * subject.normal())
        .collect();

    SequenceData {
        seq,
        labels,
        occl,
        amps,
        centers,
        signatures,
        offsets,
    }
}

fn au_center(cfg: &SyntheticConfig, au: usize, seq: u64) -> (f64, f64) {
    // Canonical normalized position inside the AU's region band, jittered a
    // little per sequence (subject geometry).
    let mut geo = Rng::derive(cfg.seed, &[TAG_AU_GEOM, au as u64]);
    let region = cfg.au_regions[au];
    let (lo, hi) = match region {
        Region::Up => (0.0, 3.0 / 7.0),
        Region::Mid => (2.0 / 7.0, 5.0 / 7.0),
        Region::Low => (4.0 / 7.0, 1.0),
    };
    let span = hi - lo;
    let y = lo + span * geo.range(0.15, 0.85);
    let x = geo.range(0.15, 0.85);
    let mut jit = Rng::derive(cfg.seed, &[TAG_AU_JITTER, seq, au as u64]);
    (
        (y + 0.02 * jit.normal()).clamp(lo, hi - 1e-9),
        (x + 0.02 * jit.normal()).clamp(0.0, 1.0 - 1e-9),
    )
}

fn au_channel_signature(cfg: &SyntheticConfig, au: usize) -> Vec<f64> {
    // Sparse signature: a few strong channels beat a thin spread across all
    // of them once global pooling dilutes the bump.
    let mut rng = Rng::derive(cfg.seed, &[TAG_AU_CHAN, au as u64]);
    let active = (cfg.channels / 4).max(2).min(cfg.channels);
    let mut v = vec![0.0; cfg.channels];
    let mut chosen = 0usize;
    while chosen < active {
        let ch = rng.below(cfg.channels);
        if v[ch] == 0.0 {
            v[ch] = if rng.uniform() < 0.5 { -1.0 } else { 1.0 } * rng.range(0.6, 1.0);
            chosen += 1;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    for x in &mut v {
        *x = *x / norm * cfg.bump_amplitude;
    }
    v
}

/// Feature renderer with the static base pattern precomputed per scale.
///
/// The base maps depend only on the dataset seed, so hot loops build one
/// `FeatureGen` and render every frame through it.
#[derive(Debug, Clone)]
pub struct FeatureGen {
    cfg: SyntheticConfig,
    /// base[l]: the seed-fixed per-channel pattern, without subject offsets
    base: Vec<Vec<f64>>,
}

impl FeatureGen {
    pub fn new(cfg: &SyntheticConfig) -> FeatureGen {
        let mut base_maps = Vec::with_capacity(cfg.scales.len());
        for (l, &h) in cfg.scales.iter().enumerate() {
            let c = cfg.channels;
            let mut map = vec![0.0; c * h * h];
            for ch in 0..c {
                let mut base = Rng::derive(cfg.seed, &[TAG_BASE, l as u64, ch as u64]);
                let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
                    .map(|_| {
                        (
                            base.range(0.1, 0.9),
                            base.range(0.1, 0.9),
                            base.range(0.15, 0.4),
                            base.range(-0.8, 0.8),
                        )
                    })
                    .collect();
                for y in 0..h {
                    for x in 0..h {
                        let ny = (y as f64 + 0.5) / h as f64;
                        let nx = (x as f64 + 0.5) / h as f64;
                        let mut v = 0.0;
                        for &(by, bx, bs, ba) in &blobs {
                            let d2 = (ny - by).powi(2) + (nx - bx).powi(2);
                            v += ba * (-d2 / (2.0 * bs * bs)).exp();
                        }
                        map[(ch * h + y) * h + x] = v;
                    }
                }
            }
            base_maps.push(map);
        }
        FeatureGen {
            cfg: cfg.clone(),
            base: base_maps,
        }
    }

    /// Multi-scale feature maps for one frame, finest scale first.
    pub fn frame(&self, data: &SequenceData, t: usize) -> Vec<Tensor> {
        let cfg = &self.cfg;
        let seq = data.seq;
        let mut out = Vec::with_capacity(cfg.scales.len());
        for (l, &h) in cfg.scales.iter().enumerate() {
            let c = cfg.channels;
            let mut map = self.base[l].clone();
            for ch in 0..c {
                let off = data.offsets[ch];
                if off != 0.0 {
                    for v in &mut map[ch * h * h..(ch + 1) * h * h] {
                        *v += off;
                    }
                }
            }
            // AU bumps.
            let sigma = (cfg.bump_sigma * h as f64).max(0.7);
            for au in 0..cfg.num_aus {
                let amp = data.amps[t][au];
                if amp == 0.0 {
                    continue;
                }
                let (cy, cx) = data.centers[au];
                let py = cy * h as f64;
                let px = cx * h as f64;
                let lo_y = ((py - 3.0 * sigma).floor().max(0.0)) as usize;
                let hi_y = ((py + 3.0 * sigma).ceil().min(h as f64 - 1.0)) as usize;
                let lo_x = ((px - 3.0 * sigma).floor().max(0.0)) as usize;
                let hi_x = ((px + 3.0 * sigma).ceil().min(h as f64 - 1.0)) as usize;
                for y in lo_y..=hi_y {
                    for x in lo_x..=hi_x {
                        let d2 = (y as f64 + 0.5 - py).powi(2) + (x as f64 + 0.5 - px).powi(2);
                        let blob = (-d2 / (2.0 * sigma * sigma)).exp();
                        for ch in 0..c {
                            map[(ch * h + y) * h + x] += amp * data.signatures[au][ch] * blob;
                        }
                    }
                }
            }
            // Per-frame noise.
            if cfg.noise_scale > 0.0 {
                let mut noise = Rng::derive(cfg.seed, &[TAG_NOISE, seq, t as u64, l as u64]);
                for v in &mut map {
                    *v += cfg.noise_scale * noise.normal();
                }
            }
            // Occlusion replaces a region band with pure noise.
            let bounds = partition_bounds(h).expect("scales validated >= 7");
            for (ri, &(row_lo, row_hi)) in bounds.iter().enumerate() {
                if !data.occl[t][ri] {
                    continue;
                }
                let mut onoise =
                    Rng::derive(cfg.seed, &[TAG_OCCL_NOISE, seq, t as u64, l as u64, ri as u64]);
                // The band keeps only the ambient noise floor: occlusion
                // erases structure rather than injecting energy.
                let floor = 0.1;
                for ch in 0..c {
                    for y in row_lo..row_hi {
                        for x in 0..h {
                            map[(ch * h + y) * h + x] = floor * onoise.normal();
                        }
                    }
                }
            }
            out.push(Tensor::new(vec![c, h, h], map).expect("sized in place"));
        }
        out
    }
}

/// Multi-scale feature maps for one frame, finest scale first.
pub fn features_for_frame(cfg: &SyntheticConfig, data: &SequenceData, t: usize) -> Vec<Tensor> {
    FeatureGen::new(cfg).frame(data, t)
}

/// Generate the full dataset (labels + metadata only).
pub fn generate_dataset(cfg: &SyntheticConfig) -> Result<Dataset, HarnessError> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.total_sequences() * cfg.frames_per_seq);
    for seq in 0..cfg.total_sequences() as u64 {
        let split = if (seq as usize) < cfg.train_sequences {
            Split::Train
        } else {
            Split::Eval
        };
        let data = generate_sequence(cfg, seq);
        for t in 0..cfg.frames_per_seq {
            records.push(Record {
                seq,
                t,
                split,
                labels: data.labels[t].clone(),
                occl: data.occl[t],
            });
        }
    }
    Ok(Dataset { cfg: cfg.clone(), records })
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    synthetic: SyntheticConfig,
}

impl Dataset {
    /// Sequence ids of one split, ascending.
    pub fn sequence_ids(&self, split: Split) -> Vec<u64> {
        let total = self.cfg.total_sequences() as u64;
        let train = self.cfg.train_sequences as u64;
        match split {
            Split::Train => (0..train).collect(),
            Split::Eval => (train..total).collect(),
        }
    }

    pub fn records_for(&self, seq: u64) -> &[Record] {
        let t = self.cfg.frames_per_seq;
        let base = seq as usize * t;
        &self.records[base..base + t]
    }

    /// JSON-lines serialization: one header record, then one record per
    /// frame.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = Header {
            schema: "betau-data-v1".to_string(),
            synthetic: self.cfg.clone(),
        };
        out.push_str(&serde_json::to_string(&header).expect("config serializes"));
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Dataset, HarnessError> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(HarnessError::DatasetParse {
            line: 1,
            detail: "empty file".into(),
        })?;
        let header: Header = serde_json::from_str(first).map_err(|e| HarnessError::DatasetParse {
            line: 1,
            detail: e.to_string(),
        })?;
        if header.schema != "betau-data-v1" {
            return Err(HarnessError::DatasetParse {
                line: 1,
                detail: format!("unknown schema '{}'", header.schema),
            });
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(line).map_err(|e| HarnessError::DatasetParse {
                line: i + 1,
                detail: e.to_string(),
            })?;
            records.push(r);
        }
        let expected = header.synthetic.total_sequences() * header.synthetic.frames_per_seq;
        if records.len() != expected {
            return Err(HarnessError::DatasetParse {
                line: 0,
                detail: format!("expected {expected} records, got {}", records.len()),
            });
        }
        Ok(Dataset { cfg: header.synthetic, records })
    }
}
