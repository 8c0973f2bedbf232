//! Overlapping facial-region slicing, per-AU feature extraction, and
//! region-level AU-combination prediction.

use crate::rng::Rng;
use crate::tensor::{Graph, NodeId, ParamStore, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegionError {
    #[error("feature height {0} is below the minimum of 7 rows")]
    HeightTooSmall(usize),
    #[error("AU {0} is not assigned to this region")]
    UnassignedAu(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Vertical facial band an AU belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    Up,
    Mid,
    Low,
}

pub const REGIONS: [Region; 3] = [Region::Up, Region::Mid, Region::Low];

impl Region {
    pub fn index(self) -> usize {
        match self {
            Region::Up => 0,
            Region::Mid => 1,
            Region::Low => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Up => "up",
            Region::Mid => "mid",
            Region::Low => "low",
        }
    }
}

/// Row ranges [start, end) of the three overlapping bands:
/// up [0, 3H/7), mid [2H/7, 5H/7), low [4H/7, H). Integer boundaries floor.
pub fn partition_bounds(h: usize) -> Result<[(usize, usize); 3], RegionError> {
    if h < 7 {
        return Err(RegionError::HeightTooSmall(h));
    }
    Ok([
        (0, 3 * h / 7),
        (2 * h / 7, 5 * h / 7),
        (4 * h / 7, h),
    ])
}

/// Slice a [C,H,W] feature volume into the three region views.
pub fn partition_regions(g: &mut Graph, f: NodeId) -> Result<[NodeId; 3], RegionError> {
    let h = g.value(f).shape()[1];
    let bounds = partition_bounds(h)?;
    Ok([
        g.slice(f, 1, bounds[0].0, bounds[0].1)?,
        g.slice(f, 1, bounds[1].0, bounds[1].1)?,
        g.slice(f, 1, bounds[2].0, bounds[2].1)?,
    ])
}

/// Which AUs live in each region, in ascending AU order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuAssignment {
    regions: Vec<Region>,
    members: [Vec<usize>; 3],
}

impl AuAssignment {
    pub fn new(regions: Vec<Region>) -> Self {
        let mut members: [Vec<usize>; 3] = Default::default();
        for (au, r) in regions.iter().enumerate() {
            members[r.index()].push(au);
        }
        AuAssignment { regions, members }
    }

    pub fn num_aus(&self) -> usize {
        self.regions.len()
    }

    pub fn region_of(&self, au: usize) -> Region {
        self.regions[au]
    }

    /// AUs in a region, ascending.
    pub fn members(&self, r: Region) -> &[usize] {
        &self.members[r.index()]
    }

    /// Position of an AU within its region's member list (its combo bit).
    pub fn bit_of(&self, au: usize) -> Result<usize, RegionError> {
        let r = self.region_of(au);
        self.members(r)
            .iter()
            .position(|&m| m == au)
            .ok_or(RegionError::UnassignedAu(au))
    }

    pub fn n_sub(&self, r: Region) -> usize {
        self.members(r).len()
    }

    pub fn combo_classes(&self, r: Region) -> usize {
        1usize << self.n_sub(r)
    }
}

/// Binary labels (ascending AU order within the region) -> combination index.
pub fn combo_index(labels: &[u8]) -> usize {
    labels
        .iter()
        .enumerate()
        .fold(0usize, |acc, (i, &y)| acc | ((y as usize & 1) << i))
}

/// Inverse of [`combo_index`].
pub fn combo_decode(index: usize, n_sub: usize) -> Vec<u8> {
    (0..n_sub).map(|i| ((index >> i) & 1) as u8).collect()
}

/// Per-AU extractor parameters: 3x3 conv (pad 1) from the region slice to
/// the latent channel count, then global average pooling.
pub fn init_au_extractor(
    store: &mut ParamStore,
    prefix: &str,
    in_channels: usize,
    latent_dim: usize,
    rng: &mut Rng,
) {
    let fan_in = in_channels * 9;
    store.insert_uniform(&format!("{prefix}.w"), vec![latent_dim, in_channels, 3, 3], fan_in, rng);
    store.insert_zeros(&format!("{prefix}.b"), vec![latent_dim]);
}

/// conv3x3(pad 1) + bias + global average pool -> latent vector.
pub fn au_feature_extract(
    g: &mut Graph,
    region: NodeId,
    w: NodeId,
    b: NodeId,
) -> Result<NodeId, RegionError> {
    let c = g.conv2d(region, w, 1, 1)?;
    let c = g.add_chan(c, b)?;
    Ok(g.global_avg_pool(c)?)
}

/// ACP head parameters: fully connected from pooled channels to 2^{N_sub}
/// combination logits.
pub fn init_acp_head(
    store: &mut ParamStore,
    prefix: &str,
    in_channels: usize,
    combo_classes: usize,
    rng: &mut Rng,
) {
    store.insert_uniform(&format!("{prefix}.w"), vec![combo_classes, in_channels], in_channels, rng);
    store.insert_zeros(&format!("{prefix}.b"), vec![combo_classes]);
}

/// Combination logits for a region slice: FC(GAP(region)).
pub fn acp_logits(
    g: &mut Graph,
    region: NodeId,
    w: NodeId,
    b: NodeId,
) -> Result<NodeId, RegionError> {
    let pooled = g.global_avg_pool(region)?;
    let logits = g.matmul(w, pooled)?;
    Ok(g.add(logits, b)?)
}

/// Softmax combination distribution for a region slice.
pub fn acp_predict(
    g: &mut Graph,
    region: NodeId,
    w: NodeId,
    b: NodeId,
) -> Result<NodeId, RegionError> {
    let logits = acp_logits(g, region, w, b)?;
    Ok(g.softmax(logits, 0)?)
}

/// Per-AU activation marginals of a combination distribution: for each bit,
/// the summed probability of combinations with that bit set.
pub fn acp_marginals(probs: &[f64], n_sub: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_sub];
    for (combo, &p) in probs.iter().enumerate() {
        for (bit, slot) in out.iter_mut().enumerate() {
            if (combo >> bit) & 1 == 1 {
                *slot += p;
            }
        }
    }
    out
}

/// Zero one AU's own bit in a combination index. Conditioning vectors carry
/// the *other* AUs' context; an AU must not see its own label.
pub fn mask_combo_index(index: usize, bit: usize) -> usize {
    index & !(1usize << bit)
}

/// Marginalize a combination distribution over one bit: probability mass of
/// each (combo with bit set) folds onto (combo with bit clear).
pub fn mask_combo_probs(probs: &[f64], bit: usize) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    for (combo, &p) in probs.iter().enumerate() {
        out[mask_combo_index(combo, bit)] += p;
    }
    out
}

/// Summed cross-entropy of combination logits against ground-truth combo
/// indices, over all (frame, region) pairs supplied.
pub fn acp_loss(
    g: &mut Graph,
    logits_and_targets: &[(NodeId, usize)],
) -> Result<NodeId, RegionError> {
    let mut terms = Vec::with_capacity(logits_and_targets.len());
    for &(logits, target) in logits_and_targets {
        let lsm = g.log_softmax(logits, 0)?;
        let picked = g.slice(lsm, 0, target, target + 1)?;
        terms.push(picked);
    }
    let stacked = g.concat0(&terms)?;
    let total = g.sum_all(stacked)?;
    Ok(g.mul_scalar(total, -1.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn bounds_at_height_seven() {
        assert_eq!(partition_bounds(7).unwrap(), [(0, 3), (2, 5), (4, 7)]);
    }

    #[test]
    fn bounds_scale_with_height() {
        assert_eq!(partition_bounds(14).unwrap(), [(0, 6), (4, 10), (8, 14)]);
        assert_eq!(partition_bounds(28).unwrap(), [(0, 12), (8, 20), (16, 28)]);
    }

    #[test]
    fn bounds_cover_all_rows() {
        for h in 7..64 {
            let b = partition_bounds(h).unwrap();
            assert_eq!(b[0].0, 0);
            assert_eq!(b[2].1, h);
            // overlapping coverage: each band starts before the previous ends
            assert!(b[1].0 < b[0].1, "h={h}");
            assert!(b[2].0 < b[1].1, "h={h}");
        }
    }

    #[test]
    fn height_below_seven_rejected() {
        assert!(matches!(partition_bounds(6), Err(RegionError::HeightTooSmall(6))));
    }

    #[test]
    fn combo_encoding_examples() {
        assert_eq!(combo_index(&[0, 0, 0]), 0);
        assert_eq!(combo_index(&[1, 0, 1]), 5);
        assert_eq!(combo_decode(5, 3), vec![1, 0, 1]);
    }

    #[test]
    fn combo_round_trip_is_bijective() {
        for n in 1..=4usize {
            for idx in 0..(1 << n) {
                assert_eq!(combo_index(&combo_decode(idx, n)), idx);
            }
        }
    }

    #[test]
    fn assignment_members_and_bits() {
        let a = AuAssignment::new(vec![
            Region::Up,
            Region::Up,
            Region::Up,
            Region::Mid,
            Region::Mid,
            Region::Low,
            Region::Low,
            Region::Low,
        ]);
        assert_eq!(a.members(Region::Up), &[0, 1, 2]);
        assert_eq!(a.members(Region::Mid), &[3, 4]);
        assert_eq!(a.members(Region::Low), &[5, 6, 7]);
        assert_eq!(a.bit_of(4).unwrap(), 1);
        assert_eq!(a.combo_classes(Region::Mid), 4);
        let total: usize = REGIONS.iter().map(|&r| a.n_sub(r)).sum();
        assert_eq!(total, a.num_aus());
    }

    #[test]
    fn zero_extractor_gives_zero_features() {
        let mut g = Graph::new();
        let region = g.input(Tensor::zeros(vec![2, 3, 7]));
        let w = g.param("afe.w", Tensor::zeros(vec![4, 2, 3, 3]));
        let b = g.param("afe.b", Tensor::zeros(vec![4]));
        let x = au_feature_extract(&mut g, region, w, b).unwrap();
        assert!(g.value(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extractor_is_linear_in_input_before_activation() {
        let mut rng = Rng::seed(21);
        let mut store = ParamStore::new();
        init_au_extractor(&mut store, "afe", 2, 4, &mut rng);
        let data: Vec<f64> = (0..2 * 3 * 7).map(|_| rng.range(-1.0, 1.0)).collect();
        let run = |scale: f64| {
            let mut g = Graph::new();
            let region = g.input(
                Tensor::new(vec![2, 3, 7], data.iter().map(|v| v * scale).collect()).unwrap(),
            );
            let w = g.input(store.get("afe.w").unwrap().clone());
            let b = g.input(store.get("afe.b").unwrap().clone());
            let x = au_feature_extract(&mut g, region, w, b).unwrap();
            g.value(x).data().to_vec()
        };
        let base = run(1.0);
        let scaled = run(3.0);
        for (a, b) in base.iter().zip(&scaled) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_aus_same_region_differ_when_parameters_differ() {
        let mut rng = Rng::seed(33);
        let mut store = ParamStore::new();
        init_au_extractor(&mut store, "afe.0", 2, 4, &mut rng);
        init_au_extractor(&mut store, "afe.1", 2, 4, &mut rng);
        let mut g = Graph::new();
        let region = g.input(Tensor::new(
            vec![2, 3, 7],
            (0..42).map(|v| (v as f64 * 0.37).sin()).collect(),
        ).unwrap());
        let w0 = g.input(store.get("afe.0.w").unwrap().clone());
        let b0 = g.input(store.get("afe.0.b").unwrap().clone());
        let w1 = g.input(store.get("afe.1.w").unwrap().clone());
        let b1 = g.input(store.get("afe.1.b").unwrap().clone());
        let x0 = au_feature_extract(&mut g, region, w0, b0).unwrap();
        let x1 = au_feature_extract(&mut g, region, w1, b1).unwrap();
        assert_ne!(g.value(x0).data(), g.value(x1).data());
    }

    #[test]
    fn acp_uniform_at_zero_weights() {
        let mut g = Graph::new();
        let region = g.input(Tensor::filled(vec![2, 3, 7], 0.8));
        let w = g.param("acp.w", Tensor::zeros(vec![8, 2]));
        let b = g.param("acp.b", Tensor::zeros(vec![8]));
        let p = acp_predict(&mut g, region, w, b).unwrap();
        for v in g.value(p).data() {
            assert!((v - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn acp_is_simplex_for_random_parameters() {
        let mut rng = Rng::seed(4);
        let mut store = ParamStore::new();
        init_acp_head(&mut store, "acp", 3, 8, &mut rng);
        let mut g = Graph::new();
        let region = g.input(Tensor::new(
            vec![3, 3, 7],
            (0..63).map(|_| rng.range(-2.0, 2.0)).collect(),
        ).unwrap());
        let w = g.input(store.get("acp.w").unwrap().clone());
        let b = g.input(store.get("acp.b").unwrap().clone());
        let p = acp_predict(&mut g, region, w, b).unwrap();
        let probs = g.value(p).data();
        assert!(probs.iter().all(|&v| v >= 0.0));
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // argmax decodes back to a valid pattern
        let arg = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(combo_index(&combo_decode(arg, 3)), arg);
    }

    #[test]
    fn acp_marginal_computation() {
        // distribution over 2 bits: P(00)=0.1, P(10)=0.2, P(01)=0.3, P(11)=0.4
        let m = acp_marginals(&[0.1, 0.2, 0.3, 0.4], 2);
        assert!((m[0] - 0.6).abs() < 1e-15);
        assert!((m[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn own_bit_masking() {
        assert_eq!(mask_combo_index(0b101, 0), 0b100);
        assert_eq!(mask_combo_index(0b101, 1), 0b101);
        let folded = mask_combo_probs(&[0.1, 0.2, 0.3, 0.4], 0);
        assert!((folded[0] - 0.3).abs() < 1e-15);
        assert_eq!(folded[1], 0.0);
        assert!((folded[2] - 0.7).abs() < 1e-15);
        assert_eq!(folded[3], 0.0);
        let total: f64 = folded.iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn acp_loss_uniform_and_perfect() {
        // Uniform over 4 classes, three regions, one frame: 3 ln 4.
        let mut g = Graph::new();
        let mut pairs = Vec::new();
        for i in 0..3 {
            let logits = g.param(&format!("l{i}"), Tensor::zeros(vec![4]));
            pairs.push((logits, i));
        }
        let loss = acp_loss(&mut g, &pairs).unwrap();
        assert!((g.value(loss).item() - 3.0 * 4.0f64.ln()).abs() < 1e-12);

        // Near-one-hot correct logits drive the loss to ~0.
        let mut g = Graph::new();
        let logits = g.input(Tensor::vector(vec![40.0, 0.0, 0.0, 0.0]));
        let loss = acp_loss(&mut g, &[(logits, 0)]).unwrap();
        assert!(g.value(loss).item() < 1e-12);
    }

    #[test]
    fn acp_loss_additive_over_frames() {
        let mut g = Graph::new();
        let l1 = g.input(Tensor::vector(vec![0.3, -0.7]));
        let l2 = g.input(Tensor::vector(vec![1.1, 0.2]));
        let a = acp_loss(&mut g, &[(l1, 0)]).unwrap();
        let b = acp_loss(&mut g, &[(l2, 1)]).unwrap();
        let both = acp_loss(&mut g, &[(l1, 0), (l2, 1)]).unwrap();
        let sum = g.value(a).item() + g.value(b).item();
        assert!((g.value(both).item() - sum).abs() < 1e-12);
    }
}
