//! Subjective-logic Beta opinions derived from per-label evidence.
//!
//! Every target label carries a pair of non-negative evidence values
//! (support for "present" / "absent"). The induced Beta distribution and the
//! (belief, disbelief, uncertainty) masses are thin value types over them.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvidenceError {
    #[error("evidence must be non-negative and finite, got ({pos}, {neg})")]
    Invalid { pos: f64, neg: f64 },
    #[error("frame uncertainty needs at least one Beta parameter pair")]
    Empty,
}

/// Non-negative evidence pair for one label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evidence {
    pub pos: f64,
    pub neg: f64,
}

impl Evidence {
    pub fn new(pos: f64, neg: f64) -> Result<Self, EvidenceError> {
        if pos >= 0.0 && neg >= 0.0 && pos.is_finite() && neg.is_finite() {
            Ok(Evidence { pos, neg })
        } else {
            Err(EvidenceError::Invalid { pos, neg })
        }
    }

    /// Beta strength S = e+ + e- + 2 (evidence plus the uniform prior).
    pub fn strength(&self) -> f64 {
        self.pos + self.neg + 2.0
    }
}

/// Binomial opinion masses; b + d + u = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaOpinion {
    pub belief: f64,
    pub disbelief: f64,
    pub uncertainty: f64,
}

/// Beta distribution parameters induced by evidence: α = e+ + 1, β = e- + 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

/// Masses b = e+/S, d = e-/S, u = 2/S.
pub fn opinion_from_evidence(ev: Evidence) -> BetaOpinion {
    let s = ev.strength();
    BetaOpinion {
        belief: ev.pos / s,
        disbelief: ev.neg / s,
        uncertainty: 2.0 / s,
    }
}

pub fn beta_from_evidence(ev: Evidence) -> BetaParams {
    BetaParams {
        alpha: ev.pos + 1.0,
        beta: ev.neg + 1.0,
    }
}

/// Mean of the predictive Beta distribution.
pub fn expected_probability(bp: BetaParams) -> f64 {
    bp.alpha / (bp.alpha + bp.beta)
}

/// Frame-level uncertainty mass u = 2N / Σ_j (α_j + β_j).
///
/// Equals 1 exactly when no label carries evidence and decreases toward 0 as
/// total evidence grows.
pub fn frame_uncertainty(params: &[BetaParams]) -> Result<f64, EvidenceError> {
    if params.is_empty() {
        return Err(EvidenceError::Empty);
    }
    let n = params.len() as f64;
    let total: f64 = params.iter().map(|p| p.alpha + p.beta).sum();
    Ok(2.0 * n / total)
}
