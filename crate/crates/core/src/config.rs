//! Flat key=value configuration shared by every subcommand.
//!
//! One file drives the synthetic data, the model geometry, the loss, and
//! training. Unknown keys are rejected; every key has a default documented
//! in [`KEY_DOCS`].

use crate::harness::{
    AblateConfig, EmbeddingMode, ModelConfig, SyntheticConfig, TrainConfig,
};
use crate::harness::AuWeightMode;
use crate::loss::LossConfig;
use crate::region::Region;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key '{key}'")]
    DuplicateKey { line: usize, key: String },
    #[error("key '{key}': cannot parse '{value}' ({detail})")]
    BadValue {
        key: String,
        value: String,
        detail: String,
    },
}

/// (key, default, description) for every accepted key.
pub const KEY_DOCS: &[(&str, &str, &str)] = &[
    ("num_aus", "8", "number of target AUs"),
    ("au_regions", "up,up,up,mid,mid,low,low,low", "per-AU facial band (up|mid|low)"),
    ("positive_rates", "0.4,0.3,0.25,0.2,0.15,0.1,0.07,0.05", "per-AU occurrence rate in (0,1)"),
    ("train_sequences", "200", "training sequences"),
    ("eval_sequences", "60", "held-out sequences"),
    ("frames_per_seq", "32", "frames per sequence"),
    ("subject_offset_scale", "0.15", "per-sequence channel offset scale"),
    ("noise_scale", "0.3", "additive Gaussian noise scale"),
    ("occlusion_prob", "0.08", "expected fraction of occluded frames"),
    ("cooccur_corr", "0.5", "within-region label transition correlation in [0,1]"),
    ("persistence", "0.8", "per-AU Markov persistence in [0,1)"),
    ("bump_amplitude", "2.6", "AU bump amplitude"),
    ("bump_sigma", "0.18", "normalized AU bump radius"),
    ("scales", "28,14,7", "square map heights per scale, finest first"),
    ("channels", "8", "feature channels per scale"),
    ("seed", "17", "dataset seed"),
    ("latent_dim", "64", "AU feature / latent dimension"),
    ("temporal_window", "3", "motion aggregation window (odd)"),
    ("tcn_kernel", "3", "temporal convolution kernel (odd)"),
    ("gda_kernel", "5", "directional attention kernel (odd)"),
    ("acp_threshold", "0.5", "activation marginal threshold for graph edges"),
    ("leaky_slope", "0.2", "LeakyReLU negative slope"),
    ("embedding", "cvae", "embedding mode (cvae|deterministic)"),
    ("evidence_bias_init", "-1.5", "initial bias of the evidence heads"),
    ("logvar_bias_init", "-5", "initial log-variance bias of the encoder heads"),
    ("gamma_pos", "1", "positive focusing exponent (integer)"),
    ("gamma_neg", "4", "negative focusing exponent (integer)"),
    ("shift_c", "0.2", "probability shift c in [0,1)"),
    ("lambda1", "0.01", "KL weight (embedding stage)"),
    ("lambda2", "0.01", "combination-supervision weight (joint stage)"),
    ("au_weight_mode", "inverse_freq", "per-AU loss weights (inverse_freq|uniform)"),
    ("stage", "1", "training stage (1|2)"),
    ("epochs", "3", "training epochs"),
    ("batch_sequences", "1", "sequences per optimizer step"),
    ("lr", "0.0001", "initial learning rate (cosine-annealed to 0)"),
    ("beta1", "0.9", "Adam first-moment decay"),
    ("beta2", "0.999", "Adam second-moment decay"),
    ("weight_decay", "0", "decoupled weight decay"),
    ("train_seed", "1", "training seed (shuffling, sampling, init)"),
    ("ablate_seeds", "5", "seeds for the ablation grid"),
    ("ablate_epochs_stage1", "2", "stage-1 epochs per ablation run"),
    ("ablate_epochs_stage2", "3", "stage-2 epochs per ablation run"),
    ("ablate_lr", "0.001", "learning rate for ablation runs"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub synthetic: SyntheticConfig,
    pub latent_dim: usize,
    pub temporal_window: usize,
    pub tcn_kernel: usize,
    pub gda_kernel: usize,
    pub acp_threshold: f64,
    pub leaky_slope: f64,
    pub embedding: EmbeddingMode,
    pub evidence_bias_init: f64,
    pub logvar_bias_init: f64,
    pub gamma_pos: u32,
    pub gamma_neg: u32,
    pub shift_c: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub au_weight_mode: AuWeightMode,
    pub stage: u8,
    pub epochs: usize,
    pub batch_sequences: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub train_seed: u64,
    pub ablate_seeds: usize,
    pub ablate_epochs_stage1: usize,
    pub ablate_epochs_stage2: usize,
    pub ablate_lr: f64,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            synthetic: SyntheticConfig::default(),
            latent_dim: 64,
            temporal_window: 3,
            tcn_kernel: 3,
            gda_kernel: 5,
            acp_threshold: 0.5,
            leaky_slope: 0.2,
            embedding: EmbeddingMode::Cvae,
            evidence_bias_init: -1.5,
            logvar_bias_init: -5.0,
            gamma_pos: 1,
            gamma_neg: 4,
            shift_c: 0.2,
            lambda1: 0.01,
            lambda2: 0.01,
            au_weight_mode: AuWeightMode::InverseFreq,
            stage: 1,
            epochs: 3,
            batch_sequences: 1,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            train_seed: 1,
            ablate_seeds: 5,
            ablate_epochs_stage1: 2,
            ablate_epochs_stage2: 3,
            ablate_lr: 1e-3,
        }
    }
}

fn bad(key: &str, value: &str, detail: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        detail: detail.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| bad(key, value, "not a number"))
}

fn parse_csv<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| bad(key, v, "bad list element")))
        .collect()
}

fn parse_regions(key: &str, value: &str) -> Result<Vec<Region>, ConfigError> {
    value
        .split(',')
        .map(|v| match v.trim() {
            "up" => Ok(Region::Up),
            "mid" => Ok(Region::Mid),
            "low" => Ok(Region::Low),
            other => Err(bad(key, other, "expected up|mid|low")),
        })
        .collect()
}

impl CliConfig {
    /// Parse a key=value document over the defaults.
    pub fn parse(text: &str) -> Result<CliConfig, ConfigError> {
        let mut cfg = CliConfig::default();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let stripped = stripped.trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            cfg.apply(key, value, line)?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        match key {
            "num_aus" => self.synthetic.num_aus = parse_num(key, value)?,
            "au_regions" => self.synthetic.au_regions = parse_regions(key, value)?,
            "positive_rates" => self.synthetic.positive_rates = parse_csv(key, value)?,
            "train_sequences" => self.synthetic.train_sequences = parse_num(key, value)?,
            "eval_sequences" => self.synthetic.eval_sequences = parse_num(key, value)?,
            "frames_per_seq" => self.synthetic.frames_per_seq = parse_num(key, value)?,
            "subject_offset_scale" => self.synthetic.subject_offset_scale = parse_num(key, value)?,
            "noise_scale" => self.synthetic.noise_scale = parse_num(key, value)?,
            "occlusion_prob" => self.synthetic.occlusion_prob = parse_num(key, value)?,
            "cooccur_corr" => self.synthetic.cooccur_corr = parse_num(key, value)?,
            "persistence" => self.synthetic.persistence = parse_num(key, value)?,
            "bump_amplitude" => self.synthetic.bump_amplitude = parse_num(key, value)?,
            "bump_sigma" => self.synthetic.bump_sigma = parse_num(key, value)?,
            "scales" => self.synthetic.scales = parse_csv(key, value)?,
            "channels" => self.synthetic.channels = parse_num(key, value)?,
            "seed" => self.synthetic.seed = parse_num(key, value)?,
            "latent_dim" => self.latent_dim = parse_num(key, value)?,
            "temporal_window" => self.temporal_window = parse_num(key, value)?,
            "tcn_kernel" => self.tcn_kernel = parse_num(key, value)?,
            "gda_kernel" => self.gda_kernel = parse_num(key, value)?,
            "acp_threshold" => self.acp_threshold = parse_num(key, value)?,
            "leaky_slope" => self.leaky_slope = parse_num(key, value)?,
            "embedding" => {
                self.embedding = match value {
                    "cvae" => EmbeddingMode::Cvae,
                    "deterministic" => EmbeddingMode::Deterministic,
                    other => return Err(bad(key, other, "expected cvae|deterministic")),
                }
            }
            "evidence_bias_init" => self.evidence_bias_init = parse_num(key, value)?,
            "logvar_bias_init" => self.logvar_bias_init = parse_num(key, value)?,
            "gamma_pos" => self.gamma_pos = parse_num(key, value)?,
            "gamma_neg" => self.gamma_neg = parse_num(key, value)?,
            "shift_c" => self.shift_c = parse_num(key, value)?,
            "lambda1" => self.lambda1 = parse_num(key, value)?,
            "lambda2" => self.lambda2 = parse_num(key, value)?,
            "au_weight_mode" => {
                self.au_weight_mode = match value {
                    "inverse_freq" => AuWeightMode::InverseFreq,
                    "uniform" => AuWeightMode::Uniform,
                    other => return Err(bad(key, other, "expected inverse_freq|uniform")),
                }
            }
            "stage" => self.stage = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_sequences" => self.batch_sequences = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "train_seed" => self.train_seed = parse_num(key, value)?,
            "ablate_seeds" => self.ablate_seeds = parse_num(key, value)?,
            "ablate_epochs_stage1" => self.ablate_epochs_stage1 = parse_num(key, value)?,
            "ablate_epochs_stage2" => self.ablate_epochs_stage2 = parse_num(key, value)?,
            "ablate_lr" => self.ablate_lr = parse_num(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            num_aus: self.synthetic.num_aus,
            au_regions: self.synthetic.au_regions.clone(),
            channels: self.synthetic.channels,
            latent_dim: self.latent_dim,
            scales: self.synthetic.scales.clone(),
            temporal_window: self.temporal_window,
            tcn_kernel: self.tcn_kernel,
            gda_kernel: self.gda_kernel,
            acp_threshold: self.acp_threshold,
            leaky_slope: self.leaky_slope,
            embedding: self.embedding,
            evidence_bias_init: self.evidence_bias_init,
            logvar_bias_init: self.logvar_bias_init,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            gamma_pos: self.gamma_pos,
            gamma_neg: self.gamma_neg,
            shift_c: self.shift_c,
            au_weights: vec![1.0; self.synthetic.num_aus],
            kl_weight: self.lambda1,
            sub_weight: self.lambda2,
        }
    }

    pub fn train_config(&self, stage: u8) -> TrainConfig {
        TrainConfig {
            stage,
            epochs: self.epochs,
            batch_sequences: self.batch_sequences,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            au_weight_mode: self.au_weight_mode,
            seed: self.train_seed,
        }
    }

    pub fn ablate_config(&self) -> AblateConfig {
        let base = self.train_config(1);
        AblateConfig {
            seeds: (0..self.ablate_seeds as u64)
                .map(|i| self.train_seed + i)
                .collect(),
            stage1: TrainConfig {
                stage: 1,
                epochs: self.ablate_epochs_stage1,
                lr: self.ablate_lr,
                ..base.clone()
            },
            stage2: TrainConfig {
                stage: 2,
                epochs: self.ablate_epochs_stage2,
                lr: self.ablate_lr,
                ..base
            },
            model: self.model_config(),
            loss: self.loss_config(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_empty_document() {
        let cfg = CliConfig::parse("").unwrap();
        assert_eq!(cfg, CliConfig::default());
    }

    #[test]
    fn documented_defaults_parse_to_default_config() {
        // The KEY_DOCS table is the user-facing contract: feeding every
        // documented default back in must reproduce the default config.
        let text: String = KEY_DOCS
            .iter()
            .map(|(k, d, _)| format!("{k} = {d}\n"))
            .collect();
        let cfg = CliConfig::parse(&text).unwrap();
        assert_eq!(cfg, CliConfig::default());
    }

    #[test]
    fn overrides_comments_and_spacing() {
        let cfg = CliConfig::parse(
            "# comment\n  noise_scale = 0.7  # trailing\n\nembedding=deterministic\nlatent_dim = 16\n",
        )
        .unwrap();
        assert_eq!(cfg.synthetic.noise_scale, 0.7);
        assert_eq!(cfg.embedding, EmbeddingMode::Deterministic);
        assert_eq!(cfg.latent_dim, 16);
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        assert!(matches!(
            CliConfig::parse("nope = 1\n"),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(
            CliConfig::parse("lr = 0.1\nlr = 0.2\n"),
            Err(ConfigError::DuplicateKey { .. })
        ));
        assert!(matches!(
            CliConfig::parse("just some text\n"),
            Err(ConfigError::Syntax { .. })
        ));
    }

    #[test]
    fn bad_values_name_the_key() {
        match CliConfig::parse("lr = fast\n") {
            Err(ConfigError::BadValue { key, .. }) => assert_eq!(key, "lr"),
            other => panic!("expected BadValue, got {other:?}"),
        }
        assert!(CliConfig::parse("au_regions = up,center\n").is_err());
        assert!(CliConfig::parse("embedding = magic\n").is_err());
    }

    #[test]
    fn derived_configs_share_geometry() {
        let cfg = CliConfig::parse("channels = 4\nscales = 14,7\nlatent_dim = 8\n").unwrap();
        let m = cfg.model_config();
        assert_eq!(m.channels, 4);
        assert_eq!(m.scales, vec![14, 7]);
        assert_eq!(m.latent_dim, 8);
        let a = cfg.ablate_config();
        assert_eq!(a.seeds.len(), 5);
        assert_eq!(a.stage1.epochs, 2);
        assert_eq!(a.stage2.epochs, 3);
    }
}
