//! Multi-seed ablation grid over {embedding} × {loss}.

use super::eval::evaluate;
use super::model::{EmbeddingMode, Model, ModelConfig};
use super::synth::{Dataset, Split};
use super::train::{train_stage1, train_stage2, TrainConfig};
use super::HarnessError;
use crate::loss::LossConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct AblateConfig {
    pub seeds: Vec<u64>,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateCell {
    pub name: String,
    pub embedding: EmbeddingMode,
    pub loss: String,
    pub f1: Vec<f64>,
    pub mean_f1: f64,
    pub std_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub per_seed_delta: Vec<f64>,
    pub mean_delta: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateReport {
    pub schema: String,
    pub seeds: Vec<u64>,
    pub cells: Vec<AblateCell>,
    pub comparisons: Vec<Comparison>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() < 2 {
        0.0
    } else {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    (mean, var.sqrt())
}

/// Train 2×2 cells {deterministic, probabilistic} × {plain evidential CE,
/// asymmetric Beta loss} with paired seeds and report per-cell F1 plus the
/// two single-factor comparisons.
///
/// Runs are independent and individually deterministic, so they are sharded
/// across threads; the report does not depend on scheduling.
pub fn run_ablation(data: &Dataset, cfg: &AblateConfig) -> Result<AblateReport, HarnessError> {
    let cells_spec: [(&str, EmbeddingMode, bool); 4] = [
        ("baseline", EmbeddingMode::Deterministic, false),
        ("cvafe", EmbeddingMode::Cvae, false),
        ("abl", EmbeddingMode::Deterministic, true),
        ("full", EmbeddingMode::Cvae, true),
    ];
    let run_one = |seed: u64, embedding: EmbeddingMode, use_abl: bool| -> Result<f64, HarnessError> {
        let model_cfg = ModelConfig {
            embedding,
            ..cfg.model.clone()
        };
        let loss_cfg = if use_abl {
            cfg.loss.clone()
        } else {
            LossConfig {
                gamma_pos: 0,
                gamma_neg: 0,
                shift_c: 0.0,
                ..cfg.loss.clone()
            }
        };
        let mut model = Model::init(model_cfg, loss_cfg, seed);
        let s1 = TrainConfig { seed, ..cfg.stage1.clone() };
        let s2 = TrainConfig { seed, ..cfg.stage2.clone() };
        train_stage1(&mut model, data, &s1)?;
        train_stage2(&mut model, data, &s2)?;
        let report = evaluate(&model, data, Split::Eval)?;
        Ok(report.avg_f1)
    };

    let jobs: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|si| (0..4).map(move |ci| (si, ci)))
        .collect();
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<Result<f64, HarnessError>>>> =
        jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if j >= jobs.len() {
                    break;
                }
                let (si, ci) = jobs[j];
                let (_, embedding, use_abl) = cells_spec[ci];
                let out = run_one(cfg.seeds[si], embedding, use_abl);
                *results[j].lock().expect("result slot") = Some(out);
            });
        }
    });
    let mut f1s: Vec<Vec<f64>> = vec![Vec::new(); 4];
    for (j, slot) in results.into_iter().enumerate() {
        let (_, ci) = jobs[j];
        let value = slot
            .into_inner()
            .expect("result slot")
            .expect("every job ran")?;
        f1s[ci].push(value);
    }
    let cells: Vec<AblateCell> = cells_spec
        .iter()
        .zip(&f1s)
        .map(|(&(name, embedding, use_abl), f1)| {
            let (mean_f1, std_f1) = mean_std(f1);
            AblateCell {
                name: name.to_string(),
                embedding,
                loss: if use_abl { "abl" } else { "ebce" }.to_string(),
                f1: f1.clone(),
                mean_f1,
                std_f1,
            }
        })
        .collect();
    // Single-factor comparisons against the full model.
    let deltas_loss: Vec<f64> = f1s[3].iter().zip(&f1s[1]).map(|(a, b)| a - b).collect();
    let deltas_embed: Vec<f64> = f1s[3].iter().zip(&f1s[2]).map(|(a, b)| a - b).collect();
    let comparisons = vec![
        {
            let (mean_delta, _) = mean_std(&deltas_loss);
            Comparison {
                name: "abl_vs_ebce".to_string(),
                per_seed_delta: deltas_loss,
                mean_delta,
                positive: mean_delta > 0.0,
            }
        },
        {
            let (mean_delta, _) = mean_std(&deltas_embed);
            Comparison {
                name: "cvae_vs_deterministic".to_string(),
                per_seed_delta: deltas_embed,
                mean_delta,
                positive: mean_delta > 0.0,
            }
        },
    ];
    Ok(AblateReport {
        schema: "ablate-v1".to_string(),
        seeds: cfg.seeds.clone(),
        cells,
        comparisons,
    })
}
