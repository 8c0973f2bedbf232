//! Command-line interface: data generation, two-stage training, evaluation,
//! oracle verification, gradient checks, uncertainty stratification, and the
//! ablation grid.

mod reports;

use betau_core::config::CliConfig;
use betau_core::harness::{
    evaluate, generate_dataset, run_ablation, stratify_uncertainty, train_stage1, train_stage2,
    Dataset, Model, Split,
};
use betau_core::loss::{default_oracle_grid, verify_oracle_grid};
use betau_core::verify::{abl_fd_check, kl_gradient_check, op_suite_gradcheck};
use clap::{Parser, Subcommand};
use reports::{
    render_ablate, render_eval, render_gradcheck, render_oracle, render_strata, render_train_log,
    write_pair, GradCheckBundle,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "betau", version, about = "Beta-evidential multi-label AU classification at desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (labels + metadata; features regenerate
    /// from the seed).
    GenData {
        /// key=value config file; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// output JSONL path
        #[arg(long)]
        out: PathBuf,
        /// override the config seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train stage 1 (embedding) or stage 2 (joint).
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// 1 = embedding stage, 2 = joint stage
        #[arg(long)]
        stage: u8,
        /// initial model (required for stage 2)
        #[arg(long)]
        init: Option<PathBuf>,
        /// output model path
        #[arg(long)]
        out: PathBuf,
        /// training log path
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a model on the held-out split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Verify the closed-form loss against the quadrature oracle.
    VerifyOracle {
        /// grid name (only "default" is defined)
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        report: PathBuf,
    },
    /// Analytic-gradient checks: ABL, the autodiff op suite, and the KL
    /// closed form.
    GradCheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Split held-out frames into uncertainty bins and report error rates.
    Stratify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 3)]
        bins: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Multi-seed ablation grid {embedding} x {loss}.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
}

struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl std::fmt::Display) -> Self {
        CliError {
            kind,
            message: message.to_string(),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn load_config(path: &Option<PathBuf>) -> Result<CliConfig> {
    match path {
        None => Ok(CliConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?;
            CliConfig::parse(&text).map_err(|e| CliError::new("config", e))
        }
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    Dataset::from_jsonl(&text).map_err(|e| CliError::new("dataset", e))
}

fn load_model(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    Model::from_text(&text).map_err(|e| CliError::new("model", e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn check_geometry(cfg: &CliConfig, data: &Dataset) -> Result<()> {
    if cfg.synthetic.num_aus != data.cfg.num_aus
        || cfg.synthetic.au_regions != data.cfg.au_regions
        || cfg.synthetic.scales != data.cfg.scales
        || cfg.synthetic.channels != data.cfg.channels
    {
        return Err(CliError::new(
            "config",
            "config geometry (num_aus/au_regions/scales/channels) disagrees with the dataset header",
        ));
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { config, out, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.synthetic.seed = s;
            }
            let data = generate_dataset(&cfg.synthetic).map_err(|e| CliError::new("gen-data", e))?;
            write_file(&out, &data.to_jsonl())?;
            println!(
                "wrote {} ({} sequences x {} frames, seed {})",
                out.display(),
                cfg.synthetic.total_sequences(),
                cfg.synthetic.frames_per_seq,
                cfg.synthetic.seed
            );
            Ok(())
        }
        Cmd::Train { data, config, stage, init, out, log } => {
            let cfg = load_config(&config)?;
            let dataset = load_dataset(&data)?;
            check_geometry(&cfg, &dataset)?;
            let train_cfg = cfg.train_config(stage);
            let mut model = match (&init, stage) {
                (Some(p), _) => load_model(p)?,
                (None, 1) => Model::init(cfg.model_config(), cfg.loss_config(), cfg.train_seed),
                (None, 2) => {
                    return Err(CliError::new(
                        "train",
                        "stage 2 requires --init with the stage-1 model",
                    ))
                }
                (None, s) => return Err(CliError::new("train", format!("unknown stage {s}"))),
            };
            let train_log = match stage {
                1 => train_stage1(&mut model, &dataset, &train_cfg),
                2 => train_stage2(&mut model, &dataset, &train_cfg),
                s => return Err(CliError::new("train", format!("unknown stage {s}"))),
            }
            .map_err(|e| CliError::new("train", e))?;
            write_file(&out, &model.to_text())?;
            if let Some(log_path) = log {
                write_pair(&log_path, &render_train_log(&train_log), &train_log)
                    .map_err(|e| CliError::new("io", e))?;
            }
            for e in &train_log.epochs {
                println!(
                    "epoch {}: loss {:.6} (cls {:.6} kl {:.6} l_ab {:.6} l_sub {:.6} mean_u {:.4})",
                    e.epoch, e.loss, e.cls, e.kl, e.l_ab, e.l_sub, e.mean_uncertainty
                );
            }
            println!("wrote model {}", out.display());
            Ok(())
        }
        Cmd::Eval { data, model, report } => {
            let dataset = load_dataset(&data)?;
            let model = load_model(&model)?;
            let r = evaluate(&model, &dataset, Split::Eval).map_err(|e| CliError::new("eval", e))?;
            write_pair(&report, &render_eval(&r), &r).map_err(|e| CliError::new("io", e))?;
            println!("average F1: {:.6} over {} frames", r.avg_f1, r.num_frames);
            println!("wrote report {}", report.display());
            Ok(())
        }
        Cmd::VerifyOracle { grid, tol, report } => {
            if grid != "default" {
                return Err(CliError::new("verify-oracle", format!("unknown grid '{grid}'")));
            }
            let spec = betau_core::loss::oracle_quadrature_spec();
            let r = verify_oracle_grid(&default_oracle_grid(), tol, &spec)
                .map_err(|e| CliError::new("verify-oracle", e))?;
            write_pair(&report, &render_oracle(&r), &r).map_err(|e| CliError::new("io", e))?;
            println!(
                "oracle grid: {} cells, max rel err {:.3e} (tol {:.1e}), summed-variant max rel err at gamma>=2: {:.3e}",
                r.rows.len(),
                r.max_rel_err,
                tol,
                r.max_summed_rel_err_gamma_ge2
            );
            println!("wrote report {}", report.display());
            if !r.pass {
                return Err(CliError::new(
                    "verify-oracle",
                    format!("max rel err {:.3e} exceeds tolerance {tol:.1e}", r.max_rel_err),
                ));
            }
            Ok(())
        }
        Cmd::GradCheck { tol, report } => {
            let abl = abl_fd_check(1e-5).map_err(|e| CliError::new("grad-check", e))?;
            let ops = op_suite_gradcheck().map_err(|e| CliError::new("grad-check", e))?;
            let kl = kl_gradient_check().map_err(|e| CliError::new("grad-check", e))?;
            let bundle = GradCheckBundle::new(abl, &ops, kl, tol);
            let text = render_gradcheck(&bundle);
            print!("{text}");
            if let Some(path) = report {
                write_pair(&path, &text, &bundle).map_err(|e| CliError::new("io", e))?;
                println!("wrote report {}", path.display());
            }
            if !bundle.pass {
                return Err(CliError::new("grad-check", "a gradient check exceeded its tolerance"));
            }
            Ok(())
        }
        Cmd::Stratify { data, model, bins, report } => {
            let dataset = load_dataset(&data)?;
            let model = load_model(&model)?;
            let eval = evaluate(&model, &dataset, Split::Eval).map_err(|e| CliError::new("stratify", e))?;
            let r = stratify_uncertainty(&eval, bins).map_err(|e| CliError::new("stratify", e))?;
            write_pair(&report, &render_strata(&r), &r).map_err(|e| CliError::new("io", e))?;
            if r.degenerate {
                println!("warning: constant uncertainty; tertiles are arbitrary");
            }
            println!(
                "monotone: {}  high-bin occlusion ratio: {:.3}",
                r.monotone_non_decreasing, r.high_bin_occlusion_ratio
            );
            println!("wrote report {}", report.display());
            Ok(())
        }
        Cmd::Ablate { data, config, report } => {
            let cfg = load_config(&config)?;
            let dataset = load_dataset(&data)?;
            check_geometry(&cfg, &dataset)?;
            let r = run_ablation(&dataset, &cfg.ablate_config()).map_err(|e| CliError::new("ablate", e))?;
            write_pair(&report, &render_ablate(&r), &r).map_err(|e| CliError::new("io", e))?;
            for c in &r.cells {
                println!("{}: mean F1 {:.4} +/- {:.4}", c.name, c.mean_f1, c.std_f1);
            }
            for cmp in &r.comparisons {
                println!("{}: mean delta {:+.4} (positive: {})", cmp.name, cmp.mean_delta, cmp.positive);
            }
            println!("wrote report {}", report.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // One machine-parseable line on stderr.
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.kind, "message": e.message })
            );
            ExitCode::FAILURE
        }
    }
}
