//! Deterministic text renderings of the report structures. Every report is
//! written twice: the human table at the requested path and a JSON mirror at
//! `<path>.json`.

use betau_core::harness::{AblateReport, EvalReport, StrataReport, TrainLog};
use betau_core::loss::OracleReport;
use betau_core::tensor::GradCheckReport;
use betau_core::verify::{AblFdReport, KlGradReport};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

pub fn write_pair<T: Serialize>(path: &Path, text: &str, value: &T) -> std::io::Result<()> {
    std::fs::write(path, text)?;
    let mut json = serde_json::to_string(value).expect("reports serialize");
    json.push('\n');
    let mirror = mirror_path(path);
    std::fs::write(mirror, json)?;
    Ok(())
}

pub fn mirror_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}

pub fn render_eval(r: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "eval report (schema {})", r.schema);
    let _ = writeln!(out, "frames: {}   mean uncertainty: {:.6}", r.num_frames, r.mean_uncertainty);
    let _ = writeln!(out, "au    tp    fp    fn    tn  precision  recall      f1");
    for m in &r.per_au {
        let _ = writeln!(
            out,
            "{:>2} {:>5} {:>5} {:>5} {:>5}   {:.6}  {:.6}  {:.6}",
            m.au, m.tp, m.fp, m.false_neg, m.tn, m.precision, m.recall, m.f1
        );
    }
    let _ = writeln!(out, "average F1: {:.6}", r.avg_f1);
    out
}

pub fn render_oracle(r: &OracleReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "oracle report (schema {})", r.schema);
    let _ = writeln!(
        out,
        "alpha     beta     y g+ g-    c      closed_form         quadrature      rel_err      summed_form  summed_rel_err"
    );
    for row in &r.rows {
        let _ = writeln!(
            out,
            "{:>8.3} {:>8.3} {} {:>2} {:>2} {:>4.2} {:>16.9e} {:>18.9e} {:>12.3e} {:>16.9e} {:>14.3e}",
            row.alpha,
            row.beta,
            row.y,
            row.gamma_pos,
            row.gamma_neg,
            row.shift_c,
            row.closed_form,
            row.oracle,
            row.rel_err,
            row.summed_form,
            row.summed_rel_err
        );
    }
    let _ = writeln!(out, "max relative error (shipped form): {:.3e}", r.max_rel_err);
    let _ = writeln!(
        out,
        "max relative error (summed-coefficient variant, gamma >= 2): {:.3e}",
        r.max_summed_rel_err_gamma_ge2
    );
    let _ = writeln!(out, "tolerance: {:.3e}   pass: {}", r.tolerance, r.pass);
    out
}

#[derive(Serialize)]
pub struct GradCheckBundle {
    pub schema: String,
    pub abl: AblFdReport,
    pub op_suite_max_rel_err: f64,
    pub op_suite_entries: Vec<(String, f64)>,
    pub kl: KlGradReport,
    pub abl_tolerance: f64,
    pub op_suite_tolerance: f64,
    pub kl_tolerance: f64,
    pub pass: bool,
}

impl GradCheckBundle {
    pub fn new(abl: AblFdReport, ops: &GradCheckReport, kl: KlGradReport, abl_tol: f64) -> Self {
        let op_tol = 1e-5;
        let kl_tol = 1e-8;
        let pass = abl.max_rel_err <= abl_tol
            && ops.max_rel_err <= op_tol
            && kl.max_abs_err_mu <= kl_tol
            && kl.max_abs_err_sigma <= kl_tol;
        GradCheckBundle {
            schema: "gradcheck-v1".to_string(),
            abl,
            op_suite_max_rel_err: ops.max_rel_err,
            op_suite_entries: ops
                .entries
                .iter()
                .map(|e| (e.name.clone(), e.max_rel_err))
                .collect(),
            kl,
            abl_tolerance: abl_tol,
            op_suite_tolerance: op_tol,
            kl_tolerance: kl_tol,
            pass,
        }
    }
}

pub fn render_gradcheck(b: &GradCheckBundle) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "gradient checks (schema {})", b.schema);
    let _ = writeln!(
        out,
        "analytic ABL gradients vs central differences ({} grid points, step {:.1e}): max rel err {:.3e} (tol {:.1e})",
        b.abl.rows.len(),
        b.abl.step,
        b.abl.max_rel_err,
        b.abl_tolerance
    );
    let _ = writeln!(
        out,
        "autodiff op suite vs central differences: max rel err {:.3e} (tol {:.1e})",
        b.op_suite_max_rel_err, b.op_suite_tolerance
    );
    for (name, err) in &b.op_suite_entries {
        let _ = writeln!(out, "  {name:<10} {err:.3e}");
    }
    let _ = writeln!(
        out,
        "KL closed-form gradients: max |err| mu {:.3e}, sigma {:.3e} (tol {:.1e})",
        b.kl.max_abs_err_mu, b.kl.max_abs_err_sigma, b.kl_tolerance
    );
    let _ = writeln!(out, "pass: {}", b.pass);
    out
}

pub fn render_strata(r: &StrataReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "uncertainty strata (schema {})", r.schema);
    let _ = writeln!(out, "bin      u_lo      u_hi  frames  error_rate  occluded  occl_rate");
    for s in &r.bins {
        let _ = writeln!(
            out,
            "{:>3}  {:.6}  {:.6} {:>7}    {:.6} {:>9}   {:.6}",
            s.index, s.u_lo, s.u_hi, s.frames, s.error_rate, s.occluded, s.occluded_rate
        );
    }
    let _ = writeln!(out, "error rate monotone non-decreasing: {}", r.monotone_non_decreasing);
    if r.degenerate {
        let _ = writeln!(out, "warning: uncertainties are constant; the quantile split is arbitrary");
    }
    let _ = writeln!(
        out,
        "occluded base rate: {:.6}   high-bin occlusion ratio: {:.3}",
        r.occluded_base_rate, r.high_bin_occlusion_ratio
    );
    out
}

pub fn render_ablate(r: &AblateReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ablation report (schema {})", r.schema);
    let _ = writeln!(out, "seeds: {:?}", r.seeds);
    let _ = writeln!(out, "cell        embedding       loss    mean_f1    std_f1  per-seed");
    for c in &r.cells {
        let per: Vec<String> = c.f1.iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(
            out,
            "{:<10} {:<14?} {:>6}   {:.6}  {:.6}  [{}]",
            c.name,
            c.embedding,
            c.loss,
            c.mean_f1,
            c.std_f1,
            per.join(", ")
        );
    }
    for cmp in &r.comparisons {
        let per: Vec<String> = cmp.per_seed_delta.iter().map(|v| format!("{v:+.4}")).collect();
        let _ = writeln!(
            out,
            "{:<24} mean delta {:+.6} positive: {}  [{}]",
            cmp.name,
            cmp.mean_delta,
            cmp.positive,
            per.join(", ")
        );
    }
    out
}

pub fn render_train_log(l: &TrainLog) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "training log (schema {}, stage {})", l.schema, l.stage);
    let _ = writeln!(out, "epoch        loss         cls          kl        l_ab       l_sub      mean_u          lr");
    for e in &l.epochs {
        let _ = writeln!(
            out,
            "{:>5}  {:>10.6}  {:>10.6}  {:>10.6}  {:>10.6}  {:>10.6}  {:>10.6}  {:>10.4e}",
            e.epoch, e.loss, e.cls, e.kl, e.l_ab, e.l_sub, e.mean_uncertainty, e.lr
        );
    }
    out
}
