//! Verification fixtures shared by the CLI and the acceptance suite: the
//! ABL finite-difference check, a composed graph exercising every
//! differentiable op, and the KL closed-form gradient check.

use crate::cvae;
use crate::loss::{abl_closed_form, abl_gradient, shift_clamped, LossConfig};
use crate::rng::Rng;
use crate::tensor::{grad_check, GradCheckReport, Graph, NodeId, Tensor, TensorError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblFdRow {
    pub alpha: f64,
    pub beta: f64,
    pub y: u8,
    pub gamma_pos: u32,
    pub gamma_neg: u32,
    pub shift_c: f64,
    pub rel_err_alpha: f64,
    pub rel_err_beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblFdReport {
    pub rows: Vec<AblFdRow>,
    pub max_rel_err: f64,
    pub step: f64,
}

fn fd_rel(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Analytic ABL gradients against central finite differences of the closed
/// form, over a grid that avoids the clamp boundary.
pub fn abl_fd_check(step: f64) -> Result<AblFdReport, crate::loss::LossError> {
    let shapes = [1.2, 2.0, 5.0, 10.0, 30.0];
    let mut rows = Vec::new();
    let mut max_rel = 0.0f64;
    for &a in &shapes {
        for &b in &shapes {
            for &gp in &[1u32, 2] {
                for &gn in &[1u32, 2, 4] {
                    for &c in &[0.0, 0.1, 0.2] {
                        for &y in &[true, false] {
                            let cfg = LossConfig {
                                gamma_pos: gp,
                                gamma_neg: gn,
                                shift_c: c,
                                ..LossConfig::defaults(1)
                            };
                            // Keep a margin so the ±step probes stay on one
                            // side of the clamp.
                            if !y
                                && (shift_clamped(a - 2.0 * step, b + 2.0 * step, c)
                                    || crate::loss::shifted_alpha(a, b, c) < 0.05)
                            {
                                continue;
                            }
                            let (da, db) = abl_gradient(a, b, y, &cfg)?;
                            let fa = (abl_closed_form(a + step, b, y, &cfg)?
                                - abl_closed_form(a - step, b, y, &cfg)?)
                                / (2.0 * step);
                            let fb = (abl_closed_form(a, b + step, y, &cfg)?
                                - abl_closed_form(a, b - step, y, &cfg)?)
                                / (2.0 * step);
                            let ra = fd_rel(da, fa);
                            let rb = fd_rel(db, fb);
                            max_rel = max_rel.max(ra).max(rb);
                            rows.push(AblFdRow {
                                alpha: a,
                                beta: b,
                                y: y as u8,
                                gamma_pos: gp,
                                gamma_neg: gn,
                                shift_c: c,
                                rel_err_alpha: ra,
                                rel_err_beta: rb,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(AblFdReport {
        rows,
        max_rel_err: max_rel,
        step,
    })
}

/// Build one scalar-loss graph that routes through every differentiable op.
///
/// Inputs are biased away from the LeakyReLU/ELU kinks so the central
/// finite differences of the checker stay valid.
pub fn op_suite_graph() -> Result<(Graph, NodeId), TensorError> {
    let mut rng = Rng::seed(0xD1CE);
    let mut g = Graph::new();
    let rand = |rng: &mut Rng, n: usize, lo: f64, hi: f64| -> Vec<f64> {
        (0..n).map(|_| rng.range(lo, hi)).collect()
    };

    // Image pathway: conv2d -> bias -> leaky -> depthwise -> elu ->
    // spatial gate -> pool.
    let x_img = g.input(Tensor::new(vec![2, 6, 6], rand(&mut rng, 72, 0.2, 1.0))?);
    let conv_w = g.param("conv.w", Tensor::new(vec![3, 2, 2, 2], rand(&mut rng, 24, 0.05, 0.4))?);
    let conv_b = g.param("conv.b", Tensor::new(vec![3], vec![0.45, 0.55, 0.65])?);
    let dw_w = g.param("dw.w", Tensor::new(vec![3, 3, 3], rand(&mut rng, 27, 0.05, 0.3))?);
    let sp_w = g.param("sp.w", Tensor::new(vec![4, 4], rand(&mut rng, 16, 0.3, 1.0))?);
    let c1 = g.conv2d(x_img, conv_w, 2, 1)?;
    let c1 = g.add_chan(c1, conv_b)?;
    let a1 = g.leaky_relu(c1, 0.2)?;
    let d1 = g.depthwise_conv2d(a1, dw_w, 1, 1)?;
    let e1 = g.elu(d1)?;
    let ms = g.mul_spatial(e1, sp_w)?;
    let pooled = g.global_avg_pool(ms)?;

    // Dense pathway: matmul (matrix and vector), softmax family, scalar maps.
    let mat_a = g.param("mat.a", Tensor::new(vec![4, 5], rand(&mut rng, 20, -0.5, 0.5))?);
    let mat_b = g.param("mat.b", Tensor::new(vec![5, 3], rand(&mut rng, 15, -0.5, 0.5))?);
    let vec_x = g.input(Tensor::vector(rand(&mut rng, 5, 0.2, 1.0)));
    let bias = g.param("bias", Tensor::vector(vec![0.31, -0.42, 0.53, 0.24]));
    let m1 = g.matmul(mat_a, mat_b)?;
    let sm = g.softmax(m1, 1)?;
    let lsm = g.log_softmax(m1, 1)?;
    let lsm_part = g.slice(lsm, 1, 0, 2)?;
    let mv = g.matmul(mat_a, vec_x)?;
    let mvb = g.add(mv, bias)?;
    let sig = g.sigmoid(mvb)?;
    let sp = g.softplus(mvb)?;
    let ex_in = g.mul_scalar(sig, 0.5)?;
    let ex = g.exp(ex_in)?;
    let ln_in = g.add_scalar(sp, 1.0)?;
    let ln = g.ln(ln_in)?;
    let rc_in = g.add_scalar(sig, 1.5)?;
    let rc = g.recip(rc_in)?;

    // Temporal pathway: pad -> depthwise 1-D conv -> row bias.
    let x_seq = g.input(Tensor::new(vec![4, 2], rand(&mut rng, 8, 0.2, 1.0))?);
    let tc_w = g.param("tc.w", Tensor::new(vec![2, 3], rand(&mut rng, 6, 0.05, 0.4))?);
    let tc_b = g.param("tc.b", Tensor::vector(vec![0.21, -0.11]));
    let padded = g.replicate_pad_1d(x_seq, 1)?;
    let tc = g.conv1d_depthwise(padded, tc_w)?;
    let tcb = g.add_row(tc, tc_b)?;

    // Evidential head: softplus evidence -> ABL with mixed labels.
    let cat = g.concat0(&[pooled, sig])?; // [3] ++ [4] = [7]
    let u = g.mean_all(tcb)?;
    let u_shift = g.add_scalar(u, 1.2)?;
    let scaled = g.scale_by(cat, u_shift)?;
    let e_pos_raw = g.slice(scaled, 0, 0, 3)?;
    let e_neg_raw = g.slice(scaled, 0, 3, 6)?;
    let e_pos = g.softplus(e_pos_raw)?;
    let e_neg = g.softplus(e_neg_raw)?;
    let alpha = g.add_scalar(e_pos, 1.0)?;
    let beta = g.add_scalar(e_neg, 1.0)?;
    let abl_cfg = LossConfig {
        gamma_pos: 1,
        gamma_neg: 2,
        shift_c: 0.1,
        ..LossConfig::defaults(3)
    };
    let abl = g.abl_loss(alpha, beta, &[true, false, true], &abl_cfg)?;

    // Reduce everything to one scalar.
    let l1 = g.sum_all(abl)?;
    let l2 = g.mean_all(lsm_part)?;
    let l3 = g.sum_all(ln)?;
    let l4 = g.sum_all(rc)?;
    let l5 = g.sum_all(ex)?;
    let l6 = g.sum_all(sm)?;
    let l7 = g.sum_all(tcb)?;
    let l2s = g.mul_scalar(l2, -0.5)?;
    let mut total = g.add(l1, l2s)?;
    total = g.add(total, l3)?;
    let l4s = g.mul_scalar(l4, 0.7)?;
    total = g.sub(total, l4s)?;
    total = g.add(total, l5)?;
    let l6r = g.reshape(l6, vec![])?;
    total = g.add(total, l6r)?;
    total = g.add(total, l7)?;
    Ok((g, total))
}

/// Finite-difference check of the full op suite.
pub fn op_suite_gradcheck() -> Result<GradCheckReport, TensorError> {
    let (mut g, loss) = op_suite_graph()?;
    grad_check(&mut g, loss)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlGradReport {
    pub max_abs_err_mu: f64,
    pub max_abs_err_sigma: f64,
}

/// Autodiff KL gradients against the closed form dKL/dμ = μ,
/// dKL/dσ = σ − 1/σ.
pub fn kl_gradient_check() -> Result<KlGradReport, TensorError> {
    let mu_vals = vec![0.8, -0.3, 0.0, 1.7];
    let sigma_vals = vec![0.5, 1.0, 1.9, 0.25];
    let mut g = Graph::new();
    let mu = g.param("mu", Tensor::vector(mu_vals.clone()));
    let sigma = g.param("sigma", Tensor::vector(sigma_vals.clone()));
    let mu2 = g.mul(mu, mu)?;
    let s2 = g.mul(sigma, sigma)?;
    let ln_s2 = g.ln(s2)?;
    let t = g.add(mu2, s2)?;
    let t = g.sub(t, ln_s2)?;
    let t = g.add_scalar(t, -1.0)?;
    let sum = g.sum_all(t)?;
    let kl = g.mul_scalar(sum, 0.5)?;
    let grads = g.backward(kl)?;
    let dmu = grads.get(mu).expect("mu gradient").data();
    let dsigma = grads.get(sigma).expect("sigma gradient").data();
    let mut err_mu = 0.0f64;
    let mut err_sigma = 0.0f64;
    for i in 0..mu_vals.len() {
        err_mu = err_mu.max((dmu[i] - mu_vals[i]).abs());
        err_sigma = err_sigma.max((dsigma[i] - (sigma_vals[i] - 1.0 / sigma_vals[i])).abs());
    }
    Ok(KlGradReport {
        max_abs_err_mu: err_mu,
        max_abs_err_sigma: err_sigma,
    })
}

/// Monte Carlo check that reparameterized samples center on μ.
pub fn reparameterization_mc_check(draws: usize) -> (f64, f64) {
    let post = cvae::GaussianPosterior {
        mu: vec![0.6, -1.1, 0.0],
        sigma: vec![0.8, 1.5, 0.3],
    };
    let mut rng = Rng::seed(0x3A11);
    let mut sums = vec![0.0; post.mu.len()];
    for _ in 0..draws {
        let eps: Vec<f64> = (0..post.mu.len()).map(|_| rng.normal()).collect();
        let z = cvae::reparameterize(&post, &eps);
        for (s, v) in sums.iter_mut().zip(z) {
            *s += v;
        }
    }
    let mut worst_dev = 0.0f64;
    let mut worst_band = f64::INFINITY;
    for i in 0..post.mu.len() {
        let mean = sums[i] / draws as f64;
        let band = 4.0 * post.sigma[i] / (draws as f64).sqrt();
        let dev = (mean - post.mu[i]).abs();
        if dev / band > worst_dev / worst_band {
            worst_dev = dev;
            worst_band = band;
        }
    }
    (worst_dev, worst_band)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abl_fd_grid_is_tight() {
        let report = abl_fd_check(1e-5).unwrap();
        assert!(report.max_rel_err <= 1e-6, "{}", report.max_rel_err);
        assert!(report.rows.len() > 100);
    }

    #[test]
    fn op_suite_has_margin_from_kinks() {
        // The fixture must stay away from non-smooth points so the central
        // differences in the checker are trustworthy.
        let (g, loss) = op_suite_graph().unwrap();
        assert_eq!(g.value(loss).len(), 1);
        assert!(g.value(loss).item().is_finite());
    }

    #[test]
    fn op_suite_gradcheck_passes_tightly() {
        let report = op_suite_gradcheck().unwrap();
        assert!(
            report.max_rel_err <= 1e-5,
            "op suite max rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn kl_gradients_exact() {
        let r = kl_gradient_check().unwrap();
        assert!(r.max_abs_err_mu < 1e-12 && r.max_abs_err_sigma < 1e-12);
    }

    #[test]
    fn reparameterization_mc_inside_band() {
        let (dev, band) = reparameterization_mc_check(100_000);
        assert!(dev < band, "{dev} vs {band}");
    }
}
