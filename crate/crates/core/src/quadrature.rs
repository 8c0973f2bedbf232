//! Adaptive Gauss–Kronrod quadrature and expectations under a Beta
//! distribution. This is the numerical oracle the closed-form evidential
//! losses are verified against, so it is deliberately independent of the
//! digamma-based formulas.

use crate::special::{beta_log_pdf_c, SpecialError};
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("quadrature did not converge: estimate {estimate}, error estimate {err_estimate}, panels {panels}")]
    NonConvergence {
        estimate: f64,
        err_estimate: f64,
        panels: usize,
    },
    #[error("integrand returned a non-finite value at x = {x}")]
    NonFinite { x: f64 },
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error("invalid tolerance: abs_tol and rel_tol must be > 0")]
    BadSpec,
}

/// Tolerances for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            abs_tol: 1e-13,
            rel_tol: 1e-10,
            max_subdivisions: 20_000,
        }
    }
}

// 15-point Kronrod abscissae on [-1, 1] (positive half; symmetric).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

// Kronrod weights matching XGK.
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// 7-point Gauss weights for the embedded rule (nodes XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

/// One Gauss–Kronrod 15(7) panel. Returns (kronrod, |kronrod - gauss|).
fn gk15<F: FnMut(f64) -> Result<f64, QuadratureError>>(
    f: &mut F,
    a: f64,
    b: f64,
) -> Result<(f64, f64), QuadratureError> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut fv = [0.0f64; 15];
    for (i, &x) in XGK.iter().enumerate() {
        if i == 7 {
            fv[7] = f(c)?;
        } else {
            fv[i] = f(c - h * x)?;
            fv[14 - i] = f(c + h * x)?;
        }
    }
    for (i, v) in fv.iter().enumerate() {
        if !v.is_finite() {
            let x = if i < 7 {
                c - h * XGK[i]
            } else if i == 7 {
                c
            } else {
                c + h * XGK[14 - i]
            };
            return Err(QuadratureError::NonFinite { x });
        }
    }
    let mut resk = WGK[7] * fv[7];
    let mut resg = WG[3] * fv[7];
    for i in 0..7 {
        resk += WGK[i] * (fv[i] + fv[14 - i]);
    }
    for j in 0..3 {
        let i = 2 * j + 1;
        resg += WG[j] * (fv[i] + fv[14 - i]);
    }
    Ok((resk * h, (resk - resg).abs() * h.abs()))
}

#[derive(Debug)]
struct Panel {
    err: f64,
    lo: f64,
    hi: f64,
    val: f64,
    splittable: bool,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err && self.lo == other.lo
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Worst error first; deterministic tie-break on position.
        self.err
            .total_cmp(&other.err)
            .then(other.lo.total_cmp(&self.lo))
            .then(self.splittable.cmp(&other.splittable))
    }
}

/// Globally adaptive integral of `f` over [a, b].
///
/// Splits the worst panel until the summed error estimate meets the
/// tolerance. `seeds` are optional interior breakpoints that force initial
/// panels around known features (e.g. a concentrated density).
pub fn adaptive_integral_seeded<F: FnMut(f64) -> Result<f64, QuadratureError>>(
    f: &mut F,
    a: f64,
    b: f64,
    seeds: &[f64],
    spec: &QuadratureSpec,
) -> Result<f64, QuadratureError> {
    if !(spec.abs_tol > 0.0 && spec.rel_tol > 0.0) {
        return Err(QuadratureError::BadSpec);
    }
    let min_width = 1e-15 * (b - a).abs();
    let mut cuts: Vec<f64> = vec![a];
    let mut sorted = seeds.to_vec();
    sorted.sort_by(f64::total_cmp);
    for s in sorted {
        if s > *cuts.last().unwrap() + min_width && s < b - min_width {
            cuts.push(s);
        }
    }
    cuts.push(b);

    let mut heap: BinaryHeap<Panel> = BinaryHeap::new();
    let mut total = 0.0;
    let mut err_total = 0.0;
    for w in cuts.windows(2) {
        let (val, err) = gk15(f, w[0], w[1])?;
        total += val;
        err_total += err;
        heap.push(Panel {
            err,
            lo: w[0],
            hi: w[1],
            val,
            splittable: (w[1] - w[0]).abs() > min_width,
        });
    }

    let mut splits = 0usize;
    loop {
        if err_total <= spec.abs_tol.max(spec.rel_tol * total.abs()) {
            break;
        }
        // Nothing left worth splitting: accept what we have if the remaining
        // error is pure round-off, otherwise report non-convergence.
        let worst_splittable = heap.iter().any(|p| p.splittable && p.err > 0.0);
        if !worst_splittable || splits >= spec.max_subdivisions {
            let est = resummed(&mut heap);
            if err_total <= spec.abs_tol.max(spec.rel_tol * est.abs()) {
                return Ok(est);
            }
            return Err(QuadratureError::NonConvergence {
                estimate: est,
                err_estimate: err_total,
                panels: splits + 1,
            });
        }
        // Pop until a splittable panel surfaces, keeping the rest aside.
        let mut parked = Vec::new();
        let panel = loop {
            let p = heap.pop().expect("heap non-empty while error remains");
            if p.splittable {
                break p;
            }
            parked.push(p);
        };
        heap.extend(parked);
        let mid = 0.5 * (panel.lo + panel.hi);
        let (lv, le) = gk15(f, panel.lo, mid)?;
        let (rv, re) = gk15(f, mid, panel.hi)?;
        total += lv + rv - panel.val;
        err_total += le + re - panel.err;
        heap.push(Panel {
            err: le,
            lo: panel.lo,
            hi: mid,
            val: lv,
            splittable: (mid - panel.lo).abs() > min_width,
        });
        heap.push(Panel {
            err: re,
            lo: mid,
            hi: panel.hi,
            val: rv,
            splittable: (panel.hi - mid).abs() > min_width,
        });
        splits += 1;
    }
    Ok(resummed(&mut heap))
}

/// Final pass: sum panel values in position order so the result does not
/// depend on heap internals.
fn resummed(heap: &mut BinaryHeap<Panel>) -> f64 {
    let mut panels: Vec<Panel> = std::mem::take(heap).into_vec();
    panels.sort_by(|x, y| x.lo.total_cmp(&y.lo));
    let total = panels.iter().map(|p| p.val).sum();
    heap.extend(panels);
    total
}

/// Adaptive integral of `f` over [a, b] without seed points.
pub fn adaptive_integral<F: FnMut(f64) -> Result<f64, QuadratureError>>(
    f: &mut F,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<f64, QuadratureError> {
    adaptive_integral_seeded(f, a, b, &[], spec)
}

fn endpoint_power(shape: f64) -> i32 {
    if shape >= 1.0 {
        1
    } else {
        ((2.0 / shape).ceil() as i32).clamp(2, 64)
    }
}

/// E[f(p)] for p ~ Beta(alpha, beta).
///
/// See [`quadrature_expectation_c`]; the integrand here only sees `p`.
pub fn quadrature_expectation<F: Fn(f64) -> f64>(
    f: F,
    alpha: f64,
    beta: f64,
    spec: &QuadratureSpec,
) -> Result<f64, QuadratureError> {
    quadrature_expectation_c(|p, _q| f(p), alpha, beta, spec)
}

/// E[f(p, 1-p)] for p ~ Beta(alpha, beta), with the complement of `p`
/// passed exactly.
///
/// The interval splits at 1/2 and each half is integrated in transformed
/// coordinates `p = u^k` (left) / `1-p = v^k` (right) when the corresponding
/// shape parameter is below 1, which removes the algebraic endpoint
/// singularity of the density. Near the right endpoint `p` rounds to 1 in
/// f64 while `1-p = v^k` stays exact, so integrands that need `log(1-p)`
/// must take the complement from the second argument. Panels are seeded
/// around the distribution mean so concentrated densities are never missed.
pub fn quadrature_expectation_c<F: Fn(f64, f64) -> f64>(
    f: F,
    alpha: f64,
    beta: f64,
    spec: &QuadratureSpec,
) -> Result<f64, QuadratureError> {
    if !(alpha > 0.0) {
        return Err(SpecialError::Domain { func: "quadrature_expectation (alpha)", x: alpha }.into());
    }
    if !(beta > 0.0) {
        return Err(SpecialError::Domain { func: "quadrature_expectation (beta)", x: beta }.into());
    }
    let g = |p: f64, q: f64| -> Result<f64, QuadratureError> {
        let lp = beta_log_pdf_c(p, q, alpha, beta)?;
        if lp == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        let w = lp.exp();
        if w == 0.0 {
            return Ok(0.0);
        }
        Ok(f(p, q) * w)
    };

    // Landmarks around the bulk of the mass.
    let s = alpha + beta;
    let mean = alpha / s;
    let sd = (alpha * beta / (s * s * (s + 1.0))).sqrt();
    let mut marks = vec![0.25, 0.75];
    for k in [-30.0, -8.0, -2.0, 0.0, 2.0, 8.0, 30.0] {
        let p = mean + k * sd;
        if p > 1e-12 && p < 1.0 - 1e-12 {
            marks.push(p);
        }
    }

    let half_spec = QuadratureSpec {
        abs_tol: 0.5 * spec.abs_tol,
        rel_tol: spec.rel_tol,
        max_subdivisions: spec.max_subdivisions,
    };

    // Left half (0, 1/2]: substitute p = u^k.
    let kl = endpoint_power(alpha);
    let left_seeds: Vec<f64> = marks
        .iter()
        .filter(|&&p| p < 0.5)
        .map(|&p| p.powf(1.0 / kl as f64))
        .collect();
    let left = {
        let kf = kl as f64;
        let hi = 0.5f64.powf(1.0 / kf);
        adaptive_integral_seeded(
            &mut |u| {
                if u <= 0.0 {
                    return Ok(0.0);
                }
                let p = if kl == 1 { u } else { u.powi(kl) };
                if p <= 0.0 {
                    return Ok(0.0);
                }
                if kl == 1 {
                    g(p, 1.0 - p)
                } else {
                    Ok(kf * u.powi(kl - 1) * g(p, 1.0 - p)?)
                }
            },
            0.0,
            hi,
            &left_seeds,
            &half_spec,
        )?
    };

    // Right half [1/2, 1): substitute 1 - p = v^k. The complement v^k is the
    // exact coordinate; p = 1 - v^k may round to 1.
    let kr = endpoint_power(beta);
    let right_seeds: Vec<f64> = marks
        .iter()
        .filter(|&&p| p > 0.5)
        .map(|&p| (1.0 - p).powf(1.0 / kr as f64))
        .collect();
    let right = {
        let kf = kr as f64;
        let hi = 0.5f64.powf(1.0 / kf);
        adaptive_integral_seeded(
            &mut |v| {
                if v <= 0.0 {
                    return Ok(0.0);
                }
                let q = if kr == 1 { v } else { v.powi(kr) };
                if q <= 0.0 {
                    return Ok(0.0);
                }
                let p = 1.0 - q;
                if kr == 1 {
                    g(p, q)
                } else {
                    Ok(kf * v.powi(kr - 1) * g(p, q)?)
                }
            },
            0.0,
            hi,
            &right_seeds,
            &half_spec,
        )?
    };

    Ok(left + right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::digamma;

    #[test]
    fn kronrod_rule_is_exact_for_high_degree_polynomials() {
        // A single 15-point Kronrod panel integrates degree-22 polynomials
        // exactly; this pins the hard-coded node/weight table.
        for deg in [13usize, 20, 22] {
            let mut f = |x: f64| Ok(x.powi(deg as i32));
            let (got, _) = gk15(&mut f, 0.0, 1.0).unwrap();
            let want = 1.0 / (deg as f64 + 1.0);
            assert!(
                (got - want).abs() < 1e-14,
                "deg {deg}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn adaptive_matches_analytic_exponential() {
        let spec = QuadratureSpec::default();
        let got = adaptive_integral(&mut |x| Ok(x.exp()), 0.0, 1.0, &spec).unwrap();
        assert!((got - (std::f64::consts::E - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn beta_density_normalizes() {
        let spec = QuadratureSpec {
            abs_tol: 1e-11,
            rel_tol: 1e-11,
            max_subdivisions: 20_000,
        };
        for (a, b) in [
            (1.0, 1.0),
            (2.0, 3.0),
            (0.5, 0.5),
            (0.5, 4.0),
            (10.0, 0.7),
            (50.0, 50.0),
        ] {
            let one = quadrature_expectation(|_| 1.0, a, b, &spec).unwrap();
            assert!((one - 1.0).abs() < 1e-9, "Beta({a},{b}) mass {one}");
        }
    }

    #[test]
    fn beta_mean_matches_closed_form() {
        let spec = QuadratureSpec::default();
        let got = quadrature_expectation(|p| p, 2.0, 3.0, &spec).unwrap();
        assert!((got - 0.4).abs() < 1e-10);
    }

    #[test]
    fn neg_log_expectation_matches_digamma_identity() {
        // E[-log p] under Beta(a,b) = ψ(a+b) - ψ(a)
        let spec = QuadratureSpec::default();
        for a in [0.5, 1.0, 2.0, 5.0, 10.0] {
            for b in [0.5, 1.0, 2.0, 5.0, 10.0] {
                let got = quadrature_expectation(|p| -p.ln(), a, b, &spec).unwrap();
                let want = digamma(a + b).unwrap() - digamma(a).unwrap();
                assert!(
                    (got - want).abs() <= 1e-8 * want.abs().max(1.0),
                    "a={a} b={b}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn beta22_neg_log_spot_value() {
        let spec = QuadratureSpec::default();
        let got = quadrature_expectation(|p| -p.ln(), 2.0, 2.0, &spec).unwrap();
        assert!((got - 5.0 / 6.0).abs() < 1e-10);
    }

    #[test]
    fn right_endpoint_complement_identity() {
        // E[-log(1-p)] under Beta(a,b) = ψ(a+b) - ψ(b); needs the exact
        // complement near p = 1.
        let spec = QuadratureSpec::default();
        for (a, b) in [(1.0, 1.0), (5.0, 0.5), (50.0, 2.0)] {
            let got = quadrature_expectation_c(|_p, q| -q.ln(), a, b, &spec).unwrap();
            let want = digamma(a + b).unwrap() - digamma(b).unwrap();
            assert!(
                (got - want).abs() <= 1e-8 * want.abs().max(1.0),
                "a={a} b={b}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn concentrated_mass_is_found() {
        // Beta(1e5, 1): nearly all mass within 1e-4 of p = 1.
        let spec = QuadratureSpec::default();
        let got = quadrature_expectation(|p| p, 1e5, 1.0, &spec).unwrap();
        let want = 1e5 / (1e5 + 1.0);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn exhausted_subdivisions_reports_best_estimate() {
        let spec = QuadratureSpec {
            abs_tol: 1e-300,
            rel_tol: 1e-300,
            max_subdivisions: 8,
        };
        let err = adaptive_integral(&mut |x: f64| Ok(x.sqrt()), 0.0, 1.0, &spec).unwrap_err();
        match err {
            QuadratureError::NonConvergence { estimate, .. } => {
                assert!((estimate - 2.0 / 3.0).abs() < 1e-3);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
