//! Central finite-difference verification of the reverse pass.

use super::{Graph, NodeId, TensorError};

/// Finite-difference step for the checker.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Compare analytic gradients of `loss` against central finite differences
/// (step [`FD_STEP`]) for every named parameter leaf. The graph is restored
/// to its original state before returning.
pub fn grad_check(graph: &mut Graph, loss: NodeId) -> Result<GradCheckReport, TensorError> {
    let grads = graph.backward(loss)?;
    let params: Vec<(String, NodeId)> = graph
        .named_params()
        .map(|(n, i)| (n.to_string(), i))
        .collect();
    let mut entries = Vec::with_capacity(params.len());
    let mut overall = 0.0f64;
    for (name, id) in params {
        let base = graph.value(id).data().to_vec();
        let analytic: Vec<f64> = match grads.get(id) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; base.len()],
        };
        let mut worst = GradCheckEntry {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        let mut probe = base.clone();
        for i in 0..base.len() {
            probe[i] = base[i] + FD_STEP;
            graph.set_leaf(id, &probe)?;
            graph.recompute()?;
            let up = graph.value(loss).item();
            probe[i] = base[i] - FD_STEP;
            graph.set_leaf(id, &probe)?;
            graph.recompute()?;
            let down = graph.value(loss).item();
            probe[i] = base[i];
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(analytic[i], numeric);
            if e >= worst.max_rel_err {
                worst = GradCheckEntry {
                    name: name.clone(),
                    max_rel_err: e,
                    worst_index: i,
                    analytic: analytic[i],
                    numeric,
                };
            }
        }
        graph.set_leaf(id, &base)?;
        overall = overall.max(worst.max_rel_err);
        entries.push(worst);
    }
    graph.recompute()?;
    Ok(GradCheckReport {
        entries,
        max_rel_err: overall,
    })
}
