use serde::{Deserialize, Serialize};

use super::{jackknife_se, max_overlap_assignment, run_starts, JackknifeOptions};
use crate::data::BinaryDataMatrix;
use crate::error::{MltaError, Result};
use crate::model::{count_params, FitControl, MltaParameters, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifiabilityOptions {
    /// Starts within this distance of the best log-likelihood count as
    /// reaching the maximum.
    pub loglik_tol: f64,
    /// Largest difference in `η`, `b` or `WWᵀ` still treated as the same solution.
    pub param_tol: f64,
    /// Flag intercepts and slopes whose jackknife SE exceeds this.
    pub se_threshold: f64,
    /// Flag mixing proportions whose jackknife SE exceeds this.
    pub eta_se_threshold: f64,
    /// Skip the jackknife (and its flags) when `None`.
    pub jackknife: Option<JackknifeOptions>,
}

impl Default for IdentifiabilityOptions {
    fn default() -> Self {
        Self {
            loglik_tol: 0.05,
            param_tol: 0.1,
            se_threshold: 2.0,
            eta_se_threshold: 0.1,
            jackknife: Some(JackknifeOptions::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub spec: ModelSpec,
    pub start_logliks: Vec<Option<f64>>,
    /// Best minus worst log-likelihood over successful starts.
    pub loglik_spread: f64,
    /// Starts whose log-likelihood is within `loglik_tol` of the best.
    pub n_at_max: usize,
    /// Whether two starts at the maximum differ beyond group relabelling and
    /// trait rotation.
    pub distinct_maxima: bool,
    /// Parameters with a large jackknife standard error.
    pub high_se: Vec<String>,
    pub k: usize,
    /// `k < 2^M`, necessary for identifiability.
    pub necessary_condition: bool,
    pub flags: Vec<String>,
}

/// Largest entry of `|A - B|` between the rotation-invariant summaries of two
/// solutions, after matching their groups.
fn solution_distance(a: &MltaParameters, b: &MltaParameters) -> f64 {
    let g = a.n_groups();
    let closeness: Vec<Vec<f64>> = (0..g)
        .map(|i| {
            (0..g)
                .map(|j| {
                    let d: f64 = a.intercepts[i]
                        .iter()
                        .zip(&b.intercepts[j])
                        .map(|(x, y)| (x - y).powi(2))
                        .sum();
                    -d - (a.eta[i] - b.eta[j]).powi(2)
                })
                .collect()
        })
        .collect();
    // Shift to non-negative scores for the maximizer.
    let floor = closeness.iter().flatten().fold(0.0_f64, |m, v| m.min(*v));
    let shifted: Vec<Vec<f64>> = closeness
        .iter()
        .map(|r| r.iter().map(|v| v - floor).collect())
        .collect();
    let order = max_overlap_assignment(&shifted);
    let b = b.permute_groups(&order);
    let m = a.n_vars();
    let mut worst = 0.0_f64;
    for k in 0..g {
        worst = worst.max((a.eta[k] - b.eta[k]).abs());
        for v in 0..m {
            worst = worst.max((a.intercepts[k][v] - b.intercepts[k][v]).abs());
            for u in 0..m {
                let ga = crate::model::dot(a.slope(k, v), a.slope(k, u));
                let gb = crate::model::dot(b.slope(k, v), b.slope(k, u));
                worst = worst.max((ga - gb).abs());
            }
        }
    }
    worst
}

/// Empirical identifiability checks for `spec` on `data`.
pub fn identifiability_report(
    data: &BinaryDataMatrix,
    spec: &ModelSpec,
    ctrl: &FitControl,
    options: &IdentifiabilityOptions,
) -> Result<IdentifiabilityReport> {
    let (k, _) = count_params(spec, data.n_vars());
    let necessary_condition = (k as f64) < 2f64.powi(data.n_vars() as i32);
    let fits = run_starts(data, spec, ctrl)?;
    let start_logliks: Vec<Option<f64>> = fits
        .iter()
        .map(|f| f.as_ref().ok().map(|f| f.report.loglik_gh))
        .collect();
    let ok: Vec<_> = fits.into_iter().filter_map(|f| f.ok()).collect();
    if ok.is_empty() {
        return Err(MltaError::AllStartsFailed {
            n_starts: ctrl.n_starts,
        });
    }
    let best_idx = (0..ok.len())
        .max_by(|&a, &b| {
            ok[a]
                .report
                .loglik_gh
                .total_cmp(&ok[b].report.loglik_gh)
                .then(b.cmp(&a))
        })
        .expect("non-empty");
    let best = &ok[best_idx];
    let max = best.report.loglik_gh;
    let min = ok.iter().map(|f| f.report.loglik_gh).fold(f64::INFINITY, f64::min);
    let at_max: Vec<_> = ok
        .iter()
        .filter(|f| max - f.report.loglik_gh <= options.loglik_tol)
        .collect();
    let distinct_maxima = at_max
        .iter()
        .any(|f| solution_distance(&best.params, &f.params) > options.param_tol);

    let mut high_se = Vec::new();
    if let Some(jk) = &options.jackknife {
        let report = jackknife_se(data, &best.params, ctrl, jk)?;
        for (g, se) in report.se_eta.iter().enumerate() {
            if *se > options.eta_se_threshold {
                high_se.push(format!("eta[{g}] (SE {se:.3})"));
            }
        }
        for (m, row) in report.se_b.iter().enumerate() {
            for (g, se) in row.iter().enumerate() {
                if *se > options.se_threshold {
                    high_se.push(format!("b[{m}][{g}] (SE {se:.3})"));
                }
            }
        }
        let mut stack = vec![(String::from("w"), &report.se_w)];
        while let Some((path, v)) = stack.pop() {
            match v {
                serde_json::Value::Array(items) => {
                    for (i, item) in items.iter().enumerate().rev() {
                        stack.push((format!("{path}[{i}]"), item));
                    }
                }
                serde_json::Value::Number(n) => {
                    let se = n.as_f64().unwrap_or(0.0);
                    if se > options.se_threshold {
                        high_se.push(format!("{path} (SE {se:.3})"));
                    }
                }
                _ => {}
            }
        }
    }

    let mut flags = Vec::new();
    if !necessary_condition {
        flags.push(format!(
            "k = {k} is not below 2^M = {}",
            2f64.powi(data.n_vars() as i32)
        ));
    }
    if distinct_maxima {
        flags.push("distinct parameter vectors attain the maximum log-likelihood".into());
    }
    if !high_se.is_empty() {
        flags.push(format!(
            "{} parameters have large jackknife standard errors",
            high_se.len()
        ));
    }
    Ok(IdentifiabilityReport {
        spec: *spec,
        start_logliks,
        loglik_spread: max - min,
        n_at_max: at_max.len(),
        distinct_maxima,
        high_se,
        k,
        necessary_condition,
        flags,
    })
}
