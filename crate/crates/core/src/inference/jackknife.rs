use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::align_groups;
use crate::data::BinaryDataMatrix;
use crate::error::{arg_err, Result};
use crate::lca::PI_FLOOR;
use crate::math::sigmoid;
use crate::model::{
    fit_mlta_from, responsibilities_at, FitControl, Initialization, MltaParameters, SlopeMatrix, Slopes,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JackknifeOptions {
    /// Iteration cap for each warm-started delete-one refit.
    pub max_iter: usize,
    /// Refit only every `stride`-th distinct row; the sum of squares is
    /// rescaled to the full sample.
    pub stride: usize,
}

impl Default for JackknifeOptions {
    fn default() -> Self {
        Self {
            max_iter: 20,
            stride: 1,
        }
    }
}

/// Jackknife standard errors, shaped like the parameters they describe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JackknifeReport {
    pub se_eta: Vec<f64>,
    /// M×G.
    pub se_b: Vec<Vec<f64>>,
    /// G×M×D for free slopes, M×D for common slopes.
    pub se_w: serde_json::Value,
    /// M×G standard errors of `σ(b)`.
    pub se_median_prob: Vec<Vec<f64>>,
    /// Delete-one replicates that contributed, counting row weights.
    pub n_refits: usize,
    /// Replicates dropped because the refit failed.
    pub n_failed: usize,
    pub warnings: Vec<String>,
}

/// Intercepts at least this large sit at a probability floor or clamp.
fn saturation_logit() -> f64 {
    ((1.0 - PI_FLOOR) / PI_FLOOR).ln() - 1e-6
}

fn flatten(p: &MltaParameters) -> Vec<f64> {
    let mut out = p.eta.clone();
    out.extend(p.intercepts.iter().flatten());
    out.extend(p.intercepts.iter().flatten().map(|&b| sigmoid(b)));
    match &p.slopes {
        Slopes::Free(v) => v.iter().for_each(|s| out.extend_from_slice(s.values())),
        Slopes::Common(s) => out.extend_from_slice(s.values()),
    }
    out
}

/// Delete-one jackknife around `params`, the fit to the full `data`.
///
/// Each replicate removes one observation, refits from `params` for at most
/// `options.max_iter` iterations, and aligns its groups to the full fit by
/// maximum responsibility overlap before differencing.
pub fn jackknife_se(
    data: &BinaryDataMatrix,
    params: &MltaParameters,
    ctrl: &FitControl,
    options: &JackknifeOptions,
) -> Result<JackknifeReport> {
    if options.stride == 0 || options.max_iter == 0 {
        return arg_err("jackknife stride and max_iter must be at least 1");
    }
    if data.effective_n() < 2.0 {
        return arg_err("the jackknife needs at least two observations");
    }
    let spec = params.spec();
    let g = params.n_groups();
    let full = responsibilities_at(data, params)?;
    let refit_ctrl = FitControl {
        max_iter: options.max_iter,
        n_starts: 1,
        ..ctrl.clone()
    };
    let selected: Vec<usize> = (0..data.n_rows()).step_by(options.stride).collect();
    let replicates: Vec<(f64, Option<Vec<f64>>)> = selected
        .par_iter()
        .map(|&n| {
            let reduced = data.without_one(n);
            let state = if data.weights()[n] > 1 {
                full.clone()
            } else {
                full.without_row(n)
            };
            let init = Initialization::Warm {
                params: params.clone(),
                state: Some(state.clone()),
            };
            let theta = fit_mlta_from(&reduced, &spec, &refit_ctrl, init).ok().map(|fit| {
                let order = align_groups(&reduced, &state.z, &fit.state.z, g);
                flatten(&fit.params.permute_groups(&order))
            });
            (data.weight(n), theta)
        })
        .collect();

    let n_obs = data.effective_n();
    let ok: Vec<(f64, &Vec<f64>)> = replicates
        .iter()
        .filter_map(|(w, t)| t.as_ref().map(|t| (*w, t)))
        .collect();
    let n_failed: f64 = replicates.iter().filter(|(_, t)| t.is_none()).map(|(w, _)| w).sum();
    let used: f64 = ok.iter().map(|(w, _)| w).sum();
    if ok.is_empty() {
        return arg_err("every jackknife refit failed");
    }
    let len = ok[0].1.len();
    let mut mean = vec![0.0; len];
    for (w, t) in &ok {
        for (m, v) in mean.iter_mut().zip(t.iter()) {
            *m += w * v / used;
        }
    }
    let mut ss = vec![0.0; len];
    for (w, t) in &ok {
        for ((s, v), m) in ss.iter_mut().zip(t.iter()).zip(&mean) {
            *s += w * (v - m).powi(2);
        }
    }
    let scale = (n_obs - 1.0) / used;
    let se: Vec<f64> = ss.iter().map(|s| (scale * s).sqrt()).collect();

    let (m_count, d) = (params.n_vars(), params.dim());
    let se_eta = se[..g].to_vec();
    let by_group = |offset: usize| -> Vec<Vec<f64>> {
        (0..m_count)
            .map(|m| (0..g).map(|k| se[offset + k * m_count + m]).collect())
            .collect()
    };
    let se_b = by_group(g);
    let se_median_prob = by_group(g + g * m_count);
    let w_offset = g + 2 * g * m_count;
    let slab = |i: usize| -> Vec<Vec<f64>> {
        let start = w_offset + i * m_count * d;
        SlopeMatrix::from_rows(
            &(0..m_count)
                .map(|m| se[start + m * d..start + (m + 1) * d].to_vec())
                .collect::<Vec<_>>(),
            d,
        )
        .expect("shape")
        .to_rows()
    };
    let se_w = match &params.slopes {
        Slopes::Free(_) => serde_json::to_value((0..g).map(slab).collect::<Vec<_>>()),
        Slopes::Common(_) => serde_json::to_value(slab(0)),
    }?;

    let mut warnings = Vec::new();
    let limit = saturation_logit();
    for (k, row) in params.intercepts.iter().enumerate() {
        for (m, b) in row.iter().enumerate() {
            if b.abs() >= limit {
                warnings.push(format!(
                    "intercept of variable {m} in group {k} is saturated; its standard error reflects the bound"
                ));
            }
        }
    }
    if n_failed > 0.0 {
        warnings.push(format!("{n_failed} delete-one refits failed and were excluded"));
    }
    Ok(JackknifeReport {
        se_eta,
        se_b,
        se_w,
        se_median_prob,
        n_refits: used as usize,
        n_failed: n_failed as usize,
        warnings,
    })
}
