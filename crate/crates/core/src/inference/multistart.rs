use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BinaryDataMatrix;
use crate::error::{MltaError, Result};
use crate::model::{fit_mlta, FitControl, MltaFit, ModelSpec};

/// Result of one random start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartOutcome {
    pub seed: u64,
    pub loglik: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct MultiStartResult {
    pub best: MltaFit,
    pub best_start: usize,
    pub starts: Vec<StartOutcome>,
}

impl MultiStartResult {
    pub fn logliks(&self) -> Vec<Option<f64>> {
        self.starts.iter().map(|s| s.loglik).collect()
    }
}

/// Runs every start; start `i` uses seed `ctrl.seed + i`.
pub(crate) fn run_starts(data: &BinaryDataMatrix, spec: &ModelSpec, ctrl: &FitControl) -> Result<Vec<Result<MltaFit>>> {
    spec.validate()?;
    ctrl.validate()?;
    Ok((0..ctrl.n_starts)
        .into_par_iter()
        .map(|i| {
            let start = FitControl {
                seed: ctrl.seed.wrapping_add(i as u64),
                ..ctrl.clone()
            };
            fit_mlta(data, spec, &start)
        })
        .collect())
}

/// Fits `spec` from `ctrl.n_starts` random starts and keeps the one with the
/// highest final log-likelihood (earliest start on ties).
pub fn multi_start_fit(data: &BinaryDataMatrix, spec: &ModelSpec, ctrl: &FitControl) -> Result<MultiStartResult> {
    let fits = run_starts(data, spec, ctrl)?;
    let starts = fits
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let seed = ctrl.seed.wrapping_add(i as u64);
            match f {
                Ok(fit) => StartOutcome {
                    seed,
                    loglik: Some(fit.report.loglik_gh),
                    converged: fit.report.converged,
                    error: None,
                },
                Err(e) => StartOutcome {
                    seed,
                    loglik: None,
                    converged: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut best: Option<(usize, MltaFit)> = None;
    for (i, fit) in fits.into_iter().enumerate() {
        if let Ok(fit) = fit {
            let better = match &best {
                None => fit.report.loglik_gh.is_finite(),
                Some((_, b)) => fit.report.loglik_gh > b.report.loglik_gh,
            };
            if better {
                best = Some((i, fit));
            }
        }
    }
    match best {
        Some((best_start, best)) => Ok(MultiStartResult {
            best,
            best_start,
            starts,
        }),
        None => Err(MltaError::AllStartsFailed {
            n_starts: ctrl.n_starts,
        }),
    }
}
