use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mstep::INTERCEPT_BOUND;
use super::variational::responsibilities_and_loglik;
use super::{
    count_params, mstep_common, mstep_free, MltaParameters, ModelSpec, ParametersJson, SlopeMatrix, SlopeMode, Slopes,
    VariationalState,
};
use crate::data::BinaryDataMatrix;
use crate::diagnostics::{information_criteria, FitDiagnostics};
use crate::error::{arg_err, MltaError, Result};
use crate::inference::{aitken_stop, classify_map};
use crate::lca::{fit_lca, InitPolicy};
use crate::quadrature::{gauss_hermite, gh_loglik, DEFAULT_QUADRATURE_POINTS};

/// Stopping rule, restarts and evaluation settings shared by every fitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitControl {
    /// Aitken tolerance on the projected log-likelihood.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub n_starts: usize,
    /// Gauss–Hermite points per trait dimension for the final log-likelihood.
    pub final_quadrature_q: usize,
    /// `(ξ, θ, μ, C)` sweeps per outer iteration.
    pub inner_sweeps: usize,
}

impl Default for FitControl {
    fn default() -> Self {
        Self {
            tol: 1e-2,
            max_iter: 1000,
            seed: 0,
            n_starts: 10,
            final_quadrature_q: DEFAULT_QUADRATURE_POINTS,
            inner_sweeps: 1,
        }
    }
}

impl FitControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return arg_err("tol must be positive");
        }
        if self.n_starts == 0 {
            return arg_err("n_starts must be at least 1");
        }
        if self.max_iter == 0 || self.inner_sweeps == 0 || self.final_quadrature_q == 0 {
            return arg_err("max_iter, inner_sweeps and final_quadrature_q must be at least 1");
        }
        Ok(())
    }
}

/// Starting point of a single fit.
#[derive(Debug, Clone)]
pub enum Initialization {
    /// Uniform random group assignment and standard-normal intercepts and
    /// slopes, drawn from the control seed.
    Random,
    /// Given N×G responsibilities; parameters are still drawn at random.
    Responsibilities(Vec<f64>),
    /// Start from fitted parameters, optionally with a matching state.
    Warm {
        params: MltaParameters,
        state: Option<VariationalState>,
    },
}

/// Serializable summary of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub spec: ModelSpec,
    pub eta: Vec<f64>,
    /// M×G intercepts.
    pub b: Vec<Vec<f64>>,
    /// G×M×D for free slopes, M×D for common slopes.
    pub w: serde_json::Value,
    pub loglik_gh: f64,
    /// `Σ_n log Σ_g η_g exp(L_ng)` at the returned parameters.
    pub loglik_variational: f64,
    pub lower_bound_trace: Vec<f64>,
    pub k: usize,
    pub k_star: usize,
    pub bic: f64,
    pub bic_star: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub seed: u64,
    /// MAP group of every data row, numbered from 0.
    pub classification: Vec<usize>,
    pub n_obs: f64,
    pub n_vars: usize,
    /// Points per dimension used for `loglik_gh` (0 when D = 0).
    pub quadrature_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<FitDiagnostics>,
}

impl FitReport {
    pub fn parameters(&self) -> Result<MltaParameters> {
        ParametersJson {
            eta: self.eta.clone(),
            b: self.b.clone(),
            w: self.w.clone(),
            slope_mode: Some(self.spec.slope_mode),
        }
        .to_parameters()
    }
}

#[derive(Debug, Clone)]
pub struct MltaFit {
    pub params: MltaParameters,
    pub state: VariationalState,
    pub report: FitReport,
}

/// Fits `spec` from a random start seeded by `ctrl.seed`.
pub fn fit_mlta(data: &BinaryDataMatrix, spec: &ModelSpec, ctrl: &FitControl) -> Result<MltaFit> {
    fit_mlta_from(data, spec, ctrl, Initialization::Random)
}

/// Fits `spec` from the given start. D = 0 uses the exact latent class EM.
pub fn fit_mlta_from(
    data: &BinaryDataMatrix,
    spec: &ModelSpec,
    ctrl: &FitControl,
    init: Initialization,
) -> Result<MltaFit> {
    spec.validate()?;
    ctrl.validate()?;
    if spec.is_lca() {
        return fit_latent_class(data, spec, ctrl, init);
    }
    fit_mlta_variational(data, spec, ctrl, init)
}

pub(crate) fn random_assignment(rng: &mut ChaCha8Rng, n_rows: usize, groups: usize) -> Vec<f64> {
    let mut z = vec![0.0; n_rows * groups];
    for n in 0..n_rows {
        z[n * groups + rng.random_range(0..groups)] = 1.0;
    }
    z
}

fn random_parameters(rng: &mut ChaCha8Rng, spec: &ModelSpec, n_vars: usize) -> MltaParameters {
    let (g, d) = (spec.groups, spec.dim);
    let mut normal = || -> f64 { StandardNormal.sample(rng) };
    let intercepts = (0..g).map(|_| (0..n_vars).map(|_| normal()).collect()).collect();
    let mut draw_slopes = || {
        let rows: Vec<Vec<f64>> = (0..n_vars).map(|_| (0..d).map(|_| normal()).collect()).collect();
        SlopeMatrix::from_rows(&rows, d).expect("rows have length D")
    };
    let slopes = match spec.slope_mode {
        SlopeMode::Free => Slopes::Free((0..g).map(|_| draw_slopes()).collect()),
        SlopeMode::Common => Slopes::Common(draw_slopes()),
    };
    MltaParameters {
        eta: vec![1.0 / g as f64; g],
        intercepts,
        slopes,
    }
}

/// Weighted column means of `z`; fails when a group's expected size is below one.
pub(crate) fn mixing_proportions(data: &BinaryDataMatrix, z: &[f64], groups: usize) -> Result<Vec<f64>> {
    let mut sizes = vec![0.0; groups];
    for n in 0..data.n_rows() {
        let w = data.weight(n);
        for (s, zv) in sizes.iter_mut().zip(&z[n * groups..(n + 1) * groups]) {
            *s += w * zv;
        }
    }
    if let Some((g, &size)) = sizes.iter().enumerate().find(|(_, s)| **s < 1.0) {
        return Err(MltaError::DegenerateGroup { group: g, size });
    }
    let total: f64 = sizes.iter().sum();
    Ok(sizes.iter().map(|s| s / total).collect())
}

/// Variational state implied by `params` alone: `ξ` tightened once and
/// responsibilities from the resulting bounds. For `D = 0` the bounds are
/// exact and so are the responsibilities.
pub fn responsibilities_at(data: &BinaryDataMatrix, params: &MltaParameters) -> Result<VariationalState> {
    let (n, g) = (data.n_rows(), params.n_groups());
    if data.n_vars() != params.n_vars() {
        return arg_err("data and parameters differ in number of variables");
    }
    let mut state = VariationalState::new(n, g, params.n_vars(), params.dim(), vec![1.0 / g as f64; n * g])?;
    state.refresh_posterior(data, params)?;
    state.update_xi(params);
    let bounds = state.refresh_posterior(data, params)?;
    state.z = responsibilities_and_loglik(&params.eta, &bounds, Some(data.weights())).0;
    Ok(state)
}

/// Variational double-EM for any `D`, including `D = 0` (used to cross-check
/// the latent class path).
pub fn fit_mlta_variational(
    data: &BinaryDataMatrix,
    spec: &ModelSpec,
    ctrl: &FitControl,
    init: Initialization,
) -> Result<MltaFit> {
    spec.validate()?;
    ctrl.validate()?;
    if data.is_empty() {
        return arg_err("cannot fit an empty data set");
    }
    let (n_rows, m, g, d) = (data.n_rows(), data.n_vars(), spec.groups, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(ctrl.seed);
    let mut warnings = BTreeSet::new();

    let (mut params, mut state, warm) = match init {
        Initialization::Random => {
            let z = random_assignment(&mut rng, n_rows, g);
            let p = random_parameters(&mut rng, spec, m);
            (p, VariationalState::new(n_rows, g, m, d, z)?, false)
        }
        Initialization::Responsibilities(z) => {
            let p = random_parameters(&mut rng, spec, m);
            (p, VariationalState::new(n_rows, g, m, d, z)?, false)
        }
        Initialization::Warm { params, state } => {
            if params.spec() != *spec || params.n_vars() != m {
                return arg_err("warm-start parameters do not match the model spec");
            }
            let s = match state {
                Some(s) => s,
                None => VariationalState::new(n_rows, g, m, d, vec![1.0 / g as f64; n_rows * g])?,
            };
            (params, s, true)
        }
    };
    if state.n_rows() != n_rows || state.n_groups() != g || state.n_vars() != m || state.dim() != d {
        return arg_err("initial state does not match data and spec");
    }
    for b in params.intercepts.iter_mut().flatten() {
        *b = b.clamp(-INTERCEPT_BOUND, INTERCEPT_BOUND);
    }

    let mut bounds = state.refresh_posterior(data, &params)?;
    if warm {
        // Tighten ξ and derive responsibilities from the supplied parameters.
        state.update_xi(&params);
        bounds = state.refresh_posterior(data, &params)?;
        state.z = responsibilities_and_loglik(&params.eta, &bounds, Some(data.weights())).0;
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut clamped = 0;
    for _ in 0..ctrl.max_iter {
        params.eta = mixing_proportions(data, &state.z, g)?;
        for _ in 0..ctrl.inner_sweeps {
            state.update_xi(&params);
            let out = match spec.slope_mode {
                SlopeMode::Free => mstep_free(data, &params, &state)?,
                SlopeMode::Common => mstep_common(data, &params, &state)?,
            };
            warnings.extend(out.warnings);
            clamped = out.clamped;
            params = out.params;
            bounds = state.refresh_posterior(data, &params)?;
        }
        let (z, ll) = responsibilities_and_loglik(&params.eta, &bounds, Some(data.weights()));
        if !ll.is_finite() {
            return Err(MltaError::Numerical("lower bound is not finite".into()));
        }
        state.z = z;
        trace.push(ll);
        if aitken_stop(&trace, ctrl.tol) {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.insert(format!("not converged after {} iterations", ctrl.max_iter));
    }
    if clamped > 0 {
        warnings.insert(format!("{clamped} intercepts held at |b| = {INTERCEPT_BOUND}"));
    }

    // η from the final responsibilities can only raise the bound.
    params.eta = mixing_proportions(data, &state.z, g)?;
    let loglik_variational = responsibilities_and_loglik(&params.eta, &bounds, Some(data.weights())).1;

    let order = decreasing_order(&params.eta);
    params = params.permute_groups(&order);
    state.permute_groups(&order);

    let loglik_gh = if d == 0 {
        gh_loglik(data, &params, &gauss_hermite(1, 1)?)?
    } else {
        gh_loglik(data, &params, &gauss_hermite(ctrl.final_quadrature_q, d)?)?
    };
    let n_iter = trace.len();
    let report = build_report(
        data,
        &params,
        &state,
        ReportParts {
            loglik_gh,
            loglik_variational,
            trace,
            n_iter,
            converged,
            warnings: warnings.into_iter().collect(),
            seed: ctrl.seed,
            quadrature_points: if d == 0 { 0 } else { ctrl.final_quadrature_q },
        },
    )?;
    Ok(MltaFit { params, state, report })
}

fn fit_latent_class(
    data: &BinaryDataMatrix,
    spec: &ModelSpec,
    ctrl: &FitControl,
    init: Initialization,
) -> Result<MltaFit> {
    let policy = match init {
        Initialization::Random => InitPolicy::Random,
        Initialization::Responsibilities(z) => InitPolicy::Responsibilities(z),
        Initialization::Warm { state: Some(s), .. } => InitPolicy::Responsibilities(s.z),
        Initialization::Warm { params, state: None } => {
            InitPolicy::Parameters(crate::lca::LcaParameters::from_mlta(&params)?)
        }
    };
    let lca = fit_lca(data, spec.groups, policy, ctrl)?;
    let params = lca.params.to_mlta();
    let (n_rows, m, g) = (data.n_rows(), data.n_vars(), spec.groups);
    let mut state = VariationalState::new(n_rows, g, m, 0, lca.z.clone())?;
    for n in 0..n_rows {
        for k in 0..g {
            let start = (n * g + k) * m;
            for (v, xi) in state.xi[start..start + m].iter_mut().enumerate() {
                *xi = params.intercept(k, v).abs();
            }
        }
    }
    let mut warnings = Vec::new();
    if !lca.converged {
        warnings.push(format!("not converged after {} iterations", ctrl.max_iter));
    }
    let n_iter = lca.trace.len();
    let report = build_report(
        data,
        &params,
        &state,
        ReportParts {
            loglik_gh: lca.loglik,
            loglik_variational: lca.loglik,
            trace: lca.trace,
            n_iter,
            converged: lca.converged,
            warnings,
            seed: ctrl.seed,
            quadrature_points: 0,
        },
    )?;
    Ok(MltaFit { params, state, report })
}

/// Indices sorting `eta` in decreasing order; ties keep their original order.
pub(crate) fn decreasing_order(eta: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..eta.len()).collect();
    order.sort_by(|&a, &b| eta[b].total_cmp(&eta[a]));
    order
}

struct ReportParts {
    loglik_gh: f64,
    loglik_variational: f64,
    trace: Vec<f64>,
    n_iter: usize,
    converged: bool,
    warnings: Vec<String>,
    seed: u64,
    quadrature_points: usize,
}

fn build_report(
    data: &BinaryDataMatrix,
    params: &MltaParameters,
    state: &VariationalState,
    parts: ReportParts,
) -> Result<FitReport> {
    let spec = params.spec();
    let (k, k_star) = count_params(&spec, data.n_vars());
    let n_obs = data.effective_n();
    let (bic, bic_star) = information_criteria(parts.loglik_gh, k, k_star, &params.eta, n_obs)?;
    let json = ParametersJson::from(params);
    Ok(FitReport {
        spec,
        eta: json.eta,
        b: json.b,
        w: json.w,
        loglik_gh: parts.loglik_gh,
        loglik_variational: parts.loglik_variational,
        lower_bound_trace: parts.trace,
        k,
        k_star,
        bic,
        bic_star,
        n_iter: parts.n_iter,
        converged: parts.converged,
        warnings: parts.warnings,
        seed: parts.seed,
        classification: classify_map(&state.z, spec.groups),
        n_obs,
        n_vars: data.n_vars(),
        quadrature_points: parts.quadrature_points,
        diagnostics: None,
    })
}
