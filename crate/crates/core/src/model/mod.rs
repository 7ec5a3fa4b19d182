//! Mixture of latent trait analyzers: model types, the variational bound and
//! its closed-form updates, and the double-EM fitting loop.
//!
//! Within group `g` the probability of a positive response to variable `m`
//! given the latent trait `y ~ N(0, I_D)` is `σ(b_mg + w_mgᵀ y)`. In
//! [`SlopeMode::Common`] the slopes are shared, `w_mg = w_m`.

mod fit;
mod mstep;
mod variational;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::math::sigmoid;

pub(crate) use fit::{decreasing_order, mixing_proportions, random_assignment};
pub use fit::{
    fit_mlta, fit_mlta_from, fit_mlta_variational, responsibilities_at, FitControl, FitReport, Initialization, MltaFit,
};
pub use mstep::{mstep_common, mstep_free, MstepOutput, INTERCEPT_BOUND};
pub use variational::{
    estep_responsibilities, lower_bound, posterior_update, response_prob, variational_term, xi_update,
    PosteriorMoments, VariationalState, INITIAL_XI,
};

/// Whether slopes are estimated per group or shared by all groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlopeMode {
    Free,
    Common,
}

impl SlopeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SlopeMode::Free => "free",
            SlopeMode::Common => "common",
        }
    }
}

impl std::str::FromStr for SlopeMode {
    type Err = crate::error::MltaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "free" => Ok(SlopeMode::Free),
            "common" | "fixed" => Ok(SlopeMode::Common),
            other => arg_err(format!("unknown slope mode {other:?}")),
        }
    }
}

/// Number of groups, trait dimension and slope sharing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(rename = "G")]
    pub groups: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    pub slope_mode: SlopeMode,
}

impl ModelSpec {
    pub fn new(groups: usize, dim: usize, slope_mode: SlopeMode) -> Self {
        Self {
            groups,
            dim,
            slope_mode,
        }
    }

    pub fn free(groups: usize, dim: usize) -> Self {
        Self::new(groups, dim, SlopeMode::Free)
    }

    pub fn common(groups: usize, dim: usize) -> Self {
        Self::new(groups, dim, SlopeMode::Common)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return arg_err("at least one group is required");
        }
        if self.slope_mode == SlopeMode::Common && self.dim == 0 {
            return arg_err("common slopes need a latent trait (D >= 1)");
        }
        Ok(())
    }

    pub fn is_lca(&self) -> bool {
        self.dim == 0
    }
}

impl std::fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "G={} D={} {}", self.groups, self.dim, self.slope_mode.as_str())
    }
}

/// Free parameter counts `(k, k*)`; `k*` counts the parameters estimated
/// from a single group's observations.
pub fn count_params(spec: &ModelSpec, n_vars: usize) -> (usize, usize) {
    let (g, d, m) = (spec.groups, spec.dim, n_vars);
    let base = (g - 1) + g * m;
    if d == 0 {
        return (base, m);
    }
    let slopes = m * d - d * (d - 1) / 2;
    match spec.slope_mode {
        SlopeMode::Free => (base + g * slopes, m + slopes),
        SlopeMode::Common => (base + slopes, m),
    }
}

/// Row-major M×D slope matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeMatrix {
    n_vars: usize,
    dim: usize,
    values: Vec<f64>,
}

impl SlopeMatrix {
    pub fn zeros(n_vars: usize, dim: usize) -> Self {
        Self {
            n_vars,
            dim,
            values: vec![0.0; n_vars * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], dim: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return arg_err(format!("slope row has {} entries, expected {dim}", r.len()));
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            n_vars: rows.len(),
            dim,
            values,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.dim..(m + 1) * self.dim]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.values[m * self.dim..(m + 1) * self.dim]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_vars).map(|m| self.row(m).to_vec()).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Slopes {
    /// One M×D matrix per group.
    Free(Vec<SlopeMatrix>),
    /// A single M×D matrix shared by every group.
    Common(SlopeMatrix),
}

impl Slopes {
    pub fn for_group(&self, g: usize) -> &SlopeMatrix {
        match self {
            Slopes::Free(per_group) => &per_group[g],
            Slopes::Common(shared) => shared,
        }
    }

    pub fn mode(&self) -> SlopeMode {
        match self {
            Slopes::Free(_) => SlopeMode::Free,
            Slopes::Common(_) => SlopeMode::Common,
        }
    }
}

/// Mixing proportions, intercepts and slopes of a fitted or simulated model.
#[derive(Debug, Clone, PartialEq)]
pub struct MltaParameters {
    pub eta: Vec<f64>,
    /// `intercepts[g][m]`, in log-odds units.
    pub intercepts: Vec<Vec<f64>>,
    pub slopes: Slopes,
}

impl MltaParameters {
    /// Builds and validates a parameter set.
    pub fn new(eta: Vec<f64>, intercepts: Vec<Vec<f64>>, slopes: Slopes) -> Result<Self> {
        let p = Self {
            eta,
            intercepts,
            slopes,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters with every slope set to zero.
    pub fn without_trait(eta: Vec<f64>, intercepts: Vec<Vec<f64>>, dim: usize) -> Result<Self> {
        let m = intercepts.first().map_or(0, Vec::len);
        let slopes = Slopes::Free(vec![SlopeMatrix::zeros(m, dim); intercepts.len()]);
        Self::new(eta, intercepts, slopes)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.eta.len();
        if g == 0 {
            return arg_err("eta must have at least one entry");
        }
        if self.intercepts.len() != g {
            return arg_err("one intercept vector per group is required");
        }
        let m = self.intercepts[0].len();
        if self.intercepts.iter().any(|b| b.len() != m) {
            return arg_err("intercept vectors differ in length");
        }
        let sum: f64 = self.eta.iter().sum();
        if self.eta.iter().any(|e| !(*e >= 0.0)) || (sum - 1.0).abs() > 1e-8 {
            return arg_err(format!("eta must lie on the simplex (sum {sum})"));
        }
        let d = self.slopes.for_group(0).dim;
        match &self.slopes {
            Slopes::Free(v) => {
                if v.len() != g || v.iter().any(|s| s.n_vars != m || s.dim != d) {
                    return arg_err("free slopes must be G matrices of shape M×D");
                }
            }
            Slopes::Common(s) => {
                if s.n_vars != m {
                    return arg_err("common slopes must have one row per variable");
                }
                if d == 0 {
                    return arg_err("common slopes need D >= 1");
                }
            }
        }
        let finite = self.intercepts.iter().flatten().all(|v| v.is_finite())
            && (0..g).all(|k| self.slopes.for_group(k).values.iter().all(|v| v.is_finite()));
        if !finite {
            return arg_err("parameters must be finite");
        }
        Ok(())
    }

    pub fn n_groups(&self) -> usize {
        self.eta.len()
    }

    pub fn n_vars(&self) -> usize {
        self.intercepts[0].len()
    }

    pub fn dim(&self) -> usize {
        self.slopes.for_group(0).dim
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec::new(self.n_groups(), self.dim(), self.slopes.mode())
    }

    #[inline]
    pub fn intercept(&self, g: usize, m: usize) -> f64 {
        self.intercepts[g][m]
    }

    #[inline]
    pub fn slope(&self, g: usize, m: usize) -> &[f64] {
        self.slopes.for_group(g).row(m)
    }

    /// `b_mg + w_mgᵀ y`.
    #[inline]
    pub fn linear_predictor(&self, g: usize, m: usize, y: &[f64]) -> f64 {
        self.intercepts[g][m] + dot(self.slope(g, m), y)
    }

    /// Positive-response probability for variable `m` in group `g` at trait `y`.
    pub fn response_prob(&self, g: usize, m: usize, y: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(g, m, y))
    }

    /// Reorders groups so that group `g` of the result is group `order[g]` of `self`.
    pub fn permute_groups(&self, order: &[usize]) -> Self {
        let slopes = match &self.slopes {
            Slopes::Free(v) => Slopes::Free(order.iter().map(|&g| v[g].clone()).collect()),
            Slopes::Common(s) => Slopes::Common(s.clone()),
        };
        Self {
            eta: order.iter().map(|&g| self.eta[g]).collect(),
            intercepts: order.iter().map(|&g| self.intercepts[g].clone()).collect(),
            slopes,
        }
    }

    /// `b` as an M×G table.
    pub fn intercept_table(&self) -> Vec<Vec<f64>> {
        (0..self.n_vars())
            .map(|m| (0..self.n_groups()).map(|g| self.intercepts[g][m]).collect())
            .collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Serialized form of [`MltaParameters`]: `b` is M×G; `w` is G×M×D for free
/// slopes and M×D for common slopes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParametersJson {
    pub eta: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub w: serde_json::Value,
    #[serde(default)]
    pub slope_mode: Option<SlopeMode>,
}

impl From<&MltaParameters> for ParametersJson {
    fn from(p: &MltaParameters) -> Self {
        let w = match &p.slopes {
            Slopes::Free(v) => serde_json::to_value(v.iter().map(SlopeMatrix::to_rows).collect::<Vec<_>>()),
            Slopes::Common(s) => serde_json::to_value(s.to_rows()),
        }
        .expect("plain numbers serialize");
        Self {
            eta: p.eta.clone(),
            b: p.intercept_table(),
            w,
            slope_mode: Some(p.slopes.mode()),
        }
    }
}

impl ParametersJson {
    /// Rebuilds parameters; the slope layout is inferred from the nesting
    /// depth of `w` when `slope_mode` is absent.
    pub fn to_parameters(&self) -> Result<MltaParameters> {
        let n_vars = self.b.len();
        let g = self.eta.len();
        let mut intercepts = vec![vec![0.0; n_vars]; g];
        for (m, row) in self.b.iter().enumerate() {
            if row.len() != g {
                return arg_err(format!("b row {m} has {} entries, expected {g}", row.len()));
            }
            for (k, v) in row.iter().enumerate() {
                intercepts[k][m] = *v;
            }
        }
        // Free slopes nest three deep; a depth-two array of arrays at the
        // innermost level also covers D = 0.
        let mode = self.slope_mode.unwrap_or(if self.w[0][0].is_array() {
            SlopeMode::Free
        } else {
            SlopeMode::Common
        });
        let slopes = match mode {
            SlopeMode::Free => {
                let raw: Vec<Vec<Vec<f64>>> = if self.w.as_array().is_some_and(|a| a.is_empty()) {
                    vec![vec![Vec::new(); n_vars]; g]
                } else {
                    serde_json::from_value(self.w.clone())?
                };
                let dim = raw.first().and_then(|r| r.first()).map_or(0, Vec::len);
                let mats = raw
                    .iter()
                    .map(|rows| SlopeMatrix::from_rows(rows, dim))
                    .collect::<Result<Vec<_>>>()?;
                Slopes::Free(mats)
            }
            SlopeMode::Common => {
                let raw: Vec<Vec<f64>> = serde_json::from_value(self.w.clone())?;
                let dim = raw.first().map_or(0, Vec::len);
                Slopes::Common(SlopeMatrix::from_rows(&raw, dim)?)
            }
        };
        MltaParameters::new(self.eta.clone(), intercepts, slopes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts_match_reported_models() {
        assert_eq!(count_params(&ModelSpec::free(10, 1), 16).0, 329);
        assert_eq!(count_params(&ModelSpec::common(4, 2), 32), (194, 32));
        assert_eq!(count_params(&ModelSpec::free(2, 1), 32).0, 129);
        assert_eq!(count_params(&ModelSpec::free(3, 0), 5), (17, 5));
        assert_eq!(count_params(&ModelSpec::free(1, 3), 32), (125, 125));
    }

    #[test]
    fn json_round_trip_both_modes() {
        let free = MltaParameters::new(
            vec![0.4, 0.6],
            vec![vec![0.1, -0.2], vec![1.0, 2.0]],
            Slopes::Free(vec![
                SlopeMatrix::from_rows(&[vec![0.5], vec![-0.5]], 1).unwrap(),
                SlopeMatrix::from_rows(&[vec![1.5], vec![0.0]], 1).unwrap(),
            ]),
        )
        .unwrap();
        let common = MltaParameters::new(
            vec![0.4, 0.6],
            vec![vec![0.1, -0.2], vec![1.0, 2.0]],
            Slopes::Common(SlopeMatrix::from_rows(&[vec![0.5, 1.0], vec![-0.5, 0.0]], 2).unwrap()),
        )
        .unwrap();
        let lca = MltaParameters::without_trait(vec![1.0], vec![vec![0.3, 0.2]], 0).unwrap();
        for p in [free, common, lca] {
            let mut json = ParametersJson::from(&p);
            assert_eq!(json.to_parameters().unwrap(), p);
            json.slope_mode = None;
            assert_eq!(json.to_parameters().unwrap(), p);
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(MltaParameters::without_trait(vec![0.5, 0.6], vec![vec![0.0]; 2], 1).is_err());
        assert!(MltaParameters::without_trait(vec![1.0], vec![vec![f64::NAN]], 1).is_err());
        assert!(ModelSpec::common(2, 0).validate().is_err());
        assert!(ModelSpec::free(0, 1).validate().is_err());
    }
}
