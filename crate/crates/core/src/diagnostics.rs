//! Information criteria, pattern-level goodness of fit, and summaries of the
//! dependence each group's trait induces.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::checked_gamma_ur;

use crate::data::{pattern_table, BinaryDataMatrix, Pattern};
use crate::error::{arg_err, Result};
use crate::math::sigmoid;
use crate::model::{count_params, MltaParameters, SlopeMatrix};
use crate::quadrature::{gauss_hermite, ComponentLikelihood, QuadratureRule};

/// Truncation levels reported by default for the SSPR.
pub const DEFAULT_SSPR_THRESHOLDS: [u64; 3] = [100, 25, 10];

/// Largest M for which the chi-square p-value is computed.
pub const MAX_CHI_SQUARE_VARS: usize = 25;

/// `(BIC, BIC*)` with `BIC = -2ℓ + k ln N` and `BIC* = BIC + k* Σ_g ln η_g`.
pub fn information_criteria(loglik: f64, k: usize, k_star: usize, eta: &[f64], n_obs: f64) -> Result<(f64, f64)> {
    if !(n_obs >= 1.0) {
        return arg_err("N must be at least 1");
    }
    if eta.iter().any(|e| !(*e > 0.0)) {
        return arg_err("every mixing proportion must be positive");
    }
    let bic = -2.0 * loglik + k as f64 * n_obs.ln();
    let log_eta: f64 = eta.iter().map(|e| e.ln()).sum();
    Ok((bic, bic + k_star as f64 * log_eta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedFrequency {
    pub pattern: String,
    pub observed: u64,
    pub expected: f64,
}

fn rule_for(params: &MltaParameters, rule: &QuadratureRule) -> Result<QuadratureRule> {
    // D = 0 never touches the rule, but the evaluator wants one of matching shape.
    if params.dim() == 0 {
        gauss_hermite(1, 1)
    } else {
        Ok(rule.clone())
    }
}

/// `N · p(x)` for each pattern, with the trait integrated by `rule`.
pub fn expected_frequencies(
    patterns: &[Pattern],
    params: &MltaParameters,
    rule: &QuadratureRule,
    n_obs: f64,
) -> Result<Vec<ExpectedFrequency>> {
    if patterns.iter().any(|p| p.bits.len() != params.n_vars()) {
        return arg_err("pattern length does not match the number of variables");
    }
    let rule = rule_for(params, rule)?;
    let eval = ComponentLikelihood::new(params, Some(&rule))?;
    Ok(patterns
        .iter()
        .map(|p| ExpectedFrequency {
            pattern: p.bitstring(),
            observed: p.observed,
            expected: n_obs * eval.log_marginal(&p.bits).exp(),
        })
        .collect())
}

/// Pearson chi-square over observed patterns plus the unobserved remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    /// `N - Σ E` over observed patterns, already included in `statistic`.
    pub remainder: f64,
    /// `2^M - k - 1`.
    pub dof: f64,
    /// Upper-tail probability; absent when M exceeds [`MAX_CHI_SQUARE_VARS`] or dof ≤ 0.
    pub p_value: Option<f64>,
    /// False when some observed pattern has an expected count below 5, or
    /// when no p-value could be computed.
    pub applicable: bool,
}

/// Chi-square goodness-of-fit test of `params` on `data`.
pub fn chi_square_test(
    data: &BinaryDataMatrix,
    params: &MltaParameters,
    rule: &QuadratureRule,
) -> Result<ChiSquareTest> {
    let table = expected_frequencies(&pattern_table(data), params, rule, data.effective_n())?;
    chi_square_from_table(&table, data.effective_n(), params)
}

fn chi_square_from_table(table: &[ExpectedFrequency], n_obs: f64, params: &MltaParameters) -> Result<ChiSquareTest> {
    let m = params.n_vars();
    let (k, _) = count_params(&params.spec(), m);
    let pearson: f64 = table
        .iter()
        .map(|e| (e.observed as f64 - e.expected).powi(2) / e.expected)
        .sum();
    let remainder = n_obs - table.iter().map(|e| e.expected).sum::<f64>();
    let statistic = pearson + remainder;
    let dof = 2f64.powi(m as i32) - k as f64 - 1.0;
    let p_value = if m <= MAX_CHI_SQUARE_VARS && dof > 0.0 {
        checked_gamma_ur(dof / 2.0, statistic.max(0.0) / 2.0).ok()
    } else {
        None
    };
    let small = table.iter().any(|e| e.expected < 5.0);
    Ok(ChiSquareTest {
        statistic,
        remainder,
        dof,
        applicable: p_value.is_some() && !small,
        p_value,
    })
}

/// Sum of squared Pearson residuals over patterns observed at least `threshold` times.
pub fn truncated_sspr(
    data: &BinaryDataMatrix,
    params: &MltaParameters,
    rule: &QuadratureRule,
    threshold: u64,
) -> Result<f64> {
    Ok(sspr_table(data, params, rule, &[threshold])?[0].1)
}

/// Truncated SSPR at several thresholds from one pass of expected counts.
pub fn sspr_table(
    data: &BinaryDataMatrix,
    params: &MltaParameters,
    rule: &QuadratureRule,
    thresholds: &[u64],
) -> Result<Vec<(u64, f64)>> {
    if thresholds.contains(&0) {
        return arg_err("SSPR thresholds must be at least 1");
    }
    let patterns = pattern_table(data);
    let n_obs = data.effective_n();
    let table = expected_frequencies(&patterns, params, rule, n_obs)?;
    Ok(thresholds.iter().map(|&t| (t, sspr_from_table(&table, t))).collect())
}

fn sspr_from_table(table: &[ExpectedFrequency], threshold: u64) -> f64 {
    table
        .iter()
        .filter(|e| e.observed >= threshold)
        .map(|e| (e.observed as f64 - e.expected).powi(2) / e.expected)
        .sum()
}

/// Within-group lift `P(x_m = 1, x_k = 1) / (P(x_m = 1) P(x_k = 1))` for
/// every pair of variables; the diagonal is set to 1.
pub fn lift_matrix(params: &MltaParameters, g: usize, rule: &QuadratureRule) -> Result<Vec<Vec<f64>>> {
    let m = params.n_vars();
    if g >= params.n_groups() {
        return arg_err(format!("group {g} out of range"));
    }
    let mut lift = vec![vec![1.0; m]; m];
    let d = params.dim();
    if d == 0 {
        return Ok(lift);
    }
    if rule.dim() != d {
        return arg_err("quadrature dimension does not match the trait dimension");
    }
    let probs: Vec<Vec<f64>> = (0..rule.len())
        .map(|q| (0..m).map(|v| params.response_prob(g, v, rule.point(q))).collect())
        .collect();
    let marginal: Vec<f64> = (0..m)
        .map(|v| (0..rule.len()).map(|q| rule.weight(q) * probs[q][v]).sum())
        .collect();
    for a in 0..m {
        for b in a + 1..m {
            let joint: f64 = (0..rule.len())
                .map(|q| rule.weight(q) * probs[q][a] * probs[q][b])
                .sum();
            let value = joint / (marginal[a] * marginal[b]);
            lift[a][b] = value;
            lift[b][a] = value;
        }
    }
    Ok(lift)
}

/// Writes an M×M matrix as CSV with a header of variable names.
pub fn write_matrix_csv<W: Write>(out: W, names: &[String], matrix: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(names).map_err(std::io::Error::from)?;
    for row in matrix {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

/// `w*_dm = w_dm / √(Σ_d' w²_d'm + 1)`, row by row.
pub fn standardize_slopes(w: &SlopeMatrix) -> SlopeMatrix {
    let rows: Vec<Vec<f64>> = (0..w.n_vars())
        .map(|m| {
            let row = w.row(m);
            let scale = (row.iter().map(|v| v * v).sum::<f64>() + 1.0).sqrt();
            row.iter().map(|v| v / scale).collect()
        })
        .collect();
    SlopeMatrix::from_rows(&rows, w.dim()).expect("same shape")
}

/// `σ(b)` elementwise: the positive-response probability at the median trait.
pub fn median_probabilities(b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    b.iter().map(|row| row.iter().map(|&v| sigmoid(v)).collect()).collect()
}

/// Everything the `diagnose` command reports for a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub bic: f64,
    pub bic_star: f64,
    pub chi_sq: Option<ChiSquareTest>,
    pub sspr: Vec<(u64, f64)>,
    /// M×G.
    pub median_probs: Vec<Vec<f64>>,
    /// Per group, M×D.
    pub std_slopes: Vec<Vec<Vec<f64>>>,
    /// Per group, M×M.
    pub lift: Vec<Vec<Vec<f64>>>,
}

impl FitDiagnostics {
    /// Computes every diagnostic with `q_points` quadrature nodes per dimension.
    /// The chi-square test is skipped for M above [`MAX_CHI_SQUARE_VARS`].
    pub fn compute(
        data: &BinaryDataMatrix,
        params: &MltaParameters,
        q_points: usize,
        thresholds: &[u64],
    ) -> Result<Self> {
        if data.n_vars() != params.n_vars() {
            return arg_err("data and parameters differ in number of variables");
        }
        let d = params.dim();
        let rule = gauss_hermite(q_points, d.max(1))?;
        let n_obs = data.effective_n();
        let table = expected_frequencies(&pattern_table(data), params, &rule, n_obs)?;
        let loglik = crate::quadrature::gh_loglik(data, params, &rule_for(params, &rule)?)?;
        let (k, k_star) = count_params(&params.spec(), data.n_vars());
        let (bic, bic_star) = information_criteria(loglik, k, k_star, &params.eta, n_obs)?;
        let chi_sq = if data.n_vars() <= MAX_CHI_SQUARE_VARS {
            Some(chi_square_from_table(&table, n_obs, params)?)
        } else {
            None
        };
        let groups = 0..params.n_groups();
        Ok(Self {
            bic,
            bic_star,
            chi_sq,
            sspr: thresholds.iter().map(|&t| (t, sspr_from_table(&table, t))).collect(),
            median_probs: median_probabilities(&params.intercept_table()),
            std_slopes: groups
                .clone()
                .map(|g| standardize_slopes(params.slopes.for_group(g)).to_rows())
                .collect(),
            lift: groups.map(|g| lift_matrix(params, g, &rule)).collect::<Result<_>>()?,
        })
    }
}
