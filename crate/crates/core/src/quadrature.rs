//! Gauss–Hermite rules for the standard normal and likelihood evaluators
//! built on them.
//!
//! Rules follow the probabilist convention: nodes and weights integrate
//! against the N(0, 1) density and the weights sum to one. The trait is then
//! treated as discrete, so the marginal density of a response vector is a
//! finite mixture over groups and grid points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::BinaryDataMatrix;
use crate::error::{arg_err, Result};
use crate::math::{log_sigmoid, log_sum_exp};
use crate::model::MltaParameters;

/// Default number of nodes per trait dimension for final log-likelihoods.
pub const DEFAULT_QUADRATURE_POINTS: usize = 5;

/// Tensor-product quadrature rule for the D-dimensional standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Builds a rule from explicit row-major points and weights.
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != dim * weights.len() {
            return arg_err("point array does not match dim × number of weights");
        }
        Ok(Self { dim, points, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, q: usize) -> &[f64] {
        &self.points[q * self.dim..(q + 1) * self.dim]
    }

    pub fn weight(&self, q: usize) -> f64 {
        self.weights[q]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// One-dimensional Gauss–Hermite rule with `q_points` nodes for N(0, 1).
///
/// Nodes come from Newton iteration on the orthonormal Hermite recurrence
/// (physicist scaling) and are then mapped to `y = √2 t`, `h = w / √π`.
pub fn hermite_rule(q_points: usize) -> Result<QuadratureRule> {
    if q_points == 0 {
        return arg_err("a quadrature rule needs at least one point");
    }
    let n = q_points;
    let nf = n as f64;
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    let mut z = 0.0_f64;

    for i in 0..half {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut derivative = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            derivative = (2.0 * nf).sqrt() * p2;
            let step = p1 / derivative;
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        if 2 * i + 1 == n {
            z = 0.0;
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (derivative * derivative);
        weights[n - 1 - i] = weights[i];
    }

    // Physicist nodes come out in decreasing order.
    nodes.reverse();
    weights.reverse();
    let scale = std::f64::consts::SQRT_2;
    let points = nodes.iter().map(|t| t * scale).collect();
    let total: f64 = weights.iter().sum();
    let weights = weights.iter().map(|w| w / total).collect();
    QuadratureRule::new(1, points, weights)
}

/// Q^D product grid of a one-dimensional rule.
pub fn tensor_grid(rule: &QuadratureRule, dim: usize) -> Result<QuadratureRule> {
    if rule.dim != 1 {
        return arg_err("tensor_grid expects a one-dimensional rule");
    }
    if dim == 0 {
        return arg_err("a tensor grid needs D >= 1");
    }
    let q = rule.len();
    let total = q.pow(dim as u32);
    let mut points = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    let mut index = vec![0usize; dim];
    for _ in 0..total {
        let mut w = 1.0;
        for &i in &index {
            points.push(rule.points[i]);
            w *= rule.weights[i];
        }
        weights.push(w);
        for slot in index.iter_mut().rev() {
            *slot += 1;
            if *slot < q {
                break;
            }
            *slot = 0;
        }
    }
    QuadratureRule::new(dim, points, weights)
}

/// Gauss–Hermite grid with `q_points` per dimension for a `dim`-dimensional trait.
pub fn gauss_hermite(q_points: usize, dim: usize) -> Result<QuadratureRule> {
    tensor_grid(&hermite_rule(q_points)?, dim)
}

/// Per-group log-densities of response vectors under a discretized trait.
///
/// Holds `ln σ(±(b_mg + w_mgᵀ y_q))` for every group, node and variable so
/// that a row costs G·Q·M additions.
pub struct ComponentLikelihood<'a> {
    params: &'a MltaParameters,
    n_nodes: usize,
    log_node_weights: Vec<f64>,
    // [g][q][m] -> (ln p(x=0), ln p(x=1))
    table: Vec<(f64, f64)>,
}

impl<'a> ComponentLikelihood<'a> {
    /// `rule` may be `None` only when the model has no trait.
    pub fn new(params: &'a MltaParameters, rule: Option<&QuadratureRule>) -> Result<Self> {
        let (g, m, d) = (params.n_groups(), params.n_vars(), params.dim());
        let (points, log_node_weights, n_nodes): (Vec<Vec<f64>>, Vec<f64>, usize) = if d == 0 {
            (vec![Vec::new()], vec![0.0], 1)
        } else {
            let rule = match rule {
                Some(r) => r,
                None => return arg_err("a quadrature rule is required when D >= 1"),
            };
            if rule.dim != d {
                return arg_err(format!(
                    "quadrature dimension {} does not match trait dimension {d}",
                    rule.dim
                ));
            }
            (
                (0..rule.len()).map(|q| rule.point(q).to_vec()).collect(),
                rule.weights.iter().map(|w| w.ln()).collect(),
                rule.len(),
            )
        };
        let mut table = Vec::with_capacity(g * n_nodes * m);
        for k in 0..g {
            for y in &points {
                for v in 0..m {
                    let a = params.linear_predictor(k, v, y);
                    table.push((log_sigmoid(-a), log_sigmoid(a)));
                }
            }
        }
        Ok(Self {
            params,
            n_nodes,
            log_node_weights,
            table,
        })
    }

    /// `ln p(x | z_g = 1)` for every group.
    pub fn log_component(&self, row: &[u8]) -> Vec<f64> {
        let m = self.params.n_vars();
        let mut terms = vec![0.0; self.n_nodes];
        (0..self.params.n_groups())
            .map(|g| {
                for (q, t) in terms.iter_mut().enumerate() {
                    let base = (g * self.n_nodes + q) * m;
                    let cells = &self.table[base..base + m];
                    *t = self.log_node_weights[q]
                        + row
                            .iter()
                            .zip(cells)
                            .map(|(&x, &(l0, l1))| if x == 1 { l1 } else { l0 })
                            .sum::<f64>();
                }
                log_sum_exp(&terms)
            })
            .collect()
    }

    /// `ln Σ_g η_g p(x | z_g = 1)`.
    pub fn log_marginal(&self, row: &[u8]) -> f64 {
        let terms: Vec<f64> = self
            .log_component(row)
            .into_iter()
            .zip(&self.params.eta)
            .map(|(l, e)| l + e.ln())
            .collect();
        log_sum_exp(&terms)
    }
}

fn weighted_sum(data: &BinaryDataMatrix, per_row: impl Fn(&[u8]) -> f64 + Sync) -> f64 {
    let contributions: Vec<f64> = (0..data.n_rows())
        .into_par_iter()
        .map(|n| data.weight(n) * per_row(data.row(n)))
        .collect();
    contributions.iter().sum()
}

fn check_vars(data: &BinaryDataMatrix, params: &MltaParameters) -> Result<()> {
    if data.n_vars() != params.n_vars() {
        return arg_err(format!(
            "data has {} variables, parameters have {}",
            data.n_vars(),
            params.n_vars()
        ));
    }
    Ok(())
}

/// Log-likelihood with the trait integrated by `rule`. For D = 0 the rule is
/// ignored and the latent-class likelihood is returned.
pub fn gh_loglik(data: &BinaryDataMatrix, params: &MltaParameters, rule: &QuadratureRule) -> Result<f64> {
    check_vars(data, params)?;
    let eval = ComponentLikelihood::new(params, Some(rule))?;
    Ok(weighted_sum(data, |row| eval.log_marginal(row)))
}

/// Monte Carlo log-likelihood estimate and its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub loglik: f64,
    pub std_error: f64,
}

/// Log-likelihood with the trait integrated by `draws` standard-normal
/// samples shared across rows. Deterministic for a given seed.
pub fn mc_loglik(data: &BinaryDataMatrix, params: &MltaParameters, draws: usize, seed: u64) -> Result<McEstimate> {
    check_vars(data, params)?;
    let d = params.dim();
    if d == 0 {
        return arg_err("Monte Carlo evaluation needs D >= 1");
    }
    if draws == 0 {
        return arg_err("at least one draw is required");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<f64> = (0..draws * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let (g_count, m) = (params.n_groups(), params.n_vars());

    // Per row: densities f_nl = Σ_g η_g p(x_n | y_l, g) for every draw.
    let per_row: Vec<(f64, Vec<f64>)> = (0..data.n_rows())
        .into_par_iter()
        .map(|n| {
            let row = data.row(n);
            let log_f: Vec<f64> = (0..draws)
                .map(|l| {
                    let y = &points[l * d..(l + 1) * d];
                    let terms: Vec<f64> = (0..g_count)
                        .map(|g| {
                            params.eta[g].ln()
                                + (0..m)
                                    .map(|v| {
                                        let a = params.linear_predictor(g, v, y);
                                        if row[v] == 1 {
                                            log_sigmoid(a)
                                        } else {
                                            log_sigmoid(-a)
                                        }
                                    })
                                    .sum::<f64>()
                        })
                        .collect();
                    log_sum_exp(&terms)
                })
                .collect();
            let log_mean = log_sum_exp(&log_f) - (draws as f64).ln();
            // Ratios f_nl / mean_l f_nl, for the standard error.
            let ratios = log_f.iter().map(|lf| (lf - log_mean).exp()).collect();
            (log_mean, ratios)
        })
        .collect();

    let loglik = per_row.iter().enumerate().map(|(n, (lm, _))| data.weight(n) * lm).sum();
    let totals: Vec<f64> = (0..draws)
        .map(|l| {
            per_row
                .iter()
                .enumerate()
                .map(|(n, (_, r))| data.weight(n) * r[l])
                .sum()
        })
        .collect();
    let mean = totals.iter().sum::<f64>() / draws as f64;
    let var = if draws > 1 {
        totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (draws as f64 - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        loglik,
        std_error: (var / draws as f64).sqrt(),
    })
}

/// Brute-force trapezoid integration of `p(x | y) φ(y)` over `[-h, h]^D`,
/// for D ∈ {1, 2}. Used as an independent reference for the quadrature path.
pub fn oracle_loglik(
    data: &BinaryDataMatrix,
    params: &MltaParameters,
    grid_halfwidth: f64,
    grid_points: usize,
) -> Result<f64> {
    check_vars(data, params)?;
    let d = params.dim();
    if !(1..=2).contains(&d) {
        return arg_err(format!("trapezoid reference supports D = 1 or 2, got {d}"));
    }
    if grid_points < 101 {
        return arg_err("trapezoid reference needs at least 101 grid points");
    }
    if !(grid_halfwidth > 0.0) {
        return arg_err("grid half-width must be positive");
    }
    let step = 2.0 * grid_halfwidth / (grid_points - 1) as f64;
    let axis: Vec<(f64, f64)> = (0..grid_points)
        .map(|i| {
            let y = -grid_halfwidth + step * i as f64;
            let end = i == 0 || i == grid_points - 1;
            let w = if end { 0.5 * step } else { step };
            let log_phi = -0.5 * y * y - 0.5 * (2.0 * std::f64::consts::PI).ln();
            (y, w.ln() + log_phi)
        })
        .collect();
    let grid: Vec<(Vec<f64>, f64)> = if d == 1 {
        axis.iter().map(|&(y, lw)| (vec![y], lw)).collect()
    } else {
        axis.iter()
            .flat_map(|&(y1, l1)| axis.iter().map(move |&(y2, l2)| (vec![y1, y2], l1 + l2)))
            .collect()
    };

    let per_row = |row: &[u8]| -> f64 {
        let mut group_terms = Vec::with_capacity(params.n_groups());
        let mut node_terms = vec![0.0; grid.len()];
        for g in 0..params.n_groups() {
            for (t, (y, lw)) in node_terms.iter_mut().zip(&grid) {
                let mut s = *lw;
                for (m, &x) in row.iter().enumerate() {
                    let mut a = params.intercepts[g][m];
                    for (wd, yd) in params.slope(g, m).iter().zip(y) {
                        a += wd * yd;
                    }
                    let signed = if x == 1 { a } else { -a };
                    // ln(1 + e^{-s}) written out for both signs.
                    s -= if signed >= 0.0 {
                        (-signed).exp().ln_1p()
                    } else {
                        -signed + signed.exp().ln_1p()
                    };
                }
                *t = s;
            }
            group_terms.push(params.eta[g].ln() + log_sum_exp(&node_terms));
        }
        log_sum_exp(&group_terms)
    };
    Ok(weighted_sum(data, per_row))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SlopeMatrix, Slopes};

    fn double_factorial(k: i64) -> f64 {
        if k <= 0 {
            1.0
        } else {
            k as f64 * double_factorial(k - 2)
        }
    }

    #[test]
    fn small_rules_match_moment_solutions() {
        let r1 = hermite_rule(1).unwrap();
        assert_eq!(r1.point(0), &[0.0]);
        assert!((r1.weight(0) - 1.0).abs() < 1e-15);

        let r2 = hermite_rule(2).unwrap();
        assert!((r2.point(0)[0] + 1.0).abs() < 1e-14 && (r2.point(1)[0] - 1.0).abs() < 1e-14);
        assert!((r2.weight(0) - 0.5).abs() < 1e-14 && (r2.weight(1) - 0.5).abs() < 1e-14);

        let r3 = hermite_rule(3).unwrap();
        let s3 = 3f64.sqrt();
        let expected = [(-s3, 1.0 / 6.0), (0.0, 2.0 / 3.0), (s3, 1.0 / 6.0)];
        for (q, (y, h)) in expected.iter().enumerate() {
            assert!((r3.point(q)[0] - y).abs() < 1e-13);
            assert!((r3.weight(q) - h).abs() < 1e-13);
        }
    }

    #[test]
    fn rules_integrate_normal_moments_exactly() {
        for q in 1..=20 {
            let r = hermite_rule(q).unwrap();
            assert!((r.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..2 * q {
                let approx: f64 = (0..r.len()).map(|i| r.weight(i) * r.point(i)[0].powi(k as i32)).sum();
                let exact = if k % 2 == 1 {
                    0.0
                } else {
                    double_factorial(k as i64 - 1)
                };
                // Odd moments cancel between terms of size E|y|^k.
                let scale: f64 = (0..r.len())
                    .map(|i| r.weight(i) * r.point(i)[0].abs().powi(k as i32))
                    .sum();
                let tol = 1e-10 * scale.max(1.0);
                assert!((approx - exact).abs() <= tol, "Q={q} k={k}: {approx} vs {exact}");
            }
        }
    }

    #[test]
    fn rules_are_sign_symmetric() {
        for q in [4, 7, 21, 41] {
            let r = hermite_rule(q).unwrap();
            for i in 0..q {
                assert_eq!(r.point(i)[0], -r.point(q - 1 - i)[0]);
                assert_eq!(r.weight(i), r.weight(q - 1 - i));
            }
        }
    }

    #[test]
    fn zero_points_is_an_error() {
        assert!(hermite_rule(0).is_err());
        assert!(tensor_grid(&hermite_rule(3).unwrap(), 0).is_err());
    }

    #[test]
    fn tensor_grids() {
        let g = gauss_hermite(2, 2).unwrap();
        assert_eq!(g.len(), 4);
        for q in 0..4 {
            assert!(g.point(q).iter().all(|v| (v.abs() - 1.0).abs() < 1e-14));
            assert!((g.weight(q) - 0.25).abs() < 1e-14);
        }
        let degenerate = gauss_hermite(1, 3).unwrap();
        assert_eq!(degenerate.len(), 1);
        assert_eq!(degenerate.point(0), &[0.0, 0.0, 0.0]);
        let g9 = gauss_hermite(3, 2).unwrap();
        assert_eq!(g9.len(), 9);
        assert!((g9.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn fair_coin_row() {
        let data = BinaryDataMatrix::from_rows(vec![vec![0; 6]]).unwrap();
        let p = MltaParameters::without_trait(vec![1.0], vec![vec![0.0; 6]], 1).unwrap();
        let ll = gh_loglik(&data, &p, &gauss_hermite(5, 1).unwrap()).unwrap();
        assert!((ll - 6.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let data = BinaryDataMatrix::from_rows(vec![vec![0, 1]]).unwrap();
        let p = MltaParameters::without_trait(vec![1.0], vec![vec![0.0; 2]], 2).unwrap();
        assert!(gh_loglik(&data, &p, &gauss_hermite(3, 1).unwrap()).is_err());
        let lca = MltaParameters::without_trait(vec![1.0], vec![vec![0.0; 2]], 0).unwrap();
        assert!(mc_loglik(&data, &lca, 10, 0).is_err());
        let d3 = MltaParameters::new(
            vec![1.0],
            vec![vec![0.0; 2]],
            Slopes::Free(vec![SlopeMatrix::zeros(2, 3)]),
        )
        .unwrap();
        assert!(oracle_loglik(&data, &d3, 6.0, 201).is_err());
    }

    #[test]
    fn oracle_recovers_half_for_symmetric_logistic() {
        let data = BinaryDataMatrix::from_rows(vec![vec![1]]).unwrap();
        let p = MltaParameters::new(
            vec![1.0],
            vec![vec![0.0]],
            Slopes::Free(vec![SlopeMatrix::from_rows(&[vec![1.0]], 1).unwrap()]),
        )
        .unwrap();
        let ll = oracle_loglik(&data, &p, 10.0, 2001).unwrap();
        assert!((ll.exp() - 0.5).abs() < 1e-6);
    }
}
