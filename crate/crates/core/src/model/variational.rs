//! Quadratic lower bound on the logistic likelihood and the Gaussian trait
//! posterior it induces.
//!
//! For fixed variational parameters `ξ` the bound is quadratic in `y`, so
//! within each group the posterior of the trait is Gaussian with covariance
//! `C = [I - 2 Σ_m λ(ξ_m) w_m w_mᵀ]⁻¹` and the integral over `y` is closed form.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{dot, MltaParameters};
use crate::data::BinaryDataMatrix;
use crate::error::{MltaError, Result};
use crate::math::{jj_lambda, log_sigmoid, log_sum_exp, sigmoid};

/// Initial value of every variational parameter.
pub const INITIAL_XI: f64 = 20.0;

const MIN_XI_SQ: f64 = 1e-24;

/// `σ(b + wᵀy)`.
pub fn response_prob(b: f64, w: &[f64], y: &[f64]) -> f64 {
    sigmoid(b + dot(w, y))
}

/// Log of the variational lower bound on `p(x | y)` at variational parameter `xi`.
pub fn variational_term(x: u8, b: f64, w: &[f64], y: &[f64], xi: f64) -> f64 {
    let eta = b + dot(w, y);
    let a = if x == 1 { eta } else { -eta };
    let lam = jj_lambda(xi);
    log_sigmoid(xi) + 0.5 * (a - xi) + lam * (a * a - xi * xi)
}

/// Gaussian posterior of the trait for one row and group.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub mean: Vec<f64>,
    /// Row-major D×D.
    pub cov: Vec<f64>,
}

impl PosteriorMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Prior moments, `N(0, I)`.
    pub fn standard(dim: usize) -> Self {
        let mut cov = vec![0.0; dim * dim];
        for d in 0..dim {
            cov[d * dim + d] = 1.0;
        }
        Self {
            mean: vec![0.0; dim],
            cov,
        }
    }
}

/// Terms of the bound that do not involve the trait.
fn trait_free_terms(x_row: &[u8], params: &MltaParameters, g: usize, xi_row: &[f64]) -> f64 {
    x_row
        .iter()
        .zip(xi_row)
        .enumerate()
        .map(|(m, (&x, &xi))| {
            let lam = jj_lambda(xi);
            let b = params.intercept(g, m);
            log_sigmoid(xi) - 0.5 * xi - lam * xi * xi + (x as f64 - 0.5) * b + lam * b * b
        })
        .sum()
}

/// Posterior moments and the bound `L(ξ_ng)` computed from the same `(ξ, θ)`.
pub(crate) fn posterior_and_bound(
    x_row: &[u8],
    params: &MltaParameters,
    g: usize,
    xi_row: &[f64],
) -> Result<(PosteriorMoments, f64)> {
    let d = params.dim();
    let constant = trait_free_terms(x_row, params, g, xi_row);
    if d == 0 {
        return Ok((PosteriorMoments::standard(0), constant));
    }
    let mut prec = DMatrix::<f64>::identity(d, d);
    let mut r = DVector::<f64>::zeros(d);
    for (m, (&x, &xi)) in x_row.iter().zip(xi_row).enumerate() {
        let lam = jj_lambda(xi);
        let w = params.slope(g, m);
        let c = x as f64 - 0.5 + 2.0 * lam * params.intercept(g, m);
        for i in 0..d {
            r[i] += c * w[i];
            for j in 0..d {
                prec[(i, j)] -= 2.0 * lam * w[i] * w[j];
            }
        }
    }
    let chol = prec
        .cholesky()
        .ok_or_else(|| MltaError::Numerical(format!("posterior precision not SPD in group {g}")))?;
    let log_det_prec: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let mean = chol.solve(&r);
    let cov = chol.inverse();
    let bound = constant - 0.5 * log_det_prec + 0.5 * r.dot(&mean);
    let moments = PosteriorMoments {
        mean: mean.iter().copied().collect(),
        cov: cov.transpose().iter().copied().collect(),
    };
    Ok((moments, bound))
}

/// `C` and `μ` of the trait posterior for one row in group `g`.
pub fn posterior_update(x_row: &[u8], params: &MltaParameters, g: usize, xi_row: &[f64]) -> Result<PosteriorMoments> {
    posterior_and_bound(x_row, params, g, xi_row).map(|(p, _)| p)
}

/// `√E[(b + wᵀy)²]` under the given posterior; the optimal `ξ` for `(g, m)`.
pub fn xi_update(params: &MltaParameters, g: usize, m: usize, moments: &PosteriorMoments) -> f64 {
    let d = moments.dim();
    let w = params.slope(g, m);
    let b = params.intercept(g, m);
    let wm = dot(w, &moments.mean);
    let mut quad = wm * wm;
    for i in 0..d {
        quad += w[i] * dot(&moments.cov[i * d..(i + 1) * d], w);
    }
    (quad + 2.0 * b * wm + b * b).max(MIN_XI_SQ).sqrt()
}

/// `L(ξ_ng)`, the log of the bound integrated against the prior, evaluated at
/// the supplied posterior moments.
pub fn lower_bound(
    x_row: &[u8],
    params: &MltaParameters,
    g: usize,
    xi_row: &[f64],
    moments: &PosteriorMoments,
) -> Result<f64> {
    let constant = trait_free_terms(x_row, params, g, xi_row);
    let d = moments.dim();
    if d == 0 {
        return Ok(constant);
    }
    let cov = DMatrix::from_row_slice(d, d, &moments.cov);
    let chol = cov
        .cholesky()
        .ok_or_else(|| MltaError::Numerical("posterior covariance not SPD".into()))?;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let mu = DVector::from_column_slice(&moments.mean);
    let quad = mu.dot(&chol.solve(&mu));
    Ok(constant + 0.5 * log_det + 0.5 * quad)
}

/// Responsibilities `z_ng ∝ η_g exp(L_ng)` for a flat N×G table of bounds.
pub fn estep_responsibilities(eta: &[f64], bounds: &[f64]) -> Vec<f64> {
    responsibilities_and_loglik(eta, bounds, None).0
}

/// Responsibilities together with `Σ_n w_n log Σ_g η_g exp(L_ng)`.
pub(crate) fn responsibilities_and_loglik(eta: &[f64], bounds: &[f64], weights: Option<&[u64]>) -> (Vec<f64>, f64) {
    let g = eta.len();
    let log_eta: Vec<f64> = eta.iter().map(|e| e.ln()).collect();
    let mut z = vec![0.0; bounds.len()];
    let mut total = 0.0;
    for (n, (zr, br)) in z.chunks_mut(g).zip(bounds.chunks(g)).enumerate() {
        for ((zv, b), le) in zr.iter_mut().zip(br).zip(&log_eta) {
            *zv = le + b;
        }
        let lse = log_sum_exp(zr);
        for zv in zr.iter_mut() {
            *zv = (*zv - lse).exp();
        }
        total += weights.map_or(1.0, |w| w[n] as f64) * lse;
    }
    (z, total)
}

/// Per-fit working set. Tables are flat and row-major: `z` is N×G, `xi` is
/// N×G×M, `mu` is N×G×D and `cov` is N×G×D×D.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    n_rows: usize,
    n_groups: usize,
    n_vars: usize,
    dim: usize,
    pub z: Vec<f64>,
    pub xi: Vec<f64>,
    pub mu: Vec<f64>,
    pub cov: Vec<f64>,
}

impl VariationalState {
    /// State with the given responsibilities, `ξ` at its initial value and
    /// prior trait moments.
    pub fn new(n_rows: usize, n_groups: usize, n_vars: usize, dim: usize, z: Vec<f64>) -> Result<Self> {
        if z.len() != n_rows * n_groups {
            return Err(MltaError::Argument(format!(
                "responsibilities have {} entries, expected {}",
                z.len(),
                n_rows * n_groups
            )));
        }
        let prior = PosteriorMoments::standard(dim);
        Ok(Self {
            n_rows,
            n_groups,
            n_vars,
            dim,
            z,
            xi: vec![INITIAL_XI; n_rows * n_groups * n_vars],
            mu: vec![0.0; n_rows * n_groups * dim],
            cov: prior.cov.repeat(n_rows * n_groups),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn z_row(&self, n: usize) -> &[f64] {
        &self.z[n * self.n_groups..(n + 1) * self.n_groups]
    }

    pub fn xi_row(&self, n: usize, g: usize) -> &[f64] {
        let start = (n * self.n_groups + g) * self.n_vars;
        &self.xi[start..start + self.n_vars]
    }

    pub fn mean(&self, n: usize, g: usize) -> &[f64] {
        let start = (n * self.n_groups + g) * self.dim;
        &self.mu[start..start + self.dim]
    }

    pub fn covariance(&self, n: usize, g: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        let start = (n * self.n_groups + g) * dd;
        &self.cov[start..start + dd]
    }

    pub fn moments(&self, n: usize, g: usize) -> PosteriorMoments {
        PosteriorMoments {
            mean: self.mean(n, g).to_vec(),
            cov: self.covariance(n, g).to_vec(),
        }
    }

    /// Recomputes `μ` and `C` for every row and group and returns the N×G
    /// table of bounds they imply.
    pub fn refresh_posterior(&mut self, data: &BinaryDataMatrix, params: &MltaParameters) -> Result<Vec<f64>> {
        let (gs, d) = (self.n_groups, self.dim);
        let rows: Vec<Vec<(PosteriorMoments, f64)>> = (0..self.n_rows)
            .into_par_iter()
            .map(|n| {
                (0..gs)
                    .map(|g| posterior_and_bound(data.row(n), params, g, self.xi_row(n, g)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let mut bounds = Vec::with_capacity(self.n_rows * gs);
        for (n, row) in rows.into_iter().enumerate() {
            for (g, (post, bound)) in row.into_iter().enumerate() {
                let k = n * gs + g;
                self.mu[k * d..(k + 1) * d].copy_from_slice(&post.mean);
                self.cov[k * d * d..(k + 1) * d * d].copy_from_slice(&post.cov);
                bounds.push(bound);
            }
        }
        Ok(bounds)
    }

    /// Sets every `ξ` to its optimum under the current posterior moments.
    pub fn update_xi(&mut self, params: &MltaParameters) {
        let (gs, m_count, d) = (self.n_groups, self.n_vars, self.dim);
        let mu = &self.mu;
        let cov = &self.cov;
        self.xi.par_chunks_mut(m_count).enumerate().for_each(|(k, xi_row)| {
            let g = k % gs;
            let moments = PosteriorMoments {
                mean: mu[k * d..(k + 1) * d].to_vec(),
                cov: cov[k * d * d..(k + 1) * d * d].to_vec(),
            };
            for (m, xi) in xi_row.iter_mut().enumerate() {
                *xi = xi_update(params, g, m, &moments);
            }
        });
    }

    /// Reorders groups so that group `g` of the result is group `order[g]` of `self`.
    pub fn permute_groups(&mut self, order: &[usize]) {
        let (gs, m, d) = (self.n_groups, self.n_vars, self.dim);
        let permute = |table: &mut Vec<f64>, width: usize| {
            let old = table.clone();
            for n in 0..self.n_rows {
                for (new_g, &old_g) in order.iter().enumerate() {
                    let dst = (n * gs + new_g) * width;
                    let src = (n * gs + old_g) * width;
                    table[dst..dst + width].copy_from_slice(&old[src..src + width]);
                }
            }
        };
        permute(&mut self.z, 1);
        permute(&mut self.xi, m);
        permute(&mut self.mu, d);
        permute(&mut self.cov, d * d);
    }

    /// Drops row `n` from every table.
    pub fn without_row(&self, n: usize) -> Self {
        let (gs, m, d) = (self.n_groups, self.n_vars, self.dim);
        let cut = |table: &[f64], width: usize| {
            let w = gs * width;
            let mut out = table[..n * w].to_vec();
            out.extend_from_slice(&table[(n + 1) * w..]);
            out
        };
        Self {
            n_rows: self.n_rows - 1,
            n_groups: gs,
            n_vars: m,
            dim: d,
            z: cut(&self.z, 1),
            xi: cut(&self.xi, m),
            mu: cut(&self.mu, d),
            cov: cut(&self.cov, d * d),
        }
    }
}
