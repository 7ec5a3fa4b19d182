//! Closed-form parameter updates given responsibilities, `ξ` and the trait
//! posterior moments.
//!
//! For one variable the expected bound is a concave quadratic
//! `θᵀγ + θᵀKθ` in the stacked parameter `θ = (w, b_g...)`, maximized by
//! solving `(-2K) θ = γ`. Free slopes use one block per group; common slopes
//! stack the shared `w_m` with every group's intercept.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{MltaParameters, SlopeMatrix, Slopes, VariationalState};
use crate::data::BinaryDataMatrix;
use crate::error::{arg_err, Result};
use crate::math::jj_lambda;

/// Largest intercept magnitude kept after an update.
pub const INTERCEPT_BOUND: f64 = 35.0;

const PINV_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MstepOutput {
    /// Updated intercepts and slopes; `eta` is carried over unchanged.
    pub params: MltaParameters,
    /// Systems that needed the pseudo-inverse.
    pub warnings: Vec<String>,
    /// Number of intercepts held at `±INTERCEPT_BOUND`.
    pub clamped: usize,
}

/// Accumulated quadratic `θᵀγ + θᵀKθ` for one variable over a set of groups.
struct Block {
    dim: usize,
    k: DMatrix<f64>,
    gamma: DVector<f64>,
}

impl Block {
    fn build(data: &BinaryDataMatrix, state: &VariationalState, m: usize, groups: &[usize]) -> Self {
        let d = state.dim();
        let p = d + groups.len();
        let mut k = DMatrix::<f64>::zeros(p, p);
        let mut gamma = DVector::<f64>::zeros(p);
        for (slot, &g) in groups.iter().enumerate() {
            let j = d + slot;
            for n in 0..data.n_rows() {
                let wz = data.weight(n) * state.z_row(n)[g];
                if wz == 0.0 {
                    continue;
                }
                let lam = wz * jj_lambda(state.xi_row(n, g)[m]);
                let h = wz * (data.row(n)[m] as f64 - 0.5);
                let mu = state.mean(n, g);
                let cov = state.covariance(n, g);
                for a in 0..d {
                    gamma[a] += h * mu[a];
                    k[(a, j)] += lam * mu[a];
                    for b in 0..d {
                        k[(a, b)] += lam * (cov[a * d + b] + mu[a] * mu[b]);
                    }
                }
                gamma[j] += h;
                k[(j, j)] += lam;
            }
            for a in 0..d {
                k[(j, a)] = k[(a, j)];
            }
        }
        Self { dim: d, k, gamma }
    }

    /// Maximizer over the coordinates not in `fixed`, with fixed coordinates
    /// held at the values in `theta`.
    fn solve(&self, theta: &DVector<f64>, fixed: &[bool], warnings: &mut Vec<String>, label: &str) -> DVector<f64> {
        let free: Vec<usize> = (0..theta.len()).filter(|&i| !fixed[i]).collect();
        let mut out = theta.clone();
        if free.is_empty() {
            return out;
        }
        let f = free.len();
        let mut a = DMatrix::<f64>::zeros(f, f);
        let mut rhs = DVector::<f64>::zeros(f);
        for (r, &i) in free.iter().enumerate() {
            rhs[r] = self.gamma[i];
            for (c, &j) in free.iter().enumerate() {
                a[(r, c)] = -2.0 * self.k[(i, j)];
            }
            for j in (0..theta.len()).filter(|&j| fixed[j]) {
                rhs[r] += 2.0 * self.k[(i, j)] * theta[j];
            }
        }
        let sol = match a.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => {
                warnings.push(format!("singular update system for {label}; pseudo-inverse used"));
                match a.pseudo_inverse(PINV_EPS) {
                    Ok(pinv) => pinv * rhs,
                    Err(_) => return out,
                }
            }
        };
        if sol.iter().any(|v| !v.is_finite()) {
            warnings.push(format!("non-finite update for {label}; parameters kept"));
            return out;
        }
        for (r, &i) in free.iter().enumerate() {
            out[i] = sol[r];
        }
        out
    }

    /// Maximizes the quadratic subject to `|b| ≤ INTERCEPT_BOUND`.
    ///
    /// Each round solves for the unfixed coordinates, then walks from the
    /// current feasible point towards that solution only as far as the bound
    /// allows and pins the intercepts that hit it. Every step stays on a
    /// segment of a concave quadratic, so the objective never decreases.
    fn maximize(&self, start: DVector<f64>, warnings: &mut Vec<String>, label: &str) -> (DVector<f64>, usize) {
        let p = start.len();
        let mut fixed = vec![false; p];
        let mut theta = start;
        for _ in 0..=p - self.dim {
            let target = self.solve(&theta, &fixed, warnings, label);
            let mut t = 1.0_f64;
            let mut hit = None;
            for i in self.dim..p {
                let (from, to) = (theta[i], target[i]);
                if to.abs() > INTERCEPT_BOUND {
                    let edge = INTERCEPT_BOUND.copysign(to);
                    let s = ((edge - from) / (to - from)).clamp(0.0, 1.0);
                    if s < t {
                        t = s;
                        hit = Some(i);
                    }
                }
            }
            theta += (target - &theta) * t;
            match hit {
                None => break,
                Some(_) => {
                    for i in self.dim..p {
                        if theta[i].abs() >= INTERCEPT_BOUND * (1.0 - 1e-12) {
                            theta[i] = INTERCEPT_BOUND.copysign(theta[i]);
                            fixed[i] = true;
                        }
                    }
                }
            }
        }
        let clamped = (self.dim..p).filter(|&i| fixed[i]).count();
        (theta, clamped)
    }
}

fn check_shapes(data: &BinaryDataMatrix, params: &MltaParameters, state: &VariationalState) -> Result<()> {
    if data.n_vars() != params.n_vars()
        || data.n_rows() != state.n_rows()
        || state.n_groups() != params.n_groups()
        || state.dim() != params.dim()
    {
        return arg_err("data, parameters and variational state disagree in shape");
    }
    Ok(())
}

/// Per-group update of `(w_mg, b_mg)` for every variable and group.
pub fn mstep_free(data: &BinaryDataMatrix, params: &MltaParameters, state: &VariationalState) -> Result<MstepOutput> {
    check_shapes(data, params, state)?;
    let (g_count, m_count, d) = (params.n_groups(), params.n_vars(), params.dim());
    let solved: Vec<(DVector<f64>, usize, Vec<String>)> = (0..g_count * m_count)
        .into_par_iter()
        .map(|k| {
            let (g, m) = (k / m_count, k % m_count);
            let block = Block::build(data, state, m, &[g]);
            let mut start = DVector::<f64>::zeros(d + 1);
            for (a, w) in params.slope(g, m).iter().enumerate() {
                start[a] = *w;
            }
            start[d] = params.intercept(g, m).clamp(-INTERCEPT_BOUND, INTERCEPT_BOUND);
            let mut warnings = Vec::new();
            let (theta, clamped) = block.maximize(start, &mut warnings, &format!("variable {m}, group {g}"));
            (theta, clamped, warnings)
        })
        .collect();

    let mut intercepts = vec![vec![0.0; m_count]; g_count];
    let mut slopes = vec![SlopeMatrix::zeros(m_count, d); g_count];
    let mut warnings = Vec::new();
    let mut clamped = 0;
    for (k, (theta, c, w)) in solved.into_iter().enumerate() {
        let (g, m) = (k / m_count, k % m_count);
        slopes[g].row_mut(m).copy_from_slice(&theta.as_slice()[..d]);
        intercepts[g][m] = theta[d];
        clamped += c;
        warnings.extend(w);
    }
    Ok(MstepOutput {
        params: MltaParameters {
            eta: params.eta.clone(),
            intercepts,
            slopes: Slopes::Free(slopes),
        },
        warnings,
        clamped,
    })
}

/// Joint update of the shared slope `w_m` and all intercepts `b_m·`, one
/// variable at a time.
pub fn mstep_common(data: &BinaryDataMatrix, params: &MltaParameters, state: &VariationalState) -> Result<MstepOutput> {
    check_shapes(data, params, state)?;
    let (g_count, m_count, d) = (params.n_groups(), params.n_vars(), params.dim());
    let groups: Vec<usize> = (0..g_count).collect();
    let solved: Vec<(DVector<f64>, usize, Vec<String>)> = (0..m_count)
        .into_par_iter()
        .map(|m| {
            let block = Block::build(data, state, m, &groups);
            let mut start = DVector::<f64>::zeros(d + g_count);
            for (a, w) in params.slope(0, m).iter().enumerate() {
                start[a] = *w;
            }
            for g in 0..g_count {
                start[d + g] = params.intercept(g, m).clamp(-INTERCEPT_BOUND, INTERCEPT_BOUND);
            }
            let mut warnings = Vec::new();
            let (theta, clamped) = block.maximize(start, &mut warnings, &format!("variable {m}"));
            (theta, clamped, warnings)
        })
        .collect();

    let mut intercepts = vec![vec![0.0; m_count]; g_count];
    let mut shared = SlopeMatrix::zeros(m_count, d);
    let mut warnings = Vec::new();
    let mut clamped = 0;
    for (m, (theta, c, w)) in solved.into_iter().enumerate() {
        shared.row_mut(m).copy_from_slice(&theta.as_slice()[..d]);
        for (g, b) in intercepts.iter_mut().enumerate() {
            b[m] = theta[d + g];
        }
        clamped += c;
        warnings.extend(w);
    }
    Ok(MstepOutput {
        params: MltaParameters {
            eta: params.eta.clone(),
            intercepts,
            slopes: Slopes::Common(shared),
        },
        warnings,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior_state(n: usize, g: usize, m: usize, d: usize, xi: f64) -> VariationalState {
        let z = vec![1.0 / g as f64; n * g];
        let mut s = VariationalState::new(n, g, m, d, z).unwrap();
        s.xi.iter_mut().for_each(|v| *v = xi);
        s
    }

    fn start(g: usize, m: usize, d: usize) -> MltaParameters {
        MltaParameters::new(
            vec![1.0 / g as f64; g],
            vec![vec![0.3; m]; g],
            Slopes::Free(vec![SlopeMatrix::from_rows(&vec![vec![0.2; d]; m], d).unwrap(); g]),
        )
        .unwrap()
    }

    #[test]
    fn balanced_column_gives_zero() {
        let data = BinaryDataMatrix::from_rows(vec![vec![0], vec![1], vec![1], vec![0]]).unwrap();
        let out = mstep_free(&data, &start(1, 1, 1), &prior_state(4, 1, 1, 1, 0.0)).unwrap();
        assert!(out.params.intercepts[0][0].abs() < 1e-14);
        assert!(out.params.slope(0, 0)[0].abs() < 1e-14);
    }

    #[test]
    fn prior_moments_give_scaled_mean_residual() {
        // With μ = 0, C = I and λ = -1/8 the system decouples: b = 4 Σz(x-½)/Σz.
        let data = BinaryDataMatrix::from_weighted_rows(vec![vec![1], vec![0]], vec![3, 1]).unwrap();
        let out = mstep_free(&data, &start(1, 1, 1), &prior_state(2, 1, 1, 1, 0.0)).unwrap();
        let expected = 4.0 * (3.0 * 0.5 - 0.5) / 4.0;
        assert!((out.params.intercepts[0][0] - expected).abs() < 1e-12);
        assert!(out.params.slope(0, 0)[0].abs() < 1e-14);
    }

    #[test]
    fn single_group_common_equals_free() {
        let data =
            BinaryDataMatrix::from_rows(vec![vec![1, 0, 1], vec![1, 1, 0], vec![0, 0, 1], vec![1, 1, 1]]).unwrap();
        let p = start(1, 3, 2);
        let mut s = prior_state(4, 1, 3, 2, 1.3);
        for (i, v) in s.mu.iter_mut().enumerate() {
            *v = 0.1 * i as f64 - 0.3;
        }
        let free = mstep_free(&data, &p, &s).unwrap().params;
        let common = mstep_common(&data, &p, &s).unwrap().params;
        assert_eq!(free.intercepts, common.intercepts);
        for m in 0..3 {
            for (a, b) in free.slope(0, m).iter().zip(common.slope(0, m)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn intercepts_respect_bound() {
        // A constant column drives the unconstrained intercept far past the bound.
        let data = BinaryDataMatrix::from_rows(vec![vec![1]; 5]).unwrap();
        let mut s = prior_state(5, 1, 1, 1, 80.0);
        for n in 0..5 {
            s.cov[n] = 1e-3;
        }
        let out = mstep_free(&data, &start(1, 1, 1), &s).unwrap();
        assert_eq!(out.params.intercepts[0][0], INTERCEPT_BOUND);
        assert_eq!(out.clamped, 1);
    }
}
