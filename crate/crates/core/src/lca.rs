//! Latent class analysis by exact EM: the `D = 0` member of the family.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::BinaryDataMatrix;
use crate::error::{arg_err, Result};
use crate::inference::aitken_stop;
use crate::math::log_sum_exp;
use crate::model::{decreasing_order, mixing_proportions, random_assignment, FitControl, MltaParameters};

/// Probabilities are kept inside `[PI_FLOOR, 1 - PI_FLOOR]` so logs stay finite.
pub const PI_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LcaParameters {
    pub eta: Vec<f64>,
    /// `pi[m][g]`, positive-response probability of variable `m` in class `g`.
    pub pi: Vec<Vec<f64>>,
}

impl LcaParameters {
    pub fn new(eta: Vec<f64>, pi: Vec<Vec<f64>>) -> Result<Self> {
        let g = eta.len();
        if g == 0 || pi.iter().any(|r| r.len() != g) {
            return arg_err("pi must be M×G with G = len(eta) >= 1");
        }
        if eta.iter().any(|e| !(*e >= 0.0)) || (eta.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
            return arg_err("eta must lie on the simplex");
        }
        if pi.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return arg_err("pi entries must lie in [0, 1]");
        }
        Ok(Self { eta, pi })
    }

    pub fn n_groups(&self) -> usize {
        self.eta.len()
    }

    pub fn n_vars(&self) -> usize {
        self.pi.len()
    }

    /// Same model in log-odds form with `D = 0`.
    pub fn to_mlta(&self) -> MltaParameters {
        let intercepts = (0..self.n_groups())
            .map(|g| {
                self.pi
                    .iter()
                    .map(|row| {
                        let p = row[g].clamp(PI_FLOOR, 1.0 - PI_FLOOR);
                        (p / (1.0 - p)).ln()
                    })
                    .collect()
            })
            .collect();
        MltaParameters::without_trait(self.eta.clone(), intercepts, 0).expect("valid class parameters")
    }

    /// Probabilities at the median trait value of an MLTA parameter set.
    pub fn from_mlta(params: &MltaParameters) -> Result<Self> {
        let pi = params
            .intercept_table()
            .iter()
            .map(|row| row.iter().map(|&b| crate::math::sigmoid(b)).collect())
            .collect();
        Self::new(params.eta.clone(), pi)
    }

    /// Exact log-likelihood of `data`.
    pub fn loglik(&self, data: &BinaryDataMatrix) -> Result<f64> {
        if data.n_vars() != self.n_vars() {
            return arg_err("data and parameters differ in number of variables");
        }
        Ok(estep(data, self).1)
    }

    fn permute_groups(&self, order: &[usize]) -> Self {
        Self {
            eta: order.iter().map(|&g| self.eta[g]).collect(),
            pi: self
                .pi
                .iter()
                .map(|row| order.iter().map(|&g| row[g]).collect())
                .collect(),
        }
    }
}

/// Starting point for [`fit_lca`].
#[derive(Debug, Clone)]
pub enum InitPolicy {
    /// Uniform random class assignment drawn from the control seed.
    Random,
    /// N×G responsibilities.
    Responsibilities(Vec<f64>),
    Parameters(LcaParameters),
}

#[derive(Debug, Clone)]
pub struct LcaFit {
    pub params: LcaParameters,
    pub loglik: f64,
    /// N×G responsibilities at the returned parameters.
    pub z: Vec<f64>,
    /// Log-likelihood after every E-step.
    pub trace: Vec<f64>,
    pub converged: bool,
}

fn estep(data: &BinaryDataMatrix, params: &LcaParameters) -> (Vec<f64>, f64) {
    let g = params.n_groups();
    let log_eta: Vec<f64> = params.eta.iter().map(|e| e.ln()).collect();
    let log_pi: Vec<Vec<(f64, f64)>> = params
        .pi
        .iter()
        .map(|row| row.iter().map(|p| ((1.0 - p).ln(), p.ln())).collect())
        .collect();
    let mut z = vec![0.0; data.n_rows() * g];
    let mut total = 0.0;
    for (n, zr) in z.chunks_mut(g).enumerate() {
        for (k, zv) in zr.iter_mut().enumerate() {
            *zv = log_eta[k]
                + data
                    .row(n)
                    .iter()
                    .zip(&log_pi)
                    .map(|(&x, lp)| if x == 1 { lp[k].1 } else { lp[k].0 })
                    .sum::<f64>();
        }
        let lse = log_sum_exp(zr);
        zr.iter_mut().for_each(|v| *v = (*v - lse).exp());
        total += data.weight(n) * lse;
    }
    (z, total)
}

fn mstep(data: &BinaryDataMatrix, z: &[f64], g: usize) -> Result<LcaParameters> {
    let eta = mixing_proportions(data, z, g)?;
    let m = data.n_vars();
    let mut num = vec![vec![0.0; g]; m];
    let mut den = vec![0.0; g];
    for n in 0..data.n_rows() {
        let w = data.weight(n);
        let zr = &z[n * g..(n + 1) * g];
        for (k, zv) in zr.iter().enumerate() {
            den[k] += w * zv;
        }
        for (v, &x) in data.row(n).iter().enumerate() {
            if x == 1 {
                for (k, zv) in zr.iter().enumerate() {
                    num[v][k] += w * zv;
                }
            }
        }
    }
    let pi = num
        .iter()
        .map(|row| {
            row.iter()
                .zip(&den)
                .map(|(a, b)| (a / b).clamp(PI_FLOOR, 1.0 - PI_FLOOR))
                .collect()
        })
        .collect();
    Ok(LcaParameters { eta, pi })
}

/// EM for a `groups`-class model, stopped by the Aitken rule. Classes are
/// returned in order of decreasing `η`.
pub fn fit_lca(data: &BinaryDataMatrix, groups: usize, init: InitPolicy, ctrl: &FitControl) -> Result<LcaFit> {
    ctrl.validate()?;
    if data.is_empty() || data.n_vars() == 0 {
        return arg_err("cannot fit an empty data set");
    }
    if groups == 0 {
        return arg_err("at least one group is required");
    }
    let n = data.n_rows();
    let mut params = match init {
        InitPolicy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(ctrl.seed);
            mstep(data, &random_assignment(&mut rng, n, groups), groups)?
        }
        InitPolicy::Responsibilities(z) => {
            if z.len() != n * groups {
                return arg_err("responsibilities must be N×G");
            }
            mstep(data, &z, groups)?
        }
        InitPolicy::Parameters(p) => {
            if p.n_groups() != groups || p.n_vars() != data.n_vars() {
                return arg_err("initial parameters do not match data and G");
            }
            let pi =
                p.pi.iter()
                    .map(|r| r.iter().map(|v| v.clamp(PI_FLOOR, 1.0 - PI_FLOOR)).collect())
                    .collect();
            LcaParameters { pi, ..p }
        }
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut z;
    loop {
        let (zn, ll) = estep(data, &params);
        z = zn;
        trace.push(ll);
        if aitken_stop(&trace, ctrl.tol) {
            converged = true;
            break;
        }
        if trace.len() >= ctrl.max_iter {
            break;
        }
        params = mstep(data, &z, groups)?;
    }

    let order = decreasing_order(&params.eta);
    let params = params.permute_groups(&order);
    let z = z
        .chunks(groups)
        .flat_map(|row| order.iter().map(move |&g| row[g]))
        .collect();
    Ok(LcaFit {
        params,
        loglik: *trace.last().expect("at least one E-step"),
        z,
        trace,
        converged,
    })
}
