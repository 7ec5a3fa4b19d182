use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::BinaryDataMatrix;
use crate::error::{MltaError, Result};
use crate::model::MltaParameters;

/// Simulated responses with the latent quantities that produced them.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub data: BinaryDataMatrix,
    /// Group of each row, numbered from 0.
    pub z: Vec<usize>,
    /// Trait draw of each row (empty when D = 0).
    pub y: Vec<Vec<f64>>,
}

/// Draws `n` rows: group from `η`, trait from `N(0, I)`, then independent
/// Bernoulli responses. Deterministic for a given seed.
pub fn simulate(params: &MltaParameters, n: usize, seed: u64) -> Result<Simulation> {
    params.validate()?;
    if n == 0 {
        return Err(MltaError::Argument("N must be at least 1".into()));
    }
    let groups = WeightedIndex::new(&params.eta).map_err(|e| MltaError::Argument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, d) = (params.n_vars(), params.dim());
    let mut rows = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let g = groups.sample(&mut rng);
        let trait_draw: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let row = (0..m)
            .map(|v| (rng.random::<f64>() < params.response_prob(g, v, &trait_draw)) as u8)
            .collect();
        rows.push(row);
        z.push(g);
        y.push(trait_draw);
    }
    Ok(Simulation {
        data: BinaryDataMatrix::from_rows(rows)?,
        z,
        y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_group_and_determinism() {
        let p = MltaParameters::without_trait(vec![1.0], vec![vec![0.5, -1.0]], 1).unwrap();
        let a = simulate(&p, 50, 3).unwrap();
        assert!(a.z.iter().all(|&g| g == 0));
        let b = simulate(&p, 50, 3).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.y, b.y);
    }
}
