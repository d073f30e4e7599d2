#![allow(dead_code)]

use irl_core::Mdp;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-stochastic matrix with roughly `1 - sparsity` of its entries nonzero.
pub fn stochastic(rng: &mut impl Rng, n: usize, sparsity: f64) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            if rng.gen::<f64>() >= sparsity {
                p[(i, j)] = rng.gen::<f64>() + 1e-3;
                total += p[(i, j)];
            }
        }
        if total == 0.0 {
            let j = rng.gen_range(0..n);
            p[(i, j)] = 1.0;
            total = 1.0;
        }
        for j in 0..n {
            p[(i, j)] /= total;
        }
    }
    p
}

pub fn random_mdp(rng: &mut impl Rng, n: usize, m: usize, gamma: f64) -> Mdp {
    let ts = (0..m).map(|_| stochastic(rng, n, 0.3)).collect();
    Mdp::new(ts, gamma, None).unwrap()
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(lo..hi))
}

pub fn unit_features(rng: &mut impl Rng, n: usize, d: usize) -> Vec<DVector<f64>> {
    (0..n).map(|_| uniform_vec(rng, d, 0.0, 1.0)).collect()
}
