//! Seeded random generation shared by the decomposition, estimation and
//! experiment modules.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::DenseTensor;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a path of indices (splitmix64 finalizer per step),
/// so that every (setting, grid point, replication) cell gets its own stream.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut z = base;
    for &p in path {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * normal(rng)).collect()
}

pub fn normal_tensor(rng: &mut Rng, shape: &[usize], std: f64) -> DenseTensor {
    let n = shape.iter().product();
    DenseTensor::from_vec(shape, normal_vec(rng, n, std)).expect("valid shape")
}

pub fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_vec(rows, cols, normal_vec(rng, rows * cols, std))
}

/// A `rows x cols` matrix with orthonormal columns, from the QR factorization
/// of a Gaussian matrix. Requires `cols <= rows`.
pub fn orthonormal_columns(rng: &mut Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    assert!(cols <= rows, "cannot fit {cols} orthonormal columns in R^{rows}");
    let g = normal_matrix(rng, rows, cols, 1.0);
    let qr = g.qr();
    let mut q = qr.q();
    // Sign-fix against diag(R) so the draw is a proper Haar sample.
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
