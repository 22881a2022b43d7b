#![allow(dead_code)]

use coldstart::data::RaterPool;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `(k+1) x n` augmented vectors `(1, z)` with standard normal `z`.
pub fn random_vectors(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k + 1, n, |r, _| if r == 0 { 1.0 } else { StandardNormal.sample(rng) })
}

pub fn random_pool(seed: u64, n: usize, k: usize) -> RaterPool {
    let mut rng = rng(seed);
    RaterPool::from_vectors("item", (0..n).collect(), random_vectors(&mut rng, n, k)).unwrap()
}

/// Gauss-Jordan inverse with partial pivoting; `None` when singular.
pub fn gauss_jordan_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))?;
        if a[(pivot, col)].abs() < 1e-300 {
            return None;
        }
        a.swap_rows(col, pivot);
        inv.swap_rows(col, pivot);
        let p = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = a[(i, col)];
                if f != 0.0 {
                    for j in 0..n {
                        a[(i, j)] -= f * a[(col, j)];
                        inv[(i, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// `ridge I + sum_j w_j v_j v_j^T`, accumulated entry by entry.
pub fn naive_gram(vectors: &DMatrix<f64>, columns: &[usize], weights: Option<&[f64]>, ridge: f64) -> DMatrix<f64> {
    let d = vectors.nrows();
    let mut g = DMatrix::<f64>::identity(d, d) * ridge;
    for &c in columns {
        let w = weights.map_or(1.0, |w| w[c]);
        for i in 0..d {
            for j in 0..d {
                g[(i, j)] += w * vectors[(i, c)] * vectors[(j, c)];
            }
        }
    }
    g
}

/// `Trace((ridge I + sum w v v^T)^{-1})` from scratch.
pub fn naive_trace(vectors: &DMatrix<f64>, columns: &[usize], weights: Option<&[f64]>, ridge: f64) -> f64 {
    gauss_jordan_inverse(&naive_gram(vectors, columns, weights, ridge))
        .map_or(f64::INFINITY, |inv| inv.trace())
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
