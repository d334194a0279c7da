//! Truncated SVD of a sparse binary incidence matrix by randomized subspace
//! iteration.
//!
//! Only the right singular directions are kept: they map a user's Likes to
//! component coordinates (`row . V`).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::SparseBinaryDataset;
use crate::error::{Error, Result};

/// Top-k right singular directions of a users x items matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdBasis {
    /// `J x k`, orthonormal columns ordered by decreasing singular value.
    pub components: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvdOptions {
    /// Extra sampled directions beyond `k`.
    pub oversample: usize,
    pub max_iterations: usize,
    /// Relative change of the top-k squared singular values that ends iteration.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        SvdOptions {
            oversample: 10,
            max_iterations: 40,
            tolerance: 1e-12,
            seed: 0x5eed_5fd,
        }
    }
}

impl SvdBasis {
    pub fn k(&self) -> usize {
        self.components.ncols()
    }

    pub fn n_items(&self) -> usize {
        self.components.nrows()
    }

    /// Component coordinates of a binary row: the sum of the rows of `V` at the Liked items.
    pub fn project(&self, row: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.k()];
        for &j in row {
            for (c, o) in out.iter_mut().enumerate() {
                *o += self.components[(j, c)];
            }
        }
        out
    }

    /// Row-major `n x k` projections of many rows.
    pub fn project_rows<'a>(&self, rows: impl IntoIterator<Item = &'a [usize]>) -> Vec<f64> {
        rows.into_iter().flat_map(|r| self.project(r)).collect()
    }

    /// `||A - A V V^T||_F` for the rows given.
    pub fn reconstruction_error(&self, rows: &[&[usize]]) -> f64 {
        // For a binary row x, ||x - x V V^T||^2 = |x| - ||x V||^2 since V has orthonormal columns.
        rows.iter()
            .map(|r| {
                let p = self.project(r);
                (r.len() as f64 - p.iter().map(|v| v * v).sum::<f64>()).max(0.0)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Top-`k` basis for all users of `dataset`.
pub fn fit_svd(dataset: &SparseBinaryDataset, k: usize) -> Result<SvdBasis> {
    let rows: Vec<&[usize]> = dataset.rows().iter().map(Vec::as_slice).collect();
    fit_svd_rows(&rows, dataset.n_items(), k, &SvdOptions::default())
}

/// Top-`k` basis for the given binary rows over `n_items` columns.
pub fn fit_svd_rows(
    rows: &[&[usize]],
    n_items: usize,
    k: usize,
    options: &SvdOptions,
) -> Result<SvdBasis> {
    let n = rows.len();
    let bound = n.min(n_items);
    if k == 0 || k > bound {
        return Err(Error::validation(format!(
            "SVD rank {k} must lie in 1..={bound} (min of {n} rows and {n_items} items)"
        )));
    }
    let block = (k + options.oversample).min(bound);

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let omega = DMatrix::from_fn(n_items, block, |_, _| StandardNormal.sample(&mut rng));
    let mut basis = orthonormalize(omega);

    let mut previous: Option<Vec<f64>> = None;
    for _ in 0..options.max_iterations {
        if block == n_items {
            break;
        }
        let image = times(rows, &basis);
        let gram = image.transpose() * &image;
        let mut eig: Vec<f64> = gram.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        eig.truncate(k);
        let converged = previous.as_ref().is_some_and(|prev| {
            prev.iter()
                .zip(&eig)
                .all(|(p, e)| (p - e).abs() <= options.tolerance * e.max(eig[0] * 1e-10))
        });
        if converged {
            break;
        }
        previous = Some(eig);
        basis = orthonormalize(transpose_times(rows, &image, n_items));
    }

    // Rayleigh-Ritz: A Z = U S W^T, so the right singular directions are Z W.
    let image = times(rows, &basis);
    let svd = image.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(k);
    let rotated = &basis * v_t.transpose();
    let mut components = DMatrix::zeros(n_items, k);
    let mut singular_values = Vec::with_capacity(k);
    for (c, &src) in order.iter().enumerate() {
        let mut col = rotated.column(src).clone_owned();
        // Fix the sign so the largest-magnitude entry is positive.
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            col.neg_mut();
        }
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        components.set_column(c, &col);
        singular_values.push(svd.singular_values[src]);
    }
    Ok(SvdBasis {
        components,
        singular_values,
    })
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// `A * Z` for sparse binary `A` (n x J) and dense `Z` (J x b).
fn times(rows: &[&[usize]], z: &DMatrix<f64>) -> DMatrix<f64> {
    let b = z.ncols();
    let zt = z.transpose(); // b x J, column j holds row j of Z contiguously
    let mut out = DMatrix::zeros(b, rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut col = out.column_mut(i);
        for &j in row.iter() {
            col += zt.column(j);
        }
    }
    out.transpose()
}

/// `A^T * Y` for sparse binary `A` (n x J) and dense `Y` (n x b).
fn transpose_times(rows: &[&[usize]], y: &DMatrix<f64>, n_items: usize) -> DMatrix<f64> {
    let b = y.ncols();
    let yt = y.transpose();
    let mut out = DMatrix::zeros(b, n_items);
    for (i, row) in rows.iter().enumerate() {
        let src = yt.column(i);
        for &j in row.iter() {
            let mut col = out.column_mut(j);
            col += &src;
        }
    }
    out.transpose()
}
