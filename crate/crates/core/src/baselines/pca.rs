use nalgebra::DMatrix;

use crate::dataset::TimeSeriesMatrix;
use crate::error::{Error, Result};
use crate::spectral::{normalize_sign, Embedding};

/// Projection of the mean-centered rows on the top `k` principal axes.
/// Columns follow the sign rule used for eigenvectors. The returned
/// embedding reports a zero eigenvalue gap.
pub fn pca_embed(x: &TimeSeriesMatrix, k: usize) -> Result<Embedding> {
    let (n, t) = (x.n_points(), x.n_samples());
    if k == 0 || k > n.min(t) {
        return Err(Error::InvalidParameter(format!(
            "PCA dimension must be in [1, {}], got {k}",
            n.min(t)
        )));
    }
    let mut m = x.to_dmatrix();
    let mean = m.row_mean();
    for mut row in m.row_iter_mut() {
        row -= &mean;
    }
    let cov: DMatrix<f64> = m.transpose() * &m;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes = eig.eigenvectors.select_columns(&order[..k]);
    let mut proj = m * axes;
    for c in 0..k {
        normalize_sign(proj.column_mut(c).as_mut_slice());
    }
    let coords = (0..n)
        .flat_map(|i| (0..k).map(move |c| (i, c)))
        .map(|(i, c)| proj[(i, c)]);
    Embedding::from_coords(k, coords.collect(), 0.0)
}
