use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dataset::TimeSeriesMatrix;
use crate::error::{Error, Result};
use crate::graph::knn_with_distances;
use crate::spectral::{normalize_sign, Embedding};

/// Adjacency lists `(neighbor, length)`.
pub type LengthGraph = Vec<Vec<(usize, f64)>>;

/// Union-symmetrized kNN graph with Euclidean edge lengths.
pub fn knn_length_graph(x: &TimeSeriesMatrix, n_n: usize) -> Result<LengthGraph> {
    let n = x.n_points();
    if n_n == 0 || n_n >= n {
        return Err(Error::InvalidParameter(format!(
            "n_neighbors must be in [1, {}], got {n_n}",
            n - 1
        )));
    }
    let knn = knn_with_distances(x, n_n)?;
    let mut adj: LengthGraph = vec![Vec::new(); n];
    for (i, row) in knn.iter().enumerate() {
        for &(d2, j) in row {
            adj[i].push((j, d2.sqrt()));
            adj[j].push((i, d2.sqrt()));
        }
    }
    for list in &mut adj {
        list.sort_by_key(|a| a.0);
        list.dedup_by_key(|e| e.0);
    }
    Ok(adj)
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Single-source shortest path lengths (Dijkstra).
pub fn dijkstra(adj: &LengthGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::from([Item(0.0, source)]);
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Item(nd, v));
            }
        }
    }
    dist
}

/// All-pairs geodesic distances; errors if some pair is unreachable.
pub fn geodesic_distances(adj: &LengthGraph) -> Result<DMatrix<f64>> {
    let n = adj.len();
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(adj, s)).collect();
    if rows[0].iter().any(|d| d.is_infinite()) {
        let mut sizes = Vec::new();
        let mut seen = vec![false; n];
        for s in 0..n {
            if !seen[s] {
                let comp: Vec<usize> = (0..n).filter(|&j| rows[s][j].is_finite()).collect();
                comp.iter().for_each(|&j| seen[j] = true);
                sizes.push(comp.len());
            }
        }
        return Err(Error::Disconnected {
            component_sizes: sizes,
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Classical MDS: top-`k` eigenpairs of `-1/2 J D^2 J`, scaled by the root of
/// their eigenvalues. Negative eigenvalues contribute zero coordinates.
pub fn classical_mds(dist: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let n = dist.nrows();
    if dist.ncols() != n {
        return Err(Error::InvalidParameter(
            "distance matrix must be square".into(),
        ));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "MDS dimension must be in [1, {n}], got {k}"
        )));
    }
    let sq = dist.map(|d| d * d);
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let col_means: Vec<f64> = (0..n).map(|j| sq.column(j).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| {
        -0.5 * (sq[(i, j)] - row_means[i] - col_means[j] + grand)
    });
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
    let mut out = DMatrix::zeros(n, k);
    for (c, &e) in order.iter().take(k).enumerate() {
        let lam = eig.eigenvalues[e];
        if lam < 0.0 {
            log::warn!(
                "MDS eigenvalue {lam:e} is negative; coordinate {} set to zero",
                c + 1
            );
            continue;
        }
        let mut v: Vec<f64> = eig
            .eigenvectors
            .column(e)
            .iter()
            .map(|x| x * lam.sqrt())
            .collect();
        normalize_sign(&mut v);
        out.column_mut(c).copy_from_slice(&v);
    }
    Ok(out)
}

/// Geodesic distances on the kNN graph followed by classical MDS. The
/// returned embedding reports a zero eigenvalue gap.
pub fn isomap_embed(x: &TimeSeriesMatrix, n_n: usize, k: usize) -> Result<Embedding> {
    let adj = knn_length_graph(x, n_n)?;
    let geo = geodesic_distances(&adj)?;
    let coords = classical_mds(&geo, k)?;
    let n = x.n_points();
    let flat = (0..n)
        .flat_map(|i| (0..k).map(move |c| (i, c)))
        .map(|(i, c)| coords[(i, c)]);
    Embedding::from_coords(k, flat.collect(), 0.0)
}
