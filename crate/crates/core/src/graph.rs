//! Nearest-neighbor connectivity graph with Gaussian edge weights.
//!
//! Every point is linked to its `n_n` nearest neighbors in Euclidean distance;
//! the directed kNN relation is symmetrized by union and each edge carries
//! `exp(-|x_i - x_j|^2 / sigma^2)`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::TimeSeriesMatrix;
use crate::error::{Error, Result};

/// Default scale multiplier applied to the minimum pairwise distance.
pub const DEFAULT_SIGMA_MULTIPLIER: f64 = 2.0;

const QUERY_BLOCK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    pub n_neighbors: usize,
    /// Must lie in `(0, 5]`.
    pub sigma_multiplier: f64,
    /// Overrides the heuristic when set.
    pub explicit_sigma: Option<f64>,
}

impl GraphConfig {
    pub fn new(n_neighbors: usize) -> Self {
        Self {
            n_neighbors,
            sigma_multiplier: DEFAULT_SIGMA_MULTIPLIER,
            explicit_sigma: None,
        }
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.n_neighbors < 1 || self.n_neighbors >= n_points {
            return Err(Error::InvalidParameter(format!(
                "n_neighbors must be in [1, {}), got {}",
                n_points, self.n_neighbors
            )));
        }
        if !(self.sigma_multiplier > 0.0 && self.sigma_multiplier <= 5.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma multiplier must be in (0, 5], got {}",
                self.sigma_multiplier
            )));
        }
        if let Some(s) = self.explicit_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "sigma must be positive and finite, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Sparse symmetric weighted graph stored in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    degrees: Vec<f64>,
    inv_sqrt_degrees: Vec<f64>,
    sigma: Option<f64>,
}

impl ConnectivityGraph {
    /// Builds a graph from undirected weighted edges. Each edge may be listed
    /// once in either orientation; weights must be positive and finite. The
    /// result must be connected with no isolated node.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut canon = Vec::with_capacity(edges.len());
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::InvalidParameter(format!("self loop at node {i}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i}, {j}) has non-positive weight {w}"
                )));
            }
            canon.push((i.min(j), i.max(j), w));
        }
        canon.sort_by_key(|a| (a.0, a.1));
        if let Some(w) = canon
            .windows(2)
            .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
        {
            return Err(Error::InvalidParameter(format!(
                "edge ({}, {}) listed twice",
                w[0].0, w[0].1
            )));
        }
        Self::from_canonical_edges(n, &canon, None)
    }

    fn from_canonical_edges(
        n: usize,
        edges: &[(usize, usize, f64)],
        sigma: Option<f64>,
    ) -> Result<Self> {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, w) in edges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::with_capacity(2 * edges.len());
        let mut weights = Vec::with_capacity(2 * edges.len());
        let mut degrees = Vec::with_capacity(n);
        offsets.push(0);
        for row in &mut adj {
            row.sort_by_key(|&(j, _)| j);
            neighbors.extend(row.iter().map(|&(j, _)| j));
            weights.extend(row.iter().map(|&(_, w)| w));
            degrees.push(row.iter().map(|&(_, w)| w).sum());
            offsets.push(neighbors.len());
        }
        let inv_sqrt_degrees = degrees.iter().map(|d: &f64| 1.0 / d.sqrt()).collect();
        let g = Self {
            offsets,
            neighbors,
            weights,
            degrees,
            inv_sqrt_degrees,
            sigma,
        };
        let sizes = g.component_sizes();
        if sizes.len() > 1 {
            return Err(Error::Disconnected {
                component_sizes: sizes,
            });
        }
        Ok(g)
    }

    pub fn n_nodes(&self) -> usize {
        self.degrees.len()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn edge_weights(&self, i: usize) -> &[f64] {
        &self.weights[self.offsets[i]..self.offsets[i + 1]]
    }

    /// `W_{i,j}`, zero when there is no edge.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        match self.neighbors(i).binary_search(&j) {
            Ok(k) => self.edge_weights(i)[k],
            Err(_) => 0.0,
        }
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.degrees[i]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Total weight `sum_{i,j} W_{i,j}` (each edge counted twice).
    pub fn volume(&self) -> f64 {
        self.degrees.iter().sum()
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    /// Stationary distribution of the random walk, `pi_i = d_i / vol`.
    pub fn stationary(&self) -> Vec<f64> {
        let vol = self.volume();
        self.degrees.iter().map(|d| d / vol).collect()
    }

    /// Undirected edges `(i, j, w)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.n_edges());
        for i in 0..self.n_nodes() {
            for (&j, &w) in self.neighbors(i).iter().zip(self.edge_weights(i)) {
                if i < j {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// Sizes of the connected components, largest first.
    pub fn component_sizes(&self) -> Vec<usize> {
        let n = self.n_nodes();
        let mut comp = vec![usize::MAX; n];
        let mut sizes = Vec::new();
        let mut stack = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            comp[start] = id;
            stack.push(start);
            let mut size = 0;
            while let Some(u) = stack.pop() {
                size += 1;
                for &v in self.neighbors(u) {
                    if comp[v] == usize::MAX {
                        comp[v] = id;
                        stack.push(v);
                    }
                }
            }
            sizes.push(size);
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }

    /// `y = D^{-1/2} W D^{-1/2} x`.
    pub fn normalized_matvec(&self, x: &[f64], y: &mut [f64]) {
        let inv_sqrt = &self.inv_sqrt_degrees;
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let lo = self.offsets[i];
            let hi = self.offsets[i + 1];
            let mut acc = 0.0;
            for k in lo..hi {
                let j = self.neighbors[k];
                acc += self.weights[k] * inv_sqrt[j] * x[j];
            }
            *yi = acc * inv_sqrt[i];
        });
    }

    /// Edge list as CSV `i,j,weight` with `i < j`.
    pub fn to_edge_csv(&self) -> String {
        let mut s = String::from("i,j,weight\n");
        for (i, j, w) in self.edges() {
            let _ = writeln!(s, "{i},{j},{w:e}");
        }
        s
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distances and ids of the `n_n` nearest neighbors of every row,
/// nearest first, ties broken by smaller index.
pub(crate) fn knn_with_distances(
    x: &TimeSeriesMatrix,
    n_n: usize,
) -> Result<Vec<Vec<(f64, usize)>>> {
    let n = x.n_points();
    if n_n < 1 || n_n >= n {
        return Err(Error::InvalidParameter(format!(
            "n_neighbors must be in [1, {n}), got {n_n}"
        )));
    }
    let blocks: Vec<Vec<Vec<(f64, usize)>>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(QUERY_BLOCK)
        .map(|queries| {
            let mut cand: Vec<Vec<(f64, usize)>> =
                queries.iter().map(|_| Vec::with_capacity(n - 1)).collect();
            for j in 0..n {
                let rj = x.row(j);
                for (c, &i) in cand.iter_mut().zip(queries) {
                    if i != j {
                        c.push((sq_dist(x.row(i), rj), j));
                    }
                }
            }
            for c in &mut cand {
                let by_key =
                    |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                c.select_nth_unstable_by(n_n - 1, by_key);
                c.truncate(n_n);
                c.sort_by(by_key);
            }
            cand
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}

/// Ids of the `n_n` nearest neighbors of every row (brute force).
pub fn knn_neighbors(x: &TimeSeriesMatrix, n_n: usize) -> Result<Vec<Vec<usize>>> {
    Ok(knn_with_distances(x, n_n)?
        .into_iter()
        .map(|row| row.into_iter().map(|(_, j)| j).collect())
        .collect())
}

/// `multiplier * min_{i<j} |x_i - x_j|`.
pub fn sigma_heuristic(x: &TimeSeriesMatrix, multiplier: f64) -> Result<f64> {
    let (d2, i, j) = min_pair(&knn_with_distances(x, 1)?);
    check_sigma(d2, i, j, multiplier)
}

fn min_pair(knn: &[Vec<(f64, usize)>]) -> (f64, usize, usize) {
    knn.iter()
        .enumerate()
        .map(|(i, r)| (r[0].0, i.min(r[0].1), i.max(r[0].1)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))))
        .expect("at least two points")
}

fn check_sigma(min_d2: f64, i: usize, j: usize, multiplier: f64) -> Result<f64> {
    if !(multiplier > 0.0 && multiplier.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma multiplier must be positive, got {multiplier}"
        )));
    }
    if min_d2 == 0.0 {
        return Err(Error::DuplicateRows(i, j));
    }
    Ok(multiplier * min_d2.sqrt())
}

/// Builds the symmetrized kNN graph with Gaussian weights.
pub fn build_graph(x: &TimeSeriesMatrix, cfg: &GraphConfig) -> Result<ConnectivityGraph> {
    cfg.validate(x.n_points())?;
    let knn = knn_with_distances(x, cfg.n_neighbors)?;
    let sigma = match cfg.explicit_sigma {
        Some(s) => s,
        None => {
            let (d2, i, j) = min_pair(&knn);
            check_sigma(d2, i, j, cfg.sigma_multiplier)?
        }
    };
    let s2 = sigma * sigma;
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (i, row) in knn.iter().enumerate() {
        for &(d2, j) in row {
            edges.push((i.min(j), i.max(j), d2));
        }
    }
    edges.sort_by_key(|a| (a.0, a.1));
    edges.dedup_by(|a, b| (a.0, a.1) == (b.0, b.1));
    let mut weighted = Vec::with_capacity(edges.len());
    for (i, j, d2) in edges {
        let w = (-d2 / s2).exp();
        if w <= 0.0 {
            return Err(Error::Degenerate(format!(
                "edge ({i}, {j}) weight underflows to zero (distance^2 {d2:e}, sigma {sigma:e})"
            )));
        }
        weighted.push((i, j, w));
    }
    log::debug!(
        "graph: {} nodes, {} edges, sigma {sigma:e}",
        x.n_points(),
        weighted.len()
    );
    ConnectivityGraph::from_canonical_edges(x.n_points(), &weighted, Some(sigma))
}

/// Random connected test graph: the union-symmetrized kNN graph of `n`
/// uniform points in the unit cube, with edge weights drawn from `(0, 1]`.
/// Point sets are redrawn until the graph is connected.
pub fn random_knn_graph(n: usize, n_neighbors: usize, seed: u64) -> Result<ConnectivityGraph> {
    if n < 2 || n_neighbors == 0 || n_neighbors >= n {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= n_neighbors < n, got n = {n}, n_neighbors = {n_neighbors}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        let values: Vec<f64> = (0..n * 3).map(|_| rng.gen()).collect();
        let x = TimeSeriesMatrix::new(n, 3, values)?;
        let knn = knn_neighbors(&x, n_neighbors)?;
        let mut pairs: Vec<(usize, usize)> = knn
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&j| (i.min(j), i.max(j))))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        let edges: Vec<(usize, usize, f64)> = pairs
            .into_iter()
            .map(|(i, j)| (i, j, 1.0 - rng.gen::<f64>()))
            .collect();
        match ConnectivityGraph::from_edges(n, &edges) {
            Err(Error::Disconnected { .. }) => continue,
            other => return other,
        }
    }
    Err(Error::Degenerate(format!(
        "no connected {n_neighbors}-NN graph on {n} points after 1000 draws"
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringCoefficients {
    pub per_node: Vec<f64>,
    pub mean: f64,
}

/// `C_i = 2 e_i / (k_i (k_i - 1))` over the symmetrized neighborhoods;
/// nodes with fewer than two neighbors get 0.
pub fn clustering_coefficients(g: &ConnectivityGraph) -> ClusteringCoefficients {
    let n = g.n_nodes();
    let per_node: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let nb = g.neighbors(i);
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let mut links = 0usize;
            for (a_pos, &a) in nb.iter().enumerate() {
                let na = g.neighbors(a);
                links += nb[a_pos + 1..]
                    .iter()
                    .filter(|b| na.binary_search(b).is_ok())
                    .count();
            }
            2.0 * links as f64 / (k * (k - 1)) as f64
        })
        .collect();
    let mean = per_node.iter().sum::<f64>() / n as f64;
    ClusteringCoefficients { per_node, mean }
}
