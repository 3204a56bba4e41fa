//! Spectral decomposition of the normalized affinity `S = D^{-1/2} W D^{-1/2}`
//! and the commute-time embedding built from it.
//!
//! Eigenpairs are indexed from 1: `phi_1` is the top eigenvector (eigenvalue
//! 1, proportional to `sqrt(pi)`), and the embedding uses `phi_2 ..= phi_{K+1}`:
//!
//! ```text
//! Psi(x_i)_k = phi_{k+1}(i) / (sqrt(pi_i) * sqrt(1 - lambda_{k+1}))
//! ```
//!
//! With all `N - 1` non-trivial coordinates, squared Euclidean distances
//! between embedded points equal commute times of the random walk
//! `P = D^{-1} W`.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::dataset::TimeSeriesMatrix;
use crate::error::{Error, Result};
use crate::graph::ConnectivityGraph;
use crate::lanczos::{largest_eigenpairs, LanczosOptions};

/// Graphs up to this size are decomposed densely under [`Solver::Auto`].
pub const DENSE_LIMIT: usize = 64;

/// Eigenvalues closer than this are flagged as a degenerate block.
pub const DEGENERACY_GAP: f64 = 1e-10;

/// Smallest admissible `1 - lambda` for an embedding coordinate.
pub const MIN_SPECTRAL_DISTANCE: f64 = 1e-12;

/// Default fraction of the largest drop that ends a knee.
pub const DEFAULT_KNEE_THETA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Dense for `N <= DENSE_LIMIT`, Lanczos above.
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone)]
pub struct DecomposeOptions {
    pub solver: Solver,
    pub lanczos: LanczosOptions,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            solver: Solver::Auto,
            lanczos: LanczosOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    /// `N x m`, column `k` is `phi_{k+1}`.
    eigenvectors: DMatrix<f64>,
    stationary: Vec<f64>,
    degenerate: Vec<bool>,
}

impl SpectralDecomposition {
    pub fn n_points(&self) -> usize {
        self.eigenvectors.nrows()
    }

    pub fn n_pairs(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Descending eigenvalues `lambda_1 >= lambda_2 >= ...`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Column `k` (0-based) holds `phi_{k+1}`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// True where an eigenvalue lies within [`DEGENERACY_GAP`] of a neighbor;
    /// individual vectors of such a block are only defined up to rotation.
    pub fn degenerate(&self) -> &[bool] {
        &self.degenerate
    }

    /// `lambda_1 - lambda_2`.
    pub fn spectral_gap(&self) -> f64 {
        self.eigenvalues[0] - self.eigenvalues[1]
    }

    /// Eigenvector dump `index,phi2,...,phiM`.
    pub fn eigenvectors_csv(&self) -> String {
        let m = self.n_pairs();
        let mut s = String::from("index");
        for k in 2..=m {
            let _ = write!(s, ",phi{k}");
        }
        s.push('\n');
        for i in 0..self.n_points() {
            let _ = write!(s, "{i}");
            for k in 1..m {
                let _ = write!(s, ",{:e}", self.eigenvectors[(i, k)]);
            }
            s.push('\n');
        }
        s
    }

    /// `k,lambda,degenerate` for every computed pair.
    pub fn eigenvalues_csv(&self) -> String {
        let mut s = String::from("k,lambda,degenerate\n");
        for (k, (l, d)) in self.eigenvalues.iter().zip(&self.degenerate).enumerate() {
            let _ = writeln!(s, "{},{l:e},{}", k + 1, u8::from(*d));
        }
        s
    }
}

/// Top `n_pairs` eigenpairs of `D^{-1/2} W D^{-1/2}`.
pub fn decompose(g: &ConnectivityGraph, n_pairs: usize) -> Result<SpectralDecomposition> {
    decompose_with(g, n_pairs, &DecomposeOptions::default())
}

pub fn decompose_with(
    g: &ConnectivityGraph,
    n_pairs: usize,
    opts: &DecomposeOptions,
) -> Result<SpectralDecomposition> {
    let n = g.n_nodes();
    if n_pairs < 2 || n_pairs > n {
        return Err(Error::InvalidParameter(format!(
            "n_pairs must be in [2, {n}], got {n_pairs}"
        )));
    }
    let sizes = g.component_sizes();
    if sizes.len() > 1 {
        return Err(Error::Disconnected {
            component_sizes: sizes,
        });
    }
    let use_dense = match opts.solver {
        Solver::Dense => true,
        Solver::Lanczos => false,
        Solver::Auto => n <= DENSE_LIMIT,
    };
    let (values, mut vectors) = if use_dense {
        dense_pairs(g, n_pairs)
    } else {
        lanczos_pairs(g, n_pairs, &opts.lanczos)?
    };
    for k in 0..vectors.ncols() {
        normalize_sign(vectors.column_mut(k).as_mut_slice());
    }
    let degenerate = (0..values.len())
        .map(|k| {
            let below = k + 1 < values.len() && values[k] - values[k + 1] < DEGENERACY_GAP;
            let above = k > 0 && values[k - 1] - values[k] < DEGENERACY_GAP;
            below || above
        })
        .collect::<Vec<_>>();
    if degenerate.iter().any(|&d| d) {
        log::warn!("near-degenerate eigenvalues in the computed spectrum");
    }
    if 1.0 - values[1] < MIN_SPECTRAL_DISTANCE {
        return Err(Error::Degenerate(format!(
            "second eigenvalue {} is numerically 1; graph is effectively disconnected",
            values[1]
        )));
    }
    Ok(SpectralDecomposition {
        eigenvalues: values,
        eigenvectors: vectors,
        stationary: g.stationary(),
        degenerate,
    })
}

fn dense_normalized(g: &ConnectivityGraph) -> DMatrix<f64> {
    let n = g.n_nodes();
    let d = g.degrees();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for (&j, &w) in g.neighbors(i).iter().zip(g.edge_weights(i)) {
            s[(i, j)] = w / (d[i].sqrt() * d[j].sqrt());
        }
    }
    s
}

fn dense_pairs(g: &ConnectivityGraph, n_pairs: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = dense_normalized(g).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(n_pairs);
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = eig.eigenvectors.select_columns(&order);
    (values, vectors)
}

/// The top pair is known in closed form (`S D^{1/2} 1 = D^{1/2} 1`), so it is
/// deflated and the remaining pairs are found by Lanczos.
fn lanczos_pairs(
    g: &ConnectivityGraph,
    n_pairs: usize,
    opts: &LanczosOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = g.n_nodes();
    let mut top: Vec<f64> = g.degrees().iter().map(|d| d.sqrt()).collect();
    let nrm = top.iter().map(|v| v * v).sum::<f64>().sqrt();
    top.iter_mut().for_each(|v| *v /= nrm);
    let mut s_top = vec![0.0; n];
    g.normalized_matvec(&top, &mut s_top);
    let lambda1: f64 = top.iter().zip(&s_top).map(|(a, b)| a * b).sum();

    let rest = largest_eigenpairs(
        n,
        n_pairs - 1,
        |x, y| g.normalized_matvec(x, y),
        std::slice::from_ref(&top),
        opts,
    )?;
    let mut values = Vec::with_capacity(n_pairs);
    values.push(lambda1);
    values.extend(rest.values);
    let mut vectors = DMatrix::zeros(n, n_pairs);
    vectors.column_mut(0).copy_from_slice(&top);
    for (k, v) in rest.vectors.iter().enumerate() {
        vectors.column_mut(k + 1).copy_from_slice(v);
    }
    Ok((values, vectors))
}

/// Flips `v` so that its entry of largest magnitude is positive. Entries
/// within a relative 1e-9 of the maximum count as tied; the first one wins.
pub(crate) fn normalize_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    if let Some(&lead) = v.iter().find(|x| x.abs() >= max * (1.0 - 1e-9)) {
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Per-point `K`-dimensional commute-time coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    dim: usize,
    coords: Vec<f64>,
    eigenvalue_gap: f64,
}

impl Embedding {
    /// Row-major `N x K` coordinates.
    pub fn from_coords(dim: usize, coords: Vec<f64>, eigenvalue_gap: f64) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "{} coordinates do not form rows of dimension {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Degenerate("non-finite embedding coordinate".into()));
        }
        Ok(Self {
            dim,
            coords,
            eigenvalue_gap,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_points(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn eigenvalue_gap(&self) -> f64 {
        self.eigenvalue_gap
    }

    pub fn radii(&self) -> Vec<f64> {
        self.points()
            .map(|p| p.iter().map(|c| c * c).sum::<f64>().sqrt())
            .collect()
    }

    /// Multiplies every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            coords: self.coords.iter().map(|c| c * factor).collect(),
            eigenvalue_gap: self.eigenvalue_gap,
        }
    }

    /// `index,c1,...,cK`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index");
        for k in 1..=self.dim {
            let _ = write!(s, ",c{k}");
        }
        s.push('\n');
        for (i, p) in self.points().enumerate() {
            let _ = write!(s, "{i}");
            for c in p {
                let _ = write!(s, ",{c:e}");
            }
            s.push('\n');
        }
        s
    }
}

fn check_term(dec: &SpectralDecomposition, k: usize) -> Result<f64> {
    let gap = 1.0 - dec.eigenvalues[k];
    if gap < MIN_SPECTRAL_DISTANCE {
        return Err(Error::Degenerate(format!(
            "1 - lambda_{} = {gap:e} is below {MIN_SPECTRAL_DISTANCE:e}",
            k + 1
        )));
    }
    Ok(gap)
}

/// Commute-time coordinates from `phi_2 ..= phi_{K+1}`.
pub fn embed(dec: &SpectralDecomposition, k: usize) -> Result<Embedding> {
    if k == 0 || k + 1 > dec.n_pairs() {
        return Err(Error::InvalidParameter(format!(
            "embedding dimension {k} needs {} eigenpairs, have {}",
            k + 1,
            dec.n_pairs()
        )));
    }
    let n = dec.n_points();
    let scales = (1..=k)
        .map(|c| check_term(dec, c).map(|g| 1.0 / g.sqrt()))
        .collect::<Result<Vec<_>>>()?;
    let mut coords = Vec::with_capacity(n * k);
    for i in 0..n {
        let inv_sqrt_pi = 1.0 / dec.stationary[i].sqrt();
        for (c, s) in scales.iter().enumerate() {
            coords.push(dec.eigenvectors[(i, c + 1)] * inv_sqrt_pi * s);
        }
    }
    Embedding::from_coords(k, coords, dec.spectral_gap())
}

/// Spectral commute time between `i` and `j` using `phi_2 ..= phi_{n_terms}`.
/// With `n_terms = N` this is the exact commute time.
pub fn commute_distance(
    dec: &SpectralDecomposition,
    i: usize,
    j: usize,
    n_terms: usize,
) -> Result<f64> {
    let n = dec.n_points();
    if i >= n || j >= n {
        return Err(Error::InvalidParameter(format!(
            "point ids ({i}, {j}) out of range for {n} points"
        )));
    }
    if n_terms > dec.n_pairs() {
        return Err(Error::InvalidParameter(format!(
            "{n_terms} terms requested, {} eigenpairs available",
            dec.n_pairs()
        )));
    }
    let (si, sj) = (dec.stationary[i].sqrt(), dec.stationary[j].sqrt());
    let mut acc = 0.0;
    for k in 1..n_terms {
        let gap = check_term(dec, k)?;
        let diff = dec.eigenvectors[(i, k)] / si - dec.eigenvectors[(j, k)] / sj;
        acc += diff * diff / gap;
    }
    Ok(acc)
}

/// All pairwise commute distances with `n_terms` terms.
pub fn commute_distance_matrix(
    dec: &SpectralDecomposition,
    n_terms: usize,
) -> Result<DMatrix<f64>> {
    let n = dec.n_points();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = commute_distance(dec, i, j, n_terms)?;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Relative approximation error of a region's time series when every scan is
/// truncated to its first `K` eigen-coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCurve {
    pub region: Vec<usize>,
    /// `values[K - 1] = epsilon_R(K)` for `K = 1..=K_max`.
    pub values: Vec<f64>,
}

impl ResidualCurve {
    pub fn k_max(&self) -> usize {
        self.values.len()
    }
}

pub fn residual_curve(
    x: &TimeSeriesMatrix,
    dec: &SpectralDecomposition,
    region: &[usize],
    k_max: usize,
) -> Result<ResidualCurve> {
    let n = dec.n_points();
    if x.n_points() != n {
        return Err(Error::InvalidParameter(format!(
            "dataset has {} points, decomposition {n}",
            x.n_points()
        )));
    }
    if region.is_empty() {
        return Err(Error::InvalidParameter("empty region".into()));
    }
    if k_max == 0 || k_max > dec.n_pairs() {
        return Err(Error::InvalidParameter(format!(
            "k_max must be in [1, {}], got {k_max}",
            dec.n_pairs()
        )));
    }
    if let Some(&bad) = region.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidParameter(format!(
            "region point {bad} out of range"
        )));
    }
    let t_len = x.n_samples();
    // coeff[k][t] = <x(t), phi_k>
    let phi = &dec.eigenvectors;
    let coeff: Vec<Vec<f64>> = (0..k_max)
        .map(|k| {
            let col = phi.column(k);
            let mut c = vec![0.0; t_len];
            for (i, row) in x.rows().enumerate() {
                let p = col[i];
                for (ct, v) in c.iter_mut().zip(row) {
                    *ct += p * v;
                }
            }
            c
        })
        .collect();

    let mut totals = vec![0.0; k_max];
    for &i in region {
        let row = x.row(i);
        let energy: f64 = row.iter().map(|v| v * v).sum();
        if energy == 0.0 {
            return Err(Error::Degenerate(format!(
                "time series {i} is identically zero"
            )));
        }
        let mut resid = row.to_vec();
        for (k, c) in coeff.iter().enumerate() {
            let p = phi[(i, k)];
            for (r, ct) in resid.iter_mut().zip(c) {
                *r -= p * ct;
            }
            totals[k] += resid.iter().map(|r| r * r).sum::<f64>() / energy;
        }
    }
    let size = region.len() as f64;
    Ok(ResidualCurve {
        region: region.to_vec(),
        values: totals.into_iter().map(|t| t / size).collect(),
    })
}

/// Knee of a single curve: the first `K` at or after the steepest step where
/// the drop `epsilon(K) - epsilon(K + 1)` falls below `theta` times that step.
/// A curve that rises anywhere is replaced by its running minimum.
pub fn knee(curve: &ResidualCurve, theta: f64) -> Result<usize> {
    let v = &curve.values;
    if v.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "knee detection needs at least 3 points, got {}",
            v.len()
        )));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "theta must be in (0, 1), got {theta}"
        )));
    }
    let mut drops: Vec<f64> = v.windows(2).map(|w| w[0] - w[1]).collect();
    if let Some(k) = drops.iter().position(|&d| d < -1e-12) {
        log::warn!(
            "residual curve of a {}-point region rises at K = {}; using its running minimum",
            curve.region.len(),
            k + 1
        );
        let mut floor = f64::INFINITY;
        let envelope: Vec<f64> = v
            .iter()
            .map(|&e| {
                floor = floor.min(e);
                floor
            })
            .collect();
        drops = envelope.windows(2).map(|w| w[0] - w[1]).collect();
    }
    let (steepest, dmax) =
        drops
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, d)| {
                if d > best.1 {
                    (k, d)
                } else {
                    best
                }
            });
    if dmax <= 1e-12 {
        return Err(Error::NoKnee("curve is flat; choose K manually".into()));
    }
    drops[steepest..]
        .iter()
        .position(|&d| d < theta * dmax)
        .map(|off| steepest + off + 1)
        .ok_or_else(|| Error::NoKnee("drops never level off (no knee); choose K manually".into()))
}

/// Largest per-region knee. Regions without a knee are skipped as long as
/// at least one region has one.
pub fn select_dimension(curves: &[ResidualCurve], theta: f64) -> Result<usize> {
    if curves.is_empty() {
        return Err(Error::InvalidParameter("no residual curves given".into()));
    }
    let mut best = None;
    let mut last_err = None;
    for c in curves {
        match knee(c, theta) {
            Ok(k) => best = Some(best.map_or(k, |b: usize| b.max(k))),
            Err(e @ Error::NoKnee(_)) => {
                log::warn!("skipping a {}-point region: {e}", c.region.len());
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| last_err.expect("every curve failed"))
}
