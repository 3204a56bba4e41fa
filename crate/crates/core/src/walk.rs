//! Dense random-walk oracle: transition matrix, fundamental matrix, exact
//! hitting times and Monte-Carlo first-passage estimates.
//!
//! Linear algebra here is deliberately self-contained (Gaussian elimination
//! with partial pivoting) so that it shares no code with the eigensolver path
//! it is used to check.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::ConnectivityGraph;

pub const DEFAULT_DENSE_CAP: usize = 2000;
pub const DEFAULT_WALK_CAP: u64 = 1_000_000;
pub const MIN_WALKS: usize = 100;

#[derive(Debug, Clone)]
pub struct WalkModel {
    transition: DMatrix<f64>,
    stationary: Vec<f64>,
    fundamental: DMatrix<f64>,
    /// Per row: (next state, cumulative probability), for sampling.
    cumulative: Vec<Vec<(usize, f64)>>,
}

/// Inverse of a square matrix by Gauss-Jordan elimination with partial
/// pivoting. Pivots below `1e-14` times the largest entry are treated as
/// singular.
pub fn invert(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| a[(i, j)]).collect();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r, &s| m[r][col].abs().total_cmp(&m[s][col].abs()))
            .unwrap();
        if m[piv][col].abs() < 1e-14 * scale {
            return None;
        }
        m.swap(col, piv);
        let p = m[col][col];
        m[col].iter_mut().for_each(|v| *v /= p);
        let pivot_row = m[col].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r == col {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row).skip(col) {
                    *v -= f * pv;
                }
            }
        }
    }
    Some(DMatrix::from_fn(n, n, |i, j| m[i][n + j]))
}

impl WalkModel {
    pub fn new(g: &ConnectivityGraph) -> Result<Self> {
        Self::with_cap(g, DEFAULT_DENSE_CAP)
    }

    pub fn with_cap(g: &ConnectivityGraph, cap: usize) -> Result<Self> {
        let n = g.n_nodes();
        if n > cap {
            return Err(Error::InvalidParameter(format!(
                "walk oracle is dense; {n} nodes exceed the cap of {cap}"
            )));
        }
        let sizes = g.component_sizes();
        if sizes.len() > 1 {
            return Err(Error::Disconnected {
                component_sizes: sizes,
            });
        }
        let mut p = DMatrix::zeros(n, n);
        let mut cumulative = Vec::with_capacity(n);
        for i in 0..n {
            let d = g.degree(i);
            let mut acc = 0.0;
            let mut cum = Vec::with_capacity(g.neighbors(i).len());
            for (&j, &w) in g.neighbors(i).iter().zip(g.edge_weights(i)) {
                p[(i, j)] = w / d;
                acc += w / d;
                cum.push((j, acc));
            }
            if let Some(last) = cum.last_mut() {
                last.1 = 1.0;
            }
            cumulative.push(cum);
        }
        let vol: f64 = g.degrees().iter().sum();
        let stationary: Vec<f64> = g.degrees().iter().map(|d| d / vol).collect();
        // I - P + 1 pi^T
        let a = DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - p[(i, j)] + stationary[j]
        });
        let fundamental = invert(&a).ok_or_else(|| {
            Error::Inconsistent("I - P + Pi is singular on a connected graph".into())
        })?;
        Ok(Self {
            transition: p,
            stationary,
            fundamental,
            cumulative,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.stationary.len()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// `Pi = 1 pi^T`, materialized on request.
    pub fn stationary_outer(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        DMatrix::from_fn(n, n, |_, j| self.stationary[j])
    }

    pub fn fundamental(&self) -> &DMatrix<f64> {
        &self.fundamental
    }

    /// Max entry of `|Z (I - P + Pi) - I|`.
    pub fn inverse_residual(&self) -> f64 {
        let n = self.n_nodes();
        let a = DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - self.transition[(i, j)] + self.stationary[j]
        });
        let prod = &self.fundamental * a;
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (prod[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    fn check_ids(&self, i: usize, j: usize) -> Result<()> {
        let n = self.n_nodes();
        if i >= n || j >= n {
            return Err(Error::InvalidParameter(format!(
                "node ids ({i}, {j}) out of range for {n} nodes"
            )));
        }
        Ok(())
    }

    /// `E_i[T_j] = (Z_jj - Z_ij) / pi_j`.
    pub fn hitting_time(&self, i: usize, j: usize) -> Result<f64> {
        self.check_ids(i, j)?;
        if i == j {
            return Ok(0.0);
        }
        let z = &self.fundamental;
        Ok((z[(j, j)] - z[(i, j)]) / self.stationary[j])
    }

    pub fn commute_time(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.hitting_time(i, j)? + self.hitting_time(j, i)?)
    }

    pub fn hitting_times(&self) -> HittingTimes {
        let n = self.n_nodes();
        let z = &self.fundamental;
        let values = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                (z[(j, j)] - z[(i, j)]) / self.stationary[j]
            }
        });
        HittingTimes { values }
    }

    /// Largest violation of `E_i[T_j] = 1 + sum_{k != j} P_ik E_k[T_j]` over
    /// `i != j`.
    pub fn verify_one_step(&self, h: &HittingTimes) -> f64 {
        let n = self.n_nodes();
        let p = &self.transition;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let next: f64 = (0..n)
                    .filter(|&k| k != j)
                    .map(|k| p[(i, k)] * h.values[(k, j)])
                    .sum();
                worst = worst.max((h.values[(i, j)] - 1.0 - next).abs());
            }
        }
        worst
    }

    /// Empirical first-passage time from `i` to `j`. Walk `w` draws from its
    /// own ChaCha8 stream `w` under `seed`, so results do not depend on
    /// thread scheduling.
    pub fn monte_carlo_hitting(
        &self,
        i: usize,
        j: usize,
        n_walks: usize,
        seed: u64,
    ) -> Result<MonteCarloEstimate> {
        self.monte_carlo_hitting_capped(i, j, n_walks, seed, DEFAULT_WALK_CAP)
    }

    pub fn monte_carlo_hitting_capped(
        &self,
        i: usize,
        j: usize,
        n_walks: usize,
        seed: u64,
        walk_cap: u64,
    ) -> Result<MonteCarloEstimate> {
        self.check_ids(i, j)?;
        if n_walks < MIN_WALKS {
            return Err(Error::InvalidParameter(format!(
                "at least {MIN_WALKS} walks required, got {n_walks}"
            )));
        }
        if i == j {
            return Ok(MonteCarloEstimate {
                mean: 0.0,
                stderr: 0.0,
                completed: n_walks,
                capped: 0,
            });
        }
        let lengths: Vec<Option<u64>> = (0..n_walks)
            .into_par_iter()
            .map(|w| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(w as u64);
                let mut state = i;
                for step in 1..=walk_cap {
                    let u: f64 = rng.gen();
                    let row = &self.cumulative[state];
                    let idx = row.partition_point(|&(_, c)| c <= u).min(row.len() - 1);
                    state = row[idx].0;
                    if state == j {
                        return Some(step);
                    }
                }
                None
            })
            .collect();
        let done: Vec<f64> = lengths.iter().flatten().map(|&s| s as f64).collect();
        let capped = n_walks - done.len();
        if capped > 0 {
            log::warn!("{capped} of {n_walks} walks hit the {walk_cap}-step cap and were excluded");
        }
        if done.len() < 2 {
            return Err(Error::NoConvergence {
                iterations: walk_cap as usize,
                residual: f64::NAN,
            });
        }
        let m = done.len() as f64;
        let mean = done.iter().sum::<f64>() / m;
        let var = done.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        Ok(MonteCarloEstimate {
            mean,
            stderr: (var / m).sqrt(),
            completed: done.len(),
            capped,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HittingTimes {
    /// `values[(i, j)] = E_i[T_j]`.
    pub values: DMatrix<f64>,
}

impl HittingTimes {
    /// `i,j,hitting_time` for all ordered pairs.
    pub fn to_csv(&self) -> String {
        let n = self.values.nrows();
        let mut s = String::from("i,j,hitting_time\n");
        for i in 0..n {
            for j in 0..n {
                let _ = writeln!(s, "{i},{j},{:e}", self.values[(i, j)]);
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub completed: usize,
    /// Walks that reached the step cap; not part of `mean`.
    pub capped: usize,
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    fn path3() -> ConnectivityGraph {
        ConnectivityGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    fn cycle4() -> ConnectivityGraph {
        ConnectivityGraph::from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 3, 1.0)])
            .unwrap()
    }

    #[test]
    fn two_node_model() {
        let g = ConnectivityGraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        let m = WalkModel::new(&g).unwrap();
        assert_eq!(m.transition()[(0, 1)], 1.0);
        assert_eq!(m.transition()[(0, 0)], 0.0);
        assert_eq!(m.stationary(), &[0.5, 0.5]);
        assert!((m.hitting_time(0, 1).unwrap() - 1.0).abs() < 1e-12);
        let h = m.hitting_times();
        assert!(m.verify_one_step(&h) < 1e-14);
        let mc = m.monte_carlo_hitting(0, 1, 100, 3).unwrap();
        assert_eq!((mc.mean, mc.stderr), (1.0, 0.0));
    }

    #[test]
    fn path_hitting_times() {
        let m = WalkModel::new(&path3()).unwrap();
        assert_eq!(m.transition()[(1, 0)], 0.5);
        assert_eq!(m.transition()[(1, 2)], 0.5);
        // Oracle values from the first-step equations solved by hand.
        let want = [[0.0, 1.0, 4.0], [3.0, 0.0, 3.0], [4.0, 1.0, 0.0]];
        let h = m.hitting_times();
        for i in 0..3 {
            for j in 0..3 {
                assert!((h.values[(i, j)] - want[i][j]).abs() < 1e-12, "{i} {j}");
            }
        }
        assert!((m.commute_time(0, 2).unwrap() - 8.0).abs() < 1e-12);
        assert!(m.verify_one_step(&h) < 1e-12);
    }

    #[test]
    fn cycle_hitting_times() {
        let m = WalkModel::new(&cycle4()).unwrap();
        let h = m.hitting_times();
        for i in 0..4 {
            assert!((h.values[(i, (i + 1) % 4)] - 3.0).abs() < 1e-12);
            assert!((h.values[(i, (i + 2) % 4)] - 4.0).abs() < 1e-12);
        }
        assert!(m.verify_one_step(&h) < 1e-10);
        assert!(m.inverse_residual() < 1e-12);
    }

    #[test]
    fn monte_carlo_on_path() {
        let m = WalkModel::new(&path3()).unwrap();
        let mc = m.monte_carlo_hitting(0, 2, 100_000, 11).unwrap();
        assert!((mc.mean - 4.0).abs() < 3.0 * mc.stderr, "{mc:?}");
        assert_eq!(mc.capped, 0);
        let again = m.monte_carlo_hitting(0, 2, 100_000, 11).unwrap();
        assert_eq!(mc, again);
        let same = m.monte_carlo_hitting(2, 2, 100, 0).unwrap();
        assert_eq!((same.mean, same.stderr), (0.0, 0.0));
        assert!(m.monte_carlo_hitting(0, 2, 99, 0).is_err());
    }

    #[test]
    fn capped_walks_are_counted() {
        let m = WalkModel::new(&path3()).unwrap();
        let mc = m.monte_carlo_hitting_capped(0, 2, 1000, 5, 2).unwrap();
        assert!(mc.capped > 0);
        assert_eq!(mc.completed + mc.capped, 1000);
        assert_eq!(mc.mean, 2.0);
    }

    #[test]
    fn dense_cap_enforced() {
        assert!(WalkModel::with_cap(&path3(), 2).is_err());
    }

    #[test]
    fn inverse_of_singular_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(invert(&a).is_none());
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        let inv = invert(&b).unwrap();
        assert!((inv[(0, 1)] - 0.5).abs() < 1e-15 && (inv[(1, 0)] - 1.0).abs() < 1e-15);
    }
}
