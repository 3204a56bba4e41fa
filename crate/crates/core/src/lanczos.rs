//! Thick-restart Lanczos for the largest eigenpairs of a symmetric operator.
//!
//! The Krylov basis is fully reorthogonalized (two Gram-Schmidt passes) and
//! the projected matrix is formed explicitly from the stored `A v_j`
//! products, so the method tolerates the loss of orthogonality that plain
//! three-term Lanczos suffers from. On restart the leading Ritz vectors are
//! kept together with the pending continuation vector, which keeps the
//! retained subspace Krylov-like.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LanczosOptions {
    /// Absolute residual tolerance `|A x - theta x|` for every wanted pair.
    pub tol: f64,
    pub max_restarts: usize,
    /// Maximum basis size; `None` picks `max(2 nev + 20, 40)`.
    pub subspace: Option<usize>,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_restarts: 20_000,
            subspace: None,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Descending.
    pub values: Vec<f64>,
    /// One unit vector per value.
    pub vectors: Vec<Vec<f64>>,
    pub restarts: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Removes the components of `w` along `basis` (assumed orthonormal), twice.
fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>], fixed: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in fixed.iter().chain(basis) {
            let c = dot(w, b);
            axpy(-c, b, w);
        }
    }
}

/// Next unit vector orthogonal to `basis` and `fixed`. Falls back to random
/// directions when `w` lies (numerically) in their span; `None` when the
/// space is exhausted.
fn next_direction(
    mut w: Vec<f64>,
    basis: &[Vec<f64>],
    fixed: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Option<Vec<f64>> {
    let n = w.len();
    let scale = norm(&w).max(1.0);
    orthogonalize(&mut w, basis, fixed);
    let mut nrm = norm(&w);
    let mut attempts = 0;
    while nrm <= 1e-10 * scale {
        if basis.len() + fixed.len() >= n || attempts >= 5 {
            return None;
        }
        w = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        orthogonalize(&mut w, basis, fixed);
        nrm = norm(&w);
        attempts += 1;
        if nrm > 1e-8 {
            break;
        }
    }
    w.iter_mut().for_each(|v| *v /= nrm);
    Some(w)
}

/// Largest `nev` eigenpairs of the symmetric operator `apply` restricted to
/// the orthogonal complement of the orthonormal vectors in `deflate`.
pub fn largest_eigenpairs<F>(
    n: usize,
    nev: usize,
    apply: F,
    deflate: &[Vec<f64>],
    opts: &LanczosOptions,
) -> Result<EigenPairs>
where
    F: Fn(&[f64], &mut [f64]),
{
    let dim = n - deflate.len();
    if nev == 0 {
        return Ok(EigenPairs {
            values: vec![],
            vectors: vec![],
            restarts: 0,
        });
    }
    if nev > dim {
        return Err(Error::InvalidParameter(format!(
            "asked for {nev} eigenpairs of a {dim}-dimensional space"
        )));
    }
    let m = opts
        .subspace
        .unwrap_or_else(|| (2 * nev + 20).max(40))
        .max(nev + 1)
        .min(dim);
    let keep = (nev + (m - nev) / 2).min(m.saturating_sub(1)).max(nev);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let mut pending = next_direction(start, &[], deflate, &mut rng)
        .ok_or_else(|| Error::Inconsistent("no start vector outside the deflated space".into()))?;

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut images: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut worst = f64::INFINITY;

    for restart in 0..=opts.max_restarts {
        let mut exhausted = false;
        while basis.len() < m && !exhausted {
            let v = std::mem::take(&mut pending);
            let mut w = vec![0.0; n];
            apply(&v, &mut w);
            basis.push(v);
            images.push(w.clone());
            match next_direction(w, &basis, deflate, &mut rng) {
                Some(next) => pending = next,
                None => exhausted = true,
            }
        }

        let k = basis.len();
        let mut h = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let v = 0.5 * (dot(&basis[i], &images[j]) + dot(&basis[j], &images[i]));
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        let eig = h.symmetric_eigen();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let retain = if exhausted { nev.min(k) } else { keep.min(k) };
        let mut ritz = Vec::with_capacity(retain);
        let mut ritz_images = Vec::with_capacity(retain);
        let mut values = Vec::with_capacity(retain);
        worst = 0.0f64;
        for (rank, &c) in order.iter().take(retain).enumerate() {
            let y = eig.eigenvectors.column(c);
            let mut x = vec![0.0; n];
            let mut ax = vec![0.0; n];
            for j in 0..k {
                axpy(y[j], &basis[j], &mut x);
                axpy(y[j], &images[j], &mut ax);
            }
            let theta = eig.eigenvalues[c];
            if rank < nev {
                let r: f64 = ax
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - theta * b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(r);
            }
            ritz.push(x);
            ritz_images.push(ax);
            values.push(theta);
        }

        if worst <= opts.tol || exhausted {
            if ritz.len() < nev {
                return Err(Error::Inconsistent(format!(
                    "Krylov space exhausted with {} of {nev} pairs",
                    ritz.len()
                )));
            }
            ritz.truncate(nev);
            values.truncate(nev);
            let vectors = ritz
                .into_iter()
                .map(|mut x| {
                    let s = norm(&x);
                    x.iter_mut().for_each(|v| *v /= s);
                    x
                })
                .collect();
            log::debug!("lanczos: {nev} pairs after {restart} restarts, residual {worst:e}");
            return Ok(EigenPairs {
                values,
                vectors,
                restarts: restart,
            });
        }
        basis = ritz;
        images = ritz_images;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_restarts,
        residual: worst,
    })
}
