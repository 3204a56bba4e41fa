use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::TimeSeriesMatrix;
use crate::error::{Error, Result};
use crate::phantom::{convolve_kernel, StimulusSeries};
use crate::stats::student_t_sf;

pub const DALE_DELTA: f64 = 2.5;
pub const DALE_TAU: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sidedness {
    /// `H1: beta > 0`.
    OneSided,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmResult {
    pub beta: Vec<f64>,
    pub t_stat: Vec<f64>,
    pub p_value: Vec<f64>,
    pub dof: usize,
    pub sidedness: Sidedness,
}

impl GlmResult {
    /// `index,beta,t,p`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,beta,t,p\n");
        for i in 0..self.beta.len() {
            let _ = writeln!(
                s,
                "{i},{:e},{:e},{:e}",
                self.beta[i], self.t_stat[i], self.p_value[i]
            );
        }
        s
    }

    /// Voxels with `p <= alpha`.
    pub fn significant(&self, alpha: f64) -> Vec<bool> {
        self.p_value.iter().map(|&p| p <= alpha).collect()
    }
}

/// Per-row least squares on `[1, regressor]` with a Student t-test on the
/// slope, `T - 2` degrees of freedom.
pub fn glm_tmap(
    x: &TimeSeriesMatrix,
    regressor: &[f64],
    sidedness: Sidedness,
) -> Result<GlmResult> {
    let t_len = x.n_samples();
    if regressor.len() != t_len {
        return Err(Error::InvalidParameter(format!(
            "regressor has {} samples, data has {t_len}",
            regressor.len()
        )));
    }
    if t_len <= 2 {
        return Err(Error::InvalidParameter(format!(
            "GLM needs more than 2 samples, got {t_len}"
        )));
    }
    if regressor.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "regressor has non-finite values".into(),
        ));
    }
    let r_mean = regressor.iter().sum::<f64>() / t_len as f64;
    let rc: Vec<f64> = regressor.iter().map(|r| r - r_mean).collect();
    let sxx: f64 = rc.iter().map(|v| v * v).sum();
    let scale: f64 = regressor.iter().map(|v| v * v).sum();
    if sxx <= 1e-24 * scale.max(1e-300) || sxx == 0.0 {
        return Err(Error::InvalidParameter("regressor is constant".into()));
    }
    let dof = t_len - 2;
    let stats: Vec<(f64, f64, f64)> = x
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|row| {
            let m = row.iter().sum::<f64>() / t_len as f64;
            let sxy: f64 = row.iter().zip(&rc).map(|(y, r)| (y - m) * r).sum();
            let beta = sxy / sxx;
            let rss: f64 = row
                .iter()
                .zip(&rc)
                .map(|(y, r)| (y - m - beta * r).powi(2))
                .sum();
            let se = (rss / dof as f64 / sxx).sqrt();
            let t = if se > 0.0 {
                beta / se
            } else if beta == 0.0 {
                0.0
            } else {
                beta.signum() * f64::INFINITY
            };
            let p = match sidedness {
                Sidedness::OneSided => student_t_sf(t, dof as f64),
                Sidedness::TwoSided => (2.0 * student_t_sf(t.abs(), dof as f64)).min(1.0),
            };
            (beta, t, p)
        })
        .collect();
    let mut out = GlmResult {
        beta: Vec::with_capacity(stats.len()),
        t_stat: Vec::with_capacity(stats.len()),
        p_value: Vec::with_capacity(stats.len()),
        dof,
        sidedness,
    };
    for (b, t, p) in stats {
        out.beta.push(b);
        out.t_stat.push(t);
        out.p_value.push(p);
    }
    Ok(out)
}

/// `((t - delta)/tau)^2 e^{-(t - delta)/tau}` for `t >= delta`, else 0.
pub fn dale_hrf(t: f64, delta: f64, tau: f64) -> f64 {
    if t < delta {
        return 0.0;
    }
    let u = (t - delta) / tau;
    u * u * (-u).exp()
}

pub fn dale_hrf_regressor(stimulus: &StimulusSeries, delta: f64, tau: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0 && tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta and tau must be positive, got {delta}, {tau}"
        )));
    }
    Ok(convolve_kernel(stimulus, |t| dale_hrf(t, delta, tau)))
}
