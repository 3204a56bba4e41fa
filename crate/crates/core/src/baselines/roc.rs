use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// FPR values reported in summaries.
pub const SUMMARY_FPRS: [f64; 3] = [0.003, 0.005, 0.009];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Points scoring at or above this value are called positive.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Threshold sweep over the distinct scores, from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(scores: &[f64], truth: &[bool]) -> Result<RocCurve> {
    if scores.len() != truth.len() {
        return Err(Error::InvalidParameter(format!(
            "{} scores for {} truth labels",
            scores.len(),
            truth.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite { row: i, col: 0 });
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(format!(
            "truth needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if truth[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: s,
        });
    }
    Ok(RocCurve { points })
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5)
            .sum()
    }

    /// TPR at `fpr`, linear between curve points; on a vertical segment the
    /// highest TPR is used.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let p = &self.points;
        let last = p.partition_point(|q| q.fpr <= fpr);
        if last == 0 {
            return 0.0;
        }
        let a = p[last - 1];
        if last == p.len() || a.fpr == fpr {
            return a.tpr;
        }
        let b = p[last];
        a.tpr + (b.tpr - a.tpr) * (fpr - a.fpr) / (b.fpr - a.fpr)
    }

    /// `fpr,tpr,threshold`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            let _ = writeln!(s, "{:e},{:e},{:e}", p.fpr, p.tpr, p.threshold);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedRoc {
    pub fpr: Vec<f64>,
    pub mean_tpr: Vec<f64>,
    pub sd_tpr: Vec<f64>,
    pub n_curves: usize,
}

impl AveragedRoc {
    /// Mean TPR at `fpr`, linear between grid points.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let i = self.fpr.partition_point(|&f| f <= fpr);
        if i == 0 {
            return self.mean_tpr[0];
        }
        if i == self.fpr.len() || self.fpr[i - 1] == fpr {
            return self.mean_tpr[i - 1];
        }
        let (f0, f1) = (self.fpr[i - 1], self.fpr[i]);
        let (t0, t1) = (self.mean_tpr[i - 1], self.mean_tpr[i]);
        t0 + (t1 - t0) * (fpr - f0) / (f1 - f0)
    }

    /// `fpr,tpr,sd`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr,sd\n");
        for i in 0..self.fpr.len() {
            let _ = writeln!(
                s,
                "{:e},{:e},{:e}",
                self.fpr[i], self.mean_tpr[i], self.sd_tpr[i]
            );
        }
        s
    }

    pub fn auc(&self) -> f64 {
        (1..self.fpr.len())
            .map(|i| {
                (self.fpr[i] - self.fpr[i - 1]) * (self.mean_tpr[i] + self.mean_tpr[i - 1]) * 0.5
            })
            .sum()
    }
}

/// `n + 1` evenly spaced FPR values on `[0, 1]` plus the summary FPRs.
pub fn fpr_grid(n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=n.max(1)).map(|i| i as f64 / n.max(1) as f64).collect();
    g.extend(SUMMARY_FPRS);
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Vertical averaging: mean and s.d. of TPR across curves at each grid FPR.
pub fn vertical_average(curves: &[RocCurve], grid: &[f64]) -> Result<AveragedRoc> {
    if curves.is_empty() || grid.is_empty() {
        return Err(Error::InvalidParameter("nothing to average".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "FPR grid must be strictly increasing".into(),
        ));
    }
    let m = curves.len() as f64;
    let mut mean_tpr = Vec::with_capacity(grid.len());
    let mut sd_tpr = Vec::with_capacity(grid.len());
    for &f in grid {
        let v: Vec<f64> = curves.iter().map(|c| c.tpr_at(f)).collect();
        let mean = v.iter().sum::<f64>() / m;
        let var = if curves.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        mean_tpr.push(mean);
        sd_tpr.push(var.sqrt());
    }
    Ok(AveragedRoc {
        fpr: grid.to_vec(),
        mean_tpr,
        sd_tpr,
        n_curves: curves.len(),
    })
}

/// Mean silhouette over all points with Euclidean distance; points in
/// singleton clusters score 0.
pub fn silhouette(points: &[&[f64]], labels: &[usize]) -> Result<f64> {
    let n = points.len();
    if labels.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{} labels for {n} points",
            labels.len()
        )));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Degenerate(
            "silhouette needs at least two non-empty clusters".into(),
        ));
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let s: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] += dist(points[i], points[j]);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(s.iter().sum::<f64>() / n as f64)
}
