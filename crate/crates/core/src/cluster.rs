//! Background / structure separation in the embedding: a radius split around
//! the origin, then spherical (angular) k-means on the remaining directions,
//! then merging of clusters that are too small.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::VoxelMask;
use crate::error::{Error, Result};
use crate::spectral::Embedding;
use crate::stats::quantile;

/// Radii below this fraction of the largest radius have no usable direction.
pub const ZERO_RADIUS_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    /// Total labels including background; `None` means `K + 1`.
    pub n_clusters: Option<usize>,
    pub radius_quantile: f64,
    pub min_cluster_fraction: f64,
    pub max_merge_iters: usize,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            n_clusters: None,
            radius_quantile: 0.5,
            min_cluster_fraction: 0.01,
            max_merge_iters: 10,
            max_iters: 300,
            restarts: 20,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_quantile > 0.0 && self.radius_quantile < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "radius_quantile must be in (0, 1), got {}",
                self.radius_quantile
            )));
        }
        if !(0.0..1.0).contains(&self.min_cluster_fraction) {
            return Err(Error::InvalidParameter(format!(
                "min_cluster_fraction must be in [0, 1), got {}",
                self.min_cluster_fraction
            )));
        }
        if matches!(self.n_clusters, Some(n) if n < 2) {
            return Err(Error::InvalidParameter(
                "n_clusters counts the background and must be at least 2".into(),
            ));
        }
        if self.max_iters == 0 || self.restarts == 0 {
            return Err(Error::InvalidParameter(
                "max_iters and restarts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSplit {
    pub background: Vec<usize>,
    pub foreground: Vec<usize>,
    pub threshold: f64,
    /// All radii equal (or zero); everything went to background.
    pub degenerate: bool,
}

pub fn split_background(emb: &Embedding, radius_quantile: f64) -> Result<BackgroundSplit> {
    let n = emb.n_points();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "background split needs at least 2 points".into(),
        ));
    }
    if !(radius_quantile > 0.0 && radius_quantile < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "radius_quantile must be in (0, 1), got {radius_quantile}"
        )));
    }
    let radii = emb.radii();
    let max = radii.iter().copied().fold(0.0, f64::max);
    let min = radii.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 || max - min <= ZERO_RADIUS_FRACTION * max {
        log::warn!("all embedding radii are equal; every point is labeled background");
        return Ok(BackgroundSplit {
            background: (0..n).collect(),
            foreground: vec![],
            threshold: max,
            degenerate: true,
        });
    }
    let threshold = quantile(&radii, radius_quantile)?;
    let floor = ZERO_RADIUS_FRACTION * max;
    let (background, foreground): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| radii[i] <= threshold || radii[i] < floor);
    Ok(BackgroundSplit {
        background,
        foreground,
        threshold,
        degenerate: false,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0).acos()
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = dot(v, v).sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// Unit vectors; cluster `c` has centroid `centroids[c]`.
    pub centroids: Vec<Vec<f64>>,
    /// Sum of point-to-centroid angles after each assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().unwrap_or(&f64::INFINITY)
    }
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .par_iter()
        .map(|p| {
            let mut best = 0;
            let mut best_cos = f64::NEG_INFINITY;
            for (c, cen) in centroids.iter().enumerate() {
                let cos = dot(p, cen);
                if cos > best_cos {
                    best_cos = cos;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn total_angle(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &[usize]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| angle(p, &centroids[l]))
        .sum()
}

/// Lloyd iterations from the given centroids. A centroid update is skipped
/// when it would increase its cluster's angle sum, so the recorded objective
/// never goes up. The returned centroids are the mean directions of the
/// final clusters.
fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> KMeansResult {
    let dim = points[0].len();
    let mut labels = assign(points, &centroids);
    let mut history = vec![total_angle(points, &centroids, &labels)];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let mut sum = vec![0.0; dim];
            let mut members = Vec::new();
            for (p, &l) in points.iter().zip(&labels) {
                if l == c {
                    sum.iter_mut().zip(p).for_each(|(s, x)| *s += x);
                    members.push(p);
                }
            }
            if let Some(candidate) = unit(&sum) {
                let old: f64 = members.iter().map(|p| angle(p, centroid)).sum();
                let new: f64 = members.iter().map(|p| angle(p, &candidate)).sum();
                if new <= old {
                    *centroid = candidate;
                }
            }
        }
        let next = assign(points, &centroids);
        history.push(total_angle(points, &centroids, &next));
        if next == labels {
            break;
        }
        labels = next;
    }
    // Report each centroid as the normalized mean direction of its members.
    for (c, centroid) in centroids.iter_mut().enumerate() {
        let mut sum = vec![0.0; dim];
        for (p, &l) in points.iter().zip(&labels) {
            if l == c {
                sum.iter_mut().zip(p).for_each(|(s, x)| *s += x);
            }
        }
        if let Some(mean) = unit(&sum) {
            *centroid = mean;
        }
    }
    KMeansResult {
        labels,
        centroids,
        objective_history: history,
        iterations,
    }
}

fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| angle(p, &centroids[0]).powi(2))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(angle(p, &c).powi(2));
        }
        centroids.push(c);
    }
    centroids
}

fn count_distinct(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| (x + 0.0).to_bits()).collect())
        .collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

fn normalize_points(points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("no points to cluster".into()));
    }
    let dim = points[0].len();
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.len() != dim {
                return Err(Error::InvalidParameter(format!(
                    "point {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            unit(p).ok_or_else(|| Error::Degenerate(format!("point {i} has no direction")))
        })
        .collect()
}

/// Relabels clusters by decreasing size, then by centroid coordinates.
fn canonicalize(mut res: KMeansResult) -> KMeansResult {
    let k = res.centroids.len();
    let mut sizes = vec![0usize; k];
    res.labels.iter().for_each(|&l| sizes[l] += 1);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        sizes[b].cmp(&sizes[a]).then_with(|| {
            res.centroids[a]
                .iter()
                .zip(&res.centroids[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut rank = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    res.labels.iter_mut().for_each(|l| *l = rank[*l]);
    res.centroids = order.iter().map(|&c| res.centroids[c].clone()).collect();
    res
}

/// Spherical k-means with angular distance. Seeding is k-means++ over
/// squared angles; `restarts` independent seedings are run and the lowest
/// final angle sum wins.
pub fn angular_kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    restarts: usize,
) -> Result<KMeansResult> {
    let unit_points = normalize_points(points)?;
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let distinct = count_distinct(&unit_points);
    if k > distinct {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the {distinct} distinct directions"
        )));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let start = seed_centroids(&unit_points, k, &mut rng);
        let res = lloyd(&unit_points, start, max_iters);
        if best
            .as_ref()
            .is_none_or(|b| res.objective() < b.objective())
        {
            best = Some(res);
        }
    }
    Ok(canonicalize(best.expect("at least one restart")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLabels {
    /// 0 is background, clusters are `1..=n_clusters`.
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    /// `sizes[0]` is the background count.
    pub sizes: Vec<usize>,
    pub threshold: f64,
}

impl ClusterLabels {
    pub fn from_labels(labels: Vec<usize>, threshold: f64) -> Self {
        let n_clusters = labels.iter().copied().max().unwrap_or(0);
        let mut sizes = vec![0; n_clusters + 1];
        labels.iter().for_each(|&l| sizes[l] += 1);
        Self {
            labels,
            n_clusters,
            sizes,
            threshold,
        }
    }

    pub fn members(&self, label: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }

    /// `index,label`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,label\n");
        for (i, l) in self.labels.iter().enumerate() {
            let _ = writeln!(s, "{i},{l}");
        }
        s
    }

    pub fn gray_level(&self, label: usize) -> u8 {
        if label == 0 || self.n_clusters == 0 {
            128
        } else {
            (128.0 + (127.0 * label as f64 / self.n_clusters as f64).round()) as u8
        }
    }

    /// One binary PGM (P5) per slice; 0 outside the mask, 128 for background,
    /// evenly spaced gray levels up to 255 for clusters.
    pub fn pgm_maps(&self, mask: &VoxelMask) -> Result<Vec<Vec<u8>>> {
        let levels: Vec<u8> = self.labels.iter().map(|&l| self.gray_level(l)).collect();
        label_maps(&levels, mask)
    }
}

/// Writes per-point gray levels into one P5 image per slice.
pub fn label_maps(levels: &[u8], mask: &VoxelMask) -> Result<Vec<Vec<u8>>> {
    if levels.len() != mask.len() {
        return Err(Error::InvalidParameter(format!(
            "{} values for a mask of {} voxels",
            levels.len(),
            mask.len()
        )));
    }
    let [w, h, depth] = mask.grid_dims();
    let mut images = vec![vec![0u8; w * h]; depth];
    for (c, &v) in mask.coords().iter().zip(levels) {
        images[c[2]][c[1] * w + c[0]] = v;
    }
    Ok(images
        .into_iter()
        .map(|px| {
            let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
            out.extend(px);
            out
        })
        .collect())
}

/// Background split, angular k-means on the foreground, then merging of
/// clusters smaller than `min_cluster_fraction * N` into the cluster with
/// the angularly closest centroid.
pub fn cluster_embedding(emb: &Embedding, cfg: &ClusterConfig) -> Result<ClusterLabels> {
    cfg.validate()?;
    let n = emb.n_points();
    let split = split_background(emb, cfg.radius_quantile)?;
    if split.foreground.is_empty() {
        return Err(Error::Degenerate(
            "foreground is empty after the background split".into(),
        ));
    }
    let n_total = cfg.n_clusters.unwrap_or(emb.dim() + 1);
    let points: Vec<Vec<f64>> = split
        .foreground
        .iter()
        .map(|&i| emb.point(i).to_vec())
        .collect();
    let unit_points = normalize_points(&points)?;
    let distinct = count_distinct(&unit_points);
    let mut k = n_total - 1;
    if k > distinct {
        log::warn!("only {distinct} distinct foreground directions; using k = {distinct}");
        k = distinct;
    }
    let mut res = angular_kmeans(&points, k, cfg.seed, cfg.max_iters, cfg.restarts)?;

    let min_size = cfg.min_cluster_fraction * n as f64;
    for _ in 0..cfg.max_merge_iters {
        let k_now = res.centroids.len();
        if k_now <= 1 {
            break;
        }
        let mut sizes = vec![0usize; k_now];
        res.labels.iter().for_each(|&l| sizes[l] += 1);
        let Some(small) = (0..k_now)
            .filter(|&c| (sizes[c] as f64) < min_size)
            .min_by_key(|&c| (sizes[c], c))
        else {
            break;
        };
        let target = (0..k_now)
            .filter(|&c| c != small)
            .max_by(|&a, &b| {
                dot(&res.centroids[small], &res.centroids[a])
                    .total_cmp(&dot(&res.centroids[small], &res.centroids[b]))
                    .then(b.cmp(&a))
            })
            .expect("k >= 2");
        log::debug!(
            "merging cluster {small} ({} points) into {target}",
            sizes[small]
        );
        let centroids: Vec<Vec<f64>> = res
            .centroids
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != small)
            .map(|(_, v)| v.clone())
            .collect();
        res = canonicalize(lloyd(&unit_points, centroids, cfg.max_iters));
    }

    let mut labels = vec![0; n];
    for (&i, &l) in split.foreground.iter().zip(&res.labels) {
        labels[i] = l + 1;
    }
    let mut out = ClusterLabels::from_labels(labels, split.threshold);
    out.n_clusters = res.centroids.len();
    out.sizes.resize(out.n_clusters + 1, 0);
    Ok(out)
}
