//! Synthetic ground-truth datasets: a disk of "activated" voxels inside a
//! disk-shaped brain, where activated voxels carry a stimulus convolved with
//! a two-gamma hemodynamic response on top of background noise.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::{TimeSeriesMatrix, VoxelMask};
use crate::error::{Error, Result};
use crate::stats::quantile;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrfParams {
    pub alpha: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c: f64,
}

impl Default for HrfParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            a1: 6.0,
            a2: 12.0,
            b1: 1.0,
            b2: 0.9,
            c: 0.35,
        }
    }
}

impl HrfParams {
    pub fn d1(&self) -> f64 {
        self.a1 * self.b1
    }

    pub fn d2(&self) -> f64 {
        self.a2 * self.b2
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.a1, self.a2, self.b1, self.b2, self.c];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "HRF parameters must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `alpha (t/d1)^a1 e^{-(t-d1)/b1} - c (t/d2)^a2 e^{-(t-d2)/b2}` with
/// `d_j = a_j b_j`; zero for `t <= 0`.
pub fn hrf(t: f64, p: &HrfParams) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let (d1, d2) = (p.d1(), p.d2());
    // Evaluated in log space; the powers overflow long before the product does.
    let first = (p.a1 * (t / d1).ln() - (t - d1) / p.b1).exp();
    let second = (p.a2 * (t / d2).ln() - (t - d2) / p.b2).exp();
    p.alpha * first - p.c * second
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulusSeries {
    samples: Vec<f64>,
    tr_seconds: f64,
}

impl StimulusSeries {
    pub fn new(samples: Vec<f64>, tr_seconds: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter("stimulus is empty".into()));
        }
        if !(tr_seconds.is_finite() && tr_seconds > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "TR must be positive, got {tr_seconds}"
            )));
        }
        if let Some(t) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: t, col: 0 });
        }
        Ok(Self {
            samples,
            tr_seconds,
        })
    }

    /// Boxcar starting "on": `on_seconds` on, `off_seconds` off, sampled at
    /// `t = i * TR`.
    pub fn block(
        on_seconds: f64,
        off_seconds: f64,
        tr_seconds: f64,
        n_samples: usize,
    ) -> Result<Self> {
        if !(on_seconds > 0.0 && off_seconds >= 0.0) {
            return Err(Error::InvalidParameter(
                "block durations must be positive".into(),
            ));
        }
        let period = on_seconds + off_seconds;
        let samples = (0..n_samples)
            .map(|i| {
                let t = i as f64 * tr_seconds;
                if t.rem_euclid(period) < on_seconds - 1e-9 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Self::new(samples, tr_seconds)
    }

    /// One value per non-empty line; a header line is skipped if present.
    pub fn from_csv(text: &str, tr_seconds: f64) -> Result<Self> {
        let mut samples = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let field = line.split(',').next().unwrap_or("").trim();
            if field.is_empty() {
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) => samples.push(v),
                Err(_) if ln == 0 => {}
                Err(e) => {
                    return Err(Error::Parse {
                        line: ln + 1,
                        msg: format!("{field:?}: {e}"),
                    })
                }
            }
        }
        Self::new(samples, tr_seconds)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stimulus\n");
        for v in &self.samples {
            let _ = writeln!(s, "{v}");
        }
        s
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn tr_seconds(&self) -> f64 {
        self.tr_seconds
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Causal convolution of a stimulus with a kernel sampled at `t = k * TR`,
/// truncated to the stimulus length.
pub fn convolve_kernel(g: &StimulusSeries, kernel: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = g.len();
    let h: Vec<f64> = (0..n).map(|k| kernel(k as f64 * g.tr_seconds)).collect();
    (0..n)
        .map(|t| (0..=t).map(|s| g.samples[s] * h[t - s]).sum())
        .collect()
}

pub fn convolve_stimulus(g: &StimulusSeries, p: &HrfParams) -> Vec<f64> {
    convolve_kernel(g, |t| hrf(t, p))
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackgroundSource {
    /// Real background series; rows above the `screen_quantile` variance
    /// quantile are discarded, the rest are drawn without replacement.
    Pool {
        series: TimeSeriesMatrix,
        screen_quantile: f64,
    },
    /// Stationary AR(1) with coefficient `rho` and innovation s.d. `sigma`.
    Ar1 { rho: f64, sigma: f64 },
}

impl Default for BackgroundSource {
    fn default() -> Self {
        BackgroundSource::Ar1 {
            rho: 0.3,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub grid: [usize; 2],
    /// Shared center of both disks, in voxel coordinates.
    pub center: [f64; 2],
    pub brain_radius: f64,
    pub activation_radius: f64,
    pub background: BackgroundSource,
    pub alpha_range: (f64, f64),
    pub b1_range: (f64, f64),
    /// Shape parameters of the response; `alpha` and `b1` are drawn per voxel.
    pub hrf: HrfParams,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            grid: [40, 40],
            center: [19.0, 19.3],
            brain_radius: 18.4,
            activation_radius: 5.55,
            background: BackgroundSource::default(),
            alpha_range: (0.8, 1.2),
            b1_range: (5.0, 10.0),
            hrf: HrfParams::default(),
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.grid.contains(&0) {
            return bad("grid dimensions must be positive".into());
        }
        if !(self.activation_radius > 0.0 && self.activation_radius < self.brain_radius) {
            return bad(format!(
                "activation radius {} must be positive and inside the brain radius {}",
                self.activation_radius, self.brain_radius
            ));
        }
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !range_ok(self.alpha_range) || self.alpha_range.0 < 0.0 {
            return bad(format!("invalid alpha range {:?}", self.alpha_range));
        }
        if !range_ok(self.b1_range) || self.b1_range.0 <= 0.0 {
            return bad(format!("invalid b1 range {:?}", self.b1_range));
        }
        match &self.background {
            BackgroundSource::Ar1 { rho, sigma } => {
                if !(rho.abs() < 1.0 && *sigma > 0.0) {
                    return bad(format!(
                        "AR(1) needs |rho| < 1 and sigma > 0, got {rho}, {sigma}"
                    ));
                }
            }
            BackgroundSource::Pool {
                screen_quantile, ..
            } => {
                if !(*screen_quantile > 0.0 && *screen_quantile <= 1.0) {
                    return bad(format!("screen quantile {screen_quantile} outside (0, 1]"));
                }
            }
        }
        HrfParams {
            alpha: 1.0,
            b1: 1.0,
            ..self.hrf
        }
        .validate()
    }

    fn disk_d2(&self, x: usize, y: usize) -> f64 {
        (x as f64 - self.center[0]).powi(2) + (y as f64 - self.center[1]).powi(2)
    }

    /// Brain voxels in `x`-major order with their activation flags.
    pub fn geometry(&self) -> Result<(VoxelMask, Vec<bool>)> {
        self.validate()?;
        let mut coords = Vec::new();
        let mut truth = Vec::new();
        for x in 0..self.grid[0] {
            for y in 0..self.grid[1] {
                let d2 = self.disk_d2(x, y);
                if d2 <= self.brain_radius.powi(2) {
                    coords.push([x, y, 0]);
                    truth.push(d2 <= self.activation_radius.powi(2));
                }
            }
        }
        if coords.len() < 2 || !truth.iter().any(|&t| t) {
            return Err(Error::InvalidParameter(
                "phantom geometry has fewer than 2 brain voxels or no activated voxel".into(),
            ));
        }
        let mask = VoxelMask::new(coords, [self.grid[0], self.grid[1], 1])?;
        Ok((mask, truth))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub data: TimeSeriesMatrix,
    pub truth: Vec<bool>,
    pub mask: VoxelMask,
    /// `(alpha, b1)` per voxel; `None` for non-activated voxels.
    pub params: Vec<Option<(f64, f64)>>,
}

impl Phantom {
    pub fn n_voxels(&self) -> usize {
        self.truth.len()
    }

    pub fn n_activated(&self) -> usize {
        self.truth.iter().filter(|&&t| t).count()
    }

    /// `index,activated`.
    pub fn truth_csv(&self) -> String {
        truth_csv(&self.truth)
    }
}

pub fn truth_csv(truth: &[bool]) -> String {
    let mut s = String::from("index,activated\n");
    for (i, &t) in truth.iter().enumerate() {
        let _ = writeln!(s, "{i},{}", u8::from(t));
    }
    s
}

/// Parses `index,activated` (header optional).
pub fn parse_truth_csv(text: &str) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (ln == 0 && line.starts_with("index")) {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (idx, val) = (fields.next(), fields.next());
        let parse_err = |msg: String| Error::Parse { line: ln + 1, msg };
        let idx: usize = idx
            .unwrap_or("")
            .parse()
            .map_err(|e| parse_err(format!("bad index: {e}")))?;
        if idx != out.len() {
            return Err(parse_err(format!(
                "expected index {}, found {idx}",
                out.len()
            )));
        }
        match val {
            Some("0") => out.push(false),
            Some("1") => out.push(true),
            other => {
                return Err(parse_err(format!(
                    "activation flag must be 0 or 1, got {other:?}"
                )))
            }
        }
    }
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Rows whose variance does not exceed the `q` quantile of all variances.
pub fn screen_pool(pool: &TimeSeriesMatrix, q: f64) -> Result<Vec<usize>> {
    let variances: Vec<f64> = pool
        .rows()
        .map(|r| {
            let m = r.iter().sum::<f64>() / r.len() as f64;
            r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / r.len() as f64
        })
        .collect();
    let cut = quantile(&variances, q)?;
    Ok((0..pool.n_points())
        .filter(|&i| variances[i] <= cut)
        .collect())
}

type Activation = Option<(f64, f64)>;

/// Generates one realization. Voxel `i` draws from ChaCha8 stream `i` of
/// `spec.seed`; the activation added to an activated voxel is
/// `alpha * (g * h_{b1})`, so a zero `alpha` leaves the background untouched.
pub fn generate_phantom(spec: &PhantomSpec, stimulus: &StimulusSeries) -> Result<Phantom> {
    let (mask, truth) = spec.geometry()?;
    let n = truth.len();
    let t_len = stimulus.len();
    if t_len < 2 {
        return Err(Error::InvalidParameter(
            "stimulus needs at least 2 samples".into(),
        ));
    }

    let pool_rows: Option<(&TimeSeriesMatrix, Vec<usize>)> = match &spec.background {
        BackgroundSource::Pool {
            series,
            screen_quantile,
        } => {
            if series.n_samples() != t_len {
                return Err(Error::InvalidParameter(format!(
                    "pool series have {} samples, stimulus has {t_len}",
                    series.n_samples()
                )));
            }
            let mut keep = screen_pool(series, *screen_quantile)?;
            if keep.len() < n {
                return Err(Error::InvalidParameter(format!(
                    "background pool exhausted: {} usable series for {n} voxels",
                    keep.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(u64::MAX);
            keep.shuffle(&mut rng);
            keep.truncate(n);
            Some((series, keep))
        }
        BackgroundSource::Ar1 { .. } => None,
    };

    let rows: Vec<(Vec<f64>, Activation)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let mut row = match (&spec.background, &pool_rows) {
                (BackgroundSource::Ar1 { rho, sigma }, _) => {
                    let mut row = Vec::with_capacity(t_len);
                    let e0: f64 = rng.sample(StandardNormal);
                    let mut prev = e0 * sigma / (1.0 - rho * rho).sqrt();
                    row.push(prev);
                    for _ in 1..t_len {
                        let e: f64 = rng.sample(StandardNormal);
                        prev = rho * prev + sigma * e;
                        row.push(prev);
                    }
                    row
                }
                (_, Some((series, keep))) => series.row(keep[i]).to_vec(),
                (BackgroundSource::Pool { .. }, None) => unreachable!(),
            };
            let params = truth[i].then(|| {
                let alpha = uniform(&mut rng, spec.alpha_range);
                let b1 = uniform(&mut rng, spec.b1_range);
                let p = HrfParams {
                    alpha: 1.0,
                    b1,
                    ..spec.hrf
                };
                for (x, f) in row.iter_mut().zip(convolve_stimulus(stimulus, &p)) {
                    *x += alpha * f;
                }
                (alpha, b1)
            });
            (row, params)
        })
        .collect();

    let (rows, params): (Vec<Vec<f64>>, Vec<Activation>) = rows.into_iter().unzip();
    let data = TimeSeriesMatrix::from_rows(&rows)?;
    log::info!(
        "phantom: {n} brain voxels, {} activated",
        truth.iter().filter(|&&t| t).count()
    );
    Ok(Phantom {
        data,
        truth,
        mask,
        params,
    })
}
