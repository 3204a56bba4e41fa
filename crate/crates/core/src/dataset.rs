//! Time-series datasets: storage, file formats and preconditioning.
//!
//! A dataset is an `N x T` matrix whose row `i` is the time series of point
//! (voxel) `i`. Values are held as `f64` in memory and written as
//! little-endian `f32` in the binary format.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const FTS_MAGIC: &[u8; 4] = b"FTS1";

/// Row-major `N x T` matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesMatrix {
    n_points: usize,
    n_samples: usize,
    values: Vec<f64>,
}

impl TimeSeriesMatrix {
    /// Builds a matrix from row-major values. Requires `N >= 2`, `T >= 1`
    /// and every entry finite.
    pub fn new(n_points: usize, n_samples: usize, values: Vec<f64>) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 points, got {n_points}"
            )));
        }
        if n_samples < 1 {
            return Err(Error::InvalidParameter("need at least 1 sample".into()));
        }
        if values.len() != n_points * n_samples {
            return Err(Error::InvalidParameter(format!(
                "expected {} values for a {n_points}x{n_samples} matrix, got {}",
                n_points * n_samples,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / n_samples,
                col: pos % n_samples,
            });
        }
        Ok(Self {
            n_points,
            n_samples,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != t) {
            return Err(Error::DimensionMismatch {
                line: i + 1,
                expected: t,
                found: r.len(),
            });
        }
        Self::new(rows.len(), t, rows.concat())
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            values.extend(m.row(i).iter());
        }
        Self::new(m.nrows(), m.ncols(), values)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_points, self.n_samples, &self.values)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_samples)
    }

    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.values[i * self.n_samples + t]
    }

    /// Scan at time `t`: the value of every point at that sample.
    pub fn scan(&self, t: usize) -> Vec<f64> {
        (0..self.n_points).map(|i| self.get(i, t)).collect()
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, ids: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(ids.len() * self.n_samples);
        for &i in ids {
            if i >= self.n_points {
                return Err(Error::InvalidParameter(format!(
                    "row {i} out of range for {} points",
                    self.n_points
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(ids.len(), self.n_samples, values)
    }

    fn map_rows(&self, n_out: usize, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let mut values = vec![0.0; self.n_points * n_out];
        for (row, out) in self.rows().zip(values.chunks_exact_mut(n_out)) {
            f(row, out);
        }
        Self {
            n_points: self.n_points,
            n_samples: n_out,
            values,
        }
    }
}

/// On-disk dataset encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    FtsBinary,
    Csv,
}

impl DataFormat {
    /// `.fts` is binary, everything else is treated as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("fts") => DataFormat::FtsBinary,
            _ => DataFormat::Csv,
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<TimeSeriesMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        DataFormat::FtsBinary => decode_fts(&bytes),
        DataFormat::Csv => {
            let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
                line: 0,
                msg: e.to_string(),
            })?;
            parse_csv(&text)
        }
    }
}

pub fn save_dataset(
    path: impl AsRef<Path>,
    format: DataFormat,
    x: &TimeSeriesMatrix,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        DataFormat::FtsBinary => encode_fts(x),
        DataFormat::Csv => format_csv(x).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `FTS1`, u32 N, u32 T, then N*T float32, all little-endian.
pub fn encode_fts(x: &TimeSeriesMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * x.values.len());
    out.extend_from_slice(FTS_MAGIC);
    out.extend_from_slice(&(x.n_points as u32).to_le_bytes());
    out.extend_from_slice(&(x.n_samples as u32).to_le_bytes());
    for &v in &x.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_fts(bytes: &[u8]) -> Result<TimeSeriesMatrix> {
    if bytes.len() < 12 {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, shorter than the 12-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != FTS_MAGIC {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}, expected \"FTS1\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    let expected = n
        .checked_mul(t)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader(format!("header N={n}, T={t} overflows")))?;
    if payload.len() != expected {
        return Err(Error::DimensionMismatch {
            line: 0,
            expected: n * t,
            found: payload.len() / 4,
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    TimeSeriesMatrix::new(n, t, values)
}

/// One row per point; fields separated by commas and/or whitespace.
pub fn parse_csv(text: &str) -> Result<TimeSeriesMatrix> {
    let mut values = Vec::new();
    let mut n_samples = None;
    let mut n_points = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
        {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: n_points,
                    col: count,
                });
            }
            values.push(v);
            count += 1;
        }
        match n_samples {
            None => n_samples = Some(count),
            Some(t) if t != count => {
                return Err(Error::DimensionMismatch {
                    line: lineno + 1,
                    expected: t,
                    found: count,
                })
            }
            _ => {}
        }
        n_points += 1;
    }
    TimeSeriesMatrix::new(n_points, n_samples.unwrap_or(0), values)
}

pub fn format_csv(x: &TimeSeriesMatrix) -> String {
    let mut s = String::new();
    for row in x.rows() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

/// Removes each row's least-squares affine trend `a + b t`.
pub fn detrend_linear(x: &TimeSeriesMatrix) -> Result<TimeSeriesMatrix> {
    let t_len = x.n_samples;
    if t_len < 3 {
        return Err(Error::InvalidParameter(format!(
            "detrending needs at least 3 samples, got {t_len}"
        )));
    }
    let t_mean = (t_len - 1) as f64 / 2.0;
    let centered: Vec<f64> = (0..t_len).map(|t| t as f64 - t_mean).collect();
    let sxx: f64 = centered.iter().map(|c| c * c).sum();
    Ok(x.map_rows(t_len, |row, out| {
        let mean = row.iter().sum::<f64>() / t_len as f64;
        let slope = row.iter().zip(&centered).map(|(v, c)| v * c).sum::<f64>() / sxx;
        for ((o, v), c) in out.iter_mut().zip(row).zip(&centered) {
            *o = v - mean - slope * c;
        }
    }))
}

/// Subtracts the best rank-`n_modes` approximation of `x` (its leading
/// singular triplets). `n_modes = 0` returns `x` unchanged.
pub fn svd_denoise(x: &TimeSeriesMatrix, n_modes: usize) -> Result<TimeSeriesMatrix> {
    let limit = x.n_points.min(x.n_samples);
    if n_modes >= limit {
        return Err(Error::InvalidParameter(format!(
            "n_modes must be below min(N, T) = {limit}, got {n_modes}"
        )));
    }
    if n_modes == 0 {
        return Ok(x.clone());
    }
    let m = x.to_dmatrix();
    let svd = m.clone().svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = m;
    for &k in order.iter().take(n_modes) {
        let s = svd.singular_values[k];
        out -= (u.column(k) * s) * vt.row(k);
    }
    TimeSeriesMatrix::from_dmatrix(&out)
}

/// Averages windows `[onset, onset + trial_len)` across trials.
pub fn average_trials(
    x: &TimeSeriesMatrix,
    trial_onsets: &[usize],
    trial_len: usize,
) -> Result<TimeSeriesMatrix> {
    if trial_onsets.is_empty() {
        return Err(Error::InvalidParameter("no trial onsets given".into()));
    }
    if trial_len == 0 {
        return Err(Error::InvalidParameter(
            "trial length must be positive".into(),
        ));
    }
    if let Some(&bad) = trial_onsets.iter().find(|&&o| o + trial_len > x.n_samples) {
        return Err(Error::InvalidParameter(format!(
            "trial window [{bad}, {}) exceeds {} samples",
            bad + trial_len,
            x.n_samples
        )));
    }
    let scale = 1.0 / trial_onsets.len() as f64;
    Ok(x.map_rows(trial_len, |row, out| {
        for &o in trial_onsets {
            for (acc, v) in out.iter_mut().zip(&row[o..o + trial_len]) {
                *acc += v;
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
    }))
}

/// Spatial location of every point on an `(x, y, slice)` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelMask {
    coords: Vec<[usize; 3]>,
    grid_dims: [usize; 3],
}

impl VoxelMask {
    /// `coords[i]` is the grid position of point `i`.
    pub fn new(coords: Vec<[usize; 3]>, grid_dims: [usize; 3]) -> Result<Self> {
        let mut seen = HashSet::with_capacity(coords.len());
        for (i, c) in coords.iter().enumerate() {
            if (0..3).any(|a| c[a] >= grid_dims[a]) {
                return Err(Error::InvalidParameter(format!(
                    "point {i} at {c:?} lies outside grid {grid_dims:?}"
                )));
            }
            if !seen.insert(*c) {
                return Err(Error::InvalidParameter(format!(
                    "point {i} duplicates grid position {c:?}"
                )));
            }
        }
        Ok(Self { coords, grid_dims })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[usize; 3]] {
        &self.coords
    }

    pub fn grid_dims(&self) -> [usize; 3] {
        self.grid_dims
    }

    /// Sidecar CSV with header `index,x,y,slice`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,x,y,slice\n");
        for (i, c) in self.coords.iter().enumerate() {
            s.push_str(&format!("{i},{},{},{}\n", c[0], c[1], c[2]));
        }
        s
    }

    /// Parses the sidecar CSV. Indices must cover `0..n` exactly once. When
    /// `grid_dims` is `None` the grid is the bounding box of the coordinates.
    pub fn from_csv(text: &str, grid_dims: Option<[usize; 3]>) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "index,x,y,slice" => {}
            other => {
                return Err(Error::MalformedHeader(format!(
                    "mask header must be \"index,x,y,slice\", found {:?}",
                    other.map(|(_, l)| l)
                )))
            }
        }
        let mut entries = Vec::new();
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::DimensionMismatch {
                    line: lineno + 1,
                    expected: 4,
                    found: fields.len(),
                });
            }
            let mut vals = [0usize; 4];
            for (v, f) in vals.iter_mut().zip(&fields) {
                *v = f.parse().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: format!("not a non-negative integer: {f:?}"),
                })?;
            }
            entries.push(vals);
        }
        let n = entries.len();
        let mut coords = vec![None; n];
        for e in &entries {
            let slot = coords.get_mut(e[0]).ok_or_else(|| {
                Error::InvalidParameter(format!("mask index {} out of range 0..{n}", e[0]))
            })?;
            if slot.is_some() {
                return Err(Error::InvalidParameter(format!(
                    "mask index {} listed twice",
                    e[0]
                )));
            }
            *slot = Some([e[1], e[2], e[3]]);
        }
        let coords: Vec<[usize; 3]> = coords.into_iter().map(Option::unwrap).collect();
        let dims = grid_dims.unwrap_or_else(|| {
            let mut d = [1usize; 3];
            for c in &coords {
                for a in 0..3 {
                    d[a] = d[a].max(c[a] + 1);
                }
            }
            d
        });
        Self::new(coords, dims)
    }

    pub fn load(path: impl AsRef<Path>, grid_dims: Option<[usize; 3]>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, grid_dims)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> TimeSeriesMatrix {
        TimeSeriesMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn csv_two_by_three() {
        let x = parse_csv("1,2,3\n4,5,6").unwrap();
        assert_eq!(x, m(&[&[1., 2., 3.], &[4., 5., 6.]]));
    }

    #[test]
    fn csv_accepts_whitespace() {
        let x = parse_csv("1 2\t3\n  4, 5 ,6\n\n").unwrap();
        assert_eq!(x, m(&[&[1., 2., 3.], &[4., 5., 6.]]));
    }

    #[test]
    fn csv_rejects_nan() {
        assert!(matches!(
            parse_csv("1,2,3\n4,nan,6"),
            Err(Error::NonFinite { row: 1, col: 1 })
        ));
        assert!(matches!(parse_csv("1,inf"), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn csv_ragged_and_garbage_are_distinct_errors() {
        assert!(matches!(
            parse_csv("1,2,3\n4,5"),
            Err(Error::DimensionMismatch {
                line: 2,
                expected: 3,
                found: 2
            })
        ));
        assert!(matches!(
            parse_csv("1,x,3\n4,5,6"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn fts_matches_csv() {
        let mut bytes = b"FTS1".to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for v in [1f32, 2., 3., 4., 5., 6.] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(
            decode_fts(&bytes).unwrap(),
            parse_csv("1,2,3\n4,5,6").unwrap()
        );
        assert_eq!(encode_fts(&decode_fts(&bytes).unwrap()), bytes);
    }

    #[test]
    fn fts_header_errors() {
        assert!(matches!(decode_fts(b"FTS"), Err(Error::MalformedHeader(_))));
        assert!(matches!(
            decode_fts(b"FTS2\x02\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0"),
            Err(Error::MalformedHeader(_))
        ));
        let mut short = b"FTS1".to_vec();
        short.extend_from_slice(&2u32.to_le_bytes());
        short.extend_from_slice(&3u32.to_le_bytes());
        short.extend_from_slice(&[0u8; 20]);
        assert!(matches!(
            decode_fts(&short),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut nan = b"FTS1".to_vec();
        nan.extend_from_slice(&2u32.to_le_bytes());
        nan.extend_from_slice(&1u32.to_le_bytes());
        nan.extend_from_slice(&1f32.to_le_bytes());
        nan.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_fts(&nan),
            Err(Error::NonFinite { row: 1, col: 0 })
        ));
    }

    #[test]
    fn detrend_pure_line_and_zero() {
        let x = m(&[&[1., 2., 3., 4.], &[0., 0., 0., 0.]]);
        let d = detrend_linear(&x).unwrap();
        for v in d.values() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn detrend_needs_three_samples() {
        assert!(detrend_linear(&m(&[&[1., 2.], &[3., 4.]])).is_err());
    }

    // Least squares via the 2x2 normal equations, independent of the centered form.
    fn detrend_oracle(row: &[f64]) -> Vec<f64> {
        let n = row.len() as f64;
        let (mut st, mut stt, mut sx, mut stx) = (0.0, 0.0, 0.0, 0.0);
        for (t, &v) in row.iter().enumerate() {
            let t = t as f64;
            st += t;
            stt += t * t;
            sx += v;
            stx += t * v;
        }
        let det = n * stt - st * st;
        let a = (stt * sx - st * stx) / det;
        let b = (n * stx - st * sx) / det;
        row.iter()
            .enumerate()
            .map(|(t, v)| v - a - b * t as f64)
            .collect()
    }

    #[test]
    fn detrend_alternating_matches_normal_equations() {
        // An even-length alternating row carries a small linear component
        // (slope -3/(T^2-1)), so it is not returned unchanged.
        let row: Vec<f64> = (0..8).map(|t| if t % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let x = TimeSeriesMatrix::from_rows(&[row.clone(), row.clone()]).unwrap();
        let d = detrend_linear(&x).unwrap();
        let oracle = detrend_oracle(&row);
        for (a, b) in d.row(0).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        let slope = -3.0 / 63.0;
        assert!((d.row(0)[0] - (0.5 + slope * 3.5)).abs() < 1e-12);
    }

    #[test]
    fn detrend_keeps_zero_mean_symmetric_row() {
        let row = vec![1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0];
        let x = TimeSeriesMatrix::from_rows(&[row.clone(), row.clone()]).unwrap();
        let d = detrend_linear(&x).unwrap();
        for (a, b) in d.row(0).iter().zip(&row) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn svd_denoise_identity_and_rank_one() {
        let x = m(&[&[1., 2., 3.], &[2., 4., 6.], &[-1., -2., -3.]]);
        assert_eq!(svd_denoise(&x, 0).unwrap(), x);
        let r = svd_denoise(&x, 1).unwrap();
        assert!(r.values().iter().all(|v| v.abs() < 1e-10));
        assert!(svd_denoise(&x, 3).is_err());
    }

    #[test]
    fn average_trials_examples() {
        let x = m(&[&[1., 2., 3., 4.], &[0., 0., 4., 4.]]);
        let a = average_trials(&x, &[0, 2], 2).unwrap();
        assert_eq!(a.row(0), &[2., 3.]);
        assert_eq!(a.row(1), &[2., 2.]);
        assert_eq!(average_trials(&x, &[0], 4).unwrap(), x);
        assert!(average_trials(&x, &[3], 2).is_err());
        assert!(average_trials(&x, &[], 2).is_err());
    }

    #[test]
    fn average_fifteen_trials_of_eight() {
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..128).map(|t| (i * t) as f64).collect())
            .collect();
        let x = TimeSeriesMatrix::from_rows(&rows).unwrap();
        let onsets: Vec<usize> = (0..15).map(|k| 8 * k).collect();
        assert_eq!(average_trials(&x, &onsets, 8).unwrap().n_samples(), 8);
    }

    #[test]
    fn mask_csv_round_trip_and_validation() {
        let mask = VoxelMask::new(vec![[0, 0, 0], [2, 1, 0], [1, 1, 1]], [3, 2, 2]).unwrap();
        let back = VoxelMask::from_csv(&mask.to_csv(), Some([3, 2, 2])).unwrap();
        assert_eq!(back, mask);
        let inferred = VoxelMask::from_csv(&mask.to_csv(), None).unwrap();
        assert_eq!(inferred.grid_dims(), [3, 2, 2]);
        assert!(VoxelMask::new(vec![[0, 0, 0], [0, 0, 0]], [1, 1, 1]).is_err());
        assert!(VoxelMask::new(vec![[0, 3, 0]], [1, 1, 1]).is_err());
        assert!(VoxelMask::from_csv("i,x,y,z\n0,0,0,0\n", None).is_err());
        assert!(VoxelMask::from_csv("index,x,y,slice\n1,0,0,0\n", None).is_err());
    }
}
