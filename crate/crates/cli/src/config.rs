//! Pipeline and phantom configuration files (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use ctmap_core::cluster::ClusterConfig;
use ctmap_core::graph::{GraphConfig, DEFAULT_SIGMA_MULTIPLIER};
use ctmap_core::phantom::{HrfParams, PhantomSpec, StimulusSeries};
use ctmap_core::spectral::{Solver, DEFAULT_KNEE_THETA};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Drives every random choice (eigensolver start, cluster seeding).
    pub seed: u64,
    pub input: InputSection,
    pub preprocess: PreprocessSection,
    pub graph: GraphSection,
    pub embed: EmbedSection,
    pub cluster: ClusterSection,
    pub glm: GlmSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputSection {
    pub path: Option<PathBuf>,
    /// "auto", "fts" or "csv".
    pub format: Format,
    pub mask: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Auto,
    Fts,
    Csv,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub detrend: bool,
    pub svd_modes: usize,
    pub trial_onsets: Vec<usize>,
    pub trial_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    pub n_neighbors: usize,
    pub sigma_multiplier: f64,
    pub sigma: Option<f64>,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            n_neighbors: 9,
            sigma_multiplier: DEFAULT_SIGMA_MULTIPLIER,
            sigma: None,
        }
    }
}

impl GraphSection {
    pub fn to_core(&self) -> GraphConfig {
        GraphConfig {
            sigma_multiplier: self.sigma_multiplier,
            explicit_sigma: self.sigma,
            ..GraphConfig::new(self.n_neighbors)
        }
    }
}

/// An embedding dimension or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KSetting {
    Fixed(usize),
    Named(AutoK),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoK {
    Auto,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverSetting {
    #[default]
    Auto,
    Dense,
    Lanczos,
}

impl SolverSetting {
    pub fn to_core(self) -> Solver {
        match self {
            SolverSetting::Auto => Solver::Auto,
            SolverSetting::Dense => Solver::Dense,
            SolverSetting::Lanczos => Solver::Lanczos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedSection {
    pub k: KSetting,
    /// Largest `K` examined by residual curves when `k = "auto"`.
    pub k_max: usize,
    pub theta: f64,
    /// Provisional dimension used to form regions for `k = "auto"`.
    pub provisional_k: usize,
    pub solver: SolverSetting,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self {
            k: KSetting::Fixed(3),
            k_max: 20,
            theta: DEFAULT_KNEE_THETA,
            provisional_k: 3,
            solver: SolverSetting::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSection {
    pub n_clusters: Option<usize>,
    pub radius_quantile: f64,
    pub min_cluster_fraction: f64,
    pub max_merge_iters: usize,
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        let c = ClusterConfig::default();
        Self {
            n_clusters: c.n_clusters,
            radius_quantile: c.radius_quantile,
            min_cluster_fraction: c.min_cluster_fraction,
            max_merge_iters: c.max_merge_iters,
            max_iters: c.max_iters,
            restarts: c.restarts,
        }
    }
}

impl ClusterSection {
    pub fn to_core(&self, seed: u64) -> ClusterConfig {
        ClusterConfig {
            n_clusters: self.n_clusters,
            radius_quantile: self.radius_quantile,
            min_cluster_fraction: self.min_cluster_fraction,
            max_merge_iters: self.max_merge_iters,
            max_iters: self.max_iters,
            restarts: self.restarts,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressorKind {
    /// Two-gamma response with the `alpha` and `b1` of this section.
    #[default]
    Hrf,
    /// Single-gamma response with `delta` and `tau`.
    Dale,
    /// Regressor read verbatim from `regressor_path`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlmSection {
    pub regressor: RegressorKind,
    pub stimulus: Option<PathBuf>,
    pub regressor_path: Option<PathBuf>,
    pub tr: f64,
    pub alpha: f64,
    pub b1: f64,
    pub delta: f64,
    pub tau: f64,
    pub p_threshold: f64,
    pub two_sided: bool,
}

impl Default for GlmSection {
    fn default() -> Self {
        Self {
            regressor: RegressorKind::Hrf,
            stimulus: None,
            regressor_path: None,
            tr: 3.0,
            alpha: 1.0,
            b1: 1.0,
            delta: ctmap_core::baselines::DALE_DELTA,
            tau: ctmap_core::baselines::DALE_TAU,
            p_threshold: 0.001,
            two_sided: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("ctmap-out"),
        }
    }
}

/// `path` joined onto `base` and made absolute, so an emitted config can be
/// reloaded from any directory.
pub fn absolute(base: &Path, path: &Path) -> PathBuf {
    let joined = base.join(path);
    std::path::absolute(&joined).unwrap_or(joined)
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        *path = absolute(base, path);
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl PipelineConfig {
    /// Parses a config file; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read_text(path)?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.input.path);
        resolve(base, &mut self.input.mask);
        resolve(base, &mut self.input.truth);
        resolve(base, &mut self.glm.stimulus);
        resolve(base, &mut self.glm.regressor_path);
        self.output.dir = absolute(base, &self.output.dir);
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Invalid(m));
        if let KSetting::Fixed(0) = self.embed.k {
            return bad("embed.k must be positive or \"auto\"".into());
        }
        if self.embed.k_max < 3 {
            return bad("embed.k_max must be at least 3".into());
        }
        if !(self.embed.theta > 0.0 && self.embed.theta < 1.0) {
            return bad(format!(
                "embed.theta must be in (0, 1), got {}",
                self.embed.theta
            ));
        }
        if self.embed.provisional_k == 0 {
            return bad("embed.provisional_k must be positive".into());
        }
        if !self.preprocess.trial_onsets.is_empty() && self.preprocess.trial_len == 0 {
            return bad("preprocess.trial_len must be positive when trial_onsets are given".into());
        }
        self.cluster.to_core(self.seed).validate()?;
        for p in [&self.input.path, &self.input.mask, &self.input.truth]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return bad(format!("referenced file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub phantom: PhantomSection,
    pub background: BackgroundSection,
    pub stimulus: StimulusSection,
    pub hrf: HrfSection,
    pub output: OutputSection,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomSection::default(),
            background: BackgroundSection::default(),
            stimulus: StimulusSection::default(),
            hrf: HrfSection::default(),
            output: OutputSection {
                dir: PathBuf::from("phantom-out"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub grid: [usize; 2],
    pub center: [f64; 2],
    pub brain_radius: f64,
    pub activation_radius: f64,
    pub alpha_range: [f64; 2],
    pub b1_range: [f64; 2],
    pub seed: u64,
    pub realizations: usize,
}

impl Default for PhantomSection {
    fn default() -> Self {
        let s = PhantomSpec::default();
        Self {
            grid: s.grid,
            center: s.center,
            brain_radius: s.brain_radius,
            activation_radius: s.activation_radius,
            alpha_range: [s.alpha_range.0, s.alpha_range.1],
            b1_range: [s.b1_range.0, s.b1_range.1],
            seed: s.seed,
            realizations: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKind {
    #[default]
    Ar1,
    Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundSection {
    pub kind: BackgroundKind,
    pub rho: f64,
    pub sigma: f64,
    pub pool: Option<PathBuf>,
    pub screen_quantile: f64,
}

impl Default for BackgroundSection {
    fn default() -> Self {
        Self {
            kind: BackgroundKind::Ar1,
            rho: 0.3,
            sigma: 1.0,
            pool: None,
            screen_quantile: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StimulusSection {
    /// CSV with one value per TR; overrides the block design below.
    pub path: Option<PathBuf>,
    pub tr: f64,
    pub on_seconds: f64,
    pub off_seconds: f64,
    pub n_samples: usize,
}

impl Default for StimulusSection {
    fn default() -> Self {
        Self {
            path: None,
            tr: 3.0,
            on_seconds: 30.0,
            off_seconds: 30.0,
            n_samples: 80,
        }
    }
}

impl StimulusSection {
    pub fn build(&self) -> CliResult<StimulusSeries> {
        Ok(match &self.path {
            Some(p) => StimulusSeries::from_csv(&read_text(p)?, self.tr)?,
            None => {
                StimulusSeries::block(self.on_seconds, self.off_seconds, self.tr, self.n_samples)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HrfSection {
    pub a1: f64,
    pub a2: f64,
    pub b2: f64,
    pub c: f64,
}

impl Default for HrfSection {
    fn default() -> Self {
        let h = HrfParams::default();
        Self {
            a1: h.a1,
            a2: h.a2,
            b2: h.b2,
            c: h.c,
        }
    }
}

impl SynthConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read_text(path)?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.background.pool);
        resolve(base, &mut cfg.stimulus.path);
        cfg.output.dir = absolute(base, &cfg.output.dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hrf_params(&self) -> HrfParams {
        HrfParams {
            a1: self.hrf.a1,
            a2: self.hrf.a2,
            b2: self.hrf.b2,
            c: self.hrf.c,
            ..HrfParams::default()
        }
    }
}
