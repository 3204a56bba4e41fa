//! Stages shared by the subcommands: loading, preprocessing, graph and
//! spectral embedding, and the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ctmap_core::cluster::cluster_embedding;
use ctmap_core::dataset::{
    average_trials, detrend_linear, load_dataset, svd_denoise, DataFormat, TimeSeriesMatrix,
    VoxelMask,
};
use ctmap_core::graph::{build_graph, clustering_coefficients, ConnectivityGraph};
use ctmap_core::lanczos::LanczosOptions;
use ctmap_core::spectral::{
    decompose_with, embed, residual_curve, select_dimension, DecomposeOptions, Embedding,
    ResidualCurve, SpectralDecomposition,
};

use crate::config::{Format, KSetting, PipelineConfig};
use crate::error::{CliError, CliResult};

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self(dir.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(&path, bytes).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

pub fn load_input(cfg: &PipelineConfig) -> CliResult<TimeSeriesMatrix> {
    let path = cfg.input.path.as_deref().ok_or_else(|| {
        CliError::Invalid("no input dataset given ([input] path or --input)".into())
    })?;
    let format = match cfg.input.format {
        Format::Auto => DataFormat::from_path(path),
        Format::Fts => DataFormat::FtsBinary,
        Format::Csv => DataFormat::Csv,
    };
    let mut x = load_dataset(path, format)?;
    log::info!("loaded {} x {} dataset", x.n_points(), x.n_samples());
    let pre = &cfg.preprocess;
    if pre.detrend {
        x = detrend_linear(&x)?;
    }
    if pre.svd_modes > 0 {
        x = svd_denoise(&x, pre.svd_modes)?;
    }
    if !pre.trial_onsets.is_empty() {
        x = average_trials(&x, &pre.trial_onsets, pre.trial_len)?;
    }
    Ok(x)
}

pub fn load_mask(cfg: &PipelineConfig, n_points: usize) -> CliResult<Option<VoxelMask>> {
    let Some(path) = &cfg.input.mask else {
        return Ok(None);
    };
    let mask = VoxelMask::load(path, None)?;
    if mask.len() != n_points {
        return Err(CliError::Invalid(format!(
            "mask has {} voxels, dataset has {n_points} rows",
            mask.len()
        )));
    }
    Ok(Some(mask))
}

pub fn load_truth(cfg: &PipelineConfig, n_points: usize) -> CliResult<Option<Vec<bool>>> {
    let Some(path) = &cfg.input.truth else {
        return Ok(None);
    };
    let truth = ctmap_core::phantom::parse_truth_csv(&crate::config::read_text(path)?)?;
    if truth.len() != n_points {
        return Err(CliError::Invalid(format!(
            "truth has {} entries, dataset has {n_points} rows",
            truth.len()
        )));
    }
    Ok(Some(truth))
}

pub struct SpectralStage {
    pub graph: ConnectivityGraph,
    pub decomposition: SpectralDecomposition,
    pub embedding: Embedding,
    pub k: usize,
    pub curves: Vec<ResidualCurve>,
}

fn decompose_opts(cfg: &PipelineConfig) -> DecomposeOptions {
    DecomposeOptions {
        solver: cfg.embed.solver.to_core(),
        lanczos: LanczosOptions {
            seed: cfg.seed,
            ..LanczosOptions::default()
        },
    }
}

/// Graph, eigenpairs and embedding; for `k = "auto"` the dimension is the
/// largest knee over residual curves of the whole dataset and of each
/// provisional cluster.
pub fn spectral_stage(cfg: &PipelineConfig, x: &TimeSeriesMatrix) -> CliResult<SpectralStage> {
    let graph = build_graph(x, &cfg.graph.to_core())?;
    let n = x.n_points();
    let opts = decompose_opts(cfg);
    match cfg.embed.k {
        KSetting::Fixed(k) => {
            if k + 1 > n {
                return Err(CliError::Invalid(format!(
                    "embedding dimension {k} needs at least {} points",
                    k + 1
                )));
            }
            let decomposition = decompose_with(&graph, k + 1, &opts)?;
            let embedding = embed(&decomposition, k)?;
            Ok(SpectralStage {
                graph,
                decomposition,
                embedding,
                k,
                curves: vec![],
            })
        }
        KSetting::Named(_) => {
            let n_pairs = cfg.embed.k_max.max(cfg.embed.provisional_k + 1).min(n);
            let decomposition = decompose_with(&graph, n_pairs, &opts)?;
            let provisional_k = cfg.embed.provisional_k.min(n_pairs - 1);
            let provisional = embed(&decomposition, provisional_k)?;
            let mut regions: Vec<Vec<usize>> = vec![(0..n).collect()];
            match cluster_embedding(&provisional, &cfg.cluster.to_core(cfg.seed)) {
                Ok(labels) => {
                    for c in 1..=labels.n_clusters {
                        let m = labels.members(c);
                        if !m.is_empty() {
                            regions.push(m);
                        }
                    }
                }
                Err(e) => {
                    log::warn!("provisional clustering failed ({e}); using the whole dataset")
                }
            }
            let curves = regions
                .iter()
                .map(|r| residual_curve(x, &decomposition, r, n_pairs))
                .collect::<Result<Vec<_>, _>>()?;
            let k = select_dimension(&curves, cfg.embed.theta)?;
            log::info!("selected embedding dimension K = {k}");
            let embedding = embed(&decomposition, k)?;
            Ok(SpectralStage {
                graph,
                decomposition,
                embedding,
                k,
                curves,
            })
        }
    }
}

pub fn spectral_report(x: &TimeSeriesMatrix, st: &SpectralStage) -> String {
    let ev = st.decomposition.eigenvalues();
    let cc = clustering_coefficients(&st.graph);
    let mut s = String::new();
    let _ = writeln!(s, "n_points = {}", x.n_points());
    let _ = writeln!(s, "n_samples = {}", x.n_samples());
    let _ = writeln!(s, "n_edges = {}", st.graph.n_edges());
    if let Some(sigma) = st.graph.sigma() {
        let _ = writeln!(s, "sigma = {sigma:e}");
    }
    let _ = writeln!(s, "mean_clustering_coefficient = {:e}", cc.mean);
    let _ = writeln!(s, "k = {}", st.k);
    let _ = writeln!(s, "lambda_1 = {:e}", ev[0]);
    let _ = writeln!(s, "lambda_2 = {:e}", ev[1]);
    let _ = writeln!(s, "spectral_gap = {:e}", st.embedding.eigenvalue_gap());
    let degenerate = st.decomposition.degenerate().iter().filter(|&&d| d).count();
    let _ = writeln!(s, "degenerate_eigenvalues = {degenerate}");
    s
}

pub fn curves_csv(curves: &[ResidualCurve]) -> String {
    let mut s = String::from("region,k,epsilon\n");
    for (r, c) in curves.iter().enumerate() {
        for (k, v) in c.values.iter().enumerate() {
            let _ = writeln!(s, "{r},{},{v:e}", k + 1);
        }
    }
    s
}

/// Writes the embedding, eigenvector, eigenvalue and report files.
pub fn write_embedding_outputs(
    out: &OutDir,
    x: &TimeSeriesMatrix,
    st: &SpectralStage,
) -> CliResult<()> {
    out.write("embedding.csv", st.embedding.to_csv())?;
    out.write("eigenvectors.csv", st.decomposition.eigenvectors_csv())?;
    out.write("eigenvalues.csv", st.decomposition.eigenvalues_csv())?;
    out.write("spectral_report.txt", spectral_report(x, st))?;
    if !st.curves.is_empty() {
        out.write("residual_curves.csv", curves_csv(&st.curves))?;
    }
    Ok(())
}
