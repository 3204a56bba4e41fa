//! Commute-time spectral embedding of time-series datasets.
//!
//! The pipeline builds a nearest-neighbor graph over the rows of an `N x T`
//! dataset, embeds every row by the leading eigenvectors of the normalized
//! affinity so that squared distances approximate commute times of the random
//! walk on the graph, and separates coherent structures from a central
//! background by angular clustering. Dense random-walk oracles, synthetic
//! phantoms and GLM / PCA / ISOMAP baselines are included for validation.
//!
//! ```
//! use ctmap_core::{build_graph, decompose, embed, GraphConfig, TimeSeriesMatrix};
//!
//! let rows: Vec<Vec<f64>> = (0..12)
//!     .map(|i| vec![(i as f64).cos(), (i as f64).sin(), 0.1 * i as f64])
//!     .collect();
//! let x = TimeSeriesMatrix::from_rows(&rows).unwrap();
//! let g = build_graph(&x, &GraphConfig::new(4)).unwrap();
//! let dec = decompose(&g, 3).unwrap();
//! let psi = embed(&dec, 2).unwrap();
//! assert_eq!(psi.n_points(), 12);
//! ```

pub mod baselines;
pub mod cluster;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod lanczos;
pub mod phantom;
pub mod spectral;
pub mod stats;
pub mod walk;

pub use cluster::{
    angular_kmeans, cluster_embedding, split_background, BackgroundSplit, ClusterConfig,
    ClusterLabels, KMeansResult,
};
pub use dataset::{
    average_trials, detrend_linear, load_dataset, save_dataset, svd_denoise, DataFormat,
    TimeSeriesMatrix, VoxelMask,
};
pub use error::{Error, ErrorKind, Result};
pub use graph::{
    build_graph, clustering_coefficients, knn_neighbors, random_knn_graph, sigma_heuristic,
    ClusteringCoefficients, ConnectivityGraph, GraphConfig,
};
pub use phantom::{
    convolve_stimulus, generate_phantom, hrf, BackgroundSource, HrfParams, Phantom, PhantomSpec,
    StimulusSeries,
};
pub use spectral::{
    commute_distance, decompose, decompose_with, embed, residual_curve, select_dimension,
    DecomposeOptions, Embedding, ResidualCurve, Solver, SpectralDecomposition,
};
pub use walk::{HittingTimes, MonteCarloEstimate, WalkModel};
