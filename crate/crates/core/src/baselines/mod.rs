//! Reference methods: GLM t-maps, PCA, ISOMAP, and ROC evaluation.

mod glm;
mod isomap;
mod pca;
mod roc;

pub use glm::{dale_hrf, dale_hrf_regressor, glm_tmap, GlmResult, Sidedness, DALE_DELTA, DALE_TAU};
pub use isomap::{
    classical_mds, dijkstra, geodesic_distances, isomap_embed, knn_length_graph, LengthGraph,
};
pub use pca::pca_embed;
pub use roc::{
    fpr_grid, roc_curve, silhouette, vertical_average, AveragedRoc, RocCurve, RocPoint,
    SUMMARY_FPRS,
};
