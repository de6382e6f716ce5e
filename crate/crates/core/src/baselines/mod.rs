//! Linear projection and clustering baselines.

pub mod kmeans;
pub mod pca;

pub use kmeans::{kmeans_cluster, KmeansConfig, KmeansResult};
pub use pca::{pca_fit, pca_project, PcaModel};
