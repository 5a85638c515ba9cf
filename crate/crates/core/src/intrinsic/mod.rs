//! Representation analyses on a trained encoder: low-rank layer
//! substitution, gradient-based influence graphs, tree extraction and
//! Laplacian spectra.

pub mod influence;
pub mod svd;

pub use influence::{
    extract_dependency, influence_graph, spectral_profile, tree_profile, DependencyTree, InfluenceGraph,
    SpectralProfile, TreeDump, TreeProfile,
};
pub use svd::{singular_values, svd_substitution_accuracy, svd_truncate, SvdReport, SvdRow};
