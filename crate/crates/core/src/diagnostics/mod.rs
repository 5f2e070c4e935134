//! Analyses of learned representations: pretext generalization, random-label
//! separability, PCA spectra, nearest neighbours and the statistics that tie
//! them to downstream accuracy.

mod analyses;
mod eigen;
mod knn;
mod pca;
mod report;
mod stats;

pub use analyses::{
    generalization_of, id_model_loss, id_pretext_loss_summary, pretext_generalization, random_label_probe,
    GeneralizationResult, RandomLabelResult,
};
pub use eigen::symmetric_eigenvalues;
pub use knn::{euclidean, nearest_neighbors, Neighbor, NeighborList};
pub use pca::{
    covariance_spectrum, default_n_grid, pca_explained_variance, pca_explained_variance_rows, render_variance_table,
    ExplainedVarianceCurve, VarianceColumn,
};
pub use report::DiagnosticsReport;
pub use stats::{
    first_component_analysis, pearson_r_p, render_correlation_table, welch_t_test, CorrelationStat,
    FirstComponentAnalysis, WelchTest, FIRST_COMPONENT_SPLIT,
};
