//! From-scratch tree ensembles and exact SHAP attribution.

mod forest;
mod gbdt;
mod shap;
mod tree;

pub use forest::{fit_forest, fit_forest_with, ForestModel, ForestParams};
pub use gbdt::{fit_gbdt, fit_gbdt_with, fit_matrix, GbdtModel, GbdtParams};
pub use shap::{
    brute_shapley, tree_shap, tree_shap_single, ShapAttribution, BRUTE_FORCE_MAX_FEATURES,
};
pub use tree::{DecisionTree, Node};
