//! Datasets, model layout, regressor construction and synthetic scenarios.

mod dataset;
mod regressor;
mod structure;
mod synth;

pub use dataset::{
    condition_key, load_dataset, load_manifest, write_manifest, ConditionDataset, DatasetName,
    ManifestEntry, Role,
};
pub use regressor::{build_regressor, stack_problems, RegressionProblem};
pub(crate) use structure::check_shared_structure;
pub use structure::{ModelStructure, ParameterVector};
pub use synth::{generate_synthetic, SyntheticScenario};
