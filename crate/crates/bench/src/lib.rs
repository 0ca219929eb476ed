//! Shared fixtures for the benchmarks.

use selfmi::data::{gen_synthetic, DatasetSplits, SyntheticSpec};
use selfmi::{ModelConfig, ParamStore, SelfMiModel};

/// The standard synthetic dataset, truncated to `n` samples in total.
pub fn standard_data(n: usize) -> DatasetSplits {
    gen_synthetic(&SyntheticSpec {
        n_samples: n,
        ..SyntheticSpec::standard(7)
    })
    .expect("standard spec is valid")
}

/// Default-sized model for the given data.
pub fn standard_model(data: &DatasetSplits) -> (SelfMiModel, ParamStore) {
    SelfMiModel::new(ModelConfig::for_dims(data.dims), 0).expect("default config is valid")
}
