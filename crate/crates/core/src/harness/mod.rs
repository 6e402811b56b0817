//! Pretraining orchestration, synthetic data, optimizer, metrics and the
//! linear-probe evaluator.

mod config;
pub mod data;
mod model;
mod optim;
mod probe;
mod train;

pub use config::TrainConfig;
pub use data::{generate_dataset, generate_shape, DatasetSpec, Generator, SyntheticShape};
pub use model::{cloud_pass, global_features, infer, point_labels, CloudPass, Inference, Model, ViewTrace};
pub use optim::{adamw_update, cosine_lr, AdamState, AdamW, AdamWConfig};
pub use probe::{extract_features, linear_probe, probe_features, shuffle_labels, stratified_split, ProbeConfig, ProbeReport};
pub use train::{
    batch_indices, pretrain, read_metrics_jsonl, write_matrix_csv, write_metrics_jsonl,
    write_summary_csv, MetricsRecord, StepObserver, StepTrace, Trainer, SUMMARY_HEADER,
};

/// Mixes a base seed with a path of integers into an independent seed
/// (splitmix64 finalizer applied per component).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}
