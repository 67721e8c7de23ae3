//! Training loop, evaluation protocol, and the ablation and resolution
//! harnesses.

pub mod adam;
pub mod config;
pub mod eval;
pub mod report;
pub mod train;

pub use adam::Adam;
pub use config::{lr_at_epoch, Precision, TrainConfig};
pub use eval::{evaluate, mean_std, predict, EvalReport, SampleError};
pub use report::{
    ablate, paper_resolution_reference, paper_variant_reference, resolution_sweep,
    ComparisonReport, PaperReference, ReportRow,
};
pub use train::{
    epoch_batches, history_tsv, train, EpochRecord, TrainOutcome, TrainOutput, HISTORY_HEADER,
};

/// SplitMix64 over a seed and two tags: decorrelated sub-seeds for
/// shuffling, eye choice and dropout.
pub fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
