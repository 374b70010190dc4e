//! Benchmark-style metrics and the synthetic sequence generator.

mod metrics;
mod synth;

pub use metrics::{
    boundary, boundary_fmeasure, default_boundary_tolerance, iou, region_metrics, score_sequence, RegionMetrics,
    SequenceScores, RECALL_THRESHOLD,
};
pub use synth::{
    check_consistency, synth_sequence, write_dataset, DynamicRegion, ProposalNoise, SynthParams, SynthSequence,
};
