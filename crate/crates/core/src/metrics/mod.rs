//! Instance segmentation and scene-flow evaluation.

mod flow;
mod seg;

pub use flow::{flow_metrics, FlowMetrics};
pub use seg::{
    average_precision, instance_confidences, rand_index, seg_metrics, seg_metrics_soft,
    seg_metrics_with, Overlaps, SegMetrics, SegOptions,
};

/// Converts any integer label slice to the signed form the metrics take.
pub fn to_i64<T: Copy + TryInto<i64>>(labels: &[T]) -> Vec<i64> {
    labels.iter().map(|l| (*l).try_into().unwrap_or(i64::MAX)).collect()
}
