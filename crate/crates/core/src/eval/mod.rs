//! Metrics, the ablation harness and report artifacts.

mod harness;
mod metrics;
mod plot;
mod predict;
mod report;

pub use harness::{
    evaluate, pretrain_scenes, pretrained_bundle, run_variants, run_variants_on, train_variant, ExperimentConfig,
    TrainedModel, Variant,
};
pub use metrics::{
    alignment_recovery, overlap_ratio, per_relation_accuracy, recall_at_k, relation_bias, top_k, truths_of,
    AlignmentScore, Prediction, PredictionSet, RelationBias, ScenePredictions, Truth,
};
pub use plot::{bar_chart_svg, line_chart_svg};
pub use predict::{eval_threads, feature_map, score_scenes, FeatureSource, ScoredScenes};
pub use report::{BiasPoint, MetricsReport, RunMeta};
