//! Optimisation and evaluation: SGD with momentum under cosine annealing,
//! augmentation, accuracy and mIoU metrics, and the partial-input
//! robustness protocols.

mod augment;
mod metrics;
mod optim;
mod robust;
mod schedule;
mod trainer;

pub use augment::{augment, AugmentConfig};
pub use metrics::{classification_metrics, miou_shapenet, shape_iou, MetricsReport};
pub use optim::SgdMomentum;
pub use robust::{random_subsample, random_subsample_indices, side_drop, side_drop_indices, subset_cloud, Side};
pub use schedule::{cosine_lr, CosineSchedule};
pub use trainer::{
    evaluate_classification, evaluate_segmentation, predict_classes, random_dropout_eval, train, EpochLog,
    TrainConfig, TrainOptions, TrainOutcome, Trainable, METRICS_CSV_HEADER,
};
