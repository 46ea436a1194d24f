//! The four-phase procedure: global pretraining, joint training through
//! pooling and the local encoder, local K-means, and the classifier that
//! labels every node.

mod config;
mod report;
mod run;

pub use config::TrainConfig;
pub use report::{config_header, render_labels, render_report, write_run, ReportFiles};
pub use run::{
    local_cluster, run, run_ablation, train_classifier, Classifier, Dgen, LossRecord, Phase, RunReport, TrainOutcome,
};
