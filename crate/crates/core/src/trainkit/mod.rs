//! Two-stage training, evaluation, the similarity audit and variant ablations.

mod ablate;
mod config;
mod data;
mod eval;
mod train;

pub use ablate::{format_table, run_ablation, AblationReport, AblationRow};
pub use config::{ModelShape, RunPaths, TrainConfig};
pub use data::{prepare_samples, text_resources, Augmentation, Batch, Sample};
pub use eval::{
    audit_margins, evaluate, evaluate_with, rouge_l, similarity_audit, summarize_margins, AuditReport,
    CategoryMetrics, Metrics, RougeScore,
};
pub use train::{
    batch_loss, batch_loss_and_grads, changed_params, dataset_grad_check, objective_grad_check, start_state, train, train_stage1,
    train_stage2, EpochRow, StepRow, TrainReport, TrainState,
};
