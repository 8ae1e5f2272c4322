//! Counterfactual sample construction and contrastive training for
//! egocentric video question answering, at desk scale.

pub mod error;
pub mod numkit;
pub mod textcf;
pub mod videocf;
pub mod model;
pub mod losses;
pub mod synthgen;
pub mod trainkit;

pub use error::{Error, Result};
pub use losses::{LossBreakdown, LossWeights};
pub use model::{AnswerDistribution, Model, ModelConfig};
pub use numkit::{ParamStore, Tensor, TensorFile};
pub use synthgen::{Dataset, GenConfig, WorldSpec};
pub use textcf::{QuestionRecord, QuestionTriple, TextVariant};
pub use trainkit::{AuditReport, Metrics, TrainConfig, TrainState};
pub use videocf::{BBoxRecord, FrameGrid, VideoVariant};
