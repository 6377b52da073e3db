//! Training stages, evaluation and the file formats around them.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod experiments;
pub mod manifest;
pub mod model;
pub mod synthetic;
pub mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Config, EvalConfig, SamplingConfig, StageConfig, SupervisionConfig};
pub use corpus::{Corpus, Document, Qrel, Split};
pub use eval::{rank_split, run_eval, run_grad_profile, EvalMode};
pub use experiments::{run_ablation, run_sweep, sweep_summary_csv, AblationResult, SweepPoint, ABLATIONS};
pub use manifest::{Manifest, MANIFEST_FILE};
pub use model::Model;
pub use synthetic::{generate_synthetic, SyntheticSpec, VocabStyle};
pub use train::{
    continue_contrastive, contrastive_train_loss, stage1_pretrain, stage2_train_adapter, stage3_joint_finetune,
    Stage2Report, TrainLog,
};
