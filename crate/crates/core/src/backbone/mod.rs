//! Small ViT-style classifier with interchangeable token mixers.

mod attention;
mod block;
mod checkpoint;
mod model;
mod patch;
mod train;

pub use attention::{AttentionMixer, Linear};
pub use block::{block_forward, build_plan, Block, BlockConfig, Mixer, MixerKind, MixerPlan, Norm, PlanMode, NORM_EPS};
pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, Manifest};
pub use model::{forward_classifier, Classifier, ModelConfig};
pub use patch::patchify;
pub use train::{evaluate, train_epoch, Adam, Dataset, TrainConfig, Trainer};
