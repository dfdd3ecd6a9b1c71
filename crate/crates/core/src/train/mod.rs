//! Training loops for the auxiliary speaker network and the enhancers.

mod aux;
mod data;
mod enhancer;

pub use aux::{embed_all, evaluate_aux, normalize_rows, train_aux, AuxEpochLog, AuxTrainConfig, AuxTrainReport};
pub use data::{
    crop_start, extract, labeled_clean, parallel_pairs, segment_len, speaker_index, stack_crops, LabeledUtterance,
    ParallelPair,
};
pub use enhancer::{store_digest, train_enhancer, validation_loss, EnhancerRun, EnhancerTrainConfig, StepLog, LOG_FILE};
