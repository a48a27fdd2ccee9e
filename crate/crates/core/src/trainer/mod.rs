//! Corpus handling, AdamW training with warmup and cosine decay, evaluation,
//! checkpoints, and the associative-recall task.

mod batcher;
mod checkpoint;
mod corpus;
mod hyper;
mod optim;
mod recall;
mod train;

pub use batcher::Batcher;
pub use checkpoint::{
    inspect_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, FORMAT_VERSION, MAGIC,
};
pub use corpus::{entropy, load_corpus, tokens_of, unigram_counts, Corpus};
pub use hyper::{lr_at, TrainHyper};
pub use optim::{adamw_step, clip_global_norm, OptimizerState};
pub use recall::{gen_assoc_recall, matched_gpn_config, recall_accuracy, train_recall, RecallDataset, RecallOutcome, RecallTask};
pub use train::{
    batch_gradients, checkpoint_path, evaluate_ppl, train_loop, window_losses, EvalResult, MetricRecord,
    TrainOptions, TrainOutcome, EVAL_ROWS, METRICS_HEADER,
};
