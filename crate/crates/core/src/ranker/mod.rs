//! Multi-task ranking model with concatenation fusion.
//!
//! The input row is `[user emb | item emb | visual | pooled item tokens |
//! pooled profile tokens]`. Its width never depends on which feature groups
//! are enabled: a disabled group contributes zeros. A ReLU MLP trunk feeds
//! five sigmoid heads, one per engagement task, trained jointly on the summed
//! binary cross-entropy with Adagrad.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use model::{
    loss, pool, Dense, EmbeddingTable, GroupSet, ModelParams, ModelShape, Gradients, TableId, LOSS_CLAMP,
};
pub use train::{
    predict, predict_batched, predict_parallel, train, EpochRecord, TaskMetrics, TrainConfig, TrainLog,
};

#[derive(Debug, thiserror::Error)]
pub enum RankerError {
    #[error("{table} id {id} out of range for {rows} rows")]
    IdOutOfRange {
        table: &'static str,
        id: usize,
        rows: usize,
    },
    #[error("visual vector has {got} values, model expects {expected}")]
    VisualDim { expected: usize, got: usize },
    #[error("non-finite activation")]
    NonFiniteActivation,
    #[error("training diverged in epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("invalid model or training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint format mismatch: {0}")]
    VersionMismatch(String),
    #[error("checkpoint checksum mismatch or truncated file")]
    CorruptChecksum,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
