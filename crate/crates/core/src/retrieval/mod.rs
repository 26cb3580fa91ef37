//! Exact-scan retrieval over video or shot embeddings, and its evaluation.

mod eval;
mod index;
mod rank;

pub use eval::{
    average_precision, mean_average_precision, parse_tasks, read_tasks, EvalReport, Qrels, Task,
};
pub use index::{read_index, write_index, EmbeddingIndex, IndexEntry, IndexMode, EMB1_MAGIC};
pub use rank::{
    average_query_expansion, chamfer, rank, shot_rank, shot_similarity_matrix, symmetric_chamfer,
    write_rankings, RankedList, ShotAggregation,
};
