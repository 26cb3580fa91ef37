//! Video retrieval with region attention graph embeddings.
//!
//! A video is a `T x R x C` tensor of region descriptors. The model treats
//! each region as a graph node connected to every region of its own and
//! adjacent frames, refines the nodes with graph attention, and pools them
//! into one embedding. Videos are compared by cosine similarity, either as
//! whole videos or shot by shot with Chamfer aggregation.

mod binio;

pub mod engine;
pub mod error;
pub mod features;
pub mod graph;
pub mod model;
pub mod retrieval;
pub mod selfcheck;
pub mod shots;
pub mod similarity;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use features::{read_features, write_features, CorpusManifest, LabeledCorpus, RegionFeatureTensor};
pub use model::{embed_video, init_params, ModelConfig, ModelParams};
