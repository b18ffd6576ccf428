//! Order-agnostic autoregressive modelling of tabular data.
//!
//! The crate bundles a small tensor library with reverse-mode autodiff, a
//! GPT-2 style transformer, per-feature codecs, table I/O and the model
//! itself: training, likelihood scoring, sampling and checkpoints.

pub mod checkpoint;
pub mod codec;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod rng;
pub mod selfcheck;
pub mod tape;
pub mod tensor;
pub mod transformer;
pub mod value;

pub use codec::{Codec, Dequantization, FeatureCodec, FeatureSchema};
pub use data::{load_csv, read_csv, SchemaHints, Table, TableDataset};
pub use error::{CgmError, Result};
pub use model::{
    conditional_generate, generate, train, train_with, GenerateOptions, ModelConfig, ModelParams,
    TrainConfig,
};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use value::{Column, Kind, Value};
