//! Federated computation on placed arrays: eager building blocks, a traced
//! dataflow IR with first-class communication, federated AD as graph
//! transforms, a sharded parallel runtime and graph export.

pub mod ad;
pub mod algorithms;
pub mod error;
pub mod export;
pub mod fedprims;
pub mod ir;
pub mod placement;
pub mod program;
pub mod runtime;
pub mod tensor;

pub use error::{Error, Result};
pub use ir::{AbstractValue, Graph, PrimitiveId, Var};
pub use placement::{ClientCount, PlacedTensor, Placement};
pub use program::FedBuilder;
pub use tensor::{DType, Tensor};
