pub mod error;
pub mod eval;
pub mod excitation;
pub mod fixtures;
pub mod io;
pub mod netgraph;
pub mod oracle;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
