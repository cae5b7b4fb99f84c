pub mod cli;
pub mod counting;
pub mod error;
pub mod gibbs;
pub mod indexed_graph;
pub mod linalg;
pub mod markov;
pub mod wsg;

pub use error::{Error, Result};
