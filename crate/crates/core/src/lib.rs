pub mod binpack;
pub mod crypto;
pub mod encryptor;
pub mod error;
pub mod grid;
pub mod meta;
pub mod oblivious;
pub mod package;
pub mod processor;
pub mod record;
pub mod store;

pub use error::{Error, Result};
