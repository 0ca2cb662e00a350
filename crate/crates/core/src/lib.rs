pub mod bench;
pub mod bits;
pub mod error;
pub mod field;
pub mod keynet;
pub mod random;
pub mod renewal;
pub mod scenario;
pub mod sim;
pub mod spss;
pub mod stores;
pub mod tpv;
pub mod uhash;
pub mod wire;

pub use error::{Error, Result};
