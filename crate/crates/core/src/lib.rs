pub mod branch;
pub mod error;
pub mod grid;
pub mod krylov;
pub mod linalg;
pub mod operators;
pub mod probes;
pub mod report;
pub mod soliton;
pub mod spectra;

pub use error::{LabError, Result};
