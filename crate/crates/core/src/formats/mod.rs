//! File formats: PLY, `.flo`, PFM, PNG and native mixture files.

pub mod flo;
pub mod mixture;
pub mod pfm;
pub mod ply;
pub mod png;

pub use flo::{read_flo, write_flo};
pub use mixture::{read_mixture, write_mixture};
pub use pfm::{read_pfm, write_pfm};
