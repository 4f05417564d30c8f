pub mod checkpoint;
pub mod data;
pub mod deconv;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nb;
pub mod optim;
pub mod prototype;
pub mod special;
pub mod synth;
pub mod training;

pub use error::{CpnnError, ErrorClass, Result};
