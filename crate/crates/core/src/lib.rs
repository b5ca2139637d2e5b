//! Long-sequence encoders built on a small reverse-mode autodiff engine.
//!
//! The crate is `no_std` and only needs `alloc`. It contains the tensor
//! engine ([`tape`]), the dual-tower temporal convolutional encoder
//! ([`tcn`]), a full self-attention baseline ([`attention`]), the
//! conversation/utterance heads and metrics ([`heads`]), optimizers and
//! learning-rate schedules ([`optim`]), synthetic task generators
//! ([`data`]), analytic cost accounting ([`flops`], [`memory`]) and the
//! task-level model glue ([`model`]).
//!
//! File formats, timing and the command line live in the companion
//! `longconv` crate.
#![no_std]

extern crate alloc;

pub mod attention;
pub mod data;
pub mod error;
pub mod flops;
pub mod heads;
pub mod memory;
pub mod model;
pub mod optim;
pub mod params;
pub mod presets;
pub mod scalar;
pub mod tape;
pub mod tcn;
pub mod tensor;

mod kernels;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
