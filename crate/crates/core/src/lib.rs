#![no_std]
extern crate alloc;
#[cfg(any(test, feature = "parallel"))]
extern crate std;

pub mod damage;
pub mod dynamics;
pub mod error;
pub mod gain;
pub mod hysteresis;
pub mod optimize;
pub mod signal;
pub mod structure;

pub use error::{Error, Result};
