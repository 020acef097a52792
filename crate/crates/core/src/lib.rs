//! MSCA-Net research toolkit: multi-scale attention blocks, the U-Net
//! assembly around them, IRSTD evaluation metrics, dataset handling and a
//! desk-scale training harness.

pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod network;
pub mod params;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use params::{Binding, Init, ParamId, Params};
pub use tape::{Gradients, Tape, Var};
