pub mod bounds;
pub mod error;
pub mod lp;
pub mod network;

pub use error::{Error, Result};
pub mod relax;
pub mod specs;
pub mod falsify;
pub mod verify;
pub mod physics;
pub mod datasets;
pub mod train;
