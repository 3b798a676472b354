//! Edge caching and delivery scheduling for tiled stereoscopic VR video.

pub mod catalog;
pub mod delay;
pub mod dynamics;
pub mod error;
pub mod partition;
pub mod placement;
pub mod quality;
pub mod scheduler;
pub mod sim;
pub mod stats;
pub mod testbed;

pub use error::{Error, Result};
