//! Self-supervised monocular depth and ego-motion with a pose-to-depth cue
//! bridge and kernel attention in the pose decoder.

pub mod autograd;
pub mod camgeom;
pub mod error;
pub mod evalmetrics;
pub mod ham;
pub mod kittidata;
pub mod networks;
pub mod photoloss;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
