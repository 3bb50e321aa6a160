//! Identity bookkeeping: the learnable ID dictionary, tracklet formation, the
//! sliding trajectory window and internal label lifecycle.

mod dictionary;
mod state;
mod tracklet;
mod window;

pub use dictionary::IdDictionary;
pub use state::TrackerState;
pub use tracklet::{attach_special, form_tracklet, Tracklet, Word};
pub use window::{Memory, TrajectoryWindow};

/// Internal trajectory label, always in `1..=K`.
pub type Label = u32;
