//! Multi-agent temporal moment localization with evidential uncertainty and
//! conflict-based out-of-scope query detection.

pub mod agents;
pub mod config;
pub mod diffcomp;
pub mod error;
pub mod evaluation;
pub mod evidential;
pub mod io;
pub mod marlcc;
pub mod metrics;
pub mod model;
pub mod render;
pub mod seeding;
pub mod synthenv;
pub mod timeline;
pub mod training;

pub use error::{Error, Result};
pub use timeline::{conflict, eta, rel_loc_class, tiou, Interval, RelLocClass, Verdict};
