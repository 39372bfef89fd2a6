//! Seeded synthetic episodes and per-step observation assembly.
//!
//! A matched episode hides a contiguous run of frames equal to a fixed linear
//! image of its query, plus noise. Everything else is noise.

mod dataset;
mod observation;

pub use dataset::{
    episode_to_json, frames_inside, generate_dataset, read_split, write_split, Dataset, DatasetConfig, Episode, QueryImage,
};
pub use observation::{
    assemble_observation, local_feature, local_mean, pooled_video_feature, EpisodeContext, FeatureMode, FrameSums,
    ObservationConfig, ObservationNet,
};
