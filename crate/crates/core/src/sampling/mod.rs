//! Batch composition and in-batch mining.

mod compose;
mod mining;
mod rng;

pub use compose::{class_balanced_compose, class_index, episodic_compose, npairs_compose, ClassIndex, EpisodeSpec};
pub use mining::{
    distance_weighted_pairs, distance_weighted_sample, inverse_density_probabilities, log_sphere_distance_density,
    semi_hard_mine, DwClip, DwDraw,
};
pub use rng::{RngState, SamplerRng};
