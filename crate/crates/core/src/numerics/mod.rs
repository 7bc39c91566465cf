//! Shared numerical building blocks.

mod adam;
mod ops;
mod rng;
mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use ops::{
    cosine_similarity, dot, entropy, finite_diff_grad, log_sum_exp, norm, sigmoid, softmax_in_place,
    softplus, softplus_grad,
};
pub use rng::{RngState, RngStream};
pub use schedule::{NoiseSchedule, ScheduleConfig, TimePoint, Weighting};
