//! Axial displacement estimation between RF frames: a windowed NCC baseline
//! and a variational registration with an L1 curvature penalty.

mod lncc;
mod ncc;
mod peak;
mod penalty;
mod variational;
mod warp;

pub use lncc::{lncc_similarity, lncc_with_gradient, LnccWindow};
pub use ncc::{ncc_profile, ncc_track_sequence, NccConfig, NccProfile};
pub use peak::{subsample_peak, PeakEstimate};
pub use penalty::{charbonnier_penalty, curvature_penalty};
pub use variational::{
    downsample, envelope_proxy, evaluate_objective, objective_gradient, register_multilevel, register_pair, upsample,
    variational_track_sequence, LevelResult, ObjectiveValue, TraceRow, VariationalConfig,
    VariationalOutput,
};
pub use warp::{warp_image, warp_with_derivatives, Ddf, GridSpacing, WarpResult};
