//! Pan-tilt-zoom camera SLAM with ray landmarks.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod ekf;
pub mod error;
pub mod forest;
pub mod metrics;
pub mod pipeline;
pub mod reloc_eval;
pub mod report;
pub mod sim;
pub mod solvers;

pub use camera::{CameraPose, ImageSize, Pixel, PtzBase, Ray};
pub use error::{PtzError, Result};
