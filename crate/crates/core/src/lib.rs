//! Model-based 3D human pose and shape fitting to 2D keypoints, and a
//! training loop in which a keypoint regressor initializes the fitter and is
//! supervised by its results.
//!
//! Module map:
//! - [`rotations`]: axis-angle, rotation matrix and 6D encodings with Jacobians.
//! - [`body_model`]: blendshapes, forward kinematics, skinning, joint regression.
//! - [`camera`]: pinhole projection and similar-triangles translation init.
//! - [`priors`]: Gaussian mixture pose prior (with EM), joint-angle and shape priors.
//! - [`fitting`]: the multi-term energy and its damped Gauss-Newton minimizer.
//! - [`spin_loop`]: regressor, supervision losses, best-fit dictionary, training.
//! - [`metrics`]: MPJPE, Procrustes reconstruction error, PCK and AUC.
//! - [`io`]: file formats and OBJ export.

// `!(x > 0.0)` style checks are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod body_model;
pub mod camera;
pub mod fitting;
pub mod io;
pub mod metrics;
pub mod priors;
pub mod rotations;
pub mod spin_loop;
pub mod toy;

#[cfg(test)]
pub(crate) mod fd;

pub use body_model::{BodyModel, Joints3D, Mesh, ModelParams, ToySpec};
pub use camera::{Camera, Keypoints2D};

