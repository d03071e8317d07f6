//! Pinhole projection and similar-triangles initialization of the camera
//! translation.

use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body_model::Joints3D;

/// Minimum camera-frame depth for a projectable point.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point {index} lies at or behind the camera plane (depth {depth})")]
    BehindCamera { index: usize, depth: f64 },
    #[error("invalid camera: {0}")]
    Invalid(String),
    #[error("no torso keypoint pair is observed")]
    NoTorso,
    #[error("keypoint count mismatch: expected {expected}, got {got}")]
    Mismatch { expected: usize, got: usize },
}

/// Focal length and principal point, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub principal_point: [f64; 2],
}

impl Intrinsics {
    /// Square crop of `size` pixels with the principal point at its centre.
    pub fn for_crop(focal: f64, size: f64) -> Self {
        Intrinsics {
            focal,
            principal_point: [size / 2.0, size / 2.0],
        }
    }

    fn center(&self) -> Vector2<f64> {
        Vector2::new(self.principal_point[0], self.principal_point[1])
    }
}

/// Intrinsics plus the body translation in the camera frame, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, translation: Vector3<f64>) -> Result<Self, CameraError> {
        if !(intrinsics.focal > 0.0 && intrinsics.focal.is_finite()) {
            return Err(CameraError::Invalid(format!(
                "focal must be positive, got {}",
                intrinsics.focal
            )));
        }
        if !(translation.z > 0.0) || translation.iter().any(|v| !v.is_finite()) {
            return Err(CameraError::Invalid(format!(
                "translation must be finite with z > 0, got {translation:?}"
            )));
        }
        Ok(Camera {
            intrinsics,
            translation,
        })
    }

    pub fn focal(&self) -> f64 {
        self.intrinsics.focal
    }

    /// Pixel coordinates of a camera-frame point.
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        let q = p + self.translation;
        if q.z <= MIN_DEPTH {
            return None;
        }
        let f = self.intrinsics.focal;
        Some(Vector2::new(f * q.x / q.z, f * q.y / q.z) + self.intrinsics.center())
    }

    /// `d(u, v)/d(point)`; identical to the derivative with respect to the
    /// translation since both enter as a sum.
    pub fn point_jacobian(&self, p: &Vector3<f64>) -> Option<Matrix2x3<f64>> {
        let q = p + self.translation;
        if q.z <= MIN_DEPTH {
            return None;
        }
        let f = self.intrinsics.focal;
        let iz = 1.0 / q.z;
        Some(Matrix2x3::new(
            f * iz,
            0.0,
            -f * q.x * iz * iz,
            0.0,
            f * iz,
            -f * q.y * iz * iz,
        ))
    }
}

/// 2D keypoints (pixels) with per-joint confidences in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoints2D {
    points: Vec<Vector2<f64>>,
    conf: Vec<f64>,
}

impl Keypoints2D {
    pub fn new(points: Vec<Vector2<f64>>, conf: Vec<f64>) -> Result<Self, CameraError> {
        if points.len() != conf.len() {
            return Err(CameraError::Mismatch {
                expected: points.len(),
                got: conf.len(),
            });
        }
        for (i, (p, c)) in points.iter().zip(&conf).enumerate() {
            if !(0.0..=1.0).contains(c) {
                return Err(CameraError::Invalid(format!(
                    "confidence {c} of keypoint {i} outside [0, 1]"
                )));
            }
            if *c > 0.0 && p.iter().any(|v| !v.is_finite()) {
                return Err(CameraError::Invalid(format!("keypoint {i} is not finite")));
            }
        }
        Ok(Keypoints2D { points, conf })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.points
    }

    pub fn conf(&self) -> &[f64] {
        &self.conf
    }

    pub fn num_observed(&self) -> usize {
        self.conf.iter().filter(|c| **c > 0.0).count()
    }
}

/// Projects every joint; fails on the first joint at or behind the camera.
pub fn project(cam: &Camera, joints: &Joints3D) -> Result<Vec<Vector2<f64>>, CameraError> {
    joints
        .0
        .iter()
        .enumerate()
        .map(|(index, p)| {
            cam.project_point(p).ok_or(CameraError::BehindCamera {
                index,
                depth: p.z + cam.translation.z,
            })
        })
        .collect()
}

/// Per-joint `d(u, v)/dX`, which also equals `d(u, v)/d(translation)`.
pub fn project_jacobian(
    cam: &Camera,
    joints: &Joints3D,
) -> Result<Vec<Matrix2x3<f64>>, CameraError> {
    joints
        .0
        .iter()
        .enumerate()
        .map(|(index, p)| {
            cam.point_jacobian(p).ok_or(CameraError::BehindCamera {
                index,
                depth: p.z + cam.translation.z,
            })
        })
        .collect()
}

/// Index pairs of joints whose distance serves as the torso length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TorsoPairs(pub Vec<(usize, usize)>);

impl TorsoPairs {
    /// Shoulder and hip pairs looked up by name; pairs whose joints are
    /// missing from `names` are skipped.
    pub fn from_names(names: &[String]) -> Self {
        let find = |n: &str| names.iter().position(|x| x == n);
        let pairs = [
            ("left_shoulder", "right_shoulder"),
            ("left_hip", "right_hip"),
        ]
        .iter()
        .filter_map(|(a, b)| Some((find(a)?, find(b)?)))
        .collect();
        TorsoPairs(pairs)
    }
}

/// Translation placing `joints` so that its torso matches the keypoints in
/// scale (depth from the length ratio) and in centroid position.
pub fn init_translation(
    keypoints: &Keypoints2D,
    joints: &Joints3D,
    intrinsics: &Intrinsics,
    torso: &TorsoPairs,
) -> Result<Vector3<f64>, CameraError> {
    if keypoints.len() != joints.len() {
        return Err(CameraError::Mismatch {
            expected: joints.len(),
            got: keypoints.len(),
        });
    }
    let observed: Vec<(usize, usize)> = torso
        .0
        .iter()
        .copied()
        .filter(|&(a, b)| keypoints.conf[a] > 0.0 && keypoints.conf[b] > 0.0)
        .collect();
    if observed.is_empty() {
        return Err(CameraError::NoTorso);
    }
    let mut len3 = 0.0;
    let mut len2 = 0.0;
    let mut centroid3 = Vector3::zeros();
    let mut centroid2 = Vector2::zeros();
    for &(a, b) in &observed {
        len3 += (joints.0[a] - joints.0[b]).norm();
        len2 += (keypoints.points[a] - keypoints.points[b]).norm();
        centroid3 += joints.0[a] + joints.0[b];
        centroid2 += keypoints.points[a] + keypoints.points[b];
    }
    let count = (2 * observed.len()) as f64;
    centroid3 /= count;
    centroid2 /= count;
    if len2 <= 0.0 {
        return Err(CameraError::Invalid("torso keypoints coincide".into()));
    }
    let depth = intrinsics.focal * len3 / len2;
    let offset = (centroid2 - intrinsics.center()) * (depth / intrinsics.focal);
    Ok(Vector3::new(
        offset.x - centroid3.x,
        offset.y - centroid3.y,
        depth - centroid3.z,
    ))
}
