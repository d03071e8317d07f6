//! Supervision losses on the raw regressor output, each returning its
//! gradient with respect to that output.

use nalgebra::{DVector, Matrix3, Vector3};

use crate::body_model::{BodyModel, PointSet, Posed, BETA_BOUND};
use crate::camera::{Camera, Intrinsics, Keypoints2D};
use crate::rotations::{d_matrix_d_rot6d, Rot6D};

use super::regressor::{decode_output, decode_translation, decode_translation_jacobian, Decoded};
use super::SpinError;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub gradient: DVector<f64>,
}

/// Parameters a regressor output is pulled toward.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub rotations: Vec<Matrix3<f64>>,
    pub beta: DVector<f64>,
    pub camera_code: Vector3<f64>,
}

fn decode(raw: &DVector<f64>, model: &BodyModel) -> Result<Decoded, SpinError> {
    decode_output(raw, model.num_kinematic_joints(), model.num_betas())
}

/// Adds `dL/d(6D)` to `grad` given `dL/dR` for every local rotation.
fn chain_rotations(raw: &DVector<f64>, d_rot: &[Matrix3<f64>], grad: &mut DVector<f64>) -> Result<(), SpinError> {
    for (m, g) in d_rot.iter().enumerate() {
        let a = Rot6D(std::array::from_fn(|c| raw[6 * m + c]));
        let jac = d_matrix_d_rot6d(&a)?;
        for c in 0..6 {
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    acc += g[(i, j)] * jac[(3 * i + j, c)];
                }
            }
            grad[6 * m + c] += acc;
        }
    }
    Ok(())
}

fn chain_beta(raw: &DVector<f64>, num_kin: usize, d_beta: &DVector<f64>, grad: &mut DVector<f64>) {
    let off = 6 * num_kin;
    for (b, g) in d_beta.iter().enumerate() {
        if raw[off + b].abs() < BETA_BOUND {
            grad[off + b] += g;
        }
    }
}

/// `sum_j |R_j - R*_j|_F^2 + |beta - beta*|^2 + |s - s*|^2`, with `s` the
/// camera code.
pub fn loss_3d(model: &BodyModel, raw: &DVector<f64>, target: &Target) -> Result<LossGrad, SpinError> {
    let d = decode(raw, model)?;
    let j = model.num_kinematic_joints();
    if target.rotations.len() != j || target.beta.len() != model.num_betas() {
        return Err(SpinError::Mismatch {
            what: "supervision target",
            expected: j,
            got: target.rotations.len(),
        });
    }
    let mut value = 0.0;
    let mut grad = DVector::zeros(raw.len());
    let d_rot: Vec<Matrix3<f64>> = d
        .rotations
        .iter()
        .zip(&target.rotations)
        .map(|(r, t)| {
            let diff = r.matrix() - t;
            value += diff.norm_squared();
            diff * 2.0
        })
        .collect();
    chain_rotations(raw, &d_rot, &mut grad)?;
    let db = &d.beta - &target.beta;
    value += db.norm_squared();
    chain_beta(raw, j, &(db * 2.0), &mut grad);
    let ds = d.camera_code - target.camera_code;
    value += ds.norm_squared();
    let off = 6 * j + model.num_betas();
    for c in 0..3 {
        grad[off + c] = 2.0 * ds[c];
    }
    Ok(LossGrad { value, gradient: grad })
}

/// Mean squared per-vertex distance between the regressed mesh (body frame)
/// and `target_vertices`.
pub fn loss_mesh(
    model: &BodyModel,
    vertex_points: &PointSet,
    raw: &DVector<f64>,
    target_vertices: &[Vector3<f64>],
) -> Result<LossGrad, SpinError> {
    if target_vertices.len() != vertex_points.len() {
        return Err(SpinError::Mismatch {
            what: "mesh vertices",
            expected: vertex_points.len(),
            got: target_vertices.len(),
        });
    }
    let d = decode(raw, model)?;
    let posed = Posed::new(model, &d.local_rotations(), &d.beta)?;
    let verts = vertex_points.evaluate(&posed);
    let n = verts.len() as f64;
    let mut value = 0.0;
    let upstream: Vec<Vector3<f64>> = verts
        .iter()
        .zip(target_vertices)
        .map(|(v, t)| {
            let diff = v - t;
            value += diff.norm_squared();
            diff * (2.0 / n)
        })
        .collect();
    let (d_rot, d_beta) = vertex_points.vjp(&posed, &upstream);
    let mut grad = DVector::zeros(raw.len());
    chain_rotations(raw, &d_rot, &mut grad)?;
    chain_beta(raw, model.num_kinematic_joints(), &d_beta, &mut grad);
    Ok(LossGrad {
        value: value / n,
        gradient: grad,
    })
}

/// `sum_i conf_i |project(X_i) - j_i|^2` in pixels, with the translation
/// decoded from the output's camera code. Joints at or behind the camera
/// are skipped.
pub fn loss_2d(
    model: &BodyModel,
    raw: &DVector<f64>,
    keypoints: &Keypoints2D,
    intrinsics: &Intrinsics,
    z_ref: f64,
) -> Result<LossGrad, SpinError> {
    if keypoints.len() != model.num_joints() {
        return Err(SpinError::Mismatch {
            what: "keypoints",
            expected: model.num_joints(),
            got: keypoints.len(),
        });
    }
    let d = decode(raw, model)?;
    let posed = Posed::new(model, &d.local_rotations(), &d.beta)?;
    let points = model.joint_points();
    let joints = points.evaluate(&posed);
    let t = decode_translation(&d.camera_code, intrinsics, z_ref);
    let cam = Camera {
        intrinsics: *intrinsics,
        translation: t,
    };
    let mut value = 0.0;
    let mut upstream = vec![Vector3::zeros(); joints.len()];
    for (i, x) in joints.iter().enumerate() {
        let c = keypoints.conf()[i];
        if c == 0.0 {
            continue;
        }
        let (Some(u), Some(p)) = (cam.project_point(x), cam.point_jacobian(x)) else {
            continue;
        };
        let diff = u - keypoints.points()[i];
        value += c * diff.norm_squared();
        upstream[i] = p.transpose() * diff * (2.0 * c);
    }
    let (d_rot, d_beta) = points.vjp(&posed, &upstream);
    let mut grad = DVector::zeros(raw.len());
    chain_rotations(raw, &d_rot, &mut grad)?;
    let j = model.num_kinematic_joints();
    chain_beta(raw, j, &d_beta, &mut grad);
    let d_t: Vector3<f64> = upstream.iter().sum();
    let d_s = decode_translation_jacobian(&d.camera_code, intrinsics, z_ref).transpose() * d_t;
    let off = 6 * j + model.num_betas();
    for c in 0..3 {
        grad[off + c] = d_s[c];
    }
    Ok(LossGrad { value, gradient: grad })
}
