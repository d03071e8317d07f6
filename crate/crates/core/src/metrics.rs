//! 3D pose error metrics: MPJPE, Procrustes-aligned reconstruction error,
//! PCK and AUC. Inputs are in meters; distances are reported in millimeters.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body_model::Joints3D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("joint count mismatch: {pred} predicted vs {gt} ground truth")]
    Mismatch { pred: usize, gt: usize },
    #[error("no joints to compare")]
    Empty,
    #[error("root joint {0} out of range")]
    BadRoot(usize),
    #[error("degenerate configuration for alignment: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Joint subtracted from both skeletons before comparison; `None`
    /// compares absolute positions.
    pub root: Option<usize>,
    pub pck_threshold_mm: f64,
    pub auc_max_mm: f64,
    pub auc_steps: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            root: Some(0),
            pck_threshold_mm: 150.0,
            auc_max_mm: 150.0,
            auc_steps: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorReport {
    pub mpjpe: f64,
    pub recon_error: f64,
    pub pck: f64,
    pub auc: f64,
    /// Root-centered per-joint distances, mm.
    pub per_joint: Vec<f64>,
}

fn check(pred: &Joints3D, gt: &Joints3D, root: Option<usize>) -> Result<(), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Mismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if gt.is_empty() {
        return Err(MetricsError::Empty);
    }
    match root {
        Some(r) if r >= gt.len() => Err(MetricsError::BadRoot(r)),
        _ => Ok(()),
    }
}

/// Per-joint distances in mm after subtracting each skeleton's root joint.
pub fn joint_errors_mm(
    pred: &Joints3D,
    gt: &Joints3D,
    root: Option<usize>,
) -> Result<Vec<f64>, MetricsError> {
    check(pred, gt, root)?;
    let (rp, rg) = match root {
        Some(r) => (pred.0[r], gt.0[r]),
        None => (Vector3::zeros(), Vector3::zeros()),
    };
    Ok(pred
        .0
        .iter()
        .zip(&gt.0)
        .map(|(p, g)| ((p - rp) - (g - rg)).norm() * 1000.0)
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean per-joint position error, mm.
pub fn mpjpe(pred: &Joints3D, gt: &Joints3D, root: Option<usize>) -> Result<f64, MetricsError> {
    Ok(mean(&joint_errors_mm(pred, gt, root)?))
}

/// Similarity transform of `pred` (scale, proper rotation, translation)
/// minimizing the summed squared distance to `gt`.
pub fn procrustes_align(pred: &Joints3D, gt: &Joints3D) -> Result<Joints3D, MetricsError> {
    check(pred, gt, None)?;
    let k = pred.len();
    if k < 3 {
        return Err(MetricsError::Degenerate(format!("{k} points")));
    }
    let n = k as f64;
    let mu_p = pred.0.iter().sum::<Vector3<f64>>() / n;
    let mu_g = gt.0.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.0.iter().zip(&gt.0) {
        let (dp, dg) = (p - mu_p, g - mu_g);
        cov += dg * dp.transpose();
        var_p += dp.norm_squared();
    }
    cov /= n;
    var_p /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let s = svd.singular_values;
    if var_p <= 1e-24 || s[1] <= 1e-12 * s[0].max(1e-300) {
        return Err(MetricsError::Degenerate(
            "points are coincident or collinear".into(),
        ));
    }
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        d.z = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * v_t;
    let scale = s.dot(&d) / var_p;
    let t = mu_g - rotation * mu_p * scale;
    Ok(Joints3D(
        pred.0.iter().map(|p| rotation * p * scale + t).collect(),
    ))
}

/// Mean per-joint error after Procrustes alignment, mm.
pub fn recon_error(pred: &Joints3D, gt: &Joints3D) -> Result<f64, MetricsError> {
    mpjpe(&procrustes_align(pred, gt)?, gt, None)
}

/// Fraction of root-centered joints within `threshold_mm` (inclusive).
pub fn pck(
    pred: &Joints3D,
    gt: &Joints3D,
    threshold_mm: f64,
    root: Option<usize>,
) -> Result<f64, MetricsError> {
    let e = joint_errors_mm(pred, gt, root)?;
    Ok(fraction_within(&e, threshold_mm))
}

fn fraction_within(errors: &[f64], t: f64) -> f64 {
    errors.iter().filter(|e| **e <= t).count() as f64 / errors.len() as f64
}

/// Trapezoidal area under PCK over `steps` equal intervals of
/// `[0, max_threshold_mm]`, normalized to `[0, 1]`.
pub fn auc(
    pred: &Joints3D,
    gt: &Joints3D,
    max_threshold_mm: f64,
    steps: usize,
    root: Option<usize>,
) -> Result<f64, MetricsError> {
    let e = joint_errors_mm(pred, gt, root)?;
    Ok(auc_from_errors(&e, max_threshold_mm, steps))
}

fn auc_from_errors(e: &[f64], max: f64, steps: usize) -> f64 {
    let steps = steps.max(1);
    let curve: Vec<f64> = (0..=steps)
        .map(|i| fraction_within(e, max * i as f64 / steps as f64))
        .collect();
    curve.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / steps as f64
}

pub fn evaluate(
    pred: &Joints3D,
    gt: &Joints3D,
    cfg: &MetricsConfig,
) -> Result<PoseErrorReport, MetricsError> {
    let per_joint = joint_errors_mm(pred, gt, cfg.root)?;
    Ok(PoseErrorReport {
        mpjpe: mean(&per_joint),
        recon_error: recon_error(pred, gt)?,
        pck: fraction_within(&per_joint, cfg.pck_threshold_mm),
        auc: auc_from_errors(&per_joint, cfg.auc_max_mm, cfg.auc_steps),
        per_joint,
    })
}
