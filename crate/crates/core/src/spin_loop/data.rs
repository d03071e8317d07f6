//! Synthetic poses and keypoint datasets.
//!
//! Observations and ground truth live in separate collections so that the
//! training code can be handed observations alone.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body_model::{forward_joints, BodyModel, ModelParams, Posed};
use crate::camera::{Camera, Intrinsics, Keypoints2D};
use crate::priors::GmmPosePrior;
use crate::rotations::AxisAngle;

use super::SpinError;

/// What the fitter and the regressor see for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub id: u64,
    pub keypoints: Keypoints2D,
    pub intrinsics: Intrinsics,
}

/// Held-out parameters of one example, for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub id: u64,
    pub params: ModelParams,
    pub translation: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub observations: Vec<Observation>,
    /// Same order and ids as `observations` when present.
    pub ground_truth: Option<Vec<GroundTruth>>,
}

impl SyntheticDataset {
    /// The dataset with its ground truth removed.
    pub fn without_ground_truth(&self) -> SyntheticDataset {
        SyntheticDataset {
            observations: self.observations.clone(),
            ground_truth: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub noise_px: f64,
    pub occlusion_rate: f64,
    pub seed: u64,
    pub focal: f64,
    pub crop: f64,
    /// Mean depth, meters; each example draws within `±depth_jitter` of it
    /// (relative).
    pub depth: f64,
    pub depth_jitter: f64,
    /// Global yaw drawn uniformly from `[-yaw_range, yaw_range]`.
    pub yaw_range: f64,
    /// Standard deviation of the lateral body offset, meters.
    pub offset_sd: f64,
    pub first_id: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 200,
            noise_px: 0.0,
            occlusion_rate: 0.0,
            seed: 0,
            focal: 5000.0,
            crop: 256.0,
            depth: 42.5,
            depth_jitter: 0.1,
            yaw_range: 0.6,
            offset_sd: 0.05,
            first_id: 0,
        }
    }
}

/// Body-pose archetypes of the humanoid tree as `(joint name, axis-angle)`.
fn archetypes() -> Vec<Vec<(&'static str, [f64; 3])>> {
    let arms_down = [("left_shoulder", [0.0, 0.0, 1.3]), ("right_shoulder", [0.0, 0.0, -1.3])];
    let mut standing = arms_down.to_vec();
    standing.extend([("left_elbow", [0.0, 0.2, 0.0]), ("right_elbow", [0.0, -0.2, 0.0])]);
    let t_pose = vec![("left_elbow", [0.0, 0.05, 0.0])];
    let mut walk = arms_down.to_vec();
    walk.extend([
        ("left_hip", [-0.45, 0.0, 0.0]),
        ("right_hip", [0.3, 0.0, 0.0]),
        ("left_knee", [0.3, 0.0, 0.0]),
        ("right_knee", [0.7, 0.0, 0.0]),
        ("left_elbow", [0.0, 0.4, 0.0]),
        ("right_elbow", [0.0, -0.4, 0.0]),
        ("left_collar", [0.0, 0.15, 0.0]),
        ("right_collar", [0.0, 0.15, 0.0]),
    ]);
    let arms_up = vec![
        ("left_shoulder", [0.0, 0.0, -1.2]),
        ("right_shoulder", [0.0, 0.0, 1.2]),
        ("left_elbow", [0.0, 0.3, 0.0]),
        ("right_elbow", [0.0, -0.3, 0.0]),
    ];
    let mut sitting = arms_down.to_vec();
    sitting.extend([
        ("left_hip", [-1.5, 0.0, 0.0]),
        ("right_hip", [-1.5, 0.0, 0.0]),
        ("left_knee", [1.5, 0.0, 0.0]),
        ("right_knee", [1.5, 0.0, 0.0]),
        ("left_elbow", [0.0, 0.8, 0.0]),
        ("right_elbow", [0.0, -0.8, 0.0]),
    ]);
    let mut bending = arms_down.to_vec();
    bending.extend([
        ("spine1", [0.5, 0.0, 0.0]),
        ("spine2", [0.3, 0.0, 0.0]),
        ("spine3", [0.2, 0.0, 0.0]),
        ("left_knee", [0.2, 0.0, 0.0]),
        ("right_knee", [0.2, 0.0, 0.0]),
    ]);
    vec![standing, t_pose, walk, arms_up, sitting, bending]
}

/// Pose samples (rows of `3 (J_kin - 1)` body-pose values, global orientation
/// excluded). Humanoid models draw scaled archetypes plus noise; other trees
/// draw isotropic noise.
pub fn sample_pose_corpus(model: &BodyModel, n: usize, seed: u64) -> DMatrix<f64> {
    let j = model.num_kinematic_joints();
    let d = 3 * (j - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let humanoid = j == 24 && model.joint_index("left_elbow").is_some();
    let types: Vec<DVector<f64>> = archetypes()
        .into_iter()
        .map(|a| {
            let mut v = DVector::zeros(d);
            for (name, aa) in a {
                if let Some(idx) = model.joint_index(name).filter(|&i| i > 0) {
                    for c in 0..3 {
                        v[3 * (idx - 1) + c] = aa[c];
                    }
                }
            }
            v
        })
        .collect();
    let noise = Normal::new(0.0, 0.1).expect("valid sd");
    let wide = Normal::new(0.0, 0.3).expect("valid sd");
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        let row: DVector<f64> = if humanoid {
            let base = &types[rng.random_range(0..types.len())];
            let scale = rng.random_range(0.6..1.15);
            base * scale + DVector::from_fn(d, |_, _| noise.sample(&mut rng))
        } else {
            DVector::from_fn(d, |_, _| wide.sample(&mut rng))
        };
        out.set_row(i, &row.transpose());
    }
    out
}

/// Forward-projected bodies with poses from `prior`, shapes from a clipped
/// standard normal, yaw-rotated global orientation and jittered depth.
pub fn generate_synthetic_dataset(
    model: &BodyModel,
    prior: &GmmPosePrior,
    cfg: &SyntheticConfig,
) -> Result<SyntheticDataset, SpinError> {
    let j = model.num_kinematic_joints();
    if prior.dim() != 3 * (j - 1) {
        return Err(SpinError::Mismatch {
            what: "pose prior dimension",
            expected: 3 * (j - 1),
            got: prior.dim(),
        });
    }
    if !(0.0..=1.0).contains(&cfg.occlusion_rate) || cfg.noise_px < 0.0 {
        return Err(SpinError::InvalidConfig(
            "occlusion_rate must be in [0, 1] and noise_px >= 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let intrinsics = Intrinsics::for_crop(cfg.focal, cfg.crop);
    let mut observations = Vec::with_capacity(cfg.n);
    let mut ground_truth = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let body = prior.sample(&mut rng);
        let mut theta = vec![AxisAngle::new(
            0.05 * unit.sample(&mut rng),
            rng.random_range(-cfg.yaw_range..=cfg.yaw_range),
            0.05 * unit.sample(&mut rng),
        )];
        theta.extend((1..j).map(|m| {
            AxisAngle::new(body[3 * m - 3], body[3 * m - 2], body[3 * m - 1])
        }));
        let beta = DVector::from_fn(model.num_betas(), |_, _| {
            unit.sample(&mut rng).clamp(-2.0, 2.0)
        });
        let params = ModelParams::new(theta, beta)?;
        let depth = cfg.depth * (1.0 + rng.random_range(-cfg.depth_jitter..=cfg.depth_jitter));
        let posed = Posed::from_params(model, &params)?;
        let joints = forward_joints(model, &posed);
        // Center the body's joint bounding box in the crop, then jitter.
        let (lo, hi) = joints.0.iter().fold(
            (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), p| (lo.inf(p), hi.sup(p)),
        );
        let mid = (lo + hi) / 2.0;
        let translation = Vector3::new(
            -mid.x + cfg.offset_sd * unit.sample(&mut rng),
            -mid.y + cfg.offset_sd * unit.sample(&mut rng),
            depth,
        );
        let cam = Camera::new(intrinsics, translation)?;
        let clean = crate::camera::project(&cam, &joints)?;
        let mut points = Vec::with_capacity(clean.len());
        let mut conf = Vec::with_capacity(clean.len());
        for p in clean {
            let noisy = if cfg.noise_px > 0.0 {
                p + nalgebra::Vector2::new(unit.sample(&mut rng), unit.sample(&mut rng)) * cfg.noise_px
            } else {
                p
            };
            let occluded = cfg.occlusion_rate > 0.0 && rng.random::<f64>() < cfg.occlusion_rate;
            points.push(noisy);
            conf.push(if occluded { 0.0 } else { 1.0 });
        }
        let id = cfg.first_id + i as u64;
        observations.push(Observation {
            id,
            keypoints: Keypoints2D::new(points, conf)?,
            intrinsics,
        });
        ground_truth.push(GroundTruth {
            id,
            params,
            translation,
        });
    }
    Ok(SyntheticDataset {
        observations,
        ground_truth: Some(ground_truth),
    })
}
