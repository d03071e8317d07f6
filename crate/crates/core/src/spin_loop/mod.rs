//! The regression-optimization training loop.
//!
//! Each epoch the regressor predicts parameters from keypoints, a short fit
//! refines them, the per-example dictionary keeps the best fit seen, and the
//! regressor is pulled toward that best fit. Fits above the rejection
//! threshold supervise only through the 2D reprojection loss.

pub mod data;
pub mod dictionary;
pub mod losses;
pub mod regressor;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body_model::{BodyModel, ModelError, PointSet, Posed};
use crate::camera::CameraError;
use crate::fitting::{fit_batch, FitConfig, FitError, FitProblem};
use crate::priors::{PriorError, Priors};
use crate::rotations::RotationError;

pub use data::{
    generate_synthetic_dataset, sample_pose_corpus, GroundTruth, Observation, SyntheticConfig,
    SyntheticDataset,
};
pub use dictionary::{
    accept_fit, dictionary_init, shape_supervision_mode, Dictionary, DictionaryEntry,
    ShapeSupervision,
};
pub use losses::{loss_2d, loss_3d, loss_mesh, LossGrad, Target};
pub use regressor::{
    decode_output, decode_translation, encode_input, encode_translation, regress, Activation,
    Dense, Mlp, MlpRegressor, Regressor,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rotation(#[from] RotationError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("{what}: expected {expected}, got {got}")]
    Mismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub w_3d: f64,
    pub w_mesh: f64,
    /// Weight of the reprojection loss, applied to rejected fits and, when
    /// non-zero, also added for accepted ones.
    pub w_2d: f64,
    /// Rejection threshold on the reprojection error, pixels.
    pub tau_rej: f64,
    /// Shape coefficients beyond this many standard deviations are not
    /// used as targets.
    pub shape_bound: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 20,
            learning_rate: 0.05,
            w_3d: 1.0,
            w_mesh: 1.0,
            w_2d: 0.0,
            tau_rej: 10.0,
            shape_bound: 3.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SpinError> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if self.batch_size == 0 {
            return Err(SpinError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if ![self.learning_rate, self.w_3d, self.w_mesh, self.w_2d, self.tau_rej, self.shape_bound]
            .into_iter()
            .all(ok)
        {
            return Err(SpinError::InvalidConfig(
                "rates, weights and thresholds must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    fn trains(&self) -> bool {
        self.w_3d > 0.0 || self.w_mesh > 0.0 || self.w_2d > 0.0
    }
}

/// Per-term losses for one example and the combined output gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervision {
    pub accepted: bool,
    pub loss_3d: Option<LossGrad>,
    pub loss_mesh: Option<LossGrad>,
    pub loss_2d: Option<LossGrad>,
    pub output_gradient: DVector<f64>,
}

/// Builds the supervision of one regressor output from its dictionary
/// entry. A missing or rejected entry supervises through `w_2d * L_2D`
/// alone; an accepted one through `w_3d * L_3D + w_mesh * L_M`, plus the 2D
/// term when `w_2d > 0`.
pub fn supervise(
    model: &BodyModel,
    vertex_points: &PointSet,
    regressor: &MlpRegressor,
    raw: &DVector<f64>,
    obs: &Observation,
    entry: Option<&DictionaryEntry>,
    cfg: &TrainConfig,
) -> Result<Supervision, SpinError> {
    let mut grad = DVector::zeros(raw.len());
    let accepted = entry.is_some_and(|e| dictionary::within_threshold(e.reproj_error, cfg.tau_rej));
    let mut out = Supervision {
        accepted,
        loss_3d: None,
        loss_mesh: None,
        loss_2d: None,
        output_gradient: DVector::zeros(0),
    };
    if let (true, Some(e)) = (accepted, entry) {
        let beta = match shape_supervision_mode(e.params.beta(), cfg.shape_bound) {
            ShapeSupervision::UseBetaOpt => e.params.beta().clone(),
            ShapeSupervision::RegularizeToMean => DVector::zeros(model.num_betas()),
        };
        let target = Target {
            rotations: e.params.rotations(),
            beta,
            camera_code: encode_translation(&e.translation, &obs.intrinsics, regressor.z_ref),
        };
        if cfg.w_3d > 0.0 {
            let l = loss_3d(model, raw, &target)?;
            grad.axpy(cfg.w_3d, &l.gradient, 1.0);
            out.loss_3d = Some(l);
        }
        if cfg.w_mesh > 0.0 {
            let posed = Posed::new(model, &target.rotations, &target.beta)?;
            let verts = vertex_points.evaluate(&posed);
            let l = loss_mesh(model, vertex_points, raw, &verts)?;
            grad.axpy(cfg.w_mesh, &l.gradient, 1.0);
            out.loss_mesh = Some(l);
        }
    }
    if cfg.w_2d > 0.0 {
        let l = loss_2d(model, raw, &obs.keypoints, &obs.intrinsics, regressor.z_ref)?;
        grad.axpy(cfg.w_2d, &l.gradient, 1.0);
        out.loss_2d = Some(l);
    }
    out.output_gradient = grad;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss_3d: f64,
    pub mean_loss_mesh: f64,
    pub mean_loss_2d: f64,
    pub mean_dict_reproj_error: f64,
    pub acceptance_rate: f64,
    pub dictionary_updates: usize,
    pub fit_failures: usize,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.n += 1;
        }
    }

    fn get(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// One pass over `observations`: regress, fit from the regressed estimate,
/// update the dictionary, then take one gradient step per mini-batch toward
/// the dictionary entries.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &BodyModel,
    regressor: &mut Regressor,
    observations: &[Observation],
    dict: &mut Dictionary,
    priors: &Priors,
    fit_cfg: &FitConfig,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats, SpinError> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..observations.len()).collect();
    order.shuffle(&mut epoch_rng(cfg.seed, epoch));
    let vertex_points = model.vertex_points();
    let (mut l3, mut lm, mut l2, mut acc) = (Mean::default(), Mean::default(), Mean::default(), Mean::default());
    let mut updates = 0;
    let mut failures = 0;

    for batch in order.chunks(cfg.batch_size) {
        let mut fitted = Vec::new();
        let mut problems = Vec::new();
        for &i in batch {
            let obs = &observations[i];
            let problem = regress(regressor, model, obs).and_then(|(p, t)| {
                Ok(FitProblem::new(obs.keypoints.clone(), obs.intrinsics, p, t)?)
            });
            match problem {
                Ok(p) => {
                    fitted.push(obs.id);
                    problems.push(p);
                }
                Err(_) => failures += 1,
            }
        }
        for (id, result) in fitted.iter().zip(fit_batch(model, &problems, priors, fit_cfg)) {
            match result {
                Ok(r) => updates += usize::from(dict.update(*id, &r, epoch)),
                Err(_) => failures += 1,
            }
        }

        let Regressor::Mlp(mlp) = regressor else {
            continue;
        };
        let dict_view: &Dictionary = dict;
        let per_example: Vec<Result<(Supervision, Vec<Dense>), SpinError>> = batch
            .par_iter()
            .map(|&i| {
                let obs = &observations[i];
                let input = encode_input(&obs.keypoints, &obs.intrinsics);
                let raw = mlp.net.forward(&input);
                let sup = supervise(model, &vertex_points, mlp, &raw, obs, dict_view.get(obs.id), cfg)?;
                let (_, grads) = mlp.net.forward_backward(&input, &sup.output_gradient);
                Ok((sup, grads))
            })
            .collect();
        let mut total = regressor::zero_grads(&mlp.net);
        for r in per_example {
            let (sup, grads) = r?;
            acc.push(Some(if sup.accepted { 1.0 } else { 0.0 }));
            l3.push(sup.loss_3d.map(|l| l.value));
            lm.push(sup.loss_mesh.map(|l| l.value));
            l2.push(sup.loss_2d.map(|l| l.value));
            for (t, g) in total.iter_mut().zip(&grads) {
                t.weights += &g.weights;
                t.bias += &g.bias;
            }
        }
        if cfg.trains() && cfg.learning_rate > 0.0 {
            let rate = cfg.learning_rate / batch.len() as f64;
            mlp.net.apply_gradient(&total, rate);
        }
    }
    if matches!(regressor, Regressor::MeanPose) {
        for obs in observations {
            acc.push(Some(
                if dict.get(obs.id).is_some_and(|e| dictionary::within_threshold(e.reproj_error, cfg.tau_rej)) {
                    1.0
                } else {
                    0.0
                },
            ));
        }
    }
    Ok(EpochStats {
        epoch,
        mean_loss_3d: l3.get(),
        mean_loss_mesh: lm.get(),
        mean_loss_2d: l2.get(),
        mean_dict_reproj_error: dict.mean_reproj_error(),
        acceptance_rate: acc.get(),
        dictionary_updates: updates,
        fit_failures: failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{fit_gmm_em, AnglePriorConfig, EmConfig};
    use crate::toy::make_toy_model;
    use crate::ToySpec;

    fn setup(n: usize) -> (BodyModel, Priors, SyntheticDataset) {
        let m = make_toy_model(&ToySpec::default()).unwrap();
        let corpus = sample_pose_corpus(&m, 800, 1);
        let (pose, _) = fit_gmm_em(&corpus, &EmConfig { components: 4, max_iters: 40, ..EmConfig::default() }).unwrap();
        let priors = Priors {
            angle: AnglePriorConfig::humanoid(m.names()),
            pose,
        };
        let ds = generate_synthetic_dataset(&m, &priors.pose, &SyntheticConfig { n, seed: 5, ..SyntheticConfig::default() }).unwrap();
        (m, priors, ds)
    }

    #[test]
    fn mean_pose_epoch_keeps_dictionary_monotone() {
        let (m, priors, ds) = setup(8);
        let mut dict = dictionary_init(&m, &ds.observations, &priors, &FitConfig::single(), &Regressor::MeanPose);
        let before: Vec<f64> = dict.iter().map(|e| e.reproj_error).collect();
        let mut f = Regressor::MeanPose;
        train_epoch(&m, &mut f, &ds.observations, &mut dict, &priors, &FitConfig::single(), &TrainConfig::default(), 1).unwrap();
        let after: Vec<f64> = dict.iter().map(|e| e.reproj_error).collect();
        assert_eq!(before.len(), after.len());
        assert!(before.iter().zip(&after).all(|(b, a)| a <= b));
    }

    #[test]
    fn zero_weights_leave_regressor_bits() {
        let (m, priors, ds) = setup(6);
        let mut dict = Dictionary::new();
        let mut f = Regressor::Mlp(MlpRegressor::new(&m, &[16], 42.5, 0).unwrap());
        let before = f.clone();
        let cfg = TrainConfig { w_3d: 0.0, w_mesh: 0.0, w_2d: 0.0, batch_size: 3, ..TrainConfig::default() };
        train_epoch(&m, &mut f, &ds.observations, &mut dict, &priors, &FitConfig::single(), &cfg, 0).unwrap();
        assert_eq!(f, before);
        assert_eq!(dict.len(), 6);
    }

    #[test]
    fn rejected_fit_uses_reprojection_only() {
        let (m, _, ds) = setup(1);
        let vp = m.vertex_points();
        let mlp = MlpRegressor::new(&m, &[16], 42.5, 0).unwrap();
        let obs = &ds.observations[0];
        let raw = mlp.net.forward(&encode_input(&obs.keypoints, &obs.intrinsics));
        let entry = DictionaryEntry {
            example_id: obs.id,
            params: ds.ground_truth.as_ref().unwrap()[0].params.clone(),
            translation: ds.ground_truth.as_ref().unwrap()[0].translation,
            reproj_error: 10.5,
            epoch_found: 0,
        };
        let cfg = TrainConfig { w_2d: 0.5, ..TrainConfig::default() };
        let s = supervise(&m, &vp, &mlp, &raw, obs, Some(&entry), &cfg).unwrap();
        assert!(!s.accepted);
        assert!(s.loss_3d.is_none() && s.loss_mesh.is_none());
        let l2 = s.loss_2d.unwrap();
        assert_eq!(s.output_gradient, &l2.gradient * 0.5);

        let accepted = DictionaryEntry { reproj_error: 10.0, ..entry };
        let s = supervise(&m, &vp, &mlp, &raw, obs, Some(&accepted), &cfg).unwrap();
        assert!(s.accepted);
        assert!(s.loss_3d.is_some() && s.loss_mesh.is_some());
    }

    #[test]
    fn improbable_shape_targets_mean() {
        let (m, _, ds) = setup(1);
        let vp = m.vertex_points();
        let mlp = MlpRegressor::new(&m, &[16], 42.5, 0).unwrap();
        let obs = &ds.observations[0];
        let raw = mlp.net.forward(&encode_input(&obs.keypoints, &obs.intrinsics));
        let gt = &ds.ground_truth.as_ref().unwrap()[0];
        let mut beta = DVector::zeros(10);
        beta[2] = 3.5;
        let entry = DictionaryEntry {
            example_id: obs.id,
            params: crate::ModelParams::new(gt.params.theta().to_vec(), beta).unwrap(),
            translation: gt.translation,
            reproj_error: 1.0,
            epoch_found: 0,
        };
        let cfg = TrainConfig { w_mesh: 0.0, ..TrainConfig::default() };
        let s = supervise(&m, &vp, &mlp, &raw, obs, Some(&entry), &cfg).unwrap();
        let d = decode_output(&raw, 24, 10).unwrap();
        let target = Target {
            rotations: entry.params.rotations(),
            beta: DVector::zeros(10),
            camera_code: encode_translation(&gt.translation, &obs.intrinsics, 42.5),
        };
        assert!(d.beta.amax() < 1.0);
        assert_eq!(s.loss_3d.unwrap(), loss_3d(&m, &raw, &target).unwrap());
    }
}
