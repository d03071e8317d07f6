//! Fitting the body model to 2D keypoints.
//!
//! The objective is a robust reprojection term plus weighted pose, angle and
//! shape priors. It is minimized by damped Gauss-Newton over a schedule of
//! stages, each freeing a subset of `[translation, global orientation, body
//! pose, shape]`. A camera stage over translation and global orientation on
//! the torso joints always comes first when configured.

use nalgebra::{Cholesky, DMatrix, DVector, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body_model::{BodyModel, ModelError, ModelParams, Posed, BETA_BOUND};
use crate::camera::{self, Camera, CameraError, Intrinsics, Keypoints2D, TorsoPairs};
use crate::priors::{e_angle, e_beta, e_theta, PriorError, Priors};
use crate::rotations::AxisAngle;

/// Energy charged for each confident joint at or behind the camera.
pub const BEHIND_PENALTY: f64 = 1e12;
/// Pixel distance reported for a joint at or behind the camera.
pub const BEHIND_DISTANCE: f64 = 1e6;
/// Minimum number of keypoints with positive confidence.
pub const MIN_OBSERVED: usize = 6;

const DAMPING_FLOOR: f64 = 1e-6;
const MAX_DAMPING: f64 = 1e16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("under-constrained problem: {observed} confident keypoints, need {MIN_OBSERVED}")]
    UnderConstrained { observed: usize },
    #[error("problem has {got} keypoints but the model has {expected} joints")]
    Mismatch { expected: usize, got: usize },
    #[error("invalid fit config: {0}")]
    InvalidConfig(String),
    #[error("optimizer diverged in stage {stage}")]
    Diverged { stage: usize, last: Box<FitState> },
}

/// Robust penalty applied to the squared pixel distance `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Robustifier {
    None,
    /// `rho(s) = s sigma^2 / (s + sigma^2)`.
    GemanMcClure { sigma: f64 },
}

impl Robustifier {
    /// `(rho(s), rho'(s))`.
    pub fn rho(&self, s: f64) -> (f64, f64) {
        match *self {
            Robustifier::None => (s, 1.0),
            Robustifier::GemanMcClure { sigma } => {
                let s2 = sigma * sigma;
                let den = s + s2;
                (s * s2 / den, s2 * s2 / (den * den))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeVars {
    pub translation: bool,
    pub global_orient: bool,
    pub pose: bool,
    pub shape: bool,
}

impl FreeVars {
    pub fn all() -> Self {
        FreeVars {
            translation: true,
            global_orient: true,
            pose: true,
            shape: true,
        }
    }

    pub fn camera() -> Self {
        FreeVars {
            translation: true,
            global_orient: true,
            pose: false,
            shape: false,
        }
    }

    fn indices(&self, num_kin: usize, num_betas: usize) -> Vec<usize> {
        let mut out = Vec::new();
        if self.translation {
            out.extend(0..3);
        }
        if self.global_orient {
            out.extend(3..6);
        }
        if self.pose {
            out.extend(6..3 + 3 * num_kin);
        }
        if self.shape {
            out.extend(3 + 3 * num_kin..3 + 3 * num_kin + num_betas);
        }
        out
    }

    fn any(&self) -> bool {
        self.translation || self.global_orient || self.pose || self.shape
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub free: FreeVars,
    #[serde(default)]
    pub lambda_theta: Option<f64>,
    #[serde(default)]
    pub lambda_a: Option<f64>,
    #[serde(default)]
    pub lambda_beta: Option<f64>,
    pub max_iters: usize,
}

/// Translation and global orientation fitted to a joint subset with no
/// priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraStage {
    pub max_iters: usize,
    /// Joints used; `None` selects the torso by name, falling back to all
    /// joints when fewer than three torso joints are observed.
    #[serde(default)]
    pub joints: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// Infinity norm of the free gradient.
    pub grad_tol: f64,
    /// Step norm relative to the free parameter norm.
    pub step_tol: f64,
    /// Relative energy decrease of an accepted step.
    pub rel_energy_tol: f64,
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence {
            grad_tol: 1e-8,
            step_tol: 1e-10,
            rel_energy_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lambda_theta: f64,
    pub lambda_a: f64,
    pub lambda_beta: f64,
    pub camera_stage: Option<CameraStage>,
    pub stages: Vec<Stage>,
    pub robustifier: Robustifier,
    pub convergence: Convergence,
    pub initial_damping: f64,
    /// Worker threads for [`fit_batch`]; 0 uses all cores.
    pub workers: usize,
}

impl FitConfig {
    /// Four stages of decreasing pose-prior weight, meant for a mean-pose
    /// start.
    pub fn staged() -> Self {
        let stage = |lt: f64, lb: f64| Stage {
            free: FreeVars::all(),
            lambda_theta: Some(lt),
            lambda_a: None,
            lambda_beta: Some(lb),
            max_iters: 50,
        };
        FitConfig {
            lambda_theta: 4.78,
            lambda_a: 15.2,
            lambda_beta: 5.0,
            camera_stage: Some(CameraStage {
                max_iters: 50,
                joints: None,
            }),
            stages: vec![
                stage(404.0, 100.0),
                stage(404.0, 50.0),
                stage(57.4, 10.0),
                stage(4.78, 5.0),
            ],
            robustifier: Robustifier::GemanMcClure { sigma: 100.0 },
            convergence: Convergence::default(),
            initial_damping: 0.1,
            workers: 0,
        }
    }

    /// One short stage for a good initial estimate: 10 camera iterations
    /// and 40 full iterations, 50 in total. The priors are a tenth of the
    /// staged base weights, since the start is already plausible.
    pub fn single() -> Self {
        FitConfig {
            lambda_theta: 0.478,
            lambda_a: 1.52,
            lambda_beta: 0.5,
            camera_stage: Some(CameraStage {
                max_iters: 10,
                joints: None,
            }),
            stages: vec![Stage {
                free: FreeVars::all(),
                lambda_theta: None,
                lambda_a: None,
                lambda_beta: None,
                max_iters: 40,
            }],
            ..FitConfig::staged()
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::InvalidConfig(m.into()));
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(self.lambda_theta) || !ok(self.lambda_a) || !ok(self.lambda_beta) {
            return bad("prior weights must be finite and non-negative");
        }
        if self.stages.is_empty() {
            return bad("at least one stage is required");
        }
        for s in &self.stages {
            if s.max_iters == 0 || !s.free.any() {
                return bad("every stage needs max_iters >= 1 and a free variable");
            }
            if [s.lambda_theta, s.lambda_a, s.lambda_beta]
                .iter()
                .flatten()
                .any(|v| !ok(*v))
            {
                return bad("stage weights must be finite and non-negative");
            }
        }
        if matches!(self.camera_stage, Some(CameraStage { max_iters: 0, .. })) {
            return bad("camera stage needs max_iters >= 1");
        }
        if let Robustifier::GemanMcClure { sigma } = self.robustifier {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return bad("robustifier sigma must be positive");
            }
        }
        if !(self.initial_damping > 0.0) {
            return bad("initial damping must be positive");
        }
        Ok(())
    }

    fn lambdas(&self) -> Lambdas {
        Lambdas {
            theta: self.lambda_theta,
            angle: self.lambda_a,
            beta: self.lambda_beta,
        }
    }

    fn stage_lambdas(&self, s: &Stage) -> Lambdas {
        Lambdas {
            theta: s.lambda_theta.unwrap_or(self.lambda_theta),
            angle: s.lambda_a.unwrap_or(self.lambda_a),
            beta: s.lambda_beta.unwrap_or(self.lambda_beta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Lambdas {
    theta: f64,
    angle: f64,
    beta: f64,
}

const NO_PRIORS: Lambdas = Lambdas {
    theta: 0.0,
    angle: 0.0,
    beta: 0.0,
};

/// Body parameters plus root translation in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub params: ModelParams,
    pub translation: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    keypoints: Keypoints2D,
    intrinsics: Intrinsics,
    init: FitState,
}

impl FitProblem {
    pub fn new(
        keypoints: Keypoints2D,
        intrinsics: Intrinsics,
        init_params: ModelParams,
        init_translation: Vector3<f64>,
    ) -> Result<Self, FitError> {
        let observed = keypoints.num_observed();
        if observed < MIN_OBSERVED {
            return Err(FitError::UnderConstrained { observed });
        }
        Ok(FitProblem {
            keypoints,
            intrinsics,
            init: FitState {
                params: init_params,
                translation: init_translation,
            },
        })
    }

    /// Mean pose and shape, translation from the torso.
    pub fn from_mean_pose(
        model: &BodyModel,
        keypoints: Keypoints2D,
        intrinsics: Intrinsics,
    ) -> Result<Self, FitError> {
        let params = ModelParams::zeros(model);
        let t = translation_for(model, &params, &keypoints, &intrinsics)?;
        FitProblem::new(keypoints, intrinsics, params, t)
    }

    pub fn keypoints(&self) -> &Keypoints2D {
        &self.keypoints
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn init(&self) -> &FitState {
        &self.init
    }
}

/// Similar-triangles translation for `params` against `keypoints`. When no
/// torso pair is observed, every pair of observed joints serves as the
/// length reference instead.
pub fn translation_for(
    model: &BodyModel,
    params: &ModelParams,
    keypoints: &Keypoints2D,
    intrinsics: &Intrinsics,
) -> Result<Vector3<f64>, FitError> {
    let posed = Posed::from_params(model, params)?;
    let joints = crate::body_model::forward_joints(model, &posed);
    let torso = TorsoPairs::from_names(model.names());
    match camera::init_translation(keypoints, &joints, intrinsics, &torso) {
        Err(CameraError::NoTorso) => {
            let seen: Vec<usize> = (0..keypoints.len()).filter(|&i| keypoints.conf()[i] > 0.0).collect();
            let pairs = seen
                .iter()
                .enumerate()
                .flat_map(|(n, &a)| seen[n + 1..].iter().map(move |&b| (a, b)))
                .collect();
            Ok(camera::init_translation(keypoints, &joints, intrinsics, &TorsoPairs(pairs))?)
        }
        r => Ok(r?),
    }
}

/// Weighted energy terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub joints: f64,
    pub pose: f64,
    pub angle: f64,
    pub shape: f64,
    pub total: f64,
}

/// One optimizer trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 0 is the camera stage when present, later stages follow.
    pub stage: usize,
    pub iteration: usize,
    pub energy: f64,
    pub trial_energy: f64,
    pub accepted: bool,
    pub step_norm: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params_opt: ModelParams,
    pub translation_opt: Vector3<f64>,
    /// Confidence-weighted mean pixel distance.
    pub reproj_error: f64,
    pub energy_breakdown: EnergyBreakdown,
    /// Trials, accepted or not.
    pub iterations_used: usize,
    pub accepted_iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRecord>,
}

/// Reprojection term with residuals `u_i - j_i` (pixels, `2k`), their
/// Jacobian against `[translation, theta, beta]` and the per-joint IRLS
/// weights `conf_i rho'(s_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEnergy {
    pub value: f64,
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub gradient: DVector<f64>,
}

fn num_vars(model: &BodyModel) -> usize {
    3 + 3 * model.num_kinematic_joints() + model.num_betas()
}

fn pack(state: &FitState) -> DVector<f64> {
    let theta = state.params.theta_flat();
    let beta = state.params.beta();
    let mut x = DVector::zeros(3 + theta.len() + beta.len());
    x.rows_mut(0, 3).copy_from(&state.translation);
    x.rows_mut(3, theta.len()).copy_from(&theta);
    x.rows_mut(3 + theta.len(), beta.len()).copy_from(beta);
    x
}

fn unpack(model: &BodyModel, x: &DVector<f64>) -> Result<FitState, FitError> {
    let j = model.num_kinematic_joints();
    let theta = (0..j)
        .map(|m| AxisAngle::new(x[3 + 3 * m], x[4 + 3 * m], x[5 + 3 * m]))
        .collect();
    let beta = x.rows(3 + 3 * j, model.num_betas()).into_owned();
    Ok(FitState {
        params: ModelParams::new(theta, beta)?,
        translation: Vector3::new(x[0], x[1], x[2]),
    })
}

fn check_keypoints(model: &BodyModel, kp: &Keypoints2D) -> Result<(), FitError> {
    if kp.len() != model.num_joints() {
        return Err(FitError::Mismatch {
            expected: model.num_joints(),
            got: kp.len(),
        });
    }
    Ok(())
}

fn joint_energy_impl(
    model: &BodyModel,
    state: &FitState,
    intrinsics: &Intrinsics,
    keypoints: &Keypoints2D,
    robustifier: &Robustifier,
    mask: Option<&[bool]>,
    derivs: bool,
) -> Result<JointEnergy, FitError> {
    check_keypoints(model, keypoints)?;
    let k = keypoints.len();
    let n = num_vars(model);
    let j_kin = model.num_kinematic_joints();
    let posed = Posed::from_params(model, &state.params)?;
    let points = model.joint_points();
    let joints = points.evaluate(&posed);
    let dj = derivs.then(|| points.jacobian(&posed, state.params.theta()));
    let cam = Camera {
        intrinsics: *intrinsics,
        translation: state.translation,
    };
    let mut value = 0.0;
    let mut residuals = DVector::zeros(2 * k);
    let mut weights = DVector::zeros(k);
    let mut jacobian = DMatrix::zeros(if derivs { 2 * k } else { 0 }, n);
    for i in 0..k {
        let conf = if mask.is_none_or(|m| m[i]) {
            keypoints.conf()[i]
        } else {
            0.0
        };
        if conf == 0.0 {
            continue;
        }
        let Some(u) = cam.project_point(&joints[i]) else {
            value += conf * BEHIND_PENALTY;
            continue;
        };
        let d: Vector2<f64> = u - keypoints.points()[i];
        let (r, dr) = robustifier.rho(d.norm_squared());
        value += conf * r;
        weights[i] = conf * dr;
        residuals[2 * i] = d.x;
        residuals[2 * i + 1] = d.y;
        if let Some(dj) = &dj {
            let p = cam.point_jacobian(&joints[i]).expect("in front of camera");
            for a in 0..2 {
                for c in 0..3 {
                    jacobian[(2 * i + a, c)] = p[(a, c)];
                }
                for col in 0..3 * j_kin {
                    jacobian[(2 * i + a, 3 + col)] = (0..3)
                        .map(|r| p[(a, r)] * dj.d_theta[(3 * i + r, col)])
                        .sum();
                }
                for col in 0..model.num_betas() {
                    jacobian[(2 * i + a, 3 + 3 * j_kin + col)] = (0..3)
                        .map(|r| p[(a, r)] * dj.d_beta[(3 * i + r, col)])
                        .sum();
                }
            }
        }
    }
    let gradient = if derivs {
        let wd = DVector::from_fn(2 * k, |r, _| 2.0 * weights[r / 2] * residuals[r]);
        jacobian.tr_mul(&wd)
    } else {
        DVector::zeros(0)
    };
    Ok(JointEnergy {
        value,
        residuals,
        jacobian,
        weights,
        gradient,
    })
}

/// `sum_i conf_i rho(|project(X_i) - j_i|^2)`. Joints at or behind the
/// camera contribute [`BEHIND_PENALTY`] with zero residual and gradient.
pub fn e_joints(
    model: &BodyModel,
    params: &ModelParams,
    translation: &Vector3<f64>,
    intrinsics: &Intrinsics,
    keypoints: &Keypoints2D,
    robustifier: &Robustifier,
) -> Result<JointEnergy, FitError> {
    let state = FitState {
        params: params.clone(),
        translation: *translation,
    };
    joint_energy_impl(model, &state, intrinsics, keypoints, robustifier, None, true)
}

/// Confidence-weighted mean pixel distance; zero when no keypoint is
/// confident.
pub fn reproj_error(
    model: &BodyModel,
    params: &ModelParams,
    translation: &Vector3<f64>,
    intrinsics: &Intrinsics,
    keypoints: &Keypoints2D,
) -> Result<f64, FitError> {
    check_keypoints(model, keypoints)?;
    let posed = Posed::from_params(model, params)?;
    let joints = model.joint_points().evaluate(&posed);
    let cam = Camera {
        intrinsics: *intrinsics,
        translation: *translation,
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, x) in joints.iter().enumerate() {
        let c = keypoints.conf()[i];
        if c == 0.0 {
            continue;
        }
        let dist = cam
            .project_point(x)
            .map_or(BEHIND_DISTANCE, |u| (u - keypoints.points()[i]).norm());
        num += c * dist;
        den += c;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

struct Objective<'a> {
    model: &'a BodyModel,
    problem: &'a FitProblem,
    priors: &'a Priors,
    robustifier: Robustifier,
    lambdas: Lambdas,
    mask: Option<Vec<bool>>,
}

struct Evaluation {
    breakdown: EnergyBreakdown,
    gradient: DVector<f64>,
    hessian: DMatrix<f64>,
}

impl Objective<'_> {
    fn evaluate(&self, state: &FitState, derivs: bool) -> Result<Evaluation, FitError> {
        let n = num_vars(self.model);
        let j_kin = self.model.num_kinematic_joints();
        let je = joint_energy_impl(
            self.model,
            state,
            &self.problem.intrinsics,
            &self.problem.keypoints,
            &self.robustifier,
            self.mask.as_deref(),
            derivs,
        )?;
        let mut gradient = DVector::zeros(if derivs { n } else { 0 });
        let mut hessian = DMatrix::zeros(if derivs { n } else { 0 }, if derivs { n } else { 0 });
        if derivs {
            gradient += &je.gradient;
            let mut jw = je.jacobian.clone();
            for (r, mut row) in jw.row_iter_mut().enumerate() {
                row *= (2.0 * je.weights[r / 2]).sqrt();
            }
            hessian += jw.tr_mul(&jw);
        }
        let l = self.lambdas;
        let theta = state.params.theta_flat();
        let beta = state.params.beta();

        let mut pose = 0.0;
        if l.theta > 0.0 {
            let bp = theta.rows(3, theta.len() - 3).into_owned();
            let e = e_theta(&self.priors.pose, &bp)?;
            pose = l.theta * e.value;
            if derivs {
                let d = bp.len();
                gradient.rows_mut(6, d).axpy(l.theta, &e.gradient, 1.0);
                let h = self.priors.pose.gauss_newton_hessian(&bp);
                let mut block = hessian.view_mut((6, 6), (d, d));
                block += h * l.theta;
            }
        }
        let mut angle = 0.0;
        if l.angle > 0.0 {
            let e = e_angle(&theta, &self.priors.angle);
            angle = l.angle * e.value;
            if derivs {
                gradient.rows_mut(3, theta.len()).axpy(l.angle, &e.gradient, 1.0);
                for (idx, _, dr) in self.priors.angle.residuals(&theta) {
                    hessian[(3 + idx, 3 + idx)] += 2.0 * l.angle * dr * dr;
                }
            }
        }
        let mut shape = 0.0;
        if l.beta > 0.0 {
            let e = e_beta(beta);
            shape = l.beta * e.value;
            if derivs {
                let off = 3 + 3 * j_kin;
                gradient.rows_mut(off, beta.len()).axpy(l.beta, &e.gradient, 1.0);
                for b in 0..beta.len() {
                    hessian[(off + b, off + b)] += 2.0 * l.beta;
                }
            }
        }
        Ok(Evaluation {
            breakdown: EnergyBreakdown {
                joints: je.value,
                pose,
                angle,
                shape,
                total: je.value + pose + angle + shape,
            },
            gradient,
            hessian,
        })
    }
}

struct StageOutcome {
    iterations: usize,
    accepted: usize,
    converged: bool,
}

fn solve_damped(h: &DMatrix<f64>, g: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let mut a = h.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += mu * (h[(i, i)] + DAMPING_FLOOR);
    }
    let step = Cholesky::new(a)?.solve(&(-g));
    step.iter().all(|v| v.is_finite()).then_some(step)
}

#[allow(clippy::too_many_arguments)]
fn minimize(
    obj: &Objective,
    state: &mut FitState,
    free: &[usize],
    max_iters: usize,
    cfg: &FitConfig,
    stage: usize,
    trace: &mut Vec<TraceRecord>,
) -> Result<StageOutcome, FitError> {
    let model = obj.model;
    let beta_off = 3 + 3 * model.num_kinematic_joints();
    let tol = cfg.convergence;
    let mut mu = cfg.initial_damping;
    let mut x = pack(state);
    let mut eval = obj.evaluate(state, true)?;
    let mut out = StageOutcome {
        iterations: 0,
        accepted: 0,
        converged: false,
    };
    let diverged = |s: &FitState| FitError::Diverged {
        stage,
        last: Box::new(s.clone()),
    };
    if !eval.breakdown.total.is_finite() {
        return Err(diverged(state));
    }
    while out.iterations < max_iters {
        let g = DVector::from_iterator(free.len(), free.iter().map(|&i| eval.gradient[i]));
        if g.amax() < tol.grad_tol {
            out.converged = true;
            break;
        }
        if mu > MAX_DAMPING {
            out.converged = true;
            break;
        }
        let h = DMatrix::from_fn(free.len(), free.len(), |a, b| {
            eval.hessian[(free[a], free[b])]
        });
        let energy = eval.breakdown.total;
        let Some(step) = solve_damped(&h, &g, mu) else {
            out.iterations += 1;
            trace.push(TraceRecord {
                stage,
                iteration: out.iterations,
                energy,
                trial_energy: f64::NAN,
                accepted: false,
                step_norm: f64::NAN,
                damping: mu,
            });
            mu *= 2.0;
            continue;
        };
        let x_free_norm = free.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt();
        let step_norm = step.norm();
        if step_norm < tol.step_tol * (x_free_norm + tol.step_tol) {
            out.converged = true;
            break;
        }
        let mut trial = x.clone();
        for (s, &i) in step.iter().zip(free) {
            trial[i] += s;
            if i >= beta_off {
                trial[i] = trial[i].clamp(-BETA_BOUND, BETA_BOUND);
            }
        }
        out.iterations += 1;
        let trial_state = unpack(model, &trial).map_err(|_| diverged(state))?;
        let trial_eval = obj.evaluate(&trial_state, false)?;
        let e_new = trial_eval.breakdown.total;
        if e_new.is_nan() {
            return Err(diverged(state));
        }
        let accepted = e_new < energy;
        trace.push(TraceRecord {
            stage,
            iteration: out.iterations,
            energy,
            trial_energy: e_new,
            accepted,
            step_norm,
            damping: mu,
        });
        if accepted {
            out.accepted += 1;
            mu /= 3.0;
            x = trial;
            *state = trial_state;
            eval = obj.evaluate(state, true)?;
            if energy - e_new <= tol.rel_energy_tol * energy.abs() {
                out.converged = true;
                break;
            }
        } else {
            mu *= 2.0;
        }
    }
    Ok(out)
}

fn camera_mask(model: &BodyModel, problem: &FitProblem, stage: &CameraStage) -> Vec<bool> {
    let k = model.num_joints();
    let chosen: Vec<usize> = match &stage.joints {
        Some(j) => j.clone(),
        None => {
            let mut torso: Vec<usize> = TorsoPairs::from_names(model.names())
                .0
                .iter()
                .flat_map(|&(a, b)| [a, b])
                .collect();
            torso.extend(["pelvis", "spine1", "spine2", "spine3", "neck"].iter().filter_map(
                |n| model.joint_index(n),
            ));
            let observed = torso.iter().filter(|&&j| problem.keypoints.conf()[j] > 0.0).count();
            if observed < 3 {
                (0..k).collect()
            } else {
                torso
            }
        }
    };
    let mut mask = vec![false; k];
    for j in chosen.into_iter().filter(|&j| j < k) {
        mask[j] = true;
    }
    mask
}

/// Translation and global orientation only, against the camera-stage joints
/// and without priors. Returns the updated state and the stage outcome
/// `(iterations, accepted)`.
pub fn fit_camera_stage(
    model: &BodyModel,
    problem: &FitProblem,
    priors: &Priors,
    cfg: &FitConfig,
) -> Result<(FitState, usize, usize), FitError> {
    let stage = cfg.camera_stage.clone().unwrap_or(CameraStage {
        max_iters: 50,
        joints: None,
    });
    let mut state = problem.init.clone();
    let mut trace = Vec::new();
    let out = run_camera_stage(model, problem, priors, cfg, &stage, &mut state, &mut trace)?;
    Ok((state, out.iterations, out.accepted))
}

fn run_camera_stage(
    model: &BodyModel,
    problem: &FitProblem,
    priors: &Priors,
    cfg: &FitConfig,
    stage: &CameraStage,
    state: &mut FitState,
    trace: &mut Vec<TraceRecord>,
) -> Result<StageOutcome, FitError> {
    let obj = Objective {
        model,
        problem,
        priors,
        robustifier: cfg.robustifier,
        lambdas: NO_PRIORS,
        mask: Some(camera_mask(model, problem, stage)),
    };
    let free = FreeVars::camera().indices(model.num_kinematic_joints(), model.num_betas());
    minimize(&obj, state, &free, stage.max_iters, cfg, 0, trace)
}

/// Runs the camera stage (when configured) and then every stage of the
/// schedule, starting from the problem's initial state.
pub fn fit(
    model: &BodyModel,
    problem: &FitProblem,
    priors: &Priors,
    cfg: &FitConfig,
) -> Result<FitResult, FitError> {
    cfg.validate()?;
    check_keypoints(model, &problem.keypoints)?;
    let mut state = problem.init.clone();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut accepted = 0;
    let mut converged = true;
    let offset = usize::from(cfg.camera_stage.is_some());
    if let Some(stage) = &cfg.camera_stage {
        let out = run_camera_stage(model, problem, priors, cfg, stage, &mut state, &mut trace)?;
        iterations += out.iterations;
        accepted += out.accepted;
    }
    let mut lambdas = cfg.lambdas();
    for (s, stage) in cfg.stages.iter().enumerate() {
        lambdas = cfg.stage_lambdas(stage);
        let obj = Objective {
            model,
            problem,
            priors,
            robustifier: cfg.robustifier,
            lambdas,
            mask: None,
        };
        let free = stage
            .free
            .indices(model.num_kinematic_joints(), model.num_betas());
        let out = minimize(&obj, &mut state, &free, stage.max_iters, cfg, s + offset, &mut trace)?;
        iterations += out.iterations;
        accepted += out.accepted;
        converged = out.converged;
    }
    let obj = Objective {
        model,
        problem,
        priors,
        robustifier: cfg.robustifier,
        lambdas,
        mask: None,
    };
    let breakdown = obj.evaluate(&state, false)?.breakdown;
    let err = reproj_error(
        model,
        &state.params,
        &state.translation,
        &problem.intrinsics,
        &problem.keypoints,
    )?;
    Ok(FitResult {
        params_opt: state.params,
        translation_opt: state.translation,
        reproj_error: err,
        energy_breakdown: breakdown,
        iterations_used: iterations,
        accepted_iterations: accepted,
        converged,
        trace,
    })
}

/// Fits every problem on a pool of `cfg.workers` threads. Each slot holds
/// that problem's own result or error.
pub fn fit_batch(
    model: &BodyModel,
    problems: &[FitProblem],
    priors: &Priors,
    cfg: &FitConfig,
) -> Vec<Result<FitResult, FitError>> {
    let run = || {
        problems
            .par_iter()
            .map(|p| fit(model, p, priors, cfg))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build() {
        Ok(pool) => pool.install(run),
        Err(_) => problems.iter().map(|p| fit(model, p, priors, cfg)).collect(),
    }
}

/// Prior weights entering the total with the base (not per-stage) values.
pub fn total_energy(
    model: &BodyModel,
    params: &ModelParams,
    translation: &Vector3<f64>,
    cfg: &FitConfig,
    problem: &FitProblem,
    priors: &Priors,
) -> Result<EnergyBreakdown, FitError> {
    let obj = Objective {
        model,
        problem,
        priors,
        robustifier: cfg.robustifier,
        lambdas: cfg.lambdas(),
        mask: None,
    };
    let state = FitState {
        params: params.clone(),
        translation: *translation,
    };
    Ok(obj.evaluate(&state, false)?.breakdown)
}

/// Thresholds for merging annotated keypoints with detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub tau_det: f64,
    pub r_agree: f64,
    pub c_gt_default: f64,
    pub c_disagree: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            tau_det: 0.3,
            r_agree: 10.0,
            c_gt_default: 0.8,
            c_disagree: 0.3,
        }
    }
}

/// Annotated positions with confidences from their agreement with the
/// detector. Joints missing from the annotation stay at confidence 0.
pub fn fuse_keypoints(
    gt: &Keypoints2D,
    det: &Keypoints2D,
    cfg: &FusionConfig,
) -> Result<Keypoints2D, FitError> {
    if gt.len() != det.len() {
        return Err(FitError::Mismatch {
            expected: gt.len(),
            got: det.len(),
        });
    }
    let conf = (0..gt.len())
        .map(|i| {
            let dc = det.conf()[i];
            if gt.conf()[i] == 0.0 {
                0.0
            } else if dc < cfg.tau_det {
                cfg.c_gt_default
            } else if (det.points()[i] - gt.points()[i]).norm() <= cfg.r_agree {
                dc
            } else {
                cfg.c_disagree
            }
        })
        .collect();
    Ok(Keypoints2D::new(gt.points().to_vec(), conf)?)
}
