//! The keypoint regressor: either the constant mean pose or a small MLP
//! mapping normalized keypoints to 6D joint rotations, shape and a camera
//! code.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::body_model::{BodyModel, ModelParams, BETA_BOUND};
use crate::camera::{Intrinsics, Keypoints2D};
use crate::fitting::translation_for;
use crate::rotations::{matrix_to_aa, rot6d_to_matrix, Rot6D, RotationMatrix};

use super::data::Observation;
use super::SpinError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// No nonlinearity; the network is affine.
    Identity,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Dense layers; every layer but the last is followed by `activation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl Mlp {
    /// Uniform Glorot initialization; the last layer's weights are further
    /// scaled by `last_scale` and its bias set to `output_bias`.
    pub fn new(
        widths: &[usize],
        activation: Activation,
        last_scale: f64,
        output_bias: DVector<f64>,
        seed: u64,
    ) -> Result<Self, SpinError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(SpinError::InvalidConfig(format!("bad layer widths {widths:?}")));
        }
        if output_bias.len() != widths[widths.len() - 1] {
            return Err(SpinError::Mismatch {
                what: "output bias",
                expected: widths[widths.len() - 1],
                got: output_bias.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                let mut limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                if l == n - 1 {
                    limit *= last_scale;
                }
                Dense {
                    weights: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..=limit)),
                    bias: if l == n - 1 {
                        output_bias.clone()
                    } else {
                        DVector::zeros(fan_out)
                    },
                }
            })
            .collect();
        Ok(Mlp { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.nrows()
    }

    fn activations(&self, input: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut acts = vec![input.clone()];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * &acts[l] + &layer.bias;
            if l < last {
                z.apply(|v| *v = self.activation.apply(*v));
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, input: &DVector<f64>) -> DVector<f64> {
        self.activations(input).pop().expect("at least one layer")
    }

    /// Output and the gradient of `upstream . output` with respect to every
    /// weight and bias.
    pub fn forward_backward(
        &self,
        input: &DVector<f64>,
        upstream: &DVector<f64>,
    ) -> (DVector<f64>, Vec<Dense>) {
        let acts = self.activations(input);
        let last = self.layers.len() - 1;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            if l < last {
                let y = &acts[l + 1];
                delta.zip_apply(y, |d, y| *d *= self.activation.derivative_from_output(y));
            }
            grads.push(Dense {
                weights: &delta * acts[l].transpose(),
                bias: delta.clone(),
            });
            if l > 0 {
                delta = self.layers[l].weights.tr_mul(&delta);
            }
        }
        grads.reverse();
        (acts[acts.len() - 1].clone(), grads)
    }

    /// `w <- w - rate * g` layer by layer.
    pub fn apply_gradient(&mut self, grads: &[Dense], rate: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            layer.weights -= &g.weights * rate;
            layer.bias.axpy(-rate, &g.bias, 1.0);
        }
    }
}

/// Zeroed gradient buffers shaped like `net`.
pub fn zero_grads(net: &Mlp) -> Vec<Dense> {
    net.layers
        .iter()
        .map(|l| Dense {
            weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
            bias: DVector::zeros(l.bias.len()),
        })
        .collect()
}

/// An MLP whose output is decoded as `[6D x J_kin | beta | camera code]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpRegressor {
    pub net: Mlp,
    /// Reference depth of the camera code, meters.
    pub z_ref: f64,
    pub num_kinematic_joints: usize,
    pub num_betas: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regressor {
    MeanPose,
    Mlp(MlpRegressor),
}

pub fn output_dim(num_kinematic_joints: usize, num_betas: usize) -> usize {
    6 * num_kinematic_joints + num_betas + 3
}

impl MlpRegressor {
    /// Hidden layers of the given widths; the output starts near the
    /// identity rotation at every joint, zero shape and depth `z_ref`.
    pub fn new(model: &BodyModel, hidden: &[usize], z_ref: f64, seed: u64) -> Result<Self, SpinError> {
        let j = model.num_kinematic_joints();
        let b = model.num_betas();
        let out = output_dim(j, b);
        let mut bias = DVector::zeros(out);
        for m in 0..j {
            for (c, v) in Rot6D::identity().0.iter().enumerate() {
                bias[6 * m + c] = *v;
            }
        }
        let mut widths = vec![3 * model.num_joints()];
        widths.extend_from_slice(hidden);
        widths.push(out);
        Ok(MlpRegressor {
            net: Mlp::new(&widths, Activation::Tanh, 0.01, bias, seed)?,
            z_ref,
            num_kinematic_joints: j,
            num_betas: b,
        })
    }
}

/// `(x, y, conf)` per keypoint with positions relative to the principal
/// point and divided by it, so that a crop maps to `[-1, 1]`. Unobserved
/// keypoints are zeroed.
pub fn encode_input(keypoints: &Keypoints2D, intrinsics: &Intrinsics) -> DVector<f64> {
    let [cx, cy] = intrinsics.principal_point;
    let mut v = DVector::zeros(3 * keypoints.len());
    for (i, (p, c)) in keypoints.points().iter().zip(keypoints.conf()).enumerate() {
        if *c > 0.0 {
            v[3 * i] = (p.x - cx) / cx;
            v[3 * i + 1] = (p.y - cy) / cy;
            v[3 * i + 2] = *c;
        }
    }
    v
}

/// Camera code `s` for a translation: `t = (s_x z c_x / f, s_y z c_y / f, z)`
/// with `z = z_ref exp(s_z)`.
pub fn encode_translation(t: &Vector3<f64>, intrinsics: &Intrinsics, z_ref: f64) -> Vector3<f64> {
    let f = intrinsics.focal;
    let [cx, cy] = intrinsics.principal_point;
    Vector3::new(t.x * f / (t.z * cx), t.y * f / (t.z * cy), (t.z / z_ref).ln())
}

pub fn decode_translation(s: &Vector3<f64>, intrinsics: &Intrinsics, z_ref: f64) -> Vector3<f64> {
    let f = intrinsics.focal;
    let [cx, cy] = intrinsics.principal_point;
    let z = z_ref * s.z.exp();
    Vector3::new(s.x * z * cx / f, s.y * z * cy / f, z)
}

/// `dt/ds` as a 3x3 matrix (columns are derivatives with respect to
/// `s_x, s_y, s_z`).
pub fn decode_translation_jacobian(s: &Vector3<f64>, intrinsics: &Intrinsics, z_ref: f64) -> Matrix3<f64> {
    let t = decode_translation(s, intrinsics, z_ref);
    let f = intrinsics.focal;
    let [cx, cy] = intrinsics.principal_point;
    Matrix3::new(t.z * cx / f, 0.0, t.x, 0.0, t.z * cy / f, t.y, 0.0, 0.0, t.z)
}

/// A decoded network output.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub rotations: Vec<RotationMatrix>,
    /// Shape clamped to the model bound.
    pub beta: DVector<f64>,
    pub camera_code: Vector3<f64>,
}

impl Decoded {
    pub fn params(&self) -> Result<ModelParams, SpinError> {
        let theta = self.rotations.iter().map(matrix_to_aa).collect();
        Ok(ModelParams::new(theta, self.beta.clone())?)
    }

    pub fn local_rotations(&self) -> Vec<Matrix3<f64>> {
        self.rotations.iter().map(|r| *r.matrix()).collect()
    }
}

pub fn decode_output(raw: &DVector<f64>, num_kin: usize, num_betas: usize) -> Result<Decoded, SpinError> {
    if raw.len() != output_dim(num_kin, num_betas) {
        return Err(SpinError::Mismatch {
            what: "regressor output",
            expected: output_dim(num_kin, num_betas),
            got: raw.len(),
        });
    }
    let rotations = (0..num_kin)
        .map(|m| rot6d_to_matrix(&Rot6D(std::array::from_fn(|c| raw[6 * m + c]))))
        .collect::<Result<Vec<_>, _>>()?;
    let off = 6 * num_kin;
    let beta = DVector::from_fn(num_betas, |b, _| raw[off + b].clamp(-BETA_BOUND, BETA_BOUND));
    let s = off + num_betas;
    Ok(Decoded {
        rotations,
        beta,
        camera_code: Vector3::new(raw[s], raw[s + 1], raw[s + 2]),
    })
}

impl Regressor {
    /// Raw network output; `None` for the mean pose.
    pub fn raw_output(&self, obs: &Observation) -> Option<DVector<f64>> {
        match self {
            Regressor::MeanPose => None,
            Regressor::Mlp(r) => Some(r.net.forward(&encode_input(&obs.keypoints, &obs.intrinsics))),
        }
    }
}

/// The regressed parameters and translation. The mean-pose regressor places
/// the zero pose with a similar-triangles translation.
pub fn regress(
    f: &Regressor,
    model: &BodyModel,
    obs: &Observation,
) -> Result<(ModelParams, Vector3<f64>), SpinError> {
    match f {
        Regressor::MeanPose => {
            let params = ModelParams::zeros(model);
            let t = translation_for(model, &params, &obs.keypoints, &obs.intrinsics)?;
            Ok((params, t))
        }
        Regressor::Mlp(r) => {
            let raw = f.raw_output(obs).expect("mlp output");
            let d = decode_output(&raw, r.num_kinematic_joints, r.num_betas)?;
            let t = decode_translation(&d.camera_code, &obs.intrinsics, r.z_ref);
            Ok((d.params()?, t))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd;
    use crate::rotations::orthonormality_error;
    use crate::toy::make_toy_model;
    use crate::ToySpec;
    use nalgebra::Vector2;

    fn net(act: Activation, seed: u64) -> Mlp {
        let mut m = Mlp::new(&[5, 7, 4], act, 1.0, DVector::zeros(4), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for l in &mut m.layers {
            l.bias = DVector::from_fn(l.bias.len(), |_, _| rng.random_range(-0.5..0.5));
        }
        m
    }

    fn flatten_params(m: &Mlp) -> DVector<f64> {
        DVector::from_iterator(
            m.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum(),
            m.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>()),
        )
    }

    fn set_params(m: &mut Mlp, p: &DVector<f64>) {
        let mut k = 0;
        for l in &mut m.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = p[k];
                k += 1;
            }
        }
    }

    #[test]
    fn zero_weights_give_bias() {
        let bias = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut m = Mlp::new(&[4, 6, 3], Activation::Tanh, 1.0, bias.clone(), 0).unwrap();
        for l in &mut m.layers {
            l.weights.fill(0.0);
        }
        assert_eq!(m.forward(&DVector::from_element(4, 0.3)), bias);
    }

    #[test]
    fn identity_activation_is_affine() {
        let m = net(Activation::Identity, 1);
        let a = DVector::from_vec(vec![0.1, -0.3, 0.2, 0.7, 0.0]);
        let b = DVector::from_vec(vec![-0.4, 0.5, 0.1, 0.2, 0.9]);
        let mix = &a * 0.3 + &b * 0.7;
        let lhs = m.forward(&mix);
        let rhs = m.forward(&a) * 0.3 + m.forward(&b) * 0.7;
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..50 {
            let m = net(Activation::Tanh, trial);
            let x = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let up = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let (_, grads) = m.forward_backward(&x, &up);
            let analytic = DVector::from_iterator(
                flatten_params(&m).len(),
                grads.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>()),
            );
            let p0 = flatten_params(&m);
            let numeric = fd::gradient(&p0, fd::STEP, |p| {
                let mut mm = m.clone();
                set_params(&mut mm, p);
                mm.forward(&x).dot(&up)
            });
            let err = fd::scaled_error(
                &DMatrix::from_column_slice(p0.len(), 1, analytic.as_slice()),
                &DMatrix::from_column_slice(p0.len(), 1, numeric.as_slice()),
                1e-3,
            );
            assert!(err < 1e-4, "error {err}");
        }
    }

    #[test]
    fn regressor_decodes_identity_at_init() {
        let model = make_toy_model(&ToySpec::default()).unwrap();
        let mut r = MlpRegressor::new(&model, &[16], 40.0, 0).unwrap();
        for l in &mut r.net.layers {
            l.weights.fill(0.0);
        }
        let k = model.num_joints();
        let obs = Observation {
            id: 0,
            keypoints: Keypoints2D::new(vec![Vector2::new(100.0, 120.0); k], vec![1.0; k]).unwrap(),
            intrinsics: Intrinsics::for_crop(5000.0, 256.0),
        };
        let (p, t) = regress(&Regressor::Mlp(r), &model, &obs).unwrap();
        assert_eq!(p, ModelParams::zeros(&model));
        assert!((t - Vector3::new(0.0, 0.0, 40.0)).norm() < 1e-12);
    }

    #[test]
    fn decoded_rotations_are_orthonormal() {
        let model = make_toy_model(&ToySpec::default()).unwrap();
        let r = MlpRegressor::new(&model, &[32], 40.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let input = DVector::from_fn(72, |_, _| rng.random_range(-1.0..1.0));
            let mut raw = r.net.forward(&input);
            raw.iter_mut().for_each(|v| *v += rng.random_range(-1.0..1.0));
            let d = decode_output(&raw, 24, 10).unwrap();
            assert!(d.rotations.iter().all(|m| orthonormality_error(m.matrix()) < 1e-9));
        }
    }

    #[test]
    fn mean_pose_regressor() {
        let model = make_toy_model(&ToySpec::default()).unwrap();
        let k = model.num_joints();
        let pts: Vec<_> = (0..k).map(|i| Vector2::new(100.0 + i as f64, 90.0 + 3.0 * i as f64)).collect();
        let obs = Observation {
            id: 1,
            keypoints: Keypoints2D::new(pts, vec![1.0; k]).unwrap(),
            intrinsics: Intrinsics::for_crop(5000.0, 256.0),
        };
        let (p, t) = regress(&Regressor::MeanPose, &model, &obs).unwrap();
        assert_eq!(p, ModelParams::zeros(&model));
        assert!(t.z > 0.0);
    }

    #[test]
    fn translation_code_round_trip() {
        let intr = Intrinsics::for_crop(5000.0, 256.0);
        let t = Vector3::new(0.1, -0.2, 44.0);
        let s = encode_translation(&t, &intr, 42.5);
        assert!((decode_translation(&s, &intr, 42.5) - t).norm() < 1e-12);
        let x = DVector::from_column_slice(s.as_slice());
        let num = fd::jacobian(&x, fd::STEP, |v| {
            DVector::from_column_slice(decode_translation(&Vector3::new(v[0], v[1], v[2]), &intr, 42.5).as_slice())
        });
        let a = decode_translation_jacobian(&s, &intr, 42.5);
        assert!(fd::scaled_error(&DMatrix::from_column_slice(3, 3, a.as_slice()), &num, 1e-3) < 1e-6);
    }
}
