//! Rotation representations: axis-angle (the model's native pose encoding),
//! rotation matrices, and the continuous 6D encoding produced by the regressor.
//!
//! Flattened matrix Jacobians use row-major order: row `3 * i + j` of a
//! `9 x n` Jacobian is the derivative of `R[(i, j)]`.

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3};
use thiserror::Error;

/// Below this angle, Rodrigues coefficients and their derivatives switch to
/// Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-7;

/// Tolerance used when validating orthonormality and determinant.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

const DEGENERATE_6D: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotationError {
    #[error("matrix is not a rotation (orthonormality error {ortho:.3e}, det {det:.12})")]
    NotARotation { ortho: f64, det: f64 },
    #[error("6D rotation encoding is degenerate (zero or parallel columns)")]
    Degenerate6D,
    #[error("non-finite rotation component")]
    NonFinite,
}

/// Rotation vector: direction is the axis, norm is the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn zero() -> Self {
        AxisAngle(Vector3::zeros())
    }

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Equivalent rotation vector with angle in `[0, pi]`. At exactly `pi` the
    /// axis is flipped so that its first nonzero component is positive.
    pub fn canonical(&self) -> Self {
        matrix_to_aa(&aa_to_matrix(self))
    }
}

/// A validated 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Validates `m^T m = I` and `det m = 1` within [`ORTHONORMAL_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<Self, RotationError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(RotationError::NonFinite);
        }
        let ortho = orthonormality_error(&m);
        let det = m.determinant();
        if ortho > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(RotationError::NotARotation { ortho, det });
        }
        Ok(RotationMatrix(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }
}

/// Max-abs entry of `m^T m - I`.
pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).abs().max()
}

/// Two stacked 3-vectors: the first two columns of a rotation matrix, up to
/// scale and non-orthogonality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub fn identity() -> Self {
        Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    }

    fn columns(&self) -> (Vector3<f64>, Vector3<f64>) {
        let a = &self.0;
        (
            Vector3::new(a[0], a[1], a[2]),
            Vector3::new(a[3], a[4], a[5]),
        )
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Flattens a 3x3 matrix into the row-major 9-vector layout used by Jacobians.
pub fn flatten_row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = m[(i, j)];
        }
    }
    out
}

/// Rodrigues coefficients `A = sin(t)/t`, `B = (1 - cos(t))/t^2` and the
/// radial derivatives `A'(t)/t`, `B'(t)/t`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0,
            0.5 - t2 / 24.0,
            -1.0 / 3.0 + t2 / 30.0,
            -1.0 / 12.0 + t2 / 180.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (
            s / theta,
            (1.0 - c) / t2,
            (theta * c - s) / (t2 * theta),
            (theta * s - 2.0 * (1.0 - c)) / (t2 * t2),
        )
    }
}

pub fn aa_to_matrix(r: &AxisAngle) -> RotationMatrix {
    let v = r.0;
    let (a, b, _, _) = rodrigues_coefficients(v.norm());
    let k = skew(&v);
    RotationMatrix(Matrix3::identity() + k * a + k * k * b)
}

/// Inverse of [`aa_to_matrix`], returning the canonical rotation vector.
pub fn matrix_to_aa(rot: &RotationMatrix) -> AxisAngle {
    let q = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(
        rot.0,
    ));
    let q = q.into_inner();
    let (mut w, mut v) = (q.w, q.imag());
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let n = v.norm();
    if n == 0.0 {
        return AxisAngle::zero();
    }
    let angle = 2.0 * n.atan2(w);
    let mut aa = v * (angle / n);
    if w < 1e-12 {
        // Half-turn: both signs describe the same rotation.
        let first = aa.iter().copied().find(|c| c.abs() > 1e-12).unwrap_or(0.0);
        if first < 0.0 {
            aa = -aa;
        }
    }
    AxisAngle(aa)
}

/// Gram-Schmidt decoding of the 6D encoding.
pub fn rot6d_to_matrix(a: &Rot6D) -> Result<RotationMatrix, RotationError> {
    let frame = GramSchmidt::new(a)?;
    Ok(RotationMatrix(Matrix3::from_columns(&[
        frame.b1, frame.b2, frame.b3,
    ])))
}

pub fn matrix_to_rot6d(rot: &RotationMatrix) -> Rot6D {
    let m = &rot.0;
    Rot6D([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ])
}

/// Derivative of `aa_to_matrix` with respect to the rotation vector, 9x3.
pub fn d_matrix_d_aa(r: &AxisAngle) -> SMatrix<f64, 9, 3> {
    let v = r.0;
    let (a, b, da, db) = rodrigues_coefficients(v.norm());
    let k = skew(&v);
    let k2 = k * k;
    let mut jac = SMatrix::<f64, 9, 3>::zeros();
    for c in 0..3 {
        let e = skew(&Vector3::ith(c, 1.0));
        let d = k * (da * v[c]) + e * a + k2 * (db * v[c]) + (e * k + k * e) * b;
        for (row, val) in flatten_row_major(&d).iter().enumerate() {
            jac[(row, c)] = *val;
        }
    }
    jac
}

/// Derivative of `rot6d_to_matrix` with respect to the six inputs, 9x6.
pub fn d_matrix_d_rot6d(a: &Rot6D) -> Result<SMatrix<f64, 9, 6>, RotationError> {
    let f = GramSchmidt::new(a)?;
    let eye = Matrix3::identity();
    // db1/da1
    let db1_da1 = (eye - f.b1 * f.b1.transpose()) / f.n1;
    // u = a2 - b1 (b1 . a2)
    let du_db1 = -(eye * f.b1.dot(&f.a2) + f.b1 * f.a2.transpose());
    let du_da2 = eye - f.b1 * f.b1.transpose();
    let db2_du = (eye - f.b2 * f.b2.transpose()) / f.nu;
    let db2_da1 = db2_du * du_db1 * db1_da1;
    let db2_da2 = db2_du * du_da2;
    // b3 = b1 x b2
    let db3_da1 = -skew(&f.b2) * db1_da1 + skew(&f.b1) * db2_da1;
    let db3_da2 = skew(&f.b1) * db2_da2;

    let zero = Matrix3::zeros();
    let blocks: [[&Matrix3<f64>; 2]; 3] = [
        [&db1_da1, &zero],
        [&db2_da1, &db2_da2],
        [&db3_da1, &db3_da2],
    ];
    let mut jac = SMatrix::<f64, 9, 6>::zeros();
    // R[(i, col)] = b_col[i]
    for (col, pair) in blocks.iter().enumerate() {
        for i in 0..3 {
            let row = 3 * i + col;
            for (half, block) in pair.iter().enumerate() {
                for c in 0..3 {
                    jac[(row, 3 * half + c)] = block[(i, c)];
                }
            }
        }
    }
    Ok(jac)
}

struct GramSchmidt {
    a2: Vector3<f64>,
    n1: f64,
    nu: f64,
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    b3: Vector3<f64>,
}

impl GramSchmidt {
    fn new(a: &Rot6D) -> Result<Self, RotationError> {
        if a.0.iter().any(|v| !v.is_finite()) {
            return Err(RotationError::NonFinite);
        }
        let (a1, a2) = a.columns();
        let n1 = a1.norm();
        let n2 = a2.norm();
        if n1 < DEGENERATE_6D || n2 < DEGENERATE_6D {
            return Err(RotationError::Degenerate6D);
        }
        let b1 = a1 / n1;
        let u = a2 - b1 * b1.dot(&a2);
        let nu = u.norm();
        if nu < DEGENERATE_6D * n2.max(1.0) {
            return Err(RotationError::Degenerate6D);
        }
        let b2 = u / nu;
        let b3 = b1.cross(&b2);
        Ok(GramSchmidt {
            a2,
            n1,
            nu,
            b1,
            b2,
            b3,
        })
    }
}
