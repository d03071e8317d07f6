//! Parametric body model: template mesh deformed by linear shape blendshapes,
//! posed by forward kinematics and linear blend skinning, with joints
//! regressed linearly from the posed vertices.
//!
//! Pose-dependent corrective blendshapes are not modelled.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3};
use thiserror::Error;

use crate::rotations::{aa_to_matrix, d_matrix_d_aa, AxisAngle};

/// Hard sanity bound on shape coefficients.
pub const BETA_BOUND: f64 = 5.0;

const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid body model: {0}")]
    InvalidModel(String),
    #[error("invalid toy model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

/// Raw model arrays, validated by [`BodyModel::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModelParts {
    pub template_vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    /// `3N x B`, row `3 * i + c` is coordinate `c` of vertex `i`.
    pub shape_dirs: DMatrix<f64>,
    /// `k x N`.
    pub joint_regressor: DMatrix<f64>,
    /// `J_kin x N`.
    pub rest_joint_regressor: DMatrix<f64>,
    /// `parents[0]` is `None`; every other entry points to an earlier joint.
    pub parents: Vec<Option<usize>>,
    /// `N x J_kin`.
    pub skin_weights: DMatrix<f64>,
    /// Labels of the `k` regressed joints.
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    parts: BodyModelParts,
    rest_joints_template: Vec<Vector3<f64>>,
    /// `3 J_kin x B`: derivative of the rest joints with respect to beta.
    rest_joints_shape: DMatrix<f64>,
    joint_points: PointSet,
}

fn check_stochastic(what: &str, m: &DMatrix<f64>) -> Result<(), ModelError> {
    for (r, row) in m.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ModelError::InvalidModel(format!(
                "{what} row {r} has negative or non-finite entries"
            )));
        }
        let s: f64 = row.sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(ModelError::InvalidModel(format!(
                "{what} row {r} sums to {s}"
            )));
        }
    }
    Ok(())
}

impl BodyModel {
    pub fn new(parts: BodyModelParts) -> Result<Self, ModelError> {
        let n = parts.template_vertices.len();
        let j_kin = parts.parents.len();
        let b = parts.shape_dirs.ncols();
        let k = parts.joint_regressor.nrows();
        if n < 4 || j_kin < 2 || b < 1 || k < 2 {
            return Err(ModelError::InvalidModel(format!(
                "sizes below minimum (N={n}, J={j_kin}, B={b}, k={k})"
            )));
        }
        check_dim("shape_dirs rows", 3 * n, parts.shape_dirs.nrows())?;
        check_dim("joint_regressor columns", n, parts.joint_regressor.ncols())?;
        check_dim("rest_joint_regressor rows", j_kin, parts.rest_joint_regressor.nrows())?;
        check_dim("rest_joint_regressor columns", n, parts.rest_joint_regressor.ncols())?;
        check_dim("skin_weights rows", n, parts.skin_weights.nrows())?;
        check_dim("skin_weights columns", j_kin, parts.skin_weights.ncols())?;
        check_dim("names", k, parts.names.len())?;
        if parts.template_vertices.iter().any(|v| v.iter().any(|c| !c.is_finite()))
            || parts.shape_dirs.iter().any(|c| !c.is_finite())
        {
            return Err(ModelError::InvalidModel("non-finite geometry".into()));
        }
        if parts.parents[0].is_some() {
            return Err(ModelError::InvalidModel("parents[0] must be the root".into()));
        }
        for (j, p) in parts.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => {
                    return Err(ModelError::InvalidModel(format!(
                        "joint {j} must have a parent with a smaller index"
                    )))
                }
            }
        }
        if let Some(f) = parts.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(ModelError::InvalidModel(format!("face {f:?} out of range")));
        }
        check_stochastic("joint_regressor", &parts.joint_regressor)?;
        check_stochastic("skin_weights", &parts.skin_weights)?;
        if parts
            .rest_joint_regressor
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(ModelError::InvalidModel(
                "rest_joint_regressor has non-finite entries".into(),
            ));
        }

        let template_flat = flatten(&parts.template_vertices);
        let rest_joints_template =
            unflatten(&regress_flat(&parts.rest_joint_regressor, &template_flat));
        let mut rest_joints_shape = DMatrix::zeros(3 * j_kin, b);
        for col in 0..b {
            let d = regress_flat(
                &parts.rest_joint_regressor,
                &parts.shape_dirs.column(col).into_owned(),
            );
            rest_joints_shape.set_column(col, &d);
        }
        let joint_points = PointSet::build(&parts, &parts.joint_regressor);
        Ok(BodyModel {
            parts,
            rest_joints_template,
            rest_joints_shape,
            joint_points,
        })
    }

    pub fn parts(&self) -> &BodyModelParts {
        &self.parts
    }

    pub fn num_vertices(&self) -> usize {
        self.parts.template_vertices.len()
    }

    pub fn num_kinematic_joints(&self) -> usize {
        self.parts.parents.len()
    }

    pub fn num_betas(&self) -> usize {
        self.parts.shape_dirs.ncols()
    }

    pub fn num_joints(&self) -> usize {
        self.parts.joint_regressor.nrows()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.parts.faces
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parts.parents
    }

    pub fn names(&self) -> &[String] {
        &self.parts.names
    }

    pub fn template_vertices(&self) -> &[Vector3<f64>] {
        &self.parts.template_vertices
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.parts.names.iter().position(|n| n == name)
    }

    pub fn joint_points(&self) -> &PointSet {
        &self.joint_points
    }

    /// Point set whose points are the skinned vertices themselves.
    pub fn vertex_points(&self) -> PointSet {
        PointSet::build_vertices(&self.parts)
    }

    /// Rest-pose kinematic joints of the shaped model.
    pub fn rest_joints(&self, beta: &DVector<f64>) -> Vec<Vector3<f64>> {
        let flat = flatten(&self.rest_joints_template) + &self.rest_joints_shape * beta;
        unflatten(&flat)
    }

    fn check_params(&self, rotations: usize, beta: usize) -> Result<(), ModelError> {
        check_dim("pose rotations", self.num_kinematic_joints(), rotations)?;
        check_dim("shape coefficients", self.num_betas(), beta)
    }
}

pub(crate) fn flatten(points: &[Vector3<f64>]) -> DVector<f64> {
    DVector::from_iterator(points.len() * 3, points.iter().flat_map(|p| p.iter().copied()))
}

pub(crate) fn unflatten(flat: &DVector<f64>) -> Vec<Vector3<f64>> {
    flat.as_slice()
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect()
}

/// `regressor (r x N)` applied to flattened points `(3N)`, giving `3r`.
fn regress_flat(regressor: &DMatrix<f64>, flat: &DVector<f64>) -> DVector<f64> {
    let n = regressor.ncols();
    let pts = DMatrix::from_row_slice(n, 3, flat.as_slice());
    let out = regressor * pts;
    DVector::from_iterator(out.nrows() * 3, out.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}

/// Pose and shape parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    theta: Vec<AxisAngle>,
    beta: DVector<f64>,
}

impl ModelParams {
    /// Validates finiteness and `|beta_i| <= 5`.
    pub fn new(theta: Vec<AxisAngle>, beta: DVector<f64>) -> Result<Self, ModelError> {
        if theta.iter().any(|r| r.0.iter().any(|v| !v.is_finite())) {
            return Err(ModelError::InvalidParams("non-finite pose".into()));
        }
        if let Some(b) = beta.iter().find(|b| !b.is_finite() || b.abs() > BETA_BOUND) {
            return Err(ModelError::InvalidParams(format!(
                "shape coefficient {b} outside [-{BETA_BOUND}, {BETA_BOUND}]"
            )));
        }
        Ok(ModelParams { theta, beta })
    }

    pub fn zeros(model: &BodyModel) -> Self {
        ModelParams {
            theta: vec![AxisAngle::zero(); model.num_kinematic_joints()],
            beta: DVector::zeros(model.num_betas()),
        }
    }

    pub fn theta(&self) -> &[AxisAngle] {
        &self.theta
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn rotations(&self) -> Vec<Matrix3<f64>> {
        self.theta.iter().map(|r| aa_to_matrix(r).into_inner()).collect()
    }

    /// Pose as a flat `3 J_kin` vector.
    pub fn theta_flat(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.theta.len() * 3,
            self.theta.iter().flat_map(|r| r.0.iter().copied()),
        )
    }
}

/// Posed vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
}

/// Regressed 3D joints, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Joints3D(pub Vec<Vector3<f64>>);

impl Joints3D {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn translated(&self, t: &Vector3<f64>) -> Joints3D {
        Joints3D(self.0.iter().map(|p| p + t).collect())
    }
}

/// Forward kinematics state for one set of local rotations and shape.
#[derive(Debug, Clone)]
pub struct Posed {
    rest_joints: Vec<Vector3<f64>>,
    /// Per-joint `3 x B` derivative of the rest joints.
    rest_joints_shape: Vec<Matrix3xX<f64>>,
    global_rot: Vec<Matrix3<f64>>,
    global_pos: Vec<Vector3<f64>>,
    /// Per-joint `3 x B` derivative of the posed joint positions.
    global_pos_shape: Vec<Matrix3xX<f64>>,
    beta: DVector<f64>,
    local_rot: Vec<Matrix3<f64>>,
}

impl Posed {
    pub fn new(
        model: &BodyModel,
        rotations: &[Matrix3<f64>],
        beta: &DVector<f64>,
    ) -> Result<Self, ModelError> {
        model.check_params(rotations.len(), beta.len())?;
        let j_kin = model.num_kinematic_joints();
        let b = model.num_betas();
        let rest_joints = model.rest_joints(beta);
        let rest_joints_shape: Vec<Matrix3xX<f64>> = (0..j_kin)
            .map(|j| Matrix3xX::from_fn(b, |c, col| model.rest_joints_shape[(3 * j + c, col)]))
            .collect();
        let mut global_rot = Vec::with_capacity(j_kin);
        let mut global_pos = Vec::with_capacity(j_kin);
        let mut global_pos_shape: Vec<Matrix3xX<f64>> = Vec::with_capacity(j_kin);
        for j in 0..j_kin {
            match model.parts.parents[j] {
                None => {
                    global_rot.push(rotations[j]);
                    global_pos.push(rest_joints[j]);
                    global_pos_shape.push(rest_joints_shape[j].clone());
                }
                Some(p) => {
                    let rp: Matrix3<f64> = global_rot[p];
                    global_rot.push(rp * rotations[j]);
                    global_pos.push(global_pos[p] + rp * (rest_joints[j] - rest_joints[p]));
                    let d = &global_pos_shape[p]
                        + rp * (&rest_joints_shape[j] - &rest_joints_shape[p]);
                    global_pos_shape.push(d);
                }
            }
        }
        Ok(Posed {
            rest_joints,
            rest_joints_shape,
            global_rot,
            global_pos,
            global_pos_shape,
            beta: beta.clone(),
            local_rot: rotations.to_vec(),
        })
    }

    pub fn from_params(model: &BodyModel, params: &ModelParams) -> Result<Self, ModelError> {
        Posed::new(model, &params.rotations(), &params.beta)
    }

    pub fn rest_joints(&self) -> &[Vector3<f64>] {
        &self.rest_joints
    }

    pub fn global_rotations(&self) -> &[Matrix3<f64>] {
        &self.global_rot
    }

    /// Kinematic joint positions after posing.
    pub fn joint_positions(&self) -> &[Vector3<f64>] {
        &self.global_pos
    }

    pub fn local_rotations(&self) -> &[Matrix3<f64>] {
        &self.local_rot
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PointEntry {
    joint: usize,
    weight: f64,
    /// Weighted rest position at beta = 0.
    p0: Vector3<f64>,
    /// `3 x B` derivative of the weighted rest position.
    dp: Matrix3xX<f64>,
}

/// A set of output points, each a fixed linear combination of skinned
/// vertices, reduced to per-joint aggregates so that evaluation and
/// differentiation cost `O(points x joints)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<Vec<PointEntry>>,
    parents: Vec<Option<usize>>,
}

/// Derivatives of a point set with respect to axis-angle pose `(3P x 3J)`
/// and shape `(3P x B)`.
#[derive(Debug, Clone)]
pub struct PointJacobian {
    pub d_theta: DMatrix<f64>,
    pub d_beta: DMatrix<f64>,
}

impl PointSet {
    fn build(parts: &BodyModelParts, weights: &DMatrix<f64>) -> Self {
        let j_kin = parts.parents.len();
        let b = parts.shape_dirs.ncols();
        let points = weights
            .row_iter()
            .map(|row| {
                let mut entries: Vec<PointEntry> = (0..j_kin)
                    .map(|joint| PointEntry {
                        joint,
                        weight: 0.0,
                        p0: Vector3::zeros(),
                        dp: Matrix3xX::zeros(b),
                    })
                    .collect();
                for (i, &a) in row.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (joint, entry) in entries.iter_mut().enumerate() {
                        let w = a * parts.skin_weights[(i, joint)];
                        if w == 0.0 {
                            continue;
                        }
                        entry.weight += w;
                        entry.p0 += parts.template_vertices[i] * w;
                        for col in 0..b {
                            for c in 0..3 {
                                entry.dp[(c, col)] += w * parts.shape_dirs[(3 * i + c, col)];
                            }
                        }
                    }
                }
                entries.retain(|e| e.weight != 0.0);
                entries
            })
            .collect();
        PointSet {
            points,
            parents: parts.parents.clone(),
        }
    }

    fn build_vertices(parts: &BodyModelParts) -> Self {
        let b = parts.shape_dirs.ncols();
        let points = parts
            .template_vertices
            .iter()
            .enumerate()
            .map(|(i, v)| {
                parts
                    .skin_weights
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(joint, &w)| PointEntry {
                        joint,
                        weight: w,
                        p0: v * w,
                        dp: Matrix3xX::from_fn(b, |c, col| w * parts.shape_dirs[(3 * i + c, col)]),
                    })
                    .collect()
            })
            .collect();
        PointSet {
            points,
            parents: parts.parents.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// World-frame contribution of each entry: `R_j (p - c J_j) + c T_j`.
    fn contribution(e: &PointEntry, posed: &Posed) -> Vector3<f64> {
        let j = e.joint;
        let p = e.p0 + &e.dp * &posed.beta;
        posed.global_rot[j] * (p - posed.rest_joints[j] * e.weight) + posed.global_pos[j] * e.weight
    }

    pub fn evaluate(&self, posed: &Posed) -> Vec<Vector3<f64>> {
        self.points
            .iter()
            .map(|entries| {
                entries
                    .iter()
                    .fold(Vector3::zeros(), |acc, e| acc + Self::contribution(e, posed))
            })
            .collect()
    }

    /// Subtree-accumulated world contributions and weights, expressed in the
    /// local frame of each joint: `Y_m = R_m^T (Z_m - C_m T_m)`.
    fn subtree_local(&self, entries: &[PointEntry], posed: &Posed) -> Vec<Vector3<f64>> {
        let j_kin = self.parents.len();
        let mut z = vec![Vector3::zeros(); j_kin];
        let mut c = vec![0.0; j_kin];
        for e in entries {
            z[e.joint] += Self::contribution(e, posed);
            c[e.joint] += e.weight;
        }
        for j in (1..j_kin).rev() {
            if let Some(p) = self.parents[j] {
                let zj = z[j];
                z[p] += zj;
                c[p] += c[j];
            }
        }
        (0..j_kin)
            .map(|m| posed.global_rot[m].transpose() * (z[m] - posed.global_pos[m] * c[m]))
            .collect()
    }

    fn parent_rot(&self, posed: &Posed, m: usize) -> Matrix3<f64> {
        match self.parents[m] {
            Some(p) => posed.global_rot[p],
            None => Matrix3::identity(),
        }
    }

    fn shape_jacobian_point(&self, entries: &[PointEntry], posed: &Posed) -> Matrix3xX<f64> {
        let b = posed.beta.len();
        let mut out = Matrix3xX::zeros(b);
        for e in entries {
            let j = e.joint;
            out += posed.global_rot[j] * (&e.dp - &posed.rest_joints_shape[j] * e.weight)
                + &posed.global_pos_shape[j] * e.weight;
        }
        out
    }

    /// Derivatives with respect to the local rotation *matrices*: for point
    /// `k` and joint `m`, a `3 x 9` block (row-major matrix entries).
    pub fn jacobian_rotations(&self, posed: &Posed) -> DMatrix<f64> {
        let j_kin = self.parents.len();
        let mut jac = DMatrix::zeros(3 * self.len(), 9 * j_kin);
        for (k, entries) in self.points.iter().enumerate() {
            let y = self.subtree_local(entries, posed);
            for m in 0..j_kin {
                let rp = self.parent_rot(posed, m);
                for a in 0..3 {
                    for b in 0..3 {
                        let col = rp.column(a) * y[m][b];
                        for r in 0..3 {
                            jac[(3 * k + r, 9 * m + 3 * a + b)] = col[r];
                        }
                    }
                }
            }
        }
        jac
    }

    /// Derivatives with respect to axis-angle pose and shape.
    pub fn jacobian(&self, posed: &Posed, theta: &[AxisAngle]) -> PointJacobian {
        let j_kin = self.parents.len();
        let b = posed.beta.len();
        // dR_m/dtheta_{m,c} premultiplied by the parent rotation.
        let blocks: Vec<[Matrix3<f64>; 3]> = (0..j_kin)
            .map(|m| {
                let d = d_matrix_d_aa(&theta[m]);
                let rp = self.parent_rot(posed, m);
                std::array::from_fn(|c| {
                    rp * Matrix3::from_fn(|i, j| d[(3 * i + j, c)])
                })
            })
            .collect();
        let mut d_theta = DMatrix::zeros(3 * self.len(), 3 * j_kin);
        let mut d_beta = DMatrix::zeros(3 * self.len(), b);
        for (k, entries) in self.points.iter().enumerate() {
            let y = self.subtree_local(entries, posed);
            for m in 0..j_kin {
                for (c, block) in blocks[m].iter().enumerate() {
                    let col = block * y[m];
                    for r in 0..3 {
                        d_theta[(3 * k + r, 3 * m + c)] = col[r];
                    }
                }
            }
            let s = self.shape_jacobian_point(entries, posed);
            for col in 0..b {
                for r in 0..3 {
                    d_beta[(3 * k + r, col)] = s[(r, col)];
                }
            }
        }
        PointJacobian { d_theta, d_beta }
    }

    /// Vector-Jacobian product: given `dL/dpoint_k`, returns `dL/dR_m` for
    /// each local rotation matrix and `dL/dbeta`.
    pub fn vjp(
        &self,
        posed: &Posed,
        upstream: &[Vector3<f64>],
    ) -> (Vec<Matrix3<f64>>, DVector<f64>) {
        assert_eq!(upstream.len(), self.len());
        let j_kin = self.parents.len();
        let mut acc = vec![Matrix3::zeros(); j_kin];
        let mut d_beta = DVector::zeros(posed.beta.len());
        for (entries, g) in self.points.iter().zip(upstream) {
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let y = self.subtree_local(entries, posed);
            for m in 0..j_kin {
                acc[m] += g * y[m].transpose();
            }
            d_beta += self.shape_jacobian_point(entries, posed).transpose() * g;
        }
        let d_rot = (0..j_kin)
            .map(|m| self.parent_rot(posed, m).transpose() * acc[m])
            .collect();
        (d_rot, d_beta)
    }
}

/// Direct evaluation of the model: blendshapes, forward kinematics, skinning,
/// then joint regression from the posed vertices.
pub fn forward(model: &BodyModel, params: &ModelParams) -> Result<(Mesh, Joints3D), ModelError> {
    forward_rotations(model, &params.rotations(), &params.beta)
}

/// [`forward`] with the pose given as local rotation matrices.
pub fn forward_rotations(
    model: &BodyModel,
    rotations: &[Matrix3<f64>],
    beta: &DVector<f64>,
) -> Result<(Mesh, Joints3D), ModelError> {
    model.check_params(rotations.len(), beta.len())?;
    let parts = &model.parts;
    let shaped = unflatten(&(flatten(&parts.template_vertices) + &parts.shape_dirs * beta));
    let rest = unflatten(&regress_flat(&parts.rest_joint_regressor, &flatten(&shaped)));
    let j_kin = parts.parents.len();
    let mut g_rot: Vec<Matrix3<f64>> = Vec::with_capacity(j_kin);
    let mut g_pos: Vec<Vector3<f64>> = Vec::with_capacity(j_kin);
    for j in 0..j_kin {
        match parts.parents[j] {
            None => {
                g_rot.push(rotations[j]);
                g_pos.push(rest[j]);
            }
            Some(p) => {
                g_rot.push(g_rot[p] * rotations[j]);
                g_pos.push(g_pos[p] + g_rot[p] * (rest[j] - rest[p]));
            }
        }
    }
    let vertices: Vec<Vector3<f64>> = shaped
        .iter()
        .enumerate()
        .map(|(i, v)| {
            (0..j_kin).fold(Vector3::zeros(), |acc, j| {
                let w = parts.skin_weights[(i, j)];
                if w == 0.0 {
                    acc
                } else {
                    acc + (g_rot[j] * (v - rest[j]) + g_pos[j]) * w
                }
            })
        })
        .collect();
    let mesh = Mesh { vertices };
    let joints = regress_joints(model, &mesh)?;
    Ok((mesh, joints))
}

/// `W * vertices`.
pub fn regress_joints(model: &BodyModel, mesh: &Mesh) -> Result<Joints3D, ModelError> {
    check_dim("mesh vertices", model.num_vertices(), mesh.vertices.len())?;
    Ok(Joints3D(unflatten(&regress_flat(
        &model.parts.joint_regressor,
        &flatten(&mesh.vertices),
    ))))
}

/// Regressed joints through the aggregated point set (the fast path used by
/// the fitter).
pub fn forward_joints(model: &BodyModel, posed: &Posed) -> Joints3D {
    Joints3D(model.joint_points.evaluate(posed))
}

/// Derivatives of the regressed joints: `(3k x 3J_kin, 3k x B)`.
pub fn forward_jacobian(
    model: &BodyModel,
    params: &ModelParams,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ModelError> {
    let posed = Posed::from_params(model, params)?;
    let jac = model.joint_points.jacobian(&posed, &params.theta);
    Ok((jac.d_theta, jac.d_beta))
}

/// Size and seed of a synthetic stand-in body model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ToySpec {
    pub n_segments: usize,
    pub verts_per_segment: usize,
    pub num_betas: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            n_segments: 24,
            verts_per_segment: 16,
            num_betas: 10,
            seed: 0,
        }
    }
}

pub use crate::toy::make_toy_model;
