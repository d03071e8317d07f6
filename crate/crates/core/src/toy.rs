//! Synthetic stand-in body model built from capsule-like segments.
//!
//! Coordinates follow the camera convention: `+y` points down (the body is
//! upright with the head at negative `y`), the body faces `-z`, and the
//! person's left side is at `+x`.

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::body_model::{BodyModel, BodyModelParts, ModelError, ToySpec};

const RING: usize = 4;

/// Names of the 24-joint humanoid tree.
pub const HUMANOID_NAMES: [&str; 24] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

const HUMANOID_PARENTS: [usize; 24] = [
    0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

const HUMANOID_JOINTS: [[f64; 3]; 24] = [
    [0.0, 0.0, 0.0],
    [0.09, 0.08, 0.0],
    [-0.09, 0.08, 0.0],
    [0.0, -0.11, 0.0],
    [0.10, 0.46, 0.0],
    [-0.10, 0.46, 0.0],
    [0.0, -0.24, 0.0],
    [0.10, 0.86, 0.0],
    [-0.10, 0.86, 0.0],
    [0.0, -0.36, 0.0],
    [0.10, 0.92, -0.12],
    [-0.10, 0.92, -0.12],
    [0.0, -0.52, 0.0],
    [0.07, -0.44, 0.0],
    [-0.07, -0.44, 0.0],
    [0.0, -0.62, 0.0],
    [0.17, -0.47, 0.0],
    [-0.17, -0.47, 0.0],
    [0.43, -0.47, 0.0],
    [-0.43, -0.47, 0.0],
    [0.68, -0.47, 0.0],
    [-0.68, -0.47, 0.0],
    [0.76, -0.47, 0.0],
    [-0.76, -0.47, 0.0],
];

const HUMANOID_RADII: [f64; 24] = [
    0.12, 0.07, 0.07, 0.12, 0.05, 0.05, 0.13, 0.04, 0.04, 0.11, 0.03, 0.03, 0.05, 0.05, 0.05,
    0.09, 0.045, 0.045, 0.035, 0.035, 0.03, 0.03, 0.02, 0.02,
];

struct Skeleton {
    parents: Vec<Option<usize>>,
    joints: Vec<Vector3<f64>>,
    radii: Vec<f64>,
    names: Vec<String>,
}

fn humanoid() -> Skeleton {
    Skeleton {
        parents: HUMANOID_PARENTS
            .iter()
            .enumerate()
            .map(|(j, &p)| if j == 0 { None } else { Some(p) })
            .collect(),
        joints: HUMANOID_JOINTS
            .iter()
            .map(|p| Vector3::new(p[0], p[1], p[2]))
            .collect(),
        radii: HUMANOID_RADII.to_vec(),
        names: HUMANOID_NAMES.iter().map(|s| s.to_string()).collect(),
    }
}

fn random_tree(n: usize, rng: &mut ChaCha8Rng) -> Skeleton {
    let mut parents = vec![None];
    let mut joints = vec![Vector3::zeros()];
    for j in 1..n {
        let p = rng.random_range(j.saturating_sub(3)..j);
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let len = rng.random_range(0.15..0.3);
        parents.push(Some(p));
        joints.push(joints[p] + dir * len);
    }
    Skeleton {
        parents,
        joints,
        radii: (0..n).map(|_| rng.random_range(0.03..0.08)).collect(),
        names: (0..n).map(|j| format!("joint_{j}")).collect(),
    }
}

fn perpendicular_frame(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if axis.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = axis.cross(&helper).normalize();
    let w = axis.cross(&u).normalize();
    (u, w)
}

/// Builds a deterministic toy model. With `n_segments = 24` the kinematic
/// tree is humanoid; other sizes get a seeded random tree.
pub fn make_toy_model(spec: &ToySpec) -> Result<BodyModel, ModelError> {
    if spec.n_segments < 2 {
        return Err(ModelError::InvalidSpec("n_segments must be >= 2".into()));
    }
    if spec.verts_per_segment < 2 * RING || !spec.verts_per_segment.is_multiple_of(RING) {
        return Err(ModelError::InvalidSpec(format!(
            "verts_per_segment must be a multiple of {RING} and >= {}",
            2 * RING
        )));
    }
    if spec.num_betas < 1 {
        return Err(ModelError::InvalidSpec("num_betas must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let skel = if spec.n_segments == 24 {
        humanoid()
    } else {
        random_tree(spec.n_segments, &mut rng)
    };
    let j_kin = skel.parents.len();
    let rings = spec.verts_per_segment / RING;
    let n = j_kin * spec.verts_per_segment;
    let b = spec.num_betas;

    let first_child: Vec<Option<usize>> = (0..j_kin)
        .map(|j| skel.parents.iter().position(|p| *p == Some(j)))
        .collect();
    let segment_end: Vec<Vector3<f64>> = (0..j_kin)
        .map(|j| match (first_child[j], skel.parents[j]) {
            (Some(c), _) => skel.joints[c],
            (None, Some(p)) => {
                let dir = (skel.joints[j] - skel.joints[p]).normalize();
                let stub = if skel.names[j] == "head" { 0.2 } else { 0.1 };
                skel.joints[j] + dir * stub
            }
            (None, None) => skel.joints[j] + Vector3::new(0.0, -0.1, 0.0),
        })
        .collect();

    // Shape basis: per-joint displacements and per-segment girth changes.
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut joint_shift = vec![vec![Vector3::zeros(); j_kin]; b];
    let mut girth = vec![vec![0.0; j_kin]; b];
    for (col, (shift, g)) in joint_shift.iter_mut().zip(girth.iter_mut()).enumerate() {
        let scale = 0.02 / (1.0 + col as f64).sqrt();
        for j in 0..j_kin {
            shift[j] = if col == 0 {
                (skel.joints[j] - skel.joints[0]) * 0.06
            } else {
                Vector3::new(
                    unit.sample(&mut rng),
                    unit.sample(&mut rng),
                    unit.sample(&mut rng),
                ) * scale
            };
            g[j] = unit.sample(&mut rng) * 0.008;
        }
    }

    let mut template = Vec::with_capacity(n);
    let mut faces = Vec::new();
    let mut shape_dirs = DMatrix::zeros(3 * n, b);
    let mut skin = DMatrix::zeros(n, j_kin);
    let mut regressor = DMatrix::zeros(j_kin, n);

    for j in 0..j_kin {
        let start = skel.joints[j];
        let axis_vec = segment_end[j] - start;
        let axis = axis_vec.normalize();
        let (u, w) = perpendicular_frame(&axis);
        let radius = skel.radii[j] * rng.random_range(0.9..1.1);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let base = template.len();
        let end_joint = first_child[j].unwrap_or(j);
        for r in 0..rings {
            let t = r as f64 / rings as f64;
            let center = start + axis_vec * t;
            for s in 0..RING {
                let angle = phase + std::f64::consts::TAU * s as f64 / RING as f64;
                let radial = u * angle.cos() + w * angle.sin();
                let idx = template.len();
                template.push(center + radial * radius);
                for col in 0..b {
                    let d = joint_shift[col][j] * (1.0 - t)
                        + joint_shift[col][end_joint] * t
                        + radial * girth[col][j];
                    for c in 0..3 {
                        shape_dirs[(3 * idx + c, col)] = d[c];
                    }
                }
                let mut own = 1.0;
                if let (Some(p), true) = (skel.parents[j], t < 0.3) {
                    let wp = 0.5 * (1.0 - t / 0.3);
                    skin[(idx, p)] += wp;
                    own -= wp;
                }
                if let (Some(c), true) = (first_child[j], t > 0.7) {
                    let wc = 0.5 * (t - 0.7) / 0.3;
                    skin[(idx, c)] += wc;
                    own -= wc;
                }
                skin[(idx, j)] += own;
                if r == 0 {
                    regressor[(j, idx)] = 1.0 / RING as f64;
                }
            }
        }
        for r in 0..rings - 1 {
            for s in 0..RING {
                let a = base + r * RING + s;
                let b2 = base + r * RING + (s + 1) % RING;
                let c = a + RING;
                let d = b2 + RING;
                faces.push([a, b2, d]);
                faces.push([a, d, c]);
            }
        }
    }

    BodyModel::new(BodyModelParts {
        template_vertices: template,
        faces,
        shape_dirs,
        joint_regressor: regressor.clone(),
        rest_joint_regressor: regressor,
        parents: skel.parents,
        skin_weights: skin,
        names: skel.names,
    })
}
