//! Text file formats.
//!
//! Every artifact is JSON. Whole-document files (model, prior, regressor,
//! config) put one top-level key per line; record files (dataset,
//! dictionary, traces, epoch logs) hold one compact JSON object per line.
//! Floats are written with 17 significant digits, so every file reloads to
//! bit-identical values.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter};
use serde_json::Value;
use thiserror::Error;

use crate::body_model::{BodyModel, BodyModelParts, Mesh, ModelError, ModelParams};
use crate::camera::{CameraError, Intrinsics, Keypoints2D};
use crate::priors::{AnglePriorConfig, AngleTerm, GmmPosePrior, PriorError, Priors};
use crate::rotations::AxisAngle;
use crate::spin_loop::{
    Activation, Dense, Dictionary, DictionaryEntry, GroundTruth, Mlp, MlpRegressor,
    Observation, SyntheticDataset,
};

pub const MODEL_VERSION: &str = "bodymodel/1";
pub const PRIOR_VERSION: &str = "gmmprior/1";
pub const DATASET_VERSION: &str = "spindata/1";
pub const DICTIONARY_VERSION: &str = "spindict/1";
pub const REGRESSOR_VERSION: &str = "regressor/1";
pub const CONFIG_VERSION: &str = "spinconfig/1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected version \"{expected}\", found \"{found}\"")]
    Version {
        expected: &'static str,
        found: String,
    },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

fn format_err(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<String, IoError> {
    let p = path.as_ref();
    std::fs::read_to_string(p).map_err(|source| IoError::File {
        path: p.display().to_string(),
        source,
    })
}

pub fn write_file(path: impl AsRef<std::path::Path>, text: &str) -> Result<(), IoError> {
    let p = path.as_ref();
    std::fs::write(p, text).map_err(|source| IoError::File {
        path: p.display().to_string(),
        source,
    })
}

/// Compact JSON with floats as `{:.16e}`; at `top_level_lines` each key of
/// the outermost object starts a new line.
struct Sig17 {
    inner: CompactFormatter,
    depth: usize,
    top_level_lines: bool,
}

impl Formatter for Sig17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.depth += 1;
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.depth -= 1;
        if self.top_level_lines && self.depth == 0 {
            w.write_all(b"\n")?;
        }
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.inner.begin_object_key(w, first)?;
        if self.top_level_lines && self.depth == 1 {
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn to_text<T: Serialize>(value: &T, top_level_lines: bool) -> String {
    let mut buf = Vec::new();
    let fmt = Sig17 {
        inner: CompactFormatter,
        depth: 0,
        top_level_lines,
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value
        .serialize(&mut ser)
        .expect("in-memory serialization of finite values");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// A document written one key per line.
pub fn to_document<T: Serialize>(value: &T) -> String {
    let mut s = to_text(value, true);
    s.push('\n');
    s
}

/// One compact line, without the trailing newline.
pub fn to_record<T: Serialize>(value: &T) -> String {
    to_text(value, false)
}

fn check_version(found: &str, expected: &'static str) -> Result<(), IoError> {
    if found == expected {
        Ok(())
    } else {
        Err(IoError::Version {
            expected,
            found: found.to_string(),
        })
    }
}

/// Row-major float array with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl FloatArray {
    fn matrix(m: &DMatrix<f64>) -> Self {
        FloatArray {
            shape: vec![m.nrows(), m.ncols()],
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn points(p: &[Vector3<f64>]) -> Self {
        FloatArray {
            shape: vec![p.len(), 3],
            data: p.iter().flat_map(|v| v.iter().copied()).collect(),
        }
    }

    fn check(&self, what: &str, rank: usize) -> Result<(), IoError> {
        let n: usize = self.shape.iter().product();
        if self.shape.len() != rank || n != self.data.len() {
            return Err(format_err(format!(
                "{what}: shape {:?} does not match {} values",
                self.shape,
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(format_err(format!("{what}: non-finite value")));
        }
        Ok(())
    }

    fn to_matrix(&self, what: &str) -> Result<DMatrix<f64>, IoError> {
        self.check(what, 2)?;
        Ok(DMatrix::from_row_slice(self.shape[0], self.shape[1], &self.data))
    }

    fn to_points(&self, what: &str) -> Result<Vec<Vector3<f64>>, IoError> {
        self.check(what, 2)?;
        if self.shape[1] != 3 {
            return Err(format_err(format!("{what}: expected 3 columns")));
        }
        Ok(self.data.chunks(3).map(Vector3::from_column_slice).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    version: String,
    template_vertices: FloatArray,
    faces: Vec<[usize; 3]>,
    /// `N x 3 x B`.
    shape_dirs: FloatArray,
    joint_regressor: FloatArray,
    rest_joint_regressor: FloatArray,
    /// `-1` marks the root.
    parents: Vec<i64>,
    skin_weights: FloatArray,
    names: Vec<String>,
}

pub fn body_model_to_string(model: &BodyModel) -> String {
    let p = model.parts();
    let n = p.template_vertices.len();
    let b = p.shape_dirs.ncols();
    to_document(&ModelDoc {
        version: MODEL_VERSION.into(),
        template_vertices: FloatArray::points(&p.template_vertices),
        faces: p.faces.clone(),
        shape_dirs: FloatArray {
            shape: vec![n, 3, b],
            data: FloatArray::matrix(&p.shape_dirs).data,
        },
        joint_regressor: FloatArray::matrix(&p.joint_regressor),
        rest_joint_regressor: FloatArray::matrix(&p.rest_joint_regressor),
        parents: p
            .parents
            .iter()
            .map(|q| q.map_or(-1, |i| i as i64))
            .collect(),
        skin_weights: FloatArray::matrix(&p.skin_weights),
        names: p.names.clone(),
    })
}

pub fn body_model_from_str(text: &str) -> Result<BodyModel, IoError> {
    let doc: ModelDoc = serde_json::from_str(text)?;
    check_version(&doc.version, MODEL_VERSION)?;
    doc.shape_dirs.check("shape_dirs", 3)?;
    let sd = &doc.shape_dirs.shape;
    let parents = doc
        .parents
        .iter()
        .map(|&q| match q {
            -1 => Ok(None),
            q if q >= 0 => Ok(Some(q as usize)),
            q => Err(format_err(format!("invalid parent index {q}"))),
        })
        .collect::<Result<_, _>>()?;
    let parts = BodyModelParts {
        template_vertices: doc.template_vertices.to_points("template_vertices")?,
        faces: doc.faces,
        shape_dirs: DMatrix::from_row_slice(sd[0] * sd[1], sd[2], &doc.shape_dirs.data),
        joint_regressor: doc.joint_regressor.to_matrix("joint_regressor")?,
        rest_joint_regressor: doc.rest_joint_regressor.to_matrix("rest_joint_regressor")?,
        parents,
        skin_weights: doc.skin_weights.to_matrix("skin_weights")?,
        names: doc.names,
    };
    Ok(BodyModel::new(parts)?)
}

#[derive(Serialize, Deserialize)]
struct PriorDoc {
    version: String,
    weights: Vec<f64>,
    /// `C x D`.
    means: FloatArray,
    /// `C x D x D`.
    precisions: FloatArray,
    angle_terms: Vec<AngleTerm>,
}

pub fn priors_to_string(priors: &Priors) -> String {
    let g = &priors.pose;
    let (c, d) = (g.num_components(), g.dim());
    to_document(&PriorDoc {
        version: PRIOR_VERSION.into(),
        weights: g.weights().to_vec(),
        means: FloatArray {
            shape: vec![c, d],
            data: g.means().iter().flat_map(|m| m.iter().copied()).collect(),
        },
        precisions: FloatArray {
            shape: vec![c, d, d],
            data: g
                .precisions()
                .iter()
                .flat_map(|p| FloatArray::matrix(p).data)
                .collect(),
        },
        angle_terms: priors.angle.terms.clone(),
    })
}

/// Angle terms are checked against `num_kinematic_joints`.
pub fn priors_from_str(text: &str, num_kinematic_joints: usize) -> Result<Priors, IoError> {
    let doc: PriorDoc = serde_json::from_str(text)?;
    check_version(&doc.version, PRIOR_VERSION)?;
    doc.means.check("means", 2)?;
    doc.precisions.check("precisions", 3)?;
    let (c, d) = (doc.means.shape[0], doc.means.shape[1]);
    if doc.precisions.shape != [c, d, d] || doc.weights.len() != c {
        return Err(format_err("prior arrays disagree on component count or dimension"));
    }
    let means = doc.means.data.chunks(d.max(1)).map(DVector::from_column_slice).collect();
    let precisions = (0..c)
        .map(|k| DMatrix::from_row_slice(d, d, &doc.precisions.data[k * d * d..(k + 1) * d * d]))
        .collect();
    Ok(Priors {
        pose: GmmPosePrior::new(doc.weights, means, precisions)?,
        angle: AnglePriorConfig::new(doc.angle_terms, num_kinematic_joints)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: String,
    pub k: usize,
    pub n: usize,
    pub crop: f64,
    pub focal: f64,
    pub has_ground_truth: bool,
}

#[derive(Serialize, Deserialize)]
struct ObsRecord {
    id: u64,
    /// `(u, v, conf)` per keypoint.
    keypoints: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct GtRecord {
    id: u64,
    theta: Vec<[f64; 3]>,
    beta: Vec<f64>,
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DatasetLine {
    Obs(ObsRecord),
    Gt(GtRecord),
}

/// Whether to read the ground-truth records of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundTruthSection {
    Load,
    Skip,
}

fn theta_rows(p: &ModelParams) -> Vec<[f64; 3]> {
    p.theta().iter().map(|r| [r.0.x, r.0.y, r.0.z]).collect()
}

fn params_from_rows(theta: &[[f64; 3]], beta: &[f64]) -> Result<ModelParams, IoError> {
    Ok(ModelParams::new(
        theta.iter().map(|r| AxisAngle::new(r[0], r[1], r[2])).collect(),
        DVector::from_column_slice(beta),
    )?)
}

/// All observations must share one square-crop camera.
pub fn dataset_to_string(ds: &SyntheticDataset) -> Result<String, IoError> {
    let first = ds
        .observations
        .first()
        .ok_or_else(|| format_err("cannot write an empty dataset"))?;
    let intr = first.intrinsics;
    let crop = 2.0 * intr.principal_point[0];
    if Intrinsics::for_crop(intr.focal, crop) != intr {
        return Err(format_err("dataset camera must have a centred square crop"));
    }
    let k = first.keypoints.len();
    let header = DatasetHeader {
        version: DATASET_VERSION.into(),
        k,
        n: ds.observations.len(),
        crop,
        focal: intr.focal,
        has_ground_truth: ds.ground_truth.is_some(),
    };
    let mut out = to_record(&header);
    out.push('\n');
    for o in &ds.observations {
        if o.intrinsics != intr || o.keypoints.len() != k {
            return Err(format_err(format!("observation {} disagrees with the header", o.id)));
        }
        let keypoints = o
            .keypoints
            .points()
            .iter()
            .zip(o.keypoints.conf())
            .map(|(p, c)| [p.x, p.y, *c])
            .collect();
        out += &to_record(&DatasetLine::Obs(ObsRecord { id: o.id, keypoints }));
        out.push('\n');
    }
    for g in ds.ground_truth.iter().flatten() {
        out += &to_record(&DatasetLine::Gt(GtRecord {
            id: g.id,
            theta: theta_rows(&g.params),
            beta: g.params.beta().iter().copied().collect(),
            translation: [g.translation.x, g.translation.y, g.translation.z],
        }));
        out.push('\n');
    }
    Ok(out)
}

pub fn dataset_header_from_str(text: &str) -> Result<DatasetHeader, IoError> {
    let line = text.lines().next().ok_or_else(|| format_err("empty dataset file"))?;
    let header: DatasetHeader = serde_json::from_str(line)?;
    check_version(&header.version, DATASET_VERSION)?;
    Ok(header)
}

/// With [`GroundTruthSection::Skip`] the ground-truth records are not
/// parsed and the result carries none.
pub fn dataset_from_str(text: &str, section: GroundTruthSection) -> Result<SyntheticDataset, IoError> {
    let header = dataset_header_from_str(text)?;
    let intrinsics = Intrinsics::for_crop(header.focal, header.crop);
    let mut observations = Vec::with_capacity(header.n);
    let mut gt = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        if section == GroundTruthSection::Skip && line.starts_with("{\"kind\":\"gt\"") {
            continue;
        }
        match serde_json::from_str::<DatasetLine>(line)
            .map_err(|e| format_err(format!("line {}: {e}", i + 1)))?
        {
            DatasetLine::Obs(r) => {
                if r.keypoints.len() != header.k {
                    return Err(format_err(format!(
                        "observation {}: {} keypoints, header says {}",
                        r.id,
                        r.keypoints.len(),
                        header.k
                    )));
                }
                let points = r.keypoints.iter().map(|p| Vector2::new(p[0], p[1])).collect();
                let conf = r.keypoints.iter().map(|p| p[2]).collect();
                observations.push(Observation {
                    id: r.id,
                    keypoints: Keypoints2D::new(points, conf)?,
                    intrinsics,
                });
            }
            DatasetLine::Gt(r) if section == GroundTruthSection::Load => gt.push(GroundTruth {
                id: r.id,
                params: params_from_rows(&r.theta, &r.beta)?,
                translation: Vector3::from(r.translation),
            }),
            DatasetLine::Gt(_) => {}
        }
    }
    if observations.len() != header.n {
        return Err(format_err(format!(
            "{} observations, header says {}",
            observations.len(),
            header.n
        )));
    }
    let ground_truth = match section {
        GroundTruthSection::Load if header.has_ground_truth => {
            if gt.len() != observations.len()
                || gt.iter().zip(&observations).any(|(g, o)| g.id != o.id)
            {
                return Err(format_err("ground truth records do not match the observations"));
            }
            Some(gt)
        }
        GroundTruthSection::Load if !gt.is_empty() => {
            return Err(format_err("ground truth records present but header says none"));
        }
        _ => None,
    };
    Ok(SyntheticDataset {
        observations,
        ground_truth,
    })
}

#[derive(Serialize, Deserialize)]
struct DictionaryHeader {
    version: String,
    entries: usize,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    id: u64,
    theta: Vec<[f64; 3]>,
    beta: Vec<f64>,
    translation: [f64; 3],
    reproj_error: f64,
    epoch_found: usize,
}

pub fn dictionary_to_string(dict: &Dictionary) -> String {
    let mut out = to_record(&DictionaryHeader {
        version: DICTIONARY_VERSION.into(),
        entries: dict.len(),
    });
    out.push('\n');
    for e in dict.iter() {
        out += &to_record(&EntryRecord {
            id: e.example_id,
            theta: theta_rows(&e.params),
            beta: e.params.beta().iter().copied().collect(),
            translation: [e.translation.x, e.translation.y, e.translation.z],
            reproj_error: e.reproj_error,
            epoch_found: e.epoch_found,
        });
        out.push('\n');
    }
    out
}

pub fn dictionary_from_str(text: &str) -> Result<Dictionary, IoError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: DictionaryHeader =
        serde_json::from_str(lines.next().ok_or_else(|| format_err("empty dictionary file"))?)?;
    check_version(&header.version, DICTIONARY_VERSION)?;
    let mut entries = Vec::with_capacity(header.entries);
    for line in lines {
        let r: EntryRecord = serde_json::from_str(line)?;
        if !(r.reproj_error >= 0.0) {
            return Err(format_err(format!("entry {}: negative reprojection error", r.id)));
        }
        entries.push(DictionaryEntry {
            example_id: r.id,
            params: params_from_rows(&r.theta, &r.beta)?,
            translation: Vector3::from(r.translation),
            reproj_error: r.reproj_error,
            epoch_found: r.epoch_found,
        });
    }
    if entries.len() != header.entries {
        return Err(format_err(format!(
            "{} entries, header says {}",
            entries.len(),
            header.entries
        )));
    }
    Ok(Dictionary::from_entries(entries))
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    weights: FloatArray,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RegressorDoc {
    version: String,
    z_ref: f64,
    num_kinematic_joints: usize,
    num_betas: usize,
    activation: Activation,
    layers: Vec<LayerDoc>,
}

pub fn regressor_to_string(r: &MlpRegressor) -> String {
    to_document(&RegressorDoc {
        version: REGRESSOR_VERSION.into(),
        z_ref: r.z_ref,
        num_kinematic_joints: r.num_kinematic_joints,
        num_betas: r.num_betas,
        activation: r.net.activation,
        layers: r
            .net
            .layers
            .iter()
            .map(|l| LayerDoc {
                weights: FloatArray::matrix(&l.weights),
                bias: l.bias.iter().copied().collect(),
            })
            .collect(),
    })
}

pub fn regressor_from_str(text: &str) -> Result<MlpRegressor, IoError> {
    let doc: RegressorDoc = serde_json::from_str(text)?;
    check_version(&doc.version, REGRESSOR_VERSION)?;
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, l) in doc.layers.iter().enumerate() {
        let weights = l.weights.to_matrix("layer weights")?;
        if weights.nrows() != l.bias.len() {
            return Err(format_err(format!("layer {i}: bias length mismatch")));
        }
        if i > 0 && layers.last().is_some_and(|p: &Dense| p.weights.nrows() != weights.ncols()) {
            return Err(format_err(format!("layer {i}: input width mismatch")));
        }
        layers.push(Dense {
            weights,
            bias: DVector::from_column_slice(&l.bias),
        });
    }
    let out = layers.last().map_or(0, |l| l.weights.nrows());
    if out != crate::spin_loop::regressor::output_dim(doc.num_kinematic_joints, doc.num_betas) {
        return Err(format_err("regressor output width does not match its joint and shape counts"));
    }
    Ok(MlpRegressor {
        net: Mlp {
            layers,
            activation: doc.activation,
        },
        z_ref: doc.z_ref,
        num_kinematic_joints: doc.num_kinematic_joints,
        num_betas: doc.num_betas,
    })
}

/// Merges `overrides` into `base` recursively: objects merge key by key,
/// anything else replaces the base value.
pub fn merge_json(base: &mut Value, overrides: &Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// `base` with the fields present in `overrides` replaced. Unknown keys
/// are rejected.
pub fn with_overrides<T: Serialize + DeserializeOwned>(base: &T, overrides: &Value) -> Result<T, IoError> {
    let mut v = serde_json::to_value(base)?;
    let before = v.clone();
    merge_json(&mut v, overrides);
    check_known_keys(&before, overrides, "")?;
    Ok(serde_json::from_value(v)?)
}

fn check_known_keys(base: &Value, overrides: &Value, path: &str) -> Result<(), IoError> {
    if let (Value::Object(b), Value::Object(o)) = (base, overrides) {
        for (k, v) in o {
            let p = format!("{path}{k}");
            match b.get(k) {
                Some(bv) => check_known_keys(bv, v, &format!("{p}."))?,
                None => return Err(format_err(format!("unknown config key \"{p}\""))),
            }
        }
    }
    Ok(())
}

/// Splits a config document into its sections after checking the version.
pub fn config_sections(text: &str) -> Result<serde_json::Map<String, Value>, IoError> {
    let mut v: serde_json::Map<String, Value> = serde_json::from_str(text)?;
    match v.remove("version") {
        Some(Value::String(s)) => check_version(&s, CONFIG_VERSION)?,
        _ => return Err(format_err("config file lacks a version string")),
    }
    Ok(v)
}

/// Wavefront OBJ with 6 decimals and 1-based faces.
pub fn export_obj(mesh: &Mesh, faces: &[[usize; 3]]) -> String {
    let mut out = String::with_capacity(40 * (mesh.vertices.len() + faces.len()));
    for v in &mesh.vertices {
        out += &format!("v {:.6} {:.6} {:.6}\n", v.x, v.y, v.z);
    }
    for f in faces {
        out += &format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

/// Vertices and zero-based triangles.
pub type ObjMesh = (Vec<Vector3<f64>>, Vec<[usize; 3]>);

/// Reads the `v` and triangular `f` lines of an OBJ document.
pub fn parse_obj(text: &str) -> Result<ObjMesh, IoError> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .map(|s| s.parse().map_err(|_| format_err(format!("bad vertex line: {line}"))))
                    .collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(format_err(format!("bad vertex line: {line}")));
                }
                verts.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|s| {
                        s.split('/')
                            .next()
                            .and_then(|i| i.parse::<usize>().ok())
                            .filter(|&i| i >= 1)
                            .map(|i| i - 1)
                            .ok_or_else(|| format_err(format!("bad face line: {line}")))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(format_err(format!("only triangles are supported: {line}")));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    Ok((verts, faces))
}

/// JSON lines, one record per item.
pub fn to_records<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|i| to_record(&i) + "\n")
        .collect()
}
