//! Best fit seen so far per example, and the rules deciding how a fit may
//! supervise the regressor.

use std::collections::BTreeMap;

use nalgebra::{DVector, Vector3};

use crate::body_model::{BodyModel, ModelParams};
use crate::fitting::{fit_batch, FitConfig, FitProblem, FitResult};
use crate::priors::Priors;

use super::data::Observation;
use super::regressor::{regress, Regressor};

#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryEntry {
    pub example_id: u64,
    pub params: ModelParams,
    pub translation: Vector3<f64>,
    pub reproj_error: f64,
    pub epoch_found: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dictionary {
    entries: BTreeMap<u64, DictionaryEntry>,
}

impl Dictionary {
    pub fn new() -> Self {
        Dictionary::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = DictionaryEntry>) -> Self {
        Dictionary {
            entries: entries.into_iter().map(|e| (e.example_id, e)).collect(),
        }
    }

    pub fn get(&self, id: u64) -> Option<&DictionaryEntry> {
        self.entries.get(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in increasing id order.
    pub fn iter(&self) -> impl Iterator<Item = &DictionaryEntry> {
        self.entries.values()
    }

    /// Stores `candidate` when the slot is empty or the candidate's error is
    /// strictly lower. Returns whether the entry changed.
    pub fn update(&mut self, id: u64, candidate: &FitResult, epoch: usize) -> bool {
        if self
            .entries
            .get(&id)
            .is_some_and(|e| candidate.reproj_error >= e.reproj_error)
        {
            return false;
        }
        self.entries.insert(
            id,
            DictionaryEntry {
                example_id: id,
                params: candidate.params_opt.clone(),
                translation: candidate.translation_opt,
                reproj_error: candidate.reproj_error,
                epoch_found: epoch,
            },
        );
        true
    }

    /// Mean stored reprojection error; zero for an empty dictionary.
    pub fn mean_reproj_error(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.values().map(|e| e.reproj_error).sum::<f64>() / self.entries.len() as f64
    }
}

/// A fit may supervise 3D parameters when its reprojection error is at most
/// `tau_rej` pixels (inclusive).
pub fn accept_fit(result: &FitResult, tau_rej: f64) -> bool {
    within_threshold(result.reproj_error, tau_rej)
}

pub(crate) fn within_threshold(reproj_error: f64, tau_rej: f64) -> bool {
    reproj_error <= tau_rej
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeSupervision {
    UseBetaOpt,
    RegularizeToMean,
}

/// Shapes with any coefficient beyond `bound` (exclusive) are replaced by the
/// mean shape as supervision target.
pub fn shape_supervision_mode(beta_opt: &DVector<f64>, bound: f64) -> ShapeSupervision {
    if beta_opt.iter().any(|b| b.abs() > bound) {
        ShapeSupervision::RegularizeToMean
    } else {
        ShapeSupervision::UseBetaOpt
    }
}

/// Fits every observation from the regressor's estimate (the mean pose for
/// [`Regressor::MeanPose`]) and stores the results with epoch 0. Examples
/// whose problem or fit fails are left out.
pub fn dictionary_init(
    model: &BodyModel,
    observations: &[Observation],
    priors: &Priors,
    fit_cfg: &FitConfig,
    warm_start: &Regressor,
) -> Dictionary {
    let mut ids = Vec::new();
    let mut problems = Vec::new();
    for obs in observations {
        let problem = regress(warm_start, model, obs).ok().and_then(|(p, t)| {
            FitProblem::new(obs.keypoints.clone(), obs.intrinsics, p, t).ok()
        });
        if let Some(p) = problem {
            ids.push(obs.id);
            problems.push(p);
        }
    }
    let mut dict = Dictionary::new();
    for (id, result) in ids.into_iter().zip(fit_batch(model, &problems, priors, fit_cfg)) {
        if let Ok(r) = result {
            dict.update(id, &r, 0);
        }
    }
    dict
}
