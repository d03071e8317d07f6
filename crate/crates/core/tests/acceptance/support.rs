use std::sync::OnceLock;

use bodyfit::priors::{fit_gmm_em, AnglePriorConfig, EmConfig, Priors};
use bodyfit::spin_loop::{generate_synthetic_dataset, sample_pose_corpus, SyntheticConfig, SyntheticDataset};
use bodyfit::toy::make_toy_model;
use bodyfit::{BodyModel, ToySpec};
use nalgebra::{DMatrix, DVector};

pub const STEP: f64 = 1e-6;

pub fn jacobian(x: &DVector<f64>, mut f: impl FnMut(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.clone();
    for c in 0..x.len() {
        xp[c] = x[c] + STEP;
        let fp = f(&xp);
        xp[c] = x[c] - STEP;
        let fm = f(&xp);
        xp[c] = x[c];
        jac.set_column(c, &((fp - fm) / (2.0 * STEP)));
    }
    jac
}

pub fn gradient(x: &DVector<f64>, mut f: impl FnMut(&DVector<f64>) -> f64) -> DVector<f64> {
    jacobian(x, |v| DVector::from_element(1, f(v))).row(0).transpose()
}

/// `max |a - n| / max(|a|, |n|, floor)` with `floor = 1e-3 max(|n|_inf, 1)`:
/// relative where entries are significant, absolute near zero.
pub fn rel_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let floor = 1e-3 * numeric.amax().max(1.0);
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn rel_error_vec(analytic: &DVector<f64>, numeric: &DVector<f64>) -> f64 {
    rel_error(
        &DMatrix::from_column_slice(analytic.len(), 1, analytic.as_slice()),
        &DMatrix::from_column_slice(numeric.len(), 1, numeric.as_slice()),
    )
}

pub fn model() -> &'static BodyModel {
    static M: OnceLock<BodyModel> = OnceLock::new();
    M.get_or_init(|| make_toy_model(&ToySpec::default()).expect("toy model"))
}

pub fn priors() -> &'static Priors {
    static P: OnceLock<Priors> = OnceLock::new();
    P.get_or_init(|| {
        let m = model();
        let corpus = sample_pose_corpus(m, 2000, 11);
        let (pose, _) = fit_gmm_em(&corpus, &EmConfig::default()).expect("pose prior");
        Priors {
            pose,
            angle: AnglePriorConfig::humanoid(m.names()),
        }
    })
}

pub fn dataset(n: usize, noise_px: f64, occlusion_rate: f64, seed: u64, first_id: u64) -> SyntheticDataset {
    generate_synthetic_dataset(
        model(),
        &priors().pose,
        &SyntheticConfig {
            n,
            noise_px,
            occlusion_rate,
            seed,
            first_id,
            ..SyntheticConfig::default()
        },
    )
    .expect("synthetic dataset")
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
