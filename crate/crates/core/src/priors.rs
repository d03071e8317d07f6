//! Prior energies on pose and shape: a Gaussian mixture over body pose
//! (global orientation excluded), an exponential penalty on elbows and knees
//! bending the wrong way, and a quadratic shape penalty. Also the EM fitter
//! that produces the mixture from pose samples.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Diagonal loading added to every EM covariance estimate.
pub const COVARIANCE_REG: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("invalid prior: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Mismatch { expected: usize, got: usize },
    #[error("need at least {needed} samples for {components} components, got {got}")]
    TooFewSamples {
        needed: usize,
        components: usize,
        got: usize,
    },
    #[error("samples are degenerate (zero variance)")]
    Degenerate,
}

/// Gaussian mixture over the `3 (J_kin - 1)` body pose components.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPosePrior {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    precisions: Vec<DMatrix<f64>>,
    log_norm_constants: Vec<f64>,
}

/// Scalar energy with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrad {
    pub value: f64,
    pub gradient: DVector<f64>,
}

fn log_sum_exp(a: &[f64]) -> f64 {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn log_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

impl GmmPosePrior {
    /// Builds a prior from weights, means and precision matrices. Weights
    /// must sum to one within `1e-12` and precisions must be symmetric
    /// positive definite.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        precisions: Vec<DMatrix<f64>>,
    ) -> Result<Self, PriorError> {
        let c = weights.len();
        if c == 0 || means.len() != c || precisions.len() != c {
            return Err(PriorError::Invalid(format!(
                "component count mismatch ({c} weights, {} means, {} precisions)",
                means.len(),
                precisions.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(PriorError::Invalid(format!("weights sum to {sum}")));
        }
        let d = means[0].len();
        let mut log_norm_constants = Vec::with_capacity(c);
        for (k, (mean, prec)) in means.iter().zip(&precisions).enumerate() {
            if mean.len() != d || prec.shape() != (d, d) {
                return Err(PriorError::Mismatch {
                    expected: d,
                    got: mean.len(),
                });
            }
            let asym = (prec - prec.transpose()).abs().max();
            if asym > 1e-9 * prec.abs().max().max(1.0) {
                return Err(PriorError::Invalid(format!(
                    "precision {k} is not symmetric"
                )));
            }
            let chol = Cholesky::new(prec.clone()).ok_or_else(|| {
                PriorError::Invalid(format!("precision {k} is not positive definite"))
            })?;
            log_norm_constants
                .push(weights[k].ln() - 0.5 * d as f64 * LN_2PI + 0.5 * log_det_from_cholesky(&chol));
        }
        Ok(GmmPosePrior {
            weights,
            means,
            precisions,
            log_norm_constants,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn precisions(&self) -> &[DMatrix<f64>] {
        &self.precisions
    }

    pub fn log_norm_constants(&self) -> &[f64] {
        &self.log_norm_constants
    }

    fn check(&self, x: &DVector<f64>) -> Result<(), PriorError> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(PriorError::Mismatch {
                expected: self.dim(),
                got: x.len(),
            })
        }
    }

    /// Per-component log of weighted density and the whitened products
    /// `P_c (x - mu_c)`.
    fn components(&self, x: &DVector<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
        let mut logs = Vec::with_capacity(self.weights.len());
        let mut pd = Vec::with_capacity(self.weights.len());
        for c in 0..self.weights.len() {
            let delta = x - &self.means[c];
            let p_delta = &self.precisions[c] * &delta;
            logs.push(self.log_norm_constants[c] - 0.5 * delta.dot(&p_delta));
            pd.push(p_delta);
        }
        (logs, pd)
    }

    /// Posterior component probabilities at `x`.
    pub fn responsibilities(&self, x: &DVector<f64>) -> Vec<f64> {
        let (logs, _) = self.components(x);
        let lse = log_sum_exp(&logs);
        logs.iter().map(|l| (l - lse).exp()).collect()
    }

    /// Gauss-Newton style PSD curvature: responsibility-weighted precisions.
    pub fn gauss_newton_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let r = self.responsibilities(x);
        let d = self.dim();
        r.iter()
            .zip(&self.precisions)
            .fold(DMatrix::zeros(d, d), |acc, (w, p)| acc + p * *w)
    }

    /// Draws one pose sample.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = self.weights.len() - 1;
        for (c, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = c;
                break;
            }
        }
        let normal = rand_distr::StandardNormal;
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(normal));
        // x = mu + L^{-T} z for P = L L^T has covariance P^{-1}.
        let chol = Cholesky::new(self.precisions[comp].clone()).expect("validated SPD");
        let y = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("triangular solve");
        &self.means[comp] + y
    }
}

/// Negative log mixture density of the body pose, with its gradient.
pub fn e_theta(prior: &GmmPosePrior, body_pose: &DVector<f64>) -> Result<EnergyGrad, PriorError> {
    prior.check(body_pose)?;
    let (logs, pd) = prior.components(body_pose);
    let lse = log_sum_exp(&logs);
    let mut gradient = DVector::zeros(prior.dim());
    for (l, p) in logs.iter().zip(&pd) {
        gradient += p * (l - lse).exp();
    }
    Ok(EnergyGrad {
        value: -lse,
        gradient,
    })
}

/// One penalized rotation component: joint, axis-angle component, sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AngleTerm {
    pub joint: usize,
    pub component: usize,
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AnglePriorConfig {
    pub terms: Vec<AngleTerm>,
}

impl AnglePriorConfig {
    pub fn new(terms: Vec<AngleTerm>, num_kinematic_joints: usize) -> Result<Self, PriorError> {
        for t in &terms {
            if t.joint >= num_kinematic_joints || t.component > 2 || t.sign.abs() != 1 {
                return Err(PriorError::Invalid(format!("invalid angle term {t:?}")));
            }
        }
        Ok(AnglePriorConfig { terms })
    }

    /// Elbows bend about `y`, knees about `x`, in the toy humanoid frame.
    pub fn humanoid(names: &[String]) -> Self {
        let find = |n: &str| names.iter().position(|x| x == n);
        let terms = [
            ("left_elbow", 1, -1),
            ("right_elbow", 1, 1),
            ("left_knee", 0, -1),
            ("right_knee", 0, -1),
        ]
        .iter()
        .filter_map(|&(name, component, sign)| {
            Some(AngleTerm {
                joint: find(name)?,
                component,
                sign,
            })
        })
        .collect();
        AnglePriorConfig { terms }
    }

    /// Residuals `exp(sign * theta)` whose squares sum to the energy.
    pub fn residuals(&self, theta_flat: &DVector<f64>) -> Vec<(usize, f64, f64)> {
        self.terms
            .iter()
            .map(|t| {
                let idx = 3 * t.joint + t.component;
                let s = t.sign as f64;
                let r = (s * theta_flat[idx]).exp();
                (idx, r, s * r)
            })
            .collect()
    }
}

/// `sum exp(sign * theta_component)^2` over the configured components.
pub fn e_angle(theta_flat: &DVector<f64>, cfg: &AnglePriorConfig) -> EnergyGrad {
    let mut gradient = DVector::zeros(theta_flat.len());
    let mut value = 0.0;
    for (idx, r, dr) in cfg.residuals(theta_flat) {
        value += r * r;
        gradient[idx] += 2.0 * r * dr;
    }
    EnergyGrad { value, gradient }
}

pub fn e_beta(beta: &DVector<f64>) -> EnergyGrad {
    EnergyGrad {
        value: beta.norm_squared(),
        gradient: beta * 2.0,
    }
}

/// The priors consumed by the fitter.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub pose: GmmPosePrior,
    pub angle: AnglePriorConfig,
}

/// Pose vector without the global orientation.
pub fn body_pose(theta_flat: &DVector<f64>) -> DVector<f64> {
    theta_flat.rows(3, theta_flat.len() - 3).into_owned()
}

/// EM settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub components: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop when the per-sample log-likelihood gain falls below this.
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            components: 8,
            seed: 0,
            max_iters: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmReport {
    /// Total log-likelihood of the samples under the parameters at the start
    /// of each iteration, followed by the final parameters.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
}

struct Component {
    weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// Row-wise `log(w_c N(x_i; mu_c, Sigma_c))` as an `M x C` matrix.
fn log_densities(samples: &DMatrix<f64>, comps: &[Component]) -> Result<DMatrix<f64>, PriorError> {
    let (m, d) = samples.shape();
    let mut out = DMatrix::zeros(m, comps.len());
    for (c, comp) in comps.iter().enumerate() {
        let chol = Cholesky::new(comp.cov.clone()).ok_or(PriorError::Degenerate)?;
        let log_det = log_det_from_cholesky(&chol);
        let mut centered = samples.clone();
        for mut row in centered.row_iter_mut() {
            row -= comp.mean.transpose();
        }
        // Solve L Y^T = centered^T, Mahalanobis = |Y row|^2.
        let y = chol
            .l()
            .solve_lower_triangular(&centered.transpose())
            .ok_or(PriorError::Degenerate)?;
        let base = comp.weight.ln() - 0.5 * (d as f64 * LN_2PI + log_det);
        for i in 0..m {
            out[(i, c)] = base - 0.5 * y.column(i).norm_squared();
        }
    }
    Ok(out)
}

fn kmeans_pp(samples: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let m = samples.nrows();
    let row = |i: usize| samples.row(i).transpose();
    let mut centers = vec![row(rng.random_range(0..m))];
    let mut dist: Vec<f64> = (0..m).map(|i| (row(i) - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            dist.iter()
                .position(|d| {
                    acc += d;
                    acc > u
                })
                .unwrap_or(m - 1)
        } else {
            rng.random_range(0..m)
        };
        let c = row(pick);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min((row(i) - &c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

/// Fits a full-covariance Gaussian mixture by EM. Samples are rows.
pub fn fit_gmm_em(
    samples: &DMatrix<f64>,
    cfg: &EmConfig,
) -> Result<(GmmPosePrior, EmReport), PriorError> {
    let (m, d) = samples.shape();
    let k = cfg.components;
    if k == 0 || m < 10 * k {
        return Err(PriorError::TooFewSamples {
            needed: 10 * k.max(1),
            components: k,
            got: m,
        });
    }
    let mean = samples.row_mean().transpose();
    let mut global_cov = DMatrix::zeros(d, d);
    for r in samples.row_iter() {
        let delta = r.transpose() - &mean;
        global_cov += &delta * delta.transpose();
    }
    global_cov /= m as f64;
    let first = samples.row(0);
    if samples.row_iter().all(|r| r == first) {
        return Err(PriorError::Degenerate);
    }
    let reg = DMatrix::identity(d, d) * COVARIANCE_REG;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut comps: Vec<Component> = kmeans_pp(samples, k, &mut rng)
        .into_iter()
        .map(|c| Component {
            weight: 1.0 / k as f64,
            mean: c,
            cov: &global_cov + &reg,
        })
        .collect();

    let mut lls = Vec::new();
    let mut iterations = 0;
    loop {
        let logs = log_densities(samples, &comps)?;
        let mut resp = DMatrix::zeros(m, k);
        let mut ll = 0.0;
        for i in 0..m {
            let row: Vec<f64> = logs.row(i).iter().copied().collect();
            let lse = log_sum_exp(&row);
            ll += lse;
            for c in 0..k {
                resp[(i, c)] = (row[c] - lse).exp();
            }
        }
        let converged = lls
            .last()
            .map(|prev: &f64| (ll - prev) / m as f64 <= cfg.tol)
            .unwrap_or(false);
        lls.push(ll);
        if converged || iterations >= cfg.max_iters {
            break;
        }
        iterations += 1;
        for (c, comp) in comps.iter_mut().enumerate() {
            let rc = resp.column(c);
            let nc: f64 = rc.sum();
            if nc < 1e-10 {
                comp.weight = 0.0;
                continue;
            }
            let mu = samples.transpose() * rc / nc;
            let mut centered = samples.clone();
            for (i, mut row) in centered.row_iter_mut().enumerate() {
                row -= mu.transpose();
                row *= rc[i].sqrt();
            }
            comp.cov = centered.transpose() * &centered / nc + &reg;
            comp.mean = mu;
            comp.weight = nc / m as f64;
        }
        let wsum: f64 = comps.iter().map(|c| c.weight).sum();
        for comp in comps.iter_mut() {
            comp.weight /= wsum;
        }
    }

    let comps: Vec<Component> = comps.into_iter().filter(|c| c.weight > 0.0).collect();
    let wsum: f64 = comps.iter().map(|c| c.weight).sum();
    let mut weights = Vec::new();
    let mut means = Vec::new();
    let mut precisions = Vec::new();
    for comp in comps {
        let chol = Cholesky::new(comp.cov).ok_or(PriorError::Degenerate)?;
        let p = chol.inverse();
        precisions.push((&p + p.transpose()) * 0.5);
        means.push(comp.mean);
        weights.push(comp.weight / wsum);
    }
    let prior = GmmPosePrior::new(weights, means, precisions)?;
    Ok((
        prior,
        EmReport {
            log_likelihoods: lls,
            iterations,
        },
    ))
}
