use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bodyfit::body_model::forward;
use bodyfit::fitting::{fit_batch, fit_camera_stage, FitConfig, FitProblem, FitResult};
use bodyfit::io::{self, GroundTruthSection};
use bodyfit::metrics::{evaluate, MetricsConfig, PoseErrorReport};
use bodyfit::priors::{fit_gmm_em, AnglePriorConfig, EmConfig, Priors};
use bodyfit::spin_loop::{
    dictionary_init, generate_synthetic_dataset, regress, sample_pose_corpus, train_epoch,
    Dictionary, MlpRegressor, Observation, Regressor, SyntheticConfig,
    TrainConfig,
};
use bodyfit::toy::make_toy_model;
use bodyfit::{BodyModel, Mesh, ModelParams, ToySpec};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "bodyfit", version, about = "Body model fitting and fit-in-the-loop regressor training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic body model.
    GenModel {
        /// JSON file with any of n_segments, verts_per_segment, num_betas, seed.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a Gaussian mixture pose prior to synthetic pose samples.
    GenPrior {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 8)]
        components: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample bodies from the prior and project them to keypoints.
    GenData {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_px: f64,
        #[arg(long, default_value_t = 0.0)]
        occlusion: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        first_id: u64,
        /// Leave out the ground-truth records.
        #[arg(long)]
        no_gt: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit every example of a dataset and write the fits as a dictionary.
    Fit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Schedule::Staged)]
        schedule: Schedule,
        #[arg(long, value_enum, default_value_t = Init::Mean)]
        init: Init,
        /// Dictionary or regressor file used with `--init file`.
        #[arg(long)]
        init_file: Option<PathBuf>,
        /// Per-iteration optimizer records, one JSON line each.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the regressor with in-loop fitting.
    Train {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Starting dictionary; built from staged mean-pose fits when absent.
        #[arg(long)]
        dict_in: Option<PathBuf>,
        #[arg(long)]
        dict_out: PathBuf,
        /// Regressor to continue training.
        #[arg(long)]
        regressor_in: Option<PathBuf>,
        #[arg(long)]
        regressor_out: Option<PathBuf>,
        /// Epoch statistics are appended here, one JSON line per epoch.
        #[arg(long)]
        metrics_log: Option<PathBuf>,
        /// Rejected: training never reads ground truth.
        #[arg(long)]
        use_gt: bool,
    },
    /// Compare fitted or regressed parameters with the dataset's ground truth.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Dictionary or regressor file.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write the mesh of one example as OBJ.
    Export {
        #[arg(long)]
        model: PathBuf,
        /// Dictionary or regressor file.
        #[arg(long)]
        params: PathBuf,
        /// Needed with a regressor file.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        id: u64,
        /// Add the example's translation to the vertices.
        #[arg(long)]
        camera_frame: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Schedule {
    Staged,
    Single,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Init {
    /// Zero pose and shape, translation by similar triangles.
    Mean,
    /// Mean start, then only the camera stage (translation and global
    /// orientation) is run.
    TranslationOnly,
    /// Parameters from `--init-file`.
    File,
}

/// Numeric settings, each section overridable from a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Settings {
    fit_staged: FitConfig,
    fit_single: FitConfig,
    train: TrainConfig,
    regressor: RegressorSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegressorSettings {
    hidden: Vec<usize>,
    z_ref: f64,
    seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            fit_staged: FitConfig::staged(),
            fit_single: FitConfig::single(),
            train: TrainConfig::default(),
            regressor: RegressorSettings {
                hidden: vec![64],
                z_ref: SyntheticConfig::default().depth,
                seed: 0,
            },
        }
    }
}

fn load_settings(path: Option<&Path>) -> Result<Settings> {
    let base = Settings::default();
    let Some(path) = path else {
        return Ok(base);
    };
    let sections = io::config_sections(&io::read_file(path)?).with_context(|| format!("reading {}", path.display()))?;
    let settings = io::with_overrides(&base, &Value::Object(sections)).with_context(|| format!("applying {}", path.display()))?;
    settings.fit_staged.validate()?;
    settings.fit_single.validate()?;
    settings.train.validate()?;
    Ok(settings)
}

fn load_model(path: &Path) -> Result<BodyModel> {
    io::body_model_from_str(&io::read_file(path)?).with_context(|| format!("loading model {}", path.display()))
}

fn load_priors(path: &Path, model: &BodyModel) -> Result<Priors> {
    io::priors_from_str(&io::read_file(path)?, model.num_kinematic_joints())
        .with_context(|| format!("loading prior {}", path.display()))
}

fn load_observations(path: &Path, model: &BodyModel) -> Result<Vec<Observation>> {
    let ds = io::dataset_from_str(&io::read_file(path)?, GroundTruthSection::Skip)
        .with_context(|| format!("loading dataset {}", path.display()))?;
    check_keypoint_count(&ds.observations, model)?;
    Ok(ds.observations)
}

fn check_keypoint_count(obs: &[Observation], model: &BodyModel) -> Result<()> {
    if let Some(o) = obs.iter().find(|o| o.keypoints.len() != model.num_joints()) {
        bail!(
            "dataset has {} keypoints per example but the model regresses {} joints",
            o.keypoints.len(),
            model.num_joints()
        );
    }
    Ok(())
}

/// A parameter source: stored fits or a regressor.
enum Params {
    Dictionary(Dictionary),
    Regressor(Regressor),
}

fn load_params(path: &Path, model: &BodyModel) -> Result<Params> {
    let text = io::read_file(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let params = if first.contains(io::DICTIONARY_VERSION) {
        Params::Dictionary(io::dictionary_from_str(&text)?)
    } else {
        let r = io::regressor_from_str(&text).with_context(|| format!("{} is neither a dictionary nor a regressor", path.display()))?;
        if r.num_kinematic_joints != model.num_kinematic_joints() || r.num_betas != model.num_betas() {
            bail!("regressor {} does not match the model", path.display());
        }
        Params::Regressor(Regressor::Mlp(r))
    };
    Ok(params)
}

impl Params {
    fn estimate(&self, model: &BodyModel, obs: &Observation) -> Result<Option<(ModelParams, nalgebra::Vector3<f64>)>> {
        match self {
            Params::Dictionary(d) => Ok(d.get(obs.id).map(|e| (e.params.clone(), e.translation))),
            Params::Regressor(f) => Ok(Some(regress(f, model, obs)?)),
        }
    }
}

fn gen_model(spec: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut toy = match spec {
        Some(p) => {
            let v: Value = serde_json::from_str(&io::read_file(p)?).with_context(|| format!("parsing {}", p.display()))?;
            io::with_overrides(&ToySpec::default(), &v)?
        }
        None => ToySpec::default(),
    };
    if let Some(s) = seed {
        toy.seed = s;
    }
    let model = make_toy_model(&toy)?;
    io::write_file(out, &io::body_model_to_string(&model))?;
    println!(
        "model: {} vertices, {} faces, {} kinematic joints, {} shape coefficients",
        model.num_vertices(),
        model.faces().len(),
        model.num_kinematic_joints(),
        model.num_betas()
    );
    Ok(())
}

fn gen_prior(model: &Path, samples: usize, components: usize, seed: u64, max_iters: usize, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let corpus = sample_pose_corpus(&model, samples, seed);
    let (pose, report) = fit_gmm_em(
        &corpus,
        &EmConfig {
            components,
            seed,
            max_iters,
            ..EmConfig::default()
        },
    )?;
    let priors = Priors {
        pose,
        angle: AnglePriorConfig::humanoid(model.names()),
    };
    io::write_file(out, &io::priors_to_string(&priors))?;
    println!(
        "prior: {components} components over {} dimensions, {} EM iterations, log-likelihood {:.6e}",
        corpus.ncols(),
        report.iterations,
        report.log_likelihoods.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gen_data(model: &Path, prior: &Path, cfg: SyntheticConfig, no_gt: bool, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let priors = load_priors(prior, &model)?;
    let mut ds = generate_synthetic_dataset(&model, &priors.pose, &cfg)?;
    if no_gt {
        ds = ds.without_ground_truth();
    }
    io::write_file(out, &io::dataset_to_string(&ds)?)?;
    println!("dataset: {} examples, ground truth {}", ds.observations.len(), if no_gt { "omitted" } else { "included" });
    Ok(())
}

#[derive(Serialize)]
struct TraceLine<'a> {
    id: u64,
    #[serde(flatten)]
    record: &'a bodyfit::fitting::TraceRecord,
}

#[allow(clippy::too_many_arguments)]
fn run_fit(
    model: &Path,
    prior: &Path,
    data: &Path,
    schedule: Schedule,
    init: Init,
    init_file: Option<&Path>,
    trace: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let settings = load_settings(config)?;
    let model = load_model(model)?;
    let priors = load_priors(prior, &model)?;
    let obs = load_observations(data, &model)?;
    let cfg = match schedule {
        Schedule::Staged => settings.fit_staged,
        Schedule::Single => settings.fit_single,
    };
    let source = match (init, init_file) {
        (Init::File, Some(p)) => Some(load_params(p, &model)?),
        (Init::File, None) => bail!("--init file needs --init-file"),
        (_, Some(_)) => bail!("--init-file is only used with --init file"),
        _ => None,
    };
    let mut ids = Vec::new();
    let mut problems = Vec::new();
    let mut skipped = 0;
    for o in &obs {
        let start = match &source {
            Some(s) => s.estimate(&model, o)?,
            None => regress(&Regressor::MeanPose, &model, o).ok(),
        };
        match start.and_then(|(p, t)| FitProblem::new(o.keypoints.clone(), o.intrinsics, p, t).ok()) {
            Some(p) => {
                ids.push(o.id);
                problems.push(p);
            }
            None => skipped += 1,
        }
    }
    let results: Vec<_> = if init == Init::TranslationOnly {
        problems
            .iter()
            .map(|p| -> Result<FitResult> {
                let (state, iterations, accepted) = fit_camera_stage(&model, p, &priors, &cfg)?;
                let reproj = bodyfit::fitting::reproj_error(&model, &state.params, &state.translation, p.intrinsics(), p.keypoints())?;
                let total = bodyfit::fitting::total_energy(&model, &state.params, &state.translation, &cfg, p, &priors)?;
                Ok(FitResult {
                    params_opt: state.params,
                    translation_opt: state.translation,
                    reproj_error: reproj,
                    energy_breakdown: total,
                    iterations_used: iterations,
                    accepted_iterations: accepted,
                    converged: true,
                    trace: Vec::new(),
                })
            })
            .collect()
    } else {
        fit_batch(&model, &problems, &priors, &cfg)
            .into_iter()
            .map(|r| r.map_err(anyhow::Error::from))
            .collect()
    };
    let mut dict = Dictionary::new();
    let mut trace_text = String::new();
    let mut failed = 0;
    for (id, r) in ids.iter().zip(&results) {
        match r {
            Ok(r) => {
                dict.update(*id, r, 0);
                for rec in &r.trace {
                    trace_text += &io::to_record(&TraceLine { id: *id, record: rec });
                    trace_text.push('\n');
                }
            }
            Err(_) => failed += 1,
        }
    }
    io::write_file(out, &io::dictionary_to_string(&dict))?;
    if let Some(t) = trace {
        io::write_file(t, &trace_text)?;
    }
    println!(
        "fit: {} of {} examples stored, {skipped} unusable, {failed} failed; mean reprojection error {:.4} px",
        dict.len(),
        obs.len(),
        dict.mean_reproj_error()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_train(
    model: &Path,
    prior: &Path,
    data: &Path,
    epochs: Option<usize>,
    config: Option<&Path>,
    dict_in: Option<&Path>,
    dict_out: &Path,
    regressor_in: Option<&Path>,
    regressor_out: Option<&Path>,
    metrics_log: Option<&Path>,
) -> Result<()> {
    let settings = load_settings(config)?;
    let model = load_model(model)?;
    let priors = load_priors(prior, &model)?;
    let obs = load_observations(data, &model)?;
    let mut train_cfg = settings.train;
    if let Some(e) = epochs {
        train_cfg.epochs = e;
    }
    let mut regressor = match regressor_in {
        Some(p) => match load_params(p, &model)? {
            Params::Regressor(r) => r,
            Params::Dictionary(_) => bail!("{} is a dictionary, not a regressor", p.display()),
        },
        None => Regressor::Mlp(MlpRegressor::new(&model, &settings.regressor.hidden, settings.regressor.z_ref, settings.regressor.seed)?),
    };
    let mut dict = match dict_in {
        Some(p) => io::dictionary_from_str(&io::read_file(p)?).with_context(|| format!("loading dictionary {}", p.display()))?,
        None => dictionary_init(&model, &obs, &priors, &settings.fit_staged, &Regressor::MeanPose),
    };
    let first_epoch = dict.iter().map(|e| e.epoch_found).max().unwrap_or(0) + 1;
    let mut log = match metrics_log {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| format!("opening {}", p.display()))?,
        ),
        None => None,
    };
    for epoch in first_epoch..first_epoch + train_cfg.epochs {
        let stats = train_epoch(&model, &mut regressor, &obs, &mut dict, &priors, &settings.fit_single, &train_cfg, epoch)?;
        println!(
            "epoch {epoch}: dictionary reproj {:.4} px, acceptance {:.3}, updates {}, loss 3D {:.4e}, mesh {:.4e}, 2D {:.4e}",
            stats.mean_dict_reproj_error,
            stats.acceptance_rate,
            stats.dictionary_updates,
            stats.mean_loss_3d,
            stats.mean_loss_mesh,
            stats.mean_loss_2d
        );
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", io::to_record(&stats))?;
        }
    }
    io::write_file(dict_out, &io::dictionary_to_string(&dict))?;
    if let (Some(p), Regressor::Mlp(r)) = (regressor_out, &regressor) {
        io::write_file(p, &io::regressor_to_string(r))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    source: String,
    examples: usize,
    evaluated: usize,
    missing: usize,
    mean_reproj_error: f64,
    mpjpe: f64,
    recon_error: f64,
    pck: f64,
    auc: f64,
    per_joint_mpjpe: Vec<f64>,
}

fn run_eval(model: &Path, data: &Path, params: &Path, report: Option<&Path>) -> Result<()> {
    let model = load_model(model)?;
    let ds = io::dataset_from_str(&io::read_file(data)?, GroundTruthSection::Load)
        .with_context(|| format!("loading dataset {}", data.display()))?;
    check_keypoint_count(&ds.observations, &model)?;
    let gt = ds
        .ground_truth
        .as_ref()
        .with_context(|| format!("{} has no ground truth to evaluate against", data.display()))?;
    let source = load_params(params, &model)?;
    let cfg = MetricsConfig::default();
    let mut reports: Vec<PoseErrorReport> = Vec::new();
    let mut reproj = Vec::new();
    for (o, g) in ds.observations.iter().zip(gt) {
        let Some((p, t)) = source.estimate(&model, o)? else {
            continue;
        };
        let (_, pred) = forward(&model, &p)?;
        let (_, truth) = forward(&model, &g.params)?;
        reports.push(evaluate(&pred, &truth, &cfg)?);
        reproj.push(bodyfit::fitting::reproj_error(&model, &p, &t, &o.intrinsics, &o.keypoints)?);
    }
    if reports.is_empty() {
        bail!("no example of {} has parameters in {}", data.display(), params.display());
    }
    let n = reports.len() as f64;
    let avg = |f: &dyn Fn(&PoseErrorReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let k = reports[0].per_joint.len();
    let out = EvalReport {
        source: params.display().to_string(),
        examples: ds.observations.len(),
        evaluated: reports.len(),
        missing: ds.observations.len() - reports.len(),
        mean_reproj_error: reproj.iter().sum::<f64>() / n,
        mpjpe: avg(&|r| r.mpjpe),
        recon_error: avg(&|r| r.recon_error),
        pck: avg(&|r| r.pck),
        auc: avg(&|r| r.auc),
        per_joint_mpjpe: (0..k).map(|j| reports.iter().map(|r| r.per_joint[j]).sum::<f64>() / n).collect(),
    };
    println!(
        "eval: {} examples, MPJPE {:.3} mm, reconstruction {:.3} mm, PCK {:.3}, AUC {:.3}, reprojection {:.4} px",
        out.evaluated, out.mpjpe, out.recon_error, out.pck, out.auc, out.mean_reproj_error
    );
    if let Some(p) = report {
        io::write_file(p, &io::to_document(&out))?;
    }
    Ok(())
}

fn run_export(model: &Path, params: &Path, data: Option<&Path>, id: u64, camera_frame: bool, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let source = load_params(params, &model)?;
    let (p, t) = match &source {
        Params::Dictionary(d) => {
            let e = d.get(id).with_context(|| format!("no entry for example {id}"))?;
            (e.params.clone(), e.translation)
        }
        Params::Regressor(_) => {
            let data = data.context("exporting from a regressor needs --data")?;
            let obs = load_observations(data, &model)?;
            let o = obs.iter().find(|o| o.id == id).with_context(|| format!("no example {id} in {}", data.display()))?;
            source.estimate(&model, o)?.expect("regressors always estimate")
        }
    };
    let (mut mesh, _): (Mesh, _) = forward(&model, &p)?;
    if camera_frame {
        for v in &mut mesh.vertices {
            *v += t;
        }
    }
    io::write_file(out, &io::export_obj(&mesh, model.faces()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenModel { spec, seed, out } => gen_model(spec.as_deref(), seed, &out),
        Command::GenPrior {
            model,
            samples,
            components,
            seed,
            max_iters,
            out,
        } => gen_prior(&model, samples, components, seed, max_iters, &out),
        Command::GenData {
            model,
            prior,
            n,
            noise_px,
            occlusion,
            seed,
            first_id,
            no_gt,
            out,
        } => gen_data(
            &model,
            &prior,
            SyntheticConfig {
                n,
                noise_px,
                occlusion_rate: occlusion,
                seed,
                first_id,
                ..SyntheticConfig::default()
            },
            no_gt,
            &out,
        ),
        Command::Fit {
            model,
            prior,
            data,
            schedule,
            init,
            init_file,
            trace,
            config,
            out,
        } => run_fit(
            &model,
            &prior,
            &data,
            schedule,
            init,
            init_file.as_deref(),
            trace.as_deref(),
            config.as_deref(),
            &out,
        ),
        Command::Train {
            model,
            prior,
            data,
            epochs,
            config,
            dict_in,
            dict_out,
            regressor_in,
            regressor_out,
            metrics_log,
            use_gt,
        } => {
            if use_gt {
                bail!("train never reads ground truth; it is for evaluation only");
            }
            run_train(
                &model,
                &prior,
                &data,
                epochs,
                config.as_deref(),
                dict_in.as_deref(),
                &dict_out,
                regressor_in.as_deref(),
                regressor_out.as_deref(),
                metrics_log.as_deref(),
            )
        }
        Command::Eval {
            model,
            data,
            params,
            report,
        } => run_eval(&model, &data, &params, report.as_deref()),
        Command::Export {
            model,
            params,
            data,
            id,
            camera_frame,
            out,
        } => run_export(&model, &params, data.as_deref(), id, camera_frame, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
