//! Command-line front end: dataset synthesis, regressor/extractor/model
//! training, single-image reposing, motion transfer, evaluation, and
//! ablations.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use repose_autograd::Tensor;
use repose_core::bodymodel::{build_default_template, forward, BodyTemplate, NUM_JOINTS};
use repose_core::data::{build_dataset, DatasetIndex};
use repose_core::fit::{fit_keypoints, FitError};
use repose_core::imageio;
use repose_core::keypoints::KeypointSet;
use repose_core::render::{keypoint_heatmaps, render_colorwheel, Camera, Keypoint};
use repose_learn::evalmetrics::{self, jpeg_quality_study};
use repose_learn::features::{load_extractor, save_extractor, train_extractor, ConvFeatures};
use repose_learn::losses::render_torso_masks;
use repose_learn::regress::{
    load_regressor, save_regressor, train_regressor, LabelledSample, Regressor,
};
use repose_learn::trainer::{
    evaluate_images, generate_eval_images, run_ablation_suite, train, Pipeline, TrainState,
};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "repose",
    about = "Self-supervised human reposing on a synthetic articulated-body benchmark",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset tree (images, renderings, index).
    SynthData(SynthArgs),
    /// Train the reposing model (flow pretraining included).
    Train(TrainArgs),
    /// Train the image-to-body regressor on dataset ground truth.
    TrainRegressor(TrainRegressorArgs),
    /// Train the feature-extractor autoencoder.
    TrainExtractor(TrainExtractorArgs),
    /// Fit body parameters to every sample of a dataset split.
    FitBatch(FitBatchArgs),
    /// Train the full model and every single-loss ablation across seeds.
    Ablate(AblateArgs),
    /// Repose one source image into a target pose.
    Repose(ReposeArgs),
    /// Repose a source image through a sequence of target poses.
    ReposeVideo(ReposeVideoArgs),
    /// Run the evaluation protocol over the paired eval split.
    Evaluate(EvaluateArgs),
    /// Write the body template as a plain-text mesh file.
    ExportTemplate(ExportTemplateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n_train: usize,
    #[arg(long, default_value_t = 0)]
    n_eval_pairs: usize,
    #[arg(long, default_value_t = 3)]
    poses_per_eval_subject: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Resume from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainRegressorArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainExtractorArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Which split the autoencoder trains on.
    #[arg(long, default_value = "eval")]
    split: String,
}

#[derive(Args)]
struct FitBatchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, e.g. 1,2,3.
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
}

#[derive(Args)]
struct ReposeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    source_image: PathBuf,
    /// Keypoint JSON for the source image.
    #[arg(long)]
    source_keypoints: PathBuf,
    /// Keypoint JSON for the target pose.
    #[arg(long)]
    target_keypoints: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the source rendering, torso masks, and heatmaps.
    #[arg(long, default_value_t = false)]
    dump_intermediates: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReposeVideoArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    source_image: PathBuf,
    #[arg(long)]
    source_keypoints: PathBuf,
    /// JSON array of keypoint sets, one per frame.
    #[arg(long)]
    keypoint_sequence: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    regressor: PathBuf,
    #[arg(long)]
    extractor: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add the 4x4 JPEG-quality FID matrix.
    #[arg(long, default_value_t = false)]
    jpeg_study: bool,
    /// Score the ground-truth target images as if they were generated
    /// (protocol sanity).
    #[arg(long, default_value_t = false)]
    use_ground_truth: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ExportTemplateArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Runtime failure (exit 1) vs usage/config failure (exit 2).
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// Resolve the output directory: explicit flag, else REPOSE_OUT_ROOT
/// plus a command-specific subdirectory.
fn resolve_out(out: Option<PathBuf>, sub: &str) -> Result<PathBuf, CliError> {
    if let Some(p) = out {
        return Ok(p);
    }
    match std::env::var_os("REPOSE_OUT_ROOT") {
        Some(root) => Ok(PathBuf::from(root).join(sub)),
        None => Err(usage(format!(
            "--out is required (or set REPOSE_OUT_ROOT) for {sub}"
        ))),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    let cfg = match path {
        Some(p) => RunConfig::parse_file(p).map_err(|e| usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(runtime)?;
    std::fs::write(dir.join("config-echo.txt"), cfg.echo()).map_err(runtime)?;
    Ok(())
}

fn template_from(cfg: &RunConfig) -> Result<Arc<BodyTemplate>, CliError> {
    Ok(Arc::new(
        build_default_template(&cfg.body).map_err(runtime)?,
    ))
}

fn load_image_resized(path: &Path, res: usize) -> Result<Tensor, CliError> {
    let (data, w, h) = imageio::load_png(path).map_err(runtime)?;
    let t = Tensor::from_vec(&[3, h, w], data);
    if h == res && w == res {
        Ok(t)
    } else {
        Ok(evalmetrics::resize_image(&t, res, res))
    }
}

fn load_keypoints(path: &Path) -> Result<KeypointSet, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read keypoints {}: {e}", path.display())))?;
    let ks: KeypointSet = serde_json::from_str(&text)
        .map_err(|e| usage(format!("bad keypoint JSON {}: {e}", path.display())))?;
    ks.validate().map_err(|e| usage(e.to_string()))?;
    Ok(ks)
}

fn scale_keypoints(ks: &KeypointSet, res: usize) -> Vec<Keypoint> {
    let fx = res as f64 / ks.resolution[0] as f64;
    let fy = res as f64 / ks.resolution[1] as f64;
    ks.to_keypoints()
        .into_iter()
        .map(|k| Keypoint {
            x: k.x * fx,
            y: k.y * fy,
            visible: k.visible,
        })
        .collect()
}

fn heatmap_tensor(kps: &[Keypoint], res: usize, sigma: f64) -> Tensor {
    Tensor::from_vec(
        &[NUM_JOINTS, res, res],
        keypoint_heatmaps(kps, res, res, sigma),
    )
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SynthData(a) => cmd_synth_data(a),
        Command::Train(a) => cmd_train(a),
        Command::TrainRegressor(a) => cmd_train_regressor(a),
        Command::TrainExtractor(a) => cmd_train_extractor(a),
        Command::FitBatch(a) => cmd_fit_batch(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Repose(a) => cmd_repose(a),
        Command::ReposeVideo(a) => cmd_repose_video(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::ExportTemplate(a) => cmd_export_template(a),
    }
}

fn cmd_synth_data(a: SynthArgs) -> Result<(), CliError> {
    let out = resolve_out(a.out, "dataset")?;
    let mut cfg = RunConfig::default();
    cfg.data_n_train = a.n_train;
    cfg.data_n_eval_pairs = a.n_eval_pairs;
    cfg.data_poses_per_eval_subject = a.poses_per_eval_subject;
    cfg.data_seed = a.seed;
    cfg.data_resolution = a.resolution;
    let template = template_from(&cfg)?;
    echo_config(&cfg, &out)?;
    let index = build_dataset(&template, &cfg.dataset_config(), &out).map_err(runtime)?;
    println!(
        "dataset written to {} ({} train, {} eval samples)",
        out.display(),
        index.train.len(),
        index.eval.len()
    );
    Ok(())
}

/// Shared fixture loading for training-like commands: dataset index,
/// template, regressor, extractor (trained on demand when absent).
struct TrainFixture {
    template: Arc<BodyTemplate>,
    index: DatasetIndex,
    regressor: Regressor,
    phi: Arc<ConvFeatures>,
}

fn load_fixture(cfg: &RunConfig, data: &Path, run_dir: &Path) -> Result<TrainFixture, CliError> {
    let template = template_from(cfg)?;
    let index = DatasetIndex::load(data).map_err(|e| usage(e.to_string()))?;
    let regressor = match &cfg.regressor_path {
        Some(p) => load_regressor(Path::new(p)).map_err(runtime)?,
        None => {
            return Err(usage(
                "trainer.regressor_path is required (train one with `repose train-regressor`)",
            ))
        }
    };
    let phi = match &cfg.extractor_path {
        Some(p) => load_extractor(Path::new(p)).map_err(runtime)?,
        None => {
            // train the autoencoder on the held-out split, save next to the run
            eprintln!("no extractor_path set; training the feature extractor on the eval split");
            let images = split_images(&index, data, "eval", cfg.train.gen.resolution)?;
            let (net, _) = train_extractor(
                &images,
                cfg.extractor.clone(),
                cfg.extractor_epochs,
                cfg.extractor_batch,
                cfg.extractor_lr,
            )
            .map_err(runtime)?;
            let path = run_dir.join("extractor.ckpt");
            save_extractor(&net, &path, serde_json::json!({"trained_on": "eval"}))
                .map_err(runtime)?;
            net
        }
    };
    Ok(TrainFixture {
        template,
        index,
        regressor,
        phi: Arc::new(phi),
    })
}

fn split_images(
    index: &DatasetIndex,
    root: &Path,
    split: &str,
    res: usize,
) -> Result<Vec<Tensor>, CliError> {
    let records = match split {
        "train" => &index.train,
        "eval" => &index.eval,
        other => return Err(usage(format!("unknown split '{other}'"))),
    };
    if records.is_empty() {
        return Err(usage(format!("split '{split}' is empty")));
    }
    records
        .iter()
        .map(|r| load_image_resized(&root.join(&r.img), res))
        .collect()
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let out = resolve_out(a.out, "train")?;
    if let Some(resume) = &a.resume {
        let (state, cfg) = TrainState::load(resume).map_err(runtime)?;
        if state.epoch + 1 >= cfg.epochs {
            println!(
                "run already finished ({} of {} epochs); nothing to resume",
                state.epoch + 1,
                cfg.epochs
            );
            return Ok(());
        }
        return Err(runtime(
            "mid-run resume requires the original dataset and config; rerun `repose train` \
             with the original arguments and the checkpoint in place",
        ));
    }
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    echo_config(&cfg, &out)?;
    let fixture = load_fixture(&cfg, &a.data, &out)?;
    let pipeline = Pipeline::load(
        &a.data,
        &fixture.index,
        &cfg.train,
        fixture.template.clone(),
        &fixture.regressor,
        fixture.phi.clone(),
    )
    .map_err(runtime)?;
    let (_, report) = train(&pipeline, &fixture.regressor, &cfg.train, &out).map_err(runtime)?;
    if let Some(block) = report.eval_blocks.last() {
        println!(
            "training finished: FID {:.4}, perceptual {:.4}, OKS {:.4}",
            block.fid, block.lpips_analog, block.oks
        );
    } else {
        println!("training finished ({} epochs)", report.epochs_run);
    }
    Ok(())
}

fn cmd_train_regressor(a: TrainRegressorArgs) -> Result<(), CliError> {
    let out = resolve_out(a.out, "regressor")?;
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.regress_train.seed = seed;
    }
    echo_config(&cfg, &out)?;
    let index = DatasetIndex::load(&a.data).map_err(|e| usage(e.to_string()))?;
    let res = cfg.regress_net.resolution;
    let build =
        |records: &[repose_core::data::SampleRecord]| -> Result<Vec<LabelledSample>, CliError> {
            records
                .iter()
                .map(|r| {
                    let image = load_image_resized(&a.data.join(&r.img), res)?;
                    let gt = &r.hidden_gt;
                    let params = gt.to_params();
                    let mut rot = Vec::with_capacity(NUM_JOINTS * 9);
                    for m in &params.rotations {
                        rot.extend_from_slice(&m.flat());
                    }
                    Ok(LabelledSample {
                        image,
                        betas: gt.betas.clone(),
                        rot_matrices: rot,
                        camera: [gt.camera_scale, gt.camera_t[0], gt.camera_t[1]],
                    })
                })
                .collect()
        };
    let train_set = build(&index.train)?;
    let val_set = build(&index.eval)?;
    if train_set.is_empty() {
        return Err(usage("train split is empty"));
    }
    let (net, report) = train_regressor(
        &train_set,
        &val_set,
        cfg.regress_net.clone(),
        &cfg.regress_train,
    )
    .map_err(runtime)?;
    let final_val = report.val_geodesic_deg.last().copied().unwrap_or(f64::NAN);
    let path = out.join("regressor.ckpt");
    save_regressor(
        &net,
        &path,
        serde_json::json!({
            "val_geodesic_deg": final_val,
            "train_losses": report.train_losses,
            "val_geodesic_curve": report.val_geodesic_deg,
        }),
    )
    .map_err(runtime)?;
    println!(
        "regressor saved to {} (validation median geodesic {:.2} deg)",
        path.display(),
        final_val
    );
    Ok(())
}

fn cmd_train_extractor(a: TrainExtractorArgs) -> Result<(), CliError> {
    let out = resolve_out(a.out, "extractor")?;
    let cfg = load_config(&a.config)?;
    echo_config(&cfg, &out)?;
    let index = DatasetIndex::load(&a.data).map_err(|e| usage(e.to_string()))?;
    let images = split_images(&index, &a.data, &a.split, cfg.train.gen.resolution)?;
    let (net, report) = train_extractor(
        &images,
        cfg.extractor.clone(),
        cfg.extractor_epochs,
        cfg.extractor_batch,
        cfg.extractor_lr,
    )
    .map_err(runtime)?;
    let path = out.join("extractor.ckpt");
    save_extractor(
        &net,
        &path,
        serde_json::json!({"trained_on": a.split, "losses": report.losses}),
    )
    .map_err(runtime)?;
    println!("extractor saved to {}", path.display());
    Ok(())
}

fn cmd_fit_batch(a: FitBatchArgs) -> Result<(), CliError> {
    let out = resolve_out(a.out, "fits")?;
    let cfg = load_config(&a.config)?;
    let template = template_from(&cfg)?;
    let index = DatasetIndex::load(&a.data).map_err(|e| usage(e.to_string()))?;
    let records = match a.split.as_str() {
        "train" => &index.train,
        "eval" => &index.eval,
        other => return Err(usage(format!("unknown split '{other}'"))),
    };
    std::fs::create_dir_all(&out).map_err(runtime)?;
    let path = out.join(format!("fits_{}.json", a.split));
    #[derive(serde::Serialize)]
    struct FitRecord {
        id: usize,
        betas: Vec<f64>,
        pose_axis_angle: Vec<[f64; 3]>,
        camera_scale: f64,
        camera_t: [f64; 2],
        reproj_error_px: f64,
        converged: bool,
    }
    let mut out_records = Vec::with_capacity(records.len());
    for rec in records {
        let kps = rec.keypoints.to_keypoints();
        let fitres = fit_keypoints(&kps, rec.keypoints.resolution, &template, None, &cfg.fit)
            .map_err(runtime)?;
        out_records.push(FitRecord {
            id: rec.id,
            betas: fitres.params.betas.clone(),
            pose_axis_angle: fitres
                .params
                .rotations
                .iter()
                .map(repose_core::rotmath::matrix_to_axis_angle)
                .collect(),
            camera_scale: fitres.params.camera.scale,
            camera_t: fitres.params.camera.t,
            reproj_error_px: fitres.reproj_error_px,
            converged: fitres.converged,
        });
    }
    std::fs::write(&path, serde_json::to_string_pretty(&out_records).unwrap()).map_err(runtime)?;
    println!("wrote {} fits to {}", out_records.len(), path.display());
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<(), CliError> {
    let out = resolve_out(a.out, "ablations")?;
    let cfg = load_config(&a.config)?;
    echo_config(&cfg, &out)?;
    let seeds: Vec<u64> = a
        .seeds
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("bad --seeds '{}'", a.seeds)))?;
    if seeds.is_empty() {
        return Err(usage("need at least one seed"));
    }
    let fixture = load_fixture(&cfg, &a.data, &out)?;
    let pipeline = Pipeline::load(
        &a.data,
        &fixture.index,
        &cfg.train,
        fixture.template.clone(),
        &fixture.regressor,
        fixture.phi.clone(),
    )
    .map_err(runtime)?;
    let table = run_ablation_suite(&pipeline, &fixture.regressor, &cfg.train, &seeds, &out)
        .map_err(runtime)?;
    println!("{}", table.render_text());
    for (label, wins, total) in table.full_wins() {
        println!("full model beats {label} on FID in {wins}/{total} seeds");
    }
    Ok(())
}

/// Everything needed to repose one image with a trained checkpoint.
struct ReposeSetup {
    state: TrainState,
    train_cfg: repose_learn::trainer::TrainConfig,
    template: Arc<BodyTemplate>,
    run_cfg: RunConfig,
}

fn load_repose_setup(
    checkpoint: &Path,
    config: &Option<PathBuf>,
) -> Result<ReposeSetup, CliError> {
    if !checkpoint.exists() {
        return Err(usage(format!(
            "checkpoint {} does not exist",
            checkpoint.display()
        )));
    }
    let (state, train_cfg) = TrainState::load(checkpoint).map_err(runtime)?;
    let run_cfg = load_config(config)?;
    let template = template_from(&run_cfg)?;
    Ok(ReposeSetup {
        state,
        train_cfg,
        template,
        run_cfg,
    })
}

/// Fit source keypoints, render the conditioning image, build heatmaps,
/// and run the generator.
fn repose_once(
    setup: &ReposeSetup,
    source_image: &Tensor,
    source_kps: &[Keypoint],
    target_kps: &[Keypoint],
) -> Result<(Tensor, Tensor, repose_core::bodymodel::BodyParams), CliError> {
    let res = setup.train_cfg.gen.resolution;
    let fitres = fit_keypoints(
        source_kps,
        [res, res],
        &setup.template,
        None,
        &setup.run_cfg.fit,
    )
    .map_err(|e: FitError| runtime(format!("source fit failed: {e}")))?;
    let mesh = forward(&setup.template, &fitres.params).map_err(runtime)?;
    let cam = Camera::new(
        fitres.params.camera.scale,
        fitres.params.camera.t,
        res,
        res,
    )
    .map_err(runtime)?;
    let rendering = render_colorwheel(&mesh, &cam).map_err(runtime)?;
    let r_s = Tensor::from_vec(&[3, res, res], rendering.rgb);
    let h_s = heatmap_tensor(source_kps, res, setup.train_cfg.heatmap_sigma);
    let h_t = heatmap_tensor(target_kps, res, setup.train_cfg.heatmap_sigma);
    let generated = setup
        .state
        .generator
        .generate_eval(source_image, &h_s, &r_s, &h_t)
        .map_err(runtime)?;
    Ok((generated, r_s, fitres.params))
}

fn cmd_repose(a: ReposeArgs) -> Result<(), CliError> {
    let out = resolve_out(a.out, "repose")?;
    let setup = load_repose_setup(&a.checkpoint, &a.config)?;
    let res = setup.train_cfg.gen.resolution;
    let source_image = load_image_resized(&a.source_image, res)?;
    let source_ks = load_keypoints(&a.source_keypoints)?;
    let target_ks = load_keypoints(&a.target_keypoints)?;
    let source_kps = scale_keypoints(&source_ks, res);
    let target_kps = scale_keypoints(&target_ks, res);

    std::fs::create_dir_all(&out).map_err(runtime)?;
    let (generated, r_s, params) = repose_once(&setup, &source_image, &source_kps, &target_kps)?;
    let out_path = out.join("reposed.png");
    imageio::save_png(&out_path, generated.data(), res, res).map_err(runtime)?;
    if a.dump_intermediates {
        imageio::save_png(&out.join("source_rendering.png"), r_s.data(), res, res)
            .map_err(runtime)?;
        let masks = render_torso_masks(&setup.template, &params, res).map_err(runtime)?;
        for (name, m) in [("front", &masks.front), ("back", &masks.back)] {
            let mut rgb = vec![0.0f64; 3 * res * res];
            for (i, &v) in m.mask.iter().enumerate() {
                rgb[i] = v;
                rgb[res * res + i] = v;
                rgb[2 * res * res + i] = v;
            }
            imageio::save_png(&out.join(format!("mask_{name}_torso.png")), &rgb, res, res)
                .map_err(runtime)?;
        }
        for (name, kps) in [("source", &source_kps), ("target", &target_kps)] {
            let h = heatmap_tensor(kps, res, setup.train_cfg.heatmap_sigma);
            // sum over channels for a single visualization image
            let hw = res * res;
            let mut rgb = vec![0.0f64; 3 * hw];
            for k in 0..NUM_JOINTS {
                for p in 0..hw {
                    rgb[p] = (rgb[p] + h.data()[k * hw + p]).min(1.0);
                }
            }
            for p in 0..hw {
                rgb[hw + p] = rgb[p];
                rgb[2 * hw + p] = rgb[p];
            }
            imageio::save_png(&out.join(format!("heatmaps_{name}.png")), &rgb, res, res)
                .map_err(runtime)?;
        }
    }
    println!("wrote {}", out_path.display());
    Ok(())
}

fn cmd_repose_video(a: ReposeVideoArgs) -> Result<(), CliError> {
    let out = resolve_out(a.out, "repose-video")?;
    let setup = load_repose_setup(&a.checkpoint, &a.config)?;
    let res = setup.train_cfg.gen.resolution;
    let source_image = load_image_resized(&a.source_image, res)?;
    let source_ks = load_keypoints(&a.source_keypoints)?;
    let source_kps = scale_keypoints(&source_ks, res);
    let text = std::fs::read_to_string(&a.keypoint_sequence)
        .map_err(|e| usage(format!("cannot read sequence: {e}")))?;
    let frames: Vec<KeypointSet> = serde_json::from_str(&text)
        .map_err(|e| usage(format!("bad keypoint sequence JSON: {e}")))?;
    if frames.is_empty() {
        return Err(usage("keypoint sequence is empty"));
    }
    std::fs::create_dir_all(&out).map_err(runtime)?;
    let mut skipped = 0usize;
    let mut written = 0usize;
    for (i, ks) in frames.iter().enumerate() {
        if ks.validate().is_err() || ks.num_visible() < setup.run_cfg.fit.min_visible {
            eprintln!("frame {i}: skipped (invalid or too few visible keypoints)");
            skipped += 1;
            continue;
        }
        let target_kps = scale_keypoints(ks, res);
        match repose_once(&setup, &source_image, &source_kps, &target_kps) {
            Ok((generated, _, _)) => {
                let path = out.join(format!("frame_{written:05}.png"));
                imageio::save_png(&path, generated.data(), res, res).map_err(runtime)?;
                written += 1;
            }
            Err(e) => {
                eprintln!("frame {i}: skipped ({})", e.message());
                skipped += 1;
            }
        }
    }
    println!(
        "wrote {written} frames to {} ({skipped} skipped)",
        out.display()
    );
    if skipped * 10 > frames.len() {
        return Err(runtime(format!(
            "{skipped} of {} frames failed (over 10%)",
            frames.len()
        )));
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let out = resolve_out(a.out, "evaluation")?;
    let mut cfg = load_config(&a.config)?;
    let (state, train_cfg) = TrainState::load(&a.checkpoint).map_err(runtime)?;
    cfg.train = train_cfg;
    let template = template_from(&cfg)?;
    let index = DatasetIndex::load(&a.data).map_err(|e| usage(e.to_string()))?;
    if index.eval.is_empty() {
        return Err(usage(
            "dataset has no eval split; regenerate with --n-eval-pairs > 0",
        ));
    }
    let regressor = load_regressor(&a.regressor).map_err(runtime)?;
    let phi = Arc::new(load_extractor(&a.extractor).map_err(runtime)?);
    let pipeline =
        Pipeline::load(&a.data, &index, &cfg.train, template, &regressor, phi).map_err(runtime)?;
    std::fs::create_dir_all(&out).map_err(runtime)?;
    echo_config(&cfg, &out)?;

    let generated: Vec<Tensor> = if a.use_ground_truth {
        pipeline
            .eval_pairs
            .iter()
            .map(|p| pipeline.eval[p.target].image.clone())
            .collect()
    } else {
        generate_eval_images(&pipeline, &state).map_err(runtime)?
    };
    let block =
        evaluate_images(&pipeline, &generated, &regressor, &cfg.train, 0).map_err(runtime)?;
    let mut report = serde_json::json!({
        "fid": block.fid,
        "lpips_analog": block.lpips_analog,
        "oks": block.oks,
        "cx_gs": block.cx_gs,
        "cx_gt": block.cx_gt,
        "pairs": pipeline.eval_pairs.len(),
        "ground_truth_mode": a.use_ground_truth,
    });
    let mut table = format!(
        "{:<16}{:>12}\n{:<16}{:>12.4}\n{:<16}{:>12.4}\n{:<16}{:>12.4}\n{:<16}{:>12.4}\n{:<16}{:>12.4}\n",
        "metric",
        "value",
        "FID",
        block.fid,
        "LPIPS-analog",
        block.lpips_analog,
        "OKS",
        block.oks,
        "CX-GS",
        block.cx_gs,
        "CX-GT",
        block.cx_gt,
    );
    if a.jpeg_study {
        let train_ref: Vec<Tensor> = pipeline.train.iter().map(|s| s.image.clone()).collect();
        let study = jpeg_quality_study(
            &generated,
            &train_ref,
            pipeline.phi.as_ref(),
            &cfg.train.fid,
        )
        .map_err(runtime)?;
        table.push('\n');
        table.push_str(&study.render_table());
        report["jpeg_study"] = serde_json::to_value(&study).unwrap();
    }
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )
    .map_err(runtime)?;
    std::fs::write(out.join("report.txt"), &table).map_err(runtime)?;
    println!("{table}");
    Ok(())
}

fn cmd_export_template(a: ExportTemplateArgs) -> Result<(), CliError> {
    let out = resolve_out(a.out, "template")?;
    let cfg = load_config(&a.config)?;
    let template = template_from(&cfg)?;
    std::fs::create_dir_all(&out).map_err(runtime)?;
    let path = out.join("body_template.txt");
    repose_core::template_io::export_template_file(&template, &path).map_err(runtime)?;
    println!("template written to {}", path.display());
    Ok(())
}
