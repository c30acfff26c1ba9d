//! The reposing training loop: forward cycle, loss assembly, alternating
//! generator/discriminator updates with two-time-scale learning rates,
//! flow pretraining, checkpointing, periodic evaluation, and the
//! ablation switchboard.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use repose_autograd::{
    adam_step, apply_buffer_writes, AdamConfig, ParamId, Session, Tape, Tensor, Var,
};
use repose_core::bodymodel::{BodyParams, BodyTemplate, NUM_JOINTS};
use repose_core::data::{DatasetIndex, SampleRecord};
use repose_core::fit::{fit_keypoints, FitConfig};
use repose_core::imageio;
use repose_core::keypoints::KeypointSet;
use repose_core::render::{keypoint_heatmaps, project_keypoints, Camera, Keypoint};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalmetrics::{
    self, cx_similarity, fid, keypoint_object_scale, oks, perceptual_distance, FidConfig,
    MetricError,
};
use crate::features::ConvFeatures;
use crate::gen::{Discriminator, GenError, Generator, GeneratorConfig};
use crate::losses::{
    adversarial_d_loss, adversarial_g_loss, appearance_loss_with_masks, appearance_weight,
    cycle_loss, flow_loss, pose_loss, render_torso_masks, shape_loss, total_loss, LossBreakdown,
    LossError, LossWeights, TotalLossInputs,
};
use crate::regress::{RegressError, Regressor};

pub const TRAIN_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite value in loss term '{term}' at step {step}")]
    NonFinite { term: &'static str, step: u64 },
    #[error("empty dataset (split has no samples)")]
    EmptyDataset,
    #[error("dataset error: {0}")]
    Data(#[from] repose_core::data::DataError),
    #[error("fit error on sample {sample}: {message}")]
    Fit { sample: usize, message: String },
    #[error("generator error: {0}")]
    Gen(#[from] GenError),
    #[error("loss error: {0}")]
    Loss(#[from] LossError),
    #[error("regressor error: {0}")]
    Regress(#[from] RegressError),
    #[error("metric error: {0}")]
    Metric(#[from] MetricError),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] repose_autograd::io::CheckpointError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image error: {0}")]
    Image(#[from] repose_core::imageio::ImageIoError),
    #[error("configuration error: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct AblationFlags {
    pub no_shape: bool,
    pub no_pose: bool,
    pub no_appearance: bool,
    pub unconditional_d: bool,
}

impl AblationFlags {
    pub fn label(&self) -> &'static str {
        match (
            self.no_shape,
            self.no_pose,
            self.no_appearance,
            self.unconditional_d,
        ) {
            (false, false, false, false) => "full",
            (true, false, false, false) => "no_shape",
            (false, true, false, false) => "no_pose",
            (false, false, true, false) => "no_appearance",
            (false, false, false, true) => "unconditional_d",
            _ => "custom",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub lr_g: f64,
    pub lr_d: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: AblationFlags,
    pub flow_pretrain_epochs: usize,
    pub gen: GeneratorConfig,
    pub heatmap_sigma: f64,
    pub patch_size: usize,
    /// Feature layer used by the flow sampling-correctness term.
    pub flow_layer: usize,
    pub flow_reg_weight: f64,
    /// Evaluate this often (epochs); 0 means final-only.
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub fid: FidConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            lr_g: 8e-4,
            lr_d: 1.6e-3,
            batch_size: 4,
            epochs: 50,
            seed: 1,
            ablation: AblationFlags::default(),
            flow_pretrain_epochs: 3,
            gen: GeneratorConfig::default(),
            heatmap_sigma: 1.5,
            patch_size: 16,
            flow_layer: 1,
            flow_reg_weight: 0.01,
            eval_every: 0,
            checkpoint_every: 10,
            fid: FidConfig {
                protocol_resolution: 64,
                shrinkage: None,
            },
        }
    }
}

/// One prepared training sample, resident in memory.
pub struct PreparedSample {
    pub image: Tensor,
    pub rendering: Tensor,
    pub keypoints: Vec<Keypoint>,
    pub heatmap: Tensor,
    pub fitted: BodyParams,
    pub beta_est: Vec<f64>,
}

/// One evaluation pair: source sample index, target sample index, and
/// the hidden target ground truth for metrics only.
pub struct EvalPair {
    pub source: usize,
    pub target: usize,
}

pub struct EvalSample {
    pub image: Tensor,
    pub rendering: Tensor,
    pub keypoints: Vec<Keypoint>,
    pub heatmap: Tensor,
    pub fitted: BodyParams,
}

/// Dataset plus every precomputed quantity the loop needs.
pub struct Pipeline {
    pub template: Arc<BodyTemplate>,
    pub resolution: usize,
    pub train: Vec<PreparedSample>,
    pub eval: Vec<EvalSample>,
    pub eval_pairs: Vec<EvalPair>,
    pub phi: Arc<ConvFeatures>,
}

fn load_image_at(
    root: &Path,
    rel: &str,
    resolution: usize,
) -> Result<Tensor, TrainError> {
    let (data, w, h) = imageio::load_png(&root.join(rel))?;
    let t = Tensor::from_vec(&[3, h, w], data);
    if h == resolution && w == resolution {
        Ok(t)
    } else {
        Ok(evalmetrics::resize_image(&t, resolution, resolution))
    }
}

fn scale_keypoints(ks: &KeypointSet, resolution: usize) -> Vec<Keypoint> {
    let fx = resolution as f64 / ks.resolution[0] as f64;
    let fy = resolution as f64 / ks.resolution[1] as f64;
    ks.to_keypoints()
        .into_iter()
        .map(|k| Keypoint {
            x: k.x * fx,
            y: k.y * fy,
            visible: k.visible,
        })
        .collect()
}

/// Fitted parameters for a record list, computed in parallel with a
/// persistent JSON cache beside the dataset.
pub fn fit_split(
    records: &[SampleRecord],
    template: &Arc<BodyTemplate>,
    cache_path: &Path,
) -> Result<Vec<BodyParams>, TrainError> {
    #[derive(Serialize, Deserialize)]
    struct CachedFit {
        betas: Vec<f64>,
        pose_axis_angle: Vec<[f64; 3]>,
        camera_scale: f64,
        camera_t: [f64; 2],
    }
    if let Ok(text) = fs::read_to_string(cache_path) {
        if let Ok(cached) = serde_json::from_str::<Vec<CachedFit>>(&text) {
            if cached.len() == records.len() {
                return Ok(cached
                    .into_iter()
                    .map(|c| BodyParams {
                        betas: c.betas,
                        rotations: c
                            .pose_axis_angle
                            .iter()
                            .map(|&aa| {
                                repose_core::rotmath::axis_angle_to_matrix(aa)
                                    .expect("cached pose finite")
                            })
                            .collect(),
                        camera: repose_core::bodymodel::CameraParams {
                            scale: c.camera_scale,
                            t: c.camera_t,
                        },
                    })
                    .collect());
            }
        }
    }
    let cfg = FitConfig::default();
    let results: Result<Vec<BodyParams>, TrainError> = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let kps = rec.keypoints.to_keypoints();
            fit_keypoints(&kps, rec.keypoints.resolution, template, None, &cfg)
                .map(|r| r.params)
                .map_err(|e| TrainError::Fit {
                    sample: i,
                    message: e.to_string(),
                })
        })
        .collect();
    let fitted = results?;
    let cached: Vec<CachedFit> = fitted
        .iter()
        .map(|p| CachedFit {
            betas: p.betas.clone(),
            pose_axis_angle: p
                .rotations
                .iter()
                .map(repose_core::rotmath::matrix_to_axis_angle)
                .collect(),
            camera_scale: p.camera.scale,
            camera_t: p.camera.t,
        })
        .collect();
    fs::write(cache_path, serde_json::to_string(&cached).unwrap())
        .map_err(io_err(cache_path))?;
    Ok(fitted)
}

impl Pipeline {
    /// Load a dataset, fit every sample's keypoints, run the frozen
    /// regressor over source images, and build heatmaps.
    pub fn load(
        root: &Path,
        index: &DatasetIndex,
        config: &TrainConfig,
        template: Arc<BodyTemplate>,
        regressor: &Regressor,
        phi: Arc<ConvFeatures>,
    ) -> Result<Self, TrainError> {
        if index.train.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let res = config.gen.resolution;
        if regressor.config.resolution != res {
            return Err(TrainError::Config(format!(
                "regressor resolution {} != training resolution {}",
                regressor.config.resolution, res
            )));
        }
        let fitted_train = fit_split(
            &index.train,
            &template,
            &root.join("fits_train_v1.json"),
        )?;
        let fitted_eval = fit_split(
            &index.eval,
            &template,
            &root.join("fits_eval_v1.json"),
        )?;

        let load_split = |records: &[SampleRecord]| -> Result<Vec<(Tensor, Tensor, Vec<Keypoint>)>, TrainError> {
            records
                .par_iter()
                .map(|rec| {
                    let image = load_image_at(root, &rec.img, res)?;
                    let rendering = load_image_at(root, &rec.ren, res)?;
                    let kps = scale_keypoints(&rec.keypoints, res);
                    Ok((image, rendering, kps))
                })
                .collect()
        };
        let train_raw = load_split(&index.train)?;
        let eval_raw = load_split(&index.eval)?;

        let heat = |kps: &[Keypoint]| {
            Tensor::from_vec(
                &[NUM_JOINTS, res, res],
                keypoint_heatmaps(kps, res, res, config.heatmap_sigma),
            )
        };

        let train: Vec<PreparedSample> = train_raw
            .into_iter()
            .zip(fitted_train.into_iter())
            .map(|((image, rendering, keypoints), fitted)| {
                let beta_est = regressor
                    .infer(&image)
                    .map(|o| o.betas)
                    .unwrap_or_else(|_| vec![0.0; 4]);
                let heatmap = heat(&keypoints);
                PreparedSample {
                    image,
                    rendering,
                    keypoints,
                    heatmap,
                    fitted,
                    beta_est,
                }
            })
            .collect();

        let eval: Vec<EvalSample> = eval_raw
            .into_iter()
            .zip(fitted_eval.into_iter())
            .map(|((image, rendering, keypoints), fitted)| EvalSample {
                heatmap: heat(&keypoints),
                image,
                rendering,
                keypoints,
                fitted,
            })
            .collect();

        // pairs within each eval subject: pose i -> pose i+1 (cyclic)
        let mut eval_pairs = Vec::new();
        for group in &index.eval_groups {
            let m = group.samples.len();
            if m < 2 {
                continue;
            }
            for i in 0..m {
                eval_pairs.push(EvalPair {
                    source: group.samples[i],
                    target: group.samples[(i + 1) % m],
                });
            }
        }

        Ok(Self {
            template,
            resolution: res,
            train,
            eval,
            eval_pairs,
            phi,
        })
    }
}

/// Mutable training state: networks, optimizer step counts, rng.
pub struct TrainState {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub step: u64,
    pub d_step: u64,
    pub epoch: usize,
    pub rng: ChaCha12Rng,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self, TrainError> {
        config.weights.validate()?;
        let generator = Generator::new(config.gen.clone())?;
        let discriminator = Discriminator::new(&config.gen, !config.ablation.unconditional_d);
        Ok(Self {
            generator,
            discriminator,
            step: 0,
            d_step: 0,
            epoch: 0,
            rng: ChaCha12Rng::seed_from_u64(config.seed),
        })
    }

    pub fn save(&self, path: &Path, config: &TrainConfig) -> Result<(), TrainError> {
        let meta = serde_json::json!({
            "kind": "train-state",
            "step": self.step,
            "d_step": self.d_step,
            "epoch": self.epoch,
            "rng_seed": hex(&self.rng.get_seed()),
            "rng_word_pos": self.rng.get_word_pos().to_string(),
            "config": config,
        });
        repose_autograd::io::save_checkpoint(
            path,
            TRAIN_CHECKPOINT_VERSION,
            &[("generator", &self.generator.store), ("discriminator", &self.discriminator.store)],
            &meta,
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, TrainConfig), TrainError> {
        let raw = repose_autograd::io::load_checkpoint(path)?;
        let config: TrainConfig = serde_json::from_value(raw.meta["config"].clone())
            .map_err(repose_autograd::io::CheckpointError::Meta)?;
        let mut state = TrainState::new(&config)?;
        raw.load_into("generator", &mut state.generator.store)?;
        raw.load_into("discriminator", &mut state.discriminator.store)?;
        state.step = raw.meta["step"].as_u64().unwrap_or(0);
        state.d_step = raw.meta["d_step"].as_u64().unwrap_or(0);
        state.epoch = raw.meta["epoch"].as_u64().unwrap_or(0) as usize;
        let seed = unhex(raw.meta["rng_seed"].as_str().unwrap_or_default());
        let mut rng = ChaCha12Rng::from_seed(seed);
        if let Some(pos) = raw.meta["rng_word_pos"]
            .as_str()
            .and_then(|s| s.parse::<u128>().ok())
        {
            rng.set_word_pos(pos);
        }
        state.rng = rng;
        Ok((state, config))
    }
}

fn hex(bytes: &[u8; 32]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> [u8; 32] {
    let mut out = [0u8; 32];
    for (i, chunk) in s.as_bytes().chunks(2).take(32).enumerate() {
        let hi = (chunk[0] as char).to_digit(16).unwrap_or(0) as u8;
        let lo = (chunk[1] as char).to_digit(16).unwrap_or(0) as u8;
        out[i] = hi * 16 + lo;
    }
    out
}

/// Stack per-sample tensors into a batch.
fn stack(tensors: &[&Tensor]) -> Tensor {
    let shape = tensors[0].shape();
    let mut full = vec![tensors.len()];
    full.extend_from_slice(shape);
    let mut data = Vec::with_capacity(tensors.len() * tensors[0].len());
    for t in tensors {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&full, data)
}

/// Uniformly random distinct (source, target) index pairs.
fn sample_pairs(n: usize, batch: usize, rng: &mut ChaCha12Rng) -> Vec<(usize, usize)> {
    (0..batch)
        .map(|_| {
            let s = rng.random_range(0..n);
            let mut t = rng.random_range(0..n);
            if n > 1 {
                while t == s {
                    t = rng.random_range(0..n);
                }
            }
            (s, t)
        })
        .collect()
}

fn check_finite(value: f64, term: &'static str, step: u64) -> Result<f64, TrainError> {
    if !value.is_finite() {
        return Err(TrainError::NonFinite { term, step });
    }
    Ok(value)
}

/// One alternating update (discriminator first, then generator) on a
/// batch of (source, target) sample pairs.
pub fn train_step(
    pipeline: &Pipeline,
    state: &mut TrainState,
    regressor: &Regressor,
    config: &TrainConfig,
    pairs: &[(usize, usize)],
) -> Result<LossBreakdown, TrainError> {
    let tape = Tape::new();
    let n = pairs.len();
    let res = pipeline.resolution;
    state.step += 1;
    let step = state.step;

    let src: Vec<&PreparedSample> = pairs.iter().map(|&(s, _)| &pipeline.train[s]).collect();
    let tgt: Vec<&PreparedSample> = pairs.iter().map(|&(_, t)| &pipeline.train[t]).collect();

    let i_s = tape.constant(stack(&src.iter().map(|s| &s.image).collect::<Vec<_>>()));
    let r_s = tape.constant(stack(&src.iter().map(|s| &s.rendering).collect::<Vec<_>>()));
    let r_t = tape.constant(stack(&tgt.iter().map(|s| &s.rendering).collect::<Vec<_>>()));
    let h_s = tape.constant(stack(&src.iter().map(|s| &s.heatmap).collect::<Vec<_>>()));
    let h_t = tape.constant(stack(&tgt.iter().map(|s| &s.heatmap).collect::<Vec<_>>()));

    // forward cycle with shared generator weights
    let sg = Session::new(&tape, &state.generator.store, true);
    let (i_hat_t, ff_st) = state.generator.generate(&sg, i_s, h_s, r_s, h_t)?;
    let (i_hat_s, ff_ts) = state.generator.generate(&sg, i_hat_t, h_t, r_t, h_s)?;

    // discriminator update on real (I_s,R_s) vs detached fake
    let adv_d_val = {
        let sd = Session::new(&tape, &state.discriminator.store, true);
        let l_d = adversarial_d_loss(&sd, &state.discriminator, i_s, r_s, i_hat_t, r_t);
        let v = check_finite(tape.value(l_d).item(), "adversarial_d", step)?;
        let grads = tape.backward(l_d);
        let collected = sd.collect_grads(&grads);
        let writes = sd.take_buffer_writes();
        apply_buffer_writes(&mut state.discriminator.store, writes);
        state.d_step += 1;
        adam_step(
            &mut state.discriminator.store,
            &collected,
            state.d_step,
            AdamConfig::gan(config.lr_d),
        );
        v
    };

    // generator objective against the updated discriminator
    let zero = || tape.constant(Tensor::scalar(0.0));
    let w = &config.weights;

    let cyc = cycle_loss(&tape, pipeline.phi.as_ref(), i_s, i_hat_s, w)?;
    let fl = flow_loss(
        &tape,
        pipeline.phi.as_ref(),
        r_s,
        r_t,
        &ff_st,
        &ff_ts,
        config.flow_layer,
        config.flow_reg_weight,
    )?;
    let sd_frozen = Session::new(&tape, &state.discriminator.store, false);
    let adv_g = adversarial_g_loss(&sd_frozen, &state.discriminator, i_hat_t, r_t);

    // 3D constraints from the frozen regressor on the generated image
    let need_regressor = !(config.ablation.no_pose && config.ablation.no_shape);
    let (pose_term, shape_term) = if need_regressor {
        let sr = Session::new(&tape, &regressor.store, false);
        let out = regressor.forward(&sr, i_hat_t);
        let pose_term = if config.ablation.no_pose {
            zero()
        } else {
            let mut target = Vec::with_capacity(n * NUM_JOINTS * 9);
            for t in &tgt {
                for rot in &t.fitted.rotations {
                    target.extend_from_slice(&rot.flat());
                }
            }
            let target = tape.constant(Tensor::from_vec(&[n * NUM_JOINTS, 9], target));
            pose_loss(&tape, target, out.rot_matrices)?
        };
        let shape_term = if config.ablation.no_shape {
            zero()
        } else {
            let mut beta_src = Vec::with_capacity(n * 4);
            for s in &src {
                beta_src.extend_from_slice(&s.beta_est);
            }
            let beta_src = tape.constant(Tensor::from_vec(&[n, 4], beta_src));
            shape_loss(&tape, beta_src, out.betas)?
        };
        (pose_term, shape_term)
    } else {
        (zero(), zero())
    };

    // appearance term per pair, averaged
    let app_term = if config.ablation.no_appearance {
        zero()
    } else {
        let mut acc = zero();
        let mut active = 0usize;
        for (bi, (s, t)) in src.iter().zip(tgt.iter()).enumerate() {
            let lambda = appearance_weight(&s.fitted.rotations[0], &t.fitted.rotations[0]);
            if lambda == 0.0 {
                continue;
            }
            let masks_s = render_torso_masks(&pipeline.template, &s.fitted, res)?;
            let gen_params = BodyParams {
                betas: s.fitted.betas.clone(),
                rotations: t.fitted.rotations.clone(),
                camera: t.fitted.camera,
            };
            let masks_t = render_torso_masks(&pipeline.template, &gen_params, res)?;
            let img_s = single(&tape, i_s, bi, res);
            let img_hat = single(&tape, i_hat_t, bi, res);
            let term = appearance_loss_with_masks(
                &tape,
                pipeline.phi.as_ref(),
                img_s,
                img_hat,
                &masks_s,
                &masks_t,
                lambda,
                w,
                config.patch_size,
            )?;
            acc = repose_autograd::add(&tape, acc, term);
            active += 1;
        }
        if active > 0 {
            repose_autograd::scale(&tape, acc, 1.0 / active as f64)
        } else {
            acc
        }
    };

    let (total, mut breakdown) = total_loss(
        &tape,
        &TotalLossInputs {
            cycle: cyc,
            flow: fl,
            adversarial_g: adv_g,
            pose: pose_term,
            shape: shape_term,
            appearance: app_term,
        },
        w,
    );
    breakdown.adversarial_d = adv_d_val;
    for (name, v) in [
        ("cycle", breakdown.cycle),
        ("flow", breakdown.flow),
        ("adversarial_g", breakdown.adversarial_g),
        ("pose", breakdown.pose),
        ("shape", breakdown.shape),
        ("appearance", breakdown.appearance),
        ("total", breakdown.total),
    ] {
        check_finite(v, match name {
            "cycle" => "cycle",
            "flow" => "flow",
            "adversarial_g" => "adversarial_g",
            "pose" => "pose",
            "shape" => "shape",
            "appearance" => "appearance",
            _ => "total",
        }, step)?;
    }

    let grads = tape.backward(total);
    let collected = sg.collect_grads(&grads);
    let writes = sg.take_buffer_writes();
    apply_buffer_writes(&mut state.generator.store, writes);
    adam_step(
        &mut state.generator.store,
        &collected,
        state.step,
        AdamConfig::gan(config.lr_g),
    );
    Ok(breakdown)
}

/// Slice one (3,res,res) image out of a batch variable.
fn single(tape: &Tape, batch: Var, index: usize, res: usize) -> Var {
    let s = repose_autograd::slice(tape, batch, 0, index, index + 1);
    repose_autograd::reshape(tape, s, &[3, res, res])
}

/// Flow-estimator pretraining on rendering pairs.
pub fn pretrain_flow(
    pipeline: &Pipeline,
    state: &mut TrainState,
    config: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    if pipeline.train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let n = pipeline.train.len();
    let steps_per_epoch = (n / config.batch_size.max(1)).max(1);
    let mut losses = Vec::new();
    let mut step = 0u64;
    for _ in 0..config.flow_pretrain_epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps_per_epoch {
            let pairs = sample_pairs(n, config.batch_size, &mut state.rng);
            let tape = Tape::new();
            let src: Vec<&PreparedSample> =
                pairs.iter().map(|&(s, _)| &pipeline.train[s]).collect();
            let tgt: Vec<&PreparedSample> =
                pairs.iter().map(|&(_, t)| &pipeline.train[t]).collect();
            let r_s = tape.constant(stack(&src.iter().map(|s| &s.rendering).collect::<Vec<_>>()));
            let r_t = tape.constant(stack(&tgt.iter().map(|s| &s.rendering).collect::<Vec<_>>()));
            let h_s = tape.constant(stack(&src.iter().map(|s| &s.heatmap).collect::<Vec<_>>()));
            let h_t = tape.constant(stack(&tgt.iter().map(|s| &s.heatmap).collect::<Vec<_>>()));
            let sg = Session::new(&tape, &state.generator.store, true);
            let ff_st = state.generator.flow.forward(&sg, r_s, h_s, h_t);
            let ff_ts = state.generator.flow.forward(&sg, r_t, h_t, h_s);
            let loss = flow_loss(
                &tape,
                pipeline.phi.as_ref(),
                r_s,
                r_t,
                &ff_st,
                &ff_ts,
                config.flow_layer,
                config.flow_reg_weight,
            )?;
            let v = check_finite(tape.value(loss).item(), "flow_pretrain", step)?;
            let grads = tape.backward(loss);
            // restrict the update to flow-estimator parameters
            let collected: Vec<(ParamId, Tensor)> = sg
                .collect_grads(&grads)
                .into_iter()
                .enumerate()
                .filter(|(_, (id, _))| {
                    state
                        .generator
                        .store
                        .entry(*id)
                        .name
                        .starts_with("flow.")
                })
                .map(|(_, x)| x)
                .collect();
            let writes = sg.take_buffer_writes();
            apply_buffer_writes(&mut state.generator.store, writes);
            step += 1;
            adam_step(
                &mut state.generator.store,
                &collected,
                step,
                AdamConfig::gan(config.lr_g),
            );
            epoch_loss += v;
        }
        losses.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok(losses)
}

/// Metric block evaluated on the paired split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalBlock {
    pub epoch: usize,
    pub fid: f64,
    pub lpips_analog: f64,
    pub oks: f64,
    pub cx_gs: f64,
    pub cx_gt: f64,
}

/// Generate every eval pair through the current generator.
pub fn generate_eval_images(
    pipeline: &Pipeline,
    state: &TrainState,
) -> Result<Vec<Tensor>, TrainError> {
    pipeline
        .eval_pairs
        .iter()
        .map(|pair| {
            let s = &pipeline.eval[pair.source];
            let t = &pipeline.eval[pair.target];
            Ok(state.generator.generate_eval(
                &s.image,
                &s.heatmap,
                &s.rendering,
                &t.heatmap,
            )?)
        })
        .collect()
}

/// Keypoints of an image through the frozen regressor: infer parameters,
/// pose the body, project the joints.
pub fn extract_keypoints(
    image: &Tensor,
    regressor: &Regressor,
    template: &Arc<BodyTemplate>,
) -> Result<Vec<Keypoint>, TrainError> {
    let out = regressor.infer(image)?;
    let params = out.to_params();
    let mesh = repose_core::bodymodel::forward(template, &params)
        .map_err(repose_core::data::DataError::Body)?;
    let res = image.shape()[1];
    let cam = Camera::new(
        params.camera.scale.max(1e-3),
        params.camera.t,
        res,
        res,
    )
    .map_err(repose_core::data::DataError::Render)?;
    Ok(project_keypoints(&mesh.joints, &cam))
}

/// Evaluate generated images against the protocol: realism against the
/// train distribution, reconstruction against ground-truth targets,
/// keypoint similarity through the shared extractor.
pub fn evaluate(
    pipeline: &Pipeline,
    state: &TrainState,
    regressor: &Regressor,
    config: &TrainConfig,
    epoch: usize,
) -> Result<EvalBlock, TrainError> {
    let generated = generate_eval_images(pipeline, state)?;
    evaluate_images(pipeline, &generated, regressor, config, epoch)
}

/// Metric block for an arbitrary image list standing in for the
/// generated eval pairs (protocol sanity paths pass ground-truth
/// targets here).
pub fn evaluate_images(
    pipeline: &Pipeline,
    generated: &[Tensor],
    regressor: &Regressor,
    config: &TrainConfig,
    epoch: usize,
) -> Result<EvalBlock, TrainError> {
    let train_ref: Vec<Tensor> = pipeline.train.iter().map(|s| s.image.clone()).collect();
    let fid_v = fid(&generated, &train_ref, pipeline.phi.as_ref(), &config.fid)?;

    let mut lpips_sum = 0.0;
    let mut oks_sum = 0.0;
    let mut oks_n = 0usize;
    let mut cx_gs_sum = 0.0;
    let mut cx_gt_sum = 0.0;
    for (gen, pair) in generated.iter().zip(pipeline.eval_pairs.iter()) {
        let target = &pipeline.eval[pair.target];
        let source = &pipeline.eval[pair.source];
        lpips_sum += perceptual_distance(gen, &target.image, pipeline.phi.as_ref())?;
        let pred = extract_keypoints(gen, regressor, &pipeline.template)?;
        let gt = extract_keypoints(&target.image, regressor, &pipeline.template)?;
        let scale = keypoint_object_scale(&gt);
        if let Ok(v) = oks(&pred, &gt, scale, &vec![0.1; NUM_JOINTS]) {
            oks_sum += v;
            oks_n += 1;
        }
        cx_gs_sum += cx_similarity(gen, &source.image, pipeline.phi.as_ref(), 2, 0.5)?;
        cx_gt_sum += cx_similarity(gen, &target.image, pipeline.phi.as_ref(), 2, 0.5)?;
    }
    let m = generated.len().max(1) as f64;
    Ok(EvalBlock {
        epoch,
        fid: fid_v,
        lpips_analog: lpips_sum / m,
        oks: if oks_n > 0 { oks_sum / oks_n as f64 } else { 0.0 },
        cx_gs: cx_gs_sum / m,
        cx_gt: cx_gt_sum / m,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub epoch_losses: Vec<LossBreakdown>,
    pub flow_pretrain_losses: Vec<f64>,
    pub eval_blocks: Vec<EvalBlock>,
}

/// Full training run. Writes logs, checkpoints, sample grids, and the
/// report into `run_dir`.
pub fn train(
    pipeline: &Pipeline,
    regressor: &Regressor,
    config: &TrainConfig,
    run_dir: &Path,
) -> Result<(TrainState, TrainReport), TrainError> {
    fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    let mut state = TrainState::new(config)?;
    let f3d_before = regressor.store.fingerprint();

    let flow_losses = pretrain_flow(pipeline, &mut state, config)?;

    let log_path = run_dir.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path).map_err(io_err(&log_path))?;

    let n = pipeline.train.len();
    let steps_per_epoch = (n / config.batch_size.max(1)).max(1);
    let mut epoch_losses = Vec::new();
    let mut eval_blocks = Vec::new();

    for epoch in 0..config.epochs {
        state.epoch = epoch;
        let mut acc = LossBreakdown::default();
        for _ in 0..steps_per_epoch {
            let pairs = sample_pairs(n, config.batch_size, &mut state.rng);
            let bd = train_step(pipeline, &mut state, regressor, config, &pairs)?;
            let line = serde_json::json!({
                "step": state.step,
                "epoch": epoch,
                "cycle": bd.cycle,
                "flow": bd.flow,
                "adversarial_g": bd.adversarial_g,
                "adversarial_d": bd.adversarial_d,
                "pose": bd.pose,
                "shape": bd.shape,
                "appearance": bd.appearance,
                "total": bd.total,
            });
            writeln!(log, "{line}").map_err(io_err(&log_path))?;
            acc.cycle += bd.cycle;
            acc.flow += bd.flow;
            acc.adversarial_g += bd.adversarial_g;
            acc.adversarial_d += bd.adversarial_d;
            acc.pose += bd.pose;
            acc.shape += bd.shape;
            acc.appearance += bd.appearance;
            acc.total += bd.total;
        }
        let k = steps_per_epoch as f64;
        acc.cycle /= k;
        acc.flow /= k;
        acc.adversarial_g /= k;
        acc.adversarial_d /= k;
        acc.pose /= k;
        acc.shape /= k;
        acc.appearance /= k;
        acc.total /= k;
        epoch_losses.push(acc);

        if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
            state.save(&run_dir.join(format!("ckpt_epoch{:04}.ckpt", epoch + 1)), config)?;
            dump_sample_grid(pipeline, &state, &run_dir.join(format!("samples_epoch{:04}.png", epoch + 1)))?;
        }
        if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 {
            eval_blocks.push(evaluate(pipeline, &state, regressor, config, epoch + 1)?);
        }
    }

    // final checkpoint, sample grid, and metric block
    state.save(&run_dir.join("ckpt_final.ckpt"), config)?;
    dump_sample_grid(pipeline, &state, &run_dir.join("samples_final.png"))?;
    if !pipeline.eval_pairs.is_empty() {
        eval_blocks.push(evaluate(pipeline, &state, regressor, config, config.epochs)?);
    }

    assert_eq!(
        regressor.store.fingerprint(),
        f3d_before,
        "frozen regressor weights must not change during training"
    );

    let report = TrainReport {
        epochs_run: config.epochs,
        epoch_losses,
        flow_pretrain_losses: flow_losses,
        eval_blocks,
    };
    let report_path = run_dir.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report).unwrap())
        .map_err(io_err(&report_path))?;
    Ok((state, report))
}

/// Tile (source, generated-target, re-generated-source) triples for the
/// first few training pairs into one PNG.
pub fn dump_sample_grid(
    pipeline: &Pipeline,
    state: &TrainState,
    path: &Path,
) -> Result<(), TrainError> {
    let res = pipeline.resolution;
    let n = pipeline.train.len().min(4);
    if n < 2 {
        return Ok(());
    }
    let mut rows = Vec::new();
    for i in 0..n {
        let s = &pipeline.train[i];
        let t = &pipeline.train[(i + 1) % n];
        let i_hat_t =
            state
                .generator
                .generate_eval(&s.image, &s.heatmap, &s.rendering, &t.heatmap)?;
        let i_hat_s =
            state
                .generator
                .generate_eval(&i_hat_t, &t.heatmap, &t.rendering, &s.heatmap)?;
        rows.push([s.image.clone(), t.rendering.clone(), i_hat_t, i_hat_s]);
    }
    let cols = 4;
    let (gw, gh) = (cols * res, n * res);
    let mut grid = vec![0.0f64; 3 * gw * gh];
    for (ri, row) in rows.iter().enumerate() {
        for (ci, img) in row.iter().enumerate() {
            for c in 0..3 {
                for y in 0..res {
                    for x in 0..res {
                        grid[c * gw * gh + (ri * res + y) * gw + ci * res + x] =
                            img.data()[c * res * res + y * res + x];
                    }
                }
            }
        }
    }
    imageio::save_png(path, &grid, gw, gh)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// ablation suite
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub seed: u64,
    pub fid: f64,
    pub lpips_analog: f64,
    pub oks: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "{:<18}{:>6}{:>12}{:>12}{:>10}\n",
            "configuration", "seed", "FID", "LPIPS", "OKS"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<18}{:>6}{:>12.4}{:>12.4}{:>10.4}\n",
                r.label, r.seed, r.fid, r.lpips_analog, r.oks
            ));
        }
        out
    }

    /// For each ablation, the number of seeds where the full model's FID
    /// is strictly lower.
    pub fn full_wins(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let labels = ["no_shape", "no_pose", "no_appearance", "unconditional_d"];
        for lab in labels {
            let mut wins = 0usize;
            let mut total = 0usize;
            for r in self.rows.iter().filter(|r| r.label == lab) {
                if let Some(full) = self
                    .rows
                    .iter()
                    .find(|f| f.label == "full" && f.seed == r.seed)
                {
                    total += 1;
                    if full.fid < r.fid {
                        wins += 1;
                    }
                }
            }
            out.push((lab.to_string(), wins, total));
        }
        out
    }
}

pub const ABLATION_VARIANTS: [AblationFlags; 5] = [
    AblationFlags {
        no_shape: false,
        no_pose: false,
        no_appearance: false,
        unconditional_d: false,
    },
    AblationFlags {
        no_shape: true,
        no_pose: false,
        no_appearance: false,
        unconditional_d: false,
    },
    AblationFlags {
        no_shape: false,
        no_pose: true,
        no_appearance: false,
        unconditional_d: false,
    },
    AblationFlags {
        no_shape: false,
        no_pose: false,
        no_appearance: true,
        unconditional_d: false,
    },
    AblationFlags {
        no_shape: false,
        no_pose: false,
        no_appearance: false,
        unconditional_d: true,
    },
];

/// Train the full model plus the four single-knockout variants per seed.
pub fn run_ablation_suite(
    pipeline: &Pipeline,
    regressor: &Regressor,
    base: &TrainConfig,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<AblationTable, TrainError> {
    assert!(!seeds.is_empty(), "ablation suite needs at least one seed");
    let mut rows = Vec::new();
    for &seed in seeds {
        for variant in ABLATION_VARIANTS {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.ablation = variant;
            let label = variant.label().to_string();
            let run_dir = out_dir.join(format!("{label}_seed{seed}"));
            let (_, report) = train(pipeline, regressor, &cfg, &run_dir)?;
            let last = report
                .eval_blocks
                .last()
                .cloned()
                .ok_or_else(|| TrainError::Config("no eval block produced".into()))?;
            rows.push(AblationRow {
                label,
                seed,
                fid: last.fid,
                lpips_analog: last.lpips_analog,
                oks: last.oks,
            });
        }
    }
    let table = AblationTable { rows };
    let path = out_dir.join("ablation_table.json");
    fs::write(&path, serde_json::to_string_pretty(&table).unwrap()).map_err(io_err(&path))?;
    let txt = out_dir.join("ablation_table.txt");
    fs::write(&txt, table.render_text()).map_err(io_err(&txt))?;
    Ok(table)
}
