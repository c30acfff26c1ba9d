//! Image-to-body regressor: a convolutional encoder that maps an RGB
//! image to shape coefficients, per-joint 6D rotations, and a
//! weak-perspective camera. Trained supervised on synthetic ground truth
//! and kept frozen inside reposing training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use repose_autograd::{
    abs, adam_step, add, apply_buffer_writes, leaky_relu, mean, mean_spatial, mul, relu, reshape,
    scale, sub, AdamConfig, Conv2d, Linear, ParamStore, Session, Tape, Tensor, Var,
};
use repose_core::bodymodel::{BodyParams, CameraParams, NUM_BETAS, NUM_JOINTS};
use repose_core::rotmath::Mat3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rotvars::{geodesic_angle_vars, rot6d_to_matrix_vars};

pub const REGRESSOR_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("wrong resolution: regressor expects {expected}, got {got}")]
    WrongResolution { expected: usize, got: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] repose_autograd::io::CheckpointError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub resolution: usize,
    pub base_width: usize,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            base_width: 16,
            seed: 23,
        }
    }
}

/// Raw graph-level outputs for a batch.
pub struct RegressorVars {
    pub betas: Var,
    /// (n, K*6) raw 6D parameters.
    pub rot6d: Var,
    /// (n*K, 9) row-major rotation matrices.
    pub rot_matrices: Var,
    /// (n, 3): scale, tx, ty.
    pub camera: Var,
}

/// Concrete per-image output.
#[derive(Clone, Debug)]
pub struct RegressorOutput {
    pub betas: Vec<f64>,
    pub rotations: Vec<Mat3>,
    pub camera: CameraParams,
}

impl RegressorOutput {
    pub fn to_params(&self) -> BodyParams {
        BodyParams {
            betas: self.betas.clone(),
            rotations: self.rotations.clone(),
            camera: self.camera,
        }
    }
}

pub struct Regressor {
    pub store: ParamStore,
    pub config: RegressorConfig,
    convs: Vec<Conv2d>,
    fc: Linear,
    head_beta: Linear,
    head_rot: Linear,
    head_cam: Linear,
}

impl Regressor {
    pub fn new(config: RegressorConfig) -> Self {
        assert!(
            config.resolution >= 32 && config.resolution % 32 == 0,
            "resolution must be a multiple of 32"
        );
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let w = config.base_width;
        // five stride-2 blocks, then global pooling and dense heads
        let widths = [3, w, 2 * w, 2 * w, 4 * w, 4 * w];
        let convs: Vec<Conv2d> = (0..5)
            .map(|i| {
                Conv2d::new(
                    &mut store,
                    &format!("conv{i}"),
                    widths[i],
                    widths[i + 1],
                    3,
                    2,
                    1,
                    false,
                    &mut rng,
                )
            })
            .collect();
        let feat = 4 * w;
        let fc = Linear::new(&mut store, "fc", feat, feat, false, &mut rng);
        let head_beta = Linear::with_gain(&mut store, "head_beta", feat, NUM_BETAS, false, 0.1, &mut rng);
        let head_rot = Linear::with_gain(
            &mut store,
            "head_rot",
            feat,
            NUM_JOINTS * 6,
            false,
            0.05,
            &mut rng,
        );
        let head_cam = Linear::with_gain(&mut store, "head_cam", feat, 3, false, 0.1, &mut rng);
        let mut net = Self {
            store,
            config,
            convs,
            fc,
            head_beta,
            head_rot,
            head_cam,
        };
        net.bias_rotations_to_identity();
        net.bias_camera_to_unit();
        net
    }

    /// The 6D identity (1,0,0, 0,1,0) as the rotation head's bias keeps
    /// early outputs valid and far from the degenerate zone.
    fn bias_rotations_to_identity(&mut self) {
        let mut bias = vec![0.0f64; NUM_JOINTS * 6];
        for k in 0..NUM_JOINTS {
            bias[k * 6] = 1.0;
            bias[k * 6 + 4] = 1.0;
        }
        self.store
            .set_value(self.head_rot.b, Tensor::from_vec(&[NUM_JOINTS * 6], bias));
    }

    fn bias_camera_to_unit(&mut self) {
        self.store
            .set_value(self.head_cam.b, Tensor::from_vec(&[3], vec![1.0, 0.0, 0.0]));
    }

    pub fn check_resolution(&self, h: usize, w: usize) -> Result<(), RegressError> {
        if h != self.config.resolution || w != self.config.resolution {
            return Err(RegressError::WrongResolution {
                expected: self.config.resolution,
                got: h.max(w),
            });
        }
        Ok(())
    }

    /// Forward a batch (n,3,r,r) inside an existing session.
    pub fn forward(&self, s: &Session, images: Var) -> RegressorVars {
        let t = s.tape;
        let shape = t.shape(images);
        assert_eq!(shape[1], 3);
        self.check_resolution(shape[2], shape[3]).expect("resolution checked by caller");
        let mut x = images;
        for conv in &self.convs {
            x = leaky_relu(t, conv.forward(s, x), 0.1);
        }
        let pooled = mean_spatial(t, x);
        let h = relu(t, self.fc.forward(s, pooled));
        let betas = self.head_beta.forward(s, h);
        let rot6d = self.head_rot.forward(s, h);
        let camera = self.head_cam.forward(s, h);
        let n = shape[0];
        let rot_rows = reshape(t, rot6d, &[n * NUM_JOINTS, 6]);
        let rot_matrices = rot6d_to_matrix_vars(t, rot_rows);
        RegressorVars {
            betas,
            rot6d,
            rot_matrices,
            camera,
        }
    }

    /// Deterministic single-image inference (no gradients kept).
    pub fn infer(&self, image: &Tensor) -> Result<RegressorOutput, RegressError> {
        let shape = image.shape();
        assert_eq!(shape.len(), 3, "expected (3,h,w)");
        self.check_resolution(shape[1], shape[2])?;
        let tape = Tape::new();
        let session = Session::new(&tape, &self.store, false);
        let x = tape.constant(image.reshaped(&[1, 3, shape[1], shape[2]]));
        let out = self.forward(&session, x);
        let betas = tape.value(out.betas).data().to_vec();
        let mats = tape.value(out.rot_matrices);
        let cam = tape.value(out.camera);
        let rotations: Vec<Mat3> = (0..NUM_JOINTS)
            .map(|k| {
                let d = &mats.data()[k * 9..(k + 1) * 9];
                Mat3::from_flat(d)
            })
            .collect();
        Ok(RegressorOutput {
            betas,
            rotations,
            camera: CameraParams {
                scale: cam.data()[0].max(1e-3),
                t: [cam.data()[1], cam.data()[2]],
            },
        })
    }
}

/// Supervised sample: image plus ground truth.
pub struct LabelledSample {
    pub image: Tensor,
    pub betas: Vec<f64>,
    /// (K*9) row-major ground-truth rotation matrices.
    pub rot_matrices: Vec<f64>,
    pub camera: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub train_losses: Vec<f64>,
    /// Median per-joint geodesic error (degrees) on the validation split
    /// at each epoch.
    pub val_geodesic_deg: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainRegressorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Final learning rate; decayed log-linearly across epochs.
    pub lr_final: f64,
    pub w_beta: f64,
    pub w_rot: f64,
    pub w_cam: f64,
    pub seed: u64,
}

impl Default for TrainRegressorConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 1e-3,
            lr_final: 1e-4,
            w_beta: 1.0,
            w_rot: 2.0,
            w_cam: 1.0,
            seed: 5,
        }
    }
}

fn stack_batch(samples: &[LabelledSample], idx: &[usize]) -> (Tensor, Tensor, Tensor, Tensor) {
    let r = samples[idx[0]].image.shape()[1];
    let mut imgs = Vec::with_capacity(idx.len() * 3 * r * r);
    let mut betas = Vec::new();
    let mut rots = Vec::new();
    let mut cams = Vec::new();
    for &i in idx {
        imgs.extend_from_slice(samples[i].image.data());
        betas.extend_from_slice(&samples[i].betas);
        rots.extend_from_slice(&samples[i].rot_matrices);
        cams.extend_from_slice(&samples[i].camera);
    }
    (
        Tensor::from_vec(&[idx.len(), 3, r, r], imgs),
        Tensor::from_vec(&[idx.len(), NUM_BETAS], betas),
        Tensor::from_vec(&[idx.len() * NUM_JOINTS, 9], rots),
        Tensor::from_vec(&[idx.len(), 3], cams),
    )
}

/// Training loss on a batch: L1 on betas, geodesic on rotations, L2 on
/// the camera triple.
fn batch_loss(
    tape: &Tape,
    out: &RegressorVars,
    betas_gt: Var,
    rots_gt: Var,
    cams_gt: Var,
    cfg: &TrainRegressorConfig,
) -> Var {
    let beta_l1 = mean(tape, abs(tape, sub(tape, out.betas, betas_gt)));
    let geo = mean(tape, geodesic_angle_vars(tape, out.rot_matrices, rots_gt));
    let cam_diff = sub(tape, out.camera, cams_gt);
    let cam_l2 = mean(tape, mul(tape, cam_diff, cam_diff));
    let total = add(
        tape,
        add(
            tape,
            scale(tape, beta_l1, cfg.w_beta),
            scale(tape, geo, cfg.w_rot),
        ),
        scale(tape, cam_l2, cfg.w_cam),
    );
    total
}

/// Median per-joint geodesic error in degrees over a labelled set.
pub fn median_geodesic_deg(net: &Regressor, samples: &[LabelledSample]) -> f64 {
    let mut errors = Vec::with_capacity(samples.len() * NUM_JOINTS);
    for s in samples {
        let out = net.infer(&s.image).expect("resolution fixed");
        for k in 0..NUM_JOINTS {
            let d = &s.rot_matrices[k * 9..(k + 1) * 9];
            let gt = Mat3::from_flat(d);
            errors.push(repose_core::rotmath::geodesic_angle_deg(
                &out.rotations[k],
                &gt,
            ));
        }
    }
    errors.sort_by(|a, b| a.total_cmp(b));
    if errors.is_empty() {
        f64::NAN
    } else {
        errors[errors.len() / 2]
    }
}

pub fn train_regressor(
    train: &[LabelledSample],
    val: &[LabelledSample],
    net_config: RegressorConfig,
    cfg: &TrainRegressorConfig,
) -> Result<(Regressor, TrainReport), RegressError> {
    if train.is_empty() {
        return Err(RegressError::EmptyDataset);
    }
    let mut net = Regressor::new(net_config);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    let mut train_losses = Vec::new();
    let mut val_geo = Vec::new();
    for epoch in 0..cfg.epochs {
        let frac = epoch as f64 / cfg.epochs.max(1) as f64;
        let lr = cfg.lr * (cfg.lr_final / cfg.lr).powf(frac);
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let (imgs, betas, rots, cams) = stack_batch(train, chunk);
            let tape = Tape::new();
            let (loss_val, grads, writes) = {
                let session = Session::new(&tape, &net.store, true);
                let x = tape.constant(imgs);
                let out = net.forward(&session, x);
                let b = tape.constant(betas);
                let r = tape.constant(rots);
                let c = tape.constant(cams);
                let loss = batch_loss(&tape, &out, b, r, c, cfg);
                let loss_val = tape.value(loss).item();
                let all = tape.backward(loss);
                (loss_val, session.collect_grads(&all), session.take_buffer_writes())
            };
            apply_buffer_writes(&mut net.store, writes);
            step += 1;
            adam_step(&mut net.store, &grads, step, AdamConfig::with_lr(lr));
            epoch_loss += loss_val;
            batches += 1;
        }
        train_losses.push(epoch_loss / batches.max(1) as f64);
        if !val.is_empty() {
            val_geo.push(median_geodesic_deg(&net, val));
        }
    }
    Ok((
        net,
        TrainReport {
            epochs: cfg.epochs,
            train_losses,
            val_geodesic_deg: val_geo,
        },
    ))
}

pub fn save_regressor(
    net: &Regressor,
    path: &std::path::Path,
    extra_meta: serde_json::Value,
) -> Result<(), RegressError> {
    let meta = serde_json::json!({
        "kind": "regressor",
        "config": net.config,
        "extra": extra_meta,
    });
    repose_autograd::io::save_checkpoint(path, REGRESSOR_VERSION, &[("f3d", &net.store)], &meta)?;
    Ok(())
}

pub fn load_regressor(path: &std::path::Path) -> Result<Regressor, RegressError> {
    let raw = repose_autograd::io::load_checkpoint(path)?;
    let config: RegressorConfig = serde_json::from_value(raw.meta["config"].clone())
        .map_err(repose_autograd::io::CheckpointError::Meta)?;
    let mut net = Regressor::new(config);
    raw.load_into("f3d", &mut net.store)?;
    Ok(net)
}

/// Pose loss gradient flow requires sum over axis 1 of (n,9) entries;
/// re-export the output-shape contract for tests.
pub fn output_dims() -> (usize, usize, usize) {
    (NUM_BETAS, NUM_JOINTS, 3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use repose_core::rotmath::axis_angle_to_matrix;

    fn synth_sample(seed: u64, res: usize) -> LabelledSample {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let image = Tensor::from_vec(
            &[3, res, res],
            (0..3 * res * res).map(|_| rng.random_range(0.0..1.0)).collect(),
        );
        let betas: Vec<f64> = (0..NUM_BETAS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut rots = Vec::new();
        for _ in 0..NUM_JOINTS {
            let aa = [
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            ];
            rots.extend_from_slice(&axis_angle_to_matrix(aa).unwrap().flat());
        }
        LabelledSample {
            image,
            betas,
            rot_matrices: rots,
            camera: [1.0, 0.05, -0.02],
        }
    }

    fn small_config() -> RegressorConfig {
        RegressorConfig {
            resolution: 32,
            base_width: 8,
            seed: 7,
        }
    }

    #[test]
    fn deterministic_inference_and_shape_contract() {
        let net = Regressor::new(small_config());
        let img = synth_sample(1, 32).image;
        let a = net.infer(&img).unwrap();
        let b = net.infer(&img).unwrap();
        assert_eq!(a.betas, b.betas);
        assert_eq!(a.betas.len(), NUM_BETAS);
        assert_eq!(a.rotations.len(), NUM_JOINTS);
        for r in &a.rotations {
            assert!(r.rotation_defect() < 1e-9, "emitted rotation not orthonormal");
        }
    }

    #[test]
    fn wrong_resolution_rejected() {
        let net = Regressor::new(small_config());
        let img = Tensor::zeros(&[3, 64, 64]);
        assert!(matches!(
            net.infer(&img),
            Err(RegressError::WrongResolution { .. })
        ));
    }

    #[test]
    fn memorizes_single_sample() {
        // capacity sanity: one sample, enough epochs, loss near zero
        let sample = synth_sample(2, 32);
        let train = vec![sample];
        let cfg = TrainRegressorConfig {
            epochs: 600,
            batch_size: 1,
            lr: 3e-3,
            lr_final: 1e-6,
            ..Default::default()
        };
        let (_, report) = train_regressor(&train, &[], small_config(), &cfg).unwrap();
        let last = *report.train_losses.last().unwrap();
        assert!(last < 1e-3, "memorization loss {last}");
    }

    #[test]
    fn empty_dataset_rejected() {
        let cfg = TrainRegressorConfig::default();
        assert!(matches!(
            train_regressor(&[], &[], small_config(), &cfg),
            Err(RegressError::EmptyDataset)
        ));
    }

    #[test]
    fn gradient_flows_to_input_pixels() {
        // finite differences vs backprop for d||rot6d||^2 / d pixel
        let net = Regressor::new(small_config());
        let img = synth_sample(3, 32).image;

        let eval = |image: &Tensor| -> f64 {
            let tape = Tape::new();
            let session = Session::new(&tape, &net.store, false);
            let x = tape.constant(image.reshaped(&[1, 3, 32, 32]));
            let out = net.forward(&session, x);
            let sq = mul(&tape, out.rot6d, out.rot6d);
            tape.value(repose_autograd::sum(&tape, sq)).item()
        };

        let tape = Tape::new();
        let session = Session::new(&tape, &net.store, false);
        let x = tape.leaf(img.reshaped(&[1, 3, 32, 32]));
        let out = net.forward(&session, x);
        let sq = mul(&tape, out.rot6d, out.rot6d);
        let loss = repose_autograd::sum(&tape, sq);
        let grads = tape.backward(loss);
        let g = grads.get(x).unwrap().clone();

        let h = 1e-5;
        let mut checked = 0;
        for c in [10usize, 333, 777, 1500, 2901] {
            let mut p = img.clone();
            p.data_mut()[c] += h;
            let mut m = img.clone();
            m.data_mut()[c] -= h;
            let fd = (eval(&p) - eval(&m)) / (2.0 * h);
            let an = g.data()[c];
            let denom = fd.abs().max(an.abs()).max(1e-10);
            assert!(
                ((fd - an) / denom).abs() < 1e-3,
                "pixel {c}: fd {fd} vs {an}"
            );
            checked += 1;
        }
        assert_eq!(checked, 5);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join(format!("repose_f3d_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f3d.ckpt");
        let net = Regressor::new(small_config());
        save_regressor(&net, &path, serde_json::json!({"val_geodesic_deg": 4.2})).unwrap();
        let loaded = load_regressor(&path).unwrap();
        assert_eq!(net.store.fingerprint(), loaded.store.fingerprint());
        let side = repose_autograd::io::sidecar_path(&path);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(side).unwrap()).unwrap();
        assert_eq!(meta["extra"]["val_geodesic_deg"], 4.2);
        std::fs::remove_dir_all(&dir).ok();
    }
}
