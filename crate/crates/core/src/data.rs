//! Procedural synthetic-human dataset: unpaired training tuples
//! (image, keypoints, rendering) plus a paired eval split whose ground
//! truth is stored in the index but never surfaced to the trainer.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bodymodel::{
    forward, BodyParams, BodyTemplate, CameraParams, Segment, NUM_BETAS, NUM_JOINTS,
};
use crate::rotmath::{Mat3, Vec3g};
use crate::imageio;
use crate::keypoints::KeypointSet;
use crate::render::{project_keypoints, render_colorwheel, render_shaded, Camera, Keypoint};
use crate::rotmath::axis_angle_to_matrix;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset config invalid: {0}")]
    InvalidConfig(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image failure: {0}")]
    Image(#[from] imageio::ImageIoError),
    #[error("render failure: {0}")]
    Render(#[from] crate::render::RenderError),
    #[error("body failure: {0}")]
    Body(#[from] crate::bodymodel::BodyError),
    #[error("index parse failure on {path}: {message}")]
    Index { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Stripe pattern applied in screen space to the torso segments.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StripeSpec {
    pub period_px: f64,
    pub angle_rad: f64,
    /// Multiplier for the dark stripe phase.
    pub dark_factor: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AppearanceSpec {
    /// Base colour per segment, indexed by `Segment::index()`.
    pub segment_colors: Vec<[f64; 3]>,
    pub stripes: Option<StripeSpec>,
    pub background: [f64; 3],
    pub skin: [f64; 3],
}

impl AppearanceSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.segment_colors.len() != Segment::ALL.len() {
            return Err(DataError::InvalidConfig(format!(
                "expected {} segment colors",
                Segment::ALL.len()
            )));
        }
        let ok = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !self.segment_colors.iter().all(ok) || !ok(&self.background) || !ok(&self.skin) {
            return Err(DataError::InvalidConfig("colour out of [0,1]".into()));
        }
        if let Some(s) = &self.stripes {
            if s.period_px < 2.0 {
                return Err(DataError::InvalidConfig(format!(
                    "stripe period {} below 2 px",
                    s.period_px
                )));
            }
        }
        Ok(())
    }
}

/// Per-joint axis-angle sampling ranges in degrees: (x, y, z) min/max.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseRanges(pub Vec<[[f64; 2]; 3]>);

impl Default for PoseRanges {
    fn default() -> Self {
        let r = |xl: f64, xh: f64, yl: f64, yh: f64, zl: f64, zh: f64| {
            [[xl, xh], [yl, yh], [zl, zh]]
        };
        // bend axes range widely; twist axes (invisible to sparse
        // keypoints under weak perspective) stay tight
        PoseRanges(vec![
            r(-8.0, 8.0, -90.0, 90.0, -8.0, 8.0),     // pelvis (yaw dominates)
            r(-12.0, 12.0, -10.0, 10.0, -8.0, 8.0),   // spine
            r(-2.0, 2.0, -3.0, 3.0, -2.0, 2.0),       // head
            r(-10.0, 4.0, -5.0, 5.0, -6.0, 38.0),     // l_shoulder
            r(-10.0, 4.0, -5.0, 5.0, -38.0, 6.0),     // r_shoulder
            r(-10.0, 10.0, -10.0, 10.0, -60.0, 10.0), // l_elbow
            r(-10.0, 10.0, -10.0, 10.0, -10.0, 60.0), // r_elbow
            r(-26.0, 0.0, -5.0, 5.0, -10.0, 4.0),     // l_hip
            r(-26.0, 0.0, -5.0, 5.0, -4.0, 10.0),     // r_hip
            r(0.0, 55.0, -4.0, 4.0, -4.0, 4.0),       // l_knee
            r(0.0, 55.0, -4.0, 4.0, -4.0, 4.0),       // r_knee
        ])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleConfig {
    /// Per-coefficient std for the shape Gaussian, truncated at 2 sigma.
    pub beta_sigma: Vec<f64>,
    pub pose_ranges: PoseRanges,
    /// Framing margin range as a fraction of the image per side.
    pub margin_range: [f64; 2],
    pub stripe_probability: f64,
    /// Residual twist about the bone axis for limb-root joints, degrees.
    pub limb_twist_deg: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            beta_sigma: vec![0.7; NUM_BETAS],
            pose_ranges: PoseRanges::default(),
            margin_range: [0.06, 0.12],
            stripe_probability: 0.5,
            limb_twist_deg: 3.0,
        }
    }
}

/// Truncated normal via rejection; bounded retries keep it total.
fn trunc_normal(rng: &mut ChaCha12Rng, sigma: f64) -> f64 {
    for _ in 0..64 {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * sigma;
        }
    }
    0.0
}

fn hsv(rng: &mut ChaCha12Rng, s_range: [f64; 2], v_range: [f64; 2]) -> [f64; 3] {
    let h = rng.random_range(0.0..360.0f64);
    let s = rng.random_range(s_range[0]..s_range[1]);
    let v = rng.random_range(v_range[0]..v_range[1]);
    // standard hsv -> rgb
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

pub fn sample_appearance(rng: &mut ChaCha12Rng, cfg: &SampleConfig) -> AppearanceSpec {
    let shirt = hsv(rng, [0.40, 0.90], [0.35, 0.95]);
    let pants = hsv(rng, [0.30, 0.85], [0.25, 0.85]);
    let skin_t: f64 = rng.random_range(0.0..1.0);
    let lerp = |a: f64, b: f64| a + (b - a) * skin_t;
    let skin = [lerp(0.95, 0.48), lerp(0.80, 0.34), lerp(0.68, 0.26)];
    let background = {
        let v: f64 = rng.random_range(0.75..0.95);
        let tint: f64 = rng.random_range(-0.04..0.04);
        [
            (v + tint).clamp(0.0, 1.0),
            v,
            (v - tint).clamp(0.0, 1.0),
        ]
    };
    let dim = |c: [f64; 3], f: f64| [c[0] * f, c[1] * f, c[2] * f];
    let mut segment_colors = vec![[0.0; 3]; Segment::ALL.len()];
    segment_colors[Segment::FrontTorso.index()] = shirt;
    segment_colors[Segment::BackTorso.index()] = dim(shirt, 0.82);
    segment_colors[Segment::Head.index()] = skin;
    segment_colors[Segment::LUpperArm.index()] = dim(shirt, 0.95);
    segment_colors[Segment::RUpperArm.index()] = dim(shirt, 0.95);
    segment_colors[Segment::LForearm.index()] = skin;
    segment_colors[Segment::RForearm.index()] = dim(skin, 0.97);
    segment_colors[Segment::LThigh.index()] = pants;
    segment_colors[Segment::RThigh.index()] = dim(pants, 0.96);
    segment_colors[Segment::LShin.index()] = dim(pants, 0.90);
    segment_colors[Segment::RShin.index()] = dim(pants, 0.86);
    let stripes = (rng.random_range(0.0..1.0) < cfg.stripe_probability).then(|| StripeSpec {
        period_px: rng.random_range(3.0..9.0),
        angle_rad: rng.random_range(0.0..std::f64::consts::PI),
        dark_factor: rng.random_range(0.55..0.75),
    });
    AppearanceSpec {
        segment_colors,
        stripes,
        background,
        skin,
    }
}

/// Draw one body: shape, pose, camera framing the full body, appearance.
pub fn sample_body(
    rng: &mut ChaCha12Rng,
    template: &Arc<BodyTemplate>,
    cfg: &SampleConfig,
) -> Result<(BodyParams, AppearanceSpec), DataError> {
    let betas: Vec<f64> = cfg.beta_sigma.iter().map(|&s| trunc_normal(rng, s)).collect();
    let mut rotations = Vec::with_capacity(NUM_JOINTS);
    for ranges in &cfg.pose_ranges.0 {
        let aa = [
            rng.random_range(ranges[0][0]..=ranges[0][1]).to_radians(),
            rng.random_range(ranges[1][0]..=ranges[1][1]).to_radians(),
            rng.random_range(ranges[2][0]..=ranges[2][1]).to_radians(),
        ];
        rotations.push(axis_angle_to_matrix(aa).expect("finite sample"));
    }
    // One leg acts as the straight supporting leg: its thigh stays
    // nearly rest-aligned, which pins limb length against bend-depth
    // trade-offs when fitting keypoints (and reads as a natural
    // standing pose).
    let support_left = rng.random_range(0.0..1.0) < 0.5;
    let support_hip = if support_left { 7 } else { 8 };
    let support_knee = if support_left { 9 } else { 10 };
    let tiny = |rng: &mut ChaCha12Rng| {
        axis_angle_to_matrix([
            rng.random_range(-0.03..0.03),
            rng.random_range(-0.02..0.02),
            rng.random_range(-0.03..0.03),
        ])
        .expect("finite")
    };
    rotations[support_hip] = tiny(rng);
    rotations[support_knee] = axis_angle_to_matrix([rng.random_range(0.0..0.09), 0.0, 0.0])
        .expect("finite");

    // Limb-root joints get swing-style rotations: the minimal rotation
    // reaching the sampled bone direction plus a small twist. Sparse
    // keypoints cannot observe bone twist, so generating near-minimal
    // rotations keeps the dataset's poses recoverable from keypoints.
    let rest = template.rest_joints(&betas).expect("beta count matches");
    for (joint, child) in [(3usize, 5usize), (4, 6), (7, 9), (8, 10)] {
        let bone = Vec3g([
            rest[child][0] - rest[joint][0],
            rest[child][1] - rest[joint][1],
            rest[child][2] - rest[joint][2],
        ]);
        let b_hat = bone.scale(1.0 / bone.norm());
        let v = rotations[joint].mul_vec(b_hat);
        let axis = b_hat.cross(v);
        let sin_t = axis.norm();
        let min_rot = if sin_t < 1e-9 {
            Mat3::identity()
        } else {
            let angle = sin_t.atan2(b_hat.dot(v).clamp(-1.0, 1.0));
            axis_angle_to_matrix([
                axis.0[0] / sin_t * angle,
                axis.0[1] / sin_t * angle,
                axis.0[2] / sin_t * angle,
            ])
            .expect("finite swing")
        };
        let twist = rng
            .random_range(-cfg.limb_twist_deg..=cfg.limb_twist_deg)
            .to_radians();
        let twist_rot =
            axis_angle_to_matrix([b_hat.0[0] * twist, b_hat.0[1] * twist, b_hat.0[2] * twist])
                .expect("finite twist");
        rotations[joint] = min_rot.mul_mat(&twist_rot);
    }
    let mut params = BodyParams {
        betas,
        rotations,
        camera: CameraParams::default(),
    };

    // frame the posed mesh with a randomized margin
    let mesh = forward(template, &params)?;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for v in &mesh.vertices {
        x0 = x0.min(v[0]);
        x1 = x1.max(v[0]);
        y0 = y0.min(v[1]);
        y1 = y1.max(v[1]);
    }
    let margin = rng.random_range(cfg.margin_range[0]..cfg.margin_range[1]);
    let usable = 1.0 - 2.0 * margin;
    let half = ((x1 - x0) * 0.5).max((y1 - y0) * 0.5).max(1e-3);
    let s = usable / half;
    let cx = (x0 + x1) * 0.5;
    let cy = (y0 + y1) * 0.5;
    // leftover slack allows a small off-centre jitter while keeping margin
    let slack_x = (usable - s * (x1 - x0) * 0.5).max(0.0);
    let slack_y = (usable - s * (y1 - y0) * 0.5).max(0.0);
    let jx = rng.random_range(-0.5..0.5) * slack_x / s;
    let jy = rng.random_range(-0.5..0.5) * slack_y / s;
    params.camera = CameraParams {
        scale: s,
        t: [-cx + jx, -cy + jy],
    };

    let appearance = sample_appearance(rng, cfg);
    Ok((params, appearance))
}

/// Rasterize one sample: appearance image, colour-wheel rendering,
/// projected keypoints.
pub struct RenderedSample {
    pub image: Vec<f64>,
    pub rendering: Vec<f64>,
    pub coverage: Vec<f64>,
    pub keypoints: Vec<Keypoint>,
}

pub fn render_sample(
    template: &Arc<BodyTemplate>,
    params: &BodyParams,
    appearance: &AppearanceSpec,
    resolution: usize,
) -> Result<RenderedSample, DataError> {
    appearance.validate()?;
    let mesh = forward(template, params)?;
    let cam = Camera::new(params.camera.scale, params.camera.t, resolution, resolution)?;
    let stripes = appearance.stripes.clone();
    let seg_colors = appearance.segment_colors.clone();
    let image = render_shaded(&mesh, &cam, appearance.background, move |seg, _uv, x, y| {
        let base = seg_colors[seg.index()];
        let striped = matches!(seg, Segment::FrontTorso | Segment::BackTorso);
        if striped {
            if let Some(sp) = &stripes {
                let phase = (x as f64 * sp.angle_rad.cos() + y as f64 * sp.angle_rad.sin())
                    / sp.period_px
                    * 2.0
                    * std::f64::consts::PI;
                if phase.sin() < 0.0 {
                    return [
                        base[0] * sp.dark_factor,
                        base[1] * sp.dark_factor,
                        base[2] * sp.dark_factor,
                    ];
                }
            }
        }
        base
    })?;
    let rendering = render_colorwheel(&mesh, &cam)?;
    let keypoints = project_keypoints(&mesh.joints, &cam);
    Ok(RenderedSample {
        image: image.rgb,
        rendering: rendering.rgb,
        coverage: rendering.coverage,
        keypoints,
    })
}

// ---------------------------------------------------------------------------
// dataset index
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HiddenGroundTruth {
    pub betas: Vec<f64>,
    /// Axis-angle per joint.
    pub pose_axis_angle: Vec<[f64; 3]>,
    pub camera_scale: f64,
    pub camera_t: [f64; 2],
    pub appearance: AppearanceSpec,
}

impl HiddenGroundTruth {
    pub fn to_params(&self) -> BodyParams {
        BodyParams {
            betas: self.betas.clone(),
            rotations: self
                .pose_axis_angle
                .iter()
                .map(|&aa| axis_angle_to_matrix(aa).expect("stored pose finite"))
                .collect(),
            camera: CameraParams {
                scale: self.camera_scale,
                t: self.camera_t,
            },
        }
    }

    fn from_params(params: &BodyParams, appearance: &AppearanceSpec) -> Self {
        Self {
            betas: params.betas.clone(),
            pose_axis_angle: params
                .rotations
                .iter()
                .map(crate::rotmath::matrix_to_axis_angle)
                .collect(),
            camera_scale: params.camera.scale,
            camera_t: params.camera.t,
            appearance: appearance.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub img: String,
    pub ren: String,
    pub keypoints: KeypointSet,
    /// Evaluation-only ground truth; the trainer-facing loader never
    /// exposes this.
    pub hidden_gt: HiddenGroundTruth,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalGroup {
    pub subject: usize,
    /// Indices into the eval record list, one per pose.
    pub samples: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub version: u32,
    pub seed: u64,
    pub resolution: usize,
    pub train: Vec<SampleRecord>,
    pub eval: Vec<SampleRecord>,
    pub eval_groups: Vec<EvalGroup>,
}

impl DatasetIndex {
    pub fn load(root: &Path) -> Result<Self, DataError> {
        let path = root.join("index.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| DataError::Index {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, root: &Path) -> Result<(), DataError> {
        let path = root.join("index.json");
        let text = serde_json::to_string_pretty(self).expect("index serializes");
        fs::write(&path, text).map_err(io_err(&path))
    }
}

/// What the trainer is allowed to see: image, keypoints, rendering.
#[derive(Clone, Debug, Serialize)]
pub struct TrainerSample {
    pub img: String,
    pub ren: String,
    pub keypoints: KeypointSet,
}

/// Trainer-facing view of a split; ground truth stays behind.
pub fn trainer_view(records: &[SampleRecord]) -> Vec<TrainerSample> {
    records
        .iter()
        .map(|r| TrainerSample {
            img: r.img.clone(),
            ren: r.ren.clone(),
            keypoints: r.keypoints.clone(),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub n_train: usize,
    /// Number of eval subjects; each is rendered in several poses and
    /// pairs are formed within a subject.
    pub n_eval_pairs: usize,
    pub poses_per_eval_subject: usize,
    pub seed: u64,
    pub resolution: usize,
    pub sample: SampleConfig,
}

fn derive_rng(seed: u64, tag: &str, a: u64, b: u64) -> ChaCha12Rng {
    // stable stream derivation: fnv over (seed, tag, indices)
    let mut h = 0xcbf29ce484222325u64;
    let mut eat = |bytes: &[u8]| {
        for &x in bytes {
            h ^= x as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&seed.to_le_bytes());
    eat(tag.as_bytes());
    eat(&a.to_le_bytes());
    eat(&b.to_le_bytes());
    ChaCha12Rng::seed_from_u64(h)
}

/// Generate the dataset tree:
/// `<root>/{train,eval}/img_%06d.png`, `ren_%06d.png`, and `index.json`.
pub fn build_dataset(
    template: &Arc<BodyTemplate>,
    cfg: &DatasetConfig,
    root: &Path,
) -> Result<DatasetIndex, DataError> {
    if cfg.n_train < 1 {
        return Err(DataError::InvalidConfig("n_train must be >= 1".into()));
    }
    if cfg.resolution < 16 {
        return Err(DataError::InvalidConfig(format!(
            "resolution {} too small",
            cfg.resolution
        )));
    }
    let train_dir = root.join("train");
    let eval_dir = root.join("eval");
    fs::create_dir_all(&train_dir).map_err(io_err(&train_dir))?;
    fs::create_dir_all(&eval_dir).map_err(io_err(&eval_dir))?;

    // describe all samples first, then render in parallel
    enum Desc {
        Train { idx: usize },
        Eval { subject: usize, pose: usize, idx: usize },
    }
    let mut descs = Vec::new();
    for i in 0..cfg.n_train {
        descs.push(Desc::Train { idx: i });
    }
    let mut eval_groups = Vec::new();
    let mut eval_idx = 0usize;
    for s in 0..cfg.n_eval_pairs {
        let mut group = EvalGroup {
            subject: s,
            samples: Vec::new(),
        };
        for p in 0..cfg.poses_per_eval_subject {
            group.samples.push(eval_idx);
            descs.push(Desc::Eval {
                subject: s,
                pose: p,
                idx: eval_idx,
            });
            eval_idx += 1;
        }
        eval_groups.push(group);
    }

    let results: Result<Vec<(bool, usize, SampleRecord)>, DataError> = descs
        .par_iter()
        .map(|d| -> Result<(bool, usize, SampleRecord), DataError> {
            let (is_train, idx, params, appearance) = match d {
                Desc::Train { idx } => {
                    let mut rng = derive_rng(cfg.seed, "train", *idx as u64, 0);
                    let (params, appearance) = sample_body(&mut rng, template, &cfg.sample)?;
                    (true, *idx, params, appearance)
                }
                Desc::Eval { subject, pose, idx } => {
                    // identity (shape + appearance) from the subject stream,
                    // pose/camera from the per-pose stream
                    let mut rng_id = derive_rng(cfg.seed, "eval_subject", *subject as u64, 0);
                    let (id_params, appearance) =
                        sample_body(&mut rng_id, template, &cfg.sample)?;
                    let mut rng_pose =
                        derive_rng(cfg.seed, "eval_pose", *subject as u64, *pose as u64);
                    let (pose_params, _) = sample_body(&mut rng_pose, template, &cfg.sample)?;
                    let params = BodyParams {
                        betas: id_params.betas.clone(),
                        rotations: pose_params.rotations.clone(),
                        camera: pose_params.camera,
                    };
                    // reframe for the shaped body (framing used pose-stream betas)
                    let mut params = params;
                    reframe(template, &mut params, &mut derive_rng(
                        cfg.seed,
                        "eval_frame",
                        *subject as u64,
                        *pose as u64,
                    ), &cfg.sample)?;
                    (false, *idx, params, appearance)
                }
            };
            let rendered = render_sample(template, &params, &appearance, cfg.resolution)?;
            let split = if is_train { "train" } else { "eval" };
            let img_rel = format!("{split}/img_{idx:06}.png");
            let ren_rel = format!("{split}/ren_{idx:06}.png");
            imageio::save_png(&root.join(&img_rel), &rendered.image, cfg.resolution, cfg.resolution)?;
            imageio::save_png(&root.join(&ren_rel), &rendered.rendering, cfg.resolution, cfg.resolution)?;
            let record = SampleRecord {
                id: idx,
                img: img_rel,
                ren: ren_rel,
                keypoints: KeypointSet::new(&rendered.keypoints, cfg.resolution, cfg.resolution),
                hidden_gt: HiddenGroundTruth::from_params(&params, &appearance),
            };
            Ok((is_train, idx, record))
        })
        .collect();

    let mut train = Vec::with_capacity(cfg.n_train);
    let mut eval = Vec::with_capacity(eval_idx);
    let mut results = results?;
    results.sort_by_key(|(is_train, idx, _)| (!is_train, *idx));
    for (is_train, _, rec) in results {
        if is_train {
            train.push(rec);
        } else {
            eval.push(rec);
        }
    }

    let index = DatasetIndex {
        version: DATASET_VERSION,
        seed: cfg.seed,
        resolution: cfg.resolution,
        train,
        eval,
        eval_groups,
    };
    index.save(root)?;
    Ok(index)
}

/// Recompute the camera so the posed, shaped body is fully framed.
fn reframe(
    template: &Arc<BodyTemplate>,
    params: &mut BodyParams,
    rng: &mut ChaCha12Rng,
    cfg: &SampleConfig,
) -> Result<(), DataError> {
    let mesh = forward(template, params)?;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for v in &mesh.vertices {
        x0 = x0.min(v[0]);
        x1 = x1.max(v[0]);
        y0 = y0.min(v[1]);
        y1 = y1.max(v[1]);
    }
    let margin = rng.random_range(cfg.margin_range[0]..cfg.margin_range[1]);
    let usable = 1.0 - 2.0 * margin;
    let half = ((x1 - x0) * 0.5).max((y1 - y0) * 0.5).max(1e-3);
    let s = usable / half;
    params.camera = CameraParams {
        scale: s,
        t: [-(x0 + x1) * 0.5, -(y0 + y1) * 0.5],
    };
    Ok(())
}

/// Resolve a record's image paths against the dataset root.
pub fn resolve(root: &Path, rel: &str) -> PathBuf {
    root.join(rel)
}
