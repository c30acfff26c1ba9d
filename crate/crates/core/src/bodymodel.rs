//! Desk-scale parametric body: template + shape blendshapes + joint
//! regression + linear blend skinning, with identity shape factored from
//! articulated pose.
//!
//! The template is procedural (capsule-like tube segments). Faces never
//! mix segment labels: the torso tube is built from two arcs whose seam
//! columns are duplicated and co-located, so the front/back torso split
//! is exact at the face level. The pelvis rest joint sits at the origin
//! for every shape coefficient, which makes global-rotation equivariance
//! of the forward function exact rather than approximate.

use std::sync::Arc;

use thiserror::Error;

use crate::real::Real;
use crate::rotmath::{Mat3, Mat3g, Vec3g};

pub const NUM_JOINTS: usize = 11;
pub const NUM_BETAS: usize = 4;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "spine",
    "head",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
];

/// parent[k] for the kinematic chain; pelvis is the root.
pub const JOINT_PARENTS: [i32; NUM_JOINTS] = [-1, 0, 1, 1, 1, 3, 4, 0, 0, 7, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Segment {
    FrontTorso,
    BackTorso,
    Head,
    LUpperArm,
    RUpperArm,
    LForearm,
    RForearm,
    LThigh,
    RThigh,
    LShin,
    RShin,
}

impl Segment {
    pub const ALL: [Segment; 11] = [
        Segment::FrontTorso,
        Segment::BackTorso,
        Segment::Head,
        Segment::LUpperArm,
        Segment::RUpperArm,
        Segment::LForearm,
        Segment::RForearm,
        Segment::LThigh,
        Segment::RThigh,
        Segment::LShin,
        Segment::RShin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Segment::FrontTorso => "front_torso",
            Segment::BackTorso => "back_torso",
            Segment::Head => "head",
            Segment::LUpperArm => "l_upper_arm",
            Segment::RUpperArm => "r_upper_arm",
            Segment::LForearm => "l_forearm",
            Segment::RForearm => "r_forearm",
            Segment::LThigh => "l_thigh",
            Segment::RThigh => "r_thigh",
            Segment::LShin => "l_shin",
            Segment::RShin => "r_shin",
        }
    }

    pub fn from_name(name: &str) -> Option<Segment> {
        Segment::ALL.iter().copied().find(|s| s.name() == name)
    }

    pub fn index(self) -> usize {
        Segment::ALL.iter().position(|&s| s == self).unwrap()
    }
}

#[derive(Debug, Error)]
pub enum BodyError {
    #[error("invalid body config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown segment name: {0}")]
    UnknownSegment(String),
    #[error("template file parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyConfig {
    /// Approximate vertex budget; ring/sector counts scale to meet it.
    pub target_vertices: usize,
    pub n_betas: usize,
    pub n_joints: usize,
}

impl Default for BodyConfig {
    fn default() -> Self {
        Self {
            target_vertices: 560,
            n_betas: NUM_BETAS,
            n_joints: NUM_JOINTS,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BodyTemplate {
    /// Rest vertices, pelvis at the origin. N x 3.
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    /// UV in [0,1]^2.
    pub uv: Vec<[f64; 2]>,
    /// Shape basis: n_betas offset fields of N x 3.
    pub shape_basis: Vec<Vec<[f64; 3]>>,
    /// Dense joint regressor, K x N, rows sum to 1.
    pub joint_regressor: Vec<Vec<f64>>,
    /// Skinning weights, N x K, convex rows.
    pub skin_weights: Vec<Vec<f64>>,
    pub labels: Vec<Segment>,
    pub parents: [i32; NUM_JOINTS],
    /// Sparse form of the regressor rows: (vertex index, weight).
    regressor_sparse: Vec<Vec<(usize, f64)>>,
    /// Sparse skinning: per vertex, (joint, weight) pairs.
    skin_sparse: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraParams {
    /// Weak-perspective scale (applied to metres + in-plane offset).
    pub scale: f64,
    /// In-plane translation applied before scaling, in model units.
    pub t: [f64; 2],
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            scale: 1.0,
            t: [0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug)]
pub struct BodyParams {
    pub betas: Vec<f64>,
    /// Parent-relative joint rotations; index 0 is the global (pelvis)
    /// orientation.
    pub rotations: Vec<Mat3>,
    pub camera: CameraParams,
}

impl BodyParams {
    pub fn rest(template: &BodyTemplate) -> Self {
        let _ = template;
        Self {
            betas: vec![0.0; NUM_BETAS],
            rotations: vec![Mat3::identity(); NUM_JOINTS],
            camera: CameraParams::default(),
        }
    }

    pub fn validate(&self, template: &BodyTemplate) -> Result<(), BodyError> {
        if self.betas.len() != template.shape_basis.len() {
            return Err(BodyError::DimensionMismatch(format!(
                "expected {} betas, got {}",
                template.shape_basis.len(),
                self.betas.len()
            )));
        }
        if self.rotations.len() != NUM_JOINTS {
            return Err(BodyError::DimensionMismatch(format!(
                "expected {} rotations, got {}",
                NUM_JOINTS,
                self.rotations.len()
            )));
        }
        for (i, r) in self.rotations.iter().enumerate() {
            if r.rotation_defect() > 1e-6 {
                return Err(BodyError::DimensionMismatch(format!(
                    "rotation {i} is not orthonormal (defect {})",
                    r.rotation_defect()
                )));
            }
        }
        Ok(())
    }
}

/// Posed mesh. Connectivity, UV, and labels are inherited from the
/// template unchanged.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub joints: Vec<[f64; 3]>,
    pub template: Arc<BodyTemplate>,
}

impl Mesh {
    pub fn faces(&self) -> &[[usize; 3]] {
        &self.template.faces
    }
    pub fn uv(&self) -> &[[f64; 2]] {
        &self.template.uv
    }
    pub fn labels(&self) -> &[Segment] {
        &self.template.labels
    }
}

// ---------------------------------------------------------------------------
// template construction
// ---------------------------------------------------------------------------

struct PartSpec {
    label_front: Segment,
    /// Back-arc label; same as front for single-label tubes.
    label_back: Segment,
    split: bool,
    p0: [f64; 3],
    p1: [f64; 3],
    r0: f64,
    r1: f64,
    rings: usize,
    sectors: usize,
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn mirror_x(p: [f64; 3]) -> [f64; 3] {
    [-p[0], p[1], p[2]]
}

/// Ring index list for a named attachment, captured during construction.
#[derive(Default)]
struct RingIndex {
    thigh_top: [Vec<usize>; 2],
    shin_top: [Vec<usize>; 2],
    upper_arm_top: [Vec<usize>; 2],
    forearm_top: [Vec<usize>; 2],
    head_bottom: Vec<usize>,
    torso_spine_ring: Vec<usize>,
}

pub fn build_default_template(config: &BodyConfig) -> Result<BodyTemplate, BodyError> {
    if config.n_betas != NUM_BETAS {
        return Err(BodyError::InvalidConfig(format!(
            "this body exposes exactly {NUM_BETAS} shape coefficients, got {}",
            config.n_betas
        )));
    }
    if config.n_joints != NUM_JOINTS {
        return Err(BodyError::InvalidConfig(format!(
            "this body has exactly {NUM_JOINTS} joints, got {}",
            config.n_joints
        )));
    }
    if config.target_vertices < 200 || config.target_vertices > 20_000 {
        return Err(BodyError::InvalidConfig(format!(
            "target_vertices {} outside [200, 20000]",
            config.target_vertices
        )));
    }
    let detail = (config.target_vertices as f64 / 560.0).sqrt();
    let sc = |base: usize, min: usize| ((base as f64 * detail).round() as usize).max(min);

    // joint anchor points in absolute metres; pelvis height is the origin
    // reference and everything shifts by it at the end
    let pelvis = [0.0, 0.92, 0.0];
    let torso_top = [0.0, 1.42, 0.02];
    let torso_rings = sc(8, 4);
    let neck = [0.0, 1.50, 0.05];
    let head_top = [0.0, 1.72, 0.06];
    let l_shoulder = [0.19, 1.40, 0.03];
    let l_elbow = [0.33, 1.14, 0.07];
    let l_wrist = [0.45, 0.90, 0.10];
    let l_hip = [0.09, 0.92, 0.0];
    let l_knee = [0.10, 0.50, 0.06];
    let l_ankle = [0.105, 0.08, 0.02];

    let parts = vec![
        PartSpec {
            label_front: Segment::FrontTorso,
            label_back: Segment::BackTorso,
            split: true,
            p0: pelvis,
            p1: torso_top,
            r0: 0.15,
            r1: 0.17,
            rings: torso_rings,
            sectors: sc(18, 8),
        },
        PartSpec {
            label_front: Segment::Head,
            label_back: Segment::Head,
            split: false,
            p0: neck,
            p1: head_top,
            r0: 0.080,
            r1: 0.070,
            rings: sc(6, 3),
            sectors: sc(12, 6),
        },
        PartSpec {
            label_front: Segment::LUpperArm,
            label_back: Segment::LUpperArm,
            split: false,
            p0: l_shoulder,
            p1: l_elbow,
            r0: 0.050,
            r1: 0.042,
            rings: sc(4, 3),
            sectors: sc(8, 6),
        },
        PartSpec {
            label_front: Segment::RUpperArm,
            label_back: Segment::RUpperArm,
            split: false,
            p0: mirror_x(l_shoulder),
            p1: mirror_x(l_elbow),
            r0: 0.050,
            r1: 0.042,
            rings: sc(4, 3),
            sectors: sc(8, 6),
        },
        PartSpec {
            label_front: Segment::LForearm,
            label_back: Segment::LForearm,
            split: false,
            p0: l_elbow,
            p1: l_wrist,
            r0: 0.042,
            r1: 0.032,
            rings: sc(4, 3),
            sectors: sc(8, 6),
        },
        PartSpec {
            label_front: Segment::RForearm,
            label_back: Segment::RForearm,
            split: false,
            p0: mirror_x(l_elbow),
            p1: mirror_x(l_wrist),
            r0: 0.042,
            r1: 0.032,
            rings: sc(4, 3),
            sectors: sc(8, 6),
        },
        PartSpec {
            label_front: Segment::LThigh,
            label_back: Segment::LThigh,
            split: false,
            p0: l_hip,
            p1: l_knee,
            r0: 0.070,
            r1: 0.052,
            rings: sc(6, 3),
            sectors: sc(10, 6),
        },
        PartSpec {
            label_front: Segment::RThigh,
            label_back: Segment::RThigh,
            split: false,
            p0: mirror_x(l_hip),
            p1: mirror_x(l_knee),
            r0: 0.070,
            r1: 0.052,
            rings: sc(6, 3),
            sectors: sc(10, 6),
        },
        PartSpec {
            label_front: Segment::LShin,
            label_back: Segment::LShin,
            split: false,
            p0: l_knee,
            p1: l_ankle,
            r0: 0.052,
            r1: 0.035,
            rings: sc(6, 3),
            sectors: sc(8, 6),
        },
        PartSpec {
            label_front: Segment::RShin,
            label_back: Segment::RShin,
            split: false,
            p0: mirror_x(l_knee),
            p1: mirror_x(l_ankle),
            r0: 0.052,
            r1: 0.035,
            rings: sc(6, 3),
            sectors: sc(8, 6),
        },
    ];

    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut uv: Vec<[f64; 2]> = Vec::new();
    let mut labels: Vec<Segment> = Vec::new();
    let mut rings = RingIndex::default();

    for spec in &parts {
        build_tube(spec, &mut vertices, &mut faces, &mut uv, &mut labels, &mut rings);
    }

    let n = vertices.len();

    // ring-centroid joint regressor
    let mut joint_regressor = vec![vec![0.0f64; n]; NUM_JOINTS];
    let uniform_row = |row: &mut Vec<f64>, idx: &[usize]| {
        let w = 1.0 / idx.len() as f64;
        for &i in idx {
            row[i] = w;
        }
    };
    {
        // pelvis = centroid of the two hip rings
        let hips: Vec<usize> = rings.thigh_top[0]
            .iter()
            .chain(rings.thigh_top[1].iter())
            .copied()
            .collect();
        uniform_row(&mut joint_regressor[0], &hips);
        uniform_row(&mut joint_regressor[1], &rings.torso_spine_ring);
        uniform_row(&mut joint_regressor[2], &rings.head_bottom);
        uniform_row(&mut joint_regressor[3], &rings.upper_arm_top[0]);
        uniform_row(&mut joint_regressor[4], &rings.upper_arm_top[1]);
        uniform_row(&mut joint_regressor[5], &rings.forearm_top[0]);
        uniform_row(&mut joint_regressor[6], &rings.forearm_top[1]);
        uniform_row(&mut joint_regressor[7], &rings.thigh_top[0]);
        uniform_row(&mut joint_regressor[8], &rings.thigh_top[1]);
        uniform_row(&mut joint_regressor[9], &rings.shin_top[0]);
        uniform_row(&mut joint_regressor[10], &rings.shin_top[1]);
    }

    // shift so the pelvis rest joint is the origin
    let pelvis_rest = regress_point(&joint_regressor[0], &vertices);
    for v in vertices.iter_mut() {
        v[0] -= pelvis_rest[0];
        v[1] -= pelvis_rest[1];
        v[2] -= pelvis_rest[2];
    }

    // joint rest positions for weight construction
    let joints: Vec<[f64; 3]> = joint_regressor
        .iter()
        .map(|row| regress_point(row, &vertices))
        .collect();

    let shape_basis = build_shape_basis(&vertices, &labels, &joints, &joint_regressor[0]);
    let skin_weights = build_skin_weights(&vertices, &labels, &joints);

    let regressor_sparse = joint_regressor
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(i, &w)| (i, w))
                .collect()
        })
        .collect();
    let skin_sparse = skin_weights
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(j, &w)| (j, w))
                .collect()
        })
        .collect();

    let template = BodyTemplate {
        vertices,
        faces,
        uv,
        shape_basis,
        joint_regressor,
        skin_weights,
        labels,
        parents: JOINT_PARENTS,
        regressor_sparse,
        skin_sparse,
    };
    template.validate()?;
    Ok(template)
}

fn regress_point(row: &[f64], vertices: &[[f64; 3]]) -> [f64; 3] {
    let mut p = [0.0f64; 3];
    for (i, &w) in row.iter().enumerate() {
        if w != 0.0 {
            p[0] += w * vertices[i][0];
            p[1] += w * vertices[i][1];
            p[2] += w * vertices[i][2];
        }
    }
    p
}

fn build_tube(
    spec: &PartSpec,
    vertices: &mut Vec<[f64; 3]>,
    faces: &mut Vec<[usize; 3]>,
    uv: &mut Vec<[f64; 2]>,
    labels: &mut Vec<Segment>,
    rings: &mut RingIndex,
) {
    // local frame: w along the axis, (u, v) perpendicular with v as close
    // to +z as possible so the "front" arc faces forward
    let axis = [
        spec.p1[0] - spec.p0[0],
        spec.p1[1] - spec.p0[1],
        spec.p1[2] - spec.p0[2],
    ];
    let alen = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let w = [axis[0] / alen, axis[1] / alen, axis[2] / alen];
    // u = normalize(x - (x.w)w), fallback to z reference if near-parallel
    let pick = if w[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = pick[0] * w[0] + pick[1] * w[1] + pick[2] * w[2];
    let mut u = [pick[0] - d * w[0], pick[1] - d * w[1], pick[2] - d * w[2]];
    let ulen = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    u = [u[0] / ulen, u[1] / ulen, u[2] / ulen];
    let mut v = [
        w[1] * u[2] - w[2] * u[1],
        w[2] * u[0] - w[0] * u[2],
        w[0] * u[1] - w[1] * u[0],
    ];
    if v[2] < 0.0 {
        v = [-v[0], -v[1], -v[2]];
        u = [-u[0], -u[1], -u[2]];
    }

    // arc column angle lists (radians); split tubes duplicate seams
    let arcs: Vec<(Segment, Vec<f64>)> = if spec.split {
        let half = spec.sectors / 2;
        let front: Vec<f64> = (0..=half)
            .map(|k| std::f64::consts::PI * k as f64 / half as f64)
            .collect();
        let back: Vec<f64> = (0..=half)
            .map(|k| std::f64::consts::PI + std::f64::consts::PI * k as f64 / half as f64)
            .collect();
        vec![(spec.label_front, front), (spec.label_back, back)]
    } else {
        let full: Vec<f64> = (0..spec.sectors)
            .map(|k| 2.0 * std::f64::consts::PI * k as f64 / spec.sectors as f64)
            .collect();
        vec![(spec.label_front, full)]
    };

    // UV islands: each label owns an angular slice of the colour-wheel disk
    let uv_for = |label: Segment, angle_pos: f64, t: f64| -> [f64; 2] {
        let n_lab = Segment::ALL.len() as f64;
        let li = label.index() as f64;
        let centre = 2.0 * std::f64::consts::PI * (li + 0.5) / n_lab;
        let width = 0.72 * 2.0 * std::f64::consts::PI / n_lab;
        let theta = centre + (angle_pos - 0.5) * width;
        let radius = 0.14 + 0.34 * t;
        [0.5 + radius * theta.cos(), 0.5 + radius * theta.sin()]
    };

    let mut arc_ring_indices: Vec<Vec<Vec<usize>>> = Vec::new(); // arc -> ring -> columns
    for (label, angles) in &arcs {
        let mut per_ring = Vec::new();
        for ri in 0..spec.rings {
            let t = ri as f64 / (spec.rings - 1) as f64;
            let centre = lerp3(spec.p0, spec.p1, t);
            let radius = spec.r0 + (spec.r1 - spec.r0) * t;
            let mut cols = Vec::with_capacity(angles.len());
            for (ai, &phi) in angles.iter().enumerate() {
                let (c, s) = (phi.cos(), phi.sin());
                let p = [
                    centre[0] + radius * (c * u[0] + s * v[0]),
                    centre[1] + radius * (c * u[1] + s * v[1]),
                    centre[2] + radius * (c * u[2] + s * v[2]),
                ];
                cols.push(vertices.len());
                vertices.push(p);
                let angle_pos = ai as f64 / (angles.len().max(2) - 1) as f64;
                uv.push(uv_for(*label, angle_pos, t));
                labels.push(*label);
            }
            per_ring.push(cols);
        }
        arc_ring_indices.push(per_ring);
    }

    // side quads within each arc
    for (arc_i, (_, angles)) in arcs.iter().enumerate() {
        let per_ring = &arc_ring_indices[arc_i];
        let wrap = !spec.split; // full circles close on themselves
        let ncol = angles.len();
        let seg_count = if wrap { ncol } else { ncol - 1 };
        for ri in 0..spec.rings - 1 {
            for k in 0..seg_count {
                let k2 = (k + 1) % ncol;
                let a = per_ring[ri][k];
                let b = per_ring[ri][k2];
                let c = per_ring[ri + 1][k2];
                let d = per_ring[ri + 1][k];
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
        // caps: fan across the ring polygon from the first column,
        // label-uniform by construction
        for ri in [0usize, spec.rings - 1] {
            let ring = &per_ring[ri];
            for k in 1..ring.len() - 1 {
                faces.push([ring[0], ring[k], ring[k + 1]]);
            }
        }
    }

    // record attachment rings (all arcs merged)
    let ring_all = |ri: usize| -> Vec<usize> {
        arc_ring_indices
            .iter()
            .flat_map(|per_ring| per_ring[ri].iter().copied())
            .collect()
    };
    match spec.label_front {
        Segment::FrontTorso => {
            let spine_ring = (spec.rings * 4) / 7;
            rings.torso_spine_ring = ring_all(spine_ring);
        }
        Segment::Head => rings.head_bottom = ring_all(0),
        Segment::LUpperArm => rings.upper_arm_top[0] = ring_all(0),
        Segment::RUpperArm => rings.upper_arm_top[1] = ring_all(0),
        Segment::LForearm => rings.forearm_top[0] = ring_all(0),
        Segment::RForearm => rings.forearm_top[1] = ring_all(0),
        Segment::LThigh => rings.thigh_top[0] = ring_all(0),
        Segment::RThigh => rings.thigh_top[1] = ring_all(0),
        Segment::LShin => rings.shin_top[0] = ring_all(0),
        Segment::RShin => rings.shin_top[1] = ring_all(0),
        _ => {}
    }
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn build_shape_basis(
    vertices: &[[f64; 3]],
    labels: &[Segment],
    joints: &[[f64; 3]],
    pelvis_row: &[f64],
) -> Vec<Vec<[f64; 3]>> {
    let n = vertices.len();
    let y_shoulder = joints[3][1];
    let y_hip = joints[7][1];
    let y_ankle = -0.84; // approximate shin end after the pelvis shift
    let l_sh = joints[3];
    let r_sh = joints[4];
    let l_wr = [0.45, 0.90 - 0.92, 0.10]; // wrist in shifted frame
    let r_wr = mirror_x(l_wr);

    let arm_t = |p: [f64; 3], sh: [f64; 3], wr: [f64; 3]| -> (f64, [f64; 3]) {
        let d = [wr[0] - sh[0], wr[1] - sh[1], wr[2] - sh[2]];
        let len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let len = len2.sqrt();
        let t = ((p[0] - sh[0]) * d[0] + (p[1] - sh[1]) * d[1] + (p[2] - sh[2]) * d[2]) / len2;
        (t.clamp(0.0, 1.0), [d[0] / len, d[1] / len, d[2] / len])
    };

    let mut basis: Vec<Vec<[f64; 3]>> = vec![vec![[0.0; 3]; n]; NUM_BETAS];
    for (i, (&p, &lab)) in vertices.iter().zip(labels.iter()).enumerate() {
        // 0: stature, vertical stretch away from the pelvis plane
        basis[0][i] = [0.0, 0.10 * p[1], 0.0];
        // 1: girth, radial growth from the vertical axis
        basis[1][i] = [0.05 * p[0], 0.0, 0.05 * p[2]];
        // 2: torso length, shifts everything above the hips upward
        let ramp = ((p[1] - y_hip) / (y_shoulder - y_hip)).clamp(0.0, 1.0);
        basis[2][i] = [0.0, 0.08 * ramp, 0.0];
        // 3: limb length
        basis[3][i] = match lab {
            Segment::LUpperArm | Segment::LForearm => {
                let (t, dir) = arm_t(p, l_sh, l_wr);
                [0.06 * t * dir[0], 0.06 * t * dir[1], 0.06 * t * dir[2]]
            }
            Segment::RUpperArm | Segment::RForearm => {
                let (t, dir) = arm_t(p, r_sh, r_wr);
                [0.06 * t * dir[0], 0.06 * t * dir[1], 0.06 * t * dir[2]]
            }
            Segment::LThigh | Segment::RThigh | Segment::LShin | Segment::RShin => {
                let t = ((y_hip - p[1]) / (y_hip - y_ankle)).clamp(0.0, 1.0);
                [0.0, -0.07 * t, 0.0]
            }
            _ => [0.0; 3],
        };
    }

    // project out any pelvis-joint motion so the root never moves with
    // shape: subtract the pelvis-row-weighted mean from each column
    for col in basis.iter_mut() {
        let mut mean = [0.0f64; 3];
        for (i, &w) in pelvis_row.iter().enumerate() {
            if w != 0.0 {
                mean[0] += w * col[i][0];
                mean[1] += w * col[i][1];
                mean[2] += w * col[i][2];
            }
        }
        for o in col.iter_mut() {
            o[0] -= mean[0];
            o[1] -= mean[1];
            o[2] -= mean[2];
        }
    }
    basis
}

fn build_skin_weights(
    vertices: &[[f64; 3]],
    labels: &[Segment],
    joints: &[[f64; 3]],
) -> Vec<Vec<f64>> {
    let n = vertices.len();
    let mut weights = vec![vec![0.0f64; NUM_JOINTS]; n];
    let spine_y = joints[1][1];
    // blend-band half width in metres
    let band = 0.06;

    // fraction along a bone segment, used to blend a child bone in
    let along = |p: [f64; 3], a: [f64; 3], b: [f64; 3]| -> f64 {
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1] + (p[2] - a[2]) * d[2]) / len2)
            .clamp(0.0, 1.0)
    };

    for (i, (&p, &lab)) in vertices.iter().zip(labels.iter()).enumerate() {
        let row = &mut weights[i];
        match lab {
            Segment::FrontTorso | Segment::BackTorso => {
                let w_spine = smoothstep((p[1] - (spine_y - band)) / (2.0 * band));
                row[1] = w_spine;
                row[0] = 1.0 - w_spine;
            }
            Segment::Head => {
                let t = along(p, joints[2], [joints[2][0], joints[2][1] + 0.22, joints[2][2]]);
                let w = smoothstep(t / 0.3);
                row[2] = w;
                row[1] = 1.0 - w;
            }
            Segment::LUpperArm | Segment::RUpperArm => {
                let (sh, el) = if lab == Segment::LUpperArm {
                    (joints[3], joints[5])
                } else {
                    (joints[4], joints[6])
                };
                let j = if lab == Segment::LUpperArm { 3 } else { 4 };
                let t = along(p, sh, el);
                let w = smoothstep(t / 0.25);
                row[j] = w;
                row[1] = 1.0 - w;
            }
            Segment::LForearm | Segment::RForearm => {
                let (el, j_el, j_sh) = if lab == Segment::LForearm {
                    (joints[5], 5, 3)
                } else {
                    (joints[6], 6, 4)
                };
                let wrist = [el[0] + 0.12, el[1] - 0.24, el[2] + 0.03];
                let wrist = if lab == Segment::LForearm { wrist } else { mirror_x(wrist) };
                let t = along(p, el, wrist);
                let w = smoothstep(t / 0.25);
                row[j_el] = w;
                row[j_sh] = 1.0 - w;
            }
            Segment::LThigh | Segment::RThigh => {
                let (hip, knee, j) = if lab == Segment::LThigh {
                    (joints[7], joints[9], 7)
                } else {
                    (joints[8], joints[10], 8)
                };
                let t = along(p, hip, knee);
                let w = smoothstep(t / 0.25);
                row[j] = w;
                row[0] = 1.0 - w;
            }
            Segment::LShin | Segment::RShin => {
                let (knee, j_knee, j_hip) = if lab == Segment::LShin {
                    (joints[9], 9, 7)
                } else {
                    (joints[10], 10, 8)
                };
                let ankle = [knee[0] + 0.005, knee[1] - 0.42, knee[2] - 0.04];
                let t = along(p, knee, ankle);
                let w = smoothstep(t / 0.25);
                row[j_knee] = w;
                row[j_hip] = 1.0 - w;
            }
        }
    }
    weights
}

impl BodyTemplate {
    /// Assemble a template from raw arrays (e.g. a parsed export),
    /// rebuilding the sparse caches and validating invariants.
    pub fn from_parts(
        vertices: Vec<[f64; 3]>,
        faces: Vec<[usize; 3]>,
        uv: Vec<[f64; 2]>,
        shape_basis: Vec<Vec<[f64; 3]>>,
        joint_regressor: Vec<Vec<f64>>,
        skin_weights: Vec<Vec<f64>>,
        labels: Vec<Segment>,
    ) -> Result<Self, BodyError> {
        let regressor_sparse = joint_regressor
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(i, &w)| (i, w))
                    .collect()
            })
            .collect();
        let skin_sparse = skin_weights
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(j, &w)| (j, w))
                    .collect()
            })
            .collect();
        let t = Self {
            vertices,
            faces,
            uv,
            shape_basis,
            joint_regressor,
            skin_weights,
            labels,
            parents: JOINT_PARENTS,
            regressor_sparse,
            skin_sparse,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_betas(&self) -> usize {
        self.shape_basis.len()
    }

    pub fn num_joints(&self) -> usize {
        NUM_JOINTS
    }

    pub fn validate(&self) -> Result<(), BodyError> {
        let n = self.vertices.len();
        for f in &self.faces {
            if f.iter().any(|&i| i >= n) {
                return Err(BodyError::DimensionMismatch(
                    "face references invalid vertex".into(),
                ));
            }
        }
        for (k, row) in self.joint_regressor.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(BodyError::DimensionMismatch(format!(
                    "regressor row {k} sums to {s}"
                )));
            }
        }
        for (i, row) in self.skin_weights.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|&w| w < 0.0) {
                return Err(BodyError::DimensionMismatch(format!(
                    "skin row {i} is not convex (sum {s})"
                )));
            }
        }
        let front = self.segment_vertices(Segment::FrontTorso)?;
        let back = self.segment_vertices(Segment::BackTorso)?;
        if front.is_empty() || back.is_empty() {
            return Err(BodyError::DimensionMismatch(
                "torso split produced an empty side".into(),
            ));
        }
        if front.iter().any(|i| back.contains(i)) {
            return Err(BodyError::DimensionMismatch(
                "front/back torso overlap".into(),
            ));
        }
        // every face must be label-uniform so segment masks partition
        // the rendered coverage
        for f in &self.faces {
            let l = self.labels[f[0]];
            if self.labels[f[1]] != l || self.labels[f[2]] != l {
                return Err(BodyError::DimensionMismatch(
                    "face mixes segment labels".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn segment_vertices(&self, segment: Segment) -> Result<Vec<usize>, BodyError> {
        let set: Vec<usize> = self
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == segment)
            .map(|(i, _)| i)
            .collect();
        if set.is_empty() {
            return Err(BodyError::UnknownSegment(format!(
                "segment {} has no vertices",
                segment.name()
            )));
        }
        Ok(set)
    }

    pub fn segment_vertices_by_name(&self, name: &str) -> Result<Vec<usize>, BodyError> {
        let seg = Segment::from_name(name).ok_or_else(|| BodyError::UnknownSegment(name.into()))?;
        self.segment_vertices(seg)
    }

    /// Rest joints for a shape: J . (T + S beta).
    pub fn rest_joints(&self, betas: &[f64]) -> Result<Vec<[f64; 3]>, BodyError> {
        if betas.len() != self.num_betas() {
            return Err(BodyError::DimensionMismatch(format!(
                "expected {} betas, got {}",
                self.num_betas(),
                betas.len()
            )));
        }
        Ok(self
            .regressor_sparse
            .iter()
            .map(|row| {
                let mut p = [0.0f64; 3];
                for &(i, w) in row {
                    let mut v = self.vertices[i];
                    for (b, col) in betas.iter().zip(self.shape_basis.iter()) {
                        v[0] += b * col[i][0];
                        v[1] += b * col[i][1];
                        v[2] += b * col[i][2];
                    }
                    p[0] += w * v[0];
                    p[1] += w * v[1];
                    p[2] += w * v[2];
                }
                p
            })
            .collect())
    }

    /// Rest joints generic over the scalar type, for dual-number use.
    pub fn rest_joints_generic<T: Real>(&self, betas: &[T]) -> Vec<Vec3g<T>> {
        self.regressor_sparse
            .iter()
            .map(|row| {
                let mut p = Vec3g::<T>::zero();
                for &(i, w) in row {
                    let wt = T::from_f64(w);
                    let mut v = Vec3g::<T>::from_f64(self.vertices[i]);
                    for (b, col) in betas.iter().zip(self.shape_basis.iter()) {
                        v = v.add(Vec3g::from_f64(col[i]).scale(*b));
                    }
                    p = p.add(v.scale(wt));
                }
                p
            })
            .collect()
    }

    /// Forward kinematics for the joints only (no vertex skinning);
    /// the cheap path used by keypoint fitting.
    pub fn pose_joints_generic<T: Real>(
        &self,
        betas: &[T],
        rotations: &[Mat3g<T>],
    ) -> Vec<Vec3g<T>> {
        let rest = self.rest_joints_generic(betas);
        let world = world_transforms(&rest, rotations, &self.parents);
        world.into_iter().map(|(_, t)| t).collect()
    }
}

type Rigid<T> = (Mat3g<T>, Vec3g<T>);

fn world_transforms<T: Real>(
    rest: &[Vec3g<T>],
    rotations: &[Mat3g<T>],
    parents: &[i32; NUM_JOINTS],
) -> Vec<Rigid<T>> {
    let mut world: Vec<Rigid<T>> = Vec::with_capacity(NUM_JOINTS);
    for k in 0..NUM_JOINTS {
        let local_t = if parents[k] < 0 {
            rest[k]
        } else {
            rest[k].sub(rest[parents[k] as usize])
        };
        let local: Rigid<T> = (rotations[k], local_t);
        let composed = if parents[k] < 0 {
            // root: translate to joint, then rotate
            (local.0, local.1)
        } else {
            let p = &world[parents[k] as usize];
            // (Rp, tp) . (Rk, tk) = (Rp Rk, Rp tk + tp)
            (p.0.mul_mat(&local.0), p.0.mul_vec(local.1).add(p.1))
        };
        world.push(composed);
    }
    world
}

/// Full forward function: shaped rest pose, forward kinematics, and
/// linear blend skinning. Generic over the scalar for Jacobian checks.
pub fn forward_generic<T: Real>(
    template: &BodyTemplate,
    betas: &[T],
    rotations: &[Mat3g<T>],
) -> (Vec<Vec3g<T>>, Vec<Vec3g<T>>) {
    assert_eq!(betas.len(), template.num_betas());
    assert_eq!(rotations.len(), NUM_JOINTS);
    let n = template.num_vertices();

    // shaped rest vertices
    let mut v_rest: Vec<Vec3g<T>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = Vec3g::<T>::from_f64(template.vertices[i]);
        for (b, col) in betas.iter().zip(template.shape_basis.iter()) {
            v = v.add(Vec3g::from_f64(col[i]).scale(*b));
        }
        v_rest.push(v);
    }

    let rest_joints = template.rest_joints_generic(betas);
    let world = world_transforms(&rest_joints, rotations, &template.parents);

    // skinning transforms: A_k = world_k . translate(-rest_k)
    let skin: Vec<Rigid<T>> = world
        .iter()
        .zip(rest_joints.iter())
        .map(|((r, t), j)| (*r, t.sub(r.mul_vec(*j))))
        .collect();

    let posed_joints: Vec<Vec3g<T>> = world.iter().map(|(_, t)| *t).collect();

    let mut out = Vec::with_capacity(n);
    for (i, v) in v_rest.iter().enumerate() {
        let mut acc = Vec3g::<T>::zero();
        for &(j, w) in &template.skin_sparse[i] {
            let (r, t) = &skin[j];
            acc = acc.add(r.mul_vec(*v).add(*t).scale(T::from_f64(w)));
        }
        out.push(acc);
    }
    (out, posed_joints)
}

/// Pose the template with concrete parameters.
pub fn forward(template: &Arc<BodyTemplate>, params: &BodyParams) -> Result<Mesh, BodyError> {
    params.validate(template)?;
    let rots: Vec<Mat3g<f64>> = params.rotations.clone();
    let (verts, joints) = forward_generic(template, &params.betas, &rots);
    Ok(Mesh {
        vertices: verts.into_iter().map(|v| v.0).collect(),
        joints: joints.into_iter().map(|v| v.0).collect(),
        template: Arc::clone(template),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::Dual;
    use crate::rotmath::axis_angle_to_matrix;

    fn template() -> Arc<BodyTemplate> {
        Arc::new(build_default_template(&BodyConfig::default()).unwrap())
    }

    #[test]
    fn default_template_shape() {
        let t = template();
        assert_eq!(t.joint_regressor.len(), NUM_JOINTS);
        assert!(t.num_vertices() > 400 && t.num_vertices() < 800,
            "vertex count {}", t.num_vertices());
        assert_eq!(t.num_betas(), NUM_BETAS);
    }

    #[test]
    fn template_is_deterministic() {
        let a = build_default_template(&BodyConfig::default()).unwrap();
        let b = build_default_template(&BodyConfig::default()).unwrap();
        assert_eq!(a.vertices, b.vertices);
        assert_eq!(a.faces, b.faces);
        assert_eq!(a.uv, b.uv);
        assert_eq!(a.skin_weights, b.skin_weights);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(build_default_template(&BodyConfig {
            target_vertices: 10,
            ..Default::default()
        })
        .is_err());
        assert!(build_default_template(&BodyConfig {
            n_betas: 7,
            ..Default::default()
        })
        .is_err());
        assert!(build_default_template(&BodyConfig {
            n_joints: 24,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn stature_direction_grows_vertical_extent() {
        // oracle: bounding boxes of shaped rest vertices
        let t = template();
        let extent = |betas: &[f64]| -> f64 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (i, v) in t.vertices.iter().enumerate() {
                let mut y = v[1];
                for (b, col) in betas.iter().zip(t.shape_basis.iter()) {
                    y += b * col[i][1];
                }
                lo = lo.min(y);
                hi = hi.max(y);
            }
            hi - lo
        };
        assert!(extent(&[1.0, 0.0, 0.0, 0.0]) > extent(&[0.0; 4]) + 0.05);
    }

    #[test]
    fn forward_identity_returns_template() {
        let t = template();
        let mesh = forward(&t, &BodyParams::rest(&t)).unwrap();
        for (a, b) in mesh.vertices.iter().zip(t.vertices.iter()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_beta_only_adds_basis_column() {
        // oracle: direct matrix arithmetic outside the model code
        let t = template();
        let mut params = BodyParams::rest(&t);
        params.betas = vec![1.0, 0.0, 0.0, 0.0];
        let mesh = forward(&t, &params).unwrap();
        for i in 0..t.num_vertices() {
            for k in 0..3 {
                let expect = t.vertices[i][k] + t.shape_basis[0][i][k];
                assert!((mesh.vertices[i][k] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn global_rotation_equivariance() {
        let t = template();
        let mut params = BodyParams::rest(&t);
        params.betas = vec![0.5, -0.3, 0.8, -0.2];
        for (k, r) in params.rotations.iter_mut().enumerate().skip(1) {
            let aa = [0.1 * k as f64, -0.05 * k as f64, 0.03 * k as f64];
            *r = axis_angle_to_matrix(aa).unwrap();
        }
        let base = forward(&t, &params).unwrap();

        let rot = axis_angle_to_matrix([0.4, 1.1, -0.3]).unwrap();
        let mut pre = params.clone();
        pre.rotations[0] = rot.mul_mat(&params.rotations[0]);
        let rotated = forward(&t, &pre).unwrap();

        for (a, b) in rotated.vertices.iter().zip(base.vertices.iter()) {
            let rb = rot.mul_vec(Vec3g(*b));
            for k in 0..3 {
                assert!((a[k] - rb.0[k]).abs() < 1e-9, "vertex equivariance");
            }
        }
        for (a, b) in rotated.joints.iter().zip(base.joints.iter()) {
            let rb = rot.mul_vec(Vec3g(*b));
            for k in 0..3 {
                assert!((a[k] - rb.0[k]).abs() < 1e-9, "joint equivariance");
            }
        }
    }

    #[test]
    fn rest_joints_match_explicit_weighted_sum() {
        // oracle: explicit weighted sum over the dense regressor
        let t = template();
        let betas = [0.3, -0.7, 0.2, 0.5];
        let rj = t.rest_joints(&betas).unwrap();
        for (k, row) in t.joint_regressor.iter().enumerate() {
            let mut expect = [0.0f64; 3];
            for (i, &w) in row.iter().enumerate() {
                for (d, e) in expect.iter_mut().enumerate() {
                    let mut v = t.vertices[i][d];
                    for (b, col) in betas.iter().zip(t.shape_basis.iter()) {
                        v += b * col[i][d];
                    }
                    *e += w * v;
                }
            }
            for d in 0..3 {
                assert!((rj[k][d] - expect[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pelvis_is_hip_centroid_and_origin() {
        let t = template();
        let rj = t.rest_joints(&[0.0; 4]).unwrap();
        // pelvis at origin by construction
        for d in 0..3 {
            assert!(rj[0][d].abs() < 1e-6);
        }
        // and equal to the centroid of the two hip rings (same regressor row)
        let hips_mid = [
            (rj[7][0] + rj[8][0]) / 2.0,
            (rj[7][1] + rj[8][1]) / 2.0,
            (rj[7][2] + rj[8][2]) / 2.0,
        ];
        for d in 0..3 {
            assert!((rj[0][d] - hips_mid[d]).abs() < 1e-6);
        }
    }

    #[test]
    fn rest_joints_affine_in_beta() {
        let t = template();
        let b1 = [0.4, 0.1, -0.3, 0.2];
        let b2 = [-0.2, 0.5, 0.1, -0.4];
        let sum: Vec<f64> = b1.iter().zip(b2.iter()).map(|(a, b)| a + b).collect();
        let j1 = t.rest_joints(&b1).unwrap();
        let j2 = t.rest_joints(&b2).unwrap();
        let j0 = t.rest_joints(&[0.0; 4]).unwrap();
        let js = t.rest_joints(&sum).unwrap();
        for k in 0..NUM_JOINTS {
            for d in 0..3 {
                let expect = j1[k][d] + j2[k][d] - j0[k][d];
                assert!((js[k][d] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn segment_queries() {
        let t = template();
        assert!(!t.segment_vertices(Segment::FrontTorso).unwrap().is_empty());
        assert!(t.segment_vertices_by_name("nonexistent").is_err());
        // union of all segments covers every vertex exactly once
        let mut count = 0usize;
        for seg in Segment::ALL {
            count += t.segment_vertices(seg).unwrap().len();
        }
        assert_eq!(count, t.num_vertices());
        // oracle: label histogram
        let mut hist = std::collections::BTreeMap::new();
        for &l in &t.labels {
            *hist.entry(l).or_insert(0usize) += 1;
        }
        for seg in Segment::ALL {
            assert_eq!(hist[&seg], t.segment_vertices(seg).unwrap().len());
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        // duals vs central differences, for beta and for 6d rotation params
        let t = template();
        let betas0 = [0.2, -0.1, 0.3, 0.1];
        let aa: Vec<[f64; 3]> = (0..NUM_JOINTS)
            .map(|k| [0.05 * k as f64, -0.03 * k as f64, 0.02])
            .collect();
        let sixd0: Vec<[f64; 6]> = aa
            .iter()
            .map(|a| crate::rotmath::matrix_to_sixd(&axis_angle_to_matrix(*a).unwrap()))
            .collect();

        // dual evaluation over 4 + 66 = 70 inputs
        const W: usize = 70;
        let betas_d: Vec<Dual<W>> = (0..4).map(|i| Dual::var(betas0[i], i)).collect();
        let rots_d: Vec<Mat3g<Dual<W>>> = (0..NUM_JOINTS)
            .map(|k| {
                let mut six: [Dual<W>; 6] = [Dual::constant(0.0); 6];
                for (c, s) in six.iter_mut().enumerate() {
                    *s = Dual::var(sixd0[k][c], 4 + 6 * k + c);
                }
                crate::rotmath::sixd_to_matrix_generic(six).unwrap()
            })
            .collect();
        let (verts_d, _) = forward_generic(&t, &betas_d, &rots_d);

        let eval = |betas: &[f64; 4], sixd: &[[f64; 6]]| -> Vec<[f64; 3]> {
            let rots: Vec<Mat3> = sixd
                .iter()
                .map(|s| crate::rotmath::sixd_to_matrix(*s).unwrap())
                .collect();
            let (v, _) = forward_generic(&t, betas, &rots);
            v.into_iter().map(|x| x.0).collect()
        };

        let h = 1e-6;
        let probes = [(0usize, 0usize, 1usize), (100, 1, 0), (250, 2, 2), (400, 3, 1)];
        // beta derivatives
        for &(vi, bi, d) in &probes {
            let mut bp = betas0;
            bp[bi] += h;
            let mut bm = betas0;
            bm[bi] -= h;
            let fd = (eval(&bp, &sixd0)[vi][d] - eval(&bm, &sixd0)[vi][d]) / (2.0 * h);
            let an = verts_d[vi].0[d].du[bi];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(((fd - an) / denom).abs() < 1e-4, "beta fd={fd} an={an}");
        }
        // 6d derivatives for a couple of joints
        for &(vi, jk, c) in &[(50usize, 0usize, 1usize), (200, 1, 3), (330, 7, 0)] {
            let mut sp = sixd0.clone();
            sp[jk][c] += h;
            let mut sm = sixd0.clone();
            sm[jk][c] -= h;
            let fd = (eval(&betas0, &sp)[vi][1] - eval(&betas0, &sm)[vi][1]) / (2.0 * h);
            let an = verts_d[vi].0[1].du[4 + 6 * jk + c];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(((fd - an) / denom).abs() < 1e-4, "6d fd={fd} an={an}");
        }
    }
}
