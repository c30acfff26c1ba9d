//! Deterministic software rasterizer: colour-wheel renderings, segment
//! masks, keypoint projection, and keypoint heatmaps.
//!
//! Camera model is weak perspective: u = s*(X + tx), v = s*(Y + ty) in
//! normalized units ([-1, 1] spans the image), then pixels with y down.
//! Depth is the world Z (larger = closer to the camera). Sampling is at
//! pixel centres with a top-left tie rule, no anti-aliasing.

use thiserror::Error;

use crate::bodymodel::{Mesh, Segment};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("unknown segment: {0}")]
    UnknownSegment(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    /// Weak-perspective scale.
    pub scale: f64,
    /// In-plane translation in model units, applied before scaling.
    pub t: [f64; 2],
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(scale: f64, t: [f64; 2], width: usize, height: usize) -> Result<Self, RenderError> {
        let cam = Self {
            scale,
            t,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(RenderError::DegenerateCamera(format!(
                "scale {} must be positive",
                self.scale
            )));
        }
        if self.width < 16 || self.height < 16 {
            return Err(RenderError::DegenerateCamera(format!(
                "resolution {}x{} below 16x16",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Continuous pixel coordinates and depth for a world point.
    pub fn project(&self, p: [f64; 3]) -> ([f64; 2], f64) {
        let u = self.scale * (p[0] + self.t[0]);
        let v = self.scale * (p[1] + self.t[1]);
        let px = (u + 1.0) * 0.5 * self.width as f64;
        let py = (1.0 - v) * 0.5 * self.height as f64;
        ([px, py], p[2])
    }
}

/// RGB rendering (CHW, values in [0,1]) plus binary coverage (HW).
#[derive(Clone, Debug)]
pub struct Rendering {
    pub rgb: Vec<f64>,
    pub coverage: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl Rendering {
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let hw = self.width * self.height;
        let i = y * self.width + x;
        [self.rgb[i], self.rgb[hw + i], self.rgb[2 * hw + i]]
    }
}

#[derive(Clone, Debug)]
pub struct SegmentMask {
    pub mask: Vec<f64>,
    pub segment: Segment,
    pub width: usize,
    pub height: usize,
}

impl SegmentMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

/// Per-pixel rasterization result: winning face and its barycentrics.
pub struct Raster {
    /// Face index per pixel, -1 where uncovered.
    pub face: Vec<i32>,
    /// Barycentric (b1, b2) of the winning sample; b0 = 1 - b1 - b2.
    pub bary: Vec<[f64; 2]>,
    pub width: usize,
    pub height: usize,
}

/// Top-left fill rule in y-down coordinates for a CCW-normalized edge.
fn is_top_left(ax: f64, ay: f64, bx: f64, by: f64) -> bool {
    let dx = bx - ax;
    let dy = by - ay;
    // top edge runs right (dy == 0, dx > 0); left edge runs up (dy < 0)
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Rasterize with a z-buffer. Deterministic: faces in order, pixel
/// centres, strict depth comparison.
pub fn rasterize(mesh: &Mesh, camera: &Camera) -> Result<Raster, RenderError> {
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    let mut face_buf = vec![-1i32; w * h];
    let mut bary_buf = vec![[0.0f64; 2]; w * h];
    let mut zbuf = vec![f64::NEG_INFINITY; w * h];

    let projected: Vec<([f64; 2], f64)> =
        mesh.vertices.iter().map(|&v| camera.project(v)).collect();

    for (fi, face) in mesh.faces().iter().enumerate() {
        let (p0, z0) = projected[face[0]];
        let (mut p1, z1) = projected[face[1]];
        let (mut p2, z2) = projected[face[2]];
        // normalize winding so edge functions are >= 0 inside
        let mut area2 =
            (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]);
        let mut idx = [0usize, 1, 2];
        if area2 < 0.0 {
            std::mem::swap(&mut p1, &mut p2);
            idx = [0, 2, 1];
            area2 = -area2;
        }
        if area2 <= 1e-12 {
            continue; // degenerate
        }
        let zs = [z0, [z1, z2][idx[1] - 1], [z1, z2][idx[2] - 1]];

        let min_x = p0[0].min(p1[0]).min(p2[0]).floor().max(0.0) as usize;
        let max_x = (p0[0].max(p1[0]).max(p2[0]).ceil() as usize).min(w);
        let min_y = p0[1].min(p1[1]).min(p2[1]).floor().max(0.0) as usize;
        let max_y = (p0[1].max(p1[1]).max(p2[1]).ceil() as usize).min(h);
        if min_x >= max_x || min_y >= max_y {
            continue;
        }

        let edge = |ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64| -> f64 {
            (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        };
        let tl0 = is_top_left(p1[0], p1[1], p2[0], p2[1]);
        let tl1 = is_top_left(p2[0], p2[1], p0[0], p0[1]);
        let tl2 = is_top_left(p0[0], p0[1], p1[0], p1[1]);

        for y in min_y..max_y {
            let py = y as f64 + 0.5;
            for x in min_x..max_x {
                let px = x as f64 + 0.5;
                // e0 opposite vertex 0, etc.
                let e0 = edge(p1[0], p1[1], p2[0], p2[1], px, py);
                let e1 = edge(p2[0], p2[1], p0[0], p0[1], px, py);
                let e2 = edge(p0[0], p0[1], p1[0], p1[1], px, py);
                let in0 = e0 > 0.0 || (e0 == 0.0 && tl0);
                let in1 = e1 > 0.0 || (e1 == 0.0 && tl1);
                let in2 = e2 > 0.0 || (e2 == 0.0 && tl2);
                if !(in0 && in1 && in2) {
                    continue;
                }
                let b0 = e0 / area2;
                let b1 = e1 / area2;
                let b2 = e2 / area2;
                let z = b0 * zs[0] + b1 * zs[1] + b2 * zs[2];
                let pi = y * w + x;
                if z > zbuf[pi] {
                    zbuf[pi] = z;
                    face_buf[pi] = fi as i32;
                    // store barycentrics in the ORIGINAL vertex order
                    let mut b = [b0, b1, b2];
                    if idx == [0, 2, 1] {
                        b = [b0, b2, b1];
                    }
                    bary_buf[pi] = [b[1], b[2]];
                }
            }
        }
    }
    Ok(Raster {
        face: face_buf,
        bary: bary_buf,
        width: w,
        height: h,
    })
}

/// Colour-wheel texture: hue from the UV angle around (0.5, 0.5),
/// saturation from the radial distance, full value.
pub fn colorwheel(u: f64, v: f64) -> [f64; 3] {
    let dx = u - 0.5;
    let dy = v - 0.5;
    let hue = dy.atan2(dx); // (-pi, pi]
    let sat = (2.0 * (dx * dx + dy * dy).sqrt()).clamp(0.0, 1.0);
    hsv_to_rgb(hue.rem_euclid(2.0 * std::f64::consts::PI), sat, 1.0)
}

fn hsv_to_rgb(h_rad: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h_rad.to_degrees() / 60.0; // [0, 6)
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Shade every covered pixel through a callback receiving the winning
/// face's segment, interpolated UV, and the pixel position.
pub fn render_shaded(
    mesh: &Mesh,
    camera: &Camera,
    background: [f64; 3],
    shade: impl Fn(Segment, [f64; 2], usize, usize) -> [f64; 3],
) -> Result<Rendering, RenderError> {
    let raster = rasterize(mesh, camera)?;
    let (w, h) = (raster.width, raster.height);
    let hw = w * h;
    let mut rgb = vec![0.0f64; 3 * hw];
    let mut coverage = vec![0.0f64; hw];
    let faces = mesh.faces();
    let uv = mesh.uv();
    let labels = mesh.labels();
    for y in 0..h {
        for x in 0..w {
            let pi = y * w + x;
            let fi = raster.face[pi];
            let color = if fi < 0 {
                background
            } else {
                let f = faces[fi as usize];
                let [b1, b2] = raster.bary[pi];
                let b0 = 1.0 - b1 - b2;
                let u = b0 * uv[f[0]][0] + b1 * uv[f[1]][0] + b2 * uv[f[2]][0];
                let v = b0 * uv[f[0]][1] + b1 * uv[f[1]][1] + b2 * uv[f[2]][1];
                coverage[pi] = 1.0;
                shade(labels[f[0]], [u, v], x, y)
            };
            rgb[pi] = color[0];
            rgb[hw + pi] = color[1];
            rgb[2 * hw + pi] = color[2];
        }
    }
    Ok(Rendering {
        rgb,
        coverage,
        width: w,
        height: h,
    })
}

/// The conditioning rendering R: colour-wheel texture over black.
pub fn render_colorwheel(mesh: &Mesh, camera: &Camera) -> Result<Rendering, RenderError> {
    render_shaded(mesh, camera, [0.0; 3], |_, uv, _, _| colorwheel(uv[0], uv[1]))
}

/// Binary mask of pixels whose frontmost face belongs to `segment`.
/// Faces are label-uniform by template construction, so the "all three
/// vertices labelled" rule reduces to the face label.
pub fn render_segment_mask(
    mesh: &Mesh,
    camera: &Camera,
    segment: Segment,
) -> Result<SegmentMask, RenderError> {
    if !mesh.labels().contains(&segment) {
        return Err(RenderError::UnknownSegment(segment.name().to_string()));
    }
    let raster = rasterize(mesh, camera)?;
    let faces = mesh.faces();
    let labels = mesh.labels();
    let mask = raster
        .face
        .iter()
        .map(|&fi| {
            if fi >= 0 && labels[faces[fi as usize][0]] == segment {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(SegmentMask {
        mask,
        segment,
        width: raster.width,
        height: raster.height,
    })
}

pub fn render_segment_mask_by_name(
    mesh: &Mesh,
    camera: &Camera,
    name: &str,
) -> Result<SegmentMask, RenderError> {
    let segment =
        Segment::from_name(name).ok_or_else(|| RenderError::UnknownSegment(name.to_string()))?;
    render_segment_mask(mesh, camera, segment)
}

/// Project joints to pixel keypoints with in-bounds visibility flags.
pub fn project_keypoints(joints: &[[f64; 3]], camera: &Camera) -> Vec<Keypoint> {
    joints
        .iter()
        .map(|&j| {
            let ([x, y], _) = camera.project(j);
            Keypoint {
                x,
                y,
                visible: x >= 0.0 && x < camera.width as f64 && y >= 0.0 && y < camera.height as f64,
            }
        })
        .collect()
}

/// Unnormalized Gaussian heatmap per keypoint, (K,H,W). Invisible
/// keypoints produce zero channels.
pub fn keypoint_heatmaps(
    keypoints: &[Keypoint],
    width: usize,
    height: usize,
    sigma_px: f64,
) -> Vec<f64> {
    assert!(sigma_px > 0.0, "sigma must be positive");
    let hw = width * height;
    let mut out = vec![0.0f64; keypoints.len() * hw];
    let inv = 1.0 / (2.0 * sigma_px * sigma_px);
    for (k, kp) in keypoints.iter().enumerate() {
        if !kp.visible {
            continue;
        }
        let base = k * hw;
        for y in 0..height {
            let dy = y as f64 + 0.5 - kp.y;
            for x in 0..width {
                let dx = x as f64 + 0.5 - kp.x;
                out[base + y * width + x] = (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bodymodel::{build_default_template, forward, BodyConfig, BodyParams};
    use crate::rotmath::axis_angle_to_matrix;
    use std::sync::Arc;

    fn cam(w: usize, h: usize) -> Camera {
        Camera::new(1.0, [0.0, 0.0], w, h).unwrap()
    }

    fn body_mesh(yaw_deg: f64) -> Mesh {
        let t = Arc::new(build_default_template(&BodyConfig::default()).unwrap());
        let mut params = BodyParams::rest(&t);
        params.rotations[0] = axis_angle_to_matrix([0.0, yaw_deg.to_radians(), 0.0]).unwrap();
        forward(&t, &params).unwrap()
    }

    /// Single triangle covering a known region, as a fake "mesh".
    fn triangle_mesh(p0: [f64; 3], p1: [f64; 3], p2: [f64; 3]) -> Mesh {
        let t = Arc::new(build_default_template(&BodyConfig::default()).unwrap());
        let mut mesh = forward(&t, &BodyParams::rest(&t)).unwrap();
        // overwrite with a standalone triangle by shrinking everything else away
        mesh.vertices = vec![p0, p1, p2];
        let template = Arc::make_mut(&mut mesh.template);
        template.faces = vec![[0, 1, 2]];
        template.uv = vec![[0.5, 0.5]; 3];
        template.labels = vec![Segment::FrontTorso; 3];
        mesh.joints = vec![[0.0; 3]; crate::bodymodel::NUM_JOINTS];
        mesh
    }

    #[test]
    fn camera_validation() {
        assert!(Camera::new(0.0, [0.0; 2], 64, 64).is_err());
        assert!(Camera::new(1.0, [0.0; 2], 8, 64).is_err());
        assert!(Camera::new(1.0, [0.0; 2], 64, 64).is_ok());
    }

    #[test]
    fn projection_conventions() {
        let c = cam(128, 128);
        // origin with t = 0 lands at the image centre
        let ([px, py], _) = c.project([0.0, 0.0, 0.0]);
        assert_eq!(px, 64.0);
        assert_eq!(py, 64.0);
        // doubling s doubles the distance from the principal point
        let c1 = Camera::new(0.8, [0.0; 2], 128, 128).unwrap();
        let c2 = Camera::new(1.6, [0.0; 2], 128, 128).unwrap();
        let ([x1, y1], _) = c1.project([0.3, -0.2, 0.0]);
        let ([x2, y2], _) = c2.project([0.3, -0.2, 0.0]);
        assert!(((x2 - 64.0) - 2.0 * (x1 - 64.0)).abs() < 1e-12);
        assert!(((y2 - 64.0) - 2.0 * (y1 - 64.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_mesh_renders_zero() {
        let t = Arc::new(build_default_template(&BodyConfig::default()).unwrap());
        let mut mesh = forward(&t, &BodyParams::rest(&t)).unwrap();
        Arc::make_mut(&mut mesh.template).faces.clear();
        let r = render_colorwheel(&mesh, &cam(64, 64)).unwrap();
        assert!(r.rgb.iter().all(|&v| v == 0.0));
        assert!(r.coverage.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn triangle_coverage_matches_half_plane_oracle() {
        // oracle: strict half-plane point-in-triangle test per pixel centre
        let c = cam(32, 32);
        // triangle in world units; project to know pixel coords
        let p0 = [-0.5, -0.5, 0.0];
        let p1 = [0.6, -0.4, 0.0];
        let p2 = [-0.1, 0.7, 0.0];
        let mesh = triangle_mesh(p0, p1, p2);
        let r = render_colorwheel(&mesh, &c).unwrap();

        let (a, _) = c.project(p0);
        let (b, _) = c.project(p1);
        let (d, _) = c.project(p2);
        // strict half-plane test; centres exactly on an edge are governed
        // by the tie rule and skipped here
        let classify = |px: f64, py: f64| -> Option<bool> {
            let sign = |p: [f64; 2], q: [f64; 2]| (q[0] - p[0]) * (py - p[1]) - (q[1] - p[1]) * (px - p[0]);
            let s0 = sign(a, b);
            let s1 = sign(b, d);
            let s2 = sign(d, a);
            if s0.abs() < 1e-9 || s1.abs() < 1e-9 || s2.abs() < 1e-9 {
                return None;
            }
            Some((s0 > 0.0 && s1 > 0.0 && s2 > 0.0) || (s0 < 0.0 && s1 < 0.0 && s2 < 0.0))
        };
        let mut checked = 0usize;
        for y in 0..32 {
            for x in 0..32 {
                let Some(expect) = classify(x as f64 + 0.5, y as f64 + 0.5) else {
                    continue;
                };
                let got = r.coverage[y * 32 + x] > 0.5;
                assert_eq!(got, expect, "pixel ({x},{y})");
                checked += 1;
            }
        }
        assert!(checked > 900, "oracle skipped too many pixels: {checked}");
    }

    #[test]
    fn whole_pixel_translation_shifts_rendering() {
        // oracle: image shift comparison on the interior
        let mesh = body_mesh(15.0);
        let w = 96;
        let c0 = Camera::new(1.0, [0.0, 0.0], w, w).unwrap();
        // 4 px right = 4 * 2/w in normalized units = delta t of 8/w in model units
        let shift_px = 4usize;
        let dt = shift_px as f64 * 2.0 / w as f64 / 1.0;
        let c1 = Camera::new(1.0, [dt, 0.0], w, w).unwrap();
        let r0 = render_colorwheel(&mesh, &c0).unwrap();
        let r1 = render_colorwheel(&mesh, &c1).unwrap();
        for y in 0..w {
            for x in 0..w - shift_px {
                let a = r0.pixel(x, y);
                let b = r1.pixel(x + shift_px, y);
                for k in 0..3 {
                    assert!(
                        (a[k] - b[k]).abs() < 1e-12,
                        "pixel ({x},{y}) channel {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn rasterization_is_deterministic() {
        let mesh = body_mesh(30.0);
        let c = cam(64, 64);
        let a = render_colorwheel(&mesh, &c).unwrap();
        let b = render_colorwheel(&mesh, &c).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.coverage, b.coverage);
    }

    #[test]
    fn frontal_pose_shows_front_torso_only() {
        // oracle: vertex normals face the camera for the front arc
        let mesh = body_mesh(0.0);
        let c = cam(96, 96);
        let front = render_segment_mask(&mesh, &c, Segment::FrontTorso).unwrap();
        let back = render_segment_mask(&mesh, &c, Segment::BackTorso).unwrap();
        assert!(front.count() > 100, "front torso visible: {}", front.count());
        assert!(
            back.count() <= front.count() / 20,
            "back torso nearly hidden: {} vs {}",
            back.count(),
            front.count()
        );
    }

    #[test]
    fn masks_partition_coverage() {
        for yaw in [0.0, 50.0, 140.0, 180.0] {
            let mesh = body_mesh(yaw);
            let c = cam(80, 80);
            let r = render_colorwheel(&mesh, &c).unwrap();
            let mut sum = vec![0.0f64; 80 * 80];
            for seg in Segment::ALL {
                let m = render_segment_mask(&mesh, &c, seg).unwrap();
                for (s, v) in sum.iter_mut().zip(m.mask.iter()) {
                    *s += v;
                }
            }
            for (i, (&s, &cov)) in sum.iter().zip(r.coverage.iter()).enumerate() {
                assert_eq!(s, cov, "pixel {i} at yaw {yaw}");
            }
        }
    }

    #[test]
    fn mask_subset_of_coverage_and_disjoint() {
        let mesh = body_mesh(70.0);
        let c = cam(64, 64);
        let r = render_colorwheel(&mesh, &c).unwrap();
        let front = render_segment_mask(&mesh, &c, Segment::FrontTorso).unwrap();
        let back = render_segment_mask(&mesh, &c, Segment::BackTorso).unwrap();
        for i in 0..64 * 64 {
            assert!(front.mask[i] <= r.coverage[i]);
            assert!(front.mask[i] * back.mask[i] == 0.0, "masks overlap at {i}");
        }
    }

    #[test]
    fn keypoint_projection_and_visibility() {
        let c = cam(64, 64);
        let kps = project_keypoints(&[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]], &c);
        assert!(kps[0].visible);
        assert!(!kps[1].visible);
    }

    #[test]
    fn heatmap_peak_and_mass() {
        let w = 64;
        // keypoint exactly at the centre of pixel (20, 30)
        let kp = Keypoint {
            x: 20.5,
            y: 30.5,
            visible: true,
        };
        let sigma = 2.5;
        let hm = keypoint_heatmaps(&[kp], w, w, sigma);
        assert_eq!(hm[30 * w + 20], 1.0);

        // mass oracle: numerical integration of the continuous Gaussian
        let sum: f64 = hm.iter().sum();
        let expect = 2.0 * std::f64::consts::PI * sigma * sigma;
        assert!(
            (sum - expect).abs() / expect < 0.02,
            "sum {sum} vs {expect}"
        );

        let invisible = Keypoint {
            x: 10.0,
            y: 10.0,
            visible: false,
        };
        let hm2 = keypoint_heatmaps(&[invisible], w, w, sigma);
        assert!(hm2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn colorwheel_rgb_range() {
        for (u, v) in [(0.5, 0.5), (0.1, 0.9), (0.99, 0.01), (0.5, 1.0)] {
            let c = colorwheel(u, v);
            for ch in c {
                assert!((0.0..=1.0).contains(&ch));
            }
        }
    }
}
