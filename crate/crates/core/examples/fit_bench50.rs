use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use repose_core::bodymodel::*;
use repose_core::data::{sample_body, SampleConfig};
use repose_core::fit::*;
use repose_core::render::{project_keypoints, Camera};
use repose_core::rotmath::geodesic_angle_deg;
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let t = Arc::new(build_default_template(&BodyConfig::default()).unwrap());
    let scfg = SampleConfig::default();
    let fcfg = FitConfig::default();
    let t0 = Instant::now();
    let mut geo = Vec::new();
    let mut reproj = 0.0;
    let mut n = 0;
    for i in 0..50u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(1000 + i);
        let (gt, _) = sample_body(&mut rng, &t, &scfg).unwrap();
        let mesh = forward(&t, &gt).unwrap();
        let cam = Camera::new(gt.camera.scale, gt.camera.t, 128, 128).unwrap();
        let kps = project_keypoints(&mesh.joints, &cam);
        if kps.iter().filter(|k| k.visible).count() < 6 { continue; }
        let res = fit_keypoints(&kps, [128, 128], &t, None, &fcfg).unwrap();
        reproj += res.reproj_error_px;
        n += 1;
        for k in 0..NUM_JOINTS {
            geo.push(geodesic_angle_deg(&res.params.rotations[k], &gt.rotations[k]));
        }
    }
    // per-joint stats
    let k = NUM_JOINTS;
    for j in 0..k {
        let vals: Vec<f64> = geo.iter().skip(j).step_by(k).cloned().collect();
        let mut v = vals.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let over = vals.iter().filter(|&&x| x > 5.0).count();
        println!("{:>12}: median {:5.2} p90 {:5.2} over5 {:2}/{}", JOINT_NAMES[j], v[v.len()/2], v[(v.len()*9)/10], over, vals.len());
    }
    geo.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("{n} fits in {:.1?}: mean reproj {:.4}px, median geodesic {:.3} deg, p75 {:.2}",
        t0.elapsed(), reproj / n as f64, geo[geo.len()/2], geo[3*geo.len()/4]);
}
