//! Reposing networks: a global flow-field estimator, a warping-based
//! generator, and a rendering-conditioned patch discriminator.
//!
//! The generator encodes the source image, warps encoder features with
//! the estimated multi-scale flows, blends warped and decoded features
//! through learned occlusion maps, and decodes conditioned on the target
//! keypoint heatmaps. One parameter set serves both cycle directions.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use repose_autograd::{
    avg_pool2d, concat, leaky_relu, sigmoid, slice, upsample_nearest2, warp_bilinear, Conv2d,
    ParamStore, Session, Tape, Tensor, Var,
};
use repose_core::bodymodel::NUM_JOINTS;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GENERATOR_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("resolution mismatch: expected {expected}, got {got}")]
    ResolutionMismatch { expected: usize, got: usize },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GeneratorConfig {
    pub resolution: usize,
    pub base_width: usize,
    pub scales: usize,
    pub spectral_norm: bool,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            base_width: 32,
            scales: 3,
            spectral_norm: true,
            seed: 31,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.scales == 0 || self.scales > 4 {
            return Err(GenError::InvalidConfig(format!(
                "scales {} outside 1..=4",
                self.scales
            )));
        }
        if self.resolution % (1 << self.scales) != 0 {
            return Err(GenError::InvalidConfig(format!(
                "resolution {} not divisible by 2^{}",
                self.resolution, self.scales
            )));
        }
        if self.base_width < 4 {
            return Err(GenError::InvalidConfig("base_width below 4".into()));
        }
        Ok(())
    }
}

/// Per-scale displacement maps (pixels at that scale) and soft occlusion
/// maps in [0,1]; index 0 is the finest configured scale.
pub struct FlowField {
    pub flows: Vec<Var>,
    pub occlusions: Vec<Var>,
}

/// Channel widths per scale, finest to coarsest: w, 2w, 2w, 4w...
fn scale_width(base: usize, scale_idx: usize) -> usize {
    match scale_idx {
        0 => base,
        1 => 2 * base,
        _ => 2 * base,
    }
}

pub struct FlowEstimator {
    enc: Vec<Conv2d>,
    fuse: Vec<Conv2d>,
    heads: Vec<Conv2d>,
    scales: usize,
}

impl FlowEstimator {
    fn new(store: &mut ParamStore, cfg: &GeneratorConfig, rng: &mut ChaCha12Rng) -> Self {
        let w = cfg.base_width;
        let in_ch = 3 + 2 * NUM_JOINTS;
        let sn = cfg.spectral_norm;
        let mut enc = Vec::new();
        let mut prev = in_ch;
        for s in 0..cfg.scales {
            let ch = scale_width(w, s);
            enc.push(Conv2d::new(
                store,
                &format!("flow.enc{s}"),
                prev,
                ch,
                3,
                2,
                1,
                sn,
                rng,
            ));
            prev = ch;
        }
        // decoder: refine coarse-to-fine, fusing skip features
        let mut fuse = Vec::new();
        let mut heads = Vec::new();
        for s in (0..cfg.scales).rev() {
            let ch = scale_width(w, s);
            if s + 1 < cfg.scales {
                let up_ch = scale_width(w, s + 1);
                fuse.push(Conv2d::new(
                    store,
                    &format!("flow.fuse{s}"),
                    ch + up_ch,
                    ch,
                    3,
                    1,
                    1,
                    sn,
                    rng,
                ));
            }
            heads.push(Conv2d::with_gain(
                store,
                &format!("flow.head{s}"),
                ch,
                3,
                3,
                1,
                1,
                // the flow head stays un-normalized: spectral norm would cap
                // displacement magnitudes at roughly one pixel
                false,
                0.05,
                rng,
            ));
        }
        Self {
            enc,
            fuse,
            heads,
            scales: cfg.scales,
        }
    }

    /// Inputs: source rendering (n,3,r,r) and two heatmap stacks
    /// (n,K,r,r). Output flows ordered finest (index 0) to coarsest.
    pub fn forward(&self, s: &Session, r_s: Var, heat_s: Var, heat_t: Var) -> FlowField {
        let t = s.tape;
        let x = concat(t, &[r_s, heat_s, heat_t], 1);
        let mut feats = Vec::with_capacity(self.scales);
        let mut cur = x;
        for conv in &self.enc {
            cur = leaky_relu(t, conv.forward(s, cur), 0.2);
            feats.push(cur);
        }
        // coarse-to-fine refinement
        let mut flows_rev = Vec::new();
        let mut occl_rev = Vec::new();
        let mut fuse_iter = self.fuse.iter();
        let mut carry: Option<Var> = None;
        for (head_idx, sc) in (0..self.scales).rev().enumerate() {
            let mut feat = feats[sc];
            if let Some(prev) = carry {
                let up = upsample_nearest2(t, prev);
                let fused = fuse_iter.next().expect("fuse layer per finer scale");
                feat = leaky_relu(t, fused.forward(s, concat(t, &[feat, up], 1)), 0.2);
            }
            let head_out = self.heads[head_idx].forward(s, feat);
            let flow = slice(t, head_out, 1, 0, 2);
            let occl = sigmoid(t, slice(t, head_out, 1, 2, 3));
            flows_rev.push(flow);
            occl_rev.push(occl);
            carry = Some(feat);
        }
        flows_rev.reverse();
        occl_rev.reverse();
        FlowField {
            flows: flows_rev,
            occlusions: occl_rev,
        }
    }
}

pub struct Generator {
    pub store: ParamStore,
    pub config: GeneratorConfig,
    pub flow: FlowEstimator,
    enc0: Conv2d,
    enc: Vec<Conv2d>,
    bottleneck: Conv2d,
    dec: Vec<Conv2d>,
    out1: Conv2d,
    out2: Conv2d,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self, GenError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let flow = FlowEstimator::new(&mut store, &config, &mut rng);
        let w = config.base_width;
        let sn = config.spectral_norm;
        let k = NUM_JOINTS;
        let enc0 = Conv2d::new(&mut store, "gen.enc0", 3, w, 3, 1, 1, sn, &mut rng);
        let mut enc = Vec::new();
        let mut prev = w;
        for s in 0..config.scales {
            let ch = scale_width(w, s);
            enc.push(Conv2d::new(
                &mut store,
                &format!("gen.enc{}", s + 1),
                prev,
                ch,
                3,
                2,
                1,
                sn,
                &mut rng,
            ));
            prev = ch;
        }
        let deep = scale_width(w, config.scales - 1);
        let bottleneck = Conv2d::new(
            &mut store,
            "gen.bottleneck",
            deep + k,
            deep,
            3,
            1,
            1,
            sn,
            &mut rng,
        );
        // one decoder block per scale, coarsest first
        let mut dec = Vec::new();
        for s in (0..config.scales).rev() {
            let ch = scale_width(w, s);
            let out_ch = if s == 0 { w } else { scale_width(w, s - 1) };
            dec.push(Conv2d::new(
                &mut store,
                &format!("gen.dec{s}"),
                ch + k,
                out_ch,
                3,
                1,
                1,
                sn,
                &mut rng,
            ));
        }
        let out1 = Conv2d::new(&mut store, "gen.out1", w, w, 3, 1, 1, sn, &mut rng);
        let out2 = Conv2d::new(&mut store, "gen.out2", w, 3, 3, 1, 1, sn, &mut rng);
        Ok(Self {
            store,
            config,
            flow,
            enc0,
            enc,
            bottleneck,
            dec,
            out1,
            out2,
        })
    }

    pub fn check_resolution(&self, shape: &[usize]) -> Result<(), GenError> {
        let r = self.config.resolution;
        if shape[shape.len() - 1] != r || shape[shape.len() - 2] != r {
            return Err(GenError::ResolutionMismatch {
                expected: r,
                got: shape[shape.len() - 1],
            });
        }
        Ok(())
    }

    /// Heatmap pyramid at each scale, finest first.
    fn heat_pyramid(&self, s: &Session, heat: Var) -> Vec<Var> {
        let t = s.tape;
        (0..self.config.scales)
            .map(|sc| avg_pool2d(t, heat, 1 << (sc + 1)))
            .collect()
    }

    /// Full generation: returns the generated image and the flow field
    /// used for warping (for the flow loss).
    pub fn generate(
        &self,
        s: &Session,
        i_s: Var,
        heat_s: Var,
        r_s: Var,
        heat_t: Var,
    ) -> Result<(Var, FlowField), GenError> {
        let t = s.tape;
        for v in [i_s, heat_s, r_s, heat_t] {
            self.check_resolution(&t.shape(v))?;
        }
        let ff = self.flow.forward(s, r_s, heat_s, heat_t);

        // encoder over the source image
        let f0 = leaky_relu(t, self.enc0.forward(s, i_s), 0.2);
        let mut feats = Vec::with_capacity(self.config.scales);
        let mut cur = f0;
        for conv in &self.enc {
            cur = leaky_relu(t, conv.forward(s, cur), 0.2);
            feats.push(cur);
        }
        let heat_pyr = self.heat_pyramid(s, heat_t);

        // bottleneck conditioned on target pose
        let deep_idx = self.config.scales - 1;
        let mut dec_feat = leaky_relu(
            t,
            self.bottleneck
                .forward(s, concat(t, &[feats[deep_idx], heat_pyr[deep_idx]], 1)),
            0.2,
        );

        // decode coarse-to-fine, blending warped encoder features
        for (i, sc) in (0..self.config.scales).rev().enumerate() {
            let warped = warp_bilinear(t, feats[sc], ff.flows[sc]);
            let occl = ff.occlusions[sc];
            let one_minus = repose_autograd::add_scalar(t, repose_autograd::neg(t, occl), 1.0);
            let blended = repose_autograd::add(
                t,
                repose_autograd::mul(t, occl, warped),
                repose_autograd::mul(t, one_minus, dec_feat),
            );
            let block = &self.dec[i];
            let y = leaky_relu(
                t,
                block.forward(s, concat(t, &[blended, heat_pyr[sc]], 1)),
                0.2,
            );
            dec_feat = upsample_nearest2(t, y);
        }
        let h = leaky_relu(t, self.out1.forward(s, dec_feat), 0.2);
        let out = sigmoid(t, self.out2.forward(s, h));
        Ok((out, ff))
    }

    /// Eval-mode convenience: single (3,r,r) tensors in, image out.
    pub fn generate_eval(
        &self,
        i_s: &Tensor,
        heat_s: &Tensor,
        r_s: &Tensor,
        heat_t: &Tensor,
    ) -> Result<Tensor, GenError> {
        for t in [i_s, r_s, heat_s, heat_t] {
            self.check_resolution(t.shape())?;
        }
        let tape = Tape::new();
        let session = Session::new(&tape, &self.store, false);
        let r = self.config.resolution;
        let as_batch = |x: &Tensor, ch: usize| {
            tape.constant(x.reshaped(&[1, ch, r, r]))
        };
        let (out, _) = self.generate(
            &session,
            as_batch(i_s, 3),
            as_batch(heat_s, NUM_JOINTS),
            as_batch(r_s, 3),
            as_batch(heat_t, NUM_JOINTS),
        )?;
        Ok(tape.value(out).reshaped(&[3, r, r]))
    }
}

pub struct Discriminator {
    pub store: ParamStore,
    pub conditional: bool,
    pub resolution: usize,
    convs: Vec<Conv2d>,
}

impl Discriminator {
    pub fn new(cfg: &GeneratorConfig, conditional: bool) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0xD15C);
        let w = cfg.base_width;
        let sn = cfg.spectral_norm;
        let in_ch = if conditional { 6 } else { 3 };
        let widths = [in_ch, w, 2 * w, 4 * w];
        let mut convs: Vec<Conv2d> = (0..3)
            .map(|i| {
                Conv2d::new(
                    &mut store,
                    &format!("disc.c{i}"),
                    widths[i],
                    widths[i + 1],
                    4,
                    2,
                    1,
                    sn,
                    &mut rng,
                )
            })
            .collect();
        convs.push(Conv2d::new(
            &mut store, "disc.c3", 4 * w, 1, 3, 1, 1, sn, &mut rng,
        ));
        Self {
            store,
            conditional,
            resolution: cfg.resolution,
            convs,
        }
    }

    /// Patch logit map for an image conditioned on its rendering.
    /// Input is the channel concatenation when conditional.
    pub fn forward(&self, s: &Session, image: Var, rendering: Var) -> Var {
        let t = s.tape;
        let x = if self.conditional {
            concat(t, &[image, rendering], 1)
        } else {
            image
        };
        let mut cur = x;
        for (i, conv) in self.convs.iter().enumerate() {
            cur = conv.forward(s, cur);
            if i + 1 < self.convs.len() {
                cur = leaky_relu(t, cur, 0.2);
            }
        }
        cur
    }

    pub fn input_channels(&self) -> usize {
        if self.conditional {
            6
        } else {
            3
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use repose_autograd::nn::spectral_radius;

    fn cfg_small() -> GeneratorConfig {
        GeneratorConfig {
            resolution: 32,
            base_width: 8,
            scales: 3,
            spectral_norm: true,
            seed: 1,
        }
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
    }

    #[test]
    fn config_validation() {
        assert!(GeneratorConfig {
            resolution: 60,
            ..cfg_small()
        }
        .validate()
        .is_err());
        assert!(cfg_small().validate().is_ok());
    }

    #[test]
    fn flow_scale_count_matches_config() {
        let g = Generator::new(cfg_small()).unwrap();
        let tape = Tape::new();
        let s = Session::new(&tape, &g.store, false);
        let r_s = tape.constant(rand_tensor(&[1, 3, 32, 32], 1));
        let h_s = tape.constant(rand_tensor(&[1, NUM_JOINTS, 32, 32], 2));
        let h_t = tape.constant(rand_tensor(&[1, NUM_JOINTS, 32, 32], 3));
        let ff = g.flow.forward(&s, r_s, h_s, h_t);
        assert_eq!(ff.flows.len(), 3);
        for (i, f) in ff.flows.iter().enumerate() {
            let shape = tape.shape(*f);
            assert_eq!(shape[1], 2);
            assert_eq!(shape[2], 32 >> (i + 1), "scale {i} spatial size");
        }
        for o in &ff.occlusions {
            let v = tape.value(*o);
            assert!(v.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn generate_shape_and_determinism() {
        let g = Generator::new(cfg_small()).unwrap();
        let i_s = rand_tensor(&[3, 32, 32], 4);
        let h_s = rand_tensor(&[NUM_JOINTS, 32, 32], 5);
        let r_s = rand_tensor(&[3, 32, 32], 6);
        let h_t = rand_tensor(&[NUM_JOINTS, 32, 32], 7);
        let a = g.generate_eval(&i_s, &h_s, &r_s, &h_t).unwrap();
        let b = g.generate_eval(&i_s, &h_s, &r_s, &h_t).unwrap();
        assert_eq!(a.shape(), &[3, 32, 32]);
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn resolution_mismatch_rejected() {
        let g = Generator::new(cfg_small()).unwrap();
        let bad = rand_tensor(&[3, 16, 16], 1);
        let h = rand_tensor(&[NUM_JOINTS, 16, 16], 2);
        assert!(matches!(
            g.generate_eval(&bad, &h, &bad, &h),
            Err(GenError::ResolutionMismatch { .. })
        ));
    }

    #[test]
    fn cycle_composition_shares_weights() {
        // the same parameter store drives both directions
        let g = Generator::new(cfg_small()).unwrap();
        let before = g.store.fingerprint();
        let i_s = rand_tensor(&[3, 32, 32], 10);
        let h_s = rand_tensor(&[NUM_JOINTS, 32, 32], 11);
        let r_s = rand_tensor(&[3, 32, 32], 12);
        let h_t = rand_tensor(&[NUM_JOINTS, 32, 32], 13);
        let r_t = rand_tensor(&[3, 32, 32], 14);
        let i_hat_t = g.generate_eval(&i_s, &h_s, &r_s, &h_t).unwrap();
        let _i_hat_s = g.generate_eval(&i_hat_t, &h_t, &r_t, &h_s).unwrap();
        assert_eq!(g.store.fingerprint(), before);
    }

    #[test]
    fn discriminator_channels_and_determinism() {
        let cfg = cfg_small();
        let d = Discriminator::new(&cfg, true);
        assert_eq!(d.input_channels(), 6);
        let d_un = Discriminator::new(&cfg, false);
        assert_eq!(d_un.input_channels(), 3);

        let tape = Tape::new();
        let s = Session::new(&tape, &d.store, false);
        let img = tape.constant(rand_tensor(&[2, 3, 32, 32], 20));
        let ren = tape.constant(rand_tensor(&[2, 3, 32, 32], 21));
        let a = d.forward(&s, img, ren);
        let b = d.forward(&s, img, ren);
        assert_eq!(tape.value(a).data(), tape.value(b).data());
        let shape = tape.shape(a);
        assert_eq!(shape[1], 1, "patch logit map");
        assert!(shape[2] > 1, "patch map keeps spatial extent");
    }

    #[test]
    fn spectral_norm_bounds_every_normalized_layer() {
        // oracle: long power iteration on the effective weights
        let cfg = cfg_small();
        let g = Generator::new(cfg.clone()).unwrap();
        let d = Discriminator::new(&cfg, true);
        let mut warm = |store: &ParamStore| -> ParamStore {
            let mut st = store.clone();
            // advance power iterations by running training-mode forwards
            for _ in 0..48 {
                let tape = Tape::new();
                let writes = {
                    let s = Session::new(&tape, &st, true);
                    // touching every layer: run the heaviest paths
                    if store.id_of("gen.enc0.w").is_some() {
                        let i_s = tape.constant(rand_tensor(&[1, 3, 32, 32], 40));
                        let h = tape.constant(rand_tensor(&[1, NUM_JOINTS, 32, 32], 41));
                        let r_s = tape.constant(rand_tensor(&[1, 3, 32, 32], 42));
                        let _ = g.generate(&s, i_s, h, r_s, h).unwrap();
                    } else {
                        let img = tape.constant(rand_tensor(&[1, 3, 32, 32], 43));
                        let ren = tape.constant(rand_tensor(&[1, 3, 32, 32], 44));
                        let _ = d.forward(&s, img, ren);
                    }
                    s.take_buffer_writes()
                };
                let mut st2 = st.clone();
                apply_buffer_writes_local(&mut st2, writes);
                st = st2;
            }
            st
        };
        for store in [warm(&g.store), warm(&d.store)] {
            for e in store.entries() {
                if !e.name.ends_with(".w") {
                    continue;
                }
                let base = e.name.trim_end_matches(".w");
                let Some(uid) = store.id_of(&format!("{base}.sn_u")) else {
                    continue;
                };
                let shape = e.value.shape();
                let o = shape[0];
                let r: usize = shape[1..].iter().product();
                // effective weight: W / sigma with the stored u
                let u = store.value(uid);
                let vprod = {
                    let mut v = vec![0.0; r];
                    for i in 0..o {
                        for j in 0..r {
                            v[j] += e.value.data()[i * r + j] * u.data()[i];
                        }
                    }
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    v.into_iter().map(|x| x / n).collect::<Vec<_>>()
                };
                let sigma_est: f64 = (0..o)
                    .map(|i| {
                        u.data()[i]
                            * e.value.data()[i * r..(i + 1) * r]
                                .iter()
                                .zip(vprod.iter())
                                .map(|(&a, &b)| a * b)
                                .sum::<f64>()
                    })
                    .sum();
                let normalized: Vec<f64> =
                    e.value.data().iter().map(|&x| x / sigma_est).collect();
                let true_sigma = spectral_radius(&normalized, o, r, 200);
                assert!(
                    true_sigma <= 1.0 + 1e-2,
                    "{}: sigma {true_sigma}",
                    e.name
                );
            }
        }
    }

    fn apply_buffer_writes_local(
        store: &mut ParamStore,
        writes: Vec<(repose_autograd::ParamId, Tensor)>,
    ) {
        repose_autograd::apply_buffer_writes(store, writes);
    }
}
