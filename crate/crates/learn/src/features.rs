//! Deep feature extractors for the loss and metric stacks.
//!
//! The working extractor is the encoder of a small convolutional
//! autoencoder trained for reconstruction on synthetic images. Layers
//! expose their downsampling exponent d so masks can be pooled to match
//! (layer j has spatial size input / 2^d_j). An identity extractor backs
//! hand-computable oracle tests.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use repose_autograd::{
    adam_step, apply_buffer_writes, mean, mul, relu, sigmoid, sub, AdamConfig, Conv2d, ParamStore,
    Session, Tape, Tensor, Var,
};
use serde::{Deserialize, Serialize};

/// Layer stack evaluated inside an existing tape. Implementations are
/// frozen: gradients flow through to the input, never into the extractor.
pub trait Features {
    /// (activation, downsampling exponent) per layer, shallow to deep.
    fn features(&self, tape: &Tape, x: Var) -> Vec<(Var, usize)>;
    fn num_layers(&self) -> usize;
}

/// Passes the input through unchanged; one layer with d = 0.
pub struct IdentityFeatures;

impl Features for IdentityFeatures {
    fn features(&self, _tape: &Tape, x: Var) -> Vec<(Var, usize)> {
        vec![(x, 0)]
    }
    fn num_layers(&self) -> usize {
        1
    }
}

pub const EXTRACTOR_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub base_width: usize,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            base_width: 16,
            seed: 17,
        }
    }
}

/// Convolutional encoder with declared downsampling exponents 0, 1, 2.
pub struct ConvFeatures {
    pub store: ParamStore,
    pub config: ExtractorConfig,
    enc1: Conv2d,
    enc2: Conv2d,
    enc3: Conv2d,
    dec1: Conv2d,
    dec2: Conv2d,
    dec3: Conv2d,
}

impl ConvFeatures {
    pub fn new(config: ExtractorConfig) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let w = config.base_width;
        let enc1 = Conv2d::new(&mut store, "enc1", 3, w, 3, 1, 1, false, &mut rng);
        let enc2 = Conv2d::new(&mut store, "enc2", w, 2 * w, 3, 2, 1, false, &mut rng);
        let enc3 = Conv2d::new(&mut store, "enc3", 2 * w, 4 * w, 3, 2, 1, false, &mut rng);
        let dec1 = Conv2d::new(&mut store, "dec1", 4 * w, 2 * w, 3, 1, 1, false, &mut rng);
        let dec2 = Conv2d::new(&mut store, "dec2", 2 * w, w, 3, 1, 1, false, &mut rng);
        let dec3 = Conv2d::new(&mut store, "dec3", w, 3, 3, 1, 1, false, &mut rng);
        Self {
            store,
            config,
            enc1,
            enc2,
            enc3,
            dec1,
            dec2,
            dec3,
        }
    }

    /// Dimension of the pooled metric feature vector: global plus 2x2
    /// quadrant averages of the deepest layer.
    pub fn feature_dim(&self) -> usize {
        5 * (4 * self.config.base_width)
    }

    fn encode(&self, s: &Session, x: Var) -> [Var; 3] {
        let f1 = relu(s.tape, self.enc1.forward(s, x));
        let f2 = relu(s.tape, self.enc2.forward(s, f1));
        let f3 = relu(s.tape, self.enc3.forward(s, f2));
        [f1, f2, f3]
    }

    fn decode(&self, s: &Session, f3: Var) -> Var {
        let t = s.tape;
        let d1 = relu(t, self.dec1.forward(s, repose_autograd::upsample_nearest2(t, f3)));
        let d2 = relu(t, self.dec2.forward(s, repose_autograd::upsample_nearest2(t, d1)));
        sigmoid(t, self.dec3.forward(s, d2))
    }

    /// One autoencoder training step on a batch (n,3,h,w); returns the
    /// reconstruction loss.
    fn train_step(&mut self, batch: &Tensor, step: u64, lr: f64) -> f64 {
        let tape = Tape::new();
        let (loss_val, grads, writes) = {
            let session = Session::new(&tape, &self.store, true);
            let x = tape.constant(batch.clone());
            let enc = self.encode(&session, x);
            let recon = self.decode(&session, enc[2]);
            let diff = sub(&tape, recon, x);
            let l2 = mul(&tape, diff, diff);
            let loss = mean(&tape, l2);
            let loss_val = tape.value(loss).item();
            let grads_all = tape.backward(loss);
            (loss_val, session.collect_grads(&grads_all), session.take_buffer_writes())
        };
        apply_buffer_writes(&mut self.store, writes);
        adam_step(&mut self.store, &grads, step, AdamConfig::with_lr(lr));
        loss_val
    }
}

impl Features for ConvFeatures {
    fn features(&self, tape: &Tape, x: Var) -> Vec<(Var, usize)> {
        let session = Session::new(tape, &self.store, false);
        let [f1, f2, f3] = self.encode(&session, x);
        vec![(f1, 0), (f2, 1), (f3, 2)]
    }
    fn num_layers(&self) -> usize {
        3
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractorReport {
    pub epochs: usize,
    pub losses: Vec<f64>,
}

/// Train the autoencoder on a set of images (each (3,h,w), equal sizes).
pub fn train_extractor(
    images: &[Tensor],
    config: ExtractorConfig,
    epochs: usize,
    batch_size: usize,
    lr: f64,
) -> Result<(ConvFeatures, ExtractorReport), String> {
    if images.is_empty() {
        return Err("extractor training needs at least one image".into());
    }
    let shape = images[0].shape().to_vec();
    if images.iter().any(|t| t.shape() != shape.as_slice()) {
        return Err("extractor training images must share one shape".into());
    }
    let mut net = ConvFeatures::new(config.clone());
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut step = 0u64;
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size.max(1)) {
            let batch = stack(images, chunk);
            step += 1;
            epoch_loss += net.train_step(&batch, step, lr);
            batches += 1;
        }
        losses.push(epoch_loss / batches.max(1) as f64);
    }
    Ok((
        net,
        ExtractorReport {
            epochs,
            losses,
        },
    ))
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha12Rng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Stack (c,h,w) images into (n,c,h,w).
pub fn stack(images: &[Tensor], idx: &[usize]) -> Tensor {
    let shape = images[idx[0]].shape();
    let per = images[idx[0]].len();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(images[i].data());
    }
    let mut full = vec![idx.len()];
    full.extend_from_slice(shape);
    Tensor::from_vec(&full, data)
}

pub fn save_extractor(
    net: &ConvFeatures,
    path: &std::path::Path,
    extra_meta: serde_json::Value,
) -> Result<(), repose_autograd::io::CheckpointError> {
    let meta = serde_json::json!({
        "kind": "feature-extractor",
        "config": net.config,
        "extra": extra_meta,
    });
    repose_autograd::io::save_checkpoint(path, EXTRACTOR_VERSION, &[("phi", &net.store)], &meta)
}

pub fn load_extractor(
    path: &std::path::Path,
) -> Result<ConvFeatures, repose_autograd::io::CheckpointError> {
    let raw = repose_autograd::io::load_checkpoint(path)?;
    let config: ExtractorConfig = serde_json::from_value(raw.meta["config"].clone())
        .map_err(repose_autograd::io::CheckpointError::Meta)?;
    let mut net = ConvFeatures::new(config);
    raw.load_into("phi", &mut net.store)?;
    Ok(net)
}
