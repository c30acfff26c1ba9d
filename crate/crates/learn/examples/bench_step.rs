use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use repose_autograd::Tensor;
use repose_core::bodymodel::{build_default_template, BodyConfig, NUM_JOINTS};
use repose_core::data::{build_dataset, DatasetConfig, SampleConfig};
use repose_learn::features::{ConvFeatures, ExtractorConfig};
use repose_learn::gen::GeneratorConfig;
use repose_learn::regress::{Regressor, RegressorConfig};
use repose_learn::trainer::*;
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let template = Arc::new(build_default_template(&BodyConfig::default()).unwrap());
    let dir = std::env::temp_dir().join("repose_bench_data");
    let n_train = 24;
    let index = if dir.join("index.json").exists() {
        repose_core::data::DatasetIndex::load(&dir).unwrap()
    } else {
        std::fs::create_dir_all(&dir).unwrap();
        build_dataset(&template, &DatasetConfig {
            n_train,
            n_eval_pairs: 2,
            poses_per_eval_subject: 2,
            seed: 3,
            resolution: 64,
            sample: SampleConfig::default(),
        }, &dir).unwrap()
    };
    eprintln!("dataset ready at {:?} ({:.1?})", dir, t0.elapsed());

    let config = TrainConfig {
        batch_size: 4,
        epochs: 1,
        flow_pretrain_epochs: 0,
        gen: GeneratorConfig { resolution: 64, base_width: 32, scales: 3, spectral_norm: true, seed: 7 },
        ..Default::default()
    };
    let regressor = Regressor::new(RegressorConfig { resolution: 64, base_width: 16, seed: 5 });
    let phi = Arc::new(ConvFeatures::new(ExtractorConfig { base_width: 16, seed: 11 }));
    let t1 = Instant::now();
    let pipeline = Pipeline::load(&dir, &index, &config, template.clone(), &regressor, phi).unwrap();
    eprintln!("pipeline load (incl fits of {} samples): {:.1?}", n_train + 4, t1.elapsed());

    let mut state = TrainState::new(&config).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    // warmup
    let pairs: Vec<(usize, usize)> = (0..4).map(|_| {
        let s = rng.random_range(0..n_train); let mut t = rng.random_range(0..n_train);
        while t == s { t = rng.random_range(0..n_train); }
        (s, t)
    }).collect();
    let _ = train_step(&pipeline, &mut state, &regressor, &config, &pairs).unwrap();
    let t2 = Instant::now();
    let iters = 5;
    for _ in 0..iters {
        let _ = train_step(&pipeline, &mut state, &regressor, &config, &pairs).unwrap();
    }
    eprintln!("train_step (batch 4, 64x64, w32): {:.3?} per step", t2.elapsed() / iters);

    // width 16 variant
    let config16 = TrainConfig {
        gen: GeneratorConfig { resolution: 64, base_width: 16, scales: 3, spectral_norm: true, seed: 7 },
        ..config.clone()
    };
    let mut state16 = TrainState::new(&config16).unwrap();
    let _ = train_step(&pipeline, &mut state16, &regressor, &config16, &pairs).unwrap();
    let t3 = Instant::now();
    for _ in 0..iters {
        let _ = train_step(&pipeline, &mut state16, &regressor, &config16, &pairs).unwrap();
    }
    eprintln!("train_step (batch 4, 64x64, w16): {:.3?} per step", t3.elapsed() / iters);

    // eval cost
    let t4 = Instant::now();
    let block = evaluate(&pipeline, &state, &regressor, &config, 0).unwrap();
    eprintln!("evaluate (4 pairs + fid vs {} refs): {:.2?}  fid={:.3}", n_train, t4.elapsed(), block.fid);
    let _ = Tensor::zeros(&[1]);
    let _ = NUM_JOINTS;
}
