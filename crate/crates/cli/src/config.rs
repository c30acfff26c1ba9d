//! Plain-text run configuration: `key = value` lines under `[section]`
//! headers, one section per subsystem. Unknown sections or keys are hard
//! errors, and every effective value (defaults included) is echoed into
//! the run directory so a run is reproducible from its artifacts alone.

use std::fmt::Write as _;
use std::path::Path;

use repose_core::bodymodel::BodyConfig;
use repose_core::data::{DatasetConfig, SampleConfig};
use repose_core::fit::FitConfig;
use repose_learn::features::ExtractorConfig;
use repose_learn::regress::{RegressorConfig, TrainRegressorConfig};
use repose_learn::trainer::TrainConfig;

#[derive(Debug)]
pub struct ConfigError {
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError {
        message: msg.into(),
    }
}

/// Everything a run can configure, with working defaults.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub data_n_train: usize,
    pub data_n_eval_pairs: usize,
    pub data_poses_per_eval_subject: usize,
    pub data_seed: u64,
    pub data_resolution: usize,
    pub body: BodyConfig,
    pub fit: FitConfig,
    pub train: TrainConfig,
    pub regress_net: RegressorConfig,
    pub regress_train: TrainRegressorConfig,
    pub extractor: ExtractorConfig,
    pub extractor_epochs: usize,
    pub extractor_batch: usize,
    pub extractor_lr: f64,
    pub extractor_path: Option<String>,
    pub regressor_path: Option<String>,
    pub eval_cx_layer: usize,
    pub eval_cx_bandwidth: f64,
    pub eval_oks_kappa: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_n_train: 2000,
            data_n_eval_pairs: 22,
            data_poses_per_eval_subject: 3,
            data_seed: 1,
            data_resolution: 64,
            body: BodyConfig::default(),
            fit: FitConfig::default(),
            train: TrainConfig::default(),
            regress_net: RegressorConfig::default(),
            regress_train: TrainRegressorConfig::default(),
            extractor: ExtractorConfig::default(),
            extractor_epochs: 10,
            extractor_batch: 16,
            extractor_lr: 2e-3,
            extractor_path: None,
            regressor_path: None,
            eval_cx_layer: 2,
            eval_cx_bandwidth: 0.5,
            eval_oks_kappa: 0.1,
        }
    }
}

impl RunConfig {
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            n_train: self.data_n_train,
            n_eval_pairs: self.data_n_eval_pairs,
            poses_per_eval_subject: self.data_poses_per_eval_subject,
            seed: self.data_seed,
            resolution: self.data_resolution,
            sample: SampleConfig::default(),
        }
    }

    /// Parse the text format on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                let known = [
                    "data", "body", "fit", "gen", "losses", "trainer", "regress", "extractor",
                    "eval",
                ];
                if !known.contains(&section.as_str()) {
                    return Err(err(format!("line {}: unknown section [{section}]", ln + 1)));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(format!("line {}: expected key = value", ln + 1)));
            };
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value)
                .map_err(|e| err(format!("line {}: {}", ln + 1, e.message)))?;
        }
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        fn p<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value
                .parse::<T>()
                .map_err(|_| err(format!("bad value '{value}' for key {key}")))
        }
        let unknown = || Err(err(format!("unknown key '{key}' in section [{section}]")));
        match section {
            "data" => match key {
                "n_train" => self.data_n_train = p(key, value)?,
                "n_eval_pairs" => self.data_n_eval_pairs = p(key, value)?,
                "poses_per_eval_subject" => self.data_poses_per_eval_subject = p(key, value)?,
                "seed" => self.data_seed = p(key, value)?,
                "resolution" => self.data_resolution = p(key, value)?,
                _ => return unknown(),
            },
            "body" => match key {
                "target_vertices" => self.body.target_vertices = p(key, value)?,
                _ => return unknown(),
            },
            "fit" => match key {
                "sigma_px" => self.fit.sigma_px = p(key, value)?,
                "w_pose" => self.fit.w_pose = p(key, value)?,
                "w_shape" => self.fit.w_shape = p(key, value)?,
                "iters_stage1" => self.fit.iters_stage1 = p(key, value)?,
                "iters_stage2" => self.fit.iters_stage2 = p(key, value)?,
                "base_lr" => self.fit.base_lr = p(key, value)?,
                "min_visible" => self.fit.min_visible = p(key, value)?,
                _ => return unknown(),
            },
            "gen" => match key {
                "resolution" => self.train.gen.resolution = p(key, value)?,
                "base_width" => self.train.gen.base_width = p(key, value)?,
                "scales" => self.train.gen.scales = p(key, value)?,
                "spectral_norm" => self.train.gen.spectral_norm = p(key, value)?,
                "seed" => self.train.gen.seed = p(key, value)?,
                _ => return unknown(),
            },
            "losses" => match key {
                "lambda_percep" => self.train.weights.lambda_percep = p(key, value)?,
                "lambda_style" => self.train.weights.lambda_style = p(key, value)?,
                "lambda_pix" => self.train.weights.lambda_pix = p(key, value)?,
                "lambda_a1" => self.train.weights.lambda_a1 = p(key, value)?,
                "lambda_a2" => self.train.weights.lambda_a2 = p(key, value)?,
                "alpha_cycle" => self.train.weights.alpha_cycle = p(key, value)?,
                "alpha_flow" => self.train.weights.alpha_flow = p(key, value)?,
                "alpha_adv" => self.train.weights.alpha_adv = p(key, value)?,
                "alpha_pose" => self.train.weights.alpha_pose = p(key, value)?,
                "alpha_shape" => self.train.weights.alpha_shape = p(key, value)?,
                "alpha_app" => self.train.weights.alpha_app = p(key, value)?,
                _ => return unknown(),
            },
            "trainer" => match key {
                "lr_g" => self.train.lr_g = p(key, value)?,
                "lr_d" => self.train.lr_d = p(key, value)?,
                "batch_size" => self.train.batch_size = p(key, value)?,
                "epochs" => self.train.epochs = p(key, value)?,
                "seed" => self.train.seed = p(key, value)?,
                "flow_pretrain_epochs" => self.train.flow_pretrain_epochs = p(key, value)?,
                "heatmap_sigma" => self.train.heatmap_sigma = p(key, value)?,
                "patch_size" => self.train.patch_size = p(key, value)?,
                "flow_layer" => self.train.flow_layer = p(key, value)?,
                "flow_reg_weight" => self.train.flow_reg_weight = p(key, value)?,
                "eval_every" => self.train.eval_every = p(key, value)?,
                "checkpoint_every" => self.train.checkpoint_every = p(key, value)?,
                "no_shape" => self.train.ablation.no_shape = p(key, value)?,
                "no_pose" => self.train.ablation.no_pose = p(key, value)?,
                "no_appearance" => self.train.ablation.no_appearance = p(key, value)?,
                "unconditional_d" => self.train.ablation.unconditional_d = p(key, value)?,
                "extractor_path" => self.extractor_path = Some(value.to_string()),
                "regressor_path" => self.regressor_path = Some(value.to_string()),
                _ => return unknown(),
            },
            "regress" => match key {
                "resolution" => self.regress_net.resolution = p(key, value)?,
                "base_width" => self.regress_net.base_width = p(key, value)?,
                "seed" => self.regress_net.seed = p(key, value)?,
                "epochs" => self.regress_train.epochs = p(key, value)?,
                "batch_size" => self.regress_train.batch_size = p(key, value)?,
                "lr" => self.regress_train.lr = p(key, value)?,
                "lr_final" => self.regress_train.lr_final = p(key, value)?,
                "w_beta" => self.regress_train.w_beta = p(key, value)?,
                "w_rot" => self.regress_train.w_rot = p(key, value)?,
                "w_cam" => self.regress_train.w_cam = p(key, value)?,
                "train_seed" => self.regress_train.seed = p(key, value)?,
                _ => return unknown(),
            },
            "extractor" => match key {
                "base_width" => self.extractor.base_width = p(key, value)?,
                "seed" => self.extractor.seed = p(key, value)?,
                "epochs" => self.extractor_epochs = p(key, value)?,
                "batch_size" => self.extractor_batch = p(key, value)?,
                "lr" => self.extractor_lr = p(key, value)?,
                _ => return unknown(),
            },
            "eval" => match key {
                "protocol_resolution" => self.train.fid.protocol_resolution = p(key, value)?,
                "shrinkage" => {
                    self.train.fid.shrinkage = if value == "none" {
                        None
                    } else {
                        Some(p(key, value)?)
                    }
                }
                "cx_layer" => self.eval_cx_layer = p(key, value)?,
                "cx_bandwidth" => self.eval_cx_bandwidth = p(key, value)?,
                "oks_kappa" => self.eval_oks_kappa = p(key, value)?,
                _ => return unknown(),
            },
            "" => return Err(err(format!("key '{key}' appears before any [section]"))),
            other => return Err(err(format!("unknown section [{other}]"))),
        }
        Ok(())
    }

    /// Render every effective value in the parseable format.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        writeln!(w, "[data]").unwrap();
        writeln!(w, "n_train = {}", self.data_n_train).unwrap();
        writeln!(w, "n_eval_pairs = {}", self.data_n_eval_pairs).unwrap();
        writeln!(
            w,
            "poses_per_eval_subject = {}",
            self.data_poses_per_eval_subject
        )
        .unwrap();
        writeln!(w, "seed = {}", self.data_seed).unwrap();
        writeln!(w, "resolution = {}", self.data_resolution).unwrap();
        writeln!(w, "\n[body]").unwrap();
        writeln!(w, "target_vertices = {}", self.body.target_vertices).unwrap();
        writeln!(w, "\n[fit]").unwrap();
        writeln!(w, "sigma_px = {}", self.fit.sigma_px).unwrap();
        writeln!(w, "w_pose = {}", self.fit.w_pose).unwrap();
        writeln!(w, "w_shape = {}", self.fit.w_shape).unwrap();
        writeln!(w, "iters_stage1 = {}", self.fit.iters_stage1).unwrap();
        writeln!(w, "iters_stage2 = {}", self.fit.iters_stage2).unwrap();
        writeln!(w, "base_lr = {}", self.fit.base_lr).unwrap();
        writeln!(w, "min_visible = {}", self.fit.min_visible).unwrap();
        writeln!(w, "\n[gen]").unwrap();
        writeln!(w, "resolution = {}", self.train.gen.resolution).unwrap();
        writeln!(w, "base_width = {}", self.train.gen.base_width).unwrap();
        writeln!(w, "scales = {}", self.train.gen.scales).unwrap();
        writeln!(w, "spectral_norm = {}", self.train.gen.spectral_norm).unwrap();
        writeln!(w, "seed = {}", self.train.gen.seed).unwrap();
        writeln!(w, "\n[losses]").unwrap();
        let lw = &self.train.weights;
        writeln!(w, "lambda_percep = {}", lw.lambda_percep).unwrap();
        writeln!(w, "lambda_style = {}", lw.lambda_style).unwrap();
        writeln!(w, "lambda_pix = {}", lw.lambda_pix).unwrap();
        writeln!(w, "lambda_a1 = {}", lw.lambda_a1).unwrap();
        writeln!(w, "lambda_a2 = {}", lw.lambda_a2).unwrap();
        writeln!(w, "alpha_cycle = {}", lw.alpha_cycle).unwrap();
        writeln!(w, "alpha_flow = {}", lw.alpha_flow).unwrap();
        writeln!(w, "alpha_adv = {}", lw.alpha_adv).unwrap();
        writeln!(w, "alpha_pose = {}", lw.alpha_pose).unwrap();
        writeln!(w, "alpha_shape = {}", lw.alpha_shape).unwrap();
        writeln!(w, "alpha_app = {}", lw.alpha_app).unwrap();
        writeln!(w, "\n[trainer]").unwrap();
        writeln!(w, "lr_g = {}", self.train.lr_g).unwrap();
        writeln!(w, "lr_d = {}", self.train.lr_d).unwrap();
        writeln!(w, "batch_size = {}", self.train.batch_size).unwrap();
        writeln!(w, "epochs = {}", self.train.epochs).unwrap();
        writeln!(w, "seed = {}", self.train.seed).unwrap();
        writeln!(w, "flow_pretrain_epochs = {}", self.train.flow_pretrain_epochs).unwrap();
        writeln!(w, "heatmap_sigma = {}", self.train.heatmap_sigma).unwrap();
        writeln!(w, "patch_size = {}", self.train.patch_size).unwrap();
        writeln!(w, "flow_layer = {}", self.train.flow_layer).unwrap();
        writeln!(w, "flow_reg_weight = {}", self.train.flow_reg_weight).unwrap();
        writeln!(w, "eval_every = {}", self.train.eval_every).unwrap();
        writeln!(w, "checkpoint_every = {}", self.train.checkpoint_every).unwrap();
        let ab = &self.train.ablation;
        writeln!(w, "no_shape = {}", ab.no_shape).unwrap();
        writeln!(w, "no_pose = {}", ab.no_pose).unwrap();
        writeln!(w, "no_appearance = {}", ab.no_appearance).unwrap();
        writeln!(w, "unconditional_d = {}", ab.unconditional_d).unwrap();
        if let Some(p) = &self.extractor_path {
            writeln!(w, "extractor_path = {p}").unwrap();
        }
        if let Some(p) = &self.regressor_path {
            writeln!(w, "regressor_path = {p}").unwrap();
        }
        writeln!(w, "\n[regress]").unwrap();
        writeln!(w, "resolution = {}", self.regress_net.resolution).unwrap();
        writeln!(w, "base_width = {}", self.regress_net.base_width).unwrap();
        writeln!(w, "seed = {}", self.regress_net.seed).unwrap();
        writeln!(w, "epochs = {}", self.regress_train.epochs).unwrap();
        writeln!(w, "batch_size = {}", self.regress_train.batch_size).unwrap();
        writeln!(w, "lr = {}", self.regress_train.lr).unwrap();
        writeln!(w, "lr_final = {}", self.regress_train.lr_final).unwrap();
        writeln!(w, "w_beta = {}", self.regress_train.w_beta).unwrap();
        writeln!(w, "w_rot = {}", self.regress_train.w_rot).unwrap();
        writeln!(w, "w_cam = {}", self.regress_train.w_cam).unwrap();
        writeln!(w, "train_seed = {}", self.regress_train.seed).unwrap();
        writeln!(w, "\n[extractor]").unwrap();
        writeln!(w, "base_width = {}", self.extractor.base_width).unwrap();
        writeln!(w, "seed = {}", self.extractor.seed).unwrap();
        writeln!(w, "epochs = {}", self.extractor_epochs).unwrap();
        writeln!(w, "batch_size = {}", self.extractor_batch).unwrap();
        writeln!(w, "lr = {}", self.extractor_lr).unwrap();
        writeln!(w, "\n[eval]").unwrap();
        writeln!(w, "protocol_resolution = {}", self.train.fid.protocol_resolution).unwrap();
        match self.train.fid.shrinkage {
            Some(v) => writeln!(w, "shrinkage = {v}").unwrap(),
            None => writeln!(w, "shrinkage = none").unwrap(),
        }
        writeln!(w, "cx_layer = {}", self.eval_cx_layer).unwrap();
        writeln!(w, "cx_bandwidth = {}", self.eval_cx_bandwidth).unwrap();
        writeln!(w, "oks_kappa = {}", self.eval_oks_kappa).unwrap();
        s
    }

    /// Consistency constraints across sections.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train
            .gen
            .validate()
            .map_err(|e| err(e.to_string()))?;
        self.train
            .weights
            .validate()
            .map_err(|e| err(e.to_string()))?;
        if self.regress_net.resolution != self.train.gen.resolution {
            return Err(err(format!(
                "regress.resolution {} must match gen.resolution {}",
                self.regress_net.resolution, self.train.gen.resolution
            )));
        }
        Ok(())
    }

}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_echo() {
        let cfg = RunConfig::default();
        let echoed = cfg.echo();
        let parsed = RunConfig::parse(&echoed).unwrap();
        assert_eq!(parsed.echo(), echoed);
    }

    #[test]
    fn unknown_key_is_hard_error_naming_the_key() {
        let e = RunConfig::parse("[trainer]\nbanana = 7\n").unwrap_err();
        assert!(e.message.contains("banana"), "{}", e.message);
        let e2 = RunConfig::parse("[fruit]\nepochs = 2\n").unwrap_err();
        assert!(e2.message.contains("fruit"));
        let e3 = RunConfig::parse("epochs = 2\n").unwrap_err();
        assert!(e3.message.contains("before any"));
    }

    #[test]
    fn values_apply_and_comments_ignored() {
        let text = "
[trainer]
epochs = 7   # short run
batch_size = 3
no_pose = true

[gen]
base_width = 12
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.batch_size, 3);
        assert!(cfg.train.ablation.no_pose);
        assert_eq!(cfg.train.gen.base_width, 12);
    }
}
