//! Flat run configuration: every knob of the pipeline in one document,
//! with layered overrides (defaults < config file < environment < flags)
//! and an effective-config echo for exact re-runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::AdvConfig;
use crate::corpus::SyntheticConfig;
use crate::encoders::{Arch, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::Aggregation;
use crate::trainer::TrainConfig;

/// Environment variables `DENOISE_<KEY>` override the matching config key.
pub const ENV_PREFIX: &str = "DENOISE_";

/// Union of all pipeline settings as one flat key-value document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random substream derives from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub arch: Arch,

    // synthetic data
    pub n_relations: usize,
    pub n_entity_pairs: usize,
    pub min_sentences_per_pair: usize,
    pub max_sentences_per_pair: usize,
    pub templates_per_relation: usize,
    pub noise_rate: f64,
    pub vocab_size: usize,

    // encoder
    pub max_len: usize,
    pub k_w: usize,
    /// Position embedding width; architecture default when omitted.
    pub k_p: Option<usize>,
    /// Hidden width; architecture default when omitted.
    pub k_h: Option<usize>,
    pub window: usize,
    pub dropout_p: f64,

    // adversarial game
    pub alpha: f64,
    pub lambda: f64,
    pub conf_batch: usize,
    pub unconf_batch: usize,

    // optimization schedule
    pub alpha_d: f64,
    pub alpha_s: f64,
    pub epochs: usize,
    pub promotion_period: usize,
    pub tau_d: f64,
    pub confident_fraction: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,

    // evaluation
    pub aggregation: Aggregation,
    /// Checkpoint file (relative to out_dir) that eval and inspect load.
    pub eval_checkpoint: String,
    pub inspect_relation: usize,
    pub inspect_k: usize,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            arch: Arch::Pcnn,
            n_relations: 8,
            n_entity_pairs: 500,
            min_sentences_per_pair: 1,
            max_sentences_per_pair: 4,
            templates_per_relation: 3,
            noise_rate: 0.3,
            vocab_size: 2000,
            max_len: 120,
            k_w: 50,
            k_p: None,
            k_h: None,
            window: 3,
            dropout_p: 0.5,
            alpha: 1.0,
            lambda: 1.0,
            conf_batch: 64,
            unconf_batch: 128,
            alpha_d: 0.1,
            alpha_s: 0.01,
            epochs: 100,
            promotion_period: 10,
            tau_d: 0.5,
            confident_fraction: 0.3,
            clip_norm: 5.0,
            pretrain_epochs: 50,
            pretrain_lr: 0.02,
            pretrain_batch: 32,
            aggregation: Aggregation::Max,
            eval_checkpoint: "final.ckpt".into(),
            inspect_relation: 1,
            inspect_k: 5,
        }
    }
}

/// Settings passed as command-line flags, overriding file and environment.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub arch: Option<Arch>,
}

fn parse_env_value(raw: &str) -> toml::Value {
    // bare TOML literal (number, bool, quoted string); plain words fall
    // back to strings so DENOISE_ARCH=pcnn works unquoted
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn merge_layer(base: &mut toml::Table, layer: toml::Table) {
    for (k, v) in layer {
        base.insert(k, v);
    }
}

/// Assemble the effective configuration. `env` is the process environment
/// (injected for testability); only `DENOISE_*` entries are consulted.
pub fn load_config(
    cli: &CliOverrides,
    env: impl Iterator<Item = (String, String)>,
) -> Result<RunConfig> {
    let defaults = toml::Value::try_from(RunConfig::default())
        .expect("defaults serialize")
        .as_table()
        .expect("defaults form a table")
        .clone();
    let mut merged = defaults;

    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merge_layer(&mut merged, table);
    }

    let mut env_table = toml::Table::new();
    for (key, value) in env {
        if let Some(stripped) = key.strip_prefix(ENV_PREFIX) {
            env_table.insert(stripped.to_lowercase(), parse_env_value(&value));
        }
    }
    merge_layer(&mut merged, env_table);

    let mut cfg: RunConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e| Error::Config(e.to_string()))?;

    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(arch) = cli.arch {
        cfg.arch = arch;
    }

    // pin the architecture-dependent widths so the echoed config is complete
    let arch_defaults = EncoderConfig::with_defaults(cfg.arch, cfg.vocab_size, 2);
    cfg.k_p.get_or_insert(arch_defaults.k_p);
    cfg.k_h.get_or_insert(arch_defaults.k_h);

    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.synthetic_config().validate()?;
        self.adv_config().validate()?;
        self.train_config().validate()?;
        // encoder dims are validated against the real vocab/schema at use;
        // check the shape-independent parts here
        if self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "window must be odd, got {}",
                self.window
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p {} not in [0,1)",
                self.dropout_p
            )));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config(format!(
                "clip_norm must be >= 0 (0 disables), got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_relations: self.n_relations,
            n_entity_pairs: self.n_entity_pairs,
            min_sentences_per_pair: self.min_sentences_per_pair,
            max_sentences_per_pair: self.max_sentences_per_pair,
            templates_per_relation: self.templates_per_relation,
            noise_rate: self.noise_rate,
            vocab_size: self.vocab_size,
            seed: self.seed,
        }
    }

    /// Encoder settings against the actual vocabulary and schema sizes.
    pub fn encoder_config(&self, vocab_size: usize, n_relations: usize) -> EncoderConfig {
        let defaults = EncoderConfig::with_defaults(self.arch, vocab_size, n_relations);
        EncoderConfig {
            arch: self.arch,
            vocab_size,
            n_relations,
            max_len: self.max_len,
            k_w: self.k_w,
            k_p: self.k_p.unwrap_or(defaults.k_p),
            k_h: self.k_h.unwrap_or(defaults.k_h),
            window: self.window,
            dropout_p: self.dropout_p,
        }
    }

    pub fn adv_config(&self) -> AdvConfig {
        AdvConfig {
            alpha: self.alpha,
            lambda: self.lambda,
            conf_batch: self.conf_batch,
            unconf_batch: self.unconf_batch,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            alpha_d: self.alpha_d,
            alpha_s: self.alpha_s,
            epochs: self.epochs,
            promotion_period: self.promotion_period,
            tau_d: self.tau_d,
            confident_fraction: self.confident_fraction,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            pretrain_epochs: self.pretrain_epochs,
            pretrain_lr: self.pretrain_lr,
            pretrain_batch: self.pretrain_batch,
            seed: self.seed,
        }
    }

    /// Write the fully resolved configuration into the output directory.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(dir.join("config.toml"), text)?;
        Ok(())
    }
}
