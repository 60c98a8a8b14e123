//! Plain-text `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional and falls back to the role's default.

use std::path::PathBuf;

use hseq_numcore::SgdSchedule;

use crate::corpus::Vocabulary;
use crate::error::{HseqError, Result};
use crate::network::{DecoderConfig, EncoderConfig, NetworkRole, NetworkSpec, INIT_SCALE};
use crate::training::TrainingRun;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub role: NetworkRole,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub bidirectional_first: bool,
    pub residual_layers: Vec<usize>,
    pub max_source_len: usize,
    pub max_decode_len: usize,
    pub vocab_size: usize,
    pub threshold: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub init_scale: f64,
    pub schedule: SgdSchedule,
    pub metrics_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn defaults(role: NetworkRole) -> Self {
        let (encoder, decoder_layers) = match role {
            NetworkRole::Coarse => (EncoderConfig::coarse(128), 4),
            NetworkRole::Fine => (EncoderConfig::fine(128), 3),
        };
        let decoder = DecoderConfig::new(decoder_layers, 128);
        Self {
            role,
            encoder_layers: encoder.num_layers,
            decoder_layers,
            hidden_dim: encoder.hidden_dim,
            embed_dim: encoder.embed_dim,
            bidirectional_first: encoder.bidirectional_first,
            residual_layers: encoder.residual_layers,
            max_source_len: encoder.max_source_len,
            max_decode_len: decoder.max_decode_len,
            vocab_size: 50_000,
            threshold: 50,
            batch_size: 256,
            steps: 20_000,
            seed: 1,
            init_scale: INIT_SCALE,
            schedule: SgdSchedule::default(),
            metrics_path: None,
        }
    }

    /// Role defaults overridden by the assignments in `text`.
    pub fn parse(text: &str, role: NetworkRole) -> Result<Self> {
        let mut cfg = Self::defaults(role);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HseqError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| HseqError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    /// Assigns one key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        match key {
            "encoder_layers" => self.encoder_layers = num(key, value)?,
            "decoder_layers" => self.decoder_layers = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "bidirectional_first" => self.bidirectional_first = num(key, value)?,
            "residual_layers" => {
                self.residual_layers = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| num(key, s))
                    .collect::<std::result::Result<_, _>>()?
            }
            "max_source_len" => self.max_source_len = num(key, value)?,
            "max_decode_len" => self.max_decode_len = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "threshold" => self.threshold = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "init_scale" => self.init_scale = num(key, value)?,
            "initial_lr" => self.schedule.initial_lr = num(key, value)?,
            "decay_start_step" => self.schedule.decay_start_step = num(key, value)?,
            "decay_interval" => self.schedule.decay_interval = num(key, value)?,
            "decay_factor" => self.schedule.decay_factor = num(key, value)?,
            "min_lr" => self.schedule.min_lr = num(key, value)?,
            "clip_norm" => self.schedule.clip_norm = num(key, value)?,
            "metrics" => self.metrics_path = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn network_spec(&self, source_vocab: Vocabulary, target_vocab: Vocabulary) -> Result<NetworkSpec> {
        let spec = NetworkSpec {
            role: self.role,
            encoder: EncoderConfig {
                num_layers: self.encoder_layers,
                hidden_dim: self.hidden_dim,
                embed_dim: self.embed_dim,
                bidirectional_first: self.bidirectional_first,
                residual_layers: self.residual_layers.clone(),
                max_source_len: self.max_source_len,
            },
            decoder: DecoderConfig {
                num_layers: self.decoder_layers,
                hidden_dim: self.hidden_dim,
                embed_dim: self.embed_dim,
                max_decode_len: self.max_decode_len,
            },
            source_vocab,
            target_vocab,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn training_run(&self, spec: NetworkSpec) -> Result<TrainingRun> {
        let run = TrainingRun {
            spec,
            schedule: self.schedule.clone(),
            batch_size: self.batch_size,
            max_steps: self.steps,
            seed: self.seed,
            init_scale: self.init_scale,
        };
        run.validate()?;
        Ok(run)
    }
}
