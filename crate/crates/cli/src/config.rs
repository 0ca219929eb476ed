//! TOML run configuration.
//!
//! ```toml
//! output_dir = "runs/a"        # optional
//!
//! [train]
//! epochs = 50                  # required
//! seed = 7                     # required
//! batch_size = 32
//! lr_text = 5e-4
//! lr_audio = 1e-3
//! lr_visual = 1e-3
//! lr_fusion = 1e-3
//! cpc_weight = 0.1
//! dropout_text = 0.0
//! dropout_audio = 0.1
//! dropout_visual = 0.1
//! dropout_fusion = 0.1
//! range = [-3.0, 3.0]          # defaults to the data's range
//! tasks = "M,T,A,V"
//! cpc_terms = ["mt", "ma", "mv"]
//!
//! [model]                      # optional, every key defaulted
//! text_encoder = "first_position"
//! text_hidden = 16
//! audio_hidden = 16
//! visual_hidden = 16
//! fusion_dim = 32
//! unimodal_dims = [16, 16, 16]
//! critic_hidden = 32
//! label_hidden = 16
//!
//! [synthetic]                  # either this table ...
//! n_samples = 2000
//! latent_dim = 4
//! rho = 0.8
//! noise = 0.3
//! seed = 7
//! dims = { l_t = 8, d_t = 16, l_a = 12, d_a = 8, l_v = 12, d_v = 8 }
//! range = [-3.0, 3.0]
//! temporal_noise = 0.1
//!
//! features = "features.txt"    # ... or a feature file
//! ```

use crate::error::CliError;
use selfmi::cpc::CpcTerms;
use selfmi::data::{gen_synthetic, load_features, DatasetSplits, SeqDims, SyntheticSpec};
use selfmi::encoders::EncoderKind;
use selfmi::model::DropoutRates;
use selfmi::optim::LearningRates;
use selfmi::training::TrainConfig;
use selfmi::{ModelConfig, TaskSet};
use serde::Deserialize;
use std::fmt::Display;
use std::path::{Path, PathBuf};

pub const OUT_DIR_ENV: &str = "SELFMI_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "selfmi-out";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    output_dir: Option<PathBuf>,
    train: Option<RawTrain>,
    model: Option<RawModel>,
    synthetic: Option<RawSynthetic>,
    features: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    epochs: Option<usize>,
    seed: Option<u64>,
    batch_size: Option<usize>,
    lr_text: Option<f64>,
    lr_audio: Option<f64>,
    lr_visual: Option<f64>,
    lr_fusion: Option<f64>,
    cpc_weight: Option<f64>,
    dropout_text: Option<f64>,
    dropout_audio: Option<f64>,
    dropout_visual: Option<f64>,
    dropout_fusion: Option<f64>,
    range: Option<(f64, f64)>,
    tasks: Option<String>,
    cpc_terms: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    text_encoder: Option<EncoderKind>,
    text_hidden: Option<usize>,
    audio_hidden: Option<usize>,
    visual_hidden: Option<usize>,
    fusion_dim: Option<usize>,
    unimodal_dims: Option<[usize; 3]>,
    critic_hidden: Option<usize>,
    label_hidden: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSynthetic {
    n_samples: Option<usize>,
    dims: Option<SeqDims>,
    latent_dim: Option<usize>,
    rho: Option<f64>,
    noise: Option<f64>,
    seed: Option<u64>,
    range: Option<(f64, f64)>,
    temporal_noise: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Features(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    /// Architecture overrides; applied once the data dims are known.
    model: RawModelResolved,
    pub data: DataSource,
}

#[derive(Debug, Clone, Copy)]
struct RawModelResolved {
    text_encoder: EncoderKind,
    text_hidden: usize,
    audio_hidden: usize,
    visual_hidden: usize,
    fusion_dim: usize,
    unimodal_dims: Option<[usize; 3]>,
    critic_hidden: Option<usize>,
    label_hidden: usize,
}

fn or_default<T: Display + Clone>(v: Option<T>, key: &str, default: T) -> T {
    match v {
        Some(v) => v,
        None => {
            log::info!("config: {key} not set, using default {default}");
            default
        }
    }
}

fn required<T>(v: Option<T>, key: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
}

fn parse_cpc_terms(names: &[String]) -> Result<CpcTerms, CliError> {
    let mut t = CpcTerms {
        mt: false,
        ma: false,
        mv: false,
    };
    for n in names {
        match n.as_str() {
            "mt" => t.mt = true,
            "ma" => t.ma = true,
            "mv" => t.mv = true,
            other => {
                return Err(CliError::Config(format!(
                    "train.cpc_terms: unknown term {other:?} (expected mt, ma, mv)"
                )))
            }
        }
    }
    Ok(t)
}

/// Output directory: the environment variable wins over the config value.
pub fn resolve_out_dir(configured: Option<&Path>) -> PathBuf {
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(dir);
    }
    match configured {
        Some(p) => p.to_path_buf(),
        None => {
            log::info!("config: output_dir not set, using default {DEFAULT_OUT_DIR}");
            PathBuf::from(DEFAULT_OUT_DIR)
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let t = required(raw.train, "train")?;
        let epochs = required(t.epochs, "train.epochs")?;
        let seed = required(t.seed, "train.seed")?;
        let base = TrainConfig::new(epochs, seed);

        let data = match (raw.synthetic, raw.features) {
            (Some(_), Some(_)) => return Err(CliError::Config("set either [synthetic] or features, not both".into())),
            (None, None) => {
                return Err(CliError::Config(
                    "missing required key `synthetic` or `features` (data source)".into(),
                ))
            }
            (None, Some(path)) => DataSource::Features(path),
            (Some(s), None) => {
                let std = SyntheticSpec::standard(seed);
                let dims = match s.dims {
                    Some(d) => d,
                    None => {
                        log::info!("config: synthetic.dims not set, using default {:?}", std.dims);
                        std.dims
                    }
                };
                let range = match s.range {
                    Some(r) => r,
                    None => {
                        log::info!("config: synthetic.range not set, using default {:?}", std.range);
                        std.range
                    }
                };
                DataSource::Synthetic(SyntheticSpec {
                    n_samples: or_default(s.n_samples, "synthetic.n_samples", std.n_samples),
                    dims,
                    latent_dim: or_default(s.latent_dim, "synthetic.latent_dim", std.latent_dim),
                    rho: or_default(s.rho, "synthetic.rho", std.rho),
                    noise: or_default(s.noise, "synthetic.noise", std.noise),
                    seed: or_default(s.seed, "synthetic.seed", seed),
                    range,
                    temporal_noise: or_default(s.temporal_noise, "synthetic.temporal_noise", std.temporal_noise),
                })
            }
        };

        let lr_default = LearningRates::default();
        let lr = LearningRates {
            text: or_default(t.lr_text, "train.lr_text", lr_default.text),
            audio: or_default(t.lr_audio, "train.lr_audio", lr_default.audio),
            visual: or_default(t.lr_visual, "train.lr_visual", lr_default.visual),
            fusion: or_default(t.lr_fusion, "train.lr_fusion", lr_default.fusion),
        };
        let d = base.dropout;
        let dropout = DropoutRates {
            text: or_default(t.dropout_text, "train.dropout_text", d.text),
            audio: or_default(t.dropout_audio, "train.dropout_audio", d.audio),
            visual: or_default(t.dropout_visual, "train.dropout_visual", d.visual),
            fusion: or_default(t.dropout_fusion, "train.dropout_fusion", d.fusion),
        };
        let tasks: TaskSet = or_default(t.tasks, "train.tasks", "M,T,A,V".to_string())
            .parse()
            .map_err(|e: selfmi::Error| CliError::Config(format!("train.tasks: {e}")))?;
        let cpc_terms = match t.cpc_terms {
            Some(names) => parse_cpc_terms(&names)?,
            None => {
                log::info!("config: train.cpc_terms not set, using default [mt, ma, mv]");
                CpcTerms::FULL
            }
        };
        // NaN marks "take the range from the data"; replaced in `load_data`.
        let range = t.range.unwrap_or((f64::NAN, f64::NAN));
        let train = TrainConfig {
            epochs,
            batch_size: or_default(t.batch_size, "train.batch_size", base.batch_size),
            seed,
            lr,
            cpc_weight: or_default(t.cpc_weight, "train.cpc_weight", base.cpc_weight),
            dropout,
            range,
            tasks,
            cpc_terms,
        };

        let m = raw.model.unwrap_or_default();
        let model = RawModelResolved {
            text_encoder: m.text_encoder.unwrap_or_else(|| {
                log::info!("config: model.text_encoder not set, using default first_position");
                EncoderKind::FirstPosition
            }),
            text_hidden: or_default(m.text_hidden, "model.text_hidden", 16),
            audio_hidden: or_default(m.audio_hidden, "model.audio_hidden", 16),
            visual_hidden: or_default(m.visual_hidden, "model.visual_hidden", 16),
            fusion_dim: or_default(m.fusion_dim, "model.fusion_dim", 32),
            unimodal_dims: m.unimodal_dims,
            critic_hidden: m.critic_hidden,
            label_hidden: or_default(m.label_hidden, "model.label_hidden", 16),
        };
        if m.unimodal_dims.is_none() {
            log::info!("config: model.unimodal_dims not set, using the encoder output widths");
        }
        if m.critic_hidden.is_none() {
            log::info!("config: model.critic_hidden not set, using model.fusion_dim");
        }

        Ok(Self {
            output_dir: resolve_out_dir(raw.output_dir.as_deref()),
            train,
            model,
            data,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Reads or generates the data and fills in the label range if the
    /// config left it to the data.
    pub fn load_data(&mut self) -> Result<DatasetSplits, CliError> {
        let data = match &self.data {
            DataSource::Synthetic(spec) => gen_synthetic(spec)?,
            DataSource::Features(path) => load_features(path)?,
        };
        if self.train.range.0.is_nan() {
            log::info!("config: train.range not set, using the data range {:?}", data.range);
            self.train.range = data.range;
        }
        self.train.validate()?;
        let (a, b, c) = data.sizes();
        log::info!("data: {a} train / {b} valid / {c} test samples");
        Ok(data)
    }

    pub fn model_config(&self, dims: SeqDims) -> Result<ModelConfig, CliError> {
        let m = self.model;
        let cfg = ModelConfig {
            dims,
            text_encoder: m.text_encoder,
            text_hidden: m.text_hidden,
            audio_hidden: m.audio_hidden,
            visual_hidden: m.visual_hidden,
            fusion_dim: m.fusion_dim,
            unimodal_dims: m.unimodal_dims,
            critic_hidden: m.critic_hidden,
            label_hidden: m.label_hidden,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[train]\nepochs = 2\nseed = 3\n[synthetic]\nn_samples = 10\n";

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train.tasks, TaskSet::ALL);
        match c.data {
            DataSource::Synthetic(s) => {
                assert_eq!(s.n_samples, 10);
                assert_eq!(s.seed, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_keys_are_named() {
        let e = RunConfig::from_toml("[train]\nseed = 1\n[synthetic]\n").unwrap_err();
        assert!(e.to_string().contains("train.epochs"), "{e}");
        let e = RunConfig::from_toml("[train]\nepochs = 1\nseed = 1\n").unwrap_err();
        assert!(e.to_string().contains("synthetic"), "{e}");
        let e = RunConfig::from_toml("[synthetic]\n").unwrap_err();
        assert!(e.to_string().contains("`train`"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_toml(&format!("{MINIMAL}bogus = 1\n")).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = RunConfig::from_toml("[train]\nepochs = 1\nseed = 1\nlearning_rate = 2\n[synthetic]\n").unwrap_err();
        assert!(e.to_string().contains("learning_rate"), "{e}");
    }

    #[test]
    fn task_and_cpc_parsing() {
        let c =
            RunConfig::from_toml("[train]\nepochs = 1\nseed = 1\ntasks = \"M,V\"\ncpc_terms = [\"mv\"]\n[synthetic]\n")
                .unwrap();
        assert_eq!(c.train.tasks.to_string(), "M,V");
        assert_eq!(
            c.train.cpc_terms,
            CpcTerms {
                mt: false,
                ma: false,
                mv: true
            }
        );
        assert!(RunConfig::from_toml("[train]\nepochs = 1\nseed = 1\ntasks = \"T\"\n[synthetic]\n").is_err());
        assert!(RunConfig::from_toml("[train]\nepochs = 1\nseed = 1\ncpc_terms = [\"xx\"]\n[synthetic]\n").is_err());
    }
}
