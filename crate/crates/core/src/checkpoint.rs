//! Plain-text checkpoint format.
//!
//! ```text
//! selfmi-checkpoint 1
//! config-sha256 <hex digest of the model line and train line joined by '\n'>
//! model <ModelConfig as JSON>
//! train <TrainConfig as JSON, or `none`>
//! params <count>
//! <name> <group> <extent>x<extent>...
//! <values separated by single spaces>
//! ...
//! ```
//!
//! Values use the shortest decimal form that reads back to the same `f64`,
//! so a save/load cycle is exact. Parameters appear in layout order.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SelfMiModel};
use crate::params::{ParamGroup, ParamStore};
use crate::training::TrainConfig;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &str = "selfmi-checkpoint 1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: SelfMiModel,
    pub params: ParamStore,
    pub train: Option<TrainConfig>,
    pub config_hash: String,
}

fn digest(model_json: &str, train_json: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_json.as_bytes());
    h.update(b"\n");
    h.update(train_json.as_bytes());
    hex::encode(h.finalize())
}

pub fn to_string(model: &SelfMiModel, params: &ParamStore, train: Option<&TrainConfig>) -> Result<String> {
    let model_json = serde_json::to_string(&model.config).map_err(|e| Error::Schema(e.to_string()))?;
    let train_json = match train {
        Some(t) => serde_json::to_string(t).map_err(|e| Error::Schema(e.to_string()))?,
        None => "none".to_string(),
    };
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "config-sha256 {}", digest(&model_json, &train_json));
    let _ = writeln!(out, "model {model_json}");
    let _ = writeln!(out, "train {train_json}");
    let _ = writeln!(out, "params {}", params.len());
    for (_, p) in params.iter() {
        let shape: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{} {} {}", p.name, p.group.name(), shape.join("x"));
        let vals: Vec<String> = p.value.data().iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", vals.join(" "));
    }
    Ok(out)
}

pub fn save(path: &Path, model: &SelfMiModel, params: &ParamStore, train: Option<&TrainConfig>) -> Result<()> {
    let text = to_string(model, params, train)?;
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn parse_err(line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        line,
        detail: detail.into(),
    }
}

pub fn from_str(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| parse_err(0, format!("truncated before {what}")))
    };

    let (n, magic) = next("header")?;
    if magic != MAGIC {
        return Err(parse_err(n, format!("expected {MAGIC:?}")));
    }
    let (n, hash_line) = next("config hash")?;
    let hash = hash_line
        .strip_prefix("config-sha256 ")
        .ok_or_else(|| parse_err(n, "expected config-sha256"))?
        .to_string();
    let (n, model_line) = next("model config")?;
    let model_json = model_line
        .strip_prefix("model ")
        .ok_or_else(|| parse_err(n, "expected model"))?;
    let (n, train_line) = next("train config")?;
    let train_json = train_line
        .strip_prefix("train ")
        .ok_or_else(|| parse_err(n, "expected train"))?;
    if digest(model_json, train_json) != hash {
        return Err(Error::Schema(
            "config hash does not match the stored configuration".into(),
        ));
    }
    let config: ModelConfig = serde_json::from_str(model_json).map_err(|e| parse_err(n - 1, e.to_string()))?;
    let train: Option<TrainConfig> = match train_json {
        "none" => None,
        j => Some(serde_json::from_str(j).map_err(|e| parse_err(n, e.to_string()))?),
    };
    let (n, count_line) = next("parameter count")?;
    let count: usize = count_line
        .strip_prefix("params ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| parse_err(n, "expected params <count>"))?;

    let (model, mut params) = SelfMiModel::new(config, 0)?;
    if count != params.len() {
        return Err(Error::Schema(format!(
            "checkpoint holds {count} parameters, the configured model has {}",
            params.len()
        )));
    }
    for p in params.iter_mut() {
        let (n, head) = next("parameter header")?;
        let parts: Vec<&str> = head.split(' ').collect();
        let [name, group, shape] = parts[..] else {
            return Err(parse_err(n, "expected <name> <group> <shape>"));
        };
        let shape: Vec<usize> = shape
            .split('x')
            .map(|s| s.parse().map_err(|_| parse_err(n, format!("bad extent {s:?}"))))
            .collect::<Result<_>>()?;
        if name != p.name || ParamGroup::from_name(group) != Some(p.group) || shape != p.value.shape() {
            return Err(Error::Schema(format!(
                "line {n}: found {name} {group} {shape:?}, expected {} {} {:?}",
                p.name,
                p.group.name(),
                p.value.shape()
            )));
        }
        let (n, vals) = next("parameter values")?;
        let vals: Vec<f64> = vals
            .split(' ')
            .map(|v| match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(parse_err(n, format!("bad value {v:?}"))),
            })
            .collect::<Result<_>>()?;
        if vals.len() != p.value.len() {
            return Err(parse_err(
                n,
                format!("expected {} values, found {}", p.value.len(), vals.len()),
            ));
        }
        p.value.data_mut().copy_from_slice(&vals);
    }
    if let Some((n, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(parse_err(n, format!("trailing content {extra:?}")));
    }
    Ok(Checkpoint {
        model,
        params,
        train,
        config_hash: hash,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SeqDims;

    fn model(seed: u64) -> (SelfMiModel, ParamStore) {
        let dims = SeqDims {
            l_t: 2,
            d_t: 3,
            l_a: 2,
            d_a: 2,
            l_v: 3,
            d_v: 2,
        };
        SelfMiModel::new(ModelConfig::for_dims(dims), seed).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let (m, mut p) = model(8);
        p.iter_mut().next().unwrap().value.data_mut()[0] = 0.1 + 0.2;
        let cfg = TrainConfig::new(3, 8);
        let text = to_string(&m, &p, Some(&cfg)).unwrap();
        let ck = from_str(&text).unwrap();
        assert_eq!(ck.model, m);
        assert_eq!(ck.params, p);
        assert_eq!(ck.train, Some(cfg));
        assert_eq!(to_string(&ck.model, &ck.params, ck.train.as_ref()).unwrap(), text);
    }

    #[test]
    fn tampering_is_detected() {
        let (m, p) = model(1);
        let text = to_string(&m, &p, None).unwrap();
        let bad = text.replacen("\"fusion_dim\":32", "\"fusion_dim\":31", 1);
        assert!(matches!(from_str(&bad), Err(Error::Schema(_))));
        let mut lines: Vec<&str> = text.lines().collect();
        lines.truncate(lines.len() - 1);
        assert!(from_str(&lines.join("\n")).is_err());
        assert!(from_str("not a checkpoint").is_err());
        let extra = format!("{text}junk\n");
        assert!(from_str(&extra).is_err());
    }
}
