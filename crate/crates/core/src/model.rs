//! Full network: encoders, fusion, unimodal heads, critics and label
//! generators, plus one forward pass over a mini-batch.

use crate::cpc::{cpc_total, CpcCritic, CpcOutputs, CpcTerms};
use crate::data::{ModalitySample, SeqDims};
use crate::encoders::{encode_batch, EncoderKind, LstmParams, ModalityEncoderConfig};
use crate::error::{Error, Result};
use crate::fusion::{fuse, predict, unimodal_forward, FusionParams, Representations, UnimodalHeadParams};
use crate::layers::{dropout, Modality};
use crate::params::{ParamStore, Session};
use crate::tape::Var;
use crate::ulg::{label_outputs, LabelGenParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Architecture sizes. Optional fields fall back to the encoder output
/// widths (unimodal projections) and the fusion width (critic hidden layer).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dims: SeqDims,
    pub text_encoder: EncoderKind,
    pub text_hidden: usize,
    pub audio_hidden: usize,
    pub visual_hidden: usize,
    pub fusion_dim: usize,
    pub unimodal_dims: Option<[usize; 3]>,
    pub critic_hidden: Option<usize>,
    pub label_hidden: usize,
}

impl ModelConfig {
    pub fn for_dims(dims: SeqDims) -> Self {
        Self {
            dims,
            text_encoder: EncoderKind::FirstPosition,
            text_hidden: 16,
            audio_hidden: 16,
            visual_hidden: 16,
            fusion_dim: 32,
            unimodal_dims: None,
            critic_hidden: None,
            label_hidden: 16,
        }
    }

    pub fn encoder_configs(&self) -> [ModalityEncoderConfig; 3] {
        let d = self.dims;
        [
            ModalityEncoderConfig {
                kind: self.text_encoder,
                input_dim: d.d_t,
                hidden_dim: self.text_hidden,
            },
            ModalityEncoderConfig {
                kind: EncoderKind::LstmFinalState,
                input_dim: d.d_a,
                hidden_dim: self.audio_hidden,
            },
            ModalityEncoderConfig {
                kind: EncoderKind::LstmFinalState,
                input_dim: d.d_v,
                hidden_dim: self.visual_hidden,
            },
        ]
    }

    pub fn encoder_out_dims(&self) -> [usize; 3] {
        self.encoder_configs().map(|c| c.output_dim())
    }

    pub fn unimodal_out_dims(&self) -> [usize; 3] {
        self.unimodal_dims.unwrap_or_else(|| self.encoder_out_dims())
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        for c in self.encoder_configs() {
            c.validate()?;
        }
        let dims = self.unimodal_out_dims();
        if self.fusion_dim == 0 || self.label_hidden == 0 || dims.contains(&0) || self.critic_hidden == Some(0) {
            return Err(Error::Validation("model widths must be positive".into()));
        }
        Ok(())
    }
}

/// Multimodal task is always on; unimodal tasks are switchable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSet {
    pub t: bool,
    pub a: bool,
    pub v: bool,
}

impl Default for TaskSet {
    fn default() -> Self {
        Self::ALL
    }
}

impl TaskSet {
    pub const ALL: TaskSet = TaskSet {
        t: true,
        a: true,
        v: true,
    };
    pub const MULTIMODAL_ONLY: TaskSet = TaskSet {
        t: false,
        a: false,
        v: false,
    };

    pub fn has(&self, m: Modality) -> bool {
        match m {
            Modality::Text => self.t,
            Modality::Audio => self.a,
            Modality::Visual => self.v,
        }
    }

    pub fn active(&self) -> impl Iterator<Item = Modality> + '_ {
        Modality::ALL.into_iter().filter(|m| self.has(*m))
    }

    pub fn any_unimodal(&self) -> bool {
        self.t || self.a || self.v
    }
}

impl fmt::Display for TaskSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("M")?;
        for (on, tag) in [(self.t, "T"), (self.a, "A"), (self.v, "V")] {
            if on {
                write!(f, ",{tag}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for TaskSet {
    type Err = Error;

    /// Comma-separated subset of `M,T,A,V`; `M` is mandatory.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = TaskSet::MULTIMODAL_ONLY;
        let mut has_m = false;
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok.to_ascii_uppercase().as_str() {
                "M" => has_m = true,
                "T" => set.t = true,
                "A" => set.a = true,
                "V" => set.v = true,
                other => return Err(Error::Validation(format!("unknown task {other:?}"))),
            }
        }
        if !has_m {
            return Err(Error::Validation(format!("task set {s:?} must include M")));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutRates {
    pub text: f64,
    pub audio: f64,
    pub visual: f64,
    pub fusion: f64,
}

impl DropoutRates {
    pub const NONE: DropoutRates = DropoutRates {
        text: 0.0,
        audio: 0.0,
        visual: 0.0,
        fusion: 0.0,
    };

    fn modality(&self, m: Modality) -> f64 {
        match m {
            Modality::Text => self.text,
            Modality::Audio => self.audio,
            Modality::Visual => self.visual,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfMiModel {
    pub config: ModelConfig,
    pub encoders: [ModalityEncoderConfig; 3],
    pub lstms: [Option<LstmParams>; 3],
    pub fusion: FusionParams,
    pub heads: UnimodalHeadParams,
    pub critic: CpcCritic,
    pub labelgen: LabelGenParams,
}

impl SelfMiModel {
    /// Builds the parameter layout and initial values from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoders = config.encoder_configs();
        let lstms = Modality::ALL.map(|m| {
            let c = encoders[m.index()];
            (c.kind == EncoderKind::LstmFinalState).then(|| {
                LstmParams::init(
                    &mut store,
                    &format!("enc_{m}"),
                    m.group(),
                    c.input_dim,
                    c.hidden_dim,
                    &mut rng,
                )
            })
        });
        let enc_dims = config.encoder_out_dims();
        let uni_dims = config.unimodal_out_dims();
        let fusion = FusionParams::init(&mut store, enc_dims, config.fusion_dim, &mut rng);
        let heads = UnimodalHeadParams::init(&mut store, enc_dims, uni_dims, &mut rng);
        let critic = CpcCritic::init(
            &mut store,
            config.fusion_dim,
            config.critic_hidden.unwrap_or(config.fusion_dim),
            uni_dims,
            &mut rng,
        );
        let labelgen = LabelGenParams::init(&mut store, uni_dims, config.label_hidden, &mut rng);
        Ok((
            Self {
                config,
                encoders,
                lstms,
                fusion,
                heads,
                critic,
                labelgen,
            },
            store,
        ))
    }

    /// Widths of `Z_m, Z_t, Z_a, Z_v`.
    pub fn rep_dims(&self) -> [usize; 4] {
        let u = self.config.unimodal_out_dims();
        [self.config.fusion_dim, u[0], u[1], u[2]]
    }
}

/// What a forward pass computes beyond the multimodal prediction.
pub struct ForwardOptions<'r> {
    pub tasks: TaskSet,
    pub cpc_terms: CpcTerms,
    pub with_cpc: bool,
    pub with_labelgen: bool,
    /// Training-mode dropout; `None` evaluates deterministically.
    pub dropout: Option<(&'r mut ChaCha8Rng, DropoutRates)>,
}

impl ForwardOptions<'_> {
    pub fn eval() -> Self {
        Self {
            tasks: TaskSet::MULTIMODAL_ONLY,
            cpc_terms: CpcTerms::FULL,
            with_cpc: false,
            with_labelgen: false,
            dropout: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutputs {
    /// Encoder outputs `X_t, X_a, X_v`.
    pub x: [Var; 3],
    pub reps: Representations,
    pub y_m: Var,
    pub y_s: [Option<Var>; 3],
    pub cpc: Option<CpcOutputs>,
    /// Raw label-generator outputs for active modalities.
    pub generated: [Option<Var>; 3],
}

pub fn forward(
    sess: &mut Session<'_>,
    model: &SelfMiModel,
    batch: &[&ModalitySample],
    mut opts: ForwardOptions<'_>,
) -> Result<ForwardOutputs> {
    if batch.is_empty() {
        return Err(Error::contract("forward on an empty batch"));
    }
    let mut x = Vec::with_capacity(3);
    for m in Modality::ALL {
        let seqs: Vec<_> = batch.iter().map(|s| s.sequences()[m.index()]).collect();
        let enc = encode_batch(sess, &model.encoders[m.index()], model.lstms[m.index()].as_ref(), &seqs)?;
        let enc = match opts.dropout.as_mut() {
            Some((rng, rates)) => dropout(&mut sess.tape, enc, rates.modality(m), Some(&mut **rng))?,
            None => enc,
        };
        x.push(enc);
    }
    let x = [x[0], x[1], x[2]];

    let mut z_m = fuse(sess, &model.fusion, x[0], x[1], x[2])?;
    if let Some((rng, rates)) = opts.dropout.as_mut() {
        z_m = dropout(&mut sess.tape, z_m, rates.fusion, Some(&mut **rng))?;
    }
    let y_m = predict(sess, &model.fusion.regress, z_m)?;

    let mut z_s = [None; 3];
    let mut y_s = [None; 3];
    for m in opts.tasks.active() {
        let (z, y) = unimodal_forward(sess, &model.heads, x[m.index()], m)?;
        z_s[m.index()] = Some(z);
        y_s[m.index()] = Some(y);
    }
    let reps = Representations { z_m, z_s };

    let cpc = if opts.with_cpc && opts.tasks.any_unimodal() {
        Some(cpc_total(sess, &model.critic, &reps, opts.cpc_terms)?)
    } else {
        None
    };

    let mut generated = [None; 3];
    if opts.with_labelgen {
        for m in opts.tasks.active() {
            generated[m.index()] = Some(label_outputs(sess, &model.labelgen, &model.critic, &reps, m)?);
        }
    }

    Ok(ForwardOutputs {
        x,
        reps,
        y_m,
        y_s,
        cpc,
        generated,
    })
}

/// Multimodal predictions in evaluation mode.
pub fn predict_samples(
    model: &SelfMiModel,
    store: &ParamStore,
    samples: &[ModalitySample],
    chunk: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for part in samples.chunks(chunk.max(1)) {
        let refs: Vec<&ModalitySample> = part.iter().collect();
        let mut sess = Session::new(store, false);
        let f = forward(&mut sess, model, &refs, ForwardOptions::eval())?;
        out.extend_from_slice(sess.tape.value(f.y_m).data());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_set_parse_and_display() {
        for s in ["M", "M,T", "M,A", "M,V", "M,T,A", "M,T,V", "M,A,V", "M,T,A,V"] {
            let t: TaskSet = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert_eq!("m, v ,t".parse::<TaskSet>().unwrap().to_string(), "M,T,V");
        assert!("T,A".parse::<TaskSet>().is_err());
        assert!("M,X".parse::<TaskSet>().is_err());
    }

    #[test]
    fn layout_is_seeded() {
        let cfg = ModelConfig::for_dims(SeqDims {
            l_t: 2,
            d_t: 3,
            l_a: 2,
            d_a: 2,
            l_v: 2,
            d_v: 2,
        });
        let (m1, s1) = SelfMiModel::new(cfg, 3).unwrap();
        let (m2, s2) = SelfMiModel::new(cfg, 3).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(s1, s2);
        let (_, s3) = SelfMiModel::new(cfg, 4).unwrap();
        assert_ne!(s1, s3);
        assert!(m1.lstms[0].is_none());
        assert!(m1.lstms[1].is_some());
        let names: std::collections::BTreeSet<_> = s1.iter().map(|(_, p)| p.name.clone()).collect();
        assert_eq!(names.len(), s1.len());
    }
}
