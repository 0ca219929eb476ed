//! Self-supervised unimodal label generation.
//!
//! Every training sample carries one generated label per modality. In the
//! first epoch these equal the human multimodal label. From the second epoch
//! on, a per-modality regression network reads the normalised critic output
//! `unit(G_s(Z_m))` next to `unit(Z_s)` and its clamped prediction replaces
//! the stored label. Stored labels are plain numbers: when they later act as
//! targets or loss weights they carry no gradient.
//!
//! The generator is trained by `L_task`, the mean absolute gap between its
//! raw outputs and the multimodal labels. Its inputs are detached from the
//! encoders and fusion layer, so that loss only reaches the generator and the
//! critic networks.

use crate::cpc::{unit_normalize_rows, CpcCritic};
use crate::error::{Error, Result};
use crate::fusion::Representations;
use crate::layers::{Mlp, Modality};
use crate::params::{ParamStore, Session};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use std::cmp::Ordering;

/// Momentum of the global representation moving average.
pub const GLOBAL_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelGenParams {
    pub nets: [Mlp; 3],
}

impl LabelGenParams {
    /// Network for modality `s` maps `2·d_s' → hidden → 1`.
    pub fn init<R: Rng>(store: &mut ParamStore, rep_dims: [usize; 3], hidden: usize, rng: &mut R) -> Self {
        let nets = Modality::ALL.map(|m| {
            Mlp::init(
                store,
                &format!("labelgen_{m}"),
                m.group(),
                (2 * rep_dims[m.index()], hidden, 1),
                rng,
            )
        });
        Self { nets }
    }

    pub fn net(&self, m: Modality) -> &Mlp {
        &self.nets[m.index()]
    }
}

/// Running means of `Z_m, Z_t, Z_a, Z_v`, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalReps {
    pub reps: [Vec<f64>; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ULabelState {
    ids: Vec<String>,
    y_m: Vec<f64>,
    labels: [Vec<f64>; 3],
    epoch: usize,
    range: (f64, f64),
    global: GlobalReps,
}

impl ULabelState {
    /// `global_dims` are the widths of `Z_m, Z_t, Z_a, Z_v`.
    pub fn new(ids: Vec<String>, y_m: Vec<f64>, range: (f64, f64), global_dims: [usize; 4]) -> Result<Self> {
        if ids.len() != y_m.len() {
            return Err(Error::contract("ids and labels differ in length"));
        }
        if range.0.partial_cmp(&range.1) != Some(Ordering::Less) {
            return Err(Error::contract(format!("invalid label range {range:?}")));
        }
        let labels = [y_m.clone(), y_m.clone(), y_m.clone()];
        Ok(Self {
            ids,
            y_m,
            labels,
            epoch: 1,
            range,
            global: GlobalReps {
                reps: global_dims.map(|d| vec![0.0; d]),
            },
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn set_epoch(&mut self, epoch: usize) -> Result<()> {
        if epoch == 0 {
            return Err(Error::contract("epochs are numbered from 1"));
        }
        self.epoch = epoch;
        Ok(())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn y_m(&self) -> &[f64] {
        &self.y_m
    }

    pub fn labels(&self, m: Modality) -> &[f64] {
        &self.labels[m.index()]
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn global_reps(&self) -> &GlobalReps {
        &self.global
    }

    /// Overwrites stored labels; test and audit hook.
    pub fn set_label(&mut self, m: Modality, index: usize, value: f64) {
        self.labels[m.index()][index] = value.clamp(self.range.0, self.range.1);
    }

    /// Mean `|y_s - y_m|` over all samples.
    pub fn mean_gap(&self, m: Modality) -> f64 {
        let l = &self.labels[m.index()];
        l.iter().zip(&self.y_m).map(|(a, b)| (a - b).abs()).sum::<f64>() / l.len().max(1) as f64
    }

    /// Stores clamped generator outputs for the given sample indices.
    pub fn store_generated(&mut self, m: Modality, indices: &[usize], values: &[f64]) -> Result<()> {
        if self.epoch < 2 {
            return Err(Error::contract(
                "label generation runs from epoch 2; epoch-1 labels stay equal to the multimodal labels",
            ));
        }
        if indices.len() != values.len() {
            return Err(Error::contract("index/value length mismatch"));
        }
        let (lo, hi) = self.range;
        for (&i, &v) in indices.iter().zip(values) {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("generated {m} label")));
            }
            self.labels[m.index()][i] = v.clamp(lo, hi);
        }
        Ok(())
    }

    /// `F_s ← (1-μ)·F_s + μ·mean_rows(Z_s)`; `reps` are `Z_m, Z_t, Z_a, Z_v`,
    /// entries that are `None` are skipped.
    pub fn update_global_reps(&mut self, reps: [Option<&Tensor>; 4]) -> Result<()> {
        for (slot, z) in self.global.reps.iter_mut().zip(reps) {
            let Some(z) = z else { continue };
            if z.cols() != slot.len() {
                return Err(Error::Shape {
                    op: "update_global_reps",
                    left: z.shape().to_vec(),
                    right: vec![slot.len()],
                });
            }
            let n = z.rows() as f64;
            for (j, f) in slot.iter_mut().enumerate() {
                let mean = (0..z.rows()).map(|i| z.get2(i, j)).sum::<f64>() / n;
                *f = (1.0 - GLOBAL_MOMENTUM) * *f + GLOBAL_MOMENTUM * mean;
            }
        }
        Ok(())
    }
}

/// Raw generator output `[N×1]` for modality `m`, inputs detached.
pub fn label_outputs(
    sess: &mut Session<'_>,
    gen: &LabelGenParams,
    critic: &CpcCritic,
    reps: &Representations,
    m: Modality,
) -> Result<Var> {
    let z_s = reps
        .get(m)
        .ok_or_else(|| Error::contract(format!("no representation for modality {m}")))?;
    let z_m = sess.tape.detach(reps.z_m);
    let z_s = sess.tape.detach(z_s);
    let g = critic.project_unit(sess, z_m, m)?;
    let u = unit_normalize_rows(&mut sess.tape, z_s).map_err(|e| e.in_rep(format!("Z_{m}")))?;
    let input = sess.tape.concat_cols(&[g, u])?;
    gen.net(m).forward(sess, input)
}

/// Generates, clamps and stores labels for every modality present in
/// `reps`. Returns the raw tape outputs for use in [`label_task_loss`].
pub fn generate_labels(
    state: &mut ULabelState,
    sess: &mut Session<'_>,
    gen: &LabelGenParams,
    critic: &CpcCritic,
    reps: &Representations,
    indices: &[usize],
) -> Result<[Option<Var>; 3]> {
    if state.epoch() < 2 {
        return Err(Error::contract(
            "label generation runs from epoch 2; epoch-1 labels stay equal to the multimodal labels",
        ));
    }
    let mut out = [None; 3];
    for m in Modality::ALL {
        if reps.get(m).is_none() {
            continue;
        }
        let y = label_outputs(sess, gen, critic, reps, m)?;
        let vals = sess.tape.value(y).data().to_vec();
        state.store_generated(m, indices, &vals)?;
        out[m.index()] = Some(y);
    }
    Ok(out)
}

/// Mean over samples and the given modalities of `|y_s - y_m|`.
pub fn label_task_loss(tape: &mut Tape, outputs: &[Var], y_m: Var) -> Result<Var> {
    if outputs.is_empty() || tape.value(y_m).is_empty() {
        return Err(Error::contract("label_task_loss on an empty batch"));
    }
    let mut total: Option<Var> = None;
    for &y in outputs {
        let d = tape.sub(y, y_m)?;
        let a = tape.abs(d)?;
        let m = tape.mean(a)?;
        total = Some(match total {
            None => m,
            Some(t) => tape.add(t, m)?,
        });
    }
    let total = total.expect("non-empty");
    tape.scale(total, 1.0 / outputs.len() as f64)
}
