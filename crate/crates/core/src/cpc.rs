//! Contrastive predictive coding between the fused representation and each
//! unimodal representation.
//!
//! For modality `s`, the critic `G_s` maps `Z_m` into the space of `Z_s`.
//! Both sides are scaled to unit rows and compared by inner product, giving
//! an `N×N` score matrix whose diagonal holds the matched pairs; every other
//! sample in the batch is a negative. The InfoNCE loss is the negative mean
//! diagonal of the row-wise log-softmax, and `ln N - loss` lower-bounds the
//! mutual information.
//!
//! Scores are left as cosines in `[-1, 1]`; the exponential is applied
//! inside the log-softmax, never materialised.

use crate::error::{Error, Result};
use crate::fusion::Representations;
use crate::layers::{Mlp, Modality};
use crate::params::{ParamStore, Session};
use crate::tape::{Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One `G_s` network per modality: `d_m → hidden → d_s'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpcCritic {
    pub nets: [Mlp; 3],
}

impl CpcCritic {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        fusion_dim: usize,
        hidden: usize,
        out_dims: [usize; 3],
        rng: &mut R,
    ) -> Self {
        let nets = Modality::ALL.map(|m| {
            Mlp::init(
                store,
                &format!("critic_{m}"),
                m.group(),
                (fusion_dim, hidden, out_dims[m.index()]),
                rng,
            )
        });
        Self { nets }
    }

    pub fn net(&self, m: Modality) -> &Mlp {
        &self.nets[m.index()]
    }

    /// `unit(G_s(Z_m))`.
    pub fn project_unit(&self, sess: &mut Session<'_>, z_m: Var, m: Modality) -> Result<Var> {
        let g = self.net(m).forward(sess, z_m)?;
        unit_normalize_rows(&mut sess.tape, g).map_err(|e| e.in_rep(format!("G_{m}(Z_m)")))
    }
}

/// Which pair losses enter `L_CPC`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CpcTerms {
    pub mt: bool,
    pub ma: bool,
    pub mv: bool,
}

impl Default for CpcTerms {
    fn default() -> Self {
        Self::FULL
    }
}

impl CpcTerms {
    pub const FULL: CpcTerms = CpcTerms {
        mt: true,
        ma: true,
        mv: true,
    };

    pub fn without(m: Modality) -> Self {
        let mut t = Self::FULL;
        t.set(m, false);
        t
    }

    pub fn has(&self, m: Modality) -> bool {
        match m {
            Modality::Text => self.mt,
            Modality::Audio => self.ma,
            Modality::Visual => self.mv,
        }
    }

    pub fn set(&mut self, m: Modality, on: bool) {
        match m {
            Modality::Text => self.mt = on,
            Modality::Audio => self.ma = on,
            Modality::Visual => self.mv = on,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CpcOutputs {
    pub scores: [Option<Var>; 3],
    pub pair_losses: [Option<Var>; 3],
    /// Sum of the present pair losses in t, a, v order; a zero constant when
    /// none are present.
    pub total: Var,
}

pub fn unit_normalize_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    tape.normalize_rows(x)
}

/// `score[i][j] = <unit_s[i], unit_g[j]>` for already-normalised rows.
pub fn scores_from_units(tape: &mut Tape, unit_s: Var, unit_g: Var) -> Result<Var> {
    if tape.shape(unit_s) != tape.shape(unit_g) {
        return Err(Error::Shape {
            op: "cpc_scores",
            left: tape.shape(unit_s).to_vec(),
            right: tape.shape(unit_g).to_vec(),
        });
    }
    let gt = tape.transpose(unit_g)?;
    tape.matmul(unit_s, gt)
}

pub fn cpc_scores(sess: &mut Session<'_>, critic: &CpcCritic, z_m: Var, z_s: Var, m: Modality) -> Result<Var> {
    if sess.tape.shape(z_m)[0] != sess.tape.shape(z_s)[0] {
        return Err(Error::Shape {
            op: "cpc_scores",
            left: sess.tape.shape(z_m).to_vec(),
            right: sess.tape.shape(z_s).to_vec(),
        });
    }
    let g = critic.project_unit(sess, z_m, m)?;
    let s = unit_normalize_rows(&mut sess.tape, z_s).map_err(|e| e.in_rep(format!("Z_{m}")))?;
    scores_from_units(&mut sess.tape, s, g)
}

/// `-(1/N) Σ_i log softmax(score[i])[i]`.
pub fn infonce_loss(tape: &mut Tape, score: Var) -> Result<Var> {
    let s = tape.shape(score);
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::Shape {
            op: "infonce_loss",
            left: s.to_vec(),
            right: vec![s[0], s[0]],
        });
    }
    let ls = tape.log_softmax_rows(score)?;
    let d = tape.diagonal(ls)?;
    let m = tape.mean(d)?;
    tape.scale(m, -1.0)
}

pub fn cpc_total(
    sess: &mut Session<'_>,
    critic: &CpcCritic,
    reps: &Representations,
    terms: CpcTerms,
) -> Result<CpcOutputs> {
    let mut scores = [None; 3];
    let mut pair_losses = [None; 3];
    let mut total: Option<Var> = None;
    for m in Modality::ALL {
        if !terms.has(m) {
            continue;
        }
        let Some(z_s) = reps.get(m) else {
            continue;
        };
        let score = cpc_scores(sess, critic, reps.z_m, z_s, m)?;
        let loss = infonce_loss(&mut sess.tape, score)?;
        scores[m.index()] = Some(score);
        pair_losses[m.index()] = Some(loss);
        total = Some(match total {
            None => loss,
            Some(t) => sess.tape.add(t, loss)?,
        });
    }
    let total = match total {
        Some(t) => t,
        None => sess.tape.constant(crate::tensor::Tensor::scalar(0.0)),
    };
    Ok(CpcOutputs {
        scores,
        pair_losses,
        total,
    })
}

/// InfoNCE bound `ln n - loss`, in nats.
pub fn mi_lower_bound(loss: f64, n: usize) -> f64 {
    (n.max(1) as f64).ln() - loss
}
