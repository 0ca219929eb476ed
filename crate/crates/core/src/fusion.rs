//! Concatenate-and-project fusion plus the multimodal and unimodal
//! regression heads.

use crate::error::{Error, Result};
use crate::layers::{Linear, Modality};
use crate::params::{ParamGroup, ParamStore, Session};
use crate::tape::Var;
use rand::Rng;

/// Projection of the concatenated modality vectors and the multimodal
/// regression layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionParams {
    /// `[(d_t + d_a + d_v) × d_m]`
    pub project: Linear,
    /// `[d_m × 1]`
    pub regress: Linear,
}

impl FusionParams {
    pub fn init<R: Rng>(store: &mut ParamStore, in_dims: [usize; 3], fusion_dim: usize, rng: &mut R) -> Self {
        let total = in_dims.iter().sum();
        Self {
            project: Linear::init(store, "fusion.l1", ParamGroup::Fusion, total, fusion_dim, rng),
            regress: Linear::init(store, "fusion.l2", ParamGroup::Fusion, fusion_dim, 1, rng),
        }
    }
}

/// Starting bias of the unimodal projections. `Z_s` rows are unit-normalized
/// downstream, so a row with every relu unit off aborts training; a
/// positive start keeps most units active.
pub const UNIMODAL_BIAS_INIT: f64 = 0.1;

/// One projection + regression head per modality, no sharing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnimodalHead {
    pub project: Linear,
    pub regress: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnimodalHeadParams {
    pub heads: [UnimodalHead; 3],
}

impl UnimodalHeadParams {
    pub fn init<R: Rng>(store: &mut ParamStore, in_dims: [usize; 3], out_dims: [usize; 3], rng: &mut R) -> Self {
        let heads = Modality::ALL.map(|m| {
            let i = m.index();
            let project = Linear::init(store, &format!("uni_{m}.l1"), m.group(), in_dims[i], out_dims[i], rng);
            store.get_mut(project.bias).value.data_mut().fill(UNIMODAL_BIAS_INIT);
            UnimodalHead {
                project,
                regress: Linear::init(store, &format!("uni_{m}.l2"), m.group(), out_dims[i], 1, rng),
            }
        });
        Self { heads }
    }

    pub fn head(&self, m: Modality) -> &UnimodalHead {
        &self.heads[m.index()]
    }
}

/// Per-batch representations on the tape. Unimodal entries are `None` for
/// tasks that are switched off.
#[derive(Debug, Clone, Copy)]
pub struct Representations {
    pub z_m: Var,
    pub z_s: [Option<Var>; 3],
}

impl Representations {
    pub fn get(&self, m: Modality) -> Option<Var> {
        self.z_s[m.index()]
    }
}

/// `Z_m = relu([x_t, x_a, x_v]·W + b)`.
pub fn fuse(sess: &mut Session<'_>, f: &FusionParams, x_t: Var, x_a: Var, x_v: Var) -> Result<Var> {
    let n = sess.tape.shape(x_t)[0];
    for x in [x_a, x_v] {
        if sess.tape.shape(x)[0] != n {
            return Err(Error::Shape {
                op: "fuse",
                left: sess.tape.shape(x_t).to_vec(),
                right: sess.tape.shape(x).to_vec(),
            });
        }
    }
    let cat = sess.tape.concat_cols(&[x_t, x_a, x_v])?;
    if sess.tape.shape(cat)[1] != f.project.in_dim {
        return Err(Error::Shape {
            op: "fuse",
            left: sess.tape.shape(cat).to_vec(),
            right: vec![f.project.in_dim, f.project.out_dim],
        });
    }
    let pre = f.project.forward(sess, cat)?;
    sess.tape.relu(pre)
}

/// Unbounded scalar prediction `Z·W2 + b2`, shape `[N×1]`.
pub fn predict(sess: &mut Session<'_>, head: &Linear, z: Var) -> Result<Var> {
    if sess.tape.shape(z).get(1) != Some(&head.in_dim) {
        return Err(Error::Shape {
            op: "predict",
            left: sess.tape.shape(z).to_vec(),
            right: vec![head.in_dim, head.out_dim],
        });
    }
    head.forward(sess, z)
}

/// `Z_s = relu(X_s·W1 + b1)`, `ŷ_s = Z_s·W2 + b2`.
pub fn unimodal_forward(
    sess: &mut Session<'_>,
    heads: &UnimodalHeadParams,
    x_s: Var,
    m: Modality,
) -> Result<(Var, Var)> {
    let head = heads.head(m);
    if sess.tape.shape(x_s).get(1) != Some(&head.project.in_dim) {
        return Err(Error::Shape {
            op: "unimodal_forward",
            left: sess.tape.shape(x_s).to_vec(),
            right: vec![head.project.in_dim, head.project.out_dim],
        });
    }
    let pre = head.project.forward(sess, x_s)?;
    let z = sess.tape.relu(pre)?;
    let y = predict(sess, &head.regress, z)?;
    Ok((z, y))
}
