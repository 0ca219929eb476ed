//! Small building blocks shared by the heads, critics and label generators.

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore, Session};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Text,
    Audio,
    Visual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Visual];

    pub fn index(self) -> usize {
        match self {
            Modality::Text => 0,
            Modality::Audio => 1,
            Modality::Visual => 2,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Text => "t",
            Modality::Audio => "a",
            Modality::Visual => "v",
        }
    }

    pub fn group(self) -> ParamGroup {
        match self {
            Modality::Text => ParamGroup::Text,
            Modality::Audio => ParamGroup::Audio,
            Modality::Visual => ParamGroup::Visual,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "t" | "text" => Ok(Modality::Text),
            "a" | "audio" => Ok(Modality::Audio),
            "v" | "visual" | "vision" => Ok(Modality::Visual),
            other => Err(Error::contract(format!("unknown modality tag {other:?}"))),
        }
    }
}

/// `x·W + b` with `W: [in×out]`, `b: [out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform in `±1/sqrt(in)` for weights and bias.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.add_uniform(format!("{name}.w"), group, &[in_dim, out_dim], bound, rng);
        let bias = store.add_uniform(format!("{name}.b"), group, &[out_dim], bound, rng);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, sess: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = sess.param(self.weight);
        let b = sess.param(self.bias);
        sess.tape.affine(x, w, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Linear → relu → linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dims: (usize, usize, usize),
        rng: &mut R,
    ) -> Self {
        let (i, h, o) = dims;
        Self {
            hidden: Linear::init(store, &format!("{name}.l1"), group, i, h, rng),
            out: Linear::init(store, &format!("{name}.l2"), group, h, o, rng),
        }
    }

    pub fn forward(&self, sess: &mut Session<'_>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(sess, x)?;
        let h = sess.tape.relu(h)?;
        self.out.forward(sess, h)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.hidden.weight, self.hidden.bias, self.out.weight, self.out.bias]
    }
}

/// Inverted dropout: zeroes entries with probability `rate` and scales the
/// survivors by `1/(1-rate)`. The mask is a constant on the tape.
pub fn dropout<R: Rng>(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
    let Some(rng) = rng else {
        return Ok(x);
    };
    if rate <= 0.0 {
        return Ok(x);
    }
    if rate >= 1.0 {
        return Err(Error::contract(format!("dropout rate {rate} must be < 1")));
    }
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn modality_tags() {
        for m in Modality::ALL {
            assert_eq!(m.tag().parse::<Modality>().unwrap(), m);
        }
        assert!(matches!("x".parse::<Modality>(), Err(Error::Contract(_))));
    }

    #[test]
    fn dropout_is_identity_without_rng_and_scaled_with_it() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[50, 40], 1.0));
        let same = dropout::<ChaCha8Rng>(&mut t, x, 0.5, None).unwrap();
        assert_eq!(same, x);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = dropout(&mut t, x, 0.25, Some(&mut rng)).unwrap();
        let vals = t.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-15));
        let zeros = vals.iter().filter(|&&v| v == 0.0).count() as f64 / vals.len() as f64;
        assert!((zeros - 0.25).abs() < 0.05);
    }
}
