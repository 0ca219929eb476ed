//! Sequence encoders producing one fixed-length vector per sample.
//!
//! Audio and visual streams go through a single-direction LSTM whose final
//! hidden state is the representation. Text uses the first time step as the
//! sentence vector, the convention for transformer-style features where
//! position 0 carries the summary token; an LSTM can be configured instead.

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore, Session};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    FirstPosition,
    LstmFinalState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityEncoderConfig {
    pub kind: EncoderKind,
    pub input_dim: usize,
    /// Ignored by `FirstPosition`.
    pub hidden_dim: usize,
}

impl ModalityEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::contract("encoder dims must be positive"));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            EncoderKind::FirstPosition => self.input_dim,
            EncoderKind::LstmFinalState => self.hidden_dim,
        }
    }
}

/// LSTM weights with gate order (input, forget, cell, output).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    /// `[4h × d]`
    pub w_ih: ParamId,
    /// `[4h × h]`
    pub w_hh: ParamId,
    /// `[4h]`
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Uniform in `±1/sqrt(h)`, forget-gate bias set to 1.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add_uniform(format!("{prefix}.w_ih"), group, &[4 * hidden, input_dim], bound, rng);
        let w_hh = store.add_uniform(format!("{prefix}.w_hh"), group, &[4 * hidden, hidden], bound, rng);
        let bias = store.add_uniform(format!("{prefix}.bias"), group, &[4 * hidden], bound, rng);
        let b = store.get_mut(bias).value.data_mut();
        b[hidden..2 * hidden].fill(1.0);
        Self {
            w_ih,
            w_hh,
            bias,
            input_dim,
            hidden,
        }
    }

    pub fn bind(&self, sess: &mut Session<'_>) -> Result<BoundLstm> {
        let w_ih = sess.param(self.w_ih);
        let w_hh = sess.param(self.w_hh);
        let bias = sess.param(self.bias);
        BoundLstm::new(&mut sess.tape, w_ih, w_hh, bias)
    }
}

/// LSTM weights already on a tape, pre-transposed for row-batch products.
#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    w_ih_t: Var,
    w_hh_t: Var,
    bias: Var,
    input_dim: usize,
    hidden: usize,
}

impl BoundLstm {
    pub fn new(tape: &mut Tape, w_ih: Var, w_hh: Var, bias: Var) -> Result<Self> {
        let s_ih = tape.shape(w_ih).to_vec();
        let s_hh = tape.shape(w_hh).to_vec();
        if s_ih.len() != 2 || !s_ih[0].is_multiple_of(4) {
            return Err(Error::Shape {
                op: "lstm",
                left: s_ih,
                right: s_hh,
            });
        }
        let hidden = s_ih[0] / 4;
        if s_hh != [4 * hidden, hidden] || tape.value(bias).len() != 4 * hidden {
            return Err(Error::Shape {
                op: "lstm",
                left: s_ih,
                right: s_hh,
            });
        }
        Ok(Self {
            w_ih_t: tape.transpose(w_ih)?,
            w_hh_t: tape.transpose(w_hh)?,
            bias,
            input_dim: s_ih[1],
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

/// One LSTM cell update for a batch of rows: `x [N×d]`, `h, c [N×h]`.
pub fn lstm_step(tape: &mut Tape, p: &BoundLstm, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let h = p.hidden;
    if tape.shape(x).get(1) != Some(&p.input_dim) {
        return Err(Error::Shape {
            op: "lstm_step",
            left: tape.shape(x).to_vec(),
            right: vec![4 * h, p.input_dim],
        });
    }
    for s in [h_prev, c_prev] {
        if tape.shape(s) != [tape.shape(x)[0], h] {
            return Err(Error::Shape {
                op: "lstm_step",
                left: tape.shape(s).to_vec(),
                right: vec![tape.shape(x)[0], h],
            });
        }
    }
    let xi = tape.matmul(x, p.w_ih_t)?;
    let hh = tape.matmul(h_prev, p.w_hh_t)?;
    let pre = tape.add(xi, hh)?;
    let gates = tape.add_bias(pre, p.bias)?;

    let i = tape.slice_cols(gates, 0, h)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice_cols(gates, h, 2 * h)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice_cols(gates, 2 * h, 3 * h)?;
    let g = tape.tanh(g)?;
    let o = tape.slice_cols(gates, 3 * h, 4 * h)?;
    let o = tape.sigmoid(o)?;

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c))
}

/// Stacks time step `t` of every sequence into an `[N×d]` matrix.
fn time_slice(seqs: &[&Tensor], t: usize) -> Result<Tensor> {
    let d = seqs[0].cols();
    let mut data = Vec::with_capacity(seqs.len() * d);
    for s in seqs {
        data.extend_from_slice(s.row(t));
    }
    Tensor::matrix(seqs.len(), d, data)
}

fn check_batch(cfg: &ModalityEncoderConfig, seqs: &[&Tensor]) -> Result<usize> {
    let Some(first) = seqs.first() else {
        return Err(Error::contract("encode: empty batch"));
    };
    let len = first.rows();
    for s in seqs {
        if s.shape().len() != 2 || s.rows() == 0 {
            return Err(Error::contract("encode: empty sequence"));
        }
        if s.rows() != len || s.cols() != cfg.input_dim {
            return Err(Error::Shape {
                op: "encode_sequence",
                left: s.shape().to_vec(),
                right: vec![len, cfg.input_dim],
            });
        }
    }
    Ok(len)
}

/// Runs a bound LSTM from the zero state over `[N×d]` time-step inputs and
/// returns the final hidden state.
pub fn run_lstm(tape: &mut Tape, p: &BoundLstm, steps: &[Var]) -> Result<Var> {
    let n = steps
        .first()
        .map(|&s| tape.shape(s)[0])
        .ok_or_else(|| Error::contract("encode: empty sequence"))?;
    let mut h = tape.constant(Tensor::zeros(&[n, p.hidden]));
    let mut c = tape.constant(Tensor::zeros(&[n, p.hidden]));
    for &x in steps {
        (h, c) = lstm_step(tape, p, x, h, c)?;
    }
    Ok(h)
}

/// Encodes a batch of equal-length `[l×d]` sequences into `[N×out]`.
pub fn encode_batch(
    sess: &mut Session<'_>,
    cfg: &ModalityEncoderConfig,
    lstm: Option<&LstmParams>,
    seqs: &[&Tensor],
) -> Result<Var> {
    let len = check_batch(cfg, seqs)?;
    match cfg.kind {
        EncoderKind::FirstPosition => Ok(sess.tape.constant(time_slice(seqs, 0)?)),
        EncoderKind::LstmFinalState => {
            let p = lstm.ok_or_else(|| Error::contract("lstm encoder without parameters"))?;
            let bound = p.bind(sess)?;
            let mut steps = Vec::with_capacity(len);
            for t in 0..len {
                steps.push(sess.tape.constant(time_slice(seqs, t)?));
            }
            run_lstm(&mut sess.tape, &bound, &steps)
        }
    }
}

/// Single-sequence form of [`encode_batch`]; returns `[1×out]`.
pub fn encode_sequence(
    sess: &mut Session<'_>,
    cfg: &ModalityEncoderConfig,
    lstm: Option<&LstmParams>,
    seq: &Tensor,
) -> Result<Var> {
    encode_batch(sess, cfg, lstm, &[seq])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar LSTM cell written directly from the gate equations.
    fn reference_step(w_ih: &[f64], w_hh: &[f64], b: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hn = h.len();
        let d = x.len();
        let pre = |row: usize| {
            let mut s = b[row];
            for j in 0..d {
                s += w_ih[row * d + j] * x[j];
            }
            for j in 0..hn {
                s += w_hh[row * hn + j] * h[j];
            }
            s
        };
        let mut h_out = vec![0.0; hn];
        let mut c_out = vec![0.0; hn];
        for k in 0..hn {
            let i = sig(pre(k));
            let f = sig(pre(hn + k));
            let g = pre(2 * hn + k).tanh();
            let o = sig(pre(3 * hn + k));
            c_out[k] = f * c[k] + i * g;
            h_out[k] = o * c_out[k].tanh();
        }
        (h_out, c_out)
    }

    fn raw_bound(tape: &mut Tape, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> BoundLstm {
        let a = tape.constant(w_ih);
        let h = tape.constant(w_hh);
        let b = tape.constant(b);
        BoundLstm::new(tape, a, h, b).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let mut t = Tape::new();
        let p = raw_bound(
            &mut t,
            Tensor::zeros(&[8, 3]),
            Tensor::zeros(&[8, 2]),
            Tensor::zeros(&[8]),
        );
        let x = t.constant(Tensor::matrix(1, 3, vec![0.4, -1.0, 2.0]).unwrap());
        let h0 = t.constant(Tensor::zeros(&[1, 2]));
        let c0 = t.constant(Tensor::zeros(&[1, 2]));
        let (h, c) = lstm_step(&mut t, &p, x, h0, c0).unwrap();
        assert_eq!(t.value(h).data(), &[0.0, 0.0]);
        assert_eq!(t.value(c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut t = Tape::new();
        let mut b = vec![0.0; 8];
        b[2..4].fill(50.0);
        let p = raw_bound(
            &mut t,
            Tensor::zeros(&[8, 2]),
            Tensor::zeros(&[8, 2]),
            Tensor::vector(b),
        );
        let x = t.constant(Tensor::zeros(&[1, 2]));
        let h0 = t.constant(Tensor::zeros(&[1, 2]));
        let c0 = t.constant(Tensor::matrix(1, 2, vec![0.7, -1.3]).unwrap());
        let (_, c) = lstm_step(&mut t, &p, x, h0, c0).unwrap();
        assert!((t.value(c).data()[0] - 0.7).abs() < 1e-9);
        assert!((t.value(c).data()[1] + 1.3).abs() < 1e-9);
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut r = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (w_ih, w_hh, b, x, h, c) = (r(8 * 2), r(8 * 2), r(8), r(2), r(2), r(2));
        let (h_ref, c_ref) = reference_step(&w_ih, &w_hh, &b, &x, &h, &c);

        let mut t = Tape::new();
        let p = raw_bound(
            &mut t,
            Tensor::matrix(8, 2, w_ih).unwrap(),
            Tensor::matrix(8, 2, w_hh).unwrap(),
            Tensor::vector(b),
        );
        let xv = t.constant(Tensor::matrix(1, 2, x).unwrap());
        let hv = t.constant(Tensor::matrix(1, 2, h).unwrap());
        let cv = t.constant(Tensor::matrix(1, 2, c).unwrap());
        let (hn, cn) = lstm_step(&mut t, &p, xv, hv, cv).unwrap();
        for k in 0..2 {
            assert!((t.value(hn).data()[k] - h_ref[k]).abs() <= 1e-12);
            assert!((t.value(cn).data()[k] - c_ref[k]).abs() <= 1e-12);
        }
    }

    fn lstm_setup(seed: u64, d: usize, h: usize) -> (ParamStore, LstmParams, ModalityEncoderConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = LstmParams::init(&mut store, "enc", ParamGroup::Audio, d, h, &mut rng);
        let cfg = ModalityEncoderConfig {
            kind: EncoderKind::LstmFinalState,
            input_dim: d,
            hidden_dim: h,
        };
        (store, p, cfg)
    }

    #[test]
    fn init_sets_forget_bias() {
        let (store, p, _) = lstm_setup(1, 3, 4);
        let b = store.get(p.bias).value.data();
        assert_eq!(&b[4..8], &[1.0; 4]);
        assert_eq!(store.get(p.w_ih).value.shape(), &[16, 3]);
        assert_eq!(store.get(p.w_hh).value.shape(), &[16, 4]);
        let bound = 0.5;
        assert!(store.get(p.w_ih).value.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn first_position_returns_row_zero() {
        let store = ParamStore::new();
        let mut sess = Session::new(&store, false);
        let cfg = ModalityEncoderConfig {
            kind: EncoderKind::FirstPosition,
            input_dim: 3,
            hidden_dim: 3,
        };
        let seq = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 9.0, 9.0, 9.0]).unwrap();
        let out = encode_sequence(&mut sess, &cfg, None, &seq).unwrap();
        assert_eq!(sess.tape.value(out).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn unrolled_chain_is_bit_identical() {
        let (store, p, cfg) = lstm_setup(5, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let seq = Tensor::matrix(3, 3, (0..9).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();

        let mut sess = Session::new(&store, false);
        let enc = encode_sequence(&mut sess, &cfg, Some(&p), &seq).unwrap();
        let encoded = sess.tape.value(enc).clone();

        let mut sess = Session::new(&store, false);
        let bound = p.bind(&mut sess).unwrap();
        let t = &mut sess.tape;
        let mut h = t.constant(Tensor::zeros(&[1, 4]));
        let mut c = t.constant(Tensor::zeros(&[1, 4]));
        for step in 0..3 {
            let x = t.constant(Tensor::matrix(1, 3, seq.row(step).to_vec()).unwrap());
            (h, c) = lstm_step(t, &bound, x, h, c).unwrap();
        }
        assert_eq!(t.value(h), &encoded);

        // l = 1 equals a single step from zero state.
        let one = Tensor::matrix(1, 3, seq.row(0).to_vec()).unwrap();
        let mut sess = Session::new(&store, false);
        let enc1 = encode_sequence(&mut sess, &cfg, Some(&p), &one).unwrap();
        let v1 = sess.tape.value(enc1).clone();
        let mut sess = Session::new(&store, false);
        let bound = p.bind(&mut sess).unwrap();
        let t = &mut sess.tape;
        let h0 = t.constant(Tensor::zeros(&[1, 4]));
        let c0 = t.constant(Tensor::zeros(&[1, 4]));
        let x = t.constant(one);
        let (h1, _) = lstm_step(t, &bound, x, h0, c0).unwrap();
        assert_eq!(t.value(h1), &v1);
    }

    #[test]
    fn order_sensitive() {
        let (store, p, cfg) = lstm_setup(8, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let fwd = Tensor::from_rows(&rows).unwrap();
        let rev: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
        let rev = Tensor::from_rows(&rev).unwrap();
        let mut sess = Session::new(&store, false);
        let a = encode_sequence(&mut sess, &cfg, Some(&p), &fwd).unwrap();
        let b = encode_sequence(&mut sess, &cfg, Some(&p), &rev).unwrap();
        let diff = sess
            .tape
            .value(a)
            .data()
            .iter()
            .zip(sess.tape.value(b).data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-6);
    }

    #[test]
    fn batch_rejects_ragged_and_empty() {
        let (store, p, cfg) = lstm_setup(1, 2, 2);
        let mut sess = Session::new(&store, false);
        assert!(encode_batch(&mut sess, &cfg, Some(&p), &[]).is_err());
        let a = Tensor::zeros(&[3, 2]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(encode_batch(&mut sess, &cfg, Some(&p), &[&a, &b]).is_err());
        let wrong = Tensor::zeros(&[3, 5]);
        assert!(matches!(
            encode_batch(&mut sess, &cfg, Some(&p), &[&wrong]),
            Err(Error::Shape { .. })
        ));
    }
}
