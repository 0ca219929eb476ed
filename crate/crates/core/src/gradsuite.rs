//! The finite-difference suite: every differentiable tape op on its own,
//! an 8-step LSTM, InfoNCE through a critic, and the full training
//! objective on a 4-sample batch.

use crate::cpc::{cpc_scores, infonce_loss, CpcCritic, CpcTerms};
use crate::data::{ModalitySample, SeqDims};
use crate::encoders::{run_lstm, BoundLstm};
use crate::error::{Error, Result};
use crate::fusion::Representations;
use crate::gradcheck::{grad_check_many, relative_error, GradCheckReport, Mismatch, FD_STEP};
use crate::layers::Modality;
use crate::model::{forward, ForwardOptions, ModelConfig, SelfMiModel, TaskSet};
use crate::params::{ParamStore, Session};
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;
use crate::training::total_loss;
use crate::ulg::{label_outputs, label_task_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Maximum relative error accepted by the suite.
pub const SUITE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.report.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.report.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.cases.iter().map(|c| c.report.max_rel_err).fold(0.0, f64::max)
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("positive extents")
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.random_range(0.1..2.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

/// `sum(y ⊙ w)` for a fixed random `w`, so every output coordinate gets a
/// distinct upstream gradient.
fn project(tape: &mut Tape, y: Var, w: &Tensor) -> Result<Var> {
    if tape.value(y).is_scalar() {
        return Ok(y);
    }
    let w = tape.constant(w.clone().reshape(tape.shape(y).to_vec())?);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(String, Vec<Tensor>, OpFn, usize)> {
    let mut cases: Vec<(String, Vec<Tensor>, OpFn, usize)> = Vec::new();
    let mut unary = |name: &str, x: Tensor, out_len: usize, f: fn(&mut Tape, Var) -> Result<Var>| {
        cases.push((name.to_string(), vec![x], Box::new(move |t, v| f(t, v[0])), out_len));
    };
    unary("transpose", random(rng, &[3, 4], -1.0, 1.0), 12, |t, x| t.transpose(x));
    unary("relu", away_from_zero(rng, &[3, 4]), 12, |t, x| t.relu(x));
    unary("tanh", random(rng, &[3, 4], -2.0, 2.0), 12, |t, x| t.tanh(x));
    unary("sigmoid", random(rng, &[3, 4], -3.0, 3.0), 12, |t, x| t.sigmoid(x));
    unary("exp", random(rng, &[3, 4], -2.0, 2.0), 12, |t, x| t.exp(x));
    unary("log", random(rng, &[3, 4], 0.5, 3.0), 12, |t, x| t.log(x));
    unary("abs", away_from_zero(rng, &[3, 4]), 12, |t, x| t.abs(x));
    unary("scale", random(rng, &[3, 4], -1.0, 1.0), 12, |t, x| t.scale(x, -1.7));
    unary("slice_cols", random(rng, &[3, 5], -1.0, 1.0), 9, |t, x| {
        t.slice_cols(x, 1, 4)
    });
    unary("normalize_rows", random(rng, &[3, 4], -1.0, 1.0), 12, |t, x| {
        t.normalize_rows(x)
    });
    unary("log_softmax_rows", random(rng, &[3, 4], -2.0, 2.0), 12, |t, x| {
        t.log_softmax_rows(x)
    });
    unary("diagonal", random(rng, &[4, 4], -1.0, 1.0), 4, |t, x| t.diagonal(x));
    unary("sum", random(rng, &[3, 4], -1.0, 1.0), 1, |t, x| t.sum(x));
    unary("mean", random(rng, &[3, 4], -1.0, 1.0), 1, |t, x| t.mean(x));

    let mut binary = |name: &str, a: Tensor, b: Tensor, out_len: usize, f: fn(&mut Tape, Var, Var) -> Result<Var>| {
        cases.push((
            name.to_string(),
            vec![a, b],
            Box::new(move |t, v| f(t, v[0], v[1])),
            out_len,
        ));
    };
    binary(
        "matmul",
        random(rng, &[3, 4], -1.0, 1.0),
        random(rng, &[4, 2], -1.0, 1.0),
        6,
        |t, a, b| t.matmul(a, b),
    );
    binary(
        "add",
        random(rng, &[3, 4], -1.0, 1.0),
        random(rng, &[3, 4], -1.0, 1.0),
        12,
        |t, a, b| t.add(a, b),
    );
    binary(
        "sub",
        random(rng, &[3, 4], -1.0, 1.0),
        random(rng, &[3, 4], -1.0, 1.0),
        12,
        |t, a, b| t.sub(a, b),
    );
    binary(
        "mul",
        random(rng, &[3, 4], -1.0, 1.0),
        random(rng, &[3, 4], -1.0, 1.0),
        12,
        |t, a, b| t.mul(a, b),
    );
    binary(
        "add_bias",
        random(rng, &[3, 4], -1.0, 1.0),
        random(rng, &[4], -1.0, 1.0),
        12,
        |t, a, b| t.add_bias(a, b),
    );
    binary(
        "concat_cols",
        random(rng, &[3, 2], -1.0, 1.0),
        random(rng, &[3, 3], -1.0, 1.0),
        15,
        |t, a, b| t.concat_cols(&[a, b]),
    );
    cases
}

fn check_op_cases(rng: &mut ChaCha8Rng, corrupt: Option<OpKind>) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (name, inputs, f, out_len) in op_cases(rng) {
        let w = random(rng, &[out_len], -1.0, 1.0);
        let report = grad_check_many(
            |t, v| {
                let y = f(t, v)?;
                project(t, y, &w)
            },
            &inputs,
            FD_STEP,
            SUITE_TOL,
            corrupt,
        )?;
        out.push(CaseResult { name, report });
    }
    Ok(out)
}

/// LSTM over 8 steps; inputs are the three weight tensors and the sequence.
fn check_lstm(rng: &mut ChaCha8Rng, corrupt: Option<OpKind>) -> Result<CaseResult> {
    let (d, h, n, len) = (3, 4, 2, 8);
    let mut inputs = vec![
        random(rng, &[4 * h, d], -0.5, 0.5),
        random(rng, &[4 * h, h], -0.5, 0.5),
        random(rng, &[4 * h], -0.5, 0.5),
    ];
    inputs.extend((0..len).map(|_| random(rng, &[n, d], -1.0, 1.0)));
    let w = random(rng, &[n * h], -1.0, 1.0);
    let report = grad_check_many(
        |t, v| {
            let p = BoundLstm::new(t, v[0], v[1], v[2])?;
            let hn = run_lstm(t, &p, &v[3..])?;
            project(t, hn, &w)
        },
        &inputs,
        FD_STEP,
        SUITE_TOL,
        corrupt,
    )?;
    Ok(CaseResult {
        name: "lstm_len8".into(),
        report,
    })
}

/// Checks `d f / d θ` for every parameter coordinate in `store`.
pub fn grad_check_store<F>(
    store: &ParamStore,
    f: F,
    step: f64,
    tol: f64,
    corrupt: Option<OpKind>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Session<'_>) -> Result<Var>,
{
    let tape = corrupt.map_or_else(Tape::new, Tape::with_corrupted_rule);
    let mut sess = Session::with_tape(store, tape, true);
    let out = f(&mut sess)?;
    sess.tape.backward(out)?;
    let analytic = sess.gradients();
    drop(sess);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut sess = Session::new(s, false);
        let o = f(&mut sess)?;
        Ok(sess.tape.value(o).item())
    };
    let mut work = store.clone();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut worst: Option<Mismatch> = None;
    let mut checked = 0;
    for (i, &id) in ids.iter().enumerate() {
        for (c, &a) in analytic[i].iter().enumerate().take(store.get(id).value.len()) {
            let orig = store.get(id).value.data()[c];
            work.get_mut(id).value.data_mut()[c] = orig + step;
            let plus = eval(&work)?;
            work.get_mut(id).value.data_mut()[c] = orig - step;
            let minus = eval(&work)?;
            work.get_mut(id).value.data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let rel_err = relative_error(a, numeric);
            checked += 1;
            if worst.as_ref().is_none_or(|w| rel_err > w.rel_err) {
                worst = Some(Mismatch {
                    input: i,
                    coord: c,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    let max_rel_err = worst.as_ref().map_or(0.0, |w| w.rel_err);
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        checked,
        tol,
        passed: max_rel_err <= tol,
    })
}

fn tiny_config() -> ModelConfig {
    let dims = SeqDims {
        l_t: 2,
        d_t: 3,
        l_a: 3,
        d_a: 2,
        l_v: 3,
        d_v: 2,
    };
    ModelConfig {
        text_hidden: 3,
        audio_hidden: 3,
        visual_hidden: 3,
        fusion_dim: 4,
        unimodal_dims: Some([4, 4, 4]),
        critic_hidden: Some(4),
        label_hidden: 3,
        ..ModelConfig::for_dims(dims)
    }
}

/// Small model whose unimodal projections start with positive biases, so
/// no representation row is all zeros.
fn tiny_model(seed: u64) -> Result<(SelfMiModel, ParamStore)> {
    let (model, mut store) = SelfMiModel::new(tiny_config(), seed)?;
    for h in &model.heads.heads {
        store.get_mut(h.project.bias).value.data_mut().fill(0.5);
    }
    Ok((model, store))
}

fn tiny_batch(rng: &mut ChaCha8Rng, dims: SeqDims, n: usize) -> Vec<ModalitySample> {
    (0..n)
        .map(|i| ModalitySample {
            id: format!("g{i}"),
            text: random(rng, &[dims.l_t, dims.d_t], -1.0, 1.0),
            audio: random(rng, &[dims.l_a, dims.d_a], -1.0, 1.0),
            vision: random(rng, &[dims.l_v, dims.d_v], -1.0, 1.0),
            label: rng.random_range(-2.0..2.0),
        })
        .collect()
}

/// InfoNCE between a unimodal head output and the critic projection of the
/// fused representation, differentiated with respect to all parameters.
fn check_infonce(rng: &mut ChaCha8Rng, corrupt: Option<OpKind>) -> Result<CaseResult> {
    let (model, store) = tiny_model(rng.random())?;
    let batch = tiny_batch(rng, model.config.dims, 4);
    let refs: Vec<&ModalitySample> = batch.iter().collect();
    let critic: &CpcCritic = &model.critic;
    let report = grad_check_store(
        &store,
        |sess| {
            let mut opts = ForwardOptions::eval();
            opts.tasks = TaskSet::ALL;
            let out = forward(sess, &model, &refs, opts)?;
            let z_a = out.reps.get(Modality::Audio).expect("audio task on");
            let s = cpc_scores(sess, critic, out.reps.z_m, z_a, Modality::Audio)?;
            infonce_loss(&mut sess.tape, s)
        },
        FD_STEP,
        SUITE_TOL,
        corrupt,
    )?;
    Ok(CaseResult {
        name: "infonce_critic".into(),
        report,
    })
}

fn full_options() -> ForwardOptions<'static> {
    ForwardOptions {
        tasks: TaskSet::ALL,
        cpc_terms: CpcTerms::FULL,
        with_cpc: true,
        with_labelgen: false,
        dropout: None,
    }
}

/// The complete training objective with all tasks, all CPC terms and the
/// label-generation loss.
///
/// The generators read detached representations. Finite differences would
/// see through a detach, so the representations they read are frozen at
/// their unperturbed values on both sides of the comparison.
fn check_full_objective(rng: &mut ChaCha8Rng, corrupt: Option<OpKind>) -> Result<CaseResult> {
    let (model, store) = tiny_model(rng.random())?;
    let batch = tiny_batch(rng, model.config.dims, 4);
    let refs: Vec<&ModalitySample> = batch.iter().collect();
    let y_m: Vec<f64> = batch.iter().map(|s| s.label).collect();
    let y_s: Vec<Vec<f64>> = (0..3)
        .map(|_| y_m.iter().map(|y| y + rng.random_range(-1.0..1.0)).collect())
        .collect();
    let frozen: (Tensor, [Tensor; 3]) = {
        let mut sess = Session::new(&store, false);
        let out = forward(&mut sess, &model, &refs, full_options())?;
        let z = |v: Option<Var>| sess.tape.value(v.expect("all tasks on")).clone();
        (
            z(Some(out.reps.z_m)),
            [z(out.reps.z_s[0]), z(out.reps.z_s[1]), z(out.reps.z_s[2])],
        )
    };
    let report = grad_check_store(
        &store,
        |sess| {
            let out = forward(sess, &model, &refs, full_options())?;
            let reps = Representations {
                z_m: sess.tape.constant(frozen.0.clone()),
                z_s: [0, 1, 2].map(|i| Some(sess.tape.constant(frozen.1[i].clone()))),
            };
            let mut gen = Vec::new();
            for m in Modality::ALL {
                gen.push(label_outputs(sess, &model.labelgen, &model.critic, &reps, m)?);
            }
            let ym = sess.tape.constant(Tensor::new(vec![y_m.len(), 1], y_m.clone())?);
            let task = label_task_loss(&mut sess.tape, &gen, ym)?;
            let terms = total_loss(
                &mut sess.tape,
                out.y_m,
                &y_m,
                out.y_s,
                [Some(&y_s[0][..]), Some(&y_s[1][..]), Some(&y_s[2][..])],
                out.cpc.as_ref(),
                0.1,
                Some(task),
            )?;
            Ok(terms.total)
        },
        FD_STEP,
        SUITE_TOL,
        corrupt,
    )?;
    Ok(CaseResult {
        name: "full_objective".into(),
        report,
    })
}

/// Runs every case. `corrupt` perturbs one op's backward rule on the
/// analytic side; the cases that use that op must then fail.
pub fn run_suite(seed: u64, corrupt: Option<OpKind>) -> Result<SuiteReport> {
    if corrupt == Some(OpKind::Leaf) {
        return Err(Error::contract("leaves have no backward rule to corrupt"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = check_op_cases(&mut rng, corrupt)?;
    cases.push(check_lstm(&mut rng, corrupt)?);
    cases.push(check_infonce(&mut rng, corrupt)?);
    cases.push(check_full_objective(&mut rng, corrupt)?);
    Ok(SuiteReport { cases })
}
