//! Objective, epoch loop and best-epoch selection.

use crate::cpc::{CpcOutputs, CpcTerms};
use crate::data::{batches, labels, mean_predictor_mae, DatasetSplits, ModalitySample};
use crate::error::{Error, Result};
use crate::layers::Modality;
use crate::metrics::MetricsReport;
use crate::model::{forward, predict_samples, DropoutRates, ForwardOptions, ModelConfig, SelfMiModel, TaskSet};
use crate::optim::{Adam, LearningRates};
use crate::params::{install_grads, ParamStore, Session};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::ulg::{label_task_loss, ULabelState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Offset mixed into the seed of the dropout stream so it never collides
/// with the batch-order streams.
const DROPOUT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: LearningRates,
    pub cpc_weight: f64,
    pub dropout: DropoutRates,
    pub range: (f64, f64),
    pub tasks: TaskSet,
    pub cpc_terms: CpcTerms,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 32,
            seed,
            lr: LearningRates::default(),
            cpc_weight: 0.1,
            dropout: DropoutRates {
                text: 0.0,
                audio: 0.1,
                visual: 0.1,
                fusion: 0.1,
            },
            range: (-3.0, 3.0),
            tasks: TaskSet::ALL,
            cpc_terms: CpcTerms::FULL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        self.lr.validate()?;
        if !(self.cpc_weight.is_finite() && self.cpc_weight >= 0.0) {
            return Err(Error::Validation(format!(
                "cpc_weight must be finite and non-negative, got {}",
                self.cpc_weight
            )));
        }
        let d = self.dropout;
        for (name, p) in [
            ("dropout_text", d.text),
            ("dropout_audio", d.audio),
            ("dropout_visual", d.visual),
            ("dropout_fusion", d.fusion),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Validation(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        if self.range.0.partial_cmp(&self.range.1) != Some(Ordering::Less) {
            return Err(Error::Validation(format!("invalid range {:?}", self.range)));
        }
        Ok(())
    }
}

/// Objective components of one batch, all scalar tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub l1_m: Var,
    pub weighted: [Option<Var>; 3],
    /// Unweighted `L_CPC` and its pair terms.
    pub cpc: Option<Var>,
    pub cpc_pairs: [Option<Var>; 3],
    pub task: Option<Var>,
}

fn column(values: &[f64]) -> Tensor {
    Tensor::new(vec![values.len(), 1], values.to_vec()).expect("non-empty column")
}

fn check_term(tape: &Tape, v: Var, name: &str) -> Result<()> {
    let x = tape.value(v).item();
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("loss term {name} is {x}")))
    }
}

/// Re-labels a numerical error with the objective term that produced it.
fn in_term<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e if e.is_numerical() => Error::NonFinite(format!("loss term {name}: {e}")),
        e => e,
    })
}

/// `mean_i(|ŷ_m - y_m| + Σ_s tanh(|y_s - y_m|)·|ŷ_s - y_s|) + β·L_CPC + L_task`.
/// Labels enter as constants.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    y_hat_m: Var,
    y_m: &[f64],
    y_hat_s: [Option<Var>; 3],
    y_s: [Option<&[f64]>; 3],
    cpc: Option<&CpcOutputs>,
    beta: f64,
    l_task: Option<Var>,
) -> Result<LossTerms> {
    let n = y_m.len();
    if n == 0 {
        return Err(Error::contract("total_loss on an empty batch"));
    }
    if tape.shape(y_hat_m) != [n, 1] {
        return Err(Error::Shape {
            op: "total_loss",
            left: tape.shape(y_hat_m).to_vec(),
            right: vec![n, 1],
        });
    }
    let ym = tape.constant(column(y_m));
    let l1_m = in_term(
        "multimodal_l1",
        (|| {
            let d = tape.sub(y_hat_m, ym)?;
            let a = tape.abs(d)?;
            tape.mean(a)
        })(),
    )?;
    check_term(tape, l1_m, "multimodal_l1")?;
    let mut total = l1_m;

    let mut weighted = [None; 3];
    for m in Modality::ALL {
        let (pred, lab) = match (y_hat_s[m.index()], y_s[m.index()]) {
            (Some(p), Some(l)) => (p, l),
            (None, None) => continue,
            _ => return Err(Error::contract(format!("prediction/label mismatch for modality {m}"))),
        };
        if lab.len() != n || tape.shape(pred) != [n, 1] {
            return Err(Error::Shape {
                op: "total_loss",
                left: tape.shape(pred).to_vec(),
                right: vec![lab.len(), 1],
            });
        }
        let w: Vec<f64> = lab.iter().zip(y_m).map(|(s, t)| (s - t).abs().tanh()).collect();
        let name = format!("weighted_{m}");
        let w = tape.constant(column(&w));
        let ys = tape.constant(column(lab));
        let term = in_term(
            &name,
            (|| {
                let d = tape.sub(pred, ys)?;
                let a = tape.abs(d)?;
                let p = tape.mul(a, w)?;
                tape.mean(p)
            })(),
        )?;
        check_term(tape, term, &name)?;
        total = tape.add(total, term)?;
        weighted[m.index()] = Some(term);
    }

    let mut cpc_total = None;
    let mut cpc_pairs = [None; 3];
    if let Some(c) = cpc {
        for m in Modality::ALL {
            if let Some(p) = c.pair_losses[m.index()] {
                check_term(tape, p, &format!("cpc_m{m}"))?;
            }
        }
        check_term(tape, c.total, "cpc")?;
        let scaled = in_term("cpc", tape.scale(c.total, beta))?;
        total = in_term("cpc", tape.add(total, scaled))?;
        cpc_total = Some(c.total);
        cpc_pairs = c.pair_losses;
    }
    if let Some(t) = l_task {
        check_term(tape, t, "label_task")?;
        total = in_term("label_task", tape.add(total, t))?;
    }
    check_term(tape, total, "total")?;
    Ok(LossTerms {
        total,
        l1_m,
        weighted,
        cpc: cpc_total,
        cpc_pairs,
        task: l_task,
    })
}

/// One row of the training log. Loss columns are sample-weighted means over
/// the epoch's batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub l1_m: f64,
    pub weighted_t: f64,
    pub weighted_a: f64,
    pub weighted_v: f64,
    pub cpc: f64,
    pub cpc_mt: f64,
    pub cpc_ma: f64,
    pub cpc_mv: f64,
    pub label_task: f64,
    pub gap_t: f64,
    pub gap_a: f64,
    pub gap_v: f64,
    pub val_mae: f64,
    pub val_corr: f64,
    pub val_acc2_nonneg: f64,
    pub val_acc2_posneg: f64,
    pub val_f1_nonneg: f64,
    pub val_f1_posneg: f64,
}

impl EpochRecord {
    pub fn weighted(&self, m: Modality) -> f64 {
        [self.weighted_t, self.weighted_a, self.weighted_v][m.index()]
    }

    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.l1_m,
            self.weighted_t,
            self.weighted_a,
            self.weighted_v,
            self.cpc,
            self.cpc_mt,
            self.cpc_ma,
            self.cpc_mv,
            self.label_task,
            self.gap_t,
            self.gap_a,
            self.gap_v,
            self.val_mae,
            self.val_corr,
            self.val_acc2_nonneg,
            self.val_acc2_posneg,
            self.val_f1_nonneg,
            self.val_f1_posneg,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SelfMiModel,
    /// Parameters of the epoch with the lowest validation MAE.
    pub params: ParamStore,
    pub best_epoch: usize,
    pub log: TrainLog,
    pub labels: ULabelState,
    pub test: MetricsReport,
    /// Test MAE of the constant training-mean predictor.
    pub baseline_mae: f64,
}

#[derive(Default)]
struct Accum {
    n: f64,
    sums: [f64; 11],
}

impl Accum {
    fn add(&mut self, n: usize, vals: [f64; 11]) {
        self.n += n as f64;
        for (s, v) in self.sums.iter_mut().zip(vals) {
            *s += n as f64 * v;
        }
    }

    fn means(&self) -> [f64; 11] {
        self.sums.map(|s| s / self.n.max(1.0))
    }
}

fn val_of(tape: &Tape, v: Option<Var>) -> f64 {
    v.map_or(0.0, |v| tape.value(v).item())
}

/// Trains with the default architecture for the data's dimensions.
pub fn run_training(cfg: &TrainConfig, data: &DatasetSplits) -> Result<TrainOutcome> {
    run_training_with(cfg, ModelConfig::for_dims(data.dims), data)
}

pub fn run_training_with(cfg: &TrainConfig, model_cfg: ModelConfig, data: &DatasetSplits) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    if model_cfg.dims != data.dims {
        return Err(Error::Validation(format!(
            "model dims {:?} do not match data dims {:?}",
            model_cfg.dims, data.dims
        )));
    }
    let train = &data.train;
    if train.is_empty() {
        return Err(Error::contract("empty training split"));
    }
    let (model, mut store) = SelfMiModel::new(model_cfg, cfg.seed)?;
    let mut opt = Adam::new(cfg.lr);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_SEED_SALT);
    let mut state = ULabelState::new(
        train.iter().map(|s| s.id.clone()).collect(),
        labels(train),
        cfg.range,
        model.rep_dims(),
    )?;
    let val_labels = labels(&data.valid);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        state.set_epoch(epoch)?;
        let late = epoch >= 2;
        let mut acc = Accum::default();
        for idx in batches(train.len(), cfg.batch_size, cfg.seed, epoch as u64) {
            let batch: Vec<&ModalitySample> = idx.iter().map(|&i| &train[i]).collect();
            let y_m: Vec<f64> = idx.iter().map(|&i| state.y_m()[i]).collect();
            let y_s: Vec<Option<Vec<f64>>> = Modality::ALL
                .iter()
                .map(|&m| {
                    cfg.tasks
                        .has(m)
                        .then(|| idx.iter().map(|&i| state.labels(m)[i]).collect())
                })
                .collect();

            let mut sess = Session::new(&store, true);
            let out = forward(
                &mut sess,
                &model,
                &batch,
                ForwardOptions {
                    tasks: cfg.tasks,
                    cpc_terms: cfg.cpc_terms,
                    with_cpc: late,
                    with_labelgen: late,
                    dropout: Some((&mut drop_rng, cfg.dropout)),
                },
            );
            let out = in_term("forward", out)?;
            let generated: Vec<Var> = out.generated.iter().flatten().copied().collect();
            let l_task = if generated.is_empty() {
                None
            } else {
                let ym = sess.tape.constant(column(&y_m));
                Some(in_term("label_task", label_task_loss(&mut sess.tape, &generated, ym))?)
            };
            let terms = total_loss(
                &mut sess.tape,
                out.y_m,
                &y_m,
                out.y_s,
                [0, 1, 2].map(|i| y_s[i].as_deref()),
                out.cpc.as_ref(),
                cfg.cpc_weight,
                l_task,
            )?;
            in_term("total", sess.tape.backward(terms.total))?;
            let tape = &sess.tape;
            acc.add(
                idx.len(),
                [
                    val_of(tape, Some(terms.total)),
                    val_of(tape, Some(terms.l1_m)),
                    val_of(tape, terms.weighted[0]),
                    val_of(tape, terms.weighted[1]),
                    val_of(tape, terms.weighted[2]),
                    val_of(tape, terms.cpc),
                    val_of(tape, terms.cpc_pairs[0]),
                    val_of(tape, terms.cpc_pairs[1]),
                    val_of(tape, terms.cpc_pairs[2]),
                    val_of(tape, terms.task),
                    0.0,
                ],
            );
            let generated_vals: Vec<(Modality, Vec<f64>)> = Modality::ALL
                .into_iter()
                .filter_map(|m| out.generated[m.index()].map(|v| (m, tape.value(v).data().to_vec())))
                .collect();
            let reps = [
                Some(tape.value(out.reps.z_m).clone()),
                out.reps.z_s[0].map(|v| tape.value(v).clone()),
                out.reps.z_s[1].map(|v| tape.value(v).clone()),
                out.reps.z_s[2].map(|v| tape.value(v).clone()),
            ];
            let grads = sess.gradients();
            drop(sess);

            install_grads(&mut store, grads);
            opt.step(&mut store)?;
            for (m, vals) in generated_vals {
                state.store_generated(m, &idx, &vals)?;
            }
            state.update_global_reps([reps[0].as_ref(), reps[1].as_ref(), reps[2].as_ref(), reps[3].as_ref()])?;
        }

        let val_pred = predict_samples(&model, &store, &data.valid, 256)?;
        let val = MetricsReport::evaluate(&val_pred, &val_labels)?;
        let mean = acc.means();
        let rec = EpochRecord {
            epoch,
            total: mean[0],
            l1_m: mean[1],
            weighted_t: mean[2],
            weighted_a: mean[3],
            weighted_v: mean[4],
            cpc: mean[5],
            cpc_mt: mean[6],
            cpc_ma: mean[7],
            cpc_mv: mean[8],
            label_task: mean[9],
            gap_t: state.mean_gap(Modality::Text),
            gap_a: state.mean_gap(Modality::Audio),
            gap_v: state.mean_gap(Modality::Visual),
            val_mae: val.mae,
            val_corr: val.corr,
            val_acc2_nonneg: val.acc2_nonneg,
            val_acc2_posneg: val.acc2_posneg,
            val_f1_nonneg: val.f1_nonneg,
            val_f1_posneg: val.f1_posneg,
        };
        if !rec.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch} log record: {rec:?}")));
        }
        log::info!(
            "epoch {epoch}: loss {:.4} l1 {:.4} cpc {:.4} val mae {:.4} corr {:.4}",
            rec.total,
            rec.l1_m,
            rec.cpc,
            rec.val_mae,
            rec.val_corr
        );
        log.records.push(rec);
        if best.as_ref().is_none_or(|b| val.mae < b.0) {
            best = Some((val.mae, epoch, store.clone()));
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch");
    let test_pred = predict_samples(&model, &params, &data.test, 256)?;
    let test = MetricsReport::evaluate(&test_pred, &labels(&data.test))?;
    let baseline_mae = mean_predictor_mae(train, &data.test);
    Ok(TrainOutcome {
        model,
        params,
        best_epoch,
        log,
        labels: state,
        test,
        baseline_mae,
    })
}
