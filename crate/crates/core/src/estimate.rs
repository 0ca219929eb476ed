//! Standalone InfoNCE estimation of the mutual information between
//! correlated Gaussian vectors.

use crate::cpc::{infonce_loss, mi_lower_bound, scores_from_units, unit_normalize_rows};
use crate::error::{Error, Result};
use crate::layers::Mlp;
use crate::optim::{Adam, LearningRates};
use crate::params::{install_grads, ParamGroup, ParamStore, Session};
use crate::report::MiRow;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEstimateConfig {
    pub rho: f64,
    pub dim: usize,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub hidden: usize,
    pub embed: usize,
    /// Fresh batches averaged for the reported final bound.
    pub eval_batches: usize,
}

impl MiEstimateConfig {
    pub fn new(rho: f64, dim: usize, batch: usize, steps: usize, seed: u64) -> Self {
        Self {
            rho,
            dim,
            batch,
            steps,
            seed,
            lr: 3e-3,
            hidden: 32,
            embed: 16,
            eval_batches: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.99).contains(&self.rho) {
            return Err(Error::Validation(format!("rho {} outside [0, 0.99]", self.rho)));
        }
        if self.dim == 0 || self.batch == 0 || self.hidden == 0 || self.embed == 0 {
            return Err(Error::Validation("dim, batch and layer widths must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Validation(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiEstimate {
    /// Per-step bound on the batch used for that step's update.
    pub trajectory: Vec<MiRow>,
    /// Mean bound over fresh evaluation batches after training.
    pub final_bound: f64,
    pub analytic_mi: f64,
    pub ln_n: f64,
}

/// `-(d/2)·ln(1-ρ²)` nats for `d` independent coordinate pairs with
/// correlation `ρ`.
pub fn analytic_gaussian_mi(rho: f64, dim: usize) -> f64 {
    -(dim as f64) / 2.0 * (1.0 - rho * rho).ln()
}

/// `n` pairs with `y = ρ·x + sqrt(1-ρ²)·ε`.
pub fn correlated_pairs(rng: &mut ChaCha8Rng, n: usize, dim: usize, rho: f64) -> (Tensor, Tensor) {
    let s = (1.0 - rho * rho).sqrt();
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n * dim);
    for _ in 0..n * dim {
        let a: f64 = StandardNormal.sample(rng);
        let e: f64 = StandardNormal.sample(rng);
        x.push(a);
        y.push(rho * a + s * e);
    }
    (
        Tensor::new(vec![n, dim], x).expect("positive extents"),
        Tensor::new(vec![n, dim], y).expect("positive extents"),
    )
}

struct Critic {
    f: Mlp,
    g: Mlp,
}

fn batch_loss(sess: &mut Session<'_>, c: &Critic, x: Tensor, y: Tensor) -> Result<crate::tape::Var> {
    let x = sess.tape.constant(x);
    let y = sess.tape.constant(y);
    let fx = c.f.forward(sess, x)?;
    let gy = c.g.forward(sess, y)?;
    let ux = unit_normalize_rows(&mut sess.tape, fx)?;
    let uy = unit_normalize_rows(&mut sess.tape, gy)?;
    let s = scores_from_units(&mut sess.tape, ux, uy)?;
    infonce_loss(&mut sess.tape, s)
}

/// Trains two MLP encoders with cosine scores on a fresh batch per step.
pub fn estimate_mi(cfg: &MiEstimateConfig) -> Result<MiEstimate> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let dims = (cfg.dim, cfg.hidden, cfg.embed);
    let critic = Critic {
        f: Mlp::init(&mut store, "mi_f", ParamGroup::Fusion, dims, &mut rng),
        g: Mlp::init(&mut store, "mi_g", ParamGroup::Fusion, dims, &mut rng),
    };
    let mut opt = Adam::new(LearningRates::uniform(cfg.lr));
    let ln_n = (cfg.batch as f64).ln();
    let analytic_mi = analytic_gaussian_mi(cfg.rho, cfg.dim);
    let mut trajectory = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let (x, y) = correlated_pairs(&mut rng, cfg.batch, cfg.dim, cfg.rho);
        let mut sess = Session::new(&store, true);
        let loss = batch_loss(&mut sess, &critic, x, y)?;
        sess.tape.backward(loss)?;
        let l = sess.tape.value(loss).item();
        let grads = sess.gradients();
        drop(sess);
        install_grads(&mut store, grads);
        opt.step(&mut store)?;
        trajectory.push(MiRow {
            step,
            loss: l,
            bound: mi_lower_bound(l, cfg.batch),
            ln_n,
            analytic_mi,
        });
    }
    let mut total = 0.0;
    for _ in 0..cfg.eval_batches {
        let (x, y) = correlated_pairs(&mut rng, cfg.batch, cfg.dim, cfg.rho);
        let mut sess = Session::new(&store, false);
        let loss = batch_loss(&mut sess, &critic, x, y)?;
        total += mi_lower_bound(sess.tape.value(loss).item(), cfg.batch);
    }
    let final_bound = match (cfg.eval_batches, trajectory.last()) {
        (0, Some(r)) => r.bound,
        (0, None) => 0.0,
        (k, _) => total / k as f64,
    };
    Ok(MiEstimate {
        trajectory,
        final_bound,
        analytic_mi,
        ln_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_values() {
        assert!((analytic_gaussian_mi(0.9, 1) - 0.830366).abs() < 1e-6);
        assert_eq!(analytic_gaussian_mi(0.0, 5), 0.0);
        assert!((analytic_gaussian_mi(0.5, 4) - 2.0 * (4.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn pairs_have_the_requested_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = correlated_pairs(&mut rng, 20000, 1, 0.6);
        let c = crate::metrics::pearson(x.data(), y.data()).unwrap();
        assert!((c - 0.6).abs() < 0.02, "{c}");
    }

    #[test]
    fn short_run_respects_the_ceiling() {
        let cfg = MiEstimateConfig::new(0.9, 2, 16, 30, 1);
        let est = estimate_mi(&cfg).unwrap();
        assert_eq!(est.trajectory.len(), 30);
        assert!(est.trajectory.iter().all(|r| r.bound <= r.ln_n + 1e-9));
        assert!(est.final_bound <= est.ln_n + 1e-9);
        assert_eq!(estimate_mi(&cfg).unwrap(), est);
    }

    #[test]
    fn rejects_out_of_range_rho() {
        assert!(estimate_mi(&MiEstimateConfig::new(0.995, 1, 8, 1, 0)).is_err());
        assert!(estimate_mi(&MiEstimateConfig::new(-0.1, 1, 8, 1, 0)).is_err());
    }
}
