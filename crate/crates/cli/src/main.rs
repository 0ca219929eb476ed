mod config;
mod error;

use clap::{Parser, Subcommand};
use config::{resolve_out_dir, RunConfig};
use error::CliError;
use selfmi::ablation::run_ablation;
use selfmi::checkpoint;
use selfmi::data::{labels, load_features, mean_predictor_mae, SplitKind};
use selfmi::estimate::{estimate_mi, MiEstimateConfig};
use selfmi::gradsuite::run_suite;
use selfmi::model::predict_samples;
use selfmi::report::{self, line_chart, MetricsRow, Series};
use selfmi::training::run_training_with;
use selfmi::{MetricsReport, OpKind};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "selfmi", version, about = "Self-MI multimodal sentiment regression toolkit")]
struct Cli {
    /// Output directory; the SELFMI_OUT_DIR environment variable takes
    /// precedence.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its checkpoint, log, metrics and plot.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the task-subset and CPC-term ablation grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate the MI of correlated Gaussian pairs with an InfoNCE critic.
    EstimateMi {
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of every op and the full objective.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb this op's backward rule (suite self-test).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Evaluate a checkpoint on every split of a feature file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn load_config(path: &Path, out_dir: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if std::env::var_os(config::OUT_DIR_ENV).is_none() {
        if let Some(d) = out_dir {
            cfg.output_dir = d.to_path_buf();
        }
    }
    Ok(cfg)
}

fn print_metrics(label: &str, m: &MetricsReport) {
    println!(
        "{label}: MAE {:.4}  Corr {:.4}  Acc2 {:.4}/{:.4}  F1 {:.4}/{:.4}  (n={})",
        m.mae, m.corr, m.acc2_nonneg, m.acc2_posneg, m.f1_nonneg, m.f1_posneg, m.n_eval
    );
}

fn cmd_train(config: &Path, out_dir: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = load_config(config, out_dir)?;
    let data = cfg.load_data()?;
    let model_cfg = cfg.model_config(data.dims)?;
    let out = run_training_with(&cfg.train, model_cfg, &data)?;

    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    checkpoint::save(&dir.join("checkpoint.txt"), &out.model, &out.params, Some(&cfg.train))?;
    report::save_train_log(&dir.join("train_log.csv"), &out.log)?;
    let valid_pred = predict_samples(&out.model, &out.params, &data.valid, 256)?;
    let valid = MetricsReport::evaluate(&valid_pred, &labels(&data.valid))?;
    report::save_rows(
        &dir.join("metrics.csv"),
        &[
            MetricsRow::new("valid", &valid, Some(mean_predictor_mae(&data.train, &data.valid))),
            MetricsRow::new("test", &out.test, Some(out.baseline_mae)),
        ],
    )?;
    report::save_rows(&dir.join("ulabels.csv"), &report::ulabel_rows(&out.labels))?;
    report::save_chart(&dir.join("loss.svg"), &report::loss_chart(&out.log))?;

    println!("best epoch {} of {}", out.best_epoch, cfg.train.epochs);
    print_metrics("test", &out.test);
    println!("mean-predictor test MAE {:.4}", out.baseline_mae);
    println!("artifacts written to {}", dir.display());
    Ok(())
}

fn cmd_ablate(config: &Path, out_dir: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = load_config(config, out_dir)?;
    let data = cfg.load_data()?;
    let model_cfg = cfg.model_config(data.dims)?;
    let out = run_ablation(&cfg.train, model_cfg, &data)?;
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    report::save_rows(&dir.join("ablation_tasks.csv"), &out.task_rows)?;
    report::save_rows(&dir.join("ablation_cpc.csv"), &out.cpc_rows)?;
    println!("mean-predictor test MAE {:.4}", out.baseline_mae);
    for r in out.task_rows.iter().chain(&out.cpc_rows) {
        match (r.mae, r.corr) {
            (Some(mae), Some(corr)) => println!("{:<10} MAE {mae:.4}  Corr {corr:.4}", r.setting),
            _ => println!("{:<10} {}", r.setting, r.status),
        }
    }
    println!("artifacts written to {}", dir.display());
    let failed = out.task_rows.iter().chain(&out.cpc_rows).filter(|r| !r.is_ok()).count();
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} ablation rows failed")));
    }
    Ok(())
}

fn cmd_estimate_mi(cfg: MiEstimateConfig, out_dir: Option<&Path>) -> Result<(), CliError> {
    if !(0.0..=0.99).contains(&cfg.rho) {
        return Err(CliError::Config(format!("--rho {} outside [0, 0.99]", cfg.rho)));
    }
    if cfg.dim == 0 || cfg.batch == 0 {
        return Err(CliError::Config("--dim and --batch must be positive".into()));
    }
    let est = estimate_mi(&cfg)?;
    let dir = resolve_out_dir(out_dir);
    ensure_dir(&dir)?;
    report::save_rows(&dir.join("mi_estimate.csv"), &est.trajectory)?;
    let steps: Vec<(f64, f64)> = est.trajectory.iter().map(|r| (r.step as f64, r.bound)).collect();
    let flat = |v: f64| est.trajectory.iter().map(|r| (r.step as f64, v)).collect::<Vec<_>>();
    let svg = line_chart(
        "InfoNCE bound",
        "step",
        "nats",
        &[
            Series::new("ln N - loss", steps),
            Series::new("analytic MI", flat(est.analytic_mi)),
            Series::new("ln N", flat(est.ln_n)),
        ],
    );
    report::save_chart(&dir.join("mi_estimate.svg"), &svg)?;
    let max = est.trajectory.iter().map(|r| r.bound).fold(f64::NEG_INFINITY, f64::max);
    println!("final bound {:.6} nats", est.final_bound);
    println!("analytic MI {:.6} nats", est.analytic_mi);
    println!("ln N {:.6} nats", est.ln_n);
    println!("max step bound {max:.6} nats");
    println!("artifacts written to {}", dir.display());
    Ok(())
}

fn cmd_gradcheck(seed: u64, corrupt: Option<&str>) -> Result<(), CliError> {
    let corrupt = corrupt
        .map(|name| {
            OpKind::from_name(name)
                .filter(|k| *k != OpKind::Leaf)
                .ok_or_else(|| CliError::Config(format!("unknown op {name:?}")))
        })
        .transpose()?;
    let report = run_suite(seed, corrupt)?;
    for c in &report.cases {
        let r = &c.report;
        if r.passed {
            println!(
                "PASS {:<18} max rel err {:.3e} ({} coords)",
                c.name, r.max_rel_err, r.checked
            );
        } else {
            let w = r.worst.as_ref().expect("failure has a worst coordinate");
            println!(
                "FAIL {:<18} input {} coord {}: analytic {:.9e} numeric {:.9e} rel err {:.3e}",
                c.name, w.input, w.coord, w.analytic, w.numeric, w.rel_err
            );
        }
    }
    if report.passed() {
        println!(
            "all {} cases passed, max rel err {:.3e}",
            report.cases.len(),
            report.max_rel_err()
        );
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        Err(CliError::Numerical(format!(
            "gradient check failed for: {}",
            names.join(", ")
        )))
    }
}

fn cmd_eval(checkpoint_path: &Path, data_path: &Path, out_dir: Option<&Path>) -> Result<(), CliError> {
    let ck = checkpoint::load(checkpoint_path)?;
    let data = load_features(data_path)?;
    if data.dims != ck.model.config.dims {
        return Err(CliError::Config(format!(
            "feature dims {:?} do not match checkpoint dims {:?}",
            data.dims, ck.model.config.dims
        )));
    }
    let mut rows = Vec::new();
    for kind in [SplitKind::Train, SplitKind::Valid, SplitKind::Test] {
        let split = data.split(kind);
        let pred = predict_samples(&ck.model, &ck.params, split, 256)?;
        let m = MetricsReport::evaluate(&pred, &labels(split))?;
        print_metrics(kind.name(), &m);
        rows.push(MetricsRow::new(
            kind.name(),
            &m,
            Some(mean_predictor_mae(&data.train, split)),
        ));
    }
    let dir = resolve_out_dir(out_dir);
    ensure_dir(&dir)?;
    report::save_rows(&dir.join("eval_metrics.csv"), &rows)?;
    println!("artifacts written to {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out_dir = cli.out_dir.as_deref();
    match cli.command {
        Command::Train { config } => cmd_train(&config, out_dir),
        Command::Ablate { config } => cmd_ablate(&config, out_dir),
        Command::EstimateMi {
            rho,
            dim,
            batch,
            steps,
            seed,
        } => cmd_estimate_mi(MiEstimateConfig::new(rho, dim, batch, steps, seed), out_dir),
        Command::Gradcheck { seed, corrupt } => cmd_gradcheck(seed, corrupt.as_deref()),
        Command::Eval { checkpoint, data } => cmd_eval(&checkpoint, &data, out_dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
