//! Task-subset and CPC-term ablation grid.

use crate::cpc::CpcTerms;
use crate::data::{mean_predictor_mae, DatasetSplits};
use crate::error::Result;
use crate::layers::Modality;
use crate::model::{ModelConfig, TaskSet};
use crate::report::AblationRow;
use crate::training::{run_training_with, TrainConfig, TrainLog};
use rayon::prelude::*;

pub const TASK_SETTINGS: [&str; 8] = ["M", "M,T", "M,A", "M,V", "M,T,A", "M,T,V", "M,V,A", "M,T,V,A"];
pub const CPC_SETTINGS: [&str; 4] = ["full", "w/o mt", "w/o ma", "w/o mv"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRow {
    pub setting: &'static str,
    pub tasks: TaskSet,
    pub cpc_terms: CpcTerms,
    /// Row position; the run seed is the base seed plus this index.
    pub index: usize,
}

/// Eight task-subset rows followed by four CPC rows on the full task set.
pub fn grid() -> Vec<GridRow> {
    let tasks = TASK_SETTINGS.iter().map(|&s| GridRow {
        setting: s,
        tasks: s.parse().expect("static setting"),
        cpc_terms: CpcTerms::FULL,
        index: 0,
    });
    let cpc = CPC_SETTINGS.iter().map(|&s| GridRow {
        setting: s,
        tasks: TaskSet::ALL,
        cpc_terms: match s {
            "w/o mt" => CpcTerms::without(Modality::Text),
            "w/o ma" => CpcTerms::without(Modality::Audio),
            "w/o mv" => CpcTerms::without(Modality::Visual),
            _ => CpcTerms::FULL,
        },
        index: 0,
    });
    tasks
        .chain(cpc)
        .enumerate()
        .map(|(i, r)| GridRow { index: i, ..r })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub task_rows: Vec<AblationRow>,
    pub cpc_rows: Vec<AblationRow>,
    /// Training logs in grid order; `None` for failed rows.
    pub logs: Vec<Option<TrainLog>>,
    /// Test MAE of the constant training-mean predictor.
    pub baseline_mae: f64,
}

/// Runs every grid row in parallel. Failed runs become rows with a
/// `failed` status; the rest of the grid still completes.
pub fn run_ablation(base: &TrainConfig, model: ModelConfig, data: &DatasetSplits) -> Result<AblationOutcome> {
    base.validate()?;
    data.validate()?;
    let rows = grid();
    let results: Vec<(AblationRow, Option<TrainLog>)> = rows
        .par_iter()
        .map(|row| {
            let cfg = TrainConfig {
                seed: base.seed.wrapping_add(row.index as u64),
                tasks: row.tasks,
                cpc_terms: row.cpc_terms,
                ..*base
            };
            match run_training_with(&cfg, model, data) {
                Ok(out) => (AblationRow::ok(row.setting, &out.test), Some(out.log)),
                Err(e) => {
                    log::warn!("ablation row {} failed: {e}", row.setting);
                    (AblationRow::failed(row.setting, &e), None)
                }
            }
        })
        .collect();
    let (mut table, logs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let cpc_rows = table.split_off(TASK_SETTINGS.len());
    Ok(AblationOutcome {
        task_rows: table,
        cpc_rows,
        logs,
        baseline_mae: mean_predictor_mae(&data.train, &data.test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let g = grid();
        assert_eq!(g.len(), 12);
        assert_eq!(
            g.iter().map(|r| r.index).collect::<Vec<_>>(),
            (0..12).collect::<Vec<_>>()
        );
        assert_eq!(g[0].tasks, TaskSet::MULTIMODAL_ONLY);
        assert_eq!(g[6].tasks.to_string(), "M,A,V");
        assert!(g[8..].iter().all(|r| r.tasks == TaskSet::ALL));
        assert_eq!(
            g[9].cpc_terms,
            CpcTerms {
                mt: false,
                ma: true,
                mv: true
            }
        );
        assert_eq!(
            g[11].cpc_terms,
            CpcTerms {
                mt: true,
                ma: true,
                mv: false
            }
        );
    }
}
