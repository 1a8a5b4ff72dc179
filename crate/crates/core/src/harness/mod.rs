//! Experiment orchestration: fitting with preprocessing, evaluation reports,
//! hyperparameter sweeps, Pareto tables, drift and subgroup-definition
//! studies, and CSV exports for plotting.

mod analysis;
mod plotdata;
mod report;
mod sweep;

pub use analysis::{
    drift_eval, pareto_report, subgroup_sensitivity, subgroup_sensitivity_from_predictions, table1_variants,
    CrossVariant, NamedSet, ParetoRow, ParetoTable, SensitivityRow,
};
pub use plotdata::{emit_plotdata, PlotKind};
pub use report::{evaluate, evaluate_predictions, predict_raw, prepare_features, RHistogram, RunReport};
pub use sweep::{
    read_records, run_sweep, CellStatus, ExperimentRecord, SweepCell, SweepOptions, SweepOutcome, SweepSpec,
};

use crate::data::{standardize, Dataset};
use crate::error::Result;
use crate::trainers::{train, TrainConfig, TrainedModel};

/// Standardizes raw training data, trains, and stores the preprocessing in
/// the model so evaluation can reapply it.
pub fn fit_model(raw_train: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    let (prepared, standardizer) = standardize(raw_train)?;
    let mut model = train(&prepared, cfg)?;
    model.standardizer = Some(standardizer);
    Ok(model)
}
