use serde::{Deserialize, Serialize};

use super::report::{evaluate, predict_raw, RunReport};
use super::sweep::{CellStatus, ExperimentRecord};
use crate::data::{build_subgroups, Dataset, SubgroupSpec};
use crate::error::{Error, Result};
use crate::metrics::{local_di, pareto_front, worst_k_di, ParetoPoint, Predictions};
use crate::trainers::TrainedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub cell_id: String,
    pub x: f64,
    pub y: f64,
    pub global_di: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoTable {
    pub x_metric: String,
    pub y_metric: String,
    pub constraint_di: f64,
    /// Records that passed the global-DI filter.
    pub eligible: usize,
    pub rows: Vec<ParetoRow>,
    pub warnings: Vec<String>,
}

/// Non-dominated successful records with `global_di ≤ constraint_di`,
/// minimizing `x_metric` and maximizing `y_metric`.
pub fn pareto_report(
    records: &[ExperimentRecord],
    constraint_di: f64,
    x_metric: &str,
    y_metric: &str,
) -> Result<ParetoTable> {
    let mut points = Vec::new();
    let mut global = Vec::new();
    for rec in records {
        let Some(report) = rec.report.as_ref().filter(|_| rec.status == CellStatus::Ok) else {
            continue;
        };
        if report.global_di > constraint_di {
            continue;
        }
        points.push(ParetoPoint {
            x: report.metric(x_metric)?,
            y: report.metric(y_metric)?,
            tag: rec.cell_id.clone(),
        });
        global.push((rec.cell_id.clone(), report.global_di));
    }
    let mut warnings = Vec::new();
    if points.is_empty() {
        let msg = format!("no record satisfies global DI <= {constraint_di}");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let rows = pareto_front(&points, |_| true)
        .into_iter()
        .map(|p| {
            let gd = global.iter().find(|(id, _)| *id == p.tag).map(|(_, g)| *g).unwrap_or(f64::NAN);
            ParetoRow {
                cell_id: p.tag,
                x: p.x,
                y: p.y,
                global_di: gd,
            }
        })
        .collect();
    Ok(ParetoTable {
        x_metric: x_metric.to_string(),
        y_metric: y_metric.to_string(),
        constraint_di,
        eligible: points.len(),
        rows,
        warnings,
    })
}

/// A named evaluation set with its own subgroup definition.
#[derive(Debug, Clone)]
pub struct NamedSet {
    pub name: String,
    pub data: Dataset,
    pub subgroups: SubgroupSpec,
}

/// One report per set, reusing the model's training-time preprocessing.
pub fn drift_eval(model: &TrainedModel, sets: &[NamedSet]) -> Result<Vec<(String, RunReport)>> {
    sets.iter()
        .map(|s| evaluate(model, &s.data, &s.subgroups).map(|r| (s.name.clone(), r)))
        .collect()
}

/// How a subgroup definition restricts or refines the binned column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CrossVariant {
    All,
    /// Keep only rows with `column == value`.
    Equals { column: String, value: f64 },
    /// Split every bin further by the values of `column`.
    Cross { column: String },
}

impl CrossVariant {
    pub fn label(&self) -> String {
        match self {
            CrossVariant::All => "all".into(),
            CrossVariant::Equals { column, value } => format!("{column}={value}"),
            CrossVariant::Cross { column } => format!("x{column}"),
        }
    }

    fn apply(&self, base: SubgroupSpec) -> SubgroupSpec {
        match self {
            CrossVariant::All => base,
            CrossVariant::Equals { column, value } => base.filtered(column.clone(), *value),
            CrossVariant::Cross { column } => base.cross(column.clone()),
        }
    }
}

/// The whole population, then each value of a binary column.
pub fn table1_variants(column: &str) -> Vec<CrossVariant> {
    vec![
        CrossVariant::All,
        CrossVariant::Equals {
            column: column.to_string(),
            value: 0.0,
        },
        CrossVariant::Equals {
            column: column.to_string(),
            value: 1.0,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub definition: usize,
    pub bin_width: f64,
    pub variant: String,
    pub n_subgroups: usize,
    /// `None` when the definition leaves no usable subgroup.
    pub worst_1_di: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Worst-1-DI under every (width, variant) definition, width-major.
pub fn subgroup_sensitivity(
    model: &TrainedModel,
    raw: &Dataset,
    bin_column: &str,
    widths: &[f64],
    variants: &[CrossVariant],
    min_size: usize,
) -> Result<Vec<SensitivityRow>> {
    let (_, pred) = predict_raw(model, raw)?;
    subgroup_sensitivity_from_predictions(&pred, raw, bin_column, widths, variants, min_size)
}

/// Re-aggregates fixed predictions under each subgroup definition.
pub fn subgroup_sensitivity_from_predictions(
    pred: &Predictions,
    raw: &Dataset,
    bin_column: &str,
    widths: &[f64],
    variants: &[CrossVariant],
    min_size: usize,
) -> Result<Vec<SensitivityRow>> {
    raw.column(bin_column)?;
    if pred.len() != raw.len() {
        return Err(Error::Usage(format!("{} predictions for {} rows", pred.len(), raw.len())));
    }
    if let Some(w) = widths.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Config(format!("bin width {w} must be positive")));
    }
    let mut rows = Vec::with_capacity(widths.len() * variants.len());
    for &width in widths {
        for variant in variants {
            let spec = variant.apply(SubgroupSpec::new(bin_column, width, min_size));
            let definition = rows.len();
            let row = match build_subgroups(raw, &spec) {
                Ok(set) => {
                    let local = local_di(pred, raw.sensitive(), &set.subgroups)?;
                    SensitivityRow {
                        definition,
                        bin_width: width,
                        variant: variant.label(),
                        n_subgroups: local.len(),
                        worst_1_di: Some(worst_k_di(&local, 1)?),
                        note: None,
                    }
                }
                Err(Error::Config(msg)) => SensitivityRow {
                    definition,
                    bin_width: width,
                    variant: variant.label(),
                    n_subgroups: 0,
                    worst_1_di: None,
                    note: Some(msg),
                },
                Err(e) => return Err(e),
            };
            rows.push(row);
        }
    }
    Ok(rows)
}
