use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{build_subgroups, Dataset, Subgroup, SubgroupSpec};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, eo_gap, global_di, local_di, worst_k_di, Predictions};
use crate::trainers::{TrainConfig, TrainedModel};

/// Histogram bin width for the weight diagnostics.
pub const R_BIN_WIDTH: f64 = 0.25;
/// Weights at or above this value share the last histogram bin.
pub const R_HIST_MAX: f64 = 5.0;

/// Weight counts per bin, split by sensitive group. Bin `i` covers
/// `[i·w, (i+1)·w)`; the last bin also takes everything above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RHistogram {
    pub bin_width: f64,
    pub counts_s0: Vec<usize>,
    pub counts_s1: Vec<usize>,
}

impl RHistogram {
    pub fn from_weights(weights: &[f64], sensitive: &[u8]) -> Self {
        let bins = (R_HIST_MAX / R_BIN_WIDTH).round() as usize;
        let mut counts = [vec![0usize; bins], vec![0usize; bins]];
        for (&r, &s) in weights.iter().zip(sensitive) {
            let i = ((r / R_BIN_WIDTH).floor().max(0.0) as usize).min(bins - 1);
            counts[usize::from(s != 0)][i] += 1;
        }
        let [counts_s0, counts_s1] = counts;
        Self {
            bin_width: R_BIN_WIDTH,
            counts_s0,
            counts_s1,
        }
    }

    pub fn lower_edge(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width
    }
}

/// Test-set metrics for one trained model, with the configuration echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub accuracy: f64,
    pub global_di: f64,
    /// `None` when some (label, group) cell is empty.
    pub eo_gap: Option<f64>,
    pub worst_1_di: Option<f64>,
    pub worst_3_di: Option<f64>,
    pub n_eval: usize,
    pub local_di: BTreeMap<String, f64>,
    pub subgroup_sizes: BTreeMap<String, usize>,
    pub mean_r: Option<BTreeMap<String, f64>>,
    pub r_histogram: Option<RHistogram>,
    pub warnings: Vec<String>,
    #[serde(flatten)]
    pub config: TrainConfig,
}

impl RunReport {
    /// Metric by name, for table building.
    pub fn metric(&self, name: &str) -> Result<f64> {
        let v = match name {
            "accuracy" => Some(self.accuracy),
            "global_di" => Some(self.global_di),
            "eo_gap" => self.eo_gap,
            "worst_1_di" => self.worst_1_di,
            "worst_3_di" => self.worst_3_di,
            _ => return Err(Error::Config(format!("unknown metric '{name}'"))),
        };
        v.ok_or_else(|| Error::Config(format!("metric '{name}' is undefined in this report")))
    }
}

/// Applies the model's stored preprocessing to raw data.
pub fn prepare_features(model: &TrainedModel, raw: &Dataset) -> Result<Dataset> {
    match &model.standardizer {
        Some(st) => {
            st.check_schema(raw)?;
            st.apply(raw)
        }
        None => {
            if raw.column_names() != model.feature_names.as_slice() {
                return Err(Error::Config(format!(
                    "feature columns {:?} do not match the model's {:?}",
                    raw.column_names(),
                    model.feature_names
                )));
            }
            Ok(raw.clone())
        }
    }
}

/// Predictions of `model` on raw (unstandardized) data.
pub fn predict_raw(model: &TrainedModel, raw: &Dataset) -> Result<(Dataset, Predictions)> {
    let prepared = prepare_features(model, raw)?;
    let pred = model.predict(prepared.features().view())?;
    Ok((prepared, pred))
}

/// Evaluates on raw data; subgroups are built from raw column values.
pub fn evaluate(model: &TrainedModel, raw: &Dataset, spec: &SubgroupSpec) -> Result<RunReport> {
    let set = build_subgroups(raw, spec)?;
    let (prepared, pred) = predict_raw(model, raw)?;
    let mut report = evaluate_predictions(model, &prepared, &pred, &set.subgroups)?;
    report.warnings.extend(set.warnings);
    Ok(report)
}

/// Builds a report from precomputed predictions on prepared data.
pub fn evaluate_predictions(
    model: &TrainedModel,
    prepared: &Dataset,
    pred: &Predictions,
    subgroups: &[Subgroup],
) -> Result<RunReport> {
    let labels = prepared.labels();
    let sensitive = prepared.sensitive();
    let mut warnings = model.warnings.clone();
    let eo = match eo_gap(pred, labels, sensitive) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(msg)) => {
            warnings.push(format!("eo_gap undefined: {msg}"));
            None
        }
        Err(e) => return Err(e),
    };
    let local = local_di(pred, sensitive, subgroups)?;
    let (worst_1_di, worst_3_di) = if local.is_empty() {
        (None, None)
    } else {
        (Some(worst_k_di(&local, 1)?), Some(worst_k_di(&local, 3)?))
    };
    let subgroup_sizes = subgroups.iter().map(|g| (g.id.clone(), g.len())).collect();
    let weights = model.assign_weights(prepared, pred)?;
    let mean_r = weights.as_ref().map(|w| {
        subgroups
            .iter()
            .map(|g| {
                let m = g.members.iter().map(|&i| w[i]).sum::<f64>() / g.len().max(1) as f64;
                (g.id.clone(), m)
            })
            .collect()
    });
    let r_histogram = weights.as_ref().map(|w| RHistogram::from_weights(w, sensitive));
    Ok(RunReport {
        accuracy: accuracy(pred, labels)?,
        global_di: global_di(pred, sensitive)?,
        eo_gap: eo,
        worst_1_di,
        worst_3_di,
        n_eval: prepared.len(),
        local_di: local,
        subgroup_sizes,
        mean_r,
        r_histogram,
        warnings,
        config: model.config.clone(),
    })
}
