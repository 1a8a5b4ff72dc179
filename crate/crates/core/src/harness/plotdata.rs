use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::analysis::pareto_report;
use super::report::RunReport;
use super::sweep::{CellStatus, ExperimentRecord};
use crate::error::{Error, Result};

/// CSV layouts:
///
/// * `local_di_bars`: `subgroup_id,n,di,mean_r` (mean_r empty for unweighted models)
/// * `r_histogram`: `bin_lower,bin_upper,count_s0,count_s1` (last bin open-ended)
/// * `pareto_xy`: `worst_1_di,accuracy,tag`, the front sorted by worst_1_di
/// * `tau_curve`: `algorithm,tau,lambda_quartile,lambda_min,lambda_max,worst_1_di,n_runs`,
///   worst_1_di averaged over the runs in each cell
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    LocalDiBars,
    RHistogram,
    ParetoXy,
    TauCurve,
}

impl PlotKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "local_di_bars" => Ok(PlotKind::LocalDiBars),
            "r_histogram" => Ok(PlotKind::RHistogram),
            "pareto_xy" => Ok(PlotKind::ParetoXy),
            "tau_curve" => Ok(PlotKind::TauCurve),
            _ => Err(Error::Config(format!(
                "unknown plot kind '{s}' (local_di_bars, r_histogram, pareto_xy, tau_curve)"
            ))),
        }
    }
}

fn ok_reports(records: &[ExperimentRecord]) -> Vec<(&str, &RunReport)> {
    records
        .iter()
        .filter(|r| r.status == CellStatus::Ok)
        .filter_map(|r| r.report.as_ref().map(|rep| (r.cell_id.as_str(), rep)))
        .collect()
}

fn single<'a>(records: &'a [ExperimentRecord], kind: &str) -> Result<&'a RunReport> {
    match ok_reports(records)[..] {
        [(_, rep)] => Ok(rep),
        ref v => Err(Error::Config(format!("{kind} needs exactly one successful record, got {}", v.len()))),
    }
}

/// Writes plot data for `kind` to `path` and returns the number of data rows.
/// `di_budget` filters the Pareto front (`None` keeps every record).
pub fn emit_plotdata(
    kind: PlotKind,
    records: &[ExperimentRecord],
    di_budget: Option<f64>,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut n = 0;
    match kind {
        PlotKind::LocalDiBars => {
            let rep = single(records, "local_di_bars")?;
            w.write_record(["subgroup_id", "n", "di", "mean_r"])?;
            for (id, di) in &rep.local_di {
                let size = rep.subgroup_sizes.get(id).copied().unwrap_or(0);
                let mean_r = rep
                    .mean_r
                    .as_ref()
                    .and_then(|m| m.get(id))
                    .map(|v| v.to_string())
                    .unwrap_or_default();
                w.write_record([id.clone(), size.to_string(), di.to_string(), mean_r])?;
                n += 1;
            }
        }
        PlotKind::RHistogram => {
            let rep = single(records, "r_histogram")?;
            let hist = rep
                .r_histogram
                .as_ref()
                .ok_or_else(|| Error::Config("record has no weight histogram".into()))?;
            w.write_record(["bin_lower", "bin_upper", "count_s0", "count_s1"])?;
            let bins = hist.counts_s0.len();
            for i in 0..bins {
                let upper = if i + 1 == bins { String::from("inf") } else { hist.lower_edge(i + 1).to_string() };
                w.write_record([
                    hist.lower_edge(i).to_string(),
                    upper,
                    hist.counts_s0[i].to_string(),
                    hist.counts_s1[i].to_string(),
                ])?;
                n += 1;
            }
        }
        PlotKind::ParetoXy => {
            let table = pareto_report(records, di_budget.unwrap_or(f64::INFINITY), "worst_1_di", "accuracy")?;
            w.write_record(["worst_1_di", "accuracy", "tag"])?;
            for row in &table.rows {
                w.write_record([row.x.to_string(), row.y.to_string(), row.cell_id.clone()])?;
                n += 1;
            }
        }
        PlotKind::TauCurve => {
            w.write_record([
                "algorithm",
                "tau",
                "lambda_quartile",
                "lambda_min",
                "lambda_max",
                "worst_1_di",
                "n_runs",
            ])?;
            for row in tau_curve(records)? {
                w.write_record([
                    row.algorithm,
                    row.tau.to_string(),
                    row.quartile.to_string(),
                    row.lambda_min.to_string(),
                    row.lambda_max.to_string(),
                    row.worst_1_di.to_string(),
                    row.n_runs.to_string(),
                ])?;
                n += 1;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(n)
}

struct TauRow {
    algorithm: String,
    tau: f64,
    quartile: usize,
    lambda_min: f64,
    lambda_max: f64,
    worst_1_di: f64,
    n_runs: usize,
}

/// Groups reweighted runs by (algorithm, τ, quartile of the distinct λ values).
fn tau_curve(records: &[ExperimentRecord]) -> Result<Vec<TauRow>> {
    let runs: Vec<&RunReport> = ok_reports(records)
        .into_iter()
        .map(|(_, r)| r)
        .filter(|r| r.config.algorithm.uses_tau())
        .collect();
    if runs.is_empty() {
        return Err(Error::Config("tau_curve needs successful reweighted runs".into()));
    }
    let mut lambdas: Vec<f64> = runs.iter().map(|r| r.config.lambda_g).collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let quartile = |l: f64| {
        let rank = lambdas.iter().position(|&v| v == l).expect("lambda listed");
        rank * 4 / lambdas.len()
    };
    // (algorithm, tau bits, quartile) -> (sum, count, lambda range)
    let mut cells: BTreeMap<(String, u64, usize), (f64, usize, f64, f64)> = BTreeMap::new();
    for r in runs {
        let worst = r.worst_1_di.ok_or_else(|| Error::Config("a run has no worst_1_di".into()))?;
        let key = (r.config.algorithm.name().to_string(), r.config.tau.to_bits(), quartile(r.config.lambda_g));
        let e = cells.entry(key).or_insert((0.0, 0, f64::INFINITY, f64::NEG_INFINITY));
        e.0 += worst;
        e.1 += 1;
        e.2 = e.2.min(r.config.lambda_g);
        e.3 = e.3.max(r.config.lambda_g);
    }
    let mut rows: Vec<TauRow> = cells
        .into_iter()
        .map(|((algorithm, tau, quartile), (sum, count, lo, hi))| TauRow {
            algorithm,
            tau: f64::from_bits(tau),
            quartile,
            lambda_min: lo,
            lambda_max: hi,
            worst_1_di: sum / count as f64,
            n_runs: count,
        })
        .collect();
    rows.sort_by(|a, b| {
        a.algorithm
            .cmp(&b.algorithm)
            .then(a.tau.total_cmp(&b.tau))
            .then(a.quartile.cmp(&b.quartile))
    });
    Ok(rows)
}
