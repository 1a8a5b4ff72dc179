use std::collections::{BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{evaluate_predictions, RunReport};
use crate::data::{build_subgroups, standardize, Dataset, Standardizer, SubgroupSpec};
use crate::error::{Error, Result};
use crate::rng::{hash_str, mix_seed};
use crate::trainers::{train, Algorithm, TrainConfig};

/// `n` evenly spaced values on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub lambdas: Vec<f64>,
    pub taus: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    /// Everything except algorithm, λ, τ and seed.
    pub base: TrainConfig,
}

impl SweepSpec {
    /// 20 values of λ on `[0, 5]` and 10 of τ on `[0.001, 1]`.
    pub fn with_default_grids(algorithms: Vec<Algorithm>, seeds: Vec<u64>, base: TrainConfig) -> Self {
        Self {
            lambdas: linspace(0.0, 5.0, 20),
            taus: linspace(0.001, 1.0, 10),
            algorithms,
            seeds,
            base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("lambda grid", self.lambdas.is_empty()),
            ("tau grid", self.taus.is_empty()),
            ("algorithm list", self.algorithms.is_empty()),
            ("seed list", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(Error::Config(format!("{name} is empty")));
            }
        }
        for &l in &self.lambdas {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda {l} must be nonnegative and finite")));
            }
        }
        for &t in &self.taus {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("tau {t} must be nonnegative and finite")));
            }
        }
        self.base.resolve().map(|_| ())
    }

    /// One cell per distinct (algorithm, relevant hyperparameters, seed).
    /// Axes an algorithm ignores are collapsed, so a biased model is trained
    /// once per seed rather than once per grid point.
    pub fn cells(&self) -> Result<Vec<SweepCell>> {
        self.validate()?;
        let mut seen = HashSet::new();
        let mut cells = Vec::new();
        for &algorithm in &self.algorithms {
            let lambdas: &[f64] = if algorithm.uses_lambda() { &self.lambdas } else { &self.lambdas[..1] };
            let taus: &[f64] = if algorithm.uses_tau() { &self.taus } else { &self.taus[..1] };
            for &lambda in lambdas {
                for &tau in taus {
                    for &seed in &self.seeds {
                        let mut id = algorithm.name().to_string();
                        if algorithm.uses_lambda() {
                            id.push_str(&format!("|lambda={lambda}"));
                        }
                        if algorithm.uses_tau() {
                            id.push_str(&format!("|tau={tau}"));
                        }
                        id.push_str(&format!("|seed={seed}"));
                        if !seen.insert(id.clone()) {
                            continue;
                        }
                        let mut config = self.base.clone();
                        config.algorithm = algorithm;
                        config.lambda_g = if algorithm.uses_lambda() { lambda } else { 0.0 };
                        config.tau = if algorithm.uses_tau() { tau } else { self.base.tau };
                        config.seed = mix_seed(seed, hash_str(&id));
                        cells.push(SweepCell {
                            id,
                            base_seed: seed,
                            config,
                        });
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub id: String,
    pub base_seed: u64,
    /// Fully specified configuration, seed already derived from the id.
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// One line of sweep output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub cell_id: String,
    pub base_seed: u64,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_time_s: f64,
    pub preprocessing: Standardizer,
    pub subgroup_spec: SubgroupSpec,
    #[serde(flatten)]
    pub report: Option<RunReport>,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Worker threads; 1 runs cells in order on the calling thread.
    pub threads: usize,
    /// Append-only JSONL output; existing successful cells are skipped.
    pub out: Option<PathBuf>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { threads: 1, out: None }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub planned: usize,
    pub skipped: usize,
    pub failed: usize,
    /// Records produced by this invocation, in completion order.
    pub records: Vec<ExperimentRecord>,
}

/// Reads every record of a JSONL file.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            row: i + 1,
            column: "record".into(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn completed_ids(path: &Path) -> Result<BTreeSet<String>> {
    if !path.exists() {
        return Ok(BTreeSet::new());
    }
    Ok(read_records(path)?
        .into_iter()
        .filter(|r| r.status == CellStatus::Ok)
        .map(|r| r.cell_id)
        .collect())
}

/// Trains and evaluates every cell. Training data is standardized once and
/// the same transform is applied to the test set; subgroups come from the
/// raw test columns.
pub fn run_sweep(
    spec: &SweepSpec,
    train_raw: &Dataset,
    test_raw: &Dataset,
    subgroups: &SubgroupSpec,
    options: &SweepOptions,
) -> Result<SweepOutcome> {
    let cells = spec.cells()?;
    let planned = cells.len();
    log::info!("sweep: {planned} cells");
    let set = build_subgroups(test_raw, subgroups)?;
    let (train_set, standardizer) = standardize(train_raw)?;
    standardizer.check_schema(test_raw)?;
    let test = standardizer.apply(test_raw)?;

    let done = match &options.out {
        Some(p) => completed_ids(p)?,
        None => BTreeSet::new(),
    };
    let todo: Vec<SweepCell> = cells.into_iter().filter(|c| !done.contains(&c.id)).collect();
    let skipped = planned - todo.len();
    if skipped > 0 {
        log::info!("sweep: {skipped} cells already complete");
    }

    let writer = match &options.out {
        Some(p) => Some(Mutex::new(
            OpenOptions::new().create(true).append(true).open(p).map_err(|e| Error::io(p, e))?,
        )),
        None => None,
    };
    let records = Mutex::new(Vec::with_capacity(todo.len()));

    let run_cell = |cell: &SweepCell| -> Result<()> {
        let start = Instant::now();
        let result = train(&train_set, &cell.config).and_then(|model| {
            let pred = model.predict(test.features().view())?;
            let mut report = evaluate_predictions(&model, &test, &pred, &set.subgroups)?;
            report.warnings.extend(set.warnings.iter().cloned());
            Ok(report)
        });
        let (status, error, report) = match result {
            Ok(r) => (CellStatus::Ok, None, Some(r)),
            Err(e) => {
                log::error!("cell {} failed: {e}", cell.id);
                (CellStatus::Failed, Some(e.to_string()), None)
            }
        };
        let record = ExperimentRecord {
            cell_id: cell.id.clone(),
            base_seed: cell.base_seed,
            status,
            error,
            wall_time_s: start.elapsed().as_secs_f64(),
            preprocessing: standardizer.clone(),
            subgroup_spec: subgroups.clone(),
            report,
        };
        if let Some(w) = &writer {
            let line = serde_json::to_string(&record)?;
            let mut file = w.lock().expect("writer lock");
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|e| Error::io(options.out.clone().unwrap_or_default(), e))?;
        }
        records.lock().expect("records lock").push(record);
        Ok(())
    };

    if options.threads <= 1 {
        todo.iter().try_for_each(run_cell)?;
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| todo.par_iter().try_for_each(run_cell))?;
    }

    let records = records.into_inner().expect("records lock");
    let failed = records.iter().filter(|r| r.status == CellStatus::Failed).count();
    Ok(SweepOutcome {
        planned,
        skipped,
        failed,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(lambdas: usize, taus: usize, algorithms: Vec<Algorithm>) -> SweepSpec {
        SweepSpec {
            lambdas: linspace(0.0, 5.0, lambdas),
            taus: linspace(0.001, 1.0, taus),
            algorithms,
            seeds: vec![0],
            base: TrainConfig::default(),
        }
    }

    #[test]
    fn default_grids() {
        let s = SweepSpec::with_default_grids(vec![Algorithm::Road], vec![0], TrainConfig::default());
        assert_eq!(s.lambdas.len(), 20);
        assert_eq!(s.lambdas[19], 5.0);
        assert_eq!(s.taus.len(), 10);
        assert_eq!(s.taus[0], 0.001);
        assert_eq!(s.taus[9], 1.0);
        assert_eq!(s.cells().unwrap().len(), 200);
    }

    #[test]
    fn irrelevant_axes_collapse() {
        let s = spec(3, 4, vec![Algorithm::Biased, Algorithm::GlobalFair, Algorithm::Broad]);
        let cells = s.cells().unwrap();
        assert_eq!(cells.len(), 1 + 3 + 12);
        assert!(cells.iter().all(|c| c.config.algorithm != Algorithm::Biased || c.config.lambda_g == 0.0));
    }

    #[test]
    fn cell_seeds_depend_on_id_only() {
        let a = spec(2, 2, vec![Algorithm::Road]).cells().unwrap();
        let b = spec(2, 2, vec![Algorithm::Road]).cells().unwrap();
        assert_eq!(a, b);
        let seeds: HashSet<u64> = a.iter().map(|c| c.config.seed).collect();
        assert_eq!(seeds.len(), a.len());
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(matches!(spec(0, 1, vec![Algorithm::Road]).cells(), Err(Error::Config(_))));
        let mut s = spec(1, 1, vec![Algorithm::Road]);
        s.seeds.clear();
        assert!(s.validate().is_err());
    }
}
