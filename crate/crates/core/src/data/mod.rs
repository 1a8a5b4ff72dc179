//! Tabular datasets: ingestion, standardization, stratified splitting,
//! seeded batching, subgroup construction and a synthetic generator.

mod csv_io;
mod subgroups;
mod synth;

pub use csv_io::{load_csv, write_csv};
pub use subgroups::{build_subgroups, Subgroup, SubgroupFilter, SubgroupSet, SubgroupSpec};
pub use synth::{synthesize, synthesize_with_regions, SynthConfig, SYNTH_COLUMNS};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Features `X` (n × d), binary labels `Y` and binary sensitive attribute `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<u8>,
    sensitive: Vec<u8>,
    column_names: Vec<String>,
    label_name: String,
    sensitive_name: String,
    label_mapping: Option<[String; 2]>,
    sensitive_mapping: Option<[String; 2]>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<u8>,
        sensitive: Vec<u8>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::Config("dataset has no rows".into()));
        }
        if labels.len() != n || sensitive.len() != n {
            return Err(Error::Usage(format!(
                "{} feature rows, {} labels, {} sensitive values",
                n,
                labels.len(),
                sensitive.len()
            )));
        }
        if column_names.len() != features.ncols() {
            return Err(Error::Usage(format!(
                "{} column names for {} feature columns",
                column_names.len(),
                features.ncols()
            )));
        }
        if labels.iter().chain(&sensitive).any(|&v| v > 1) {
            return Err(Error::Usage("labels and sensitive values must be 0 or 1".into()));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            sensitive,
            column_names,
            label_name: "y".into(),
            sensitive_name: "s".into(),
            label_mapping: None,
            sensitive_mapping: None,
        })
    }

    pub fn with_target_names(mut self, label: impl Into<String>, sensitive: impl Into<String>) -> Self {
        self.label_name = label.into();
        self.sensitive_name = sensitive.into();
        self
    }

    pub fn with_mappings(mut self, label: Option<[String; 2]>, sensitive: Option<[String; 2]>) -> Self {
        self.label_mapping = label;
        self.sensitive_mapping = sensitive;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sensitive(&self) -> &[u8] {
        &self.sensitive
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn sensitive_name(&self) -> &str {
        &self.sensitive_name
    }

    /// Original label values mapped to 0 and 1, when the column was not already 0/1.
    pub fn label_mapping(&self) -> Option<&[String; 2]> {
        self.label_mapping.as_ref()
    }

    pub fn sensitive_mapping(&self) -> Option<&[String; 2]> {
        self.sensitive_mapping.as_ref()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Result<ndarray::ArrayView1<'_, f64>> {
        let idx = self
            .column_index(name)
            .ok_or_else(|| Error::Config(format!("unknown column '{name}'")))?;
        Ok(self.features.column(idx))
    }

    pub fn has_both_groups(&self) -> bool {
        has_both(&self.sensitive)
    }

    /// Feature rows at `indices`, in order.
    pub fn rows(&self, indices: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), indices)
    }

    /// A new dataset made of the rows at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            sensitive: indices.iter().map(|&i| self.sensitive[i]).collect(),
            column_names: self.column_names.clone(),
            label_name: self.label_name.clone(),
            sensitive_name: self.sensitive_name.clone(),
            label_mapping: self.label_mapping.clone(),
            sensitive_mapping: self.sensitive_mapping.clone(),
        }
    }

    fn with_features(&self, features: Array2<f64>) -> Dataset {
        Dataset {
            features,
            ..self.clone()
        }
    }
}

pub(crate) fn has_both(sensitive: &[u8]) -> bool {
    sensitive.contains(&0) && sensitive.contains(&1)
}

/// Per-column affine transform fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    /// Population std; `0` marks a constant column that is centered only.
    pub stds: Vec<f64>,
}

/// Columns whose std falls below this are only centered.
pub const CONSTANT_COLUMN_STD: f64 = 1e-12;

impl Standardizer {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.len() < 2 {
            return Err(Error::Usage("standardization needs at least two rows".into()));
        }
        let n = ds.len() as f64;
        let mut means = Vec::with_capacity(ds.n_features());
        let mut stds = Vec::with_capacity(ds.n_features());
        for col in ds.features.columns() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            means.push(mean);
            stds.push(if std < CONSTANT_COLUMN_STD { 0.0 } else { std });
        }
        Ok(Self {
            columns: ds.column_names.clone(),
            means,
            stds,
        })
    }

    /// The identity transform for a schema (used when features are already scaled).
    pub fn identity(columns: &[String]) -> Self {
        Self {
            columns: columns.to_vec(),
            means: vec![0.0; columns.len()],
            stds: vec![1.0; columns.len()],
        }
    }

    pub fn check_schema(&self, ds: &Dataset) -> Result<()> {
        if ds.column_names != self.columns {
            let missing: Vec<&str> = self
                .columns
                .iter()
                .filter(|c| !ds.column_names.contains(c))
                .map(String::as_str)
                .collect();
            let extra: Vec<&str> = ds
                .column_names
                .iter()
                .filter(|c| !self.columns.contains(c))
                .map(String::as_str)
                .collect();
            return Err(Error::Config(format!(
                "feature schema mismatch: expected [{}], got [{}] (missing: [{}], unexpected: [{}])",
                self.columns.join(","),
                ds.column_names.join(","),
                missing.join(","),
                extra.join(",")
            )));
        }
        Ok(())
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        self.check_schema(ds)?;
        let mut x = ds.features.clone();
        for (j, mut col) in x.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            if s > 0.0 {
                col.mapv_inplace(|v| (v - m) / s);
            } else {
                col.mapv_inplace(|v| v - m);
            }
        }
        Ok(ds.with_features(x))
    }
}

/// Fits a [`Standardizer`] on `ds` and applies it.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, Standardizer)> {
    let st = Standardizer::fit(ds)?;
    let out = st.apply(ds)?;
    Ok((out, st))
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Stratified shuffle split on the four `(Y, S)` cells.
///
/// Every cell sends `floor` or `ceil` of `test_fraction · |cell|` samples to
/// the test side; the total is `round(test_fraction · n)`, with leftover
/// samples assigned to the cells with the largest remainders.
pub fn split(ds: &Dataset, test_fraction: f64, rng: &mut RngState) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Usage(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let n = ds.len();
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); 4];
    for i in 0..n {
        cells[(ds.labels[i] * 2 + ds.sensitive[i]) as usize].push(i);
    }
    let mut warnings = Vec::new();
    for (c, members) in cells.iter().enumerate() {
        if members.is_empty() {
            warnings.push(format!("(y={}, s={}) cell is empty", c / 2, c % 2));
        }
    }
    for cell in &mut cells {
        cell.shuffle(rng);
    }

    let target = (test_fraction * n as f64).round() as usize;
    let mut take: Vec<usize> = cells
        .iter()
        .map(|c| (test_fraction * c.len() as f64).floor() as usize)
        .collect();
    let mut order: Vec<usize> = (0..4).filter(|&c| !cells[c].is_empty()).collect();
    order.shuffle(rng);
    // stable sort keeps the shuffled order among equal remainders
    order.sort_by(|&a, &b| {
        let ra = test_fraction * cells[a].len() as f64 - take[a] as f64;
        let rb = test_fraction * cells[b].len() as f64 - take[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut assigned: usize = take.iter().sum();
    for &c in &order {
        if assigned >= target {
            break;
        }
        if take[c] < cells[c].len() && (take[c] as f64) < test_fraction * cells[c].len() as f64 {
            take[c] += 1;
            assigned += 1;
        }
    }

    let mut test_indices = Vec::new();
    let mut train_indices = Vec::new();
    for (c, members) in cells.iter().enumerate() {
        test_indices.extend_from_slice(&members[..take[c]]);
        train_indices.extend_from_slice(&members[take[c]..]);
    }
    if test_indices.is_empty() || train_indices.is_empty() {
        return Err(Error::Usage(format!(
            "split of {n} rows at fraction {test_fraction} leaves one side empty"
        )));
    }
    train_indices.shuffle(rng);
    test_indices.shuffle(rng);
    Ok(Split {
        train: ds.subset(&train_indices),
        test: ds.subset(&test_indices),
        train_indices,
        test_indices,
        warnings,
    })
}

/// Row indices of one mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn features(&self, ds: &Dataset) -> Array2<f64> {
        ds.rows(&self.indices)
    }

    pub fn labels(&self, ds: &Dataset) -> Vec<u8> {
        self.indices.iter().map(|&i| ds.labels[i]).collect()
    }

    pub fn sensitive(&self, ds: &Dataset) -> Vec<u8> {
        self.indices.iter().map(|&i| ds.sensitive[i]).collect()
    }
}

/// One epoch of mini-batches over a fresh random permutation.
///
/// A short final batch is kept when it has at least two samples and both
/// sensitive groups; otherwise it is merged into the previous batch.
pub fn iterate_batches(ds: &Dataset, batch_size: usize, rng: &mut RngState) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::Usage("batch size must be at least 2".into()));
    }
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    perm.shuffle(rng);
    let mut batches: Vec<Batch> = perm
        .chunks(batch_size)
        .map(|c| Batch { indices: c.to_vec() })
        .collect();
    if batches.len() > 1 {
        let last = batches.last().expect("non-empty");
        let sens: Vec<u8> = last.sensitive(ds);
        if last.len() < batch_size && (last.len() < 2 || !has_both(&sens)) {
            let tail = batches.pop().expect("non-empty");
            batches
                .last_mut()
                .expect("at least one batch left")
                .indices
                .extend(tail.indices);
        }
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn toy(n: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * (j + 1)) as f64);
        let y = (0..n).map(|i| (i % 2) as u8).collect();
        let s = (0..n).map(|i| ((i / 2) % 2) as u8).collect();
        Dataset::new(x, y, s, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn dataset_validation() {
        let x = array![[1.0], [2.0]];
        assert!(Dataset::new(x.clone(), vec![0, 2], vec![0, 1], vec!["a".into()]).is_err());
        assert!(Dataset::new(x.clone(), vec![0], vec![0, 1], vec!["a".into()]).is_err());
        assert!(Dataset::new(array![[f64::NAN], [1.0]], vec![0, 1], vec![0, 1], vec!["a".into()]).is_err());
        assert!(Dataset::new(x, vec![0, 1], vec![0, 1], vec!["a".into()]).is_ok());
    }

    #[test]
    fn standardize_rules() {
        let x = array![[0.0, 3.0], [10.0, 3.0]];
        let ds = Dataset::new(x, vec![0, 1], vec![0, 1], vec!["a".into(), "c".into()]).unwrap();
        let (out, st) = standardize(&ds).unwrap();
        assert_eq!(out.features().column(0).to_vec(), vec![-1.0, 1.0]);
        assert_eq!(out.features().column(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(st.stds, vec![5.0, 0.0]);

        let (again, _) = standardize(&out).unwrap();
        for (a, b) in again.features().iter().zip(out.features()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardizer_schema_mismatch_names_columns() {
        let ds = toy(4);
        let st = Standardizer::fit(&ds).unwrap();
        let other = Dataset::new(Array2::zeros((2, 2)), vec![0, 1], vec![0, 1], vec!["a".into(), "z".into()]).unwrap();
        let err = st.apply(&other).unwrap_err().to_string();
        assert!(err.contains("missing: [b]") && err.contains("unexpected: [z]"), "{err}");
    }

    #[test]
    fn split_balanced_hundred() {
        let ds = toy(100);
        let sp = split(&ds, 0.2, &mut RngState::new(3)).unwrap();
        assert_eq!(sp.test.len(), 20);
        assert_eq!(sp.train.len(), 80);
        for c in 0..4u8 {
            let in_cell = |d: &Dataset| {
                (0..d.len())
                    .filter(|&i| d.labels()[i] * 2 + d.sensitive()[i] == c)
                    .count()
            };
            let total = in_cell(&ds);
            let t = in_cell(&sp.test) as f64;
            assert!((t - 0.2 * total as f64).abs() <= 1.0);
        }
        let mut all: Vec<usize> = sp.train_indices.iter().chain(&sp.test_indices).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic() {
        let ds = toy(50);
        let a = split(&ds, 0.3, &mut RngState::new(9)).unwrap();
        let b = split(&ds, 0.3, &mut RngState::new(9)).unwrap();
        assert_eq!(a.test_indices, b.test_indices);
        assert_eq!(a.train_indices, b.train_indices);
    }

    #[test]
    fn split_two_rows_two_strata() {
        let ds = Dataset::new(array![[0.0], [1.0]], vec![0, 1], vec![0, 1], vec!["a".into()]).unwrap();
        for seed in 0..10 {
            let sp = split(&ds, 0.5, &mut RngState::new(seed)).unwrap();
            assert_eq!((sp.train.len(), sp.test.len()), (1, 1));
        }
    }

    #[test]
    fn split_warns_on_empty_cell() {
        let x = Array2::zeros((6, 1));
        let ds = Dataset::new(x, vec![0, 0, 0, 1, 1, 1], vec![0, 1, 0, 1, 1, 1], vec!["a".into()]).unwrap();
        let sp = split(&ds, 0.5, &mut RngState::new(1)).unwrap();
        assert_eq!(sp.warnings.len(), 1);
    }

    #[test]
    fn batches_partition_and_merge() {
        // sensitive alternates so a short tail of 2 holds both groups
        let x = Array2::zeros((10, 1));
        let s: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let ds = Dataset::new(x, vec![0; 10], s, vec!["a".into()]).unwrap();
        for seed in 0..20 {
            let bs = iterate_batches(&ds, 4, &mut RngState::new(seed)).unwrap();
            let sizes: Vec<usize> = bs.iter().map(Batch::len).collect();
            let tail_has_both = bs.len() == 3 && has_both(&bs[2].sensitive(&ds));
            if tail_has_both {
                assert_eq!(sizes, vec![4, 4, 2]);
            } else {
                assert_eq!(sizes, vec![4, 6]);
            }
            let mut all: Vec<usize> = bs.iter().flat_map(|b| b.indices.clone()).collect();
            all.sort_unstable();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn batches_deterministic() {
        let ds = toy(37);
        let a = iterate_batches(&ds, 8, &mut RngState::new(5)).unwrap();
        let b = iterate_batches(&ds, 8, &mut RngState::new(5)).unwrap();
        assert_eq!(a, b);
        assert!(iterate_batches(&ds, 1, &mut RngState::new(5)).is_err());
    }
}
