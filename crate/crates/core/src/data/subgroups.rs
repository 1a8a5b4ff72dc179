use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{has_both, Dataset};
use crate::error::{Error, Result};

/// Restricts subgroup construction to rows where `column == value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupFilter {
    pub column: String,
    pub value: f64,
}

/// How evaluation subgroups are carved out of a dataset.
///
/// Bins are half-open intervals `[k·w, (k+1)·w)` over the raw values of
/// `bin_column`, crossed with the exact values of every `cross_columns` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSpec {
    pub bin_column: String,
    pub bin_width: f64,
    #[serde(default)]
    pub cross_columns: Vec<String>,
    pub min_size: usize,
    #[serde(default)]
    pub filter: Option<SubgroupFilter>,
}

impl SubgroupSpec {
    pub fn new(bin_column: impl Into<String>, bin_width: f64, min_size: usize) -> Self {
        Self {
            bin_column: bin_column.into(),
            bin_width,
            cross_columns: Vec::new(),
            min_size,
            filter: None,
        }
    }

    pub fn cross(mut self, column: impl Into<String>) -> Self {
        self.cross_columns.push(column.into());
        self
    }

    pub fn filtered(mut self, column: impl Into<String>, value: f64) -> Self {
        self.filter = Some(SubgroupFilter {
            column: column.into(),
            value,
        });
        self
    }

    fn describe(&self) -> String {
        let mut s = format!(
            "bin '{}' width {}, min_size {}",
            self.bin_column, self.bin_width, self.min_size
        );
        if !self.cross_columns.is_empty() {
            s.push_str(&format!(", crossed with [{}]", self.cross_columns.join(",")));
        }
        if let Some(f) = &self.filter {
            s.push_str(&format!(", restricted to {}={}", f.column, f.value));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgroup {
    pub id: String,
    pub members: Vec<usize>,
}

impl Subgroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupSet {
    pub subgroups: Vec<Subgroup>,
    pub warnings: Vec<String>,
}

/// Builds disjoint subgroups; drops those under `min_size` and those holding a
/// single sensitive value (where a local disparity is undefined).
pub fn build_subgroups(ds: &Dataset, spec: &SubgroupSpec) -> Result<SubgroupSet> {
    if !(spec.bin_width > 0.0 && spec.bin_width.is_finite()) {
        return Err(Error::Config(format!("bin width {} must be positive", spec.bin_width)));
    }
    if spec.min_size == 0 {
        return Err(Error::Config("min_size must be positive".into()));
    }
    let mut referenced: Vec<&str> = vec![spec.bin_column.as_str()];
    referenced.extend(spec.cross_columns.iter().map(String::as_str));
    if let Some(f) = &spec.filter {
        referenced.push(&f.column);
    }
    for name in &referenced {
        if *name == ds.sensitive_name() || *name == ds.label_name() {
            return Err(Error::Config(format!(
                "subgroup column '{name}' is the sensitive or label column"
            )));
        }
    }
    let bin = ds.column(&spec.bin_column)?;
    let crosses = spec
        .cross_columns
        .iter()
        .map(|c| ds.column(c))
        .collect::<Result<Vec<_>>>()?;
    let filter = match &spec.filter {
        Some(f) => Some((ds.column(&f.column)?, f.value)),
        None => None,
    };

    let mut groups: HashMap<(i64, Vec<u64>), Vec<usize>> = HashMap::new();
    for i in 0..ds.len() {
        if let Some((col, v)) = &filter {
            if col[i] != *v {
                continue;
            }
        }
        let k = (bin[i] / spec.bin_width).floor() as i64;
        let cross: Vec<u64> = crosses.iter().map(|c| c[i].to_bits()).collect();
        groups.entry((k, cross)).or_default().push(i);
    }

    let mut keys: Vec<(i64, Vec<u64>)> = groups.keys().cloned().collect();
    keys.sort_by(|a, b| {
        a.1.iter()
            .map(|v| f64::from_bits(*v))
            .zip(b.1.iter().map(|v| f64::from_bits(*v)))
            .map(|(x, y)| x.total_cmp(&y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });

    let mut subgroups = Vec::new();
    let mut warnings = Vec::new();
    let mut small = 0usize;
    for key in keys {
        let members = groups.remove(&key).expect("key from map");
        let id = subgroup_id(spec, &key);
        if members.len() < spec.min_size {
            small += 1;
            continue;
        }
        let sens: Vec<u8> = members.iter().map(|&i| ds.sensitive()[i]).collect();
        if !has_both(&sens) {
            warnings.push(format!(
                "subgroup {id} ({} members) has a single sensitive value and was dropped",
                members.len()
            ));
            continue;
        }
        subgroups.push(Subgroup { id, members });
    }
    if small > 0 {
        warnings.push(format!("{small} subgroups below min_size {} dropped", spec.min_size));
    }
    if subgroups.is_empty() {
        return Err(Error::Config(format!(
            "no subgroup survives the filters ({})",
            spec.describe()
        )));
    }
    Ok(SubgroupSet { subgroups, warnings })
}

fn subgroup_id(spec: &SubgroupSpec, key: &(i64, Vec<u64>)) -> String {
    let lo = key.0 as f64 * spec.bin_width;
    let hi = (key.0 + 1) as f64 * spec.bin_width;
    let mut id = format!("{}[{},{})", spec.bin_column, lo, hi);
    for (c, v) in spec.cross_columns.iter().zip(&key.1) {
        id.push_str(&format!("|{}={}", c, f64::from_bits(*v)));
    }
    if let Some(f) = &spec.filter {
        id.push_str(&format!("|{}={}", f.column, f.value));
    }
    id
}
