use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

/// Reads a headered, comma-separated file.
///
/// `label_column` and `sensitive_column` must hold two values; `0`/`1` are
/// used as-is, anything else is mapped to 0/1 by order of first appearance.
/// Every other column becomes a numeric feature, in header order.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, sensitive_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label_column, sensitive_column)
}

pub(crate) fn read_csv<R: std::io::Read>(reader: R, label_column: &str, sensitive_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column '{name}' not found in header [{}]", headers.join(","))))
    };
    let label_idx = find(label_column)?;
    let sens_idx = find(sensitive_column)?;
    if label_idx == sens_idx {
        return Err(Error::Config("label and sensitive columns must differ".into()));
    }
    let feature_idx: Vec<usize> = (0..headers.len()).filter(|&i| i != label_idx && i != sens_idx).collect();

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    let mut raw_sensitive = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for &j in &feature_idx {
            let cell = &rec[j];
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: headers[j].clone(),
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: headers[j].clone(),
                    message: format!("'{cell}' is not finite"),
                });
            }
            values.push(v);
        }
        raw_labels.push(rec[label_idx].to_owned());
        raw_sensitive.push(rec[sens_idx].to_owned());
    }
    let n = raw_labels.len();
    if n == 0 {
        return Err(Error::Config("csv has no data rows".into()));
    }
    let (labels, label_map) = binarize(&raw_labels, label_column)?;
    let (sensitive, sens_map) = binarize(&raw_sensitive, sensitive_column)?;
    let features = Array2::from_shape_vec((n, feature_idx.len()), values)
        .map_err(|e| Error::Usage(e.to_string()))?;
    let names = feature_idx.iter().map(|&j| headers[j].clone()).collect();
    Ok(Dataset::new(features, labels, sensitive, names)?
        .with_target_names(label_column, sensitive_column)
        .with_mappings(label_map, sens_map))
}

fn binarize(raw: &[String], column: &str) -> Result<(Vec<u8>, Option<[String; 2]>)> {
    let numeric01 = raw.iter().all(|v| matches!(v.parse::<f64>(), Ok(x) if x == 0.0 || x == 1.0));
    if numeric01 {
        let out = raw.iter().map(|v| u8::from(v.parse::<f64>().unwrap_or(0.0) == 1.0)).collect();
        return Ok((out, None));
    }
    let mut seen: Vec<&str> = Vec::with_capacity(2);
    let mut out = Vec::with_capacity(raw.len());
    for v in raw {
        let code = match seen.iter().position(|s| *s == v) {
            Some(c) => c,
            None => {
                if seen.len() == 2 {
                    return Err(Error::Unsupported(format!(
                        "column '{column}' has more than two distinct values ('{}', '{}', '{v}'); only binary attributes are supported",
                        seen[0], seen[1]
                    )));
                }
                seen.push(v);
                seen.len() - 1
            }
        };
        out.push(code as u8);
    }
    let second = seen.get(1).map_or_else(String::new, |s| (*s).to_owned());
    Ok((out, Some([seen[0].to_owned(), second])))
}

/// Writes features, then the label and sensitive columns, with a header row.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = ds.column_names().iter().map(String::as_str).collect();
    header.push(ds.label_name());
    header.push(ds.sensitive_name());
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features().row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.labels()[i].to_string());
        rec.push(ds.sensitive()[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_accounting() {
        let text = "age,gender,race,y\n25,0,1,1\n40,1,0,0\n33,1,1,0\n";
        let ds = read_csv(text.as_bytes(), "y", "race").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.column_names(), ["age", "gender"]);
        assert_eq!(ds.sensitive(), [1, 0, 1]);
        assert_eq!(ds.labels(), [1, 0, 0]);
        assert!(ds.sensitive_mapping().is_none());
    }

    #[test]
    fn string_sensitive_mapped_by_first_appearance() {
        let text = "x,s,y\n1,B,0\n2,A,1\n3,B,1\n";
        let ds = read_csv(text.as_bytes(), "y", "s").unwrap();
        assert_eq!(ds.sensitive(), [0, 1, 0]);
        assert_eq!(ds.sensitive_mapping().unwrap(), &["B".to_string(), "A".to_string()]);
    }

    #[test]
    fn third_category_unsupported() {
        let text = "x,s,y\n1,A,0\n2,B,1\n3,C,1\n";
        assert!(matches!(read_csv(text.as_bytes(), "y", "s"), Err(Error::Unsupported(_))));
    }

    #[test]
    fn missing_column_and_bad_cell() {
        let text = "x,s,y\n1,0,0\n";
        assert!(matches!(read_csv(text.as_bytes(), "label", "s"), Err(Error::Config(_))));
        let text = "x,s,y\n1,0,0\nabc,1,1\n";
        match read_csv(text.as_bytes(), "y", "s") {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let text = "age,gender,y,race\n25.5,0,1,1\n40,1,0,0\n";
        let ds = read_csv(text.as_bytes(), "y", "race").unwrap();
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path, "y", "race").unwrap();
        assert_eq!(back, ds);
    }
}
