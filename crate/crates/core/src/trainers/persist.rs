//! Plain-text model files.
//!
//! Layout, one item per line:
//!
//! ```text
//! locfair-model 1
//! config {json}
//! features [json]
//! standardizer {json} | none
//! warnings [json]
//! trace [json]
//! network predictor 3
//! layer 5 64 relu
//! w <in·out values, row-major>
//! b <out values>
//! ...
//! network adversary none
//! network ratio none
//! ```
//!
//! Numbers use Rust's shortest round-trip formatting, so a reload is exact.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::TrainedModel;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, DenseNetwork, LayerSpec};
use crate::ratio::RatioNetwork;

const MAGIC: &str = "locfair-model 1";

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        row: line,
        column: "model".into(),
        message: message.into(),
    }
}

fn write_network(out: &mut String, name: &str, net: Option<&DenseNetwork>) {
    let Some(net) = net else {
        let _ = writeln!(out, "network {name} none");
        return;
    };
    let _ = writeln!(out, "network {name} {}", net.layers().len());
    for layer in net.layers() {
        let spec = layer.spec;
        let _ = writeln!(out, "layer {} {} {}", spec.input_dim, spec.output_dim, spec.activation.name());
        out.push('w');
        for v in layer.weights.iter() {
            let _ = write!(out, " {v}");
        }
        out.push_str("\nb");
        for v in layer.bias.iter() {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l)
            }
            None => Err(bad(self.last + 1, "unexpected end of file")),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' ').or(if rest.is_empty() { Some("") } else { None }))
            .ok_or_else(|| bad(self.last, format!("expected '{key}'")))
    }
}

fn parse_values(line: usize, text: &str, expected: usize) -> Result<Vec<f64>> {
    let values = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| bad(line, format!("'{t}': {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(bad(line, format!("expected {expected} values, found {}", values.len())));
    }
    Ok(values)
}

fn read_network(lines: &mut Lines<'_>, name: &str) -> Result<Option<DenseNetwork>> {
    let header = lines.keyed("network")?;
    let (found, count) = header.split_once(' ').ok_or_else(|| bad(lines.last, "malformed network header"))?;
    if found != name {
        return Err(bad(lines.last, format!("expected network '{name}', found '{found}'")));
    }
    if count == "none" {
        return Ok(None);
    }
    let count: usize = count.parse().map_err(|_| bad(lines.last, "bad layer count"))?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let parts: Vec<&str> = lines.keyed("layer")?.split_whitespace().collect();
        let [input, output, act] = parts[..] else {
            return Err(bad(lines.last, "layer line needs input, output and activation"));
        };
        let input: usize = input.parse().map_err(|_| bad(lines.last, "bad input dim"))?;
        let output: usize = output.parse().map_err(|_| bad(lines.last, "bad output dim"))?;
        let act = Activation::parse(act).ok_or_else(|| bad(lines.last, format!("unknown activation '{act}'")))?;
        let w = parse_values(lines.last + 1, lines.keyed("w")?, input * output)?;
        let b = parse_values(lines.last + 1, lines.keyed("b")?, output)?;
        layers.push(DenseLayer {
            spec: LayerSpec::new(input, output, act),
            weights: Array2::from_shape_vec((input, output), w).expect("length checked"),
            bias: Array1::from(b),
        });
    }
    DenseNetwork::from_layers(layers).map(Some)
}

impl TrainedModel {
    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        let _ = writeln!(out, "config {}", serde_json::to_string(&self.config)?);
        let _ = writeln!(out, "features {}", serde_json::to_string(&self.feature_names)?);
        match &self.standardizer {
            Some(st) => {
                let _ = writeln!(out, "standardizer {}", serde_json::to_string(st)?);
            }
            None => out.push_str("standardizer none\n"),
        }
        let _ = writeln!(out, "warnings {}", serde_json::to_string(&self.warnings)?);
        let _ = writeln!(out, "trace {}", serde_json::to_string(&self.trace)?);
        write_network(&mut out, "predictor", Some(&self.predictor));
        write_network(&mut out, "adversary", self.adversary.as_ref());
        write_network(&mut out, "ratio", self.ratio_head.as_ref().map(|r| &r.head));
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
            last: 0,
        };
        if lines.next()? != MAGIC {
            return Err(bad(1, "not a model file"));
        }
        let config = serde_json::from_str(lines.keyed("config")?)?;
        let feature_names = serde_json::from_str(lines.keyed("features")?)?;
        let st = lines.keyed("standardizer")?;
        let standardizer = if st == "none" { None } else { Some(serde_json::from_str(st)?) };
        let warnings = serde_json::from_str(lines.keyed("warnings")?)?;
        let trace = serde_json::from_str(lines.keyed("trace")?)?;
        let predictor = read_network(&mut lines, "predictor")?
            .ok_or_else(|| bad(lines.last, "model file has no predictor"))?;
        let adversary = read_network(&mut lines, "adversary")?;
        let ratio_head = read_network(&mut lines, "ratio")?.map(RatioNetwork::from_head).transpose()?;
        Ok(Self {
            config,
            predictor,
            adversary,
            ratio_head,
            trace,
            warnings,
            feature_names,
            standardizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
