//! Synthetic tabular data with a planted, region-dependent label bias.
//!
//! Regions are consecutive 10-unit bands of an `age` column. Inside region
//! `k` the sensitive attribute is independent of every other feature, and
//! `P(Y=1 | x, s) = clamp(π(x) + c_k·(s − ½), 0, 1)` with `π` uniform on
//! `[0, 1]`. Clamping costs `c²/4` of disparity, so the shift is chosen as
//! `c = 2·(1 − √(1 − |δ|))·sign(δ)`, which makes the expected label
//! disparity inside region `k` exactly `δ_k = base_bias + per_region_bias[k]`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngState;

pub const AGE_ORIGIN: f64 = 20.0;
pub const REGION_WIDTH: f64 = 10.0;
/// Noise on the `proxy` column, which reads `s + N(0, PROXY_NOISE²)`.
pub const PROXY_NOISE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub n_subregions: usize,
    /// Label disparity shared by every region.
    pub base_bias: f64,
    /// Extra disparity per region; empty means all zero.
    #[serde(default)]
    pub per_region_bias: Vec<f64>,
    /// Shifts the age band of every region by `5·drift_shift` and tilts the
    /// region mixture toward higher (positive) or lower (negative) regions.
    #[serde(default)]
    pub drift_shift: f64,
}

impl SynthConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            n_subregions: 4,
            base_bias: 0.0,
            per_region_bias: Vec::new(),
            drift_shift: 0.0,
        }
    }

    /// Planted label disparity of every region.
    pub fn region_bias(&self) -> Vec<f64> {
        (0..self.n_subregions)
            .map(|k| self.base_bias + self.per_region_bias.get(k).copied().unwrap_or(0.0))
            .collect()
    }

    /// `P(S = 1)` in region `k` for the given gender.
    pub fn sensitive_rate(&self, k: usize, gender: u8) -> f64 {
        let frac = k as f64 / (self.n_subregions - 1) as f64;
        0.3 + 0.4 * frac + if gender == 1 { 0.1 } else { -0.1 }
    }

    /// Age band `[lo, hi)` of region `k`.
    pub fn region_bounds(&self, k: usize) -> (f64, f64) {
        let lo = AGE_ORIGIN + REGION_WIDTH * k as f64 + 5.0 * self.drift_shift;
        (lo, lo + REGION_WIDTH)
    }

    fn mixture(&self) -> Vec<f64> {
        let k = self.n_subregions;
        let raw: Vec<f64> = (0..k)
            .map(|i| (self.drift_shift * (i as f64 / (k - 1) as f64 - 0.5)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Column order of generated datasets.
pub const SYNTH_COLUMNS: [&str; 5] = ["age", "gender", "x1", "x2", "proxy"];

/// Draws a dataset; the extra `region` of every row is returned alongside.
pub fn synthesize_with_regions(cfg: &SynthConfig) -> Result<(Dataset, Vec<usize>)> {
    if cfg.n < 200 {
        return Err(Error::Config(format!("synthetic n = {} must be at least 200", cfg.n)));
    }
    if cfg.n_subregions < 2 {
        return Err(Error::Config("need at least two subregions".into()));
    }
    if !cfg.per_region_bias.is_empty() && cfg.per_region_bias.len() != cfg.n_subregions {
        return Err(Error::Config(format!(
            "per_region_bias has {} entries for {} regions",
            cfg.per_region_bias.len(),
            cfg.n_subregions
        )));
    }
    let mut rng = RngState::new(cfg.seed);
    let mixture = cfg.mixture();
    let deltas = cfg.region_bias();
    if let Some(d) = deltas.iter().find(|d| d.abs() > 1.0) {
        return Err(Error::Config(format!("region bias {d} outside [-1, 1]")));
    }
    let shifts: Vec<f64> = deltas.iter().map(|&d| clamped_shift(d)).collect();
    let mut x = Array2::zeros((cfg.n, SYNTH_COLUMNS.len()));
    let mut labels = Vec::with_capacity(cfg.n);
    let mut sensitive = Vec::with_capacity(cfg.n);
    let mut regions = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let u: f64 = rng.random();
        let mut k = 0;
        let mut acc = mixture[0];
        while u >= acc && k + 1 < cfg.n_subregions {
            k += 1;
            acc += mixture[k];
        }
        let (lo, hi) = cfg.region_bounds(k);
        let age = rng.random_range(lo..hi);
        let gender = u8::from(rng.random_bool(0.5));
        let s = u8::from(rng.random_bool(cfg.sensitive_rate(k, gender)));
        let x1: f64 = StandardNormal.sample(&mut rng);
        let x2: f64 = StandardNormal.sample(&mut rng);
        let noise: f64 = StandardNormal.sample(&mut rng);
        let proxy = f64::from(s) + PROXY_NOISE * noise;
        let t = (1.2 * x1 - 0.8 * x2) / (1.2f64 * 1.2 + 0.8 * 0.8).sqrt();
        let pi = normal_cdf(t);
        let p = (pi + shifts[k] * (f64::from(s) - 0.5)).clamp(0.0, 1.0);
        let y = u8::from(rng.random::<f64>() < p);

        x[[i, 0]] = age;
        x[[i, 1]] = f64::from(gender);
        x[[i, 2]] = x1;
        x[[i, 3]] = x2;
        x[[i, 4]] = proxy;
        labels.push(y);
        sensitive.push(s);
        regions.push(k);
    }
    let ds = Dataset::new(x, labels, sensitive, SYNTH_COLUMNS.iter().map(|c| (*c).to_owned()).collect())?
        .with_target_names("y", "s");
    Ok((ds, regions))
}

/// Draws a synthetic dataset from `cfg`.
pub fn synthesize(cfg: &SynthConfig) -> Result<Dataset> {
    synthesize_with_regions(cfg).map(|(d, _)| d)
}

/// Shift `c` whose clamped effect on a uniform base rate is exactly `delta`.
fn clamped_shift(delta: f64) -> f64 {
    2.0 * (1.0 - (1.0 - delta.abs()).sqrt()) * delta.signum()
}

/// Standard normal CDF (Abramowitz–Stegun 7.1.26 on erf, |error| < 1.5e-7).
fn normal_cdf(z: f64) -> f64 {
    let x = z.abs() / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t * (0.254_829_592
        + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let erf = 1.0 - poly * (-x * x).exp();
    if z >= 0.0 {
        0.5 * (1.0 + erf)
    } else {
        0.5 * (1.0 - erf)
    }
}
