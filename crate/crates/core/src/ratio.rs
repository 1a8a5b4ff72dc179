//! Importance weights `r(x, s)` over a batch.
//!
//! Weights are exponentials normalized to mean one inside each pool: one pool
//! per sensitive value (`Conditional`) or the whole batch (`Global`). The
//! parametric path exponentiates the output of a ratio head `h(x, s)`; the
//! closed-form path uses `exp(−L_S/τ)`, the maximizer of the entropy-penalized
//! inner problem under the same mean-one constraints.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{mlp_specs, Activation, DenseNetwork};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    /// Mean one within each sensitive group.
    Conditional,
    /// Mean one over the whole batch.
    Global,
}

impl NormalizationMode {
    pub fn name(self) -> &'static str {
        match self {
            NormalizationMode::Conditional => "conditional",
            NormalizationMode::Global => "global",
        }
    }
}

/// Per-sample nonnegative weights with the normalization that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioAssignment {
    pub weights: Vec<f64>,
    pub mode: NormalizationMode,
    /// Temperature of the closed-form path; `None` for the parametric one.
    pub temperature: Option<f64>,
}

/// Member indices of every normalization pool.
fn pools(sensitive: &[u8], mode: NormalizationMode) -> Result<Vec<Vec<usize>>> {
    if sensitive.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    match mode {
        NormalizationMode::Global => Ok(vec![(0..sensitive.len()).collect()]),
        NormalizationMode::Conditional => {
            let mut groups = vec![Vec::new(), Vec::new()];
            for (i, &s) in sensitive.iter().enumerate() {
                match s {
                    0 | 1 => groups[s as usize].push(i),
                    _ => return Err(Error::Usage(format!("sensitive value {s} is not binary"))),
                }
            }
            if groups.iter().any(Vec::is_empty) {
                return Err(Error::Usage(
                    "conditional normalization needs both sensitive groups in the batch".into(),
                ));
            }
            Ok(groups)
        }
    }
}

/// `r_i = exp(a_i − m) / mean_pool(exp(a_j − m))`, `m` the pool maximum.
fn normalize_pools(raw: &[f64], sensitive: &[u8], mode: NormalizationMode) -> Result<Vec<f64>> {
    if raw.len() != sensitive.len() {
        return Err(Error::Usage(format!(
            "{} scores for {} sensitive values",
            raw.len(),
            sensitive.len()
        )));
    }
    if !raw.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite ratio score".into()));
    }
    let mut out = vec![0.0; raw.len()];
    for pool in pools(sensitive, mode)? {
        let max = pool.iter().map(|&i| raw[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &i in &pool {
            let e = (raw[i] - max).exp();
            out[i] = e;
            sum += e;
        }
        let mean = sum / pool.len() as f64;
        for &i in &pool {
            out[i] /= mean;
        }
    }
    Ok(out)
}

pub fn normalize_conditional(raw_scores: &[f64], sensitive: &[u8]) -> Result<RatioAssignment> {
    normalize(raw_scores, sensitive, NormalizationMode::Conditional)
}

pub fn normalize_global(raw_scores: &[f64], sensitive: &[u8]) -> Result<RatioAssignment> {
    normalize(raw_scores, sensitive, NormalizationMode::Global)
}

pub fn normalize(raw_scores: &[f64], sensitive: &[u8], mode: NormalizationMode) -> Result<RatioAssignment> {
    Ok(RatioAssignment {
        weights: normalize_pools(raw_scores, sensitive, mode)?,
        mode,
        temperature: None,
    })
}

/// Pulls `∂J/∂r` back through the normalization to `∂J/∂a` (the raw scores).
///
/// Within a pool of size `m`: `∂J/∂a_i = r_i·(u_i − (1/m)·Σ_j r_j·u_j)` with
/// `u = ∂J/∂r`. Terms with `r_i = 0` contribute nothing even if `u_i` is infinite.
pub fn normalization_vjp(
    weights: &[f64],
    sensitive: &[u8],
    mode: NormalizationMode,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    if weights.len() != sensitive.len() || upstream.len() != weights.len() {
        return Err(Error::Usage("normalization gradient length mismatch".into()));
    }
    let ru = |i: usize| if weights[i] == 0.0 { 0.0 } else { weights[i] * upstream[i] };
    let mut out = vec![0.0; weights.len()];
    for pool in pools(sensitive, mode)? {
        let mean_ru = pool.iter().map(|&i| ru(i)).sum::<f64>() / pool.len() as f64;
        for &i in &pool {
            out[i] = ru(i) - weights[i] * mean_ru;
        }
    }
    Ok(out)
}

/// Closed-form weights `exp(−L_i/τ)` normalized per pool.
pub fn broad_weights(
    adversary_losses: &[f64],
    sensitive: &[u8],
    tau: f64,
    mode: NormalizationMode,
) -> Result<RatioAssignment> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("temperature must be positive and finite, got {tau}")));
    }
    if !adversary_losses.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite adversary loss".into()));
    }
    let raw: Vec<f64> = adversary_losses.iter().map(|l| -l / tau).collect();
    Ok(RatioAssignment {
        weights: normalize_pools(&raw, sensitive, mode)?,
        mode,
        temperature: Some(tau),
    })
}

/// `mean(r·ln r)` with `0·ln 0 = 0`.
pub fn kl_term(weights: &[f64]) -> f64 {
    if weights.is_empty() {
        return 0.0;
    }
    weights
        .iter()
        .map(|&r| if r > 0.0 { r * r.ln() } else { 0.0 })
        .sum::<f64>()
        / weights.len() as f64
}

/// Parametric ratio: a head `h(x, s) → ℝ` whose exponentials are normalized per batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioNetwork {
    pub head: DenseNetwork,
}

impl RatioNetwork {
    pub fn new(n_features: usize, hidden: &[usize], rng: &mut RngState) -> Result<Self> {
        let head = DenseNetwork::new(&mlp_specs(n_features + 1, hidden, Activation::Identity), rng)?;
        Self::from_head(head)
    }

    pub fn from_head(head: DenseNetwork) -> Result<Self> {
        if head.output_dim() != 1 || head.output_activation() != Activation::Identity {
            return Err(Error::Config("ratio head must end in a single identity unit".into()));
        }
        if head.input_dim() < 2 {
            return Err(Error::Config("ratio head needs features plus the sensitive bit".into()));
        }
        Ok(Self { head })
    }

    pub fn n_features(&self) -> usize {
        self.head.input_dim() - 1
    }

    /// `[x | s]`, the head's input matrix.
    pub fn input(features: ArrayView2<f64>, sensitive: &[u8]) -> Array2<f64> {
        let s = Array2::from_shape_fn((sensitive.len(), 1), |(i, _)| f64::from(sensitive[i]));
        concatenate(Axis(1), &[features, s.view()]).expect("row counts match")
    }

    pub fn scores(&self, features: ArrayView2<f64>, sensitive: &[u8]) -> Result<Vec<f64>> {
        if features.nrows() != sensitive.len() {
            return Err(Error::Usage("feature rows and sensitive length differ".into()));
        }
        let out = self.head.predict(Self::input(features, sensitive).view())?;
        Ok(out.column(0).to_vec())
    }

    pub fn assign(
        &self,
        features: ArrayView2<f64>,
        sensitive: &[u8],
        mode: NormalizationMode,
    ) -> Result<RatioAssignment> {
        normalize(&self.scores(features, sensitive)?, sensitive, mode)
    }
}

/// Weights each sensitive group receives when the classifier is perfectly
/// fair and the adversary outputs the prior, so `L_S = −ln P(S = s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullyFairWeights {
    /// Indexed by sensitive value.
    pub conditional: [f64; 2],
    pub global: [f64; 2],
}

/// Closed-form weights on a pool whose group sizes follow `p_s1`.
///
/// The pool has 10 000 samples, so probabilities with at most four decimals
/// are represented exactly.
pub fn fully_fair_weight_analysis(p_s1: f64, tau: f64) -> Result<FullyFairWeights> {
    if !(p_s1 > 0.0 && p_s1 < 1.0) {
        return Err(Error::Domain(format!("P(S=1) = {p_s1} must lie in (0, 1)")));
    }
    const POOL: usize = 10_000;
    let n1 = (p_s1 * POOL as f64).round() as usize;
    if n1 == 0 || n1 == POOL {
        return Err(Error::Domain(format!("P(S=1) = {p_s1} leaves a group empty")));
    }
    let sensitive: Vec<u8> = (0..POOL).map(|i| u8::from(i < n1)).collect();
    let prior = [1.0 - p_s1, p_s1];
    let losses: Vec<f64> = sensitive.iter().map(|&s| -prior[s as usize].ln()).collect();
    let cond = broad_weights(&losses, &sensitive, tau, NormalizationMode::Conditional)?;
    let glob = broad_weights(&losses, &sensitive, tau, NormalizationMode::Global)?;
    // every member of a group gets the same weight, so read one of each
    Ok(FullyFairWeights {
        conditional: [cond.weights[POOL - 1], cond.weights[0]],
        global: [glob.weights[POOL - 1], glob.weights[0]],
    })
}
