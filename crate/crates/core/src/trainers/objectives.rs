//! Batch objectives of the three players and their exact gradients.
//!
//! Each function differentiates with respect to one network only; every
//! other quantity (the other networks' outputs, the weights `r`) enters as a
//! constant.

use ndarray::{Array2, ArrayView2};

use super::FairnessMode;
use crate::error::{Error, Result};
use crate::nn::{binary_cross_entropy, DenseNetwork, GradientSet};
use crate::ratio::{kl_term, normalization_vjp, normalize, NormalizationMode, RatioAssignment, RatioNetwork};

/// Adversary input: `[f(x)]` for demographic parity, `[f(x), y]` for equalized odds.
pub fn adversary_input(pred_scores: &[f64], labels: &[u8], mode: FairnessMode) -> Result<Array2<f64>> {
    match mode {
        FairnessMode::Dp => Ok(Array2::from_shape_fn((pred_scores.len(), 1), |(i, _)| pred_scores[i])),
        FairnessMode::Eo => {
            if labels.len() != pred_scores.len() {
                return Err(Error::Usage(format!(
                    "{} scores for {} labels",
                    pred_scores.len(),
                    labels.len()
                )));
            }
            Ok(Array2::from_shape_fn((pred_scores.len(), 2), |(i, j)| {
                if j == 0 {
                    pred_scores[i]
                } else {
                    f64::from(labels[i])
                }
            }))
        }
    }
}

/// Number of adversary input columns for a fairness mode.
pub fn adversary_input_dim(mode: FairnessMode) -> usize {
    match mode {
        FairnessMode::Dp => 1,
        FairnessMode::Eo => 2,
    }
}

#[derive(Debug, Clone)]
pub struct AdversaryObjective {
    /// `J_s = mean L_S`
    pub loss: f64,
    pub per_sample: Vec<f64>,
    pub grads: GradientSet,
}

/// Per-sample adversary losses `L_S(g(input), s)` without gradients.
pub fn adversary_losses(adversary: &DenseNetwork, input: ArrayView2<f64>, sensitive: &[u8]) -> Result<Vec<f64>> {
    let out = adversary.predict(input)?;
    let q: Vec<f64> = out.column(0).to_vec();
    Ok(binary_cross_entropy(&q, sensitive, None)?.per_sample)
}

/// `J_s = mean L_S(g(input), s)` and its gradient wrt the adversary.
pub fn adversary_objective(
    adversary: &DenseNetwork,
    input: ArrayView2<f64>,
    sensitive: &[u8],
) -> Result<AdversaryObjective> {
    let (out, trace) = adversary.forward(input)?;
    let q: Vec<f64> = out.column(0).to_vec();
    let bce = binary_cross_entropy(&q, sensitive, None)?;
    let dout = Array2::from_shape_vec((q.len(), 1), bce.grads).expect("column shape");
    let grads = adversary.backward(&trace, dout.view())?;
    Ok(AdversaryObjective {
        loss: bce.loss,
        per_sample: bce.per_sample,
        grads,
    })
}

#[derive(Debug, Clone)]
pub struct RatioObjective {
    /// `J_r = mean(r·L_S) + τ·mean(r·ln r)`
    pub loss: f64,
    pub weights: RatioAssignment,
    pub grads: GradientSet,
}

/// Ratio-head objective, differentiated through the normalization quotient.
pub fn ratio_objective(
    ratio: &RatioNetwork,
    features: ArrayView2<f64>,
    sensitive: &[u8],
    adversary_losses: &[f64],
    tau: f64,
    mode: NormalizationMode,
) -> Result<RatioObjective> {
    let n = sensitive.len();
    if adversary_losses.len() != n || features.nrows() != n {
        return Err(Error::Usage("ratio objective inputs have different lengths".into()));
    }
    let input = RatioNetwork::input(features, sensitive);
    let (out, trace) = ratio.head.forward(input.view())?;
    let scores: Vec<f64> = out.column(0).to_vec();
    let weights = normalize(&scores, sensitive, mode)?;
    let r = &weights.weights;
    let nf = n as f64;
    let weighted = r.iter().zip(adversary_losses).map(|(a, b)| a * b).sum::<f64>() / nf;
    let loss = weighted + tau * kl_term(r);
    let upstream: Vec<f64> = r
        .iter()
        .zip(adversary_losses)
        .map(|(&ri, &li)| (li + tau * (ri.ln() + 1.0)) / nf)
        .collect();
    let dscore = normalization_vjp(r, sensitive, mode, &upstream)?;
    let dout = Array2::from_shape_vec((n, 1), dscore).expect("column shape");
    let grads = ratio.head.backward(&trace, dout.view())?;
    Ok(RatioObjective { loss, weights, grads })
}

#[derive(Debug, Clone)]
pub struct PredictorObjective {
    /// `J_f = mean L_Y − λ·mean(r·L_S)`
    pub loss: f64,
    pub loss_y: f64,
    /// `mean(r·L_S)`, zero without an adversary.
    pub fairness_term: f64,
    pub scores: Vec<f64>,
    pub adversary_losses: Option<Vec<f64>>,
    pub grads: GradientSet,
}

/// The fairness side of the predictor objective.
pub struct AdversarialTerm<'a> {
    pub adversary: &'a DenseNetwork,
    /// Per-sample weights `r`, held constant.
    pub weights: &'a [f64],
    pub lambda: f64,
    pub mode: FairnessMode,
}

/// Predictor objective; the gradient flows through `f(x)` into the
/// adversary's input, while adversary parameters and weights stay fixed.
pub fn predictor_objective(
    predictor: &DenseNetwork,
    features: ArrayView2<f64>,
    labels: &[u8],
    sensitive: &[u8],
    term: Option<AdversarialTerm<'_>>,
) -> Result<PredictorObjective> {
    let n = labels.len();
    if features.nrows() != n || sensitive.len() != n {
        return Err(Error::Usage("predictor objective inputs have different lengths".into()));
    }
    let (out, trace) = predictor.forward(features)?;
    let scores: Vec<f64> = out.column(0).to_vec();
    let bce_y = binary_cross_entropy(&scores, labels, None)?;
    let mut dscores = bce_y.grads;
    let mut fairness_term = 0.0;
    let mut adv_losses = None;
    let mut loss = bce_y.loss;
    if let Some(term) = term {
        if term.weights.len() != n {
            return Err(Error::Usage(format!("{} weights for a batch of {n}", term.weights.len())));
        }
        let input = adversary_input(&scores, labels, term.mode)?;
        let (q, g_trace) = term.adversary.forward(input.view())?;
        let q: Vec<f64> = q.column(0).to_vec();
        let bce_s = binary_cross_entropy(&q, sensitive, None)?;
        fairness_term = term
            .weights
            .iter()
            .zip(&bce_s.per_sample)
            .map(|(r, l)| r * l)
            .sum::<f64>()
            / n as f64;
        // bce_s.grads already carry the 1/n of the mean
        let dq: Vec<f64> = bce_s.grads.iter().zip(term.weights).map(|(g, r)| g * r).collect();
        let dq = Array2::from_shape_vec((n, 1), dq).expect("column shape");
        let (_, dinput) = term.adversary.backward_with_input(&g_trace, dq.view())?;
        for (d, dl) in dscores.iter_mut().zip(dinput.column(0)) {
            *d -= term.lambda * dl;
        }
        loss -= term.lambda * fairness_term;
        adv_losses = Some(bce_s.per_sample);
    }
    let dout = Array2::from_shape_vec((n, 1), dscores).expect("column shape");
    let grads = predictor.backward(&trace, dout.view())?;
    Ok(PredictorObjective {
        loss,
        loss_y: bce_y.loss,
        fairness_term,
        scores,
        adversary_losses: adv_losses,
        grads,
    })
}
