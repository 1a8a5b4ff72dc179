//! Training loops: unconstrained, globally fair adversarial, and the two
//! locally robust variants (parametric and closed-form weights).

mod objectives;
mod persist;

pub use objectives::{
    adversary_input, adversary_input_dim, adversary_losses, adversary_objective, predictor_objective, ratio_objective,
    AdversarialTerm, AdversaryObjective, PredictorObjective, RatioObjective,
};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{iterate_batches, Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::metrics::{global_di, Predictions};
use crate::nn::{mlp_specs, Activation, DenseNetwork};
use crate::ratio::{broad_weights, NormalizationMode, RatioNetwork};
use crate::rng::RngState;

/// Smallest temperature used by the reweighted trainers.
pub const TAU_FLOOR: f64 = 1e-3;

const STREAM_PREDICTOR: u64 = 1;
const STREAM_ADVERSARY: u64 = 2;
const STREAM_RATIO: u64 = 3;
const STREAM_BATCHES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Biased,
    GlobalFair,
    Road,
    Broad,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Biased, Algorithm::GlobalFair, Algorithm::Road, Algorithm::Broad];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Biased => "biased",
            Algorithm::GlobalFair => "globalfair",
            Algorithm::Road => "road",
            Algorithm::Broad => "broad",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}' (biased, globalfair, road, broad)")))
    }

    pub fn has_adversary(self) -> bool {
        self != Algorithm::Biased
    }

    /// Whether λ and τ respectively change what the algorithm does.
    pub fn uses_lambda(self) -> bool {
        self != Algorithm::Biased
    }

    pub fn uses_tau(self) -> bool {
        matches!(self, Algorithm::Road | Algorithm::Broad)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FairnessMode {
    /// Demographic parity: the adversary sees `f(x)`.
    Dp,
    /// Equalized odds: the adversary sees `f(x)` and `y`.
    Eo,
}

impl FairnessMode {
    pub fn name(self) -> &'static str {
        match self {
            FairnessMode::Dp => "dp",
            FairnessMode::Eo => "eo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dp" => Ok(FairnessMode::Dp),
            "eo" => Ok(FairnessMode::Eo),
            _ => Err(Error::Config(format!("unknown fairness mode '{s}' (dp, eo)"))),
        }
    }
}

pub fn parse_normalization(s: &str) -> Result<NormalizationMode> {
    match s.to_ascii_lowercase().as_str() {
        "conditional" => Ok(NormalizationMode::Conditional),
        "global" => Ok(NormalizationMode::Global),
        _ => Err(Error::Config(format!("unknown normalization '{s}' (conditional, global)"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub fairness_mode: FairnessMode,
    pub normalization_mode: NormalizationMode,
    pub lambda_g: f64,
    pub tau: f64,
    pub lr_f: f64,
    pub lr_g: f64,
    pub lr_r: f64,
    pub n_g: usize,
    pub n_r: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub predictor_hidden: Vec<usize>,
    pub adversary_hidden: Vec<usize>,
    pub ratio_hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Road,
            fairness_mode: FairnessMode::Dp,
            normalization_mode: NormalizationMode::Conditional,
            lambda_g: 1.0,
            tau: 0.5,
            lr_f: 0.01,
            lr_g: 0.01,
            lr_r: 0.01,
            n_g: 5,
            n_r: 5,
            batch_size: 128,
            epochs: 200,
            seed: 0,
            predictor_hidden: vec![64, 32],
            adversary_hidden: vec![64, 32, 16],
            ratio_hidden: vec![64, 32],
        }
    }
}

impl TrainConfig {
    pub fn with_algorithm(mut self, algorithm: Algorithm) -> Self {
        self.algorithm = algorithm;
        self
    }

    /// Validates the configuration and applies the temperature floor.
    /// Returns the resolved config and any warnings.
    pub fn resolve(&self) -> Result<(TrainConfig, Vec<String>)> {
        let mut cfg = self.clone();
        let mut warnings = Vec::new();
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("lr_f", cfg.lr_f)?;
        positive("lr_g", cfg.lr_g)?;
        positive("lr_r", cfg.lr_r)?;
        if !(cfg.lambda_g >= 0.0 && cfg.lambda_g.is_finite()) {
            return Err(Error::Config(format!("lambda_g must be nonnegative, got {}", cfg.lambda_g)));
        }
        if !(cfg.tau >= 0.0 && cfg.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be nonnegative and finite, got {}", cfg.tau)));
        }
        if cfg.n_g == 0 || cfg.n_r == 0 {
            return Err(Error::Config("n_g and n_r must be at least 1".into()));
        }
        if cfg.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", cfg.batch_size)));
        }
        if cfg.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if cfg.algorithm.uses_tau() && cfg.tau < TAU_FLOOR {
            warnings.push(format!("tau {} raised to the floor {TAU_FLOOR}", cfg.tau));
            cfg.tau = TAU_FLOOR;
        }
        Ok((cfg, warnings))
    }
}

/// Which player an update belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Adversary,
    Ratio,
    Predictor,
}

/// Snapshot handed to observers around every parameter update.
pub struct StepEvent<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub phase: Phase,
    pub inner_step: usize,
    /// Objective of the updated player, evaluated before the update.
    pub objective: f64,
    pub predictor: &'a DenseNetwork,
    pub adversary: Option<&'a DenseNetwork>,
    pub ratio: Option<&'a RatioNetwork>,
    /// Weights entering the predictor step (predictor phase only).
    pub weights: Option<&'a [f64]>,
    pub sensitive: &'a [u8],
}

pub trait TrainObserver {
    fn before_update(&mut self, _event: &StepEvent<'_>) {}
    fn after_update(&mut self, _event: &StepEvent<'_>) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_y: f64,
    pub loss_s: Option<f64>,
    pub train_di: Option<f64>,
    pub r_mean: Option<f64>,
    pub r_var: Option<f64>,
    pub skipped_batches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub predictor: DenseNetwork,
    pub adversary: Option<DenseNetwork>,
    pub ratio_head: Option<RatioNetwork>,
    pub trace: Vec<EpochStats>,
    pub warnings: Vec<String>,
    pub feature_names: Vec<String>,
    /// Preprocessing to reapply before prediction, if the harness fitted one.
    pub standardizer: Option<Standardizer>,
}

impl TrainedModel {
    pub fn predict(&self, features: ndarray::ArrayView2<f64>) -> Result<Predictions> {
        let out = self.predictor.predict(features)?;
        Ok(Predictions::from_scores(out.column(0).to_vec()))
    }

    /// Weights the model assigns to every row of `ds`, normalized over the
    /// whole set. `None` for the unweighted baseline, or when conditional
    /// normalization is impossible because a group is missing.
    pub fn assign_weights(&self, ds: &Dataset, pred: &Predictions) -> Result<Option<Vec<f64>>> {
        let mode = self.config.normalization_mode;
        if mode == NormalizationMode::Conditional && !ds.has_both_groups() {
            return Ok(None);
        }
        match self.config.algorithm {
            Algorithm::Biased => Ok(None),
            Algorithm::GlobalFair => Ok(Some(vec![1.0; ds.len()])),
            Algorithm::Road => {
                let head = self.ratio_head.as_ref().ok_or_else(|| Error::Config("model has no ratio head".into()))?;
                Ok(Some(head.assign(ds.features().view(), ds.sensitive(), mode)?.weights))
            }
            Algorithm::Broad => {
                let g = self.adversary.as_ref().ok_or_else(|| Error::Config("model has no adversary".into()))?;
                let input = adversary_input(&pred.scores, ds.labels(), self.config.fairness_mode)?;
                let losses = adversary_losses(g, input.view(), ds.sensitive())?;
                Ok(Some(broad_weights(&losses, ds.sensitive(), self.config.tau, mode)?.weights))
            }
        }
    }
}

struct Players {
    f: DenseNetwork,
    g: Option<DenseNetwork>,
    h: Option<RatioNetwork>,
}

impl Players {
    fn init(cfg: &TrainConfig, n_features: usize) -> Result<Self> {
        let root = RngState::new(cfg.seed);
        let f = DenseNetwork::new(
            &mlp_specs(n_features, &cfg.predictor_hidden, Activation::Sigmoid),
            &mut root.fork(STREAM_PREDICTOR),
        )?;
        let g = if cfg.algorithm.has_adversary() {
            Some(DenseNetwork::new(
                &mlp_specs(adversary_input_dim(cfg.fairness_mode), &cfg.adversary_hidden, Activation::Sigmoid),
                &mut root.fork(STREAM_ADVERSARY),
            )?)
        } else {
            None
        };
        let h = if cfg.algorithm == Algorithm::Road {
            Some(RatioNetwork::new(n_features, &cfg.ratio_hidden, &mut root.fork(STREAM_RATIO))?)
        } else {
            None
        };
        Ok(Self { f, g, h })
    }

    #[allow(clippy::too_many_arguments)]
    fn event<'a>(
        &'a self,
        epoch: usize,
        batch: usize,
        phase: Phase,
        inner_step: usize,
        objective: f64,
        weights: Option<&'a [f64]>,
        sensitive: &'a [u8],
    ) -> StepEvent<'a> {
        StepEvent {
            epoch,
            batch,
            phase,
            inner_step,
            objective,
            predictor: &self.f,
            adversary: self.g.as_ref(),
            ratio: self.h.as_ref(),
            weights,
            sensitive,
        }
    }
}

fn with_context(err: Error, epoch: usize, batch: usize, phase: Phase) -> Error {
    match err {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {batch}, {phase:?} step: {msg}")),
        other => other,
    }
}

fn check_algorithm(cfg: &TrainConfig, expected: Algorithm) -> Result<()> {
    if cfg.algorithm != expected {
        return Err(Error::Config(format!(
            "config requests {} but the {} trainer was called",
            cfg.algorithm, expected
        )));
    }
    Ok(())
}

pub fn train_biased(data: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    check_algorithm(cfg, Algorithm::Biased)?;
    train(data, cfg)
}

pub fn train_global_fair(data: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    check_algorithm(cfg, Algorithm::GlobalFair)?;
    train(data, cfg)
}

pub fn train_road(data: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    check_algorithm(cfg, Algorithm::Road)?;
    train(data, cfg)
}

pub fn train_broad(data: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    check_algorithm(cfg, Algorithm::Broad)?;
    train(data, cfg)
}

/// Trains with the algorithm named in `cfg`.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    train_observed(data, cfg, &mut NoopObserver)
}

/// Trains and reports every parameter update to `observer`.
///
/// Batches lacking one sensitive group are skipped by every algorithm, so
/// all four share the same effective schedule for a given seed.
pub fn train_observed(data: &Dataset, cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainedModel> {
    let (cfg, warnings) = cfg.resolve()?;
    for w in &warnings {
        log::warn!("{w}");
    }
    if data.len() < 2 {
        return Err(Error::Usage("training needs at least two rows".into()));
    }
    if cfg.algorithm.has_adversary() && !data.has_both_groups() {
        return Err(Error::Usage("fair training needs both sensitive groups".into()));
    }
    let mut players = Players::init(&cfg, data.n_features())?;
    let mut batch_rng = RngState::new(cfg.seed).fork(STREAM_BATCHES);
    let lr_r = cfg.lr_r / cfg.tau.max(1.0);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let batches = iterate_batches(data, cfg.batch_size, &mut batch_rng)?;
        let mut loss_y_sum = 0.0;
        let mut loss_s_sum = 0.0;
        let mut used = 0usize;
        let mut skipped = 0usize;
        let mut r_sum = 0.0;
        let mut r_sq = 0.0;
        let mut r_count = 0usize;

        for (b, batch) in batches.iter().enumerate() {
            let x = batch.features(data);
            let y = batch.labels(data);
            let s = batch.sensitive(data);
            if !s.contains(&0) || !s.contains(&1) {
                skipped += 1;
                continue;
            }
            used += 1;

            let mut adv_losses = None;
            if players.g.is_some() {
                let pred = players.f.predict(x.view()).map_err(|e| with_context(e, epoch, b, Phase::Adversary))?;
                let scores: Vec<f64> = pred.column(0).to_vec();
                let input = adversary_input(&scores, &y, cfg.fairness_mode)?;
                for step in 0..cfg.n_g {
                    let g = players.g.as_ref().expect("adversary present");
                    let obj = adversary_objective(g, input.view(), &s)
                        .map_err(|e| with_context(e, epoch, b, Phase::Adversary))?;
                    observer.before_update(&players.event(epoch, b, Phase::Adversary, step, obj.loss, None, &s));
                    players
                        .g
                        .as_mut()
                        .expect("adversary present")
                        .sgd_step(&obj.grads, cfg.lr_g)
                        .map_err(|e| with_context(e, epoch, b, Phase::Adversary))?;
                    observer.after_update(&players.event(epoch, b, Phase::Adversary, step, obj.loss, None, &s));
                }
                let g = players.g.as_ref().expect("adversary present");
                let losses =
                    adversary_losses(g, input.view(), &s).map_err(|e| with_context(e, epoch, b, Phase::Adversary))?;
                loss_s_sum += losses.iter().sum::<f64>() / losses.len() as f64;
                adv_losses = Some(losses);
            }

            if cfg.algorithm == Algorithm::Road {
                let losses = adv_losses.as_ref().expect("road has an adversary");
                for step in 0..cfg.n_r {
                    let h = players.h.as_ref().expect("road has a ratio head");
                    let obj = ratio_objective(h, x.view(), &s, losses, cfg.tau, cfg.normalization_mode)
                        .map_err(|e| with_context(e, epoch, b, Phase::Ratio))?;
                    observer.before_update(&players.event(epoch, b, Phase::Ratio, step, obj.loss, None, &s));
                    players
                        .h
                        .as_mut()
                        .expect("road has a ratio head")
                        .head
                        .sgd_step(&obj.grads, lr_r)
                        .map_err(|e| with_context(e, epoch, b, Phase::Ratio))?;
                    observer.after_update(&players.event(epoch, b, Phase::Ratio, step, obj.loss, None, &s));
                }
            }

            let weights: Option<Vec<f64>> = match cfg.algorithm {
                Algorithm::Biased => None,
                Algorithm::GlobalFair => Some(vec![1.0; s.len()]),
                Algorithm::Road => {
                    let h = players.h.as_ref().expect("road has a ratio head");
                    Some(
                        h.assign(x.view(), &s, cfg.normalization_mode)
                            .map_err(|e| with_context(e, epoch, b, Phase::Predictor))?
                            .weights,
                    )
                }
                Algorithm::Broad => {
                    let losses = adv_losses.as_ref().expect("broad has an adversary");
                    Some(
                        broad_weights(losses, &s, cfg.tau, cfg.normalization_mode)
                            .map_err(|e| with_context(e, epoch, b, Phase::Predictor))?
                            .weights,
                    )
                }
            };
            if let Some(w) = &weights {
                r_sum += w.iter().sum::<f64>();
                r_sq += w.iter().map(|v| v * v).sum::<f64>();
                r_count += w.len();
            }

            let term = match (&players.g, &weights) {
                (Some(g), Some(w)) => Some(AdversarialTerm {
                    adversary: g,
                    weights: w,
                    lambda: cfg.lambda_g,
                    mode: cfg.fairness_mode,
                }),
                _ => None,
            };
            let obj = predictor_objective(&players.f, x.view(), &y, &s, term)
                .map_err(|e| with_context(e, epoch, b, Phase::Predictor))?;
            loss_y_sum += obj.loss_y;
            let w = weights.as_deref();
            observer.before_update(&players.event(epoch, b, Phase::Predictor, 0, obj.loss, w, &s));
            players
                .f
                .sgd_step(&obj.grads, cfg.lr_f)
                .map_err(|e| with_context(e, epoch, b, Phase::Predictor))?;
            observer.after_update(&players.event(epoch, b, Phase::Predictor, 0, obj.loss, w, &s));
        }

        let train_pred = players.f.predict(data.features().view())?;
        let train_pred = Predictions::from_scores(train_pred.column(0).to_vec());
        let denom = used.max(1) as f64;
        let (r_mean, r_var) = if r_count > 0 {
            let m = r_sum / r_count as f64;
            (Some(m), Some((r_sq / r_count as f64 - m * m).max(0.0)))
        } else {
            (None, None)
        };
        let stats = EpochStats {
            epoch,
            loss_y: loss_y_sum / denom,
            loss_s: players.g.as_ref().map(|_| loss_s_sum / denom),
            train_di: global_di(&train_pred, data.sensitive()).ok(),
            r_mean,
            r_var,
            skipped_batches: skipped,
        };
        log::debug!("{} epoch {epoch}: loss_y {:.4} di {:?}", cfg.algorithm, stats.loss_y, stats.train_di);
        trace.push(stats);
    }

    Ok(TrainedModel {
        config: cfg,
        predictor: players.f,
        adversary: players.g,
        ratio_head: players.h,
        trace,
        warnings,
        feature_names: data.column_names().to_vec(),
        standardizer: None,
    })
}
