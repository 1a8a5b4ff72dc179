use ndarray::Array2;
use rand::Rng;

use locfair::data::{standardize, synthesize, Dataset, SynthConfig};
use locfair::metrics::{accuracy, global_di, Predictions};
use locfair::nn::{mlp_specs, Activation, DenseNetwork};
use locfair::ratio::{broad_weights, NormalizationMode, RatioNetwork};
use locfair::trainers::{
    adversary_input, adversary_losses, predictor_objective, train, train_biased, train_broad, train_global_fair,
    train_observed, train_road, AdversarialTerm, Algorithm, FairnessMode, Phase, StepEvent, TrainConfig,
    TrainObserver, TAU_FLOOR,
};
use locfair::{Error, RngState};

fn planted(n: usize, seed: u64) -> Dataset {
    let mut cfg = SynthConfig::new(n, seed);
    cfg.per_region_bias = vec![0.0, 0.15, 0.45, 0.6];
    standardize(&synthesize(&cfg).unwrap()).unwrap().0
}

fn quick(algorithm: Algorithm) -> TrainConfig {
    TrainConfig {
        algorithm,
        lambda_g: 2.0,
        epochs: 2,
        batch_size: 64,
        predictor_hidden: vec![8],
        adversary_hidden: vec![8],
        ratio_hidden: vec![8],
        ..TrainConfig::default()
    }
}

#[derive(Default)]
struct Recorder {
    phases: Vec<(usize, usize, Phase)>,
    violations: Vec<String>,
    before: Option<[u64; 3]>,
    objectives: Vec<(usize, usize, Phase, f64)>,
    worst_group_mean: f64,
}

fn checksums(e: &StepEvent<'_>) -> [u64; 3] {
    [
        e.predictor.checksum(),
        e.adversary.map_or(0, |g| g.checksum()),
        e.ratio.map_or(0, |h| h.head.checksum()),
    ]
}

impl TrainObserver for Recorder {
    fn before_update(&mut self, e: &StepEvent<'_>) {
        self.before = Some(checksums(e));
        self.objectives.push((e.epoch, e.batch, e.phase, e.objective));
        if let Some(w) = e.weights {
            for g in 0..2u8 {
                let v: Vec<f64> = w.iter().zip(e.sensitive).filter(|(_, &s)| s == g).map(|(r, _)| *r).collect();
                let m = v.iter().sum::<f64>() / v.len() as f64;
                self.worst_group_mean = self.worst_group_mean.max((m - 1.0).abs());
            }
        }
    }

    fn after_update(&mut self, e: &StepEvent<'_>) {
        self.phases.push((e.epoch, e.batch, e.phase));
        let before = self.before.take().unwrap();
        let after = checksums(e);
        let owned = match e.phase {
            Phase::Predictor => 0,
            Phase::Adversary => 1,
            Phase::Ratio => 2,
        };
        for i in 0..3 {
            if i != owned && before[i] != after[i] {
                self.violations.push(format!("{:?} step changed network {i}", e.phase));
            }
        }
    }
}

#[test]
fn road_updates_in_order_and_in_isolation() {
    let data = planted(600, 1);
    let cfg = quick(Algorithm::Road);
    let mut rec = Recorder::default();
    train_observed(&data, &cfg, &mut rec).unwrap();
    assert!(rec.violations.is_empty(), "{:?}", rec.violations);
    let mut expected = Vec::new();
    expected.extend(std::iter::repeat(Phase::Adversary).take(cfg.n_g));
    expected.extend(std::iter::repeat(Phase::Ratio).take(cfg.n_r));
    expected.push(Phase::Predictor);
    let per_batch = expected.len();
    assert_eq!(rec.phases.len() % per_batch, 0);
    for chunk in rec.phases.chunks(per_batch) {
        let phases: Vec<Phase> = chunk.iter().map(|c| c.2).collect();
        assert_eq!(phases, expected);
        assert!(chunk.iter().all(|c| (c.0, c.1) == (chunk[0].0, chunk[0].1)));
    }
}

#[test]
fn conditional_weights_entering_predictor_have_unit_group_means() {
    let data = planted(600, 2);
    for algo in [Algorithm::Road, Algorithm::Broad] {
        let mut rec = Recorder::default();
        train_observed(&data, &quick(algo), &mut rec).unwrap();
        assert!(rec.worst_group_mean < 1e-9, "{algo}: {}", rec.worst_group_mean);
        assert!(rec.violations.is_empty());
    }
}

fn fraction_decreasing(rec: &Recorder, phase: Phase, strict: bool) -> f64 {
    let mut per_batch: std::collections::BTreeMap<(usize, usize), Vec<f64>> = Default::default();
    for &(e, b, p, v) in &rec.objectives {
        if p == phase {
            per_batch.entry((e, b)).or_default().push(v);
        }
    }
    let good = per_batch
        .values()
        .filter(|v| v.windows(2).all(|w| if strict { w[1] < w[0] } else { w[1] <= w[0] }))
        .count();
    good as f64 / per_batch.len() as f64
}

#[test]
fn ratio_objective_descends_over_inner_steps() {
    let data = planted(800, 3);
    let cfg = TrainConfig {
        lr_r: 1e-3,
        ..quick(Algorithm::Road)
    };
    let mut rec = Recorder::default();
    train_observed(&data, &cfg, &mut rec).unwrap();
    let frac = fraction_decreasing(&rec, Phase::Ratio, true);
    assert!(frac >= 0.9, "strict descent on {frac} of batches");
}

#[test]
fn adversary_objective_descends_with_frozen_predictor() {
    let data = planted(800, 4);
    let cfg = TrainConfig {
        lr_g: 1e-3,
        ..quick(Algorithm::GlobalFair)
    };
    let mut rec = Recorder::default();
    train_observed(&data, &cfg, &mut rec).unwrap();
    let frac = fraction_decreasing(&rec, Phase::Adversary, false);
    assert!(frac >= 0.9, "non-increasing on {frac} of batches");
}

#[test]
fn same_seed_same_model() {
    let data = planted(500, 5);
    for algo in Algorithm::ALL {
        let a = train(&data, &quick(algo)).unwrap();
        let b = train(&data, &quick(algo)).unwrap();
        assert_eq!(a, b, "{algo}");
    }
    let other = train(&data, &TrainConfig { seed: 9, ..quick(Algorithm::Road) }).unwrap();
    assert_ne!(other.predictor, train(&data, &quick(Algorithm::Road)).unwrap().predictor);
}

#[test]
fn zero_lambda_matches_biased_bitwise() {
    let data = planted(500, 6);
    let biased = train(&data, &TrainConfig { lambda_g: 0.0, ..quick(Algorithm::Biased) }).unwrap();
    for algo in [Algorithm::GlobalFair, Algorithm::Road, Algorithm::Broad] {
        let m = train(&data, &TrainConfig { lambda_g: 0.0, ..quick(algo) }).unwrap();
        assert_eq!(m.predictor, biased.predictor, "{algo}");
    }
}

#[test]
fn wrapper_trainers_check_the_algorithm() {
    let data = planted(300, 7);
    assert!(train_biased(&data, &quick(Algorithm::Biased)).is_ok());
    assert!(train_global_fair(&data, &quick(Algorithm::GlobalFair)).is_ok());
    assert!(train_road(&data, &quick(Algorithm::Road)).is_ok());
    assert!(train_broad(&data, &quick(Algorithm::Broad)).is_ok());
    assert!(matches!(train_broad(&data, &quick(Algorithm::Road)), Err(Error::Config(_))));
}

#[test]
fn zero_tau_is_floored_with_warning() {
    let data = planted(300, 8);
    let m = train(&data, &TrainConfig { tau: 0.0, ..quick(Algorithm::Broad) }).unwrap();
    assert_eq!(m.config.tau, TAU_FLOOR);
    assert_eq!(m.warnings.len(), 1);
}

#[test]
fn divergence_reports_where_it_happened() {
    let data = planted(300, 9);
    let cfg = TrainConfig {
        lr_f: 1e300,
        ..quick(Algorithm::Biased)
    };
    match train(&data, &cfg) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("epoch"), "{msg}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

fn random_batch(rng: &mut RngState, n: usize, d: usize) -> (Array2<f64>, Vec<u8>, Vec<u8>) {
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let y = (0..n).map(|i| (i % 2) as u8).collect();
    let s = (0..n).map(|i| ((i / 2) % 2) as u8).collect();
    (x, y, s)
}

#[test]
fn broad_and_preset_ratio_head_give_identical_predictor_gradients() {
    let mut rng = RngState::new(10);
    let (x, y, s) = random_batch(&mut rng, 16, 3);
    let f = DenseNetwork::new(&mlp_specs(3, &[6], Activation::Sigmoid), &mut rng).unwrap();
    let g = DenseNetwork::new(&mlp_specs(1, &[5], Activation::Sigmoid), &mut rng).unwrap();
    let tau = 0.3;
    let scores = f.predict(x.view()).unwrap().column(0).to_vec();
    let losses = adversary_losses(&g, adversary_input(&scores, &y, FairnessMode::Dp).unwrap().view(), &s).unwrap();
    let closed = broad_weights(&losses, &s, tau, NormalizationMode::Conditional).unwrap().weights;
    let raw: Vec<f64> = losses.iter().map(|l| -l / tau).collect();
    let head_weights = locfair::ratio::normalize(&raw, &s, NormalizationMode::Conditional).unwrap().weights;
    let grads = |w: &[f64]| {
        let term = AdversarialTerm {
            adversary: &g,
            weights: w,
            lambda: 2.0,
            mode: FairnessMode::Dp,
        };
        predictor_objective(&f, x.view(), &y, &s, Some(term)).unwrap().grads.flatten()
    };
    assert_eq!(grads(&closed), grads(&head_weights));
}

#[test]
fn equal_losses_reduce_to_the_global_fair_step() {
    let mut rng = RngState::new(11);
    let (x, y, s) = random_batch(&mut rng, 12, 2);
    let f = DenseNetwork::new(&mlp_specs(2, &[4], Activation::Sigmoid), &mut rng).unwrap();
    let g = DenseNetwork::new(&mlp_specs(1, &[4], Activation::Sigmoid), &mut rng).unwrap();
    let losses: Vec<f64> = s.iter().map(|&si| if si == 1 { 0.4 } else { 0.9 }).collect();
    let w = broad_weights(&losses, &s, 0.7, NormalizationMode::Conditional).unwrap().weights;
    assert!(w.iter().all(|&r| r == 1.0));
    let run = |w: &[f64]| {
        let term = AdversarialTerm {
            adversary: &g,
            weights: w,
            lambda: 1.5,
            mode: FairnessMode::Dp,
        };
        predictor_objective(&f, x.view(), &y, &s, Some(term)).unwrap()
    };
    assert_eq!(run(&w).grads, run(&vec![1.0; 12]).grads);
}

#[test]
fn ratio_head_preset_to_closed_form_matches() {
    // a linear head with weights only on an extra column reproduces −L/τ
    let losses = [0.2, 0.9, 0.5, 0.4];
    let s = [0u8, 0, 1, 1];
    let tau = 0.5;
    let mut head = DenseNetwork::zeros(&[locfair::nn::LayerSpec::new(2, 1, Activation::Identity)]).unwrap();
    head.layers_mut()[0].weights[[0, 0]] = -1.0 / tau;
    let h = RatioNetwork::from_head(head).unwrap();
    let x = Array2::from_shape_fn((4, 1), |(i, _)| losses[i]);
    let from_head = h.assign(x.view(), &s, NormalizationMode::Conditional).unwrap().weights;
    let closed = broad_weights(&losses, &s, tau, NormalizationMode::Conditional).unwrap().weights;
    for (a, b) in from_head.iter().zip(&closed) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn huge_tau_broad_tracks_global_fair_losses() {
    let data = planted(600, 12);
    let gf = train(&data, &quick(Algorithm::GlobalFair)).unwrap();
    let broad = train(&data, &TrainConfig { tau: 1e6, ..quick(Algorithm::Broad) }).unwrap();
    for (a, b) in gf.trace.iter().zip(&broad.trace) {
        assert!((a.loss_y - b.loss_y).abs() < 1e-4, "{} vs {}", a.loss_y, b.loss_y);
    }
}

#[test]
fn biased_learns_a_separable_rule() {
    let mut rng = RngState::new(13);
    let n = 1000;
    let x: Array2<f64> = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
    let mut keep = Vec::new();
    for i in 0..n {
        // margin of 0.1 around the line x0 + x1 = 0
        if (x[[i, 0]] + x[[i, 1]]).abs() > 0.1 {
            keep.push(i);
        }
    }
    let rows = Array2::from_shape_fn((keep.len(), 2), |(i, j)| x[[keep[i], j]]);
    let y: Vec<u8> = keep.iter().map(|&i| u8::from(x[[i, 0]] + x[[i, 1]] > 0.0)).collect();
    let s: Vec<u8> = (0..keep.len()).map(|i| (i % 2) as u8).collect();
    let data = Dataset::new(rows, y.clone(), s, vec!["a".into(), "b".into()]).unwrap();
    let cfg = TrainConfig {
        algorithm: Algorithm::Biased,
        epochs: 200,
        ..TrainConfig::default()
    };
    let model = train(&data, &cfg).unwrap();
    let pred = model.predict(data.features().view()).unwrap();
    let acc = accuracy(&pred, &y).unwrap();
    assert!(acc > 0.95, "accuracy {acc}");
}

#[test]
fn biased_model_reproduces_label_disparity() {
    let mut cfg = SynthConfig::new(10_000, 14);
    cfg.base_bias = 0.3;
    let raw = synthesize(&cfg).unwrap();
    let labels = Predictions::from_scores(raw.labels().iter().map(|&y| f64::from(y)).collect());
    let label_di = global_di(&labels, raw.sensitive()).unwrap();
    let data = standardize(&raw).unwrap().0;
    let model = train(
        &data,
        &TrainConfig {
            algorithm: Algorithm::Biased,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let pred = model.predict(data.features().view()).unwrap();
    let di = global_di(&pred, data.sensitive()).unwrap();
    assert!((di - label_di).abs() <= 0.05, "model DI {di}, label DI {label_di}");
}

#[test]
fn global_fair_lowers_disparity_against_biased() {
    let mut wins = 0;
    for seed in 0..5 {
        let data = planted(2000, 100 + seed);
        let base = TrainConfig {
            epochs: 40,
            seed,
            lambda_g: 3.0,
            ..TrainConfig::default()
        };
        let di = |algorithm| {
            let m = train(&data, &TrainConfig { algorithm, ..base.clone() }).unwrap();
            global_di(&m.predict(data.features().view()).unwrap(), data.sensitive()).unwrap()
        };
        wins += usize::from(di(Algorithm::GlobalFair) < di(Algorithm::Biased));
    }
    assert!(wins >= 4, "{wins}/5");
}

#[test]
fn eo_mode_feeds_labels_to_the_adversary() {
    let data = planted(400, 15);
    let m = train(
        &data,
        &TrainConfig {
            fairness_mode: FairnessMode::Eo,
            ..quick(Algorithm::Road)
        },
    )
    .unwrap();
    assert_eq!(m.adversary.as_ref().unwrap().input_dim(), 2);
    let pred = m.predict(data.features().view()).unwrap();
    let w = m.assign_weights(&data, &pred).unwrap().unwrap();
    assert_eq!(w.len(), data.len());
}
