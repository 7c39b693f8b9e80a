//! Formula invariants over randomly drawn models and inputs. Shared by the
//! property tests and the acceptance suite.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use fcurve_core::lexicon::{dense_feature_keys, FeatureStats, NormalizationStats, UserIndex};
use fcurve_core::model::{recall_probability, ModelParams, Network};
use fcurve_core::train::Hyperparameters;
use fcurve_core::{Clip, FeatureExtractor, FeatureVector, ModelKind, ModelState};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

pub const CASES: u32 = 1000;

pub const INVARIANTS: [&str; 6] = [
    "delta_monotonicity",
    "half_life_semantics",
    "complexity_monotonicity",
    "clip_ranges",
    "linreg_unit_interval",
    "hlr_plus_reduces_to_hlr",
];

/// Runs one invariant over `cases` deterministic random cases.
pub fn check(name: &str, cases: u32) -> Result<(), String> {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[7; 32]);
    let mut runner = TestRunner::new_with_rng(config, rng);
    macro_rules! run {
        ($strategy:expr, $test:expr $(,)?) => {
            runner.run(&$strategy, $test).map_err(|e| e.to_string())
        };
    }
    match name {
        "delta_monotonicity" => run!(
            (arb_state(), arb_inputs(), 0.0..400.0f64, 0.0..400.0f64),
            |(s, x, d1, extra)| delta_monotonicity(&s, x, d1, extra),
        ),
        "half_life_semantics" => run!((15.0 / 1440.0)..=274.0f64, |h| {
            prop_assert_eq!(recall_probability(h, h, 1.0, &Clip::default()).unwrap(), 0.5);
            Ok(())
        }),
        "complexity_monotonicity" => run!(
            (
                prop::sample::select(vec![ModelKind::CHlrPlus, ModelKind::CnHlrPlus]),
                arb_theta(),
                arb_network(),
                arb_inputs(),
                0.0..3.0f64,
                0.0..100.0f64,
            ),
            |(kind, theta, net, x, extra, delta)| complexity_monotonicity(kind, theta, net, x, extra, delta),
        ),
        "clip_ranges" => run!(
            (arb_state(), arb_inputs(), prop_oneof![Just(0.0), 0.0..1000.0f64]),
            |(s, x, delta)| clip_ranges(&s, x, delta),
        ),
        "linreg_unit_interval" => run!(
            (arb_theta(), -3.0..3.0f64, arb_inputs(), 0.0..1000.0f64),
            |(theta, w, x, delta)| linreg_unit_interval(theta, w, x, delta),
        ),
        "hlr_plus_reduces_to_hlr" => run!(
            (prop::array::uniform3(-3.0..3.0f64), arb_inputs(), 0.0..400.0f64),
            |(core, x, delta)| hlr_plus_reduces_to_hlr(core, x, delta),
        ),
        other => Err(format!("unknown invariant {other}")),
    }
}

type Inputs = ([f64; 5], u32, u32, f64);

pub fn extractor(kind: ModelKind) -> FeatureExtractor {
    let s = FeatureStats { mean: 0.5, min: 0.0, max: 1.0 };
    FeatureExtractor {
        dense_order: dense_feature_keys(),
        flags: kind.default_flags(),
        stats: NormalizationStats { dense: [s; 5], complexity_mean: 1.0 },
        users: UserIndex::default(),
    }
}

pub fn feature_vector(kind: ModelKind, (dense, seen, correct, complexity): Inputs) -> FeatureVector {
    let flags = kind.default_flags();
    FeatureVector {
        dense,
        imputed: [false; 5],
        interaction: flags
            .interaction
            .then(|| [(1.0 + f64::from(seen)).sqrt(), (1.0 + f64::from(correct)).sqrt()]),
        sparse_tag: flags.lexeme_tags.then(|| Arc::from("lex:camera/camera<n><sg>")),
        dense_terms: flags.dense,
        history_seen: seen,
        history_correct: correct,
        complexity_raw: complexity,
    }
}

pub fn state(kind: ModelKind, params: ModelParams) -> ModelState {
    ModelState {
        kind,
        clip: Clip::default(),
        hyperparameters: Hyperparameters::defaults_for(kind),
        features: extractor(kind),
        params,
    }
}

pub const WEIGHT_KEYS: [&str; 9] = [
    "bias",
    "history_seen",
    "history_correct",
    "lex:camera/camera<n><sg>",
    "user_id",
    "concreteness",
    "percent_known",
    "subtlex",
    "complexity",
];

pub fn arb_theta() -> impl Strategy<Value = BTreeMap<String, f64>> {
    prop::collection::vec(-3.0..3.0f64, WEIGHT_KEYS.len())
        .prop_map(|w| WEIGHT_KEYS.iter().map(|k| k.to_string()).zip(w).collect())
}

pub fn arb_network() -> impl Strategy<Value = Network> {
    (
        prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 4), 5),
        prop::collection::vec(-5.0..20.0f64, 4),
    )
        .prop_map(|(w1, w2)| Network { w1, w2, b1: None, b2: None })
}

/// Any model kind with random parameters, linear regression excluded.
pub fn arb_state() -> impl Strategy<Value = ModelState> {
    prop_oneof![
        Just(state(ModelKind::Pimsleur, ModelParams::Schedule)),
        Just(state(ModelKind::Leitner, ModelParams::Schedule)),
        (
            prop::sample::select(vec![
                ModelKind::Hlr,
                ModelKind::HlrLex,
                ModelKind::HlrPlus,
                ModelKind::CHlrPlus,
            ]),
            arb_theta()
        )
            .prop_map(|(k, theta)| state(k, ModelParams::Linear { theta })),
        (prop::sample::select(vec![ModelKind::NHlrPlus, ModelKind::CnHlrPlus]), arb_network())
            .prop_map(|(k, n)| state(k, ModelParams::Neural(n))),
    ]
}

pub fn arb_inputs() -> impl Strategy<Value = Inputs> {
    (prop::array::uniform5(0.0..=1.0f64), 1u32..200, 0.0..=1.0f64, 0.2..3.0f64)
        .prop_map(|(dense, seen, frac, c)| (dense, seen, (f64::from(seen) * frac).floor() as u32, c))
}

fn delta_monotonicity(s: &ModelState, x: Inputs, d1: f64, extra: f64) -> Result<(), TestCaseError> {
    let fv = feature_vector(s.kind, x);
    let p1 = s.predict(&fv, d1).unwrap().p_hat;
    let p2 = s.predict(&fv, d1 + extra).unwrap().p_hat;
    prop_assert!(p2 <= p1, "{}: p({}) = {p1} < p({}) = {p2}", s.kind, d1, d1 + extra);
    Ok(())
}

fn complexity_monotonicity(
    kind: ModelKind,
    theta: BTreeMap<String, f64>,
    net: Network,
    x: Inputs,
    extra: f64,
    delta: f64,
) -> Result<(), TestCaseError> {
    let params = if kind.is_neural() { ModelParams::Neural(net) } else { ModelParams::Linear { theta } };
    let s = state(kind, params);
    let harder = (x.0, x.1, x.2, x.3 + extra);
    let p1 = s.predict(&feature_vector(kind, x), delta).unwrap().p_hat;
    let p2 = s.predict(&feature_vector(kind, harder), delta).unwrap().p_hat;
    prop_assert!(p2 <= p1, "{kind}: complexity {} -> {p1}, {} -> {p2}", x.3, harder.3);
    Ok(())
}

fn clip_ranges(s: &ModelState, x: Inputs, delta: f64) -> Result<(), TestCaseError> {
    let clip = s.clip;
    let p = s.predict(&feature_vector(s.kind, x), delta).unwrap();
    let h = p.h_hat.unwrap();
    prop_assert!(h >= clip.h_min && h <= clip.h_max, "{}: h = {h}", s.kind);
    if delta == 0.0 {
        prop_assert_eq!(p.p_hat, 1.0);
    } else {
        prop_assert!(p.p_hat >= clip.p_min && p.p_hat <= clip.p_max, "{}: p = {}", s.kind, p.p_hat);
    }
    Ok(())
}

fn linreg_unit_interval(
    mut theta: BTreeMap<String, f64>,
    delta_weight: f64,
    x: Inputs,
    delta: f64,
) -> Result<(), TestCaseError> {
    theta.insert("delta".into(), delta_weight);
    let s = state(ModelKind::Linreg, ModelParams::Linear { theta });
    let p = s.predict(&feature_vector(ModelKind::Linreg, x), delta).unwrap();
    prop_assert!((0.0..=1.0).contains(&p.p_hat));
    prop_assert!(p.h_hat.is_none());
    Ok(())
}

fn hlr_plus_reduces_to_hlr(core: [f64; 3], x: Inputs, delta: f64) -> Result<(), TestCaseError> {
    let base: BTreeMap<String, f64> = WEIGHT_KEYS[..3].iter().map(|k| k.to_string()).zip(core).collect();
    let mut plus = base.clone();
    for k in &WEIGHT_KEYS[3..] {
        plus.insert(k.to_string(), 0.0);
    }
    let hlr = state(ModelKind::Hlr, ModelParams::Linear { theta: base });
    let hlr_plus = state(ModelKind::HlrPlus, ModelParams::Linear { theta: plus });
    let a = hlr.predict(&feature_vector(ModelKind::Hlr, x), delta).unwrap();
    let b = hlr_plus.predict(&feature_vector(ModelKind::HlrPlus, x), delta).unwrap();
    prop_assert_eq!(a.p_hat.to_bits(), b.p_hat.to_bits());
    prop_assert_eq!(a.h_hat.map(f64::to_bits), b.h_hat.map(f64::to_bits));
    Ok(())
}
