//! Loss, analytic gradients and the stochastic-gradient training loop.
//!
//! The per-event loss is
//!
//! ```text
//! (p - p_hat)^2 + alpha * (h - h_hat)^2 + lambda * sum(w^2)
//! ```
//!
//! where `p` is the clipped observed recall, `h` the half-life it implies and
//! the regularizer runs over the weights the event touches (bias terms
//! excluded). Clipped quantities pass no gradient, with one exception: the
//! neural half-life floor passes gradient straight through, otherwise an
//! untrained network whose output sits under the floor never moves.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ReviewEvent;
use crate::error::{Error, Result};
use crate::lexicon::{FeatureExtractor, FeatureFlags, FeatureVector, LexiconBundle, BIAS_KEY, DELTA_KEY, NUM_DENSE};
use crate::model::{
    dot, linreg_delta_input, linreg_raw, observed_half_life, raw_recall, Clip, ModelKind, ModelParams,
    ModelState, Network,
};
use crate::seed;

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain SGD: every weight moves by `-learning_rate * gradient`.
    #[default]
    Sgd,
    /// Per-weight rate `learning_rate / sqrt(1 + updates so far)`.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    #[serde(default)]
    pub neural_bias: bool,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Neural weights start uniform in `[-init_scale, init_scale]`.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    0.1
}

impl Hyperparameters {
    pub fn defaults_for(kind: ModelKind) -> Self {
        let neural = kind.is_neural();
        Hyperparameters {
            learning_rate: 0.001,
            alpha: 0.01,
            lambda: 0.1,
            epochs: if neural { 200 } else { 1 },
            minibatch_size: if neural { 1024 } else { 1 },
            seed: 0,
            hidden_dim: 4,
            neural_bias: false,
            optimizer: Optimizer::Sgd,
            init_scale: default_init_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.alpha, self.lambda, self.init_scale];
        if positive.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("hyperparameters must be finite and non-negative: {self:?}")));
        }
        if self.minibatch_size == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("minibatch_size and hidden_dim must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub p_term: f64,
    /// Already multiplied by alpha.
    pub h_term: f64,
    pub reg_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add(&mut self, other: &LossBreakdown) {
        self.p_term += other.p_term;
        self.h_term += other.h_term;
        self.reg_term += other.reg_term;
        self.total += other.total;
    }

    fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            p_term: self.p_term * s,
            h_term: self.h_term * s,
            reg_term: self.reg_term * s,
            total: self.total * s,
        }
    }
}

/// Composite loss from already-clipped predictions. `sum_sq_weights` is the
/// squared norm of the regularized weights; the half-life term is skipped
/// when either half-life is absent.
pub fn loss(
    observed_recall: f64,
    p_hat: f64,
    observed_h: Option<f64>,
    h_hat: Option<f64>,
    sum_sq_weights: f64,
    hyper: &Hyperparameters,
) -> LossBreakdown {
    let p_term = (observed_recall - p_hat).powi(2);
    let h_term = match (observed_h, h_hat) {
        (Some(h), Some(hh)) => hyper.alpha * (h - hh).powi(2),
        _ => 0.0,
    };
    let reg_term = hyper.lambda * sum_sq_weights;
    LossBreakdown {
        p_term,
        h_term,
        reg_term,
        total: p_term + h_term + reg_term,
    }
}

/// The supervised part of an event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub recall: f64,
    pub delta_days: f64,
}

impl From<&ReviewEvent> for Observation {
    fn from(e: &ReviewEvent) -> Self {
        Observation {
            recall: e.observed_recall,
            delta_days: e.delta_days,
        }
    }
}

/// Gradient with the shape of the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Gradient {
    Linear(BTreeMap<String, f64>),
    Neural(Network),
}

impl Gradient {
    pub fn zeros_like(state: &ModelState) -> Result<Self> {
        match &state.params {
            ModelParams::Linear { .. } => Ok(Gradient::Linear(BTreeMap::new())),
            ModelParams::Neural(net) => Ok(Gradient::Neural(Network::zeros(
                net.inputs(),
                net.hidden_dim(),
                net.b1.is_some(),
            ))),
            ModelParams::Schedule => Err(Error::Structural(format!("{} has no trainable parameters", state.kind))),
        }
    }

    fn clear(&mut self) {
        match self {
            Gradient::Linear(g) => g.clear(),
            Gradient::Neural(g) => {
                g.w1.iter_mut().flatten().for_each(|v| *v = 0.0);
                g.w2.iter_mut().for_each(|v| *v = 0.0);
                if let Some(b) = g.b1.as_mut() {
                    b.iter_mut().for_each(|v| *v = 0.0);
                }
                if let Some(b) = g.b2.as_mut() {
                    *b = 0.0;
                }
            }
        }
    }

    fn scale(&mut self, s: f64) {
        match self {
            Gradient::Linear(g) => g.values_mut().for_each(|v| *v *= s),
            Gradient::Neural(g) => {
                g.w1.iter_mut().flatten().for_each(|v| *v *= s);
                g.w2.iter_mut().for_each(|v| *v *= s);
                if let Some(b) = g.b1.as_mut() {
                    b.iter_mut().for_each(|v| *v *= s);
                }
                if let Some(b) = g.b2.as_mut() {
                    *b *= s;
                }
            }
        }
    }

    /// Flattened `(parameter name, value)` pairs, for reporting and checks.
    pub fn entries(&self) -> Vec<(String, f64)> {
        match self {
            Gradient::Linear(g) => g.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            Gradient::Neural(g) => network_entries(g),
        }
    }
}

fn network_entries(net: &Network) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (i, row) in net.w1.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out.push((format!("w1[{i}][{j}]"), *v));
        }
    }
    for (j, v) in net.w2.iter().enumerate() {
        out.push((format!("w2[{j}]"), *v));
    }
    if let Some(b) = &net.b1 {
        for (j, v) in b.iter().enumerate() {
            out.push((format!("b1[{j}]"), *v));
        }
    }
    if let Some(b) = net.b2 {
        out.push(("b2".to_owned(), b));
    }
    out
}

fn add_to(map: &mut BTreeMap<String, f64>, key: &str, v: f64) {
    match map.get_mut(key) {
        Some(slot) => *slot += v,
        None => {
            map.insert(key.to_owned(), v);
        }
    }
}

fn regularized(key: &str) -> bool {
    key != BIAS_KEY
}

/// Derivatives of the clipped curve with respect to the clipped half-life.
struct CurvePoint {
    p_hat: f64,
    dp_dh: f64,
}

fn curve(h_hat: f64, delta: f64, multiplier: f64, clip: &Clip) -> CurvePoint {
    match raw_recall(h_hat, delta, multiplier) {
        None => CurvePoint { p_hat: 1.0, dp_dh: 0.0 },
        Some(p) if p > clip.p_min && p < clip.p_max => CurvePoint {
            p_hat: p,
            dp_dh: p * LN2 * delta * multiplier / (h_hat * h_hat),
        },
        Some(p) => CurvePoint {
            p_hat: clip.probability(p),
            dp_dh: 0.0,
        },
    }
}

/// Clipped observed recall and the half-life target it implies under the
/// model's curve (the complexity multiplier rescales elapsed time).
fn targets(state: &ModelState, fv: &FeatureVector, obs: Observation) -> (f64, f64) {
    let p = state.clip.probability(obs.recall);
    let h = observed_half_life(p, obs.delta_days * state.multiplier(fv), &state.clip);
    (p, h)
}

/// Loss of one event under the current parameters.
pub fn event_loss(
    state: &ModelState,
    fv: &FeatureVector,
    obs: Observation,
    hyper: &Hyperparameters,
) -> Result<LossBreakdown> {
    let (p, h) = targets(state, fv, obs);
    let prediction = state.predict(fv, obs.delta_days)?;
    let sum_sq = match &state.params {
        ModelParams::Linear { theta } => {
            let mut s: f64 = fv
                .terms()
                .filter(|(k, _)| regularized(k))
                .map(|(k, _)| theta.get(k).map_or(0.0, |w| w * w))
                .sum();
            if state.kind == ModelKind::Linreg {
                s += theta.get(DELTA_KEY).map_or(0.0, |w| w * w);
            }
            s
        }
        ModelParams::Neural(net) => {
            net.w1.iter().flatten().map(|w| w * w).sum::<f64>() + net.w2.iter().map(|w| w * w).sum::<f64>()
        }
        ModelParams::Schedule => 0.0,
    };
    let observed_h = prediction.h_hat.map(|_| h);
    Ok(loss(p, prediction.p_hat, observed_h, prediction.h_hat, sum_sq, hyper))
}

/// Adds this event's gradient into `acc` and returns its loss.
pub fn gradient_into(
    state: &ModelState,
    fv: &FeatureVector,
    obs: Observation,
    hyper: &Hyperparameters,
    acc: &mut Gradient,
) -> Result<LossBreakdown> {
    let breakdown = event_loss(state, fv, obs, hyper)?;
    let (p, h) = targets(state, fv, obs);
    let clip = &state.clip;
    let lambda2 = 2.0 * hyper.lambda;
    match (&state.params, acc) {
        (ModelParams::Linear { theta }, Gradient::Linear(g)) if state.kind == ModelKind::Linreg => {
            let delta_x = linreg_delta_input(obs.delta_days);
            let r = linreg_raw(theta, fv, obs.delta_days);
            // Inclusive bounds so the zero initialization can move.
            let g_r = if (0.0..=1.0).contains(&r) { 2.0 * (r - p) } else { 0.0 };
            let weight = |k: &str| theta.get(k).copied().unwrap_or(0.0);
            for (k, x) in fv.terms().chain(std::iter::once((DELTA_KEY, delta_x))) {
                let reg = if regularized(k) { lambda2 * weight(k) } else { 0.0 };
                add_to(g, k, g_r * x + reg);
            }
        }
        (ModelParams::Linear { theta }, Gradient::Linear(g)) => {
            let h_raw = dot(theta, fv).exp2();
            let h_hat = clip.half_life(h_raw);
            let dh_ds = if h_raw > clip.h_min && h_raw < clip.h_max { LN2 * h_hat } else { 0.0 };
            let point = curve(h_hat, obs.delta_days, state.multiplier(fv), clip);
            let dl_dh = 2.0 * (point.p_hat - p) * point.dp_dh + 2.0 * hyper.alpha * (h_hat - h);
            let g_s = dl_dh * dh_ds;
            for (k, x) in fv.terms() {
                let reg = if regularized(k) { lambda2 * theta.get(k).copied().unwrap_or(0.0) } else { 0.0 };
                add_to(g, k, g_s * x + reg);
            }
        }
        (ModelParams::Neural(net), Gradient::Neural(g)) => {
            let act = net.forward(&fv.dense)?;
            let h_hat = clip.half_life(act.raw);
            // The floor is straight-through; the ceiling stops gradient.
            let dh_draw = if act.raw < clip.h_max { 1.0 } else { 0.0 };
            let point = curve(h_hat, obs.delta_days, state.multiplier(fv), clip);
            let dl_dh = 2.0 * (point.p_hat - p) * point.dp_dh + 2.0 * hyper.alpha * (h_hat - h);
            let g_raw = dl_dh * dh_draw;
            for j in 0..net.hidden_dim() {
                g.w2[j] += g_raw * act.hidden[j] + lambda2 * net.w2[j];
                let g_pre = if act.pre[j] > 0.0 { g_raw * net.w2[j] } else { 0.0 };
                for (i, x) in fv.dense.iter().enumerate() {
                    g.w1[i][j] += g_pre * x + lambda2 * net.w1[i][j];
                }
                if let Some(b1) = g.b1.as_mut() {
                    b1[j] += g_pre;
                }
            }
            if let Some(b2) = g.b2.as_mut() {
                *b2 += g_raw;
            }
        }
        _ => {
            return Err(Error::Structural(format!(
                "gradient shape does not match model kind {}",
                state.kind
            )))
        }
    }
    Ok(breakdown)
}

/// Exact gradient of [`event_loss`] for one event.
pub fn gradient(
    state: &ModelState,
    fv: &FeatureVector,
    event: &ReviewEvent,
    hyper: &Hyperparameters,
) -> Result<Gradient> {
    let mut g = Gradient::zeros_like(state)?;
    gradient_into(state, fv, event.into(), hyper, &mut g)?;
    Ok(g)
}

/// Tracks per-weight update counts for [`Optimizer::Adaptive`].
#[derive(Default)]
struct UpdateCounts {
    linear: BTreeMap<String, f64>,
    neural: Option<Network>,
}

/// Applies `weights -= rate * gradient`.
pub fn apply_step(state: &mut ModelState, grad: &Gradient, learning_rate: f64) -> Result<()> {
    apply_step_with(state, grad, learning_rate, Optimizer::Sgd, &mut UpdateCounts::default())
}

fn apply_step_with(
    state: &mut ModelState,
    grad: &Gradient,
    learning_rate: f64,
    optimizer: Optimizer,
    counts: &mut UpdateCounts,
) -> Result<()> {
    let rate = |count: &mut f64| match optimizer {
        Optimizer::Sgd => learning_rate,
        Optimizer::Adaptive => {
            let r = learning_rate / (1.0 + *count).sqrt();
            *count += 1.0;
            r
        }
    };
    match (&mut state.params, grad) {
        (ModelParams::Linear { theta }, Gradient::Linear(g)) => {
            for (k, gv) in g {
                let count = counts.linear.entry(k.clone()).or_default();
                let r = rate(count);
                let w = theta.entry(k.clone()).or_insert(0.0);
                *w -= r * gv;
            }
        }
        (ModelParams::Neural(net), Gradient::Neural(g)) => {
            let c = counts
                .neural
                .get_or_insert_with(|| Network::zeros(net.inputs(), net.hidden_dim(), net.b1.is_some()));
            for ((w_row, g_row), c_row) in net.w1.iter_mut().zip(&g.w1).zip(c.w1.iter_mut()) {
                for ((w, gv), cv) in w_row.iter_mut().zip(g_row).zip(c_row.iter_mut()) {
                    *w -= rate(cv) * gv;
                }
            }
            for ((w, gv), cv) in net.w2.iter_mut().zip(&g.w2).zip(c.w2.iter_mut()) {
                *w -= rate(cv) * gv;
            }
            if let (Some(b), Some(gb), Some(cb)) = (net.b1.as_mut(), g.b1.as_ref(), c.b1.as_mut()) {
                for ((w, gv), cv) in b.iter_mut().zip(gb).zip(cb.iter_mut()) {
                    *w -= rate(cv) * gv;
                }
            }
            if let (Some(b), Some(gb), Some(cb)) = (net.b2.as_mut(), g.b2, c.b2.as_mut()) {
                *b -= rate(cb) * gb;
            }
        }
        _ => return Err(Error::Structural("gradient does not match parameters".into())),
    }
    Ok(())
}

/// Initial parameters: zeros for linear kinds, seeded uniform for neural.
pub fn initial_state(kind: ModelKind, features: FeatureExtractor, hyper: &Hyperparameters) -> ModelState {
    let params = if kind.is_neural() {
        let mut rng = seed::rng(hyper.seed, "init");
        let s = hyper.init_scale;
        let mut draw = || if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
        let mut net = Network::zeros(NUM_DENSE, hyper.hidden_dim, hyper.neural_bias);
        net.w1.iter_mut().flatten().for_each(|w| *w = draw());
        net.w2.iter_mut().for_each(|w| *w = draw());
        ModelParams::Neural(net)
    } else if kind.is_trainable() {
        ModelParams::Linear { theta: BTreeMap::new() }
    } else {
        ModelParams::Schedule
    };
    ModelState {
        kind,
        clip: Clip::default(),
        hyperparameters: *hyper,
        features,
        params,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_events: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// One JSON object per line.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Fits the extractor on `train` with the kind's default flags, then trains.
pub fn sgd_train(
    train: &[ReviewEvent],
    kind: ModelKind,
    lexicons: &LexiconBundle,
    hyper: &Hyperparameters,
) -> Result<(ModelState, TrainingLog)> {
    let extractor = FeatureExtractor::fit(train, lexicons, kind.default_flags());
    sgd_train_with(train, kind, extractor, lexicons, hyper)
}

pub fn sgd_train_with(
    train: &[ReviewEvent],
    kind: ModelKind,
    extractor: FeatureExtractor,
    lexicons: &LexiconBundle,
    hyper: &Hyperparameters,
) -> Result<(ModelState, TrainingLog)> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(Error::NoData("no training events".into()));
    }
    let mut state = initial_state(kind, extractor, hyper);
    let mut log = TrainingLog::default();
    if !kind.is_trainable() {
        return Ok((state, log));
    }
    let features: Vec<FeatureVector> = train
        .par_iter()
        .map(|e| state.features.extract(e, lexicons))
        .collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = seed::rng(hyper.seed, "shuffle");
    let mut acc = Gradient::zeros_like(&state)?;
    let mut counts = UpdateCounts::default();

    for epoch in 0..hyper.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = LossBreakdown::default();
        for batch in order.chunks(hyper.minibatch_size) {
            acc.clear();
            for &i in batch {
                let l = gradient_into(&state, &features[i], (&train[i]).into(), hyper, &mut acc)?;
                epoch_loss.add(&l);
            }
            acc.scale(1.0 / batch.len() as f64);
            apply_step_with(&mut state, &acc, hyper.learning_rate, hyper.optimizer, &mut counts)?;
        }
        let mean = epoch_loss.scaled(1.0 / train.len() as f64);
        if !mean.total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("mean loss is {}", mean.total),
            });
        }
        if let Err(e) = state.validate() {
            return Err(Error::Diverged { epoch, detail: e.to_string() });
        }
        log::debug!("{kind} epoch {epoch}: mean loss {:.6}", mean.total);
        log.epochs.push(EpochLog {
            epoch,
            train_events: train.len(),
            loss: mean,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((state, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub kind: ModelKind,
    pub trials: usize,
    pub resampled: usize,
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub passed: bool,
}

/// Relative error threshold for analytic vs. central-difference gradients.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor so near-zero components compare absolutely.
const FD_FLOOR: f64 = 1e-6;

fn trial_extractor(kind: ModelKind) -> FeatureExtractor {
    use crate::lexicon::{dense_feature_keys, FeatureStats, NormalizationStats, UserIndex};
    let unit = FeatureStats { mean: 0.5, min: 0.0, max: 1.0 };
    FeatureExtractor {
        dense_order: dense_feature_keys(),
        flags: kind.default_flags(),
        stats: NormalizationStats { dense: [unit; NUM_DENSE], complexity_mean: 1.0 },
        users: UserIndex::default(),
    }
}

fn random_trial<R: Rng>(kind: ModelKind, rng: &mut R, hyper: &Hyperparameters) -> (ModelState, FeatureVector, Observation) {
    let flags: FeatureFlags = kind.default_flags();
    let seen: u32 = rng.random_range(1..=20);
    let correct: u32 = rng.random_range(0..=seen);
    let fv = FeatureVector {
        dense: std::array::from_fn(|_| rng.random_range(0.0..=1.0)),
        imputed: [false; NUM_DENSE],
        interaction: flags
            .interaction
            .then(|| [(1.0 + f64::from(seen)).sqrt(), (1.0 + f64::from(correct)).sqrt()]),
        sparse_tag: flags
            .lexeme_tags
            .then(|| std::sync::Arc::from(format!("lex:w{}/w<n>", rng.random_range(0..50)))),
        dense_terms: flags.dense,
        history_seen: seen,
        history_correct: correct,
        complexity_raw: rng.random_range(0.5..=2.0),
    };
    let obs = Observation {
        recall: rng.random_range(0.02..=0.98),
        delta_days: rng.random_range((0.05f64).ln()..=(30f64).ln()).exp(),
    };
    let mut state = initial_state(kind, trial_extractor(kind), hyper);
    match &mut state.params {
        ModelParams::Linear { theta } => {
            let keys: Vec<String> = fv.terms().map(|(k, _)| k.to_owned()).collect();
            for k in keys {
                theta.insert(k, rng.random_range(-0.6..=0.6));
            }
            if kind == ModelKind::Linreg {
                theta.insert(DELTA_KEY.to_owned(), rng.random_range(-0.3..=0.1));
            }
        }
        ModelParams::Neural(net) => {
            net.w1.iter_mut().flatten().for_each(|w| *w = rng.random_range(-1.0..=1.0));
            net.w2.iter_mut().for_each(|w| *w = rng.random_range(-1.0..=3.0));
            if let Some(b) = net.b1.as_mut() {
                b.iter_mut().for_each(|w| *w = rng.random_range(-0.5..=0.5));
            }
            if let Some(b) = net.b2.as_mut() {
                *b = rng.random_range(0.0..=1.0);
            }
        }
        ModelParams::Schedule => {}
    }
    (state, fv, obs)
}

/// True when every clip and ReLU in the forward pass is comfortably away
/// from its switching point.
fn away_from_kinks(state: &ModelState, fv: &FeatureVector, obs: Observation) -> Result<bool> {
    const REL: f64 = 1e-3;
    const ABS: f64 = 1e-3;
    let clip = &state.clip;
    if state.kind == ModelKind::Linreg {
        let theta = state.theta().expect("linear");
        let r = linreg_raw(theta, fv, obs.delta_days);
        return Ok(r > ABS && r < 1.0 - ABS);
    }
    let h_raw = match &state.params {
        ModelParams::Neural(net) => {
            let act = net.forward(&fv.dense)?;
            if act.pre.iter().any(|z| z.abs() < ABS) {
                return Ok(false);
            }
            act.raw
        }
        _ => state.raw_half_life(fv)?,
    };
    if !(h_raw > clip.h_min * (1.0 + REL) && h_raw < clip.h_max * (1.0 - REL)) {
        return Ok(false);
    }
    let p = raw_recall(h_raw, obs.delta_days, state.multiplier(fv)).unwrap_or(1.0);
    Ok(p > clip.p_min * (1.0 + REL) && p < clip.p_max - ABS * (1.0 - clip.p_max))
}

fn perturbed_loss(
    state: &ModelState,
    name: &str,
    shift: f64,
    fv: &FeatureVector,
    obs: Observation,
    hyper: &Hyperparameters,
) -> Result<f64> {
    let mut s = state.clone();
    match &mut s.params {
        ModelParams::Linear { theta } => *theta.entry(name.to_owned()).or_insert(0.0) += shift,
        ModelParams::Neural(net) => {
            let slot = network_slot(net, name)
                .ok_or_else(|| Error::Structural(format!("unknown network parameter {name}")))?;
            *slot += shift;
        }
        ModelParams::Schedule => {}
    }
    Ok(event_loss(&s, fv, obs, hyper)?.total)
}

fn network_slot<'a>(net: &'a mut Network, name: &str) -> Option<&'a mut f64> {
    let idx = |s: &str| -> Vec<usize> {
        s.split(['[', ']'])
            .filter(|p| !p.is_empty())
            .filter_map(|p| p.parse().ok())
            .collect()
    };
    if name == "b2" {
        return net.b2.as_mut();
    }
    let ix = idx(name);
    match (name.get(..2)?, ix.as_slice()) {
        ("w1", [i, j]) => net.w1.get_mut(*i)?.get_mut(*j),
        ("w2", [j]) => net.w2.get_mut(*j),
        ("b1", [j]) => net.b1.as_mut()?.get_mut(*j),
        _ => None,
    }
}

/// Compares analytic gradients against central finite differences of the
/// loss on `num_trials` random states and events. Samples landing near a
/// clip boundary or ReLU kink are redrawn.
pub fn gradient_check(kind: ModelKind, num_trials: usize, seed: u64) -> Result<GradientCheckReport> {
    if !kind.is_trainable() {
        return Err(Error::Config(format!("{kind} has no trainable parameters")));
    }
    let mut rng = seed::rng(seed, "gradient-check");
    let mut hyper = Hyperparameters::defaults_for(kind);
    hyper.alpha = 0.01;
    hyper.lambda = 0.1;
    let mut report = GradientCheckReport {
        kind,
        trials: 0,
        resampled: 0,
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        passed: true,
    };
    while report.trials < num_trials {
        let (state, fv, obs) = random_trial(kind, &mut rng, &hyper);
        if !away_from_kinks(&state, &fv, obs)? {
            report.resampled += 1;
            if report.resampled > 1000 * num_trials.max(1) {
                return Err(Error::Domain(format!("{kind}: could not sample differentiable trials")));
            }
            continue;
        }
        let mut analytic = Gradient::zeros_like(&state)?;
        gradient_into(&state, &fv, obs, &hyper, &mut analytic)?;
        for (name, a) in analytic.entries() {
            let plus = perturbed_loss(&state, &name, FD_STEP, &fv, obs, &hyper)?;
            let minus = perturbed_loss(&state, &name, -FD_STEP, &fv, obs, &hyper)?;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            if rel > report.max_relative_error || !rel.is_finite() {
                report.max_relative_error = rel;
                report.worst_parameter = name;
            }
        }
        report.trials += 1;
    }
    report.passed = report.max_relative_error < GRADIENT_TOLERANCE;
    Ok(report)
}
