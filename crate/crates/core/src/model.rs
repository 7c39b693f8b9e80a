//! Forward computation for every model family.
//!
//! All half-life models share the exponential forgetting curve
//! `p = 2^(-delta * c / h)` where `c` is a per-word complexity multiplier
//! (1 for every kind except the complexity-modulated ones). They differ in
//! how the half-life `h` is estimated:
//!
//! | kind            | half-life                                   |
//! |-----------------|---------------------------------------------|
//! | `pimsleur`      | 5 s, times 5 per prior exposure             |
//! | `leitner`       | `2^(correct - wrong)` days                  |
//! | `hlr`..`c_hlr_plus` | `2^(theta . x)`                         |
//! | `n_hlr_plus`, `cn_hlr_plus` | `relu(x W1) . w2`, emitted directly |
//!
//! `linreg` predicts recall directly as a clipped linear function.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{FeatureExtractor, FeatureFlags, FeatureVector, DELTA_KEY, NUM_DENSE};
use crate::train::Hyperparameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pimsleur,
    Leitner,
    Linreg,
    Hlr,
    HlrLex,
    HlrPlus,
    CHlrPlus,
    NHlrPlus,
    CnHlrPlus,
}

impl ModelKind {
    /// Ladder order, from the oldest baseline to the neural variants.
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Pimsleur,
        ModelKind::Leitner,
        ModelKind::Linreg,
        ModelKind::Hlr,
        ModelKind::HlrLex,
        ModelKind::HlrPlus,
        ModelKind::CHlrPlus,
        ModelKind::NHlrPlus,
        ModelKind::CnHlrPlus,
    ];

    pub const TRAINABLE: [ModelKind; 7] = [
        ModelKind::Linreg,
        ModelKind::Hlr,
        ModelKind::HlrLex,
        ModelKind::HlrPlus,
        ModelKind::CHlrPlus,
        ModelKind::NHlrPlus,
        ModelKind::CnHlrPlus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Pimsleur => "pimsleur",
            ModelKind::Leitner => "leitner",
            ModelKind::Linreg => "linreg",
            ModelKind::Hlr => "hlr",
            ModelKind::HlrLex => "hlr_lex",
            ModelKind::HlrPlus => "hlr_plus",
            ModelKind::CHlrPlus => "c_hlr_plus",
            ModelKind::NHlrPlus => "n_hlr_plus",
            ModelKind::CnHlrPlus => "cn_hlr_plus",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Pimsleur => "Pimsleur",
            ModelKind::Leitner => "Leitner",
            ModelKind::Linreg => "Linear Regression",
            ModelKind::Hlr => "HLR",
            ModelKind::HlrLex => "HLR-lex",
            ModelKind::HlrPlus => "HLR+",
            ModelKind::CHlrPlus => "C-HLR+",
            ModelKind::NHlrPlus => "N-HLR+",
            ModelKind::CnHlrPlus => "CN-HLR+",
        }
    }

    pub fn is_trainable(self) -> bool {
        !matches!(self, ModelKind::Pimsleur | ModelKind::Leitner)
    }

    pub fn is_neural(self) -> bool {
        matches!(self, ModelKind::NHlrPlus | ModelKind::CnHlrPlus)
    }

    pub fn is_linear(self) -> bool {
        self.is_trainable() && !self.is_neural()
    }

    /// Kinds whose recall curve is steepened by word complexity.
    pub fn uses_complexity(self) -> bool {
        matches!(self, ModelKind::CHlrPlus | ModelKind::CnHlrPlus)
    }

    pub fn default_flags(self) -> FeatureFlags {
        let (dense, interaction, lexeme_tags) = match self {
            ModelKind::Pimsleur | ModelKind::Leitner => (false, false, false),
            ModelKind::Linreg => (true, false, false),
            ModelKind::Hlr => (false, true, false),
            ModelKind::HlrLex => (false, true, true),
            ModelKind::HlrPlus | ModelKind::CHlrPlus => (true, true, true),
            ModelKind::NHlrPlus | ModelKind::CnHlrPlus => (true, false, false),
        };
        FeatureFlags {
            dense,
            interaction,
            lexeme_tags,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::Config(format!("unknown model kind `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Numeric guard rails on half-lives (days) and probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub h_min: f64,
    pub h_max: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl Default for Clip {
    fn default() -> Self {
        Clip {
            h_min: 15.0 / (24.0 * 60.0),
            h_max: 274.0,
            p_min: 0.0001,
            p_max: 0.9999,
        }
    }
}

impl Clip {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.h_min
            && self.h_min < self.h_max
            && self.h_max.is_finite()
            && 0.0 < self.p_min
            && self.p_min < self.p_max
            && self.p_max < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid clip bounds {self:?}")))
        }
    }

    pub fn half_life(&self, h: f64) -> f64 {
        h.clamp(self.h_min, self.h_max)
    }

    pub fn probability(&self, p: f64) -> f64 {
        p.clamp(self.p_min, self.p_max)
    }
}

/// Curve value before clipping, or `None` when `delta == 0` (recall is
/// exactly 1 there).
pub(crate) fn raw_recall(h_hat: f64, delta_days: f64, multiplier: f64) -> Option<f64> {
    (delta_days != 0.0).then(|| (-delta_days * multiplier / h_hat).exp2())
}

/// `2^(-delta * multiplier / h)`, clipped into the probability range except
/// at `delta == 0`, which returns exactly 1.
pub fn recall_probability(h_hat: f64, delta_days: f64, multiplier: f64, clip: &Clip) -> Result<f64> {
    if !(h_hat > 0.0) {
        return Err(Error::Domain(format!("half-life must be positive, got {h_hat}")));
    }
    Ok(match raw_recall(h_hat, delta_days, multiplier) {
        None => 1.0,
        Some(p) => clip.probability(p),
    })
}

/// Half-life implied by an observed recall rate: `-delta / log2(p)` with
/// `p` and the result both clipped.
pub fn observed_half_life(observed_recall: f64, delta_days: f64, clip: &Clip) -> f64 {
    let p = clip.probability(observed_recall);
    clip.half_life(-delta_days / p.log2())
}

pub(crate) fn dot(theta: &BTreeMap<String, f64>, fv: &FeatureVector) -> f64 {
    fv.terms()
        .map(|(k, x)| theta.get(k).copied().unwrap_or(0.0) * x)
        .sum()
}

/// `2^(theta . x)` clipped into the half-life range.
pub fn linear_half_life(theta: &BTreeMap<String, f64>, fv: &FeatureVector, clip: &Clip) -> f64 {
    clip.half_life(dot(theta, fv).exp2())
}

/// Single-hidden-layer ReLU network mapping dense features to a half-life.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    /// `[inputs][hidden]`, row-major.
    pub w1: Vec<Vec<f64>>,
    pub w2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub raw: f64,
}

impl Network {
    pub fn zeros(inputs: usize, hidden: usize, bias: bool) -> Self {
        Network {
            w1: vec![vec![0.0; hidden]; inputs],
            w2: vec![0.0; hidden],
            b1: bias.then(|| vec![0.0; hidden]),
            b2: bias.then_some(0.0),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w1.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w2.len()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_dim();
        if h == 0 || self.w1.is_empty() {
            return Err(Error::Structural("network has an empty layer".into()));
        }
        if let Some(row) = self.w1.iter().position(|r| r.len() != h) {
            return Err(Error::Structural(format!(
                "w1 row {row} has {} columns, w2 has {h} entries",
                self.w1[row].len()
            )));
        }
        if self.b1.as_ref().is_some_and(|b| b.len() != h) {
            return Err(Error::Structural("b1 length does not match hidden size".into()));
        }
        if self.b1.is_some() != self.b2.is_some() {
            return Err(Error::Structural("b1 and b2 must both be present or absent".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Activations> {
        if x.len() != self.inputs() {
            return Err(Error::Structural(format!(
                "network expects {} inputs, got {}",
                self.inputs(),
                x.len()
            )));
        }
        let h = self.hidden_dim();
        let mut pre = match &self.b1 {
            Some(b) => b.clone(),
            None => vec![0.0; h],
        };
        for (xi, row) in x.iter().zip(&self.w1) {
            for (z, w) in pre.iter_mut().zip(row) {
                *z += xi * w;
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
        let raw = hidden.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>() + self.b2.unwrap_or(0.0);
        Ok(Activations { pre, hidden, raw })
    }
}

/// Network output clipped into the half-life range.
pub fn neural_half_life(net: &Network, dense_inputs: &[f64], clip: &Clip) -> Result<f64> {
    Ok(clip.half_life(net.forward(dense_inputs)?.raw))
}

const PIMSLEUR_START_SECONDS: f64 = 5.0;
const PIMSLEUR_FACTOR: f64 = 5.0;

/// Pre-clip half-life of the ×5 Pimsleur schedule, in days.
pub fn pimsleur_raw(history_seen: u32) -> f64 {
    let exponent = history_seen.saturating_sub(1).min(1000) as i32;
    PIMSLEUR_START_SECONDS * PIMSLEUR_FACTOR.powi(exponent) / crate::dataset::SECONDS_PER_DAY
}

pub fn pimsleur_half_life(history_seen: u32, clip: &Clip) -> f64 {
    clip.half_life(pimsleur_raw(history_seen))
}

/// `2^(correct - wrong)` days, clipped.
pub fn leitner_half_life(history_correct: u32, history_wrong: u32, clip: &Clip) -> f64 {
    let box_index = i64::from(history_correct) - i64::from(history_wrong);
    clip.half_life((box_index.clamp(-1100, 1100) as f64).exp2())
}

/// Input value the linear-regression baseline uses for elapsed time.
pub fn linreg_delta_input(delta_days: f64) -> f64 {
    (1.0 + delta_days).log2()
}

pub(crate) fn linreg_raw(theta: &BTreeMap<String, f64>, fv: &FeatureVector, delta_days: f64) -> f64 {
    dot(theta, fv) + theta.get(DELTA_KEY).copied().unwrap_or(0.0) * linreg_delta_input(delta_days)
}

/// `theta . [x, delta]` clipped to [0, 1].
pub fn linreg_recall(theta: &BTreeMap<String, f64>, fv: &FeatureVector, delta_days: f64) -> f64 {
    linreg_raw(theta, fv, delta_days).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelParams {
    Schedule,
    Linear { theta: BTreeMap<String, f64> },
    Neural(Network),
}

/// A fitted (or fixed-schedule) model with everything needed to reproduce
/// its predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub kind: ModelKind,
    pub clip: Clip,
    pub hyperparameters: Hyperparameters,
    pub features: FeatureExtractor,
    pub params: ModelParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub p_hat: f64,
    /// `None` for linear regression, which has no half-life.
    pub h_hat: Option<f64>,
}

impl ModelState {
    pub fn validate(&self) -> Result<()> {
        self.clip.validate()?;
        self.features.check_order()?;
        match (&self.params, self.kind) {
            (ModelParams::Schedule, k) if !k.is_trainable() => Ok(()),
            (ModelParams::Linear { theta }, k) if k.is_linear() => {
                match theta.iter().find(|(_, v)| !v.is_finite()) {
                    Some((key, v)) => Err(Error::Structural(format!("weight `{key}` is {v}"))),
                    None => Ok(()),
                }
            }
            (ModelParams::Neural(net), k) if k.is_neural() => {
                net.validate()?;
                if net.inputs() != NUM_DENSE {
                    return Err(Error::Structural(format!(
                        "network has {} inputs, expected {NUM_DENSE} dense features",
                        net.inputs()
                    )));
                }
                Ok(())
            }
            (_, k) => Err(Error::Structural(format!("parameters do not match model kind {k}"))),
        }
    }

    pub fn theta(&self) -> Option<&BTreeMap<String, f64>> {
        match &self.params {
            ModelParams::Linear { theta } => Some(theta),
            _ => None,
        }
    }

    pub fn network(&self) -> Option<&Network> {
        match &self.params {
            ModelParams::Neural(net) => Some(net),
            _ => None,
        }
    }

    /// Complexity multiplier this model applies to a feature vector.
    pub fn multiplier(&self, fv: &FeatureVector) -> f64 {
        if self.kind.uses_complexity() {
            fv.complexity_raw
        } else {
            1.0
        }
    }

    /// Pre-clip half-life estimate.
    pub(crate) fn raw_half_life(&self, fv: &FeatureVector) -> Result<f64> {
        match (&self.params, self.kind) {
            (ModelParams::Schedule, ModelKind::Pimsleur) => Ok(pimsleur_raw(fv.history_seen)),
            (ModelParams::Schedule, ModelKind::Leitner) => {
                let wrong = fv.history_seen.saturating_sub(fv.history_correct);
                let box_index = (i64::from(fv.history_correct) - i64::from(wrong)).clamp(-1100, 1100);
                Ok((box_index as f64).exp2())
            }
            (ModelParams::Linear { theta }, k) if k != ModelKind::Linreg => Ok(dot(theta, fv).exp2()),
            (ModelParams::Neural(net), _) => Ok(net.forward(&fv.dense)?.raw),
            (_, k) => Err(Error::Structural(format!("model kind {k} has no half-life"))),
        }
    }

    pub fn predict(&self, fv: &FeatureVector, delta_days: f64) -> Result<Prediction> {
        if let (ModelKind::Linreg, ModelParams::Linear { theta }) = (self.kind, &self.params) {
            return Ok(Prediction {
                p_hat: linreg_recall(theta, fv, delta_days),
                h_hat: None,
            });
        }
        let h_hat = self.clip.half_life(self.raw_half_life(fv)?);
        let p_hat = recall_probability(h_hat, delta_days, self.multiplier(fv), &self.clip)?;
        Ok(Prediction {
            p_hat,
            h_hat: Some(h_hat),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let state: ModelState = serde_json::from_str(s)?;
        state.validate()?;
        Ok(state)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Structural(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }
}
