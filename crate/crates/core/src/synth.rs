//! Synthetic learners with known forgetting curves.
//!
//! Review logs are generated from a ground-truth model so that training can
//! be validated by how well it recovers the generating curve. Each synthetic
//! word gets psycholinguistic scores drawn once, and these are emitted as
//! ordinary lexicon files so the whole ingestion and extraction path runs
//! unchanged on synthetic data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_review_log, ReviewEvent};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::lexicon::{ColumnRef, FeatureExtractor, LexicalFeatures, LexiconBundle, LexiconKind, LexiconSource};
use crate::model::{ModelKind, ModelParams, ModelState};
use crate::seed;
use crate::train::{initial_state, Hyperparameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Noise {
    /// `observed_recall` is the true probability.
    Deterministic,
    /// `observed_recall = k / n` with `k ~ Binomial(n, p)`.
    Binomial { session_seen: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub kind: ModelKind,
    pub theta: BTreeMap<String, f64>,
}

impl GroundTruth {
    pub fn hlr() -> Self {
        GroundTruth {
            kind: ModelKind::Hlr,
            theta: weights(&[("bias", -0.5), ("history_seen", -0.3), ("history_correct", 1.0)]),
        }
    }

    /// Complexity-modulated curve where word features shape the half-life.
    pub fn c_hlr_plus() -> Self {
        GroundTruth {
            kind: ModelKind::CHlrPlus,
            theta: weights(&[
                ("bias", 0.5),
                ("history_seen", -0.2),
                ("history_correct", 0.6),
                ("concreteness", 0.3),
                ("percent_known", 0.5),
            ]),
        }
    }

    pub fn for_kind(kind: ModelKind) -> Result<Self> {
        match kind {
            ModelKind::Hlr => Ok(Self::hlr()),
            ModelKind::CHlrPlus => Ok(Self::c_hlr_plus()),
            other => Err(Error::Config(format!(
                "no default ground truth for {other}; use hlr or c_hlr_plus"
            ))),
        }
    }
}

pub fn weights(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| ((*k).to_owned(), *v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_users: usize,
    pub num_words: usize,
    pub events_per_pair: usize,
    pub ground_truth: GroundTruth,
    /// Elapsed time is log-uniform over this range, in days.
    pub delta_range: (f64, f64),
    pub noise: Noise,
    /// Raw complexity scores are uniform over this range.
    pub complexity_range: (f64, f64),
    pub max_history: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_users: 50,
            num_words: 100,
            events_per_pair: 4,
            ground_truth: GroundTruth::hlr(),
            delta_range: (0.01, 60.0),
            noise: Noise::Binomial { session_seen: 10 },
            complexity_range: (0.5, 2.0),
            max_history: 20,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// 200 users x 250 words x 4 reviews = 200k events, each session 50
    /// binomial draws.
    pub fn desk_scale(ground_truth: GroundTruth, seed: u64) -> Self {
        SynthSpec {
            num_users: 200,
            num_words: 250,
            events_per_pair: 4,
            ground_truth,
            noise: Noise::Binomial { session_seen: 50 },
            seed,
            ..Default::default()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn num_events(&self) -> usize {
        self.num_users * self.num_words * self.events_per_pair
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.delta_range;
        if self.num_users == 0 || self.num_words == 0 || self.events_per_pair == 0 || self.max_history == 0 {
            return Err(Error::Config("synthetic counts must be positive".into()));
        }
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Config(format!("bad delta range {:?}", self.delta_range)));
        }
        let (clo, chi) = self.complexity_range;
        if !(clo >= 0.0 && clo <= chi && chi.is_finite()) {
            return Err(Error::Config(format!("bad complexity range {:?}", self.complexity_range)));
        }
        if matches!(self.noise, Noise::Binomial { session_seen: 0 }) {
            return Err(Error::Config("binomial noise needs session_seen >= 1".into()));
        }
        if !(self.ground_truth.kind.is_linear() && self.ground_truth.kind != ModelKind::Linreg) {
            return Err(Error::Config(format!(
                "ground truth must be a half-life regression kind, got {}",
                self.ground_truth.kind
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWord {
    pub word: String,
    pub complexity: f64,
    pub concreteness: f64,
    pub percent_known: f64,
    pub frequency_count: u64,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub events: Vec<ReviewEvent>,
    pub words: Vec<SynthWord>,
    pub ground_truth: ModelState,
}

/// Paths written by [`SynthDataset::write_to`].
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub reviews: PathBuf,
    pub ground_truth: PathBuf,
    pub lexicons: Vec<LexiconSource>,
}

impl SynthDataset {
    pub fn lexicons(&self) -> LexiconBundle {
        let mut bundle = LexiconBundle::new();
        for w in &self.words {
            bundle.insert(&w.word, word_features(w));
        }
        bundle
    }

    /// Writes the review log, three lexicon files and the ground-truth model.
    pub fn write_to(&self, dir: &Path) -> Result<SynthFiles> {
        let reviews = dir.join("reviews.csv");
        let mut buf = Vec::new();
        write_review_log(&mut buf, &self.events)?;
        write_atomic(&reviews, &buf)?;

        let mut complexity = String::from("word\tcomplexity\n");
        let mut norms = String::from("Word,Conc.M,Percent_known\n");
        let mut subtlex = String::from("Word,FREQcount\n");
        for w in &self.words {
            complexity.push_str(&format!("{}\t{}\n", w.word, w.complexity));
            norms.push_str(&format!("{},{},{}\n", w.word, w.concreteness, w.percent_known));
            subtlex.push_str(&format!("{},{}\n", w.word, w.frequency_count));
        }
        let complexity_path = dir.join("complexity.tsv");
        let norms_path = dir.join("concreteness.csv");
        let subtlex_path = dir.join("subtlex.csv");
        write_atomic(&complexity_path, complexity.as_bytes())?;
        write_atomic(&norms_path, norms.as_bytes())?;
        write_atomic(&subtlex_path, subtlex.as_bytes())?;

        let ground_truth = dir.join("ground_truth.json");
        self.ground_truth.save(&ground_truth)?;

        let named = |path: PathBuf, kind, word: &str, values: &[&str]| LexiconSource {
            path,
            kind,
            word_column: ColumnRef::Name(word.into()),
            value_columns: Some(values.iter().map(|v| ColumnRef::Name((*v).into())).collect()),
            delimiter: None,
        };
        Ok(SynthFiles {
            reviews,
            ground_truth,
            lexicons: vec![
                named(complexity_path, LexiconKind::Complexity, "word", &["complexity"]),
                named(norms_path, LexiconKind::ConcretenessNorms, "Word", &["Conc.M", "Percent_known"]),
                named(subtlex_path, LexiconKind::Subtlex, "Word", &["FREQcount"]),
            ],
        })
    }
}

fn word_features(w: &SynthWord) -> LexicalFeatures {
    LexicalFeatures {
        complexity: Some(w.complexity),
        concreteness: Some(w.concreteness),
        percent_known: Some(w.percent_known),
        log_frequency: Some((w.frequency_count as f64 + 1.0).log10()),
    }
}

/// Generates a synthetic review log. Deterministic given the spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed, "synth");

    let words: Vec<SynthWord> = (0..spec.num_words)
        .map(|i| {
            let (clo, chi) = spec.complexity_range;
            SynthWord {
                word: format!("w{i:05}"),
                complexity: clo + (chi - clo) * rng.random::<f64>(),
                concreteness: 1.0 + 4.0 * rng.random::<f64>(),
                percent_known: rng.random::<f64>(),
                frequency_count: (10f64.powf(5.0 * rng.random::<f64>()) - 1.0).floor().max(0.0) as u64,
            }
        })
        .collect();

    let users: Vec<Arc<str>> = (0..spec.num_users).map(|u| Arc::from(format!("u:{u:05}"))).collect();
    let lexemes: Vec<(Arc<str>, Arc<str>)> = words
        .iter()
        .enumerate()
        .map(|(i, w)| (Arc::from(format!("{i:032x}")), Arc::from(format!("{0}/{0}<n><sg>", w.word))))
        .collect();
    let language: Arc<str> = Arc::from("en");
    let ui: Arc<str> = Arc::from("es");

    let mut slots: Vec<(usize, usize)> = Vec::with_capacity(spec.num_events());
    for u in 0..spec.num_users {
        for w in 0..spec.num_words {
            for _ in 0..spec.events_per_pair {
                slots.push((u, w));
            }
        }
    }
    slots.shuffle(&mut rng);

    let (dlo, dhi) = (spec.delta_range.0.ln(), spec.delta_range.1.ln());
    let mut events: Vec<ReviewEvent> = slots
        .iter()
        .enumerate()
        .map(|(t, &(u, w))| {
            let history_seen = rng.random_range(1..=spec.max_history);
            let history_correct = rng.random_range(0..=history_seen);
            ReviewEvent {
                observed_recall: 0.0,
                delta_days: rng.random_range(dlo..=dhi).exp(),
                user_id: users[u].clone(),
                lexeme_id: lexemes[w].0.clone(),
                lexeme_string: lexemes[w].1.clone(),
                learning_language: language.clone(),
                ui_language: ui.clone(),
                history_seen,
                history_correct,
                session_seen: 1,
                session_correct: 0,
                timestamp: 1_360_000_000 + t as i64 * 60,
            }
        })
        .collect();

    let bundle = {
        let mut b = LexiconBundle::new();
        for w in &words {
            b.insert(&w.word, word_features(w));
        }
        b
    };
    let kind = spec.ground_truth.kind;
    let extractor = FeatureExtractor::fit(&events, &bundle, kind.default_flags());
    let mut hyper = Hyperparameters::defaults_for(kind);
    hyper.seed = spec.seed;
    let mut truth = initial_state(kind, extractor, &hyper);
    truth.params = ModelParams::Linear {
        theta: spec.ground_truth.theta.clone(),
    };
    truth.validate()?;

    for event in events.iter_mut() {
        let fv = truth.features.extract(event, &bundle);
        let p = truth.predict(&fv, event.delta_days)?.p_hat;
        match spec.noise {
            Noise::Deterministic => {
                event.observed_recall = p;
                event.session_seen = 100;
                event.session_correct = (p * 100.0).round() as u32;
            }
            Noise::Binomial { session_seen } => {
                let k = Binomial::new(u64::from(session_seen), p)
                    .map_err(|e| Error::Domain(format!("binomial({session_seen}, {p}): {e}")))?
                    .sample(&mut rng) as u32;
                event.session_seen = session_seen;
                event.session_correct = k;
                event.observed_recall = f64::from(k) / f64::from(session_seen);
            }
        }
    }

    Ok(SynthDataset {
        events,
        words,
        ground_truth: truth,
    })
}
