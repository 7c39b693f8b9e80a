//! Psycholinguistic lexicons and per-event feature extraction.
//!
//! Three kinds of lexicon files feed the dense features: word complexity
//! scores, concreteness norms (mean concreteness plus percent known) and
//! SUBTLEX frequency counts. Each is a delimited text file keyed by the
//! lowercase word in its first column unless configured otherwise.
//!
//! The dense feature order is fixed: user id, concreteness, percent known,
//! SUBTLEX, complexity. Model files and hidden-weight exports use this order.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{parse_lexeme, ReviewEvent};
use crate::error::{Error, Result};

pub const NUM_DENSE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenseFeature {
    UserId,
    Concreteness,
    PercentKnown,
    Subtlex,
    Complexity,
}

impl DenseFeature {
    pub const ALL: [DenseFeature; NUM_DENSE] = [
        DenseFeature::UserId,
        DenseFeature::Concreteness,
        DenseFeature::PercentKnown,
        DenseFeature::Subtlex,
        DenseFeature::Complexity,
    ];

    /// Weight-map key.
    pub fn key(self) -> &'static str {
        match self {
            DenseFeature::UserId => "user_id",
            DenseFeature::Concreteness => "concreteness",
            DenseFeature::PercentKnown => "percent_known",
            DenseFeature::Subtlex => "subtlex",
            DenseFeature::Complexity => "complexity",
        }
    }

    /// Human-readable row label.
    pub fn label(self) -> &'static str {
        match self {
            DenseFeature::UserId => "user id",
            DenseFeature::Concreteness => "concreteness",
            DenseFeature::PercentKnown => "percent known",
            DenseFeature::Subtlex => "SUBTLEX",
            DenseFeature::Complexity => "complexity",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn dense_feature_keys() -> Vec<String> {
    DenseFeature::ALL.iter().map(|f| f.key().to_owned()).collect()
}

/// Per-word scores. Fields are `None` where the word is absent from the
/// corresponding lexicon.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LexicalFeatures {
    pub complexity: Option<f64>,
    pub concreteness: Option<f64>,
    pub percent_known: Option<f64>,
    pub log_frequency: Option<f64>,
}

impl LexicalFeatures {
    fn merge_missing(&mut self, other: &LexicalFeatures) {
        self.complexity = self.complexity.or(other.complexity);
        self.concreteness = self.concreteness.or(other.concreteness);
        self.percent_known = self.percent_known.or(other.percent_known);
        self.log_frequency = self.log_frequency.or(other.log_frequency);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexiconKind {
    Complexity,
    ConcretenessNorms,
    Subtlex,
}

impl LexiconKind {
    fn value_names(self) -> &'static [&'static str] {
        match self {
            LexiconKind::Complexity => &["complexity"],
            LexiconKind::ConcretenessNorms => &["concreteness", "percent_known"],
            LexiconKind::Subtlex => &["frequency_count"],
        }
    }
}

/// A column by zero-based position or by header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

/// Where a lexicon lives and how its columns map onto features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconSource {
    pub path: PathBuf,
    pub kind: LexiconKind,
    #[serde(default = "default_word_column")]
    pub word_column: ColumnRef,
    /// Value columns in the kind's order; defaults to the columns right
    /// after the word.
    #[serde(default)]
    pub value_columns: Option<Vec<ColumnRef>>,
    /// Field delimiter; sniffed from the first line when absent.
    #[serde(default)]
    pub delimiter: Option<char>,
}

fn default_word_column() -> ColumnRef {
    ColumnRef::Index(0)
}

impl LexiconSource {
    pub fn new(path: impl Into<PathBuf>, kind: LexiconKind) -> Self {
        LexiconSource {
            path: path.into(),
            kind,
            word_column: default_word_column(),
            value_columns: None,
            delimiter: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    pub entries: HashMap<String, LexicalFeatures>,
    pub duplicates: u64,
    pub malformed: u64,
}

fn sniff_delimiter(path: &Path) -> Result<u8> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    Ok(if first.contains('\t') { b'\t' } else { b',' })
}

fn resolve(col: &ColumnRef, header: Option<&csv::StringRecord>, width: usize, role: &str) -> Result<usize> {
    match col {
        ColumnRef::Index(i) if *i < width => Ok(*i),
        ColumnRef::Index(i) => Err(Error::Format(format!(
            "missing column `{role}` (index {i}, file has {width} columns)"
        ))),
        ColumnRef::Name(name) => header
            .and_then(|h| h.iter().position(|c| c.trim().eq_ignore_ascii_case(name)))
            .ok_or_else(|| Error::Format(format!("missing column `{role}` (header `{name}`)"))),
    }
}

/// Loads one lexicon file. Duplicate words keep their first occurrence.
pub fn load_lexicon(source: &LexiconSource) -> Result<Lexicon> {
    let path = &source.path;
    let delimiter = match source.delimiter {
        Some(c) => c as u8,
        None => sniff_delimiter(path)?,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    let mut records = reader.records();
    let first = match records.next() {
        None => {
            log::warn!("lexicon {} is empty", path.display());
            return Ok(Lexicon::default());
        }
        Some(r) => r?,
    };

    let names = source.kind.value_names();
    let value_refs: Vec<ColumnRef> = match &source.value_columns {
        Some(cols) if cols.len() == names.len() => cols.clone(),
        Some(cols) => {
            return Err(Error::Config(format!(
                "{} lexicon needs {} value columns, {} configured",
                names.join("/"),
                names.len(),
                cols.len()
            )))
        }
        None => (1..=names.len()).map(ColumnRef::Index).collect(),
    };
    let uses_names = matches!(source.word_column, ColumnRef::Name(_))
        || value_refs.iter().any(|c| matches!(c, ColumnRef::Name(_)));

    let width = first.len();
    let provisional: Vec<usize> = if uses_names {
        Vec::new()
    } else {
        value_refs
            .iter()
            .zip(names)
            .map(|(c, n)| resolve(c, None, width, n))
            .collect::<Result<_>>()?
    };
    // A first row whose value cells are not numeric is a header.
    let is_header = uses_names
        || provisional
            .iter()
            .any(|&i| first.get(i).is_none_or(|v| v.parse::<f64>().is_err()));
    let header = is_header.then_some(&first);
    let word_idx = resolve(&source.word_column, header, width, "word")?;
    let value_idx: Vec<usize> = value_refs
        .iter()
        .zip(names)
        .map(|(c, n)| resolve(c, header, width, n))
        .collect::<Result<_>>()?;

    let mut lexicon = Lexicon::default();
    let ingest = |lexicon: &mut Lexicon, record: &csv::StringRecord| {
        let Some(word) = record.get(word_idx).filter(|w| !w.is_empty()) else {
            lexicon.malformed += 1;
            return;
        };
        let values: Option<Vec<f64>> = value_idx
            .iter()
            .map(|&i| record.get(i).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect();
        let Some(features) = values.and_then(|v| features_from_values(source.kind, &v)) else {
            lexicon.malformed += 1;
            return;
        };
        let word = word.to_lowercase();
        match lexicon.entries.entry(word) {
            Entry::Occupied(_) => lexicon.duplicates += 1,
            Entry::Vacant(slot) => {
                slot.insert(features);
            }
        }
    };
    if !is_header {
        ingest(&mut lexicon, &first);
    }
    for record in records {
        match record {
            Ok(r) => ingest(&mut lexicon, &r),
            Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
            Err(_) => lexicon.malformed += 1,
        }
    }
    if lexicon.entries.is_empty() {
        log::warn!("lexicon {} has no usable rows", path.display());
    }
    if lexicon.duplicates > 0 {
        log::warn!(
            "lexicon {}: {} duplicate words ignored (first occurrence kept)",
            path.display(),
            lexicon.duplicates
        );
    }
    Ok(lexicon)
}

fn features_from_values(kind: LexiconKind, values: &[f64]) -> Option<LexicalFeatures> {
    let mut f = LexicalFeatures::default();
    match kind {
        LexiconKind::Complexity => {
            let c = values[0];
            if c < 0.0 {
                return None;
            }
            f.complexity = Some(c);
        }
        LexiconKind::ConcretenessNorms => {
            let conc = values[0];
            if !(1.0..=5.0).contains(&conc) {
                return None;
            }
            // Norm files publish percent known either as a fraction or a percentage.
            let mut known = values[1];
            if known > 1.0 {
                known /= 100.0;
            }
            if !(0.0..=1.0).contains(&known) {
                return None;
            }
            f.concreteness = Some(conc);
            f.percent_known = Some(known);
        }
        LexiconKind::Subtlex => {
            let count = values[0];
            if count < 0.0 {
                return None;
            }
            f.log_frequency = Some((count + 1.0).log10());
        }
    }
    Some(f)
}

/// All lexicons merged into one word lookup.
#[derive(Debug, Clone, Default)]
pub struct LexiconBundle {
    words: HashMap<String, LexicalFeatures>,
}

impl LexiconBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(sources: &[LexiconSource]) -> Result<Self> {
        let mut bundle = LexiconBundle::new();
        for source in sources {
            bundle.add(load_lexicon(source)?);
        }
        Ok(bundle)
    }

    pub fn add(&mut self, lexicon: Lexicon) {
        for (word, features) in lexicon.entries {
            self.words.entry(word).or_default().merge_missing(&features);
        }
    }

    pub fn insert(&mut self, word: &str, features: LexicalFeatures) {
        self.words.entry(word.to_lowercase()).or_default().merge_missing(&features);
    }

    pub fn lookup(&self, word: &str) -> LexicalFeatures {
        self.words.get(word).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Maps each learner to a scalar in [0, 1] by first-appearance rank.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "UserList", into = "UserList")]
pub struct UserIndex {
    order: Vec<Arc<str>>,
    scalars: HashMap<Arc<str>, f64>,
}

#[derive(Serialize, Deserialize)]
struct UserList {
    users: Vec<String>,
}

impl From<UserList> for UserIndex {
    fn from(list: UserList) -> Self {
        UserIndex::from_order(list.users.into_iter().map(Arc::from).collect())
    }
}

impl From<UserIndex> for UserList {
    fn from(index: UserIndex) -> Self {
        UserList {
            users: index.order.iter().map(|u| u.to_string()).collect(),
        }
    }
}

impl UserIndex {
    /// Scalar assigned to learners not seen when the index was built.
    pub const UNSEEN: f64 = 0.5;

    pub fn build(events: &[ReviewEvent]) -> Self {
        let mut seen = std::collections::HashSet::new();
        let order = events
            .iter()
            .filter(|e| seen.insert(e.user_id.clone()))
            .map(|e| e.user_id.clone())
            .collect();
        Self::from_order(order)
    }

    fn from_order(order: Vec<Arc<str>>) -> Self {
        let denom = order.len().saturating_sub(1).max(1) as f64;
        let scalars = order
            .iter()
            .enumerate()
            .map(|(rank, u)| (u.clone(), rank as f64 / denom))
            .collect();
        UserIndex { order, scalars }
    }

    pub fn get(&self, user: &str) -> Option<f64> {
        self.scalars.get(user).copied()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Which optional components a feature vector exposes to linear models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFlags {
    pub dense: bool,
    pub interaction: bool,
    pub lexeme_tags: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl FeatureStats {
    pub fn normalize(&self, v: f64) -> f64 {
        let range = self.max - self.min;
        if range > 0.0 {
            ((v - self.min) / range).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Training-split statistics for imputation and min-max scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub dense: [FeatureStats; NUM_DENSE],
    /// Training mean of the raw complexity score; complexity multipliers are
    /// raw scores divided by this.
    pub complexity_mean: f64,
}

struct RawLookup {
    values: [Option<f64>; NUM_DENSE],
}

fn raw_values(event: &ReviewEvent, lexicons: &LexiconBundle, users: &UserIndex) -> RawLookup {
    let (surface, _) = parse_lexeme(&event.lexeme_string);
    let lex = lexicons.lookup(&surface);
    RawLookup {
        values: [
            users.get(&event.user_id),
            lex.concreteness,
            lex.percent_known,
            lex.log_frequency,
            lex.complexity,
        ],
    }
}

impl NormalizationStats {
    /// Fits imputation means and min/max ranges over `train` events.
    pub fn fit(train: &[ReviewEvent], lexicons: &LexiconBundle, users: &UserIndex) -> Self {
        let mut sums = [0.0f64; NUM_DENSE];
        let mut counts = [0u64; NUM_DENSE];
        let mut cache: HashMap<&str, RawLookup> = HashMap::new();
        let mut per_event = Vec::with_capacity(train.len());
        for event in train {
            let lex = cache
                .entry(&event.lexeme_string)
                .or_insert_with(|| raw_values(event, lexicons, &UserIndex::default()));
            let mut values = lex.values;
            values[DenseFeature::UserId.index()] = users.get(&event.user_id);
            for (i, v) in values.iter().enumerate() {
                if let Some(v) = v {
                    sums[i] += v;
                    counts[i] += 1;
                }
            }
            per_event.push(values);
        }
        let means: [f64; NUM_DENSE] =
            std::array::from_fn(|i| if counts[i] > 0 { sums[i] / counts[i] as f64 } else { 0.0 });
        let mut dense = std::array::from_fn(|i| FeatureStats {
            mean: means[i],
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        });
        for values in &per_event {
            for (i, stat) in dense.iter_mut().enumerate() {
                let v = values[i].unwrap_or(means[i]);
                stat.min = stat.min.min(v);
                stat.max = stat.max.max(v);
            }
        }
        for stat in dense.iter_mut() {
            if !stat.min.is_finite() {
                stat.min = stat.mean;
                stat.max = stat.mean;
            }
        }
        let complexity_mean = means[DenseFeature::Complexity.index()];
        NormalizationStats {
            dense,
            complexity_mean,
        }
    }
}

/// Model input for one event.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// Min-max normalized values in [`DenseFeature::ALL`] order.
    pub dense: [f64; NUM_DENSE],
    pub imputed: [bool; NUM_DENSE],
    /// `(sqrt(1 + history_seen), sqrt(1 + history_correct))`.
    pub interaction: Option<[f64; 2]>,
    /// Weight key of this event's lexeme indicator.
    pub sparse_tag: Option<Arc<str>>,
    /// Whether the dense values participate in linear terms.
    pub dense_terms: bool,
    pub history_seen: u32,
    pub history_correct: u32,
    /// Raw complexity divided by the training mean (1.0 for average words).
    pub complexity_raw: f64,
}

pub const BIAS_KEY: &str = "bias";
pub const SEEN_KEY: &str = "history_seen";
pub const CORRECT_KEY: &str = "history_correct";
pub const DELTA_KEY: &str = "delta";
pub const TAG_PREFIX: &str = "lex:";

impl FeatureVector {
    /// Linear-model terms as `(weight key, value)`. The order is stable:
    /// bias, interaction, lexeme tag, dense.
    pub fn terms(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        let interaction = self
            .interaction
            .into_iter()
            .flat_map(|[s, c]| [(SEEN_KEY, s), (CORRECT_KEY, c)]);
        let tag = self.sparse_tag.iter().map(|t| (&**t, 1.0));
        let dense = DenseFeature::ALL
            .iter()
            .filter(move |_| self.dense_terms)
            .map(move |f| (f.key(), self.dense[f.index()]));
        std::iter::once((BIAS_KEY, 1.0))
            .chain(interaction)
            .chain(tag)
            .chain(dense)
    }
}

/// Per-feature count of imputed values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputationCounts {
    pub user_id: u64,
    pub concreteness: u64,
    pub percent_known: u64,
    pub subtlex: u64,
    pub complexity: u64,
}

impl ImputationCounts {
    pub fn record(&mut self, fv: &FeatureVector) {
        let slots = [
            &mut self.user_id,
            &mut self.concreteness,
            &mut self.percent_known,
            &mut self.subtlex,
            &mut self.complexity,
        ];
        for (slot, imputed) in slots.into_iter().zip(fv.imputed) {
            *slot += u64::from(imputed);
        }
    }

    pub fn merge(&mut self, other: &ImputationCounts) {
        self.user_id += other.user_id;
        self.concreteness += other.concreteness;
        self.percent_known += other.percent_known;
        self.subtlex += other.subtlex;
        self.complexity += other.complexity;
    }
}

/// Builds the feature vector for one event.
pub fn extract_features(
    event: &ReviewEvent,
    lexicons: &LexiconBundle,
    users: &UserIndex,
    stats: &NormalizationStats,
    flags: FeatureFlags,
) -> FeatureVector {
    let (surface, tag) = parse_lexeme(&event.lexeme_string);
    let lex = lexicons.lookup(&surface);
    let raw = [
        users.get(&event.user_id),
        lex.concreteness,
        lex.percent_known,
        lex.log_frequency,
        lex.complexity,
    ];
    let mut dense = [0.0; NUM_DENSE];
    let mut imputed = [false; NUM_DENSE];
    for i in 0..NUM_DENSE {
        let value = match raw[i] {
            Some(v) => v,
            None => {
                imputed[i] = true;
                if i == DenseFeature::UserId.index() {
                    UserIndex::UNSEEN
                } else {
                    stats.dense[i].mean
                }
            }
        };
        dense[i] = stats.dense[i].normalize(value);
    }
    let complexity = raw[DenseFeature::Complexity.index()].unwrap_or(stats.complexity_mean);
    let complexity_raw = if stats.complexity_mean > 0.0 {
        complexity / stats.complexity_mean
    } else {
        1.0
    };
    FeatureVector {
        dense,
        imputed,
        interaction: flags.interaction.then(|| {
            [
                (1.0 + f64::from(event.history_seen)).sqrt(),
                (1.0 + f64::from(event.history_correct)).sqrt(),
            ]
        }),
        sparse_tag: flags
            .lexeme_tags
            .then(|| Arc::from(format!("{TAG_PREFIX}{surface}/{tag}"))),
        dense_terms: flags.dense,
        history_seen: event.history_seen,
        history_correct: event.history_correct,
        complexity_raw,
    }
}

/// Everything needed to turn events into feature vectors, minus the
/// lexicons themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub dense_order: Vec<String>,
    pub flags: FeatureFlags,
    pub stats: NormalizationStats,
    pub users: UserIndex,
}

impl FeatureExtractor {
    /// Fits user index and normalization on the training split.
    pub fn fit(train: &[ReviewEvent], lexicons: &LexiconBundle, flags: FeatureFlags) -> Self {
        let users = UserIndex::build(train);
        let stats = NormalizationStats::fit(train, lexicons, &users);
        FeatureExtractor {
            dense_order: dense_feature_keys(),
            flags,
            stats,
            users,
        }
    }

    pub fn extract(&self, event: &ReviewEvent, lexicons: &LexiconBundle) -> FeatureVector {
        extract_features(event, lexicons, &self.users, &self.stats, self.flags)
    }

    pub fn check_order(&self) -> Result<()> {
        if self.dense_order != dense_feature_keys() {
            return Err(Error::Structural(format!(
                "dense feature order {:?} does not match extractor order {:?}",
                self.dense_order,
                dense_feature_keys()
            )));
        }
        Ok(())
    }
}
