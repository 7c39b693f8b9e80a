//! Review-log ingestion, lexeme parsing and train/test splitting.
//!
//! The log format is the public Duolingo spaced-repetition dump: a
//! comma-separated file with a 12-column header. Rows are streamed one at a
//! time through [`ReviewReader`]; [`parse_review_log`] is the collecting
//! convenience wrapper.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Column names of the review log, in the order they are written.
pub const LOG_COLUMNS: [&str; 12] = [
    "p_recall",
    "timestamp",
    "delta",
    "user_id",
    "learning_language",
    "ui_language",
    "lexeme_id",
    "lexeme_string",
    "history_seen",
    "history_correct",
    "session_seen",
    "session_correct",
];

/// One learner-word practice record.
///
/// For ingested rows `observed_recall == session_correct / session_seen`.
/// The synthetic generator's noise-free mode is the only producer that sets
/// `observed_recall` to an exact curve value instead.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewEvent {
    pub observed_recall: f64,
    pub delta_days: f64,
    pub user_id: Arc<str>,
    pub lexeme_id: Arc<str>,
    pub lexeme_string: Arc<str>,
    pub learning_language: Arc<str>,
    pub ui_language: Arc<str>,
    pub history_seen: u32,
    pub history_correct: u32,
    pub session_seen: u32,
    pub session_correct: u32,
    pub timestamp: i64,
}

impl ReviewEvent {
    pub fn history_wrong(&self) -> u32 {
        self.history_seen - self.history_correct
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows_read: u64,
    pub rows_kept: u64,
    pub rows_other_language: u64,
    pub rows_malformed: u64,
}

#[derive(Default)]
struct Interner(HashSet<Arc<str>>);

impl Interner {
    fn intern(&mut self, s: &str) -> Arc<str> {
        if let Some(existing) = self.0.get(s) {
            return existing.clone();
        }
        let arc: Arc<str> = Arc::from(s);
        self.0.insert(arc.clone());
        arc
    }
}

/// Streaming reader over a review log.
///
/// Yields `Err` only for unrecoverable stream failures; malformed rows are
/// skipped and counted in [`ReviewReader::stats`].
pub struct ReviewReader<R: Read> {
    reader: csv::Reader<R>,
    columns: [usize; 12],
    language: Option<String>,
    record: csv::StringRecord,
    interner: Interner,
    stats: IngestStats,
}

impl<R: Read> ReviewReader<R> {
    pub fn new(input: R, language: Option<&str>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| Error::Format(format!("cannot read header: {e}")))?
            .clone();
        if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
            return Err(Error::Format("missing header row".into()));
        }
        for name in headers.iter() {
            if !LOG_COLUMNS.contains(&name.trim()) {
                return Err(Error::Format(format!("unknown column `{}`", name.trim())));
            }
        }
        let mut columns = [0usize; 12];
        for (slot, wanted) in columns.iter_mut().zip(LOG_COLUMNS) {
            *slot = headers
                .iter()
                .position(|h| h.trim() == wanted)
                .ok_or_else(|| Error::Format(format!("missing column `{wanted}`")))?;
        }
        Ok(ReviewReader {
            reader,
            columns,
            language: language.map(str::to_owned),
            record: csv::StringRecord::new(),
            interner: Interner::default(),
            stats: IngestStats::default(),
        })
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    fn field(&self, column: usize) -> Option<&str> {
        self.record.get(self.columns[column]).map(str::trim)
    }

    fn parse_current(&mut self) -> Option<ReviewEvent> {
        let num = |s: Option<&str>| s.and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite());
        let count = |s: Option<&str>| s.and_then(|v| v.parse::<u32>().ok());

        num(self.field(0))?; // p_recall must be numeric even though it is recomputed
        let timestamp = self.field(1).and_then(|v| v.parse::<i64>().ok())?;
        let delta_seconds = num(self.field(2)).filter(|d| *d >= 0.0)?;
        let history_seen = count(self.field(8)).filter(|&n| n >= 1)?;
        let history_correct = count(self.field(9)).filter(|&n| n <= history_seen)?;
        let session_seen = count(self.field(10)).filter(|&n| n >= 1)?;
        let session_correct = count(self.field(11)).filter(|&n| n <= session_seen)?;

        let user = self.field(3)?.to_owned();
        let learning = self.field(4)?.to_owned();
        let ui = self.field(5)?.to_owned();
        let lexeme_id = self.field(6)?.to_owned();
        let lexeme_string = self.field(7)?.to_owned();
        if lexeme_string.is_empty() {
            return None;
        }

        Some(ReviewEvent {
            observed_recall: f64::from(session_correct) / f64::from(session_seen),
            delta_days: delta_seconds / SECONDS_PER_DAY,
            user_id: self.interner.intern(&user),
            lexeme_id: self.interner.intern(&lexeme_id),
            lexeme_string: self.interner.intern(&lexeme_string),
            learning_language: self.interner.intern(&learning),
            ui_language: self.interner.intern(&ui),
            history_seen,
            history_correct,
            session_seen,
            session_correct,
            timestamp,
        })
    }
}

impl<R: Read> Iterator for ReviewReader<R> {
    type Item = Result<ReviewEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.reader.read_record(&mut self.record) {
                Ok(false) => return None,
                Ok(true) => {}
                Err(e) => match e.kind() {
                    csv::ErrorKind::Io(_) => return Some(Err(e.into())),
                    _ => {
                        self.stats.rows_read += 1;
                        self.stats.rows_malformed += 1;
                        continue;
                    }
                },
            }
            self.stats.rows_read += 1;
            if let Some(lang) = &self.language {
                match self.field(4) {
                    Some(l) if l == lang => {}
                    Some(_) => {
                        self.stats.rows_other_language += 1;
                        continue;
                    }
                    None => {
                        self.stats.rows_malformed += 1;
                        continue;
                    }
                }
            }
            match self.parse_current() {
                Some(event) => {
                    self.stats.rows_kept += 1;
                    return Some(Ok(event));
                }
                None => self.stats.rows_malformed += 1,
            }
        }
    }
}

/// Reads a whole review log, keeping rows whose `learning_language` matches
/// `language` (all rows when `None`), stopping after `limit` kept events.
pub fn parse_review_log<R: Read>(
    input: R,
    language: Option<&str>,
    limit: Option<usize>,
) -> Result<(Vec<ReviewEvent>, IngestStats)> {
    let mut reader = ReviewReader::new(input, language)?;
    let mut events = Vec::new();
    let limit = limit.unwrap_or(usize::MAX);
    while events.len() < limit {
        match reader.next() {
            Some(event) => events.push(event?),
            None => break,
        }
    }
    if events.is_empty() {
        let filter = language.map(|l| format!(" for learning_language `{l}`")).unwrap_or_default();
        return Err(Error::NoData(format!(
            "no usable review events{filter} ({} rows read, {} malformed)",
            reader.stats.rows_read, reader.stats.rows_malformed
        )));
    }
    Ok((events, reader.stats()))
}

/// Writes events back out in the log's column schema.
pub fn write_review_log<W: Write>(output: W, events: &[ReviewEvent]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    writer.write_record(LOG_COLUMNS)?;
    for e in events {
        writer.write_record([
            e.observed_recall.to_string(),
            e.timestamp.to_string(),
            (e.delta_days * SECONDS_PER_DAY).to_string(),
            e.user_id.to_string(),
            e.learning_language.to_string(),
            e.ui_language.to_string(),
            e.lexeme_id.to_string(),
            e.lexeme_string.to_string(),
            e.history_seen.to_string(),
            e.history_correct.to_string(),
            e.session_seen.to_string(),
            e.session_correct.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Splits a lexeme annotation into its lowercased surface word and the tag
/// remainder.
///
/// The surface word ends at the first `/` when one is present (the dump's
/// `surface/lemma<pos><...>` form), otherwise at the first `.`
/// (`camera.N.SG`).
pub fn parse_lexeme(lexeme: &str) -> (String, String) {
    let cut = lexeme.find('/').or_else(|| lexeme.find('.'));
    match cut {
        Some(i) => (lexeme[..i].to_lowercase(), lexeme[i + 1..].to_owned()),
        None => (lexeme.to_lowercase(), String::new()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Random,
    Chronological,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SplitMode::Random),
            "chronological" => Ok(SplitMode::Chronological),
            other => Err(Error::Config(format!("unknown split mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.9,
            seed: 0,
            mode: SplitMode::Random,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
}

/// Returns a per-index membership mask (`true` = train).
pub fn split_mask(timestamps: &[i64], spec: &SplitSpec) -> Result<Vec<bool>> {
    spec.validate()?;
    let n = timestamps.len();
    if n < 2 {
        return Err(Error::NoData(format!("need at least 2 events to split, got {n}")));
    }
    let n_train = (n as f64 * spec.train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "train_fraction {} leaves an empty side for {n} events",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    match spec.mode {
        SplitMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            order.shuffle(&mut rng);
        }
        SplitMode::Chronological => order.sort_by_key(|&i| (timestamps[i], i)),
    }
    let mut mask = vec![false; n];
    for &i in &order[..n_train] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Partitions events into train and test sets. Both sides keep the input
/// order of their members.
pub fn split_train_test(events: Vec<ReviewEvent>, spec: &SplitSpec) -> Result<Split<ReviewEvent>> {
    let timestamps: Vec<i64> = events.iter().map(|e| e.timestamp).collect();
    let mask = split_mask(&timestamps, spec)?;
    let n_train = mask.iter().filter(|&&m| m).count();
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(events.len() - n_train);
    for (event, is_train) in events.into_iter().zip(mask) {
        if is_train {
            train.push(event);
        } else {
            test.push(event);
        }
    }
    Ok(Split { train, test })
}
