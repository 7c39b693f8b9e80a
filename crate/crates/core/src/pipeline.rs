//! End-to-end runs: ingest, split, fit features on train, train, evaluate.

use std::fs::File;
use std::io::BufReader;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{parse_review_log, split_train_test, IngestStats, ReviewEvent, Split, SplitMode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, export_hidden_weights, EvalReport, HiddenWeightExport};
use crate::lexicon::{FeatureExtractor, LexiconBundle};
use crate::model::{ModelKind, ModelParams, ModelState};
use crate::train::{sgd_train_with, TrainingLog};

pub fn load_events(cfg: &RunConfig) -> Result<(Vec<ReviewEvent>, IngestStats)> {
    let path = cfg.dataset_path()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let limit = (cfg.limit > 0).then_some(cfg.limit);
    parse_review_log(BufReader::with_capacity(1 << 20, file), Some(&cfg.learning_language), limit)
}

/// A loaded dataset split once, shared by every model trained on it.
pub struct Experiment {
    pub split: Split<ReviewEvent>,
    pub lexicons: LexiconBundle,
    pub ingest: IngestStats,
}

pub fn prepare(cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    let lexicons = LexiconBundle::load(&cfg.lexicons)?;
    let (events, ingest) = load_events(cfg)?;
    log::info!(
        "loaded {} events ({} rows read, {} other-language, {} malformed)",
        events.len(),
        ingest.rows_read,
        ingest.rows_other_language,
        ingest.rows_malformed
    );
    let split = split_train_test(events, &cfg.split_spec())?;
    Ok(Experiment { split, lexicons, ingest })
}

impl Experiment {
    /// Splits in-memory events, e.g. from [`crate::synth::generate`].
    pub fn from_events(events: Vec<ReviewEvent>, lexicons: LexiconBundle, cfg: &RunConfig) -> Result<Self> {
        let ingest = IngestStats {
            rows_read: events.len() as u64,
            rows_kept: events.len() as u64,
            ..Default::default()
        };
        let split = split_train_test(events, &cfg.split_spec())?;
        Ok(Experiment { split, lexicons, ingest })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub log: TrainingLog,
    pub train_report: EvalReport,
    pub test_report: EvalReport,
}

pub fn train_on(exp: &Experiment, kind: ModelKind, cfg: &RunConfig) -> Result<TrainOutcome> {
    let mut train: &[ReviewEvent] = &exp.split.train;
    if kind.is_neural() && cfg.neural_train_limit > 0 && train.len() > cfg.neural_train_limit {
        train = &train[..cfg.neural_train_limit];
    }
    let hyper = cfg.hyperparameters(kind);
    let extractor = FeatureExtractor::fit(train, &exp.lexicons, cfg.feature_flags(kind));
    let started = Instant::now();
    let (state, log) = sgd_train_with(train, kind, extractor, &exp.lexicons, &hyper)?;
    log::info!("{kind}: trained on {} events in {:.1}s", train.len(), started.elapsed().as_secs_f64());
    let train_report = evaluate(&state, train, &exp.lexicons)?;
    let test_report = evaluate(&state, &exp.split.test, &exp.lexicons)?;
    Ok(TrainOutcome {
        state,
        log,
        train_report,
        test_report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub kind: ModelKind,
    pub model: String,
    pub status: RowStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub train_events: usize,
    pub train_mae: Option<f64>,
    pub test: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train_events: usize,
    pub test_events: usize,
    pub train_fraction: f64,
    pub mode: SplitMode,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LadderMetadata {
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub split: SplitSummary,
    pub ingest: IngestStats,
    pub rows: Vec<LadderRow>,
    pub metadata: LadderMetadata,
}

impl LadderReport {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.status == RowStatus::Failed)
    }

    pub fn test_mae(&self, kind: ModelKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.kind == kind)
            .and_then(|r| r.test.as_ref())
            .map(|t| t.mae)
    }

    /// Aligned text table, one row per model.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<18} {:>10} {:>10} {:>10}  {}\n",
            "Model", "Test MAE", "Train MAE", "Mean p̂", "Status"
        );
        out.push_str(&format!("{}\n", "-".repeat(62)));
        for r in &self.rows {
            let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"));
            let status = match (&r.status, &r.error) {
                (RowStatus::Ok, _) => "ok".to_owned(),
                (RowStatus::Failed, Some(e)) => format!("failed: {e}"),
                (RowStatus::Failed, None) => "failed".to_owned(),
            };
            out.push_str(&format!(
                "{:<18} {:>10} {:>10} {:>10}  {}\n",
                r.model,
                fmt(r.test.as_ref().map(|t| t.mae)),
                fmt(r.train_mae),
                fmt(r.test.as_ref().map(|t| t.mean_p_hat)),
                status
            ));
        }
        out.push_str(&format!(
            "\n{} train / {} test events ({:?} split)\n",
            self.split.train_events, self.split.test_events, self.split.mode
        ));
        out
    }
}

/// Trains and evaluates each kind on the same split. A failing kind is
/// recorded and the rest still run.
pub fn run_ladder(exp: &Experiment, cfg: &RunConfig, kinds: &[ModelKind]) -> LadderReport {
    let started = Instant::now();
    let spec = cfg.split_spec();
    let rows = kinds
        .iter()
        .map(|&kind| {
            let train_events = if kind.is_neural() && cfg.neural_train_limit > 0 {
                exp.split.train.len().min(cfg.neural_train_limit)
            } else {
                exp.split.train.len()
            };
            match train_on(exp, kind, cfg) {
                Ok(out) => LadderRow {
                    kind,
                    model: kind.display_name().to_owned(),
                    status: RowStatus::Ok,
                    error: None,
                    train_events,
                    train_mae: Some(out.train_report.mae),
                    test: Some(out.test_report),
                },
                Err(e) => {
                    log::error!("{kind}: {e}");
                    LadderRow {
                        kind,
                        model: kind.display_name().to_owned(),
                        status: RowStatus::Failed,
                        error: Some(e.to_string()),
                        train_events,
                        train_mae: None,
                        test: None,
                    }
                }
            }
        })
        .collect();
    LadderReport {
        split: SplitSummary {
            train_events: exp.split.train.len(),
            test_events: exp.split.test.len(),
            train_fraction: spec.train_fraction,
            mode: spec.mode,
            seed: cfg.seed,
        },
        ingest: exp.ingest,
        rows,
        metadata: LadderMetadata {
            total_seconds: started.elapsed().as_secs_f64(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Inspection {
    Schedule { kind: ModelKind },
    Linear {
        kind: ModelKind,
        total_weights: usize,
        top: Vec<WeightEntry>,
    },
    Neural { export: HiddenWeightExport },
}

impl Inspection {
    pub fn render(&self) -> String {
        match self {
            Inspection::Schedule { kind } => format!("{kind}: fixed schedule, no weights\n"),
            Inspection::Linear { kind, total_weights, top } => {
                let mut out = format!("{kind}: {total_weights} weights, top {} by magnitude\n", top.len());
                for w in top {
                    out.push_str(&format!("{:>12.6}  {}\n", w.value, w.name));
                }
                out
            }
            Inspection::Neural { export } => {
                format!("{}: |W1| rescaled to [0, 1]\n{}", export.kind, export.render())
            }
        }
    }
}

/// Top-`k` linear weights by magnitude, or the hidden-weight export for
/// neural kinds.
pub fn inspect(state: &ModelState, top_k: usize) -> Result<Inspection> {
    Ok(match &state.params {
        ModelParams::Schedule => Inspection::Schedule { kind: state.kind },
        ModelParams::Linear { theta } => {
            let mut all: Vec<WeightEntry> = theta
                .iter()
                .map(|(k, v)| WeightEntry { name: k.clone(), value: *v })
                .collect();
            all.sort_by(|a, b| b.value.abs().total_cmp(&a.value.abs()).then_with(|| a.name.cmp(&b.name)));
            let total_weights = all.len();
            all.truncate(top_k);
            Inspection::Linear {
                kind: state.kind,
                total_weights,
                top: all,
            }
        }
        ModelParams::Neural(_) => Inspection::Neural {
            export: export_hidden_weights(state)?,
        },
    })
}
