//! Recall MAE, evaluation reports and hidden-layer weight export.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ReviewEvent;
use crate::error::{Error, Result};
use crate::lexicon::{DenseFeature, ImputationCounts, LexiconBundle};
use crate::model::{ModelKind, ModelState};

/// Mean absolute error over `(observed, predicted)` pairs.
pub fn mae<I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let (sum, n) = pairs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), (p, q)| (s + (p - q).abs(), n + 1));
    if n == 0 {
        return Err(Error::NoData("MAE of an empty set".into()));
    }
    Ok(sum / n as f64)
}

/// MAE of the best constant predictor (the median), the floor any useful
/// model has to beat.
pub fn best_constant_mae(observed: &[f64]) -> Result<f64> {
    if observed.is_empty() {
        return Err(Error::NoData("MAE of an empty set".into()));
    }
    let mut sorted = observed.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    mae(observed.iter().map(|&p| (p, median)))
}

/// Wall-clock fields, kept apart so the rest of a report is reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: ModelKind,
    pub num_events: usize,
    pub mae: f64,
    pub mean_p_hat: f64,
    pub mean_observed: f64,
    pub imputation_counts: ImputationCounts,
    pub metadata: ReportMetadata,
}

/// Runs the model over `events` and aggregates. The model is not modified.
pub fn evaluate(state: &ModelState, events: &[ReviewEvent], lexicons: &LexiconBundle) -> Result<EvalReport> {
    let started = Instant::now();
    state.validate()?;
    if events.is_empty() {
        return Err(Error::NoData("no events to evaluate".into()));
    }
    let rows: Vec<(f64, f64, ImputationCounts)> = events
        .par_iter()
        .map(|e| {
            let fv = state.features.extract(e, lexicons);
            let mut counts = ImputationCounts::default();
            counts.record(&fv);
            state.predict(&fv, e.delta_days).map(|p| (e.observed_recall, p.p_hat, counts))
        })
        .collect::<Result<_>>()?;

    // Sequential reduction keeps the sums independent of thread count.
    let mut imputation_counts = ImputationCounts::default();
    let (mut sum_abs, mut sum_p, mut sum_obs) = (0.0, 0.0, 0.0);
    for (obs, p_hat, counts) in &rows {
        sum_abs += (obs - p_hat).abs();
        sum_p += p_hat;
        sum_obs += obs;
        imputation_counts.merge(counts);
    }
    let n = rows.len() as f64;
    Ok(EvalReport {
        kind: state.kind,
        num_events: rows.len(),
        mae: sum_abs / n,
        mean_p_hat: sum_p / n,
        mean_observed: sum_obs / n,
        imputation_counts,
        metadata: ReportMetadata {
            runtime_seconds: started.elapsed().as_secs_f64(),
        },
    })
}

/// `|W1|` rescaled to [0, 1] over the whole matrix, with labeled rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenWeightExport {
    pub kind: ModelKind,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    pub row_means: Vec<f64>,
}

impl HiddenWeightExport {
    /// Row labels ordered by decreasing mean.
    pub fn ranking(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.sort_by(|&a, &b| self.row_means[b].total_cmp(&self.row_means[a]).then(a.cmp(&b)));
        idx.into_iter().map(|i| self.rows[i].as_str()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<14}", "feature");
        for c in &self.columns {
            out.push_str(&format!("{c:>8}"));
        }
        out.push_str(&format!("{:>8}\n", "mean"));
        for ((label, row), mean) in self.rows.iter().zip(&self.matrix).zip(&self.row_means) {
            out.push_str(&format!("{label:<14}"));
            for v in row {
                out.push_str(&format!("{v:>8.3}"));
            }
            out.push_str(&format!("{mean:>8.3}\n"));
        }
        out
    }
}

pub fn export_hidden_weights(state: &ModelState) -> Result<HiddenWeightExport> {
    let net = state
        .network()
        .ok_or_else(|| Error::Config(format!("{} has no hidden layer to export", state.kind)))?;
    let magnitudes: Vec<Vec<f64>> = net.w1.iter().map(|r| r.iter().map(|w| w.abs()).collect()).collect();
    let (lo, hi) = magnitudes
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let matrix: Vec<Vec<f64>> = magnitudes
        .iter()
        .map(|r| r.iter().map(|&v| if range > 0.0 { (v - lo) / range } else { 0.0 }).collect())
        .collect();
    let row_means = matrix.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    Ok(HiddenWeightExport {
        kind: state.kind,
        rows: DenseFeature::ALL.iter().map(|f| f.label().to_owned()).collect(),
        columns: (0..net.hidden_dim()).map(|j| format!("h{j}")).collect(),
        matrix,
        row_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{dense_feature_keys, FeatureExtractor, FeatureStats, NormalizationStats, UserIndex};
    use crate::model::{Clip, ModelParams, Network};
    use crate::train::Hyperparameters;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    #[test]
    fn mae_examples() {
        assert_eq!(mae([(1.0, 1.0), (0.0, 0.0)]).unwrap(), 0.0);
        assert_eq!(mae([(1.0, 0.0)]).unwrap(), 1.0);
        assert!((mae([(0.8, 0.6), (0.4, 0.5)]).unwrap() - 0.15).abs() < 1e-15);
        assert!(matches!(mae(std::iter::empty()), Err(Error::NoData(_))));
    }

    #[test]
    fn best_constant_is_median_deviation() {
        let obs = [0.0, 0.2, 0.9, 1.0, 1.0];
        // median 0.9: |0.9|+|0.7|+0+0.1+0.1 = 1.8
        assert!((best_constant_mae(&obs).unwrap() - 0.36).abs() < 1e-12);
    }

    fn extractor() -> FeatureExtractor {
        let s = FeatureStats { mean: 0.5, min: 0.0, max: 1.0 };
        FeatureExtractor {
            dense_order: dense_feature_keys(),
            flags: ModelKind::Hlr.default_flags(),
            stats: NormalizationStats { dense: [s; 5], complexity_mean: 1.0 },
            users: UserIndex::default(),
        }
    }

    fn state(kind: ModelKind, params: ModelParams) -> ModelState {
        ModelState {
            kind,
            clip: Clip::default(),
            hyperparameters: Hyperparameters::defaults_for(kind),
            features: extractor(),
            params,
        }
    }

    fn event(recall: f64, delta: f64) -> ReviewEvent {
        ReviewEvent {
            observed_recall: recall,
            delta_days: delta,
            user_id: Arc::from("u"),
            lexeme_id: Arc::from("l"),
            lexeme_string: Arc::from("a/b"),
            learning_language: Arc::from("en"),
            ui_language: Arc::from("en"),
            history_seen: 2,
            history_correct: 1,
            session_seen: 2,
            session_correct: 1,
            timestamp: 0,
        }
    }

    #[test]
    fn zero_hlr_on_half_life_events() {
        let s = state(ModelKind::Hlr, ModelParams::Linear { theta: BTreeMap::new() });
        let events = vec![event(0.5, 1.0); 7];
        let r = evaluate(&s, &events, &LexiconBundle::new()).unwrap();
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.num_events, 7);
        assert_eq!(r.imputation_counts.user_id, 7);
    }

    #[test]
    fn constant_predictor_gives_mean_absolute_deviation() {
        // Linear regression with only a bias behaves as a constant predictor.
        let obs = [0.1, 0.4, 0.9, 1.0];
        let mean = obs.iter().sum::<f64>() / 4.0;
        let mut theta = BTreeMap::new();
        theta.insert("bias".to_owned(), mean);
        let mut s = state(ModelKind::Linreg, ModelParams::Linear { theta });
        s.features.flags = ModelKind::Linreg.default_flags();
        s.features.flags.dense = false;
        let events: Vec<_> = obs.iter().map(|&p| event(p, 3.0)).collect();
        let r = evaluate(&s, &events, &LexiconBundle::new()).unwrap();
        let mad = obs.iter().map(|p| (p - mean).abs()).sum::<f64>() / 4.0;
        assert!((r.mae - mad).abs() < 1e-15);
    }

    #[test]
    fn evaluate_rejects_reordered_features() {
        let mut s = state(ModelKind::Hlr, ModelParams::Linear { theta: BTreeMap::new() });
        s.features.dense_order.reverse();
        let err = evaluate(&s, &[event(0.5, 1.0)], &LexiconBundle::new()).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn export_rescales_and_orders() {
        let mut net = Network::zeros(5, 4, false);
        let constant = state(ModelKind::NHlrPlus, ModelParams::Neural(net.clone()));
        let e = export_hidden_weights(&constant).unwrap();
        assert!(e.matrix.iter().flatten().all(|&v| v == 0.0));

        net.w1 = vec![vec![0.1, -0.2, 0.0, 0.3]; 5];
        net.w1[4][2] = -2.0;
        let s = state(ModelKind::NHlrPlus, ModelParams::Neural(net));
        let e = export_hidden_weights(&s).unwrap();
        assert_eq!(e.matrix[4][2], 1.0);
        assert_eq!(e.matrix[0][2], 0.0);
        assert_eq!(e.rows, ["user id", "concreteness", "percent known", "SUBTLEX", "complexity"]);
        assert_eq!(e.ranking()[0], "complexity");
        assert_eq!(e.columns.len(), 4);

        let linear = state(ModelKind::Hlr, ModelParams::Linear { theta: BTreeMap::new() });
        assert!(export_hidden_weights(&linear).is_err());
    }
}
