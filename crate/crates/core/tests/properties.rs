mod invariants;

use std::sync::Arc;

use fcurve_core::dataset::{parse_review_log, split_train_test, ReviewEvent, SplitMode, SplitSpec};
use fcurve_core::eval::mae;
use fcurve_core::ModelState;
use invariants::{arb_state, CASES};
use proptest::prelude::*;

macro_rules! invariant_tests {
    ($($name:ident),*) => {
        $(
            #[test]
            fn $name() {
                invariants::check(stringify!($name), CASES).unwrap();
            }
        )*
    };
}

invariant_tests!(
    delta_monotonicity,
    half_life_semantics,
    complexity_monotonicity,
    clip_ranges,
    linreg_unit_interval,
    hlr_plus_reduces_to_hlr
);

#[test]
fn unknown_invariant_is_rejected() {
    assert!(invariants::check("nope", 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn model_json_round_trip_is_bit_exact(
        s in arb_state(),
        mean in prop::array::uniform5(-1e6..1e6f64),
    ) {
        let mut s = s;
        for (stats, m) in s.features.stats.dense.iter_mut().zip(mean) {
            stats.mean = m;
            stats.max = m.abs() + 1.0 / 3.0;
        }
        let back = ModelState::from_json(&s.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_json().unwrap(), s.to_json().unwrap());
    }
}

fn row_field() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => (0u32..30).prop_map(|n| n.to_string()),
        1 => Just(String::new()),
        1 => Just("-1".to_owned()),
        1 => Just("x".to_owned()),
        1 => Just("1.5".to_owned()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn parsed_events_satisfy_invariants(
        rows in prop::collection::vec(
            (row_field(), row_field(), row_field(), row_field(), row_field(), row_field(), any::<bool>()),
            1..40,
        ),
    ) {
        let mut csv = String::from(
            "p_recall,timestamp,delta,user_id,learning_language,ui_language,lexeme_id,lexeme_string,history_seen,history_correct,session_seen,session_correct\n",
        );
        for (i, (delta, ts, hs, hc, ss, sc, fr)) in rows.iter().enumerate() {
            let lang = if *fr { "fr" } else { "en" };
            csv.push_str(&format!("0.5,{ts},{delta},u{i},{lang},es,id{i},dog/dog<n>,{hs},{hc},{ss},{sc}\n"));
        }
        match parse_review_log(csv.as_bytes(), Some("en"), None) {
            Ok((events, stats)) => {
                prop_assert_eq!(stats.rows_read as usize, rows.len());
                prop_assert_eq!(stats.rows_kept as usize, events.len());
                prop_assert_eq!(
                    stats.rows_kept + stats.rows_other_language + stats.rows_malformed,
                    stats.rows_read
                );
                for e in &events {
                    prop_assert!(e.history_seen >= 1 && e.history_correct <= e.history_seen);
                    prop_assert!(e.session_seen >= 1 && e.session_correct <= e.session_seen);
                    prop_assert!((0.0..=1.0).contains(&e.observed_recall));
                    prop_assert_eq!(e.observed_recall, f64::from(e.session_correct) / f64::from(e.session_seen));
                    prop_assert!(e.delta_days >= 0.0 && e.delta_days.is_finite());
                    prop_assert_eq!(&*e.learning_language, "en");
                }
            }
            Err(err) => prop_assert!(err.is_input_error()),
        }
    }

    #[test]
    fn split_is_deterministic_and_partitions(
        n in 2usize..300,
        fraction in 0.05..0.95f64,
        seed in any::<u64>(),
        chronological in any::<bool>(),
    ) {
        let events: Vec<ReviewEvent> = (0..n).map(|i| event(i as i64 * 7 % 101, i)).collect();
        let spec = SplitSpec {
            train_fraction: fraction,
            seed,
            mode: if chronological { SplitMode::Chronological } else { SplitMode::Random },
        };
        let (Ok(a), Ok(b)) = (split_train_test(events.clone(), &spec), split_train_test(events, &spec)) else {
            return Ok(());
        };
        prop_assert_eq!(&a.train, &b.train);
        prop_assert_eq!(&a.test, &b.test);
        prop_assert_eq!(a.train.len() + a.test.len(), n);
        prop_assert_eq!(a.train.len(), (n as f64 * fraction).round() as usize);
        let mut ids: Vec<&str> = a.train.iter().chain(&a.test).map(|e| &*e.user_id).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
        if chronological {
            let last_train = a.train.iter().map(|e| e.timestamp).max().unwrap();
            prop_assert!(a.test.iter().all(|e| e.timestamp >= last_train));
        }
    }

    #[test]
    fn mae_ignores_order(
        pairs in prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 1..200),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = mae(pairs.iter().copied()).unwrap();
        let b = mae(shuffled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

fn event(timestamp: i64, i: usize) -> ReviewEvent {
    ReviewEvent {
        observed_recall: 1.0,
        delta_days: 1.0,
        user_id: Arc::from(format!("u{i}")),
        lexeme_id: Arc::from("l"),
        lexeme_string: Arc::from("dog/dog<n>"),
        learning_language: Arc::from("en"),
        ui_language: Arc::from("es"),
        history_seen: 1,
        history_correct: 1,
        session_seen: 1,
        session_correct: 1,
        timestamp,
    }
}
