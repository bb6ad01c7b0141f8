//! Link scoring against a naive set-arithmetic oracle.

mod common;

use common::oracles::{check_slam, slam_columns};
use common::synth;
use dfin_core::slam::{aggregate, score_columns, score_tables, QuestionScore};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scores_match_the_naive_oracle(cases in synth::slam_cases()) {
        check_slam(&cases)?;
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

/// Ten hand-scored questions; expected values worked out on paper.
#[test]
fn hand_scored_aggregate() {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let cases = [
        (s(&["a", "b"]), s(&["a", "b"])),
        (s(&["a"]), s(&["a", "b"])),
        (s(&["a", "b", "c"]), s(&["a"])),
        (s(&[]), s(&["a"])),
        (s(&["x"]), s(&["a"])),
        (s(&["A"]), s(&["a"])),
        (s(&["a", "b"]), s(&["b", "c"])),
        (s(&["a", "b", "c", "d"]), s(&["a", "b"])),
        (s(&["a"]), s(&["a"])),
        (s(&["a", "b", "c"]), s(&["a", "d"])),
    ];
    let scores: Vec<QuestionScore> = cases
        .iter()
        .enumerate()
        .map(|(i, (p, g))| QuestionScore {
            question_id: i as i64,
            tables: score_tables(p, g),
            columns: score_columns(&slam_columns(p), &slam_columns(g)),
        })
        .collect();
    let f1s: Vec<f64> = scores.iter().map(|q| q.tables.f1).collect();
    let want_f1 = [1.0, 2.0 / 3.0, 0.5, 0.0, 0.0, 1.0, 0.5, 2.0 / 3.0, 1.0, 0.4];
    for (g, w) in f1s.iter().zip(want_f1) {
        assert!(close(*g, w), "{f1s:?}");
    }
    let r = aggregate(scores, None, None).unwrap();
    assert!(close(r.table_avg_precision, 2.0 / 3.0));
    assert!(close(r.table_avg_recall, 0.65));
    assert!(close(r.table_avg_f1, 43.0 / 75.0));
    assert!(close(r.fully_correct_rate, 0.3));
    assert!(close(r.column_avg_recall, 0.65));
    assert!(close(r.column_avg_precision, 2.0 / 3.0));
    assert_eq!(r.empty_predictions, 1);
}
