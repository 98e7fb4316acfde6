//! Exact-match and solution-accuracy metrics, number masking and the
//! affine equation checker.

mod masking;
mod solver;

pub use masking::{is_marker, is_numeric_literal, mask_numbers, mask_with, unmask, NumberMap};
pub use solver::{solve_linear, SolveError};

use serde::Serialize;
use thiserror::Error;

use crate::tree::OutputTree;

/// Label used wherever solution accuracy is reported.
pub const SOLUTION_CHECKER: &str = "affine two-point checker";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("marker `{0}` not in number map")]
    UnknownMarker(String),
}

/// Canonical linearizations are equal.
pub fn exact_match(pred: &OutputTree, gold: &OutputTree) -> bool {
    match (pred.linearize(), gold.linearize()) {
        (Ok(p), Ok(g)) => p == g,
        _ => false,
    }
}

/// Linearize, unmask, solve and compare with `gold` to a relative 1e-4.
pub fn solution_accuracy(pred: &OutputTree, map: &NumberMap, gold: f64) -> bool {
    let Ok(text) = pred.linearize() else {
        return false;
    };
    let tokens: Vec<&str> = text.split(' ').collect();
    let Ok(literal) = unmask(&tokens, map) else {
        return false;
    };
    match solve_linear(&literal.join(" ")) {
        Ok(x) => (x - gold).abs() <= 1e-4 * gold.abs().max(1.0),
        Err(_) => false,
    }
}

/// One line of the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub id: String,
    pub exact_match: bool,
    /// `None` for tasks without a numeric answer.
    pub solution_correct: Option<bool>,
    pub prediction: String,
    pub gold: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricSummary {
    pub examples: usize,
    pub exact_match: usize,
    pub solution_scored: usize,
    pub solution_correct: usize,
}

impl MetricSummary {
    pub fn from_rows(rows: &[MetricRow]) -> Self {
        let mut s = MetricSummary {
            examples: rows.len(),
            ..Default::default()
        };
        for r in rows {
            s.exact_match += r.exact_match as usize;
            if let Some(ok) = r.solution_correct {
                s.solution_scored += 1;
                s.solution_correct += ok as usize;
            }
        }
        s
    }

    pub fn exact_match_accuracy(&self) -> f64 {
        ratio(self.exact_match, self.examples)
    }

    pub fn solution_accuracy(&self) -> Option<f64> {
        (self.solution_scored > 0).then(|| ratio(self.solution_correct, self.solution_scored))
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::parse_to_tree;

    fn t(s: &str) -> OutputTree {
        parse_to_tree(s).unwrap()
    }

    #[test]
    fn exact_match_ignores_spacing_only() {
        assert!(exact_match(&t("( 2.0 * x ) + 2 = 1"), &t("(  2.0 * x )   + 2 = 1")));
        assert!(!exact_match(&t("x = ( 1 * 0.01 ) * 2"), &t("1 * 0.01 * 2 = x")));
    }

    #[test]
    fn solution_accuracy_paths() {
        let map = NumberMap::from_pairs(vec![("n1".into(), "5".into()), ("n2".into(), "7".into())]);
        assert!(solution_accuracy(&t("x = ( n1 + n2 )"), &map, 12.0));
        assert!(solution_accuracy(&t("( n1 + n2 ) = x"), &map, 12.0));
        assert!(!solution_accuracy(&t("x = ( n1 - n2 )"), &map, 12.0));
        assert!(!solution_accuracy(&t("x = n3"), &map, 12.0));
        assert!(!solution_accuracy(&t("x = n1 / 0"), &map, 12.0));
    }

    #[test]
    fn summary_counts() {
        let row = |em, sc| MetricRow {
            id: "a".into(),
            exact_match: em,
            solution_correct: sc,
            prediction: String::new(),
            gold: String::new(),
        };
        let s = MetricSummary::from_rows(&[row(true, Some(true)), row(false, Some(true)), row(false, None)]);
        assert_eq!((s.examples, s.exact_match, s.solution_scored, s.solution_correct), (3, 1, 2, 2));
        assert!((s.exact_match_accuracy() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.solution_accuracy(), Some(1.0));
        let json = serde_json::to_string(&row(true, None)).unwrap();
        assert_eq!(json, r#"{"id":"a","exact_match":true,"solution_correct":null,"prediction":"","gold":""}"#);
    }
}
