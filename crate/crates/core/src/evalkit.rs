//! Retrieval metrics: ranks, R@K, mAP and SumR.
//!
//! Every query has exactly one relevant candidate, so average precision is
//! the reciprocal rank of that candidate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::Matrix;

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("gold map has {got} entries for {queries} queries")]
    MissingGold { queries: usize, got: usize },
    #[error("gold index {gold} for query {query} is out of range ({candidates} candidates)")]
    GoldOutOfRange {
        query: usize,
        gold: usize,
        candidates: usize,
    },
    #[error("empty rank list")]
    EmptyRanks,
    #[error("rank 0 at position {0}; ranks start at 1")]
    ZeroRank(usize),
    #[error("malformed report: {0}")]
    Report(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "t2v")]
    TextToVision,
    #[serde(rename = "v2t")]
    VisionToText,
}

impl Direction {
    pub fn key(self) -> &'static str {
        match self {
            Direction::TextToVision => "t2v",
            Direction::VisionToText => "v2t",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub map_score: f64,
}

impl RetrievalReport {
    pub fn recall_sum(&self) -> f64 {
        self.r1 + self.r5 + self.r10
    }
}

/// 1-based rank of each query's gold candidate under descending similarity.
///
/// Ties are broken toward the lower candidate index.
pub fn rank_matrix(similarity: &Matrix, gold: &[usize]) -> Result<Vec<usize>, EvalError> {
    if gold.len() != similarity.rows() {
        return Err(EvalError::MissingGold {
            queries: similarity.rows(),
            got: gold.len(),
        });
    }
    let c = similarity.cols();
    gold.iter()
        .enumerate()
        .map(|(q, &g)| {
            if g >= c {
                return Err(EvalError::GoldOutOfRange {
                    query: q,
                    gold: g,
                    candidates: c,
                });
            }
            let row = similarity.row(q);
            let target = row[g];
            let ahead = row
                .iter()
                .enumerate()
                .filter(|&(j, &s)| s > target || (s == target && j < g))
                .count();
            Ok(ahead + 1)
        })
        .collect()
}

pub fn compute_metrics(ranks: &[usize], direction: Direction) -> Result<RetrievalReport, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyRanks);
    }
    if let Some(i) = ranks.iter().position(|&r| r == 0) {
        return Err(EvalError::ZeroRank(i));
    }
    let q = ranks.len() as f64;
    let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / q;
    let map_score = 100.0 * ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / q;
    Ok(RetrievalReport {
        direction,
        r1: recall(1),
        r5: recall(5),
        r10: recall(10),
        map_score,
    })
}

/// Both retrieval directions plus SumR.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub t2v: RetrievalReport,
    pub v2t: RetrievalReport,
    pub sum_r: f64,
}

impl EvalSummary {
    pub fn new(t2v: RetrievalReport, v2t: RetrievalReport) -> Self {
        let sum_r = t2v.recall_sum() + v2t.recall_sum();
        Self { t2v, v2t, sum_r }
    }

    /// Evaluates a vision×text similarity matrix whose diagonal holds the pairs.
    pub fn from_similarity(vision_by_text: &Matrix) -> Result<Self, EvalError> {
        let gold: Vec<usize> = (0..vision_by_text.rows()).collect();
        let v2t = compute_metrics(&rank_matrix(vision_by_text, &gold)?, Direction::VisionToText)?;
        let text_by_vision = vision_by_text.transpose();
        let gold: Vec<usize> = (0..text_by_vision.rows()).collect();
        let t2v = compute_metrics(&rank_matrix(&text_by_vision, &gold)?, Direction::TextToVision)?;
        Ok(Self::new(t2v, v2t))
    }

    /// JSON report with four decimals per value.
    pub fn to_json(&self) -> String {
        let dir = |r: &RetrievalReport| {
            format!(
                "{{\"r1\": {:.4}, \"r5\": {:.4}, \"r10\": {:.4}, \"map\": {:.4}}}",
                r.r1, r.r5, r.r10, r.map_score
            )
        };
        format!(
            "{{\"t2v\": {}, \"v2t\": {}, \"sumr\": {:.4}}}\n",
            dir(&self.t2v),
            dir(&self.v2t),
            self.sum_r
        )
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| EvalError::Report(e.to_string()))?;
        let field = |obj: &serde_json::Value, k: &str| -> Result<f64, EvalError> {
            obj.get(k)
                .and_then(serde_json::Value::as_f64)
                .ok_or_else(|| EvalError::Report(format!("missing numeric field {k:?}")))
        };
        let dir = |d: Direction| -> Result<RetrievalReport, EvalError> {
            let obj = v
                .get(d.key())
                .filter(|o| o.as_object().is_some_and(|m| !m.is_empty()))
                .ok_or_else(|| EvalError::Report(format!("missing direction {:?}", d.key())))?;
            Ok(RetrievalReport {
                direction: d,
                r1: field(obj, "r1")?,
                r5: field(obj, "r5")?,
                r10: field(obj, "r10")?,
                map_score: field(obj, "map")?,
            })
        };
        Ok(Self {
            t2v: dir(Direction::TextToVision)?,
            v2t: dir(Direction::VisionToText)?,
            sum_r: field(&v, "sumr")?,
        })
    }
}

/// Markdown table: R@1, R@5, R@10, mAP per direction, then SumR.
pub fn render_report(report_json: &str) -> Result<String, EvalError> {
    let s = EvalSummary::from_json(report_json)?;
    let mut out = String::new();
    out.push_str("| t2v R@1 | t2v R@5 | t2v R@10 | t2v mAP | v2t R@1 | v2t R@5 | v2t R@10 | v2t mAP | SumR |\n");
    out.push_str("|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    let _ = writeln!(
        out,
        "| {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} |",
        s.t2v.r1,
        s.t2v.r5,
        s.t2v.r10,
        s.t2v.map_score,
        s.v2t.r1,
        s.v2t.r5,
        s.v2t.r10,
        s.v2t.map_score,
        s.sum_r
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_gold_ranks_first() {
        let s = Matrix::from_rows(&[[0.9, 0.1, 0.2], [0.0, 0.5, 0.4]]).unwrap();
        assert_eq!(rank_matrix(&s, &[0, 1]).unwrap(), vec![1, 1]);
        assert_eq!(rank_matrix(&Matrix::filled(1, 1, 0.3), &[0]).unwrap(), vec![1]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let s = Matrix::from_rows(&[[0.5, 0.5, 0.5]]).unwrap();
        assert_eq!(rank_matrix(&s, &[0]).unwrap(), vec![1]);
        assert_eq!(rank_matrix(&s, &[2]).unwrap(), vec![3]);
    }

    #[test]
    fn gold_errors() {
        let s = Matrix::zeros(2, 2);
        assert!(matches!(rank_matrix(&s, &[0]), Err(EvalError::MissingGold { .. })));
        assert!(matches!(rank_matrix(&s, &[0, 2]), Err(EvalError::GoldOutOfRange { .. })));
    }

    #[test]
    fn metric_examples() {
        let r = compute_metrics(&[1, 1, 1], Direction::TextToVision).unwrap();
        assert_eq!((r.r1, r.r5, r.r10, r.map_score), (100.0, 100.0, 100.0, 100.0));

        let r = compute_metrics(&[1, 3, 7, 12], Direction::TextToVision).unwrap();
        assert_eq!((r.r1, r.r5, r.r10), (25.0, 50.0, 75.0));
        let expected = 100.0 * (1.0 + 1.0 / 3.0 + 1.0 / 7.0 + 1.0 / 12.0) / 4.0;
        assert!((r.map_score - expected).abs() < 1e-12);
        assert!((r.map_score - 38.99).abs() < 0.01);

        assert_eq!(compute_metrics(&[], Direction::VisionToText), Err(EvalError::EmptyRanks));
        assert_eq!(compute_metrics(&[1, 0], Direction::VisionToText), Err(EvalError::ZeroRank(1)));
    }

    #[test]
    fn perfect_summary_is_600() {
        let s = EvalSummary::from_similarity(&Matrix::identity(4)).unwrap();
        assert_eq!(s.sum_r, 600.0);
    }

    #[test]
    fn json_round_trip_and_render() {
        let s = EvalSummary::from_similarity(&Matrix::identity(3)).unwrap();
        let json = s.to_json();
        assert!(json.contains("\"r1\": 100.0000"));
        let back = EvalSummary::from_json(&json).unwrap();
        assert_eq!(back, s);
        let md = render_report(&json).unwrap();
        assert!(md.contains("| 600.0 |"));
    }

    #[test]
    fn render_formats_one_decimal() {
        let json = r#"{"t2v": {"r1": 50.0, "r5": 80.0, "r10": 90.0, "map": 61.23},
                       "v2t": {"r1": 48.0, "r5": 79.0, "r10": 89.9, "map": 60.0},
                       "sumr": 386.9}"#;
        let md = render_report(json).unwrap();
        assert!(md.trim_end().ends_with("| 386.9 |"));
        assert!(md.contains("| 61.2 |"));
    }

    #[test]
    fn render_rejects_empty_directions() {
        assert!(render_report(r#"{"t2v": {}, "v2t": {}, "sumr": 0}"#).is_err());
        assert!(render_report("not json").is_err());
    }
}
