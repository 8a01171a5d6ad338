//! Concept-detection scoring: exact-match accuracy and sample-averaged
//! precision/recall/F1 over predicted vs gold concept sets.

use std::collections::BTreeSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ConceptAnnotationSet, ConceptId, SampleScore};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("gold image id {0:?} is missing from the predictions")]
    MissingPrediction(String),
    #[error("gold annotation set is empty, nothing to score")]
    EmptyGold,
}

/// Corpus-level concept scores.
///
/// `accuracy` is the exact-set-match rate; `precision`, `recall` and
/// `f1` are arithmetic means of the per-sample values, which are kept in
/// gold input order. `extra_predictions` counts predicted images absent
/// from gold (ignored, not scored).
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptEvalResult {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_samples: usize,
    pub per_sample: Vec<SampleScore>,
    pub extra_predictions: usize,
}

/// Scores one image's predicted concept set against gold.
///
/// With `I = |gold ∩ predicted|`: precision is `I/|predicted|` (0 when
/// predicted is empty), recall is `I/|gold|` (0 when gold is empty), F1
/// is their harmonic mean (0 when both are 0). Two empty sets count as
/// a perfect prediction: precision, recall and F1 are all 1 and the
/// match is exact.
pub fn score_concept_sets(
    gold: &BTreeSet<ConceptId>,
    predicted: &BTreeSet<ConceptId>,
) -> SampleScore {
    if gold.is_empty() && predicted.is_empty() {
        return SampleScore {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            exact_match: true,
        };
    }
    let intersection = gold.intersection(predicted).count() as f64;
    let precision = if predicted.is_empty() {
        0.0
    } else {
        intersection / predicted.len() as f64
    };
    let recall = if gold.is_empty() {
        0.0
    } else {
        intersection / gold.len() as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    SampleScore {
        precision,
        recall,
        f1,
        exact_match: gold == predicted,
    }
}

/// Scores a whole prediction run against gold annotations.
///
/// Every gold image must be present in the predictions; images present
/// only in the predictions are ignored and counted in
/// `extra_predictions`. Samples are scored in gold input order and
/// aggregated sequentially in that order, so results are bit-identical
/// across thread counts.
pub fn evaluate_concepts(
    gold: &ConceptAnnotationSet,
    predicted: &ConceptAnnotationSet,
) -> Result<ConceptEvalResult, ScoringError> {
    if gold.is_empty() {
        return Err(ScoringError::EmptyGold);
    }
    let pairs: Vec<(&BTreeSet<ConceptId>, &BTreeSet<ConceptId>)> = gold
        .iter()
        .map(|(image_id, gold_set)| {
            predicted
                .get(image_id)
                .map(|pred_set| (gold_set, pred_set))
                .ok_or_else(|| ScoringError::MissingPrediction(image_id.to_string()))
        })
        .collect::<Result<_, _>>()?;

    let per_sample: Vec<SampleScore> = pairs
        .par_iter()
        .map(|(gold_set, pred_set)| score_concept_sets(gold_set, pred_set))
        .collect();

    let n = per_sample.len();
    let mut exact = 0usize;
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for s in &per_sample {
        if s.exact_match {
            exact += 1;
        }
        precision_sum += s.precision;
        recall_sum += s.recall;
        f1_sum += s.f1;
    }
    let extra_predictions = predicted
        .iter()
        .filter(|(id, _)| !gold.contains_image(id))
        .count();

    Ok(ConceptEvalResult {
        accuracy: exact as f64 / n as f64,
        precision: precision_sum / n as f64,
        recall: recall_sum / n as f64,
        f1: f1_sum / n as f64,
        n_samples: n,
        per_sample,
        extra_predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConceptId;

    fn cid(s: &str) -> ConceptId {
        ConceptId::new(s).unwrap()
    }

    fn set(ids: &[&str]) -> BTreeSet<ConceptId> {
        ids.iter().map(|s| cid(s)).collect()
    }

    fn annotations(entries: &[(&str, &[&str])]) -> ConceptAnnotationSet {
        ConceptAnnotationSet::new(
            entries
                .iter()
                .map(|(id, cuis)| (id.to_string(), set(cuis))),
        )
        .unwrap()
    }

    #[test]
    fn partial_overlap_sample() {
        let s = score_concept_sets(&set(&["C1", "C2"]), &set(&["C1"]));
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
        assert_eq!(s.f1, 2.0 / 3.0);
        assert!(!s.exact_match);
    }

    #[test]
    fn both_empty_convention() {
        let s = score_concept_sets(&set(&[]), &set(&[]));
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        assert!(s.exact_match);
    }

    #[test]
    fn disjoint_sets_score_zero() {
        let s = score_concept_sets(&set(&["C1"]), &set(&["C3"]));
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert!(!s.exact_match);
    }

    #[test]
    fn one_sided_empty() {
        let s = score_concept_sets(&set(&["C1"]), &set(&[]));
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let s = score_concept_sets(&set(&[]), &set(&["C1"]));
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn corpus_f1_is_mean_of_samples() {
        // per-sample F1 {1.0, 1/3} -> corpus F1 = 2/3
        let gold = annotations(&[("a", &["C1"]), ("b", &["C1", "C2", "C3"])]);
        let pred = annotations(&[("a", &["C1"]), ("b", &["C1", "C4", "C5"])]);
        let result = evaluate_concepts(&gold, &pred).unwrap();
        assert_eq!(result.per_sample[0].f1, 1.0);
        assert_eq!(result.per_sample[1].f1, 1.0 / 3.0);
        assert_eq!(result.f1, (1.0 + 1.0 / 3.0) / 2.0);
        assert_eq!(result.n_samples, 2);
    }

    #[test]
    fn identical_predictions_score_one() {
        let gold = annotations(&[("a", &["C1", "C2"]), ("b", &[]), ("c", &["C3"])]);
        let result = evaluate_concepts(&gold, &gold).unwrap();
        assert_eq!(result.accuracy, 1.0);
        assert_eq!(result.precision, 1.0);
        assert_eq!(result.recall, 1.0);
        assert_eq!(result.f1, 1.0);
    }

    #[test]
    fn missing_prediction_names_the_image() {
        let gold = annotations(&[("im1", &["C1"]), ("im9", &["C2"])]);
        let pred = annotations(&[("im1", &["C1"])]);
        let err = evaluate_concepts(&gold, &pred).unwrap_err();
        assert_eq!(err, ScoringError::MissingPrediction("im9".to_string()));
        assert!(err.to_string().contains("im9"));
    }

    #[test]
    fn extra_predictions_are_counted_not_scored() {
        let gold = annotations(&[("a", &["C1"])]);
        let pred = annotations(&[("a", &["C1"]), ("zz", &["C9"])]);
        let result = evaluate_concepts(&gold, &pred).unwrap();
        assert_eq!(result.extra_predictions, 1);
        assert_eq!(result.n_samples, 1);
        assert_eq!(result.f1, 1.0);
    }

    #[test]
    fn empty_gold_is_an_error() {
        let gold = ConceptAnnotationSet::default();
        let pred = annotations(&[("a", &["C1"])]);
        assert_eq!(evaluate_concepts(&gold, &pred), Err(ScoringError::EmptyGold));
    }

    #[test]
    fn permuting_image_order_leaves_aggregates_unchanged() {
        let gold_fwd = annotations(&[("a", &["C1", "C2"]), ("b", &["C3"]), ("c", &[])]);
        let pred = annotations(&[("b", &["C3", "C4"]), ("c", &[]), ("a", &["C1"])]);
        let gold_rev = annotations(&[("c", &[]), ("b", &["C3"]), ("a", &["C1", "C2"])]);
        let fwd = evaluate_concepts(&gold_fwd, &pred).unwrap();
        let rev = evaluate_concepts(&gold_rev, &pred).unwrap();
        assert_eq!(fwd.accuracy, rev.accuracy);
        assert_eq!(fwd.precision, rev.precision);
        assert_eq!(fwd.recall, rev.recall);
        assert_eq!(fwd.f1, rev.f1);
        assert_ne!(fwd.per_sample, rev.per_sample);
    }

    #[test]
    fn adding_correct_prediction_never_lowers_recall() {
        let gold = set(&["C1", "C2", "C3"]);
        let before = score_concept_sets(&gold, &set(&["C1", "C9"]));
        let after = score_concept_sets(&gold, &set(&["C1", "C2", "C9"]));
        assert!(after.recall >= before.recall);
    }

    #[test]
    fn adding_incorrect_prediction_never_raises_precision() {
        let gold = set(&["C1", "C2"]);
        let before = score_concept_sets(&gold, &set(&["C1"]));
        let after = score_concept_sets(&gold, &set(&["C1", "C9"]));
        assert!(after.precision <= before.precision);
    }

    #[test]
    fn f1_bounded_by_max_of_precision_recall() {
        let cases = [
            (set(&["C1", "C2", "C3"]), set(&["C1", "C4"])),
            (set(&["C1"]), set(&["C1", "C2", "C3"])),
            (set(&["C1", "C2"]), set(&["C2", "C3"])),
        ];
        for (gold, pred) in &cases {
            let s = score_concept_sets(gold, pred);
            assert!(s.f1 <= s.precision.max(s.recall) + 1e-15);
            assert_eq!(s.f1 == 1.0, s.precision == 1.0 && s.recall == 1.0);
        }
    }
}
