//! Concept filtering: thresholds and threshold sweeps, probability
//! ensembling, low-frequency vocabulary filtering, and concept-to-text
//! conversion for caption fusion.

use std::collections::BTreeSet;
use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    ConceptAnnotationSet, ConceptId, ConceptVocabulary, ProbabilityMatrix, ThresholdConfig,
    ValidationError, VocabEntry,
};
use crate::scoring::{evaluate_concepts, ConceptEvalResult, ScoringError};

#[derive(Debug, Error)]
pub enum ThresholdError {
    #[error("empty grid: start {start} exceeds stop {stop}")]
    EmptyGrid { start: f64, stop: f64 },
    #[error("invalid sweep range: {0}")]
    InvalidRange(String),
    #[error("cannot ensemble an empty list of matrices")]
    EmptyEnsemble,
    #[error("image id mismatch between matrices at row {row}: {left:?} vs {right:?}")]
    ImageIdMismatch {
        row: usize,
        left: String,
        right: String,
    },
    #[error("vocabulary mismatch between matrices at column {col}: {left:?} vs {right:?}")]
    VocabularyMismatch {
        col: usize,
        left: String,
        right: String,
    },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

/// Evaluation of each threshold in a sweep grid, plus the winner.
///
/// `best_tau` is the smallest tau attaining the maximal F1.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub grid: Vec<(f64, ConceptEvalResult)>,
    pub best_tau: f64,
    pub best_f1: f64,
}

/// Converts scores into predicted concept sets: per image, the set of
/// concepts whose score is strictly greater than tau. Images with no
/// retained concept map to the empty set but stay present.
pub fn apply_threshold(matrix: &ProbabilityMatrix, config: ThresholdConfig) -> ConceptAnnotationSet {
    let ids: Vec<&ConceptId> = matrix.concepts().ids().collect();
    let mut out = ConceptAnnotationSet::default();
    for (i, image_id) in matrix.image_ids().iter().enumerate() {
        let retained: BTreeSet<ConceptId> = matrix
            .row(i)
            .iter()
            .zip(&ids)
            .filter(|(score, _)| config.retains(**score))
            .map(|(_, id)| (*id).clone())
            .collect();
        // ids are unique within a validated matrix
        out.insert(image_id.clone(), retained)
            .expect("matrix image ids are unique");
    }
    out
}

/// Grid taus: `start + i*step` for index-based construction (no
/// accumulation drift), with the final point snapped to `stop` when the
/// lattice lands within `step/2` of it.
fn build_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>, ThresholdError> {
    if !step.is_finite() || step <= 0.0 {
        return Err(ThresholdError::InvalidRange(format!(
            "step must be positive, got {step}"
        )));
    }
    if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&stop) {
        return Err(ThresholdError::InvalidRange(format!(
            "start and stop must be in [0,1], got start={start} stop={stop}"
        )));
    }
    if start > stop {
        return Err(ThresholdError::EmptyGrid { start, stop });
    }
    let k = ((stop - start) / step).round();
    let snapped = (start + k * step - stop).abs() < step / 2.0;
    let mut taus = Vec::new();
    if snapped {
        let n = k as usize;
        for i in 0..n {
            taus.push(start + i as f64 * step);
        }
        taus.push(stop);
    } else {
        let mut i = 0usize;
        loop {
            let tau = start + i as f64 * step;
            if tau > stop {
                break;
            }
            taus.push(tau);
            i += 1;
        }
    }
    Ok(taus)
}

/// Evaluates every tau on the grid `start, start+step, ..., stop`
/// against gold. Ties on F1 break toward the smallest tau.
pub fn sweep_thresholds(
    matrix: &ProbabilityMatrix,
    gold: &ConceptAnnotationSet,
    start: f64,
    stop: f64,
    step: f64,
) -> Result<SweepResult, ThresholdError> {
    let taus = build_grid(start, stop, step)?;
    let grid: Vec<(f64, ConceptEvalResult)> = taus
        .par_iter()
        .map(|&tau| {
            let config = ThresholdConfig::new(tau)?;
            let predicted = apply_threshold(matrix, config);
            let result = evaluate_concepts(gold, &predicted)?;
            Ok((tau, result))
        })
        .collect::<Result<_, ThresholdError>>()?;

    let (mut best_tau, mut best_f1) = (grid[0].0, grid[0].1.f1);
    for (tau, result) in &grid[1..] {
        if result.f1 > best_f1 {
            best_f1 = result.f1;
            best_tau = *tau;
        }
    }
    Ok(SweepResult {
        grid,
        best_tau,
        best_f1,
    })
}

/// Element-wise mean of several probability matrices (equal weights,
/// probabilities averaged in argument order). All matrices must share
/// the same image ids and vocabulary, in the same order.
///
/// Accumulation uses a running mean, so averaging k copies of a matrix
/// returns that matrix exactly.
pub fn ensemble_mean(matrices: &[ProbabilityMatrix]) -> Result<ProbabilityMatrix, ThresholdError> {
    let first = matrices.first().ok_or(ThresholdError::EmptyEnsemble)?;
    for other in &matrices[1..] {
        if let Some(row) = first
            .image_ids()
            .iter()
            .zip(other.image_ids())
            .position(|(a, b)| a != b)
        {
            return Err(ThresholdError::ImageIdMismatch {
                row,
                left: first.image_ids()[row].clone(),
                right: other.image_ids()[row].clone(),
            });
        }
        if first.n_images() != other.n_images() {
            let row = first.n_images().min(other.n_images());
            let (left, right) = if first.n_images() > other.n_images() {
                (first.image_ids()[row].clone(), "<missing>".to_string())
            } else {
                ("<missing>".to_string(), other.image_ids()[row].clone())
            };
            return Err(ThresholdError::ImageIdMismatch { row, left, right });
        }
        let left_ids: Vec<&ConceptId> = first.concepts().ids().collect();
        let right_ids: Vec<&ConceptId> = other.concepts().ids().collect();
        if let Some(col) = left_ids
            .iter()
            .zip(&right_ids)
            .position(|(a, b)| a != b)
        {
            return Err(ThresholdError::VocabularyMismatch {
                col,
                left: left_ids[col].as_str().to_string(),
                right: right_ids[col].as_str().to_string(),
            });
        }
        if left_ids.len() != right_ids.len() {
            let col = left_ids.len().min(right_ids.len());
            let (left, right) = if left_ids.len() > right_ids.len() {
                (left_ids[col].as_str().to_string(), "<missing>".to_string())
            } else {
                ("<missing>".to_string(), right_ids[col].as_str().to_string())
            };
            return Err(ThresholdError::VocabularyMismatch { col, left, right });
        }
    }

    let mut mean: Vec<f64> = first.values().to_vec();
    for (k, other) in matrices.iter().enumerate().skip(1) {
        let count = (k + 1) as f64;
        for (m, &x) in mean.iter_mut().zip(other.values()) {
            *m += (x - *m) / count;
        }
    }
    Ok(ProbabilityMatrix::new(
        first.image_ids().to_vec(),
        first.concepts().clone(),
        mean,
    )?)
}

/// Builds a vocabulary of the concepts occurring in at least
/// `min_count` training images, frequencies recorded, ordered by
/// descending frequency with ties broken lexicographically by CUI.
pub fn filter_vocabulary(training: &ConceptAnnotationSet, min_count: u64) -> ConceptVocabulary {
    let mut counts: HashMap<&ConceptId, u64> = HashMap::new();
    for (_, concepts) in training.iter() {
        for cui in concepts {
            *counts.entry(cui).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&ConceptId, u64)> = counts
        .into_iter()
        .filter(|(_, count)| *count >= min_count)
        .collect();
    kept.sort_by(|(a_id, a_count), (b_id, b_count)| {
        b_count.cmp(a_count).then_with(|| a_id.cmp(b_id))
    });
    ConceptVocabulary::new(kept.into_iter().map(|(id, frequency)| VocabEntry {
        id: id.clone(),
        name: None,
        frequency,
    }))
    .expect("counted ids are unique")
}

/// Drops every predicted CUI not present in the vocabulary; the image
/// set is unchanged. Idempotent.
pub fn restrict_predictions(
    preds: &ConceptAnnotationSet,
    vocab: &ConceptVocabulary,
) -> ConceptAnnotationSet {
    let mut out = ConceptAnnotationSet::default();
    for (image_id, concepts) in preds.iter() {
        let kept: BTreeSet<ConceptId> = concepts
            .iter()
            .filter(|cui| vocab.contains(cui))
            .cloned()
            .collect();
        out.insert(image_id.to_string(), kept)
            .expect("input image ids are unique");
    }
    out
}

/// Renders one image's retained concepts as text for caption fusion:
/// concepts scoring strictly above tau, ordered by descending score
/// (ties lexicographic by CUI), display names joined with `"; "`.
/// Concepts without a display name use the CUI verbatim.
///
/// `scores` must have one entry per vocabulary concept, in order.
pub fn concepts_to_text(scores: &[f64], vocab: &ConceptVocabulary, config: ThresholdConfig) -> String {
    assert_eq!(
        scores.len(),
        vocab.len(),
        "one score per vocabulary concept required"
    );
    let mut retained: Vec<(f64, &ConceptId)> = scores
        .iter()
        .zip(vocab.ids())
        .filter(|(score, _)| config.retains(**score))
        .map(|(score, id)| (*score, id))
        .collect();
    retained.sort_by(|(score_a, id_a), (score_b, id_b)| {
        score_b
            .total_cmp(score_a)
            .then_with(|| id_a.cmp(id_b))
    });
    retained
        .iter()
        .map(|(_, id)| vocab.display_name(id))
        .collect::<Vec<_>>()
        .join("; ")
}
