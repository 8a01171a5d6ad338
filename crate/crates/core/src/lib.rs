//! Scoring and post-processing toolkit for medical image-captioning pipelines.
//!
//! The library consumes the raw outputs of concept-detection and
//! caption-prediction models (per-concept confidence scores, generated
//! captions) and provides the deterministic machinery around them:
//! thresholding and threshold sweeps, probability ensembling, vocabulary
//! frequency filtering, repetition-collapsing caption post-processing, and
//! the full metric battery for both tasks (exact-match accuracy plus
//! sample-averaged precision/recall/F1 for concept sets; BLEU-1..4,
//! ROUGE-1/L, METEOR and BERTScore aggregation for captions).
//!
//! All scoring is double precision and deterministic: identical inputs
//! produce bit-identical results regardless of thread count.

pub mod ingest;
pub mod metrics;
pub mod model;
pub mod scoring;
pub mod stem;
pub mod text;
pub mod threshold;

pub use model::{
    CaptionCorpus, ConceptAnnotationSet, ConceptId, ConceptVocabulary, EvalReport,
    ProbabilityMatrix, SampleScore, ThresholdConfig, ValidationError,
};
pub use scoring::{evaluate_concepts, score_concept_sets, ConceptEvalResult, ScoringError};
pub use threshold::{
    apply_threshold, concepts_to_text, ensemble_mean, filter_vocabulary, restrict_predictions,
    sweep_thresholds, SweepResult, ThresholdError,
};
