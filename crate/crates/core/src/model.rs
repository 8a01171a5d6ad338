//! Shared domain types and their validation.
//!
//! Every type here is immutable after construction and validated by its
//! constructor; no I/O and no metric logic. Image-id ordering is always
//! the order in which ids were supplied, so downstream output is
//! byte-stable across runs.

use std::collections::BTreeSet;
use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

/// Validation failure raised by the constructors in this module.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("concept id is empty")]
    EmptyConceptId,
    #[error("concept id {id:?} contains forbidden character {ch:?}")]
    ForbiddenCharacter { id: String, ch: char },
    #[error("duplicate concept id {0:?}")]
    DuplicateConceptId(String),
    #[error("image id is empty")]
    EmptyImageId,
    #[error("duplicate image id {0:?}")]
    DuplicateImageId(String),
    #[error("value out of range [0,1] at row {row}, column {col}: {value}")]
    ValueOutOfRange { row: usize, col: usize, value: f64 },
    #[error("dimension mismatch: expected {expected} values ({rows} images x {cols} concepts), got {actual}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },
    #[error("tau must be in [0,1], got {0}")]
    TauOutOfRange(f64),
    #[error("duplicate configuration label {0:?}")]
    DuplicateLabel(String),
    #[error("metric {name:?} out of range [0,1] in row {label:?}: {value}")]
    MetricOutOfRange {
        label: String,
        name: String,
        value: f64,
    },
    #[error("token {0:?} is not a lowercase alphanumeric token")]
    InvalidToken(String),
}

/// A UMLS-style concept identifier such as `C0040405`.
///
/// The value is a non-empty token free of whitespace, semicolons and
/// commas, so it can be embedded in the line-oriented file formats
/// without escaping.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConceptId(String);

impl ConceptId {
    pub fn new(value: impl Into<String>) -> Result<Self, ValidationError> {
        let value = value.into();
        if value.is_empty() {
            return Err(ValidationError::EmptyConceptId);
        }
        if let Some(ch) = value.chars().find(|c| *c == ';' || *c == ',' || c.is_whitespace()) {
            return Err(ValidationError::ForbiddenCharacter { id: value, ch });
        }
        Ok(ConceptId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One vocabulary entry: a concept id with an optional human-readable
/// name and a training-set frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabEntry {
    pub id: ConceptId,
    pub name: Option<String>,
    pub frequency: u64,
}

/// Ordered set of concept identifiers.
///
/// Iteration order is insertion order and is stable across runs; ids are
/// unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConceptVocabulary {
    entries: Vec<VocabEntry>,
    index: IndexMap<String, usize>,
}

impl ConceptVocabulary {
    pub fn new(entries: impl IntoIterator<Item = VocabEntry>) -> Result<Self, ValidationError> {
        let mut vocab = ConceptVocabulary::default();
        for entry in entries {
            vocab.push(entry)?;
        }
        Ok(vocab)
    }

    /// Builds a vocabulary from bare ids (no names, zero frequencies).
    pub fn from_ids(ids: impl IntoIterator<Item = ConceptId>) -> Result<Self, ValidationError> {
        Self::new(ids.into_iter().map(|id| VocabEntry {
            id,
            name: None,
            frequency: 0,
        }))
    }

    fn push(&mut self, entry: VocabEntry) -> Result<(), ValidationError> {
        if self.index.contains_key(entry.id.as_str()) {
            return Err(ValidationError::DuplicateConceptId(
                entry.id.as_str().to_string(),
            ));
        }
        self.index
            .insert(entry.id.as_str().to_string(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn contains(&self, id: &ConceptId) -> bool {
        self.index.contains_key(id.as_str())
    }

    pub fn position(&self, id: &ConceptId) -> Option<usize> {
        self.index.get(id.as_str()).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ConceptId> {
        self.entries.iter().map(|e| &e.id)
    }

    /// Display name for a concept, falling back to the id itself.
    pub fn display_name(&self, id: &ConceptId) -> &str {
        self.position(id)
            .and_then(|i| self.entries[i].name.as_deref())
            .unwrap_or(id.as_str())
    }
}

/// Per-image, per-concept confidence scores in `[0,1]`.
///
/// Dense row-major storage: one row per image, one column per
/// vocabulary concept. Values are post-sigmoid probabilities; logit
/// conversion is the caller's job.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    image_ids: Vec<String>,
    concepts: ConceptVocabulary,
    values: Vec<f64>,
}

impl ProbabilityMatrix {
    pub fn new(
        image_ids: Vec<String>,
        concepts: ConceptVocabulary,
        values: Vec<f64>,
    ) -> Result<Self, ValidationError> {
        let rows = image_ids.len();
        let cols = concepts.len();
        if values.len() != rows * cols {
            return Err(ValidationError::DimensionMismatch {
                rows,
                cols,
                expected: rows * cols,
                actual: values.len(),
            });
        }
        let mut seen = IndexMap::with_capacity(rows);
        for id in &image_ids {
            if id.is_empty() {
                return Err(ValidationError::EmptyImageId);
            }
            if seen.insert(id.as_str(), ()).is_some() {
                return Err(ValidationError::DuplicateImageId(id.clone()));
            }
        }
        for (i, &v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(ValidationError::ValueOutOfRange {
                    row: i / cols.max(1),
                    col: i % cols.max(1),
                    value: v,
                });
            }
        }
        Ok(ProbabilityMatrix {
            image_ids,
            concepts,
            values,
        })
    }

    pub fn n_images(&self) -> usize {
        self.image_ids.len()
    }

    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn concepts(&self) -> &ConceptVocabulary {
        &self.concepts
    }

    /// Scores for one image, in vocabulary column order.
    pub fn row(&self, image: usize) -> &[f64] {
        let cols = self.concepts.len();
        &self.values[image * cols..(image + 1) * cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Mapping image-id -> set of gold or predicted concept ids.
///
/// Image order is insertion order; per-image sets are deduplicated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConceptAnnotationSet {
    images: IndexMap<String, BTreeSet<ConceptId>>,
}

impl ConceptAnnotationSet {
    pub fn new(
        images: impl IntoIterator<Item = (String, BTreeSet<ConceptId>)>,
    ) -> Result<Self, ValidationError> {
        let mut set = ConceptAnnotationSet::default();
        for (id, concepts) in images {
            set.insert(id, concepts)?;
        }
        Ok(set)
    }

    pub fn insert(
        &mut self,
        image_id: String,
        concepts: BTreeSet<ConceptId>,
    ) -> Result<(), ValidationError> {
        if image_id.is_empty() {
            return Err(ValidationError::EmptyImageId);
        }
        if self.images.contains_key(&image_id) {
            return Err(ValidationError::DuplicateImageId(image_id));
        }
        self.images.insert(image_id, concepts);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&BTreeSet<ConceptId>> {
        self.images.get(image_id)
    }

    pub fn contains_image(&self, image_id: &str) -> bool {
        self.images.contains_key(image_id)
    }

    /// Iterates images in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<ConceptId>)> {
        self.images.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Mapping image-id -> caption text (captions may be empty).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CaptionCorpus {
    captions: IndexMap<String, String>,
}

impl CaptionCorpus {
    pub fn new(
        captions: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ValidationError> {
        let mut corpus = CaptionCorpus::default();
        for (id, caption) in captions {
            corpus.insert(id, caption)?;
        }
        Ok(corpus)
    }

    pub fn insert(&mut self, image_id: String, caption: String) -> Result<(), ValidationError> {
        if image_id.is_empty() {
            return Err(ValidationError::EmptyImageId);
        }
        if self.captions.contains_key(&image_id) {
            return Err(ValidationError::DuplicateImageId(image_id));
        }
        self.captions.insert(image_id, caption);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&str> {
        self.captions.get(image_id).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.captions.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Decision threshold for converting scores into predicted concept sets.
///
/// Comparison is strict: a concept is retained when its score is
/// strictly greater than `tau`, so a score exactly equal to the
/// threshold is excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdConfig {
    tau: f64,
}

impl ThresholdConfig {
    pub fn new(tau: f64) -> Result<Self, ValidationError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(ValidationError::TauOutOfRange(tau));
        }
        Ok(ThresholdConfig { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn retains(&self, score: f64) -> bool {
        score > self.tau
    }
}

/// Per-image concept scores: precision, recall, F1 and exact set match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub exact_match: bool,
}

/// Named configurations mapped to metric values, the shape of every
/// report this toolkit emits. Row order is insertion order; labels are
/// unique and all values must lie in `[0,1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    rows: Vec<(String, IndexMap<String, f64>)>,
}

impl EvalReport {
    pub fn new() -> Self {
        EvalReport::default()
    }

    pub fn push_row(
        &mut self,
        label: impl Into<String>,
        metrics: impl IntoIterator<Item = (String, f64)>,
    ) -> Result<(), ValidationError> {
        let label = label.into();
        if self.rows.iter().any(|(l, _)| *l == label) {
            return Err(ValidationError::DuplicateLabel(label));
        }
        let mut row = IndexMap::new();
        for (name, value) in metrics {
            if !(0.0..=1.0).contains(&value) {
                return Err(ValidationError::MetricOutOfRange {
                    label,
                    name,
                    value,
                });
            }
            row.insert(name, value);
        }
        self.rows.push((label, row));
        Ok(())
    }

    pub fn rows(&self) -> &[(String, IndexMap<String, f64>)] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Metric column names in first-appearance order across rows.
    pub fn metric_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for (_, row) in &self.rows {
            for name in row.keys() {
                if !names.contains(&name.as_str()) {
                    names.push(name);
                }
            }
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cid(s: &str) -> ConceptId {
        ConceptId::new(s).unwrap()
    }

    #[test]
    fn concept_id_rejects_forbidden_characters() {
        assert_eq!(ConceptId::new(""), Err(ValidationError::EmptyConceptId));
        for bad in ["C1;C2", "C1,C2", "C1\tC2", "C1\nC2", "C1 C2"] {
            assert!(matches!(
                ConceptId::new(bad),
                Err(ValidationError::ForbiddenCharacter { .. })
            ));
        }
        assert_eq!(cid("C0040405").as_str(), "C0040405");
    }

    #[test]
    fn vocabulary_keeps_insertion_order_and_rejects_duplicates() {
        let vocab = ConceptVocabulary::from_ids([cid("C2"), cid("C1"), cid("C3")]).unwrap();
        let ids: Vec<&str> = vocab.ids().map(ConceptId::as_str).collect();
        assert_eq!(ids, ["C2", "C1", "C3"]);
        assert_eq!(vocab.position(&cid("C1")), Some(1));

        let dup = ConceptVocabulary::from_ids([cid("C1"), cid("C1")]);
        assert_eq!(dup, Err(ValidationError::DuplicateConceptId("C1".into())));
    }

    #[test]
    fn matrix_minimal_construction() {
        let vocab = ConceptVocabulary::from_ids([cid("C1"), cid("C2")]).unwrap();
        let m = ProbabilityMatrix::new(vec!["im1".into()], vocab, vec![0.7, 0.4]).unwrap();
        assert_eq!(m.n_images(), 1);
        assert_eq!(m.row(0), &[0.7, 0.4]);
    }

    #[test]
    fn matrix_rejects_out_of_range_value() {
        let vocab = ConceptVocabulary::from_ids([cid("C1"), cid("C2")]).unwrap();
        let err = ProbabilityMatrix::new(vec!["im1".into()], vocab, vec![0.7, 1.5]).unwrap_err();
        assert!(err.to_string().contains("value out of range"));
        let vocab = ConceptVocabulary::from_ids([cid("C1")]).unwrap();
        let err = ProbabilityMatrix::new(vec!["im1".into()], vocab, vec![f64::NAN]).unwrap_err();
        assert!(matches!(err, ValidationError::ValueOutOfRange { .. }));
    }

    #[test]
    fn matrix_rejects_duplicate_image_id() {
        let vocab = ConceptVocabulary::from_ids([cid("C1")]).unwrap();
        let err = ProbabilityMatrix::new(
            vec!["im1".into(), "im1".into()],
            vocab,
            vec![0.1, 0.2],
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate image id"));
    }

    #[test]
    fn matrix_rejects_dimension_mismatch() {
        let vocab = ConceptVocabulary::from_ids([cid("C1"), cid("C2")]).unwrap();
        let err = ProbabilityMatrix::new(vec!["im1".into()], vocab, vec![0.7]).unwrap_err();
        assert!(matches!(err, ValidationError::DimensionMismatch { .. }));
    }

    #[test]
    fn annotation_set_round_trips_contents() {
        let set = ConceptAnnotationSet::new([
            ("im2".to_string(), BTreeSet::from([cid("C1")])),
            ("im1".to_string(), BTreeSet::from([cid("C2"), cid("C1")])),
        ])
        .unwrap();
        let order: Vec<&str> = set.iter().map(|(id, _)| id).collect();
        assert_eq!(order, ["im2", "im1"]);
        assert_eq!(set.get("im1").unwrap().len(), 2);

        let dup = ConceptAnnotationSet::new([
            ("im1".to_string(), BTreeSet::new()),
            ("im1".to_string(), BTreeSet::new()),
        ]);
        assert_eq!(dup, Err(ValidationError::DuplicateImageId("im1".into())));
    }

    #[test]
    fn threshold_config_bounds_and_strictness() {
        assert!(ThresholdConfig::new(-0.1).is_err());
        assert!(ThresholdConfig::new(1.1).is_err());
        let t = ThresholdConfig::new(0.5).unwrap();
        assert!(t.retains(0.500001));
        assert!(!t.retains(0.5));
    }

    #[test]
    fn report_validates_labels_and_ranges() {
        let mut report = EvalReport::new();
        report
            .push_row("Swin-V2", [("F1".to_string(), 0.589444)])
            .unwrap();
        assert!(report
            .push_row("Swin-V2", [("F1".to_string(), 0.5)])
            .is_err());
        assert!(report
            .push_row("other", [("F1".to_string(), 1.2)])
            .is_err());
        assert_eq!(report.metric_names(), ["F1"]);
    }
}
