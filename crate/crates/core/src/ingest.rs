//! Parsing and serialization of every on-disk format.
//!
//! Formats (all UTF-8, `,` separator, `"` quote with `""` escaping where
//! quoting applies, LF or CRLF accepted on read, LF emitted on write, a
//! leading UTF-8 BOM is tolerated and skipped):
//!
//! * concept annotations / predictions: `<image-id>,<cui1>;<cui2>;...`,
//!   optional header `ID,CUIs`
//! * probability matrix: header `ID,<cui1>,<cui2>,...` then one row of
//!   floats per image
//! * captions: `<image-id>,<caption>` with standard CSV quoting,
//!   optional header `ID,Caption`
//! * token embeddings: one JSON object per line,
//!   `{"id": str, "tokens": [str...], "vectors": [[float...]...]}`
//! * reports: CSV (values at 5 decimal places) or JSON (ordered array)
//!
//! Every parser is single-pass and reports the 1-based line number of
//! the first error without reading further.

use std::io::{self, BufRead, Write};

use indexmap::IndexMap;
use serde::Deserialize;
use thiserror::Error;

use crate::model::{
    CaptionCorpus, ConceptAnnotationSet, ConceptId, ConceptVocabulary, EvalReport,
    ProbabilityMatrix, ValidationError,
};

/// A format violation in an input stream, pointing at the offending
/// record.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{context}:{line}: {message}")]
pub struct FileFormatError {
    pub context: String,
    /// 1-based line number of the record where the error was detected.
    pub line: usize,
    pub message: String,
}

/// Any failure while reading or writing one of the toolkit formats.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Format(#[from] FileFormatError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    /// The in-memory data cannot be represented in the target format
    /// (e.g. an image id containing the field separator).
    #[error("{context}: {message}")]
    Unrepresentable { context: String, message: String },
}

fn format_err(context: &str, line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Format(FileFormatError {
        context: context.to_string(),
        line,
        message: message.into(),
    })
}

fn io_err(context: &str, source: io::Error) -> IngestError {
    IngestError::Io {
        context: context.to_string(),
        source,
    }
}

/// Maps a `lines()` error: invalid UTF-8 becomes a format error at the
/// current line, anything else stays an I/O error.
fn line_err(context: &str, line: usize, e: io::Error) -> IngestError {
    if e.kind() == io::ErrorKind::InvalidData {
        format_err(context, line, "invalid UTF-8")
    } else {
        io_err(context, e)
    }
}

fn strip_bom(line: &str) -> &str {
    line.strip_prefix('\u{feff}').unwrap_or(line)
}

/// Collapses the output format flag for [`write_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Parses `<image-id>,<cui1>;<cui2>;...` lines into an annotation set.
///
/// An empty concept field yields an image with no concepts; duplicate
/// CUIs within a line are collapsed, duplicate image ids across lines
/// are an error. A single leading `ID,CUIs` header is skipped.
pub fn parse_concept_annotations<R: BufRead>(
    reader: R,
    context: &str,
) -> Result<ConceptAnnotationSet, IngestError> {
    let mut set = ConceptAnnotationSet::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| line_err(context, line_no, e))?;
        let line = if line_no == 1 { strip_bom(&line) } else { &line };
        if line_no == 1 && line == "ID,CUIs" {
            continue;
        }
        let (image_id, cuis) = line
            .split_once(',')
            .ok_or_else(|| format_err(context, line_no, "malformed line: missing ',' separator"))?;
        let mut concepts = std::collections::BTreeSet::new();
        if !cuis.is_empty() {
            for token in cuis.split(';') {
                let cui = ConceptId::new(token).map_err(|e| {
                    format_err(context, line_no, format!("invalid CUI token: {e}"))
                })?;
                concepts.insert(cui);
            }
        }
        set.insert(image_id.to_string(), concepts)
            .map_err(|e| format_err(context, line_no, e.to_string()))?;
    }
    Ok(set)
}

/// Writes an annotation set in the `<image-id>,<cui1>;<cui2>` format.
///
/// Images are emitted in input order with CUIs sorted lexicographically,
/// so output is byte-stable and re-parses to the same set.
pub fn write_concept_predictions<W: Write>(
    set: &ConceptAnnotationSet,
    mut sink: W,
    context: &str,
) -> Result<(), IngestError> {
    for (image_id, concepts) in set.iter() {
        check_plain_field(image_id, "image id", context)?;
        let joined: Vec<&str> = concepts.iter().map(ConceptId::as_str).collect();
        writeln!(sink, "{},{}", image_id, joined.join(";")).map_err(|e| io_err(context, e))?;
    }
    Ok(())
}

/// Parses the probability-matrix CSV: header `ID,<cui1>,...` then one
/// float per header CUI on each row. Column order equals header order.
pub fn parse_probability_matrix<R: BufRead>(
    reader: R,
    context: &str,
) -> Result<ProbabilityMatrix, IngestError> {
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| line_err(context, 1, e))?,
        None => return Err(format_err(context, 1, "missing header line")),
    };
    let header = strip_bom(&header);
    let mut fields = header.split(',');
    match fields.next() {
        Some("ID") => {}
        _ => return Err(format_err(context, 1, "malformed header: expected first field 'ID'")),
    }
    let mut vocab = Vec::new();
    for token in fields {
        let cui = ConceptId::new(token)
            .map_err(|e| format_err(context, 1, format!("invalid CUI in header: {e}")))?;
        vocab.push(cui);
    }
    let n_concepts = vocab.len();
    let vocab = ConceptVocabulary::from_ids(vocab)
        .map_err(|e| format_err(context, 1, format!("duplicate CUI in header: {e}")))?;

    let mut image_ids: Vec<String> = Vec::new();
    let mut seen: IndexMap<String, ()> = IndexMap::new();
    let mut values: Vec<f64> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| line_err(context, line_no, e))?;
        let mut fields = line.split(',');
        let image_id = fields.next().unwrap_or("");
        if image_id.is_empty() {
            return Err(format_err(context, line_no, "image id is empty"));
        }
        if seen.insert(image_id.to_string(), ()).is_some() {
            return Err(format_err(
                context,
                line_no,
                format!("duplicate image id {image_id:?}"),
            ));
        }
        let mut row_len = 0usize;
        for token in fields {
            row_len += 1;
            if row_len > n_concepts {
                continue; // keep counting for the error message
            }
            let value: f64 = token.parse().map_err(|_| {
                format_err(context, line_no, format!("invalid number {token:?}"))
            })?;
            if !(0.0..=1.0).contains(&value) {
                return Err(format_err(
                    context,
                    line_no,
                    format!("value out of range [0,1]: {value}"),
                ));
            }
            values.push(value);
        }
        if row_len != n_concepts {
            return Err(format_err(
                context,
                line_no,
                format!("expected {n_concepts} values, got {row_len}"),
            ));
        }
        image_ids.push(image_id.to_string());
    }

    ProbabilityMatrix::new(image_ids, vocab, values)
        .map_err(|e| format_err(context, 1, e.to_string()))
}

/// Writes a probability matrix in the same CSV format
/// [`parse_probability_matrix`] reads. Floats use the shortest
/// representation that round-trips exactly.
pub fn write_probability_matrix<W: Write>(
    matrix: &ProbabilityMatrix,
    mut sink: W,
    context: &str,
) -> Result<(), IngestError> {
    let cuis: Vec<&str> = matrix.concepts().ids().map(ConceptId::as_str).collect();
    write!(sink, "ID").map_err(|e| io_err(context, e))?;
    for cui in &cuis {
        write!(sink, ",{cui}").map_err(|e| io_err(context, e))?;
    }
    writeln!(sink).map_err(|e| io_err(context, e))?;
    for (i, image_id) in matrix.image_ids().iter().enumerate() {
        check_plain_field(image_id, "image id", context)?;
        write!(sink, "{image_id}").map_err(|e| io_err(context, e))?;
        for v in matrix.row(i) {
            write!(sink, ",{v}").map_err(|e| io_err(context, e))?;
        }
        writeln!(sink).map_err(|e| io_err(context, e))?;
    }
    Ok(())
}

/// Parses the two-field captions CSV, preserving caption text
/// byte-for-byte after unquoting. A single leading `ID,Caption` header
/// is skipped.
pub fn parse_captions<R: BufRead>(mut reader: R, context: &str) -> Result<CaptionCorpus, IngestError> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| line_err(context, 1, e))?;
    let text = strip_bom(&text);

    let mut corpus = CaptionCorpus::default();
    let mut first = true;
    let mut scanner = CsvScanner::new(text);
    while let Some((record_line, fields)) = scanner.next_record().map_err(|(line, msg)| {
        format_err(context, line, msg)
    })? {
        if fields.len() != 2 {
            return Err(format_err(
                context,
                record_line,
                format!("expected 2 fields, got {}", fields.len()),
            ));
        }
        let mut fields = fields.into_iter();
        let image_id = fields.next().unwrap();
        let caption = fields.next().unwrap();
        if first && image_id == "ID" && caption == "Caption" {
            first = false;
            continue;
        }
        first = false;
        corpus
            .insert(image_id, caption)
            .map_err(|e| format_err(context, record_line, e.to_string()))?;
    }
    Ok(corpus)
}

/// Writes a caption corpus with minimal CSV quoting (fields containing
/// the separator, a quote, or a line break are quoted with `""`
/// escaping). Round-trips byte-exactly through [`parse_captions`].
pub fn write_captions<W: Write>(
    corpus: &CaptionCorpus,
    mut sink: W,
    context: &str,
) -> Result<(), IngestError> {
    for (image_id, caption) in corpus.iter() {
        let id = csv_quote(image_id);
        let text = csv_quote(caption);
        writeln!(sink, "{id},{text}").map_err(|e| io_err(context, e))?;
    }
    Ok(())
}

fn csv_quote(field: &str) -> String {
    if field.contains(|c| c == ',' || c == '"' || c == '\n' || c == '\r') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Strict RFC-4180-style record scanner: `,` separator, `"` quoting with
/// `""` escapes, LF or CRLF terminators, quoted fields may span lines.
struct CsvScanner<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    done: bool,
}

impl<'a> CsvScanner<'a> {
    fn new(text: &'a str) -> Self {
        CsvScanner {
            chars: text.chars().peekable(),
            line: 1,
            done: false,
        }
    }

    /// Returns `(starting line, fields)` or `Err((line, message))`.
    fn next_record(&mut self) -> Result<Option<(usize, Vec<String>)>, (usize, String)> {
        if self.done || self.chars.peek().is_none() {
            return Ok(None);
        }
        let record_line = self.line;
        let mut fields = Vec::new();
        loop {
            let (field, terminated) = self.next_field(record_line)?;
            fields.push(field);
            if terminated {
                return Ok(Some((record_line, fields)));
            }
        }
    }

    /// Reads one field; the flag is true when the record ended (line
    /// terminator or end of input).
    fn next_field(&mut self, record_line: usize) -> Result<(String, bool), (usize, String)> {
        let mut field = String::new();
        if self.chars.peek() == Some(&'"') {
            self.chars.next();
            loop {
                match self.chars.next() {
                    None => return Err((record_line, "unterminated quote".to_string())),
                    Some('"') => {
                        if self.chars.peek() == Some(&'"') {
                            self.chars.next();
                            field.push('"');
                        } else {
                            break;
                        }
                    }
                    Some('\n') => {
                        self.line += 1;
                        field.push('\n');
                    }
                    Some(c) => field.push(c),
                }
            }
            // after the closing quote only a separator or terminator may follow
            match self.chars.peek() {
                None => {
                    self.done = true;
                    Ok((field, true))
                }
                Some(',') => {
                    self.chars.next();
                    Ok((field, false))
                }
                Some('\n') => {
                    self.chars.next();
                    self.line += 1;
                    Ok((field, true))
                }
                Some('\r') => {
                    self.chars.next();
                    if self.chars.peek() == Some(&'\n') {
                        self.chars.next();
                        self.line += 1;
                        Ok((field, true))
                    } else {
                        Err((record_line, "unexpected character after closing quote".to_string()))
                    }
                }
                Some(c) => Err((
                    record_line,
                    format!("unexpected character {c:?} after closing quote"),
                )),
            }
        } else {
            loop {
                match self.chars.peek() {
                    None => {
                        self.done = true;
                        return Ok((field, true));
                    }
                    Some(',') => {
                        self.chars.next();
                        return Ok((field, false));
                    }
                    Some('\n') => {
                        self.chars.next();
                        self.line += 1;
                        return Ok((field, true));
                    }
                    Some('\r') => {
                        self.chars.next();
                        if self.chars.peek() == Some(&'\n') {
                            self.chars.next();
                            self.line += 1;
                            return Ok((field, true));
                        }
                        field.push('\r');
                    }
                    Some(&c) => {
                        self.chars.next();
                        field.push(c);
                    }
                }
            }
        }
    }
}

/// Token embeddings for one image's caption: parallel lists of tokens
/// and (unnormalized) vectors of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

/// Parsed embeddings keyed by image id, in file order.
pub type EmbeddingSet = IndexMap<String, TokenEmbeddings>;

#[derive(Deserialize)]
struct EmbeddingRecord {
    id: String,
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

/// Parses JSONL token embeddings: one
/// `{"id":..., "tokens":[...], "vectors":[[...]]}` object per line.
/// Vectors are not normalized here.
pub fn parse_token_embeddings<R: BufRead>(
    reader: R,
    context: &str,
) -> Result<EmbeddingSet, IngestError> {
    let mut set = EmbeddingSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| line_err(context, line_no, e))?;
        let line = if line_no == 1 { strip_bom(&line) } else { &line };
        let record: EmbeddingRecord = serde_json::from_str(line)
            .map_err(|e| format_err(context, line_no, format!("malformed JSON line: {e}")))?;
        if record.id.is_empty() {
            return Err(format_err(context, line_no, "image id is empty"));
        }
        if record.tokens.len() != record.vectors.len() {
            return Err(format_err(
                context,
                line_no,
                format!(
                    "length mismatch: {} tokens vs {} vectors",
                    record.tokens.len(),
                    record.vectors.len()
                ),
            ));
        }
        if let Some(first) = record.vectors.first() {
            let dim = first.len();
            for (i, v) in record.vectors.iter().enumerate() {
                if v.len() != dim {
                    return Err(format_err(
                        context,
                        line_no,
                        format!(
                            "inconsistent dimension: vector 0 has {dim}, vector {i} has {}",
                            v.len()
                        ),
                    ));
                }
            }
        }
        if set.contains_key(&record.id) {
            return Err(format_err(
                context,
                line_no,
                format!("duplicate image id {:?}", record.id),
            ));
        }
        set.insert(
            record.id,
            TokenEmbeddings {
                tokens: record.tokens,
                vectors: record.vectors,
            },
        );
    }
    Ok(set)
}

/// Serializes a report.
///
/// CSV: header `Configuration,<metric...>` then one row per
/// configuration with values at 5 decimal places. JSON: ordered array
/// of `{"configuration": ..., "metrics": {...}}` objects at full
/// precision.
pub fn write_report<W: Write>(
    report: &EvalReport,
    mut sink: W,
    format: ReportFormat,
    context: &str,
) -> Result<(), IngestError> {
    match format {
        ReportFormat::Csv => {
            let names = report.metric_names();
            write!(sink, "Configuration").map_err(|e| io_err(context, e))?;
            for name in &names {
                check_plain_field(name, "metric name", context)?;
                write!(sink, ",{name}").map_err(|e| io_err(context, e))?;
            }
            writeln!(sink).map_err(|e| io_err(context, e))?;
            for (label, row) in report.rows() {
                check_plain_field(label, "configuration label", context)?;
                write!(sink, "{label}").map_err(|e| io_err(context, e))?;
                for name in &names {
                    match row.get(*name) {
                        Some(v) => write!(sink, ",{v:.5}"),
                        None => write!(sink, ","),
                    }
                    .map_err(|e| io_err(context, e))?;
                }
                writeln!(sink).map_err(|e| io_err(context, e))?;
            }
        }
        ReportFormat::Json => {
            let rows: Vec<serde_json::Value> = report
                .rows()
                .iter()
                .map(|(label, metrics)| {
                    let mut obj = serde_json::Map::new();
                    obj.insert("configuration".to_string(), serde_json::json!(label));
                    let mut inner = serde_json::Map::new();
                    for (name, value) in metrics {
                        inner.insert(name.clone(), serde_json::json!(value));
                    }
                    obj.insert("metrics".to_string(), serde_json::Value::Object(inner));
                    serde_json::Value::Object(obj)
                })
                .collect();
            serde_json::to_writer_pretty(&mut sink, &rows).map_err(|e| IngestError::Io {
                context: context.to_string(),
                source: io::Error::new(io::ErrorKind::Other, e),
            })?;
            writeln!(sink).map_err(|e| io_err(context, e))?;
        }
    }
    Ok(())
}

fn check_plain_field(value: &str, what: &str, context: &str) -> Result<(), IngestError> {
    if value.contains(|c| c == ',' || c == '\n' || c == '\r') {
        return Err(IngestError::Unrepresentable {
            context: context.to_string(),
            message: format!("{what} {value:?} contains a separator or line break"),
        });
    }
    Ok(())
}
