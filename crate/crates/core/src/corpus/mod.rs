//! Multi-annotator value annotations: ingestion, annotator and value
//! selection, the aligned corpus tensor, and per-value subjectivity labels.
//!
//! Subjectivity polarity: `1` means the annotators of the fixed group
//! disagree on the value (subjective), `0` means they agree. Reports spell
//! the class out instead of printing the bit.

mod agreement;
mod augment;
mod cache;
mod paraphrase;
mod split;

pub use agreement::{agreement_band, fleiss_kappa, fleiss_kappa_counts, AgreementBand};
pub use augment::{augment_minority, AugmentOutcome, AugmentedPair, Generator, Provenance};
pub use cache::{load_corpus, save_corpus, CORPUS_FORMAT, CORPUS_VERSION};
pub use paraphrase::{
    word_dropout, DecodeParams, ParaphraseClient, ParaphraseError, ParaphraseRequest,
    ParaphraseResponse, ProcessParaphraser, WordDropout, DEFAULT_DROPOUT_RATE,
};
pub use split::{make_splits, SplitFractions, SplitOptions, SplitPart, SplitSpec};

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

/// Level-2 value taxonomy of the Touché23-ValueEval annotations, in column
/// order of the `Simplified_Value_lvl2_ann` vectors.
pub const VALUE_EVAL_LEVEL2: [&str; 20] = [
    "Self-direction: thought",
    "Self-direction: action",
    "Stimulation",
    "Hedonism",
    "Achievement",
    "Power: dominance",
    "Power: resources",
    "Face",
    "Security: personal",
    "Security: societal",
    "Tradition",
    "Conformity: rules",
    "Conformity: interpersonal",
    "Humility",
    "Benevolence: caring",
    "Benevolence: dependability",
    "Universalism: concern",
    "Universalism: nature",
    "Universalism: tolerance",
    "Universalism: objectivity",
];

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: duplicate annotation of argument {argument_id} by {annotator_id}")]
    Duplicate {
        line: u64,
        argument_id: String,
        annotator_id: String,
    },
    #[error("requested {requested} annotators but only {available} are present")]
    InsufficientAnnotators { requested: usize, available: usize },
    #[error("requested {requested} values but the taxonomy has {available}")]
    TooManyValues { requested: usize, available: usize },
    #[error("no argument is annotated by every selected annotator")]
    EmptyCorpus,
    #[error("subjectivity needs at least two annotators, got {0}")]
    TooFewAnnotators(usize),
    #[error("value {value}: no non-subjective instance, ratio undefined")]
    UndefinedRatio { value: usize },
    #[error("value index {index} out of range for {k} selected values")]
    UnknownValue { index: usize, k: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("minority class is empty, nothing to paraphrase")]
    EmptyMinority,
    #[error("{0}")]
    Invalid(String),
    #[error("corpus cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One annotator's multi-label value annotation of one argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub argument_id: String,
    pub annotator_id: String,
    pub text: String,
    pub labels: Vec<u8>,
}

/// Layout of an annotation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatConfig {
    pub delimiter: u8,
    pub quote: u8,
    /// `None` detects a header row from the shape of the first label field.
    pub has_header: Option<bool>,
    /// Expected label vector length; inferred from the first row when unset.
    pub taxonomy_size: Option<usize>,
}

impl FormatConfig {
    pub fn tsv() -> Self {
        Self {
            delimiter: b'\t',
            quote: b'"',
            has_header: None,
            taxonomy_size: None,
        }
    }

    pub fn csv() -> Self {
        Self {
            delimiter: b',',
            ..Self::tsv()
        }
    }
}

impl Default for FormatConfig {
    fn default() -> Self {
        Self::tsv()
    }
}

fn parse_label_vector(raw: &str, line: u64) -> Result<Vec<u8>, CorpusError> {
    let trimmed = raw.trim();
    let inner = trimmed
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| CorpusError::Parse {
            line,
            message: format!("label vector must be a bracketed list, got {trimmed:?}"),
        })?;
    let mut labels = Vec::new();
    for token in inner.split(|c: char| c == ',' || c.is_whitespace()) {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        match token {
            "0" => labels.push(0),
            "1" => labels.push(1),
            other => {
                return Err(CorpusError::Parse {
                    line,
                    message: format!("non-binary label token {other:?}"),
                })
            }
        }
    }
    Ok(labels)
}

/// Quotes preceded by a space after the delimiter are not recognised by the
/// csv reader, so they are removed here.
fn strip_quotes(field: &str, quote: u8) -> &str {
    let q = char::from(quote);
    match field.strip_prefix(q).and_then(|f| f.strip_suffix(q)) {
        Some(inner) => inner,
        None => field,
    }
}

fn looks_like_label_field(field: &str) -> bool {
    field.trim_start().starts_with('[')
}

/// Reads an annotation table with columns argument id, worker id, premise
/// and a bracketed 0/1 label list.
///
/// An unquoted label list (or premise) that was split on the delimiter is
/// stitched back together: the label list starts at the first field after
/// the premise that opens with `[`.
pub fn parse_annotations<R: Read>(
    reader: R,
    format: &FormatConfig,
) -> Result<Vec<AnnotationRecord>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .quote(format.quote)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::None)
        .from_reader(reader);

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut taxonomy = format.taxonomy_size;
    let mut first = true;
    let delim = char::from(format.delimiter).to_string();

    for row in rdr.records() {
        let row = row.map_err(|e| CorpusError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let fields: Vec<&str> = row.iter().collect();
        if fields.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let label_at = (3..fields.len()).find(|&i| looks_like_label_field(fields[i]));
        if first {
            first = false;
            let header = format.has_header.unwrap_or(label_at.is_none());
            if header {
                continue;
            }
        }
        if fields.len() < 4 {
            return Err(CorpusError::Parse {
                line,
                message: format!("expected 4 columns, found {}", fields.len()),
            });
        }
        let label_at = label_at.ok_or_else(|| CorpusError::Parse {
            line,
            message: "missing bracketed label vector".into(),
        })?;
        let text = strip_quotes(fields[2..label_at].join(&delim).trim(), format.quote).to_string();
        let labels = parse_label_vector(&fields[label_at..].join(&delim), line)?;

        match taxonomy {
            Some(n) if n != labels.len() => {
                return Err(CorpusError::Parse {
                    line,
                    message: format!("label vector has {} entries, expected {n}", labels.len()),
                })
            }
            None => taxonomy = Some(labels.len()),
            _ => {}
        }

        let argument_id = strip_quotes(fields[0].trim(), format.quote).to_string();
        let annotator_id = strip_quotes(fields[1].trim(), format.quote).to_string();
        if !seen.insert((argument_id.clone(), annotator_id.clone())) {
            return Err(CorpusError::Duplicate {
                line,
                argument_id,
                annotator_id,
            });
        }
        records.push(AnnotationRecord {
            argument_id,
            annotator_id,
            text,
            labels,
        });
    }
    Ok(records)
}

pub fn read_annotations(
    path: impl AsRef<Path>,
    format: &FormatConfig,
) -> Result<Vec<AnnotationRecord>, CorpusError> {
    parse_annotations(File::open(path)?, format)
}

/// Number of distinct arguments annotated by each annotator.
pub fn annotator_counts(records: &[AnnotationRecord]) -> Vec<(String, usize)> {
    let mut per: HashMap<&str, HashSet<&str>> = HashMap::new();
    for r in records {
        per.entry(&r.annotator_id)
            .or_default()
            .insert(&r.argument_id);
    }
    let mut counts: Vec<(String, usize)> = per
        .into_iter()
        .map(|(a, args)| (a.to_string(), args.len()))
        .collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    counts
}

/// The `k` annotators with the most distinct annotated arguments; ties go to
/// the lexicographically smaller id.
pub fn select_annotators(records: &[AnnotationRecord], k: usize) -> Result<Vec<String>, CorpusError> {
    if k == 0 {
        return Err(CorpusError::Invalid("annotator count must be at least 1".into()));
    }
    let counts = annotator_counts(records);
    if counts.len() < k {
        return Err(CorpusError::InsufficientAnnotators {
            requested: k,
            available: counts.len(),
        });
    }
    Ok(counts.into_iter().take(k).map(|(a, _)| a).collect())
}

/// Selected value columns, stored in ascending column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueSelection {
    names: Vec<String>,
    indices: Vec<usize>,
}

impl ValueSelection {
    pub fn new(names: Vec<String>, indices: Vec<usize>, taxonomy_size: usize) -> Result<Self, CorpusError> {
        if names.len() != indices.len() || indices.is_empty() {
            return Err(CorpusError::Invalid(
                "value selection needs one name per index and at least one value".into(),
            ));
        }
        let distinct: HashSet<_> = indices.iter().collect();
        if distinct.len() != indices.len() {
            return Err(CorpusError::Invalid("duplicate value index".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= taxonomy_size) {
            return Err(CorpusError::Invalid(format!(
                "value index {bad} outside taxonomy of size {taxonomy_size}"
            )));
        }
        Ok(Self { names, indices })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }
}

/// Column names for a taxonomy of `size` values.
pub fn default_value_names(size: usize) -> Vec<String> {
    if size == VALUE_EVAL_LEVEL2.len() {
        VALUE_EVAL_LEVEL2.iter().map(|s| s.to_string()).collect()
    } else {
        (0..size).map(|i| format!("value_{i}")).collect()
    }
}

/// Total positive annotations per value column over the given annotators.
pub fn value_counts(records: &[AnnotationRecord], annotators: &[String]) -> Vec<usize> {
    let chosen: HashSet<&str> = annotators.iter().map(String::as_str).collect();
    let width = records.first().map_or(0, |r| r.labels.len());
    let mut counts = vec![0usize; width];
    for r in records.iter().filter(|r| chosen.contains(r.annotator_id.as_str())) {
        for (c, &l) in counts.iter_mut().zip(&r.labels) {
            *c += usize::from(l);
        }
    }
    counts
}

/// The `k` most frequently annotated value columns among `annotators`
/// (ties by column index). `names` defaults to [`default_value_names`].
pub fn select_values(
    records: &[AnnotationRecord],
    annotators: &[String],
    k: usize,
    names: Option<&[String]>,
) -> Result<ValueSelection, CorpusError> {
    if k == 0 {
        return Err(CorpusError::Invalid("value count must be at least 1".into()));
    }
    let counts = value_counts(records, annotators);
    if k > counts.len() {
        return Err(CorpusError::TooManyValues {
            requested: k,
            available: counts.len(),
        });
    }
    let names: Vec<String> = match names {
        Some(n) if n.len() == counts.len() => n.to_vec(),
        Some(n) => {
            return Err(CorpusError::Invalid(format!(
                "{} value names given for a taxonomy of {}",
                n.len(),
                counts.len()
            )))
        }
        None => default_value_names(counts.len()),
    };
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(k).collect();
    chosen.sort_unstable();
    let chosen_names = chosen.iter().map(|&i| names[i].clone()).collect();
    ValueSelection::new(chosen_names, chosen, counts.len())
}

fn not_all_equal<'a>(labels: impl IntoIterator<Item = &'a u8>) -> Option<bool> {
    let mut it = labels.into_iter();
    let first = *it.next()?;
    let mut n = 1;
    let mut differs = false;
    for &l in it {
        n += 1;
        differs |= l != first;
    }
    (n >= 2).then_some(differs)
}

/// `1` when the annotators' labels for one (argument, value) cell are not
/// all equal.
pub fn derive_subjectivity(labels: &[u8]) -> Result<u8, CorpusError> {
    not_all_equal(labels)
        .map(u8::from)
        .ok_or(CorpusError::TooFewAnnotators(labels.len()))
}

pub(crate) fn lane_subjectivity(lane: ArrayView1<'_, u8>) -> u8 {
    not_all_equal(lane.iter()).map(u8::from).unwrap_or(0)
}

/// Arguments annotated by every selected annotator, projected onto the
/// selected values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    argument_ids: Vec<String>,
    texts: Vec<String>,
    annotator_ids: Vec<String>,
    /// `[n_args, n_annotators, k]`
    annotations: Array3<u8>,
    /// `[n_args, k]`, 1 = subjective
    subjectivity: Array2<u8>,
    value_selection: ValueSelection,
}

impl Corpus {
    /// Assembles a corpus from aligned parts and derives the subjectivity
    /// matrix.
    pub fn from_parts(
        argument_ids: Vec<String>,
        texts: Vec<String>,
        annotator_ids: Vec<String>,
        annotations: Array3<u8>,
        value_selection: ValueSelection,
    ) -> Result<Self, CorpusError> {
        let (n, m, k) = annotations.dim();
        if argument_ids.len() != n || texts.len() != n {
            return Err(CorpusError::Invalid("argument ids, texts and tensor disagree".into()));
        }
        if annotator_ids.len() != m || value_selection.k() != k {
            return Err(CorpusError::Invalid("annotator or value axis mismatch".into()));
        }
        if n == 0 {
            return Err(CorpusError::EmptyCorpus);
        }
        if m < 2 {
            return Err(CorpusError::TooFewAnnotators(m));
        }
        if annotations.iter().any(|&x| x > 1) {
            return Err(CorpusError::Invalid("annotations must be binary".into()));
        }
        let subjectivity =
            Array2::from_shape_fn((n, k), |(i, v)| lane_subjectivity(annotations.slice(ndarray::s![i, .., v])));
        Ok(Self {
            argument_ids,
            texts,
            annotator_ids,
            annotations,
            subjectivity,
            value_selection,
        })
    }

    pub fn len(&self) -> usize {
        self.argument_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.argument_ids.is_empty()
    }

    pub fn argument_ids(&self) -> &[String] {
        &self.argument_ids
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn annotator_ids(&self) -> &[String] {
        &self.annotator_ids
    }

    pub fn annotations(&self) -> &Array3<u8> {
        &self.annotations
    }

    pub fn subjectivity(&self) -> &Array2<u8> {
        &self.subjectivity
    }

    pub fn value_selection(&self) -> &ValueSelection {
        &self.value_selection
    }

    pub fn k(&self) -> usize {
        self.value_selection.k()
    }

    pub fn index_of(&self, argument_id: &str) -> Option<usize> {
        self.argument_ids.iter().position(|a| a == argument_id)
    }

    /// Map from argument id to row.
    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.argument_ids
            .iter()
            .enumerate()
            .map(|(i, a)| (a.as_str(), i))
            .collect()
    }

    pub(crate) fn check_value(&self, value: usize) -> Result<(), CorpusError> {
        if value < self.k() {
            Ok(())
        } else {
            Err(CorpusError::UnknownValue { index: value, k: self.k() })
        }
    }

    /// `(subjective, non_subjective)` counts for one value column.
    pub fn value_counts(&self, value: usize) -> Result<(usize, usize), CorpusError> {
        self.check_value(value)?;
        let s = self.subjectivity.column(value).iter().filter(|&&x| x == 1).count();
        Ok((s, self.len() - s))
    }
}

/// Keeps the arguments annotated by all `annotators` (first-appearance
/// order) and fills the annotation tensor over `selection`.
pub fn build_corpus(
    records: &[AnnotationRecord],
    annotators: &[String],
    selection: &ValueSelection,
) -> Result<Corpus, CorpusError> {
    let slot: HashMap<&str, usize> = annotators
        .iter()
        .enumerate()
        .map(|(j, a)| (a.as_str(), j))
        .collect();
    let mut order: Vec<&str> = Vec::new();
    let mut rows: HashMap<&str, (Vec<Option<&AnnotationRecord>>, &str)> = HashMap::new();
    for r in records {
        let Some(&j) = slot.get(r.annotator_id.as_str()) else {
            continue;
        };
        let entry = rows.entry(&r.argument_id).or_insert_with(|| {
            order.push(&r.argument_id);
            (vec![None; annotators.len()], &r.text)
        });
        entry.0[j] = Some(r);
    }

    let k = selection.k();
    let kept: Vec<&str> = order
        .into_iter()
        .filter(|a| rows[a].0.iter().all(Option::is_some))
        .collect();
    if kept.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut annotations = Array3::<u8>::zeros((kept.len(), annotators.len(), k));
    let mut texts = Vec::with_capacity(kept.len());
    for (i, arg) in kept.iter().enumerate() {
        let (per, text) = &rows[arg];
        texts.push(text.to_string());
        for (j, rec) in per.iter().enumerate() {
            let rec = rec.expect("filtered to complete rows");
            for (v, &col) in selection.indices().iter().enumerate() {
                let label = *rec.labels.get(col).ok_or_else(|| {
                    CorpusError::Invalid(format!("label vector of {arg} shorter than column {col}"))
                })?;
                annotations[[i, j, v]] = label;
            }
        }
    }
    Corpus::from_parts(
        kept.iter().map(|s| s.to_string()).collect(),
        texts,
        annotators.to_vec(),
        annotations,
        selection.clone(),
    )
}

/// Subjective-to-non-subjective count ratio of one value.
pub fn subjectivity_ratio(corpus: &Corpus, value: usize) -> Result<f64, CorpusError> {
    let (s, ns) = corpus.value_counts(value)?;
    if ns == 0 {
        return Err(CorpusError::UndefinedRatio { value });
    }
    Ok(s as f64 / ns as f64)
}
