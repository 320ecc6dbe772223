//! Histogram corpora: vocabulary, instance × word count matrix and optional labels.
//!
//! Two on-disk layouts are supported. CSV uses the header
//! `instance_id,label,<w_1>,...,<w_NW>` with one instance per row (the label cell
//! may be empty). JSON uses `{"vocabulary": [...], "instances": [{"id", "label"?, "counts"}]}`.
//! Word order in the file defines column order everywhere else in the crate.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered list of visual word identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary(Vec<String>);

impl Vocabulary {
    /// Identifiers must be unique and non-empty, and there must be at least two words.
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 {
            return Err(Error::InvalidData(format!(
                "vocabulary needs at least 2 words, got {}",
                words.len()
            )));
        }
        Self::validated(words)
    }

    fn validated(words: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(words.len());
        for w in &words {
            if w.is_empty() {
                return Err(Error::InvalidData("empty word identifier".into()));
            }
            if !seen.insert(w.as_str()) {
                return Err(Error::InvalidData(format!(
                    "duplicate word identifier {w:?}"
                )));
            }
        }
        Ok(Vocabulary(words))
    }

    /// Sub-vocabulary made of the given columns. May hold a single word
    /// (truncated spaces are allowed to be that small).
    pub(crate) fn subset(&self, columns: &[usize]) -> Self {
        Vocabulary(columns.iter().map(|&c| self.0[c].clone()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.0
    }

    pub fn position(&self, word: &str) -> Option<usize> {
        self.0.iter().position(|w| w == word)
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        Vocabulary::new(words)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.0
    }
}

/// The N_I × N_W matrix of word counts per instance.
///
/// Counts are stored as `f64` so transformed histograms share the type; raw
/// ingestion still checks that counts are integral unless told otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusMatrix {
    instances: Vec<String>,
    vocabulary: Vocabulary,
    counts: Array2<f64>,
    labels: Option<Vec<String>>,
}

impl CorpusMatrix {
    /// Builds a validated corpus: counts finite and non-negative, every row sum
    /// positive, unique instance ids, labels (if any) covering every instance.
    pub fn new(
        instances: Vec<String>,
        vocabulary: Vocabulary,
        counts: Array2<f64>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let corpus = Self::assemble(instances, vocabulary, counts, labels)?;
        for (i, row) in corpus.counts.outer_iter().enumerate() {
            if row.sum() <= 0.0 {
                return Err(Error::InvalidData(format!(
                    "zero-sum instance {:?}",
                    corpus.instances[i]
                )));
            }
        }
        Ok(corpus)
    }

    /// Same checks as [`CorpusMatrix::new`] except that all-zero rows are kept.
    fn assemble(
        instances: Vec<String>,
        vocabulary: Vocabulary,
        counts: Array2<f64>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n_rows, n_cols) = counts.dim();
        if n_rows != instances.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} instance ids for {} count rows",
                instances.len(),
                n_rows
            )));
        }
        if n_cols != vocabulary.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} words for {} count columns",
                vocabulary.len(),
                n_cols
            )));
        }
        if n_rows == 0 {
            return Err(Error::InvalidData("corpus has no instances".into()));
        }
        if let Some(labels) = &labels {
            if labels.len() != n_rows {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} instances",
                    labels.len(),
                    n_rows
                )));
            }
            if labels.iter().any(|l| l.is_empty()) {
                return Err(Error::InvalidData("empty class label".into()));
            }
        }
        let mut seen = HashSet::with_capacity(n_rows);
        for id in &instances {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidData(format!("duplicate instance id {id:?}")));
            }
        }
        if let Some(v) = counts.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidData(format!("invalid count {v}")));
        }
        Ok(CorpusMatrix {
            instances,
            vocabulary,
            counts,
            labels,
        })
    }

    pub fn n_instances(&self) -> usize {
        self.counts.nrows()
    }

    pub fn n_words(&self) -> usize {
        self.counts.ncols()
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instances
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn counts(&self) -> &Array2<f64> {
        &self.counts
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Histogram of instance `i`.
    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.counts.row(i)
    }

    /// L_i, the number of words in each instance.
    pub fn row_sums(&self) -> Array1<f64> {
        self.counts.sum_axis(Axis(1))
    }

    pub fn is_integral(&self) -> bool {
        self.counts.iter().all(|v| v.fract() == 0.0)
    }

    /// Keeps the listed columns in the given order. Rows that become empty are retained.
    pub fn select_columns(&self, columns: &[usize]) -> Result<CorpusMatrix> {
        if columns.is_empty() {
            return Err(Error::InvalidData("empty vocabulary".into()));
        }
        if let Some(&c) = columns.iter().find(|&&c| c >= self.n_words()) {
            return Err(Error::DimensionMismatch(format!(
                "column {c} out of range for {} words",
                self.n_words()
            )));
        }
        Ok(CorpusMatrix {
            instances: self.instances.clone(),
            vocabulary: self.vocabulary.subset(columns),
            counts: self.counts.select(Axis(1), columns),
            labels: self.labels.clone(),
        })
    }

    /// Keeps the listed rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<CorpusMatrix> {
        if let Some(&r) = rows.iter().find(|&&r| r >= self.n_instances()) {
            return Err(Error::DimensionMismatch(format!(
                "row {r} out of range for {} instances",
                self.n_instances()
            )));
        }
        Self::assemble(
            rows.iter().map(|&r| self.instances[r].clone()).collect(),
            self.vocabulary.clone(),
            self.counts.select(Axis(0), rows),
            self.labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r].clone()).collect()),
        )
    }

    /// Distinct class labels in lexicographic order.
    pub fn classes(&self) -> Vec<String> {
        let mut classes: Vec<String> = self.labels.iter().flatten().cloned().collect();
        classes.sort();
        classes.dedup();
        classes
    }
}

/// On-disk corpus layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Csv,
    Json,
}

impl CorpusFormat {
    /// Guesses the format from the file extension (`.json` → JSON, anything else → CSV).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => CorpusFormat::Json,
            _ => CorpusFormat::Csv,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CorpusFormat::Csv),
            "json" => Ok(CorpusFormat::Json),
            other => Err(Error::InvalidParameter(format!(
                "unknown corpus format {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReadOptions {
    /// Accept non-integer counts (transformed histograms). Raw corpora should leave this off.
    pub allow_fractional: bool,
}

/// Loads a raw count corpus; counts must be integral.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<CorpusMatrix> {
    load_corpus_with(path, format, ReadOptions::default())
}

pub fn load_corpus_with(
    path: impl AsRef<Path>,
    format: CorpusFormat,
    options: ReadOptions,
) -> Result<CorpusMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        CorpusFormat::Csv => read_csv(path, reader, options),
        CorpusFormat::Json => read_json(path, reader, options),
    }
}

fn parse_count(path: &Path, line: Option<u64>, raw: &str, options: ReadOptions) -> Result<f64> {
    let value: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::ingest(path, line, format!("malformed count {raw:?}")))?;
    check_count(path, line, value, options)
}

fn check_count(path: &Path, line: Option<u64>, value: f64, options: ReadOptions) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::ingest(
            path,
            line,
            format!("non-finite count {value}"),
        ));
    }
    if value < 0.0 {
        return Err(Error::ingest(path, line, format!("negative count {value}")));
    }
    if !options.allow_fractional && value.fract() != 0.0 {
        return Err(Error::ingest(
            path,
            line,
            format!("non-integer count {value}"),
        ));
    }
    Ok(value)
}

/// Row-wise accumulator shared by both readers; enforces the per-instance rules
/// while the source location is still known.
struct RowCollector<'a> {
    path: &'a Path,
    n_words: usize,
    ids: Vec<String>,
    seen: HashSet<String>,
    labels: Vec<Option<String>>,
    values: Vec<f64>,
}

impl<'a> RowCollector<'a> {
    fn new(path: &'a Path, n_words: usize) -> Self {
        RowCollector {
            path,
            n_words,
            ids: Vec::new(),
            seen: HashSet::new(),
            labels: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push(
        &mut self,
        line: Option<u64>,
        id: String,
        label: Option<String>,
        counts: Vec<f64>,
    ) -> Result<()> {
        if id.is_empty() {
            return Err(Error::ingest(self.path, line, "empty instance id"));
        }
        if counts.len() != self.n_words {
            return Err(Error::ingest(
                self.path,
                line,
                format!("expected {} counts, found {}", self.n_words, counts.len()),
            ));
        }
        if !self.seen.insert(id.clone()) {
            return Err(Error::ingest(
                self.path,
                line,
                format!("duplicate instance id {id:?}"),
            ));
        }
        if counts.iter().sum::<f64>() <= 0.0 {
            return Err(Error::ingest(
                self.path,
                line,
                format!("zero-sum instance {id:?}"),
            ));
        }
        self.ids.push(id);
        self.labels.push(label.filter(|l| !l.is_empty()));
        self.values.extend(counts);
        Ok(())
    }

    fn finish(self, vocabulary: Vocabulary) -> Result<CorpusMatrix> {
        let path = self.path;
        if self.ids.is_empty() {
            return Err(Error::ingest(path, None, "corpus has no instances"));
        }
        let labelled = self.labels.iter().filter(|l| l.is_some()).count();
        let labels = if labelled == 0 {
            None
        } else if labelled == self.labels.len() {
            Some(self.labels.into_iter().flatten().collect())
        } else {
            let first = self.labels.iter().position(|l| l.is_none()).unwrap_or(0);
            return Err(Error::ingest(
                path,
                None,
                format!(
                    "labels must cover every instance; instance {:?} has none",
                    self.ids[first]
                ),
            ));
        };
        let counts = Array2::from_shape_vec((self.ids.len(), self.n_words), self.values)
            .map_err(|e| Error::ingest(path, None, e.to_string()))?;
        CorpusMatrix::new(self.ids, vocabulary, counts, labels)
            .map_err(|e| Error::ingest(path, None, e.to_string()))
    }
}

fn read_csv<R: std::io::Read>(
    path: &Path,
    reader: R,
    options: ReadOptions,
) -> Result<CorpusMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::ingest(path, Some(1), e.to_string()))?
        .clone();
    if headers.len() < 2 || headers.get(0) != Some("instance_id") || headers.get(1) != Some("label")
    {
        return Err(Error::ingest(
            path,
            Some(1),
            "header must start with `instance_id,label`",
        ));
    }
    let words: Vec<String> = headers.iter().skip(2).map(str::to_owned).collect();
    let vocabulary =
        Vocabulary::new(words).map_err(|e| Error::ingest(path, Some(1), e.to_string()))?;
    let mut rows = RowCollector::new(path, vocabulary.len());

    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            Error::ingest(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line());
        if record.len() != vocabulary.len() + 2 {
            return Err(Error::ingest(
                path,
                line,
                format!(
                    "expected {} fields, found {}",
                    vocabulary.len() + 2,
                    record.len()
                ),
            ));
        }
        let counts = record
            .iter()
            .skip(2)
            .map(|raw| parse_count(path, line, raw, options))
            .collect::<Result<Vec<_>>>()?;
        rows.push(
            line,
            record[0].to_owned(),
            Some(record[1].to_owned()),
            counts,
        )?;
    }
    rows.finish(vocabulary)
}

#[derive(Serialize, Deserialize)]
struct JsonCorpus {
    vocabulary: Vec<String>,
    instances: Vec<JsonInstance>,
}

#[derive(Serialize, Deserialize)]
struct JsonInstance {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    counts: Vec<f64>,
}

fn read_json<R: std::io::Read>(
    path: &Path,
    reader: R,
    options: ReadOptions,
) -> Result<CorpusMatrix> {
    let doc: JsonCorpus = serde_json::from_reader(reader)
        .map_err(|e| Error::ingest(path, Some(e.line() as u64), e.to_string()))?;
    let vocabulary =
        Vocabulary::new(doc.vocabulary).map_err(|e| Error::ingest(path, None, e.to_string()))?;
    let mut rows = RowCollector::new(path, vocabulary.len());
    for (idx, inst) in doc.instances.into_iter().enumerate() {
        let counts = inst
            .counts
            .iter()
            .map(|&v| check_count(path, None, v, options))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::ingest(path, None, format!("instance #{idx}: {e}")))?;
        rows.push(None, inst.id, inst.label, counts)
            .map_err(|e| Error::ingest(path, None, format!("instance #{idx}: {e}")))?;
    }
    rows.finish(vocabulary)
}

/// Writes the corpus so that [`load_corpus_with`] reproduces it exactly.
pub fn save_corpus(
    corpus: &CorpusMatrix,
    path: impl AsRef<Path>,
    format: CorpusFormat,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        CorpusFormat::Csv => write_csv(corpus, &mut out).map_err(|e| Error::io(path, e))?,
        CorpusFormat::Json => {
            let doc = JsonCorpus {
                vocabulary: corpus.vocabulary.words().to_vec(),
                instances: (0..corpus.n_instances())
                    .map(|i| JsonInstance {
                        id: corpus.instances[i].clone(),
                        label: corpus.labels.as_ref().map(|l| l[i].clone()),
                        counts: corpus.row(i).to_vec(),
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut out, &doc).map_err(|e| Error::io(path, e.into()))?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_csv<W: Write>(corpus: &CorpusMatrix, out: W) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["instance_id".to_owned(), "label".to_owned()];
    header.extend(corpus.vocabulary.words().iter().cloned());
    wtr.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..corpus.n_instances() {
        record.clear();
        record.push(corpus.instances[i].clone());
        record.push(
            corpus
                .labels
                .as_ref()
                .map(|l| l[i].clone())
                .unwrap_or_default(),
        );
        // `Display` for f64 is the shortest representation that parses back exactly.
        record.extend(corpus.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&record)?;
    }
    wtr.flush()
}

/// Stratified train/test split. Each class contributes `round(fraction · n_c)`
/// instances to the training part, clamped so both parts receive at least one.
/// Instances keep their original relative order in both parts.
pub fn split_corpus(
    corpus: &CorpusMatrix,
    train_fraction: f64,
    seed: u64,
) -> Result<(CorpusMatrix, CorpusMatrix)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let labels = corpus
        .labels()
        .ok_or_else(|| Error::InvalidData("split requires a labelled corpus".into()))?;

    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        by_class.entry(label.as_str()).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in by_class {
        if members.len() < 2 {
            return Err(Error::InvalidData(format!(
                "class {class:?} has a single instance; cannot stratify"
            )));
        }
        members.shuffle(&mut rng);
        let n_train =
            ((train_fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((corpus.select_rows(&train)?, corpus.select_rows(&test)?))
}
