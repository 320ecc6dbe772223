//! Topic-based significance and the three word-space transforms built on it.
//!
//! - `M` (diagonal): visual meaningfulness, the best significance rank of a word
//!   across topics, zeroed below `t_meaning`.
//! - `S` (symmetric, unit diagonal): synonymy. Two words are linked when they have
//!   a complementary distribution (PMI ≤ 0) and similar contexts (cosine of their
//!   PMI profiles ≥ `t_synonymy`); the link weight is the synonymy value σ.
//! - `P` (diagonal): polysemy weight `1 − T_polysemy`, where `T_polysemy` is the
//!   second-largest significance of the word.
//!
//! All three are estimated on training data and then applied unchanged to any
//! histogram over the same vocabulary.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CorpusMatrix;
use crate::error::{Error, Result};
use crate::plsa::TopicModel;
use crate::serde_util;

/// t_{n,j}: share of words whose P(w|z_j) is at most P(w_n|z_j).
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceTable {
    t: Array2<f64>,
}

impl SignificanceTable {
    /// N_W × N_Z.
    pub fn values(&self) -> &Array2<f64> {
        &self.t
    }

    pub fn n_words(&self) -> usize {
        self.t.nrows()
    }

    pub fn n_topics(&self) -> usize {
        self.t.ncols()
    }

    /// Builds a table directly from significance values (rows = words).
    pub fn from_values(t: Array2<f64>) -> Result<Self> {
        if t.nrows() == 0 || t.ncols() == 0 {
            return Err(Error::InvalidData("empty significance table".into()));
        }
        if t.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidData(
                "significance values must lie in [0, 1]".into(),
            ));
        }
        Ok(SignificanceTable { t })
    }
}

pub fn significance(model: &TopicModel) -> SignificanceTable {
    significance_of(model.word_given_topic())
}

/// Significance of an arbitrary word–topic matrix (rows = words, columns = topics).
pub fn significance_of(word_given_topic: &Array2<f64>) -> SignificanceTable {
    let n_words = word_given_topic.nrows();
    let mut t = Array2::zeros(word_given_topic.dim());
    for (j, col) in word_given_topic.axis_iter(Axis(1)).enumerate() {
        let mut sorted = col.to_vec();
        sorted.sort_by(f64::total_cmp);
        for (n, &p) in col.iter().enumerate() {
            let at_most = sorted.partition_point(|&q| q <= p);
            t[[n, j]] = at_most as f64 / n_words as f64;
        }
    }
    SignificanceTable { t }
}

/// m_n = max_j t_{n,j} when that maximum reaches `t_meaning`, else 0.
pub fn meaningfulness(table: &SignificanceTable, t_meaning: f64) -> Result<Array1<f64>> {
    check_unit_interval("t_meaning", t_meaning)?;
    Ok(table
        .t
        .outer_iter()
        .map(|row| {
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if best >= t_meaning {
                best
            } else {
                0.0
            }
        })
        .collect())
}

/// Second-largest significance per word, or `None` with fewer than two topics.
pub fn polysemy_threshold(table: &SignificanceTable, word: usize) -> Option<f64> {
    if table.n_topics() < 2 {
        return None;
    }
    let mut row = table.t.row(word).to_vec();
    row.sort_by(|a, b| b.total_cmp(a));
    Some(row[1])
}

/// p_n = 1 − T_polysemy^n; every weight is 1 when the model has a single topic.
pub fn polysemy_weights(table: &SignificanceTable) -> Array1<f64> {
    (0..table.n_words())
        .map(|n| polysemy_threshold(table, n).map_or(1.0, |t| 1.0 - t))
        .collect()
}

/// Corpus restricted to meaningful words.
#[derive(Debug, Clone)]
pub struct Truncation {
    pub corpus: CorpusMatrix,
    /// Original column indices that survived, in order.
    pub kept: Vec<usize>,
    /// Instances whose histogram became empty; they stay in the corpus.
    pub empty_instances: Vec<String>,
}

impl Truncation {
    pub fn effective_vocab_size(&self) -> usize {
        self.kept.len()
    }
}

/// Drops every column with m_n = 0.
pub fn truncate_vocabulary(corpus: &CorpusMatrix, m: &Array1<f64>) -> Result<Truncation> {
    if m.len() != corpus.n_words() {
        return Err(Error::DimensionMismatch(format!(
            "meaningfulness has {} entries for {} words",
            m.len(),
            corpus.n_words()
        )));
    }
    let kept: Vec<usize> = m
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(n, _)| n)
        .collect();
    if kept.is_empty() {
        return Err(Error::InvalidData(
            "empty vocabulary: every word was removed".into(),
        ));
    }
    let truncated = corpus.select_columns(&kept)?;
    let empty_instances: Vec<String> = truncated
        .row_sums()
        .iter()
        .zip(truncated.instance_ids())
        .filter(|(&l, _)| l == 0.0)
        .map(|(_, id)| id.clone())
        .collect();
    if !empty_instances.is_empty() {
        log::warn!(
            "{} instance(s) have an empty histogram after truncation to {} words",
            empty_instances.len(),
            kept.len()
        );
    }
    Ok(Truncation {
        corpus: truncated,
        kept,
        empty_instances,
    })
}

/// Pointwise mutual information between words, estimated from per-instance presence.
#[derive(Debug, Clone, PartialEq)]
pub struct PmiTable {
    pmi: Array2<f64>,
    floor: f64,
}

impl PmiTable {
    pub fn values(&self) -> &Array2<f64> {
        &self.pmi
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn n_words(&self) -> usize {
        self.pmi.nrows()
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.pmi[[n, m]]
    }
}

/// PMI(w_n; w_m) = log(P(w_n, w_m) / (P(w_n) P(w_m))) with
/// P(w_n) = |{i : n_i(w_n) > 0}| / N_I and P(w_n, w_m) counting instances that contain both.
/// Values are clamped below at `floor`; pairs that never co-occur get `floor`.
pub fn pmi_table(corpus: &CorpusMatrix, floor: f64) -> Result<PmiTable> {
    check_floor(floor)?;
    let presence = corpus.counts().mapv(|c| if c > 0.0 { 1.0 } else { 0.0 });
    let n_instances = corpus.n_instances() as f64;
    let df = presence.sum_axis(Axis(0));
    let joint = presence.t().dot(&presence);
    let n_words = corpus.n_words();
    let pmi = Array2::from_shape_fn((n_words, n_words), |(n, m)| {
        if n == m {
            return 0.0;
        }
        let both = joint[[n, m]];
        if both == 0.0 || df[n] == 0.0 || df[m] == 0.0 {
            return floor;
        }
        let value = ((both / n_instances) / ((df[n] / n_instances) * (df[m] / n_instances))).ln();
        value.max(floor)
    });
    Ok(PmiTable { pmi, floor })
}

/// Cosine between the PMI profiles of `n` and `m`, ignoring their entries for
/// each other. Returns 0 when either profile is all zero.
pub fn contextual_cosine(pmi: &PmiTable, n: usize, m: usize) -> Result<f64> {
    let n_words = pmi.n_words();
    check_pair(n, m, n_words)?;
    if n_words < 3 {
        return Err(Error::InvalidData(format!(
            "contextual distribution needs at least 3 words, have {n_words}"
        )));
    }
    let (row_n, row_m) = (pmi.pmi.row(n), pmi.pmi.row(m));
    let (mut dot, mut norm_n, mut norm_m) = (0.0, 0.0, 0.0);
    for i in (0..n_words).filter(|&i| i != n && i != m) {
        dot += row_n[i] * row_m[i];
        norm_n += row_n[i] * row_n[i];
        norm_m += row_m[i] * row_m[i];
    }
    if norm_n == 0.0 || norm_m == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (norm_n.sqrt() * norm_m.sqrt())).clamp(-1.0, 1.0))
}

/// σ_{nm} = max_j min(t_{n,j}, t_{m,j}).
pub fn synonymy_value(table: &SignificanceTable, n: usize, m: usize) -> Result<f64> {
    check_pair(n, m, table.n_words())?;
    Ok(table
        .t
        .row(n)
        .iter()
        .zip(table.t.row(m))
        .map(|(&a, &b)| a.min(b))
        .fold(f64::NEG_INFINITY, f64::max))
}

fn check_pair(n: usize, m: usize, n_words: usize) -> Result<()> {
    if n == m {
        return Err(Error::InvalidParameter(format!(
            "word pair must be distinct, got ({n}, {m})"
        )));
    }
    if n >= n_words || m >= n_words {
        return Err(Error::DimensionMismatch(format!(
            "word pair ({n}, {m}) out of range for {n_words} words"
        )));
    }
    Ok(())
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidParameter(format!(
            "{name} must lie in [0, 1], got {v}"
        )));
    }
    Ok(())
}

fn check_floor(floor: f64) -> Result<()> {
    if !(floor.is_finite() && floor <= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "pmi_floor must be finite and ≤ 0, got {floor}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrammarParams {
    pub t_meaning: f64,
    pub t_synonymy: f64,
    pub pmi_floor: f64,
}

impl Default for GrammarParams {
    fn default() -> Self {
        GrammarParams {
            t_meaning: 0.9,
            t_synonymy: 0.6,
            pmi_floor: -20.0,
        }
    }
}

impl GrammarParams {
    pub fn validate(&self) -> Result<()> {
        check_unit_interval("t_meaning", self.t_meaning)?;
        if !(-1.0..=1.0).contains(&self.t_synonymy) {
            return Err(Error::InvalidParameter(format!(
                "t_synonymy must lie in [-1, 1], got {}",
                self.t_synonymy
            )));
        }
        check_floor(self.pmi_floor)
    }
}

/// Where a grammar came from: digests of the training corpus and topic model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus_digest: String,
    pub model_digest: String,
    pub n_topics: usize,
    pub model_seed: u64,
}

/// The fitted M, S and P transforms over one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammarModel {
    meaningfulness: Array1<f64>,
    synonymy: Array2<f64>,
    polysemy: Array1<f64>,
    thresholds: GrammarParams,
    vocabulary: Vec<String>,
    provenance: Provenance,
}

impl GrammarModel {
    /// Assembles a grammar from explicit transforms. `synonymy` must be exactly
    /// symmetric with a unit diagonal and entries in [0, 1].
    pub fn from_parts(
        meaningfulness: Array1<f64>,
        synonymy: Array2<f64>,
        polysemy: Array1<f64>,
        thresholds: GrammarParams,
        vocabulary: Vec<String>,
    ) -> Result<Self> {
        let g = GrammarModel {
            meaningfulness,
            synonymy,
            polysemy,
            thresholds,
            vocabulary,
            provenance: Provenance::default(),
        };
        g.validate()?;
        Ok(g)
    }

    /// M = P = S = I.
    pub fn identity(vocabulary: Vec<String>) -> Self {
        let n = vocabulary.len();
        GrammarModel {
            meaningfulness: Array1::ones(n),
            synonymy: Array2::eye(n),
            polysemy: Array1::ones(n),
            thresholds: GrammarParams {
                t_meaning: 0.0,
                t_synonymy: 1.0,
                pmi_floor: GrammarParams::default().pmi_floor,
            },
            vocabulary,
            provenance: Provenance::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.vocabulary.len();
        if self.meaningfulness.len() != n
            || self.polysemy.len() != n
            || self.synonymy.dim() != (n, n)
        {
            return Err(Error::DimensionMismatch(format!(
                "grammar transforms do not match a {n}-word vocabulary"
            )));
        }
        check_synonymy_matrix(&self.synonymy)?;
        if self.synonymy.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidData(
                "synonymy entries must lie in [0, 1]".into(),
            ));
        }
        if self.meaningfulness.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidData(
                "meaningfulness entries must lie in [0, 1]".into(),
            ));
        }
        if self.polysemy.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidData(
                "polysemy weights must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn meaningfulness(&self) -> &Array1<f64> {
        &self.meaningfulness
    }

    pub fn synonymy(&self) -> &Array2<f64> {
        &self.synonymy
    }

    pub fn polysemy(&self) -> &Array1<f64> {
        &self.polysemy
    }

    pub fn thresholds(&self) -> &GrammarParams {
        &self.thresholds
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn n_words(&self) -> usize {
        self.vocabulary.len()
    }

    /// Same grammar with M recomputed from `table` at a different threshold.
    pub fn with_t_meaning(&self, table: &SignificanceTable, t_meaning: f64) -> Result<Self> {
        if table.n_words() != self.n_words() {
            return Err(Error::DimensionMismatch(format!(
                "significance table has {} words, grammar has {}",
                table.n_words(),
                self.n_words()
            )));
        }
        let mut g = self.clone();
        g.meaningfulness = meaningfulness(table, t_meaning)?;
        g.thresholds.t_meaning = t_meaning;
        Ok(g)
    }

    /// Number of words with non-zero meaningfulness.
    pub fn effective_vocab_size(&self) -> usize {
        self.meaningfulness.iter().filter(|&&m| m > 0.0).count()
    }

    /// Linked pairs (i < j) with their weight s_ij.
    pub fn synonym_pairs(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n_words();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let s = self.synonymy[[i, j]];
                if s != 0.0 {
                    pairs.push((i, j, s));
                }
            }
        }
        pairs
    }

    pub fn mean_polysemy_weight(&self) -> f64 {
        self.polysemy.mean().unwrap_or(1.0)
    }

    /// M·P·S·h: synonymy first, then polysemy, then meaningfulness.
    pub fn transform(&self, h: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if h.len() != self.n_words() {
            return Err(Error::DimensionMismatch(format!(
                "histogram has {} entries, grammar has {} words",
                h.len(),
                self.n_words()
            )));
        }
        let s_h = self.synonymy.dot(&h);
        Ok(&s_h * &self.polysemy * &self.meaningfulness)
    }

    /// The composed matrix M·P·S.
    pub fn matrix(&self) -> Array2<f64> {
        let scale = &self.meaningfulness * &self.polysemy;
        let mut out = self.synonymy.clone();
        for (mut row, &k) in out.outer_iter_mut().zip(scale.iter()) {
            row.mapv_inplace(|v| v * k);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_util::write_json(&GrammarFile::from(self), path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file: GrammarFile = serde_util::read_json(path)?;
        GrammarModel::try_from(file).map_err(|e| Error::ingest(path, None, e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SparseEntry {
    i: usize,
    j: usize,
    value: f64,
}

/// JSON layout; S is stored as its strict upper triangle.
#[derive(Debug, Serialize, Deserialize)]
struct GrammarFile {
    thresholds: GrammarParams,
    vocabulary: Vec<String>,
    meaningfulness: Vec<f64>,
    polysemy: Vec<f64>,
    synonymy: Vec<SparseEntry>,
    #[serde(default)]
    provenance: Provenance,
}

impl From<&GrammarModel> for GrammarFile {
    fn from(g: &GrammarModel) -> Self {
        GrammarFile {
            thresholds: g.thresholds,
            vocabulary: g.vocabulary.clone(),
            meaningfulness: g.meaningfulness.to_vec(),
            polysemy: g.polysemy.to_vec(),
            synonymy: g
                .synonym_pairs()
                .into_iter()
                .map(|(i, j, value)| SparseEntry { i, j, value })
                .collect(),
            provenance: g.provenance.clone(),
        }
    }
}

impl TryFrom<GrammarFile> for GrammarModel {
    type Error = Error;

    fn try_from(f: GrammarFile) -> Result<Self> {
        let n = f.vocabulary.len();
        let mut s = Array2::eye(n);
        for e in &f.synonymy {
            if e.i >= n || e.j >= n || e.i == e.j {
                return Err(Error::InvalidData(format!(
                    "bad synonymy entry ({}, {})",
                    e.i, e.j
                )));
            }
            s[[e.i, e.j]] = e.value;
            s[[e.j, e.i]] = e.value;
        }
        let mut g = GrammarModel::from_parts(
            Array1::from(f.meaningfulness),
            s,
            Array1::from(f.polysemy),
            f.thresholds,
            f.vocabulary,
        )?;
        g.provenance = f.provenance;
        Ok(g)
    }
}

fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())[..16].to_owned()
}

fn f64_bytes<'a>(values: impl Iterator<Item = &'a f64>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn corpus_digest(corpus: &CorpusMatrix) -> String {
    digest(&[
        corpus.vocabulary().words().join("\u{1f}").as_bytes(),
        corpus.instance_ids().join("\u{1f}").as_bytes(),
        &f64_bytes(corpus.counts().iter()),
    ])
}

fn model_digest(model: &TopicModel) -> String {
    digest(&[
        &f64_bytes(model.word_given_topic().iter()),
        &f64_bytes(model.topic_given_instance().iter()),
    ])
}

/// Estimates M, S and P from a training corpus and the topic model fitted on it.
pub fn build_grammar(
    corpus: &CorpusMatrix,
    model: &TopicModel,
    params: &GrammarParams,
) -> Result<GrammarModel> {
    params.validate()?;
    if model.vocabulary() != corpus.vocabulary().words() {
        return Err(Error::DimensionMismatch(format!(
            "topic model vocabulary ({} words) differs from corpus vocabulary ({} words)",
            model.n_words(),
            corpus.n_words()
        )));
    }
    let table = significance(model);
    let m = meaningfulness(&table, params.t_meaning)?;
    let p = polysemy_weights(&table);
    let pmi = pmi_table(corpus, params.pmi_floor)?;
    let n_words = corpus.n_words();

    let mut s = Array2::eye(n_words);
    if n_words >= 3 {
        let links: Vec<Vec<(usize, f64)>> = (0..n_words)
            .into_par_iter()
            .map(|a| {
                let mut row = Vec::new();
                for b in a + 1..n_words {
                    if pmi.get(a, b) > 0.0 {
                        continue;
                    }
                    let cos = contextual_cosine(&pmi, a, b).expect("valid pair");
                    if cos >= params.t_synonymy {
                        row.push((b, synonymy_value(&table, a, b).expect("valid pair")));
                    }
                }
                row
            })
            .collect();
        for (a, row) in links.into_iter().enumerate() {
            for (b, sigma) in row {
                s[[a, b]] = sigma;
                s[[b, a]] = sigma;
            }
        }
    }

    Ok(GrammarModel {
        meaningfulness: m,
        synonymy: s,
        polysemy: p,
        thresholds: *params,
        vocabulary: corpus.vocabulary().words().to_vec(),
        provenance: Provenance {
            corpus_digest: corpus_digest(corpus),
            model_digest: model_digest(model),
            n_topics: model.n_topics(),
            model_seed: model.seed(),
        },
    })
}

/// h^M = M h.
pub fn apply_meaningfulness(h: ArrayView1<'_, f64>, m: &Array1<f64>) -> Result<Array1<f64>> {
    elementwise(h, m, "meaningfulness")
}

/// h^P = P h.
pub fn apply_polysemy(h: ArrayView1<'_, f64>, p: &Array1<f64>) -> Result<Array1<f64>> {
    elementwise(h, p, "polysemy")
}

fn elementwise(h: ArrayView1<'_, f64>, weights: &Array1<f64>, what: &str) -> Result<Array1<f64>> {
    if h.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "histogram has {} entries, {what} vector has {}",
            h.len(),
            weights.len()
        )));
    }
    Ok(&h * weights)
}

/// h^S = S h, i.e. n(w_i) + Σ_{j≠i} s_ij n(w_j).
pub fn apply_synonymy(h: ArrayView1<'_, f64>, s: &Array2<f64>) -> Result<Array1<f64>> {
    if s.nrows() != s.ncols() || s.nrows() != h.len() {
        return Err(Error::DimensionMismatch(format!(
            "synonymy matrix is {}×{}, histogram has {} entries",
            s.nrows(),
            s.ncols(),
            h.len()
        )));
    }
    check_synonymy_matrix(s)?;
    Ok(s.dot(&h))
}

fn check_synonymy_matrix(s: &Array2<f64>) -> Result<()> {
    let n = s.nrows();
    for i in 0..n {
        if s[[i, i]] != 1.0 {
            return Err(Error::InvalidData(format!(
                "synonymy diagonal entry {i} is {}",
                s[[i, i]]
            )));
        }
        for j in i + 1..n {
            if s[[i, j]] != s[[j, i]] {
                return Err(Error::InvalidData(format!(
                    "synonymy matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}
