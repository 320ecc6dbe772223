//! PLSA topic model fitted by expectation–maximization.
//!
//! The model explains each count n(I_i, w_n) through latent topics:
//! P(w_n, I_i) = Σ_j P(w_n|z_j) P(z_j|I_i). EM alternates the posterior
//! P(z_j|I_i,w_n) ∝ P(w_n|z_j) P(z_j|I_i) with the re-estimates
//!
//! ```text
//! P(w_n|z_j) ∝ Σ_i n(I_i,w_n) P(z_j|I_i,w_n)
//! P(z_j|I_i) = Σ_n n(I_i,w_n) P(z_j|I_i,w_n) / L_i
//! ```
//!
//! Instances are processed in fixed-size blocks that may run in parallel; block
//! partials are summed in block order, so results do not depend on thread count.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusMatrix;
use crate::error::{Error, Result};
use crate::serde_util;

/// Mixture probabilities are floored at this value inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-300;

const BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsaConfig {
    pub n_topics: usize,
    pub max_iters: usize,
    /// Stop once |L_k − L_{k−1}| / |L_{k−1}| drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl PlsaConfig {
    pub fn new(n_topics: usize) -> Self {
        PlsaConfig {
            n_topics,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_topics < 1 {
            return Err(Error::InvalidParameter(
                "n_topics must be at least 1".into(),
            ));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

impl Default for PlsaConfig {
    fn default() -> Self {
        PlsaConfig {
            n_topics: 25,
            max_iters: 500,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Fitted word–topic matrix W (N_W × N_Z, entries P(w_n|z_j)) and topic–instance
/// matrix D (N_Z × N_I, entries P(z_j|I_i)). Both are column-stochastic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    n_topics: usize,
    seed: u64,
    iterations_run: usize,
    loglik_trace: Vec<f64>,
    vocabulary: Vec<String>,
    instance_ids: Vec<String>,
    #[serde(with = "serde_util::rows")]
    word_given_topic: Array2<f64>,
    #[serde(with = "serde_util::rows")]
    topic_given_instance: Array2<f64>,
}

impl TopicModel {
    /// Assembles a model from explicit matrices, checking shapes and stochasticity
    /// (column sums within 1e-9, entries in [0, 1]).
    pub fn from_matrices(
        word_given_topic: Array2<f64>,
        topic_given_instance: Array2<f64>,
        vocabulary: Vec<String>,
        instance_ids: Vec<String>,
    ) -> Result<Self> {
        let model = TopicModel {
            n_topics: word_given_topic.ncols(),
            seed: 0,
            iterations_run: 0,
            loglik_trace: Vec::new(),
            vocabulary,
            instance_ids,
            word_given_topic,
            topic_given_instance,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let (n_words, n_topics) = self.word_given_topic.dim();
        let (d_topics, n_instances) = self.topic_given_instance.dim();
        if n_topics == 0 || n_topics != self.n_topics || d_topics != n_topics {
            return Err(Error::DimensionMismatch(format!(
                "W is {n_words}×{n_topics}, D is {d_topics}×{n_instances}, n_topics = {}",
                self.n_topics
            )));
        }
        if n_words != self.vocabulary.len() || n_instances != self.instance_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "W/D shapes do not match {} words and {} instances",
                self.vocabulary.len(),
                self.instance_ids.len()
            )));
        }
        for (name, m) in [
            ("W", &self.word_given_topic),
            ("D", &self.topic_given_instance),
        ] {
            if m.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidData(format!(
                    "{name} has entries outside [0, 1]"
                )));
            }
            for (j, col) in m.axis_iter(Axis(1)).enumerate() {
                let s = col.sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidData(format!(
                        "column {j} of {name} sums to {s}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_topics(&self) -> usize {
        self.n_topics
    }

    pub fn n_words(&self) -> usize {
        self.word_given_topic.nrows()
    }

    pub fn n_instances(&self) -> usize {
        self.topic_given_instance.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn iterations_run(&self) -> usize {
        self.iterations_run
    }

    pub fn loglik_trace(&self) -> &[f64] {
        &self.loglik_trace
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    /// W: N_W × N_Z, column j is P(·|z_j).
    pub fn word_given_topic(&self) -> &Array2<f64> {
        &self.word_given_topic
    }

    /// D: N_Z × N_I, column i is P(·|I_i).
    pub fn topic_given_instance(&self) -> &Array2<f64> {
        &self.topic_given_instance
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_util::write_json(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let model: TopicModel = serde_util::read_json(path)?;
        model
            .validate()
            .map_err(|e| Error::ingest(path, None, e.to_string()))?;
        Ok(model)
    }
}

/// Fits PLSA by EM. W starts from seeded uniform draws (column-normalized),
/// D starts uniform.
pub fn fit_plsa(corpus: &CorpusMatrix, config: &PlsaConfig) -> Result<TopicModel> {
    config.validate()?;
    let n_topics = config.n_topics;
    let (n_instances, n_words) = corpus.counts().dim();
    if n_words < 2 {
        return Err(Error::InvalidData(format!(
            "PLSA needs at least 2 words, corpus has {n_words}"
        )));
    }
    if n_topics > n_words.min(n_instances) {
        log::warn!(
            "n_topics = {n_topics} exceeds min(N_W = {n_words}, N_I = {n_instances}); topics will be redundant"
        );
    }

    let row_sums = corpus.row_sums().to_vec();
    if let Some(i) = row_sums.iter().position(|&l| l <= 0.0) {
        return Err(Error::InvalidData(format!(
            "instance {:?} is empty",
            corpus.instance_ids()[i]
        )));
    }

    let mut w = initial_word_given_topic(n_words, n_topics, config.seed);
    // D is kept transposed (N_I × N_Z) during the fit so each instance's topic
    // mixture is contiguous.
    let mut d_t = Array2::from_elem((n_instances, n_topics), 1.0 / n_topics as f64);

    let mut trace = Vec::new();
    let mut iterations_run = 0;
    for iter in 1..=config.max_iters {
        let (next_w, next_d_t) = em_step(corpus.counts(), &row_sums, &w, &d_t);
        w = next_w;
        d_t = next_d_t;
        let ll = log_likelihood_raw(corpus.counts(), &w, &d_t);
        iterations_run = iter;
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| relative_change(prev, ll) < config.tol);
        trace.push(ll);
        if converged {
            break;
        }
    }
    log::debug!(
        "PLSA fit: {n_topics} topics, {iterations_run} iterations, final log-likelihood {:?}",
        trace.last()
    );

    Ok(TopicModel {
        n_topics,
        seed: config.seed,
        iterations_run,
        loglik_trace: trace,
        vocabulary: corpus.vocabulary().words().to_vec(),
        instance_ids: corpus.instance_ids().to_vec(),
        word_given_topic: w,
        topic_given_instance: d_t.reversed_axes().as_standard_layout().into_owned(),
    })
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    if prev == 0.0 {
        if cur == prev {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (cur - prev).abs() / prev.abs()
    }
}

/// Depends only on (N_W, N_Z, seed), never on the instances.
fn initial_word_given_topic(n_words: usize, n_topics: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Array2::zeros((n_words, n_topics));
    for j in 0..n_topics {
        for n in 0..n_words {
            // (0, 1]: keeps every word in the support of the first iterate.
            w[[n, j]] = 1.0 - rng.random::<f64>();
        }
    }
    normalize_columns(&mut w);
    w
}

fn normalize_columns(m: &mut Array2<f64>) {
    let n_rows = m.nrows();
    for mut col in m.axis_iter_mut(Axis(1)) {
        let s = col.sum();
        if s > 0.0 {
            col.mapv_inplace(|v| v / s);
        } else {
            // A topic that lost all mass; keep it a valid distribution.
            col.fill(1.0 / n_rows as f64);
        }
    }
}

/// One E-step plus both M-steps. Returns the new (W, Dᵀ).
fn em_step(
    counts: &Array2<f64>,
    row_sums: &[f64],
    w: &Array2<f64>,
    d_t: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let (n_instances, n_words) = counts.dim();
    let n_topics = w.ncols();

    let partials: Vec<(Array2<f64>, Array2<f64>)> = (0..n_instances)
        .step_by(BLOCK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + BLOCK).min(n_instances);
            let mut w_acc = Array2::<f64>::zeros((n_words, n_topics));
            let mut d_block = Array2::<f64>::zeros((end - start, n_topics));
            let mut joint = vec![0.0; n_topics];
            #[allow(clippy::needless_range_loop)]
            for i in start..end {
                let mixture = d_t.row(i);
                let mut d_row = d_block.row_mut(i - start);
                for (n, &c) in counts.row(i).iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    let w_row = w.row(n);
                    let mut total = 0.0;
                    for j in 0..n_topics {
                        joint[j] = w_row[j] * mixture[j];
                        total += joint[j];
                    }
                    let scale = c / total.max(PROB_FLOOR);
                    let mut acc = w_acc.row_mut(n);
                    for j in 0..n_topics {
                        let q = scale * joint[j];
                        acc[j] += q;
                        d_row[j] += q;
                    }
                }
                let l_i = row_sums[i];
                // Rounding in the sum can put a lone topic at 1 + ε.
                d_row.mapv_inplace(|v| (v / l_i).min(1.0));
            }
            (w_acc, d_block)
        })
        .collect();

    let mut next_w = Array2::<f64>::zeros((n_words, n_topics));
    let mut next_d_t = Array2::<f64>::zeros((n_instances, n_topics));
    for (b, (w_acc, d_block)) in partials.into_iter().enumerate() {
        next_w += &w_acc;
        let start = b * BLOCK;
        next_d_t
            .slice_mut(ndarray::s![start..start + d_block.nrows(), ..])
            .assign(&d_block);
    }
    normalize_columns(&mut next_w);
    (next_w, next_d_t)
}

fn log_likelihood_raw(counts: &Array2<f64>, w: &Array2<f64>, d_t: &Array2<f64>) -> f64 {
    let n_instances = counts.nrows();
    let partial: Vec<f64> = (0..n_instances)
        .step_by(BLOCK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + BLOCK).min(n_instances);
            let mut sum = 0.0;
            for i in start..end {
                let mixture = d_t.row(i);
                for (n, &c) in counts.row(i).iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    let p = w.row(n).dot(&mixture);
                    sum += c * p.max(PROB_FLOOR).ln();
                }
            }
            sum
        })
        .collect();
    partial.into_iter().sum()
}

/// L = Σ_i Σ_n n(I_i,w_n) · log Σ_j P(w_n|z_j) P(z_j|I_i).
pub fn loglikelihood(model: &TopicModel, corpus: &CorpusMatrix) -> Result<f64> {
    if model.n_words() != corpus.n_words() || model.n_instances() != corpus.n_instances() {
        return Err(Error::DimensionMismatch(format!(
            "model covers {} words × {} instances, corpus has {} × {}",
            model.n_words(),
            model.n_instances(),
            corpus.n_words(),
            corpus.n_instances()
        )));
    }
    let d_t = model
        .topic_given_instance
        .t()
        .as_standard_layout()
        .into_owned();
    Ok(log_likelihood_raw(
        corpus.counts(),
        &model.word_given_topic,
        &d_t,
    ))
}
