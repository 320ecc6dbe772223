//! Synthetic labelled corpora with known topics, planted synonym pairs and
//! planted polysemes.
//!
//! Word roles:
//! - the last `n_diffuse_words` words carry the same weight in every topic,
//! - each planted polyseme is a top word of two topics,
//! - every other word is sharp: it has one home topic (assigned round-robin)
//!   where its weight is `topic_sharpness` times the background weight.
//!
//! The second member of a planted synonym pair shares the home topic of the
//! first. Within each instance a fair coin picks which member may appear and
//! the other member's probability mass is moved onto it, so the two never
//! co-occur.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusMatrix, Vocabulary};
use crate::error::{Error, Result};
use crate::plsa::TopicModel;
use crate::serde_util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_instances: usize,
    pub n_words: usize,
    pub n_topics: usize,
    #[serde(alias = "L")]
    pub words_per_instance: usize,
    pub topic_sharpness: f64,
    pub planted_synonym_pairs: Vec<(usize, usize)>,
    pub planted_polysemes: Vec<usize>,
    #[serde(alias = "classes")]
    pub n_classes: usize,
    pub seed: u64,
    /// Words at the end of the vocabulary that are equally likely in every topic.
    pub n_diffuse_words: usize,
    /// Weight of a diffuse word relative to a sharp word's background weight.
    pub diffuse_weight: f64,
    /// Weight of the dominant topic in the default class mixtures.
    pub class_purity: f64,
    /// Explicit P(z | class) rows; overrides `class_purity`.
    pub class_mixtures: Option<Vec<Vec<f64>>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_instances: 200,
            n_words: 50,
            n_topics: 4,
            words_per_instance: 100,
            topic_sharpness: 20.0,
            planted_synonym_pairs: Vec::new(),
            planted_polysemes: Vec::new(),
            n_classes: 4,
            seed: 0,
            n_diffuse_words: 0,
            diffuse_weight: 1.0,
            class_purity: 0.85,
            class_mixtures: None,
        }
    }
}

impl SynthSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        serde_util::read_json(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_util::write_json(self, path.as_ref())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_instances", self.n_instances),
            ("n_words", self.n_words),
            ("n_topics", self.n_topics),
            ("words_per_instance", self.words_per_instance),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if self.n_words < 2 {
            return Err(Error::InvalidParameter("n_words must be at least 2".into()));
        }
        if !(self.topic_sharpness.is_finite() && self.topic_sharpness > 0.0) {
            return Err(Error::InvalidParameter(
                "topic_sharpness must be positive".into(),
            ));
        }
        if !(self.diffuse_weight.is_finite() && self.diffuse_weight > 0.0) {
            return Err(Error::InvalidParameter(
                "diffuse_weight must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.class_purity) {
            return Err(Error::InvalidParameter(
                "class_purity must lie in [0, 1]".into(),
            ));
        }
        if self.n_diffuse_words >= self.n_words {
            return Err(Error::InvalidParameter(
                "n_diffuse_words must leave at least one word".into(),
            ));
        }
        let first_diffuse = self.n_words - self.n_diffuse_words;

        if 2 * self.planted_synonym_pairs.len() > self.n_words {
            return Err(Error::InvalidParameter(format!(
                "{} synonym pairs do not fit in {} words",
                self.planted_synonym_pairs.len(),
                self.n_words
            )));
        }
        let mut planted = HashSet::new();
        for &(a, b) in &self.planted_synonym_pairs {
            for w in [a, b] {
                if w >= first_diffuse {
                    return Err(Error::InvalidParameter(format!(
                        "synonym word {w} is out of range or diffuse"
                    )));
                }
                if !planted.insert(w) {
                    return Err(Error::InvalidParameter(format!(
                        "word {w} is planted more than once"
                    )));
                }
            }
        }
        if !self.planted_polysemes.is_empty() && self.n_topics < 2 {
            return Err(Error::InvalidParameter(
                "polysemes need at least two topics".into(),
            ));
        }
        for &w in &self.planted_polysemes {
            if w >= first_diffuse {
                return Err(Error::InvalidParameter(format!(
                    "polyseme {w} is out of range or diffuse"
                )));
            }
            if !planted.insert(w) {
                return Err(Error::InvalidParameter(format!(
                    "word {w} is planted more than once"
                )));
            }
        }

        if let Some(mixtures) = &self.class_mixtures {
            if mixtures.len() != self.n_classes {
                return Err(Error::InvalidParameter(format!(
                    "expected {} class mixtures, got {}",
                    self.n_classes,
                    mixtures.len()
                )));
            }
            for (c, row) in mixtures.iter().enumerate() {
                if row.len() != self.n_topics {
                    return Err(Error::InvalidParameter(format!(
                        "class mixture {c} has {} entries, expected {}",
                        row.len(),
                        self.n_topics
                    )));
                }
                if row.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                    return Err(Error::InvalidParameter(format!(
                        "class mixture {c} has a negative entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "class mixture {c} sums to {sum}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn mixtures(&self) -> Vec<Vec<f64>> {
        if let Some(m) = &self.class_mixtures {
            return m.clone();
        }
        let nz = self.n_topics;
        (0..self.n_classes)
            .map(|c| {
                if nz == 1 {
                    return vec![1.0];
                }
                let rest = (1.0 - self.class_purity) / (nz - 1) as f64;
                let mut row = vec![rest; nz];
                row[c % nz] = self.class_purity;
                row
            })
            .collect()
    }
}

/// Generating parameters of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(with = "serde_util::rows")]
    pub true_word_given_topic: Array2<f64>,
    /// P(z | class), one row per class.
    pub class_mixtures: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub planted_synonym_pairs: Vec<(usize, usize)>,
    pub planted_polysemes: Vec<usize>,
    /// Topics in which each word is elevated; empty for diffuse words.
    pub word_topics: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn n_topics(&self) -> usize {
        self.true_word_given_topic.ncols()
    }

    /// Expected corpus-wide word frequencies: classes are equally likely and
    /// each synonym pair's mass is split evenly between its members.
    pub fn expected_word_frequencies(&self) -> Array1<f64> {
        let nw = self.true_word_given_topic.nrows();
        let mut freq = Array1::zeros(nw);
        for mix in &self.class_mixtures {
            freq += &self.true_word_given_topic.dot(&Array1::from(mix.clone()));
        }
        freq /= self.class_mixtures.len() as f64;
        for &(a, b) in &self.planted_synonym_pairs {
            let half = (freq[a] + freq[b]) / 2.0;
            freq[a] = half;
            freq[b] = half;
        }
        freq
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_util::write_json(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        serde_util::read_json(path.as_ref())
    }
}

/// Draws a labelled corpus from `spec`. The same spec always yields the same corpus.
pub fn generate(spec: &SynthSpec) -> Result<(CorpusMatrix, GroundTruth)> {
    spec.validate()?;
    let (nw, nz) = (spec.n_words, spec.n_topics);
    let first_diffuse = nw - spec.n_diffuse_words;
    let polysemes: HashSet<usize> = spec.planted_polysemes.iter().copied().collect();

    let mut weights = Array2::<f64>::ones((nw, nz));
    let mut word_topics = vec![Vec::new(); nw];
    let mut home = vec![None; nw];
    let sharp = (0..first_diffuse).filter(|w| !polysemes.contains(w));
    for (k, w) in sharp.enumerate() {
        home[w] = Some(k % nz);
    }
    for &(a, b) in &spec.planted_synonym_pairs {
        home[b] = home[a];
    }
    for (w, h) in home.iter().enumerate() {
        if let Some(j) = *h {
            weights[[w, j]] = spec.topic_sharpness;
            word_topics[w] = vec![j];
        }
    }
    for (k, &w) in spec.planted_polysemes.iter().enumerate() {
        let topics = [(2 * k) % nz, (2 * k + 1) % nz];
        for j in topics {
            weights[[w, j]] = 1.5 * spec.topic_sharpness;
        }
        word_topics[w] = topics.to_vec();
    }
    for w in first_diffuse..nw {
        weights.row_mut(w).fill(spec.diffuse_weight);
    }
    for mut col in weights.columns_mut() {
        let s = col.sum();
        col /= s;
    }

    let mixtures = spec.mixtures();
    let class_word: Vec<Array1<f64>> = mixtures
        .iter()
        .map(|m| weights.dot(&Array1::from(m.clone())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut counts = Array2::<f64>::zeros((spec.n_instances, nw));
    let mut labels = Vec::with_capacity(spec.n_instances);
    for i in 0..spec.n_instances {
        let class = rng.random_range(0..spec.n_classes);
        labels.push(format!("c{class}"));
        let mut p = class_word[class].clone();
        for &(a, b) in &spec.planted_synonym_pairs {
            let (keep, drop) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            p[keep] += p[drop];
            p[drop] = 0.0;
        }
        let dist = WeightedIndex::new(p.iter().copied())
            .map_err(|e| Error::InvalidData(format!("degenerate word distribution: {e}")))?;
        for _ in 0..spec.words_per_instance {
            counts[[i, dist.sample(&mut rng)]] += 1.0;
        }
    }

    let vocabulary = Vocabulary::new((0..nw).map(|n| format!("w{n:03}")).collect())?;
    let ids = (0..spec.n_instances)
        .map(|i| format!("inst{i:04}"))
        .collect();
    let corpus = CorpusMatrix::new(ids, vocabulary, counts, Some(labels.clone()))?;
    let truth = GroundTruth {
        true_word_given_topic: weights,
        class_mixtures: mixtures,
        labels,
        planted_synonym_pairs: spec.planted_synonym_pairs.clone(),
        planted_polysemes: spec.planted_polysemes.clone(),
        word_topics,
    };
    Ok((corpus, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMatch {
    /// `assignment[j]` is the true topic matched to fitted topic `j`.
    pub assignment: Vec<usize>,
    /// Cosine of each fitted topic with its match.
    pub cosines: Vec<f64>,
    pub mean_cosine: f64,
}

/// Greedy one-to-one matching of fitted topics to true topics by cosine of
/// their word distributions.
pub fn oracle_match_topics(fitted: &TopicModel, truth: &GroundTruth) -> Result<TopicMatch> {
    match_topic_columns(fitted.word_given_topic(), &truth.true_word_given_topic)
}

/// Greedy matching between the columns of two N_W × N_Z matrices. The
/// highest-cosine unused pair is taken first; ties go to the lowest indices.
pub fn match_topic_columns(fitted: &Array2<f64>, truth: &Array2<f64>) -> Result<TopicMatch> {
    if fitted.dim() != truth.dim() {
        return Err(Error::DimensionMismatch(format!(
            "fitted topics are {:?}, true topics are {:?}",
            fitted.dim(),
            truth.dim()
        )));
    }
    let nz = fitted.ncols();
    let cos = |a: usize, b: usize| {
        let (u, v) = (fitted.column(a), truth.column(b));
        let (nu, nv) = (u.dot(&u).sqrt(), v.dot(&v).sqrt());
        if nu == 0.0 || nv == 0.0 {
            0.0
        } else {
            u.dot(&v) / (nu * nv)
        }
    };
    let table: Vec<Vec<f64>> = (0..nz)
        .map(|a| (0..nz).map(|b| cos(a, b)).collect())
        .collect();

    let mut assignment = vec![usize::MAX; nz];
    let mut cosines = vec![0.0; nz];
    let mut truth_used = vec![false; nz];
    for _ in 0..nz {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in (0..nz).filter(|&a| assignment[a] == usize::MAX) {
            for b in (0..nz).filter(|&b| !truth_used[b]) {
                if best.is_none_or(|(c, _, _)| table[a][b] > c) {
                    best = Some((table[a][b], a, b));
                }
            }
        }
        let (c, a, b) = best.expect("an unmatched pair remains");
        assignment[a] = b;
        cosines[a] = c;
        truth_used[b] = true;
    }
    let mean_cosine = cosines.iter().sum::<f64>() / nz as f64;
    Ok(TopicMatch {
        assignment,
        cosines,
        mean_cosine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn deterministic() {
        let spec = SynthSpec {
            n_instances: 30,
            planted_synonym_pairs: vec![(0, 4)],
            planted_polysemes: vec![1],
            seed: 11,
            ..SynthSpec::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec {
            seed: 12,
            ..spec.clone()
        };
        assert_ne!(generate(&spec).unwrap().0, generate(&other).unwrap().0);
    }

    #[test]
    fn single_topic_has_one_expected_histogram() {
        let spec = SynthSpec {
            n_topics: 1,
            n_classes: 3,
            n_words: 10,
            ..SynthSpec::default()
        };
        let (_, truth) = generate(&spec).unwrap();
        let expected = truth.true_word_given_topic.column(0).to_owned();
        for mix in &truth.class_mixtures {
            assert_eq!(mix, &vec![1.0]);
            let p = truth.true_word_given_topic.dot(&Array1::from(mix.clone()));
            assert_eq!(p, expected);
        }
    }

    #[test]
    fn word_frequencies_converge_to_marginal() {
        let spec = SynthSpec {
            n_instances: 2000,
            n_words: 100,
            n_topics: 5,
            words_per_instance: 100,
            planted_synonym_pairs: vec![(0, 5), (1, 6)],
            planted_polysemes: vec![2],
            n_diffuse_words: 10,
            diffuse_weight: 3.0,
            seed: 3,
            ..SynthSpec::default()
        };
        let (corpus, truth) = generate(&spec).unwrap();
        let totals = corpus.counts().sum_axis(ndarray::Axis(0));
        let empirical = &totals / totals.sum();
        let expected = truth.expected_word_frequencies();
        let dev = (&empirical - &expected)
            .mapv(f64::abs)
            .fold(0.0f64, |a, &b| a.max(b));
        assert!(dev < 0.02, "max deviation {dev}");
    }

    #[test]
    fn planted_roles() {
        let spec = SynthSpec {
            n_words: 20,
            planted_synonym_pairs: vec![(0, 4), (1, 5)],
            planted_polysemes: vec![2],
            n_diffuse_words: 3,
            diffuse_weight: 4.0,
            ..SynthSpec::default()
        };
        let (corpus, truth) = generate(&spec).unwrap();
        for &(a, b) in &spec.planted_synonym_pairs {
            assert_eq!(truth.word_topics[a], truth.word_topics[b]);
            for i in 0..corpus.n_instances() {
                assert!(corpus.counts()[[i, a]] == 0.0 || corpus.counts()[[i, b]] == 0.0);
            }
        }
        assert_eq!(truth.word_topics[2], vec![0, 1]);
        let w = &truth.true_word_given_topic;
        assert_eq!(w[[2, 0]], w.column(0).fold(0.0f64, |a, &b| a.max(b)));
        assert_eq!(w[[2, 1]], w.column(1).fold(0.0f64, |a, &b| a.max(b)));
        assert!(truth.word_topics[19].is_empty());
        for col in w.columns() {
            assert_abs_diff_eq!(col.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn infeasible_specs() {
        let base = SynthSpec {
            n_words: 6,
            ..SynthSpec::default()
        };
        let bad = [
            SynthSpec {
                planted_synonym_pairs: vec![(0, 1), (2, 3), (4, 5), (0, 2)],
                ..base.clone()
            },
            SynthSpec {
                planted_synonym_pairs: vec![(0, 1), (1, 2)],
                ..base.clone()
            },
            SynthSpec {
                planted_synonym_pairs: vec![(0, 6)],
                ..base.clone()
            },
            SynthSpec {
                planted_polysemes: vec![0],
                n_topics: 1,
                ..base.clone()
            },
            SynthSpec {
                class_mixtures: Some(vec![vec![0.5, 0.4, 0.0, 0.0]; 4]),
                ..base.clone()
            },
            SynthSpec {
                n_topics: 0,
                ..base.clone()
            },
            SynthSpec {
                n_diffuse_words: 6,
                ..base.clone()
            },
        ];
        for spec in bad {
            assert!(generate(&spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn spec_json_defaults() {
        let spec: SynthSpec =
            serde_json::from_str(r#"{"n_instances": 10, "L": 5, "classes": 2}"#).unwrap();
        assert_eq!(spec.words_per_instance, 5);
        assert_eq!(spec.n_classes, 2);
        assert_eq!(spec.topic_sharpness, 20.0);
        assert!(serde_json::from_str::<SynthSpec>(r#"{"n_instance": 10}"#).is_err());
    }

    #[test]
    fn self_match() {
        let (_, truth) = generate(&SynthSpec::default()).unwrap();
        let w = &truth.true_word_given_topic;
        let m = match_topic_columns(w, w).unwrap();
        assert_abs_diff_eq!(m.mean_cosine, 1.0, epsilon = 1e-12);
        assert_eq!(m.assignment, vec![0, 1, 2, 3]);

        let perm = [2, 0, 3, 1];
        let permuted = ndarray::stack(
            ndarray::Axis(1),
            &perm.iter().map(|&j| w.column(j)).collect::<Vec<_>>(),
        )
        .unwrap();
        let m = match_topic_columns(&permuted, w).unwrap();
        assert_abs_diff_eq!(m.mean_cosine, 1.0, epsilon = 1e-12);
        assert_eq!(m.assignment, perm.to_vec());

        assert!(match_topic_columns(&permuted.slice(ndarray::s![.., ..3]).to_owned(), w).is_err());
    }

    proptest! {
        #[test]
        fn truth_is_stochastic_and_pairs_never_cooccur(seed in 0u64..1000, nz in 1usize..6) {
            let spec = SynthSpec {
                n_instances: 20,
                n_words: 16,
                n_topics: nz,
                words_per_instance: 30,
                planted_synonym_pairs: vec![(0, 3), (7, 9)],
                n_classes: 3,
                seed,
                ..SynthSpec::default()
            };
            let (corpus, truth) = generate(&spec).unwrap();
            for col in truth.true_word_given_topic.columns() {
                prop_assert!((col.sum() - 1.0).abs() < 1e-12);
            }
            for &(a, b) in &spec.planted_synonym_pairs {
                for i in 0..corpus.n_instances() {
                    prop_assert!(corpus.counts()[[i, a]] == 0.0 || corpus.counts()[[i, b]] == 0.0);
                }
            }
            for i in 0..corpus.n_instances() {
                prop_assert_eq!(corpus.row(i).sum(), 30.0);
            }
        }
    }
}
