//! Cosine and grammatical similarity, k-NN classification, metrics and the
//! parameter sweep harness.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusMatrix;
use crate::error::{Error, Result};
use crate::grammar::{
    build_grammar, significance, truncate_vocabulary, GrammarModel, GrammarParams,
};
use crate::plsa::{fit_plsa, PlsaConfig};

/// dot(a, b) / (‖a‖‖b‖); 0 when either vector is all zero.
pub fn cosine_similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "histograms have {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_raw(a, b))
}

fn cosine_raw(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a);
    let nb = b.dot(&b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(&b) / (na.sqrt() * nb.sqrt())
}

/// Cosine similarity of M·P·S·h_i and M·P·S·h_j.
pub fn grammatical_similarity(
    h_i: ArrayView1<'_, f64>,
    h_j: ArrayView1<'_, f64>,
    g: &GrammarModel,
) -> Result<f64> {
    let a = g.transform(h_i)?;
    let b = g.transform(h_j)?;
    Ok(cosine_raw(a.view(), b.view()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Cosine,
    Grammatical,
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::Cosine => "cosine",
            Measure::Grammatical => "grammatical",
        })
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Measure::Cosine),
            "grammatical" => Ok(Measure::Grammatical),
            other => Err(Error::InvalidParameter(format!(
                "unknown similarity measure {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub label: String,
}

/// Similarities are ranked at this resolution so rounding noise never decides a tie.
const SIM_RESOLUTION: f64 = 1e12;

/// K-nearest-neighbour classification of every test instance.
///
/// The K most similar training instances vote (ties in similarity at the K-th
/// place go to the earlier training instance). The majority label wins; a tied
/// vote goes to the label with the larger summed similarity, then to the
/// lexicographically smallest label.
pub fn knn_classify(
    train: &CorpusMatrix,
    test: &CorpusMatrix,
    k: usize,
    measure: Measure,
    grammar: Option<&GrammarModel>,
) -> Result<Vec<Prediction>> {
    let labels = train
        .labels()
        .ok_or_else(|| Error::InvalidData("training corpus has no labels".into()))?;
    if k == 0 || k > train.n_instances() {
        return Err(Error::InvalidParameter(format!(
            "K must lie in 1..={}, got {k}",
            train.n_instances()
        )));
    }
    if train.vocabulary() != test.vocabulary() {
        return Err(Error::DimensionMismatch(
            "train and test vocabularies differ".into(),
        ));
    }
    let grammar = match measure {
        Measure::Cosine => None,
        Measure::Grammatical => {
            let g = grammar.ok_or_else(|| {
                Error::InvalidParameter("grammatical similarity requires a grammar model".into())
            })?;
            if g.vocabulary() != train.vocabulary().words() {
                return Err(Error::DimensionMismatch(
                    "grammar vocabulary differs from corpus".into(),
                ));
            }
            Some(g)
        }
    };

    let embed = |corpus: &CorpusMatrix| -> Result<Vec<(Array1<f64>, f64)>> {
        (0..corpus.n_instances())
            .map(|i| {
                let v = match grammar {
                    Some(g) => g.transform(corpus.row(i))?,
                    None => corpus.row(i).to_owned(),
                };
                let norm = v.dot(&v).sqrt();
                Ok((v, norm))
            })
            .collect()
    };
    let train_vecs = embed(train)?;
    let test_vecs = embed(test)?;

    let predictions = test_vecs
        .par_iter()
        .enumerate()
        .map(|(t, (query, q_norm))| {
            let mut sims: Vec<(f64, usize)> = train_vecs
                .iter()
                .enumerate()
                .map(|(i, (v, norm))| {
                    let s = if *q_norm == 0.0 || *norm == 0.0 {
                        0.0
                    } else {
                        query.dot(v) / (q_norm * norm)
                    };
                    ((s * SIM_RESOLUTION).round() / SIM_RESOLUTION, i)
                })
                .collect();
            sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

            let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
            for &(s, i) in &sims[..k] {
                let e = votes.entry(labels[i].as_str()).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += s;
            }
            // BTreeMap iterates labels in order, so strict comparisons keep the smallest on ties.
            let mut best: Option<(&str, usize, f64)> = None;
            for (label, (count, sum)) in votes {
                let better = match best {
                    None => true,
                    Some((_, bc, bs)) => count > bc || (count == bc && sum > bs),
                };
                if better {
                    best = Some((label, count, sum));
                }
            }
            Prediction {
                instance_id: test.instance_ids()[t].clone(),
                label: best.expect("k ≥ 1").0.to_owned(),
            }
        })
        .collect();
    Ok(predictions)
}

/// Parameters that produced a set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub measure: Measure,
    pub k: usize,
    pub n_topics: Option<usize>,
    pub t_meaning: Option<f64>,
    pub t_synonymy: Option<f64>,
    pub pmi_floor: Option<f64>,
    pub effective_vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: EvalConfig,
    pub accuracy: f64,
    pub effective_vocab_size: usize,
    /// Row/column order of `confusion`.
    pub classes: Vec<String>,
    /// `confusion[t][p]`: instances of class `t` predicted as `p`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: BTreeMap<String, ClassMetrics>,
}

impl EvaluationReport {
    /// One row of the sweep CSV, in header order.
    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.config
                .n_topics
                .map(|n| n.to_string())
                .unwrap_or_default(),
            opt(self.config.t_meaning),
            opt(self.config.t_synonymy),
            self.config.k.to_string(),
            self.config.measure.to_string(),
            self.effective_vocab_size.to_string(),
            self.accuracy.to_string(),
        ]
    }
}

pub const SWEEP_CSV_HEADER: [&str; 7] = [
    "n_topics",
    "T_meaning",
    "T_synonymy",
    "K",
    "measure",
    "effective_vocab",
    "accuracy",
];

/// Accuracy, per-class precision/recall and the confusion matrix against the
/// labels of `truth`. Every labelled instance needs exactly one prediction.
pub fn evaluate(
    predictions: &[Prediction],
    truth: &CorpusMatrix,
    config: &EvalConfig,
) -> Result<EvaluationReport> {
    let labels = truth
        .labels()
        .ok_or_else(|| Error::InvalidData("evaluation corpus has no labels".into()))?;
    let mut predicted: HashMap<&str, &str> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if predicted.insert(&p.instance_id, &p.label).is_some() {
            return Err(Error::InvalidData(format!(
                "duplicate prediction for {:?}",
                p.instance_id
            )));
        }
    }
    if predicted.len() != truth.n_instances() {
        let known: std::collections::HashSet<&str> =
            truth.instance_ids().iter().map(String::as_str).collect();
        if let Some(extra) = predicted.keys().find(|id| !known.contains(*id)) {
            return Err(Error::InvalidData(format!(
                "prediction for unknown instance {extra:?}"
            )));
        }
    }

    let mut classes: Vec<String> = labels
        .iter()
        .cloned()
        .chain(predictions.iter().map(|p| p.label.clone()))
        .collect();
    classes.sort();
    classes.dedup();
    let index: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
    for (id, label) in truth.instance_ids().iter().zip(labels) {
        let p = predicted
            .get(id.as_str())
            .ok_or_else(|| Error::InvalidData(format!("missing prediction for {id:?}")))?;
        confusion[index[label.as_str()]][index[p]] += 1;
    }

    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..classes.len()).map(|c| confusion[c][c]).sum();
    let per_class = classes
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let support: usize = confusion[c].iter().sum();
            let predicted_as: usize = confusion.iter().map(|row| row[c]).sum();
            let ratio = |num: usize, den: usize| {
                if den == 0 {
                    0.0
                } else {
                    num as f64 / den as f64
                }
            };
            (
                name.clone(),
                ClassMetrics {
                    precision: ratio(confusion[c][c], predicted_as),
                    recall: ratio(confusion[c][c], support),
                    support,
                },
            )
        })
        .collect();

    Ok(EvaluationReport {
        config: config.clone(),
        accuracy: correct as f64 / total as f64,
        effective_vocab_size: config.effective_vocab_size,
        classes,
        confusion,
        per_class,
    })
}

/// Grid of the sweep; every combination is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub n_topics: Vec<usize>,
    pub t_meaning: Vec<f64>,
    #[serde(alias = "K")]
    pub k: Vec<usize>,
    pub measure: Vec<Measure>,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.n_topics.len() * self.t_meaning.len() * self.k.len() * self.measure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Settings shared by every grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub t_synonymy: f64,
    pub pmi_floor: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SweepParams {
    fn default() -> Self {
        let g = GrammarParams::default();
        let p = PlsaConfig::default();
        SweepParams {
            t_synonymy: g.t_synonymy,
            pmi_floor: g.pmi_floor,
            max_iters: p.max_iters,
            tol: p.tol,
            seed: p.seed,
        }
    }
}

/// Evaluates every grid point; see [`sweep_with`].
pub fn sweep(
    train: &CorpusMatrix,
    test: &CorpusMatrix,
    grid: &SweepGrid,
    params: &SweepParams,
) -> Result<Vec<EvaluationReport>> {
    sweep_with(train, test, grid, params, |_| Ok(()))
}

/// Runs the grid in order n_topics → T_meaning → K → measure, handing each
/// report to `sink` as soon as it is ready.
///
/// PLSA is fitted once per `n_topics` and the grammar once per (n_topics,
/// T_meaning). The cosine measure is evaluated on the meaningfulness-truncated
/// vocabulary; the grammatical measure uses the full M·P·S transform.
pub fn sweep_with<F>(
    train: &CorpusMatrix,
    test: &CorpusMatrix,
    grid: &SweepGrid,
    params: &SweepParams,
    mut sink: F,
) -> Result<Vec<EvaluationReport>>
where
    F: FnMut(&EvaluationReport) -> Result<()>,
{
    if grid.is_empty() {
        return Err(Error::InvalidParameter("sweep grid has no points".into()));
    }
    let mut reports = Vec::with_capacity(grid.len());
    for &n_topics in &grid.n_topics {
        let model = fit_plsa(
            train,
            &PlsaConfig {
                n_topics,
                max_iters: params.max_iters,
                tol: params.tol,
                seed: params.seed,
            },
        )?;
        let base = build_grammar(
            train,
            &model,
            &GrammarParams {
                t_meaning: 0.0,
                t_synonymy: params.t_synonymy,
                pmi_floor: params.pmi_floor,
            },
        )?;
        let table = significance(&model);
        for &t_meaning in &grid.t_meaning {
            let grammar = base.with_t_meaning(&table, t_meaning)?;
            let truncation = truncate_vocabulary(train, grammar.meaningfulness())?;
            let test_truncated = test.select_columns(&truncation.kept)?;
            for &k in &grid.k {
                for &measure in &grid.measure {
                    let (predictions, effective) = match measure {
                        Measure::Cosine => (
                            knn_classify(&truncation.corpus, &test_truncated, k, measure, None)?,
                            truncation.effective_vocab_size(),
                        ),
                        Measure::Grammatical => (
                            knn_classify(train, test, k, measure, Some(&grammar))?,
                            grammar.effective_vocab_size(),
                        ),
                    };
                    let config = EvalConfig {
                        measure,
                        k,
                        n_topics: Some(n_topics),
                        t_meaning: Some(t_meaning),
                        t_synonymy: Some(params.t_synonymy),
                        pmi_floor: Some(params.pmi_floor),
                        effective_vocab_size: effective,
                    };
                    let report = evaluate(&predictions, test, &config)?;
                    sink(&report)?;
                    reports.push(report);
                }
            }
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn labelled(counts: Array2<f64>, labels: &[&str], prefix: &str) -> CorpusMatrix {
        let (ni, nw) = counts.dim();
        CorpusMatrix::new(
            (0..ni).map(|i| format!("{prefix}{i}")).collect(),
            Vocabulary::new((0..nw).map(|n| format!("w{n}")).collect()).unwrap(),
            counts,
            Some(labels.iter().map(|s| s.to_string()).collect()),
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        let h = array![3.0, 1.0, 2.0];
        assert_abs_diff_eq!(
            cosine_similarity(h.view(), h.view()).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(
            cosine_similarity(array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(
            cosine_similarity(array![1.0, 1.0].view(), array![1.0, 0.0].view()).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert_eq!(
            cosine_similarity(array![0.0, 0.0].view(), array![1.0, 0.0].view()).unwrap(),
            0.0
        );
        assert!(cosine_similarity(array![1.0].view(), array![1.0, 0.0].view()).is_err());
    }

    fn toy_grammar() -> GrammarModel {
        let mut s = Array2::eye(3);
        s[[0, 1]] = 0.8;
        s[[1, 0]] = 0.8;
        GrammarModel::from_parts(
            array![1.0, 0.9, 0.0],
            s,
            array![0.7, 1.0, 0.5],
            GrammarParams::default(),
            (0..3).map(|n| format!("w{n}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn grammatical_examples() {
        let id = GrammarModel::identity((0..3).map(|n| format!("w{n}")).collect());
        let (a, b) = (array![1.0, 4.0, 2.0], array![0.0, 3.0, 5.0]);
        assert_eq!(
            grammatical_similarity(a.view(), b.view(), &id).unwrap(),
            cosine_similarity(a.view(), b.view()).unwrap()
        );

        let g = toy_grammar();
        assert_abs_diff_eq!(
            grammatical_similarity(a.view(), a.view(), &g).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let scaled = &a * 7.5;
        assert_abs_diff_eq!(
            grammatical_similarity(scaled.view(), b.view(), &g).unwrap(),
            grammatical_similarity(a.view(), b.view(), &g).unwrap(),
            epsilon = 1e-12
        );
        // Only the removed word: transformed vector is zero.
        assert_eq!(
            grammatical_similarity(array![0.0, 0.0, 1.0].view(), a.view(), &g).unwrap(),
            0.0
        );
    }

    #[test]
    fn exact_match_is_nearest() {
        let train = labelled(
            array![[5.0, 1.0, 0.0], [0.0, 2.0, 6.0], [1.0, 5.0, 1.0]],
            &["a", "b", "c"],
            "tr",
        );
        let test = labelled(array![[0.0, 2.0, 6.0]], &["b"], "te");
        let p = knn_classify(&train, &test, 1, Measure::Cosine, None).unwrap();
        assert_eq!(p[0].label, "b");
        assert_eq!(p[0].instance_id, "te0");
    }

    #[test]
    fn majority_wins_when_all_equal() {
        let train = labelled(Array2::ones((5, 2)), &["x", "y", "y", "x", "y"], "tr");
        let test = labelled(array![[1.0, 1.0], [3.0, 3.0]], &["x", "x"], "te");
        let p = knn_classify(&train, &test, 5, Measure::Cosine, None).unwrap();
        assert!(p.iter().all(|p| p.label == "y"));
    }

    #[test]
    fn tied_vote_uses_summed_similarity_then_name() {
        let train = labelled(
            array![[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            &["b", "z", "a"],
            "tr",
        );
        // Nearest two are "b" (1.0) and "z" (0.707): one vote each, b has the larger sum.
        let test = labelled(array![[1.0, 0.0]], &["b"], "te");
        assert_eq!(
            knn_classify(&train, &test, 2, Measure::Cosine, None).unwrap()[0].label,
            "b"
        );
        // Equidistant from "b" and "a": sums tie, so the name decides.
        let train = labelled(array![[1.0, 0.0], [0.0, 1.0]], &["b", "a"], "tr");
        let test = labelled(array![[1.0, 1.0]], &["b"], "te");
        assert_eq!(
            knn_classify(&train, &test, 2, Measure::Cosine, None).unwrap()[0].label,
            "a"
        );
    }

    #[test]
    fn knn_errors() {
        let train = labelled(Array2::ones((2, 2)), &["x", "y"], "tr");
        let test = labelled(Array2::ones((1, 2)), &["x"], "te");
        assert!(knn_classify(&train, &test, 3, Measure::Cosine, None).is_err());
        assert!(knn_classify(&train, &test, 0, Measure::Cosine, None).is_err());
        assert!(knn_classify(&train, &test, 1, Measure::Grammatical, None).is_err());
        let unlabelled = CorpusMatrix::new(
            vec!["u".into()],
            train.vocabulary().clone(),
            Array2::ones((1, 2)),
            None,
        )
        .unwrap();
        assert!(knn_classify(&unlabelled, &test, 1, Measure::Cosine, None).is_err());
    }

    fn cfg() -> EvalConfig {
        EvalConfig {
            measure: Measure::Cosine,
            k: 1,
            n_topics: None,
            t_meaning: None,
            t_synonymy: None,
            pmi_floor: None,
            effective_vocab_size: 2,
        }
    }

    fn preds(ids: &[&str], labels: &[&str]) -> Vec<Prediction> {
        ids.iter()
            .zip(labels)
            .map(|(i, l)| Prediction {
                instance_id: i.to_string(),
                label: l.to_string(),
            })
            .collect()
    }

    #[test]
    fn evaluate_examples() {
        let truth = labelled(Array2::ones((4, 2)), &["a", "a", "b", "b"], "t");
        let ids = ["t0", "t1", "t2", "t3"];

        let r = evaluate(&preds(&ids, &["a", "a", "b", "b"]), &truth, &cfg()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion, vec![vec![2, 0], vec![0, 2]]);

        let r = evaluate(&preds(&ids, &["a", "a", "a", "a"]), &truth, &cfg()).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.per_class["a"].precision, 0.5);
        assert_eq!(r.per_class["b"].recall, 0.0);
        assert_eq!(r.per_class["b"].precision, 0.0);
        assert_eq!(r.effective_vocab_size, 2);

        assert!(evaluate(&preds(&ids[..3], &["a", "a", "a"]), &truth, &cfg()).is_err());
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(
            a in proptest::collection::vec(0.0f64..50.0, 6),
            b in proptest::collection::vec(0.0f64..50.0, 6),
        ) {
            let (a, b) = (Array1::from(a), Array1::from(b));
            let ab = cosine_similarity(a.view(), b.view()).unwrap();
            prop_assert_eq!(ab, cosine_similarity(b.view(), a.view()).unwrap());
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        }

        #[test]
        fn report_is_internally_consistent(
            truth in proptest::collection::vec(0usize..3, 1..30),
            guess in proptest::collection::vec(0usize..4, 30),
        ) {
            let names = ["p", "q", "r", "s"];
            let n = truth.len();
            let labels: Vec<&str> = truth.iter().map(|&t| names[t]).collect();
            let corpus = labelled(Array2::ones((n, 2)), &labels, "t");
            let ids: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let ps: Vec<Prediction> = (0..n)
                .map(|i| Prediction { instance_id: ids[i].clone(), label: names[guess[i]].to_owned() })
                .collect();
            let r = evaluate(&ps, &corpus, &cfg()).unwrap();
            let trace: usize = (0..r.classes.len()).map(|c| r.confusion[c][c]).sum();
            let total: usize = r.confusion.iter().flatten().sum();
            prop_assert_eq!(r.accuracy, trace as f64 / total as f64);
            for (c, name) in r.classes.iter().enumerate() {
                prop_assert_eq!(r.confusion[c].iter().sum::<usize>(), r.per_class[name].support);
            }
        }

        #[test]
        fn knn_ignores_histogram_scale(
            raw in proptest::collection::vec(0u8..5, 48),
            which in 0usize..12,
            factor in 0.1f64..40.0,
        ) {
            let counts = Array2::from_shape_fn((12, 4), |(i, n)| raw[i * 4 + n] as f64 + if n == i % 4 { 1.0 } else { 0.0 });
            let labels: Vec<&str> = (0..12).map(|i| ["a", "b", "c"][i % 3]).collect();
            let train = labelled(counts.slice(ndarray::s![..8, ..]).to_owned(), &labels[..8], "tr");
            let test = labelled(counts.slice(ndarray::s![8.., ..]).to_owned(), &labels[8..], "te");
            let base = knn_classify(&train, &test, 3, Measure::Cosine, None).unwrap();

            let mut scaled_counts = counts.clone();
            scaled_counts.row_mut(which).mapv_inplace(|v| v * factor);
            let train2 = labelled(scaled_counts.slice(ndarray::s![..8, ..]).to_owned(), &labels[..8], "tr");
            let test2 = labelled(scaled_counts.slice(ndarray::s![8.., ..]).to_owned(), &labels[8..], "te");
            prop_assert_eq!(knn_classify(&train2, &test2, 3, Measure::Cosine, None).unwrap(), base);
        }
    }
}
