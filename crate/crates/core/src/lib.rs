//! Visual grammar for bag-of-visual-words descriptors.
//!
//! The crate works on histogram corpora (instances × visual words) and builds
//! three word-space transformations on top of a PLSA topic model:
//!
//! - **meaningfulness** ([`grammar::meaningfulness`]): weights or drops words by
//!   their best rank inside any topic,
//! - **synonymy** ([`grammar::build_grammar`]): links words that never appear
//!   together but share the same contexts,
//! - **polysemy**: down-weights words that rank highly in several topics.
//!
//! The composed transform feeds [`similarity::grammatical_similarity`], a cosine
//! similarity computed in the transformed space, which drives a k-NN classifier
//! and a parameter sweep harness. [`synth`] generates corpora with planted
//! structure so every stage can be checked against known ground truth.
//!
//! ```
//! use visual_grammar::prelude::*;
//!
//! let spec = SynthSpec { n_instances: 60, n_words: 12, n_topics: 3, n_classes: 3, seed: 1, ..SynthSpec::default() };
//! let (corpus, _truth) = generate(&spec).unwrap();
//! let model = fit_plsa(&corpus, &PlsaConfig { n_topics: 3, seed: 7, ..PlsaConfig::default() }).unwrap();
//! let grammar = build_grammar(&corpus, &model, &GrammarParams::default()).unwrap();
//! let sim = grammatical_similarity(corpus.row(0), corpus.row(1), &grammar).unwrap();
//! assert!((0.0..=1.0 + 1e-12).contains(&sim));
//! ```

pub mod cli;
pub mod corpus;
pub mod error;
pub mod grammar;
pub mod plsa;
mod serde_util;
pub mod similarity;
pub mod synth;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::corpus::{
        load_corpus, save_corpus, split_corpus, CorpusFormat, CorpusMatrix, Vocabulary,
    };
    pub use crate::error::{Error, Result};
    pub use crate::grammar::{
        apply_meaningfulness, apply_polysemy, apply_synonymy, build_grammar, contextual_cosine,
        meaningfulness, pmi_table, significance, synonymy_value, truncate_vocabulary, GrammarModel,
        GrammarParams, PmiTable, SignificanceTable,
    };
    pub use crate::plsa::{fit_plsa, loglikelihood, PlsaConfig, TopicModel};
    pub use crate::similarity::{
        cosine_similarity, evaluate, grammatical_similarity, knn_classify, sweep, EvaluationReport,
        Measure, SweepGrid,
    };
    pub use crate::synth::{generate, oracle_match_topics, GroundTruth, SynthSpec};
}
