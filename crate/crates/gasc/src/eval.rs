//! Evaluation: held-out log-likelihood, automatic sense labelling, matching
//! against expert senses, weighted precision/recall, and sense-genre rank
//! correlations.

pub mod spearman;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, ExpertAnnotation, SenseFrequencySeries};
use crate::model::{softmax, SampleSet, StateLikelihood};

pub use spearman::{spearman, Spearman};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("word id {word} outside vocabulary of size {vocab}; build the vocabulary jointly before splitting")]
    WordOutOfRange { word: usize, vocab: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("series is constant; rank correlation undefined")]
    ConstantSeries,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("no matched sense pairs")]
    NoMatches,
}

fn check_test_corpus(samples: &SampleSet, test: &Corpus) -> Result<(), EvalError> {
    let config = &samples.config;
    for snippet in &test.snippets {
        if snippet.time_slice >= config.n_times {
            return Err(EvalError::DimensionMismatch(format!(
                "snippet time slice {} outside model range {}",
                snippet.time_slice, config.n_times
            )));
        }
        if config.n_genres != 1 && snippet.genre_id >= config.n_genres {
            return Err(EvalError::DimensionMismatch(format!(
                "snippet genre {} outside model range {}",
                snippet.genre_id, config.n_genres
            )));
        }
        for &w in &snippet.context_ids {
            if w >= config.vocab_size {
                return Err(EvalError::WordOutOfRange {
                    word: w,
                    vocab: config.vocab_size,
                });
            }
        }
    }
    Ok(())
}

/// Mean over retained samples of the total log-likelihood of the test
/// snippets; higher is better.
pub fn heldout_loglik(samples: &SampleSet, test: &Corpus) -> Result<f64, EvalError> {
    if samples.samples.is_empty() {
        return Err(EvalError::EmptyInput("sample set".to_string()));
    }
    check_test_corpus(samples, test)?;
    let mut total = 0.0;
    for state in &samples.samples {
        let tables = StateLikelihood::new(state);
        total += test
            .snippets
            .iter()
            .map(|s| tables.snippet_log_likelihood(s))
            .sum::<f64>();
    }
    Ok(total / samples.samples.len() as f64)
}

/// Time selection for word rankings: one slice, or the corpus-global
/// aggregate weighted by per-slice snippet counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeSelector {
    Slice(usize),
    Aggregate,
}

/// Posterior-mean word distributions per (time, sense), plus the aggregate.
///
/// Means are taken coordinate-wise over retained samples, without any
/// re-sorting before averaging.
pub struct MeanWordDistributions {
    /// `per_slice[t][k][v]`
    pub per_slice: Vec<Vec<Vec<f64>>>,
    /// `aggregate[k][v]`, slices weighted by training snippet counts.
    pub aggregate: Vec<Vec<f64>>,
}

impl MeanWordDistributions {
    pub fn new(samples: &SampleSet) -> Result<Self, EvalError> {
        if samples.samples.is_empty() {
            return Err(EvalError::EmptyInput("sample set".to_string()));
        }
        let config = &samples.config;
        let scale = 1.0 / samples.samples.len() as f64;
        let mut per_slice =
            vec![vec![vec![0.0; config.vocab_size]; config.n_senses]; config.n_times];
        for state in &samples.samples {
            for (t, per_k) in state.psi.iter().enumerate() {
                for (k, row) in per_k.iter().enumerate() {
                    for (v, p) in softmax(row).into_iter().enumerate() {
                        per_slice[t][k][v] += scale * p;
                    }
                }
            }
        }

        let counts = samples.counts_per_slice();
        let total: usize = counts.iter().sum();
        let weights: Vec<f64> = if total == 0 {
            vec![1.0 / config.n_times as f64; config.n_times]
        } else {
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        };
        let mut aggregate = vec![vec![0.0; config.vocab_size]; config.n_senses];
        for (t, dist) in per_slice.iter().enumerate() {
            for (k, row) in dist.iter().enumerate() {
                for (v, p) in row.iter().enumerate() {
                    aggregate[k][v] += weights[t] * p;
                }
            }
        }
        Ok(Self {
            per_slice,
            aggregate,
        })
    }

    pub fn distribution(&self, time: TimeSelector, sense: usize) -> &[f64] {
        match time {
            TimeSelector::Slice(t) => &self.per_slice[t][sense],
            TimeSelector::Aggregate => &self.aggregate[sense],
        }
    }

    /// Top-n words of a sense, descending by probability (word id breaks
    /// ties), optionally excluding a stop-word id set.
    pub fn top_words(
        &self,
        time: TimeSelector,
        sense: usize,
        n: usize,
        exclude: Option<&HashSet<usize>>,
    ) -> SenseWordList {
        let dist = self.distribution(time, sense);
        let mut entries: Vec<(usize, f64)> = dist
            .iter()
            .enumerate()
            .filter(|(v, _)| exclude.is_none_or(|set| !set.contains(v)))
            .map(|(v, &p)| (v, p))
            .collect();
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        entries.truncate(n);
        SenseWordList {
            time,
            sense,
            entries,
        }
    }
}

/// Ranked words of one model sense at one time selection.
#[derive(Debug, Clone)]
pub struct SenseWordList {
    pub time: TimeSelector,
    pub sense: usize,
    /// `(word id, posterior-mean probability)`, descending.
    pub entries: Vec<(usize, f64)>,
}

impl SenseWordList {
    /// Probabilities renormalized to sum to one over the listed words.
    pub fn normalized(&self) -> Vec<(usize, f64)> {
        let total: f64 = self.entries.iter().map(|(_, p)| p).sum();
        if total == 0.0 {
            return self.entries.clone();
        }
        self.entries.iter().map(|&(w, p)| (w, p / total)).collect()
    }
}

/// Top-n posterior-mean words for one sense.
pub fn top_words(
    samples: &SampleSet,
    time: TimeSelector,
    sense: usize,
    n: usize,
) -> Result<SenseWordList, EvalError> {
    if sense >= samples.config.n_senses {
        return Err(EvalError::InvalidParam(format!(
            "sense {sense} outside model range"
        )));
    }
    if let TimeSelector::Slice(t) = time {
        if t >= samples.config.n_times {
            return Err(EvalError::InvalidParam(format!(
                "time slice {t} outside model range"
            )));
        }
    }
    Ok(MeanWordDistributions::new(samples)?.top_words(time, sense, n, None))
}

/// Inverted view of the expert annotations: per-sense context-word sets and
/// the number of senses each word co-occurs with.
pub struct ExpertIndex {
    senses: Vec<String>,
    context_words: Vec<BTreeSet<usize>>,
    senses_per_word: BTreeMap<usize, usize>,
}

impl ExpertIndex {
    /// Build from annotations, optionally removing stop-word ids from every
    /// context set.
    pub fn new(annotations: &[ExpertAnnotation], stopwords: Option<&HashSet<usize>>) -> Self {
        let senses: Vec<String> = annotations
            .iter()
            .map(|a| a.sense_label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: BTreeMap<&str, usize> = senses
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut context_words = vec![BTreeSet::new(); senses.len()];
        for a in annotations {
            let s = index[a.sense_label.as_str()];
            for &w in &a.context_ids {
                if stopwords.is_none_or(|set| !set.contains(&w)) {
                    context_words[s].insert(w);
                }
            }
        }
        let mut senses_per_word = BTreeMap::new();
        for words in &context_words {
            for &w in words {
                *senses_per_word.entry(w).or_insert(0) += 1;
            }
        }
        Self {
            senses,
            context_words,
            senses_per_word,
        }
    }

    pub fn senses(&self) -> &[String] {
        &self.senses
    }

    pub fn sense_index(&self, label: &str) -> Option<usize> {
        self.senses.iter().position(|s| s == label)
    }

    /// Expert score `m(w, s)`: one over the number of expert senses whose
    /// annotated contexts contain `w`, or zero if `w` never co-occurs with s.
    pub fn expert_score(&self, word: usize, sense: usize) -> f64 {
        if !self.context_words[sense].contains(&word) {
            return 0.0;
        }
        1.0 / self.senses_per_word[&word] as f64
    }

    /// Whether `word` occurs in the context window of any annotation of `sense`.
    pub fn occurs_with(&self, word: usize, sense: usize) -> bool {
        self.context_words[sense].contains(&word)
    }

    /// Total expert-score mass of a sense's context set.
    pub fn context_mass(&self, sense: usize) -> f64 {
        self.context_words[sense]
            .iter()
            .map(|&w| self.expert_score(w, sense))
            .sum()
    }
}

/// Expert score of one word against one expert sense label.
pub fn expert_score(word: usize, sense_label: &str, annotations: &[ExpertAnnotation]) -> f64 {
    let index = ExpertIndex::new(annotations, None);
    match index.sense_index(sense_label) {
        Some(s) => index.expert_score(word, s),
        None => 0.0,
    }
}

/// Weighted overlap between a model sense's word list and one expert sense:
/// the sum over listed words of normalized probability times expert score.
pub fn confidence(list: &SenseWordList, sense: usize, index: &ExpertIndex) -> f64 {
    list.normalized()
        .iter()
        .map(|&(w, p)| p * index.expert_score(w, sense))
        .sum()
}

/// Confidence of every (model sense, expert sense) pair, using the
/// aggregate-time top-n word lists.
pub fn confidence_matrix(
    samples: &SampleSet,
    index: &ExpertIndex,
    top_n: usize,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let dists = MeanWordDistributions::new(samples)?;
    let n_senses = samples.config.n_senses;
    let mut conf = vec![vec![0.0; index.senses().len()]; n_senses];
    for (k, conf_row) in conf.iter_mut().enumerate() {
        let list = dists.top_words(TimeSelector::Aggregate, k, top_n, None);
        for (s, cell) in conf_row.iter_mut().enumerate() {
            *cell = confidence(&list, s, index);
        }
    }
    Ok(conf)
}

/// Confidence matrix plus the selected (model sense, expert sense) pairs.
#[derive(Debug, Clone, Serialize)]
pub struct MatchResult {
    /// `conf[k][s]`
    pub conf: Vec<Vec<f64>>,
    /// Expert sense labels indexing the columns.
    pub expert_senses: Vec<String>,
    /// Per expert sense: matched model sense(s); empty means NA.
    pub assignment: Vec<Vec<usize>>,
}

impl MatchResult {
    pub fn matched_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (s, ks) in self.assignment.iter().enumerate() {
            for &k in ks {
                pairs.push((k, s));
            }
        }
        pairs
    }

    pub fn is_all_na(&self) -> bool {
        self.assignment.iter().all(|ks| ks.is_empty())
    }

    /// Labels for model senses: matched expert labels joined, `NA` otherwise.
    pub fn model_sense_labels(&self, n_senses: usize) -> Vec<String> {
        (0..n_senses)
            .map(|k| {
                let matched: Vec<&str> = self
                    .assignment
                    .iter()
                    .enumerate()
                    .filter(|(_, ks)| ks.contains(&k))
                    .map(|(s, _)| self.expert_senses[s].as_str())
                    .collect();
                if matched.is_empty() {
                    "NA".to_string()
                } else {
                    matched.join("+")
                }
            })
            .collect()
    }
}

/// Select model senses per expert sense: confidence must strictly exceed
/// both the random baseline `1/S` and the sum of the 2nd and 3rd best
/// confidences in the column (the sum of all remaining entries when fewer
/// than three model senses exist).
pub fn match_senses(conf: Vec<Vec<f64>>, expert_senses: Vec<String>) -> MatchResult {
    let n_expert = expert_senses.len();
    let baseline = 1.0 / n_expert as f64;
    let mut assignment = vec![Vec::new(); n_expert];
    for (s, slot) in assignment.iter_mut().enumerate() {
        let mut column: Vec<f64> = conf.iter().map(|row| row[s]).collect();
        column.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let runners_up = column.get(1).copied().unwrap_or(0.0)
            + column.get(2).copied().unwrap_or(0.0);
        for (k, row) in conf.iter().enumerate() {
            let c = row[s];
            if c > baseline && c > runners_up {
                slot.push(k);
            }
        }
    }
    MatchResult {
        conf,
        expert_senses,
        assignment,
    }
}

/// Options for the precision/recall computation.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Number of top words the model "assigns" to a sense.
    pub top_n: usize,
    /// Also report the raw-count precision variant (correct words over
    /// listed words, unweighted).
    pub raw_count_precision: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            top_n: 20,
            raw_count_precision: false,
        }
    }
}

/// Scores of one matched (model sense, expert sense) pair.
#[derive(Debug, Clone, Serialize)]
pub struct PairScore {
    pub model_sense: usize,
    pub expert_sense: String,
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
    pub raw_count_precision: Option<f64>,
}

/// Matched-pair scores and their averages.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub pairs: Vec<PairScore>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub raw_count_precision: Option<f64>,
    pub top_n: usize,
    pub stopwords_applied: bool,
    /// Expert senses left without a matched model sense.
    pub unmatched_senses: Vec<String>,
}

/// Weighted precision and recall over the matched pairs.
///
/// A listed word is correct for the pair `(k, s)` if it occurs within the
/// context window of some annotation labelled `s`. Precision is the correct
/// normalized probability mass of the sense's top-n list; recall divides
/// the same mass by the expert-score mass of the sense's context set. Stop
/// words are removed from both the model rankings and the expert context
/// sets before scoring. Final scores average over matched pairs; F1 is the
/// harmonic mean of the averages.
pub fn precision_recall(
    matching: &MatchResult,
    samples: &SampleSet,
    annotations: &[ExpertAnnotation],
    stopwords: &HashSet<usize>,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let index = ExpertIndex::new(annotations, Some(stopwords));
    let dists = MeanWordDistributions::new(samples)?;

    let mut pairs = Vec::new();
    for (k, s) in matching.matched_pairs() {
        let sense_label = &matching.expert_senses[s];
        let filtered_s = match index.sense_index(sense_label) {
            Some(i) => i,
            None => continue, // sense vanished entirely under stop-word removal
        };
        let list = dists.top_words(TimeSelector::Aggregate, k, opts.top_n, Some(stopwords));
        let normalized = list.normalized();
        let correct_mass: f64 = normalized
            .iter()
            .filter(|&&(w, _)| index.occurs_with(w, filtered_s))
            .map(|&(_, p)| p)
            .sum();
        let listed_mass: f64 = normalized.iter().map(|&(_, p)| p).sum();
        let precision = if listed_mass > 0.0 {
            correct_mass / listed_mass
        } else {
            0.0
        };
        let expert_mass = index.context_mass(filtered_s);
        let recall = if expert_mass > 0.0 {
            correct_mass / expert_mass
        } else {
            0.0
        };
        let raw = opts.raw_count_precision.then(|| {
            let correct = normalized
                .iter()
                .filter(|&&(w, _)| index.occurs_with(w, filtered_s))
                .count();
            correct as f64 / normalized.len().max(1) as f64
        });
        pairs.push(PairScore {
            model_sense: k,
            expert_sense: sense_label.clone(),
            confidence: matching.conf[k][s],
            precision,
            recall,
            raw_count_precision: raw,
        });
    }

    let unmatched_senses: Vec<String> = matching
        .assignment
        .iter()
        .enumerate()
        .filter(|(_, ks)| ks.is_empty())
        .map(|(s, _)| matching.expert_senses[s].clone())
        .collect();

    if pairs.is_empty() {
        return Ok(EvalReport {
            pairs,
            precision: None,
            recall: None,
            f1: None,
            raw_count_precision: None,
            top_n: opts.top_n,
            stopwords_applied: !stopwords.is_empty(),
            unmatched_senses,
        });
    }

    let n = pairs.len() as f64;
    let precision = pairs.iter().map(|p| p.precision).sum::<f64>() / n;
    let recall = pairs.iter().map(|p| p.recall).sum::<f64>() / n;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let raw = opts.raw_count_precision.then(|| {
        pairs
            .iter()
            .filter_map(|p| p.raw_count_precision)
            .sum::<f64>()
            / n
    });
    Ok(EvalReport {
        pairs,
        precision: Some(precision),
        recall: Some(recall),
        f1: Some(f1),
        raw_count_precision: raw,
        top_n: opts.top_n,
        stopwords_applied: !stopwords.is_empty(),
        unmatched_senses,
    })
}

/// One (time, genre) row of posterior sense proportions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionRow {
    pub time_slice: usize,
    pub genre_id: usize,
    pub n_snippets: usize,
    /// Mean assignment posterior per model sense; sums to one.
    pub proportions: Vec<f64>,
}

/// Posterior-mean sense proportions per (time, genre) cell.
///
/// For each retained sample the conditional assignment posterior of every
/// snippet is averaged within its cell; cells without snippets are omitted.
/// Returns the rows and per-model-sense labels (expert labels when a
/// matching is supplied).
pub fn sense_evolution_table(
    samples: &SampleSet,
    corpus: &Corpus,
    matching: Option<&MatchResult>,
) -> Result<(Vec<EvolutionRow>, Vec<String>), EvalError> {
    if samples.samples.is_empty() {
        return Err(EvalError::EmptyInput("sample set".to_string()));
    }
    check_test_corpus(samples, corpus)?;
    let n_senses = samples.config.n_senses;
    let mut acc = vec![vec![vec![0.0; n_senses]; corpus.n_genres]; corpus.n_times];
    let mut counts = vec![vec![0usize; corpus.n_genres]; corpus.n_times];
    for snippet in &corpus.snippets {
        counts[snippet.time_slice][snippet.genre_id] += 1;
    }
    for state in &samples.samples {
        let tables = StateLikelihood::new(state);
        for snippet in &corpus.snippets {
            let post = tables.assignment_posterior(snippet);
            let cell = &mut acc[snippet.time_slice][snippet.genre_id];
            for (slot, p) in cell.iter_mut().zip(&post) {
                *slot += p;
            }
        }
    }

    let n_samples = samples.samples.len() as f64;
    let mut rows = Vec::new();
    for t in 0..corpus.n_times {
        for g in 0..corpus.n_genres {
            if counts[t][g] == 0 {
                continue;
            }
            let scale = 1.0 / (n_samples * counts[t][g] as f64);
            rows.push(EvolutionRow {
                time_slice: t,
                genre_id: g,
                n_snippets: counts[t][g],
                proportions: acc[t][g].iter().map(|v| v * scale).collect(),
            });
        }
    }
    let labels = match matching {
        Some(m) => m.model_sense_labels(n_senses),
        None => (0..n_senses).map(|k| format!("sense-{k}")).collect(),
    };
    Ok((rows, labels))
}

/// One sense-genre correlation entry; `rho`/`p_value` are `None` when the
/// correlation is undefined (constant series).
#[derive(Debug, Clone, Serialize)]
pub struct CorrelationRow {
    pub sense: String,
    pub genre: String,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

/// Spearman correlation between each sense's frequency series and its
/// within-genre restriction, for every (sense, genre) pair.
pub fn sense_genre_correlations(series: &SenseFrequencySeries) -> Vec<CorrelationRow> {
    let mut rows = Vec::new();
    for (s, sense) in series.senses.iter().enumerate() {
        for (g, genre) in series.genres.iter().enumerate() {
            let row = match spearman(&series.f_sense[s], &series.f_sense_genre[s][g]) {
                Ok(r) => CorrelationRow {
                    sense: sense.clone(),
                    genre: genre.clone(),
                    rho: Some(r.rho),
                    p_value: Some(r.p_value),
                    significant: r.p_value < 0.05,
                },
                Err(_) => CorrelationRow {
                    sense: sense.clone(),
                    genre: genre.clone(),
                    rho: None,
                    p_value: None,
                    significant: false,
                },
            };
            rows.push(row);
        }
    }
    rows
}
