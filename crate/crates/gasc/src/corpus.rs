//! Corpus and annotation ingestion.
//!
//! Input corpora are JSON Lines files with one record per document:
//! `{"doc_id": ..., "time_slice_label": ..., "genre_label": ..., "lemmas": [...]}`.
//! Loading extracts one snippet per occurrence of the target lemma: the bag
//! of up to `W` lemmas on each side, truncated at document boundaries.
//!
//! Expert annotations are CSV files with columns
//! `date,genre,author,work,target,sense_id,basis,context`, one row per
//! annotated occurrence of the target.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("no occurrences of target `{0}` in corpus")]
    NoOccurrences(String),
    #[error("line {line}: unknown time slice label `{label}`")]
    UnknownTimeLabel { line: usize, label: String },
    #[error("line {line}: unknown basis value `{value}` (expected `collocates` or `other`)")]
    UnknownBasis { line: usize, value: String },
    #[error("line {line}: missing column `{column}`")]
    MissingColumn { line: usize, column: String },
    #[error("vocabulary is empty after frequency filtering")]
    EmptyVocabulary,
    #[error("duplicate lemma `{0}` in vocabulary")]
    DuplicateLemma(String),
    #[error("test fraction {0} outside (0, 1)")]
    InvalidTestFraction(f64),
    #[error("split leaves zero training snippets")]
    EmptyTrainSplit,
    #[error("invalid genre map rule `{0}` (expected `from:to`)")]
    InvalidGenreMap(String),
    #[error("no annotations")]
    EmptyAnnotations,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Bijection between lemma strings and dense integer ids in `[0, V)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from an ordered word list. Fails on duplicates or an empty list.
    pub fn from_words(words: Vec<String>) -> Result<Self, CorpusError> {
        if words.is_empty() {
            return Err(CorpusError::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(CorpusError::DuplicateLemma(w.clone()));
            }
        }
        Ok(Self { words, index })
    }

    pub fn id(&self, lemma: &str) -> Option<usize> {
        self.index.get(lemma).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// One occurrence of the target word: its context bag, time slice, and genre.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snippet {
    pub snippet_id: usize,
    pub time_slice: usize,
    pub genre_id: usize,
    pub context_ids: Vec<usize>,
    pub source_ref: String,
}

/// A set of snippets over a shared vocabulary, time axis, and genre set.
///
/// Some time slices may hold no snippets at all; corpus gaps are legal.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub snippets: Vec<Snippet>,
    pub n_times: usize,
    pub n_genres: usize,
    pub genre_labels: Vec<String>,
    pub time_labels: Vec<String>,
}

impl Corpus {
    /// Snippet counts per (time slice, genre) cell.
    pub fn counts_per_cell(&self) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0usize; self.n_genres]; self.n_times];
        for s in &self.snippets {
            counts[s.time_slice][s.genre_id] += 1;
        }
        counts
    }

    /// Snippet counts per time slice.
    pub fn counts_per_slice(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_times];
        for s in &self.snippets {
            counts[s.time_slice] += 1;
        }
        counts
    }

    /// All genres merged into a single one. Snippet order, ids, and contexts
    /// are unchanged; only the genre dimension collapses.
    pub fn collapse_genres(&self) -> Corpus {
        if self.n_genres == 1 {
            return self.clone();
        }
        let snippets = self
            .snippets
            .iter()
            .map(|s| Snippet {
                genre_id: 0,
                ..s.clone()
            })
            .collect();
        Corpus {
            vocab: self.vocab.clone(),
            snippets,
            n_times: self.n_times,
            n_genres: 1,
            genre_labels: vec!["all".to_string()],
            time_labels: self.time_labels.clone(),
        }
    }

    /// The sub-corpus of one genre, itself a single-genre corpus sharing the
    /// vocabulary and time axis.
    pub fn filter_genre(&self, genre_id: usize) -> Corpus {
        let snippets = self
            .snippets
            .iter()
            .filter(|s| s.genre_id == genre_id)
            .map(|s| Snippet {
                genre_id: 0,
                ..s.clone()
            })
            .collect();
        Corpus {
            vocab: self.vocab.clone(),
            snippets,
            n_times: self.n_times,
            n_genres: 1,
            genre_labels: vec![self.genre_labels[genre_id].clone()],
            time_labels: self.time_labels.clone(),
        }
    }
}

/// Genre label remapping applied before genre ids are assigned.
///
/// Parsed from rules like `Narrative:narr,*:other`; `*` is the fallback for
/// labels with no explicit rule. Labels without a rule or fallback pass
/// through unchanged.
#[derive(Debug, Clone, Default)]
pub struct GenreMap {
    rules: HashMap<String, String>,
    fallback: Option<String>,
}

impl GenreMap {
    pub fn parse(spec: &str) -> Result<Self, CorpusError> {
        let mut rules = HashMap::new();
        let mut fallback = None;
        for rule in spec.split(',') {
            let rule = rule.trim();
            if rule.is_empty() {
                continue;
            }
            let (from, to) = rule
                .split_once(':')
                .ok_or_else(|| CorpusError::InvalidGenreMap(rule.to_string()))?;
            let (from, to) = (from.trim(), to.trim());
            if from.is_empty() || to.is_empty() {
                return Err(CorpusError::InvalidGenreMap(rule.to_string()));
            }
            if from == "*" {
                fallback = Some(to.to_string());
            } else {
                rules.insert(from.to_string(), to.to_string());
            }
        }
        Ok(Self { rules, fallback })
    }

    pub fn apply(&self, label: &str) -> String {
        if let Some(to) = self.rules.get(label) {
            to.clone()
        } else if let Some(fb) = &self.fallback {
            fb.clone()
        } else {
            label.to_string()
        }
    }
}

/// Options controlling corpus loading.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Window half-width `W`: up to `W` context lemmas on each side.
    pub window: usize,
    pub genre_map: Option<GenreMap>,
    /// Explicit time axis. When absent, observed labels are ordered
    /// numerically if they all parse as integers, lexicographically otherwise.
    pub time_labels: Option<Vec<String>>,
    /// Minimum context-word frequency for vocabulary inclusion.
    pub min_word_freq: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            window: 5,
            genre_map: None,
            time_labels: None,
            min_word_freq: 1,
        }
    }
}

/// Counts reported by [`load_corpus`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusLoadReport {
    pub n_documents: usize,
    pub n_occurrences: usize,
    pub n_snippets: usize,
    /// Occurrences dropped because no context word survived filtering.
    pub dropped_empty_snippets: usize,
    /// Context tokens dropped by the minimum-frequency filter.
    pub dropped_context_tokens: usize,
}

#[derive(Debug, Deserialize)]
struct DocRecord {
    #[serde(default)]
    doc_id: String,
    time_slice_label: String,
    genre_label: String,
    lemmas: Vec<String>,
}

struct RawSnippet {
    time_label: String,
    genre_label: String,
    context: Vec<String>,
    source_ref: String,
}

/// Extract the context window around every occurrence of `target` in `lemmas`.
fn extract_windows(lemmas: &[String], target: &str, window: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for (pos, lemma) in lemmas.iter().enumerate() {
        if lemma != target {
            continue;
        }
        let lo = pos.saturating_sub(window);
        let hi = (pos + window + 1).min(lemmas.len());
        let mut context = Vec::with_capacity(hi - lo - 1);
        for (i, w) in lemmas.iter().enumerate().take(hi).skip(lo) {
            if i != pos {
                context.push(w.clone());
            }
        }
        out.push(context);
    }
    out
}

fn order_time_labels(observed: &BTreeSet<String>) -> Vec<String> {
    let mut labels: Vec<String> = observed.iter().cloned().collect();
    let numeric: Option<Vec<i64>> = labels.iter().map(|l| l.parse::<i64>().ok()).collect();
    match numeric {
        Some(keys) => {
            let mut pairs: Vec<(i64, String)> = keys.into_iter().zip(labels).collect();
            pairs.sort();
            pairs.into_iter().map(|(_, l)| l).collect()
        }
        None => {
            labels.sort();
            labels
        }
    }
}

/// Load a JSON Lines corpus and extract snippets for one target lemma.
///
/// One snippet is produced per occurrence of `target`; overlapping windows
/// from nearby occurrences are permitted. The vocabulary is built from
/// context words only. Occurrences whose context is empty after frequency
/// filtering are dropped and counted in the report.
pub fn load_corpus<P: AsRef<Path>>(
    path: P,
    target: &str,
    opts: &LoadOptions,
) -> Result<(Corpus, CorpusLoadReport), CorpusError> {
    assert!(opts.window >= 1, "window half-width must be >= 1");
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);

    let mut report = CorpusLoadReport::default();
    let mut raw: Vec<RawSnippet> = Vec::new();
    let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
    let mut time_seen: BTreeSet<String> = BTreeSet::new();
    let mut genre_seen: BTreeSet<String> = BTreeSet::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        report.n_documents += 1;
        let genre = match &opts.genre_map {
            Some(map) => map.apply(&record.genre_label),
            None => record.genre_label.clone(),
        };
        if let Some(axis) = &opts.time_labels {
            if !axis.contains(&record.time_slice_label) {
                return Err(CorpusError::UnknownTimeLabel {
                    line: lineno + 1,
                    label: record.time_slice_label,
                });
            }
        }
        for context in extract_windows(&record.lemmas, target, opts.window) {
            report.n_occurrences += 1;
            for w in &context {
                *word_freq.entry(w.clone()).or_insert(0) += 1;
            }
            time_seen.insert(record.time_slice_label.clone());
            genre_seen.insert(genre.clone());
            raw.push(RawSnippet {
                time_label: record.time_slice_label.clone(),
                genre_label: genre.clone(),
                context,
                source_ref: record.doc_id.clone(),
            });
        }
    }

    if raw.is_empty() {
        return Err(CorpusError::NoOccurrences(target.to_string()));
    }

    let words: Vec<String> = word_freq
        .iter()
        .filter(|(_, &c)| c >= opts.min_word_freq)
        .map(|(w, _)| w.clone())
        .collect();
    let vocab = Vocabulary::from_words(words)?;

    let time_labels = match &opts.time_labels {
        Some(axis) => axis.clone(),
        None => order_time_labels(&time_seen),
    };
    let time_index: HashMap<&str, usize> = time_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let genre_labels: Vec<String> = genre_seen.into_iter().collect();
    let genre_index: HashMap<&str, usize> = genre_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut snippets = Vec::with_capacity(raw.len());
    for rs in &raw {
        let mut context_ids = Vec::with_capacity(rs.context.len());
        for w in &rs.context {
            match vocab.id(w) {
                Some(id) => context_ids.push(id),
                None => report.dropped_context_tokens += 1,
            }
        }
        if context_ids.is_empty() {
            report.dropped_empty_snippets += 1;
            continue;
        }
        snippets.push(Snippet {
            snippet_id: snippets.len(),
            time_slice: time_index[rs.time_label.as_str()],
            genre_id: genre_index[rs.genre_label.as_str()],
            context_ids,
            source_ref: rs.source_ref.clone(),
        });
    }
    if snippets.is_empty() {
        return Err(CorpusError::NoOccurrences(target.to_string()));
    }
    report.n_snippets = snippets.len();

    Ok((
        Corpus {
            vocab,
            snippets,
            n_times: time_labels.len(),
            n_genres: genre_labels.len(),
            genre_labels,
            time_labels,
        },
        report,
    ))
}

/// Disjoint uniform-random partition of the snippets into train and test.
///
/// Both halves share the vocabulary, time axis, and genre set. Deterministic
/// given the seed.
pub fn split_train_test(
    corpus: &Corpus,
    test_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::InvalidTestFraction(test_fraction));
    }
    let n = corpus.snippets.len();
    let n_test = (n as f64 * test_fraction).floor() as usize;
    if n == 0 || n - n_test == 0 {
        return Err(CorpusError::EmptyTrainSplit);
    }

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let test_set: HashSet<usize> = indices[..n_test].iter().copied().collect();

    let mut train = Vec::with_capacity(n - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (i, s) in corpus.snippets.iter().enumerate() {
        if test_set.contains(&i) {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    let make = |snippets: Vec<Snippet>| Corpus {
        vocab: corpus.vocab.clone(),
        snippets,
        n_times: corpus.n_times,
        n_genres: corpus.n_genres,
        genre_labels: corpus.genre_labels.clone(),
        time_labels: corpus.time_labels.clone(),
    };
    Ok((make(train), make(test)))
}

/// Which evidence the expert based an annotation on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationBasis {
    /// Judged purely from the lexical context window.
    Collocates,
    Other,
}

impl AnnotationBasis {
    fn parse(value: &str) -> Option<Self> {
        match value.trim().to_ascii_lowercase().as_str() {
            "collocates" => Some(Self::Collocates),
            "other" => Some(Self::Other),
            _ => None,
        }
    }
}

/// One expert-labelled occurrence of the target word.
#[derive(Debug, Clone)]
pub struct ExpertAnnotation {
    pub occurrence_id: usize,
    pub time_slice: usize,
    pub genre_label: String,
    pub sense_label: String,
    pub basis: AnnotationBasis,
    /// Context-window words mapped into the model vocabulary. Empty when the
    /// annotations were loaded without a vocabulary.
    pub context_ids: Vec<usize>,
}

/// Counts reported by [`load_annotations`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotationLoadReport {
    pub n_rows: usize,
    pub n_retained: usize,
    /// Rows with an empty sense label (occurrence annotated but unassigned).
    pub n_unassigned: usize,
    /// Rows dropped by the collocates-only filter.
    pub n_filtered_non_collocates: usize,
    /// Context tokens absent from the vocabulary.
    pub oov_context_tokens: usize,
}

/// The century label of a calendar year, e.g. -335 → `4BC`, 150 → `2AD`.
pub fn century_label(year: i64) -> String {
    if year < 0 {
        format!("{}BC", (-year + 99) / 100)
    } else {
        format!("{}AD", (year.max(1) + 99) / 100)
    }
}

/// Load expert annotations from CSV.
///
/// The `date` column may hold a calendar year (mapped to its century label)
/// or a time-slice label used verbatim; either must resolve against
/// `time_labels`. Rows with an empty sense label are skipped. With
/// `collocates_only`, rows whose basis is not `collocates` are dropped.
/// Context words absent from `vocab` are dropped and counted in the report;
/// passing no vocabulary leaves every `context_ids` empty.
pub fn load_annotations<P: AsRef<Path>>(
    path: P,
    vocab: Option<&Vocabulary>,
    collocates_only: bool,
    time_labels: &[String],
) -> Result<(Vec<ExpertAnnotation>, AnnotationLoadReport), CorpusError> {
    let mut file = File::open(path.as_ref())?;
    let mut buf = String::new();
    file.read_to_string(&mut buf)?;
    if buf.trim().is_empty() {
        return Ok((Vec::new(), AnnotationLoadReport::default()));
    }

    let time_index: HashMap<&str, usize> = time_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(buf.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| CorpusError::MissingColumn {
            line: 1,
            column: name.to_string(),
        })
    };
    let date_col = required("date")?;
    let genre_col = required("genre")?;
    let sense_col = required("sense_id")?;
    let basis_col = required("basis")?;
    let context_col = col("context");

    let mut report = AnnotationLoadReport::default();
    let mut annotations = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let lineno = i + 2; // header is line 1
        report.n_rows += 1;

        let field = |idx: usize, name: &str| {
            row.get(idx).ok_or_else(|| CorpusError::MissingColumn {
                line: lineno,
                column: name.to_string(),
            })
        };
        let sense_label = field(sense_col, "sense_id")?.to_string();
        if sense_label.is_empty() {
            report.n_unassigned += 1;
            continue;
        }
        let basis_raw = field(basis_col, "basis")?;
        let basis = AnnotationBasis::parse(basis_raw).ok_or_else(|| CorpusError::UnknownBasis {
            line: lineno,
            value: basis_raw.to_string(),
        })?;
        if collocates_only && basis != AnnotationBasis::Collocates {
            report.n_filtered_non_collocates += 1;
            continue;
        }

        let date_raw = field(date_col, "date")?;
        let label = match date_raw.parse::<i64>() {
            Ok(year) => century_label(year),
            Err(_) => date_raw.to_string(),
        };
        let time_slice =
            *time_index
                .get(label.as_str())
                .ok_or_else(|| CorpusError::UnknownTimeLabel {
                    line: lineno,
                    label: label.clone(),
                })?;

        let mut context_ids = Vec::new();
        if let (Some(ci), Some(vocab)) = (context_col, vocab) {
            for w in row.get(ci).unwrap_or("").split_whitespace() {
                match vocab.id(w) {
                    Some(id) => context_ids.push(id),
                    None => report.oov_context_tokens += 1,
                }
            }
        }

        annotations.push(ExpertAnnotation {
            occurrence_id: annotations.len(),
            time_slice,
            genre_label: field(genre_col, "genre")?.to_string(),
            sense_label,
            basis,
            context_ids,
        });
    }
    report.n_retained = annotations.len();
    Ok((annotations, report))
}

/// Per-sense and per-(sense, genre) frequency series over time slices.
///
/// Both series are normalized by the total number of annotated occurrences
/// at each slice, so restricting a sense to the genre it exclusively occurs
/// in leaves its series unchanged, and the per-sense series sum to one on
/// every slice with at least one annotation.
#[derive(Debug, Clone)]
pub struct SenseFrequencySeries {
    pub senses: Vec<String>,
    pub genres: Vec<String>,
    /// `f_sense[s][t]`
    pub f_sense: Vec<Vec<f64>>,
    /// `f_sense_genre[s][g][t]`
    pub f_sense_genre: Vec<Vec<Vec<f64>>>,
}

pub fn sense_frequency_series(
    annotations: &[ExpertAnnotation],
    n_times: usize,
) -> Result<SenseFrequencySeries, CorpusError> {
    if annotations.is_empty() {
        return Err(CorpusError::EmptyAnnotations);
    }
    let senses: Vec<String> = annotations
        .iter()
        .map(|a| a.sense_label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let genres: Vec<String> = annotations
        .iter()
        .map(|a| a.genre_label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let sense_idx: HashMap<&str, usize> = senses
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let genre_idx: HashMap<&str, usize> = genres
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i))
        .collect();

    let mut totals = vec![0usize; n_times];
    let mut counts = vec![vec![0usize; n_times]; senses.len()];
    let mut counts_g = vec![vec![vec![0usize; n_times]; genres.len()]; senses.len()];
    for a in annotations {
        assert!(a.time_slice < n_times, "annotation time slice out of range");
        let s = sense_idx[a.sense_label.as_str()];
        let g = genre_idx[a.genre_label.as_str()];
        totals[a.time_slice] += 1;
        counts[s][a.time_slice] += 1;
        counts_g[s][g][a.time_slice] += 1;
    }

    let norm = |c: usize, t: usize| {
        if totals[t] == 0 {
            0.0
        } else {
            c as f64 / totals[t] as f64
        }
    };
    let f_sense = counts
        .iter()
        .map(|row| (0..n_times).map(|t| norm(row[t], t)).collect())
        .collect();
    let f_sense_genre = counts_g
        .iter()
        .map(|per_g| {
            per_g
                .iter()
                .map(|row| (0..n_times).map(|t| norm(row[t], t)).collect())
                .collect()
        })
        .collect();

    Ok(SenseFrequencySeries {
        senses,
        genres,
        f_sense,
        f_sense_genre,
    })
}

/// Stop-word list: one lemma per line, blank lines ignored.
pub fn load_stopwords<P: AsRef<Path>>(path: P) -> Result<BTreeSet<String>, CorpusError> {
    let file = File::open(path.as_ref())?;
    let mut set = BTreeSet::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let w = line.trim();
        if !w.is_empty() {
            set.insert(w.to_string());
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn doc(id: &str, time: &str, genre: &str, lemmas: &[&str]) -> String {
        serde_json::json!({
            "doc_id": id,
            "time_slice_label": time,
            "genre_label": genre,
            "lemmas": lemmas,
        })
        .to_string()
    }

    #[test]
    fn window_truncates_at_document_boundaries() {
        let file = write_temp(&doc("d1", "t0", "g", &["a", "b", "tgt", "c", "d"]));
        let (corpus, report) = load_corpus(file.path(), "tgt", &LoadOptions::default()).unwrap();
        assert_eq!(corpus.snippets.len(), 1);
        assert_eq!(corpus.snippets[0].context_ids.len(), 4);
        assert_eq!(report.n_occurrences, 1);
        let words: Vec<&str> = corpus.snippets[0]
            .context_ids
            .iter()
            .map(|&id| corpus.vocab.word(id))
            .collect();
        assert_eq!(words, vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn interior_occurrence_yields_full_window() {
        let lemmas: Vec<String> = (0..5)
            .map(|i| format!("l{i}"))
            .chain(std::iter::once("tgt".to_string()))
            .chain((0..5).map(|i| format!("r{i}")))
            .collect();
        let refs: Vec<&str> = lemmas.iter().map(|s| s.as_str()).collect();
        let file = write_temp(&doc("d1", "t0", "g", &refs));
        let (corpus, _) = load_corpus(file.path(), "tgt", &LoadOptions::default()).unwrap();
        assert_eq!(corpus.snippets[0].context_ids.len(), 10);
    }

    #[test]
    fn genre_map_collapses_genres_without_touching_contexts() {
        let genres = [
            "Narrative", "Poetry", "Oratory", "Comedy", "Tragedy", "Essays", "Letters",
            "Religion", "Technical", "Philosophy",
        ];
        let mut lines = Vec::new();
        for (i, g) in genres.iter().enumerate() {
            lines.push(doc(&format!("d{i}"), "t0", g, &["a", "tgt", "b"]));
        }
        let content = lines.join("\n");
        let file = write_temp(&content);

        let plain = load_corpus(file.path(), "tgt", &LoadOptions::default())
            .unwrap()
            .0;
        assert_eq!(plain.n_genres, 10);

        let opts = LoadOptions {
            genre_map: Some(GenreMap::parse("Narrative:narr,*:other").unwrap()),
            ..LoadOptions::default()
        };
        let mapped = load_corpus(file.path(), "tgt", &opts).unwrap().0;
        assert_eq!(mapped.n_genres, 2);
        assert_eq!(mapped.genre_labels, vec!["narr", "other"]);
        assert_eq!(mapped.snippets.len(), plain.snippets.len());
        for (a, b) in plain.snippets.iter().zip(&mapped.snippets) {
            assert_eq!(a.context_ids, b.context_ids);
            assert_eq!(a.time_slice, b.time_slice);
        }
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let content = format!("{}\nnot json\n", doc("d1", "t0", "g", &["a", "tgt"]));
        let file = write_temp(&content);
        let err = load_corpus(file.path(), "tgt", &LoadOptions::default()).unwrap_err();
        match err {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn absent_target_is_an_error() {
        let file = write_temp(&doc("d1", "t0", "g", &["a", "b"]));
        let err = load_corpus(file.path(), "tgt", &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, CorpusError::NoOccurrences(_)));
    }

    #[test]
    fn multiple_occurrences_yield_multiple_snippets() {
        let file = write_temp(&doc("d1", "t0", "g", &["a", "tgt", "b", "tgt", "c"]));
        let (corpus, _) = load_corpus(file.path(), "tgt", &LoadOptions::default()).unwrap();
        assert_eq!(corpus.snippets.len(), 2);
        // The second occurrence sees the first target as an ordinary context word.
        let words: Vec<&str> = corpus.snippets[1]
            .context_ids
            .iter()
            .map(|&id| corpus.vocab.word(id))
            .collect();
        assert!(words.contains(&"tgt"));
    }

    #[test]
    fn explicit_time_axis_defines_ordering_and_gaps() {
        let content = [
            doc("d1", "5BC", "g", &["a", "tgt"]),
            doc("d2", "8BC", "g", &["b", "tgt"]),
        ]
        .join("\n");
        let file = write_temp(&content);
        let opts = LoadOptions {
            time_labels: Some(vec![
                "8BC".into(),
                "7BC".into(),
                "6BC".into(),
                "5BC".into(),
            ]),
            ..LoadOptions::default()
        };
        let (corpus, _) = load_corpus(file.path(), "tgt", &opts).unwrap();
        assert_eq!(corpus.n_times, 4);
        assert_eq!(corpus.snippets[0].time_slice, 3);
        assert_eq!(corpus.snippets[1].time_slice, 0);
        assert_eq!(corpus.counts_per_slice(), vec![1, 0, 0, 1]);
    }

    #[test]
    fn numeric_time_labels_sort_numerically() {
        let content = [
            doc("d1", "10", "g", &["a", "tgt"]),
            doc("d2", "2", "g", &["b", "tgt"]),
            doc("d3", "-3", "g", &["c", "tgt"]),
        ]
        .join("\n");
        let file = write_temp(&content);
        let (corpus, _) = load_corpus(file.path(), "tgt", &LoadOptions::default()).unwrap();
        assert_eq!(corpus.time_labels, vec!["-3", "2", "10"]);
    }

    #[test]
    fn min_word_freq_filters_vocabulary() {
        let content = [
            doc("d1", "t0", "g", &["rare", "tgt", "common"]),
            doc("d2", "t0", "g", &["common", "tgt", "common"]),
        ]
        .join("\n");
        let file = write_temp(&content);
        let opts = LoadOptions {
            min_word_freq: 2,
            ..LoadOptions::default()
        };
        let (corpus, report) = load_corpus(file.path(), "tgt", &opts).unwrap();
        assert_eq!(corpus.vocab.words(), ["common"]);
        assert_eq!(report.dropped_context_tokens, 1);
        assert_eq!(corpus.snippets.len(), 2);
    }

    #[test]
    fn split_is_reproducible_and_seed_sensitive() {
        let corpus = synthetic_corpus(100);
        let (train_a, test_a) = split_train_test(&corpus, 0.2, 7).unwrap();
        let (train_b, test_b) = split_train_test(&corpus, 0.2, 7).unwrap();
        assert_eq!(train_a.snippets.len(), 80);
        assert_eq!(test_a.snippets.len(), 20);
        let ids = |c: &Corpus| c.snippets.iter().map(|s| s.snippet_id).collect::<Vec<_>>();
        assert_eq!(ids(&train_a), ids(&train_b));
        assert_eq!(ids(&test_a), ids(&test_b));

        let (train_c, test_c) = split_train_test(&corpus, 0.2, 8).unwrap();
        assert_eq!(train_c.snippets.len(), 80);
        assert_ne!(ids(&test_a), ids(&test_c));
    }

    #[test]
    fn split_two_snippets_in_half() {
        let corpus = synthetic_corpus(2);
        let (train, test) = split_train_test(&corpus, 0.5, 1).unwrap();
        assert_eq!(train.snippets.len(), 1);
        assert_eq!(test.snippets.len(), 1);
    }

    fn synthetic_corpus(n: usize) -> Corpus {
        let vocab = Vocabulary::from_words(vec!["a".into(), "b".into()]).unwrap();
        let snippets = (0..n)
            .map(|i| Snippet {
                snippet_id: i,
                time_slice: i % 3,
                genre_id: i % 2,
                context_ids: vec![i % 2],
                source_ref: format!("d{i}"),
            })
            .collect();
        Corpus {
            vocab,
            snippets,
            n_times: 3,
            n_genres: 2,
            genre_labels: vec!["g0".into(), "g1".into()],
            time_labels: vec!["t0".into(), "t1".into(), "t2".into()],
        }
    }

    proptest! {
        #[test]
        fn split_partitions_snippets(n in 2usize..60, frac in 0.05f64..0.95, seed in 0u64..1000) {
            let corpus = synthetic_corpus(n);
            let (train, test) = split_train_test(&corpus, frac, seed).unwrap();
            let mut ids: Vec<usize> = train.snippets.iter().chain(&test.snippets)
                .map(|s| s.snippet_id).collect();
            ids.sort();
            prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
            prop_assert!(!train.snippets.is_empty());
        }

        #[test]
        fn windows_stay_within_w_of_an_occurrence(
            words in proptest::collection::vec(0usize..4, 1..40),
            w in 1usize..6,
        ) {
            let names = ["a", "b", "c", "tgt"];
            let lemmas: Vec<String> = words.iter().map(|&i| names[i].to_string()).collect();
            let positions: Vec<usize> = lemmas.iter().enumerate()
                .filter(|(_, l)| *l == "tgt").map(|(i, _)| i).collect();
            prop_assume!(!positions.is_empty());
            let windows = extract_windows(&lemmas, "tgt", w);
            prop_assert_eq!(windows.len(), positions.len());
            for (ctx, &pos) in windows.iter().zip(&positions) {
                prop_assert!(ctx.len() <= 2 * w);
                for word in ctx {
                    // Every context word occurs within w positions of the occurrence.
                    let near = lemmas.iter().enumerate().any(|(i, l)| {
                        l == word && i != pos && i.abs_diff(pos) <= w
                    });
                    prop_assert!(near);
                }
            }
        }
    }

    const ANNOTATION_HEADER: &str = "date,genre,author,work,target,sense_id,basis,context";

    #[test]
    fn kosmos_style_record_loads() {
        let content = format!(
            "{ANNOTATION_HEADER}\n-335,Technical,Aristotle,De Mundo,kosmos,kosmos:world,collocates,ouranos sphairoeides\n"
        );
        let file = write_temp(&content);
        let vocab = Vocabulary::from_words(vec!["ouranos".into(), "gaia".into()]).unwrap();
        let labels: Vec<String> = vec!["4BC".into(), "3BC".into()];
        let (anns, report) =
            load_annotations(file.path(), Some(&vocab), true, &labels).unwrap();
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].sense_label, "kosmos:world");
        assert_eq!(anns[0].time_slice, 0);
        assert_eq!(anns[0].genre_label, "Technical");
        assert_eq!(anns[0].context_ids, vec![0]);
        assert_eq!(report.oov_context_tokens, 1);
    }

    #[test]
    fn collocates_filter_drops_other_bases() {
        let mut content = String::from(ANNOTATION_HEADER);
        for i in 0..5 {
            let basis = if i < 3 { "collocates" } else { "other" };
            content.push_str(&format!("\nt0,Narrative,A,W,mus,mus:mouse,{basis},a b"));
        }
        let file = write_temp(&content);
        let labels: Vec<String> = vec!["t0".into()];
        let (all, _) = load_annotations(file.path(), None, false, &labels).unwrap();
        assert_eq!(all.len(), 5);
        let (colloc, report) = load_annotations(file.path(), None, true, &labels).unwrap();
        assert_eq!(colloc.len(), 3);
        assert_eq!(report.n_filtered_non_collocates, 2);
    }

    #[test]
    fn empty_annotation_file_is_empty_list() {
        let file = write_temp("");
        let labels: Vec<String> = vec!["t0".into()];
        let (anns, _) = load_annotations(file.path(), None, true, &labels).unwrap();
        assert!(anns.is_empty());
    }

    #[test]
    fn unknown_basis_is_an_error() {
        let content = format!("{ANNOTATION_HEADER}\nt0,Narrative,A,W,mus,mus:mouse,hearsay,a");
        let file = write_temp(&content);
        let labels: Vec<String> = vec!["t0".into()];
        let err = load_annotations(file.path(), None, false, &labels).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownBasis { line: 2, .. }));
    }

    #[test]
    fn unassigned_senses_are_skipped() {
        let content = format!(
            "{ANNOTATION_HEADER}\nt0,Narrative,A,W,mus,,collocates,a\nt0,Narrative,A,W,mus,mus:mouse,collocates,a"
        );
        let file = write_temp(&content);
        let labels: Vec<String> = vec!["t0".into()];
        let (anns, report) = load_annotations(file.path(), None, false, &labels).unwrap();
        assert_eq!(anns.len(), 1);
        assert_eq!(report.n_unassigned, 1);
    }

    #[test]
    fn century_labels() {
        assert_eq!(century_label(-335), "4BC");
        assert_eq!(century_label(-800), "8BC");
        assert_eq!(century_label(-1), "1BC");
        assert_eq!(century_label(1), "1AD");
        assert_eq!(century_label(150), "2AD");
        assert_eq!(century_label(500), "5AD");
    }

    fn ann(t: usize, genre: &str, sense: &str) -> ExpertAnnotation {
        ExpertAnnotation {
            occurrence_id: 0,
            time_slice: t,
            genre_label: genre.into(),
            sense_label: sense.into(),
            basis: AnnotationBasis::Collocates,
            context_ids: vec![],
        }
    }

    #[test]
    fn single_annotation_frequency() {
        let series = sense_frequency_series(&[ann(0, "g", "s")], 3).unwrap();
        assert_eq!(series.f_sense[0], vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn three_to_one_split_frequency() {
        let anns = vec![
            ann(0, "g", "s1"),
            ann(0, "g", "s1"),
            ann(0, "g", "s1"),
            ann(0, "g", "s2"),
        ];
        let series = sense_frequency_series(&anns, 1).unwrap();
        assert_eq!(series.f_sense[0], vec![0.75]);
        assert_eq!(series.f_sense[1], vec![0.25]);
    }

    #[test]
    fn genre_restriction_identity() {
        // s1 occurs only in Technical; its per-genre series equals f(s).
        let anns = vec![
            ann(0, "Technical", "s1"),
            ann(0, "Narrative", "s2"),
            ann(1, "Technical", "s1"),
            ann(1, "Technical", "s1"),
            ann(1, "Narrative", "s2"),
        ];
        let series = sense_frequency_series(&anns, 2).unwrap();
        let s1 = series.senses.iter().position(|s| s == "s1").unwrap();
        let tech = series.genres.iter().position(|g| g == "Technical").unwrap();
        assert_eq!(series.f_sense[s1], series.f_sense_genre[s1][tech]);
    }

    #[test]
    fn frequencies_sum_to_one_per_populated_slice() {
        let anns = vec![
            ann(0, "a", "x"),
            ann(0, "b", "y"),
            ann(2, "a", "y"),
            ann(2, "b", "z"),
            ann(2, "a", "z"),
        ];
        let series = sense_frequency_series(&anns, 4).unwrap();
        for t in [0usize, 2] {
            let total: f64 = series.f_sense.iter().map(|row| row[t]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        for t in [1usize, 3] {
            let total: f64 = series.f_sense.iter().map(|row| row[t]).sum();
            assert_eq!(total, 0.0);
        }
    }
}
