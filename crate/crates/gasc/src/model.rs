//! Model parameter space, forward simulation, and snippet likelihoods.
//!
//! Senses live on the unconstrained real scale: `phi[t][g]` holds the
//! per-genre sense weights and `psi[t][k]` the per-sense word weights, both
//! mapped to probabilities through a softmax. Across time slices each
//! coordinate follows a first-order Gaussian random walk parameterized by
//! precision: increments of the sense chains have inferred precision
//! `k_phi`, word-chain increments have the fixed precision
//! `word_precision`, and the first slice is anchored by a proper
//! `N(0, precision = CHAIN_ANCHOR_PRECISION)` term. Interior full
//! conditionals therefore have mean `(prev + next) / 2` and twice the
//! increment precision.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Snippet, Vocabulary};

/// Precision of the Gaussian anchor on the first time slice of every chain.
pub const CHAIN_ANCHOR_PRECISION: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("simulation requires at least one snippet")]
    NoSnippets,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Named hyperparameter combinations for the chain precisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Setting1,
    Setting2,
    Setting3,
    Custom,
}

impl Preset {
    /// `(precision_shape, precision_rate, word_precision)` for named presets.
    pub fn hyperparameters(self) -> Option<(f64, f64, f64)> {
        match self {
            Preset::Setting1 => Some((7.0, 3.0, 10.0)),
            Preset::Setting2 => Some((7.0, 3.0, 100.0)),
            Preset::Setting3 => Some((1.0, 1.0, 100.0)),
            Preset::Custom => None,
        }
    }

    /// The preset matching the given hyperparameters exactly, if any.
    pub fn classify(shape: f64, rate: f64, word_precision: f64) -> Preset {
        for preset in [Preset::Setting1, Preset::Setting2, Preset::Setting3] {
            if preset.hyperparameters() == Some((shape, rate, word_precision)) {
                return preset;
            }
        }
        Preset::Custom
    }

    pub fn from_number(n: u32) -> Option<Preset> {
        match n {
            1 => Some(Preset::Setting1),
            2 => Some(Preset::Setting2),
            3 => Some(Preset::Setting3),
            _ => None,
        }
    }
}

/// Full configuration of one model fit or simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of senses `K`.
    pub n_senses: usize,
    /// Context window half-width `W`.
    pub window: usize,
    /// Gamma prior shape for the sense-chain precision.
    pub precision_shape: f64,
    /// Gamma prior rate for the sense-chain precision.
    pub precision_rate: f64,
    /// Fixed precision of the word-chain increments.
    pub word_precision: f64,
    pub n_times: usize,
    pub n_genres: usize,
    pub vocab_size: usize,
    pub n_iterations: usize,
    pub n_retain: usize,
    pub seed: u64,
    pub preset: Preset,
}

impl Default for ModelConfig {
    fn default() -> Self {
        // Setting 3 is the default hyperparameter combination.
        let (shape, rate, word_precision) = Preset::Setting3.hyperparameters().unwrap();
        Self {
            n_senses: 10,
            window: 5,
            precision_shape: shape,
            precision_rate: rate,
            word_precision,
            n_times: 0,
            n_genres: 0,
            vocab_size: 0,
            n_iterations: 1000,
            n_retain: 10,
            seed: 0,
            preset: Preset::Setting3,
        }
    }
}

impl ModelConfig {
    /// Apply a named preset's hyperparameters.
    pub fn apply_preset(&mut self, preset: Preset) {
        if let Some((shape, rate, word_precision)) = preset.hyperparameters() {
            self.precision_shape = shape;
            self.precision_rate = rate;
            self.word_precision = word_precision;
        }
        self.reclassify_preset();
    }

    /// Keep the `preset` field consistent with the hyperparameter values.
    pub fn reclassify_preset(&mut self) {
        self.preset = Preset::classify(
            self.precision_shape,
            self.precision_rate,
            self.word_precision,
        );
    }

    /// Copy with dimensions bound from a corpus.
    pub fn for_corpus(&self, corpus: &Corpus) -> ModelConfig {
        ModelConfig {
            n_times: corpus.n_times,
            n_genres: corpus.n_genres,
            vocab_size: corpus.vocab.len(),
            ..self.clone()
        }
    }

    /// Prior mean of the sense-chain precision, used for initialization.
    pub fn prior_mean_precision(&self) -> f64 {
        self.precision_shape / self.precision_rate
    }

    /// Structural validation shared by simulation and fitting.
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.n_senses < 1 {
            return fail("n_senses must be >= 1");
        }
        if self.window < 1 {
            return fail("window must be >= 1");
        }
        if !(self.precision_shape > 0.0 && self.precision_rate > 0.0) {
            return fail("precision_shape and precision_rate must be > 0");
        }
        if !(self.word_precision > 0.0) {
            return fail("word_precision must be > 0");
        }
        if self.n_times < 1 || self.n_genres < 1 || self.vocab_size < 1 {
            return fail("dimensions must all be >= 1");
        }
        if self.n_retain > self.n_iterations {
            return fail("n_retain must be <= n_iterations");
        }
        if Preset::classify(
            self.precision_shape,
            self.precision_rate,
            self.word_precision,
        ) != self.preset
        {
            return fail("preset label inconsistent with hyperparameter values");
        }
        Ok(())
    }

    /// Validation for inference runs, which need a genuine mixture.
    pub fn validate_for_fit(&self) -> Result<(), ModelError> {
        self.validate()?;
        if self.n_senses < 2 {
            return Err(ModelError::InvalidConfig(
                "fitting requires n_senses >= 2".to_string(),
            ));
        }
        if self.n_retain == 0 {
            return Err(ModelError::InvalidConfig(
                "fitting requires n_retain >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Unconstrained chain parameters, sense assignments, and the inferred
/// sense-chain precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    /// `phi[t][g][k]`: sense weights per (time, genre).
    pub phi: Vec<Vec<Vec<f64>>>,
    /// `psi[t][k][v]`: word weights per (time, sense).
    pub psi: Vec<Vec<Vec<f64>>>,
    /// Sense assignment per snippet; empty when assignments were not kept.
    pub z: Vec<usize>,
    /// Inferred precision of the sense-chain increments.
    pub k_phi: f64,
}

impl ModelState {
    pub fn zeros(n_times: usize, n_genres: usize, n_senses: usize, vocab_size: usize) -> Self {
        Self {
            phi: vec![vec![vec![0.0; n_senses]; n_genres]; n_times],
            psi: vec![vec![vec![0.0; vocab_size]; n_senses]; n_times],
            z: Vec::new(),
            k_phi: 1.0,
        }
    }

    pub fn n_times(&self) -> usize {
        self.phi.len()
    }

    pub fn n_genres(&self) -> usize {
        self.phi[0].len()
    }

    pub fn n_senses(&self) -> usize {
        self.phi[0][0].len()
    }

    pub fn vocab_size(&self) -> usize {
        self.psi[0][0].len()
    }

    /// Genre index used for a snippet: single-genre states accept snippets
    /// from any genre (the genre-free baseline contract).
    pub fn effective_genre(&self, genre_id: usize) -> usize {
        if self.n_genres() == 1 {
            0
        } else {
            genre_id
        }
    }

    pub fn is_finite(&self) -> bool {
        self.k_phi.is_finite()
            && self.k_phi > 0.0
            && self
                .phi
                .iter()
                .flatten()
                .flatten()
                .chain(self.psi.iter().flatten().flatten())
                .all(|v| v.is_finite())
    }

    /// Sum over chains of squared increments between consecutive slices.
    pub fn phi_increment_sq_sum(&self) -> f64 {
        increment_sq_sum(&self.phi)
    }

    pub fn psi_increment_sq_sum(&self) -> f64 {
        increment_sq_sum(&self.psi)
    }
}

fn increment_sq_sum(chain: &[Vec<Vec<f64>>]) -> f64 {
    let mut total = 0.0;
    for t in 1..chain.len() {
        for (row, prev_row) in chain[t].iter().zip(&chain[t - 1]) {
            for (x, p) in row.iter().zip(prev_row) {
                total += (x - p) * (x - p);
            }
        }
    }
    total
}

/// Model variant selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Genre-conditioned model.
    Gasc,
    /// Genre-free baseline: all snippets collapsed into a single genre.
    Scan,
    /// One fully independent model per genre partition.
    GascIndependent,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "gasc" => Some(Variant::Gasc),
            "scan" => Some(Variant::Scan),
            "gasc-independent" => Some(Variant::GascIndependent),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Gasc => "gasc",
            Variant::Scan => "scan",
            Variant::GascIndependent => "gasc-independent",
        };
        f.write_str(s)
    }
}

/// Retained posterior samples from one fit, with the configuration that
/// produced them and the per-cell training snippet counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<ModelState>,
    pub config: ModelConfig,
    pub variant: Variant,
    /// `snippet_counts[t][g]` on the corpus the fit used.
    pub snippet_counts: Vec<Vec<usize>>,
}

impl SampleSet {
    pub fn counts_per_slice(&self) -> Vec<usize> {
        self.snippet_counts
            .iter()
            .map(|row| row.iter().sum())
            .collect()
    }
}

/// Numerically stable log-sum-exp.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax with max-subtraction; safe for inputs with magnitude up to 700.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    assert!(!values.is_empty(), "softmax of empty vector");
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub fn log_softmax(values: &[f64]) -> Vec<f64> {
    let norm = log_sum_exp(values);
    values.iter().map(|v| v - norm).collect()
}

/// Mean and precision of the Gaussian full conditional of one chain
/// coordinate given its temporal neighbours.
///
/// `increment_precision` is the chain's increment precision; the first
/// slice additionally carries the anchor term.
pub fn chain_conditional(
    prev: Option<f64>,
    next: Option<f64>,
    increment_precision: f64,
) -> (f64, f64) {
    let k = increment_precision;
    match (prev, next) {
        (None, None) => (0.0, CHAIN_ANCHOR_PRECISION),
        (None, Some(next)) => {
            let prec = CHAIN_ANCHOR_PRECISION + k;
            (k * next / prec, prec)
        }
        (Some(prev), Some(next)) => (0.5 * (prev + next), 2.0 * k),
        (Some(prev), None) => (prev, k),
    }
}

/// Draw an entire `[T]`-chain of vectors, coordinate-wise random walk.
fn sample_chain<R: Rng>(
    n_times: usize,
    width: usize,
    increment_precision: f64,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let anchor_sd = 1.0 / CHAIN_ANCHOR_PRECISION.sqrt();
    let step_sd = 1.0 / increment_precision.sqrt();
    let mut chain = vec![vec![0.0; width]; n_times];
    for j in 0..width {
        let mut x: f64 = anchor_sd * rng.sample::<f64, _>(StandardNormal);
        chain[0][j] = x;
        for row in chain.iter_mut().take(n_times).skip(1) {
            x += step_sd * rng.sample::<f64, _>(StandardNormal);
            row[j] = x;
        }
    }
    chain
}

/// Draw `(k_phi, phi, psi)` from the prior. Assignments are left empty.
pub fn sample_prior_state<R: Rng>(config: &ModelConfig, rng: &mut R) -> ModelState {
    let gamma = Gamma::new(config.precision_shape, 1.0 / config.precision_rate)
        .expect("valid Gamma hyperparameters");
    let k_phi = gamma.sample(rng);
    let mut state = ModelState::zeros(
        config.n_times,
        config.n_genres,
        config.n_senses,
        config.vocab_size,
    );
    state.k_phi = k_phi;
    for g in 0..config.n_genres {
        let chain = sample_chain(config.n_times, config.n_senses, k_phi, rng);
        for (t, row) in chain.into_iter().enumerate() {
            state.phi[t][g] = row;
        }
    }
    for k in 0..config.n_senses {
        let chain = sample_chain(
            config.n_times,
            config.vocab_size,
            config.word_precision,
            rng,
        );
        for (t, row) in chain.into_iter().enumerate() {
            state.psi[t][k] = row;
        }
    }
    state
}

/// Draw one sense assignment and its words for a snippet at `(t, g)`.
fn draw_snippet<R: Rng>(
    state: &ModelState,
    t: usize,
    g: usize,
    len: usize,
    rng: &mut R,
) -> (usize, Vec<usize>) {
    let sense_probs = softmax(&state.phi[t][g]);
    let z = sample_categorical(&sense_probs, rng);
    let word_probs = softmax(&state.psi[t][z]);
    let words = (0..len).map(|_| sample_categorical(&word_probs, rng)).collect();
    (z, words)
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn padded_labels(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

/// Synthetic vocabulary `w000..` sized to the configured dimension.
pub fn synthetic_vocab(vocab_size: usize) -> Vocabulary {
    Vocabulary::from_words(padded_labels("w", vocab_size)).expect("non-empty synthetic vocab")
}

/// Generate a corpus from a given ground-truth state.
///
/// `snippets_per_cell[t][g]` gives the number of snippets per cell; each
/// snippet draws a sense from `softmax(phi[t][g])` and `snippet_len` words
/// i.i.d. from the sense's word distribution. The returned state carries the
/// drawn assignments.
pub fn simulate_from_state<R: Rng>(
    state: &ModelState,
    snippets_per_cell: &[Vec<usize>],
    snippet_len: usize,
    rng: &mut R,
) -> Result<(Corpus, ModelState), ModelError> {
    let n_times = state.n_times();
    let n_genres = state.n_genres();
    if snippets_per_cell.len() != n_times
        || snippets_per_cell.iter().any(|row| row.len() != n_genres)
    {
        return Err(ModelError::DimensionMismatch(
            "snippets_per_cell must be [n_times][n_genres]".to_string(),
        ));
    }
    let total: usize = snippets_per_cell.iter().flatten().sum();
    if total == 0 {
        return Err(ModelError::NoSnippets);
    }

    let mut truth = state.clone();
    truth.z = Vec::with_capacity(total);
    let mut snippets = Vec::with_capacity(total);
    for (t, row) in snippets_per_cell.iter().enumerate() {
        for (g, &count) in row.iter().enumerate() {
            for _ in 0..count {
                let (z, words) = draw_snippet(state, t, g, snippet_len, rng);
                truth.z.push(z);
                snippets.push(Snippet {
                    snippet_id: snippets.len(),
                    time_slice: t,
                    genre_id: g,
                    context_ids: words,
                    source_ref: format!("sim-{}", snippets.len()),
                });
            }
        }
    }

    let corpus = Corpus {
        vocab: synthetic_vocab(state.vocab_size()),
        snippets,
        n_times,
        n_genres,
        genre_labels: padded_labels("g", n_genres),
        time_labels: padded_labels("t", n_times),
    };
    Ok((corpus, truth))
}

/// Forward simulation: draw a state from the prior, then a corpus from it.
/// Deterministic given `config.seed`.
pub fn simulate(
    config: &ModelConfig,
    snippets_per_cell: &[Vec<usize>],
    snippet_len: usize,
) -> Result<(Corpus, ModelState), ModelError> {
    config.validate()?;
    if snippet_len == 0 || snippet_len > 2 * config.window {
        return Err(ModelError::InvalidConfig(format!(
            "snippet_len {snippet_len} outside [1, 2W]"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let state = sample_prior_state(config, &mut rng);
    simulate_from_state(&state, snippets_per_cell, snippet_len, &mut rng)
}

/// Cached log-softmax tables for one state, for repeated likelihood queries.
pub struct StateLikelihood<'a> {
    state: &'a ModelState,
    /// `log softmax(phi[t][g])`.
    log_phi: Vec<Vec<Vec<f64>>>,
    /// Log-normalizer of `psi[t][k]`.
    psi_log_norm: Vec<Vec<f64>>,
}

impl<'a> StateLikelihood<'a> {
    pub fn new(state: &'a ModelState) -> Self {
        let log_phi = state
            .phi
            .iter()
            .map(|per_g| per_g.iter().map(|row| log_softmax(row)).collect())
            .collect();
        let psi_log_norm = state
            .psi
            .iter()
            .map(|per_k| per_k.iter().map(|row| log_sum_exp(row)).collect())
            .collect();
        Self {
            state,
            log_phi,
            psi_log_norm,
        }
    }

    /// Per-sense log scores `log phi_k + sum_w log psi_k(w)` for a snippet.
    pub fn sense_log_scores(&self, snippet: &Snippet) -> Vec<f64> {
        let t = snippet.time_slice;
        let g = self.state.effective_genre(snippet.genre_id);
        let n_senses = self.state.n_senses();
        let mut scores = Vec::with_capacity(n_senses);
        for k in 0..n_senses {
            let psi_row = &self.state.psi[t][k];
            let mut s = self.log_phi[t][g][k];
            for &w in &snippet.context_ids {
                s += psi_row[w];
            }
            s -= snippet.context_ids.len() as f64 * self.psi_log_norm[t][k];
            scores.push(s);
        }
        scores
    }

    /// `log sum_k softmax(phi)_k prod_w softmax(psi_k)_w`, in log space.
    pub fn snippet_log_likelihood(&self, snippet: &Snippet) -> f64 {
        log_sum_exp(&self.sense_log_scores(snippet))
    }

    /// Conditional assignment posterior `p(z = k | phi, psi, words)`.
    pub fn assignment_posterior(&self, snippet: &Snippet) -> Vec<f64> {
        let scores = self.sense_log_scores(snippet);
        let norm = log_sum_exp(&scores);
        scores.iter().map(|s| (s - norm).exp()).collect()
    }
}

/// Marginal log-likelihood of one snippet under one state.
pub fn snippet_log_likelihood(state: &ModelState, snippet: &Snippet) -> f64 {
    StateLikelihood::new(state).snippet_log_likelihood(snippet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softmax_is_uniform_on_constant_input() {
        let out = softmax(&[0.0, 0.0, 0.0]);
        for p in out {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form_two_components() {
        let out = softmax(&[1.0, 0.0]);
        let e = 1.0f64.exp();
        assert_abs_diff_eq!(out[0], e / (1.0 + e), epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 1.0 / (1.0 + e), epsilon = 1e-12);
        // Published reference values to 8 decimals.
        assert_abs_diff_eq!(out[0], 0.73105858, epsilon = 1e-8);
        assert_abs_diff_eq!(out[1], 0.26894142, epsilon = 1e-8);
    }

    #[test]
    fn softmax_survives_large_magnitudes() {
        let out = softmax(&[700.0, -700.0, 0.0]);
        assert!(out.iter().all(|p| p.is_finite() && *p >= 0.0));
        assert_abs_diff_eq!(out.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(v in proptest::collection::vec(-700.0f64..700.0, 1..12)) {
            let out = softmax(&v);
            let sum: f64 = out.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(out.iter().all(|p| p.is_finite() && *p >= 0.0));
        }

        #[test]
        fn softmax_is_strictly_positive_within_exp_range(
            v in proptest::collection::vec(-350.0f64..350.0, 1..12),
        ) {
            // Spreads beyond ~745 underflow to exact zero in f64; within
            // half the safe magnitude every entry stays positive.
            let out = softmax(&v);
            prop_assert!(out.iter().all(|p| *p > 0.0));
        }

        #[test]
        fn softmax_is_shift_invariant(
            v in proptest::collection::vec(-50.0f64..50.0, 1..8),
            c in -100.0f64..100.0,
        ) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = softmax(&v);
            let b = softmax(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }

    fn tiny_state() -> ModelState {
        // T=1, G=1, K=2, V=3 with hand-set weights.
        let mut state = ModelState::zeros(1, 1, 2, 3);
        state.phi[0][0] = vec![0.4, -0.3];
        state.psi[0][0] = vec![1.0, 0.2, -0.5];
        state.psi[0][1] = vec![-0.8, 0.1, 0.9];
        state
    }

    fn snippet(t: usize, g: usize, words: Vec<usize>) -> Snippet {
        Snippet {
            snippet_id: 0,
            time_slice: t,
            genre_id: g,
            context_ids: words,
            source_ref: String::new(),
        }
    }

    #[test]
    fn likelihood_uniform_words_collapse_to_vocab_size() {
        // psi identical across senses and uniform: p(word) = 1/V regardless of phi.
        let mut state = ModelState::zeros(1, 1, 3, 4);
        state.phi[0][0] = vec![0.7, -1.2, 0.3];
        let s = snippet(0, 0, vec![0, 2, 3]);
        let ll = snippet_log_likelihood(&state, &s);
        assert_abs_diff_eq!(ll, 3.0 * (1.0f64 / 4.0).ln(), epsilon = 1e-12);
    }

    #[test]
    fn likelihood_single_sense_is_word_product() {
        let mut state = ModelState::zeros(1, 1, 1, 3);
        state.phi[0][0] = vec![2.5];
        state.psi[0][0] = vec![1.0, 0.0, -1.0];
        let s = snippet(0, 0, vec![0, 1]);
        let log_words = log_softmax(&state.psi[0][0]);
        let expected = log_words[0] + log_words[1];
        assert_abs_diff_eq!(snippet_log_likelihood(&state, &s), expected, epsilon = 1e-12);
    }

    #[test]
    fn likelihood_matches_direct_enumeration() {
        // Brute-force oracle: direct probability-space mixture sum.
        let state = tiny_state();
        let s = snippet(0, 0, vec![0, 2]);
        let sense_probs = softmax(&state.phi[0][0]);
        let mut total = 0.0;
        for k in 0..2 {
            let word_probs = softmax(&state.psi[0][k]);
            total += sense_probs[k] * word_probs[0] * word_probs[2];
        }
        assert_abs_diff_eq!(
            snippet_log_likelihood(&state, &s),
            total.ln(),
            epsilon = 1e-12
        );
    }

    proptest! {
        #[test]
        fn likelihood_is_invariant_to_row_shifts(
            shift_phi in -30.0f64..30.0,
            shift_psi in -30.0f64..30.0,
        ) {
            let state = tiny_state();
            let s = snippet(0, 0, vec![0, 1, 2]);
            let base = snippet_log_likelihood(&state, &s);
            let mut shifted = state.clone();
            for v in &mut shifted.phi[0][0] { *v += shift_phi; }
            for v in &mut shifted.psi[0][1] { *v += shift_psi; }
            let moved = snippet_log_likelihood(&shifted, &s);
            prop_assert!((base - moved).abs() < 1e-9);
        }
    }

    fn test_config(t: usize, g: usize, k: usize, v: usize, seed: u64) -> ModelConfig {
        let mut config = ModelConfig {
            n_senses: k,
            n_times: t,
            n_genres: g,
            vocab_size: v,
            seed,
            ..ModelConfig::default()
        };
        config.reclassify_preset();
        config
    }

    #[test]
    fn simulate_is_deterministic_and_shaped() {
        let config = test_config(3, 2, 3, 8, 42);
        let counts = vec![vec![4usize, 2]; 3];
        let (corpus_a, truth_a) = simulate(&config, &counts, 6).unwrap();
        let (corpus_b, truth_b) = simulate(&config, &counts, 6).unwrap();
        assert_eq!(truth_a, truth_b);
        assert_eq!(corpus_a.snippets.len(), 18);
        assert_eq!(corpus_b.snippets.len(), 18);
        assert_eq!(corpus_a.snippets, corpus_b.snippets);
        assert_eq!(truth_a.z.len(), 18);
        assert!(corpus_a
            .snippets
            .iter()
            .all(|s| s.context_ids.len() == 6 && s.context_ids.iter().all(|&w| w < 8)));
    }

    #[test]
    fn simulate_with_one_sense_is_degenerate() {
        let config = test_config(2, 1, 1, 5, 7);
        let counts = vec![vec![10usize]; 2];
        let (_, truth) = simulate(&config, &counts, 4).unwrap();
        assert!(truth.z.iter().all(|&z| z == 0));
    }

    #[test]
    fn simulate_rejects_empty_layout() {
        let config = test_config(2, 1, 2, 5, 7);
        let counts = vec![vec![0usize]; 2];
        assert!(matches!(
            simulate(&config, &counts, 4),
            Err(ModelError::NoSnippets)
        ));
    }

    #[test]
    fn simulated_sense_frequencies_match_softmax_phi() {
        // Monte-Carlo oracle: at 1e5 draws from one cell, empirical sense
        // frequencies land within TV 0.02 of softmax(phi).
        let config = test_config(1, 1, 3, 5, 11);
        let mut state = ModelState::zeros(1, 1, 3, 5);
        state.phi[0][0] = vec![1.2, 0.0, -0.7];
        let counts = vec![vec![100_000usize]];
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let (_, truth) = simulate_from_state(&state, &counts, 2, &mut rng).unwrap();
        let probs = softmax(&state.phi[0][0]);
        let mut freq = [0.0f64; 3];
        for &z in &truth.z {
            freq[z] += 1.0;
        }
        let n = truth.z.len() as f64;
        let tv: f64 = 0.5
            * probs
                .iter()
                .enumerate()
                .map(|(k, p)| (freq[k] / n - p).abs())
                .sum::<f64>();
        assert!(tv < 0.02, "tv = {tv}");
    }

    #[test]
    fn higher_word_precision_means_smaller_increments() {
        // Monte-Carlo over repeated chains: mean increment norm strictly
        // smaller under precision 100 than under precision 10.
        let mean_increment = |precision: f64, seed: u64| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut total = 0.0;
            let n_chains = 200;
            for _ in 0..n_chains {
                let chain = sample_chain(4, 10, precision, &mut rng);
                for t in 1..4 {
                    let norm_sq: f64 = chain[t]
                        .iter()
                        .zip(&chain[t - 1])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    total += norm_sq.sqrt();
                }
            }
            total / (n_chains as f64 * 3.0)
        };
        let loose = mean_increment(10.0, 13);
        let tight = mean_increment(100.0, 13);
        assert!(
            tight < loose,
            "expected tighter chains under higher precision: {tight} vs {loose}"
        );
        // Increment variance should scale roughly like 1/precision.
        let ratio = loose / tight;
        assert!((2.0..5.0).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn preset_expansion_values() {
        assert_eq!(Preset::Setting1.hyperparameters(), Some((7.0, 3.0, 10.0)));
        assert_eq!(Preset::Setting2.hyperparameters(), Some((7.0, 3.0, 100.0)));
        assert_eq!(Preset::Setting3.hyperparameters(), Some((1.0, 1.0, 100.0)));
        assert_eq!(Preset::classify(7.0, 3.0, 10.0), Preset::Setting1);
        assert_eq!(Preset::classify(7.0, 3.0, 100.0), Preset::Setting2);
        assert_eq!(Preset::classify(1.0, 1.0, 100.0), Preset::Setting3);
        assert_eq!(Preset::classify(2.0, 3.0, 10.0), Preset::Custom);
    }

    #[test]
    fn config_validation_rejects_inconsistent_preset() {
        let mut config = test_config(2, 1, 3, 5, 0);
        config.validate().unwrap();
        config.preset = Preset::Setting1;
        assert!(config.validate().is_err());
    }

    #[test]
    fn chain_conditional_cases() {
        let k = 4.0;
        assert_eq!(chain_conditional(None, None, k), (0.0, 1.0));
        let (m, p) = chain_conditional(None, Some(2.0), k);
        assert_abs_diff_eq!(m, 4.0 * 2.0 / 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p, 5.0, epsilon = 1e-15);
        assert_eq!(chain_conditional(Some(1.0), Some(3.0), k), (2.0, 8.0));
        assert_eq!(chain_conditional(Some(1.5), None, k), (1.5, 4.0));
    }

    #[test]
    fn state_roundtrips_through_json() {
        let config = test_config(2, 2, 2, 4, 3);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let state = sample_prior_state(&config, &mut rng);
        let text = serde_json::to_string(&state).unwrap();
        let back: ModelState = serde_json::from_str(&text).unwrap();
        assert_eq!(state, back);
    }
}
