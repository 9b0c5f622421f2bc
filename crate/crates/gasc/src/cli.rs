//! Batch experiment drivers: fit, K-sweep, simulation, ground-truth
//! evaluation, and sense-genre correlation, each writing a run manifest
//! sufficient to reproduce its numerical outputs bit-for-bit on the same
//! build.
//!
//! Exit codes: 0 success, 1 input error, 2 numerical failure, 3 degenerate
//! evaluation.

pub mod artifacts;
pub mod config;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{
    self, load_annotations, load_corpus, load_stopwords, sense_frequency_series, split_train_test,
    CorpusError, ExpertAnnotation, GenreMap, Vocabulary,
};
use crate::eval::{
    confidence_matrix, heldout_loglik, match_senses, precision_recall, sense_evolution_table,
    sense_genre_correlations, EvalError, EvalOptions, EvalReport, ExpertIndex, MatchResult,
};
use crate::inference::{run_gibbs, run_gibbs_observed, InferenceError, RunOutput, SweepObserver};
use crate::model::{simulate, ModelState, SampleSet, Variant};

pub use artifacts::{
    read_checkpoint, Checkpoint, LoadEcho, RunManifest, CHECKPOINT_FORMAT_VERSION, RNG_ALGORITHM,
};
pub use config::{parse_config, parse_config_str, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("degenerate evaluation: {0}")]
    Degenerate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Degenerate(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<crate::model::ModelError> for CliError {
    fn from(e: crate::model::ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn checkpoint_from_fit(
    fit: &crate::inference::FitResult,
    target: &str,
    genre_partition: Option<String>,
    genre_map: Option<String>,
) -> Result<Checkpoint, CliError> {
    let (evolution, _) = sense_evolution_table(&fit.sample_set, &fit.corpus, None)?;
    Ok(Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        target: target.to_string(),
        genre_partition,
        genre_map,
        vocab: fit.corpus.vocab.words().to_vec(),
        time_labels: fit.corpus.time_labels.clone(),
        genre_labels: fit.corpus.genre_labels.clone(),
        evolution,
        sample_set: fit.sample_set.clone(),
    })
}

/// Fit one model and write checkpoint(s), trace(s), and the manifest.
pub fn cmd_fit(
    rc: &RunConfig,
    corpus_path: &Path,
    variant: Variant,
    out_dir: &Path,
) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)?;
    let target = rc.single_target()?;
    let opts = rc.load_options()?;

    let t_load = Instant::now();
    let (corpus, load_report) = load_corpus(corpus_path, &target, &opts)?;
    let load_seconds = t_load.elapsed().as_secs_f64();
    println!(
        "loaded {} snippets for `{target}` ({} documents, T={}, G={}, V={})",
        load_report.n_snippets,
        load_report.n_documents,
        corpus.n_times,
        corpus.n_genres,
        corpus.vocab.len()
    );

    let model_config = rc.model.for_corpus(&corpus);
    model_config.validate_for_fit()?;

    let mut manifest = RunManifest::new("fit", model_config.seed);
    manifest.variant = Some(variant.to_string());
    manifest.load_options = Some(LoadEcho {
        target: target.clone(),
        window: opts.window,
        time_labels: opts.time_labels.clone(),
        genre_map: rc.genre_map.clone(),
        min_word_freq: opts.min_word_freq,
    });
    manifest.add_input("corpus", corpus_path)?;

    let t_fit = Instant::now();
    let mut checkpoint_error: Option<String> = None;
    let ckpt_dir = out_dir.to_path_buf();
    let output = {
        let mut observer = |label: &str, sweep: usize, state: &ModelState| {
            let path = ckpt_dir.join(format!("state-{}-{sweep:06}.json", sanitize(label)));
            if let Err(e) = artifacts::write_json(&path, state) {
                checkpoint_error = Some(e.to_string());
            }
        };
        let observer_ref: Option<SweepObserver<'_>> =
            (rc.checkpoint_every > 0).then_some(&mut observer as SweepObserver<'_>);
        run_gibbs_observed(
            &corpus,
            &model_config,
            variant,
            rc.checkpoint_every,
            observer_ref,
        )?
    };
    if let Some(e) = checkpoint_error {
        return Err(CliError::Input(e));
    }
    let fit_seconds = t_fit.elapsed().as_secs_f64();

    let per_genre = matches!(output, RunOutput::PerGenre(_));
    let fits = output.fits();
    manifest.config = Some(fits[0].sample_set.config.clone());
    manifest.g_effective = Some(fits[0].sample_set.config.n_genres);
    for fit in &fits {
        let partition = per_genre.then(|| fit.corpus.genre_labels[0].clone());
        let suffix = partition
            .as_deref()
            .map(|l| format!("-{}", sanitize(l)))
            .unwrap_or_default();
        let checkpoint = checkpoint_from_fit(fit, &target, partition, rc.genre_map.clone())?;
        let checkpoint_path = out_dir.join(format!("checkpoint{suffix}.json"));
        artifacts::write_json(&checkpoint_path, &checkpoint)?;
        let trace_path = out_dir.join(format!("trace{suffix}.csv"));
        artifacts::write_trace_csv(&trace_path, &fit.trace)?;
        manifest.add_output(&checkpoint_path);
        manifest.add_output(&trace_path);
        println!(
            "wrote {} ({} retained samples)",
            checkpoint_path.display(),
            fit.sample_set.samples.len()
        );
    }

    manifest.add_timing("load", load_seconds);
    manifest.add_timing("fit", fit_seconds);
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(())
}

/// Simulation output shape: snippets per (time, genre) cell.
#[derive(Debug, Clone, Copy)]
pub struct SimulateShape {
    pub n_times: usize,
    pub n_genres: usize,
    pub vocab_size: usize,
    pub snippets_per_cell: usize,
    pub snippet_len: usize,
}

/// Draw a synthetic corpus and write it with its ground-truth checkpoint
/// and derived annotations.
pub fn cmd_simulate(rc: &RunConfig, shape: SimulateShape, out_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)?;
    let mut model_config = rc.model.clone();
    model_config.n_times = shape.n_times;
    model_config.n_genres = shape.n_genres;
    model_config.vocab_size = shape.vocab_size;
    let counts = vec![vec![shape.snippets_per_cell; shape.n_genres]; shape.n_times];
    let (corpus, truth) = simulate(&model_config, &counts, shape.snippet_len)?;
    let target = rc.target.clone().unwrap_or_else(|| "target".to_string());

    let sample_set = SampleSet {
        samples: vec![truth.clone()],
        config: model_config.clone(),
        variant: Variant::Gasc,
        snippet_counts: corpus.counts_per_cell(),
    };
    let (evolution, _) = sense_evolution_table(&sample_set, &corpus, None)?;
    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        target: target.clone(),
        genre_partition: None,
        genre_map: None,
        vocab: corpus.vocab.words().to_vec(),
        time_labels: corpus.time_labels.clone(),
        genre_labels: corpus.genre_labels.clone(),
        evolution,
        sample_set,
    };

    let corpus_path = out_dir.join("corpus.jsonl");
    artifacts::write_corpus_jsonl(&corpus_path, &corpus, &target)?;
    let truth_path = out_dir.join("truth.json");
    artifacts::write_json(&truth_path, &checkpoint)?;
    let annotations_path = out_dir.join("truth_annotations.csv");
    artifacts::write_truth_annotations(&annotations_path, &corpus, &truth.z, &target)?;

    let mut manifest = RunManifest::new("simulate", model_config.seed);
    manifest.config = Some(model_config);
    manifest.g_effective = Some(shape.n_genres);
    manifest.add_output(&corpus_path);
    manifest.add_output(&truth_path);
    manifest.add_output(&annotations_path);
    manifest.write(&out_dir.join("manifest.json"))?;
    println!(
        "simulated {} snippets (T={}, G={}, V={})",
        corpus.snippets.len(),
        shape.n_times,
        shape.n_genres,
        shape.vocab_size
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct GroupSummary {
    label: String,
    expert_senses: Vec<String>,
    matching: MatchResult,
    report: EvalReport,
}

#[derive(Debug, Serialize)]
struct AveragedScores {
    precision: f64,
    recall: f64,
    f1: f64,
    n_groups: usize,
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    top_n: usize,
    stopwords_applied: bool,
    annotations_retained: usize,
    groups: Vec<GroupSummary>,
    averaged: Option<AveragedScores>,
}

/// Evaluate a fitted checkpoint against expert annotations: confidence
/// matching, weighted precision/recall, and the sense-evolution table.
///
/// Genre-conditioned fits are evaluated per genre grouping and the final
/// scores average the per-group values.
pub fn cmd_eval_truth(
    checkpoint_path: &Path,
    annotations_path: &Path,
    stopwords_path: Option<&Path>,
    opts: &EvalOptions,
    out_dir: &Path,
) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)?;
    let checkpoint = read_checkpoint(checkpoint_path)?;
    let vocab = Vocabulary::from_words(checkpoint.vocab.clone())?;
    let (mut annotations, ann_report) =
        load_annotations(annotations_path, Some(&vocab), true, &checkpoint.time_labels)?;
    if annotations.is_empty() {
        return Err(CliError::Input(format!(
            "no collocate-based annotations in {} ({} rows read)",
            annotations_path.display(),
            ann_report.n_rows
        )));
    }
    if let Some(spec) = &checkpoint.genre_map {
        let map = GenreMap::parse(spec)?;
        for a in &mut annotations {
            a.genre_label = map.apply(&a.genre_label);
        }
    }

    let stop_ids: HashSet<usize> = match stopwords_path {
        Some(path) => load_stopwords(path)?
            .iter()
            .filter_map(|w| vocab.id(w))
            .collect(),
        None => {
            eprintln!("warning: no stop-word list supplied; scoring without stop-word removal");
            HashSet::new()
        }
    };

    let sample_set = &checkpoint.sample_set;
    let all = annotations.clone();
    let groups: Vec<(String, Vec<ExpertAnnotation>)> = match sample_set.variant {
        Variant::Gasc if sample_set.config.n_genres >= 2 => checkpoint
            .genre_labels
            .iter()
            .map(|gl| {
                (
                    gl.clone(),
                    annotations
                        .iter()
                        .filter(|a| &a.genre_label == gl)
                        .cloned()
                        .collect::<Vec<_>>(),
                )
            })
            .filter(|(_, v)| !v.is_empty())
            .collect(),
        Variant::GascIndependent => match &checkpoint.genre_partition {
            Some(gl) => vec![(
                gl.clone(),
                annotations
                    .iter()
                    .filter(|a| &a.genre_label == gl)
                    .cloned()
                    .collect(),
            )]
            .into_iter()
            .filter(|(_, v): &(String, Vec<_>)| !v.is_empty())
            .collect(),
            None => vec![("all".to_string(), annotations.clone())],
        },
        _ => vec![("all".to_string(), annotations.clone())],
    };
    if groups.is_empty() {
        return Err(CliError::Input(
            "annotations do not cover any of the model's genres".to_string(),
        ));
    }

    let mut summaries = Vec::new();
    for (label, group) in &groups {
        let index = ExpertIndex::new(group, None);
        let conf = confidence_matrix(sample_set, &index, opts.top_n)?;
        let matching = match_senses(conf, index.senses().to_vec());
        let report = precision_recall(&matching, sample_set, group, &stop_ids, opts)?;
        summaries.push(GroupSummary {
            label: label.clone(),
            expert_senses: index.senses().to_vec(),
            matching,
            report,
        });
    }

    // Confidence matrices are always written: they are the diagnostic when
    // matching degenerates.
    let confidence_path = out_dir.join("confidence.csv");
    write_confidence_csv(&confidence_path, &summaries)?;

    let scored: Vec<&GroupSummary> = summaries
        .iter()
        .filter(|s| s.report.f1.is_some())
        .collect();
    if scored.is_empty() {
        return Err(CliError::Degenerate(format!(
            "no model sense matched any expert sense; confidence matrix written to {}",
            confidence_path.display()
        )));
    }
    let n = scored.len() as f64;
    let averaged = AveragedScores {
        precision: scored.iter().map(|s| s.report.precision.unwrap()).sum::<f64>() / n,
        recall: scored.iter().map(|s| s.report.recall.unwrap()).sum::<f64>() / n,
        f1: scored.iter().map(|s| s.report.f1.unwrap()).sum::<f64>() / n,
        n_groups: scored.len(),
    };
    println!(
        "P = {:.4}, R = {:.4}, F1 = {:.4} (averaged over {} group(s))",
        averaged.precision, averaged.recall, averaged.f1, averaged.n_groups
    );

    let pairs_path = out_dir.join("pairs.csv");
    write_pairs_csv(&pairs_path, &summaries)?;

    // Sense-evolution table, relabelled through the corpus-global matching.
    let global_index = ExpertIndex::new(&all, None);
    let global_conf = confidence_matrix(sample_set, &global_index, opts.top_n)?;
    let global_matching = match_senses(global_conf, global_index.senses().to_vec());
    let labels = global_matching.model_sense_labels(sample_set.config.n_senses);
    let evolution_path = out_dir.join("evolution.csv");
    artifacts::write_evolution_csv(
        &evolution_path,
        &checkpoint.evolution,
        &labels,
        &checkpoint.time_labels,
        &checkpoint.genre_labels,
    )?;

    let summary = EvalSummary {
        top_n: opts.top_n,
        stopwords_applied: !stop_ids.is_empty(),
        annotations_retained: all.len(),
        groups: summaries,
        averaged: Some(averaged),
    };
    let report_path = out_dir.join("report.json");
    artifacts::write_json(&report_path, &summary)?;

    let mut manifest = RunManifest::new("eval-truth", sample_set.config.seed);
    manifest.config = Some(sample_set.config.clone());
    manifest.variant = Some(sample_set.variant.to_string());
    manifest.add_input("checkpoint", checkpoint_path)?;
    manifest.add_input("annotations", annotations_path)?;
    if let Some(p) = stopwords_path {
        manifest.add_input("stopwords", p)?;
    }
    for p in [&confidence_path, &pairs_path, &evolution_path, &report_path] {
        manifest.add_output(p);
    }
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(())
}

fn write_confidence_csv(path: &Path, summaries: &[GroupSummary]) -> Result<(), CliError> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| CliError::Input(e.to_string()))?;
    writer
        .write_record(["group", "model_sense", "expert_sense", "confidence", "matched"])
        .map_err(|e| CliError::Input(e.to_string()))?;
    for summary in summaries {
        for (k, row) in summary.matching.conf.iter().enumerate() {
            for (s, &c) in row.iter().enumerate() {
                let matched = summary.matching.assignment[s].contains(&k);
                writer
                    .write_record([
                        summary.label.as_str(),
                        &k.to_string(),
                        summary.expert_senses[s].as_str(),
                        &c.to_string(),
                        &matched.to_string(),
                    ])
                    .map_err(|e| CliError::Input(e.to_string()))?;
            }
        }
    }
    writer.flush().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(())
}

fn write_pairs_csv(path: &Path, summaries: &[GroupSummary]) -> Result<(), CliError> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| CliError::Input(e.to_string()))?;
    writer
        .write_record([
            "group",
            "model_sense",
            "expert_sense",
            "confidence",
            "precision",
            "recall",
        ])
        .map_err(|e| CliError::Input(e.to_string()))?;
    for summary in summaries {
        for pair in &summary.report.pairs {
            writer
                .write_record([
                    summary.label.as_str(),
                    &pair.model_sense.to_string(),
                    pair.expert_sense.as_str(),
                    &pair.confidence.to_string(),
                    &pair.precision.to_string(),
                    &pair.recall.to_string(),
                ])
                .map_err(|e| CliError::Input(e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(())
}

/// Sort key for century-style labels (`8BC`, `1AD`) or plain integers.
fn time_label_key(label: &str) -> Option<i64> {
    if let Some(n) = label.strip_suffix("BC") {
        return n.trim().parse::<i64>().ok().map(|n| -n);
    }
    if let Some(n) = label.strip_suffix("AD") {
        return n.trim().parse::<i64>().ok();
    }
    label.parse::<i64>().ok()
}

/// Derive a time axis from the date column of an annotation CSV.
fn derive_time_axis(path: &Path) -> Result<Vec<String>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let headers = reader.headers().map_err(|e| CliError::Input(e.to_string()))?;
    let date_col = headers
        .iter()
        .position(|h| h == "date")
        .ok_or_else(|| CliError::Input("annotation file lacks a `date` column".to_string()))?;
    let mut labels: Vec<String> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| CliError::Input(e.to_string()))?;
        if let Some(date) = row.get(date_col) {
            let label = match date.parse::<i64>() {
                Ok(year) => corpus::century_label(year),
                Err(_) => date.to_string(),
            };
            if !labels.contains(&label) {
                labels.push(label);
            }
        }
    }
    if labels.is_empty() {
        return Err(CliError::Input("annotation file has no rows".to_string()));
    }
    let keys: Option<Vec<i64>> = labels.iter().map(|l| time_label_key(l)).collect();
    match keys {
        Some(keys) => {
            let mut pairs: Vec<(i64, String)> = keys.into_iter().zip(labels).collect();
            pairs.sort();
            Ok(pairs.into_iter().map(|(_, l)| l).collect())
        }
        None => {
            labels.sort();
            Ok(labels)
        }
    }
}

/// Spearman correlation between each expert sense's frequency series and
/// its per-genre restriction, written as CSV with a significance flag.
pub fn cmd_correlate(
    rc: Option<&RunConfig>,
    annotations_path: &Path,
    out_path: &Path,
) -> Result<(), CliError> {
    let time_labels = match rc.and_then(|c| c.time_labels.clone()) {
        Some(labels) => labels,
        None => derive_time_axis(annotations_path)?,
    };
    let (annotations, _) = load_annotations(annotations_path, None, true, &time_labels)?;
    if annotations.is_empty() {
        return Err(CliError::Input(
            "no collocate-based annotations to correlate".to_string(),
        ));
    }
    let series = sense_frequency_series(&annotations, time_labels.len())?;
    let rows = sense_genre_correlations(&series);

    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut writer =
        csv::Writer::from_path(out_path).map_err(|e| CliError::Input(e.to_string()))?;
    writer
        .write_record(["sense", "genre", "rho", "p_value", "significant"])
        .map_err(|e| CliError::Input(e.to_string()))?;
    for row in &rows {
        writer
            .write_record([
                row.sense.as_str(),
                row.genre.as_str(),
                &row.rho.map(|v| v.to_string()).unwrap_or_default(),
                &row.p_value.map(|v| v.to_string()).unwrap_or_default(),
                &row.significant.to_string(),
            ])
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Input(e.to_string()))?;

    let mut manifest = RunManifest::new("correlate", 0);
    manifest.add_input("annotations", annotations_path)?;
    manifest.add_output(out_path);
    let manifest_path = out_path.with_extension("manifest.json");
    manifest.write(&manifest_path)?;
    println!("wrote {} ({} sense-genre pairs)", out_path.display(), rows.len());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    target: String,
    fold: usize,
    k: usize,
    variant: String,
    split_seed: u64,
    fit_seed: u64,
    heldout_loglik: Option<f64>,
    n_test: usize,
    status: String,
}

/// Held-out log-likelihood sweep over sense counts and variants.
///
/// With several corpora (one target word each) the protocol is
/// leave-one-out: one fold per word, each with its own split. With a single
/// corpus, `folds` repeated seeded splits are used instead.
pub fn cmd_sweep_k(
    rc: &RunConfig,
    corpus_paths: &[PathBuf],
    k_values: &[usize],
    folds: usize,
    out_dir: &Path,
) -> Result<(), CliError> {
    if corpus_paths.is_empty() {
        return Err(CliError::Input("no corpus files given".to_string()));
    }
    if k_values.is_empty() || k_values.iter().any(|&k| k < 2) {
        return Err(CliError::Input("k values must all be >= 2".to_string()));
    }
    fs::create_dir_all(out_dir)?;
    let targets = rc.targets()?;
    let targets: Vec<String> = if targets.len() == corpus_paths.len() {
        targets
    } else if targets.len() == 1 {
        vec![targets[0].clone(); corpus_paths.len()]
    } else {
        return Err(CliError::Input(format!(
            "{} targets for {} corpora; give one target or one per corpus",
            targets.len(),
            corpus_paths.len()
        )));
    };
    let n_folds = if corpus_paths.len() > 1 {
        if folds > 1 {
            eprintln!("note: multiple corpora use one fold per target word");
        }
        1
    } else {
        folds.max(1)
    };

    let opts = rc.load_options()?;
    let base_seed = rc.model.seed;
    let variants = [Variant::Gasc, Variant::Scan];
    let mut rows: Vec<SweepRow> = Vec::new();

    for (wi, (path, target)) in corpus_paths.iter().zip(&targets).enumerate() {
        let (corpus, _) = load_corpus(path, target, &opts)?;
        for fold in 0..n_folds {
            let unit = (wi * n_folds + fold) as u64;
            let split_seed = base_seed.wrapping_add(0x5eed).wrapping_add(unit);
            let fit_seed = base_seed.wrapping_add(unit);
            let split = split_train_test(&corpus, rc.test_fraction, split_seed);
            let (train, test) = match split {
                Ok(pair) => pair,
                Err(e) => {
                    for &k in k_values {
                        for variant in variants {
                            rows.push(SweepRow {
                                target: target.clone(),
                                fold,
                                k,
                                variant: variant.to_string(),
                                split_seed,
                                fit_seed,
                                heldout_loglik: None,
                                n_test: 0,
                                status: format!("split error: {e}"),
                            });
                        }
                    }
                    continue;
                }
            };
            for &k in k_values {
                for variant in variants {
                    let mut model_config = rc.model.clone();
                    model_config.n_senses = k;
                    model_config.seed = fit_seed;
                    let outcome = run_gibbs(&train, &model_config, variant)
                        .map_err(CliError::from)
                        .and_then(|out| match out {
                            RunOutput::Single(fit) => {
                                heldout_loglik(&fit.sample_set, &test).map_err(CliError::from)
                            }
                            RunOutput::PerGenre(_) => Err(CliError::Input(
                                "sweep does not support the independent variant".to_string(),
                            )),
                        });
                    let (ll, status) = match outcome {
                        Ok(ll) => (Some(ll), "ok".to_string()),
                        Err(e) => (None, format!("error: {e}")),
                    };
                    rows.push(SweepRow {
                        target: target.clone(),
                        fold,
                        k,
                        variant: variant.to_string(),
                        split_seed,
                        fit_seed,
                        heldout_loglik: ll,
                        n_test: test.snippets.len(),
                        status,
                    });
                }
            }
            println!("finished {target} fold {fold}");
        }
    }

    let rows_path = out_dir.join("sweep_rows.csv");
    write_csv_serialized(&rows_path, &rows)?;
    let summary_path = out_dir.join("sweep_summary.csv");
    write_sweep_summary(&summary_path, &rows, false)?;
    let by_word_path = out_dir.join("sweep_by_word.csv");
    write_sweep_summary(&by_word_path, &rows, true)?;

    let mut manifest = RunManifest::new("sweep-k", base_seed);
    manifest.config = Some(rc.model.clone());
    for (i, path) in corpus_paths.iter().enumerate() {
        manifest.add_input(&format!("corpus_{i}"), path)?;
    }
    for p in [&rows_path, &summary_path, &by_word_path] {
        manifest.add_output(p);
    }
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(())
}

fn write_csv_serialized<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| CliError::Input(e.to_string()))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(())
}

/// Mean and standard error of held-out log-likelihood per (k, variant),
/// pooled over all folds or grouped per target word.
fn write_sweep_summary(path: &Path, rows: &[SweepRow], per_word: bool) -> Result<(), CliError> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
    for row in rows {
        if let Some(ll) = row.heldout_loglik {
            let word = if per_word {
                row.target.clone()
            } else {
                "all".to_string()
            };
            groups
                .entry((word, row.k, row.variant.clone()))
                .or_default()
                .push(ll);
        }
    }
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| CliError::Input(e.to_string()))?;
    writer
        .write_record(["target", "k", "variant", "mean_heldout_loglik", "stderr", "n"])
        .map_err(|e| CliError::Input(e.to_string()))?;
    for ((word, k, variant), values) in groups {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        writer
            .write_record([
                word.as_str(),
                &k.to_string(),
                &variant,
                &mean.to_string(),
                &stderr.to_string(),
                &values.len().to_string(),
            ])
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(())
}
