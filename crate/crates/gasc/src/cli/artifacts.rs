//! On-disk run artifacts: checkpoints, manifests, and CSV emitters.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cli::CliError;
use crate::corpus::Corpus;
use crate::eval::EvolutionRow;
use crate::inference::TraceRow;
use crate::model::{ModelConfig, SampleSet};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
/// Identifier of the RNG algorithm every sampler in this tool uses.
pub const RNG_ALGORITHM: &str = "chacha20";

/// Serialized fit output: retained samples plus everything evaluation needs
/// to interpret them without reloading the corpus.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub tool_version: String,
    pub rng_algorithm: String,
    pub target: String,
    /// Genre label when this fit covered one partition of an
    /// independent-per-genre run.
    pub genre_partition: Option<String>,
    /// Genre-map rules the corpus was loaded with, if any.
    pub genre_map: Option<String>,
    pub vocab: Vec<String>,
    pub time_labels: Vec<String>,
    pub genre_labels: Vec<String>,
    /// Unlabelled posterior sense proportions on the training corpus.
    pub evolution: Vec<EvolutionRow>,
    pub sample_set: SampleSet,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_all(b"\n")
        .and_then(|_| writer.flush())
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Input(format!("cannot parse {}: {e}", path.display())))?;
    if checkpoint.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CliError::Input(format!(
            "checkpoint format version {} unsupported (expected {CHECKPOINT_FORMAT_VERSION})",
            checkpoint.format_version
        )));
    }
    Ok(checkpoint)
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn file_digest(path: &Path) -> Result<FileDigest, CliError> {
    let mut file = File::open(path)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex_string(&hasher.finalize()),
    })
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Echo of the corpus-loading settings that shaped a run.
#[derive(Debug, Clone, Serialize)]
pub struct LoadEcho {
    pub target: String,
    pub window: usize,
    pub time_labels: Option<Vec<String>>,
    pub genre_map: Option<String>,
    pub min_word_freq: usize,
}

/// Everything needed to reproduce a run bit-for-bit on the same build:
/// effective configuration, input digests, seed, and RNG algorithm.
/// Timings are informational only.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: String,
    pub command: String,
    pub rng_algorithm: &'static str,
    pub seed: u64,
    pub variant: Option<String>,
    pub config: Option<ModelConfig>,
    pub load_options: Option<LoadEcho>,
    /// Effective number of genres the model saw (1 for the collapsed baseline).
    pub g_effective: Option<usize>,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: Vec<String>,
    pub timings_seconds: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            tool: "gasc",
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            rng_algorithm: RNG_ALGORITHM,
            seed,
            variant: None,
            config: None,
            load_options: None,
            g_effective: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            timings_seconds: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(name.to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn add_timing(&mut self, name: &str, seconds: f64) {
        self.timings_seconds.insert(name.to_string(), seconds);
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_json(path, self)
    }
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))?;
    for row in trace {
        writer
            .serialize(row)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Long-format CSV of sense proportions: one row per (time, genre, sense),
/// shaped for stacked-bar plotting.
pub fn write_evolution_csv(
    path: &Path,
    rows: &[EvolutionRow],
    sense_labels: &[String],
    time_labels: &[String],
    genre_labels: &[String],
) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))?;
    writer
        .write_record(["time", "genre", "sense", "proportion", "n_snippets"])
        .map_err(|e| CliError::Input(e.to_string()))?;
    for row in rows {
        for (k, p) in row.proportions.iter().enumerate() {
            writer
                .write_record([
                    time_labels[row.time_slice].as_str(),
                    genre_labels[row.genre_id].as_str(),
                    sense_labels[k].as_str(),
                    &p.to_string(),
                    &row.n_snippets.to_string(),
                ])
                .map_err(|e| CliError::Input(e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(())
}

/// JSON Lines corpus emitter: one document per snippet, the target lemma
/// re-inserted between the two window halves so the file round-trips
/// through corpus loading.
pub fn write_corpus_jsonl(path: &Path, corpus: &Corpus, target: &str) -> Result<(), CliError> {
    let file = File::create(path)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))?;
    let mut writer = BufWriter::new(file);
    for snippet in &corpus.snippets {
        let words: Vec<&str> = snippet
            .context_ids
            .iter()
            .map(|&w| corpus.vocab.word(w))
            .collect();
        let half = words.len().div_ceil(2);
        let mut lemmas: Vec<&str> = Vec::with_capacity(words.len() + 1);
        lemmas.extend(&words[..half]);
        lemmas.push(target);
        lemmas.extend(&words[half..]);
        let record = serde_json::json!({
            "doc_id": snippet.source_ref,
            "time_slice_label": corpus.time_labels[snippet.time_slice],
            "genre_label": corpus.genre_labels[snippet.genre_id],
            "lemmas": lemmas,
        });
        serde_json::to_writer(&mut writer, &record)
            .map_err(|e| CliError::Input(e.to_string()))?;
        writer
            .write_all(b"\n")
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(())
}

/// Annotation CSV derived from a simulated ground truth: one row per
/// snippet, labelled with its true sense and its context words.
pub fn write_truth_annotations(
    path: &Path,
    corpus: &Corpus,
    assignments: &[usize],
    target: &str,
) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))?;
    writer
        .write_record([
            "date", "genre", "author", "work", "target", "sense_id", "basis", "context",
        ])
        .map_err(|e| CliError::Input(e.to_string()))?;
    for (snippet, &z) in corpus.snippets.iter().zip(assignments) {
        let context: Vec<&str> = snippet
            .context_ids
            .iter()
            .map(|&w| corpus.vocab.word(w))
            .collect();
        writer
            .write_record([
                corpus.time_labels[snippet.time_slice].as_str(),
                corpus.genre_labels[snippet.genre_id].as_str(),
                "synthetic",
                snippet.source_ref.as_str(),
                target,
                &format!("sense-{z}"),
                "collocates",
                &context.join(" "),
            ])
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(())
}
