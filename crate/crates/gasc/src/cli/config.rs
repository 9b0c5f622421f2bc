//! Flat key-value run configuration with preset expansion.
//!
//! Format: one `key = value` per line, `#` starts a comment. The `preset`
//! key expands to its hyperparameter values first; explicit `a`, `b`, and
//! `k_psi` keys override them, and the recorded preset label is recomputed
//! from the effective values.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::cli::CliError;
use crate::corpus::{GenreMap, LoadOptions};
use crate::model::{ModelConfig, Preset};

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Model configuration with dimensions still unbound.
    pub model: ModelConfig,
    /// Target lemma; a comma-separated list aligns with multiple corpora.
    pub target: Option<String>,
    pub time_labels: Option<Vec<String>>,
    /// Raw genre-map rules, e.g. `Narrative:narr,*:other`.
    pub genre_map: Option<String>,
    pub min_word_freq: usize,
    pub test_fraction: f64,
    pub top_n: usize,
    /// Write intermediate states every this many sweeps (0 = off).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            target: None,
            time_labels: None,
            genre_map: None,
            min_word_freq: 1,
            test_fraction: 0.2,
            top_n: 20,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn load_options(&self) -> Result<LoadOptions, CliError> {
        let genre_map = match &self.genre_map {
            Some(spec) => Some(GenreMap::parse(spec).map_err(|e| CliError::Input(e.to_string()))?),
            None => None,
        };
        Ok(LoadOptions {
            window: self.model.window,
            genre_map,
            time_labels: self.time_labels.clone(),
            min_word_freq: self.min_word_freq,
        })
    }

    pub fn targets(&self) -> Result<Vec<String>, CliError> {
        match &self.target {
            Some(t) => Ok(t.split(',').map(|s| s.trim().to_string()).collect()),
            None => Err(CliError::Input(
                "config must set `target` (the lemma under study)".to_string(),
            )),
        }
    }

    pub fn single_target(&self) -> Result<String, CliError> {
        let targets = self.targets()?;
        if targets.len() != 1 {
            return Err(CliError::Input(
                "this command takes exactly one target".to_string(),
            ));
        }
        Ok(targets.into_iter().next().unwrap())
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_str(&text)
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| {
        CliError::Input(format!("config line {line}: invalid value for `{key}`: `{value}`"))
    })
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, CliError> {
    let mut pairs: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Input(format!("config line {}: expected `key = value`", idx + 1))
        })?;
        pairs.push((idx + 1, key.trim().to_string(), value.trim().to_string()));
    }

    let mut rc = RunConfig::default();
    if let Some((line, _, value)) = pairs.iter().find(|(_, k, _)| k == "preset") {
        let n: u32 = parse_value(*line, "preset", value)?;
        let preset = Preset::from_number(n).ok_or_else(|| {
            CliError::Input(format!("config line {line}: preset must be 1, 2, or 3"))
        })?;
        rc.model.apply_preset(preset);
    }

    for (line, key, value) in &pairs {
        let line = *line;
        match key.as_str() {
            "preset" => {}
            "k" => rc.model.n_senses = parse_value(line, key, value)?,
            "w" => rc.model.window = parse_value(line, key, value)?,
            "a" => rc.model.precision_shape = parse_value(line, key, value)?,
            "b" => rc.model.precision_rate = parse_value(line, key, value)?,
            "k_psi" => rc.model.word_precision = parse_value(line, key, value)?,
            "n_iterations" => rc.model.n_iterations = parse_value(line, key, value)?,
            "n_retain" => rc.model.n_retain = parse_value(line, key, value)?,
            "seed" => rc.model.seed = parse_value(line, key, value)?,
            "target" => rc.target = Some(value.clone()),
            "time_labels" => {
                rc.time_labels = Some(value.split(',').map(|s| s.trim().to_string()).collect())
            }
            "genre_map" => rc.genre_map = Some(value.clone()),
            "min_word_freq" => rc.min_word_freq = parse_value(line, key, value)?,
            "test_fraction" => rc.test_fraction = parse_value(line, key, value)?,
            "top_n" => rc.top_n = parse_value(line, key, value)?,
            "checkpoint_every" => rc.checkpoint_every = parse_value(line, key, value)?,
            other => {
                return Err(CliError::Input(format!(
                    "config line {line}: unknown key `{other}`"
                )))
            }
        }
    }
    rc.model.reclassify_preset();
    Ok(rc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_expansion_with_overrides() {
        let rc = parse_config_str("preset = 1\nk = 8\ntarget = kosmos\n").unwrap();
        assert_eq!(rc.model.precision_shape, 7.0);
        assert_eq!(rc.model.precision_rate, 3.0);
        assert_eq!(rc.model.word_precision, 10.0);
        assert_eq!(rc.model.preset, Preset::Setting1);
        assert_eq!(rc.model.n_senses, 8);

        // Overriding a preset value reclassifies the label.
        let rc = parse_config_str("preset = 1\nk_psi = 100\n").unwrap();
        assert_eq!(rc.model.preset, Preset::Setting2);
        let rc = parse_config_str("preset = 3\na = 2.5\n").unwrap();
        assert_eq!(rc.model.preset, Preset::Custom);
    }

    #[test]
    fn all_presets_expand_to_published_values() {
        for (n, expected) in [
            (1, (7.0, 3.0, 10.0)),
            (2, (7.0, 3.0, 100.0)),
            (3, (1.0, 1.0, 100.0)),
        ] {
            let rc = parse_config_str(&format!("preset = {n}\n")).unwrap();
            assert_eq!(
                (
                    rc.model.precision_shape,
                    rc.model.precision_rate,
                    rc.model.word_precision
                ),
                expected
            );
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let rc = parse_config_str("# fit setup\n\nseed = 9  # rng\ntarget = mus\n").unwrap();
        assert_eq!(rc.model.seed, 9);
        assert_eq!(rc.target.as_deref(), Some("mus"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config_str("bogus = 1\n").is_err());
        assert!(parse_config_str("k: 3\n").is_err());
    }

    #[test]
    fn time_labels_and_genre_map_parse() {
        let rc = parse_config_str(
            "time_labels = 8BC, 7BC, 6BC\ngenre_map = Narrative:narr,*:other\n",
        )
        .unwrap();
        assert_eq!(
            rc.time_labels.as_deref().unwrap(),
            ["8BC", "7BC", "6BC"]
        );
        let opts = rc.load_options().unwrap();
        assert_eq!(opts.genre_map.unwrap().apply("Poetry"), "other");
    }
}
