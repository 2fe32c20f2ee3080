//! Flat `key=value` settings shared by every subcommand.
//!
//! Resolution order: built-in defaults, then the config file, then flags.
//! Every bad key or value is collected so all problems are reported at once.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use kgalign_core::synth::SyntheticSpec;
use kgalign_core::{Candidates, Direction, EvalOptions, LoadOptions, OracleConfig, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub synth: SyntheticSpec,
    pub oracle: OracleConfig,
    pub load: LoadOptions,
    pub eval: EvalOptions,
    /// Extra Hit@k cutoff reported next to 1 and 10.
    pub k: Option<usize>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse `{value}`"))
}

pub fn parse_switch(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(format!("{key}: expected on|off, got `{value}`")),
    }
}

fn switch(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn parse_direction(value: &str) -> Result<Direction, String> {
    match value {
        "x2y" => Ok(Direction::XToY),
        "y2x" => Ok(Direction::YToX),
        _ => Err(format!("direction: expected x2y|y2x, got `{value}`")),
    }
}

fn parse_candidates(value: &str) -> Result<Candidates, String> {
    match value {
        "test" => Ok(Candidates::Test),
        "full" => Ok(Candidates::Full),
        _ => Err(format!("candidates: expected test|full, got `{value}`")),
    }
}

/// Comma-separated counts, e.g. `16,64,256`.
fn parse_counts(value: &str) -> Result<Vec<usize>, String> {
    value
        .split(',')
        .map(|s| parse("theory_counts", s.trim()))
        .collect()
}

/// Keys accepted in config files, in echo order.
#[cfg(test)]
const KEYS: &[&str] = &[
    "seed",
    "batch_size",
    "queue_k",
    "tau",
    "momentum",
    "lr",
    "max_epochs",
    "patience",
    "lambda",
    "self_negatives",
    "relation_mode",
    "direction",
    "candidates",
    "k",
    "dev_fraction",
    "dev_seed",
    "fallback_dim",
    "n_entities",
    "dim",
    "edge_density",
    "name_noise",
    "embedding_noise",
    "anisotropy",
    "theory_dim",
    "theory_tau",
    "theory_lambda",
    "theory_counts",
    "theory_trials",
    "reference_samples",
];

impl Settings {
    /// Sets one key. `seed` drives training, generation, oracles and the
    /// fallback embeddings together.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "seed" => {
                let s: u64 = parse(key, v)?;
                self.train.seed = s;
                self.synth.seed = s;
                self.oracle.seed = s;
                self.load.fallback_seed = s;
            }
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "queue_k" => self.train.queue_k = parse(key, v)?,
            "tau" => self.train.tau = parse(key, v)?,
            "momentum" => self.train.momentum = parse(key, v)?,
            "lr" => self.train.learning_rate = parse(key, v)?,
            "max_epochs" => self.train.max_epochs = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "lambda" => self.train.lambda = parse(key, v)?,
            "self_negatives" => self.train.self_negatives = parse_switch(key, v)?,
            "relation_mode" => self.train.relation_mode = parse_switch(key, v)?,
            "direction" => self.eval.direction = parse_direction(v)?,
            "candidates" => self.eval.candidates = parse_candidates(v)?,
            "k" => self.k = Some(parse(key, v)?),
            "dev_fraction" => self.load.dev_fraction = parse(key, v)?,
            "dev_seed" => self.load.dev_seed = parse(key, v)?,
            "fallback_dim" => self.load.fallback_dim = parse(key, v)?,
            "n_entities" => self.synth.n_entities = parse(key, v)?,
            "dim" => self.synth.dim = parse(key, v)?,
            "edge_density" => self.synth.edge_density = parse(key, v)?,
            "name_noise" => self.synth.name_noise = parse(key, v)?,
            "embedding_noise" => self.synth.embedding_noise = parse(key, v)?,
            "anisotropy" => self.synth.anisotropy = parse(key, v)?,
            "theory_dim" => self.oracle.dim = parse(key, v)?,
            "theory_tau" => self.oracle.tau = parse(key, v)?,
            "theory_lambda" => self.oracle.lambda = parse(key, v)?,
            "theory_counts" => self.oracle.sample_counts = parse_counts(v)?,
            "theory_trials" => self.oracle.trials = parse(key, v)?,
            "reference_samples" => self.oracle.reference_samples = parse(key, v)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Applies a config file; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path, errors: &mut Vec<String>) {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                errors.push(format!("{}: {e}", path.display()));
                return;
            }
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let result = match line.split_once('=') {
                Some((k, v)) => self.set(k, v),
                None => Err("expected key=value".to_string()),
            };
            if let Err(e) = result {
                errors.push(format!("{}:{}: {e}", path.display(), i + 1));
            }
        }
    }

    /// Fully resolved values, one `key=value` per line, parseable by
    /// [`Settings::apply_file`].
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let s = &self.synth;
        let o = &self.oracle;
        let counts: Vec<String> = o.sample_counts.iter().map(usize::to_string).collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k}={v}").unwrap();
        kv("seed", t.seed.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("queue_k", t.queue_k.to_string());
        kv("tau", t.tau.to_string());
        kv("momentum", t.momentum.to_string());
        kv("lr", t.learning_rate.to_string());
        kv("max_epochs", t.max_epochs.to_string());
        kv("patience", t.patience.to_string());
        kv("lambda", t.lambda.to_string());
        kv("self_negatives", switch(t.self_negatives).into());
        kv("relation_mode", switch(t.relation_mode).into());
        kv(
            "direction",
            match self.eval.direction {
                Direction::XToY => "x2y",
                Direction::YToX => "y2x",
            }
            .into(),
        );
        kv(
            "candidates",
            match self.eval.candidates {
                Candidates::Test => "test",
                Candidates::Full => "full",
            }
            .into(),
        );
        if let Some(k) = self.k {
            kv("k", k.to_string());
        }
        kv("dev_fraction", self.load.dev_fraction.to_string());
        kv("dev_seed", self.load.dev_seed.to_string());
        kv("fallback_dim", self.load.fallback_dim.to_string());
        kv("n_entities", s.n_entities.to_string());
        kv("dim", s.dim.to_string());
        kv("edge_density", s.edge_density.to_string());
        kv("name_noise", s.name_noise.to_string());
        kv("embedding_noise", s.embedding_noise.to_string());
        kv("anisotropy", s.anisotropy.to_string());
        kv("theory_dim", o.dim.to_string());
        kv("theory_tau", o.tau.to_string());
        kv("theory_lambda", o.lambda.to_string());
        kv("theory_counts", counts.join(","));
        kv("theory_trials", o.trials.to_string());
        kv("reference_samples", o.reference_samples.to_string());
        out
    }
}
