//! Resolved training run configuration with a flat `key = value` dump
//! format.
//!
//! Precedence when resolving a run: built-in defaults, then a `--config`
//! file, then explicit command-line flags. The dump written by
//! `--dump-config` resolves every value (including auto-detected worker
//! count), so loading it reproduces the identical run, seed included.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bitembed::quantize::Bitlevel;
use bitembed::trainer::TrainingConfig;

/// Output container format for trained vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorFormat {
    Packed,
    Text,
}

impl VectorFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "packed" => Ok(VectorFormat::Packed),
            "text" => Ok(VectorFormat::Text),
            other => bail!("format must be `packed` or `text`, got {other:?}"),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            VectorFormat::Packed => "packed",
            VectorFormat::Text => "text",
        }
    }
}

/// A fully resolved `train` invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub format: VectorFormat,
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_end: f64,
    pub subsample: f64,
    pub min_count: u64,
    pub bitlevel: Bitlevel,
    pub alpha: f64,
    pub workers: usize,
    pub seed: u64,
    pub fixed_window: bool,
    pub no_context_average: bool,
    pub progress: bool,
    pub max_abs: bool,
    pub save_vocab: Option<PathBuf>,
}

impl RunConfig {
    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            dim: self.dim,
            window: self.window,
            negatives: self.negatives,
            epochs: self.epochs,
            lr_start: self.lr,
            lr_end: self.lr_end,
            subsample: self.subsample,
            min_count: self.min_count,
            bitlevel: self.bitlevel,
            alpha: self.alpha,
            workers: self.workers,
            seed: self.seed,
            fixed_window: self.fixed_window,
            context_average: !self.no_context_average,
            track_max_abs: self.max_abs,
        }
    }

    /// Serialize as flat `key = value` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("corpus", self.corpus.display().to_string());
        kv("out", self.out.display().to_string());
        kv("format", self.format.as_str().to_string());
        kv("dim", self.dim.to_string());
        kv("window", self.window.to_string());
        kv("negatives", self.negatives.to_string());
        kv("epochs", self.epochs.to_string());
        kv("lr", self.lr.to_string());
        kv("lr_end", self.lr_end.to_string());
        kv("subsample", self.subsample.to_string());
        kv("min_count", self.min_count.to_string());
        kv("bitlevel", self.bitlevel.bits().to_string());
        kv("alpha", self.alpha.to_string());
        kv("workers", self.workers.to_string());
        kv("seed", self.seed.to_string());
        kv("fixed_window", self.fixed_window.to_string());
        kv("no_context_average", self.no_context_average.to_string());
        kv("progress", self.progress.to_string());
        kv("max_abs", self.max_abs.to_string());
        if let Some(path) = &self.save_vocab {
            kv("save_vocab", path.display().to_string());
        }
        out
    }
}

/// Key-value pairs loaded from a config file, applied between defaults and
/// explicit flags.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "corpus",
    "out",
    "format",
    "dim",
    "window",
    "negatives",
    "epochs",
    "lr",
    "lr_end",
    "subsample",
    "min_count",
    "bitlevel",
    "alpha",
    "workers",
    "seed",
    "fixed_window",
    "no_context_average",
    "progress",
    "max_abs",
    "save_vocab",
];

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "config line {} is not `key = value`: {line:?}",
                    idx + 1
                );
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("unknown config key {key:?} on line {}", idx + 1);
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| anyhow::anyhow!("bad value for config key {key:?}: {raw:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunConfig {
        RunConfig {
            corpus: PathBuf::from("corpus.txt"),
            out: PathBuf::from("vectors.w2bq"),
            format: VectorFormat::Packed,
            dim: 800,
            window: 10,
            negatives: 12,
            epochs: 25,
            lr: 0.05,
            lr_end: 0.0001,
            subsample: 1e-4,
            min_count: 5,
            bitlevel: Bitlevel::B1,
            alpha: 0.75,
            workers: 4,
            seed: 1,
            fixed_window: false,
            no_context_average: false,
            progress: false,
            max_abs: false,
            save_vocab: None,
        }
    }

    #[test]
    fn dump_parses_back() {
        let cfg = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, cfg.dump()).unwrap();
        let file = ConfigFile::load(&path).unwrap();
        assert_eq!(file.get("dim"), Some("800"));
        assert_eq!(file.get("subsample"), Some("0.0001"));
        assert_eq!(file.get_parsed::<u64>("seed").unwrap(), Some(1));
        assert_eq!(file.get("save_vocab"), None);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "dimension = 5\n").unwrap();
        assert!(ConfigFile::load(&path).is_err());
    }
}
