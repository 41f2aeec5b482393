//! Experiment configuration: an INI-style file with `[section]` headers and
//! `key = value` lines.
//!
//! ```text
//! [experiment]
//! seed = 7
//!
//! [scenes]
//! train = room n=40000 noise_mm=1.0 seeds=1,2,3
//! test = files data/a.ply data/b.ply
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use pcsr_core::access::{AttributeSet, Granularity, PolicyTree};
use pcsr_core::dataset::DEFAULT_K;
use pcsr_core::forest::ForestConfig;
use pcsr_core::sampling::ResolutionLevel;
use pcsr_core::scenes::{SceneKind, SceneSpec};
use pcsr_stream::{BenchConfig, ConnectionMode};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Where a group of clouds comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    Synthetic(Vec<SceneSpec>),
    Files(Vec<PathBuf>),
}

impl SceneSource {
    pub fn len(&self) -> usize {
        match self {
            Self::Synthetic(v) => v.len(),
            Self::Files(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pass/fail limits checked at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Allowed relative deviation of each level's encrypted size from
    /// `full / 2^h`.
    pub size_tolerance: f64,
    pub decrypt_r2_min: f64,
    pub decrypt_eighth_max: f64,
    pub encrypt_eighth_max: f64,
    /// Required fractional MAE reduction against the zero-offset baseline.
    pub mae_reduction_min: f64,
    pub latency_r2_min: f64,
    pub require_sr_improvement: bool,
    pub require_monotone_quality: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            size_tolerance: 0.01,
            decrypt_r2_min: 0.95,
            decrypt_eighth_max: 0.40,
            encrypt_eighth_max: 0.50,
            mae_reduction_min: 0.5,
            latency_r2_min: 0.9,
            require_sr_improvement: true,
            require_monotone_quality: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub train: SceneSource,
    pub test: SceneSource,
    pub crypto: SceneSource,
    pub stream: SceneSource,
    pub levels: Vec<ResolutionLevel>,
    pub policy: PolicyTree,
    pub attributes: AttributeSet,
    pub denied: Option<AttributeSet>,
    pub granularity: Granularity,
    pub crypto_repeats: usize,
    pub k: usize,
    pub train_records: usize,
    pub test_records: usize,
    pub forest: ForestConfig,
    pub bench: BenchConfig,
    pub port: u16,
    pub thresholds: Thresholds,
    /// First 16 hex digits of the SHA-256 of the config text.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses config text; relative file paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let get = |section: &str, key: &str| ini.get_from(Some(section), key).map(str::trim);
        fn cfg_err(key: &'static str) -> impl Fn(pcsr_core::access::CryptoError) -> CliError {
            move |e| CliError::Config(format!("{key}: {e}"))
        }
        fn num<T: FromStr>(v: Option<&str>, key: &str, default: T) -> Result<T, CliError> {
            match v {
                None => Ok(default),
                Some(s) => s
                    .parse()
                    .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{s}`"))),
            }
        }
        let scene = |key: &str| -> Result<SceneSource, CliError> {
            let v = get("scenes", key).ok_or_else(|| CliError::Config(format!("missing scenes.{key}")))?;
            parse_scene_source(v, base).map_err(|e| CliError::Config(format!("scenes.{key}: {e}")))
        };

        let seed = num(get("experiment", "seed"), "experiment.seed", 7u64)?;
        let levels = match get("ladder", "levels") {
            None => ResolutionLevel::ALL.to_vec(),
            Some(v) => v
                .split(',')
                .map(|s| s.parse().map_err(|e| CliError::Config(format!("ladder.levels: {e}"))))
                .collect::<Result<_, _>>()?,
        };
        let policy = get("access", "policy")
            .ok_or_else(|| CliError::Config("missing access.policy".into()))?
            .parse()
            .map_err(cfg_err("access.policy"))?;
        let attributes = AttributeSet::parse_list(
            get("access", "attributes").ok_or_else(|| CliError::Config("missing access.attributes".into()))?,
        )
        .map_err(cfg_err("access.attributes"))?;
        let denied = get("access", "denied")
            .map(|v| AttributeSet::parse_list(v).map_err(cfg_err("access.denied")))
            .transpose()?;
        let granularity = get("access", "granularity")
            .unwrap_or("xyz")
            .parse()
            .map_err(cfg_err("access.granularity"))?;

        let d = ForestConfig::default();
        let forest = ForestConfig {
            n_trees: num(get("forest", "n_trees"), "forest.n_trees", d.n_trees)?,
            max_depth: num(get("forest", "max_depth"), "forest.max_depth", d.max_depth)?,
            min_leaf: num(get("forest", "min_leaf"), "forest.min_leaf", d.min_leaf)?,
            bootstrap_fraction: num(
                get("forest", "bootstrap_fraction"),
                "forest.bootstrap_fraction",
                d.bootstrap_fraction,
            )?,
            bootstrap: num(get("forest", "bootstrap"), "forest.bootstrap", d.bootstrap)?,
            features_per_split: num(
                get("forest", "features_per_split"),
                "forest.features_per_split",
                d.features_per_split,
            )?,
            seed: num(get("forest", "seed"), "forest.seed", seed)?,
        };
        let b = BenchConfig::default();
        let bench = BenchConfig {
            clients: num(get("bench", "clients"), "bench.clients", b.clients)?,
            fps: num(get("bench", "fps"), "bench.fps", b.fps)?,
            duration_s: num(get("bench", "duration_s"), "bench.duration_s", b.duration_s)?,
            concurrency: num(get("bench", "concurrency"), "bench.concurrency", b.concurrency)?,
            scale: num(get("bench", "scale"), "bench.scale", b.scale)?,
            connection: get("bench", "connection")
                .map(ConnectionMode::from_str)
                .transpose()
                .map_err(|e| CliError::Config(e.to_string()))?
                .unwrap_or_default(),
            decrypt_samples: num(
                get("bench", "decrypt_samples"),
                "bench.decrypt_samples",
                b.decrypt_samples,
            )?,
        };
        let t = Thresholds::default();
        let thresholds = Thresholds {
            size_tolerance: num(
                get("thresholds", "size_tolerance"),
                "thresholds.size_tolerance",
                t.size_tolerance,
            )?,
            decrypt_r2_min: num(
                get("thresholds", "decrypt_r2_min"),
                "thresholds.decrypt_r2_min",
                t.decrypt_r2_min,
            )?,
            decrypt_eighth_max: num(
                get("thresholds", "decrypt_eighth_max"),
                "thresholds.decrypt_eighth_max",
                t.decrypt_eighth_max,
            )?,
            encrypt_eighth_max: num(
                get("thresholds", "encrypt_eighth_max"),
                "thresholds.encrypt_eighth_max",
                t.encrypt_eighth_max,
            )?,
            mae_reduction_min: num(
                get("thresholds", "mae_reduction_min"),
                "thresholds.mae_reduction_min",
                t.mae_reduction_min,
            )?,
            latency_r2_min: num(
                get("thresholds", "latency_r2_min"),
                "thresholds.latency_r2_min",
                t.latency_r2_min,
            )?,
            require_sr_improvement: num(
                get("thresholds", "require_sr_improvement"),
                "thresholds.require_sr_improvement",
                t.require_sr_improvement,
            )?,
            require_monotone_quality: num(
                get("thresholds", "require_monotone_quality"),
                "thresholds.require_monotone_quality",
                t.require_monotone_quality,
            )?,
        };

        Ok(Self {
            seed,
            out_dir: get("experiment", "out_dir").map(|p| base.join(p)),
            train: scene("train")?,
            test: scene("test")?,
            crypto: scene("crypto")?,
            stream: scene("stream")?,
            levels,
            policy,
            attributes,
            denied,
            granularity,
            crypto_repeats: num(get("access", "repeats"), "access.repeats", 5usize)?,
            k: num(get("model", "k"), "model.k", DEFAULT_K)?,
            train_records: num(get("model", "train_records"), "model.train_records", 20_000usize)?,
            test_records: num(get("model", "test_records"), "model.test_records", 10_000usize)?,
            forest,
            bench,
            port: num(get("bench", "port"), "bench.port", 0u16)?,
            thresholds,
            hash: config_hash(text),
        })
    }

    /// Checks cross-field constraints and that referenced files exist.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.levels.first() != Some(&ResolutionLevel::Full) {
            return bad("ladder.levels must start at 100".into());
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return bad("ladder.levels must be strictly decreasing".into());
        }
        for (name, src) in [
            ("train", &self.train),
            ("test", &self.test),
            ("crypto", &self.crypto),
            ("stream", &self.stream),
        ] {
            if src.is_empty() {
                return bad(format!("scenes.{name} lists no clouds"));
            }
            match src {
                SceneSource::Files(paths) => {
                    if let Some(p) = paths.iter().find(|p| !p.is_file()) {
                        return bad(format!("scenes.{name}: {} does not exist", p.display()));
                    }
                }
                SceneSource::Synthetic(specs) => {
                    for s in specs {
                        s.validate()
                            .map_err(|e| CliError::Config(format!("scenes.{name}: {e}")))?;
                    }
                }
            }
        }
        for (name, src) in [("crypto", &self.crypto), ("stream", &self.stream)] {
            if src.len() != 1 {
                return bad(format!("scenes.{name} must name exactly one cloud"));
            }
        }
        self.policy
            .validate()
            .map_err(|e| CliError::Config(format!("access.policy: {e}")))?;
        if self.crypto_repeats == 0 {
            return bad("access.repeats must be at least 1".into());
        }
        if self.train_records == 0 || self.test_records == 0 {
            return bad("model.train_records and model.test_records must be positive".into());
        }
        self.forest.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.bench.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }
}

pub fn config_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

/// `room n=40000 noise_mm=1.0 seeds=1,2,3` or `files a.ply b.ply`.
pub fn parse_scene_source(v: &str, base: &Path) -> Result<SceneSource, String> {
    let mut words = v.split_whitespace();
    let head = words.next().ok_or("empty scene entry")?;
    if head == "files" {
        return Ok(SceneSource::Files(words.map(|w| base.join(w)).collect()));
    }
    let kind: SceneKind = head.parse().map_err(|e| format!("{e}"))?;
    let (mut n, mut noise_mm, mut seeds) = (None, 0.0, vec![]);
    for w in words {
        let (k, val) = w
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{w}`"))?;
        match k {
            "n" => n = Some(val.parse::<usize>().map_err(|_| format!("bad n `{val}`"))?),
            "noise_mm" => noise_mm = val.parse::<f64>().map_err(|_| format!("bad noise_mm `{val}`"))?,
            "seeds" => {
                seeds = val
                    .split(',')
                    .map(|s| s.parse::<u64>().map_err(|_| format!("bad seed `{s}`")))
                    .collect::<Result<_, _>>()?
            }
            other => return Err(format!("unknown scene key `{other}`")),
        }
    }
    let n = n.ok_or("scene entry needs n=")?;
    if seeds.is_empty() {
        return Err("scene entry needs seeds=".into());
    }
    Ok(SceneSource::Synthetic(
        seeds
            .into_iter()
            .map(|s| SceneSpec::new(kind, n, noise_mm * 1e-3, s))
            .collect(),
    ))
}
