//! Downloads the real LivingRoom/Office captures into a local cache.
//!
//! The dataset URL points at a plain-text manifest, one file per line:
//!
//! ```text
//! <tag> <relative path> [sha256 hex]
//! ```
//!
//! Relative paths resolve against the manifest's directory. Each file is
//! checked, stripped to xyz and stored as `cache/<tag>/<name>.ply`. A marker
//! file records a completed fetch so later calls never touch the network.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ply::{parse_ply, write_ply_file, PlyEncoding, PlyError};

/// File counts of the public captures.
pub const REAL_DATASET_COUNTS: [(&str, usize); 2] = [("LivingRoom", 56), ("Office", 53)];
const MARKER: &str = ".pcsr-fetch-complete";

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("download failed for {url}: {reason}")]
    DownloadFailed { url: String, reason: String },
    #[error("checksum mismatch for {file}")]
    ChecksumMismatch { file: String },
    #[error("expected {expected} `{tag}` files, manifest lists {found}")]
    CountMismatch { tag: String, expected: usize, found: usize },
    #[error("bad manifest line `{0}`")]
    BadManifest(String),
    #[error("cannot ingest {file}: {source}")]
    Ply { file: String, source: PlyError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    /// Required file count per tag; empty disables the check.
    pub expected_counts: Vec<(String, usize)>,
    pub timeout: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            expected_counts: REAL_DATASET_COUNTS.iter().map(|(t, n)| (t.to_string(), *n)).collect(),
            timeout: Duration::from_secs(60),
        }
    }
}

struct Entry {
    tag: String,
    rel: String,
    sha256: Option<String>,
}

fn url_lock(url: &str) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<String, Arc<Mutex<()>>>>> = OnceLock::new();
    LOCKS
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .entry(url.to_string())
        .or_default()
        .clone()
}

pub fn fetch_real(dataset_url: &str, cache_dir: &Path) -> Result<Vec<PathBuf>, FetchError> {
    fetch_real_with(dataset_url, cache_dir, &FetchOptions::default())
}

/// Fetches and ingests every manifest entry, returning the cached paths
/// sorted by tag then name. Concurrent calls for one URL run one at a time.
pub fn fetch_real_with(dataset_url: &str, cache_dir: &Path, opts: &FetchOptions) -> Result<Vec<PathBuf>, FetchError> {
    let lock = url_lock(dataset_url);
    let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());

    let marker = cache_dir.join(MARKER);
    if let Ok(listing) = fs::read_to_string(&marker) {
        let mut lines = listing.lines();
        if lines.next() == Some(dataset_url) {
            let paths: Vec<PathBuf> = lines.map(|l| cache_dir.join(l)).collect();
            if paths.iter().all(|p| p.is_file()) {
                return Ok(paths);
            }
        }
    }

    let agent = ureq::AgentBuilder::new().timeout(opts.timeout).build();
    let manifest = String::from_utf8(download(&agent, dataset_url)?)
        .map_err(|_| FetchError::BadManifest("manifest is not UTF-8".into()))?;
    let entries = parse_manifest(&manifest)?;
    for (tag, expected) in &opts.expected_counts {
        let found = entries.iter().filter(|e| &e.tag == tag).count();
        if found != *expected {
            return Err(FetchError::CountMismatch {
                tag: tag.clone(),
                expected: *expected,
                found,
            });
        }
    }

    let base = match dataset_url.rfind('/') {
        Some(i) => &dataset_url[..=i],
        None => "",
    };
    let mut rel_paths = Vec::with_capacity(entries.len());
    for e in &entries {
        let bytes = download(&agent, &format!("{base}{}", e.rel))?;
        if let Some(want) = &e.sha256 {
            let got: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
            if !got.eq_ignore_ascii_case(want) {
                return Err(FetchError::ChecksumMismatch { file: e.rel.clone() });
            }
        }
        let cloud = parse_ply(&bytes).map_err(|source| FetchError::Ply {
            file: e.rel.clone(),
            source,
        })?;
        let name = Path::new(&e.rel)
            .file_name()
            .ok_or_else(|| FetchError::BadManifest(e.rel.clone()))?;
        let rel = Path::new(&e.tag).join(name);
        fs::create_dir_all(cache_dir.join(&e.tag))?;
        write_ply_file(cache_dir.join(&rel), &cloud, PlyEncoding::BINARY_F64).map_err(|source| FetchError::Ply {
            file: e.rel.clone(),
            source,
        })?;
        rel_paths.push(rel);
    }
    rel_paths.sort();

    let mut listing = format!("{dataset_url}\n");
    for p in &rel_paths {
        listing.push_str(&p.to_string_lossy());
        listing.push('\n');
    }
    fs::write(&marker, listing)?;
    Ok(rel_paths.into_iter().map(|p| cache_dir.join(p)).collect())
}

fn parse_manifest(text: &str) -> Result<Vec<Entry>, FetchError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let parts: Vec<&str> = l.split_whitespace().collect();
            let bad = || FetchError::BadManifest(l.to_string());
            match parts.as_slice() {
                [tag, rel] => Ok(Entry {
                    tag: tag.to_string(),
                    rel: rel.to_string(),
                    sha256: None,
                }),
                [tag, rel, sum] if sum.len() == 64 => Ok(Entry {
                    tag: tag.to_string(),
                    rel: rel.to_string(),
                    sha256: Some(sum.to_string()),
                }),
                _ => Err(bad()),
            }
            .and_then(|e| {
                if e.rel.contains("..") || e.tag.contains(['/', '\\']) || e.tag.contains("..") {
                    Err(bad())
                } else {
                    Ok(e)
                }
            })
        })
        .collect()
}

fn download(agent: &ureq::Agent, url: &str) -> Result<Vec<u8>, FetchError> {
    let failed = |reason: String| FetchError::DownloadFailed {
        url: url.to_string(),
        reason,
    };
    let resp = agent.get(url).call().map_err(|e| failed(e.to_string()))?;
    let mut buf = Vec::new();
    resp.into_reader()
        .read_to_end(&mut buf)
        .map_err(|e| failed(e.to_string()))?;
    Ok(buf)
}
