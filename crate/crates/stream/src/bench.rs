//! Load generator in the spirit of `ab -n N -c C`: a fixed number of client
//! threads repeatedly fetch the same frame until the request budget is spent.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use pcsr_core::access::{decrypt_frame, EncryptedFrame, UserKey};
use pcsr_core::sampling::ResolutionLevel;
use pcsr_core::stats::percentile_sorted;
use sha2::{Digest, Sha256};
use url::Url;

use crate::http::HttpConnection;
use crate::StreamError;

const REQUEST_TIMEOUT: Duration = Duration::from_secs(60);

pub const LATENCY_CSV_COLUMNS: [&str; 8] = [
    "resolution",
    "mean_ms",
    "p50_ms",
    "p95_ms",
    "decrypt_mean_ms",
    "total_mean_ms",
    "requests",
    "connection",
];

/// Whether each client reuses one connection or opens one per request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConnectionMode {
    #[default]
    KeepAlive,
    Fresh,
}

impl fmt::Display for ConnectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::KeepAlive => "keep-alive",
            Self::Fresh => "fresh",
        })
    }
}

impl FromStr for ConnectionMode {
    type Err = StreamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "keep-alive" | "keepalive" => Ok(Self::KeepAlive),
            "fresh" | "close" => Ok(Self::Fresh),
            other => Err(StreamError::InvalidConfig(format!("unknown connection mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub clients: u32,
    pub fps: u32,
    pub duration_s: u32,
    /// Requests in flight at any moment.
    pub concurrency: usize,
    /// Fraction of the full request budget actually issued.
    pub scale: f64,
    pub connection: ConnectionMode,
    /// In-memory decryptions timed per level when a key is given; 0 means
    /// one per response.
    pub decrypt_samples: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            fps: 30,
            duration_s: 600,
            concurrency: 10,
            scale: 0.01,
            connection: ConnectionMode::KeepAlive,
            decrypt_samples: 100,
        }
    }
}

impl BenchConfig {
    /// Full request budget, `clients × fps × duration_s`.
    pub fn total_requests(&self) -> u64 {
        u64::from(self.clients) * u64::from(self.fps) * u64::from(self.duration_s)
    }

    /// Requests actually issued: `round(scale × total)`, at least one.
    pub fn scaled_requests(&self) -> usize {
        ((self.scale * self.total_requests() as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(StreamError::InvalidConfig(format!(
                "scale {} not in (0, 1]",
                self.scale
            )));
        }
        if self.concurrency == 0 {
            return Err(StreamError::InvalidConfig("concurrency must be at least 1".into()));
        }
        if self.total_requests() == 0 {
            return Err(StreamError::InvalidConfig(
                "clients, fps and duration must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub resolution: ResolutionLevel,
    pub connection: ConnectionMode,
    /// Network time per request: send, wait, and read the whole body.
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub requests: usize,
    /// Zero when no key was supplied.
    pub decrypt_mean_ms: f64,
    pub total_mean_ms: f64,
    pub body_bytes: usize,
    pub body_sha256: [u8; 32],
}

/// One rung of the served ladder.
#[derive(Debug, Clone)]
pub struct LadderEntry {
    pub resolution: ResolutionLevel,
    pub url: String,
}

/// Fetches `url` `cfg.scaled_requests()` times from `cfg.concurrency` threads
/// and checks every body against the first. With a key, the body is then
/// decrypted in memory `cfg.decrypt_samples` times (every response when 0)
/// on the calling thread, after the network phase, so decryption does not
/// compete with transfers for the CPU.
pub fn bench(
    url: &str,
    resolution: ResolutionLevel,
    cfg: &BenchConfig,
    user_key: Option<&UserKey>,
) -> Result<LatencyReport, StreamError> {
    cfg.validate()?;
    let parsed = Url::parse(url).map_err(|e| StreamError::InvalidConfig(format!("bad url {url}: {e}")))?;
    if parsed.scheme() != "http" {
        return Err(StreamError::InvalidConfig(format!(
            "only http:// urls are supported: {url}"
        )));
    }
    let host = parsed
        .host_str()
        .ok_or_else(|| StreamError::InvalidConfig(format!("url without host: {url}")))?;
    let host_port = format!("{host}:{}", parsed.port().unwrap_or(80));
    let path = match parsed.query() {
        Some(q) => format!("{}?{q}", parsed.path()),
        None => parsed.path().to_string(),
    };

    let budget = cfg.scaled_requests();
    let issued = AtomicUsize::new(0);
    let reference = OnceLock::new();
    let threads = cfg.concurrency.min(budget);
    let logs: Vec<Result<Vec<f64>, StreamError>> = thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|_| s.spawn(|| client_loop(&host_port, &path, cfg.connection, budget, &issued, &reference)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench worker panicked"))
            .collect()
    });
    let mut network = Vec::with_capacity(budget);
    for log in logs {
        network.extend(log?);
    }
    let body = reference.into_inner().expect("at least one request is issued");

    let mut decrypt = Vec::new();
    if let Some(uk) = user_key {
        let n = match cfg.decrypt_samples {
            0 => network.len(),
            k => k.min(network.len()),
        };
        for _ in 0..n {
            let t = Instant::now();
            let frame = EncryptedFrame::from_ply_bytes(&body)?;
            let cloud = decrypt_frame(&frame, uk)?;
            decrypt.push(t.elapsed().as_secs_f64() * 1e3);
            drop(cloud);
        }
    }
    let sha: [u8; 32] = Sha256::digest(&body).into();
    Ok(summarize(
        resolution,
        cfg.connection,
        network,
        &decrypt,
        body.len(),
        sha,
    ))
}

fn client_loop(
    host_port: &str,
    path: &str,
    mode: ConnectionMode,
    budget: usize,
    issued: &AtomicUsize,
    reference: &OnceLock<Vec<u8>>,
) -> Result<Vec<f64>, StreamError> {
    let mut network_ms = Vec::new();
    let mut conn: Option<HttpConnection> = None;
    while issued.fetch_add(1, Ordering::Relaxed) < budget {
        let start = Instant::now();
        let mut c = match conn.take() {
            Some(c) => c,
            None => HttpConnection::connect(host_port, REQUEST_TIMEOUT)?,
        };
        let (status, body, keep) = c.get(path, mode == ConnectionMode::Fresh)?;
        network_ms.push(start.elapsed().as_secs_f64() * 1e3);
        if status != 200 {
            return Err(StreamError::HttpError(format!("GET {path} returned {status}")));
        }
        if keep && mode == ConnectionMode::KeepAlive {
            conn = Some(c);
        }
        if *reference.get_or_init(|| body.clone()) != body {
            return Err(StreamError::BodyMismatch(path.to_string()));
        }
    }
    Ok(network_ms)
}

fn summarize(
    resolution: ResolutionLevel,
    connection: ConnectionMode,
    mut network: Vec<f64>,
    decrypt: &[f64],
    body_bytes: usize,
    body_sha256: [u8; 32],
) -> LatencyReport {
    let requests = network.len();
    let mean_ms = network.iter().sum::<f64>() / requests as f64;
    network.sort_by(f64::total_cmp);
    let decrypt_mean_ms = if decrypt.is_empty() {
        0.0
    } else {
        decrypt.iter().sum::<f64>() / decrypt.len() as f64
    };
    LatencyReport {
        resolution,
        connection,
        mean_ms,
        p50_ms: percentile_sorted(&network, 0.5),
        p95_ms: percentile_sorted(&network, 0.95),
        max_ms: *network.last().unwrap(),
        requests,
        decrypt_mean_ms,
        total_mean_ms: mean_ms + decrypt_mean_ms,
        body_bytes,
        body_sha256,
    }
}

/// Benchmarks every ladder entry in order, one report per entry.
pub fn run_matrix(
    ladder: &[LadderEntry],
    cfg: &BenchConfig,
    user_key: Option<&UserKey>,
) -> Result<Vec<LatencyReport>, StreamError> {
    ladder
        .iter()
        .map(|e| bench(&e.url, e.resolution, cfg, user_key))
        .collect()
}

/// Writes the latency table. `tags` become extra trailing columns repeated on
/// every row (e.g. seed and config hash).
pub fn write_latency_csv<W: Write>(
    mut w: W,
    reports: &[LatencyReport],
    tags: &[(&str, String)],
) -> std::io::Result<()> {
    let mut header: Vec<&str> = LATENCY_CSV_COLUMNS.to_vec();
    header.extend(tags.iter().map(|(k, _)| *k));
    writeln!(w, "{}", header.join(","))?;
    for r in reports {
        write!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.resolution, r.mean_ms, r.p50_ms, r.p95_ms, r.decrypt_mean_ms, r.total_mean_ms, r.requests, r.connection
        )?;
        for (_, v) in tags {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
