//! Serving pre-encrypted frames over HTTP/1.1 and measuring what a streaming
//! client sees: per-request network time plus in-memory decryption time.

mod bench;
mod http;
mod server;

use std::io;
use std::path::PathBuf;

use pcsr_core::access::CryptoError;
use thiserror::Error;

pub use bench::{
    bench, run_matrix, write_latency_csv, BenchConfig, ConnectionMode, LadderEntry, LatencyReport, LATENCY_CSV_COLUMNS,
};
pub use http::HttpConnection;
pub use server::{serve, serve_with, ServeOptions, ServerHandle, ShutdownTrigger, DEFAULT_WORKERS};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("no frames to serve in {dir}: {detail}")]
    MissingFrames { dir: PathBuf, detail: String },
    #[error("connection to {target} failed: {reason}")]
    ConnectionFailed { target: String, reason: String },
    #[error("HTTP error: {0}")]
    HttpError(String),
    #[error("user key does not satisfy the frame policy")]
    PolicyNotSatisfied,
    #[error("served body changed between requests to {0}")]
    BodyMismatch(String),
    #[error("invalid bench configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Crypto(CryptoError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<CryptoError> for StreamError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::PolicyNotSatisfied => StreamError::PolicyNotSatisfied,
            other => StreamError::Crypto(other),
        }
    }
}
