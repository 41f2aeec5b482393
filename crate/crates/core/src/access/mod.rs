//! Selective coordinate encryption under attribute policies.

mod frame;
mod kem;
mod policy;
mod shamir;
mod timing;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use frame::{decrypt_frame, encrypt_frame, EncryptedFrame, FRAME_VERSION};
pub use kem::{keygen, setup, KeyCapsule, MasterKeys, PolicyKem, PublicParams, ShareKem, UserKey};
pub use policy::{satisfies, validate_label, AttributeSet, GateKind, PolicyTree};
pub use timing::{time_crypto, CryptoTiming};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("attribute set is empty")]
    EmptyAttributeSet,
    #[error("invalid attribute label `{0}`, expected Key:Value")]
    InvalidAttribute(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("seed provides {got_bits} bits, at least 256 required")]
    InsufficientEntropy { got_bits: usize },
    #[error("attributes do not satisfy the frame policy")]
    PolicyNotSatisfied,
    #[error("ciphertext authentication failed")]
    AuthenticationFailure,
    #[error("random source failed: {0}")]
    RngFailure(String),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("attribute `{0}` is not in the published universe")]
    UnknownAttribute(String),
    #[error("malformed encrypted frame: {0}")]
    MalformedFrame(String),
    #[error("malformed key material: {0}")]
    MalformedKey(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CryptoError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Which coordinate columns are extracted and encrypted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Granularity {
    #[default]
    Xyz,
    Xy,
    X,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Self::Xyz, Self::Xy, Self::X];

    /// Number of protected columns, always a prefix of (x, y, z).
    pub fn columns(self) -> usize {
        match self {
            Self::Xyz => 3,
            Self::Xy => 2,
            Self::X => 1,
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Xyz => "xyz",
            Self::Xy => "xy",
            Self::X => "x",
        })
    }
}

impl FromStr for Granularity {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" => Ok(Self::Xyz),
            "xy" => Ok(Self::Xy),
            "x" => Ok(Self::X),
            other => Err(CryptoError::MalformedFrame(format!("unknown granularity `{other}`"))),
        }
    }
}
