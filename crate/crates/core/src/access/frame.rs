//! The encrypted frame container and its PLY encoding.
//!
//! On disk a frame is an ordinary binary PLY whose protected columns hold
//! 0.0. Metadata rides in header comments:
//!
//! ```text
//! comment pcsr-frame: v1 gran=xyz count=430814
//! comment pcsr-policy: <base64 policy text>
//! comment pcsr-nonce: <base64 96-bit nonce>
//! comment pcsr-kem: <base64 key capsule>
//! comment pcsr-ct: <base64 ciphertext chunk>   (repeated)
//! ```

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{CryptoRng, RngCore};

use super::kem::{KeyCapsule, PolicyKem, PublicParams, ShareKem, UserKey};
use super::policy::PolicyTree;
use super::{CryptoError, Granularity};
use crate::cloud::PointCloud;
use crate::ply::{parse_ply_document, write_ply_with_comments, PlyEncoding};

pub const FRAME_VERSION: &str = "v1";
const CT_LINE_CHARS: usize = 65_536;

#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedFrame {
    pub residual: PointCloud,
    pub policy: PolicyTree,
    pub granularity: Granularity,
    pub nonce: [u8; 12],
    pub ciphertext: Vec<u8>,
    pub capsule: KeyCapsule,
    pub original_count: usize,
}

fn aad(gran: Granularity, count: usize, policy: &PolicyTree) -> Vec<u8> {
    format!("pcsr-frame {FRAME_VERSION}|{gran}|{count}|{policy}").into_bytes()
}

/// Extracts the protected columns, encrypts them under a fresh content key
/// and wraps that key to `policy`.
pub fn encrypt_frame(
    cloud: &PointCloud,
    policy: &PolicyTree,
    gran: Granularity,
    pk: &PublicParams,
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<EncryptedFrame, CryptoError> {
    if cloud.is_empty() {
        return Err(CryptoError::EmptyCloud);
    }
    let cols = gran.columns();
    let mut plain = Vec::with_capacity(cloud.len() * cols * 8);
    let mut residual = cloud.points().to_vec();
    for p in residual.iter_mut() {
        for v in &mut p[..cols] {
            plain.extend_from_slice(&v.to_le_bytes());
            *v = 0.0;
        }
    }

    let mut content_key = [0u8; 32];
    let mut nonce = [0u8; 12];
    rng.try_fill_bytes(&mut content_key)
        .and_then(|_| rng.try_fill_bytes(&mut nonce))
        .map_err(|e| CryptoError::RngFailure(e.to_string()))?;

    let ciphertext = Aes256Gcm::new(&content_key.into())
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: &plain,
                aad: &aad(gran, cloud.len(), policy),
            },
        )
        .map_err(|_| CryptoError::AuthenticationFailure)?;
    let capsule = ShareKem.encapsulate(pk, policy, &content_key, rng)?;

    let residual = PointCloud::new(residual).expect("zeroed columns stay finite");
    Ok(EncryptedFrame {
        residual: match cloud.source_id() {
            Some(id) => residual.with_source_id(id),
            None => residual,
        },
        policy: policy.clone(),
        granularity: gran,
        nonce,
        ciphertext,
        capsule,
        original_count: cloud.len(),
    })
}

/// Recovers the original cloud in memory. The content key is unwrapped
/// first, so unauthorized keys fail with `PolicyNotSatisfied` before any
/// ciphertext is touched.
pub fn decrypt_frame(ef: &EncryptedFrame, uk: &UserKey) -> Result<PointCloud, CryptoError> {
    let cols = ef.granularity.columns();
    if ef.residual.len() != ef.original_count {
        return Err(CryptoError::MalformedFrame(format!(
            "residual has {} points, frame declares {}",
            ef.residual.len(),
            ef.original_count
        )));
    }
    let content_key = ShareKem.decapsulate(&ef.policy, &ef.capsule, uk)?;
    let plain = Aes256Gcm::new(&content_key.into())
        .decrypt(
            Nonce::from_slice(&ef.nonce),
            Payload {
                msg: &ef.ciphertext,
                aad: &aad(ef.granularity, ef.original_count, &ef.policy),
            },
        )
        .map_err(|_| CryptoError::AuthenticationFailure)?;
    if plain.len() != ef.original_count * cols * 8 {
        return Err(CryptoError::MalformedFrame("plaintext length mismatch".into()));
    }

    let mut points = ef.residual.points().to_vec();
    for (p, chunk) in points.iter_mut().zip(plain.chunks_exact(cols * 8)) {
        for (v, bytes) in p[..cols].iter_mut().zip(chunk.chunks_exact(8)) {
            *v = f64::from_le_bytes(bytes.try_into().unwrap());
        }
    }
    let cloud = PointCloud::new(points).map_err(|e| CryptoError::MalformedFrame(format!("decrypted cloud: {e}")))?;
    Ok(match ef.residual.source_id() {
        Some(id) => cloud.with_source_id(id),
        None => cloud,
    })
}

impl EncryptedFrame {
    pub fn to_ply_bytes(&self) -> Result<Vec<u8>, CryptoError> {
        let mut comments = vec![
            format!(
                "pcsr-frame: {FRAME_VERSION} gran={} count={}",
                self.granularity, self.original_count
            ),
            format!("pcsr-policy: {}", B64.encode(self.policy.to_string())),
            format!("pcsr-nonce: {}", B64.encode(self.nonce)),
            format!("pcsr-kem: {}", B64.encode(self.capsule.to_bytes())),
        ];
        let ct = B64.encode(&self.ciphertext);
        comments.extend(
            ct.as_bytes()
                .chunks(CT_LINE_CHARS)
                .map(|c| format!("pcsr-ct: {}", std::str::from_utf8(c).unwrap())),
        );
        write_ply_with_comments(&self.residual, PlyEncoding::BINARY_F64, &comments)
            .map_err(|e| CryptoError::MalformedFrame(e.to_string()))
    }

    pub fn from_ply_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let bad = |what: &str| CryptoError::MalformedFrame(what.to_string());
        let doc = parse_ply_document(bytes).map_err(|e| CryptoError::MalformedFrame(e.to_string()))?;

        let mut header = None;
        let mut policy = None;
        let mut nonce = None;
        let mut kem = None;
        let mut ct = String::new();
        for c in &doc.comments {
            let Some((key, value)) = c.split_once(": ") else {
                continue;
            };
            match key {
                "pcsr-frame" => header = Some(value),
                "pcsr-policy" => policy = Some(value),
                "pcsr-nonce" => nonce = Some(value),
                "pcsr-kem" => kem = Some(value),
                "pcsr-ct" => ct.push_str(value),
                _ => {}
            }
        }

        let header = header.ok_or_else(|| bad("missing pcsr-frame comment"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(FRAME_VERSION) {
            return Err(bad("unsupported frame version"));
        }
        let mut granularity = None;
        let mut count = None;
        for f in fields {
            match f.split_once('=') {
                Some(("gran", g)) => granularity = Some(g.parse::<Granularity>()?),
                Some(("count", n)) => count = n.parse::<usize>().ok(),
                _ => return Err(bad("unknown pcsr-frame field")),
            }
        }
        let granularity = granularity.ok_or_else(|| bad("missing granularity"))?;
        let original_count = count.ok_or_else(|| bad("missing count"))?;

        let decode = |field: Option<&str>, what: &str| -> Result<Vec<u8>, CryptoError> {
            B64.decode(field.ok_or_else(|| bad(&format!("missing {what}")))?)
                .map_err(|_| bad(&format!("bad base64 in {what}")))
        };
        let policy_text = String::from_utf8(decode(policy, "policy")?).map_err(|_| bad("policy is not UTF-8"))?;
        let policy = PolicyTree::parse(&policy_text)?;
        let nonce: [u8; 12] = decode(nonce, "nonce")?
            .try_into()
            .map_err(|_| bad("nonce must be 12 bytes"))?;
        let capsule = KeyCapsule::from_bytes(&decode(kem, "key capsule")?)?;
        let ciphertext = B64.decode(&ct).map_err(|_| bad("bad base64 in ciphertext"))?;

        if doc.cloud.len() != original_count {
            return Err(bad("vertex count differs from frame count"));
        }
        Ok(Self {
            residual: doc.cloud,
            policy,
            granularity,
            nonce,
            ciphertext,
            capsule,
            original_count,
        })
    }
}
