//! Policy-gated key encapsulation.
//!
//! A fresh content key is split with threshold secret sharing down the policy
//! tree; every leaf share is wrapped to that leaf attribute's X25519 public
//! key. A user key holds the matching attribute secrets, so the content key
//! is recoverable exactly when the user's attributes satisfy the policy.
//!
//! This reproduces the access semantics of ciphertext-policy ABE but is not
//! collusion resistant: two users can pool attribute secrets. The
//! [`PolicyKem`] trait is the seam for a pairing-based scheme.

use std::collections::BTreeMap;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use x25519_dalek::{PublicKey, StaticSecret};

use super::policy::{validate_label, AttributeSet, PolicyTree};
use super::shamir::{self, Secret};
use super::CryptoError;

const MIN_SEED_LEN: usize = 32;
const WRAPPED_LEN: usize = 48;

const MASTER_MAGIC: &[u8; 5] = b"PCMK1";
const PUBLIC_MAGIC: &[u8; 5] = b"PCPP1";
const USER_MAGIC: &[u8; 5] = b"PCUK1";

/// Published parameters: a deployment identifier plus one X25519 public key
/// per attribute in the universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicParams {
    deployment_id: [u8; 32],
    attributes: BTreeMap<String, [u8; 32]>,
}

#[derive(Clone)]
pub struct MasterKeys {
    public: PublicParams,
    master_secret: [u8; 32],
}

impl std::fmt::Debug for MasterKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MasterKeys")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct UserKey {
    attributes: AttributeSet,
    deployment_id: [u8; 32],
    secrets: BTreeMap<String, [u8; 32]>,
}

impl std::fmt::Debug for UserKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UserKey")
            .field("attributes", &self.attributes)
            .finish_non_exhaustive()
    }
}

/// Per-frame encapsulation: one ephemeral public key plus one wrapped share
/// per policy leaf, in leaf pre-order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyCapsule {
    pub ephemeral: [u8; 32],
    pub wrapped: Vec<[u8; WRAPPED_LEN]>,
}

/// Seam between the frame layer and the access-control mechanism.
pub trait PolicyKem {
    type Public;
    type UserSecret;

    fn encapsulate(
        &self,
        public: &Self::Public,
        policy: &PolicyTree,
        content_key: &Secret,
        rng: &mut (impl RngCore + CryptoRng),
    ) -> Result<KeyCapsule, CryptoError>;

    fn decapsulate(
        &self,
        policy: &PolicyTree,
        capsule: &KeyCapsule,
        key: &Self::UserSecret,
    ) -> Result<Secret, CryptoError>;
}

/// The reference threshold-sharing KEM.
#[derive(Debug, Clone, Copy, Default)]
pub struct ShareKem;

fn hkdf32(salt: Option<&[u8]>, ikm: &[u8], info: &[&[u8]]) -> [u8; 32] {
    let hk = Hkdf::<Sha256>::new(salt, ikm);
    let mut out = [0u8; 32];
    hk.expand_multi_info(info, &mut out)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    out
}

fn attribute_secret(master_secret: &[u8; 32], label: &str) -> [u8; 32] {
    hkdf32(None, master_secret, &[b"pcsr attribute key v1|", label.as_bytes()])
}

/// Derives master keys from a seed of at least 256 bits. Deterministic per
/// seed; the public attribute registry starts empty.
pub fn setup(seed: &[u8]) -> Result<MasterKeys, CryptoError> {
    if seed.len() < MIN_SEED_LEN {
        return Err(CryptoError::InsufficientEntropy {
            got_bits: seed.len() * 8,
        });
    }
    let master_secret = hkdf32(Some(b"pcsr setup"), seed, &[b"master secret v1"]);
    let deployment_id = hkdf32(None, &master_secret, &[b"deployment id v1"]);
    Ok(MasterKeys {
        public: PublicParams {
            deployment_id,
            attributes: BTreeMap::new(),
        },
        master_secret,
    })
}

impl MasterKeys {
    /// Adds attributes to the published universe.
    pub fn publish<'a>(&mut self, labels: impl IntoIterator<Item = &'a str>) -> Result<(), CryptoError> {
        for label in labels {
            validate_label(label)?;
            let sk = StaticSecret::from(attribute_secret(&self.master_secret, label));
            self.public
                .attributes
                .insert(label.to_string(), PublicKey::from(&sk).to_bytes());
        }
        Ok(())
    }

    pub fn public_params(&self) -> &PublicParams {
        &self.public
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MASTER_MAGIC.to_vec();
        out.extend_from_slice(&self.master_secret);
        out.extend_from_slice(&self.public.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let bad = || CryptoError::MalformedKey("master key".into());
        let rest = bytes.strip_prefix(MASTER_MAGIC).ok_or_else(bad)?;
        if rest.len() < 32 {
            return Err(bad());
        }
        let master_secret: [u8; 32] = rest[..32].try_into().unwrap();
        let public = PublicParams::from_bytes(&rest[32..])?;
        Ok(Self { public, master_secret })
    }
}

impl PublicParams {
    pub fn deployment_id(&self) -> &[u8; 32] {
        &self.deployment_id
    }

    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.attributes.keys().map(String::as_str)
    }

    /// SHA-256 over the serialized parameters.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = PUBLIC_MAGIC.to_vec();
        out.extend_from_slice(&self.deployment_id);
        write_labelled(&mut out, &self.attributes);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let bad = || CryptoError::MalformedKey("public parameters".into());
        let rest = bytes.strip_prefix(PUBLIC_MAGIC).ok_or_else(bad)?;
        if rest.len() < 32 {
            return Err(bad());
        }
        let deployment_id = rest[..32].try_into().unwrap();
        let attributes = read_labelled(&rest[32..]).ok_or_else(bad)?;
        Ok(Self {
            deployment_id,
            attributes,
        })
    }
}

fn write_labelled(out: &mut Vec<u8>, map: &BTreeMap<String, [u8; 32]>) {
    out.extend_from_slice(&(map.len() as u32).to_le_bytes());
    for (label, key) in map {
        out.extend_from_slice(&(label.len() as u16).to_le_bytes());
        out.extend_from_slice(label.as_bytes());
        out.extend_from_slice(key);
    }
}

fn read_labelled(mut b: &[u8]) -> Option<BTreeMap<String, [u8; 32]>> {
    let n = u32::from_le_bytes(b.get(..4)?.try_into().ok()?) as usize;
    b = &b[4..];
    let mut map = BTreeMap::new();
    for _ in 0..n {
        let len = u16::from_le_bytes(b.get(..2)?.try_into().ok()?) as usize;
        b = &b[2..];
        let label = std::str::from_utf8(b.get(..len)?).ok()?.to_string();
        b = &b[len..];
        let key: [u8; 32] = b.get(..32)?.try_into().ok()?;
        b = &b[32..];
        map.insert(label, key);
    }
    b.is_empty().then_some(map)
}

/// Issues a user key holding one secret per attribute.
pub fn keygen(mk: &MasterKeys, attrs: &AttributeSet) -> Result<UserKey, CryptoError> {
    if attrs.is_empty() {
        return Err(CryptoError::EmptyAttributeSet);
    }
    let secrets = attrs
        .iter()
        .map(|a| (a.to_string(), attribute_secret(&mk.master_secret, a)))
        .collect();
    Ok(UserKey {
        attributes: attrs.clone(),
        deployment_id: mk.public.deployment_id,
        secrets,
    })
}

impl UserKey {
    pub fn attributes(&self) -> &AttributeSet {
        &self.attributes
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = USER_MAGIC.to_vec();
        out.extend_from_slice(&self.deployment_id);
        write_labelled(&mut out, &self.secrets);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let bad = || CryptoError::MalformedKey("user key".into());
        let rest = bytes.strip_prefix(USER_MAGIC).ok_or_else(bad)?;
        if rest.len() < 32 {
            return Err(bad());
        }
        let deployment_id = rest[..32].try_into().unwrap();
        let secrets = read_labelled(&rest[32..]).ok_or_else(bad)?;
        let attributes = AttributeSet::new(secrets.keys().cloned()).map_err(|_| bad())?;
        Ok(Self {
            attributes,
            deployment_id,
            secrets,
        })
    }
}

impl KeyCapsule {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(36 + self.wrapped.len() * WRAPPED_LEN);
        out.extend_from_slice(&self.ephemeral);
        out.extend_from_slice(&(self.wrapped.len() as u32).to_le_bytes());
        for w in &self.wrapped {
            out.extend_from_slice(w);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let bad = || CryptoError::MalformedFrame("key capsule".into());
        if bytes.len() < 36 {
            return Err(bad());
        }
        let ephemeral = bytes[..32].try_into().unwrap();
        let n = u32::from_le_bytes(bytes[32..36].try_into().unwrap()) as usize;
        let body = &bytes[36..];
        if body.len() != n.checked_mul(WRAPPED_LEN).ok_or_else(bad)? {
            return Err(bad());
        }
        let wrapped = body.chunks_exact(WRAPPED_LEN).map(|c| c.try_into().unwrap()).collect();
        Ok(Self { ephemeral, wrapped })
    }
}

fn wrap_cipher(shared: &[u8; 32], ephemeral: &[u8; 32], leaf: usize, label: &str) -> Aes256Gcm {
    let key = hkdf32(
        Some(ephemeral),
        shared,
        &[b"pcsr leaf wrap v1|", &(leaf as u32).to_le_bytes(), label.as_bytes()],
    );
    Aes256Gcm::new(&key.into())
}

// Each wrap key is unique per (frame, leaf), so a fixed nonce is safe.
const WRAP_NONCE: [u8; 12] = [0u8; 12];

impl PolicyKem for ShareKem {
    type Public = PublicParams;
    type UserSecret = UserKey;

    fn encapsulate(
        &self,
        public: &PublicParams,
        policy: &PolicyTree,
        content_key: &Secret,
        rng: &mut (impl RngCore + CryptoRng),
    ) -> Result<KeyCapsule, CryptoError> {
        policy.validate()?;
        let mut eph_bytes = [0u8; 32];
        rng.try_fill_bytes(&mut eph_bytes)
            .map_err(|e| CryptoError::RngFailure(e.to_string()))?;
        let eph = StaticSecret::from(eph_bytes);
        let ephemeral = PublicKey::from(&eph).to_bytes();

        let mut leaf_shares = Vec::new();
        share_down(policy, *content_key, rng, &mut leaf_shares)?;

        let wrapped = leaf_shares
            .into_iter()
            .enumerate()
            .map(|(i, (label, share))| {
                let pk = public
                    .attributes
                    .get(label)
                    .ok_or_else(|| CryptoError::UnknownAttribute(label.to_string()))?;
                let shared = eph.diffie_hellman(&PublicKey::from(*pk)).to_bytes();
                let ct = wrap_cipher(&shared, &ephemeral, i, label)
                    .encrypt(
                        Nonce::from_slice(&WRAP_NONCE),
                        Payload {
                            msg: &share,
                            aad: &public.deployment_id,
                        },
                    )
                    .map_err(|_| CryptoError::AuthenticationFailure)?;
                Ok(ct.try_into().expect("32-byte share plus 16-byte tag"))
            })
            .collect::<Result<Vec<_>, CryptoError>>()?;
        Ok(KeyCapsule { ephemeral, wrapped })
    }

    fn decapsulate(&self, policy: &PolicyTree, capsule: &KeyCapsule, key: &UserKey) -> Result<Secret, CryptoError> {
        let n_leaves = policy.leaves().len();
        if capsule.wrapped.len() != n_leaves {
            return Err(CryptoError::MalformedFrame(format!(
                "capsule has {} shares for {n_leaves} policy leaves",
                capsule.wrapped.len()
            )));
        }
        let mut next_leaf = 0;
        recover(policy, capsule, key, &mut next_leaf)?.ok_or(CryptoError::PolicyNotSatisfied)
    }
}

fn share_down<'a, R: RngCore + ?Sized>(
    node: &'a PolicyTree,
    secret: Secret,
    rng: &mut R,
    out: &mut Vec<(&'a str, Secret)>,
) -> Result<(), CryptoError> {
    match node {
        PolicyTree::Leaf(label) => out.push((label, secret)),
        PolicyTree::Gate { kind, children } => {
            let k = PolicyTree::required(*kind, children.len());
            let shares =
                shamir::split(&secret, k, children.len(), rng).map_err(|e| CryptoError::RngFailure(e.to_string()))?;
            for (child, share) in children.iter().zip(shares) {
                share_down(child, share, rng, out)?;
            }
        }
    }
    Ok(())
}

fn leaf_count(node: &PolicyTree) -> usize {
    match node {
        PolicyTree::Leaf(_) => 1,
        PolicyTree::Gate { children, .. } => children.iter().map(leaf_count).sum(),
    }
}

/// Returns `Ok(None)` when the subtree is not satisfiable with `key`.
fn recover(
    node: &PolicyTree,
    capsule: &KeyCapsule,
    key: &UserKey,
    next_leaf: &mut usize,
) -> Result<Option<Secret>, CryptoError> {
    match node {
        PolicyTree::Leaf(label) => {
            let leaf = *next_leaf;
            *next_leaf += 1;
            let Some(sk) = key.secrets.get(label) else {
                return Ok(None);
            };
            let shared = StaticSecret::from(*sk)
                .diffie_hellman(&PublicKey::from(capsule.ephemeral))
                .to_bytes();
            let share = wrap_cipher(&shared, &capsule.ephemeral, leaf, label)
                .decrypt(
                    Nonce::from_slice(&WRAP_NONCE),
                    Payload {
                        msg: &capsule.wrapped[leaf],
                        aad: &key.deployment_id,
                    },
                )
                .map_err(|_| CryptoError::AuthenticationFailure)?;
            Ok(Some(share.try_into().expect("32-byte share")))
        }
        PolicyTree::Gate { kind, children } => {
            let need = PolicyTree::required(*kind, children.len());
            let mut got: Vec<(u8, Secret)> = Vec::with_capacity(need);
            for (i, child) in children.iter().enumerate() {
                if got.len() == need {
                    *next_leaf += leaf_count(child);
                    continue;
                }
                if let Some(s) = recover(child, capsule, key, next_leaf)? {
                    got.push(((i + 1) as u8, s));
                }
            }
            Ok((got.len() == need).then(|| shamir::combine(&got)))
        }
    }
}
