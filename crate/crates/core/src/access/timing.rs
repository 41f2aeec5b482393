use std::fs;
use std::path::Path;
use std::time::Instant;

use super::{decrypt_frame, encrypt_frame, CryptoError, EncryptedFrame, Granularity};
use super::{PolicyTree, PublicParams, UserKey};
use crate::cloud::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CryptoTiming {
    pub encrypt_ms: f64,
    pub decrypt_ms: f64,
    pub encrypted_size_bytes: u64,
}

/// Times one encrypt and one decrypt of `cloud`.
///
/// Encryption covers column extraction, sealing, key wrapping, serialization
/// and writing the frame to `frame_path`. Decryption covers parsing the
/// serialized bytes and recovering the cloud, all in memory.
pub fn time_crypto(
    cloud: &PointCloud,
    gran: Granularity,
    policy: &PolicyTree,
    pk: &PublicParams,
    uk: &UserKey,
    frame_path: &Path,
) -> Result<CryptoTiming, CryptoError> {
    let mut rng = rand::thread_rng();

    let start = Instant::now();
    let ef = encrypt_frame(cloud, policy, gran, pk, &mut rng)?;
    let bytes = ef.to_ply_bytes()?;
    fs::write(frame_path, &bytes)?;
    let encrypt_ms = start.elapsed().as_secs_f64() * 1e3;

    let start = Instant::now();
    let parsed = EncryptedFrame::from_ply_bytes(&bytes)?;
    let plain = decrypt_frame(&parsed, uk)?;
    let decrypt_ms = start.elapsed().as_secs_f64() * 1e3;
    debug_assert_eq!(plain.len(), cloud.len());

    Ok(CryptoTiming {
        encrypt_ms,
        decrypt_ms,
        encrypted_size_bytes: bytes.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{keygen, setup, AttributeSet};
    use super::*;

    #[test]
    fn single_point_timings_are_positive() {
        let mut mk = setup(&[3u8; 32]).unwrap();
        mk.publish(["Role:Self"]).unwrap();
        let uk = keygen(&mk, &AttributeSet::parse_list("Role:Self").unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let t = time_crypto(
            &PointCloud::new(vec![[1.0, 2.0, 3.0]]).unwrap(),
            Granularity::Xyz,
            &PolicyTree::leaf("Role:Self"),
            mk.public_params(),
            &uk,
            &dir.path().join("f.ply"),
        )
        .unwrap();
        assert!(t.encrypt_ms > 0.0 && t.decrypt_ms > 0.0);
        assert_eq!(
            t.encrypted_size_bytes,
            std::fs::metadata(dir.path().join("f.ply")).unwrap().len()
        );
    }
}
