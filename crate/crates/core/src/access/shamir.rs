//! Byte-wise Shamir secret sharing over GF(2^8) (AES polynomial 0x11b).

use rand::RngCore;

pub const SECRET_LEN: usize = 32;
pub type Secret = [u8; SECRET_LEN];

const fn tables() -> ([u8; 256], [u8; 512]) {
    let mut log = [0u8; 256];
    let mut exp = [0u8; 512];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        log[x as usize] = i as u8;
        // multiply by the generator 0x03
        let mut y = x ^ (x << 1);
        if y & 0x100 != 0 {
            y ^= 0x11b;
        }
        x = y;
        i += 1;
    }
    let mut j = 255;
    while j < 512 {
        exp[j] = exp[j - 255];
        j += 1;
    }
    (log, exp)
}

const TABLES: ([u8; 256], [u8; 512]) = tables();

#[inline]
fn mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        return 0;
    }
    let (log, exp) = &TABLES;
    exp[log[a as usize] as usize + log[b as usize] as usize]
}

#[inline]
fn div(a: u8, b: u8) -> u8 {
    debug_assert!(b != 0);
    if a == 0 {
        return 0;
    }
    let (log, exp) = &TABLES;
    exp[log[a as usize] as usize + 255 - log[b as usize] as usize]
}

/// Splits `secret` into `n` shares at x = 1..=n, any `k` of which recover it.
pub fn split<R: RngCore + ?Sized>(
    secret: &Secret,
    k: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Secret>, rand::Error> {
    assert!((1..=n).contains(&k) && n <= 255);
    let mut coeffs = vec![[0u8; SECRET_LEN]; k - 1];
    for c in coeffs.iter_mut() {
        rng.try_fill_bytes(c)?;
    }
    Ok((1..=n as u8)
        .map(|x| {
            let mut share = [0u8; SECRET_LEN];
            for (b, out) in share.iter_mut().enumerate() {
                // Horner from the highest coefficient down to the secret
                let mut acc = 0u8;
                for c in coeffs.iter().rev() {
                    acc = mul(acc, x) ^ c[b];
                }
                *out = mul(acc, x) ^ secret[b];
            }
            share
        })
        .collect())
}

/// Lagrange interpolation at zero. Share x coordinates must be distinct and
/// non-zero.
pub fn combine(shares: &[(u8, Secret)]) -> Secret {
    let mut secret = [0u8; SECRET_LEN];
    for (i, (xi, yi)) in shares.iter().enumerate() {
        let mut num = 1u8;
        let mut den = 1u8;
        for (j, (xj, _)) in shares.iter().enumerate() {
            if i != j {
                num = mul(num, *xj);
                den = mul(den, xi ^ xj);
            }
        }
        let basis = div(num, den);
        for (s, y) in secret.iter_mut().zip(yi) {
            *s ^= mul(basis, *y);
        }
    }
    secret
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn field_inverse() {
        for a in 1..=255u8 {
            assert_eq!(mul(a, div(1, a)), 1);
        }
        assert_eq!(mul(0x57, 0x83), 0xc1);
    }

    #[test]
    fn every_k_subset_recovers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        for n in 1..=5usize {
            for k in 1..=n {
                let shares = split(&secret, k, n, &mut rng).unwrap();
                for mask in 0u32..(1 << n) {
                    let subset: Vec<(u8, Secret)> = (0..n)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| ((i + 1) as u8, shares[i]))
                        .collect();
                    if subset.len() >= k {
                        assert_eq!(combine(&subset[..k]), secret);
                    } else if k > 1 && !subset.is_empty() {
                        assert_ne!(combine(&subset), secret);
                    }
                }
            }
        }
    }
}
