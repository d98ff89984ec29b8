//! Lamport one-time signatures over SHA-256.
//!
//! A key holds 2×256 random 32-byte secrets; the public key is their
//! digests. Signing reveals, for each bit of `SHA-256(message)` (most
//! significant bit of byte 0 first), the secret from the row selected by that
//! bit. Keys refuse to sign twice.

use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;

pub type Hash32 = [u8; 32];

pub const BITS: usize = 256;
pub const PUBLIC_KEY_LEN: usize = 2 * BITS * 32;
pub const SIGNATURE_LEN: usize = BITS * 32;

pub fn sha256(bytes: &[u8]) -> Hash32 {
    Sha256::digest(bytes).into()
}

fn digest_bit(digest: &Hash32, i: usize) -> usize {
    ((digest[i / 8] >> (7 - i % 8)) & 1) as usize
}

/// Row-major `[row][bit]` digests, row 0 first.
#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey(Vec<Hash32>);

impl PublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.concat()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != PUBLIC_KEY_LEN {
            return Err(Error::Codec(format!(
                "public key must be {PUBLIC_KEY_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        Ok(Self(bytes.chunks_exact(32).map(|c| c.try_into().expect("32-byte chunk")).collect()))
    }

    /// The pseudonym under which this key signs: SHA-256 of its bytes.
    pub fn fingerprint(&self) -> Hash32 {
        sha256(self.0.as_flattened())
    }

    fn at(&self, row: usize, i: usize) -> &Hash32 {
        &self.0[row * BITS + i]
    }

    /// The digests a signature on `message` leaves unrevealed. Together with
    /// the signature they reconstruct the whole key.
    pub fn complement(&self, message: &[u8]) -> Complement {
        let digest = sha256(message);
        Complement((0..BITS).map(|i| *self.at(1 - digest_bit(&digest, i), i)).collect())
    }

    /// Rebuilds the key a valid `signature` on `message` must come from.
    pub fn recover(message: &[u8], signature: &Signature, complement: &Complement) -> Self {
        let digest = sha256(message);
        let mut key = vec![[0u8; 32]; 2 * BITS];
        for i in 0..BITS {
            let bit = digest_bit(&digest, i);
            key[bit * BITS + i] = sha256(&signature.0[i]);
            key[(1 - bit) * BITS + i] = complement.0[i];
        }
        Self(key)
    }
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({})", hex::encode(self.fingerprint()))
    }
}

fn digests(bytes: &[u8], what: &str) -> Result<Vec<Hash32>> {
    if bytes.len() != SIGNATURE_LEN {
        return Err(Error::Codec(format!("{what} must be {SIGNATURE_LEN} bytes, got {}", bytes.len())));
    }
    Ok(bytes.chunks_exact(32).map(|c| c.try_into().expect("32-byte chunk")).collect())
}

/// 256 revealed secrets, one per digest bit.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Signature(Vec<Hash32>);

impl Signature {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.concat()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        digests(bytes, "signature").map(Self)
    }
}

/// The 256 public digests from the rows a signature did not open.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Complement(Vec<Hash32>);

impl Complement {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.concat()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        digests(bytes, "complement").map(Self)
    }
}

pub struct LamportKeypair {
    secret: Vec<Hash32>,
    public: PublicKey,
    used: bool,
}

impl LamportKeypair {
    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn is_used(&self) -> bool {
        self.used
    }

    pub fn sign(&mut self, message: &[u8]) -> Result<Signature> {
        if self.used {
            return Err(Error::OneTimeKeyReuse);
        }
        self.used = true;
        let digest = sha256(message);
        Ok(Signature(
            (0..BITS).map(|i| self.secret[digest_bit(&digest, i) * BITS + i]).collect(),
        ))
    }
}

impl std::fmt::Debug for LamportKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LamportKeypair")
            .field("public", &self.public)
            .field("used", &self.used)
            .finish_non_exhaustive()
    }
}

pub fn keygen(seed: u64) -> LamportKeypair {
    let mut rng = seed::rng(seed);
    let secret: Vec<Hash32> = (0..2 * BITS)
        .map(|_| {
            let mut s = [0u8; 32];
            rng.fill_bytes(&mut s);
            s
        })
        .collect();
    let public = PublicKey(secret.iter().map(|s| sha256(s)).collect());
    LamportKeypair { secret, public, used: false }
}

pub fn verify(public: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let digest = sha256(message);
    signature
        .0
        .iter()
        .enumerate()
        .all(|(i, preimage)| sha256(preimage) == *public.at(digest_bit(&digest, i), i))
}

/// Hands out fresh one-time keys; every call yields an unrelated keypair.
#[derive(Debug, Clone)]
pub struct KeyDistributionCenter {
    seed: u64,
    issued: u64,
}

impl KeyDistributionCenter {
    pub fn new(seed: u64) -> Self {
        Self { seed, issued: 0 }
    }

    pub fn issue(&mut self) -> LamportKeypair {
        let key = keygen(seed::derive_seed(self.seed, "lamport", self.issued));
        self.issued += 1;
        key
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_reuse() {
        let mut k = keygen(1);
        let sig = k.sign(b"epoch 0").unwrap();
        assert!(verify(k.public(), b"epoch 0", &sig));
        assert!(!verify(k.public(), b"epoch 1", &sig));
        assert!(matches!(k.sign(b"epoch 0"), Err(Error::OneTimeKeyReuse)));
        assert!(k.is_used());
    }

    #[test]
    fn public_is_digest_of_secret() {
        let k = keygen(9);
        for (s, p) in k.secret.iter().zip(&k.public.0) {
            assert_eq!(sha256(s), *p);
        }
    }

    #[test]
    fn empty_digest_reference() {
        assert_eq!(
            hex::encode(sha256(b"")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn bytes_round_trip() {
        let mut k = keygen(3);
        let sig = k.sign(b"m").unwrap();
        let pk = PublicKey::from_bytes(&k.public().to_bytes()).unwrap();
        assert_eq!(&pk, k.public());
        assert_eq!(Signature::from_bytes(&sig.to_bytes()).unwrap(), sig);
        assert!(PublicKey::from_bytes(&[0; 31]).is_err());
    }

    #[test]
    fn recovery_matches_only_for_valid_signatures() {
        let mut k = keygen(8);
        let sig = k.sign(b"payload").unwrap();
        let comp = k.public().complement(b"payload");
        assert_eq!(&PublicKey::recover(b"payload", &sig, &comp), k.public());
        assert_ne!(&PublicKey::recover(b"payloae", &sig, &comp), k.public());
    }

    #[test]
    fn kdc_keys_are_distinct() {
        let mut kdc = KeyDistributionCenter::new(5);
        let a = kdc.issue();
        let b = kdc.issue();
        assert_ne!(a.public().fingerprint(), b.public().fingerprint());
        assert_eq!(kdc.issued(), 2);
    }
}
