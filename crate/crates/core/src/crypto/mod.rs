//! Cryptographic services behind one object-safe interface.
//!
//! Two providers ship with the crate:
//!
//! * [`RustCryptoProvider`]: X25519 KEM, ChaCha20-Poly1305, HKDF/HMAC-SHA-256
//!   and Ed25519. Used for every measurement.
//! * [`ToyProvider`]: a fast, insecure suite over the multiplicative group
//!   modulo 2^61-1. Same contracts, roughly two orders of magnitude cheaper,
//!   so large randomized protocol suites stay quick.
//!
//! Providers are stateless. All randomness comes from the `rng` argument, so a
//! seeded RNG makes every key, ciphertext and signature reproducible.

use std::fmt;

use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub mod metered;
mod rust_crypto;
mod toy;

pub use metered::{MeteredProvider, OpCounts};
pub use rust_crypto::RustCryptoProvider;
pub use toy::ToyProvider;

/// Length of every AEAD nonce.
pub const NONCE_LEN: usize = 12;

/// Length of secrets produced by both shipped providers (SHA-256 output).
pub const SECRET_LEN: usize = 32;

/// Fixed-length secret key material. Deliberately not serializable.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(Vec<u8>);

impl Secret {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Secret(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Secret([REDACTED; {}])", self.0.len())
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct KemKeyPair {
    pub public_key: Vec<u8>,
    pub private_key: Vec<u8>,
}

impl fmt::Debug for KemKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KemKeyPair")
            .field("public_key", &hex(&self.public_key))
            .finish_non_exhaustive()
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SignatureKeyPair {
    pub public_key: Vec<u8>,
    pub private_key: Vec<u8>,
}

impl fmt::Debug for SignatureKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SignatureKeyPair")
            .field("public_key", &hex(&self.public_key))
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("KEM decapsulation failed")]
    Decap,
    #[error("AEAD authentication failed")]
    Open,
    #[error("malformed public key")]
    MalformedKey,
}

pub trait CryptoProvider: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Output length of [`kdf_derive`](Self::kdf_derive) and of every [`Secret`].
    fn secret_len(&self) -> usize {
        SECRET_LEN
    }

    fn hash(&self, data: &[u8]) -> Vec<u8>;

    fn mac(&self, key: &Secret, data: &[u8]) -> Vec<u8>;

    /// Labelled, context-bound derivation. Panics on an empty label.
    fn kdf_derive(&self, secret: &Secret, label: &str, context: &[u8]) -> Secret;

    fn random_secret(&self, rng: &mut dyn RngCore) -> Secret {
        let mut bytes = vec![0u8; self.secret_len()];
        rng.fill_bytes(&mut bytes);
        Secret(bytes)
    }

    fn kem_generate(&self, rng: &mut dyn RngCore) -> KemKeyPair;

    /// Deterministically derives a KEM key pair from secret material.
    fn kem_derive(&self, seed: &Secret) -> KemKeyPair;

    fn kem_encap(
        &self,
        public_key: &[u8],
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<u8>, Secret), CryptoError>;

    fn kem_decap(&self, private_key: &[u8], ciphertext: &[u8]) -> Result<Secret, CryptoError>;

    fn aead_seal(
        &self,
        key: &Secret,
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        plaintext: &[u8],
    ) -> Vec<u8>;

    fn aead_open(
        &self,
        key: &Secret,
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        ciphertext: &[u8],
    ) -> Result<Vec<u8>, CryptoError>;

    fn signature_generate(&self, rng: &mut dyn RngCore) -> SignatureKeyPair;

    fn sign(&self, private_key: &[u8], message: &[u8]) -> Vec<u8>;

    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool;
}

/// KEM output plus AEAD ciphertext: single-shot public key encryption.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HpkeCiphertext {
    pub kem_output: Vec<u8>,
    pub ciphertext: Vec<u8>,
}

/// Encrypts `plaintext` to `public_key`. The AEAD key is single use, so the
/// nonce is fixed.
pub fn hpke_seal(
    crypto: &dyn CryptoProvider,
    public_key: &[u8],
    info: &[u8],
    aad: &[u8],
    plaintext: &[u8],
    rng: &mut dyn RngCore,
) -> Result<HpkeCiphertext, CryptoError> {
    let (kem_output, shared) = crypto.kem_encap(public_key, rng)?;
    let key = crypto.kdf_derive(&shared, "hpke key", info);
    let ciphertext = crypto.aead_seal(&key, &[0u8; NONCE_LEN], aad, plaintext);
    Ok(HpkeCiphertext {
        kem_output,
        ciphertext,
    })
}

pub fn hpke_open(
    crypto: &dyn CryptoProvider,
    private_key: &[u8],
    info: &[u8],
    aad: &[u8],
    ct: &HpkeCiphertext,
) -> Result<Vec<u8>, CryptoError> {
    let shared = crypto.kem_decap(private_key, &ct.kem_output)?;
    let key = crypto.kdf_derive(&shared, "hpke key", info);
    crypto.aead_open(&key, &[0u8; NONCE_LEN], aad, &ct.ciphertext)
}

pub(crate) fn sha256(data: &[u8]) -> Vec<u8> {
    Sha256::digest(data).to_vec()
}

pub(crate) fn hmac_sha256(key: &[u8], data: &[u8]) -> Vec<u8> {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(data);
    mac.finalize().into_bytes().to_vec()
}

/// HKDF-Expand over the secret as PRK, with a length-prefixed label and context.
pub(crate) fn hkdf_sha256_derive(secret: &Secret, label: &str, context: &[u8]) -> Secret {
    assert!(!label.is_empty(), "kdf label must be non-empty");
    let hk = Hkdf::<Sha256>::new(None, secret.as_bytes());
    let full_label = format!("mlsim {label}");
    let mut info = Vec::with_capacity(6 + full_label.len() + context.len());
    info.extend_from_slice(&(full_label.len() as u16).to_be_bytes());
    info.extend_from_slice(full_label.as_bytes());
    info.extend_from_slice(&(context.len() as u32).to_be_bytes());
    info.extend_from_slice(context);
    let mut out = vec![0u8; SECRET_LEN];
    hk.expand(&info, &mut out)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    Secret(out)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn providers() -> Vec<Box<dyn CryptoProvider>> {
        vec![Box::new(RustCryptoProvider), Box::new(ToyProvider)]
    }

    #[test]
    fn kdf_is_deterministic_and_label_separated() {
        for p in providers() {
            let s = Secret::from_bytes(vec![7u8; 32]);
            assert_eq!(p.kdf_derive(&s, "path", b"ctx"), p.kdf_derive(&s, "path", b"ctx"));
            assert_ne!(p.kdf_derive(&s, "path", b"ctx"), p.kdf_derive(&s, "node", b"ctx"));
            assert_ne!(p.kdf_derive(&s, "path", b"ctx"), p.kdf_derive(&s, "path", b"ctx2"));
            assert_eq!(p.kdf_derive(&s, "path", b"").len(), p.secret_len());
        }
    }

    #[test]
    fn kdf_golden_vector() {
        // Independent oracle: HMAC-SHA256 extract with a zero salt, then one expand block.
        let s = Secret::from_bytes(vec![0x01; 32]);
        let out = RustCryptoProvider.kdf_derive(&s, "epoch", b"");
        assert_eq!(
            hex(out.as_bytes()),
            "875762dc6017fa4f2c42918725fdb61b0c62060a66c32a1812235bf7541f1cc2"
        );
        assert_eq!(ToyProvider.kdf_derive(&s, "epoch", b""), out);
    }

    #[test]
    #[should_panic(expected = "non-empty")]
    fn kdf_rejects_empty_label() {
        RustCryptoProvider.kdf_derive(&Secret::from_bytes(vec![0; 32]), "", b"");
    }

    #[test]
    fn hpke_round_trip_and_wrong_key() {
        for p in providers() {
            let mut rng = ChaCha20Rng::seed_from_u64(3);
            let kp = p.kem_generate(&mut rng);
            let other = p.kem_generate(&mut rng);
            let ct = hpke_seal(p.as_ref(), &kp.public_key, b"info", b"aad", b"hello", &mut rng)
                .unwrap();
            assert_eq!(
                hpke_open(p.as_ref(), &kp.private_key, b"info", b"aad", &ct).unwrap(),
                b"hello"
            );
            assert!(hpke_open(p.as_ref(), &other.private_key, b"info", b"aad", &ct).is_err());
            assert!(hpke_open(p.as_ref(), &kp.private_key, b"info", b"aaX", &ct).is_err());
        }
    }

    #[test]
    fn secret_debug_is_redacted() {
        let s = Secret::from_bytes(vec![0xAB; 32]);
        assert_eq!(format!("{s:?}"), "Secret([REDACTED; 32])");
    }
}
