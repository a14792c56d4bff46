//! Operation-counting wrapper around any provider.
//!
//! The counts feed the deterministic cost model used when run logs must be
//! reproducible byte for byte.

use std::ops::Sub;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{CryptoError, CryptoProvider, KemKeyPair, Secret, SignatureKeyPair, NONCE_LEN};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub hash: u64,
    pub hashed_bytes: u64,
    pub mac: u64,
    pub kdf: u64,
    pub kem_keygen: u64,
    pub kem_encap: u64,
    pub kem_decap: u64,
    pub aead: u64,
    pub aead_bytes: u64,
    pub sign: u64,
    pub verify: u64,
}

impl OpCounts {
    /// Weighted cost in nanoseconds. Weights approximate X25519/Ed25519 and
    /// SHA-256 costs on a contemporary x86-64 core.
    pub fn model_cost_ns(&self) -> u64 {
        self.hash * 250
            + self.hashed_bytes * 3
            + self.mac * 600
            + self.kdf * 1_200
            + self.kem_keygen * 30_000
            + self.kem_encap * 60_000
            + self.kem_decap * 30_000
            + self.aead * 400
            + self.aead_bytes * 2
            + self.sign * 20_000
            + self.verify * 45_000
    }
}

impl Sub for OpCounts {
    type Output = OpCounts;

    fn sub(self, rhs: OpCounts) -> OpCounts {
        OpCounts {
            hash: self.hash - rhs.hash,
            hashed_bytes: self.hashed_bytes - rhs.hashed_bytes,
            mac: self.mac - rhs.mac,
            kdf: self.kdf - rhs.kdf,
            kem_keygen: self.kem_keygen - rhs.kem_keygen,
            kem_encap: self.kem_encap - rhs.kem_encap,
            kem_decap: self.kem_decap - rhs.kem_decap,
            aead: self.aead - rhs.aead,
            aead_bytes: self.aead_bytes - rhs.aead_bytes,
            sign: self.sign - rhs.sign,
            verify: self.verify - rhs.verify,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    hash: AtomicU64,
    hashed_bytes: AtomicU64,
    mac: AtomicU64,
    kdf: AtomicU64,
    kem_keygen: AtomicU64,
    kem_encap: AtomicU64,
    kem_decap: AtomicU64,
    aead: AtomicU64,
    aead_bytes: AtomicU64,
    sign: AtomicU64,
    verify: AtomicU64,
}

fn bump(c: &AtomicU64, by: u64) {
    c.fetch_add(by, Ordering::Relaxed);
}

#[derive(Debug)]
pub struct MeteredProvider {
    inner: Arc<dyn CryptoProvider>,
    counters: Counters,
}

impl MeteredProvider {
    pub fn new(inner: Arc<dyn CryptoProvider>) -> Self {
        MeteredProvider {
            inner,
            counters: Counters::default(),
        }
    }

    pub fn snapshot(&self) -> OpCounts {
        let c = &self.counters;
        let l = |a: &AtomicU64| a.load(Ordering::Relaxed);
        OpCounts {
            hash: l(&c.hash),
            hashed_bytes: l(&c.hashed_bytes),
            mac: l(&c.mac),
            kdf: l(&c.kdf),
            kem_keygen: l(&c.kem_keygen),
            kem_encap: l(&c.kem_encap),
            kem_decap: l(&c.kem_decap),
            aead: l(&c.aead),
            aead_bytes: l(&c.aead_bytes),
            sign: l(&c.sign),
            verify: l(&c.verify),
        }
    }
}

impl CryptoProvider for MeteredProvider {
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn secret_len(&self) -> usize {
        self.inner.secret_len()
    }

    fn hash(&self, data: &[u8]) -> Vec<u8> {
        bump(&self.counters.hash, 1);
        bump(&self.counters.hashed_bytes, data.len() as u64);
        self.inner.hash(data)
    }

    fn mac(&self, key: &Secret, data: &[u8]) -> Vec<u8> {
        bump(&self.counters.mac, 1);
        bump(&self.counters.hashed_bytes, data.len() as u64);
        self.inner.mac(key, data)
    }

    fn kdf_derive(&self, secret: &Secret, label: &str, context: &[u8]) -> Secret {
        bump(&self.counters.kdf, 1);
        self.inner.kdf_derive(secret, label, context)
    }

    fn random_secret(&self, rng: &mut dyn RngCore) -> Secret {
        self.inner.random_secret(rng)
    }

    fn kem_generate(&self, rng: &mut dyn RngCore) -> KemKeyPair {
        bump(&self.counters.kem_keygen, 1);
        self.inner.kem_generate(rng)
    }

    fn kem_derive(&self, seed: &Secret) -> KemKeyPair {
        bump(&self.counters.kem_keygen, 1);
        self.inner.kem_derive(seed)
    }

    fn kem_encap(
        &self,
        public_key: &[u8],
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<u8>, Secret), CryptoError> {
        bump(&self.counters.kem_encap, 1);
        self.inner.kem_encap(public_key, rng)
    }

    fn kem_decap(&self, private_key: &[u8], ciphertext: &[u8]) -> Result<Secret, CryptoError> {
        bump(&self.counters.kem_decap, 1);
        self.inner.kem_decap(private_key, ciphertext)
    }

    fn aead_seal(
        &self,
        key: &Secret,
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        plaintext: &[u8],
    ) -> Vec<u8> {
        bump(&self.counters.aead, 1);
        bump(&self.counters.aead_bytes, plaintext.len() as u64);
        self.inner.aead_seal(key, nonce, aad, plaintext)
    }

    fn aead_open(
        &self,
        key: &Secret,
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        ciphertext: &[u8],
    ) -> Result<Vec<u8>, CryptoError> {
        bump(&self.counters.aead, 1);
        bump(&self.counters.aead_bytes, ciphertext.len() as u64);
        self.inner.aead_open(key, nonce, aad, ciphertext)
    }

    fn signature_generate(&self, rng: &mut dyn RngCore) -> SignatureKeyPair {
        self.inner.signature_generate(rng)
    }

    fn sign(&self, private_key: &[u8], message: &[u8]) -> Vec<u8> {
        bump(&self.counters.sign, 1);
        bump(&self.counters.hashed_bytes, message.len() as u64);
        self.inner.sign(private_key, message)
    }

    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
        bump(&self.counters.verify, 1);
        bump(&self.counters.hashed_bytes, message.len() as u64);
        self.inner.verify(public_key, message, signature)
    }
}
