//! Insecure, fast stand-in suite for large randomized tests.
//!
//! Diffie-Hellman and Schnorr signatures run in the multiplicative group of
//! integers modulo the Mersenne prime 2^61-1. The AEAD is a SHA-256 counter
//! keystream with a truncated HMAC tag. Key derivation is shared with the
//! production provider.

use rand::RngCore;

use super::{
    hkdf_sha256_derive, hmac_sha256, sha256, CryptoError, CryptoProvider, KemKeyPair, Secret,
    SignatureKeyPair, NONCE_LEN,
};

const P: u64 = (1u64 << 61) - 1;
const G: u64 = 37;
const TAG_LEN: usize = 16;

#[derive(Debug, Clone, Copy, Default)]
pub struct ToyProvider;

fn mulmod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn powmod(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1u64;
    base %= P;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mulmod(acc, base, P);
        }
        base = mulmod(base, base, P);
        exp >>= 1;
    }
    acc
}

fn scalar_from(bytes: &[u8]) -> u64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[..8]);
    // Exponents in [1, p-2].
    u64::from_be_bytes(b) % (P - 2) + 1
}

fn element(bytes: &[u8]) -> Option<u64> {
    let b: [u8; 8] = bytes.try_into().ok()?;
    let v = u64::from_be_bytes(b);
    (v > 1 && v < P).then_some(v)
}

fn keypair_from_scalar(x: u64) -> KemKeyPair {
    KemKeyPair {
        public_key: powmod(G, x).to_be_bytes().to_vec(),
        private_key: x.to_be_bytes().to_vec(),
    }
}

fn shared(dh: u64, enc: &[u8], recipient: &[u8]) -> Secret {
    let mut ctx = enc.to_vec();
    ctx.extend_from_slice(recipient);
    hkdf_sha256_derive(&Secret::from_bytes(dh.to_be_bytes().to_vec()), "kem shared", &ctx)
}

fn keystream_xor(key: &Secret, nonce: &[u8; NONCE_LEN], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    for (i, chunk) in data.chunks(32).enumerate() {
        let mut block_in = key.as_bytes().to_vec();
        block_in.extend_from_slice(nonce);
        block_in.extend_from_slice(&(i as u64).to_be_bytes());
        let block = sha256(&block_in);
        out.extend(chunk.iter().zip(block).map(|(a, b)| a ^ b));
    }
    out
}

fn tag(key: &Secret, nonce: &[u8; NONCE_LEN], aad: &[u8], ct: &[u8]) -> Vec<u8> {
    let mut data = nonce.to_vec();
    data.extend_from_slice(&(aad.len() as u64).to_be_bytes());
    data.extend_from_slice(aad);
    data.extend_from_slice(ct);
    let mut t = hmac_sha256(key.as_bytes(), &data);
    t.truncate(TAG_LEN);
    t
}

fn challenge(r: u64, y: &[u8], msg: &[u8]) -> u64 {
    let mut data = r.to_be_bytes().to_vec();
    data.extend_from_slice(y);
    data.extend_from_slice(msg);
    scalar_from(&sha256(&data))
}

impl CryptoProvider for ToyProvider {
    fn name(&self) -> &'static str {
        "toy-insecure"
    }

    fn hash(&self, data: &[u8]) -> Vec<u8> {
        sha256(data)
    }

    fn mac(&self, key: &Secret, data: &[u8]) -> Vec<u8> {
        hmac_sha256(key.as_bytes(), data)
    }

    fn kdf_derive(&self, secret: &Secret, label: &str, context: &[u8]) -> Secret {
        hkdf_sha256_derive(secret, label, context)
    }

    fn kem_generate(&self, rng: &mut dyn RngCore) -> KemKeyPair {
        let mut b = [0u8; 8];
        rng.fill_bytes(&mut b);
        keypair_from_scalar(scalar_from(&b))
    }

    fn kem_derive(&self, seed: &Secret) -> KemKeyPair {
        keypair_from_scalar(scalar_from(hkdf_sha256_derive(seed, "kem derive", b"").as_bytes()))
    }

    fn kem_encap(
        &self,
        public_key: &[u8],
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<u8>, Secret), CryptoError> {
        let y = element(public_key).ok_or(CryptoError::MalformedKey)?;
        let eph = self.kem_generate(rng);
        let x = u64::from_be_bytes(eph.private_key.as_slice().try_into().expect("8 bytes"));
        let dh = powmod(y, x);
        Ok((eph.public_key.clone(), shared(dh, &eph.public_key, public_key)))
    }

    fn kem_decap(&self, private_key: &[u8], ciphertext: &[u8]) -> Result<Secret, CryptoError> {
        let x: [u8; 8] = private_key.try_into().map_err(|_| CryptoError::Decap)?;
        let x = u64::from_be_bytes(x);
        let e = element(ciphertext).ok_or(CryptoError::Decap)?;
        let own = powmod(G, x).to_be_bytes();
        Ok(shared(powmod(e, x), ciphertext, &own))
    }

    fn aead_seal(
        &self,
        key: &Secret,
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        plaintext: &[u8],
    ) -> Vec<u8> {
        let mut ct = keystream_xor(key, nonce, plaintext);
        let t = tag(key, nonce, aad, &ct);
        ct.extend_from_slice(&t);
        ct
    }

    fn aead_open(
        &self,
        key: &Secret,
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        ciphertext: &[u8],
    ) -> Result<Vec<u8>, CryptoError> {
        if ciphertext.len() < TAG_LEN {
            return Err(CryptoError::Open);
        }
        let (body, t) = ciphertext.split_at(ciphertext.len() - TAG_LEN);
        if tag(key, nonce, aad, body) != t {
            return Err(CryptoError::Open);
        }
        Ok(keystream_xor(key, nonce, body))
    }

    fn signature_generate(&self, rng: &mut dyn RngCore) -> SignatureKeyPair {
        let kp = self.kem_generate(rng);
        // The private key carries the public key too, for the challenge hash.
        let mut private_key = kp.private_key;
        private_key.extend_from_slice(&kp.public_key);
        SignatureKeyPair {
            public_key: kp.public_key,
            private_key,
        }
    }

    fn sign(&self, private_key: &[u8], message: &[u8]) -> Vec<u8> {
        let x = u64::from_be_bytes(private_key[..8].try_into().expect("toy signing key"));
        let y = &private_key[8..16];
        let mut nonce_in = private_key[..8].to_vec();
        nonce_in.extend_from_slice(message);
        let k = scalar_from(&sha256(&nonce_in));
        let r = powmod(G, k);
        let e = challenge(r, y, message);
        let s = ((k as u128 + mulmod(e, x, P - 1) as u128) % (P - 1) as u128) as u64;
        let mut sig = r.to_be_bytes().to_vec();
        sig.extend_from_slice(&s.to_be_bytes());
        sig
    }

    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
        let Some(y) = element(public_key) else {
            return false;
        };
        if signature.len() != 16 {
            return false;
        }
        let Some(r) = element(&signature[..8]) else {
            return false;
        };
        let s = u64::from_be_bytes(signature[8..].try_into().expect("8 bytes"));
        let e = challenge(r, public_key, message);
        powmod(G, s) == mulmod(r, powmod(y, e), P)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn powmod_fermat() {
        for a in [2u64, 37, 123_456_789, P - 2] {
            assert_eq!(powmod(a, P - 1), 1);
        }
    }

    #[test]
    fn kem_and_signatures() {
        let p = ToyProvider;
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            let kp = p.kem_generate(&mut rng);
            let (ct, ss) = p.kem_encap(&kp.public_key, &mut rng).unwrap();
            assert_eq!(p.kem_decap(&kp.private_key, &ct).unwrap(), ss);
            let skp = p.signature_generate(&mut rng);
            let sig = p.sign(&skp.private_key, b"m");
            assert!(p.verify(&skp.public_key, b"m", &sig));
            assert!(!p.verify(&skp.public_key, b"n", &sig));
            assert!(!p.verify(&kp.public_key, b"m", &sig));
        }
    }

    #[test]
    fn aead_round_trip_multi_block() {
        let p = ToyProvider;
        let k = Secret::from_bytes(vec![1; 32]);
        let n = [2u8; NONCE_LEN];
        let pt: Vec<u8> = (0..100u8).collect();
        let ct = p.aead_seal(&k, &n, b"x", &pt);
        assert_eq!(ct.len(), pt.len() + TAG_LEN);
        assert_eq!(p.aead_open(&k, &n, b"x", &ct).unwrap(), pt);
        assert!(p.aead_open(&k, &n, b"y", &ct).is_err());
        assert!(p.aead_open(&k, &n, b"x", &ct[..5]).is_err());
    }

    #[test]
    fn rejects_degenerate_elements() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        assert!(ToyProvider.kem_encap(&1u64.to_be_bytes(), &mut rng).is_err());
        assert!(ToyProvider.kem_encap(&P.to_be_bytes(), &mut rng).is_err());
    }
}
