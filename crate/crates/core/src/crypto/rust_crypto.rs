use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::ChaCha20Poly1305;
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::RngCore;
use x25519_dalek::{PublicKey, StaticSecret};

use super::{
    hkdf_sha256_derive, hmac_sha256, sha256, CryptoError, CryptoProvider, KemKeyPair, Secret,
    SignatureKeyPair, NONCE_LEN,
};

/// X25519 / ChaCha20-Poly1305 / SHA-256 / Ed25519.
#[derive(Debug, Clone, Copy, Default)]
pub struct RustCryptoProvider;

fn x25519_keypair(bytes: [u8; 32]) -> KemKeyPair {
    let sk = StaticSecret::from(bytes);
    let pk = PublicKey::from(&sk);
    KemKeyPair {
        public_key: pk.as_bytes().to_vec(),
        private_key: sk.to_bytes().to_vec(),
    }
}

fn array32(bytes: &[u8]) -> Option<[u8; 32]> {
    bytes.try_into().ok()
}

fn kem_shared(dh: &[u8], kem_output: &[u8], recipient: &[u8]) -> Secret {
    let mut ctx = Vec::with_capacity(64);
    ctx.extend_from_slice(kem_output);
    ctx.extend_from_slice(recipient);
    hkdf_sha256_derive(&Secret::from_bytes(dh.to_vec()), "kem shared", &ctx)
}

impl CryptoProvider for RustCryptoProvider {
    fn name(&self) -> &'static str {
        "x25519-chacha20poly1305-sha256-ed25519"
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
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        x25519_keypair(bytes)
    }

    fn kem_derive(&self, seed: &Secret) -> KemKeyPair {
        let sk = hkdf_sha256_derive(seed, "kem derive", b"");
        x25519_keypair(array32(sk.as_bytes()).expect("kdf output is 32 bytes"))
    }

    fn kem_encap(
        &self,
        public_key: &[u8],
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<u8>, Secret), CryptoError> {
        let pk = PublicKey::from(array32(public_key).ok_or(CryptoError::MalformedKey)?);
        let mut eph = [0u8; 32];
        rng.fill_bytes(&mut eph);
        let eph = StaticSecret::from(eph);
        let enc = PublicKey::from(&eph).as_bytes().to_vec();
        let dh = eph.diffie_hellman(&pk);
        if !dh.was_contributory() {
            return Err(CryptoError::MalformedKey);
        }
        let shared = kem_shared(dh.as_bytes(), &enc, public_key);
        Ok((enc, shared))
    }

    fn kem_decap(&self, private_key: &[u8], ciphertext: &[u8]) -> Result<Secret, CryptoError> {
        let sk = StaticSecret::from(array32(private_key).ok_or(CryptoError::Decap)?);
        let enc = PublicKey::from(array32(ciphertext).ok_or(CryptoError::Decap)?);
        let dh = sk.diffie_hellman(&enc);
        if !dh.was_contributory() {
            return Err(CryptoError::Decap);
        }
        let own_pk = PublicKey::from(&sk);
        Ok(kem_shared(dh.as_bytes(), ciphertext, own_pk.as_bytes()))
    }

    fn aead_seal(
        &self,
        key: &Secret,
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        plaintext: &[u8],
    ) -> Vec<u8> {
        let cipher = ChaCha20Poly1305::new_from_slice(key.as_bytes()).expect("32-byte AEAD key");
        cipher
            .encrypt(nonce.into(), Payload { msg: plaintext, aad })
            .expect("ChaCha20-Poly1305 encryption is infallible for in-memory buffers")
    }

    fn aead_open(
        &self,
        key: &Secret,
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        ciphertext: &[u8],
    ) -> Result<Vec<u8>, CryptoError> {
        let cipher = ChaCha20Poly1305::new_from_slice(key.as_bytes()).map_err(|_| CryptoError::Open)?;
        cipher
            .decrypt(nonce.into(), Payload { msg: ciphertext, aad })
            .map_err(|_| CryptoError::Open)
    }

    fn signature_generate(&self, rng: &mut dyn RngCore) -> SignatureKeyPair {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let sk = SigningKey::from_bytes(&seed);
        SignatureKeyPair {
            public_key: sk.verifying_key().to_bytes().to_vec(),
            private_key: seed.to_vec(),
        }
    }

    fn sign(&self, private_key: &[u8], message: &[u8]) -> Vec<u8> {
        let seed = array32(private_key).expect("Ed25519 private keys are 32-byte seeds");
        SigningKey::from_bytes(&seed).sign(message).to_bytes().to_vec()
    }

    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
        let Some(pk) = array32(public_key) else {
            return false;
        };
        let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
            return false;
        };
        let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
            return false;
        };
        vk.verify(message, &sig).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn kem_round_trip() {
        let p = RustCryptoProvider;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let kp = p.kem_generate(&mut rng);
        let (ct, ss) = p.kem_encap(&kp.public_key, &mut rng).unwrap();
        assert_eq!(p.kem_decap(&kp.private_key, &ct).unwrap(), ss);
    }

    #[test]
    fn kem_rejects_low_order_point() {
        let p = RustCryptoProvider;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(
            p.kem_encap(&[0u8; 32], &mut rng).unwrap_err(),
            CryptoError::MalformedKey
        );
        assert_eq!(
            p.kem_encap(&[1u8; 5], &mut rng).unwrap_err(),
            CryptoError::MalformedKey
        );
    }

    #[test]
    fn kem_derive_is_deterministic() {
        let p = RustCryptoProvider;
        let s = Secret::from_bytes(vec![9; 32]);
        assert_eq!(p.kem_derive(&s), p.kem_derive(&s));
        assert_ne!(
            p.kem_derive(&s).public_key,
            p.kem_derive(&Secret::from_bytes(vec![8; 32])).public_key
        );
    }

    #[test]
    fn signatures() {
        let p = RustCryptoProvider;
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let kp = p.signature_generate(&mut rng);
        let sig = p.sign(&kp.private_key, b"msg");
        assert!(p.verify(&kp.public_key, b"msg", &sig));
        assert!(!p.verify(&kp.public_key, b"msh", &sig));
        assert!(!p.verify(&kp.public_key[..5], b"msg", &sig));
        assert!(!p.verify(&kp.public_key, b"msg", &sig[..10]));
    }

    #[test]
    fn aead_tamper() {
        let p = RustCryptoProvider;
        let k = Secret::from_bytes(vec![3; 32]);
        let n = [0u8; NONCE_LEN];
        let mut ct = p.aead_seal(&k, &n, b"a", b"pt");
        assert_eq!(p.aead_open(&k, &n, b"a", &ct).unwrap(), b"pt");
        ct[0] ^= 1;
        assert_eq!(p.aead_open(&k, &n, b"a", &ct).unwrap_err(), CryptoError::Open);
    }

    #[test]
    fn sha256_known_answer() {
        assert_eq!(
            super::super::hex(&RustCryptoProvider.hash(b"abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
