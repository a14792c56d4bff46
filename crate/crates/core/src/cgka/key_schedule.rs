//! Per-epoch secret derivation.
//!
//! ```text
//! joiner_secret = KDF(init_secret[n-1], "joiner", commit_secret)
//! epoch_secret  = KDF(joiner_secret, "epoch", GroupContext[n])
//! init_secret[n], confirmation_key, membership_key,
//! application_secret, external_secret = KDF(epoch_secret, <label>, "")
//! ```

use std::fmt;

use super::messages::GroupContext;
use crate::codec;
use crate::crypto::{CryptoProvider, KemKeyPair, Secret};

#[derive(Clone)]
pub struct EpochSecrets {
    pub epoch_secret: Secret,
    pub init_secret: Secret,
    pub confirmation_key: Secret,
    pub membership_key: Secret,
    pub application_secret: Secret,
    pub external_secret: Secret,
    pub external_keypair: KemKeyPair,
}

impl fmt::Debug for EpochSecrets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EpochSecrets").finish_non_exhaustive()
    }
}

impl EpochSecrets {
    pub fn from_epoch_secret(crypto: &dyn CryptoProvider, epoch_secret: Secret) -> Self {
        let d = |label: &str| crypto.kdf_derive(&epoch_secret, label, b"");
        let external_secret = d("external");
        EpochSecrets {
            init_secret: d("init"),
            confirmation_key: d("confirm"),
            membership_key: d("membership"),
            application_secret: d("application"),
            external_keypair: crypto.kem_derive(&external_secret),
            external_secret,
            epoch_secret,
        }
    }
}

pub fn joiner_secret(crypto: &dyn CryptoProvider, init_secret: &Secret, commit_secret: &Secret) -> Secret {
    crypto.kdf_derive(init_secret, "joiner", commit_secret.as_bytes())
}

pub fn epoch_secret(crypto: &dyn CryptoProvider, joiner_secret: &Secret, context: &GroupContext) -> Secret {
    crypto.kdf_derive(joiner_secret, "epoch", &codec::to_bytes(context))
}

pub fn welcome_key(crypto: &dyn CryptoProvider, joiner_secret: &Secret) -> Secret {
    crypto.kdf_derive(joiner_secret, "welcome", b"")
}

/// Confirmed transcript hash after a commit: binds the whole history.
pub fn confirmed_transcript_hash(crypto: &dyn CryptoProvider, interim: &[u8], tbs: &[u8], signature: &[u8]) -> Vec<u8> {
    let mut input = interim.to_vec();
    input.extend_from_slice(&codec::to_bytes(&(tbs, signature)));
    crypto.hash(&input)
}

pub fn interim_transcript_hash(crypto: &dyn CryptoProvider, confirmed: &[u8], confirmation_tag: &[u8]) -> Vec<u8> {
    let mut input = confirmed.to_vec();
    input.extend_from_slice(confirmation_tag);
    crypto.hash(&input)
}

pub fn path_step(crypto: &dyn CryptoProvider, path_secret: &Secret) -> Secret {
    crypto.kdf_derive(path_secret, "path", b"")
}

pub fn node_keypair(crypto: &dyn CryptoProvider, path_secret: &Secret) -> KemKeyPair {
    crypto.kem_derive(&crypto.kdf_derive(path_secret, "node", b""))
}
