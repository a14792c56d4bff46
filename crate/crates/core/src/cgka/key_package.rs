use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::tree::LeafNode;
use crate::codec;
use crate::crypto::{CryptoProvider, SignatureKeyPair};

/// A user's long-term identity: a name bound to a signature key pair.
#[derive(Clone)]
pub struct MemberIdentity {
    pub name: String,
    pub signer: SignatureKeyPair,
}

impl MemberIdentity {
    pub fn generate(crypto: &dyn CryptoProvider, name: &str, rng: &mut dyn RngCore) -> Self {
        MemberIdentity {
            name: name.to_string(),
            signer: crypto.signature_generate(rng),
        }
    }
}

impl fmt::Debug for MemberIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemberIdentity")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

/// Public, single-use bundle that lets others add its owner to a group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPackage {
    pub leaf_node: LeafNode,
    pub init_key: Vec<u8>,
    pub signature: Vec<u8>,
}

/// Private half of a [`KeyPackage`], kept by its owner until a Welcome arrives.
#[derive(Clone)]
pub struct KeyPackageSecrets {
    pub reference: Vec<u8>,
    pub init_private: Vec<u8>,
    pub leaf_private: Vec<u8>,
    pub leaf_public: Vec<u8>,
}

impl fmt::Debug for KeyPackageSecrets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPackageSecrets")
            .field("reference", &crate::crypto::hex(&self.reference))
            .finish_non_exhaustive()
    }
}

impl KeyPackage {
    fn tbs(leaf_node: &LeafNode, init_key: &[u8]) -> Vec<u8> {
        codec::to_bytes(&("key package", leaf_node, init_key))
    }

    pub fn generate(
        crypto: &dyn CryptoProvider,
        identity: &MemberIdentity,
        rng: &mut dyn RngCore,
    ) -> (KeyPackage, KeyPackageSecrets) {
        let init = crypto.kem_generate(rng);
        let leaf_kp = crypto.kem_generate(rng);
        let leaf_node = LeafNode::new_signed(
            crypto,
            &identity.name,
            &identity.signer.public_key,
            &identity.signer.private_key,
            leaf_kp.public_key.clone(),
        );
        let signature = crypto.sign(
            &identity.signer.private_key,
            &Self::tbs(&leaf_node, &init.public_key),
        );
        let kp = KeyPackage {
            leaf_node,
            init_key: init.public_key,
            signature,
        };
        let secrets = KeyPackageSecrets {
            reference: kp.reference(crypto),
            init_private: init.private_key,
            leaf_private: leaf_kp.private_key,
            leaf_public: leaf_kp.public_key,
        };
        (kp, secrets)
    }

    pub fn verify(&self, crypto: &dyn CryptoProvider) -> bool {
        self.leaf_node.verify(crypto)
            && crypto.verify(
                &self.leaf_node.signature_key,
                &Self::tbs(&self.leaf_node, &self.init_key),
                &self.signature,
            )
    }

    pub fn reference(&self, crypto: &dyn CryptoProvider) -> Vec<u8> {
        crypto.hash(&codec::encode(self))
    }
}
