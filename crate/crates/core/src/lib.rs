//! Empirical evaluation testbed for TreeKEM-style continuous group key
//! agreement.
//!
//! The crate is layered bottom-up:
//!
//! * [`crypto`]: suite-agnostic cryptographic provider interface.
//! * [`cgka`]: ratchet tree, key schedule and the group state machine.
//! * [`delivery`]: simulated publish-subscribe delivery services (central
//!   broker and gossip mesh), directories and the user registry.
//! * [`client`]: configuration-driven autonomous clients.
//! * [`metrics`]: log records, latency and cost analysis, regression fits.
//! * [`harness`]: scenario runner on a virtual clock and offline analysis.

pub mod cgka;
pub mod client;
pub mod codec;
pub mod crypto;
pub mod delivery;
pub mod harness;
pub mod metrics;

/// Virtual time in nanoseconds since the start of a simulation.
pub type VirtualTime = u64;

pub const NS_PER_MS: u64 = 1_000_000;
