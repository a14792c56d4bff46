//! Who may modify a group.

use std::fmt;
use std::str::FromStr;

use crate::cgka::GroupState;

/// Restricts which member may issue modifications, steering the shape of
/// the ratchet tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdaterPolicy {
    /// Only the longest-standing member (the creator unless it left).
    First,
    /// Only the most recently joined member.
    Last,
    Random,
}

impl UpdaterPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdaterPolicy::First => "First",
            UpdaterPolicy::Last => "Last",
            UpdaterPolicy::Random => "Random",
        }
    }

    pub fn allows(self, group: &GroupState) -> bool {
        let order = group.join_order();
        match self {
            UpdaterPolicy::First => order.first() == Some(&group.my_leaf()),
            UpdaterPolicy::Last => order.last() == Some(&group.my_leaf()),
            UpdaterPolicy::Random => true,
        }
    }
}

impl fmt::Display for UpdaterPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpdaterPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "first" => Ok(UpdaterPolicy::First),
            "last" => Ok(UpdaterPolicy::Last),
            "random" => Ok(UpdaterPolicy::Random),
            _ => Err(format!("expected First, Last or Random, got {s:?}")),
        }
    }
}

/// Whether the local member of `group` may modify it under `policy`.
pub fn policy_allows(policy: UpdaterPolicy, group: &GroupState) -> bool {
    policy.allows(group)
}
