//! Signaling: the set of known users.

use std::collections::BTreeSet;
use std::sync::Mutex;

#[derive(Debug, Default)]
pub struct UserRegistry {
    users: Mutex<BTreeSet<String>>,
}

impl UserRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Idempotent.
    pub fn register(&self, user: &str) {
        self.users.lock().expect("registry lock").insert(user.to_string());
    }

    /// Sorted.
    pub fn list(&self) -> Vec<String> {
        self.users.lock().expect("registry lock").iter().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.users.lock().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_list() {
        let r = UserRegistry::new();
        r.register("B");
        r.register("A");
        r.register("A");
        assert_eq!(r.list(), vec!["A".to_string(), "B".to_string()]);
        for i in 0..10 {
            r.register(&format!("replica-{i}"));
        }
        assert_eq!(r.len(), 12);
    }
}
