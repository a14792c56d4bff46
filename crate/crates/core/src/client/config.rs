//! Client configuration files.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;
use toml::{Table, Value};

use super::policy::UpdaterPolicy;
use crate::delivery::DsKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("configuration is not valid TOML: {0}")]
    Syntax(String),
    #[error("missing key {0}")]
    MissingKey(String),
    #[error("bad value for {key}: {reason}")]
    BadValue { key: String, reason: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Paradigm {
    /// Every modification is its own commit.
    Commit,
    /// Modifications are published as proposals and committed in batches.
    Propose,
}

impl Paradigm {
    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Commit => "commit",
            Paradigm::Propose => "propose",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Paradigm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "commit" => Ok(Paradigm::Commit),
            "propose" => Ok(Paradigm::Propose),
            _ => Err(format!("expected \"commit\" or \"propose\", got {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientConfig {
    pub ds: DsKind,
    pub groups: Vec<String>,
    pub external_join: bool,
    pub join_chance: f64,
    pub issue_update_chance: f64,
    pub message_chance: f64,
    /// Staggered client start-up, so groups grow gradually.
    pub scale: bool,
    pub auth_policy: UpdaterPolicy,
    pub message_length_min: usize,
    pub message_length_max: usize,
    pub sleep_millis_min: u64,
    pub sleep_millis_max: u64,
    pub paradigm: Paradigm,
    pub proposals_per_commit: usize,
    pub invite_chance: f64,
    pub remove_chance: f64,
    pub update_chance: f64,
    pub replicas: usize,
    pub http_server_url: Option<String>,
    pub mqtt_url: Option<String>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            ds: DsKind::Mqtt,
            groups: vec!["group_1".into(), "group_2".into()],
            external_join: true,
            join_chance: 0.01,
            issue_update_chance: 0.2,
            message_chance: 0.3,
            scale: false,
            auth_policy: UpdaterPolicy::Random,
            message_length_min: 500,
            message_length_max: 2000,
            sleep_millis_min: 20_000,
            sleep_millis_max: 60_000,
            paradigm: Paradigm::Propose,
            proposals_per_commit: 4,
            invite_chance: 0.6,
            remove_chance: 0.1,
            update_chance: 0.3,
            replicas: 10,
            http_server_url: None,
            mqtt_url: None,
        }
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "cgka",
        &[
            "ds",
            "groups",
            "external_join",
            "join_chance",
            "issue_update_chance",
            "message_chance",
            "scale",
            "auth_policy",
            "message_length_min",
            "message_length_max",
            "sleep_millis_min",
            "sleep_millis_max",
        ],
    ),
    (
        "paradigm",
        &["paradigm", "proposals_per_commit", "invite_chance", "remove_chance", "update_chance"],
    ),
    ("http_server", &["url"]),
    ("mqtt", &["url"]),
    ("meta", &["replicas"]),
];

struct Reader<'a> {
    root: &'a Table,
}

impl Reader<'_> {
    fn get(&self, section: &str, key: &str) -> Result<&Value, ConfigError> {
        self.root
            .get(section)
            .and_then(|s| s.get(key))
            .ok_or_else(|| ConfigError::MissingKey(format!("{section}.{key}")))
    }

    fn optional(&self, section: &str, key: &str) -> Option<&Value> {
        self.root.get(section).and_then(|s| s.get(key))
    }

    fn string(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.get(section, key)?
            .as_str()
            .ok_or_else(|| bad(&format!("{section}.{key}"), "expected a string"))
    }

    fn boolean(&self, section: &str, key: &str) -> Result<bool, ConfigError> {
        self.get(section, key)?
            .as_bool()
            .ok_or_else(|| bad(&format!("{section}.{key}"), "expected true or false"))
    }

    fn integer(&self, section: &str, key: &str, min: i64) -> Result<i64, ConfigError> {
        let name = format!("{section}.{key}");
        let v = self.get(section, key)?.as_integer().ok_or_else(|| bad(&name, "expected an integer"))?;
        if v < min {
            return Err(bad(&name, format!("must be at least {min}")));
        }
        Ok(v)
    }

    fn probability(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        let name = format!("{section}.{key}");
        let v = match self.get(section, key)? {
            Value::Float(f) => *f,
            Value::Integer(i) => *i as f64,
            _ => return Err(bad(&name, "expected a number")),
        };
        if !(0.0..=1.0).contains(&v) {
            return Err(bad(&name, format!("{v} is not a probability")));
        }
        Ok(v)
    }
}

impl ClientConfig {
    pub fn parse(text: &str) -> Result<ClientConfig, ConfigError> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
        for (section, value) in &root {
            let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| s == section) else {
                return Err(ConfigError::UnknownKey(section.clone()));
            };
            let table = value
                .as_table()
                .ok_or_else(|| bad(section, "expected a section"))?;
            for key in table.keys() {
                if !keys.contains(&key.as_str()) {
                    return Err(ConfigError::UnknownKey(format!("{section}.{key}")));
                }
            }
        }
        let r = Reader { root: &root };
        let ds = r.string("cgka", "ds")?.parse().map_err(|_| bad("cgka.ds", "expected \"mqtt\" or \"gossipsub\""))?;
        let groups = r
            .get("cgka", "groups")?
            .as_array()
            .ok_or_else(|| bad("cgka.groups", "expected a list"))?
            .iter()
            .map(|g| g.as_str().map(str::to_string).ok_or_else(|| bad("cgka.groups", "expected strings")))
            .collect::<Result<Vec<_>, _>>()?;
        if groups.iter().any(|g| g.is_empty() || g.contains(char::is_whitespace)) {
            return Err(bad("cgka.groups", "group ids must be non-empty and contain no whitespace"));
        }
        let auth_policy = r
            .string("cgka", "auth_policy")?
            .parse()
            .map_err(|e: String| bad("cgka.auth_policy", e))?;
        let paradigm = r
            .string("paradigm", "paradigm")?
            .parse()
            .map_err(|e: String| bad("paradigm.paradigm", e))?;
        let url = |section: &str| -> Result<Option<String>, ConfigError> {
            r.optional(section, "url")
                .map(|v| v.as_str().map(str::to_string).ok_or_else(|| bad(&format!("{section}.url"), "expected a string")))
                .transpose()
        };
        let cfg = ClientConfig {
            ds,
            groups,
            external_join: r.boolean("cgka", "external_join")?,
            join_chance: r.probability("cgka", "join_chance")?,
            issue_update_chance: r.probability("cgka", "issue_update_chance")?,
            message_chance: r.probability("cgka", "message_chance")?,
            scale: r.boolean("cgka", "scale")?,
            auth_policy,
            message_length_min: r.integer("cgka", "message_length_min", 0)? as usize,
            message_length_max: r.integer("cgka", "message_length_max", 0)? as usize,
            sleep_millis_min: r.integer("cgka", "sleep_millis_min", 0)? as u64,
            sleep_millis_max: r.integer("cgka", "sleep_millis_max", 0)? as u64,
            paradigm,
            proposals_per_commit: r.integer("paradigm", "proposals_per_commit", 1)? as usize,
            invite_chance: r.probability("paradigm", "invite_chance")?,
            remove_chance: r.probability("paradigm", "remove_chance")?,
            update_chance: r.probability("paradigm", "update_chance")?,
            replicas: r.integer("meta", "replicas", 1)? as usize,
            http_server_url: url("http_server")?,
            mqtt_url: url("mqtt")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field constraints.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let sum = self.invite_chance + self.remove_chance + self.update_chance;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(bad("paradigm", format!("invite, remove and update chances sum to {sum}, not 1")));
        }
        if self.message_length_min > self.message_length_max {
            return Err(bad("cgka.message_length_min", "exceeds message_length_max"));
        }
        if self.sleep_millis_min > self.sleep_millis_max {
            return Err(bad("cgka.sleep_millis_min", "exceeds sleep_millis_max"));
        }
        if self.groups.is_empty() {
            return Err(bad("cgka.groups", "at least one group is required"));
        }
        if self.proposals_per_commit == 0 {
            return Err(bad("paradigm.proposals_per_commit", "must be at least 1"));
        }
        if self.replicas == 0 {
            return Err(bad("meta.replicas", "must be at least 1"));
        }
        Ok(())
    }

    /// Renders the configuration in the file format accepted by [`parse`](Self::parse).
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        let mut cgka = Table::new();
        cgka.insert("ds".into(), self.ds.as_str().into());
        cgka.insert(
            "groups".into(),
            Value::Array(self.groups.iter().map(|g| Value::from(g.as_str())).collect()),
        );
        cgka.insert("external_join".into(), self.external_join.into());
        cgka.insert("join_chance".into(), self.join_chance.into());
        cgka.insert("issue_update_chance".into(), self.issue_update_chance.into());
        cgka.insert("message_chance".into(), self.message_chance.into());
        cgka.insert("scale".into(), self.scale.into());
        cgka.insert("auth_policy".into(), self.auth_policy.as_str().into());
        cgka.insert("message_length_min".into(), (self.message_length_min as i64).into());
        cgka.insert("message_length_max".into(), (self.message_length_max as i64).into());
        cgka.insert("sleep_millis_min".into(), (self.sleep_millis_min as i64).into());
        cgka.insert("sleep_millis_max".into(), (self.sleep_millis_max as i64).into());
        root.insert("cgka".into(), Value::Table(cgka));
        let mut paradigm = Table::new();
        paradigm.insert("paradigm".into(), self.paradigm.as_str().into());
        paradigm.insert("proposals_per_commit".into(), (self.proposals_per_commit as i64).into());
        paradigm.insert("invite_chance".into(), self.invite_chance.into());
        paradigm.insert("remove_chance".into(), self.remove_chance.into());
        paradigm.insert("update_chance".into(), self.update_chance.into());
        root.insert("paradigm".into(), Value::Table(paradigm));
        for (section, url) in [("http_server", &self.http_server_url), ("mqtt", &self.mqtt_url)] {
            if let Some(u) = url {
                let mut t = Table::new();
                t.insert("url".into(), u.as_str().into());
                root.insert(section.into(), Value::Table(t));
            }
        }
        let mut meta = Table::new();
        meta.insert("replicas".into(), (self.replicas as i64).into());
        root.insert("meta".into(), Value::Table(meta));
        toml::to_string(&root).expect("tables always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = r#"
[cgka]
ds = "mqtt"
groups = ["group_1", "group_2"]
external_join = true
join_chance = 0.01
issue_update_chance = 0.2
message_chance = 0.3
scale = false
auth_policy = "Random"
message_length_min = 500
message_length_max = 2000
sleep_millis_min = 20000
sleep_millis_max = 60000

[paradigm]
paradigm = "propose"
proposals_per_commit = 4
invite_chance = 0.6
remove_chance = 0.1
update_chance = 0.3

[http_server]
url = "http://<ip>:<port>"

[mqtt]
url = "tcp://<ip>:<port>"

[meta]
replicas = 10
"#;

    #[test]
    fn example_file() {
        let c = ClientConfig::parse(EXAMPLE).unwrap();
        assert_eq!(c.join_chance, 0.01);
        assert_eq!(c.proposals_per_commit, 4);
        assert_eq!(c.auth_policy, UpdaterPolicy::Random);
        assert_eq!(c.replicas, 10);
        assert_eq!(c.paradigm, Paradigm::Propose);
        assert_eq!(c.sleep_millis_min, 20_000);
        assert_eq!(c.mqtt_url.as_deref(), Some("tcp://<ip>:<port>"));
        let defaults = ClientConfig {
            http_server_url: c.http_server_url.clone(),
            mqtt_url: c.mqtt_url.clone(),
            ..ClientConfig::default()
        };
        assert_eq!(c, defaults);
        assert_eq!(ClientConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn chances_must_sum_to_one() {
        let text = EXAMPLE
            .replace("invite_chance = 0.6", "invite_chance = 0.5")
            .replace("remove_chance = 0.1", "remove_chance = 0.5")
            .replace("update_chance = 0.3", "update_chance = 0.5");
        assert!(matches!(ClientConfig::parse(&text), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn errors() {
        let missing = EXAMPLE.replace("join_chance = 0.01\n", "");
        assert_eq!(
            ClientConfig::parse(&missing),
            Err(ConfigError::MissingKey("cgka.join_chance".into()))
        );
        let unknown = EXAMPLE.replace("scale = false", "scale = false\ncolour = 1");
        assert_eq!(ClientConfig::parse(&unknown), Err(ConfigError::UnknownKey("cgka.colour".into())));
        let section = format!("{EXAMPLE}\n[extra]\nx = 1\n");
        assert_eq!(ClientConfig::parse(&section), Err(ConfigError::UnknownKey("extra".into())));
        let prob = EXAMPLE.replace("message_chance = 0.3", "message_chance = 1.5");
        assert!(matches!(ClientConfig::parse(&prob), Err(ConfigError::BadValue { .. })));
        let ds = EXAMPLE.replace("\"mqtt\"\ngroups", "\"kafka\"\ngroups");
        assert!(matches!(ClientConfig::parse(&ds), Err(ConfigError::BadValue { .. })));
        let sleep = EXAMPLE.replace("sleep_millis_min = 20000", "sleep_millis_min = 70000");
        assert!(matches!(ClientConfig::parse(&sleep), Err(ConfigError::BadValue { .. })));
        assert!(matches!(ClientConfig::parse("[cgka"), Err(ConfigError::Syntax(_))));
        let no_urls = EXAMPLE.replace("[mqtt]\nurl = \"tcp://<ip>:<port>\"\n", "");
        assert!(ClientConfig::parse(&no_urls).unwrap().mqtt_url.is_none());
    }
}
