//! One line per event, space separated:
//!
//! ```text
//! group group_size actor action counterpart [size_bytes] timestamp_ns cost_us
//! ```
//!
//! `size_bytes` is omitted for `Process` records only.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use super::MetricsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Invite,
    Remove,
    Update,
    Join,
    Propose,
    Process,
    Welcome,
    GroupInfo,
    Message,
}

impl Action {
    pub const ALL: [Action; 9] = [
        Action::Invite,
        Action::Remove,
        Action::Update,
        Action::Join,
        Action::Propose,
        Action::Process,
        Action::Welcome,
        Action::GroupInfo,
        Action::Message,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Invite => "Invite",
            Action::Remove => "Remove",
            Action::Update => "Update",
            Action::Join => "Join",
            Action::Propose => "Propose",
            Action::Process => "Process",
            Action::Welcome => "Welcome",
            Action::GroupInfo => "GroupInfo",
            Action::Message => "Message",
        }
    }

    /// Actions that record the generation of a commit.
    pub fn is_commit(self) -> bool {
        matches!(self, Action::Invite | Action::Remove | Action::Update | Action::Join)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown action {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogRecord {
    pub group: String,
    pub group_size: u32,
    pub actor: String,
    pub action: Action,
    /// `None` is written as `-`.
    pub counterpart: Option<String>,
    /// Absent exactly for `Process` records.
    pub size_bytes: Option<u64>,
    pub timestamp_ns: u64,
    pub cost_us: u64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.group,
            self.group_size,
            self.actor,
            self.action,
            self.counterpart.as_deref().unwrap_or("-")
        )?;
        if let Some(size) = self.size_bytes {
            write!(f, " {size}")?;
        }
        write!(f, " {} {}", self.timestamp_ns, self.cost_us)
    }
}

fn num<T: FromStr>(field: &str, what: &str) -> Result<T, String> {
    field.parse().map_err(|_| format!("{what} {field:?} is not a number"))
}

fn parse_fields(text: &str) -> Result<LogRecord, String> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() < 7 {
        return Err(format!("expected 7 or 8 fields, found {}", fields.len()));
    }
    let action: Action = fields[3].parse()?;
    let expected = if action == Action::Process { 7 } else { 8 };
    if fields.len() != expected {
        return Err(format!("{action} records have {expected} fields, found {}", fields.len()));
    }
    let group_size: u32 = num(fields[1], "group size")?;
    if group_size == 0 {
        return Err("group size must be at least 1".into());
    }
    let counterpart = match fields[4] {
        "-" => None,
        c => Some(c.to_string()),
    };
    let size_bytes = if expected == 8 { Some(num(fields[5], "size")?) } else { None };
    Ok(LogRecord {
        group: fields[0].to_string(),
        group_size,
        actor: fields[2].to_string(),
        action,
        counterpart,
        size_bytes,
        timestamp_ns: num(fields[expected - 2], "timestamp")?,
        cost_us: num(fields[expected - 1], "cost")?,
    })
}

pub fn parse_line(text: &str) -> Result<LogRecord, MetricsError> {
    parse_fields(text).map_err(|reason| MetricsError::BadLine { line: 1, reason })
}

/// Parses a whole log, skipping blank lines. Errors carry 1-based line numbers.
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>, MetricsError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_fields(l).map_err(|reason| MetricsError::BadLine { line: i + 1, reason }))
        .collect()
}

/// Append-only record sink shared by every client of a run.
#[derive(Clone, Debug, Default)]
pub struct LogSink {
    records: Arc<Mutex<Vec<LogRecord>>>,
}

impl LogSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn emit(&self, record: LogRecord) {
        self.records.lock().expect("log sink poisoned").push(record);
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("log sink poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<LogRecord> {
        self.records.lock().expect("log sink poisoned").clone()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in self.records.lock().expect("log sink poisoned").iter() {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.render().as_bytes())?;
        f.flush()
    }
}
