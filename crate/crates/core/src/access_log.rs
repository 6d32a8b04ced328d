//! The detection log shared by Node Control (appends) and Database Control
//! (annotates).
//!
//! One line per detection:
//!
//! ```text
//! DD-MM-YYYY HH:MM:SS<TAB>TAGHEX[<TAB>Y|N|NF]\n
//! ```
//!
//! Appends go to the end of the file. Annotation rewrites the whole file to
//! a temporary sibling and renames it into place, so a reader sees either the
//! old or the new file, never a torn line. Appends and rewrites serialize on
//! an advisory lock held on `<log>.lock`, which keeps an append from landing
//! in a file that is about to be replaced.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDateTime;
use thiserror::Error;

use crate::codec::TagId;

pub const TIMESTAMP_FORMAT: &str = "%d-%m-%Y %H:%M:%S";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log storage: {0}")]
    Io(#[from] io::Error),
    #[error("invalid tag {0:?}")]
    InvalidTag(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("entry {0} already carries a verdict")]
    AlreadyVerified(usize),
    #[error("no entry at index {0}")]
    NoSuchEntry(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Verdict {
    /// Found and authorized.
    Granted,
    /// Found, not authorized.
    Denied,
    /// Not in the registry.
    NotFound,
}

impl Verdict {
    pub fn token(self) -> &'static str {
        match self {
            Verdict::Granted => "Y",
            Verdict::Denied => "N",
            Verdict::NotFound => "NF",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Y" => Ok(Verdict::Granted),
            "N" => Ok(Verdict::Denied),
            "NF" => Ok(Verdict::NotFound),
            other => Err(format!("unknown verdict {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub timestamp: NaiveDateTime,
    pub tag: TagId,
    pub verdict: Option<Verdict>,
}

impl LogEntry {
    pub fn detection(timestamp: NaiveDateTime, tag: TagId) -> Self {
        LogEntry {
            timestamp,
            tag,
            verdict: None,
        }
    }

    /// The line including its trailing newline.
    pub fn render(&self) -> String {
        let mut line = format!("{}\t{}", self.timestamp.format(TIMESTAMP_FORMAT), self.tag);
        if let Some(v) = self.verdict {
            line.push('\t');
            line.push_str(v.token());
        }
        line.push('\n');
        line
    }
}

pub fn render(entries: &[LogEntry]) -> String {
    entries.iter().map(LogEntry::render).collect()
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let t = NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT).ok()?;
    // Zero-padded fields only.
    (t.format(TIMESTAMP_FORMAT).to_string() == s).then_some(t)
}

fn parse_line(line: &str, number: usize) -> Result<LogEntry, LogError> {
    let err = |reason: String| LogError::Parse {
        line: number,
        reason,
    };
    let fields: Vec<&str> = line.split('\t').collect();
    let (ts, tag, verdict) = match fields[..] {
        [ts, tag] => (ts, tag, None),
        [ts, tag, v] => (ts, tag, Some(v.parse::<Verdict>().map_err(err)?)),
        _ => return Err(err(format!("expected 2 or 3 fields, found {}", fields.len()))),
    };
    let timestamp = parse_timestamp(ts).ok_or_else(|| err(format!("bad timestamp {ts:?}")))?;
    let tag_id: TagId = tag.parse().map_err(|e| err(format!("{e}")))?;
    if tag_id.to_hex() != tag {
        return Err(err(format!("tag {tag:?} is not uppercase hex")));
    }
    Ok(LogEntry {
        timestamp,
        tag: tag_id,
        verdict,
    })
}

/// Parses a whole log. Line numbers in errors are 1-based.
pub fn parse(text: &str) -> Result<Vec<LogEntry>, LogError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let body = text.strip_suffix('\n').ok_or(LogError::Parse {
        line: text.lines().count(),
        reason: "missing final newline".into(),
    })?;
    body.split('\n')
        .enumerate()
        .map(|(i, line)| parse_line(line, i + 1))
        .collect()
}

/// Entries with no verdict yet, with their 0-based positions.
pub fn unchecked(entries: &[LogEntry]) -> Vec<(usize, LogEntry)> {
    entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.verdict.is_none())
        .map(|(i, e)| (i, e.clone()))
        .collect()
}

/// Applies annotations all-or-nothing.
fn apply(entries: &mut [LogEntry], updates: &[(usize, Verdict)]) -> Result<(), LogError> {
    for &(index, _) in updates {
        let entry = entries.get(index).ok_or(LogError::NoSuchEntry(index))?;
        if entry.verdict.is_some() {
            return Err(LogError::AlreadyVerified(index));
        }
    }
    for (n, &(index, _)) in updates.iter().enumerate() {
        if updates[..n].iter().any(|&(i, _)| i == index) {
            return Err(LogError::AlreadyVerified(index));
        }
    }
    for &(index, verdict) in updates {
        entries[index].verdict = Some(verdict);
    }
    Ok(())
}

/// Where Node Control writes detections.
pub trait DetectionSink {
    /// Appends one unverified detection; returns its 0-based index.
    fn append_detection(&mut self, at: NaiveDateTime, tag: &TagId) -> Result<usize, LogError>;
}

/// An in-memory log, for simulations that do not need a file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryLog {
    pub entries: Vec<LogEntry>,
}

impl MemoryLog {
    pub fn annotate_verdict(&mut self, index: usize, verdict: Verdict) -> Result<LogEntry, LogError> {
        apply(&mut self.entries, &[(index, verdict)])?;
        Ok(self.entries[index].clone())
    }

    pub fn render(&self) -> String {
        render(&self.entries)
    }
}

impl DetectionSink for MemoryLog {
    fn append_detection(&mut self, at: NaiveDateTime, tag: &TagId) -> Result<usize, LogError> {
        self.entries.push(LogEntry::detection(at, tag.clone()));
        Ok(self.entries.len() - 1)
    }
}

/// The file-backed log.
#[derive(Debug, Clone)]
pub struct LogFile {
    path: PathBuf,
    lock_path: PathBuf,
}

impl LogFile {
    /// Opens (creating if missing) the log at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, LogError> {
        let path = path.into();
        let mut lock_name = path.file_name().unwrap_or_default().to_os_string();
        lock_name.push(".lock");
        let lock_path = path.with_file_name(lock_name);
        OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(LogFile { path, lock_path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn lock(&self) -> Result<File, LogError> {
        let f = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&self.lock_path)?;
        f.lock()?;
        Ok(f)
    }

    fn read_locked(&self) -> Result<String, LogError> {
        match fs::read_to_string(&self.path) {
            Ok(s) => Ok(s),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(String::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn append_detection(&self, at: NaiveDateTime, tag: &TagId) -> Result<usize, LogError> {
        let line = LogEntry::detection(at, tag.clone()).render();
        let _guard = self.lock()?;
        let index = self.read_locked()?.bytes().filter(|&b| b == b'\n').count();
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        // One write per line keeps the append indivisible for readers.
        f.write_all(line.as_bytes())?;
        Ok(index)
    }

    /// Validates `tag` text before appending.
    pub fn append_hex(&self, at: NaiveDateTime, tag: &str) -> Result<usize, LogError> {
        let id: TagId = tag.parse().map_err(|_| LogError::InvalidTag(tag.to_string()))?;
        self.append_detection(at, &id)
    }

    pub fn entries(&self) -> Result<Vec<LogEntry>, LogError> {
        let _guard = self.lock()?;
        parse(&self.read_locked()?)
    }

    pub fn scan_unchecked(&self) -> Result<Vec<(usize, LogEntry)>, LogError> {
        Ok(unchecked(&self.entries()?))
    }

    pub fn annotate_verdict(&self, index: usize, verdict: Verdict) -> Result<LogEntry, LogError> {
        Ok(self.annotate_batch(&[(index, verdict)])?.remove(0))
    }

    /// Annotates several entries in one atomic rewrite. Either every update
    /// lands or none does.
    pub fn annotate_batch(&self, updates: &[(usize, Verdict)]) -> Result<Vec<LogEntry>, LogError> {
        let _guard = self.lock()?;
        let mut entries = parse(&self.read_locked()?)?;
        apply(&mut entries, updates)?;
        if !updates.is_empty() {
            self.replace(&render(&entries))?;
        }
        Ok(updates.iter().map(|&(i, _)| entries[i].clone()).collect())
    }

    fn replace(&self, contents: &str) -> Result<(), LogError> {
        let dir = match self.path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(contents.as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(&self.path).map_err(|e| e.error)?;
        Ok(())
    }
}

impl DetectionSink for LogFile {
    fn append_detection(&mut self, at: NaiveDateTime, tag: &TagId) -> Result<usize, LogError> {
        LogFile::append_detection(self, at, tag)
    }
}
