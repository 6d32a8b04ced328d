//! The tag database: one row per tag with its authorization flag and the
//! holder's first name.
//!
//! Stored as `TAGID<TAB>Yes|No<TAB>FIRSTNAME\n`, sorted by tag, rewritten
//! through a temporary file and rename on every mutation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::codec::TagId;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry storage: {0}")]
    Io(#[from] io::Error),
    #[error("tag {0} is already enrolled")]
    DuplicateKey(TagId),
    #[error("tag {0} is not enrolled")]
    NotFound(TagId),
    #[error("registry line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("first name {0:?} may not contain tabs or line breaks")]
    InvalidName(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagRecord {
    pub tag_id: TagId,
    pub is_authorized: bool,
    pub first_name: String,
}

impl TagRecord {
    pub fn new(tag_id: TagId, is_authorized: bool, first_name: impl Into<String>) -> Self {
        TagRecord {
            tag_id,
            is_authorized,
            first_name: first_name.into(),
        }
    }

    /// "Yes" or "No".
    pub fn authorized_text(&self) -> &'static str {
        yes_no(self.is_authorized)
    }

    pub fn render(&self) -> String {
        format!(
            "{}\t{}\t{}\n",
            self.tag_id,
            self.authorized_text(),
            self.first_name
        )
    }
}

pub fn yes_no(flag: bool) -> &'static str {
    if flag {
        "Yes"
    } else {
        "No"
    }
}

fn check_name(name: &str) -> Result<(), RegistryError> {
    if name.contains(['\t', '\n', '\r']) {
        return Err(RegistryError::InvalidName(name.to_string()));
    }
    Ok(())
}

fn parse_line(line: &str, number: usize) -> Result<TagRecord, RegistryError> {
    let err = |reason: String| RegistryError::Parse {
        line: number,
        reason,
    };
    let fields: Vec<&str> = line.split('\t').collect();
    let [tag, auth, name] = fields[..] else {
        return Err(err(format!("expected 3 fields, found {}", fields.len())));
    };
    let tag_id: TagId = tag.parse().map_err(|e| err(format!("{e}")))?;
    let is_authorized = match auth {
        "Yes" => true,
        "No" => false,
        other => return Err(err(format!("authorization must be Yes or No, found {other:?}"))),
    };
    Ok(TagRecord::new(tag_id, is_authorized, name))
}

/// Parses registry text. Keys are normalized to uppercase.
pub fn parse(text: &str) -> Result<Vec<TagRecord>, RegistryError> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let rec = parse_line(line, i + 1)?;
        if seen.insert(rec.tag_id.clone(), ()).is_some() {
            return Err(RegistryError::DuplicateKey(rec.tag_id));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn render<'a>(records: impl IntoIterator<Item = &'a TagRecord>) -> String {
    records.into_iter().map(TagRecord::render).collect()
}

/// The registry, optionally backed by a file.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    path: Option<PathBuf>,
    records: BTreeMap<TagId, TagRecord>,
}

impl Registry {
    pub fn in_memory() -> Self {
        Registry::default()
    }

    /// Loads `path`; a missing file is an empty registry.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let path = path.into();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        let records = parse(&text)?
            .into_iter()
            .map(|r| (r.tag_id.clone(), r))
            .collect();
        Ok(Registry {
            path: Some(path),
            records,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn enroll(&mut self, record: TagRecord) -> Result<(), RegistryError> {
        check_name(&record.first_name)?;
        if self.records.contains_key(&record.tag_id) {
            return Err(RegistryError::DuplicateKey(record.tag_id));
        }
        self.records.insert(record.tag_id.clone(), record);
        self.persist()
    }

    pub fn lookup(&self, tag_id: &TagId) -> Option<&TagRecord> {
        self.records.get(tag_id)
    }

    pub fn set_authorized(&mut self, tag_id: &TagId, flag: bool) -> Result<TagRecord, RegistryError> {
        let rec = self
            .records
            .get_mut(tag_id)
            .ok_or_else(|| RegistryError::NotFound(tag_id.clone()))?;
        if rec.is_authorized == flag {
            return Ok(rec.clone());
        }
        rec.is_authorized = flag;
        let updated = rec.clone();
        self.persist()?;
        Ok(updated)
    }

    /// All records in tag order.
    pub fn list(&self) -> Vec<&TagRecord> {
        self.records.values().collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn persist(&self) -> Result<(), RegistryError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(render(self.records.values()).as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }
}

/// Tabular view for terminals: a header row, then one row per record.
pub struct Table<'a>(pub &'a [&'a TagRecord]);

impl fmt::Display for Table<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16}{:<15}First Name", "Tag ID", "Is Authorized")?;
        for r in self.0 {
            writeln!(
                f,
                "{:<16}{:<15}{}",
                r.tag_id.to_string(),
                r.authorized_text(),
                r.first_name
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(s: &str) -> TagId {
        s.parse().unwrap()
    }

    #[test]
    fn enroll_and_lookup() {
        let mut reg = Registry::in_memory();
        reg.enroll(TagRecord::new(tag("AABBCCDD"), true, "Bolivar"))
            .unwrap();
        let rec = reg.lookup(&tag("AABBCCDD")).unwrap();
        assert_eq!(rec.first_name, "Bolivar");
        assert_eq!(rec.authorized_text(), "Yes");
        assert!(matches!(
            reg.enroll(TagRecord::new(tag("AABBCCDD"), false, "Other")),
            Err(RegistryError::DuplicateKey(_))
        ));
    }

    #[test]
    fn lowercase_keys_normalize() {
        let mut reg = Registry::in_memory();
        reg.enroll(TagRecord::new(tag("aabbccdd"), true, "B")).unwrap();
        assert!(reg.lookup(&tag("AABBCCDD")).is_some());
        assert_eq!(reg.list()[0].tag_id.to_string(), "AABBCCDD");
        assert!(reg.lookup(&tag("11223344")).is_none());
    }

    #[test]
    fn set_authorized_paths() {
        let mut reg = Registry::in_memory();
        reg.enroll(TagRecord::new(tag("AABBCCDD"), true, "B")).unwrap();
        assert!(!reg.set_authorized(&tag("AABBCCDD"), false).unwrap().is_authorized);
        assert!(!reg.set_authorized(&tag("AABBCCDD"), false).unwrap().is_authorized);
        assert!(matches!(
            reg.set_authorized(&tag("11223344"), true),
            Err(RegistryError::NotFound(_))
        ));
        assert!(!reg.list()[0].is_authorized);
    }

    #[test]
    fn list_is_sorted() {
        let mut reg = Registry::in_memory();
        assert!(reg.list().is_empty());
        for (t, n) in [("CC000000", "c"), ("AA000000", "a"), ("BB000000", "b")] {
            reg.enroll(TagRecord::new(tag(t), true, n)).unwrap();
        }
        let names: Vec<&str> = reg.list().iter().map(|r| r.first_name.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.tsv");
        let mut reg = Registry::open(&path).unwrap();
        reg.enroll(TagRecord::new(tag("AABBCCDD"), true, "Bolivar"))
            .unwrap();
        reg.enroll(TagRecord::new(tag("11223344"), false, "Qing"))
            .unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "11223344\tNo\tQing\nAABBCCDD\tYes\tBolivar\n"
        );
        let again = Registry::open(&path).unwrap();
        assert_eq!(again.list(), reg.list());
    }

    #[test]
    fn names_with_tabs_rejected() {
        let mut reg = Registry::in_memory();
        assert!(matches!(
            reg.enroll(TagRecord::new(tag("AABBCCDD"), true, "a\tb")),
            Err(RegistryError::InvalidName(_))
        ));
    }

    #[test]
    fn bad_files() {
        assert!(matches!(
            parse("AABBCCDD\tMaybe\tX\n"),
            Err(RegistryError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse("AABBCCDD\tYes\n"),
            Err(RegistryError::Parse { .. })
        ));
        assert!(matches!(
            parse("AABBCCDD\tYes\tA\naabbccdd\tNo\tB\n"),
            Err(RegistryError::DuplicateKey(_))
        ));
    }

    #[test]
    fn table_header_only_when_empty() {
        let rows: Vec<&TagRecord> = Vec::new();
        let text = Table(&rows).to_string();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("Tag ID"));
    }
}
