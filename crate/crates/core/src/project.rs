//! Project files: the source schema reference, the operation logs and the
//! definitions they resolve to.
//!
//! Resolved definitions are always obtained by replaying the logs against
//! the source schema; the copy saved in the file is only checked against
//! that replay.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mart::{MartDef, MartOp, MartOutcome};
use crate::schema::{load_schema, SchemaGraph};
use crate::temporal::{TemporalStore, TimeModel};
use crate::warehouse::{Outcome, WarehouseDef, WarehouseOp};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    /// Relative to the project file's directory unless absolute.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolved {
    pub warehouse: WarehouseDef,
    pub marts: IndexMap<String, MartDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectFile {
    pub format_version: u32,
    /// Bumped by every accepted mutation.
    pub version: u64,
    pub source: SourceRef,
    pub time_model: TimeModel,
    #[serde(default)]
    pub warehouse_ops: Vec<WarehouseOp>,
    #[serde(default)]
    pub marts: IndexMap<String, Vec<MartOp>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved: Option<Resolved>,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl ProjectFile {
    pub fn new(source_path: &str, source_text: &str) -> Self {
        ProjectFile {
            format_version: FORMAT_VERSION,
            version: 0,
            source: SourceRef {
                path: source_path.to_string(),
                sha256: sha256_hex(source_text),
            },
            time_model: TimeModel::default(),
            warehouse_ops: Vec::new(),
            marts: IndexMap::new(),
            resolved: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ProjectFile = serde_json::from_str(text).map_err(|e| Error::parse("project file", e))?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Parse {
                what: "project file".into(),
                message: format!("unsupported format version {}", file.format_version),
            });
        }
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("project serializes");
        s.push('\n');
        s
    }

    /// Replay the logs against `source`.
    pub fn replay(&self, source: &SchemaGraph) -> Result<Resolved> {
        let mut warehouse = WarehouseDef::new();
        for (i, op) in self.warehouse_ops.iter().enumerate() {
            warehouse.apply(source, op).map_err(|e| {
                Error::ReplayMismatch(format!("warehouse operation {} fails: {e}", i + 1))
            })?;
        }
        if warehouse.time_model != self.time_model {
            return Err(Error::ReplayMismatch(
                "time model differs from the one recorded in the project".into(),
            ));
        }
        let mut marts = IndexMap::new();
        for (name, ops) in &self.marts {
            let mut mart = MartDef::new(name.clone());
            for (i, op) in ops.iter().enumerate() {
                mart.apply(&warehouse, op).map_err(|e| {
                    Error::ReplayMismatch(format!("mart '{name}' operation {} fails: {e}", i + 1))
                })?;
            }
            marts.insert(name.clone(), mart);
        }
        Ok(Resolved { warehouse, marts })
    }

    /// Check the source hash and that the saved resolution matches a fresh
    /// replay.
    pub fn verify(&self, source_text: &str) -> Result<Resolved> {
        let actual = sha256_hex(source_text);
        if actual != self.source.sha256 {
            return Err(Error::SourceHashMismatch {
                expected: self.source.sha256.clone(),
                actual,
            });
        }
        let resolved = self.replay(&load_schema(source_text)?)?;
        if let Some(saved) = &self.resolved {
            if saved.warehouse != resolved.warehouse {
                return Err(Error::ReplayMismatch("resolved warehouse differs from replay".into()));
            }
            for (name, m) in &resolved.marts {
                if saved.marts.get(name) != Some(m) {
                    return Err(Error::ReplayMismatch(format!("resolved mart '{name}' differs from replay")));
                }
            }
            if saved.marts.len() != resolved.marts.len() {
                return Err(Error::ReplayMismatch("saved marts differ from the logs".into()));
            }
        }
        Ok(resolved)
    }
}

/// An open project: file, source schema and resolved definitions.
#[derive(Debug, Clone)]
pub struct Project {
    pub path: PathBuf,
    pub file: ProjectFile,
    pub source: SchemaGraph,
    pub resolved: Resolved,
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Project {
    /// Create a project for `source_path` and write it to `path`.
    pub fn create(path: &Path, source_path: &str) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(base.join(source_path))?;
        let source = load_schema(&text)?;
        let mut p = Project {
            path: path.to_path_buf(),
            file: ProjectFile::new(source_path, &text),
            source,
            resolved: Resolved::default(),
        };
        p.save()?;
        Ok(p)
    }

    pub fn open(path: &Path) -> Result<Self> {
        let file = ProjectFile::parse(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(base.join(&file.source.path))?;
        let resolved = file.verify(&text)?;
        Ok(Project {
            path: path.to_path_buf(),
            source: load_schema(&text)?,
            file,
            resolved,
        })
    }

    pub fn save(&mut self) -> Result<()> {
        self.file.resolved = Some(self.resolved.clone());
        write_atomic(&self.path, &self.file.to_json())
    }

    pub fn version(&self) -> u64 {
        self.file.version
    }

    /// Directory of the temporal store, next to the project file.
    pub fn store_dir(&self) -> PathBuf {
        let stem = self
            .path
            .file_stem()
            .map_or("project".into(), |s| s.to_string_lossy().into_owned());
        self.path.with_file_name(format!("{stem}.store"))
    }

    pub fn open_store(&self) -> Result<TemporalStore> {
        TemporalStore::open(&self.store_dir())
    }

    fn check_version(&self, expected: Option<u64>) -> Result<()> {
        match expected {
            Some(v) if v != self.file.version => Err(Error::StaleVersion {
                expected: v,
                actual: self.file.version,
            }),
            _ => Ok(()),
        }
    }

    /// Replace the file with `next` once its replay succeeds.
    fn commit(&mut self, mut next: ProjectFile) -> Result<()> {
        let resolved = next.replay(&self.source)?;
        next.version += 1;
        self.file = next;
        self.resolved = resolved;
        self.save()
    }

    /// Append a warehouse operation. It is refused when it fails or when
    /// it breaks the replay of an existing mart.
    pub fn apply_warehouse(&mut self, op: WarehouseOp, expected: Option<u64>) -> Result<Outcome> {
        self.check_version(expected)?;
        let mut wh = self.resolved.warehouse.clone();
        let outcome = wh.apply(&self.source, &op)?;
        let mut next = self.file.clone();
        next.time_model = wh.time_model;
        next.warehouse_ops.push(op);
        self.commit(next)?;
        Ok(outcome)
    }

    /// Append an operation to mart `name`, creating the mart if needed.
    pub fn apply_mart(&mut self, name: &str, op: MartOp, expected: Option<u64>) -> Result<MartOutcome> {
        self.check_version(expected)?;
        let mut mart = self
            .resolved
            .marts
            .get(name)
            .cloned()
            .unwrap_or_else(|| MartDef::new(name));
        let outcome = mart.apply(&self.resolved.warehouse, &op)?;
        let mut next = self.file.clone();
        next.marts.entry(name.to_string()).or_default().push(op);
        self.commit(next)?;
        Ok(outcome)
    }

    pub fn mart(&self, name: &str) -> Result<&MartDef> {
        self.resolved
            .marts
            .get(name)
            .ok_or_else(|| Error::UnknownMart(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{serialize_schema, AttributeType, ClassDef};

    fn setup() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let source = SchemaGraph::new(
            vec![ClassDef::new("Actes").with_attribute("Code", AttributeType::String)],
            vec![],
        )
        .unwrap();
        fs::write(dir.path().join("source.json"), serialize_schema(&source)).unwrap();
        let path = dir.path().join("p.dwproj");
        (dir, path)
    }

    #[test]
    fn replay_after_reopen_is_identical() {
        let (_dir, path) = setup();
        let mut p = Project::create(&path, "source.json").unwrap();
        p.apply_warehouse(WarehouseOp::ProjectClass { class: "Actes".into() }, Some(0))
            .unwrap();
        let reopened = Project::open(&path).unwrap();
        assert_eq!(reopened.resolved, p.resolved);
        assert_eq!(reopened.version(), 1);
    }

    #[test]
    fn stale_versions_and_failed_ops_leave_the_file_alone() {
        let (_dir, path) = setup();
        let mut p = Project::create(&path, "source.json").unwrap();
        let err = p
            .apply_warehouse(WarehouseOp::ProjectClass { class: "Actes".into() }, Some(7))
            .unwrap_err();
        assert_eq!(err.kind(), "stale-version");
        let err = p
            .apply_warehouse(WarehouseOp::ProjectClass { class: "Nope".into() }, None)
            .unwrap_err();
        assert_eq!(err.kind(), "unknown-class");
        assert_eq!(p.version(), 0);
        assert!(p.file.warehouse_ops.is_empty());
    }

    #[test]
    fn edited_source_is_detected() {
        let (dir, path) = setup();
        Project::create(&path, "source.json").unwrap();
        fs::write(dir.path().join("source.json"), r#"{"classes": [], "links": []}"#).unwrap();
        assert_eq!(Project::open(&path).unwrap_err().kind(), "source-hash-mismatch");
    }
}
