//! Cross-version signature diffing: snapshots every function signature in
//! a checkout, diffs default values between two snapshots, and reconciles
//! the diffs with documentation-mined records to flag undocumented
//! changes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::miner::{ChangeKind, DabcRecord};
use crate::pyparse::{self, ParamSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignatureEntry {
    #[serde(rename = "class", default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    #[serde(rename = "function")]
    pub function_name: String,
    pub params: Vec<ParamSpec>,
}

/// Map from `class?.function` key to its ordered parameter list.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SignatureSnapshot {
    pub source_label: String,
    pub entries: BTreeMap<String, SignatureEntry>,
}

pub fn fqn_key(class_name: Option<&str>, function_name: &str) -> String {
    match class_name {
        Some(c) => format!("{c}.{function_name}"),
        None => function_name.to_string(),
    }
}

impl SignatureSnapshot {
    pub fn lookup(&self, class_name: Option<&str>, function_name: &str) -> Option<&SignatureEntry> {
        self.entries.get(&fqn_key(class_name, function_name))
    }
}

#[derive(Debug, Default)]
pub struct SnapshotReport {
    pub files_scanned: usize,
    pub warnings: Vec<String>,
    /// Keys that were defined more than once; the later definition wins.
    pub duplicate_keys: Vec<String>,
}

/// Builds a snapshot of every function definition under `root`.
pub fn snapshot(root: &Path, label: &str) -> std::io::Result<(SignatureSnapshot, SnapshotReport)> {
    let mut snap = SignatureSnapshot {
        source_label: label.to_string(),
        entries: BTreeMap::new(),
    };
    let mut report = SnapshotReport::default();
    let mut files: Vec<PathBuf> = WalkDir::new(root)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("py"))
        .collect();
    files.sort();
    for file in files {
        report.files_scanned += 1;
        let unit = match pyparse::load_unit(&file) {
            Ok(u) => u,
            Err(e) => {
                report.warnings.push(e.to_string());
                continue;
            }
        };
        let parsed = match pyparse::parse_unit(&unit) {
            Ok(p) => p,
            Err(e) => {
                report.warnings.push(e.to_string());
                continue;
            }
        };
        for def in parsed.defs {
            let key = fqn_key(def.class_name.as_deref(), &def.function_name);
            let entry = SignatureEntry {
                class_name: def.class_name,
                function_name: def.function_name,
                params: def.params,
            };
            if snap.entries.insert(key.clone(), entry).is_some() {
                report.duplicate_keys.push(key);
            }
        }
    }
    Ok((snap, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffKind {
    ValueChanged,
    DefaultAdded,
    DefaultRemoved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefaultDiff {
    #[serde(rename = "class", default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    #[serde(rename = "function")]
    pub function_name: String,
    pub param: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_default: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_default: Option<String>,
    pub diff_kind: DiffKind,
}

/// Textual normalization for default comparison: internal whitespace is
/// collapsed and single quotes are rewritten as double quotes. No
/// expression evaluation.
pub fn normalize_default(text: &str) -> String {
    let collapsed: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.replace('\'', "\"")
}

/// Default-value diffs between two snapshots.
///
/// Only parameters present in both versions of a function are compared;
/// added or removed functions and renamed parameters are signature
/// changes, a different category.
pub fn diff_defaults(old: &SignatureSnapshot, new: &SignatureSnapshot) -> Vec<DefaultDiff> {
    let mut diffs = Vec::new();
    for (key, old_entry) in &old.entries {
        let Some(new_entry) = new.entries.get(key) else {
            continue;
        };
        for old_param in &old_entry.params {
            let Some(new_param) = new_entry.params.iter().find(|p| p.name == old_param.name)
            else {
                continue;
            };
            let diff_kind = match (&old_param.default_expr, &new_param.default_expr) {
                (Some(o), Some(n)) if normalize_default(o) != normalize_default(n) => {
                    DiffKind::ValueChanged
                }
                (Some(_), None) => DiffKind::DefaultRemoved,
                (None, Some(_)) => DiffKind::DefaultAdded,
                _ => continue,
            };
            diffs.push(DefaultDiff {
                class_name: old_entry.class_name.clone(),
                function_name: old_entry.function_name.clone(),
                param: old_param.name.clone(),
                old_default: old_param.default_expr.clone(),
                new_default: new_param.default_expr.clone(),
                diff_kind,
            });
        }
    }
    diffs
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconcileReport {
    /// Diffs with a matching documentation record.
    pub documented: Vec<(DefaultDiff, DabcRecord)>,
    /// Diffs with no record: candidate missing documentation.
    pub undocumented: Vec<DefaultDiff>,
    /// Records with no diff in this version pair.
    pub doc_only: Vec<DabcRecord>,
}

/// Partitions diffs and default-value-change records by fqn triple
/// equality (class, function, argument).
pub fn reconcile(diffs: &[DefaultDiff], records: &[DabcRecord]) -> ReconcileReport {
    let records: Vec<&DabcRecord> = records
        .iter()
        .filter(|r| r.change_kind == ChangeKind::DefaultValueChange)
        .collect();
    let mut documented = Vec::new();
    let mut undocumented = Vec::new();
    let mut matched_records = vec![false; records.len()];
    for diff in diffs {
        let hit = records.iter().position(|r| {
            r.class_name == diff.class_name
                && r.function_name == diff.function_name
                && r.argument.as_deref() == Some(diff.param.as_str())
        });
        match hit {
            Some(i) => {
                matched_records[i] = true;
                documented.push((diff.clone(), records[i].clone()));
            }
            None => undocumented.push(diff.clone()),
        }
    }
    let doc_only = records
        .iter()
        .zip(&matched_records)
        .filter(|(_, matched)| !**matched)
        .map(|(r, _)| (*r).clone())
        .collect();
    ReconcileReport {
        documented,
        undocumented,
        doc_only,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::{self, ChangeKind};

    fn snap_from(files: &[(&str, &str)], label: &str) -> SignatureSnapshot {
        let dir = tempfile::tempdir().unwrap();
        for (name, code) in files {
            let path = dir.path().join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).unwrap();
            }
            std::fs::write(path, code).unwrap();
        }
        snapshot(dir.path(), label).unwrap().0
    }

    #[test]
    fn snapshot_captures_defaults() {
        let snap = snap_from(&[("m.py", "def sum(a=0, b=0):\n    return a + b\n")], "v1");
        let entry = snap.lookup(None, "sum").unwrap();
        assert_eq!(entry.params.len(), 2);
        assert_eq!(entry.params[0].default_expr.as_deref(), Some("0"));
        assert_eq!(entry.params[1].default_expr.as_deref(), Some("0"));
    }

    #[test]
    fn empty_directory_empty_snapshot() {
        let snap = snap_from(&[], "v0");
        assert!(snap.entries.is_empty());
    }

    #[test]
    fn duplicate_key_warns_and_replaces() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("a.py"),
            "class SVC:\n    def __init__(self, gamma='auto'):\n        pass\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("b.py"),
            "class SVC:\n    def __init__(self, gamma='scale'):\n        pass\n",
        )
        .unwrap();
        let (snap, report) = snapshot(dir.path(), "v").unwrap();
        assert_eq!(report.duplicate_keys, vec!["SVC.__init__".to_string()]);
        // Files scan in name order, so b.py wins.
        let entry = snap.lookup(Some("SVC"), "__init__").unwrap();
        assert_eq!(entry.params[1].default_expr.as_deref(), Some("'scale'"));
    }

    #[test]
    fn gamma_value_change_detected() {
        let old = snap_from(
            &[("svm.py", "class SVC:\n    def __init__(self, gamma='auto'):\n        pass\n")],
            "0.21",
        );
        let new = snap_from(
            &[("svm.py", "class SVC:\n    def __init__(self, gamma='scale'):\n        pass\n")],
            "0.22",
        );
        let diffs = diff_defaults(&old, &new);
        assert_eq!(diffs.len(), 1);
        assert_eq!(diffs[0].diff_kind, DiffKind::ValueChanged);
        assert_eq!(diffs[0].old_default.as_deref(), Some("'auto'"));
        assert_eq!(diffs[0].new_default.as_deref(), Some("'scale'"));
    }

    #[test]
    fn self_diff_is_empty() {
        let snap = snap_from(
            &[("m.py", "def f(a=1, b='x', *args, c=None, **kw):\n    pass\n")],
            "v",
        );
        assert!(diff_defaults(&snap, &snap).is_empty());
    }

    #[test]
    fn default_added_and_removed() {
        let old = snap_from(&[("m.py", "def concat(objs, sort):\n    pass\n")], "0.x");
        let new = snap_from(&[("m.py", "def concat(objs, sort=False):\n    pass\n")], "1.0");
        let diffs = diff_defaults(&old, &new);
        assert_eq!(diffs.len(), 1);
        assert_eq!(diffs[0].diff_kind, DiffKind::DefaultAdded);
        let back = diff_defaults(&new, &old);
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].diff_kind, DiffKind::DefaultRemoved);
    }

    #[test]
    fn antisymmetry_of_value_change() {
        let old = snap_from(&[("m.py", "def f(x=1):\n    pass\n")], "a");
        let new = snap_from(&[("m.py", "def f(x=2):\n    pass\n")], "b");
        let fwd = diff_defaults(&old, &new);
        let bwd = diff_defaults(&new, &old);
        assert_eq!(fwd[0].diff_kind, DiffKind::ValueChanged);
        assert_eq!(bwd[0].diff_kind, DiffKind::ValueChanged);
        assert_eq!(fwd[0].old_default, bwd[0].new_default);
        assert_eq!(fwd[0].new_default, bwd[0].old_default);
    }

    #[test]
    fn quote_style_is_normalized() {
        let old = snap_from(&[("m.py", "def f(x='a'):\n    pass\n")], "a");
        let new = snap_from(&[("m.py", "def f(x=\"a\"):\n    pass\n")], "b");
        assert!(diff_defaults(&old, &new).is_empty());
    }

    #[test]
    fn renamed_param_is_not_a_diff() {
        let old = snap_from(&[("m.py", "def f(x=1):\n    pass\n")], "a");
        let new = snap_from(&[("m.py", "def f(y=1):\n    pass\n")], "b");
        assert!(diff_defaults(&old, &new).is_empty());
    }

    fn gamma_record() -> DabcRecord {
        let report = miner::scan_unit(
            &crate::pyparse::SourceUnit {
                path: "svm.py".into(),
                kind: crate::pyparse::UnitKind::Script,
                code: crate::miner::tests::SVC_FIXTURE.to_string(),
                cell_map: Vec::new(),
            },
            "sklearn/svm/_classes.py",
        );
        let hit = &report.hits[0];
        let (kind, old, new) = miner::classify_change(&hit.description, true);
        miner::build_record(hit, kind, old, new, "base")
    }

    #[test]
    fn reconcile_partitions() {
        let old = snap_from(
            &[("svm.py", "class SVC:\n    def __init__(self, gamma='auto'):\n        pass\ndef _fit(tol=1e-3):\n    pass\n")],
            "0.21",
        );
        let new = snap_from(
            &[("svm.py", "class SVC:\n    def __init__(self, gamma='scale'):\n        pass\ndef _fit(tol=1e-4):\n    pass\n")],
            "0.22",
        );
        let diffs = diff_defaults(&old, &new);
        assert_eq!(diffs.len(), 2);
        let record = gamma_record();
        assert_eq!(record.change_kind, ChangeKind::DefaultValueChange);
        let report = reconcile(&diffs, &[record]);
        assert_eq!(report.documented.len(), 1);
        assert_eq!(report.documented[0].1.argument.as_deref(), Some("gamma"));
        assert_eq!(report.undocumented.len(), 1);
        assert_eq!(report.undocumented[0].function_name, "_fit");
        assert!(report.doc_only.is_empty());
        assert_eq!(report.documented.len() + report.undocumented.len(), diffs.len());
    }

    #[test]
    fn reconcile_doc_only() {
        let record = gamma_record();
        let report = reconcile(&[], &[record.clone()]);
        assert!(report.documented.is_empty());
        assert!(report.undocumented.is_empty());
        assert_eq!(report.doc_only, vec![record]);
    }
}
