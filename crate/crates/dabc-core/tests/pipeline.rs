//! Cross-module pipeline: mine a library fixture, resolve definitions,
//! and scan script and notebook clients.

use std::path::PathBuf;

use dabc_core::matcher::{self, Verdict};
use dabc_core::miner;
use dabc_core::pyparse::{self, UnitKind};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn mined_record_flags_notebook_client() {
    let (records, report) = miner::mine(&fixtures().join("library"), "local").unwrap();
    assert!(report.warnings.is_empty());
    assert_eq!(records.len(), 1);
    let (defs, warnings) = matcher::resolve_definitions(&records, None);
    assert!(warnings.is_empty());

    let unit = pyparse::load_unit(&fixtures().join("dabc_example.ipynb")).unwrap();
    assert_eq!(unit.kind, UnitKind::Notebook);
    let parsed = pyparse::parse_unit(&unit).unwrap();
    assert!(!parsed.partial);
    assert!(pyparse::unit_imports_library(&parsed, "sklearn"));

    let hits = matcher::scan_client(&parsed, &defs, false);
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].dabc.id(), "SVC.__init__(gamma)");
    assert_eq!(hits[0].verdict, Verdict::Vulnerable);
    // The call sits in the fourth notebook cell (index 3; the leading
    // markdown cell keeps its position in the numbering).
    assert_eq!(hits[0].call.location.cell_index, Some(3));
}

#[test]
fn script_and_notebook_clients_agree() {
    let (records, _) = miner::mine(&fixtures().join("library"), "local").unwrap();
    let (defs, _) = matcher::resolve_definitions(&records, None);

    let script = pyparse::load_unit(&fixtures().join("dabc_example.py")).unwrap();
    let parsed_script = pyparse::parse_unit(&script).unwrap();
    let script_hits = matcher::scan_client(&parsed_script, &defs, false);

    let notebook = pyparse::load_unit(&fixtures().join("dabc_example.ipynb")).unwrap();
    let parsed_nb = pyparse::parse_unit(&notebook).unwrap();
    let nb_hits = matcher::scan_client(&parsed_nb, &defs, false);

    assert_eq!(script_hits.len(), nb_hits.len());
    assert_eq!(script_hits[0].dabc.id(), nb_hits[0].dabc.id());
    assert_eq!(script_hits[0].verdict, nb_hits[0].verdict);
}
