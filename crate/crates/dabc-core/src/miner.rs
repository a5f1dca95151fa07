//! Mines `versionchanged` docstring directives from a library checkout,
//! attributes each hit to a parameter via the numpydoc `Parameters`
//! section, prefilters change kinds, and assembles DABC candidate
//! records.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::pyparse::{self, SourceUnit};

/// Line pattern for the directive, applied verbatim to every line.
pub const DIRECTIVE_PATTERN: &str = r"\.\. versionchanged:: .+";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    DefaultValueChange,
    TypeChange,
    Other,
    NeedsReview,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonLabel {
    NewFeature,
    ApiCompatibility,
    Maintainability,
    BugFixing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectLabel {
    Aesthetics,
    Behavior,
    Performance,
    Refactoring,
}

/// One raw directive occurrence, before classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectiveHit {
    /// Path relative to the scanned root.
    pub path: String,
    pub line: usize,
    /// Text after `versionchanged::`, trimmed.
    pub version: String,
    /// Indented block following the directive, joined with spaces.
    pub description: String,
    /// `(class, function)` of the enclosing definition, when resolved.
    pub enclosing_function: Option<(Option<String>, String)>,
    pub enclosing_param: Option<String>,
    /// Set when the containing file could not be parsed; attribution is
    /// then unavailable.
    pub parse_warning: Option<String>,
}

/// Fully qualified name of a DABC location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fqn {
    pub class_name: Option<String>,
    pub function_name: String,
    pub argument: Option<String>,
}

/// One documented default-argument change candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DabcRecord {
    pub dabc_msg: String,
    pub version: String,
    pub path: String,
    #[serde(rename = "class", default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    #[serde(rename = "function")]
    pub function_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argument: Option<String>,
    pub dabc_url: String,
    pub change_kind: ChangeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_default: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_default: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<ReasonLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect: Option<EffectLabel>,
}

impl DabcRecord {
    /// Stable human-readable id, `Class.function(argument)` style.
    pub fn id(&self) -> String {
        let callable = match &self.class_name {
            Some(c) => format!("{c}.{}", self.function_name),
            None => self.function_name.clone(),
        };
        match &self.argument {
            Some(a) => format!("{callable}({a})"),
            None => format!("{callable}()"),
        }
    }

    pub fn fqn(&self) -> Fqn {
        Fqn {
            class_name: self.class_name.clone(),
            function_name: self.function_name.clone(),
            argument: self.argument.clone(),
        }
    }
}

#[derive(Debug, Default)]
pub struct ScanReport {
    pub hits: Vec<DirectiveHit>,
    pub files_scanned: usize,
    pub warnings: Vec<String>,
}

fn directive_regex() -> Regex {
    Regex::new(DIRECTIVE_PATTERN).unwrap()
}

fn indent_width(line: &str) -> usize {
    line.len() - line.trim_start().len()
}

/// Scans every `.py` file under `root` for `versionchanged` directives.
///
/// Hits are sorted by (path, line). Files that fail to parse still
/// contribute hits, with attribution left empty and a warning recorded.
pub fn scan_directives(root: &Path) -> std::io::Result<ScanReport> {
    let mut report = ScanReport::default();
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
        let rel = file
            .strip_prefix(root)
            .unwrap_or(&file)
            .to_string_lossy()
            .replace('\\', "/");
        match pyparse::load_unit(&file) {
            Ok(unit) => scan_file(&unit, &rel, &mut report),
            Err(e) => report.warnings.push(e.to_string()),
        }
    }
    report.hits.sort_by(|a, b| (&a.path, a.line).cmp(&(&b.path, b.line)));
    Ok(report)
}

/// Scans one already-loaded unit; exposed for fixtures.
pub fn scan_unit(unit: &SourceUnit, rel_path: &str) -> ScanReport {
    let mut report = ScanReport::default();
    report.files_scanned = 1;
    scan_file(unit, rel_path, &mut report);
    report
}

fn scan_file(unit: &SourceUnit, rel_path: &str, report: &mut ScanReport) {
    let re = directive_regex();
    let lines: Vec<&str> = unit.code.lines().collect();
    let mut raw_hits = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if let Some(m) = re.find(line) {
            let after = &line[m.start() + ".. versionchanged::".len()..];
            let version = after.trim().to_string();
            let description = collect_description(&lines, i, indent_width(line));
            raw_hits.push((i + 1, version, description));
        }
    }
    if raw_hits.is_empty() {
        return;
    }

    let parsed = match pyparse::parse_unit(unit) {
        Ok(p) => Some(p),
        Err(e) => {
            report.warnings.push(e.to_string());
            None
        }
    };

    for (line_no, version, description) in raw_hits {
        let mut hit = DirectiveHit {
            path: rel_path.to_string(),
            line: line_no,
            version,
            description,
            enclosing_function: None,
            enclosing_param: None,
            parse_warning: parsed.is_none().then(|| "file did not parse".to_string()),
        };
        if let Some(parsed) = &parsed {
            attribute_hit(&mut hit, parsed, &lines);
        }
        report.hits.push(hit);
    }
}

/// Maximal block of lines after the directive indented deeper than it;
/// ends at the first line with indentation <= the directive's, or at a
/// pair of blank lines.
fn collect_description(lines: &[&str], directive_idx: usize, directive_indent: usize) -> String {
    let mut parts: Vec<&str> = Vec::new();
    let mut blanks = 0usize;
    for line in lines.iter().skip(directive_idx + 1) {
        if line.trim().is_empty() {
            blanks += 1;
            if blanks >= 2 {
                break;
            }
            continue;
        }
        if indent_width(line) <= directive_indent {
            break;
        }
        blanks = 0;
        parts.push(line.trim());
    }
    parts.join(" ")
}

fn attribute_hit(hit: &mut DirectiveHit, parsed: &pyparse::ParsedUnit, lines: &[&str]) {
    // Innermost function whose docstring contains the directive line.
    let func = parsed
        .defs
        .iter()
        .filter(|d| {
            d.docstring_span
                .map(|(s, e)| s <= hit.line && hit.line <= e)
                .is_some_and(|x| x)
        })
        .max_by_key(|d| d.span.0);
    if let Some(def) = func {
        hit.enclosing_function = Some((def.class_name.clone(), def.function_name.clone()));
        hit.enclosing_param = param_for_line(lines, def.docstring_span.unwrap(), hit.line);
        return;
    }
    // Class-level docstring: attribute to the constructor when the
    // parameter exists in its signature.
    let class = parsed
        .classes
        .iter()
        .filter(|c| {
            c.docstring_span
                .map(|(s, e)| s <= hit.line && hit.line <= e)
                .is_some_and(|x| x)
        })
        .max_by_key(|c| c.span.0);
    if let Some(class) = class {
        let param = param_for_line(lines, class.docstring_span.unwrap(), hit.line);
        let ctor = parsed
            .defs
            .iter()
            .find(|d| d.class_name.as_deref() == Some(&class.name) && d.function_name == "__init__");
        if let (Some(param), Some(ctor)) = (&param, ctor) {
            if ctor.params.iter().any(|p| &p.name == param) {
                hit.enclosing_function = Some((Some(class.name.clone()), "__init__".to_string()));
                hit.enclosing_param = Some(param.clone());
            }
        }
    }
}

/// Finds the numpydoc parameter header owning `line`: the nearest header
/// of shape `name : ...` above it inside the `Parameters` section, with
/// the directive indented deeper than the header.
fn param_for_line(lines: &[&str], docstring_span: (usize, usize), line: usize) -> Option<String> {
    let (doc_start, doc_end) = docstring_span;
    let header_re = Regex::new(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:").unwrap();
    // Locate the `Parameters` section header inside the docstring.
    let mut params_start = None;
    let mut params_indent = 0usize;
    for idx in doc_start..=doc_end.min(lines.len()) {
        let text = lines[idx - 1];
        if text.trim() == "Parameters" {
            let next = lines.get(idx).map(|l| l.trim()).unwrap_or("");
            if next.chars().all(|c| c == '-') && !next.is_empty() {
                params_start = Some(idx + 2);
                params_indent = indent_width(text);
                break;
            }
        }
    }
    let params_start = params_start?;
    if line < params_start {
        return None;
    }
    let directive_indent = indent_width(lines.get(line - 1)?);
    let mut current: Option<String> = None;
    for idx in params_start..line.min(doc_end + 1) {
        let text = lines[idx - 1];
        if text.trim().is_empty() {
            continue;
        }
        let indent = indent_width(text);
        // A dash-underlined line at or below the section indent starts a
        // new section (`Returns`, `Notes`, ...) and ends `Parameters`.
        let underlined = lines
            .get(idx)
            .map(|next| {
                let t = next.trim();
                !t.is_empty() && t.chars().all(|c| c == '-')
            })
            .unwrap_or(false);
        if indent <= params_indent && underlined {
            return None;
        }
        if let Some(cap) = header_re.captures(text.trim_start()) {
            // Parameter headers are shallower than the directive body;
            // the nearest one above the directive wins.
            if indent < directive_indent {
                current = Some(cap[1].to_string());
            }
        }
    }
    current
}

/// Classifies a directive description into a change kind.
///
/// Hits without a parameter context are `other`. The prefilter
/// over-approximates: anything not confidently matched stays
/// `needs_review` for human triage.
pub fn classify_change(description: &str, has_param: bool) -> (ChangeKind, Option<String>, Option<String>) {
    if !has_param {
        return (ChangeKind::Other, None, None);
    }
    let default_re = Regex::new(
        r"(?i)default(?:\s+value)?(?:s)?\b.*?(?:changed|updated|switched)\s+from\s+(.+?)\s+to\s+(.+?)(?:\s*[.;]|$)",
    )
    .unwrap();
    if let Some(cap) = default_re.captures(description) {
        let clean = |s: &str| s.trim().trim_end_matches('.').trim().to_string();
        return (
            ChangeKind::DefaultValueChange,
            Some(clean(&cap[1])),
            Some(clean(&cap[2])),
        );
    }
    let type_re = Regex::new(
        r"(?i)\baccept(s|ed|ing)?\b|\bno longer accepts?\b|\badded\s+\w+\s+values?\b|\btypes?\s+(are|is|was|were|changed|broadened)\b",
    )
    .unwrap();
    if type_re.is_match(description) {
        return (ChangeKind::TypeChange, None, None);
    }
    (ChangeKind::NeedsReview, None, None)
}

/// Assembles a record from a classified hit.
///
/// A default-value hit missing its parameter attribution is demoted to
/// `needs_review` rather than dropped.
pub fn build_record(
    hit: &DirectiveHit,
    kind: ChangeKind,
    old_default: Option<String>,
    new_default: Option<String>,
    url_base: &str,
) -> DabcRecord {
    let (class_name, function_name) = match &hit.enclosing_function {
        Some((c, f)) => (c.clone(), f.clone()),
        None => (None, String::new()),
    };
    let kind = if kind == ChangeKind::DefaultValueChange && hit.enclosing_param.is_none() {
        ChangeKind::NeedsReview
    } else {
        kind
    };
    DabcRecord {
        dabc_msg: hit.description.clone(),
        version: hit.version.clone(),
        path: hit.path.clone(),
        class_name,
        function_name,
        argument: hit.enclosing_param.clone(),
        dabc_url: format!("{url_base}/{}#L{}", hit.path, hit.line),
        change_kind: kind,
        old_default,
        new_default,
        reason: None,
        effect: None,
    }
}

/// Mines a checkout end to end: scan, classify, assemble, sort.
pub fn mine(root: &Path, url_base: &str) -> std::io::Result<(Vec<DabcRecord>, ScanReport)> {
    let report = scan_directives(root)?;
    let mut records = Vec::with_capacity(report.hits.len());
    for hit in &report.hits {
        let (kind, old, new) = classify_change(&hit.description, hit.enclosing_param.is_some());
        records.push(build_record(hit, kind, old, new, url_base));
    }
    Ok((records, report))
}

/// Issue numbers (`#123`) referenced in a commit message, de-duplicated
/// in order of first appearance.
pub fn extract_issue_refs(commit_message: &str) -> Vec<u64> {
    let re = Regex::new(r"#(\d+)").unwrap();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for cap in re.captures_iter(commit_message) {
        if let Ok(n) = cap[1].parse::<u64>() {
            if seen.insert(n) {
                out.push(n);
            }
        }
    }
    out
}

/// Parses `(path, line)` back out of a record's `dabc_url`.
pub fn parse_dabc_url<'a>(url: &'a str, url_base: &str) -> Option<(&'a str, usize)> {
    let rest = url.strip_prefix(url_base)?.strip_prefix('/')?;
    let (path, line) = rest.rsplit_once("#L")?;
    Some((path, line.parse().ok()?))
}

/// Writes records as JSON Lines, one record per line, UTF-8.
pub fn write_jsonl<W: std::io::Write>(mut w: W, records: &[DabcRecord]) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut w, record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {reason}")]
pub struct JsonlError {
    pub line: usize,
    pub reason: String,
}

/// Reads a JSON Lines DABC database.
pub fn read_jsonl(text: &str) -> Result<Vec<DabcRecord>, JsonlError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: DabcRecord = serde_json::from_str(line).map_err(|e| JsonlError {
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::pyparse::UnitKind;
    use std::path::PathBuf;

    pub(crate) const SVC_FIXTURE: &str = r#"class SVC(BaseSVC):
    """C-Support Vector Classification.

    Parameters
    ----------
    gamma : {'scale', 'auto'} or float, default='scale'
        Kernel coefficient for 'rbf', 'poly' and 'sigmoid'.

        - if ``gamma='scale'`` (default) is passed then it uses
          1 / (n_features * X.var()) as value of gamma,
        - if 'auto', uses 1 / n_features
        - if float, must be non-negative.

        .. versionchanged:: 0.22
           The default value of ``gamma`` changed from 'auto' to 'scale'.
    """

    def __init__(self, gamma='scale', random_state=None):
        pass
"#;

    fn unit_from(code: &str) -> SourceUnit {
        SourceUnit {
            path: PathBuf::from("svm.py"),
            kind: UnitKind::Script,
            code: code.to_string(),
            cell_map: Vec::new(),
        }
    }

    #[test]
    fn svc_gamma_fixture_yields_one_attributed_hit() {
        let report = scan_unit(&unit_from(SVC_FIXTURE), "sklearn/svm/_classes.py");
        assert_eq!(report.hits.len(), 1);
        let hit = &report.hits[0];
        assert_eq!(hit.version, "0.22");
        assert_eq!(
            hit.enclosing_function,
            Some((Some("SVC".to_string()), "__init__".to_string()))
        );
        assert_eq!(hit.enclosing_param.as_deref(), Some("gamma"));
        assert!(hit
            .description
            .contains("The default value of ``gamma`` changed from 'auto' to 'scale'."));
    }

    #[test]
    fn no_directives_empty_list() {
        let report = scan_unit(&unit_from("def f():\n    pass\n"), "f.py");
        assert!(report.hits.is_empty());
    }

    #[test]
    fn classify_default_value_change() {
        let (kind, old, new) =
            classify_change("The default value of ``gamma`` changed from 'auto' to 'scale'.", true);
        assert_eq!(kind, ChangeKind::DefaultValueChange);
        assert_eq!(old.as_deref(), Some("'auto'"));
        assert_eq!(new.as_deref(), Some("'scale'"));
    }

    #[test]
    fn classify_no_param_is_other() {
        let (kind, _, _) = classify_change("The return value changed from list to tuple.", false);
        assert_eq!(kind, ChangeKind::Other);
    }

    #[test]
    fn classify_type_broadening() {
        let (kind, _, _) = classify_change("Added float values for fractions.", true);
        assert_eq!(kind, ChangeKind::TypeChange);
        let (kind, _, _) = classify_change("The parameter now accepts arrays.", true);
        assert_eq!(kind, ChangeKind::TypeChange);
    }

    #[test]
    fn classify_unknown_is_needs_review() {
        let (kind, _, _) = classify_change("Deprecated in favour of something else.", true);
        assert_eq!(kind, ChangeKind::NeedsReview);
    }

    #[test]
    fn build_record_url_and_fqn() {
        let report = scan_unit(&unit_from(SVC_FIXTURE), "sklearn/svm/_classes.py");
        let hit = &report.hits[0];
        let (kind, old, new) = classify_change(&hit.description, true);
        let base = "https://github.com/scikit-learn/scikit-learn/blob/1.1.2";
        let record = build_record(hit, kind, old, new, base);
        assert_eq!(record.class_name.as_deref(), Some("SVC"));
        assert_eq!(record.function_name, "__init__");
        assert_eq!(record.argument.as_deref(), Some("gamma"));
        assert_eq!(record.version, "0.22");
        assert_eq!(record.change_kind, ChangeKind::DefaultValueChange);
        assert_eq!(record.old_default.as_deref(), Some("'auto'"));
        assert_eq!(record.new_default.as_deref(), Some("'scale'"));
        let (path, line) = parse_dabc_url(&record.dabc_url, base).unwrap();
        assert_eq!(path, record.path);
        assert_eq!(line, hit.line);
        assert_eq!(record.id(), "SVC.__init__(gamma)");
    }

    #[test]
    fn default_change_without_param_demoted() {
        let hit = DirectiveHit {
            path: "m.py".into(),
            line: 3,
            version: "1.0".into(),
            description: "default changed from 1 to 2".into(),
            enclosing_function: Some((None, "f".into())),
            enclosing_param: None,
            parse_warning: None,
        };
        let record = build_record(&hit, ChangeKind::DefaultValueChange, None, None, "base");
        assert_eq!(record.change_kind, ChangeKind::NeedsReview);
    }

    #[test]
    fn issue_refs_deduplicated_in_order() {
        assert_eq!(
            extract_issue_refs("DEPR: change pd.concat sort=None to sort=False (#29786)"),
            vec![29786]
        );
        assert_eq!(extract_issue_refs("no refs here"), Vec::<u64>::new());
        assert_eq!(extract_issue_refs("fixes #12, see #12 and #7"), vec![12, 7]);
    }

    #[test]
    fn regex_matches_independent_line_scan() {
        // Oracle: literal line-by-line match of the published pattern.
        let code = format!("{SVC_FIXTURE}\n# .. versionchanged:: 9.9\n#    in a comment\n");
        let report = scan_unit(&unit_from(&code), "x.py");
        let oracle = code
            .lines()
            .filter(|l| regex::Regex::new(DIRECTIVE_PATTERN).unwrap().is_match(l))
            .count();
        assert_eq!(report.hits.len(), oracle);
        assert_eq!(report.hits.len(), 2);
    }

    #[test]
    fn jsonl_round_trip_schema() {
        let record = DabcRecord {
            dabc_msg: "msg".into(),
            version: "0.22".into(),
            path: "sklearn/svm/_classes.py".into(),
            class_name: Some("SVC".into()),
            function_name: "__init__".into(),
            argument: Some("gamma".into()),
            dabc_url: "u#L1".into(),
            change_kind: ChangeKind::DefaultValueChange,
            old_default: Some("'auto'".into()),
            new_default: Some("'scale'".into()),
            reason: Some(ReasonLabel::Maintainability),
            effect: Some(EffectLabel::Behavior),
        };
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[record.clone()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let value: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        let keys: Vec<&str> = value.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        for key in [
            "dabc_msg", "version", "path", "class", "function", "argument", "dabc_url",
            "change_kind", "old_default", "new_default", "reason", "effect",
        ] {
            assert!(keys.contains(&key), "missing key {key}");
        }
        let back = read_jsonl(&text).unwrap();
        assert_eq!(back, vec![record]);
    }

    #[test]
    fn jsonl_error_carries_line_number() {
        let err = read_jsonl("{\"dabc_msg\": 1}\n").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn description_block_bounds() {
        let code = "\"\"\"doc\n.. versionchanged:: 1.0\n   first part\n   second part\nnot included\n\"\"\"\n";
        let report = scan_unit(&unit_from(code), "d.py");
        assert_eq!(report.hits[0].description, "first part second part");
    }

    #[test]
    fn class_level_directive_attributed_to_ctor() {
        let code = r#"class Thing:
    """Doc.

    Parameters
    ----------
    alpha : float
        Something.

        .. versionchanged:: 2.0
           The default value of alpha changed from 1 to 2.
    """

    def __init__(self, alpha=2):
        pass
"#;
        let report = scan_unit(&unit_from(code), "t.py");
        let hit = &report.hits[0];
        assert_eq!(
            hit.enclosing_function,
            Some((Some("Thing".to_string()), "__init__".to_string()))
        );
        assert_eq!(hit.enclosing_param.as_deref(), Some("alpha"));
    }

    #[test]
    fn mining_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("svm.py"), SVC_FIXTURE).unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/other.py"), "x = 1\n").unwrap();
        let (a, _) = mine(dir.path(), "base").unwrap();
        let (b, _) = mine(dir.path(), "base").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
    }
}
