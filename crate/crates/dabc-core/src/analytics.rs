//! Structural metrics over client units, Spearman rank correlation with
//! permutation significance, coefficient bucketing, module
//! classification, and the aggregate study tables.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matcher::{ReportRow, Verdict};
use crate::miner::DabcRecord;
use crate::pyparse::{CallSite, ParsedUnit};

/// Python builtin callables counted as builtin calls.
const BUILTINS: &[&str] = &[
    "abs", "aiter", "all", "anext", "any", "ascii", "bin", "bool", "breakpoint", "bytearray",
    "bytes", "callable", "chr", "classmethod", "compile", "complex", "delattr", "dict", "dir",
    "divmod", "enumerate", "eval", "exec", "filter", "float", "format", "frozenset", "getattr",
    "globals", "hasattr", "hash", "help", "hex", "id", "input", "int", "isinstance", "issubclass",
    "iter", "len", "list", "locals", "map", "max", "memoryview", "min", "next", "object", "oct",
    "open", "ord", "pow", "print", "property", "range", "repr", "reversed", "round", "set",
    "setattr", "slice", "sorted", "staticmethod", "str", "sum", "super", "tuple", "type", "vars",
    "zip",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructuralMetrics {
    pub sloc: usize,
    pub blank_loc: usize,
    pub comment_loc: usize,
    pub api_calls_count: usize,
    pub api_calls_unique: usize,
    pub builtin_calls_count: usize,
    pub builtin_calls_unique: usize,
    pub user_calls_count: usize,
    pub user_calls_unique: usize,
    pub cyclomatic: usize,
}

fn call_key(call: &CallSite) -> String {
    match &call.receiver_text {
        Some(r) => format!("{r}.{}", call.callee_name),
        None => call.callee_name.clone(),
    }
}

/// Names bound by import statements: module aliases, terminal module
/// components, and from-imported names.
fn imported_names(parsed: &ParsedUnit) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    for import in &parsed.imports {
        if import.imported_names.is_empty() {
            match &import.alias {
                Some(alias) => {
                    names.insert(alias.clone());
                }
                None => {
                    // `import a.b.c` binds `a`.
                    if let Some(head) = import.module_path.split('.').next() {
                        if !head.is_empty() {
                            names.insert(head.to_string());
                        }
                    }
                }
            }
        }
        for (name, alias) in &import.imported_names {
            names.insert(alias.clone().unwrap_or_else(|| name.clone()).clone());
        }
    }
    names
}

fn receiver_head(call: &CallSite) -> Option<&str> {
    call.receiver_text
        .as_deref()
        .and_then(|r| r.split('.').next())
        .filter(|h| !h.is_empty())
}

/// Counts line classes and call categories for one unit.
///
/// A call is an API call when its callee or receiver head is an
/// imported name, a builtin call when the bare callee is a Python
/// builtin, and a user call when the callee is defined in the unit.
/// Cyclomatic complexity is 1 + decision points, 0 for an empty unit.
pub fn compute_metrics(parsed: &ParsedUnit) -> StructuralMetrics {
    let mut metrics = StructuralMetrics::default();
    for line in parsed.unit.code.lines() {
        let trimmed = line.trim_start();
        if trimmed.is_empty() {
            metrics.blank_loc += 1;
        } else if trimmed.starts_with('#') {
            metrics.comment_loc += 1;
        } else {
            metrics.sloc += 1;
        }
    }

    let imported = imported_names(parsed);
    let mut api_seen = BTreeSet::new();
    let mut builtin_seen = BTreeSet::new();
    let mut user_seen = BTreeSet::new();
    for call in &parsed.calls {
        let is_api = match receiver_head(call) {
            Some(head) => imported.contains(head),
            None => imported.contains(&call.callee_name),
        };
        if is_api {
            metrics.api_calls_count += 1;
            api_seen.insert(call_key(call));
        } else if call.receiver_text.is_none() && BUILTINS.contains(&call.callee_name.as_str()) {
            metrics.builtin_calls_count += 1;
            builtin_seen.insert(call.callee_name.clone());
        }
    }
    for call in &parsed.local_calls {
        metrics.user_calls_count += 1;
        user_seen.insert(call_key(call));
    }
    metrics.api_calls_unique = api_seen.len();
    metrics.builtin_calls_unique = builtin_seen.len();
    metrics.user_calls_unique = user_seen.len();
    metrics.cyclomatic = if metrics.sloc == 0 {
        0
    } else {
        1 + parsed.decision_points
    };
    metrics
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CorrelationError {
    #[error("correlation needs at least 2 paired samples, got {0}")]
    TooFew(usize),
    #[error("input vectors have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation is undefined on a constant vector")]
    Degenerate,
}

/// Average ranks (1-based); ties share the mean of their rank range.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the mean of ranks i+1..=j+1.
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, CorrelationError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CorrelationError::Degenerate);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson over average-rank vectors.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, CorrelationError> {
    if xs.len() != ys.len() {
        return Err(CorrelationError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(CorrelationError::TooFew(xs.len()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Two-sided permutation p-value for the Spearman coefficient:
/// `(hits + 1) / (iterations + 1)` where a hit is a shuffled-ys
/// coefficient at least as extreme as the observed one. Deterministic
/// for a given seed.
pub fn perm_pvalue(
    xs: &[f64],
    ys: &[f64],
    iterations: usize,
    seed: u64,
) -> Result<f64, CorrelationError> {
    let observed = spearman(xs, ys)?.abs();
    let x_ranks = average_ranks(xs);
    let mut y_ranks = average_ranks(ys);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..iterations {
        y_ranks.shuffle(&mut rng);
        let r = pearson(&x_ranks, &y_ranks)?;
        if r.abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (iterations + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationLevel {
    Negligible,
    Low,
    Moderate,
    High,
    VeryHigh,
}

impl std::fmt::Display for CorrelationLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorrelationLevel::Negligible => "negligible",
            CorrelationLevel::Low => "low",
            CorrelationLevel::Moderate => "moderate",
            CorrelationLevel::High => "high",
            CorrelationLevel::VeryHigh => "very_high",
        })
    }
}

/// Half-open magnitude buckets: [0, 0.30) negligible, [0.30, 0.50) low,
/// [0.50, 0.70) moderate, [0.70, 0.90) high, [0.90, 1.00] very high.
pub fn bucket(coefficient: f64) -> CorrelationLevel {
    let c = coefficient.abs();
    if c < 0.30 {
        CorrelationLevel::Negligible
    } else if c < 0.50 {
        CorrelationLevel::Low
    } else if c < 0.70 {
        CorrelationLevel::Moderate
    } else if c < 0.90 {
        CorrelationLevel::High
    } else {
        CorrelationLevel::VeryHigh
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub coefficient: f64,
    pub level: CorrelationLevel,
    pub p_value: f64,
    pub n: usize,
}

pub fn correlate(
    xs: &[f64],
    ys: &[f64],
    iterations: usize,
    seed: u64,
) -> Result<CorrelationResult, CorrelationError> {
    let coefficient = spearman(xs, ys)?;
    let p_value = perm_pvalue(xs, ys, iterations, seed)?;
    Ok(CorrelationResult {
        coefficient,
        level: bucket(coefficient),
        p_value,
        n: xs.len(),
    })
}

/// Ordered prefix-to-module mapping, shipped as a JSON array of
/// `{prefix, module}` objects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleMapping {
    pub prefix: String,
    pub module: String,
}

/// Longest matching path prefix wins; prefixes match whole path
/// components. Unmapped paths fall back to "Others".
pub fn classify_module(record_path: &str, mapping: &[ModuleMapping]) -> String {
    let path = record_path.replace('\\', "/");
    let mut best: Option<&ModuleMapping> = None;
    for entry in mapping {
        let prefix = entry.prefix.trim_end_matches('/');
        let matches = path == prefix
            || (path.starts_with(prefix) && path.as_bytes().get(prefix.len()) == Some(&b'/'));
        if matches && best.is_none_or(|b| prefix.len() > b.prefix.trim_end_matches('/').len()) {
            best = Some(entry);
        }
    }
    best.map(|b| b.module.clone())
        .unwrap_or_else(|| "Others".to_string())
}

/// A rendered study table: header row plus string cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn csv_escape(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.headers.iter().map(|h| csv_escape(h)).collect::<Vec<_>>().join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(|c| csv_escape(c)).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("### {}\n\n", self.title));
        out.push_str(&format!("| {} |\n", self.headers.join(" | ")));
        out.push_str(&format!(
            "|{}|\n",
            self.headers.iter().map(|_| " --- ").collect::<Vec<_>>().join("|")
        ));
        for row in &self.rows {
            out.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    /// DABC count per version, descending by count, name tie-break.
    pub version_counts: Vec<(String, usize)>,
    /// DABC count per module under the supplied mapping.
    pub module_counts: Vec<(String, usize)>,
    /// Vulnerable-call count and percentage per DABC id.
    pub call_counts: Vec<(String, usize, f64)>,
    /// Units with at least one vulnerable verdict.
    pub client_count: usize,
    pub vulnerable_call_count: usize,
}

fn sorted_counts(counter: BTreeMap<String, usize>) -> Vec<(String, usize)> {
    let mut rows: Vec<(String, usize)> = counter.into_iter().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rows
}

/// Builds the study's aggregate tables from mined records and scan
/// output. Call percentages are over vulnerable verdicts only.
pub fn aggregate(
    records: &[DabcRecord],
    rows: &[ReportRow],
    mapping: &[ModuleMapping],
) -> AggregateReport {
    let mut by_version: BTreeMap<String, usize> = BTreeMap::new();
    let mut by_module: BTreeMap<String, usize> = BTreeMap::new();
    for record in records {
        *by_version.entry(record.version.clone()).or_default() += 1;
        *by_module.entry(classify_module(&record.path, mapping)).or_default() += 1;
    }

    let vulnerable: Vec<&ReportRow> =
        rows.iter().filter(|r| r.verdict == Verdict::Vulnerable).collect();
    let mut by_dabc: BTreeMap<String, usize> = BTreeMap::new();
    let mut clients: BTreeSet<&str> = BTreeSet::new();
    for row in &vulnerable {
        *by_dabc.entry(row.dabc_id.clone()).or_default() += 1;
        clients.insert(row.path.as_str());
    }
    let total = vulnerable.len();
    let call_counts = sorted_counts(by_dabc)
        .into_iter()
        .map(|(id, count)| {
            let pct = if total == 0 {
                0.0
            } else {
                count as f64 * 100.0 / total as f64
            };
            (id, count, pct)
        })
        .collect();

    AggregateReport {
        version_counts: sorted_counts(by_version),
        module_counts: sorted_counts(by_module),
        call_counts,
        client_count: clients.len(),
        vulnerable_call_count: total,
    }
}

impl AggregateReport {
    pub fn tables(&self) -> Vec<Table> {
        let version_table = Table {
            title: "DABCs per version".into(),
            headers: vec!["version".into(), "count".into()],
            rows: self
                .version_counts
                .iter()
                .map(|(v, c)| vec![v.clone(), c.to_string()])
                .collect(),
        };
        let module_table = Table {
            title: "DABCs per module".into(),
            headers: vec!["module".into(), "count".into()],
            rows: self
                .module_counts
                .iter()
                .map(|(m, c)| vec![m.clone(), c.to_string()])
                .collect(),
        };
        let calls_table = Table {
            title: "Vulnerable calls per DABC".into(),
            headers: vec!["dabc".into(), "calls".into(), "percent".into()],
            rows: self
                .call_counts
                .iter()
                .map(|(id, c, pct)| vec![id.clone(), c.to_string(), format!("{pct:.1}")])
                .collect(),
        };
        let clients_table = Table {
            title: "Vulnerable clients and calls".into(),
            headers: vec!["clients".into(), "vulnerable_calls".into()],
            rows: vec![vec![
                self.client_count.to_string(),
                self.vulnerable_call_count.to_string(),
            ]],
        };
        vec![version_table, module_table, calls_table, clients_table]
    }
}
