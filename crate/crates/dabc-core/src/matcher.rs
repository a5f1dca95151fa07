//! Call-site matching heuristic: pairs client calls against DABC
//! definitions, binds arguments positionally and by keyword, and issues
//! vulnerability verdicts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::miner::DabcRecord;
use crate::pyparse::{CallSite, ParamKind, ParamSpec, ParsedUnit};
use crate::sigdiff::SignatureSnapshot;

/// Where a definition's parameter list came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureProvenance {
    /// Parameter list taken from a signature snapshot with this label.
    Snapshot { label: String },
    /// No signature available; matching falls back to conservative
    /// keyword-presence rules.
    Unavailable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DabcDefinition {
    pub record: DabcRecord,
    #[serde(rename = "class", default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    /// The name a client call uses: the class name for constructor
    /// DABCs, the function name otherwise.
    pub callable_name: String,
    /// Ordered parameters with the implicit instance receiver removed
    /// for constructors.
    pub params: Vec<ParamSpec>,
    pub changed_param: String,
    pub provenance: SignatureProvenance,
}

/// Builds matchable definitions from mined records, resolving parameter
/// lists against an optional signature snapshot. Records without an
/// argument name cannot be matched and are reported as warnings.
pub fn resolve_definitions(
    records: &[DabcRecord],
    signatures: Option<&SignatureSnapshot>,
) -> (Vec<DabcDefinition>, Vec<String>) {
    let mut defs = Vec::new();
    let mut warnings = Vec::new();
    for record in records {
        let Some(changed_param) = record.argument.clone() else {
            warnings.push(format!(
                "record {} has no argument name; skipped",
                record.id()
            ));
            continue;
        };
        let is_ctor = record.function_name == "__init__";
        let callable_name = if is_ctor {
            match &record.class_name {
                Some(c) => c.clone(),
                None => {
                    warnings.push(format!(
                        "record {} targets __init__ without a class; skipped",
                        record.id()
                    ));
                    continue;
                }
            }
        } else {
            record.function_name.clone()
        };
        let resolved = signatures.and_then(|snap| {
            snap.lookup(record.class_name.as_deref(), &record.function_name)
                .map(|entry| (entry.params.clone(), snap.source_label.clone()))
        });
        let (params, provenance) = match resolved {
            Some((mut params, label)) => {
                if is_ctor && !params.is_empty() {
                    params.remove(0);
                }
                if params.iter().any(|p| p.name == changed_param) {
                    (params, SignatureProvenance::Snapshot { label })
                } else {
                    warnings.push(format!(
                        "record {}: signature from {label} lacks parameter {changed_param}; matching degrades",
                        record.id()
                    ));
                    (degraded_params(&changed_param), SignatureProvenance::Unavailable)
                }
            }
            None => (degraded_params(&changed_param), SignatureProvenance::Unavailable),
        };
        defs.push(DabcDefinition {
            record: record.clone(),
            class_name: record.class_name.clone(),
            callable_name,
            params,
            changed_param,
            provenance,
        });
    }
    (defs, warnings)
}

fn degraded_params(changed_param: &str) -> Vec<ParamSpec> {
    vec![ParamSpec {
        name: changed_param.to_string(),
        default_expr: None,
        kind: ParamKind::PositionalOrKeyword,
    }]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingSource {
    Positional,
    Keyword,
    Unbound,
}

/// Pairs a call's arguments with a definition's parameters: positionals
/// fill positional-or-keyword slots in order, keywords fill by name.
/// Excess positionals without a vararg, unknown keywords without a
/// kwvararg, and duplicate assignments all mean the call disagrees with
/// the signature; the error text says why.
pub fn bind_arguments(
    defn: &DabcDefinition,
    call: &CallSite,
) -> Result<BTreeMap<String, BindingSource>, String> {
    let positional_slots: Vec<&ParamSpec> = defn
        .params
        .iter()
        .filter(|p| p.kind == ParamKind::PositionalOrKeyword)
        .collect();
    let has_vararg = defn.params.iter().any(|p| p.kind == ParamKind::Vararg);
    let has_kwvararg = defn.params.iter().any(|p| p.kind == ParamKind::Kwvararg);

    let mut bindings: BTreeMap<String, BindingSource> = defn
        .params
        .iter()
        .filter(|p| matches!(p.kind, ParamKind::PositionalOrKeyword | ParamKind::KeywordOnly))
        .map(|p| (p.name.clone(), BindingSource::Unbound))
        .collect();

    for idx in 0..call.positional_args.len() {
        match positional_slots.get(idx) {
            Some(param) => {
                bindings.insert(param.name.clone(), BindingSource::Positional);
            }
            None if has_vararg || call.has_star_args => {}
            None => {
                return Err(format!(
                    "{} positional arguments exceed the {} declared slots",
                    call.positional_args.len(),
                    positional_slots.len()
                ));
            }
        }
    }

    for (name, _) in &call.keyword_args {
        match bindings.get(name) {
            Some(BindingSource::Unbound) => {
                bindings.insert(name.clone(), BindingSource::Keyword);
            }
            Some(_) => {
                return Err(format!("argument {name} assigned both positionally and by keyword"));
            }
            None if has_kwvararg => {}
            None => {
                return Err(format!("unknown keyword argument {name}"));
            }
        }
    }

    Ok(bindings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Vulnerable,
    Safe,
    Indeterminate,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Vulnerable => "vulnerable",
            Verdict::Safe => "safe",
            Verdict::Indeterminate => "indeterminate",
        })
    }
}

/// Matches one call against one definition. `None` means no match: the
/// names disagree, the class condition fails, or the arguments do not
/// fit the signature.
pub fn match_call(
    defn: &DabcDefinition,
    call: &CallSite,
    unit_identifiers: &BTreeSet<String>,
) -> Option<(Verdict, String)> {
    if call.callee_name != defn.callable_name {
        return None;
    }
    if let Some(class) = &defn.class_name {
        if !unit_identifiers.contains(class) {
            return None;
        }
    }
    if call.has_star_kwargs {
        return Some((
            Verdict::Indeterminate,
            format!(
                "call expands **kwargs; cannot tell whether {} is assigned",
                defn.changed_param
            ),
        ));
    }
    if defn.provenance == SignatureProvenance::Unavailable {
        if call.keyword(&defn.changed_param).is_some() {
            return Some((
                Verdict::Safe,
                format!("{} assigned by keyword", defn.changed_param),
            ));
        }
        if !call.positional_args.is_empty() || call.has_star_args {
            return Some((
                Verdict::Indeterminate,
                format!(
                    "no signature available; positional arguments may assign {}",
                    defn.changed_param
                ),
            ));
        }
        return Some((
            Verdict::Vulnerable,
            format!(
                "{} not assigned; call relies on the changed default",
                defn.changed_param
            ),
        ));
    }
    let bindings = match bind_arguments(defn, call) {
        Ok(b) => b,
        Err(_) => return None,
    };
    match bindings.get(&defn.changed_param) {
        Some(BindingSource::Positional) => Some((
            Verdict::Safe,
            format!("{} assigned positionally", defn.changed_param),
        )),
        Some(BindingSource::Keyword) => Some((
            Verdict::Safe,
            format!("{} assigned by keyword", defn.changed_param),
        )),
        _ => {
            if let Some(star_at) = call.star_args_at {
                let slot = defn
                    .params
                    .iter()
                    .filter(|p| p.kind == ParamKind::PositionalOrKeyword)
                    .position(|p| p.name == defn.changed_param);
                if slot.is_some_and(|s| s >= star_at) {
                    return Some((
                        Verdict::Indeterminate,
                        format!(
                            "*-expansion may reach the {} slot positionally",
                            defn.changed_param
                        ),
                    ));
                }
            }
            Some((
                Verdict::Vulnerable,
                format!(
                    "{} not assigned; call relies on the changed default",
                    defn.changed_param
                ),
            ))
        }
    }
}

#[derive(Debug, Clone)]
pub struct VulnerableCall {
    pub dabc: DabcRecord,
    pub call: CallSite,
    pub verdict: Verdict,
    pub reason: String,
}

/// Flat row for JSONL/CSV reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dabc_id: String,
    pub path: String,
    pub line: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<usize>,
    pub verdict: Verdict,
    pub reason: String,
}

impl VulnerableCall {
    pub fn report_row(&self) -> ReportRow {
        ReportRow {
            dabc_id: self.dabc.id(),
            path: self.call.location.path.to_string_lossy().into_owned(),
            line: self.call.location.line,
            cell: self.call.location.cell_index,
            verdict: self.verdict,
            reason: self.reason.clone(),
        }
    }
}

/// Evaluates every (external call, definition) pair in a unit. Safe
/// verdicts are kept only when `include_safe` is set; output is sorted
/// by location, then DABC id.
pub fn scan_client(
    parsed: &ParsedUnit,
    defs: &[DabcDefinition],
    include_safe: bool,
) -> Vec<VulnerableCall> {
    let mut out = Vec::new();
    for call in &parsed.calls {
        for defn in defs {
            let Some((verdict, reason)) = match_call(defn, call, &parsed.identifiers) else {
                continue;
            };
            if verdict == Verdict::Safe && !include_safe {
                continue;
            }
            out.push(VulnerableCall {
                dabc: defn.record.clone(),
                call: call.clone(),
                verdict,
                reason,
            });
        }
    }
    out.sort_by(|a, b| {
        (&a.call.location.path, a.call.location.line, a.dabc.id())
            .cmp(&(&b.call.location.path, b.call.location.line, b.dabc.id()))
    });
    out
}
