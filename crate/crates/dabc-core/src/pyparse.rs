//! Python front-end: loads scripts and Jupyter notebooks into a uniform
//! parsed representation (imports, function definitions with default
//! expressions, external call sites, identifier set).

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rustpython_parser::ast::{self, Ranged};
use rustpython_parser::Parse;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: unreadable file: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("{path}: malformed notebook JSON: {reason}")]
    MalformedNotebook { path: PathBuf, reason: String },
    #[error("{path}: unsupported extension (expected .py or .ipynb)")]
    UnsupportedExtension { path: PathBuf },
}

#[derive(Debug, thiserror::Error)]
#[error("{path}: syntax error: {reason}")]
pub struct ParseUnitError {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Script,
    Notebook,
}

/// Lines contributed to the concatenated code by one notebook cell.
/// Line numbers are 1-based and the range is inclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSpan {
    pub cell_index: usize,
    pub start_line: usize,
    pub end_line: usize,
}

#[derive(Debug, Clone)]
pub struct SourceUnit {
    pub path: PathBuf,
    pub kind: UnitKind,
    pub code: String,
    /// Empty for scripts.
    pub cell_map: Vec<CellSpan>,
}

impl SourceUnit {
    /// Cell index owning a 1-based line number, if this is a notebook.
    pub fn cell_of_line(&self, line: usize) -> Option<usize> {
        self.cell_map
            .iter()
            .find(|c| c.start_line <= line && line <= c.end_line)
            .map(|c| c.cell_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportRecord {
    /// Dotted module path; for relative imports the leading dots are kept.
    pub module_path: String,
    pub alias: Option<String>,
    /// `(name, alias)` pairs for `from module import name as alias`.
    pub imported_names: Vec<(String, Option<String>)>,
    pub line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    PositionalOrKeyword,
    KeywordOnly,
    Vararg,
    Kwvararg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    /// Verbatim source text of the default expression.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_expr: Option<String>,
    pub kind: ParamKind,
}

#[derive(Debug, Clone)]
pub struct FunctionDef {
    pub function_name: String,
    /// Innermost enclosing class, if any.
    pub class_name: Option<String>,
    pub params: Vec<ParamSpec>,
    pub docstring: Option<String>,
    /// 1-based line range of the docstring literal, when present.
    pub docstring_span: Option<(usize, usize)>,
    /// 1-based (start_line, end_line) of the whole definition.
    pub span: (usize, usize),
}

/// Class statement with its docstring, used for directive attribution in
/// class-level documentation.
#[derive(Debug, Clone)]
pub struct ClassDef {
    pub name: String,
    pub docstring: Option<String>,
    pub docstring_span: Option<(usize, usize)>,
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub path: PathBuf,
    pub line: usize,
    pub cell_index: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct CallSite {
    /// Terminal name of the call target, e.g. `cross_val_score` from
    /// `model_selection.cross_val_score(...)`.
    pub callee_name: String,
    /// Dotted prefix before the terminal name, verbatim.
    pub receiver_text: Option<String>,
    /// Non-star positional argument expressions, in source order.
    pub positional_args: Vec<String>,
    /// Keyword arguments in source order; keys are unique.
    pub keyword_args: Vec<(String, String)>,
    pub has_star_args: bool,
    /// Number of positional arguments preceding the first `*` expansion.
    pub star_args_at: Option<usize>,
    pub has_star_kwargs: bool,
    pub location: Location,
}

impl CallSite {
    pub fn keyword(&self, name: &str) -> Option<&str> {
        self.keyword_args
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }
}

impl fmt::Display for CallSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(...) at {}:{}", self.callee_name, self.location.path.display(), self.location.line)
    }
}

#[derive(Debug, Clone)]
pub struct ParsedUnit {
    pub unit: SourceUnit,
    pub imports: Vec<ImportRecord>,
    pub defs: Vec<FunctionDef>,
    pub classes: Vec<ClassDef>,
    /// External calls only: the callee is not defined in this unit.
    pub calls: Vec<CallSite>,
    /// Calls to locally defined functions, kept for structural metrics.
    pub local_calls: Vec<CallSite>,
    pub identifiers: BTreeSet<String>,
    /// Decision points (if/for/while/and/or/ternary/except/assert/
    /// comprehension-if) counted over the whole unit.
    pub decision_points: usize,
    /// True when some notebook cells failed to parse and were dropped.
    pub partial: bool,
}

/// Reads a `.py` or `.ipynb` file into a [`SourceUnit`].
///
/// Notebook code cells are concatenated in order; shell/magic lines
/// (leading `%`, `!` or `?` after indentation) are dropped. Input is
/// decoded as UTF-8 with replacement characters on invalid bytes.
pub fn load_unit(path: &Path) -> Result<SourceUnit, LoadError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let bytes = std::fs::read(path).map_err(|e| LoadError::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let text = String::from_utf8_lossy(&bytes).into_owned();
    match ext {
        "py" => Ok(SourceUnit {
            path: path.to_path_buf(),
            kind: UnitKind::Script,
            code: text,
            cell_map: Vec::new(),
        }),
        "ipynb" => load_notebook(path, &text),
        _ => Err(LoadError::UnsupportedExtension { path: path.to_path_buf() }),
    }
}

fn is_magic_line(line: &str) -> bool {
    matches!(line.trim_start().chars().next(), Some('%') | Some('!') | Some('?'))
}

fn load_notebook(path: &Path, text: &str) -> Result<SourceUnit, LoadError> {
    let json: serde_json::Value =
        serde_json::from_str(text).map_err(|e| LoadError::MalformedNotebook {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let cells = json
        .get("cells")
        .and_then(|c| c.as_array())
        .ok_or_else(|| LoadError::MalformedNotebook {
            path: path.to_path_buf(),
            reason: "missing top-level `cells` array".into(),
        })?;

    let mut code = String::new();
    let mut cell_map = Vec::new();
    let mut next_line = 1usize;
    for (cell_index, cell) in cells.iter().enumerate() {
        if cell.get("cell_type").and_then(|t| t.as_str()) != Some("code") {
            continue;
        }
        let source = match cell.get("source") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Array(parts)) => parts
                .iter()
                .filter_map(|p| p.as_str())
                .collect::<String>(),
            _ => String::new(),
        };
        let mut lines_added = 0usize;
        for line in source.lines() {
            if is_magic_line(line) {
                continue;
            }
            code.push_str(line);
            code.push('\n');
            lines_added += 1;
        }
        if lines_added > 0 {
            cell_map.push(CellSpan {
                cell_index,
                start_line: next_line,
                end_line: next_line + lines_added - 1,
            });
            next_line += lines_added;
        }
    }
    Ok(SourceUnit {
        path: path.to_path_buf(),
        kind: UnitKind::Notebook,
        code,
        cell_map,
    })
}

/// True iff `token` occurs as a dotted-path component of any import's
/// module path. Component equality, not substring: `sklearnex` does not
/// match `sklearn`.
pub fn unit_imports_library(parsed: &ParsedUnit, library_token: &str) -> bool {
    parsed.imports.iter().any(|imp| {
        imp.module_path
            .split('.')
            .any(|component| component == library_token)
    })
}

/// Relaxed variant replicating the substring query used for the original
/// corpus filtering.
pub fn unit_imports_library_substring(parsed: &ParsedUnit, library_token: &str) -> bool {
    parsed.imports.iter().any(|imp| imp.module_path.contains(library_token))
}

/// Byte-offset to 1-based line number lookup.
struct LineIndex {
    starts: Vec<usize>,
}

impl LineIndex {
    fn new(text: &str) -> Self {
        let mut starts = vec![0usize];
        for (i, b) in text.bytes().enumerate() {
            if b == b'\n' {
                starts.push(i + 1);
            }
        }
        LineIndex { starts }
    }

    fn line_of(&self, offset: usize) -> usize {
        match self.starts.binary_search(&offset) {
            Ok(i) => i + 1,
            Err(i) => i,
        }
    }
}

/// Parses a [`SourceUnit`] into its uniform representation.
///
/// A whole-unit syntax error fails scripts outright; notebooks fall back
/// to per-cell parsing, keeping parseable cells and flagging the unit as
/// partial.
pub fn parse_unit(unit: &SourceUnit) -> Result<ParsedUnit, ParseUnitError> {
    match parse_code(&unit.code, unit, 0) {
        Ok(collector) => Ok(collector.finish(unit.clone(), false)),
        Err(err) => {
            if unit.kind == UnitKind::Notebook && !unit.cell_map.is_empty() {
                parse_notebook_cells(unit)
            } else {
                Err(ParseUnitError {
                    path: unit.path.clone(),
                    reason: err,
                })
            }
        }
    }
}

fn parse_notebook_cells(unit: &SourceUnit) -> Result<ParsedUnit, ParseUnitError> {
    let lines: Vec<&str> = unit.code.lines().collect();
    let mut merged: Option<Collector> = None;
    let mut any_ok = false;
    let mut any_failed = false;
    for span in &unit.cell_map {
        let cell_code: String = lines[span.start_line - 1..span.end_line]
            .iter()
            .map(|l| format!("{l}\n"))
            .collect();
        match parse_code(&cell_code, unit, span.start_line - 1) {
            Ok(collector) => {
                any_ok = true;
                match &mut merged {
                    None => merged = Some(collector),
                    Some(m) => m.merge(collector),
                }
            }
            Err(_) => any_failed = true,
        }
    }
    match merged {
        Some(m) if any_ok => Ok(m.finish(unit.clone(), any_failed)),
        _ => Err(ParseUnitError {
            path: unit.path.clone(),
            reason: "no parseable cells".into(),
        }),
    }
}

fn parse_code(code: &str, unit: &SourceUnit, line_offset: usize) -> Result<Collector, String> {
    let suite = ast::Suite::parse(code, &unit.path.display().to_string())
        .map_err(|e| e.to_string())?;
    let mut collector = Collector::new(code, unit, line_offset);
    collector.visit_body(&suite, &mut Ctx::default());
    Ok(collector)
}

#[derive(Default, Clone)]
struct Ctx {
    class_stack: Vec<String>,
}

struct Collector {
    index: LineIndex,
    source: String,
    path: PathBuf,
    line_offset: usize,
    unit_cells: Vec<CellSpan>,
    imports: Vec<ImportRecord>,
    defs: Vec<FunctionDef>,
    classes: Vec<ClassDef>,
    all_calls: Vec<CallSite>,
    identifiers: BTreeSet<String>,
    decision_points: usize,
}

impl Collector {
    fn new(code: &str, unit: &SourceUnit, line_offset: usize) -> Self {
        Collector {
            index: LineIndex::new(code),
            source: code.to_string(),
            path: unit.path.clone(),
            line_offset,
            unit_cells: unit.cell_map.clone(),
            imports: Vec::new(),
            defs: Vec::new(),
            classes: Vec::new(),
            all_calls: Vec::new(),
            identifiers: BTreeSet::new(),
            decision_points: 0,
        }
    }

    fn merge(&mut self, other: Collector) {
        self.imports.extend(other.imports);
        self.defs.extend(other.defs);
        self.classes.extend(other.classes);
        self.all_calls.extend(other.all_calls);
        self.identifiers.extend(other.identifiers);
        self.decision_points += other.decision_points;
    }

    fn finish(self, unit: SourceUnit, partial: bool) -> ParsedUnit {
        let local_names: BTreeSet<&str> = self
            .defs
            .iter()
            .map(|d| d.function_name.as_str())
            .chain(self.classes.iter().map(|c| c.name.as_str()))
            .collect();
        let (local_calls, calls): (Vec<_>, Vec<_>) = self
            .all_calls
            .into_iter()
            .partition(|c| local_names.contains(c.callee_name.as_str()));
        let mut calls = calls;
        let mut local_calls = local_calls;
        let by_loc = |c: &CallSite| (c.location.line, c.callee_name.clone());
        calls.sort_by_key(by_loc);
        local_calls.sort_by_key(by_loc);
        ParsedUnit {
            unit,
            imports: self.imports,
            defs: self.defs,
            classes: self.classes,
            calls,
            local_calls,
            identifiers: self.identifiers,
            decision_points: self.decision_points,
            partial,
        }
    }

    fn line(&self, offset: usize) -> usize {
        self.index.line_of(offset) + self.line_offset
    }

    fn text(&self, range: ast::text_size::TextRange) -> String {
        self.source[range.start().to_usize()..range.end().to_usize()].to_string()
    }

    fn cell_of(&self, line: usize) -> Option<usize> {
        self.unit_cells
            .iter()
            .find(|c| c.start_line <= line && line <= c.end_line)
            .map(|c| c.cell_index)
    }

    fn location(&self, offset: usize) -> Location {
        let line = self.line(offset);
        Location {
            path: self.path.clone(),
            line,
            cell_index: self.cell_of(line),
        }
    }

    fn visit_body(&mut self, body: &[ast::Stmt], ctx: &mut Ctx) {
        for stmt in body {
            self.visit_stmt(stmt, ctx);
        }
    }

    fn visit_stmt(&mut self, stmt: &ast::Stmt, ctx: &mut Ctx) {
        use ast::Stmt::*;
        match stmt {
            FunctionDef(ast::StmtFunctionDef { name, args, body, decorator_list, range, returns, .. }) => {
                self.handle_function(name, args, body, decorator_list, returns.as_deref(), *range, ctx);
            }
            AsyncFunctionDef(ast::StmtAsyncFunctionDef { name, args, body, decorator_list, range, returns, .. }) => {
                self.handle_function(name, args, body, decorator_list, returns.as_deref(), *range, ctx);
            }
            ClassDef(ast::StmtClassDef { name, bases, keywords, body, decorator_list, range, .. }) => {
                self.identifiers.insert(name.to_string());
                for b in bases {
                    self.visit_expr(b);
                }
                for k in keywords {
                    if let Some(arg) = &k.arg {
                        self.identifiers.insert(arg.to_string());
                    }
                    self.visit_expr(&k.value);
                }
                for d in decorator_list {
                    self.visit_expr(d);
                }
                let (docstring, docstring_span) = self.docstring_of(body);
                self.classes.push(self::ClassDef {
                    name: name.to_string(),
                    docstring,
                    docstring_span,
                    span: (self.line(range.start().to_usize()), self.line(range.end().to_usize().saturating_sub(1))),
                });
                ctx.class_stack.push(name.to_string());
                self.visit_body(body, ctx);
                ctx.class_stack.pop();
            }
            Import(ast::StmtImport { names, range }) => {
                let line = self.line(range.start().to_usize());
                for alias in names {
                    self.record_identifier_path(&alias.name);
                    if let Some(a) = &alias.asname {
                        self.identifiers.insert(a.to_string());
                    }
                    self.imports.push(ImportRecord {
                        module_path: alias.name.to_string(),
                        alias: alias.asname.as_ref().map(|a| a.to_string()),
                        imported_names: Vec::new(),
                        line,
                    });
                }
            }
            ImportFrom(ast::StmtImportFrom { module, names, level, range }) => {
                let line = self.line(range.start().to_usize());
                let dots = ".".repeat(level.map(|l| l.to_usize()).unwrap_or(0));
                let module_path = match module {
                    Some(m) => format!("{dots}{m}"),
                    None => dots,
                };
                if module_path.is_empty() {
                    return;
                }
                if let Some(m) = module {
                    self.record_identifier_path(m);
                }
                let mut imported_names = Vec::new();
                for alias in names {
                    self.identifiers.insert(alias.name.to_string());
                    if let Some(a) = &alias.asname {
                        self.identifiers.insert(a.to_string());
                    }
                    imported_names.push((
                        alias.name.to_string(),
                        alias.asname.as_ref().map(|a| a.to_string()),
                    ));
                }
                self.imports.push(ImportRecord {
                    module_path,
                    alias: None,
                    imported_names,
                    line,
                });
            }
            If(ast::StmtIf { test, body, orelse, .. }) => {
                self.decision_points += 1;
                self.visit_expr(test);
                self.visit_body(body, ctx);
                self.visit_body(orelse, ctx);
            }
            While(ast::StmtWhile { test, body, orelse, .. }) => {
                self.decision_points += 1;
                self.visit_expr(test);
                self.visit_body(body, ctx);
                self.visit_body(orelse, ctx);
            }
            For(ast::StmtFor { target, iter, body, orelse, .. })
            | AsyncFor(ast::StmtAsyncFor { target, iter, body, orelse, .. }) => {
                self.decision_points += 1;
                self.visit_expr(target);
                self.visit_expr(iter);
                self.visit_body(body, ctx);
                self.visit_body(orelse, ctx);
            }
            Try(ast::StmtTry { body, handlers, orelse, finalbody, .. })
            | TryStar(ast::StmtTryStar { body, handlers, orelse, finalbody, .. }) => {
                self.visit_body(body, ctx);
                for handler in handlers {
                    self.decision_points += 1;
                    let ast::ExceptHandler::ExceptHandler(h) = handler;
                    if let Some(t) = &h.type_ {
                        self.visit_expr(t);
                    }
                    if let Some(n) = &h.name {
                        self.identifiers.insert(n.to_string());
                    }
                    self.visit_body(&h.body, ctx);
                }
                self.visit_body(orelse, ctx);
                self.visit_body(finalbody, ctx);
            }
            Assert(ast::StmtAssert { test, msg, .. }) => {
                self.decision_points += 1;
                self.visit_expr(test);
                if let Some(m) = msg {
                    self.visit_expr(m);
                }
            }
            With(ast::StmtWith { items, body, .. })
            | AsyncWith(ast::StmtAsyncWith { items, body, .. }) => {
                for item in items {
                    self.visit_expr(&item.context_expr);
                    if let Some(v) = &item.optional_vars {
                        self.visit_expr(v);
                    }
                }
                self.visit_body(body, ctx);
            }
            Return(ast::StmtReturn { value, .. }) => {
                if let Some(v) = value {
                    self.visit_expr(v);
                }
            }
            Delete(ast::StmtDelete { targets, .. }) => {
                for t in targets {
                    self.visit_expr(t);
                }
            }
            Assign(ast::StmtAssign { targets, value, .. }) => {
                for t in targets {
                    self.visit_expr(t);
                }
                self.visit_expr(value);
            }
            AugAssign(ast::StmtAugAssign { target, value, .. }) => {
                self.visit_expr(target);
                self.visit_expr(value);
            }
            AnnAssign(ast::StmtAnnAssign { target, annotation, value, .. }) => {
                self.visit_expr(target);
                self.visit_expr(annotation);
                if let Some(v) = value {
                    self.visit_expr(v);
                }
            }
            Raise(ast::StmtRaise { exc, cause, .. }) => {
                if let Some(e) = exc {
                    self.visit_expr(e);
                }
                if let Some(c) = cause {
                    self.visit_expr(c);
                }
            }
            Global(ast::StmtGlobal { names, .. }) | Nonlocal(ast::StmtNonlocal { names, .. }) => {
                for n in names {
                    self.identifiers.insert(n.to_string());
                }
            }
            Expr(ast::StmtExpr { value, .. }) => self.visit_expr(value),
            Match(ast::StmtMatch { subject, cases, .. }) => {
                self.visit_expr(subject);
                for case in cases {
                    self.decision_points += 1;
                    if let Some(g) = &case.guard {
                        self.visit_expr(g);
                    }
                    self.visit_body(&case.body, ctx);
                }
            }
            Pass(_) | Break(_) | Continue(_) | TypeAlias(_) => {}
        }
    }

    fn handle_function(
        &mut self,
        name: &ast::Identifier,
        args: &ast::Arguments,
        body: &[ast::Stmt],
        decorator_list: &[ast::Expr],
        returns: Option<&ast::Expr>,
        range: ast::text_size::TextRange,
        ctx: &mut Ctx,
    ) {
        self.identifiers.insert(name.to_string());
        for d in decorator_list {
            self.visit_expr(d);
        }
        if let Some(r) = returns {
            self.visit_expr(r);
        }
        let params = self.collect_params(args);
        for p in &params {
            self.identifiers.insert(p.name.clone());
        }
        let (docstring, docstring_span) = self.docstring_of(body);
        self.defs.push(FunctionDef {
            function_name: name.to_string(),
            class_name: ctx.class_stack.last().cloned(),
            params,
            docstring,
            docstring_span,
            span: (
                self.line(range.start().to_usize()),
                self.line(range.end().to_usize().saturating_sub(1)),
            ),
        });
        // Default expressions are evaluated at definition scope.
        for a in args.posonlyargs.iter().chain(&args.args).chain(&args.kwonlyargs) {
            if let Some(d) = &a.default {
                self.visit_expr(d);
            }
            if let Some(ann) = &a.def.annotation {
                self.visit_expr(ann);
            }
        }
        let saved = std::mem::take(&mut ctx.class_stack);
        self.visit_body(body, ctx);
        ctx.class_stack = saved;
    }

    fn collect_params(&self, args: &ast::Arguments) -> Vec<ParamSpec> {
        let mut params = Vec::new();
        for a in args.posonlyargs.iter().chain(&args.args) {
            params.push(ParamSpec {
                name: a.def.arg.to_string(),
                default_expr: a.default.as_ref().map(|d| self.text(d.range())),
                kind: ParamKind::PositionalOrKeyword,
            });
        }
        if let Some(v) = &args.vararg {
            params.push(ParamSpec {
                name: v.arg.to_string(),
                default_expr: None,
                kind: ParamKind::Vararg,
            });
        }
        for a in &args.kwonlyargs {
            params.push(ParamSpec {
                name: a.def.arg.to_string(),
                default_expr: a.default.as_ref().map(|d| self.text(d.range())),
                kind: ParamKind::KeywordOnly,
            });
        }
        if let Some(k) = &args.kwarg {
            params.push(ParamSpec {
                name: k.arg.to_string(),
                default_expr: None,
                kind: ParamKind::Kwvararg,
            });
        }
        params
    }

    fn docstring_of(&self, body: &[ast::Stmt]) -> (Option<String>, Option<(usize, usize)>) {
        if let Some(ast::Stmt::Expr(ast::StmtExpr { value, .. })) = body.first() {
            if let ast::Expr::Constant(ast::ExprConstant { value: ast::Constant::Str(s), range, .. }) = value.as_ref() {
                let span = (
                    self.line(range.start().to_usize()),
                    self.line(range.end().to_usize().saturating_sub(1)),
                );
                return (Some(s.clone()), Some(span));
            }
        }
        (None, None)
    }

    fn record_identifier_path(&mut self, dotted: &str) {
        for part in dotted.split('.') {
            if !part.is_empty() {
                self.identifiers.insert(part.to_string());
            }
        }
    }

    fn visit_expr(&mut self, expr: &ast::Expr) {
        use ast::Expr::*;
        match expr {
            BoolOp(ast::ExprBoolOp { values, .. }) => {
                self.decision_points += values.len().saturating_sub(1);
                for v in values {
                    self.visit_expr(v);
                }
            }
            NamedExpr(ast::ExprNamedExpr { target, value, .. }) => {
                self.visit_expr(target);
                self.visit_expr(value);
            }
            BinOp(ast::ExprBinOp { left, right, .. }) => {
                self.visit_expr(left);
                self.visit_expr(right);
            }
            UnaryOp(ast::ExprUnaryOp { operand, .. }) => self.visit_expr(operand),
            Lambda(ast::ExprLambda { args, body, .. }) => {
                for a in args.posonlyargs.iter().chain(&args.args).chain(&args.kwonlyargs) {
                    self.identifiers.insert(a.def.arg.to_string());
                    if let Some(d) = &a.default {
                        self.visit_expr(d);
                    }
                }
                self.visit_expr(body);
            }
            IfExp(ast::ExprIfExp { test, body, orelse, .. }) => {
                self.decision_points += 1;
                self.visit_expr(test);
                self.visit_expr(body);
                self.visit_expr(orelse);
            }
            Dict(ast::ExprDict { keys, values, .. }) => {
                for k in keys.iter().flatten() {
                    self.visit_expr(k);
                }
                for v in values {
                    self.visit_expr(v);
                }
            }
            Set(ast::ExprSet { elts, .. })
            | List(ast::ExprList { elts, .. })
            | Tuple(ast::ExprTuple { elts, .. }) => {
                for e in elts {
                    self.visit_expr(e);
                }
            }
            ListComp(ast::ExprListComp { elt, generators, .. })
            | SetComp(ast::ExprSetComp { elt, generators, .. })
            | GeneratorExp(ast::ExprGeneratorExp { elt, generators, .. }) => {
                self.visit_expr(elt);
                self.visit_comprehensions(generators);
            }
            DictComp(ast::ExprDictComp { key, value, generators, .. }) => {
                self.visit_expr(key);
                self.visit_expr(value);
                self.visit_comprehensions(generators);
            }
            Await(ast::ExprAwait { value, .. })
            | YieldFrom(ast::ExprYieldFrom { value, .. })
            | Starred(ast::ExprStarred { value, .. }) => self.visit_expr(value),
            Yield(ast::ExprYield { value, .. }) => {
                if let Some(v) = value {
                    self.visit_expr(v);
                }
            }
            Compare(ast::ExprCompare { left, comparators, .. }) => {
                self.visit_expr(left);
                for c in comparators {
                    self.visit_expr(c);
                }
            }
            Call(call) => self.visit_call(call),
            FormattedValue(ast::ExprFormattedValue { value, .. }) => self.visit_expr(value),
            JoinedStr(ast::ExprJoinedStr { values, .. }) => {
                for v in values {
                    self.visit_expr(v);
                }
            }
            Constant(_) => {}
            Attribute(ast::ExprAttribute { value, attr, .. }) => {
                self.identifiers.insert(attr.to_string());
                self.visit_expr(value);
            }
            Subscript(ast::ExprSubscript { value, slice, .. }) => {
                self.visit_expr(value);
                self.visit_expr(slice);
            }
            Name(ast::ExprName { id, .. }) => {
                self.identifiers.insert(id.to_string());
            }
            Slice(ast::ExprSlice { lower, upper, step, .. }) => {
                for part in [lower, upper, step].into_iter().flatten() {
                    self.visit_expr(part);
                }
            }
        }
    }

    fn visit_comprehensions(&mut self, generators: &[ast::Comprehension]) {
        for gen in generators {
            self.decision_points += 1; // the `for` clause
            self.visit_expr(&gen.target);
            self.visit_expr(&gen.iter);
            for cond in &gen.ifs {
                self.decision_points += 1;
                self.visit_expr(cond);
            }
        }
    }

    fn visit_call(&mut self, call: &ast::ExprCall) {
        let ast::ExprCall { func, args, keywords, range } = call;
        let target = match func.as_ref() {
            ast::Expr::Name(ast::ExprName { id, .. }) => Some((id.to_string(), None)),
            ast::Expr::Attribute(ast::ExprAttribute { value, attr, .. }) => {
                Some((attr.to_string(), Some(self.text(value.range()))))
            }
            // Calls on computed targets (`f()()`, `xs[0]()`) have no
            // terminal name to match on.
            _ => None,
        };
        if let Some((callee_name, receiver_text)) = target {
            let mut positional_args = Vec::new();
            let mut has_star_args = false;
            let mut star_args_at = None;
            for a in args {
                if let ast::Expr::Starred(_) = a {
                    has_star_args = true;
                    star_args_at.get_or_insert(positional_args.len());
                } else if !has_star_args {
                    positional_args.push(self.text(a.range()));
                }
            }
            let mut keyword_args = Vec::new();
            let mut has_star_kwargs = false;
            for k in keywords {
                match &k.arg {
                    Some(name) => keyword_args.push((name.to_string(), self.text(k.value.range()))),
                    None => has_star_kwargs = true,
                }
            }
            self.all_calls.push(CallSite {
                callee_name,
                receiver_text,
                positional_args,
                keyword_args,
                has_star_args,
                star_args_at,
                has_star_kwargs,
                location: self.location(range.start().to_usize()),
            });
        }
        self.visit_expr(func);
        for a in args {
            self.visit_expr(a);
        }
        for k in keywords {
            if let Some(name) = &k.arg {
                self.identifiers.insert(name.to_string());
            }
            self.visit_expr(&k.value);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn parse_str(code: &str) -> ParsedUnit {
        let unit = SourceUnit {
            path: PathBuf::from("test.py"),
            kind: UnitKind::Script,
            code: code.to_string(),
            cell_map: Vec::new(),
        };
        parse_unit(&unit).expect("parse")
    }

    #[test]
    fn default_args_captured_verbatim() {
        let parsed = parse_str("def sum(a=0, b=0): return a + b\n");
        assert_eq!(parsed.defs.len(), 1);
        let def = &parsed.defs[0];
        assert_eq!(def.function_name, "sum");
        assert_eq!(def.params.len(), 2);
        assert_eq!(def.params[0].default_expr.as_deref(), Some("0"));
        assert_eq!(def.params[1].default_expr.as_deref(), Some("0"));
        assert!(parsed.calls.is_empty());
    }

    #[test]
    fn import_and_keyword_call() {
        let parsed = parse_str("from sklearn.svm import SVC\nclf = SVC(random_state=42)\n");
        assert_eq!(parsed.imports.len(), 1);
        assert_eq!(parsed.imports[0].module_path, "sklearn.svm");
        assert_eq!(parsed.imports[0].imported_names, vec![("SVC".to_string(), None)]);
        assert_eq!(parsed.calls.len(), 1);
        let call = &parsed.calls[0];
        assert_eq!(call.callee_name, "SVC");
        assert_eq!(call.keyword("random_state"), Some("42"));
        assert!(call.positional_args.is_empty());
        assert!(parsed.identifiers.contains("SVC"));
    }

    #[test]
    fn positional_call() {
        let parsed = parse_str("x = round(3.1415)\n");
        assert_eq!(parsed.calls.len(), 1);
        assert_eq!(parsed.calls[0].positional_args, vec!["3.1415"]);
        assert!(parsed.calls[0].keyword_args.is_empty());
    }

    #[test]
    fn local_calls_are_excluded_from_external() {
        let parsed = parse_str("def helper():\n    pass\nhelper()\nprint(1)\n");
        assert_eq!(parsed.calls.len(), 1);
        assert_eq!(parsed.calls[0].callee_name, "print");
        assert_eq!(parsed.local_calls.len(), 1);
        assert_eq!(parsed.local_calls[0].callee_name, "helper");
    }

    #[test]
    fn attribute_call_records_terminal_name() {
        let parsed = parse_str("import sklearn.model_selection as ms\nms.cross_val_score(clf, X, y)\n");
        assert_eq!(parsed.calls.len(), 1);
        let call = &parsed.calls[0];
        assert_eq!(call.callee_name, "cross_val_score");
        assert_eq!(call.receiver_text.as_deref(), Some("ms"));
        assert_eq!(call.positional_args, vec!["clf", "X", "y"]);
    }

    #[test]
    fn star_expansion_flags() {
        let parsed = parse_str("f(a, *rest, x=1, **opts)\n");
        let call = &parsed.calls[0];
        assert!(call.has_star_args);
        assert!(call.has_star_kwargs);
        assert_eq!(call.star_args_at, Some(1));
        assert_eq!(call.positional_args, vec!["a"]);
        assert_eq!(call.keyword("x"), Some("1"));
    }

    #[test]
    fn component_import_matching() {
        let parsed = parse_str("import sklearn.svm\n");
        assert!(unit_imports_library(&parsed, "sklearn"));
        let parsed = parse_str("import sklearnex.patch\n");
        assert!(!unit_imports_library(&parsed, "sklearn"));
        assert!(unit_imports_library_substring(&parsed, "sklearn"));
        let parsed = parse_str("x = 1\n");
        assert!(!unit_imports_library(&parsed, "sklearn"));
    }

    #[test]
    fn method_context_and_docstring() {
        let code = "class SVC:\n    \"\"\"doc\n    body\n    \"\"\"\n    def __init__(self, gamma='scale'):\n        pass\n";
        let parsed = parse_str(code);
        assert_eq!(parsed.classes.len(), 1);
        assert_eq!(parsed.classes[0].docstring_span, Some((2, 4)));
        let def = &parsed.defs[0];
        assert_eq!(def.class_name.as_deref(), Some("SVC"));
        assert_eq!(def.function_name, "__init__");
        assert_eq!(def.params[1].default_expr.as_deref(), Some("'scale'"));
    }

    #[test]
    fn empty_py_file() {
        let mut f = tempfile::Builder::new().suffix(".py").tempfile().unwrap();
        f.flush().unwrap();
        let unit = load_unit(f.path()).unwrap();
        assert_eq!(unit.kind, UnitKind::Script);
        assert_eq!(unit.code, "");
        assert!(unit.cell_map.is_empty());
    }

    fn write_notebook(cells: serde_json::Value) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".ipynb").tempfile().unwrap();
        let nb = serde_json::json!({ "nbformat": 4, "cells": cells });
        f.write_all(nb.to_string().as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn notebook_concatenation_and_cell_map() {
        let f = write_notebook(serde_json::json!([
            { "cell_type": "code", "source": ["import pandas\n"] },
            { "cell_type": "markdown", "source": ["# heading\n"] },
            { "cell_type": "code", "source": ["pd.concat(dfs)\n"] },
        ]));
        let unit = load_unit(f.path()).unwrap();
        assert_eq!(unit.code, "import pandas\npd.concat(dfs)\n");
        assert_eq!(unit.cell_map.len(), 2);
        assert_eq!(unit.cell_map[0], CellSpan { cell_index: 0, start_line: 1, end_line: 1 });
        assert_eq!(unit.cell_map[1], CellSpan { cell_index: 2, start_line: 2, end_line: 2 });
        let total: usize = unit.cell_map.iter().map(|c| c.end_line - c.start_line + 1).sum();
        assert_eq!(total, unit.code.lines().count());
    }

    #[test]
    fn magic_lines_are_stripped() {
        let f = write_notebook(serde_json::json!([
            { "cell_type": "code", "source": ["%matplotlib inline\n", "x = 1\n"] },
        ]));
        let unit = load_unit(f.path()).unwrap();
        assert_eq!(unit.code, "x = 1\n");
    }

    #[test]
    fn notebook_partial_parse_keeps_good_cells() {
        let f = write_notebook(serde_json::json!([
            { "cell_type": "code", "source": ["x = 1\n"] },
            { "cell_type": "code", "source": ["def broken(:\n"] },
            { "cell_type": "code", "source": ["print(x)\n"] },
        ]));
        let unit = load_unit(f.path()).unwrap();
        let parsed = parse_unit(&unit).unwrap();
        assert!(parsed.partial);
        assert_eq!(parsed.calls.len(), 1);
        assert_eq!(parsed.calls[0].callee_name, "print");
        assert_eq!(parsed.calls[0].location.cell_index, Some(2));
    }

    #[test]
    fn script_syntax_error_is_reported() {
        let unit = SourceUnit {
            path: PathBuf::from("bad.py"),
            kind: UnitKind::Script,
            code: "def broken(:\n".into(),
            cell_map: Vec::new(),
        };
        assert!(parse_unit(&unit).is_err());
    }

    #[test]
    fn decision_points_counted() {
        let parsed = parse_str("if x:\n    f()\nelse:\n    g()\n");
        assert_eq!(parsed.decision_points, 1);
        let parsed = parse_str("y = [i for i in xs if i and j]\n");
        // comprehension for + comprehension if + `and`
        assert_eq!(parsed.decision_points, 3);
    }

    #[test]
    fn calls_in_decorators_and_lambdas_extracted() {
        let parsed = parse_str("@wraps(f)\ndef g():\n    pass\nh = lambda v: norm(v)\n");
        let names: Vec<_> = parsed.calls.iter().map(|c| c.callee_name.as_str()).collect();
        assert!(names.contains(&"wraps"));
        assert!(names.contains(&"norm"));
    }

    #[test]
    fn reparse_determinism() {
        let code = "def f(a, b=1, *args, c=2, **kw):\n    pass\n";
        let first = parse_str(code);
        let second = parse_str(code);
        assert_eq!(first.defs[0].params, second.defs[0].params);
        assert_eq!(first.defs[0].params.len(), 5);
        assert_eq!(first.defs[0].params[2].kind, ParamKind::Vararg);
        assert_eq!(first.defs[0].params[3].kind, ParamKind::KeywordOnly);
        assert_eq!(first.defs[0].params[4].kind, ParamKind::Kwvararg);
    }

    #[test]
    fn unsupported_extension() {
        let f = tempfile::Builder::new().suffix(".txt").tempfile().unwrap();
        assert!(matches!(load_unit(f.path()), Err(LoadError::UnsupportedExtension { .. })));
    }
}
