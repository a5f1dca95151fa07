use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use dabc_core::analytics::{self, ModuleMapping, Table};
use dabc_core::matcher::{self, ReportRow};
use dabc_core::miner::{self, ChangeKind, DabcRecord};
use dabc_core::pyparse::{self, ParsedUnit};
use dabc_core::releases::{self, ReleasePolicy};
use dabc_core::sigdiff::{self, SignatureSnapshot};
use walkdir::WalkDir;

#[derive(Parser)]
#[command(
    name = "dabc",
    about = "Static analysis of default-argument breaking changes in Python libraries",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine versionchanged directives from a library checkout into a
    /// JSON-Lines DABC database.
    Mine(MineArgs),
    /// Diff default values between two library checkouts and reconcile
    /// with a DABC database.
    Sigdiff(SigdiffArgs),
    /// Scan a client corpus for calls vulnerable to DABCs.
    Scan(ScanArgs),
    /// Aggregate a DABC database (and optional scan output) into the
    /// study tables.
    Report(ReportArgs),
    /// Correlate structural metrics with vulnerable-call counts.
    Stats(StatsArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Sklearn,
    Pandas,
    Numpy,
    Semver,
}

impl PolicyArg {
    fn to_policy(self) -> ReleasePolicy {
        match self {
            PolicyArg::Sklearn => ReleasePolicy::sklearn(),
            PolicyArg::Pandas => ReleasePolicy::pandas(),
            PolicyArg::Numpy => ReleasePolicy::numpy(),
            PolicyArg::Semver => ReleasePolicy {
                library: "generic".into(),
                scheme: dabc_core::releases::VersionScheme::SemverLoose,
            },
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ImportMatch {
    Component,
    Substring,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, ValueEnum)]
enum Format {
    Csv,
    Json,
    Markdown,
}

#[derive(Args)]
struct MineArgs {
    /// Library source checkout to scan.
    #[arg(long)]
    library_root: PathBuf,
    /// Output database path (JSON Lines).
    #[arg(long)]
    db: PathBuf,
    /// Base used to build each record's dabc_url.
    #[arg(long, default_value = "local")]
    url_base: String,
}

#[derive(Args)]
struct SigdiffArgs {
    /// Older library checkout.
    #[arg(long)]
    old_root: PathBuf,
    /// Newer library checkout.
    #[arg(long)]
    new_root: PathBuf,
    /// DABC database to reconcile against.
    #[arg(long)]
    db: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScanArgs {
    /// Client corpus root (.py and .ipynb files).
    #[arg(long)]
    corpus: PathBuf,
    /// DABC database (JSON Lines).
    #[arg(long)]
    db: PathBuf,
    /// Signature snapshot JSON giving parameter lists for binding.
    #[arg(long)]
    signatures: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// How a unit's imports must mention the library to be scanned.
    #[arg(long, value_enum, default_value_t = ImportMatch::Component)]
    import_match: ImportMatch,
    /// Keep safe verdicts in the report.
    #[arg(long)]
    include_safe: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// DABC database (JSON Lines).
    #[arg(long)]
    db: PathBuf,
    /// Module mapping JSON (array of {prefix, module}).
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Release tag manifest CSV (version,date).
    #[arg(long)]
    tags: Option<PathBuf>,
    /// Release policy for tag classification.
    #[arg(long, value_enum, default_value_t = PolicyArg::Semver)]
    policy: PolicyArg,
    /// Scan output (vulnerable_calls.jsonl) to fold into the tables.
    #[arg(long)]
    scan_report: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Output formats.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Format::Csv, Format::Json])]
    format: Vec<Format>,
}

#[derive(Args)]
struct StatsArgs {
    /// Client corpus root.
    #[arg(long)]
    corpus: PathBuf,
    /// Scan output (vulnerable_calls.jsonl) giving per-unit counts.
    #[arg(long)]
    scan_report: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Permutation-test iterations.
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    /// RNG seed for the permutation test.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output formats.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Format::Csv, Format::Json])]
    format: Vec<Format>,
}

fn color_enabled() -> bool {
    std::env::var_os("DABC_NO_COLOR").is_none()
}

fn status(label: &str, message: &str) {
    if color_enabled() {
        eprintln!("\x1b[32m{label}\x1b[0m {message}");
    } else {
        eprintln!("{label} {message}");
    }
}

/// Exit code 2 signals partial failures (some units skipped).
const EXIT_PARTIAL: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Mine(args) => cmd_mine(&args),
        Command::Sigdiff(args) => cmd_sigdiff(&args),
        Command::Scan(args) => cmd_scan(&args),
        Command::Report(args) => cmd_report(&args),
        Command::Stats(args) => cmd_stats(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} {} is not a directory", path.display());
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} is not a file", path.display());
    }
    Ok(())
}

fn load_db(path: &Path) -> Result<Vec<DabcRecord>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading database {}", path.display()))?;
    miner::read_jsonl(&text).with_context(|| format!("parsing database {}", path.display()))
}

fn cmd_mine(args: &MineArgs) -> Result<u8> {
    require_dir(&args.library_root, "--library-root")?;
    let (records, report) = miner::mine(&args.library_root, &args.url_base)
        .with_context(|| format!("mining {}", args.library_root.display()))?;
    if let Some(parent) = args.db.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file = std::fs::File::create(&args.db)
        .with_context(|| format!("creating {}", args.db.display()))?;
    miner::write_jsonl(std::io::BufWriter::new(file), &records)?;

    let mut kind_counts: std::collections::BTreeMap<&str, usize> = Default::default();
    for record in &records {
        let key = match record.change_kind {
            ChangeKind::DefaultValueChange => "default_value_change",
            ChangeKind::TypeChange => "type_change",
            ChangeKind::Other => "other",
            ChangeKind::NeedsReview => "needs_review",
        };
        *kind_counts.entry(key).or_default() += 1;
    }
    status(
        "mine",
        &format!(
            "{} directive hits in {} files; database written to {}",
            report.hits.len(),
            report.files_scanned,
            args.db.display()
        ),
    );
    for (kind, count) in &kind_counts {
        status("mine", &format!("  {kind}: {count}"));
    }
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    println!("directive_hits: {}", report.hits.len());
    Ok(if report.warnings.is_empty() { 0 } else { EXIT_PARTIAL })
}

fn cmd_sigdiff(args: &SigdiffArgs) -> Result<u8> {
    require_dir(&args.old_root, "--old-root")?;
    require_dir(&args.new_root, "--new-root")?;
    let records = match &args.db {
        Some(db) => {
            require_file(db, "--db")?;
            load_db(db)?
        }
        None => Vec::new(),
    };
    let (old_snap, old_report) = sigdiff::snapshot(&args.old_root, "old")?;
    let (new_snap, new_report) = sigdiff::snapshot(&args.new_root, "new")?;
    let diffs = sigdiff::diff_defaults(&old_snap, &new_snap);
    let reconciled = sigdiff::reconcile(&diffs, &records);

    std::fs::create_dir_all(&args.out)?;
    let out_path = args.out.join("sigdiff.json");
    let json = serde_json::to_string_pretty(&reconciled)?;
    std::fs::write(&out_path, json)?;
    status(
        "sigdiff",
        &format!(
            "{} diffs ({} documented, {} undocumented, {} doc-only) written to {}",
            diffs.len(),
            reconciled.documented.len(),
            reconciled.undocumented.len(),
            reconciled.doc_only.len(),
            out_path.display()
        ),
    );
    let warnings = old_report.warnings.len() + new_report.warnings.len();
    for warning in old_report.warnings.iter().chain(&new_report.warnings) {
        eprintln!("warning: {warning}");
    }
    Ok(if warnings == 0 { 0 } else { EXIT_PARTIAL })
}

/// Top-level import tokens a unit must mention: the distinct first path
/// components of the database records.
fn library_tokens(records: &[DabcRecord]) -> BTreeSet<String> {
    records
        .iter()
        .filter_map(|r| {
            r.path
                .replace('\\', "/")
                .split('/')
                .next()
                .map(|s| s.trim_end_matches(".py").to_string())
        })
        .filter(|s| !s.is_empty())
        .collect()
}

fn corpus_units(root: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = WalkDir::new(root)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("py") | Some("ipynb")
            )
        })
        .collect();
    files.sort();
    files
}

struct UnitOutcome {
    rows: Vec<ReportRow>,
    skipped: Option<String>,
    imported: bool,
}

fn scan_one(
    path: &Path,
    defs: &[matcher::DabcDefinition],
    tokens: &BTreeSet<String>,
    import_match: ImportMatch,
    include_safe: bool,
) -> UnitOutcome {
    let unit = match pyparse::load_unit(path) {
        Ok(u) => u,
        Err(e) => {
            return UnitOutcome {
                rows: Vec::new(),
                skipped: Some(format!("{}: {e}", path.display())),
                imported: false,
            }
        }
    };
    let parsed = match pyparse::parse_unit(&unit) {
        Ok(p) => p,
        Err(e) => {
            return UnitOutcome {
                rows: Vec::new(),
                skipped: Some(format!("{}: {e}", path.display())),
                imported: false,
            }
        }
    };
    let imported = tokens.iter().any(|t| match import_match {
        ImportMatch::Component => pyparse::unit_imports_library(&parsed, t),
        ImportMatch::Substring => pyparse::unit_imports_library_substring(&parsed, t),
    });
    if !imported {
        return UnitOutcome {
            rows: Vec::new(),
            skipped: None,
            imported: false,
        };
    }
    let rows = matcher::scan_client(&parsed, defs, include_safe)
        .iter()
        .map(|v| v.report_row())
        .collect();
    UnitOutcome {
        rows,
        skipped: None,
        imported: true,
    }
}

fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("dabc_id,path,line,cell,verdict,reason\n");
    for row in rows {
        let cell = row.cell.map(|c| c.to_string()).unwrap_or_default();
        let escape = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            escape(&row.dabc_id),
            escape(&row.path),
            row.line,
            cell,
            row.verdict,
            escape(&row.reason)
        ));
    }
    out
}

fn build_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")
}

fn cmd_scan(args: &ScanArgs) -> Result<u8> {
    require_dir(&args.corpus, "--corpus")?;
    require_file(&args.db, "--db")?;
    let records = load_db(&args.db)?;
    let signatures: Option<SignatureSnapshot> = match &args.signatures {
        Some(path) => {
            require_file(path, "--signatures")?;
            let text = std::fs::read_to_string(path)?;
            Some(
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing signatures {}", path.display()))?,
            )
        }
        None => None,
    };
    let (defs, def_warnings) = matcher::resolve_definitions(&records, signatures.as_ref());
    for warning in &def_warnings {
        eprintln!("warning: {warning}");
    }
    let tokens = library_tokens(&records);
    let files = corpus_units(&args.corpus);

    let pool = build_pool(args.jobs)?;
    let outcomes: Vec<UnitOutcome> = pool.install(|| {
        files
            .par_iter()
            .map(|path| scan_one(path, &defs, &tokens, args.import_match, args.include_safe))
            .collect()
    });

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut imported_units = 0usize;
    for outcome in outcomes {
        rows.extend(outcome.rows);
        if let Some(reason) = outcome.skipped {
            skipped.push(reason);
        }
        if outcome.imported {
            imported_units += 1;
        }
    }

    std::fs::create_dir_all(&args.out)?;
    let jsonl_path = args.out.join("vulnerable_calls.jsonl");
    let mut jsonl = String::new();
    for row in &rows {
        jsonl.push_str(&serde_json::to_string(row)?);
        jsonl.push('\n');
    }
    std::fs::write(&jsonl_path, jsonl)?;
    std::fs::write(args.out.join("vulnerable_calls.csv"), rows_to_csv(&rows))?;

    // Per-client rollup: vulnerable-call count per unit path.
    let mut per_client: std::collections::BTreeMap<&str, usize> = Default::default();
    for row in rows.iter().filter(|r| r.verdict == matcher::Verdict::Vulnerable) {
        *per_client.entry(row.path.as_str()).or_default() += 1;
    }
    let mut rollup = String::from("path,vulnerable_calls\n");
    for (path, count) in &per_client {
        rollup.push_str(&format!("{path},{count}\n"));
    }
    std::fs::write(args.out.join("clients.csv"), rollup)?;

    status(
        "scan",
        &format!(
            "{} units ({} importing the library), {} flagged calls, {} vulnerable clients, {} skipped",
            files.len(),
            imported_units,
            rows.len(),
            per_client.len(),
            skipped.len()
        ),
    );
    for reason in &skipped {
        eprintln!("warning: skipped {reason}");
    }
    println!("flagged_calls: {}", rows.len());
    println!("vulnerable_clients: {}", per_client.len());
    Ok(if skipped.is_empty() { 0 } else { EXIT_PARTIAL })
}

fn read_scan_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scan report {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ReportRow = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        rows.push(row);
    }
    Ok(rows)
}

fn write_tables(tables: &[Table], out: &Path, stem: &str, formats: &[Format]) -> Result<()> {
    std::fs::create_dir_all(out)?;
    if formats.contains(&Format::Csv) {
        let mut file = std::fs::File::create(out.join(format!("{stem}.csv")))?;
        for table in tables {
            writeln!(file, "# {}", table.title)?;
            file.write_all(table.to_csv().as_bytes())?;
        }
    }
    if formats.contains(&Format::Json) {
        let json = serde_json::to_string_pretty(tables)?;
        std::fs::write(out.join(format!("{stem}.json")), json)?;
    }
    if formats.contains(&Format::Markdown) {
        let mut text = String::new();
        for table in tables {
            text.push_str(&table.to_markdown());
            text.push('\n');
        }
        std::fs::write(out.join(format!("{stem}.md")), text)?;
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<u8> {
    require_file(&args.db, "--db")?;
    let records = load_db(&args.db)?;
    let mapping: Vec<ModuleMapping> = match &args.mapping {
        Some(path) => {
            require_file(path, "--mapping")?;
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing mapping {}", path.display()))?
        }
        None => Vec::new(),
    };
    let scan_rows = match &args.scan_report {
        Some(path) => {
            require_file(path, "--scan-report")?;
            read_scan_rows(path)?
        }
        None => Vec::new(),
    };

    let mut tables = analytics::aggregate(&records, &scan_rows, &mapping).tables();

    if let Some(tags_path) = &args.tags {
        require_file(tags_path, "--tags")?;
        let policy = args.policy.to_policy();
        let text = std::fs::read_to_string(tags_path)?;
        let tags = releases::load_tags(&text, &policy)?;
        let mut rows = Vec::new();
        for record in &records {
            match releases::assign_dabc_release(record, &tags, &policy) {
                Ok(tag) => rows.push(vec![
                    record.id(),
                    tag.version.raw.clone(),
                    tag.kind.to_string(),
                    tag.date.clone(),
                ]),
                Err(e) => rows.push(vec![record.id(), record.version.clone(), "unassigned".into(), e.to_string()]),
            }
        }
        tables.push(Table {
            title: "Release assignment".into(),
            headers: vec!["dabc".into(), "release".into(), "kind".into(), "date".into()],
            rows,
        });
    }

    write_tables(&tables, &args.out, "report", &args.format)?;
    status(
        "report",
        &format!("{} records, {} tables written to {}", records.len(), tables.len(), args.out.display()),
    );
    println!("records: {}", records.len());
    Ok(0)
}

fn cmd_stats(args: &StatsArgs) -> Result<u8> {
    require_dir(&args.corpus, "--corpus")?;
    require_file(&args.scan_report, "--scan-report")?;
    let scan_rows = read_scan_rows(&args.scan_report)?;
    let files = corpus_units(&args.corpus);

    let pool = build_pool(args.jobs)?;
    let parsed_units: Vec<(PathBuf, Option<ParsedUnit>)> = pool.install(|| {
        files
            .par_iter()
            .map(|path| {
                let parsed = pyparse::load_unit(path)
                    .ok()
                    .and_then(|u| pyparse::parse_unit(&u).ok());
                (path.clone(), parsed)
            })
            .collect()
    });

    let mut per_unit_vulnerable: std::collections::HashMap<&str, usize> = Default::default();
    for row in scan_rows.iter().filter(|r| r.verdict == matcher::Verdict::Vulnerable) {
        *per_unit_vulnerable.entry(row.path.as_str()).or_default() += 1;
    }

    let mut vulnerable_counts = Vec::new();
    let mut metric_vectors: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    let mut skipped = 0usize;
    for (path, parsed) in &parsed_units {
        let Some(parsed) = parsed else {
            skipped += 1;
            continue;
        };
        let metrics = analytics::compute_metrics(parsed);
        let path_text = path.to_string_lossy();
        let count = per_unit_vulnerable
            .iter()
            .find(|(p, _)| path_text.ends_with(*p) || **p == path_text)
            .map(|(_, c)| *c)
            .unwrap_or(0);
        vulnerable_counts.push(count as f64);
        for (name, value) in [
            ("sloc", metrics.sloc),
            ("blank_loc", metrics.blank_loc),
            ("comment_loc", metrics.comment_loc),
            ("api_calls_count", metrics.api_calls_count),
            ("api_calls_unique", metrics.api_calls_unique),
            ("builtin_calls_count", metrics.builtin_calls_count),
            ("builtin_calls_unique", metrics.builtin_calls_unique),
            ("user_calls_count", metrics.user_calls_count),
            ("user_calls_unique", metrics.user_calls_unique),
            ("cyclomatic", metrics.cyclomatic),
        ] {
            metric_vectors.entry(name).or_default().push(value as f64);
        }
    }

    let mut rows = Vec::new();
    for (name, values) in &metric_vectors {
        match analytics::correlate(values, &vulnerable_counts, args.iterations, args.seed) {
            Ok(result) => rows.push(vec![
                name.to_string(),
                format!("{:.4}", result.coefficient),
                result.level.to_string(),
                format!("{:.4}", result.p_value),
                result.n.to_string(),
            ]),
            Err(e) => rows.push(vec![
                name.to_string(),
                "undefined".into(),
                "undefined".into(),
                e.to_string(),
                values.len().to_string(),
            ]),
        }
    }
    let tables = vec![Table {
        title: "Correlation of structural metrics with vulnerable calls".into(),
        headers: vec![
            "metric".into(),
            "coefficient".into(),
            "level".into(),
            "p_value".into(),
            "n".into(),
        ],
        rows,
    }];
    write_tables(&tables, &args.out, "stats", &args.format)?;
    status(
        "stats",
        &format!(
            "{} units correlated ({} skipped), output in {}",
            vulnerable_counts.len(),
            skipped,
            args.out.display()
        ),
    );
    Ok(if skipped == 0 { 0 } else { EXIT_PARTIAL })
}
