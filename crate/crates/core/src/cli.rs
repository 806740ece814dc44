//! The `wdw` command-line driver.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::analyzer::{analyze, resolve_methods};
use crate::archive::{apply_archive, Weighting};
use crate::catalog::{validate_schema, Catalog};
use crate::dsl::{parse_schema, schema_hash};
use crate::io::{embedded_schema, load_snapshot, load_tickscript, parse_store, read_file, save_store};
use crate::model::WarehouseStore;
use crate::refresh::{initial_build, refresh, run_schedule};
use crate::report::{color_from_env, render_report, write_matrices};
use crate::schema::WarehouseSchema;
use crate::temporal::Instant;

#[derive(Debug, Parser)]
#[command(name = "wdw", about = "Temporal object warehouse builder", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a schema and print its diagnostics.
    Validate { schema: PathBuf },
    /// Populate a new store from a snapshot.
    Build {
        schema: PathBuf,
        snapshot: PathBuf,
        #[arg(long)]
        at: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Refresh a store from a new snapshot.
    Refresh {
        store: PathBuf,
        snapshot: PathBuf,
        #[arg(long)]
        at: String,
        /// Environment to refresh; classes outside every environment when absent.
        #[arg(long)]
        env: Option<String>,
        #[command(flatten)]
        common: StoreArgs,
    },
    /// Apply a tick script.
    Run {
        store: PathBuf,
        tickscript: PathBuf,
        /// Weight averages by state duration.
        #[arg(long)]
        duration_weighted: bool,
        #[command(flatten)]
        common: StoreArgs,
    },
    /// Archive the past states selected by an environment's predicate.
    Archive {
        store: PathBuf,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        duration_weighted: bool,
        #[command(flatten)]
        common: StoreArgs,
    },
    /// Work out which source methods carry over to the warehouse.
    Analyze {
        schema: PathBuf,
        /// Directory receiving one CSV file per matrix.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Treat a method as derivable (repeatable).
        #[arg(long = "assume-derivable", value_name = "METHOD")]
        assume: Vec<String>,
    },
    /// Print object states.
    Inspect {
        store: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long)]
        oid: Option<String>,
        #[arg(long)]
        property: Option<String>,
        #[command(flatten)]
        common: StoreArgs,
    },
}

#[derive(Debug, clap::Args)]
struct StoreArgs {
    /// Schema to use instead of the one embedded in the store.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Write the updated store here instead of in place.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

enum Failure {
    /// Exit 1: the input was read but is not acceptable.
    Diagnostics(Vec<String>),
    /// Exit 2: the command could not run.
    Error(String),
}

type Outcome = Result<String, Failure>;

fn err(e: impl std::fmt::Display) -> Failure {
    Failure::Error(e.to_string())
}

/// Run the driver on `argv` (program name first); returns the exit code.
pub fn run<I, S>(argv: I, out: &mut dyn std::io::Write, errs: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = out.write_all(text.as_bytes());
                0
            } else {
                let _ = errs.write_all(text.as_bytes());
                2
            };
        }
    };
    match dispatch(cli.command) {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            0
        }
        Err(Failure::Diagnostics(lines)) => {
            for l in lines {
                let _ = writeln!(errs, "{l}");
            }
            1
        }
        Err(Failure::Error(msg)) => {
            let _ = writeln!(errs, "error: {msg}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::Validate { schema } => validate(&schema),
        Command::Build { schema, snapshot, at, output } => build(&schema, &snapshot, &at, &output),
        Command::Refresh { store, snapshot, at, env, common } => {
            let (schema, catalog, mut st) = open_store(&store, &common)?;
            let snap = load_snapshot(&schema, &snapshot).map_err(err)?;
            let t = parse_instant(&at)?;
            let report = refresh(&catalog, &mut st, &snap, t, env.as_deref()).map_err(err)?;
            save(&st, &schema, &store, &common)?;
            Ok(report.to_string())
        }
        Command::Run { store, tickscript, duration_weighted, common } => {
            let (schema, catalog, mut st) = open_store(&store, &common)?;
            let ticks = load_tickscript(&schema, &tickscript).map_err(err)?;
            let reports = run_schedule(&catalog, &mut st, &ticks, weighting(duration_weighted)).map_err(err)?;
            save(&st, &schema, &store, &common)?;
            Ok(reports.iter().map(ToString::to_string).collect())
        }
        Command::Archive { store, env, duration_weighted, common } => {
            let (schema, catalog, mut st) = open_store(&store, &common)?;
            let report = apply_archive(&catalog, &mut st, env.as_deref(), weighting(duration_weighted)).map_err(err)?;
            save(&st, &schema, &store, &common)?;
            let text = report.to_string();
            Ok(if text.is_empty() { "nothing to archive\n".to_string() } else { text })
        }
        Command::Analyze { schema, csv, assume } => analyze_cmd(&schema, csv.as_deref(), &assume),
        Command::Inspect { store, class, oid, property, common } => {
            let (_, catalog, st) = open_store(&store, &common)?;
            inspect(&catalog, &st, &class, oid.as_deref(), property.as_deref())
        }
    }
}

fn weighting(duration: bool) -> Weighting {
    if duration {
        Weighting::Duration
    } else {
        Weighting::PerState
    }
}

fn parse_instant(s: &str) -> Result<Instant, Failure> {
    s.parse().map_err(|e| err(format!("bad instant `{s}`: {e}")))
}

fn load_schema(path: &Path) -> Result<WarehouseSchema, Failure> {
    let text = read_file(path).map_err(err)?;
    parse_schema(&text).map_err(|e| Failure::Diagnostics(vec![format!("{}:{e}", path.display())]))
}

fn resolve(schema: &WarehouseSchema, path: &Path) -> Result<Catalog, Failure> {
    Catalog::resolve(schema)
        .map_err(|ds| Failure::Diagnostics(ds.iter().map(|d| format!("{}: {d}", path.display())).collect()))
}

fn validate(path: &Path) -> Outcome {
    let schema = load_schema(path)?;
    let diags = validate_schema(&schema);
    if !diags.is_empty() {
        return Err(Failure::Diagnostics(diags.iter().map(|d| format!("{}: {d}", path.display())).collect()));
    }
    Ok(format!(
        "{}: ok ({} source classes, {} warehouse classes, {} environments)\n",
        path.display(),
        schema.sources.len(),
        schema.classes.len(),
        schema.environments.len()
    ))
}

fn build(schema_path: &Path, snapshot: &Path, at: &str, output: &Path) -> Outcome {
    let schema = load_schema(schema_path)?;
    let catalog = resolve(&schema, schema_path)?;
    let snap = load_snapshot(&schema, snapshot).map_err(err)?;
    let t0 = parse_instant(at)?;
    let store = initial_build(&catalog, &snap, t0, &schema_hash(&schema)).map_err(err)?;
    save_store(&store, Some(&schema), output).map_err(err)?;
    let mut text = format!("built {} at {t0}\n", output.display());
    for (c, e) in &store.classes {
        let _ = writeln!(text, "  {c}: {} objects", e.objects.len());
    }
    Ok(text)
}

fn open_store(path: &Path, args: &StoreArgs) -> Result<(WarehouseSchema, Catalog, WarehouseStore), Failure> {
    let text = read_file(path).map_err(err)?;
    let (schema, origin) = match &args.schema {
        Some(p) => (load_schema(p)?, p.clone()),
        None => match embedded_schema(&text).map_err(err)? {
            Some(s) => (s, path.to_path_buf()),
            None => return Err(err(format!("{} has no embedded schema; pass --schema", path.display()))),
        },
    };
    let catalog = resolve(&schema, &origin)?;
    let store = parse_store(&text, Some(&schema_hash(&schema))).map_err(err)?;
    Ok((schema, catalog, store))
}

fn save(store: &WarehouseStore, schema: &WarehouseSchema, path: &Path, args: &StoreArgs) -> Result<(), Failure> {
    save_store(store, Some(schema), args.output.as_deref().unwrap_or(path)).map_err(err)
}

fn analyze_cmd(path: &Path, csv: Option<&Path>, assume: &[String]) -> Outcome {
    let schema = load_schema(path)?;
    let catalog = resolve(&schema, path)?;
    let fixed = resolve_methods(&schema, assume).map_err(err)?;
    let report = analyze(&catalog, &fixed).map_err(err)?;
    if let Some(dir) = csv {
        write_matrices(&report, dir).map_err(err)?;
    }
    Ok(render_report(&report, color_from_env()))
}

/// Text listing of a class extent, as printed by `wdw inspect`.
pub fn render_inspect(
    catalog: &Catalog,
    store: &WarehouseStore,
    class: &str,
    oid: Option<&str>,
    prop: Option<&str>,
) -> Result<String, String> {
    inspect(catalog, store, class, oid, prop).map_err(|f| match f {
        Failure::Error(m) => m,
        Failure::Diagnostics(lines) => lines.join("\n"),
    })
}

fn inspect(catalog: &Catalog, store: &WarehouseStore, class: &str, oid: Option<&str>, prop: Option<&str>) -> Outcome {
    let wc = catalog.class(class).ok_or_else(|| err(format!("unknown warehouse class `{class}`")))?;
    let extent = store.extent(class).map_err(err)?;
    if let Some(p) = prop {
        if wc.field(p).is_none() {
            return Err(err(format!("`{class}` has no property `{p}`")));
        }
    }
    let objects: Vec<_> = match oid {
        Some(o) => vec![store.object(class, o).map_err(err)?],
        None => extent.objects.iter().collect(),
    };
    let mut text = String::new();
    for o in objects {
        let status = if o.is_active() { "active" } else { "retired" };
        let _ = writeln!(text, "{} ({status}) key {}", o.oid, o.lineage_key);
        if let Some(p) = prop {
            for (d, v) in o.history(wc, p).map_err(err)? {
                let _ = writeln!(text, "  {d} {p} = {v}");
            }
            for s in &o.archived {
                if let Some(v) = s.value.get(p) {
                    let _ = writeln!(text, "  archived {} {p} = {v}", s.domain);
                }
            }
            continue;
        }
        if let Some(c) = &o.current {
            let _ = writeln!(text, "  current {} {}", c.domain, render_values(&c.value));
        }
        for s in &o.past {
            let _ = writeln!(text, "  past {} {}", s.domain, render_values(&s.value));
        }
        for s in &o.archived {
            let _ = writeln!(text, "  archived {} {}", s.domain, render_values(&s.value));
        }
    }
    Ok(text)
}

fn render_values(v: &std::collections::BTreeMap<String, crate::value::Value>) -> String {
    let parts: Vec<String> = v.iter().map(|(k, x)| format!("{k}: {x}")).collect();
    format!("{{{}}}", parts.join(", "))
}
