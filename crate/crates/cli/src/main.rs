use std::fs;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value as Json;

use modeladapt_core::annotation::{validate_annotations, Severity};
use modeladapt_core::fixture;
use modeladapt_core::model::{parse_catalog, AnnotationTarget, Catalog, FkName, ModelChange, TableRef};
use modeladapt_core::policy::{prune_model, ClientContext};
use modeladapt_core::storage::{load, Database};
use modeladapt_core::tags;
use modeladapt_service::AppState;

#[derive(Parser)]
#[command(name = "modeladapt", version, about = "Catalog tooling and service runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a catalog and its annotations as seen by a role set.
    Validate {
        catalog: PathBuf,
        /// Comma-separated roles; `*` alone is the anonymous client.
        #[arg(long, default_value = "*")]
        roles: String,
    },
    /// Run the HTTP service.
    Serve {
        catalog: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        assets_dir: Option<PathBuf>,
        /// JSON file mapping bearer tokens to identities.
        #[arg(long)]
        tokens: Option<PathBuf>,
        #[arg(long, default_value_t = 8111)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Bulk-insert a CSV or JSON-lines file into one table.
    Load {
        catalog: PathBuf,
        data_dir: PathBuf,
        /// `schema:table`
        table: String,
        file: PathBuf,
        #[arg(long, default_value = "loader")]
        identity: String,
        /// Roles to act with; defaults to the catalog owners.
        #[arg(long)]
        roles: Option<String>,
    },
    /// Write the demo catalog and a populated data directory.
    Demo {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Set or remove one annotation in a catalog file in place.
    SetAnnotation(SetAnnotation),
}

#[derive(Args)]
struct SetAnnotation {
    catalog: PathBuf,
    /// Tag URI or its short name, e.g. `table-display`.
    tag: String,
    /// JSON value, or `@path` to read it from a file.
    value: Option<String>,
    #[arg(long, conflicts_with = "fkey")]
    schema: Option<String>,
    /// `schema:table`
    #[arg(long, conflicts_with_all = ["schema", "fkey"])]
    table: Option<String>,
    #[arg(long, requires = "table")]
    column: Option<String>,
    /// `schema:constraint`
    #[arg(long)]
    fkey: Option<String>,
    #[arg(long, conflicts_with = "value")]
    delete: bool,
}

fn split_pair(s: &str, what: &str) -> Result<(String, String)> {
    s.split_once(':')
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .ok_or_else(|| anyhow!("{what} must be written as schema:name, got {s:?}"))
}

fn parse_roles(roles: &str) -> Vec<String> {
    roles
        .split(',')
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .map(str::to_string)
        .collect()
}

fn client_for(roles: &str) -> ClientContext {
    let roles = parse_roles(roles);
    if roles.iter().all(|r| r == "*") {
        ClientContext::anonymous()
    } else {
        ClientContext::new("validator", roles)
    }
}

fn validate(path: &Path, roles: &str) -> ExitCode {
    let catalog = match fs::read(path)
        .map_err(anyhow::Error::from)
        .and_then(|b| parse_catalog(&b).map_err(anyhow::Error::from))
    {
        Ok(c) => c,
        Err(e) => {
            println!("ERROR model: {e}");
            return ExitCode::from(1);
        }
    };
    let model = prune_model(&catalog, &client_for(roles));
    let (_, diagnostics) = validate_annotations(&catalog, &model);
    for d in &diagnostics {
        println!("{d}");
    }
    let errors = diagnostics.iter().filter(|d| d.severity == Severity::Error).count();
    let warnings = diagnostics.len() - errors;
    eprintln!("{errors} error(s), {warnings} warning(s)");
    if errors > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

async fn serve(
    catalog: PathBuf,
    data_dir: Option<PathBuf>,
    assets_dir: Option<PathBuf>,
    tokens: Option<PathBuf>,
    host: String,
    port: u16,
) -> Result<()> {
    let state = AppState::open(&catalog, data_dir.as_deref(), assets_dir, tokens.as_deref())?;
    let addr: SocketAddr = format!("{host}:{port}").parse().context("listen address")?;
    modeladapt_service::serve(state, addr).await?;
    Ok(())
}

fn read_catalog(path: &Path) -> Result<Catalog> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_catalog(&bytes)?)
}

/// Replaces the file so readers never see a partial document.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}

fn load_file(
    catalog: &Path,
    data_dir: &Path,
    table: &str,
    file: &Path,
    identity: &str,
    roles: Option<&str>,
) -> Result<()> {
    let catalog = read_catalog(catalog)?;
    let (schema, name) = split_pair(table, "table")?;
    let table = TableRef::new(schema, name);
    if catalog.table(&table).is_none() {
        bail!("unknown table {table}");
    }
    let reader = BufReader::new(fs::File::open(file).with_context(|| format!("opening {}", file.display()))?);
    let records = match file.extension().and_then(|e| e.to_str()) {
        Some("csv") => load::read_csv(reader)?,
        Some("jsonl" | "ndjson" | "json") => load::read_jsonl(reader)?,
        _ => bail!("expected a .csv or .jsonl file"),
    };
    let roles = match roles {
        Some(r) => parse_roles(r),
        None => catalog.owners.clone(),
    };
    let client = ClientContext::new(identity, roles);
    let db = Database::open(data_dir, &catalog)?;
    let rows = db.insert(&catalog, &table, &records, &client)?;
    db.checkpoint()?;
    println!("{} rows loaded into {table}", rows.len());
    Ok(())
}

fn demo(out: &Path, seed: u64) -> Result<()> {
    fs::create_dir_all(out)?;
    let catalog = fixture::catalog();
    let data = out.join("data");
    if data.exists() {
        bail!("{} already exists", data.display());
    }
    write_atomic(&out.join("catalog.json"), &catalog.to_json_bytes())?;
    let db = Database::open(&data, &catalog)?;
    fixture::populate(&db, &catalog, seed)?;
    db.checkpoint()?;
    println!("wrote {} and {}", out.join("catalog.json").display(), data.display());
    Ok(())
}

fn tag_uri(tag: &str) -> String {
    if tag.starts_with("tag:") {
        return tag.to_string();
    }
    tags::RECOGNIZED
        .iter()
        .find(|uri| uri.rsplit(':').next() == Some(tag))
        .map(|u| u.to_string())
        .unwrap_or_else(|| tag.to_string())
}

fn set_annotation(args: SetAnnotation) -> Result<()> {
    let catalog = read_catalog(&args.catalog)?;
    let target = match (&args.schema, &args.table, &args.column, &args.fkey) {
        (_, Some(t), Some(c), _) => {
            let (s, t) = split_pair(t, "table")?;
            AnnotationTarget::Column {
                table: TableRef::new(s, t),
                column: c.clone(),
            }
        }
        (_, Some(t), None, _) => {
            let (s, t) = split_pair(t, "table")?;
            AnnotationTarget::Table {
                table: TableRef::new(s, t),
            }
        }
        (_, _, _, Some(fk)) => {
            let (s, c) = split_pair(fk, "foreign key")?;
            AnnotationTarget::ForeignKey { name: FkName::new(s, c) }
        }
        (Some(s), _, _, _) => AnnotationTarget::Schema { schema: s.clone() },
        _ => AnnotationTarget::Catalog,
    };
    let tag = tag_uri(&args.tag);
    let change = if args.delete {
        ModelChange::DeleteAnnotation { target, tag }
    } else {
        let raw = args.value.ok_or_else(|| anyhow!("a value is required unless --delete is given"))?;
        let text = match raw.strip_prefix('@') {
            Some(p) => fs::read_to_string(p).with_context(|| format!("reading {p}"))?,
            None => raw,
        };
        let value: Json = serde_json::from_str(&text).context("annotation value is not JSON")?;
        ModelChange::SetAnnotation { target, tag, value }
    };
    let next = catalog.apply(&change)?;
    write_atomic(&args.catalog, &next.to_json_bytes())?;
    println!("catalog version {}", next.version);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { catalog, roles } => return Ok(validate(&catalog, &roles)),
        Command::Serve {
            catalog,
            data_dir,
            assets_dir,
            tokens,
            port,
            host,
        } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(catalog, data_dir, assets_dir, tokens, host, port))?;
        }
        Command::Load {
            catalog,
            data_dir,
            table,
            file,
            identity,
            roles,
        } => load_file(&catalog, &data_dir, &table, &file, &identity, roles.as_deref())?,
        Command::Demo { out_dir, seed } => demo(&out_dir, seed)?,
        Command::SetAnnotation(args) => set_annotation(args)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}

/// The error chain, skipping causes a parent message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}
