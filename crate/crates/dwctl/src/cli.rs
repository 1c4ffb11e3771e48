//! Command-line grammar and dispatch.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value as Json};

use dw_core::codegen::{emit_refresh, emit_structure, Definition, Target};
use dw_core::mart::{DimensionSource, MartOp};
use dw_core::project::Project;
use dw_core::schema::{load_instances, load_schema, AttributeType};
use dw_core::warehouse::WarehouseOp;
use dw_core::{Error, Result};

use crate::engine::{self, Workspace};

#[derive(Debug, Parser)]
#[command(name = "dwctl", version, about = "Build and refresh a historized object warehouse and its data marts")]
pub struct Cli {
    /// Project file.
    #[arg(long, global = true, env = "DWCTL_PROJECT")]
    pub project: Option<PathBuf>,

    /// Refuse the mutation unless the project is at this version.
    #[arg(long, global = true)]
    pub expect_version: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a project over a source schema file.
    Init {
        #[arg(long)]
        source: PathBuf,
    },
    /// Check a schema document, or the project when no schema is given.
    Validate {
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Project a source class into the warehouse.
    ProjectClass { class: String },
    /// Set the selection predicate of a warehouse class.
    SetSelection { class: String, predicate: String },
    /// Add a specific (`--type`) or calculated (`--formula`) attribute.
    AddAttribute {
        class: String,
        name: String,
        #[arg(long = "type", conflicts_with = "formula", required_unless_present = "formula")]
        ty: Option<String>,
        #[arg(long, requires = "ty")]
        default: Option<String>,
        #[arg(long)]
        formula: Option<String>,
    },
    /// Append a raw warehouse operation given as JSON.
    ApplyOp { json: String },
    #[command(subcommand)]
    Historize(Historize),
    /// Extract a batch without storing it and print the warehouse records.
    Extract(Batch),
    /// Load a batch as a new run.
    Refresh(Batch),
    /// Print the run log.
    Runs,
    /// Rank representative classes from the run log; `--flag` records one.
    MartDetectFact {
        #[arg(long)]
        mart: String,
        #[arg(long)]
        flag: Option<String>,
    },
    MartProjectFact {
        #[arg(long)]
        mart: String,
        class: String,
        name: String,
    },
    /// Project a dimension from a class, a `Class.attribute`, or `--all`.
    MartProjectDim {
        #[arg(long)]
        mart: String,
        #[arg(long, conflicts_with_all = ["attribute", "all"])]
        class: Option<String>,
        #[arg(long, conflicts_with = "all")]
        attribute: Option<String>,
        #[arg(long)]
        all: bool,
        #[arg(long)]
        name: Option<String>,
    },
    MartSpecialize {
        #[arg(long)]
        mart: String,
        parent: String,
        name: String,
        #[arg(long)]
        class: Option<String>,
        #[arg(long, value_delimiter = ',')]
        parameters: Vec<String>,
        #[arg(long)]
        membership: Option<String>,
    },
    /// Mine a dimension's hierarchy from stored data; `--apply` records it.
    MartInferHierarchy {
        #[arg(long)]
        mart: String,
        dimension: String,
        #[arg(long)]
        apply: bool,
    },
    /// Add a fact measure, or a dimension parameter with `--dimension`.
    MartAddMeasure {
        #[arg(long)]
        mart: String,
        name: String,
        formula: String,
        #[arg(long)]
        dimension: Option<String>,
    },
    MartSelect {
        #[arg(long)]
        mart: String,
        target: String,
        predicate: String,
    },
    /// Append a raw mart operation given as JSON.
    MartApplyOp {
        #[arg(long)]
        mart: String,
        json: String,
    },
    Emit {
        #[arg(value_parser = ["structure", "refresh"])]
        what: String,
        #[arg(long, default_value = "neutral-plan")]
        target: String,
        /// Emit a mart's structure instead of the warehouse's.
        #[arg(long)]
        mart: Option<String>,
    },
    Export {
        #[arg(value_parser = ["history", "mart"])]
        what: String,
        #[arg(long)]
        mart: Option<String>,
        /// Write one JSON-lines file per table into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Debug, Subcommand)]
pub enum Historize {
    Attr { class: String, attribute: String },
    Class { class: String },
    Env {
        name: String,
        #[arg(long, value_delimiter = ',', required = true)]
        classes: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        links: Vec<String>,
        #[arg(long, conflicts_with_all = ["classes", "links"])]
        delete: bool,
    },
}

#[derive(Debug, Args)]
pub struct Batch {
    /// Instance document.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub date: String,
}

/// What a successful command prints on stdout.
pub enum Output {
    Json(Json),
    Text(String),
    Serve(u16, Box<Workspace>),
}

fn usage(message: impl Into<String>) -> Error {
    Error::Parse {
        what: "arguments".into(),
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn json_arg<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        what: what.into(),
        message: e.to_string(),
    })
}

/// Source path as stored in the project: relative to the project's
/// directory when it lies beneath it.
fn source_reference(project: &Path, source: &Path) -> Result<String> {
    let source = fs::canonicalize(source).map_err(|e| Error::Io(format!("{}: {e}", source.display())))?;
    let dir = project.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let dir = fs::canonicalize(dir)?;
    let rel = source.strip_prefix(&dir).unwrap_or(&source);
    Ok(rel.to_string_lossy().into_owned())
}

impl Cli {
    fn project_path(&self) -> Result<&Path> {
        self.project
            .as_deref()
            .ok_or_else(|| usage("no project: pass --project or set DWCTL_PROJECT"))
    }

    fn workspace(&self) -> Result<Workspace> {
        Workspace::open(self.project_path()?)
    }

    fn warehouse(&self, op: WarehouseOp) -> Result<Output> {
        let mut p = Project::open(self.project_path()?)?;
        let outcome = p.apply_warehouse(op, self.expect_version)?;
        Ok(Output::Json(json!({ "version": p.version(), "outcome": outcome })))
    }

    fn mart(&self, mart: &str, op: MartOp) -> Result<Output> {
        let mut p = Project::open(self.project_path()?)?;
        let outcome = p.apply_mart(mart, op, self.expect_version)?;
        Ok(Output::Json(json!({ "version": p.version(), "outcome": outcome })))
    }

    pub fn run(&self) -> Result<Output> {
        match &self.command {
            Command::Init { source } => {
                let path = self.project_path()?;
                let p = Project::create(path, &source_reference(path, source)?)?;
                Ok(Output::Json(json!({
                    "project": path,
                    "version": p.version(),
                    "source_hash": p.file.source.sha256,
                })))
            }
            Command::Validate { schema: Some(schema) } => {
                let s = load_schema(&read(schema)?)?;
                Ok(Output::Json(json!({
                    "valid": true,
                    "classes": s.classes.len(),
                    "links": s.links.len(),
                })))
            }
            Command::Validate { schema: None } => {
                let p = Project::open(self.project_path()?)?;
                p.resolved.warehouse.validate(&p.source)?;
                for m in p.resolved.marts.values() {
                    m.validate()?;
                }
                Ok(Output::Json(json!({
                    "valid": true,
                    "version": p.version(),
                    "warehouse_classes": p.resolved.warehouse.classes.len(),
                    "marts": p.resolved.marts.keys().collect::<Vec<_>>(),
                })))
            }
            Command::ProjectClass { class } => self.warehouse(WarehouseOp::ProjectClass { class: class.clone() }),
            Command::SetSelection { class, predicate } => self.warehouse(WarehouseOp::SetSelection {
                class: class.clone(),
                predicate: predicate.clone(),
            }),
            Command::AddAttribute {
                class,
                name,
                ty,
                default,
                formula,
            } => {
                let op = match (ty, formula) {
                    (Some(ty), _) => WarehouseOp::AddSpecificAttribute {
                        class: class.clone(),
                        name: name.clone(),
                        ty: json_arg::<AttributeType>("type", &Json::String(ty.clone()).to_string())?,
                        default: default.as_deref().map(|d| json_arg("default", d)).transpose()?,
                    },
                    (None, Some(formula)) => WarehouseOp::AddCalculatedAttribute {
                        class: class.clone(),
                        name: name.clone(),
                        formula: formula.clone(),
                    },
                    (None, None) => return Err(usage("--type or --formula is required")),
                };
                self.warehouse(op)
            }
            Command::ApplyOp { json } => self.warehouse(json_arg("warehouse operation", json)?),
            Command::Historize(h) => self.warehouse(match h {
                Historize::Attr { class, attribute } => WarehouseOp::MarkAttributeHistorized {
                    class: class.clone(),
                    attribute: attribute.clone(),
                },
                Historize::Class { class } => WarehouseOp::MarkClassHistorized { class: class.clone() },
                Historize::Env { name, delete: true, .. } => WarehouseOp::DeleteEnvironment { name: name.clone() },
                Historize::Env {
                    name, classes, links, ..
                } => WarehouseOp::CreateEnvironment {
                    name: name.clone(),
                    classes: classes.clone(),
                    links: links.clone(),
                },
            }),
            Command::Extract(b) => {
                let ws = self.workspace()?;
                let p = &ws.project;
                let date = engine::parse_date(&b.date)?;
                let snaps = load_instances(&p.source, &read(&b.input)?, date, ws.store.known_sources())?;
                let records = p.resolved.warehouse.extract(&p.source, &snaps)?;
                let mut out = String::new();
                for r in records {
                    out.push_str(&serde_json::to_string(&r).expect("record serializes"));
                    out.push('\n');
                }
                Ok(Output::Text(out))
            }
            Command::Refresh(b) => {
                let mut ws = self.workspace()?;
                let run = ws.refresh(&read(&b.input)?, engine::parse_date(&b.date)?, |_, _| {})?;
                Ok(Output::Json(json!({ "run": run })))
            }
            Command::Runs => Ok(Output::Text(self.workspace()?.store.run_log_jsonl())),
            Command::MartDetectFact { mart, flag: None } => {
                let ws = self.workspace()?;
                let _ = mart;
                Ok(Output::Json(serde_json::to_value(ws.detection()).expect("detection serializes")))
            }
            Command::MartDetectFact { mart, flag: Some(class) } => {
                self.mart(mart, MartOp::FlagRepresentative { class: class.clone() })
            }
            Command::MartProjectFact { mart, class, name } => self.mart(
                mart,
                MartOp::ProjectFact {
                    class: class.clone(),
                    name: name.clone(),
                },
            ),
            Command::MartProjectDim {
                mart,
                class,
                attribute,
                all,
                name,
            } => {
                let source = match (class, attribute, all) {
                    (Some(class), None, false) => DimensionSource::Class { class: class.clone() },
                    (None, Some(qualified), false) => {
                        let (class, attribute) = qualified
                            .split_once('.')
                            .ok_or_else(|| usage("--attribute expects Class.attribute"))?;
                        DimensionSource::Attribute {
                            class: class.into(),
                            attribute: attribute.into(),
                        }
                    }
                    (None, None, true) => DimensionSource::AllDependent,
                    _ => return Err(usage("one of --class, --attribute or --all is required")),
                };
                self.mart(
                    mart,
                    MartOp::ProjectDimension {
                        source,
                        name: name.clone(),
                    },
                )
            }
            Command::MartSpecialize {
                mart,
                parent,
                name,
                class,
                parameters,
                membership,
            } => self.mart(
                mart,
                MartOp::SpecializeDimension {
                    parent: parent.clone(),
                    name: name.clone(),
                    class: class.clone(),
                    parameters: parameters.clone(),
                    membership: membership.clone(),
                },
            ),
            Command::MartInferHierarchy { mart, dimension, apply } => {
                let ws = self.workspace()?;
                let edges = ws.infer_edges(mart, dimension)?;
                if !*apply {
                    return Ok(Output::Json(json!({ "dimension": dimension, "edges": edges })));
                }
                let mut p = ws.project;
                let outcome = p.apply_mart(
                    mart,
                    MartOp::SetHierarchy {
                        dimension: dimension.clone(),
                        edges: edges.clone(),
                    },
                    self.expect_version,
                )?;
                Ok(Output::Json(json!({
                    "version": p.version(),
                    "dimension": dimension,
                    "edges": edges,
                    "outcome": outcome,
                })))
            }
            Command::MartAddMeasure {
                mart,
                name,
                formula,
                dimension,
            } => self.mart(
                mart,
                match dimension {
                    Some(d) => MartOp::AddParameter {
                        dimension: d.clone(),
                        name: name.clone(),
                        formula: formula.clone(),
                    },
                    None => MartOp::AddMeasure {
                        name: name.clone(),
                        formula: formula.clone(),
                    },
                },
            ),
            Command::MartSelect { mart, target, predicate } => self.mart(
                mart,
                MartOp::SelectObjects {
                    target: target.clone(),
                    predicate: predicate.clone(),
                },
            ),
            Command::MartApplyOp { mart, json } => self.mart(mart, json_arg("mart operation", json)?),
            Command::Emit { what, target, mart } => {
                let target: Target = target.parse()?;
                let p = Project::open(self.project_path()?)?;
                let w = &p.resolved.warehouse;
                let plan = match (what.as_str(), mart) {
                    ("structure", Some(m)) => emit_structure(Definition::Mart(p.mart(m)?), target)?,
                    ("structure", None) => emit_structure(Definition::Warehouse { def: w, source: &p.source }, target)?,
                    ("refresh", None) => emit_refresh(w, &p.source, target)?,
                    _ => return Err(usage("--mart applies to structure emission only")),
                };
                Ok(Output::Text(plan.render()))
            }
            Command::Export { what, mart, out } => {
                let ws = self.workspace()?;
                let text = match (what.as_str(), mart) {
                    ("history", _) => ws.store.history_jsonl(),
                    ("mart", Some(m)) => {
                        let data = ws.mart_data(m)?;
                        if let Some(dir) = out {
                            let files = data.write_dir(dir)?;
                            return Ok(Output::Json(json!({ "files": files })));
                        }
                        data.fact_jsonl()
                    }
                    _ => return Err(usage("export mart requires --mart")),
                };
                match out {
                    Some(path) => {
                        fs::write(path, &text)?;
                        Ok(Output::Json(json!({ "files": [path] })))
                    }
                    None => Ok(Output::Text(text)),
                }
            }
            Command::Serve { port } => Ok(Output::Serve(*port, Box::new(self.workspace()?))),
        }
    }
}

/// Run the command and report. Returns the process exit status.
pub fn main_with(cli: Cli) -> i32 {
    match cli.run() {
        Ok(Output::Json(v)) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("output serializes"));
            0
        }
        Ok(Output::Text(t)) => {
            let _ = std::io::stdout().write_all(t.as_bytes());
            0
        }
        Ok(Output::Serve(port, ws)) => {
            let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
            match rt.block_on(crate::server::serve(crate::server::AppState::new(*ws), port)) {
                Ok(()) => 0,
                Err(e) => report(&Error::Io(e.to_string())),
            }
        }
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    eprintln!("{}", serde_json::to_string(&e.diagnostic()).expect("diagnostic serializes"));
    1
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn grammar_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn source_beneath_the_project_is_stored_relative() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("schemas")).unwrap();
        let source = dir.path().join("schemas/source.json");
        fs::write(&source, "{}").unwrap();
        let r = source_reference(&dir.path().join("p.dwproj"), &source).unwrap();
        assert_eq!(r, "schemas/source.json");
    }

    #[test]
    fn environment_flags_parse() {
        let cli = Cli::try_parse_from(["dwctl", "historize", "env", "E", "--classes", "A,B"]).unwrap();
        match cli.command {
            Command::Historize(Historize::Env { classes, links, .. }) => {
                assert_eq!(classes, ["A", "B"]);
                assert!(links.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }
}
