//! Operations shared by the command line and the HTTP service.

use serde::Serialize;
use serde_json::{json, Value as Json};

use dw_core::mart::{detect_representative_classes, infer_hierarchy, load_mart, ClassDependency, Detection, MartData};
use dw_core::project::Project;
use dw_core::schema::{load_instances, serialize_schema, SchemaGraph};
use dw_core::temporal::{ExtractionRun, TemporalStore};
use dw_core::{Error, Result, Timestamp};

/// The project together with its temporal store. Only one exists per
/// running process and all mutations go through it.
#[derive(Debug)]
pub struct Workspace {
    pub project: Project,
    pub store: TemporalStore,
}

impl Workspace {
    pub fn open(path: &std::path::Path) -> Result<Self> {
        let project = Project::open(path)?;
        let store = project.open_store()?;
        Ok(Workspace { project, store })
    }

    /// Load an instance document as a new run and persist the store.
    /// The store is left untouched on failure.
    pub fn refresh(
        &mut self,
        document: &str,
        date: Timestamp,
        progress: impl FnMut(usize, usize),
    ) -> Result<ExtractionRun> {
        let p = &self.project;
        let snapshots = load_instances(&p.source, document, date, self.store.known_sources())?;
        let mut next = self.store.clone();
        let run = next.run_refresh_with(&p.resolved.warehouse, &p.source, &snapshots, date, progress)?;
        next.save(&p.store_dir())?;
        self.store = next;
        Ok(run)
    }

    pub fn detection(&self) -> Detection {
        let classes: Vec<String> = self
            .project
            .resolved
            .warehouse
            .classes
            .iter()
            .map(|c| c.name.clone())
            .collect();
        detect_representative_classes(&classes, self.store.runs())
    }

    pub fn mart_data(&self, mart: &str) -> Result<MartData> {
        let m = self.project.mart(mart)?;
        load_mart(m, &self.project.resolved.warehouse, self.store.current_records())
    }

    /// Hierarchy edges mined from the current contents of a dimension.
    pub fn infer_edges(&self, mart: &str, dimension: &str) -> Result<Vec<(String, String)>> {
        let m = self.project.mart(mart)?;
        let sample = self.mart_data(mart)?.sample(m, dimension)?;
        Ok(infer_hierarchy(&sample)?.edges)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub class: String,
    pub witness: String,
    /// Links followed from the starting class, in order.
    pub links: Vec<String>,
    pub chain: Vec<dw_core::mart::Hop>,
}

/// Classes dependent on `from` in the warehouse schema, reflexive entry
/// excluded.
pub fn dependencies(warehouse: &SchemaGraph, from: &str) -> Result<Vec<Candidate>> {
    Ok(dw_core::mart::transitive_dependencies(warehouse, from)?
        .into_iter()
        .filter(|d| !d.chain.is_empty())
        .map(|d: ClassDependency| Candidate {
            class: d.to,
            witness: d.witness.to_string(),
            links: d.chain.iter().map(|h| h.link.clone()).collect(),
            chain: d.chain,
        })
        .collect())
}

pub fn schema_json(s: &SchemaGraph) -> Json {
    serde_json::from_str(&serialize_schema(s)).expect("schema document is JSON")
}

/// Wrap a list of objects as an instance document.
pub fn instance_document(objects: Json) -> String {
    json!({ "objects": objects }).to_string()
}

pub fn parse_date(s: &str) -> Result<Timestamp> {
    s.parse().map_err(|e| Error::Parse {
        what: "date".into(),
        message: e,
    })
}
