//! Historized storage of warehouse extensions.
//!
//! Every refresh overwrites non-historized values in place. Historized
//! attributes keep a list of `(value, extraction date)` entries; objects of
//! historized classes become generic objects whose states cover half-open
//! intervals `[start, end)`, the latest one open-ended.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use chrono::{Duration, Timelike};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::objects::ObjectRecord;
use crate::schema::{check_snapshots, KnownObjects, Link, ObjectSnapshot, SchemaGraph};
use crate::value::{Timestamp, Value};
use crate::warehouse::{AttributeKind, WarehouseDef};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Day,
    Hour,
    Minute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeModel {
    pub granularity: Granularity,
    /// Refresh period, in granules.
    pub refresh_period: u32,
}

impl Default for TimeModel {
    fn default() -> Self {
        TimeModel {
            granularity: Granularity::Day,
            refresh_period: 1,
        }
    }
}

impl TimeModel {
    pub fn check(&self) -> Result<()> {
        if self.refresh_period == 0 {
            return Err(Error::InvalidType(
                "refresh period must be at least one granule".into(),
            ));
        }
        Ok(())
    }

    /// Truncate `t` to the start of its granule.
    pub fn quantize(&self, t: Timestamp) -> Timestamp {
        let dt = t.0;
        let q = match self.granularity {
            Granularity::Day => dt.date().and_hms_opt(0, 0, 0),
            Granularity::Hour => dt.date().and_hms_opt(dt.hour(), 0, 0),
            Granularity::Minute => dt.date().and_hms_opt(dt.hour(), dt.minute(), 0),
        };
        Timestamp(q.expect("valid truncated time"))
    }

    fn granule(&self) -> Duration {
        match self.granularity {
            Granularity::Day => Duration::days(1),
            Granularity::Hour => Duration::hours(1),
            Granularity::Minute => Duration::minutes(1),
        }
    }

    /// When the refresh following one at `t` is due.
    pub fn next_refresh(&self, t: Timestamp) -> Timestamp {
        Timestamp(self.quantize(t).0 + self.granule() * self.refresh_period as i32)
    }
}

/// A named sub-schema historized as a unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub name: String,
    pub classes: BTreeSet<String>,
    #[serde(default)]
    pub links: BTreeSet<String>,
}

/// Historization marks of a warehouse.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Historization {
    /// (class, attribute) pairs.
    #[serde(default)]
    pub attributes: BTreeSet<(String, String)>,
    #[serde(default)]
    pub classes: BTreeSet<String>,
    #[serde(default)]
    pub environments: Vec<Environment>,
}

impl Historization {
    pub fn is_attribute_historized(&self, class: &str, attribute: &str) -> bool {
        self.attributes
            .contains(&(class.to_string(), attribute.to_string()))
    }

    /// Historized directly or as a member of an environment.
    pub fn covers_class(&self, class: &str) -> bool {
        self.classes.contains(class) || self.environment_of(class).is_some()
    }

    pub fn environment_of(&self, class: &str) -> Option<&Environment> {
        self.environments.iter().find(|e| e.classes.contains(class))
    }

    /// Add an environment. `links` are the resolved definitions of
    /// `env.links`.
    pub fn create_environment(&mut self, env: Environment, links: &[Link]) -> Result<()> {
        if self.environments.iter().any(|e| e.name == env.name) {
            return Err(Error::DuplicateName {
                scope: "environment".into(),
                name: env.name,
            });
        }
        for l in links {
            for end in [&l.source, &l.target] {
                if !env.classes.contains(end) {
                    return Err(Error::EnvironmentEndpoint {
                        link: l.name.clone(),
                        class: end.clone(),
                    });
                }
            }
        }
        for c in &env.classes {
            if let Some(other) = self.environment_of(c) {
                return Err(Error::EnvironmentOverlap {
                    class: c.clone(),
                    environment: other.name.clone(),
                });
            }
        }
        self.environments.push(env);
        Ok(())
    }

    pub fn delete_environment(&mut self, name: &str) -> Result<Environment> {
        let i = self
            .environments
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| Error::UnknownEnvironment(name.to_string()))?;
        Ok(self.environments.remove(i))
    }

    pub(crate) fn forget_attribute(&mut self, class: &str, attribute: &str) {
        self.attributes
            .remove(&(class.to_string(), attribute.to_string()));
    }

    pub(crate) fn forget_class(&mut self, class: &str, links: &[String]) {
        self.attributes.retain(|(c, _)| c != class);
        self.classes.remove(class);
        for e in &mut self.environments {
            e.classes.remove(class);
            e.links.retain(|l| !links.contains(l));
        }
    }

    pub(crate) fn rename_class(&mut self, from: &str, to: &str) {
        self.attributes = std::mem::take(&mut self.attributes)
            .into_iter()
            .map(|(c, a)| if c == from { (to.to_string(), a) } else { (c, a) })
            .collect();
        if self.classes.remove(from) {
            self.classes.insert(to.to_string());
        }
        for e in &mut self.environments {
            if e.classes.remove(from) {
                e.classes.insert(to.to_string());
            }
        }
    }

    pub(crate) fn rename_attribute(&mut self, class: &str, from: &str, to: &str) {
        let key = (class.to_string(), from.to_string());
        if self.attributes.remove(&key) {
            self.attributes.insert((class.to_string(), to.to_string()));
        }
    }
}

/// One state of a generic object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    pub state_id: u64,
    pub values: BTreeMap<String, Value>,
    pub start: Timestamp,
    pub end: Option<Timestamp>,
    /// Sequence number of the run that created the state.
    pub run: u64,
}

impl State {
    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && self.end.is_none_or(|e| t < e)
    }
}

/// One entry of a historized attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueEntry {
    pub value: Option<Value>,
    pub extracted_at: Timestamp,
    pub run: u64,
}

/// A warehouse object as stored: current values plus any history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredObject {
    /// Current extracted values and user-written specific values.
    pub values: BTreeMap<String, Value>,
    #[serde(default)]
    pub links: BTreeMap<String, Vec<String>>,
    pub source_refs: BTreeSet<String>,
    /// Absent from the latest extraction.
    #[serde(default)]
    pub deleted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<State>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attribute_history: BTreeMap<String, Vec<ValueEntry>>,
}

/// Read-only view of a historized object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GenericObject<'a> {
    pub id: &'a str,
    pub class: &'a str,
    pub states: &'a [State],
    pub source_refs: &'a BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub inserted: u64,
    pub changed: u64,
    pub unchanged: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tombstone {
    pub class: String,
    pub object_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRun {
    pub sequence: u64,
    pub date: Timestamp,
    pub counters: BTreeMap<String, Counters>,
    #[serde(default)]
    pub tombstones: Vec<Tombstone>,
}

/// State values of an extracted object: attribute values, with link
/// targets folded in under the link name so that link changes produce
/// states of the objects they connect.
pub fn state_values(r: &ObjectRecord) -> BTreeMap<String, Value> {
    let mut v = r.values.clone();
    for (link, targets) in &r.links {
        v.insert(
            link.clone(),
            Value::List(targets.iter().map(|t| Value::Str(t.clone())).collect()),
        );
    }
    v
}

fn is_specific(name: &str) -> bool {
    AttributeKind::of_name(name) == Some(AttributeKind::Specific)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalStore {
    /// class -> object id -> object.
    objects: BTreeMap<String, BTreeMap<String, StoredObject>>,
    /// Source objects seen so far, for cross-batch reference checks.
    known_sources: KnownObjects,
    #[serde(skip)]
    runs: Vec<ExtractionRun>,
}

const STATE_FILE: &str = "state.json";
const RUN_LOG: &str = "runs.jsonl";

impl TemporalStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn runs(&self) -> &[ExtractionRun] {
        &self.runs
    }

    pub fn known_sources(&self) -> &KnownObjects {
        &self.known_sources
    }

    pub fn object(&self, class: &str, id: &str) -> Option<&StoredObject> {
        self.objects.get(class)?.get(id)
    }

    /// Stored objects, ordered by class then id.
    pub fn objects(&self) -> impl Iterator<Item = (&str, &str, &StoredObject)> {
        self.objects.iter().flat_map(|(c, m)| {
            m.iter()
                .map(move |(id, o)| (c.as_str(), id.as_str(), o))
        })
    }

    /// Latest values of live objects, as navigable records.
    pub fn current_records(&self) -> Vec<ObjectRecord> {
        self.objects()
            .filter(|(_, _, o)| !o.deleted)
            .map(|(c, id, o)| ObjectRecord {
                id: id.to_string(),
                class: c.to_string(),
                values: o.values.clone(),
                links: o.links.clone(),
            })
            .collect()
    }

    pub fn generic_object(&self, class: &str, id: &str) -> Option<GenericObject<'_>> {
        let (c, m) = self.objects.get_key_value(class)?;
        let (id, o) = m.get_key_value(id)?;
        Some(GenericObject {
            id,
            class: c,
            states: o.states.as_deref()?,
            source_refs: &o.source_refs,
        })
    }

    /// Load one batch of source snapshots as a new run.
    pub fn run_refresh(
        &mut self,
        def: &WarehouseDef,
        source: &SchemaGraph,
        snapshots: &[ObjectSnapshot],
        date: Timestamp,
    ) -> Result<ExtractionRun> {
        self.run_refresh_with(def, source, snapshots, date, |_, _| {})
    }

    /// As [`run_refresh`](Self::run_refresh), reporting `(done, total)`
    /// after each extracted object.
    pub fn run_refresh_with(
        &mut self,
        def: &WarehouseDef,
        source: &SchemaGraph,
        snapshots: &[ObjectSnapshot],
        date: Timestamp,
        mut progress: impl FnMut(usize, usize),
    ) -> Result<ExtractionRun> {
        let date = def.time_model.quantize(date);
        if let Some(last) = self.runs.last() {
            if date <= last.date {
                return Err(Error::OutOfOrderRun {
                    previous: last.date.to_string(),
                    requested: date.to_string(),
                });
            }
        }
        check_snapshots(source, snapshots, &self.known_sources)?;
        let extracted = def.extract(source, snapshots)?;
        let wschema = def.schema();
        let sequence = self.runs.last().map_or(1, |r| r.sequence + 1);

        let mut lineage: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for c in &def.classes {
            let mut l = vec![c.name.clone()];
            l.extend(wschema.ancestors(&c.name));
            lineage.insert(c.name.clone(), l);
        }
        let class_hist = |c: &str| def.is_class_historized(c);
        let attr_hist = |c: &str| -> Vec<String> {
            def.historization
                .attributes
                .iter()
                .filter(|(hc, _)| lineage[c].contains(hc))
                .map(|(_, a)| a.clone())
                .collect()
        };
        let defaults = |c: &str| -> BTreeMap<String, Value> {
            lineage[c]
                .iter()
                .filter_map(|w| def.class(w))
                .flat_map(|w| &w.attributes)
                .filter(|a| a.kind == AttributeKind::Specific)
                .filter_map(|a| a.default_value().map(|v| (a.name.clone(), v)))
                .collect()
        };

        let mut counters: BTreeMap<String, Counters> = def
            .classes
            .iter()
            .map(|c| (c.name.clone(), Counters::default()))
            .collect();
        let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
        let total = extracted.len();
        for (done, rec) in extracted.into_iter().enumerate() {
            seen.insert((rec.class.clone(), rec.id.clone()));
            let snapshot_values = state_values(&rec);
            let historized = class_hist(&rec.class);
            let attrs = attr_hist(&rec.class);
            let counter = counters.entry(rec.class.clone()).or_default();
            let slot = self.objects.entry(rec.class.clone()).or_default();
            match slot.get_mut(&rec.id) {
                None => {
                    counter.inserted += 1;
                    let mut values = defaults(&rec.class);
                    values.extend(rec.values.clone());
                    let states = historized.then(|| {
                        vec![State {
                            state_id: 1,
                            values: snapshot_values,
                            start: date,
                            end: None,
                            run: sequence,
                        }]
                    });
                    let attribute_history = attrs
                        .iter()
                        .map(|a| {
                            (
                                a.clone(),
                                vec![ValueEntry {
                                    value: rec.values.get(a).cloned(),
                                    extracted_at: date,
                                    run: sequence,
                                }],
                            )
                        })
                        .collect();
                    slot.insert(
                        rec.id.clone(),
                        StoredObject {
                            values,
                            links: rec.links,
                            source_refs: [rec.id].into(),
                            deleted: false,
                            states,
                            attribute_history,
                        },
                    );
                }
                Some(obj) => {
                    let mut previous = obj.clone();
                    previous.values.retain(|k, _| !is_specific(k));
                    let before = state_values(&ObjectRecord {
                        id: rec.id.clone(),
                        class: rec.class.clone(),
                        values: previous.values,
                        links: previous.links,
                    });
                    if before == snapshot_values {
                        counter.unchanged += 1;
                    } else {
                        counter.changed += 1;
                    }
                    obj.deleted = false;
                    obj.values.retain(|k, _| is_specific(k));
                    obj.values.extend(rec.values.clone());
                    obj.links = rec.links;
                    if historized {
                        let states = obj.states.get_or_insert_with(Vec::new);
                        match states.last_mut() {
                            Some(last) if last.values == snapshot_values => {}
                            Some(last) => {
                                last.end = Some(date);
                                let id = last.state_id + 1;
                                states.push(State {
                                    state_id: id,
                                    values: snapshot_values,
                                    start: date,
                                    end: None,
                                    run: sequence,
                                });
                            }
                            None => states.push(State {
                                state_id: 1,
                                values: snapshot_values,
                                start: date,
                                end: None,
                                run: sequence,
                            }),
                        }
                    }
                    for a in &attrs {
                        let value = rec.values.get(a).cloned();
                        let entries = obj.attribute_history.entry(a.clone()).or_default();
                        if entries.last().is_none_or(|e| e.value != value) {
                            entries.push(ValueEntry {
                                value,
                                extracted_at: date,
                                run: sequence,
                            });
                        }
                    }
                }
            }
            progress(done + 1, total);
        }

        let mut tombstones = Vec::new();
        for (class, m) in &mut self.objects {
            for (id, o) in m.iter_mut() {
                if !o.deleted && !seen.contains(&(class.clone(), id.clone())) {
                    o.deleted = true;
                    tombstones.push(Tombstone {
                        class: class.clone(),
                        object_id: id.clone(),
                    });
                }
            }
        }
        self.known_sources
            .extend(snapshots.iter().map(|s| (s.class.clone(), s.id.clone())));
        let run = ExtractionRun {
            sequence,
            date,
            counters,
            tombstones,
        };
        self.runs.push(run.clone());
        Ok(run)
    }

    /// Find the stored object `id` among instances of `class` (deep).
    fn locate(&self, wschema: &SchemaGraph, class: &str, id: &str) -> Option<(&str, &StoredObject)> {
        self.objects
            .iter()
            .filter(|(c, _)| wschema.is_a(c, class))
            .find_map(|(c, m)| m.get(id).map(|o| (c.as_str(), o)))
    }

    /// The state of object `id` in force at `t`, or `None` when `t`
    /// precedes its first state.
    pub fn state_at(
        &self,
        def: &WarehouseDef,
        class: &str,
        id: &str,
        t: Timestamp,
    ) -> Result<Option<&BTreeMap<String, Value>>> {
        def.require_class(class)?;
        let wschema = def.schema();
        let (stored_class, obj) =
            self.locate(&wschema, class, id)
                .ok_or_else(|| Error::UnknownObject {
                    class: class.to_string(),
                    id: id.to_string(),
                })?;
        if !def.is_class_historized(stored_class) {
            return Err(Error::NotHistorized(class.to_string()));
        }
        Ok(obj
            .states
            .as_deref()
            .unwrap_or_default()
            .iter()
            .find(|s| s.contains(t))
            .map(|s| &s.values))
    }

    /// Write a user-owned value. Refreshes never overwrite it.
    pub fn set_specific(
        &mut self,
        def: &WarehouseDef,
        class: &str,
        id: &str,
        attribute: &str,
        value: Value,
    ) -> Result<()> {
        let wschema = def.schema();
        let (stored_class, _) =
            self.locate(&wschema, class, id)
                .ok_or_else(|| Error::UnknownObject {
                    class: class.to_string(),
                    id: id.to_string(),
                })?;
        let stored_class = stored_class.to_string();
        let attr = wschema
            .find_attribute(&stored_class, attribute)
            .filter(|_| is_specific(attribute))
            .ok_or_else(|| Error::UnknownAttribute {
                class: class.to_string(),
                attribute: attribute.to_string(),
            })?;
        let value = value.normalized();
        if !value.conforms_to(&attr.ty) {
            return Err(Error::TypeMismatch {
                class: class.to_string(),
                object: id.to_string(),
                attribute: attribute.to_string(),
                expected: attr.ty.to_string(),
            });
        }
        self.objects
            .get_mut(&stored_class)
            .and_then(|m| m.get_mut(id))
            .expect("located above")
            .values
            .insert(attribute.to_string(), value);
        Ok(())
    }

    /// History export: one JSON line per generic-object state, then one per
    /// historized attribute entry, ordered by class, object and sequence.
    pub fn history_jsonl(&self) -> String {
        let mut out = String::new();
        for (class, id, o) in self.objects() {
            for s in o.states.as_deref().unwrap_or_default() {
                let rec = json!({
                    "class": class,
                    "object_id": id,
                    "state_id": s.state_id,
                    "values": values_json(&s.values),
                    "interval": {"start": s.start, "end": s.end},
                    "run": s.run,
                });
                out.push_str(&rec.to_string());
                out.push('\n');
            }
            for (attr, entries) in &o.attribute_history {
                for (i, e) in entries.iter().enumerate() {
                    let end = entries.get(i + 1).map(|n| n.extracted_at);
                    let rec = json!({
                        "class": class,
                        "object_id": id,
                        "attribute": attr,
                        "state_id": i + 1,
                        "values": {attr.as_str(): e.value.as_ref().map(Value::to_json)},
                        "interval": {"start": e.extracted_at, "end": end},
                        "run": e.run,
                    });
                    out.push_str(&rec.to_string());
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn run_log_jsonl(&self) -> String {
        self.runs
            .iter()
            .map(|r| serde_json::to_string(r).expect("runs serialize") + "\n")
            .collect()
    }

    /// Persist to a store directory: `state.json` holds the current index
    /// and history, `runs.jsonl` the run log.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{STATE_FILE}.tmp"));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(serde_json::to_string(self).expect("store serializes").as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, dir.join(STATE_FILE))?;
        let tmp = dir.join(format!("{RUN_LOG}.tmp"));
        fs::write(&tmp, self.run_log_jsonl())?;
        fs::rename(&tmp, dir.join(RUN_LOG))?;
        Ok(())
    }

    /// Open a store directory; a missing directory is an empty store.
    pub fn open(dir: &Path) -> Result<Self> {
        let state = dir.join(STATE_FILE);
        if !state.exists() {
            return Ok(Self::new());
        }
        let mut store: TemporalStore = serde_json::from_str(&fs::read_to_string(state)?)
            .map_err(|e| Error::parse("store state", e))?;
        let log = dir.join(RUN_LOG);
        if log.exists() {
            store.runs = parse_run_log(&fs::read_to_string(log)?)?;
        }
        Ok(store)
    }
}

pub fn parse_run_log(text: &str) -> Result<Vec<ExtractionRun>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::parse("run log", e)))
        .collect()
}

fn values_json(values: &BTreeMap<String, Value>) -> serde_json::Value {
    serde_json::Value::Object(
        values
            .iter()
            .map(|(k, v)| (k.clone(), v.to_json()))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{AttributeType, ClassDef};
    use chrono::NaiveDate;

    fn day(d: u32) -> Timestamp {
        Timestamp::from_date(NaiveDate::from_ymd_opt(2024, 1, d).unwrap())
    }

    fn setup() -> (SchemaGraph, WarehouseDef) {
        let s = SchemaGraph::new(
            vec![ClassDef::new("Praticiens")
                .with_attribute("specialite_prat", AttributeType::String)
                .with_attribute("ville", AttributeType::String)],
            vec![],
        )
        .unwrap();
        let mut w = WarehouseDef::new();
        w.project_class(&s, "Praticiens").unwrap();
        (s, w)
    }

    fn snap(id: &str, specialite: &str, at: Timestamp) -> ObjectSnapshot {
        ObjectSnapshot {
            id: id.into(),
            class: "Praticiens".into(),
            values: [
                ("specialite_prat".to_string(), Value::Str(specialite.into())),
                ("ville".to_string(), Value::Str("Albi".into())),
            ]
            .into(),
            links: BTreeMap::new(),
            extracted_at: at,
        }
    }

    #[test]
    fn attribute_history_appends_on_change_only() {
        let (s, mut w) = setup();
        w.mark_attribute_historized("Praticiens", "D_specialite_prat")
            .unwrap();
        let mut st = TemporalStore::new();
        st.run_refresh(&w, &s, &[snap("p1", "ORL", day(1))], day(1)).unwrap();
        st.run_refresh(&w, &s, &[snap("p1", "ORL", day(2))], day(2)).unwrap();
        let entries = |st: &TemporalStore| {
            st.object("Praticiens", "p1").unwrap().attribute_history["D_specialite_prat"].len()
        };
        assert_eq!(entries(&st), 1);
        st.run_refresh(&w, &s, &[snap("p1", "Cardio", day(3))], day(3)).unwrap();
        assert_eq!(entries(&st), 2);
    }

    #[test]
    fn class_history_intervals() {
        let (s, mut w) = setup();
        w.mark_class_historized("Praticiens").unwrap();
        let mut st = TemporalStore::new();
        st.run_refresh(&w, &s, &[snap("p1", "ORL", day(1))], day(1)).unwrap();
        st.run_refresh(&w, &s, &[snap("p1", "Cardio", day(5))], day(5)).unwrap();
        let g = st.generic_object("Praticiens", "p1").unwrap();
        assert_eq!(g.states.len(), 2);
        assert_eq!(g.states[0].end, Some(day(5)));
        assert_eq!(g.states[1].end, None);
        let at = |d| st.state_at(&w, "Praticiens", "p1", day(d)).unwrap().cloned();
        assert_eq!(at(3).unwrap()["D_specialite_prat"], Value::Str("ORL".into()));
        assert_eq!(at(5).unwrap()["D_specialite_prat"], Value::Str("Cardio".into()));
        let before = Timestamp::from_date(NaiveDate::from_ymd_opt(2023, 12, 31).unwrap());
        assert!(st.state_at(&w, "Praticiens", "p1", before).unwrap().is_none());
    }

    #[test]
    fn out_of_order_and_empty_runs() {
        let (s, w) = setup();
        let mut st = TemporalStore::new();
        let run = st.run_refresh(&w, &s, &[], day(2)).unwrap();
        assert_eq!(run.counters["Praticiens"], Counters::default());
        let err = st.run_refresh(&w, &s, &[], day(2)).unwrap_err();
        assert_eq!(err.kind(), "out-of-order-run");
    }

    #[test]
    fn deletion_leaves_a_tombstone_and_open_state() {
        let (s, mut w) = setup();
        w.mark_class_historized("Praticiens").unwrap();
        let mut st = TemporalStore::new();
        st.run_refresh(&w, &s, &[snap("p1", "ORL", day(1))], day(1)).unwrap();
        let run = st.run_refresh(&w, &s, &[], day(2)).unwrap();
        assert_eq!(run.tombstones.len(), 1);
        let g = st.generic_object("Praticiens", "p1").unwrap();
        assert_eq!(g.states.len(), 1);
        assert!(g.states[0].end.is_none());
    }

    #[test]
    fn specific_values_survive_refresh() {
        let (s, mut w) = setup();
        w.add_specific_attribute("Praticiens", "note", AttributeType::Integer, Some(Value::Int(0)))
            .unwrap();
        let mut st = TemporalStore::new();
        st.run_refresh(&w, &s, &[snap("p1", "ORL", day(1))], day(1)).unwrap();
        assert_eq!(st.object("Praticiens", "p1").unwrap().values["S_note"], Value::Int(0));
        st.set_specific(&w, "Praticiens", "p1", "S_note", Value::Int(7)).unwrap();
        st.run_refresh(&w, &s, &[snap("p1", "Cardio", day(2))], day(2)).unwrap();
        assert_eq!(st.object("Praticiens", "p1").unwrap().values["S_note"], Value::Int(7));
        let err = st.set_specific(&w, "Praticiens", "p1", "D_ville", Value::Int(1));
        assert_eq!(err.unwrap_err().kind(), "unknown-attribute");
    }

    #[test]
    fn environments_are_disjoint() {
        let mut h = Historization::default();
        let env = |n: &str, cs: &[&str]| Environment {
            name: n.into(),
            classes: cs.iter().map(|c| c.to_string()).collect(),
            links: BTreeSet::new(),
        };
        h.create_environment(env("e1", &["Actes", "Beneficiaires"]), &[]).unwrap();
        let err = h.create_environment(env("e2", &["Actes"]), &[]).unwrap_err();
        assert_eq!(err.kind(), "disjointness-violation");
        assert!(err.to_string().contains("'Actes'"));
        let link = Link::inheritance("l", "Praticiens", "Personnes");
        let err = h
            .create_environment(env("e3", &["Praticiens"]), &[link])
            .unwrap_err();
        assert_eq!(err.kind(), "endpoint-violation");
    }

    #[test]
    fn store_round_trips_through_directory() {
        let (s, mut w) = setup();
        w.mark_class_historized("Praticiens").unwrap();
        let mut st = TemporalStore::new();
        st.run_refresh(&w, &s, &[snap("p1", "ORL", day(1))], day(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        st.save(dir.path()).unwrap();
        let back = TemporalStore::open(dir.path()).unwrap();
        assert_eq!(back, st);
        assert_eq!(back.history_jsonl(), st.history_jsonl());
    }

    #[test]
    fn quantize_and_period() {
        let tm = TimeModel {
            granularity: Granularity::Hour,
            refresh_period: 6,
        };
        let t: Timestamp = "2024-01-01T13:45:10".parse().unwrap();
        assert_eq!(tm.quantize(t).to_string(), "2024-01-01T13:00:00");
        assert_eq!(tm.next_refresh(t).to_string(), "2024-01-01T19:00:00");
    }
}
