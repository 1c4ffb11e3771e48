//! Health-insurance fixture shared by the integration tests.
#![allow(dead_code)]

pub mod random;

use chrono::NaiveDate;

use dw_core::mart::{DimensionSource, MartDef, MartOp};
use dw_core::schema::{load_instances, load_schema, AttributeType, ObjectSnapshot, SchemaGraph};
use dw_core::temporal::TemporalStore;
use dw_core::warehouse::{WarehouseDef, WarehouseOp};
use dw_core::Timestamp;

pub const SOURCE: &str = include_str!("../../../../fixtures/health/source.json");
pub const RUNS: [&str; 5] = [
    include_str!("../../../../fixtures/health/run1.json"),
    include_str!("../../../../fixtures/health/run2.json"),
    include_str!("../../../../fixtures/health/run3.json"),
    include_str!("../../../../fixtures/health/run4.json"),
    include_str!("../../../../fixtures/health/run5.json"),
];

/// Runs (1-based) in which each historized object differs from its
/// previous snapshot, first appearance excluded.
pub const CHANGE_LOG: [(&str, &str, &[u32]); 9] = [
    ("Beneficiaires", "B1", &[3]),
    ("Beneficiaires", "B2", &[2, 5]),
    ("Beneficiaires", "B3", &[]),
    ("Beneficiaires", "B4", &[]),
    ("Cabinets", "C1", &[4]),
    ("Cabinets", "C2", &[]),
    ("Cabinets", "C3", &[2]),
    ("Cabinets", "C4", &[]),
    ("Pharmacies", "F1", &[5]),
];

/// Run in which each historized object first appears.
pub fn first_run(id: &str) -> u32 {
    if id == "B4" {
        3
    } else {
        1
    }
}

pub fn source() -> SchemaGraph {
    load_schema(SOURCE).expect("fixture schema loads")
}

pub fn run_date(run: u32) -> Timestamp {
    Timestamp::from_date(NaiveDate::from_ymd_opt(2024, 1, run).unwrap())
}

pub fn snapshots(source: &SchemaGraph, store: &TemporalStore, run: u32) -> Vec<ObjectSnapshot> {
    load_instances(
        source,
        RUNS[run as usize - 1],
        run_date(run),
        store.known_sources(),
    )
    .expect("fixture instances load")
}

pub fn warehouse_ops() -> Vec<WarehouseOp> {
    let project = |c: &str| WarehouseOp::ProjectClass { class: c.into() };
    vec![
        project("Actes"),
        project("Praticiens"),
        project("Beneficiaires"),
        project("Cabinets"),
        project("Pharmacies"),
        WarehouseOp::AddSpecificAttribute {
            class: "Personnes".into(),
            name: "poids".into(),
            ty: AttributeType::Decimal,
            default: None,
        },
        WarehouseOp::AddSpecificAttribute {
            class: "Personnes".into(),
            name: "taille".into(),
            ty: AttributeType::Integer,
            default: Some(serde_json::json!(170)),
        },
        WarehouseOp::AddCalculatedAttribute {
            class: "Actes".into(),
            name: "Cout".into(),
            formula: r#""Actes.Quantité" * "Actes.Prix Unitaire""#.into(),
        },
        WarehouseOp::MarkAttributeHistorized {
            class: "Praticiens".into(),
            attribute: "D_specialite_prat".into(),
        },
        WarehouseOp::MarkClassHistorized {
            class: "Beneficiaires".into(),
        },
        WarehouseOp::MarkClassHistorized {
            class: "Cabinets".into(),
        },
    ]
}

pub fn warehouse(source: &SchemaGraph) -> WarehouseDef {
    let mut w = WarehouseDef::new();
    for op in warehouse_ops() {
        w.apply(source, &op).unwrap_or_else(|e| panic!("{op:?}: {e}"));
    }
    w
}

/// Store after the first `runs` refreshes.
pub fn refreshed(source: &SchemaGraph, def: &WarehouseDef, runs: u32) -> TemporalStore {
    let mut store = TemporalStore::new();
    for r in 1..=runs {
        let snaps = snapshots(source, &store, r);
        store
            .run_refresh(def, source, &snaps, run_date(r))
            .unwrap_or_else(|e| panic!("run {r}: {e}"));
    }
    store
}

pub const MONTANT_REMB: &str =
    r#"("Actes.Quantité" * "Actes.Prix Unitaire") * "Actes.Taux Remb""#;

/// Operations building the Prestations mart, hierarchy edges given
/// explicitly.
pub fn mart_ops() -> Vec<MartOp> {
    vec![
        MartOp::FlagRepresentative {
            class: "Actes".into(),
        },
        MartOp::ProjectFact {
            class: "Actes".into(),
            name: "Prestations".into(),
        },
        MartOp::ProjectDimension {
            source: DimensionSource::Attribute {
                class: "Actes".into(),
                attribute: "Date_exec".into(),
            },
            name: Some("Execution".into()),
        },
        MartOp::ProjectDimension {
            source: DimensionSource::Class {
                class: "Cabinets".into(),
            },
            name: None,
        },
        MartOp::ProjectDimension {
            source: DimensionSource::Class {
                class: "Praticiens".into(),
            },
            name: None,
        },
        MartOp::SetHierarchy {
            dimension: "Cabinets".into(),
            edges: vec![("Ville".into(), "Departement".into())],
        },
        MartOp::SpecializeDimension {
            parent: "Cabinets".into(),
            name: "Pharmacie".into(),
            class: Some("Pharmacies".into()),
            parameters: vec!["Num_officine".into()],
            membership: None,
        },
        MartOp::AddMeasure {
            name: "Montant_remb".into(),
            formula: MONTANT_REMB.into(),
        },
        MartOp::SelectObjects {
            target: "Cabinets".into(),
            predicate: r#""Cabinets.Ville" = 'Toulouse' and "Cabinets.date_creation" > 1975-01-01"#
                .into(),
        },
    ]
}

pub fn mart(w: &WarehouseDef) -> MartDef {
    let mut m = MartDef::new("Assurance");
    for op in mart_ops() {
        m.apply(w, &op).unwrap_or_else(|e| panic!("{op:?}: {e}"));
    }
    m
}
