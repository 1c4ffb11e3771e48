use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/health");

struct Workdir {
    dir: tempfile::TempDir,
}

impl Workdir {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        for f in ["source.json", "run1.json", "run2.json", "run3.json", "run4.json", "run5.json"] {
            fs::copy(Path::new(FIXTURES).join(f), dir.path().join(f)).unwrap();
        }
        Workdir { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_dwctl"))
            .current_dir(self.dir.path())
            .env("DWCTL_PROJECT", self.path("assurance.dwproj"))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn json(&self, args: &[&str]) -> Value {
        serde_json::from_str(&self.ok(args)).unwrap()
    }

    /// The failure diagnostic printed on stderr.
    fn fails(&self, args: &[&str]) -> Value {
        let out = self.run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?} should fail");
        serde_json::from_slice(&out.stderr).unwrap()
    }

    fn warehouse(&self) {
        self.ok(&["init", "--source", "source.json"]);
        for c in ["Actes", "Praticiens", "Beneficiaires", "Cabinets", "Pharmacies"] {
            self.ok(&["project-class", c]);
        }
        self.ok(&["historize", "class", "Cabinets"]);
        self.ok(&["historize", "attr", "Praticiens", "D_specialite_prat"]);
    }

    fn refresh(&self, runs: std::ops::RangeInclusive<u32>) {
        for r in runs {
            self.ok(&["refresh", "--input", &format!("run{r}.json"), "--date", &format!("2024-01-0{r}")]);
        }
    }
}

#[test]
fn validate_fixture_schema() {
    let w = Workdir::new();
    let v = w.json(&["validate", "--schema", "source.json"]);
    assert_eq!(v["valid"], true);
    fs::write(w.path("bad.json"), r#"{"classes":[],"links":[{"name":"L","kind":"inheritance","source":"A","target":"B"}]}"#)
        .unwrap();
    let d = w.fails(&["validate", "--schema", "bad.json"]);
    assert_eq!(d["kind"], "dangling-endpoint");
}

#[test]
fn project_is_found_through_the_environment_or_flag() {
    let w = Workdir::new();
    w.ok(&["init", "--source", "source.json"]);
    let v = w.json(&["project-class", "Praticiens"]);
    assert_eq!(v["version"], 1);
    let other = w.path("other.dwproj");
    let out = Command::new(env!("CARGO_BIN_EXE_dwctl"))
        .current_dir(w.dir.path())
        .env_remove("DWCTL_PROJECT")
        .args(["--project", other.to_str().unwrap(), "init", "--source", "source.json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_dwctl"))
        .env_remove("DWCTL_PROJECT")
        .args(["project-class", "Actes"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let d: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(d["kind"], "parse-error");
    assert_eq!(w.json(&["validate"])["version"], 1);
}

#[test]
fn out_of_order_refresh_exits_with_diagnostic() {
    let w = Workdir::new();
    w.warehouse();
    w.refresh(1..=2);
    let d = w.fails(&["refresh", "--input", "run1.json", "--date", "2024-01-01"]);
    assert_eq!(d["kind"], "out-of-order-run");
    assert_eq!(w.ok(&["runs"]).lines().count(), 2);
}

#[test]
fn emission_is_byte_identical_across_invocations() {
    let w = Workdir::new();
    w.warehouse();
    for args in [
        ["emit", "structure", "--target", "neutral-plan"],
        ["emit", "structure", "--target", "sql"],
        ["emit", "refresh", "--target", "sql"],
    ] {
        let a = w.ok(&args);
        assert!(!a.is_empty());
        assert_eq!(w.ok(&args), a);
    }
    let d = w.fails(&["emit", "structure", "--target", "cobol"]);
    assert_eq!(d["kind"], "parse-error");
}

#[test]
fn stale_expected_version_is_refused() {
    let w = Workdir::new();
    w.warehouse();
    let d = w.fails(&["--expect-version", "1", "project-class", "Actes"]);
    assert_eq!(d["kind"], "stale-version");
}

#[test]
fn environments_and_attributes() {
    let w = Workdir::new();
    w.warehouse();
    w.ok(&["historize", "env", "Soins", "--classes", "Actes,Beneficiaires", "--links", "Concerne"]);
    let d = w.fails(&["historize", "env", "Autre", "--classes", "Beneficiaires"]);
    assert_eq!(d["kind"], "disjointness-violation");
    w.ok(&["add-attribute", "Personnes", "poids", "--type", "decimal"]);
    w.ok(&["add-attribute", "Actes", "Cout", "--formula", r#""Actes.Quantité" * "Actes.Prix Unitaire""#]);
    let d = w.fails(&["add-attribute", "Actes", "X", "--formula", r#""Actes.Nope" * 2"#]);
    assert_eq!(d["kind"], "validation-failed");
    w.ok(&["set-selection", "Cabinets", r#""Cabinets.Ville" = 'Toulouse'"#]);
    w.ok(&["apply-op", r#"{"op":"delete_environment","name":"Soins"}"#]);
}

#[test]
fn extract_prints_records_without_storing() {
    let w = Workdir::new();
    w.warehouse();
    let out = w.ok(&["extract", "--input", "run1.json", "--date", "2024-01-01"]);
    let first: Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert!(first["class"].is_string());
    assert_eq!(w.ok(&["runs"]), "");
}

#[test]
fn mart_commands_build_and_export_a_star() {
    let w = Workdir::new();
    w.warehouse();
    w.refresh(1..=5);
    let m = ["--mart", "Assurance"];
    let detection = w.json(&["mart-detect-fact", m[0], m[1]]);
    assert_eq!(detection["recommended"][0], "Actes");
    w.ok(&["mart-detect-fact", m[0], m[1], "--flag", "Actes"]);
    w.ok(&["mart-project-fact", m[0], m[1], "Actes", "Prestations"]);
    w.ok(&["mart-project-dim", m[0], m[1], "--attribute", "Actes.Date_exec", "--name", "Execution"]);
    w.ok(&["mart-project-dim", m[0], m[1], "--class", "Cabinets"]);
    let inferred = w.json(&["mart-infer-hierarchy", m[0], m[1], "Cabinets"]);
    assert!(inferred["edges"]
        .as_array()
        .unwrap()
        .contains(&serde_json::json!(["Ville", "Departement"])));
    w.ok(&["mart-infer-hierarchy", m[0], m[1], "Cabinets", "--apply"]);
    w.ok(&["mart-specialize", m[0], m[1], "Cabinets", "Pharmacie", "--class", "Pharmacies", "--parameters", "Num_officine"]);
    w.ok(&[
        "mart-add-measure",
        m[0],
        m[1],
        "Montant_remb",
        r#""Actes.Quantité" * "Actes.Prix Unitaire" * "Actes.Taux Remb""#,
    ]);
    w.ok(&["mart-select", m[0], m[1], "Cabinets", r#""Cabinets.Ville" = 'Toulouse'"#]);
    let d = w.fails(&[
        "mart-apply-op",
        m[0],
        m[1],
        r#"{"op":"add_hierarchy_edge","dimension":"Cabinets","from":"Departement","to":"Ville"}"#,
    ]);
    assert_eq!(d["kind"], "hierarchy-cycle");

    let facts = w.ok(&["export", "mart", m[0], m[1]]);
    assert_eq!(facts.lines().count(), 9);
    let a2: Value = facts
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|r| r["id"] == "A2")
        .unwrap();
    assert_eq!(a2["measures"]["Montant_remb"], "23.387");
    let files = w.json(&["export", "mart", m[0], m[1], "--out", "star"]);
    assert!(files["files"].as_array().unwrap().len() >= 3);
    let ddl = w.ok(&["emit", "structure", m[0], m[1], "--target", "sql"]);
    assert!(ddl.contains("CREATE TABLE \"Prestations\""));

    let history = w.ok(&["export", "history"]);
    assert!(history.lines().any(|l| l.contains("\"Cabinets\"")));
    assert_eq!(w.json(&["validate"])["marts"], serde_json::json!(["Assurance"]));
}
