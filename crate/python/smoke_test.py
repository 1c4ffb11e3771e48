"""Smoke test for the dwpy extension over the health-insurance fixture.

Build and install first:  pip install --no-build-isolation ./crates/dwpy
"""

import json
import pathlib
import shutil
import sys
import tempfile

import dwpy

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures" / "health"


def main() -> int:
    work = pathlib.Path(tempfile.mkdtemp())
    try:
        for f in FIXTURES.glob("*.json"):
            shutil.copy(f, work / f.name)

        classes = dwpy.validate_schema((work / "source.json").read_text())
        assert "Actes" in classes and "Cabinets" in classes, classes

        ws = dwpy.Workspace.create(str(work / "assurance.dwproj"), "source.json")
        assert ws.version == 0
        for c in ["Actes", "Praticiens", "Beneficiaires", "Cabinets", "Pharmacies"]:
            ws.apply_warehouse({"op": "project_class", "class": c}, ws.version)
        ws.apply_warehouse({"op": "mark_class_historized", "class": "Cabinets"})
        names = [c["name"] for c in ws.warehouse["classes"]]
        assert "Personnes" in names, names

        try:
            ws.apply_warehouse({"op": "project_class", "class": "Actes"}, 0)
        except dwpy.EngineError as e:
            assert e.args[0] == "stale-version", e.args
        else:
            raise AssertionError("stale version accepted")

        for run in range(1, 6):
            doc = (work / f"run{run}.json").read_text()
            ws.refresh(doc, f"2024-01-0{run}")
        assert len(ws.runs()) == 5
        assert ws.detect_representatives()["recommended"][0] == "Actes"

        deps = {d["class"]: d for d in ws.dependencies("Actes")}
        assert deps["Praticiens"]["links"] == ["Prescrit_par"]
        assert deps["Cabinets"]["witness"] == "transitive-chain"

        mart = "Assurance"
        for op in [
            {"op": "flag_representative", "class": "Actes"},
            {"op": "project_fact", "class": "Actes", "name": "Prestations"},
            {"op": "project_dimension", "source": {"from": "class", "class": "Cabinets"}},
            {"op": "add_measure", "name": "Montant_remb",
             "formula": '"Actes.Quantité" * "Actes.Prix Unitaire" * "Actes.Taux Remb"'},
        ]:
            ws.apply_mart(mart, op)
        assert ("Ville", "Departement") in ws.infer_hierarchy(mart, "Cabinets")
        facts = [json.loads(l) for l in ws.facts_jsonl(mart).splitlines()]
        a2 = next(f for f in facts if f["id"] == "A2")
        assert a2["measures"]["Montant_remb"] == "23.387", a2

        value = ws.evaluate('"Actes.Quantité" * "Actes.Prix Unitaire"', "Actes",
                            {"Actes.Quantité": 2, "Actes.Prix Unitaire": "17.99"})
        assert value == "35.98", value
        assert dwpy.canonical_formula("1+2*3") == "1 + (2 * 3)"

        sql = ws.emit("structure", "sql")
        assert sql == ws.emit("structure", "sql")
        assert 'CREATE TABLE "Cabinets_history"' in sql
        assert "Cabinets" in ws.history_jsonl()

        again = dwpy.Workspace(str(work / "assurance.dwproj"))
        assert again.version == ws.version and again.marts == [mart]
    finally:
        shutil.rmtree(work)
    print("dwpy smoke test: OK")
    return 0


if __name__ == "__main__":
    sys.exit(main())
