//! Class dependencies: which classes qualify as dimensions for a given
//! class.
//!
//! C1 depends directly on C2 when C2 is C1 itself, when an association
//! leads from C1 to C2 with at most one target, when an inheritance link
//! joins them in either direction, or when a composition joins them (from
//! a component up to its composite only if the composite end admits at
//! most one object). Dependencies compose transitively.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Step, StepKind};
use crate::schema::{LinkKind, SchemaGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    AssociationCard1,
    InheritanceUp,
    InheritanceDown,
    CompositionToComponent,
    CompositionToComposite,
}

/// One rule application along a link.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hop {
    pub link: String,
    pub rule: Rule,
    pub from: String,
    pub to: String,
}

impl Hop {
    /// The navigation step following this hop on instances.
    pub fn step(&self) -> Step {
        let kind = match self.rule {
            Rule::AssociationCard1 | Rule::CompositionToComponent => StepKind::Forward,
            Rule::CompositionToComposite => StepKind::Backward,
            Rule::InheritanceUp => StepKind::Up,
            Rule::InheritanceDown => StepKind::Down,
        };
        Step {
            link: self.link.clone(),
            kind,
            from: self.from.clone(),
            to: self.to.clone(),
            multi: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WitnessKind {
    Reflexive,
    AssociationCard1,
    Inheritance,
    Composition,
    TransitiveChain,
}

impl fmt::Display for WitnessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            WitnessKind::Reflexive => "reflexive",
            WitnessKind::AssociationCard1 => "association-card-1",
            WitnessKind::Inheritance => "inheritance",
            WitnessKind::Composition => "composition",
            WitnessKind::TransitiveChain => "transitive-chain",
        };
        f.write_str(s)
    }
}

/// `from ⇒ to`, with the rule applications deriving it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassDependency {
    pub from: String,
    pub to: String,
    pub witness: WitnessKind,
    /// Empty for the reflexive rule.
    pub chain: Vec<Hop>,
}

impl ClassDependency {
    fn new(from: &str, chain: Vec<Hop>) -> Self {
        let witness = match chain.as_slice() {
            [] => WitnessKind::Reflexive,
            [h] => match h.rule {
                Rule::AssociationCard1 => WitnessKind::AssociationCard1,
                Rule::InheritanceUp | Rule::InheritanceDown => WitnessKind::Inheritance,
                _ => WitnessKind::Composition,
            },
            _ => WitnessKind::TransitiveChain,
        };
        ClassDependency {
            from: from.to_string(),
            to: chain.last().map_or(from, |h| h.to.as_str()).to_string(),
            witness,
            chain,
        }
    }

    /// Re-derive the dependency from the schema, hop by hop.
    pub fn replay(&self, schema: &SchemaGraph) -> Result<()> {
        let mut at = self.from.as_str();
        schema.require_class(at)?;
        for h in &self.chain {
            if h.from != at {
                return Err(Error::ReplayMismatch(format!(
                    "hop over '{}' starts at '{}', chain is at '{at}'",
                    h.link, h.from
                )));
            }
            if !hops_from(schema, at).contains(h) {
                return Err(Error::ReplayMismatch(format!(
                    "no rule derives {} => {} over '{}'",
                    h.from, h.to, h.link
                )));
            }
            at = &h.to;
        }
        if at != self.to {
            return Err(Error::ReplayMismatch(format!(
                "chain ends at '{at}', not '{}'",
                self.to
            )));
        }
        Ok(())
    }
}

/// Single rule applications leaving `class`, in link order.
fn hops_from(schema: &SchemaGraph, class: &str) -> Vec<Hop> {
    let mut out = Vec::new();
    let mut push = |link: &str, rule, from: &str, to: &str| {
        out.push(Hop {
            link: link.to_string(),
            rule,
            from: from.to_string(),
            to: to.to_string(),
        })
    };
    for l in &schema.links {
        match l.kind {
            LinkKind::Association => {
                if l.source == class && l.target_multiplicity().is_single() {
                    push(&l.name, Rule::AssociationCard1, class, &l.target);
                }
            }
            LinkKind::Inheritance => {
                if l.source == class {
                    push(&l.name, Rule::InheritanceUp, class, &l.target);
                }
                if l.target == class {
                    push(&l.name, Rule::InheritanceDown, class, &l.source);
                }
            }
            LinkKind::Composition => {
                if l.source == class {
                    push(&l.name, Rule::CompositionToComponent, class, &l.target);
                }
                if l.target == class && l.source_multiplicity().is_single() {
                    push(&l.name, Rule::CompositionToComposite, class, &l.source);
                }
            }
        }
    }
    out
}

/// Classes `class` depends on by one rule, itself included.
pub fn direct_dependencies(schema: &SchemaGraph, class: &str) -> Result<Vec<ClassDependency>> {
    schema.require_class(class)?;
    let mut out = vec![ClassDependency::new(class, Vec::new())];
    for h in hops_from(schema, class) {
        if !out.iter().any(|d| d.to == h.to) {
            out.push(ClassDependency::new(class, vec![h]));
        }
    }
    Ok(out)
}

/// The transitive closure of [`direct_dependencies`], each class reached
/// by a shortest witness chain (first found in link order).
pub fn transitive_dependencies(schema: &SchemaGraph, class: &str) -> Result<Vec<ClassDependency>> {
    schema.require_class(class)?;
    let mut chains: BTreeMap<String, Vec<Hop>> = BTreeMap::new();
    let mut order = vec![class.to_string()];
    chains.insert(class.to_string(), Vec::new());
    let mut queue = VecDeque::from([class.to_string()]);
    while let Some(c) = queue.pop_front() {
        for h in hops_from(schema, &c) {
            if chains.contains_key(&h.to) {
                continue;
            }
            let mut chain = chains[&c].clone();
            let to = h.to.clone();
            chain.push(h);
            chains.insert(to.clone(), chain);
            order.push(to.clone());
            queue.push_back(to);
        }
    }
    Ok(order
        .into_iter()
        .map(|c| ClassDependency::new(class, chains.remove(&c).unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Cardinality, ClassDef, Link, Multiplicity};

    fn card(source: Multiplicity, target: Multiplicity) -> Cardinality {
        Cardinality { source, target }
    }

    fn schema() -> SchemaGraph {
        SchemaGraph::new(
            ["Actes", "Praticiens", "Personnes", "Cabinets", "Beneficiaires", "Lignes", "Seul"]
                .into_iter()
                .map(ClassDef::new)
                .collect(),
            vec![
                Link::association("Prescrit_par", "Actes", "Praticiens", card(Multiplicity::MANY, Multiplicity::ONE)),
                Link::association("Exerce", "Praticiens", "Cabinets", card(Multiplicity::MANY, Multiplicity::ONE)),
                Link::association("Soigne", "Praticiens", "Beneficiaires", card(Multiplicity::MANY, Multiplicity::MANY)),
                Link::inheritance("isa", "Praticiens", "Personnes"),
                Link::composition("Contient", "Actes", "Lignes", card(Multiplicity::ONE, Multiplicity::MANY)),
            ],
        )
        .unwrap()
    }

    fn targets(ds: &[ClassDependency]) -> Vec<&str> {
        ds.iter().map(|d| d.to.as_str()).collect()
    }

    #[test]
    fn direct_rules() {
        let s = schema();
        let d = direct_dependencies(&s, "Actes").unwrap();
        assert_eq!(targets(&d), vec!["Actes", "Praticiens", "Lignes"]);
        assert_eq!(d[1].witness, WitnessKind::AssociationCard1);
        let d = direct_dependencies(&s, "Praticiens").unwrap();
        assert_eq!(targets(&d), vec!["Praticiens", "Cabinets", "Personnes"]);
        let d = direct_dependencies(&s, "Lignes").unwrap();
        assert_eq!(targets(&d), vec!["Lignes", "Actes"]);
        assert_eq!(targets(&direct_dependencies(&s, "Seul").unwrap()), vec!["Seul"]);
    }

    #[test]
    fn cabinets_depend_on_actes_transitively() {
        let s = schema();
        let d = transitive_dependencies(&s, "Actes").unwrap();
        let cab = d.iter().find(|d| d.to == "Cabinets").unwrap();
        assert_eq!(cab.witness, WitnessKind::TransitiveChain);
        let links: Vec<&str> = cab.chain.iter().map(|h| h.link.as_str()).collect();
        assert_eq!(links, vec!["Prescrit_par", "Exerce"]);
        for dep in &d {
            dep.replay(&s).unwrap();
        }
        assert!(!targets(&d).contains(&"Beneficiaires"));
    }

    #[test]
    fn replay_rejects_forged_chains() {
        let s = schema();
        let forged = ClassDependency::new(
            "Praticiens",
            vec![Hop {
                link: "Soigne".into(),
                rule: Rule::AssociationCard1,
                from: "Praticiens".into(),
                to: "Beneficiaires".into(),
            }],
        );
        assert_eq!(forged.replay(&s).unwrap_err().kind(), "replay-mismatch");
    }
}
