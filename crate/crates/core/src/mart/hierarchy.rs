//! Hierarchy graphs over dimension parameters.
//!
//! `A ⇒ B` is inferred when the functional dependency A → B holds exactly
//! on the sample and B → A does not. Implied edges are then pruned
//! (transitive reduction).

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::Value;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyGraph {
    pub nodes: Vec<String>,
    /// `(from, to)`: `from` determines `to` (finer level to coarser).
    pub edges: Vec<(String, String)>,
}

/// A relation sample: column names and rows (absent cells as `None`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sample {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<Value>>>,
}

impl Sample {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Does column `a` functionally determine column `b`?
    pub fn determines(&self, a: usize, b: usize) -> bool {
        let mut seen: HashMap<&Option<Value>, &Option<Value>> = HashMap::new();
        self.rows.iter().all(|r| match seen.get(&r[a]) {
            Some(v) => *v == &r[b],
            None => {
                seen.insert(&r[a], &r[b]);
                true
            }
        })
    }
}

impl HierarchyGraph {
    pub fn new(nodes: Vec<String>) -> Self {
        HierarchyGraph {
            nodes,
            edges: Vec::new(),
        }
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.iter().any(|(a, b)| a == from && b == to)
    }

    fn successors<'a>(&'a self, n: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |(a, _)| a == n)
            .map(|(_, b)| b.as_str())
    }

    /// A path `from ⇒ ... ⇒ to`, if any.
    pub fn path(&self, from: &str, to: &str) -> Option<Vec<String>> {
        let mut stack = vec![vec![from.to_string()]];
        let mut seen = BTreeSet::new();
        while let Some(p) = stack.pop() {
            let last = p.last().unwrap().clone();
            if last == to && p.len() > 1 {
                return Some(p);
            }
            if !seen.insert(last.clone()) {
                continue;
            }
            for s in self.successors(&last) {
                let mut q = p.clone();
                q.push(s.to_string());
                stack.push(q);
            }
        }
        None
    }

    /// Add `from ⇒ to`, refusing unknown nodes and cycles.
    pub fn add_edge(&mut self, from: &str, to: &str) -> Result<()> {
        for n in [from, to] {
            if !self.nodes.iter().any(|x| x == n) {
                return Err(Error::UnknownAttribute {
                    class: "hierarchy".into(),
                    attribute: n.to_string(),
                });
            }
        }
        if from == to {
            return Err(Error::HierarchyCycle {
                path: vec![from.to_string(), to.to_string()],
            });
        }
        if let Some(mut back) = self.path(to, from) {
            back.push(to.to_string());
            return Err(Error::HierarchyCycle { path: back });
        }
        if !self.has_edge(from, to) {
            self.edges.push((from.to_string(), to.to_string()));
        }
        Ok(())
    }

    pub fn remove_edge(&mut self, from: &str, to: &str) -> Result<()> {
        let before = self.edges.len();
        self.edges.retain(|(a, b)| !(a == from && b == to));
        if self.edges.len() == before {
            return Err(Error::DependencyViolation {
                from: from.to_string(),
                to: to.to_string(),
                reason: "no such edge".into(),
            });
        }
        Ok(())
    }

    /// A cycle, if the graph has one.
    pub fn find_cycle(&self) -> Option<Vec<String>> {
        self.nodes.iter().find_map(|n| self.path(n, n))
    }

    /// Drop every edge implied by a longer path.
    pub fn reduce(&mut self) {
        let edges = self.edges.clone();
        self.edges = edges
            .iter()
            .filter(|(a, b)| {
                let without = HierarchyGraph {
                    nodes: self.nodes.clone(),
                    edges: edges
                        .iter()
                        .filter(|e| !(e.0 == *a && e.1 == *b))
                        .cloned()
                        .collect(),
                };
                without.path(a, b).is_none()
            })
            .cloned()
            .collect();
    }

    /// Check that `from ⇒ to` is a hierarchical dependency on `sample`.
    pub fn check_edge(sample: &Sample, from: &str, to: &str) -> Result<()> {
        let col = |n: &str| {
            sample.column(n).ok_or_else(|| Error::UnknownAttribute {
                class: "sample".into(),
                attribute: n.to_string(),
            })
        };
        let (a, b) = (col(from)?, col(to)?);
        let violation = |reason: &str| Error::DependencyViolation {
            from: from.to_string(),
            to: to.to_string(),
            reason: reason.to_string(),
        };
        if !sample.determines(a, b) {
            return Err(violation("some value maps to several values"));
        }
        if sample.determines(b, a) {
            return Err(violation("the inverse dependency also holds"));
        }
        Ok(())
    }
}

/// Infer the reduced hierarchy over `sample`'s columns.
pub fn infer_hierarchy(sample: &Sample) -> Result<HierarchyGraph> {
    if sample.rows.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = sample.columns.len();
    let mut fd = vec![vec![false; n]; n];
    for (i, row) in fd.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = i != j && sample.determines(i, j);
        }
    }
    let mut g = HierarchyGraph::new(sample.columns.clone());
    for i in 0..n {
        for j in 0..n {
            if fd[i][j] && !fd[j][i] {
                g.edges
                    .push((sample.columns[i].clone(), sample.columns[j].clone()));
            }
        }
    }
    g.reduce();
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &str) -> Option<Value> {
        Some(Value::Str(v.into()))
    }

    fn i(v: i64) -> Option<Value> {
        Some(Value::Int(v))
    }

    #[test]
    fn ville_determines_departement() {
        let sample = Sample {
            columns: vec!["Ville".into(), "Département".into()],
            rows: vec![
                vec![s("Toulouse"), i(31)],
                vec![s("Blagnac"), i(31)],
                vec![s("Albi"), i(81)],
            ],
        };
        let g = infer_hierarchy(&sample).unwrap();
        assert_eq!(g.edges, vec![("Ville".to_string(), "Département".to_string())]);
    }

    #[test]
    fn bijection_gives_no_edge() {
        let sample = Sample {
            columns: vec!["code".into(), "nom".into()],
            rows: vec![vec![i(1), s("a")], vec![i(2), s("b")]],
        };
        assert!(infer_hierarchy(&sample).unwrap().edges.is_empty());
    }

    #[test]
    fn chains_are_reduced() {
        let sample = Sample {
            columns: vec!["a".into(), "b".into(), "c".into()],
            rows: vec![
                vec![i(1), i(1), i(1)],
                vec![i(2), i(1), i(1)],
                vec![i(3), i(2), i(1)],
                vec![i(4), i(3), i(2)],
            ],
        };
        let g = infer_hierarchy(&sample).unwrap();
        assert_eq!(
            g.edges,
            vec![("a".into(), "b".into()), ("b".into(), "c".into())]
        );
    }

    #[test]
    fn manual_edges_stay_acyclic() {
        let mut g = HierarchyGraph::new(vec!["a".into(), "b".into(), "c".into()]);
        g.add_edge("a", "b").unwrap();
        g.add_edge("b", "c").unwrap();
        let err = g.add_edge("c", "a").unwrap_err();
        assert_eq!(
            err,
            Error::HierarchyCycle {
                path: vec!["a".into(), "b".into(), "c".into(), "a".into()]
            }
        );
        g.remove_edge("a", "b").unwrap();
        g.add_edge("c", "a").unwrap();
        assert!(g.find_cycle().is_none());
    }

    #[test]
    fn empty_sample_is_an_error() {
        let sample = Sample {
            columns: vec!["a".into()],
            rows: vec![],
        };
        assert_eq!(infer_hierarchy(&sample).unwrap_err(), Error::EmptySample);
    }
}
