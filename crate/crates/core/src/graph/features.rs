//! Optional per-node attribute vectors.
//!
//! CSV blocks, each opened by a header row `type,id,f0,f1,...`; data rows
//! are `type,id,v0,v1,...`. Features are static per node: the first
//! definition wins and later conflicting ones are logged and ignored.

use std::collections::HashMap;
use std::io::Read;

use super::{NodeRef, NodeType, TypeRegistry};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureTable {
    widths: HashMap<NodeType, usize>,
    rows: HashMap<NodeRef, Vec<f64>>,
}

impl FeatureTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a vector; returns false (and keeps the old one) if the node
    /// already has one.
    pub fn insert(&mut self, node: NodeRef, values: Vec<f64>) -> Result<bool> {
        match self.widths.get(&node.ty) {
            Some(&w) if w != values.len() => {
                return Err(Error::Schema(format!(
                    "feature width {} for node {node} differs from type width {w}",
                    values.len()
                )))
            }
            _ => {}
        }
        self.widths.insert(node.ty, values.len());
        if self.rows.contains_key(&node) {
            return Ok(false);
        }
        self.rows.insert(node, values);
        Ok(true)
    }

    pub fn width(&self, ty: NodeType) -> Option<usize> {
        self.widths.get(&ty).copied()
    }

    pub fn get(&self, node: NodeRef) -> Option<&[f64]> {
        self.rows.get(&node).map(Vec::as_slice)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRef> {
        self.rows.keys()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn parse_features<R: Read>(reader: R, registry: &TypeRegistry) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut table = FeatureTable::new();
    let mut block_width: Option<usize> = None;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() < 2 {
            return Err(Error::Parse {
                line,
                msg: "expected at least `type,id`".into(),
            });
        }
        if &rec[0] == "type" && &rec[1] == "id" {
            block_width = Some(rec.len() - 2);
            continue;
        }
        let width = block_width.ok_or_else(|| Error::Parse {
            line,
            msg: "data row before any header row".into(),
        })?;
        if rec.len() - 2 != width {
            return Err(Error::Parse {
                line,
                msg: format!("expected {width} feature values, found {}", rec.len() - 2),
            });
        }
        let ty = registry
            .node_type(&rec[0])
            .ok_or_else(|| Error::Schema(format!("unknown node type `{}` in feature file", &rec[0])))?;
        let id: u32 = rec[1].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("node id `{}` is not a non-negative integer", &rec[1]),
        })?;
        let values = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line,
                        msg: format!("feature value `{s}` is not a finite number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        let node = NodeRef::new(ty, id);
        if !table.insert(node, values)? {
            log::warn!("line {line}: duplicate features for node {node}; keeping the first");
        }
    }
    Ok(table)
}
