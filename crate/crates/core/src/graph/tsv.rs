//! Snapshot edge-list TSV: `t  src_type  src_id  rel_type  dst_type  dst_id`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{parse_features, NodeRef, Snapshot, TemporalGraph, TypeRegistry, TypedEdge};
use crate::error::{Error, Result};

/// Reads a snapshot file and, when given, a feature file.
pub fn read_snapshots(path: &Path, feature_path: Option<&Path>) -> Result<TemporalGraph> {
    let graph = parse_snapshots(BufReader::new(File::open(path)?))?;
    match feature_path {
        None => Ok(graph),
        Some(fp) => {
            let mut registry = graph.registry().clone();
            registry.freeze();
            let table = parse_features(BufReader::new(File::open(fp)?), &registry)?;
            Ok(graph.with_features(table))
        }
    }
}

/// Parses snapshot TSV with a fresh registry.
pub fn parse_snapshots<R: Read>(reader: R) -> Result<TemporalGraph> {
    parse_with_registry(reader, TypeRegistry::new())
}

/// Parses snapshot TSV against an existing registry; a frozen registry
/// rejects unknown type names.
pub fn parse_with_registry<R: Read>(reader: R, mut registry: TypeRegistry) -> Result<TemporalGraph> {
    let mut by_t: BTreeMap<usize, BTreeSet<TypedEdge>> = BTreeMap::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let int = |s: &str, what: &str| -> Result<u64> {
            s.trim().parse::<u64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("{what} `{s}` is not a non-negative integer"),
            })
        };
        let t = int(fields[0], "snapshot index")? as usize;
        let id = |s: &str| -> Result<u32> {
            let v = int(s, "node id")?;
            u32::try_from(v).map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("node id {v} out of range"),
            })
        };
        let src_ty = registry.intern_node_type(fields[1])?;
        let src = NodeRef::new(src_ty, id(fields[2])?);
        let dst_ty = registry.intern_node_type(fields[4])?;
        let dst = NodeRef::new(dst_ty, id(fields[5])?);
        let (rel, swapped) = registry.intern_relation(fields[3], src_ty, dst_ty)?;
        let (mut a, mut b) = if swapped { (dst, src) } else { (src, dst) };
        // same-type relations have no preferred orientation
        if a.ty == b.ty && b < a {
            std::mem::swap(&mut a, &mut b);
        }
        by_t.entry(t).or_default().insert(TypedEdge { src: a, rel, dst: b });
    }

    let mut snapshots = Vec::with_capacity(by_t.len());
    for (expected, (t, edges)) in by_t.into_iter().enumerate() {
        if t != expected {
            return Err(Error::Schema(format!(
                "snapshot indices are not contiguous: missing t={expected} (next present is t={t})"
            )));
        }
        snapshots.push(Snapshot::from_edges(t, edges));
    }
    TemporalGraph::new(registry, snapshots)
}

/// Writes every edge of every snapshot as canonical TSV lines.
pub fn write_snapshots<W: Write>(graph: &TemporalGraph, mut out: W) -> Result<()> {
    let reg = graph.registry();
    for s in graph.snapshots() {
        for e in s.edges() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                s.t(),
                reg.node_type_name(e.src.ty),
                e.src.id,
                reg.relation_schema(e.rel).name,
                reg.node_type_name(e.dst.ty),
                e.dst.id
            )?;
        }
    }
    Ok(())
}
