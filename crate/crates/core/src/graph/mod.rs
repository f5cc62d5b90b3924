//! Typed temporal graph: node and relation types, snapshots, and
//! neighbourhood queries.

mod features;
mod tsv;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{parse_features, FeatureTable};
pub use tsv::{parse_snapshots, read_snapshots, write_snapshots};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeType(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelType(pub u16);

/// A node identity: its type plus an id unique within that type.
///
/// Identity is global across snapshots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub ty: NodeType,
    pub id: u32,
}

impl NodeRef {
    pub fn new(ty: NodeType, id: u32) -> Self {
        Self { ty, id }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ty.0, self.id)
    }
}

/// An undirected typed edge stored in its canonical orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypedEdge {
    pub src: NodeRef,
    pub rel: RelType,
    pub dst: NodeRef,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSchema {
    pub name: String,
    pub src: NodeType,
    pub dst: NodeType,
}

/// Names of node and relation types.
///
/// Each relation is bound to exactly one ordered pair of endpoint types. Once
/// frozen, unknown names are rejected instead of registered.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TypeRegistry {
    node_types: Vec<String>,
    relations: Vec<RelationSchema>,
    #[serde(default)]
    frozen: bool,
}

impl PartialEq for TypeRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.node_types == other.node_types && self.relations == other.relations
    }
}

impl TypeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn node_type_count(&self) -> usize {
        self.node_types.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn node_types(&self) -> impl Iterator<Item = (NodeType, &str)> {
        self.node_types
            .iter()
            .enumerate()
            .map(|(i, n)| (NodeType(i as u16), n.as_str()))
    }

    pub fn relations(&self) -> impl Iterator<Item = (RelType, &RelationSchema)> {
        self.relations.iter().enumerate().map(|(i, r)| (RelType(i as u16), r))
    }

    pub fn node_type(&self, name: &str) -> Option<NodeType> {
        self.node_types
            .iter()
            .position(|n| n == name)
            .map(|i| NodeType(i as u16))
    }

    pub fn relation(&self, name: &str) -> Option<RelType> {
        self.relations
            .iter()
            .position(|r| r.name == name)
            .map(|i| RelType(i as u16))
    }

    pub fn node_type_name(&self, ty: NodeType) -> &str {
        &self.node_types[ty.0 as usize]
    }

    pub fn relation_schema(&self, rel: RelType) -> &RelationSchema {
        &self.relations[rel.0 as usize]
    }

    pub fn intern_node_type(&mut self, name: &str) -> Result<NodeType> {
        if let Some(ty) = self.node_type(name) {
            return Ok(ty);
        }
        if self.frozen {
            return Err(Error::Schema(format!("unknown node type `{name}`")));
        }
        if self.node_types.len() >= u16::MAX as usize {
            return Err(Error::Schema("too many node types".into()));
        }
        self.node_types.push(name.to_string());
        Ok(NodeType(self.node_types.len() as u16 - 1))
    }

    /// Registers (or looks up) a relation between two endpoint types.
    ///
    /// Returns the relation and whether the given endpoints are reversed
    /// with respect to the registered orientation.
    pub fn intern_relation(&mut self, name: &str, src: NodeType, dst: NodeType) -> Result<(RelType, bool)> {
        if let Some(rel) = self.relation(name) {
            let schema = self.relation_schema(rel);
            if schema.src == src && schema.dst == dst {
                return Ok((rel, false));
            }
            if schema.src == dst && schema.dst == src {
                return Ok((rel, true));
            }
            return Err(Error::Schema(format!(
                "relation `{name}` is bound to ({}, {}) but used with ({}, {})",
                self.node_type_name(schema.src),
                self.node_type_name(schema.dst),
                self.node_type_name(src),
                self.node_type_name(dst),
            )));
        }
        if self.frozen {
            return Err(Error::Schema(format!("unknown relation type `{name}`")));
        }
        self.relations.push(RelationSchema {
            name: name.to_string(),
            src,
            dst,
        });
        Ok((RelType(self.relations.len() as u16 - 1), false))
    }

    /// Whether some relation joins the two types (in either orientation).
    pub fn compatible(&self, a: NodeType, b: NodeType) -> bool {
        self.relations
            .iter()
            .any(|r| (r.src == a && r.dst == b) || (r.src == b && r.dst == a))
    }
}

/// One graph snapshot: node set, canonical edge set and adjacency.
#[derive(Clone, Debug)]
pub struct Snapshot {
    t: usize,
    nodes: Vec<NodeRef>,
    index: HashMap<NodeRef, usize>,
    edges: Vec<TypedEdge>,
    adjacency: Vec<Vec<(usize, RelType)>>,
}

impl Snapshot {
    /// Builds a snapshot whose node set is exactly the edge endpoints.
    pub fn from_edges(t: usize, edges: impl IntoIterator<Item = TypedEdge>) -> Self {
        let edges: Vec<TypedEdge> = edges.into_iter().collect();
        let nodes = edges.iter().flat_map(|e| [e.src, e.dst]).collect::<Vec<_>>();
        Self::build(t, nodes, edges)
    }

    /// Builds a snapshot from an explicit node set, which may include
    /// isolated nodes. Every edge endpoint must be listed.
    pub fn from_parts(
        t: usize,
        nodes: impl IntoIterator<Item = NodeRef>,
        edges: impl IntoIterator<Item = TypedEdge>,
    ) -> Result<Self> {
        let nodes: Vec<NodeRef> = nodes.into_iter().collect();
        let edges: Vec<TypedEdge> = edges.into_iter().collect();
        let known: std::collections::HashSet<NodeRef> = nodes.iter().copied().collect();
        if let Some(e) = edges
            .iter()
            .find(|e| !known.contains(&e.src) || !known.contains(&e.dst))
        {
            return Err(Error::Schema(format!(
                "edge {} - {} has an endpoint outside the node set",
                e.src, e.dst
            )));
        }
        Ok(Self::build(t, nodes, edges))
    }

    fn build(t: usize, mut nodes: Vec<NodeRef>, mut edges: Vec<TypedEdge>) -> Self {
        nodes.sort_unstable();
        nodes.dedup();
        edges.sort_unstable();
        edges.dedup();
        let index: HashMap<NodeRef, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for e in &edges {
            let a = index[&e.src];
            let b = index[&e.dst];
            adjacency[a].push((b, e.rel));
            if a != b {
                adjacency[b].push((a, e.rel));
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            t,
            nodes,
            index,
            edges,
            adjacency,
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Sorted node set.
    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    /// Sorted, deduplicated edges in canonical orientation.
    pub fn edges(&self) -> &[TypedEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, v: NodeRef) -> bool {
        self.index.contains_key(&v)
    }

    pub fn index_of(&self, v: NodeRef) -> Option<usize> {
        self.index.get(&v).copied()
    }

    /// `(neighbour index, relation)` pairs of the node at `idx`.
    pub fn adjacency(&self, idx: usize) -> &[(usize, RelType)] {
        &self.adjacency[idx]
    }

    /// Whether any edge joins `a` and `b`, ignoring orientation and type.
    pub fn has_edge_between(&self, a: NodeRef, b: NodeRef) -> bool {
        match (self.index_of(a), self.index_of(b)) {
            (Some(i), Some(j)) => {
                let list = &self.adjacency[i];
                let start = list.partition_point(|&(n, _)| n < j);
                list.get(start).is_some_and(|&(n, _)| n == j)
            }
            _ => false,
        }
    }

    /// Nodes adjacent to `v`, optionally only through relation `rel`.
    ///
    /// Sorted and deduplicated; contains `v` only when a self-loop exists.
    pub fn neighbors(&self, v: NodeRef, rel: Option<RelType>) -> Result<Vec<NodeRef>> {
        let idx = self.index_of(v).ok_or(Error::NotFound(v))?;
        let mut out: Vec<NodeRef> = self.adjacency[idx]
            .iter()
            .filter(|(_, r)| rel.is_none_or(|want| *r == want))
            .map(|&(n, _)| self.nodes[n])
            .collect();
        out.dedup();
        Ok(out)
    }

    /// Breadth-first distances from the node at `source`, type-blind, for
    /// every node reachable within `max_depth` hops. The source is excluded.
    /// Output is `(node index, distance)` in BFS order.
    pub fn bfs_distances(&self, source: usize, max_depth: usize) -> Vec<(usize, usize)> {
        let mut dist = HashMap::new();
        dist.insert(source, 0usize);
        let mut queue = VecDeque::from([source]);
        let mut out = Vec::new();
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            if du == max_depth {
                continue;
            }
            for &(w, _) in &self.adjacency[u] {
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(w) {
                    slot.insert(du + 1);
                    out.push((w, du + 1));
                    queue.push_back(w);
                }
            }
        }
        out
    }

    /// Every node at shortest-path distance `1..=k` from `v` with its
    /// distance.
    pub fn khop_oracle(&self, v: NodeRef, k: usize) -> Result<BTreeMap<NodeRef, usize>> {
        let idx = self.index_of(v).ok_or(Error::NotFound(v))?;
        Ok(self
            .bfs_distances(idx, k)
            .into_iter()
            .map(|(n, d)| (self.nodes[n], d))
            .collect())
    }
}

/// An ordered list of snapshots sharing one type registry.
///
/// Node features are static per node: they are attached to the graph rather
/// than to each snapshot.
#[derive(Clone, Debug, Default)]
pub struct TemporalGraph {
    snapshots: Vec<Snapshot>,
    registry: TypeRegistry,
    features: Option<FeatureTable>,
}

impl TemporalGraph {
    /// Snapshot `i` must have `t == i`.
    pub fn new(registry: TypeRegistry, snapshots: Vec<Snapshot>) -> Result<Self> {
        if let Some((i, s)) = snapshots.iter().enumerate().find(|(i, s)| s.t != *i) {
            return Err(Error::Schema(format!("snapshot at position {i} has index {}", s.t)));
        }
        Ok(Self {
            snapshots,
            registry,
            features: None,
        })
    }

    pub fn with_features(mut self, features: FeatureTable) -> Self {
        self.features = Some(features);
        self
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn snapshot(&self, t: usize) -> Option<&Snapshot> {
        self.snapshots.get(t)
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn registry(&self) -> &TypeRegistry {
        &self.registry
    }

    pub fn features(&self) -> Option<&FeatureTable> {
        self.features.as_ref()
    }

    /// One past the largest local id seen per node type, across snapshots.
    pub fn id_bounds(&self) -> Vec<u32> {
        let mut bounds = vec![0u32; self.registry.node_type_count()];
        for s in &self.snapshots {
            for n in s.nodes() {
                let b = &mut bounds[n.ty.0 as usize];
                *b = (*b).max(n.id + 1);
            }
        }
        if let Some(f) = &self.features {
            for n in f.nodes() {
                if let Some(b) = bounds.get_mut(n.ty.0 as usize) {
                    *b = (*b).max(n.id + 1);
                }
            }
        }
        bounds
    }
}

#[cfg(test)]
pub(crate) mod toy {
    use super::*;

    /// The author/paper/venue toy graph: A1-P1, A1-V1, P1-A2, P1-A3, V1-P2.
    pub fn toy_graph() -> TemporalGraph {
        let text = "0\tA\t1\twrites\tP\t1\n\
                    0\tA\t1\tattends\tV\t1\n\
                    0\tA\t2\twrites\tP\t1\n\
                    0\tA\t3\twrites\tP\t1\n\
                    0\tP\t2\tpublished\tV\t1\n";
        parse_snapshots(text.as_bytes()).unwrap()
    }

    pub fn node(g: &TemporalGraph, ty: &str, id: u32) -> NodeRef {
        NodeRef::new(g.registry().node_type(ty).unwrap(), id)
    }
}
