//! k-hop / k-ring hyperedges, P-uniform sampling, temporal hypergraph
//! assembly and star expansion.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureTable, NodeRef, NodeType, RelType, Snapshot, TemporalGraph, TypeRegistry, TypedEdge};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HyperedgeKind {
    #[serde(rename = "k-hop")]
    KHop,
    #[serde(rename = "k-ring")]
    KRing,
}

impl HyperedgeKind {
    fn short(self) -> &'static str {
        match self {
            HyperedgeKind::KHop => "hop",
            HyperedgeKind::KRing => "ring",
        }
    }
}

impl fmt::Display for HyperedgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HyperedgeKind::KHop => "k-hop",
            HyperedgeKind::KRing => "k-ring",
        })
    }
}

impl std::str::FromStr for HyperedgeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k-hop" | "khop" | "hop" => Ok(HyperedgeKind::KHop),
            "k-ring" | "kring" | "ring" => Ok(HyperedgeKind::KRing),
            other => Err(Error::Usage(format!(
                "unknown hyperedge kind `{other}` (expected k-hop or k-ring)"
            ))),
        }
    }
}

/// A hyperedge built around an anchor node. The anchor is never a member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hyperedge {
    pub anchor: NodeRef,
    /// Sorted by `(type, id)`.
    pub members: Vec<NodeRef>,
    pub kind: HyperedgeKind,
    pub k: usize,
}

impl Hyperedge {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `hyper/<anchor-type>/<kind><k>`
    pub fn type_label(&self, registry: &TypeRegistry) -> String {
        hyper_type_label(registry.node_type_name(self.anchor.ty), self.kind, self.k)
    }
}

pub fn hyper_type_label(anchor_type: &str, kind: HyperedgeKind, k: usize) -> String {
    format!("hyper/{anchor_type}/{}{k}", kind.short())
}

pub fn membership_label(member_type: &str, hyper_type: &str) -> String {
    format!("member/{member_type}\u{2192}{hyper_type}")
}

fn build(s: &Snapshot, v: NodeRef, k: usize, kind: HyperedgeKind) -> Result<Option<Hyperedge>> {
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    let idx = s.index_of(v).ok_or(Error::NotFound(v))?;
    let nodes = s.nodes();
    let mut members: Vec<NodeRef> = s
        .bfs_distances(idx, k)
        .into_iter()
        .filter(|&(_, d)| kind == HyperedgeKind::KHop || d == k)
        .map(|(n, _)| nodes[n])
        .collect();
    if members.is_empty() {
        return Ok(None);
    }
    members.sort_unstable();
    Ok(Some(Hyperedge {
        anchor: v,
        members,
        kind,
        k,
    }))
}

/// All nodes within distance `1..=k` of `v`; `None` if there are none.
pub fn build_khop_hyperedge(s: &Snapshot, v: NodeRef, k: usize) -> Result<Option<Hyperedge>> {
    build(s, v, k, HyperedgeKind::KHop)
}

/// All nodes at distance exactly `k` from `v`; `None` if there are none.
pub fn build_kring_hyperedge(s: &Snapshot, v: NodeRef, k: usize) -> Result<Option<Hyperedge>> {
    build(s, v, k, HyperedgeKind::KRing)
}

pub fn build_hyperedge(s: &Snapshot, v: NodeRef, kind: HyperedgeKind, k: usize) -> Result<Option<Hyperedge>> {
    build(s, v, k, kind)
}

/// Caps a hyperedge at `p` members by uniform sampling without replacement
/// from the canonical member order. Smaller hyperedges are returned as-is.
pub fn uniformize<R: Rng + ?Sized>(mut e: Hyperedge, p: usize, rng: &mut R) -> Hyperedge {
    if e.members.len() <= p {
        return e;
    }
    let mut picked = rand::seq::index::sample(rng, e.members.len(), p).into_vec();
    picked.sort_unstable();
    e.members = picked.into_iter().map(|i| e.members[i]).collect();
    e
}

/// Hypergraph construction settings. `p == None` disables the cap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub kind: HyperedgeKind,
    pub k: usize,
    pub p: Option<usize>,
    pub seed: u64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            kind: HyperedgeKind::KRing,
            k: 3,
            p: Some(100),
            seed: 0,
        }
    }
}

/// Independent random stream for one `(snapshot, anchor)` pair.
pub fn anchor_rng(seed: u64, t: usize, anchor: NodeRef) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((t as u64) << 48) | ((anchor.ty.0 as u64) << 32) | anchor.id as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypergraphSnapshot {
    pub t: usize,
    pub hyperedges: Vec<Hyperedge>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalHypergraph {
    pub snapshots: Vec<HypergraphSnapshot>,
    pub config: HyperConfig,
}

/// Builds one (uniformized) hyperedge per anchor with a nonempty candidate
/// set, per snapshot. Anchors are processed independently, each with its
/// own random stream, so the result does not depend on scheduling.
pub fn construct_hthg(graph: &TemporalGraph, config: HyperConfig) -> Result<TemporalHypergraph> {
    if config.k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    if config.p == Some(0) {
        return Err(Error::contract("P must be at least 1"));
    }
    let mut snapshots = Vec::with_capacity(graph.len());
    for s in graph.snapshots() {
        let built = par::map_slice(s.nodes(), |&v| -> Result<Option<Hyperedge>> {
            let Some(e) = build(s, v, config.k, config.kind)? else {
                return Ok(None);
            };
            Ok(Some(match config.p {
                Some(p) => uniformize(e, p, &mut anchor_rng(config.seed, s.t(), v)),
                None => e,
            }))
        });
        let hyperedges = built
            .into_iter()
            .filter_map(Result::transpose)
            .collect::<Result<Vec<_>>>()?;
        snapshots.push(HypergraphSnapshot { t: s.t(), hyperedges });
    }
    Ok(TemporalHypergraph { snapshots, config })
}

/// Node and relation types of star-expanded snapshots.
///
/// Entity types keep their ids; hyperedge node types follow, one per anchor
/// type. Original relations keep their ids; membership relations follow,
/// one per (member type, hyperedge type).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpandedSchema {
    node_types: Vec<String>,
    relations: Vec<(String, NodeType, NodeType)>,
    entity_types: usize,
    original_relations: usize,
    hyper: Option<(HyperedgeKind, usize)>,
}

impl ExpandedSchema {
    /// `hyper == None` gives the schema of an unexpanded graph.
    pub fn new(registry: &TypeRegistry, hyper: Option<(HyperedgeKind, usize)>) -> Self {
        let mut node_types: Vec<String> = registry.node_types().map(|(_, n)| n.to_string()).collect();
        let mut relations: Vec<(String, NodeType, NodeType)> = registry
            .relations()
            .map(|(_, r)| (r.name.clone(), r.src, r.dst))
            .collect();
        let entity_types = node_types.len();
        let original_relations = relations.len();
        if let Some((kind, k)) = hyper {
            for i in 0..entity_types {
                node_types.push(hyper_type_label(&node_types[i].clone(), kind, k));
            }
            for m in 0..entity_types {
                for a in 0..entity_types {
                    let h = entity_types + a;
                    relations.push((
                        membership_label(&node_types[m], &node_types[h]),
                        NodeType(m as u16),
                        NodeType(h as u16),
                    ));
                }
            }
        }
        Self {
            node_types,
            relations,
            entity_types,
            original_relations,
            hyper,
        }
    }

    pub fn node_type_count(&self) -> usize {
        self.node_types.len()
    }

    pub fn entity_type_count(&self) -> usize {
        self.entity_types
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn original_relation_count(&self) -> usize {
        self.original_relations
    }

    pub fn node_type_name(&self, ty: NodeType) -> &str {
        &self.node_types[ty.0 as usize]
    }

    pub fn relation_name(&self, rel: RelType) -> &str {
        &self.relations[rel.0 as usize].0
    }

    pub fn relation_endpoints(&self, rel: RelType) -> (NodeType, NodeType) {
        let r = &self.relations[rel.0 as usize];
        (r.1, r.2)
    }

    pub fn is_hyper_type(&self, ty: NodeType) -> bool {
        ty.0 as usize >= self.entity_types
    }

    pub fn hyper(&self) -> Option<(HyperedgeKind, usize)> {
        self.hyper
    }

    pub fn hyper_type_of(&self, anchor_type: NodeType) -> Option<NodeType> {
        self.hyper
            .map(|_| NodeType((self.entity_types + anchor_type.0 as usize) as u16))
    }

    pub fn membership_relation(&self, member: NodeType, hyper: NodeType) -> Option<RelType> {
        self.hyper?;
        let a = hyper.0 as usize - self.entity_types;
        Some(RelType(
            (self.original_relations + member.0 as usize * self.entity_types + a) as u16,
        ))
    }

    /// Node reference of the hyperedge node for an anchor.
    pub fn hyper_node(&self, anchor: NodeRef) -> Option<NodeRef> {
        self.hyper_type_of(anchor.ty).map(|ty| NodeRef::new(ty, anchor.id))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Entity,
    Hyper,
}

/// A star-expanded snapshot: entities plus one node per hyperedge, original
/// edges plus one membership edge per (member, hyperedge).
#[derive(Clone, Debug)]
pub struct ExpandedSnapshot {
    t: usize,
    nodes: Vec<NodeRef>,
    kinds: Vec<NodeKind>,
    index: HashMap<NodeRef, usize>,
    edges: Vec<TypedEdge>,
    original_edges: usize,
}

impl ExpandedSnapshot {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn edges(&self) -> &[TypedEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn original_edge_count(&self) -> usize {
        self.original_edges
    }

    pub fn hyper_node_count(&self) -> usize {
        self.kinds.iter().filter(|k| **k == NodeKind::Hyper).count()
    }

    pub fn index_of(&self, v: NodeRef) -> Option<usize> {
        self.index.get(&v).copied()
    }

    /// Input attributes of node `i`: the node's features for entities (if
    /// any), a zero vector of width `hidden` for hyperedge nodes.
    pub fn input_features<'a>(
        &self,
        i: usize,
        table: Option<&'a FeatureTable>,
        hidden: usize,
    ) -> Option<std::borrow::Cow<'a, [f64]>> {
        match self.kinds[i] {
            NodeKind::Hyper => Some(std::borrow::Cow::Owned(vec![0.0; hidden])),
            NodeKind::Entity => table.and_then(|t| t.get(self.nodes[i])).map(std::borrow::Cow::Borrowed),
        }
    }

    /// Dumps the expanded graph in snapshot TSV form.
    pub fn write_tsv<W: Write>(&self, schema: &ExpandedSchema, mut out: W) -> Result<()> {
        for e in &self.edges {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                self.t,
                schema.node_type_name(e.src.ty),
                e.src.id,
                schema.relation_name(e.rel),
                schema.node_type_name(e.dst.ty),
                e.dst.id
            )?;
        }
        Ok(())
    }
}

/// Which parts of E* to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpansionOptions {
    /// Keep the original pairwise edges.
    pub low_order: bool,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        Self { low_order: true }
    }
}

pub fn star_expand(base: &Snapshot, h: &HypergraphSnapshot, schema: &ExpandedSchema) -> Result<ExpandedSnapshot> {
    expand_with(base, h, schema, ExpansionOptions::default())
}

pub fn expand_with(
    base: &Snapshot,
    h: &HypergraphSnapshot,
    schema: &ExpandedSchema,
    options: ExpansionOptions,
) -> Result<ExpandedSnapshot> {
    if base.t() != h.t {
        return Err(Error::contract(format!(
            "hypergraph snapshot t={} does not match base t={}",
            h.t,
            base.t()
        )));
    }
    let mut nodes: Vec<NodeRef> = base.nodes().to_vec();
    let mut kinds = vec![NodeKind::Entity; nodes.len()];
    let mut edges: Vec<TypedEdge> = if options.low_order {
        base.edges().to_vec()
    } else {
        Vec::new()
    };
    let original_edges = edges.len();
    if !h.hyperedges.is_empty() && schema.hyper().is_none() {
        return Err(Error::Schema("schema has no hyperedge types".into()));
    }
    let mut hyper_nodes = Vec::with_capacity(h.hyperedges.len());
    for e in &h.hyperedges {
        if !base.contains(e.anchor) {
            return Err(Error::NotFound(e.anchor));
        }
        let hn = schema.hyper_node(e.anchor).expect("schema has hyper types");
        hyper_nodes.push(hn);
        for &m in &e.members {
            if !base.contains(m) {
                return Err(Error::NotFound(m));
            }
            let rel = schema.membership_relation(m.ty, hn.ty).expect("schema has hyper types");
            edges.push(TypedEdge { src: m, rel, dst: hn });
        }
    }
    hyper_nodes.sort_unstable();
    let before = hyper_nodes.len();
    hyper_nodes.dedup();
    if hyper_nodes.len() != before {
        return Err(Error::Schema("more than one hyperedge per anchor".into()));
    }
    kinds.extend(std::iter::repeat_n(NodeKind::Hyper, hyper_nodes.len()));
    nodes.extend(hyper_nodes);
    let index = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    Ok(ExpandedSnapshot {
        t: base.t(),
        nodes,
        kinds,
        index,
        edges,
        original_edges,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotStats {
    pub t: usize,
    pub hyperedges: usize,
    pub member_sum: usize,
    pub expanded_nodes: usize,
    pub expanded_edges: usize,
    /// `|e| -> count`
    pub size_histogram: BTreeMap<usize, usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HypergraphStats {
    pub per_snapshot: Vec<SnapshotStats>,
}

impl HypergraphStats {
    pub fn total_hyperedges(&self) -> usize {
        self.per_snapshot.iter().map(|s| s.hyperedges).sum()
    }

    pub fn total_members(&self) -> usize {
        self.per_snapshot.iter().map(|s| s.member_sum).sum()
    }

    pub fn total_expanded_edges(&self) -> usize {
        self.per_snapshot.iter().map(|s| s.expanded_edges).sum()
    }

    pub fn total_expanded_nodes(&self) -> usize {
        self.per_snapshot.iter().map(|s| s.expanded_nodes).sum()
    }

    pub fn max_size(&self) -> usize {
        self.per_snapshot
            .iter()
            .filter_map(|s| s.size_histogram.keys().next_back().copied())
            .max()
            .unwrap_or(0)
    }
}

/// Counts per snapshot. |V*| and |E*| follow the expansion formula
/// |V| + #hyperedges and |E| + Σ|e|.
pub fn hypergraph_stats(graph: &TemporalGraph, h: &TemporalHypergraph) -> HypergraphStats {
    let per_snapshot = h
        .snapshots
        .iter()
        .map(|hs| {
            let (v, e) = graph
                .snapshot(hs.t)
                .map(|s| (s.node_count(), s.edge_count()))
                .unwrap_or((0, 0));
            let member_sum: usize = hs.hyperedges.iter().map(Hyperedge::len).sum();
            let mut size_histogram = BTreeMap::new();
            for he in &hs.hyperedges {
                *size_histogram.entry(he.len()).or_insert(0) += 1;
            }
            SnapshotStats {
                t: hs.t,
                hyperedges: hs.hyperedges.len(),
                member_sum,
                expanded_nodes: v + hs.hyperedges.len(),
                expanded_edges: e + member_sum,
                size_histogram,
            }
        })
        .collect();
    HypergraphStats { per_snapshot }
}
