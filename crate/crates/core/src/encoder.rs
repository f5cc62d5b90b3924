//! Hierarchical attention encoder.
//!
//! Each snapshot goes through a type-specific input projection followed by
//! `layers` rounds of relation-level attention and semantic attention over
//! the star-expanded graph. The per-snapshot outputs of a window are then
//! fused per node by temporal self-attention and a gated residual sum.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureTable, NodeRef, NodeType, RelType};
use crate::hyperedge::{ExpandedSchema, ExpandedSnapshot, NodeKind};
use crate::numeric::{glorot_uniform, AttentionEdges, Matrix, ParamId, ParamStore, Segments, Tape, Var};

/// Where the input of a node without attributes comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingFeatures {
    /// One learnable row per node id.
    PerNode,
    /// One learnable row shared by every node of the type.
    PerType,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub window: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub missing_features: MissingFeatures,
    pub temporal_attention: bool,
    pub heterogeneous_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            heads: 4,
            layers: 2,
            window: 3,
            leaky_slope: 0.2,
            dropout: 0.2,
            missing_features: MissingFeatures::PerNode,
            temporal_attention: true,
            heterogeneous_attention: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Usage(format!(
                "hidden width {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.layers < 2 {
            return Err(Error::Usage(format!(
                "need at least 2 layers for entity-hyperedge-entity messages, got {}",
                self.layers
            )));
        }
        if self.window == 0 {
            return Err(Error::Usage("window must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Usage(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// `p_j = sin(t / 10000^(2⌊j/2⌋/d))` for even `j`, `cos(..)` for odd `j`.
pub fn positional_encoding(t: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let angle = t as f64 / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
struct InputParams {
    emb: Option<ParamId>,
    w: ParamId,
    b: ParamId,
    width: usize,
}

#[derive(Clone, Debug)]
struct RelationParams {
    value: ParamId,
    c: ParamId,
    sem: ParamId,
}

#[derive(Clone, Debug)]
enum LayerParams {
    Attention {
        score: Vec<ParamId>,
        rels: Vec<RelationParams>,
        q: ParamId,
    },
    Mean {
        w: ParamId,
    },
}

#[derive(Clone, Debug)]
struct TemporalParams {
    wk: ParamId,
    wq: ParamId,
    wv: ParamId,
    fc_w: ParamId,
    fc_b: ParamId,
    res_w: ParamId,
    res_b: ParamId,
    gate: ParamId,
}

/// Handles to the encoder's weights inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct EncoderParams {
    config: ModelConfig,
    schema: ExpandedSchema,
    inputs: Vec<InputParams>,
    layers: Vec<LayerParams>,
    temporal: Vec<TemporalParams>,
}

impl EncoderParams {
    /// Registers every encoder weight in `store`. Entity types with
    /// features get a projection from their feature width; other entity
    /// types get learnable input rows (sized by `id_bounds` for per-node
    /// rows). Hyperedge types read all-zero inputs of the hidden width.
    pub fn new<R: Rng + ?Sized>(
        config: &ModelConfig,
        schema: &ExpandedSchema,
        features: Option<&FeatureTable>,
        id_bounds: &[u32],
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let ntypes = schema.node_type_count();
        let type_name = |t: usize| schema.node_type_name(NodeType(t as u16)).to_string();

        let mut inputs = Vec::with_capacity(ntypes);
        for t in 0..ntypes {
            let name = type_name(t);
            let ty = NodeType(t as u16);
            let feature_width = if schema.is_hyper_type(ty) {
                None
            } else {
                features.and_then(|f| f.width(ty))
            };
            let (emb, width) = match feature_width {
                Some(w) => (None, w),
                None if schema.is_hyper_type(ty) => (None, d),
                None => {
                    let rows = match config.missing_features {
                        MissingFeatures::PerNode => id_bounds.get(t).copied().unwrap_or(0).max(1) as usize,
                        MissingFeatures::PerType => 1,
                    };
                    let id = store.add(format!("input.{name}.emb"), glorot_uniform(rows, d, rng))?;
                    (Some(id), d)
                }
            };
            let w = store.add(format!("input.{name}.w"), glorot_uniform(d, width, rng))?;
            let b = store.add(format!("input.{name}.b"), Matrix::zeros(1, d))?;
            inputs.push(InputParams { emb, w, b, width });
        }

        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            if config.heterogeneous_attention {
                let score = (0..ntypes)
                    .map(|t| store.add(format!("layer{l}.score.{}.w", type_name(t)), glorot_uniform(d, d, rng)))
                    .collect::<Result<Vec<_>>>()?;
                let mut rels = Vec::with_capacity(schema.relation_count());
                for r in 0..schema.relation_count() {
                    let rname = schema.relation_name(RelType(r as u16)).to_string();
                    let value = store.add(format!("layer{l}.rel.{rname}.value.w"), glorot_uniform(d, d, rng))?;
                    let c = store.add(
                        format!("layer{l}.rel.{rname}.c"),
                        glorot_uniform(config.heads, d / config.heads, rng),
                    )?;
                    let sem = store.add(format!("layer{l}.rel.{rname}.sem.w"), glorot_uniform(d, d, rng))?;
                    rels.push(RelationParams { value, c, sem });
                }
                let q = store.add(format!("layer{l}.sem.q"), glorot_uniform(1, d, rng))?;
                layers.push(LayerParams::Attention { score, rels, q });
            } else {
                let w = store.add(format!("layer{l}.mean.w"), glorot_uniform(d, d, rng))?;
                layers.push(LayerParams::Mean { w });
            }
        }

        let mut temporal = Vec::with_capacity(ntypes);
        for t in 0..ntypes {
            let name = type_name(t);
            let mut sq = |suffix: &str, store: &mut ParamStore| {
                store.add(format!("temporal.{name}.{suffix}"), glorot_uniform(d, d, rng))
            };
            let wk = sq("wk", store)?;
            let wq = sq("wq", store)?;
            let wv = sq("wv", store)?;
            let fc_w = sq("fc.w", store)?;
            let res_w = sq("res.w", store)?;
            let fc_b = store.add(format!("temporal.{name}.fc.b"), Matrix::zeros(1, d))?;
            let res_b = store.add(format!("temporal.{name}.res.b"), Matrix::zeros(1, d))?;
            let gate = store.add(format!("temporal.{name}.gate"), Matrix::zeros(1, 1))?;
            temporal.push(TemporalParams {
                wk,
                wq,
                wv,
                fc_w,
                fc_b,
                res_w,
                res_b,
                gate,
            });
        }

        Ok(Self {
            config: config.clone(),
            schema: schema.clone(),
            inputs,
            layers,
            temporal,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schema(&self) -> &ExpandedSchema {
        &self.schema
    }

    /// Id of the gate logit of a node type.
    pub fn gate(&self, ty: NodeType) -> ParamId {
        self.temporal[ty.0 as usize].gate
    }

    /// Id of the input projection of a node type.
    pub fn input_weight(&self, ty: NodeType) -> ParamId {
        self.inputs[ty.0 as usize].w
    }

    /// Id of the learnable input rows of a featureless entity type.
    pub fn input_embedding(&self, ty: NodeType) -> Option<ParamId> {
        self.inputs[ty.0 as usize].emb
    }

    /// Lays out one expanded snapshot for repeated forward passes.
    pub fn prepare(&self, snapshot: &ExpandedSnapshot, features: Option<&FeatureTable>) -> Result<PreparedSnapshot> {
        PreparedSnapshot::new(self, snapshot, features)
    }
}

#[derive(Clone, Debug)]
enum InputRows {
    Embedding(Vec<usize>),
    Features(Matrix),
    Zeros,
}

#[derive(Clone, Debug)]
struct TypeGroup {
    ty: NodeType,
    start: usize,
    len: usize,
    input: InputRows,
}

#[derive(Clone, Debug)]
struct RelationPlan {
    rel: RelType,
    edges: Arc<AttentionEdges>,
    sources: Arc<[Option<usize>]>,
    scatter: Arc<[Option<usize>]>,
}

/// An expanded snapshot laid out as index arrays for the forward pass.
#[derive(Clone, Debug)]
pub struct PreparedSnapshot {
    t: usize,
    nodes: Vec<NodeRef>,
    kinds: Vec<NodeKind>,
    index: HashMap<NodeRef, usize>,
    groups: Vec<TypeGroup>,
    relations: Vec<RelationPlan>,
    support: Matrix,
    isolated: Matrix,
    mean_sources: Arc<[Option<usize>]>,
    mean_segments: Arc<Segments>,
    inv_degree: Matrix,
}

impl PreparedSnapshot {
    fn new(params: &EncoderParams, snapshot: &ExpandedSnapshot, features: Option<&FeatureTable>) -> Result<Self> {
        let nodes = snapshot.nodes().to_vec();
        let n = nodes.len();
        if nodes.windows(2).any(|w| w[0].ty > w[1].ty) {
            return Err(Error::contract("expanded nodes must be grouped by type"));
        }
        let mut groups: Vec<TypeGroup> = Vec::new();
        let mut start = 0;
        while start < n {
            let ty = nodes[start].ty;
            let len = nodes[start..].iter().take_while(|v| v.ty == ty).count();
            let ip = params
                .inputs
                .get(ty.0 as usize)
                .ok_or_else(|| Error::Schema(format!("node type {} has no parameters", ty.0)))?;
            let members = &nodes[start..start + len];
            let input = if params.schema.is_hyper_type(ty) {
                InputRows::Zeros
            } else if ip.emb.is_some() {
                match params.config.missing_features {
                    MissingFeatures::PerNode => InputRows::Embedding(members.iter().map(|v| v.id as usize).collect()),
                    MissingFeatures::PerType => InputRows::Embedding(vec![0; len]),
                }
            } else {
                let table = features.ok_or_else(|| Error::contract("feature table required"))?;
                let mut m = Matrix::zeros(len, ip.width);
                for (r, &v) in members.iter().enumerate() {
                    let row = table
                        .get(v)
                        .ok_or_else(|| Error::contract(format!("node {v} has no features")))?;
                    if row.len() != ip.width {
                        return Err(Error::shape(format!(
                            "node {v}: feature width {} vs projection width {}",
                            row.len(),
                            ip.width
                        )));
                    }
                    m.row_mut(r).copy_from_slice(row);
                }
                InputRows::Features(m)
            };
            groups.push(TypeGroup { ty, start, len, input });
            start += len;
        }
        if let Some(g) = groups.iter().find(|g| match &g.input {
            InputRows::Embedding(ids) => {
                let rows = match params.config.missing_features {
                    MissingFeatures::PerNode => usize::MAX,
                    MissingFeatures::PerType => 1,
                };
                ids.iter().any(|&i| i >= rows)
            }
            _ => false,
        }) {
            return Err(Error::contract(format!("type {} ids outside embedding", g.ty.0)));
        }

        let index: HashMap<NodeRef, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut per_rel: Vec<Vec<(usize, usize)>> = vec![Vec::new(); params.schema.relation_count()];
        for e in snapshot.edges() {
            let (a, b) = (index[&e.src], index[&e.dst]);
            let r = e.rel.0 as usize;
            if r >= per_rel.len() {
                return Err(Error::Schema(format!("relation {r} not in schema")));
            }
            per_rel[r].push((a, b));
            per_rel[r].push((b, a));
        }
        let mut relations = Vec::new();
        let mut all_pairs = Vec::new();
        for (r, pairs) in per_rel.into_iter().enumerate() {
            if pairs.is_empty() {
                continue;
            }
            all_pairs.extend_from_slice(&pairs);
            let edges = AttentionEdges::new(&pairs);
            let sources: Arc<[Option<usize>]> = edges.src_nodes().iter().map(|&s| Some(s)).collect();
            let mut scatter = vec![None; n];
            for (s, &i) in edges.out_nodes().iter().enumerate() {
                scatter[i] = Some(s);
            }
            relations.push(RelationPlan {
                rel: RelType(r as u16),
                edges: Arc::new(edges),
                sources,
                scatter: scatter.into(),
            });
        }
        let mut support = Matrix::zeros(n, relations.len());
        let mut isolated = Matrix::filled(n, 1, 1.0);
        for (a, plan) in relations.iter().enumerate() {
            for &i in plan.edges.out_nodes() {
                support.row_mut(i)[a] = 1.0;
                isolated.row_mut(i)[0] = 0.0;
            }
        }

        all_pairs.sort_unstable();
        all_pairs.dedup();
        let mean_sources: Arc<[Option<usize>]> = all_pairs.iter().map(|p| Some(p.1)).collect();
        let targets: Vec<Option<usize>> = all_pairs.iter().map(|p| Some(p.0)).collect();
        let mean_segments = Arc::new(Segments::from_targets(&targets, n)?);
        let mut inv_degree = Matrix::zeros(n, 1);
        for i in 0..n {
            let deg = mean_segments.members(i).len();
            if deg > 0 {
                inv_degree.row_mut(i)[0] = 1.0 / deg as f64;
            }
        }

        Ok(Self {
            t: snapshot.t(),
            nodes,
            kinds: snapshot.kinds().to_vec(),
            index,
            groups,
            relations,
            support,
            isolated,
            mean_sources,
            mean_segments,
            inv_degree,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn index_of(&self, v: NodeRef) -> Option<usize> {
        self.index.get(&v).copied()
    }

    /// Relations with at least one edge, in the column order of β.
    pub fn relations(&self) -> Vec<RelType> {
        self.relations.iter().map(|r| r.rel).collect()
    }

    /// Edge layout of the `a`-th present relation.
    pub fn relation_edges(&self, a: usize) -> &AttentionEdges {
        &self.relations[a].edges
    }
}

/// Intermediate results of one heterogeneous layer.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Per present relation, the attention output var (α is readable with
    /// [`Tape::attention_weights`]).
    pub attention: Vec<Var>,
    /// Semantic weights over the present relations (1 × R).
    pub beta: Option<Var>,
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct SnapshotOutput {
    pub input: Var,
    pub layers: Vec<LayerTrace>,
    pub z: Var,
}

/// Temporal weights of one node type: `rows[t]` is n × T with one γ row per
/// node, `presence` is n × T row-major.
#[derive(Clone, Debug)]
pub struct TypeGammas {
    pub ty: NodeType,
    pub presence: Vec<bool>,
    pub rows: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct WindowOutput {
    pub nodes: Vec<NodeRef>,
    pub index: HashMap<NodeRef, usize>,
    pub z: Var,
    pub gammas: Vec<TypeGammas>,
}

impl WindowOutput {
    pub fn index_of(&self, v: NodeRef) -> Option<usize> {
        self.index.get(&v).copied()
    }
}

fn dropout_mask(len: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Arc<[f64]>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(
        (0..len)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    )
}

impl EncoderParams {
    /// `ReLU(W_φ x + b_φ)` for every node of the snapshot (N × d).
    pub fn project_features(&self, tape: &mut Tape, store: &ParamStore, plan: &PreparedSnapshot) -> Result<Var> {
        let d = self.config.hidden;
        let mut blocks = Vec::with_capacity(plan.groups.len());
        for g in &plan.groups {
            let ip = &self.inputs[g.ty.0 as usize];
            let x = match &g.input {
                InputRows::Embedding(ids) => {
                    let emb = tape.param(store, ip.emb.expect("embedding rows"));
                    tape.gather_rows(emb, ids)?
                }
                InputRows::Features(m) => tape.leaf(m.clone()),
                InputRows::Zeros => tape.leaf(Matrix::zeros(g.len, d)),
            };
            let w = tape.param(store, ip.w);
            let b = tape.param(store, ip.b);
            let y = tape.dense(x, w, Some(b))?;
            blocks.push(tape.relu(y));
        }
        if blocks.is_empty() {
            return Ok(tape.leaf(Matrix::zeros(0, d)));
        }
        tape.concat_rows(&blocks)
    }

    /// Per present relation, multi-head attention of every node over its
    /// neighbours under that relation. Row `s` of output `a` belongs to
    /// node `plan.relation_edges(a).out_nodes()[s]`.
    pub fn relation_attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        plan: &PreparedSnapshot,
        layer: usize,
        z: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<Var>> {
        let LayerParams::Attention { score, rels, .. } = &self.layers[layer] else {
            return Err(Error::contract("layer has no relation attention"));
        };
        if plan.relations.is_empty() {
            return Ok(Vec::new());
        }
        let mut blocks = Vec::with_capacity(plan.groups.len());
        for g in &plan.groups {
            let rows: Vec<usize> = (g.start..g.start + g.len).collect();
            let zg = tape.gather_rows(z, &rows)?;
            let w = tape.param(store, score[g.ty.0 as usize]);
            blocks.push(tape.dense(zg, w, None)?);
        }
        let h = tape.concat_rows(&blocks)?;
        let mut outs = Vec::with_capacity(plan.relations.len());
        for rp in &plan.relations {
            let p = &rels[rp.rel.0 as usize];
            let zs = tape.gather(z, rp.sources.clone())?;
            let w = tape.param(store, p.value);
            let v = tape.dense(zs, w, None)?;
            let c = tape.param(store, p.c);
            let mask = dropout_mask(
                rp.edges.len() * self.config.heads,
                self.config.dropout,
                rng.as_deref_mut(),
            );
            outs.push(tape.attention(h, v, c, rp.edges.clone(), self.config.leaky_slope, mask)?);
        }
        Ok(outs)
    }

    /// Fuses per-relation outputs with semantic weights
    /// `β = softmax_a(mean_i q · tanh(W_a z_{i,a}))`, renormalised over the
    /// relations each node has. Returns the fused N × d output and β.
    pub fn semantic_attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        plan: &PreparedSnapshot,
        layer: usize,
        per_relation: &[Var],
    ) -> Result<(Var, Option<Var>)> {
        let LayerParams::Attention { rels, q, .. } = &self.layers[layer] else {
            return Err(Error::contract("layer has no semantic attention"));
        };
        let n = plan.nodes.len();
        if per_relation.len() != plan.relations.len() {
            return Err(Error::shape(format!(
                "{} relation outputs for {} relations",
                per_relation.len(),
                plan.relations.len()
            )));
        }
        if per_relation.is_empty() {
            return Ok((tape.leaf(Matrix::zeros(n, self.config.hidden)), None));
        }
        let qv = tape.param(store, *q);
        let mut scores = Vec::with_capacity(per_relation.len());
        for (rp, &out) in plan.relations.iter().zip(per_relation) {
            let w = tape.param(store, rels[rp.rel.0 as usize].sem);
            let pre = tape.dense(out, w, None)?;
            let act = tape.tanh(pre);
            let s = tape.matmul_nt(act, qv)?;
            scores.push(tape.mean(s)?);
        }
        let row = tape.concat_cols(&scores)?;
        let beta = tape.row_softmax(row, None)?;
        let mut terms = Vec::with_capacity(per_relation.len());
        for (a, (rp, &out)) in plan.relations.iter().zip(per_relation).enumerate() {
            let full = tape.gather(out, rp.scatter.clone())?;
            let ba = tape.slice_cols(beta, a, 1)?;
            terms.push(tape.mul_scalar(full, ba)?);
        }
        let total = tape.add_all(&terms)?;
        let support = tape.leaf(plan.support.clone());
        let denom = tape.matmul_nt(support, beta)?;
        let iso = tape.leaf(plan.isolated.clone());
        let denom = tape.add(denom, iso)?;
        let inv = tape.reciprocal(denom)?;
        let fused = tape.mul_col(total, inv)?;
        Ok((tape.relu(fused), Some(beta)))
    }

    /// Type-blind replacement for relation and semantic attention:
    /// `ReLU(W · mean_j z_j)` over all neighbours.
    fn mean_aggregation(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        plan: &PreparedSnapshot,
        layer: usize,
        z: Var,
    ) -> Result<Var> {
        let LayerParams::Mean { w } = &self.layers[layer] else {
            return Err(Error::contract("layer has no mean aggregation"));
        };
        let wv = tape.param(store, *w);
        let wz = tape.dense(z, wv, None)?;
        let per_edge = tape.gather(wz, plan.mean_sources.clone())?;
        let summed = tape.segment_sum(per_edge, plan.mean_segments.clone())?;
        let inv = tape.leaf(plan.inv_degree.clone());
        let mean = tape.mul_col(summed, inv)?;
        Ok(tape.relu(mean))
    }

    /// Input projection followed by every heterogeneous layer.
    pub fn snapshot_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        plan: &PreparedSnapshot,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<SnapshotOutput> {
        let input = self.project_features(tape, store, plan)?;
        let mut z = input;
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let trace = match &self.layers[l] {
                LayerParams::Attention { .. } => {
                    let attention = self.relation_attention(tape, store, plan, l, z, rng.as_deref_mut())?;
                    let (output, beta) = self.semantic_attention(tape, store, plan, l, &attention)?;
                    LayerTrace {
                        attention,
                        beta,
                        output,
                    }
                }
                LayerParams::Mean { .. } => LayerTrace {
                    attention: Vec::new(),
                    beta: None,
                    output: self.mean_aggregation(tape, store, plan, l, z)?,
                },
            };
            z = trace.output;
            layers.push(trace);
        }
        Ok(SnapshotOutput { input, layers, z })
    }

    /// Temporal self-attention and gated residual fusion over a window of
    /// per-snapshot outputs, in window order. The result covers every node
    /// present in at least one snapshot of the window.
    pub fn temporal_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        window: &[(&PreparedSnapshot, Var)],
    ) -> Result<WindowOutput> {
        if window.is_empty() {
            return Err(Error::contract("empty window"));
        }
        if window.len() > self.config.window {
            return Err(Error::contract(format!(
                "window of {} snapshots exceeds configured length {}",
                window.len(),
                self.config.window
            )));
        }
        let d = self.config.hidden;
        let tn = window.len();
        let union: BTreeSet<NodeRef> = window.iter().flat_map(|(p, _)| p.nodes.iter().copied()).collect();
        let nodes: Vec<NodeRef> = union.into_iter().collect();
        let pe: Vec<Var> = (0..tn)
            .map(|t| tape.leaf(Matrix::row_vector(&positional_encoding(t, d))))
            .collect();
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();

        let mut blocks = Vec::new();
        let mut gammas = Vec::new();
        let mut start = 0;
        while start < nodes.len() {
            let ty = nodes[start].ty;
            let len = nodes[start..].iter().take_while(|v| v.ty == ty).count();
            let members = &nodes[start..start + len];
            start += len;
            let tp = &self.temporal[ty.0 as usize];

            let mut presence = vec![false; len * tn];
            let mut pres_cols = Vec::with_capacity(tn);
            let mut z_t = Vec::with_capacity(tn);
            for (t, (plan, z)) in window.iter().enumerate() {
                let rows: Arc<[Option<usize>]> = members.iter().map(|v| plan.index_of(*v)).collect();
                let mut col = Matrix::zeros(len, 1);
                for (i, r) in rows.iter().enumerate() {
                    if r.is_some() {
                        presence[i * tn + t] = true;
                        col.row_mut(i)[0] = 1.0;
                    }
                }
                pres_cols.push(tape.leaf(col));
                z_t.push(tape.gather(*z, rows)?);
            }

            let wk = tape.param(store, tp.wk);
            let wq = tape.param(store, tp.wq);
            let wv = tape.param(store, tp.wv);
            let mut keys = Vec::with_capacity(tn);
            let mut queries = Vec::with_capacity(tn);
            let mut values = Vec::with_capacity(tn);
            for t in 0..tn {
                let zp = tape.add_row(z_t[t], pe[t])?;
                if self.config.temporal_attention {
                    keys.push(tape.dense(zp, wk, None)?);
                    queries.push(tape.dense(zp, wq, None)?);
                }
                values.push(tape.dense(zp, wv, None)?);
            }

            let uniform = if self.config.temporal_attention {
                None
            } else {
                let mut m = Matrix::zeros(len, tn);
                for i in 0..len {
                    let row = &presence[i * tn..(i + 1) * tn];
                    let count = row.iter().filter(|&&p| p).count() as f64;
                    for (t, &p) in row.iter().enumerate() {
                        if p {
                            m.row_mut(i)[t] = 1.0 / count;
                        }
                    }
                }
                Some(tape.leaf(m))
            };

            let fc_w = tape.param(store, tp.fc_w);
            let fc_b = tape.param(store, tp.fc_b);
            let res_w = tape.param(store, tp.res_w);
            let res_b = tape.param(store, tp.res_b);
            let gate_logit = tape.param(store, tp.gate);
            let g = tape.sigmoid(gate_logit);
            let one_minus_g = tape.affine(g, -1.0, 1.0);

            let mut gamma_rows = Vec::with_capacity(tn);
            let mut terms = Vec::with_capacity(tn);
            for t in 0..tn {
                let gamma = match uniform {
                    Some(u) => u,
                    None => {
                        let cols = (0..tn)
                            .map(|s| tape.row_dot(keys[t], queries[s]))
                            .collect::<Result<Vec<_>>>()?;
                        let raw = tape.concat_cols(&cols)?;
                        let scaled = tape.scale(raw, inv_sqrt_d);
                        tape.row_softmax(scaled, Some(&presence))?
                    }
                };
                gamma_rows.push(gamma);
                let mut parts = Vec::with_capacity(tn);
                for s in 0..tn {
                    let w = tape.slice_cols(gamma, s, 1)?;
                    parts.push(tape.mul_col(values[s], w)?);
                }
                let agg = tape.add_all(&parts)?;
                let fc = tape.dense(agg, fc_w, Some(fc_b))?;
                let zbar = tape.relu(fc);
                let res = tape.dense(z_t[t], res_w, Some(res_b))?;
                let term = self.gated_residual_term(tape, zbar, res, g, one_minus_g)?;
                terms.push(tape.mul_col(term, pres_cols[t])?);
            }
            blocks.push(tape.add_all(&terms)?);
            gammas.push(TypeGammas {
                ty,
                presence,
                rows: gamma_rows,
            });
        }
        let z = tape.concat_rows(&blocks)?;
        let index = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        Ok(WindowOutput {
            nodes,
            index,
            z,
            gammas,
        })
    }

    /// `g · z̄ + (1 − g) · FC(z)` for one snapshot; summed over present
    /// snapshots by [`Self::temporal_forward`].
    pub fn gated_residual_term(
        &self,
        tape: &mut Tape,
        zbar: Var,
        residual: Var,
        g: Var,
        one_minus_g: Var,
    ) -> Result<Var> {
        let a = tape.mul_scalar(zbar, g)?;
        let b = tape.mul_scalar(residual, one_minus_g)?;
        tape.add(a, b)
    }

    /// Full forward pass over a window recorded on `tape`.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        window: &[&PreparedSnapshot],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<WindowOutput> {
        if window.is_empty() {
            return Err(Error::contract("empty window"));
        }
        let mut outs = Vec::with_capacity(window.len());
        for &plan in window {
            let o = self.snapshot_forward(tape, store, plan, rng.as_deref_mut())?;
            outs.push((plan, o.z));
        }
        self.temporal_forward(tape, store, &outs)
    }

    /// Final embeddings of every node in the window. With `dropout_seed`
    /// set, attention dropout is sampled from that seed.
    pub fn encode(
        &self,
        store: &ParamStore,
        window: &[&PreparedSnapshot],
        dropout_seed: Option<u64>,
    ) -> Result<EmbeddingTable> {
        let mut tape = Tape::new();
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let out = self.encode_on_tape(&mut tape, store, window, rng.as_mut())?;
        Ok(EmbeddingTable {
            nodes: out.nodes,
            index: out.index,
            values: tape.value(out.z).clone(),
        })
    }

    /// Per-snapshot embeddings after the heterogeneous layers.
    pub fn encode_snapshot(&self, store: &ParamStore, plan: &PreparedSnapshot) -> Result<EmbeddingTable> {
        let mut tape = Tape::new();
        let out = self.snapshot_forward(&mut tape, store, plan, None)?;
        Ok(EmbeddingTable {
            nodes: plan.nodes.clone(),
            index: plan.index.clone(),
            values: tape.value(out.z).clone(),
        })
    }
}

/// Node embeddings keyed by node.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    nodes: Vec<NodeRef>,
    index: HashMap<NodeRef, usize>,
    values: Matrix,
}

impl EmbeddingTable {
    pub fn new(nodes: Vec<NodeRef>, values: Matrix) -> Result<Self> {
        if nodes.len() != values.rows() {
            return Err(Error::shape(format!(
                "{} nodes for {} rows",
                nodes.len(),
                values.rows()
            )));
        }
        let index = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        Ok(Self { nodes, index, values })
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, v: NodeRef) -> Option<&[f64]> {
        self.index.get(&v).map(|&i| self.values.row(i))
    }

    /// `type<TAB>id<TAB>v0 ... v_{d-1}`, one line per node.
    pub fn write_tsv<W: Write>(&self, schema: &ExpandedSchema, mut out: W) -> Result<()> {
        for (i, v) in self.nodes.iter().enumerate() {
            write!(out, "{}\t{}", schema.node_type_name(v.ty), v.id)?;
            for x in self.values.row(i) {
                write!(out, "\t{x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::toy::{node, toy_graph};
    use crate::hyperedge::{construct_hthg, star_expand, HyperConfig, HyperedgeKind};
    use approx::assert_abs_diff_eq;

    fn toy_setup(config: &ModelConfig) -> (EncoderParams, ParamStore, PreparedSnapshot) {
        let g = toy_graph();
        let hc = HyperConfig {
            kind: HyperedgeKind::KHop,
            k: 2,
            p: Some(100),
            seed: 0,
        };
        let h = construct_hthg(&g, hc).unwrap();
        let schema = ExpandedSchema::new(g.registry(), Some((hc.kind, hc.k)));
        let xs = star_expand(&g.snapshots()[0], &h.snapshots[0], &schema).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = EncoderParams::new(config, &schema, None, &g.id_bounds(), &mut store, &mut rng).unwrap();
        let plan = params.prepare(&xs, None).unwrap();
        (params, store, plan)
    }

    fn small() -> ModelConfig {
        ModelConfig {
            hidden: 8,
            heads: 2,
            dropout: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn positional_examples() {
        let p0 = positional_encoding(0, 6);
        assert_eq!(p0, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let p1 = positional_encoding(1, 2);
        assert_abs_diff_eq!(p1[0], 0.84147, epsilon = 1e-5);
        assert_abs_diff_eq!(p1[1], 0.54030, epsilon = 1e-5);
        for t in 0..50 {
            assert!(positional_encoding(t, 16).iter().all(|x| x.abs() <= 1.0));
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            hidden: 10,
            heads: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let shallow = ModelConfig {
            layers: 1,
            ..Default::default()
        };
        assert!(shallow.validate().is_err());
    }

    #[test]
    fn hyper_nodes_project_to_zero() {
        let (params, store, plan) = toy_setup(&small());
        let mut tape = Tape::new();
        let z = params.project_features(&mut tape, &store, &plan).unwrap();
        let zm = tape.value(z);
        for (i, k) in plan.kinds().iter().enumerate() {
            if *k == NodeKind::Hyper {
                assert!(zm.row(i).iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn hyper_nodes_nonzero_after_first_layer() {
        let (params, store, plan) = toy_setup(&small());
        let mut tape = Tape::new();
        let out = params.snapshot_forward(&mut tape, &store, &plan, None).unwrap();
        let first = tape.value(out.layers[0].output);
        let mut any = false;
        for (i, k) in plan.kinds().iter().enumerate() {
            if *k == NodeKind::Hyper {
                any |= first.row(i).iter().any(|&x| x != 0.0);
            }
        }
        assert!(any);
    }

    #[test]
    fn attention_distributions_are_normalised() {
        let (params, store, plan) = toy_setup(&small());
        let mut tape = Tape::new();
        let out = params.encode_on_tape(&mut tape, &store, &[&plan, &plan], None).unwrap();
        let mut t2 = Tape::new();
        let so = params.snapshot_forward(&mut t2, &store, &plan, None).unwrap();
        for layer in &so.layers {
            for (a, &var) in layer.attention.iter().enumerate() {
                let alpha = t2.attention_weights(var).unwrap();
                let edges = plan.relation_edges(a);
                for s in 0..edges.out_nodes().len() {
                    for k in 0..2 {
                        let sum: f64 = edges.edges_into(s).map(|e| alpha[e * 2 + k]).sum();
                        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
                    }
                }
            }
            let beta = t2.value(layer.beta.unwrap());
            assert_abs_diff_eq!(beta.sum(), 1.0, epsilon = 1e-12);
        }
        for tg in &out.gammas {
            for &g in &tg.rows {
                let m = tape.value(g);
                for r in 0..m.rows() {
                    assert_abs_diff_eq!(m.row(r).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn identical_snapshots_identical_before_temporal_stage() {
        let (params, store, plan) = toy_setup(&small());
        let mut tape = Tape::new();
        let a = params.snapshot_forward(&mut tape, &store, &plan, None).unwrap();
        let b = params.snapshot_forward(&mut tape, &store, &plan, None).unwrap();
        assert_eq!(tape.value(a.z), tape.value(b.z));
    }

    #[test]
    fn output_covers_window_with_width_d() {
        let (params, store, plan) = toy_setup(&small());
        let table = params.encode(&store, &[&plan], None).unwrap();
        assert_eq!(table.len(), plan.nodes().len());
        assert_eq!(table.width(), 8);
        let g = toy_graph();
        assert!(table.get(node(&g, "A", 1)).is_some());
        let mut buf = Vec::new();
        table.write_tsv(params.schema(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), table.len());
        assert_eq!(text.lines().next().unwrap().split('\t').count(), 2 + 8);
    }

    #[test]
    fn gate_saturation() {
        let (params, mut store, plan) = toy_setup(&small());
        let ty = plan.nodes()[0].ty;
        let gid = params.gate(ty);
        let run = |store: &ParamStore| {
            let mut tape = Tape::new();
            let out = params.encode_on_tape(&mut tape, store, &[&plan], None).unwrap();
            tape.value(out.z).row(0).to_vec()
        };
        store.get_mut(gid).value = Matrix::scalar(0.0);
        let half = run(&store);
        store.get_mut(gid).value = Matrix::scalar(60.0);
        let hi = run(&store);
        store.get_mut(gid).value = Matrix::scalar(-60.0);
        let lo = run(&store);
        for j in 0..half.len() {
            assert_abs_diff_eq!(half[j], 0.5 * hi[j] + 0.5 * lo[j], epsilon = 1e-9);
        }
    }

    #[test]
    fn dropout_changes_training_output_only() {
        let cfg = ModelConfig {
            dropout: 0.5,
            ..small()
        };
        let (params, store, plan) = toy_setup(&cfg);
        let eval1 = params.encode(&store, &[&plan], None).unwrap();
        let eval2 = params.encode(&store, &[&plan], None).unwrap();
        assert_eq!(eval1, eval2);
        let train = params.encode(&store, &[&plan], Some(3)).unwrap();
        assert_ne!(train, eval1);
        assert_eq!(train, params.encode(&store, &[&plan], Some(3)).unwrap());
    }

    #[test]
    fn mean_variant_runs() {
        let cfg = ModelConfig {
            heterogeneous_attention: false,
            temporal_attention: false,
            ..small()
        };
        let (params, store, plan) = toy_setup(&cfg);
        let mut tape = Tape::new();
        let out = params.encode_on_tape(&mut tape, &store, &[&plan, &plan], None).unwrap();
        assert!(tape.value(out.z).is_finite());
        for tg in &out.gammas {
            for &g in &tg.rows {
                for &x in tape.value(g).data() {
                    assert_abs_diff_eq!(x, 0.5, epsilon = 1e-15);
                }
            }
        }
    }
}
