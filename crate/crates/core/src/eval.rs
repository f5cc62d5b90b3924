//! Link-prediction evaluation, synthetic data, ablations and sweeps.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingTable, ModelConfig, PreparedSnapshot};
use crate::error::{Error, Result};
use crate::graph::{NodeRef, NodeType, Snapshot, TemporalGraph, TypeRegistry, TypedEdge};
use crate::hyperedge::{construct_hthg, hypergraph_stats, ExpansionOptions, HyperConfig, HyperedgeKind};
use crate::objective::{prepare_snapshots, schema_for, train_model, Model, TrainConfig, TrainHistory};
use crate::par;

/// Number of trailing snapshots used as test targets.
pub const TEST_SNAPSHOTS: usize = 3;

/// Area under the ROC curve (ties count one half) and average precision.
///
/// AP walks the list in decreasing score order; equal scores are ordered
/// by a shuffle drawn from `seed`, so AP is deterministic per seed.
pub fn ranking_metrics(scores: &[f64], labels: &[bool], seed: u64) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "need both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    let auc = (rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64);

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, &idx) in order.iter().enumerate() {
        if labels[idx] {
            hits += 1;
            ap += hits as f64 / (k + 1) as f64;
        }
    }
    Ok((auc, ap / np))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Link,
    NewLink,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Link => "link",
            EvalMode::NewLink => "new-link",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "link" => Ok(EvalMode::Link),
            "new-link" => Ok(EvalMode::NewLink),
            other => Err(Error::Usage(format!("unknown mode `{other}` (link, new-link)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotResult {
    pub t: usize,
    pub seed: u64,
    pub auc: f64,
    pub ap: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub per_snapshot: Vec<SnapshotResult>,
    pub mean_auc: f64,
    pub std_auc: Option<f64>,
    pub mean_ap: f64,
    pub std_ap: Option<f64>,
    pub seeds: Vec<u64>,
}

fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

impl EvalReport {
    /// Averages over snapshots within each seed, then reports mean and
    /// sample standard deviation across seeds.
    pub fn from_results(mode: EvalMode, seeds: &[u64], per_snapshot: Vec<SnapshotResult>) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Usage("at least one seed is required".into()));
        }
        let mut aucs = Vec::with_capacity(seeds.len());
        let mut aps = Vec::with_capacity(seeds.len());
        for &s in seeds {
            let rows: Vec<&SnapshotResult> = per_snapshot.iter().filter(|r| r.seed == s).collect();
            if rows.is_empty() {
                return Err(Error::contract(format!("no results for seed {s}")));
            }
            aucs.push(rows.iter().map(|r| r.auc).sum::<f64>() / rows.len() as f64);
            aps.push(rows.iter().map(|r| r.ap).sum::<f64>() / rows.len() as f64);
        }
        let (mean_auc, std_auc) = mean_std(&aucs);
        let (mean_ap, std_ap) = mean_std(&aps);
        Ok(Self {
            mode,
            per_snapshot,
            mean_auc,
            std_auc,
            mean_ap,
            std_ap,
            seeds: seeds.to_vec(),
        })
    }

    /// Checks the structural guarantees of a report.
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.seeds.is_empty() || self.per_snapshot.is_empty() {
            return Err(Error::contract("report has no results"));
        }
        if !unit(self.mean_auc) || !unit(self.mean_ap) {
            return Err(Error::contract("aggregate metric outside [0, 1]"));
        }
        if self
            .per_snapshot
            .iter()
            .any(|r| !unit(r.auc) || !unit(r.ap) || r.n_pos == 0 || r.n_neg == 0)
        {
            return Err(Error::contract("per-snapshot metric invalid"));
        }
        let multi = self.seeds.len() >= 2;
        if self.std_auc.is_some() != multi || self.std_ap.is_some() != multi {
            return Err(Error::contract("std must be reported exactly when there are 2+ seeds"));
        }
        Ok(())
    }

    /// `mean ± std` in percent, as usually tabulated.
    pub fn summary(&self) -> String {
        let pct = |m: f64, s: Option<f64>| match s {
            Some(s) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s),
            None => format!("{:.2}", 100.0 * m),
        };
        format!(
            "{}: AUC {}  AP {}  ({} seeds)",
            self.mode,
            pct(self.mean_auc, self.std_auc),
            pct(self.mean_ap, self.std_ap),
            self.seeds.len()
        )
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Indices of the test snapshots: the last [`TEST_SNAPSHOTS`].
pub fn test_snapshots(graph_len: usize, window: usize) -> Result<Vec<usize>> {
    if graph_len < window + TEST_SNAPSHOTS {
        return Err(Error::contract(format!(
            "{graph_len} snapshots; evaluation needs window {window} + {TEST_SNAPSHOTS} test snapshots"
        )));
    }
    Ok((graph_len - TEST_SNAPSHOTS..graph_len).collect())
}

/// Final embeddings predicting snapshot `tau` from the window before it.
pub fn embeddings_before(model: &Model, prepared: &[PreparedSnapshot], tau: usize) -> Result<EmbeddingTable> {
    if tau == 0 || tau > prepared.len() {
        return Err(Error::contract(format!("cannot predict snapshot {tau}")));
    }
    let start = tau.saturating_sub(model.config().window);
    let window: Vec<&PreparedSnapshot> = prepared[start..tau].iter().collect();
    model.encoder.encode(&model.store, &window, None)
}

pub type Pair = (NodeRef, NodeRef);

/// Test pairs for snapshot `tau`: edges whose endpoints have embeddings
/// (new-link mode keeps only edges absent from every earlier snapshot),
/// and as many type-compatible non-edges among active embedded nodes.
pub fn evaluation_pairs(
    graph: &TemporalGraph,
    embedded: &HashSet<NodeRef>,
    tau: usize,
    mode: EvalMode,
    seed: u64,
) -> Result<(Vec<Pair>, Vec<Pair>)> {
    let snap = graph
        .snapshot(tau)
        .ok_or_else(|| Error::contract(format!("no snapshot {tau}")))?;
    let seen_before = |e: &TypedEdge| {
        graph.snapshots()[..tau]
            .iter()
            .any(|s| s.edges().binary_search(e).is_ok())
    };
    let pos_edges: Vec<&TypedEdge> = snap
        .edges()
        .iter()
        .filter(|e| e.src != e.dst && embedded.contains(&e.src) && embedded.contains(&e.dst))
        .filter(|e| mode == EvalMode::Link || !seen_before(e))
        .collect();
    let positives: Vec<(NodeRef, NodeRef)> = pos_edges.iter().map(|e| (e.src, e.dst)).collect();

    let registry = graph.registry();
    let mut by_type: Vec<Vec<NodeRef>> = vec![Vec::new(); registry.node_type_count()];
    for &v in snap.nodes() {
        if embedded.contains(&v) {
            by_type[v.ty.0 as usize].push(v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tau as u64 + 1);
    let mut used: HashSet<(NodeRef, NodeRef)> = HashSet::new();
    let mut negatives = Vec::with_capacity(positives.len());
    for e in &pos_edges {
        let schema = registry.relation_schema(e.rel);
        let (us, vs) = (&by_type[schema.src.0 as usize], &by_type[schema.dst.0 as usize]);
        let mut found = None;
        for _ in 0..1000 {
            let (u, v) = (us[rng.random_range(0..us.len())], vs[rng.random_range(0..vs.len())]);
            let key = (u.min(v), u.max(v));
            if u != v && !snap.has_edge_between(u, v) && !used.contains(&key) {
                used.insert(key);
                found = Some((u, v));
                break;
            }
        }
        match found {
            Some(p) => negatives.push(p),
            None => log::warn!("t={tau}: no free negative pair for relation {}", schema.name),
        }
    }
    Ok((positives, negatives))
}

fn score_pairs(model: &Model, table: &EmbeddingTable, pairs: &[(NodeRef, NodeRef)]) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let d = table.width();
    let mut a = Vec::with_capacity(pairs.len() * d);
    let mut b = Vec::with_capacity(pairs.len() * d);
    for &(u, v) in pairs {
        a.extend_from_slice(table.get(u).ok_or(Error::NotFound(u))?);
        b.extend_from_slice(table.get(v).ok_or(Error::NotFound(v))?);
    }
    use crate::numeric::Matrix;
    model.disc.score_rows(
        &model.store,
        Matrix::from_vec(pairs.len(), d, a)?,
        Matrix::from_vec(pairs.len(), d, b)?,
    )
}

fn score_with_table(
    model: &Model,
    graph: &TemporalGraph,
    table: &EmbeddingTable,
    tau: usize,
    mode: EvalMode,
    seed: u64,
) -> Result<SnapshotResult> {
    let schema = model.encoder.schema();
    let embedded: HashSet<NodeRef> = table
        .nodes()
        .iter()
        .copied()
        .filter(|v| !schema.is_hyper_type(v.ty))
        .collect();
    let (pos, neg) = evaluation_pairs(graph, &embedded, tau, mode, seed)?;
    let mut scores = score_pairs(model, table, &pos)?;
    scores.extend(score_pairs(model, table, &neg)?);
    let labels: Vec<bool> = (0..pos.len() + neg.len()).map(|i| i < pos.len()).collect();
    let (auc, ap) = ranking_metrics(&scores, &labels, seed)?;
    Ok(SnapshotResult {
        t: tau,
        seed,
        auc,
        ap,
        n_pos: pos.len(),
        n_neg: neg.len(),
    })
}

/// Metrics for a single target snapshot.
pub fn score_snapshot(
    model: &Model,
    graph: &TemporalGraph,
    prepared: &[PreparedSnapshot],
    tau: usize,
    mode: EvalMode,
    seed: u64,
) -> Result<SnapshotResult> {
    let table = embeddings_before(model, prepared, tau)?;
    score_with_table(model, graph, &table, tau, mode, seed)
}

/// Evaluates fixed weights on the test snapshots; each seed redraws the
/// negative pairs and the tie order.
pub fn evaluate(
    model: &Model,
    graph: &TemporalGraph,
    prepared: &[PreparedSnapshot],
    mode: EvalMode,
    seeds: &[u64],
) -> Result<EvalReport> {
    let taus = test_snapshots(graph.len(), model.config().window)?;
    let tables = taus
        .iter()
        .map(|&tau| embeddings_before(model, prepared, tau))
        .collect::<Result<Vec<_>>>()?;
    let per_seed = par::map_slice(seeds, |&seed| {
        taus.iter()
            .zip(&tables)
            .map(|(&tau, table)| score_with_table(model, graph, table, tau, mode, seed))
            .collect::<Result<Vec<_>>>()
    });
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    EvalReport::from_results(mode, seeds, rows)
}

/// Everything needed to train and evaluate one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub hyper: HyperConfig,
    /// Build hyperedges at all.
    pub use_hyper: bool,
    pub expansion_low_order: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mode: EvalMode,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            hyper: HyperConfig::default(),
            use_hyper: true,
            expansion_low_order: true,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            mode: EvalMode::Link,
            seeds: (0..5).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn expansion(&self) -> ExpansionOptions {
        ExpansionOptions {
            low_order: self.expansion_low_order,
        }
    }
}

/// Outcome of training once per seed and evaluating each trained model.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub report: EvalReport,
    pub histories: Vec<TrainHistory>,
    pub models: Vec<Model>,
}

/// Trains one model per seed (with that seed) and evaluates it on the test
/// snapshots with the same seed.
pub fn run_experiment(graph: &TemporalGraph, config: &ExperimentConfig) -> Result<ExperimentResult> {
    if config.seeds.is_empty() {
        return Err(Error::Usage("at least one seed is required".into()));
    }
    test_snapshots(graph.len(), config.model.window)?;
    let h = construct_hthg(graph, config.hyper)?;
    let schema = schema_for(graph, &h, config.use_hyper);
    let mut rows = Vec::new();
    let mut histories = Vec::new();
    let mut models = Vec::new();
    let mut prepared: Option<Vec<PreparedSnapshot>> = None;
    for &seed in &config.seeds {
        let mut model = Model::new(&config.model, &schema, graph, seed)?;
        if prepared.is_none() {
            prepared = Some(prepare_snapshots(&model.encoder, graph, &h, config.expansion())?);
        }
        let prepared = prepared.as_deref().expect("prepared");
        let train = TrainConfig {
            seed,
            holdout: TEST_SNAPSHOTS,
            ..config.train.clone()
        };
        let history = train_model(&mut model, graph, prepared, &train)?;
        let report = evaluate(&model, graph, prepared, config.mode, &[seed])?;
        log::info!("seed {seed}: {}", report.summary());
        rows.extend(report.per_snapshot);
        histories.push(history);
        models.push(model);
    }
    Ok(ExperimentResult {
        report: EvalReport::from_results(config.mode, &config.seeds, rows)?,
        histories,
        models,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationVariant {
    Full,
    NoHyper,
    NoLow,
    NoUniform,
    NoTa,
    NoHa,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::Full,
        AblationVariant::NoHyper,
        AblationVariant::NoLow,
        AblationVariant::NoUniform,
        AblationVariant::NoTa,
        AblationVariant::NoHa,
    ];

    /// The configuration with this component removed.
    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoHyper => c.use_hyper = false,
            AblationVariant::NoLow => c.expansion_low_order = false,
            AblationVariant::NoUniform => c.hyper.p = None,
            AblationVariant::NoTa => c.model.temporal_attention = false,
            AblationVariant::NoHa => c.model.heterogeneous_attention = false,
        }
        c
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationVariant::Full => "full",
            AblationVariant::NoHyper => "no-hyper",
            AblationVariant::NoLow => "no-low",
            AblationVariant::NoUniform => "no-uniform",
            AblationVariant::NoTa => "no-ta",
            AblationVariant::NoHa => "no-ha",
        })
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.to_string() == s).ok_or_else(|| {
            Error::Usage(format!(
                "unknown variant `{s}` (full, no-hyper, no-low, no-uniform, no-ta, no-ha)"
            ))
        })
    }
}

pub fn run_ablation(graph: &TemporalGraph, base: &ExperimentConfig, variant: AblationVariant) -> Result<EvalReport> {
    Ok(run_experiment(graph, &variant.apply(base))?.report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: usize,
    pub hyperedges: usize,
    pub member_sum: usize,
    pub max_size: usize,
    pub expanded_nodes: usize,
    pub expanded_edges: usize,
    pub mean_auc: Option<f64>,
}

/// Hypergraph statistics for every cap in `p_values`, optionally with the
/// AUC of a model trained under each cap.
pub fn p_uniform_sweep(
    graph: &TemporalGraph,
    kind: HyperedgeKind,
    k: usize,
    p_values: &[usize],
    seed: u64,
    train: Option<&ExperimentConfig>,
) -> Result<Vec<SweepRow>> {
    if p_values.is_empty() {
        return Err(Error::Usage("no P values given".into()));
    }
    p_values
        .iter()
        .map(|&p| {
            let hc = HyperConfig {
                kind,
                k,
                p: Some(p),
                seed,
            };
            let h = construct_hthg(graph, hc)?;
            let stats = hypergraph_stats(graph, &h);
            let mean_auc = match train {
                Some(base) => {
                    let cfg = ExperimentConfig {
                        hyper: hc,
                        ..base.clone()
                    };
                    Some(run_experiment(graph, &cfg)?.report.mean_auc)
                }
                None => None,
            };
            Ok(SweepRow {
                p,
                hyperedges: stats.total_hyperedges(),
                member_sum: stats.total_members(),
                max_size: stats.max_size(),
                expanded_nodes: stats.total_expanded_nodes(),
                expanded_edges: stats.total_expanded_edges(),
                mean_auc,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "p",
        "hyperedges",
        "member_sum",
        "max_size",
        "expanded_nodes",
        "expanded_edges",
        "mean_auc",
    ])?;
    for r in rows {
        w.write_record([
            r.p.to_string(),
            r.hyperedges.to_string(),
            r.member_sum.to_string(),
            r.max_size.to_string(),
            r.expanded_nodes.to_string(),
            r.expanded_edges.to_string(),
            r.mean_auc.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Planted-community generator.
///
/// Each node type is split into `communities` groups by a seeded shuffle.
/// Every relation's pairs are linked independently per snapshot with
/// probability `p_in` inside a community and `p_out` across. An existing
/// edge survives to the next snapshot with probability `persistence`;
/// absent pairs appear at the rate that keeps the per-snapshot marginal
/// at exactly `p_in` / `p_out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub node_types: Vec<(String, usize)>,
    /// `(name, source type, target type)`
    pub relations: Vec<(String, String, String)>,
    pub communities: usize,
    pub snapshots: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub persistence: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            node_types: vec![("A".into(), 100), ("P".into(), 100), ("V".into(), 100)],
            relations: vec![
                ("writes".into(), "A".into(), "P".into()),
                ("published_in".into(), "P".into(), "V".into()),
                ("attends".into(), "A".into(), "V".into()),
            ],
            communities: 3,
            snapshots: 8,
            p_in: 0.05,
            p_out: 0.002,
            persistence: 0.9,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_in", self.p_in),
            ("p_out", self.p_out),
            ("persistence", self.persistence),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Usage(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.communities == 0 {
            return Err(Error::Usage("need at least one community".into()));
        }
        if (self.p_in >= 1.0 || self.p_out >= 1.0) && self.persistence < 1.0 {
            return Err(Error::Usage("edge probability 1 requires persistence 1".into()));
        }
        if self.p_in <= self.p_out {
            log::warn!("p_in {} <= p_out {}: no planted signal", self.p_in, self.p_out);
        }
        Ok(())
    }

    fn endpoint_pairs(&self, registry: &TypeRegistry) -> Result<Vec<(usize, NodeType, NodeType)>> {
        self.relations
            .iter()
            .map(|(name, s, d)| {
                let rel = registry.relation(name).expect("interned");
                let st = registry
                    .node_type(s)
                    .ok_or_else(|| Error::Schema(format!("unknown type {s}")))?;
                let dt = registry
                    .node_type(d)
                    .ok_or_else(|| Error::Schema(format!("unknown type {d}")))?;
                Ok((rel.0 as usize, st, dt))
            })
            .collect()
    }

    /// Expected number of edges in every snapshot.
    pub fn expected_edges(&self) -> f64 {
        let counts: std::collections::HashMap<&str, usize> =
            self.node_types.iter().map(|(n, c)| (n.as_str(), *c)).collect();
        let c = self.communities;
        let mut total = 0.0;
        for (_, s, d) in &self.relations {
            let (ns, nd) = (counts[s.as_str()], counts[d.as_str()]);
            let size = |n: usize, k: usize| n / c + usize::from(k < n % c);
            let mut inside = 0.0;
            for k in 0..c {
                let (a, b) = (size(ns, k) as f64, size(nd, k) as f64);
                inside += if s == d { a * (a - 1.0) / 2.0 } else { a * b };
            }
            let all = if s == d {
                (ns * ns.saturating_sub(1)) as f64 / 2.0
            } else {
                (ns * nd) as f64
            };
            total += inside * self.p_in + (all - inside) * self.p_out;
        }
        total
    }
}

/// Community of every node id, per node type (in spec order).
pub fn planted_communities(spec: &SyntheticSpec) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    spec.node_types
        .iter()
        .map(|&(_, n)| {
            let mut ids: Vec<usize> = (0..n).collect();
            ids.shuffle(&mut rng);
            let mut comm = vec![0; n];
            for (pos, &id) in ids.iter().enumerate() {
                comm[id] = pos % spec.communities;
            }
            comm
        })
        .collect()
}

pub fn generate_synthetic_htg(spec: &SyntheticSpec) -> Result<TemporalGraph> {
    spec.validate()?;
    let mut registry = TypeRegistry::new();
    for (name, _) in &spec.node_types {
        registry.intern_node_type(name)?;
    }
    for (name, s, d) in &spec.relations {
        let st = registry
            .node_type(s)
            .ok_or_else(|| Error::Schema(format!("relation {name}: unknown type {s}")))?;
        let dt = registry
            .node_type(d)
            .ok_or_else(|| Error::Schema(format!("relation {name}: unknown type {d}")))?;
        registry.intern_relation(name, st, dt)?;
    }
    registry.freeze();
    let comm = planted_communities(spec);
    let counts: Vec<usize> = spec.node_types.iter().map(|t| t.1).collect();
    let rels = spec.endpoint_pairs(&registry)?;

    let mut pairs: Vec<(TypedEdge, f64)> = Vec::new();
    for &(rel, st, dt) in &rels {
        let (si, di) = (st.0 as usize, dt.0 as usize);
        for u in 0..counts[si] {
            let from = if si == di { u + 1 } else { 0 };
            for v in from..counts[di] {
                let p = if comm[si][u] == comm[di][v] {
                    spec.p_in
                } else {
                    spec.p_out
                };
                let edge = TypedEdge {
                    src: NodeRef::new(st, u as u32),
                    rel: crate::graph::RelType(rel as u16),
                    dst: NodeRef::new(dt, v as u32),
                };
                pairs.push((edge, p));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let rho = spec.persistence;
    let mut alive = vec![false; pairs.len()];
    let mut snapshots = Vec::with_capacity(spec.snapshots);
    for t in 0..spec.snapshots {
        for (i, &(_, p)) in pairs.iter().enumerate() {
            let rate = if t == 0 {
                p
            } else if alive[i] {
                rho
            } else if p < 1.0 {
                (1.0 - rho) * p / (1.0 - p)
            } else {
                1.0
            };
            alive[i] = rng.random::<f64>() < rate;
        }
        let edges = pairs.iter().zip(&alive).filter(|(_, &a)| a).map(|(e, _)| e.0);
        snapshots.push(Snapshot::from_edges(t, edges));
    }
    TemporalGraph::new(registry, snapshots)
}

/// Nodes of a snapshot grouped by type.
pub fn nodes_by_type(s: &Snapshot, types: usize) -> Vec<BTreeSet<NodeRef>> {
    let mut out = vec![BTreeSet::new(); types];
    for &v in s.nodes() {
        out[v.ty.0 as usize].insert(v);
    }
    out
}
