//! Future-neighbour contrastive training.
//!
//! For a window ending at snapshot `t`, the neighbours of a node in
//! snapshot `t + 1` are its positives and uniformly drawn non-neighbours
//! are its negatives. A two-layer discriminator scores concatenated
//! embeddings and the model minimises binary cross-entropy over both sets.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, ModelConfig, PreparedSnapshot, WindowOutput};
use crate::error::{Error, Result};
use crate::graph::{NodeRef, TemporalGraph};
use crate::hyperedge::{expand_with, ExpandedSchema, ExpansionOptions, HypergraphSnapshot, TemporalHypergraph};
use crate::numeric::{
    finite_diff_check, glorot_uniform, Adam, AdamConfig, GradCheckReport, Matrix, ParamId, ParamStore, Tape, Var,
};
use crate::par;

/// Floor applied inside the logs of the loss.
pub const LOG_FLOOR: f64 = 1e-12;

/// Positive and negative pairs supervising one window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContrastBatch {
    pub window_end: usize,
    pub anchors: Vec<NodeRef>,
    pub positives: Vec<(NodeRef, NodeRef)>,
    pub negatives: Vec<(NodeRef, NodeRef)>,
    /// Negatives drawn per positive.
    pub q: usize,
}

impl ContrastBatch {
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }
}

/// First snapshot of the window of length `window` ending at `window_end`.
pub fn window_start(window_end: usize, window: usize) -> usize {
    (window_end + 1).saturating_sub(window)
}

/// Every node present in snapshots `start..=end`.
pub fn window_nodes(graph: &TemporalGraph, start: usize, end: usize) -> BTreeSet<NodeRef> {
    graph.snapshots()[start..=end]
        .iter()
        .flat_map(|s| s.nodes().iter().copied())
        .collect()
}

/// Positives are the neighbours in snapshot `window_end + 1` of every node
/// that also appears in the window, one ordered pair per direction. For
/// each positive, `q` negatives `(i, v)` are drawn uniformly from the nodes
/// of snapshot `window_end + 1` in the window that are neither `i` nor a
/// neighbour of `i`, without repeating a pair.
pub fn sample_contrastive_pairs<R: Rng + ?Sized>(
    graph: &TemporalGraph,
    window_end: usize,
    window: usize,
    q: usize,
    rng: &mut R,
) -> Result<ContrastBatch> {
    if q == 0 {
        return Err(Error::contract("Q must be at least 1"));
    }
    let future = graph
        .snapshot(window_end + 1)
        .ok_or_else(|| Error::contract(format!("no supervision snapshot after t={window_end}")))?;
    let present = window_nodes(graph, window_start(window_end, window), window_end);
    let pool: Vec<usize> = (0..future.node_count())
        .filter(|&i| present.contains(&future.nodes()[i]))
        .collect();
    let mut anchors = Vec::new();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for &i in &pool {
        let v = future.nodes()[i];
        let mut neigh: Vec<usize> = future
            .adjacency(i)
            .iter()
            .map(|&(j, _)| j)
            .filter(|&j| j != i && present.contains(&future.nodes()[j]))
            .collect();
        neigh.sort_unstable();
        neigh.dedup();
        if neigh.is_empty() {
            continue;
        }
        anchors.push(v);
        positives.extend(neigh.iter().map(|&j| (v, future.nodes()[j])));
        let excluded: HashSet<usize> = future
            .adjacency(i)
            .iter()
            .map(|&(j, _)| j)
            .chain(std::iter::once(i))
            .collect();
        let candidates: Vec<usize> = pool.iter().copied().filter(|j| !excluded.contains(j)).collect();
        let wanted = neigh.len() * q;
        if candidates.len() < wanted {
            log::warn!(
                "anchor {v} at t={}: only {} non-neighbours for {wanted} negatives",
                window_end + 1,
                candidates.len()
            );
        }
        let mut drawn: Vec<usize> = rand::seq::index::sample(rng, candidates.len(), wanted.min(candidates.len()))
            .into_iter()
            .map(|k| candidates[k])
            .collect();
        drawn.sort_unstable();
        negatives.extend(drawn.into_iter().map(|j| (v, future.nodes()[j])));
    }
    Ok(ContrastBatch {
        window_end,
        anchors,
        positives,
        negatives,
        q,
    })
}

/// `D(a, b) = sigmoid(W2 · ReLU(W1 [a ∥ b] + b1) + b2)`
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
    hidden: usize,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(hidden: usize, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        Ok(Self {
            fc1_w: store.add("disc.fc1.w", glorot_uniform(hidden, 2 * hidden, rng))?,
            fc1_b: store.add("disc.fc1.b", Matrix::zeros(1, hidden))?,
            fc2_w: store.add("disc.fc2.w", glorot_uniform(1, hidden, rng))?,
            fc2_b: store.add("disc.fc2.b", Matrix::zeros(1, 1))?,
            hidden,
        })
    }

    /// Pre-sigmoid scores for row-aligned pairs (n × 1).
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, a: Var, b: Var) -> Result<Var> {
        for v in [a, b] {
            if tape.shape(v).1 != self.hidden {
                return Err(Error::shape(format!(
                    "discriminator expects width {}, got {:?}",
                    self.hidden,
                    tape.shape(v)
                )));
            }
        }
        let x = tape.concat_cols(&[a, b])?;
        let w1 = tape.param(store, self.fc1_w);
        let b1 = tape.param(store, self.fc1_b);
        let h = tape.dense(x, w1, Some(b1))?;
        let h = tape.relu(h);
        let w2 = tape.param(store, self.fc2_w);
        let b2 = tape.param(store, self.fc2_b);
        tape.dense(h, w2, Some(b2))
    }

    /// Probability that `a` and `b` are linked, for single vectors.
    pub fn score(&self, store: &ParamStore, a: &[f64], b: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let av = tape.leaf(Matrix::row_vector(a));
        let bv = tape.leaf(Matrix::row_vector(b));
        let l = self.logits(&mut tape, store, av, bv)?;
        Ok(crate::numeric::sigmoid(tape.value(l).item()?))
    }

    /// Probabilities for many pairs at once.
    pub fn score_rows(&self, store: &ParamStore, a: Matrix, b: Matrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let av = tape.leaf(a);
        let bv = tape.leaf(b);
        let l = self.logits(&mut tape, store, av, bv)?;
        Ok(tape
            .value(l)
            .data()
            .iter()
            .map(|&x| crate::numeric::sigmoid(x))
            .collect())
    }
}

/// `-Σ_pos ln D - Σ_neg ln(1 - D)` with both logs floored at
/// [`LOG_FLOOR`]. `1 - D` is evaluated as `sigmoid(-logit)`.
pub fn bce_from_logits(tape: &mut Tape, pos: Option<Var>, neg: Option<Var>) -> Result<Var> {
    let mut parts = Vec::new();
    if let Some(p) = pos {
        let d = tape.sigmoid(p);
        let l = tape.log_clamped(d, LOG_FLOOR);
        parts.push(tape.sum(l));
    }
    if let Some(n) = neg {
        let flipped = tape.scale(n, -1.0);
        let d = tape.sigmoid(flipped);
        let l = tape.log_clamped(d, LOG_FLOOR);
        parts.push(tape.sum(l));
    }
    if parts.is_empty() {
        return Err(Error::contract("empty contrastive batch"));
    }
    let total = tape.add_all(&parts)?;
    Ok(tape.scale(total, -1.0))
}

/// Contrastive loss of one batch over the embeddings of its window.
pub fn contrastive_loss(
    tape: &mut Tape,
    store: &ParamStore,
    disc: &Discriminator,
    batch: &ContrastBatch,
    embeddings: &WindowOutput,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::contract("empty contrastive batch"));
    }
    let side = |pairs: &[(NodeRef, NodeRef)], tape: &mut Tape| -> Result<Option<Var>> {
        if pairs.is_empty() {
            return Ok(None);
        }
        let lookup = |v: NodeRef| embeddings.index_of(v).ok_or(Error::NotFound(v));
        let a: Vec<usize> = pairs.iter().map(|p| lookup(p.0)).collect::<Result<_>>()?;
        let b: Vec<usize> = pairs.iter().map(|p| lookup(p.1)).collect::<Result<_>>()?;
        let za = tape.gather_rows(embeddings.z, &a)?;
        let zb = tape.gather_rows(embeddings.z, &b)?;
        Ok(Some(disc.logits(tape, store, za, zb)?))
    };
    let pos = side(&batch.positives, tape)?;
    let neg = side(&batch.negatives, tape)?;
    bce_from_logits(tape, pos, neg)
}

/// Encoder, discriminator and the store holding their weights.
#[derive(Clone, Debug)]
pub struct Model {
    pub encoder: EncoderParams,
    pub disc: Discriminator,
    pub store: ParamStore,
}

impl Model {
    /// Glorot-initialised weights drawn from `seed`.
    pub fn new(config: &ModelConfig, schema: &ExpandedSchema, graph: &TemporalGraph, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(
            config,
            schema,
            graph.features(),
            &graph.id_bounds(),
            &mut store,
            &mut rng,
        )?;
        let disc = Discriminator::new(config.hidden, &mut store, &mut rng)?;
        Ok(Self { encoder, disc, store })
    }

    pub fn config(&self) -> &ModelConfig {
        self.encoder.config()
    }
}

/// Schema matching a hypergraph: with hyperedge types unless `hyper` is off.
pub fn schema_for(graph: &TemporalGraph, h: &TemporalHypergraph, hyper: bool) -> ExpandedSchema {
    ExpandedSchema::new(graph.registry(), hyper.then_some((h.config.kind, h.config.k)))
}

/// Star-expands and lays out every snapshot.
pub fn prepare_snapshots(
    encoder: &EncoderParams,
    graph: &TemporalGraph,
    h: &TemporalHypergraph,
    options: ExpansionOptions,
) -> Result<Vec<PreparedSnapshot>> {
    if h.snapshots.len() != graph.len() {
        return Err(Error::contract(format!(
            "{} hypergraph snapshots for {} graph snapshots",
            h.snapshots.len(),
            graph.len()
        )));
    }
    let empty: Vec<HypergraphSnapshot> = (0..graph.len())
        .map(|t| HypergraphSnapshot {
            t,
            hyperedges: Vec::new(),
        })
        .collect();
    let use_hyper = encoder.schema().hyper().is_some();
    par::map_collect_min(graph.len(), 2, |t| {
        let hs = if use_hyper { &h.snapshots[t] } else { &empty[t] };
        let xs = expand_with(&graph.snapshots()[t], hs, encoder.schema(), options)?;
        encoder.prepare(&xs, graph.features())
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Negatives per positive.
    pub negatives: usize,
    /// Trailing snapshots never used for training.
    pub holdout: usize,
    pub seed: u64,
    /// Report a validation AUC every this many epochs.
    pub validate_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            adam: AdamConfig::default(),
            negatives: 1,
            holdout: 3,
            seed: 0,
            validate_every: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// `epoch,loss[,val_auc]`. Wall-clock times are left out so that the
    /// file is reproducible; see [`TrainHistory::write_timings`].
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let with_val = self.epochs.iter().any(|e| e.val_auc.is_some());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["epoch", "loss"];
        if with_val {
            header.push("val_auc");
        }
        w.write_record(&header)?;
        for e in &self.epochs {
            let mut rec = vec![e.epoch.to_string(), e.loss.to_string()];
            if with_val {
                rec.push(e.val_auc.map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `epoch,seconds`
    pub fn write_timings<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "seconds"])?;
        for e in &self.epochs {
            w.write_record([e.epoch.to_string(), format!("{:.6}", e.seconds)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Window ends used for training: from `window - 1` (or earlier for short
/// graphs) up to the snapshot before the last training snapshot.
pub fn training_window_ends(graph_len: usize, window: usize, holdout: usize) -> Result<Vec<usize>> {
    let usable = graph_len.saturating_sub(holdout);
    if usable < 2 {
        return Err(Error::contract(format!(
            "{graph_len} snapshots with {holdout} held out leave no supervision snapshot"
        )));
    }
    let last = usable - 1;
    let first = (window - 1).min(last - 1);
    Ok((first..last).collect())
}

/// Everything needed to evaluate the training loss repeatedly.
pub struct TrainingSet<'a> {
    pub graph: &'a TemporalGraph,
    pub prepared: &'a [PreparedSnapshot],
    pub window_ends: Vec<usize>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(
        graph: &'a TemporalGraph,
        prepared: &'a [PreparedSnapshot],
        window: usize,
        holdout: usize,
    ) -> Result<Self> {
        Ok(Self {
            graph,
            prepared,
            window_ends: training_window_ends(graph.len(), window, holdout)?,
        })
    }

    pub fn sample_batches<R: Rng + ?Sized>(&self, window: usize, q: usize, rng: &mut R) -> Result<Vec<ContrastBatch>> {
        self.window_ends
            .iter()
            .map(|&we| sample_contrastive_pairs(self.graph, we, window, q, rng))
            .collect()
    }

    /// Summed loss over all windows, recorded on `tape`. Each snapshot is
    /// encoded once and shared by the windows that contain it.
    pub fn loss(
        &self,
        tape: &mut Tape,
        model: &Model,
        store: &ParamStore,
        batches: &[ContrastBatch],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let window = model.config().window;
        let first = window_start(self.window_ends[0], window);
        let last = *self.window_ends.last().expect("nonempty");
        let mut outputs = Vec::with_capacity(last + 1);
        for t in 0..=last {
            outputs.push(if t >= first {
                Some(
                    model
                        .encoder
                        .snapshot_forward(tape, store, &self.prepared[t], dropout.as_deref_mut())?
                        .z,
                )
            } else {
                None
            });
        }
        let mut parts = Vec::new();
        for (batch, &we) in batches.iter().zip(&self.window_ends) {
            if batch.is_empty() {
                continue;
            }
            let win: Vec<(&PreparedSnapshot, Var)> = (window_start(we, window)..=we)
                .map(|t| (&self.prepared[t], outputs[t].expect("encoded")))
                .collect();
            let out = model.encoder.temporal_forward(tape, store, &win)?;
            parts.push(contrastive_loss(tape, store, &model.disc, batch, &out)?);
        }
        if parts.is_empty() {
            return Err(Error::contract("no training pairs in any window"));
        }
        tape.add_all(&parts)
    }
}

/// Trains for `config.epochs` epochs with one Adam step per epoch on the
/// loss summed over all rolling windows. Negatives and dropout are redrawn
/// every epoch from streams derived from `config.seed`.
pub fn train(
    graph: &TemporalGraph,
    h: &TemporalHypergraph,
    model_config: &ModelConfig,
    config: &TrainConfig,
    options: ExpansionOptions,
    hyper: bool,
) -> Result<(Model, TrainHistory)> {
    let schema = schema_for(graph, h, hyper);
    let mut model = Model::new(model_config, &schema, graph, config.seed)?;
    let prepared = prepare_snapshots(&model.encoder, graph, h, options)?;
    let history = train_model(&mut model, graph, &prepared, config)?;
    Ok((model, history))
}

/// Training loop over already prepared snapshots.
pub fn train_model(
    model: &mut Model,
    graph: &TemporalGraph,
    prepared: &[PreparedSnapshot],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    let mut history = TrainHistory {
        seed: config.seed,
        epochs: Vec::with_capacity(config.epochs),
    };
    if config.epochs == 0 {
        return Ok(history);
    }
    let window = model.config().window;
    let set = TrainingSet::new(graph, prepared, window, config.holdout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(config.adam);
    let dropout_on = model.config().dropout > 0.0;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let batches = set.sample_batches(window, config.negatives, &mut rng)?;
        let mut tape = Tape::new();
        let loss = set.loss(&mut tape, model, &model.store, &batches, dropout_on.then_some(&mut rng))?;
        let value = tape.value(loss).item()?;
        let grads = tape.gradients(loss)?;
        drop(tape);
        model.store.accumulate(&grads);
        adam.step(&mut model.store);
        let val_auc = match config.validate_every {
            Some(every) if every > 0 && epoch % every == 0 => {
                validation_auc(model, graph, prepared, config.holdout, config.seed).ok()
            }
            _ => None,
        };
        log::debug!("epoch {epoch}: loss {value:.6}");
        history.epochs.push(EpochRecord {
            epoch,
            loss: value,
            seconds: started.elapsed().as_secs_f64(),
            val_auc,
        });
    }
    Ok(history)
}

/// AUC on the last training snapshot, predicted from the window before it.
pub fn validation_auc(
    model: &Model,
    graph: &TemporalGraph,
    prepared: &[PreparedSnapshot],
    holdout: usize,
    seed: u64,
) -> Result<f64> {
    let tau = graph
        .len()
        .checked_sub(holdout + 1)
        .filter(|&t| t >= 1)
        .ok_or_else(|| Error::contract("no validation snapshot"))?;
    let r = crate::eval::score_snapshot(model, graph, prepared, tau, crate::eval::EvalMode::Link, seed)?;
    Ok(r.auc)
}

/// Finite-difference check of the full training loss with fixed batches
/// and dropout disabled.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    model: &Model,
    graph: &TemporalGraph,
    prepared: &[PreparedSnapshot],
    holdout: usize,
    negatives: usize,
    h: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if model.config().dropout != 0.0 {
        return Err(Error::contract("gradient check requires dropout 0"));
    }
    let window = model.config().window;
    let set = TrainingSet::new(graph, prepared, window, holdout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batches = set.sample_batches(window, negatives, &mut rng)?;
    let mut store = model.store.clone();
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = set.loss(&mut tape, model, &store, &batches, None)?;
    tape.backward(loss, &mut store)?;
    drop(tape);
    finite_diff_check(
        |s| {
            let mut tape = Tape::new();
            let l = set.loss(&mut tape, model, s, &batches, None)?;
            tape.value(l).item()
        },
        &store,
        h,
        tolerance,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::toy::{node, toy_graph};
    use crate::graph::{Snapshot, TypedEdge};
    use approx::assert_abs_diff_eq;

    fn toy_twice() -> TemporalGraph {
        let g = toy_graph();
        let edges: Vec<TypedEdge> = g.snapshots()[0].edges().to_vec();
        TemporalGraph::new(
            g.registry().clone(),
            vec![Snapshot::from_edges(0, edges.clone()), Snapshot::from_edges(1, edges)],
        )
        .unwrap()
    }

    #[test]
    fn toy_positives_are_the_toy_edges() {
        let g = toy_twice();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_contrastive_pairs(&g, 0, 1, 1, &mut rng).unwrap();
        assert_eq!(b.positives.len(), 10);
        let undirected: BTreeSet<(NodeRef, NodeRef)> = b.positives.iter().map(|&(a, c)| (a.min(c), a.max(c))).collect();
        let expected: BTreeSet<(NodeRef, NodeRef)> = g.snapshots()[1]
            .edges()
            .iter()
            .map(|e| (e.src.min(e.dst), e.src.max(e.dst)))
            .collect();
        assert_eq!(undirected, expected);
        assert_eq!(undirected.len(), 5);
        for &(i, v) in &b.negatives {
            assert_ne!(i, v);
            assert!(!g.snapshots()[1].has_edge_between(i, v));
        }
        let again = sample_contrastive_pairs(&g, 0, 1, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b, again);
        assert!(sample_contrastive_pairs(&g, 1, 1, 1, &mut rng).is_err());
    }

    #[test]
    fn single_future_neighbour() {
        let g = toy_twice();
        let a2 = node(&g, "A", 2);
        let p1 = node(&g, "P", 1);
        let b = sample_contrastive_pairs(&g, 0, 1, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let pos: Vec<_> = b.positives.iter().filter(|p| p.0 == a2).collect();
        assert_eq!(pos, vec![&(a2, p1)]);
        let neg: Vec<_> = b.negatives.iter().filter(|p| p.0 == a2).collect();
        assert_eq!(neg.len(), 1);
        assert!(neg[0].1 != a2 && neg[0].1 != p1);
    }

    fn disc_store(d: usize) -> (Discriminator, ParamStore) {
        let mut store = ParamStore::new();
        let disc = Discriminator::new(d, &mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        (disc, store)
    }

    #[test]
    fn discriminator_range_and_order() {
        let (disc, store) = disc_store(4);
        let a = [0.3, -1.0, 2.0, 0.5];
        let b = [1.0, 0.2, -0.7, 0.0];
        let ab = disc.score(&store, &a, &b).unwrap();
        let ba = disc.score(&store, &b, &a).unwrap();
        assert!(ab > 0.0 && ab < 1.0);
        assert_ne!(ab, ba);
        let mut zero = store.clone();
        for p in zero.iter_mut() {
            p.value.fill(0.0);
        }
        assert_eq!(disc.score(&zero, &a, &b).unwrap(), 0.5);
        assert!(disc.score(&store, &a, &b[..3]).is_err());
    }

    #[test]
    fn zeroed_half_ignores_that_endpoint() {
        let (disc, mut store) = disc_store(3);
        let w = &mut store.get_mut(disc.fc1_w).value;
        for r in 0..3 {
            for c in 3..6 {
                w.row_mut(r)[c] = 0.0;
            }
        }
        let a = [0.1, 0.9, -0.3];
        let s1 = disc.score(&store, &a, &[1.0, 2.0, 3.0]).unwrap();
        let s2 = disc.score(&store, &a, &[-5.0, 0.0, 7.0]).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn loss_closed_forms() {
        let mut tape = Tape::new();
        let pos = tape.leaf(Matrix::zeros(3, 1));
        let neg = tape.leaf(Matrix::zeros(2, 1));
        let l = bce_from_logits(&mut tape, Some(pos), Some(neg)).unwrap();
        assert_abs_diff_eq!(
            tape.value(l).item().unwrap(),
            5.0 * std::f64::consts::LN_2,
            epsilon = 1e-12
        );

        let mut tape = Tape::new();
        let pos = tape.leaf(Matrix::filled(3, 1, 40.0));
        let neg = tape.leaf(Matrix::filled(2, 1, -40.0));
        let l = bce_from_logits(&mut tape, Some(pos), Some(neg)).unwrap();
        assert!(tape.value(l).item().unwrap() < 1e-15);

        let mut tape = Tape::new();
        let pos = tape.leaf(Matrix::filled(1, 1, -1e6));
        let l = bce_from_logits(&mut tape, Some(pos), None).unwrap();
        let v = tape.value(l).item().unwrap();
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, -LOG_FLOOR.ln(), epsilon = 1e-9);

        let mut tape = Tape::new();
        assert!(bce_from_logits(&mut tape, None, None).is_err());
    }

    #[test]
    fn window_ends() {
        assert_eq!(training_window_ends(8, 3, 3).unwrap(), vec![2, 3]);
        assert_eq!(training_window_ends(2, 3, 0).unwrap(), vec![0]);
        assert!(training_window_ends(4, 3, 3).is_err());
    }
}
