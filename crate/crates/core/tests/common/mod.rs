#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use hthgn::graph::{parse_snapshots, NodeRef, Snapshot, TemporalGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RELATIONS: [(&str, &str, &str); 4] = [
    ("writes", "A", "P"),
    ("cites", "P", "P"),
    ("in", "P", "V"),
    ("attends", "A", "V"),
];

/// Random heterogeneous graph over types A, P, V with at most `max_nodes`
/// nodes in total and average degree around `degree`, as TSV text.
pub fn random_tsv(seed: u64, snapshots: usize, max_nodes: usize, degree: f64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_type = [
        rng.random_range(1..=max_nodes / 3),
        rng.random_range(1..=max_nodes / 3),
        rng.random_range(1..=max_nodes / 3),
    ];
    let n: usize = per_type.iter().sum();
    let edges = ((n as f64 * degree / 2.0).round() as usize).max(1);
    let ty_index = |name: &str| ["A", "P", "V"].iter().position(|t| *t == name).unwrap();
    let mut out = String::new();
    for t in 0..snapshots {
        for _ in 0..edges {
            let (rel, a, b) = RELATIONS[rng.random_range(0..RELATIONS.len())];
            let i = rng.random_range(0..per_type[ty_index(a)]);
            let j = rng.random_range(0..per_type[ty_index(b)]);
            writeln!(out, "{t}\t{a}\t{i}\t{rel}\t{b}\t{j}").unwrap();
        }
    }
    out
}

pub fn random_graph(seed: u64, snapshots: usize, max_nodes: usize, degree: f64) -> TemporalGraph {
    parse_snapshots(random_tsv(seed, snapshots, max_nodes, degree).as_bytes()).unwrap()
}

/// All-pairs hop distances by Floyd-Warshall over the undirected edge list.
pub struct Distances {
    pub nodes: Vec<NodeRef>,
    index: BTreeMap<NodeRef, usize>,
    dist: Vec<Vec<usize>>,
}

pub const UNREACHABLE: usize = usize::MAX / 4;

impl Distances {
    pub fn new(s: &Snapshot) -> Self {
        let nodes: Vec<NodeRef> = s.nodes().to_vec();
        let index: BTreeMap<NodeRef, usize> = nodes.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let n = nodes.len();
        let mut dist = vec![vec![UNREACHABLE; n]; n];
        for (i, row) in dist.iter_mut().enumerate() {
            row[i] = 0;
        }
        for e in s.edges() {
            let (a, b) = (index[&e.src], index[&e.dst]);
            if a != b {
                dist[a][b] = 1;
                dist[b][a] = 1;
            }
        }
        for k in 0..n {
            for i in 0..n {
                let dik = dist[i][k];
                if dik == UNREACHABLE {
                    continue;
                }
                for j in 0..n {
                    let via = dik + dist[k][j];
                    if via < dist[i][j] {
                        dist[i][j] = via;
                    }
                }
            }
        }
        Self { nodes, index, dist }
    }

    pub fn get(&self, a: NodeRef, b: NodeRef) -> usize {
        self.dist[self.index[&a]][self.index[&b]]
    }

    /// Nodes `u` with `lo <= dist(v, u) <= hi`.
    pub fn band(&self, v: NodeRef, lo: usize, hi: usize) -> BTreeSet<NodeRef> {
        let row = &self.dist[self.index[&v]];
        self.nodes
            .iter()
            .zip(row)
            .filter(|(_, &d)| d >= lo && d <= hi)
            .map(|(u, _)| *u)
            .collect()
    }
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}
