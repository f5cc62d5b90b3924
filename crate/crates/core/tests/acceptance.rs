//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{random_graph, random_tsv, Distances};
use hthgn::encoder::{EmbeddingTable, ModelConfig};
use hthgn::eval::{
    embeddings_before, generate_synthetic_htg, p_uniform_sweep, ranking_metrics, run_experiment, AblationVariant,
    EvalReport, ExperimentConfig, ExperimentResult, SyntheticSpec,
};
use hthgn::graph::{parse_snapshots, NodeRef, TemporalGraph};
use hthgn::hyperedge::{
    build_hyperedge, construct_hthg, star_expand, uniformize, ExpandedSchema, HyperConfig, HyperedgeKind,
};
use hthgn::numeric::Tape;
use hthgn::objective::{gradient_check, prepare_snapshots, schema_for, train, Model, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, limit: Duration) -> Outcome {
    if elapsed < limit {
        Ok(format!("{:.2}s", elapsed.as_secs_f64()))
    } else {
        Err(format!(
            "took {:.1}s, limit {:.0}s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        ))
    }
}

fn node(g: &TemporalGraph, ty: &str, id: u32) -> NodeRef {
    NodeRef::new(g.registry().node_type(ty).unwrap(), id)
}

fn members(e: Option<hthgn::hyperedge::Hyperedge>) -> BTreeSet<NodeRef> {
    e.map(|e| e.members.into_iter().collect()).unwrap_or_default()
}

fn golden_toy_hyperedges() -> Outcome {
    let start = Instant::now();
    let text = "0\tA\t1\twrites\tP\t1\n\
                0\tA\t1\tattends\tV\t1\n\
                0\tA\t2\twrites\tP\t1\n\
                0\tA\t3\twrites\tP\t1\n\
                0\tP\t2\tpublished\tV\t1\n";
    let g = parse_snapshots(text.as_bytes()).map_err(|e| e.to_string())?;
    let s = &g.snapshots()[0];
    let a1 = node(&g, "A", 1);
    let one = members(build_hyperedge(s, a1, HyperedgeKind::KHop, 1).unwrap());
    let two = members(build_hyperedge(s, a1, HyperedgeKind::KHop, 2).unwrap());
    let want_one: BTreeSet<_> = [node(&g, "P", 1), node(&g, "V", 1)].into();
    let want_two: BTreeSet<_> = [
        node(&g, "P", 1),
        node(&g, "V", 1),
        node(&g, "A", 2),
        node(&g, "A", 3),
        node(&g, "P", 2),
    ]
    .into();
    ensure!(one == want_one, "1-hop(A1) = {one:?}");
    ensure!(two == want_two, "2-hop(A1) = {two:?}");
    within(start.elapsed(), Duration::from_secs(1))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut checked = 0usize;
    for seed in 0..50u64 {
        let degree = 0.5 + (seed % 8) as f64 * 0.5;
        let g = random_graph(seed, 1, 200, degree);
        let s = &g.snapshots()[0];
        ensure!(
            s.node_count() <= 200 && g.registry().node_type_count() == 3,
            "bad instance {seed}"
        );
        let dist = Distances::new(s);
        for &v in s.nodes() {
            let mut previous = BTreeSet::new();
            for k in 1..=3 {
                let hop = members(build_hyperedge(s, v, HyperedgeKind::KHop, k).unwrap());
                let ring = members(build_hyperedge(s, v, HyperedgeKind::KRing, k).unwrap());
                ensure!(
                    hop == dist.band(v, 1, k),
                    "graph {seed}: {k}-hop of {v:?} differs from oracle"
                );
                ensure!(
                    ring == dist.band(v, k, k),
                    "graph {seed}: {k}-ring of {v:?} differs from oracle"
                );
                let diff: BTreeSet<_> = hop.difference(&previous).copied().collect();
                ensure!(ring == diff, "graph {seed}: ring is not hop(k) minus hop(k-1)");
                previous = hop;
                checked += 2;
            }
        }
    }
    let t = within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{checked} hyperedges over 50 graphs, {t}"))
}

fn uniform_contract() -> Outcome {
    let ps = [1usize, 2, 3, 5, 10, 20, 50, 100, 1000];
    for seed in 0..50u64 {
        let g = random_graph(seed, 2, 150, 1.0 + (seed % 5) as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &v in g.snapshots()[0].nodes() {
            for p in [1usize, 3, 7] {
                if let Some(e) = build_hyperedge(&g.snapshots()[0], v, HyperedgeKind::KHop, 2).unwrap() {
                    let raw = e.members.len();
                    let capped = uniformize(e, p, &mut rng);
                    ensure!(
                        capped.members.len() == p.min(raw),
                        "graph {seed}: |e| {} for P {p}, raw {raw}",
                        capped.members.len()
                    );
                }
            }
        }
        for kind in [HyperedgeKind::KHop, HyperedgeKind::KRing] {
            for &p in &ps {
                let config = HyperConfig {
                    kind,
                    k: 3,
                    p: Some(p),
                    seed,
                };
                let h = construct_hthg(&g, config).unwrap();
                let schema = ExpandedSchema::new(g.registry(), Some((kind, 3)));
                for (s, hs) in g.snapshots().iter().zip(&h.snapshots) {
                    let x = star_expand(s, hs, &schema).unwrap();
                    ensure!(
                        x.edge_count() <= s.edge_count() + p * s.node_count(),
                        "graph {seed}: |E*| {} > |E| {} + {p}|V| {}",
                        x.edge_count(),
                        s.edge_count(),
                        s.node_count()
                    );
                }
            }
            let rows = p_uniform_sweep(&g, kind, 3, &ps, seed, None).unwrap();
            ensure!(
                rows.windows(2).all(|w| w[0].member_sum <= w[1].member_sum),
                "graph {seed}: sweep not monotone"
            );
        }
    }
    Ok("50 graphs, exact".into())
}

fn attention_normalisation() -> Outcome {
    let mut rows = 0usize;
    for seed in 0..5u64 {
        let g = random_graph(seed, 3, 50, 3.0);
        let config = ModelConfig {
            hidden: 8,
            heads: 2,
            window: 3,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let h = construct_hthg(&g, HyperConfig::default()).unwrap();
        let model = Model::new(&config, &schema_for(&g, &h, true), &g, seed).unwrap();
        let prepared = prepare_snapshots(&model.encoder, &g, &h, Default::default()).unwrap();
        let window: Vec<_> = prepared.iter().collect();
        let mut tape = Tape::new();
        let out = model
            .encoder
            .encode_on_tape(&mut tape, &model.store, &window, None)
            .unwrap();
        for plan in &prepared {
            let mut t = Tape::new();
            let so = model
                .encoder
                .snapshot_forward(&mut t, &model.store, plan, None)
                .unwrap();
            for layer in &so.layers {
                for (a, &var) in layer.attention.iter().enumerate() {
                    let alpha = t.attention_weights(var).ok_or("attention var without weights")?;
                    let edges = plan.relation_edges(a);
                    for s in 0..edges.out_nodes().len() {
                        for k in 0..config.heads {
                            let sum: f64 = edges.edges_into(s).map(|e| alpha[e * config.heads + k]).sum();
                            ensure!((sum - 1.0).abs() <= 1e-9, "alpha row sums to {sum}");
                            rows += 1;
                        }
                    }
                }
                let beta = t.value(layer.beta.ok_or("missing beta")?);
                ensure!((beta.sum() - 1.0).abs() <= 1e-9, "beta sums to {}", beta.sum());
                rows += 1;
            }
        }
        for tg in &out.gammas {
            for &gv in &tg.rows {
                let m = tape.value(gv);
                for r in 0..m.rows() {
                    let sum: f64 = m.row(r).iter().sum();
                    ensure!((sum - 1.0).abs() <= 1e-9, "gamma row sums to {sum}");
                    rows += 1;
                }
            }
        }
    }
    Ok(format!("{rows} distributions"))
}

fn gradient_check_30_nodes() -> Outcome {
    let start = Instant::now();
    let spec = SyntheticSpec {
        node_types: vec![("A".into(), 10), ("P".into(), 10), ("V".into(), 10)],
        communities: 2,
        snapshots: 5,
        p_in: 0.3,
        p_out: 0.05,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let g = generate_synthetic_htg(&spec).map_err(|e| e.to_string())?;
    let config = ModelConfig {
        hidden: 8,
        heads: 2,
        window: 3,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let h = construct_hthg(
        &g,
        HyperConfig {
            kind: HyperedgeKind::KRing,
            k: 2,
            p: Some(5),
            seed: 0,
        },
    )
    .unwrap();
    let model = Model::new(&config, &schema_for(&g, &h, true), &g, 11).unwrap();
    let prepared = prepare_snapshots(&model.encoder, &g, &h, Default::default()).unwrap();
    let report = gradient_check(&model, &g, &prepared, 1, 2, 1e-6, 1e-3, 5).map_err(|e| e.to_string())?;
    ensure!(report.passed, "max relative error {:.3e}", report.max_rel_error);
    let t = within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!(
        "max relative error {:.3e} over {} parameter groups, {t}",
        report.max_rel_error,
        report.params.len()
    ))
}

fn training_sanity() -> Outcome {
    let start = Instant::now();
    let g = generate_synthetic_htg(&SyntheticSpec::default()).map_err(|e| e.to_string())?;
    let base = ExperimentConfig::default();
    let untrained = run_experiment(
        &g,
        &ExperimentConfig {
            train: TrainConfig {
                epochs: 0,
                ..base.train.clone()
            },
            ..base.clone()
        },
    )
    .map_err(|e| e.to_string())?;
    let trained = run_experiment(&g, &base).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let ratios: Vec<f64> = trained
        .histories
        .iter()
        .map(|h| {
            let l = h.losses();
            l[l.len() - 1] / l[0]
        })
        .collect();
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let detail = format!(
        "loss ratio {mean_ratio:.3}, AUC {:.4} (untrained {:.4}), {:.0}s",
        trained.report.mean_auc,
        untrained.report.mean_auc,
        elapsed.as_secs_f64()
    );
    ensure!(trained.histories.iter().all(|h| h.len() == 300), "expected 300 epochs");
    ensure!(mean_ratio <= 0.5, "{detail}");
    ensure!(trained.report.mean_auc >= 0.85, "{detail}");
    ensure!((untrained.report.mean_auc - 0.5).abs() <= 0.05, "{detail}");
    ensure!(elapsed < Duration::from_secs(600), "{detail}");
    Ok(detail)
}

fn metric_correctness() -> Outcome {
    let (auc, ap) = ranking_metrics(&[0.9, 0.8, 0.4, 0.3], &[true, false, true, false], 0).unwrap();
    ensure!(
        (auc - 0.75).abs() <= 1e-4 && (ap - 0.8333).abs() <= 1e-4,
        "AUC {auc}, AP {ap}"
    );
    let (auc, ap) = ranking_metrics(&[0.9, 0.7, 0.2, 0.1], &[true, true, false, false], 0).unwrap();
    ensure!(auc == 1.0 && ap == 1.0, "separable: AUC {auc}, AP {ap}");
    Ok(format!("AUC 0.7500, AP {:.4}", (1.0 + 2.0 / 3.0) / 2.0))
}

fn seconds_per_epoch(g: &TemporalGraph) -> Result<(f64, usize), String> {
    let hc = HyperConfig::default();
    let h = construct_hthg(g, hc).map_err(|e| e.to_string())?;
    let schema = ExpandedSchema::new(g.registry(), Some((hc.kind, hc.k)));
    let expanded: usize = g
        .snapshots()
        .iter()
        .zip(&h.snapshots)
        .map(|(s, hs)| star_expand(s, hs, &schema).unwrap().edge_count())
        .sum();
    let config = TrainConfig {
        epochs: 8,
        ..TrainConfig::default()
    };
    let (_, history) =
        train(g, &h, &ModelConfig::default(), &config, Default::default(), true).map_err(|e| e.to_string())?;
    let mut secs: Vec<f64> = history.epochs.iter().skip(1).map(|e| e.seconds).collect();
    secs.sort_by(f64::total_cmp);
    Ok((secs[secs.len() / 2], expanded))
}

fn complexity_trend() -> Outcome {
    let sparse = SyntheticSpec::default();
    let dense = SyntheticSpec {
        p_in: 2.0 * sparse.p_in,
        p_out: 2.0 * sparse.p_out,
        ..sparse.clone()
    };
    let (t1, e1) = seconds_per_epoch(&generate_synthetic_htg(&sparse).unwrap())?;
    let (t2, e2) = seconds_per_epoch(&generate_synthetic_htg(&dense).unwrap())?;
    let detail = format!(
        "|E*| x{:.2}, epoch time x{:.2} ({:.3}s -> {:.3}s)",
        e2 as f64 / e1 as f64,
        t2 / t1,
        t1,
        t2
    );
    ensure!(t2 / t1 < 2.5, "{detail}");
    Ok(detail)
}

fn schema_valid(report: &EvalReport) -> Result<(), String> {
    report.validate().map_err(|e| e.to_string())?;
    let mut json = Vec::new();
    report.write_json(&mut json).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_slice(&json).map_err(|e| e.to_string())?;
    for key in [
        "mode",
        "per_snapshot",
        "mean_auc",
        "mean_ap",
        "std_auc",
        "std_ap",
        "seeds",
    ] {
        ensure!(v.get(key).is_some(), "report JSON lacks `{key}`");
    }
    Ok(())
}

fn final_embeddings(g: &TemporalGraph, config: &ExperimentConfig, result: &ExperimentResult) -> EmbeddingTable {
    let h = construct_hthg(g, config.hyper).unwrap();
    let model = &result.models[0];
    let prepared = prepare_snapshots(&model.encoder, g, &h, config.expansion()).unwrap();
    embeddings_before(model, &prepared, g.len() - 1).unwrap()
}

fn ablation_harness() -> Outcome {
    let g = generate_synthetic_htg(&SyntheticSpec::default()).unwrap();
    let base = ExperimentConfig {
        train: TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        },
        seeds: vec![0, 1],
        ..ExperimentConfig::default()
    };
    let mut aucs = Vec::new();
    let mut tables = Vec::new();
    for variant in AblationVariant::ALL {
        let config = variant.apply(&base);
        let result = run_experiment(&g, &config).map_err(|e| format!("{variant}: {e}"))?;
        schema_valid(&result.report).map_err(|e| format!("{variant}: {e}"))?;
        aucs.push(format!("{variant} {:.3}", result.report.mean_auc));
        if matches!(variant, AblationVariant::Full | AblationVariant::NoHyper) {
            tables.push(final_embeddings(&g, &config, &result));
        }
    }
    let (full, plain) = (&tables[0], &tables[1]);
    let shared: Vec<NodeRef> = plain
        .nodes()
        .iter()
        .copied()
        .filter(|v| full.get(*v).is_some())
        .collect();
    ensure!(!shared.is_empty(), "no shared entity nodes");
    ensure!(
        shared.iter().any(|&v| full.get(v) != plain.get(v)),
        "no-hyper embeddings equal the full model's"
    );
    Ok(format!("6 valid reports ({})", aucs.join(", ")))
}

fn user_data_harness() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("snapshots.tsv");
    std::fs::write(&path, random_tsv(21, 7, 60, 3.0)).map_err(|e| e.to_string())?;
    let g = parse_snapshots(std::fs::File::open(&path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let config = ExperimentConfig {
        train: TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        },
        model: ModelConfig {
            hidden: 8,
            heads: 2,
            ..ModelConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&g, &config).map_err(|e| e.to_string())?.report;
    schema_valid(&report)?;
    let summary = report.summary();
    let pm = |s: &str| {
        let parts: Vec<&str> = s.split(" ± ").collect();
        parts.len() == 2
            && parts
                .iter()
                .all(|p| p.parse::<f64>().is_ok() && p.split('.').nth(1).map(str::len) == Some(2))
    };
    let auc = summary
        .split("AUC ")
        .nth(1)
        .and_then(|s| s.split("  ").next())
        .unwrap_or("");
    let ap = summary
        .split("AP ")
        .nth(1)
        .and_then(|s| s.split("  ").next())
        .unwrap_or("");
    ensure!(report.seeds.len() == 5 && pm(auc) && pm(ap), "summary `{summary}`");
    Ok(format!("TSV input, `{summary}`"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("toy hyperedges", golden_toy_hyperedges),
        ("oracle equivalence", oracle_equivalence),
        ("P-uniform contract", uniform_contract),
        ("attention normalisation", attention_normalisation),
        ("gradient check", gradient_check_30_nodes),
        ("training sanity", training_sanity),
        ("ranking metrics", metric_correctness),
        ("complexity trend", complexity_trend),
        ("ablation harness", ablation_harness),
        ("user data harness", user_data_harness),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == n.to_string() || name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail}");
            }
        }
        std::io::stdout().flush().ok();
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
