use std::sync::Arc;

use hthgn::encoder::ModelConfig;
use hthgn::eval::{generate_synthetic_htg, SyntheticSpec};
use hthgn::hyperedge::{construct_hthg, ExpansionOptions, HyperConfig, HyperedgeKind};
use hthgn::numeric::{finite_diff_check, AttentionEdges, Matrix, ParamId, ParamStore, Segments, Tape, Var};
use hthgn::objective::{gradient_check, prepare_snapshots, schema_for, Model};
use hthgn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-3;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn positive(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(0.5..2.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Checks `build` after contracting its output with fixed random weights, so
/// outputs with constant sums (softmax rows) still give a useful loss.
fn check<F>(params: Vec<Matrix>, seed: u64, build: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync + Send,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = params
        .into_iter()
        .enumerate()
        .map(|(i, m)| store.add(format!("p{i}"), m).unwrap())
        .collect();
    let loss = |store: &ParamStore, tape: &mut Tape| -> Result<Var> {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
        let out = build(tape, &vars)?;
        let (r, c) = tape.shape(out);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let w = tape.leaf(random(r, c, &mut rng));
        let prod = tape.mul(out, w)?;
        Ok(tape.sum(prod))
    };
    let mut tape = Tape::new();
    let l = loss(&store, &mut tape).unwrap();
    tape.backward(l, &mut store).unwrap();
    let report = finite_diff_check(
        |s| {
            let mut tape = Tape::new();
            let l = loss(s, &mut tape)?;
            tape.value(l).item()
        },
        &store,
        H,
        TOL,
        seed,
    )
    .unwrap();
    assert!(report.passed, "{report:#?}");
}

#[test]
fn matmul_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ps = vec![random(3, 4, &mut rng), random(4, 5, &mut rng), random(5, 4, &mut rng)];
    check(ps, 1, |t, v| {
        let ab = t.matmul(v[0], v[1])?;
        let abct = t.matmul_t(ab, false, v[2], false)?;
        let nt = t.matmul_nt(abct, v[0])?;
        t.matmul_t(v[0], true, nt, false)
    });
}

#[test]
fn dense_with_and_without_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ps = vec![random(6, 3, &mut rng), random(4, 3, &mut rng), random(1, 4, &mut rng)];
    check(ps, 2, |t, v| {
        let a = t.dense(v[0], v[1], Some(v[2]))?;
        let b = t.dense(v[0], v[1], None)?;
        t.mul(a, b)
    });
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ps = vec![random(4, 3, &mut rng), random(4, 3, &mut rng), positive(4, 3, &mut rng)];
    check(ps, 3, |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(s, v[2])?;
        let th = t.tanh(d);
        let sg = t.sigmoid(v[1]);
        let r = t.reciprocal(v[2])?;
        let lg = t.log_clamped(v[2], 1e-12);
        let af = t.affine(v[0], 1.5, -0.25);
        let sc = t.scale(af, 0.7);
        let all = t.add_all(&[th, sg, r, lg, sc])?;
        t.mul(all, v[0])
    });
}

#[test]
fn activations_away_from_kinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ps = vec![random(5, 4, &mut rng)];
    check(ps, 4, |t, v| {
        let r = t.relu(v[0]);
        let l = t.leaky_relu(v[0], 0.2);
        let s = t.add(r, l)?;
        t.mul(s, v[0])
    });
}

#[test]
fn broadcasting_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ps = vec![
        random(4, 3, &mut rng),
        random(1, 3, &mut rng),
        random(4, 1, &mut rng),
        random(1, 1, &mut rng),
    ];
    check(ps, 5, |t, v| {
        let a = t.add_row(v[0], v[1])?;
        let b = t.mul_col(a, v[2])?;
        let c = t.mul_scalar(b, v[3])?;
        let d = t.row_dot(c, v[0])?;
        let m = t.mean(c)?;
        let e = t.mul_scalar(v[2], m)?;
        t.add(d, e)
    });
}

#[test]
fn row_gathers_and_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ps = vec![random(5, 3, &mut rng)];
    check(ps, 6, |t, v| {
        let rows: Arc<[Option<usize>]> = vec![Some(4), None, Some(0), Some(4), Some(2)].into();
        let g = t.gather(v[0], rows)?;
        let gr = t.gather_rows(v[0], &[1, 1, 3])?;
        let segs = Segments::from_targets(&[Some(0), None, Some(2), Some(0), Some(1)], 3)?;
        let ss = t.segment_sum(g, Arc::new(segs))?;
        let both = t.concat_rows(&[ss, gr])?;
        let wide = t.concat_cols(&[both, both])?;
        let sl = t.slice_cols(wide, 2, 3)?;
        t.mul(sl, sl)
    });
}

#[test]
fn row_softmax_plain_and_masked() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ps = vec![random(3, 4, &mut rng)];
    check(ps, 7, |t, v| {
        let a = t.row_softmax(v[0], None)?;
        let mask = [
            true, false, true, true, //
            false, true, false, false, //
            true, true, true, true,
        ];
        let b = t.row_softmax(v[0], Some(&mask))?;
        t.add(a, b)
    });
}

#[test]
fn multi_head_attention_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pairs = [(0, 1), (0, 2), (0, 3), (1, 0), (2, 0), (2, 3), (3, 3), (4, 1)];
    let edges = Arc::new(AttentionEdges::new(&pairs));
    let (n, d, k) = (5, 6, 2);
    let src = edges.src_nodes().len();
    let ps = vec![
        random(n, d, &mut rng),
        random(src, d, &mut rng),
        random(k, d / k, &mut rng),
    ];
    check(ps, 8, move |t, v| {
        t.attention(v[0], v[1], v[2], edges.clone(), 0.2, None)
    });
}

#[test]
fn attention_kernel_with_fixed_dropout_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pairs = [(0, 1), (0, 2), (1, 2), (1, 0), (2, 1)];
    let edges = Arc::new(AttentionEdges::new(&pairs));
    let (n, d, k) = (3, 4, 2);
    let src = edges.src_nodes().len();
    let mask: Arc<[f64]> = (0..pairs.len() * k)
        .map(|i| if i % 3 == 0 { 0.0 } else { 1.25 })
        .collect();
    let ps = vec![
        random(n, d, &mut rng),
        random(src, d, &mut rng),
        random(k, d / k, &mut rng),
    ];
    check(ps, 9, move |t, v| {
        t.attention(v[0], v[1], v[2], edges.clone(), 0.2, Some(mask.clone()))
    });
}

fn small_instance() -> (ModelConfig, hthgn::graph::TemporalGraph) {
    let spec = SyntheticSpec {
        node_types: vec![("A".into(), 10), ("P".into(), 10), ("V".into(), 10)],
        communities: 2,
        snapshots: 5,
        p_in: 0.3,
        p_out: 0.05,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let graph = generate_synthetic_htg(&spec).unwrap();
    let config = ModelConfig {
        hidden: 8,
        heads: 2,
        window: 3,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    (config, graph)
}

#[test]
fn full_loss_matches_finite_differences() {
    let (config, graph) = small_instance();
    let h = construct_hthg(
        &graph,
        HyperConfig {
            kind: HyperedgeKind::KRing,
            k: 2,
            p: Some(5),
            seed: 0,
        },
    )
    .unwrap();
    let schema = schema_for(&graph, &h, true);
    let model = Model::new(&config, &schema, &graph, 11).unwrap();
    let prepared = prepare_snapshots(&model.encoder, &graph, &h, ExpansionOptions::default()).unwrap();
    let report = gradient_check(&model, &graph, &prepared, 1, 2, H, TOL, 5).unwrap();
    let names: Vec<&str> = report.params.iter().map(|p| p.name.as_str()).collect();
    for group in [
        "input.",
        "layer0.score",
        "layer1.rel",
        "layer1.sem.q",
        "temporal.",
        "disc.fc1.w",
    ] {
        assert!(names.iter().any(|n| n.starts_with(group)), "missing {group}");
    }
    assert!(report.passed, "{report:#?}");
}

#[test]
fn ablated_encoders_match_finite_differences() {
    let (config, graph) = small_instance();
    let h = construct_hthg(&graph, HyperConfig::default()).unwrap();
    for (ta, ha) in [(false, true), (true, false)] {
        let config = ModelConfig {
            temporal_attention: ta,
            heterogeneous_attention: ha,
            ..config.clone()
        };
        let schema = schema_for(&graph, &h, false);
        let model = Model::new(&config, &schema, &graph, 2).unwrap();
        let prepared = prepare_snapshots(&model.encoder, &graph, &h, ExpansionOptions::default()).unwrap();
        let report = gradient_check(&model, &graph, &prepared, 1, 1, H, TOL, 6).unwrap();
        assert!(report.passed, "ta={ta} ha={ha}: {report:#?}");
    }
}
