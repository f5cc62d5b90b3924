mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hthgn::eval::{
    evaluate, generate_synthetic_htg, p_uniform_sweep, run_ablation, run_experiment, write_sweep_csv, AblationVariant,
    EvalReport,
};
use hthgn::graph::{read_snapshots, write_snapshots, TemporalGraph};
use hthgn::hyperedge::{construct_hthg, expand_with, hypergraph_stats, ExpansionOptions, HyperedgeKind};
use hthgn::numeric::{read_checkpoint, write_checkpoint};
use hthgn::objective::{gradient_check, prepare_snapshots, schema_for, train, Model};
use log::info;
use serde::Serialize;
use serde_json::{Map, Value};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "hthgn", version, about = "Heterogeneous temporal hypergraph link prediction")]
struct Cli {
    /// Flat JSON config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build hyperedges and write their statistics and the expanded graph.
    BuildHypergraph,
    /// Train one model with the root seed and save a checkpoint.
    Train,
    /// Evaluate the saved checkpoint, or train and evaluate one model per
    /// seed when there is none.
    Evaluate,
    /// Run ablation variants under the full protocol.
    Ablate {
        /// Variants to run (default: all).
        #[arg(long, value_delimiter = ',')]
        variants: Vec<AblationVariant>,
    },
    /// Hypergraph statistics for several size caps.
    SweepP {
        /// Caps to try, e.g. 10,50,100.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
    /// Write the planted synthetic dataset.
    GenSynthetic,
    /// Compare recorded gradients of the loss with finite differences.
    GradCheck,
}

/// Flag versions of the config keys.
#[derive(Args, Serialize, Default)]
struct Overrides {
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<HyperedgeKind>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<usize>,
    /// Disable the hyperedge size cap.
    #[arg(long, global = true)]
    #[serde(skip)]
    no_cap: bool,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hyper: Option<bool>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    low_order: Option<bool>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    heads: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    layers: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    window: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dropout: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_decay: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    negatives: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    holdout: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    nodes_per_type: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    snapshots: Option<usize>,
    /// Also train and evaluate at every cap in sweep-p.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep_train: Option<bool>,
}

impl Overrides {
    fn into_map(self) -> Result<Map<String, Value>> {
        let no_cap = self.no_cap;
        let Value::Object(mut m) = serde_json::to_value(&self)? else {
            bail!("flags did not serialize to an object");
        };
        if no_cap {
            m.insert("p".into(), Value::Null);
        }
        Ok(m)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HTHGN_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<hthgn::Error>()
                .is_some_and(|e| matches!(e, hthgn::Error::Usage(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = RunConfig::resolve(cli.config.as_deref(), cli.overrides.into_map()?)?;
    if let Some(jobs) = cli.jobs {
        set_jobs(jobs)?;
    }
    fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    write_json(&config.out.join("config.json"), &config)?;
    match cli.command {
        Command::GenSynthetic => gen_synthetic(&config)?,
        Command::BuildHypergraph => build_hypergraph(&config)?,
        Command::Train => train_once(&config)?,
        Command::Evaluate => evaluate_run(&config)?,
        Command::Ablate { variants } => ablate(&config, &variants)?,
        Command::SweepP { values } => sweep(&config, &values)?,
        Command::GradCheck => return grad_check(&config),
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(feature = "parallel")]
fn set_jobs(jobs: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build_global()
        .context("configuring worker threads")
}

#[cfg(not(feature = "parallel"))]
fn set_jobs(_jobs: usize) -> Result<()> {
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_graph(config: &RunConfig) -> Result<TemporalGraph> {
    let default = config.out.join("snapshots.tsv");
    let path = match &config.data {
        Some(p) => p.clone(),
        None if default.exists() => default,
        None => bail!("no data: pass --data or run gen-synthetic with the same --out first"),
    };
    info!("reading {}", path.display());
    let graph =
        read_snapshots(&path, config.features.as_deref()).with_context(|| format!("loading {}", path.display()))?;
    info!("{} snapshots", graph.len());
    Ok(graph)
}

fn gen_synthetic(config: &RunConfig) -> Result<()> {
    let graph = generate_synthetic_htg(&config.synthetic())?;
    let path = config.out.join("snapshots.tsv");
    let mut w = create(&path)?;
    write_snapshots(&graph, &mut w)?;
    w.flush()?;
    let edges: usize = graph.snapshots().iter().map(|s| s.edge_count()).sum();
    info!("wrote {} ({} snapshots, {edges} edges)", path.display(), graph.len());
    Ok(())
}

fn build_hypergraph(config: &RunConfig) -> Result<()> {
    let graph = load_graph(config)?;
    let h = construct_hthg(&graph, config.hyper_config())?;
    let stats = hypergraph_stats(&graph, &h);
    write_json(&config.out.join("hypergraph.json"), &stats)?;
    let schema = schema_for(&graph, &h, true);
    let options = ExpansionOptions {
        low_order: config.low_order,
    };
    let mut w = create(&config.out.join("expanded.tsv"))?;
    for (s, hs) in graph.snapshots().iter().zip(&h.snapshots) {
        expand_with(s, hs, &schema, options)?.write_tsv(&schema, &mut w)?;
    }
    w.flush()?;
    info!(
        "{} hyperedges, {} memberships, largest {}",
        stats.total_hyperedges(),
        stats.total_members(),
        stats.max_size()
    );
    Ok(())
}

fn train_once(config: &RunConfig) -> Result<()> {
    let graph = load_graph(config)?;
    let exp = config.experiment();
    let h = construct_hthg(&graph, exp.hyper)?;
    let (model, history) = train(
        &graph,
        &h,
        &exp.model,
        &config.train_config(config.seed),
        exp.expansion(),
        exp.use_hyper,
    )?;
    let mut w = create(&config.out.join("history.csv"))?;
    history.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&config.out.join("timings.csv"))?;
    history.write_timings(&mut w)?;
    w.flush()?;
    let mut w = create(&config.out.join("checkpoint.bin"))?;
    write_checkpoint(&mut w, &model.store.named_values())?;
    w.flush()?;
    if let (Some(first), Some(last)) = (history.epochs.first(), history.epochs.last()) {
        info!(
            "loss {:.4} -> {:.4} over {} epochs",
            first.loss,
            last.loss,
            history.len()
        );
    }
    Ok(())
}

fn evaluate_run(config: &RunConfig) -> Result<()> {
    let graph = load_graph(config)?;
    let exp = config.experiment();
    let checkpoint = config.out.join("checkpoint.bin");
    let report = if checkpoint.exists() {
        info!("evaluating {}", checkpoint.display());
        let h = construct_hthg(&graph, exp.hyper)?;
        let schema = schema_for(&graph, &h, exp.use_hyper);
        let mut model = Model::new(&exp.model, &schema, &graph, config.seed)?;
        let values = read_checkpoint(BufReader::new(File::open(&checkpoint)?))?;
        model.store.load_values(&values)?;
        let prepared = prepare_snapshots(&model.encoder, &graph, &h, exp.expansion())?;
        evaluate(&model, &graph, &prepared, exp.mode, &exp.seeds)?
    } else {
        info!("no checkpoint; training one model per seed");
        let result = run_experiment(&graph, &exp)?;
        for history in &result.histories {
            let mut w = create(&config.out.join(format!("history-{}.csv", history.seed)))?;
            history.write_csv(&mut w)?;
            w.flush()?;
        }
        result.report
    };
    report.validate()?;
    write_json(&config.out.join("metrics.json"), &report)?;
    println!("{}", report.summary());
    Ok(())
}

#[derive(Serialize)]
struct AblationEntry {
    variant: AblationVariant,
    report: EvalReport,
}

fn ablate(config: &RunConfig, variants: &[AblationVariant]) -> Result<()> {
    let graph = load_graph(config)?;
    let base = config.experiment();
    let variants = if variants.is_empty() {
        &AblationVariant::ALL[..]
    } else {
        variants
    };
    let mut entries = Vec::with_capacity(variants.len());
    for &variant in variants {
        info!("variant {variant}");
        let report = run_ablation(&graph, &base, variant)?;
        report.validate()?;
        println!("{variant:>10}  {}", report.summary());
        entries.push(AblationEntry { variant, report });
    }
    write_json(&config.out.join("ablation.json"), &entries)
}

fn sweep(config: &RunConfig, values: &[usize]) -> Result<()> {
    let graph = load_graph(config)?;
    let values = if values.is_empty() {
        &config.p_values[..]
    } else {
        values
    };
    let exp = config.experiment();
    let rows = p_uniform_sweep(
        &graph,
        config.kind,
        config.k,
        values,
        config.seed,
        config.sweep_train.then_some(&exp),
    )?;
    let mut w = create(&config.out.join("sweep.csv"))?;
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    info!("{} rows", rows.len());
    Ok(())
}

fn grad_check(config: &RunConfig) -> Result<ExitCode> {
    let graph = load_graph(config)?;
    let exp = config.experiment();
    let mut model_config = exp.model.clone();
    model_config.dropout = 0.0;
    let h = construct_hthg(&graph, exp.hyper)?;
    let schema = schema_for(&graph, &h, exp.use_hyper);
    let model = Model::new(&model_config, &schema, &graph, config.seed)?;
    let prepared = prepare_snapshots(&model.encoder, &graph, &h, exp.expansion())?;
    let report = gradient_check(
        &model,
        &graph,
        &prepared,
        config.holdout,
        config.negatives,
        config.grad_h,
        config.grad_tolerance,
        config.seed,
    )?;
    write_json(&config.out.join("gradcheck.json"), &report)?;
    println!(
        "{}: max relative error {:.3e} (tolerance {:.0e}, {} parameter groups)",
        if report.passed { "PASS" } else { "FAIL" },
        report.max_rel_error,
        report.tolerance,
        report.params.len()
    );
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
