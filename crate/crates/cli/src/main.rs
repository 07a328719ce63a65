use std::{
    collections::BTreeSet,
    fmt::Write as _,
    fs,
    path::{Path, PathBuf},
    process::ExitCode,
};

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use toplink_core::{
    bpd::{default_threshold, run_repair_cycle, BpdConfig, BpdError},
    cost::parse_cost,
    graph::DirectedGraph,
    overlay::form_groups,
    scenario::{run_scenario, Scenario, ScenarioError},
    toplink::{build_graph, export_manifest, parse_toplink},
    NodeId, TopologySpec,
};

/// Experiment runner for group-based overlays.
///
/// Log verbosity is read from TOPLINK_LOG (e.g. `TOPLINK_LOG=debug`).
#[derive(Parser)]
#[command(name = "toplink", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a topology file and report on the graph it describes.
    Validate {
        file: PathBuf,
        /// Seed for random presets.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a scenario and write rounds.csv, nodes.csv and summary.csv.
    Run {
        scenario: PathBuf,
        /// Output directory; overrides the scenario's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show what one repair cycle does to a topology.
    BpdTrace {
        file: PathBuf,
        /// Distance bound; defaults to ceil((N-1)/2).
        #[arg(long)]
        thresh: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the deployment manifest derived from a topology file.
    Manifest {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: 1, err: e.into() }
    }
}

fn violation(err: anyhow::Error) -> Failure {
    Failure { code: 2, err }
}

fn load_topology(path: &Path, seed: u64) -> Result<(TopologySpec, DirectedGraph)> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let spec = parse_toplink(&text).map_err(|e| anyhow!("{}:{e}", path.display()))?;
    let graph = build_graph(&spec, seed).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok((spec, graph))
}

fn validate(file: &Path, seed: u64) -> Result<String, Failure> {
    let (spec, graph) = load_topology(file, seed)?;
    let mut out = String::new();
    let connected = graph.is_strongly_connected();
    writeln!(
        out,
        "{} nodes, {} edges, {}",
        graph.node_count(),
        graph.edge_count(),
        if connected { "strongly connected" } else { "not strongly connected" }
    )?;
    writeln!(out, "topology {}", spec.preset)?;
    for n in graph.nodes() {
        writeln!(out, "  {n}: out {} in {}", graph.out_degree(n), graph.in_degree(n))?;
    }
    if !connected {
        log::warn!("{}: not strongly connected ({} unreachable pairs)", file.display(), graph.unreachable_pairs());
    }
    Ok(out)
}

fn run(path: &Path, out: Option<&Path>) -> Result<String, Failure> {
    let scenario = Scenario::load(path)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| scenario.output_dir.clone())
        .unwrap_or_else(|| path.with_extension("out"));
    let outcome = match run_scenario(&scenario, Some(&dir)) {
        Ok(o) => o,
        Err(e) if is_runtime(&e) => return Err(violation(e.into())),
        Err(e) => return Err(e.into()),
    };
    let s = &outcome.summary;
    let mut text = String::new();
    writeln!(text, "strategy {}", outcome.world.strategy())?;
    writeln!(text, "rounds {}", outcome.stats.len())?;
    writeln!(text, "messages_per_round {}", s.messages_per_round)?;
    writeln!(text, "edges {} (+{})", s.edges_initial, s.edges_added)?;
    match s.deviation_pct {
        Some(d) => writeln!(text, "deviation_pct {d:.6}")?,
        None => writeln!(text, "deviation_pct none")?,
    }
    match s.iterations_to_band {
        Some(k) => writeln!(text, "iterations_to_band {k}")?,
        None => writeln!(text, "iterations_to_band none")?,
    }
    writeln!(text, "bandwidth_kbps {:.3}", s.bandwidth_kbps)?;
    if let Some(last) = outcome.stats.last() {
        writeln!(text, "final mean_de {:.6}", last.mean_de())?;
    }
    if let Some(d) = s.mean_repair_delay {
        writeln!(text, "mean_repair_delay_rounds {d:.3}")?;
    }
    writeln!(text, "output {}", dir.display())?;
    info!("wrote {}", dir.display());
    if outcome.violated() {
        print!("{text}");
        return Err(violation(anyhow!("live overlay is not strongly connected at the end of the run")));
    }
    Ok(text)
}

fn is_runtime(e: &ScenarioError) -> bool {
    matches!(e, ScenarioError::Bpd(BpdError::NotConnected { .. }) | ScenarioError::Bpd(BpdError::NoQuiescence(_)))
}

fn bpd_trace(file: &Path, thresh: Option<&str>, seed: u64) -> Result<String, Failure> {
    let (_, graph) = load_topology(file, seed)?;
    let thresh = match thresh {
        Some(t) => parse_cost(t).ok_or_else(|| anyhow!("invalid threshold `{t}`"))?,
        None => default_threshold(graph.node_count())?,
    };
    let cfg = BpdConfig::new(thresh);
    let mut asg = form_groups(&graph);
    let all: BTreeSet<NodeId> = asg.nodes().cloned().collect();
    let mut out = String::new();
    writeln!(out, "threshold {thresh}")?;
    let report = match run_repair_cycle(&mut asg, &cfg) {
        Ok(r) => r,
        Err(e @ BpdError::NotConnected { .. }) => return Err(violation(e.into())),
        Err(e) => return Err(e.into()),
    };
    writeln!(out, "stage 1 path tables:")?;
    for (node, table) in &report.tables {
        let row: Vec<String> = table.entries().iter().map(|(k, e)| format!("{k}:{}", e.depth)).collect();
        writeln!(out, "  {node}: {}", row.join(" "))?;
    }
    writeln!(out, "stage 2 joins:")?;
    if report.joins.is_empty() {
        writeln!(out, "  no updates")?;
    }
    for j in &report.joins {
        writeln!(out, "  {} joins {} as {} ({:?})", j.join.node, j.join.grp, j.join.role, j.join.cause)?;
    }
    let eff = asg.effective_graph(&all);
    let dist = eff.all_pairs_shortest_paths();
    let ids: Vec<&NodeId> = all.iter().collect();
    writeln!(out, "distances after update:")?;
    let width = ids.iter().map(|n| n.as_str().len()).max().unwrap_or(1).max(3);
    write!(out, "  {:>width$}", "")?;
    for v in &ids {
        write!(out, " {:>width$}", v.as_str())?;
    }
    writeln!(out)?;
    for u in &ids {
        write!(out, "  {:>width$}", u.as_str())?;
        for v in &ids {
            let cell = if u == v {
                "0".to_string()
            } else {
                dist[*u].get(*v).map_or_else(|| "inf".to_string(), |d| d.to_string())
            };
            write!(out, " {cell:>width$}")?;
        }
        writeln!(out)?;
    }
    match eff.max_distance() {
        Some(d) => writeln!(out, "max distance {d} ({})", if d <= thresh { "bounded" } else { "exceeds threshold" })?,
        None => writeln!(out, "max distance inf")?,
    }
    Ok(out)
}

fn manifest(file: &Path, seed: u64) -> Result<String, Failure> {
    let (spec, graph) = load_topology(file, seed)?;
    Ok(export_manifest(&form_groups(&graph), &spec))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TOPLINK_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Validate { file, seed } => validate(file, *seed),
        Cmd::Run { scenario, out } => run(scenario, out.as_deref()),
        Cmd::BpdTrace { file, thresh, seed } => bpd_trace(file, thresh.as_deref(), *seed),
        Cmd::Manifest { file, seed } => manifest(file, *seed),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(Failure { code, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
