//! Scenario files and the CSV outputs of a run.
//!
//! A scenario is flat `key = value` text, one key per line, `#` comments:
//!
//! ```text
//! topology = base.tl
//! strategy = bpd
//! rounds = 1000
//! seed = 7
//! faults.0 = 500 crash n3
//! ```
//!
//! Paths are relative to the scenario file.

use std::{
    collections::BTreeSet,
    fmt::Write as _,
    fs, io,
    path::{Path, PathBuf},
};

use thiserror::Error;

use crate::{
    bpd::{default_threshold, BpdConfig, BpdError},
    cost::{parse_cost, Cost},
    graph::{GraphError, NodeId},
    metrics::{bandwidth_kbps, deviation_pct, iterations_to_band},
    simnet::{FaultAction, FaultEvent, FaultSchedule, RoundStats, SimConfig, SimError, World},
    toplink::{build_graph, parse_toplink, ParseError},
    workloads::{true_average, Strategy},
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    InvalidValue { line: usize, key: String, value: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{source}")]
    Topology { path: PathBuf, source: ParseError },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Bpd(#[from] BpdError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StrategyKind {
    AllToAll,
    Gossip,
    Unmodified,
    Bpd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub topology_file: PathBuf,
    strategy: StrategyKind,
    pub gossip_fanout: usize,
    pub thresh: Option<Cost>,
    pub repair_period_rounds: u64,
    pub reply_timeout_rounds: u64,
    pub partition_repair: bool,
    pub sim: SimConfig,
    pub faults: Vec<FaultEvent>,
    pub output_dir: Option<PathBuf>,
    pub trace: bool,
}

fn invalid(line: usize, key: &str, value: &str) -> ScenarioError {
    ScenarioError::InvalidValue { line, key: key.to_string(), value: value.to_string() }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ScenarioError> {
    value.parse().map_err(|_| invalid(line, key, value))
}

fn positive<T: std::str::FromStr + PartialOrd + Default>(line: usize, key: &str, value: &str) -> Result<T, ScenarioError> {
    let v: T = num(line, key, value)?;
    if v <= T::default() {
        return Err(invalid(line, key, value));
    }
    Ok(v)
}

fn flag(line: usize, key: &str, value: &str) -> Result<bool, ScenarioError> {
    match value {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(invalid(line, key, value)),
    }
}

impl Scenario {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Scenario, ScenarioError> {
        let mut seen = BTreeSet::new();
        let mut topology = None;
        let mut strategy = None;
        let mut sc = Scenario {
            topology_file: PathBuf::new(),
            strategy: StrategyKind::Bpd,
            gossip_fanout: 3,
            thresh: None,
            repair_period_rounds: 200,
            reply_timeout_rounds: 5,
            partition_repair: true,
            sim: SimConfig::default(),
            faults: Vec::new(),
            output_dir: None,
            trace: false,
        };
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ScenarioError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ScenarioError::DuplicateKey { line, key: key.to_string() });
            }
            match key {
                "topology" => topology = Some(base_dir.join(value)),
                "strategy" => {
                    strategy = Some(match value {
                        "all_to_all" | "all-to-all" => StrategyKind::AllToAll,
                        "gossip" => StrategyKind::Gossip,
                        "unmodified" => StrategyKind::Unmodified,
                        "bpd" => StrategyKind::Bpd,
                        _ => return Err(invalid(line, key, value)),
                    })
                }
                "gossip_fanout" => sc.gossip_fanout = num(line, key, value)?,
                "thresh" => {
                    let t = parse_cost(value).filter(|t| *t > Cost::from_integer(0)).ok_or_else(|| invalid(line, key, value))?;
                    sc.thresh = Some(t);
                }
                "rounds" => sc.sim.n_rounds = positive(line, key, value)?,
                "seed" => sc.sim.seed = num(line, key, value)?,
                "payload_bytes" => sc.sim.payload_bytes = positive(line, key, value)?,
                "repair_period_rounds" => sc.repair_period_rounds = positive(line, key, value)?,
                "reply_timeout_rounds" => sc.reply_timeout_rounds = positive(line, key, value)?,
                "detection_rounds" => sc.sim.detection_rounds = positive(line, key, value)?,
                "round_period_ms" => sc.sim.round_period_ms = positive(line, key, value)?,
                "per_hop_delay_ms" => sc.sim.per_hop_delay_ms = positive(line, key, value)?,
                "de_window_rounds" => sc.sim.de_window_rounds = Some(positive(line, key, value)?),
                "epsilon" => {
                    let e: f64 = num(line, key, value)?;
                    if !(e > 0.0 && e <= 1.0) {
                        return Err(invalid(line, key, value));
                    }
                    sc.sim.epsilon = e;
                }
                "partition_repair" => sc.partition_repair = flag(line, key, value)?,
                "trace" => sc.trace = flag(line, key, value)?,
                "output_dir" => sc.output_dir = Some(base_dir.join(value)),
                k if k.starts_with("faults.") => {
                    let words: Vec<&str> = value.split_whitespace().collect();
                    let [round, action, node] = words[..] else { return Err(invalid(line, key, value)) };
                    let action = match action {
                        "crash" => FaultAction::Crash,
                        "recover" => FaultAction::Recover,
                        _ => return Err(invalid(line, key, value)),
                    };
                    sc.faults.push(FaultEvent { round: num(line, key, round)?, node: NodeId::from(node), action });
                }
                _ => return Err(ScenarioError::UnknownKey { line, key: key.to_string() }),
            }
        }
        sc.topology_file = topology.ok_or(ScenarioError::Missing("topology"))?;
        sc.strategy = strategy.ok_or(ScenarioError::Missing("strategy"))?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        Scenario::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn strategy(&self, n_nodes: usize) -> Result<Strategy, ScenarioError> {
        Ok(match self.strategy {
            StrategyKind::AllToAll => Strategy::AllToAll,
            StrategyKind::Gossip => Strategy::Gossip { fanout: self.gossip_fanout },
            StrategyKind::Unmodified => Strategy::Unmodified,
            StrategyKind::Bpd => {
                let thresh = match self.thresh {
                    Some(t) => t,
                    None => default_threshold(n_nodes)?,
                };
                Strategy::Bpd(BpdConfig {
                    thresh,
                    repair_period_rounds: self.repair_period_rounds,
                    reply_timeout_rounds: self.reply_timeout_rounds,
                    partition_repair: self.partition_repair,
                })
            }
        })
    }

    /// Loads the topology and sets up the simulator, without running it.
    pub fn world(&self) -> Result<World, ScenarioError> {
        let path = &self.topology_file;
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.clone(), source })?;
        let spec = parse_toplink(&text).map_err(|source| ScenarioError::Topology { path: path.clone(), source })?;
        let graph = build_graph(&spec, self.sim.seed)?;
        let strategy = self.strategy(graph.node_count())?;
        let schedule = FaultSchedule::new(self.faults.clone())?;
        let mut world = World::new(self.sim.clone(), &graph, strategy, schedule)?;
        if self.trace {
            world.enable_trace();
        }
        Ok(world)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub deviation_pct: Option<f64>,
    pub iterations_to_band: Option<u64>,
    pub messages_per_round: u64,
    pub bandwidth_kbps: f64,
    pub edges_initial: usize,
    pub edges_added: usize,
    /// Whether the live overlay ended strongly connected. Only meaningful
    /// for overlay strategies.
    pub connected: bool,
    pub mean_repair_delay: Option<f64>,
}

pub struct Outcome {
    pub world: World,
    pub stats: Vec<RoundStats>,
    pub summary: Summary,
}

impl Outcome {
    /// Whether the run ended in a state BPD promises to avoid.
    pub fn violated(&self) -> bool {
        matches!(self.world.strategy(), Strategy::Bpd(_)) && !self.summary.connected
    }
}

pub fn summarize(world: &World, stats: &[RoundStats]) -> Summary {
    let optimum = true_average(world.initial_values()).unwrap_or(0.0);
    let final_x = stats.last().map(|s| s.x.clone()).unwrap_or_default();
    let trace: Vec<_> = stats.iter().map(|s| s.x.clone()).collect();
    let total_bytes: u64 = stats.iter().map(|s| s.bytes).sum();
    let cfg = world.config();
    let overlay = world.assignment().effective_graph(world.up());
    let edges_added = if world.strategy().uses_overlay() {
        overlay.edge_set().difference(world.initial_edges()).count()
    } else {
        0
    };
    let delays = world.repair_delays();
    Summary {
        deviation_pct: deviation_pct(&final_x, optimum).ok(),
        iterations_to_band: iterations_to_band(&trace, optimum, 5.0),
        messages_per_round: stats.last().map_or(0, |s| s.messages),
        bandwidth_kbps: bandwidth_kbps(total_bytes, stats.len() as u64, cfg.round_period_ms, world.universe().len()),
        edges_initial: world.edges_initial(),
        edges_added,
        connected: world.overlay_graph().is_strongly_connected(),
        mean_repair_delay: (!delays.is_empty())
            .then(|| delays.iter().map(|d| d.delay_rounds).sum::<f64>() / delays.len() as f64),
    }
}

/// Runs a scenario in memory.
pub fn simulate(scenario: &Scenario) -> Result<Outcome, ScenarioError> {
    let mut world = scenario.world()?;
    let stats = world.run();
    let summary = summarize(&world, &stats);
    Ok(Outcome { world, stats, summary })
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

pub fn rounds_csv(stats: &[RoundStats]) -> String {
    let mut out = String::from("round,messages,control_messages,bytes,mean_de,min_de,max_x,min_x\n");
    for s in stats {
        let max_x = s.x.values().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_x = s.x.values().copied().fold(f64::INFINITY, f64::min);
        let (max_x, min_x) = if s.x.is_empty() { (0.0, 0.0) } else { (max_x, min_x) };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.round,
            s.messages,
            s.control_messages,
            s.bytes,
            f6(s.mean_de()),
            f6(if s.per_node_de.is_empty() { 0.0 } else { s.min_de() }),
            f6(max_x),
            f6(min_x)
        );
    }
    out
}

pub fn nodes_csv(stats: &[RoundStats]) -> String {
    let mut out = String::from("round,node,x,de\n");
    for s in stats {
        for (node, x) in &s.x {
            let de = s.per_node_de.get(node).copied().unwrap_or(0.0);
            let _ = writeln!(out, "{},{},{},{}", s.round, node, f6(*x), f6(de));
        }
    }
    out
}

pub fn summary_csv(summary: &Summary) -> String {
    let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
    format!(
        "deviation_pct,iterations_to_band,messages_per_round,bandwidth_kbps,edges_initial,edges_added\n{},{},{},{},{},{}\n",
        opt(summary.deviation_pct.map(f6)),
        opt(summary.iterations_to_band.map(|k| k.to_string())),
        summary.messages_per_round,
        f6(summary.bandwidth_kbps),
        summary.edges_initial,
        summary.edges_added
    )
}

/// Writes `rounds.csv`, `nodes.csv`, `summary.csv` and, if tracing was on,
/// `trace.log` into `dir`.
pub fn write_outputs(dir: &Path, outcome: &Outcome) -> Result<(), ScenarioError> {
    let io = |path: PathBuf| move |source| ScenarioError::Io { path, source };
    fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let files = [
        ("rounds.csv", rounds_csv(&outcome.stats)),
        ("nodes.csv", nodes_csv(&outcome.stats)),
        ("summary.csv", summary_csv(&outcome.summary)),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io(path.clone()))?;
    }
    let trace = outcome.world.trace();
    if !trace.is_empty() {
        let path = dir.join("trace.log");
        fs::write(&path, trace.join("\n") + "\n").map_err(io(path.clone()))?;
    }
    Ok(())
}

/// Runs a scenario and writes its outputs to `out_dir`, or to the scenario's
/// `output_dir`, or next to the scenario file.
pub fn run_scenario(scenario: &Scenario, out_dir: Option<&Path>) -> Result<Outcome, ScenarioError> {
    let outcome = simulate(scenario)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| scenario.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    write_outputs(&dir, &outcome)?;
    Ok(outcome)
}
