//! Command-line driver for the trust-storage pipeline.
//!
//! `stats` prints dataset-level counts, `experiment` runs one of the three
//! sweeps and emits CSV, `scope-dump` prints the movement-derived scope
//! partition as JSON, and `chain-verify` checks a chain dump. Every command
//! accepts `--config` with `key = value` lines (TOML, or bare key=value)
//! mirroring the flags; explicit flags win.
//!
//! Exit codes: 1 for an invalid invocation or a failed verification, 2 for
//! missing or unreadable dataset files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use trustscope_core::{
    build_graph, dataset_stats, filter_movements, label_propagation, parse_checkins,
    parse_social_edges, read_chain_ndjson, rows_to_csv, run_experiment, sample_microcells,
    select_terminals, summarize, ExperimentError, ExperimentPlan, IngestError, LedgerError,
    LocationId, ParsedEdges, PreparedDataset, ScopingMode, SimConfig, Sweep, SweepRow,
    DEFAULT_DENSITY_FACTOR, DEFAULT_MAX_ITERATIONS,
};

const EXIT_INVALID: i32 = 1;
const EXIT_DATASET: i32 = 2;

struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }

    fn dataset(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATASET,
            message: message.into(),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io(_) => CliError::dataset(e.to_string()),
            IngestError::SampleTooLarge { .. } => CliError::invalid(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Ingest(inner) => inner.into(),
            other => CliError::invalid(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "trustscope",
    version,
    about = "Movement-scoped trust storage: dataset stats, scoping, ledgers, and experiment sweeps"
)]
struct Cli {
    /// Config file with key = value lines mirroring the flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print node, edge, check-in, and location counts for a dataset.
    Stats(StatsArgs),
    /// Run a sweep; one CSV row per (point, seed, mode) plus a mean summary.
    Experiment(ExperimentArgs),
    /// Print the scope partition of one sampled world as JSON.
    ScopeDump(ScopeDumpArgs),
    /// Verify a chain dump written as JSON lines.
    ChainVerify(ChainVerifyArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Directory holding a check-in log and a social edge list.
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
    /// Check-in log, plain or gzip.
    #[arg(long, value_name = "FILE")]
    checkins: Option<PathBuf>,
    /// Social edge list, plain or gzip.
    #[arg(long, value_name = "FILE")]
    edges: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExperimentKind {
    Consumers,
    Providers,
    Movements,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Mm,
    Sm,
    Both,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Which knob to sweep (default consumers).
    #[arg(long, value_enum)]
    experiment: Option<ExperimentKind>,
    /// Microcells sampled per seed (default 500).
    #[arg(long)]
    cells: Option<usize>,
    /// Providers per microcell when not swept (default 40).
    #[arg(long)]
    providers: Option<usize>,
    /// Consumers per microcell when not swept (default 100).
    #[arg(long)]
    consumers: Option<usize>,
    /// Service sessions per provider (default 40).
    #[arg(long)]
    services: Option<usize>,
    /// Movement fraction when not swept (default 1.0).
    #[arg(long)]
    movement_fraction: Option<f64>,
    /// Comma-separated run seeds (default 0,1,2,3,4).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Scoping modes to run (default both).
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Comma-separated sweep points; defaults depend on the experiment.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    /// Ranked locations per requested cell in the sampling universe.
    #[arg(long)]
    density_factor: Option<usize>,
    /// CSV output path; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScopeDumpArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Microcells to sample (default 500).
    #[arg(long)]
    cells: Option<usize>,
    /// Sample and partition seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of movements kept (default 1.0).
    #[arg(long)]
    movement_fraction: Option<f64>,
    /// Ranked locations per requested cell in the sampling universe.
    #[arg(long)]
    density_factor: Option<usize>,
    /// Also write the microcell graph as from,to,weight CSV.
    #[arg(long, value_name = "FILE")]
    graph_out: Option<PathBuf>,
    /// JSON output path; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ChainVerifyArgs {
    /// Chain dump to verify (one JSON block per line).
    chain_file: PathBuf,
    /// Scope id the dump belongs to.
    #[arg(long, default_value_t = 0)]
    scope_id: u64,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors; anything else is an invalid
            // invocation and exits 1 with the usage text clap rendered.
            let kind = e.kind();
            let _ = e.print();
            let code = match kind {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_INVALID,
            };
            std::process::exit(code);
        }
    };
    let config = match load_config(cli.config.as_deref()) {
        Ok(config) => config,
        Err(e) => fail(e),
    };
    let outcome = match cli.command {
        Command::Stats(args) => stats_command(&args, &config),
        Command::Experiment(args) => experiment_command(&args, &config),
        Command::ScopeDump(args) => scope_dump_command(&args, &config),
        Command::ChainVerify(args) => chain_verify_command(&args, &config),
    };
    if let Err(e) = outcome {
        fail(e);
    }
}

fn fail(e: CliError) -> ! {
    eprintln!("error: {}", e.message);
    std::process::exit(e.code);
}

/// Key/value settings from `--config`, keys normalized to snake_case.
#[derive(Default)]
struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::invalid(format!("config key {key}: cannot parse {raw:?}"))
            }),
        }
    }

    fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(|item| item.trim().parse::<T>())
                .collect::<Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| CliError::invalid(format!("config key {key}: cannot parse {raw:?}"))),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }
}

fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

fn flatten_toml(value: &toml::Value) -> Option<String> {
    match value {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        toml::Value::Array(items) => {
            let parts: Option<Vec<String>> = items.iter().map(flatten_toml).collect();
            parts.map(|p| p.join(","))
        }
        _ => None,
    }
}

/// Loads `key = value` settings; TOML first, bare `key=value` lines as a
/// fallback for INI-style files.
fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::dataset(format!("cannot read config {}: {e}", path.display())))?;
    let mut entries = BTreeMap::new();
    if let Ok(table) = text.parse::<toml::Table>() {
        for (key, value) in &table {
            // Section tables are flattened: [run] cells = 5 sets "cells".
            if let toml::Value::Table(section) = value {
                for (child, child_value) in section {
                    if let Some(flat) = flatten_toml(child_value) {
                        entries.insert(normalize_key(child), flat);
                    }
                }
            } else if let Some(flat) = flatten_toml(value) {
                entries.insert(normalize_key(key), flat);
            }
        }
    } else {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::invalid(format!(
                    "config line {line:?} is not key=value"
                )));
            };
            let value = value.trim().trim_matches('"').trim_matches('\'');
            entries.insert(normalize_key(key), value.to_string());
        }
    }
    Ok(FileConfig(entries))
}

/// Finds the first file in `dir` whose name contains `needle`.
fn find_in_dir(dir: &Path, needle: &str) -> Result<Option<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::dataset(format!("cannot read dataset dir {}: {e}", dir.display())))?;
    let mut names: Vec<PathBuf> = entries
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .collect();
    names.sort();
    Ok(names.into_iter().find(|p| {
        p.file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.to_ascii_lowercase().contains(needle))
    }))
}

impl DataArgs {
    fn dataset_dir(&self, config: &FileConfig) -> Option<PathBuf> {
        self.dataset.clone().or_else(|| config.path("dataset"))
    }

    fn checkins_path(&self, config: &FileConfig) -> Result<Option<PathBuf>, CliError> {
        if let Some(path) = self.checkins.clone().or_else(|| config.path("checkins")) {
            return Ok(Some(path));
        }
        match self.dataset_dir(config) {
            Some(dir) => match find_in_dir(&dir, "checkin")? {
                Some(path) => Ok(Some(path)),
                None => Err(CliError::dataset(format!(
                    "no check-in file found in {}",
                    dir.display()
                ))),
            },
            None => Ok(None),
        }
    }

    fn edges_path(&self, config: &FileConfig) -> Result<Option<PathBuf>, CliError> {
        if let Some(path) = self.edges.clone().or_else(|| config.path("edges")) {
            return Ok(Some(path));
        }
        match self.dataset_dir(config) {
            Some(dir) => Ok(find_in_dir(&dir, "edge")?),
            None => Ok(None),
        }
    }
}

fn open_dataset_file(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::dataset(format!("cannot open {}: {e}", path.display())))
}

/// Loads check-ins from the given files, or falls back to the built-in
/// synthetic world when no dataset was named.
fn prepare_data(data: &DataArgs, config: &FileConfig) -> Result<PreparedDataset, CliError> {
    match data.checkins_path(config)? {
        Some(path) => {
            let parsed = parse_checkins(open_dataset_file(&path)?)?;
            if parsed.skipped_lines > 0 {
                eprintln!(
                    "note: skipped {} malformed lines in {}",
                    parsed.skipped_lines,
                    path.display()
                );
            }
            Ok(PreparedDataset::from_checkins(parsed.checkins))
        }
        None => {
            eprintln!("note: no dataset given, using the built-in synthetic world");
            Ok(PreparedDataset::synthetic(0))
        }
    }
}

fn stats_command(args: &StatsArgs, config: &FileConfig) -> Result<(), CliError> {
    let checkins_path = args
        .data
        .checkins_path(config)?
        .ok_or_else(|| CliError::invalid("stats needs --dataset or --checkins"))?;
    let parsed = parse_checkins(open_dataset_file(&checkins_path)?)?;
    let edges = match args.data.edges_path(config)? {
        Some(path) => parse_social_edges(open_dataset_file(&path)?)?,
        None => ParsedEdges::default(),
    };
    let stats = dataset_stats(&parsed.checkins, &edges.edges);
    println!("nodes {}", stats.node_count);
    println!("edges {}", stats.edge_count);
    println!("checkins {}", stats.checkin_count);
    println!("locations {}", stats.location_count);
    let skipped = parsed.skipped_lines + edges.skipped_lines;
    if skipped > 0 {
        eprintln!("note: skipped {skipped} malformed lines");
    }
    Ok(())
}

fn to_count_points(points: &[f64], what: &str) -> Result<Vec<usize>, CliError> {
    points
        .iter()
        .map(|&p| {
            if p.fract() == 0.0 && (0.0..=u32::MAX as f64).contains(&p) {
                Ok(p as usize)
            } else {
                Err(CliError::invalid(format!(
                    "{what} sweep points must be non-negative integers, got {p}"
                )))
            }
        })
        .collect()
}

fn experiment_command(args: &ExperimentArgs, config: &FileConfig) -> Result<(), CliError> {
    let kind = match args.experiment {
        Some(kind) => kind,
        None => match config.get("experiment") {
            Some("consumers") => ExperimentKind::Consumers,
            Some("providers") => ExperimentKind::Providers,
            Some("movements") => ExperimentKind::Movements,
            Some(other) => {
                return Err(CliError::invalid(format!(
                    "config key experiment: unknown value {other:?}"
                )))
            }
            None => ExperimentKind::Consumers,
        },
    };
    let points = match args.sweep.clone() {
        Some(points) => points,
        None => config.parse_list::<f64>("sweep")?.unwrap_or_else(|| match kind {
            ExperimentKind::Consumers => vec![1.0, 25.0, 50.0, 75.0, 100.0],
            ExperimentKind::Providers => vec![1.0, 10.0, 20.0, 30.0, 40.0],
            ExperimentKind::Movements => vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }),
    };
    let sweep = match kind {
        ExperimentKind::Consumers => Sweep::Consumers(to_count_points(&points, "consumer")?),
        ExperimentKind::Providers => Sweep::Providers(to_count_points(&points, "provider")?),
        ExperimentKind::Movements => Sweep::MovementFraction(points),
    };

    let mode = match args.mode {
        Some(mode) => mode,
        None => match config.get("mode") {
            Some("mm") => ModeArg::Mm,
            Some("sm") => ModeArg::Sm,
            Some("both") | None => ModeArg::Both,
            Some(other) => {
                return Err(CliError::invalid(format!(
                    "config key mode: unknown value {other:?}"
                )))
            }
        },
    };
    let modes = match mode {
        ModeArg::Mm => vec![ScopingMode::MultiMicrocell],
        ModeArg::Sm => vec![ScopingMode::SingleMicrocell],
        ModeArg::Both => vec![ScopingMode::MultiMicrocell, ScopingMode::SingleMicrocell],
    };

    let mut base = SimConfig::default();
    if let Some(p) = args.providers.or(config.parse("providers")?) {
        base.providers_per_microcell = p;
    }
    if let Some(s) = args.services.or(config.parse("services")?) {
        base.services_per_microcell = s;
    }
    if let Some(c) = args.consumers.or(config.parse("consumers")?) {
        base.consumers_per_microcell = c;
    }
    if let Some(f) = args.movement_fraction.or(config.parse("movement_fraction")?) {
        base.movement_fraction = f;
    }
    let plan = ExperimentPlan {
        sweep,
        microcells: args.cells.or(config.parse("cells")?).unwrap_or(500),
        seeds: args
            .seeds
            .clone()
            .or(config.parse_list("seeds")?)
            .unwrap_or_else(|| vec![0, 1, 2, 3, 4]),
        modes,
        base,
        density_factor: args
            .density_factor
            .or(config.parse("density_factor")?)
            .unwrap_or(DEFAULT_DENSITY_FACTOR),
    };

    let data = prepare_data(&args.data, config)?;
    let rows = run_experiment(&data, &plan)?;
    let csv = rows_to_csv(&rows);
    let out = args.out.clone().or_else(|| config.path("out"));
    match out {
        Some(path) => {
            std::fs::write(&path, csv)
                .map_err(|e| CliError::dataset(format!("cannot write {}: {e}", path.display())))?;
            print_summary(&mut std::io::stdout(), &rows);
        }
        None => {
            print!("{csv}");
            print_summary(&mut std::io::stderr(), &rows);
        }
    }
    Ok(())
}

fn print_summary<W: Write>(out: &mut W, rows: &[SweepRow]) {
    let _ = writeln!(
        out,
        "mode consumers providers movement_fraction seeds se_mean se_range am_mean am_range"
    );
    for s in summarize(rows) {
        let _ = writeln!(
            out,
            "{} {} {} {:.6} {} {:.6} [{:.6},{:.6}] {:.6} [{:.6},{:.6}]",
            s.mode.label(),
            s.consumers,
            s.providers,
            s.movement_fraction,
            s.seed_count,
            s.mean_storage_efficiency,
            s.min_storage_efficiency,
            s.max_storage_efficiency,
            s.mean_access_misses,
            s.min_access_misses,
            s.max_access_misses,
        );
    }
}

fn scope_dump_command(args: &ScopeDumpArgs, config: &FileConfig) -> Result<(), CliError> {
    let cells = args.cells.or(config.parse("cells")?).unwrap_or(500);
    let seed = args.seed.or(config.parse("seed")?).unwrap_or(0);
    let fraction = args
        .movement_fraction
        .or(config.parse("movement_fraction")?)
        .unwrap_or(1.0);
    let density = args
        .density_factor
        .or(config.parse("density_factor")?)
        .unwrap_or(DEFAULT_DENSITY_FACTOR);

    let data = prepare_data(&args.data, config)?;
    let universe = data.ranked_universe(density.saturating_mul(cells));
    if universe.is_empty() {
        return Err(CliError::invalid("dataset has no locations to sample"));
    }
    let sample = sample_microcells(universe, cells.min(universe.len()), seed)?;
    let cell_set: std::collections::BTreeSet<LocationId> = sample.iter().copied().collect();
    let movements = data.movements_within(&cell_set);
    let filtered = filter_movements(&movements, fraction, seed)
        .map_err(|e| CliError::invalid(e.to_string()))?;
    let graph = build_graph(&filtered, &cell_set);
    let scopes = select_terminals(
        &label_propagation(&graph, seed, DEFAULT_MAX_ITERATIONS),
        &graph,
    );

    if let Some(path) = args.graph_out.clone().or_else(|| config.path("graph_out")) {
        let mut file = File::create(&path)
            .map_err(|e| CliError::dataset(format!("cannot write {}: {e}", path.display())))?;
        let _ = writeln!(file, "from,to,weight");
        for (from, to, weight) in graph.edges() {
            let _ = writeln!(file, "{from},{to},{weight}");
        }
    }

    let dump = serde_json::json!({
        "microcells": sample.len(),
        "seed": seed,
        "movement_fraction": fraction,
        "movement_count": filtered.len(),
        "scope_count": scopes.len(),
        "scopes": scopes.iter().map(|s| serde_json::json!({
            "scope_id": s.scope_id,
            "terminal": s.terminal,
            "member_count": s.members.len(),
            "members": s.members.iter().collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&dump).expect("json encoding cannot fail");
    match args.out.clone().or_else(|| config.path("out")) {
        Some(path) => std::fs::write(&path, text)
            .map_err(|e| CliError::dataset(format!("cannot write {}: {e}", path.display())))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn chain_verify_command(args: &ChainVerifyArgs, config: &FileConfig) -> Result<(), CliError> {
    let scope_id = match config.parse::<u64>("scope_id")? {
        Some(id) if args.scope_id == 0 => id,
        _ => args.scope_id,
    };
    let file = open_dataset_file(&args.chain_file)?;
    match read_chain_ndjson(scope_id, file) {
        Ok(chain) => {
            println!(
                "chain {scope_id}: {} blocks, {} live records, verified",
                chain.len(),
                chain.state().len()
            );
            Ok(())
        }
        Err(LedgerError::Io(e)) => Err(CliError::dataset(format!(
            "cannot read {}: {e}",
            args.chain_file.display()
        ))),
        Err(e) => Err(CliError::invalid(format!(
            "chain {scope_id} failed verification: {e}"
        ))),
    }
}
