use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use systolic::dse::{self, DseConfig, DESK_POD_CAP, DESK_PRESET};
use systolic::interconnect::{cost_model, route, Demand, InterconnectConfig, RoutingProblem, Topology};
use systolic::power::{EnergyParams, PowerReport};
use systolic::scheduler::{self, validate, PodConfig, Schedule};
use systolic::simulator::{simulate, BankConfig, SimStats};
use systolic::tiling::{Partition, TileGraph, TileShape};
use systolic::workload::{load_model, ModelGraph};
use systolic::{zoo, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "systolic", version, about = "Schedule, simulate and explore multi-pod systolic accelerators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tile and schedule models, write the schedule and print a summary.
    Schedule(RunArgs),
    /// Simulate models (or a saved schedule) and print statistics.
    Simulate(SimArgs),
    /// Run a design-space sweep and write CSV.
    Dse(DseArgs),
    /// Measure routability, latency and cost of each interconnect.
    IctBench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Model description file (JSON); repeat to co-schedule several models.
    #[arg(long = "model", env = "SYSTOLIC_MODEL", value_delimiter = ',')]
    models: Vec<PathBuf>,
    /// Array rows r.
    #[arg(long, env = "SYSTOLIC_ROWS", default_value_t = 32)]
    rows: usize,
    /// Array columns c.
    #[arg(long, env = "SYSTOLIC_COLS", default_value_t = 32)]
    cols: usize,
    /// Activation multicast width U (defaults to min(16, cols)).
    #[arg(long = "mcast", env = "SYSTOLIC_MCAST")]
    mcast: Option<usize>,
    /// Partial-sum fan-in V (defaults to min(16, rows)).
    #[arg(long = "fanin", env = "SYSTOLIC_FANIN")]
    fanin: Option<usize>,
    /// Pod count (power of two).
    #[arg(long, env = "SYSTOLIC_PODS")]
    pods: Option<usize>,
    /// Power budget in watts; picks the largest pod count under it.
    #[arg(long, env = "SYSTOLIC_TDP")]
    tdp: Option<f64>,
    #[arg(long, env = "SYSTOLIC_TOPOLOGY", value_enum, default_value_t = TopologyArg::Butterfly)]
    topology: TopologyArg,
    /// Butterfly plane count k.
    #[arg(long, env = "SYSTOLIC_EXPANSION", default_value_t = 2)]
    expansion: usize,
    /// Bank capacity in bytes; K and M suffixes are KiB and MiB.
    #[arg(long = "bank-size", env = "SYSTOLIC_BANK_SIZE", default_value = "256K", value_parser = parse_bytes)]
    bank_size: u64,
    /// Activation row partition: a row count or "none" (defaults to rows).
    #[arg(long, env = "SYSTOLIC_KPART", value_parser = parse_kpart)]
    kpart: Option<Partition>,
    /// Energy-parameter file (JSON) overriding any default field.
    #[arg(long, env = "SYSTOLIC_PARAMS")]
    params: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "SYSTOLIC_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("size").args(["pods", "tdp"]).required(true).multiple(false)))]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("size").args(["pods", "tdp"]).required(true).multiple(false)))]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    /// Schedule file from `schedule`; models must match the ones it was built from.
    #[arg(long, env = "SYSTOLIC_SCHEDULE")]
    schedule: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("size").args(["pods", "tdp"]).multiple(false)))]
struct DseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "SYSTOLIC_PRESET", value_enum)]
    preset: Preset,
    /// Use every shipped benchmark and no pod cap instead of the reduced preset.
    #[arg(long, env = "SYSTOLIC_FULL")]
    full: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Port counts to measure.
    #[arg(long, env = "SYSTOLIC_PORTS", value_delimiter = ',', default_values_t = [8, 16, 32, 64])]
    ports: Vec<usize>,
    /// Random demand sets per configuration.
    #[arg(long, env = "SYSTOLIC_TRIALS", default_value_t = 1000)]
    trials: usize,
    /// Output directory.
    #[arg(long, env = "SYSTOLIC_OUT")]
    out: Option<PathBuf>,
    /// Seed of the random demand sets.
    #[arg(long, env = "SYSTOLIC_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TopologyArg {
    Butterfly,
    Benes,
    Crossbar,
}

impl From<TopologyArg> for Topology {
    fn from(t: TopologyArg) -> Self {
        match t {
            TopologyArg::Butterfly => Topology::Butterfly,
            TopologyArg::Benes => Topology::BenesCopy,
            TopologyArg::Crossbar => Topology::Crossbar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum Preset {
    Shape,
    Granularity,
    Partition,
    Banks,
    Tenancy,
}

fn parse_bytes(s: &str) -> std::result::Result<u64, String> {
    let t = s.trim();
    let (num, mult) = match t.chars().last() {
        Some('K' | 'k') => (&t[..t.len() - 1], 1024),
        Some('M' | 'm') => (&t[..t.len() - 1], 1024 * 1024),
        _ => (t, 1),
    };
    match num.parse::<u64>() {
        Ok(n) if n > 0 => Ok(n * mult),
        _ => Err(format!("invalid byte size {s:?}")),
    }
}

fn parse_kpart(s: &str) -> std::result::Result<Partition, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(Partition::Unpartitioned);
    }
    match s.parse::<usize>() {
        Ok(k) if k > 0 => Ok(Partition::Rows(k)),
        _ => Err(format!("invalid partition {s:?}: expected a positive row count or \"none\"")),
    }
}

impl Common {
    fn params(&self) -> Result<EnergyParams> {
        match &self.params {
            Some(p) => EnergyParams::load(p),
            None => Ok(EnergyParams::default()),
        }
    }

    fn load_models(&self) -> Result<Vec<ModelGraph>> {
        self.models.iter().map(load_model).collect()
    }

    fn shape(&self) -> TileShape {
        let s = TileShape::new(self.rows, self.cols);
        self.kpart.map_or(s, |p| s.with_partition(p))
    }

    fn nets(&self, ports: usize) -> InterconnectConfig {
        InterconnectConfig::new(self.topology.into(), ports, self.expansion)
    }

    fn pod_count(&self, params: &EnergyParams) -> Result<usize> {
        match (self.pods, self.tdp) {
            (Some(p), None) => Ok(p),
            (None, Some(w)) => dse::DseConfig {
                tdp_w: w,
                topology: self.topology.into(),
                expansion: self.expansion,
                params: *params,
                ..Default::default()
            }
            .pods_for(self.rows, self.cols),
            _ => Err(Error::config("give exactly one of --pods and --tdp")),
        }
    }

    fn pod_config(&self, pods: usize, params: &EnergyParams) -> Result<PodConfig> {
        let mut pc = PodConfig::new(self.rows, self.cols, pods);
        pc.clock_hz = params.clock_hz;
        if let Some(u) = self.mcast {
            pc.mcast_u = u;
        }
        if let Some(v) = self.fanin {
            pc.fanin_v = v;
        }
        pc.validate()?;
        Ok(pc)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Writes to stdout; a reader that hung up early is not an error.
fn emit(bytes: &[u8]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(bytes).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(io_err(Path::new("stdout"), e)),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    emit(format!("{text}\n").as_bytes())
}

fn model_name(models: &[ModelGraph]) -> String {
    models.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join("+")
}

#[derive(Serialize)]
struct ScheduleSummary {
    model: String,
    pods: usize,
    tile_ops: usize,
    slices: usize,
    chained: usize,
    adds: usize,
    busy_pod_fraction: f64,
    violations: usize,
    schedule_file: Option<PathBuf>,
}

fn cmd_schedule(args: &RunArgs) -> Result<()> {
    let c = &args.common;
    let params = c.params()?;
    let models = c.load_models()?;
    let pods = c.pod_count(&params)?;
    let pc = c.pod_config(pods, &params)?;
    let nets = c.nets(pods);
    let tg = TileGraph::build(&models, c.shape());
    let mut s = scheduler::schedule(&tg, &pc, pods, &nets)?;
    s.model = model_name(&models);
    let violations = validate(&s, &tg, &nets).len();
    let file = match &c.out {
        Some(dir) => Some(write_file(dir, "schedule.json", s.to_json()?.as_bytes())?),
        None => None,
    };
    print_json(&ScheduleSummary {
        model: s.model.clone(),
        pods,
        tile_ops: s.tile_ops(),
        slices: s.makespan_slices(),
        chained: s.chained(),
        adds: s.adds(),
        busy_pod_fraction: s.busy_pod_fraction(),
        violations,
        schedule_file: file,
    })
}

#[derive(Serialize)]
struct SimReport {
    model: String,
    pods: usize,
    stats: SimStats,
    power: PowerReport,
}

fn cmd_simulate(args: &SimArgs) -> Result<()> {
    let c = &args.common;
    let params = c.params()?;
    let models = c.load_models()?;
    let (s, tg) = match &args.schedule {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let s = Schedule::from_json(&text)?;
            let tg = TileGraph::build(&models, s.tiling);
            let v = validate(&s, &tg, &s.config.nets);
            if let Some(first) = v.first() {
                return Err(Error::validation(format!("schedule has {} violations, first: {}", v.len(), first.detail)));
            }
            (s, tg)
        }
        None => {
            let pods = c.pod_count(&params)?;
            let pc = c.pod_config(pods, &params)?;
            let tg = TileGraph::build(&models, c.shape());
            let mut s = scheduler::schedule(&tg, &pc, pods, &c.nets(pods))?;
            s.model = model_name(&models);
            (s, tg)
        }
    };
    let cfg = s.config.clone();
    let stats = simulate(&s, &tg, &BankConfig::new(cfg.banks, c.bank_size), &params)?;
    let power = PowerReport::new(&cfg.pods, cfg.banks, &cfg.nets, &params, stats.utilization);
    let report = SimReport {
        model: model_name(&models),
        pods: cfg.pods.pods,
        stats,
        power,
    };
    if let Some(dir) = &c.out {
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?;
        write_file(dir, "stats.json", text.as_bytes())?;
    }
    print_json(&report)
}

fn preset_models(args: &DseArgs) -> Result<Vec<ModelGraph>> {
    if !args.common.models.is_empty() {
        return args.common.load_models();
    }
    let names: Vec<&str> = if args.full {
        zoo::CNN_MODELS.iter().chain(zoo::BERT_MODELS.iter()).copied().collect()
    } else {
        DESK_PRESET.to_vec()
    };
    names.iter().map(|n| zoo::benchmark_graph(n, 224, 100, 1)).collect()
}

fn cmd_dse(args: &DseArgs) -> Result<()> {
    let c = &args.common;
    let params = c.params()?;
    let cfg = DseConfig {
        tdp_w: c.tdp.unwrap_or(400.0),
        topology: c.topology.into(),
        expansion: c.expansion,
        bank_bytes: c.bank_size,
        partition: c.kpart,
        pod_cap: if args.full { None } else { Some(DESK_POD_CAP) },
        params,
    };
    let fixed_pods = c.pods.unwrap_or(if args.full { 256 } else { DESK_POD_CAP });
    let mut buf = Vec::new();
    let name = match args.preset {
        Preset::Granularity => {
            let pts = dse::sweep_granularity(&[16, 32, 64, 128, 256, 512], &preset_models(args)?, &cfg)?;
            dse::write_points_csv(&mut buf, &pts)?;
            "granularity.csv"
        }
        Preset::Shape => {
            let dims = [8, 16, 24, 32, 48, 64, 96, 128];
            let grid: Vec<(usize, usize)> = dims.iter().flat_map(|&r| dims.iter().map(move |&cc| (r, cc))).collect();
            let pts = dse::sweep_shape(&grid, &preset_models(args)?, &cfg)?;
            dse::write_points_csv(&mut buf, &pts)?;
            "shape.csv"
        }
        Preset::Partition => {
            let r = c.rows;
            let parts = [Partition::Rows((r / 2).max(1)), Partition::Rows(r), Partition::Rows(2 * r), Partition::Unpartitioned];
            let models = if c.models.is_empty() { vec![zoo::benchmark_graph("resnet50", 224, 100, 1)?] } else { c.load_models()? };
            let rows = dse::sweep_partition(&parts, &models, c.rows, c.cols, fixed_pods, &cfg)?;
            dse::write_partition_csv(&mut buf, &rows)?;
            "partition.csv"
        }
        Preset::Banks => {
            let sizes: Vec<u64> = [64u64, 128, 256, 512, 1024].iter().map(|k| k * 1024).collect();
            let models = if c.models.is_empty() { vec![zoo::benchmark_graph("resnet152", 224, 100, 8)?] } else { c.load_models()? };
            let rows = dse::sweep_banks(&sizes, &models, c.rows, c.cols, fixed_pods, &cfg)?;
            dse::write_banks_csv(&mut buf, &rows)?;
            "banks.csv"
        }
        Preset::Tenancy => {
            let resnet = zoo::benchmark_graph("resnet152", 224, 100, 1)?;
            let mut sets = vec![("resnet152+bert_medium".to_string(), vec![resnet.clone(), zoo::benchmark_graph("bert_medium", 224, 100, 1)?])];
            for b in [1, 2, 4, 8] {
                sets.push((format!("bert_medium b{b}"), vec![zoo::benchmark_graph("bert_medium", 224, 100, b)?]));
                sets.push((format!("resnet152 b{b}"), vec![resnet.with_batch(b)]));
            }
            let rows = dse::sweep_tenancy(&sets, c.rows, c.cols, fixed_pods, &cfg)?;
            dse::write_tenancy_csv(&mut buf, &rows)?;
            "tenancy.csv"
        }
    };
    match &c.out {
        Some(dir) => {
            let path = write_file(dir, name, &buf)?;
            eprintln!("wrote {}", path.display());
        }
        None => emit(&buf)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    topology: String,
    expansion: usize,
    ports: usize,
    routable_fraction: f64,
    latency: u32,
    switches: u64,
    power_per_byte_mw: f64,
}

fn random_demands(rng: &mut ChaCha8Rng, n: usize) -> RoutingProblem {
    let mut dests: Vec<usize> = (0..n).collect();
    dests.shuffle(rng);
    let mut sources: Vec<usize> = (0..n).collect();
    sources.shuffle(rng);
    let mut demands = Vec::new();
    let mut rest = dests.as_slice();
    for &s in &sources {
        if rest.is_empty() {
            break;
        }
        let take = if rng.gen_bool(0.25) { rng.gen_range(1..=rest.len().min(4)) } else { 1 };
        demands.push(Demand {
            source: s,
            dests: rest[..take].to_vec(),
        });
        rest = &rest[take..];
    }
    RoutingProblem::new(demands)
}

fn cmd_ict_bench(args: &BenchArgs) -> Result<()> {
    let configs: Vec<(Topology, usize)> = vec![
        (Topology::Butterfly, 1),
        (Topology::Butterfly, 2),
        (Topology::Butterfly, 4),
        (Topology::BenesCopy, 1),
        (Topology::Crossbar, 1),
    ];
    let mut w = csv::Writer::from_writer(Vec::new());
    for &n in &args.ports {
        for &(topo, k) in &configs {
            let cfg = InterconnectConfig::new(topo, n, k);
            cfg.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ (n as u64) << 8 ^ k as u64);
            let mut ok = 0;
            for _ in 0..args.trials {
                if route(&cfg, &random_demands(&mut rng, n))?.feasible {
                    ok += 1;
                }
            }
            let cost = cost_model(&cfg);
            w.serialize(BenchRow {
                topology: topo.to_string(),
                expansion: cfg.planes(),
                ports: n,
                routable_fraction: if args.trials == 0 { 0.0 } else { ok as f64 / args.trials as f64 },
                latency: cfg.latency(),
                switches: cost.switches,
                power_per_byte_mw: cost.power_per_byte_mw,
            })
            .map_err(|e| io_err(Path::new("csv"), std::io::Error::other(e)))?;
        }
    }
    let buf = w.into_inner().map_err(|e| io_err(Path::new("csv"), std::io::Error::other(e.to_string())))?;
    match &args.out {
        Some(dir) => {
            let path = write_file(dir, "ict_bench.csv", &buf)?;
            eprintln!("wrote {}", path.display());
        }
        None => emit(&buf)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
}

fn report_error(kind: &str, message: String) {
    let rec = ErrorRecord {
        error: ErrorBody { kind, message },
    };
    eprintln!("{}", serde_json::to_string(&rec).unwrap_or_else(|_| "{\"error\":{}}".into()));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.to_string().trim_end().to_string());
            return ExitCode::from(2);
        }
    };
    let res = match &cli.command {
        Command::Schedule(a) => cmd_schedule(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Dse(a) => cmd_dse(a),
        Command::IctBench(a) => cmd_ict_bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_sizes_take_binary_suffixes() {
        assert_eq!(parse_bytes("256K"), Ok(256 * 1024));
        assert_eq!(parse_bytes("1M"), Ok(1 << 20));
        assert_eq!(parse_bytes("4096"), Ok(4096));
        assert!(parse_bytes("0").is_err());
        assert!(parse_bytes("12G").is_err());
    }

    #[test]
    fn partitions_parse() {
        assert_eq!(parse_kpart("none"), Ok(Partition::Unpartitioned));
        assert_eq!(parse_kpart("16"), Ok(Partition::Rows(16)));
        assert!(parse_kpart("0").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
