use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cagq::gca::{Activation, Aggregation};
use cagq::synth::GenSpec;
use cagq::{BallRadius, QueryMethod, SamplingMethod, ShortGroupPolicy};

use crate::Failure;

const SUBCOMMANDS: [&str; 6] = ["index", "sample", "group", "bench", "gca-check", "gen"];

#[derive(Debug, Parser)]
#[command(name = "cagq", version, about = "Coverage-aware voxel grid structuring for point clouds")]
pub struct Cli {
    /// Worker threads for parallel library calls (default: all cores).
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(usize))]
    pub threads: Option<usize>,

    /// Flat `key=value` file; each key is a long flag of the subcommand.
    /// Flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the voxel-point index and print its census.
    Index(IndexArgs),
    /// Select M centers and print them.
    Sample(SampleArgs),
    /// Full grouping; writes `cx cy cz w k idx...` lines.
    Group(GroupArgs),
    /// Method sweep over (N, M, K) cells; writes CSV.
    Bench(BenchArgs),
    /// Invariant and finite-difference checks of the aggregation forward pass.
    #[command(name = "gca-check")]
    GcaCheck(GcaCheckArgs),
    /// Generate a synthetic point file.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Point file, ASCII or PCF1 binary.
    #[arg(value_name = "POINTS", required_unless_present = "gen", conflicts_with = "gen")]
    pub input: Option<PathBuf>,

    /// Generate the cloud instead: `uniform:N[,extent]`,
    /// `gaussian:clusters,spread,N`, `sphere:N[,radius]`.
    #[arg(long, value_name = "SPEC", value_parser = parse_gen)]
    pub gen: Option<GenSpec>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct IndexArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Voxel edge, or `vx,vy,vz`.
    #[arg(long, value_parser = parse_voxel_size)]
    pub voxel_size: [f64; 3],
    /// Per-voxel storage cap.
    #[arg(long = "n-v", default_value_t = 32)]
    pub n_v: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also list every occupied voxel as `u v w total stored`.
    #[arg(long)]
    pub list: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SampleArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_parser = parse_voxel_size)]
    pub voxel_size: [f64; 3],
    /// Number of centers.
    #[arg(long = "M", visible_alias = "m")]
    pub m: usize,
    #[arg(long, value_parser = parse_sampler)]
    pub sampler: SamplingMethod,
    #[arg(long)]
    pub seed: u64,
    /// Neighborhood radius in voxels (Chebyshev).
    #[arg(long = "r", visible_alias = "radius", default_value_t = 1)]
    pub r: u32,
    /// Over-coverage penalty for cas.
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long = "n-v", default_value_t = 32)]
    pub n_v: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GroupArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_parser = parse_voxel_size)]
    pub voxel_size: [f64; 3],
    /// Number of groups.
    #[arg(long = "M", visible_alias = "m")]
    pub m: usize,
    /// Nodes per group.
    #[arg(long = "K", visible_alias = "k")]
    pub k: usize,
    #[arg(long, value_parser = parse_sampler)]
    pub sampler: SamplingMethod,
    /// `ball`, `knn`, `cube`, `cagq-knn`, `strict-knn` or `voxel`.
    #[arg(long, value_parser = parse_querier)]
    pub querier: QueryMethod,
    #[arg(long)]
    pub seed: u64,
    #[arg(long = "r", visible_alias = "radius", default_value_t = 1)]
    pub r: u32,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    /// Per-voxel storage cap (default: K).
    #[arg(long = "n-v")]
    pub n_v: Option<usize>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Repeat)]
    pub policy: PolicyArg,
    /// `half-diagonal`, `volume-matched` or an explicit radius.
    #[arg(long, value_parser = parse_ball_radius, default_value = "half-diagonal")]
    pub ball_radius: BallRadius,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Repeat,
    Reject,
}

impl From<PolicyArg> for ShortGroupPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Repeat => ShortGroupPolicy::Repeat,
            PolicyArg::Reject => ShortGroupPolicy::Reject,
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    /// Source cloud, subsampled to each cell's N.
    #[arg(value_name = "POINTS", conflicts_with = "gen")]
    pub input: Option<PathBuf>,
    /// Generator for each cell (default `gaussian`).
    #[arg(long, value_name = "SPEC", value_parser = parse_gen)]
    pub gen: Option<GenSpec>,
    /// Named grid.
    #[arg(long, value_enum, conflicts_with = "grid")]
    pub preset: Option<Preset>,
    /// Cells as `N=.. M=.. K=..`; comma lists expand to their product.
    /// A key seen again starts a new group of cells.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUES", action = clap::ArgAction::Append)]
    pub grid: Vec<String>,
    /// Comma-separated `sampler+querier` combos (default: all eight table methods).
    #[arg(long, value_delimiter = ',', value_parser = parse_combo)]
    pub methods: Vec<cagq::bench::MethodCombo>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed voxel edge; default is longest bounding-box side / `--voxel-cells`.
    #[arg(long, value_parser = parse_voxel_size, conflicts_with = "voxel_cells")]
    pub voxel_size: Option<[f64; 3]>,
    #[arg(long)]
    pub voxel_cells: Option<f64>,
    #[arg(long = "r", visible_alias = "radius", default_value_t = 1)]
    pub r: u32,
    #[arg(long, value_parser = parse_ball_radius, default_value = "volume-matched")]
    pub ball_radius: BallRadius,
    /// Run cells concurrently; latencies are then marked contention-tainted.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the aligned two-block text report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Standard,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GcaCheckArgs {
    /// Weight file.
    #[arg(long, required_unless_present = "seeded_weights", conflicts_with = "seeded_weights")]
    pub weights: Option<PathBuf>,
    /// Use generated weights instead of a file.
    #[arg(long)]
    pub seeded_weights: bool,
    #[arg(long, value_parser = parse_activation, default_value = "relu")]
    pub activation: Activation,
    #[arg(long, value_parser = parse_aggregation, default_value = "max")]
    pub aggregation: Aggregation,
    #[arg(long, default_value_t = 4)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 8)]
    pub out_dim: usize,
    #[arg(long, default_value_t = 10)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the generated weights to this file.
    #[arg(long)]
    pub dump_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GenArgs {
    #[arg(long, value_name = "SPEC", value_parser = parse_gen)]
    pub gen: GenSpec,
    /// Point count, overriding the spec's.
    #[arg(long = "N", visible_alias = "n")]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Ascii)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Ascii,
    Binary,
}

fn parse_voxel_size(s: &str) -> Result<[f64; 3], String> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number {t:?}")))
        .collect::<Result<_, _>>()?;
    let size = match vals[..] {
        [v] => [v; 3],
        [x, y, z] => [x, y, z],
        _ => return Err("expected one value or three comma-separated values".into()),
    };
    if size.iter().all(|v| v.is_finite() && *v > 0.0) {
        Ok(size)
    } else {
        Err("voxel sizes must be positive".into())
    }
}

fn parse_gen(s: &str) -> Result<GenSpec, String> {
    s.parse().map_err(|e: cagq::Error| e.to_string())
}

fn parse_sampler(s: &str) -> Result<SamplingMethod, String> {
    s.parse().map_err(|e: cagq::Error| e.to_string())
}

fn parse_querier(s: &str) -> Result<QueryMethod, String> {
    s.parse().map_err(|e: cagq::Error| e.to_string())
}

fn parse_ball_radius(s: &str) -> Result<BallRadius, String> {
    s.parse().map_err(|e: cagq::Error| e.to_string())
}

fn parse_combo(s: &str) -> Result<cagq::bench::MethodCombo, String> {
    s.parse().map_err(|e: cagq::Error| e.to_string())
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    s.parse().map_err(|e: cagq::Error| e.to_string())
}

fn parse_aggregation(s: &str) -> Result<Aggregation, String> {
    s.parse().map_err(|e: cagq::Error| e.to_string())
}

/// Splices `--config FILE` entries into the argument list right after the
/// subcommand name, so explicit flags override them.
pub fn expand_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let mut path = None;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy().into_owned();
        if a == "--" {
            break;
        }
        if a == "--config" {
            let v = argv
                .get(i + 1)
                .ok_or_else(|| Failure::Usage("--config needs a file".into()))?
                .clone();
            path = Some(PathBuf::from(v));
            argv.drain(i..i + 2);
            continue;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(v));
            argv.remove(i);
            continue;
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut extra = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                let k = k.trim().trim_start_matches("--");
                let v = v.trim();
                if k == "input" {
                    extra.push(OsString::from(v));
                } else if v == "true" {
                    extra.push(OsString::from(format!("--{k}")));
                } else if k == "grid" {
                    extra.push(OsString::from("--grid"));
                    extra.extend(v.split_whitespace().map(OsString::from));
                } else {
                    extra.push(OsString::from(format!("--{k}={v}")));
                }
            }
            None => {
                return Err(Failure::Usage(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    let at = argv
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .ok_or_else(|| Failure::Usage("--config needs a subcommand".into()))?;
    argv.splice(at + 1..at + 1, extra);
    Ok(argv)
}
