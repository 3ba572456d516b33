use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use cagq::bench::{self, CloudSource, GridCell, MethodCombo, SweepSpec, VoxelRule};
use cagq::gca::{self, GcaConfig};
use cagq::metrics::occupied_space_coverage;
use cagq::pipeline::{select_centers, write_groups};
use cagq::synth::GenSpec;
use cagq::{
    cagq, io as pio, Centers, GroupingOutput, PointCloud, SamplingConfig, SeededRng, VoxelPointIndex, Warning,
};

use crate::args::{
    BenchArgs, Command, Format, GcaCheckArgs, GenArgs, GroupArgs, IndexArgs, InputArgs, Preset, SampleArgs,
};
use crate::Failure;

type Result<T> = std::result::Result<T, Failure>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Index(a) => index(a),
        Command::Sample(a) => sample(a),
        Command::Group(a) => group(a),
        Command::Bench(a) => bench_cmd(a),
        Command::GcaCheck(a) => gca_check(a),
        Command::Gen(a) => gen(a),
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(input: &InputArgs, seed: u64) -> Result<PointCloud> {
    let cloud = match (&input.input, &input.gen) {
        (Some(path), _) => {
            pio::read_points(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?
        }
        (None, Some(spec)) => spec.generate(None, seed)?,
        (None, None) => return Err(Failure::Usage("need a point file or --gen".into())),
    };
    cloud.ensure_valid()?;
    Ok(cloud)
}

fn warn(warnings: &[Warning]) {
    for w in warnings {
        match w {
            Warning::Undersampled { requested, effective } => {
                eprintln!("warning: {effective} of {requested} requested centers available")
            }
            Warning::ShortGroups { count } => eprintln!("warning: {count} group(s) had fewer than K candidates"),
        }
    }
}

fn index(a: IndexArgs) -> Result<()> {
    let cloud = load(&a.input, a.seed)?;
    let mut cfg = SamplingConfig::new(1.0, 1, a.n_v).with_n_v(a.n_v).with_seed(a.seed);
    cfg.voxel_size = a.voxel_size;
    let idx = VoxelPointIndex::build_parallel(&cloud, &cfg, &mut SeededRng::new(a.seed).split(1))?;
    let stored: usize = (0..idx.len()).map(|s| idx.bucket_by_slot(s).len()).sum();
    let max_total = (0..idx.len()).map(|s| idx.total_by_slot(s)).max().unwrap_or(0);
    if stored > cloud.len() || (0..idx.len()).map(|s| idx.total_by_slot(s)).sum::<usize>() != cloud.len() {
        return Err(Failure::Invariant("voxel census does not account for every point".into()));
    }
    let mut out = sink(a.out.as_deref())?;
    writeln!(
        out,
        "points={} occupied={} n_v={} stored={} max_per_voxel={}",
        cloud.len(),
        idx.len(),
        idx.n_v(),
        stored,
        max_total
    )?;
    if a.list {
        for (s, v) in idx.occupied().iter().enumerate() {
            writeln!(out, "{} {} {} {} {}", v.u, v.v, v.w, idx.total_by_slot(s), idx.bucket_by_slot(s).len())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let cloud = load(&a.input, a.seed)?;
    let mut cfg = SamplingConfig::new(1.0, a.m, a.n_v)
        .with_n_v(a.n_v)
        .with_radius(a.r)
        .with_beta(a.beta)
        .with_seed(a.seed);
    cfg.voxel_size = a.voxel_size;
    cfg.validate()?;
    let rng = SeededRng::new(a.seed);
    let idx = if a.sampler.is_voxel_based() {
        Some(VoxelPointIndex::build_parallel(&cloud, &cfg, &mut rng.split(1))?)
    } else {
        None
    };
    let sel = select_centers(&cloud, idx.as_ref(), &cfg, a.sampler, &mut rng.split(2))?;
    let mut out = sink(a.out.as_deref())?;
    match &sel.centers {
        Centers::Points(ps) => {
            for &i in ps {
                let [x, y, z] = cloud.position(i);
                writeln!(out, "{i} {x} {y} {z}")?;
            }
        }
        Centers::Voxels(vs) => {
            for v in vs {
                writeln!(out, "{} {} {}", v.u, v.v, v.w)?;
            }
        }
    }
    out.flush()?;
    eprintln!(
        "summary sampler={} M_effective={} requested={}",
        a.sampler,
        sel.m_effective(),
        a.m
    );
    Ok(())
}

/// Cheap structural checks on a grouping result.
fn verify(cloud: &PointCloud, cfg: &SamplingConfig, out: &GroupingOutput) -> Result<()> {
    if out.groups.len() > cfg.m {
        return Err(Failure::Invariant(format!("{} groups for M = {}", out.groups.len(), cfg.m)));
    }
    for (j, g) in out.groups.iter().enumerate() {
        let nodes = &g.nodes.node_indices;
        if nodes.is_empty() || nodes.len() > cfg.k || nodes.iter().any(|&i| i >= cloud.len()) {
            return Err(Failure::Invariant(format!("group {j} has malformed nodes")));
        }
        if !g.nodes.truncated && nodes.len() != cfg.k {
            return Err(Failure::Invariant(format!("group {j} has {} nodes, K = {}", nodes.len(), cfg.k)));
        }
        let w: f64 = nodes.iter().map(|&i| cloud.points[i].weight).sum();
        if (w - g.center_weight).abs() > 1e-9 * w.max(1.0) {
            return Err(Failure::Invariant(format!("group {j} weight {} != node sum {w}", g.center_weight)));
        }
    }
    Ok(())
}

fn group(a: GroupArgs) -> Result<()> {
    let cloud = load(&a.input, a.seed)?;
    let mut cfg = SamplingConfig::new(1.0, a.m, a.k)
        .with_radius(a.r)
        .with_beta(a.beta)
        .with_policy(a.policy.into())
        .with_ball_radius(a.ball_radius)
        .with_seed(a.seed);
    cfg.voxel_size = a.voxel_size;
    if let Some(n_v) = a.n_v {
        cfg = cfg.with_n_v(n_v);
    }
    let start = Instant::now();
    let out = cagq(&cloud, &cfg, a.sampler, a.querier, &mut SeededRng::new(a.seed))?;
    let wall = start.elapsed();
    verify(&cloud, &cfg, &out)?;
    let coverage = occupied_space_coverage(&cloud, &out, cfg.voxel_size)?;

    let mut sink = sink(a.out.as_deref())?;
    write_groups(&out, &mut sink)?;
    sink.flush()?;
    warn(&out.warnings);
    eprintln!(
        "summary M_effective={} coverage_pct={:.2} wall_ms={:.3}",
        out.m_effective(),
        coverage,
        wall.as_secs_f64() * 1e3
    );
    Ok(())
}

fn parse_grid(tokens: &[String]) -> Result<Vec<GridCell>> {
    type Group = [Option<Vec<usize>>; 3];
    let mut groups: Vec<Group> = vec![Default::default()];
    for tok in tokens.iter().flat_map(|t| t.split_whitespace()) {
        let (key, vals) = tok
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("grid entry {tok:?} is not KEY=VALUES")))?;
        let parsed = vals
            .split(',')
            .map(|v| match v.trim().parse::<usize>() {
                Ok(x) if x > 0 => Ok(x),
                _ => Err(Failure::Usage(format!("grid value {v:?} is not a positive integer"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let slot = match key {
            "N" | "n" => 0,
            "M" | "m" => 1,
            "K" | "k" => 2,
            other => return Err(Failure::Usage(format!("unknown grid key {other:?}"))),
        };
        if groups.last().is_some_and(|g| g[slot].is_some()) {
            groups.push(Default::default());
        }
        groups.last_mut().expect("nonempty")[slot] = Some(parsed);
    }
    let mut cells = Vec::new();
    for g in groups {
        let [Some(ns), Some(ms), Some(ks)] = g else {
            return Err(Failure::Usage("each grid group needs N=, M= and K=".into()));
        };
        for &n in &ns {
            for &m in &ms {
                for &k in &ks {
                    cells.push(GridCell::new(n, m, k));
                }
            }
        }
    }
    Ok(cells)
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let grid = match (a.preset, a.grid.is_empty()) {
        (Some(Preset::Standard), _) => bench::standard_grid(),
        (None, false) => parse_grid(&a.grid)?,
        (None, true) => return Err(Failure::Usage("bench needs --preset or --grid".into())),
    };
    let methods: Vec<MethodCombo> = if a.methods.is_empty() {
        bench::standard_methods()
    } else {
        a.methods.clone()
    };
    let source = match (&a.input, a.gen) {
        (Some(path), _) => CloudSource::Fixed(
            pio::read_points(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?,
        ),
        (None, Some(spec)) => CloudSource::Generate(spec),
        (None, None) => CloudSource::Generate("gaussian".parse::<GenSpec>()?),
    };
    let mut spec = SweepSpec::new(grid, methods, source, a.seed);
    spec.reps = a.reps;
    spec.warmup = a.warmup;
    spec.neighborhood_radius = a.r;
    spec.ball_radius = a.ball_radius;
    spec.parallel = a.parallel;
    if let Some(v) = a.voxel_size {
        spec.voxel_rule = VoxelRule::Fixed(v);
    } else if let Some(c) = a.voxel_cells {
        if !(c.is_finite() && c > 0.0) {
            return Err(Failure::Usage("--voxel-cells must be positive".into()));
        }
        spec.voxel_rule = VoxelRule::Cells(c);
    }
    let result = bench::run_sweep(&spec)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    if result.contention_tainted {
        eprintln!("warning: cells ran concurrently; latencies are contention-tainted");
    }
    let mut out = sink(a.out.as_deref())?;
    bench::write_csv(&result.records, &mut out)?;
    out.flush()?;
    if let Some(path) = &a.report {
        let mut r = sink(Some(path))?;
        bench::write_report(&result.records, &mut r)?;
        r.flush()?;
    }
    Ok(())
}

fn gca_check(a: GcaCheckArgs) -> Result<()> {
    let mut rng = SeededRng::new(a.seed);
    let config: GcaConfig = match &a.weights {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            gca::parse_config(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?
        }
        None => GcaConfig::seeded(a.feature_dim, a.hidden, a.out_dim, a.activation, a.aggregation, &mut rng)?,
    };
    if let Some(path) = &a.dump_weights {
        let mut w = sink(Some(path))?;
        gca::write_config(&config, &mut w)?;
        w.flush()?;
    }
    let results = gca::run_checks(&config, a.probes, &mut rng)?;
    let mut out = io::stdout().lock();
    for r in &results {
        writeln!(out, "{} {} {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail)?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.pass).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(format!("failed checks: {}", failed.join(", "))))
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let cloud = a.gen.generate(a.n, a.seed)?;
    let mut out = sink(a.out.as_deref())?;
    match a.format {
        Format::Ascii => pio::write_ascii(&cloud, &mut out)?,
        Format::Binary => pio::write_binary(&cloud, &mut out)?,
    }
    out.flush()?;
    Ok(())
}
