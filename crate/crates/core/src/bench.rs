//! Method-combination sweeps: coverage and latency per `(N, M, K)` cell,
//! CSV and aligned-text reports.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mean, median_u64, occupied_space_coverage};
use crate::pipeline::{cagq, check_methods};
use crate::query::QueryMethod;
use crate::rng::SeededRng;
use crate::sampling::SamplingMethod;
use crate::synth::{subsample, GenSpec};
use crate::types::{BallRadius, PointCloud, SamplingConfig};

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub sampler: String,
    pub querier: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub coverage_pct: f64,
    pub latency_ns: u64,
    pub reps: usize,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "sampler,querier,N,M,K,coverage_pct,latency_ns,reps,seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MethodCombo {
    pub sampler: SamplingMethod,
    pub querier: QueryMethod,
}

impl MethodCombo {
    pub const fn new(sampler: SamplingMethod, querier: QueryMethod) -> Self {
        Self { sampler, querier }
    }

    /// Baselines scan the raw cloud; the rest go through the voxel index.
    pub fn builds_index(&self) -> bool {
        self.sampler.is_voxel_based() || self.querier.uses_index()
    }
}

impl fmt::Display for MethodCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.sampler, self.querier)
    }
}

impl FromStr for MethodCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('+')
            .ok_or_else(|| Error::config(format!("method combo {s:?} is not `sampler+querier`")))?;
        let combo = Self::new(a.parse()?, b.parse()?);
        check_methods(combo.sampler, combo.querier)?;
        Ok(combo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCell {
    pub n: usize,
    pub m: usize,
    pub k: usize,
}

impl GridCell {
    pub const fn new(n: usize, m: usize, k: usize) -> Self {
        Self { n, m, k }
    }
}

/// The twelve `(N, K, M)` conditions of the reference comparison table, in row order.
pub fn standard_grid() -> Vec<GridCell> {
    [
        (1024, 8, 8),
        (1024, 8, 128),
        (1024, 128, 32),
        (1024, 128, 128),
        (8192, 8, 64),
        (8192, 8, 1024),
        (8192, 128, 256),
        (8192, 128, 1024),
        (81920, 32, 1024),
        (81920, 32, 10240),
        (81920, 128, 1024),
        (81920, 128, 10240),
    ]
    .into_iter()
    .map(|(n, k, m)| GridCell::new(n, m, k))
    .collect()
}

/// Coverage columns first (ball/cube), then the k-NN columns.
pub fn standard_methods() -> Vec<MethodCombo> {
    use QueryMethod::*;
    use SamplingMethod::*;
    vec![
        MethodCombo::new(Rps, Ball),
        MethodCombo::new(Fps, Ball),
        MethodCombo::new(Rvs, Cube),
        MethodCombo::new(Cas, Cube),
        MethodCombo::new(Rps, Knn),
        MethodCombo::new(Fps, Knn),
        MethodCombo::new(Rvs, LayeredKnn),
        MethodCombo::new(Cas, LayeredKnn),
    ]
}

#[derive(Debug, Clone)]
pub enum CloudSource {
    Generate(GenSpec),
    /// Uniformly subsampled to each cell's `N`; never upsampled.
    Fixed(PointCloud),
}

/// How the voxel size of a cell is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VoxelRule {
    Fixed([f64; 3]),
    /// Cubic voxels of edge `longest bounding-box side / cells`.
    Cells(f64),
}

impl VoxelRule {
    pub fn resolve(&self, cloud: &PointCloud) -> Result<[f64; 3]> {
        match *self {
            VoxelRule::Fixed(s) => Ok(s),
            VoxelRule::Cells(cells) => {
                let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
                let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
                let edge = if extent > 0.0 { extent / cells } else { 1.0 };
                Ok([edge; 3])
            }
        }
    }
}

/// Default voxel rule for sweeps: 24 cells across the longest side.
pub const DEFAULT_VOXEL_RULE: VoxelRule = VoxelRule::Cells(24.0);

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub grid: Vec<GridCell>,
    pub methods: Vec<MethodCombo>,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
    pub source: CloudSource,
    pub voxel_rule: VoxelRule,
    pub neighborhood_radius: u32,
    pub ball_radius: BallRadius,
    /// Run cells concurrently. Latencies are then contention-tainted.
    pub parallel: bool,
}

impl SweepSpec {
    pub fn new(grid: Vec<GridCell>, methods: Vec<MethodCombo>, source: CloudSource, seed: u64) -> Self {
        Self {
            grid,
            methods,
            reps: 5,
            warmup: 2,
            seed,
            source,
            voxel_rule: DEFAULT_VOXEL_RULE,
            neighborhood_radius: 1,
            // Ball and cube of equal volume.
            ball_radius: BallRadius::VolumeMatched,
            parallel: false,
        }
    }
}

/// What a record's latency covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attribution {
    /// The voxel index was built inside the timed region.
    pub index_built: bool,
    /// The querier scanned the whole cloud per center.
    pub full_scan: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub records: Vec<BenchRecord>,
    pub attribution: Vec<Attribution>,
    pub warnings: Vec<String>,
    pub contention_tainted: bool,
}

/// Median wall time in nanoseconds of `reps` runs after `warmup` discarded runs.
pub fn measure<T>(reps: usize, warmup: usize, mut f: impl FnMut(usize) -> T) -> u64 {
    for i in 0..warmup {
        std::hint::black_box(f(i));
    }
    let mut times: Vec<u64> = (0..reps)
        .map(|i| {
            let start = Instant::now();
            std::hint::black_box(f(i));
            start.elapsed().as_nanos() as u64
        })
        .collect();
    median_u64(&mut times).unwrap_or(0)
}

pub(crate) fn rep_seed(seed: u64, cell: usize, rep: usize) -> u64 {
    SeededRng::new(seed).split(((cell as u64) << 32) | rep as u64).seed()
}

fn cell_cloud(source: &CloudSource, cell: &GridCell, seed: u64, idx: usize) -> Result<PointCloud> {
    let cloud_seed = SeededRng::new(seed).split(0xC10D_0000 + idx as u64).seed();
    match source {
        CloudSource::Generate(spec) => spec.generate(Some(cell.n), cloud_seed),
        CloudSource::Fixed(c) => subsample(c, cell.n, &mut SeededRng::new(cloud_seed)),
    }
}

/// Harness configuration for one cell and method.
pub fn cell_config(spec: &SweepSpec, cell: &GridCell, combo: &MethodCombo, voxel_size: [f64; 3]) -> SamplingConfig {
    let mut cfg = SamplingConfig::new(1.0, cell.m, cell.k)
        .with_radius(spec.neighborhood_radius)
        .with_ball_radius(spec.ball_radius);
    cfg.voxel_size = voxel_size;
    cfg.keep_sampled_center = !combo.sampler.is_voxel_based();
    cfg
}

/// Occupied-space coverage (percent) of one seeded run of `combo` on
/// `cloud`, with the sweep's voxel rule and query settings.
pub fn coverage_run(
    spec: &SweepSpec,
    cloud: &PointCloud,
    cell: &GridCell,
    combo: &MethodCombo,
    seed: u64,
) -> Result<f64> {
    let voxel_size = spec.voxel_rule.resolve(cloud)?;
    let cfg = cell_config(spec, cell, combo, voxel_size);
    let g = cagq(cloud, &cfg, combo.sampler, combo.querier, &mut SeededRng::new(seed))?;
    occupied_space_coverage(cloud, &g, voxel_size)
}

struct CellResult {
    records: Vec<(BenchRecord, Attribution)>,
    warnings: Vec<String>,
}

fn run_cell(spec: &SweepSpec, idx: usize, cell: &GridCell) -> Result<CellResult> {
    let mut out = CellResult {
        records: Vec::new(),
        warnings: Vec::new(),
    };
    if cell.m == 0 || cell.k == 0 || cell.n == 0 {
        out.warnings.push(format!(
            "skipped unsatisfiable cell N={} M={} K={}",
            cell.n, cell.m, cell.k
        ));
        return Ok(out);
    }
    let cloud = match cell_cloud(&spec.source, cell, spec.seed, idx) {
        Ok(c) => c,
        Err(Error::SourceTooSmall { available, requested }) => {
            out.warnings.push(format!(
                "skipped cell N={requested}: source has only {available} points"
            ));
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    let voxel_size = spec.voxel_rule.resolve(&cloud)?;
    for combo in &spec.methods {
        let cfg = cell_config(spec, cell, combo, voxel_size);
        let coverages = (0..spec.reps)
            .map(|rep| coverage_run(spec, &cloud, cell, combo, rep_seed(spec.seed, idx, rep)))
            .collect::<Result<Vec<_>>>()?;
        let latency_ns = measure(spec.reps, spec.warmup, |rep| {
            let mut rng = SeededRng::new(rep_seed(spec.seed, idx, rep));
            cagq(&cloud, &cfg, combo.sampler, combo.querier, &mut rng)
        });
        out.records.push((
            BenchRecord {
                sampler: combo.sampler.to_string(),
                querier: combo.querier.to_string(),
                n: cell.n,
                m: cell.m,
                k: cell.k,
                coverage_pct: mean(&coverages),
                latency_ns,
                reps: spec.reps,
                seed: spec.seed,
            },
            Attribution {
                index_built: combo.builds_index(),
                full_scan: matches!(combo.querier, QueryMethod::Ball | QueryMethod::Knn),
            },
        ));
    }
    Ok(out)
}

/// Runs every `(cell, method)` pair. Coverage is the mean over `reps`
/// derived seeds; latency is the median over `reps` timed runs after
/// `warmup` untimed ones, measured on a single worker thread unless
/// `parallel` is set.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    if spec.reps < 3 {
        return Err(Error::config("reps must be at least 3"));
    }
    if spec.methods.is_empty() {
        return Err(Error::config("no methods selected"));
    }
    for combo in &spec.methods {
        check_methods(combo.sampler, combo.querier)?;
    }
    let cells: Vec<CellResult> = if spec.parallel {
        spec.grid
            .par_iter()
            .enumerate()
            .map(|(i, c)| run_cell(spec, i, c))
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::config(e.to_string()))?;
        pool.install(|| {
            spec.grid
                .iter()
                .enumerate()
                .map(|(i, c)| run_cell(spec, i, c))
                .collect::<Result<_>>()
        })?
    };
    let mut out = SweepOutput {
        contention_tainted: spec.parallel,
        ..Default::default()
    };
    for cell in cells {
        out.warnings.extend(cell.warnings);
        for (r, a) in cell.records {
            out.records.push(r);
            out.attribution.push(a);
        }
    }
    Ok(out)
}

pub fn write_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<BenchRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Aligned two-section text report: coverage for ball/cube combos, then
/// latency in milliseconds for every combo.
pub fn write_report<W: Write>(records: &[BenchRecord], mut out: W) -> Result<()> {
    let mut combos: Vec<(String, String)> = Vec::new();
    let mut cells: Vec<(usize, usize, usize)> = Vec::new();
    for r in records {
        let c = (r.sampler.clone(), r.querier.clone());
        if !combos.contains(&c) {
            combos.push(c);
        }
        let cell = (r.n, r.k, r.m);
        if !cells.contains(&cell) {
            cells.push(cell);
        }
    }
    let find = |cell: (usize, usize, usize), c: &(String, String)| {
        records
            .iter()
            .find(|r| (r.n, r.k, r.m) == cell && r.sampler == c.0 && r.querier == c.1)
    };
    let coverage_combos: Vec<&(String, String)> = combos
        .iter()
        .filter(|c| c.1 == "ball" || c.1 == "cube")
        .collect();
    let all_combos: Vec<&(String, String)> = combos.iter().collect();
    let width = 16;
    let mut section = |title: &str, cols: &[&(String, String)], value: &dyn Fn(&BenchRecord) -> String| -> Result<()> {
        if cols.is_empty() {
            return Ok(());
        }
        writeln!(out, "{title}")?;
        write!(out, "{:>7} {:>5} {:>6}", "N", "K", "M")?;
        for c in cols {
            write!(out, " {:>width$}", format!("{}+{}", c.0, c.1))?;
        }
        writeln!(out)?;
        for &cell in &cells {
            write!(out, "{:>7} {:>5} {:>6}", cell.0, cell.1, cell.2)?;
            for c in cols {
                let v = find(cell, c).map_or_else(|| "-".to_string(), value);
                write!(out, " {v:>width$}")?;
            }
            writeln!(out)?;
        }
        writeln!(out)?;
        Ok(())
    };
    section(
        "Occupied space coverage (%)",
        &coverage_combos,
        &|r| format!("{:.1}", r.coverage_pct),
    )?;
    section(
        "Latency (ms), median",
        &all_combos,
        &|r| format!("{:.3}", r.latency_ns as f64 / 1e6),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::CloudKind;

    fn small_spec(methods: Vec<MethodCombo>) -> SweepSpec {
        let mut s = SweepSpec::new(
            vec![GridCell::new(1024, 8, 8)],
            methods,
            CloudSource::Generate(GenSpec {
                kind: CloudKind::GaussianClusters { clusters: 8, spread: 0.05 },
                n: None,
            }),
            11,
        );
        s.reps = 3;
        s.warmup = 0;
        s
    }

    #[test]
    fn one_cell_one_method_one_record() {
        let out = run_sweep(&small_spec(vec!["rps+ball".parse().unwrap()])).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!((r.n, r.m, r.k, r.reps), (1024, 8, 8, 3));
        assert!((0.0..=100.0).contains(&r.coverage_pct));
        assert!(!out.attribution[0].index_built && out.attribution[0].full_scan);
    }

    #[test]
    fn coverage_is_deterministic() {
        let spec = small_spec(standard_methods());
        let a = run_sweep(&spec).unwrap();
        let b = run_sweep(&spec).unwrap();
        let cov = |o: &SweepOutput| o.records.iter().map(|r| r.coverage_pct).collect::<Vec<_>>();
        assert_eq!(cov(&a), cov(&b));
        for (r, at) in a.records.iter().zip(&a.attribution) {
            assert_eq!(at.index_built, r.sampler == "rvs" || r.sampler == "cas");
        }
    }

    #[test]
    fn standard_grid_shape() {
        let g = standard_grid();
        assert_eq!(g.len(), 12);
        assert_eq!(g[1], GridCell::new(1024, 128, 8));
        assert_eq!(g[11], GridCell::new(81920, 10240, 128));
        assert_eq!(standard_methods().len(), 8);
    }

    #[test]
    fn combo_parsing() {
        let c: MethodCombo = "cas+cube".parse().unwrap();
        assert_eq!(c, MethodCombo::new(SamplingMethod::Cas, QueryMethod::Cube));
        assert!("cas".parse::<MethodCombo>().is_err());
        assert!("rvs+ball".parse::<MethodCombo>().is_err());
    }

    #[test]
    fn short_source_skips_with_warning() {
        let mut spec = small_spec(vec!["rvs+cube".parse().unwrap()]);
        spec.source = CloudSource::Fixed(crate::synth::uniform_cube(100, 1.0, 0));
        let out = run_sweep(&spec).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let out = run_sweep(&small_spec(vec!["rvs+cube".parse().unwrap(), "fps+knn".parse().unwrap()])).unwrap();
        let mut buf = Vec::new();
        write_csv(&out.records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert!(!text.contains('\r'));
        assert_eq!(read_csv(&buf[..]).unwrap(), out.records);
        let mut report = Vec::new();
        write_report(&out.records, &mut report).unwrap();
        let report = String::from_utf8(report).unwrap();
        assert!(report.contains("Occupied space coverage"));
        assert!(report.contains("fps+knn"));
    }
}
