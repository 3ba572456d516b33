use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cagq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cagq"))
        .args(args)
        .output()
        .expect("run cagq")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

const GROUP: &[&str] = &[
    "group", "--gen", "uniform:1000", "--M", "100", "--K", "8", "--sampler", "cas", "--querier", "cube",
    "--voxel-size", "0.1", "--seed", "7",
];

#[test]
fn group_is_byte_identical_across_runs() {
    let a = cagq(GROUP);
    let b = cagq(GROUP);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    let summary = stderr(&a);
    assert!(summary.contains("M_effective=100"), "{summary}");
    assert!(summary.contains("coverage_pct="), "{summary}");
}

#[test]
fn group_output_lists_every_group() {
    let out = cagq(GROUP);
    let text = stdout(&out);
    let groups = cagq::pipeline::parse_groups(&text).unwrap();
    assert_eq!(groups.len(), 100);
    assert!(groups.iter().all(|g| g.nodes.len() == 8 && g.nodes.iter().all(|&i| i < 1000)));
}

#[test]
fn group_out_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("groups.txt");
    let mut args = GROUP.to_vec();
    let p = path.to_str().unwrap();
    args.extend(["--out", p]);
    let out = cagq(&args);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    assert_eq!(fs::read(&path).unwrap(), cagq(GROUP).stdout);
}

#[test]
fn missing_m_is_a_usage_error() {
    let args: Vec<&str> = GROUP.iter().copied().filter(|a| *a != "--M" && *a != "100").collect();
    let out = cagq(&args);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("--M"), "{err}");
    assert!(err.to_lowercase().contains("usage"), "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let mut args = GROUP.to_vec();
    args.push("--frobnicate");
    assert_eq!(code(&cagq(&args)), 1);
}

#[test]
fn incompatible_methods_are_a_usage_error() {
    let args: Vec<&str> = GROUP.iter().map(|&a| if a == "cube" { "ball" } else { a }).collect();
    assert_eq!(code(&cagq(&args)), 1);
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&cagq(&["--help"])), 0);
    assert_eq!(code(&cagq(&["--version"])), 0);
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn malformed_point_file_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "bad.xyz", "0 0 0\n1 1 1\n2 2 2\n3 3 3\n4 x 4\n");
    let out = cagq(&[
        "group", &file, "--M", "2", "--K", "2", "--sampler", "rvs", "--querier", "cube", "--voxel-size", "1",
        "--seed", "1",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 5"), "{}", stderr(&out));
}

#[test]
fn missing_point_file_is_a_data_error() {
    let out = cagq(&["index", "/nonexistent/points.xyz", "--voxel-size", "1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn generated_file_round_trips_through_group() {
    let dir = tempfile::tempdir().unwrap();
    for format in ["ascii", "binary"] {
        let path = dir.path().join(format!("cloud.{format}"));
        let p = path.to_str().unwrap();
        let gen = cagq(&["gen", "--gen", "sphere", "--N", "500", "--seed", "3", "--format", format, "--out", p]);
        assert_eq!(code(&gen), 0, "{}", stderr(&gen));
        let out = cagq(&[
            "group", p, "--M", "20", "--K", "4", "--sampler", "fps", "--querier", "knn", "--voxel-size", "0.2",
            "--seed", "1",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert_eq!(cagq::pipeline::parse_groups(&stdout(&out)).unwrap().len(), 20);
    }
}

#[test]
fn index_census_accounts_for_every_point() {
    let out = cagq(&["index", "--gen", "gaussian:4,0.05,3000", "--voxel-size", "0.05", "--n-v", "4", "--list"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("points=3000 "), "{header}");
    let (mut total, mut stored, mut voxels) = (0, 0, 0);
    for line in lines {
        let f: Vec<usize> = line.split_whitespace().skip(3).map(|t| t.parse().unwrap()).collect();
        total += f[0];
        stored += f[1];
        assert!(f[1] <= 4 && f[1] <= f[0]);
        voxels += 1;
    }
    assert_eq!(total, 3000);
    assert!(header.contains(&format!("occupied={voxels} ")), "{header}");
    assert!(header.contains(&format!("stored={stored} ")), "{header}");
}

#[test]
fn sample_prints_requested_centers() {
    let voxels = cagq(&["sample", "--gen", "uniform:2000", "--voxel-size", "0.1", "--M", "30", "--sampler", "cas", "--seed", "2"]);
    assert_eq!(code(&voxels), 0, "{}", stderr(&voxels));
    assert_eq!(stdout(&voxels).lines().count(), 30);
    let points = cagq(&["sample", "--gen", "uniform:2000", "--voxel-size", "0.1", "--M", "30", "--sampler", "fps", "--seed", "2"]);
    assert_eq!(stdout(&points).lines().count(), 30);
    assert_eq!(stdout(&points).lines().next().unwrap().split_whitespace().count(), 4);
}

fn data_rows(csv: &str) -> Vec<&str> {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("sampler,querier,N,M,K,coverage_pct,latency_ns,reps,seed"));
    lines.collect()
}

#[test]
fn bench_single_cell_gives_one_row() {
    let out = cagq(&["bench", "--grid", "N=1024", "M=8", "K=8", "--methods", "rps+ball", "--reps", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("rps,ball,1024,8,8,"), "{}", rows[0]);
}

#[test]
fn bench_out_file_matches_stdout_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    let args = ["bench", "--grid", "N=512,1024", "M=16", "K=8", "--methods", "rvs+cube,cas+cube", "--reps", "3"];
    let to_stdout = cagq(&args);
    let mut with_out = args.to_vec();
    with_out.extend(["--out", path.to_str().unwrap()]);
    let to_file = cagq(&with_out);
    assert_eq!(code(&to_file), 0);
    let file_text = fs::read_to_string(&path).unwrap();
    let stdout_text = stdout(&to_stdout);
    let (a, b) = (data_rows(&file_text), data_rows(&stdout_text));
    assert_eq!(a.len(), 4);
    assert_eq!(a.len(), b.len());
    // Coverage is seeded; latency is not.
    let key = |row: &str| row.split(',').take(6).collect::<Vec<_>>().join(",");
    assert_eq!(a.iter().map(|r| key(r)).collect::<Vec<_>>(), b.iter().map(|r| key(r)).collect::<Vec<_>>());
}

#[test]
fn bench_standard_preset_has_twelve_conditions() {
    let out = cagq(&[
        "bench", "--preset", "standard", "--gen", "gaussian:8", "--methods", "rvs+cube", "--reps", "3", "--warmup", "0",
        "--seed", "1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 12);
    let cells: Vec<(usize, usize, usize)> = rows
        .iter()
        .map(|r| {
            let f: Vec<&str> = r.split(',').collect();
            (f[2].parse().unwrap(), f[4].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    assert_eq!(cells[0], (1024, 8, 8));
    assert_eq!(cells[11], (81920, 128, 10240));
}

#[test]
fn bench_malformed_grid_is_a_usage_error() {
    let out = cagq(&["bench", "--grid", "N=abc", "M=8", "K=8", "--methods", "rps+ball"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "group.cfg",
        "# same run as GROUP\ngen = uniform:1000\nM=100\nK=8\nsampler=cas\nquerier=cube\nvoxel-size=0.1\nseed=7\n",
    );
    let out = cagq(&["--config", &cfg, "group"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(out.stdout, cagq(GROUP).stdout);
}

#[test]
fn gca_check_seeded_configs_pass() {
    let linear = cagq(&["gca-check", "--seeded-weights", "--activation", "linear", "--seed", "3"]);
    assert_eq!(code(&linear), 0, "{}", stdout(&linear));
    let text = stdout(&linear);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");

    let relu = cagq(&["gca-check", "--seeded-weights", "--probes", "10", "--seed", "4"]);
    assert_eq!(code(&relu), 0, "{}", stdout(&relu));
    assert!(stdout(&relu).lines().any(|l| l.starts_with("PASS finite_difference")));
}

#[test]
fn gca_check_rejects_mismatched_weight_file() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("weights.txt");
    let ok = cagq(&["gca-check", "--seeded-weights", "--dump-weights", dump.to_str().unwrap()]);
    assert_eq!(code(&ok), 0);
    let good = fs::read_to_string(&dump).unwrap();
    let reload = cagq(&["gca-check", "--weights", dump.to_str().unwrap()]);
    assert_eq!(code(&reload), 0, "{}", stderr(&reload));

    // Widen the first layer's declared input without adding weights.
    let bad = good.replacen("layer 4 ", "layer 5 ", 1);
    assert_ne!(bad, good);
    let path = write(dir.path(), "bad.txt", &bad);
    let out = cagq(&["gca-check", "--weights", &path]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}
