//! End-to-end tests of the `geomedian` binary: output schemas, exit codes,
//! determinism, and the bounded-memory streaming contract.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_geomedian"))
}

fn write_file(path: &Path, contents: &str) {
    let mut f = std::fs::File::create(path).unwrap();
    f.write_all(contents.as_bytes()).unwrap();
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn estimate_golden_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("square.csv");
    write_file(&input, "0,0\n1,0\n0,1\n1,1\n");
    let out_dir = dir.path().join("out");
    let output = run(bin()
        .arg("estimate")
        .args(["--input", input.to_str().unwrap()])
        .args(["--algorithm", "asgd"])
        .args(["--direction", "1,0"])
        .args(["--test-point", "0.5,0.5"])
        .args(["--out", out_dir.to_str().unwrap()]));
    assert!(output.status.success());

    let written = std::fs::read_to_string(out_dir.join("estimate.json")).unwrap();
    let golden = include_str!("golden/estimate.json");
    assert_eq!(
        written, golden,
        "estimate.json drifted from the frozen schema/format"
    );
    // stdout carries the same payload
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert_eq!(stdout.trim_end(), written.trim_end());

    // manifest provenance
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "estimate");
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    let checksums = manifest["input_checksums"].as_object().unwrap();
    assert_eq!(checksums.len(), 1);
    assert_eq!(
        checksums.values().next().unwrap().as_str().unwrap().len(),
        64
    );
}

#[test]
fn estimate_rejects_malformed_rows_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    write_file(&input, "1,2\n3,oops\n");
    let output = run(bin()
        .arg("estimate")
        .args(["--input", input.to_str().unwrap()])
        .args(["--algorithm", "sn"]));
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
}

#[test]
fn estimate_rejects_unknown_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("ok.csv");
    write_file(&input, "1,2\n3,4\n");
    let output = run(bin()
        .arg("estimate")
        .args(["--input", input.to_str().unwrap()])
        .args(["--algorithm", "newton"]));
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn estimate_reads_jsonl_and_writes_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("data.jsonl");
    let mut contents = String::new();
    for i in 0..40 {
        let x = (i % 7) as f64 - 3.0;
        let y = (i % 5) as f64 - 2.0;
        contents.push_str(&format!("[{x}, {y}]\n"));
    }
    write_file(&input, &contents);
    let out_dir = dir.path().join("out");
    let output = run(bin()
        .arg("estimate")
        .args(["--input", input.to_str().unwrap()])
        .args(["--algorithm", "wasn"])
        .args(["--checkpoint-every", "10"])
        .args(["--out", out_dir.to_str().unwrap()]));
    assert!(output.status.success());
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("n,coordinate,value"));
    // 4 checkpoints x 2 coordinates
    assert_eq!(lines.count(), 8);
}

#[test]
fn estimate_wasn_recovers_gaussian_center() {
    // 20000 rows of N(0, I_10): every reported coordinate within 0.05 of 0
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("gauss.csv");
    let mut contents = String::with_capacity(22 * 200_000);
    let mut state = 0x853c49e6748fea9bu64;
    let mut normal = move || {
        // Box-Muller on a splitmix stream; plenty for test data
        let mut next = || {
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            (z ^ (z >> 31)) as f64 / u64::MAX as f64
        };
        let (u1, u2): (f64, f64) = (next().max(1e-12), next());
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    for _ in 0..20_000 {
        let row: Vec<String> = (0..10).map(|_| format!("{:.6}", normal())).collect();
        contents.push_str(&row.join(","));
        contents.push('\n');
    }
    write_file(&input, &contents);

    let output = run(bin()
        .arg("estimate")
        .args(["--input", input.to_str().unwrap()])
        .args(["--algorithm", "wasn"]));
    assert!(output.status.success());
    let payload: serde_json::Value =
        serde_json::from_slice(&output.stdout).expect("valid JSON on stdout");
    assert_eq!(payload["n"], 20_000);
    let median = payload["median"].as_array().unwrap();
    assert_eq!(median.len(), 10);
    for (i, v) in median.iter().enumerate() {
        let v = v.as_f64().unwrap();
        assert!(v.abs() < 0.05, "coordinate {i} at {v}");
    }
}

#[test]
fn simulate_is_byte_deterministic_and_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    write_file(
        &config,
        r#"
p = 3
n = 200
replications = 6
algorithms = ["asgd", "wasn"]
init_radius = 1.0
seed = 7

[cov_structure]
kind = "toeplitz_half"
p = 3
"#,
    );
    let mut csvs = Vec::new();
    for run_idx in 0..2 {
        let out = dir.path().join(format!("levels{run_idx}"));
        let output = run(bin()
            .arg("simulate")
            .args(["--mode", "levels"])
            .args(["--config", config.to_str().unwrap()])
            .args(["--out", out.to_str().unwrap()]));
        assert!(output.status.success());
        let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("algorithm,n,statistic,value,std_error"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 2); // one rate row per algorithm
        assert!(rows[0].starts_with("asgd,200,rejection_rate,"));
        assert!(rows[1].starts_with("wasn,200,rejection_rate,"));
        assert!(out.join("summary.txt").exists());
        assert!(out.join("manifest.json").exists());
        csvs.push(csv);
    }
    assert_eq!(csvs[0], csvs[1], "same config + seed must give identical CSVs");
}

#[test]
fn simulate_rejects_invalid_config_and_unwritable_out() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    write_file(
        &config,
        r#"
p = 3
n = 0
replications = 6
algorithms = ["asgd"]
init_radius = 1.0
seed = 7

[cov_structure]
kind = "toeplitz_half"
p = 3
"#,
    );
    let output = run(bin()
        .arg("simulate")
        .args(["--mode", "mse"])
        .args(["--config", config.to_str().unwrap()])
        .args(["--out", dir.path().join("out").to_str().unwrap()]));
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("n"), "stderr should name the field: {stderr}");

    // an output path that traverses a regular file cannot be created
    let good = dir.path().join("good.toml");
    write_file(
        &good,
        r#"
p = 3
n = 10
replications = 2
algorithms = ["asgd"]
init_radius = 1.0
seed = 7

[cov_structure]
kind = "toeplitz_half"
p = 3
"#,
    );
    let blocker = dir.path().join("blocker");
    write_file(&blocker, "not a directory");
    let output = run(bin()
        .arg("simulate")
        .args(["--mode", "mse"])
        .args(["--config", good.to_str().unwrap()])
        .args(["--out", blocker.join("sub").to_str().unwrap()]));
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn weiszfeld_matches_library_and_handles_majority_point() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pts.csv");
    write_file(&input, "1,2\n1,2\n-3,0.5\n");
    let output = run(bin()
        .arg("weiszfeld")
        .args(["--input", input.to_str().unwrap()]));
    assert!(output.status.success());
    let payload: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(payload["converged"], true);
    let median: Vec<f64> = payload["median"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    // majority point wins
    assert!((median[0] - 1.0).abs() < 1e-9 && (median[1] - 2.0).abs() < 1e-9);

    // exact agreement with the library solver on the same input
    let pts = vec![
        nalgebra::DVector::from_vec(vec![1.0, 2.0]),
        nalgebra::DVector::from_vec(vec![1.0, 2.0]),
        nalgebra::DVector::from_vec(vec![-3.0, 0.5]),
    ];
    let lib = geomedian::simulation::weiszfeld(&pts, 1e-10, 10_000).unwrap();
    assert_eq!(median[0], lib.median[0]);
    assert_eq!(median[1], lib.median[1]);
}

#[test]
fn weiszfeld_nonconvergence_exits_4_with_last_iterate() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pts.csv");
    write_file(&input, "0,0\n1,0\n0,1\n0.3,0.7\n");
    let output = run(bin()
        .arg("weiszfeld")
        .args(["--input", input.to_str().unwrap()])
        .args(["--tol", "1e-30"])
        .args(["--max-iter", "2"]));
    assert_eq!(output.status.code(), Some(4));
    let payload: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(payload["converged"], false);
    assert_eq!(payload["iterations"], 2);
    assert_eq!(payload["median"].as_array().unwrap().len(), 2);
}

#[test]
fn bundled_configs_parse_and_validate() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let raw = std::fs::read_to_string(&path).unwrap();
        let cfg: geomedian::ExperimentConfig = toml::from_str(&raw)
            .unwrap_or_else(|e| panic!("{} does not parse: {e}", path.display()));
        cfg.validate()
            .unwrap_or_else(|e| panic!("{} invalid: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 4, "expected the bundled desk-scale configs");
}

#[test]
fn estimate_streams_with_bounded_memory() {
    // A >100 MB input is processed under a 256 MB address-space cap: loading
    // the file (or the parsed rows) into memory cannot fit, so passing proves
    // the single-pass O(p^2) streaming contract.
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("big.csv");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&input).unwrap());
        let mut state = 12345u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for _ in 0..1_200_000 {
            let row: Vec<String> = (0..10).map(|_| format!("{:.6}", next())).collect();
            writeln!(f, "{}", row.join(",")).unwrap();
        }
    }
    let file_size = std::fs::metadata(&input).unwrap().len();
    assert!(file_size > 100_000_000, "test file too small: {file_size}");

    use std::os::unix::process::CommandExt;
    let mut cmd = bin();
    cmd.arg("estimate")
        .args(["--input", input.to_str().unwrap()])
        .args(["--algorithm", "asgd"]);
    unsafe {
        cmd.pre_exec(|| {
            let cap = libc::rlimit {
                rlim_cur: 256 << 20,
                rlim_max: 256 << 20,
            };
            if libc::setrlimit(libc::RLIMIT_AS, &cap) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            Ok(())
        });
    }
    let output = run(&mut cmd);
    assert!(
        output.status.success(),
        "streaming pass failed under the address-space cap: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let payload: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(payload["n"], 1_200_000);
}
