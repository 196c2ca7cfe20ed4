use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use twinbeam::envelope;
use twinbeam::{CoincidenceDistribution, JointPnd};

const STANDARD_CHAIN: [&str; 8] = [
    "--t-eta-s",
    "0.03",
    "--t-eta-i",
    "0.03",
    "--noise-s",
    "0.1",
    "--noise-i",
    "0.1",
];

fn twinbeam(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinbeam"))
        .args(args)
        .current_dir(dir)
        .env_remove("TWINBEAM_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = twinbeam(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], dir: &Path) -> i32 {
    twinbeam(args, dir).status.code().expect("exit code")
}

/// `key value` lines of an analyze report.
fn report(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(char::is_whitespace))
        .map(|(k, v)| (k.to_string(), v.trim().to_string()))
        .collect()
}

fn number(r: &HashMap<String, String>, key: &str) -> f64 {
    r[key]
        .parse()
        .unwrap_or_else(|_| panic!("{key} = {:?}", r[key]))
}

fn with_chain<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter()
        .chain(STANDARD_CHAIN.iter())
        .chain(tail.iter())
        .copied()
        .collect()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: TempDir::new().unwrap(),
        }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn standard_pairs(&self) {
        ok(
            &[
                "generate",
                "--model",
                "poisson",
                "--mu",
                "20",
                "--out",
                "pairs.json",
            ],
            self.path(),
        );
    }
}

#[test]
fn generated_poisson_pairs_have_expected_statistics() {
    let ws = Workspace::new();
    ws.standard_pairs();
    let p: JointPnd = envelope::read_file(&ws.file("pairs.json")).unwrap();
    let diagonal: f64 = (0..=p.n_max_s()).map(|n| p.get(n, n)).sum();
    assert!(diagonal >= 1.0 - 1e-12);

    let r = report(&ok(&["analyze", "pairs.json"], ws.path()));
    assert_eq!(r["kind"], "joint_pnd");
    assert!((number(&r, "C") - 1.0).abs() < 1e-6);
    assert!((number(&r, "S_S") - 1.0).abs() < 1e-6);
    assert!((number(&r, "S_+") - 1.025).abs() < 1e-6);
}

#[test]
fn generated_gaussian_pairs_are_thermal() {
    let ws = Workspace::new();
    ok(
        &[
            "generate", "--model", "gaussian", "--mu", "20", "--out", "g.json",
        ],
        ws.path(),
    );
    let r = report(&ok(&["analyze", "g.json"], ws.path()));
    assert!((number(&r, "S_S") - 2.0).abs() < 1e-6);
    assert!((number(&r, "S_I") - 2.0).abs() < 1e-6);
}

#[test]
fn validation_errors_exit_with_two() {
    let ws = Workspace::new();
    let out = twinbeam(
        &[
            "generate", "--model", "poisson", "--mu", "-1", "--out", "x.json",
        ],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mean pair number"));
    assert!(!ws.file("x.json").exists());

    ws.standard_pairs();
    let zero_shots = with_chain(
        &["sample", "--pnd", "pairs.json"],
        &["--shots", "0", "--out", "m.json"],
    );
    assert_eq!(code(&zero_shots, ws.path()), 2);

    let out = twinbeam(
        &[
            "intensity",
            "--pnd",
            "pairs.json",
            "--s",
            "1",
            "--out",
            "w.json",
        ],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("normal ordering"));

    let mixed = [
        "forward",
        "--pnd",
        "pairs.json",
        "--t-eta-s",
        "0.1",
        "--t-eta-i",
        "0.1",
        "--noise-s",
        "0.1",
    ];
    assert_eq!(
        code(
            &[&mixed[..], &["--detectors-s", "4", "--out", "f.json"]].concat(),
            ws.path()
        ),
        2
    );
    assert_eq!(
        code(
            &["generate", "--model", "laser", "--mu", "1", "--out", "x.json"],
            ws.path()
        ),
        2
    );
}

#[test]
fn non_normalizable_histogram_exits_with_two() {
    let ws = Workspace::new();
    let text = r#"{"kind": "coincidence_distribution", "version": 1, "c_max_s": 1, "c_max_i": 1,
        "origin": "file", "shots": null, "freqs": [0.5, 0.5, 0.5, 0.5]}"#;
    fs::write(ws.file("bad.json"), text).unwrap();
    let args = with_chain(&["reconstruct", "--hist", "bad.json"], &["--out", "r.json"]);
    assert_eq!(code(&args, ws.path()), 2);
    fs::write(ws.file("garbage.json"), "not json").unwrap();
    assert_eq!(code(&["analyze", "garbage.json"], ws.path()), 2);
}

#[test]
fn missing_input_exits_with_three() {
    let ws = Workspace::new();
    let args = with_chain(&["forward", "--pnd", "nowhere.json"], &["--out", "f.json"]);
    let out = twinbeam(&args, ws.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.json"));
}

#[test]
fn impossible_data_exits_with_four() {
    let ws = Workspace::new();
    ws.standard_pairs();
    // Counts in a bin that a blind, noiseless detector can never produce.
    let text = r#"{"kind": "coincidence_distribution", "version": 1, "c_max_s": 1, "c_max_i": 0,
        "origin": "file", "shots": 4, "freqs": [3.0, 1.0]}"#;
    fs::write(ws.file("h.json"), text).unwrap();
    let args = [
        "reconstruct",
        "--hist",
        "h.json",
        "--t-eta-s",
        "0",
        "--t-eta-i",
        "0",
        "--out",
        "r.json",
    ];
    assert_eq!(code(&args, ws.path()), 4);
}

#[test]
fn forward_map_reproduces_detected_statistics() {
    let ws = Workspace::new();
    ws.standard_pairs();
    ok(
        &with_chain(&["forward", "--pnd", "pairs.json"], &["--out", "f.json"]),
        ws.path(),
    );
    let r = report(&ok(&["analyze", "f.json"], ws.path()));
    assert_eq!(r["kind"], "coincidence_distribution");
    assert!((number(&r, "S_+") - 1.017).abs() <= 0.003);
    assert!((number(&r, "C") - 0.025).abs() <= 0.003);
}

#[test]
fn vacuum_without_noise_gives_a_delta_histogram() {
    let ws = Workspace::new();
    ok(
        &[
            "generate", "--model", "poisson", "--mu", "0", "--out", "vac.json",
        ],
        ws.path(),
    );
    let args = [
        "forward",
        "--pnd",
        "vac.json",
        "--t-eta-s",
        "0.03",
        "--t-eta-i",
        "0.03",
        "--out",
        "f.json",
    ];
    ok(&args, ws.path());
    let f: CoincidenceDistribution = envelope::read_file(&ws.file("f.json")).unwrap();
    assert_eq!(
        f.probabilities().iter().copied().collect::<Vec<_>>(),
        vec![1.0]
    );
}

#[test]
fn sampling_is_reproducible_across_runs_and_thread_counts() {
    let ws = Workspace::new();
    ws.standard_pairs();
    let args = |out: &'static str| {
        with_chain(
            &["sample", "--pnd", "pairs.json"],
            &["--shots", "200000", "--seed", "42", "--out", out],
        )
    };
    ok(&args("a.json"), ws.path());
    ok(&args("b.json"), ws.path());
    let threaded = Command::new(env!("CARGO_BIN_EXE_twinbeam"))
        .args(args("c.json"))
        .current_dir(ws.path())
        .env("TWINBEAM_THREADS", "1")
        .output()
        .unwrap();
    assert!(threaded.status.success());
    let a = fs::read(ws.file("a.json")).unwrap();
    assert_eq!(a, fs::read(ws.file("b.json")).unwrap());
    assert_eq!(a, fs::read(ws.file("c.json")).unwrap());
}

#[test]
fn sampled_histogram_matches_forward_map() {
    let ws = Workspace::new();
    ws.standard_pairs();
    let shots = 1_000_000u64;
    ok(
        &with_chain(
            &["sample", "--pnd", "pairs.json"],
            &["--shots", "1000000", "--seed", "9", "--out", "m.json"],
        ),
        ws.path(),
    );
    ok(
        &with_chain(&["forward", "--pnd", "pairs.json"], &["--out", "f.json"]),
        ws.path(),
    );
    let m: CoincidenceDistribution = envelope::read_file(&ws.file("m.json")).unwrap();
    let f: CoincidenceDistribution = envelope::read_file(&ws.file("f.json")).unwrap();
    let rows = m.c_max_s().max(f.c_max_s());
    let cols = m.c_max_i().max(f.c_max_i());
    let tv = 0.5
        * (m.resized(rows, cols) - f.resized(rows, cols))
            .mapv(f64::abs)
            .sum();
    let c_max = m.c_max_s().max(m.c_max_i()) as f64;
    assert!(tv <= 5.0 * (c_max * c_max / shots as f64).sqrt(), "{tv}");
}

#[test]
fn pipeline_round_trip_recovers_correlation() {
    let ws = Workspace::new();
    ws.standard_pairs();
    ok(
        &with_chain(&["forward", "--pnd", "pairs.json"], &["--out", "f.json"]),
        ws.path(),
    );
    let em = [
        "--n-max-s",
        "60",
        "--n-max-i",
        "60",
        "--max-iterations",
        "150000",
        "--tolerance",
        "1e-15",
        "--out",
        "r.json",
    ];
    ok(
        &with_chain(&["reconstruct", "--hist", "f.json"], &em),
        ws.path(),
    );
    let r = report(&ok(&["analyze", "r.json", "--csv", "r.csv"], ws.path()));
    assert_eq!(r["kind"], "em_result");
    assert!(number(&r, "C") >= 0.9, "{}", r["C"]);
    assert!(number(&r, "var_difference") < number(&r, "var_difference_independent"));
    assert!(number(&r, "var_sum") > number(&r, "var_sum_independent"));
    let csv = fs::read_to_string(ws.file("r.csv")).unwrap();
    assert!(csv.starts_with("n,difference,difference_independent,sum,sum_independent\n"));
}

#[test]
fn product_source_reconstructs_without_correlation() {
    let ws = Workspace::new();
    ws.standard_pairs();
    let pairs: JointPnd = envelope::read_file(&ws.file("pairs.json")).unwrap();
    let (s, i) = pairs.marginals();
    envelope::write_file(
        &ws.file("product.json"),
        &JointPnd::product(&s, &i).unwrap(),
    )
    .unwrap();
    let r = report(&ok(&["analyze", "product.json"], ws.path()));
    assert!(number(&r, "C").abs() < 1e-9);

    ok(
        &with_chain(&["forward", "--pnd", "product.json"], &["--out", "f.json"]),
        ws.path(),
    );
    let em = [
        "--n-max-s",
        "60",
        "--n-max-i",
        "60",
        "--max-iterations",
        "5000",
        "--out",
        "r.json",
    ];
    ok(
        &with_chain(&["reconstruct", "--hist", "f.json"], &em),
        ws.path(),
    );
    let r = report(&ok(&["analyze", "r.json"], ws.path()));
    assert!(number(&r, "C").abs() <= 0.05);
}

#[test]
fn intensity_reports_negativity_for_pairs_only() {
    let ws = Workspace::new();
    ws.standard_pairs();
    let r = report(&ok(
        &[
            "intensity",
            "--pnd",
            "pairs.json",
            "--s",
            "0",
            "--points",
            "101",
            "--out",
            "w.json",
            "--csv",
            "w.csv",
        ],
        ws.path(),
    ));
    assert!(number(&r, "negative_fraction") > 0.0);
    assert!(fs::read_to_string(ws.file("w.csv"))
        .unwrap()
        .starts_with("W_S\\W_I,"));

    ok(
        &[
            "generate", "--model", "poisson", "--mu", "0", "--out", "vac.json",
        ],
        ws.path(),
    );
    let r = report(&ok(
        &[
            "intensity",
            "--pnd",
            "vac.json",
            "--s",
            "0",
            "--out",
            "v.json",
        ],
        ws.path(),
    ));
    assert_eq!(number(&r, "negative_fraction"), 0.0);
    let r = report(&ok(&["analyze", "v.json"], ws.path()));
    assert_eq!(r["kind"], "intensity_grid");
    assert!((number(&r, "integral") - 1.0).abs() < 1e-3);
}

#[test]
fn manifests_record_digests_of_inputs_and_outputs() {
    let ws = Workspace::new();
    ws.standard_pairs();
    ok(
        &with_chain(
            &["sample", "--pnd", "pairs.json"],
            &["--shots", "1000", "--seed", "3", "--out", "m.json"],
        ),
        ws.path(),
    );
    let text = fs::read_to_string(ws.file("m.json.manifest.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(manifest["command"], "sample");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["params"]["shots"], 1000);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    for (section, name) in [("inputs", "pairs.json"), ("outputs", "m.json")] {
        let entry = &manifest[section][0];
        assert_eq!(entry["path"], name);
        let digest = sha256_hex(&fs::read(ws.file(name)).unwrap());
        assert_eq!(entry["sha256"], digest.as_str());
    }
    assert!(ws.file("pairs.json.manifest.json").exists());
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
