use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const APASTOVO: &str = "kazan-apastovo-143km";

fn scwqkd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scwqkd"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn presets_are_listed() {
    let dir = TempDir::new().unwrap();
    let out = ok(&scwqkd(&["presets"], dir.path()));
    assert!(out.contains(APASTOVO));
    assert!(out.contains("kazan-city-12km"));
    assert!(out.contains("epsilon_sys = 0.068"));
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    for (i, schedule) in ["interleaved", "interleaved", "concurrent"]
        .iter()
        .enumerate()
    {
        let out = format!("r{i}.json");
        let summary = ok(&scwqkd(
            &[
                "simulate",
                "--preset",
                APASTOVO,
                "--blocks",
                "3",
                "--seed",
                "7",
                "--schedule",
                schedule,
                "--out",
                &out,
            ],
            dir.path(),
        ));
        assert!(summary.contains("mean secret rate"));
    }
    let files: Vec<Vec<u8>> = (0..3)
        .map(|i| std::fs::read(dir.path().join(format!("r{i}.json"))).unwrap())
        .collect();
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
    let report: serde_json::Value = serde_json::from_slice(&files[0]).unwrap();
    assert_eq!(report["metadata"]["seed"], 7);
    assert_eq!(report["metadata"]["config"]["n_blocks"], 3);
    assert_eq!(report["blocks"].as_array().unwrap().len(), 3);
}

#[test]
fn csv_report_carries_config_header() {
    let dir = TempDir::new().unwrap();
    ok(&scwqkd(
        &[
            "simulate", "--preset", APASTOVO, "--blocks", "2", "--seed", "3", "--format", "csv",
            "--out", "b.csv",
        ],
        dir.path(),
    ));
    let text = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert!(text.contains("# seed = 3"));
    assert!(text.contains("# loss_db = 37.0"));
    assert!(text.contains("# epsilon_sys = 0.068"));
    assert_eq!(data_rows(&text).len(), 2);
}

#[test]
fn zero_blocks_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = scwqkd(
        &["simulate", "--preset", APASTOVO, "--blocks", "0"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_blocks"));
}

#[test]
fn config_file_errors() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("unknown.toml"), "[session]\nbogus = 1\n").unwrap();
    std::fs::write(
        dir.path().join("range.toml"),
        "[receiver]\nvisibility = 2\n",
    )
    .unwrap();
    let out = scwqkd(&["simulate", "--config", "unknown.toml"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    let out = scwqkd(&["simulate", "--config", "range.toml"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("receiver.visibility"));
    assert_eq!(
        code(&scwqkd(
            &["simulate", "--config", "missing.toml"],
            dir.path()
        )),
        3
    );
}

#[test]
fn sweep_is_monotone_and_matches_simulate() {
    let dir = TempDir::new().unwrap();
    ok(&scwqkd(
        &[
            "sweep",
            "--preset",
            APASTOVO,
            "--loss-range",
            "0:50:5",
            "--out",
            "s.csv",
        ],
        dir.path(),
    ));
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 11);
    let secret: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(secret.windows(2).all(|w| w[1] <= w[0]), "{secret:?}");

    let row37 = {
        ok(&scwqkd(
            &[
                "sweep",
                "--preset",
                APASTOVO,
                "--loss-range",
                "37:37:1",
                "--out",
                "one.csv",
            ],
            dir.path(),
        ));
        data_rows(&std::fs::read_to_string(dir.path().join("one.csv")).unwrap()).remove(0)
    };
    let summary = ok(&scwqkd(
        &[
            "simulate", "--preset", APASTOVO, "--blocks", "1", "--out", "r.json",
        ],
        dir.path(),
    ));
    let line = summary
        .lines()
        .find(|l| l.starts_with("analytic prediction"))
        .unwrap();
    let value = |key: &str| -> f64 {
        let rest = &line[line.find(key).unwrap() + key.len()..];
        rest.trim_start()
            .split([' ', ','])
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    assert!(close(value("sift"), row37[1].parse().unwrap()));
    assert!(close(value("QBER"), row37[2].parse().unwrap()));
    assert!(close(value("secret"), row37[3].parse().unwrap()));
}

#[test]
fn sweep_rejects_zero_step() {
    let dir = TempDir::new().unwrap();
    let out = scwqkd(
        &["sweep", "--loss-range", "0:50:0", "--out", "s.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

fn record(dir: &Path, config: &str, cycles: &str, out: &str) {
    std::fs::write(dir.join("c.toml"), config).unwrap();
    ok(&scwqkd(
        &[
            "record", "--config", "c.toml", "--cycles", cycles, "--out", out,
        ],
        dir,
    ));
}

#[test]
fn truncated_log_is_malformed() {
    let dir = TempDir::new().unwrap();
    record(
        dir.path(),
        "[session]\nepsilon_sys = 1.0\n",
        "400000000",
        "l.txt",
    );
    let full = std::fs::read(dir.path().join("l.txt")).unwrap();
    std::fs::write(dir.path().join("cut.txt"), &full[..full.len() - 3]).unwrap();
    let out = scwqkd(&["distill", "cut.txt", "--out", "k.txt"], dir.path());
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        code(&scwqkd(
            &["distill", "nope.txt", "--out", "k.txt"],
            dir.path()
        )),
        3
    );
}

fn key_file(dir: &Path) -> (u64, Option<String>) {
    let text = std::fs::read_to_string(dir.join("k.txt")).unwrap();
    let bits = text
        .lines()
        .find_map(|l| l.strip_prefix("# secret_bits = "))
        .unwrap()
        .parse()
        .unwrap();
    let key = text
        .lines()
        .find(|l| !l.starts_with('#'))
        .map(str::to_string);
    (bits, key)
}

#[test]
fn noiseless_log_distills_to_verified_key() {
    let dir = TempDir::new().unwrap();
    let config = "[receiver]\nvisibility = 1.0\ndark_count_rate = 0.0\n[session]\nepsilon_sys = 1.0\nseed = 9\n";
    record(dir.path(), config, "1000000000", "l.txt");
    let summary = ok(&scwqkd(
        &["distill", "l.txt", "--config", "c.toml", "--out", "k.txt"],
        dir.path(),
    ));
    assert!(summary.contains("keys verified equal: true"), "{summary}");
    let (bits, key) = key_file(dir.path());
    assert!(bits > 0);
    assert_eq!(key.unwrap().len() as u64, bits.div_ceil(4));
}

#[test]
fn realistic_log_distills_to_verified_key() {
    // ~1.1e4 sifted bits at QBER ≈ 0.02
    let dir = TempDir::new().unwrap();
    record(
        dir.path(),
        "[session]\nepsilon_sys = 1.0\nseed = 5\n",
        "4400000000",
        "l.txt",
    );
    let summary = ok(&scwqkd(
        &["distill", "l.txt", "--config", "c.toml", "--out", "k.txt"],
        dir.path(),
    ));
    assert!(summary.contains("keys verified equal: true"), "{summary}");
    let (bits, key) = key_file(dir.path());
    assert!((5_000..9_000).contains(&bits), "{bits}");
    assert!(key.is_some());
    let again = ok(&scwqkd(
        &["distill", "l.txt", "--config", "c.toml", "--out", "k2.txt"],
        dir.path(),
    ));
    assert_eq!(summary, again);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("k.txt"))
            .unwrap()
            .replace("k.txt", ""),
        std::fs::read_to_string(dir.path().join("k2.txt"))
            .unwrap()
            .replace("k2.txt", "")
    );
}
