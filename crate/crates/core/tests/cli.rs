//! Command-line behaviour, exit codes first.

use std::path::PathBuf;
use std::process::Command;

use tracecorona::cli::{run, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use tracecorona::estimates::upload_fixture;
use tracecorona::vectors::VectorFile;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Out {
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let argv = std::iter::once("tracecorona").chain(args.iter().copied());
    let code = run(argv, &mut o, &mut e);
    Out { code, stdout: String::from_utf8(o).unwrap(), stderr: String::from_utf8(e).unwrap() }
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tc-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(cli(&[]).code, EXIT_USAGE);
    assert_eq!(cli(&["run"]).code, EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]).code, EXIT_USAGE);
    assert_eq!(cli(&["run", "--config", "honest_pair", "--scheme", "nope"]).code, EXIT_USAGE);
    let missing = cli(&["run", "--config", "no_such_scenario"]);
    assert_eq!(missing.code, EXIT_USAGE);
    assert!(missing.stderr.contains("no_such_scenario"));
    assert_eq!(cli(&["report"]).code, EXIT_USAGE);
    assert_eq!(cli(&["dump-stats", "--log", "/nonexistent/tc.log"]).code, EXIT_USAGE);
}

#[test]
fn help_and_version_succeed() {
    let h = cli(&["--help"]);
    assert_eq!(h.code, EXIT_OK);
    for sub in ["run", "serve", "keys", "attack", "report", "verify-vectors", "ingest", "dump-stats"] {
        assert!(h.stdout.contains(sub), "{sub} missing from help");
    }
    assert_eq!(cli(&["--version"]).code, EXIT_OK);
}

#[test]
fn verify_vectors_exit_codes() {
    let ok = cli(&["verify-vectors"]);
    assert_eq!(ok.code, EXIT_OK);
    assert!(ok.stdout.starts_with("ok: "));

    let dir = scratch("vectors");
    let mut v: serde_json::Value = serde_json::from_str(&VectorFile::bundled().to_json()).unwrap();
    let token = v["ecdh"][0]["token"].as_str().unwrap().to_owned();
    let flipped = if token.starts_with('0') { "1" } else { "0" };
    v["ecdh"][0]["token"] = format!("{flipped}{}", &token[1..]).into();
    let bad = dir.join("bad.json");
    std::fs::write(&bad, v.to_string()).unwrap();
    let r = cli(&["verify-vectors", "--file", bad.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_FAILURE);
    assert!(r.stderr.contains("mismatching"));

    let garbage = dir.join("garbage.json");
    std::fs::write(&garbage, "{").unwrap();
    assert_eq!(cli(&["verify-vectors", "--file", garbage.to_str().unwrap()]).code, EXIT_USAGE);
}

#[test]
fn run_is_deterministic_and_honours_overrides() {
    let a = cli(&["run", "--config", "honest_pair", "--summary"]);
    let b = cli(&["run", "--config", "honest_pair", "--summary"]);
    assert_eq!(a.code, EXIT_OK);
    assert_eq!(a.stdout, b.stdout);
    let central = cli(&["run", "--config", "honest_pair", "--scheme", "centralized"]);
    let json: serde_json::Value = serde_json::from_str(&central.stdout).unwrap();
    assert_eq!(json["scheme"], "centralized");
    let seeded = cli(&["run", "--config", "honest_pair", "--seed", "99"]);
    let json: serde_json::Value = serde_json::from_str(&seeded.stdout).unwrap();
    assert_eq!(json["seed"], 99);
}

#[test]
fn run_with_several_configs_writes_a_directory() {
    let dir = scratch("run");
    let out = dir.join("reports");
    let r =
        cli(&["run", "--config", "honest_pair", "--config", "drive_by", "--jobs", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let mut files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files.len(), 2);

    let paths: Vec<String> =
        std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path().display().to_string()).collect();
    let mut args = vec!["report"];
    args.extend(paths.iter().map(String::as_str));
    let rep = cli(&args);
    assert_eq!(rep.code, EXIT_OK, "{}", rep.stderr);
    assert!(rep.stdout.contains("tracecorona"));
}

#[test]
fn keys_are_reproducible() {
    let a = cli(&["keys", "--seed", "4", "--frames", "3"]);
    assert_eq!(a.code, EXIT_OK);
    assert_eq!(a.stdout.lines().count(), 4);
    assert_eq!(a.stdout, cli(&["keys", "--seed", "4", "--frames", "3"]).stdout);
    assert_ne!(a.stdout, cli(&["keys", "--seed", "5", "--frames", "3"]).stdout);
}

#[test]
fn payload_report_prints_the_table() {
    let r = cli(&["report", "--payload", "--sample", "2"]);
    assert_eq!(r.code, EXIT_OK);
    assert!(r.stdout.contains("35840.000"));
    assert!(r.stdout.contains("44.800"));
}

#[test]
fn ingest_then_dump_stats() {
    let dir = scratch("ingest");
    let log = dir.join("server.log");
    let input = dir.join("upload.json");
    std::fs::write(&input, serde_json::to_string(&upload_fixture(2, 5, 1)).unwrap()).unwrap();
    let (log_s, input_s) = (log.to_str().unwrap(), input.to_str().unwrap());

    let r = cli(&["ingest", "--log", log_s, "--input", input_s, "--close-epoch"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.contains("accepted 10 records"));

    let stats: serde_json::Value = serde_json::from_str(&cli(&["dump-stats", "--log", log_s]).stdout).unwrap();
    assert_eq!(stats["records_per_epoch"]["0"], 10);
    assert_eq!(stats["current_epoch"], 1);

    // replaying the log and ingesting again appends rather than resets
    assert_eq!(cli(&["ingest", "--log", log_s, "--input", input_s]).code, EXIT_OK);
    let stats: serde_json::Value = serde_json::from_str(&cli(&["dump-stats", "--log", log_s]).stdout).unwrap();
    assert_eq!(stats["records_per_epoch"]["1"], 10);

    std::fs::write(&input, "not json").unwrap();
    assert_eq!(cli(&["ingest", "--log", log_s, "--input", input_s]).code, EXIT_USAGE);
}

#[test]
fn binary_exit_codes_match_in_process_runner() {
    let bin = env!("CARGO_BIN_EXE_tracecorona");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["verify-vectors"]), Some(EXIT_OK));
    assert_eq!(status(&["run"]), Some(EXIT_USAGE));
    let out = Command::new(bin)
        .args(["run", "--config", "honest_pair", "--summary"])
        .env("TC_LOG_LEVEL", "debug")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), cli(&["run", "--config", "honest_pair", "--summary"]).stdout);
}
