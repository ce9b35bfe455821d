//! End-to-end checks of the command-line binary: a simulate-then-fit round
//! trip must produce the documented artifacts, and rerunning the same
//! command must reproduce every numeric output byte for byte.

use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_cdbmm"))
        .args(args)
        .status()
        .expect("binary runs");
    assert!(status.success(), "cdbmm {args:?} exited with {status}");
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name))
        .unwrap_or_else(|e| panic!("missing artifact {name}: {e}"))
}

#[test]
fn simulate_fit_round_trip_is_reproducible() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let sim = tmp.path().join("sim");
    run(&[
        "simulate",
        "--scenario",
        "2",
        "--n",
        "150",
        "--seed",
        "11",
        "--out",
        sim.to_str().unwrap(),
    ]);
    let data = sim.join("data.tsv");
    assert!(data.is_file());
    assert!(sim.join("true_groups.txt").is_file());
    assert!(sim.join("potential_outcomes.tsv").is_file());

    let fit_args = |out: &Path| {
        vec![
            "fit".to_string(),
            "--input".to_string(),
            data.to_str().unwrap().to_string(),
            "--out".to_string(),
            out.to_str().unwrap().to_string(),
            "--seed".to_string(),
            "5".to_string(),
            "--loss".to_string(),
            "binder".to_string(),
        ]
    };
    let out_a = tmp.path().join("fit-a");
    let out_b = tmp.path().join("fit-b");
    run(&fit_args(&out_a).iter().map(String::as_str).collect::<Vec<_>>());
    run(&fit_args(&out_b).iter().map(String::as_str).collect::<Vec<_>>());

    for name in [
        "partition_t0.txt",
        "partition_t1.txt",
        "group_labels.txt",
        "group_sizes.tsv",
        "gate_summary.tsv",
        "gate_draws.tsv",
        "ate_summary.tsv",
        "ate_draws.tsv",
        "group_profiles.tsv",
        "trace_eta_t0.tsv",
        "trace_eta_t1.tsv",
    ] {
        let a = read(&out_a, name);
        let b = read(&out_b, name);
        assert_eq!(a, b, "artifact {name} differs between identical reruns");
        assert!(!a.trim().is_empty(), "artifact {name} is empty");
    }

    // The fitted outcome file must not depend on where the run wrote its
    // output; only the manifest records the directory.
    let manifest = read(&out_a, "manifest.txt");
    assert!(manifest.contains("command"), "manifest lacks the invocation line");
}

#[test]
fn fit_rejects_malformed_input_with_a_useful_message() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let bad = tmp.path().join("bad.tsv");
    std::fs::write(&bad, "y\tt\tx1\n1.0\t0\t0.5\n2.0\t7\t0.1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cdbmm"))
        .args(["fit", "--input", bad.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()])
        .output()
        .expect("binary runs");
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("row 2"), "error should locate the bad row: {msg}");
}
