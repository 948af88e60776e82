use std::process::{Command, Output};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cascade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascade")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn derive_prints_weights() {
    let out = cascade(&["derive", "--p", "0.7", "--eps", "0.3", "--beta", "0"]);
    assert_eq!(code(&out), 0);
    let j: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(j["eta_n"].as_f64(), Some(1.0));
    assert!((j["a"].as_f64().unwrap() - 0.79).abs() < 1e-12);
}

#[test]
fn bad_signal_quality_exits_two() {
    let out = cascade(&["derive", "--p", "0.4", "--eps", "0", "--beta", "0"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("1/2 < p < 1"));
}

#[test]
fn simulate_twice_is_identical() {
    let args = [
        "simulate", "--p", "0.7", "--eps", "0", "--beta", "0", "--v", "B", "--trials", "100000", "--seed", "7",
        "--engine", "walk",
    ];
    let a = cascade(&args);
    let b = cascade(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn sweep_files_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for format in ["csv", "json"] {
        let mut bytes = Vec::new();
        for i in 0..2 {
            let path = dir.path().join(format!("{format}{i}"));
            let out = cascade(&[
                "sweep",
                "--p",
                "0.7",
                "--beta",
                "0.1",
                "--method",
                "mc",
                "--trials",
                "2000",
                "--seed",
                "3",
                "--stop",
                "0.3",
                "--step",
                "0.05",
                "--format",
                format,
                "--out",
                path.to_str().unwrap(),
            ]);
            assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
            bytes.push(std::fs::read(&path).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
    }
}

#[test]
fn json_outputs_echo_config() {
    for args in [
        &["derive", "--p", "0.8", "--beta", "0.1"][..],
        &["thresholds", "--p", "0.8"],
        &["simulate", "--p", "0.8", "--trials", "500", "--engine", "agent"],
        &["exact", "--p", "0.8", "--eps", "0.2", "--depth", "100"],
        &["approx", "--p", "0.8", "--iters", "2", "--depth-cap", "200"],
    ] {
        let mut full = args.to_vec();
        full.extend(["--format", "json"]);
        let out = cascade(&full);
        assert_eq!(code(&out), 0, "{args:?}");
        let j: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(j["config"]["p"].as_f64(), Some(0.8), "{args:?}");
    }
}

/// Random argument lists always exit with 0, 1 or 2, and never fail silently.
#[test]
fn fuzzed_flags_follow_exit_contract() {
    let subcommands = ["derive", "thresholds", "simulate", "exact", "approx", "sweep", "bogus"];
    let flags = [
        "--p",
        "--eps",
        "--beta",
        "--v",
        "--trials",
        "--seed",
        "--engine",
        "--depth",
        "--method",
        "--iters",
        "--format",
        "--max-steps",
        "--r-max",
        "--stop",
        "--step",
        "--unknown",
    ];
    let values = [
        "0.7", "0.4", "1.5", "-0.1", "0.3", "0", "1", "G", "B", "x", "walk", "agent", "tree", "sequence", "exact",
        "json", "text", "csv", "nan", "50",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut seen = [0usize; 3];
    for _ in 0..150 {
        let sub = *subcommands.choose(&mut rng).unwrap();
        let mut args = vec![sub];
        if rng.random_bool(0.6) {
            args.extend(["--p", "0.7"]);
        }
        for _ in 0..rng.random_range(0..5) {
            args.push(flags.choose(&mut rng).unwrap());
            args.push(values.choose(&mut rng).unwrap());
        }
        // keep runs short
        args.extend(match sub {
            "simulate" => &["--trials", "200"][..],
            "exact" => &["--depth", "50"],
            "approx" => &["--depth-cap", "200"],
            "sweep" => &[
                "--trials",
                "200",
                "--depth",
                "50",
                "--depth-cap",
                "200",
                "--stop",
                "0.1",
            ],
            _ => &[],
        });
        let out = cascade(&args);
        let c = code(&out);
        assert!((0..=2).contains(&c), "{args:?} -> {c}");
        seen[c as usize] += 1;
        let stderr = String::from_utf8_lossy(&out.stderr);
        if c == 0 {
            assert!(!out.stdout.is_empty(), "{args:?}");
        } else {
            assert!(!stderr.is_empty(), "{args:?} exited {c} silently");
        }
    }
    assert!(seen[0] > 0 && seen[2] > 0, "{seen:?}");
}
