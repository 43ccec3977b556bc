use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fairalloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairalloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_ok(args: &[&str]) -> Value {
    let out = fairalloc(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn code(args: &[&str]) -> i32 {
    fairalloc(args).status.code().expect("exit code")
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

fn synth(dir: &Path, months: &str) -> String {
    let path = dir.join("bids.csv");
    let p = path.to_str().unwrap().to_string();
    let out = json_ok(&[
        "gen-synth",
        "--seed",
        "7",
        "--keywords",
        "40",
        "--advertisers",
        "80",
        "--months",
        months,
        "--output",
        &p,
    ]);
    assert!(out["records"].as_u64().unwrap() > 0);
    p
}

#[test]
fn allocate_examples() {
    let out = json_ok(&["allocate", "--rule", "ipa", "--ell", "1", "--values", "2,1"]);
    let x = floats(&out["allocation"]);
    assert!((x[0] - 2.0 / 3.0).abs() < 1e-12 && (x[1] - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(out["rule"]["kind"], "ipa");

    let out = json_ok(&["allocate", "--rule", "uniform", "--values", "1,2,3"]);
    assert!(floats(&out["allocation"])
        .iter()
        .all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));

    let out = json_ok(&[
        "allocate",
        "--rule",
        "capped-ipa",
        "--ell",
        "1",
        "--beta",
        "0.5",
        "--values",
        "1,1,0.5,0.5",
    ]);
    assert_eq!(floats(&out["allocation"]), vec![0.375, 0.375, 0.125, 0.125]);
}

#[test]
fn allocate_rejects_bad_input() {
    assert_eq!(
        code(&["allocate", "--rule", "ipa", "--ell", "0", "--values", "1,2"]),
        2
    );
    assert_eq!(code(&["allocate", "--rule", "ipa", "--values", "1,2"]), 2);
    assert_eq!(
        code(&["allocate", "--rule", "ipa", "--ell", "1", "--values", "1,-2"]),
        2
    );
    assert_eq!(
        code(&["allocate", "--rule", "ipa", "--ell", "1,2", "--values", "1,2"]),
        2
    );
    assert_eq!(
        code(&["allocate", "--rule", "ipa", "--ell", "1", "--values", "1,2", "--bogus"]),
        2
    );
    let out = fairalloc(&["allocate", "--rule", "ipa", "--ell", "0", "--values", "1,2"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ell"));
}

#[test]
fn payments_match_closed_forms() {
    let out = json_ok(&[
        "payments",
        "--rule",
        "ipa",
        "--ell",
        "1",
        "--values",
        "2,1",
        "--advertiser",
        "1",
        "--deviations",
        "8",
    ]);
    let row = &out["payments"][0];
    assert_eq!(row["advertiser"], 1);
    assert!((row["payment"].as_f64().unwrap() - (3f64.ln() - 2.0 / 3.0)).abs() < 1e-6);
    assert!(row["ic_regret"].as_f64().unwrap() <= 1e-6);

    let out = json_ok(&["payments", "--rule", "highest-bid", "--values", "3,5,4"]);
    let pays: Vec<f64> = out["payments"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["payment"].as_f64().unwrap())
        .collect();
    assert_eq!(pays.len(), 3);
    assert!(pays[0] == 0.0 && (pays[1] - 4.0).abs() < 1e-9 && pays[2] == 0.0);

    assert_eq!(
        code(&[
            "payments",
            "--rule",
            "uniform",
            "--values",
            "1,2",
            "--advertiser",
            "0"
        ]),
        2
    );
    assert_eq!(
        code(&[
            "payments",
            "--rule",
            "uniform",
            "--values",
            "1,2",
            "--advertiser",
            "3"
        ]),
        2
    );
}

#[test]
fn bounds_examples() {
    let out = json_ok(&["bounds", "--ell", "1"]);
    let b = &out["bounds"][0];
    assert_eq!(b["alpha_ell"].as_f64().unwrap(), 0.75);
    assert!((b["gap_bounds"]["ratio_lower"].as_f64().unwrap() - 1.125).abs() < 1e-12);
    let table = b["f_ell"].as_array().unwrap();
    assert_eq!(table.len(), 11);
    assert_eq!(table[10]["f"].as_f64().unwrap(), 0.75);

    let out = json_ok(&["bounds", "--near-optimal-alpha", "0.5"]);
    let n = &out["near_optimal"];
    assert!((n["beta"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((n["ell"].as_f64().unwrap() - 1.0 / (2.0 * 2f64.ln())).abs() < 1e-12);

    assert_eq!(code(&["bounds", "--ell", "-1"]), 2);
    assert_eq!(code(&["bounds"]), 2);
    assert_eq!(code(&["bounds", "--near-optimal-alpha", "1.5"]), 2);
}

#[test]
fn bounds_write_theory_curves() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curves.csv");
    json_ok(&[
        "bounds",
        "--ell",
        "0.5,1",
        "--lambda",
        "1,2",
        "--curves-csv",
        path.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "ell,lambda,f_ell,alpha_ell");
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[4], "1,2,0.75,0.75");
}

#[test]
fn stability_check_is_seeded() {
    let args = [
        "stability-check",
        "--rule",
        "ipa",
        "--ell",
        "1",
        "--values",
        "1,1",
        "--lambda",
        "2",
        "--samples",
        "50",
        "--seed",
        "3",
    ];
    let a = fairalloc(&args);
    let b = fairalloc(&args);
    assert_eq!(a.stdout, b.stdout);
    let out: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!((out["worst_change"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert_eq!(out["within_bound"], true);
    assert_eq!(code(&args[..args.len() - 2]), 2);
}

#[test]
fn subset_check_both_algorithms() {
    let dir = tempfile::tempdir().unwrap();
    let collection = dir.path().join("c.json");
    std::fs::write(&collection, r#"{"k": 4, "sets": [[1, 2], [3]]}"#).unwrap();
    let c = collection.to_str().unwrap();
    let common = [
        "--ell",
        "1",
        "--collection",
        c,
        "--values",
        "1,1,0.5,0.5",
        "--other-values",
        "0.5,0.5,1,1",
    ];

    let mut args = vec!["subset-check", "--algorithm", "cluster-capped"];
    args.extend(common);
    let out = json_ok(&args);
    assert_eq!(out["cluster_width"], 1);
    assert!(out["subset_change"].as_f64().unwrap() <= out["subset_bound"].as_f64().unwrap() + 1e-9);

    let mut args = vec!["subset-check", "--algorithm", "partition-hierarchical"];
    args.extend(common);
    let out = json_ok(&args);
    assert_eq!(out["partitioned_width"], 2);
    assert_eq!(
        out["parts"]["clusters"],
        serde_json::json!([[1, 2], [3], [4]])
    );
    assert!(
        out["part_subset_change"].as_f64().unwrap() <= out["subset_bound"].as_f64().unwrap() + 1e-9
    );

    let parts = dir.path().join("p.json");
    std::fs::write(&parts, r#"{"k": 4, "clusters": [[1, 3], [2, 4]]}"#).unwrap();
    args.extend(["--parts", parts.to_str().unwrap()]);
    assert_eq!(code(&args), 2);

    std::fs::write(&collection, r#"{"k": 4, "sets": [[0]]}"#).unwrap();
    assert_eq!(
        code(&[
            "subset-check",
            "--algorithm",
            "cluster-capped",
            "--ell",
            "1",
            "--collection",
            c,
            "--values",
            "1,1,1,1",
            "--other-values",
            "1,1,1,1"
        ]),
        2
    );
    assert_eq!(
        code(&[
            "subset-check",
            "--algorithm",
            "cluster-capped",
            "--ell",
            "1",
            "--collection",
            "/nonexistent.json",
            "--values",
            "1",
            "--other-values",
            "1"
        ]),
        4
    );
}

#[test]
fn profile_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), "1");
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    let run = |out: &Path, threads: &str| {
        let args = [
            "profile",
            "--input",
            &input,
            "--rule",
            "highest-bid",
            "--seed",
            "5",
            "--threads",
            threads,
            "--output",
            out.to_str().unwrap(),
        ];
        let status = fairalloc(&args);
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
    };
    run(&out_a, "1");
    run(&out_b, "2");
    let a = std::fs::read_to_string(&out_a).unwrap();
    assert_eq!(a, std::fs::read_to_string(&out_b).unwrap());
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(
        lines[0],
        "algorithm,ell,bucket_lo,bucket_hi,pair_count,sampled_count,p90_alloc_diff,frac_diff_one"
    );
    assert_eq!(lines.len(), 11);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[0], "highest-bid");
    assert!(first[7].parse::<f64>().unwrap() > 0.0);

    assert_eq!(
        code(&[
            "profile",
            "--input",
            &input,
            "--rule",
            "highest-bid",
            "--seed",
            "5",
            "--jaccard-min",
            "1.01"
        ]),
        2
    );
    assert_eq!(
        code(&["profile", "--input", &input, "--rule", "highest-bid"]),
        2
    );
    assert_eq!(
        code(&[
            "profile",
            "--input",
            &input,
            "--rule",
            "highest-bid",
            "--seed",
            "1",
            "--horizon",
            "1999-01"
        ]),
        3
    );
    assert_eq!(
        code(&[
            "profile",
            "--input",
            "/nonexistent.csv",
            "--rule",
            "highest-bid",
            "--seed",
            "1"
        ]),
        4
    );
}

#[test]
fn profile_needs_a_horizon_for_multi_month_logs() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), "2");
    assert_eq!(
        code(&["profile", "--input", &input, "--rule", "uniform", "--seed", "1"]),
        2
    );
    let out = fairalloc(&[
        "profile",
        "--input",
        &input,
        "--rule",
        "uniform",
        "--seed",
        "1",
        "--horizon",
        "2002-11",
    ]);
    assert!(out.status.success());
}

#[test]
fn welfare_and_match() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), "2");
    let out = fairalloc(&[
        "welfare", "--input", &input, "--rule", "ipa", "--ell", "0.5,1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows[0][..3], ["ipa", "0.5", "all"]);
    for row in &rows {
        let ratio: f64 = row[5].parse().unwrap();
        let alpha = if row[1] == "1" {
            0.75
        } else {
            1.0 - (1.0 / 3f64).sqrt() / 1.5
        };
        assert!(ratio >= alpha && ratio <= 1.0, "{row:?}");
    }

    let profiles = dir.path().join("p.csv");
    let p = profiles.to_str().unwrap();
    for (rule, flag, list) in [("ipa", "--ell", "0.5,1,2"), ("pa", "--exponent", "1,2,4")] {
        let out = fairalloc(&[
            "profile",
            "--input",
            &input,
            "--horizon",
            "2002-10",
            "--rule",
            rule,
            flag,
            list,
            "--seed",
            "1",
            "--output",
            &format!("{p}.{rule}"),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let ipa = std::fs::read_to_string(format!("{p}.ipa")).unwrap();
    let pa = std::fs::read_to_string(format!("{p}.pa")).unwrap();
    std::fs::write(
        &profiles,
        format!("{ipa}{}", pa.split_once('\n').unwrap().1),
    )
    .unwrap();
    let matches = json_ok(&["match", "--profiles", p]);
    let matches = matches.as_array().unwrap();
    assert_eq!(matches.len(), 3);
    assert!(matches
        .iter()
        .all(|m| m["spread"].as_f64().unwrap().is_finite()));

    let self_match = json_ok(&["match", "--profiles", p, "--to", "ipa"]);
    for m in self_match.as_array().unwrap() {
        assert_eq!(m["ell"], m["best_ell_prime"]);
        assert_eq!(m["spread"].as_f64().unwrap(), 0.0);
    }
    assert_eq!(code(&["match", "--profiles", p, "--to", "capped-ipa"]), 3);
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(&config, r#"{"rule": "ipa", "ell": 2, "values": [1, 1]}"#).unwrap();
    let c = config.to_str().unwrap();
    let out = json_ok(&["allocate", "--config", c]);
    assert_eq!(floats(&out["allocation"]), vec![0.5, 0.5]);
    let out = json_ok(&["allocate", "--config", c, "--values", "2,1"]);
    assert!((floats(&out["allocation"])[0] - 0.8).abs() < 1e-12);

    std::fs::write(&config, r#"{"unknown_flag": 1}"#).unwrap();
    assert_eq!(
        code(&["allocate", "--config", c, "--rule", "uniform", "--values", "1"]),
        2
    );
    std::fs::write(&config, "not json").unwrap();
    assert_eq!(code(&["allocate", "--config", c]), 2);
}

#[test]
fn gen_synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        json_ok(&[
            "gen-synth",
            "--seed",
            "11",
            "--keywords",
            "16",
            "--advertisers",
            "40",
            "--months",
            "1",
            "--output",
            p.to_str().unwrap(),
        ]);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("day,period,seq,keyword_id,advertiser_id,bid\n"));
    assert_eq!(
        code(&[
            "gen-synth",
            "--seed",
            "1",
            "--advertisers",
            "0",
            "--output",
            a.to_str().unwrap()
        ]),
        2
    );
    assert_eq!(code(&["gen-synth", "--output", a.to_str().unwrap()]), 2);
}
