use std::path::Path;
use std::process::{Command, Output};

fn prefence(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_prefence"));
    cmd.args(args).env_remove("PREFENCE_OUT_DIR");
    if let Some(dir) = out_env {
        cmd.env("PREFENCE_OUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_catalog_reports_all_flows() {
    let o = prefence(&["validate-catalog"], None);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "13/13 flows valid");
    let o = prefence(&["validate-catalog", "--verbose"], None);
    assert_eq!(stdout(&o).lines().count(), 14);
}

#[test]
fn missing_config_is_a_config_error() {
    let o = prefence(&["simulate", "--config", "missing.cfg"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config not found"), "{}", stderr(&o));
}

#[test]
fn defended_attack_is_at_chance() {
    let o = prefence(
        &[
            "attack",
            "--scenario",
            "shin",
            "--defended",
            "--trials",
            "1000",
            "--seed",
            "7",
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let acc = report["guess_accuracy"].as_f64().unwrap();
    let (lo, hi) = (
        report["chance_interval"][0].as_f64().unwrap(),
        report["chance_interval"][1].as_f64().unwrap(),
    );
    assert!((lo..=hi).contains(&acc), "{acc} outside [{lo}, {hi}]");
    assert_eq!(report["defended"], true);
}

#[test]
fn unknown_scenario_and_malformed_config_are_distinct() {
    let o = prefence(&["attack", "--scenario", "nope", "--seed", "1"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown scenario"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(
        &cfg,
        "[scenario]\nname = shin\nseed = 1\n[cache]\nways = many\n",
    )
    .unwrap();
    let o = prefence(&["simulate", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cache.ways"), "{}", stderr(&o));
}

#[test]
fn simulate_writes_identical_outputs_for_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "[scenario]\nname = sms\ndefended = false\ntrials = 50\nseed = 11\n[output]\ndir = unused\n",
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let oa = prefence(&["simulate", "--config", cfg.to_str().unwrap()], Some(&a));
    let ob = prefence(
        &[
            "--sequential",
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
        ],
        Some(&b),
    );
    assert!(oa.status.success(), "{}", stderr(&oa));
    assert!(ob.status.success(), "{}", stderr(&ob));
    assert!(!dir.path().join("unused").exists());
    for name in [
        "report.json",
        "histogram.csv",
        "probes.csv",
        "events.csv",
        "accesses.csv",
        "summary.json",
    ] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert!(!x.is_empty(), "{name} empty");
        assert_eq!(x, y, "{name} differs");
    }
    let probes = std::fs::read_to_string(a.join("probes.csv")).unwrap();
    assert_eq!(
        probes.lines().next(),
        Some("trial,line_index,latency,state")
    );
    let events = std::fs::read_to_string(a.join("events.csv")).unwrap();
    assert_eq!(
        events.lines().next(),
        Some("tick,core,event,tid,domain,prefetcher_enabled")
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert!(summary["toggle_counter"].is_u64());
}

#[test]
fn report_turns_saved_json_into_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let o = prefence(
        &[
            "attack",
            "--scenario",
            "shin",
            "--trials",
            "40",
            "--seed",
            "3",
        ],
        None,
    );
    let saved = dir.path().join("report.json");
    std::fs::write(&saved, &o.stdout).unwrap();
    let hist = dir.path().join("hist.csv");
    let o = prefence(
        &[
            "report",
            "--input",
            saved.to_str().unwrap(),
            "--histogram",
            hist.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&hist).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("class,latency"));
    for line in lines {
        let (class, lat) = line.split_once(',').unwrap();
        let expected = if class == "bit=1" { "96" } else { "340" };
        assert_eq!(lat, expected, "{line}");
    }
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = prefence(
        &[
            "attack",
            "--scenario",
            "dmp",
            "--trials",
            "4",
            "--seed",
            "1",
            "--out",
            blocker.join("sub").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn perf_and_sweep_emit_json() {
    let o = prefence(&["perf", "--workload", "streaming"], None);
    assert!(o.status.success());
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows[0]["cycles_disabled"], 3_400_000);

    let o = prefence(
        &[
            "sweep",
            "--scenario",
            "shin",
            "--scenario",
            "dmp",
            "--trials",
            "30",
            "--seed",
            "5",
            "--seeds",
            "2",
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let cells: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(cells.as_array().unwrap().len(), 8);
    let o2 = prefence(
        &[
            "--sequential",
            "sweep",
            "--scenario",
            "dmp",
            "--scenario",
            "shin",
            "--trials",
            "30",
            "--seed",
            "5",
            "--seeds",
            "2",
        ],
        None,
    );
    assert_eq!(o.stdout, o2.stdout);
}

#[test]
fn shipped_configs_run() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    for name in ["shin.cfg", "smt_bypass.cfg", "sms_noisy.cfg"] {
        let path = configs.join(name);
        let o = prefence(
            &["simulate", "--config", path.to_str().unwrap()],
            Some(dir.path()),
        );
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        assert!(stdout(&o).contains("at_chance="), "{name}");
    }
}
