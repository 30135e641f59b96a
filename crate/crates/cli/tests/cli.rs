use std::path::Path;
use std::process::{Command, Output};

use imac_core::circuits::Fidelity;
use imac_core::config::RunConfig;
use imac_core::data::synthetic_images;
use imac_core::network::{map_network, parse_netlist, read_parameters};
use imac_core::rng::{Seeds, Stream};

fn imac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imac")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.split_whitespace().next().unwrap_or("").to_string()))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn devcheck_prints_resistances() {
    let o = imac(&["devcheck"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let r_p: f64 = value(&text, "r_p_ohm ").parse().unwrap();
    let r_ap: f64 = value(&text, "r_ap_0v_ohm ").parse().unwrap();
    assert!((r_p / 8488.263631567752 - 1.0).abs() < 1e-12);
    assert!((r_ap / (3.0 * 8488.263631567752) - 1.0).abs() < 1e-12);
    assert_eq!(value(&text, "tmr_at_bias "), "1");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(imac(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(imac(&["perf", "--target-speedup", "0.1"]).status.code(), Some(1));
    assert_eq!(imac(&["--help"]).status.code(), Some(0));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[device]\nunknown_key = 1.0\n").unwrap();
    assert_eq!(imac(&["--config", path(&bad), "devcheck"]).status.code(), Some(2));

    let missing = dir.path().join("nowhere");
    let o = imac(&["train-mlp", "--dataset", "mnist", "--data-dir", path(&missing), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));

    let o = imac(&["perf", "--calibrate", "--target-speedup", "20", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn invalid_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[adc]\nbits = 7\n").unwrap();
    let out = dir.path().join("out");
    let o = imac(&["--config", path(&cfg), "--out", path(&out), "perf"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn calibration_reports_offload_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let o = imac(&["perf", "--calibrate", "--target-speedup", "0.112", "--out", path(dir.path())]);
    assert!(o.status.success());
    let text = stdout(&o);
    let f: f64 = value(&text, "LeNet-5  fc_time_fraction ").parse().unwrap();
    let amdahl = text.split("amdahl_fraction ").nth(1).unwrap().split_whitespace().next().unwrap();
    assert_eq!(amdahl, "0.1007");
    assert!(f > 0.1007 && f < 0.105, "{f}");
    assert!(text.contains("11.20%") && text.contains("10.00%"));
    assert!(dir.path().join("perf.csv").exists());
}

#[test]
fn training_is_reproducible_and_bypass_matches_direct_inference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 5\n[training.mlp]\nepochs = 3\nbatch_size = 16\n").unwrap();
    let run = |out: &str| {
        let out = dir.path().join(out);
        let o = imac(&["--config", path(&cfg), "--out", path(&out), "train-mlp", "--dataset", "synthetic", "--synthetic-samples", "200"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let csv = |d: &Path| std::fs::read(d.join("mlp_metrics.csv")).unwrap();
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(std::fs::read(a.join("mlp.params")).unwrap(), std::fs::read(b.join("mlp.params")).unwrap());

    let params = a.join("mlp.params");
    let config = RunConfig::from_toml_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    let net = map_network(&read_parameters(&params).unwrap(), &config.mlp_map_options()).unwrap();
    // The CLI draws the training split first and the test split second
    // from the same stream.
    let mut rng = Seeds::new(5).stream(Stream::Data);
    let _train = synthetic_images(&mut rng, 200, 1, 28, 10);
    let test = synthetic_images(&mut rng, 200, 1, 28, 10);
    for i in [0usize, 7, 42] {
        let o = imac(&[
            "--config",
            path(&cfg),
            "infer",
            "--params",
            path(&params),
            "--adc-bits",
            "off",
            "--index",
            &i.to_string(),
            "--dataset",
            "synthetic",
            "--synthetic-samples",
            "200",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let x: Vec<f64> = test.image(i).iter().map(|&v| f64::from(v)).collect();
        let direct = net.infer_with(&x, Fidelity::Ideal).unwrap().label;
        assert_eq!(value(&stdout(&o), "predicted "), direct.to_string());
    }
}

#[test]
fn cnn_flow_writes_checkpoint_trace_and_netlist() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[training.step1]\nepochs = 1\nbatch_size = 16\n[training.step2]\nepochs = 2\nbatch_size = 16\n").unwrap();
    let out = dir.path().join("out");
    let common = ["--config", path(&cfg), "--out", path(&out)];
    let data = ["--dataset", "synthetic", "--synthetic-samples", "64"];

    let o = imac(&[&common[..], &["train-cnn"], &data[..]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&stdout(&o), "traces_legal "), "true");
    let ckpt = out.join("cnn.ckpt");

    let o = imac(&[&common[..], &["pipeline", "--checkpoint", path(&ckpt), "--index", "3", "--evaluate"], &data[..]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&stdout(&o), "fills "), "2");
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("event,cycle,address,value\nstore_ready,1,0,0.0\n"), "{trace}");

    let o = imac(&[&common[..], &["infer", "--checkpoint", path(&ckpt), "--adc-bits", "3"], &data[..]].concat());
    assert!(o.status.success());

    let o = imac(&[&common[..], &["export-netlist", "--checkpoint", path(&ckpt)]].concat());
    assert!(o.status.success());
    let text = std::fs::read_to_string(out.join("network.sp")).unwrap();
    assert_eq!(parse_netlist(&text).unwrap().input_dim(), 400);
}

#[test]
fn quick_selftest_passes() {
    let o = imac(&["selftest", "--quick"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
