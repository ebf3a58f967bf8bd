//! End-to-end runs of the `cimsnn` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cimsnn::metrics::{CalibratedConfig, RunReport};

fn cimsnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cimsnn")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL_NET: &str = r#"precision = 6
timesteps = 4

[input]
channels = 2
h = 10
w = 10

[neuron]
model = "lif"
reset = "hard"
threshold = 12
leak = 2

[[layer]]
type = "conv"
out_channels = 20

[[layer]]
type = "maxpool"

[[layer]]
type = "fc"
out_features = 7
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn compare_reports_identical() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(dir.path(), "net.toml", SMALL_NET);
    let o = cimsnn(&["compare", "--net", s(&net), "--input-sparsity", "0.7", "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("identical"), "{}", stdout(&o));
}

#[test]
fn oversized_fan_in_names_the_layer() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(
        dir.path(),
        "big.toml",
        "precision = 4\ntimesteps = 1\n[input]\nchannels = 3\nh = 6\nw = 6\n\
         [neuron]\nmodel = \"if\"\nreset = \"soft\"\nthreshold = 3\n\
         [[layer]]\ntype = \"conv\"\nout_channels = 4\n\
         [[layer]]\ntype = \"conv\"\nin_channels = 4\nout_channels = 4\nkernel = 1\n\
         [[layer]]\ntype = \"fc\"\nout_features = 2\n",
    );
    // the FC sees 4 * 6 * 6 = 144 inputs; make it 1200 with a wider conv
    let text = std::fs::read_to_string(&net).unwrap().replace(
        "in_channels = 4\nout_channels = 4\nkernel = 1",
        "in_channels = 4\nout_channels = 4\nkernel = 1\n[[layer]]\ntype = \"conv\"\nout_channels = 400\nkernel = 1\n[[layer]]\ntype = \"maxpool\"\nkernel = 3\nstride = 3",
    );
    std::fs::write(&net, text).unwrap();
    let o = cimsnn(&["run", "--net", s(&net), "--input-sparsity", "0.5"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("layer 4") && stderr(&o).contains("1600"), "{}", stderr(&o));
}

#[test]
fn exact_fan_in_1200_fails() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(
        dir.path(),
        "n.toml",
        "precision = 4\ntimesteps = 1\n[input]\nchannels = 1200\nh = 1\nw = 1\n\
         [neuron]\nmodel = \"if\"\nreset = \"soft\"\nthreshold = 3\n\
         [[layer]]\ntype = \"fc\"\nout_features = 2\n",
    );
    let o = cimsnn(&["run", "--net", s(&net), "--input-sparsity", "0.5"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("layer 0: fan-in 1200"), "{}", stderr(&o));
}

#[test]
fn sweep_throughput_doubles() {
    let o = cimsnn(&["sweep", "--sparsities", "0.80,0.95", "--precisions", "4", "--freq-mhz", "50", "--voltage", "0.9"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rdr = csv::Reader::from_reader(o.stdout.as_slice());
    let headers = rdr.headers().unwrap().clone();
    let gops_col = headers.iter().position(|h| h == "gops").unwrap();
    let gops: Vec<f64> = rdr.records().map(|r| r.unwrap()[gops_col].parse().unwrap()).collect();
    assert_eq!(gops.len(), 2);
    let ratio = gops[1] / gops[0];
    assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
}

#[test]
fn events_then_run_equals_binned_run() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(dir.path(), "net.toml", SMALL_NET);
    let mut csv = String::from("t_us,x,y,polarity\n");
    for i in 0..300u64 {
        csv.push_str(&format!("{},{},{},{}\n", i * 13, (i * 7) % 10, (i * 3) % 10, i % 2));
    }
    let events = write(dir.path(), "ev.csv", &csv);
    let spk = dir.path().join("ev.spkt");
    let o = cimsnn(&[
        "ingest-events", "--events", s(&events), "--width", "10", "--height", "10",
        "--timesteps", "4", "--window-us", "1000", "--out", s(&spk),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = cimsnn(&["run", "--net", s(&net), "--events", s(&events), "--window-us", "1000", "--seed", "2"]);
    let b = cimsnn(&["run", "--net", s(&net), "--spikes", s(&spk), "--seed", "2"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    assert_eq!(a.stdout, b.stdout);
    let report: RunReport = serde_json::from_slice(&a.stdout).unwrap();
    assert!(report.total_cycles > 0 && report.layers.len() == 3);
}

#[test]
fn run_is_deterministic_and_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(dir.path(), "net.toml", SMALL_NET);
    let w = dir.path().join("w.spkw");
    assert_eq!(code(&cimsnn(&["gen-weights", "--net", s(&net), "--seed", "9", "--out", s(&w)])), 0);
    let inp = dir.path().join("in.spkt");
    assert_eq!(code(&cimsnn(&["gen-spikes", "--dims", "4,2,10,10", "--sparsity", "0.6", "--seed", "9", "--out", s(&inp)])), 0);
    let (r1, r2, tr) = (dir.path().join("r1.json"), dir.path().join("r2.json"), dir.path().join("t.csv"));
    let (o1, o2) = (dir.path().join("o1.spkt"), dir.path().join("o2.spkt"));
    let base = ["run", "--net", s(&net), "--spikes", s(&inp), "--weights", s(&w)];
    let a = cimsnn(&[&base[..], &["--report", s(&r1), "--out-spikes", s(&o1), "--trace", s(&tr)]].concat());
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = cimsnn(&[&base[..], &["--report", s(&r2)]].concat());
    assert_eq!(code(&b), 0);
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
    let trace = std::fs::read_to_string(&tr).unwrap();
    assert!(trace.starts_with("cycle,layer,tile,unit,timestep,event\n") && trace.lines().count() > 10);

    let g = cimsnn(&["golden", "--net", s(&net), "--spikes", s(&inp), "--weights", s(&w), "--out-spikes", s(&o2)]);
    assert_eq!(code(&g), 0, "{}", stderr(&g));
    assert_eq!(std::fs::read(&o1).unwrap(), std::fs::read(&o2).unwrap());
    let summary: serde_json::Value = serde_json::from_slice(&g.stdout).unwrap();
    assert_eq!(summary["layers"].as_array().unwrap().len(), 3);
}

#[test]
fn report_follows_the_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(dir.path(), "net.toml", SMALL_NET);
    let run = |f: &str| {
        let o = cimsnn(&["run", "--net", s(&net), "--input-sparsity", "0.8", "--freq-mhz", f]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        serde_json::from_slice::<RunReport>(&o.stdout).unwrap()
    };
    let (a, b) = (run("50"), run("150"));
    assert_eq!(a.total_cycles, b.total_cycles);
    assert!((b.gops / a.gops - 3.0).abs() < 1e-9);
}

#[test]
fn calibrate_reproduces_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cal.toml");
    let o = cimsnn(&["calibrate", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), CalibratedConfig::shipped_text());

    let targets = write(dir.path(), "t.toml", "power_mw = 4.9\nhigh_power_mw = 1.0\n");
    let o = cimsnn(&["calibrate", "--targets", s(&targets)]);
    assert_eq!(code(&o), 6, "{}", stderr(&o));
    let bad = write(dir.path(), "bad.toml", "power = 4.9\n");
    assert_eq!(code(&cimsnn(&["calibrate", "--targets", s(&bad)])), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cimsnn(&["run", "--net", "/nonexistent/net.toml", "--input-sparsity", "0.5"])), 1);
    assert_eq!(code(&cimsnn(&["frobnicate"])), 2);
    let net = write(dir.path(), "net.toml", SMALL_NET);
    assert_eq!(code(&cimsnn(&["run", "--net", s(&net)])), 2);
    let broken = write(dir.path(), "broken.toml", "precision = 5\n");
    assert_eq!(code(&cimsnn(&["map", "--net", s(&broken)])), 3);
    let junk = write(dir.path(), "junk.spkt", "not a spike file");
    assert_eq!(code(&cimsnn(&["run", "--net", s(&net), "--spikes", s(&junk)])), 3);
    let ev = write(dir.path(), "ev.csv", "t_us,x,y,polarity\n0,99,0,1\n");
    let o = cimsnn(&["ingest-events", "--events", s(&ev), "--width", "4", "--height", "4", "--timesteps", "1", "--window-us", "10", "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn map_and_aer_emit_json() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(dir.path(), "net.toml", SMALL_NET);
    let o = cimsnn(&["map", "--net", s(&net), "--precision", "8"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["mode"], "mode1");
    assert_eq!(v[0]["weight_bits"], 8);
    assert!(v[1].is_null());

    let o = cimsnn(&["analyze-aer", "--addr-bits", "19", "--entries", "4096", "--sparsity", "0.9"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["crossover_sparsity"].as_f64().unwrap() - 0.947).abs() < 1e-3);
    assert_eq!(v["aer_smaller"], false);
}

#[test]
fn gen_spikes_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, z) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("z"));
    for p in [&a, &b] {
        assert_eq!(code(&cimsnn(&["gen-spikes", "--dims", "3,2,8,8", "--sparsity", "0.9", "--seed", "42", "--out", s(p)])), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(code(&cimsnn(&["gen-spikes", "--dims", "3,2,8,8", "--sparsity", "1", "--out", s(&z)])), 0);
    assert_eq!(cimsnn::io::read_spikes(&z).unwrap().count_ones(), 0);
    assert_eq!(code(&cimsnn(&["gen-spikes", "--dims", "3,2,8,8", "--sparsity", "1.5", "--out", s(&z)])), 2);
}
