mod support;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use homognx::report::{read_profile, read_series, Format};
use homognx::tensor_io::{write_stack, ActivationStack, AttentionStack, DatasetTag, Stack};
use nalgebra::DMatrix;

fn homognx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homognx"))
        .args(args)
        .env_remove("HOMOGNX_THREADS")
        .output()
        .unwrap()
}

fn homognx_env(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homognx")).args(args).env("HOMOGNX_THREADS", threads).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_activations(dir: &Path, count: usize) {
    let mut r = support::rng(12);
    for i in 0..count {
        let layers = (0..4).map(|_| support::gaussian(6 + i, 5, &mut r)).collect();
        let stack = ActivationStack::new(format!("doc{i}"), layers, "toy", DatasetTag::Original);
        write_stack(&Stack::Activation(stack), dir.join(format!("sample{i}.homognx"))).unwrap();
    }
}

fn write_attention(dir: &Path, name: &str, a: DMatrix<f64>, causal: bool) {
    let stack = AttentionStack::new(name, vec![vec![a; 2]; 2], causal, "toy", DatasetTag::Front);
    write_stack(&Stack::Attention(stack), dir.join(format!("{name}.homognx"))).unwrap();
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

fn contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    listing(dir).into_iter().map(|f| (f.clone(), fs::read(dir.join(&f)).unwrap())).collect()
}

#[test]
fn metrics_writes_one_file_per_metric() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, out) = (tmp.path().join("in"), tmp.path().join("out"));
    fs::create_dir(&input).unwrap();
    write_activations(&input, 3);
    let o = homognx(&["metrics", "--input", s(&input), "--out", s(&out), "--metrics", "erank,mev"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    assert_eq!(listing(&out), vec!["original_erank.csv", "original_mev.csv"]);
    let series = read_series(out.join("original_mev.csv"), Format::Csv).unwrap();
    assert_eq!(series.len(), 4);
    assert!(series.per_layer.iter().all(|l| l.sample_count == 3));
}

#[test]
fn corrupt_container_is_named_and_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, out) = (tmp.path().join("in"), tmp.path().join("out"));
    fs::create_dir(&input).unwrap();
    write_activations(&input, 3);
    let bytes = fs::read(input.join("sample1.homognx")).unwrap();
    fs::write(input.join("sample1.homognx"), &bytes[..bytes.len() / 2]).unwrap();
    let o = homognx(&["metrics", "--input", s(&input), "--out", s(&out), "--metrics", "erank"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sample1.homognx"), "{}", stderr(&o));
    let series = read_series(out.join("original_erank.csv"), Format::Csv).unwrap();
    assert!(series.per_layer.iter().all(|l| l.sample_count == 2));
}

#[test]
fn simulated_collapse_through_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let (sim, out) = (tmp.path().join("sim"), tmp.path().join("out"));
    let o = homognx(&["sim", "--lambda2", "1", "--layers", "6", "--out", s(&sim)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = homognx(&["metrics", "--input", s(&sim), "--out", s(&out), "--metrics", "erank"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let erank = read_series(out.join("synthetic_erank.csv"), Format::Csv).unwrap().means();
    assert!(erank[0] > 5.0);
    assert!(erank[1..].iter().all(|e| (e - 1.0).abs() < 1e-9), "{erank:?}");
}

#[test]
fn sim_identity_full_bias() {
    let tmp = tempfile::tempdir().unwrap();
    let o = homognx(&["sim", "--lambda2", "1.0", "--value-map", "identity", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let d = read_series(tmp.path().join("sim_lambda2_1_dispersion.csv"), Format::Csv).unwrap().means();
    assert_eq!(d.len(), 51);
    assert!(d[0] > 0.0);
    assert!(d[1..].iter().all(|v| *v == 0.0));
}

#[test]
fn sweep_writes_eleven_series() {
    let tmp = tempfile::tempdir().unwrap();
    let o = homognx(&["sim", "--sweep-lambda2", "0:1:0.1", "--layers", "10", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let files = listing(tmp.path());
    let series: Vec<&String> = files.iter().filter(|f| f.ends_with("_dispersion.csv")).collect();
    assert_eq!(series.len(), 11);
    assert!(files.contains(&"sim_lambda2_0.3_dispersion.csv".to_string()));
    assert_eq!(files.iter().filter(|f| f.ends_with(".homognx")).count(), 11);
}

#[test]
fn sim_is_bit_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = |dir: &PathBuf| {
        homognx(&[
            "sim", "--lambda2", "0.7", "--value-map", "random-contraction", "--seed", "7",
            "--metrics", "erank,mev,mauve", "--out", s(dir),
        ])
    };
    assert_eq!(args(&a).status.code(), Some(0));
    assert_eq!(args(&b).status.code(), Some(0));
    assert_eq!(contents(&a), contents(&b));
}

#[test]
fn thread_count_does_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    fs::create_dir(&input).unwrap();
    write_activations(&input, 5);
    let run = |threads: &str, name: &str| {
        let out = tmp.path().join(name);
        let o = homognx_env(&["metrics", "--input", s(&input), "--out", s(&out), "--metrics", "all"], threads);
        (o, out)
    };
    let (o1, one) = run("1", "one");
    let (o4, four) = run("4", "four");
    assert_eq!(o1.status.code(), o4.status.code());
    assert_eq!(contents(&one), contents(&four));

    let o = homognx_env(&["metrics", "--input", s(&input), "--out", s(&one)], "many");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("HOMOGNX_THREADS"));
    let o = homognx_env(&["metrics", "--input", s(&input), "--out", s(&one)], "0");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn lambda2_out_of_range_is_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    for bad in ["1.5", "-0.2"] {
        let o = homognx(&["sim", &format!("--lambda2={bad}"), "--out", s(tmp.path())]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
        assert!(stderr(&o).contains("lambda2"));
    }
    assert!(listing(tmp.path()).is_empty());
}

#[test]
fn bias_profiles() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    fs::create_dir(&input).unwrap();
    write_attention(&input, "ident", DMatrix::identity(6, 6), false);
    let out = tmp.path().join("flat");
    let o = homognx(&["bias", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let p = read_profile(out.join("front_bias.csv"), Format::Csv).unwrap();
    assert_eq!(p.per_position_mass, vec![1.0; 6]);

    let sink_dir = tmp.path().join("sink");
    fs::create_dir(&sink_dir).unwrap();
    let sink = DMatrix::from_fn(5, 5, |_, c| if c == 0 { 1.0 } else { 0.0 });
    write_attention(&sink_dir, "sink", sink, true);
    let out = tmp.path().join("skipped");
    let o = homognx(&["bias", "--input", s(&sink_dir), "--out", s(&out), "--skip-prefix", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let p = read_profile(out.join("front_bias.csv"), Format::Csv).unwrap();
    assert_eq!(p.positions, vec![1.0, 2.0, 3.0, 4.0]);
    assert!(p.per_position_mass.iter().all(|m| m.abs() < 1e-12));

    let o = homognx(&["bias", "--input", s(&sink_dir), "--out", s(&out), "--scope", "per-layer"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("front_bias_layer1.csv").exists());

    let o = homognx(&["bias", "--input", s(&sink_dir), "--out", s(&out), "--skip-prefix", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("skip-prefix"), "{}", stderr(&o));
}

#[test]
fn validate_reports_violations() {
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let o = homognx(&["validate", s(&golden)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("golden_activation.homognx: ok (2 samples)"));

    let tmp = tempfile::tempdir().unwrap();
    let bytes = fs::read(golden.join("golden_attention.homognx")).unwrap();
    let mut broken = bytes.clone();
    let n = broken.len();
    broken[n - 4..].copy_from_slice(&0.5f32.to_le_bytes());
    let path = tmp.path().join("broken.homognx");
    fs::write(&path, broken).unwrap();
    let o = homognx(&["validate", s(&path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("broken.homognx#p0: row-stochastic violation"), "{}", stderr(&o));
}

#[test]
fn config_file_supplies_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    let out = tmp.path().join("out");
    fs::write(
        &cfg,
        format!(r#"{{"out": "{}", "sim": {{"n": 6, "d": 3, "depth": 4}}, "format": "json"}}"#, s(&out)),
    )
    .unwrap();
    let o = homognx(&["--config", s(&cfg), "sim", "--layers", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let series = read_series(out.join("sim_lambda2_0.7_dispersion.json"), Format::Json).unwrap();
    assert_eq!(series.len(), 4);
}

#[test]
fn bad_usage_exits_two() {
    assert_eq!(homognx(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(homognx(&["metrics", "--input", "/no/such/dir"]).status.code(), Some(2));
    assert_eq!(homognx(&["sim", "--target", "middle"]).status.code(), Some(2));
}
