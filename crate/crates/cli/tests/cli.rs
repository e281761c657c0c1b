use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use cat_core::affinity::{AffinityMatrix, Method};
use cat_core::data::{ClassSet, FeatureTable, LabelMap};
use serde_json::Value;

fn tool() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cat-tool"))
}

fn run(args: &[&str]) -> Output {
    tool().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_error(out: &Output) -> Value {
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    v["error"].clone()
}

/// Small deterministic generator so fixtures need no RNG dependency.
struct XorShift(u64);

impl XorShift {
    fn next(&mut self, n: usize) -> usize {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 % n as u64) as usize
    }
}

struct Fixture {
    dir: tempfile::TempDir,
    src: Arc<ClassSet>,
    tgt: Arc<ClassSet>,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let src = Arc::new(ClassSet::from_names("source", &["road", "sky", "tree", "car"]).unwrap());
        let tgt = Arc::new(ClassSet::from_names("target", &["street", "sky", "plant"]).unwrap());
        src.save(&dir.path().join("src.json")).unwrap();
        tgt.save(&dir.path().join("tgt.json")).unwrap();
        Self { dir, src, tgt }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn write_maps(&self, sub: &str, cs: &Arc<ClassSet>, seed: u64, n: usize) -> Vec<LabelMap> {
        let dir = self.path(sub);
        std::fs::create_dir_all(&dir).unwrap();
        let mut rng = XorShift(seed);
        (0..n)
            .map(|i| {
                let data = (0..64).map(|_| rng.next(cs.len()) as u16).collect();
                let m = LabelMap::new(format!("img{i:02}"), 8, 8, data, cs.clone()).unwrap();
                m.save(&dir.join(format!("img{i:02}.pgm"))).unwrap();
                m
            })
            .collect()
    }
}

#[test]
fn confusion_matches_counting_oracle_and_logs_inputs() {
    let f = Fixture::new();
    let gt = f.write_maps("gt", &f.tgt, 11, 4);
    let pred = f.write_maps("pred", &f.src, 12, 4);
    let out = run(&["affinity", "confusion", "--src", &f.s("src.json"), "--tgt", &f.s("tgt.json"), "--gt", &f.s("gt"), "--pred", &f.s("pred"), "--out", &f.s("conf.json")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut counts = [[0u64; 4]; 3];
    for (g, p) in gt.iter().zip(&pred) {
        for (&a, &b) in g.data().iter().zip(p.data()) {
            counts[a as usize][b as usize] += 1;
        }
    }
    let a = AffinityMatrix::load(&f.path("conf.json"), f.tgt.clone(), f.src.clone()).unwrap();
    for (k, row) in counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (l, &c) in row.iter().enumerate() {
            assert_eq!(a.get(k, l), c as f64 / total as f64);
        }
    }
    let log: Value = serde_json::from_slice(&std::fs::read(f.path("conf.json.log.json")).unwrap()).unwrap();
    assert_eq!(log["inputs"].as_object().unwrap().len(), 4);
    assert!(log["tool"].as_str().unwrap().starts_with("cat-core"));
}

#[test]
fn confusion_is_identical_across_thread_counts() {
    let f = Fixture::new();
    f.write_maps("gt", &f.tgt, 21, 6);
    f.write_maps("pred", &f.src, 22, 6);
    let mut files = Vec::new();
    for threads in ["1", "4", "8"] {
        let out_name = format!("conf{threads}.json");
        let out = run(&["--threads", threads, "affinity", "confusion", "--src", &f.s("src.json"), "--tgt", &f.s("tgt.json"), "--gt", &f.s("gt"), "--pred", &f.s("pred"), "--out", &f.s(&out_name)]);
        assert!(out.status.success());
        files.push(std::fs::read(f.path(&out_name)).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
}

#[test]
fn manifest_drives_estimators() {
    let f = Fixture::new();
    f.write_maps("gt", &f.tgt, 31, 3);
    f.write_maps("pred", &f.src, 32, 3);
    let manifest = r#"{
        "source_classes": "src.json", "target_classes": "tgt.json",
        "target_gt": "gt", "predicted_source": "pred",
        "test_embedder": true,
        "estimators": {"prototype": false},
        "output_dir": "out"
    }"#;
    std::fs::write(f.path("m.json"), manifest).unwrap();
    let out = run(&["affinity", "confusion", "--manifest", &f.s("m.json")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(f.path("out/confusion.json").exists());
    let out = run(&["affinity", "text", "--manifest", &f.s("m.json")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = AffinityMatrix::load(&f.path("out/text.json"), f.tgt.clone(), f.src.clone()).unwrap();
    assert_eq!(text.method(), Method::Text);
    let out = run(&["affinity", "prototype", "--manifest", &f.s("m.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["kind"], "manifest");
}

#[test]
fn missing_manifest_is_a_usage_error() {
    let f = Fixture::new();
    let out = run(&["affinity", "confusion", "--manifest", &f.s("nope.json")]);
    assert_eq!(out.status.code(), Some(2));
    let e = stderr_error(&out);
    assert_eq!(e["kind"], "manifest");
    assert_eq!(e["exit_code"], 2);
}

#[test]
fn usage_errors_exit_two_with_json() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["kind"], "usage");
    let out = run(&["--human-errors", "frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(serde_json::from_slice::<Value>(&out.stderr).is_err());
    let out = run(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ChaCha8"));
}

#[test]
fn computation_error_exits_one_without_partial_output() {
    let f = Fixture::new();
    f.write_maps("gt", &f.tgt, 41, 3);
    f.write_maps("pred", &f.src, 42, 2);
    let out = run(&["affinity", "confusion", "--src", &f.s("src.json"), "--tgt", &f.s("tgt.json"), "--gt", &f.s("gt"), "--pred", &f.s("pred"), "--out", &f.s("conf.json")]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error(&out)["kind"], "dimension_mismatch");
    assert!(!f.path("conf.json").exists());
}

fn matrix(f: &Fixture, rows: &[[f64; 4]], method: Method) -> AffinityMatrix {
    let values = rows.iter().flatten().copied().collect();
    let raw = AffinityMatrix::new(f.tgt.clone(), f.src.clone(), values, method).unwrap();
    cat_core::affinity::normalize_rows(&raw, Default::default()).unwrap()
}

#[test]
fn combine_resolves_disagreement_with_lowest_fid() {
    let f = Fixture::new();
    // Row 0: all agree on 0. Row 1: confusion and text agree on 1.
    // Row 2: all three disagree (2, 3, 0).
    let conf = matrix(&f, &[[5.0, 1.0, 0.0, 0.0], [0.0, 4.0, 1.0, 0.0], [0.0, 1.0, 3.0, 0.0]], Method::Confusion);
    let proto = matrix(&f, &[[3.0, 1.0, 0.0, 0.0], [0.0, 1.0, 4.0, 0.0], [0.0, 1.0, 0.0, 3.0]], Method::Prototype);
    let text = matrix(&f, &[[2.0, 1.0, 0.0, 0.0], [0.0, 2.0, 1.0, 0.0], [4.0, 1.0, 0.0, 0.0]], Method::Text);
    for (a, name) in [(&conf, "c.json"), (&proto, "p.json"), (&text, "t.json")] {
        a.save(&f.path(name)).unwrap();
    }
    let out = run(&["affinity", "combine", "--src", &f.s("src.json"), "--tgt", &f.s("tgt.json"), "--confusion", &f.s("c.json"), "--prototype", &f.s("p.json"), "--text", &f.s("t.json"), "--fallback-fid", "confusion=48.7,prototype=49.5,text=51.6", "--out", &f.s("comb.json")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let comb = AffinityMatrix::load(&f.path("comb.json"), f.tgt.clone(), f.src.clone()).unwrap();
    assert_eq!(comb.argmaxes(), vec![0, 1, 2]);
    let log: Value = serde_json::from_slice(&std::fs::read(f.path("comb.json.log.json")).unwrap()).unwrap();
    let votes = log["details"]["votes"].as_array().unwrap();
    assert_eq!(votes[0]["rule"], "unanimous");
    assert_eq!(votes[1]["rule"], "two_of_three");
    assert_eq!(votes[2]["rule"], "fallback:confusion");
}

#[test]
fn apply_hard_identity_is_byte_identical_and_soft_sums_to_one() {
    let f = Fixture::new();
    let id = AffinityMatrix::identity(f.tgt.clone());
    id.save(&f.path("id.json")).unwrap();
    f.write_maps("maps", &f.tgt, 51, 3);
    let out = run(&["apply", "--affinity", &f.s("id.json"), "--src", &f.s("tgt.json"), "--tgt", &f.s("tgt.json"), "--maps", &f.s("maps"), "--mode", "hard", "--out", &f.s("hard")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..3 {
        let name = format!("img{i:02}.pgm");
        assert_eq!(std::fs::read(f.path("maps").join(&name)).unwrap(), std::fs::read(f.path("hard").join(&name)).unwrap());
    }

    let soft = matrix(&f, &[[1.0, 2.0, 0.0, 1.0], [0.0, 1.0, 0.0, 0.0], [0.0, 1.0, 3.0, 1.0]], Method::Manual);
    soft.save(&f.path("soft.json")).unwrap();
    let soft_args = |out: &str| {
        run(&["apply", "--affinity", &f.s("soft.json"), "--src", &f.s("src.json"), "--tgt", &f.s("tgt.json"), "--maps", &f.s("maps"), "--mode", "soft", "--out", &f.s(out)])
    };
    assert!(soft_args("soft_a").status.success());
    assert!(soft_args("soft_b").status.success());
    let field = FeatureTable::load(&f.path("soft_a/img00.catf")).unwrap();
    assert_eq!((field.len(), field.dim()), (64, 4));
    for row in field.rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6, "f32 storage keeps sums near 1");
    }
    for ext in ["catf", "catf.ids.json", "catf.meta.json"] {
        let name = format!("img01.{ext}");
        assert_eq!(std::fs::read(f.path("soft_a").join(&name)).unwrap(), std::fs::read(f.path("soft_b").join(&name)).unwrap());
    }
}

#[test]
fn sample_full_pool_and_determinism() {
    let f = Fixture::new();
    f.write_maps("pool", &f.tgt, 61, 10);
    let full = stdout_json(&run(&["sample", "--pool", &f.s("pool"), "--classes", &f.s("tgt.json"), "--k", "10"]));
    let mut ids: Vec<String> = full["selected"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    ids.sort();
    assert_eq!(ids, (0..10).map(|i| format!("img{i:02}")).collect::<Vec<_>>());

    let mut outputs = Vec::new();
    for threads in ["1", "4", "8"] {
        let out = run(&["--seed", "7", "--threads", threads, "sample", "--pool", &f.s("pool"), "--classes", &f.s("tgt.json"), "--k", "4"]);
        outputs.push(stdout_json(&out));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    assert_eq!(outputs[0]["seed"], 7);
    assert_eq!(outputs[0]["kl_trace"].as_array().unwrap().len(), 4);
}

#[test]
fn sample_frozen_selection() {
    let f = Fixture::new();
    f.write_maps("pool", &f.tgt, 61, 10);
    let v = stdout_json(&run(&["--seed", "3", "sample", "--pool", &f.s("pool"), "--classes", &f.s("tgt.json"), "--k", "3"]));
    let selected: Vec<&str> = v["selected"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
    assert_eq!(selected, FROZEN_SELECTION);
}

// Captured from a run; a change here means the seeded stream or the greedy
// tie-break changed.
const FROZEN_SELECTION: [&str; 3] = ["img01", "img08", "img06"];

fn write_features(path: &Path, rows: &[Vec<f64>]) {
    let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
    FeatureTable::from_rows(ids, rows).unwrap().save(path).unwrap();
}

#[test]
fn metrics_reports() {
    let f = Fixture::new();
    let mut rng = XorShift(71);
    let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.next(1000) as f64 / 250.0).collect()).collect();
    write_features(&f.path("a.catf"), &rows);
    let fid = stdout_json(&run(&["metrics", "fid", "--real", &f.s("a.catf"), "--fake", &f.s("a.catf"), "--out", &f.s("fid.json")]));
    assert_eq!(fid["metric"], "fid");
    assert!(fid["value"].as_f64().unwrap().abs() < 1e-10);
    assert!(f.path("fid.json").exists() && f.path("fid.json.log.json").exists());

    // KID with block = N against a direct double sum over the f32-stored rows.
    let other: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * 0.5 + 0.25).collect()).collect();
    write_features(&f.path("b.catf"), &other);
    let x = FeatureTable::load(&f.path("a.catf")).unwrap();
    let y = FeatureTable::load(&f.path("b.catf")).unwrap();
    let k = |a: &[f64], b: &[f64]| (a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / 3.0 + 1.0).powi(3);
    let n = 40.0;
    let (mut kxx, mut kyy, mut kxy) = (0.0, 0.0, 0.0);
    for i in 0..40 {
        for j in 0..40 {
            if i != j {
                kxx += k(x.row(i), x.row(j));
                kyy += k(y.row(i), y.row(j));
            }
            kxy += k(x.row(i), y.row(j));
        }
    }
    let oracle = kxx / (n * (n - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / (n * n);
    let kid = stdout_json(&run(&["metrics", "kid", "--real", &f.s("a.catf"), "--fake", &f.s("b.catf"), "--block", "40", "--blocks", "1"]));
    assert!((kid["value"].as_f64().unwrap() - oracle).abs() < 1e-10 * oracle.abs().max(1.0));
    assert_eq!(kid["params"]["block_size"], 40);

    let two = Arc::new(ClassSet::from_names("two", &["a", "b"]).unwrap());
    two.save(&f.path("two.json")).unwrap();
    std::fs::create_dir_all(f.path("mg")).unwrap();
    std::fs::create_dir_all(f.path("mp")).unwrap();
    LabelMap::new("m", 4, 1, vec![0, 0, 1, 1], two.clone()).unwrap().save(&f.path("mg/m.pgm")).unwrap();
    LabelMap::new("m", 4, 1, vec![0, 1, 1, 1], two).unwrap().save(&f.path("mp/m.pgm")).unwrap();
    let m = stdout_json(&run(&["metrics", "miou", "--classes", &f.s("two.json"), "--gt", &f.s("mg"), "--pred", &f.s("mp")]));
    assert_eq!(m["value"].as_f64().unwrap(), 7.0 / 12.0);
    let perfect = stdout_json(&run(&["metrics", "miou", "--classes", &f.s("two.json"), "--gt", &f.s("mg"), "--pred", &f.s("mg")]));
    assert_eq!(perfect["value"].as_f64().unwrap(), 1.0);
}

#[test]
fn toy_lab_report() {
    let f = Fixture::new();
    std::fs::write(f.path("cfg.json"), r#"{"stage1_iters": 20, "stage2_iters": 20}"#).unwrap();
    let out = run(&["toy-lab", "run", "--config", &f.s("cfg.json"), "--seeds", "0..3", "--out", &f.s("toy.json")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&std::fs::read(f.path("toy.json")).unwrap()).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 3);
    assert_eq!(v["summary"]["seeds"], 3);
    assert_eq!(v["config"]["stage1_iters"], 20);

    let out = run(&["toy-lab", "run", "--seeds", "a,b", "--out", &f.s("toy2.json")]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(f.path("bad.json"), r#"{"lr": -1}"#).unwrap();
    let out = run(&["toy-lab", "run", "--config", &f.s("bad.json"), "--out", &f.s("toy3.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!f.path("toy3.json").exists());
}

#[test]
fn export_weights_round_trip() {
    let f = Fixture::new();
    let soft = matrix(&f, &[[1.0, 2.0, 0.0, 1.0], [0.0, 1.0, 0.0, 0.0], [0.0, 1.0, 3.0, 1.0]], Method::Manual);
    soft.save(&f.path("soft.json")).unwrap();
    for layout in ["row_major_TxS", "col_major_SxT"] {
        let w = f.path(&format!("{layout}.catf"));
        let out = run(&["export-weights", "--affinity", &f.s("soft.json"), "--src", &f.s("src.json"), "--tgt", &f.s("tgt.json"), "--layout", layout, "--out", &w.display().to_string()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let back = cat_core::transfer::import_layer_weights(&w, f.tgt.clone(), f.src.clone()).unwrap();
        for (a, b) in back.values().iter().zip(soft.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    let out = run(&["export-weights", "--affinity", &f.s("soft.json"), "--src", &f.s("src.json"), "--tgt", &f.s("tgt.json"), "--layout", "diagonal", "--out", &f.s("w.catf")]);
    assert_eq!(out.status.code(), Some(2));
}
