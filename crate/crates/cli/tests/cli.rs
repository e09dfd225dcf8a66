use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dmvfc::nn::{load_weights, EncoderWeights, View};
use dmvfc::pretrain::init_seed;

fn dmvfc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmvfc"))
        .current_dir(dir)
        .env_remove("DMVFC_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dmvfc(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn ari_of(json: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    v["metrics"]["ari"].as_f64().unwrap()
}

#[test]
fn synth_then_eval_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--G", "4", "--F", "2", "--n", "400", "--seed", "7", "--out", "b.dmvf", "--labels-out", "t.csv"]);
    let json = ok(d, &["eval", "--bundle", "b.dmvf", "--labels", "t.csv", "--out", "m.json"]);
    assert_eq!(ari_of(&json), 1.0);
    assert_eq!(fs::read_to_string(d.join("m.json")).unwrap(), json);
}

#[test]
fn zero_epoch_pretrain_is_fresh_init() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "40", "--seed", "1", "--out", "b.dmvf"]);
    ok(d, &["pretrain", "--bundle", "b.dmvf", "--view", "geo", "--epochs", "0", "--seed", "5", "--out", "w.bin"]);
    let loaded = load_weights(d.join("w.bin"), Some(View::Geometric)).unwrap();
    let fresh = EncoderWeights::init(View::Geometric, init_seed(5, View::Geometric));
    assert_eq!(loaded.tensors(), fresh.tensors());
}

#[test]
fn pretrain_writes_periodic_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "30", "--seed", "2", "--out", "b.dmvf"]);
    ok(d, &["pretrain", "--bundle", "b.dmvf", "--view", "geo", "--epochs", "5", "--batch", "16", "--checkpoint-every", "2", "--out", "w.bin"]);
    for e in [2, 4] {
        load_weights(d.join(format!("w.bin.e{e}")), Some(View::Geometric)).unwrap();
        assert!(d.join(format!("w.bin.e{e}.meta")).exists());
    }
    assert!(!d.join("w.bin.e5").exists());
    assert!(d.join("w.bin").exists());
}

#[test]
fn outputs_carry_header_and_are_reproducible() {
    let run = |d: &Path| {
        ok(d, &["synth", "--n", "60", "--G", "2", "--F", "2", "--seed", "3", "--out", "b.dmvf"]);
        ok(d, &["pretrain", "--bundle", "b.dmvf", "--view", "func", "--epochs", "2", "--batch", "16", "--out", "f.bin", "--history", "h.csv"]);
        ["b.dmvf", "b.dmvf.meta", "f.bin", "f.bin.meta", "h.csv"]
            .map(|f| fs::read(d.join(f)).unwrap())
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ra, rb) = (run(a.path()), run(b.path()));
    assert_eq!(ra, rb);
    let history = String::from_utf8(ra[4].clone()).unwrap();
    let first = history.lines().next().unwrap();
    assert!(first.starts_with("# dmvfc 0.1.0 pretrain config="), "{first}");
    assert!(first.contains("seeds=seed:0"));
}

#[test]
fn flag_beats_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.cfg"), "# synthetic\nseed = 3\nn = 30\n").unwrap();
    let from_file = ok(d, &["synth", "--config", "run.cfg", "--out", "a.dmvf"]);
    assert!(from_file.contains("seeds=seed:3"));
    let from_flag = ok(d, &["synth", "--config", "run.cfg", "--seed", "5", "--out", "b.dmvf"]);
    assert!(from_flag.contains("seeds=seed:5"));
    assert!(from_flag.contains("wrote 30 fibers"));
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let unknown_flag = dmvfc(d, &["synth", "--bogus", "1", "--out", "x.dmvf"]);
    assert!(!unknown_flag.status.success());
    fs::write(d.join("bad.cfg"), "colour = red\n").unwrap();
    let unknown_key = dmvfc(d, &["synth", "--config", "bad.cfg", "--out", "x.dmvf"]);
    assert!(!unknown_key.status.success());
    assert!(String::from_utf8_lossy(&unknown_key.stderr).contains("colour"));
    let missing = dmvfc(d, &["eval", "--bundle", "nope.dmvf", "--labels", "nope.csv"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.dmvf"));
    let no_gamma = {
        ok(d, &["synth", "--n", "20", "--out", "s.dmvf"]);
        ok(d, &["pretrain", "--bundle", "s.dmvf", "--view", "geo", "--epochs", "0", "--out", "g.bin"]);
        dmvfc(d, &["finetune", "--bundle", "s.dmvf", "--geo", "g.bin", "--K", "2", "--out", "m.bin"])
    };
    assert!(!no_gamma.status.success());
    assert!(!dmvfc(d, &["baseline", "--bundle", "s.dmvf", "--out", "l.csv", "--threads", "0"]).status.success());
}

#[test]
fn help_lists_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[(&str, &[&str])] = &[
        ("synth", &["--G", "--F", "--n", "--seed", "--preset", "--jitter-of", "--out", "--labels-out"]),
        ("pretrain", &["--bundle", "--view", "--epochs", "--lr", "--decay", "--decay-every", "--batch", "--pairs", "--seed", "--out", "--history"]),
        ("finetune", &["--geo", "--func", "--K", "--gamma", "--init", "--kmeans-seed", "--geo-out", "--func-out"]),
        ("infer", &["--model", "--fa-weight", "--two-pass", "--q-out", "--model-out"]),
        ("eval", &["--bundle", "--labels", "--out"]),
        ("baseline", &["--threshold"]),
        ("consistency", &["--subject", "--labels"]),
        ("gradcheck", &["--instances", "--tol"]),
    ];
    for (cmd, flags) in cases {
        let help = ok(dir.path(), &[cmd, "--help"]);
        for f in *flags {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
        assert!(help.contains("--config") && help.contains("--threads"));
    }
}

#[test]
fn baseline_recovers_separated_groups() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--G", "3", "--F", "1", "--n", "90", "--seed", "2", "--out", "b.dmvf"]);
    let out = ok(d, &["baseline", "--bundle", "b.dmvf", "--threshold", "2", "--out", "qb.csv", "--threads", "1"]);
    assert!(out.contains("3 clusters"));
    assert_eq!(ari_of(&ok(d, &["eval", "--bundle", "b.dmvf", "--labels", "qb.csv"])), 1.0);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--instances", "1", "--out", "g.json"]);
    assert!(out.contains("max relative error"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("g.json")).unwrap()).unwrap();
    assert!(v["report"]["max_rel_err"].as_f64().unwrap() < 1e-4);
}

#[test]
fn pipeline_stages_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--G", "2", "--F", "2", "--n", "48", "--seed", "4", "--out", "s0.dmvf"]);
    for v in ["geo", "func"] {
        ok(d, &["pretrain", "--bundle", "s0.dmvf", "--view", v, "--epochs", "3", "--batch", "16", "--out", &format!("{v}.bin")]);
    }
    ok(d, &[
        "finetune", "--bundle", "s0.dmvf", "--geo", "geo.bin", "--func", "func.bin", "--K", "4", "--epochs", "2",
        "--lr", "1e-3", "--batch", "24", "--out", "model.bin", "--geo-out", "geo_ft.bin", "--history", "ft.csv",
    ]);
    assert_eq!(fs::read_to_string(d.join("ft.csv")).unwrap().lines().filter(|l| !l.starts_with('#')).count(), 3);
    ok(d, &["infer", "--bundle", "s0.dmvf", "--geo", "geo_ft.bin", "--model", "model.bin", "--out", "l0.csv", "--q-out", "q.csv", "--model-out", "model_fa.bin"]);
    let q = fs::read_to_string(d.join("q.csv")).unwrap();
    for row in q.lines().skip(1) {
        let s: f64 = row.split(',').map(|x| x.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
    let mut subjects = vec!["--subject".to_string(), "s0.dmvf".into(), "--labels".into(), "l0.csv".into()];
    for s in 1..3 {
        let b = format!("s{s}.dmvf");
        let l = format!("l{s}.csv");
        ok(d, &["synth", "--jitter-of", "s0.dmvf", "--jitter-sigma", "0.5", "--seed", &s.to_string(), "--out", &b]);
        ok(d, &["infer", "--bundle", &b, "--geo", "geo_ft.bin", "--model", "model_fa.bin", "--out", &l]);
        subjects.extend(["--subject".into(), b, "--labels".into(), l]);
    }
    let mut args = vec!["consistency", "--out", "c.csv"];
    args.extend(subjects.iter().map(String::as_str));
    ok(d, &args);
    let csv = fs::read_to_string(d.join("c.csv")).unwrap();
    for key in ["mean_pathway,,,", "mean_intra_cluster,,,", "mean_bundle,,,"] {
        assert!(csv.contains(key));
    }
}
