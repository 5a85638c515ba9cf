use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use synprobe::csvout::Table;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_synprobe"));
    c.env_remove("SYNPROBE_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn synprobe")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "synprobe {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/fixtures")
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

const TINY: &str = "seed = 5
epsilon_grid = [0.01, 0.03]
[model]
n_layers = 2
n_heads = 2
d_model = 8
d_ff = 16
[grammar]
n_sentences = 80
[pretrain]
total_steps = 10
batch_size = 8
[finetune]
total_steps = 6
batch_size = 8
eval_every = 3
[pgd]
n_steps = 2
[probe]
epochs = 1
[analysis]
influence_examples = 3
shuffle_sets = 2
";

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p
}

fn cat<'a>(a: &[&'a str], b: &[&'a str]) -> Vec<&'a str> {
    [a, b].concat()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs pretrain, both fine-tunings and the per-model analyses.
fn pipeline(cfg: &Path, dir: &Path, extra: &[&str]) {
    let base = ["-c", s(cfg), "--run-dir", s(dir)];
    let go = |rest: &[&str]| {
        let mut a: Vec<&str> = base.to_vec();
        a.extend_from_slice(extra);
        a.extend_from_slice(rest);
        ok(&a);
    };
    go(&["pretrain"]);
    go(&["finetune", "--mode", "vanilla"]);
    go(&["finetune", "--mode", "adv"]);
    for m in ["base", "van", "adv"] {
        go(&["probe-free", "pairs", "--model", m]);
        go(&["probe-free", "order", "--model", m]);
        go(&["analyze", "svd", "--model", m]);
        go(&["analyze", "trees", "--model", m]);
        go(&["analyze", "spectral", "--model", m]);
    }
    go(&["probe-free", "kl", "--model", "van"]);
    go(&["probe-param", "pareto", "--model", "van", "--ranks", "1,2"]);
    go(&["probe-param", "layer-sweep", "--model", "adv", "--task", "POSL"]);
    go(&["report"]);
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".csv"))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn report_over_fixtures_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    copy_dir(&fixtures().join("run"), &dir);
    let a = ok(&["--run-dir", s(&dir), "report"]).stdout;
    let first = std::fs::read(dir.join("report.csv")).unwrap();
    let b = ok(&["--run-dir", s(&dir), "report"]).stdout;
    let second = std::fs::read(dir.join("report.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(first, second);
    assert_eq!(first, a);
    assert_eq!(first, std::fs::read(fixtures().join("report_expected.csv")).unwrap());
    let t = Table::read(&dir.join("report.csv")).unwrap();
    assert_eq!(t.header[..4], ["metric", "base", "VAN", "ADV"]);
    // a spot check of the join against the source CSV
    let svd = Table::read(&dir.join("svd_van.csv")).unwrap();
    let src = svd.rows.iter().find(|r| r[1] == "2" && r[2] == "1").unwrap()[3].clone();
    let row = t.rows.iter().find(|r| r[0] == "svd/layer2/rank1").unwrap();
    assert_eq!(row[2], src);
}

#[test]
fn finetune_flags_reach_the_manifest_before_the_checkpoint_is_needed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = run(&[
        "--run-dir", s(&dir), "finetune", "--mode", "adv", "--epsilon", "0.2", "--alpha-frac", "0.2", "--steps", "20",
    ]);
    assert_eq!(out.status.code(), Some(3), "missing base checkpoint is a data error");
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing checkpoint"));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest-finetune-adv.json")).unwrap()).unwrap();
    let pgd = &m["config"]["experiment"]["pgd"];
    assert_eq!(pgd["epsilon"].as_f64(), Some(0.2));
    assert!((pgd["alpha"].as_f64().unwrap() - 0.04).abs() < 1e-15);
    assert_eq!(pgd["n_steps"].as_u64(), Some(20));
    assert_eq!(m["config"]["experiment"]["epsilon_grid"], serde_json::json!([]));
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["version"].as_str().unwrap().starts_with('v'));
    assert!(!dir.join(".lock").exists(), "lock released on error");
}

#[test]
fn svd_ranks_flag_limits_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let dir = tmp.path().join("run");
    ok(&["-c", s(&cfg), "--run-dir", s(&dir), "pretrain"]);
    ok(&["-c", s(&cfg), "--run-dir", s(&dir), "analyze", "svd", "--model", "base", "--ranks", "2,1"]);
    let t = Table::read(&dir.join("svd_base.csv")).unwrap();
    assert_eq!(t.header, ["model_tag", "layer", "rank", "accuracy"]);
    let cells: Vec<(String, String)> = t.rows.iter().map(|r| (r[1].clone(), r[2].clone())).collect();
    let want: Vec<(String, String)> = std::iter::once(("-1".to_string(), "0".to_string()))
        .chain((1..=2).flat_map(|l| [1, 2].map(|r| (l.to_string(), r.to_string()))))
        .collect();
    assert_eq!(cells, want);
}

#[test]
fn pipeline_is_reproducible_and_exec_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    pipeline(&cfg, &a, &[]);
    pipeline(&cfg, &b, &["--sequential"]);
    let fa = csv_files(&a);
    assert!(fa.len() > 20, "{} CSVs", fa.len());
    assert_eq!(fa, csv_files(&b));
    for f in ["base.json", "van.json", "adv.json", "trees_adv.json", "vocab.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(Table::read(&a.join("kl_van.csv")).unwrap().rows.len() >= 3);
    let tuning = Table::read(&a.join("epsilon_tuning.csv")).unwrap();
    assert_eq!(tuning.rows.len(), 2);
    assert_eq!(tuning.rows.iter().filter(|r| r[3] == "true").count(), 1);
    assert!(!a.join("ckpt-adv-grid0").exists() && a.join("ckpt-adv").is_dir());

    // a run against itself and against its sequential twin: all deltas
    // zero, no dominance
    for (i, other) in [&a, &b].into_iter().enumerate() {
        let out = tmp.path().join(format!("cmp{i}"));
        ok(&["compare", s(&a), s(other), "--out", s(&out)]);
        let d = Table::read(&out.join("compare.csv")).unwrap();
        assert!(d.rows.len() > 50);
        for r in &d.rows {
            assert_eq!(r[5], "ok", "{r:?}");
            assert_eq!(r[4], "0", "{r:?}");
        }
        let v = Table::read(&out.join("pareto_verdicts.csv")).unwrap();
        assert_eq!(v.rows, [["VAN", "none"]]);
    }
}

#[test]
fn kl_command_recomputes_the_training_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let dir = tmp.path().join("run");
    let base = ["-c", s(&cfg), "--run-dir", s(&dir)];
    ok(&cat(&base, &["pretrain"]));
    ok(&cat(&base, &["finetune", "--mode", "adv", "--epsilon", "0.05"]));
    let during = std::fs::read(dir.join("kl_adv.csv")).unwrap();
    ok(&cat(&base, &["probe-free", "kl", "--model", "adv"]));
    assert_eq!(during, std::fs::read(dir.join("kl_adv.csv")).unwrap());
    let t = Table::read(&dir.join("kl_adv.csv")).unwrap();
    let steps: Vec<&str> = t.rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(steps, ["0", "3", "6"]);
    assert_eq!(t.rows[0][1], "0", "step 0 is the base model itself");
}

fn write_pareto(dir: &Path, rows: &[(usize, f64)]) {
    std::fs::create_dir_all(dir).unwrap();
    let mut t = Table::new(&["model_tag", "rank", "n_params", "uas"]);
    for &(r, u) in rows {
        t.push(vec!["VAN".into(), r.to_string(), (64 * r).to_string(), u.to_string()]);
    }
    t.write(&dir.join("pareto_van.csv")).unwrap();
}

#[test]
fn compare_reports_crafted_dominance() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    write_pareto(&a, &[(1, 0.5), (2, 0.6), (4, 0.7)]);
    write_pareto(&b, &[(1, 0.5), (2, 0.55), (4, 0.7)]);
    let out = ok(&["compare", s(&a), s(&b)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("VAN,A dominates B"), "{text}");
    let out = ok(&["compare", s(&b), s(&a)]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("VAN,B dominates A"));
}

#[test]
fn compare_flags_missing_metrics_and_schema_mismatches() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    copy_dir(&fixtures().join("run"), &a);
    copy_dir(&fixtures().join("run"), &b);
    std::fs::remove_file(b.join("spectral_adv.csv")).unwrap();
    std::fs::write(b.join("order_van.csv"), "model_tag,accuracy\nVAN,0.5\n").unwrap();
    let out_dir = tmp.path().join("cmp");
    let out = run(&["compare", s(&a), s(&b), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "mismatches are not fatal");
    let t = Table::read(&out_dir.join("compare.csv")).unwrap();
    let status = |tag: &str, metric: &str| {
        t.rows.iter().find(|r| r[0] == tag && r[1] == metric).map(|r| r[5].clone())
    };
    assert_eq!(status("", "order_van.csv").as_deref(), Some("schema_mismatch_in_b"));
    assert_eq!(status("ADV", "spectral/layer4/mean_lambda_max").as_deref(), Some("missing_in_b"));
    assert_eq!(status("VAN", "order/drop").as_deref(), Some("missing_in_b"));
    assert_eq!(status("ADV", "order/drop").as_deref(), Some("ok"));
    assert_eq!(status("VAN", "svd/layer1/rank1").as_deref(), Some("ok"));
    let v = Table::read(&out_dir.join("pareto_verdicts.csv")).unwrap();
    assert!(v.rows.iter().all(|r| r[1] == "none"));
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--run-dir", s(&dir), "--set", "finetune.lr=1", "pretrain"]).status.code(), Some(2));
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[pretrain]\nsteps = 3\n").unwrap();
    let out = run(&["-c", s(&bad), "--run-dir", s(&dir), "pretrain"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pretrain.steps"));
    assert_eq!(run(&["-c", "/nonexistent.toml", "show-config"]).status.code(), Some(3));
    assert_eq!(run(&["--run-dir", s(&dir), "analyze", "spectral", "--model", "van"]).status.code(), Some(3));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join(".lock"), "1\n").unwrap();
    let out = run(&["--run-dir", s(&dir), "report"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = bin()
        .env("SYNPROBE_OUT", tmp.path().join("root"))
        .args(["-c", s(&cfg), "export-data"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let dir = tmp.path().join("root/seed-5");
    for f in ["synthetic.tsv", "synthetic.pairs.jsonl", "synthetic.conllu", "manifest-export-data.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
}

#[test]
fn external_files_drive_the_same_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixtures().join("data");
    let cfg = tmp.path().join("ext.toml");
    std::fs::write(
        &cfg,
        format!(
            "{TINY}[data]\ntsv = {:?}\nconllu = {:?}\npairs = {:?}\n",
            data.join("synthetic.tsv"),
            data.join("synthetic.conllu"),
            data.join("synthetic.pairs.jsonl")
        ),
    )
    .unwrap();
    let dir = tmp.path().join("run");
    let base = ["-c", s(&cfg), "--run-dir", s(&dir)];
    ok(&cat(&base, &["pretrain"]));
    ok(&cat(&base, &["finetune", "--mode", "adv"]));
    ok(&cat(&base, &["probe-free", "pairs", "--model", "adv"]));
    ok(&cat(&base, &["probe-param", "task", "--model", "base", "--task", "PARSE", "--layer", "2"]));
    let p = Table::read(&dir.join("probe_base_PARSE_layer2.csv")).unwrap();
    assert_eq!(p.rows.len(), 1);
    assert_eq!(p.rows[0][4], "uas");
    let pairs = Table::read(&dir.join("pairs_adv.csv")).unwrap();
    let total: usize = pairs.rows.iter().map(|r| r[2].parse::<usize>().unwrap()).sum();
    assert_eq!(total, 24, "every fixture pair is in vocabulary");
    let baseline = Table::read(&dir.join("summary_baseline.csv")).unwrap();
    assert_eq!(baseline.rows[0][1], "uas/attach_to_previous");
}
