use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kqgcot::chain::ScaffoldDoc;
use kqgcot::harness::{read_manifest, to_jsonl, RunStatus};
use kqgcot::synthetic::synthetic_pool;

fn kqgcot(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kqgcot")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn select_scaffold_run_eval_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (pool, _) = synthetic_pool(60, 11);
    fs::write(d.join("pool.jsonl"), to_jsonl(&pool)).unwrap();
    let (mut test, _) = synthetic_pool(5, 99);
    test.iter_mut().enumerate().for_each(|(i, r)| r.id = format!("q{i}"));
    fs::write(d.join("test.jsonl"), to_jsonl(&test)).unwrap();

    let selected = stdout(&kqgcot(&["select", "--pool", "pool.jsonl", "--seed", "3"], d));
    assert_eq!(selected.lines().count(), 12);
    let first: serde_json::Value = serde_json::from_str(selected.lines().next().unwrap()).unwrap();
    assert!(first["id"].is_string() && first["skeleton"].is_string() && first["logical_form"].is_string());

    stdout(&kqgcot(&["scaffold", "--pool", "pool.jsonl", "--seed", "3", "--out", "scaffold.json"], d));
    let blank = kqgcot(&["scaffold", "--check", "scaffold.json"], d);
    assert!(!blank.status.success());
    assert!(String::from_utf8_lossy(&blank.stderr).contains("subquestion is empty"));

    let mut doc: ScaffoldDoc = serde_json::from_str(&fs::read_to_string(d.join("scaffold.json")).unwrap()).unwrap();
    assert_eq!(doc.len(), 12);
    assert!(!doc.iter().any(|e| e.logical_form.contains("m.0")), "names are substituted");
    for entry in &mut doc {
        for step in &mut entry.steps {
            step.subquestion = format!("{} step {}", entry.id, step.index);
        }
    }
    fs::write(d.join("filled.json"), serde_json::to_string(&doc).unwrap()).unwrap();
    assert!(stdout(&kqgcot(&["scaffold", "--check", "filled.json"], d)).contains("12 complete"));

    let script: Vec<String> = (0..5).map(|i| format!("Subgraph1: x\nSubquestion1: a\nSubquestion2: what is {i} ?")).collect();
    fs::write(d.join("script.json"), serde_json::to_string(&script).unwrap()).unwrap();
    fs::write(
        d.join("run.toml"),
        "pool = \"pool.jsonl\"\ntest = \"test.jsonl\"\ndemos = \"filled.json\"\nscript = \"script.json\"\n\
         provider = \"mock\"\nembedder = \"hash\"\nseed = 3\nk = 12\nconcurrency = 1\nordering = \"length_asc\"\n",
    )
    .unwrap();
    let summary = stdout(&kqgcot(&["run", "--config", "run.toml", "--out", "out"], d));
    assert!(summary.contains("records 5  failed 0  scored 5"), "{summary}");
    for name in ["manifest.jsonl", "report.json", "report.csv"] {
        assert!(d.join("out").join(name).exists(), "{name}");
    }
    let manifest = read_manifest(&d.join("out/manifest.jsonl")).unwrap();
    assert_eq!(manifest.status(), RunStatus::Complete);
    assert_eq!(manifest.header.config.ordering.to_string(), "length_asc");
    let predictions: Vec<&str> = manifest.records.iter().map(|r| r.prediction.as_deref().unwrap()).collect();
    assert_eq!(predictions, ["what is 0 ?", "what is 1 ?", "what is 2 ?", "what is 3 ?", "what is 4 ?"]);
    let mut ids: Vec<&str> = doc.iter().map(|e| e.id.as_str()).collect();
    let mut used: Vec<&str> = manifest.header.demo_ids.iter().map(String::as_str).collect();
    ids.sort_unstable();
    used.sort_unstable();
    assert_eq!(ids, used);

    let eval = stdout(&kqgcot(&["eval", "--manifest", "out/manifest.jsonl", "--out", "eval"], d));
    assert!(eval.contains("BLEU-4"));
    assert!(d.join("eval/report.csv").exists());

    let table = stdout(&kqgcot(&["diag-similarity", "--pool", "pool.jsonl", "--k", "6", "--seeds", "3"], d));
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("random") && table.contains("kqg"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("pool.jsonl"), to_jsonl(&synthetic_pool(40, 2).0)).unwrap();
    fs::write(d.join("cfg.toml"), "k = 4\nselection = \"random\"\n").unwrap();
    let from_file = stdout(&kqgcot(&["select", "--config", "cfg.toml", "--pool", "pool.jsonl"], d));
    assert_eq!(from_file.lines().count(), 4);
    let overridden = stdout(&kqgcot(&["select", "--config", "cfg.toml", "--pool", "pool.jsonl", "--k", "7"], d));
    assert_eq!(overridden.lines().count(), 7);
}

#[test]
fn invalid_pool_is_refused_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("pool.jsonl"),
        "{\"id\":\"a\",\"logical_form\":\"(JOIN a.b c)\"}\n{\"id\":\"b\",\"logical_form\":\"(JOIN a.b c\"}\n",
    )
    .unwrap();
    let out = kqgcot(&["select", "--pool", "pool.jsonl", "--k", "1"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn mock_provider_requires_a_script() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("test.jsonl"), to_jsonl(&synthetic_pool(2, 1).0)).unwrap();
    fs::write(d.join("demos.json"), "[]").unwrap();
    let out = kqgcot(&["run", "--test", "test.jsonl", "--demos", "demos.json", "--k", "0", "--out", "o"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--script"));
}
