//! Protocol tests against small shell-script executors.
#![cfg(unix)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use driftsearch::exec::{ExecError, ExecValidator, Executor};
use driftsearch::formats;
use driftsearch_core::search::{feedback_directed_search, BackendFailure, FrozenClock, SearchBudget, SearchContext, Termination, Validator};
use driftsearch_core::universe::generate_candidates;
use driftsearch_core::validation::is_fixable;
use driftsearch_core::{EnvironmentSpec, KnowledgeBase, Pin, Runtime, Status, Version};

fn script(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, format!("#!/bin/sh\n{body}")).unwrap();
    format!("sh {}", path.display())
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

const THEANO_LASAGNE: &str = r#"
while IFS= read -r line; do
  case "$line" in
    *'"op":"detect"'*) echo '{"runtimes":["3"],"imports":["theano","lasagne"]}' ;;
    *'["Theano","0.8.2"]'*) echo '{"status":"success","snippet_line":5}' ;;
    *) echo '{"status":"exception","exception_name":"ImportError","message":"cannot import name '"'"'downsample'"'"'","trace":[{"origin":"snippet","line":4},{"origin":"dependency","package":"Lasagne","line":6},{"origin":"dependency","package":"Theano","line":1}],"snippet_line":4,"install_failures":[]}' ;;
  esac
done
"#;

fn env(pins: &[(&str, &str)]) -> EnvironmentSpec {
    EnvironmentSpec {
        runtime: Runtime::Py3,
        deps: pins.iter().map(|(p, v)| Pin::new(*p, Version::parse(v).unwrap())).collect(),
        origin: "t".into(),
    }
}

#[test]
fn theano_lasagne_search_over_the_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(dir.path(), "exec.sh", THEANO_LASAGNE);
    let world = formats::load_world(&fixture("theano-lasagne-world.json")).unwrap();
    let manifest = formats::load_manifest(&fixture("theano-lasagne.json")).unwrap();
    let kb = world.knowledge_base();
    let cands = generate_candidates(&manifest, &kb, world.index()).unwrap().specs;
    let mut validator = ExecValidator { executor: Executor::new(cmd), snippet: "gist.py".into(), timeout: Duration::from_secs(60) };
    let matrices = BTreeMap::new();
    let ctx = SearchContext { index: world.index(), kb: &kb, matrices: &matrices };
    let out = feedback_directed_search(&cands, &mut validator, &ctx, &SearchBudget::default(), &FrozenClock).unwrap();
    assert_eq!(out.termination, Termination::Working);
    assert_eq!(out.validations_total, 3);
    assert_eq!(out.working_env.unwrap().key(), "py3|Lasagne==0.1,Theano==0.8.2");
    assert_eq!(validator.executor.restarts(), 0);
}

#[test]
fn detect_reports_runtimes_and_imports() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
while IFS= read -r line; do
  case "$line" in
    *'"op":"detect"'*) echo '{"runtimes":["2"],"imports":[]}' ;;
  esac
done
"#;
    let mut ex = Executor::new(script(dir.path(), "exec.sh", body));
    let d = ex.detect(Path::new("print_stmt.py")).unwrap();
    assert_eq!(d.runtimes, vec![Runtime::Py2]);
    assert!(d.imports.is_empty());
}

#[test]
fn responses_are_classified() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
while IFS= read -r line; do
  case "$line" in
    *import_missing*) echo '{"status":"exception","exception_name":"ModuleNotFoundError","message":"No module named '"'"'yaml'"'"'","trace":[{"origin":"snippet","line":1}],"snippet_line":1,"install_failures":[["PyYAML","no matching distribution"]]}' ;;
    *attribute*) echo '{"status":"exception","exception_name":"AttributeError","message":"module has no attribute x","trace":[{"origin":"snippet","line":2}],"snippet_line":2}' ;;
    *type_error*) echo '{"status":"exception","exception_name":"TypeError","message":"f() takes 1 positional argument","trace":[{"origin":"snippet","line":3},{"origin":"dependency","package":"Lib","line":10}],"snippet_line":3}' ;;
    *missing_file*) echo '{"status":"exception","exception_name":"FileNotFoundError","message":"data.csv","trace":[{"origin":"snippet","line":4},{"origin":"filesystem","line":1}],"snippet_line":4}' ;;
    *loop*) echo '{"status":"timeout","snippet_line":2}' ;;
  esac
done
"#;
    let mut ex = Executor::new(script(dir.path(), "exec.sh", body));
    let e = env(&[("Lib", "1.0")]);
    let kb = KnowledgeBase {
        module_map: BTreeMap::from([("yaml".into(), ["PyYAML".to_string()].into()), ("lib".into(), ["Lib".to_string()].into())]),
        stdlib: Default::default(),
    };
    let mut results = BTreeMap::new();
    for name in ["import_missing", "attribute", "type_error", "missing_file", "loop"] {
        let r = ex.validate(Path::new(&format!("{name}.py")), &e, Duration::from_secs(2)).unwrap();
        assert!(r.check().is_ok(), "{name}: {r:?}");
        results.insert(name, r);
    }
    assert!(results["import_missing"].is_import_error());
    assert_eq!(results["import_missing"].missing_module().as_deref(), Some("yaml"));
    assert_eq!(results["import_missing"].install_failures.len(), 1);
    // PyYAML is not installed, so this import error is not fixable by changing versions
    assert!(!is_fixable(&results["import_missing"], &e, &kb).unwrap());
    assert!(is_fixable(&results["attribute"], &e, &kb).unwrap());
    assert!(is_fixable(&results["type_error"], &e, &kb).unwrap());
    assert!(results["missing_file"].is_filesystem_error());
    assert!(!is_fixable(&results["missing_file"], &e, &kb).unwrap());
    assert_eq!(results["loop"].status, Status::Timeout);
}

#[test]
fn garbage_line_restarts_the_executor() {
    let dir = tempfile::tempdir().unwrap();
    let marker = dir.path().join("started");
    let body = format!(
        r#"
if [ ! -e {m} ]; then
  touch {m}
  read -r line
  echo 'Traceback (most recent call last):'
  exit 1
fi
while IFS= read -r line; do
  echo '{{"status":"success","snippet_line":1}}'
done
"#,
        m = marker.display()
    );
    let mut ex = Executor::new(script(dir.path(), "exec.sh", &body));
    let r = ex.validate(Path::new("a.py"), &env(&[]), Duration::from_secs(5)).unwrap();
    assert_eq!(r.status, Status::Success);
    assert_eq!(ex.restarts(), 1);
    // the restarted process keeps serving
    ex.validate(Path::new("a.py"), &env(&[]), Duration::from_secs(5)).unwrap();
    assert_eq!(ex.restarts(), 1);
}

#[test]
fn silent_executor_becomes_a_backend_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(dir.path(), "exec.sh", "while IFS= read -r line; do :; done\n");
    let mut v = ExecValidator {
        executor: Executor::new(cmd).with_grace(Duration::from_millis(200)),
        snippet: "a.py".into(),
        timeout: Duration::ZERO,
    };
    assert!(matches!(v.validate(&env(&[])), Err(BackendFailure::Backend(_))));
    assert_eq!(v.executor.restarts(), 2);
}

#[test]
fn reported_errors_are_not_retried() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(dir.path(), "exec.sh", "while IFS= read -r line; do echo '{\"error\":\"no container runtime\"}'; done\n");
    let mut ex = Executor::new(cmd);
    let err = ex.validate(Path::new("a.py"), &env(&[]), Duration::from_secs(5)).unwrap_err();
    assert!(matches!(err, ExecError::Reported(ref m) if m == "no container runtime"));
    assert_eq!(ex.restarts(), 0);
}

#[test]
fn results_breaking_the_contract_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(dir.path(), "exec.sh", "while IFS= read -r line; do echo '{\"status\":\"exception\",\"trace\":[]}'; done\n");
    let mut v = ExecValidator { executor: Executor::new(cmd), snippet: "a.py".into(), timeout: Duration::from_secs(5) };
    assert!(matches!(v.validate(&env(&[])), Err(BackendFailure::Contract(_))));
}

#[test]
fn command_is_read_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let cmd = script(dir.path(), "exec.sh", THEANO_LASAGNE);
    let index = dir.path().join("index.json");
    let kb = dir.path().join("kb.json");
    std::fs::write(
        &index,
        r#"{"packages": {"Theano": {"releases": [{"version": "0.8.2"}, {"version": "0.9.0"}, {"version": "1.0.4"}]},
                         "Lasagne": {"releases": [{"version": "0.1", "deps": [{"name": "Theano"}]}]}}}"#,
    )
    .unwrap();
    std::fs::write(&kb, r#"{"modules": {"theano": ["Theano"], "lasagne": ["Lasagne"]}, "stdlib": ["math"]}"#).unwrap();
    let manifest = dir.path().join("m.json");
    std::fs::write(&manifest, r#"{"snippet_id":"gist","kind":"script","runtime_candidates":[],"source":"gist.py"}"#).unwrap();
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_driftsearch"))
        .args(["search", "--backend", "exec", "--manifest"])
        .arg(&manifest)
        .arg("--index")
        .arg(&index)
        .arg("--kb")
        .arg(&kb)
        .arg("--out")
        .arg(&out)
        .env("V2_EXECUTOR_CMD", cmd)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["backend"], "exec");
    assert_eq!(r["working_env"], "py3|Lasagne==0.1,Theano==0.8.2");
}
