#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_airwaytopo"));
    c.env_remove("AIRWAYTOPO_THREADS");
    c
}

/// Runs the tool with `args`, returning the exit code and output.
pub fn run<I, S>(args: I) -> (i32, Output)
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = bin().args(args).output().expect("spawn airwaytopo");
    (out.status.code().expect("exit code"), out)
}

/// Like [`run`] but insists on exit 0.
pub fn ok<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let (code, out) = run(args);
    assert_eq!(code, 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

pub fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr line");
    serde_json::from_str(line).expect("stderr is JSON")
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

/// Panics with every violation if `value` does not match the named schema.
pub fn check_schema(name: &str, value: &Value) {
    let schema = read_json(&schema_dir().join(format!("{name}.schema.json")));
    let v = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = v.iter_errors(value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name} schema violations: {errors:#?}");
}

pub fn p(path: &Path) -> String {
    path.to_str().unwrap().to_owned()
}

/// A synthetic bundle in `dir` built with the extra synth flags.
pub fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth".to_owned(), "--out-dir".into(), p(dir)];
    args.extend(extra.iter().map(|s| s.to_string()));
    ok(args);
}
