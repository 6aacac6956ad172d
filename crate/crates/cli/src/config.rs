//! `--config file.json` support.
//!
//! The file is an object whose keys are long flag names (`t_high` or
//! `t-high`). Keys may also be grouped under a subcommand name; the section
//! for the running subcommand is applied over the top-level keys and the
//! sections of other subcommands are ignored. Each value becomes a
//! `--flag=value` token placed right after the subcommand, so anything given
//! on the command line comes later and wins. Keys that are not flags of the
//! subcommand are rejected by the argument parser like any unknown flag.

use std::ffi::OsString;
use std::path::Path;

use serde_json::{Map, Value};

use crate::args::Command;

/// Where the subcommand sits in `argv` and which config file, if any, was
/// named.
struct Scan {
    sub: Option<usize>,
    config: Option<OsString>,
}

fn scan(argv: &[OsString]) -> Scan {
    let mut s = Scan {
        sub: None,
        config: None,
    };
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--" {
            break;
        }
        if a == "--config" {
            s.config = argv.get(i + 1).cloned();
            i += 2;
            continue;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            s.config = Some(v.into());
        } else if a == "--threads" {
            i += 2;
            continue;
        } else if s.sub.is_none() && Command::NAMES.contains(&a.as_ref()) {
            s.sub = Some(i);
        }
        i += 1;
    }
    s
}

fn scalar(v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Array(items) => {
            let nested = items.iter().any(Value::is_array);
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
            Ok(parts.join(if nested { "/" } else { "," }))
        }
        other => Err(format!("unsupported config value {other}")),
    }
}

fn tokens(section: &Map<String, Value>) -> Result<Vec<OsString>, String> {
    let mut out = Vec::new();
    for (key, value) in section {
        if key == "config" {
            return Err("a config file cannot name another config file".into());
        }
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            v => out.push(format!("{flag}={}", scalar(v)?).into()),
        }
    }
    Ok(out)
}

fn load(path: &Path) -> Result<Map<String, Value>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(format!("config {} is not a JSON object", path.display())),
        Err(e) => Err(format!("config {} is not valid JSON: {e}", path.display())),
    }
}

/// `argv` with the config file's flags spliced in after the subcommand.
pub fn merge(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let s = scan(&argv);
    let (Some(path), Some(sub)) = (s.config, s.sub) else {
        return Ok(argv);
    };
    let root = load(Path::new(&path))?;
    let name = argv[sub].to_string_lossy().into_owned();
    let mut flat = Map::new();
    let mut section = None;
    for (k, v) in root {
        if k == name {
            match v {
                Value::Object(m) => section = Some(m),
                _ => return Err(format!("config section {k:?} is not an object")),
            }
        } else if !Command::NAMES.contains(&k.as_str()) {
            flat.insert(k, v);
        }
    }
    flat.extend(section.unwrap_or_default());
    let mut out = argv[..=sub].to_vec();
    out.extend(tokens(&flat)?);
    out.extend_from_slice(&argv[sub + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn values_become_flags() {
        let m = json!({
            "t_high": 0.6,
            "wms-only": true,
            "eta_unclamped": false,
            "tree": null,
            "encoder_dies": [[8, 16, 32], [16, 32, 64]],
            "dims": [64, 64, 64],
        });
        let t = tokens(m.as_object().unwrap()).unwrap();
        let t: Vec<_> = t.iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert!(t.contains(&"--t-high=0.6".to_string()));
        assert!(t.contains(&"--wms-only".to_string()));
        assert!(t.contains(&"--encoder-dies=8,16,32/16,32,64".to_string()));
        assert!(t.contains(&"--dims=64,64,64".to_string()));
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn scan_finds_subcommand_and_config() {
        let s = scan(&os(&["bin", "--threads", "4", "--config", "c.json", "parse", "m.nii"]));
        assert_eq!(s.sub, Some(5));
        assert_eq!(s.config, Some("c.json".into()));
        let s = scan(&os(&["bin", "parse", "--config=x.json", "parse.nii"]));
        assert_eq!(s.sub, Some(1));
        assert_eq!(s.config, Some("x.json".into()));
    }

    #[test]
    fn no_config_is_identity() {
        let argv = os(&["bin", "postprocess", "a", "b"]);
        assert_eq!(merge(argv.clone()).unwrap(), argv);
    }
}
