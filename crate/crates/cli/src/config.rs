//! `--config file.json`: a JSON object whose keys are long flag names.
//! Entries are appended to the command line unless the flag is already
//! present there.

use std::collections::BTreeSet;
use std::ffi::OsString;

use serde_json::Value;

use crate::failure::Failure;

pub fn merged_args(mut argv: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::io(format!("{path}: {e}")))?;
    let json: Value =
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{path}: {e}")))?;
    let Value::Object(entries) = json else {
        return Err(Failure::usage(format!("{path}: expected a JSON object")));
    };

    let given: BTreeSet<String> = argv
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    for (key, value) in entries {
        let flag = key.replace('_', "-");
        if flag == "config" || given.contains(&flag) {
            continue;
        }
        let rendered = match value {
            Value::Bool(true) => {
                argv.push(format!("--{flag}").into());
                continue;
            }
            Value::Bool(false) | Value::Null => continue,
            Value::Array(items) => items
                .iter()
                .map(scalar)
                .collect::<Option<Vec<_>>>()
                .map(|v| v.join(",")),
            other => scalar(&other),
        };
        let rendered = rendered
            .ok_or_else(|| Failure::usage(format!("{path}: unsupported value for `{key}`")))?;
        argv.push(format!("--{flag}={rendered}").into());
    }
    Ok(argv)
}

fn config_path(argv: &[OsString]) -> Option<String> {
    let mut args = argv.iter().filter_map(|a| a.to_str());
    while let Some(a) = args.next() {
        if a == "--config" {
            return args.next().map(str::to_string);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}
