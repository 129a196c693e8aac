//! Config files: a JSON object keyed by long flag names. The entries are
//! expanded into arguments placed before the explicit ones, so flags given
//! on the command line win.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::CliError;

pub fn expand(path: &Path) -> Result<Vec<OsString>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: invalid config: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(CliError::Usage(format!("{}: config must be a JSON object", path.display())));
    };
    let mut args = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            return Err(CliError::Usage("config files cannot include other config files".into()));
        }
        let text = match v {
            Value::Null | Value::Bool(false) => continue,
            Value::Bool(true) => {
                args.push(flag.into());
                continue;
            }
            Value::Number(n) => n.to_string(),
            Value::String(s) => s,
            Value::Array(items) => items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?.join(","),
            Value::Object(_) => return Err(CliError::Usage(format!("config key '{key}' must not be an object"))),
        };
        args.push(flag.into());
        args.push(text.into());
    }
    Ok(args)
}

fn scalar(v: &Value) -> Result<String, CliError> {
    match v {
        Value::Number(n) => Ok(n.to_string()),
        Value::String(s) => Ok(s.clone()),
        _ => Err(CliError::Usage("config list entries must be numbers or strings".into())),
    }
}
