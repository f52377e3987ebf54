//! `key = value` configuration files.

use std::fs;
use std::path::Path;

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
/// Keys are normalized to use `-` so they match the long flag names.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        // lists may be written `a, b, c`
        let value: Vec<&str> = v.split(',').map(str::trim).collect();
        out.push((key, value.join(",")));
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<(String, String)>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse(&text)
}
