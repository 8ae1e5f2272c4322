//! `--key value` configuration overrides mixed in with regular flags.

use std::collections::BTreeSet;

use cfcon_core::TrainConfig;
use serde_json::Value;

/// Flags that name something other than a configuration key.
const ALIASES: &[(&str, &str)] = &[("checkpoint", "paths.checkpoint_in")];

/// Sections searched, in order, when a key is not found at the top level.
const SECTIONS: &[&str] = &["paths", "weights", "model"];

/// Arguments left for the parser, and `(name, value)` overrides.
type Split = (Vec<String>, Vec<(String, String)>);

/// Pull every `--name value` (or `--name=value`) whose name is not in
/// `known` out of `args`. Returns the remaining arguments and the raw
/// overrides in command-line order.
pub fn split(args: &[String], known: &BTreeSet<String>, takes_value: &BTreeSet<String>) -> Result<Split, String> {
    let mut kept = Vec::new();
    let mut found = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        let Some(body) = a.strip_prefix("--").filter(|b| !b.is_empty()) else {
            kept.push(a.clone());
            i += 1;
            continue;
        };
        let (name, inline) = match body.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (body, None),
        };
        if known.contains(name) {
            kept.push(a.clone());
            if inline.is_none() && takes_value.contains(name) {
                if let Some(v) = args.get(i + 1) {
                    kept.push(v.clone());
                    i += 1;
                }
            }
            i += 1;
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => {
                i += 1;
                args.get(i).cloned().ok_or_else(|| format!("option --{name} needs a value"))?
            }
        };
        found.push((name.to_string(), value));
        i += 1;
    }
    Ok((kept, found))
}

fn lookup<'a>(tree: &'a Value, dotted: &str) -> Option<&'a Value> {
    dotted.split('.').try_fold(tree, |node, part| node.get(part))
}

/// Map a flag name to the dotted configuration key it sets.
pub fn resolve(name: &str) -> Result<String, String> {
    let key = name.replace('-', "_");
    if let Some((_, k)) = ALIASES.iter().find(|(a, _)| *a == key) {
        return Ok((*k).to_string());
    }
    let tree = serde_json::to_value(TrainConfig::default()).expect("configuration serializes");
    let leaf = |k: &str| lookup(&tree, k).is_some_and(|v| !v.is_object());
    if leaf(&key) {
        return Ok(key);
    }
    SECTIONS
        .iter()
        .map(|s| format!("{s}.{key}"))
        .find(|k| leaf(k))
        .ok_or_else(|| format!("unknown option --{name}"))
}
