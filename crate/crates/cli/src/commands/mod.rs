pub mod eval;
pub mod train;
pub mod tune;

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};

/// Write a resolved-settings snapshot next to a run's outputs.
pub fn write_snapshot(dir: &Path, name: &str, pairs: &BTreeMap<String, String>) -> Result<()> {
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(&format!("{k} = {v}\n"));
    }
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
