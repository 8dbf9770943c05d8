//! Library surface of the command-line tool, split out so integration tests
//! can drive the command implementations directly.

pub mod commands;
pub mod config;
pub mod svg;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Resolve an output directory: an explicit `--out`, else a subdirectory of
/// `$METATUNE_OUT`, else `./runs/<name>`. The directory is create-only: an
/// existing non-empty directory is refused so no previous run is mutated.
pub fn prepare_out_dir(explicit: Option<&Path>, default_name: &str) -> Result<PathBuf> {
    let dir = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os("METATUNE_OUT")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"));
            root.join(default_name)
        }
    };
    if dir.exists() {
        let non_empty = std::fs::read_dir(&dir)
            .with_context(|| format!("cannot inspect {}", dir.display()))?
            .next()
            .is_some();
        if non_empty {
            bail!(
                "output directory {} already exists and is not empty; outputs are create-only",
                dir.display()
            );
        }
    } else {
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(dir)
}

/// Map an error chain onto the documented exit codes: 2 for configuration
/// problems, 3 for runtime numeric failures, 1 otherwise.
pub fn exit_code_for(err: &anyhow::Error) -> i32 {
    use metatune_core::Error as E;
    if let Some(core) = err.downcast_ref::<E>() {
        return match core {
            E::Config(_) | E::Checkpoint(_) => 2,
            E::NonFinite(_)
            | E::NonConvergence(_)
            | E::Degenerate(_)
            | E::FitInfeasible(_)
            | E::Shape { .. }
            | E::EpisodeDone
            | E::DoubleBackward => 3,
            E::Io(_) => 1,
        };
    }
    // Config-file and flag-semantics errors raised by this crate.
    let text = format!("{err:#}");
    if text.contains("config") || text.contains("unknown") || text.contains("preset") {
        2
    } else {
        1
    }
}
