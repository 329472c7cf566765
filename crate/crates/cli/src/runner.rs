//! Config merging, manifests and failure markers shared by every command.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const FAILED_MARKER: &str = ".failed";
pub const MANIFEST: &str = "manifest.json";

/// Options accepted by every subcommand.
#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON config file (a manifest from an earlier run is also accepted).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn load_config(path: &Path) -> Result<Map<String, Value>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let v: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let v = match v {
        // A manifest carries the merged config under "config".
        Value::Object(mut m) if m.contains_key("command") && m.contains_key("config") => {
            m.remove("config").unwrap()
        }
        other => other,
    };
    match v {
        Value::Object(m) => Ok(m),
        _ => anyhow::bail!("config {} must be a JSON object", path.display()),
    }
}

/// Config file values overlaid with the flags that were given on the command
/// line, then deserialized into the command's config type.
pub fn merged<C: DeserializeOwned + Serialize, F: Serialize>(
    common: &Common,
    flags: &F,
) -> Result<(C, Value)> {
    let mut base = match &common.config {
        Some(p) => load_config(p)?,
        None => Map::new(),
    };
    if let Value::Object(over) = serde_json::to_value(flags)? {
        for (k, v) in over {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    if let Some(seed) = common.seed {
        base.insert("seed".into(), seed.into());
    }
    let cfg: C = serde_json::from_value(Value::Object(base)).context("invalid configuration")?;
    // Round-trip so the manifest records defaults too.
    let full = serde_json::to_value(&cfg)?;
    Ok((cfg, full))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a Value,
    outputs: Vec<String>,
    wall_clock_seconds: f64,
}

/// Runs `body` with the output directory prepared, then writes the manifest
/// and clears any stale failure marker.
pub fn execute(
    command: &str,
    out: &Path,
    config: &Value,
    body: impl FnOnce(&Path) -> Result<Vec<PathBuf>>,
) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let start = Instant::now();
    let outputs = body(out)?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        outputs: outputs
            .iter()
            .map(|p| {
                p.file_name().map_or_else(
                    || p.display().to_string(),
                    |n| n.to_string_lossy().into_owned(),
                )
            })
            .collect(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    let marker = out.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    Ok(())
}

/// Leaves a marker holding the error so partial outputs are never mistaken
/// for a finished run.
pub fn mark_failed(out: &Path, message: &str) {
    let _ = fs::create_dir_all(out);
    let _ = fs::write(out.join(FAILED_MARKER), format!("{message}\n"));
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

/// Writes CSV rows; every row must already be formatted.
pub fn write_csv(
    path: &Path,
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> Result<PathBuf> {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}
