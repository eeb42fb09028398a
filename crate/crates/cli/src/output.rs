use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bridgesim_core::config::{bundled_config, load_config, ConfigError, ExperimentConfig};
use bridgesim_core::Trajectory;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, Common};

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The selected config with command-line overrides applied.
pub fn resolve_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match (&common.config, &common.model) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => bundled_config(name).map_err(|e| match e {
            ConfigError::Io(msg) => CliError::Usage(msg),
            other => CliError::Config(other),
        })?,
        (None, None) => return Err(CliError::Usage("pass --config <file> or --model <preset>".into())),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn output_dir(common: &Common, cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a ExperimentConfig>,
    inputs: Vec<String>,
}

pub fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: Option<&ExperimentConfig>,
    inputs: &[&Path],
) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: cfg.map(config_hash),
        seed: cfg.map(|c| c.seed),
        config: cfg,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serialisable output");
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Writes `<dir>/<prefix>_<i>.csv` for each trajectory.
pub fn write_trajectories(dir: &Path, prefix: &str, trajs: &[Trajectory]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, traj) in trajs.iter().enumerate() {
        let path = dir.join(format!("{prefix}_{i:05}.csv"));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut out = BufWriter::new(file);
        traj.write_csv(&mut out).map_err(io_err(&path))?;
        out.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

/// Reads every `.csv` file under `dir`, recursively, in path order.
pub fn read_trajectories(dir: &Path) -> Result<Vec<Trajectory>, CliError> {
    let mut files = Vec::new();
    collect_csv(dir, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no trajectory CSV files under {}", dir.display())));
    }
    files
        .iter()
        .map(|path| {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            Trajectory::read_csv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn collect_csv(dir: &Path, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            collect_csv(&path, files)?;
        } else if path.extension().is_some_and(|e| e == "csv") {
            files.push(path);
        }
    }
    Ok(())
}
