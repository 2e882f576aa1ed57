//! On-disk formats: raw little-endian arrays with JSON sidecars, columnar
//! text tables, and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ConfigFile;
use crate::grid::GridSpec;
use crate::propagation::{EnsembleResult, SetupDiagnostics, StepRecord};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(fs_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisMeta {
    pub name: String,
    pub unit: String,
    pub len: usize,
    pub spacing: f64,
    /// Index order: "fft" (0, 1, ..., -1) or "centered".
    pub ordering: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub dtype: String,
    pub byte_order: String,
    pub shape: Vec<usize>,
    pub axes: Vec<AxisMeta>,
    pub quantity: String,
    pub unit: String,
    pub config_hash: String,
    pub seed: u64,
}

impl ArrayMeta {
    /// Spectral `(q_x, q_y, Omega)` layout of a grid, row-major.
    pub fn spectral(grid: &GridSpec, quantity: &str, unit: &str, config_hash: &str, seed: u64) -> Self {
        let axis = |name: &str, unit: &str, len, spacing| AxisMeta {
            name: name.into(),
            unit: unit.into(),
            len,
            spacing,
            ordering: "fft".into(),
        };
        Self {
            dtype: "float64".into(),
            byte_order: "little".into(),
            shape: vec![grid.nx, grid.ny, grid.nt],
            axes: vec![
                axis("q_x", "1/um", grid.nx, grid.dqx()),
                axis("q_y", "1/um", grid.ny, grid.dqy()),
                // stored in fft order of -Omega
                axis("Omega", "rad/ps", grid.nt, -grid.domega()),
            ],
            quantity: quantity.into(),
            unit: unit.into(),
            config_hash: config_hash.into(),
            seed,
        }
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(fs_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

/// Writes `data` as little-endian f64 plus `<path>.json`. Returns both paths.
pub fn write_f64_array(path: &Path, data: &[f64], meta: &ArrayMeta) -> Result<Vec<PathBuf>, IoError> {
    let expect: usize = meta.shape.iter().product();
    if expect != data.len() || meta.dtype != "float64" {
        return Err(format_err(path, format!("shape {:?} does not match {} values", meta.shape, data.len())));
    }
    let mut bytes = Vec::with_capacity(8 * data.len());
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(fs_err(path))?;
    let side = sidecar(path);
    write_json(&side, meta)?;
    Ok(vec![path.to_path_buf(), side])
}

pub fn read_f64_array(path: &Path) -> Result<(Vec<f64>, ArrayMeta), IoError> {
    let meta: ArrayMeta = read_json(&sidecar(path))?;
    let bytes = fs::read(path).map_err(fs_err(path))?;
    let n: usize = meta.shape.iter().product();
    if meta.dtype != "float64" || bytes.len() != 8 * n {
        return Err(format_err(path, format!("expected {n} float64 values, found {} bytes", bytes.len())));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((data, meta))
}

/// Whitespace-separated columns with a `#` header line.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), IoError> {
    let mut f = fs::File::create(path).map_err(fs_err(path))?;
    let mut out = String::new();
    out.push_str("# ");
    out.push_str(&header.join(" "));
    out.push('\n');
    for r in rows {
        if r.len() != header.len() {
            return Err(format_err(path, "row width does not match header"));
        }
        let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    f.write_all(out.as_bytes()).map_err(fs_err(path))
}

pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), IoError> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| format_err(path, "missing header"))?
        .split_whitespace()
        .map(String::from)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        let row: Result<Vec<f64>, _> = l.split_whitespace().map(str::parse).collect();
        let row = row.map_err(|e| format_err(path, format!("line {}: {e}", i + 2)))?;
        rows.push(row);
    }
    Ok((header, rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub outputs: Vec<OutputEntry>,
    pub wall_clock_s: f64,
    #[serde(default)]
    pub timings_s: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("hexpdc".to_string(), env!("CARGO_PKG_VERSION").to_string());
        Self {
            command: command.into(),
            config_hash: config_hash.into(),
            seed,
            versions,
            outputs: Vec::new(),
            wall_clock_s: 0.0,
            timings_s: BTreeMap::new(),
        }
    }

    /// Records files relative to `dir`, hashing each.
    pub fn add_outputs(&mut self, dir: &Path, files: &[PathBuf]) -> Result<(), IoError> {
        for f in files {
            let rel = f.strip_prefix(dir).unwrap_or(f).display().to_string();
            if self.outputs.iter().any(|o| o.path == rel) {
                continue;
            }
            self.outputs.push(OutputEntry {
                path: rel,
                sha256: sha256_file(f)?,
            });
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, IoError> {
        let p = dir.join("manifest.json");
        write_json(&p, self)?;
        Ok(p)
    }

    pub fn load(dir: &Path) -> Result<Self, IoError> {
        read_json(&dir.join("manifest.json"))
    }
}

/// Everything in an [`EnsembleResult`] except the per-mode arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ResultHeader {
    grid: GridSpec,
    n_trajectories: usize,
    seed: u64,
    snapshot_z_um: Vec<f64>,
    depletion_fraction: f64,
    manley_rowe_drift: f64,
    diagnostics: SetupDiagnostics,
}

pub const CONFIG_FILE: &str = "config.toml";

/// Writes a run directory: resolved config, result header, per-snapshot
/// occupation arrays, active mask and the per-step log. Returns every file
/// written.
pub fn save_run(
    dir: &Path,
    config: &ConfigFile,
    result: &EnsembleResult,
    config_hash: &str,
) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let mut files = Vec::new();
    let cfg = dir.join(CONFIG_FILE);
    fs::write(&cfg, config.to_toml()).map_err(fs_err(&cfg))?;
    files.push(cfg);
    let header = ResultHeader {
        grid: result.grid,
        n_trajectories: result.n_trajectories,
        seed: result.seed,
        snapshot_z_um: result.snapshot_z_um.clone(),
        depletion_fraction: result.depletion_fraction,
        manley_rowe_drift: result.manley_rowe_drift,
        diagnostics: result.diagnostics.clone(),
    };
    let h = dir.join("result.json");
    write_json(&h, &header)?;
    files.push(h);
    let g = &result.grid;
    for (s, (m1, m2)) in result
        .mean_occupation
        .iter()
        .zip(&result.second_moment)
        .enumerate()
    {
        let meta = ArrayMeta::spectral(g, "<|a|^2> (Wigner, includes 1/2)", "photons", config_hash, result.seed);
        files.extend(write_f64_array(&dir.join(format!("occupation_{s:03}.bin")), m1, &meta)?);
        let meta = ArrayMeta::spectral(g, "<|a|^4> (Wigner)", "photons^2", config_hash, result.seed);
        files.extend(write_f64_array(&dir.join(format!("second_moment_{s:03}.bin")), m2, &meta)?);
    }
    let active: Vec<f64> = result.active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let meta = ArrayMeta::spectral(g, "active mode mask", "1", config_hash, result.seed);
    files.extend(write_f64_array(&dir.join("active.bin"), &active, &meta)?);
    let steps = dir.join("steps.txt");
    let rows: Vec<Vec<f64>> = result
        .steps
        .iter()
        .map(|s| vec![s.z_um, s.pump_energy, s.signal_photons, s.manley_rowe])
        .collect();
    write_table(&steps, &["z_um", "pump_energy", "signal_photons", "manley_rowe"], &rows)?;
    files.push(steps);
    Ok(files)
}

pub fn load_run(dir: &Path) -> Result<(ConfigFile, EnsembleResult), IoError> {
    if !dir.is_dir() {
        return Err(IoError::Fs {
            path: dir.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found"),
        });
    }
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(fs_err(&cfg_path))?;
    let config = ConfigFile::parse(&text, &cfg_path.display().to_string())
        .map_err(|e| format_err(&cfg_path, e.to_string()))?;
    let h: ResultHeader = read_json(&dir.join("result.json"))?;
    let mut mean_occupation = Vec::new();
    let mut second_moment = Vec::new();
    for s in 0..h.snapshot_z_um.len() {
        mean_occupation.push(read_f64_array(&dir.join(format!("occupation_{s:03}.bin")))?.0);
        second_moment.push(read_f64_array(&dir.join(format!("second_moment_{s:03}.bin")))?.0);
    }
    let active = read_f64_array(&dir.join("active.bin"))?
        .0
        .into_iter()
        .map(|v| v != 0.0)
        .collect();
    let steps_path = dir.join("steps.txt");
    let (_, rows) = read_table(&steps_path)?;
    let steps = rows
        .into_iter()
        .map(|r| {
            if r.len() != 4 {
                return Err(format_err(&steps_path, "expected 4 columns"));
            }
            Ok(StepRecord {
                z_um: r[0],
                pump_energy: r[1],
                signal_photons: r[2],
                manley_rowe: r[3],
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((
        config,
        EnsembleResult {
            grid: h.grid,
            n_trajectories: h.n_trajectories,
            seed: h.seed,
            snapshot_z_um: h.snapshot_z_um,
            mean_occupation,
            second_moment,
            active,
            steps,
            depletion_fraction: h.depletion_fraction,
            manley_rowe_drift: h.manley_rowe_drift,
            diagnostics: h.diagnostics,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec {
            nx: 4,
            ny: 2,
            nt: 2,
            lx_um: 10.0,
            ly_um: 5.0,
            t_window_ps: 1.0,
            dz_um: 1.0,
        };
        let data: Vec<f64> = (0..16).map(|i| i as f64 * 0.25 - 1.0).collect();
        let meta = ArrayMeta::spectral(&g, "x", "1", "abc", 7);
        let p = dir.path().join("a.bin");
        write_f64_array(&p, &data, &meta).unwrap();
        let (back, m) = read_f64_array(&p).unwrap();
        assert_eq!(back, data);
        assert_eq!(m, meta);
    }

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        let rows = vec![vec![1.0, -2.5e-7], vec![3.0, 4.0]];
        write_table(&p, &["a", "b"], &rows).unwrap();
        let (h, r) = read_table(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(r, rows);
    }
}
