//! Run reports and file artifacts.
//!
//! `report.json` is deterministic byte for byte for a fixed config and seed:
//! stable field order, shortest-roundtrip float formatting, and no
//! timestamps (wall times go to the separate `timings.json`). All writes are
//! atomic (write to a temp file, then rename). Every scalar with a
//! corresponding field artifact can be re-derived from it;
//! [`check_consistency`] does exactly that on load.

use crate::config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub el_identity: f64,
    pub constraint_slack: f64,
    /// `N / (E||y0||^2)^2`; logged only, never asserted.
    pub norm_bound_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NashGapReport {
    pub theta: f64,
    pub eta: f64,
}

/// Scalar results of one run plus the resolved configuration echo.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub version: String,
    pub command: String,
    pub status: String,
    pub seed: u64,
    pub warnings: Vec<String>,
    pub n_value: Option<f64>,
    pub j_value: Option<f64>,
    pub n_after_rounding: Option<f64>,
    pub duality_residual: Option<f64>,
    pub kkt: Option<KktReport>,
    pub nash_gaps: Option<NashGapReport>,
    pub c_alpha: Option<f64>,
    pub achieved_mass: Option<f64>,
    pub bang_bang_violation: Option<f64>,
    pub obs_constant: Option<f64>,
    pub obs_samples_used: Option<u64>,
    pub obs_samples_excluded: Option<u64>,
    pub iterations: Option<u64>,
    pub config: ExperimentConfig,
}

impl RunReport {
    pub fn new(command: &str, config: &ExperimentConfig, warnings: Vec<String>) -> Self {
        RunReport {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            status: "ok".to_string(),
            seed: config.solver.seed,
            warnings,
            n_value: None,
            j_value: None,
            n_after_rounding: None,
            duality_residual: None,
            kkt: None,
            nash_gaps: None,
            c_alpha: None,
            achieved_mass: None,
            bang_bang_violation: None,
            obs_constant: None,
            obs_samples_used: None,
            obs_samples_excluded: None,
            iterations: None,
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serialization");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Writes bytes atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact")
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

/// Writes a two-column `x,value` CSV over grid positions.
pub fn write_profile_csv(path: &Path, positions: &[f64], values: &[f64]) -> std::io::Result<()> {
    assert_eq!(positions.len(), values.len());
    let mut text = String::from("x,value\n");
    for (x, v) in positions.iter().zip(values) {
        text.push_str(&format!("{x},{v}\n"));
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_profile_csv(path: &Path) -> std::io::Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let x: f64 = parts.next().unwrap().parse().map_err(bad_csv)?;
        let v: f64 = parts.next().ok_or_else(|| bad_csv("missing value"))?.parse().map_err(bad_csv)?;
        rows.push((x, v));
    }
    Ok(rows)
}

fn bad_csv<E: std::fmt::Display>(e: E) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("malformed csv: {e}"))
}

/// Writes `leaf,prob,sq_norm` rows of a terminal field.
pub fn write_terminal_csv(
    path: &Path,
    rows: &[(usize, f64, f64)],
    header: &str,
) -> std::io::Result<()> {
    let mut text = format!("{header}\n");
    for (leaf, prob, sq) in rows {
        text.push_str(&format!("{leaf},{prob},{sq}\n"));
    }
    write_atomic(path, text.as_bytes())
}

/// Writes `k,t_k,enorm` rows of per-step control norms.
pub fn write_control_norms_csv(path: &Path, rows: &[(usize, f64, f64)]) -> std::io::Result<()> {
    let mut text = String::from("k,t_k,enorm\n");
    for (k, t, norm) in rows {
        text.push_str(&format!("{k},{t},{norm}\n"));
    }
    write_atomic(path, text.as_bytes())
}

/// Writes `iter,objective,gap,step` convergence rows.
pub fn write_convergence_csv(
    path: &Path,
    rows: &[(usize, f64, f64, f64)],
) -> std::io::Result<()> {
    let mut text = String::from("iter,objective,gap,step\n");
    for (iter, obj, gap, step) in rows {
        text.push_str(&format!("{iter},{obj},{gap},{step}\n"));
    }
    write_atomic(path, text.as_bytes())
}

/// Magic header of the binary terminal-datum dump.
pub const ETA_MAGIC: &[u8; 8] = b"STACT01\0";

/// Binary terminal field: 8-byte magic, then leaf-major, node-major within
/// each leaf, little-endian f64.
pub fn write_eta_bin(path: &Path, values: &[f64]) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(8 + values.len() * 8);
    bytes.extend_from_slice(ETA_MAGIC);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn read_eta_bin(path: &Path) -> std::io::Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 || &bytes[..8] != ETA_MAGIC {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "missing STACT01 magic header",
        ));
    }
    if (bytes.len() - 8) % 8 != 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "truncated payload",
        ));
    }
    Ok(bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Wall-clock phase timings; separate from the deterministic report.
pub fn write_timings(path: &Path, timings: &BTreeMap<String, f64>) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(timings).expect("timings serialization");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Re-derives every re-derivable scalar of a report from the field
/// artifacts next to it. Returns the list of inconsistencies (empty means
/// the report is self-consistent).
pub fn check_consistency(dir: &Path) -> std::io::Result<Vec<String>> {
    let report_text = std::fs::read_to_string(dir.join("report.json"))?;
    let report = RunReport::from_json(&report_text).map_err(bad_csv)?;
    let mut problems = Vec::new();
    let config = &report.config;
    let n = config.grid.n;
    let h = config.grid.length / (n + 1) as f64;
    let steps = config.time.steps;
    let dt = if steps > 0 {
        config.time.horizon / steps as f64
    } else {
        0.0
    };

    let norms_path = dir.join("control_norms.csv");
    if let (Some(n_value), true) = (report.n_value, norms_path.exists()) {
        let text = std::fs::read_to_string(&norms_path)?;
        let mut acc = 0.0;
        for line in text.lines().skip(1) {
            if line.is_empty() {
                continue;
            }
            let norm: f64 = line
                .rsplit(',')
                .next()
                .ok_or_else(|| bad_csv("missing enorm"))?
                .parse()
                .map_err(bad_csv)?;
            acc += norm * norm;
        }
        let derived = dt * acc;
        if (derived - n_value).abs() > 1e-8 * (1.0 + n_value.abs()) {
            problems.push(format!(
                "n_value {n_value} does not match control_norms.csv ({derived})"
            ));
        }
    }

    let terminal_path = dir.join("terminal_state.csv");
    if let (Some(kkt), true) = (&report.kkt, terminal_path.exists()) {
        let text = std::fs::read_to_string(&terminal_path)?;
        let mut acc = 0.0;
        for line in text.lines().skip(1) {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let _leaf = parts.next();
            let prob: f64 = parts
                .next()
                .ok_or_else(|| bad_csv("missing prob"))?
                .parse()
                .map_err(bad_csv)?;
            let sq: f64 = parts
                .next()
                .ok_or_else(|| bad_csv("missing sq_norm"))?
                .parse()
                .map_err(bad_csv)?;
            acc += prob * sq;
        }
        let derived = acc.sqrt() - config.control.epsilon;
        if (derived - kkt.constraint_slack).abs() > 1e-8 * (1.0 + kkt.constraint_slack.abs()) {
            problems.push(format!(
                "constraint_slack {} does not match terminal_state.csv ({derived})",
                kkt.constraint_slack
            ));
        }
    }

    let h_path = dir.join("H.csv");
    if let (Some(c_alpha), true) = (report.c_alpha, h_path.exists()) {
        let rows = read_profile_csv(&h_path)?;
        let values: Vec<f64> = rows.iter().map(|(_, v)| *v).collect();
        if values.len() == n {
            let grid = stochact::grid::Grid::new(n, config.grid.length).map_err(bad_csv)?;
            let derived = stochact::rounding::compute_c_alpha(&grid, &values, config.control.alpha)
                .map_err(bad_csv)?;
            if (derived - c_alpha).abs() > 1e-12 * (1.0 + c_alpha.abs()) {
                problems.push(format!("c_alpha {c_alpha} does not match H.csv ({derived})"));
            }
        } else {
            problems.push(format!("H.csv has {} rows, expected {n}", values.len()));
        }
    }

    let ind_path = dir.join("indicator.csv");
    if let (Some(mass), true) = (report.achieved_mass, ind_path.exists()) {
        let rows = read_profile_csv(&ind_path)?;
        let derived: f64 = rows.iter().map(|(_, v)| v).sum::<f64>() * h;
        if (derived - mass).abs() > 1e-9 * (1.0 + mass.abs()) {
            problems.push(format!(
                "achieved_mass {mass} does not match indicator.csv ({derived})"
            ));
        }
    }

    if let (Some(n_value), Some(j_value)) = (report.n_value, report.j_value) {
        if report.status == "converged" && (n_value + 2.0 * j_value).abs() > 1e-4 * (1.0 + n_value)
        {
            problems.push(format!(
                "value identity violated: N = {n_value}, J = {j_value}"
            ));
        }
    }

    Ok(problems)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_json_round_trips_byte_identically() {
        let config = ExperimentConfig::default();
        let mut report = RunReport::new("solve-control", &config, vec![]);
        report.n_value = Some(1.2345678901234567);
        report.j_value = Some(-0.61728394506172835);
        report.kkt = Some(KktReport {
            stationarity: 1e-9,
            el_identity: 2e-9,
            constraint_slack: -1e-7,
            norm_bound_ratio: Some(12.5),
        });
        let text = report.to_json();
        let reloaded = RunReport::from_json(&text).unwrap();
        assert_eq!(reloaded, report);
        assert_eq!(reloaded.to_json(), text);
    }

    #[test]
    fn eta_bin_round_trip_and_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eta_star.bin");
        let values = vec![1.5, -2.25, 0.0, 3.875];
        write_eta_bin(&path, &values).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], ETA_MAGIC);
        assert_eq!(read_eta_bin(&path).unwrap(), values);
        // corrupted magic is rejected
        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, b"NOTMAGIC").unwrap();
        assert!(read_eta_bin(&bad).is_err());
    }

    #[test]
    fn profile_csv_round_trips_exact_floats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("H.csv");
        let xs = vec![0.2, 0.4, 0.6000000000000001];
        let vs = vec![1.0 / 3.0, 2.0f64.sqrt(), -7.25e-13];
        write_profile_csv(&path, &xs, &vs).unwrap();
        let rows = read_profile_csv(&path).unwrap();
        for (i, (x, v)) in rows.iter().enumerate() {
            assert_eq!(x.to_bits(), xs[i].to_bits());
            assert_eq!(v.to_bits(), vs[i].to_bits());
        }
    }
}
