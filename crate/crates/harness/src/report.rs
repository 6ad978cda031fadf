//! Output formats: trace CSVs, experiment tables, the structured-text
//! state file, and run summaries. All writers are plain-text and
//! deterministic so reruns under the same seed are byte-identical.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use multiway_vb::elbo::{JointState, MeanFieldState};
use multiway_vb::optimizer::Trace;
use multiway_vb::spd::FactorSet;

/// Number formatting used everywhere: shortest round-trip representation,
/// so parsing the file back reproduces the bits.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Writes one optimization trace as CSV: one row per recorded point.
pub fn write_trace_csv(path: &Path, trace: &Trace<f64>) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).map_err(|e| HarnessError::format(path, e.to_string()))?;
    let n_modes = trace.rows().first().map_or(0, |r| r.logdets.len());
    let n_dof = trace.rows().first().map_or(0, |r| r.dof.len());
    let mut header = vec!["iteration".to_string(), "elbo".into(), "grad_norm".into()];
    for i in 1..=n_dof {
        header.push(if n_dof == 1 {
            "nu_v".into()
        } else {
            format!("nu_v_{i}")
        });
    }
    for i in 1..=n_modes {
        header.push(format!("logdet_{i}"));
    }
    header.push("distance_to_truth".into());
    w.write_record(&header)
        .map_err(|e| HarnessError::format(path, e.to_string()))?;
    for row in trace.rows() {
        let mut rec = vec![row.iteration.to_string(), fmt(row.elbo), fmt(row.grad_norm)];
        rec.extend(row.dof.iter().map(|&v| fmt(v)));
        rec.extend(row.logdets.iter().map(|&v| fmt(v)));
        rec.push(row.distance_to_truth.map_or(String::new(), fmt));
        w.write_record(&rec)
            .map_err(|e| HarnessError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// One convergence-curve point of a sweep table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub method: String,
    pub eps_log10: f64,
    pub iteration: usize,
    pub elbo: f64,
    pub grad_norm: f64,
    pub distance_to_truth: Option<f64>,
}

pub fn write_sweep_csv(path: &Path, records: &[SweepRecord]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).map_err(|e| HarnessError::format(path, e.to_string()))?;
    for r in records {
        w.serialize(r)
            .map_err(|e| HarnessError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// Mahalanobis study output: one row per posterior draw.
#[derive(Debug, Clone, Serialize)]
pub struct MahalanobisRecord {
    pub method: String,
    pub draw: usize,
    pub m_value: f64,
}

pub fn write_mahalanobis_csv(path: &Path, records: &[MahalanobisRecord]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).map_err(|e| HarnessError::format(path, e.to_string()))?;
    for r in records {
        w.serialize(r)
            .map_err(|e| HarnessError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// Iterations-to-threshold table row.
#[derive(Debug, Clone, Serialize)]
pub struct MisspecRecord {
    pub method: String,
    pub rank: usize,
    /// Iterations until `‖Σ̂_i − Σ̂_N‖_F < β`, or e.g. `">30000"` at the cap.
    pub iterations: String,
}

pub fn write_misspec_csv(path: &Path, records: &[MisspecRecord]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).map_err(|e| HarnessError::format(path, e.to_string()))?;
    for r in records {
        w.serialize(r)
            .map_err(|e| HarnessError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// Per-mode eigen summary row of the real-data workflow.
#[derive(Debug, Clone, Serialize)]
pub struct EigenRecord {
    pub mode: usize,
    pub index: usize,
    pub eigenvalue: f64,
    pub component_1: f64,
    pub component_2: f64,
}

pub fn write_eigen_csv(path: &Path, records: &[EigenRecord]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).map_err(|e| HarnessError::format(path, e.to_string()))?;
    for r in records {
        w.serialize(r)
            .map_err(|e| HarnessError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// Serialized fitted state: per-mode matrices in row-major order plus an
/// explicit convention header so other tooling can re-read it without
/// guessing the factor order or which mode carries the overall scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    /// "joint" or "meanfield".
    pub kind: String,
    /// Factor-order convention: the first factor is the outermost Kronecker
    /// block.
    pub factor_order: String,
    /// Mode that carries the overall scale under the orthogonalized
    /// normalization.
    pub scale_mode: usize,
    pub dims: Vec<usize>,
    /// `ν_v` (joint: one entry; mean-field: one per mode).
    pub dof: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub factors: Vec<FactorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorEntry {
    pub mode: usize,
    /// Row-major rows of the symmetric factor.
    pub rows: Vec<Vec<f64>>,
}

fn factors_to_entries(factors: &FactorSet<f64>) -> Vec<FactorEntry> {
    (1..=factors.n_modes())
        .map(|i| {
            let m = factors.factor(i).values();
            FactorEntry {
                mode: i,
                rows: (0..m.nrows())
                    .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
                    .collect(),
            }
        })
        .collect()
}

fn entries_to_factors(entries: &[FactorEntry], path: &Path) -> Result<FactorSet<f64>> {
    let mut mats = Vec::with_capacity(entries.len());
    for e in entries {
        let n = e.rows.len();
        if e.rows.iter().any(|r| r.len() != n) {
            return Err(HarnessError::format(
                path,
                format!("factor {} is not square", e.mode),
            ));
        }
        let m = DMatrix::from_fn(n, n, |i, j| e.rows[i][j]);
        mats.push(m);
    }
    FactorSet::from_matrices(mats).map_err(Into::into)
}

impl StateFile {
    pub fn from_joint(state: &JointState<f64>) -> Self {
        Self {
            kind: "joint".into(),
            factor_order: "mode-1-outermost".into(),
            scale_mode: 1,
            dims: state.dims().dims().to_vec(),
            dof: vec![state.nu_v()],
            gamma: None,
            factors: factors_to_entries(state.factors()),
        }
    }

    pub fn from_mean_field(state: &MeanFieldState<f64>) -> Self {
        Self {
            kind: "meanfield".into(),
            factor_order: "mode-1-outermost".into(),
            scale_mode: 1,
            dims: state.dims().dims().to_vec(),
            dof: state.nus().to_vec(),
            gamma: Some(state.gamma()),
            factors: factors_to_entries(state.factors()),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string_pretty(self).map_err(|e| HarnessError::format(path, e.to_string()))?;
        fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        toml::from_str(&text).map_err(|e| HarnessError::format(path, e.to_string()))
    }

    pub fn factor_set(&self, path: &Path) -> Result<FactorSet<f64>> {
        entries_to_factors(&self.factors, path)
    }
}

/// Bare factor set on disk: ground truths from the simulator and
/// factor-form covariance draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorFile {
    pub factor_order: String,
    pub dims: Vec<usize>,
    pub factors: Vec<FactorEntry>,
}

impl FactorFile {
    pub fn from_factor_set(factors: &FactorSet<f64>) -> Self {
        Self {
            factor_order: "mode-1-outermost".into(),
            dims: factors.dims().dims().to_vec(),
            factors: factors_to_entries(factors),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string_pretty(self).map_err(|e| HarnessError::format(path, e.to_string()))?;
        fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        toml::from_str(&text).map_err(|e| HarnessError::format(path, e.to_string()))
    }

    pub fn factor_set(&self, path: &Path) -> Result<FactorSet<f64>> {
        entries_to_factors(&self.factors, path)
    }
}

/// Writes any serializable summary as pretty TOML.
pub fn write_toml<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text =
        toml::to_string_pretty(value).map_err(|e| HarnessError::format(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}
