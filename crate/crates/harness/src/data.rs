//! Tensor data files: a flat binary payload of little-endian `f64` values
//! in row-major order, described by a TOML sidecar at `<path>.toml`, plus
//! CSV ingestion for 2-way slices.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use multiway_vb::kron::{FactorDims, SufficientStats};

/// Sidecar descriptor for a tensor payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDescriptor {
    pub shape: Vec<usize>,
    pub layout: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_names: Option<Vec<String>>,
}

/// A dense real array with named shape, row-major. The last mode is
/// conventionally the observation index when the array holds a sample.
#[derive(Debug, Clone)]
pub struct DataArray {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub mode_names: Option<Vec<String>>,
}

impl DataArray {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(HarnessError::InvalidSpec(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            mode_names: None,
        })
    }

    /// Number of observations when the last mode indexes them.
    pub fn n_observations(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    /// Extents of the non-observation modes.
    pub fn mode_dims(&self) -> &[usize] {
        &self.shape[..self.shape.len() - 1]
    }

    /// Vectorized observation `t` (0-based): the row-major slice over the
    /// leading modes, matching the crate's linear-index convention.
    pub fn observation(&self, t: usize) -> DVector<f64> {
        let n = self.n_observations();
        let p: usize = self.mode_dims().iter().product();
        DVector::from_fn(p, |i, _| self.values[i * n + t])
    }

    /// Centers observations by the sample mean and accumulates
    /// `S = Σ (y−ȳ)(y−ȳ)ᵀ`. Returns the stats and the mean.
    pub fn centered_stats(&self) -> Result<(SufficientStats<f64>, DVector<f64>)> {
        let n = self.n_observations();
        if n == 0 {
            return Err(HarnessError::InvalidSpec("no observations in array".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            let bad = self.values.iter().position(|v| !v.is_finite()).unwrap();
            return Err(HarnessError::InvalidSpec(format!(
                "non-finite value at flat index {bad}"
            )));
        }
        let dims = FactorDims::new(self.mode_dims()).map_err(multiway_vb::Error::from)?;
        let p = dims.total();
        let mut mean = DVector::<f64>::zeros(p);
        for t in 0..n {
            mean += self.observation(t);
        }
        mean /= n as f64;
        let mut s = DMatrix::<f64>::zeros(p, p);
        for t in 0..n {
            let y = self.observation(t) - &mean;
            s.ger(1.0, &y, &y, 1.0);
        }
        Ok((
            SufficientStats::new(dims, s).map_err(HarnessError::Core)?,
            mean,
        ))
    }

    /// Uncentered Gram matrix `S = Σ yyᵀ` for zero-mean models.
    pub fn raw_stats(&self) -> Result<SufficientStats<f64>> {
        let n = self.n_observations();
        let dims = FactorDims::new(self.mode_dims()).map_err(multiway_vb::Error::from)?;
        let p = dims.total();
        let mut s = DMatrix::<f64>::zeros(p, p);
        for t in 0..n {
            let y = self.observation(t);
            s.ger(1.0, &y, &y, 1.0);
        }
        SufficientStats::new(dims, s).map_err(HarnessError::Core)
    }
}

fn sidecar_path(data_path: &Path) -> PathBuf {
    let mut s = data_path.as_os_str().to_os_string();
    s.push(".toml");
    PathBuf::from(s)
}

/// Writes the binary payload and its sidecar.
pub fn write_tensor(path: &Path, array: &DataArray) -> Result<()> {
    let mut bytes = Vec::with_capacity(array.values.len() * 8);
    for v in &array.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| HarnessError::io(path, e))?;

    let desc = TensorDescriptor {
        shape: array.shape.clone(),
        layout: "row-major".into(),
        mode_names: array.mode_names.clone(),
    };
    let text =
        toml::to_string_pretty(&desc).map_err(|e| HarnessError::format(path, e.to_string()))?;
    let sc = sidecar_path(path);
    fs::write(&sc, text).map_err(|e| HarnessError::io(&sc, e))?;
    Ok(())
}

/// Reads a tensor payload through its sidecar.
pub fn read_tensor(path: &Path) -> Result<DataArray> {
    let sc = sidecar_path(path);
    let text = fs::read_to_string(&sc).map_err(|e| HarnessError::io(&sc, e))?;
    let desc: TensorDescriptor =
        toml::from_str(&text).map_err(|e| HarnessError::format(&sc, e.to_string()))?;
    if desc.layout != "row-major" {
        return Err(HarnessError::format(
            &sc,
            format!("unsupported layout {:?}", desc.layout),
        ));
    }
    let len: usize = desc.shape.iter().product();
    let mut f = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)
        .map_err(|e| HarnessError::io(path, e))?;
    if bytes.len() != len * 8 {
        return Err(HarnessError::format(
            path,
            format!(
                "expected {} bytes for shape {:?}, found {}",
                len * 8,
                desc.shape,
                bytes.len()
            ),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut array = DataArray::new(desc.shape, values)?;
    array.mode_names = desc.mode_names;
    Ok(array)
}

/// Reads a headerless CSV of reals as a 2-way array (rows × columns).
pub fn read_csv_matrix(path: &Path) -> Result<DataArray> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| HarnessError::format(path, e.to_string()))?;
    let mut values = Vec::new();
    let mut n_cols = None;
    let mut n_rows = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| HarnessError::format(path, e.to_string()))?;
        let cols = record.len();
        if *n_cols.get_or_insert(cols) != cols {
            return Err(HarnessError::format(
                path,
                format!(
                    "row {} has {} columns, expected {:?}",
                    row_idx + 1,
                    cols,
                    n_cols
                ),
            ));
        }
        for (col_idx, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                HarnessError::format(
                    path,
                    format!(
                        "row {}, column {}: {:?} is not a number",
                        row_idx + 1,
                        col_idx + 1,
                        field
                    ),
                )
            })?;
            values.push(v);
        }
        n_rows += 1;
    }
    DataArray::new(vec![n_rows, n_cols.unwrap_or(0)], values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let dir = std::env::temp_dir().join("mwvb-data-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy.bin");
        let mut array =
            DataArray::new(vec![2, 3, 2], (0..12).map(|i| i as f64 * 0.5).collect()).unwrap();
        array.mode_names = Some(vec!["a".into(), "b".into(), "obs".into()]);
        write_tensor(&path, &array).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape, array.shape);
        assert_eq!(back.values, array.values);
        assert_eq!(back.mode_names, array.mode_names);
    }

    #[test]
    fn observation_slicing_matches_layout() {
        // shape (2, 2, 3): observations are the last mode
        let values: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let array = DataArray::new(vec![2, 2, 3], values).unwrap();
        let y0 = array.observation(0);
        assert_eq!(y0.as_slice(), &[0.0, 3.0, 6.0, 9.0]);
        let y2 = array.observation(2);
        assert_eq!(y2.as_slice(), &[2.0, 5.0, 8.0, 11.0]);
    }

    #[test]
    fn centered_stats_remove_the_mean() {
        let mut values = vec![0.0; 2 * 2 * 4];
        for t in 0..4 {
            for p in 0..4 {
                values[p * 4 + t] = (t as f64) + (p as f64) * 10.0;
            }
        }
        let array = DataArray::new(vec![2, 2, 4], values).unwrap();
        let (stats, mean) = array.centered_stats().unwrap();
        assert!((mean[0] - 1.5).abs() < 1e-12);
        // each centered observation is a constant multiple of the all-ones
        // direction: t − 1.5 in every coordinate
        let expect: f64 = [-1.5f64, -0.5, 0.5, 1.5]
            .iter()
            .map(|d| d * d * 4.0)
            .sum::<f64>();
        assert!((stats.matrix().trace() - expect).abs() < 1e-10);
    }

    #[test]
    fn non_finite_values_are_reported_with_position() {
        let mut values = vec![0.0; 8];
        values[5] = f64::NAN;
        let array = DataArray::new(vec![2, 2, 2], values).unwrap();
        let err = array.centered_stats().unwrap_err();
        assert!(err.to_string().contains("flat index 5"), "{err}");
    }

    #[test]
    fn csv_matrix_ingestion() {
        let dir = std::env::temp_dir().join("mwvb-data-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy.csv");
        fs::write(&path, "1.0, 2.0\n3.0, 4.5\n").unwrap();
        let array = read_csv_matrix(&path).unwrap();
        assert_eq!(array.shape, vec![2, 2]);
        assert_eq!(array.values, vec![1.0, 2.0, 3.0, 4.5]);

        fs::write(&path, "1.0, x\n").unwrap();
        assert!(read_csv_matrix(&path).is_err());
    }
}
