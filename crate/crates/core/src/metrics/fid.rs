//! Fréchet distance between Gaussians fitted to feature embeddings (FID).
//!
//! d² = ‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^½)
//!
//! Tr((Σa Σb)^½) is evaluated as Σ √λ over the eigenvalues of the symmetric
//! matrix Σa^½ Σb Σa^½, which is similar to Σa Σb.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ForgeError, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FFV1";

/// Negative eigenvalues down to `-EIGEN_TOLERANCE × max(1, λmax)` are
/// rounding noise and are clipped to zero.
pub const EIGEN_TOLERANCE: f64 = 1e-6;

const EIGEN_MAX_ITERATIONS: usize = 10_000;

/// `count × dim` row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    count: usize,
    dim: usize,
    rows: Vec<f32>,
}

impl FeatureSet {
    pub fn new(count: usize, dim: usize, rows: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(ForgeError::InvalidParameter(
                "feature dimension must be at least 1".into(),
            ));
        }
        if rows.len() != count * dim {
            return Err(ForgeError::DimensionMismatch(format!(
                "{} values for {count} rows of dimension {dim}",
                rows.len()
            )));
        }
        if let Some(i) = rows.iter().position(|v| !v.is_finite()) {
            return Err(ForgeError::InvalidParameter(format!(
                "non-finite feature value at row {}, column {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self { count, dim, rows })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn read_from<R: Read>(mut reader: R) -> std::io::Result<std::result::Result<Self, ForgeError>> {
        let mut header = [0u8; 12];
        reader.read_exact(&mut header)?;
        if &header[..4] != FEATURE_MAGIC {
            return Ok(Err(ForgeError::InvalidParameter("missing FFV1 magic".into())));
        }
        let count = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let mut bytes = vec![0u8; count * dim * 4];
        reader.read_exact(&mut bytes)?;
        let mut trailing = [0u8; 1];
        if reader.read(&mut trailing)? != 0 {
            return Ok(Err(ForgeError::InvalidParameter(
                "trailing bytes after feature matrix".into(),
            )));
        }
        let rows = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self::new(count, dim, rows))
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writer.write_all(FEATURE_MAGIC)?;
        writer.write_all(&(self.count as u32).to_le_bytes())?;
        writer.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.rows {
            writer.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| ForgeError::io(path, e))?;
        match Self::read_from(BufReader::new(file)) {
            Ok(parsed) => parsed.map_err(|e| ForgeError::parse(path, e)),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                Err(ForgeError::parse(path, "truncated feature file"))
            }
            Err(e) => Err(ForgeError::io(path, e)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| ForgeError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| ForgeError::io(path, e))?;
        w.flush().map_err(|e| ForgeError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased (n − 1) covariance, symmetrized.
pub fn gaussian_stats(features: &FeatureSet) -> Result<GaussianStats> {
    let n = features.count;
    if n < 2 {
        return Err(ForgeError::InvalidParameter(format!(
            "covariance needs at least 2 samples, got {n}"
        )));
    }
    let d = features.dim;
    let x = DMatrix::from_row_iterator(n, d, features.rows.iter().map(|&v| v as f64));
    let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mean, cov })
}

fn eigenvalues_clipped(m: DMatrix<f64>, what: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, EIGEN_MAX_ITERATIONS)
        .ok_or_else(|| ForgeError::Numeric(format!("eigendecomposition of {what} did not converge")))?;
    let scale = eig.eigenvalues.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let mut values = eig.eigenvalues;
    for v in values.iter_mut() {
        if !v.is_finite() {
            return Err(ForgeError::Numeric(format!("non-finite eigenvalue in {what}")));
        }
        if *v < -EIGEN_TOLERANCE * scale {
            return Err(ForgeError::Numeric(format!(
                "{what} is not positive semidefinite (eigenvalue {v:e})"
            )));
        }
        *v = v.max(0.0);
    }
    Ok((values, eig.eigenvectors))
}

/// Fréchet distance between two Gaussians.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d || a.cov.shape() != (d, d) || b.cov.shape() != (d, d) {
        return Err(ForgeError::DimensionMismatch(format!(
            "statistics of dimension {d} and {}",
            b.dim()
        )));
    }

    let (values_a, vectors_a) = eigenvalues_clipped(a.cov.clone(), "first covariance")?;
    eigenvalues_clipped(b.cov.clone(), "second covariance")?;

    let sqrt_a = &vectors_a * DMatrix::from_diagonal(&values_a.map(f64::sqrt)) * vectors_a.transpose();
    let inner = &sqrt_a * &b.cov * &sqrt_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let (values_inner, _) = eigenvalues_clipped(inner, "covariance product")?;
    let trace_sqrt: f64 = values_inner.iter().map(|v| v.sqrt()).sum();

    let mean_term = (&a.mean - &b.mean).norm_squared();
    let value = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt;
    Ok(value.max(0.0))
}

pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.dim != b.dim {
        return Err(ForgeError::DimensionMismatch(format!(
            "feature dimensions {} and {}",
            a.dim, b.dim
        )));
    }
    frechet_distance(&gaussian_stats(a)?, &gaussian_stats(b)?)
}
