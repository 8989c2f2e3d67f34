use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounding ellipsoid `{x : |A (x - c)|_2 <= r}` at elapsed time `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeSlice {
    pub tau: f64,
    pub c: Vec<f64>,
    pub r: f64,
    /// Row-major metric matrix.
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
}

/// Relative share of the trace added to the covariance before whitening.
pub const COVARIANCE_RIDGE: f64 = 1e-9;
/// Radius of the ball used when every sample sits on the center, relative to the initial radius.
pub const DEGENERATE_RADIUS: f64 = 1e-6;

impl TubeSlice {
    pub fn ball(tau: f64, center: Vec<f64>, radius: f64) -> Self {
        let n = center.len();
        TubeSlice {
            tau,
            c: center,
            r: radius,
            a: identity(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// `|A (s - c)|_2`, before division by the radius.
    pub fn metric_norm(&self, state: &[f64]) -> f64 {
        let mut acc = 0.0;
        for row in &self.a {
            let v: f64 = row
                .iter()
                .zip(state.iter().zip(&self.c))
                .map(|(a, (s, c))| a * (s - c))
                .sum();
            acc += v * v;
        }
        acc.sqrt()
    }

    /// Normalized ellipsoid distance; values `<= 1` are inside the slice.
    pub fn membership(&self, state: &[f64]) -> Result<f64> {
        if state.len() != self.dim() {
            return Err(Error::shape(self.dim(), state.len()));
        }
        Ok(self.metric_norm(state) / self.r)
    }

    pub fn metric(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.a[i][j])
    }

    /// `r^n / |det A|`, proportional to the ellipsoid volume.
    pub fn volume_proxy(&self) -> f64 {
        let det = self.metric().determinant().abs();
        self.r.powi(self.dim() as i32) / det
    }

    /// Same ellipsoid shape with the radius multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        TubeSlice {
            r: self.r * factor,
            ..self.clone()
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::Validation("slice has an empty center".into()));
        }
        if self.a.len() != n || self.a.iter().any(|row| row.len() != n) {
            return Err(Error::Validation(format!("metric is not {n}x{n}")));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::Validation(format!("radius must be positive, got {}", self.r)));
        }
        if self.c.iter().chain(self.a.iter().flatten()).any(|v| !v.is_finite()) || !self.tau.is_finite() {
            return Err(Error::Validation("non-finite slice entry".into()));
        }
        let sv = self.metric().singular_values();
        let (lo, hi) = sv
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if !(lo > 0.0) || !(hi / lo < 1e15) {
            return Err(Error::Validation(format!(
                "metric is not invertible (singular values in [{lo:e}, {hi:e}])"
            )));
        }
        Ok(())
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Fits the slice ellipsoid to `points` around `center`.
///
/// The metric rotates onto the principal axes of the second-moment matrix of
/// `points - center`, whitens, and rescales so the farthest sample lands on the unit
/// sphere. The radius is `mu` times the farthest normalized sample, so every build sample
/// has membership at most `1 / mu`.
pub fn fit_slice(
    points: &[Vec<f64>],
    center: &[f64],
    mu: f64,
    initial_radius: f64,
    tau: f64,
) -> Result<TubeSlice> {
    let dim = center.len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::shape(dim, bad.len()));
    }
    let flat: Vec<f64> = points.concat();
    fit_slice_flat(&flat, center, mu, initial_radius, tau)
}

pub(crate) fn fit_slice_flat(
    points: &[f64],
    center: &[f64],
    mu: f64,
    initial_radius: f64,
    tau: f64,
) -> Result<TubeSlice> {
    let dim = center.len();
    let count = points.len() / dim;
    if count < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: count });
    }

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut diff = DVector::<f64>::zeros(dim);
    for p in points.chunks_exact(dim) {
        for k in 0..dim {
            diff[k] = p[k] - center[k];
        }
        cov.ger(1.0, &diff, &diff, 1.0);
    }
    cov /= count as f64;

    let trace = cov.trace();
    if !(trace > 0.0) {
        return Ok(TubeSlice::ball(tau, center.to_vec(), DEGENERATE_RADIUS * initial_radius));
    }
    let ridge = COVARIANCE_RIDGE * trace / dim as f64;
    let eigen = SymmetricEigen::new(cov);
    // Rotate onto principal axes (rows of V^T), then scale each axis by 1/sqrt(variance).
    let mut whiten = eigen.eigenvectors.transpose();
    for (i, &lambda) in eigen.eigenvalues.iter().enumerate() {
        let s = 1.0 / (lambda.max(0.0) + ridge).sqrt();
        whiten.row_mut(i).scale_mut(s);
    }

    let mut farthest = 0.0f64;
    for p in points.chunks_exact(dim) {
        for k in 0..dim {
            diff[k] = p[k] - center[k];
        }
        farthest = farthest.max((&whiten * &diff).norm());
    }
    let metric = whiten / farthest;

    let mut slice = TubeSlice {
        tau,
        c: center.to_vec(),
        r: 1.0,
        a: (0..dim)
            .map(|i| (0..dim).map(|j| metric[(i, j)]).collect())
            .collect(),
    };
    let max_norm = points
        .chunks_exact(dim)
        .map(|p| slice.metric_norm(p))
        .fold(0.0f64, f64::max);
    slice.r = mu * max_norm;
    Ok(slice)
}
