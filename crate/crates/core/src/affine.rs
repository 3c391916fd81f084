//! 12-degree-of-freedom affine transforms in homogeneous form.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridGeometry;
use crate::linalg::{self, Mat3, Vec3};
use crate::math;

/// Allowed range of `|det|` of the linear part.
pub const DET_BOUNDS: (f64, f64) = (0.2, 5.0);

/// World-to-world (mm) affine map, `y = M x + t`, stored as a 4×4 row-major
/// homogeneous matrix with bottom row `(0, 0, 0, 1)`.
///
/// A transform produced by registration maps moving-image world coordinates
/// onto the fixed image; resampling pulls back through its inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    m: [[f64; 4]; 4],
}

/// Decomposed parameters: `T · R(z·y·x) · Shear · Scale` about `center`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineParams {
    pub translation: Vec3,
    /// Radians about x, y, z.
    pub rotation: Vec3,
    pub scale: Vec3,
    /// xy, xz, yz shear coefficients.
    pub shear: Vec3,
    pub center: Vec3,
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            scale: [1.0; 3],
            ..Default::default()
        }
    }
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self::from_linear(&linalg::IDENTITY3, [0.0; 3])
    }

    pub fn translation(t: Vec3) -> Self {
        Self::from_linear(&linalg::IDENTITY3, t)
    }

    pub fn from_linear(linear: &Mat3, t: Vec3) -> Self {
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            m[r][..3].copy_from_slice(&linear[r]);
            m[r][3] = t[r];
        }
        m[3][3] = 1.0;
        Self { m }
    }

    /// Builds from 16 row-major numbers, checking the homogeneous row and the
    /// determinant bounds.
    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::Shape(format!("affine needs 16 numbers, got {}", values.len())));
        }
        let mut m = [[0.0; 4]; 4];
        for (i, v) in values.iter().enumerate() {
            m[i / 4][i % 4] = *v;
        }
        let a = Self { m };
        a.validate()?;
        Ok(a)
    }

    pub fn from_params(p: &AffineParams) -> Self {
        let [rx, ry, rz] = p.rotation;
        let (sx, cx) = (math::sin(rx), math::cos(rx));
        let (sy, cy) = (math::sin(ry), math::cos(ry));
        let (sz, cz) = (math::sin(rz), math::cos(rz));
        let rot_x = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let rot_y = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rot_z = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        let rot = linalg::mat3_mul(&rot_z, &linalg::mat3_mul(&rot_y, &rot_x));
        let shear = [[1.0, p.shear[0], p.shear[1]], [0.0, 1.0, p.shear[2]], [0.0, 0.0, 1.0]];
        let scale = [[p.scale[0], 0.0, 0.0], [0.0, p.scale[1], 0.0], [0.0, 0.0, p.scale[2]]];
        let linear = linalg::mat3_mul(&rot, &linalg::mat3_mul(&shear, &scale));
        // x -> L (x - c) + c + t
        let lc = linalg::mat3_vec(&linear, p.center);
        let t = [
            p.center[0] - lc[0] + p.translation[0],
            p.center[1] - lc[1] + p.translation[1],
            p.center[2] - lc[2] + p.translation[2],
        ];
        Self::from_linear(&linear, t)
    }

    pub fn matrix(&self) -> &[[f64; 4]; 4] {
        &self.m
    }

    pub fn row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.m[i / 4][i % 4];
        }
        out
    }

    pub fn linear(&self) -> Mat3 {
        let mut l = [[0.0; 3]; 3];
        for r in 0..3 {
            l[r].copy_from_slice(&self.m[r][..3]);
        }
        l
    }

    pub fn translation_part(&self) -> Vec3 {
        [self.m[0][3], self.m[1][3], self.m[2][3]]
    }

    pub fn validate(&self) -> Result<()> {
        if self.m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Validation(format!("bottom row is {:?}", self.m[3])));
        }
        if self.m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite affine entry".into()));
        }
        let det = math::abs(linalg::det3(&self.linear()));
        if !(det >= DET_BOUNDS.0 && det <= DET_BOUNDS.1) {
            return Err(Error::Validation(format!(
                "|det| = {det} outside [{}, {}]",
                DET_BOUNDS.0, DET_BOUNDS.1
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        let m = &self.m;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
        ]
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let mut m = [[0.0; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                m[r][c] = (0..4).map(|k| self.m[r][k] * other.m[k][c]).sum();
            }
        }
        Self { m }
    }

    pub fn inverse(&self) -> Result<Self> {
        let l = self.linear();
        let det = linalg::det3(&l);
        if !(math::abs(det) > 1e-12) {
            return Err(Error::SingularTransform);
        }
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
                let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
                inv[r][c] = (l[r1][c1] * l[r2][c2] - l[r1][c2] * l[r2][c1]) / det;
            }
        }
        let t = linalg::mat3_vec(&inv, self.translation_part());
        Ok(Self::from_linear(&inv, [-t[0], -t[1], -t[2]]))
    }

    /// Frobenius norm of the full 4×4 difference.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        let s: f64 = self
            .m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        math::sqrt(s)
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(self.m.iter().flatten().map(|v| v * v).sum())
    }

    /// The voxel-index map of a grid: `index -> world`.
    pub fn voxel_to_world(geom: &GridGeometry) -> Self {
        let dir = geom.direction();
        let sp = geom.spacing();
        let mut l = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                l[r][c] = dir[r][c] * sp[c];
            }
        }
        Self::from_linear(&l, geom.origin())
    }
}

/// Weighted least-squares affine fit `dst ≈ A src`, followed by one round of
/// residual-based down-weighting (Cauchy weights scaled by the weighted median
/// residual) and a refit.
pub fn fit_affine_robust(src: &[Vec3], dst: &[Vec3], weights: &[f64]) -> Result<AffineTransform> {
    let axes: Vec<[f64; 3]> = weights.iter().map(|&w| [w; 3]).collect();
    fit_affine_robust_axes(src, dst, &axes)
}

/// As [`fit_affine_robust`], with a separate confidence per output axis, so
/// a correspondence can pin down some coordinates of its target but not
/// others (an edge constrains only its normal direction).
pub fn fit_affine_robust_axes(src: &[Vec3], dst: &[Vec3], weights: &[[f64; 3]]) -> Result<AffineTransform> {
    let first = fit_affine_weighted_axes(src, dst, weights)?;
    let residuals: Vec<f64> = src
        .iter()
        .zip(dst)
        .map(|(s, d)| linalg::norm3(linalg::sub3(first.apply(*s), *d)))
        .collect();
    let overall: Vec<f64> = weights.iter().map(|w| w[0] + w[1] + w[2]).collect();
    let scale = weighted_median(&residuals, &overall).max(0.25);
    let reweighted: Vec<[f64; 3]> = residuals
        .iter()
        .zip(weights)
        .map(|(r, w)| {
            let u = r / (2.0 * scale);
            w.map(|wa| wa / (1.0 + u * u))
        })
        .collect();
    fit_affine_weighted_axes(src, dst, &reweighted)
}

pub fn fit_affine_weighted(src: &[Vec3], dst: &[Vec3], weights: &[f64]) -> Result<AffineTransform> {
    let axes: Vec<[f64; 3]> = weights.iter().map(|&w| [w; 3]).collect();
    fit_affine_weighted_axes(src, dst, &axes)
}

/// Weighted least squares, each output row solved with its own weights.
pub fn fit_affine_weighted_axes(src: &[Vec3], dst: &[Vec3], weights: &[[f64; 3]]) -> Result<AffineTransform> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(Error::Shape("correspondence arrays differ in length".into()));
    }
    let mut linear = [[0.0; 3]; 3];
    let mut t = [0.0; 3];
    for row in 0..3 {
        let support = weights.iter().filter(|w| w[row] > 0.0).count();
        if support < 4 {
            return Err(Error::DegenerateFit(format!(
                "{support} weighted correspondences for axis {row}; need at least 4"
            )));
        }
        // Centre the points so the normal matrix is well conditioned.
        let wsum: f64 = weights.iter().map(|w| w[row]).sum();
        let mut mean = [0.0; 3];
        for (s, w) in src.iter().zip(weights) {
            for a in 0..3 {
                mean[a] += w[row] * s[a] / wsum;
            }
        }
        let mut ata = [0.0f64; 16];
        let mut atb = [0.0f64; 4];
        for ((s, d), w) in src.iter().zip(dst).zip(weights) {
            let w = w[row];
            if w <= 0.0 {
                continue;
            }
            let x = [s[0] - mean[0], s[1] - mean[1], s[2] - mean[2], 1.0];
            for r in 0..4 {
                for c in 0..4 {
                    ata[r * 4 + c] += w * x[r] * x[c];
                }
                atb[r] += w * x[r] * d[row];
            }
        }
        linalg::solve_in_place(&mut ata, &mut atb, 4, 1e-9)
            .ok_or_else(|| Error::DegenerateFit("correspondences are rank deficient".into()))?;
        linear[row] = [atb[0], atb[1], atb[2]];
        t[row] = atb[3] - (atb[0] * mean[0] + atb[1] * mean[1] + atb[2] * mean[2]);
    }
    let fit = AffineTransform::from_linear(&linear, t);
    if fit.m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("non-finite solution".into()));
    }
    Ok(fit)
}

fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, &w)| (v, w))
        .collect();
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let half = pairs.iter().map(|p| p.1).sum::<f64>() * 0.5;
    let mut acc = 0.0;
    for (v, w) in &pairs {
        acc += w;
        if acc >= half {
            return *v;
        }
    }
    pairs[pairs.len() - 1].0
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample_params() -> AffineParams {
        AffineParams {
            translation: [3.0, -2.0, 1.5],
            rotation: [0.05, -0.1, 0.15],
            scale: [1.05, 0.95, 1.1],
            shear: [0.03, -0.02, 0.04],
            center: [10.0, 20.0, 30.0],
        }
    }

    #[test]
    fn inverse_round_trip() {
        let a = AffineTransform::from_params(&sample_params());
        let id = a.compose(&a.inverse().unwrap());
        assert!(id.frobenius_distance(&AffineTransform::identity()) < 1e-12);
    }

    #[test]
    fn center_is_fixed_without_translation() {
        let mut p = sample_params();
        p.translation = [0.0; 3];
        let a = AffineTransform::from_params(&p);
        let c = a.apply(p.center);
        for i in 0..3 {
            assert!((c[i] - p.center[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_fit_recovers_transform() {
        let a = AffineTransform::from_params(&sample_params());
        let mut src = vec![];
        for k in 0..3 {
            for j in 0..3 {
                for i in 0..3 {
                    src.push([i as f64 * 7.0, j as f64 * 5.0, k as f64 * 3.0]);
                }
            }
        }
        let dst: Vec<Vec3> = src.iter().map(|p| a.apply(*p)).collect();
        let w = vec![1.0; src.len()];
        let fit = fit_affine_robust(&src, &dst, &w).unwrap();
        assert!(fit.frobenius_distance(&a) < 1e-9);
    }

    #[test]
    fn outlier_is_down_weighted() {
        let a = AffineTransform::translation([1.0, 2.0, 3.0]);
        let mut src = vec![];
        for k in 0..4 {
            for j in 0..4 {
                for i in 0..4 {
                    src.push([i as f64 * 4.0, j as f64 * 4.0, k as f64 * 4.0]);
                }
            }
        }
        let mut dst: Vec<Vec3> = src.iter().map(|p| a.apply(*p)).collect();
        dst[5] = [100.0, -50.0, 20.0];
        let w = vec![1.0; src.len()];
        let plain = fit_affine_weighted(&src, &dst, &w).unwrap();
        let robust = fit_affine_robust(&src, &dst, &w).unwrap();
        assert!(robust.frobenius_distance(&a) < plain.frobenius_distance(&a));
    }

    #[test]
    fn coplanar_points_are_degenerate() {
        let src: Vec<Vec3> = (0..9).map(|i| [(i % 3) as f64, (i / 3) as f64, 0.0]).collect();
        let w = vec![1.0; 9];
        assert!(matches!(
            fit_affine_weighted(&src, &src, &w),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn validation_rejects_bad_rows() {
        let mut rows = AffineTransform::identity().row_major();
        assert!(AffineTransform::from_row_major(&rows).is_ok());
        rows[14] = 0.5;
        assert!(AffineTransform::from_row_major(&rows).is_err());
        let mut tiny = AffineTransform::identity().row_major();
        tiny[0] = 0.1;
        assert!(AffineTransform::from_row_major(&tiny).is_err());
    }
}
