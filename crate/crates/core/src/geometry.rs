//! Voxel grid geometry: dimensions, spacing, origin and orientation.

use alloc::format;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3, IDENTITY3};
use crate::math;

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Placement of a voxel grid in world (millimetre) space.
///
/// `direction` maps voxel axes to world axes column-wise: column `j` is the
/// world-space unit vector of voxel axis `j`. World coordinates follow the
/// RAS+ convention used by NIfTI `sform`/`qform`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
    direction: Mat3,
}

impl GridGeometry {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3, direction: Mat3) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGeometry(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGeometry(format!("origin must be finite, got {origin:?}")));
        }
        let gram = linalg::mat3_mul(&linalg::transpose3(&direction), &direction);
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 1.0 } else { 0.0 };
                if !(math::abs(gram[r][c] - expect) <= ORTHONORMAL_TOL) {
                    return Err(Error::InvalidGeometry(format!(
                        "direction columns are not orthonormal: {direction:?}"
                    )));
                }
            }
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            direction,
        })
    }

    /// Axis-aligned grid with identity direction.
    pub fn axis_aligned(dims: [usize; 3], spacing: Vec3, origin: Vec3) -> Result<Self> {
        Self::new(dims, spacing, origin, IDENTITY3)
    }

    /// Isotropic 1 mm grid at the origin; handy for tests and phantoms.
    pub fn unit(dims: [usize; 3]) -> Self {
        Self::axis_aligned(dims, [1.0; 3], [0.0; 3]).expect("unit geometry is valid")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn direction(&self) -> &Mat3 {
        &self.direction
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_origin(&self, origin: Vec3) -> Self {
        Self { origin, ..self.clone() }
    }

    pub fn with_dims(&self, dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, self.spacing, self.origin, self.direction)
    }

    /// Linear offset of voxel `(i, j, k)`; axis 0 varies fastest.
    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Inverse of [`offset`](Self::offset).
    #[inline]
    pub fn index_of(&self, offset: usize) -> [usize; 3] {
        let i = offset % self.dims[0];
        let rest = offset / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// `origin + direction · (spacing ⊙ index)`.
    pub fn voxel_to_world(&self, index: Vec3) -> Vec3 {
        let scaled = [
            index[0] * self.spacing[0],
            index[1] * self.spacing[1],
            index[2] * self.spacing[2],
        ];
        linalg::add3(self.origin, linalg::mat3_vec(&self.direction, scaled))
    }

    pub fn world_to_voxel(&self, world: Vec3) -> Vec3 {
        let rel = linalg::sub3(world, self.origin);
        let rotated = linalg::mat3_vec(&linalg::transpose3(&self.direction), rel);
        [
            rotated[0] / self.spacing[0],
            rotated[1] / self.spacing[1],
            rotated[2] / self.spacing[2],
        ]
    }

    /// World position of the geometric centre of the grid.
    pub fn center_world(&self) -> Vec3 {
        self.voxel_to_world([
            (self.dims[0] as f64 - 1.0) * 0.5,
            (self.dims[1] as f64 - 1.0) * 0.5,
            (self.dims[2] as f64 - 1.0) * 0.5,
        ])
    }

    /// Axis-aligned world-space bounding box of the voxel footprints.
    pub fn world_bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for corner in 0..8 {
            let idx = [
                if corner & 1 == 0 {
                    -0.5
                } else {
                    self.dims[0] as f64 - 0.5
                },
                if corner & 2 == 0 {
                    -0.5
                } else {
                    self.dims[1] as f64 - 0.5
                },
                if corner & 4 == 0 {
                    -0.5
                } else {
                    self.dims[2] as f64 - 0.5
                },
            ];
            let w = self.voxel_to_world(idx);
            for a in 0..3 {
                lo[a] = lo[a].min(w[a]);
                hi[a] = hi[a].max(w[a]);
            }
        }
        (lo, hi)
    }

    /// Geometry equality within `tol` on spacing, origin and direction.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.dims == other.dims
            && (0..3).all(|a| {
                math::abs(self.spacing[a] - other.spacing[a]) <= tol
                    && math::abs(self.origin[a] - other.origin[a]) <= tol
                    && (0..3).all(|c| math::abs(self.direction[a][c] - other.direction[a][c]) <= tol)
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_maps_from_zero_index() {
        let g = GridGeometry::axis_aligned([4, 5, 6], [0.8; 3], [10.0, -3.0, 2.5]).unwrap();
        assert_eq!(g.voxel_to_world([0.0; 3]), [10.0, -3.0, 2.5]);
    }

    #[test]
    fn atlas_spacing_hand_multiply() {
        let g = GridGeometry::axis_aligned([512, 512, 434], [0.8; 3], [0.0; 3]).unwrap();
        let w = g.voxel_to_world([1.0, 2.0, 3.0]);
        let expect = [0.8, 1.6, 2.4];
        for a in 0..3 {
            assert!((w[a] - expect[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn world_voxel_inverse_pair() {
        let rot = [[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]];
        let g = GridGeometry::new([7, 8, 9], [0.7, 1.3, 2.1], [5.0, 6.0, -7.0], rot).unwrap();
        let idx = [1.25, 6.5, 3.0];
        let back = g.world_to_voxel(g.voxel_to_world(idx));
        for a in 0..3 {
            assert!((back[a] - idx[a]).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_invalid() {
        assert!(GridGeometry::axis_aligned([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(GridGeometry::axis_aligned([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(GridGeometry::new([1, 1, 1], [1.0; 3], [0.0; 3], skew).is_err());
    }

    #[test]
    fn offsets_round_trip() {
        let g = GridGeometry::unit([3, 4, 5]);
        for off in 0..g.len() {
            let [i, j, k] = g.index_of(off);
            assert_eq!(g.offset(i, j, k), off);
        }
    }
}
