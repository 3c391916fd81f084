//! Displacement fields in voxel units of their own grid.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridGeometry;
use crate::linalg::Vec3;
use crate::math;
use crate::volume::snap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Control,
    Dense,
}

/// One displacement vector per node, in voxels of `geometry`. A voxel `x`
/// corresponds to position `x + field(x)` (pull-back convention).
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    geometry: GridGeometry,
    vectors: Vec<[f32; 3]>,
    resolution: Resolution,
}

impl DisplacementField {
    pub fn new(geometry: GridGeometry, vectors: Vec<[f32; 3]>, resolution: Resolution) -> Result<Self> {
        if vectors.len() != geometry.len() {
            return Err(Error::Shape(format!(
                "{} vectors for grid {:?}",
                vectors.len(),
                geometry.dims()
            )));
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite displacement".into()));
        }
        Ok(Self {
            geometry,
            vectors,
            resolution,
        })
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            vectors: vec![[0.0; 3]; n],
            resolution: Resolution::Dense,
        }
    }

    pub fn uniform(geometry: GridGeometry, v: Vec3) -> Self {
        let n = geometry.len();
        let v = v.map(|c| c as f32);
        Self {
            geometry,
            vectors: vec![v; n],
            resolution: Resolution::Dense,
        }
    }

    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut([usize; 3]) -> Vec3) -> Self {
        let vectors = (0..geometry.len())
            .map(|o| f(geometry.index_of(o)).map(|c| c as f32))
            .collect();
        Self {
            geometry,
            vectors,
            resolution: Resolution::Dense,
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn vectors(&self) -> &[[f32; 3]] {
        &self.vectors
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.vectors[self.geometry.offset(i, j, k)].map(|c| c as f64)
    }

    /// Trilinear interpolation at a continuous voxel position, replicating the
    /// edge vectors outside the grid.
    pub fn sample(&self, p: Vec3) -> Vec3 {
        let dims = self.geometry.dims();
        let mut base = [0usize; 3];
        let mut next = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let c = snap(p[a]).clamp(0.0, dims[a] as f64 - 1.0);
            let f = math::floor(c);
            base[a] = f as usize;
            frac[a] = c - f;
            next[a] = (base[a] + 1).min(dims[a] - 1);
        }
        let mut out = [0.0; 3];
        for corner in 0..8 {
            let pick = |a: usize| if corner >> a & 1 == 1 { next[a] } else { base[a] };
            let w: f64 = (0..3)
                .map(|a| if corner >> a & 1 == 1 { frac[a] } else { 1.0 - frac[a] })
                .product();
            if w == 0.0 {
                continue;
            }
            let v = self.get(pick(0), pick(1), pick(2));
            for c in 0..3 {
                out[c] += w * v[c];
            }
        }
        out
    }

    /// Largest absolute component over all vectors.
    pub fn max_abs_component(&self) -> f64 {
        self.vectors
            .iter()
            .flatten()
            .fold(0.0f64, |m, &c| m.max(math::abs(c as f64)))
    }

    pub fn mean_magnitude(&self) -> f64 {
        let s: f64 = self.vectors.iter().map(magnitude).sum();
        s / self.vectors.len() as f64
    }

    /// Mean squared deviation of the vectors from their mean vector.
    pub fn spatial_variance(&self) -> f64 {
        let n = self.vectors.len() as f64;
        let mut mean = [0.0; 3];
        for v in &self.vectors {
            for c in 0..3 {
                mean[c] += v[c] as f64 / n;
            }
        }
        self.vectors
            .iter()
            .map(|v| {
                (0..3)
                    .map(|c| {
                        let e = v[c] as f64 - mean[c];
                        e * e
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n
    }
}

#[inline]
pub(crate) fn magnitude(v: &[f32; 3]) -> f64 {
    let [x, y, z] = v.map(|c| c as f64);
    math::sqrt(x * x + y * y + z * z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_is_trilinear_and_clamped() {
        let g = GridGeometry::unit([3, 2, 2]);
        let f = DisplacementField::from_fn(g, |[i, j, k]| [i as f64, 2.0 * j as f64, -(k as f64)]);
        let s = f.sample([0.5, 0.25, 0.5]);
        assert!((s[0] - 0.5).abs() < 1e-12);
        assert!((s[1] - 0.5).abs() < 1e-12);
        assert!((s[2] + 0.5).abs() < 1e-12);
        assert_eq!(f.sample([7.0, -3.0, 0.0]), [2.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_statistics() {
        let f = DisplacementField::uniform(GridGeometry::unit([4, 4, 4]), [3.0, 0.0, -4.0]);
        assert_eq!(f.max_abs_component(), 4.0);
        assert!((f.mean_magnitude() - 5.0).abs() < 1e-12);
        assert!(f.spatial_variance() < 1e-12);
    }
}
