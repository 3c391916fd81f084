//! Dense scalar volumes on a [`GridGeometry`], with sampling, resampling and
//! reorientation to the canonical RAS axis convention.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridGeometry;
use crate::linalg::{Vec3, IDENTITY3};
use crate::math;

/// Air, in Hounsfield units. Out-of-domain samples of CT images read as air.
pub const AIR_HU: f32 = -1024.0;

/// Element type of a [`Volume`].
pub trait Voxel: Copy + PartialEq + core::fmt::Debug {
    fn is_valid(&self) -> bool {
        true
    }
}

impl Voxel for f32 {
    fn is_valid(&self) -> bool {
        self.is_finite()
    }
}

impl Voxel for u16 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Trilinear,
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    geometry: GridGeometry,
    data: Vec<T>,
    padding: T,
}

/// CT intensities in HU.
pub type ImageVolume = Volume<f32>;
/// Organ labels; 0 is background.
pub type LabelVolume = Volume<u16>;

impl<T: Voxel> Volume<T> {
    pub fn new(geometry: GridGeometry, data: Vec<T>, padding: T) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_valid()) {
            return Err(Error::Validation(format!("non-finite voxel at offset {pos}")));
        }
        Ok(Self {
            geometry,
            data,
            padding,
        })
    }

    pub fn filled(geometry: GridGeometry, value: T, padding: T) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            data: vec![value; n],
            padding,
        }
    }

    pub fn from_fn(geometry: GridGeometry, padding: T, mut f: impl FnMut([usize; 3]) -> T) -> Self {
        let [nx, ny, nz] = geometry.dims();
        let mut data = Vec::with_capacity(geometry.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f([i, j, k]));
                }
            }
        }
        Self {
            geometry,
            data,
            padding,
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn padding(&self) -> T {
        self.padding
    }

    pub fn with_padding(mut self, padding: T) -> Self {
        self.padding = padding;
        self
    }

    /// Same data placed on a different geometry with identical dims.
    pub fn with_geometry(self, geometry: GridGeometry) -> Result<Self> {
        if geometry.dims() != self.geometry.dims() {
            return Err(Error::Shape(format!(
                "cannot relabel {:?} grid as {:?}",
                self.geometry.dims(),
                geometry.dims()
            )));
        }
        Ok(Self { geometry, ..self })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.geometry.offset(i, j, k)]
    }

    /// Value at the integer voxel nearest to `p`, or the padding value when
    /// `p` rounds outside the grid.
    pub fn sample_nearest(&self, p: Vec3) -> T {
        let dims = self.geometry.dims();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let r = math::round(p[a]);
            if !(r >= 0.0 && r <= dims[a] as f64 - 1.0) {
                return self.padding;
            }
            idx[a] = r as usize;
        }
        self.get(idx[0], idx[1], idx[2])
    }

    /// Map with the geometry kept.
    pub fn map<U: Voxel>(&self, padding: U, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            padding,
        }
    }

    /// Contiguous slab `[first, last]` along `axis`. Retained voxels keep their
    /// world positions.
    pub fn slab(&self, axis: usize, first: usize, last: usize) -> Result<Self> {
        let dims = self.geometry.dims();
        if axis > 2 || first > last || last >= dims[axis] {
            return Err(Error::Shape(format!(
                "slab [{first}, {last}] outside axis {axis} of {dims:?}"
            )));
        }
        let mut new_dims = dims;
        new_dims[axis] = last - first + 1;
        let mut start = [0.0; 3];
        start[axis] = first as f64;
        let origin = self.geometry.voxel_to_world(start);
        let geometry = GridGeometry::new(new_dims, self.geometry.spacing(), origin, *self.geometry.direction())?;
        let out = Self::from_fn(geometry, self.padding, |[i, j, k]| {
            let mut src = [i, j, k];
            src[axis] += first;
            self.get(src[0], src[1], src[2])
        });
        Ok(out)
    }
}

impl ImageVolume {
    /// Trilinear sample at continuous voxel position `p`.
    ///
    /// Positions inside the voxel footprint `[-0.5, n - 0.5]` are interpolated
    /// with edge replication; anything further out reads the padding value.
    pub fn sample_trilinear(&self, p: Vec3) -> f32 {
        let dims = self.geometry.dims();
        let mut base = [0usize; 3];
        let mut next = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let x = snap(p[a]);
            let n = dims[a] as f64;
            if !(x >= -0.5 && x <= n - 0.5) {
                return self.padding;
            }
            let c = x.clamp(0.0, n - 1.0);
            let f = math::floor(c);
            base[a] = f as usize;
            frac[a] = c - f;
            next[a] = (base[a] + 1).min(dims[a] - 1);
        }
        let v = |i: usize, j: usize, k: usize| self.get(i, j, k) as f64;
        let [x0, y0, z0] = base;
        let [x1, y1, z1] = next;
        let [fx, fy, fz] = frac;
        let c00 = v(x0, y0, z0) * (1.0 - fx) + v(x1, y0, z0) * fx;
        let c10 = v(x0, y1, z0) * (1.0 - fx) + v(x1, y1, z0) * fx;
        let c01 = v(x0, y0, z1) * (1.0 - fx) + v(x1, y0, z1) * fx;
        let c11 = v(x0, y1, z1) * (1.0 - fx) + v(x1, y1, z1) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        (c0 * (1.0 - fz) + c1 * fz) as f32
    }

    pub fn sample(&self, p: Vec3, interp: Interp) -> f32 {
        match interp {
            Interp::Trilinear => self.sample_trilinear(p),
            Interp::Nearest => self.sample_nearest(p),
        }
    }
}

/// Voxel types that can be sampled at continuous positions. Labels always
/// use nearest-neighbour lookup whatever interpolation is requested.
pub trait Interpolate: Voxel {
    fn sample_at(vol: &Volume<Self>, p: Vec3, interp: Interp) -> Self;
}

impl Interpolate for f32 {
    #[inline]
    fn sample_at(vol: &Volume<Self>, p: Vec3, interp: Interp) -> Self {
        vol.sample(p, interp)
    }
}

impl Interpolate for u16 {
    #[inline]
    fn sample_at(vol: &Volume<Self>, p: Vec3, _interp: Interp) -> Self {
        vol.sample_nearest(p)
    }
}

/// Rounds positions that are within 1e-9 of an integer, so world round trips
/// land exactly on voxel centres.
#[inline]
pub(crate) fn snap(x: f64) -> f64 {
    let r = math::round(x);
    if math::abs(x - r) < 1e-9 {
        r
    } else {
        x
    }
}

/// Samples `vol` at the world position of every voxel of `target`.
pub fn resample(vol: &ImageVolume, target: &GridGeometry, interp: Interp) -> ImageVolume {
    let src = vol.geometry();
    Volume::from_fn(target.clone(), vol.padding(), |[i, j, k]| {
        let w = target.voxel_to_world([i as f64, j as f64, k as f64]);
        vol.sample(src.world_to_voxel(w), interp)
    })
}

/// Nearest-neighbour resampling of a label volume; background outside.
pub fn resample_labels(vol: &LabelVolume, target: &GridGeometry) -> LabelVolume {
    let src = vol.geometry();
    Volume::from_fn(target.clone(), vol.padding(), |[i, j, k]| {
        let w = target.voxel_to_world([i as f64, j as f64, k as f64]);
        vol.sample_nearest(src.world_to_voxel(w))
    })
}

const PERMUTATION_TOL: f64 = 0.2;

/// Reorders and flips the voxel axes so the direction becomes identity (RAS).
///
/// Only near signed-permutation directions are accepted; oblique volumes are
/// rejected rather than resliced.
pub fn reorient_canonical<T: Voxel>(vol: &Volume<T>) -> Result<Volume<T>> {
    let geom = vol.geometry();
    let dir = geom.direction();
    // world_axis[j] / sign[j]: where voxel axis j points.
    let mut world_axis = [0usize; 3];
    let mut sign = [1i8; 3];
    let mut used = [false; 3];
    for j in 0..3 {
        let a = (0..3)
            .max_by(|&x, &y| math::abs(dir[x][j]).total_cmp(&math::abs(dir[y][j])))
            .unwrap_or(0);
        if used[a] {
            return Err(Error::UnsupportedOrientation(format!(
                "direction {dir:?} is not a signed permutation"
            )));
        }
        used[a] = true;
        world_axis[j] = a;
        sign[j] = if dir[a][j] < 0.0 { -1 } else { 1 };
    }
    for j in 0..3 {
        for a in 0..3 {
            let ideal = if a == world_axis[j] { sign[j] as f64 } else { 0.0 };
            if math::abs(dir[a][j] - ideal) > PERMUTATION_TOL {
                return Err(Error::UnsupportedOrientation(format!(
                    "direction {dir:?} is oblique beyond tolerance {PERMUTATION_TOL}"
                )));
            }
        }
    }

    let old_dims = geom.dims();
    let old_spacing = geom.spacing();
    let mut new_dims = [0usize; 3];
    let mut new_spacing = [0.0; 3];
    let mut corner = [0.0; 3];
    for j in 0..3 {
        new_dims[world_axis[j]] = old_dims[j];
        new_spacing[world_axis[j]] = old_spacing[j];
        if sign[j] < 0 {
            corner[j] = (old_dims[j] - 1) as f64;
        }
    }
    let origin = geom.voxel_to_world(corner);
    let new_geom = GridGeometry::new(new_dims, new_spacing, origin, IDENTITY3)?;
    let out = Volume::from_fn(new_geom, vol.padding(), |new_idx| {
        let mut old = [0usize; 3];
        for j in 0..3 {
            let n = new_idx[world_axis[j]];
            old[j] = if sign[j] < 0 { old_dims[j] - 1 - n } else { n };
        }
        vol.get(old[0], old[1], old[2])
    });
    Ok(out)
}
