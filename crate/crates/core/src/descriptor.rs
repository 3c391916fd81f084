//! Self-similarity context descriptors.
//!
//! Each voxel gets 12 channels, one per pair of non-opposite face-neighbour
//! patches: `exp(-SSD(patch_a, patch_b) / q²)` where `q²` estimates the local
//! noise level. Because only differences between patches enter, the
//! descriptor ignores additive intensity offsets, and with the per-voxel `q²`
//! it also ignores global intensity scaling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridGeometry;
use crate::linalg::Vec3;
use crate::math;
use crate::volume::{snap, ImageVolume};

pub const CHANNELS: usize = 12;
/// Floor for the noise estimate `q²`.
pub const NOISE_FLOOR: f64 = 1e-6;

pub type Descriptor = [f32; CHANNELS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseRule {
    /// Mean of the 12 pairwise SSDs at the voxel.
    PairMean,
    /// Mean of all pairwise SSDs over the whole volume.
    GlobalMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    L1,
    L2,
}

impl DistanceMetric {
    #[inline]
    pub fn eval(self, a: &Descriptor, b: &Descriptor) -> f32 {
        match self {
            DistanceMetric::L1 => descriptor_distance(a, b),
            DistanceMetric::L2 => {
                let s: f32 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                libm::sqrtf(s)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorParams {
    /// Half-width of the cubic patch; 1 gives 3×3×3 patches.
    pub patch_radius: usize,
    /// Distance in voxels from the centre to each of the six neighbour patches.
    pub offset: usize,
    pub noise: NoiseRule,
    pub metric: DistanceMetric,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            patch_radius: 1,
            offset: 2,
            noise: NoiseRule::PairMean,
            metric: DistanceMetric::L1,
        }
    }
}

impl DescriptorParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_radius < 1 || self.offset < 1 {
            return Err(Error::Config(format!(
                "patch_radius and offset must be >= 1, got {} and {}",
                self.patch_radius, self.offset
            )));
        }
        Ok(())
    }

    /// The six face neighbours: +x, -x, +y, -y, +z, -z.
    pub fn neighborhood(&self) -> [[isize; 3]; 6] {
        let o = self.offset as isize;
        [[o, 0, 0], [-o, 0, 0], [0, o, 0], [0, -o, 0], [0, 0, o], [0, 0, -o]]
    }
}

/// Indices into [`DescriptorParams::neighborhood`] of the 12 compared pairs:
/// every pair except the three opposite ones.
pub const PAIRS: [(usize, usize); CHANNELS] = [
    (0, 2),
    (0, 3),
    (0, 4),
    (0, 5),
    (1, 2),
    (1, 3),
    (1, 4),
    (1, 5),
    (2, 4),
    (2, 5),
    (3, 4),
    (3, 5),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SscDescriptorVolume {
    geometry: GridGeometry,
    channels: Vec<Descriptor>,
}

impl SscDescriptorVolume {
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn channels(&self) -> &[Descriptor] {
        &self.channels
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> &Descriptor {
        &self.channels[self.geometry.offset(i, j, k)]
    }

    /// Descriptor at an integer position, clamped to the grid.
    #[inline]
    pub fn at_clamped(&self, p: [isize; 3]) -> &Descriptor {
        let d = self.geometry.dims();
        let c = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        self.at(c(p[0], d[0]), c(p[1], d[1]), c(p[2], d[2]))
    }

    /// Channel-wise box mean over a `(2r+1)³` neighbourhood (edges
    /// replicated). Matching smoothed descriptors keeps a coarse label grid
    /// from missing correspondences that fall between its labels.
    pub fn smoothed(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let n = self.channels.len();
        let mut out = self.channels.clone();
        let mut buf = vec![0.0f64; n];
        let mut tmp = vec![0.0f64; n];
        let side = (2 * radius + 1) as f64;
        let norm = 1.0 / (side * side * side);
        for c in 0..CHANNELS {
            for (b, d) in buf.iter_mut().zip(&self.channels) {
                *b = d[c] as f64;
            }
            box_sum(&mut buf, &mut tmp, &self.geometry, radius);
            for (o, b) in out.iter_mut().zip(&buf) {
                o[c] = (b * norm) as f32;
            }
        }
        Self {
            geometry: self.geometry.clone(),
            channels: out,
        }
    }

    /// Channel-wise trilinear interpolation, clamped to the grid.
    pub fn sample_trilinear(&self, p: Vec3) -> Descriptor {
        let dims = self.geometry.dims();
        let mut base = [0usize; 3];
        let mut next = [0usize; 3];
        let mut frac = [0.0f32; 3];
        for a in 0..3 {
            let c = snap(p[a]).clamp(0.0, dims[a] as f64 - 1.0);
            let f = math::floor(c);
            base[a] = f as usize;
            frac[a] = (c - f) as f32;
            next[a] = (base[a] + 1).min(dims[a] - 1);
        }
        let mut out = [0.0f32; CHANNELS];
        for corner in 0..8 {
            let pick = |a: usize| if corner >> a & 1 == 1 { next[a] } else { base[a] };
            let w: f32 = (0..3)
                .map(|a| if corner >> a & 1 == 1 { frac[a] } else { 1.0 - frac[a] })
                .product();
            if w == 0.0 {
                continue;
            }
            let d = self.at(pick(0), pick(1), pick(2));
            for c in 0..CHANNELS {
                out[c] += w * d[c];
            }
        }
        out
    }
}

/// L1 distance between descriptor channel vectors.
#[inline]
pub fn descriptor_distance(a: &Descriptor, b: &Descriptor) -> f32 {
    let mut s = 0.0f32;
    for c in 0..CHANNELS {
        s += (a[c] - b[c]).abs();
    }
    s
}

pub fn compute_ssc(vol: &ImageVolume, params: &DescriptorParams) -> Result<SscDescriptorVolume> {
    params.validate()?;
    let geom = vol.geometry().clone();
    let dims = geom.dims();
    let reach = 2 * (params.patch_radius + params.offset);
    if dims.iter().any(|&n| n <= reach) {
        return Err(Error::InsufficientExtent(format!(
            "volume {dims:?} must exceed {reach} voxels per axis for the descriptor"
        )));
    }
    let n = geom.len();
    let nbrs = params.neighborhood();
    let data = vol.data();
    let at = |p: [isize; 3]| -> f64 {
        let c = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        data[geom.offset(c(p[0], dims[0]), c(p[1], dims[1]), c(p[2], dims[2]))] as f64
    };

    let mut channels = vec![[0.0f32; CHANNELS]; n];
    let mut sq = vec![0.0f64; n];
    let mut tmp = vec![0.0f64; n];
    for (c, &(a, b)) in PAIRS.iter().enumerate() {
        let (pa, pb) = (nbrs[a], nbrs[b]);
        for (off, out) in sq.iter_mut().enumerate() {
            let [i, j, k] = geom.index_of(off);
            let v = [i as isize, j as isize, k as isize];
            let d = at([v[0] + pa[0], v[1] + pa[1], v[2] + pa[2]]) - at([v[0] + pb[0], v[1] + pb[1], v[2] + pb[2]]);
            *out = d * d;
        }
        box_sum(&mut sq, &mut tmp, &geom, params.patch_radius);
        for (ch, s) in channels.iter_mut().zip(&sq) {
            ch[c] = *s as f32;
        }
    }

    let global_q2 = match params.noise {
        NoiseRule::GlobalMean => {
            let total: f64 = channels
                .iter()
                .map(|ch| ch.iter().map(|&s| s as f64).sum::<f64>())
                .sum();
            Some((total / (n * CHANNELS) as f64).max(NOISE_FLOOR))
        }
        NoiseRule::PairMean => None,
    };
    for ch in channels.iter_mut() {
        let q2 = global_q2.unwrap_or_else(|| {
            let mean = ch.iter().map(|&s| s as f64).sum::<f64>() / CHANNELS as f64;
            mean.max(NOISE_FLOOR)
        });
        for s in ch.iter_mut() {
            let v = math::exp(-(*s as f64) / q2) as f32;
            *s = v.max(f32::MIN_POSITIVE);
        }
    }
    Ok(SscDescriptorVolume {
        geometry: geom,
        channels,
    })
}

/// Separable cubic box sum of half-width `r` with clamped borders. Each output
/// sums its window in a fixed order, so translated inputs give bit-identical
/// interior outputs.
fn box_sum(buf: &mut [f64], tmp: &mut [f64], geom: &GridGeometry, r: usize) {
    let dims = geom.dims();
    let strides = [1usize, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis] as isize;
        let stride = strides[axis];
        for (off, out) in tmp.iter_mut().enumerate() {
            let pos = (off / stride % dims[axis]) as isize;
            let base = off - pos as usize * stride;
            let mut s = 0.0;
            for t in -(r as isize)..=r as isize {
                let q = (pos + t).clamp(0, n - 1) as usize;
                s += buf[base + q * stride];
            }
            *out = s;
        }
        buf.copy_from_slice(tmp);
    }
}

/// Mean descriptor distance between two descriptor volumes on one grid.
pub fn mean_distance(a: &SscDescriptorVolume, b: &SscDescriptorVolume, metric: DistanceMetric) -> Result<f64> {
    if a.geometry.dims() != b.geometry.dims() {
        return Err(Error::Shape(format!(
            "descriptor grids differ: {:?} vs {:?}",
            a.geometry.dims(),
            b.geometry.dims()
        )));
    }
    let total: f64 = a
        .channels
        .iter()
        .zip(&b.channels)
        .map(|(x, y)| metric.eval(x, y) as f64)
        .sum();
    Ok(total / a.channels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Volume, AIR_HU};

    fn textured(dims: [usize; 3], shift: [usize; 3]) -> ImageVolume {
        Volume::from_fn(GridGeometry::unit(dims), AIR_HU, |[i, j, k]| {
            let (x, y, z) = ((i + shift[0]) as f64, (j + shift[1]) as f64, (k + shift[2]) as f64);
            (100.0 * libm::sin(0.7 * x) * libm::cos(0.4 * y) + 30.0 * libm::sin(0.9 * z + 0.3 * x)) as f32
        })
    }

    #[test]
    fn constant_volume_is_all_ones() {
        let v = Volume::filled(GridGeometry::unit([12, 12, 12]), 40.0, AIR_HU);
        let d = compute_ssc(&v, &DescriptorParams::default()).unwrap();
        assert!(d.channels().iter().all(|ch| ch.iter().all(|&c| c == 1.0)));
    }

    #[test]
    fn integer_shift_gives_matching_interior() {
        let p = DescriptorParams::default();
        let a = compute_ssc(&textured([20, 20, 20], [0, 0, 0]), &p).unwrap();
        let b = compute_ssc(&textured([20, 20, 20], [2, 1, 3]), &p).unwrap();
        // b(x) sees a(x + shift); compare away from clamped borders
        for k in 3..14 {
            for j in 3..14 {
                for i in 3..14 {
                    let da = a.at(i + 2, j + 1, k + 3);
                    let db = b.at(i, j, k);
                    for c in 0..CHANNELS {
                        assert!((da[c] - db[c]).abs() < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn additive_offset_is_ignored() {
        let p = DescriptorParams::default();
        let v = textured([14, 13, 12], [0, 0, 0]);
        let shifted = v.map(AIR_HU, |x| x + 100.0);
        let a = compute_ssc(&v, &p).unwrap();
        let b = compute_ssc(&shifted, &p).unwrap();
        for (x, y) in a.channels().iter().zip(b.channels()) {
            for c in 0..CHANNELS {
                assert!((x[c] - y[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn too_small_volume_is_rejected() {
        let v = Volume::filled(GridGeometry::unit([6, 20, 20]), 0.0, AIR_HU);
        assert!(matches!(
            compute_ssc(&v, &DescriptorParams::default()),
            Err(Error::InsufficientExtent(_))
        ));
    }

    #[test]
    fn distance_examples() {
        let a = [1.0f32; CHANNELS];
        let b = [0.5f32; CHANNELS];
        assert_eq!(descriptor_distance(&a, &a), 0.0);
        assert_eq!(descriptor_distance(&a, &b), 6.0);
    }

    #[test]
    fn pairs_exclude_opposites() {
        let p = DescriptorParams::default();
        let n = p.neighborhood();
        for &(a, b) in &PAIRS {
            let sum: isize = (0..3).map(|x| (n[a][x] + n[b][x]).abs()).sum();
            assert_ne!(sum, 0, "pair ({a},{b}) is opposite");
        }
    }
}
