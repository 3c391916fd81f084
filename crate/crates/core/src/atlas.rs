//! Cohort aggregation into atlas products: voxel-wise mean, normalised
//! log-variance and majority-vote label fusion.
//!
//! Every product is built from an accumulator that can be fed one subject at
//! a time and merged with other accumulators, so sharded reductions give the
//! same result as a sequential pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::GridGeometry;
use crate::math;
use crate::transform::check_same_grid;
use crate::volume::{ImageVolume, LabelVolume, Volume};

/// Running sums for mean and variance maps.
///
/// Sums are kept in `f64`; merging shards changes only the addition order,
/// which moves results by far less than `1e-6` for any realistic cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityAccumulator {
    geometry: GridGeometry,
    count: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl IntensityAccumulator {
    pub fn new(geometry: GridGeometry) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            count: 0,
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, vol: &ImageVolume) -> Result<()> {
        check_same_grid(&self.geometry, vol.geometry(), "atlas input")?;
        for ((s, q), &v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(vol.data()) {
            let v = v as f64;
            *s += v;
            *q += v * v;
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        check_same_grid(&self.geometry, &other.geometry, "atlas input")?;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn mean(&self) -> Result<ImageVolume> {
        if self.count == 0 {
            return Err(Error::EmptyInput("no volumes accumulated"));
        }
        let n = self.count as f64;
        let data = self.sum.iter().map(|s| (s / n) as f32).collect();
        Volume::new(self.geometry.clone(), data, crate::volume::AIR_HU)
    }

    /// Normalised `log(1 + v)` of the population variance.
    pub fn variance(&self) -> Result<ImageVolume> {
        if self.count < 2 {
            return Err(Error::InsufficientCohort {
                needed: 2,
                got: self.count,
            });
        }
        let n = self.count as f64;
        let logs: Vec<f64> = self
            .sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| {
                let m = s / n;
                math::ln_1p((q / n - m * m).max(0.0))
            })
            .collect();
        Ok(normalized(&self.geometry, logs))
    }
}

fn normalized(geometry: &GridGeometry, logs: Vec<f64>) -> ImageVolume {
    let max = logs.iter().cloned().fold(0.0f64, f64::max);
    let data = if max > 0.0 {
        logs.iter().map(|l| (l / max) as f32).collect()
    } else {
        vec![0.0; logs.len()]
    };
    Volume::new(geometry.clone(), data, 0.0).expect("sizes match")
}

fn common_geometry<T: crate::volume::Voxel>(volumes: &[Volume<T>]) -> Result<&GridGeometry> {
    let first = volumes.first().ok_or(Error::EmptyInput("no volumes given"))?;
    for v in &volumes[1..] {
        check_same_grid(first.geometry(), v.geometry(), "atlas input")?;
    }
    Ok(first.geometry())
}

/// Voxel-wise arithmetic mean.
pub fn mean_map(volumes: &[ImageVolume]) -> Result<ImageVolume> {
    let geometry = common_geometry(volumes)?;
    let mut acc = IntensityAccumulator::new(geometry.clone());
    for v in volumes {
        acc.add(v)?;
    }
    acc.mean()
}

/// Voxel-wise population variance about `mean`, log-scaled as `log(1 + v)`
/// and divided by its global maximum (all zeros if the maximum is zero).
pub fn variance_map(volumes: &[ImageVolume], mean: &ImageVolume) -> Result<ImageVolume> {
    if volumes.len() < 2 {
        return Err(Error::InsufficientCohort {
            needed: 2,
            got: volumes.len(),
        });
    }
    for v in volumes {
        check_same_grid(mean.geometry(), v.geometry(), "atlas input")?;
    }
    let n = volumes.len() as f64;
    let mut var = vec![0.0f64; mean.data().len()];
    for v in volumes {
        for ((acc, &x), &m) in var.iter_mut().zip(v.data()).zip(mean.data()) {
            let d = x as f64 - m as f64;
            *acc += d * d;
        }
    }
    let logs = var.into_iter().map(|s| math::ln_1p(s / n)).collect();
    Ok(normalized(mean.geometry(), logs))
}

/// Per-voxel label vote counts.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteAccumulator {
    geometry: GridGeometry,
    count: usize,
    /// Sorted `(label, votes)` pairs per voxel.
    votes: Vec<Vec<(u16, u32)>>,
}

impl VoteAccumulator {
    pub fn new(geometry: GridGeometry) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            count: 0,
            votes: vec![Vec::new(); n],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, labels: &LabelVolume) -> Result<()> {
        check_same_grid(&self.geometry, labels.geometry(), "atlas input")?;
        for (slot, &l) in self.votes.iter_mut().zip(labels.data()) {
            bump(slot, l, 1);
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        check_same_grid(&self.geometry, &other.geometry, "atlas input")?;
        for (slot, theirs) in self.votes.iter_mut().zip(&other.votes) {
            for &(l, c) in theirs {
                bump(slot, l, c);
            }
        }
        self.count += other.count;
        Ok(())
    }

    /// Most frequent label per voxel; ties go to the smaller label id.
    pub fn fused(&self) -> Result<LabelVolume> {
        if self.count == 0 {
            return Err(Error::EmptyInput("no label volumes accumulated"));
        }
        let data = self
            .votes
            .iter()
            .map(|slot| {
                // slots are sorted by label, so a strict comparison keeps the smallest id on ties
                slot.iter()
                    .fold((0u16, 0u32), |best, &(l, c)| if c > best.1 { (l, c) } else { best })
                    .0
            })
            .collect();
        Volume::new(self.geometry.clone(), data, 0)
    }
}

fn bump(slot: &mut Vec<(u16, u32)>, label: u16, by: u32) {
    match slot.binary_search_by_key(&label, |&(l, _)| l) {
        Ok(i) => slot[i].1 += by,
        Err(i) => slot.insert(i, (label, by)),
    }
}

/// Per-voxel mode of a stack of label volumes, ties broken to the smaller id.
pub fn fuse_labels_majority(label_volumes: &[LabelVolume]) -> Result<LabelVolume> {
    let geometry = common_geometry(label_volumes)?;
    let mut acc = VoteAccumulator::new(geometry.clone());
    for v in label_volumes {
        acc.add(v)?;
    }
    acc.fused()
}

/// Contrast phase of a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    NonContrast,
    Arterial,
    PortalVenous,
    Delayed,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::NonContrast, Phase::Arterial, Phase::PortalVenous, Phase::Delayed];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::NonContrast => "non-contrast",
            Phase::Arterial => "arterial",
            Phase::PortalVenous => "portal-venous",
            Phase::Delayed => "delayed",
        }
    }
}

/// Atlas products of one phase; all volumes share one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasBundle {
    pub mean: ImageVolume,
    /// `None` for a single-subject cohort.
    pub variance: Option<ImageVolume>,
    /// `None` when no subject carried labels.
    pub fused_labels: Option<LabelVolume>,
    pub phase: Phase,
    pub subject_ids: Vec<alloc::string::String>,
}

/// Builds the atlas products that the cohort supports: the mean always, the
/// variance map from two volumes on, the fused labels when any are given.
pub fn build_atlas(
    phase: Phase,
    subject_ids: Vec<alloc::string::String>,
    images: &[ImageVolume],
    labels: &[LabelVolume],
) -> Result<AtlasBundle> {
    let mean = mean_map(images)?;
    let variance = match variance_map(images, &mean) {
        Ok(v) => Some(v),
        Err(Error::InsufficientCohort { .. }) => None,
        Err(e) => return Err(e),
    };
    let fused_labels = if labels.is_empty() {
        None
    } else {
        let fused = fuse_labels_majority(labels)?;
        check_same_grid(mean.geometry(), fused.geometry(), "atlas input")?;
        Some(fused)
    };
    Ok(AtlasBundle {
        mean,
        variance,
        fused_labels,
        phase,
        subject_ids,
    })
}

/// Sum over voxels of the central-difference gradient magnitude (per-mm);
/// sharper averages score higher.
pub fn total_gradient_magnitude(vol: &ImageVolume) -> f64 {
    let [nx, ny, nz] = vol.dims();
    let sp = vol.geometry().spacing();
    let mut total = 0.0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = [i, j, k];
                let mut g2 = 0.0;
                for a in 0..3 {
                    let n = vol.dims()[a];
                    if n < 2 {
                        continue;
                    }
                    let mut lo = idx;
                    let mut hi = idx;
                    lo[a] = idx[a].saturating_sub(1);
                    hi[a] = (idx[a] + 1).min(n - 1);
                    let d = (vol.get(hi[0], hi[1], hi[2]) - vol.get(lo[0], lo[1], lo[2])) as f64
                        / ((hi[a] - lo[a]) as f64 * sp[a]);
                    g2 += d * d;
                }
                total += math::sqrt(g2);
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f32) -> ImageVolume {
        Volume::filled(GridGeometry::unit([3, 3, 3]), v, -1024.0)
    }

    #[test]
    fn mean_of_two_constants() {
        let m = mean_map(&[img(0.0), img(10.0)]).unwrap();
        assert!(m.data().iter().all(|&v| v == 5.0));
        assert!(matches!(mean_map(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn variance_single_voxel_difference() {
        let a = img(3.0);
        let mut b = img(3.0);
        b.data_mut()[13] = 7.0;
        let vols = [a, b];
        let m = mean_map(&vols).unwrap();
        let v = variance_map(&vols, &m).unwrap();
        for (i, &x) in v.data().iter().enumerate() {
            assert_eq!(x, if i == 13 { 1.0 } else { 0.0 });
        }
        assert!(matches!(
            variance_map(&vols[..1], &m),
            Err(Error::InsufficientCohort { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn identical_volumes_have_zero_variance() {
        let vols = [img(4.0), img(4.0), img(4.0)];
        let m = mean_map(&vols).unwrap();
        assert_eq!(m, img(4.0).with_padding(crate::volume::AIR_HU));
        assert!(variance_map(&vols, &m).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn majority_examples() {
        let g = GridGeometry::unit([1, 1, 1]);
        let l = |v: u16| Volume::filled(g.clone(), v, 0);
        assert_eq!(fuse_labels_majority(&[l(1), l(1), l(2)]).unwrap().data(), &[1]);
        assert_eq!(fuse_labels_majority(&[l(2), l(1)]).unwrap().data(), &[1]);
        assert_eq!(fuse_labels_majority(&[l(3), l(0)]).unwrap().data(), &[0]);
    }

    #[test]
    fn merged_shards_match_sequential() {
        let vols: Vec<ImageVolume> = (0..5)
            .map(|s| {
                Volume::from_fn(GridGeometry::unit([4, 3, 2]), -1024.0, |[i, j, k]| {
                    (i * s + j + k * s * s) as f32
                })
            })
            .collect();
        let mut a = IntensityAccumulator::new(GridGeometry::unit([4, 3, 2]));
        let mut b = a.clone();
        for v in &vols[..2] {
            a.add(v).unwrap();
        }
        for v in &vols[2..] {
            b.add(v).unwrap();
        }
        a.merge(&b).unwrap();
        let seq = mean_map(&vols).unwrap();
        for (x, y) in a.mean().unwrap().data().iter().zip(seq.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        let var_seq = variance_map(&vols, &seq).unwrap();
        for (x, y) in a.variance().unwrap().data().iter().zip(var_seq.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn single_subject_bundle_skips_variance() {
        let b = build_atlas(Phase::Arterial, vec!["s".into()], &[img(2.0)], &[]).unwrap();
        assert!(b.variance.is_none() && b.fused_labels.is_none());
        assert!(b.mean.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        assert_eq!(total_gradient_magnitude(&img(5.0)), 0.0);
    }
}
