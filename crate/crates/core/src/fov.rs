//! Field-of-view restriction from per-axial-slice body-position scores.
//!
//! Scores live in `[-12, +12]`: -12 is the upper chest, -5 the diaphragm,
//! +4 the lower retroperitoneum and +6 the pelvis. After canonical
//! reorientation the axial axis is voxel axis 2 and scores decrease toward
//! the head, i.e. with increasing slice index.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::ImageVolume;

pub const AXIAL_AXIS: usize = 2;
pub const SCORE_MIN: f64 = -12.0;
pub const SCORE_MAX: f64 = 12.0;

/// Default crop window: the best-performing range of the cropping ablation.
pub const DEFAULT_LO: f64 = -6.0;
pub const DEFAULT_HI: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Sidecar,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceScoreTrack {
    scores: Vec<f64>,
    source: ScoreSource,
    /// Set when the heuristic found no anatomical anchor and fell back to a
    /// plain ramp over the whole extent.
    insufficient_anatomy: bool,
}

impl SliceScoreTrack {
    /// Validates externally produced scores against the volume they describe.
    pub fn from_scores(scores: Vec<f64>, axial_slices: usize) -> Result<Self> {
        if scores.len() != axial_slices {
            return Err(Error::Shape(format!(
                "{} scores for a volume with {axial_slices} axial slices",
                scores.len()
            )));
        }
        if let Some((i, s)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(**s >= SCORE_MIN && **s <= SCORE_MAX))
        {
            return Err(Error::Validation(format!(
                "slice {i} has score {s}, outside [{SCORE_MIN}, {SCORE_MAX}]"
            )));
        }
        Ok(Self {
            scores,
            source: ScoreSource::Sidecar,
            insufficient_anatomy: false,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn source(&self) -> ScoreSource {
        self.source
    }

    pub fn insufficient_anatomy(&self) -> bool {
        self.insufficient_anatomy
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// The scores of slices `[first, last]`, e.g. to pair with a cropped volume.
    pub fn restrict(&self, record: &CropRecord) -> Self {
        Self {
            scores: self.scores[record.first_slice..=record.last_slice].to_vec(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropRecord {
    pub first_slice: usize,
    /// Inclusive.
    pub last_slice: usize,
    pub lo: f64,
    pub hi: f64,
}

impl CropRecord {
    pub fn n_slices(&self) -> usize {
        self.last_slice - self.first_slice + 1
    }
}

// Heuristic estimator thresholds (HU).
const LUNG_LO: f32 = -950.0;
const LUNG_HI: f32 = -400.0;
const BONE_HU: f32 = 250.0;
const MIN_LUNG_FRACTION: f64 = 0.02;
const MIN_BONE_FRACTION: f64 = 0.005;
const DIAPHRAGM_SCORE: f64 = -5.0;
const PELVIS_SCORE: f64 = 6.0;
/// Approximate craniocaudal extent of one score unit in an adult.
const MM_PER_SCORE: f64 = 25.0;

/// Approximate slice scores from lung-air and bone profiles.
///
/// The inferior edge of the lungs anchors the diaphragm score; without lungs
/// the densest bony slice in the inferior half anchors the pelvis score. The
/// track is a linear ramp through the anchor at a fixed mm-per-score scale,
/// so it is strictly monotone until it saturates at the range ends. With no
/// anchor at all the whole extent maps onto `[-12, +12]` and the track is
/// flagged as anatomically insufficient.
pub fn estimate_scores(vol: &ImageVolume) -> Result<SliceScoreTrack> {
    let [nx, ny, nz] = vol.dims();
    if nz <= 3 {
        return Err(Error::InsufficientExtent(format!(
            "{nz} axial slices; score estimation needs at least 4"
        )));
    }
    let area = (nx * ny) as f64;
    let mut lung = Vec::with_capacity(nz);
    let mut bone = Vec::with_capacity(nz);
    for k in 0..nz {
        let (mut l, mut b) = (0usize, 0usize);
        for j in 0..ny {
            for i in 0..nx {
                let v = vol.get(i, j, k);
                if (LUNG_LO..=LUNG_HI).contains(&v) {
                    l += 1;
                } else if v >= BONE_HU {
                    b += 1;
                }
            }
        }
        lung.push(l as f64 / area);
        bone.push(b as f64 / area);
    }

    let dz = vol.geometry().spacing()[AXIAL_AXIS];
    let ramp_through = |anchor: usize, value: f64| -> Vec<f64> {
        (0..nz)
            .map(|k| {
                let s = value - (k as f64 - anchor as f64) * dz / MM_PER_SCORE;
                s.clamp(SCORE_MIN, SCORE_MAX)
            })
            .collect()
    };

    let max_lung = lung.iter().cloned().fold(0.0, f64::max);
    if max_lung >= MIN_LUNG_FRACTION {
        let diaphragm = lung.iter().position(|&l| l >= 0.5 * max_lung).unwrap_or(0);
        return Ok(heuristic(ramp_through(diaphragm, DIAPHRAGM_SCORE), false));
    }

    let inferior = &bone[..nz / 2];
    let (pelvis, peak) = inferior
        .iter()
        .enumerate()
        .fold((0, 0.0), |best, (k, &b)| if b > best.1 { (k, b) } else { best });
    if peak >= MIN_BONE_FRACTION {
        return Ok(heuristic(ramp_through(pelvis, PELVIS_SCORE), false));
    }

    let step = (SCORE_MAX - SCORE_MIN) / (nz - 1) as f64;
    let scores = (0..nz).map(|k| SCORE_MAX - k as f64 * step).collect();
    Ok(heuristic(scores, true))
}

fn heuristic(scores: Vec<f64>, insufficient_anatomy: bool) -> SliceScoreTrack {
    SliceScoreTrack {
        scores,
        source: ScoreSource::Heuristic,
        insufficient_anatomy,
    }
}

/// Longest contiguous run of slices with scores inside `[lo, hi]`; ties go to
/// the earlier run.
pub fn select_slices(track: &SliceScoreTrack, lo: f64, hi: f64) -> Result<CropRecord> {
    if !(lo < hi) {
        return Err(Error::Validation(format!("crop range [{lo}, {hi}] is empty")));
    }
    let mut best: Option<(usize, usize)> = None;
    let mut run_start: Option<usize> = None;
    let n = track.len();
    for k in 0..=n {
        let inside = k < n && (lo..=hi).contains(&track.scores[k]);
        match (inside, run_start) {
            (true, None) => run_start = Some(k),
            (false, Some(start)) => {
                let len = k - start;
                if best.is_none_or(|(_, l)| len > l) {
                    best = Some((start, len));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    let (first, len) = best.ok_or(Error::EmptyCrop { lo, hi })?;
    Ok(CropRecord {
        first_slice: first,
        last_slice: first + len - 1,
        lo,
        hi,
    })
}

/// Keeps the slices whose score lies in `[lo, hi]`.
pub fn crop_by_score(
    vol: &ImageVolume,
    track: &SliceScoreTrack,
    lo: f64,
    hi: f64,
) -> Result<(ImageVolume, CropRecord)> {
    let nz = vol.dims()[AXIAL_AXIS];
    if track.len() != nz {
        return Err(Error::Shape(format!(
            "score track has {} entries for {nz} axial slices",
            track.len()
        )));
    }
    let record = select_slices(track, lo, hi)?;
    let cropped = vol.slab(AXIAL_AXIS, record.first_slice, record.last_slice)?;
    Ok((cropped, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridGeometry;
    use crate::volume::{Volume, AIR_HU};

    fn linear_track() -> SliceScoreTrack {
        let scores = (0..25).map(|k| -12.0 + k as f64).collect();
        SliceScoreTrack::from_scores(scores, 25).unwrap()
    }

    #[test]
    fn linear_track_keeps_six_to_seventeen() {
        let rec = select_slices(&linear_track(), -6.0, 5.0).unwrap();
        assert_eq!((rec.first_slice, rec.last_slice), (6, 17));
        assert_eq!(rec.n_slices(), 12);
    }

    #[test]
    fn whole_track_in_range_is_identity() {
        let vol = Volume::from_fn(GridGeometry::unit([2, 2, 25]), AIR_HU, |[i, j, k]| (i + j + k) as f32);
        let (out, rec) = crop_by_score(&vol, &linear_track(), -12.0, 12.0).unwrap();
        assert_eq!(out, vol);
        assert_eq!((rec.first_slice, rec.last_slice), (0, 24));
    }

    #[test]
    fn all_above_range_is_empty() {
        let track = SliceScoreTrack::from_scores(alloc::vec![8.0; 10], 10).unwrap();
        assert!(matches!(select_slices(&track, -6.0, 5.0), Err(Error::EmptyCrop { .. })));
    }

    #[test]
    fn sidecar_validation() {
        assert!(matches!(
            SliceScoreTrack::from_scores(alloc::vec![0.0; 400], 434),
            Err(Error::Shape(_))
        ));
        let mut s = alloc::vec![0.0; 434];
        s[17] = 14.2;
        assert!(matches!(
            SliceScoreTrack::from_scores(s, 434),
            Err(Error::Validation(_))
        ));
        assert_eq!(
            SliceScoreTrack::from_scores(alloc::vec![0.0; 434], 434).unwrap().len(),
            434
        );
    }

    #[test]
    fn non_monotone_takes_longest_then_earliest() {
        let scores = alloc::vec![0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 9.0, 1.0, 1.0, 1.0];
        let track = SliceScoreTrack::from_scores(scores, 10).unwrap();
        let rec = select_slices(&track, -1.0, 1.0).unwrap();
        assert_eq!((rec.first_slice, rec.last_slice), (3, 5));
    }

    #[test]
    fn lung_atop_abdomen_scores_increase_toward_pelvis() {
        // 40 slices: soft tissue below slice 24, lung-density air above.
        let geom = GridGeometry::unit([16, 16, 40]);
        let vol = Volume::from_fn(geom, AIR_HU, |[i, j, k]| {
            let inside = (4..12).contains(&i) && (4..12).contains(&j);
            match (inside, k >= 24) {
                (true, true) => -800.0,
                (true, false) => 40.0,
                _ => AIR_HU,
            }
        });
        let track = estimate_scores(&vol).unwrap();
        assert_eq!(track.source(), ScoreSource::Heuristic);
        assert!(!track.insufficient_anatomy());
        // walking from the lung slices down to the pelvis, scores strictly rise
        for k in 1..40 {
            assert!(track.scores()[k - 1] > track.scores()[k]);
        }
        assert!((track.scores()[24] - DIAPHRAGM_SCORE).abs() < 1e-12);
    }

    #[test]
    fn all_air_falls_back_to_ramp() {
        let vol = Volume::filled(GridGeometry::unit([4, 4, 9]), AIR_HU, AIR_HU);
        let track = estimate_scores(&vol).unwrap();
        assert!(track.insufficient_anatomy());
        assert_eq!(track.scores()[0], SCORE_MAX);
        assert_eq!(track.scores()[8], SCORE_MIN);
    }

    #[test]
    fn two_slices_is_too_short() {
        let vol = Volume::filled(GridGeometry::unit([4, 4, 2]), 0.0, AIR_HU);
        assert!(matches!(estimate_scores(&vol), Err(Error::InsufficientExtent(_))));
    }
}
