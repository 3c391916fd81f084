//! Overlap and surface-distance metrics between binary masks.
//!
//! Masks are label volumes where any non-zero voxel is foreground; use
//! [`organ_mask`] to extract one organ id from a multi-label volume.

use alloc::vec::Vec;

use crate::dt::{self, Scratch};
use crate::error::{Error, Result};
use crate::math;
use crate::transform::check_same_grid;
use crate::volume::LabelVolume;

/// Binary mask (`1` where `labels == id`).
pub fn organ_mask(labels: &LabelVolume, id: u16) -> LabelVolume {
    labels.map(0, |l| u16::from(l == id))
}

/// Dice overlap `2|P∩G| / (|P| + |G|)`; 1 when both masks are empty, 0 when
/// exactly one is.
pub fn dice(p: &LabelVolume, g: &LabelVolume) -> Result<f64> {
    check_same_grid(p.geometry(), g.geometry(), "dice")?;
    let (mut np, mut ng, mut both) = (0u64, 0u64, 0u64);
    for (&a, &b) in p.data().iter().zip(g.data()) {
        let (a, b) = (a != 0, b != 0);
        np += u64::from(a);
        ng += u64::from(b);
        both += u64::from(a && b);
    }
    Ok(match (np, ng) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => 2.0 * both as f64 / (np + ng) as f64,
    })
}

/// Foreground voxels with at least one face neighbour outside the mask;
/// neighbours beyond the grid count as outside.
pub fn boundary_voxels(mask: &LabelVolume) -> Vec<bool> {
    let dims = mask.dims();
    let data = mask.data();
    let g = mask.geometry();
    (0..data.len())
        .map(|o| {
            if data[o] == 0 {
                return false;
            }
            let idx = g.index_of(o);
            (0..3).any(|a| {
                let lo = idx[a] == 0 || {
                    let mut n = idx;
                    n[a] -= 1;
                    data[g.offset(n[0], n[1], n[2])] == 0
                };
                let hi = idx[a] + 1 == dims[a] || {
                    let mut n = idx;
                    n[a] += 1;
                    data[g.offset(n[0], n[1], n[2])] == 0
                };
                lo || hi
            })
        })
        .collect()
}

/// Squared distance in mm² from every voxel centre to the nearest marked voxel.
fn squared_edt(marks: &[bool], dims: [usize; 3], spacing: [f64; 3], scratch: &mut Scratch) -> Vec<f64> {
    let mut values: Vec<f64> = marks.iter().map(|&m| if m { 0.0 } else { f64::INFINITY }).collect();
    dt::transform_3d(&mut values, dims, spacing.map(|s| s * s), scratch);
    values
}

/// Symmetric Hausdorff distance in mm between the 6-connected boundary voxel
/// centres of two masks.
pub fn hausdorff(p: &LabelVolume, g: &LabelVolume) -> Result<f64> {
    check_same_grid(p.geometry(), g.geometry(), "hausdorff")?;
    let bp = boundary_voxels(p);
    let bg = boundary_voxels(g);
    if !bp.iter().any(|&b| b) || !bg.iter().any(|&b| b) {
        return Err(Error::UndefinedDistance("hausdorff distance of an empty mask"));
    }
    let dims = p.dims();
    let spacing = p.geometry().spacing();
    let mut scratch = Scratch::default();
    let to_g = squared_edt(&bg, dims, spacing, &mut scratch);
    let to_p = squared_edt(&bp, dims, spacing, &mut scratch);
    let directed = |from: &[bool], dist: &[f64]| {
        from.iter()
            .zip(dist)
            .filter(|(&b, _)| b)
            .fold(0.0f64, |m, (_, &d)| m.max(d))
    };
    let d2 = directed(&bp, &to_g).max(directed(&bg, &to_p));
    Ok(math::sqrt(d2))
}

/// Fraction of voxels whose labels agree; a coarse sanity metric.
pub fn label_agreement(a: &LabelVolume, b: &LabelVolume) -> Result<f64> {
    check_same_grid(a.geometry(), b.geometry(), "label agreement")?;
    let same = a.data().iter().zip(b.data()).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.data().len() as f64)
}

/// Mean Dice over the listed organ ids.
pub fn mean_organ_dice(pred: &LabelVolume, truth: &LabelVolume, organs: &[u16]) -> Result<f64> {
    if organs.is_empty() {
        return Err(Error::EmptyInput("no organ ids"));
    }
    let mut total = 0.0;
    for &id in organs {
        total += dice(&organ_mask(pred, id), &organ_mask(truth, id))?;
    }
    Ok(total / organs.len() as f64)
}
