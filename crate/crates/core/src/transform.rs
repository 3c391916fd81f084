//! Applying, composing and inverting spatial transforms.
//!
//! Everything pulls back: an output voxel looks up where it came from in the
//! input. Affine transforms map moving world coordinates onto the fixed image,
//! so resampling evaluates their inverse.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::affine::AffineTransform;
use crate::error::{Error, Result};
use crate::field::{magnitude, DisplacementField, Resolution};
use crate::geometry::GridGeometry;
use crate::linalg::{add3, Vec3};
use crate::volume::{Interp, Interpolate, LabelVolume, Volume};

const GEOMETRY_TOL: f64 = 1e-6;

/// Resamples `vol` onto `target` through `affine`: output voxel at world `x`
/// reads the input at `affine⁻¹(x)`.
pub fn apply_affine<T: Interpolate>(
    vol: &Volume<T>,
    affine: &AffineTransform,
    target: &GridGeometry,
    interp: Interp,
) -> Result<Volume<T>> {
    let pull = target_to_source(affine, target, vol.geometry())?;
    Ok(Volume::from_fn(target.clone(), vol.padding(), |[i, j, k]| {
        T::sample_at(vol, pull.apply([i as f64, j as f64, k as f64]), interp)
    }))
}

/// Target voxel index → source voxel index through `affine⁻¹`.
fn target_to_source(affine: &AffineTransform, target: &GridGeometry, source: &GridGeometry) -> Result<AffineTransform> {
    let inv = affine.inverse()?;
    let src_from_world = AffineTransform::voxel_to_world(source).inverse()?;
    Ok(src_from_world
        .compose(&inv)
        .compose(&AffineTransform::voxel_to_world(target)))
}

pub(crate) fn check_same_grid(a: &GridGeometry, b: &GridGeometry, what: &str) -> Result<()> {
    if !a.approx_eq(b, GEOMETRY_TOL) {
        return Err(Error::Shape(format!(
            "{what}: grid {:?} does not match grid {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Warps a volume that lives on the field's own grid: output voxel `i` reads
/// the input at `i + field(i)`.
pub fn apply_field<T: Interpolate>(vol: &Volume<T>, field: &DisplacementField, interp: Interp) -> Result<Volume<T>> {
    check_same_grid(vol.geometry(), field.geometry(), "apply_field")?;
    Ok(Volume::from_fn(field.geometry().clone(), vol.padding(), |[i, j, k]| {
        let p = add3([i as f64, j as f64, k as f64], field.get(i, j, k));
        T::sample_at(vol, p, interp)
    }))
}

/// Like [`apply_field`] for an input on any grid: the displaced position is
/// taken to world space through the field's geometry, then into the input.
pub fn apply_field_from<T: Interpolate>(
    vol: &Volume<T>,
    field: &DisplacementField,
    interp: Interp,
) -> Result<Volume<T>> {
    let fg = field.geometry();
    let to_src = AffineTransform::voxel_to_world(vol.geometry())
        .inverse()?
        .compose(&AffineTransform::voxel_to_world(fg));
    Ok(Volume::from_fn(fg.clone(), vol.padding(), |[i, j, k]| {
        let p = add3([i as f64, j as f64, k as f64], field.get(i, j, k));
        T::sample_at(vol, to_src.apply(p), interp)
    }))
}

/// Single dense field equivalent to applying `affine` onto `target` and then
/// `field`.
///
/// The result `ψ` lives on `target` in its voxel units; `x + ψ(x)` is the
/// target-grid position whose world coordinate is `affine⁻¹(x + field(x))`.
/// Use [`apply_field_from`] to warp an input on its own grid in one pass.
pub fn compose_affine_field(
    affine: &AffineTransform,
    field: &DisplacementField,
    target: &GridGeometry,
) -> Result<DisplacementField> {
    check_same_grid(target, field.geometry(), "compose_affine_field")?;
    let pull = target_to_source(affine, target, target)?;
    Ok(DisplacementField::from_fn(target.clone(), |[i, j, k]| {
        let x = [i as f64, j as f64, k as f64];
        let y = pull.apply(add3(x, field.get(i, j, k)));
        [y[0] - x[0], y[1] - x[1], y[2] - x[2]]
    }))
}

/// Displacement form of an affine on `target` (the composition with a zero
/// field).
pub fn affine_as_field(affine: &AffineTransform, target: &GridGeometry) -> Result<DisplacementField> {
    compose_affine_field(affine, &DisplacementField::zeros(target.clone()), target)
}

pub const INVERSION_MAX_ITERATIONS: usize = 30;
pub const INVERSION_TOLERANCE: f64 = 0.01;
const DIVERGENCE_STREAK: usize = 5;

/// Residual statistics of an inverse field, `‖f(x + g(x)) + g(x)‖` in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionStats {
    pub iterations: usize,
    pub mean_residual: f64,
    pub max_residual: f64,
}

/// Fixed-point inversion `g ← −f(x + g(x))`, stopping after 30 iterations or
/// once the mean update falls below 0.01 voxel.
pub fn invert_field(field: &DisplacementField) -> Result<(DisplacementField, InversionStats)> {
    let geom = field.geometry().clone();
    let n = geom.len();
    let mut g: Vec<[f32; 3]> = field.vectors().iter().map(|v| v.map(|c| -c)).collect();
    let mut next = g.clone();
    let mut iterations = 1;
    let mut stats = residuals(field, &g);
    let mut worse_streak = 0;
    while iterations < INVERSION_MAX_ITERATIONS {
        let mut update = 0.0;
        for (off, out) in next.iter_mut().enumerate() {
            let [i, j, k] = geom.index_of(off);
            let gv = g[off].map(|c| c as f64);
            let f = field.sample([i as f64 + gv[0], j as f64 + gv[1], k as f64 + gv[2]]);
            let v = f.map(|c| -c as f32);
            update += magnitude(&[v[0] - g[off][0], v[1] - g[off][1], v[2] - g[off][2]]);
            *out = v;
        }
        core::mem::swap(&mut g, &mut next);
        iterations += 1;
        let s = residuals(field, &g);
        if s.0 > stats.0 {
            worse_streak += 1;
        } else {
            worse_streak = 0;
        }
        stats = s;
        if worse_streak >= DIVERGENCE_STREAK {
            return Err(Error::NonInvertibleField {
                iterations,
                mean_residual: stats.0,
                max_residual: stats.1,
            });
        }
        if update / (n as f64) < INVERSION_TOLERANCE {
            break;
        }
    }
    let inverse = DisplacementField::new(geom, g, Resolution::Dense)?;
    Ok((
        inverse,
        InversionStats {
            iterations,
            mean_residual: stats.0,
            max_residual: stats.1,
        },
    ))
}

/// Mean and max of `‖f(x + g(x)) + g(x)‖`.
pub fn inverse_residuals(field: &DisplacementField, inverse: &DisplacementField) -> (f64, f64) {
    residuals(field, inverse.vectors())
}

fn residuals(field: &DisplacementField, g: &[[f32; 3]]) -> (f64, f64) {
    let geom = field.geometry();
    let (mut sum, mut max) = (0.0, 0.0f64);
    for (off, gv) in g.iter().enumerate() {
        let [i, j, k] = geom.index_of(off);
        let gv = gv.map(|c| c as f64);
        let f = field.sample([i as f64 + gv[0], j as f64 + gv[1], k as f64 + gv[2]]);
        let r = [f[0] + gv[0], f[1] + gv[1], f[2] + gv[2]].map(|c| c as f32);
        let m = magnitude(&r);
        sum += m;
        max = max.max(m);
    }
    (sum / g.len() as f64, max)
}

/// Maps atlas labels into a subject's space through the inverse of the
/// subject→atlas registration (`affine` then `field` on the atlas grid).
pub fn transfer_labels_inverse(
    atlas_labels: &LabelVolume,
    affine: &AffineTransform,
    field: &DisplacementField,
    subject_geom: &GridGeometry,
) -> Result<LabelVolume> {
    let (inverse, _) = invert_field(field)?;
    transfer_labels_with_inverse(atlas_labels, affine, &inverse, subject_geom)
}

/// [`transfer_labels_inverse`] with a precomputed inverse field.
///
/// Subject voxel `y` maps to atlas-grid position `z = atlas⁻¹(affine(y))`;
/// the registration matched atlas `x` with `z = x + field(x)`, so the label is
/// read at `x = z + inverse(z)` by nearest neighbour.
pub fn transfer_labels_with_inverse(
    atlas_labels: &LabelVolume,
    affine: &AffineTransform,
    inverse: &DisplacementField,
    subject_geom: &GridGeometry,
) -> Result<LabelVolume> {
    let ag = atlas_labels.geometry();
    check_same_grid(ag, inverse.geometry(), "transfer_labels")?;
    let to_atlas = AffineTransform::voxel_to_world(ag)
        .inverse()?
        .compose(affine)
        .compose(&AffineTransform::voxel_to_world(subject_geom));
    Ok(Volume::from_fn(subject_geom.clone(), 0, |[i, j, k]| {
        let z = to_atlas.apply([i as f64, j as f64, k as f64]);
        let x: Vec3 = add3(z, inverse.sample(z));
        atlas_labels.sample_nearest(x)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{ImageVolume, AIR_HU};

    fn smooth(geom: GridGeometry) -> ImageVolume {
        Volume::from_fn(geom, AIR_HU, |[i, j, k]| {
            (100.0 * libm::sin(0.3 * i as f64) + 50.0 * libm::cos(0.2 * j as f64) + 2.0 * k as f64) as f32
        })
    }

    #[test]
    fn identity_affine_is_identity() {
        let g = GridGeometry::axis_aligned([9, 8, 7], [0.8, 1.0, 1.5], [1.0, 2.0, 3.0]).unwrap();
        let v = smooth(g.clone());
        let out = apply_affine(&v, &AffineTransform::identity(), &g, Interp::Trilinear).unwrap();
        for (a, b) in v.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn translation_by_two_spacings_shifts_two_voxels() {
        let g = GridGeometry::axis_aligned([12, 10, 8], [1.5, 1.0, 2.0], [0.0; 3]).unwrap();
        let v = smooth(g.clone());
        let a = AffineTransform::translation([3.0, 0.0, 0.0]);
        let out = apply_affine(&v, &a, &g, Interp::Trilinear).unwrap();
        for k in 0..8 {
            for j in 0..10 {
                for i in 2..12 {
                    assert_eq!(out.get(i, j, k), v.get(i - 2, j, k));
                }
            }
        }
    }

    #[test]
    fn labels_gain_no_new_values() {
        let g = GridGeometry::unit([10, 10, 10]);
        let labels = Volume::from_fn(g.clone(), 0u16, |[i, j, _]| {
            if i < 4 {
                3
            } else if j > 6 {
                7
            } else {
                0
            }
        });
        let a = AffineTransform::from_params(&crate::affine::AffineParams {
            rotation: [0.2, -0.1, 0.3],
            scale: [1.1, 0.9, 1.0],
            center: [5.0; 3],
            ..crate::affine::AffineParams::identity()
        });
        let out = apply_affine(&labels, &a, &g, Interp::Trilinear).unwrap();
        assert!(out.data().iter().all(|l| [0, 3, 7].contains(l)));
    }

    #[test]
    fn zero_and_uniform_fields() {
        let g = GridGeometry::unit([10, 6, 5]);
        let v = smooth(g.clone());
        let same = apply_field(&v, &DisplacementField::zeros(g.clone()), Interp::Trilinear).unwrap();
        assert_eq!(same, v);
        let shifted = apply_field(
            &v,
            &DisplacementField::uniform(g.clone(), [3.0, 0.0, 0.0]),
            Interp::Trilinear,
        )
        .unwrap();
        for k in 0..5 {
            for j in 0..6 {
                for i in 0..7 {
                    assert_eq!(shifted.get(i, j, k), v.get(i + 3, j, k));
                }
            }
        }
        let away = apply_field(&v, &DisplacementField::uniform(g, [50.0, 0.0, 0.0]), Interp::Trilinear).unwrap();
        assert!(away.data().iter().all(|&x| x == AIR_HU));
    }

    #[test]
    fn apply_field_rejects_other_grid() {
        let v = smooth(GridGeometry::unit([6, 6, 6]));
        let f = DisplacementField::zeros(GridGeometry::unit([6, 6, 5]));
        assert!(matches!(apply_field(&v, &f, Interp::Trilinear), Err(Error::Shape(_))));
    }

    #[test]
    fn compose_with_identity_and_zero() {
        let g = GridGeometry::unit([6, 5, 4]);
        let f = DisplacementField::from_fn(g.clone(), |[i, j, k]| {
            [0.1 * i as f64, -0.2 * j as f64, 0.05 * k as f64]
        });
        let c = compose_affine_field(&AffineTransform::identity(), &f, &g).unwrap();
        for (a, b) in c.vectors().iter().zip(f.vectors()) {
            for d in 0..3 {
                assert!((a[d] - b[d]).abs() < 1e-6);
            }
        }
        let t = AffineTransform::translation([2.0, -1.0, 0.5]);
        let z = affine_as_field(&t, &g).unwrap();
        assert!(z.vectors().iter().all(|v| *v == [-2.0, 1.0, -0.5]));
    }

    #[test]
    fn uniform_field_inverse_is_exact() {
        let g = GridGeometry::unit([8, 8, 8]);
        let (zero_inv, _) = invert_field(&DisplacementField::zeros(g.clone())).unwrap();
        assert!(zero_inv.vectors().iter().all(|v| *v == [0.0; 3]));
        let (inv, stats) = invert_field(&DisplacementField::uniform(g, [1.5, -2.0, 0.25])).unwrap();
        assert!(inv.vectors().iter().all(|v| *v == [-1.5, 2.0, -0.25]));
        assert_eq!(stats.max_residual, 0.0);
    }
}
