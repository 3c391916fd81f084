//! NIfTI-1 reading and writing through real files.

use std::fs;

use atlasreg::{nifti, Error};
use atlasreg_core::field::DisplacementField;
use atlasreg_core::geometry::GridGeometry;
use atlasreg_core::linalg::Mat3;
use atlasreg_core::volume::Volume;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn oblique_geometry() -> GridGeometry {
    let (s, c) = (0.3f64.sin(), 0.3f64.cos());
    let direction: Mat3 = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, -1.0]];
    GridGeometry::new([7, 5, 4], [0.75, 1.25, 2.5], [-10.5, 3.25, 40.0], direction).unwrap()
}

#[test]
fn image_data_round_trips_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let geom = oblique_geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f32> = (0..geom.len()).map(|_| rng.gen_range(-1024.0..3000.0)).collect();
    let vol = Volume::new(geom.clone(), data, -1000.0).unwrap();
    for name in ["v.nii", "v.nii.gz"] {
        let path = dir.path().join(name);
        nifti::write_volume(&vol, &path).unwrap();
        let back = nifti::read_volume(&path).unwrap();
        assert_eq!(back.data(), vol.data(), "{name}");
        assert!(back.geometry().approx_eq(&geom, 1e-5), "{name}");
    }
}

#[test]
fn compression_is_detected_from_content_not_suffix() {
    let dir = tempfile::tempdir().unwrap();
    let vol = Volume::from_fn(GridGeometry::unit([3, 3, 3]), 0.0, |[i, j, k]| {
        (i + 3 * j + 9 * k) as f32
    });
    let gz = dir.path().join("a.nii.gz");
    nifti::write_volume(&vol, &gz).unwrap();
    let renamed = dir.path().join("b.nii");
    fs::copy(&gz, &renamed).unwrap();
    assert_eq!(nifti::read_volume(&renamed).unwrap().data(), vol.data());
}

#[test]
fn labels_round_trip_and_reject_fractional_data() {
    let dir = tempfile::tempdir().unwrap();
    let geom = oblique_geometry();
    let labels = Volume::from_fn(geom.clone(), 0u16, |[i, j, k]| ((i * 7 + j * 3 + k) % 9) as u16 * 1000);
    let path = dir.path().join("l.nii.gz");
    nifti::write_labels(&labels, &path).unwrap();
    assert_eq!(nifti::read_labels(&path).unwrap().data(), labels.data());

    let fractional = Volume::filled(geom, 1.5f32, 0.0);
    let path = dir.path().join("f.nii");
    nifti::write_volume(&fractional, &path).unwrap();
    assert!(nifti::read_labels(&path).is_err());
}

#[test]
fn displacement_fields_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let geom = oblique_geometry();
    let field = DisplacementField::from_fn(geom.clone(), |[i, j, k]| {
        [i as f64 * 0.5 - 1.0, -(j as f64) * 0.25, (k as f64 - 2.0) * 1.5]
    });
    let path = dir.path().join("u.nii.gz");
    nifti::write_field(&field, &path).unwrap();
    let back = nifti::read_field(&path).unwrap();
    assert_eq!(back.vectors(), field.vectors());
    assert!(back.geometry().approx_eq(&geom, 1e-5));
}

#[test]
fn truncated_and_foreign_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.nii");
    fs::write(&path, vec![0u8; 100]).unwrap();
    assert!(matches!(nifti::read_volume(&path), Err(Error::Format { .. })));
    assert!(matches!(
        nifti::read_volume(dir.path().join("absent.nii")),
        Err(Error::Io { .. })
    ));
}
