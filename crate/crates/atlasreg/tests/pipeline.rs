//! Batch pipeline, evaluation and ablation behaviour on small phantom cohorts.

use std::fs;
use std::path::Path;

use atlasreg::config::{CropSetting, PipelineConfig, SubjectEntry};
use atlasreg::io::write_affine;
use atlasreg::pipeline::{run_ablation, run_eval, run_pipeline, QaFlag};
use atlasreg::{nifti, synth, Error};
use atlasreg_core::affine::AffineTransform;
use atlasreg_core::field::DisplacementField;
use atlasreg_core::phantom::CohortSpec;
use atlasreg_core::volume::Volume;

fn cohort(dir: &Path, n: usize, seed: u64) -> PipelineConfig {
    synth::write_cohort(dir, &CohortSpec::new([32; 3], [3.0; 3], seed), n).unwrap()
}

#[test]
fn atlas_registered_to_itself_reproduces_the_atlas() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = cohort(dir.path(), 1, 3);
    config.subjects[0].image = config.atlas.clone();
    config.subjects[0].labels = None;
    let out = run_pipeline(&config).unwrap();
    let result = &out.summary.results[0];
    assert_eq!(result.qa_flag, QaFlag::Pass, "similarity {}", result.similarity);
    let atlas = nifti::read_volume(&config.atlas).unwrap();
    let bundle = &out.bundles[0];
    let worst = atlas
        .data()
        .iter()
        .zip(bundle.mean.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(worst <= 1e-5, "mean differs from the atlas by {worst}");
    assert!(bundle.variance.is_none());
    assert!(out.summary.atlases[0].variance.is_none());
}

#[test]
fn a_corrupt_subject_is_recorded_and_the_rest_proceed() {
    let dir = tempfile::tempdir().unwrap();
    let config = cohort(dir.path(), 5, 4);
    fs::write(&config.subjects[2].image, b"not a volume").unwrap();
    let out = run_pipeline(&config).unwrap();
    assert_eq!(out.summary.results.len(), 4);
    assert_eq!(out.summary.failures.len(), 1);
    assert_eq!(out.summary.failures[0].id, "s02");
    assert_eq!(out.bundles[0].subject_ids.len(), 4);
    assert!(!out.bundles[0].subject_ids.contains(&"s02".to_string()));
}

#[test]
fn unreadable_atlas_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = cohort(dir.path(), 1, 3);
    config.atlas = dir.path().join("missing.nii.gz");
    assert!(run_pipeline(&config).unwrap_err().is_config());
}

#[test]
fn reruns_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = cohort(dir.path(), 2, 6);
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    config.out_dir = first.clone();
    run_pipeline(&config).unwrap();
    config.out_dir = second.clone();
    run_pipeline(&config).unwrap();
    let phase = config.subjects[0].phase.as_str();
    for rel in [
        format!("atlas/{phase}/mean.nii.gz"),
        format!("atlas/{phase}/variance.nii.gz"),
        format!("atlas/{phase}/labels.nii.gz"),
        "subjects/s00/affine.txt".into(),
        "subjects/s01/field.nii.gz".into(),
    ] {
        assert_eq!(
            fs::read(first.join(&rel)).unwrap(),
            fs::read(second.join(&rel)).unwrap(),
            "{rel}"
        );
    }
}

/// A cohort whose subjects are the atlas labels shifted by `shift` voxels,
/// with matching translation transforms and zero fields written to disk.
fn translated_eval_config(dir: &Path, n: usize, shift: [usize; 3]) -> PipelineConfig {
    let mut config = cohort(dir, n, 8);
    let atlas = nifti::read_volume(&config.atlas).unwrap();
    let labels = nifti::read_labels(config.atlas_labels.as_ref().unwrap()).unwrap();
    let geom = labels.geometry().clone();
    let dims = geom.dims();
    let truth = Volume::from_fn(geom.clone(), 0, |[i, j, k]| {
        let (a, b, c) = (i + shift[0], j + shift[1], k + shift[2]);
        if a < dims[0] && b < dims[1] && c < dims[2] {
            labels.get(a, b, c)
        } else {
            0
        }
    });
    let spacing = geom.spacing();
    let t = [0, 1, 2].map(|d| shift[d] as f64 * spacing[d]);
    for s in &mut config.subjects {
        let sub = config.out_dir.join("subjects").join(&s.id);
        fs::create_dir_all(&sub).unwrap();
        let labels_path = dir.join(format!("{}_shifted.nii.gz", s.id));
        nifti::write_labels(&truth, &labels_path).unwrap();
        s.labels = Some(labels_path);
        write_affine(&sub.join("affine.txt"), &AffineTransform::translation(t)).unwrap();
        nifti::write_field(
            &DisplacementField::zeros(atlas.geometry().clone()),
            sub.join("field.nii.gz"),
        )
        .unwrap();
    }
    config
}

#[test]
fn identity_transforms_give_perfect_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let config = translated_eval_config(dir.path(), 2, [0; 3]);
    let outcome = run_eval(&config).unwrap();
    assert!(outcome.failures.is_empty());
    let report = outcome.report.unwrap();
    assert_eq!(report.records.len(), 2 * config.organs.as_ref().unwrap().len());
    for r in &report.records {
        assert_eq!(r.dice, 1.0, "{} {}", r.subject, r.organ);
    }
}

#[test]
fn known_translation_is_undone_by_label_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let config = translated_eval_config(dir.path(), 1, [2, 1, 3]);
    let report = run_eval(&config).unwrap().report.unwrap();
    for r in &report.records {
        assert!(r.dice >= 0.99, "{}: Dice {}", r.organ, r.dice);
    }
}

#[test]
fn missing_field_file_is_a_subject_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = translated_eval_config(dir.path(), 3, [0; 3]);
    fs::remove_file(config.field_path(&config.subjects[1])).unwrap();
    let outcome = run_eval(&config).unwrap();
    assert_eq!(outcome.failures.len(), 1);
    assert_eq!(outcome.failures[0].id, "s01");
    let report = outcome.report.unwrap();
    assert!(report.records.iter().all(|r| r.subject != "s01"));
    assert_eq!(report.records.len(), 2 * config.organs.as_ref().unwrap().len());
}

#[test]
fn ablation_of_one_range_on_one_subject_has_one_row_per_organ() {
    let dir = tempfile::tempdir().unwrap();
    let config = cohort(dir.path(), 1, 2);
    let table = run_ablation(&config, &[CropSetting::default()]).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].organ_dice.len(), config.organs.as_ref().unwrap().len());
}

#[test]
fn ablation_rejects_empty_ranges_and_missing_labels() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = cohort(dir.path(), 1, 2);
    assert!(matches!(run_ablation(&config, &[]), Err(Error::Config(_))));
    config.subjects[0].labels = None;
    assert!(matches!(
        run_ablation(&config, &[CropSetting::FULL]),
        Err(Error::Config(_))
    ));
    config.subjects = vec![SubjectEntry {
        labels: Some("x.nii".into()),
        ..config.subjects[0].clone()
    }];
    config.atlas_labels = None;
    assert!(matches!(
        run_ablation(&config, &[CropSetting::FULL]),
        Err(Error::Config(_))
    ));
}
