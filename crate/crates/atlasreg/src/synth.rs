//! Writes synthetic phantom cohorts to disk, ready for the pipeline.

use std::path::Path;

use atlasreg_core::phantom::{score_track, CohortSpec, ORGANS, ORGAN_NAMES};

use crate::config::{parse_levels, Organ, PipelineConfig, SubjectEntry};
use crate::error::Result;
use crate::io::{create_dir, sidecar_path, write_json, write_scores};
use crate::nifti;

/// Schedule for phantoms below 64 voxels per side, as `grid:search:step`.
/// The default schedule's search reach (70 voxels) exceeds such grids.
pub const SMALL_LEVELS: &str = "8:4:3,6:3:2,4:2:1";

/// Writes the atlas, `n` subjects (image, labels, score sidecar) and a
/// `config.json` with relative paths into `dir`; returns the loaded config.
pub fn write_cohort(dir: &Path, spec: &CohortSpec, n: usize) -> Result<PipelineConfig> {
    create_dir(dir)?;
    let (atlas, atlas_labels) = spec.atlas();
    nifti::write_volume(&atlas, dir.join("atlas.nii.gz"))?;
    nifti::write_labels(&atlas_labels, dir.join("atlas_labels.nii.gz"))?;
    write_scores(
        &sidecar_path(&dir.join("atlas.nii.gz")),
        &score_track(&spec.model(), atlas.geometry()),
    )?;
    let mut subjects = Vec::with_capacity(n);
    for (i, s) in spec.subjects(n).into_iter().enumerate() {
        let id = format!("s{i:02}");
        let image = format!("{id}.nii.gz");
        let labels = format!("{id}_labels.nii.gz");
        nifti::write_volume(&s.image, dir.join(&image))?;
        nifti::write_labels(&s.labels, dir.join(&labels))?;
        write_scores(&sidecar_path(&dir.join(&image)), &s.scores)?;
        subjects.push(SubjectEntry {
            id,
            image: image.into(),
            labels: Some(labels.into()),
            scores: None,
            phase: spec.phase,
            affine: None,
            field: None,
        });
    }
    let mut config = PipelineConfig::new("atlas.nii.gz".into(), subjects, "out".into());
    config.atlas_labels = Some("atlas_labels.nii.gz".into());
    if spec.dims.iter().any(|&d| d < 64) {
        config.levels = parse_levels(SMALL_LEVELS, config.levels.alpha)?;
    }
    config.organs = Some(
        ORGANS
            .iter()
            .zip(ORGAN_NAMES)
            .map(|(&id, name)| Organ { id, name: name.into() })
            .collect(),
    );
    let path = dir.join("config.json");
    write_json(&path, &config)?;
    PipelineConfig::load(&path)
}
