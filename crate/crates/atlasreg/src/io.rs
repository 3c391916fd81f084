//! Small text formats: score sidecars, affine matrices and JSON documents.

use std::fs;
use std::path::{Path, PathBuf};

use atlasreg_core::affine::AffineTransform;
use atlasreg_core::fov::SliceScoreTrack;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Body-part score sidecar, `<volume-stem>.bpr.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSidecar {
    pub n_slices: usize,
    pub scores: Vec<f64>,
}

/// `scan.nii.gz` → `scan.bpr.json` next to it.
pub fn sidecar_path(volume: &Path) -> PathBuf {
    let name = volume
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name
        .strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
        .unwrap_or(&name);
    volume.with_file_name(format!("{stem}.bpr.json"))
}

/// Reads a sidecar and validates it against a volume with `axial_slices`
/// slices.
pub fn read_scores(path: &Path, axial_slices: usize) -> Result<SliceScoreTrack> {
    let sidecar: ScoreSidecar = read_json(path)?;
    if sidecar.n_slices != sidecar.scores.len() {
        return Err(Error::format(
            path,
            format!(
                "n_slices is {} but {} scores are listed",
                sidecar.n_slices,
                sidecar.scores.len()
            ),
        ));
    }
    Ok(SliceScoreTrack::from_scores(sidecar.scores, axial_slices)?)
}

pub fn write_scores(path: &Path, scores: &[f64]) -> Result<()> {
    write_json(
        path,
        &ScoreSidecar {
            n_slices: scores.len(),
            scores: scores.to_vec(),
        },
    )
}

/// Four whitespace-separated rows of four numbers, world mm to world mm.
pub fn write_affine(path: &Path, affine: &AffineTransform) -> Result<()> {
    let text: String = affine
        .matrix()
        .iter()
        .map(|row| {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            cells.join(" ") + "\n"
        })
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_affine(path: &Path) -> Result<AffineTransform> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let values = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(path, format!("not a number: {e}")))?;
    if values.len() != 16 {
        return Err(Error::format(
            path,
            format!("expected 16 numbers, found {}", values.len()),
        ));
    }
    Ok(AffineTransform::from_row_major(&values)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use atlasreg_core::affine::AffineParams;

    #[test]
    fn sidecar_name_strips_nifti_suffixes() {
        assert_eq!(sidecar_path(Path::new("/d/ct.nii.gz")), Path::new("/d/ct.bpr.json"));
        assert_eq!(sidecar_path(Path::new("ct.nii")), Path::new("ct.bpr.json"));
    }

    #[test]
    fn affine_text_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        let a = AffineTransform::from_params(&AffineParams {
            translation: [1.0 / 3.0, -2.5, 7.1],
            rotation: [0.1, -0.05, 0.2],
            scale: [1.05, 0.93, 1.0],
            shear: [0.01, 0.0, -0.02],
            center: [3.0, 4.0, 5.0],
        });
        write_affine(&p, &a).unwrap();
        assert_eq!(read_affine(&p).unwrap(), a);
    }

    #[test]
    fn sidecar_count_must_match_volume() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bpr.json");
        write_scores(&p, &vec![0.0; 400]).unwrap();
        assert_eq!(read_scores(&p, 400).unwrap().len(), 400);
        assert!(matches!(
            read_scores(&p, 434),
            Err(Error::Core(atlasreg_core::Error::Shape(_)))
        ));
    }
}
