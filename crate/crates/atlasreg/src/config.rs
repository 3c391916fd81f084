//! Batch configuration: one JSON document, paths relative to its directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use atlasreg_core::atlas::Phase;
use atlasreg_core::descriptor::DescriptorParams;
use atlasreg_core::fov::{DEFAULT_HI, DEFAULT_LO};
use atlasreg_core::register::RegistrationLevels;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_json;

/// Similarity floor below which a registered subject is flagged and left out
/// of the atlas. Negated mean descriptor distance. Set from the synthetic
/// phantom suite (`cargo run --example calibrate_qa`, 40 registrations): its
/// 5th percentile (−1.129) less the suite's 5th-percentile-to-median spread
/// (0.12), rounded down, so an ordinary registration is never flagged.
pub const DEFAULT_QA_THRESHOLD: f64 = -1.25;

/// Score window used for cropping, or the whole scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CropSetting {
    Range { lo: f64, hi: f64 },
    Keyword(NoCrop),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoCrop {
    Full,
}

impl CropSetting {
    pub const FULL: Self = CropSetting::Keyword(NoCrop::Full);

    pub fn range(lo: f64, hi: f64) -> Self {
        CropSetting::Range { lo, hi }
    }

    /// `(lo, hi)` when cropping.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            CropSetting::Range { lo, hi } => Some((lo, hi)),
            CropSetting::Keyword(NoCrop::Full) => None,
        }
    }

    /// Short name used for directories and table rows.
    pub fn name(&self) -> String {
        match self.bounds() {
            Some((lo, hi)) => format!("[{lo},{hi}]"),
            None => "full".into(),
        }
    }

    /// Parses `full` or `lo:hi`.
    pub fn parse(text: &str) -> Result<Self> {
        if text == "full" {
            return Ok(Self::FULL);
        }
        let parsed = text
            .split_once(':')
            .and_then(|(lo, hi)| Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?)));
        match parsed {
            Some((lo, hi)) => Ok(Self::range(lo, hi)),
            None => Err(Error::Config(format!(
                "crop range {text:?} is neither `full` nor `lo:hi`"
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some((lo, hi)) = self.bounds() {
            if !(lo < hi) {
                return Err(Error::Config(format!("crop range needs lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

impl Default for CropSetting {
    fn default() -> Self {
        Self::range(DEFAULT_LO, DEFAULT_HI)
    }
}

/// One cohort member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Score sidecar; defaults to `<image-stem>.bpr.json` when that exists,
    /// else scores are estimated from the image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
    #[serde(default = "default_phase")]
    pub phase: Phase,
    /// Transforms for evaluation; default to the pipeline's output location.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<PathBuf>,
}

fn default_phase() -> Phase {
    Phase::PortalVenous
}

/// An organ to evaluate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Organ {
    pub id: u16,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub atlas: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atlas_labels: Option<PathBuf>,
    pub subjects: Vec<SubjectEntry>,
    #[serde(default)]
    pub crop: CropSetting,
    #[serde(default)]
    pub descriptor: DescriptorParams,
    #[serde(default)]
    pub levels: RegistrationLevels,
    pub out_dir: PathBuf,
    #[serde(default = "default_qa_threshold")]
    pub qa_threshold: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Method tag in evaluation reports.
    #[serde(default = "default_method")]
    pub method: String,
    /// Organs to evaluate; defaults to every non-zero atlas label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub organs: Option<Vec<Organ>>,
    /// Crop settings compared by `ablate`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ablation: Vec<CropSetting>,
}

fn default_qa_threshold() -> f64 {
    DEFAULT_QA_THRESHOLD
}

fn default_workers() -> usize {
    1
}

fn default_method() -> String {
    "atlasreg".into()
}

impl PipelineConfig {
    /// A configuration with defaults for everything but the inputs.
    pub fn new(atlas: PathBuf, subjects: Vec<SubjectEntry>, out_dir: PathBuf) -> Self {
        Self {
            atlas,
            atlas_labels: None,
            subjects,
            crop: CropSetting::default(),
            descriptor: DescriptorParams::default(),
            levels: RegistrationLevels::default(),
            out_dir,
            qa_threshold: DEFAULT_QA_THRESHOLD,
            workers: 1,
            method: default_method(),
            organs: None,
            ablation: Vec::new(),
        }
    }

    /// Loads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: Self = read_json(path).map_err(|e| Error::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.atlas);
        fix(&mut self.out_dir);
        if let Some(p) = &mut self.atlas_labels {
            fix(p);
        }
        for s in &mut self.subjects {
            fix(&mut s.image);
            for p in [&mut s.labels, &mut s.scores, &mut s.affine, &mut s.field]
                .into_iter()
                .flatten()
            {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects.is_empty() {
            return Err(Error::Config("subject manifest is empty".into()));
        }
        self.crop.validate()?;
        for c in &self.ablation {
            c.validate()?;
        }
        self.descriptor.validate()?;
        self.levels.validate()?;
        if !self.qa_threshold.is_finite() {
            return Err(Error::Config("qa_threshold must be finite".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let mut ids = BTreeSet::new();
        let mut paths = BTreeSet::new();
        for s in &self.subjects {
            if s.id.is_empty() || s.id.contains(['/', '\\']) || s.id == "." || s.id == ".." {
                return Err(Error::Config(format!("subject id {:?} is not a plain name", s.id)));
            }
            if !ids.insert(&s.id) {
                return Err(Error::Config(format!("duplicate subject id {:?}", s.id)));
            }
            if !paths.insert(&s.image) {
                return Err(Error::Config(format!("image path {} listed twice", s.image.display())));
            }
        }
        Ok(())
    }

    pub fn subject_dir(&self, id: &str) -> PathBuf {
        self.out_dir.join("subjects").join(id)
    }

    pub fn affine_path(&self, s: &SubjectEntry) -> PathBuf {
        s.affine
            .clone()
            .unwrap_or_else(|| self.subject_dir(&s.id).join("affine.txt"))
    }

    pub fn field_path(&self, s: &SubjectEntry) -> PathBuf {
        s.field
            .clone()
            .unwrap_or_else(|| self.subject_dir(&s.id).join("field.nii.gz"))
    }
}

/// Parses a level schedule `grid:search:step,...`, coarse to fine.
pub fn parse_levels(text: &str, alpha: f64) -> Result<RegistrationLevels> {
    let mut levels = RegistrationLevels {
        grid_spacing: Vec::new(),
        search_steps: Vec::new(),
        step_size: Vec::new(),
        alpha,
    };
    for part in text.split(',') {
        let nums: Vec<usize> = part
            .split(':')
            .map(|t| t.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("level {part:?} is not grid:search:step")))?;
        let [g, s, q] = nums[..] else {
            return Err(Error::Config(format!("level {part:?} is not grid:search:step")));
        };
        levels.grid_spacing.push(g);
        levels.search_steps.push(s);
        levels.step_size.push(q);
    }
    levels.validate()?;
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: &str) -> SubjectEntry {
        SubjectEntry {
            id: id.into(),
            image: format!("{id}.nii.gz").into(),
            labels: None,
            scores: None,
            phase: Phase::Arterial,
            affine: None,
            field: None,
        }
    }

    #[test]
    fn minimal_json_fills_defaults() {
        let json = r#"{"atlas": "a.nii", "subjects": [{"id": "s1", "image": "s1.nii"}], "out_dir": "out"}"#;
        let c: PipelineConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.crop, CropSetting::range(-6.0, 5.0));
        assert_eq!(c.levels, RegistrationLevels::default());
        assert_eq!(c.subjects[0].phase, Phase::PortalVenous);
        assert_eq!(c.qa_threshold, DEFAULT_QA_THRESHOLD);
        c.validate().unwrap();
    }

    #[test]
    fn crop_settings_parse_both_forms() {
        let c: Vec<CropSetting> = serde_json::from_str(r#"["full", {"lo": -3, "hi": 2}]"#).unwrap();
        assert_eq!(c, vec![CropSetting::FULL, CropSetting::range(-3.0, 2.0)]);
        assert_eq!(CropSetting::parse("-6:5").unwrap(), CropSetting::range(-6.0, 5.0));
        assert!(CropSetting::parse("6").is_err());
    }

    #[test]
    fn validation_rejects_bad_manifests() {
        let mut c = PipelineConfig::new("a.nii".into(), vec![], "out".into());
        assert!(c.validate().unwrap_err().is_config());
        c.subjects = vec![subject("s1"), subject("s1")];
        assert!(c.validate().is_err());
        c.subjects = vec![subject("s1")];
        c.crop = CropSetting::range(5.0, -6.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn level_strings_parse() {
        let l = parse_levels("8:6:5, 4:2:1", 0.5).unwrap();
        assert_eq!(l.grid_spacing, vec![8, 4]);
        assert_eq!(l.step_size, vec![5, 1]);
        assert_eq!(l.alpha, 0.5);
        assert!(parse_levels("8:6", 1.0).is_err());
    }
}
