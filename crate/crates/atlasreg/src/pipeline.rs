//! Batch orchestration: crop → affine → deformable → atlas products, plus
//! inverse label transfer evaluation and the cropping ablation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use atlasreg_core::affine::AffineTransform;
use atlasreg_core::atlas::{AtlasBundle, IntensityAccumulator, Phase, VoteAccumulator};
use atlasreg_core::descriptor::DescriptorParams;
use atlasreg_core::field::DisplacementField;
use atlasreg_core::fov::{crop_by_score, estimate_scores, CropRecord, SliceScoreTrack, AXIAL_AXIS};
use atlasreg_core::metrics::{dice, hausdorff, organ_mask};
use atlasreg_core::register::{register_affine, register_deformable, similarity, RegistrationLevels};
use atlasreg_core::report::{build_report, EvalRecord, EvalReport};
use atlasreg_core::transform::{apply_affine, apply_field_from, compose_affine_field, transfer_labels_inverse};
use atlasreg_core::volume::{reorient_canonical, ImageVolume, Interp, LabelVolume};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{CropSetting, Organ, PipelineConfig, SubjectEntry};
use crate::error::{Error, Result};
use crate::io::{create_dir, read_affine, read_json, read_scores, sidecar_path, write_affine, write_json};
use crate::nifti;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaFlag {
    Pass,
    Flagged,
}

impl QaFlag {
    pub fn from_similarity(similarity: f64, threshold: f64) -> Self {
        if similarity < threshold {
            QaFlag::Flagged
        } else {
            QaFlag::Pass
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub id: String,
    pub phase: Phase,
    /// `None` when the whole scan was used.
    pub crop: Option<CropRecord>,
    pub affine_path: PathBuf,
    pub field_path: PathBuf,
    pub warped_path: PathBuf,
    /// Negated mean descriptor distance to the atlas; higher is better.
    pub similarity: f64,
    pub qa_flag: QaFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFailure {
    pub id: String,
    pub error: String,
}

/// Provenance written next to each phase's atlas products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasManifest {
    pub phase: Phase,
    pub subject_ids: Vec<String>,
    pub crop: CropSetting,
    /// SHA-256 of the descriptor and level parameters as JSON.
    pub params_digest: String,
    pub mean: PathBuf,
    pub variance: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub results: Vec<SubjectResult>,
    pub failures: Vec<SubjectFailure>,
    pub atlases: Vec<AtlasManifest>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub bundles: Vec<AtlasBundle>,
    pub summary: PipelineSummary,
}

/// A subject read from disk, in canonical orientation.
#[derive(Debug, Clone)]
pub struct PreparedSubject {
    pub image: ImageVolume,
    pub labels: Option<LabelVolume>,
    pub scores: SliceScoreTrack,
}

/// One subject's registration to the atlas.
#[derive(Debug, Clone)]
pub struct Registration {
    /// Subject world → atlas world.
    pub affine: AffineTransform,
    /// Deformable field on the atlas grid, applied after the affine.
    pub field: DisplacementField,
    /// Subject image resampled into atlas space through both stages.
    pub warped: ImageVolume,
    pub similarity: f64,
}

fn digest(descriptor: &DescriptorParams, levels: &RegistrationLevels) -> String {
    let json = serde_json::to_vec(&(descriptor, levels)).expect("plain data serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a subject image (and labels), brings it to canonical orientation
/// and finds its slice scores.
pub fn prepare_subject(entry: &SubjectEntry, with_labels: bool) -> Result<PreparedSubject> {
    let raw = nifti::read_volume(&entry.image)?;
    let image = reorient_canonical(&raw)?;
    let labels = match (&entry.labels, with_labels) {
        (Some(p), true) => {
            let l = reorient_canonical(&nifti::read_labels(p)?)?;
            if !l.geometry().approx_eq(image.geometry(), 1e-4) {
                return Err(Error::format(p, "label grid differs from the image grid"));
            }
            Some(l)
        }
        _ => None,
    };
    let sidecar = entry
        .scores
        .clone()
        .or_else(|| Some(sidecar_path(&entry.image)).filter(|p| p.exists()));
    let scores = match sidecar {
        Some(p) => {
            let (n, reversed) = stored_axial(raw.geometry());
            let track = read_scores(&p, n)?;
            if reversed {
                let mut s = track.scores().to_vec();
                s.reverse();
                SliceScoreTrack::from_scores(s, n)?
            } else {
                track
            }
        }
        None => estimate_scores(&image)?,
    };
    Ok(PreparedSubject { image, labels, scores })
}

/// Slice count along the stored axis that runs craniocaudally, and whether
/// canonical orientation reverses it.
fn stored_axial(geometry: &atlasreg_core::geometry::GridGeometry) -> (usize, bool) {
    let dir = geometry.direction();
    let j = (0..3)
        .max_by(|&a, &b| dir[AXIAL_AXIS][a].abs().total_cmp(&dir[AXIAL_AXIS][b].abs()))
        .unwrap_or(AXIAL_AXIS);
    (geometry.dims()[j], dir[AXIAL_AXIS][j] < 0.0)
}

/// Crops to the score window (when one is set).
pub fn crop_subject(subject: &PreparedSubject, crop: &CropSetting) -> Result<(ImageVolume, Option<CropRecord>)> {
    match crop.bounds() {
        Some((lo, hi)) => {
            let (vol, rec) = crop_by_score(&subject.image, &subject.scores, lo, hi)?;
            Ok((vol, Some(rec)))
        }
        None => Ok((subject.image.clone(), None)),
    }
}

/// Two-stage registration of `moving` to `atlas`.
pub fn register_to_atlas(
    atlas: &ImageVolume,
    moving: &ImageVolume,
    descriptor: &DescriptorParams,
    levels: &RegistrationLevels,
) -> Result<Registration> {
    let ag = atlas.geometry();
    let affine = register_affine(atlas, moving, descriptor, levels)?;
    let aligned = apply_affine(moving, &affine, ag, Interp::Trilinear)?;
    let field = register_deformable(atlas, &aligned, descriptor, levels)?;
    let composite = compose_affine_field(&affine, &field, ag)?;
    let warped = apply_field_from(moving, &composite, Interp::Trilinear)?;
    let similarity = similarity(atlas, &warped, descriptor)?;
    Ok(Registration {
        affine,
        field,
        warped,
        similarity,
    })
}

fn read_atlas(path: &Path) -> Result<ImageVolume> {
    nifti::read_volume(path)
        .and_then(|v| Ok(reorient_canonical(&v)?))
        .map_err(|e| Error::Config(format!("atlas unreadable: {e}")))
}

fn read_atlas_labels(path: &Path, atlas: &ImageVolume) -> Result<LabelVolume> {
    let labels = nifti::read_labels(path)
        .and_then(|v| Ok(reorient_canonical(&v)?))
        .map_err(|e| Error::Config(format!("atlas labels unreadable: {e}")))?;
    if !labels.geometry().approx_eq(atlas.geometry(), 1e-4) {
        return Err(Error::Config("atlas labels do not share the atlas grid".into()));
    }
    Ok(labels)
}

/// Everything the atlas step needs from one processed subject.
struct Processed {
    result: SubjectResult,
    warped: ImageVolume,
    warped_labels: Option<LabelVolume>,
}

fn process_subject(config: &PipelineConfig, atlas: &ImageVolume, entry: &SubjectEntry) -> Result<Processed> {
    let subject = prepare_subject(entry, true)?;
    let (cropped, crop) = crop_subject(&subject, &config.crop)?;
    let reg = register_to_atlas(atlas, &cropped, &config.descriptor, &config.levels)?;
    let warped_labels = match &subject.labels {
        Some(labels) => {
            let ag = atlas.geometry();
            let composite = compose_affine_field(&reg.affine, &reg.field, ag)?;
            Some(apply_field_from(labels, &composite, Interp::Nearest)?)
        }
        None => None,
    };
    let dir = config.subject_dir(&entry.id);
    create_dir(&dir)?;
    let affine_path = config.affine_path(entry);
    let field_path = config.field_path(entry);
    let warped_path = dir.join("warped.nii.gz");
    write_affine(&affine_path, &reg.affine)?;
    nifti::write_field(&reg.field, &field_path)?;
    nifti::write_volume(&reg.warped, &warped_path)?;
    let qa_flag = QaFlag::from_similarity(reg.similarity, config.qa_threshold);
    Ok(Processed {
        result: SubjectResult {
            id: entry.id.clone(),
            phase: entry.phase,
            crop,
            affine_path,
            field_path,
            warped_path,
            similarity: reg.similarity,
            qa_flag,
        },
        warped: reg.warped,
        warped_labels,
    })
}

/// Runs `task` over `0..n` on up to `workers` threads and hands the results
/// to `consume` in index order, so the reduction never depends on
/// scheduling.
fn ordered_parallel<T: Send>(
    n: usize,
    workers: usize,
    task: impl Fn(usize) -> T + Sync,
    mut consume: impl FnMut(usize, T) -> Result<()>,
) -> Result<()> {
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            let tx = tx.clone();
            let (next, task) = (&next, &task);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n || tx.send((i, task(i))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut expected = 0;
        for (i, item) in rx {
            pending.insert(i, item);
            while let Some(item) = pending.remove(&expected) {
                consume(expected, item)?;
                expected += 1;
            }
        }
        Ok(())
    })
}

struct PhaseAccumulator {
    intensity: IntensityAccumulator,
    votes: VoteAccumulator,
    ids: Vec<String>,
}

/// Registers every subject to the atlas and builds one atlas bundle per
/// phase from the subjects that pass QA.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let atlas = read_atlas(&config.atlas)?;
    create_dir(&config.out_dir)?;
    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut phases: BTreeMap<Phase, PhaseAccumulator> = BTreeMap::new();
    ordered_parallel(
        config.subjects.len(),
        config.workers,
        |i| process_subject(config, &atlas, &config.subjects[i]),
        |i, outcome| {
            let entry = &config.subjects[i];
            match outcome {
                Ok(p) => {
                    info!(
                        "{}: similarity {:.4} ({:?})",
                        entry.id, p.result.similarity, p.result.qa_flag
                    );
                    if p.result.qa_flag == QaFlag::Pass {
                        let acc = phases.entry(entry.phase).or_insert_with(|| PhaseAccumulator {
                            intensity: IntensityAccumulator::new(atlas.geometry().clone()),
                            votes: VoteAccumulator::new(atlas.geometry().clone()),
                            ids: Vec::new(),
                        });
                        acc.intensity.add(&p.warped)?;
                        if let Some(l) = &p.warped_labels {
                            acc.votes.add(l)?;
                        }
                        acc.ids.push(entry.id.clone());
                    }
                    results.push(p.result);
                }
                Err(e) => {
                    warn!("{}: failed: {e}", entry.id);
                    failures.push(SubjectFailure {
                        id: entry.id.clone(),
                        error: e.to_string(),
                    });
                }
            }
            Ok(())
        },
    )?;

    let params_digest = digest(&config.descriptor, &config.levels);
    let mut bundles = Vec::new();
    let mut atlases = Vec::new();
    for (phase, acc) in phases {
        let dir = config.out_dir.join("atlas").join(phase.as_str());
        create_dir(&dir)?;
        let mean = acc.intensity.mean()?;
        let mean_path = dir.join("mean.nii.gz");
        nifti::write_volume(&mean, &mean_path)?;
        let variance = match acc.intensity.variance() {
            Ok(v) => Some(v),
            Err(e) => {
                warn!("{}: variance map skipped: {e}", phase.as_str());
                None
            }
        };
        let variance_path = match &variance {
            Some(v) => {
                let p = dir.join("variance.nii.gz");
                nifti::write_volume(v, &p)?;
                Some(p)
            }
            None => None,
        };
        let fused = if acc.votes.count() > 0 {
            Some(acc.votes.fused()?)
        } else {
            None
        };
        let labels_path = match &fused {
            Some(l) => {
                let p = dir.join("labels.nii.gz");
                nifti::write_labels(l, &p)?;
                Some(p)
            }
            None => None,
        };
        let manifest = AtlasManifest {
            phase,
            subject_ids: acc.ids.clone(),
            crop: config.crop,
            params_digest: params_digest.clone(),
            mean: mean_path,
            variance: variance_path,
            labels: labels_path,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        atlases.push(manifest);
        bundles.push(AtlasBundle {
            mean,
            variance,
            fused_labels: fused,
            phase,
            subject_ids: acc.ids,
        });
    }
    let summary = PipelineSummary {
        results,
        failures,
        atlases,
    };
    write_json(&config.out_dir.join("results.json"), &summary)?;
    Ok(PipelineOutput { bundles, summary })
}

/// Evaluation output: the report (absent when no subject could be scored)
/// and the subjects that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub report: Option<EvalReport>,
    pub failures: Vec<SubjectFailure>,
}

fn organs_of(config: &PipelineConfig, atlas_labels: &LabelVolume) -> Vec<Organ> {
    if let Some(o) = &config.organs {
        return o.clone();
    }
    let mut ids: Vec<u16> = atlas_labels.data().iter().copied().filter(|&l| l != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| Organ {
            id,
            name: format!("label{id}"),
        })
        .collect()
}

fn evaluate_subject(
    config: &PipelineConfig,
    atlas_labels: &LabelVolume,
    organs: &[Organ],
    entry: &SubjectEntry,
) -> Result<Vec<EvalRecord>> {
    let truth_path = entry
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{}: no ground-truth labels", entry.id)))?;
    let truth = reorient_canonical(&nifti::read_labels(truth_path)?)?;
    let affine = read_affine(&config.affine_path(entry))?;
    let field = nifti::read_field(config.field_path(entry))?;
    let predicted = transfer_labels_inverse(atlas_labels, &affine, &field, truth.geometry())?;
    organs
        .iter()
        .map(|organ| {
            let p = organ_mask(&predicted, organ.id);
            let g = organ_mask(&truth, organ.id);
            Ok(EvalRecord {
                subject: entry.id.clone(),
                organ: organ.name.clone(),
                method: config.method.clone(),
                dice: dice(&p, &g)?,
                hd_mm: hausdorff(&p, &g).ok(),
            })
        })
        .collect()
}

/// Inverse label transfer of the atlas labels into every subject, scored
/// against the subject's own labels.
pub fn run_eval(config: &PipelineConfig) -> Result<EvalOutcome> {
    config.validate()?;
    let atlas = read_atlas(&config.atlas)?;
    let labels_path = config
        .atlas_labels
        .as_ref()
        .ok_or_else(|| Error::Config("evaluation needs atlas_labels".into()))?;
    let atlas_labels = read_atlas_labels(labels_path, &atlas)?;
    let organs = organs_of(config, &atlas_labels);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    ordered_parallel(
        config.subjects.len(),
        config.workers,
        |i| evaluate_subject(config, &atlas_labels, &organs, &config.subjects[i]),
        |i, outcome| {
            match outcome {
                Ok(r) => records.extend(r),
                Err(e) => {
                    warn!("{}: not evaluated: {e}", config.subjects[i].id);
                    failures.push(SubjectFailure {
                        id: config.subjects[i].id.clone(),
                        error: e.to_string(),
                    });
                }
            }
            Ok(())
        },
    )?;
    let report = if records.is_empty() {
        None
    } else {
        Some(build_report(records)?)
    };
    Ok(EvalOutcome { report, failures })
}

/// Mean Dice per organ for one crop setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub crop: CropSetting,
    pub organ_dice: Vec<(String, f64)>,
    pub mean_dice: f64,
    pub failures: Vec<SubjectFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Every record, method tag = crop name.
    pub report: EvalReport,
}

/// Runs the pipeline and the evaluation once per crop setting, each in its
/// own output directory.
pub fn run_ablation(config: &PipelineConfig, ranges: &[CropSetting]) -> Result<AblationTable> {
    if ranges.is_empty() {
        return Err(Error::Config("no crop ranges to compare".into()));
    }
    if config.atlas_labels.is_none() {
        return Err(Error::Config("ablation needs atlas_labels".into()));
    }
    if let Some(s) = config.subjects.iter().find(|s| s.labels.is_none()) {
        return Err(Error::Config(format!("ablation needs labels for subject {}", s.id)));
    }
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (i, crop) in ranges.iter().enumerate() {
        let mut run = config.clone();
        run.crop = *crop;
        run.method = crop.name();
        run.out_dir = config.out_dir.join("ablation").join(format!("run{i}"));
        for s in &mut run.subjects {
            s.affine = None;
            s.field = None;
        }
        info!("ablation: crop {}", crop.name());
        let out = run_pipeline(&run)?;
        let eval = run_eval(&run)?;
        let mut failures = out.summary.failures;
        failures.extend(eval.failures);
        let (organ_dice, mean_dice) = match &eval.report {
            Some(r) => {
                let m = &r.methods[0];
                (
                    m.organs.iter().map(|o| (o.organ.clone(), o.dice.mean)).collect(),
                    m.average.dice.mean,
                )
            }
            None => (Vec::new(), f64::NAN),
        };
        if let Some(r) = eval.report {
            records.extend(r.records);
        }
        rows.push(AblationRow {
            crop: *crop,
            organ_dice,
            mean_dice,
            failures,
        });
    }
    let report = build_report(records)?;
    let table = AblationTable { rows, report };
    write_json(&config.out_dir.join("ablation.json"), &table)?;
    Ok(table)
}

/// Loads results written by a previous pipeline run.
pub fn read_summary(out_dir: &Path) -> Result<PipelineSummary> {
    read_json(&out_dir.join("results.json"))
}

/// Mean of unregistered volumes resampled onto the atlas grid, for
/// comparison with the registered mean.
pub fn unregistered_mean(atlas: &ImageVolume, volumes: &[ImageVolume]) -> Result<ImageVolume> {
    let mut acc = IntensityAccumulator::new(atlas.geometry().clone());
    for v in volumes {
        acc.add(&apply_affine(
            v,
            &AffineTransform::identity(),
            atlas.geometry(),
            Interp::Trilinear,
        )?)?;
    }
    Ok(acc.mean()?)
}
