use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atlasreg::config::{parse_levels, CropSetting, PipelineConfig};
use atlasreg::error::{Error, Result};
use atlasreg::io::{read_affine, read_scores, write_affine, write_json};
use atlasreg::pipeline::{run_ablation, run_eval, run_pipeline};
use atlasreg::{nifti, synth};
use atlasreg_core::atlas::{fuse_labels_majority, mean_map, variance_map};
use atlasreg_core::descriptor::DescriptorParams;
use atlasreg_core::fov::{crop_by_score, estimate_scores, DEFAULT_HI, DEFAULT_LO};
use atlasreg_core::phantom::CohortSpec;
use atlasreg_core::register::{register_affine, register_deformable, RegistrationLevels};
use atlasreg_core::transform::{
    apply_affine, apply_field, apply_field_from, compose_affine_field, invert_field, transfer_labels_inverse,
};
use atlasreg_core::volume::{reorient_canonical, Interp};
use clap::{Args, Parser, Subcommand};

/// Atlas construction and evaluation for abdominal CT.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Registration schedule flags shared by the registration verbs.
#[derive(Args, Clone)]
struct LevelArgs {
    /// Levels as `grid:search:step,...`, coarse to fine.
    #[arg(long)]
    levels: Option<String>,
    /// Regularisation weight.
    #[arg(long)]
    alpha: Option<f64>,
}

impl LevelArgs {
    fn resolve(&self, base: RegistrationLevels) -> Result<RegistrationLevels> {
        let alpha = self.alpha.unwrap_or(base.alpha);
        match &self.levels {
            Some(text) => parse_levels(text, alpha),
            None => {
                let levels = RegistrationLevels { alpha, ..base };
                levels.validate()?;
                Ok(levels)
            }
        }
    }
}

/// Config-file verbs; every flag overrides the matching config field.
#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    atlas: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    hi: Option<f64>,
    #[command(flatten)]
    levels: LevelArgs,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    qa_threshold: Option<f64>,
}

impl BatchArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut c = PipelineConfig::load(&self.config)?;
        if let Some(a) = &self.atlas {
            c.atlas = a.clone();
        }
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        if self.lo.is_some() || self.hi.is_some() {
            let (lo, hi) = c.crop.bounds().unwrap_or((DEFAULT_LO, DEFAULT_HI));
            c.crop = CropSetting::range(self.lo.unwrap_or(lo), self.hi.unwrap_or(hi));
        }
        c.levels = self.levels.resolve(c.levels.clone())?;
        if let Some(w) = self.workers {
            c.workers = w;
        }
        if let Some(q) = self.qa_threshold {
            c.qa_threshold = q;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Keep the axial slices whose body-part score lies in [lo, hi].
    Crop {
        #[arg(long)]
        image: PathBuf,
        /// Score sidecar, or `auto` to estimate scores from the image.
        #[arg(long, default_value = "auto")]
        scores: String,
        #[arg(long, default_value_t = DEFAULT_LO, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = DEFAULT_HI, allow_hyphen_values = true)]
        hi: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Affine registration of a subject to the atlas; writes the 4×4 matrix.
    Affine {
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        levels: LevelArgs,
    },
    /// Deformable registration after an affine; writes the field on the
    /// atlas grid.
    Deform {
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        /// Affine from `affine`; identity when omitted.
        #[arg(long)]
        affine: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the warped moving image here.
        #[arg(long)]
        warped: Option<PathBuf>,
        #[command(flatten)]
        levels: LevelArgs,
    },
    /// Resample an image (or labels) into atlas space.
    Warp {
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        affine: Option<PathBuf>,
        #[arg(long)]
        field: Option<PathBuf>,
        /// Treat the input as a label volume (nearest neighbour).
        #[arg(long)]
        labels: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert a displacement field.
    Invert {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map atlas labels into a subject through the inverted registration.
    TransferLabels {
        /// Atlas label volume.
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        affine: PathBuf,
        #[arg(long)]
        field: PathBuf,
        /// Subject image defining the output grid.
        #[arg(long)]
        subject: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxel-wise mean of registered volumes.
    AtlasMean {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Normalised log-variance of registered volumes.
    AtlasVar {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Majority-vote fusion of registered label volumes.
    FuseLabels {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Inverse label transfer evaluation of a finished pipeline run.
    Eval(BatchArgs),
    /// Register the cohort and build per-phase atlases.
    Pipeline(BatchArgs),
    /// Compare crop ranges (`full` or `lo:hi`) by inverse-transfer Dice.
    Ablate {
        #[command(flatten)]
        batch: BatchArgs,
        /// Ranges to compare; defaults to the config's `ablation` list.
        #[arg(long = "range", allow_hyphen_values = true)]
        ranges: Vec<String>,
    },
    /// Write a synthetic phantom cohort and its config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        subjects: usize,
        #[arg(long, default_value_t = 48)]
        size: usize,
        /// Voxel spacing in mm.
        #[arg(long, default_value_t = 2.0)]
        spacing: f64,
        /// Extra chest/pelvis slices above and below the abdomen.
        #[arg(long, default_value_t = 0)]
        distractors: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// How a successful command ended.
enum Done {
    Ok,
    SubjectsFailed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Done::Ok) => ExitCode::SUCCESS,
        Ok(Done::SubjectsFailed) => ExitCode::from(2),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(1)
        }
    }
}

fn canonical_image(path: &Path) -> Result<atlasreg_core::volume::ImageVolume> {
    Ok(reorient_canonical(&nifti::read_volume(path)?)?)
}

fn run(command: Command) -> Result<Done> {
    let descriptor = DescriptorParams::default();
    match command {
        Command::Crop {
            image,
            scores,
            lo,
            hi,
            out,
        } => {
            let raw = nifti::read_volume(&image)?;
            let vol = reorient_canonical(&raw)?;
            let track = if scores == "auto" {
                estimate_scores(&vol)?
            } else {
                read_scores(Path::new(&scores), vol.dims()[2])?
            };
            let (cropped, record) = crop_by_score(&vol, &track, lo, hi)?;
            nifti::write_volume(&cropped, &out)?;
            println!("{}", serde_json::to_string(&record).expect("plain data"));
        }
        Command::Affine {
            atlas,
            moving,
            out,
            levels,
        } => {
            let levels = levels.resolve(RegistrationLevels::default())?;
            let a = register_affine(
                &canonical_image(&atlas)?,
                &canonical_image(&moving)?,
                &descriptor,
                &levels,
            )?;
            write_affine(&out, &a)?;
        }
        Command::Deform {
            atlas,
            moving,
            affine,
            out,
            warped,
            levels,
        } => {
            let levels = levels.resolve(RegistrationLevels::default())?;
            let atlas = canonical_image(&atlas)?;
            let moving = canonical_image(&moving)?;
            let a = match affine {
                Some(p) => read_affine(&p)?,
                None => Default::default(),
            };
            let aligned = apply_affine(&moving, &a, atlas.geometry(), Interp::Trilinear)?;
            let field = register_deformable(&atlas, &aligned, &descriptor, &levels)?;
            nifti::write_field(&field, &out)?;
            if let Some(w) = warped {
                nifti::write_volume(&apply_field(&aligned, &field, Interp::Trilinear)?, &w)?;
            }
        }
        Command::Warp {
            atlas,
            input,
            affine,
            field,
            labels,
            out,
        } => {
            let target = canonical_image(&atlas)?;
            let ag = target.geometry();
            let a = match affine {
                Some(p) => read_affine(&p)?,
                None => Default::default(),
            };
            let field = match field {
                Some(p) => nifti::read_field(&p)?,
                None => atlasreg_core::field::DisplacementField::zeros(ag.clone()),
            };
            let composite = compose_affine_field(&a, &field, ag)?;
            if labels {
                let l = reorient_canonical(&nifti::read_labels(&input)?)?;
                nifti::write_labels(&apply_field_from(&l, &composite, Interp::Nearest)?, &out)?;
            } else {
                let v = canonical_image(&input)?;
                nifti::write_volume(&apply_field_from(&v, &composite, Interp::Trilinear)?, &out)?;
            }
        }
        Command::Invert { field, out } => {
            let (inverse, stats) = invert_field(&nifti::read_field(&field)?)?;
            nifti::write_field(&inverse, &out)?;
            println!("{}", serde_json::to_string(&stats).expect("plain data"));
        }
        Command::TransferLabels {
            atlas,
            affine,
            field,
            subject,
            out,
        } => {
            let labels = reorient_canonical(&nifti::read_labels(&atlas)?)?;
            let subject = canonical_image(&subject)?;
            let moved = transfer_labels_inverse(
                &labels,
                &read_affine(&affine)?,
                &nifti::read_field(&field)?,
                subject.geometry(),
            )?;
            nifti::write_labels(&moved, &out)?;
        }
        Command::AtlasMean { out, inputs } => {
            let vols = inputs.iter().map(|p| canonical_image(p)).collect::<Result<Vec<_>>>()?;
            nifti::write_volume(&mean_map(&vols)?, &out)?;
        }
        Command::AtlasVar { out, inputs } => {
            let vols = inputs.iter().map(|p| canonical_image(p)).collect::<Result<Vec<_>>>()?;
            let mean = mean_map(&vols)?;
            nifti::write_volume(&variance_map(&vols, &mean)?, &out)?;
        }
        Command::FuseLabels { out, inputs } => {
            let vols = inputs
                .iter()
                .map(|p| Ok(reorient_canonical(&nifti::read_labels(p)?)?))
                .collect::<Result<Vec<_>>>()?;
            nifti::write_labels(&fuse_labels_majority(&vols)?, &out)?;
        }
        Command::Eval(batch) => {
            let config = batch.load()?;
            let outcome = run_eval(&config)?;
            atlasreg::io::create_dir(&config.out_dir)?;
            write_json(&config.out_dir.join("eval.json"), &outcome)?;
            if let Some(report) = &outcome.report {
                let table = report.text_table();
                std::fs::write(config.out_dir.join("eval.txt"), &table).map_err(|e| Error::Io {
                    path: config.out_dir.join("eval.txt"),
                    source: e,
                })?;
                print!("{table}");
            }
            if !outcome.failures.is_empty() {
                return Ok(Done::SubjectsFailed);
            }
        }
        Command::Pipeline(batch) => {
            let config = batch.load()?;
            let out = run_pipeline(&config)?;
            for r in &out.summary.results {
                println!("{}\t{:.4}\t{:?}", r.id, r.similarity, r.qa_flag);
            }
            if !out.summary.failures.is_empty() {
                return Ok(Done::SubjectsFailed);
            }
        }
        Command::Ablate { batch, ranges } => {
            let config = batch.load()?;
            let ranges = if ranges.is_empty() {
                config.ablation.clone()
            } else {
                ranges
                    .iter()
                    .map(|r| CropSetting::parse(r))
                    .collect::<Result<Vec<_>>>()?
            };
            let table = run_ablation(&config, &ranges)?;
            print!("{}", table.report.text_table());
            if table.rows.iter().any(|r| !r.failures.is_empty()) {
                return Ok(Done::SubjectsFailed);
            }
        }
        Command::Synth {
            out,
            subjects,
            size,
            spacing,
            distractors,
            seed,
        } => {
            let mut spec = CohortSpec::new([size; 3], [spacing; 3], seed);
            spec.distractor_slices = (distractors, distractors);
            let config = synth::write_cohort(&out, &spec, subjects)?;
            println!("{}", out.join("config.json").display());
            log::info!("{} subjects written", config.subjects.len());
        }
    }
    Ok(Done::Ok)
}
