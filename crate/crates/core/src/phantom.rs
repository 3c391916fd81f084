//! Analytic synthetic anatomy for tests, demos and the ablation harness.
//!
//! A [`BodyModel`] is a continuous function from model-space millimetres to
//! `(HU, label)`: an elliptic trunk with a spine, three organ ellipsoids of
//! distinct intensity, smooth texture, lungs above the abdominal window and a
//! pelvic ring below it. Volumes are rendered by mapping every voxel centre
//! into model space, so subjects generated through a known transform have
//! exact ground-truth correspondence with the reference rendering.

use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affine::{AffineParams, AffineTransform};
use crate::atlas::Phase;
use crate::field::DisplacementField;
use crate::geometry::GridGeometry;
use crate::linalg::Vec3;
use crate::math;
use crate::volume::{ImageVolume, LabelVolume, Volume, AIR_HU};

/// Organ label ids produced by the model.
pub const ORGANS: [u16; 3] = [1, 2, 3];
/// Display names for [`ORGANS`].
pub const ORGAN_NAMES: [&str; 3] = ["liver", "pancreas", "kidney"];

/// Lattice spacings (mm) and relative amplitudes of the texture octaves.
const TEXTURE_OCTAVES: [(f64, f64); 2] = [(3.0, 0.6), (7.0, 0.4)];

/// Deterministic value in [-1, 1] for an integer lattice point.
fn lattice_value(i: i64, j: i64, k: i64, octave: u64) -> f64 {
    let mut h = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (k as u64).wrapping_mul(0x1656_67B1_9E37_79F9)
        ^ octave.wrapping_mul(0x27D4_EB2F_1656_67C5);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Smooth value noise: lattice values blended with a C¹ fade.
fn value_noise(p: Vec3, cell: f64, octave: u64) -> f64 {
    let q = p.map(|c| c / cell);
    let base = q.map(math::floor);
    let t = core::array::from_fn::<f64, 3, _>(|a| {
        let f = q[a] - base[a];
        f * f * (3.0 - 2.0 * f)
    });
    let b = base.map(|c| c as i64);
    let mut out = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = b;
        for a in 0..3 {
            if corner >> a & 1 == 1 {
                idx[a] += 1;
                w *= t[a];
            } else {
                w *= 1.0 - t[a];
            }
        }
        out += w * lattice_value(idx[0], idx[1], idx[2], octave);
    }
    out
}

/// Score at the inferior and superior ends of the abdominal window.
const WINDOW_SCORES: (f64, f64) = (5.0, -6.0);

/// Intensities and placement of the synthetic anatomy.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    /// Size of the abdominal window in mm; the model is centred on it.
    pub extent: Vec3,
    pub body_hu: f32,
    pub organ_hu: [f32; 3],
    pub texture_hu: f32,
}

struct Ellipsoid {
    center: Vec3,
    radii: Vec3,
}

impl Ellipsoid {
    fn level(&self, p: Vec3) -> f64 {
        (0..3)
            .map(|a| {
                let d = (p[a] - self.center[a]) / self.radii[a];
                d * d
            })
            .sum()
    }
}

impl BodyModel {
    pub fn new(extent: Vec3) -> Self {
        Self::for_phase(extent, Phase::PortalVenous)
    }

    /// Organ enhancement differs per contrast phase.
    pub fn for_phase(extent: Vec3, phase: Phase) -> Self {
        let organ_hu = match phase {
            Phase::NonContrast => [60.0, -70.0, 150.0],
            Phase::Arterial => [80.0, -40.0, 230.0],
            Phase::PortalVenous => [120.0, -60.0, 190.0],
            Phase::Delayed => [100.0, -50.0, 170.0],
        };
        Self {
            extent,
            body_hu: 20.0,
            organ_hu,
            texture_hu: 40.0,
        }
    }

    fn organs(&self) -> [Ellipsoid; 3] {
        let e = self.extent;
        let at = |f: Vec3| [f[0] * e[0], f[1] * e[1], f[2] * e[2]];
        [
            Ellipsoid {
                center: at([-0.16, -0.02, 0.12]),
                radii: at([0.15, 0.14, 0.18]),
            },
            Ellipsoid {
                center: at([0.14, 0.08, 0.0]),
                radii: at([0.14, 0.09, 0.12]),
            },
            Ellipsoid {
                center: at([0.16, -0.15, -0.2]),
                radii: at([0.09, 0.09, 0.13]),
            },
        ]
    }

    /// Smooth aperiodic texture, different in every neighbourhood, tied to
    /// model space so it moves with the anatomy.
    fn texture(&self, p: Vec3) -> f64 {
        let t: f64 = TEXTURE_OCTAVES
            .iter()
            .enumerate()
            .map(|(o, &(cell, amp))| amp * value_noise(p, cell, o as u64))
            .sum();
        self.texture_hu as f64 * t
    }

    /// Top (superior, +z) and bottom of the abdominal window in model mm.
    pub fn window_z(&self) -> (f64, f64) {
        (-0.5 * self.extent[2], 0.5 * self.extent[2])
    }

    /// Intensity and label at a model-space point.
    pub fn eval(&self, p: Vec3) -> (f32, u16) {
        let e = self.extent;
        let trunk = {
            let dx = p[0] / (0.42 * e[0]);
            let dy = p[1] / (0.34 * e[1]);
            dx * dx + dy * dy
        };
        if trunk > 1.0 {
            return (AIR_HU, 0);
        }
        let texture = self.texture(p);
        let (z_lo, z_hi) = self.window_z();
        // spine runs the full length
        let sx = p[0] / (0.06 * e[0]);
        let sy = (p[1] + 0.24 * e[1]) / (0.06 * e[1]);
        if sx * sx + sy * sy <= 1.0 {
            return ((400.0 + texture) as f32, 0);
        }
        if p[2] > z_hi {
            // chest: two lungs
            for side in [-1.0, 1.0] {
                let lx = (p[0] - side * 0.2 * e[0]) / (0.15 * e[0]);
                let ly = (p[1] - 0.02 * e[1]) / (0.22 * e[1]);
                if lx * lx + ly * ly <= 1.0 {
                    return ((-850.0 + texture) as f32, 0);
                }
            }
        } else if p[2] < z_lo {
            // pelvis: bony ring
            let rx = p[0] / (0.32 * e[0]);
            let ry = p[1] / (0.25 * e[1]);
            let r = rx * rx + ry * ry;
            if (0.6..=1.0).contains(&r) {
                return ((500.0 + texture) as f32, 0);
            }
        }
        for (i, organ) in self.organs().iter().enumerate() {
            if organ.level(p) <= 1.0 {
                return ((self.organ_hu[i] as f64 + texture) as f32, ORGANS[i]);
            }
        }
        ((self.body_hu as f64 + texture) as f32, 0)
    }

    /// Body-part score of a model-space axial position: linear, `+5` at the
    /// bottom of the abdominal window and `-6` at its top.
    pub fn score_at(&self, z: f64) -> f64 {
        let (z_lo, z_hi) = self.window_z();
        let (s_lo, s_hi) = WINDOW_SCORES;
        s_lo + (z - z_lo) / (z_hi - z_lo) * (s_hi - s_lo)
    }
}

/// Grid whose voxel centres are symmetric about the world origin.
pub fn centered_geometry(dims: [usize; 3], spacing: Vec3) -> GridGeometry {
    let origin = core::array::from_fn(|a| -0.5 * (dims[a] as f64 - 1.0) * spacing[a]);
    GridGeometry::axis_aligned(dims, spacing, origin).expect("positive spacing")
}

/// Renders the model on `geometry`; `to_model` maps a world point to the
/// model point it depicts.
pub fn render(
    model: &BodyModel,
    geometry: &GridGeometry,
    to_model: impl Fn(Vec3) -> Vec3,
) -> (ImageVolume, LabelVolume) {
    let mut hu = Vec::with_capacity(geometry.len());
    let mut labels = Vec::with_capacity(geometry.len());
    for o in 0..geometry.len() {
        let idx = geometry.index_of(o).map(|c| c as f64);
        let (h, l) = model.eval(to_model(geometry.voxel_to_world(idx)));
        hu.push(h);
        labels.push(l);
    }
    (
        Volume::new(geometry.clone(), hu, AIR_HU).expect("sizes match"),
        Volume::new(geometry.clone(), labels, 0).expect("sizes match"),
    )
}

/// Slice scores of a rendering whose world z equals model z.
pub fn score_track(model: &BodyModel, geometry: &GridGeometry) -> Vec<f64> {
    let [nx, ny, nz] = geometry.dims();
    let c = [(nx as f64 - 1.0) * 0.5, (ny as f64 - 1.0) * 0.5];
    (0..nz)
        .map(|k| {
            let z = geometry.voxel_to_world([c[0], c[1], k as f64])[2];
            model.score_at(z).clamp(crate::fov::SCORE_MIN, crate::fov::SCORE_MAX)
        })
        .collect()
}

/// Smooth displacement field (voxel units) whose components are products of
/// sinusoids spanning the grid; the largest component magnitude equals
/// `amplitude`.
pub fn sinusoidal_field(geometry: &GridGeometry, amplitude: f64) -> DisplacementField {
    let d = geometry.dims().map(|n| n as f64);
    let f = DisplacementField::from_fn(geometry.clone(), |[i, j, k]| {
        let u = [i as f64 / d[0], j as f64 / d[1], k as f64 / d[2]];
        // zero on the grid faces so every true correspondence stays in view
        let envelope = math::sin(PI * u[0]) * math::sin(PI * u[1]) * math::sin(PI * u[2]);
        [
            envelope * math::sin(2.0 * PI * u[2] + 0.4),
            envelope * math::sin(2.0 * PI * u[0] + 1.0),
            envelope * math::sin(2.0 * PI * u[1] + 2.2),
        ]
    });
    let peak = f.max_abs_component();
    let s = amplitude / peak;
    DisplacementField::from_fn(geometry.clone(), |[i, j, k]| f.get(i, j, k).map(|c| c * s))
}

/// Bounds for random affine draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineLimits {
    pub rotation_deg: f64,
    pub scale: (f64, f64),
    pub translation_mm: f64,
    pub shear: f64,
}

impl AffineLimits {
    pub const MILD: Self = Self {
        rotation_deg: 10.0,
        scale: (0.9, 1.1),
        translation_mm: 5.0,
        shear: 0.05,
    };
}

/// Random affine within `limits`, centred on the world origin.
pub fn random_affine(rng: &mut impl Rng, limits: &AffineLimits) -> AffineTransform {
    let r = limits.rotation_deg.to_radians();
    let params = AffineParams {
        translation: core::array::from_fn(|_| rng.gen_range(-limits.translation_mm..=limits.translation_mm)),
        rotation: core::array::from_fn(|_| rng.gen_range(-r..=r)),
        scale: core::array::from_fn(|_| rng.gen_range(limits.scale.0..=limits.scale.1)),
        shear: core::array::from_fn(|_| rng.gen_range(-limits.shear..=limits.shear)),
        center: [0.0; 3],
    };
    AffineTransform::from_params(&params)
}

/// A synthetic subject: its images and the world→model map that made them.
#[derive(Debug, Clone)]
pub struct Subject {
    pub image: ImageVolume,
    pub labels: LabelVolume,
    pub scores: Vec<f64>,
    /// World (subject) → model space.
    pub to_model: AffineTransform,
}

/// Cohort generator options.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub dims: [usize; 3],
    pub spacing: Vec3,
    pub phase: Phase,
    pub limits: AffineLimits,
    /// Extra axial slices added above (chest) and below (pelvis) the window.
    pub distractor_slices: (usize, usize),
    pub seed: u64,
}

impl CohortSpec {
    pub fn new(dims: [usize; 3], spacing: Vec3, seed: u64) -> Self {
        Self {
            dims,
            spacing,
            phase: Phase::PortalVenous,
            limits: AffineLimits {
                rotation_deg: 5.0,
                scale: (0.95, 1.05),
                translation_mm: 2.0 * spacing[0],
                shear: 0.02,
            },
            distractor_slices: (0, 0),
            seed,
        }
    }

    pub fn model(&self) -> BodyModel {
        BodyModel::for_phase(self.window_extent(), self.phase)
    }

    fn window_extent(&self) -> Vec3 {
        core::array::from_fn(|a| self.dims[a] as f64 * self.spacing[a])
    }

    /// Reference rendering of the abdominal window.
    pub fn atlas(&self) -> (ImageVolume, LabelVolume) {
        let g = centered_geometry(self.dims, self.spacing);
        render(&self.model(), &g, |p| p)
    }

    /// `n` subjects, each a randomly posed rendering, optionally with extra
    /// chest and pelvis slices.
    pub fn subjects(&self, n: usize) -> Vec<Subject> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let model = self.model();
        let (above, below) = self.distractor_slices;
        let dims = [self.dims[0], self.dims[1], self.dims[2] + above + below];
        let base = centered_geometry(dims, self.spacing);
        // shift so the window sits where it does in the atlas
        let shift = (above as f64 - below as f64) * 0.5 * self.spacing[2];
        let geometry = base.with_origin({
            let o = base.origin();
            [o[0], o[1], o[2] + shift]
        });
        (0..n)
            .map(|_| {
                let to_model = random_affine(&mut rng, &self.limits);
                let (image, labels) = render(&model, &geometry, |p| to_model.apply(p));
                let scores = subject_scores(&model, &geometry, &to_model);
                Subject {
                    image,
                    labels,
                    scores,
                    to_model,
                }
            })
            .collect()
    }
}

fn subject_scores(model: &BodyModel, geometry: &GridGeometry, to_model: &AffineTransform) -> Vec<f64> {
    let [nx, ny, nz] = geometry.dims();
    let c = [(nx as f64 - 1.0) * 0.5, (ny as f64 - 1.0) * 0.5];
    (0..nz)
        .map(|k| {
            let z = to_model.apply(geometry.voxel_to_world([c[0], c[1], k as f64]))[2];
            model.score_at(z).clamp(crate::fov::SCORE_MIN, crate::fov::SCORE_MAX)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atlas_has_all_organs_and_air() {
        let (img, labels) = CohortSpec::new([32, 32, 24], [2.0; 3], 1).atlas();
        for id in ORGANS {
            assert!(labels.data().contains(&id));
        }
        assert!(img.data().contains(&AIR_HU));
        let hu = |l: u16| {
            let (s, n) = img
                .data()
                .iter()
                .zip(labels.data())
                .filter(|(_, &x)| x == l)
                .fold((0.0, 0), |(s, n), (&v, _)| (s + v as f64, n + 1));
            s / n as f64
        };
        assert!(math::abs(hu(1) - hu(2)) > 50.0 && math::abs(hu(2) - hu(3)) > 50.0);
    }

    #[test]
    fn window_scores_span_default_range() {
        let spec = CohortSpec::new([16, 16, 23], [2.0; 3], 1);
        let g = centered_geometry(spec.dims, spec.spacing);
        let model = spec.model();
        let s = score_track(&model, &g);
        // voxel centres sit half a slice inside the window edges
        assert!(s[0] < 5.0 && s[0] > 4.5);
        assert!(s[22] > -6.0 && s[22] < -5.5);
        assert!(s.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn distractors_extend_the_track() {
        let mut spec = CohortSpec::new([16, 16, 20], [2.0; 3], 3);
        spec.distractor_slices = (6, 2);
        let s = &spec.subjects(1)[0];
        assert_eq!(s.image.dims(), [16, 16, 28]);
        assert!(s.scores[27] < -6.0 && s.scores[0] > 5.0);
    }

    #[test]
    fn sinusoid_peak_matches_amplitude() {
        let f = sinusoidal_field(&GridGeometry::unit([16, 16, 16]), 6.0);
        assert!((f.max_abs_component() - 6.0).abs() < 1e-5);
    }

    #[test]
    fn cohort_is_reproducible() {
        let spec = CohortSpec::new([12, 12, 10], [2.0; 3], 9);
        let a = spec.subjects(2);
        let b = spec.subjects(2);
        assert_eq!(a[1].image, b[1].image);
        assert_ne!(a[0].image, a[1].image);
    }
}
