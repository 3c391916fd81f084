//! Two-stage registration: descriptor block matching drives a robust 12-DOF
//! affine fit, then multi-level dense displacement sampling with exact
//! tree-structured optimisation refines it into a dense field.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::affine::{fit_affine_robust_axes, AffineTransform};
use crate::descriptor::{compute_ssc, mean_distance, DescriptorParams, DistanceMetric, SscDescriptorVolume};
use crate::error::{Error, Result};
use crate::field::{DisplacementField, Resolution};
use crate::geometry::GridGeometry;
use crate::linalg::Vec3;
use crate::math;
use crate::mrf::{self, ControlGraph, CostTable, LabelGrid};
use crate::volume::{ImageVolume, Volume};

/// Coarse-to-fine schedule shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationLevels {
    /// Control-grid spacing per level, voxels.
    pub grid_spacing: Vec<usize>,
    /// Search radius per level, in steps.
    pub search_steps: Vec<usize>,
    /// Step between candidate displacements per level, voxels.
    pub step_size: Vec<usize>,
    /// Regularisation weight, relative to the per-level data-cost scale.
    pub alpha: f64,
}

impl Default for RegistrationLevels {
    fn default() -> Self {
        Self {
            grid_spacing: vec![8, 7, 6, 5, 4],
            search_steps: vec![6, 5, 4, 3, 2],
            step_size: vec![5, 4, 3, 2, 1],
            alpha: 1.0,
        }
    }
}

impl RegistrationLevels {
    pub fn n_levels(&self) -> usize {
        self.grid_spacing.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid_spacing.len();
        if n == 0 {
            return Err(Error::Config("at least one level is required".into()));
        }
        if self.search_steps.len() != n || self.step_size.len() != n {
            return Err(Error::Config(format!(
                "per-level lengths differ: grid {n}, search {}, step {}",
                self.search_steps.len(),
                self.step_size.len()
            )));
        }
        for (name, seq) in [
            ("grid_spacing", &self.grid_spacing),
            ("search_steps", &self.search_steps),
            ("step_size", &self.step_size),
        ] {
            if seq.iter().any(|&v| v < 1) {
                return Err(Error::Config(format!("{name} entries must be >= 1")));
            }
            if seq.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::Config(format!("{name} must be non-increasing: {seq:?}")));
            }
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Per-axis bound on any displacement the schedule can produce.
    pub fn reach(&self) -> f64 {
        self.search_steps
            .iter()
            .zip(&self.step_size)
            .map(|(s, q)| (s * q) as f64)
            .sum()
    }
}

/// Rounds of `[1, 2, 1]` lattice smoothing applied to each level's node
/// displacements. The tree prior leaves lattice neighbours that are far apart
/// in the tree unconstrained; smoothing removes the resulting seams and keeps
/// the field invertible.
pub const NODE_SMOOTHING_PASSES: usize = 4;

/// Upper bound on the voxels sampled per control cell.
pub const MAX_CELL_SAMPLES: usize = 64;
const SAMPLES_PER_AXIS: usize = 4;

/// Control cells tiling the fixed grid at a given spacing.
struct Cells {
    dims: [usize; 3],
    centers: Vec<Vec3>,
    samples: Vec<Vec<[usize; 3]>>,
    /// Per-axis interpolation tables from voxel to node coordinates.
    axis_nodes: [Vec<(usize, usize, f64)>; 3],
}

impl Cells {
    fn new(vol_dims: [usize; 3], spacing: usize) -> Self {
        let dims = vol_dims.map(|n| n.div_ceil(spacing));
        let ranges: [Vec<(usize, usize)>; 3] = core::array::from_fn(|a| {
            (0..dims[a])
                .map(|c| (c * spacing, ((c + 1) * spacing).min(vol_dims[a])))
                .collect()
        });
        // stratified positions inside each cell
        let strata: [Vec<Vec<usize>>; 3] = core::array::from_fn(|a| {
            ranges[a]
                .iter()
                .map(|&(lo, hi)| {
                    let len = hi - lo;
                    let m = len.min(SAMPLES_PER_AXIS);
                    (0..m).map(|t| lo + (2 * t + 1) * len / (2 * m)).collect()
                })
                .collect()
        });
        let n = dims[0] * dims[1] * dims[2];
        let mut centers = Vec::with_capacity(n);
        let mut samples = Vec::with_capacity(n);
        for c in 0..n {
            let idx = [c % dims[0], c / dims[0] % dims[1], c / (dims[0] * dims[1])];
            let center: Vec3 = core::array::from_fn(|a| (ranges[a][idx[a]].0 + ranges[a][idx[a]].1 - 1) as f64 * 0.5);
            centers.push(center);
            let mut s = Vec::with_capacity(MAX_CELL_SAMPLES);
            for &z in &strata[2][idx[2]] {
                for &y in &strata[1][idx[1]] {
                    for &x in &strata[0][idx[0]] {
                        s.push([x, y, z]);
                    }
                }
            }
            samples.push(s);
        }
        let axis_nodes = core::array::from_fn(|a| {
            let node_pos: Vec<f64> = ranges[a].iter().map(|&(lo, hi)| (lo + hi - 1) as f64 * 0.5).collect();
            (0..vol_dims[a]).map(|x| interp_entry(&node_pos, x as f64)).collect()
        });
        Self {
            dims,
            centers,
            samples,
            axis_nodes,
        }
    }

    fn len(&self) -> usize {
        self.centers.len()
    }

    /// `passes` rounds of separable `[1, 2, 1] / 4` filtering over the node
    /// lattice (edges replicated).
    fn smooth_nodes(&self, node_vecs: &mut [Vec3], passes: usize) {
        let nd = self.dims;
        let strides = [1usize, nd[0], nd[0] * nd[1]];
        let mut tmp = node_vecs.to_vec();
        for _ in 0..passes {
            for axis in 0..3 {
                let stride = strides[axis];
                for (n, out) in tmp.iter_mut().enumerate() {
                    let pos = n / stride % nd[axis];
                    let lo = if pos > 0 { n - stride } else { n };
                    let hi = if pos + 1 < nd[axis] { n + stride } else { n };
                    for c in 0..3 {
                        out[c] = 0.25 * node_vecs[lo][c] + 0.5 * node_vecs[n][c] + 0.25 * node_vecs[hi][c];
                    }
                }
                node_vecs.copy_from_slice(&tmp);
            }
        }
    }

    /// Trilinear interpolation of node vectors onto every voxel.
    fn densify(&self, vol_dims: [usize; 3], node_vecs: &[Vec3]) -> Vec<Vec3> {
        let nd = self.dims;
        let mut out = Vec::with_capacity(vol_dims.iter().product());
        for k in 0..vol_dims[2] {
            let (z0, z1, fz) = self.axis_nodes[2][k];
            for j in 0..vol_dims[1] {
                let (y0, y1, fy) = self.axis_nodes[1][j];
                for i in 0..vol_dims[0] {
                    let (x0, x1, fx) = self.axis_nodes[0][i];
                    let mut v = [0.0; 3];
                    for (zz, wz) in [(z0, 1.0 - fz), (z1, fz)] {
                        for (yy, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                            for (xx, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                                let w = wx * wy * wz;
                                if w == 0.0 {
                                    continue;
                                }
                                let n = &node_vecs[xx + nd[0] * (yy + nd[1] * zz)];
                                for c in 0..3 {
                                    v[c] += w * n[c];
                                }
                            }
                        }
                    }
                    out.push(v);
                }
            }
        }
        out
    }
}

/// Bracketing node indices and weight of the upper one, clamped at the ends.
fn interp_entry(nodes: &[f64], x: f64) -> (usize, usize, f64) {
    let last = nodes.len() - 1;
    if x <= nodes[0] {
        return (0, 0, 0.0);
    }
    if x >= nodes[last] {
        return (last, last, 0.0);
    }
    let hi = nodes.partition_point(|&p| p <= x);
    let lo = hi - 1;
    (lo, hi, (x - nodes[lo]) / (nodes[hi] - nodes[lo]))
}

/// Mean descriptor distance per cell and candidate displacement.
fn cost_table(
    fixed: &SscDescriptorVolume,
    warped: &SscDescriptorVolume,
    cells: &Cells,
    labels: &LabelGrid,
    metric: DistanceMetric,
) -> CostTable {
    let n_labels = labels.len();
    let integer_step = math::floor(labels.step()) == labels.step();
    let mut data = Vec::with_capacity(cells.len() * n_labels);
    let mut fixed_desc = Vec::with_capacity(MAX_CELL_SAMPLES);
    for samples in &cells.samples {
        fixed_desc.clear();
        fixed_desc.extend(samples.iter().map(|s| *fixed.at(s[0], s[1], s[2])));
        let inv = 1.0 / samples.len() as f64;
        for l in 0..n_labels {
            let mut total = 0.0f64;
            if integer_step {
                let off = labels.offsets(l).map(|o| o * labels.step() as isize);
                for (s, fd) in samples.iter().zip(&fixed_desc) {
                    let p = [s[0] as isize + off[0], s[1] as isize + off[1], s[2] as isize + off[2]];
                    total += metric.eval(fd, warped.at_clamped(p)) as f64;
                }
            } else {
                let d = labels.displacement(l);
                for (s, fd) in samples.iter().zip(&fixed_desc) {
                    let p = [s[0] as f64 + d[0], s[1] as f64 + d[1], s[2] as f64 + d[2]];
                    total += metric.eval(fd, &warped.sample_trilinear(p)) as f64;
                }
            }
            data.push(total * inv);
        }
    }
    CostTable::new(cells.len(), n_labels, data).expect("cost table is well formed")
}

/// Lowest-cost label, ties resolved in the label grid's tie order.
fn argmin(row: &[f64], labels: &LabelGrid) -> usize {
    labels
        .tie_order()
        .iter()
        .copied()
        .fold(labels.zero_label(), |b, l| if row[l] < row[b] { l } else { b })
}

/// How much each displacement component of the best label is pinned down:
/// the cost margin to the best label that differs in that component.
fn axis_confidence(row: &[f64], labels: &LabelGrid, best: usize) -> [f64; 3] {
    let ob = labels.offsets(best);
    let mut rival = [f64::INFINITY; 3];
    for (l, &c) in row.iter().enumerate() {
        let o = labels.offsets(l);
        for a in 0..3 {
            if o[a] != ob[a] && c < rival[a] {
                rival[a] = c;
            }
        }
    }
    rival.map(|r| if r.is_finite() { (r - row[best]).max(0.0) } else { 0.0 })
}

/// HU above which a voxel counts as body for centroid initialisation.
const FOREGROUND_HU: f32 = -500.0;

fn foreground_centroid_world(vol: &ImageVolume) -> Vec3 {
    let geom = vol.geometry();
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for (off, &v) in vol.data().iter().enumerate() {
        if v > FOREGROUND_HU {
            let idx = geom.index_of(off);
            for a in 0..3 {
                sum[a] += idx[a] as f64;
            }
            count += 1;
        }
    }
    if count == 0 {
        return geom.center_world();
    }
    geom.voxel_to_world(sum.map(|s| s / count as f64))
}

fn overlaps(a: &GridGeometry, b: &GridGeometry) -> bool {
    let (alo, ahi) = a.world_bounds();
    let (blo, bhi) = b.world_bounds();
    (0..3).all(|i| alo[i] < bhi[i] && blo[i] < ahi[i])
}

/// Samples `moving` at `warp(x)` for each fixed voxel `x` (moving voxel units).
fn warp_by_map(moving: &ImageVolume, fixed_geom: &GridGeometry, warp: &AffineTransform) -> ImageVolume {
    Volume::from_fn(fixed_geom.clone(), moving.padding(), |[i, j, k]| {
        moving.sample_trilinear(warp.apply([i as f64, j as f64, k as f64]))
    })
}

/// One affine refinement level.
#[derive(Debug, Clone, Copy, PartialEq)]
struct AffineLevel {
    grid: usize,
    steps: usize,
    step: f64,
}

/// Extra sub-voxel levels appended to the affine schedule.
const SUBVOXEL_STEPS: [f64; 6] = [1.0, 1.0, 0.5, 0.5, 0.25, 0.25];

/// 12-DOF affine registration of `moving` onto `fixed`.
///
/// The transform starts from aligned foreground centroids. Each level places
/// control cells on the fixed grid, finds the best discrete displacement of
/// every cell against the currently warped moving image, fits an affine map
/// to the correspondences (each coordinate weighted by how sharply the cost
/// singles it out, then one robust reweighting round) and
/// composes it with the running estimate. Cells whose samples currently map
/// outside the moving image carry no weight, so padding at the edge of the
/// field of view cannot masquerade as anatomy. After the integer levels two
/// half- and quarter-voxel levels refine the estimate at the finest grid.
pub fn register_affine(
    fixed: &ImageVolume,
    moving: &ImageVolume,
    params: &DescriptorParams,
    levels: &RegistrationLevels,
) -> Result<AffineTransform> {
    levels.validate()?;
    params.validate()?;
    let fg = fixed.geometry();
    let mg = moving.geometry();
    if !overlaps(fg, mg) {
        return Err(Error::NoOverlap);
    }
    let fixed_to_world = AffineTransform::voxel_to_world(fg);
    let moving_from_world = AffineTransform::voxel_to_world(mg).inverse()?;
    let cf = foreground_centroid_world(fixed);
    let cm = foreground_centroid_world(moving);
    // fixed voxel -> moving voxel
    let mut warp = moving_from_world
        .compose(&AffineTransform::translation([
            cm[0] - cf[0],
            cm[1] - cf[1],
            cm[2] - cf[2],
        ]))
        .compose(&fixed_to_world);

    let mut schedule: Vec<AffineLevel> = (0..levels.n_levels())
        .map(|l| AffineLevel {
            grid: levels.grid_spacing[l],
            steps: levels.search_steps[l],
            step: levels.step_size[l] as f64,
        })
        .collect();
    let finest = levels.grid_spacing[levels.n_levels() - 1];
    schedule.extend(SUBVOXEL_STEPS.iter().map(|&step| AffineLevel {
        grid: finest,
        steps: 2,
        step,
    }));

    let md = mg.dims();
    let fixed_desc = compute_ssc(fixed, params)?;
    for level in schedule {
        let warped = warp_by_map(moving, fg, &warp);
        let warped_desc = compute_ssc(&warped, params)?;
        let cells = Cells::new(fg.dims(), level.grid);
        let labels = LabelGrid::cube(level.steps, level.step)?;
        let costs = cost_table(&fixed_desc, &warped_desc, &cells, &labels, params.metric);
        let mut src = Vec::with_capacity(cells.len());
        let mut dst = Vec::with_capacity(cells.len());
        let mut weights = Vec::with_capacity(cells.len());
        for (node, center) in cells.centers.iter().enumerate() {
            let row = costs.node(node);
            let best = argmin(row, &labels);
            let d = labels.displacement(best);
            src.push(*center);
            dst.push([center[0] + d[0], center[1] + d[1], center[2] + d[2]]);
            let inside = cells.samples[node].iter().all(|p| {
                let q = warp.apply(p.map(|c| c as f64));
                (0..3).all(|a| q[a] >= 0.0 && q[a] <= (md[a] - 1) as f64)
            });
            weights.push(if inside {
                axis_confidence(row, &labels, best)
            } else {
                [0.0; 3]
            });
        }
        let step = fit_affine_robust_axes(&src, &dst, &weights)?;
        warp = warp.compose(&step);
    }

    // warp = M⁻¹ ∘ A⁻¹ ∘ F  =>  A = F ∘ warp⁻¹ ∘ M⁻¹
    let affine = fixed_to_world.compose(&warp.inverse()?).compose(&moving_from_world);
    affine
        .validate()
        .map_err(|e| Error::DegenerateFit(format!("implausible affine: {e}")))?;
    Ok(affine)
}

/// Per-level diagnostics of the deformable stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformableReport {
    /// Mean descriptor distance before the first level, then after each level.
    pub objective: Vec<f64>,
    /// Whether each level's update was kept.
    pub accepted: Vec<bool>,
    /// Effective pairwise weight used at each level.
    pub alpha_effective: Vec<f64>,
}

/// See [`register_deformable_with_report`].
pub fn register_deformable(
    fixed: &ImageVolume,
    moving_affine: &ImageVolume,
    params: &DescriptorParams,
    levels: &RegistrationLevels,
) -> Result<DisplacementField> {
    register_deformable_with_report(fixed, moving_affine, params, levels).map(|(f, _)| f)
}

/// Deformable registration of an affinely pre-aligned moving image that
/// already lives on the fixed grid.
///
/// Per level: control cells at the level's grid spacing, a cubic window of
/// candidate displacements, data cost = mean descriptor distance over the
/// cell's sample voxels, pairwise cost `α·‖d_i − d_j‖²` on the minimum
/// spanning tree of the cell graph (edge weight = difference of mean fixed
/// intensity), solved exactly. The node solution is lightly smoothed over
/// the lattice, interpolated to every voxel and composed with the running
/// field. A level whose result raises the
/// mean descriptor distance is discarded.
pub fn register_deformable_with_report(
    fixed: &ImageVolume,
    moving_affine: &ImageVolume,
    params: &DescriptorParams,
    levels: &RegistrationLevels,
) -> Result<(DisplacementField, DeformableReport)> {
    levels.validate()?;
    params.validate()?;
    let fg = fixed.geometry().clone();
    if moving_affine.dims() != fg.dims() {
        return Err(Error::Shape(format!(
            "moving image {:?} is not on the fixed grid {:?}",
            moving_affine.dims(),
            fg.dims()
        )));
    }
    let dims = fg.dims();
    let fixed_desc = compute_ssc(fixed, params)?;
    let mut field: Vec<Vec3> = vec![[0.0; 3]; fg.len()];
    let mut warped_desc = compute_ssc(moving_affine, params)?;
    let mut objective = mean_distance(&fixed_desc, &warped_desc, params.metric)?;
    let mut report = DeformableReport {
        objective: vec![objective],
        accepted: Vec::new(),
        alpha_effective: Vec::new(),
    };

    for l in 0..levels.n_levels() {
        let cells = Cells::new(dims, levels.grid_spacing[l]);
        let steps = levels.search_steps[l];
        let step = levels.step_size[l] as f64;
        let labels = LabelGrid::cube(steps, step)?;
        let radius = levels.step_size[l] / 2;
        let costs = cost_table(
            &fixed_desc.smoothed(radius),
            &warped_desc.smoothed(radius),
            &cells,
            &labels,
            params.metric,
        );

        let mut ranges: Vec<f64> = (0..cells.len())
            .map(|n| {
                let row = costs.node(n);
                let (lo, hi) = row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
                hi - lo
            })
            .collect();
        ranges.sort_by(f64::total_cmp);
        let median_range = ranges[ranges.len() / 2];
        // a neighbour difference spanning the whole search radius costs
        // `alpha` times the typical data-cost range of a node
        let radius_vox = levels.search_steps[l] as f64 * step;
        let alpha = levels.alpha * median_range / (radius_vox * radius_vox);

        let means: Vec<f64> = cells
            .samples
            .iter()
            .map(|s| s.iter().map(|p| fixed.get(p[0], p[1], p[2]) as f64).sum::<f64>() / s.len() as f64)
            .collect();
        let graph = ControlGraph::lattice(cells.dims, |a, b| (means[a] - means[b]).abs());
        let assignment = mrf::mst_optimize(&costs, &labels, &graph, alpha)?;
        let mut node_vecs: Vec<Vec3> = assignment.iter().map(|&a| labels.displacement(a)).collect();
        cells.smooth_nodes(&mut node_vecs, NODE_SMOOTHING_PASSES);
        let increment = cells.densify(dims, &node_vecs);

        // compose: x -> x + d(x) -> (x + d) + u(x + d)
        let current = DisplacementField::new(fg.clone(), to_f32(&field), Resolution::Dense)?;
        let candidate: Vec<Vec3> = increment
            .iter()
            .enumerate()
            .map(|(off, d)| {
                let [i, j, k] = fg.index_of(off);
                let u = current.sample([i as f64 + d[0], j as f64 + d[1], k as f64 + d[2]]);
                [d[0] + u[0], d[1] + u[1], d[2] + u[2]]
            })
            .collect();
        let warped = warp_dense(moving_affine, &fg, &candidate);
        let desc = compute_ssc(&warped, params)?;
        let obj = mean_distance(&fixed_desc, &desc, params.metric)?;
        let accept = obj <= objective;
        if accept {
            field = candidate;
            warped_desc = desc;
            objective = obj;
        }
        report.objective.push(objective);
        report.accepted.push(accept);
        report.alpha_effective.push(alpha);
    }
    let out = DisplacementField::new(fg, to_f32(&field), Resolution::Dense)?;
    Ok((out, report))
}

fn to_f32(v: &[Vec3]) -> Vec<[f32; 3]> {
    v.iter().map(|d| d.map(|c| c as f32)).collect()
}

fn warp_dense(moving: &ImageVolume, geom: &GridGeometry, field: &[Vec3]) -> ImageVolume {
    Volume::from_fn(geom.clone(), moving.padding(), |[i, j, k]| {
        let d = field[geom.offset(i, j, k)];
        moving.sample_trilinear([i as f64 + d[0], j as f64 + d[1], k as f64 + d[2]])
    })
}

/// Negated mean descriptor distance between two images on one grid; higher
/// is more similar, 0 is identical.
pub fn similarity(fixed: &ImageVolume, warped: &ImageVolume, params: &DescriptorParams) -> Result<f64> {
    let a = compute_ssc(fixed, params)?;
    let b = compute_ssc(warped, params)?;
    Ok(-mean_distance(&a, &b, params.metric)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_is_valid() {
        let l = RegistrationLevels::default();
        l.validate().unwrap();
        assert_eq!(l.n_levels(), 5);
        assert_eq!(l.reach(), 30.0 + 20.0 + 12.0 + 6.0 + 2.0);
    }

    #[test]
    fn invalid_schedules() {
        let mut l = RegistrationLevels::default();
        l.step_size.pop();
        assert!(matches!(l.validate(), Err(Error::Config(_))));
        let l = RegistrationLevels {
            grid_spacing: vec![4, 5, 6, 7, 8],
            ..RegistrationLevels::default()
        };
        assert!(l.validate().is_err());
        let mut l = RegistrationLevels::default();
        l.search_steps[4] = 0;
        assert!(l.validate().is_err());
    }

    #[test]
    fn cells_cover_grid_with_bounded_samples() {
        let c = Cells::new([20, 17, 9], 8);
        assert_eq!(c.dims, [3, 3, 2]);
        assert!(c.samples.iter().all(|s| !s.is_empty() && s.len() <= MAX_CELL_SAMPLES));
        let dense = c.densify([20, 17, 9], &vec![[1.0, 2.0, 3.0]; c.len()]);
        assert!(dense
            .iter()
            .all(|v| (v[0] - 1.0).abs() < 1e-12 && (v[2] - 3.0).abs() < 1e-12));
    }

    #[test]
    fn interp_entry_brackets() {
        let nodes = [1.5, 5.5, 9.5];
        assert_eq!(interp_entry(&nodes, 0.0), (0, 0, 0.0));
        assert_eq!(interp_entry(&nodes, 3.5), (0, 1, 0.5));
        assert_eq!(interp_entry(&nodes, 9.5), (2, 2, 0.0));
    }
}
