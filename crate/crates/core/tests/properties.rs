//! Invariants of the metrics, atlas accumulators, statistics and the tree
//! optimiser over randomly generated inputs.

use atlasreg_core::atlas::{fuse_labels_majority, mean_map, variance_map, IntensityAccumulator, VoteAccumulator};
use atlasreg_core::geometry::GridGeometry;
use atlasreg_core::metrics::{dice, hausdorff};
use atlasreg_core::mrf::{minimum_spanning_tree, mst_optimize, tree_objective, ControlGraph, CostTable, LabelGrid};
use atlasreg_core::stats::wilcoxon_signed_rank;
use atlasreg_core::volume::{ImageVolume, LabelVolume, Volume};
use proptest::prelude::*;

const DIMS: [usize; 3] = [5, 4, 3];
const N: usize = 5 * 4 * 3;

fn geometry() -> GridGeometry {
    GridGeometry::axis_aligned(DIMS, [0.8, 1.0, 1.5], [0.0; 3]).unwrap()
}

fn labels(data: Vec<u16>) -> LabelVolume {
    Volume::new(geometry(), data, 0).unwrap()
}

fn image(data: Vec<f32>) -> ImageVolume {
    Volume::new(geometry(), data, -1000.0).unwrap()
}

fn mask() -> impl Strategy<Value = LabelVolume> {
    proptest::collection::vec(0u16..=1, N).prop_map(labels)
}

fn label_stack() -> impl Strategy<Value = Vec<LabelVolume>> {
    proptest::collection::vec(proptest::collection::vec(0u16..4, N).prop_map(labels), 1..7)
}

fn image_stack() -> impl Strategy<Value = Vec<ImageVolume>> {
    proptest::collection::vec(proptest::collection::vec(-1000.0f32..1000.0, N).prop_map(image), 2..7)
}

proptest! {
    #[test]
    fn dice_is_symmetric_and_bounded(a in mask(), b in mask()) {
        let ab = dice(&a, &b).unwrap();
        prop_assert_eq!(ab, dice(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn hausdorff_is_symmetric_and_zero_on_itself(a in mask(), b in mask()) {
        let ab = hausdorff(&a, &b).ok();
        prop_assert_eq!(ab, hausdorff(&b, &a).ok());
        if let Some(d) = ab {
            prop_assert!(d >= 0.0);
            prop_assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn fusion_ignores_input_order(stack in label_stack(), seed in any::<u64>()) {
        let mut shuffled = stack.clone();
        let len = shuffled.len();
        for i in (1..len).rev() {
            shuffled.swap(i, (seed.rotate_left(i as u32) % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(fuse_labels_majority(&stack).unwrap(), fuse_labels_majority(&shuffled).unwrap());
    }

    #[test]
    fn vote_shards_merge_to_the_sequential_result(stack in label_stack(), split in 0usize..7) {
        let split = split.min(stack.len());
        let mut left = VoteAccumulator::new(geometry());
        let mut right = VoteAccumulator::new(geometry());
        for v in &stack[..split] {
            left.add(v).unwrap();
        }
        for v in &stack[split..] {
            right.add(v).unwrap();
        }
        left.merge(&right).unwrap();
        prop_assert_eq!(left.fused().unwrap(), fuse_labels_majority(&stack).unwrap());
    }

    #[test]
    fn intensity_shards_merge_to_the_sequential_result(stack in image_stack(), split in 0usize..7) {
        let split = split.min(stack.len());
        let mut left = IntensityAccumulator::new(geometry());
        let mut right = IntensityAccumulator::new(geometry());
        for v in &stack[..split] {
            left.add(v).unwrap();
        }
        for v in &stack[split..] {
            right.add(v).unwrap();
        }
        left.merge(&right).unwrap();
        let sequential = mean_map(&stack).unwrap();
        for (a, b) in left.mean().unwrap().data().iter().zip(sequential.data()) {
            prop_assert!((a - b).abs() <= 1e-3, "{} vs {}", a, b);
        }
        let merged_var = left.variance().unwrap();
        let seq_var = variance_map(&stack, &sequential).unwrap();
        for (a, b) in merged_var.data().iter().zip(seq_var.data()) {
            prop_assert!((a - b).abs() <= 1e-4, "{} vs {}", a, b);
        }
    }

    #[test]
    fn mean_ignores_input_order(stack in image_stack()) {
        let mut reversed = stack.clone();
        reversed.reverse();
        let a = mean_map(&stack).unwrap();
        let b = mean_map(&reversed).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-3);
        }
    }

    #[test]
    fn variance_map_is_normalised(stack in image_stack()) {
        let mean = mean_map(&stack).unwrap();
        let var = variance_map(&stack, &mean).unwrap();
        prop_assert!(var.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn wilcoxon_is_symmetric_in_its_samples(
        pairs in proptest::collection::vec((0i32..8, 0i32..8), 5..20),
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let (Ok(ab), Ok(ba)) = (wilcoxon_signed_rank(&a, &b), wilcoxon_signed_rank(&b, &a)) else {
            // too few non-zero differences; both directions must agree on that
            prop_assert!(wilcoxon_signed_rank(&a, &b).is_err() && wilcoxon_signed_rank(&b, &a).is_err());
            return Ok(());
        };
        let n = ab.n as f64;
        prop_assert_eq!(ab.n, ba.n);
        prop_assert_eq!(ab.w_plus + ba.w_plus, n * (n + 1.0) / 2.0);
        prop_assert!((ab.p_value - ba.p_value).abs() <= 1e-12);
        prop_assert!(ab.p_value > 0.0 && ab.p_value <= 1.0);
    }

    #[test]
    fn tree_optimum_matches_enumeration(
        n_nodes in 1usize..=4,
        half in 0usize..=1,
        raw_costs in proptest::collection::vec(0u32..64, 4 * 3),
        raw_weights in proptest::collection::vec(0u32..16, 6),
        alpha_index in 0usize..4,
    ) {
        let labels = LabelGrid::new([half, 0, 0], 1.0).unwrap();
        let n_labels = labels.len();
        let costs: Vec<f64> = raw_costs[..n_nodes * n_labels].iter().map(|&c| c as f64 / 8.0).collect();
        let costs = CostTable::new(n_nodes, n_labels, costs).unwrap();
        let alpha = [0.0, 0.5, 1.0, 2.0][alpha_index];
        let mut edges = Vec::new();
        let mut w = raw_weights.iter();
        for b in 1..n_nodes {
            for a in 0..b {
                edges.push((a, b, *w.next().unwrap() as f64));
            }
        }
        let graph = ControlGraph::new(n_nodes, edges).unwrap();
        let tree = minimum_spanning_tree(&graph).unwrap();
        let got = mst_optimize(&costs, &labels, &graph, alpha).unwrap();
        let got_value = tree_objective(&costs, &labels, &tree, alpha, &got);
        let mut best = f64::INFINITY;
        for code in 0..n_labels.pow(n_nodes as u32) {
            let assignment: Vec<usize> = (0..n_nodes).map(|i| code / n_labels.pow(i as u32) % n_labels).collect();
            best = best.min(tree_objective(&costs, &labels, &tree, alpha, &assignment));
        }
        prop_assert_eq!(got_value, best);
    }
}
