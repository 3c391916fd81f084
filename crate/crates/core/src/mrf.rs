//! Exact discrete optimisation of displacement labels on a spanning tree.
//!
//! Minimises `Σ_i cost_i(d_i) + α Σ_(i,j)∈tree ‖d_i − d_j‖²` by leaf-to-root
//! min-sum message passing. Messages are squared-distance min-convolutions on
//! the displacement lattice, computed with the lower-envelope transform, so
//! each edge costs O(labels) rather than O(labels²).

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dt;
use crate::error::{Error, Result};
use crate::linalg::Vec3;

/// Regular 3-D lattice of candidate displacements
/// `{-h_a·step, …, 0, …, +h_a·step}` per axis, axis 0 varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    half: [usize; 3],
    step: f64,
    /// Label indices sorted by the tie-break rule.
    tie_order: Vec<usize>,
}

impl LabelGrid {
    pub fn new(half: [usize; 3], step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::Config(format!("label step must be positive, got {step}")));
        }
        let mut grid = Self {
            half,
            step,
            tie_order: Vec::new(),
        };
        let mut order: Vec<usize> = (0..grid.len()).collect();
        // smaller magnitude first, then lexicographic on (x, y, z)
        order.sort_by(|&a, &b| {
            let (ia, ib) = (grid.offsets(a), grid.offsets(b));
            let ma: isize = ia.iter().map(|v| v * v).sum();
            let mb: isize = ib.iter().map(|v| v * v).sum();
            ma.cmp(&mb).then(ia.cmp(&ib))
        });
        grid.tie_order = order;
        Ok(grid)
    }

    /// Isotropic search window of `steps` steps per direction.
    pub fn cube(steps: usize, step: f64) -> Result<Self> {
        Self::new([steps; 3], step)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.half.map(|h| 2 * h + 1)
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Signed lattice offsets (in steps) of a label.
    pub fn offsets(&self, label: usize) -> [isize; 3] {
        let d = self.dims();
        let idx = [label % d[0], label / d[0] % d[1], label / (d[0] * d[1])];
        [
            idx[0] as isize - self.half[0] as isize,
            idx[1] as isize - self.half[1] as isize,
            idx[2] as isize - self.half[2] as isize,
        ]
    }

    pub fn displacement(&self, label: usize) -> Vec3 {
        self.offsets(label).map(|o| o as f64 * self.step)
    }

    pub fn zero_label(&self) -> usize {
        let d = self.dims();
        self.half[0] + d[0] * (self.half[1] + d[1] * self.half[2])
    }

    /// Label indices in tie-break order: zero displacement first.
    pub fn tie_order(&self) -> &[usize] {
        &self.tie_order
    }

    fn sq_dist(&self, a: usize, b: usize) -> f64 {
        let (oa, ob) = (self.offsets(a), self.offsets(b));
        let s: isize = (0..3).map(|i| (oa[i] - ob[i]) * (oa[i] - ob[i])).sum();
        s as f64 * self.step * self.step
    }
}

/// Per-node data costs, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    n_nodes: usize,
    n_labels: usize,
    data: Vec<f64>,
}

impl CostTable {
    pub fn new(n_nodes: usize, n_labels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_nodes * n_labels {
            return Err(Error::Shape(format!(
                "cost table holds {} values, expected {n_nodes}×{n_labels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("cost table has non-finite entries".into()));
        }
        Ok(Self {
            n_nodes,
            n_labels,
            data,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_labels..(i + 1) * self.n_labels]
    }
}

/// Undirected weighted graph over control nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGraph {
    n_nodes: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl ControlGraph {
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(e) = edges.iter().find(|e| e.0 >= n_nodes || e.1 >= n_nodes || e.0 == e.1) {
            return Err(Error::Graph(format!("invalid edge {e:?} for {n_nodes} nodes")));
        }
        Ok(Self { n_nodes, edges })
    }

    /// 6-connected lattice of `dims` nodes (axis 0 fastest), edge weights from
    /// `weight(a, b)`.
    pub fn lattice(dims: [usize; 3], mut weight: impl FnMut(usize, usize) -> f64) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        let strides = [1, dims[0], dims[0] * dims[1]];
        let mut edges = Vec::with_capacity(3 * n);
        for node in 0..n {
            let idx = [node % dims[0], node / dims[0] % dims[1], node / strides[2]];
            for a in 0..3 {
                if idx[a] + 1 < dims[a] {
                    let other = node + strides[a];
                    edges.push((node, other, weight(node, other)));
                }
            }
        }
        Self { n_nodes: n, edges }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }
}

/// Rooted spanning tree with a breadth-first visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanningTree {
    parent: Vec<Option<usize>>,
    order: Vec<usize>,
}

impl SpanningTree {
    pub fn root(&self) -> usize {
        self.order[0]
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    /// Nodes in breadth-first order from the root.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// `(child, parent)` pairs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent.iter().enumerate().filter_map(|(c, p)| p.map(|p| (c, p)))
    }
}

/// Minimum-weight spanning tree by Kruskal, ties broken by edge order, rooted
/// at node 0.
pub fn minimum_spanning_tree(graph: &ControlGraph) -> Result<SpanningTree> {
    let n = graph.n_nodes;
    if n == 0 {
        return Err(Error::Graph("graph has no nodes".into()));
    }
    let mut sorted: Vec<usize> = (0..graph.edges.len()).collect();
    sorted.sort_by(|&a, &b| graph.edges[a].2.total_cmp(&graph.edges[b].2).then(a.cmp(&b)));
    let mut uf: Vec<usize> = (0..n).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut taken = 0;
    for e in sorted {
        let (a, b, _) = graph.edges[e];
        let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
        if ra != rb {
            uf[ra] = rb;
            adj[a].push(b);
            adj[b].push(a);
            taken += 1;
        }
    }
    if taken + 1 != n {
        return Err(Error::Graph(format!(
            "graph is disconnected: spanning forest has {} components",
            n - taken
        )));
    }
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    Ok(SpanningTree { parent, order })
}

/// Exact minimiser over the minimum spanning tree of `graph`.
pub fn mst_optimize(costs: &CostTable, labels: &LabelGrid, graph: &ControlGraph, alpha: f64) -> Result<Vec<usize>> {
    if costs.n_nodes != graph.n_nodes {
        return Err(Error::Shape(format!(
            "{} cost rows for {} graph nodes",
            costs.n_nodes, graph.n_nodes
        )));
    }
    let tree = minimum_spanning_tree(graph)?;
    optimize_on_tree(costs, labels, &tree, alpha)
}

pub fn optimize_on_tree(costs: &CostTable, labels: &LabelGrid, tree: &SpanningTree, alpha: f64) -> Result<Vec<usize>> {
    let n_labels = labels.len();
    if costs.n_labels != n_labels {
        return Err(Error::Shape(format!(
            "cost table has {} labels, label grid {}",
            costs.n_labels, n_labels
        )));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let n = costs.n_nodes;
    let mut belief = costs.data.clone();
    let dims = labels.dims();
    let w = alpha * labels.step * labels.step;
    let mut scratch = dt::Scratch::default();
    let mut msg = vec![0.0; n_labels];
    for &node in tree.order.iter().rev() {
        let Some(p) = tree.parent[node] else { continue };
        msg.copy_from_slice(&belief[node * n_labels..(node + 1) * n_labels]);
        if w > 0.0 {
            dt::transform_3d(&mut msg, dims, [w; 3], &mut scratch);
        } else {
            let m = msg.iter().cloned().fold(f64::INFINITY, f64::min);
            msg.iter_mut().for_each(|v| *v = m);
        }
        for (b, m) in belief[p * n_labels..(p + 1) * n_labels].iter_mut().zip(&msg) {
            *b += m;
        }
    }

    let mut assignment = vec![usize::MAX; n];
    let root = tree.root();
    assignment[root] = argmin_in_order(labels.tie_order(), |l| belief[root * n_labels + l]);
    for &node in tree.order.iter().skip(1) {
        let p = tree.parent[node].expect("non-root has a parent");
        let lp = assignment[p];
        let own = &belief[node * n_labels..(node + 1) * n_labels];
        assignment[node] = argmin_in_order(labels.tie_order(), |l| own[l] + alpha * labels.sq_dist(lp, l));
    }
    Ok(assignment)
}

/// First minimum in the given order.
fn argmin_in_order(order: &[usize], mut f: impl FnMut(usize) -> f64) -> usize {
    let mut best = order[0];
    let mut best_v = f(best);
    for &l in &order[1..] {
        let v = f(l);
        if v < best_v {
            best = l;
            best_v = v;
        }
    }
    best
}

/// Objective value of an assignment over the tree edges.
pub fn tree_objective(
    costs: &CostTable,
    labels: &LabelGrid,
    tree: &SpanningTree,
    alpha: f64,
    assignment: &[usize],
) -> f64 {
    let unary: f64 = assignment.iter().enumerate().map(|(i, &l)| costs.node(i)[l]).sum();
    let pair: f64 = tree
        .edges()
        .map(|(c, p)| labels.sq_dist(assignment[c], assignment[p]))
        .sum();
    unary + alpha * pair
}
