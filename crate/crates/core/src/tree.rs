//! Binomial scenario tree for the driving Wiener process: topology, adapted
//! and terminal fields, conditional expectation, martingale-increment
//! extraction, and expectation norms.
//!
//! The tree is non-recombining: level `k` holds `2^k` nodes, the children of
//! node `(k, j)` are `(k+1, 2j)` (up, increment `+sqrt(dt)`) and
//! `(k+1, 2j+1)` (down, `-sqrt(dt)`), each branch carrying probability 1/2.
//! A path topology (one node per level, zero increments) serves as the
//! deterministic mode in which the classical control problem is recovered.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::par::{map_indexed, pairwise_sum};

/// Hard cap on branching depth; the memory footprint of adapted fields grows
/// as `2^steps`.
pub const MAX_BRANCHING_STEPS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeTopology {
    steps: usize,
    dt: f64,
    horizon: f64,
    branching: bool,
}

impl TreeTopology {
    /// Binomial tree with `steps` branching time steps over `[0, horizon]`.
    ///
    /// `steps = 0` degenerates to a single node (no dynamics at all).
    pub fn binomial(steps: usize, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::config(format!(
                "time horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps > MAX_BRANCHING_STEPS {
            return Err(Error::config(format!(
                "branching tree with {steps} steps exceeds the supported depth {MAX_BRANCHING_STEPS}"
            )));
        }
        let dt = if steps == 0 {
            0.0
        } else {
            horizon / steps as f64
        };
        Ok(TreeTopology {
            steps,
            dt,
            horizon,
            branching: steps > 0,
        })
    }

    /// Deterministic mode: `steps` time steps, one node per level, zero
    /// Brownian increments. The single leaf carries probability 1.
    pub fn path(steps: usize, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::config(format!(
                "time horizon must be positive and finite, got {horizon}"
            )));
        }
        let dt = if steps == 0 {
            0.0
        } else {
            horizon / steps as f64
        };
        Ok(TreeTopology {
            steps,
            dt,
            horizon,
            branching: false,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_branching(&self) -> bool {
        self.branching
    }

    pub fn nodes_at(&self, level: usize) -> usize {
        assert!(level <= self.steps, "tree level out of range");
        if self.branching {
            1usize << level
        } else {
            1
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes_at(self.steps)
    }

    /// Probability of each node at `level` (uniform across the level).
    pub fn node_prob(&self, level: usize) -> f64 {
        1.0 / self.nodes_at(level) as f64
    }

    /// Brownian increment on the given branch: `+-sqrt(dt)`, or 0 in
    /// deterministic mode.
    pub fn increment(&self, up: bool) -> f64 {
        if !self.branching {
            return 0.0;
        }
        let r = self.dt.sqrt();
        if up {
            r
        } else {
            -r
        }
    }

    /// Parent node index of child `c` one level down.
    pub fn parent(&self, c: usize) -> usize {
        if self.branching {
            c >> 1
        } else {
            c
        }
    }

    /// True when child index `c` is the up branch of its parent.
    pub fn is_up_child(&self, c: usize) -> bool {
        !self.branching || c & 1 == 0
    }
}

/// Bounded, deterministic per-step noise coefficient `a_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCoefficient {
    values: Vec<f64>,
}

impl NoiseCoefficient {
    /// Per-step values, validated against the configured bound `a_max`.
    pub fn new(values: Vec<f64>, a_max: f64) -> Result<Self> {
        if !(a_max >= 0.0) {
            return Err(Error::config(format!(
                "noise bound must be nonnegative, got {a_max}"
            )));
        }
        for (k, &a) in values.iter().enumerate() {
            if !a.is_finite() || a.abs() > a_max {
                return Err(Error::config(format!(
                    "noise coefficient a[{k}] = {a} violates |a| <= {a_max}"
                )));
            }
        }
        Ok(NoiseCoefficient { values })
    }

    pub fn constant(a: f64, steps: usize, a_max: f64) -> Result<Self> {
        Self::new(vec![a; steps], a_max)
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// One grid field per tree node, for a contiguous range of levels starting
/// at 0. State processes span levels `0..=steps`; control-like processes
/// (controls, martingale parts, conditional expectations) span `0..steps`.
///
/// Storage is node-major within each level: the field at `(k, j)` is the
/// slice `level(k)[j*n .. (j+1)*n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedField {
    grid_n: usize,
    levels: Vec<Vec<f64>>,
}

impl AdaptedField {
    pub fn zeros(tree: &TreeTopology, grid_n: usize, num_levels: usize) -> Self {
        assert!(
            num_levels <= tree.steps() + 1,
            "adapted field cannot extend past the leaf level"
        );
        let levels = (0..num_levels)
            .map(|k| vec![0.0; tree.nodes_at(k) * grid_n])
            .collect();
        AdaptedField { grid_n, levels }
    }

    /// State-shaped field over levels `0..=steps`.
    pub fn state_zeros(tree: &TreeTopology, grid_n: usize) -> Self {
        Self::zeros(tree, grid_n, tree.steps() + 1)
    }

    /// Control-shaped field over levels `0..steps` (empty when `steps = 0`).
    pub fn control_zeros(tree: &TreeTopology, grid_n: usize) -> Self {
        Self::zeros(tree, grid_n, tree.steps())
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.levels[k]
    }

    pub fn node(&self, k: usize, j: usize) -> &[f64] {
        let n = self.grid_n;
        &self.levels[k][j * n..(j + 1) * n]
    }

    pub fn node_mut(&mut self, k: usize, j: usize) -> &mut [f64] {
        let n = self.grid_n;
        &mut self.levels[k][j * n..(j + 1) * n]
    }

    /// Read access to level `read` together with write access to level
    /// `write`; the two must differ.
    pub fn level_pair_mut(&mut self, read: usize, write: usize) -> (&[f64], &mut [f64]) {
        assert_ne!(read, write);
        if read < write {
            let (a, b) = self.levels.split_at_mut(write);
            (&a[read], &mut b[0])
        } else {
            let (a, b) = self.levels.split_at_mut(read);
            (&b[0], &mut a[write])
        }
    }

    pub fn is_finite(&self) -> bool {
        self.levels
            .iter()
            .all(|l| l.iter().all(|v| v.is_finite()))
    }

    /// Linear combination `self + c * other`, level by level.
    pub fn axpy(&mut self, c: f64, other: &AdaptedField) {
        assert_eq!(self.levels.len(), other.levels.len());
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
    }
}

/// One grid field per leaf (`F_T`-measurable data: terminal states and
/// terminal adjoint data). Leaf-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalField {
    grid_n: usize,
    values: Vec<f64>,
}

impl TerminalField {
    pub fn zeros(tree: &TreeTopology, grid_n: usize) -> Self {
        TerminalField {
            grid_n,
            values: vec![0.0; tree.num_leaves() * grid_n],
        }
    }

    pub fn from_values(grid_n: usize, values: Vec<f64>) -> Self {
        assert!(grid_n > 0 && values.len() % grid_n == 0);
        TerminalField { grid_n, values }
    }

    /// Builds the field from a per-(leaf, node) function.
    pub fn from_fn(tree: &TreeTopology, grid_n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let leaves = tree.num_leaves();
        let mut values = vec![0.0; leaves * grid_n];
        for leaf in 0..leaves {
            for i in 0..grid_n {
                values[leaf * grid_n + i] = f(leaf, i);
            }
        }
        TerminalField { grid_n, values }
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn num_leaves(&self) -> usize {
        self.values.len() / self.grid_n
    }

    pub fn leaf(&self, j: usize) -> &[f64] {
        &self.values[j * self.grid_n..(j + 1) * self.grid_n]
    }

    pub fn leaf_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.grid_n..(j + 1) * self.grid_n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn axpy(&mut self, c: f64, other: &TerminalField) {
        assert_eq!(self.values.len(), other.values.len());
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += c * y;
        }
    }
}

/// Conditional expectation one level up: value at `(k, j)` is the average of
/// the two children, computed in fixed child order (up first).
///
/// `next` holds the fields of level `k+1`; the result holds level `k`.
pub fn conditional_expectation(
    tree: &TreeTopology,
    grid_n: usize,
    level: usize,
    next: &[f64],
) -> Vec<f64> {
    assert!(level < tree.steps(), "tree level out of range");
    assert_eq!(next.len(), tree.nodes_at(level + 1) * grid_n);
    if !tree.is_branching() {
        return next.to_vec();
    }
    let mut out = vec![0.0; tree.nodes_at(level) * grid_n];
    for (j, o) in out.chunks_mut(grid_n).enumerate() {
        let up = &next[(2 * j) * grid_n..(2 * j + 1) * grid_n];
        let down = &next[(2 * j + 1) * grid_n..(2 * j + 2) * grid_n];
        for i in 0..grid_n {
            o[i] = 0.5 * (up[i] + down[i]);
        }
    }
    out
}

/// Martingale-increment part of the next level:
/// `Z at (k, j) = (next_up - next_down) / (2 sqrt(dt))`.
///
/// In deterministic mode the martingale part is zero by convention.
pub fn extract_martingale(
    tree: &TreeTopology,
    grid_n: usize,
    level: usize,
    next: &[f64],
) -> Vec<f64> {
    assert!(level < tree.steps(), "tree level out of range");
    assert_eq!(next.len(), tree.nodes_at(level + 1) * grid_n);
    if !tree.is_branching() {
        return vec![0.0; grid_n];
    }
    let scale = 1.0 / (2.0 * tree.dt().sqrt());
    let mut out = vec![0.0; tree.nodes_at(level) * grid_n];
    for (j, o) in out.chunks_mut(grid_n).enumerate() {
        let up = &next[(2 * j) * grid_n..(2 * j + 1) * grid_n];
        let down = &next[(2 * j + 1) * grid_n..(2 * j + 2) * grid_n];
        for i in 0..grid_n {
            o[i] = (up[i] - down[i]) * scale;
        }
    }
    out
}

/// `E ||x||^2` over the nodes of one level: per-node squared norms collected
/// in node order, pairwise-summed, and weighted by the level probability.
pub fn expected_sq_norm_level(tree: &TreeTopology, grid: &Grid, level: usize, values: &[f64]) -> f64 {
    let n = grid.n();
    let count = tree.nodes_at(level);
    assert_eq!(values.len(), count * n);
    let per_node = map_indexed(count, n, |j| {
        let f = &values[j * n..(j + 1) * n];
        grid.inner(f, f)
    });
    tree.node_prob(level) * pairwise_sum(&per_node)
}

/// `E <a, b>` over the nodes of one level, fixed reduction order.
pub fn expected_inner_level(
    tree: &TreeTopology,
    grid: &Grid,
    level: usize,
    a: &[f64],
    b: &[f64],
) -> f64 {
    let n = grid.n();
    let count = tree.nodes_at(level);
    assert_eq!(a.len(), count * n);
    assert_eq!(b.len(), count * n);
    let per_node = map_indexed(count, n, |j| {
        grid.inner(&a[j * n..(j + 1) * n], &b[j * n..(j + 1) * n])
    });
    tree.node_prob(level) * pairwise_sum(&per_node)
}

/// `E ||x||^2` of a terminal field.
pub fn expected_sq_norm_terminal(tree: &TreeTopology, grid: &Grid, x: &TerminalField) -> f64 {
    expected_sq_norm_level(tree, grid, tree.steps(), x.as_slice())
}

/// `E <a, b>` of two terminal fields.
pub fn expected_inner_terminal(
    tree: &TreeTopology,
    grid: &Grid,
    a: &TerminalField,
    b: &TerminalField,
) -> f64 {
    expected_inner_level(tree, grid, tree.steps(), a.as_slice(), b.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::run_with_threads;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn binomial_tree_examples() {
        let t = TreeTopology::binomial(2, 0.1).unwrap();
        assert_relative_eq!(t.dt(), 0.05, max_relative = 1e-15);
        assert_eq!(t.num_leaves(), 4);
        assert_eq!(t.node_prob(2), 0.25);
        // leaf probabilities are dyadic and sum to one exactly
        let probs = vec![t.node_prob(2); t.num_leaves()];
        assert_eq!(pairwise_sum(&probs), 1.0);

        let t0 = TreeTopology::binomial(0, 0.1).unwrap();
        assert_eq!(t0.num_leaves(), 1);
        assert!(!t0.is_branching());

        let t12 = TreeTopology::binomial(12, 1.0).unwrap();
        assert_eq!(t12.num_leaves(), 4096);

        assert!(TreeTopology::binomial(2, 0.0).is_err());
        assert!(TreeTopology::binomial(2, -1.0).is_err());
        assert!(TreeTopology::binomial(MAX_BRANCHING_STEPS + 1, 1.0).is_err());
    }

    #[test]
    fn level_counts_and_children() {
        let t = TreeTopology::binomial(3, 1.0).unwrap();
        for k in 0..=3 {
            assert_eq!(t.nodes_at(k), 1 << k);
        }
        assert_eq!(t.parent(5), 2);
        assert!(t.is_up_child(4));
        assert!(!t.is_up_child(5));
    }

    #[test]
    fn conditional_expectation_examples() {
        let t = TreeTopology::binomial(2, 1.0).unwrap();
        // scalar children 1 and 3 -> 2
        let ce = conditional_expectation(&t, 1, 0, &[1.0, 3.0]);
        assert_eq!(ce, vec![2.0]);
        // constant level stays constant (tower property, one step)
        let ce = conditional_expectation(&t, 1, 1, &[7.0, 7.0, 7.0, 7.0]);
        assert_eq!(ce, vec![7.0, 7.0]);
        // children (1,2,3,4) at level 2 -> (1.5, 3.5)
        let ce = conditional_expectation(&t, 1, 1, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ce, vec![1.5, 3.5]);
    }

    #[test]
    fn martingale_extraction_examples() {
        let t = TreeTopology::binomial(1, 0.04).unwrap();
        assert_relative_eq!(t.dt(), 0.04, max_relative = 1e-15);
        let z = extract_martingale(&t, 1, 0, &[1.2, 0.8]);
        assert_relative_eq!(z[0], 1.0, max_relative = 1e-14);
        // deterministic next level -> zero martingale part
        let z = extract_martingale(&t, 1, 0, &[0.7, 0.7]);
        assert_eq!(z[0], 0.0);
        // c + d sqrt(dt) / c - d sqrt(dt) recovers d for any c, d
        let (c, d) = (3.7, -1.9);
        let r = t.dt().sqrt();
        let z = extract_martingale(&t, 1, 0, &[c + d * r, c - d * r]);
        assert_relative_eq!(z[0], d, max_relative = 1e-13);
        // path tree: zero by convention
        let p = TreeTopology::path(2, 1.0).unwrap();
        assert_eq!(extract_martingale(&p, 1, 0, &[5.0]), vec![0.0]);
    }

    #[test]
    fn martingale_reconstruction_is_exact() {
        let t = TreeTopology::binomial(4, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 3;
        let k = 2;
        let next: Vec<f64> = (0..t.nodes_at(k + 1) * n)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let zhat = conditional_expectation(&t, n, k, &next);
        let mart = extract_martingale(&t, n, k, &next);
        let r = t.dt().sqrt();
        for j in 0..t.nodes_at(k) {
            for i in 0..n {
                let up = zhat[j * n + i] + r * mart[j * n + i];
                let down = zhat[j * n + i] - r * mart[j * n + i];
                assert_relative_eq!(up, next[(2 * j) * n + i], max_relative = 1e-14, epsilon = 1e-14);
                assert_relative_eq!(
                    down,
                    next[(2 * j + 1) * n + i],
                    max_relative = 1e-14,
                    epsilon = 1e-14
                );
            }
        }
    }

    #[test]
    fn tower_property_matches_leaf_sum() {
        let t = TreeTopology::binomial(6, 0.3).unwrap();
        let g = Grid::new(4, 1.0).unwrap();
        let n = g.n();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let leaves: Vec<f64> = (0..t.num_leaves() * n)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        // fold conditional expectations down to the root
        let mut cur = leaves.clone();
        for k in (0..t.steps()).rev() {
            cur = conditional_expectation(&t, n, k, &cur);
        }
        // direct leaf-probability sum
        let p = t.node_prob(t.steps());
        for i in 0..n {
            let direct: f64 = (0..t.num_leaves()).map(|j| p * leaves[j * n + i]).sum();
            assert_relative_eq!(cur[i], direct, max_relative = 1e-14, epsilon = 1e-14);
        }
    }

    #[test]
    fn expected_norm_examples() {
        let g = Grid::new(4, 1.0).unwrap();
        for steps in [0usize, 1, 3] {
            let t = TreeTopology::binomial(steps, 0.1).unwrap();
            let ones = TerminalField::from_values(4, vec![1.0; t.num_leaves() * 4]);
            assert_relative_eq!(
                expected_sq_norm_terminal(&t, &g, &ones),
                0.8,
                max_relative = 1e-14
            );
            let zero = TerminalField::zeros(&t, 4);
            assert_eq!(expected_sq_norm_terminal(&t, &g, &zero), 0.0);
        }
        // K=1, leaves (2*ones, 0), n=1, h=0.5
        let g1 = Grid::new(1, 1.0).unwrap();
        let t1 = TreeTopology::binomial(1, 0.1).unwrap();
        let f = TerminalField::from_values(1, vec![2.0, 0.0]);
        assert_relative_eq!(expected_sq_norm_terminal(&t1, &g1, &f), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn expectations_are_bit_identical_across_thread_counts() {
        let g = Grid::new(7, 1.0).unwrap();
        let t = TreeTopology::binomial(9, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let f = TerminalField::from_values(
            7,
            (0..t.num_leaves() * 7)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        );
        let single = run_with_threads(1, || expected_sq_norm_terminal(&t, &g, &f));
        let multi = run_with_threads(4, || expected_sq_norm_terminal(&t, &g, &f));
        assert_eq!(single.to_bits(), multi.to_bits());
    }

    #[test]
    fn noise_coefficient_bounds() {
        assert!(NoiseCoefficient::constant(1.0, 4, 2.0).is_ok());
        assert!(NoiseCoefficient::constant(3.0, 4, 2.0).is_err());
        assert!(NoiseCoefficient::new(vec![0.5, -2.5], 2.0).is_err());
        assert!(NoiseCoefficient::new(vec![f64::NAN], 2.0).is_err());
    }

    #[test]
    fn adapted_field_shapes() {
        let t = TreeTopology::binomial(3, 1.0).unwrap();
        let state = AdaptedField::state_zeros(&t, 2);
        assert_eq!(state.num_levels(), 4);
        assert_eq!(state.level(3).len(), 8 * 2);
        let ctrl = AdaptedField::control_zeros(&t, 2);
        assert_eq!(ctrl.num_levels(), 3);
        assert!(state.is_finite());
    }
}
