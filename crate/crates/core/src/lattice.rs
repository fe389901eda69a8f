//! Binomial model of the Brownian filtration.
//!
//! Each non-terminal node has an up child (increment `+sqrt(dt)`) and a down
//! child (increment `-sqrt(dt)`), each reached with probability one half, so
//! conditional expectations and martingale coefficients are exact two-point
//! formulas.
//!
//! Nodes are addressed by `(step, index)`. In the recombining lattice the
//! index is the number of up moves taken so far; in the full tree it is the
//! path written as bits, most recent move in the lowest bit (`1` = up).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest step count accepted in full-tree mode.
pub const FULL_TREE_MAX_STEPS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidLattice(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidLattice("n_steps must be at least 1".into()));
        }
        Ok(Self {
            horizon,
            n_steps,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.dt.sqrt()
    }

    /// Time of step `i`.
    pub fn time(&self, step: usize) -> f64 {
        if step == self.n_steps {
            self.horizon
        } else {
            step as f64 * self.dt
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeMode {
    Recombining,
    FullTree,
}

impl LatticeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LatticeMode::Recombining => "recombining",
            LatticeMode::FullTree => "full_tree",
        }
    }
}

/// Identifies a node together with the quantities drivers may depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodePoint {
    pub step: usize,
    pub node: usize,
    pub t: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeModel {
    grid: TimeGrid,
    mode: LatticeMode,
}

/// Builds the lattice for `[0, horizon]` split into `n_steps` steps.
pub fn build_lattice(horizon: f64, n_steps: usize, mode: LatticeMode) -> Result<LatticeModel> {
    LatticeModel::new(TimeGrid::new(horizon, n_steps)?, mode)
}

impl LatticeModel {
    pub fn new(grid: TimeGrid, mode: LatticeMode) -> Result<Self> {
        if mode == LatticeMode::FullTree && grid.n_steps() > FULL_TREE_MAX_STEPS {
            return Err(Error::InvalidLattice(format!(
                "full_tree mode supports at most {FULL_TREE_MAX_STEPS} steps, got {}",
                grid.n_steps()
            )));
        }
        Ok(Self { grid, mode })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn mode(&self) -> LatticeMode {
        self.mode
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    /// Number of nodes at `step`.
    pub fn nodes_at(&self, step: usize) -> usize {
        match self.mode {
            LatticeMode::Recombining => step + 1,
            LatticeMode::FullTree => 1usize << step,
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes_at(self.n_steps())
    }

    pub fn node_count(&self) -> usize {
        (0..=self.n_steps()).map(|i| self.nodes_at(i)).sum()
    }

    /// `(down, up)` child indices of `node` at the following step.
    #[inline]
    pub fn children(&self, node: usize) -> (usize, usize) {
        match self.mode {
            LatticeMode::Recombining => (node, node + 1),
            LatticeMode::FullTree => (node << 1, (node << 1) | 1),
        }
    }

    /// Number of up moves on the way to `node` at any step.
    #[inline]
    pub fn up_count(&self, node: usize) -> usize {
        match self.mode {
            LatticeMode::Recombining => node,
            LatticeMode::FullTree => node.count_ones() as usize,
        }
    }

    /// Brownian value at a node: `(2 * ups - step) * sqrt(dt)`.
    #[inline]
    pub fn w(&self, step: usize, node: usize) -> f64 {
        (2.0 * self.up_count(node) as f64 - step as f64) * self.grid.sqrt_dt()
    }

    pub fn point(&self, step: usize, node: usize) -> NodePoint {
        NodePoint {
            step,
            node,
            t: self.grid.time(step),
            w: self.w(step, node),
        }
    }

    /// Brownian values of every node at `step`.
    pub fn w_layer(&self, step: usize) -> Vec<f64> {
        (0..self.nodes_at(step)).map(|j| self.w(step, j)).collect()
    }

    /// Lattice node reached by a path given as bits (full-tree addressing).
    #[inline]
    pub fn node_of_path(&self, path: usize) -> usize {
        match self.mode {
            LatticeMode::Recombining => path.count_ones() as usize,
            LatticeMode::FullTree => path,
        }
    }

    /// Probability of each node at `step` under the lattice measure.
    pub fn probabilities(&self, step: usize) -> Vec<f64> {
        match self.mode {
            LatticeMode::FullTree => vec![0.5f64.powi(step as i32); 1usize << step],
            LatticeMode::Recombining => {
                // Pascal's rule with halving keeps every entry in range for any step.
                let mut row = vec![1.0];
                for i in 0..step {
                    let mut next = vec![0.0; i + 2];
                    for (k, p) in row.iter().enumerate() {
                        next[k] += 0.5 * p;
                        next[k + 1] += 0.5 * p;
                    }
                    row = next;
                }
                row
            }
        }
    }

    fn check_layer(&self, step: usize, values: &[f64]) -> Result<()> {
        if step > self.n_steps() {
            return Err(Error::StepNotCovered {
                step,
                first: 0,
                last: self.n_steps(),
            });
        }
        let expected = self.nodes_at(step);
        if values.len() != expected {
            return Err(Error::MissingValues {
                step,
                expected,
                got: values.len(),
            });
        }
        Ok(())
    }

    /// `E[X | F_i]` for `X` given at step `i + 1`.
    pub fn conditional_expectation(&self, step_next: usize, values: &[f64]) -> Result<Vec<f64>> {
        self.two_point(step_next, values, |down, up| 0.5 * (up + down))
    }

    /// Coefficient `z_i` with `X_{i+1} = E[X | F_i] + z_i * dW` at both children.
    pub fn martingale_coefficient(&self, step_next: usize, values: &[f64]) -> Result<Vec<f64>> {
        let scale = 0.5 / self.grid.sqrt_dt();
        self.two_point(step_next, values, |down, up| (up - down) * scale)
    }

    fn two_point(
        &self,
        step_next: usize,
        values: &[f64],
        combine: impl Fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        if step_next == 0 {
            return Err(Error::StepNotCovered {
                step: 0,
                first: 1,
                last: self.n_steps(),
            });
        }
        self.check_layer(step_next, values)?;
        Ok((0..self.nodes_at(step_next - 1))
            .map(|j| {
                let (d, u) = self.children(j);
                combine(values[d], values[u])
            })
            .collect())
    }

    /// `sqrt(E[X^2])` for `X` given at `step`.
    pub fn l2_norm(&self, step: usize, values: &[f64]) -> Result<f64> {
        self.check_layer(step, values)?;
        let sum: f64 = self
            .probabilities(step)
            .iter()
            .zip(values)
            .map(|(p, v)| p * v * v)
            .sum();
        Ok(sum.sqrt())
    }

    /// `E[X]` for `X` given at `step`.
    pub fn expectation(&self, step: usize, values: &[f64]) -> Result<f64> {
        self.check_layer(step, values)?;
        Ok(self
            .probabilities(step)
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum())
    }
}

/// Values of an adapted process on a contiguous range of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedField {
    first_step: usize,
    layers: Vec<Vec<f64>>,
}

impl AdaptedField {
    /// Checks totality: every covered step carries one value per node.
    pub fn new(lattice: &LatticeModel, first_step: usize, layers: Vec<Vec<f64>>) -> Result<Self> {
        for (offset, layer) in layers.iter().enumerate() {
            lattice.check_layer(first_step + offset, layer)?;
        }
        Ok(Self { first_step, layers })
    }

    /// Field over path layers (`2^i` values at step `i`), starting at step 0.
    pub(crate) fn from_path_layers(layers: Vec<Vec<f64>>) -> Self {
        debug_assert!(layers.iter().enumerate().all(|(i, l)| l.len() == 1 << i));
        Self {
            first_step: 0,
            layers,
        }
    }

    /// Field with the same value at every node of steps `first..=last`.
    pub fn constant(lattice: &LatticeModel, first: usize, last: usize, value: f64) -> Self {
        Self {
            first_step: first,
            layers: (first..=last)
                .map(|i| vec![value; lattice.nodes_at(i)])
                .collect(),
        }
    }

    pub fn first_step(&self) -> usize {
        self.first_step
    }

    pub fn last_step(&self) -> usize {
        self.first_step + self.layers.len() - 1
    }

    pub fn covers(&self, step: usize) -> bool {
        step >= self.first_step && step <= self.last_step()
    }

    pub fn layer(&self, step: usize) -> Result<&[f64]> {
        if !self.covers(step) {
            return Err(Error::StepNotCovered {
                step,
                first: self.first_step,
                last: self.last_step(),
            });
        }
        Ok(&self.layers[step - self.first_step])
    }

    /// Panics if `step` is outside the covered range.
    pub fn at(&self, step: usize, node: usize) -> f64 {
        self.layers[step - self.first_step][node]
    }

    #[cfg(test)]
    pub(crate) fn at_mut(&mut self, step: usize, node: usize) -> &mut f64 {
        &mut self.layers[step - self.first_step][node]
    }

    /// `(step, layer)` pairs in increasing step order.
    pub fn layers(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .map(move |(k, l)| (self.first_step + k, l.as_slice()))
    }

    /// Largest value of `f(self, other)` over the common steps of two fields.
    pub fn max_pairwise(&self, other: &AdaptedField, f: impl Fn(f64, f64) -> f64) -> f64 {
        let first = self.first_step.max(other.first_step);
        let last = self.last_step().min(other.last_step());
        let mut worst = f64::NEG_INFINITY;
        for step in first..=last {
            let a = &self.layers[step - self.first_step];
            let b = &other.layers[step - other.first_step];
            for (x, y) in a.iter().zip(b) {
                worst = worst.max(f(*x, *y));
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn node_counts() {
        let l = build_lattice(1.0, 1, LatticeMode::Recombining).unwrap();
        assert_eq!(l.node_count(), 3);
        assert_eq!(l.w_layer(1), vec![-1.0, 1.0]);

        let l = build_lattice(1.0, 2, LatticeMode::Recombining).unwrap();
        assert_eq!(l.node_count(), 6);
        let s = 0.5f64.sqrt();
        let w = l.w_layer(2);
        assert!(close(w[0], -2.0 * s, 1e-15) && w[1] == 0.0 && close(w[2], 2.0 * s, 1e-15));

        let l = build_lattice(1.0, 2, LatticeMode::FullTree).unwrap();
        assert_eq!(l.node_count(), 7);

        for n in 1..10 {
            let r = build_lattice(2.0, n, LatticeMode::Recombining).unwrap();
            assert_eq!(r.node_count(), (n + 1) * (n + 2) / 2);
            let f = build_lattice(2.0, n, LatticeMode::FullTree).unwrap();
            assert_eq!(f.node_count(), (1 << (n + 1)) - 1);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_lattice(0.0, 4, LatticeMode::Recombining).is_err());
        assert!(build_lattice(-1.0, 4, LatticeMode::Recombining).is_err());
        assert!(build_lattice(1.0, 0, LatticeMode::Recombining).is_err());
        assert!(build_lattice(1.0, 25, LatticeMode::FullTree).is_err());
        assert!(build_lattice(1.0, 24, LatticeMode::FullTree).is_ok());
        assert!(build_lattice(1.0, 400, LatticeMode::Recombining).is_ok());
    }

    #[test]
    fn grid_times() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(3), 1.0);
        assert!(close(g.dt() * 3.0, 1.0, 1e-15));
    }

    #[test]
    fn w_is_root_zero_and_equal_across_modes() {
        let r = build_lattice(1.0, 5, LatticeMode::Recombining).unwrap();
        let f = build_lattice(1.0, 5, LatticeMode::FullTree).unwrap();
        assert_eq!(r.w(0, 0), 0.0);
        for path in 0..32 {
            assert_eq!(f.w(5, path), r.w(5, r.node_of_path(path)));
        }
    }

    #[test]
    fn conditional_expectation_examples() {
        for mode in [LatticeMode::Recombining, LatticeMode::FullTree] {
            let l = build_lattice(1.0, 4, mode).unwrap();
            let c = vec![3.5; l.nodes_at(3)];
            assert!(l.conditional_expectation(3, &c).unwrap().iter().all(|v| *v == 3.5));

            let w3 = l.w_layer(3);
            let e = l.conditional_expectation(3, &w3).unwrap();
            for (a, b) in e.iter().zip(l.w_layer(2)) {
                assert!(close(*a, b, 1e-15));
            }

            let w4sq: Vec<f64> = l.w_layer(4).iter().map(|w| w * w).collect();
            let e = l.conditional_expectation(4, &w4sq).unwrap();
            for (a, w) in e.iter().zip(l.w_layer(3)) {
                assert!(close(*a, w * w + l.dt(), 1e-14));
            }
        }
    }

    #[test]
    fn martingale_coefficient_examples() {
        let l = build_lattice(1.0, 4, LatticeMode::Recombining).unwrap();
        let z = l.martingale_coefficient(2, &l.w_layer(2)).unwrap();
        assert!(z.iter().all(|v| close(*v, 1.0, 1e-14)));
        let z = l.martingale_coefficient(2, &[7.0; 3]).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        let sq: Vec<f64> = l.w_layer(3).iter().map(|w| w * w).collect();
        let z = l.martingale_coefficient(3, &sq).unwrap();
        for (a, w) in z.iter().zip(l.w_layer(2)) {
            assert!(close(*a, 2.0 * w, 1e-14));
        }
    }

    #[test]
    fn missing_child_values_are_errors() {
        let l = build_lattice(1.0, 3, LatticeMode::Recombining).unwrap();
        assert!(matches!(
            l.conditional_expectation(2, &[1.0, 2.0]),
            Err(Error::MissingValues { step: 2, expected: 3, got: 2 })
        ));
        assert!(l.martingale_coefficient(0, &[1.0]).is_err());
        assert!(l.l2_norm(4, &[0.0; 5]).is_err());
    }

    #[test]
    fn l2_norm_examples() {
        let l = build_lattice(1.0, 8, LatticeMode::Recombining).unwrap();
        assert!(close(l.l2_norm(8, &l.w_layer(8)).unwrap(), 1.0, 1e-14));
        assert!(close(l.l2_norm(8, &[-2.5; 9]).unwrap(), 2.5, 1e-14));

        // W_T^2 on n = 2: leaves -2s, 0, 2s with weights 1/4, 1/2, 1/4
        let l = build_lattice(1.0, 2, LatticeMode::Recombining).unwrap();
        let w2: Vec<f64> = l.w_layer(2).iter().map(|w| w * w).collect();
        let mut brute = 0.0;
        for first in [-1.0, 1.0] {
            for second in [-1.0, 1.0] {
                let w: f64 = (first + second) * 0.5f64.sqrt();
                brute += 0.25 * w.powi(4);
            }
        }
        assert!(close(l.l2_norm(2, &w2).unwrap(), brute.sqrt(), 1e-14));
        assert!(close(brute.sqrt(), 2.0f64.sqrt(), 1e-14));
    }

    #[test]
    fn probabilities_sum_to_one() {
        for mode in [LatticeMode::Recombining, LatticeMode::FullTree] {
            let l = build_lattice(1.0, 12, mode).unwrap();
            for i in 0..=12 {
                let s: f64 = l.probabilities(i).iter().sum();
                assert!(close(s, 1.0, 1e-12));
            }
        }
        let big = build_lattice(1.0, 1200, LatticeMode::Recombining).unwrap();
        let s: f64 = big.probabilities(1200).iter().sum();
        assert!(close(s, 1.0, 1e-12));
    }

    #[test]
    fn adapted_field_totality() {
        let l = build_lattice(1.0, 2, LatticeMode::Recombining).unwrap();
        assert!(AdaptedField::new(&l, 0, vec![vec![0.0], vec![1.0, 2.0]]).is_ok());
        assert!(AdaptedField::new(&l, 0, vec![vec![0.0], vec![1.0]]).is_err());
        let f = AdaptedField::constant(&l, 1, 2, 4.0);
        assert_eq!(f.first_step(), 1);
        assert_eq!(f.last_step(), 2);
        assert!(f.layer(0).is_err());
        assert_eq!(f.at(2, 2), 4.0);
    }
}
