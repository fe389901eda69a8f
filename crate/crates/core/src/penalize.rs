//! Penalized BSDEs `g + m * phi` and the minimal constrained supersolution as their limit.
//!
//! For each penalty level the run is an ordinary backward solve whose increments
//! `dA_i = m * phi(t_i, y_i, z_i) * dt` double as the increasing part of a
//! supersolution for `g`. The schedule is geometric; the limit is read off the
//! last level, and the gap between consecutive levels decides whether the claim
//! sits in the domain of the minimal solution.

use serde::Serialize;

use crate::bsde::{solve_with_driver, Driver, Solution, Supersolution};
use crate::error::{Error, Result};
use crate::lattice::{AdaptedField, LatticeModel, NodePoint, FULL_TREE_MAX_STEPS};
use crate::model::{Claim, Constraint, Generator};

/// Effective driver `g + m * phi`.
#[derive(Debug, Clone, Copy)]
pub struct PenalizedDriver<'a> {
    pub generator: &'a Generator,
    pub constraint: &'a Constraint,
    pub m: f64,
}

impl Driver for PenalizedDriver<'_> {
    #[inline]
    fn value(&self, at: &NodePoint, y: f64, z: f64) -> f64 {
        self.generator.evaluate(at.t, y, z) + self.m * self.constraint.evaluate(at, y, z)
    }

    fn lipschitz_y(&self) -> f64 {
        self.generator.lipschitz_y() + self.m * self.constraint.lipschitz_y()
    }

    fn expansive_y(&self) -> f64 {
        if self.constraint.non_increasing_in_y() {
            self.generator.lipschitz_y()
        } else {
            self.lipschitz_y()
        }
    }

    fn lipschitz_z(&self) -> f64 {
        self.generator.lipschitz_z() + self.m * self.constraint.lipschitz_z()
    }
}

/// Solution of the penalized equation at one level `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedRun {
    pub m: f64,
    pub solution: Solution,
    /// `dA_i = m * phi(t_i, y_i, z_i) * dt`, steps `0..n`.
    pub a_increments: AdaptedField,
}

impl PenalizedRun {
    pub fn y0(&self) -> f64 {
        self.solution.y0()
    }

    pub fn y(&self) -> &AdaptedField {
        &self.solution.y
    }

    /// `(y, z, dA)` as a supersolution for the unpenalized generator.
    pub fn to_supersolution(&self) -> Supersolution {
        Supersolution {
            y: self.solution.y.clone(),
            z: self.solution.z.clone(),
            c_increments: self.a_increments.clone(),
        }
    }
}

/// Solves the BSDE with generator `g + m * phi` and records the penalty increments.
pub fn solve_penalized(
    g: &Generator,
    phi: &Constraint,
    m: f64,
    xi: &Claim,
    lattice: &LatticeModel,
) -> Result<PenalizedRun> {
    solve_penalized_leaves(g, phi, m, xi.leaves(lattice)?, lattice)
}

/// [`solve_penalized`] for precomputed terminal leaves.
pub fn solve_penalized_leaves(
    g: &Generator,
    phi: &Constraint,
    m: f64,
    terminal: Vec<f64>,
    lattice: &LatticeModel,
) -> Result<PenalizedRun> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::InvalidSchedule(format!(
            "penalty level must be positive and finite, got {m}"
        )));
    }
    g.validate()?;
    phi.validate()?;
    let driver = PenalizedDriver {
        generator: g,
        constraint: phi,
        m,
    };
    let solution = solve_with_driver(&driver, terminal, lattice)?;
    let dt = lattice.dt();
    let layers = (0..lattice.n_steps())
        .map(|i| {
            (0..lattice.nodes_at(i))
                .map(|j| {
                    let at = lattice.point(i, j);
                    m * phi.evaluate(&at, solution.y.at(i, j), solution.z.at(i, j)) * dt
                })
                .collect()
        })
        .collect();
    let a_increments = AdaptedField::new(lattice, 0, layers)?;
    Ok(PenalizedRun {
        m,
        solution,
        a_increments,
    })
}

/// Geometric penalty schedule `m0, m0 * growth, ...` up to `m_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Schedule {
    pub m0: f64,
    pub growth: f64,
    pub m_max: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            m0: 1.0,
            growth: 2.0,
            m_max: 65536.0,
        }
    }
}

impl Schedule {
    pub fn new(m0: f64, growth: f64, m_max: f64) -> Result<Self> {
        let s = Self { m0, growth, m_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m0.is_finite() && self.m0 > 0.0) {
            return Err(Error::InvalidSchedule(format!("m0 must be positive, got {}", self.m0)));
        }
        if !(self.growth.is_finite() && self.growth > 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "growth factor must exceed 1, got {}",
                self.growth
            )));
        }
        if !(self.m_max.is_finite() && self.m_max >= self.m0) {
            return Err(Error::InvalidSchedule(format!(
                "m_max must be finite and at least m0, got {}",
                self.m_max
            )));
        }
        Ok(())
    }

    /// Penalty levels in increasing order.
    pub fn levels(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut m = self.m0;
        let cap = self.m_max * (1.0 + 1e-12);
        while m <= cap {
            out.push(m);
            m *= self.growth;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Cauchy gap `|y0(m_k) - y0(m_{k-1})|` accepted as convergence.
    pub tol_m: f64,
    /// `y0` above this is treated as divergence.
    pub y_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_m: 1e-4,
            y_max: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainStatus {
    Converged,
    Diverged,
    /// The schedule ran out with shrinking but still too large gaps.
    Exhausted,
}

impl DomainStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            DomainStatus::Converged => "converged",
            DomainStatus::Diverged => "diverged",
            DomainStatus::Exhausted => "exhausted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRecord {
    pub m: f64,
    pub y0: f64,
    /// `|y0(m) - y0(previous m)|`; absent on the first level.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimalSolutionResult {
    pub runs: Vec<PenalizedRun>,
    pub domain_status: DomainStatus,
    pub gap_trace: Vec<GapRecord>,
    /// Why the run was classified as diverged, if it was.
    pub divergence: Option<String>,
}

impl MinimalSolutionResult {
    pub fn last_run(&self) -> &PenalizedRun {
        self.runs.last().expect("a schedule has at least one level")
    }

    pub fn y0(&self) -> f64 {
        self.last_run().y0()
    }

    pub fn limit_y(&self) -> &AdaptedField {
        self.last_run().y()
    }

    /// The last run as a supersolution. Its increasing part is the penalty
    /// process `A^m` at the final level, a proxy for the minimal `C`.
    pub fn limit_supersolution(&self) -> Supersolution {
        self.last_run().to_supersolution()
    }

    pub fn final_m(&self) -> f64 {
        self.last_run().m
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.gap_trace.last().and_then(|g| g.gap)
    }

    /// Largest decrease of `y^m` between consecutive levels over all nodes.
    pub fn monotonicity_violation(&self) -> f64 {
        self.runs
            .windows(2)
            .map(|w| w[0].y().max_pairwise(w[1].y(), |a, b| a - b).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Runs the schedule, stopping as soon as the Cauchy gap drops below `tol_m`.
pub fn solve_minimal(
    g: &Generator,
    phi: &Constraint,
    xi: &Claim,
    lattice: &LatticeModel,
    schedule: &Schedule,
    tolerances: &Tolerances,
) -> Result<MinimalSolutionResult> {
    run_schedule(g, phi, xi.leaves(lattice)?, lattice, schedule, tolerances, true)
}

/// Runs every level of the schedule so that results for different claims are
/// taken at the same penalty level.
pub fn solve_full_schedule(
    g: &Generator,
    phi: &Constraint,
    xi: &Claim,
    lattice: &LatticeModel,
    schedule: &Schedule,
    tolerances: &Tolerances,
) -> Result<MinimalSolutionResult> {
    run_schedule(g, phi, xi.leaves(lattice)?, lattice, schedule, tolerances, false)
}

fn run_schedule(
    g: &Generator,
    phi: &Constraint,
    terminal: Vec<f64>,
    lattice: &LatticeModel,
    schedule: &Schedule,
    tolerances: &Tolerances,
    early_stop: bool,
) -> Result<MinimalSolutionResult> {
    schedule.validate()?;
    let mut runs: Vec<PenalizedRun> = Vec::new();
    let mut gap_trace: Vec<GapRecord> = Vec::new();
    for m in schedule.levels() {
        let run = solve_penalized_leaves(g, phi, m, terminal.clone(), lattice)?;
        let y0 = run.y0();
        let gap = runs.last().map(|prev| (y0 - prev.y0()).abs());
        gap_trace.push(GapRecord { m, y0, gap });
        runs.push(run);
        if !(y0 <= tolerances.y_max) {
            return Ok(MinimalSolutionResult {
                runs,
                domain_status: DomainStatus::Diverged,
                gap_trace,
                divergence: Some(format!("y0 = {y0} exceeded y_max = {}", tolerances.y_max)),
            });
        }
        if early_stop && gap.is_some_and(|gap| gap <= tolerances.tol_m) {
            return Ok(MinimalSolutionResult {
                runs,
                domain_status: DomainStatus::Converged,
                gap_trace,
                divergence: None,
            });
        }
    }
    let gaps: Vec<f64> = gap_trace.iter().filter_map(|g| g.gap).collect();
    let (domain_status, divergence) = match gaps.as_slice() {
        [.., last] if *last <= tolerances.tol_m => (DomainStatus::Converged, None),
        [.., prev, last] if *last > 0.9 * prev => (
            DomainStatus::Diverged,
            Some(format!(
                "gap {last:e} at m_max did not shrink below 0.9 x previous gap {prev:e}"
            )),
        ),
        _ => (DomainStatus::Exhausted, None),
    };
    Ok(MinimalSolutionResult {
        runs,
        domain_status,
        gap_trace,
        divergence,
    })
}

/// Cumulative penalty process `A` along every path, `A_0 = 0`.
///
/// `A` is path dependent even on a recombining lattice, so the result is
/// indexed by path bits (the full-tree addressing) whatever the lattice mode.
pub fn extract_increasing_part(run: &PenalizedRun, lattice: &LatticeModel) -> Result<AdaptedField> {
    let n = lattice.n_steps();
    if n > FULL_TREE_MAX_STEPS {
        return Err(Error::Precondition(format!(
            "path-wise increasing part needs at most {FULL_TREE_MAX_STEPS} steps, got {n}"
        )));
    }
    let mut layers: Vec<Vec<f64>> = vec![vec![0.0]];
    for i in 0..n {
        let prev = &layers[i];
        let mut next = vec![0.0; prev.len() * 2];
        for (path, a) in prev.iter().enumerate() {
            let inc = run.a_increments.at(i, lattice.node_of_path(path));
            next[path << 1] = a + inc;
            next[(path << 1) | 1] = a + inc;
        }
        layers.push(next);
    }
    Ok(AdaptedField::from_path_layers(layers))
}
