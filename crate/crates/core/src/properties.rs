//! Quantified checks of the structural results for minimal constrained solutions.
//!
//! Every check solves the full penalty schedule for each claim involved, so
//! inequalities are compared level by level at a common `m` as well as at the
//! final level that stands in for the limit. Per-level inequalities are exact
//! up to rounding and use [`ARITHMETIC_TOL`]; statements about sequences of
//! claims carry their own budgets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::LatticeModel;
use crate::model::{make_claim_sequence, random_table, Claim, Constraint, Generator, SequenceScheme};
use crate::penalize::{solve_full_schedule, solve_minimal, DomainStatus, MinimalSolutionResult, Schedule, Tolerances};

/// Tolerance for inequalities that hold exactly at each penalty level.
pub const ARITHMETIC_TOL: f64 = 1e-9;
/// Tolerance for monotonicity of values along a sequence of claims or levels.
pub const MONOTONE_TOL: f64 = 1e-11;
/// Budget for `|E_0(xi_n) - E_0(xi)|` at the end of a Fatou sequence.
pub const FATOU_LIMIT_BUDGET: f64 = 1.5e-2;
/// Bound on the last `L^2` distance of a perturbation sequence.
pub const L2_FINAL_BOUND: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRecord {
    pub instance: usize,
    pub label: String,
    pub violation: f64,
    pub metrics: Vec<Metric>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub property_name: String,
    pub instances_tested: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub worst_instance: String,
    pub pass: bool,
    pub trace: Vec<InstanceRecord>,
}

struct ReportBuilder {
    name: String,
    tolerance: f64,
    worst: (f64, String),
    trace: Vec<InstanceRecord>,
}

impl ReportBuilder {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            tolerance,
            worst: (0.0, String::from("none")),
            trace: Vec::new(),
        }
    }

    fn record(&mut self, label: String, violation: f64, metrics: Vec<(&str, f64)>) {
        if self.trace.is_empty() || violation > self.worst.0 || violation.is_nan() {
            self.worst = (violation, label.clone());
        }
        self.trace.push(InstanceRecord {
            instance: self.trace.len(),
            label,
            violation,
            metrics: metrics
                .into_iter()
                .map(|(name, value)| Metric {
                    name: name.to_string(),
                    value,
                })
                .collect(),
        });
    }

    fn finish(self) -> PropertyReport {
        let max_violation = self.trace.iter().map(|r| r.violation).fold(0.0, |a: f64, b| {
            if b.is_nan() {
                f64::NAN
            } else {
                a.max(b)
            }
        });
        PropertyReport {
            property_name: self.name,
            instances_tested: self.trace.len(),
            pass: max_violation <= self.tolerance,
            max_violation,
            tolerance: self.tolerance,
            worst_instance: self.worst.1,
            trace: self.trace,
        }
    }
}

/// Largest value of a node-wise expression over levels, steps and nodes.
#[derive(Debug, Clone, Copy)]
struct Worst {
    value: f64,
    m: f64,
    step: usize,
    node: usize,
}

impl Worst {
    fn describe(&self) -> String {
        format!("m={} step={} node={}", self.m, self.step, self.node)
    }
}

fn node_max(
    lattice: &LatticeModel,
    results: &[&MinimalSolutionResult],
    levels: impl Iterator<Item = usize> + Clone,
    f: impl Fn(&[f64]) -> f64,
) -> Worst {
    let mut worst = Worst {
        value: f64::NEG_INFINITY,
        m: f64::NAN,
        step: 0,
        node: 0,
    };
    let depth = results.iter().map(|r| r.runs.len()).min().unwrap_or(0);
    let mut vals = vec![0.0; results.len()];
    for k in levels.filter(|k| *k < depth) {
        for step in 0..=lattice.n_steps() {
            for node in 0..lattice.nodes_at(step) {
                for (slot, r) in vals.iter_mut().zip(results) {
                    *slot = r.runs[k].y().at(step, node);
                }
                let v = f(&vals);
                if v > worst.value || v.is_nan() {
                    worst = Worst {
                        value: v,
                        m: results[0].runs[k].m,
                        step,
                        node,
                    };
                }
            }
        }
    }
    worst
}

/// A bundle of everything fixed across the instances of one check.
#[derive(Debug, Clone)]
pub struct Harness {
    pub generator: Generator,
    pub constraint: Constraint,
    pub lattice: LatticeModel,
    pub schedule: Schedule,
    pub tolerances: Tolerances,
}

impl Harness {
    pub fn new(
        generator: Generator,
        constraint: Constraint,
        lattice: LatticeModel,
        schedule: Schedule,
        tolerances: Tolerances,
    ) -> Self {
        Self {
            generator,
            constraint,
            lattice,
            schedule,
            tolerances,
        }
    }

    /// Every level of the schedule for `xi`.
    pub fn solve(&self, xi: &Claim) -> Result<MinimalSolutionResult> {
        solve_full_schedule(
            &self.generator,
            &self.constraint,
            xi,
            &self.lattice,
            &self.schedule,
            &self.tolerances,
        )
    }

    fn all_levels(&self) -> std::ops::Range<usize> {
        0..self.schedule.levels().len()
    }

    fn last_level(&self) -> std::ops::Range<usize> {
        let n = self.schedule.levels().len();
        n - 1..n
    }

    fn leaves(&self, claim: &Claim) -> Result<Vec<f64>> {
        claim.leaves(&self.lattice)
    }

    /// `xi <= eta` leafwise implies `E_t(xi) <= E_t(eta)` at every node and level.
    pub fn check_comparison(&self, pairs: &[(Claim, Claim)]) -> Result<PropertyReport> {
        let mut report = ReportBuilder::new("comparison", ARITHMETIC_TOL);
        for (k, (xi, eta)) in pairs.iter().enumerate() {
            let a = self.leaves(xi)?;
            let b = self.leaves(eta)?;
            if let Some(leaf) = a.iter().zip(&b).position(|(x, y)| x > y) {
                return Err(Error::Precondition(format!(
                    "comparison pair {k}: xi exceeds eta at leaf {leaf}"
                )));
            }
            let ra = self.solve(xi)?;
            let rb = self.solve(eta)?;
            let w = node_max(&self.lattice, &[&ra, &rb], self.all_levels(), |v| (v[0] - v[1]).max(0.0));
            report.record(
                format!("pair {k}: {xi} <= {eta} at {}", w.describe()),
                w.value,
                vec![("y0_xi", ra.y0()), ("y0_eta", rb.y0())],
            );
        }
        Ok(report.finish())
    }

    /// `E_t(a xi + (1-a) eta) <= a E_t(xi) + (1-a) E_t(eta)` per level and at the limit.
    pub fn check_convexity(&self, triples: &[(Claim, Claim, f64)]) -> Result<Vec<PropertyReport>> {
        if !(self.generator.convex() && self.constraint.convex()) {
            return Err(Error::Precondition(format!(
                "convexity check needs convex g and phi, got {} and {}",
                self.generator, self.constraint
            )));
        }
        let mut per_level = ReportBuilder::new("convexity.per_level", ARITHMETIC_TOL);
        let mut limit = ReportBuilder::new("convexity.limit", self.tolerances.tol_m + ARITHMETIC_TOL);
        for (k, (xi, eta, a)) in triples.iter().enumerate() {
            if !(0.0..=1.0).contains(a) {
                return Err(Error::Precondition(format!("triple {k}: weight {a} outside [0, 1]")));
            }
            let mix = Claim::mix(*a, xi.clone(), eta.clone());
            let rx = self.solve(xi)?;
            let re = self.solve(eta)?;
            let rm = self.solve(&mix)?;
            let a = *a;
            let gap = |v: &[f64]| (v[2] - a * v[0] - (1.0 - a) * v[1]).max(0.0);
            let w = node_max(&self.lattice, &[&rx, &re, &rm], self.all_levels(), gap);
            let label = format!("triple {k}: a={a} {xi}, {eta}");
            per_level.record(format!("{label} at {}", w.describe()), w.value, vec![("a", a)]);
            let w = node_max(&self.lattice, &[&rx, &re, &rm], self.last_level(), gap);
            limit.record(format!("{label} at {}", w.describe()), w.value, vec![("a", a), ("y0_mix", rm.y0())]);
        }
        Ok(vec![per_level.finish(), limit.finish()])
    }

    /// For `xi_n` increasing to `xi`, `E_0(xi_n)` is non-decreasing and reaches `E_0(xi)`.
    pub fn check_fatou(
        &self,
        base: &Claim,
        scheme: SequenceScheme,
        count: usize,
        limit_budget: f64,
    ) -> Result<Vec<PropertyReport>> {
        if matches!(scheme, SequenceScheme::Perturbation { .. }) {
            return Err(Error::Precondition(
                "Fatou check needs an increasing sequence (shift or truncate scheme)".into(),
            ));
        }
        let seq = make_claim_sequence(base, scheme, count, &self.lattice)?;
        self.require_increasing(&seq, base)?;
        let target = self.solve(base)?.y0();
        let values = seq
            .iter()
            .map(|c| Ok(self.solve(c)?.y0()))
            .collect::<Result<Vec<f64>>>()?;

        let mut monotone = ReportBuilder::new("fatou.monotone", MONOTONE_TOL);
        let mut fitted_c: f64 = 0.0;
        for (n, v) in values.iter().enumerate() {
            let drop = if n == 0 { 0.0 } else { (values[n - 1] - v).max(0.0) };
            let gap = (target - v).abs();
            fitted_c = fitted_c.max((n + 1) as f64 * gap);
            monotone.record(format!("n={}", n + 1), drop, vec![("e0", *v), ("gap", gap)]);
        }
        let mut limit = ReportBuilder::new("fatou.limit", limit_budget);
        let last = *values.last().expect("count >= 1");
        limit.record(
            format!("n={count}: {} vs {base}", seq[count - 1]),
            (last - target).abs(),
            vec![("e0_limit", target), ("e0_last", last), ("fitted_c", fitted_c)],
        );
        Ok(vec![monotone.finish(), limit.finish()])
    }

    fn require_increasing(&self, seq: &[Claim], base: &Claim) -> Result<()> {
        let top = self.leaves(base)?;
        let mut prev: Option<Vec<f64>> = None;
        for (n, c) in seq.iter().enumerate() {
            let v = self.leaves(c)?;
            if v.iter().zip(&top).any(|(a, b)| a > b) {
                return Err(Error::Precondition(format!("sequence element {} exceeds the base claim", n + 1)));
            }
            if let Some(p) = &prev {
                if p.iter().zip(&v).any(|(a, b)| a > b) {
                    return Err(Error::Precondition(format!("sequence not increasing at element {}", n + 1)));
                }
            }
            prev = Some(v);
        }
        Ok(())
    }

    fn distance_at(&self, a: &MinimalSolutionResult, b: &MinimalSolutionResult, step: usize) -> Result<f64> {
        let diff: Vec<f64> = a
            .limit_y()
            .layer(step)?
            .iter()
            .zip(b.limit_y().layer(step)?)
            .map(|(x, y)| x - y)
            .collect();
        self.lattice.l2_norm(step, &diff)
    }

    fn check_step(&self, t_step: usize) -> Result<()> {
        if t_step > self.lattice.n_steps() {
            return Err(Error::Precondition(format!(
                "t_step {t_step} beyond the horizon step {}",
                self.lattice.n_steps()
            )));
        }
        Ok(())
    }

    /// `L^2` distance at `t_step` along `xi_n = xi + 2^-n noise`, with the
    /// `xi_n ^ xi <= xi_n <= xi_n v xi` sandwich checked at every node.
    pub fn check_l2_continuity(
        &self,
        base: &Claim,
        t_step: usize,
        seed: u64,
        halvings: usize,
        final_bound: f64,
    ) -> Result<Vec<PropertyReport>> {
        self.check_step(t_step)?;
        let scheme = SequenceScheme::Perturbation { seed, rate: 0.5 };
        let seq = make_claim_sequence(base, scheme, halvings, &self.lattice)?;
        let reference = self.solve(base)?;
        let base_leaves = self.leaves(base)?;
        let n = self.lattice.n_steps();

        let mut decay = ReportBuilder::new("l2.decay", MONOTONE_TOL);
        let mut sandwich = ReportBuilder::new("l2.sandwich", ARITHMETIC_TOL);
        let mut last_d = 0.0;
        let mut prev_d: Option<f64> = None;
        for (k, xi_n) in seq.iter().enumerate() {
            let leaves = self.leaves(xi_n)?;
            let diff: Vec<f64> = leaves.iter().zip(&base_leaves).map(|(a, b)| a - b).collect();
            let perturbation = self.lattice.l2_norm(n, &diff)?;
            let run = self.solve(xi_n)?;
            let upper = self.solve(&xi_n.clone().max(base.clone()))?;
            let lower = self.solve(&xi_n.clone().min(base.clone()))?;
            let d = self.distance_at(&run, &reference, t_step)?;
            let kappa = if perturbation > 0.0 { d / perturbation } else { 0.0 };
            let rise = prev_d.map_or(0.0, |p| (d - p).max(0.0));
            decay.record(
                format!("n={}", k + 1),
                rise,
                vec![("perturbation_norm", perturbation), ("d_n", d), ("kappa", kappa)],
            );
            let w = node_max(&self.lattice, &[&lower, &run, &upper], self.all_levels(), |v| {
                (v[0] - v[1]).max(v[1] - v[2]).max(0.0)
            });
            sandwich.record(format!("n={} at {}", k + 1, w.describe()), w.value, vec![("d_n", d)]);
            prev_d = Some(d);
            last_d = d;
        }
        let mut fin = ReportBuilder::new("l2.final", final_bound);
        fin.record(format!("n={halvings} at step {t_step}"), last_d, vec![("d_n", last_d)]);
        Ok(vec![decay.finish(), fin.finish(), sandwich.finish()])
    }

    /// `L^2` distance at `t_step` for `xi_n = xi - 1/n`, approaching from below.
    pub fn check_from_below(
        &self,
        base: &Claim,
        t_step: usize,
        count: usize,
        final_bound: f64,
    ) -> Result<Vec<PropertyReport>> {
        self.check_step(t_step)?;
        let seq = make_claim_sequence(base, SequenceScheme::ShiftUp, count, &self.lattice)?;
        self.require_increasing(&seq, base)?;
        let reference = self.solve(base)?;
        let mut decay = ReportBuilder::new("from_below.decay", MONOTONE_TOL);
        let mut order = ReportBuilder::new("from_below.order", ARITHMETIC_TOL);
        let mut prev_d: Option<f64> = None;
        let mut last_d = 0.0;
        for (k, xi_n) in seq.iter().enumerate() {
            let run = self.solve(xi_n)?;
            let d = self.distance_at(&run, &reference, t_step)?;
            let rise = prev_d.map_or(0.0, |p| (d - p).max(0.0));
            decay.record(format!("n={}", k + 1), rise, vec![("d_n", d)]);
            let w = node_max(&self.lattice, &[&run, &reference], self.all_levels(), |v| (v[0] - v[1]).max(0.0));
            order.record(format!("n={} at {}", k + 1, w.describe()), w.value, vec![]);
            prev_d = Some(d);
            last_d = d;
        }
        let mut fin = ReportBuilder::new("from_below.final", final_bound);
        fin.record(format!("n={count} at step {t_step}"), last_d, vec![("d_n", last_d)]);
        Ok(vec![decay.finish(), fin.finish(), order.finish()])
    }

    fn require_risk_structure(&self) -> Result<()> {
        let g = &self.generator;
        let phi = &self.constraint;
        let mut missing = Vec::new();
        if !g.vanishes_at_zero() {
            missing.push("g(t, y, 0) = 0");
        }
        if !g.independent_of_y() {
            missing.push("g independent of y");
        }
        if !phi.independent_of_y() {
            missing.push("phi independent of y");
        }
        if !(g.convex() && phi.convex()) {
            missing.push("convex g and phi");
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "risk measure needs {} ({g}, {phi})",
                missing.join(", ")
            )))
        }
    }

    /// `rho(xi) = E_0(-xi)` with the early-stopping schedule.
    pub fn risk_measure(&self, xi: &Claim) -> Result<RiskValue> {
        self.require_risk_structure()?;
        let r = solve_minimal(
            &self.generator,
            &self.constraint,
            &xi.clone().negate(),
            &self.lattice,
            &self.schedule,
            &self.tolerances,
        )?;
        Ok(RiskValue {
            rho: r.y0(),
            status: r.domain_status,
            final_m: r.final_m(),
        })
    }

    /// `rho` at every level of the schedule.
    pub fn risk_levels(&self, xi: &Claim) -> Result<Vec<f64>> {
        self.require_risk_structure()?;
        Ok(self.solve(&xi.clone().negate())?.runs.iter().map(|r| r.y0()).collect())
    }

    /// Monotonicity, convexity, cash invariance and the Fatou property of `rho`,
    /// each checked at every level for each claim in `claims`.
    pub fn audit_risk_axioms(
        &self,
        claims: &[Claim],
        seed: u64,
        fatou_count: usize,
        fatou_budget: f64,
    ) -> Result<Vec<PropertyReport>> {
        self.require_risk_structure()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut monotone = ReportBuilder::new("risk.monotone", ARITHMETIC_TOL);
        let mut convex = ReportBuilder::new("risk.convex", ARITHMETIC_TOL);
        let mut cash = ReportBuilder::new("risk.cash_invariance", ARITHMETIC_TOL);
        let mut fatou_mono = ReportBuilder::new("risk.fatou_monotone", MONOTONE_TOL);
        let mut fatou_limit = ReportBuilder::new("risk.fatou_limit", fatou_budget);
        let max_gap = |a: &[f64], b: &[f64], f: &dyn Fn(f64, f64) -> f64| {
            a.iter().zip(b).map(|(x, y)| f(*x, *y)).fold(0.0, f64::max)
        };
        for (k, xi) in claims.iter().enumerate() {
            let other = &claims[(k + 1) % claims.len()];
            let bump = random_table(&self.lattice, &mut rng, 0.0, 1.0);
            let c: f64 = rng.gen_range(-1.0..=1.0);
            let a: f64 = rng.gen_range(0.0..=1.0);

            let rho = self.risk_levels(xi)?;
            let rho_up = self.risk_levels(&xi.clone().add(bump))?;
            monotone.record(format!("claim {k}"), max_gap(&rho_up, &rho, &|u, base| (u - base).max(0.0)), vec![]);

            let rho_other = self.risk_levels(other)?;
            let rho_mix = self.risk_levels(&Claim::mix(a, xi.clone(), other.clone()))?;
            let conv = rho_mix
                .iter()
                .zip(rho.iter().zip(&rho_other))
                .map(|(m, (x, o))| (m - a * x - (1.0 - a) * o).max(0.0))
                .fold(0.0, f64::max);
            convex.record(format!("claim {k} with {}, a={a}", (k + 1) % claims.len()), conv, vec![("a", a)]);

            let rho_cash = self.risk_levels(&xi.clone().shift(c))?;
            cash.record(
                format!("claim {k}, c={c}"),
                max_gap(&rho_cash, &rho, &|s, base| (s - (base - c)).abs()),
                vec![("c", c)],
            );

            // xi_n = xi - 1/n increases to xi, so rho(xi_n) should decrease to rho(xi)
            let seq = make_claim_sequence(xi, SequenceScheme::ShiftUp, fatou_count, &self.lattice)?;
            let mut prev: Option<Vec<f64>> = None;
            let mut rise: f64 = 0.0;
            for c in &seq {
                let r = self.risk_levels(c)?;
                if let Some(p) = &prev {
                    rise = rise.max(max_gap(&r, p, &|cur, before| (cur - before).max(0.0)));
                }
                prev = Some(r);
            }
            fatou_mono.record(format!("claim {k}"), rise, vec![]);
            let last = prev.expect("fatou_count >= 1");
            fatou_limit.record(
                format!("claim {k}, n={fatou_count}"),
                max_gap(&last, &rho, &|x, y| (x - y).abs()),
                vec![("rho", *rho.last().expect("non-empty schedule"))],
            );
        }
        Ok(vec![
            monotone.finish(),
            convex.finish(),
            cash.finish(),
            fatou_mono.finish(),
            fatou_limit.finish(),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskValue {
    pub rho: f64,
    pub status: DomainStatus,
    pub final_m: f64,
}

/// `count` pairs `(xi, eta)` with uniform `[-1, 1]` leaves for `xi` and
/// `eta = xi + uniform [0, 1]` leaves.
pub fn random_ordered_pairs(lattice: &LatticeModel, seed: u64, count: usize) -> Vec<(Claim, Claim)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let xi = random_table(lattice, &mut rng, -1.0, 1.0);
            let bump = random_table(lattice, &mut rng, 0.0, 1.0);
            (xi.clone(), xi.add(bump))
        })
        .collect()
}

/// `count` triples of two uniform `[-1, 1]` claims and a uniform weight.
pub fn random_convex_triples(lattice: &LatticeModel, seed: u64, count: usize) -> Vec<(Claim, Claim, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let xi = random_table(lattice, &mut rng, -1.0, 1.0);
            let eta = random_table(lattice, &mut rng, -1.0, 1.0);
            (xi, eta, rng.gen_range(0.0..=1.0))
        })
        .collect()
}

pub fn random_claims(lattice: &LatticeModel, seed: u64, count: usize) -> Vec<Claim> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| random_table(lattice, &mut rng, -1.0, 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, LatticeMode};
    use crate::model::Barrier;

    fn reflect0() -> Constraint {
        Constraint::ReflectBelow {
            barrier: Barrier::Constant { k: 0.0 },
        }
    }

    fn harness(g: Generator, phi: Constraint, n: usize, mode: LatticeMode, m_max: f64) -> Harness {
        Harness::new(
            g,
            phi,
            build_lattice(1.0, n, mode).unwrap(),
            Schedule::new(1.0, 2.0, m_max).unwrap(),
            Tolerances::default(),
        )
    }

    #[test]
    fn comparison_trivial_cases() {
        let h = harness(Generator::Zero, Constraint::None, 6, LatticeMode::Recombining, 4.0);
        let xi = Claim::Call { k: 0.0 };
        let r = h.check_comparison(&[(xi.clone(), xi.clone())]).unwrap();
        assert_eq!(r.max_violation, 0.0);
        assert!(r.pass);

        let eta = xi.clone().shift(0.1);
        let r = h.check_comparison(&[(xi.clone(), eta.clone())]).unwrap();
        assert_eq!(r.max_violation, 0.0);
        let a = h.solve(&xi).unwrap();
        let b = h.solve(&eta).unwrap();
        let d = b.limit_y().max_pairwise(a.limit_y(), |x, y| (x - y - 0.1).abs());
        assert!(d < 1e-14);

        assert!(h.check_comparison(&[(eta, xi)]).is_err());
    }

    #[test]
    fn comparison_random_pairs() {
        let h = harness(Generator::AbsZ { c: 1.0 }, reflect0(), 6, LatticeMode::FullTree, 256.0);
        let pairs = random_ordered_pairs(&h.lattice, 9, 20);
        let r = h.check_comparison(&pairs).unwrap();
        assert!(r.pass, "{}", r.max_violation);
        assert_eq!(r.instances_tested, 20);
        assert_eq!(r.trace.len(), 20);
    }

    #[test]
    fn convexity_trivial_and_named_instance() {
        let h = harness(Generator::AbsZ { c: 1.0 }, reflect0(), 8, LatticeMode::Recombining, 4096.0);
        let xi = Claim::Call { k: 0.0 };
        let eta = Claim::MaxWith { k: 0.0 };
        let reports = h
            .check_convexity(&[
                (xi.clone(), eta.clone(), 0.0),
                (xi.clone(), eta.clone(), 1.0),
                (xi.clone(), xi.clone(), 0.3),
            ])
            .unwrap();
        for r in &reports {
            assert!(r.max_violation <= 1e-14, "{}: {}", r.property_name, r.max_violation);
        }
        let reports = h.check_convexity(&[(xi, eta, 0.5)]).unwrap();
        assert!(reports.iter().all(|r| r.pass));
        assert!(h.check_convexity(&[(Claim::Constant(0.0), Claim::Constant(1.0), 2.0)]).is_err());
    }

    #[test]
    fn fatou_linear_case_has_exact_gaps() {
        let h = harness(Generator::Zero, Constraint::None, 6, LatticeMode::Recombining, 2.0);
        let reports = h.check_fatou(&Claim::TerminalW, SequenceScheme::ShiftUp, 10, FATOU_LIMIT_BUDGET).unwrap();
        let trace = &reports[0].trace;
        for (n, rec) in trace.iter().enumerate() {
            let gap = rec.metrics.iter().find(|m| m.name == "gap").unwrap().value;
            assert!((gap - 1.0 / (n + 1) as f64).abs() < 1e-14);
        }
        assert!(reports[0].pass);
        assert!(!reports[1].pass, "gap 1/10 exceeds the budget");
        assert!(h
            .check_fatou(&Claim::TerminalW, SequenceScheme::Perturbation { seed: 1, rate: 0.5 }, 3, 1.0)
            .is_err());
    }

    #[test]
    fn fatou_constant_sequence_and_truncation() {
        let h = harness(Generator::AbsZ { c: 0.5 }, reflect0(), 6, LatticeMode::Recombining, 64.0);
        // truncation below -n leaves a claim bounded below by -1 unchanged
        let base = Claim::MaxWith { k: 0.0 };
        let reports = h.check_fatou(&base, SequenceScheme::TruncateBelow, 5, 1e-15).unwrap();
        assert!(reports.iter().all(|r| r.pass && r.max_violation == 0.0));
    }

    #[test]
    fn l2_trivial_cases() {
        let h = harness(Generator::Zero, Constraint::None, 8, LatticeMode::FullTree, 2.0);
        let reports = h.check_l2_continuity(&Claim::Call { k: 0.0 }, 4, 3, 6, L2_FINAL_BOUND).unwrap();
        for rec in &reports[0].trace {
            let kappa = rec.metrics.iter().find(|m| m.name == "kappa").unwrap().value;
            assert!(kappa <= 1.0 + 1e-12);
        }
        assert!(reports[2].pass);
        assert!(h.check_l2_continuity(&Claim::Call { k: 0.0 }, 9, 3, 6, 1.0).is_err());
    }

    #[test]
    fn from_below_linear_case() {
        let h = harness(Generator::Zero, Constraint::None, 6, LatticeMode::Recombining, 2.0);
        let reports = h.check_from_below(&Claim::TerminalW, 3, 20, 0.051).unwrap();
        assert!(reports.iter().all(|r| r.pass));
        let last = reports[1].trace[0].violation;
        assert!((last - 0.05).abs() < 1e-14);
    }

    #[test]
    fn risk_measure_preconditions_and_values() {
        let h = harness(Generator::Zero, Constraint::None, 6, LatticeMode::Recombining, 2.0);
        let rho = h.risk_measure(&Claim::Call { k: 0.0 }).unwrap().rho;
        let mean = h.lattice.expectation(6, &Claim::Call { k: 0.0 }.leaves(&h.lattice).unwrap()).unwrap();
        assert!((rho + mean).abs() < 1e-14);

        let h = harness(Generator::Drift { mu: 0.4 }, Constraint::None, 6, LatticeMode::Recombining, 2.0);
        assert!((h.risk_measure(&Claim::Constant(0.7)).unwrap().rho + 0.7).abs() < 1e-14);

        let bad = harness(Generator::Discount { r: 0.1 }, Constraint::None, 6, LatticeMode::Recombining, 2.0);
        assert!(bad.risk_measure(&Claim::TerminalW).is_err());
        let bad = harness(Generator::Zero, reflect0(), 6, LatticeMode::Recombining, 2.0);
        assert!(bad.risk_measure(&Claim::TerminalW).is_err());
    }

    #[test]
    fn risk_of_feasible_claim() {
        // -W_T has z = -1 everywhere, inside the unit ball, so rho = 0.5 * T
        let h = harness(Generator::AbsZ { c: 0.5 }, Constraint::ZBall { r: 1.0 }, 8, LatticeMode::Recombining, 2.0);
        let v = h.risk_measure(&Claim::TerminalW).unwrap();
        assert!((v.rho - 0.5).abs() < 1e-12);
        assert_eq!(v.status, DomainStatus::Converged);
    }

    #[test]
    fn risk_axioms_small_suite() {
        let h = harness(Generator::AbsZ { c: 0.5 }, Constraint::ZBall { r: 1.0 }, 8, LatticeMode::FullTree, 2.0);
        let claims = random_claims(&h.lattice, 4, 8);
        let reports = h.audit_risk_axioms(&claims, 4, 100, FATOU_LIMIT_BUDGET).unwrap();
        for r in &reports {
            assert!(r.pass, "{} {}", r.property_name, r.max_violation);
        }
    }

    #[test]
    fn reports_are_deterministic() {
        let h = harness(Generator::AbsZ { c: 1.0 }, reflect0(), 5, LatticeMode::FullTree, 64.0);
        let a = h.check_comparison(&random_ordered_pairs(&h.lattice, 1, 5)).unwrap();
        let b = h.check_comparison(&random_ordered_pairs(&h.lattice, 1, 5)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
