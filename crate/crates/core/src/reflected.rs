//! Dynamic-programming solver for the BSDE reflected on a lower barrier.
//!
//! Each step solves the implicit generator step and then projects onto the
//! barrier, a discrete Snell envelope with a driver. It is independent of the
//! penalization path and serves as its oracle when `phi = (y - S)^-`.

use crate::bsde::{check_stability, implicit_step, Supersolution};
use crate::error::{Error, Result};
use crate::lattice::{AdaptedField, LatticeModel};
use crate::model::{Barrier, Claim, Generator};

/// Leaves may sit this far below the barrier before the claim is rejected.
const TERMINAL_SLACK: f64 = 1e-12;

pub fn solve_reflected(
    g: &Generator,
    barrier: &Barrier,
    xi: &Claim,
    lattice: &LatticeModel,
) -> Result<Supersolution> {
    g.validate()?;
    check_stability(g, lattice)?;
    let n = lattice.n_steps();
    let terminal = xi.leaves(lattice)?;
    for (j, (v, s)) in terminal.iter().zip(barrier.layer(lattice, n)).enumerate() {
        if *v < s - TERMINAL_SLACK {
            return Err(Error::TerminalBelowBarrier {
                node: j,
                claim: *v,
                barrier: s,
            });
        }
    }

    let dt = lattice.dt();
    let lip_y = g.lipschitz_y();
    let mut y_layers: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut z_layers: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut c_layers: Vec<Vec<f64>> = vec![Vec::new(); n];
    y_layers[n] = terminal;
    for i in (0..n).rev() {
        let e = lattice.conditional_expectation(i + 1, &y_layers[i + 1])?;
        let z = lattice.martingale_coefficient(i + 1, &y_layers[i + 1])?;
        let t = lattice.grid().time(i);
        let mut y = Vec::with_capacity(e.len());
        let mut c = Vec::with_capacity(e.len());
        for (j, (ej, zj)) in e.iter().zip(&z).enumerate() {
            let free = implicit_step(*ej, dt, lip_y, |yy| g.evaluate(t, yy, *zj)).map_err(
                |last_update| Error::NonConvergence {
                    step: i,
                    node: j,
                    last_update,
                },
            )?;
            let s = barrier.value(&lattice.point(i, j));
            if free >= s {
                y.push(free);
                c.push(0.0);
            } else {
                // increment that closes the step identity at the projected value;
                // equals s - free when g does not depend on y
                y.push(s);
                c.push((s - ej - g.evaluate(t, s, *zj) * dt).max(0.0));
            }
        }
        y_layers[i] = y;
        z_layers[i] = z;
        c_layers[i] = c;
    }
    Supersolution::new(
        lattice,
        AdaptedField::new(lattice, 0, y_layers)?,
        AdaptedField::new(lattice, 0, z_layers)?,
        AdaptedField::new(lattice, 0, c_layers)?,
    )
}

/// Largest `(y_i - S_i) * dC_i` over all nodes.
pub fn complementarity_violation(s: &Supersolution, barrier: &Barrier, lattice: &LatticeModel) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..lattice.n_steps() {
        for j in 0..lattice.nodes_at(i) {
            let gap = s.y.at(i, j) - barrier.value(&lattice.point(i, j));
            worst = worst.max(gap * s.c_increments.at(i, j));
        }
    }
    worst
}

/// Largest `(S_i - y_i)^+` over all nodes.
pub fn barrier_violation(s: &Supersolution, barrier: &Barrier, lattice: &LatticeModel) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..=lattice.n_steps() {
        for j in 0..lattice.nodes_at(i) {
            worst = worst.max(barrier.value(&lattice.point(i, j)) - s.y.at(i, j));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{residual_check, solve_bsde};
    use crate::lattice::{build_lattice, LatticeMode};

    /// Path recursion written without the lattice helpers.
    fn brute_force(leaf: &dyn Fn(&[i32]) -> f64, n: usize, dt: f64, r: f64, s: f64, path: &mut Vec<i32>) -> f64 {
        if path.len() == n {
            return leaf(path);
        }
        path.push(1);
        let up = brute_force(leaf, n, dt, r, s, path);
        path.pop();
        path.push(-1);
        let down = brute_force(leaf, n, dt, r, s, path);
        path.pop();
        // implicit discount step: y = e - r y dt
        let free = 0.5 * (up + down) / (1.0 + r * dt);
        free.max(s)
    }

    #[test]
    fn six_node_enumeration() {
        let l = build_lattice(1.0, 2, LatticeMode::Recombining).unwrap();
        let barrier = Barrier::Constant { k: 0.0 };
        let out = solve_reflected(&Generator::Zero, &barrier, &Claim::MaxWith { k: 0.0 }, &l).unwrap();
        let s = 0.5f64.sqrt();
        // leaves {0, 0, 2s}; step 1 {0, s}; root s/2
        assert_eq!(out.y.layer(1).unwrap(), &[0.0, s]);
        assert!((out.y0() - 0.5 * s).abs() < 1e-15);
        assert_eq!(out.min_increment(), 0.0);
        let leaf = |p: &[i32]| (p.iter().sum::<i32>() as f64 * s).max(0.0);
        assert!((brute_force(&leaf, 2, 0.5, 0.0, 0.0, &mut Vec::new()) - out.y0()).abs() < 1e-15);
    }

    #[test]
    fn binding_barrier_matches_path_enumeration() {
        let n = 8;
        let l = build_lattice(1.0, n, LatticeMode::Recombining).unwrap();
        let r = 0.5;
        let barrier = Barrier::Constant { k: 1.0 };
        let out = solve_reflected(&Generator::Discount { r }, &barrier, &Claim::MaxWith { k: 1.0 }, &l).unwrap();
        let sq = l.grid().sqrt_dt();
        let leaf = |p: &[i32]| (p.iter().sum::<i32>() as f64 * sq).max(1.0);
        let brute = brute_force(&leaf, n, l.dt(), r, 1.0, &mut Vec::new());
        assert!((out.y0() - brute).abs() < 1e-13);
        assert!(out.c_increments.layers().any(|(_, c)| c.iter().any(|v| *v > 0.0)));
    }

    #[test]
    fn structural_invariants() {
        for g in [Generator::Zero, Generator::Discount { r: 0.8 }, Generator::AbsZ { c: 1.0 }] {
            for barrier in [Barrier::Constant { k: 0.3 }, Barrier::AbsW { scale: 0.5 }] {
                let l = build_lattice(1.0, 10, LatticeMode::FullTree).unwrap();
                let xi = Claim::TerminalW.max(Claim::TerminalW.negate().scale(0.5)).max(Claim::Constant(0.3));
                let out = solve_reflected(&g, &barrier, &xi, &l).unwrap();
                assert!(residual_check(&out, &g, &l) <= 1e-10, "{g} {barrier}");
                assert!(barrier_violation(&out, &barrier, &l) <= 1e-12);
                assert!(complementarity_violation(&out, &barrier, &l) <= 1e-10);
                assert!(out.min_increment() >= 0.0);
            }
        }
    }

    #[test]
    fn far_barrier_never_binds() {
        let l = build_lattice(1.0, 12, LatticeMode::Recombining).unwrap();
        let g = Generator::AbsZ { c: 0.5 };
        let out = solve_reflected(&g, &Barrier::Constant { k: -1e3 }, &Claim::Call { k: 0.2 }, &l).unwrap();
        let plain = solve_bsde(&g, &Claim::Call { k: 0.2 }, &l).unwrap();
        assert_eq!(out.y, plain.y);
        assert_eq!(out.min_increment(), 0.0);
    }

    #[test]
    fn terminal_below_barrier_is_rejected() {
        let l = build_lattice(1.0, 4, LatticeMode::Recombining).unwrap();
        let err = solve_reflected(&Generator::Zero, &Barrier::Constant { k: 0.0 }, &Claim::TerminalW, &l);
        assert!(matches!(err, Err(Error::TerminalBelowBarrier { node: 0, .. })));
        let err = solve_reflected(&Generator::AbsZ { c: 5.0 }, &Barrier::Constant { k: -9.0 }, &Claim::TerminalW, &l);
        assert!(matches!(err, Err(Error::Stability { .. })));
    }
}
