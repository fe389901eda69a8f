//! Backward solver for unconstrained BSDEs on the lattice.
//!
//! One step reads
//!
//! ```text
//! z_i = (y_{i+1}(up) - y_{i+1}(down)) / (2 sqrt(dt))
//! y_i = E[y_{i+1} | F_i] + f(t_i, y_i, z_i) dt
//! ```
//!
//! with `z` explicit and `y` implicit. The scheme is monotone in the terminal
//! data when the driver's expansive `y`-part satisfies `L_y dt < 1` and its
//! `z`-part satisfies `L_z sqrt(dt) <= 1`; both are checked before solving.

use crate::error::{Error, Result};
use crate::lattice::{AdaptedField, LatticeModel, NodePoint};
use crate::model::{Claim, Generator};

/// Successive Picard iterates closer than this (relative to `max(1, |y|)`) stop the iteration.
pub const PICARD_TOL: f64 = 1e-14;
pub const PICARD_MAX_ITER: usize = 100;

/// Picard is used while `L_y dt` stays below this; stiffer steps use a bracketed root.
const PICARD_CONTRACTION_LIMIT: f64 = 0.5;

/// A driver `f(t, y, z)` the backward solver can step.
pub trait Driver {
    fn value(&self, at: &NodePoint, y: f64, z: f64) -> f64;

    /// Lipschitz constant in `y`.
    fn lipschitz_y(&self) -> f64;

    /// Lipschitz constant of the part of the driver that can increase with `y`.
    /// The implicit equation is uniquely solvable when this times `dt` is below one.
    fn expansive_y(&self) -> f64 {
        self.lipschitz_y()
    }

    fn lipschitz_z(&self) -> f64;
}

impl Driver for Generator {
    fn value(&self, at: &NodePoint, y: f64, z: f64) -> f64 {
        self.evaluate(at.t, y, z)
    }

    fn lipschitz_y(&self) -> f64 {
        Generator::lipschitz_y(self)
    }

    fn lipschitz_z(&self) -> f64 {
        Generator::lipschitz_z(self)
    }
}

/// Verifies unique solvability and monotonicity of the scheme for `driver` on `lattice`.
pub fn check_stability(driver: &impl Driver, lattice: &LatticeModel) -> Result<()> {
    let dt = lattice.dt();
    let solvable = driver.expansive_y() * dt;
    if !(solvable < 1.0) {
        return Err(Error::Stability {
            condition: "L_y * dt",
            value: solvable,
            limit: 1.0,
        });
    }
    let monotone = driver.lipschitz_z() * dt.sqrt();
    if !(monotone <= 1.0) {
        return Err(Error::Stability {
            condition: "L_z * sqrt(dt)",
            value: monotone,
            limit: 1.0,
        });
    }
    Ok(())
}

/// Solves `y = e + dt * f(y)` for one node.
///
/// `f` must make `y - dt * f(y)` strictly increasing, which [`check_stability`] guarantees.
pub(crate) fn implicit_step(
    e: f64,
    dt: f64,
    lipschitz_y: f64,
    f: impl Fn(f64) -> f64,
) -> std::result::Result<f64, f64> {
    if lipschitz_y == 0.0 {
        return Ok(e + dt * f(e));
    }
    if lipschitz_y * dt <= PICARD_CONTRACTION_LIMIT {
        let mut y = e;
        let mut last = f64::INFINITY;
        for _ in 0..PICARD_MAX_ITER {
            let next = e + dt * f(y);
            last = (next - y).abs();
            if last <= PICARD_TOL * next.abs().max(1.0) {
                return Ok(next);
            }
            y = next;
        }
        return Err(last);
    }
    bracketed_root(e, |y| y - e - dt * f(y))
}

/// Illinois regula falsi on an increasing function.
fn bracketed_root(start: f64, h: impl Fn(f64) -> f64) -> std::result::Result<f64, f64> {
    let h0 = h(start);
    if h0 == 0.0 {
        return Ok(start);
    }
    // expand away from `start` until the sign flips
    let dir = if h0 < 0.0 { 1.0 } else { -1.0 };
    let mut step = h0.abs().max(1e-12);
    let mut far = start + dir * step;
    let mut h_far = h(far);
    let mut tries = 0;
    while h_far.signum() == h0.signum() {
        step *= 2.0;
        far = start + dir * step;
        h_far = h(far);
        tries += 1;
        if tries > 200 || !far.is_finite() {
            return Err(h_far.abs());
        }
    }
    if h_far == 0.0 {
        return Ok(far);
    }
    let (mut a, mut ha, mut b, mut hb) = (start, h0, far, h_far);
    let mut side = 0i8;
    for _ in 0..400 {
        let mut c = (a * hb - b * ha) / (hb - ha);
        let (lo, hi) = (a.min(b), a.max(b));
        if !(c > lo && c < hi) {
            c = 0.5 * (a + b);
        }
        let hc = h(c);
        let scale = c.abs().max(1.0);
        if hc == 0.0 || hc.abs() <= 1e-15 * scale || (hi - lo) <= 4.0 * f64::EPSILON * scale {
            return Ok(c);
        }
        if hc.signum() == hb.signum() {
            b = c;
            hb = hc;
            if side == -1 {
                ha *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            ha = hc;
            if side == 1 {
                hb *= 0.5;
            }
            side = 1;
        }
    }
    Err((b - a).abs())
}

/// Adapted pair `(y, z)`: `y` on steps `0..=n`, `z` on steps `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub y: AdaptedField,
    pub z: AdaptedField,
}

impl Solution {
    pub fn y0(&self) -> f64 {
        self.y.at(0, 0)
    }

    /// Attaches increasing-part increments, turning the pair into a supersolution record.
    pub fn lift(&self, lattice: &LatticeModel, c_increments: AdaptedField) -> Result<Supersolution> {
        Supersolution::new(lattice, self.y.clone(), self.z.clone(), c_increments)
    }

    /// The supersolution with `C = 0`.
    pub fn lift_zero(&self, lattice: &LatticeModel) -> Supersolution {
        let n = lattice.n_steps();
        Supersolution {
            y: self.y.clone(),
            z: self.z.clone(),
            c_increments: AdaptedField::constant(lattice, 0, n - 1, 0.0),
        }
    }
}

/// Triple `(y, z, dC)` with `dC_i` the increment of the increasing part over `[t_i, t_{i+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Supersolution {
    pub y: AdaptedField,
    pub z: AdaptedField,
    pub c_increments: AdaptedField,
}

impl Supersolution {
    pub fn new(
        lattice: &LatticeModel,
        y: AdaptedField,
        z: AdaptedField,
        c_increments: AdaptedField,
    ) -> Result<Self> {
        let n = lattice.n_steps();
        let span = |f: &AdaptedField| (f.first_step(), f.last_step());
        if span(&y) != (0, n) {
            return Err(Error::Precondition("y must cover steps 0..=n".into()));
        }
        if span(&z) != (0, n - 1) || span(&c_increments) != (0, n - 1) {
            return Err(Error::Precondition("z and dC must cover steps 0..n".into()));
        }
        Ok(Self { y, z, c_increments })
    }

    pub fn y0(&self) -> f64 {
        self.y.at(0, 0)
    }

    /// Smallest increment of the increasing part.
    pub fn min_increment(&self) -> f64 {
        self.c_increments
            .layers()
            .flat_map(|(_, l)| l.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Backward induction for a general driver with terminal leaf values.
pub fn solve_with_driver(
    driver: &impl Driver,
    terminal: Vec<f64>,
    lattice: &LatticeModel,
) -> Result<Solution> {
    check_stability(driver, lattice)?;
    let n = lattice.n_steps();
    if terminal.len() != lattice.leaf_count() {
        return Err(Error::MissingValues {
            step: n,
            expected: lattice.leaf_count(),
            got: terminal.len(),
        });
    }
    let dt = lattice.dt();
    let lip_y = driver.lipschitz_y();
    let mut y_layers: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut z_layers: Vec<Vec<f64>> = vec![Vec::new(); n];
    y_layers[n] = terminal;
    for i in (0..n).rev() {
        let e = lattice.conditional_expectation(i + 1, &y_layers[i + 1])?;
        let z = lattice.martingale_coefficient(i + 1, &y_layers[i + 1])?;
        let mut y = Vec::with_capacity(e.len());
        for (j, (ej, zj)) in e.iter().zip(&z).enumerate() {
            let at = lattice.point(i, j);
            let v = implicit_step(*ej, dt, lip_y, |yy| driver.value(&at, yy, *zj)).map_err(
                |last_update| Error::NonConvergence {
                    step: i,
                    node: j,
                    last_update,
                },
            )?;
            y.push(v);
        }
        y_layers[i] = y;
        z_layers[i] = z;
    }
    Ok(Solution {
        y: AdaptedField::new(lattice, 0, y_layers)?,
        z: AdaptedField::new(lattice, 0, z_layers)?,
    })
}

/// Solves `-dy = g(t, y, z) dt - z dW`, `y_T = xi`.
pub fn solve_bsde(g: &Generator, xi: &Claim, lattice: &LatticeModel) -> Result<Solution> {
    g.validate()?;
    solve_with_driver(g, xi.leaves(lattice)?, lattice)
}

/// Largest violation of `y_i = y_{i+1} + g(t_i, y_i, z_i) dt + dC_i - z_i dW` over
/// all nodes and both children.
pub fn residual_check(s: &Supersolution, g: &Generator, lattice: &LatticeModel) -> f64 {
    let dt = lattice.dt();
    let sq = lattice.grid().sqrt_dt();
    let mut worst: f64 = 0.0;
    for i in 0..lattice.n_steps() {
        let t = lattice.grid().time(i);
        for j in 0..lattice.nodes_at(i) {
            let (d, u) = lattice.children(j);
            let yi = s.y.at(i, j);
            let zi = s.z.at(i, j);
            let base = yi - g.evaluate(t, yi, zi) * dt - s.c_increments.at(i, j);
            let up = (base - s.y.at(i + 1, u) + zi * sq).abs();
            let down = (base - s.y.at(i + 1, d) - zi * sq).abs();
            worst = worst.max(up).max(down);
        }
    }
    worst
}
