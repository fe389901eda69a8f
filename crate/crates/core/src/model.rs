//! Catalog of generators, constraints, barriers and terminal claims.
//!
//! Every entry carries the structural metadata the solvers and the theorem
//! harness rely on: Lipschitz constants (split into `y` and `z` parts),
//! convexity, and whether the function depends on `y`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lattice::{LatticeModel, NodePoint};

/// Driver `g(t, y, z)` of the backward equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    Zero,
    /// `a * y + b * z`
    Linear { a: f64, b: f64 },
    /// `-r * y`
    Discount { r: f64 },
    /// `mu * z`
    Drift { mu: f64 },
    /// `c * |z|`, `c >= 0`
    AbsZ { c: f64 },
}

impl Generator {
    pub fn validate(&self) -> Result<()> {
        let finite = match *self {
            Generator::Zero => true,
            Generator::Linear { a, b } => a.is_finite() && b.is_finite(),
            Generator::Discount { r } => r.is_finite(),
            Generator::Drift { mu } => mu.is_finite(),
            Generator::AbsZ { c } => {
                if c.is_finite() && c < 0.0 {
                    return Err(Error::Precondition(format!("abs_z needs c >= 0, got {c}")));
                }
                c.is_finite()
            }
        };
        if finite {
            Ok(())
        } else {
            Err(Error::Precondition(format!("non-finite parameter in {self}")))
        }
    }

    /// The catalog is time-homogeneous; `t` is accepted for signature fidelity.
    #[inline]
    pub fn evaluate(&self, _t: f64, y: f64, z: f64) -> f64 {
        match *self {
            Generator::Zero => 0.0,
            Generator::Linear { a, b } => a * y + b * z,
            Generator::Discount { r } => -r * y,
            Generator::Drift { mu } => mu * z,
            Generator::AbsZ { c } => c * z.abs(),
        }
    }

    pub fn lipschitz_y(&self) -> f64 {
        match *self {
            Generator::Linear { a, .. } => a.abs(),
            Generator::Discount { r } => r.abs(),
            _ => 0.0,
        }
    }

    pub fn lipschitz_z(&self) -> f64 {
        match *self {
            Generator::Linear { b, .. } => b.abs(),
            Generator::Drift { mu } => mu.abs(),
            Generator::AbsZ { c } => c,
            _ => 0.0,
        }
    }

    /// `M` with `|g(y1,z1) - g(y2,z2)| <= M (|y1-y2| + |z1-z2|)`.
    pub fn lipschitz_constant(&self) -> f64 {
        self.lipschitz_y().max(self.lipschitz_z())
    }

    pub fn independent_of_y(&self) -> bool {
        self.lipschitz_y() == 0.0
    }

    pub fn convex(&self) -> bool {
        // linear entries are convex; abs_z is convex for c >= 0
        true
    }

    /// `g(t, y, 0) = 0` for every `y`.
    pub fn vanishes_at_zero(&self) -> bool {
        self.independent_of_y()
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Zero => write!(f, "zero"),
            Generator::Linear { a, b } => write!(f, "linear(a={a},b={b})"),
            Generator::Discount { r } => write!(f, "discount(r={r})"),
            Generator::Drift { mu } => write!(f, "drift(mu={mu})"),
            Generator::AbsZ { c } => write!(f, "abs_z(c={c})"),
        }
    }
}

/// Adapted lower barrier `S_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Barrier {
    Constant { k: f64 },
    /// `scale * |W_t|`
    AbsW { scale: f64 },
}

impl Barrier {
    #[inline]
    pub fn value(&self, at: &NodePoint) -> f64 {
        match *self {
            Barrier::Constant { k } => k,
            Barrier::AbsW { scale } => scale * at.w.abs(),
        }
    }

    /// Barrier values on every node of `step`.
    pub fn layer(&self, lattice: &LatticeModel, step: usize) -> Vec<f64> {
        (0..lattice.nodes_at(step))
            .map(|j| self.value(&lattice.point(step, j)))
            .collect()
    }
}

impl fmt::Display for Barrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Barrier::Constant { k } => write!(f, "{k}"),
            Barrier::AbsW { scale } => write!(f, "{scale}|W|"),
        }
    }
}

/// Nonnegative constraint function `phi(t, y, z)`; the constraint reads `phi = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    None,
    /// `(y - S_t)^-`
    ReflectBelow { barrier: Barrier },
    /// `max(|z| - r, 0)`
    ZBall { r: f64 },
    /// `(y - c)^-`
    YFloor { c: f64 },
}

impl Constraint {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Constraint::ZBall { r } if !(r.is_finite() && r >= 0.0) => Err(Error::Precondition(
                format!("z_ball needs a finite radius r >= 0, got {r}"),
            )),
            Constraint::YFloor { c } if !c.is_finite() => {
                Err(Error::Precondition("y_floor needs a finite level".into()))
            }
            Constraint::ReflectBelow { barrier } => match barrier {
                Barrier::Constant { k } if !k.is_finite() => {
                    Err(Error::Precondition("barrier level must be finite".into()))
                }
                Barrier::AbsW { scale } if !scale.is_finite() => {
                    Err(Error::Precondition("barrier scale must be finite".into()))
                }
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn evaluate(&self, at: &NodePoint, y: f64, z: f64) -> f64 {
        match *self {
            Constraint::None => 0.0,
            Constraint::ReflectBelow { barrier } => (barrier.value(at) - y).max(0.0),
            Constraint::ZBall { r } => (z.abs() - r).max(0.0),
            Constraint::YFloor { c } => (c - y).max(0.0),
        }
    }

    pub fn lipschitz_y(&self) -> f64 {
        match self {
            Constraint::ReflectBelow { .. } | Constraint::YFloor { .. } => 1.0,
            _ => 0.0,
        }
    }

    pub fn lipschitz_z(&self) -> f64 {
        match self {
            Constraint::ZBall { .. } => 1.0,
            _ => 0.0,
        }
    }

    pub fn lipschitz_constant(&self) -> f64 {
        self.lipschitz_y().max(self.lipschitz_z())
    }

    pub fn independent_of_y(&self) -> bool {
        self.lipschitz_y() == 0.0
    }

    pub fn convex(&self) -> bool {
        true
    }

    /// Every catalog constraint is non-increasing in `y`, so adding `m * phi`
    /// never weakens the monotonicity of the implicit step.
    pub fn non_increasing_in_y(&self) -> bool {
        true
    }

    pub fn barrier(&self) -> Option<Barrier> {
        match self {
            Constraint::ReflectBelow { barrier } => Some(*barrier),
            _ => None,
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::None => write!(f, "none"),
            Constraint::ReflectBelow { barrier } => write!(f, "reflect_below({barrier})"),
            Constraint::ZBall { r } => write!(f, "z_ball(r={r})"),
            Constraint::YFloor { c } => write!(f, "y_floor(c={c})"),
        }
    }
}

/// Terminal random variable, evaluated leaf by leaf.
#[derive(Debug, Clone, PartialEq)]
pub enum Claim {
    TerminalW,
    Constant(f64),
    /// `(W_T - k)^+`
    Call { k: f64 },
    /// `W_T v k`
    MaxWith { k: f64 },
    /// Explicit leaf values in lattice leaf order.
    Table(Vec<f64>),
    Shift { by: f64, of: Box<Claim> },
    Scale { factor: f64, of: Box<Claim> },
    Max(Box<Claim>, Box<Claim>),
    Min(Box<Claim>, Box<Claim>),
    Add(Box<Claim>, Box<Claim>),
    /// `a * first + (1 - a) * second`, `a` in `[0, 1]`
    Mix {
        a: f64,
        first: Box<Claim>,
        second: Box<Claim>,
    },
}

impl Claim {
    pub fn shift(self, by: f64) -> Claim {
        Claim::Shift {
            by,
            of: Box::new(self),
        }
    }

    pub fn scale(self, factor: f64) -> Claim {
        Claim::Scale {
            factor,
            of: Box::new(self),
        }
    }

    pub fn negate(self) -> Claim {
        self.scale(-1.0)
    }

    pub fn max(self, other: Claim) -> Claim {
        Claim::Max(Box::new(self), Box::new(other))
    }

    pub fn min(self, other: Claim) -> Claim {
        Claim::Min(Box::new(self), Box::new(other))
    }

    pub fn add(self, other: Claim) -> Claim {
        Claim::Add(Box::new(self), Box::new(other))
    }

    pub fn mix(a: f64, first: Claim, second: Claim) -> Claim {
        Claim::Mix {
            a,
            first: Box::new(first),
            second: Box::new(second),
        }
    }

    /// Leaf values on `lattice`; `Table` claims must match its leaf count.
    pub fn leaves(&self, lattice: &LatticeModel) -> Result<Vec<f64>> {
        let n = lattice.n_steps();
        let out = match self {
            Claim::TerminalW => lattice.w_layer(n),
            Claim::Constant(c) => vec![*c; lattice.leaf_count()],
            Claim::Call { k } => lattice.w_layer(n).iter().map(|w| (w - k).max(0.0)).collect(),
            Claim::MaxWith { k } => lattice.w_layer(n).iter().map(|w| w.max(*k)).collect(),
            Claim::Table(values) => {
                if values.len() != lattice.leaf_count() {
                    return Err(Error::InvalidClaim(format!(
                        "table has {} leaf values, lattice has {} leaves",
                        values.len(),
                        lattice.leaf_count()
                    )));
                }
                values.clone()
            }
            Claim::Shift { by, of } => of.leaves(lattice)?.into_iter().map(|v| v + by).collect(),
            Claim::Scale { factor, of } => {
                of.leaves(lattice)?.into_iter().map(|v| v * factor).collect()
            }
            Claim::Max(a, b) => zip_with(a.leaves(lattice)?, b.leaves(lattice)?, f64::max),
            Claim::Min(a, b) => zip_with(a.leaves(lattice)?, b.leaves(lattice)?, f64::min),
            Claim::Add(a, b) => zip_with(a.leaves(lattice)?, b.leaves(lattice)?, |x, y| x + y),
            Claim::Mix { a, first, second } => {
                if !(0.0..=1.0).contains(a) {
                    return Err(Error::InvalidClaim(format!("mix weight {a} outside [0, 1]")));
                }
                let a = *a;
                zip_with(first.leaves(lattice)?, second.leaves(lattice)?, |x, y| {
                    a * x + (1.0 - a) * y
                })
            }
        };
        if let Some(bad) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidClaim(format!("non-finite value at leaf {bad}")));
        }
        Ok(out)
    }
}

fn zip_with(a: Vec<f64>, b: Vec<f64>, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.into_iter().zip(b).map(|(x, y)| f(x, y)).collect()
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Claim::TerminalW => write!(f, "W_T"),
            Claim::Constant(c) => write!(f, "{c}"),
            Claim::Call { k } => write!(f, "(W_T-{k})+"),
            Claim::MaxWith { k } => write!(f, "max(W_T,{k})"),
            Claim::Table(v) => write!(f, "table[{}]", v.len()),
            Claim::Shift { by, of } => write!(f, "({of}{by:+})"),
            Claim::Scale { factor, of } => write!(f, "{factor}*{of}"),
            Claim::Max(a, b) => write!(f, "max({a},{b})"),
            Claim::Min(a, b) => write!(f, "min({a},{b})"),
            Claim::Add(a, b) => write!(f, "({a}+{b})"),
            Claim::Mix { a, first, second } => write!(f, "mix({a};{first},{second})"),
        }
    }
}

/// How a claim sequence approaches its base claim.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SequenceScheme {
    /// `xi_n = xi - 1/n`, increasing to `xi`.
    ShiftUp,
    /// `xi_n = xi v (-n)`
    TruncateBelow,
    /// `xi_n = xi + rate^n * noise` with seeded uniform `[-1, 1]` leaf noise.
    Perturbation { seed: u64, rate: f64 },
}

/// Builds `xi_1, ..., xi_count` for the given scheme.
pub fn make_claim_sequence(
    base: &Claim,
    scheme: SequenceScheme,
    count: usize,
    lattice: &LatticeModel,
) -> Result<Vec<Claim>> {
    if count == 0 {
        return Err(Error::InvalidClaim("sequence count must be at least 1".into()));
    }
    let seq = match scheme {
        SequenceScheme::ShiftUp => (1..=count)
            .map(|n| base.clone().shift(-1.0 / n as f64))
            .collect(),
        SequenceScheme::TruncateBelow => (1..=count)
            .map(|n| base.clone().max(Claim::Constant(-(n as f64))))
            .collect(),
        SequenceScheme::Perturbation { seed, rate } => {
            if !(rate > 0.0 && rate < 1.0) {
                return Err(Error::InvalidClaim(format!(
                    "perturbation rate must lie in (0, 1), got {rate}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = random_table(lattice, &mut rng, -1.0, 1.0);
            (1..=count)
                .map(|n| base.clone().add(noise.clone().scale(rate.powi(n as i32))))
                .collect()
        }
    };
    Ok(seq)
}

/// Table claim with i.i.d. uniform leaves on `[lo, hi]`.
pub fn random_table(lattice: &LatticeModel, rng: &mut impl Rng, lo: f64, hi: f64) -> Claim {
    Claim::Table(
        (0..lattice.leaf_count())
            .map(|_| rng.gen_range(lo..=hi))
            .collect(),
    )
}
