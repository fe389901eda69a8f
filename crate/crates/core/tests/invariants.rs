use proptest::prelude::*;

use cbsde::bsde::residual_check;
use cbsde::lattice::{build_lattice, LatticeMode};
use cbsde::model::{Barrier, Claim, Constraint, Generator};
use cbsde::penalize::{solve_full_schedule, solve_penalized, Schedule, Tolerances};
use cbsde::reflected::solve_reflected;

const N: usize = 5;

fn leaves() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 1 << N)
}

fn generator() -> impl Strategy<Value = Generator> {
    prop_oneof![
        Just(Generator::Zero),
        (0.0..1.0f64).prop_map(|c| Generator::AbsZ { c }),
        (0.0..2.0f64).prop_map(|r| Generator::Discount { r }),
        (-1.0..1.0f64).prop_map(|mu| Generator::Drift { mu }),
    ]
}

fn reflect(k: f64) -> Constraint {
    Constraint::ReflectBelow {
        barrier: Barrier::Constant { k },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn penalized_solutions_respect_order(g in generator(), a in leaves(), bump in leaves(), m in 0.5..500.0f64) {
        let l = build_lattice(1.0, N, LatticeMode::FullTree).unwrap();
        let b: Vec<f64> = a.iter().zip(&bump).map(|(x, d)| x + d.abs()).collect();
        let phi = reflect(0.0);
        let lo = solve_penalized(&g, &phi, m, &Claim::Table(a), &l).unwrap();
        let hi = solve_penalized(&g, &phi, m, &Claim::Table(b), &l).unwrap();
        prop_assert!(lo.y().max_pairwise(hi.y(), |x, y| x - y) <= 1e-12);
    }

    #[test]
    fn schedule_is_monotone_and_bounded_by_reflection(g in generator(), a in leaves(), k in -0.5..0.5f64) {
        let l = build_lattice(1.0, N, LatticeMode::FullTree).unwrap();
        let xi = Claim::Table(a).max(Claim::Constant(k));
        let sched = Schedule::new(1.0, 4.0, 4096.0).unwrap();
        let res = solve_full_schedule(&g, &reflect(k), &xi, &l, &sched, &Tolerances::default()).unwrap();
        prop_assert!(res.monotonicity_violation() <= 1e-11);
        for run in &res.runs {
            prop_assert!(residual_check(&run.to_supersolution(), &g, &l) <= 1e-10);
        }
        // penalized values sit below the reflected solution
        let oracle = solve_reflected(&g, &Barrier::Constant { k }, &xi, &l).unwrap();
        prop_assert!(res.limit_y().max_pairwise(&oracle.y, |p, r| p - r) <= 1e-10);
    }

    #[test]
    fn constant_claims_are_cash_invariant(c in generator(), a in leaves(), shift in -1.0..1.0f64) {
        prop_assume!(matches!(c, Generator::AbsZ { .. } | Generator::Drift { .. } | Generator::Zero));
        let l = build_lattice(1.0, N, LatticeMode::FullTree).unwrap();
        let phi = Constraint::ZBall { r: 1.0 };
        let base = solve_penalized(&c, &phi, 1.0, &Claim::Table(a.clone()), &l).unwrap();
        let moved = solve_penalized(&c, &phi, 1.0, &Claim::Table(a).shift(shift), &l).unwrap();
        prop_assert!(moved.y().max_pairwise(base.y(), |x, y| (x - y - shift).abs()) <= 1e-12);
    }
}
