//! `L^2` distances of the harness against a path recursion of the reflected
//! problem written from scratch on the full tree.

use cbsde::lattice::{build_lattice, LatticeMode};
use cbsde::model::{make_claim_sequence, Barrier, Claim, Constraint, Generator, SequenceScheme};
use cbsde::penalize::{Schedule, Tolerances};
use cbsde::properties::Harness;

/// Reflected values at every node of `t_step` for `y = max(e + c|z| dt, 0)`
/// before the horizon. Node `j` at step `i` has children `2j` and `2j + 1`.
fn reflected_layer(leaves: &[f64], n: usize, t_step: usize, c: f64) -> Vec<f64> {
    let dt = 1.0 / n as f64;
    let mut layer = leaves.to_vec();
    for _ in (t_step..n).rev() {
        layer = layer
            .chunks(2)
            .map(|pair| {
                let (down, up) = (pair[0], pair[1]);
                let z = (up - down) / (2.0 * dt.sqrt());
                (0.5 * (up + down) + c * z.abs() * dt).max(0.0)
            })
            .collect();
    }
    layer
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    let p = 1.0 / a.len() as f64;
    a.iter().zip(b).map(|(x, y)| p * (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn reference_distances(n: usize, t_step: usize, c: f64, seed: u64, halvings: usize) -> Vec<f64> {
    let lattice = build_lattice(1.0, n, LatticeMode::FullTree).unwrap();
    let base = Claim::MaxWith { k: 0.0 };
    let target = reflected_layer(&base.leaves(&lattice).unwrap(), n, t_step, c);
    make_claim_sequence(&base, SequenceScheme::Perturbation { seed, rate: 0.5 }, halvings, &lattice)
        .unwrap()
        .iter()
        .map(|xi| l2(&reflected_layer(&xi.leaves(&lattice).unwrap(), n, t_step, c), &target))
        .collect()
}

fn harness_distances(n: usize, t_step: usize, c: f64, seed: u64, halvings: usize) -> Vec<f64> {
    let g = if c == 0.0 { Generator::Zero } else { Generator::AbsZ { c } };
    let h = Harness::new(
        g,
        Constraint::ReflectBelow {
            barrier: Barrier::Constant { k: 0.0 },
        },
        build_lattice(1.0, n, LatticeMode::FullTree).unwrap(),
        Schedule::new(1.0, 2.0, 65536.0).unwrap(),
        Tolerances::default(),
    );
    let reports = h
        .check_l2_continuity(&Claim::MaxWith { k: 0.0 }, t_step, seed, halvings, 1.0)
        .unwrap();
    reports[0]
        .trace
        .iter()
        .map(|r| r.metrics.iter().find(|m| m.name == "d_n").unwrap().value)
        .collect()
}

#[test]
fn harness_matches_reference_on_small_tree() {
    for c in [0.0, 1.0] {
        let reference = reference_distances(8, 4, c, 5, 6);
        let harness = harness_distances(8, 4, c, 5, 6);
        for (r, h) in reference.iter().zip(&harness) {
            assert!((r - h).abs() <= 1e-3 * r.max(1e-3), "c={c}: {r} vs {h}");
        }
        assert!(reference.windows(2).all(|w| w[1] < w[0]));
    }
}

#[test]
fn barrier_repair_keeps_distance_proportional_to_noise() {
    // once the noise is small, only its negative part at the barrier is
    // corrected, so d_n shrinks by exactly the rate and never averages out
    let d = reference_distances(16, 8, 0.0, 7, 6);
    for w in d.windows(2).skip(1) {
        assert!((w[1] / w[0] - 0.5).abs() < 1e-9, "{w:?}");
    }
    assert!(d[5] > 1.5e-3 && d[5] < 1.7e-3, "{}", d[5]);
}
