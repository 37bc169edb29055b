//! Structural checks on the forced mode set `Z0` and the integer
//! mode-reachability recursion
//! `Z_n = { k + j : j in Z0, k in Z_{n-1}, <k_perp, j> != 0, |k| != |j| }`.
//!
//! Coverage of `{ 0 < |k| <= R }` by the union of the layers is verified only
//! up to the finite radius `R`; the report label records that restriction.

use serde::Serialize;
use std::collections::BTreeSet;

use crate::spectral::ModeIndex;

/// Outcome of the structural checks and the reachability recursion.
#[derive(Debug, Clone, Serialize)]
pub struct SpanningReport {
    /// `-Z0 = Z0`
    pub is_symmetric: bool,
    /// `Z0` integer-generates `Z^2`; the witness is the gcd of all pairwise
    /// 2x2 determinants (1 iff generator), or 0 when the set is rank-deficient.
    pub is_generator: bool,
    pub determinant_gcd: i64,
    /// Some non-parallel pair `(m, n)` with `|m| != |n|`, if one exists.
    pub nonparallel_unequal_pair: Option<((i32, i32), (i32, i32))>,
    pub condition1_holds: bool,
    /// Reachability layers; `layers[0] = Z0`.
    pub layers: Vec<Vec<(i32, i32)>>,
    /// Largest radius `r <= requested` with `{0 < |k| <= r}` inside the union.
    pub coverage_radius_achieved: u32,
    pub requested_radius: u32,
    pub covers_requested_radius: bool,
    pub iterations_used: usize,
    pub stabilized: bool,
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn det(m: ModeIndex, n: ModeIndex) -> i64 {
    m.k1 as i64 * n.k2 as i64 - m.k2 as i64 * n.k1 as i64
}

/// Condition check: symmetric finite generator containing two non-parallel
/// vectors of distinct Euclidean length.
pub fn check_condition1(z0: &[ModeIndex]) -> (bool, SpanningReport) {
    assert!(!z0.is_empty(), "mode set must be nonempty");
    let set: BTreeSet<(i32, i32)> = z0.iter().map(|m| (m.k1, m.k2)).collect();
    let is_symmetric = set.iter().all(|&(a, b)| set.contains(&(-a, -b)));

    // The sublattice generated by an integer set equals Z^2 exactly when the
    // gcd of all 2x2 determinants of pairs is 1 (Smith-form invariant d1*d2).
    let mut g: i64 = 0;
    for (i, &m) in z0.iter().enumerate() {
        for &n in &z0[i + 1..] {
            g = gcd(g, det(m, n));
        }
    }
    let is_generator = g == 1;

    let mut pair = None;
    'outer: for (i, &m) in z0.iter().enumerate() {
        for &n in &z0[i + 1..] {
            if det(m, n) != 0 && m.norm_sq() != n.norm_sq() {
                pair = Some(((m.k1, m.k2), (n.k1, n.k2)));
                break 'outer;
            }
        }
    }

    let holds = is_symmetric && is_generator && pair.is_some();
    let report = SpanningReport {
        is_symmetric,
        is_generator,
        determinant_gcd: g,
        nonparallel_unequal_pair: pair,
        condition1_holds: holds,
        layers: vec![sorted_pairs(&set)],
        coverage_radius_achieved: 0,
        requested_radius: 0,
        covers_requested_radius: false,
        iterations_used: 0,
        stabilized: true,
    };
    (holds, report)
}

fn sorted_pairs(set: &BTreeSet<(i32, i32)>) -> Vec<(i32, i32)> {
    set.iter().copied().collect()
}

/// Run the layer recursion until stabilization inside the clipped window or
/// `max_iter`, then measure coverage of `{0 < |k| <= radius}`.
pub fn reachable_modes(z0: &[ModeIndex], radius: u32, max_iter: usize) -> SpanningReport {
    assert!(radius >= 1, "radius must be at least 1");
    let (_, mut report) = check_condition1(z0);
    report.requested_radius = radius;

    // Clip layers to |k| <= radius + max |j| to bound memory.
    let max_j_norm = z0.iter().map(|m| m.norm()).fold(0.0f64, f64::max);
    let clip_sq = {
        let c = radius as f64 + max_j_norm.ceil();
        (c * c) as i64
    };

    let z0_set: BTreeSet<(i32, i32)> = z0.iter().map(|m| (m.k1, m.k2)).collect();
    let mut union: BTreeSet<(i32, i32)> = z0_set.clone();
    let mut layers: Vec<BTreeSet<(i32, i32)>> = vec![z0_set];
    let mut stabilized = false;
    let mut iters = 0;

    for _ in 0..max_iter {
        iters += 1;
        let prev = layers.last().unwrap();
        let mut next = BTreeSet::new();
        for &(k1, k2) in prev.iter() {
            let k_norm_sq = k1 as i64 * k1 as i64 + k2 as i64 * k2 as i64;
            for j in z0 {
                // <k_perp, j> != 0 (non-parallel) and |k| != |j|.
                let cross = k1 as i64 * j.k2 as i64 - k2 as i64 * j.k1 as i64;
                if cross == 0 || k_norm_sq == j.norm_sq() {
                    continue;
                }
                let s = (k1 + j.k1, k2 + j.k2);
                if s == (0, 0) {
                    continue;
                }
                let s_norm_sq = s.0 as i64 * s.0 as i64 + s.1 as i64 * s.1 as i64;
                if s_norm_sq > clip_sq {
                    continue;
                }
                next.insert(s);
            }
        }
        let fresh = next.iter().any(|p| !union.contains(p));
        union.extend(next.iter().copied());
        layers.push(next);
        if !fresh {
            stabilized = true;
            break;
        }
    }

    // Coverage: largest r <= radius such that every 0 < |k| <= r is reached.
    let mut achieved = radius;
    'scan: for k1 in -(radius as i32)..=(radius as i32) {
        for k2 in -(radius as i32)..=(radius as i32) {
            if k1 == 0 && k2 == 0 {
                continue;
            }
            let n_sq = k1 as i64 * k1 as i64 + k2 as i64 * k2 as i64;
            if n_sq <= (radius as i64) * (radius as i64) && !union.contains(&(k1, k2)) {
                let miss = (n_sq as f64).sqrt();
                achieved = achieved.min((miss.ceil() as u32).saturating_sub(1));
                if achieved == 0 {
                    break 'scan;
                }
            }
        }
    }

    report.layers = layers.iter().map(sorted_pairs).collect();
    report.coverage_radius_achieved = achieved;
    report.covers_requested_radius = achieved >= radius;
    report.iterations_used = iters;
    report.stabilized = stabilized;
    report
}

/// The four-mode example set used throughout: `{(1,0), (-1,0), (1,1), (-1,-1)}`.
pub fn example_mode_set() -> Vec<ModeIndex> {
    [(1, 0), (-1, 0), (1, 1), (-1, -1)]
        .into_iter()
        .map(|(a, b)| ModeIndex::new(a, b).unwrap())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn modes(list: &[(i32, i32)]) -> Vec<ModeIndex> {
        list.iter().map(|&(a, b)| ModeIndex::new(a, b).unwrap()).collect()
    }

    /// Brute-force oracle: enumerate integer combinations of the set inside a
    /// box by BFS and check whether all of Z^2 in a window is reached.
    fn generates_z2_bruteforce(z0: &[ModeIndex]) -> bool {
        use std::collections::{BTreeSet, VecDeque};
        let bound = 12i32;
        let mut seen: BTreeSet<(i32, i32)> = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert((0, 0));
        queue.push_back((0, 0));
        while let Some((a, b)) = queue.pop_front() {
            for m in z0 {
                for s in [1, -1] {
                    let n = (a + s * m.k1, b + s * m.k2);
                    if n.0.abs() <= bound && n.1.abs() <= bound && seen.insert(n) {
                        queue.push_back(n);
                    }
                }
            }
        }
        // Check the inner window only; BFS may not fill the rim of the box.
        for a in -2..=2 {
            for b in -2..=2 {
                if !seen.contains(&(a, b)) {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn paper_example_satisfies_condition() {
        let (ok, report) = check_condition1(&example_mode_set());
        assert!(ok);
        assert!(report.is_symmetric);
        assert!(report.is_generator);
        assert_eq!(report.determinant_gcd, 1);
        assert!(report.nonparallel_unequal_pair.is_some());
    }

    #[test]
    fn equal_norm_axes_fail() {
        let (ok, report) = check_condition1(&modes(&[(1, 0), (-1, 0), (0, 1), (0, -1)]));
        assert!(!ok);
        assert!(report.is_symmetric);
        assert!(report.is_generator);
        assert!(report.nonparallel_unequal_pair.is_none());
    }

    #[test]
    fn doubled_set_generates_sublattice_only() {
        let set = modes(&[(2, 0), (-2, 0), (2, 2), (-2, -2)]);
        let (ok, report) = check_condition1(&set);
        assert!(!ok);
        assert!(!report.is_generator);
        assert_eq!(report.determinant_gcd, 4);
        assert!(!generates_z2_bruteforce(&set));
    }

    #[test]
    fn generator_test_agrees_with_bruteforce() {
        let cases: Vec<Vec<ModeIndex>> = vec![
            example_mode_set(),
            modes(&[(1, 0), (-1, 0), (0, 1), (0, -1)]),
            modes(&[(2, 0), (-2, 0), (2, 2), (-2, -2)]),
            modes(&[(1, 1), (-1, -1), (1, -1), (-1, 1)]),
            modes(&[(2, 1), (-2, -1), (1, 1), (-1, -1)]),
            modes(&[(3, 0), (-3, 0), (0, 2), (0, -2)]),
        ];
        for set in cases {
            let (_, report) = check_condition1(&set);
            assert_eq!(
                report.is_generator,
                generates_z2_bruteforce(&set),
                "gcd test disagrees with brute force on {set:?}"
            );
        }
    }

    #[test]
    fn asymmetric_set_detected() {
        let (ok, report) = check_condition1(&modes(&[(1, 0), (1, 1)]));
        assert!(!ok);
        assert!(!report.is_symmetric);
    }

    #[test]
    fn paper_set_covers_radius_six() {
        let report = reachable_modes(&example_mode_set(), 6, 40);
        assert!(report.covers_requested_radius, "coverage {report:?}");
        assert_eq!(report.coverage_radius_achieved, 6);
        assert_eq!(report.layers[0].len(), 4);
    }

    #[test]
    fn first_layer_contains_direct_sum() {
        // k = (1,0), j = (1,1): <k_perp, j> = -1, |k| != |j| -> (2,1) in Z_1.
        let report = reachable_modes(&example_mode_set(), 3, 2);
        assert!(report.layers[1].contains(&(2, 1)));
    }

    #[test]
    fn parallel_pair_stabilizes_immediately() {
        let report = reachable_modes(&modes(&[(1, 0), (-1, 0)]), 2, 10);
        // The recursion condition is never satisfiable: layers empty after Z0.
        assert!(report.stabilized);
        assert!(report.layers[1].is_empty());
        assert!(!report.covers_requested_radius);
        assert_eq!(report.coverage_radius_achieved, 0);
    }

    #[test]
    fn symmetry_propagates_to_layers() {
        let report = reachable_modes(&example_mode_set(), 5, 20);
        for layer in &report.layers {
            for &(a, b) in layer {
                assert!(layer.contains(&(-a, -b)), "layer not symmetric at ({a},{b})");
            }
        }
    }

    #[test]
    fn coverage_monotone_in_iterations() {
        let z0 = example_mode_set();
        let mut prev = 0;
        for iters in [1, 2, 4, 8, 16] {
            let r = reachable_modes(&z0, 8, iters);
            assert!(r.coverage_radius_achieved >= prev);
            prev = r.coverage_radius_achieved;
        }
    }

    #[test]
    fn order_independence() {
        let a = reachable_modes(&example_mode_set(), 5, 20);
        let mut rev = example_mode_set();
        rev.reverse();
        let b = reachable_modes(&rev, 5, 20);
        assert_eq!(a.layers, b.layers);
        assert_eq!(a.coverage_radius_achieved, b.coverage_radius_achieved);
    }
}
