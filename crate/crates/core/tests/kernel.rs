use std::collections::BTreeMap;

use num_rational::Ratio;
use proptest::prelude::*;
use rts_core::kernel::{
    detailed_balance_exact, is_irreducible, lazy_step, propose_step, stationarity_residual, stationary_law,
    verify_detailed_balance, verify_lumping, Distribution, Kernel,
};
use rts_core::rng::replicate_rng;
use rts_core::stats::chi_squared_test;
use rts_core::{Budget, Label, Matching, Mode, StateSpace};

fn kernel(n: usize, mode: Mode, lazy: bool) -> Kernel {
    Kernel::for_size(n, mode, lazy, Budget::EXACT).unwrap()
}

#[test]
fn rows_are_stochastic_with_quantised_entries() {
    for (n, mode) in [(5, Mode::Unlabeled), (9, Mode::Unlabeled), (5, Mode::Labeled), (6, Mode::Labeled)] {
        for lazy in [false, true] {
            let k = kernel(n, mode, lazy);
            let unit = if lazy { 8 * (n - 2) } else { 4 * (n - 2) } as u64;
            assert_eq!(k.denominator(), unit);
            for x in 0..k.len() {
                let total: u64 = k.row(x).iter().map(|&(_, c)| c).sum();
                assert_eq!(total, unit);
                let sum: f64 = k.row(x).iter().map(|&(y, _)| k.prob(x, y)).sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(k.count(x, x) > 0, "diagonal vanishes at {}", k.space().get(x));
            }
        }
    }
}

#[test]
fn labeled_kernel_is_symmetric_unlabeled_is_not() {
    assert!(kernel(6, Mode::Labeled, false).is_symmetric());
    assert!(!kernel(5, Mode::Unlabeled, false).is_symmetric());
}

#[test]
fn strongly_connected() {
    for n in 3..=9 {
        assert!(is_irreducible(&kernel(n, Mode::Unlabeled, false)), "unlabeled n={n}");
    }
    for n in 3..=6 {
        assert!(is_irreducible(&kernel(n, Mode::Labeled, false)), "labeled n={n}");
    }
}

#[test]
fn tajima_weights() {
    // 2^{n−c−1}/(n−1)! evaluated independently.
    for n in 3..=9usize {
        let space = StateSpace::enumerate(n, Mode::Unlabeled, Budget::ENUMERATION).unwrap();
        let law = stationary_law(&space);
        let fact: u64 = (1..n as u64).product();
        let mut total = Ratio::from_integer(0u64);
        for (x, m) in space.states().iter().enumerate() {
            let want = Ratio::new(1u64 << (n - m.cherry_count() - 1), fact);
            assert_eq!(law.exact(x), want, "{m}");
            total += want;
        }
        assert_eq!(total, Ratio::from_integer(1));
    }
    let fig3 = Matching::from_json(r#"[["0","0"],["0","0"],["0","I1"],["0","I3"],["I2","I4"],["0","I5"]]"#).unwrap();
    let space = StateSpace::enumerate(7, Mode::Unlabeled, Budget::ENUMERATION).unwrap();
    let law = stationary_law(&space);
    assert_eq!(law.exact(space.index_of(&fig3).unwrap()), Ratio::new(1, 45));
    let labeled = StateSpace::enumerate(7, Mode::Labeled, Budget::ENUMERATION).unwrap();
    let fiber = labeled.states().iter().filter(|m| m.erase_leaf_labels().unwrap() == fig3).count();
    assert_eq!(Ratio::new(fiber as u64, labeled.len() as u64), Ratio::new(1, 45));

    let l4 = stationary_law(&StateSpace::enumerate(4, Mode::Labeled, Budget::ENUMERATION).unwrap());
    assert!((0..l4.len()).all(|x| l4.exact(x) == Ratio::new(1, 18)));
}

#[test]
fn uniform_law_is_not_stationary_for_shapes() {
    let k = kernel(5, Mode::Unlabeled, false);
    let uniform = Distribution::from_weights(vec![1; k.len()]);
    assert!(stationarity_residual(&k, &uniform) > 1e-3);
    assert!(verify_detailed_balance(&k, &uniform) > 1e-3);
    assert!(detailed_balance_exact(&k, &uniform) > Ratio::from_integer(0));
}

#[test]
fn lumping_at_small_n() {
    for n in 3..=5 {
        let r = verify_lumping(n, false, Budget::EXACT).unwrap();
        assert!(r.exact(), "n={n}: {r:?}");
        assert!(r.max_fiber_law_gap < 1e-15);
        assert_eq!(r.fiber_sizes.iter().sum::<usize>(), StateSpace::enumerate(n, Mode::Labeled, Budget::ENUMERATION).unwrap().len());
    }
    let r = verify_lumping(4, false, Budget::EXACT).unwrap();
    let shapes = StateSpace::enumerate(4, Mode::Unlabeled, Budget::ENUMERATION).unwrap();
    // Caterpillar: 4!/2 labelings; balanced: 4!/4.
    assert_eq!(r.fiber_sizes[shapes.caterpillar_index()], 12);
    assert_eq!(r.fiber_sizes.iter().sum::<usize>(), 18);
}

#[test]
fn three_leaves_is_absorbing() {
    let k = kernel(3, Mode::Unlabeled, false);
    assert_eq!(k.len(), 1);
    assert_eq!(k.prob(0, 0), 1.0);
}

#[test]
fn sampled_moves_follow_matrix_rows() {
    // 10^6 draws from fixed states against the corresponding rows.
    let cases = [(6, Mode::Unlabeled, false), (6, Mode::Unlabeled, true), (5, Mode::Labeled, false)];
    for (c, &(n, mode, lazy)) in cases.iter().enumerate() {
        let k = kernel(n, mode, lazy);
        let space = k.space().clone();
        for x in [0, space.caterpillar_index(), space.len() / 2] {
            let mut rng = replicate_rng(31, (c * 1000 + x) as u64);
            let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
            let m = space.get(x);
            for _ in 0..1_000_000 {
                let y = if lazy { lazy_step(m, &mut rng) } else { propose_step(m, &mut rng) }.unwrap();
                *counts.entry(space.index_of(&y).expect("step leaves the space")).or_default() += 1;
            }
            let row = k.row(x);
            assert!(counts.keys().all(|y| row.iter().any(|&(z, _)| z == *y)));
            let observed: Vec<u64> = row.iter().map(|&(y, _)| counts.get(&y).copied().unwrap_or(0)).collect();
            let expected: Vec<f64> = row.iter().map(|&(y, _)| k.prob(x, y)).collect();
            let test = chi_squared_test(&observed, &expected);
            assert!(test.p_value > 0.001, "{mode} n={n} x={x}: {test:?}");
        }
    }
}

fn random_walk_state(n: usize, mode: Mode, seed: u64) -> Matching {
    let mut rng = replicate_rng(seed, 7);
    let mut m = Matching::caterpillar(n, mode);
    for _ in 0..10 * n * n {
        m = propose_step(&m, &mut rng).unwrap();
    }
    m
}

proptest! {
    #[test]
    fn steps_stay_valid(n in 3usize..30, labeled in any::<bool>(), seed in any::<u64>()) {
        let mode = if labeled { Mode::Labeled } else { Mode::Unlabeled };
        let m = random_walk_state(n, mode, seed);
        prop_assert!(m.validate());
        let mut rng = replicate_rng(seed, 8);
        for _ in 0..50 {
            let next = lazy_step(&m, &mut rng).unwrap();
            prop_assert!(next.validate());
            prop_assert!(m.internal_tree_length().abs_diff(next.internal_tree_length()) <= 1);
        }
    }

    #[test]
    fn erasure_commutes_with_each_local_move(n in 4usize..15, seed in any::<u64>(), k0 in any::<usize>(), u in 0usize..2, v in 0usize..2) {
        let m = random_walk_state(n, Mode::Labeled, seed);
        let k = 1 + k0 % (n - 2);
        let e = m.erase_leaf_labels().unwrap();
        match m.swap(k, u, v) {
            Some(next) => {
                let erased = next.erase_leaf_labels().unwrap();
                let reachable = (0..2).flat_map(|a| (0..2).map(move |b| (a, b)))
                    .any(|(a, b)| e.swap(k, a, b).unwrap_or_else(|| e.clone()) == erased);
                prop_assert!(reachable);
            }
            None => {
                // Rejection depends only on interior labels.
                let up = m.pair(k + 1)[v];
                prop_assert_eq!(up, Label::Interior(k as u16));
            }
        }
    }
}
