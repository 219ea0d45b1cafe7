use std::collections::BTreeMap;

use proptest::prelude::*;
use rts_core::coupling::{
    labeled_coupling_extension, line_walk_expectation, line_walk_solution, marginal_check, run_coupling,
    simulate_line_walk, table_marginals, CoupledState, CouplingCase, LocalMove, Phase, StepChoice, TABLE_DENOMINATOR,
};
use rts_core::sampler::Moments;
use rts_core::stats::{chi_squared_test, z_score};
use rts_core::kernel::local_law;
use rts_core::rng::replicate_rng;
use rts_core::{Budget, Error, Matching, Mode, StateSpace};

/// Every state pair and index: tables are stochastic, reproduce the lazy
/// single-chain law exactly, and no row breaks a matched or straddling label.
fn exhaustive(n: usize, mode: Mode) -> BTreeMap<CouplingCase, usize> {
    let space = StateSpace::enumerate(n, mode, Budget::ENUMERATION).unwrap();
    let mut seen = BTreeMap::new();
    for x in space.states() {
        for y in space.states() {
            let s = CoupledState::new(x.clone(), y.clone()).unwrap();
            if s.is_coupled() {
                continue;
            }
            for i in 1..=n - 2 {
                let table = s.joint_table(i).unwrap();
                assert_eq!(table.total_weight(), TABLE_DENOMINATOR);
                *seen.entry(table.case).or_insert(0) += 1;
                let (mx, my) = table_marginals(&s, i).unwrap();
                for (m, marginal) in [(x, mx), (y, my)] {
                    let (law, den) = local_law(m, i, true);
                    let scaled: Vec<(Matching, u64)> =
                        law.into_iter().map(|(st, w)| (st, w * TABLE_DENOMINATOR as u64 / den)).collect();
                    assert_eq!(marginal, scaled, "{:?} at i={i}: {x} / {y}", table.case);
                }
                for r in &table.rows {
                    let next = CoupledState::new(r.x.apply(x, i), r.y.apply(y, i)).unwrap();
                    assert_eq!(s.property_violations(&next), 0, "{:?} row {r:?} at i={i}: {x} / {y}", table.case);
                    assert!(next.frontier() <= s.frontier());
                }
            }
        }
    }
    seen
}

#[test]
fn unlabeled_tables_are_exact_and_safe() {
    for n in 4..=7 {
        let seen = exhaustive(n, Mode::Unlabeled);
        if n >= 6 {
            for case in [
                CouplingCase::Independent,
                CouplingCase::Shared,
                CouplingCase::OppositeCoins,
                CouplingCase::Table1,
                CouplingCase::Table2,
                CouplingCase::Table3,
            ] {
                assert!(seen.contains_key(&case), "n={n}: {case:?} never used: {seen:?}");
            }
        }
    }
}

#[test]
fn labeled_tables_are_exact_and_safe() {
    for n in 4..=5 {
        let seen = exhaustive(n, Mode::Labeled);
        assert!(seen.contains_key(&CouplingCase::Split), "{seen:?}");
    }
}

fn arb_state(n: usize, mode: Mode) -> impl Strategy<Value = Matching> {
    any::<u64>().prop_map(move |seed| {
        let mut rng = replicate_rng(seed, 0);
        let mut m = Matching::caterpillar(n, mode);
        for _ in 0..(20 * n * n) {
            m = rts_core::kernel::lazy_step(&m, &mut rng).unwrap();
        }
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frontier_never_increases_and_states_stay_valid(
        x in arb_state(7, Mode::Unlabeled),
        y in arb_state(7, Mode::Unlabeled),
        seed in any::<u64>(),
    ) {
        let mut rng = replicate_rng(seed, 1);
        let mut s = CoupledState::new(x, y).unwrap();
        for _ in 0..2000 {
            let next = s.coupled_step(&mut rng).unwrap();
            prop_assert!(next.x().validate() && next.y().validate());
            prop_assert!(next.frontier() <= s.frontier());
            prop_assert_eq!(s.property_violations(&next), 0);
            s = next;
        }
    }

    #[test]
    fn labeled_runs_keep_both_properties(
        x in arb_state(6, Mode::Labeled),
        y in arb_state(6, Mode::Labeled),
        seed in any::<u64>(),
    ) {
        let mut rng = replicate_rng(seed, 2);
        let run = run_coupling(&x, &y, &mut rng, 1_000_000).unwrap();
        prop_assert_eq!(run.property_violations, 0);
        prop_assert!(run.tau.is_some());
        prop_assert!(run.interior_time.unwrap() <= run.tau.unwrap());
    }

    #[test]
    fn replay_is_exact(x in arb_state(6, Mode::Unlabeled), y in arb_state(6, Mode::Unlabeled), seed in any::<u64>()) {
        let mut rng = replicate_rng(seed, 3);
        let mut s = CoupledState::new(x.clone(), y.clone()).unwrap();
        let mut choices = Vec::new();
        for _ in 0..300 {
            let c = s.draw_choice(&mut rng);
            choices.push(c);
            s = s.step_with(c).unwrap();
        }
        let mut r = CoupledState::new(x, y).unwrap();
        for c in choices {
            r = r.step_with(c).unwrap();
        }
        prop_assert_eq!(r, s);
    }
}

#[test]
fn label_times_add_up_to_the_interior_phase() {
    let space = StateSpace::enumerate(7, Mode::Unlabeled, Budget::ENUMERATION).unwrap();
    let x = space.get(0).clone();
    let y = space.get(space.len() - 1).clone();
    for rep in 0..200 {
        let mut rng = replicate_rng(11, rep);
        let run = run_coupling(&x, &y, &mut rng, 10_000_000).unwrap();
        let total: u64 = run.label_times.iter().sum();
        assert_eq!(Some(total), run.tau);
        assert_eq!(run.label_time(5), 0);
    }
}

#[test]
fn timeouts_are_reported() {
    let space = StateSpace::enumerate(7, Mode::Unlabeled, Budget::ENUMERATION).unwrap();
    let x = space.get(0).clone();
    let y = space.get(space.len() - 1).clone();
    let run = run_coupling(&x, &y, &mut replicate_rng(1, 0), 1).unwrap();
    assert_eq!(run.tau, None);
    assert_eq!(run.steps, 1);
}

#[test]
fn coupled_copies_stay_together() {
    let x = Matching::caterpillar(6, Mode::Labeled);
    let mut s = CoupledState::new(x.clone(), x).unwrap();
    let mut rng = replicate_rng(5, 0);
    for _ in 0..10_000 {
        s = labeled_coupling_extension(&s, &mut rng).unwrap();
        assert!(s.is_coupled());
        assert_eq!(s.phase(), Phase::Coupled);
    }
}

#[test]
fn leaf_phase_over_long_runs() {
    // Long labeled trajectories, restarted from fresh pairs whenever they
    // couple, never unmatch a leaf or let a straddling leaf cross.
    let space = StateSpace::enumerate(5, Mode::Labeled, Budget::ENUMERATION).unwrap();
    let mut rng = replicate_rng(9, 0);
    let mut steps = 0u64;
    let mut leaf_steps = 0u64;
    let mut start = 0usize;
    while steps < 100_000 {
        let x = space.get(start % space.len()).clone();
        let y = space.get((start * 7 + 3) % space.len()).clone();
        start += 1;
        let mut s = CoupledState::new(x, y).unwrap();
        while !s.is_coupled() {
            let next = if s.phase() == Phase::Leaves {
                leaf_steps += 1;
                labeled_coupling_extension(&s, &mut rng).unwrap()
            } else {
                s.coupled_step(&mut rng).unwrap()
            };
            assert_eq!(s.property_violations(&next), 0);
            s = next;
            steps += 1;
        }
    }
    assert!(leaf_steps > 10_000, "{leaf_steps}");
}

#[test]
fn extension_refuses_interior_phase_and_unlabeled() {
    let x = Matching::caterpillar(6, Mode::Unlabeled);
    let space = StateSpace::enumerate(6, Mode::Unlabeled, Budget::ENUMERATION).unwrap();
    let y = space.states().iter().find(|&m| *m != x).unwrap();
    let s = CoupledState::new(x.clone(), y.clone()).unwrap();
    assert!(matches!(labeled_coupling_extension(&s, &mut replicate_rng(0, 0)), Err(Error::InvalidParam(_))));

    let xl = Matching::caterpillar(6, Mode::Labeled);
    let labeled = StateSpace::enumerate(6, Mode::Labeled, Budget::ENUMERATION).unwrap();
    let yl = labeled.states().iter().find(|m| m.interior_positions()[2] != xl.interior_positions()[2]).unwrap();
    let sl = CoupledState::new(xl, yl.clone()).unwrap();
    assert!(matches!(labeled_coupling_extension(&sl, &mut replicate_rng(0, 0)), Err(Error::PhaseError(_))));
}

#[test]
fn stale_bookkeeping_is_rejected() {
    let x = Matching::caterpillar(6, Mode::Unlabeled);
    let s = CoupledState::new(x.clone(), x.clone()).unwrap();
    let forged = CoupledState::from_parts(x.clone(), x, 4, s.matched_pairs().to_vec(), vec![]);
    assert!(matches!(forged.step_with(StepChoice { index: 1, draw: 0 }), Err(Error::InvalidState(_))));
    assert!(matches!(s.joint_table(0), Err(Error::IndexOutOfRange(_))));
    assert!(matches!(s.joint_table(5), Err(Error::IndexOutOfRange(_))));
}

/// Hitting times of the reflected walk solved from `a_1 = 0`,
/// `a_x = p a_{x−1} + p a_{x+1} + (1 − 2p) a_x + 1` and
/// `a_m = p a_{m−1} + (1 − p) a_m + 1` by forward substitution.
fn hitting_times_by_recursion(m: usize) -> Vec<num_rational::Ratio<i64>> {
    use num_rational::Ratio;
    // With p = 1/2: a_{x+1} = 2a_x − a_{x−1} − 2, and a_2 is fixed by the
    // boundary a_m − a_{m−1} = 2. Write a_x = α_x + β_x a_2 and solve.
    let mut alpha = vec![Ratio::from_integer(0); m + 1];
    let mut beta = vec![Ratio::from_integer(0); m + 1];
    if m >= 2 {
        beta[2] = Ratio::from_integer(1);
    }
    for x in 2..m {
        alpha[x + 1] = alpha[x] * 2 - alpha[x - 1] - 2;
        beta[x + 1] = beta[x] * 2 - beta[x - 1];
    }
    let a2 = if m >= 2 {
        (Ratio::from_integer(2) - alpha[m] + alpha[m - 1]) / (beta[m] - beta[m - 1])
    } else {
        Ratio::from_integer(0)
    };
    (1..=m).map(|x| alpha[x] + beta[x] * a2).collect()
}

#[test]
fn line_walk_closed_form_matches_recursion() {
    for m in 1..=10usize {
        let rec = hitting_times_by_recursion(m);
        for x in 1..=m {
            assert_eq!(rec[x - 1], num_rational::Ratio::from_integer(line_walk_solution(m as i64, x as i64)));
        }
        assert_eq!(*rec.last().unwrap().numer(), (m * (m - 1)) as i64);
    }
}

fn first_with(case: CouplingCase) -> (CoupledState, usize) {
    let space = StateSpace::enumerate(7, Mode::Unlabeled, Budget::ENUMERATION).unwrap();
    for x in space.states() {
        for y in space.states() {
            if x == y {
                continue;
            }
            let s = CoupledState::new(x.clone(), y.clone()).unwrap();
            for i in 1..=5 {
                if s.joint_table(i).unwrap().case == case {
                    return (s, i);
                }
            }
        }
    }
    panic!("{case:?} not found");
}

fn sorted_weights(s: &CoupledState, i: usize) -> Vec<u32> {
    let mut w: Vec<u32> = s.joint_table(i).unwrap().rows.iter().map(|r| r.weight).collect();
    w.sort_unstable();
    w
}

#[test]
fn printed_table_weights() {
    // In 64ths: 3/8, 1/8 and eight entries of 1/16.
    let (s, i) = first_with(CouplingCase::Table1);
    assert_eq!(sorted_weights(&s, i), vec![4, 4, 4, 4, 4, 4, 4, 4, 8, 24]);
    for case in [CouplingCase::Table2, CouplingCase::Table3] {
        let (s, i) = first_with(case);
        assert_eq!(sorted_weights(&s, i), vec![8, 8, 8, 40]);
    }
}

#[test]
fn opposite_coins_never_move_together() {
    let (s, i) = first_with(CouplingCase::OppositeCoins);
    let r = marginal_check(&s, i, 100_000, &mut replicate_rng(4, 0)).unwrap();
    assert_eq!(r.both_moved, 0);
    for row in s.joint_table(i).unwrap().rows {
        assert!(row.x == LocalMove::Stay || row.y == LocalMove::Stay);
    }
}

#[test]
fn shared_moves_keep_matched_labels_together() {
    let (s, i) = first_with(CouplingCase::Shared);
    let r = marginal_check(&s, i, 100_000, &mut replicate_rng(4, 1)).unwrap();
    assert_eq!(r.protected_mismatches, 0);
    assert!(r.x.p_value > 0.001 && r.y.p_value > 0.001);
}

#[test]
fn equal_starts_couple_immediately() {
    let x = Matching::caterpillar(6, Mode::Unlabeled);
    let run = run_coupling(&x, &x, &mut replicate_rng(0, 0), 10).unwrap();
    assert_eq!(run.tau, Some(0));
    assert_eq!(run.steps, 0);
}

#[test]
fn each_copy_converges_to_the_stationary_law() {
    // The coupled copies, viewed separately, are lazy chains: after many
    // times the mixing time each should be distributed as π.
    for (n, steps) in [(5usize, 400u64), (6, 600)] {
        let space = StateSpace::enumerate(n, Mode::Unlabeled, Budget::ENUMERATION).unwrap();
        let law = rts_core::kernel::stationary_law(&space).weights();
        let (x0, y0) = (space.get(0).clone(), space.get(space.len() - 1).clone());
        let mut cx = vec![0u64; space.len()];
        let mut cy = vec![0u64; space.len()];
        for rep in 0..20_000 {
            let mut rng = replicate_rng(6, rep);
            let mut s = CoupledState::new(x0.clone(), y0.clone()).unwrap();
            for _ in 0..steps {
                s = s.coupled_step(&mut rng).unwrap();
            }
            cx[space.index_of(s.x()).unwrap()] += 1;
            cy[space.index_of(s.y()).unwrap()] += 1;
        }
        for counts in [cx, cy] {
            let t = chi_squared_test(&counts, &law);
            assert!(t.p_value > 0.001, "n={n}: {t:?}");
        }
    }
}

#[test]
fn line_walk_by_simulation() {
    for (m, p) in [(1u64, 0.5), (3, 0.5), (4, 0.125)] {
        let want = line_walk_expectation(m, p).unwrap();
        let mut acc = Moments::default();
        let mut rng = replicate_rng(8, m);
        for _ in 0..100_000 {
            acc.push(simulate_line_walk(m, p, &mut rng) as f64);
        }
        assert!(z_score(acc.mean(), want, acc.std_error()).abs() <= 4.0, "m={m}: {}", acc.mean());
    }
}
