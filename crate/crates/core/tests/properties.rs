//! Cross-module properties on seeded random instances.

use agenda_core::ccp::{
    acceptance_set, is_manipulable, uniform_margin, unimprovable_set, AcceptanceKind, Coalition,
};
use agenda_core::engine::{dtd_beta, phi_iterates, phi_map};
use agenda_core::generators::{
    check_noncoplanarity, dtd_problem, random_generic_problem, simplex_compositions, SpatialProfile,
};
use agenda_core::horizons::{
    dominates, horizon_classify, psi, reachability, stable_set, HorizonCase, ReachMode,
};
use agenda_core::oracle::{check_richness, solve_spe, GameSpec, Protocol, DEFAULT_ORACLE_BUDGET};
use agenda_core::rational::{frac, int};
use agenda_core::{Problem, Rational, VotingRule};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, max_policies: usize) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 2 + (seed as usize % (max_policies - 1));
    let n = if seed.is_multiple_of(2) { 3 } else { 5 };
    random_generic_problem(&mut rng, m, n)
}

/// Rank of a 3x3 integer matrix by fraction-free elimination.
fn rank3(mut a: [[i64; 3]; 3]) -> usize {
    let mut rank = 0;
    for col in 0..3 {
        let Some(p) = (rank..3).find(|&r| a[r][col] != 0) else {
            continue;
        };
        a.swap(rank, p);
        for r in 0..3 {
            if r != rank && a[r][col] != 0 {
                let (f, g) = (a[r][col], a[rank][col]);
                for c in 0..3 {
                    a[r][c] = a[r][c] * g - a[rank][c] * f;
                }
            }
        }
        rank += 1;
    }
    rank
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stricter_quota_accepts_less(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_generic_problem(&mut rng, 5, 5);
        for x in p.policies() {
            let mut prev: Option<Vec<usize>> = None;
            for q in 3..=5 {
                let rule = VotingRule::quota(5, q).unwrap();
                let s = acceptance_set(&p, &rule, x, AcceptanceKind::Strict).unwrap();
                if let Some(prev) = &prev {
                    prop_assert!(s.iter().all(|y| prev.contains(y)));
                }
                prev = Some(s);
            }
        }
    }

    #[test]
    fn winning_is_monotone(sets in proptest::collection::vec(proptest::collection::vec(0usize..6, 1..4), 1..4), extra in 0u64..64) {
        let rule = VotingRule::coalitions(6, &sets).unwrap();
        for s in &sets {
            let c = Coalition::from_members(s);
            prop_assert!(rule.is_winning(c));
            prop_assert!(rule.is_winning(Coalition(c.0 | extra)));
        }
    }

    #[test]
    fn iterates_commute(seed in any::<u64>()) {
        let p = instance(seed, 7);
        let rule = VotingRule::simple_majority(p.num_voters()).unwrap();
        let phi = phi_map(&p, &rule).unwrap();
        let it = phi_iterates(&phi, 5);
        for t in 1..=5 {
            for x in p.policies() {
                prop_assert_eq!(phi[it[t - 1][x]], it[t - 1][phi[x]]);
            }
        }
        let absorbed: std::collections::BTreeSet<usize> =
            p.policies().map(|x| phi_iterates(&phi, p.num_policies() - 1)[p.num_policies() - 1][x]).collect();
        let e: std::collections::BTreeSet<usize> = unimprovable_set(&p, &rule).unwrap().into_iter().collect();
        prop_assert_eq!(absorbed, e);
    }

    #[test]
    fn oracle_values_and_voter_audit(seed in any::<u64>()) {
        let p = instance(seed, 5);
        let rule = VotingRule::simple_majority(p.num_voters()).unwrap();
        let horizon = 1 + (seed % 4) as usize;
        for proto in [Protocol::Amendment, Protocol::Successive, Protocol::OpenRule] {
            let g = GameSpec::new(p.clone(), rule.clone(), horizon, 0, proto).unwrap();
            prop_assert!(check_richness(&g).is_ok());
            let rep = solve_spe(&g, DEFAULT_ORACLE_BUDGET).unwrap();
            for t in 0..horizon {
                for x in p.policies() {
                    prop_assert!(p.setter_utility(rep.values[t][x]) >= p.setter_utility(rep.values[t + 1][x]));
                }
            }
            for r in rep.on_path.iter().filter(|r| r.passed) {
                prop_assert!(rule.is_winning(Coalition::from_members(&r.approving)));
            }
        }
    }

    #[test]
    fn stable_set_laws(seed in any::<u64>()) {
        let p = instance(seed, 9);
        let rule = VotingRule::simple_majority(p.num_voters()).unwrap();
        let v = stable_set(&p).unwrap().set;
        for x in p.policies() {
            let inside = v.contains(&x);
            prop_assert_eq!(inside, !v.iter().any(|&y| dominates(&p, y, x)));
            let chosen = psi(&p, &v, x).unwrap();
            prop_assert!(v.contains(&chosen));
            if inside {
                prop_assert_eq!(chosen, x);
            }
        }
        for e in unimprovable_set(&p, &rule).unwrap() {
            prop_assert!(v.contains(&e));
        }
        let rep = horizon_classify(&p, 4).unwrap();
        prop_assert_eq!(rep.case == HorizonCase::B, rep.r_set.len() == p.num_policies());
    }

    #[test]
    fn manipulable_instances_reach_the_top_credibly(seed in any::<u64>()) {
        let p = instance(seed, 7);
        let rule = VotingRule::simple_majority(p.num_voters()).unwrap();
        let rep = is_manipulable(&p, &rule).unwrap();
        if rep.manipulable {
            for x in p.policies() {
                let best = reachability(&p, x, ReachMode::Credible).unwrap().best;
                prop_assert_eq!(p.setter_utility(best), p.setter_max());
            }
            let delta = (p.setter_max() - p.setter_min()) * frac(1, 3);
            let margin = uniform_margin(&p, &rule, &delta).unwrap();
            if let Some(eta) = margin.eta_delta {
                prop_assert!(eta > int(0));
            }
        }
    }

    #[test]
    fn coplanarity_matches_rank(coords in proptest::collection::vec(-4i64..5, 12)) {
        let pts: Vec<Vec<Rational>> = coords.chunks(3).map(|c| c.iter().map(|&v| int(v)).collect()).collect();
        let prof = SpatialProfile::new(pts[..3].to_vec(), pts[3].clone(), vec![int(-5); 3], vec![int(5); 3]).unwrap();
        let diffs = |k: usize| [0, 1, 2].map(|d| coords[3 * k + d] - coords[d]);
        let flat = rank3([diffs(1), diffs(2), diffs(3)]) < 3;
        prop_assert_eq!(check_noncoplanarity(&prof).unwrap().passes, !flat);
    }
}

#[test]
fn dtd_shares_sum_to_one_and_top_is_the_setter_dictatorship() {
    for m in [2u64, 4, 6] {
        let (p, allocs) = dtd_problem(3, m).unwrap();
        assert_eq!(allocs.len(), simplex_compositions(4, m).len());
        for a in &allocs {
            assert_eq!(a.shares.iter().sum::<u64>(), m);
        }
        let top = p.setter_optima();
        assert_eq!(top.len(), 1);
        assert!(allocs[top[0]].is_dictatorship());
    }
}

#[test]
fn beta_reduces_support() {
    let (_, allocs) = dtd_problem(3, 6).unwrap();
    for a in &allocs {
        let support = a.shares[..3].iter().filter(|&&s| s > 0).count();
        let b = dtd_beta(a).unwrap();
        let after = b.shares[..3].iter().filter(|&&s| s > 0).count();
        assert_eq!(after, support - support.min(1));
    }
}
