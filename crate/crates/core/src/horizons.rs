//! Reachability under the majority relation, the setter's stable set and
//! the comparison between finite horizons and full commitment.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::Serialize;

use crate::ccp::{PolicyId, Problem};
use crate::engine::phi_iterates;
use crate::error::{Error, Result};
use crate::rational::{self, Rational};

/// Largest problem for which the stable set is certified by enumerating every subset.
pub const STABLE_SET_CERTIFY_LIMIT: usize = 12;

/// Favorite improvements under the simple majority relation.
pub fn majority_phi(problem: &Problem) -> Vec<PolicyId> {
    problem
        .policies()
        .map(|x| {
            problem
                .setter_best(
                    problem
                        .policies()
                        .filter(|&y| y == x || problem.majority_prefers(y, x)),
                )
                .expect("x is a candidate")
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReachMode {
    /// Any finite chain of weak majority steps.
    Reachable,
    /// Chains of at most `k` weak majority steps.
    KReachable(usize),
    /// The orbit of the favorite improvement.
    Credible,
}

impl ReachMode {
    pub fn k_reachable(k: i64) -> Result<ReachMode> {
        usize::try_from(k)
            .map(ReachMode::KReachable)
            .map_err(|_| Error::Validation(format!("chain length must be non-negative, got {k}")))
    }

    pub fn two_reachable() -> ReachMode {
        ReachMode::KReachable(2)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReachReport {
    pub mode: ReachMode,
    pub reachable: Vec<PolicyId>,
    /// The setter's favorite reachable policy, lowest index on ties.
    pub best: PolicyId,
    /// A chain from the start to `best`.
    pub chain: Vec<PolicyId>,
}

pub fn reachability(problem: &Problem, start: PolicyId, mode: ReachMode) -> Result<ReachReport> {
    problem.check_policy(start)?;
    let m = problem.num_policies();
    let mut parent: Vec<Option<PolicyId>> = vec![None; m];
    let mut seen = vec![false; m];
    seen[start] = true;
    match mode {
        ReachMode::Credible => {
            problem.require_generic("credible reachability")?;
            let phi = majority_phi(problem);
            let mut x = start;
            while !seen[phi[x]] {
                parent[phi[x]] = Some(x);
                seen[phi[x]] = true;
                x = phi[x];
            }
        }
        ReachMode::Reachable | ReachMode::KReachable(_) => {
            let limit = match mode {
                ReachMode::KReachable(k) => k,
                _ => usize::MAX,
            };
            let mut queue = VecDeque::from([(start, 0usize)]);
            while let Some((x, depth)) = queue.pop_front() {
                if depth == limit {
                    continue;
                }
                for y in problem.policies() {
                    if !seen[y] && problem.majority_weakly_prefers(y, x) {
                        seen[y] = true;
                        parent[y] = Some(x);
                        queue.push_back((y, depth + 1));
                    }
                }
            }
        }
    }
    let reachable: Vec<PolicyId> = problem.policies().filter(|&x| seen[x]).collect();
    let best = problem
        .setter_best(reachable.iter().copied())
        .expect("start is reachable");
    let mut chain = vec![best];
    while let Some(p) = parent[*chain.last().expect("non-empty")] {
        chain.push(p);
    }
    chain.reverse();
    Ok(ReachReport {
        mode,
        reachable,
        best,
        chain,
    })
}

/// `y` dominates `x` when both a majority and the setter strictly prefer `y`.
pub fn dominates(problem: &Problem, y: PolicyId, x: PolicyId) -> bool {
    problem.majority_prefers(y, x) && problem.setter_cmp(y, x) == Ordering::Greater
}

fn is_stable(problem: &Problem, set: &[bool]) -> bool {
    problem.policies().all(|x| {
        let dominated = problem
            .policies()
            .any(|y| set[y] && dominates(problem, y, x));
        set[x] != dominated
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StableSetReport {
    pub set: Vec<PolicyId>,
    /// `Some(true)` when enumeration found exactly this stable set; `None` above the size limit.
    pub uniqueness_certified: Option<bool>,
}

/// The stable set of the dominance relation, built greedily from the setter's top.
pub fn stable_set(problem: &Problem) -> Result<StableSetReport> {
    problem.require_generic("stable_set")?;
    let mut order: Vec<PolicyId> = problem.policies().collect();
    order.sort_by(|&a, &b| problem.setter_cmp(b, a).then(a.cmp(&b)));
    let mut member = vec![false; problem.num_policies()];
    for &x in &order {
        if !problem
            .policies()
            .any(|y| member[y] && dominates(problem, y, x))
        {
            member[x] = true;
        }
    }
    let set: Vec<PolicyId> = problem.policies().filter(|&x| member[x]).collect();
    let uniqueness_certified = if problem.num_policies() <= STABLE_SET_CERTIFY_LIMIT {
        let stable = enumerate_stable_sets(problem);
        if stable != vec![set.clone()] {
            return Err(Error::Internal(format!(
                "greedy stable set {set:?} differs from enumeration {stable:?}"
            )));
        }
        Some(true)
    } else {
        None
    };
    Ok(StableSetReport {
        set,
        uniqueness_certified,
    })
}

/// Every stable set, found by checking all subsets.
pub fn enumerate_stable_sets(problem: &Problem) -> Vec<Vec<PolicyId>> {
    let m = problem.num_policies();
    let mut out = Vec::new();
    for mask in 0u64..(1 << m) {
        let set: Vec<bool> = (0..m).map(|i| mask >> i & 1 == 1).collect();
        if is_stable(problem, &set) {
            out.push((0..m).filter(|&i| set[i]).collect());
        }
    }
    out
}

/// The setter's favorite among majority-acceptable policies inside `set`.
pub fn psi(problem: &Problem, set: &[PolicyId], x: PolicyId) -> Result<PolicyId> {
    problem.check_policy(x)?;
    problem
        .setter_best(
            set.iter()
                .copied()
                .filter(|&y| y == x || problem.majority_prefers(y, x)),
        )
        .ok_or_else(|| {
            Error::Validation(format!(
                "no member of the set is acceptable against {}",
                problem.label(x)
            ))
        })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HorizonRow {
    pub start: PolicyId,
    pub rounds: usize,
    #[serde(with = "rational::serde_rational")]
    pub payoff: Rational,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonCase {
    /// Commitment strictly helps the setter from some default.
    A,
    /// Finite-horizon payoffs never exceed the committed payoff.
    B,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HorizonReport {
    pub stable_set: Vec<PolicyId>,
    pub psi: Vec<PolicyId>,
    pub phi: Vec<PolicyId>,
    pub rows: Vec<HorizonRow>,
    #[serde(with = "rational::serde_rational_vec")]
    pub committed_payoff: Vec<Rational>,
    /// Defaults whose favorite improvement is already a fixed point.
    pub r_set: Vec<PolicyId>,
    /// The same set computed from agreement with the committed choice.
    pub r_set_by_agreement: Vec<PolicyId>,
    pub case: HorizonCase,
    pub witness: Option<PolicyId>,
}

/// Setter payoffs after `rounds` rounds for each listed horizon, and under commitment.
pub fn horizon_payoffs(
    problem: &Problem,
    start: PolicyId,
    horizons: &[usize],
) -> Result<(Vec<HorizonRow>, Rational)> {
    problem.require_generic("horizon_payoffs")?;
    problem.check_policy(start)?;
    let phi = majority_phi(problem);
    let depth = horizons.iter().copied().max().unwrap_or(0);
    let iter = phi_iterates(&phi, depth);
    let rows = horizons
        .iter()
        .map(|&t| HorizonRow {
            start,
            rounds: t,
            payoff: problem.setter_utility(iter[t][start]).clone(),
        })
        .collect();
    let v = stable_set(problem)?.set;
    Ok((
        rows,
        problem.setter_utility(psi(problem, &v, start)?).clone(),
    ))
}

/// Compares finite-horizon play with commitment for every default.
pub fn horizon_classify(problem: &Problem, max_rounds: usize) -> Result<HorizonReport> {
    problem.require_generic("horizon_classify")?;
    let phi = majority_phi(problem);
    let iter = phi_iterates(&phi, max_rounds.max(2));
    let stable = stable_set(problem)?.set;
    let psi_map: Vec<PolicyId> = problem
        .policies()
        .map(|x| psi(problem, &stable, x))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for x in problem.policies() {
        for t in 1..=max_rounds {
            rows.push(HorizonRow {
                start: x,
                rounds: t,
                payoff: problem.setter_utility(iter[t][x]).clone(),
            });
        }
    }
    let committed_payoff = psi_map
        .iter()
        .map(|&y| problem.setter_utility(y).clone())
        .collect();
    let r_set: Vec<PolicyId> = problem
        .policies()
        .filter(|&x| phi[phi[x]] == phi[x])
        .collect();
    let r_set_by_agreement: Vec<PolicyId> = problem
        .policies()
        .filter(|&x| phi[x] == psi_map[x] && phi[phi[x]] == psi_map[phi[x]])
        .collect();
    if r_set != r_set_by_agreement {
        return Err(Error::Internal(format!(
            "R-set routes disagree: {r_set:?} vs {r_set_by_agreement:?}"
        )));
    }
    let outside = problem.policies().find(|x| !r_set.contains(x));
    let (case, witness) = match outside {
        None => (HorizonCase::B, None),
        Some(y) => {
            let w = if problem.setter_cmp(phi[y], psi_map[y]) == Ordering::Greater {
                y
            } else {
                phi[y]
            };
            (HorizonCase::A, Some(w))
        }
    };
    Ok(HorizonReport {
        stable_set: stable,
        psi: psi_map,
        phi,
        rows,
        committed_payoff,
        r_set,
        r_set_by_agreement,
        case,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::generators::random_generic_problem;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const W: PolicyId = 0;
    const X: PolicyId = 1;
    const Y: PolicyId = 2;
    const Z: PolicyId = 3;

    #[test]
    fn ratchet_reachability() {
        let p = fixtures::ratchet();
        let r = reachability(&p, Z, ReachMode::Reachable).unwrap();
        assert_eq!(r.best, W);
        assert_eq!(r.reachable, vec![W, X, Y, Z]);
        let r2 = reachability(&p, Z, ReachMode::two_reachable()).unwrap();
        assert_eq!(r2.best, X);
        assert_eq!(r2.chain, vec![Z, Y, X]);
        let c = reachability(&p, Z, ReachMode::Credible).unwrap();
        assert_eq!(c.reachable, vec![W, X, Y, Z]);
        assert_eq!(c.chain, vec![Z, Y, X, W]);
        assert_eq!(
            reachability(&p, Z, ReachMode::KReachable(0))
                .unwrap()
                .reachable,
            vec![Z]
        );
        assert!(ReachMode::k_reachable(-1).is_err());
    }

    #[test]
    fn ratchet_stable_set_and_psi() {
        let p = fixtures::ratchet();
        let s = stable_set(&p).unwrap();
        assert_eq!(s.set, vec![W, Y]);
        assert_eq!(s.uniqueness_certified, Some(true));
        assert_eq!(psi(&p, &s.set, X).unwrap(), W);
        assert_eq!(psi(&p, &s.set, Z).unwrap(), Y);
    }

    #[test]
    fn ratchet_is_case_a() {
        let rep = horizon_classify(&fixtures::ratchet(), 6).unwrap();
        assert_eq!(rep.r_set, vec![W, X]);
        assert_eq!(rep.case, HorizonCase::A);
        assert_eq!(rep.witness, Some(Y));
    }

    #[test]
    fn stuck_from_override() {
        let p = fixtures::stuck();
        let s = stable_set(&p).unwrap();
        assert!(s.set.contains(&W));
        let rep = horizon_classify(&p, 5).unwrap();
        assert_eq!(rep.r_set, rep.r_set_by_agreement);
    }

    fn random_problem() -> impl Strategy<Value = Problem> {
        (any::<u64>(), 2usize..9, prop_oneof![Just(3usize), Just(5)])
            .prop_map(|(s, m, n)| random_generic_problem(&mut ChaCha8Rng::seed_from_u64(s), m, n))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn stable_set_unique_and_contains_top(p in random_problem()) {
            let s = stable_set(&p).unwrap();
            prop_assert_eq!(s.uniqueness_certified, Some(true));
            prop_assert!(s.set.contains(&p.setter_optima()[0]));
        }

        #[test]
        fn payoffs_are_ordered(p in random_problem()) {
            let rep = horizon_classify(&p, 10).unwrap();
            for x in p.policies() {
                let row = |t: usize| &rep.rows[x * 10 + t - 1].payoff;
                for t in 1..10 {
                    prop_assert!(row(t + 1) >= row(t));
                }
                prop_assert!(row(1) >= &rep.committed_payoff[x]);
            }
        }

        #[test]
        fn reachability_nests(p in random_problem(), k in 0usize..4) {
            for x in p.policies() {
                let k1 = reachability(&p, x, ReachMode::KReachable(k)).unwrap().reachable;
                let k2 = reachability(&p, x, ReachMode::KReachable(k + 1)).unwrap().reachable;
                let all = reachability(&p, x, ReachMode::Reachable).unwrap().reachable;
                let cred = reachability(&p, x, ReachMode::Credible).unwrap().reachable;
                prop_assert!(k1.iter().all(|y| k2.contains(y)));
                prop_assert!(k2.iter().all(|y| all.contains(y)));
                prop_assert!(cred.iter().all(|y| all.contains(y)));
            }
        }
    }
}
