//! Backward-induction oracle for finite-horizon agenda games, protocol
//! richness checks and verification of strategy profiles.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::ccp::{accepts_weak, PolicyId, Problem, VotingRule};
use crate::engine::{phi_iterates, phi_map, Proposal, StrategyProfile};
use crate::error::{Error, Result};
use crate::rational::{self, Rational};

/// Which proposals the setter may make at each (round, default).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// Any policy, never adjourning.
    Amendment,
    /// Any policy, always adjourning.
    Successive,
    /// Any policy without adjournment, or adjourning on the default.
    OpenRule,
    /// Explicit feasible sets; states missing from the table use `fallback`.
    Custom {
        table: BTreeMap<(usize, PolicyId), Vec<Proposal>>,
        fallback: Vec<Proposal>,
    },
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Amendment => "amendment",
            Protocol::Successive => "successive",
            Protocol::OpenRule => "open_rule",
            Protocol::Custom { .. } => "custom",
        }
    }

    /// The same feasible set at every state.
    pub fn uniform(proposals: Vec<Proposal>) -> Protocol {
        Protocol::Custom {
            table: BTreeMap::new(),
            fallback: proposals,
        }
    }

    /// Feasible proposals at a state, sorted by policy then adjournment flag.
    pub fn feasible(&self, policies: usize, round: usize, default: PolicyId) -> Vec<Proposal> {
        let mut out: Vec<Proposal> = match self {
            Protocol::Amendment => (0..policies).map(Proposal::amend).collect(),
            Protocol::Successive => (0..policies).map(Proposal::adjourn).collect(),
            Protocol::OpenRule => (0..policies)
                .map(Proposal::amend)
                .chain([Proposal::adjourn(default)])
                .collect(),
            Protocol::Custom { table, fallback } => {
                table.get(&(round, default)).unwrap_or(fallback).clone()
            }
        };
        out.sort();
        out.dedup();
        out
    }
}

/// A finite-horizon agenda game.
#[derive(Clone, Debug)]
pub struct GameSpec {
    pub problem: Problem,
    pub rule: VotingRule,
    pub horizon: usize,
    pub start: PolicyId,
    pub protocol: Protocol,
}

impl GameSpec {
    pub fn new(
        problem: Problem,
        rule: VotingRule,
        horizon: usize,
        start: PolicyId,
        protocol: Protocol,
    ) -> Result<GameSpec> {
        problem.check_policy(start)?;
        rule.check(&problem)?;
        if let Protocol::Custom { table, fallback } = &protocol {
            for p in table.values().flatten().chain(fallback) {
                problem.check_policy(p.policy)?;
            }
            for (&(t, x), ps) in table {
                if t == 0 || t > horizon {
                    return Err(Error::Validation(format!(
                        "protocol entry for round {t} outside 1..={horizon}"
                    )));
                }
                problem.check_policy(x)?;
                if ps.is_empty() {
                    return Err(Error::Validation(format!(
                        "empty feasible set at round {t}, default {x}"
                    )));
                }
            }
            if fallback.is_empty() && table.len() < horizon * problem.num_policies() {
                return Err(Error::Validation(
                    "protocol leaves some states without feasible proposals".into(),
                ));
            }
        }
        Ok(GameSpec {
            problem,
            rule,
            horizon,
            start,
            protocol,
        })
    }

    pub fn feasible(&self, round: usize, default: PolicyId) -> Vec<Proposal> {
        self.protocol
            .feasible(self.problem.num_policies(), round, default)
    }
}

/// Checks that every state offers the favorite improvement in some form
/// and never forces a choice between two policies available in opposite modes.
pub fn check_richness(game: &GameSpec) -> Result<()> {
    let phi = phi_map(&game.problem, &game.rule)?;
    let iter = phi_iterates(&phi, game.horizon + 1);
    let m = game.problem.num_policies();
    for t in 1..=game.horizon {
        for x in 0..m {
            let f = game.feasible(t, x);
            let has = |p: Proposal| f.contains(&p);
            if !has(Proposal::amend(phi[x]))
                && !has(Proposal::adjourn(iter[game.horizon - t + 1][x]))
            {
                return Err(Error::MissingImprovement {
                    round: t,
                    default: x,
                });
            }
            let only_without =
                (0..m).find(|&a| has(Proposal::amend(a)) && !has(Proposal::adjourn(a)));
            let only_with = (0..m).find(|&a| has(Proposal::adjourn(a)) && !has(Proposal::amend(a)));
            if let (Some(only_without), Some(only_with)) = (only_without, only_with) {
                return Err(Error::NonRich {
                    round: t,
                    default: x,
                    only_without,
                    only_with,
                });
            }
        }
    }
    Ok(())
}

/// One round of on-path play.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundTrace {
    pub round: usize,
    pub default: PolicyId,
    pub proposal: Proposal,
    pub passed: bool,
    /// Voters approving the proposal; empty when the relation is given by an override.
    pub approving: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SolveReport {
    pub outcome: PolicyId,
    /// `values[t - 1][x]` is the continuation outcome entering round `t` with default `x`; the last row is round `T + 1`.
    pub values: Vec<Vec<PolicyId>>,
    pub on_path: Vec<RoundTrace>,
    /// Round in which an adjourning proposal passed, if any.
    pub adjourned_at: Option<usize>,
}

pub const DEFAULT_ORACLE_BUDGET: u64 = 50_000_000;

struct Decision {
    proposal: Proposal,
    passes: bool,
    outcome: PolicyId,
}

fn continuation(p: Proposal, next: &[PolicyId]) -> PolicyId {
    if p.adjourn {
        p.policy
    } else {
        next[p.policy]
    }
}

fn approving(problem: &Problem, accept: PolicyId, reject: PolicyId) -> Vec<usize> {
    (0..problem.num_voters())
        .filter(|&i| problem.voter_cmp(i, accept, reject) != Ordering::Less)
        .collect()
}

fn best_response(game: &GameSpec, round: usize, x: PolicyId, next: &[PolicyId]) -> Decision {
    let mut best: Option<Decision> = None;
    for p in game.feasible(round, x) {
        let accept = continuation(p, next);
        let reject = next[x];
        let passes = accepts_weak(&game.problem, &game.rule, accept, reject);
        let outcome = if passes { accept } else { reject };
        let better = match &best {
            None => true,
            Some(b) => game.problem.setter_cmp(outcome, b.outcome) == Ordering::Greater,
        };
        if better {
            best = Some(Decision {
                proposal: p,
                passes,
                outcome,
            });
        }
    }
    best.expect("feasible sets are non-empty")
}

/// Solves the game by backward induction with as-if-pivotal voting.
pub fn solve_spe(game: &GameSpec, budget: u64) -> Result<SolveReport> {
    game.problem.require_generic("solve_spe")?;
    let m = game.problem.num_policies();
    let work = (game.horizon as u128) * (m as u128) * (m as u128 * 2);
    if work > budget as u128 {
        return Err(Error::Budget {
            what: "oracle states".into(),
            needed: work,
            limit: budget as u128,
        });
    }
    let mut values = vec![(0..m).collect::<Vec<_>>()];
    for t in (1..=game.horizon).rev() {
        let next = values.last().expect("non-empty");
        let row = (0..m)
            .map(|x| best_response(game, t, x, next).outcome)
            .collect();
        values.push(row);
    }
    values.reverse();
    let mut on_path = Vec::new();
    let mut x = game.start;
    let mut adjourned_at = None;
    for t in 1..=game.horizon {
        let next = &values[t];
        let d = best_response(game, t, x, next);
        let accept = continuation(d.proposal, next);
        let approving = if game.problem.has_voter_utilities() {
            approving(&game.problem, accept, next[x])
        } else {
            Vec::new()
        };
        on_path.push(RoundTrace {
            round: t,
            default: x,
            proposal: d.proposal,
            passed: d.passes,
            approving,
        });
        if d.passes {
            if d.proposal.adjourn {
                adjourned_at = Some(t);
                x = d.proposal.policy;
                break;
            }
            x = d.proposal.policy;
        }
    }
    let outcome = values[0][game.start];
    if outcome != x {
        return Err(Error::Internal(
            "on-path play disagrees with the value table".into(),
        ));
    }
    Ok(SolveReport {
        outcome,
        values,
        on_path,
        adjourned_at,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProtocolOutcome {
    pub protocol: String,
    pub outcome: PolicyId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProtocolEquivalence {
    pub equivalent: bool,
    /// The iterated favorite improvement of the start.
    pub expected: PolicyId,
    pub outcomes: Vec<ProtocolOutcome>,
}

/// Solves the game under each protocol and compares with the iterated favorite improvement.
pub fn protocol_equivalence(
    problem: &Problem,
    rule: &VotingRule,
    horizon: usize,
    start: PolicyId,
    protocols: &[Protocol],
) -> Result<ProtocolEquivalence> {
    problem.require_generic("protocol_equivalence")?;
    let phi = phi_map(problem, rule)?;
    let expected = phi_iterates(&phi, horizon)[horizon][start];
    let mut outcomes = Vec::new();
    for p in protocols {
        let game = GameSpec::new(problem.clone(), rule.clone(), horizon, start, p.clone())?;
        check_richness(&game)?;
        let rep = solve_spe(&game, DEFAULT_ORACLE_BUDGET)?;
        outcomes.push(ProtocolOutcome {
            protocol: p.name().to_string(),
            outcome: rep.outcome,
        });
    }
    Ok(ProtocolEquivalence {
        equivalent: outcomes.iter().all(|o| o.outcome == expected),
        expected,
        outcomes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Player {
    Setter,
    Voter(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// A different single action strictly improves the player's outcome.
    ProfitableDeviation,
    /// The vote contradicts a strict preference between the two continuations.
    NotAsIfPivotal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProfileViolation {
    pub player: Player,
    pub kind: ViolationKind,
    pub round: usize,
    pub default: PolicyId,
    pub proposal: Option<Proposal>,
    /// The better action: a proposal for the setter, a vote for a voter.
    pub deviation: String,
    #[serde(with = "rational::serde_rational")]
    pub gain: Rational,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DeviationReport {
    pub violations: Vec<ProfileViolation>,
    pub states_checked: u64,
}

impl DeviationReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a profile for one-shot deviations and as-if-pivotal voting at every state.
pub fn verify_profile(game: &GameSpec, profile: &StrategyProfile) -> Result<DeviationReport> {
    let problem = &game.problem;
    problem.require_utilities()?;
    let m = problem.num_policies();
    let n = problem.num_voters();
    if profile.horizon != game.horizon || profile.num_policies != m || profile.num_voters != n {
        return Err(Error::Validation(
            "profile dimensions do not match the game".into(),
        ));
    }
    let mut missing = Vec::new();
    for t in 1..=game.horizon {
        for x in 0..m {
            match profile.proposal(t, x) {
                None => missing.push(format!("proposal at round {t}, default {x}")),
                Some(p) if !game.feasible(t, x).contains(&p) => {
                    return Err(Error::Validation(format!(
                        "infeasible proposal {p:?} at round {t}, default {x}"
                    )))
                }
                _ => {}
            }
            for p in game.feasible(t, x) {
                for i in 0..n {
                    if profile.vote(i, t, x, p).is_none() {
                        missing.push(format!(
                            "vote of voter {i} at round {t}, default {x}, proposal {p:?}"
                        ));
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::PartialProfile {
            count: missing.len(),
            first: missing[0].clone(),
        });
    }
    let passes = |t: usize, x: PolicyId, p: Proposal, flip: Option<usize>| {
        let mut mask = Vec::with_capacity(n);
        for i in 0..n {
            let v = profile.vote(i, t, x, p).expect("checked") ^ (flip == Some(i));
            if v {
                mask.push(i);
            }
        }
        match game.rule.quota_value() {
            Some(q) => mask.len() >= q,
            None => game
                .rule
                .is_winning(crate::ccp::Coalition::from_members(&mask)),
        }
    };
    let mut values = vec![(0..m).collect::<Vec<PolicyId>>(); game.horizon + 2];
    for t in (1..=game.horizon).rev() {
        for x in 0..m {
            let p = profile.proposal(t, x).expect("checked");
            values[t][x] = if passes(t, x, p, None) {
                continuation(p, &values[t + 1])
            } else {
                values[t + 1][x]
            };
        }
    }
    let mut violations = Vec::new();
    let mut states = 0u64;
    for t in 1..=game.horizon {
        let next = &values[t + 1];
        for x in 0..m {
            states += 1;
            let current = values[t][x];
            let outcome_of = |p: Proposal, flip: Option<usize>| {
                if passes(t, x, p, flip) {
                    continuation(p, next)
                } else {
                    next[x]
                }
            };
            let mut best: Option<(Proposal, PolicyId)> = None;
            for p in game.feasible(t, x) {
                let o = outcome_of(p, None);
                if problem.setter_cmp(o, current) == Ordering::Greater
                    && best.is_none_or(|(_, b)| problem.setter_cmp(o, b) == Ordering::Greater)
                {
                    best = Some((p, o));
                }
            }
            if let Some((p, o)) = best {
                violations.push(ProfileViolation {
                    player: Player::Setter,
                    kind: ViolationKind::ProfitableDeviation,
                    round: t,
                    default: x,
                    proposal: profile.proposal(t, x),
                    deviation: format!(
                        "propose {} (adjourn = {})",
                        problem.label(p.policy),
                        p.adjourn
                    ),
                    gain: problem.setter_utility(o) - problem.setter_utility(current),
                });
            }
            for p in game.feasible(t, x) {
                let here = outcome_of(p, None);
                let accept = continuation(p, next);
                let reject = next[x];
                for i in 0..n {
                    let vote = profile.vote(i, t, x, p).expect("checked");
                    let there = outcome_of(p, Some(i));
                    if problem.voter_cmp(i, there, here) == Ordering::Greater {
                        violations.push(ProfileViolation {
                            player: Player::Voter(i),
                            kind: ViolationKind::ProfitableDeviation,
                            round: t,
                            default: x,
                            proposal: Some(p),
                            deviation: format!("vote {}", if vote { "no" } else { "yes" }),
                            gain: problem.voter_utility(i, there) - problem.voter_utility(i, here),
                        });
                    }
                    let wants = problem.voter_cmp(i, accept, reject);
                    let contradicts =
                        (wants == Ordering::Greater && !vote) || (wants == Ordering::Less && vote);
                    if contradicts {
                        let gain = (problem.voter_utility(i, accept)
                            - problem.voter_utility(i, reject))
                        .abs_ref();
                        violations.push(ProfileViolation {
                            player: Player::Voter(i),
                            kind: ViolationKind::NotAsIfPivotal,
                            round: t,
                            default: x,
                            proposal: Some(p),
                            deviation: format!("vote {}", if vote { "no" } else { "yes" }),
                            gain,
                        });
                    }
                }
            }
        }
    }
    Ok(DeviationReport {
        violations,
        states_checked: states,
    })
}

trait AbsRef {
    fn abs_ref(&self) -> Rational;
}

impl AbsRef for Rational {
    fn abs_ref(&self) -> Rational {
        num_traits::Signed::abs(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{dtd_profile, equilibrium_outcome, simple_equilibrium_profile, TieBreak};
    use crate::fixtures;
    use crate::generators::random_generic_problem;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const W: PolicyId = 0;
    const X: PolicyId = 1;
    const Y: PolicyId = 2;
    const Z: PolicyId = 3;

    fn maj3() -> VotingRule {
        VotingRule::simple_majority(3).unwrap()
    }

    fn game(p: Problem, t: usize, start: PolicyId, protocol: Protocol) -> GameSpec {
        let r = VotingRule::simple_majority(p.num_voters().max(1)).unwrap();
        GameSpec::new(p, r, t, start, protocol).unwrap()
    }

    fn restricted_protocol() -> Protocol {
        Protocol::uniform(vec![
            Proposal::adjourn(W),
            Proposal::amend(X),
            Proposal::adjourn(Y),
            Proposal::adjourn(Z),
        ])
    }

    #[test]
    fn ratchet_oracle_matches_iterates() {
        for (t, e) in [(1, Y), (2, X), (3, W), (4, W)] {
            let g = game(fixtures::ratchet(), t, Z, Protocol::Amendment);
            let rep = solve_spe(&g, DEFAULT_ORACLE_BUDGET).unwrap();
            assert_eq!(rep.outcome, e);
            assert_eq!(rep.values.len(), t + 1);
        }
        let g = game(fixtures::ratchet(), 3, Z, Protocol::Amendment);
        let rep = solve_spe(&g, DEFAULT_ORACLE_BUDGET).unwrap();
        // Proposing w at once already secures w; the lowest-index tie-break selects it.
        let first = &rep.on_path[0];
        assert_eq!(first.proposal, Proposal::amend(W));
        assert!(first.passed);
        assert_eq!(first.approving, vec![0, 2]);
    }

    #[test]
    fn stuck_oracle_from_override() {
        for t in 1..=6 {
            let g = game(fixtures::stuck(), t, Z, Protocol::Amendment);
            assert_eq!(solve_spe(&g, DEFAULT_ORACLE_BUDGET).unwrap().outcome, X);
        }
    }

    #[test]
    fn protocols_agree_on_ratchet() {
        let p = fixtures::ratchet();
        for t in 1..=4 {
            let eq = protocol_equivalence(
                &p,
                &maj3(),
                t,
                Z,
                &[
                    Protocol::Amendment,
                    Protocol::Successive,
                    Protocol::OpenRule,
                ],
            )
            .unwrap();
            assert!(eq.equivalent, "{eq:?}");
        }
    }

    #[test]
    fn restricted_protocol_is_not_rich() {
        let g = game(fixtures::ratchet(), 3, Z, restricted_protocol());
        let err = check_richness(&g).unwrap_err();
        assert_eq!(
            err,
            Error::NonRich {
                round: 1,
                default: W,
                only_without: X,
                only_with: W
            }
        );
        for t in 1..=5 {
            let g = game(fixtures::ratchet(), t, Z, restricted_protocol());
            let rep = solve_spe(&g, DEFAULT_ORACLE_BUDGET).unwrap();
            assert_eq!(rep.outcome, Y, "T = {t}");
            let last = rep.on_path.iter().rev().find(|r| r.passed).unwrap();
            assert_eq!(last.proposal, Proposal::adjourn(Y));
            assert!(rep.adjourned_at.is_some());
        }
    }

    #[test]
    fn budget_is_enforced() {
        let g = game(fixtures::ratchet(), 3, Z, Protocol::Amendment);
        assert!(matches!(solve_spe(&g, 10), Err(Error::Budget { .. })));
    }

    #[test]
    fn simple_profile_verifies_on_ratchet() {
        let p = fixtures::ratchet();
        for t in 1..=4 {
            let prof = simple_equilibrium_profile(&p, &maj3(), t).unwrap();
            let g = game(p.clone(), t, Z, Protocol::Amendment);
            let rep = verify_profile(&g, &prof).unwrap();
            assert!(rep.passes(), "{:?}", rep.violations);
        }
    }

    #[test]
    fn sabotaged_profile_is_caught() {
        let p = fixtures::ratchet();
        let mut prof = simple_equilibrium_profile(&p, &maj3(), 2).unwrap();
        prof.set_proposal(1, Z, Proposal::amend(Z));
        let g = game(p.clone(), 2, Z, Protocol::Amendment);
        let rep = verify_profile(&g, &prof).unwrap();
        assert!(rep
            .violations
            .iter()
            .any(|v| v.player == Player::Setter && v.round == 1 && v.default == Z));
        let mut prof = simple_equilibrium_profile(&p, &maj3(), 2).unwrap();
        prof.set_vote(1, 2, Y, Proposal::amend(X), false);
        let rep = verify_profile(&g, &prof).unwrap();
        assert!(rep
            .violations
            .iter()
            .any(|v| v.player == Player::Voter(1) && v.kind == ViolationKind::NotAsIfPivotal));
    }

    #[test]
    fn partial_profile_is_rejected() {
        let p = fixtures::ratchet();
        let mut prof = simple_equilibrium_profile(&p, &maj3(), 2).unwrap();
        prof.proposer[0] = None;
        let g = game(p, 2, Z, Protocol::Amendment);
        assert!(matches!(
            verify_profile(&g, &prof),
            Err(Error::PartialProfile { .. })
        ));
    }

    #[test]
    fn dtd_profiles_verify() {
        for (t, tb) in [(3, TieBreak::NonCapricious), (4, TieBreak::Capricious)] {
            let d = dtd_profile(3, 4, t, tb).unwrap();
            let g = GameSpec::new(d.problem.clone(), d.rule.clone(), t, 0, Protocol::Amendment)
                .unwrap();
            let rep = verify_profile(&g, &d.profile).unwrap();
            assert!(
                rep.passes(),
                "{tb:?}: {:?}",
                &rep.violations[..rep.violations.len().min(3)]
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn oracle_agrees_with_iterates(seed in any::<u64>(), m in 2usize..7, big in any::<bool>(), t in 1usize..5) {
            let n = if big { 5 } else { 3 };
            let p = random_generic_problem(&mut ChaCha8Rng::seed_from_u64(seed), m, n);
            let r = VotingRule::simple_majority(n).unwrap();
            for x in p.policies() {
                let g = GameSpec::new(p.clone(), r.clone(), t, x, Protocol::Amendment).unwrap();
                let spe = solve_spe(&g, DEFAULT_ORACLE_BUDGET).unwrap();
                prop_assert_eq!(spe.outcome, equilibrium_outcome(&p, &r, x, t).unwrap().outcome());
            }
            let prof = simple_equilibrium_profile(&p, &r, t).unwrap();
            let g = GameSpec::new(p.clone(), r.clone(), t, 0, Protocol::Amendment).unwrap();
            prop_assert!(verify_profile(&g, &prof).unwrap().passes());
        }
    }
}
