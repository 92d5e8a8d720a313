//! Equilibrium dynamics: favorite improvements, trajectories, strategy
//! profiles, correspondences for non-generic problems and divide-the-dollar.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::ccp::{accepts_strict, accepts_weak, PolicyId, Problem, VotingRule};
use crate::error::{Error, Result};
use crate::generators::dtd_problem;

/// The setter's favorite policy among those acceptable against `x` (and `x` itself).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FavoriteImprovement {
    pub policy: PolicyId,
    /// False when several policies tie for the setter and the lowest index was taken.
    pub unique: bool,
}

pub fn favorite_improvement(
    problem: &Problem,
    rule: &VotingRule,
    x: PolicyId,
) -> Result<FavoriteImprovement> {
    problem.check_policy(x)?;
    rule.check(problem)?;
    Ok(favorite_unchecked(problem, rule, x))
}

fn favorite_unchecked(problem: &Problem, rule: &VotingRule, x: PolicyId) -> FavoriteImprovement {
    let candidates: Vec<PolicyId> = problem
        .policies()
        .filter(|&y| y == x || accepts_strict(problem, rule, y, x))
        .collect();
    let best = problem
        .setter_best(candidates.iter().copied())
        .expect("x is a candidate");
    let ties = candidates
        .iter()
        .filter(|&&y| problem.setter_cmp(y, best) == Ordering::Equal)
        .count();
    FavoriteImprovement {
        policy: best,
        unique: ties == 1,
    }
}

/// The favorite-improvement map for every policy.
pub fn phi_map(problem: &Problem, rule: &VotingRule) -> Result<Vec<PolicyId>> {
    use rayon::prelude::*;
    rule.check(problem)?;
    Ok(problem
        .policies()
        .into_par_iter()
        .map(|x| favorite_unchecked(problem, rule, x).policy)
        .collect())
}

/// `iterates[k][x]` is the `k`-fold favorite improvement of `x`, for `k = 0..=depth`.
pub fn phi_iterates(phi: &[PolicyId], depth: usize) -> Vec<Vec<PolicyId>> {
    let mut out = vec![(0..phi.len()).collect::<Vec<_>>()];
    for k in 0..depth {
        let next = out[k].iter().map(|&x| phi[x]).collect();
        out.push(next);
    }
    out
}

/// Successive favorite improvements starting from a default.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Trajectory {
    pub start: PolicyId,
    /// `steps[t]` is the outcome after `t` rounds; `steps[0]` is the start.
    pub steps: Vec<PolicyId>,
    /// First round count after which the path no longer moves.
    pub fixed_point_reached_at: Option<usize>,
}

impl Trajectory {
    pub fn outcome(&self) -> PolicyId {
        *self.steps.last().expect("non-empty")
    }
}

/// The equilibrium outcome of a `rounds`-round amendment game from `start`.
pub fn equilibrium_outcome(
    problem: &Problem,
    rule: &VotingRule,
    start: PolicyId,
    rounds: usize,
) -> Result<Trajectory> {
    problem.require_generic("equilibrium_outcome")?;
    problem.check_policy(start)?;
    let phi = phi_map(problem, rule)?;
    Ok(trajectory_from_map(&phi, start, rounds))
}

pub fn trajectory_from_map(phi: &[PolicyId], start: PolicyId, rounds: usize) -> Trajectory {
    let mut steps = vec![start];
    for _ in 0..rounds {
        let last = *steps.last().expect("non-empty");
        steps.push(phi[last]);
    }
    let fixed_point_reached_at = steps.iter().position(|&x| phi[x] == x);
    Trajectory {
        start,
        steps,
        fixed_point_reached_at,
    }
}

/// A proposal: a policy, and whether passing it ends the game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Proposal {
    pub policy: PolicyId,
    pub adjourn: bool,
}

impl Proposal {
    pub fn amend(policy: PolicyId) -> Proposal {
        Proposal {
            policy,
            adjourn: false,
        }
    }

    pub fn adjourn(policy: PolicyId) -> Proposal {
        Proposal {
            policy,
            adjourn: true,
        }
    }
}

/// Markov strategies for the setter and every voter, indexed by round (from 1) and default.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub horizon: usize,
    pub num_policies: usize,
    pub num_voters: usize,
    pub proposer: Vec<Option<Proposal>>,
    /// One table per voter over (round, default, proposal policy, adjournment flag).
    pub votes: Vec<Vec<Option<bool>>>,
}

impl StrategyProfile {
    pub fn empty(horizon: usize, num_policies: usize, num_voters: usize) -> StrategyProfile {
        let m = num_policies;
        StrategyProfile {
            horizon,
            num_policies,
            num_voters,
            proposer: vec![None; horizon * m],
            votes: vec![vec![None; horizon * m * m * 2]; num_voters],
        }
    }

    fn state(&self, round: usize, default: PolicyId) -> usize {
        assert!(round >= 1 && round <= self.horizon && default < self.num_policies);
        (round - 1) * self.num_policies + default
    }

    fn vote_slot(&self, round: usize, default: PolicyId, p: Proposal) -> usize {
        (self.state(round, default) * self.num_policies + p.policy) * 2 + p.adjourn as usize
    }

    pub fn proposal(&self, round: usize, default: PolicyId) -> Option<Proposal> {
        self.proposer[self.state(round, default)]
    }

    pub fn set_proposal(&mut self, round: usize, default: PolicyId, p: Proposal) {
        let s = self.state(round, default);
        self.proposer[s] = Some(p);
    }

    pub fn vote(&self, voter: usize, round: usize, default: PolicyId, p: Proposal) -> Option<bool> {
        self.votes[voter][self.vote_slot(round, default, p)]
    }

    pub fn set_vote(
        &mut self,
        voter: usize,
        round: usize,
        default: PolicyId,
        p: Proposal,
        yes: bool,
    ) {
        let s = self.vote_slot(round, default, p);
        self.votes[voter][s] = Some(yes);
    }
}

/// The profile in which the setter always proposes her favorite improvement
/// and voters approve whenever the proposal's continuation is weakly better.
pub fn simple_equilibrium_profile(
    problem: &Problem,
    rule: &VotingRule,
    rounds: usize,
) -> Result<StrategyProfile> {
    problem.require_generic("simple_equilibrium_profile")?;
    problem.require_utilities()?;
    let phi = phi_map(problem, rule)?;
    let iter = phi_iterates(&phi, rounds);
    let m = problem.num_policies();
    let mut profile = StrategyProfile::empty(rounds, m, problem.num_voters());
    for t in 1..=rounds {
        let cont = &iter[rounds - t];
        for x in 0..m {
            profile.set_proposal(t, x, Proposal::amend(phi[x]));
            for a in 0..m {
                for i in 0..problem.num_voters() {
                    let amend = problem.voter_cmp(i, cont[a], cont[x]) != Ordering::Less;
                    let adjourn = problem.voter_cmp(i, a, cont[x]) != Ordering::Less;
                    profile.set_vote(i, t, x, Proposal::amend(a), amend);
                    profile.set_vote(i, t, x, Proposal::adjourn(a), adjourn);
                }
            }
        }
    }
    Ok(profile)
}

/// The setter's optimal-response correspondence when preferences may tie.
pub fn phi_or(problem: &Problem, rule: &VotingRule, x: PolicyId) -> Result<Vec<PolicyId>> {
    problem.check_policy(x)?;
    rule.check(problem)?;
    Ok(phi_or_unchecked(problem, rule, x))
}

fn phi_or_unchecked(problem: &Problem, rule: &VotingRule, x: PolicyId) -> Vec<PolicyId> {
    let v = problem
        .setter_best(
            problem
                .policies()
                .filter(|&y| y == x || accepts_strict(problem, rule, y, x)),
        )
        .expect("x is a candidate");
    problem
        .policies()
        .filter(|&y| {
            accepts_weak(problem, rule, y, x) && problem.setter_cmp(y, v) != Ordering::Less
        })
        .collect()
}

/// Outcome sets bracketing the equilibrium outcomes of non-generic problems.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NcBounds {
    /// Outcomes of iterating a single selection of the correspondence.
    pub lower: BTreeSet<PolicyId>,
    /// Outcomes of compositions whose selections agree up to setter indifference, constrained at every policy.
    pub upper: BTreeSet<PolicyId>,
    /// The same, constrained only at policies the path visits.
    pub upper_reachable: BTreeSet<PolicyId>,
    pub nodes_explored: u64,
}

struct Budget {
    used: u64,
    limit: u64,
}

impl Budget {
    fn tick(&mut self) -> Result<()> {
        self.used += 1;
        if self.used > self.limit {
            Err(Error::Budget {
                what: "selection enumeration".into(),
                needed: self.used as u128,
                limit: self.limit as u128,
            })
        } else {
            Ok(())
        }
    }
}

pub const DEFAULT_BUDGET: u64 = 2_000_000;

pub fn nc_outcome_bounds(
    problem: &Problem,
    rule: &VotingRule,
    start: PolicyId,
    rounds: usize,
    budget: u64,
) -> Result<NcBounds> {
    problem.check_policy(start)?;
    rule.check(problem)?;
    let m = problem.num_policies();
    let corr: Vec<Vec<PolicyId>> = problem
        .policies()
        .map(|x| phi_or_unchecked(problem, rule, x))
        .collect();
    let classes: Vec<Vec<Vec<PolicyId>>> = corr
        .iter()
        .map(|ys| {
            let mut cls: Vec<Vec<PolicyId>> = Vec::new();
            for &y in ys {
                match cls
                    .iter_mut()
                    .find(|c| problem.setter_cmp(c[0], y) == Ordering::Equal)
                {
                    Some(c) => c.push(y),
                    None => cls.push(vec![y]),
                }
            }
            cls
        })
        .collect();
    let mut budget = Budget {
        used: 0,
        limit: budget,
    };

    fn single(
        x: PolicyId,
        left: usize,
        corr: &[Vec<PolicyId>],
        chosen: &mut Vec<Option<PolicyId>>,
        out: &mut BTreeSet<PolicyId>,
        budget: &mut Budget,
    ) -> Result<()> {
        budget.tick()?;
        if left == 0 {
            out.insert(x);
            return Ok(());
        }
        if let Some(y) = chosen[x] {
            return single(y, left - 1, corr, chosen, out, budget);
        }
        for &y in &corr[x] {
            chosen[x] = Some(y);
            single(y, left - 1, corr, chosen, out, budget)?;
        }
        chosen[x] = None;
        Ok(())
    }

    fn classed(
        x: PolicyId,
        left: usize,
        classes: &[Vec<Vec<PolicyId>>],
        chosen: &mut Vec<Option<usize>>,
        out: &mut BTreeSet<PolicyId>,
        budget: &mut Budget,
    ) -> Result<()> {
        budget.tick()?;
        if left == 0 {
            out.insert(x);
            return Ok(());
        }
        if let Some(c) = chosen[x] {
            for &y in &classes[x][c] {
                classed(y, left - 1, classes, chosen, out, budget)?;
            }
            return Ok(());
        }
        for c in 0..classes[x].len() {
            chosen[x] = Some(c);
            for &y in &classes[x][c] {
                classed(y, left - 1, classes, chosen, out, budget)?;
            }
        }
        chosen[x] = None;
        Ok(())
    }

    let mut lower = BTreeSet::new();
    single(
        start,
        rounds,
        &corr,
        &mut vec![None; m],
        &mut lower,
        &mut budget,
    )?;
    let mut upper_reachable = BTreeSet::new();
    classed(
        start,
        rounds,
        &classes,
        &mut vec![None; m],
        &mut upper_reachable,
        &mut budget,
    )?;

    let combos: u128 = classes.iter().map(|c| c.len() as u128).product();
    if combos > (budget.limit - budget.used.min(budget.limit)) as u128 {
        return Err(Error::Budget {
            what: "class assignments".into(),
            needed: combos,
            limit: budget.limit as u128,
        });
    }
    let mut upper = BTreeSet::new();
    let mut choice = vec![0usize; m];
    loop {
        budget.tick()?;
        let mut frontier: BTreeSet<PolicyId> = [start].into();
        for _ in 0..rounds {
            frontier = frontier
                .iter()
                .flat_map(|&x| classes[x][choice[x]].iter().copied())
                .collect();
        }
        upper.extend(frontier);
        let mut k = 0;
        while k < m {
            choice[k] += 1;
            if choice[k] < classes[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == m {
            break;
        }
    }
    Ok(NcBounds {
        lower,
        upper,
        upper_reachable,
        nodes_explored: budget.used,
    })
}

/// A divide-the-dollar allocation: `shares[i] / denominator`, the setter last.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation {
    pub shares: Vec<u64>,
    pub denominator: u64,
}

impl Allocation {
    pub fn new(shares: Vec<u64>, denominator: u64) -> Result<Allocation> {
        if shares.len() < 2 {
            return Err(Error::Validation(
                "an allocation needs at least one voter and the setter".into(),
            ));
        }
        if denominator == 0 || shares.iter().sum::<u64>() != denominator {
            return Err(Error::Validation(format!(
                "shares {shares:?} do not sum to {denominator}"
            )));
        }
        Ok(Allocation {
            shares,
            denominator,
        })
    }

    pub fn num_voters(&self) -> usize {
        self.shares.len() - 1
    }

    pub fn setter_share(&self) -> u64 {
        *self.shares.last().expect("non-empty")
    }

    pub fn is_dictatorship(&self) -> bool {
        self.setter_share() == self.denominator
    }
}

/// Moves the shares of the `(n-1)/2` best-off voters to the setter; ties favour lower indices.
pub fn dtd_beta(a: &Allocation) -> Result<Allocation> {
    let n = a.num_voters();
    if n.is_multiple_of(2) {
        return Err(Error::Validation(format!(
            "divide-the-dollar needs an odd electorate, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.shares[j].cmp(&a.shares[i]).then(i.cmp(&j)));
    let mut shares = a.shares.clone();
    for &i in order.iter().take((n - 1) / 2) {
        shares[n] += shares[i];
        shares[i] = 0;
    }
    Ok(Allocation {
        shares,
        denominator: a.denominator,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Indifferent voters always approve.
    NonCapricious,
    /// Indifferent voters approve only in the last two rounds.
    Capricious,
}

/// A divide-the-dollar game on the grid with the given denominator together with a profile.
#[derive(Clone, Debug)]
pub struct DtdGame {
    pub problem: Problem,
    pub rule: VotingRule,
    pub allocations: Vec<Allocation>,
    pub profile: StrategyProfile,
    index: HashMap<Vec<u64>, PolicyId>,
}

impl DtdGame {
    pub fn policy_of(&self, a: &Allocation) -> Option<PolicyId> {
        self.index.get(&a.shares).copied()
    }

    /// The realized outcome when play follows the profile from `start`.
    pub fn outcome(&self, start: PolicyId) -> PolicyId {
        let mut x = start;
        for t in 1..=self.profile.horizon {
            let p = self.profile.proposal(t, x).expect("total profile");
            let yes = (0..self.problem.num_voters())
                .filter(|&i| self.profile.vote(i, t, x, p) == Some(true))
                .count();
            if yes >= self.rule.quota_value().expect("quota rule") {
                if p.adjourn {
                    return p.policy;
                }
                x = p.policy;
            }
        }
        x
    }
}

/// Builds the divide-the-dollar game and the profile where the setter proposes
/// the allocation that expropriates the best-off majority-minus-one voters.
///
/// Votes follow the continuation outcomes the profile itself induces, so
/// voters vote as if pivotal; indifference is resolved by `tie_break`.
pub fn dtd_profile(
    voters: usize,
    denominator: u64,
    rounds: usize,
    tie_break: TieBreak,
) -> Result<DtdGame> {
    if tie_break == TieBreak::Capricious && voters != 3 {
        return Err(Error::Validation(
            "the capricious profile is defined for three voters".into(),
        ));
    }
    let (problem, allocations) = dtd_problem(voters, denominator)?;
    let rule = VotingRule::simple_majority(voters)?;
    let q = rule.quota_value().expect("quota rule");
    let index: HashMap<Vec<u64>, PolicyId> = allocations
        .iter()
        .enumerate()
        .map(|(k, a)| (a.shares.clone(), k))
        .collect();
    let beta: Vec<PolicyId> = allocations
        .iter()
        .map(|a| index[&dtd_beta(a).expect("odd").shares])
        .collect();
    let m = problem.num_policies();
    let mut profile = StrategyProfile::empty(rounds, m, voters);
    let mut next: Vec<PolicyId> = (0..m).collect();
    for t in (1..=rounds).rev() {
        let approve_ties = match tie_break {
            TieBreak::NonCapricious => true,
            TieBreak::Capricious => t + 1 >= rounds,
        };
        let mut current = vec![0; m];
        for x in 0..m {
            for a in 0..m {
                for adjourn in [false, true] {
                    let p = Proposal { policy: a, adjourn };
                    let accepted = if adjourn { a } else { next[a] };
                    for i in 0..voters {
                        let yes = match problem.voter_cmp(i, accepted, next[x]) {
                            Ordering::Greater => true,
                            Ordering::Less => false,
                            Ordering::Equal => approve_ties,
                        };
                        profile.set_vote(i, t, x, p, yes);
                    }
                }
            }
            let p = Proposal::amend(beta[x]);
            profile.set_proposal(t, x, p);
            let yes = (0..voters)
                .filter(|&i| profile.vote(i, t, x, p) == Some(true))
                .count();
            current[x] = if yes >= q { next[beta[x]] } else { next[x] };
        }
        next = current;
    }
    Ok(DtdGame {
        problem,
        rule,
        allocations,
        profile,
        index,
    })
}
