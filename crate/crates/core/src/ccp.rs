//! Collective choice problems: policies, utilities, the majority relation,
//! voting rules, acceptance sets and setter improvability.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{self, Rational};

/// Index of a policy within its problem.
pub type PolicyId = usize;

/// Bit set of voters; bit `i` is voter `i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition(pub u64);

impl Coalition {
    pub const MAX_VOTERS: usize = 63;

    pub fn from_members(members: &[usize]) -> Coalition {
        Coalition(members.iter().fold(0u64, |m, &i| m | (1u64 << i)))
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: Coalition) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn members(self) -> Vec<usize> {
        (0..64).filter(|&i| self.contains(i)).collect()
    }
}

/// A complete, antisymmetric relation given directly instead of by voter utilities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tournament {
    beats: Vec<Vec<bool>>,
}

impl Tournament {
    /// Builds from `(winner, loser)` pairs; every unordered pair must appear exactly once.
    pub fn new(size: usize, edges: &[(PolicyId, PolicyId)]) -> Result<Tournament> {
        let mut beats = vec![vec![false; size]; size];
        for &(a, b) in edges {
            if a >= size || b >= size {
                return Err(Error::PolicyOutOfRange {
                    index: a.max(b),
                    len: size,
                });
            }
            if a == b {
                return Err(Error::Validation(format!(
                    "tournament edge ({a}, {a}) is reflexive"
                )));
            }
            if beats[a][b] || beats[b][a] {
                return Err(Error::Validation(format!(
                    "tournament pair ({a}, {b}) listed twice"
                )));
            }
            beats[a][b] = true;
        }
        for a in 0..size {
            for b in a + 1..size {
                if !beats[a][b] && !beats[b][a] {
                    return Err(Error::Validation(format!(
                        "tournament is incomplete: pair ({a}, {b}) missing"
                    )));
                }
            }
        }
        Ok(Tournament { beats })
    }

    pub fn size(&self) -> usize {
        self.beats.len()
    }

    pub fn beats(&self, a: PolicyId, b: PolicyId) -> bool {
        self.beats[a][b]
    }

    pub fn edges(&self) -> Vec<(PolicyId, PolicyId)> {
        let n = self.size();
        (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| self.beats[a][b])
            .collect()
    }
}

/// Dense ranks: `rank[x] < rank[y]` iff `u[x] < u[y]`.
fn dense_ranks(u: &[Rational]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[a].cmp(&u[b]));
    let mut rank = vec![0u32; u.len()];
    let mut r = 0u32;
    for w in 0..order.len() {
        if w > 0 && u[order[w]] != u[order[w - 1]] {
            r += 1;
        }
        rank[order[w]] = r;
    }
    rank
}

fn all_distinct(rank: &[u32]) -> bool {
    let mut seen = rank.to_vec();
    seen.sort_unstable();
    seen.windows(2).all(|w| w[0] != w[1])
}

/// A finite collective choice problem with exact utilities.
#[derive(Clone, Debug)]
pub struct Problem {
    labels: Vec<String>,
    voters: Vec<Vec<Rational>>,
    setter: Vec<Rational>,
    majority_override: Option<Tournament>,
    voter_rank: Vec<Vec<u32>>,
    setter_rank: Vec<u32>,
    generic: bool,
}

impl Problem {
    /// `voters[i][x]` is voter `i`'s utility for policy `x`.
    pub fn new(
        labels: Vec<String>,
        voters: Vec<Vec<Rational>>,
        setter: Vec<Rational>,
    ) -> Result<Problem> {
        Problem::build(labels, voters, setter, None)
    }

    /// A problem whose majority relation is the given tournament; voter utilities may be empty.
    pub fn with_override(
        labels: Vec<String>,
        voters: Vec<Vec<Rational>>,
        setter: Vec<Rational>,
        tournament: Tournament,
    ) -> Result<Problem> {
        Problem::build(labels, voters, setter, Some(tournament))
    }

    fn build(
        labels: Vec<String>,
        voters: Vec<Vec<Rational>>,
        setter: Vec<Rational>,
        majority_override: Option<Tournament>,
    ) -> Result<Problem> {
        let m = labels.len();
        if m == 0 {
            return Err(Error::Validation(
                "a problem needs at least one policy".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(Error::Validation(format!("duplicate policy label {l:?}")));
            }
        }
        if setter.len() != m {
            return Err(Error::Validation(format!(
                "agenda_setter has {} utilities, expected {m}",
                setter.len()
            )));
        }
        for (i, row) in voters.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Validation(format!(
                    "voters[{i}] has {} utilities, expected {m}",
                    row.len()
                )));
            }
        }
        match &majority_override {
            None if voters.is_empty() => {
                return Err(Error::Validation(
                    "a problem needs at least one voter or a majority override".into(),
                ))
            }
            Some(t) if t.size() != m => {
                return Err(Error::Validation(format!(
                    "override covers {} policies, expected {m}",
                    t.size()
                )))
            }
            _ => {}
        }
        let voter_rank: Vec<Vec<u32>> = voters.iter().map(|r| dense_ranks(r)).collect();
        let setter_rank = dense_ranks(&setter);
        let voters_generic = voter_rank.iter().all(|r| all_distinct(r));
        let generic = all_distinct(&setter_rank)
            && if voters.is_empty() {
                true
            } else {
                voters.len() % 2 == 1 && voters_generic
            };
        Ok(Problem {
            labels,
            voters,
            setter,
            majority_override,
            voter_rank,
            setter_rank,
            generic,
        })
    }

    pub fn num_policies(&self) -> usize {
        self.labels.len()
    }

    pub fn num_voters(&self) -> usize {
        self.voters.len()
    }

    pub fn policies(&self) -> std::ops::Range<PolicyId> {
        0..self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, x: PolicyId) -> &str {
        &self.labels[x]
    }

    pub fn policy_by_label(&self, label: &str) -> Result<PolicyId> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Validation(format!("unknown policy label {label:?}")))
    }

    pub fn voter_utilities(&self) -> &[Vec<Rational>] {
        &self.voters
    }

    pub fn setter_utilities(&self) -> &[Rational] {
        &self.setter
    }

    pub fn majority_override(&self) -> Option<&Tournament> {
        self.majority_override.as_ref()
    }

    pub fn has_voter_utilities(&self) -> bool {
        !self.voters.is_empty()
    }

    /// Odd number of voters, strict voter preferences and a strict setter ranking.
    pub fn is_generic(&self) -> bool {
        self.generic
    }

    pub fn require_generic(&self, operation: &str) -> Result<()> {
        if self.generic {
            Ok(())
        } else {
            Err(Error::NotGeneric(format!(
                "{operation} needs an odd electorate with strict preferences"
            )))
        }
    }

    pub fn require_utilities(&self) -> Result<()> {
        if self.voters.is_empty() {
            Err(Error::OverrideOnly)
        } else {
            Ok(())
        }
    }

    pub fn check_policy(&self, x: PolicyId) -> Result<()> {
        if x < self.labels.len() {
            Ok(())
        } else {
            Err(Error::PolicyOutOfRange {
                index: x,
                len: self.labels.len(),
            })
        }
    }

    pub fn voter_cmp(&self, i: usize, a: PolicyId, b: PolicyId) -> Ordering {
        self.voter_rank[i][a].cmp(&self.voter_rank[i][b])
    }

    pub fn setter_cmp(&self, a: PolicyId, b: PolicyId) -> Ordering {
        self.setter_rank[a].cmp(&self.setter_rank[b])
    }

    pub fn setter_utility(&self, x: PolicyId) -> &Rational {
        &self.setter[x]
    }

    pub fn voter_utility(&self, i: usize, x: PolicyId) -> &Rational {
        &self.voters[i][x]
    }

    /// The setter's best policy from `candidates`, lowest index on ties.
    pub fn setter_best<I: IntoIterator<Item = PolicyId>>(&self, candidates: I) -> Option<PolicyId> {
        candidates.into_iter().fold(None, |best, c| match best {
            Some(b) if self.setter_rank[c] <= self.setter_rank[b] => Some(b),
            _ => Some(c),
        })
    }

    pub fn setter_optima(&self) -> Vec<PolicyId> {
        let top = *self.setter_rank.iter().max().expect("non-empty");
        self.policies()
            .filter(|&x| self.setter_rank[x] == top)
            .collect()
    }

    pub fn setter_max(&self) -> &Rational {
        self.setter.iter().max().expect("non-empty")
    }

    pub fn setter_min(&self) -> &Rational {
        self.setter.iter().min().expect("non-empty")
    }

    /// Number of voters with `a` strictly above `b`.
    pub fn strict_count(&self, a: PolicyId, b: PolicyId) -> usize {
        self.voter_rank.iter().filter(|r| r[a] > r[b]).count()
    }

    /// Number of voters with `a` weakly above `b`.
    pub fn weak_count(&self, a: PolicyId, b: PolicyId) -> usize {
        self.voter_rank.iter().filter(|r| r[a] >= r[b]).count()
    }

    /// Indices of voters with `a` strictly above `b`.
    pub fn strict_supporter_list(&self, a: PolicyId, b: PolicyId) -> Vec<usize> {
        (0..self.voter_rank.len())
            .filter(|&i| self.voter_rank[i][a] > self.voter_rank[i][b])
            .collect()
    }

    /// Voters with `a` strictly above `b`. Only meaningful for at most 63 voters.
    pub fn strict_supporters(&self, a: PolicyId, b: PolicyId) -> Coalition {
        Coalition(
            self.voter_rank
                .iter()
                .enumerate()
                .filter(|(_, r)| r[a] > r[b])
                .fold(0u64, |m, (i, _)| m | 1 << i),
        )
    }

    /// Voters with `a` weakly above `b`. Only meaningful for at most 63 voters.
    pub fn weak_supporters(&self, a: PolicyId, b: PolicyId) -> Coalition {
        Coalition(
            self.voter_rank
                .iter()
                .enumerate()
                .filter(|(_, r)| r[a] >= r[b])
                .fold(0u64, |m, (i, _)| m | 1 << i),
        )
    }

    /// Compares two policies under the majority relation.
    pub fn majority_compare(&self, a: PolicyId, b: PolicyId) -> Result<MajorityComparison> {
        self.check_policy(a)?;
        self.check_policy(b)?;
        let for_a = self.strict_count(a, b) as i64;
        let for_b = self.strict_count(b, a) as i64;
        let relation = match &self.majority_override {
            Some(_) if a == b => MajorityRelation::Neither,
            Some(t) if t.beats(a, b) => MajorityRelation::FirstOver,
            Some(_) => MajorityRelation::SecondOver,
            None => {
                let half = self.voters.len() as i64;
                if 2 * for_a > half {
                    MajorityRelation::FirstOver
                } else if 2 * for_b > half {
                    MajorityRelation::SecondOver
                } else {
                    MajorityRelation::Neither
                }
            }
        };
        let margin = if self.voters.is_empty() {
            match relation {
                MajorityRelation::FirstOver => 1,
                MajorityRelation::SecondOver => -1,
                MajorityRelation::Neither => 0,
            }
        } else {
            for_a - for_b
        };
        Ok(MajorityComparison { relation, margin })
    }

    /// `a` is strictly majority-preferred to `b`.
    pub fn majority_prefers(&self, a: PolicyId, b: PolicyId) -> bool {
        match &self.majority_override {
            Some(t) => a != b && t.beats(a, b),
            None => 2 * self.strict_count(a, b) > self.voters.len(),
        }
    }

    /// `a` is weakly majority-preferred to `b`.
    pub fn majority_weakly_prefers(&self, a: PolicyId, b: PolicyId) -> bool {
        match &self.majority_override {
            Some(t) => a == b || t.beats(a, b),
            None => 2 * self.weak_count(a, b) > self.voters.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MajorityRelation {
    FirstOver,
    SecondOver,
    Neither,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MajorityComparison {
    pub relation: MajorityRelation,
    /// Voters strictly preferring the first policy minus those strictly preferring the second.
    pub margin: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum RuleKind {
    Quota(usize),
    Coalitions(Vec<Coalition>),
}

/// A monotone family of winning coalitions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VotingRule {
    voters: usize,
    kind: RuleKind,
}

impl VotingRule {
    pub fn simple_majority(voters: usize) -> Result<VotingRule> {
        VotingRule::quota(voters, voters / 2 + 1)
    }

    /// Any coalition of at least `q` voters wins. Requires an odd electorate.
    pub fn quota(voters: usize, q: usize) -> Result<VotingRule> {
        if voters == 0 {
            return Err(Error::Validation(
                "quota rules need at least one voter".into(),
            ));
        }
        if voters.is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "quota rules need an odd electorate; got {voters} voters (use an explicit coalition family)"
            )));
        }
        if q == 0 || q > voters {
            return Err(Error::Validation(format!(
                "quota {q} must lie in 1..={voters}"
            )));
        }
        Ok(VotingRule {
            voters,
            kind: RuleKind::Quota(q),
        })
    }

    /// Winning coalitions are all supersets of the given ones.
    pub fn coalitions(voters: usize, sets: &[Vec<usize>]) -> Result<VotingRule> {
        if voters == 0 || voters > Coalition::MAX_VOTERS {
            return Err(Error::Validation(format!(
                "coalition rules need 1..={} voters",
                Coalition::MAX_VOTERS
            )));
        }
        if sets.is_empty() {
            return Err(Error::Validation(
                "a coalition rule needs at least one winning coalition".into(),
            ));
        }
        let mut masks = Vec::with_capacity(sets.len());
        for s in sets {
            if s.is_empty() {
                return Err(Error::Validation(
                    "the empty coalition cannot be winning".into(),
                ));
            }
            if let Some(&bad) = s.iter().find(|&&i| i >= voters) {
                return Err(Error::Validation(format!(
                    "coalition member {bad} out of range for {voters} voters"
                )));
            }
            masks.push(Coalition::from_members(s));
        }
        masks.sort();
        masks.dedup();
        let minimal: Vec<Coalition> = masks
            .iter()
            .copied()
            .filter(|&c| !masks.iter().any(|&d| d != c && d.is_subset_of(c)))
            .collect();
        Ok(VotingRule {
            voters,
            kind: RuleKind::Coalitions(minimal),
        })
    }

    pub fn num_voters(&self) -> usize {
        self.voters
    }

    pub fn quota_value(&self) -> Option<usize> {
        match self.kind {
            RuleKind::Quota(q) => Some(q),
            RuleKind::Coalitions(_) => None,
        }
    }

    pub fn is_simple_majority(&self) -> bool {
        self.kind == RuleKind::Quota(self.voters / 2 + 1)
    }

    pub fn is_winning(&self, c: Coalition) -> bool {
        match &self.kind {
            RuleKind::Quota(q) => c.len() >= *q,
            RuleKind::Coalitions(min) => min.iter().any(|m| m.is_subset_of(c)),
        }
    }

    /// Minimal winning coalitions in ascending bit order. Quota rules expand only up to 63 voters.
    pub fn minimal_coalitions(&self) -> Vec<Coalition> {
        match &self.kind {
            RuleKind::Coalitions(min) => min.clone(),
            RuleKind::Quota(_) if self.voters > Coalition::MAX_VOTERS => Vec::new(),
            RuleKind::Quota(q) => {
                let mut out = Vec::new();
                fn rec(start: usize, n: usize, left: usize, acc: u64, out: &mut Vec<Coalition>) {
                    if left == 0 {
                        out.push(Coalition(acc));
                        return;
                    }
                    for i in start..=n - left {
                        rec(i + 1, n, left - 1, acc | 1 << i, out);
                    }
                }
                rec(0, self.voters, *q, 0, &mut out);
                out.sort();
                out
            }
        }
    }

    /// No single voter belongs to every winning coalition.
    pub fn is_veto_proof(&self) -> bool {
        match &self.kind {
            RuleKind::Quota(q) => *q < self.voters,
            RuleKind::Coalitions(_) => {
                let all = (1u64 << self.voters) - 1;
                (0..self.voters).all(|i| self.is_winning(Coalition(all & !(1 << i))))
            }
        }
    }

    fn wins_with(&self, problem: &Problem, a: PolicyId, b: PolicyId, strict: bool) -> bool {
        match (&self.kind, strict) {
            (RuleKind::Quota(q), true) => problem.strict_count(a, b) >= *q,
            (RuleKind::Quota(q), false) => problem.weak_count(a, b) >= *q,
            (RuleKind::Coalitions(_), true) => self.is_winning(problem.strict_supporters(a, b)),
            (RuleKind::Coalitions(_), false) => self.is_winning(problem.weak_supporters(a, b)),
        }
    }

    /// Checks that the rule can be applied to `problem`.
    pub fn check(&self, problem: &Problem) -> Result<()> {
        if problem.majority_override().is_some() {
            if !self.is_simple_majority() {
                return Err(Error::Unsupported(
                    "a majority override only supports the simple-majority rule".into(),
                ));
            }
            if problem.has_voter_utilities() && problem.num_voters() != self.voters {
                return Err(Error::Validation(format!(
                    "rule is for {} voters but the problem has {}",
                    self.voters,
                    problem.num_voters()
                )));
            }
            return Ok(());
        }
        if problem.num_voters() != self.voters {
            return Err(Error::Validation(format!(
                "rule is for {} voters but the problem has {}",
                self.voters,
                problem.num_voters()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceKind {
    Strict,
    Weak,
    AlmostStrict,
}

/// `y` can replace `x`: some winning coalition strictly prefers `y`.
pub fn accepts_strict(problem: &Problem, rule: &VotingRule, y: PolicyId, x: PolicyId) -> bool {
    match problem.majority_override() {
        Some(t) => y != x && t.beats(y, x),
        None => rule.wins_with(problem, y, x, true),
    }
}

/// `y` can replace `x`: some winning coalition weakly prefers `y`.
pub fn accepts_weak(problem: &Problem, rule: &VotingRule, y: PolicyId, x: PolicyId) -> bool {
    match problem.majority_override() {
        Some(t) => y == x || t.beats(y, x),
        None => rule.wins_with(problem, y, x, false),
    }
}

/// Policies acceptable against default `x`, ascending.
pub fn acceptance_set(
    problem: &Problem,
    rule: &VotingRule,
    x: PolicyId,
    kind: AcceptanceKind,
) -> Result<Vec<PolicyId>> {
    problem.check_policy(x)?;
    rule.check(problem)?;
    Ok(problem
        .policies()
        .filter(|&y| match kind {
            AcceptanceKind::Strict => accepts_strict(problem, rule, y, x),
            AcceptanceKind::Weak => accepts_weak(problem, rule, y, x),
            AcceptanceKind::AlmostStrict => y == x || accepts_strict(problem, rule, y, x),
        })
        .collect())
}

/// Evidence that the setter can improve on a default.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ImprovementCertificate {
    pub base: PolicyId,
    pub witness: PolicyId,
    /// Every voter strictly preferring the witness; this set is winning.
    pub coalition: Vec<usize>,
    #[serde(with = "rational::serde_rational")]
    pub setter_gain: Rational,
}

/// The setter's favorite strict improvement on `x`, if any.
pub fn is_improvable(
    problem: &Problem,
    rule: &VotingRule,
    x: PolicyId,
) -> Result<Option<ImprovementCertificate>> {
    problem.check_policy(x)?;
    rule.check(problem)?;
    let witness = problem.setter_best(problem.policies().filter(|&y| {
        problem.setter_cmp(y, x) == Ordering::Greater && accepts_strict(problem, rule, y, x)
    }));
    Ok(witness.map(|y| ImprovementCertificate {
        base: x,
        witness: y,
        coalition: problem.strict_supporter_list(y, x),
        setter_gain: problem.setter_utility(y) - problem.setter_utility(x),
    }))
}

/// Policies the setter cannot improve upon, ascending.
pub fn unimprovable_set(problem: &Problem, rule: &VotingRule) -> Result<Vec<PolicyId>> {
    use rayon::prelude::*;
    rule.check(problem)?;
    let improvable: Vec<bool> = problem
        .policies()
        .into_par_iter()
        .map(|x| {
            problem.policies().any(|y| {
                problem.setter_cmp(y, x) == Ordering::Greater && accepts_strict(problem, rule, y, x)
            })
        })
        .collect();
    Ok(problem.policies().filter(|&x| !improvable[x]).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ManipulabilityReport {
    pub manipulable: bool,
    pub unimprovable: Vec<PolicyId>,
    pub setter_optima: Vec<PolicyId>,
    /// Unimprovable policies the setter does not rank first.
    pub blocking: Vec<PolicyId>,
}

/// The problem is manipulable when the only unimprovable policies are the setter's optima.
pub fn is_manipulable(problem: &Problem, rule: &VotingRule) -> Result<ManipulabilityReport> {
    let unimprovable = unimprovable_set(problem, rule)?;
    let setter_optima = problem.setter_optima();
    let blocking: Vec<PolicyId> = unimprovable
        .iter()
        .copied()
        .filter(|x| !setter_optima.contains(x))
        .collect();
    Ok(ManipulabilityReport {
        manipulable: unimprovable == setter_optima,
        unimprovable,
        setter_optima,
        blocking,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MarginReport {
    #[serde(with = "rational::serde_rational")]
    pub delta: Rational,
    /// Policies at least `delta` below the setter's optimum.
    pub gamma: Vec<PolicyId>,
    /// Best uniform improvement margin per policy in `gamma`.
    #[serde(serialize_with = "ser_margin_map")]
    pub eta_star: BTreeMap<PolicyId, Rational>,
    #[serde(with = "rational::serde_rational_opt")]
    pub eta_delta: Option<Rational>,
    /// Rounds needed to leave `gamma`; `None` when the margin is not positive.
    pub t_bound: Option<u64>,
    /// Policies in `gamma` without a positive margin.
    pub violations: Vec<PolicyId>,
}

fn ser_margin_map<S: serde::Serializer>(
    m: &BTreeMap<PolicyId, Rational>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_map(m.iter().map(|(k, v)| (k.to_string(), rational::format(v))))
}

/// Utilities over a common denominator, when every numerator fits comfortably in `i128`.
struct Scaled {
    denom: num_bigint::BigInt,
    voters: Vec<Vec<i128>>,
    setter: Vec<i128>,
}

fn scaled(problem: &Problem) -> Option<Scaled> {
    use num_integer::Integer;
    use num_traits::{One, ToPrimitive};
    let all = problem.voters.iter().flatten().chain(problem.setter.iter());
    let denom = all.fold(num_bigint::BigInt::one(), |acc, r| acc.lcm(r.denom()));
    let limit: num_bigint::BigInt = num_bigint::BigInt::one() << 124usize;
    let conv = |r: &Rational| -> Option<i128> {
        let v = r.numer() * (&denom / r.denom());
        if v.magnitude() >= limit.magnitude() {
            None
        } else {
            v.to_i128()
        }
    };
    let voters = problem
        .voters
        .iter()
        .map(|row| row.iter().map(conv).collect::<Option<Vec<_>>>())
        .collect::<Option<Vec<_>>>()?;
    let setter = problem
        .setter
        .iter()
        .map(conv)
        .collect::<Option<Vec<_>>>()?;
    Some(Scaled {
        denom,
        voters,
        setter,
    })
}

/// For each `x`, the best `min(setter gain, winning-coalition gain)` over `y != x`.
fn eta_values<T, S, V>(
    problem: &Problem,
    rule: &VotingRule,
    xs: &[PolicyId],
    setter_gain: S,
    voter_gain: V,
) -> Vec<Option<T>>
where
    T: Ord + Clone + Send,
    S: Fn(PolicyId, PolicyId) -> T + Sync,
    V: Fn(usize, PolicyId, PolicyId) -> T + Sync,
{
    use rayon::prelude::*;
    let n = problem.num_voters();
    let minimal = rule.minimal_coalitions();
    let quota = rule.quota_value();
    xs.par_iter()
        .map(|&x| {
            let mut gains: Vec<T> = Vec::with_capacity(n);
            problem
                .policies()
                .filter(|&y| y != x)
                .map(|y| {
                    gains.clear();
                    gains.extend((0..n).map(|i| voter_gain(i, x, y)));
                    let coalition = match quota {
                        Some(q) => {
                            gains.select_nth_unstable_by(q - 1, |a, b| b.cmp(a));
                            gains[q - 1].clone()
                        }
                        None => minimal
                            .iter()
                            .map(|c| {
                                c.members()
                                    .iter()
                                    .map(|&i| gains[i].clone())
                                    .min()
                                    .expect("non-empty")
                            })
                            .max()
                            .expect("at least one coalition"),
                    };
                    setter_gain(x, y).min(coalition)
                })
                .max()
        })
        .collect()
}

/// Uniform improvement margins over the policies that are at least `delta` from the setter's optimum.
pub fn uniform_margin(
    problem: &Problem,
    rule: &VotingRule,
    delta: &Rational,
) -> Result<MarginReport> {
    problem.require_utilities()?;
    rule.check(problem)?;
    if !delta.is_positive() {
        return Err(Error::Validation("delta must be positive".into()));
    }
    let top = problem.setter_max().clone();
    let range = &top - problem.setter_min();
    let gamma: Vec<PolicyId> = problem
        .policies()
        .filter(|&x| top >= (problem.setter_utility(x) + delta))
        .collect();
    let values: Vec<Option<Rational>> = match scaled(problem) {
        Some(sc) => eta_values(
            problem,
            rule,
            &gamma,
            |x, y| sc.setter[y] - sc.setter[x],
            |i, x, y| sc.voters[i][y] - sc.voters[i][x],
        )
        .into_iter()
        .map(|v| v.map(|k| Rational::new(num_bigint::BigInt::from(k), sc.denom.clone())))
        .collect(),
        None => eta_values(
            problem,
            rule,
            &gamma,
            |x, y| problem.setter_utility(y) - problem.setter_utility(x),
            |i, x, y| problem.voter_utility(i, y) - problem.voter_utility(i, x),
        ),
    };
    let eta_star: BTreeMap<PolicyId, Rational> = gamma
        .iter()
        .zip(values)
        .map(|(&x, v)| (x, v.unwrap_or_else(Rational::zero)))
        .collect();
    let violations: Vec<PolicyId> = eta_star
        .iter()
        .filter(|(_, e)| !e.is_positive())
        .map(|(&x, _)| x)
        .collect();
    let eta_delta = eta_star.values().min().cloned();
    let t_bound = match &eta_delta {
        None => Some(0),
        Some(e) if e.is_positive() => Some(rational::ceil_nonneg(&(range / e))),
        Some(_) => None,
    };
    Ok(MarginReport {
        delta: delta.clone(),
        gamma,
        eta_star,
        eta_delta,
        t_bound,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::rational::{frac, int};
    use proptest::prelude::*;

    fn ids(p: &Problem, labels: &[&str]) -> Vec<PolicyId> {
        labels
            .iter()
            .map(|l| p.policy_by_label(l).unwrap())
            .collect()
    }

    #[test]
    fn ratchet_majority_relation() {
        let p = fixtures::ratchet();
        let [w, x, y, z] = [0, 1, 2, 3];
        for (a, b) in [(z, w), (w, x), (x, y), (y, z), (y, w), (z, x)] {
            assert!(
                p.majority_prefers(a, b),
                "{} over {}",
                p.label(a),
                p.label(b)
            );
            assert!(!p.majority_prefers(b, a));
        }
        let cmp = p.majority_compare(y, w).unwrap();
        assert_eq!(cmp.relation, MajorityRelation::FirstOver);
        assert_eq!(p.strict_supporters(y, w).members(), vec![1, 2]);
        assert_eq!(
            p.majority_compare(w, w).unwrap().relation,
            MajorityRelation::Neither
        );
    }

    #[test]
    fn out_of_range_policy_rejected() {
        let p = fixtures::ratchet();
        assert!(matches!(
            p.majority_compare(0, 9),
            Err(Error::PolicyOutOfRange { .. })
        ));
    }

    #[test]
    fn ratchet_improvability() {
        let p = fixtures::ratchet();
        let r = VotingRule::simple_majority(3).unwrap();
        let cert = is_improvable(&p, &r, 3).unwrap().unwrap();
        assert_eq!(cert.witness, 2);
        assert_eq!(cert.coalition, vec![1, 2]);
        assert!(is_improvable(&p, &r, 0).unwrap().is_none());
        assert_eq!(unimprovable_set(&p, &r).unwrap(), ids(&p, &["w"]));
        let rep = is_manipulable(&p, &r).unwrap();
        assert!(rep.manipulable);
        assert!(rep.blocking.is_empty());
    }

    #[test]
    fn stuck_not_manipulable() {
        let p = fixtures::stuck();
        let r = VotingRule::simple_majority(3).unwrap();
        let rep = is_manipulable(&p, &r).unwrap();
        assert!(!rep.manipulable);
        assert_eq!(rep.unimprovable, ids(&p, &["w", "x"]));
        assert_eq!(rep.blocking, ids(&p, &["x"]));
    }

    #[test]
    fn single_policy_problem_is_vacuously_manipulable() {
        let p = Problem::new(vec!["a".into()], vec![vec![int(0)]], vec![int(1)]).unwrap();
        let r = VotingRule::simple_majority(1).unwrap();
        assert!(is_manipulable(&p, &r).unwrap().manipulable);
    }

    #[test]
    fn ratchet_acceptance_sets() {
        let p = fixtures::ratchet();
        let r = VotingRule::simple_majority(3).unwrap();
        assert_eq!(
            acceptance_set(&p, &r, 1, AcceptanceKind::Strict).unwrap(),
            vec![0, 3]
        );
        assert_eq!(
            acceptance_set(&p, &r, 1, AcceptanceKind::Weak).unwrap(),
            vec![0, 1, 3]
        );
        assert_eq!(
            acceptance_set(&p, &r, 1, AcceptanceKind::AlmostStrict).unwrap(),
            vec![0, 1, 3]
        );
    }

    #[test]
    fn rule_validation() {
        assert!(VotingRule::simple_majority(4).is_err());
        assert!(VotingRule::quota(3, 0).is_err());
        assert!(VotingRule::quota(3, 4).is_err());
        assert!(VotingRule::coalitions(4, &[]).is_err());
        assert!(VotingRule::coalitions(4, &[vec![0, 7]]).is_err());
        let r = VotingRule::coalitions(4, &[vec![0, 1], vec![0, 1, 2], vec![2, 3]]).unwrap();
        assert_eq!(
            r.minimal_coalitions(),
            vec![
                Coalition::from_members(&[0, 1]),
                Coalition::from_members(&[2, 3])
            ]
        );
        assert!(r.is_winning(Coalition::from_members(&[0, 1, 3])));
        assert!(!r.is_winning(Coalition::from_members(&[0, 2])));
        assert!(r.is_veto_proof());
        assert!(!VotingRule::coalitions(4, &[vec![0, 1], vec![0, 2]])
            .unwrap()
            .is_veto_proof());
        assert!(VotingRule::simple_majority(5).unwrap().is_veto_proof());
        assert!(!VotingRule::quota(3, 3).unwrap().is_veto_proof());
        assert_eq!(
            VotingRule::quota(5, 3).unwrap().minimal_coalitions().len(),
            10
        );
    }

    #[test]
    fn override_requires_simple_majority() {
        let p = fixtures::stuck();
        let r = VotingRule::quota(3, 3).unwrap();
        assert!(matches!(
            is_improvable(&p, &r, 0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn tournament_validation() {
        assert!(Tournament::new(3, &[(0, 1), (1, 2)]).is_err());
        assert!(Tournament::new(2, &[(0, 1), (1, 0)]).is_err());
        assert!(Tournament::new(2, &[(0, 0)]).is_err());
        assert!(Tournament::new(3, &[(0, 1), (1, 2), (2, 0)]).is_ok());
    }

    #[test]
    fn ratchet_uniform_margin() {
        let p = fixtures::ratchet();
        let r = VotingRule::simple_majority(3).unwrap();
        let rep = uniform_margin(&p, &r, &frac(1, 2)).unwrap();
        assert_eq!(rep.eta_star[&3], int(1));
        assert_eq!(rep.gamma, vec![1, 2, 3]);
        assert!(rep.violations.is_empty());
        let t = rep.t_bound.unwrap();
        assert_eq!(t, 3);
    }

    #[test]
    fn non_manipulable_margin_reports_violation() {
        let p = fixtures::stuck_realized();
        let r = VotingRule::simple_majority(p.num_voters()).unwrap();
        let rep = uniform_margin(&p, &r, &frac(1, 2)).unwrap();
        assert!(rep.violations.contains(&p.policy_by_label("x").unwrap()));
        assert!(rep.t_bound.is_none());
    }

    #[test]
    fn margin_rejects_override_only() {
        let p = fixtures::stuck();
        let r = VotingRule::simple_majority(3).unwrap();
        assert_eq!(
            uniform_margin(&p, &r, &int(1)).unwrap_err(),
            Error::OverrideOnly
        );
    }

    /// Independent check of `eta*` by enumerating every winning coalition.
    fn brute_eta(p: &Problem, r: &VotingRule, x: PolicyId) -> Rational {
        let n = p.num_voters();
        let mut best: Option<Rational> = None;
        for y in p.policies().filter(|&y| y != x) {
            for mask in 1u64..(1 << n) {
                if !r.is_winning(Coalition(mask)) {
                    continue;
                }
                let mut m = p.setter_utility(y) - p.setter_utility(x);
                for i in Coalition(mask).members() {
                    m = m.min(p.voter_utility(i, y) - p.voter_utility(i, x));
                }
                if best.as_ref().is_none_or(|b| &m > b) {
                    best = Some(m);
                }
            }
        }
        best.unwrap()
    }

    fn arb_problem() -> impl Strategy<Value = Problem> {
        (2usize..6, prop_oneof![Just(1usize), Just(3), Just(5)]).prop_flat_map(|(m, n)| {
            (
                proptest::collection::vec(proptest::collection::vec(-5i64..5, m), n),
                proptest::collection::vec(-5i64..5, m),
            )
                .prop_map(move |(v, s)| {
                    Problem::new(
                        (0..m).map(|i| format!("p{i}")).collect(),
                        v.into_iter()
                            .map(|r| r.into_iter().map(int).collect())
                            .collect(),
                        s.into_iter().map(int).collect(),
                    )
                    .unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn strict_inside_weak_and_almost_strict(p in arb_problem()) {
            let r = VotingRule::simple_majority(p.num_voters()).unwrap();
            for x in p.policies() {
                let s = acceptance_set(&p, &r, x, AcceptanceKind::Strict).unwrap();
                let w = acceptance_set(&p, &r, x, AcceptanceKind::Weak).unwrap();
                let a = acceptance_set(&p, &r, x, AcceptanceKind::AlmostStrict).unwrap();
                prop_assert!(!s.contains(&x));
                prop_assert!(w.contains(&x));
                prop_assert!(s.iter().all(|y| w.contains(y) && a.contains(y)));
                prop_assert!(a.iter().all(|y| w.contains(y)));
            }
        }

        #[test]
        fn setter_optima_are_unimprovable(p in arb_problem()) {
            let r = VotingRule::simple_majority(p.num_voters()).unwrap();
            let e = unimprovable_set(&p, &r).unwrap();
            for x in p.setter_optima() {
                prop_assert!(e.contains(&x));
            }
        }

        #[test]
        fn certificates_are_valid(p in arb_problem()) {
            let r = VotingRule::simple_majority(p.num_voters()).unwrap();
            for x in p.policies() {
                if let Some(c) = is_improvable(&p, &r, x).unwrap() {
                    prop_assert!(p.setter_cmp(c.witness, x) == Ordering::Greater);
                    prop_assert!(r.is_winning(Coalition::from_members(&c.coalition)));
                    for i in c.coalition {
                        prop_assert!(p.voter_cmp(i, c.witness, x) == Ordering::Greater);
                    }
                }
            }
        }

        #[test]
        fn eta_star_matches_enumeration(p in arb_problem(), q in 1usize..4) {
            let n = p.num_voters();
            let r = VotingRule::quota(n, q.min(n)).unwrap();
            let rep = uniform_margin(&p, &r, &frac(1, 2)).unwrap();
            for (&x, eta) in &rep.eta_star {
                prop_assert_eq!(eta, &brute_eta(&p, &r, x));
            }
        }

        #[test]
        fn majority_is_asymmetric(p in arb_problem()) {
            for a in p.policies() {
                for b in p.policies() {
                    prop_assert!(!(p.majority_prefers(a, b) && p.majority_prefers(b, a)));
                }
            }
        }
    }
}
