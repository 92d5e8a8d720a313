use std::cmp::Ordering;
use std::collections::HashSet;

use num_bigint::BigInt;
use num_traits::Signed;
use serde::{Deserialize, Serialize};

use crate::ccp::{PolicyId, Problem};
use crate::engine::Allocation;
use crate::error::{Error, Result};
use crate::rational::{self, Rational};

/// Refuse to materialize distribution problems larger than this.
pub const MAX_DISTRIBUTION_POLICIES: u128 = 250_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Project {
    #[serde(with = "rational::serde_rational")]
    pub benefit: Rational,
    #[serde(with = "rational::serde_rational")]
    pub cost: Rational,
}

#[derive(Clone, Debug)]
pub enum DistributionKind {
    /// Every split of one unit among voters and setter in multiples of `1/denominator`.
    Dtd { voters: usize, denominator: u64 },
    /// Each project is skipped or funded with grid splits of its benefit and its cost.
    Pork {
        voters: usize,
        projects: Vec<Project>,
        denominator: u64,
    },
    /// For each base policy, every grid split of its total utility.
    Transfers {
        base: Box<Problem>,
        denominator: u64,
    },
}

fn binomial(n: u64, k: u64) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All vectors of `parts` non-negative integers summing to `total`, lexicographically descending.
pub fn simplex_compositions(parts: usize, total: u64) -> Vec<Vec<u64>> {
    fn rec(parts: usize, left: u64, acc: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if parts == 1 {
            acc.push(left);
            out.push(acc.clone());
            acc.pop();
            return;
        }
        for k in (0..=left).rev() {
            acc.push(k);
            rec(parts - 1, left - k, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    rec(parts, total, &mut Vec::with_capacity(parts), &mut out);
    out
}

fn check_size(count: u128) -> Result<()> {
    if count > MAX_DISTRIBUTION_POLICIES {
        Err(Error::Budget {
            what: "distribution policies".into(),
            needed: count,
            limit: MAX_DISTRIBUTION_POLICIES,
        })
    } else {
        Ok(())
    }
}

fn problem_from_columns(labels: Vec<String>, players: Vec<Vec<Rational>>) -> Result<Problem> {
    let mut voters = players;
    let setter = voters.pop().expect("setter column");
    Problem::new(labels, voters, setter)
}

/// The divide-the-dollar problem together with the allocation behind each policy.
pub fn dtd_problem(voters: usize, denominator: u64) -> Result<(Problem, Vec<Allocation>)> {
    if voters == 0 || denominator == 0 {
        return Err(Error::Validation(
            "divide-the-dollar needs voters and a positive denominator".into(),
        ));
    }
    check_size(binomial(denominator + voters as u64, voters as u64))?;
    let allocations: Vec<Allocation> = simplex_compositions(voters + 1, denominator)
        .into_iter()
        .map(|shares| Allocation {
            shares,
            denominator,
        })
        .collect();
    let players = (0..=voters)
        .map(|i| {
            allocations
                .iter()
                .map(|a| rational::frac(a.shares[i] as i64, denominator as i64))
                .collect()
        })
        .collect();
    let labels = allocations
        .iter()
        .map(|a| {
            a.shares
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(":")
        })
        .collect();
    Ok((problem_from_columns(labels, players)?, allocations))
}

/// Builds a distribution problem; players are the voters followed by the setter.
pub fn gen_distribution(kind: &DistributionKind) -> Result<Problem> {
    match kind {
        DistributionKind::Dtd {
            voters,
            denominator,
        } => Ok(dtd_problem(*voters, *denominator)?.0),
        DistributionKind::Pork {
            voters,
            projects,
            denominator,
        } => pork(*voters, projects, *denominator),
        DistributionKind::Transfers { base, denominator } => transfers(base, *denominator),
    }
}

fn pork(voters: usize, projects: &[Project], m: u64) -> Result<Problem> {
    if voters == 0 || m == 0 || projects.is_empty() {
        return Err(Error::Validation(
            "pork problems need voters, projects and a positive denominator".into(),
        ));
    }
    if projects
        .iter()
        .any(|p| p.benefit.is_negative() || p.cost.is_negative())
    {
        return Err(Error::Validation(
            "project benefits and costs must be non-negative".into(),
        ));
    }
    let splits = simplex_compositions(voters + 1, m);
    let per_project = 1 + (splits.len() as u128).pow(2);
    let count = (0..projects.len())
        .try_fold(1u128, |acc, _| acc.checked_mul(per_project))
        .unwrap_or(u128::MAX);
    check_size(count)?;
    let denom = Rational::from_integer(BigInt::from(m));
    // Options per project: None (skip) or (benefit split, cost split).
    let options: Vec<Option<(usize, usize)>> = std::iter::once(None)
        .chain((0..splits.len()).flat_map(|b| (0..splits.len()).map(move |c| Some((b, c)))))
        .collect();
    let mut labels = Vec::new();
    let mut players: Vec<Vec<Rational>> = vec![Vec::new(); voters + 1];
    let mut choice = vec![0usize; projects.len()];
    loop {
        let mut u = vec![Rational::from_integer(BigInt::from(0)); voters + 1];
        let mut parts = Vec::new();
        for (k, &o) in choice.iter().enumerate() {
            match options[o] {
                None => parts.push("-".to_string()),
                Some((b, c)) => {
                    for (i, ui) in u.iter_mut().enumerate() {
                        let gain = &projects[k].benefit
                            * Rational::from_integer(BigInt::from(splits[b][i]))
                            / &denom;
                        let loss = &projects[k].cost
                            * Rational::from_integer(BigInt::from(splits[c][i]))
                            / &denom;
                        *ui += gain - loss;
                    }
                    parts.push(format!("b{b}c{c}"));
                }
            }
        }
        labels.push(parts.join("|"));
        for (i, ui) in u.into_iter().enumerate() {
            players[i].push(ui);
        }
        let mut k = 0;
        while k < choice.len() {
            choice[k] += 1;
            if choice[k] < options.len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == choice.len() {
            break;
        }
    }
    problem_from_columns(labels, players)
}

fn transfers(base: &Problem, m: u64) -> Result<Problem> {
    base.require_utilities()?;
    if m == 0 {
        return Err(Error::Validation("denominator must be positive".into()));
    }
    let n = base.num_voters();
    let splits = simplex_compositions(n + 1, m);
    check_size(splits.len() as u128 * base.num_policies() as u128)?;
    let denom = Rational::from_integer(BigInt::from(m));
    let mut seen: HashSet<Vec<Rational>> = HashSet::new();
    let mut labels = Vec::new();
    let mut players: Vec<Vec<Rational>> = vec![Vec::new(); n + 1];
    for x in base.policies() {
        let total: Rational = (0..n)
            .map(|i| base.voter_utility(i, x).clone())
            .sum::<Rational>()
            + base.setter_utility(x);
        if total.is_negative() {
            return Err(Error::Validation(format!(
                "policy {} has negative total utility",
                base.label(x)
            )));
        }
        for s in &splits {
            let u: Vec<Rational> = s
                .iter()
                .map(|&k| &total * Rational::from_integer(BigInt::from(k)) / &denom)
                .collect();
            if seen.insert(u.clone()) {
                labels.push(format!(
                    "{}@{}",
                    base.label(x),
                    s.iter().map(u64::to_string).collect::<Vec<_>>().join(":")
                ));
                for (i, ui) in u.into_iter().enumerate() {
                    players[i].push(ui);
                }
            }
        }
    }
    problem_from_columns(labels, players)
}

/// A failed axiom instance: `player` counts voters first and the setter last.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AxiomViolation {
    pub policy: PolicyId,
    pub player: usize,
    /// The existential clause that found no witness.
    pub failing: &'static str,
}

const NO_OTHER_ABOVE_MIN_OR_PARETO: &str =
    "no other player above minimum and no strict Pareto improvement";
const NO_TRANSFER: &str = "no policy strictly improves every other player";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AxiomAudit {
    pub scarcity: Vec<AxiomViolation>,
    pub transferability: Vec<AxiomViolation>,
    /// Number of (policy, player) pairs examined.
    pub pairs: usize,
}

impl AxiomAudit {
    pub fn passes(&self) -> bool {
        self.scarcity.is_empty() && self.transferability.is_empty()
    }
}

/// Checks the scarcity and transferability axioms exhaustively.
pub fn audit_dp_axioms(problem: &Problem) -> Result<AxiomAudit> {
    problem.require_utilities()?;
    let n = problem.num_voters();
    let players = n + 1;
    let cmp = |k: usize, a: PolicyId, b: PolicyId| {
        if k == n {
            problem.setter_cmp(a, b)
        } else {
            problem.voter_cmp(k, a, b)
        }
    };
    let u = |k: usize, x: PolicyId| {
        if k == n {
            problem.setter_utility(x)
        } else {
            problem.voter_utility(k, x)
        }
    };
    let max: Vec<&Rational> = (0..players)
        .map(|k| {
            problem
                .policies()
                .map(|x| u(k, x))
                .max()
                .expect("non-empty")
        })
        .collect();
    let min: Vec<&Rational> = (0..players)
        .map(|k| {
            problem
                .policies()
                .map(|x| u(k, x))
                .min()
                .expect("non-empty")
        })
        .collect();
    let mut scarcity = Vec::new();
    let mut transferability = Vec::new();
    for x in problem.policies() {
        let pareto_improvable = problem
            .policies()
            .any(|y| (0..players).all(|k| cmp(k, y, x) == Ordering::Greater));
        for i in 0..players {
            if u(i, x) < max[i] {
                let someone_above_min = (0..players).any(|j| j != i && u(j, x) > min[j]);
                if !someone_above_min && !pareto_improvable {
                    scarcity.push(AxiomViolation {
                        policy: x,
                        player: i,
                        failing: NO_OTHER_ABOVE_MIN_OR_PARETO,
                    });
                }
            }
            if u(i, x) > min[i] {
                let transferable = problem
                    .policies()
                    .any(|y| (0..players).all(|j| j == i || cmp(j, y, x) == Ordering::Greater));
                if !transferable {
                    transferability.push(AxiomViolation {
                        policy: x,
                        player: i,
                        failing: NO_TRANSFER,
                    });
                }
            }
        }
    }
    Ok(AxiomAudit {
        scarcity,
        transferability,
        pairs: problem.num_policies() * players,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{frac, int};

    #[test]
    fn dtd_sizes_match_binomials() {
        for (n, m) in [(3usize, 4u64), (3, 6), (5, 2), (1, 7)] {
            let (p, a) = dtd_problem(n, m).unwrap();
            assert_eq!(p.num_policies() as u128, binomial(m + n as u64, n as u64));
            assert_eq!(a.len(), p.num_policies());
            assert!(a.iter().all(|x| x.shares.iter().sum::<u64>() == m));
        }
        assert_eq!(dtd_problem(3, 4).unwrap().0.num_policies(), 35);
    }

    #[test]
    fn dtd_size_guard() {
        assert!(matches!(dtd_problem(9, 400), Err(Error::Budget { .. })));
    }

    #[test]
    fn single_project_pork() {
        let p = gen_distribution(&DistributionKind::Pork {
            voters: 3,
            projects: vec![Project {
                benefit: int(1),
                cost: int(0),
            }],
            denominator: 1,
        })
        .unwrap();
        assert_eq!(p.num_policies(), 1 + 16);
        let skip = p.policy_by_label("-").unwrap();
        let dominated = p.policies().any(|y| {
            (0..3).all(|i| p.voter_cmp(i, y, skip) != Ordering::Less)
                && p.setter_cmp(y, skip) != Ordering::Less
                && ((0..3).any(|i| p.voter_cmp(i, y, skip) == Ordering::Greater)
                    || p.setter_cmp(y, skip) == Ordering::Greater)
        });
        assert!(dominated);
    }

    #[test]
    fn transfers_count() {
        let base = Problem::new(
            vec!["a".into(), "b".into()],
            vec![vec![int(1), int(1)]],
            vec![int(0), int(1)],
        )
        .unwrap();
        let p = gen_distribution(&DistributionKind::Transfers {
            base: Box::new(base),
            denominator: 2,
        })
        .unwrap();
        assert_eq!(p.num_policies(), 6);
        assert!(p.policies().any(|x| p.setter_utility(x) == &frac(1, 2)));
    }

    #[test]
    fn coarse_dtd_fails_transferability() {
        let (p, a) = dtd_problem(3, 2).unwrap();
        let audit = audit_dp_axioms(&p).unwrap();
        let x = a.iter().position(|a| a.shares == vec![1, 1, 0, 0]).unwrap();
        assert!(audit.transferability.contains(&AxiomViolation {
            policy: x,
            player: 0,
            failing: NO_TRANSFER
        }));
    }

    /// On the grid a positive share can be transferred only if it covers one unit for each other player.
    #[test]
    fn dtd_transferability_violations_match_share_rule() {
        for (m, expected) in [(2u64, 16usize), (4, 64), (8, 256)] {
            let (p, allocs) = dtd_problem(3, m).unwrap();
            let a = audit_dp_axioms(&p).unwrap();
            let predicted: Vec<(usize, usize)> = allocs
                .iter()
                .enumerate()
                .flat_map(|(x, al)| {
                    (0..4)
                        .filter(move |&i| al.shares[i] > 0 && al.shares[i] < 3)
                        .map(move |i| (x, i))
                })
                .collect();
            let got: Vec<(usize, usize)> = a
                .transferability
                .iter()
                .map(|v| (v.policy, v.player))
                .collect();
            assert_eq!(got, predicted);
            assert_eq!(got.len(), expected);
        }
    }

    #[test]
    fn single_policy_scarcity_vacuous() {
        let p = Problem::new(vec!["a".into()], vec![vec![int(1)]], vec![int(2)]).unwrap();
        assert!(audit_dp_axioms(&p).unwrap().scarcity.is_empty());
    }

    #[test]
    fn dtd_satisfies_scarcity() {
        let (p, _) = dtd_problem(3, 4).unwrap();
        assert!(audit_dp_axioms(&p).unwrap().scarcity.is_empty());
    }
}
