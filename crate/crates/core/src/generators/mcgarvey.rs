use crate::ccp::{PolicyId, Problem, Tournament};
use crate::error::{Error, Result};
use crate::rational::{int, Rational};

/// Largest tournament accepted by [`mcgarvey_realize`].
pub const MCGARVEY_MAX_POLICIES: usize = 12;

fn utilities_from_order(order: &[PolicyId]) -> Vec<Rational> {
    let m = order.len();
    let mut u = vec![int(0); m];
    for (pos, &p) in order.iter().enumerate() {
        u[p] = int((m - pos) as i64);
    }
    u
}

/// Builds a strict voter profile whose majority relation is `tournament`.
///
/// Each edge `a -> b` contributes two voters who agree only on `a` over `b`;
/// one extra voter ranks policies by index so the electorate is odd.
pub fn mcgarvey_realize(
    tournament: &Tournament,
    labels: &[String],
    setter: &[Rational],
) -> Result<Problem> {
    let m = tournament.size();
    if m > MCGARVEY_MAX_POLICIES {
        return Err(Error::Validation(format!(
            "tournament realization is limited to {MCGARVEY_MAX_POLICIES} policies, got {m}"
        )));
    }
    if labels.len() != m || setter.len() != m {
        return Err(Error::Validation(
            "labels and setter utilities must match the tournament size".into(),
        ));
    }
    let mut voters = Vec::new();
    for (a, b) in tournament.edges() {
        let rest: Vec<PolicyId> = (0..m).filter(|&p| p != a && p != b).collect();
        let mut first = vec![a, b];
        first.extend(rest.iter().copied());
        let mut second: Vec<PolicyId> = rest.iter().rev().copied().collect();
        second.extend([a, b]);
        voters.push(utilities_from_order(&first));
        voters.push(utilities_from_order(&second));
    }
    voters.push(utilities_from_order(&(0..m).collect::<Vec<_>>()));
    Problem::new(labels.to_vec(), voters, setter.to_vec())
}
