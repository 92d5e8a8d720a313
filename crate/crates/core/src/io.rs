//! JSON formats for problems, voting rules and protocols.
//!
//! Utilities are written as strings (`"p/q"`, integers or finite decimals);
//! JSON numbers are accepted on input and normalized to exact rationals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ccp::{PolicyId, Problem, Tournament, VotingRule};
use crate::engine::Proposal;
use crate::error::{Error, Result};
use crate::oracle::Protocol;
use crate::rational::{self, Rational};

#[derive(Debug, Serialize, Deserialize)]
struct ProblemFile {
    policies: Vec<String>,
    #[serde(default)]
    voters: Vec<Vec<Value>>,
    agenda_setter: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    majority_override: Option<Vec<(String, String)>>,
    #[serde(default)]
    gfa: bool,
}

fn value_to_rational(v: &Value, location: &str) -> Result<Rational> {
    let text = match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        other => {
            return Err(Error::Parse {
                location: location.into(),
                message: format!("expected a rational, found {other}"),
            })
        }
    };
    rational::parse(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            location: location.into(),
            message,
        },
        other => other,
    })
}

/// Reads a problem from its JSON text.
pub fn parse_problem(text: &str) -> Result<Problem> {
    let file: ProblemFile = serde_json::from_str(text)?;
    let voters = file
        .voters
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, v)| value_to_rational(v, &format!("voters[{i}][{j}]")))
                .collect()
        })
        .collect::<Result<Vec<Vec<Rational>>>>()?;
    let setter = file
        .agenda_setter
        .iter()
        .enumerate()
        .map(|(j, v)| value_to_rational(v, &format!("agenda_setter[{j}]")))
        .collect::<Result<Vec<_>>>()?;
    let problem = match &file.majority_override {
        None => Problem::new(file.policies.clone(), voters, setter)?,
        Some(edges) => {
            let index = |l: &str| {
                file.policies.iter().position(|p| p == l).ok_or_else(|| {
                    Error::Validation(format!("override mentions unknown policy {l:?}"))
                })
            };
            let pairs = edges
                .iter()
                .map(|(a, b)| Ok((index(a)?, index(b)?)))
                .collect::<Result<Vec<_>>>()?;
            let t = Tournament::new(file.policies.len(), &pairs)?;
            Problem::with_override(file.policies.clone(), voters, setter, t)?
        }
    };
    if file.gfa && !problem.is_generic() {
        return Err(Error::Validation(
            "file asserts generic preferences but utilities contain ties or the electorate is even"
                .into(),
        ));
    }
    Ok(problem)
}

pub fn read_problem(path: &std::path::Path) -> Result<Problem> {
    parse_problem(&std::fs::read_to_string(path)?)
}

/// The canonical JSON form of a problem.
pub fn problem_to_json(problem: &Problem) -> Value {
    let labels = problem.labels();
    let file = ProblemFile {
        policies: labels.to_vec(),
        voters: problem
            .voter_utilities()
            .iter()
            .map(|row| {
                row.iter()
                    .map(|r| Value::String(rational::format(r)))
                    .collect()
            })
            .collect(),
        agenda_setter: problem
            .setter_utilities()
            .iter()
            .map(|r| Value::String(rational::format(r)))
            .collect(),
        majority_override: problem.majority_override().map(|t| {
            t.edges()
                .into_iter()
                .map(|(a, b)| (labels[a].clone(), labels[b].clone()))
                .collect()
        }),
        gfa: problem.is_generic(),
    };
    serde_json::to_value(file).expect("problem files serialize")
}

#[derive(Debug, Deserialize)]
struct RuleFile {
    voters: usize,
    #[serde(default)]
    quota: Option<usize>,
    #[serde(default)]
    coalitions: Option<Vec<Vec<usize>>>,
}

/// Parses `majority`, `quota:K/N`, or a JSON rule file path.
///
/// Rule files look like `{"voters": 4, "coalitions": [[0, 1], [2, 3]]}` or
/// `{"voters": 5, "quota": 3}`; voters are numbered from zero.
pub fn parse_rule(spec: &str, problem: &Problem) -> Result<VotingRule> {
    let spec = spec.trim();
    if spec == "majority" {
        return VotingRule::simple_majority(problem.num_voters().max(1));
    }
    if let Some(rest) = spec.strip_prefix("quota:") {
        let bad = || Error::Parse {
            location: format!("rule {spec:?}"),
            message: "expected quota:K/N".into(),
        };
        let (k, n) = rest.split_once('/').ok_or_else(bad)?;
        let k: usize = k.trim().parse().map_err(|_| bad())?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        return VotingRule::quota(n, k);
    }
    let text = std::fs::read_to_string(spec).map_err(|e| {
        Error::Validation(format!(
            "rule {spec:?} is neither majority, quota:K/N nor a readable file: {e}"
        ))
    })?;
    parse_rule_json(&text)
}

pub fn parse_rule_json(text: &str) -> Result<VotingRule> {
    let f: RuleFile = serde_json::from_str(text)?;
    match (f.quota, f.coalitions) {
        (Some(q), None) => VotingRule::quota(f.voters, q),
        (None, Some(c)) => VotingRule::coalitions(f.voters, &c),
        _ => Err(Error::Validation(
            "a rule file needs exactly one of quota or coalitions".into(),
        )),
    }
}

#[derive(Debug, Deserialize)]
struct ProposalEntry(String, bool);

#[derive(Debug, Deserialize)]
struct TableEntry {
    round: usize,
    default: String,
    proposals: Vec<ProposalEntry>,
}

#[derive(Debug, Deserialize)]
struct ProtocolFile {
    #[serde(default)]
    feasible: Vec<ProposalEntry>,
    #[serde(default)]
    table: Vec<TableEntry>,
}

/// Parses `amendment`, `successive`, `open_rule`, or a JSON file describing a custom protocol.
///
/// Custom files list `[label, adjourn]` pairs: `{"feasible": [["w", true], ["x", false]],
/// "table": [{"round": 1, "default": "z", "proposals": [["y", false]]}]}`.
pub fn parse_protocol(spec: &str, problem: &Problem) -> Result<Protocol> {
    match spec.trim() {
        "amendment" => return Ok(Protocol::Amendment),
        "successive" => return Ok(Protocol::Successive),
        "open_rule" => return Ok(Protocol::OpenRule),
        _ => {}
    }
    let text = std::fs::read_to_string(spec).map_err(|e| {
        Error::Validation(format!(
            "protocol {spec:?} is not a preset nor a readable file: {e}"
        ))
    })?;
    parse_protocol_json(&text, problem)
}

pub fn parse_protocol_json(text: &str, problem: &Problem) -> Result<Protocol> {
    let f: ProtocolFile = serde_json::from_str(text)?;
    let conv = |ps: &[ProposalEntry]| -> Result<Vec<Proposal>> {
        ps.iter()
            .map(|ProposalEntry(l, a)| {
                Ok(Proposal {
                    policy: problem.policy_by_label(l)?,
                    adjourn: *a,
                })
            })
            .collect()
    };
    let mut table: BTreeMap<(usize, PolicyId), Vec<Proposal>> = BTreeMap::new();
    for e in &f.table {
        table.insert(
            (e.round, problem.policy_by_label(&e.default)?),
            conv(&e.proposals)?,
        );
    }
    Ok(Protocol::Custom {
        table,
        fallback: conv(&f.feasible)?,
    })
}
