use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agenda_core::ccp::{is_manipulable, unimprovable_set, Tournament};
use agenda_core::engine::{phi_map, phi_or, simple_equilibrium_profile, trajectory_from_map};
use agenda_core::generators::{
    audit_dp_axioms, build_grid, check_noncoplanarity, gen_distribution, gen_spatial,
    mcgarvey_realize, spatial_witness, DistributionKind, GridSpace, Project, SpatialProfile,
};
use agenda_core::horizons::{horizon_classify, reachability, ReachMode};
use agenda_core::io::{parse_protocol, parse_rule, problem_to_json, read_problem};
use agenda_core::lab::{run_suite, ExperimentDescriptor};
use agenda_core::oracle::{
    protocol_equivalence, solve_spe, verify_profile, GameSpec, Protocol, DEFAULT_ORACLE_BUDGET,
};
use agenda_core::rational::{self, Rational};
use agenda_core::{Error, PolicyId, Problem, VotingRule};
use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "agenda",
    version,
    about = "Agenda-setting analysis, game solving and experiment suites"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ProblemArgs {
    /// Problem file (JSON).
    #[arg(long)]
    problem: PathBuf,
    /// `majority`, `quota:K/N`, or a rule file.
    #[arg(long, default_value = "majority")]
    rule: String,
}

impl ProblemArgs {
    fn load(&self) -> anyhow::Result<(Problem, VotingRule)> {
        let p = read_problem(&self.problem)
            .with_context(|| format!("reading {}", self.problem.display()))?;
        let rule = parse_rule(&self.rule, &p)?;
        Ok((p, rule))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Unimprovable set, manipulability and one-round improvement correspondences.
    Analyze {
        #[command(flatten)]
        input: ProblemArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trajectory of favorite improvements.
    Solve {
        #[command(flatten)]
        input: ProblemArgs,
        #[arg(long)]
        rounds: usize,
        /// Starting default label; every policy when omitted.
        #[arg(long = "default")]
        start: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Backward-induction game solver.
    Oracle {
        #[command(flatten)]
        input: ProblemArgs,
        #[arg(long)]
        rounds: usize,
        #[arg(long = "default")]
        start: String,
        /// `amendment`, `successive`, `open_rule`, or a protocol file.
        #[arg(long, default_value = "amendment")]
        protocol: String,
        #[arg(long, value_enum, default_value_t = OracleMode::Solve)]
        mode: OracleMode,
        /// Maximum number of game states to evaluate.
        #[arg(long, default_value_t = DEFAULT_ORACLE_BUDGET)]
        budget: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-horizon payoffs against the infinite-horizon benchmark.
    Horizon {
        #[arg(long)]
        problem: PathBuf,
        /// Largest horizon to tabulate.
        #[arg(long, default_value_t = 10)]
        rounds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Majority reachability from a default.
    Reach {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long = "default")]
        start: String,
        /// `reachable`, `credible`, or `k:K`.
        #[arg(long, default_value = "reachable")]
        mode: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spatial profiles: generation, non-coplanarity audit and constructive improvements.
    Spatial {
        #[command(subcommand)]
        action: SpatialAction,
    },
    /// Finite grids on a box or a simplex.
    Grid {
        #[arg(long, value_enum)]
        space: SpaceKind,
        #[arg(long)]
        epsilon: String,
        /// Spatial profile file; required for box grids.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Number of voters for simplex grids.
        #[arg(long, default_value_t = 3)]
        voters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes the grid problem here; the grid report goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distribution problems and their axiom audit.
    Dist {
        #[command(subcommand)]
        kind: DistKind,
    },
    /// Voter profile realizing a tournament.
    Realize {
        /// Tournament file: `{"policies": [...], "edges": [[winner, loser], ...], "agenda_setter": [...]}`.
        #[arg(long)]
        tournament: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs an experiment suite and writes CSV and JSON results.
    Experiment {
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of instances; suite default when omitted.
        #[arg(long)]
        count: Option<usize>,
        /// Maximum number of instances; larger requests are truncated.
        #[arg(long)]
        budget: Option<usize>,
        /// Output directory.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleMode {
    Solve,
    Verify,
    Equivalence,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceKind {
    Box,
    Simplex,
}

#[derive(Subcommand)]
enum SpatialAction {
    Generate {
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        voters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "0")]
        lower: String,
        #[arg(long, default_value = "1")]
        upper: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Coplanarity {
        #[arg(long)]
        profile: PathBuf,
    },
    Witness {
        #[arg(long)]
        profile: PathBuf,
        /// Comma-separated coordinates, e.g. `1/3,1/2,2/3`.
        #[arg(long)]
        point: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DistKind {
    /// Every split of one unit in multiples of `1/denominator`.
    Dtd {
        #[arg(long, default_value_t = 3)]
        voters: usize,
        #[arg(long)]
        denominator: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pork-barrel projects from a JSON list of `{"benefit", "cost"}`.
    Pork {
        #[arg(long, default_value_t = 3)]
        voters: usize,
        #[arg(long)]
        projects: PathBuf,
        #[arg(long)]
        denominator: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transfers on top of the policies of an existing problem.
    Transfers {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        denominator: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    Finding,
}

fn emit(value: &Value, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => {
            use std::io::Write;
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn labels(p: &Problem, xs: &[PolicyId]) -> Vec<String> {
    xs.iter().map(|&x| p.label(x).to_string()).collect()
}

fn read_profile(path: &Path) -> anyhow::Result<SpatialProfile> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let prof: SpatialProfile = serde_json::from_str(&text).map_err(Error::from)?;
    Ok(SpatialProfile::new(
        prof.voters,
        prof.setter,
        prof.lower,
        prof.upper,
    )?)
}

fn parse_point(text: &str) -> anyhow::Result<Vec<Rational>> {
    Ok(text
        .split(',')
        .map(rational::parse)
        .collect::<agenda_core::Result<_>>()?)
}

fn parse_reach_mode(text: &str) -> anyhow::Result<ReachMode> {
    match text {
        "reachable" => Ok(ReachMode::Reachable),
        "credible" => Ok(ReachMode::Credible),
        other => {
            let k = other
                .strip_prefix("k:")
                .and_then(|k| k.parse::<i64>().ok())
                .ok_or_else(|| Error::Validation(format!("unknown reach mode {other:?}")))?;
            Ok(ReachMode::k_reachable(k)?)
        }
    }
}

fn analyze(input: &ProblemArgs, out: Option<&Path>) -> anyhow::Result<Status> {
    let (p, rule) = input.load()?;
    let e = unimprovable_set(&p, &rule)?;
    let man = is_manipulable(&p, &rule)?;
    let mut improvements = serde_json::Map::new();
    for x in p.policies() {
        improvements.insert(p.label(x).into(), json!(labels(&p, &phi_or(&p, &rule, x)?)));
    }
    let mut report = json!({
        "generic": p.is_generic(),
        "unimprovable": labels(&p, &e),
        "setter_optima": labels(&p, &man.setter_optima),
        "manipulable": man.manipulable,
        "blocking": labels(&p, &man.blocking),
        "improvement_correspondence": improvements,
    });
    if p.is_generic() {
        report["favorite_improvement"] = json!(labels(&p, &phi_map(&p, &rule)?));
    }
    emit(&report, out)?;
    Ok(Status::Ok)
}

fn solve(
    input: &ProblemArgs,
    rounds: usize,
    start: Option<&str>,
    out: Option<&Path>,
) -> anyhow::Result<Status> {
    let (p, rule) = input.load()?;
    p.require_generic("solve")?;
    let phi = phi_map(&p, &rule)?;
    let starts: Vec<PolicyId> = match start {
        Some(l) => vec![p.policy_by_label(l)?],
        None => p.policies().collect(),
    };
    let rows: Vec<Value> = starts
        .into_iter()
        .map(|x| {
            let tr = trajectory_from_map(&phi, x, rounds);
            json!({
                "default": p.label(x),
                "steps": labels(&p, &tr.steps),
                "outcome": p.label(tr.outcome()),
                "setter_payoff": rational::format(p.setter_utility(tr.outcome())),
                "fixed_point_reached_at": tr.fixed_point_reached_at,
            })
        })
        .collect();
    emit(&json!({ "rounds": rounds, "trajectories": rows }), out)?;
    Ok(Status::Ok)
}

#[allow(clippy::too_many_arguments)]
fn oracle(
    input: &ProblemArgs,
    rounds: usize,
    start: &str,
    protocol: &str,
    mode: OracleMode,
    budget: u64,
    out: Option<&Path>,
) -> anyhow::Result<Status> {
    let (p, rule) = input.load()?;
    let x0 = p.policy_by_label(start)?;
    let proto = parse_protocol(protocol, &p)?;
    match mode {
        OracleMode::Solve => {
            let game = GameSpec::new(p.clone(), rule, rounds, x0, proto)?;
            let rep = solve_spe(&game, budget)?;
            let path: Vec<Value> = rep
                .on_path
                .iter()
                .map(|r| {
                    json!({
                        "round": r.round,
                        "default": p.label(r.default),
                        "proposal": p.label(r.proposal.policy),
                        "adjourn": r.proposal.adjourn,
                        "passed": r.passed,
                        "approving": r.approving,
                    })
                })
                .collect();
            emit(
                &json!({ "outcome": p.label(rep.outcome), "adjourned_at": rep.adjourned_at, "path": path }),
                out,
            )?;
            Ok(Status::Ok)
        }
        OracleMode::Verify => {
            let game = GameSpec::new(p.clone(), rule.clone(), rounds, x0, Protocol::Amendment)?;
            let profile = simple_equilibrium_profile(&p, &rule, rounds)?;
            let rep = verify_profile(&game, &profile)?;
            emit(&serde_json::to_value(&rep)?, out)?;
            Ok(if rep.passes() {
                Status::Ok
            } else {
                Status::Finding
            })
        }
        OracleMode::Equivalence => {
            let protos = [
                Protocol::Amendment,
                Protocol::Successive,
                Protocol::OpenRule,
            ];
            let rep = protocol_equivalence(&p, &rule, rounds, x0, &protos)?;
            let outcomes: Vec<Value> = rep
                .outcomes
                .iter()
                .map(|o| json!({ "protocol": o.protocol, "outcome": p.label(o.outcome) }))
                .collect();
            emit(
                &json!({ "equivalent": rep.equivalent, "expected": p.label(rep.expected), "outcomes": outcomes }),
                out,
            )?;
            Ok(if rep.equivalent {
                Status::Ok
            } else {
                Status::Finding
            })
        }
    }
}

fn horizon(problem: &Path, rounds: usize, out: Option<&Path>) -> anyhow::Result<Status> {
    let p = read_problem(problem)?;
    let rep = horizon_classify(&p, rounds)?;
    let rows: Vec<Value> = rep
        .rows
        .iter()
        .map(|r| json!({ "default": p.label(r.start), "rounds": r.rounds, "payoff": rational::format(&r.payoff) }))
        .collect();
    let committed: Vec<String> = rep.committed_payoff.iter().map(rational::format).collect();
    emit(
        &json!({
            "stable_set": labels(&p, &rep.stable_set),
            "psi": labels(&p, &rep.psi),
            "phi": labels(&p, &rep.phi),
            "rows": rows,
            "committed_payoff": committed,
            "r_set": labels(&p, &rep.r_set),
            "case": rep.case,
            "witness": rep.witness.map(|w| p.label(w).to_string()),
        }),
        out,
    )?;
    Ok(Status::Ok)
}

fn reach(problem: &Path, start: &str, mode: &str, out: Option<&Path>) -> anyhow::Result<Status> {
    let p = read_problem(problem)?;
    let rep = reachability(&p, p.policy_by_label(start)?, parse_reach_mode(mode)?)?;
    emit(
        &json!({
            "mode": rep.mode,
            "reachable": labels(&p, &rep.reachable),
            "best": p.label(rep.best),
            "chain": labels(&p, &rep.chain),
        }),
        out,
    )?;
    Ok(Status::Ok)
}

fn spatial(action: &SpatialAction) -> anyhow::Result<Status> {
    match action {
        SpatialAction::Generate {
            dim,
            voters,
            seed,
            lower,
            upper,
            out,
        } => {
            let prof = gen_spatial(
                *dim,
                *voters,
                *seed,
                &rational::parse(lower)?,
                &rational::parse(upper)?,
            )?;
            emit(&serde_json::to_value(&prof)?, out.as_deref())?;
            Ok(Status::Ok)
        }
        SpatialAction::Coplanarity { profile } => {
            let rep = check_noncoplanarity(&read_profile(profile)?)?;
            emit(&serde_json::to_value(&rep)?, None)?;
            Ok(if rep.passes {
                Status::Ok
            } else {
                Status::Finding
            })
        }
        SpatialAction::Witness {
            profile,
            point,
            out,
        } => {
            let prof = read_profile(profile)?;
            let trace = spatial_witness(&prof, &parse_point(point)?)?;
            emit(&serde_json::to_value(&trace)?, out.as_deref())?;
            Ok(Status::Ok)
        }
    }
}

fn grid(
    space: SpaceKind,
    epsilon: &str,
    profile: Option<&Path>,
    voters: usize,
    seed: u64,
    out: Option<&Path>,
) -> anyhow::Result<Status> {
    let eps = rational::parse(epsilon)?;
    let prof = profile.map(read_profile).transpose()?;
    let space = match space {
        SpaceKind::Box => {
            let prof = prof
                .as_ref()
                .ok_or_else(|| Error::Validation("box grids need --profile".into()))?;
            GridSpace::Box {
                lower: prof.lower.clone(),
                upper: prof.upper.clone(),
            }
        }
        SpaceKind::Simplex => GridSpace::Simplex { voters },
    };
    let g = build_grid(&space, &eps, seed, prof.as_ref())?;
    if let Some(path) = out {
        emit(&problem_to_json(&g.problem), Some(path))?;
    }
    emit(
        &json!({
            "points": g.points.len(),
            "resolution": g.resolution,
            "covering_radius_sq": rational::format(&g.covering_radius_sq),
            "rejitter_rounds": g.rejitter_rounds,
            "generic": g.problem.is_generic(),
        }),
        None,
    )?;
    Ok(Status::Ok)
}

fn dist(kind: &DistKind) -> anyhow::Result<Status> {
    let (problem, out) = match kind {
        DistKind::Dtd {
            voters,
            denominator,
            out,
        } => (
            gen_distribution(&DistributionKind::Dtd {
                voters: *voters,
                denominator: *denominator,
            })?,
            out,
        ),
        DistKind::Pork {
            voters,
            projects,
            denominator,
            out,
        } => {
            let text = std::fs::read_to_string(projects)
                .with_context(|| format!("reading {}", projects.display()))?;
            let projects: Vec<Project> = serde_json::from_str(&text).map_err(Error::from)?;
            (
                gen_distribution(&DistributionKind::Pork {
                    voters: *voters,
                    projects,
                    denominator: *denominator,
                })?,
                out,
            )
        }
        DistKind::Transfers {
            problem,
            denominator,
            out,
        } => {
            let base = Box::new(read_problem(problem)?);
            (
                gen_distribution(&DistributionKind::Transfers {
                    base,
                    denominator: *denominator,
                })?,
                out,
            )
        }
    };
    if let Some(path) = out {
        emit(&problem_to_json(&problem), Some(path))?;
    }
    let audit = audit_dp_axioms(&problem)?;
    emit(
        &json!({
            "policies": problem.num_policies(),
            "voters": problem.num_voters(),
            "scarcity_violations": audit.scarcity.len(),
            "transferability_violations": audit.transferability.len(),
            "pairs_checked": audit.pairs,
            "distribution_problem": audit.passes(),
        }),
        None,
    )?;
    Ok(Status::Ok)
}

#[derive(serde::Deserialize)]
struct TournamentFile {
    policies: Vec<String>,
    edges: Vec<(String, String)>,
    agenda_setter: Option<Vec<Value>>,
}

fn realize(path: &Path, out: Option<&Path>) -> anyhow::Result<Status> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let f: TournamentFile = serde_json::from_str(&text).map_err(Error::from)?;
    let index = |l: &str| {
        f.policies
            .iter()
            .position(|p| p == l)
            .ok_or_else(|| Error::Validation(format!("unknown policy {l:?} in edges")))
    };
    let edges: Vec<(PolicyId, PolicyId)> = f
        .edges
        .iter()
        .map(|(a, b)| Ok((index(a)?, index(b)?)))
        .collect::<agenda_core::Result<_>>()?;
    let t = Tournament::new(f.policies.len(), &edges)?;
    let m = f.policies.len() as i64;
    let setter: Vec<Rational> = match &f.agenda_setter {
        Some(vals) => vals
            .iter()
            .map(|v| match v {
                Value::String(s) => rational::parse(s),
                other => rational::parse(&other.to_string()),
            })
            .collect::<agenda_core::Result<_>>()?,
        None => (0..m).map(|k| rational::int(m - k)).collect(),
    };
    let p = mcgarvey_realize(&t, &f.policies, &setter)?;
    emit(&problem_to_json(&p), out)?;
    Ok(Status::Ok)
}

fn experiment(
    suite: &str,
    seed: u64,
    count: Option<usize>,
    budget: Option<usize>,
    out: &Path,
) -> anyhow::Result<Status> {
    let desc = ExperimentDescriptor {
        suite: suite.into(),
        seed,
        count,
        budget,
    };
    let (rep, secs) = run_suite(&desc)?;
    rep.write(out, secs)?;
    let mut line = format!(
        "{}: {} passed, {} failed",
        rep.suite, rep.passed, rep.failed
    );
    if let Some(t) = &rep.truncated {
        line.push_str(&format!(" (truncated: {t})"));
    }
    println!("{line}");
    Ok(if rep.all_passed() {
        Status::Ok
    } else {
        Status::Finding
    })
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    match cli.command {
        Command::Analyze { input, out } => analyze(&input, out.as_deref()),
        Command::Solve {
            input,
            rounds,
            start,
            out,
        } => solve(&input, rounds, start.as_deref(), out.as_deref()),
        Command::Oracle {
            input,
            rounds,
            start,
            protocol,
            mode,
            budget,
            out,
        } => oracle(
            &input,
            rounds,
            &start,
            &protocol,
            mode,
            budget,
            out.as_deref(),
        ),
        Command::Horizon {
            problem,
            rounds,
            out,
        } => horizon(&problem, rounds, out.as_deref()),
        Command::Reach {
            problem,
            start,
            mode,
            out,
        } => reach(&problem, &start, &mode, out.as_deref()),
        Command::Spatial { action } => spatial(&action),
        Command::Grid {
            space,
            epsilon,
            profile,
            voters,
            seed,
            out,
        } => grid(
            space,
            &epsilon,
            profile.as_deref(),
            voters,
            seed,
            out.as_deref(),
        ),
        Command::Dist { kind } => dist(&kind),
        Command::Realize { tournament, out } => realize(&tournament, out.as_deref()),
        Command::Experiment {
            suite,
            seed,
            count,
            budget,
            out,
        } => experiment(&suite, seed, count, budget, &out),
    }
}

/// Exit status for a failed command: 3 for broken internal invariants, 2 for failed constructions, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Internal(_)) => 3,
        Some(Error::Construction(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Finding) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::anyhow;

    #[test]
    fn reach_modes_parse() {
        assert!(matches!(
            parse_reach_mode("credible").unwrap(),
            ReachMode::Credible
        ));
        assert!(matches!(
            parse_reach_mode("k:2").unwrap(),
            ReachMode::KReachable(2)
        ));
        assert!(parse_reach_mode("k:-1").is_err());
        assert!(parse_reach_mode("sideways").is_err());
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&anyhow!(Error::Internal("x".into()))), 3);
        assert_eq!(exit_code(&anyhow!(Error::Validation("x".into()))), 1);
        assert_eq!(exit_code(&anyhow!("plain")), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
