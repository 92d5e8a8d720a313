use std::collections::HashSet;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::distribution::simplex_compositions;
use super::spatial::{spatial_problem, SpatialProfile};
use crate::ccp::Problem;
use crate::error::{Error, Result};
use crate::rational::{self, Rational};

/// The space a grid approximates.
#[derive(Clone, Debug, PartialEq)]
pub enum GridSpace {
    Box {
        lower: Vec<Rational>,
        upper: Vec<Rational>,
    },
    /// Allocations among `voters` voters and the setter.
    Simplex { voters: usize },
}

/// A finite, generic approximation of a policy space.
#[derive(Clone, Debug, Serialize)]
pub struct Grid {
    #[serde(with = "rational::serde_rational_matrix")]
    pub points: Vec<Vec<Rational>>,
    #[serde(skip)]
    pub problem: Problem,
    /// Lattice denominator for simplex grids, steps per axis for boxes.
    pub resolution: u64,
    /// Upper bound on the squared distance from any point of the space to the grid.
    #[serde(with = "rational::serde_rational")]
    pub covering_radius_sq: Rational,
    pub rejitter_rounds: u32,
}

const JITTER_STEPS: i64 = 1 << 16;
const MAX_REJITTER: u32 = 32;

fn r(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Uniform draw from the open interval `(-bound, bound)`, or `[0, bound)` / `(-bound, 0]` when one-sided.
fn jitter<R: Rng>(rng: &mut R, bound: &Rational, low_open: bool, high_open: bool) -> Rational {
    let lo = if low_open { -(JITTER_STEPS - 1) } else { 0 };
    let hi = if high_open { JITTER_STEPS - 1 } else { 0 };
    let k = rng.gen_range(lo..=hi);
    bound * Rational::new(BigInt::from(k), BigInt::from(JITTER_STEPS))
}

/// Builds an `epsilon`-dense grid with utilities in general position.
///
/// Box grids need `profile` for utilities; simplex grids use each player's share.
pub fn build_grid(
    space: &GridSpace,
    epsilon: &Rational,
    seed: u64,
    profile: Option<&SpatialProfile>,
) -> Result<Grid> {
    if epsilon <= &Rational::zero() {
        return Err(Error::Validation("epsilon must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match space {
        GridSpace::Box { lower, upper } => {
            let profile = profile
                .ok_or_else(|| Error::Validation("box grids need a spatial profile".into()))?;
            box_grid(lower, upper, epsilon, &mut rng, profile)
        }
        GridSpace::Simplex { voters } => simplex_grid(*voters, epsilon, &mut rng),
    }
}

fn box_grid(
    lower: &[Rational],
    upper: &[Rational],
    epsilon: &Rational,
    rng: &mut ChaCha8Rng,
    profile: &SpatialProfile,
) -> Result<Grid> {
    let d = lower.len();
    if d == 0 || upper.len() != d || d != profile.dim {
        return Err(Error::Validation(
            "box bounds must match the profile dimension".into(),
        ));
    }
    if lower.iter().zip(upper).any(|(l, u)| l >= u) {
        return Err(Error::Validation("degenerate box".into()));
    }
    let eps_sq = epsilon * epsilon;
    let widths: Vec<Rational> = lower.iter().zip(upper).map(|(l, u)| u - l).collect();
    let diam_sq: Rational = widths.iter().map(|w| w * w).sum();
    if diam_sq < eps_sq {
        let center: Vec<Rational> = lower
            .iter()
            .zip(upper)
            .map(|(l, u)| (l + u) / r(2))
            .collect();
        let problem = spatial_problem(profile, std::slice::from_ref(&center))?;
        return Ok(Grid {
            points: vec![center],
            problem,
            resolution: 0,
            covering_radius_sq: diam_sq / r(4),
            rejitter_rounds: 0,
        });
    }
    // Smallest step count per axis with h^2 * d < epsilon^2.
    let steps: Vec<u64> = widths
        .iter()
        .map(|w| {
            let mut k = 1u64;
            while (w / r(k as i64)) * (w / r(k as i64)) * r(d as i64) >= eps_sq {
                k += 1;
            }
            k
        })
        .collect();
    let spacing: Vec<Rational> = widths
        .iter()
        .zip(&steps)
        .map(|(w, &k)| w / r(k as i64))
        .collect();
    let total: u128 = steps.iter().map(|&k| (k + 1) as u128).product();
    if total > 2_000_000 {
        return Err(Error::Budget {
            what: "grid points".into(),
            needed: total,
            limit: 2_000_000,
        });
    }
    let mut index = vec![0u64; d];
    let mut lattice: Vec<Vec<u64>> = Vec::with_capacity(total as usize);
    loop {
        lattice.push(index.clone());
        let mut a = 0;
        while a < d {
            index[a] += 1;
            if index[a] <= steps[a] {
                break;
            }
            index[a] = 0;
            a += 1;
        }
        if a == d {
            break;
        }
    }
    let tenth: Vec<Rational> = spacing.iter().map(|h| h / r(10)).collect();
    let place = |rng: &mut ChaCha8Rng, idx: &[u64]| -> Vec<Rational> {
        (0..d)
            .map(|a| {
                let base = &lower[a] + &spacing[a] * r(idx[a] as i64);
                base + jitter(rng, &tenth[a], idx[a] > 0, idx[a] < steps[a])
            })
            .collect()
    };
    let mut points: Vec<Vec<Rational>> = lattice.iter().map(|idx| place(rng, idx)).collect();
    let players = profile.num_voters() + 1;
    let utility = |k: usize, p: &[Rational]| profile.utility(k, p);
    let rounds = untie(
        &mut points,
        players,
        &utility,
        |rng, k| place(rng, &lattice[k]),
        rng,
    )?;
    let problem = spatial_problem(profile, &points)?;
    let covering_radius_sq = spacing.iter().map(|h| h * h).sum::<Rational>()
        * Rational::new(BigInt::from(9), BigInt::from(25));
    Ok(Grid {
        points,
        problem,
        resolution: steps.iter().copied().max().unwrap_or(0),
        covering_radius_sq,
        rejitter_rounds: rounds,
    })
}

/// Re-draws points until every player ranks all points strictly.
fn untie<U, P>(
    points: &mut [Vec<Rational>],
    players: usize,
    utility: &U,
    mut place: P,
    rng: &mut ChaCha8Rng,
) -> Result<u32>
where
    U: Fn(usize, &[Rational]) -> Rational,
    P: FnMut(&mut ChaCha8Rng, usize) -> Vec<Rational>,
{
    for round in 0..=MAX_REJITTER {
        let mut offenders: Vec<(usize, usize, usize)> = Vec::new();
        for k in 0..players {
            let mut us: Vec<(Rational, usize)> = points
                .iter()
                .enumerate()
                .map(|(i, p)| (utility(k, p), i))
                .collect();
            us.sort();
            offenders.extend(
                us.windows(2)
                    .filter(|w| w[0].0 == w[1].0)
                    .map(|w| (k, w[0].1, w[1].1)),
            );
        }
        if offenders.is_empty() {
            return Ok(round);
        }
        if round == MAX_REJITTER {
            let (k, a, b) = offenders[0];
            let player = if k + 1 == players {
                "setter".to_string()
            } else {
                format!("voter {k}")
            };
            return Err(Error::GridTie { player, a, b });
        }
        let redo: HashSet<usize> = offenders.iter().map(|&(_, _, b)| b).collect();
        let mut redo: Vec<usize> = redo.into_iter().collect();
        redo.sort_unstable();
        for b in redo {
            points[b] = place(rng, b);
        }
    }
    unreachable!("loop returns on its last round")
}

fn simplex_grid(voters: usize, epsilon: &Rational, rng: &mut ChaCha8Rng) -> Result<Grid> {
    if voters == 0 {
        return Err(Error::Validation(
            "simplex grids need at least one voter".into(),
        ));
    }
    let parts = voters + 1;
    let eps_sq = epsilon * epsilon;
    if eps_sq > r(2) {
        let bary = vec![Rational::new(BigInt::one(), BigInt::from(parts)); parts];
        let problem = simplex_problem(std::slice::from_ref(&bary))?;
        return Ok(Grid {
            points: vec![bary],
            problem,
            resolution: 1,
            covering_radius_sq: r(2),
            rejitter_rounds: 0,
        });
    }
    // 100 m^2 eps^2 >= 121 (n + 1) bounds rounding plus jitter error by epsilon.
    let need = r(121 * parts as i64) / (r(100) * &eps_sq);
    let mut m = 1u64;
    while r((m * m) as i64) < need {
        m += 1;
    }
    let lattice = simplex_compositions(parts, m);
    if lattice.len() > 2_000_000 {
        return Err(Error::Budget {
            what: "grid points".into(),
            needed: lattice.len() as u128,
            limit: 2_000_000,
        });
    }
    let mr = r(m as i64);
    let bound = Rational::one() / (r(10) * &mr * r(parts as i64));
    let place = |rng: &mut ChaCha8Rng, shares: &[u64]| -> Vec<Rational> {
        let top = (0..parts)
            .max_by_key(|&i| (shares[i], std::cmp::Reverse(i)))
            .expect("non-empty");
        let mut p: Vec<Rational> = shares.iter().map(|&s| r(s as i64) / &mr).collect();
        let mut moved = Rational::zero();
        for i in (0..parts).filter(|&i| i != top) {
            let j = jitter(rng, &bound, shares[i] > 0, true);
            moved += &j;
            p[i] += j;
        }
        p[top] -= moved;
        p
    };
    let mut points: Vec<Vec<Rational>> = lattice.iter().map(|s| place(rng, s)).collect();
    let utility = |k: usize, p: &[Rational]| p[k].clone();
    let rounds = untie(
        &mut points,
        parts,
        &utility,
        |rng, k| place(rng, &lattice[k]),
        rng,
    )?;
    let problem = simplex_problem(&points)?;
    Ok(Grid {
        points,
        problem,
        resolution: m,
        covering_radius_sq: r(121 * parts as i64) / (r(100) * &mr * &mr),
        rejitter_rounds: rounds,
    })
}

fn simplex_problem(points: &[Vec<Rational>]) -> Result<Problem> {
    let parts = points[0].len();
    let mut cols: Vec<Vec<Rational>> = (0..parts)
        .map(|k| points.iter().map(|p| p[k].clone()).collect())
        .collect();
    let setter = cols.pop().expect("setter column");
    Problem::new(
        (0..points.len()).map(|k| format!("g{k}")).collect(),
        cols,
        setter,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::gen_spatial;
    use crate::rational::{frac, int};
    use num_traits::Signed;

    #[test]
    fn unit_cube_grid_is_generic_and_covers() {
        let prof = gen_spatial(3, 3, 5, &int(0), &int(1)).unwrap();
        let space = GridSpace::Box {
            lower: vec![int(0); 3],
            upper: vec![int(1); 3],
        };
        let g = build_grid(&space, &frac(1, 4), 9, Some(&prof)).unwrap();
        assert!(g.covering_radius_sq < frac(1, 16));
        assert!(g.problem.is_generic());
        assert_eq!(g.resolution, 7);
        assert_eq!(g.points.len(), 8 * 8 * 8);
        assert!(g
            .points
            .iter()
            .flatten()
            .all(|c| c >= &int(0) && c <= &int(1)));
    }

    #[test]
    fn simplex_grid_resolution() {
        let g = build_grid(&GridSpace::Simplex { voters: 3 }, &frac(3, 10), 1, None).unwrap();
        assert!(g.resolution >= 6);
        assert!(g
            .points
            .iter()
            .all(|p| p.iter().sum::<Rational>() == int(1) && p.iter().all(|c| !c.is_negative())));
        assert!(g.covering_radius_sq <= frac(9, 100));
        let u: HashSet<_> = g.points.iter().map(|p| p[0].clone()).collect();
        assert_eq!(u.len(), g.points.len());
    }

    #[test]
    fn coarse_epsilon_gives_single_point() {
        let prof = gen_spatial(3, 3, 5, &int(0), &int(1)).unwrap();
        let space = GridSpace::Box {
            lower: vec![int(0); 3],
            upper: vec![int(1); 3],
        };
        let g = build_grid(&space, &int(2), 9, Some(&prof)).unwrap();
        assert_eq!(g.points, vec![vec![frac(1, 2); 3]]);
    }

    #[test]
    fn invalid_epsilon() {
        assert!(build_grid(&GridSpace::Simplex { voters: 3 }, &int(0), 1, None).is_err());
    }
}
