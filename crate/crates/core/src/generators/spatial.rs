use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ccp::Problem;
use crate::error::{Error, Result};
use crate::rational::{self, Rational};

/// Coordinates are drawn on a dyadic lattice with this many steps per unit of box width.
pub const SPATIAL_RESOLUTION: u64 = 1 << 20;

/// Ideal points for voters and the setter inside an axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialProfile {
    pub dim: usize,
    #[serde(with = "rational::serde_rational_matrix")]
    pub voters: Vec<Vec<Rational>>,
    #[serde(with = "rational::serde_rational_vec")]
    pub setter: Vec<Rational>,
    #[serde(with = "rational::serde_rational_vec")]
    pub lower: Vec<Rational>,
    #[serde(with = "rational::serde_rational_vec")]
    pub upper: Vec<Rational>,
}

impl SpatialProfile {
    pub fn new(
        voters: Vec<Vec<Rational>>,
        setter: Vec<Rational>,
        lower: Vec<Rational>,
        upper: Vec<Rational>,
    ) -> Result<Self> {
        let dim = setter.len();
        if dim == 0 {
            return Err(Error::Validation(
                "spatial profiles need at least one dimension".into(),
            ));
        }
        if voters.is_empty() || voters.len().is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "spatial profiles need an odd number of voters, got {}",
                voters.len()
            )));
        }
        if voters.iter().any(|v| v.len() != dim) || lower.len() != dim || upper.len() != dim {
            return Err(Error::Validation(
                "all points and bounds must share one dimension".into(),
            ));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l >= u) {
            return Err(Error::Validation(
                "box bounds must satisfy lower < upper in every coordinate".into(),
            ));
        }
        Ok(SpatialProfile {
            dim,
            voters,
            setter,
            lower,
            upper,
        })
    }

    pub fn num_voters(&self) -> usize {
        self.voters.len()
    }

    /// Ideal point of player `k`; index `num_voters()` is the setter.
    pub fn ideal(&self, k: usize) -> &[Rational] {
        if k == self.voters.len() {
            &self.setter
        } else {
            &self.voters[k]
        }
    }

    /// Whether `point` lies in the profile's box.
    pub fn contains(&self, point: &[Rational]) -> bool {
        point
            .iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((c, l), u)| l <= c && c <= u)
    }

    /// Quadratic loss utility of player `k` at `point`.
    pub fn utility(&self, k: usize, point: &[Rational]) -> Rational {
        -dist_sq(point, self.ideal(k)) / Rational::from_integer(BigInt::from(2))
    }
}

fn dist_sq(a: &[Rational], b: &[Rational]) -> Rational {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[Rational], b: &[Rational]) -> Rational {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cross(a: &[Rational], b: &[Rational]) -> Vec<Rational> {
    vec![
        &a[1] * &b[2] - &a[2] * &b[1],
        &a[2] * &b[0] - &a[0] * &b[2],
        &a[0] * &b[1] - &a[1] * &b[0],
    ]
}

fn sub(a: &[Rational], b: &[Rational]) -> Vec<Rational> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn scale(a: &[Rational], s: &Rational) -> Vec<Rational> {
    a.iter().map(|x| x * s).collect()
}

fn add(a: &[Rational], b: &[Rational]) -> Vec<Rational> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn is_zero(v: &[Rational]) -> bool {
    v.iter().all(Zero::is_zero)
}

fn draw_point<R: Rng>(rng: &mut R, lower: &[Rational], upper: &[Rational]) -> Vec<Rational> {
    lower
        .iter()
        .zip(upper)
        .map(|(l, u)| {
            let k = rng.gen_range(0..=SPATIAL_RESOLUTION);
            l + (u - l) * Rational::new(BigInt::from(k), BigInt::from(SPATIAL_RESOLUTION))
        })
        .collect()
}

/// Draws `voters` voter ideal points and a setter ideal point uniformly from `[lower, upper]^dim`.
pub fn gen_spatial(
    dim: usize,
    voters: usize,
    seed: u64,
    lower: &Rational,
    upper: &Rational,
) -> Result<SpatialProfile> {
    if lower >= upper {
        return Err(Error::Validation(
            "degenerate box: lower bound must be below upper bound".into(),
        ));
    }
    if voters == 0 || voters.is_multiple_of(2) {
        return Err(Error::Validation(format!(
            "spatial profiles need an odd number of voters, got {voters}"
        )));
    }
    let lo = vec![lower.clone(); dim];
    let hi = vec![upper.clone(); dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vs = (0..voters)
        .map(|_| draw_point(&mut rng, &lo, &hi))
        .collect();
    let setter = draw_point(&mut rng, &lo, &hi);
    SpatialProfile::new(vs, setter, lo, hi)
}

/// A uniformly drawn point of the profile's box, from a caller-owned generator.
pub fn sample_point<R: Rng>(rng: &mut R, profile: &SpatialProfile) -> Vec<Rational> {
    draw_point(rng, &profile.lower, &profile.upper)
}

/// The finite problem with the given policies and the profile's quadratic utilities.
pub fn spatial_problem(profile: &SpatialProfile, points: &[Vec<Rational>]) -> Result<Problem> {
    let n = profile.num_voters();
    let voters = (0..n)
        .map(|i| points.iter().map(|p| profile.utility(i, p)).collect())
        .collect();
    let setter = points.iter().map(|p| profile.utility(n, p)).collect();
    Problem::new(
        (0..points.len()).map(|k| format!("g{k}")).collect(),
        voters,
        setter,
    )
}

/// Four ideal points whose projection on three coordinates is coplanar.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoplanarityViolation {
    pub dims: [usize; 3],
    /// Player indices; the setter is `num_voters`.
    pub players: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoplanarityReport {
    pub passes: bool,
    pub tuples_checked: u64,
    pub violation: Option<CoplanarityViolation>,
}

fn triple_product(p: [&[Rational]; 4], dims: [usize; 3]) -> Rational {
    let v =
        |a: &[Rational], b: &[Rational]| dims.iter().map(|&d| &a[d] - &b[d]).collect::<Vec<_>>();
    let (a, b, c) = (v(p[1], p[0]), v(p[2], p[0]), v(p[3], p[0]));
    dot(&cross(&a, &b), &c)
}

/// Exact check that no four ideal points are coplanar in any three-coordinate projection.
pub fn check_noncoplanarity(profile: &SpatialProfile) -> Result<CoplanarityReport> {
    let d = profile.dim;
    if d < 3 {
        return Err(Error::Validation(format!(
            "the coplanarity condition needs at least three dimensions, got {d}"
        )));
    }
    let players = profile.num_voters() + 1;
    let mut checked = 0u64;
    for a in 0..d {
        for b in a + 1..d {
            for c in b + 1..d {
                for i in 0..players {
                    for j in i + 1..players {
                        for k in j + 1..players {
                            for l in k + 1..players {
                                checked += 1;
                                let pts = [
                                    profile.ideal(i),
                                    profile.ideal(j),
                                    profile.ideal(k),
                                    profile.ideal(l),
                                ];
                                if triple_product(pts, [a, b, c]).is_zero() {
                                    return Ok(CoplanarityReport {
                                        passes: false,
                                        tuples_checked: checked,
                                        violation: Some(CoplanarityViolation {
                                            dims: [a, b, c],
                                            players: [i, j, k, l],
                                        }),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(CoplanarityReport {
        passes: true,
        tuples_checked: checked,
        violation: None,
    })
}

/// Every intermediate of the constructive improvement, with exact values.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WitnessTrace {
    #[serde(with = "rational::serde_rational_vec")]
    pub base: Vec<Rational>,
    /// Coordinates spanning the working slice.
    pub dims: [usize; 3],
    /// Setter gradient at the base within the slice.
    #[serde(with = "rational::serde_rational_vec")]
    pub normal: Vec<Rational>,
    #[serde(with = "rational::serde_rational_matrix")]
    pub projected_gradients: Vec<Vec<Rational>>,
    pub pivot: usize,
    #[serde(with = "rational::serde_rational_vec")]
    pub omega: Vec<Rational>,
    pub coalition: Vec<usize>,
    pub k: u64,
    #[serde(with = "rational::serde_rational_vec")]
    pub rho: Vec<Rational>,
    #[serde(with = "rational::serde_rational")]
    pub epsilon: Rational,
    #[serde(with = "rational::serde_rational_vec")]
    pub y: Vec<Rational>,
    #[serde(with = "rational::serde_rational")]
    pub epsilon_prime: Rational,
    #[serde(with = "rational::serde_rational_vec")]
    pub zeta: Vec<Rational>,
    #[serde(with = "rational::serde_rational")]
    pub beta: Rational,
    #[serde(with = "rational::serde_rational_vec")]
    pub z: Vec<Rational>,
    #[serde(with = "rational::serde_rational")]
    pub setter_gain: Rational,
}

const MAX_HALVINGS: u32 = 64;

fn lift(base: &[Rational], dims: [usize; 3], slice: &[Rational]) -> Vec<Rational> {
    let mut out = base.to_vec();
    for (k, &d) in dims.iter().enumerate() {
        out[d] = slice[k].clone();
    }
    out
}

/// Constructs a policy that the setter and a majority strictly prefer to `x`.
pub fn spatial_witness(profile: &SpatialProfile, x: &[Rational]) -> Result<WitnessTrace> {
    let d = profile.dim;
    if d < 3 {
        return Err(Error::Validation(
            "the constructive witness needs at least three dimensions".into(),
        ));
    }
    if x.len() != d {
        return Err(Error::Validation(format!(
            "point has dimension {}, expected {d}",
            x.len()
        )));
    }
    let n = profile.num_voters();
    let dims = (0..d)
        .flat_map(|a| (a + 1..d).flat_map(move |b| (b + 1..d).map(move |c| [a, b, c])))
        .find(|t| t.iter().any(|&k| x[k] != profile.setter[k]))
        .ok_or_else(|| Error::Validation("the base point is the setter's ideal point".into()))?;
    let pick = |v: &[Rational]| dims.iter().map(|&k| v[k].clone()).collect::<Vec<_>>();
    let xs = pick(x);
    let normal = sub(&pick(&profile.setter), &xs);
    let nn = dot(&normal, &normal);
    let projected: Vec<Vec<Rational>> = (0..n)
        .map(|j| {
            let g = sub(&pick(&profile.voters[j]), &xs);
            let coef = dot(&g, &normal) / &nn;
            sub(&g, &scale(&normal, &coef))
        })
        .collect();
    let pivot = (0..n)
        .find(|&j| !is_zero(&projected[j]))
        .ok_or_else(|| Error::Construction("every projected voter gradient vanishes".into()))?;
    let pi = &projected[pivot];
    let mut omega = cross(&normal, pi);
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    let mut aligned = Vec::new();
    for j in (0..n).filter(|&j| j != pivot) {
        let pj = &projected[j];
        if is_zero(&cross(pj, pi)) {
            if dot(pj, pi).is_positive() {
                aligned.push(j);
            }
            continue;
        }
        let s = dot(pj, &omega);
        if s.is_positive() {
            plus.push(j);
        } else if s.is_negative() {
            minus.push(j);
        }
    }
    if minus.len() > plus.len() {
        omega = scale(&omega, &-Rational::one());
        std::mem::swap(&mut plus, &mut minus);
    }
    let mut coalition: Vec<usize> = plus.into_iter().chain(aligned).chain([pivot]).collect();
    coalition.sort_unstable();
    if 2 * coalition.len() <= n {
        return Err(Error::Construction(format!(
            "the favourable side of the slice holds only {} of {n} voters",
            coalition.len()
        )));
    }

    let mut k: u64 = 1;
    let rho = loop {
        let kr = Rational::from_integer(BigInt::from(k));
        let rho = add(
            &scale(pi, &(Rational::one() / &kr)),
            &scale(&omega, &((&kr - Rational::one()) / &kr)),
        );
        if coalition
            .iter()
            .all(|&j| dot(&projected[j], &rho).is_positive())
        {
            break rho;
        }
        if k >= 1 << 62 {
            return Err(Error::Construction(
                "no direction favours the whole coalition".into(),
            ));
        }
        k *= 2;
    };

    let gains_all = |p: &[Rational]| {
        coalition
            .iter()
            .all(|&j| profile.utility(j, p) > profile.utility(j, x))
    };
    let half = Rational::new(BigInt::from(1), BigInt::from(2));
    let halve_until =
        |mut s: Rational, what: &str, ok: &dyn Fn(&Rational) -> bool| -> Result<Rational> {
            for _ in 0..=MAX_HALVINGS {
                if ok(&s) {
                    return Ok(s);
                }
                s = &s * &half;
            }
            Err(Error::Construction(format!(
                "step size for {what} did not settle after {MAX_HALVINGS} halvings"
            )))
        };

    let epsilon = halve_until(Rational::one(), "y", &|e| {
        gains_all(&lift(x, dims, &add(&xs, &scale(&rho, e))))
    })?;
    let ys = add(&xs, &scale(&rho, &epsilon));
    let epsilon_prime = halve_until(Rational::one(), "zeta", &|e| {
        gains_all(&lift(x, dims, &add(&ys, &scale(&normal, e))))
    })?;
    let zs = add(&ys, &scale(&normal, &epsilon_prime));
    let setter_u_x = profile.utility(n, x);
    let blend = |b: &Rational| add(&scale(&zs, b), &scale(&xs, &(Rational::one() - b)));
    let beta = halve_until(Rational::one(), "z", &|b| {
        let z = lift(x, dims, &blend(b));
        profile.contains(&z) && profile.utility(n, &z) > setter_u_x && gains_all(&z)
    })?;
    let z = lift(x, dims, &blend(&beta));
    let setter_gain = profile.utility(n, &z) - &setter_u_x;
    if !setter_gain.is_positive() || !gains_all(&z) || !profile.contains(&z) {
        return Err(Error::Internal(
            "constructed witness failed its final check".into(),
        ));
    }
    Ok(WitnessTrace {
        base: x.to_vec(),
        dims,
        normal,
        projected_gradients: projected,
        pivot,
        omega,
        coalition,
        k,
        rho,
        epsilon,
        y: lift(x, dims, &ys),
        epsilon_prime,
        zeta: lift(x, dims, &zs),
        beta,
        z,
        setter_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{frac, int};

    fn pt(v: &[i64]) -> Vec<Rational> {
        v.iter().map(|&k| int(k)).collect()
    }

    #[test]
    fn generation_is_deterministic_and_in_box() {
        let a = gen_spatial(3, 5, 7, &int(0), &int(1)).unwrap();
        let b = gen_spatial(3, 5, 7, &int(0), &int(1)).unwrap();
        assert_eq!(a, b);
        assert!(a
            .voters
            .iter()
            .chain([&a.setter])
            .flatten()
            .all(|c| c >= &int(0) && c <= &int(1)));
        assert!(gen_spatial(3, 5, 7, &int(1), &int(1)).is_err());
        assert!(gen_spatial(3, 4, 7, &int(0), &int(1)).is_err());
    }

    #[test]
    fn coplanar_quadruple_detected() {
        let p = SpatialProfile::new(
            vec![pt(&[0, 0, 0]), pt(&[1, 0, 0]), pt(&[0, 1, 0])],
            pt(&[1, 1, 0]),
            pt(&[0, 0, 0]),
            pt(&[1, 1, 1]),
        )
        .unwrap();
        let rep = check_noncoplanarity(&p).unwrap();
        assert!(!rep.passes);
        assert_eq!(
            rep.violation.unwrap(),
            CoplanarityViolation {
                dims: [0, 1, 2],
                players: [0, 1, 2, 3]
            }
        );
    }

    #[test]
    fn projection_specific_coplanarity() {
        // Coplanar in coordinates (0,1,2), generic once coordinate 3 replaces 2.
        let p = SpatialProfile::new(
            vec![pt(&[0, 0, 0, 0]), pt(&[1, 0, 0, 3]), pt(&[0, 1, 0, 5])],
            pt(&[1, 1, 0, 2]),
            pt(&[0, 0, 0, 0]),
            pt(&[9, 9, 9, 9]),
        )
        .unwrap();
        let rep = check_noncoplanarity(&p).unwrap();
        assert_eq!(rep.violation.unwrap().dims, [0, 1, 2]);
        let f = triple_product([p.ideal(0), p.ideal(1), p.ideal(2), p.ideal(3)], [0, 1, 3]);
        assert!(!f.is_zero());
    }

    #[test]
    fn few_players_pass_vacuously() {
        let p = SpatialProfile::new(
            vec![pt(&[0, 0, 0])],
            pt(&[1, 1, 1]),
            pt(&[0, 0, 0]),
            pt(&[1, 1, 1]),
        )
        .unwrap();
        assert!(check_noncoplanarity(&p).unwrap().passes);
    }

    #[test]
    fn witness_on_random_profile() {
        let p = gen_spatial(3, 5, 11, &int(0), &int(1)).unwrap();
        assert!(check_noncoplanarity(&p).unwrap().passes);
        let x = vec![frac(1, 3), frac(1, 2), frac(2, 3)];
        let w = spatial_witness(&p, &x).unwrap();
        assert!(w.setter_gain.is_positive());
        assert!(2 * w.coalition.len() > 5);
        for &j in &w.coalition {
            assert!(p.utility(j, &w.z) > p.utility(j, &x));
        }
    }

    #[test]
    fn witness_stays_in_box_near_corner() {
        let p = gen_spatial(3, 5, 11, &int(0), &int(1)).unwrap();
        let x = vec![frac(1, 1000), frac(999, 1000), frac(1, 1000)];
        let w = spatial_witness(&p, &x).unwrap();
        assert!(p.contains(&w.z));
        assert!(w.setter_gain.is_positive());
    }

    #[test]
    fn witness_rejects_setter_ideal() {
        let p = gen_spatial(3, 3, 1, &int(0), &int(1)).unwrap();
        assert!(spatial_witness(&p, &p.setter.clone()).is_err());
    }
}
