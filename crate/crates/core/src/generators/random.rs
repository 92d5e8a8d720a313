use rand::seq::SliceRandom;
use rand::Rng;

use crate::ccp::{Problem, Tournament};
use crate::rational::int;

/// A problem with strict random rankings for `voters` voters and the setter.
pub fn random_generic_problem<R: Rng>(rng: &mut R, policies: usize, voters: usize) -> Problem {
    let mut ranking = || {
        let mut v: Vec<i64> = (1..=policies as i64).collect();
        v.shuffle(rng);
        v.into_iter().map(int).collect::<Vec<_>>()
    };
    let voter_rows = (0..voters).map(|_| ranking()).collect();
    let setter = ranking();
    Problem::new(
        (0..policies).map(|i| format!("p{i}")).collect(),
        voter_rows,
        setter,
    )
    .expect("random rankings form a valid problem")
}

/// A uniformly random tournament on `size` vertices.
pub fn random_tournament<R: Rng>(rng: &mut R, size: usize) -> Tournament {
    let mut edges = Vec::new();
    for a in 0..size {
        for b in a + 1..size {
            edges.push(if rng.gen_bool(0.5) { (a, b) } else { (b, a) });
        }
    }
    Tournament::new(size, &edges).expect("complete by construction")
}
