//! Reference instances used across tests, examples and the command line.

use crate::ccp::{Problem, Tournament};
use crate::generators::mcgarvey_realize;
use crate::rational::{int, Rational};

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn row(v: &[i64]) -> Vec<Rational> {
    v.iter().map(|&k| int(k)).collect()
}

/// Four policies `w, x, y, z` and three voters whose majority relation
/// cycles; the setter ranks `w > x > y > z`. Utilities are rank encodings.
pub fn ratchet() -> Problem {
    Problem::new(
        labels(&["w", "x", "y", "z"]),
        vec![
            row(&[3, 2, 1, 4]), // z > w > x > y
            row(&[1, 4, 3, 2]), // x > y > z > w
            row(&[2, 1, 4, 3]), // y > z > w > x
        ],
        row(&[4, 3, 2, 1]),
    )
    .expect("valid fixture")
}

/// The second four-policy tournament: `x` beats every other policy.
pub fn stuck_tournament() -> Tournament {
    let (w, x, y, z) = (0, 1, 2, 3);
    Tournament::new(4, &[(z, w), (x, w), (x, y), (w, y), (y, z), (x, z)]).expect("valid tournament")
}

/// The second fixture given only through its majority relation.
pub fn stuck() -> Problem {
    Problem::with_override(
        labels(&["w", "x", "y", "z"]),
        vec![],
        row(&[4, 3, 2, 1]),
        stuck_tournament(),
    )
    .expect("valid fixture")
}

/// The second fixture with an explicit voter profile realizing its tournament.
pub fn stuck_realized() -> Problem {
    mcgarvey_realize(
        &stuck_tournament(),
        &labels(&["w", "x", "y", "z"]),
        &row(&[4, 3, 2, 1]),
    )
    .expect("realizable tournament")
}
