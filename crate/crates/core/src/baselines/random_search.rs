//! Uniform random search over a finite candidate set.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Pick one index uniformly among the unvisited candidates.
pub fn random_search_step(visited: &[bool], rng: &mut Rng) -> Result<usize> {
    let remaining = visited.iter().filter(|v| !**v).count();
    if remaining == 0 {
        return Err(Error::Exhausted("all candidates visited".into()));
    }
    let mut k = rng.random_range(0..remaining);
    for (i, v) in visited.iter().enumerate() {
        if !*v {
            if k == 0 {
                return Ok(i);
            }
            k -= 1;
        }
    }
    unreachable!("remaining > 0")
}
