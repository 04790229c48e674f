//! Exact equal-probability multinomial draws for the resampling step.

use super::RngStream;
use rand_distr::{Binomial, Distribution};

/// Draws counts (M_1, ..., M_b) ~ Multinomial(n; 1/b, ..., 1/b).
///
/// Uses the sequential conditional-binomial method: category a receives
/// Binomial(remaining, 1/(b - a)) and the final category absorbs the
/// remainder, so counts always sum to exactly n and each marginal is
/// Binomial(n, 1/b). The draw is a pure function of the stream.
pub fn multinomial_draw(stream: &RngStream, n: u64, b: usize) -> Vec<u64> {
    assert!(b >= 1, "multinomial_draw requires at least one category");
    let mut rng = stream.rng();
    let mut counts = vec![0u64; b];
    let mut remaining = n;
    for a in 0..b - 1 {
        if remaining == 0 {
            break;
        }
        let p = 1.0 / (b - a) as f64;
        let draw = Binomial::new(remaining, p)
            .expect("0 < p <= 1 and finite n")
            .sample(&mut rng);
        counts[a] = draw;
        remaining -= draw;
    }
    counts[b - 1] = remaining;
    counts
}
