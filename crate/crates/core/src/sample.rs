//! Seeded random sampling: points, polynomial fields, and the shared RNG.
//!
//! Every randomized check in the crate draws from ChaCha8 seeded with an
//! explicit `u64`, so reports are reproducible across platforms and runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::expr::{BinOp, Chart, ExprNode, ScalarField};

/// The crate-wide deterministic RNG.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point in `[lo, hi]^n`.
pub fn random_point(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Uniform point in `[lo, hi]^n` with all pairwise coordinate gaps at
/// least `min_gap` (rejection sampling); used for systems whose domain
/// excludes coordinate coincidences.
pub fn random_separated_point(
    n: usize,
    lo: f64,
    hi: f64,
    min_gap: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    loop {
        let p = random_point(n, lo, hi, rng);
        let ok = (0..n).all(|i| (0..i).all(|j| (p[i] - p[j]).abs() >= min_gap));
        if ok {
            return p;
        }
    }
}

/// Random polynomial scalar field of total degree ≤ `max_degree` with
/// 3–6 monomials and coefficients in [−2, 2].
pub fn random_polynomial(chart: &Chart, max_degree: u32, rng: &mut ChaCha8Rng) -> ScalarField {
    let n = chart.dim();
    let terms = rng.gen_range(3..=6);
    let mut acc: Option<ExprNode> = None;
    for _ in 0..terms {
        let coeff = rng.gen_range(-2.0..2.0);
        let mut term = ExprNode::literal(coeff);
        let mut degree_left = max_degree;
        for idx in 0..n {
            if degree_left == 0 {
                break;
            }
            let d = rng.gen_range(0..=degree_left.min(2));
            degree_left -= d;
            for _ in 0..d {
                term = ExprNode::binary(
                    BinOp::Mul,
                    term,
                    ExprNode::var(idx, &chart.coords()[idx]),
                );
            }
        }
        acc = Some(match acc {
            None => term,
            Some(a) => ExprNode::binary(BinOp::Add, a, term),
        });
    }
    ScalarField::from_expr(acc.unwrap(), chart)
}
