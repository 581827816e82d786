//! Independent regression oracle and seeded score generators.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Neumaier-compensated sum, independent of the library's plain sums.
pub fn nsum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

/// Closed-form least squares through the origin and its R² about the mean.
pub fn oracle(pairs: &[(f64, f64)]) -> (f64, f64) {
    let g = nsum(pairs.iter().map(|(x, y)| x * y)) / nsum(pairs.iter().map(|(x, _)| x * x));
    let my = nsum(pairs.iter().map(|p| p.1)) / pairs.len() as f64;
    let res = nsum(pairs.iter().map(|(x, y)| (y - g * x).powi(2)));
    let tot = nsum(pairs.iter().map(|(_, y)| (y - my).powi(2)));
    (g, 1.0 - res / tot)
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Box–Muller standard normal.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u = 1.0 - uniform(rng);
    let v = uniform(rng);
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// 200 points with `real = 0.98 · hyp + N(0, 0.5²)`, hyp uniform on [10, 90].
pub fn noisy_points(seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..200)
        .map(|_| {
            let hyp = 10.0 + 80.0 * uniform(&mut rng);
            (hyp, 0.98 * hyp + 0.5 * normal(&mut rng))
        })
        .collect()
}
