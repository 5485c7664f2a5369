//! Uniform sampling from closed Euclidean balls.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::math::norm;

/// Random number generator owned by each solver run.
pub type SolverRng = rand_chacha::ChaCha8Rng;

/// One point drawn uniformly from `B(center, radius)`.
///
/// The direction is a normalized isotropic Gaussian vector and the distance
/// from the center is `radius * U^(1/n)`, which is exact for every `n`.
pub fn sample_point<R: Rng + ?Sized>(center: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
    let n = center.len();
    if n == 0 {
        return Vec::new();
    }
    let mut dir: Vec<f64> = loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        if norm(&v) > 0.0 {
            break v;
        }
    };
    let u: f64 = rng.random();
    let scale = radius * libm::pow(u, 1.0 / n as f64) / norm(&dir);
    for (d, c) in dir.iter_mut().zip(center) {
        *d = c + scale * *d;
    }
    dir
}

/// `count` independent points drawn uniformly from `B(center, radius)`.
pub fn sample_ball<R: Rng + ?Sized>(
    center: &[f64],
    radius: f64,
    count: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    debug_assert!(radius > 0.0);
    (0..count).map(|_| sample_point(center, radius, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::dist;
    use rand::SeedableRng;

    #[test]
    fn empty_when_count_zero() {
        let mut rng = SolverRng::seed_from_u64(1);
        assert!(sample_ball(&[1.0, 2.0], 0.5, 0, &mut rng).is_empty());
    }

    #[test]
    fn points_stay_in_ball_and_are_reproducible() {
        let c = [1.0, -2.0, 0.5];
        let a = sample_ball(&c, 0.25, 500, &mut SolverRng::seed_from_u64(9));
        let b = sample_ball(&c, 0.25, 500, &mut SolverRng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.iter().all(|p| dist(p, &c) <= 0.25 * (1.0 + 1e-15)));
    }

    #[test]
    fn radial_distribution_matches_uniform_ball() {
        // P(||p|| <= r/2) = 2^-n for the uniform ball; binomial 3-sigma band.
        for n in [1usize, 2, 3, 5] {
            let mut rng = SolverRng::seed_from_u64(42 + n as u64);
            let count = 1000;
            let pts = sample_ball(&alloc::vec![0.0; n], 1.0, count, &mut rng);
            assert!(pts.iter().all(|p| norm(p) <= 1.0));
            let inner = pts.iter().filter(|p| norm(p) <= 0.5).count() as f64 / count as f64;
            let p = libm::pow(0.5, n as f64);
            let se = libm::sqrt(p * (1.0 - p) / count as f64);
            assert!((inner - p).abs() <= 3.0 * se, "n={n}: {inner} vs {p}");
        }
    }
}
