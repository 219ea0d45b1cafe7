//! Urn sampling of the standard coalescent and closed-form moments of the
//! internal tree length.

use num_rational::Ratio;
use rand::Rng;

use crate::error::{Error, Result};
use crate::treespace::{Label, Matching, Mode};

/// A labeled tree drawn by the urn, with the red-ball count after each merger.
#[derive(Clone, Debug)]
pub struct UrnTrace {
    pub n: usize,
    pub matching: Matching,
    /// `R_1, …, R_{n−1}`.
    pub red_counts: Vec<usize>,
}

impl UrnTrace {
    /// `Σ_{k=1}^{n−2} R_k`.
    pub fn red_sum(&self) -> usize {
        self.red_counts[..self.n - 2].iter().sum()
    }
}

/// Draws a labeled ranked tree from the standard coalescent.
///
/// The urn starts with `ℓ1..ℓn`; merger `k` removes a uniformly chosen
/// unordered pair and, for `k ≤ n − 2`, adds interior ball `k`.
pub fn urn_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<UrnTrace> {
    if n < 2 {
        return Err(Error::InvalidParam(format!("n must be at least 2, got {n}")));
    }
    let mut urn: Vec<Label> = (1..=n).map(|i| Label::NamedLeaf(i as u16)).collect();
    let mut pairs = Vec::with_capacity(n - 1);
    let mut red_counts = Vec::with_capacity(n - 1);
    let mut red = 0usize;
    for k in 1..n {
        let size = urn.len();
        let a = rng.random_range(0..size);
        let mut b = rng.random_range(0..size - 1);
        if b >= a {
            b += 1;
        }
        let (hi, lo) = (a.max(b), a.min(b));
        let first = urn.swap_remove(hi);
        let second = urn.swap_remove(lo);
        red -= usize::from(!first.is_leaf()) + usize::from(!second.is_leaf());
        pairs.push([first, second]);
        if k <= n - 2 {
            urn.push(Label::Interior(k as u16));
        }
        red += 1;
        red_counts.push(red);
    }
    Ok(UrnTrace { n, matching: Matching::new(n, Mode::Labeled, pairs), red_counts })
}

/// Closed-form `E[R_k]` and `Cov(R_k, R_l)` for `k ≤ l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RedBallMoments {
    pub mean_k: Ratio<i64>,
    pub cov_kl: Ratio<i64>,
}

pub fn red_ball_moments(n: usize, k: usize, l: usize) -> Result<RedBallMoments> {
    if n < 3 || k < 1 || k > l || l > n - 2 {
        return Err(Error::IndexOutOfRange(format!("need 1 ≤ k ≤ l ≤ n−2, got n={n}, k={k}, l={l}")));
    }
    let (n, k, l) = (n as i64, k as i64, l as i64);
    Ok(RedBallMoments {
        mean_k: Ratio::new(k * (n - k), n - 1),
        cov_kl: Ratio::new(k * (k - 1) * (n - l) * (n - l - 1), (n - 1) * (n - 1) * (n - 2)),
    })
}

/// Stationary mean and variance of the internal tree length:
/// `(n² + n − 6)/6` and `n(n + 1)(n − 3)/90`.
pub fn phi_moments(n: usize) -> Result<(Ratio<i64>, Ratio<i64>)> {
    if n < 3 {
        return Err(Error::InvalidParam(format!("phi moments need n ≥ 3, got {n}")));
    }
    let n = n as i64;
    Ok((Ratio::new(n * n + n - 6, 6), Ratio::new(n * (n + 1) * (n - 3), 90)))
}

/// The two pieces of `E[φ²]`: `Σ_k E[R_k²]` and `2 Σ_{k<l} E[R_k R_l]`.
pub fn phi_second_moment_parts(n: usize) -> Result<(Ratio<i64>, Ratio<i64>)> {
    if n < 3 {
        return Err(Error::InvalidParam(format!("n must be at least 3, got {n}")));
    }
    let n = n as i64;
    Ok((
        Ratio::new(n * n * n + 3 * n * n + 2 * n - 30, 30),
        Ratio::new((n - 3) * (5 * n * n * n + 21 * n * n - 14 * n - 120), 180),
    ))
}

/// Running mean and variance (Welford) of a scalar stream.
#[derive(Clone, Copy, Debug, Default)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / total as f64;
        self.m2 += other.m2 + delta * delta * (self.count as f64 * other.count as f64) / total as f64;
        self.count = total;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Sample variance of `xs` with its standard error, from central moments.
pub fn variance_with_error(xs: &[f64]) -> (f64, f64) {
    let len = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / len;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in xs {
        let d = (x - mean) * (x - mean);
        m2 += d;
        m4 += d * d;
    }
    let var = m2 / (len - 1.0);
    let m4 = m4 / len;
    let pop = m2 / len;
    (var, ((m4 - pop * pop) / len).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_leaves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let t = urn_sample(2, &mut rng).unwrap();
            assert_eq!(t.matching, Matching::caterpillar(2, Mode::Labeled));
            assert_eq!(t.red_counts, vec![1]);
        }
    }

    #[test]
    fn traces_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 3..30 {
            for _ in 0..50 {
                let t = urn_sample(n, &mut rng).unwrap();
                assert!(t.matching.validate());
                assert_eq!(t.red_sum(), t.matching.internal_tree_length());
                assert_eq!(t.red_counts, t.matching.red_counts());
                for (k0, &r) in t.red_counts.iter().enumerate() {
                    let k = k0 + 1;
                    assert!(r <= k.min(n - k));
                }
                assert_eq!(*t.red_counts.last().unwrap(), 1);
            }
        }
    }

    #[test]
    fn closed_forms() {
        let m = red_ball_moments(7, 3, 3).unwrap();
        assert_eq!(m.mean_k, Ratio::from_integer(2));
        assert_eq!(red_ball_moments(7, 2, 3).unwrap().cov_kl, Ratio::new(2, 15));
        for l in 1..=8 {
            assert_eq!(red_ball_moments(10, 1, l).unwrap().cov_kl, Ratio::from_integer(0));
        }
        assert!(red_ball_moments(7, 3, 2).is_err());
        assert!(red_ball_moments(7, 0, 2).is_err());
        assert!(red_ball_moments(7, 2, 6).is_err());

        let (mean, var) = phi_moments(7).unwrap();
        assert_eq!(mean, Ratio::new(50, 6));
        assert_eq!(var, Ratio::new(224, 90));
        assert_eq!(phi_moments(3).unwrap().1, Ratio::from_integer(0));
        assert!(phi_moments(2).is_err());
    }

    #[test]
    fn parts_recombine_to_variance() {
        for n in 3..40 {
            let (mean, var) = phi_moments(n).unwrap();
            let (sq, cross) = phi_second_moment_parts(n).unwrap();
            assert_eq!(sq + cross - mean * mean, var, "n = {n}");
        }
    }

    #[test]
    fn welford_merge() {
        let xs: Vec<f64> = (0..100).map(|i| (i * 7 % 13) as f64).collect();
        let mut all = Moments::default();
        xs.iter().for_each(|&x| all.push(x));
        let (mut a, mut b) = (Moments::default(), Moments::default());
        xs[..40].iter().for_each(|&x| a.push(x));
        xs[40..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert!((a.mean() - all.mean()).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-10);
        let (v, _) = variance_with_error(&xs);
        assert!((v - all.variance()).abs() < 1e-10);
    }
}
