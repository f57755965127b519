//! Portable seeded sampling. Every draw derives from 64-bit integer outputs
//! of xoshiro256** seeded through SplitMix64, so streams are identical on
//! every platform.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub struct PortableRng(Xoshiro256StarStar);

impl PortableRng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` on the 2^-53 grid.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; `lo` when the range is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `[0, bound)` by rejection; `bound > 0`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty integer range");
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % bound;
            }
        }
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below((hi - lo) as u64 + 1) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len() as u64) as usize]
    }

    /// Poisson draw by sequential inversion; intended for small means.
    pub fn poisson(&mut self, mean: f64) -> usize {
        if mean <= 0.0 {
            return 0;
        }
        let u = self.unit();
        let mut k = 0usize;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u >= cdf && k < 10_000 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            if p == 0.0 {
                break;
            }
        }
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_seeding_is_stable() {
        // First output of xoshiro256** seeded by SplitMix64(0).
        let mut a = PortableRng::new(0);
        let mut b = PortableRng::new(0);
        let x = a.next_u64();
        assert_eq!(x, b.next_u64());
        assert_ne!(x, PortableRng::new(1).next_u64());
    }

    #[test]
    fn draws_stay_in_range() {
        let mut r = PortableRng::new(7);
        for _ in 0..10_000 {
            let u = r.unit();
            assert!((0.0..1.0).contains(&u));
            assert!(r.below(3) < 3);
            let k = r.range_inclusive(2, 4);
            assert!((2..=4).contains(&k));
        }
        assert_eq!(r.range_inclusive(5, 5), 5);
        assert_eq!(r.poisson(0.0), 0);
    }

    #[test]
    fn poisson_mean_is_close() {
        let mut r = PortableRng::new(11);
        let n = 20_000;
        let total: usize = (0..n).map(|_| r.poisson(3.0)).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 3.0).abs() < 0.1, "{mean}");
    }
}
