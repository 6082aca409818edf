//! Zipf content popularity, cache misses and backhaul access.
//!
//! The cache always holds the `M` most popular files. A slot carries one
//! request per user; the backhaul is needed whenever at least one of those
//! requests falls outside the cache.

use rand::Rng;

use crate::error::{Error, Result};

/// Zipf popularity law over a finite catalog with a top-`M` cache.
#[derive(Debug, Clone)]
pub struct ZipfCatalog {
    exponent: f64,
    catalog_size: usize,
    cache_size: usize,
    normalizer: f64,
    miss: f64,
    cdf: Vec<f64>,
}

impl ZipfCatalog {
    pub fn new(exponent: f64, catalog_size: usize, cache_size: usize) -> Result<Self> {
        if !(exponent > 1.0) || !exponent.is_finite() {
            return Err(Error::Domain {
                what: "zipf exponent",
                value: exponent,
                expected: "s > 1",
            });
        }
        if catalog_size == 0 {
            return Err(Error::config("cache.catalog_size", "catalog must hold at least one file"));
        }
        if cache_size > catalog_size {
            return Err(Error::config(
                "cache.cache_size",
                format!("cache size {cache_size} exceeds catalog size {catalog_size}"),
            ));
        }

        let weights: Vec<f64> = (1..=catalog_size)
            .map(|r| (r as f64).powf(-exponent))
            .collect();
        // Smallest terms first.
        let normalizer: f64 = weights.iter().rev().sum();
        let tail: f64 = weights[cache_size..].iter().rev().sum();

        let mut cdf = Vec::with_capacity(catalog_size);
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cdf.push(acc / normalizer);
        }
        debug_assert!((cdf[catalog_size - 1] - 1.0).abs() < 1e-12);
        cdf[catalog_size - 1] = 1.0;

        Ok(Self {
            exponent,
            catalog_size,
            cache_size,
            normalizer,
            miss: tail / normalizer,
            cdf,
        })
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn catalog_size(&self) -> usize {
        self.catalog_size
    }

    pub fn cache_size(&self) -> usize {
        self.cache_size
    }

    /// Cumulative rank probabilities; entry `j - 1` is `P(rank <= j)`.
    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Probability that a request targets the file of rank `rank` (1-based).
    pub fn pmf(&self, rank: usize) -> Result<f64> {
        if rank == 0 || rank > self.catalog_size {
            return Err(Error::Domain {
                what: "rank",
                value: rank as f64,
                expected: "1 <= rank <= catalog size",
            });
        }
        Ok((rank as f64).powf(-self.exponent) / self.normalizer)
    }

    /// Probability that a single request misses the cache.
    pub fn miss_probability(&self) -> f64 {
        self.miss
    }

    /// Draws one rank by inverse-CDF lookup.
    pub fn sample_rank<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c <= u);
        idx.min(self.catalog_size - 1) + 1
    }

    /// Draws one request per user. The slot misses if any rank is uncached.
    pub fn sample_requests<R: Rng + ?Sized>(&self, rng: &mut R, n_users: usize) -> RequestDraw {
        let ranks: Vec<usize> = (0..n_users).map(|_| self.sample_rank(rng)).collect();
        let miss = ranks.iter().any(|&r| r > self.cache_size);
        RequestDraw { ranks, miss }
    }
}

/// Requests issued in one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestDraw {
    pub ranks: Vec<usize>,
    pub miss: bool,
}

/// Probability that at least one of `n_users` independent requests misses.
pub fn backhaul_access_probability(miss_probability: f64, n_users: usize) -> f64 {
    let hit = (1.0 - miss_probability).clamp(0.0, 1.0);
    1.0 - hit.powi(n_users as i32)
}
