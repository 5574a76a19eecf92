//! Seeded random streams shared by the stochastic routines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// ChaCha8 generator for `seed`, on stream `stream` (one stream per worker).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws an index from unnormalised non-negative weights by linear scan.
/// Falls back to the last positive weight when rounding leaves a remainder.
pub(crate) fn sample_weighted<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

/// Cumulative-table sampler for repeated draws from one distribution.
#[derive(Clone, Debug)]
pub(crate) struct Categorical {
    items: Vec<usize>,
    cumulative: Vec<f64>,
}

impl Categorical {
    /// `weights` pairs an item id with its non-negative weight. Returns
    /// `None` when the total weight is zero.
    pub(crate) fn new(weights: impl IntoIterator<Item = (usize, f64)>) -> Option<Self> {
        let mut items = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (item, w) in weights {
            if w > 0.0 {
                acc += w;
                items.push(item);
                cumulative.push(acc);
            }
        }
        if items.is_empty() {
            None
        } else {
            Some(Categorical { items, cumulative })
        }
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty");
        let u = rng.gen::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= u);
        self.items[k.min(self.items.len() - 1)]
    }
}
