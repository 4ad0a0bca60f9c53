//! Simulated dataset families.
//!
//! * [`sim1`]: popularity-only data whose search-side distribution is a
//!   shuffled copy of the recommendation-side Zipf distribution.
//! * [`sim2`]: clustered co-occurrence data with a tunable fraction of
//!   cluster-consistent queries.
//! * [`sim3`]: paraphrased topic queries with a tunable share of user item
//!   pairs that also co-occur in a relevance set.

pub mod sim1;
pub mod sim2;
pub mod sim3;
mod words;

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ItemId, RecDataset, SearchDataset};
use crate::error::{Error, Result};
use crate::stats;

pub use sim1::{generate_sim1, Sim1Config, Sim1Output};
pub use sim2::{generate_sim2, Sim2Config, Sim2Output};
pub use sim3::{generate_sim3, Sim3Config, Sim3Output, TopicSpec};

/// Probability vector over the catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PopularityDistribution {
    probs: Vec<f64>,
}

impl PopularityDistribution {
    /// Validates that `probs` is a distribution (nonnegative, sums to 1
    /// within 1e-12).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Data("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Data("distribution entries must be finite and nonnegative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Data(format!("distribution sums to {sum}, not 1")));
        }
        Ok(PopularityDistribution { probs })
    }

    /// Normalizes `counts + smoothing`.
    pub fn from_counts(counts: &[f64], smoothing: f64) -> Result<Self> {
        let total: f64 = counts.iter().map(|c| c + smoothing).sum();
        if counts.is_empty() || total <= 0.0 {
            return Err(Error::Data("cannot normalize empty counts".into()));
        }
        Self::new(counts.iter().map(|c| (c + smoothing) / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        PopularityDistribution {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `w * self + (1 - w) * other`.
    pub fn mixture(&self, other: &Self, w: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Data("mixture of distributions over different catalogs".into()));
        }
        let probs: Vec<f64> = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| w * a + (1.0 - w) * b)
            .collect();
        let s: f64 = probs.iter().sum();
        Self::new(probs.into_iter().map(|p| p / s).collect())
    }

    /// Items ordered by decreasing probability, ties by ascending id.
    pub fn ranking(&self) -> Vec<ItemId> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx.into_iter().map(ItemId::from).collect()
    }

    pub fn sampler(&self) -> Result<ItemSampler> {
        let index = WeightedIndex::new(&self.probs)
            .map_err(|e| Error::Data(format!("cannot sample from distribution: {e}")))?;
        Ok(ItemSampler { index })
    }
}

pub struct ItemSampler {
    index: WeightedIndex<f64>,
}

impl ItemSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ItemId {
        ItemId::from(self.index.sample(rng))
    }
}

/// Deterministic RNG for one named stream of a seeded generator. Streams
/// keep independent parts of a dataset stable when other parts change.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `p_i ∝ 1 / (i+1)^s`.
pub fn zipf_distribution(n: usize, s: f64) -> Result<PopularityDistribution> {
    if n == 0 {
        return Err(Error::Config("zipf distribution needs at least one item".into()));
    }
    if !(s >= 0.0) {
        return Err(Error::Config(format!("zipf exponent must be >= 0, got {s}")));
    }
    let weights: Vec<f64> = (0..n).map(|i| ((i + 1) as f64).powf(-s)).collect();
    let total: f64 = weights.iter().sum();
    PopularityDistribution::new(weights.into_iter().map(|w| w / total).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShuffledDistribution {
    pub distribution: PopularityDistribution,
    /// KL(shuffled || base) in nats.
    pub kld: f64,
    pub transpositions: Vec<(usize, usize)>,
}

/// Applies `swaps` random transpositions to the probability vector. The
/// transposition sequence depends only on the seed, so a larger swap count
/// extends the shuffle of a smaller one.
pub fn shuffled_distribution(base: &PopularityDistribution, swaps: usize, seed: u64) -> Result<ShuffledDistribution> {
    let n = base.len();
    let mut probs = base.probs().to_vec();
    let mut rng = stream_rng(seed, 0x5_4ff1e);
    let mut transpositions = Vec::with_capacity(swaps);
    if n >= 2 {
        for _ in 0..swaps {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            probs.swap(i, j);
            transpositions.push((i, j));
        }
    }
    let distribution = PopularityDistribution::new(probs)?;
    let kld = stats::kl_divergence(&distribution, base)?;
    Ok(ShuffledDistribution {
        distribution,
        kld,
        transpositions,
    })
}

/// Percentage of unordered item pairs in user histories that co-occur in at
/// least one relevance set, averaged over users with two or more
/// interactions. Pairs are taken over positions, so a repeated item forms a
/// pair with itself.
pub fn measure_pairs_in_qrels(rec: &RecDataset, search: &SearchDataset) -> f64 {
    let mut queries_of: HashMap<ItemId, Vec<usize>> = HashMap::new();
    for (q, r) in search.records.iter().enumerate() {
        for &i in &r.relevant {
            queries_of.entry(i).or_default().push(q);
        }
    }
    let co_relevant = |a: ItemId, b: ItemId| -> bool {
        match (queries_of.get(&a), queries_of.get(&b)) {
            (Some(qa), Some(qb)) => sorted_intersects(qa, qb),
            _ => false,
        }
    };
    let mut sum = 0.0;
    let mut users = 0usize;
    for u in &rec.users {
        let items = &u.interactions;
        if items.len() < 2 {
            continue;
        }
        let mut hit = 0usize;
        let mut total = 0usize;
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                total += 1;
                if co_relevant(items[i], items[j]) {
                    hit += 1;
                }
            }
        }
        sum += hit as f64 / total as f64;
        users += 1;
    }
    if users == 0 {
        0.0
    } else {
        100.0 * sum / users as f64
    }
}

fn sorted_intersects(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => return true,
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    false
}

/// Item frequencies over the drawn sample, normalized.
pub fn empirical_distribution(items: impl IntoIterator<Item = ItemId>, n: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n];
    let mut total = 0.0;
    for i in items {
        counts[i.index()] += 1.0;
        total += 1.0;
    }
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    counts
}
