//! Popularity-only simulation.
//!
//! Recommendation targets are i.i.d. draws from a Zipf distribution, so item
//! popularity is the only learnable signal. Search queries are built from a
//! fixed pool of filler words and each points to one item drawn from a
//! shuffled copy of the same distribution.

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::{shuffled_distribution, stream_rng, words, zipf_distribution, PopularityDistribution};
use crate::corpus::{RecDataset, SearchDataset, SearchRecord, Split, UserHistory, MIN_USER_LENGTH};
use crate::error::{Error, Result};
use crate::stats::{self, PopularityProfile};

const REC_STREAM: u64 = 1;
const QUERY_STREAM: u64 = 2;
const QUERY_WORDS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sim1Config {
    pub num_items: usize,
    pub zipf_exponent: f64,
    pub num_users: usize,
    pub interactions_per_user: usize,
    pub num_queries: usize,
    pub shuffle_swaps: usize,
    pub seed: u64,
}

impl Default for Sim1Config {
    fn default() -> Self {
        Sim1Config {
            num_items: 20,
            zipf_exponent: 1.0,
            num_users: 1000,
            interactions_per_user: 9,
            num_queries: 5000,
            shuffle_swaps: 0,
            seed: 0,
        }
    }
}

impl Sim1Config {
    pub fn validate(&self) -> Result<()> {
        if self.num_items < 2 {
            return Err(Error::Config("sim1 needs at least 2 items".into()));
        }
        if !(self.zipf_exponent >= 0.0) {
            return Err(Error::Config("zipf exponent must be >= 0".into()));
        }
        if self.interactions_per_user < MIN_USER_LENGTH {
            return Err(Error::Config(format!(
                "interactions_per_user must be at least {MIN_USER_LENGTH}"
            )));
        }
        Ok(())
    }

    pub fn rec_train_instances(&self) -> usize {
        self.num_users * (self.interactions_per_user - 4)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sim1Meta {
    pub config: Sim1Config,
    pub base: PopularityDistribution,
    pub search_distribution: PopularityDistribution,
    /// KL(search distribution || base) of the generating distributions.
    pub achieved_kld: f64,
    /// KL between the empirical search and recommendation profiles.
    pub empirical_kld_sr: f64,
    pub rec_train_instances: usize,
    pub search_train_instances: usize,
}

#[derive(Clone, Debug)]
pub struct Sim1Output {
    pub rec: RecDataset,
    pub search: SearchDataset,
    pub meta: Sim1Meta,
}

pub fn generate_sim1(cfg: &Sim1Config) -> Result<Sim1Output> {
    cfg.validate()?;
    let base = zipf_distribution(cfg.num_items, cfg.zipf_exponent)?;
    let shuffled = shuffled_distribution(&base, cfg.shuffle_swaps, cfg.seed)?;
    let (rec, search) = sample_sim1(cfg, &base, &shuffled.distribution)?;

    let sp = PopularityProfile::from_search(&search, cfg.num_items)?;
    let rp = PopularityProfile::from_rec(&rec, cfg.num_items)?;
    let meta = Sim1Meta {
        config: cfg.clone(),
        base,
        search_distribution: shuffled.distribution,
        achieved_kld: shuffled.kld,
        empirical_kld_sr: stats::kl_divergence(&sp.distribution, &rp.distribution)?,
        rec_train_instances: cfg.rec_train_instances(),
        search_train_instances: search.num_pairs(),
    };
    Ok(Sim1Output { rec, search, meta })
}

/// Samples the two datasets from explicit distributions. The recommendation
/// side only depends on `rec_dist` and the seed.
pub fn sample_sim1(
    cfg: &Sim1Config,
    rec_dist: &PopularityDistribution,
    search_dist: &PopularityDistribution,
) -> Result<(RecDataset, SearchDataset)> {
    if rec_dist.len() != cfg.num_items || search_dist.len() != cfg.num_items {
        return Err(Error::Config("distribution size does not match num_items".into()));
    }
    let rec_sampler = rec_dist.sampler()?;
    let mut rng = stream_rng(cfg.seed, REC_STREAM);
    let users = (0..cfg.num_users)
        .map(|u| UserHistory {
            user: u as u64,
            interactions: (0..cfg.interactions_per_user)
                .map(|_| rec_sampler.sample(&mut rng))
                .collect(),
        })
        .collect();

    let search_sampler = search_dist.sampler()?;
    let mut rng = stream_rng(cfg.seed, QUERY_STREAM);
    let records = (0..cfg.num_queries)
        .map(|_| {
            let text: Vec<&str> = (0..QUERY_WORDS)
                .map(|_| *words::FILLER.choose(&mut rng).expect("filler pool is nonempty"))
                .collect();
            let item = search_sampler.sample(&mut rng);
            SearchRecord::new(text.join(" "), [item], Split::Train)
        })
        .collect();
    Ok((RecDataset::new(users), SearchDataset::new(records)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::empirical_distribution;

    fn small() -> Sim1Config {
        Sim1Config {
            num_users: 200,
            num_queries: 1000,
            ..Default::default()
        }
    }

    #[test]
    fn no_swaps_no_divergence() {
        let out = generate_sim1(&small()).unwrap();
        assert_eq!(out.meta.achieved_kld, 0.0);
        assert_eq!(out.meta.base, out.meta.search_distribution);
    }

    #[test]
    fn instance_counts_are_comparable() {
        let out = generate_sim1(&Sim1Config::default()).unwrap();
        let r = out.meta.rec_train_instances as f64;
        let s = out.meta.search_train_instances as f64;
        assert!((r - s).abs() / r.max(s) <= 0.05);
    }

    #[test]
    fn rec_side_ignores_swaps() {
        let a = generate_sim1(&small()).unwrap();
        let b = generate_sim1(&Sim1Config { shuffle_swaps: 6, ..small() }).unwrap();
        assert_eq!(a.rec, b.rec);
        assert!(b.meta.achieved_kld > 0.0);
    }

    #[test]
    fn rec_targets_follow_zipf() {
        let cfg = Sim1Config {
            num_items: 10,
            num_users: 20_000,
            interactions_per_user: 5,
            num_queries: 0,
            ..Default::default()
        };
        let out = generate_sim1(&cfg).unwrap();
        let draws = out.rec.users.iter().flat_map(|u| u.interactions.iter().copied());
        let emp = empirical_distribution(draws, 10);
        let l1: f64 = emp.iter().zip(out.meta.base.probs()).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 < 0.05, "l1 = {l1}");
    }

    #[test]
    fn queries_use_only_filler_words() {
        let out = generate_sim1(&small()).unwrap();
        for r in &out.search.records {
            assert_eq!(r.relevant.len(), 1);
            assert!(r.query.split(' ').all(|w| words::FILLER.contains(&w)));
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_sim1(&Sim1Config { shuffle_swaps: 3, ..small() }).unwrap();
        let b = generate_sim1(&Sim1Config { shuffle_swaps: 3, ..small() }).unwrap();
        assert_eq!(a.rec, b.rec);
        assert_eq!(a.search, b.search);
        assert_eq!(a.meta, b.meta);
    }
}
