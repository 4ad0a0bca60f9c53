//! Clustered co-occurrence simulation.
//!
//! Items are split into equally sized clusters. A user history is a run of
//! within-cluster pairs: an initial item followed by a different item of the
//! same cluster. Each cluster owns a pool of queries; every item is assigned
//! `queries_per_cluster` distinct queries, each taken from its own cluster's
//! pool with probability `query_match_pct` and from the global pool
//! otherwise.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{stream_rng, words};
use crate::corpus::{ItemId, RecDataset, SearchDataset, SearchRecord, Split, UserHistory, MIN_USER_LENGTH};
use crate::error::{Error, Result};

const REC_STREAM: u64 = 1;
const QUERY_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sim2Config {
    pub num_clusters: usize,
    pub items_per_cluster: usize,
    pub num_users: usize,
    pub interactions_per_user: usize,
    pub queries_per_cluster: usize,
    pub query_match_pct: f64,
    /// Fraction of recommendation training instances kept for training.
    pub sample_fraction: f64,
    /// Probability that a new pair starts in the cluster of the previous
    /// pair instead of at a uniformly random item.
    pub cluster_repeat: f64,
    pub seed: u64,
}

impl Default for Sim2Config {
    fn default() -> Self {
        Sim2Config {
            num_clusters: 5,
            items_per_cluster: 6,
            num_users: 150,
            interactions_per_user: 6,
            queries_per_cluster: 10,
            query_match_pct: 1.0,
            sample_fraction: 1.0,
            cluster_repeat: 0.0,
            seed: 0,
        }
    }
}

impl Sim2Config {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 || self.items_per_cluster < 2 {
            return Err(Error::Config("sim2 needs clusters of at least 2 items".into()));
        }
        if self.queries_per_cluster == 0 {
            return Err(Error::Config("queries_per_cluster must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.query_match_pct) {
            return Err(Error::Config("query_match_pct must lie in [0, 1]".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::Config("sample_fraction must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.cluster_repeat) {
            return Err(Error::Config("cluster_repeat must lie in [0, 1]".into()));
        }
        if self.even_length() < MIN_USER_LENGTH {
            return Err(Error::Config(format!(
                "interactions_per_user must be at least {}",
                MIN_USER_LENGTH + 1
            )));
        }
        Ok(())
    }

    pub fn num_items(&self) -> usize {
        self.num_clusters * self.items_per_cluster
    }

    fn even_length(&self) -> usize {
        self.interactions_per_user & !1
    }

    pub fn cluster_of(&self, item: ItemId) -> usize {
        item.index() / self.items_per_cluster
    }

    fn cluster_items(&self, c: usize) -> std::ops::Range<usize> {
        c * self.items_per_cluster..(c + 1) * self.items_per_cluster
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sim2Meta {
    pub config: Sim2Config,
    pub interactions_per_user: usize,
    /// Cluster label of every item.
    pub clusters: Vec<usize>,
    /// Share of (item, query) assignments whose query belongs to the item's
    /// own cluster pool.
    pub achieved_query_match: f64,
    /// Share of queries whose relevant items span two or more clusters.
    pub multi_cluster_queries: f64,
    pub rec_train_instances: usize,
    pub search_train_instances: usize,
}

#[derive(Clone, Debug)]
pub struct Sim2Output {
    pub rec: RecDataset,
    pub search: SearchDataset,
    pub meta: Sim2Meta,
}

pub fn generate_sim2(cfg: &Sim2Config) -> Result<Sim2Output> {
    cfg.validate()?;
    let length = cfg.even_length();
    if length != cfg.interactions_per_user {
        log::warn!(
            "interactions_per_user {} is odd; using {length}",
            cfg.interactions_per_user
        );
    }
    let n = cfg.num_items();

    let mut rng = stream_rng(cfg.seed, REC_STREAM);
    let mut users = Vec::with_capacity(cfg.num_users);
    for u in 0..cfg.num_users {
        let mut interactions = Vec::with_capacity(length);
        let mut cluster: Option<usize> = None;
        while interactions.len() < length {
            let first = match cluster {
                Some(c) if rng.random::<f64>() < cfg.cluster_repeat => {
                    ItemId::from(rng.random_range(cfg.cluster_items(c)))
                }
                _ => ItemId::from(rng.random_range(0..n)),
            };
            let c = cfg.cluster_of(first);
            let mut second = rng.random_range(cfg.cluster_items(c).start..cfg.cluster_items(c).end - 1);
            if second >= first.index() {
                second += 1;
            }
            interactions.push(first);
            interactions.push(ItemId::from(second));
            cluster = Some(c);
        }
        users.push(UserHistory {
            user: u as u64,
            interactions,
        });
    }

    let q = cfg.queries_per_cluster;
    let texts = words::pseudo_words(cfg.num_clusters * q);
    let pool = |c: usize| c * q..(c + 1) * q;
    let all: Vec<usize> = (0..texts.len()).collect();
    let mut rng = stream_rng(cfg.seed, QUERY_STREAM);
    let mut relevant: BTreeMap<usize, BTreeSet<ItemId>> = BTreeMap::new();
    let mut matched = 0usize;
    for i in 0..n {
        let item = ItemId::from(i);
        let own = pool(cfg.cluster_of(item));
        let mut chosen = BTreeSet::new();
        while chosen.len() < q {
            let query = if rng.random::<f64>() < cfg.query_match_pct {
                rng.random_range(own.clone())
            } else {
                *all.choose(&mut rng).expect("query pool is nonempty")
            };
            chosen.insert(query);
        }
        matched += chosen.iter().filter(|x| own.contains(x)).count();
        for query in chosen {
            relevant.entry(query).or_default().insert(item);
        }
    }
    let records: Vec<SearchRecord> = relevant
        .iter()
        .map(|(&query, items)| SearchRecord::new(texts[query].clone(), items.iter().copied(), Split::Train))
        .collect();
    let multi = records
        .iter()
        .filter(|r| r.relevant.iter().map(|&i| cfg.cluster_of(i)).collect::<BTreeSet<_>>().len() > 1)
        .count();

    let search = SearchDataset::new(records);
    let meta = Sim2Meta {
        config: cfg.clone(),
        interactions_per_user: length,
        clusters: (0..n).map(|i| cfg.cluster_of(ItemId::from(i))).collect(),
        achieved_query_match: matched as f64 / (n * q) as f64,
        multi_cluster_queries: multi as f64 / search.len().max(1) as f64,
        rec_train_instances: cfg.num_users * (length - 4),
        search_train_instances: search.num_pairs(),
    };
    Ok(Sim2Output {
        rec: RecDataset::new(users),
        search,
        meta,
    })
}
