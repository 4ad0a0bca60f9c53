//! Paraphrased-topic simulation.
//!
//! Every topic owns a disjoint set of relevant items and a handful of
//! paraphrased queries; one paraphrase per topic is held out for testing and
//! judged against the full relevant set. Training paraphrases may carry only
//! part of the judgments. Recommendation users either stay inside one topic's
//! relevant set (all of their item pairs co-occur in a relevance set) or mix
//! items from distinct topics (none do), in proportions that realise the
//! requested pairs-in-qrels percentage.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{measure_pairs_in_qrels, stream_rng, words};
use crate::corpus::{ItemId, RecDataset, SearchDataset, SearchRecord, Split, UserHistory, MIN_USER_LENGTH};
use crate::error::{Error, Result};

const TOPIC_STREAM: u64 = 1;
const REC_STREAM: u64 = 2;

/// Allowed gap, in percentage points, between requested and measured
/// pairs-in-qrels.
pub const PAIRS_TOLERANCE: f64 = 5.0;

/// Paraphrases of one topic, as read from a topics file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSpec {
    pub paraphrases: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sim3Config {
    pub num_topics: usize,
    pub paraphrases_per_topic: usize,
    pub relevant_items_per_topic: usize,
    /// Judged items per training paraphrase; `None` judges the full set.
    pub labels_per_train_query: Option<usize>,
    pub pairs_in_qrels_pct: f64,
    pub num_users: usize,
    pub interactions_per_user: usize,
    pub seed: u64,
    /// Replaces the built-in template bank.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topics: Option<Vec<TopicSpec>>,
}

impl Default for Sim3Config {
    fn default() -> Self {
        Sim3Config {
            num_topics: 10,
            paraphrases_per_topic: 5,
            relevant_items_per_topic: 5,
            labels_per_train_query: Some(2),
            pairs_in_qrels_pct: 1.0,
            num_users: 80,
            interactions_per_user: 5,
            seed: 0,
            topics: None,
        }
    }
}

impl Sim3Config {
    pub fn validate(&self) -> Result<()> {
        if self.relevant_items_per_topic < 2 {
            return Err(Error::Config(
                "relevant_items_per_topic must be at least 2 so within-topic pairs exist".into(),
            ));
        }
        if self.num_topics == 0 {
            return Err(Error::Config("sim3 needs at least one topic".into()));
        }
        if self.paraphrases_per_topic < 2 {
            return Err(Error::Config("need a test paraphrase and at least one training paraphrase".into()));
        }
        if !(0.0..=1.0).contains(&self.pairs_in_qrels_pct) {
            return Err(Error::Config("pairs_in_qrels_pct must lie in [0, 1]".into()));
        }
        if self.interactions_per_user < MIN_USER_LENGTH {
            return Err(Error::Config(format!(
                "interactions_per_user must be at least {MIN_USER_LENGTH}"
            )));
        }
        if self.pairs_in_qrels_pct > 0.0 && self.interactions_per_user > self.relevant_items_per_topic {
            return Err(Error::Config(
                "topic users need interactions_per_user <= relevant_items_per_topic".into(),
            ));
        }
        if self.pairs_in_qrels_pct < 1.0 && self.interactions_per_user > self.num_topics {
            return Err(Error::Config("mixed users need interactions_per_user <= num_topics".into()));
        }
        if let Some(m) = self.labels_per_train_query {
            let train = self.paraphrases_per_topic - 1;
            if m == 0 || m > self.relevant_items_per_topic || m * train < self.relevant_items_per_topic {
                return Err(Error::Config(format!(
                    "labels_per_train_query = {m} cannot cover {} items with {train} training paraphrases",
                    self.relevant_items_per_topic
                )));
            }
        }
        match &self.topics {
            Some(t) => {
                if t.len() < self.num_topics {
                    return Err(Error::Config(format!(
                        "topics file has {} topics, need {}",
                        t.len(),
                        self.num_topics
                    )));
                }
                if let Some(bad) = t.iter().position(|t| t.paraphrases.len() < self.paraphrases_per_topic) {
                    return Err(Error::Config(format!("topic {bad} has too few paraphrases")));
                }
            }
            None if self.num_topics > words::TOPIC_BANK.len() => {
                return Err(Error::Config(format!(
                    "built-in template bank has {} topics",
                    words::TOPIC_BANK.len()
                )));
            }
            None => {}
        }
        Ok(())
    }

    pub fn num_items(&self) -> usize {
        self.num_topics * self.relevant_items_per_topic
    }

    pub fn search_train_instances(&self) -> usize {
        let per_query = self.labels_per_train_query.unwrap_or(self.relevant_items_per_topic);
        self.num_topics * (self.paraphrases_per_topic - 1) * per_query
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sim3Meta {
    pub config: Sim3Config,
    /// Relevant items of every topic.
    pub topic_items: Vec<Vec<ItemId>>,
    pub test_queries: Vec<String>,
    pub topic_users: usize,
    pub achieved_pairs_in_qrels: f64,
    pub rec_train_instances: usize,
    pub search_train_instances: usize,
}

#[derive(Clone, Debug)]
pub struct Sim3Output {
    pub rec: RecDataset,
    pub search: SearchDataset,
    pub meta: Sim3Meta,
}

fn template_paraphrases<R: Rng>(template: &[&[&str]], count: usize, rng: &mut R) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut words: Vec<&str> = template
            .iter()
            .map(|slot| *slot.choose(rng).expect("template slots are nonempty"))
            .collect();
        if rng.random::<bool>() {
            words.push(words::GENERIC.choose(rng).expect("generic words"));
        }
        words.shuffle(rng);
        let text = words.join(" ");
        if seen.insert(text.clone()) {
            out.push(text);
        }
    }
    out
}

pub fn generate_sim3(cfg: &Sim3Config) -> Result<Sim3Output> {
    cfg.validate()?;
    let r = cfg.relevant_items_per_topic;
    let mut rng = stream_rng(cfg.seed, TOPIC_STREAM);

    let paraphrases: Vec<Vec<String>> = match &cfg.topics {
        Some(t) => t[..cfg.num_topics]
            .iter()
            .map(|t| t.paraphrases[..cfg.paraphrases_per_topic].to_vec())
            .collect(),
        None => {
            let mut bank: Vec<usize> = (0..words::TOPIC_BANK.len()).collect();
            bank.shuffle(&mut rng);
            bank[..cfg.num_topics]
                .iter()
                .map(|&t| template_paraphrases(words::TOPIC_BANK[t], cfg.paraphrases_per_topic, &mut rng))
                .collect()
        }
    };

    let mut items: Vec<ItemId> = (0..cfg.num_items()).map(ItemId::from).collect();
    items.shuffle(&mut rng);
    let topic_items: Vec<Vec<ItemId>> = items.chunks(r).map(|c| {
        let mut c = c.to_vec();
        c.sort();
        c
    }).collect();

    let mut records = Vec::new();
    let mut test_queries = Vec::new();
    for (t, texts) in paraphrases.iter().enumerate() {
        let test = rng.random_range(0..texts.len());
        let mut order = topic_items[t].clone();
        order.shuffle(&mut rng);
        let mut j = 0;
        for (p, text) in texts.iter().enumerate() {
            if p == test {
                records.push(SearchRecord::new(text.clone(), order.iter().copied(), Split::Test));
                test_queries.push(text.clone());
                continue;
            }
            let judged: Vec<ItemId> = match cfg.labels_per_train_query {
                Some(m) => (0..m).map(|k| order[(j * m + k) % r]).collect(),
                None => order.clone(),
            };
            j += 1;
            records.push(SearchRecord::new(text.clone(), judged, Split::Train));
        }
    }
    let search = SearchDataset::new(records);
    search.validate()?;
    let distinct: HashSet<&str> = search.records.iter().map(|r| r.query.as_str()).collect();
    if distinct.len() != search.len() {
        return Err(Error::Data("paraphrases collide across topics".into()));
    }

    let mut rng = stream_rng(cfg.seed, REC_STREAM);
    let topic_users = (cfg.pairs_in_qrels_pct * cfg.num_users as f64).round() as usize;
    let mut users: Vec<Vec<ItemId>> = Vec::with_capacity(cfg.num_users);
    for u in 0..cfg.num_users {
        let interactions = if u < topic_users {
            let t = rng.random_range(0..cfg.num_topics);
            topic_items[t]
                .choose_multiple(&mut rng, cfg.interactions_per_user)
                .copied()
                .collect()
        } else {
            let topics: Vec<usize> = (0..cfg.num_topics).collect();
            topics
                .choose_multiple(&mut rng, cfg.interactions_per_user)
                .map(|&t| *topic_items[t].choose(&mut rng).expect("topics are nonempty"))
                .collect::<Vec<_>>()
        };
        let mut interactions = interactions;
        interactions.shuffle(&mut rng);
        users.push(interactions);
    }
    users.shuffle(&mut rng);
    let rec = RecDataset::new(
        users
            .into_iter()
            .enumerate()
            .map(|(u, interactions)| UserHistory { user: u as u64, interactions })
            .collect(),
    );

    let achieved = measure_pairs_in_qrels(&rec, &search);
    let target = 100.0 * cfg.pairs_in_qrels_pct;
    if (achieved - target).abs() > PAIRS_TOLERANCE {
        return Err(Error::Data(format!(
            "achieved {achieved:.2}% pairs in qrels, target {target:.2}%"
        )));
    }
    let meta = Sim3Meta {
        config: cfg.clone(),
        topic_items,
        test_queries,
        topic_users,
        achieved_pairs_in_qrels: achieved,
        rec_train_instances: cfg.num_users * (cfg.interactions_per_user - 4),
        search_train_instances: search.subset(Split::Train).num_pairs(),
    };
    Ok(Sim3Output { rec, search, meta })
}
