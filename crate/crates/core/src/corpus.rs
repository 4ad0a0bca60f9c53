//! Vocabularies, dataset containers and training-instance construction.
//!
//! Both tasks are reduced to the same shape: a list of input token indices
//! and a single target token, which is always the atomic ID token of an item.
//! Search inputs are query words; recommendation inputs are the ID tokens of
//! the user's history.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense catalog index of an item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for ItemId {
    fn from(i: usize) -> Self {
        ItemId(i as u32)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index into a [`Vocabulary`].
pub type TokenIndex = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Search,
    Rec,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Search => "search",
            Task::Rec => "rec",
        })
    }
}

/// Lowercases and splits on whitespace and punctuation.
pub fn tokenize_text(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

pub const PAD: &str = "<pad>";
pub const SEP: &str = "<sep>";
pub const EOS: &str = "<eos>";

/// Token layout: three special tokens, then the sorted text tokens, then one
/// atomic ID token per item in ascending [`ItemId`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    text_tokens: Vec<String>,
    text_index: HashMap<String, TokenIndex>,
    num_items: usize,
}

impl Vocabulary {
    pub const PAD: TokenIndex = 0;
    pub const SEP: TokenIndex = 1;
    pub const EOS: TokenIndex = 2;
    const NUM_SPECIAL: usize = 3;

    /// Builds a vocabulary from an explicit word list. Words are deduplicated
    /// and sorted.
    pub fn new<I, S>(words: I, num_items: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if num_items == 0 {
            return Err(Error::Data("catalog is empty".into()));
        }
        let set: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        let text_tokens: Vec<String> = set.into_iter().collect();
        let text_index = text_tokens
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + Self::NUM_SPECIAL))
            .collect();
        Ok(Vocabulary {
            text_tokens,
            text_index,
            num_items,
        })
    }

    pub fn len(&self) -> usize {
        Self::NUM_SPECIAL + self.text_tokens.len() + self.num_items
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn text_tokens(&self) -> &[String] {
        &self.text_tokens
    }

    /// First token index of the item segment.
    pub fn item_offset(&self) -> TokenIndex {
        Self::NUM_SPECIAL + self.text_tokens.len()
    }

    /// The atomic ID strategy: one token per item.
    pub fn item_token(&self, item: ItemId) -> TokenIndex {
        debug_assert!(item.index() < self.num_items);
        self.item_offset() + item.index()
    }

    pub fn item_of(&self, token: TokenIndex) -> Option<ItemId> {
        let off = self.item_offset();
        (token >= off && token < off + self.num_items).then(|| ItemId::from(token - off))
    }

    pub fn text_token(&self, word: &str) -> Option<TokenIndex> {
        self.text_index.get(word).copied()
    }

    pub fn is_text_token(&self, token: TokenIndex) -> bool {
        token >= Self::NUM_SPECIAL && token < self.item_offset()
    }

    pub fn is_item_token(&self, token: TokenIndex) -> bool {
        self.item_of(token).is_some()
    }

    pub fn token_str(&self, token: TokenIndex) -> Option<String> {
        match token {
            Self::PAD => Some(PAD.to_string()),
            Self::SEP => Some(SEP.to_string()),
            Self::EOS => Some(EOS.to_string()),
            t if self.is_text_token(t) => Some(self.text_tokens[t - Self::NUM_SPECIAL].clone()),
            t => self.item_of(t).map(|i| format!("<item_{i}>")),
        }
    }

    /// Maps a query to in-vocabulary word tokens; unknown words are dropped.
    pub fn encode_query(&self, text: &str) -> Vec<TokenIndex> {
        tokenize_text(text)
            .iter()
            .filter_map(|w| self.text_token(w))
            .collect()
    }

    /// Stable fingerprint of the token layout, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.text_tokens {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        h.update((self.num_items as u64).to_le_bytes());
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub query: String,
    pub relevant: Vec<ItemId>,
    pub split: Split,
}

impl SearchRecord {
    /// Sorts and deduplicates the relevance set.
    pub fn new(query: impl Into<String>, relevant: impl IntoIterator<Item = ItemId>, split: Split) -> Self {
        let set: BTreeSet<ItemId> = relevant.into_iter().collect();
        SearchRecord {
            query: query.into(),
            relevant: set.into_iter().collect(),
            split,
        }
    }
}

/// Query to relevant-item-set records.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SearchDataset {
    pub records: Vec<SearchRecord>,
}

impl SearchDataset {
    pub fn new(records: Vec<SearchRecord>) -> Self {
        SearchDataset { records }
    }

    pub fn subset(&self, split: Split) -> SearchDataset {
        SearchDataset {
            records: self.records.iter().filter(|r| r.split == split).cloned().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of (query, relevant item) pairs.
    pub fn num_pairs(&self) -> usize {
        self.records.iter().map(|r| r.relevant.len()).sum()
    }

    pub fn max_item(&self) -> Option<ItemId> {
        self.records.iter().flat_map(|r| r.relevant.iter().copied()).max()
    }

    /// Checks the record-level invariants: nonempty duplicate-free relevance
    /// sets and query texts that never cross splits.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for r in &self.records {
            if r.relevant.is_empty() {
                return Err(Error::Data(format!("query {:?} has no relevant items", r.query)));
            }
            let uniq: HashSet<_> = r.relevant.iter().collect();
            if uniq.len() != r.relevant.len() {
                return Err(Error::Data(format!("query {:?} lists an item twice", r.query)));
            }
            if let Some(prev) = seen.insert(r.query.as_str(), r.split) {
                if prev != r.split {
                    return Err(Error::Data(format!(
                        "query {:?} appears in both {prev} and {} splits",
                        r.query, r.split
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user: u64,
    pub interactions: Vec<ItemId>,
}

/// Time-ordered interaction sequences.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecDataset {
    pub users: Vec<UserHistory>,
}

impl RecDataset {
    pub fn new(users: Vec<UserHistory>) -> Self {
        RecDataset { users }
    }

    pub fn num_interactions(&self) -> usize {
        self.users.iter().map(|u| u.interactions.len()).sum()
    }

    pub fn max_item(&self) -> Option<ItemId> {
        self.users.iter().flat_map(|u| u.interactions.iter().copied()).max()
    }
}

/// Builds the shared vocabulary over a catalog of `num_items` items.
pub fn build_vocabulary(search: &SearchDataset, rec: &RecDataset, num_items: usize) -> Result<Vocabulary> {
    if num_items == 0 {
        return Err(Error::Data("catalog is empty".into()));
    }
    let max = search.max_item().into_iter().chain(rec.max_item()).max();
    if let Some(m) = max {
        if m.index() >= num_items {
            return Err(Error::Data(format!(
                "item {m} is outside the catalog of {num_items} items"
            )));
        }
    }
    let words = search.records.iter().flat_map(|r| tokenize_text(&r.query));
    Vocabulary::new(words, num_items)
}

/// Input token sequence paired with an item target.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TrainingInstance {
    pub input: Vec<TokenIndex>,
    pub target: TokenIndex,
    pub task: Task,
}

/// One (query, item) instance per relevant item of every record.
pub fn search_instances(data: &SearchDataset, vocab: &Vocabulary) -> Result<Vec<TrainingInstance>> {
    let mut out = Vec::with_capacity(data.num_pairs());
    for r in &data.records {
        let input = vocab.encode_query(&r.query);
        if input.is_empty() {
            return Err(Error::EmptyQuery { query: r.query.clone() });
        }
        for &item in &r.relevant {
            if item.index() >= vocab.num_items() {
                return Err(Error::VocabularyMismatch(format!("item {item} not in vocabulary")));
            }
            out.push(TrainingInstance {
                input: input.clone(),
                target: vocab.item_token(item),
                task: Task::Search,
            });
        }
    }
    Ok(out)
}

/// History to next-item example, kept in item space for analysis.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RecExample {
    pub user: u64,
    pub history: Vec<ItemId>,
    pub target: ItemId,
}

impl RecExample {
    pub fn to_instance(&self, vocab: &Vocabulary) -> TrainingInstance {
        TrainingInstance {
            input: self.history.iter().map(|&i| vocab.item_token(i)).collect(),
            target: vocab.item_token(self.target),
            task: Task::Rec,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecSplit {
    pub train: Vec<RecExample>,
    pub validation: Vec<RecExample>,
    pub test: Vec<RecExample>,
    /// Users dropped for having fewer than five interactions.
    pub skipped: Vec<u64>,
}

impl RecSplit {
    pub fn train_instances(&self, vocab: &Vocabulary) -> Vec<TrainingInstance> {
        self.train.iter().map(|e| e.to_instance(vocab)).collect()
    }

    pub fn test_instances(&self, vocab: &Vocabulary) -> Vec<TrainingInstance> {
        self.test.iter().map(|e| e.to_instance(vocab)).collect()
    }
}

pub const MIN_USER_LENGTH: usize = 5;

/// Leave-last-out split. For a user with `t` interactions the test example
/// predicts item `t` from the first `t-1`, validation predicts item `t-1`,
/// and training predicts every item `k` in `3..=t-2` from its prefix.
pub fn rec_split(data: &RecDataset) -> RecSplit {
    let mut split = RecSplit::default();
    for u in &data.users {
        let items = &u.interactions;
        let t = items.len();
        if t < MIN_USER_LENGTH {
            log::warn!("user {} has {t} interactions, need at least {MIN_USER_LENGTH}; skipped", u.user);
            split.skipped.push(u.user);
            continue;
        }
        let example = |k: usize| RecExample {
            user: u.user,
            history: items[..k - 1].to_vec(),
            target: items[k - 1],
        };
        split.train.extend((3..=t - 2).map(example));
        split.validation.push(example(t - 1));
        split.test.push(example(t));
    }
    split
}

fn check_instances(instances: &[TrainingInstance], vocab: &Vocabulary) -> Result<()> {
    for inst in instances {
        if !vocab.is_item_token(inst.target) {
            return Err(Error::VocabularyMismatch(format!(
                "target token {} is not an item token",
                inst.target
            )));
        }
        let ok = match inst.task {
            Task::Search => inst.input.iter().all(|&t| vocab.is_text_token(t)),
            Task::Rec => inst.input.iter().all(|&t| vocab.is_item_token(t)),
        };
        if !ok || inst.input.is_empty() {
            return Err(Error::VocabularyMismatch(format!(
                "{} instance input {:?} does not fit the vocabulary",
                inst.task, inst.input
            )));
        }
    }
    Ok(())
}

/// Shuffled union of both tasks' instances.
pub fn joint_instances(
    search: &[TrainingInstance],
    rec: &[TrainingInstance],
    vocab: &Vocabulary,
    seed: u64,
) -> Result<Vec<TrainingInstance>> {
    joint_instances_weighted(search, rec, vocab, seed, 1, 1)
}

/// Like [`joint_instances`], repeating each task's instances the given
/// number of times before shuffling.
pub fn joint_instances_weighted(
    search: &[TrainingInstance],
    rec: &[TrainingInstance],
    vocab: &Vocabulary,
    seed: u64,
    search_factor: usize,
    rec_factor: usize,
) -> Result<Vec<TrainingInstance>> {
    check_instances(search, vocab)?;
    check_instances(rec, vocab)?;
    let mut all = Vec::with_capacity(search.len() * search_factor + rec.len() * rec_factor);
    for _ in 0..search_factor {
        all.extend_from_slice(search);
    }
    for _ in 0..rec_factor {
        all.extend_from_slice(rec);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    Ok(all)
}

/// Reports test items that never occur in the training data of their own
/// task.
pub fn uncovered_test_items(search: &SearchDataset, split: &RecSplit) -> Vec<(Task, ItemId)> {
    let search_train: HashSet<ItemId> = search
        .records
        .iter()
        .filter(|r| r.split == Split::Train)
        .flat_map(|r| r.relevant.iter().copied())
        .collect();
    let mut missing: BTreeSet<(Task, ItemId)> = BTreeSet::new();
    for r in search.records.iter().filter(|r| r.split == Split::Test) {
        for &i in &r.relevant {
            if !search_train.contains(&i) {
                missing.insert((Task::Search, i));
            }
        }
    }
    let rec_train: HashSet<ItemId> = split
        .train
        .iter()
        .flat_map(|e| e.history.iter().copied().chain([e.target]))
        .collect();
    for e in &split.test {
        if !rec_train.contains(&e.target) {
            missing.insert((Task::Rec, e.target));
        }
    }
    missing.into_iter().collect()
}

/// Keeps a deterministic `fraction` of the instances, in their original
/// order.
pub fn subsample_instances(instances: &[TrainingInstance], fraction: f64, seed: u64) -> Result<Vec<TrainingInstance>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("sample fraction must lie in (0, 1], got {fraction}")));
    }
    let keep = (fraction * instances.len() as f64).round() as usize;
    let mut idx: Vec<usize> = (0..instances.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SUBSAMPLE_STREAM);
    idx.shuffle(&mut rng);
    idx.truncate(keep);
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| instances[i].clone()).collect())
}

const SUBSAMPLE_STREAM: u64 = 3;

/// Keeps the first `cap` instances of every target, in order.
pub fn cap_per_item(instances: &[TrainingInstance], cap: usize) -> Vec<TrainingInstance> {
    let mut seen: HashMap<TokenIndex, usize> = HashMap::new();
    instances
        .iter()
        .filter(|inst| {
            let c = seen.entry(inst.target).or_default();
            *c += 1;
            *c <= cap
        })
        .cloned()
        .collect()
}
