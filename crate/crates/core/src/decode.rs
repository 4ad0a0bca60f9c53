//! Retrieval-time decoding.
//!
//! With atomic IDs every item is a single token and retrieval reduces to an
//! exact top-K over the item softmax ([`top_k`]). [`diverse_beam_search`]
//! handles the general case of multi-token identifiers through a
//! [`NextTokenScorer`], decoding beam groups with a Hamming diversity
//! penalty.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use crate::corpus::{ItemId, TokenIndex};
use crate::error::{Error, Result};
use crate::retriever::RetrieverParams;

/// Items with log-probability scores, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub entries: Vec<(ItemId, f64)>,
    pub k: usize,
}

impl RankedList {
    pub fn new(entries: Vec<(ItemId, f64)>, k: usize) -> Self {
        debug_assert!(entries.len() <= k);
        debug_assert!(entries.windows(2).all(|w| w[0].1 >= w[1].1));
        RankedList { entries, k }
    }

    /// Sorts by score (ties by ascending id), drops repeated items keeping
    /// their best score and truncates to `k`.
    pub fn from_unsorted(mut entries: Vec<(ItemId, f64)>, k: usize) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut seen = HashSet::new();
        entries.retain(|(i, _)| seen.insert(*i));
        entries.truncate(k);
        RankedList { entries, k }
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Ranked lists keyed by instance id, tagged with the producing system.
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub tag: String,
    pub lists: BTreeMap<String, RankedList>,
}

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Run {
            tag: tag.into(),
            lists: BTreeMap::new(),
        }
    }
}

/// The `k` most probable items, ties broken by ascending id. Scores are
/// natural-log probabilities. `k` larger than the catalog is truncated.
pub fn top_k(probabilities: &[f64], k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let n = probabilities.len();
    let k = if k > n {
        log::warn!("K = {k} exceeds the {n} items; truncating");
        n
    } else {
        k
    };
    let mut idx: Vec<usize> = (0..n).collect();
    let by_prob = |a: &usize, b: &usize| probabilities[*b].total_cmp(&probabilities[*a]).then(a.cmp(b));
    if k < n {
        idx.select_nth_unstable_by(k, by_prob);
        idx.truncate(k);
    }
    idx.sort_by(by_prob);
    Ok(RankedList::new(
        idx.into_iter()
            .map(|i| (ItemId::from(i), probabilities[i].ln()))
            .collect(),
        k,
    ))
}

/// Forward pass followed by [`top_k`].
pub fn retrieve(params: &RetrieverParams, input: &[TokenIndex], k: usize) -> Result<RankedList> {
    let probs = params.forward(input)?;
    top_k(&probs, k)
}

/// Forward pass decoded with diversified beam search over atomic IDs.
pub fn retrieve_diverse(params: &RetrieverParams, input: &[TokenIndex], cfg: &BeamConfig) -> Result<RankedList> {
    let probs = params.forward(input)?;
    diverse_beam_search(&AtomicScorer::new(&probs), cfg)
}

/// Incremental scoring interface for sequence decoding.
pub trait NextTokenScorer {
    /// Log-score of every token as the continuation of `prefix`; disallowed
    /// continuations are `-inf`.
    fn next_scores(&self, prefix: &[TokenIndex]) -> Vec<f64>;

    /// Whether `prefix` is a complete identifier.
    fn is_terminal(&self, prefix: &[TokenIndex]) -> bool;

    /// Item denoted by a complete sequence.
    fn item_of(&self, sequence: &[TokenIndex]) -> Option<ItemId>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub k: usize,
    pub num_groups: usize,
    pub diversity_penalty: f64,
    pub max_depth: usize,
}

impl BeamConfig {
    pub const DEFAULT_PENALTY: f64 = 0.25;

    /// `ceil(k / 2)` groups with the default penalty.
    pub fn new(k: usize, max_depth: usize) -> Self {
        BeamConfig {
            k,
            num_groups: k.div_ceil(2).max(1),
            diversity_penalty: Self::DEFAULT_PENALTY,
            max_depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.num_groups == 0 || self.num_groups > self.k {
            return Err(Error::Config(format!(
                "num_groups must lie in [1, {}], got {}",
                self.k, self.num_groups
            )));
        }
        if !(self.diversity_penalty >= 0.0) {
            return Err(Error::Config("diversity penalty must be >= 0".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        Ok(())
    }

    pub fn group_size(&self) -> usize {
        self.k.div_ceil(self.num_groups)
    }
}

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<TokenIndex>,
    /// Unpenalized log-probability.
    log_prob: f64,
    /// Selection score, including accumulated diversity penalties.
    score: f64,
    finished: bool,
}

fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.log_prob.total_cmp(&a.log_prob))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Group-wise diversified beam search.
///
/// Each of the `num_groups` groups runs a beam of width `ceil(K/num_groups)`
/// in which finished hypotheses keep competing for their slot. Groups are
/// advanced one after another at every step; a candidate token of group `g`
/// loses `diversity_penalty` for every time that token was picked at the same
/// step by groups before `g`. A sequence already finished by some group is
/// never selected again, so the returned items are distinct.
pub fn diverse_beam_search<S: NextTokenScorer + ?Sized>(scorer: &S, cfg: &BeamConfig) -> Result<RankedList> {
    cfg.validate()?;
    let width = cfg.group_size();
    let root = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        score: 0.0,
        finished: false,
    };
    let mut groups: Vec<Vec<Hypothesis>> = vec![vec![root]; cfg.num_groups];
    let mut done: HashSet<Vec<TokenIndex>> = HashSet::new();

    for _step in 0..cfg.max_depth {
        let mut picked: HashMap<TokenIndex, usize> = HashMap::new();
        for beam in groups.iter_mut() {
            if beam.iter().all(|h| h.finished) {
                continue;
            }
            let mut candidates: Vec<Hypothesis> = Vec::new();
            for h in beam.iter() {
                if h.finished {
                    candidates.push(h.clone());
                    continue;
                }
                let scores = scorer.next_scores(&h.tokens);
                let mut any = false;
                for (tok, &s) in scores.iter().enumerate() {
                    if !s.is_finite() {
                        continue;
                    }
                    any = true;
                    let penalty = cfg.diversity_penalty * picked.get(&tok).copied().unwrap_or(0) as f64;
                    let mut tokens = h.tokens.clone();
                    tokens.push(tok);
                    candidates.push(Hypothesis {
                        tokens,
                        log_prob: h.log_prob + s,
                        score: h.score + s - penalty,
                        finished: false,
                    });
                }
                if !any {
                    return Err(Error::Decode(format!(
                        "no valid continuation for non-terminal prefix {:?}",
                        h.tokens
                    )));
                }
            }
            candidates.sort_by(rank);
            let mut next = Vec::with_capacity(width);
            for mut c in candidates {
                if next.len() == width {
                    break;
                }
                if c.finished {
                    next.push(c);
                    continue;
                }
                if scorer.is_terminal(&c.tokens) {
                    if !done.insert(c.tokens.clone()) {
                        continue;
                    }
                    c.finished = true;
                }
                *picked.entry(*c.tokens.last().expect("expanded hypotheses are nonempty")).or_default() += 1;
                next.push(c);
            }
            *beam = next;
        }
        if groups.iter().all(|b| b.iter().all(|h| h.finished)) {
            break;
        }
    }

    let mut entries = Vec::new();
    for h in groups.into_iter().flatten().filter(|h| h.finished) {
        match scorer.item_of(&h.tokens) {
            Some(item) => entries.push((item, h.log_prob)),
            None => {
                return Err(Error::Decode(format!(
                    "terminal sequence {:?} maps to no item",
                    h.tokens
                )))
            }
        }
    }
    Ok(RankedList::from_unsorted(entries, cfg.k))
}

/// Single-step scorer over a distribution of atomic item IDs, where token
/// `i` is item `i`.
pub struct AtomicScorer {
    log_probs: Vec<f64>,
}

impl AtomicScorer {
    pub fn new(probabilities: &[f64]) -> Self {
        AtomicScorer {
            log_probs: probabilities.iter().map(|p| p.ln()).collect(),
        }
    }
}

impl NextTokenScorer for AtomicScorer {
    fn next_scores(&self, prefix: &[TokenIndex]) -> Vec<f64> {
        if prefix.is_empty() {
            self.log_probs.clone()
        } else {
            vec![f64::NEG_INFINITY; self.log_probs.len()]
        }
    }

    fn is_terminal(&self, prefix: &[TokenIndex]) -> bool {
        prefix.len() == 1
    }

    fn item_of(&self, sequence: &[TokenIndex]) -> Option<ItemId> {
        (sequence.len() == 1 && sequence[0] < self.log_probs.len()).then(|| ItemId::from(sequence[0]))
    }
}

/// Restricts an unconstrained next-token model to the identifier sequences of
/// a catalog, renormalizing over the valid continuations of every prefix.
pub struct ConstrainedScorer<F> {
    vocab_size: usize,
    sequences: HashMap<Vec<TokenIndex>, ItemId>,
    allowed: HashMap<Vec<TokenIndex>, Vec<TokenIndex>>,
    model: F,
}

impl<F> ConstrainedScorer<F>
where
    F: Fn(&[TokenIndex]) -> Vec<f64>,
{
    /// `ids[i]` is the token sequence of item `i`; `model` returns raw
    /// log-scores over `vocab_size` tokens. Identifiers must be prefix-free.
    pub fn new(vocab_size: usize, ids: &[Vec<TokenIndex>], model: F) -> Result<Self> {
        let mut sequences = HashMap::new();
        let mut allowed: HashMap<Vec<TokenIndex>, Vec<TokenIndex>> = HashMap::new();
        for (i, seq) in ids.iter().enumerate() {
            if seq.is_empty() || seq.iter().any(|&t| t >= vocab_size) {
                return Err(Error::Config(format!("invalid identifier {seq:?} for item {i}")));
            }
            if sequences.insert(seq.clone(), ItemId::from(i)).is_some() {
                return Err(Error::Config(format!("identifier {seq:?} is shared by two items")));
            }
            for d in 0..seq.len() {
                let next = allowed.entry(seq[..d].to_vec()).or_default();
                if !next.contains(&seq[d]) {
                    next.push(seq[d]);
                }
            }
        }
        if let Some(seq) = sequences.keys().find(|s| allowed.contains_key(*s)) {
            return Err(Error::Config(format!("identifier {seq:?} is a prefix of another identifier")));
        }
        Ok(ConstrainedScorer {
            vocab_size,
            sequences,
            allowed,
            model,
        })
    }
}

impl<F> NextTokenScorer for ConstrainedScorer<F>
where
    F: Fn(&[TokenIndex]) -> Vec<f64>,
{
    fn next_scores(&self, prefix: &[TokenIndex]) -> Vec<f64> {
        let mut out = vec![f64::NEG_INFINITY; self.vocab_size];
        let Some(valid) = self.allowed.get(prefix) else {
            return out;
        };
        let raw = (self.model)(prefix);
        let max = valid.iter().map(|&t| raw[t]).fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + valid.iter().map(|&t| (raw[t] - max).exp()).sum::<f64>().ln();
        for &t in valid {
            out[t] = raw[t] - log_z;
        }
        out
    }

    fn is_terminal(&self, prefix: &[TokenIndex]) -> bool {
        self.sequences.contains_key(prefix) && !self.allowed.contains_key(prefix)
    }

    fn item_of(&self, sequence: &[TokenIndex]) -> Option<ItemId> {
        self.sequences.get(sequence).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn items(l: &RankedList) -> Vec<u32> {
        l.items().map(|i| i.0).collect()
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(items(&top_k(&[0.1, 0.7, 0.2], 1).unwrap()), [1]);
        assert_eq!(items(&top_k(&[0.25; 4], 2).unwrap()), [0, 1]);
        let l = top_k(&[0.1, 0.2], 5).unwrap();
        assert_eq!(l.len(), 2);
        assert!(top_k(&[1.0], 0).is_err());
        let l = top_k(&[0.5, 0.5], 1).unwrap();
        assert!((l.entries[0].1 - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn beam_config_defaults() {
        let c = BeamConfig::new(10, 1);
        assert_eq!(c.num_groups, 5);
        assert_eq!(c.group_size(), 2);
        assert_eq!(c.diversity_penalty, 0.25);
        assert_eq!(BeamConfig::new(5, 1).num_groups, 3);
        let bad = BeamConfig { num_groups: 11, ..c.clone() };
        assert!(bad.validate().is_err());
        let bad = BeamConfig { diversity_penalty: -1.0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn atomic_diverse_search_is_top_k() {
        let p = [0.05, 0.3, 0.1, 0.2, 0.15, 0.2];
        let cfg = BeamConfig::new(4, 1);
        let d = diverse_beam_search(&AtomicScorer::new(&p), &cfg).unwrap();
        assert_eq!(d, top_k(&p, 4).unwrap());
    }

    #[test]
    fn dead_end_is_an_error() {
        struct Dead;
        impl NextTokenScorer for Dead {
            fn next_scores(&self, _: &[TokenIndex]) -> Vec<f64> {
                vec![f64::NEG_INFINITY; 3]
            }
            fn is_terminal(&self, _: &[TokenIndex]) -> bool {
                false
            }
            fn item_of(&self, _: &[TokenIndex]) -> Option<ItemId> {
                None
            }
        }
        assert!(matches!(
            diverse_beam_search(&Dead, &BeamConfig::new(2, 3)),
            Err(Error::Decode(_))
        ));
    }

    #[test]
    fn constrained_scorer_masks_and_normalizes() {
        let ids = vec![vec![0, 1], vec![0, 2], vec![3]];
        let s = ConstrainedScorer::new(4, &ids, |_: &[TokenIndex]| vec![0.0; 4]).unwrap();
        let root = s.next_scores(&[]);
        assert!(root[1].is_infinite() && root[2].is_infinite());
        assert!((root[0].exp() + root[3].exp() - 1.0).abs() < 1e-12);
        assert!(s.is_terminal(&[3]) && !s.is_terminal(&[0]));
        assert_eq!(s.item_of(&[0, 2]), Some(ItemId(1)));
        let out = diverse_beam_search(&s, &BeamConfig { k: 3, num_groups: 1, diversity_penalty: 0.0, max_depth: 2 })
            .unwrap();
        assert_eq!(items(&out), [2, 0, 1]);
        assert!(ConstrainedScorer::new(4, &[vec![0], vec![0]], |_: &[TokenIndex]| vec![0.0; 4]).is_err());
    }

    #[test]
    fn penalty_pushes_later_groups_elsewhere() {
        // two-token ids: the first token decides a "family"
        let ids: Vec<Vec<TokenIndex>> = (0..3).flat_map(|a| (3..5).map(move |b| vec![a, b])).collect();
        let model = |prefix: &[TokenIndex]| -> Vec<f64> {
            match prefix.len() {
                0 => vec![0.0, -0.1, -3.0, -9.0, -9.0],
                _ => vec![-9.0, -9.0, -9.0, 0.0, -0.05],
            }
        };
        let s = ConstrainedScorer::new(5, &ids, model).unwrap();
        let plain = diverse_beam_search(&s, &BeamConfig { k: 2, num_groups: 1, diversity_penalty: 0.0, max_depth: 2 }).unwrap();
        let diverse = diverse_beam_search(&s, &BeamConfig { k: 2, num_groups: 2, diversity_penalty: 5.0, max_depth: 2 }).unwrap();
        let fam = |l: &RankedList| l.items().map(|i| i.0 / 2).collect::<HashSet<_>>().len();
        assert_eq!(fam(&plain), 1);
        assert_eq!(fam(&diverse), 2);
    }

    proptest! {
        #[test]
        fn top_k_matches_stable_sort(v in prop::collection::vec(0.0f64..1.0, 1..40), k in 1usize..45) {
            let got = top_k(&v, k).unwrap();
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap());
            let want: Vec<u32> = idx.into_iter().take(k).map(|i| i as u32).collect();
            prop_assert_eq!(items(&got), want);
        }

        #[test]
        fn top_k_is_nested(v in prop::collection::vec(0.0f64..1.0, 2..40), k in 1usize..39) {
            prop_assume!(k < v.len());
            let a: HashSet<u32> = items(&top_k(&v, k).unwrap()).into_iter().collect();
            let b: HashSet<u32> = items(&top_k(&v, k + 1).unwrap()).into_iter().collect();
            prop_assert!(a.is_subset(&b));
        }
    }
}
