use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};

use genir_core::corpus::ItemId;
use genir_core::decode::{diverse_beam_search, top_k, AtomicScorer, BeamConfig, ConstrainedScorer, NextTokenScorer};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random catalog of fixed-length identifiers and a prefix-dependent
/// model with cached uniform logits.
struct Case {
    vocab: usize,
    depth: usize,
    ids: Vec<Vec<usize>>,
    seed: u64,
    table: RefCell<HashMap<Vec<usize>, Vec<f64>>>,
    factorized: bool,
}

impl Case {
    fn new(seed: u64, factorized: bool) -> Case {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = rng.random_range(2..=12usize);
        let depth = rng.random_range(1..=3usize);
        let mut all: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..depth {
            all = all
                .into_iter()
                .flat_map(|p| {
                    (0..vocab).map(move |t| {
                        let mut q = p.clone();
                        q.push(t);
                        q
                    })
                })
                .collect();
        }
        all.shuffle(&mut rng);
        let n = rng.random_range(1..=all.len().min(60));
        all.truncate(n);
        Case { vocab, depth, ids: all, seed, table: RefCell::default(), factorized }
    }

    fn logits(&self, prefix: &[usize]) -> Vec<f64> {
        let key = if self.factorized { vec![prefix.len()] } else { prefix.to_vec() };
        self.table
            .borrow_mut()
            .entry(key.clone())
            .or_insert_with(|| {
                let h = key.iter().fold(7u64, |a, &t| a.wrapping_mul(31).wrapping_add(t as u64));
                let mut r = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(7919).wrapping_add(h));
                (0..self.vocab).map(|_| r.random_range(-3.0..3.0)).collect()
            })
            .clone()
    }
}

fn path_log_prob<S: NextTokenScorer>(s: &S, seq: &[usize]) -> f64 {
    (0..seq.len()).map(|d| s.next_scores(&seq[..d])[seq[d]]).sum()
}

fn exhaustive<S: NextTokenScorer>(s: &S, ids: &[Vec<usize>], k: usize) -> BTreeSet<ItemId> {
    let mut scored: Vec<(f64, &Vec<usize>)> = ids.iter().map(|q| (path_log_prob(s, q), q)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.iter().take(k).map(|(_, q)| s.item_of(q).unwrap()).collect()
}

/// Textbook width-`k` beam search over fixed-depth identifiers.
fn reference_beam<S: NextTokenScorer>(s: &S, depth: usize, k: usize) -> Vec<ItemId> {
    let mut beam: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    for _ in 0..depth {
        let mut next = Vec::new();
        for (prefix, lp) in &beam {
            for (t, score) in s.next_scores(prefix).into_iter().enumerate() {
                if score.is_finite() {
                    let mut q = prefix.clone();
                    q.push(t);
                    next.push((q, lp + score));
                }
            }
        }
        next.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        next.truncate(k);
        beam = next;
    }
    beam.iter().map(|(q, _)| s.item_of(q).unwrap()).collect()
}

#[test]
fn single_group_matches_textbook_beam_search() {
    for seed in 0..200 {
        let case = Case::new(seed, false);
        let scorer = ConstrainedScorer::new(case.vocab, &case.ids, |p: &[usize]| case.logits(p)).unwrap();
        let k = 1 + (seed as usize % case.ids.len().min(10));
        let cfg = BeamConfig { k, num_groups: 1, diversity_penalty: 0.0, max_depth: case.depth };
        let got: Vec<ItemId> = diverse_beam_search(&scorer, &cfg).unwrap().items().collect();
        assert_eq!(got, reference_beam(&scorer, case.depth, k), "seed {seed}");
    }
}

#[test]
fn exact_when_beam_covers_the_catalog() {
    for seed in 0..100 {
        let case = Case::new(seed, false);
        let scorer = ConstrainedScorer::new(case.vocab, &case.ids, |p: &[usize]| case.logits(p)).unwrap();
        let n = case.ids.len();
        let cfg = BeamConfig { k: n, num_groups: 1, diversity_penalty: 0.0, max_depth: case.depth };
        let got: Vec<ItemId> = diverse_beam_search(&scorer, &cfg).unwrap().items().collect();
        assert_eq!(got.len(), n);
        assert_eq!(got.into_iter().collect::<BTreeSet<_>>(), exhaustive(&scorer, &case.ids, n));
    }
}

#[test]
fn exact_for_position_only_scores_on_a_full_trie() {
    for seed in 0..100 {
        let mut case = Case::new(seed, true);
        let full: Vec<Vec<usize>> = {
            let mut all: Vec<Vec<usize>> = vec![vec![]];
            for _ in 0..case.depth {
                all = all
                    .into_iter()
                    .flat_map(|p| {
                        (0..case.vocab.min(4)).map(move |t| {
                            let mut q = p.clone();
                            q.push(t);
                            q
                        })
                    })
                    .collect();
            }
            all
        };
        case.ids = full;
        let scorer = ConstrainedScorer::new(case.vocab, &case.ids, |p: &[usize]| case.logits(p)).unwrap();
        let k = 1 + (seed as usize % case.ids.len().min(10));
        let cfg = BeamConfig { k, num_groups: 1, diversity_penalty: 0.0, max_depth: case.depth };
        let got: BTreeSet<ItemId> = diverse_beam_search(&scorer, &cfg).unwrap().items().collect();
        assert_eq!(got, exhaustive(&scorer, &case.ids, k), "seed {seed}");
    }
}

#[test]
fn depth_one_diverse_is_top_k_on_random_vectors() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=40);
        let probs: Vec<f64> = {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| x / s).collect()
        };
        let k = rng.random_range(1..=n.min(10));
        let diverse: Vec<ItemId> = diverse_beam_search(&AtomicScorer::new(&probs), &BeamConfig::new(k, 1))
            .unwrap()
            .items()
            .collect();
        let expected: Vec<ItemId> = top_k(&probs, k).unwrap().items().collect();
        assert_eq!(diverse, expected, "seed {seed}");
    }
}

#[test]
fn top_k_of_four_matches_sort() {
    let v = [0.1, 0.4, 0.2, 0.3];
    let got: Vec<u32> = top_k(&v, 3).unwrap().items().map(|i| i.0).collect();
    let mut idx: Vec<u32> = (0..4).collect();
    idx.sort_by(|&a, &b| v[b as usize].total_cmp(&v[a as usize]));
    assert_eq!(got, idx[..3]);
}

proptest! {
    #[test]
    fn diverse_results_are_distinct_valid_items(seed in 0u64..10_000, groups in 1usize..5, penalty in 0.0f64..3.0) {
        let case = Case::new(seed, false);
        let scorer = ConstrainedScorer::new(case.vocab, &case.ids, |p: &[usize]| case.logits(p)).unwrap();
        let k = (case.ids.len().min(10)).max(groups.min(case.ids.len()));
        let cfg = BeamConfig { k, num_groups: groups.min(k), diversity_penalty: penalty, max_depth: case.depth };
        let list = diverse_beam_search(&scorer, &cfg).unwrap();
        let items: Vec<ItemId> = list.items().collect();
        let distinct: BTreeSet<ItemId> = items.iter().copied().collect();
        prop_assert_eq!(distinct.len(), items.len());
        prop_assert!(items.len() <= k);
        prop_assert!(items.iter().all(|i| (i.0 as usize) < case.ids.len()));
    }
}
