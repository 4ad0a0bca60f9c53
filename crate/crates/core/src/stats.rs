//! Popularity statistics: KL divergence, Kolmogorov distance, Gini index and
//! dataset summaries.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{ItemId, RecDataset, SearchDataset, Split};
use crate::decode::Run;
use crate::error::{Error, Result};
use crate::simgen::PopularityDistribution;

/// Additive smoothing applied to counts before normalization.
pub const SMOOTHING: f64 = 1e-9;

fn same_support(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Data(format!(
            "support mismatch: {} vs {} items",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// KL(p || q) in nats. Terms with `p_i = 0` contribute nothing.
pub fn kl_divergence(p: &PopularityDistribution, q: &PopularityDistribution) -> Result<f64> {
    kl_divergence_slices(p.probs(), q.probs())
}

pub fn kl_divergence_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    same_support(p, q)?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(Error::Data(format!(
                "q has zero mass on item {i} where p is positive"
            )));
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

/// Largest gap between the two CDFs taken over ascending item ids.
pub fn ks_distance(p: &PopularityDistribution, q: &PopularityDistribution) -> Result<f64> {
    ks_distance_slices(p.probs(), q.probs())
}

pub fn ks_distance_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    same_support(p, q)?;
    let (mut cp, mut cq, mut best) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in p.iter().zip(q) {
        cp += a;
        cq += b;
        best = best.max((cp - cq).abs());
    }
    Ok(best.min(1.0))
}

/// Mean-absolute-difference Gini index, `sum_ij |x_i - x_j| / (2 n sum x)`,
/// evaluated in O(n log n) over the sorted counts.
pub fn gini_index(counts: &[f64]) -> Result<f64> {
    if counts.iter().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(Error::Data("gini index needs finite nonnegative counts".into()));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::Data("gini index of all-zero counts".into()));
    }
    let mut sorted = counts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    // sum_{i<j} (x_j - x_i) = sum_i (2i - n + 1) x_i for ascending x.
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * i as f64 - n + 1.0) * x)
        .sum();
    Ok((2.0 * weighted) / (2.0 * n * total))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    SearchTrain,
    RecTrain,
    Predictions,
}

/// Raw per-item counts plus the smoothed distribution derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct PopularityProfile {
    pub counts: Vec<u64>,
    pub distribution: PopularityDistribution,
    pub source: ProfileSource,
}

impl PopularityProfile {
    pub fn from_counts(counts: Vec<u64>, source: ProfileSource) -> Result<Self> {
        let as_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let distribution = PopularityDistribution::from_counts(&as_f, SMOOTHING)?;
        Ok(PopularityProfile {
            counts,
            distribution,
            source,
        })
    }

    pub fn count(&self, item: ItemId) -> u64 {
        self.counts.get(item.index()).copied().unwrap_or(0)
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Number of queries whose relevance set contains each item.
    pub fn from_search(data: &SearchDataset, num_items: usize) -> Result<Self> {
        let mut counts = vec![0u64; num_items];
        for r in &data.records {
            for i in &r.relevant {
                *slot(&mut counts, *i)? += 1;
            }
        }
        Self::from_counts(counts, ProfileSource::SearchTrain)
    }

    /// Number of interaction occurrences of each item.
    pub fn from_rec(data: &RecDataset, num_items: usize) -> Result<Self> {
        let mut counts = vec![0u64; num_items];
        for u in &data.users {
            for i in &u.interactions {
                *slot(&mut counts, *i)? += 1;
            }
        }
        Self::from_counts(counts, ProfileSource::RecTrain)
    }

    /// Number of ranked lists each item appears in.
    pub fn from_run(run: &Run, num_items: usize) -> Result<Self> {
        let mut counts = vec![0u64; num_items];
        for list in run.lists.values() {
            for (i, _) in &list.entries {
                *slot(&mut counts, *i)? += 1;
            }
        }
        Self::from_counts(counts, ProfileSource::Predictions)
    }
}

fn slot(counts: &mut [u64], item: ItemId) -> Result<&mut u64> {
    let n = counts.len();
    counts
        .get_mut(item.index())
        .ok_or_else(|| Error::Data(format!("item {item} outside catalog of {n}")))
}

/// Summary of a search/recommendation dataset pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_items: usize,
    pub rec_items: usize,
    pub search_items: usize,
    pub num_users: usize,
    pub num_queries: usize,
    pub density: f64,
    pub avg_rel_per_query: f64,
    pub gini_search: f64,
    pub gini_rec: f64,
    pub ks_dist: f64,
    pub kld_sr: f64,
    pub kld_rs: f64,
}

impl DatasetStats {
    pub const CSV_HEADER: &'static str = "num_items,rec_items,search_items,num_users,num_queries,density,avg_rel_per_query,gini_search,gini_rec,ks_dist,kld_sr,kld_rs";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.num_items,
            self.rec_items,
            self.search_items,
            self.num_users,
            self.num_queries,
            self.density,
            self.avg_rel_per_query,
            self.gini_search,
            self.gini_rec,
            self.ks_dist,
            self.kld_sr,
            self.kld_rs
        )
    }
}

/// Statistics over the search training records and the given interactions.
pub fn dataset_stats(search: &SearchDataset, rec: &RecDataset, num_items: usize) -> Result<DatasetStats> {
    let train = search.subset(Split::Train);
    let sp = PopularityProfile::from_search(&train, num_items)?;
    let rp = PopularityProfile::from_rec(rec, num_items)?;
    let num_users = rec.users.len();
    let density = if num_users == 0 {
        0.0
    } else {
        rec.num_interactions() as f64 / (num_users as f64 * num_items as f64)
    };
    let avg_rel = if train.is_empty() {
        0.0
    } else {
        train.num_pairs() as f64 / train.len() as f64
    };
    let gini_or_zero = |c: Vec<f64>| if c.iter().any(|&x| x > 0.0) { gini_index(&c) } else { Ok(0.0) };
    let distinct = |it: &mut dyn Iterator<Item = ItemId>| it.collect::<HashSet<_>>().len();
    Ok(DatasetStats {
        num_items,
        rec_items: distinct(&mut rec.users.iter().flat_map(|u| u.interactions.iter().copied())),
        search_items: distinct(&mut train.records.iter().flat_map(|r| r.relevant.iter().copied())),
        num_users,
        num_queries: train.len(),
        density,
        avg_rel_per_query: avg_rel,
        gini_search: gini_or_zero(sp.counts_f64())?,
        gini_rec: gini_or_zero(rp.counts_f64())?,
        ks_dist: ks_distance(&sp.distribution, &rp.distribution)?,
        kld_sr: kl_divergence(&sp.distribution, &rp.distribution)?,
        kld_rs: kl_divergence(&rp.distribution, &sp.distribution)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SearchRecord, UserHistory};
    use crate::decode::RankedList;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> PopularityDistribution {
        PopularityDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kl_examples() {
        let p = dist(&[0.5, 0.5]);
        let q = dist(&[0.9, 0.1]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let expected = 0.5 * (5.0f64 / 9.0).ln() + 0.5 * 5.0f64.ln();
        assert_abs_diff_eq!(kl_divergence(&p, &q).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(kl_divergence(&p, &q).unwrap(), 0.5108, epsilon = 1e-4);
        assert_abs_diff_eq!(kl_divergence(&q, &p).unwrap(), 0.3681, epsilon = 1e-4);
    }

    #[test]
    fn kl_support_mismatch() {
        assert!(kl_divergence(&dist(&[1.0]), &dist(&[0.5, 0.5])).is_err());
        assert!(kl_divergence_slices(&[0.5, 0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn ks_examples() {
        let p = dist(&[0.5, 0.5]);
        assert_eq!(ks_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(ks_distance(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap(), 1.0);
        assert_abs_diff_eq!(ks_distance(&p, &dist(&[0.25, 0.75])).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini_index(&[3.0, 3.0, 3.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(gini_index(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.75, epsilon = 1e-15);
        let a = gini_index(&[1.0, 4.0, 2.0, 9.0]).unwrap();
        let b = gini_index(&[2.5, 10.0, 5.0, 22.5]).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        assert!(gini_index(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn profiles_count_memberships() {
        let s = SearchDataset::new(vec![
            SearchRecord::new("a", [ItemId(3)], Split::Train),
            SearchRecord::new("b", [ItemId(3), ItemId(1)], Split::Train),
        ]);
        assert_eq!(PopularityProfile::from_search(&s, 4).unwrap().count(ItemId(3)), 2);

        let r = RecDataset::new(vec![UserHistory {
            user: 0,
            interactions: vec![ItemId(0), ItemId(0), ItemId(1)],
        }]);
        assert_eq!(PopularityProfile::from_rec(&r, 2).unwrap().count(ItemId(0)), 2);

        let mut run = Run::new("t");
        for q in 0..50 {
            run.lists.insert(
                format!("q{q}"),
                RankedList::new(vec![(ItemId(5), -0.1), (ItemId((q % 3) as u32), -1.0)], 2),
            );
        }
        let p = PopularityProfile::from_run(&run, 6).unwrap();
        assert_eq!(p.count(ItemId(5)), 50);
        assert_eq!(p.source, ProfileSource::Predictions);
    }

    #[test]
    fn stats_basics() {
        let s = SearchDataset::new(vec![
            SearchRecord::new("a", (0..3).map(ItemId), Split::Train),
            SearchRecord::new("b", (3..8).map(ItemId), Split::Train),
            SearchRecord::new("c", [ItemId(9)], Split::Test),
        ]);
        let r = RecDataset::new(
            (0..10)
                .map(|u| UserHistory { user: u, interactions: vec![ItemId(u as u32)] })
                .collect(),
        );
        let st = dataset_stats(&s, &r, 10).unwrap();
        assert_eq!(st.avg_rel_per_query, 4.0);
        assert_abs_diff_eq!(st.density, 0.1, epsilon = 1e-15);
        assert_eq!(st.num_queries, 2);
        assert!(st.kld_sr != st.kld_rs);
    }

    fn naive_gini(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let s: f64 = x.iter().sum();
        let mut acc = 0.0;
        for a in x {
            for b in x {
                acc += (a - b).abs();
            }
        }
        acc / (2.0 * n * s)
    }

    fn normalized(v: &[f64]) -> Vec<f64> {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn kl_nonnegative(raw in prop::collection::vec((0.01f64..10.0, 0.01f64..10.0), 1..40)) {
            let p = normalized(&raw.iter().map(|x| x.0).collect::<Vec<_>>());
            let q = normalized(&raw.iter().map(|x| x.1).collect::<Vec<_>>());
            prop_assert!(kl_divergence_slices(&p, &q).unwrap() >= -1e-12);
            prop_assert!(kl_divergence_slices(&p, &p).unwrap().abs() <= 1e-12);
        }

        #[test]
        fn ks_is_a_metric(raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..30)) {
            prop_assume!(raw.iter().map(|x| x.0).sum::<f64>() > 0.0);
            prop_assume!(raw.iter().map(|x| x.1).sum::<f64>() > 0.0);
            prop_assume!(raw.iter().map(|x| x.2).sum::<f64>() > 0.0);
            let p = normalized(&raw.iter().map(|x| x.0).collect::<Vec<_>>());
            let q = normalized(&raw.iter().map(|x| x.1).collect::<Vec<_>>());
            let r = normalized(&raw.iter().map(|x| x.2).collect::<Vec<_>>());
            let pq = ks_distance_slices(&p, &q).unwrap();
            prop_assert!((pq - ks_distance_slices(&q, &p).unwrap()).abs() < 1e-15);
            let pr = ks_distance_slices(&p, &r).unwrap();
            let rq = ks_distance_slices(&r, &q).unwrap();
            prop_assert!(pq <= pr + rq + 1e-12);
        }

        #[test]
        fn gini_permutation_and_scale(mut x in prop::collection::vec(0.0f64..100.0, 1..60), c in 0.1f64..50.0) {
            prop_assume!(x.iter().sum::<f64>() > 0.0);
            let g = gini_index(&x).unwrap();
            prop_assert!((g - naive_gini(&x)).abs() < 1e-9);
            prop_assert!((0.0..1.0).contains(&g));
            let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
            prop_assert!((gini_index(&scaled).unwrap() - g).abs() < 1e-9);
            x.reverse();
            prop_assert!((gini_index(&x).unwrap() - g).abs() < 1e-9);
        }
    }
}
