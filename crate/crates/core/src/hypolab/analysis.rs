//! Comparisons between the predictions of a task-specific run and a joint
//! run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{rec_qid, Workbench};
use crate::corpus::{ItemId, RecExample, SearchDataset, Task};
use crate::decode::Run;
use crate::error::{Error, Result};
use crate::evalkit::recall_at_k;
use crate::stats::PopularityProfile;

fn check_same_ids(baseline: &Run, joint: &Run) -> Result<()> {
    if baseline.lists.len() != joint.lists.len() || baseline.lists.keys().any(|q| !joint.lists.contains_key(q)) {
        return Err(Error::Data(format!(
            "runs {:?} and {:?} cover different instance ids",
            baseline.tag, joint.tag
        )));
    }
    Ok(())
}

/// Ids whose ranked item lists differ between the two runs.
pub fn differing_ids(baseline: &Run, joint: &Run) -> Result<BTreeSet<String>> {
    check_same_ids(baseline, joint)?;
    Ok(baseline
        .lists
        .iter()
        .filter(|(q, l)| !l.items().eq(joint.lists[*q].items()))
        .map(|(q, _)| q.clone())
        .collect())
}

fn pct_change(from: f64, to: f64) -> Option<f64> {
    (from != 0.0).then(|| 100.0 * (to - from) / from)
}

/// Other-task popularity of predicted items, baseline versus joint, over all
/// instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityDelta {
    pub instances: usize,
    pub baseline_mean: f64,
    pub joint_mean: f64,
    /// None when the baseline mean is zero.
    pub delta_pct: Option<f64>,
}

fn mean_predicted_count(run: &Run, profile: &PopularityProfile) -> f64 {
    let per_instance: Vec<f64> = run
        .lists
        .values()
        .filter(|l| !l.is_empty())
        .map(|l| l.items().map(|i| profile.count(i) as f64).sum::<f64>() / l.len() as f64)
        .collect();
    if per_instance.is_empty() {
        0.0
    } else {
        per_instance.iter().sum::<f64>() / per_instance.len() as f64
    }
}

/// Percent change of the mean other-task count of predicted items. Each
/// instance contributes the mean count of its list.
pub fn delta_popularity(baseline: &Run, joint: &Run, other_task: &PopularityProfile) -> Result<PopularityDelta> {
    check_same_ids(baseline, joint)?;
    let b = mean_predicted_count(baseline, other_task);
    let j = mean_predicted_count(joint, other_task);
    Ok(PopularityDelta {
        instances: baseline.lists.len(),
        baseline_mean: b,
        joint_mean: j,
        delta_pct: pct_change(b, j),
    })
}

/// A per-instance count restricted to instances whose predictions differ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub metric: String,
    /// Instances with a defined value.
    pub total: usize,
    pub differing: usize,
    pub mean_all: f64,
    pub mean_differing: Option<f64>,
    /// Percent change of the differing-instance mean over the all-instance
    /// mean. None when no instance differs or the overall mean is zero.
    pub delta_pct: Option<f64>,
}

fn delta_report(metric: &str, values: &BTreeMap<String, f64>, differing: &BTreeSet<String>) -> DeltaReport {
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let all: Vec<f64> = values.values().copied().collect();
    let diff: Vec<f64> = values
        .iter()
        .filter(|(q, _)| differing.contains(*q))
        .map(|(_, v)| *v)
        .collect();
    let mean_all = mean(&all).unwrap_or(0.0);
    let mean_differing = mean(&diff);
    DeltaReport {
        metric: metric.into(),
        total: all.len(),
        differing: diff.len(),
        mean_all,
        mean_differing,
        delta_pct: mean_differing.and_then(|m| pct_change(mean_all, m)),
    }
}

/// Distinct training query texts whose relevance set contains both items,
/// keyed by unordered pair.
fn query_pair_index(search_train: &SearchDataset) -> BTreeMap<(ItemId, ItemId), BTreeSet<&str>> {
    let mut index: BTreeMap<(ItemId, ItemId), BTreeSet<&str>> = BTreeMap::new();
    for r in &search_train.records {
        for (a, &x) in r.relevant.iter().enumerate() {
            for &y in &r.relevant[a + 1..] {
                index.entry(ordered(x, y)).or_default().insert(r.query.as_str());
            }
        }
    }
    index
}

fn ordered(a: ItemId, b: ItemId) -> (ItemId, ItemId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Number of distinct training queries relevant to both a history item and
/// the target, summed over the distinct history items.
pub fn query_match_count(history: &[ItemId], target: ItemId, search_train: &SearchDataset) -> u64 {
    count_with(history, target, &query_pair_index(search_train))
}

fn count_with(history: &[ItemId], target: ItemId, index: &BTreeMap<(ItemId, ItemId), BTreeSet<&str>>) -> u64 {
    let distinct: BTreeSet<ItemId> = history.iter().copied().filter(|&h| h != target).collect();
    distinct
        .into_iter()
        .map(|h| index.get(&ordered(h, target)).map_or(0, |q| q.len() as u64))
        .sum()
}

/// History-to-target query matches on recommendation test instances.
pub fn history_target_query_matches(
    test: &[RecExample],
    search_train: &SearchDataset,
    baseline: &Run,
    joint: &Run,
) -> Result<DeltaReport> {
    let differing = differing_ids(baseline, joint)?;
    let index = query_pair_index(search_train);
    let values = test
        .iter()
        .map(|e| (rec_qid(e.user), count_with(&e.history, e.target, &index) as f64))
        .collect();
    Ok(delta_report("history_target_query_matches", &values, &differing))
}

/// Number of histories containing each unordered pair of distinct items.
pub fn cooccurrence_counts(histories: &[Vec<ItemId>]) -> BTreeMap<(ItemId, ItemId), u64> {
    let mut counts = BTreeMap::new();
    for h in histories {
        let items: Vec<ItemId> = h.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        for (a, &x) in items.iter().enumerate() {
            for &y in &items[a + 1..] {
                *counts.entry((x, y)).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Mean co-occurrence count over the unordered pairs of `relevant`. None for
/// sets with fewer than two items.
pub fn pair_cooccurrence_mean(relevant: &BTreeSet<ItemId>, counts: &BTreeMap<(ItemId, ItemId), u64>) -> Option<f64> {
    let items: Vec<ItemId> = relevant.iter().copied().collect();
    let mut total = 0u64;
    let mut pairs = 0u64;
    for (a, &x) in items.iter().enumerate() {
        for &y in &items[a + 1..] {
            total += counts.get(&(x, y)).copied().unwrap_or(0);
            pairs += 1;
        }
    }
    (pairs > 0).then(|| total as f64 / pairs as f64)
}

/// Relevant-pair co-occurrence in recommendation training histories for
/// search test queries. `queries` maps query ids to relevance sets.
pub fn rel_pair_cooccurrence(
    queries: &BTreeMap<String, BTreeSet<ItemId>>,
    rec_histories: &[Vec<ItemId>],
    baseline: &Run,
    joint: &Run,
) -> Result<DeltaReport> {
    let differing = differing_ids(baseline, joint)?;
    let counts = cooccurrence_counts(rec_histories);
    let values = queries
        .iter()
        .filter_map(|(q, rel)| pair_cooccurrence_mean(rel, &counts).map(|m| (q.clone(), m)))
        .collect();
    Ok(delta_report("rel_pair_cooccurrence", &values, &differing))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedundancyClass {
    /// In a training history and in a training relevance set.
    Redundant,
    /// Only in the added task's training data.
    NonRedundant,
    /// Only in the target task's training data.
    TargetOnly,
}

impl fmt::Display for RedundancyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RedundancyClass::Redundant => "redundant",
            RedundancyClass::NonRedundant => "non_redundant",
            RedundancyClass::TargetOnly => "target_only",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedundancyRow {
    pub target: Task,
    pub class: RedundancyClass,
    /// Distinct test pairs of this class.
    pub pairs: usize,
    /// Test instances involving at least one such pair.
    pub instances: usize,
    pub baseline_recall: Option<f64>,
    pub joint_recall: Option<f64>,
    /// Relative gain of the joint run over the baseline, in percent.
    pub improvement_pct: Option<f64>,
}

/// Unordered pairs of each test instance: (history item, target) for
/// recommendation, pairs within the relevance set for search.
fn test_pairs(wb: &Workbench, target: Task) -> Vec<(String, BTreeSet<ItemId>, BTreeSet<(ItemId, ItemId)>)> {
    match target {
        Task::Rec => wb
            .split
            .test
            .iter()
            .map(|e| {
                let pairs = e
                    .history
                    .iter()
                    .filter(|&&h| h != e.target)
                    .map(|&h| ordered(h, e.target))
                    .collect();
                (rec_qid(e.user), BTreeSet::from([e.target]), pairs)
            })
            .collect(),
        Task::Search => wb
            .search_test
            .iter()
            .map(|q| {
                let items: Vec<ItemId> = q.relevant.iter().copied().collect();
                let mut pairs = BTreeSet::new();
                for (a, &x) in items.iter().enumerate() {
                    for &y in &items[a + 1..] {
                        pairs.insert((x, y));
                    }
                }
                (q.qid.clone(), q.relevant.clone(), pairs)
            })
            .collect(),
    }
}

/// Splits test instances by the redundancy class of their item pairs and
/// compares recall@`k` of the two runs on each subset.
pub fn redundancy_analysis(
    wb: &Workbench,
    target: Task,
    baseline: &Run,
    joint: &Run,
    k: usize,
) -> Result<Vec<RedundancyRow>> {
    check_same_ids(baseline, joint)?;
    let rec_pairs: BTreeSet<(ItemId, ItemId)> = cooccurrence_counts(&wb.rec_train_histories()).into_keys().collect();
    let search_pairs: BTreeSet<(ItemId, ItemId)> = query_pair_index(&wb.search.subset(crate::corpus::Split::Train))
        .into_keys()
        .collect();
    let (target_pairs, added_pairs) = match target {
        Task::Rec => (&rec_pairs, &search_pairs),
        Task::Search => (&search_pairs, &rec_pairs),
    };
    let classify = |p: &(ItemId, ItemId)| match (target_pairs.contains(p), added_pairs.contains(p)) {
        (true, true) => Some(RedundancyClass::Redundant),
        (false, true) => Some(RedundancyClass::NonRedundant),
        (true, false) => Some(RedundancyClass::TargetOnly),
        (false, false) => None,
    };
    let mut class_pairs: BTreeMap<RedundancyClass, BTreeSet<(ItemId, ItemId)>> = BTreeMap::new();
    let mut class_recalls: BTreeMap<RedundancyClass, Vec<(f64, f64)>> = BTreeMap::new();
    for (qid, relevant, pairs) in test_pairs(wb, target) {
        let (Some(b), Some(j)) = (baseline.lists.get(&qid), joint.lists.get(&qid)) else {
            continue;
        };
        let recalls = (recall_at_k(b, &relevant, k)?, recall_at_k(j, &relevant, k)?);
        let mut seen = BTreeSet::new();
        for p in pairs {
            if let Some(c) = classify(&p) {
                class_pairs.entry(c).or_default().insert(p);
                seen.insert(c);
            }
        }
        for c in seen {
            class_recalls.entry(c).or_default().push(recalls);
        }
    }
    let rows = [RedundancyClass::Redundant, RedundancyClass::NonRedundant, RedundancyClass::TargetOnly]
        .into_iter()
        .map(|class| {
            let recalls = class_recalls.get(&class).map(Vec::as_slice).unwrap_or(&[]);
            let n = recalls.len();
            let (b, j) = if n == 0 {
                (None, None)
            } else {
                (
                    Some(recalls.iter().map(|r| r.0).sum::<f64>() / n as f64),
                    Some(recalls.iter().map(|r| r.1).sum::<f64>() / n as f64),
                )
            };
            RedundancyRow {
                target,
                class,
                pairs: class_pairs.get(&class).map_or(0, BTreeSet::len),
                instances: n,
                baseline_recall: b,
                joint_recall: j,
                improvement_pct: b.zip(j).and_then(|(b, j)| pct_change(b, j)),
            }
        })
        .collect();
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn popularity_csv(rows: &[(String, PopularityDelta)]) -> String {
    let mut out = String::from("comparison,instances,baseline_mean,joint_mean,delta_pct,scope\n");
    for (name, d) in rows {
        let _ = writeln!(
            out,
            "{name},{},{:.6},{:.6},{},all_instances",
            d.instances,
            d.baseline_mean,
            d.joint_mean,
            opt(d.delta_pct)
        );
    }
    out
}

pub fn latent_csv(rows: &[DeltaReport]) -> String {
    let mut out = String::from("metric,instances,differing,mean_all,mean_differing,delta_pct\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{},{}",
            r.metric,
            r.total,
            r.differing,
            r.mean_all,
            opt(r.mean_differing),
            opt(r.delta_pct)
        );
    }
    out
}

pub fn redundancy_csv(rows: &[RedundancyRow]) -> String {
    let mut out = String::from("target,class,pairs,instances,baseline_recall,joint_recall,improvement_pct\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.target,
            r.class,
            r.pairs,
            r.instances,
            opt(r.baseline_recall),
            opt(r.joint_recall),
            opt(r.improvement_pct)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SearchRecord, Split};
    use crate::decode::RankedList;
    use crate::stats::ProfileSource;

    fn run(tag: &str, lists: &[(&str, &[u32])]) -> Run {
        let mut r = Run::new(tag);
        for (q, items) in lists {
            let entries = items.iter().enumerate().map(|(i, &x)| (ItemId(x), -(i as f64))).collect();
            r.lists.insert(q.to_string(), RankedList::new(entries, items.len().max(1)));
        }
        r
    }

    fn ids(v: &[u32]) -> Vec<ItemId> {
        v.iter().copied().map(ItemId).collect()
    }

    #[test]
    fn query_match_worked_example() {
        let mut records = Vec::new();
        for q in ["a", "b"] {
            records.push(SearchRecord::new(q, ids(&[1, 3]), Split::Train));
        }
        for q in ["c", "d", "e"] {
            records.push(SearchRecord::new(q, ids(&[2, 3]), Split::Train));
        }
        records.push(SearchRecord::new("held out", ids(&[1, 3]), Split::Test));
        let search = SearchDataset::new(records).subset(Split::Train);
        assert_eq!(query_match_count(&ids(&[1, 2]), ItemId(3), &search), 5);
        assert_eq!(query_match_count(&ids(&[1, 2]), ItemId(3), &SearchDataset::default()), 0);
    }

    #[test]
    fn query_with_two_history_items_counts_twice() {
        let search = SearchDataset::new(vec![SearchRecord::new("x", ids(&[1, 2, 3]), Split::Train)]);
        assert_eq!(query_match_count(&ids(&[1, 2]), ItemId(3), &search), 2);
    }

    #[test]
    fn cooccurrence_worked_example() {
        let mut histories = Vec::new();
        histories.extend(std::iter::repeat_n(ids(&[1, 3, 9]), 3));
        histories.extend(std::iter::repeat_n(ids(&[5, 1, 8]), 4));
        histories.extend(std::iter::repeat_n(ids(&[3, 7, 5]), 2));
        let counts = cooccurrence_counts(&histories);
        let rel: BTreeSet<ItemId> = ids(&[1, 3, 5]).into_iter().collect();
        assert_eq!(pair_cooccurrence_mean(&rel, &counts), Some(3.0));
        let lonely: BTreeSet<ItemId> = ids(&[20, 21]).into_iter().collect();
        assert_eq!(pair_cooccurrence_mean(&lonely, &counts), Some(0.0));
        assert_eq!(pair_cooccurrence_mean(&BTreeSet::from([ItemId(1)]), &counts), None);
    }

    #[test]
    fn delta_popularity_arithmetic() {
        let profile = PopularityProfile::from_counts(vec![10, 12, 0], ProfileSource::SearchTrain).unwrap();
        let base = run("b", &[("q", &[0])]);
        let joint = run("j", &[("q", &[1])]);
        assert_eq!(delta_popularity(&base, &base, &profile).unwrap().delta_pct, Some(0.0));
        let d = delta_popularity(&base, &joint, &profile).unwrap();
        assert!((d.delta_pct.unwrap() - 20.0).abs() < 1e-12);
        let other = run("o", &[("z", &[1])]);
        assert!(delta_popularity(&base, &other, &profile).is_err());
    }

    #[test]
    fn differing_subset_rules() {
        let mut values = BTreeMap::new();
        values.insert("a".to_string(), 2.0);
        values.insert("b".to_string(), 6.0);
        let none = delta_report("m", &values, &BTreeSet::new());
        assert_eq!((none.mean_differing, none.delta_pct), (None, None));
        let all: BTreeSet<String> = values.keys().cloned().collect();
        let every = delta_report("m", &values, &all);
        assert_eq!(every.mean_differing, Some(every.mean_all));
        assert_eq!(every.delta_pct, Some(0.0));
        let one = delta_report("m", &values, &BTreeSet::from(["b".to_string()]));
        assert_eq!(one.delta_pct, Some(50.0));
    }

    #[test]
    fn differing_ids_compares_lists() {
        let a = run("a", &[("x", &[1, 2]), ("y", &[3])]);
        let b = run("b", &[("x", &[2, 1]), ("y", &[3])]);
        assert_eq!(differing_ids(&a, &b).unwrap(), BTreeSet::from(["x".to_string()]));
    }

    #[test]
    fn redundancy_classes() {
        use crate::corpus::{RecDataset, UserHistory};
        // Train history 0 1 2 3 contains pairs among {0,1,2,3}; test target 4 after 0..=4.
        let rec = RecDataset::new(vec![UserHistory {
            user: 1,
            interactions: ids(&[0, 1, 2, 3, 5, 4]),
        }]);
        let search = SearchDataset::new(vec![
            SearchRecord::new("s", ids(&[0, 4]), Split::Train),
            SearchRecord::new("t", ids(&[0, 1]), Split::Train),
            SearchRecord::new("u", ids(&[0, 1, 6]), Split::Test),
        ]);
        let wb = Workbench::new(search, rec, 7).unwrap();
        let base = run("b", &[("u1", &[6])]);
        let joint = run("j", &[("u1", &[4])]);
        let rows = redundancy_analysis(&wb, Task::Rec, &base, &joint, 1).unwrap();
        let by: BTreeMap<RedundancyClass, &RedundancyRow> = rows.iter().map(|r| (r.class, r)).collect();
        // Test pairs (h, 4): (0,4) only in search; (1,4),(2,4),(3,4),(4,5) in neither.
        assert_eq!(by[&RedundancyClass::NonRedundant].pairs, 1);
        assert_eq!(by[&RedundancyClass::Redundant].pairs, 0);
        assert_eq!(by[&RedundancyClass::NonRedundant].joint_recall, Some(1.0));
        assert_eq!(by[&RedundancyClass::NonRedundant].improvement_pct, None);
        let base = run("b", &[("q2", &[0])]);
        let joint = run("j", &[("q2", &[0, 1])]);
        let rows = redundancy_analysis(&wb, Task::Search, &base, &joint, 2).unwrap();
        // (0,1) is in a training relevance set and in the training history.
        assert_eq!(rows[0].class, RedundancyClass::Redundant);
        assert_eq!(rows[0].pairs, 1);
        assert!((rows[0].improvement_pct.unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(rows[1].pairs + rows[2].pairs, 0);
    }
}
