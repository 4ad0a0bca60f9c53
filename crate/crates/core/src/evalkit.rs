//! Recall evaluation, Head/Torso bucketing, popularity baselines and paired
//! significance tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{ItemId, Task};
use crate::decode::{RankedList, Run};
use crate::error::{Error, Result};

/// Relevance judgments keyed by instance id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelEntry {
    pub qid: String,
    pub task: Task,
    pub relevant: BTreeSet<ItemId>,
}

pub type Qrels = BTreeMap<String, QrelEntry>;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalInstance {
    pub id: String,
    pub task: Task,
    pub relevance: BTreeSet<ItemId>,
    pub prediction: RankedList,
}

/// Pairs every judged instance with its ranked list. Instances the run
/// did not answer get an empty list.
pub fn join_run(run: &Run, qrels: &Qrels) -> Vec<EvalInstance> {
    qrels
        .values()
        .map(|q| EvalInstance {
            id: q.qid.clone(),
            task: q.task,
            relevance: q.relevant.clone(),
            prediction: run
                .lists
                .get(&q.qid)
                .cloned()
                .unwrap_or_else(|| RankedList::new(Vec::new(), 0)),
        })
        .collect()
}

/// Share of the relevant items found in the first `k` entries.
pub fn recall_at_k(prediction: &RankedList, relevance: &BTreeSet<ItemId>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if relevance.is_empty() {
        return Err(Error::Data("empty relevance set".into()));
    }
    let hits = prediction.items().take(k).filter(|i| relevance.contains(i)).count();
    Ok(hits as f64 / relevance.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Head,
    Torso,
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bucket::Head => "head",
            Bucket::Torso => "torso",
        })
    }
}

/// Number of Head items for a catalog of `n` items.
pub fn head_size(n: usize) -> usize {
    (n as f64 * 0.01).ceil() as usize
}

/// Marks the `ceil(0.01·n)` most frequent items as Head; ties go to the
/// lower id.
pub fn head_torso_buckets(counts: &[u64]) -> Vec<Bucket> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut buckets = vec![Bucket::Torso; counts.len()];
    for &i in order.iter().take(head_size(counts.len())) {
        buckets[i] = Bucket::Head;
    }
    buckets
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub ids: Vec<String>,
    pub per_instance: Vec<f64>,
    pub mean: f64,
    /// `None` when no instance has a Head item in its relevance set.
    pub head: Option<f64>,
    pub torso: Option<f64>,
    pub head_instances: usize,
    pub torso_instances: usize,
    pub num_instances: usize,
}

impl EvalReport {
    pub fn bucket(&self, b: Option<Bucket>) -> Option<f64> {
        match b {
            None => Some(self.mean),
            Some(Bucket::Head) => self.head,
            Some(Bucket::Torso) => self.torso,
        }
    }
}

/// Recall over all instances and per bucket. A bucket's recall restricts
/// each relevance set to the bucket's items and skips instances left with
/// nothing.
pub fn bucketed_evaluate(instances: &[EvalInstance], buckets: &[Bucket], k: usize) -> Result<EvalReport> {
    if instances.is_empty() {
        return Err(Error::Data("no instances to evaluate".into()));
    }
    let mut per_instance = Vec::with_capacity(instances.len());
    let mut sums: BTreeMap<Bucket, (f64, usize)> = BTreeMap::new();
    for inst in instances {
        per_instance.push(recall_at_k(&inst.prediction, &inst.relevance, k)?);
        for b in [Bucket::Head, Bucket::Torso] {
            let mut restricted = BTreeSet::new();
            for &i in &inst.relevance {
                let ib = buckets.get(i.index()).ok_or_else(|| {
                    Error::Data(format!("item {i} of instance {} has no bucket", inst.id))
                })?;
                if *ib == b {
                    restricted.insert(i);
                }
            }
            if !restricted.is_empty() {
                let e = sums.entry(b).or_default();
                e.0 += recall_at_k(&inst.prediction, &restricted, k)?;
                e.1 += 1;
            }
        }
    }
    let mean_of = |b| sums.get(&b).map(|(s, n)| s / *n as f64);
    let count_of = |b| sums.get(&b).map_or(0, |e| e.1);
    Ok(EvalReport {
        k,
        ids: instances.iter().map(|i| i.id.clone()).collect(),
        mean: per_instance.iter().sum::<f64>() / per_instance.len() as f64,
        per_instance,
        head: mean_of(Bucket::Head),
        torso: mean_of(Bucket::Torso),
        head_instances: count_of(Bucket::Head),
        torso_instances: count_of(Bucket::Torso),
        num_instances: instances.len(),
    })
}

/// The `k` most frequent training items (ties by id), scored by the log of
/// their relative frequency.
pub fn pop_baseline(counts: &[u64], k: usize) -> Result<RankedList> {
    let total: u64 = counts.iter().sum();
    if counts.is_empty() || total == 0 {
        return Err(Error::Data("popularity baseline needs nonzero counts".into()));
    }
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(RankedList::new(
        order
            .into_iter()
            .map(|i| (ItemId::from(i), (counts[i] as f64 / total as f64).ln()))
            .collect(),
        k,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub mean_diff: f64,
    pub t_statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub significant: bool,
}

/// Two-sided paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TTestResult> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Data(format!(
            "paired t-test needs two equal-length samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    let (t, p) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / (var / n).sqrt();
        (t, student_t_two_sided(t, df as f64))
    };
    Ok(TTestResult {
        mean_diff: mean,
        t_statistic: t,
        df,
        p_value: p,
        significant: p < alpha,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    match StudentsT::new(0.0, 1.0, df) {
        Ok(dist) => (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0),
        Err(_) => f64::NAN,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub k: usize,
    pub seeds: usize,
    pub all: MeanStd,
    pub head: Option<MeanStd>,
    pub torso: Option<MeanStd>,
    /// Per-seed All means, kept for significance tests across seeds.
    pub per_seed: Vec<f64>,
}

/// Mean and sample std of every metric across per-seed reports.
pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<SeedAggregate> {
    let first = reports.first().ok_or_else(|| Error::Data("no reports to aggregate".into()))?;
    for r in reports {
        if r.k != first.k || r.ids != first.ids {
            return Err(Error::Data("reports cover different K or instance sets".into()));
        }
    }
    let per_seed: Vec<f64> = reports.iter().map(|r| r.mean).collect();
    let bucket = |f: fn(&EvalReport) -> Option<f64>| -> Option<MeanStd> {
        let v: Option<Vec<f64>> = reports.iter().map(f).collect();
        v.map(|v| mean_std(&v))
    };
    Ok(SeedAggregate {
        k: first.k,
        seeds: reports.len(),
        all: mean_std(&per_seed),
        head: bucket(|r| r.head),
        torso: bucket(|r| r.torso),
        per_seed,
    })
}

/// One line of the evaluation CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub metric: String,
    pub bucket: Option<Bucket>,
    pub value: Option<MeanStd>,
    pub p_value: Option<f64>,
    pub baseline: Option<String>,
}

pub const REPORT_HEADER: &str = "run,metric,bucket,mean,std,p_value,baseline";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.run,
            r.metric,
            r.bucket.map_or_else(|| "all".to_string(), |b| b.to_string()),
            opt(r.value.map(|v| v.mean)),
            opt(r.value.map(|v| v.std)),
            opt(r.p_value),
            r.baseline.as_deref().unwrap_or("NA"),
        ));
    }
    out
}
