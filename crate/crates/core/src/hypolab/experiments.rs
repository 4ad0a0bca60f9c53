//! Sweep runners for the simulated hypothesis experiments and the
//! popularity-cap ablation.
//!
//! A sweep is a grid of (sample fraction, level, seed) cells. Every cell
//! generates its own data, trains the requested models with the cell seed
//! and evaluates them on the target task. Cells run in parallel but each is
//! single-threaded, so results do not depend on scheduling.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Model, Workbench};
use crate::corpus::{cap_per_item, joint_instances, Task};
use crate::error::{Error, Result};
use crate::evalkit::{mean_std, paired_t_test, EvalReport, MeanStd};
use crate::retriever::{self, RetrieverConfig};
use crate::simgen::{generate_sim1, generate_sim2, generate_sim3, Sim1Config, Sim2Config, Sim3Config};

/// What one sweep varies and how models are trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub k: usize,
    pub models: Vec<Model>,
    pub retriever: RetrieverConfig,
    pub alpha: f64,
    /// Fractions of target-task training instances kept (SIM2 only).
    pub sample_fractions: Vec<f64>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("an experiment needs at least one level and one seed".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.models.is_empty() || self.sample_fractions.is_empty() {
            return Err(Error::Config("an experiment needs models and sample fractions".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        if self.levels.iter().any(|l| !(l.is_finite() || *l == f64::INFINITY) || *l < 0.0) {
            return Err(Error::Config("levels must be nonnegative".into()));
        }
        self.retriever.validate()
    }
}

/// Per-experiment overrides in the configuration file. Missing values take
/// the experiment's own defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub levels: Option<Vec<f64>>,
    pub sample_fractions: Option<Vec<f64>>,
    pub retriever: Option<RetrieverConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Sim1,
    Sim2,
    Sim3,
    Cap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: usize,
    pub base_seed: u64,
    pub k: usize,
    pub alpha: f64,
    pub sim1: SweepSettings,
    pub sim2: SweepSettings,
    pub sim3: SweepSettings,
    pub cap: SweepSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: 5,
            base_seed: 0,
            k: 10,
            alpha: 0.05,
            sim1: SweepSettings::default(),
            sim2: SweepSettings::default(),
            sim3: SweepSettings::default(),
            cap: SweepSettings::default(),
        }
    }
}

/// Training settings used by each experiment unless overridden. The small
/// simulated datasets need more optimizer steps than the five epochs at
/// batch 128 that suit large corpora. SIM1 decays embeddings strongly so
/// that item popularity is carried by the shared, undecayed bias.
pub fn default_retriever(kind: ExperimentKind) -> RetrieverConfig {
    let base = RetrieverConfig::default();
    match kind {
        ExperimentKind::Sim1 | ExperimentKind::Cap => RetrieverConfig {
            weight_decay: 10.0,
            ..base
        },
        ExperimentKind::Sim2 => RetrieverConfig {
            learning_rate: 0.02,
            weight_decay: 1.0,
            batch_size: 32,
            epochs: 40,
            ..base
        },
        ExperimentKind::Sim3 => RetrieverConfig {
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 60,
            ..base
        },
    }
}

pub fn default_levels(kind: ExperimentKind) -> Vec<f64> {
    match kind {
        ExperimentKind::Sim1 => vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0],
        ExperimentKind::Sim2 | ExperimentKind::Sim3 => vec![0.0, 0.25, 0.5, 0.75, 1.0],
        ExperimentKind::Cap => vec![0.0, 10.0, 25.0, 50.0, 100.0, 250.0, f64::INFINITY],
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for kind in [ExperimentKind::Sim1, ExperimentKind::Sim2, ExperimentKind::Sim3, ExperimentKind::Cap] {
            self.spec(kind).validate()?;
        }
        Ok(())
    }

    pub fn settings(&self, kind: ExperimentKind) -> &SweepSettings {
        match kind {
            ExperimentKind::Sim1 => &self.sim1,
            ExperimentKind::Sim2 => &self.sim2,
            ExperimentKind::Sim3 => &self.sim3,
            ExperimentKind::Cap => &self.cap,
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.base_seed + i).collect()
    }

    pub fn spec(&self, kind: ExperimentKind) -> ExperimentSpec {
        let s = self.settings(kind);
        let models = match kind {
            ExperimentKind::Sim3 => vec![Model::GenS, Model::GenRS],
            _ => vec![Model::GenR, Model::GenRS],
        };
        ExperimentSpec {
            levels: s.levels.clone().unwrap_or_else(|| default_levels(kind)),
            seeds: self.seed_list(),
            k: self.k,
            models,
            retriever: s.retriever.clone().unwrap_or_else(|| default_retriever(kind)),
            alpha: self.alpha,
            sample_fractions: s.sample_fractions.clone().unwrap_or_else(|| match kind {
                ExperimentKind::Sim2 => vec![1.0, 0.65],
                _ => vec![1.0],
            }),
        }
    }
}

/// Aggregated result of one model at one sweep level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sample_fraction: f64,
    pub level: f64,
    /// Seed mean of the level's measured divergence (KLD, match share,
    /// pairs in qrels or kept instances).
    pub achieved: f64,
    pub model: Model,
    pub recall: MeanStd,
    pub head: Option<MeanStd>,
    pub torso: Option<MeanStd>,
    pub per_seed: Vec<f64>,
    /// Paired t-test over seeds against the task-specific model of the same
    /// cell (joint rows only).
    pub p_value: Option<f64>,
    pub significant: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub target: Task,
    pub variable: String,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<ResultRow>,
    /// Spearman correlation between achieved level and joint recall.
    pub spearman: Option<f64>,
    pub notes: Vec<String>,
}

fn fmt_level(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

impl ExperimentResult {
    pub fn rows_for(&self, model: Model, fraction: f64) -> impl Iterator<Item = &ResultRow> {
        self.rows
            .iter()
            .filter(move |r| r.model == model && r.sample_fraction == fraction)
    }

    pub fn row(&self, model: Model, fraction: f64, level: f64) -> Option<&ResultRow> {
        self.rows_for(model, fraction).find(|r| r.level == level)
    }

    pub fn csv(&self) -> String {
        let mut out = format!(
            "sample_fraction,{},achieved,model,k,recall_mean,recall_std,head_mean,torso_mean,p_value,significant,per_seed\n",
            self.variable
        );
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{},{:.6},{:.6},{},{},{},{},{}",
                r.sample_fraction,
                fmt_level(r.level),
                r.achieved,
                r.model,
                self.k,
                r.recall.mean,
                r.recall.std,
                opt(r.head.map(|m| m.mean)),
                opt(r.torso.map(|m| m.mean)),
                opt(r.p_value),
                r.significant.map_or_else(|| "NA".to_string(), |s| s.to_string()),
                r.per_seed.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(";"),
            );
        }
        out
    }
}

struct Cell {
    fraction: f64,
    level: f64,
    seed: u64,
}

struct CellResult {
    achieved: f64,
    reports: Vec<(Model, EvalReport)>,
}

fn cells(spec: &ExperimentSpec) -> Vec<Cell> {
    let mut out = Vec::new();
    for &fraction in &spec.sample_fractions {
        for &level in &spec.levels {
            for &seed in &spec.seeds {
                out.push(Cell { fraction, level, seed });
            }
        }
    }
    out
}

fn train_and_evaluate(
    wb: &Workbench,
    model: Model,
    data: &[crate::corpus::TrainingInstance],
    cfg: &RetrieverConfig,
    target: Task,
    k: usize,
) -> Result<EvalReport> {
    let report = retriever::train(cfg, &wb.vocab, data)?;
    let run = wb.predict(&report.params, target, k, &model.to_string())?;
    wb.evaluate(&run, target, k)
}

/// Runs every cell and aggregates rows. `make` builds the cell's workbench
/// and returns it with the measured level.
fn run_sweep<F>(name: &str, variable: &str, target: Task, spec: &ExperimentSpec, make: F) -> Result<ExperimentResult>
where
    F: Fn(&Cell) -> Result<(Workbench, f64)> + Sync,
{
    spec.validate()?;
    let grid = cells(spec);
    let results: Vec<Result<CellResult>> = grid
        .par_iter()
        .map(|cell| {
            let (wb, achieved) = make(cell)?;
            let cfg = RetrieverConfig { seed: cell.seed, ..spec.retriever.clone() };
            let mut reports = Vec::new();
            for &m in &spec.models {
                let data = wb.training_set(m, cell.seed)?;
                reports.push((m, train_and_evaluate(&wb, m, &data, &cfg, target, spec.k)?));
            }
            Ok(CellResult { achieved, reports })
        })
        .collect();
    let results: Vec<CellResult> = results.into_iter().collect::<Result<_>>()?;
    Ok(aggregate(name, variable, target, spec, &grid, &results))
}

fn aggregate(
    name: &str,
    variable: &str,
    target: Task,
    spec: &ExperimentSpec,
    grid: &[Cell],
    results: &[CellResult],
) -> ExperimentResult {
    let specific = Model::specific(target);
    let mut rows = Vec::new();
    let per_group = spec.seeds.len();
    for (g, chunk) in results.chunks(per_group).enumerate() {
        let cell = &grid[g * per_group];
        let achieved = chunk.iter().map(|c| c.achieved).sum::<f64>() / chunk.len() as f64;
        let seed_means = |m: Model| -> Vec<f64> {
            chunk
                .iter()
                .map(|c| c.reports.iter().find(|(x, _)| *x == m).expect("model trained").1.mean)
                .collect()
        };
        for &m in &spec.models {
            let reports: Vec<&EvalReport> = chunk
                .iter()
                .map(|c| &c.reports.iter().find(|(x, _)| *x == m).expect("model trained").1)
                .collect();
            let per_seed = seed_means(m);
            let bucket = |f: fn(&EvalReport) -> Option<f64>| -> Option<MeanStd> {
                reports.iter().map(|r| f(r)).collect::<Option<Vec<f64>>>().map(|v| mean_std(&v))
            };
            let test = (m == Model::GenRS && spec.models.contains(&specific) && per_seed.len() >= 2)
                .then(|| paired_t_test(&per_seed, &seed_means(specific), spec.alpha).ok())
                .flatten();
            rows.push(ResultRow {
                sample_fraction: cell.fraction,
                level: cell.level,
                achieved,
                model: m,
                recall: mean_std(&per_seed),
                head: bucket(|r| r.head),
                torso: bucket(|r| r.torso),
                per_seed,
                p_value: test.as_ref().map(|t| t.p_value),
                significant: test.as_ref().map(|t| t.significant && t.mean_diff > 0.0),
            });
        }
    }
    let mut result = ExperimentResult {
        name: name.into(),
        target,
        variable: variable.into(),
        k: spec.k,
        seeds: spec.seeds.clone(),
        rows,
        spearman: None,
        notes: Vec::new(),
    };
    let fraction = spec.sample_fractions[0];
    let joint: Vec<&ResultRow> = result.rows_for(Model::GenRS, fraction).collect();
    if joint.len() >= 2 {
        let x: Vec<f64> = joint.iter().map(|r| r.achieved).collect();
        let y: Vec<f64> = joint.iter().map(|r| r.recall.mean).collect();
        result.spearman = Some(spearman(&x, &y));
    }
    result
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            r[p] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn swaps_of(level: f64) -> Result<usize> {
    if level.fract() != 0.0 || level < 0.0 {
        return Err(Error::Config(format!("shuffle level {level} is not a swap count")));
    }
    Ok(level as usize)
}

/// Popularity divergence sweep. Levels are shuffle swap counts; the target
/// task is recommendation.
pub fn run_sim1_experiment(base: &Sim1Config, spec: &ExperimentSpec) -> Result<ExperimentResult> {
    for &l in &spec.levels {
        swaps_of(l)?;
    }
    let mut out = run_sweep("sim1", "swaps", Task::Rec, spec, |cell| {
        let cfg = Sim1Config {
            shuffle_swaps: swaps_of(cell.level)?,
            seed: cell.seed,
            ..base.clone()
        };
        let data = generate_sim1(&cfg)?;
        let kld = data.meta.achieved_kld;
        Ok((Workbench::new(data.search, data.rec, cfg.num_items)?, kld))
    })?;
    out.notes.push("achieved = KL(search || rec) of the generating distributions, nats".into());
    Ok(out)
}

/// Query-match sweep with recommendation as the target task.
pub fn run_sim2_experiment(base: &Sim2Config, spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let mut out = run_sweep("sim2", "query_match_pct", Task::Rec, spec, |cell| {
        let cfg = Sim2Config {
            query_match_pct: cell.level,
            seed: cell.seed,
            ..base.clone()
        };
        let data = generate_sim2(&cfg)?;
        let achieved = data.meta.achieved_query_match;
        let mut wb = Workbench::new(data.search, data.rec, cfg.num_items())?;
        wb.subsample_rec(cell.fraction, cell.seed)?;
        Ok((wb, achieved))
    })?;
    out.notes
        .push("sample_fraction = share of recommendation training instances kept for both models".into());
    Ok(out)
}

/// Pairs-in-qrels sweep with search as the target task.
pub fn run_sim3_experiment(base: &Sim3Config, spec: &ExperimentSpec) -> Result<ExperimentResult> {
    run_sweep("sim3", "pairs_in_qrels_pct", Task::Search, spec, |cell| {
        let cfg = Sim3Config {
            pairs_in_qrels_pct: cell.level,
            seed: cell.seed,
            ..base.clone()
        };
        let data = generate_sim3(&cfg)?;
        let achieved = data.meta.achieved_pairs_in_qrels;
        Ok((Workbench::new(data.search, data.rec, cfg.num_items())?, achieved))
    })
}

/// Joint training with at most `cap` added-task instances per item (levels
/// are caps; `inf` keeps everything). `make` builds the workbench of a
/// seed. Rows report the kept added-task instance count as `achieved`.
pub fn popularity_cap_ablation<F>(target: Task, spec: &ExperimentSpec, make: F) -> Result<ExperimentResult>
where
    F: Fn(u64) -> Result<Workbench> + Sync,
{
    spec.validate()?;
    let added = match target {
        Task::Search => Task::Rec,
        Task::Rec => Task::Search,
    };
    let specific = Model::specific(target);
    let grid = cells(spec);
    let results: Vec<Result<CellResult>> = grid
        .par_iter()
        .map(|cell| {
            let wb = make(cell.seed)?;
            let cfg = RetrieverConfig { seed: cell.seed, ..spec.retriever.clone() };
            let cap = if cell.level.is_infinite() { usize::MAX } else { cell.level as usize };
            let kept = cap_per_item(wb.train_instances(added), cap);
            let (search, rec) = match added {
                Task::Search => (&kept, &wb.rec_train),
                Task::Rec => (&wb.search_train, &kept),
            };
            let joint = joint_instances(search, rec, &wb.vocab, cell.seed)?;
            let spec_data = wb.training_set(specific, cell.seed)?;
            let reports = vec![
                (specific, train_and_evaluate(&wb, specific, &spec_data, &cfg, target, spec.k)?),
                (Model::GenRS, train_and_evaluate(&wb, Model::GenRS, &joint, &cfg, target, spec.k)?),
            ];
            Ok(CellResult {
                achieved: kept.len() as f64,
                reports,
            })
        })
        .collect();
    let results: Vec<CellResult> = results.into_iter().collect::<Result<_>>()?;
    let spec = ExperimentSpec {
        models: vec![specific, Model::GenRS],
        ..spec.clone()
    };
    let mut out = aggregate("cap", "cap_per_item", target, &spec, &grid, &results);
    out.spearman = None;
    out.notes.push(format!("achieved = {added} training instances kept after capping"));
    Ok(out)
}

/// Within- and across-cluster cosine similarity of item embeddings for one
/// seed, rec-only versus joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub seed: u64,
    pub specific_within: f64,
    pub specific_across: f64,
    pub joint_within: f64,
    pub joint_across: f64,
}

impl MarginRow {
    pub fn specific_margin(&self) -> f64 {
        self.specific_within - self.specific_across
    }

    pub fn joint_margin(&self) -> f64 {
        self.joint_within - self.joint_across
    }
}

/// Trains rec-only and joint models on SIM2 data at the first level and
/// sample fraction of `spec` and compares cluster cohesion of their item
/// embeddings.
pub fn sim2_embedding_margins(base: &Sim2Config, spec: &ExperimentSpec) -> Result<Vec<MarginRow>> {
    spec.validate()?;
    let results: Vec<Result<MarginRow>> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let cfg = Sim2Config {
                query_match_pct: spec.levels[0],
                seed,
                ..base.clone()
            };
            let data = generate_sim2(&cfg)?;
            let mut wb = Workbench::new(data.search, data.rec, cfg.num_items())?;
            wb.subsample_rec(spec.sample_fractions[0], seed)?;
            let rcfg = RetrieverConfig { seed, ..spec.retriever.clone() };
            let margin = |m: Model| -> Result<(f64, f64)> {
                let params = wb.train(m, &rcfg)?.params;
                super::cluster_cosine_margin(&params, &data.meta.clusters)
                    .ok_or_else(|| Error::Config("sim2 margins need at least two clusters".into()))
            };
            let (sw, sa) = margin(Model::GenR)?;
            let (jw, ja) = margin(Model::GenRS)?;
            Ok(MarginRow {
                seed,
                specific_within: sw,
                specific_across: sa,
                joint_within: jw,
                joint_across: ja,
            })
        })
        .collect();
    results.into_iter().collect()
}

pub fn margins_csv(rows: &[MarginRow]) -> String {
    let mut out = String::from("seed,rec_only_within,rec_only_across,rec_only_margin,joint_within,joint_across,joint_margin\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.seed,
            r.specific_within,
            r.specific_across,
            r.specific_margin(),
            r.joint_within,
            r.joint_across,
            r.joint_margin()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 5.0, 9.0], &[0.1, 0.2, 0.9]) - 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), [2.5, 1.0, 2.5]);
        assert_eq!(spearman(&[1.0, 1.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn config_defaults() {
        let cfg = ExperimentConfig::default();
        let s = cfg.spec(ExperimentKind::Sim2);
        assert_eq!(s.seeds, [0, 1, 2, 3, 4]);
        assert_eq!(s.sample_fractions, [1.0, 0.65]);
        assert_eq!(s.models, [Model::GenR, Model::GenRS]);
        assert_eq!(cfg.spec(ExperimentKind::Sim3).models, [Model::GenS, Model::GenRS]);
        cfg.validate().unwrap();
    }

    #[test]
    fn fractional_swaps_rejected() {
        let spec = ExperimentConfig::default().spec(ExperimentKind::Sim1);
        let spec = ExperimentSpec { levels: vec![1.5], ..spec };
        assert!(run_sim1_experiment(&Sim1Config::default(), &spec).is_err());
    }
}
