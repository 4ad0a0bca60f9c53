use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use genir_core::corpus::{Split, Task};
use genir_core::decode::Run;
use genir_core::evalkit::{
    bucketed_evaluate, join_run, paired_t_test, pop_baseline, report_csv, Bucket, EvalReport, MeanStd, ReportRow,
};
use genir_core::hypolab::experiments::{margins_csv, sim2_embedding_margins};
use genir_core::hypolab::{
    analysis, delta_popularity, history_target_query_matches, popularity_cap_ablation, project_embeddings,
    redundancy_analysis, rel_pair_cooccurrence, run_sim1_experiment, run_sim2_experiment, run_sim3_experiment,
    ExperimentKind, ExperimentResult, Model, Workbench,
};
use genir_core::io::{
    self, env_seed, format_run, load_config, read_dataset_dir, read_qrels, read_run, to_jsonl, to_pretty_json,
    write_atomic, write_dataset_dir, GenirConfig, RunManifest,
};
use genir_core::retriever::checkpoint;
use genir_core::simgen::{generate_sim1, generate_sim2, generate_sim3, Sim1Config, Sim2Config, Sim3Config};
use genir_core::stats::dataset_stats;
use genir_core::{Error, Result};
use serde_json::{json, Value};

use crate::{
    AnalysisKind, AnalyzeArgs, Cli, Command, EvaluateArgs, ExperimentArg, ExperimentArgs, ProjectArgs,
    RetrieveArgs, SimKind, SimulateArgs, StatsArgs, TaskArg, TrainArgs, TrainKind,
};

/// Output directory, configuration and the manifest being assembled.
struct Session {
    out: PathBuf,
    cfg: GenirConfig,
    manifest: RunManifest,
    started: Instant,
}

impl Session {
    fn emit(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(name);
        write_atomic(&path, bytes)?;
        self.manifest.add_output(&self.out, &path)?;
        Ok(path)
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.add_input(path)
    }

    fn input_dir(&mut self, dir: &Path) -> Result<()> {
        for name in [io::SEARCH_FILE, io::REC_FILE, io::META_FILE] {
            let p = dir.join(name);
            if p.exists() {
                self.input(&p)?;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        let path = self.manifest.write(&self.out)?;
        println!("{}", path.display());
        Ok(())
    }
}

fn load(cli: &Cli) -> Result<GenirConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => {
            let mut c = GenirConfig::default();
            if let Some(s) = env_seed()? {
                c.apply_seed(s);
            }
            c
        }
    };
    if let Some(s) = cli.seed {
        cfg.apply_seed(s);
    }
    if let Some(s) = cfg.seed {
        cfg.experiment.base_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn task_of(t: TaskArg) -> Task {
    match t {
        TaskArg::Search => Task::Search,
        TaskArg::Rec => Task::Rec,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    std::fs::create_dir_all(&cli.output_dir).map_err(|source| Error::Io {
        path: cli.output_dir.clone(),
        source,
    })?;
    let seeds = match &cli.command {
        Command::Experiment(_) => cfg.experiment.seed_list(),
        _ => vec![cfg.seed.unwrap_or(cfg.retriever.seed)],
    };
    let mut s = Session {
        out: cli.output_dir.clone(),
        manifest: RunManifest::new(std::env::args().collect(), cfg.clone(), seeds),
        cfg,
        started: Instant::now(),
    };
    match &cli.command {
        Command::Simulate(a) => simulate(&mut s, a)?,
        Command::Train(a) => train(&mut s, a)?,
        Command::Retrieve(a) => retrieve(&mut s, a)?,
        Command::Evaluate(a) => evaluate(&mut s, a)?,
        Command::Stats(a) => stats(&mut s, a)?,
        Command::Experiment(a) => experiment(&mut s, a)?,
        Command::Analyze(a) => analyze(&mut s, a)?,
        Command::Project(a) => project(&mut s, a)?,
    }
    s.finish()
}

fn with_fields(meta: Value, name: &str, num_items: usize) -> Value {
    let mut meta = meta;
    if let Value::Object(m) = &mut meta {
        m.insert("simulation".into(), json!(name));
        m.insert("num_items".into(), json!(num_items));
    }
    meta
}

fn simulate(s: &mut Session, a: &SimulateArgs) -> Result<()> {
    let (search, rec, meta) = match a.kind {
        SimKind::Sim1 => {
            let cfg = Sim1Config {
                shuffle_swaps: a.swaps.unwrap_or(s.cfg.sim1.shuffle_swaps),
                ..s.cfg.sim1.clone()
            };
            let d = generate_sim1(&cfg)?;
            (d.search, d.rec, with_fields(serde_json::to_value(&d.meta)?, "sim1", cfg.num_items))
        }
        SimKind::Sim2 => {
            let cfg = Sim2Config {
                query_match_pct: a.query_match.unwrap_or(s.cfg.sim2.query_match_pct),
                ..s.cfg.sim2.clone()
            };
            let d = generate_sim2(&cfg)?;
            (d.search, d.rec, with_fields(serde_json::to_value(&d.meta)?, "sim2", cfg.num_items()))
        }
        SimKind::Sim3 => {
            let cfg = Sim3Config {
                pairs_in_qrels_pct: a.pairs_in_qrels.unwrap_or(s.cfg.sim3.pairs_in_qrels_pct),
                ..s.cfg.sim3.clone()
            };
            let d = generate_sim3(&cfg)?;
            (d.search, d.rec, with_fields(serde_json::to_value(&d.meta)?, "sim3", cfg.num_items()))
        }
    };
    for p in write_dataset_dir(&s.out, &search, &rec, &meta)? {
        s.manifest.add_output(&s.out, &p)?;
    }
    Ok(())
}

fn workbench(s: &mut Session, dir: &Path) -> Result<(Workbench, Value)> {
    s.input_dir(dir)?;
    let d = read_dataset_dir(dir)?;
    Ok((Workbench::new(d.search, d.rec, d.num_items)?, d.meta))
}

fn train(s: &mut Session, a: &TrainArgs) -> Result<()> {
    let (mut wb, _) = workbench(s, &a.data)?;
    let model = match a.kind {
        TrainKind::Search => Model::GenS,
        TrainKind::Rec => Model::GenR,
        TrainKind::Joint => Model::GenRS,
    };
    if let Some(f) = a.sample_fraction {
        wb.subsample_rec(f, s.cfg.retriever.seed)?;
    }
    let report = wb.train(model, &s.cfg.retriever)?;
    let ckpt = checkpoint::encode(&report.params, &report.config, &wb.vocab, report.optimizer_steps)?;
    s.emit("model.ckpt", &ckpt)?;
    let summary = json!({
        "model": model.to_string(),
        "training_instances": wb.training_set(model, s.cfg.retriever.seed)?.len(),
        "optimizer_steps": report.optimizer_steps,
        "epoch_losses": report.epoch_losses,
        "task_losses": report.task_losses,
        "vocab_size": wb.vocab.len(),
        "num_items": wb.num_items,
    });
    s.emit("train_report.json", to_pretty_json(&summary)?.as_bytes())?;
    Ok(())
}

fn retrieve(s: &mut Session, a: &RetrieveArgs) -> Result<()> {
    let (wb, _) = workbench(s, &a.data)?;
    s.input(&a.checkpoint)?;
    let (params, _) = checkpoint::load(&a.checkpoint, &wb.vocab)?;
    let mut decode = s.cfg.decode.clone();
    if let Some(k) = a.k {
        decode.k = k;
    }
    decode.diverse |= a.diverse;
    decode.beam().validate()?;
    let task = task_of(a.task);
    let run = wb.predict_with(&params, task, &decode, &a.tag)?;
    s.emit("run.trec", format_run(&run).as_bytes())?;
    let qrels = wb.qrels(task);
    let rows: Vec<_> = qrels.values().collect();
    s.emit("qrels.jsonl", to_jsonl(&rows)?.as_bytes())?;
    Ok(())
}

fn report_rows(name: &str, report: &EvalReport, p_value: Option<f64>, baseline: Option<&str>) -> Vec<ReportRow> {
    let metric = format!("recall@{}", report.k);
    [None, Some(Bucket::Head), Some(Bucket::Torso)]
        .into_iter()
        .map(|b| ReportRow {
            run: name.into(),
            metric: metric.clone(),
            bucket: b,
            value: report.bucket(b).map(|m| MeanStd { mean: m, std: 0.0 }),
            p_value: if b.is_none() { p_value } else { None },
            baseline: baseline.map(str::to_string),
        })
        .collect()
}

fn evaluate(s: &mut Session, a: &EvaluateArgs) -> Result<()> {
    s.input(&a.run)?;
    s.input(&a.qrels)?;
    let run = read_run(&a.run)?;
    let qrels = read_qrels(&a.qrels)?;
    let k = a.k.unwrap_or(s.cfg.decode.k);
    let instances = join_run(&run, &qrels);
    let context = match &a.data {
        Some(dir) => {
            let task = a
                .task
                .map(task_of)
                .or_else(|| qrels.values().next().map(|q| q.task))
                .ok_or_else(|| Error::Data("empty qrels".into()))?;
            let (wb, _) = workbench(s, dir)?;
            Some((wb.buckets(task)?, wb.train_profile(task)?.counts))
        }
        None => None,
    };
    let buckets = match &context {
        Some((b, _)) => b.clone(),
        None => {
            let max = instances
                .iter()
                .flat_map(|i| i.relevance.iter().chain(i.prediction.items().collect::<Vec<_>>().iter()).copied().collect::<Vec<_>>())
                .map(|i| i.index() + 1)
                .max()
                .unwrap_or(0);
            vec![Bucket::Torso; max]
        }
    };
    let report = bucketed_evaluate(&instances, &buckets, k)?;
    let mut rows = Vec::new();
    let mut per_instance = String::from("qid,recall\n");
    for (id, r) in report.ids.iter().zip(&report.per_instance) {
        per_instance.push_str(&format!("{id},{r:.6}\n"));
    }
    let mut p_value = None;
    let mut baseline_name = None;
    if let Some(bp) = &a.baseline {
        s.input(bp)?;
        let base = read_run(bp)?;
        let base_report = bucketed_evaluate(&join_run(&base, &qrels), &buckets, k)?;
        if report.per_instance.len() >= 2 {
            p_value = Some(paired_t_test(&report.per_instance, &base_report.per_instance, s.cfg.experiment.alpha)?.p_value);
        }
        baseline_name = Some(base.tag.clone());
        rows.extend(report_rows(&base.tag, &base_report, None, None));
    }
    rows.extend(report_rows(&run.tag, &report, p_value, baseline_name.as_deref()));
    if let Some((_, counts)) = &context {
        let list = pop_baseline(counts, k)?;
        let mut pop = Run::new("Pop");
        for q in qrels.keys() {
            pop.lists.insert(q.clone(), list.clone());
        }
        let pop_report = bucketed_evaluate(&join_run(&pop, &qrels), &buckets, k)?;
        rows.extend(report_rows("Pop", &pop_report, None, None));
    }
    s.emit("eval.csv", report_csv(&rows).as_bytes())?;
    s.emit("eval_per_instance.csv", per_instance.as_bytes())?;
    println!("recall@{k} = {:.6} over {} instances", report.mean, report.num_instances);
    Ok(())
}

fn stats(s: &mut Session, a: &StatsArgs) -> Result<()> {
    s.input_dir(&a.data)?;
    let d = read_dataset_dir(&a.data)?;
    let st = dataset_stats(&d.search, &d.rec, d.num_items)?;
    let csv = format!("{}\n{}\n", genir_core::stats::DatasetStats::CSV_HEADER, st.csv_row());
    s.emit("stats.csv", csv.as_bytes())?;
    s.emit("stats.json", to_pretty_json(&st)?.as_bytes())?;
    Ok(())
}

fn parse_levels(raw: &[String]) -> Result<Vec<f64>> {
    raw.iter()
        .map(|l| match l.trim() {
            "inf" | "Inf" | "infinity" => Ok(f64::INFINITY),
            t => t
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("level {t:?} is not a number"))),
        })
        .collect()
}

fn experiment(s: &mut Session, a: &ExperimentArgs) -> Result<()> {
    let kind = match a.kind {
        ExperimentArg::Sim1 => ExperimentKind::Sim1,
        ExperimentArg::Sim2 => ExperimentKind::Sim2,
        ExperimentArg::Sim3 => ExperimentKind::Sim3,
        ExperimentArg::Cap => ExperimentKind::Cap,
    };
    if let Some(n) = a.seeds {
        s.cfg.experiment.seeds = n;
    }
    let mut spec = s.cfg.experiment.spec(kind);
    if let Some(l) = &a.levels {
        spec.levels = parse_levels(l)?;
    }
    if let Some(f) = &a.sample_fractions {
        spec.sample_fractions = f.clone();
    }
    spec.validate()?;
    s.manifest.seeds = spec.seeds.clone();
    s.manifest.config = s.cfg.clone();
    let (file, result): (&str, ExperimentResult) = match kind {
        ExperimentKind::Sim1 => ("fig3_sim1.csv", run_sim1_experiment(&s.cfg.sim1, &spec)?),
        ExperimentKind::Sim2 => ("table3_sim2.csv", run_sim2_experiment(&s.cfg.sim2, &spec)?),
        ExperimentKind::Sim3 => ("table3_sim3.csv", run_sim3_experiment(&s.cfg.sim3, &spec)?),
        ExperimentKind::Cap => {
            let target = task_of(a.task);
            let result = match &a.data {
                Some(dir) => {
                    s.input_dir(dir)?;
                    let d = read_dataset_dir(dir)?;
                    popularity_cap_ablation(target, &spec, |_| {
                        Workbench::new(d.search.clone(), d.rec.clone(), d.num_items)
                    })?
                }
                None => {
                    let base = s.cfg.sim1.clone();
                    popularity_cap_ablation(target, &spec, |seed| {
                        let cfg = Sim1Config { seed, ..base.clone() };
                        let d = generate_sim1(&cfg)?;
                        Workbench::new(d.search, d.rec, cfg.num_items)
                    })?
                }
            };
            ("fig5_cap.csv", result)
        }
    };
    s.emit(file, result.csv().as_bytes())?;
    let json_name = file.replace(".csv", ".json");
    s.emit(&json_name, to_pretty_json(&result)?.as_bytes())?;
    if kind == ExperimentKind::Sim2 {
        let top = spec.levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mspec = genir_core::hypolab::ExperimentSpec {
            levels: vec![top],
            sample_fractions: vec![spec.sample_fractions[0]],
            ..spec.clone()
        };
        let margins = sim2_embedding_margins(&s.cfg.sim2, &mspec)?;
        s.emit("sim2_margins.csv", margins_csv(&margins).as_bytes())?;
    }
    if let Some(r) = result.spearman {
        println!("spearman({}, joint recall) = {r:.4}", result.variable);
    }
    Ok(())
}

fn analyze(s: &mut Session, a: &AnalyzeArgs) -> Result<()> {
    let (wb, _) = workbench(s, &a.data)?;
    s.input(&a.baseline)?;
    s.input(&a.joint)?;
    let baseline = read_run(&a.baseline)?;
    let joint = read_run(&a.joint)?;
    let task = task_of(a.task);
    match a.kind {
        AnalysisKind::Pop => {
            let other = match task {
                Task::Search => Task::Rec,
                Task::Rec => Task::Search,
            };
            let d = delta_popularity(&baseline, &joint, &wb.train_profile(other)?)?;
            let name = format!("Pop_{}:{}->{}", if other == Task::Search { "S" } else { "R" }, baseline.tag, joint.tag);
            s.emit("table4_pop.csv", analysis::popularity_csv(&[(name, d)]).as_bytes())?;
        }
        AnalysisKind::Latent => {
            let report = match task {
                Task::Rec => history_target_query_matches(&wb.split.test, &wb.search.subset(Split::Train), &baseline, &joint)?,
                Task::Search => {
                    let queries: BTreeMap<String, _> =
                        wb.search_test.iter().map(|q| (q.qid.clone(), q.relevant.clone())).collect();
                    rel_pair_cooccurrence(&queries, &wb.rec_train_histories(), &baseline, &joint)?
                }
            };
            s.emit("table5_latent.csv", analysis::latent_csv(&[report]).as_bytes())?;
        }
        AnalysisKind::Redundancy => {
            let k = a.k.unwrap_or(s.cfg.decode.k);
            let rows = redundancy_analysis(&wb, task, &baseline, &joint, k)?;
            s.emit("table6_redundancy.csv", analysis::redundancy_csv(&rows).as_bytes())?;
        }
    }
    Ok(())
}

fn project(s: &mut Session, a: &ProjectArgs) -> Result<()> {
    let (wb, meta) = workbench(s, &a.data)?;
    s.input(&a.checkpoint)?;
    let (params, _) = checkpoint::load(&a.checkpoint, &wb.vocab)?;
    let search = wb.train_profile(Task::Search)?.counts;
    let rec = wb.train_profile(Task::Rec)?.counts;
    let counts: Vec<u64> = search.iter().zip(&rec).map(|(a, b)| a + b).collect();
    let clusters: Option<Vec<usize>> = meta
        .get("clusters")
        .and_then(|c| serde_json::from_value(c.clone()).ok())
        .filter(|c: &Vec<usize>| c.len() == wb.num_items);
    let proj = project_embeddings(&params, &counts, clusters.as_deref());
    s.emit("fig4_projection.csv", proj.csv().as_bytes())?;
    s.emit(
        "embeddings.csv",
        genir_core::hypolab::projection::embeddings_csv(&params).as_bytes(),
    )?;
    if let Some((w, x)) = proj.cluster_distances() {
        println!("mean 2-D distance within clusters {w:.4}, across {x:.4}");
    }
    Ok(())
}
