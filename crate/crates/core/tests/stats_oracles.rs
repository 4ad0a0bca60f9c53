use std::collections::BTreeSet;

use genir_core::corpus::{joint_instances, ItemId, Task, TrainingInstance, Vocabulary};
use genir_core::decode::Run;
use genir_core::evalkit::{paired_t_test, pop_baseline};
use genir_core::hypolab::Workbench;
use genir_core::simgen::{
    empirical_distribution, generate_sim1, generate_sim2, generate_sim3, zipf_distribution, Sim1Config, Sim2Config,
    Sim3Config,
};
use proptest::prelude::*;
use statrs::function::gamma::ln_gamma;

fn instances(counts: &[usize], word: usize, offset: usize, task: Task) -> Vec<TrainingInstance> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| {
            std::iter::repeat_n(TrainingInstance { input: vec![word], target: offset + i, task }, c)
        })
        .collect()
}

#[test]
fn joint_training_exposure_averages_the_tasks() {
    // The last item is only seen in search.
    let vocab = Vocabulary::new(["w"], 5).unwrap();
    let (word, offset) = (vocab.text_token("w").unwrap(), vocab.item_offset());
    let search = instances(&[4, 0, 10, 2, 4], word, offset, Task::Search);
    let rec = instances(&[1, 8, 10, 1, 0], offset, offset, Task::Rec);
    let joint = joint_instances(&search, &rec, &vocab, 9).unwrap();
    let exposure = empirical_distribution(joint.iter().map(|t| vocab.item_of(t.target).unwrap()), 5);
    for (got, want) in exposure.iter().zip([0.125, 0.20, 0.50, 0.075, 0.10]) {
        assert!((got - want).abs() < 1e-12, "{exposure:?}");
    }
}

#[test]
fn rec_target_histogram_converges_to_zipf() {
    let cfg = Sim1Config {
        num_items: 10,
        zipf_exponent: 1.0,
        num_users: 20_000,
        interactions_per_user: 5,
        seed: 2,
        ..Default::default()
    };
    let d = generate_sim1(&cfg).unwrap();
    let draws = d.rec.users.iter().flat_map(|u| u.interactions.iter().copied());
    let hist = empirical_distribution(draws, 10);
    let base = zipf_distribution(10, 1.0).unwrap();
    let l1: f64 = hist.iter().zip(base.probs()).map(|(a, b)| (a - b).abs()).sum();
    assert!(l1 < 0.05, "L1 {l1}");
}

#[test]
fn pop_baseline_recall_matches_analytic_expectation() {
    let k = 10;
    let base = zipf_distribution(20, Sim1Config::default().zipf_exponent).unwrap();
    let mut ranked: Vec<f64> = base.probs().to_vec();
    ranked.sort_by(|a, b| b.total_cmp(a));
    let analytic: f64 = ranked[..k].iter().sum();
    let mut observed = Vec::new();
    for seed in 0..5 {
        let cfg = Sim1Config { seed, ..Default::default() };
        let d = generate_sim1(&cfg).unwrap();
        let wb = Workbench::new(d.search, d.rec, cfg.num_items).unwrap();
        let counts = wb.train_profile(Task::Rec).unwrap().counts;
        let list = pop_baseline(&counts, k).unwrap();
        let mut run = Run::new("pop");
        for q in wb.test_queries(Task::Rec) {
            run.lists.insert(q.qid.clone(), list.clone());
        }
        observed.push(wb.evaluate(&run, Task::Rec, k).unwrap().mean);
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    assert!((mean - analytic).abs() < 0.03, "Monte-Carlo {mean:.4} vs analytic {analytic:.4}");
}

#[test]
fn sim2_full_match_gives_one_component_per_cluster() {
    for seed in 0..3 {
        let cfg = Sim2Config { seed, ..Default::default() };
        let d = generate_sim2(&cfg).unwrap();
        let n = cfg.num_items();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        let mut by_query: std::collections::BTreeMap<&str, Vec<ItemId>> = Default::default();
        for r in &d.search.records {
            by_query.entry(r.query.as_str()).or_default().extend(&r.relevant);
        }
        for items in by_query.values() {
            for w in items.windows(2) {
                let (a, b) = (find(&mut parent, w[0].index()), find(&mut parent, w[1].index()));
                parent[a] = b;
            }
        }
        let roots: BTreeSet<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
        assert_eq!(roots.len(), cfg.num_clusters, "seed {seed}");
    }
}

#[test]
fn sim2_without_match_spreads_most_queries() {
    let mut shares = Vec::new();
    for seed in 0..5 {
        let d = generate_sim2(&Sim2Config { seed, query_match_pct: 0.0, ..Default::default() }).unwrap();
        shares.push(d.meta.multi_cluster_queries);
    }
    assert!(shares.iter().sum::<f64>() / 5.0 > 0.5, "{shares:?}");
}

#[test]
fn sim3_hits_configured_pair_share() {
    for target in [0.0, 0.5, 1.0] {
        for seed in 0..3 {
            let d = generate_sim3(&Sim3Config { seed, pairs_in_qrels_pct: target, ..Default::default() }).unwrap();
            let got = d.meta.achieved_pairs_in_qrels;
            assert!((got - 100.0 * target).abs() <= 5.0, "target {target} seed {seed}: {got}");
        }
    }
}

#[test]
fn t_test_matches_quadrature() {
    let cases: [(&[f64], &[f64]); 3] = [
        (&[0.8, 0.7, 0.9, 0.85, 0.6], &[0.7, 0.72, 0.8, 0.8, 0.55]),
        (&[1.0, 2.0, 3.0], &[1.5, 1.0, 3.4]),
        (&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7], &[0.0, 0.25, 0.1, 0.5, 0.3, 0.65, 0.6]),
    ];
    for (a, b) in cases {
        check_against_quadrature(a, b);
    }
}

/// Two-sided tail of Student's t from Simpson integration of the density.
fn two_sided_by_quadrature(t: f64, df: f64) -> f64 {
    let log_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let f = |x: f64| (log_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let steps = 20_000;
    let h = t.abs() / steps as f64;
    let mut acc = f(0.0) + f(t.abs());
    for i in 1..steps {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (1.0 - 2.0 * acc * h / 3.0).max(0.0)
}

fn check_against_quadrature(a: &[f64], b: &[f64]) {
    let r = paired_t_test(a, b, 0.05).unwrap();
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd == 0.0 {
        return;
    }
    let t = mean / (sd / n.sqrt());
    let p = two_sided_by_quadrature(t, n - 1.0);
    assert!((r.t_statistic - t).abs() < 1e-9);
    assert!((r.p_value - p).abs() < 1e-8, "{} vs {p}", r.p_value);
}

proptest! {
    #[test]
    fn t_test_agrees_with_quadrature_on_random_samples(
        pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..30),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        check_against_quadrature(&a, &b);
    }
}

#[test]
fn generators_are_deterministic() {
    let a = generate_sim3(&Sim3Config { seed: 5, ..Default::default() }).unwrap();
    let b = generate_sim3(&Sim3Config { seed: 5, ..Default::default() }).unwrap();
    assert_eq!(a.rec, b.rec);
    assert_eq!(a.search, b.search);
}
