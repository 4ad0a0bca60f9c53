//! Hypothesis experiments and prediction analyses.
//!
//! [`Workbench`] turns a search/recommendation dataset pair into the
//! training and test material every experiment shares. The sweep runners in
//! [`experiments`] train task-specific and joint models over levels and
//! seeds; [`analysis`] compares the predictions of two runs; [`projection`]
//! exports item embeddings in two dimensions.

pub mod analysis;
pub mod experiments;
pub mod projection;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_vocabulary, joint_instances, rec_split, search_instances, subsample_instances, ItemId, RecDataset, RecSplit,
    SearchDataset, Split, Task, TokenIndex, TrainingInstance, Vocabulary,
};
use crate::decode::{self, Run};
use crate::error::{Error, Result};
use crate::io::DecodeConfig;
use crate::evalkit::{self, Bucket, EvalInstance, EvalReport, QrelEntry, Qrels};
use crate::retriever::{self, RetrieverConfig, RetrieverParams, TrainReport};
use crate::stats::PopularityProfile;

pub use analysis::{
    delta_popularity, differing_ids, history_target_query_matches, redundancy_analysis, rel_pair_cooccurrence,
    DeltaReport, PopularityDelta, RedundancyClass, RedundancyRow,
};
pub use experiments::{
    popularity_cap_ablation, run_sim1_experiment, run_sim2_experiment, run_sim3_experiment, ExperimentConfig,
    ExperimentKind, ExperimentResult, ExperimentSpec, ResultRow,
};
pub use projection::{cluster_cosine_margin, project_embeddings, Projection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    GenS,
    GenR,
    GenRS,
}

impl Model {
    /// Task-specific model of `target`.
    pub fn specific(target: Task) -> Model {
        match target {
            Task::Search => Model::GenS,
            Task::Rec => Model::GenR,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::GenS => "Gen_S",
            Model::GenR => "Gen_R",
            Model::GenRS => "Gen_R+S",
        })
    }
}

/// A held-out instance ready for retrieval.
#[derive(Clone, Debug, PartialEq)]
pub struct TestQuery {
    pub qid: String,
    pub input: Vec<TokenIndex>,
    pub relevant: BTreeSet<ItemId>,
}

/// Training and test material derived from one dataset pair.
#[derive(Clone, Debug)]
pub struct Workbench {
    pub num_items: usize,
    pub vocab: Vocabulary,
    pub search: SearchDataset,
    pub rec: RecDataset,
    pub split: RecSplit,
    pub search_train: Vec<TrainingInstance>,
    pub rec_train: Vec<TrainingInstance>,
    pub search_test: Vec<TestQuery>,
    pub rec_test: Vec<TestQuery>,
}

pub fn search_qid(index: usize) -> String {
    format!("q{index}")
}

pub fn rec_qid(user: u64) -> String {
    format!("u{user}")
}

impl Workbench {
    pub fn new(search: SearchDataset, rec: RecDataset, num_items: usize) -> Result<Self> {
        search.validate()?;
        let vocab = build_vocabulary(&search, &rec, num_items)?;
        let search_train = search_instances(&search.subset(Split::Train), &vocab)?;
        let split = rec_split(&rec);
        let rec_train = split.train_instances(&vocab);
        let mut search_test = Vec::new();
        for (i, r) in search.records.iter().enumerate().filter(|(_, r)| r.split == Split::Test) {
            let input = vocab.encode_query(&r.query);
            if input.is_empty() {
                return Err(Error::EmptyQuery { query: r.query.clone() });
            }
            search_test.push(TestQuery {
                qid: search_qid(i),
                input,
                relevant: r.relevant.iter().copied().collect(),
            });
        }
        let rec_test = split
            .test
            .iter()
            .map(|e| TestQuery {
                qid: rec_qid(e.user),
                input: e.history.iter().map(|&i| vocab.item_token(i)).collect(),
                relevant: BTreeSet::from([e.target]),
            })
            .collect();
        Ok(Workbench {
            num_items,
            vocab,
            search,
            rec,
            split,
            search_train,
            rec_train,
            search_test,
            rec_test,
        })
    }

    /// Keeps a deterministic fraction of the recommendation training
    /// instances.
    pub fn subsample_rec(&mut self, fraction: f64, seed: u64) -> Result<()> {
        self.rec_train = subsample_instances(&self.rec_train, fraction, seed)?;
        Ok(())
    }

    pub fn train_instances(&self, task: Task) -> &[TrainingInstance] {
        match task {
            Task::Search => &self.search_train,
            Task::Rec => &self.rec_train,
        }
    }

    pub fn test_queries(&self, task: Task) -> &[TestQuery] {
        match task {
            Task::Search => &self.search_test,
            Task::Rec => &self.rec_test,
        }
    }

    /// Training set of `model`. Joint sets are shuffled with `seed`.
    pub fn training_set(&self, model: Model, seed: u64) -> Result<Vec<TrainingInstance>> {
        match model {
            Model::GenS => Ok(self.search_train.clone()),
            Model::GenR => Ok(self.rec_train.clone()),
            Model::GenRS => joint_instances(&self.search_train, &self.rec_train, &self.vocab, seed),
        }
    }

    pub fn train(&self, model: Model, cfg: &RetrieverConfig) -> Result<TrainReport> {
        let data = self.training_set(model, cfg.seed)?;
        retriever::train(cfg, &self.vocab, &data)
    }

    /// Top-`k` lists for every test query of `task`.
    pub fn predict(&self, params: &RetrieverParams, task: Task, k: usize, tag: &str) -> Result<Run> {
        let mut run = Run::new(tag);
        for q in self.test_queries(task) {
            run.lists.insert(q.qid.clone(), decode::retrieve(params, &q.input, k)?);
        }
        Ok(run)
    }

    /// Like [`Workbench::predict`], decoding with diversified beam search
    /// when `decode.diverse` is set.
    pub fn predict_with(&self, params: &RetrieverParams, task: Task, decode: &DecodeConfig, tag: &str) -> Result<Run> {
        if !decode.diverse {
            return self.predict(params, task, decode.k, tag);
        }
        let beam = decode.beam();
        let mut run = Run::new(tag);
        for q in self.test_queries(task) {
            run.lists.insert(q.qid.clone(), decode::retrieve_diverse(params, &q.input, &beam)?);
        }
        Ok(run)
    }

    pub fn qrels(&self, task: Task) -> Qrels {
        self.test_queries(task)
            .iter()
            .map(|q| {
                (
                    q.qid.clone(),
                    QrelEntry {
                        qid: q.qid.clone(),
                        task,
                        relevant: q.relevant.clone(),
                    },
                )
            })
            .collect()
    }

    /// Training popularity of `task`: relevance-set memberships for search,
    /// training targets for recommendation.
    pub fn train_profile(&self, task: Task) -> Result<PopularityProfile> {
        let mut counts = vec![0u64; self.num_items];
        for inst in self.train_instances(task) {
            let item = self.vocab.item_of(inst.target).expect("targets are item tokens");
            counts[item.index()] += 1;
        }
        PopularityProfile::from_counts(
            counts,
            match task {
                Task::Search => crate::stats::ProfileSource::SearchTrain,
                Task::Rec => crate::stats::ProfileSource::RecTrain,
            },
        )
    }

    pub fn buckets(&self, task: Task) -> Result<Vec<Bucket>> {
        Ok(evalkit::head_torso_buckets(&self.train_profile(task)?.counts))
    }

    pub fn evaluate(&self, run: &Run, task: Task, k: usize) -> Result<EvalReport> {
        let qrels = self.qrels(task);
        let instances: Vec<EvalInstance> = evalkit::join_run(run, &qrels);
        evalkit::bucketed_evaluate(&instances, &self.buckets(task)?, k)
    }

    /// Item histories used for training: every user's interactions except
    /// the validation and test targets.
    pub fn rec_train_histories(&self) -> Vec<Vec<ItemId>> {
        self.rec
            .users
            .iter()
            .filter(|u| u.interactions.len() >= crate::corpus::MIN_USER_LENGTH)
            .map(|u| u.interactions[..u.interactions.len() - 2].to_vec())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SearchRecord, UserHistory};

    fn tiny() -> Workbench {
        let search = SearchDataset::new(vec![
            SearchRecord::new("red", [ItemId(0), ItemId(1)], Split::Train),
            SearchRecord::new("blue", [ItemId(2)], Split::Train),
            SearchRecord::new("red blue", [ItemId(1), ItemId(2)], Split::Test),
        ]);
        let rec = RecDataset::new(vec![UserHistory {
            user: 7,
            interactions: [0, 1, 2, 3, 0, 1].into_iter().map(ItemId).collect(),
        }]);
        Workbench::new(search, rec, 4).unwrap()
    }

    #[test]
    fn workbench_material() {
        let wb = tiny();
        assert_eq!(wb.search_train.len(), 3);
        assert_eq!(wb.rec_train.len(), 2);
        assert_eq!(wb.search_test[0].qid, "q2");
        assert_eq!(wb.rec_test[0].qid, "u7");
        assert_eq!(wb.rec_test[0].relevant, BTreeSet::from([ItemId(1)]));
        assert_eq!(wb.rec_train_histories(), vec![vec![ItemId(0), ItemId(1), ItemId(2), ItemId(3)]]);
        assert_eq!(wb.train_profile(Task::Search).unwrap().counts, [1, 1, 1, 0]);
        assert_eq!(wb.training_set(Model::GenRS, 1).unwrap().len(), 5);
    }

    #[test]
    fn zero_model_retrieves_by_id() {
        let wb = tiny();
        let cfg = RetrieverConfig { embedding_dim: 2, ..Default::default() };
        let mut p = RetrieverParams::for_vocabulary(&cfg, &wb.vocab).unwrap();
        p.input.fill(0.0);
        let run = wb.predict(&p, Task::Search, 2, "zero").unwrap();
        let items: Vec<u32> = run.lists["q2"].items().map(|i| i.0).collect();
        assert_eq!(items, [0, 1]);
        let report = wb.evaluate(&run, Task::Search, 2).unwrap();
        assert_eq!(report.mean, 0.5);
        let full = wb.predict(&p, Task::Search, 4, "zero").unwrap();
        assert_eq!(wb.evaluate(&full, Task::Search, 4).unwrap().mean, 1.0);
    }
}
