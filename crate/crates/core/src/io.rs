//! File formats: JSONL datasets and qrels, TREC runs, JSON configuration
//! and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::{ItemId, RecDataset, SearchDataset, SearchRecord, UserHistory};
use crate::decode::{RankedList, Run};
use crate::error::{Error, Result};
use crate::evalkit::{QrelEntry, Qrels};
use crate::hypolab::ExperimentConfig;
use crate::retriever::RetrieverConfig;
use crate::simgen::{Sim1Config, Sim2Config, Sim3Config};

pub const SEED_ENV: &str = "GENIR_SEED";

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses one JSON value per nonblank line.
pub fn parse_jsonl<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_search(path: &Path) -> Result<SearchDataset> {
    let records: Vec<SearchRecord> = parse_jsonl(path, &read_text(path)?)?;
    let data = SearchDataset::new(records);
    data.validate()?;
    Ok(data)
}

pub fn write_search(path: &Path, data: &SearchDataset) -> Result<()> {
    write_atomic(path, to_jsonl(&data.records)?.as_bytes())
}

pub fn read_rec(path: &Path) -> Result<RecDataset> {
    let users: Vec<UserHistory> = parse_jsonl(path, &read_text(path)?)?;
    Ok(RecDataset::new(users))
}

pub fn write_rec(path: &Path, data: &RecDataset) -> Result<()> {
    write_atomic(path, to_jsonl(&data.users)?.as_bytes())
}

pub const SEARCH_FILE: &str = "search.jsonl";
pub const REC_FILE: &str = "rec.jsonl";
pub const META_FILE: &str = "meta.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Dataset directory contents: `search.jsonl`, `rec.jsonl` and `meta.json`,
/// whose `num_items` field fixes the catalog size.
#[derive(Clone, Debug)]
pub struct DatasetDir {
    pub search: SearchDataset,
    pub rec: RecDataset,
    pub num_items: usize,
    pub meta: Value,
}

pub fn read_dataset_dir(dir: &Path) -> Result<DatasetDir> {
    let search = read_search(&dir.join(SEARCH_FILE))?;
    let rec = read_rec(&dir.join(REC_FILE))?;
    let meta_path = dir.join(META_FILE);
    let meta: Value = if meta_path.exists() {
        serde_json::from_str(&read_text(&meta_path)?)?
    } else {
        Value::Null
    };
    let inferred = search.max_item().into_iter().chain(rec.max_item()).max().map_or(0, |m| m.index() + 1);
    let num_items = match meta.get("num_items").and_then(Value::as_u64) {
        Some(n) => n as usize,
        None => inferred,
    };
    Ok(DatasetDir { search, rec, num_items, meta })
}

pub fn write_dataset_dir(dir: &Path, search: &SearchDataset, rec: &RecDataset, meta: &Value) -> Result<Vec<PathBuf>> {
    let paths = vec![dir.join(REC_FILE), dir.join(SEARCH_FILE), dir.join(META_FILE)];
    write_rec(&paths[0], rec)?;
    write_search(&paths[1], search)?;
    write_atomic(&paths[2], to_pretty_json(meta)?.as_bytes())?;
    Ok(paths)
}

pub fn to_pretty_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Run file in TREC format: `qid Q0 itemId rank score runTag`.
pub fn format_run(run: &Run) -> String {
    let mut out = String::new();
    for (qid, list) in &run.lists {
        for (rank, (item, score)) in list.entries.iter().enumerate() {
            let _ = writeln!(out, "{qid} Q0 {item} {} {score:.17e} {}", rank + 1, run.tag);
        }
    }
    out
}

pub fn write_run(path: &Path, run: &Run) -> Result<()> {
    write_atomic(path, format_run(run).as_bytes())
}

pub fn parse_run(path: &Path, text: &str) -> Result<Run> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut tag: Option<String> = None;
    let mut rows: BTreeMap<String, Vec<(usize, ItemId, f64)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(err(n, format!("expected 6 fields, found {}", f.len())));
        }
        let item: u32 = f[2].parse().map_err(|_| err(n, format!("bad item id {:?}", f[2])))?;
        let rank: usize = f[3].parse().map_err(|_| err(n, format!("bad rank {:?}", f[3])))?;
        let score: f64 = f[4].parse().map_err(|_| err(n, format!("bad score {:?}", f[4])))?;
        match &tag {
            None => tag = Some(f[5].to_string()),
            Some(t) if t != f[5] => return Err(err(n, format!("mixed run tags {t:?} and {:?}", f[5]))),
            _ => {}
        }
        rows.entry(f[0].to_string()).or_default().push((rank, ItemId(item), score));
    }
    let mut run = Run::new(tag.unwrap_or_default());
    for (qid, mut entries) in rows {
        entries.sort_by_key(|e| e.0);
        if entries.iter().enumerate().any(|(i, e)| e.0 != i + 1) {
            return Err(Error::Data(format!("{}: ranks of {qid} are not 1..n", path.display())));
        }
        let k = entries.len();
        let list: Vec<(ItemId, f64)> = entries.into_iter().map(|e| (e.1, e.2)).collect();
        if list.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(Error::Data(format!("{}: scores of {qid} increase with rank", path.display())));
        }
        run.lists.insert(qid, RankedList::new(list, k));
    }
    Ok(run)
}

pub fn read_run(path: &Path) -> Result<Run> {
    parse_run(path, &read_text(path)?)
}

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let entries: Vec<QrelEntry> = parse_jsonl(path, &read_text(path)?)?;
    let mut out = Qrels::new();
    for e in entries {
        if e.relevant.is_empty() {
            return Err(Error::Data(format!("qrels entry {} has no relevant items", e.qid)));
        }
        if out.insert(e.qid.clone(), e).is_some() {
            return Err(Error::Data(format!("{}: duplicate qid", path.display())));
        }
    }
    Ok(out)
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    let rows: Vec<&QrelEntry> = qrels.values().collect();
    write_atomic(path, to_jsonl(&rows)?.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub k: usize,
    pub diversity_penalty: f64,
    /// Defaults to `ceil(k / 2)`.
    pub num_groups: Option<usize>,
    /// Route retrieval through diversified beam search instead of top-K.
    pub diverse: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            k: 10,
            diversity_penalty: crate::decode::BeamConfig::DEFAULT_PENALTY,
            num_groups: None,
            diverse: false,
        }
    }
}

impl DecodeConfig {
    pub fn beam(&self) -> crate::decode::BeamConfig {
        let mut b = crate::decode::BeamConfig::new(self.k, 1);
        b.diversity_penalty = self.diversity_penalty;
        if let Some(g) = self.num_groups {
            b.num_groups = g;
        }
        b
    }
}

/// Every module's configuration in one file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenirConfig {
    /// When set, overrides every per-module seed.
    pub seed: Option<u64>,
    pub retriever: RetrieverConfig,
    pub decode: DecodeConfig,
    pub sim1: Sim1Config,
    pub sim2: Sim2Config,
    pub sim3: Sim3Config,
    pub experiment: ExperimentConfig,
}

impl GenirConfig {
    pub fn validate(&self) -> Result<()> {
        self.retriever.validate()?;
        self.decode.beam().validate()?;
        self.sim1.validate()?;
        self.sim2.validate()?;
        self.sim3.validate()?;
        self.experiment.validate()
    }

    /// Copies `seed` into every module.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.retriever.seed = seed;
        self.sim1.seed = seed;
        self.sim2.seed = seed;
        self.sim3.seed = seed;
    }

    /// Parses JSON, rejecting unknown keys (all of them are listed) and
    /// invalid values. `GENIR_SEED` overrides the seed.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let known = serde_json::to_value(GenirConfig::default())?;
        let mut unknown = Vec::new();
        unknown_keys(&value, &known, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        let mut cfg: GenirConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(seed) = env_seed()? {
            cfg.apply_seed(seed);
        } else if let Some(seed) = cfg.seed {
            cfg.apply_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn unknown_keys(value: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(v), Value::Object(k)) = (value, known) {
        for (key, sub) in v {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            match k.get(key) {
                None => out.push(path),
                Some(ks) => unknown_keys(sub, ks, &path, out),
            }
        }
    }
}

/// Seed from `GENIR_SEED`, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn load_config(path: &Path) -> Result<GenirConfig> {
    GenirConfig::from_json(&read_text(path)?)
}

/// Record written next to every output set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: GenirConfig,
    pub seeds: Vec<u64>,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path (relative to the output directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: GenirConfig, seeds: Vec<u64>) -> Self {
        RunManifest {
            command,
            config,
            seeds,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_clock_seconds: 0.0,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, dir: &Path, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(dir).unwrap_or(path);
        self.outputs.insert(rel.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        write_atomic(&path, to_pretty_json(self)?.as_bytes())?;
        Ok(path)
    }
}
