//! Example assembly: hashed sparse ids, the dense visual vector, caption
//! tokens, profile token lists and the five task labels, plus the seeded
//! train/eval split and the line-delimited JSON dataset format.
//!
//! Every arm of an experiment uses the same bundle schema. A disabled token
//! group is represented by empty lists, never by a missing field.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::content::MediaItem;
use crate::hash::fnv1a64;
use crate::task::{Task, NUM_TASKS};
use crate::tokenize::TokenIdList;

pub const DEFAULT_TABLE_SIZE: usize = 1 << 17;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("impression has {0} labels, expected 5")]
    MissingLabel(usize),
    #[error("label value {0} is not binary")]
    InvalidLabel(u8),
    #[error("table size must be positive")]
    InvalidTableSize,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid split ratio {0}:{1}")]
    InvalidRatio(u32, u32),
    #[error("dataset line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A named slice of the bundle that arms enable, disable, shuffle or ablate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Visual,
    ItemTokens,
    ProfileTokens,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 3] = [
        FeatureGroup::Visual,
        FeatureGroup::ItemTokens,
        FeatureGroup::ProfileTokens,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Visual => "visual",
            FeatureGroup::ItemTokens => "item_tokens",
            FeatureGroup::ProfileTokens => "profile_tokens",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == s)
    }
}

impl std::fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureBundle {
    pub user_idx: u32,
    pub item_idx: u32,
    pub visual: Vec<f64>,
    pub item_tokens: TokenIdList,
    #[serde(with = "profile_map")]
    pub profile_tokens: [TokenIdList; NUM_TASKS],
    pub labels: [u8; NUM_TASKS],
}

impl FeatureBundle {
    pub fn label(&self, task: Task) -> u8 {
        self.labels[task.index()]
    }
}

// Profile lists serialize as an object keyed by event type, always with all
// five keys so the schema does not depend on the arm.
mod profile_map {
    use super::*;

    pub fn serialize<S: Serializer>(lists: &[TokenIdList; NUM_TASKS], s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<Task, &TokenIdList> = Task::ALL.iter().map(|&t| (t, &lists[t.index()])).collect();
        map.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[TokenIdList; NUM_TASKS], D::Error> {
        let map: BTreeMap<Task, TokenIdList> = BTreeMap::deserialize(d)?;
        let mut out: [TokenIdList; NUM_TASKS] = Default::default();
        for (t, l) in map {
            out[t.index()] = l;
        }
        Ok(out)
    }
}

/// `FNV1a64(raw_id as 8 little-endian bytes) mod table_size`.
pub fn hash_id(raw_id: u64, table_size: usize) -> usize {
    assert!(table_size >= 1, "table_size must be positive");
    (fnv1a64(&raw_id.to_le_bytes()) % table_size as u64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssembleConfig {
    pub user_table_size: usize,
    pub item_table_size: usize,
    pub item_tokens: bool,
    pub profile_tokens: bool,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        Self {
            user_table_size: DEFAULT_TABLE_SIZE,
            item_table_size: DEFAULT_TABLE_SIZE,
            item_tokens: true,
            profile_tokens: true,
        }
    }
}

/// Builds the bundle for one logged impression. Token groups switched off in
/// `config` are left empty.
pub fn assemble(
    user_id: u64,
    item: &MediaItem,
    caption_tokens: Option<&TokenIdList>,
    profile: Option<&[TokenIdList; NUM_TASKS]>,
    labels: &[u8],
    config: &AssembleConfig,
) -> Result<FeatureBundle, FeatureError> {
    if config.user_table_size == 0 || config.item_table_size == 0 {
        return Err(FeatureError::InvalidTableSize);
    }
    if labels.len() != NUM_TASKS {
        return Err(FeatureError::MissingLabel(labels.len()));
    }
    let mut label_arr = [0u8; NUM_TASKS];
    for (dst, &l) in label_arr.iter_mut().zip(labels) {
        if l > 1 {
            return Err(FeatureError::InvalidLabel(l));
        }
        *dst = l;
    }
    let item_tokens = match (config.item_tokens, caption_tokens) {
        (true, Some(t)) => t.clone(),
        _ => TokenIdList::default(),
    };
    let profile_tokens = match (config.profile_tokens, profile) {
        (true, Some(p)) => p.clone(),
        _ => Default::default(),
    };
    Ok(FeatureBundle {
        user_idx: hash_id(user_id, config.user_table_size) as u32,
        item_idx: hash_id(item.item_id, config.item_table_size) as u32,
        visual: item.visual_embedding.clone(),
        item_tokens,
        profile_tokens,
        labels: label_arr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: u32,
    pub eval: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self { train: 7, eval: 1 }
    }
}

/// Positions of the train and eval examples in the source dataset. Eval
/// positions keep the shuffled order, so contiguous shards of the eval set
/// are random subsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub ratio: SplitRatio,
    pub seed: u64,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

pub fn split_indices(n: usize, ratio: SplitRatio, seed: u64) -> Result<SplitIndices, FeatureError> {
    if n == 0 {
        return Err(FeatureError::EmptyDataset);
    }
    if ratio.train == 0 || ratio.eval == 0 {
        return Err(FeatureError::InvalidRatio(ratio.train, ratio.eval));
    }
    let total = u64::from(ratio.train) + u64::from(ratio.eval);
    let mut n_eval = ((n as u64 * u64::from(ratio.eval) + total / 2) / total) as usize;
    if n >= 2 {
        n_eval = n_eval.clamp(1, n - 1);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let eval = order[..n_eval].to_vec();
    let train = order[n_eval..].to_vec();
    Ok(SplitIndices {
        ratio,
        seed,
        train,
        eval,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<FeatureBundle>,
    pub eval: Vec<FeatureBundle>,
    pub indices: SplitIndices,
}

impl DatasetSplit {
    pub fn from_indices(dataset: &[FeatureBundle], indices: SplitIndices) -> Self {
        Self {
            train: indices.train.iter().map(|&i| dataset[i].clone()).collect(),
            eval: indices.eval.iter().map(|&i| dataset[i].clone()).collect(),
            indices,
        }
    }
}

/// Seeded shuffle-partition at `ratio` (train:eval).
pub fn split(dataset: &[FeatureBundle], ratio: SplitRatio, seed: u64) -> Result<DatasetSplit, FeatureError> {
    let indices = split_indices(dataset.len(), ratio, seed)?;
    Ok(DatasetSplit::from_indices(dataset, indices))
}

pub fn write_dataset<W: Write>(bundles: &[FeatureBundle], mut out: W) -> Result<(), FeatureError> {
    for b in bundles {
        serde_json::to_writer(&mut out, b).map_err(|source| FeatureError::Parse { line: 0, source })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<FeatureBundle>, FeatureError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bundle: FeatureBundle =
            serde_json::from_str(&line).map_err(|source| FeatureError::Parse { line: i + 1, source })?;
        if let Some(&bad) = bundle.labels.iter().find(|&&l| l > 1) {
            return Err(FeatureError::InvalidLabel(bad));
        }
        out.push(bundle);
    }
    Ok(out)
}

pub fn save_dataset(bundles: &[FeatureBundle], path: impl AsRef<Path>) -> Result<(), FeatureError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(bundles, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<FeatureBundle>, FeatureError> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn item() -> MediaItem {
        MediaItem {
            item_id: 77,
            visual_embedding: vec![0.1, -2.5, 1.0 / 3.0],
            has_media: true,
            value_score: 1.0,
            ground_truth_ref: None,
        }
    }

    fn profile() -> [TokenIdList; NUM_TASKS] {
        [vec![2].into(), vec![3, 4].into(), vec![].into(), vec![5].into(), vec![6].into()]
    }

    #[test]
    fn hash_id_examples() {
        assert_eq!(hash_id(12345, 1), 0);
        assert_eq!(hash_id(42, 1000), hash_id(42, 1000));
        // FNV-1a 64 of 42u64.to_le_bytes() = 0xff3add6b3789daef (reference
        // implementation), 0xff3add6b3789daef mod 1000 = 255.
        assert_eq!(hash_id(42, 1000), 255);
    }

    #[test]
    fn baseline_arm_leaves_tokens_empty() {
        let tokens: TokenIdList = vec![9, 8].into();
        let cfg = AssembleConfig {
            item_tokens: false,
            profile_tokens: false,
            ..AssembleConfig::default()
        };
        let b = assemble(5, &item(), Some(&tokens), Some(&profile()), &[0, 1, 0, 0, 1], &cfg).unwrap();
        assert!(b.item_tokens.is_empty());
        assert!(b.profile_tokens.iter().all(TokenIdList::is_empty));
        assert_eq!(b.visual, item().visual_embedding);

        let t = assemble(5, &item(), Some(&tokens), Some(&profile()), &[0, 1, 0, 0, 1], &AssembleConfig::default())
            .unwrap();
        assert_eq!(t.item_tokens, tokens);
        assert_eq!(t.profile_tokens, profile());
        assert_eq!(t.user_idx, b.user_idx);
    }

    #[test]
    fn missing_label_rejected() {
        let cfg = AssembleConfig::default();
        assert!(matches!(
            assemble(1, &item(), None, None, &[0, 1, 0, 1], &cfg),
            Err(FeatureError::MissingLabel(4))
        ));
        assert!(matches!(
            assemble(1, &item(), None, None, &[0, 1, 0, 1, 2], &cfg),
            Err(FeatureError::InvalidLabel(2))
        ));
    }

    fn dummy(n: usize) -> Vec<FeatureBundle> {
        (0..n)
            .map(|i| FeatureBundle {
                user_idx: i as u32,
                item_idx: 0,
                visual: vec![],
                item_tokens: Default::default(),
                profile_tokens: Default::default(),
                labels: [0; NUM_TASKS],
            })
            .collect()
    }

    #[test]
    fn split_sizes() {
        let s = split(&dummy(8000), SplitRatio::default(), 3).unwrap();
        assert_eq!((s.train.len(), s.eval.len()), (7000, 1000));
        let s = split(&dummy(8), SplitRatio::default(), 3).unwrap();
        assert_eq!((s.train.len(), s.eval.len()), (7, 1));
        assert_eq!(split(&dummy(8000), SplitRatio::default(), 3).unwrap(), split(&dummy(8000), SplitRatio::default(), 3).unwrap());
        assert!(matches!(split(&[], SplitRatio::default(), 0), Err(FeatureError::EmptyDataset)));
    }

    #[test]
    fn schema_is_arm_invariant() {
        let tokens: TokenIdList = vec![9].into();
        let base_cfg = AssembleConfig {
            item_tokens: false,
            profile_tokens: false,
            ..AssembleConfig::default()
        };
        let base = assemble(5, &item(), Some(&tokens), Some(&profile()), &[0; 5], &base_cfg).unwrap();
        let treat = assemble(5, &item(), Some(&tokens), Some(&profile()), &[0; 5], &AssembleConfig::default()).unwrap();
        let keys = |b: &FeatureBundle| {
            let v = serde_json::to_value(b).unwrap();
            let obj = v.as_object().unwrap();
            let mut k: Vec<String> = obj.keys().cloned().collect();
            k.extend(obj["profile_tokens"].as_object().unwrap().keys().map(|k| format!("profile.{k}")));
            k
        };
        assert_eq!(keys(&base), keys(&treat));
        assert_eq!(
            serde_json::to_string(&base).unwrap(),
            format!(
                r#"{{"user_idx":{},"item_idx":{},"visual":[0.1,-2.5,0.3333333333333333],"item_tokens":[],"profile_tokens":{{"comment":[],"like":[],"share":[],"dwell":[],"consume":[]}},"labels":[0,0,0,0,0]}}"#,
                base.user_idx, base.item_idx
            )
        );
    }

    #[test]
    fn dataset_round_trip_keeps_floats_exact() {
        let tokens: TokenIdList = vec![9].into();
        let mut b = assemble(5, &item(), Some(&tokens), Some(&profile()), &[1, 0, 1, 0, 1], &AssembleConfig::default()).unwrap();
        b.visual = vec![std::f64::consts::PI, -1e-300, 12345.678901234567, f64::MIN_POSITIVE];
        let mut buf = Vec::new();
        write_dataset(std::slice::from_ref(&b), &mut buf).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back, vec![b]);
    }

    proptest! {
        #[test]
        fn split_partitions_dataset(n in 1usize..3000, seed: u64) {
            let s = split_indices(n, SplitRatio::default(), seed).unwrap();
            prop_assert_eq!(s.train.len() + s.eval.len(), n);
            let all: HashSet<usize> = s.train.iter().chain(&s.eval).copied().collect();
            prop_assert_eq!(all.len(), n);
            if n >= 8 {
                let diff = s.train.len() as i64 - 7 * s.eval.len() as i64;
                prop_assert!(diff.abs() <= 7, "train {} eval {}", s.train.len(), s.eval.len());
            }
        }
    }
}
