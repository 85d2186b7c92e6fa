//! Instances, vocabularies and pre-trained embeddings.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::params::INIT_SCALE;
use crate::treebank::{normalize, parse_ptb_many, BinaryTree, ParseTree};

/// Token used for out-of-vocabulary words and tags.
pub const UNK: &str = "<unk>";

pub const LEVEL1_LABELS: [&str; 4] = ["Temporal", "Contingency", "Comparison", "Expansion"];

pub const LEVEL2_LABELS: [&str; 11] = [
    "Temporal.Asynchronous",
    "Temporal.Synchrony",
    "Contingency.Cause",
    "Contingency.Pragmatic cause",
    "Comparison.Contrast",
    "Comparison.Concession",
    "Expansion.Conjunction",
    "Expansion.Instantiation",
    "Expansion.Restatement",
    "Expansion.Alternative",
    "Expansion.List",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

/// Relation granularity: 4 top-level classes or 11 second-level types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Level {
    One,
    Two,
}

impl Level {
    pub fn label_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Level::One => &LEVEL1_LABELS,
            Level::Two => &LEVEL2_LABELS,
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

impl TryFrom<u8> for Level {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Level::One),
            2 => Ok(Level::Two),
            _ => Err(Error::InvalidArgument(format!("level must be 1 or 2, got {v}"))),
        }
    }
}

impl From<Level> for u8 {
    fn from(l: Level) -> u8 {
        match l {
            Level::One => 1,
            Level::Two => 2,
        }
    }
}

/// An argument pair with its gold relation labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: Option<String>,
    pub arg1: BinaryTree,
    pub arg2: BinaryTree,
    pub labels: BTreeSet<usize>,
    pub split: Split,
}

/// An argument pair without labels, as read by `predict`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgumentPair {
    pub id: Option<String>,
    pub arg1: BinaryTree,
    pub arg2: BinaryTree,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Trees {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Deserialize)]
struct Record {
    #[serde(default)]
    id: Option<serde_json::Value>,
    arg1: Trees,
    arg2: Trees,
    #[serde(default)]
    labels: Option<Vec<String>>,
    #[serde(default)]
    split: Option<Split>,
}

fn argument(trees: Trees, line: usize, which: &str) -> Result<BinaryTree> {
    let texts = match trees {
        Trees::One(s) => vec![s],
        Trees::Many(v) => v,
    };
    let mut parsed: Vec<ParseTree> = Vec::new();
    for text in &texts {
        let ts = parse_ptb_many(text).map_err(|e| Error::data_at(line, format!("{which}: {e}")))?;
        parsed.extend(ts);
    }
    normalize(parsed).map_err(|e| Error::data_at(line, format!("{which}: {e}")))
}

fn id_string(v: Option<serde_json::Value>) -> Option<String> {
    match v? {
        serde_json::Value::String(s) => Some(s),
        serde_json::Value::Null => None,
        other => Some(other.to_string()),
    }
}

fn records<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, Record)>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(Error::data_at(line_no, e.to_string()))),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(
            serde_json::from_str::<Record>(&line)
                .map(|r| (line_no, r))
                .map_err(|e| Error::data_at(line_no, format!("malformed record: {e}"))),
        )
    })
}

/// Reads labeled instances from JSONL. Each record has `arg1`, `arg2` (a
/// bracketed tree or a list of them), `labels` and `split`.
pub fn read_instances<R: BufRead>(reader: R, labels: &[String]) -> Result<Vec<Instance>> {
    let index: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut out = Vec::new();
    for rec in records(reader) {
        let (line, rec) = rec?;
        let names = rec.labels.unwrap_or_default();
        if names.is_empty() {
            return Err(Error::data_at(line, "record has no labels"));
        }
        let mut ids = BTreeSet::new();
        for name in &names {
            let id = index
                .get(name.as_str())
                .ok_or_else(|| Error::data_at(line, format!("unknown label {name:?}")))?;
            ids.insert(*id);
        }
        let split = rec
            .split
            .ok_or_else(|| Error::data_at(line, "record has no split"))?;
        out.push(Instance {
            id: id_string(rec.id),
            arg1: argument(rec.arg1, line, "arg1")?,
            arg2: argument(rec.arg2, line, "arg2")?,
            labels: ids,
            split,
        });
    }
    Ok(out)
}

pub fn load_instances(path: &Path, level: Level) -> Result<Vec<Instance>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_instances(BufReader::new(file), &level.label_names())
}

/// Reads argument pairs, ignoring any labels or split present.
pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<ArgumentPair>> {
    records(reader)
        .map(|rec| {
            let (line, rec) = rec?;
            Ok(ArgumentPair {
                id: id_string(rec.id),
                arg1: argument(rec.arg1, line, "arg1")?,
                arg2: argument(rec.arg2, line, "arg2")?,
            })
        })
        .collect()
}

pub fn load_pairs(path: &Path) -> Result<Vec<ArgumentPair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pairs(BufReader::new(file))
}

/// Turns each multi-label training instance into one instance per label.
/// Dev and test instances pass through untouched.
pub fn expand_multilabel(instances: Vec<Instance>) -> Vec<Instance> {
    let mut out = Vec::with_capacity(instances.len());
    for inst in instances {
        if inst.split != Split::Train || inst.labels.len() == 1 {
            out.push(inst);
            continue;
        }
        for &label in &inst.labels {
            out.push(Instance {
                labels: BTreeSet::from([label]),
                ..inst.clone()
            });
        }
    }
    out
}

/// Word vectors in GloVe text format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Glove {
    pub dim: Option<usize>,
    pub vectors: HashMap<String, Vec<f64>>,
}

/// Parses GloVe text. When `keep` is given, only those tokens are retained
/// (every line is still validated). Duplicate tokens keep their first vector.
pub fn read_glove<R: Read>(reader: R, keep: Option<&HashSet<String>>) -> Result<Glove> {
    let mut glove = Glove::default();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::data_at(line_no, e.to_string()))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::data_at(line_no, format!("non-numeric field {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match glove.dim {
            None if values.is_empty() => {
                return Err(Error::data_at(line_no, format!("token {token:?} has no vector")))
            }
            None => glove.dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::data_at(
                    line_no,
                    format!("expected {d} values, found {}", values.len()),
                ))
            }
            Some(_) => {}
        }
        if keep.is_some_and(|k| !k.contains(token)) {
            continue;
        }
        glove.vectors.entry(token.to_string()).or_insert(values);
    }
    Ok(glove)
}

pub fn load_glove(path: &Path, keep: Option<&HashSet<String>>) -> Result<Glove> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_glove(file, keep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VocabFile {
    word_to_id: BTreeMap<String, usize>,
    tag_to_id: BTreeMap<String, usize>,
    unk_id: usize,
    unk_tag_id: usize,
    label_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabHashes {
    pub words: String,
    pub tags: String,
    pub labels: String,
}

/// Dense word, tag and label ids. Id 0 is the unknown word / tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    tags: Vec<String>,
    labels: Vec<String>,
    word_index: HashMap<String, usize>,
    tag_index: HashMap<String, usize>,
}

impl Vocab {
    /// Collects lowercased leaf words and tags from training instances in
    /// first-seen order (arg1 before arg2, leaves before parents).
    pub fn build<'a>(instances: impl IntoIterator<Item = &'a Instance>, labels: Vec<String>) -> Self {
        let mut vocab = Vocab {
            words: vec![UNK.into()],
            tags: vec![UNK.into()],
            labels,
            word_index: HashMap::from([(UNK.to_string(), 0)]),
            tag_index: HashMap::from([(UNK.to_string(), 0)]),
        };
        for inst in instances {
            if inst.split != Split::Train {
                continue;
            }
            for tree in [&inst.arg1, &inst.arg2] {
                tree.visit_post_order(&mut |n| {
                    if let BinaryTree::Leaf { word, .. } = n {
                        let w = word.to_lowercase();
                        if !vocab.word_index.contains_key(&w) {
                            vocab.word_index.insert(w.clone(), vocab.words.len());
                            vocab.words.push(w);
                        }
                    }
                    let tag = n.tag();
                    if !vocab.tag_index.contains_key(tag) {
                        vocab.tag_index.insert(tag.to_string(), vocab.tags.len());
                        vocab.tags.push(tag.to_string());
                    }
                });
            }
        }
        vocab
    }

    pub fn unk_id(&self) -> usize {
        0
    }

    pub fn unk_tag_id(&self) -> usize {
        0
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn tag_count(&self) -> usize {
        self.tags.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_index
            .get(&word.to_lowercase())
            .copied()
            .unwrap_or(0)
    }

    pub fn tag_id(&self, tag: &str) -> usize {
        self.tag_index.get(tag).copied().unwrap_or(0)
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    pub fn index_tree(&self, tree: &BinaryTree) -> IndexedTree {
        let mut nodes = Vec::with_capacity(tree.node_count());
        let mut stack: Vec<usize> = Vec::new();
        tree.visit_post_order(&mut |n| {
            let tag = self.tag_id(n.tag());
            let node = match n {
                BinaryTree::Leaf { word, .. } => IndexedNode {
                    tag,
                    word: Some(self.word_id(word)),
                    children: None,
                },
                BinaryTree::Node { .. } => {
                    let right = stack.pop().expect("right child");
                    let left = stack.pop().expect("left child");
                    IndexedNode {
                        tag,
                        word: None,
                        children: Some((left, right)),
                    }
                }
            };
            stack.push(nodes.len());
            nodes.push(node);
        });
        IndexedTree { nodes }
    }

    pub fn index_instance(&self, inst: &Instance) -> IndexedInstance {
        IndexedInstance {
            arg1: self.index_tree(&inst.arg1),
            arg2: self.index_tree(&inst.arg2),
            labels: inst.labels.clone(),
        }
    }

    fn to_file(&self) -> VocabFile {
        let ids = |v: &[String]| v.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        VocabFile {
            word_to_id: ids(&self.words),
            tag_to_id: ids(&self.tags),
            unk_id: 0,
            unk_tag_id: 0,
            label_names: self.labels.clone(),
        }
    }

    fn from_file(f: VocabFile) -> Result<Self> {
        fn dense(map: BTreeMap<String, usize>, what: &str) -> Result<Vec<String>> {
            let mut out = vec![None; map.len()];
            for (s, i) in map {
                match out.get_mut(i) {
                    Some(slot @ None) => *slot = Some(s),
                    _ => return Err(Error::data(format!("{what} ids are not dense"))),
                }
            }
            Ok(out.into_iter().map(|s| s.expect("filled")).collect())
        }
        let words = dense(f.word_to_id, "word")?;
        let tags = dense(f.tag_to_id, "tag")?;
        if f.unk_id != 0 || words.first().map(String::as_str) != Some(UNK) {
            return Err(Error::data("unknown-word entry must be id 0"));
        }
        if f.unk_tag_id != 0 || tags.first().map(String::as_str) != Some(UNK) {
            return Err(Error::data("unknown-tag entry must be id 0"));
        }
        let index = |v: &[String]| v.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Vocab {
            word_index: index(&words),
            tag_index: index(&tags),
            words,
            tags,
            labels: f.label_names,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("vocab serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: VocabFile =
            serde_json::from_str(s).map_err(|e| Error::data(format!("bad vocabulary: {e}")))?;
        Vocab::from_file(f)
    }

    pub(crate) fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_file()).expect("vocab serializes")
    }

    pub(crate) fn from_value(v: serde_json::Value) -> Result<Self> {
        let f: VocabFile =
            serde_json::from_value(v).map_err(|e| Error::data(format!("bad vocabulary: {e}")))?;
        Vocab::from_file(f)
    }

    pub fn hashes(&self) -> VocabHashes {
        let h = |v: &[String]| {
            let json = serde_json::to_vec(v).expect("strings serialize");
            hex::encode(Sha256::digest(&json))
        };
        VocabHashes {
            words: h(&self.words),
            tags: h(&self.tags),
            labels: h(&self.labels),
        }
    }
}

/// Embedding tables aligned with a [`Vocab`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    pub words: Matrix,
    pub tags: Matrix,
    /// Number of word rows copied from pre-trained vectors.
    pub pretrained: usize,
}

/// Builds the embedding tables: words found in `glove` get their vector,
/// every other row (including the unknown word) and every tag row is drawn
/// from U[-0.05, 0.05].
pub fn build_embeddings<R: Rng + ?Sized>(
    vocab: &Vocab,
    glove: &Glove,
    word_dim: usize,
    tag_dim: usize,
    rng: &mut R,
) -> Result<EmbeddingTables> {
    if let Some(d) = glove.dim {
        if d != word_dim {
            return Err(Error::data(format!(
                "embedding file has {d}-dimensional vectors, configuration expects {word_dim}"
            )));
        }
    }
    let mut words = Matrix::zeros(vocab.word_count(), word_dim);
    let mut pretrained = 0;
    for (id, w) in vocab.words().iter().enumerate() {
        let row = words.row_mut(id);
        match glove.vectors.get(w).filter(|_| id != vocab.unk_id()) {
            Some(v) => {
                row.copy_from_slice(v);
                pretrained += 1;
            }
            None => row
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-INIT_SCALE..=INIT_SCALE)),
        }
    }
    let tags = Matrix::uniform(vocab.tag_count(), tag_dim, INIT_SCALE, rng);
    Ok(EmbeddingTables {
        words,
        tags,
        pretrained,
    })
}

/// Vocabulary plus embeddings from training instances and an optional GloVe
/// file.
pub fn build_vocab<R: Rng + ?Sized>(
    instances: &[Instance],
    labels: Vec<String>,
    embeddings_path: Option<&Path>,
    word_dim: usize,
    tag_dim: usize,
    rng: &mut R,
) -> Result<(Vocab, EmbeddingTables)> {
    let vocab = Vocab::build(instances, labels);
    let glove = match embeddings_path {
        Some(path) => {
            let keep: HashSet<String> = vocab.words().iter().cloned().collect();
            load_glove(path, Some(&keep))?
        }
        None => Glove::default(),
    };
    let tables = build_embeddings(&vocab, &glove, word_dim, tag_dim, rng)?;
    Ok((vocab, tables))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexedNode {
    pub tag: usize,
    pub word: Option<usize>,
    pub children: Option<(usize, usize)>,
}

/// A binary tree flattened in post-order; the root is the last node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedTree {
    pub nodes: Vec<IndexedNode>,
}

impl IndexedTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Word ids of the leaves, left to right.
    pub fn leaf_words(&self) -> Vec<usize> {
        self.nodes.iter().filter_map(|n| n.word).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedInstance {
    pub arg1: IndexedTree,
    pub arg2: IndexedTree,
    pub labels: BTreeSet<usize>,
}

impl IndexedInstance {
    /// The single training label. Panics on an unexpanded instance.
    pub fn gold(&self) -> usize {
        assert_eq!(self.labels.len(), 1, "training instance must carry exactly one label");
        *self.labels.first().expect("one label")
    }
}
