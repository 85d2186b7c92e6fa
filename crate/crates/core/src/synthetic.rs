//! Generated trees and corpora for tests, benchmarks and the gradient check.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::{IndexedInstance, IndexedNode, IndexedTree, Instance, Split};
use crate::numerics::Matrix;
use crate::params::{Dims, Mode, ModelParams};
use crate::treebank::{BinaryTree, ParseTree};

/// A random n-ary parse tree with unary chains, at most `max_depth` deep.
pub fn random_parse_tree<R: Rng + ?Sized>(rng: &mut R, max_depth: usize) -> ParseTree {
    const TAGS: [&str; 6] = ["S", "NP", "VP", "PP", "ADJP", "SBAR"];
    const LEAF_TAGS: [&str; 5] = ["DT", "NN", "VBD", "IN", "JJ"];
    if max_depth == 0 || rng.gen_bool(0.3) {
        let word = format!("w{}", rng.gen_range(0..50));
        return ParseTree::leaf(*LEAF_TAGS.choose(rng).expect("non-empty"), word);
    }
    let n = match rng.gen_range(0..10) {
        0..=1 => 1,
        2..=5 => 2,
        6..=7 => 3,
        _ => rng.gen_range(4..=6),
    };
    let children = (0..n).map(|_| random_parse_tree(rng, max_depth - 1)).collect();
    ParseTree::node(*TAGS.choose(rng).expect("non-empty"), children)
}

/// A random binary tree over `words`, with leaf and internal tags drawn
/// from the given pools.
pub fn random_binary_tree<R: Rng + ?Sized>(
    rng: &mut R,
    words: &[String],
    leaf_tags: &[&str],
    inner_tags: &[&str],
) -> BinaryTree {
    assert!(!words.is_empty(), "a tree needs at least one word");
    if words.len() == 1 {
        return BinaryTree::leaf(*leaf_tags.choose(rng).expect("non-empty"), words[0].clone());
    }
    let split = rng.gen_range(1..words.len());
    let left = random_binary_tree(rng, &words[..split], leaf_tags, inner_tags);
    let right = random_binary_tree(rng, &words[split..], leaf_tags, inner_tags);
    BinaryTree::node(*inner_tags.choose(rng).expect("non-empty"), left, right)
}

/// A random post-ordered tree with `leaves` leaves over ids below `vocab`
/// and `tags`.
pub fn random_indexed_tree<R: Rng + ?Sized>(rng: &mut R, leaves: usize, vocab: usize, tags: usize) -> IndexedTree {
    fn build<R: Rng + ?Sized>(rng: &mut R, n: usize, vocab: usize, tags: usize, out: &mut Vec<IndexedNode>) -> usize {
        if n == 1 {
            out.push(IndexedNode { tag: rng.gen_range(0..tags), word: Some(rng.gen_range(0..vocab)), children: None });
        } else {
            let k = rng.gen_range(1..n);
            let l = build(rng, k, vocab, tags, out);
            let r = build(rng, n - k, vocab, tags, out);
            out.push(IndexedNode { tag: rng.gen_range(0..tags), word: None, children: Some((l, r)) });
        }
        out.len() - 1
    }
    assert!(leaves > 0, "a tree needs at least one leaf");
    let mut nodes = Vec::with_capacity(2 * leaves - 1);
    build(rng, leaves, vocab, tags, &mut nodes);
    IndexedTree { nodes }
}

/// Dimensions of the gradient-check problem.
pub const GRADCHECK_DIMS: Dims = Dims { word: 3, tag: 2, hidden: 4, vocab: 10, tags: 6, labels: 4 };

/// Parameter scale for the gradient check; large enough that the cells
/// operate away from their linear regime.
pub const GRADCHECK_SCALE: f64 = 0.5;

/// A random model and instance (trees of at most 15 nodes) for `mode`.
pub fn gradcheck_problem(mode: Mode, seed: u64) -> (ModelParams, IndexedInstance, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = GRADCHECK_DIMS;
    let mut params = ModelParams::random(mode, d, &mut rng);
    for (_, m) in params.all_mut() {
        let (r, c) = m.shape();
        *m = Matrix::uniform(r, c, GRADCHECK_SCALE, &mut rng);
    }
    let l1 = rng.gen_range(1..=8);
    let l2 = rng.gen_range(1..=8);
    let arg1 = random_indexed_tree(&mut rng, l1, d.vocab, d.tags);
    let arg2 = random_indexed_tree(&mut rng, l2, d.vocab, d.tags);
    let gold = rng.gen_range(0..d.labels);
    (params, IndexedInstance { arg1, arg2, labels: BTreeSet::from([gold]) }, gold)
}

/// A corpus split into train and test instances.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub labels: Vec<String>,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
}

impl SyntheticCorpus {
    /// All instances as JSONL records in the corpus input format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for inst in self.train.iter().chain(&self.test) {
            let labels: Vec<&str> = inst.labels.iter().map(|&l| self.labels[l].as_str()).collect();
            let split = match inst.split {
                Split::Train => "train",
                Split::Dev => "dev",
                Split::Test => "test",
            };
            let rec = json!({
                "id": inst.id,
                "arg1": inst.arg1.to_string(),
                "arg2": inst.arg2.to_string(),
                "labels": labels,
                "split": split,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

fn class_names() -> Vec<String> {
    crate::corpus::LEVEL1_LABELS.iter().map(|s| s.to_string()).collect()
}

fn instance(id: String, arg1: BinaryTree, arg2: BinaryTree, label: usize, split: Split) -> Instance {
    Instance { id: Some(id), arg1, arg2, labels: BTreeSet::from([label]), split }
}

/// Four classes distinguished only by constituent tags. Every instance
/// shares the same words and tree shapes; the class tag sits on a random
/// leaf of the first argument and every other node carries a noise tag from
/// a pool shared by all classes. The test split holds 25 instances per class.
pub fn tag_signal_corpus(seed: u64, train: usize) -> SyntheticCorpus {
    const WORDS1: [&str; 5] = ["the", "market", "fell", "sharply", "today"];
    const WORDS2: [&str; 4] = ["investors", "sold", "their", "shares"];
    const CLASS_TAGS: [&str; 4] = ["CT", "CC", "CM", "CE"];
    const NOISE: [&str; 4] = ["NA", "NB", "NC", "ND"];

    #[derive(Clone)]
    enum Shape {
        Leaf(&'static str),
        Node(Box<Shape>, Box<Shape>),
    }
    fn shape(words: &[&'static str]) -> Shape {
        // Fixed right-branching shape.
        match words {
            [w] => Shape::Leaf(w),
            [w, rest @ ..] => Shape::Node(Box::new(Shape::Leaf(w)), Box::new(shape(rest))),
            [] => unreachable!(),
        }
    }
    fn tagged<R: Rng + ?Sized>(s: &Shape, rng: &mut R, class_leaf: Option<(usize, &str)>, next_leaf: &mut usize) -> BinaryTree {
        match s {
            Shape::Leaf(w) => {
                let idx = *next_leaf;
                *next_leaf += 1;
                let tag = match class_leaf {
                    Some((k, t)) if k == idx => t,
                    _ => *NOISE.choose(rng).expect("non-empty"),
                };
                BinaryTree::leaf(tag, *w)
            }
            Shape::Node(l, r) => {
                let left = tagged(l, rng, class_leaf, next_leaf);
                let right = tagged(r, rng, class_leaf, next_leaf);
                BinaryTree::node(*NOISE.choose(rng).expect("non-empty"), left, right)
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s1 = shape(&WORDS1);
    let s2 = shape(&WORDS2);
    let make = |label: usize, id: String, split: Split, rng: &mut ChaCha8Rng| {
        let pos = rng.gen_range(0..WORDS1.len());
        let a1 = tagged(&s1, rng, Some((pos, CLASS_TAGS[label])), &mut 0);
        let a2 = tagged(&s2, rng, None, &mut 0);
        instance(id, a1, a2, label, split)
    };
    let train_set = (0..train).map(|i| make(i % 4, format!("train-{i}"), Split::Train, &mut rng)).collect();
    let test_set = (0..100).map(|i| make(i % 4, format!("test-{i}"), Split::Test, &mut rng)).collect();
    SyntheticCorpus { labels: class_names(), train: train_set, test: test_set }
}

/// Four classes decided by a trigger pair: the first argument contains one
/// of two triggers and the second argument one of two others; the label is
/// `2·i + j` for trigger indices `i` and `j`. Fillers and tree shapes are
/// random. `total` instances are split 80/20 into train and test.
pub fn word_signal_corpus(seed: u64, total: usize) -> SyntheticCorpus {
    const T1: [&str; 2] = ["although", "because"];
    const T2: [&str; 2] = ["later", "instead"];
    const LEAF_TAGS: [&str; 4] = ["NN", "VB", "DT", "JJ"];
    const INNER_TAGS: [&str; 3] = ["NP", "VP", "S"];
    let fillers: Vec<String> = (0..30).map(|i| format!("f{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arg = |trigger: &str, rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(2..=6);
        let mut words: Vec<String> = (0..n - 1).map(|_| fillers.choose(rng).expect("non-empty").clone()).collect();
        let at = rng.gen_range(0..n);
        words.insert(at, trigger.to_string());
        random_binary_tree(rng, &words, &LEAF_TAGS, &INNER_TAGS)
    };
    let n_train = total * 4 / 5;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for k in 0..total {
        let label = k % 4;
        let (i, j) = (label / 2, label % 2);
        let a1 = arg(T1[i], &mut rng);
        let a2 = arg(T2[j], &mut rng);
        if k < n_train {
            train.push(instance(format!("train-{k}"), a1, a2, label, Split::Train));
        } else {
            test.push(instance(format!("test-{k}"), a1, a2, label, Split::Test));
        }
    }
    SyntheticCorpus { labels: class_names(), train, test }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{read_instances, Level};

    #[test]
    fn random_indexed_trees_are_post_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for leaves in 1..10 {
            let t = random_indexed_tree(&mut rng, leaves, 5, 3);
            assert_eq!(t.len(), 2 * leaves - 1);
            assert_eq!(t.leaf_words().len(), leaves);
            for (i, n) in t.nodes.iter().enumerate() {
                if let Some((l, r)) = n.children {
                    assert!(l < i && r < i);
                }
            }
        }
    }

    #[test]
    fn gradcheck_trees_fit_the_size_limit() {
        for seed in 0..20 {
            let (p, inst, gold) = gradcheck_problem(Mode::TagTreeGru, seed);
            assert!(inst.arg1.len() <= 15 && inst.arg2.len() <= 15);
            assert!(gold < 4);
            assert_eq!(p.dims, GRADCHECK_DIMS);
        }
    }

    #[test]
    fn tag_signal_instances_share_words_and_shapes() {
        let c = tag_signal_corpus(3, 40);
        let strip = |t: &BinaryTree| format!("{:?}", t.words()) + &t.depth().to_string();
        let first = &c.train[0];
        for inst in c.train.iter().chain(&c.test) {
            assert_eq!(strip(&inst.arg1), strip(&first.arg1));
            assert_eq!(strip(&inst.arg2), strip(&first.arg2));
        }
        for k in 0..4 {
            assert_eq!(c.test.iter().filter(|i| i.labels.contains(&k)).count(), 25);
        }
    }

    #[test]
    fn word_signal_split_and_triggers() {
        let c = word_signal_corpus(4, 500);
        assert_eq!((c.train.len(), c.test.len()), (400, 100));
        for inst in &c.train {
            let l = *inst.labels.first().unwrap();
            assert!(inst.arg1.words().contains(&["although", "because"][l / 2]));
            assert!(inst.arg2.words().contains(&["later", "instead"][l % 2]));
        }
    }

    #[test]
    fn jsonl_round_trips_through_the_reader() {
        let c = word_signal_corpus(5, 20);
        let back = read_instances(std::io::Cursor::new(c.to_jsonl()), &Level::One.label_names()).unwrap();
        let orig: Vec<_> = c.train.iter().chain(&c.test).cloned().collect();
        assert_eq!(back, orig);
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(word_signal_corpus(6, 30).to_jsonl(), word_signal_corpus(6, 30).to_jsonl());
        assert_eq!(tag_signal_corpus(6, 30).to_jsonl(), tag_signal_corpus(6, 30).to_jsonl());
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(random_parse_tree(&mut a, 5), random_parse_tree(&mut b, 5));
    }
}
