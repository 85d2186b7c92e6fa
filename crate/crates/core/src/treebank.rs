//! Penn-Treebank bracketed trees and their normalization into binary trees.
//!
//! The normalization pipeline applied to every argument is
//! [`join_multisentence`] → [`collapse_unary_chains`] → [`binarize_right`],
//! wrapped up as [`normalize`].

use std::fmt;

use crate::error::{Error, Result};

/// Tag given to the synthetic node that joins multi-sentence arguments.
pub const ROOT_TAG: &str = "Root";

/// An n-ary constituency tree. Leaves carry a word and no children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    pub tag: String,
    pub children: Vec<ParseTree>,
    pub word: Option<String>,
}

impl ParseTree {
    pub fn leaf(tag: impl Into<String>, word: impl Into<String>) -> Self {
        ParseTree {
            tag: tag.into(),
            children: Vec::new(),
            word: Some(word.into()),
        }
    }

    pub fn node(tag: impl Into<String>, children: Vec<ParseTree>) -> Self {
        ParseTree {
            tag: tag.into(),
            children,
            word: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Leaf words in left-to-right order.
    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_words(&mut out);
        out
    }

    fn collect_words<'a>(&'a self, out: &mut Vec<&'a str>) {
        if let Some(w) = &self.word {
            out.push(w);
        }
        for c in &self.children {
            c.collect_words(out);
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(ParseTree::node_count).sum::<usize>()
    }

    /// Checks the structural invariants: a word iff no children, and tags
    /// free of whitespace and parentheses.
    pub fn validate(&self) -> Result<()> {
        if !valid_atom(&self.tag) {
            return Err(Error::InvalidArgument(format!("bad tag {:?}", self.tag)));
        }
        match (&self.word, self.children.is_empty()) {
            (Some(w), true) if valid_atom(w) => Ok(()),
            (Some(w), true) => Err(Error::InvalidArgument(format!("bad word {w:?}"))),
            (Some(_), false) => Err(Error::InvalidArgument(format!(
                "node {} has both a word and children",
                self.tag
            ))),
            (None, true) => Err(Error::InvalidArgument(format!(
                "leaf {} has no word",
                self.tag
            ))),
            (None, false) => self.children.iter().try_for_each(ParseTree::validate),
        }
    }
}

fn valid_atom(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c == '(' || c == ')')
}

impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.tag)?;
        if let Some(w) = &self.word {
            write!(f, " {w}")?;
        }
        for c in &self.children {
            write!(f, " {c}")?;
        }
        write!(f, ")")
    }
}

/// A strictly binary tree: every node is a word-bearing leaf or has exactly
/// two children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BinaryTree {
    Leaf {
        tag: String,
        word: String,
    },
    Node {
        tag: String,
        left: Box<BinaryTree>,
        right: Box<BinaryTree>,
    },
}

impl BinaryTree {
    pub fn leaf(tag: impl Into<String>, word: impl Into<String>) -> Self {
        BinaryTree::Leaf {
            tag: tag.into(),
            word: word.into(),
        }
    }

    pub fn node(tag: impl Into<String>, left: BinaryTree, right: BinaryTree) -> Self {
        BinaryTree::Node {
            tag: tag.into(),
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn tag(&self) -> &str {
        match self {
            BinaryTree::Leaf { tag, .. } | BinaryTree::Node { tag, .. } => tag,
        }
    }

    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit_post_order(&mut |n| {
            if let BinaryTree::Leaf { word, .. } = n {
                out.push(word.as_str());
            }
        });
        out
    }

    pub fn node_count(&self) -> usize {
        match self {
            BinaryTree::Leaf { .. } => 1,
            BinaryTree::Node { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            BinaryTree::Leaf { .. } => 1,
            BinaryTree::Node { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Visits children before parents, left before right.
    pub fn visit_post_order<'a>(&'a self, f: &mut impl FnMut(&'a BinaryTree)) {
        if let BinaryTree::Node { left, right, .. } = self {
            left.visit_post_order(f);
            right.visit_post_order(f);
        }
        f(self);
    }

    pub fn to_parse_tree(&self) -> ParseTree {
        match self {
            BinaryTree::Leaf { tag, word } => ParseTree::leaf(tag.clone(), word.clone()),
            BinaryTree::Node { tag, left, right } => {
                ParseTree::node(tag.clone(), vec![left.to_parse_tree(), right.to_parse_tree()])
            }
        }
    }
}

impl fmt::Display for BinaryTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinaryTree::Leaf { tag, word } => write!(f, "({tag} {word})"),
            BinaryTree::Node { tag, left, right } => write!(f, "({tag} {left} {right})"),
        }
    }
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&self) -> Option<u8> {
        self.text.as_bytes().get(self.pos).copied()
    }

    fn atom(&mut self) -> &'a str {
        let start = self.pos;
        let rest = &self.text[start..];
        let end = rest
            .find(|c: char| c.is_whitespace() || c == '(' || c == ')')
            .unwrap_or(rest.len());
        self.pos += end;
        &self.text[start..start + end]
    }

    /// Parses one tree, accepting a single unlabeled outer wrapper.
    fn tree(&mut self) -> Result<ParseTree> {
        self.skip_ws();
        let open = self.pos;
        match self.peek() {
            Some(b'(') => {}
            Some(_) => return self.err(open, "expected '('"),
            None => return self.err(open, "unexpected end of input"),
        }
        self.pos += 1;
        self.skip_ws();
        if self.peek() != Some(b'(') {
            self.pos = open;
            return self.node();
        }
        let inner = self.node()?;
        self.skip_ws();
        match self.peek() {
            Some(b')') => {
                self.pos += 1;
                Ok(inner)
            }
            Some(b'(') => self.err(self.pos, "wrapper must contain exactly one tree"),
            Some(_) => self.err(self.pos, "unexpected token after wrapped tree"),
            None => self.err(self.pos, "unbalanced parentheses: missing ')'"),
        }
    }

    fn node(&mut self) -> Result<ParseTree> {
        let open = self.pos;
        debug_assert_eq!(self.peek(), Some(b'('));
        self.pos += 1;
        self.skip_ws();
        match self.peek() {
            Some(b'(') | Some(b')') => return self.err(self.pos, "empty label"),
            None => return self.err(self.pos, "unbalanced parentheses: missing ')'"),
            _ => {}
        }
        let tag = self.atom().to_string();
        let mut children = Vec::new();
        let mut words: Vec<(usize, &str)> = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return self.err(self.pos, "unbalanced parentheses: missing ')'"),
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                Some(b'(') => children.push(self.node()?),
                Some(_) => {
                    let at = self.pos;
                    words.push((at, self.atom()));
                }
            }
        }
        match (words.as_slice(), children.is_empty()) {
            ([], false) => Ok(ParseTree::node(tag, children)),
            ([(_, w)], true) => Ok(ParseTree::leaf(tag, *w)),
            ([], true) => self.err(open, format!("node {tag} has neither word nor children")),
            ([_, (at, _), ..], true) => self.err(*at, format!("leaf {tag} has multiple words")),
            ([(at, _), ..], false) => {
                self.err(*at, format!("node {tag} mixes a bare word with subtrees"))
            }
        }
    }

    fn finish(&mut self) -> Result<()> {
        self.skip_ws();
        match self.peek() {
            None => Ok(()),
            Some(b')') => self.err(self.pos, "unbalanced parentheses: unexpected ')'"),
            Some(_) => self.err(self.pos, "trailing content after tree"),
        }
    }
}

/// Parses a single bracketed tree. Tokens are kept verbatim.
pub fn parse_ptb(text: &str) -> Result<ParseTree> {
    let mut p = Parser { text, pos: 0 };
    let tree = p.tree()?;
    p.finish()?;
    Ok(tree)
}

/// Parses a sequence of whitespace-separated bracketed trees, as found in
/// `.mrg`-style files with one or many trees per line.
pub fn parse_ptb_many(text: &str) -> Result<Vec<ParseTree>> {
    let mut p = Parser { text, pos: 0 };
    let mut out = Vec::new();
    loop {
        p.skip_ws();
        match p.peek() {
            None => return Ok(out),
            Some(b')') => return p.err(p.pos, "unbalanced parentheses: unexpected ')'"),
            _ => out.push(p.tree()?),
        }
    }
}

/// Removes every internal node with a single child. Each maximal unary chain
/// is replaced by its lowest node, so preterminal tags survive.
pub fn collapse_unary_chains(t: ParseTree) -> ParseTree {
    let mut t = t;
    while t.children.len() == 1 {
        t = t.children.pop().expect("one child");
    }
    let children = t.children.into_iter().map(collapse_unary_chains).collect();
    ParseTree { children, ..t }
}

/// Right-branching binarization: `(X c1 c2 ... ck)` becomes
/// `(X c1 (X c2 (... (X ck-1 ck))))`. Inserted nodes reuse the parent tag.
/// Unary nodes, if any remain, are collapsed on the way.
pub fn binarize_right(t: ParseTree) -> BinaryTree {
    let ParseTree {
        tag,
        children,
        word,
    } = t;
    if children.is_empty() {
        return BinaryTree::Leaf {
            tag,
            word: word.unwrap_or_default(),
        };
    }
    let mut rest: Vec<BinaryTree> = children.into_iter().map(binarize_right).collect();
    let mut acc = rest.pop().expect("non-empty");
    if rest.is_empty() {
        return acc;
    }
    while let Some(prev) = rest.pop() {
        acc = BinaryTree::node(tag.clone(), prev, acc);
    }
    acc
}

/// Joins the sentence trees of one argument under a shared [`ROOT_TAG`] node.
pub fn join_multisentence(mut ts: Vec<ParseTree>) -> Result<ParseTree> {
    match ts.len() {
        0 => Err(Error::InvalidArgument(
            "an argument needs at least one tree".into(),
        )),
        1 => Ok(ts.pop().expect("one tree")),
        _ => Ok(ParseTree::node(ROOT_TAG, ts)),
    }
}

/// Full argument normalization: join, collapse, binarize.
pub fn normalize(ts: Vec<ParseTree>) -> Result<BinaryTree> {
    Ok(binarize_right(collapse_unary_chains(join_multisentence(ts)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> ParseTree {
        parse_ptb(s).unwrap()
    }

    #[test]
    fn parses_simple_phrase() {
        let t = p("(NP (DT the) (NN cat))");
        assert_eq!(t.tag, "NP");
        assert_eq!(t.children.len(), 2);
        assert_eq!(t.children[0], ParseTree::leaf("DT", "the"));
        assert_eq!(t.children[1], ParseTree::leaf("NN", "cat"));
        assert_eq!(t.words(), vec!["the", "cat"]);
    }

    #[test]
    fn strips_wrapper() {
        let t = p("((S (NN dogs)))");
        assert_eq!(t.tag, "S");
        assert_eq!(t.children, vec![ParseTree::leaf("NN", "dogs")]);
        assert_eq!(p("( (NN x) )"), ParseTree::leaf("NN", "x"));
    }

    #[test]
    fn reports_unbalanced_offset() {
        match parse_ptb("(NP (DT the") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 11),
            other => panic!("unexpected {other:?}"),
        }
        match parse_ptb("(NN a))") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_nodes() {
        for bad in [
            "",
            "NN cat",
            "(NP (DT the) ( (NN cat)))",
            "(NN two words)",
            "(NP the (NN cat))",
            "(NP)",
            "()",
            "((NN a) (NN b))",
            "(NN a) (NN b)",
        ] {
            assert!(
                matches!(parse_ptb(bad), Err(Error::Parse { .. })),
                "accepted {bad:?}"
            );
        }
    }

    #[test]
    fn keeps_tokens_verbatim() {
        let t = p("(S (NNP Dogs) (-LRB- -LRB-) (VBD Ran.))");
        assert_eq!(t.words(), vec!["Dogs", "-LRB-", "Ran."]);
    }

    #[test]
    fn parses_many_trees_across_lines() {
        let ts = parse_ptb_many("(NN a)\n( (S (NN b)\n   (VB c)))\n\n(NN d)").unwrap();
        assert_eq!(ts.len(), 3);
        assert_eq!(ts[1].words(), vec!["b", "c"]);
    }

    #[test]
    fn collapse_keeps_lowest_tag() {
        assert_eq!(
            collapse_unary_chains(p("(S (NP (NN dog)))")),
            ParseTree::leaf("NN", "dog")
        );
        let t = p("(NP (DT the) (NN cat))");
        assert_eq!(collapse_unary_chains(t.clone()), t);
        let t = p("(S (VP (VBD ran) (PP (IN to) (NP (NN town)))))");
        let c = collapse_unary_chains(t);
        assert_eq!(c.to_string(), "(VP (VBD ran) (PP (IN to) (NN town)))");
    }

    #[test]
    fn binarize_right_branches() {
        let t = p("(S (A a) (B b) (C c))");
        let b = binarize_right(t);
        assert_eq!(b.to_string(), "(S (A a) (S (B b) (C c)))");
        let t = p("(NP (A a) (B b))");
        assert_eq!(binarize_right(t.clone()).to_parse_tree(), t);
    }

    #[test]
    fn join_rules() {
        let t1 = p("(S (NN a) (VB b))");
        let t2 = p("(S (NN c) (VB d))");
        let t3 = p("(NN e)");
        assert_eq!(join_multisentence(vec![t1.clone()]).unwrap(), t1);
        let j = join_multisentence(vec![t1.clone(), t2.clone()]).unwrap();
        assert_eq!(j, ParseTree::node(ROOT_TAG, vec![t1.clone(), t2.clone()]));
        let b = normalize(vec![t1.clone(), t2.clone(), t3.clone()]).unwrap();
        let expected = BinaryTree::node(
            ROOT_TAG,
            binarize_right(t1),
            BinaryTree::node(ROOT_TAG, binarize_right(t2), binarize_right(t3)),
        );
        assert_eq!(b, expected);
        assert!(matches!(
            join_multisentence(vec![]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn serializes_canonically() {
        let t = p("  ( (S\n  (NP (DT the)   (NN cat))\n (VP (VBD sat))) )");
        assert_eq!(t.to_string(), "(S (NP (DT the) (NN cat)) (VP (VBD sat)))");
        assert_eq!(p(&t.to_string()), t);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_tree() -> impl Strategy<Value = ParseTree> {
            let tag = prop::sample::select(vec!["S", "NP", "VP", "PP", "DT", "NN", "SBAR"]);
            let word = "[a-z]{1,5}";
            let leaf = (tag.clone(), word).prop_map(|(t, w)| ParseTree::leaf(t, w));
            leaf.prop_recursive(5, 48, 5, move |inner| {
                (tag.clone(), prop::collection::vec(inner, 1..5))
                    .prop_map(|(t, cs)| ParseTree::node(t, cs))
            })
        }

        fn strictly_binary(b: &BinaryTree) -> bool {
            match b {
                BinaryTree::Leaf { word, .. } => !word.is_empty(),
                BinaryTree::Node { left, right, .. } => strictly_binary(left) && strictly_binary(right),
            }
        }

        proptest! {
            #[test]
            fn normalization_preserves_leaves(ts in prop::collection::vec(arb_tree(), 1..4)) {
                let before: Vec<String> = ts.iter().flat_map(|t| t.words()).map(str::to_string).collect();
                let b = normalize(ts).unwrap();
                let after: Vec<String> = b.words().into_iter().map(str::to_string).collect();
                prop_assert_eq!(before, after);
                prop_assert!(strictly_binary(&b));
            }

            #[test]
            fn collapse_is_idempotent(t in arb_tree()) {
                let once = collapse_unary_chains(t);
                prop_assert!(once.children.len() != 1);
                prop_assert_eq!(collapse_unary_chains(once.clone()), once);
            }

            #[test]
            fn serialize_parse_round_trip(t in arb_tree()) {
                prop_assert_eq!(parse_ptb(&t.to_string()).unwrap(), t.clone());
                prop_assert!(t.validate().is_ok());
            }
        }
    }
}
