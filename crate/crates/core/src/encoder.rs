//! Argument encoding.
//!
//! Tree modes walk the post-ordered [`IndexedTree`] bottom-up; leaves receive
//! their word embedding and zero child states, internal nodes a zero word
//! input. The argument representation is the root hidden state. Baseline
//! modes ignore the tree shape and run a forward and a backward sequential
//! cell over the leaf words; the representation is `[h_fwd_last, h_bwd_last]`.

use crate::cells::{
    gru_backward, lstm_backward, seq_gru_step, seq_lstm_step, tree_gru_compose,
    tree_lstm_compose, GruCache, LstmCache, LstmState,
};
use crate::corpus::IndexedTree;
use crate::error::{Error, Result};
use crate::params::{EncoderParams, GruParams, Gradients, LstmParams, ModelParams, SparseRows};

#[derive(Debug, Clone)]
enum Trace {
    TreeLstm(Vec<LstmCache>),
    TreeGru(Vec<GruCache>),
    BiLstm {
        fwd: Vec<LstmCache>,
        bwd: Vec<LstmCache>,
    },
    BiGru {
        fwd: Vec<GruCache>,
        bwd: Vec<GruCache>,
    },
}

#[derive(Debug, Clone)]
pub struct EncodedArgument {
    pub repr: Vec<f64>,
    trace: Option<Trace>,
}

impl EncodedArgument {
    pub fn has_trace(&self) -> bool {
        self.trace.is_some()
    }

    /// Drops the cached activations; a later backward call fails.
    pub fn into_repr(self) -> Vec<f64> {
        self.repr
    }
}

fn check_ids(tree: &IndexedTree, params: &ModelParams) -> Result<()> {
    if tree.is_empty() {
        return Err(Error::InvalidArgument("cannot encode an empty tree".into()));
    }
    let vocab = params.words.rows();
    let tags = params.tags.as_ref().map(|t| t.rows());
    for (i, n) in tree.nodes.iter().enumerate() {
        if let Some(w) = n.word {
            if w >= vocab {
                return Err(Error::InvalidArgument(format!(
                    "word id {w} outside a vocabulary of {vocab}"
                )));
            }
        }
        if let Some(t) = tags {
            if n.tag >= t {
                return Err(Error::InvalidArgument(format!(
                    "tag id {} outside a tag vocabulary of {t}",
                    n.tag
                )));
            }
        }
        match n.children {
            Some((l, r)) if l >= i || r >= i || n.word.is_some() => {
                return Err(Error::InvalidArgument(format!(
                    "node {i} is not in post-order"
                )))
            }
            None if n.word.is_none() => {
                return Err(Error::InvalidArgument(format!("leaf {i} has no word")))
            }
            _ => {}
        }
    }
    Ok(())
}

fn tag_row(params: &ModelParams, tag: usize) -> Option<&[f64]> {
    params.tags.as_ref().map(|t| t.row(tag))
}

/// Encodes one argument. With `keep_trace`, activations are retained for
/// [`encode_backward`].
pub fn encode(tree: &IndexedTree, params: &ModelParams, keep_trace: bool) -> Result<EncodedArgument> {
    check_ids(tree, params)?;
    let d = params.dims.hidden;
    let (repr, trace) = match &params.encoder {
        EncoderParams::TreeLstm(cell) => {
            let mut states: Vec<LstmState> = Vec::with_capacity(tree.len());
            let mut caches = Vec::with_capacity(if keep_trace { tree.len() } else { 0 });
            let zero = LstmState::zeros(d);
            for node in &tree.nodes {
                let x = node.word.map(|w| params.words.row(w));
                let t = tag_row(params, node.tag);
                let (left, right) = match node.children {
                    Some((l, r)) => (&states[l], &states[r]),
                    None => (&zero, &zero),
                };
                let (state, cache) = tree_lstm_compose(cell, x, t, left, right)?;
                states.push(state);
                if keep_trace {
                    caches.push(cache);
                }
            }
            let root = states.pop().expect("non-empty").h;
            (root, Trace::TreeLstm(caches))
        }
        EncoderParams::TreeGru(cell) => {
            let mut states: Vec<Vec<f64>> = Vec::with_capacity(tree.len());
            let mut caches = Vec::with_capacity(if keep_trace { tree.len() } else { 0 });
            let zero = vec![0.0; d];
            for node in &tree.nodes {
                let x = node.word.map(|w| params.words.row(w));
                let t = tag_row(params, node.tag);
                let (left, right) = match node.children {
                    Some((l, r)) => (states[l].as_slice(), states[r].as_slice()),
                    None => (zero.as_slice(), zero.as_slice()),
                };
                let (h, cache) = tree_gru_compose(cell, x, t, left, right)?;
                states.push(h);
                if keep_trace {
                    caches.push(cache);
                }
            }
            let root = states.pop().expect("non-empty");
            (root, Trace::TreeGru(caches))
        }
        EncoderParams::BiLstm { fwd, bwd } => {
            let words = tree.leaf_words();
            let (hf, cf) = run_lstm(fwd, params, words.iter().copied(), d)?;
            let (hb, cb) = run_lstm(bwd, params, words.iter().rev().copied(), d)?;
            (
                [hf, hb].concat(),
                Trace::BiLstm { fwd: cf, bwd: cb },
            )
        }
        EncoderParams::BiGru { fwd, bwd } => {
            let words = tree.leaf_words();
            let (hf, cf) = run_gru(fwd, params, words.iter().copied(), d)?;
            let (hb, cb) = run_gru(bwd, params, words.iter().rev().copied(), d)?;
            ([hf, hb].concat(), Trace::BiGru { fwd: cf, bwd: cb })
        }
    };
    Ok(EncodedArgument {
        repr,
        trace: keep_trace.then_some(trace),
    })
}

fn run_lstm(
    cell: &LstmParams,
    params: &ModelParams,
    words: impl Iterator<Item = usize>,
    d: usize,
) -> Result<(Vec<f64>, Vec<LstmCache>)> {
    let mut state = LstmState::zeros(d);
    let mut caches = Vec::new();
    for w in words {
        let (next, cache) = seq_lstm_step(cell, params.words.row(w), &state)?;
        state = next;
        caches.push(cache);
    }
    Ok((state.h, caches))
}

fn run_gru(
    cell: &GruParams,
    params: &ModelParams,
    words: impl Iterator<Item = usize>,
    d: usize,
) -> Result<(Vec<f64>, Vec<GruCache>)> {
    let mut h = vec![0.0; d];
    let mut caches = Vec::new();
    for w in words {
        let (next, cache) = seq_gru_step(cell, params.words.row(w), &h)?;
        h = next;
        caches.push(cache);
    }
    Ok((h, caches))
}

fn scatter(rows: &mut SparseRows, id: usize, g: Option<&Vec<f64>>) {
    if let Some(g) = g {
        rows.add_row(id, g);
    }
}

/// Back-propagates `d_repr` through a traced encoding, adding parameter and
/// embedding-row gradients into `grads`.
pub fn encode_backward(
    tree: &IndexedTree,
    encoded: &EncodedArgument,
    params: &ModelParams,
    d_repr: &[f64],
    grads: &mut Gradients,
) -> Result<()> {
    let trace = encoded
        .trace
        .as_ref()
        .ok_or_else(|| Error::State("encoding was produced without cached activations".into()))?;
    if d_repr.len() != encoded.repr.len() {
        return Err(Error::Shape(format!(
            "representation cotangent has {} entries, expected {}",
            d_repr.len(),
            encoded.repr.len()
        )));
    }
    let d = params.dims.hidden;
    let Gradients {
        dense,
        words: word_grads,
        tags: tag_grads,
    } = grads;
    match (trace, &params.encoder, &mut dense.encoder) {
        (Trace::TreeLstm(caches), EncoderParams::TreeLstm(cell), EncoderParams::TreeLstm(g)) => {
            if caches.len() != tree.len() {
                return Err(Error::State("trace does not match tree".into()));
            }
            let mut dh = vec![vec![0.0; d]; tree.len()];
            let mut dc = vec![vec![0.0; d]; tree.len()];
            dh[tree.len() - 1].copy_from_slice(d_repr);
            for (i, node) in tree.nodes.iter().enumerate().rev() {
                let back = lstm_backward(cell, &caches[i], &dh[i], &dc[i], g)?;
                if let Some(w) = node.word {
                    scatter(word_grads, w, back.x.as_ref());
                }
                scatter(tag_grads, node.tag, back.t.as_ref());
                if let Some((l, r)) = node.children {
                    crate::numerics::add_into(&mut dh[l], &back.h[0]);
                    crate::numerics::add_into(&mut dh[r], &back.h[1]);
                    crate::numerics::add_into(&mut dc[l], &back.c);
                    crate::numerics::add_into(&mut dc[r], &back.c);
                }
            }
        }
        (Trace::TreeGru(caches), EncoderParams::TreeGru(cell), EncoderParams::TreeGru(g)) => {
            if caches.len() != tree.len() {
                return Err(Error::State("trace does not match tree".into()));
            }
            let mut dh = vec![vec![0.0; d]; tree.len()];
            dh[tree.len() - 1].copy_from_slice(d_repr);
            for (i, node) in tree.nodes.iter().enumerate().rev() {
                let back = gru_backward(cell, &caches[i], &dh[i], g)?;
                if let Some(w) = node.word {
                    scatter(word_grads, w, back.x.as_ref());
                }
                scatter(tag_grads, node.tag, back.t.as_ref());
                if let Some((l, r)) = node.children {
                    crate::numerics::add_into(&mut dh[l], &back.h[0]);
                    crate::numerics::add_into(&mut dh[r], &back.h[1]);
                }
            }
        }
        (
            Trace::BiLstm { fwd: cf, bwd: cb },
            EncoderParams::BiLstm { fwd, bwd },
            EncoderParams::BiLstm { fwd: gf, bwd: gb },
        ) => {
            let words = tree.leaf_words();
            if cf.len() != words.len() || cb.len() != words.len() {
                return Err(Error::State("trace does not match tree".into()));
            }
            let order: Vec<usize> = words.iter().rev().copied().collect();
            back_lstm(fwd, cf, &words, &d_repr[..d], gf, word_grads)?;
            back_lstm(bwd, cb, &order, &d_repr[d..], gb, word_grads)?;
        }
        (
            Trace::BiGru { fwd: cf, bwd: cb },
            EncoderParams::BiGru { fwd, bwd },
            EncoderParams::BiGru { fwd: gf, bwd: gb },
        ) => {
            let words = tree.leaf_words();
            if cf.len() != words.len() || cb.len() != words.len() {
                return Err(Error::State("trace does not match tree".into()));
            }
            let order: Vec<usize> = words.iter().rev().copied().collect();
            back_gru(fwd, cf, &words, &d_repr[..d], gf, word_grads)?;
            back_gru(bwd, cb, &order, &d_repr[d..], gb, word_grads)?;
        }
        _ => return Err(Error::State("trace, parameters and gradients disagree on mode".into())),
    }
    Ok(())
}

fn back_lstm(
    cell: &LstmParams,
    caches: &[LstmCache],
    words: &[usize],
    d_last: &[f64],
    g: &mut LstmParams,
    word_grads: &mut SparseRows,
) -> Result<()> {
    let mut dh = d_last.to_vec();
    let mut dc = vec![0.0; dh.len()];
    for (cache, &w) in caches.iter().zip(words).rev() {
        let back = lstm_backward(cell, cache, &dh, &dc, g)?;
        scatter(word_grads, w, back.x.as_ref());
        dh = back.h.into_iter().next().expect("one predecessor");
        dc = back.c;
    }
    Ok(())
}

fn back_gru(
    cell: &GruParams,
    caches: &[GruCache],
    words: &[usize],
    d_last: &[f64],
    g: &mut GruParams,
    word_grads: &mut SparseRows,
) -> Result<()> {
    let mut dh = d_last.to_vec();
    for (cache, &w) in caches.iter().zip(words).rev() {
        let back = gru_backward(cell, cache, &dh, g)?;
        scatter(word_grads, w, back.x.as_ref());
        dh = back.h.into_iter().next().expect("one predecessor");
    }
    Ok(())
}
