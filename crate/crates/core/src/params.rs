//! Trainable tensors and their gradient buffers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Scale of the uniform initializer used for all freshly created weights.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TreeLstm,
    TreeGru,
    TagTreeLstm,
    TagTreeGru,
    Bilstm,
    Bigru,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::TreeLstm,
        Mode::TreeGru,
        Mode::TagTreeLstm,
        Mode::TagTreeGru,
        Mode::Bilstm,
        Mode::Bigru,
    ];

    pub fn uses_tags(self) -> bool {
        matches!(self, Mode::TagTreeLstm | Mode::TagTreeGru)
    }

    pub fn is_tree(self) -> bool {
        !matches!(self, Mode::Bilstm | Mode::Bigru)
    }

    pub fn is_lstm(self) -> bool {
        matches!(self, Mode::TreeLstm | Mode::TagTreeLstm | Mode::Bilstm)
    }

    /// Length of the argument representation for hidden size `hidden`.
    pub fn repr_dim(self, hidden: usize) -> usize {
        if self.is_tree() {
            hidden
        } else {
            2 * hidden
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::TreeLstm => "tree_lstm",
            Mode::TreeGru => "tree_gru",
            Mode::TagTreeLstm => "tag_tree_lstm",
            Mode::TagTreeGru => "tag_tree_gru",
            Mode::Bilstm => "bilstm",
            Mode::Bigru => "bigru",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Word embedding size (ω).
    pub word: usize,
    /// Tag embedding size (τ).
    pub tag: usize,
    /// Hidden size (d).
    pub hidden: usize,
    pub vocab: usize,
    pub tags: usize,
    pub labels: usize,
}

/// One gate (or candidate) of a recurrent cell:
/// `pre = W·x + M·t + U·h_in + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub w: Matrix,
    pub u: Matrix,
    /// Tag projection; present only for gates that read the node tag.
    pub m: Option<Matrix>,
    pub b: Matrix,
}

impl Gate {
    fn zeros(hidden: usize, input: usize, recurrent: usize, tag: Option<usize>) -> Self {
        Gate {
            w: Matrix::zeros(hidden, input),
            u: Matrix::zeros(hidden, recurrent),
            m: tag.map(|t| Matrix::zeros(hidden, t)),
            b: Matrix::zeros(hidden, 1),
        }
    }

    fn random<R: Rng + ?Sized>(
        hidden: usize,
        input: usize,
        recurrent: usize,
        tag: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let w = Matrix::uniform(hidden, input, INIT_SCALE, rng);
        let u = Matrix::uniform(hidden, recurrent, INIT_SCALE, rng);
        let m = tag.map(|t| Matrix::uniform(hidden, t, INIT_SCALE, rng));
        Gate {
            w,
            u,
            m,
            b: Matrix::zeros(hidden, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w.rows()
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        out.push((format!("{prefix}.W"), &self.w));
        out.push((format!("{prefix}.U"), &self.u));
        if let Some(m) = &self.m {
            out.push((format!("{prefix}.M"), m));
        }
        out.push((format!("{prefix}.b"), &self.b));
    }

    #[cfg(test)]
    pub(crate) fn matrices(&self) -> impl Iterator<Item = &Matrix> {
        [Some(&self.w), Some(&self.u), self.m.as_ref(), Some(&self.b)]
            .into_iter()
            .flatten()
    }

    #[cfg(test)]
    pub(crate) fn matrices_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        [Some(&mut self.w), Some(&mut self.u), self.m.as_mut(), Some(&mut self.b)]
            .into_iter()
            .flatten()
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix)>) {
        out.push((format!("{prefix}.W"), &mut self.w));
        out.push((format!("{prefix}.U"), &mut self.u));
        if let Some(m) = &mut self.m {
            out.push((format!("{prefix}.M"), m));
        }
        out.push((format!("{prefix}.b"), &mut self.b));
    }
}

/// Input gate, single shared forget gate, output gate, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub i: Gate,
    pub f: Gate,
    pub o: Gate,
    pub u: Gate,
}

/// Reset gate, update gate, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub r: Gate,
    pub z: Gate,
    pub h: Gate,
}

impl LstmParams {
    // The flag passed to `gate` says whether the gate reads the tag: the
    // sigmoid gates do, the candidate does not.
    fn build(mut gate: impl FnMut(bool) -> Gate) -> Self {
        LstmParams {
            i: gate(true),
            f: gate(true),
            o: gate(true),
            u: gate(false),
        }
    }

    fn gates(&self) -> [(&'static str, &Gate); 4] {
        [("i", &self.i), ("f", &self.f), ("o", &self.o), ("u", &self.u)]
    }

    fn gates_mut(&mut self) -> [(&'static str, &mut Gate); 4] {
        [
            ("i", &mut self.i),
            ("f", &mut self.f),
            ("o", &mut self.o),
            ("u", &mut self.u),
        ]
    }

    pub fn has_tags(&self) -> bool {
        self.i.m.is_some()
    }

    #[cfg(test)]
    pub(crate) fn matrices(&self) -> Vec<&Matrix> {
        self.gates().into_iter().flat_map(|(_, g)| g.matrices()).collect()
    }

    #[cfg(test)]
    pub(crate) fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        self.gates_mut().into_iter().flat_map(|(_, g)| g.matrices_mut()).collect()
    }
}

impl GruParams {
    fn build(mut gate: impl FnMut(bool) -> Gate) -> Self {
        GruParams {
            r: gate(true),
            z: gate(true),
            h: gate(false),
        }
    }

    fn gates(&self) -> [(&'static str, &Gate); 3] {
        [("r", &self.r), ("z", &self.z), ("h", &self.h)]
    }

    fn gates_mut(&mut self) -> [(&'static str, &mut Gate); 3] {
        [("r", &mut self.r), ("z", &mut self.z), ("h", &mut self.h)]
    }

    pub fn has_tags(&self) -> bool {
        self.r.m.is_some()
    }

    #[cfg(test)]
    pub(crate) fn matrices(&self) -> Vec<&Matrix> {
        self.gates().into_iter().flat_map(|(_, g)| g.matrices()).collect()
    }

    #[cfg(test)]
    pub(crate) fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        self.gates_mut().into_iter().flat_map(|(_, g)| g.matrices_mut()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum EncoderParams {
    TreeLstm(LstmParams),
    TreeGru(GruParams),
    BiLstm { fwd: LstmParams, bwd: LstmParams },
    BiGru { fwd: GruParams, bwd: GruParams },
}

impl EncoderParams {
    fn build(mode: Mode, dims: &Dims, mut gate: impl FnMut(usize, usize, Option<usize>) -> Gate) -> Self {
        let (d, w) = (dims.hidden, dims.word);
        let tag = |wants: bool| (wants && mode.uses_tags()).then_some(dims.tag);
        match mode {
            Mode::TreeLstm | Mode::TagTreeLstm => {
                EncoderParams::TreeLstm(LstmParams::build(|g| gate(w, 2 * d, tag(g))))
            }
            Mode::TreeGru | Mode::TagTreeGru => {
                EncoderParams::TreeGru(GruParams::build(|g| gate(w, 2 * d, tag(g))))
            }
            Mode::Bilstm => {
                let fwd = LstmParams::build(|_| gate(w, d, None));
                let bwd = LstmParams::build(|_| gate(w, d, None));
                EncoderParams::BiLstm { fwd, bwd }
            }
            Mode::Bigru => {
                let fwd = GruParams::build(|_| gate(w, d, None));
                let bwd = GruParams::build(|_| gate(w, d, None));
                EncoderParams::BiGru { fwd, bwd }
            }
        }
    }

    fn tensors<'a>(&'a self, out: &mut Vec<(String, &'a Matrix)>) {
        match self {
            EncoderParams::TreeLstm(p) => p.gates().into_iter().for_each(|(n, g)| g.tensors(&format!("cell.{n}"), out)),
            EncoderParams::TreeGru(p) => p.gates().into_iter().for_each(|(n, g)| g.tensors(&format!("cell.{n}"), out)),
            EncoderParams::BiLstm { fwd, bwd } => {
                fwd.gates().into_iter().for_each(|(n, g)| g.tensors(&format!("cell.fwd.{n}"), out));
                bwd.gates().into_iter().for_each(|(n, g)| g.tensors(&format!("cell.bwd.{n}"), out));
            }
            EncoderParams::BiGru { fwd, bwd } => {
                fwd.gates().into_iter().for_each(|(n, g)| g.tensors(&format!("cell.fwd.{n}"), out));
                bwd.gates().into_iter().for_each(|(n, g)| g.tensors(&format!("cell.bwd.{n}"), out));
            }
        }
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Matrix)>) {
        match self {
            EncoderParams::TreeLstm(p) => p.gates_mut().into_iter().for_each(|(n, g)| g.tensors_mut(&format!("cell.{n}"), out)),
            EncoderParams::TreeGru(p) => p.gates_mut().into_iter().for_each(|(n, g)| g.tensors_mut(&format!("cell.{n}"), out)),
            EncoderParams::BiLstm { fwd, bwd } => {
                fwd.gates_mut().into_iter().for_each(|(n, g)| g.tensors_mut(&format!("cell.fwd.{n}"), out));
                bwd.gates_mut().into_iter().for_each(|(n, g)| g.tensors_mut(&format!("cell.bwd.{n}"), out));
            }
            EncoderParams::BiGru { fwd, bwd } => {
                fwd.gates_mut().into_iter().for_each(|(n, g)| g.tensors_mut(&format!("cell.fwd.{n}"), out));
                bwd.gates_mut().into_iter().for_each(|(n, g)| g.tensors_mut(&format!("cell.bwd.{n}"), out));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// `n × 2·dim(r)`
    pub w: Matrix,
    pub b: Matrix,
}

impl ClassifierParams {
    pub fn zeros(labels: usize, input: usize) -> Self {
        ClassifierParams {
            w: Matrix::zeros(labels, input),
            b: Matrix::zeros(labels, 1),
        }
    }

    pub fn labels(&self) -> usize {
        self.w.rows()
    }
}

/// Every trainable tensor of a model. Both arguments are encoded with the
/// same `encoder`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub mode: Mode,
    pub dims: Dims,
    pub words: Matrix,
    /// Present only in tag-enhanced modes.
    pub tags: Option<Matrix>,
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
}

impl ModelParams {
    pub fn zeros(mode: Mode, dims: Dims) -> Self {
        let d = dims.hidden;
        ModelParams {
            mode,
            dims,
            words: Matrix::zeros(dims.vocab, dims.word),
            tags: mode.uses_tags().then(|| Matrix::zeros(dims.tags, dims.tag)),
            encoder: EncoderParams::build(mode, &dims, |input, rec, tag| {
                Gate::zeros(d, input, rec, tag)
            }),
            classifier: ClassifierParams::zeros(dims.labels, 2 * mode.repr_dim(d)),
        }
    }

    /// Uniform U[-0.05, 0.05] weights, zero biases. Embedding tables are
    /// initialized the same way and may be overwritten afterwards.
    pub fn random<R: Rng + ?Sized>(mode: Mode, dims: Dims, rng: &mut R) -> Self {
        let d = dims.hidden;
        let words = Matrix::uniform(dims.vocab, dims.word, INIT_SCALE, rng);
        let tags = mode
            .uses_tags()
            .then(|| Matrix::uniform(dims.tags, dims.tag, INIT_SCALE, rng));
        let encoder = EncoderParams::build(mode, &dims, |input, rec, tag| {
            Gate::random(d, input, rec, tag, rng)
        });
        let classifier = ClassifierParams {
            w: Matrix::uniform(dims.labels, 2 * mode.repr_dim(d), INIT_SCALE, rng),
            b: Matrix::zeros(dims.labels, 1),
        };
        ModelParams {
            mode,
            dims,
            words,
            tags,
            encoder,
            classifier,
        }
    }

    /// A zero-valued buffer with the same layout, used for gradients and
    /// optimizer accumulators.
    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.mode, self.dims)
    }

    /// Cell and classifier tensors, in a fixed order.
    pub fn dense(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.encoder.tensors(&mut out);
        out.push(("classifier.W".into(), &self.classifier.w));
        out.push(("classifier.b".into(), &self.classifier.b));
        out
    }

    pub fn dense_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        self.encoder.tensors_mut(&mut out);
        out.push(("classifier.W".into(), &mut self.classifier.w));
        out.push(("classifier.b".into(), &mut self.classifier.b));
        out
    }

    /// Embedding tables.
    pub fn embeddings(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("embed.words".to_string(), &self.words)];
        if let Some(t) = &self.tags {
            out.push(("embed.tags".into(), t));
        }
        out
    }

    pub fn embeddings_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![("embed.words".to_string(), &mut self.words)];
        if let Some(t) = &mut self.tags {
            out.push(("embed.tags".into(), t));
        }
        out
    }

    /// All tensors: embeddings first, then dense ones.
    pub fn all(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.embeddings();
        out.extend(self.dense());
        out
    }

    pub fn all_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let ModelParams {
            words,
            tags,
            encoder,
            classifier,
            ..
        } = self;
        let mut out = vec![("embed.words".to_string(), words)];
        if let Some(t) = tags {
            out.push(("embed.tags".into(), t));
        }
        encoder.tensors_mut(&mut out);
        out.push(("classifier.W".into(), &mut classifier.w));
        out.push(("classifier.b".into(), &mut classifier.b));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.all().iter().map(|(_, m)| m.len()).sum()
    }

    /// `Σ θ²` over the regularized set.
    pub fn l2_sum(&self, include_embeddings: bool) -> f64 {
        let dense: f64 = self.dense().iter().map(|(_, m)| m.sum_squares()).sum();
        if include_embeddings {
            dense + self.embeddings().iter().map(|(_, m)| m.sum_squares()).sum::<f64>()
        } else {
            dense
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, m) in self.all() {
            if !m.is_finite() {
                return Err(Error::Numerics(format!("non-finite value in {name}")));
            }
        }
        Ok(())
    }
}

/// Embedding-row gradients keyed by row id. Only touched rows are stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    pub width: usize,
    pub rows: BTreeMap<usize, Vec<f64>>,
}

impl SparseRows {
    pub fn new(width: usize) -> Self {
        SparseRows {
            width,
            rows: BTreeMap::new(),
        }
    }

    pub fn row_mut(&mut self, id: usize) -> &mut [f64] {
        let width = self.width;
        self.rows.entry(id).or_insert_with(|| vec![0.0; width])
    }

    pub fn add_row(&mut self, id: usize, g: &[f64]) {
        crate::numerics::add_into(self.row_mut(id), g);
    }

    pub fn get(&self, id: usize) -> Option<&[f64]> {
        self.rows.get(&id).map(Vec::as_slice)
    }

    pub fn add_assign(&mut self, other: &SparseRows) {
        for (&id, g) in &other.rows {
            self.add_row(id, g);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in self.rows.values_mut() {
            g.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// Dense copy with `n` rows.
    pub fn to_dense(&self, n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, self.width);
        for (&id, g) in &self.rows {
            m.row_mut(id).copy_from_slice(g);
        }
        m
    }
}

/// Gradient of the objective: dense for cell and classifier tensors,
/// row-sparse for embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub dense: ModelParams,
    pub words: SparseRows,
    pub tags: SparseRows,
}

impl Gradients {
    /// The `dense.words` / `dense.tags` tables of the inner buffer are left
    /// empty; embedding gradients live in `words` / `tags`.
    pub fn zeros_for(params: &ModelParams) -> Self {
        let mut dims = params.dims;
        dims.vocab = 0;
        dims.tags = 0;
        Gradients {
            dense: ModelParams::zeros(params.mode, dims),
            words: SparseRows::new(params.dims.word),
            tags: SparseRows::new(params.dims.tag),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((_, a), (_, b)) in self.dense.dense_mut().into_iter().zip(other.dense.dense()) {
            a.axpy(1.0, b);
        }
        self.words.add_assign(&other.words);
        self.tags.add_assign(&other.tags);
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, m) in self.dense.dense_mut() {
            m.scale(alpha);
        }
        self.words.scale(alpha);
        self.tags.scale(alpha);
    }

    /// Adds `lambda · θ` for the regularized set.
    pub fn add_l2(&mut self, params: &ModelParams, lambda: f64, include_embeddings: bool) {
        if lambda == 0.0 {
            return;
        }
        for ((_, g), (_, p)) in self.dense.dense_mut().into_iter().zip(params.dense()) {
            g.axpy(lambda, p);
        }
        if include_embeddings {
            for id in 0..params.words.rows() {
                let row = params.words.row(id);
                for (g, p) in self.words.row_mut(id).iter_mut().zip(row) {
                    *g += lambda * p;
                }
            }
            if let Some(tags) = &params.tags {
                for id in 0..tags.rows() {
                    let row = tags.row(id);
                    for (g, p) in self.tags.row_mut(id).iter_mut().zip(row) {
                        *g += lambda * p;
                    }
                }
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, m) in self.dense.dense() {
            if !m.is_finite() {
                return Err(Error::Numerics(format!("non-finite gradient in {name}")));
            }
        }
        for (name, rows) in [("embed.words", &self.words), ("embed.tags", &self.tags)] {
            for (id, g) in &rows.rows {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerics(format!("non-finite gradient in {name}[{id}]")));
                }
            }
        }
        Ok(())
    }
}
