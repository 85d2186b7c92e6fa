//! AdaGrad.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::params::{Gradients, ModelParams, SparseRows};

pub const EPSILON: f64 = 1e-8;

/// Per-entry squared-gradient accumulators mirroring the model layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Adagrad {
    pub lr: f64,
    pub eps: f64,
    pub accum: ModelParams,
}

fn update(theta: &mut [f64], g_acc: &mut [f64], grad: &[f64], lr: f64, eps: f64) {
    for ((t, a), &g) in theta.iter_mut().zip(g_acc.iter_mut()).zip(grad) {
        *a += g * g;
        *t -= lr * g / (a.sqrt() + eps);
    }
}

fn check_rows(name: &str, rows: &SparseRows, table: Option<&Matrix>) -> Result<()> {
    if rows.rows.is_empty() {
        return Ok(());
    }
    let table = table.ok_or_else(|| Error::Shape(format!("gradient for absent table {name}")))?;
    for (&id, g) in &rows.rows {
        if id >= table.rows() || g.len() != table.cols() {
            return Err(Error::Shape(format!(
                "{name} gradient row {id} of width {} does not fit a {}x{} table",
                g.len(),
                table.rows(),
                table.cols()
            )));
        }
    }
    Ok(())
}

impl Adagrad {
    pub fn new(params: &ModelParams, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Adagrad {
            lr,
            eps: EPSILON,
            accum: params.zeros_like(),
        })
    }

    /// Applies one update. Validation happens before any tensor is touched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
        grads.check_finite()?;
        let gd = grads.dense.dense();
        let pd = params.dense();
        let ad = self.accum.dense();
        if gd.len() != pd.len() || ad.len() != pd.len() {
            return Err(Error::Shape("gradient tensor count does not match parameters".into()));
        }
        for (((n, p), (_, g)), (_, a)) in pd.iter().zip(&gd).zip(&ad) {
            if p.shape() != g.shape() || p.shape() != a.shape() {
                return Err(Error::Shape(format!(
                    "{n}: parameter {:?}, gradient {:?}, accumulator {:?}",
                    p.shape(),
                    g.shape(),
                    a.shape()
                )));
            }
        }
        check_rows("embed.words", &grads.words, Some(&params.words))?;
        check_rows("embed.tags", &grads.tags, params.tags.as_ref())?;
        if params.words.shape() != self.accum.words.shape()
            || params.tags.as_ref().map(Matrix::shape) != self.accum.tags.as_ref().map(Matrix::shape)
        {
            return Err(Error::Shape("embedding accumulators do not match parameters".into()));
        }
        drop((gd, pd, ad));

        let (lr, eps) = (self.lr, self.eps);
        for (((_, p), (_, g)), (_, a)) in params
            .dense_mut()
            .into_iter()
            .zip(grads.dense.dense())
            .zip(self.accum.dense_mut())
        {
            update(p.as_mut_slice(), a.as_mut_slice(), g.as_slice(), lr, eps);
        }
        for (&id, g) in &grads.words.rows {
            update(params.words.row_mut(id), self.accum.words.row_mut(id), g, lr, eps);
        }
        if let (Some(p), Some(a)) = (params.tags.as_mut(), self.accum.tags.as_mut()) {
            for (&id, g) in &grads.tags.rows {
                update(p.row_mut(id), a.row_mut(id), g, lr, eps);
            }
        }
        Ok(())
    }
}
