//! Dense kernels and their vector-Jacobian companions.
//!
//! Everything is `f64`. The checked functions (`affine`, `hadamard`,
//! `softmax`, ...) validate shapes and return [`Error::Shape`]; the cells use
//! the in-place `Matrix` methods after validating shapes once at entry.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Entries drawn from U[-scale, scale].
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `out += self · x`
    pub fn gemv_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ · y`
    pub fn gemv_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (&yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += yi * w;
            }
        }
    }

    /// `self += y · xᵀ`
    pub fn outer_acc(&mut self, y: &[f64], x: &[f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (&yi, row) in y.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if yi == 0.0 {
                continue;
            }
            for (w, &xj) in row.iter_mut().zip(x) {
                *w += yi * xj;
            }
        }
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!("{what}: expected {expected}, got {got}")));
    }
    Ok(())
}

pub fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numerics(format!("{what}[{i}] is {}", values[i]))),
        None => Ok(()),
    }
}

/// `W·x + b`
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len("affine input", w.cols(), x.len())?;
    check_len("affine bias", w.rows(), b.len())?;
    let mut out = b.to_vec();
    w.gemv_acc(x, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub w: Matrix,
    pub x: Vec<f64>,
    pub b: Vec<f64>,
}

/// Pulls the cotangent `dy` of `W·x + b` back to `W`, `x` and `b`.
pub fn affine_backward(w: &Matrix, x: &[f64], dy: &[f64]) -> Result<AffineGrads> {
    check_len("affine input", w.cols(), x.len())?;
    check_len("affine cotangent", w.rows(), dy.len())?;
    let mut gw = Matrix::zeros(w.rows(), w.cols());
    gw.outer_acc(dy, x);
    let mut gx = vec![0.0; x.len()];
    w.gemv_t_acc(dy, &mut gx);
    Ok(AffineGrads {
        w: gw,
        x: gx,
        b: dy.to_vec(),
    })
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

/// Backward of sigmoid, expressed through its output `y`.
pub fn sigmoid_backward(y: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
    check_len("sigmoid cotangent", y.len(), dy.len())?;
    Ok(y.iter().zip(dy).map(|(&s, &g)| g * s * (1.0 - s)).collect())
}

pub fn tanh(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.tanh()).collect()
}

/// Backward of tanh, expressed through its output `y`.
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
    check_len("tanh cotangent", y.len(), dy.len())?;
    Ok(y.iter().zip(dy).map(|(&t, &g)| g * (1.0 - t * t)).collect())
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len("hadamard", a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn hadamard_backward(a: &[f64], b: &[f64], dy: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("hadamard", a.len(), b.len())?;
    check_len("hadamard cotangent", a.len(), dy.len())?;
    Ok((hadamard(dy, b)?, hadamard(dy, a)?))
}

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Backward of softmax through its output `y`: `y ⊙ (dy − ⟨y, dy⟩)`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
    check_len("softmax cotangent", y.len(), dy.len())?;
    let inner = dot(y, dy);
    Ok(y.iter().zip(dy).map(|(&p, &g)| p * (g - inner)).collect())
}

pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Splits the cotangent of `concat(a, b)` back into the parts for `a` and `b`.
pub fn concat_backward(dy: &[f64], left_len: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if left_len > dy.len() {
        return Err(Error::Shape(format!(
            "cannot split {} values at {left_len}",
            dy.len()
        )));
    }
    let (l, r) = dy.split_at(left_len);
    Ok((l.to_vec(), r.to_vec()))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const STEP: f64 = 1e-5;

    fn rel_err(a: f64, b: f64) -> f64 {
        let denom = a.abs().max(b.abs());
        if denom < 1e-12 {
            0.0
        } else {
            (a - b).abs() / denom
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn affine_identity_and_hand_values() {
        let w = Matrix::identity(2);
        assert_eq!(affine(&w, &[3.0, 4.0], &[0.0, 0.0]).unwrap(), vec![3.0, 4.0]);
        let w = Matrix::from_rows(&[&[1.0, 1.0]]).unwrap();
        assert_eq!(affine(&w, &[2.0, 5.0], &[1.0]).unwrap(), vec![8.0]);
    }

    #[test]
    fn affine_shape_errors() {
        let w = Matrix::zeros(2, 3);
        assert!(matches!(affine(&w, &[1.0; 2], &[0.0; 2]), Err(Error::Shape(_))));
        assert!(matches!(affine(&w, &[1.0; 3], &[0.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn affine_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Matrix::uniform(3, 4, 1.0, &mut rng);
        let x = random_vec(&mut rng, 4);
        let b = random_vec(&mut rng, 3);
        let cot = random_vec(&mut rng, 3);
        let f = |w: &Matrix, x: &[f64], b: &[f64]| dot(&affine(w, x, b).unwrap(), &cot);
        let g = affine_backward(&w, &x, &cot).unwrap();
        for k in 0..w.len() {
            let mut wp = w.clone();
            wp.as_mut_slice()[k] += STEP;
            let mut wm = w.clone();
            wm.as_mut_slice()[k] -= STEP;
            let num = (f(&wp, &x, &b) - f(&wm, &x, &b)) / (2.0 * STEP);
            assert!(rel_err(g.w.as_slice()[k], num) < 1e-7, "W[{k}]");
        }
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += STEP;
            let mut xm = x.clone();
            xm[k] -= STEP;
            let num = (f(&w, &xp, &b) - f(&w, &xm, &b)) / (2.0 * STEP);
            assert!(rel_err(g.x[k], num) < 1e-7, "x[{k}]");
        }
        assert_eq!(g.b, cot);
    }

    #[test]
    fn activations_at_zero() {
        assert_eq!(sigmoid(&[0.0]), vec![0.5]);
        assert_eq!(tanh(&[0.0]), vec![0.0]);
        assert_eq!(hadamard(&[2.0, 3.0], &[4.0, 5.0]).unwrap(), vec![8.0, 15.0]);
        assert!(matches!(hadamard(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn elementwise_backwards_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = random_vec(&mut rng, 6);
        let cot = random_vec(&mut rng, 6);
        type Kernel = fn(&[f64]) -> Vec<f64>;
        type Back = fn(&[f64], &[f64]) -> Result<Vec<f64>>;
        let softmax_ok: Kernel = |v| softmax(v).unwrap();
        let cases: [(Kernel, Back); 3] = [
            (sigmoid, sigmoid_backward),
            (tanh, tanh_backward),
            (softmax_ok, softmax_backward),
        ];
        for (fwd, back) in cases {
            let y = fwd(&v);
            let g = back(&y, &cot).unwrap();
            for k in 0..v.len() {
                let mut vp = v.clone();
                vp[k] += STEP;
                let mut vm = v.clone();
                vm[k] -= STEP;
                let num = (dot(&fwd(&vp), &cot) - dot(&fwd(&vm), &cot)) / (2.0 * STEP);
                assert!(rel_err(g[k], num) < 1e-6, "component {k}: {} vs {num}", g[k]);
            }
        }
        let other = random_vec(&mut rng, 6);
        let (da, db) = hadamard_backward(&v, &other, &cot).unwrap();
        for k in 0..v.len() {
            assert!((da[k] - cot[k] * other[k]).abs() < 1e-15);
            assert!((db[k] - cot[k] * v[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_values() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (got, want) in p.iter().zip([0.09003057, 0.24472847, 0.66524096]) {
            assert!((got - want).abs() < 1e-5);
        }
        assert!(matches!(softmax(&[]), Err(Error::Shape(_))));
        let shifted: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|v| v + 1234.5).collect();
        assert_eq!(argmax(&softmax(&shifted).unwrap()), argmax(&p));
    }

    #[test]
    fn concat_and_split() {
        assert_eq!(concat(&[1.0], &[2.0]), vec![1.0, 2.0]);
        assert_eq!(concat(&[], &[5.0]), vec![5.0]);
        let (l, r) = concat_backward(&[0.1, 0.2, 0.3], 1).unwrap();
        assert_eq!(l, vec![0.1]);
        assert_eq!(r, vec![0.2, 0.3]);
        assert!(concat_backward(&[1.0], 2).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }

    #[test]
    fn check_finite_reports_position() {
        assert!(check_finite(&[1.0, 2.0], "g").is_ok());
        let err = check_finite(&[1.0, f64::NAN], "g").unwrap_err();
        assert!(err.to_string().contains("g[1]"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_sums_to_one(v in proptest::collection::vec(-100.0f64..100.0, 1..12)) {
                let p = softmax(&v).unwrap();
                let total: f64 = p.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|&x| x > 0.0));
            }

            #[test]
            fn activations_are_monotone(mut v in proptest::collection::vec(-30.0f64..30.0, 2..16)) {
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let s = sigmoid(&v);
                let t = tanh(&v);
                for k in 1..v.len() {
                    prop_assert!(s[k] >= s[k - 1]);
                    prop_assert!(t[k] >= t[k - 1]);
                }
            }
        }
    }
}
