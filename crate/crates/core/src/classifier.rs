//! Relation classifier over the concatenated argument representations and
//! the regularized training objective.

use crate::error::{Error, Result};
use crate::numerics::{self, concat, softmax};
use crate::params::{ClassifierParams, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn argmax(&self) -> usize {
        numerics::argmax(&self.probs)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

pub fn logits(r1: &[f64], r2: &[f64], cp: &ClassifierParams) -> Result<Vec<f64>> {
    let x = concat(r1, r2);
    numerics::affine(&cp.w, &x, cp.b.as_slice())
}

pub fn predict(r1: &[f64], r2: &[f64], cp: &ClassifierParams) -> Result<Distribution> {
    let probs = softmax(&logits(r1, r2, cp)?)?;
    numerics::check_finite(&probs, "class distribution")?;
    Ok(Distribution { probs })
}

pub fn cross_entropy(yhat: &Distribution, gold: usize) -> Result<f64> {
    let p = yhat.probs.get(gold).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "gold label {gold} outside {} classes",
            yhat.probs.len()
        ))
    })?;
    Ok(-p.ln())
}

/// Mean of `losses` plus `(λ/2)·‖θ‖²` over the regularized tensors.
pub fn objective(
    losses: &[f64],
    params: &ModelParams,
    lambda: f64,
    regularize_embeddings: bool,
) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::InvalidArgument("objective of an empty batch".into()));
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok(mean + 0.5 * lambda * params.l2_sum(regularize_embeddings))
}

/// Gradient of the cross-entropy with respect to the classifier parameters
/// (accumulated into `grads`) and both argument representations.
pub fn classifier_backward(
    r1: &[f64],
    r2: &[f64],
    yhat: &Distribution,
    gold: usize,
    cp: &ClassifierParams,
    grads: &mut ClassifierParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if gold >= yhat.probs.len() {
        return Err(Error::InvalidArgument(format!(
            "gold label {gold} outside {} classes",
            yhat.probs.len()
        )));
    }
    if grads.w.shape() != cp.w.shape() || yhat.probs.len() != cp.w.rows() {
        return Err(Error::Shape("classifier gradient shape mismatch".into()));
    }
    let mut dz = yhat.probs.clone();
    dz[gold] -= 1.0;
    let x = concat(r1, r2);
    let g = numerics::affine_backward(&cp.w, &x, &dz)?;
    grads.w.axpy(1.0, &g.w);
    numerics::add_into(grads.b.as_mut_slice(), &g.b);
    let (d1, d2) = numerics::concat_backward(&g.x, r1.len())?;
    Ok((d1, d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::params::{Dims, Mode};

    fn cp(w: Matrix, b: &[f64]) -> ClassifierParams {
        ClassifierParams {
            w,
            b: Matrix::from_vec(b.len(), 1, b.to_vec()).unwrap(),
        }
    }

    #[test]
    fn zero_weights_give_uniform() {
        let c = ClassifierParams::zeros(4, 6);
        let d = predict(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &c).unwrap();
        assert_eq!(d.probs, vec![0.25; 4]);
    }

    #[test]
    fn two_class_logits() {
        let c = cp(Matrix::zeros(2, 2), &[1.0, 3.0]);
        let d = predict(&[0.0], &[0.0], &c).unwrap();
        assert!((d.probs[0] - 0.11920292202211755).abs() < 1e-12);
        assert!((d.probs[1] - 0.8807970779778823).abs() < 1e-12);
        assert_eq!(d.argmax(), 1);
    }

    #[test]
    fn argument_order_matters() {
        let w = Matrix::from_rows(&[&[1.0, 0.0, -1.0, 0.5], &[0.3, -0.2, 0.7, 0.1]]).unwrap();
        let c = cp(w, &[0.0, 0.0]);
        let a = predict(&[1.0, 2.0], &[3.0, 4.0], &c).unwrap();
        let b = predict(&[3.0, 4.0], &[1.0, 2.0], &c).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn shape_mismatch() {
        let c = ClassifierParams::zeros(4, 6);
        assert!(matches!(predict(&[1.0], &[2.0], &c), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_entropy_values() {
        let d = Distribution { probs: vec![0.5, 0.5] };
        assert!((cross_entropy(&d, 0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let d = Distribution { probs: vec![0.1, 0.9] };
        assert!((cross_entropy(&d, 0).unwrap() - std::f64::consts::LN_10).abs() < 1e-9);
        assert!(matches!(cross_entropy(&d, 2), Err(Error::InvalidArgument(_))));
        let d = Distribution { probs: vec![1.0 - 1e-15, 1e-15] };
        assert!(cross_entropy(&d, 0).unwrap() < 1e-14);
    }

    #[test]
    fn objective_values() {
        let dims = Dims { word: 1, tag: 1, hidden: 1, vocab: 1, tags: 1, labels: 1 };
        let p = ModelParams::zeros(Mode::TreeLstm, dims);
        assert!(matches!(objective(&[], &p, 0.0, false), Err(Error::InvalidArgument(_))));
        assert_eq!(objective(&[1.0, 2.0, 3.0], &p, 0.0, false).unwrap(), 2.0);
        let mut p = p;
        p.classifier.b.as_mut_slice()[0] = 2.0;
        let j = objective(&[0.0], &p, 0.0001, false).unwrap();
        assert!((j - 0.0002).abs() < 1e-18);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let w = Matrix::from_rows(&[&[0.4, -0.3, 0.2], &[0.1, 0.5, -0.6], &[-0.2, 0.3, 0.9]]).unwrap();
        let c = cp(w, &[0.1, -0.2, 0.05]);
        let r1 = [0.3, -0.7];
        let r2 = [0.9];
        let gold = 2;
        let loss = |c: &ClassifierParams, r1: &[f64], r2: &[f64]| {
            cross_entropy(&predict(r1, r2, c).unwrap(), gold).unwrap()
        };
        let d = predict(&r1, &r2, &c).unwrap();
        let mut g = ClassifierParams::zeros(3, 3);
        let (d1, d2) = classifier_backward(&r1, &r2, &d, gold, &c, &mut g).unwrap();
        let h = 1e-6;
        for k in 0..9 {
            let mut p = c.clone();
            p.w.as_mut_slice()[k] += h;
            let mut m = c.clone();
            m.w.as_mut_slice()[k] -= h;
            let num = (loss(&p, &r1, &r2) - loss(&m, &r1, &r2)) / (2.0 * h);
            assert!((num - g.w.as_slice()[k]).abs() < 1e-8);
        }
        for k in 0..3 {
            let mut p = c.clone();
            p.b.as_mut_slice()[k] += h;
            let mut m = c.clone();
            m.b.as_mut_slice()[k] -= h;
            let num = (loss(&p, &r1, &r2) - loss(&m, &r1, &r2)) / (2.0 * h);
            assert!((num - g.b.as_slice()[k]).abs() < 1e-8);
        }
        let num = (loss(&c, &[r1[0] + h, r1[1]], &r2) - loss(&c, &[r1[0] - h, r1[1]], &r2)) / (2.0 * h);
        assert!((num - d1[0]).abs() < 1e-8);
        let num = (loss(&c, &r1, &[r2[0] + h]) - loss(&c, &r1, &[r2[0] - h])) / (2.0 * h);
        assert!((num - d2[0]).abs() < 1e-8);
    }

    #[test]
    fn argmax_ignores_constant_logit_shift() {
        let w = Matrix::from_rows(&[&[0.4, -0.3], &[0.1, 0.5], &[-0.2, 0.3]]).unwrap();
        let a = predict(&[1.0], &[2.0], &cp(w.clone(), &[0.0, 0.0, 0.0])).unwrap();
        let b = predict(&[1.0], &[2.0], &cp(w, &[7.0, 7.0, 7.0])).unwrap();
        assert_eq!(a.argmax(), b.argmax());
    }
}
