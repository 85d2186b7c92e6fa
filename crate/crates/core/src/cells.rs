//! Gated composition cells.
//!
//! The tree cells combine a left and a right child state; the sequential
//! cells used by the bidirectional baselines combine a single predecessor.
//! Both share one implementation parameterized by the number of children:
//! the recurrent input `h_in` is the concatenation of the child hidden
//! states, so `U` is `d × 2d` for trees and `d × d` for sequences.
//!
//! Tree-LSTM (single forget gate shared by both children):
//!
//! ```text
//! i, f, o = σ(W x + M t + U [hL, hR] + b)
//! u       = tanh(W x + U [hL, hR] + b)
//! c       = i ⊙ u + f ⊙ cL + f ⊙ cR
//! h       = o ⊙ tanh(c)
//! ```
//!
//! Tree-GRU (one reset gate applied to both children):
//!
//! ```text
//! r, z = σ(W x + M t + U [hL, hR] + b)
//! h̃    = tanh(W x + U [hL ⊙ r, hR ⊙ r] + b)
//! h    = z ⊙ h̃ + (1 − z) ⊙ (hL + hR)
//! ```
//!
//! The `M t` terms exist only in tag-enhanced mode. Internal tree nodes pass
//! `x = None`, which stands for the zero vector.

use crate::error::{Error, Result};
use crate::numerics::{add_into, sigmoid_scalar};
use crate::params::{Gate, GruParams, LstmParams};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(d: usize) -> Self {
        LstmState {
            h: vec![0.0; d],
            c: vec![0.0; d],
        }
    }
}

/// Activations retained by an LSTM forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache {
    x: Option<Vec<f64>>,
    t: Option<Vec<f64>>,
    h_in: Vec<f64>,
    c_sum: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub u: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruCache {
    x: Option<Vec<f64>>,
    t: Option<Vec<f64>>,
    h_in: Vec<f64>,
    h_in_reset: Vec<f64>,
    h_sum: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub candidate: Vec<f64>,
}

/// Gradients flowing out of a cell into its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    /// `None` when the forward step had no word input.
    pub x: Option<Vec<f64>>,
    pub t: Option<Vec<f64>>,
    /// One hidden-state gradient per child, left to right.
    pub h: Vec<Vec<f64>>,
    /// Memory-cell gradient, identical for every child (LSTM only; empty
    /// for GRU).
    pub c: Vec<f64>,
}

fn check_gate_inputs(
    gate: &Gate,
    tagged: bool,
    x: Option<&[f64]>,
    t: Option<&[f64]>,
    h_in: usize,
) -> Result<()> {
    if let Some(x) = x {
        if x.len() != gate.w.cols() {
            return Err(Error::Shape(format!(
                "word input has {} entries, cell expects {}",
                x.len(),
                gate.w.cols()
            )));
        }
    }
    match (t, tagged) {
        (Some(_), false) => {
            return Err(Error::Mode(
                "tag embedding supplied to a cell without tag matrices".into(),
            ))
        }
        (None, true) => {
            return Err(Error::Mode(
                "tag-enhanced cell requires a tag embedding".into(),
            ))
        }
        (Some(t), true) => {
            let want = gate.m.as_ref().map_or(0, |m| m.cols());
            if t.len() != want {
                return Err(Error::Shape(format!(
                    "tag input has {} entries, cell expects {want}",
                    t.len()
                )));
            }
        }
        (None, false) => {}
    }
    if h_in != gate.u.cols() {
        return Err(Error::Shape(format!(
            "children provide {h_in} hidden values, cell expects {}",
            gate.u.cols()
        )));
    }
    Ok(())
}

fn preact(gate: &Gate, x: Option<&[f64]>, t: Option<&[f64]>, h_in: &[f64]) -> Vec<f64> {
    let mut out = gate.b.as_slice().to_vec();
    if let Some(x) = x {
        gate.w.gemv_acc(x, &mut out);
    }
    if let (Some(m), Some(t)) = (&gate.m, t) {
        m.gemv_acc(t, &mut out);
    }
    gate.u.gemv_acc(h_in, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn gate_backward(
    gate: &Gate,
    grad: &mut Gate,
    dpre: &[f64],
    x: Option<&[f64]>,
    t: Option<&[f64]>,
    h_in: &[f64],
    dx: Option<&mut Vec<f64>>,
    dt: Option<&mut Vec<f64>>,
    dh_in: &mut [f64],
) {
    add_into(grad.b.as_mut_slice(), dpre);
    if let Some(x) = x {
        grad.w.outer_acc(dpre, x);
        if let Some(dx) = dx {
            gate.w.gemv_t_acc(dpre, dx);
        }
    }
    if let (Some(m), Some(gm), Some(t)) = (&gate.m, &mut grad.m, t) {
        gm.outer_acc(dpre, t);
        if let Some(dt) = dt {
            m.gemv_t_acc(dpre, dt);
        }
    }
    grad.u.outer_acc(dpre, h_in);
    gate.u.gemv_t_acc(dpre, dh_in);
}

fn lstm_forward(
    p: &LstmParams,
    x: Option<&[f64]>,
    t: Option<&[f64]>,
    children: &[&LstmState],
) -> Result<(LstmState, LstmCache)> {
    let d = p.i.hidden();
    for child in children {
        if child.h.len() != d || child.c.len() != d {
            return Err(Error::Shape(format!(
                "child state has size {}/{}, cell hidden size is {d}",
                child.h.len(),
                child.c.len()
            )));
        }
    }
    let h_in: Vec<f64> = children.iter().flat_map(|s| s.h.iter().copied()).collect();
    check_gate_inputs(&p.i, p.has_tags(), x, t, h_in.len())?;

    let i: Vec<f64> = preact(&p.i, x, t, &h_in).into_iter().map(sigmoid_scalar).collect();
    let f: Vec<f64> = preact(&p.f, x, t, &h_in).into_iter().map(sigmoid_scalar).collect();
    let o: Vec<f64> = preact(&p.o, x, t, &h_in).into_iter().map(sigmoid_scalar).collect();
    let u: Vec<f64> = preact(&p.u, x, None, &h_in).into_iter().map(f64::tanh).collect();

    let mut c_sum = vec![0.0; d];
    for child in children {
        add_into(&mut c_sum, &child.c);
    }
    let c: Vec<f64> = (0..d).map(|k| i[k] * u[k] + f[k] * c_sum[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();

    let cache = LstmCache {
        x: x.map(<[f64]>::to_vec),
        t: t.map(<[f64]>::to_vec),
        h_in,
        c_sum,
        i,
        f,
        o,
        u,
        tanh_c,
    };
    Ok((LstmState { h, c }, cache))
}

/// Composes two child states with the Tree-LSTM cell.
pub fn tree_lstm_compose(
    p: &LstmParams,
    x: Option<&[f64]>,
    t: Option<&[f64]>,
    left: &LstmState,
    right: &LstmState,
) -> Result<(LstmState, LstmCache)> {
    lstm_forward(p, x, t, &[left, right])
}

/// One step of a sequential LSTM.
pub fn seq_lstm_step(
    p: &LstmParams,
    x: &[f64],
    prev: &LstmState,
) -> Result<(LstmState, LstmCache)> {
    lstm_forward(p, Some(x), None, &[prev])
}

/// Reverse-mode step for either LSTM cell. `dh` and `dc` are the cotangents
/// of the output state; parameter gradients are added into `grads`.
pub fn lstm_backward(
    p: &LstmParams,
    cache: &LstmCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmParams,
) -> Result<InputGrads> {
    let d = p.i.hidden();
    if cache.i.len() != d || cache.h_in.len() != p.i.u.cols() {
        return Err(Error::State("LSTM cache does not belong to this cell".into()));
    }
    if dh.len() != d || dc.len() != d {
        return Err(Error::Shape(format!(
            "state cotangent has size {}/{}, expected {d}",
            dh.len(),
            dc.len()
        )));
    }
    let LstmCache {
        x,
        t,
        h_in,
        c_sum,
        i,
        f,
        o,
        u,
        tanh_c,
    } = cache;

    let mut dpre_i = vec![0.0; d];
    let mut dpre_f = vec![0.0; d];
    let mut dpre_o = vec![0.0; d];
    let mut dpre_u = vec![0.0; d];
    let mut dc_child = vec![0.0; d];
    for k in 0..d {
        let dc_total = dc[k] + dh[k] * o[k] * (1.0 - tanh_c[k] * tanh_c[k]);
        dpre_o[k] = dh[k] * tanh_c[k] * o[k] * (1.0 - o[k]);
        dpre_i[k] = dc_total * u[k] * i[k] * (1.0 - i[k]);
        dpre_u[k] = dc_total * i[k] * (1.0 - u[k] * u[k]);
        dpre_f[k] = dc_total * c_sum[k] * f[k] * (1.0 - f[k]);
        dc_child[k] = dc_total * f[k];
    }

    let x = x.as_deref();
    let t = t.as_deref();
    let mut dx = x.map(|x| vec![0.0; x.len()]);
    let mut dt = t.map(|t| vec![0.0; t.len()]);
    let mut dh_in = vec![0.0; h_in.len()];
    for (gate, grad, dpre, reads_tag) in [
        (&p.i, &mut grads.i, &dpre_i, true),
        (&p.f, &mut grads.f, &dpre_f, true),
        (&p.o, &mut grads.o, &dpre_o, true),
        (&p.u, &mut grads.u, &dpre_u, false),
    ] {
        let t = if reads_tag { t } else { None };
        gate_backward(gate, grad, dpre, x, t, h_in, dx.as_mut(), dt.as_mut(), &mut dh_in);
    }

    Ok(InputGrads {
        x: dx,
        t: dt,
        h: dh_in.chunks(d).map(<[f64]>::to_vec).collect(),
        c: dc_child,
    })
}

fn gru_forward(
    p: &GruParams,
    x: Option<&[f64]>,
    t: Option<&[f64]>,
    children: &[&[f64]],
) -> Result<(Vec<f64>, GruCache)> {
    let d = p.r.hidden();
    for child in children {
        if child.len() != d {
            return Err(Error::Shape(format!(
                "child state has size {}, cell hidden size is {d}",
                child.len()
            )));
        }
    }
    let h_in: Vec<f64> = children.iter().flat_map(|h| h.iter().copied()).collect();
    check_gate_inputs(&p.r, p.has_tags(), x, t, h_in.len())?;

    let r: Vec<f64> = preact(&p.r, x, t, &h_in).into_iter().map(sigmoid_scalar).collect();
    let z: Vec<f64> = preact(&p.z, x, t, &h_in).into_iter().map(sigmoid_scalar).collect();
    let h_in_reset: Vec<f64> = h_in
        .iter()
        .enumerate()
        .map(|(k, h)| h * r[k % d])
        .collect();
    let candidate: Vec<f64> = preact(&p.h, x, None, &h_in_reset)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let mut h_sum = vec![0.0; d];
    for child in children {
        add_into(&mut h_sum, child);
    }
    let h: Vec<f64> = (0..d)
        .map(|k| z[k] * candidate[k] + (1.0 - z[k]) * h_sum[k])
        .collect();

    let cache = GruCache {
        x: x.map(<[f64]>::to_vec),
        t: t.map(<[f64]>::to_vec),
        h_in,
        h_in_reset,
        h_sum,
        r,
        z,
        candidate,
    };
    Ok((h, cache))
}

/// Composes two child hidden states with the Tree-GRU cell.
pub fn tree_gru_compose(
    p: &GruParams,
    x: Option<&[f64]>,
    t: Option<&[f64]>,
    left: &[f64],
    right: &[f64],
) -> Result<(Vec<f64>, GruCache)> {
    gru_forward(p, x, t, &[left, right])
}

/// One step of a sequential GRU: `h = z ⊙ h̃ + (1 − z) ⊙ h_prev`.
pub fn seq_gru_step(p: &GruParams, x: &[f64], prev: &[f64]) -> Result<(Vec<f64>, GruCache)> {
    gru_forward(p, Some(x), None, &[prev])
}

/// Reverse-mode step for either GRU cell.
pub fn gru_backward(
    p: &GruParams,
    cache: &GruCache,
    dh: &[f64],
    grads: &mut GruParams,
) -> Result<InputGrads> {
    let d = p.r.hidden();
    if cache.r.len() != d || cache.h_in.len() != p.r.u.cols() {
        return Err(Error::State("GRU cache does not belong to this cell".into()));
    }
    if dh.len() != d {
        return Err(Error::Shape(format!(
            "state cotangent has size {}, expected {d}",
            dh.len()
        )));
    }
    let GruCache {
        x,
        t,
        h_in,
        h_in_reset,
        h_sum,
        r,
        z,
        candidate,
    } = cache;
    let x = x.as_deref();
    let t = t.as_deref();
    let mut dx = x.map(|x| vec![0.0; x.len()]);
    let mut dt = t.map(|t| vec![0.0; t.len()]);

    let mut dpre_z = vec![0.0; d];
    let mut dpre_h = vec![0.0; d];
    for k in 0..d {
        dpre_z[k] = dh[k] * (candidate[k] - h_sum[k]) * z[k] * (1.0 - z[k]);
        dpre_h[k] = dh[k] * z[k] * (1.0 - candidate[k] * candidate[k]);
    }

    let mut dh_reset = vec![0.0; h_in.len()];
    gate_backward(&p.h, &mut grads.h, &dpre_h, x, None, h_in_reset, dx.as_mut(), None, &mut dh_reset);

    let mut dpre_r = vec![0.0; d];
    let mut dh_in = vec![0.0; h_in.len()];
    for (j, (&g, &h)) in dh_reset.iter().zip(h_in).enumerate() {
        let k = j % d;
        dpre_r[k] += g * h;
        dh_in[j] = g * r[k] + dh[k] * (1.0 - z[k]);
    }
    for k in 0..d {
        dpre_r[k] *= r[k] * (1.0 - r[k]);
    }

    gate_backward(&p.r, &mut grads.r, &dpre_r, x, t, h_in, dx.as_mut(), dt.as_mut(), &mut dh_in);
    gate_backward(&p.z, &mut grads.z, &dpre_z, x, t, h_in, dx.as_mut(), dt.as_mut(), &mut dh_in);

    Ok(InputGrads {
        x: dx,
        t: dt,
        h: dh_in.chunks(d).map(<[f64]>::to_vec).collect(),
        c: Vec::new(),
    })
}
