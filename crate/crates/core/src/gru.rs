//! Fused gated recurrent layer over real signals, with its reverse pass.
//!
//! Per step, with gates in the order `z`, `r`, candidate:
//! `z = σ(x W_z + b_z + h U_z)`, `r = σ(x W_r + b_r + h U_r)`,
//! `c = tanh(x W_h + b_h + (r ⊙ h) U_h)`, `h ← h + z ⊙ (c − h)`, starting from `h = 0`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Row-major weights: `w` are `d_in × d`, `u` are `d × d`, `b` have length `d`.
pub(crate) struct GruWeights<'a> {
    pub w: [&'a [f64]; 3],
    pub u: [&'a [f64]; 3],
    pub b: [&'a [f64]; 3],
}

pub(crate) struct GruGrads {
    pub x: Vec<f64>,
    pub w: [Vec<f64>; 3],
    pub u: [Vec<f64>; 3],
    pub b: [Vec<f64>; 3],
}

/// States `h_0..h_n` (`h_0 = 0`) and the gate activations of every step.
pub(crate) struct GruTrace {
    pub h: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
}

/// `out += v · m` for `m` with `v.len()` rows of length `m.len() / v.len()`.
fn vec_mat_acc(out: &mut [f64], v: &[f64], m: &[f64]) {
    let cols = m.len() / v.len().max(1);
    let out = &mut out[..cols];
    for (&vi, row) in v.iter().zip(m.chunks_exact(cols)) {
        if vi != 0.0 {
            for (o, &mv) in out.iter_mut().zip(row) {
                *o += vi * mv;
            }
        }
    }
}

/// `out += g · mᵀ` for `m` with `out.len()` rows of length `g.len()`.
fn vec_mat_t_acc(out: &mut [f64], g: &[f64], m: &[f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(g.len())) {
        *o += row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `m += vᵀ g`.
fn outer_acc(m: &mut [f64], v: &[f64], g: &[f64]) {
    for (&vi, row) in v.iter().zip(m.chunks_exact_mut(g.len())) {
        if vi != 0.0 {
            for (o, &gv) in row.iter_mut().zip(g) {
                *o += vi * gv;
            }
        }
    }
}

fn input_projections(x: &[f64], p: &GruWeights, n: usize, d_in: usize, d: usize) -> [Vec<f64>; 3] {
    core::array::from_fn(|k| {
        let mut out = Vec::with_capacity(n * d);
        for t in 0..n {
            out.extend_from_slice(p.b[k]);
            vec_mat_acc(&mut out[t * d..], &x[t * d_in..(t + 1) * d_in], p.w[k]);
        }
        out
    })
}

pub(crate) fn forward(x: &[f64], p: &GruWeights, n: usize, d_in: usize, d: usize) -> GruTrace {
    let proj = input_projections(x, p, n, d_in, d);
    let mut tr = GruTrace {
        h: vec![0.0; (n + 1) * d],
        z: vec![0.0; n * d],
        r: vec![0.0; n * d],
        c: vec![0.0; n * d],
    };
    let mut rh = vec![0.0; d];
    for t in 0..n {
        let s = t * d..(t + 1) * d;
        let (past, next) = tr.h.split_at_mut((t + 1) * d);
        let hp = &past[t * d..];
        let z = &mut tr.z[s.clone()];
        z.copy_from_slice(&proj[0][s.clone()]);
        vec_mat_acc(z, hp, p.u[0]);
        z.iter_mut().for_each(|v| *v = math::sigmoid(*v));
        let r = &mut tr.r[s.clone()];
        r.copy_from_slice(&proj[1][s.clone()]);
        vec_mat_acc(r, hp, p.u[1]);
        r.iter_mut().for_each(|v| *v = math::sigmoid(*v));
        for ((o, &a), &b) in rh.iter_mut().zip(r.iter()).zip(hp) {
            *o = a * b;
        }
        let c = &mut tr.c[s.clone()];
        c.copy_from_slice(&proj[2][s]);
        vec_mat_acc(c, &rh, p.u[2]);
        c.iter_mut().for_each(|v| *v = math::tanh(*v));
        for (i, h) in next[..d].iter_mut().enumerate() {
            *h = hp[i] + z[i] * (c[i] - hp[i]);
        }
    }
    tr
}

/// Reverse pass given `grad_h`, the gradient with respect to `h_1..h_n`.
pub(crate) fn backward(
    tr: &GruTrace,
    x: &[f64],
    p: &GruWeights,
    grad_h: &[f64],
    n: usize,
    d_in: usize,
    d: usize,
) -> GruGrads {
    let mut pre: [Vec<f64>; 3] = core::array::from_fn(|_| vec![0.0; n * d]);
    let mut u: [Vec<f64>; 3] = core::array::from_fn(|_| vec![0.0; d * d]);
    let mut carry = vec![0.0; d];
    let mut dh_prev = vec![0.0; d];
    let mut drh = vec![0.0; d];
    let mut rh = vec![0.0; d];
    for t in (0..n).rev() {
        let s = t * d..(t + 1) * d;
        let hp = &tr.h[t * d..(t + 1) * d];
        let (z, r, c) = (&tr.z[s.clone()], &tr.r[s.clone()], &tr.c[s.clone()]);
        for i in 0..d {
            let dh = grad_h[t * d + i] + carry[i];
            dh_prev[i] = dh * (1.0 - z[i]);
            pre[0][t * d + i] = dh * (c[i] - hp[i]) * z[i] * (1.0 - z[i]);
            pre[2][t * d + i] = dh * z[i] * (1.0 - c[i] * c[i]);
            rh[i] = r[i] * hp[i];
        }
        let dah = &pre[2][s.clone()];
        drh.iter_mut().for_each(|v| *v = 0.0);
        vec_mat_t_acc(&mut drh, dah, p.u[2]);
        outer_acc(&mut u[2], &rh, dah);
        for i in 0..d {
            dh_prev[i] += drh[i] * r[i];
            pre[1][t * d + i] = drh[i] * hp[i] * r[i] * (1.0 - r[i]);
        }
        for k in 0..2 {
            let da = &pre[k][s.clone()];
            vec_mat_t_acc(&mut dh_prev, da, p.u[k]);
            outer_acc(&mut u[k], hp, da);
        }
        core::mem::swap(&mut carry, &mut dh_prev);
    }
    let mut gx = vec![0.0; n * d_in];
    let mut w: [Vec<f64>; 3] = core::array::from_fn(|_| vec![0.0; d_in * d]);
    let mut b: [Vec<f64>; 3] = core::array::from_fn(|_| vec![0.0; d]);
    for k in 0..3 {
        for t in 0..n {
            let da = &pre[k][t * d..(t + 1) * d];
            let xt = &x[t * d_in..(t + 1) * d_in];
            vec_mat_t_acc(&mut gx[t * d_in..(t + 1) * d_in], da, p.w[k]);
            outer_acc(&mut w[k], xt, da);
            b[k].iter_mut().zip(da).for_each(|(o, v)| *o += v);
        }
    }
    GruGrads { x: gx, w, u, b }
}
