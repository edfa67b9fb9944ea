//! Parallel prefix scan for the first-order linear recurrence
//! `Y_t = A_t · Y_{t-1} + X_t`.
//!
//! The forward pass uses the recursive pair-doubling scheme: combine neighbouring
//! pairs, recurse on the odd positions, then patch the even positions (and an odd
//! tail element, if any). Work is linear in the length and the dependency depth is
//! logarithmic. The backward pass runs the same scan over the reversed sequence
//! with conjugated coefficients.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

type C = Complex64;

/// Batched recurrence coefficients: `a` is `batch × length`, `x` is
/// `batch × length × features`, `y_init` is `batch × features`.
#[derive(Clone, Debug)]
pub struct ScanCoeffs {
    a: ComplexTensor,
    x: ComplexTensor,
    y_init: ComplexTensor,
}

impl ScanCoeffs {
    pub fn new(a: ComplexTensor, x: ComplexTensor, y_init: ComplexTensor) -> Result<Self> {
        let mismatch = |l: &ComplexTensor, r: &ComplexTensor| Error::ShapeMismatch {
            op: "pscan",
            left: l.shape().to_vec(),
            right: r.shape().to_vec(),
        };
        if a.rank() != 2 || x.rank() != 3 || y_init.rank() != 2 {
            return Err(mismatch(&a, &x));
        }
        if a.shape()[..] != x.shape()[..2] {
            return Err(mismatch(&a, &x));
        }
        if y_init.shape()[0] != x.shape()[0] || y_init.shape()[1] != x.shape()[2] {
            return Err(mismatch(&y_init, &x));
        }
        Ok(Self { a, x, y_init })
    }

    pub fn a(&self) -> &ComplexTensor {
        &self.a
    }

    pub fn x(&self) -> &ComplexTensor {
        &self.x
    }

    pub fn y_init(&self) -> &ComplexTensor {
        &self.y_init
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.x.shape();
        (s[0], s[1], s[2])
    }
}

/// Gradients of a batched scan, shaped like the corresponding [`ScanCoeffs`] fields.
#[derive(Clone, Debug)]
pub struct ScanGrads {
    pub a: ComplexTensor,
    pub x: ComplexTensor,
    pub y_init: ComplexTensor,
}

/// In-place scan: afterwards `a[t] = ∏_{s<=t} a[s]` and `x[t]` holds the recurrence
/// value started from zero.
fn expand(a: &mut [C], x: &mut [C], d: usize) {
    let n = a.len();
    if n <= 1 {
        return;
    }
    let t = 2 * (n / 2);
    let half = t / 2;
    for k in 0..half {
        let (lo, hi) = (2 * k, 2 * k + 1);
        let coef = a[hi];
        let (head, tail) = x.split_at_mut(hi * d);
        for (yh, yl) in tail[..d].iter_mut().zip(&head[lo * d..]) {
            *yh += coef * *yl;
        }
        a[hi] = coef * a[lo];
    }

    let mut odd_a: Vec<C> = (0..half).map(|k| a[2 * k + 1]).collect();
    let mut odd_x: Vec<C> = Vec::with_capacity(half * d);
    for k in 0..half {
        let i = 2 * k + 1;
        odd_x.extend_from_slice(&x[i * d..(i + 1) * d]);
    }
    expand(&mut odd_a, &mut odd_x, d);
    for k in 0..half {
        let i = 2 * k + 1;
        a[i] = odd_a[k];
        x[i * d..(i + 1) * d].copy_from_slice(&odd_x[k * d..(k + 1) * d]);
    }

    for k in 1..half {
        let i = 2 * k;
        combine_with_previous(a, x, d, i);
    }
    if t < n {
        combine_with_previous(a, x, d, n - 1);
    }
}

#[inline]
fn combine_with_previous(a: &mut [C], x: &mut [C], d: usize, i: usize) {
    let coef = a[i];
    let (head, tail) = x.split_at_mut(i * d);
    for (yi, yp) in tail[..d].iter_mut().zip(&head[(i - 1) * d..]) {
        *yi += coef * *yp;
    }
    a[i] = coef * a[i - 1];
}

/// Single-sequence scan. `a` has length `L`, `x` is `L × d` flattened, `init` has
/// length `d`. Returns `(Y, A*)` where `A*` holds the running products.
pub(crate) fn scan_sequence(a: &[C], x: &[C], init: &[C], d: usize) -> (Vec<C>, Vec<C>) {
    debug_assert_eq!(x.len(), a.len() * d);
    debug_assert_eq!(init.len(), d);
    let mut a_star = a.to_vec();
    let mut y = x.to_vec();
    expand(&mut a_star, &mut y, d);
    if init.iter().any(|z| *z != C::new(0.0, 0.0)) {
        for (t, &p) in a_star.iter().enumerate() {
            for (yv, &iv) in y[t * d..(t + 1) * d].iter_mut().zip(init) {
                *yv += p * iv;
            }
        }
    }
    (y, a_star)
}

/// Vector-Jacobian product of [`scan_sequence`] under the convention
/// `grad = ∂L/∂Re + i ∂L/∂Im`. Returns `(grad_a, grad_x, grad_init)`.
pub(crate) fn scan_sequence_vjp(
    a: &[C],
    y: &[C],
    init: &[C],
    grad: &[C],
    d: usize,
) -> (Vec<C>, Vec<C>, Vec<C>) {
    let len = a.len();
    if len == 0 {
        return (Vec::new(), Vec::new(), vec![C::new(0.0, 0.0); d]);
    }
    // R_t = G_t + conj(A_{t+1}) R_{t+1}, evaluated as a forward scan on reversed rows.
    let mut coef = vec![C::new(0.0, 0.0); len];
    for (s, c) in coef.iter_mut().enumerate().skip(1) {
        *c = a[len - s].conj();
    }
    let mut rev = Vec::with_capacity(len * d);
    for s in 0..len {
        let t = len - 1 - s;
        rev.extend_from_slice(&grad[t * d..(t + 1) * d]);
    }
    expand(&mut coef, &mut rev, d);
    let mut gx = Vec::with_capacity(len * d);
    for t in 0..len {
        let s = len - 1 - t;
        gx.extend_from_slice(&rev[s * d..(s + 1) * d]);
    }

    let mut ga = Vec::with_capacity(len);
    for t in 0..len {
        let prev = if t == 0 { init } else { &y[(t - 1) * d..t * d] };
        let r = &gx[t * d..(t + 1) * d];
        ga.push(prev.iter().zip(r).map(|(p, g)| p.conj() * g).sum());
    }
    let a0 = a[0].conj();
    let ginit = gx[..d].iter().map(|g| a0 * g).collect();
    (ga, gx, ginit)
}

/// Batched forward scan; output is `batch × length × features`.
pub fn pscan_forward(sc: &ScanCoeffs) -> Result<ComplexTensor> {
    let (b, len, d) = sc.dims();
    let mut out = Vec::with_capacity(b * len * d);
    for i in 0..b {
        let (y, _) = scan_sequence(
            &sc.a.data()[i * len..(i + 1) * len],
            &sc.x.data()[i * len * d..(i + 1) * len * d],
            &sc.y_init.data()[i * d..(i + 1) * d],
            d,
        );
        out.extend(y);
    }
    Ok(ComplexTensor::from_parts(vec![b, len, d], out))
}

/// Batched backward scan for an upstream gradient shaped like the forward output.
pub fn pscan_backward(sc: &ScanCoeffs, grad_output: &ComplexTensor) -> Result<ScanGrads> {
    let (b, len, d) = sc.dims();
    if grad_output.shape() != sc.x.shape() {
        return Err(Error::ShapeMismatch {
            op: "pscan_backward",
            left: grad_output.shape().to_vec(),
            right: sc.x.shape().to_vec(),
        });
    }
    let (mut ga, mut gx, mut gi) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..b {
        let a = &sc.a.data()[i * len..(i + 1) * len];
        let init = &sc.y_init.data()[i * d..(i + 1) * d];
        let (y, _) = scan_sequence(a, &sc.x.data()[i * len * d..(i + 1) * len * d], init, d);
        let (a_i, x_i, init_i) = scan_sequence_vjp(
            a,
            &y,
            init,
            &grad_output.data()[i * len * d..(i + 1) * len * d],
            d,
        );
        ga.extend(a_i);
        gx.extend(x_i);
        gi.extend(init_i);
    }
    Ok(ScanGrads {
        a: ComplexTensor::from_parts(vec![b, len], ga),
        x: ComplexTensor::from_parts(vec![b, len, d], gx),
        y_init: ComplexTensor::from_parts(vec![b, d], gi),
    })
}
