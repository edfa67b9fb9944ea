//! Primitive differentiable operations.
//!
//! Every operation has a forward rule and a hand-written vector-Jacobian product.
//! Gradients of real losses with respect to complex values follow the convention
//! `grad = ∂L/∂Re(z) + i ∂L/∂Im(z)`, so a linear map `y = A x` pulls back as
//! `grad_x = Aᴴ grad_y`. Operations marked "real" act on the real part of their
//! input and return an exactly real result.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gru::{self, GruWeights};
use crate::math;
use crate::scan;
use crate::tensor::{self, ComplexTensor};

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);
const I: C = C::new(0.0, 1.0);

/// One of the four entries of a 2×2 Givens block `[[c̄, −s], [s̄, c]]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GivensEntry {
    Ii,
    Ij,
    Ji,
    Jj,
}

impl GivensEntry {
    /// Entry value and its partial derivatives with respect to `(α, β, γ)`.
    pub(crate) fn eval(self, alpha: f64, beta: f64, gamma: f64) -> (C, [C; 3]) {
        let (hs, hc) = (math::sin(gamma / 2.0), math::cos(gamma / 2.0));
        match self {
            GivensEntry::Ii => {
                let ph = math::cis(-(alpha + beta) / 2.0);
                let v = ph * hc;
                (v, [-I * 0.5 * v, -I * 0.5 * v, -0.5 * ph * hs])
            }
            GivensEntry::Ij => {
                let ph = math::cis((alpha - beta) / 2.0);
                let v = -ph * hs;
                (v, [I * 0.5 * v, -I * 0.5 * v, -0.5 * ph * hc])
            }
            GivensEntry::Ji => {
                let ph = math::cis(-(alpha - beta) / 2.0);
                let v = ph * hs;
                (v, [-I * 0.5 * v, I * 0.5 * v, 0.5 * ph * hc])
            }
            GivensEntry::Jj => {
                let ph = math::cis((alpha + beta) / 2.0);
                let v = ph * hc;
                (v, [I * 0.5 * v, I * 0.5 * v, -0.5 * ph * hs])
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    MatMul,
    /// Same-shape product, or row scaling when the second operand is a vector over rows.
    Hadamard,
    Add,
    Sub,
    Scale(C),
    /// `(x, s [1]) → s · x`
    MulScalar,
    Conj,
    /// Adds a length-C vector to every row of an R×C matrix.
    AddBias,
    Sum,
    SquaredNorm,
    RealPart,
    ImagPart,
    /// real: `sin(omega · x)`
    Sin {
        omega: f64,
    },
    /// real
    Tanh,
    /// real
    Sigmoid,
    /// real
    Softplus,
    /// `e^{i · scale · Re(x)}`
    ExpI {
        scale: f64,
    },
    /// R×C → R, mean over each row.
    MeanCols,
    Transpose,
    /// real, row-wise softmax
    SoftmaxRows,
    GatherRows(Vec<usize>),
    SliceRows {
        start: usize,
        end: usize,
    },
    PadRows {
        before: usize,
        after: usize,
    },
    ConcatRows,
    FlipRows,
    StridePermute {
        m: usize,
        inverse: bool,
    },
    /// `(A [L], X [L×D], Y_init [D]) → Y [L×D]` with `Y_t = A_t Y_{t-1} + X_t`.
    Scan,
    /// `(α, β, γ) → entry` elementwise over the chain.
    Givens(GivensEntry),
    /// `(λ [N], w [K+1]) → ½g₀w₀ + Σ g_k w_k T_k(Re λ)`.
    Kpm {
        gibbs: Vec<f64>,
    },
    /// `w → Σ_{k≥1} π k² |w_k|²`
    Kpl,
    /// `(r [R×C], gain [1]) → gain · r_row / max(‖r_row‖, eps)`
    ScaleNorm {
        eps: f64,
    },
    /// `logits [C] → −log softmax(logits)[label]`
    CrossEntropy {
        label: usize,
    },
    /// real: `(X [N×D_in], W_z, W_r, W_h [D_in×D], U_z, U_r, U_h [D×D], b_z, b_r, b_h [D])
    /// → H [N×D]`, a gated recurrent layer run from a zero state.
    Gru,
    /// Doubles its input but reports a wrong gradient. Negative control for gradient checks.
    FaultInjected,
}

fn arity(op: &'static str, inputs: &[&ComplexTensor], expected: usize) -> Result<()> {
    if inputs.len() != expected {
        return Err(Error::Arity {
            op,
            expected,
            found: inputs.len(),
        });
    }
    Ok(())
}

fn mismatch(op: &'static str, a: &ComplexTensor, b: &ComplexTensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn real_map(x: &ComplexTensor, f: impl Fn(f64) -> f64) -> ComplexTensor {
    x.map(|z| C::new(f(z.re), 0.0))
}

fn with_rows(x: &ComplexTensor, rows: usize, data: Vec<C>) -> ComplexTensor {
    let mut shape = x.shape().to_vec();
    if shape.is_empty() {
        shape.push(rows);
    } else {
        shape[0] = rows;
    }
    ComplexTensor::from_parts(shape, data)
}

fn require_rows(x: &ComplexTensor) -> Result<()> {
    if x.rank() == 0 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "row operation on a scalar",
        });
    }
    Ok(())
}

/// Index map of the stride permutation: position `q·m + r` moves to `r·(n/m) + q`.
pub(crate) fn stride_target(i: usize, n: usize, m: usize) -> usize {
    let (q, r) = (i / m, i % m);
    r * (n / m) + q
}

fn permute_rows(x: &ComplexTensor, m: usize, inverse: bool) -> Result<ComplexTensor> {
    let n = x.rows();
    if m == 0 || !n.is_multiple_of(m) {
        return Err(Error::Divisibility { n, m });
    }
    let w = x.row_len();
    let mut out = vec![ZERO; x.len()];
    for i in 0..n {
        let j = stride_target(i, n, m);
        let (src, dst) = if inverse { (j, i) } else { (i, j) };
        out[dst * w..(dst + 1) * w].copy_from_slice(&x.data()[src * w..(src + 1) * w]);
    }
    Ok(ComplexTensor::from_parts(x.shape().to_vec(), out))
}

/// Chebyshev values `T_0..T_K` and derivatives at `x`.
pub(crate) fn cheb_with_derivative(k_max: usize, x: f64, t: &mut Vec<f64>, dt: &mut Vec<f64>) {
    t.clear();
    dt.clear();
    t.push(1.0);
    dt.push(0.0);
    if k_max >= 1 {
        t.push(x);
        dt.push(1.0);
    }
    for k in 2..=k_max {
        t.push(2.0 * x * t[k - 1] - t[k - 2]);
        dt.push(2.0 * t[k - 1] + 2.0 * x * dt[k - 1] - dt[k - 2]);
    }
}

type GruOperands = (Vec<f64>, [Vec<f64>; 9], usize, usize, usize);

/// Real parts of the ten `Gru` operands after shape validation: `(x, weights, n, d_in, d)`.
fn gru_operands(inputs: &[&ComplexTensor]) -> Result<GruOperands> {
    arity("gru", inputs, 10)?;
    let (n, d_in) = inputs[0].matrix_dims("gru")?;
    let d = inputs[7].len();
    for (i, t) in inputs.iter().enumerate().skip(1) {
        let want: &[usize] = match i {
            1..=3 => &[d_in, d],
            4..=6 => &[d, d],
            _ => &[d],
        };
        if t.shape() != want {
            return Err(mismatch("gru", inputs[0], t));
        }
    }
    let parts = core::array::from_fn(|k| inputs[k + 1].real_parts());
    Ok((inputs[0].real_parts(), parts, n, d_in, d))
}

fn gru_weights(p: &[Vec<f64>; 9]) -> GruWeights<'_> {
    GruWeights {
        w: [&p[0], &p[1], &p[2]],
        u: [&p[3], &p[4], &p[5]],
        b: [&p[6], &p[7], &p[8]],
    }
}

fn real_tensor(shape: &[usize], values: &[f64]) -> ComplexTensor {
    ComplexTensor::from_parts(
        shape.to_vec(),
        values.iter().map(|&v| C::new(v, 0.0)).collect(),
    )
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::Hadamard => "hadamard",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Scale(_) => "scale",
            Op::MulScalar => "mul_scalar",
            Op::Conj => "conj",
            Op::AddBias => "add_bias",
            Op::Sum => "sum",
            Op::SquaredNorm => "squared_norm",
            Op::RealPart => "real_part",
            Op::ImagPart => "imag_part",
            Op::Sin { .. } => "sin",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Softplus => "softplus",
            Op::ExpI { .. } => "exp_i",
            Op::MeanCols => "mean_cols",
            Op::Transpose => "transpose",
            Op::SoftmaxRows => "softmax_rows",
            Op::GatherRows(_) => "gather_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::PadRows { .. } => "pad_rows",
            Op::ConcatRows => "concat_rows",
            Op::FlipRows => "flip_rows",
            Op::StridePermute { .. } => "stride_permute",
            Op::Scan => "pscan",
            Op::Givens(_) => "givens",
            Op::Kpm { .. } => "kpm_eval",
            Op::Kpl => "kernel_polynomial_loss",
            Op::ScaleNorm { .. } => "scale_norm",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Gru => "gru",
            Op::FaultInjected => "fault_injected",
        }
    }

    pub fn forward(&self, inputs: &[&ComplexTensor]) -> Result<ComplexTensor> {
        let name = self.name();
        match self {
            Op::MatMul => {
                arity(name, inputs, 2)?;
                tensor::matmul(inputs[0], inputs[1])
            }
            Op::Hadamard => {
                arity(name, inputs, 2)?;
                tensor::hadamard(inputs[0], inputs[1])
            }
            Op::Add => {
                arity(name, inputs, 2)?;
                inputs[0].add(inputs[1])
            }
            Op::Sub => {
                arity(name, inputs, 2)?;
                inputs[0].sub(inputs[1])
            }
            Op::Scale(c) => {
                arity(name, inputs, 1)?;
                Ok(inputs[0].scale(*c))
            }
            Op::MulScalar => {
                arity(name, inputs, 2)?;
                if inputs[1].len() != 1 {
                    return Err(mismatch(name, inputs[0], inputs[1]));
                }
                Ok(inputs[0].scale(inputs[1].data()[0]))
            }
            Op::Conj => {
                arity(name, inputs, 1)?;
                Ok(inputs[0].conj())
            }
            Op::AddBias => {
                arity(name, inputs, 2)?;
                let (x, b) = (inputs[0], inputs[1]);
                let (_, cols) = x.matrix_dims(name)?;
                if b.rank() != 1 || b.len() != cols {
                    return Err(mismatch(name, x, b));
                }
                let mut out = x.data().to_vec();
                for row in out.chunks_mut(cols) {
                    for (o, bv) in row.iter_mut().zip(b.data()) {
                        *o += *bv;
                    }
                }
                Ok(ComplexTensor::from_parts(x.shape().to_vec(), out))
            }
            Op::Sum => {
                arity(name, inputs, 1)?;
                let s: C = inputs[0].data().iter().sum();
                Ok(ComplexTensor::from_parts(Vec::new(), vec![s]))
            }
            Op::SquaredNorm => {
                arity(name, inputs, 1)?;
                let s: f64 = inputs[0].data().iter().map(|&z| math::norm_sqr(z)).sum();
                Ok(ComplexTensor::scalar(s))
            }
            Op::RealPart => {
                arity(name, inputs, 1)?;
                Ok(real_map(inputs[0], |x| x))
            }
            Op::ImagPart => {
                arity(name, inputs, 1)?;
                Ok(inputs[0].map(|z| C::new(z.im, 0.0)))
            }
            Op::Sin { omega } => {
                arity(name, inputs, 1)?;
                let w = *omega;
                Ok(real_map(inputs[0], |x| math::sin(w * x)))
            }
            Op::Tanh => {
                arity(name, inputs, 1)?;
                Ok(real_map(inputs[0], math::tanh))
            }
            Op::Sigmoid => {
                arity(name, inputs, 1)?;
                Ok(real_map(inputs[0], math::sigmoid))
            }
            Op::Softplus => {
                arity(name, inputs, 1)?;
                Ok(real_map(inputs[0], math::softplus))
            }
            Op::ExpI { scale } => {
                arity(name, inputs, 1)?;
                let s = *scale;
                Ok(inputs[0].map(|z| math::cis(s * z.re)))
            }
            Op::MeanCols => {
                arity(name, inputs, 1)?;
                let (r, c) = inputs[0].matrix_dims(name)?;
                let data = inputs[0]
                    .data()
                    .chunks(c.max(1))
                    .take(r)
                    .map(|row| row.iter().sum::<C>() / c as f64)
                    .collect();
                Ok(ComplexTensor::from_parts(vec![r], data))
            }
            Op::Transpose => {
                arity(name, inputs, 1)?;
                inputs[0].transpose()
            }
            Op::SoftmaxRows => {
                arity(name, inputs, 1)?;
                let (_, c) = inputs[0].matrix_dims(name)?;
                let mut out = Vec::with_capacity(inputs[0].len());
                for row in inputs[0].data().chunks(c) {
                    let mx = row.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = row.iter().map(|z| math::exp(z.re - mx)).collect();
                    let s: f64 = e.iter().sum();
                    out.extend(e.iter().map(|v| C::new(v / s, 0.0)));
                }
                Ok(ComplexTensor::from_parts(inputs[0].shape().to_vec(), out))
            }
            Op::GatherRows(ids) => {
                arity(name, inputs, 1)?;
                let table = inputs[0];
                let (v, d) = table.matrix_dims(name)?;
                let mut out = Vec::with_capacity(ids.len() * d);
                for &id in ids {
                    if id >= v {
                        return Err(Error::OutOfVocab {
                            token: id,
                            vocab: v,
                        });
                    }
                    out.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
                }
                Ok(ComplexTensor::from_parts(vec![ids.len(), d], out))
            }
            Op::SliceRows { start, end } => {
                arity(name, inputs, 1)?;
                let x = inputs[0];
                if x.rank() == 0 || start > end || *end > x.rows() {
                    return Err(Error::InvalidShape {
                        shape: x.shape().to_vec(),
                        reason: "row slice out of bounds",
                    });
                }
                let w = x.row_len();
                Ok(with_rows(
                    x,
                    end - start,
                    x.data()[start * w..end * w].to_vec(),
                ))
            }
            Op::PadRows { before, after } => {
                arity(name, inputs, 1)?;
                let x = inputs[0];
                require_rows(x)?;
                let w = x.row_len();
                let mut data = vec![ZERO; before * w];
                data.extend_from_slice(x.data());
                data.extend(core::iter::repeat_n(ZERO, after * w));
                Ok(with_rows(x, x.rows() + before + after, data))
            }
            Op::ConcatRows => {
                let first = inputs.first().ok_or(Error::Arity {
                    op: name,
                    expected: 1,
                    found: 0,
                })?;
                let mut rows = 0;
                let mut data = Vec::new();
                for x in inputs {
                    if x.rank() == 0 || x.shape()[1..] != first.shape()[1..] {
                        return Err(mismatch(name, first, x));
                    }
                    rows += x.rows();
                    data.extend_from_slice(x.data());
                }
                Ok(with_rows(first, rows, data))
            }
            Op::FlipRows => {
                arity(name, inputs, 1)?;
                let x = inputs[0];
                require_rows(x)?;
                let w = x.row_len().max(1);
                let mut data = Vec::with_capacity(x.len());
                for row in x.data().chunks(w).rev() {
                    data.extend_from_slice(row);
                }
                Ok(ComplexTensor::from_parts(x.shape().to_vec(), data))
            }
            Op::StridePermute { m, inverse } => {
                arity(name, inputs, 1)?;
                require_rows(inputs[0])?;
                permute_rows(inputs[0], *m, *inverse)
            }
            Op::Scan => {
                arity(name, inputs, 3)?;
                let (a, x, init) = (inputs[0], inputs[1], inputs[2]);
                let (len, d) = x.matrix_dims(name)?;
                if a.rank() != 1 || a.len() != len {
                    return Err(mismatch(name, a, x));
                }
                if init.rank() != 1 || init.len() != d {
                    return Err(mismatch(name, init, x));
                }
                let (y, _) = scan::scan_sequence(a.data(), x.data(), init.data(), d);
                Ok(ComplexTensor::from_parts(vec![len, d], y))
            }
            Op::Givens(entry) => {
                arity(name, inputs, 3)?;
                let (a, b, g) = (inputs[0], inputs[1], inputs[2]);
                if a.shape() != b.shape() {
                    return Err(mismatch(name, a, b));
                }
                if a.shape() != g.shape() {
                    return Err(mismatch(name, a, g));
                }
                let data = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .zip(g.data())
                    .map(|((a, b), g)| entry.eval(a.re, b.re, g.re).0)
                    .collect();
                Ok(ComplexTensor::from_parts(a.shape().to_vec(), data))
            }
            Op::Kpm { gibbs } => {
                arity(name, inputs, 2)?;
                let (lam, w) = (inputs[0], inputs[1]);
                if w.rank() != 1 || w.len() != gibbs.len() || gibbs.is_empty() {
                    return Err(Error::LengthMismatch {
                        what: "chebyshev coefficients",
                        expected: gibbs.len(),
                        found: w.len(),
                    });
                }
                let k_max = gibbs.len() - 1;
                let (mut t, mut dt) = (Vec::new(), Vec::new());
                let data = lam
                    .data()
                    .iter()
                    .map(|z| {
                        cheb_with_derivative(k_max, z.re, &mut t, &mut dt);
                        let mut acc = 0.5 * gibbs[0] * w.data()[0];
                        for k in 1..=k_max {
                            acc += gibbs[k] * t[k] * w.data()[k];
                        }
                        acc
                    })
                    .collect();
                Ok(ComplexTensor::from_parts(lam.shape().to_vec(), data))
            }
            Op::Kpl => {
                arity(name, inputs, 1)?;
                let s: f64 = inputs[0]
                    .data()
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, &w)| math::PI * (k * k) as f64 * math::norm_sqr(w))
                    .sum();
                Ok(ComplexTensor::scalar(s))
            }
            Op::ScaleNorm { eps } => {
                arity(name, inputs, 2)?;
                let (r, gain) = (inputs[0], inputs[1]);
                if gain.len() != 1 {
                    return Err(mismatch(name, r, gain));
                }
                let g = gain.data()[0];
                let w = r.row_len().max(1);
                let mut out = Vec::with_capacity(r.len());
                for row in r.data().chunks(w) {
                    let n = math::sqrt(row.iter().map(|&z| math::norm_sqr(z)).sum());
                    let scale = g / n.max(*eps);
                    out.extend(row.iter().map(|&z| z * scale));
                }
                Ok(ComplexTensor::from_parts(r.shape().to_vec(), out))
            }
            Op::CrossEntropy { label } => {
                arity(name, inputs, 1)?;
                let logits = inputs[0];
                if *label >= logits.len() {
                    return Err(Error::LabelOutOfRange {
                        label: *label,
                        classes: logits.len(),
                    });
                }
                let mx = logits
                    .data()
                    .iter()
                    .map(|z| z.re)
                    .fold(f64::NEG_INFINITY, f64::max);
                let lse = mx
                    + math::log(
                        logits
                            .data()
                            .iter()
                            .map(|z| math::exp(z.re - mx))
                            .sum::<f64>(),
                    );
                Ok(ComplexTensor::scalar(lse - logits.data()[*label].re))
            }
            Op::Gru => {
                let (x, parts, n, d_in, d) = gru_operands(inputs)?;
                let tr = gru::forward(&x, &gru_weights(&parts), n, d_in, d);
                Ok(real_tensor(&[n, d], &tr.h[d..]))
            }
            Op::FaultInjected => {
                arity(name, inputs, 1)?;
                Ok(inputs[0].scale(C::new(2.0, 0.0)))
            }
        }
    }

    /// Gradients with respect to each input, given the forward output and upstream gradient.
    pub(crate) fn vjp(
        &self,
        inputs: &[&ComplexTensor],
        output: &ComplexTensor,
        grad: &ComplexTensor,
    ) -> Result<Vec<ComplexTensor>> {
        let g = grad;
        Ok(match self {
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                vec![tensor::matmul_conj_b(g, b)?, tensor::matmul_conj_a(a, g)?]
            }
            Op::Hadamard => {
                let (a, b) = (inputs[0], inputs[1]);
                if a.shape() == b.shape() {
                    vec![
                        tensor::hadamard(g, &b.conj())?,
                        tensor::hadamard(g, &a.conj())?,
                    ]
                } else {
                    let ga = tensor::hadamard(g, &b.conj())?;
                    let w = a.row_len();
                    let gb = a
                        .data()
                        .chunks(w)
                        .zip(g.data().chunks(w))
                        .map(|(ar, gr)| ar.iter().zip(gr).map(|(x, y)| x.conj() * y).sum())
                        .collect();
                    vec![ga, ComplexTensor::from_parts(b.shape().to_vec(), gb)]
                }
            }
            Op::Add => vec![g.clone(), g.clone()],
            Op::Sub => vec![g.clone(), g.scale(C::new(-1.0, 0.0))],
            Op::Scale(c) => vec![g.scale(c.conj())],
            Op::MulScalar => {
                let (x, s) = (inputs[0], inputs[1]);
                let gs: C = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                vec![
                    g.scale(s.data()[0].conj()),
                    ComplexTensor::from_parts(s.shape().to_vec(), vec![gs]),
                ]
            }
            Op::Conj => vec![g.conj()],
            Op::AddBias => {
                let cols = inputs[1].len();
                let mut gb = vec![ZERO; cols];
                for row in g.data().chunks(cols) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += *v;
                    }
                }
                vec![g.clone(), ComplexTensor::from_parts(vec![cols], gb)]
            }
            Op::Sum => vec![ComplexTensor::filled(inputs[0].shape(), g.data()[0])],
            Op::SquaredNorm => {
                let s = 2.0 * g.data()[0].re;
                vec![inputs[0].scale(C::new(s, 0.0))]
            }
            Op::RealPart => vec![real_map(g, |x| x)],
            Op::ImagPart => vec![g.map(|z| C::new(0.0, z.re))],
            Op::Sin { omega } => {
                let w = *omega;
                vec![zip_real(inputs[0], g, |x, gr| w * math::cos(w * x) * gr)]
            }
            Op::Tanh => vec![zip_real(output, g, |y, gr| (1.0 - y * y) * gr)],
            Op::Sigmoid => vec![zip_real(output, g, |y, gr| y * (1.0 - y) * gr)],
            Op::Softplus => vec![zip_real(inputs[0], g, |x, gr| math::sigmoid(x) * gr)],
            Op::ExpI { scale } => {
                let s = *scale;
                let data = output
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&o, &gv)| C::new((gv.conj() * I * s * o).re, 0.0))
                    .collect();
                vec![ComplexTensor::from_parts(output.shape().to_vec(), data)]
            }
            Op::MeanCols => {
                let (r, c) = inputs[0].matrix_dims("mean_cols")?;
                let mut data = Vec::with_capacity(r * c);
                for gv in g.data() {
                    data.extend(core::iter::repeat_n(*gv / c as f64, c));
                }
                vec![ComplexTensor::from_parts(vec![r, c], data)]
            }
            Op::Transpose => vec![g.transpose()?],
            Op::SoftmaxRows => {
                let c = output.row_len();
                let mut data = Vec::with_capacity(output.len());
                for (srow, grow) in output.data().chunks(c).zip(g.data().chunks(c)) {
                    let dot: f64 = srow.iter().zip(grow).map(|(s, g)| s.re * g.re).sum();
                    data.extend(
                        srow.iter()
                            .zip(grow)
                            .map(|(s, g)| C::new(s.re * (g.re - dot), 0.0)),
                    );
                }
                vec![ComplexTensor::from_parts(output.shape().to_vec(), data)]
            }
            Op::GatherRows(ids) => {
                let d = inputs[0].row_len();
                let mut gt = ComplexTensor::zeros(inputs[0].shape());
                for (row, &id) in ids.iter().enumerate() {
                    let dst = &mut gt.data_mut()[id * d..(id + 1) * d];
                    for (o, v) in dst.iter_mut().zip(&g.data()[row * d..(row + 1) * d]) {
                        *o += *v;
                    }
                }
                vec![gt]
            }
            Op::SliceRows { start, end } => {
                let x = inputs[0];
                let w = x.row_len();
                let mut data = vec![ZERO; x.len()];
                data[start * w..end * w].copy_from_slice(g.data());
                vec![ComplexTensor::from_parts(x.shape().to_vec(), data)]
            }
            Op::PadRows { before, .. } => {
                let x = inputs[0];
                let w = x.row_len();
                let data = g.data()[before * w..(before + x.rows()) * w].to_vec();
                vec![ComplexTensor::from_parts(x.shape().to_vec(), data)]
            }
            Op::ConcatRows => {
                let mut offset = 0;
                inputs
                    .iter()
                    .map(|x| {
                        let part = g.data()[offset..offset + x.len()].to_vec();
                        offset += x.len();
                        ComplexTensor::from_parts(x.shape().to_vec(), part)
                    })
                    .collect()
            }
            Op::FlipRows => vec![Op::FlipRows.forward(&[g])?],
            Op::StridePermute { m, inverse } => vec![permute_rows(g, *m, !*inverse)?],
            Op::Scan => {
                let (a, init) = (inputs[0], inputs[2]);
                let d = init.len();
                let (ga, gx, gi) =
                    scan::scan_sequence_vjp(a.data(), output.data(), init.data(), g.data(), d);
                vec![
                    ComplexTensor::from_parts(a.shape().to_vec(), ga),
                    ComplexTensor::from_parts(inputs[1].shape().to_vec(), gx),
                    ComplexTensor::from_parts(init.shape().to_vec(), gi),
                ]
            }
            Op::Givens(entry) => {
                let n = inputs[0].len();
                let mut grads = [vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]];
                for i in 0..n {
                    let (_, partials) = entry.eval(
                        inputs[0].data()[i].re,
                        inputs[1].data()[i].re,
                        inputs[2].data()[i].re,
                    );
                    let gv = g.data()[i].conj();
                    for (k, p) in partials.iter().enumerate() {
                        grads[k][i] = C::new((gv * p).re, 0.0);
                    }
                }
                let shape = inputs[0].shape().to_vec();
                let [ga, gb, gg] = grads;
                vec![
                    ComplexTensor::from_parts(shape.clone(), ga),
                    ComplexTensor::from_parts(shape.clone(), gb),
                    ComplexTensor::from_parts(shape, gg),
                ]
            }
            Op::Kpm { gibbs } => {
                let (lam, w) = (inputs[0], inputs[1]);
                let k_max = gibbs.len() - 1;
                let (mut t, mut dt) = (Vec::new(), Vec::new());
                let mut gl = Vec::with_capacity(lam.len());
                let mut gw = vec![ZERO; k_max + 1];
                for (z, gv) in lam.data().iter().zip(g.data()) {
                    cheb_with_derivative(k_max, z.re, &mut t, &mut dt);
                    let mut dp = ZERO;
                    for k in 1..=k_max {
                        dp += gibbs[k] * dt[k] * w.data()[k];
                    }
                    gl.push(C::new((gv.conj() * dp).re, 0.0));
                    gw[0] += 0.5 * gibbs[0] * gv;
                    for k in 1..=k_max {
                        gw[k] += gibbs[k] * t[k] * gv;
                    }
                }
                vec![
                    ComplexTensor::from_parts(lam.shape().to_vec(), gl),
                    ComplexTensor::from_parts(w.shape().to_vec(), gw),
                ]
            }
            Op::Kpl => {
                let s = g.data()[0].re;
                let data = inputs[0]
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| w * (2.0 * math::PI * (k * k) as f64 * s))
                    .collect();
                vec![ComplexTensor::from_parts(inputs[0].shape().to_vec(), data)]
            }
            Op::ScaleNorm { eps } => {
                let (r, gain) = (inputs[0], inputs[1]);
                let gm = gain.data()[0];
                let w = r.row_len().max(1);
                let mut gr = Vec::with_capacity(r.len());
                let mut ggain = ZERO;
                for (row, grow) in r.data().chunks(w).zip(g.data().chunks(w)) {
                    let n = math::sqrt(row.iter().map(|&z| math::norm_sqr(z)).sum());
                    if n > *eps {
                        let proj: f64 = row
                            .iter()
                            .zip(grow)
                            .map(|(&x, &gv)| (gv.conj() * gm * x).re)
                            .sum();
                        let n3 = n * n * n;
                        gr.extend(
                            row.iter()
                                .zip(grow)
                                .map(|(&x, &gv)| gm.conj() * gv / n - x * (proj / n3)),
                        );
                        ggain += row
                            .iter()
                            .zip(grow)
                            .map(|(&x, &gv)| (x / n).conj() * gv)
                            .sum::<C>();
                    } else {
                        gr.extend(grow.iter().map(|&gv| gm.conj() * gv / *eps));
                        ggain += row
                            .iter()
                            .zip(grow)
                            .map(|(&x, &gv)| (x / *eps).conj() * gv)
                            .sum::<C>();
                    }
                }
                vec![
                    ComplexTensor::from_parts(r.shape().to_vec(), gr),
                    ComplexTensor::from_parts(gain.shape().to_vec(), vec![ggain]),
                ]
            }
            Op::CrossEntropy { label } => {
                let logits = inputs[0];
                let s = g.data()[0].re;
                let mx = logits
                    .data()
                    .iter()
                    .map(|z| z.re)
                    .fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.data().iter().map(|z| math::exp(z.re - mx)).collect();
                let total: f64 = e.iter().sum();
                let data = e
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        let onehot = if k == *label { 1.0 } else { 0.0 };
                        C::new((v / total - onehot) * s, 0.0)
                    })
                    .collect();
                vec![ComplexTensor::from_parts(logits.shape().to_vec(), data)]
            }
            Op::Gru => {
                let (x, parts, n, d_in, d) = gru_operands(inputs)?;
                let p = gru_weights(&parts);
                let tr = gru::forward(&x, &p, n, d_in, d);
                let gr = gru::backward(&tr, &x, &p, &g.real_parts(), n, d_in, d);
                let mut out = vec![real_tensor(inputs[0].shape(), &gr.x)];
                for (k, v) in gr.w.iter().chain(&gr.u).chain(&gr.b).enumerate() {
                    out.push(real_tensor(inputs[k + 1].shape(), v));
                }
                out
            }
            Op::FaultInjected => vec![g.scale(C::new(3.0, 0.0))],
        })
    }
}

fn zip_real(x: &ComplexTensor, g: &ComplexTensor, f: impl Fn(f64, f64) -> f64) -> ComplexTensor {
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(a, b)| C::new(f(a.re, b.re), 0.0))
        .collect();
    ComplexTensor::from_parts(x.shape().to_vec(), data)
}
