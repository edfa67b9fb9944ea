//! The 1-DHHP unitary `Φ = D · H_l · H_u · P` built from chained Givens rotations.
//!
//! Both Hessenberg factors are applied with a linear scan in `O(N)` per column, so
//! the whole transform costs `O(N)` operations per feature instead of the `O(N²)`
//! of a dense multiply.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::{Eager, Graph, Tape};
use crate::math;
use crate::ops::{stride_target, GivensEntry, Op};
use crate::rng::Rng;
use crate::tensor::{self, ComplexTensor};

type C = Complex64;

/// Largest size accepted by [`dhhp_dense_matrix`].
pub const DENSE_MAX: usize = 512;

/// Entries of the 2×2 blocks of a Givens chain, one value per block.
#[derive(Clone, Debug, PartialEq)]
pub struct GivensCoeffs<T> {
    pub ii: T,
    pub ij: T,
    pub ji: T,
    pub jj: T,
}

/// Angles of a Givens chain together with the block entries they generate.
#[derive(Clone, Debug, PartialEq)]
pub struct GivensChain {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    coeffs: GivensCoeffs<ComplexTensor>,
}

impl GivensChain {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn angles(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.alpha, &self.beta, &self.gamma)
    }

    pub fn coeffs(&self) -> &GivensCoeffs<ComplexTensor> {
        &self.coeffs
    }

    /// The 2×2 block `[[ii, ij], [ji, jj]]` at position `k`.
    pub fn block(&self, k: usize) -> [[C; 2]; 2] {
        let c = &self.coeffs;
        [
            [c.ii.data()[k], c.ij.data()[k]],
            [c.ji.data()[k], c.jj.data()[k]],
        ]
    }
}

pub fn givens_coeffs(alpha: &[f64], beta: &[f64], gamma: &[f64]) -> Result<GivensChain> {
    for (what, v) in [("beta", beta), ("gamma", gamma)] {
        if v.len() != alpha.len() {
            return Err(Error::LengthMismatch {
                what,
                expected: alpha.len(),
                found: v.len(),
            });
        }
    }
    let entry = |e: GivensEntry| {
        let data = (0..alpha.len())
            .map(|k| e.eval(alpha[k], beta[k], gamma[k]).0)
            .collect();
        ComplexTensor::from_parts(vec![alpha.len()], data)
    };
    Ok(GivensChain {
        alpha: alpha.to_vec(),
        beta: beta.to_vec(),
        gamma: gamma.to_vec(),
        coeffs: GivensCoeffs {
            ii: entry(GivensEntry::Ii),
            ij: entry(GivensEntry::Ij),
            ji: entry(GivensEntry::Ji),
            jj: entry(GivensEntry::Jj),
        },
    })
}

/// Entries of the conjugate-transposed blocks: the diagonal entries swap and the
/// off-diagonal entries change sign.
pub fn conj_transpose_coeffs(g: &GivensChain) -> GivensCoeffs<ComplexTensor> {
    conj_transpose_with(&mut Eager, &g.coeffs).expect("negation cannot fail")
}

fn conj_transpose_with<G: Graph>(
    g: &mut G,
    c: &GivensCoeffs<G::Var>,
) -> Result<GivensCoeffs<G::Var>> {
    let minus = C::new(-1.0, 0.0);
    Ok(GivensCoeffs {
        ii: c.jj.clone(),
        ij: g.scale(&c.ij, minus)?,
        ji: g.scale(&c.ji, minus)?,
        jj: c.ii.clone(),
    })
}

fn check_rows(coeffs_len: usize, x: &ComplexTensor) -> Result<()> {
    if x.rank() == 0 || x.rows() != coeffs_len + 1 {
        return Err(Error::LengthMismatch {
            what: "signal length",
            expected: coeffs_len + 1,
            found: if x.rank() == 0 { 0 } else { x.rows() },
        });
    }
    Ok(())
}

fn prepend<G: Graph>(g: &mut G, head: f64, v: &G::Var) -> Result<G::Var> {
    let h = g.constant(ComplexTensor::from_parts(vec![1], vec![C::new(head, 0.0)]));
    g.apply(Op::ConcatRows, &[&h, v])
}

/// `H_u x` for `H_u = G_0 G_1 ⋯ G_{N−2}`: the last block acts first, so the
/// recurrence runs from the bottom row up and is evaluated as a scan on the
/// flipped signal.
pub fn hessenberg_upper<G: Graph>(
    g: &mut G,
    c: &GivensCoeffs<G::Var>,
    x: &G::Var,
) -> Result<G::Var> {
    let blocks = g.value(&c.ii).len();
    check_rows(blocks, g.value(x))?;
    if blocks == 0 {
        return Ok(x.clone());
    }
    let n = blocks + 1;
    let xr = g.unary(Op::FlipRows, x)?;
    let ii_r = g.unary(Op::FlipRows, &c.ii)?;
    let ij_r = g.unary(Op::FlipRows, &c.ij)?;
    let a = prepend(g, 0.0, &ij_r)?;
    let w = prepend(g, 1.0, &ii_r)?;
    let xs = g.hadamard(&xr, &w)?;
    let init = g.constant(ComplexTensor::zeros(&[g.value(x).row_len()]));
    let carry_r = g.apply(Op::Scan, &[&a, &xs, &init])?;
    let carry = g.unary(Op::FlipRows, &carry_r)?;

    let head = g.unary(Op::SliceRows { start: 0, end: 1 }, &carry)?;
    let x_top = g.unary(
        Op::SliceRows {
            start: 0,
            end: n - 1,
        },
        x,
    )?;
    let c_low = g.unary(Op::SliceRows { start: 1, end: n }, &carry)?;
    let t1 = g.hadamard(&x_top, &c.ji)?;
    let t2 = g.hadamard(&c_low, &c.jj)?;
    let tail = g.add(&t1, &t2)?;
    g.apply(Op::ConcatRows, &[&head, &tail])
}

/// `H_l x` for `H_l = G_{N−2} ⋯ G_1 G_0`: the first block acts first and the
/// recurrence runs top down.
pub fn hessenberg_lower<G: Graph>(
    g: &mut G,
    c: &GivensCoeffs<G::Var>,
    x: &G::Var,
) -> Result<G::Var> {
    let blocks = g.value(&c.ii).len();
    check_rows(blocks, g.value(x))?;
    if blocks == 0 {
        return Ok(x.clone());
    }
    let n = blocks + 1;
    let a = prepend(g, 0.0, &c.ji)?;
    let w = prepend(g, 1.0, &c.jj)?;
    let xs = g.hadamard(x, &w)?;
    let init = g.constant(ComplexTensor::zeros(&[g.value(x).row_len()]));
    let carry = g.apply(Op::Scan, &[&a, &xs, &init])?;

    let c_top = g.unary(
        Op::SliceRows {
            start: 0,
            end: n - 1,
        },
        &carry,
    )?;
    let x_low = g.unary(Op::SliceRows { start: 1, end: n }, x)?;
    let t1 = g.hadamard(&c_top, &c.ii)?;
    let t2 = g.hadamard(&x_low, &c.ij)?;
    let body = g.add(&t1, &t2)?;
    let last = g.unary(
        Op::SliceRows {
            start: n - 1,
            end: n,
        },
        &carry,
    )?;
    g.apply(Op::ConcatRows, &[&body, &last])
}

fn as_matrix(x: &ComplexTensor) -> Result<ComplexTensor> {
    match x.rank() {
        1 => x.reshape(&[x.len(), 1]),
        2 => Ok(x.clone()),
        _ => Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "expected a vector or a matrix",
        }),
    }
}

pub fn apply_hessenberg_upper(g: &GivensChain, x: &ComplexTensor) -> Result<ComplexTensor> {
    hessenberg_upper(&mut Eager, &g.coeffs, &as_matrix(x)?)?.reshape(x.shape())
}

pub fn apply_hessenberg_lower(g: &GivensChain, x: &ComplexTensor) -> Result<ComplexTensor> {
    hessenberg_lower(&mut Eager, &g.coeffs, &as_matrix(x)?)?.reshape(x.shape())
}

/// Stride permutation of rows: index `q·m + r` moves to `r·(N/m) + q`.
pub fn stride_permute(x: &ComplexTensor, m: usize, inverse: bool) -> Result<ComplexTensor> {
    Op::StridePermute { m, inverse }.forward(&[x])
}

/// Givens angles of one Hessenberg factor, each a real vector of length `N − 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainAngles<T = ComplexTensor> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

impl<T> ChainAngles<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ChainAngles<U> {
        ChainAngles {
            alpha: f(&self.alpha),
            beta: f(&self.beta),
            gamma: f(&self.gamma),
        }
    }

    fn coeffs<G: Graph<Var = T>>(&self, g: &mut G) -> Result<GivensCoeffs<T>> {
        let mut entry = |e| g.apply(Op::Givens(e), &[&self.alpha, &self.beta, &self.gamma]);
        Ok(GivensCoeffs {
            ii: entry(GivensEntry::Ii)?,
            ij: entry(GivensEntry::Ij)?,
            ji: entry(GivensEntry::Ji)?,
            jj: entry(GivensEntry::Jj)?,
        })
    }
}

impl ChainAngles {
    pub fn chain(&self) -> GivensChain {
        givens_coeffs(
            &self.alpha.real_parts(),
            &self.beta.real_parts(),
            &self.gamma.real_parts(),
        )
        .expect("angle vectors share one length")
    }
}

/// Parameters of `Φ = D · H_l · H_u · P` with `D = diag(e^{2πiθ})`.
#[derive(Clone, Debug, PartialEq)]
pub struct DhhpParams<T = ComplexTensor> {
    pub lower: ChainAngles<T>,
    pub upper: ChainAngles<T>,
    pub theta: T,
    pub m: usize,
}

impl<T> DhhpParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> DhhpParams<U> {
        DhhpParams {
            lower: self.lower.map(f),
            upper: self.upper.map(f),
            theta: f(&self.theta),
            m: self.m,
        }
    }

    /// Tensors in declaration order.
    pub fn tensors(&self) -> [&T; 7] {
        [
            &self.lower.alpha,
            &self.lower.beta,
            &self.lower.gamma,
            &self.upper.alpha,
            &self.upper.beta,
            &self.upper.gamma,
            &self.theta,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut T; 7] {
        [
            &mut self.lower.alpha,
            &mut self.lower.beta,
            &mut self.lower.gamma,
            &mut self.upper.alpha,
            &mut self.upper.beta,
            &mut self.upper.gamma,
            &mut self.theta,
        ]
    }

    pub const NAMES: [&'static str; 7] = [
        "lower.alpha",
        "lower.beta",
        "lower.gamma",
        "upper.alpha",
        "upper.beta",
        "upper.gamma",
        "theta",
    ];
}

impl DhhpParams {
    /// `Φ = I`.
    pub fn identity(n: usize, m: usize) -> Result<Self> {
        Self::from_fn(n, m, |_| 0.0)
    }

    /// Angles uniform on `[0, 2π)` and `θ` uniform on `[0, 1)`.
    pub fn random(n: usize, m: usize, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::identity(n, m)?;
        for (i, t) in p.tensors_mut().into_iter().enumerate() {
            let hi = if i == 6 { 1.0 } else { math::TAU };
            *t = rng.uniform(t.shape(), 0.0, hi)?;
        }
        Ok(p)
    }

    fn from_fn(n: usize, m: usize, mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidShape {
                shape: vec![0],
                reason: "transform size must be positive",
            });
        }
        if m == 0 || !n.is_multiple_of(m) {
            return Err(Error::Divisibility { n, m });
        }
        let mut vector = |len: usize| {
            let v: Vec<f64> = (0..len).map(&mut f).collect();
            ComplexTensor::from_real(&[len], &v).expect("finite values")
        };
        let mut chain = || ChainAngles {
            alpha: vector(n - 1),
            beta: vector(n - 1),
            gamma: vector(n - 1),
        };
        let lower = chain();
        let upper = chain();
        Ok(DhhpParams {
            lower,
            upper,
            theta: vector(n),
            m,
        })
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }
}

fn check_signal<T>(g: &impl Graph<Var = T>, p: &DhhpParams<T>, x: &T) -> Result<()> {
    let n = g.value(&p.theta).len();
    let v = g.value(x);
    if v.rank() == 0 || v.rows() != n {
        return Err(Error::LengthMismatch {
            what: "signal length",
            expected: n,
            found: if v.rank() == 0 { 0 } else { v.rows() },
        });
    }
    Ok(())
}

/// `Φ x` for an `N × D` signal: permute, upper scan, lower scan, diagonal phase.
pub fn dhhp_forward_with<G: Graph>(
    g: &mut G,
    p: &DhhpParams<G::Var>,
    x: &G::Var,
) -> Result<G::Var> {
    check_signal(g, p, x)?;
    let upper = p.upper.coeffs(g)?;
    let lower = p.lower.coeffs(g)?;
    let y = g.unary(
        Op::StridePermute {
            m: p.m,
            inverse: false,
        },
        x,
    )?;
    let y = hessenberg_upper(g, &upper, &y)?;
    let y = hessenberg_lower(g, &lower, &y)?;
    let phase = g.unary(Op::ExpI { scale: math::TAU }, &p.theta)?;
    g.hadamard(&y, &phase)
}

/// `Φᴴ x`, undoing [`dhhp_forward_with`] step by step.
pub fn dhhp_inverse_with<G: Graph>(
    g: &mut G,
    p: &DhhpParams<G::Var>,
    x: &G::Var,
) -> Result<G::Var> {
    check_signal(g, p, x)?;
    let upper = p.upper.coeffs(g)?;
    let lower = p.lower.coeffs(g)?;
    let upper_h = conj_transpose_with(g, &upper)?;
    let lower_h = conj_transpose_with(g, &lower)?;
    let phase = g.unary(Op::ExpI { scale: -math::TAU }, &p.theta)?;
    let y = g.hadamard(x, &phase)?;
    let y = hessenberg_upper(g, &lower_h, &y)?;
    let y = hessenberg_lower(g, &upper_h, &y)?;
    g.unary(
        Op::StridePermute {
            m: p.m,
            inverse: true,
        },
        &y,
    )
}

fn per_signal(
    x: &ComplexTensor,
    f: impl Fn(&ComplexTensor) -> Result<ComplexTensor>,
) -> Result<ComplexTensor> {
    match x.rank() {
        1 | 2 => f(&as_matrix(x)?)?.reshape(x.shape()),
        3 => {
            let (b, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let mut out = Vec::with_capacity(x.len());
            for chunk in x.data().chunks(n * d).take(b) {
                let m = ComplexTensor::from_parts(vec![n, d], chunk.to_vec());
                out.extend(f(&m)?.into_data());
            }
            Ok(ComplexTensor::from_parts(x.shape().to_vec(), out))
        }
        _ => Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "expected a vector, matrix or batch of matrices",
        }),
    }
}

/// `Φ x` for a length-`N` vector, an `N × D` matrix or a `B × N × D` batch.
pub fn dhhp_forward(p: &DhhpParams, x: &ComplexTensor) -> Result<ComplexTensor> {
    per_signal(x, |m| dhhp_forward_with(&mut Eager, p, m))
}

/// `Φᴴ x`, the exact inverse of [`dhhp_forward`].
pub fn dhhp_inverse(p: &DhhpParams, x: &ComplexTensor) -> Result<ComplexTensor> {
    per_signal(x, |m| dhhp_inverse_with(&mut Eager, p, m))
}

fn rotate_rows(mat: &mut [C], n: usize, row: usize, b: [[C; 2]; 2]) {
    let (top, bottom) = mat.split_at_mut((row + 1) * n);
    let r0 = &mut top[row * n..];
    let r1 = &mut bottom[..n];
    for (u, v) in r0.iter_mut().zip(r1.iter_mut()) {
        let (a, c) = (*u, *v);
        *u = b[0][0] * a + b[0][1] * c;
        *v = b[1][0] * a + b[1][1] * c;
    }
}

/// Explicit `N × N` matrix of `Φ`, assembled by left-multiplying the factors.
pub fn dhhp_dense_matrix(p: &DhhpParams) -> Result<ComplexTensor> {
    let n = p.n();
    if n > DENSE_MAX {
        return Err(Error::SizeGuard { n, max: DENSE_MAX });
    }
    if n % p.m != 0 {
        return Err(Error::Divisibility { n, m: p.m });
    }
    let mut mat = vec![C::new(0.0, 0.0); n * n];
    for col in 0..n {
        mat[stride_target(col, n, p.m) * n + col] = C::new(1.0, 0.0);
    }
    let upper = p.upper.chain();
    for k in (0..n - 1).rev() {
        rotate_rows(&mut mat, n, k, upper.block(k));
    }
    let lower = p.lower.chain();
    for k in 0..n - 1 {
        rotate_rows(&mut mat, n, k, lower.block(k));
    }
    for (row, t) in mat.chunks_mut(n).zip(p.theta.data()) {
        let d = math::cis(math::TAU * t.re);
        row.iter_mut().for_each(|v| *v *= d);
    }
    Ok(ComplexTensor::from_parts(vec![n, n], mat))
}

/// `‖U Uᴴ − I‖_F`.
pub fn unitarity_defect(u: &ComplexTensor) -> Result<f64> {
    let uh = u.conj_transpose()?;
    let prod = tensor::matmul(u, &uh)?;
    Ok(prod.frobenius_distance(&ComplexTensor::identity(u.rows())))
}

/// Adam moments for a flat list of real parameters.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(sizes: &[usize]) -> Self {
        Adam {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut ComplexTensor], grads: &[ComplexTensor], lr: f64) {
        let (b1, b2, eps) = (0.9, 0.999, 1e-12);
        self.t += 1;
        let c1 = 1.0 - libm::pow(b1, self.t as f64);
        let c2 = 1.0 - libm::pow(b2, self.t as f64);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for (j, (w, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gr = gv.re;
                self.m[i][j] = b1 * self.m[i][j] + (1.0 - b1) * gr;
                self.v[i][j] = b2 * self.v[i][j] + (1.0 - b2) * gr * gr;
                let update = lr * (self.m[i][j] / c1) / (math::sqrt(self.v[i][j] / c2) + eps);
                w.re -= update;
            }
        }
    }
}

fn fit_loss(p: &DhhpParams, target: &ComplexTensor) -> Result<(f64, Vec<ComplexTensor>)> {
    let n = p.n();
    let mut tape = Tape::new();
    let vars = p.map(&mut |t| tape.param(t));
    let eye = tape.constant(ComplexTensor::identity(n));
    let phi = dhhp_forward_with(&mut tape, &vars, &eye)?;
    let t = tape.constant(target.clone());
    let diff = tape.sub(&phi, &t)?;
    let loss = tape.unary(Op::SquaredNorm, &diff)?;
    let value = tape.value(&loss).data()[0].re;
    let grads = tape.backward(loss)?;
    let flat = vars
        .tensors()
        .iter()
        .map(|&&id| grads.get_or_zeros(id, tape.value(&id).shape()))
        .collect();
    Ok((value, flat))
}

/// Fits `Φ` to a unitary `target` by Adam on `‖Φ − target‖_F²`, starting from
/// zero angles and restarting from random angles if progress stalls.
/// Returns the best parameters seen and their Frobenius residual.
pub fn fit_unitary_target(
    target: &ComplexTensor,
    iters: usize,
    lr: f64,
) -> Result<(DhhpParams, f64)> {
    fit_unitary_target_m(target, iters, lr, 1)
}

pub fn fit_unitary_target_m(
    target: &ComplexTensor,
    iters: usize,
    lr: f64,
    m: usize,
) -> Result<(DhhpParams, f64)> {
    let (n, cols) = target.matrix_dims("fit_unitary_target")?;
    if n != cols || n == 0 {
        return Err(Error::InvalidShape {
            shape: target.shape().to_vec(),
            reason: "target must be square",
        });
    }
    let deviation = unitarity_defect(target)?;
    if !(deviation < 1e-8) {
        return Err(Error::NonUnitary { deviation });
    }
    let mut rng = Rng::new(0x5eed);
    let mut params = DhhpParams::identity(n, m)?;
    let mut best = (params.clone(), f64::INFINITY);
    let restart_every = 800;
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(&sizes);
    let mut since_restart = 0;
    for _ in 0..iters {
        let (loss, grads) = fit_loss(&params, target)?;
        let residual = math::sqrt(loss.max(0.0));
        if residual < best.1 {
            best = (params.clone(), residual);
        }
        if residual < 1e-10 {
            break;
        }
        if since_restart >= restart_every && residual > 1e-4 {
            params = DhhpParams::random(n, m, &mut rng)?;
            adam = Adam::new(&sizes);
            since_restart = 0;
            continue;
        }
        adam.step(&mut params.tensors_mut(), &grads, lr);
        since_restart += 1;
    }
    let (final_loss, _) = fit_loss(&params, target)?;
    let residual = math::sqrt(final_loss.max(0.0));
    if residual < best.1 {
        best = (params, residual);
    }
    Ok(best)
}
