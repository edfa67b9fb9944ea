//! Dense complex tensors (rank 0 to 3, row-major) and the basic products.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::math;

pub const MAX_RANK: usize = 3;

/// Row-major array of complex doubles. Real tensors carry a zero imaginary part.
#[derive(Clone, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<Complex64>,
}

impl fmt::Debug for ComplexTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComplexTensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.len() > MAX_RANK {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "rank above 3",
        });
    }
    Ok(shape.iter().product())
}

impl ComplexTensor {
    pub fn new(shape: &[usize], data: Vec<Complex64>) -> Result<Self> {
        let numel = check_shape(shape)?;
        if numel != data.len() {
            return Err(Error::LengthMismatch {
                what: "tensor data",
                expected: numel,
                found: data.len(),
            });
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite {
                op: "ComplexTensor::new",
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_real(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(
            shape,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    /// Internal constructor for results of operations whose shapes are already validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<Complex64>) -> Self {
        debug_assert!(shape.len() <= MAX_RANK);
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![Complex64::new(0.0, 0.0); numel])
    }

    pub fn filled(shape: &[usize], value: Complex64) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; numel])
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, Complex64::new(1.0, 0.0))
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), vec![Complex64::new(value, 0.0)])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    /// Extent of the leading axis (1 for scalars).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of elements per leading-axis slice.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn get(&self, index: &[usize]) -> Complex64 {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.shape).enumerate() {
            assert!(
                ix < ext,
                "index {ix} out of bounds for axis {i} of extent {ext}"
            );
            flat = flat * ext + ix;
        }
        self.data[flat]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel = check_shape(shape)?;
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }

    pub fn imag_parts(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.im).collect()
    }

    pub fn is_exactly_real(&self) -> bool {
        self.data.iter().all(|z| z.im == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&z| f(z)).collect(),
        )
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|z| z * c)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &Self,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// Plain (non-conjugating) transpose of a matrix.
    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.matrix_dims("transpose")?;
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Ok(Self::from_parts(vec![c, r], out))
    }

    pub fn conj_transpose(&self) -> Result<Self> {
        Ok(self.transpose()?.conj())
    }

    pub(crate) fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: match op {
                    "matmul" => "matmul expects rank-2 operands",
                    _ => "expected a matrix",
                },
            }),
        }
    }

    /// Largest elementwise modulus of `self - other`; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        math::sqrt(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| math::norm_sqr(a - b))
                .sum(),
        )
    }
}

/// Real and imaginary planes of a matrix, optionally conjugate-transposed. The imaginary
/// plane is `None` when every entry is real.
struct Planes {
    re: Vec<f64>,
    im: Option<Vec<f64>>,
}

impl Planes {
    fn of(t: &ComplexTensor) -> Self {
        let re = t.data.iter().map(|z| z.re).collect();
        let im = (!t.is_exactly_real()).then(|| t.data.iter().map(|z| z.im).collect());
        Planes { re, im }
    }

    fn conj_transposed(t: &ComplexTensor, rows: usize, cols: usize) -> Self {
        let mut re = Vec::with_capacity(t.data.len());
        for j in 0..cols {
            re.extend((0..rows).map(|i| t.data[i * cols + j].re));
        }
        let im = (!t.is_exactly_real()).then(|| {
            let mut im = Vec::with_capacity(t.data.len());
            for j in 0..cols {
                im.extend((0..rows).map(|i| -t.data[i * cols + j].im));
            }
            im
        });
        Planes { re, im }
    }
}

/// `out += sign · a · b` for row-major `[m×k]·[k×p]`, accumulating over the inner index
/// in ascending order.
fn real_gemm_acc(out: &mut [f64], a: &[f64], b: &[f64], k: usize, p: usize, sign: f64) {
    if k == 0 || p == 0 {
        return;
    }
    for (row, arow) in out.chunks_exact_mut(p).zip(a.chunks_exact(k)) {
        for (&av, brow) in arow.iter().zip(b.chunks_exact(p)) {
            if av == 0.0 {
                continue;
            }
            let av = sign * av;
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn planes_product(a: &Planes, b: &Planes, m: usize, k: usize, p: usize) -> ComplexTensor {
    let mut re = vec![0.0; m * p];
    real_gemm_acc(&mut re, &a.re, &b.re, k, p, 1.0);
    if let (Some(ai), Some(bi)) = (&a.im, &b.im) {
        real_gemm_acc(&mut re, ai, bi, k, p, -1.0);
    }
    let data = if a.im.is_none() && b.im.is_none() {
        re.into_iter().map(|r| Complex64::new(r, 0.0)).collect()
    } else {
        let mut im = vec![0.0; m * p];
        if let Some(bi) = &b.im {
            real_gemm_acc(&mut im, &a.re, bi, k, p, 1.0);
        }
        if let Some(ai) = &a.im {
            real_gemm_acc(&mut im, ai, &b.re, k, p, 1.0);
        }
        re.into_iter()
            .zip(im)
            .map(|(r, i)| Complex64::new(r, i))
            .collect()
    };
    ComplexTensor::from_parts(vec![m, p], data)
}

fn product_dims(
    a: &ComplexTensor,
    b: &ComplexTensor,
    a_t: bool,
    b_t: bool,
) -> Result<(usize, usize, usize)> {
    let (ar, ac) = a.matrix_dims("matmul")?;
    let (br, bc) = b.matrix_dims("matmul")?;
    let (m, k) = if a_t { (ac, ar) } else { (ar, ac) };
    let (k2, p) = if b_t { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok((m, k, p))
}

/// Complex matrix product `a · b`.
pub fn matmul(a: &ComplexTensor, b: &ComplexTensor) -> Result<ComplexTensor> {
    let (m, k, p) = product_dims(a, b, false, false)?;
    Ok(planes_product(&Planes::of(a), &Planes::of(b), m, k, p))
}

/// `a · bᴴ` without materialising the conjugate transpose as a tensor.
pub fn matmul_conj_b(a: &ComplexTensor, b: &ComplexTensor) -> Result<ComplexTensor> {
    let (m, k, p) = product_dims(a, b, false, true)?;
    Ok(planes_product(
        &Planes::of(a),
        &Planes::conj_transposed(b, p, k),
        m,
        k,
        p,
    ))
}

/// `aᴴ · b` without materialising the conjugate transpose as a tensor.
pub fn matmul_conj_a(a: &ComplexTensor, b: &ComplexTensor) -> Result<ComplexTensor> {
    let (m, k, p) = product_dims(a, b, true, false)?;
    Ok(planes_product(
        &Planes::conj_transposed(a, k, m),
        &Planes::of(b),
        m,
        k,
        p,
    ))
}

/// Elementwise product. `b` may equal `a`'s shape, or be a vector over the rows of `a`
/// (length `a.rows()`), in which case every row of `a` is scaled by its entry.
pub fn hadamard(a: &ComplexTensor, b: &ComplexTensor) -> Result<ComplexTensor> {
    if a.shape == b.shape {
        return a.zip_with("hadamard", b, |x, y| x * y);
    }
    if b.rank() == 1 && a.rank() >= 2 && b.len() == a.rows() {
        let width = a.row_len();
        let mut out = a.data.clone();
        for (r, chunk) in out.chunks_mut(width).enumerate() {
            let s = b.data[r];
            for z in chunk {
                *z *= s;
            }
        }
        return Ok(ComplexTensor::from_parts(a.shape.clone(), out));
    }
    Err(Error::ShapeMismatch {
        op: "hadamard",
        left: a.shape.clone(),
        right: b.shape.clone(),
    })
}

/// Euclidean norm over all entries.
pub fn l2_norm(x: &ComplexTensor) -> f64 {
    math::sqrt(x.data.iter().map(|&z| math::norm_sqr(z)).sum())
}
