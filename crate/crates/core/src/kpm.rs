//! Chebyshev expansions damped by Gibbs kernels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{Eager, Graph};
use crate::math;
use crate::ops::Op;
use crate::tensor::ComplexTensor;

/// Damping kernel for a truncated Chebyshev series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel {
    Dirichlet,
    Fejer,
    Jackson,
    Lanczos { m: u32 },
    Lorentz { xi: f64 },
    Vekic,
    Wang { a: f64, b: f64 },
}

impl Kernel {
    /// Every kernel with its default hyperparameters, in a fixed order.
    pub const ALL: [Kernel; 7] = [
        Kernel::Dirichlet,
        Kernel::Fejer,
        Kernel::Jackson,
        Kernel::Lanczos { m: 3 },
        Kernel::Lorentz { xi: 4.0 },
        Kernel::Vekic,
        Kernel::Wang { a: 1.0, b: 1.0 },
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Dirichlet => "dirichlet",
            Kernel::Fejer => "fejer",
            Kernel::Jackson => "jackson",
            Kernel::Lanczos { .. } => "lanczos",
            Kernel::Lorentz { .. } => "lorentz",
            Kernel::Vekic => "vekic",
            Kernel::Wang { .. } => "wang",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    /// Accepts a kernel name, taking default hyperparameters.
    fn from_str(s: &str) -> Result<Self> {
        Kernel::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| Error::InvalidHyperparameter(format!("unknown kernel '{s}'")))
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        math::sin(x) / x
    }
}

/// Damping factors `g_0..g_K`.
pub fn gibbs_factors(kernel: Kernel, k_max: usize) -> Result<Vec<f64>> {
    let kp1 = (k_max + 1) as f64;
    let kp2 = (k_max + 2) as f64;
    match kernel {
        Kernel::Lanczos { m: 0 } => {
            return Err(Error::InvalidHyperparameter(
                "lanczos order must be at least 1".into(),
            ))
        }
        Kernel::Lorentz { xi } if xi == 0.0 || !xi.is_finite() => {
            return Err(Error::InvalidHyperparameter(format!(
                "lorentz xi must be finite and nonzero, got {xi}"
            )))
        }
        Kernel::Wang { a, b } if !(a >= 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) => {
            return Err(Error::InvalidHyperparameter(format!(
                "wang needs a >= 0 and b > 0, got a={a} b={b}"
            )))
        }
        _ => {}
    }
    let g = (0..=k_max)
        .map(|k| {
            let kf = k as f64;
            match kernel {
                Kernel::Dirichlet => 1.0,
                Kernel::Fejer => 1.0 - kf / kp1,
                Kernel::Jackson => {
                    let q = math::PI / kp2;
                    ((kp2 - kf) * math::cos(kf * q) + math::sin(kf * q) / math::tan(q)) / kp2
                }
                Kernel::Lanczos { m } => libm::pow(sinc(kf * math::PI / kp1), m as f64),
                Kernel::Lorentz { xi } => math::sinh(xi * (1.0 - kf / kp1)) / math::sinh(xi),
                Kernel::Vekic => {
                    if k == 0 {
                        1.0
                    } else {
                        let x = kf / kp1;
                        let u = (x - 0.5) / (x * (1.0 - x));
                        1.0 / (1.0 + math::exp(2.0 * u))
                    }
                }
                Kernel::Wang { a, b } => {
                    if k == 0 {
                        1.0
                    } else {
                        math::exp(-libm::pow(a * kf / kp1, b))
                    }
                }
            }
        })
        .collect();
    Ok(g)
}

fn check_domain(op: &'static str, x: &[f64]) -> Result<()> {
    match x.iter().find(|v| !(v.abs() <= 1.0)) {
        Some(&value) => Err(Error::Domain { op, value }),
        None => Ok(()),
    }
}

/// Rows `T_0..T_K` evaluated at every point of `x`.
pub fn cheb_t(k_max: usize, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_domain("cheb_t", x)?;
    let mut rows = vec![vec![1.0; x.len()]];
    if k_max >= 1 {
        rows.push(x.to_vec());
    }
    for k in 2..=k_max {
        let row = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| 2.0 * xi * rows[k - 1][i] - rows[k - 2][i])
            .collect();
        rows.push(row);
    }
    Ok(rows)
}

/// Interpolation nodes `x_j = cos(π(j + ½)/(K + 1))`, strictly decreasing.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebNodes {
    points: Vec<f64>,
}

impl ChebNodes {
    pub fn new(k_max: usize) -> Self {
        let kp1 = (k_max + 1) as f64;
        let points = (0..=k_max)
            .map(|j| math::cos(math::PI * (j as f64 + 0.5) / kp1))
            .collect();
        ChebNodes { points }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

/// `μ_k = 2/(K+1) Σ_j f(x_j) T_k(x_j)`, so that `f ≈ ½μ_0 + Σ μ_k T_k`.
pub fn cpi_coefficients(f: impl Fn(f64) -> f64, k_max: usize) -> Result<Vec<f64>> {
    let nodes = ChebNodes::new(k_max);
    let values: Vec<f64> = nodes.points().iter().map(|&x| f(x)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "cpi_coefficients",
        });
    }
    let t = cheb_t(k_max, nodes.points())?;
    let scale = 2.0 / (k_max + 1) as f64;
    Ok(t.iter()
        .map(|row| scale * row.iter().zip(&values).map(|(a, b)| a * b).sum::<f64>())
        .collect())
}

/// `½g_0μ_0 + Σ g_k μ_k T_k(x)` at each point.
pub fn cheb_series(mu: &[f64], g: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != g.len() || mu.is_empty() {
        return Err(Error::LengthMismatch {
            what: "damping factors",
            expected: mu.len(),
            found: g.len(),
        });
    }
    let t = cheb_t(mu.len() - 1, x)?;
    Ok((0..x.len())
        .map(|i| {
            let mut acc = 0.5 * g[0] * mu[0];
            for k in 1..mu.len() {
                acc += g[k] * mu[k] * t[k][i];
            }
            acc
        })
        .collect())
}

/// Learnable Chebyshev filter `p(λ) = ½g_0w_0 + Σ g_k w_k T_k(λ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebFilter<T = ComplexTensor> {
    pub w: T,
    kernel: Kernel,
    gibbs: Vec<f64>,
}

impl<T> ChebFilter<T> {
    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn gibbs(&self) -> &[f64] {
        &self.gibbs
    }

    pub fn order(&self) -> usize {
        self.gibbs.len() - 1
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ChebFilter<U> {
        ChebFilter {
            w: f(&self.w),
            kernel: self.kernel,
            gibbs: self.gibbs.clone(),
        }
    }
}

impl ChebFilter {
    /// The identity filter: `w_1 = 1` and every other coefficient zero (requires `K ≥ 1`).
    pub fn identity(k_max: usize, kernel: Kernel) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::InvalidHyperparameter(
                "chebyshev order must be at least 1".into(),
            ));
        }
        let mut w = vec![0.0; k_max + 1];
        w[1] = 1.0;
        Self::with_coefficients(&w, kernel)
    }

    pub fn with_coefficients(w: &[f64], kernel: Kernel) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidHyperparameter(
                "empty coefficient vector".into(),
            ));
        }
        let gibbs = gibbs_factors(kernel, w.len() - 1)?;
        Ok(ChebFilter {
            w: ComplexTensor::from_real(&[w.len()], w)?,
            kernel,
            gibbs,
        })
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.w.real_parts()
    }
}

pub fn kpm_eval_with<G: Graph>(g: &mut G, f: &ChebFilter<G::Var>, lam: &G::Var) -> Result<G::Var> {
    g.binary(
        Op::Kpm {
            gibbs: f.gibbs.clone(),
        },
        lam,
        &f.w,
    )
}

pub fn kpl_with<G: Graph>(g: &mut G, f: &ChebFilter<G::Var>) -> Result<G::Var> {
    g.unary(Op::Kpl, &f.w)
}

pub fn kpm_eval(f: &ChebFilter, lam: &[f64]) -> Result<Vec<f64>> {
    check_domain("kpm_eval", lam)?;
    let l = ComplexTensor::from_real(&[lam.len()], lam)?;
    Ok(kpm_eval_with(&mut Eager, f, &l)?.real_parts())
}

/// `Σ_{k≥1} π k² |w_k|²`.
pub fn kernel_polynomial_loss(f: &ChebFilter) -> f64 {
    Op::Kpl.forward(&[&f.w]).expect("unary").data()[0].re
}

/// Column names of [`gibbs_demo`].
pub const DEMO_COLUMNS: [&str; 9] = [
    "x",
    "f",
    "p_dirichlet",
    "p_fejer",
    "p_jackson",
    "p_lanczos",
    "p_lorentz",
    "p_vekic",
    "p_wang",
];

/// Damped interpolants of `sign(x)` on `points` uniform nodes over `[−1, 1]`, one row per node
/// laid out as [`DEMO_COLUMNS`].
pub fn gibbs_demo(k_max: usize, points: usize) -> Result<Vec<[f64; 9]>> {
    if k_max == 0 || points < 2 {
        return Err(Error::InvalidHyperparameter(format!(
            "demo needs K >= 1 and at least 2 points, got K = {k_max}, {points} points"
        )));
    }
    let sign = |x: f64| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let grid: Vec<f64> = (0..points)
        .map(|i| -1.0 + 2.0 * i as f64 / (points - 1) as f64)
        .collect();
    let mu = cpi_coefficients(sign, k_max)?;
    let mut cols = Vec::with_capacity(Kernel::ALL.len());
    for kernel in Kernel::ALL {
        cols.push(cheb_series(&mu, &gibbs_factors(kernel, k_max)?, &grid)?);
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut row = [0.0; 9];
            row[0] = x;
            row[1] = sign(x);
            for (c, col) in cols.iter().enumerate() {
                row[2 + c] = col[i];
            }
            row
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn low_order_polynomials() {
        let t = cheb_t(2, &[0.5, -1.0, 0.0]).unwrap();
        assert_eq!(t[0], vec![1.0; 3]);
        assert_eq!(t[1], vec![0.5, -1.0, 0.0]);
        assert!((t[2][0] + 0.5).abs() < 1e-15);
        assert!(matches!(cheb_t(2, &[1.5]), Err(Error::Domain { .. })));
    }

    #[test]
    fn trigonometric_identity() {
        let theta: Vec<f64> = (0..200).map(|i| i as f64 * PI / 199.0).collect();
        let x: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
        let t = cheb_t(30, &x).unwrap();
        for (k, row) in t.iter().enumerate() {
            for (v, th) in row.iter().zip(&theta) {
                assert!((v - (k as f64 * th).cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nodes_decrease_inside_interval() {
        let n = ChebNodes::new(12);
        assert_eq!(n.points().len(), 13);
        assert!(n.points().windows(2).all(|w| w[0] > w[1]));
        assert!(n.points().iter().all(|p| p.abs() < 1.0));
    }

    #[test]
    fn interpolation_of_simple_functions() {
        let mu = cpi_coefficients(|_| 3.0, 8).unwrap();
        assert!((mu[0] - 6.0).abs() < 1e-12);
        assert!(mu[1..].iter().all(|m| m.abs() < 1e-12));
        let mu = cpi_coefficients(|x| x, 8).unwrap();
        assert!((mu[1] - 1.0).abs() < 1e-12);
        assert!(mu
            .iter()
            .enumerate()
            .all(|(k, m)| k == 1 || m.abs() < 1e-12));
        assert!(cpi_coefficients(|x| 1.0 / x.abs().min(0.0), 4).is_err());
    }

    #[test]
    fn exponential_interpolation_error() {
        let mu = cpi_coefficients(f64::exp, 10).unwrap();
        let grid: Vec<f64> = (0..1001).map(|i| -1.0 + 2.0 * i as f64 / 1000.0).collect();
        let p = cheb_series(&mu, &[1.0; 11], &grid).unwrap();
        let err = p
            .iter()
            .zip(&grid)
            .map(|(p, x)| (p - x.exp()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn kernel_table_values() {
        for k in [0, 1, 5, 64] {
            assert!(gibbs_factors(Kernel::Dirichlet, k)
                .unwrap()
                .iter()
                .all(|&g| g == 1.0));
        }
        let fejer = gibbs_factors(Kernel::Fejer, 3).unwrap();
        for (a, b) in fejer.iter().zip([1.0, 0.75, 0.5, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((gibbs_factors(Kernel::Jackson, 10).unwrap()[0] - 1.0).abs() < 1e-14);
        for kernel in Kernel::ALL {
            for k_max in 1..=64 {
                let g = gibbs_factors(kernel, k_max).unwrap();
                assert!((g[0] - 1.0).abs() < 1e-12, "{kernel} K={k_max}");
                assert!(g.iter().all(|&v| v > 0.0), "{kernel} K={k_max}");
            }
        }
        assert!(gibbs_factors(Kernel::Jackson, 1000).unwrap()[1] > 0.9999);
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(gibbs_factors(Kernel::Lanczos { m: 0 }, 4).is_err());
        assert!(gibbs_factors(Kernel::Lorentz { xi: 0.0 }, 4).is_err());
        assert!(gibbs_factors(Kernel::Wang { a: -1.0, b: 1.0 }, 4).is_err());
        assert!(gibbs_factors(Kernel::Wang { a: 1.0, b: 0.0 }, 4).is_err());
        assert!("gaussian".parse::<Kernel>().is_err());
        assert_eq!("jackson".parse::<Kernel>().unwrap(), Kernel::Jackson);
    }

    #[test]
    fn filter_evaluation_cases() {
        let lam = [-0.9, -0.2, 0.0, 0.4, 1.0];
        let id = ChebFilter::identity(6, Kernel::Dirichlet).unwrap();
        assert_eq!(kpm_eval(&id, &lam).unwrap(), lam.to_vec());
        let c = ChebFilter::with_coefficients(&[2.0, 0.0, 0.0], Kernel::Dirichlet).unwrap();
        assert_eq!(kpm_eval(&c, &lam).unwrap(), vec![1.0; 5]);
        assert!(kpm_eval(&id, &[1.2]).is_err());
    }

    #[test]
    fn filter_matches_matrix_form() {
        let w = [0.3, -1.2, 0.5, 0.9, -0.4, 0.7];
        let f = ChebFilter::with_coefficients(&w, Kernel::Jackson).unwrap();
        let lam = [-0.7, 0.1, 0.33, 0.95];
        let t = cheb_t(5, &lam).unwrap();
        let g = f.gibbs();
        let got = kpm_eval(&f, &lam).unwrap();
        for i in 0..lam.len() {
            let mut want = 0.0;
            for k in 0..6 {
                let half = if k == 0 { 0.5 } else { 1.0 };
                want += half * g[k] * w[k] * t[k][i];
            }
            assert!((got[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn kpl_cases() {
        let zero = ChebFilter::with_coefficients(&[0.0; 4], Kernel::Dirichlet).unwrap();
        assert_eq!(kernel_polynomial_loss(&zero), 0.0);
        let one = ChebFilter::with_coefficients(&[5.0, 1.0], Kernel::Dirichlet).unwrap();
        assert!((kernel_polynomial_loss(&one) - PI).abs() < 1e-15);
        let two = ChebFilter::with_coefficients(&[0.0, 1.0, 1.0], Kernel::Dirichlet).unwrap();
        assert!((kernel_polynomial_loss(&two) - 5.0 * PI).abs() < 1e-14);
    }
}
