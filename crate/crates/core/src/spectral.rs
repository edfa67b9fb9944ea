//! Data-dependent eigenphases from a two-layer sine network.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::{Eager, Graph};
use crate::math;
use crate::ops::Op;
use crate::rng::Rng;
use crate::tensor::ComplexTensor;

/// `sin(ω₁ · (sin(ω₀ · (X W₁ + b₁)) W₂ + b₂))`.
#[derive(Clone, Debug, PartialEq)]
pub struct SirenParams<T = ComplexTensor> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
    pub omega0: f64,
    pub omega1: f64,
}

pub const DEFAULT_OMEGA0: f64 = 30.0;
pub const DEFAULT_OMEGA1: f64 = 1.0;

impl<T> SirenParams<T> {
    pub const NAMES: [&'static str; 4] = ["w1", "b1", "w2", "b2"];

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> SirenParams<U> {
        SirenParams {
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
            omega0: self.omega0,
            omega1: self.omega1,
        }
    }

    pub fn tensors(&self) -> [&T; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut T; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl SirenParams {
    /// First layer uniform on `±1/D`, second on `±√(6/D_hid)/ω₁`, zero biases.
    pub fn init(d: usize, d_hid: usize, rng: &mut Rng) -> Result<Self> {
        let r1 = 1.0 / d as f64;
        let r2 = math::sqrt(6.0 / d_hid as f64) / DEFAULT_OMEGA1;
        Ok(SirenParams {
            w1: rng.uniform(&[d, d_hid], -r1, r1)?,
            b1: ComplexTensor::zeros(&[d_hid]),
            w2: rng.uniform(&[d_hid, d_hid], -r2, r2)?,
            b2: ComplexTensor::zeros(&[d_hid]),
            omega0: DEFAULT_OMEGA0,
            omega1: DEFAULT_OMEGA1,
        })
    }
}

pub fn siren_with<G: Graph>(g: &mut G, p: &SirenParams<G::Var>, x: &G::Var) -> Result<G::Var> {
    if !(p.omega0 > 0.0 && p.omega0.is_finite()) {
        return Err(Error::InvalidHyperparameter(alloc::format!(
            "omega0 must be positive, got {}",
            p.omega0
        )));
    }
    let h = g.matmul(x, &p.w1)?;
    let h = g.add_bias(&h, &p.b1)?;
    let h = g.unary(Op::Sin { omega: p.omega0 }, &h)?;
    let h = g.matmul(&h, &p.w2)?;
    let h = g.add_bias(&h, &p.b2)?;
    g.unary(Op::Sin { omega: p.omega1 }, &h)
}

/// One phase per row: the mean of the sine network's output over the hidden features.
pub fn eigenphase_with<G: Graph>(g: &mut G, p: &SirenParams<G::Var>, x: &G::Var) -> Result<G::Var> {
    let h = siren_with(g, p, x)?;
    g.unary(Op::MeanCols, &h)
}

pub fn siren_forward(p: &SirenParams, x: &ComplexTensor) -> Result<ComplexTensor> {
    siren_with(&mut Eager, p, x)
}

/// Eigenphases, each in `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenPhases {
    lambda: Vec<f64>,
}

impl EigenPhases {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = lambda.iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(Error::Domain {
                op: "eigenphases",
                value: bad,
            });
        }
        Ok(EigenPhases { lambda })
    }

    pub fn values(&self) -> &[f64] {
        &self.lambda
    }

    pub fn to_tensor(&self) -> ComplexTensor {
        ComplexTensor::from_real(&[self.lambda.len()], &self.lambda).expect("finite phases")
    }
}

pub fn eigenphase(p: &SirenParams, x: &ComplexTensor) -> Result<EigenPhases> {
    EigenPhases::new(eigenphase_with(&mut Eager, p, x)?.real_parts())
}

/// `e^{iπλ}`.
pub fn unit_eigenvalues(lam: &EigenPhases) -> ComplexTensor {
    let data: Vec<Complex64> = lam
        .values()
        .iter()
        .map(|&l| math::cis(math::PI * l))
        .collect();
    ComplexTensor::new(&[data.len()], data).expect("unit values are finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn params(d: usize, h: usize, seed: u64) -> SirenParams {
        let mut rng = Rng::new(seed);
        let mut p = SirenParams::init(d, h, &mut rng).unwrap();
        p.b1 = rng.uniform(&[h], -1.0, 1.0).unwrap();
        p.b2 = rng.uniform(&[h], -1.0, 1.0).unwrap();
        p
    }

    #[test]
    fn zero_input_and_biases_give_zero() {
        let p = SirenParams::init(4, 6, &mut Rng::new(1)).unwrap();
        let y = siren_forward(&p, &ComplexTensor::zeros(&[5, 4])).unwrap();
        assert!(y.data().iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        let lam = eigenphase(&p, &ComplexTensor::zeros(&[5, 4])).unwrap();
        assert_eq!(lam.values(), &[0.0; 5]);
    }

    #[test]
    fn outputs_stay_in_unit_interval() {
        let p = params(4, 8, 2);
        let x = Rng::new(3).uniform(&[7, 4], -10.0, 10.0).unwrap();
        let y = siren_forward(&p, &x).unwrap();
        assert!(y.data().iter().all(|z| z.re.abs() <= 1.0 && z.im == 0.0));
    }

    #[test]
    fn constant_rows_give_constant_phases() {
        let p = params(3, 5, 4);
        let x = ComplexTensor::from_real(&[4, 3], &[0.2, -0.1, 0.7].repeat(4)).unwrap();
        let lam = eigenphase(&p, &x).unwrap();
        assert!(lam.values().iter().all(|&v| v == lam.values()[0]));
    }

    #[test]
    fn phases_are_row_means() {
        let p = params(4, 6, 5);
        let x = Rng::new(6).uniform(&[5, 4], -1.0, 1.0).unwrap();
        let y = siren_forward(&p, &x).unwrap();
        let lam = eigenphase(&p, &x).unwrap();
        for (row, l) in y.real_parts().chunks(6).zip(lam.values()) {
            let mut s = 0.0;
            for v in row {
                s += v;
            }
            assert!((s / 6.0 - l).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_eigenvalue_cases() {
        let ones = unit_eigenvalues(&EigenPhases::new(vec![0.0; 3]).unwrap());
        assert_eq!(ones, ComplexTensor::ones(&[3]));
        let neg = unit_eigenvalues(&EigenPhases::new(vec![1.0]).unwrap());
        assert!((neg.data()[0] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        let lam = Rng::new(7).uniform_vec(50, -1.0, 1.0);
        let u = unit_eigenvalues(&EigenPhases::new(lam).unwrap());
        assert!(u.data().iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
        assert!(matches!(
            EigenPhases::new(vec![1.5]),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = params(4, 6, 8);
        assert!(matches!(
            siren_forward(&p, &ComplexTensor::zeros(&[2, 3])),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
