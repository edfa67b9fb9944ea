//! Finite-difference verification of the hand-written gradients.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Tape};
use crate::kpm::{kpl_with, kpm_eval_with, ChebFilter, Kernel};
use crate::math;
use crate::model::{
    attention_with, converter_forward_with, gffn_with, kernelution_with, positional_encode_with,
    post_scale_norm_with, synvolution_with, ConverterParams, DropoutRates, GffnParams, GruLayer,
    Mechanism, ModelConfig, PeVariant, PositionParams,
};
use crate::ops::{GivensEntry, Op};
use crate::rng::Rng;
use crate::spectral::{eigenphase_with, siren_with, SirenParams};
use crate::tensor::ComplexTensor;
use crate::unitary::{dhhp_forward_with, dhhp_inverse_with, ChainAngles, DhhpParams};

type C = Complex64;

/// Central-difference step used by the gradient checks.
pub const STEP: f64 = 1e-6;

/// Central differences `(f(θ + h eᵢ) − f(θ − h eᵢ)) / 2h` for every coordinate.
pub fn finite_diff(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidHyperparameter(format!(
            "step must be positive, got {h}"
        )));
    }
    let mut x = theta.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x)?;
        x[i] = orig - h;
        let minus = f(&x)?;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { op: "finite_diff" });
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// `|a − n| / max(1, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub op: String,
    pub max_rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// A differentiable input: its value and whether only its real part is a free variable.
#[derive(Clone, Debug)]
pub struct GradInput {
    pub value: ComplexTensor,
    pub real: bool,
}

impl GradInput {
    pub fn real(value: ComplexTensor) -> Self {
        GradInput { value, real: true }
    }

    pub fn complex(value: ComplexTensor) -> Self {
        GradInput { value, real: false }
    }
}

type Sampler = Box<dyn Fn(&mut Rng, usize) -> Result<Vec<GradInput>>>;
type Builder = Box<dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>>;

/// An operation under test: how to sample inputs and how to record it on a tape.
pub struct GradCase {
    pub name: &'static str,
    sample: Sampler,
    build: Builder,
}

impl GradCase {
    pub fn sample(&self, rng: &mut Rng, variant: usize) -> Result<Vec<GradInput>> {
        (self.sample)(rng, variant)
    }
}

fn flatten(inputs: &[GradInput]) -> Vec<f64> {
    let mut out = Vec::new();
    for inp in inputs {
        for z in inp.value.data() {
            out.push(z.re);
            if !inp.real {
                out.push(z.im);
            }
        }
    }
    out
}

fn unflatten(inputs: &[GradInput], flat: &[f64]) -> Vec<ComplexTensor> {
    let mut k = 0;
    inputs
        .iter()
        .map(|inp| {
            let data = inp
                .value
                .data()
                .iter()
                .map(|_| {
                    let re = flat[k];
                    k += 1;
                    let im = if inp.real {
                        0.0
                    } else {
                        k += 1;
                        flat[k - 1]
                    };
                    C::new(re, im)
                })
                .collect();
            ComplexTensor::from_parts(inp.value.shape().to_vec(), data)
        })
        .collect()
}

/// Records `Re Σ conj(r) ⊙ op(inputs)` and returns the tape, the input leaves and the loss.
fn projected(
    build: &Builder,
    values: &[ComplexTensor],
    projection: Option<&ComplexTensor>,
    rng: &mut Rng,
) -> Result<(Tape, Vec<NodeId>, NodeId, ComplexTensor)> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = values.iter().map(|v| tape.param(v)).collect();
    let y = build(&mut tape, &ids)?;
    let r = match projection {
        Some(r) => r.clone(),
        None => rng.complex_uniform(tape.value(&y).shape()),
    };
    let rc = tape.constant(r.conj());
    let prod = tape.hadamard(&y, &rc)?;
    let s = tape.unary(Op::Sum, &prod)?;
    let loss = tape.unary(Op::RealPart, &s)?;
    Ok((tape, ids, loss, r))
}

/// Compares the tape gradient of a random projection of the case's output with
/// central differences over every free input coordinate.
pub fn check_case(
    case: &GradCase,
    inputs: &[GradInput],
    tol: f64,
    rng: &mut Rng,
) -> Result<GradReport> {
    let values: Vec<ComplexTensor> = inputs.iter().map(|i| i.value.clone()).collect();
    let (tape, ids, loss, r) = projected(&case.build, &values, None, rng)?;
    let grads = tape.backward(loss)?;
    let mut analytic = Vec::new();
    for (inp, id) in inputs.iter().zip(&ids) {
        let g = grads.get_or_zeros(*id, inp.value.shape());
        for z in g.data() {
            analytic.push(z.re);
            if !inp.real {
                analytic.push(z.im);
            }
        }
    }
    let theta = flatten(inputs);
    let numeric = finite_diff(
        |flat| {
            let vals = unflatten(inputs, flat);
            let mut scratch = Rng::new(0);
            let (tape, _, loss, _) = projected(&case.build, &vals, Some(&r), &mut scratch)?;
            Ok(tape.value(&loss).data()[0].re)
        },
        &theta,
        STEP,
    )?;
    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max);
    let norm = |v: &[f64]| math::sqrt(v.iter().map(|x| x * x).sum());
    Ok(GradReport {
        op: String::from(case.name),
        max_rel_error,
        analytic_norm: norm(&analytic),
        numeric_norm: norm(&numeric),
        tolerance: tol,
        passed: max_rel_error < tol,
    })
}

/// Looks up `op_name` in the registry and checks it at the given inputs.
pub fn check_gradient(op_name: &str, inputs: &[GradInput], tol: f64) -> Result<GradReport> {
    let reg = registry(true);
    let case = reg
        .iter()
        .find(|c| c.name == op_name)
        .ok_or_else(|| Error::UnregisteredOp(String::from(op_name)))?;
    check_case(case, inputs, tol, &mut Rng::new(0x9c))
}

/// Checks every variant of `case` and keeps the worst report.
pub fn sweep_case(case: &GradCase, variants: usize, tol: f64, seed: u64) -> Result<GradReport> {
    let mut worst: Option<GradReport> = None;
    for v in 0..variants {
        let mut rng = Rng::new(seed).fork(v as u64);
        let inputs = case.sample(&mut rng, v)?;
        let report = check_case(case, &inputs, tol, &mut rng)?;
        if worst
            .as_ref()
            .is_none_or(|w| report.max_rel_error > w.max_rel_error)
        {
            worst = Some(report);
        }
    }
    worst.ok_or_else(|| Error::InvalidHyperparameter(String::from("no variants requested")))
}

fn case(
    name: &'static str,
    sample: impl Fn(&mut Rng, usize) -> Result<Vec<GradInput>> + 'static,
    build: impl Fn(&mut Tape, &[NodeId]) -> Result<NodeId> + 'static,
) -> GradCase {
    GradCase {
        name,
        sample: Box::new(sample),
        build: Box::new(build),
    }
}

fn real(rng: &mut Rng, shape: &[usize], r: f64) -> Result<GradInput> {
    Ok(GradInput::real(rng.uniform(shape, -r, r)?))
}

fn cplx(rng: &mut Rng, shape: &[usize]) -> GradInput {
    GradInput::complex(rng.complex_uniform(shape))
}

fn dhhp_inputs(rng: &mut Rng, n: usize) -> Result<Vec<GradInput>> {
    let mut out = Vec::new();
    for _ in 0..6 {
        out.push(real(rng, &[n - 1], math::PI)?);
    }
    out.push(real(rng, &[n], 1.0)?);
    Ok(out)
}

fn dhhp_from(ids: &[NodeId], m: usize) -> DhhpParams<NodeId> {
    DhhpParams {
        lower: ChainAngles {
            alpha: ids[0],
            beta: ids[1],
            gamma: ids[2],
        },
        upper: ChainAngles {
            alpha: ids[3],
            beta: ids[4],
            gamma: ids[5],
        },
        theta: ids[6],
        m,
    }
}

fn siren_from(ids: &[NodeId]) -> SirenParams<NodeId> {
    SirenParams {
        w1: ids[0],
        b1: ids[1],
        w2: ids[2],
        b2: ids[3],
        omega0: crate::spectral::DEFAULT_OMEGA0,
        omega1: crate::spectral::DEFAULT_OMEGA1,
    }
}

fn siren_inputs(rng: &mut Rng, n: usize, d: usize, h: usize) -> Result<Vec<GradInput>> {
    let p = SirenParams::init(d, h, rng)?;
    Ok(vec![
        real(rng, &[n, d], 1.0)?,
        GradInput::real(p.w1),
        real(rng, &[h], 0.5)?,
        GradInput::real(p.w2),
        real(rng, &[h], 0.5)?,
    ])
}

const SIZES: [usize; 4] = [4, 7, 8, 16];

fn filter_from(w: NodeId, gibbs_kernel: Kernel, k: usize) -> ChebFilter<NodeId> {
    ChebFilter::identity(k, gibbs_kernel)
        .expect("order at least one")
        .map(&mut |_| w)
}

/// The small model used for the end-to-end check.
pub fn converter_check_config() -> ModelConfig {
    ModelConfig {
        vocab: 5,
        classes: 2,
        seq_len: 16,
        d_model: 8,
        d_hidden: 8,
        cheb_order: 3,
        blocks: 1,
        pe: PeVariant::Spe,
        mechanism: Mechanism::Kernelution,
        kernel: Kernel::Jackson,
        perm_factor: 2,
        dropout: DropoutRates::default(),
    }
}

fn converter_case() -> GradCase {
    let cfg = converter_check_config();
    let template = ConverterParams::init(&cfg, &mut Rng::new(1)).expect("valid config");
    let build_cfg = cfg.clone();
    case(
        "converter_forward",
        move |rng, _| {
            let mut p = ConverterParams::init(&cfg, rng)?;
            for b in &mut p.blocks {
                b.filter.w = rng.uniform(&[cfg.cheb_order + 1], -0.5, 0.5)?;
                b.zeta = real_scalar(0.3);
            }
            Ok(p.named()
                .into_iter()
                .map(|(_, t)| GradInput::real(t.clone()))
                .collect())
        },
        move |t, ids| {
            let mut next = ids.iter().copied();
            let vars = template.map(&mut |_| next.next().expect("one id per tensor"));
            let tokens = [1, 3, 2, 4, 4, 1, 2, 3, 1, 2];
            converter_forward_with(t, &build_cfg, &vars, &tokens, None)
        },
    )
}

fn real_scalar(v: f64) -> ComplexTensor {
    ComplexTensor::from_real(&[1], &[v]).expect("finite")
}

/// Every checked operation, optionally with the deliberately broken one appended.
pub fn registry(inject_fault: bool) -> Vec<GradCase> {
    let mut reg = vec![
        case(
            "matmul",
            |rng, v| {
                let (m, k, p) = [(3, 3, 3), (2, 5, 4), (4, 1, 2), (1, 6, 3)][v % 4];
                Ok(vec![cplx(rng, &[m, k]), cplx(rng, &[k, p])])
            },
            |t, ids| t.matmul(&ids[0], &ids[1]),
        ),
        case(
            "hadamard",
            |rng, v| {
                let (n, d) = [(3, 3), (5, 2), (4, 1), (2, 6)][v % 4];
                let b = if v % 2 == 0 { vec![n, d] } else { vec![n] };
                Ok(vec![cplx(rng, &[n, d]), cplx(rng, &b)])
            },
            |t, ids| t.hadamard(&ids[0], &ids[1]),
        ),
        case(
            "pscan",
            |rng, v| {
                let (l, d) = [(8, 1), (5, 3), (1, 2), (13, 2)][v % 4];
                Ok(vec![cplx(rng, &[l]), cplx(rng, &[l, d]), cplx(rng, &[d])])
            },
            |t, ids| t.apply(Op::Scan, &[&ids[0], &ids[1], &ids[2]]),
        ),
        case(
            "givens_coeffs",
            |rng, v| {
                let n = SIZES[v % 4];
                Ok(vec![
                    real(rng, &[n], math::PI)?,
                    real(rng, &[n], math::PI)?,
                    real(rng, &[n], math::PI)?,
                ])
            },
            |t, ids| {
                let mut parts = Vec::new();
                for e in [
                    GivensEntry::Ii,
                    GivensEntry::Ij,
                    GivensEntry::Ji,
                    GivensEntry::Jj,
                ] {
                    parts.push(t.apply(Op::Givens(e), &[&ids[0], &ids[1], &ids[2]])?);
                }
                let refs: Vec<&NodeId> = parts.iter().collect();
                t.apply(Op::ConcatRows, &refs)
            },
        ),
        case(
            "dhhp_forward",
            |rng, v| {
                let n = SIZES[v % 4];
                let mut inputs = dhhp_inputs(rng, n)?;
                inputs.push(cplx(rng, &[n, 2]));
                Ok(inputs)
            },
            |t, ids| {
                let m = if t.value(&ids[7]).rows() % 2 == 0 {
                    2
                } else {
                    1
                };
                dhhp_forward_with(t, &dhhp_from(ids, m), &ids[7])
            },
        ),
        case(
            "dhhp_inverse",
            |rng, v| {
                let n = SIZES[v % 4];
                let mut inputs = dhhp_inputs(rng, n)?;
                inputs.push(cplx(rng, &[n, 2]));
                Ok(inputs)
            },
            |t, ids| {
                let m = if t.value(&ids[7]).rows() % 4 == 0 {
                    4
                } else {
                    1
                };
                dhhp_inverse_with(t, &dhhp_from(ids, m), &ids[7])
            },
        ),
        case(
            "siren",
            |rng, v| {
                let (n, d, h) = [(3, 2, 4), (5, 3, 3), (2, 4, 6), (4, 4, 4)][v % 4];
                siren_inputs(rng, n, d, h)
            },
            |t, ids| siren_with(t, &siren_from(&ids[1..]), &ids[0]),
        ),
        case(
            "eigenphase",
            |rng, v| {
                let (n, d, h) = [(3, 2, 4), (5, 3, 3), (2, 4, 6), (4, 4, 4)][v % 4];
                siren_inputs(rng, n, d, h)
            },
            |t, ids| eigenphase_with(t, &siren_from(&ids[1..]), &ids[0]),
        ),
        case(
            "kpm_eval",
            |rng, v| {
                let (n, k) = [(5, 3), (8, 6), (3, 1), (6, 10)][v % 4];
                Ok(vec![real(rng, &[n], 0.99)?, real(rng, &[k + 1], 1.0)?])
            },
            |t, ids| {
                let k = t.value(&ids[1]).len() - 1;
                kpm_eval_with(t, &filter_from(ids[1], Kernel::Jackson, k), &ids[0])
            },
        ),
        case(
            "kernel_polynomial_loss",
            |rng, v| Ok(vec![real(rng, &[[2, 4, 7, 11][v % 4]], 1.0)?]),
            |t, ids| {
                let k = t.value(&ids[0]).len() - 1;
                kpl_with(t, &filter_from(ids[0], Kernel::Dirichlet, k))
            },
        ),
        case(
            "synvolution",
            |rng, v| {
                let n = SIZES[v % 4];
                let mut inputs = dhhp_inputs(rng, n)?;
                inputs.push(real(rng, &[n], 1.0)?);
                inputs.push(real(rng, &[n, 3], 1.0)?);
                Ok(inputs)
            },
            |t, ids| synvolution_with(t, &dhhp_from(ids, 1), &ids[7], &ids[8]),
        ),
        case(
            "kernelution",
            |rng, v| {
                let n = SIZES[v % 4];
                let mut inputs = dhhp_inputs(rng, n)?;
                inputs.push(real(rng, &[n], 1.0)?);
                inputs.push(real(rng, &[n, 2], 1.0)?);
                inputs.push(real(rng, &[4], 0.7)?);
                Ok(inputs)
            },
            |t, ids| {
                let f = filter_from(ids[9], Kernel::Lanczos { m: 3 }, 3);
                kernelution_with(t, &dhhp_from(ids, 1), &f, &ids[7], &ids[8])
            },
        ),
        case(
            "gffn",
            |rng, v| {
                let (n, d, h) = [(3, 2, 4), (4, 3, 5), (2, 4, 3), (5, 2, 2)][v % 4];
                let p = GffnParams::init(d, h, rng)?;
                let z = if v == 2 {
                    GradInput::complex(ComplexTensor::zeros(&[n, d]))
                } else {
                    cplx(rng, &[n, d])
                };
                Ok(vec![
                    z,
                    GradInput::real(p.w_re),
                    GradInput::real(p.w_im),
                    GradInput::real(p.w_o),
                ])
            },
            |t, ids| {
                let p = GffnParams {
                    w_re: ids[1],
                    w_im: ids[2],
                    w_o: ids[3],
                };
                gffn_with(t, &p, &ids[0])
            },
        ),
        case(
            "post_scale_norm",
            |rng, v| {
                let (n, d) = [(3, 4), (1, 2), (5, 3), (2, 8)][v % 4];
                Ok(vec![
                    real(rng, &[n, d], 1.0)?,
                    cplx(rng, &[n, d]),
                    GradInput::real(real_scalar(0.5 + rng.next_f64())),
                    GradInput::real(real_scalar(rng.next_f64())),
                ])
            },
            |t, ids| post_scale_norm_with(t, &ids[2], Some(&ids[3]), &ids[0], &ids[1]),
        ),
        case(
            "positional_encode",
            |rng, v| {
                let (n, d) = [(4, 3), (6, 2), (3, 4), (5, 3)][v % 4];
                let layer = GruLayer::init(d, rng)?;
                let mut out = vec![real(rng, &[n, d], 1.0)?];
                for t in layer.w.into_iter().chain(layer.u) {
                    out.push(GradInput::real(t));
                }
                for _ in 0..3 {
                    out.push(real(rng, &[d], 0.3)?);
                }
                Ok(out)
            },
            |t, ids| {
                let layer = GruLayer {
                    w: [ids[1], ids[2], ids[3]],
                    u: [ids[4], ids[5], ids[6]],
                    b: [ids[7], ids[8], ids[9]],
                };
                let p = PositionParams {
                    table: None,
                    gru: vec![layer],
                };
                positional_encode_with(t, PeVariant::Rpe, &p, &ids[0])
            },
        ),
        case(
            "attention",
            |rng, v| {
                let (n, d, h) = [(3, 4, 2), (1, 3, 3), (5, 2, 4), (4, 4, 4)][v % 4];
                Ok(vec![
                    real(rng, &[n, d], 1.0)?,
                    real(rng, &[d, h], 1.0)?,
                    real(rng, &[d, h], 1.0)?,
                    real(rng, &[d, h], 1.0)?,
                ])
            },
            |t, ids| attention_with(t, &ids[1], &ids[2], &ids[3], &ids[0]),
        ),
        case(
            "cross_entropy",
            |rng, v| Ok(vec![real(rng, &[[2, 3, 4, 10][v % 4]], 3.0)?]),
            |t, ids| {
                let label = t.value(&ids[0]).len() - 1;
                t.unary(Op::CrossEntropy { label }, &ids[0])
            },
        ),
        converter_case(),
    ];
    if inject_fault {
        reg.push(case(
            "fault_injected",
            |rng, v| Ok(vec![cplx(rng, &[[2, 3, 4, 5][v % 4]])]),
            |t, ids| t.unary(Op::FaultInjected, &ids[0]),
        ));
    }
    reg
}
