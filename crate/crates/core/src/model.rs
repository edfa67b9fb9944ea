//! The Converter sequence classifier and its building blocks.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::{Eager, Graph};
use crate::kpm::{kpm_eval_with, ChebFilter, Kernel};
use crate::math;
use crate::ops::Op;
use crate::rng::Rng;
use crate::spectral::{eigenphase_with, EigenPhases, SirenParams};
use crate::tensor::ComplexTensor;
use crate::unitary::{dhhp_forward_with, dhhp_inverse_with, DhhpParams};

type C = Complex64;

/// Token id reserved for padding.
pub const PAD: usize = 0;

/// ScaleNorm guard against zero rows.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PeVariant {
    NoPe,
    Spe,
    Ape,
    Rpe,
}

impl PeVariant {
    pub fn name(self) -> &'static str {
        match self {
            PeVariant::NoPe => "nope",
            PeVariant::Spe => "spe",
            PeVariant::Ape => "ape",
            PeVariant::Rpe => "rpe",
        }
    }
}

impl fmt::Display for PeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            PeVariant::NoPe,
            PeVariant::Spe,
            PeVariant::Ape,
            PeVariant::Rpe,
        ]
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown positional encoding '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mechanism {
    Synvolution,
    Kernelution,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Synvolution => "synvolution",
            Mechanism::Kernelution => "kernelution",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synvolution" => Ok(Mechanism::Synvolution),
            "kernelution" => Ok(Mechanism::Kernelution),
            _ => Err(Error::InvalidConfig(format!("unknown mechanism '{s}'"))),
        }
    }
}

/// Dropout rates, each in `[0, 1)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DropoutRates {
    pub pe: f64,
    pub value: f64,
    pub gffn: f64,
    pub eigenvalue: f64,
    pub eigenvector: f64,
}

impl DropoutRates {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("pe", self.pe),
            ("value", self.value),
            ("gffn", self.gffn),
            ("eigenvalue", self.eigenvalue),
            ("eigenvector", self.eigenvector),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!(
                    "{name} dropout must lie in [0, 1), got {r}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab: usize,
    pub classes: usize,
    pub seq_len: usize,
    pub d_model: usize,
    pub d_hidden: usize,
    pub cheb_order: usize,
    pub blocks: usize,
    pub pe: PeVariant,
    pub mechanism: Mechanism,
    pub kernel: Kernel,
    pub perm_factor: usize,
    pub dropout: DropoutRates,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab", self.vocab),
            ("classes", self.classes),
            ("seq_len", self.seq_len),
            ("d_model", self.d_model),
            ("d_hidden", self.d_hidden),
            ("cheb_order", self.cheb_order),
            ("perm_factor", self.perm_factor),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.seq_len.is_multiple_of(self.perm_factor) {
            return Err(Error::Divisibility {
                n: self.seq_len,
                m: self.perm_factor,
            });
        }
        self.dropout.validate()
    }
}

/// `(softplus(ℜZ W_re) ⊙ tanh(ℑZ W_im)) W_o`.
#[derive(Clone, Debug, PartialEq)]
pub struct GffnParams<T = ComplexTensor> {
    pub w_re: T,
    pub w_im: T,
    pub w_o: T,
}

impl<T> GffnParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> GffnParams<U> {
        GffnParams {
            w_re: f(&self.w_re),
            w_im: f(&self.w_im),
            w_o: f(&self.w_o),
        }
    }
}

impl GffnParams {
    pub fn init(d: usize, d_hid: usize, rng: &mut Rng) -> Result<Self> {
        Ok(GffnParams {
            w_re: glorot(rng, d, d_hid)?,
            w_im: glorot(rng, d, d_hid)?,
            w_o: glorot(rng, d_hid, d)?,
        })
    }
}

/// One gated recurrent layer: gates `z`, `r` and candidate `h`, in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer<T = ComplexTensor> {
    pub w: [T; 3],
    pub u: [T; 3],
    pub b: [T; 3],
}

impl<T> GruLayer<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> GruLayer<U> {
        GruLayer {
            w: [f(&self.w[0]), f(&self.w[1]), f(&self.w[2])],
            u: [f(&self.u[0]), f(&self.u[1]), f(&self.u[2])],
            b: [f(&self.b[0]), f(&self.b[1]), f(&self.b[2])],
        }
    }
}

impl GruLayer {
    pub fn init(d: usize, rng: &mut Rng) -> Result<Self> {
        let r = 1.0 / math::sqrt(d as f64);
        let mut m = || rng.uniform(&[d, d], -r, r);
        let w = [m()?, m()?, m()?];
        let u = [m()?, m()?, m()?];
        let zero = ComplexTensor::zeros(&[d]);
        Ok(GruLayer {
            w,
            u,
            b: [zero.clone(), zero.clone(), zero],
        })
    }
}

const GATES: [&str; 3] = ["z", "r", "h"];

#[derive(Clone, Debug, PartialEq)]
pub struct PositionParams<T = ComplexTensor> {
    pub table: Option<T>,
    pub gru: Vec<GruLayer<T>>,
}

impl<T> PositionParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> PositionParams<U> {
        PositionParams {
            table: self.table.as_ref().map(&mut *f),
            gru: self.gru.iter().map(|l| l.map(f)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T = ComplexTensor> {
    pub wv: T,
    pub dhhp: DhhpParams<T>,
    pub siren: SirenParams<T>,
    pub filter: ChebFilter<T>,
    pub gffn: GffnParams<T>,
    pub gain1: T,
    pub gain2: T,
    pub zeta: T,
}

impl<T> BlockParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> BlockParams<U> {
        BlockParams {
            wv: f(&self.wv),
            dhhp: self.dhhp.map(f),
            siren: self.siren.map(f),
            filter: self.filter.map(f),
            gffn: self.gffn.map(f),
            gain1: f(&self.gain1),
            gain2: f(&self.gain2),
            zeta: f(&self.zeta),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConverterParams<T = ComplexTensor> {
    pub embed: T,
    pub position: PositionParams<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub cls_w: T,
    pub cls_b: T,
}

impl<T> ConverterParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ConverterParams<U> {
        ConverterParams {
            embed: f(&self.embed),
            position: self.position.map(f),
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            cls_w: f(&self.cls_w),
            cls_b: f(&self.cls_b),
        }
    }

    /// Every tensor with its dotted name, in declaration order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        out.push((String::from("embed"), &self.embed));
        if let Some(t) = &self.position.table {
            out.push((String::from("position.table"), t));
        }
        for (l, layer) in self.position.gru.iter().enumerate() {
            for (kind, set) in [("w", &layer.w), ("u", &layer.u), ("b", &layer.b)] {
                for (gate, t) in GATES.iter().zip(set) {
                    out.push((format!("position.gru.{l}.{kind}_{gate}"), t));
                }
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{i}.wv"), &b.wv));
            for (name, t) in DhhpParams::<T>::NAMES.iter().zip(b.dhhp.tensors()) {
                out.push((format!("blocks.{i}.dhhp.{name}"), t));
            }
            for (name, t) in SirenParams::<T>::NAMES.iter().zip(b.siren.tensors()) {
                out.push((format!("blocks.{i}.siren.{name}"), t));
            }
            out.push((format!("blocks.{i}.filter.w"), &b.filter.w));
            out.push((format!("blocks.{i}.gffn.w_re"), &b.gffn.w_re));
            out.push((format!("blocks.{i}.gffn.w_im"), &b.gffn.w_im));
            out.push((format!("blocks.{i}.gffn.w_o"), &b.gffn.w_o));
            out.push((format!("blocks.{i}.gain1"), &b.gain1));
            out.push((format!("blocks.{i}.gain2"), &b.gain2));
            out.push((format!("blocks.{i}.zeta"), &b.zeta));
        }
        out.push((String::from("cls_w"), &self.cls_w));
        out.push((String::from("cls_b"), &self.cls_b));
        out
    }

    /// Mutable tensors in the same order as [`ConverterParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out: Vec<&mut T> = Vec::new();
        out.push(&mut self.embed);
        if let Some(t) = &mut self.position.table {
            out.push(t);
        }
        for layer in &mut self.position.gru {
            out.extend(layer.w.iter_mut());
            out.extend(layer.u.iter_mut());
            out.extend(layer.b.iter_mut());
        }
        for b in &mut self.blocks {
            out.push(&mut b.wv);
            out.extend(b.dhhp.tensors_mut());
            out.extend(b.siren.tensors_mut());
            out.push(&mut b.filter.w);
            out.push(&mut b.gffn.w_re);
            out.push(&mut b.gffn.w_im);
            out.push(&mut b.gffn.w_o);
            out.push(&mut b.gain1);
            out.push(&mut b.gain2);
            out.push(&mut b.zeta);
        }
        out.push(&mut self.cls_w);
        out.push(&mut self.cls_b);
        out
    }

    pub fn filters(&self) -> Vec<&ChebFilter<T>> {
        self.blocks.iter().map(|b| &b.filter).collect()
    }
}

fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Result<ComplexTensor> {
    let r = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    rng.uniform(&[fan_in, fan_out], -r, r)
}

fn real_scalar(v: f64) -> ComplexTensor {
    ComplexTensor::from_parts(vec![1], vec![C::new(v, 0.0)])
}

impl ConverterParams {
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let embed = rng.uniform(&[cfg.vocab, d], -1.0, 1.0)?;
        let position = PositionParams {
            table: match cfg.pe {
                PeVariant::Ape => Some(rng.uniform(&[cfg.seq_len, d], -0.1, 0.1)?),
                _ => None,
            },
            gru: match cfg.pe {
                PeVariant::Rpe => vec![GruLayer::init(d, rng)?, GruLayer::init(d, rng)?],
                _ => Vec::new(),
            },
        };
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for _ in 0..cfg.blocks {
            blocks.push(BlockParams {
                wv: glorot(rng, d, d)?,
                dhhp: DhhpParams::random(cfg.seq_len, cfg.perm_factor, rng)?,
                siren: SirenParams::init(d, cfg.d_hidden, rng)?,
                filter: ChebFilter::identity(cfg.cheb_order, cfg.kernel)?,
                gffn: GffnParams::init(d, cfg.d_hidden, rng)?,
                gain1: real_scalar(math::sqrt(d as f64)),
                gain2: real_scalar(math::sqrt(d as f64)),
                zeta: real_scalar(0.5),
            });
        }
        Ok(ConverterParams {
            embed,
            position,
            blocks,
            cls_w: glorot(rng, d, cfg.classes)?,
            cls_b: ComplexTensor::zeros(&[cfg.classes]),
        })
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Keeps `ζ` in `[0, 1]` and the norm gains strictly positive.
    pub fn project(&mut self) {
        for b in &mut self.blocks {
            let z = &mut b.zeta.data_mut()[0];
            *z = C::new(z.re.clamp(0.0, 1.0), 0.0);
            for gain in [&mut b.gain1, &mut b.gain2] {
                let g = &mut gain.data_mut()[0];
                *g = C::new(g.re.max(1e-3), 0.0);
            }
        }
    }
}

/// `Φᴴ [e^{iπλ} ⊙ Φ V]`.
pub fn synvolution_with<G: Graph>(
    g: &mut G,
    dhhp: &DhhpParams<G::Var>,
    lam: &G::Var,
    v: &G::Var,
) -> Result<G::Var> {
    spectral_filter(g, dhhp, lam, v, None)
}

/// Synvolution with the eigenphases passed through the Chebyshev filter first.
pub fn kernelution_with<G: Graph>(
    g: &mut G,
    dhhp: &DhhpParams<G::Var>,
    filter: &ChebFilter<G::Var>,
    lam: &G::Var,
    v: &G::Var,
) -> Result<G::Var> {
    let shaped = kpm_eval_with(g, filter, lam)?;
    spectral_filter(g, dhhp, &shaped, v, None)
}

fn spectral_filter<G: Graph>(
    g: &mut G,
    dhhp: &DhhpParams<G::Var>,
    lam: &G::Var,
    v: &G::Var,
    spectral_mask: Option<ComplexTensor>,
) -> Result<G::Var> {
    let mut s = dhhp_forward_with(g, dhhp, v)?;
    if let Some(mask) = spectral_mask {
        let m = g.constant(mask);
        s = g.hadamard(&s, &m)?;
    }
    let spectrum = g.unary(Op::ExpI { scale: math::PI }, lam)?;
    let s = g.hadamard(&s, &spectrum)?;
    dhhp_inverse_with(g, dhhp, &s)
}

pub fn synvolution(
    dhhp: &DhhpParams,
    lam: &EigenPhases,
    v: &ComplexTensor,
) -> Result<ComplexTensor> {
    synvolution_with(&mut Eager, dhhp, &lam.to_tensor(), v)
}

pub fn kernelution(
    dhhp: &DhhpParams,
    filter: &ChebFilter,
    lam: &EigenPhases,
    v: &ComplexTensor,
) -> Result<ComplexTensor> {
    kernelution_with(&mut Eager, dhhp, filter, &lam.to_tensor(), v)
}

pub fn gffn_with<G: Graph>(g: &mut G, p: &GffnParams<G::Var>, z: &G::Var) -> Result<G::Var> {
    let re = g.unary(Op::RealPart, z)?;
    let im = g.unary(Op::ImagPart, z)?;
    let a = g.matmul(&re, &p.w_re)?;
    let a = g.unary(Op::Softplus, &a)?;
    let b = g.matmul(&im, &p.w_im)?;
    let b = g.unary(Op::Tanh, &b)?;
    let h = g.hadamard(&a, &b)?;
    g.matmul(&h, &p.w_o)
}

pub fn gffn(p: &GffnParams, z: &ComplexTensor) -> Result<ComplexTensor> {
    gffn_with(&mut Eager, p, z)
}

/// `ScaleNorm(residual + ζℜZ + (1 − ζ)ℑZ)` row by row; with `zeta = None` the
/// branch is taken as real and added unchanged.
pub fn post_scale_norm_with<G: Graph>(
    g: &mut G,
    gain: &G::Var,
    zeta: Option<&G::Var>,
    residual: &G::Var,
    z: &G::Var,
) -> Result<G::Var> {
    let branch = match zeta {
        Some(zeta) => {
            let re = g.unary(Op::RealPart, z)?;
            let im = g.unary(Op::ImagPart, z)?;
            let diff = g.sub(&re, &im)?;
            let mixed = g.binary(Op::MulScalar, &diff, zeta)?;
            g.add(&im, &mixed)?
        }
        None => z.clone(),
    };
    let r = g.add(residual, &branch)?;
    g.binary(Op::ScaleNorm { eps: NORM_EPS }, &r, gain)
}

pub fn post_scale_norm(
    gain: f64,
    zeta: f64,
    residual: &ComplexTensor,
    z: &ComplexTensor,
) -> Result<ComplexTensor> {
    if !(gain > 0.0) {
        return Err(Error::InvalidHyperparameter(format!(
            "norm gain must be positive, got {gain}"
        )));
    }
    post_scale_norm_with(
        &mut Eager,
        &real_scalar(gain),
        Some(&real_scalar(zeta)),
        residual,
        z,
    )
}

/// Sinusoids: even channels `sin(pos / 10000^{2i/D})`, odd channels the matching cosine.
pub fn sinusoid_table(n: usize, d: usize) -> ComplexTensor {
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        for c in 0..d {
            let i = (c / 2) as f64;
            let angle = pos as f64 / libm::pow(10000.0, 2.0 * i / d as f64);
            let v = if c % 2 == 0 {
                math::sin(angle)
            } else {
                math::cos(angle)
            };
            data.push(C::new(v, 0.0));
        }
    }
    ComplexTensor::from_parts(vec![n, d], data)
}

fn gru_layer<G: Graph>(g: &mut G, layer: &GruLayer<G::Var>, x: &G::Var) -> Result<G::Var> {
    let [wz, wr, wh] = &layer.w;
    let [uz, ur, uh] = &layer.u;
    let [bz, br, bh] = &layer.b;
    g.apply(Op::Gru, &[x, wz, wr, wh, uz, ur, uh, bz, br, bh])
}

pub fn positional_encode_with<G: Graph>(
    g: &mut G,
    variant: PeVariant,
    p: &PositionParams<G::Var>,
    e: &G::Var,
) -> Result<G::Var> {
    match variant {
        PeVariant::NoPe => Ok(e.clone()),
        PeVariant::Spe => {
            let (n, d) = g.value(e).matrix_dims("positional_encode")?;
            let table = g.constant(sinusoid_table(n, d));
            g.add(e, &table)
        }
        PeVariant::Ape => {
            let table = p.table.as_ref().ok_or_else(|| {
                Error::InvalidConfig(String::from("absolute encoding needs a position table"))
            })?;
            g.add(e, table)
        }
        PeVariant::Rpe => {
            if p.gru.is_empty() {
                return Err(Error::InvalidConfig(String::from(
                    "recurrent encoding needs at least one layer",
                )));
            }
            let mut h = e.clone();
            for layer in &p.gru {
                h = gru_layer(g, layer, &h)?;
            }
            Ok(h)
        }
    }
}

pub fn positional_encode(
    variant: PeVariant,
    p: &PositionParams,
    e: &ComplexTensor,
) -> Result<ComplexTensor> {
    positional_encode_with(&mut Eager, variant, p, e)
}

/// Pads `tokens` with [`PAD`] to length `n`, rejecting longer sequences unless `truncate`.
pub fn prepare_tokens(
    tokens: &[usize],
    n: usize,
    vocab: usize,
    truncate: bool,
) -> Result<Vec<usize>> {
    if tokens.len() > n && !truncate {
        return Err(Error::LengthOverflow {
            len: tokens.len(),
            max: n,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(Error::OutOfVocab { token: bad, vocab });
    }
    let mut ids: Vec<usize> = tokens.iter().copied().take(n).collect();
    ids.resize(n, PAD);
    Ok(ids)
}

fn dropout_mask(rng: &mut Rng, shape: &[usize], rate: f64, rescale: bool) -> ComplexTensor {
    let keep = if rescale { 1.0 / (1.0 - rate) } else { 1.0 };
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| C::new(if rng.bernoulli(rate) { 0.0 } else { keep }, 0.0))
        .collect();
    ComplexTensor::from_parts(shape.to_vec(), data)
}

fn dropout<G: Graph>(
    g: &mut G,
    x: &G::Var,
    rate: f64,
    rng: Option<&mut Rng>,
    rescale: bool,
) -> Result<G::Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let mask = dropout_mask(rng, g.value(x).shape(), rate, rescale);
            let m = g.constant(mask);
            g.hadamard(x, &m)
        }
        _ => Ok(x.clone()),
    }
}

fn block_forward<G: Graph>(
    g: &mut G,
    cfg: &ModelConfig,
    b: &BlockParams<G::Var>,
    x: &G::Var,
    mut rng: Option<&mut Rng>,
) -> Result<G::Var> {
    let rates = cfg.dropout;
    let v = g.matmul(x, &b.wv)?;
    let v = dropout(g, &v, rates.value, rng.as_deref_mut(), true)?;
    let lam = eigenphase_with(g, &b.siren, x)?;
    let lam = dropout(g, &lam, rates.eigenvalue, rng.as_deref_mut(), false)?;
    let lam = match cfg.mechanism {
        Mechanism::Synvolution => lam,
        Mechanism::Kernelution => kpm_eval_with(g, &b.filter, &lam)?,
    };
    let mask = match rng.as_deref_mut() {
        Some(r) if rates.eigenvector > 0.0 => Some(dropout_mask(
            r,
            g.value(&v).shape(),
            rates.eigenvector,
            true,
        )),
        _ => None,
    };
    let z = spectral_filter(g, &b.dhhp, &lam, &v, mask)?;
    let x1 = post_scale_norm_with(g, &b.gain1, Some(&b.zeta), x, &z)?;
    let f = gffn_with(g, &b.gffn, &z)?;
    let f = dropout(g, &f, rates.gffn, rng, true)?;
    post_scale_norm_with(g, &b.gain2, None, &x1, &f)
}

/// Logits `[1 × classes]` for one padded token sequence. Dropout is active only
/// when `rng` is given.
pub fn converter_forward_with<G: Graph>(
    g: &mut G,
    cfg: &ModelConfig,
    p: &ConverterParams<G::Var>,
    tokens: &[usize],
    mut rng: Option<&mut Rng>,
) -> Result<G::Var> {
    let ids = prepare_tokens(tokens, cfg.seq_len, cfg.vocab, false)?;
    let e = g.unary(Op::GatherRows(ids.clone()), &p.embed)?;
    let x = positional_encode_with(g, cfg.pe, &p.position, &e)?;
    let mut x = dropout(g, &x, cfg.dropout.pe, rng.as_deref_mut(), true)?;
    for b in &p.blocks {
        x = block_forward(g, cfg, b, &x, rng.as_deref_mut())?;
    }
    let count = ids.iter().filter(|&&t| t != PAD).count();
    let weights: Vec<C> = ids
        .iter()
        .map(|&t| match count {
            0 => C::new(1.0 / ids.len() as f64, 0.0),
            _ if t != PAD => C::new(1.0 / count as f64, 0.0),
            _ => C::new(0.0, 0.0),
        })
        .collect();
    let pool = g.constant(ComplexTensor::from_parts(vec![1, ids.len()], weights));
    let pooled = g.matmul(&pool, &x)?;
    let logits = g.matmul(&pooled, &p.cls_w)?;
    g.add_bias(&logits, &p.cls_b)
}

/// Real logits for one sequence, dropout off.
pub fn converter_forward(
    cfg: &ModelConfig,
    p: &ConverterParams,
    tokens: &[usize],
) -> Result<Vec<f64>> {
    Ok(converter_forward_with(&mut Eager, cfg, p, tokens, None)?.real_parts())
}

/// `softmax(X W_q (X W_k)ᵀ / √D_h) X W_v`.
pub fn attention_with<G: Graph>(
    g: &mut G,
    wq: &G::Var,
    wk: &G::Var,
    wv: &G::Var,
    x: &G::Var,
) -> Result<G::Var> {
    let (_, dh) = g.value(wq).matrix_dims("attention")?;
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let kt = g.unary(Op::Transpose, &k)?;
    let scores = g.matmul(&q, &kt)?;
    let scores = g.scale(&scores, C::new(1.0 / math::sqrt(dh as f64), 0.0))?;
    let attn = g.unary(Op::SoftmaxRows, &scores)?;
    g.matmul(&attn, &v)
}

pub fn baseline_self_attention(
    wq: &ComplexTensor,
    wk: &ComplexTensor,
    wv: &ComplexTensor,
    x: &ComplexTensor,
) -> Result<ComplexTensor> {
    attention_with(&mut Eager, wq, wk, wv, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{self, l2_norm};
    use crate::unitary::dhhp_dense_matrix;

    fn config() -> ModelConfig {
        ModelConfig {
            vocab: 6,
            classes: 3,
            seq_len: 16,
            d_model: 8,
            d_hidden: 12,
            cheb_order: 4,
            blocks: 2,
            pe: PeVariant::NoPe,
            mechanism: Mechanism::Kernelution,
            kernel: Kernel::Dirichlet,
            perm_factor: 2,
            dropout: DropoutRates::default(),
        }
    }

    fn phases(n: usize, seed: u64) -> EigenPhases {
        EigenPhases::new(Rng::new(seed).uniform_vec(n, -1.0, 1.0)).unwrap()
    }

    #[test]
    fn synvolution_identities() {
        let mut rng = Rng::new(1);
        let p = DhhpParams::random(16, 4, &mut rng).unwrap();
        let v = rng.uniform(&[16, 5], -1.0, 1.0).unwrap();
        let zero = EigenPhases::new(vec![0.0; 16]).unwrap();
        assert!(synvolution(&p, &zero, &v).unwrap().max_abs_diff(&v) < 1e-12);
        let lam = phases(16, 2);
        let y = synvolution(&p, &lam, &v).unwrap();
        assert!((l2_norm(&y) - l2_norm(&v)).abs() < 1e-10);
    }

    #[test]
    fn synvolution_matches_dense_convolution() {
        let mut rng = Rng::new(3);
        for n in [4, 9, 32] {
            let p = DhhpParams::random(n, 1, &mut rng).unwrap();
            let v = rng.complex_uniform(&[n, 3]);
            let lam = phases(n, n as u64);
            let u = dhhp_dense_matrix(&p).unwrap();
            let mut diag = ComplexTensor::zeros(&[n, n]);
            for (i, l) in lam.values().iter().enumerate() {
                diag.data_mut()[i * n + i] = C::new((PI_F * l).cos(), (PI_F * l).sin());
            }
            let uv = tensor::matmul(&u, &v).unwrap();
            let want = tensor::matmul(
                &u.conj_transpose().unwrap(),
                &tensor::matmul(&diag, &uv).unwrap(),
            )
            .unwrap();
            assert!(synvolution(&p, &lam, &v).unwrap().max_abs_diff(&want) < 1e-9);
        }
    }

    const PI_F: f64 = core::f64::consts::PI;

    #[test]
    fn kernelution_reductions() {
        let mut rng = Rng::new(4);
        let p = DhhpParams::random(12, 3, &mut rng).unwrap();
        let v = rng.complex_uniform(&[12, 4]);
        let lam = phases(12, 5);
        let id = ChebFilter::identity(7, Kernel::Dirichlet).unwrap();
        let a = kernelution(&p, &id, &lam, &v).unwrap();
        let b = synvolution(&p, &lam, &v).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
        let zero = ChebFilter::with_coefficients(&[0.0; 8], Kernel::Jackson).unwrap();
        assert!(kernelution(&p, &zero, &lam, &v).unwrap().max_abs_diff(&v) < 1e-12);
        let w = rng.uniform_vec(8, -1.0, 1.0);
        let f = ChebFilter::with_coefficients(&w, Kernel::Fejer).unwrap();
        let y = kernelution(&p, &f, &lam, &v).unwrap();
        assert!((l2_norm(&y) - l2_norm(&v)).abs() < 1e-10);
    }

    #[test]
    fn gffn_gate_cases() {
        let mut rng = Rng::new(6);
        let p = GffnParams::init(4, 7, &mut rng).unwrap();
        let zero = gffn(&p, &ComplexTensor::zeros(&[3, 4])).unwrap();
        assert!(zero.data().iter().all(|z| z.norm() == 0.0));
        let real = rng.uniform(&[3, 4], -1.0, 1.0).unwrap();
        assert!(gffn(&p, &real)
            .unwrap()
            .data()
            .iter()
            .all(|z| z.norm() == 0.0));
        let y = gffn(&p, &rng.complex_uniform(&[3, 4])).unwrap();
        assert!(y.is_exactly_real());
        assert!(y.data().iter().any(|z| z.re != 0.0));
    }

    #[test]
    fn post_scale_norm_cases() {
        let r = ComplexTensor::from_real(&[1, 2], &[3.0, 4.0]).unwrap();
        let zeros = ComplexTensor::zeros(&[1, 2]);
        let y = post_scale_norm(2.0, 1.0, &zeros, &r).unwrap();
        assert!((l2_norm(&y) - 2.0).abs() < 1e-12);
        let y = post_scale_norm(2.0, 0.5, &zeros, &zeros).unwrap();
        assert!(y.data().iter().all(|z| z.norm() == 0.0));
        let z = ComplexTensor::new(&[1, 2], vec![C::new(1.0, 5.0), C::new(-2.0, 7.0)]).unwrap();
        let with_imag = post_scale_norm(1.0, 1.0, &r, &z).unwrap();
        let without = post_scale_norm(1.0, 1.0, &r, &z.map(|c| C::new(c.re, 0.0))).unwrap();
        assert_eq!(with_imag, without);
        assert!(post_scale_norm(0.0, 0.5, &r, &z).is_err());
    }

    #[test]
    fn positional_variants() {
        let e = Rng::new(7).uniform(&[5, 4], -1.0, 1.0).unwrap();
        let empty = PositionParams {
            table: None,
            gru: Vec::new(),
        };
        assert_eq!(positional_encode(PeVariant::NoPe, &empty, &e).unwrap(), e);
        let s = positional_encode(PeVariant::Spe, &empty, &e).unwrap();
        for c in 0..4 {
            let offset = s.get(&[0, c]).re - e.get(&[0, c]).re;
            let want = if c % 2 == 0 { 0.0 } else { 1.0 };
            assert!((offset - want).abs() < 1e-15);
        }
        assert!(positional_encode(PeVariant::Ape, &empty, &e).is_err());
    }

    #[test]
    fn recurrent_encoding_with_saturated_update_gate_is_order_free() {
        let mut rng = Rng::new(8);
        let mut layers = vec![
            GruLayer::init(4, &mut rng).unwrap(),
            GruLayer::init(4, &mut rng).unwrap(),
        ];
        for l in &mut layers {
            for u in &mut l.u {
                *u = ComplexTensor::zeros(&[4, 4]);
            }
            l.w[0] = ComplexTensor::zeros(&[4, 4]);
            l.b[0] = ComplexTensor::filled(&[4], C::new(50.0, 0.0));
        }
        let p = PositionParams {
            table: None,
            gru: layers,
        };
        let e = rng.uniform(&[6, 4], -1.0, 1.0).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let mut pe_data = Vec::new();
        for &i in &perm {
            pe_data.extend_from_slice(&e.data()[i * 4..(i + 1) * 4]);
        }
        let permuted = ComplexTensor::new(&[6, 4], pe_data).unwrap();
        let a = positional_encode(PeVariant::Rpe, &p, &e).unwrap();
        let b = positional_encode(PeVariant::Rpe, &p, &permuted).unwrap();
        for (row, &i) in perm.iter().enumerate() {
            for c in 0..4 {
                assert!((b.get(&[row, c]) - a.get(&[i, c])).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let cfg = config();
        let p = ConverterParams::init(&cfg, &mut Rng::new(9)).unwrap();
        let tokens = [1, 2, 3, 4, 5, 1, 2];
        let a = converter_forward(&cfg, &p, &tokens).unwrap();
        let b = converter_forward(&cfg, &p, &tokens).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for seq in [
            vec![3; 16],
            (0..16).map(|i| 1 + i % 2).collect(),
            vec![5; 16],
            vec![],
        ] {
            let l = converter_forward(&cfg, &p, &seq).unwrap();
            assert!(l.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn forward_input_errors() {
        let cfg = config();
        let p = ConverterParams::init(&cfg, &mut Rng::new(10)).unwrap();
        assert_eq!(
            converter_forward(&cfg, &p, &[1, 9]).unwrap_err(),
            Error::OutOfVocab { token: 9, vocab: 6 }
        );
        assert_eq!(
            converter_forward(&cfg, &p, &[1; 17]).unwrap_err(),
            Error::LengthOverflow { len: 17, max: 16 }
        );
        assert_eq!(prepare_tokens(&[1; 17], 16, 6, true).unwrap(), vec![1; 16]);
    }

    #[test]
    fn token_order_matters_without_position_encoding() {
        let cfg = config();
        let p = ConverterParams::init(&cfg, &mut Rng::new(11)).unwrap();
        let mut rng = Rng::new(12);
        let mut differ = 0;
        for _ in 0..5 {
            let mut t: Vec<usize> = (0..16).map(|_| 1 + rng.below(5)).collect();
            let a = converter_forward(&cfg, &p, &t).unwrap();
            rng.shuffle(&mut t);
            let b = converter_forward(&cfg, &p, &t).unwrap();
            if a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9) {
                differ += 1;
            }
        }
        assert!(differ >= 4);
    }

    #[test]
    fn every_variant_runs() {
        for pe in [
            PeVariant::NoPe,
            PeVariant::Spe,
            PeVariant::Ape,
            PeVariant::Rpe,
        ] {
            for mechanism in [Mechanism::Synvolution, Mechanism::Kernelution] {
                let cfg = ModelConfig {
                    pe,
                    mechanism,
                    ..config()
                };
                let p = ConverterParams::init(&cfg, &mut Rng::new(13)).unwrap();
                let names = p.named();
                let mut q = p.clone();
                assert_eq!(names.len(), q.tensors_mut().len());
                let l = converter_forward(&cfg, &p, &[1, 2, 3]).unwrap();
                assert!(l.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn projection_clamps_mixing_and_gains() {
        let cfg = config();
        let mut p = ConverterParams::init(&cfg, &mut Rng::new(14)).unwrap();
        p.blocks[0].zeta = real_scalar(1.7);
        p.blocks[1].zeta = real_scalar(-0.2);
        p.blocks[0].gain1 = real_scalar(-3.0);
        p.project();
        assert_eq!(p.blocks[0].zeta.data()[0].re, 1.0);
        assert_eq!(p.blocks[1].zeta.data()[0].re, 0.0);
        assert!(p.blocks[0].gain1.data()[0].re > 0.0);
    }

    #[test]
    fn attention_cases() {
        let mut rng = Rng::new(15);
        let (wq, wk, wv) = (
            rng.uniform(&[4, 3], -1.0, 1.0).unwrap(),
            rng.uniform(&[4, 3], -1.0, 1.0).unwrap(),
            rng.uniform(&[4, 3], -1.0, 1.0).unwrap(),
        );
        let x1 = rng.uniform(&[1, 4], -1.0, 1.0).unwrap();
        let y = baseline_self_attention(&wq, &wk, &wv, &x1).unwrap();
        assert!(y.max_abs_diff(&tensor::matmul(&x1, &wv).unwrap()) < 1e-15);

        let x = rng.uniform(&[3, 4], -1.0, 1.0).unwrap();
        let q = tensor::matmul(&x, &wq).unwrap().real_parts();
        let k = tensor::matmul(&x, &wk).unwrap().real_parts();
        let v = tensor::matmul(&x, &wv).unwrap().real_parts();
        let got = baseline_self_attention(&wq, &wk, &wv, &x).unwrap();
        for i in 0..3 {
            let s: Vec<f64> = (0..3)
                .map(|j| (0..3).map(|c| q[i * 3 + c] * k[j * 3 + c]).sum::<f64>() / 3f64.sqrt())
                .collect();
            let z: f64 = s.iter().map(|v| v.exp()).sum();
            let a: Vec<f64> = s.iter().map(|v| v.exp() / z).collect();
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for c in 0..3 {
                let want: f64 = (0..3).map(|j| a[j] * v[j * 3 + c]).sum();
                assert!((got.get(&[i, c]).re - want).abs() < 1e-12);
            }
        }
    }
}
