//! Test functions, the inner products of the representation spaces, and their
//! numerical evaluation by tensor Gauss–Legendre quadrature or seeded Monte Carlo.
//!
//! Coordinates of a function are a list of scalars, each real or complex. A
//! complex coordinate contributes two real integration axes (real part first),
//! and all measures are Lebesgue measure on those axes.
//!
//! Kernel inner products pair every coordinate of `x` with the same coordinate
//! of `y` except the fiber coordinates, which are integrated twice:
//! `∫ f(x) conj h(y) K(x_fib − y_fib) dx dy_fib`.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::charmod::HalfPlane;
use crate::error::{Error, Result};
use crate::matcore::{rng_for, Field, C64};
use crate::report::{Tally, VerificationReport};

/// Kernel arguments closer than this to the singular set are rejected.
pub const SINGULARITY_GUARD: f64 = 1e-10;
/// Monte Carlo samples per deterministic work unit.
pub const MC_CHUNK: usize = 2048;
/// Largest tensor grid evaluated.
pub const TENSOR_BUDGET: usize = 4_000_000;
/// Default Gram eigenvalue floor.
pub const PSD_FLOOR: f64 = 1e-6;
/// Levels used for the Hardy norm.
pub const HARDY_LEVELS: [f64; 3] = [1e-1, 1e-2, 1e-3];
/// Default tensor grid.
pub const DEFAULT_POINTS: usize = 32;

const CR_STEP: f64 = 1e-5;
const AUTO_BOX_WIDTHS: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayClass {
    GaussianBump,
    HalfPlaneHolomorphic,
    HardyBoundary,
}

/// Where a function's mass sits along one real axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AxisHint {
    /// `|f|²` falls off like `exp(−(t − center)²/width²)`.
    Gaussian { center: f64, width: f64 },
    /// Polynomial tails on the scale `scale`.
    Algebraic { center: f64, scale: f64 },
}

impl AxisHint {
    fn center(self) -> f64 {
        match self {
            AxisHint::Gaussian { center, .. } | AxisHint::Algebraic { center, .. } => center,
        }
    }

    fn scale(self) -> f64 {
        match self {
            AxisHint::Gaussian { width, .. } => width,
            AxisHint::Algebraic { scale, .. } => scale,
        }
    }

    /// One hint covering all of `hints`.
    pub fn combine(hints: &[AxisHint]) -> AxisHint {
        let lo = hints.iter().map(|h| h.center()).fold(f64::INFINITY, f64::min);
        let hi = hints.iter().map(|h| h.center()).fold(f64::NEG_INFINITY, f64::max);
        let center = 0.5 * (lo + hi);
        let scale = hints.iter().map(|h| h.scale()).fold(0.0, f64::max) + 0.5 * (hi - lo);
        if hints.iter().all(|h| matches!(h, AxisHint::Gaussian { .. })) {
            AxisHint::Gaussian { center, width: scale }
        } else {
            AxisHint::Algebraic { center, scale }
        }
    }
}

/// A function on coordinate space with a declared decay class.
pub trait TestFunction: Send + Sync {
    fn coords(&self) -> &[Field];

    fn arity(&self) -> usize {
        self.coords().len()
    }

    fn eval(&self, x: &[C64]) -> C64;

    fn decay_class(&self) -> DecayClass;

    /// Coordinates in which the function is holomorphic.
    fn analytic_vars(&self) -> Vec<usize> {
        Vec::new()
    }

    /// Half-planes on which holomorphy holds.
    fn analytic_sides(&self) -> Vec<HalfPlane> {
        vec![HalfPlane::Upper, HalfPlane::Lower]
    }

    /// One hint per real axis.
    fn hints(&self) -> Vec<AxisHint>;

    fn label(&self) -> String;
}

pub fn real_dim(coords: &[Field]) -> usize {
    coords.iter().map(|f| f.real_dim()).sum()
}

/// Coordinates from real axes.
pub fn from_real(coords: &[Field], t: &[f64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(coords.len());
    let mut i = 0;
    for f in coords {
        match f {
            Field::Real => {
                out.push(C64::new(t[i], 0.0));
                i += 1;
            }
            Field::Complex => {
                out.push(C64::new(t[i], t[i + 1]));
                i += 2;
            }
        }
    }
    out
}

/// Real axes from coordinates.
pub fn to_real(coords: &[Field], x: &[C64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(real_dim(coords));
    for (f, v) in coords.iter().zip(x) {
        out.push(v.re);
        if *f == Field::Complex {
            out.push(v.im);
        }
    }
    out
}

/// Index of the first real axis of each coordinate.
fn axis_starts(coords: &[Field]) -> Vec<usize> {
    let mut starts = Vec::with_capacity(coords.len());
    let mut i = 0;
    for f in coords {
        starts.push(i);
        i += f.real_dim();
    }
    starts
}

/// `Π (x_i − c_i)^{d_i} · exp(−Σ |x_i − c_i|² / 2w²) · exp(iω Σ Re(x_i − c_i))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBump {
    coords: Vec<Field>,
    center: Vec<C64>,
    width: f64,
    degrees: Vec<u32>,
    frequency: f64,
}

impl GaussianBump {
    pub fn new(coords: Vec<Field>, center: Vec<C64>, width: f64) -> Result<GaussianBump> {
        if center.len() != coords.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} centers for {} coordinates",
                center.len(),
                coords.len()
            )));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidParams(format!("bump width {width}")));
        }
        if coords.iter().zip(&center).any(|(f, c)| *f == Field::Real && c.im != 0.0) {
            return Err(Error::InvalidParams("complex center on a real coordinate".into()));
        }
        let degrees = vec![0; coords.len()];
        Ok(GaussianBump { coords, center, width, degrees, frequency: 0.0 })
    }

    /// Standard bump centered at the origin.
    pub fn standard(coords: Vec<Field>) -> GaussianBump {
        let center = vec![C64::new(0.0, 0.0); coords.len()];
        GaussianBump::new(coords, center, 1.0 / 2f64.sqrt()).expect("valid bump")
    }

    pub fn with_degrees(mut self, degrees: Vec<u32>) -> Result<GaussianBump> {
        if degrees.len() != self.coords.len() {
            return Err(Error::DimensionMismatch("degree list length".into()));
        }
        self.degrees = degrees;
        Ok(self)
    }

    pub fn with_frequency(mut self, frequency: f64) -> GaussianBump {
        self.frequency = frequency;
        self
    }

    pub fn center(&self) -> &[C64] {
        &self.center
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// `(C, c)` with `|f(x)| ≤ C·exp(−c‖x‖²)`.
    pub fn declared_bound(&self) -> (f64, f64) {
        let w2 = self.width * self.width;
        let c_shift = 1.0 / (4.0 * w2);
        let mut big_c = 1.0;
        for &d in &self.degrees {
            if d > 0 {
                let d = d as f64;
                // max_t t^d exp(−t²/4w²)
                big_c *= (2.0 * d * w2).powf(d / 2.0) * (-d / 2.0).exp();
            }
        }
        let c_norm2: f64 = self.center.iter().map(|c| c.norm_sqr()).sum();
        // ‖x − c‖² ≥ ‖x‖²/2 − ‖c‖²
        (big_c * (c_shift * c_norm2).exp(), c_shift / 2.0)
    }
}

impl TestFunction for GaussianBump {
    fn coords(&self) -> &[Field] {
        &self.coords
    }

    fn eval(&self, x: &[C64]) -> C64 {
        let mut poly = C64::new(1.0, 0.0);
        let mut r2 = 0.0;
        let mut phase = 0.0;
        for i in 0..self.coords.len() {
            let d = x[i] - self.center[i];
            r2 += d.norm_sqr();
            phase += d.re;
            if self.degrees[i] > 0 {
                poly *= d.powu(self.degrees[i]);
            }
        }
        let env = (-r2 / (2.0 * self.width * self.width)).exp();
        poly * C64::from_polar(env, self.frequency * phase)
    }

    fn decay_class(&self) -> DecayClass {
        DecayClass::GaussianBump
    }

    fn hints(&self) -> Vec<AxisHint> {
        let mut out = Vec::new();
        for (f, c) in self.coords.iter().zip(&self.center) {
            out.push(AxisHint::Gaussian { center: c.re, width: self.width });
            if *f == Field::Complex {
                out.push(AxisHint::Gaussian { center: c.im, width: self.width });
            }
        }
        out
    }

    fn label(&self) -> String {
        let c: Vec<String> = self.center.iter().map(|c| format!("{:.2}{:+.2}i", c.re, c.im)).collect();
        format!("bump[c=({}),w={:.2},deg={:?},freq={:.2}]", c.join(","), self.width, self.degrees, self.frequency)
    }
}

/// `coeff·(z − pole)^{−order}` on one complex coordinate, holomorphic on `side`.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfPlaneRational {
    coords: [Field; 1],
    pole: C64,
    order: u32,
    coeff: C64,
    side: HalfPlane,
    class: DecayClass,
}

impl HalfPlaneRational {
    pub fn new(pole: C64, order: u32, side: HalfPlane) -> Result<HalfPlaneRational> {
        if side.contains(pole) || pole.im == 0.0 {
            return Err(Error::InvalidParams(format!("pole {pole} must lie strictly off the {side:?} half-plane")));
        }
        if order == 0 {
            return Err(Error::InvalidParams("order must be positive".into()));
        }
        Ok(HalfPlaneRational {
            coords: [Field::Complex],
            pole,
            order,
            coeff: C64::new(1.0, 0.0),
            side,
            class: DecayClass::HalfPlaneHolomorphic,
        })
    }

    /// Same function, declared as a Hardy-space boundary function.
    pub fn hardy(pole: C64, order: u32, side: HalfPlane) -> Result<HalfPlaneRational> {
        let mut f = HalfPlaneRational::new(pole, order, side)?;
        f.class = DecayClass::HardyBoundary;
        Ok(f)
    }

    pub fn with_coeff(mut self, coeff: C64) -> HalfPlaneRational {
        self.coeff = coeff;
        self
    }

    pub fn pole(&self) -> C64 {
        self.pole
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn side(&self) -> HalfPlane {
        self.side
    }

    /// `∫ |f(x + i·sign·ε)|² dx` in closed form for `order = 2`.
    pub fn level_integral_order2(&self, eps: f64) -> Option<f64> {
        (self.order == 2).then(|| {
            let a = (self.side.sign() * eps - self.pole.im).abs();
            self.coeff.norm_sqr() * PI / (2.0 * a * a * a)
        })
    }
}

impl TestFunction for HalfPlaneRational {
    fn coords(&self) -> &[Field] {
        &self.coords
    }

    fn eval(&self, x: &[C64]) -> C64 {
        self.coeff * (x[0] - self.pole).powi(-(self.order as i32))
    }

    fn decay_class(&self) -> DecayClass {
        self.class
    }

    fn analytic_vars(&self) -> Vec<usize> {
        vec![0]
    }

    fn analytic_sides(&self) -> Vec<HalfPlane> {
        vec![self.side]
    }

    fn hints(&self) -> Vec<AxisHint> {
        let scale = self.pole.im.abs();
        vec![
            AxisHint::Algebraic { center: self.pole.re, scale },
            AxisHint::Algebraic { center: 0.0, scale },
        ]
    }

    fn label(&self) -> String {
        format!("rational[p={:.2}{:+.2}i,j={},{:?}]", self.pole.re, self.pole.im, self.order, self.side)
    }
}

/// `r(z₂₁)·bump(x₃₁, x₃₂)` where `r` is a rational function holomorphic on each
/// half-plane separately: `(z − p₊)^{−j}` above the axis, `c·(z − p₋)^{−j}` below.
#[derive(Clone, Debug, PartialEq)]
pub struct GgFunction {
    coords: [Field; 3],
    upper_pole: C64,
    lower_pole: C64,
    order: u32,
    lower_coeff: C64,
    base: GaussianBump,
}

impl GgFunction {
    pub fn new(upper_pole: C64, lower_pole: C64, order: u32, lower_coeff: C64, base: GaussianBump) -> Result<GgFunction> {
        if upper_pole.im >= 0.0 || lower_pole.im <= 0.0 {
            return Err(Error::InvalidParams("poles must lie across the axis from their half-plane".into()));
        }
        if order == 0 {
            return Err(Error::InvalidParams("order must be positive".into()));
        }
        if base.coords() != [Field::Real, Field::Real] {
            return Err(Error::DimensionMismatch("base bump must be on two real coordinates".into()));
        }
        Ok(GgFunction {
            coords: [Field::Complex, Field::Real, Field::Real],
            upper_pole,
            lower_pole,
            order,
            lower_coeff,
            base,
        })
    }
}

impl TestFunction for GgFunction {
    fn coords(&self) -> &[Field] {
        &self.coords
    }

    fn eval(&self, x: &[C64]) -> C64 {
        let z = x[0];
        let j = -(self.order as i32);
        let r = if z.im > 0.0 {
            (z - self.upper_pole).powi(j)
        } else if z.im < 0.0 {
            self.lower_coeff * (z - self.lower_pole).powi(j)
        } else {
            C64::new(0.0, 0.0)
        };
        r * self.base.eval(&x[1..])
    }

    fn decay_class(&self) -> DecayClass {
        DecayClass::HalfPlaneHolomorphic
    }

    fn analytic_vars(&self) -> Vec<usize> {
        vec![0]
    }

    fn hints(&self) -> Vec<AxisHint> {
        let scale = self.upper_pole.im.abs().max(self.lower_pole.im.abs());
        let center = 0.5 * (self.upper_pole.re + self.lower_pole.re);
        let mut h = vec![AxisHint::Algebraic { center, scale }, AxisHint::Algebraic { center: 0.0, scale }];
        h.extend(self.base.hints());
        h
    }

    fn label(&self) -> String {
        format!(
            "gg[p+={:.2}{:+.2}i,p-={:.2}{:+.2}i,j={},{}]",
            self.upper_pole.re,
            self.upper_pole.im,
            self.lower_pole.re,
            self.lower_pole.im,
            self.order,
            self.base.label()
        )
    }
}

/// The zero function on the given coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroFunction {
    coords: Vec<Field>,
    class: DecayClass,
}

impl ZeroFunction {
    pub fn new(coords: Vec<Field>, class: DecayClass) -> ZeroFunction {
        ZeroFunction { coords, class }
    }
}

impl TestFunction for ZeroFunction {
    fn coords(&self) -> &[Field] {
        &self.coords
    }

    fn eval(&self, _x: &[C64]) -> C64 {
        C64::new(0.0, 0.0)
    }

    fn decay_class(&self) -> DecayClass {
        self.class
    }

    fn analytic_vars(&self) -> Vec<usize> {
        if self.class == DecayClass::GaussianBump {
            Vec::new()
        } else {
            self.coords.iter().enumerate().filter(|(_, f)| **f == Field::Complex).map(|(i, _)| i).collect()
        }
    }

    fn hints(&self) -> Vec<AxisHint> {
        vec![AxisHint::Gaussian { center: 0.0, width: 1.0 }; real_dim(&self.coords)]
    }

    fn label(&self) -> String {
        "zero".into()
    }
}

/// Bumps with distinct centers, some with polynomial prefactors or oscillation.
pub fn gaussian_family(coords: &[Field], count: usize) -> Vec<GaussianBump> {
    let n = coords.len();
    (0..count)
        .map(|k| {
            let shift = 0.55 * (k as f64 - (count as f64 - 1.0) / 2.0);
            let center: Vec<C64> = coords
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let re = shift * if i % 2 == 0 { 1.0 } else { -0.5 };
                    let im = if *f == Field::Complex { 0.3 * shift * ((i % 3) as f64 - 1.0) } else { 0.0 };
                    C64::new(re, im)
                })
                .collect();
            let width = 0.8 + 0.05 * k as f64;
            let mut degrees = vec![0; n];
            if k % 2 == 1 && n > 0 {
                degrees[k % n] = 1;
            }
            GaussianBump::new(coords.to_vec(), center, width)
                .and_then(|b| b.with_degrees(degrees))
                .expect("family bump")
                .with_frequency(0.25 * k as f64)
        })
        .collect()
}

/// `(z − p_k)^{−order}` with poles spread below (or above) the axis.
pub fn halfplane_family(side: HalfPlane, order: u32, count: usize, hardy: bool) -> Vec<HalfPlaneRational> {
    (0..count)
        .map(|k| {
            let pole = C64::new(0.5 * (k as f64 - (count as f64 - 1.0) / 2.0), -side.sign() * (1.0 + 0.4 * k as f64));
            if hardy {
                HalfPlaneRational::hardy(pole, order, side).expect("family member")
            } else {
                HalfPlaneRational::new(pole, order, side).expect("family member")
            }
        })
        .collect()
}

/// Functions on `(z₂₁, x₃₁, x₃₂)` for the weight with parameter `n1`.
pub fn gg_family(n1: u32, count: usize) -> Vec<GgFunction> {
    let bases = gaussian_family(&[Field::Real, Field::Real], count);
    bases
        .into_iter()
        .enumerate()
        .map(|(k, base)| {
            let k = k as f64;
            let up = C64::new(0.3 * k, -(1.0 + 0.3 * k));
            let down = C64::new(-0.2 * k, 1.2 + 0.2 * k);
            GgFunction::new(up, down, n1 + 1, C64::new(0.5, 0.25 * k), base).expect("family member")
        })
        .collect()
}

/// Which weight or kernel an inner product uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InnerKind {
    PlainL2,
    /// `prefactor·Π_i |x_i − y_i|^{powers_i}` over the fiber coordinates.
    RieszKernel { powers: Vec<f64>, prefactor: f64 },
    /// `|Im z|^{s−1}` on one half-plane.
    BergmanWeight { s: u32, side: HalfPlane },
    /// Boundary values on the real line.
    HardyBoundary { side: HalfPlane },
    /// `|Im z₂₁|^{n₁−2}/Γ(n₁−1)` on both half-planes.
    GgWeight { n1: u32 },
    /// `|det(X − Y)|^{2σ−4}` on 2×2 complex blocks.
    DetKernel { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerProductSpec {
    pub kind: InnerKind,
    pub coords: Vec<Field>,
    /// Coordinates integrated against the kernel (empty for weighted L² kinds).
    pub fibers: Vec<usize>,
}

impl InnerProductSpec {
    pub fn plain(coords: Vec<Field>) -> InnerProductSpec {
        InnerProductSpec { kind: InnerKind::PlainL2, coords, fibers: Vec::new() }
    }

    pub fn riesz(coords: Vec<Field>, fibers: Vec<usize>, powers: Vec<f64>, prefactor: f64) -> Result<InnerProductSpec> {
        let s = InnerProductSpec { kind: InnerKind::RieszKernel { powers, prefactor }, coords, fibers };
        s.validate()?;
        Ok(s)
    }

    /// Complementary-series kernel `|x − y|^{σ−1}/Γ(σ)` on the real line.
    pub fn sl2r_complementary(sigma: f64) -> InnerProductSpec {
        InnerProductSpec {
            kind: InnerKind::RieszKernel { powers: vec![sigma - 1.0], prefactor: 1.0 / gamma(sigma) },
            coords: vec![Field::Real],
            fibers: vec![0],
        }
    }

    /// Complementary-series kernel `|z − w|^{2σ−2}` on the plane.
    pub fn sl2c_complementary(sigma: f64) -> InnerProductSpec {
        InnerProductSpec {
            kind: InnerKind::RieszKernel { powers: vec![2.0 * sigma - 2.0], prefactor: 1.0 },
            coords: vec![Field::Complex],
            fibers: vec![0],
        }
    }

    pub fn bergman(s: u32, side: HalfPlane) -> InnerProductSpec {
        InnerProductSpec { kind: InnerKind::BergmanWeight { s, side }, coords: vec![Field::Complex], fibers: Vec::new() }
    }

    pub fn hardy(side: HalfPlane) -> InnerProductSpec {
        InnerProductSpec { kind: InnerKind::HardyBoundary { side }, coords: vec![Field::Complex], fibers: Vec::new() }
    }

    pub fn gg(n1: u32) -> InnerProductSpec {
        InnerProductSpec {
            kind: InnerKind::GgWeight { n1 },
            coords: vec![Field::Complex, Field::Real, Field::Real],
            fibers: Vec::new(),
        }
    }

    /// Kernel on `(z₃₁, z₃₂, z₄₁, z₄₂)`.
    pub fn det_kernel(sigma: f64) -> InnerProductSpec {
        InnerProductSpec { kind: InnerKind::DetKernel { sigma }, coords: vec![Field::Complex; 4], fibers: vec![0, 1, 2, 3] }
    }

    pub fn is_kernel(&self) -> bool {
        matches!(self.kind, InnerKind::RieszKernel { .. } | InnerKind::DetKernel { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.coords.len();
        if self.fibers.iter().any(|&i| i >= n) {
            return Err(Error::InvalidIndex(format!("fiber index out of range for {n} coordinates")));
        }
        match &self.kind {
            InnerKind::PlainL2 => {}
            InnerKind::RieszKernel { powers, prefactor } => {
                if powers.len() != self.fibers.len() || self.fibers.is_empty() {
                    return Err(Error::DimensionMismatch("one kernel power per fiber".into()));
                }
                if !(prefactor.is_finite() && *prefactor > 0.0) {
                    return Err(Error::InvalidParams(format!("kernel prefactor {prefactor}")));
                }
            }
            InnerKind::BergmanWeight { s, .. } => {
                if *s == 0 || self.coords != [Field::Complex] {
                    return Err(Error::InvalidParams("Bergman weight needs s ≥ 1 on one complex coordinate".into()));
                }
            }
            InnerKind::HardyBoundary { .. } => {
                if self.coords != [Field::Complex] {
                    return Err(Error::InvalidParams("Hardy norm needs one complex coordinate".into()));
                }
            }
            InnerKind::GgWeight { n1 } => {
                if *n1 < 2 {
                    return Err(Error::InvalidParams(format!("n1 = {n1}: Γ(n1 − 1) needs n1 ≥ 2")));
                }
                if self.coords != [Field::Complex, Field::Real, Field::Real] {
                    return Err(Error::InvalidParams("GG weight lives on (z21, x31, x32)".into()));
                }
            }
            InnerKind::DetKernel { sigma } => {
                if self.coords.len() != 4 || self.fibers != [0, 1, 2, 3] {
                    return Err(Error::InvalidParams("determinant kernel lives on four paired coordinates".into()));
                }
                if !(*sigma > 0.0 && *sigma < 1.0) {
                    return Err(Error::InvalidParams(format!("sigma = {sigma} outside (0, 1)")));
                }
            }
        }
        Ok(())
    }

    /// Rejects kernels that are not locally integrable near the diagonal.
    pub fn check_integrable(&self) -> Result<()> {
        match &self.kind {
            InnerKind::RieszKernel { powers, .. } => {
                for (&i, &p) in self.fibers.iter().zip(powers) {
                    let r = self.coords[i].real_dim() as f64;
                    if -p >= r {
                        return Err(Error::KernelNotIntegrable(format!(
                            "|d|^{p} in real dimension {r} diverges at d = 0"
                        )));
                    }
                }
                Ok(())
            }
            InnerKind::DetKernel { sigma } => {
                // The zero set of det is a smooth hypersurface of real codimension 2
                // away from the origin; transversally the kernel is |t|^{2σ−4}.
                let p = 2.0 * sigma - 4.0;
                if p <= -2.0 {
                    Err(Error::KernelNotIntegrable(format!(
                        "|det(X−Y)|^{p:.3} behaves as |t|^{p:.3} across det = 0 (real codimension 2) and is not locally integrable for σ < 1"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Weight of the weighted-L² kinds at `x` (1 for kernel kinds).
    pub fn weight(&self, x: &[C64]) -> f64 {
        match &self.kind {
            InnerKind::BergmanWeight { s, side } => {
                let y = x[0].im * side.sign();
                if y > 0.0 {
                    y.powi(*s as i32 - 1)
                } else {
                    0.0
                }
            }
            InnerKind::GgWeight { n1 } => {
                let y = x[0].im.abs();
                if y > 0.0 {
                    y.powi(*n1 as i32 - 2) / gamma(*n1 as f64 - 1.0)
                } else {
                    0.0
                }
            }
            _ => 1.0,
        }
    }

    /// Kernel value between `x` and `y` (1 for non-kernel kinds).
    pub fn kernel(&self, x: &[C64], y: &[C64]) -> Result<f64> {
        match &self.kind {
            InnerKind::RieszKernel { powers, prefactor } => {
                let mut k = *prefactor;
                for (&i, &p) in self.fibers.iter().zip(powers) {
                    let d = (x[i] - y[i]).norm();
                    if d < SINGULARITY_GUARD {
                        return Err(Error::KernelSingular);
                    }
                    k *= d.powf(p);
                }
                Ok(k)
            }
            InnerKind::DetKernel { sigma } => {
                let d = (x[0] - y[0]) * (x[3] - y[3]) - (x[1] - y[1]) * (x[2] - y[2]);
                let d = d.norm();
                if d < SINGULARITY_GUARD {
                    return Err(Error::KernelSingular);
                }
                Ok(d.powf(2.0 * sigma - 4.0))
            }
            _ => Ok(1.0),
        }
    }

    fn check_function(&self, f: &dyn TestFunction) -> Result<()> {
        if f.coords() != self.coords.as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "{} has coordinates {:?}, space expects {:?}",
                f.label(),
                f.coords(),
                self.coords
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Scheme {
    /// `box_radius: None` boxes Gaussian axes at five widths and maps algebraic
    /// axes to a bounded interval by `t = c + s·tan θ`.
    TensorGaussLegendre { points_per_axis: usize, box_radius: Option<f64> },
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    StepRefinement,
    VarianceEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub scheme: Scheme,
    pub error_mode: ErrorMode,
    /// Relative error budget; exceeding it is reported as non-convergence.
    #[serde(default)]
    pub tolerance: Option<f64>,
}

impl QuadratureConfig {
    pub fn tensor(points_per_axis: usize, box_radius: Option<f64>) -> QuadratureConfig {
        QuadratureConfig {
            scheme: Scheme::TensorGaussLegendre { points_per_axis, box_radius },
            error_mode: ErrorMode::StepRefinement,
            tolerance: None,
        }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> QuadratureConfig {
        QuadratureConfig {
            scheme: Scheme::MonteCarlo { samples, seed },
            error_mode: ErrorMode::VarianceEstimate,
            tolerance: None,
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> QuadratureConfig {
        self.tolerance = Some(tol);
        self
    }

    fn validate(&self) -> Result<()> {
        match (&self.scheme, self.error_mode) {
            (Scheme::TensorGaussLegendre { points_per_axis, box_radius }, ErrorMode::StepRefinement) => {
                if *points_per_axis < 4 {
                    return Err(Error::InvalidParams("at least 4 points per axis".into()));
                }
                if box_radius.is_some_and(|r| !(r > 0.0)) {
                    return Err(Error::InvalidParams("box radius must be positive".into()));
                }
                Ok(())
            }
            (Scheme::MonteCarlo { samples, .. }, ErrorMode::VarianceEstimate) => {
                if *samples < 2 {
                    return Err(Error::InvalidParams("at least 2 samples".into()));
                }
                Ok(())
            }
            _ => Err(Error::InvalidParams(
                "step refinement pairs with tensor grids, variance estimates with Monte Carlo".into(),
            )),
        }
    }
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig::tensor(DEFAULT_POINTS, None)
    }
}

/// An integral value with its a posteriori error estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: C64,
    pub error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Domain {
    Line,
    Half(f64),
    /// Both open half-lines.
    Split,
}

/// A point of the integration domain: `x` and, for kernel spaces, `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub x: Vec<C64>,
    pub y: Option<Vec<C64>>,
}

#[derive(Clone, Debug)]
struct PairGroup {
    coord: usize,
    axis: usize,
    dim: usize,
    /// Kernel singularity order `|d|^{−a}`.
    a: f64,
    tau: f64,
}

/// Integration layout of a space for a given set of functions.
#[derive(Clone, Debug)]
pub struct Layout {
    coords: Vec<Field>,
    domains: Vec<Domain>,
    hints: Vec<AxisHint>,
    pairs: Vec<PairGroup>,
    /// Imaginary part fixed on a boundary line (Hardy kind).
    level: Option<f64>,
}

impl Layout {
    /// Layout for `spec` tuned to the given functions.
    pub fn new(spec: &InnerProductSpec, fs: &[&dyn TestFunction]) -> Result<Layout> {
        spec.validate()?;
        spec.check_integrable()?;
        if fs.is_empty() {
            return Err(Error::InvalidParams("no functions".into()));
        }
        for f in fs {
            spec.check_function(*f)?;
        }
        let dim = real_dim(&spec.coords);
        let all: Vec<Vec<AxisHint>> = fs.iter().map(|f| f.hints()).collect();
        let hints: Vec<AxisHint> = (0..dim)
            .map(|i| AxisHint::combine(&all.iter().map(|h| h[i]).collect::<Vec<_>>()))
            .collect();
        let mut domains = vec![Domain::Line; dim];
        let mut level = None;
        match &spec.kind {
            InnerKind::BergmanWeight { side, .. } => domains[1] = Domain::Half(side.sign()),
            InnerKind::GgWeight { .. } => domains[1] = Domain::Split,
            InnerKind::HardyBoundary { .. } => level = Some(0.0),
            _ => {}
        }
        let starts = axis_starts(&spec.coords);
        let mut pairs = Vec::new();
        match &spec.kind {
            InnerKind::RieszKernel { powers, .. } => {
                for (&c, &p) in spec.fibers.iter().zip(powers) {
                    let axis = starts[c];
                    let dim = spec.coords[c].real_dim();
                    let tau = (0..dim).map(|k| hints[axis + k].scale()).fold(0.0, f64::max);
                    pairs.push(PairGroup { coord: c, axis, dim, a: -p, tau });
                }
            }
            InnerKind::DetKernel { .. } => {
                return Err(Error::Unsupported("determinant kernel has no integration layout".into()));
            }
            _ => {}
        }
        let (hints, domains) = match level {
            // Hardy: only the real axis is integrated.
            Some(_) => (vec![hints[0]], vec![Domain::Line]),
            None => (hints, domains),
        };
        Ok(Layout { coords: spec.coords.clone(), domains, hints, pairs, level })
    }

    /// Number of real integration axes.
    pub fn dim(&self) -> usize {
        self.domains.len() + self.pairs.iter().map(|p| p.dim).sum::<usize>()
    }

    fn point(&self, t: &[f64]) -> Point {
        let d = self.domains.len();
        let x = match self.level {
            Some(eps) => vec![C64::new(t[0], eps)],
            None => from_real(&self.coords, &t[..d]),
        };
        let y = (!self.pairs.is_empty()).then(|| {
            let mut y = x.clone();
            let mut k = d;
            for p in &self.pairs {
                y[p.coord] = if p.dim == 1 { C64::new(t[k], 0.0) } else { C64::new(t[k], t[k + 1]) };
                k += p.dim;
            }
            y
        });
        Point { x, y }
    }

    /// Every real axis as (domain, hint), pair axes last.
    fn all_axes(&self) -> Vec<(Domain, AxisHint, bool)> {
        let mut out: Vec<_> = self.domains.iter().zip(&self.hints).map(|(d, h)| (*d, *h, false)).collect();
        for p in &self.pairs {
            for k in 0..p.dim {
                out.push((self.domains[p.axis + k], self.hints[p.axis + k], true));
            }
        }
        out
    }
}

fn gl_nodes(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n).expect("positive node count"));
    rule.iter().map(|(x, w)| (*x, *w)).collect()
}

fn axis_nodes(domain: Domain, hint: AxisHint, n: usize, box_radius: Option<f64>) -> Vec<(f64, f64)> {
    let base = gl_nodes(n);
    let gaussian = matches!(hint, AxisHint::Gaussian { .. });
    let s = hint.scale();
    // Gaussian axes default to a box covering the mass to exp(−25).
    let box_radius = match (box_radius, gaussian) {
        (None, true) => Some(AUTO_BOX_WIDTHS * s),
        (r, _) => r,
    };
    let half = |sign: f64| -> Vec<(f64, f64)> {
        match box_radius {
            Some(r) if gaussian => base.iter().map(|&(x, w)| (sign * r * (x + 1.0) / 2.0, w * r / 2.0)).collect(),
            _ => base
                .iter()
                .map(|&(x, w)| {
                    let th = (x + 1.0) * PI / 4.0;
                    let sec = 1.0 / th.cos();
                    (sign * s * th.tan(), w * PI / 4.0 * s * sec * sec)
                })
                .collect(),
        }
    };
    match domain {
        Domain::Line => {
            let c = hint.center();
            match box_radius {
                Some(r) if gaussian => base.iter().map(|&(x, w)| (c + r * x, w * r)).collect(),
                _ => base
                    .iter()
                    .map(|&(x, w)| {
                        let th = x * PI / 2.0;
                        let sec = 1.0 / th.cos();
                        (c + s * th.tan(), w * PI / 2.0 * s * sec * sec)
                    })
                    .collect(),
            }
        }
        Domain::Half(sign) => half(sign),
        Domain::Split => {
            let mut v = half(-1.0);
            v.extend(half(1.0));
            v
        }
    }
}

type Integrand<'a> = dyn Fn(&Point, &mut [C64]) -> Result<()> + Sync + 'a;

fn tensor_once(layout: &Layout, n: usize, box_radius: Option<f64>, outputs: usize, integrand: &Integrand) -> Result<Vec<C64>> {
    let axes = layout.all_axes();
    let nodes: Vec<Vec<(f64, f64)>> = axes
        .iter()
        .map(|&(d, h, pair)| axis_nodes(d, h, if pair { n + 1 } else { n }, box_radius))
        .collect();
    let total = nodes.iter().try_fold(1usize, |acc, v| acc.checked_mul(v.len()));
    match total {
        Some(t) if t <= TENSOR_BUDGET => {}
        _ => {
            return Err(Error::Unsupported(format!(
                "tensor grid over {} axes with {n} points exceeds {TENSOR_BUDGET} nodes",
                axes.len()
            )))
        }
    }
    let dim = nodes.len();
    if dim == 0 {
        let mut out = vec![C64::new(0.0, 0.0); outputs];
        integrand(&layout.point(&[]), &mut out)?;
        return Ok(out);
    }
    let rest: usize = nodes[1..].iter().map(|v| v.len()).product();
    let partials: Vec<Result<Vec<C64>>> = nodes[0]
        .par_iter()
        .map(|&(t0, w0)| {
            let mut acc = vec![C64::new(0.0, 0.0); outputs];
            let mut buf = vec![C64::new(0.0, 0.0); outputs];
            let mut t = vec![0.0; dim];
            t[0] = t0;
            let mut idx = vec![0usize; dim];
            for _ in 0..rest {
                let mut w = w0;
                for k in 1..dim {
                    let (tk, wk) = nodes[k][idx[k]];
                    t[k] = tk;
                    w *= wk;
                }
                integrand(&layout.point(&t), &mut buf)?;
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += b * w;
                }
                for k in (1..dim).rev() {
                    idx[k] += 1;
                    if idx[k] < nodes[k].len() {
                        break;
                    }
                    idx[k] = 0;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut out = vec![C64::new(0.0, 0.0); outputs];
    for p in partials {
        for (a, b) in out.iter_mut().zip(p?) {
            *a += b;
        }
    }
    Ok(out)
}

fn sample_axis(rng: &mut ChaCha8Rng, domain: Domain, hint: AxisHint) -> (f64, f64) {
    let s = hint.scale();
    let gaussian = matches!(hint, AxisHint::Gaussian { .. });
    let normal_pdf = |t: f64, c: f64| (-(t - c) * (t - c) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt());
    let cauchy_pdf = |t: f64, c: f64| 1.0 / (PI * s * (1.0 + ((t - c) / s).powi(2)));
    let draw = |rng: &mut ChaCha8Rng, c: f64| -> (f64, f64) {
        if gaussian {
            let t = Normal::new(c, s).expect("normal").sample(rng);
            (t, normal_pdf(t, c))
        } else {
            let t = Cauchy::new(c, s).expect("cauchy").sample(rng);
            (t, cauchy_pdf(t, c))
        }
    };
    match domain {
        Domain::Line => draw(rng, hint.center()),
        Domain::Half(sign) => {
            let (t, q) = draw(rng, 0.0);
            (sign * t.abs(), 2.0 * q)
        }
        Domain::Split => draw(rng, 0.0),
    }
}

/// Offset `d` in dimension `dim` with density `∝ |d|^{−a}·exp(−|d|²/2τ²)`; returns `(d, density)`.
fn sample_offset(rng: &mut ChaCha8Rng, p: &PairGroup) -> (Vec<f64>, f64) {
    let r = p.dim as f64;
    let shape = (r - p.a) / 2.0;
    let gamma_law = Gamma::new(shape, 1.0).expect("positive shape");
    let sphere = if p.dim == 1 { 2.0 } else { 2.0 * PI };
    let norm = sphere * (2.0 * p.tau * p.tau).powf(shape) * gamma(shape) / 2.0;
    loop {
        let u: f64 = gamma_law.sample(rng);
        let rho = p.tau * (2.0 * u).sqrt();
        if rho < 10.0 * SINGULARITY_GUARD {
            continue;
        }
        let d = if p.dim == 1 {
            vec![if rng.random::<bool>() { rho } else { -rho }]
        } else {
            let th = rng.random::<f64>() * 2.0 * PI;
            vec![rho * th.cos(), rho * th.sin()]
        };
        let q = rho.powf(-p.a) * (-rho * rho / (2.0 * p.tau * p.tau)).exp() / norm;
        return (d, q);
    }
}

fn mc_once(layout: &Layout, samples: usize, seed: u64, outputs: usize, integrand: &Integrand) -> Result<Vec<Estimate>> {
    let chunks = samples.div_ceil(MC_CHUNK);
    let base_dim = layout.domains.len();
    let partials: Vec<Result<(Vec<C64>, Vec<f64>)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut sum = vec![C64::new(0.0, 0.0); outputs];
            let mut sum2 = vec![0.0; outputs];
            let mut buf = vec![C64::new(0.0, 0.0); outputs];
            let mut t = vec![0.0; layout.dim()];
            for _ in 0..count {
                let mut q = 1.0;
                for k in 0..base_dim {
                    let (tk, qk) = sample_axis(&mut rng, layout.domains[k], layout.hints[k]);
                    t[k] = tk;
                    q *= qk;
                }
                let mut k = base_dim;
                for p in &layout.pairs {
                    let (d, qd) = sample_offset(&mut rng, p);
                    for (j, dj) in d.iter().enumerate() {
                        t[k + j] = t[p.axis + j] + dj;
                    }
                    q *= qd;
                    k += p.dim;
                }
                integrand(&layout.point(&t), &mut buf)?;
                for j in 0..outputs {
                    let v = buf[j] / q;
                    sum[j] += v;
                    sum2[j] += v.norm_sqr();
                }
            }
            Ok((sum, sum2))
        })
        .collect();
    let mut sum = vec![C64::new(0.0, 0.0); outputs];
    let mut sum2 = vec![0.0; outputs];
    for p in partials {
        let (s, s2) = p?;
        for j in 0..outputs {
            sum[j] += s[j];
            sum2[j] += s2[j];
        }
    }
    let n = samples as f64;
    Ok((0..outputs)
        .map(|j| {
            let mean = sum[j] / n;
            let var = (sum2[j] / n - mean.norm_sqr()).max(0.0);
            Estimate { value: mean, error: (var / (n - 1.0)).sqrt() }
        })
        .collect())
}

/// Integrates `outputs` quantities over the layout with one shared set of nodes.
pub fn integrate(layout: &Layout, quad: &QuadratureConfig, outputs: usize, integrand: &Integrand) -> Result<Vec<Estimate>> {
    quad.validate()?;
    let estimates = match &quad.scheme {
        Scheme::TensorGaussLegendre { points_per_axis, box_radius } => {
            let n = *points_per_axis;
            let fine = tensor_once(layout, n, *box_radius, outputs, integrand)?;
            let m = (3 * n / 4).max(2);
            let coarse = tensor_once(layout, m, *box_radius, outputs, integrand)?;
            fine.iter().zip(&coarse).map(|(a, b)| Estimate { value: *a, error: (a - b).norm() }).collect()
        }
        Scheme::MonteCarlo { samples, seed } => mc_once(layout, *samples, *seed, outputs, integrand)?,
    };
    if let Some(tol) = quad.tolerance {
        for e in &estimates {
            if e.error > tol * e.value.norm() {
                return Err(Error::NonConvergent(format!(
                    "error estimate {:.3e} exceeds {tol:.1e} relative of {:.6e}",
                    e.error,
                    e.value.norm()
                )));
            }
        }
    }
    Ok(estimates)
}

/// `(f, h)` in the space, with its error estimate.
pub fn inner_product(spec: &InnerProductSpec, f: &dyn TestFunction, h: &dyn TestFunction, quad: &QuadratureConfig) -> Result<(C64, f64)> {
    let layout = Layout::new(spec, &[f, h])?;
    let est = integrate(&layout, quad, 1, &|p: &Point, out: &mut [C64]| {
        out[0] = pair_value(spec, p, f, h)?;
        Ok(())
    })?;
    Ok((est[0].value, est[0].error))
}

/// `‖f‖²` with its error estimate.
pub fn norm_sq(spec: &InnerProductSpec, f: &dyn TestFunction, quad: &QuadratureConfig) -> Result<(f64, f64)> {
    let (v, e) = inner_product(spec, f, f, quad)?;
    Ok((v.re, e))
}

/// `f(x)·conj h(y)·K(x, y)·w(x)`, symmetrized in `x ↔ y` for kernels.
fn pair_value(spec: &InnerProductSpec, p: &Point, f: &dyn TestFunction, h: &dyn TestFunction) -> Result<C64> {
    match &p.y {
        None => Ok(f.eval(&p.x) * h.eval(&p.x).conj() * spec.weight(&p.x)),
        Some(y) => {
            let k = spec.kernel(&p.x, y)?;
            let a = f.eval(&p.x) * h.eval(y).conj();
            let b = f.eval(y) * h.eval(&p.x).conj();
            Ok(0.5 * (a + b) * k)
        }
    }
}

/// Gram matrix `G_ij = (f_i, f_j)` from one shared set of nodes, with the
/// largest entry error estimate.
pub fn gram_matrix(spec: &InnerProductSpec, fs: &[&dyn TestFunction], quad: &QuadratureConfig) -> Result<(DMatrix<C64>, f64)> {
    let layout = Layout::new(spec, fs)?;
    let n = fs.len();
    let est = integrate(&layout, quad, n * n, &|p: &Point, out: &mut [C64]| {
        let fx: Vec<C64> = fs.iter().map(|f| f.eval(&p.x)).collect();
        match &p.y {
            None => {
                let w = spec.weight(&p.x);
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = fx[i] * fx[j].conj() * w;
                    }
                }
            }
            Some(y) => {
                let k = spec.kernel(&p.x, y)?;
                let fy: Vec<C64> = fs.iter().map(|f| f.eval(y)).collect();
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = 0.5 * (fx[i] * fy[j].conj() + fy[i] * fx[j].conj()) * k;
                    }
                }
            }
        }
        Ok(())
    })?;
    let g = DMatrix::from_fn(n, n, |i, j| est[i * n + j].value);
    let err = est.iter().map(|e| e.error).fold(0.0, f64::max);
    Ok((g, err))
}

/// Eigenvalues of the unit-diagonal normalization of a Gram matrix, ascending.
pub fn normalized_spectrum(g: &DMatrix<C64>) -> Result<Vec<f64>> {
    let n = g.nrows();
    let d: Vec<f64> = (0..n).map(|i| g[(i, i)].re).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NonConvergent(format!("Gram diagonal not positive: {d:?}")));
    }
    let h = DMatrix::from_fn(n, n, |i, j| 0.5 * (g[(i, j)] + g[(j, i)].conj()) / (d[i] * d[j]).sqrt());
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Minimum eigenvalue of the normalized Gram matrix against `−floor`.
pub fn gram_psd_check(
    name: &str,
    spec: &InnerProductSpec,
    fs: &[&dyn TestFunction],
    quad: &QuadratureConfig,
    floor: f64,
) -> Result<VerificationReport> {
    let (g, err) = gram_matrix(spec, fs, quad)?;
    let ev = normalized_spectrum(&g)?;
    let mut t = Tally::new();
    let lambda_min = ev[0];
    t.record_with_note(
        format!("{} functions", fs.len()),
        (-lambda_min).max(0.0),
        format!(
            "spectrum [{}], max entry error {err:.2e}",
            ev.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    );
    let seed = match quad.scheme {
        Scheme::MonteCarlo { seed, .. } => seed,
        Scheme::TensorGaussLegendre { .. } => 0,
    };
    Ok(t.finish(name, floor, seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardyReport {
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Values do not decrease (beyond their estimates) as the level approaches the boundary.
    pub nondecreasing: bool,
}

/// Max over decreasing positive levels of `∫ |f(x + i·sign·ε)|² dx`.
pub fn hardy_norm(f: &dyn TestFunction, side: HalfPlane, levels: &[f64], quad: &QuadratureConfig) -> Result<(f64, HardyReport)> {
    if f.decay_class() != DecayClass::HardyBoundary {
        return Err(Error::InvalidParams(format!("{} is not declared as a Hardy function", f.label())));
    }
    if f.coords() != [Field::Complex] {
        return Err(Error::DimensionMismatch("Hardy functions take one complex coordinate".into()));
    }
    if levels.is_empty() || levels.iter().any(|&e| !(e > 0.0)) || levels.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParams("levels must be positive and decreasing".into()));
    }
    let mut values = Vec::new();
    let mut errors = Vec::new();
    for &eps in levels {
        let layout = Layout {
            coords: vec![Field::Complex],
            domains: vec![Domain::Line],
            hints: vec![f.hints()[0]],
            pairs: Vec::new(),
            level: Some(side.sign() * eps),
        };
        let e = integrate(&layout, quad, 1, &|p: &Point, out: &mut [C64]| {
            out[0] = C64::new(f.eval(&p.x).norm_sqr(), 0.0);
            Ok(())
        })?;
        values.push(e[0].value.re);
        errors.push(e[0].error);
    }
    let nondecreasing = (1..values.len()).all(|i| values[i] + errors[i] + errors[i - 1] >= values[i - 1]);
    let max = values.iter().copied().fold(0.0, f64::max);
    Ok((max, HardyReport { levels: levels.to_vec(), values, errors, nondecreasing }))
}

/// `|∂f/∂z̄| / (|f| + |∂f/∂z|)` in coordinate `var` at `x`, by central differences.
pub fn cauchy_riemann_residual(f: &dyn TestFunction, var: usize, x: &[C64]) -> f64 {
    let h = CR_STEP * (1.0 + x[var].norm());
    let shifted = |d: C64| {
        let mut y = x.to_vec();
        y[var] += d;
        f.eval(&y)
    };
    let dx = (shifted(C64::new(h, 0.0)) - shifted(C64::new(-h, 0.0))) / (2.0 * h);
    let dy = (shifted(C64::new(0.0, h)) - shifted(C64::new(0.0, -h))) / (2.0 * h);
    let dzbar = 0.5 * (dx + C64::i() * dy);
    let dz = 0.5 * (dx - C64::i() * dy);
    let scale = f.eval(x).norm() + dz.norm();
    if scale == 0.0 {
        0.0
    } else {
        dzbar.norm() / scale
    }
}

/// Worst Cauchy–Riemann residual over sampled interior points of every declared
/// half-plane of every analytic coordinate.
pub fn analyticity_residual(f: &dyn TestFunction, samples: usize, seed: u64) -> Result<f64> {
    let vars = f.analytic_vars();
    let coords = f.coords().to_vec();
    if vars.iter().any(|&v| v >= coords.len() || coords[v] != Field::Complex) {
        return Err(Error::InvalidParams("analytic coordinates must be complex".into()));
    }
    let hints = f.hints();
    let starts = axis_starts(&coords);
    let mut rng = rng_for(seed, 0);
    let mut worst: f64 = 0.0;
    for side in f.analytic_sides() {
        for _ in 0..samples {
            let mut t: Vec<f64> = hints
                .iter()
                .map(|h| h.center() + h.scale() * rng.random_range(-2.0..2.0))
                .collect();
            for &v in &vars {
                let im = &mut t[starts[v] + 1];
                *im = side.sign() * (im.abs() + 0.05);
            }
            let x = from_real(&coords, &t);
            for &v in &vars {
                worst = worst.max(cauchy_riemann_residual(f, v, &x));
            }
        }
    }
    Ok(worst)
}

/// Worst ratio `|f(x)| / (C·exp(−c‖x‖²))` of a bump over sampled points.
pub fn gaussian_bound_ratio(f: &GaussianBump, samples: usize, seed: u64) -> f64 {
    let (big_c, c) = f.declared_bound();
    let mut rng = rng_for(seed, 0);
    let dim = real_dim(f.coords());
    let spread = 3.0 * f.width() + f.center().iter().map(|z| z.norm()).fold(0.0, f64::max);
    (0..samples)
        .map(|_| {
            let t: Vec<f64> = (0..dim).map(|_| rng.random_range(-spread..spread)).collect();
            let x = from_real(f.coords(), &t);
            let r2: f64 = x.iter().map(|z| z.norm_sqr()).sum();
            f.eval(&x).norm() / (big_c * (-c * r2).exp())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn plain_gaussian_integrals() {
        // ∫_C exp(−2|z|²) dA = π/2.
        let f = GaussianBump::standard(vec![Field::Complex]);
        let spec = InnerProductSpec::plain(vec![Field::Complex]);
        let (v, _) = norm_sq(&spec, &f, &QuadratureConfig::default()).unwrap();
        assert!(rel(v, PI / 2.0) < 1e-6, "{v}");
        let (v, _) = norm_sq(&spec, &f, &QuadratureConfig::tensor(32, Some(3.5))).unwrap();
        assert!(rel(v, PI / 2.0) < 1e-9, "{v}");
        // ∫_R exp(−2x²) dx = √(π/2).
        let f = GaussianBump::standard(vec![Field::Real]);
        let (v, _) = norm_sq(&InnerProductSpec::plain(vec![Field::Real]), &f, &QuadratureConfig::default()).unwrap();
        assert!(rel(v, (PI / 2.0).sqrt()) < 1e-6);
    }

    #[test]
    fn zero_function_has_zero_norm() {
        let z = ZeroFunction::new(vec![Field::Complex], DecayClass::GaussianBump);
        let (v, e) = inner_product(&InnerProductSpec::plain(vec![Field::Complex]), &z, &z, &QuadratureConfig::default()).unwrap();
        assert_eq!((v, e), (C64::new(0.0, 0.0), 0.0));
    }

    #[test]
    fn bergman_closed_form() {
        // ∫_{y>0} |z + i|^{−6} y dx dy = π/32.
        let f = HalfPlaneRational::new(C64::new(0.0, -1.0), 3, HalfPlane::Upper).unwrap();
        let spec = InnerProductSpec::bergman(2, HalfPlane::Upper);
        let (v, _) = norm_sq(&spec, &f, &QuadratureConfig::tensor(40, None)).unwrap();
        assert!(rel(v, PI / 32.0) < 1e-6, "{v}");
        let (m, se) = norm_sq(&spec, &f, &QuadratureConfig::monte_carlo(200_000, 3)).unwrap();
        assert!((m - PI / 32.0).abs() < 4.0 * se, "{m} ± {se}");
    }

    #[test]
    fn hardy_levels() {
        let f = HalfPlaneRational::hardy(C64::new(0.0, -1.0), 2, HalfPlane::Upper).unwrap();
        let (v, rep) = hardy_norm(&f, HalfPlane::Upper, &HARDY_LEVELS, &QuadratureConfig::tensor(40, None)).unwrap();
        for (eps, val) in rep.levels.iter().zip(&rep.values) {
            let exact = f.level_integral_order2(*eps).unwrap();
            assert!(rel(*val, exact) < 1e-8);
        }
        assert!(rep.nondecreasing);
        assert!(rel(v, PI / 2.0) < 1e-2);
    }

    #[test]
    fn riesz_gram_two_bumps_psd() {
        let spec = InnerProductSpec::sl2r_complementary(0.5);
        let fam = gaussian_family(&[Field::Real], 2);
        let fs: Vec<&dyn TestFunction> = fam.iter().map(|f| f as &dyn TestFunction).collect();
        let (g, _) = gram_matrix(&spec, &fs, &QuadratureConfig::monte_carlo(50_000, 11)).unwrap();
        assert!((g[(0, 1)] - g[(1, 0)].conj()).norm() < 1e-12);
        let ev = normalized_spectrum(&g).unwrap();
        assert!(ev[0] >= -1e-8, "{ev:?}");
    }

    #[test]
    fn sanity_inversion_out_of_range_sigma() {
        let spec = InnerProductSpec::riesz(vec![Field::Real], vec![0], vec![0.5], 1.0 / gamma(1.5)).unwrap();
        let fam: Vec<GaussianBump> = (0..5)
            .map(|k| GaussianBump::new(vec![Field::Real], vec![C64::new(k as f64 - 2.0, 0.0)], 0.15).unwrap())
            .collect();
        let fs: Vec<&dyn TestFunction> = fam.iter().map(|f| f as &dyn TestFunction).collect();
        let r = gram_psd_check("inv", &spec, &fs, &QuadratureConfig::monte_carlo(50_000, 5), PSD_FLOOR).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn determinant_kernel_is_rejected() {
        let spec = InnerProductSpec::det_kernel(0.5);
        let f = GaussianBump::standard(vec![Field::Complex; 4]);
        let e = inner_product(&spec, &f, &f, &QuadratureConfig::monte_carlo(100, 1)).unwrap_err();
        assert!(matches!(e, Error::KernelNotIntegrable(_)));
    }

    #[test]
    fn analyticity_detected() {
        let f = HalfPlaneRational::new(C64::new(0.2, -1.0), 2, HalfPlane::Upper).unwrap();
        assert!(analyticity_residual(&f, 50, 1).unwrap() < 1e-6);
        for g in gg_family(3, 3) {
            assert!(analyticity_residual(&g, 50, 2).unwrap() < 1e-6);
        }
        let b = GaussianBump::standard(vec![Field::Complex]);
        assert!(cauchy_riemann_residual(&b, 0, &[C64::new(0.3, 0.4)]) > 0.1);
    }

    #[test]
    fn declared_bounds_hold() {
        for b in gaussian_family(&[Field::Complex, Field::Real], 5) {
            assert!(gaussian_bound_ratio(&b, 500, 4) <= 1.0);
        }
    }

    #[test]
    fn mc_is_deterministic() {
        let spec = InnerProductSpec::sl2c_complementary(0.3);
        let f = gaussian_family(&[Field::Complex], 3).remove(1);
        let q = QuadratureConfig::monte_carlo(10_000, 42);
        assert_eq!(norm_sq(&spec, &f, &q).unwrap(), norm_sq(&spec, &f, &q).unwrap());
    }

    #[test]
    fn nonconvergence_reported() {
        let spec = InnerProductSpec::sl2c_complementary(0.3);
        let f = GaussianBump::standard(vec![Field::Complex]);
        let q = QuadratureConfig::monte_carlo(100, 1).with_tolerance(1e-9);
        assert!(matches!(norm_sq(&spec, &f, &q), Err(Error::NonConvergent(_))));
    }
}
