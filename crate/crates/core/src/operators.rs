//! The operators `(T(g)f)(x) = m(x, g)·f(x·ḡ)` of all 21 series, and the checks
//! run on them.
//!
//! Each series acts on a coordinate model: the block-unipotent coordinates of
//! its pattern, a fibration of them into base and fiber coordinates for the
//! kernel spaces, a half-plane for the discrete series, or the frame
//! coordinates `(z₂₁, x₃₁, x₃₂)` of the Gelfand–Graev series.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charmod::{multiplier_from_data, CharacterParams, HalfPlane, SeriesId};
use crate::error::{Error, Result};
use crate::flagdecomp::{decompose, gg_frame, BlockPattern, KFactor, Route, UnipotentPoint};
use crate::matcore::{rng_for, sample_scalar, Field, GroupElement, C64};
use crate::report::{Tally, VerificationReport};
use crate::repspaces::{
    gaussian_family, gg_family, halfplane_family, integrate, Estimate, InnerKind, InnerProductSpec, Layout, Point,
    QuadratureConfig, TestFunction, HARDY_LEVELS,
};

pub const COMPOSE_TOL: f64 = 1e-8;
pub const ROUTE_TOL: f64 = 1e-9;
pub const UNITARITY_TOL: f64 = 1e-4;
/// Kernel-space unitarity is judged in units of this many combined standard errors.
pub const KERNEL_SIGMAS: f64 = 3.0;
pub const KERNEL_SAMPLES: usize = 100_000;
/// Samples for weighted-L² spaces too large for a tensor grid.
pub const PLAIN_SAMPLES: usize = 20_000;
/// Tensor grids are used up to this many real axes.
pub const TENSOR_AXES: usize = 4;
pub const TENSOR_POINTS: usize = 24;
/// Singular sample points are redrawn up to this multiple of the requested count.
pub const RESAMPLE_FACTOR: usize = 100;
/// Points closer than this (relative) to the real axis are redrawn in sign tests.
pub const SIGN_GUARD: f64 = 1e-6;
pub const FAMILY_SIZE: usize = 5;

/// Splittings `z = ż·ẑ` of the unipotent cell into base `ẑ` and fibers `ż`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fibration {
    /// SL3: model `(z21, ẑ31, z1)`, with `z31 = ẑ31 + z1·z21`, `z32 = z1`.
    Sl3,
    /// SL4 full cell: model `(z21, z31, z32, ẑ41, ẑ42, z1)`, fiber at (4,3).
    Sl4Corner,
    /// SL4 full cell: model `(ẑ31, ẑ32, ẑ41, ẑ42, z1, z2)`, fibers at (4,3) and (2,1).
    Sl4Levi22,
    /// SL4 (2,1,1) cell: model `(z31, z32, ẑ41, ẑ42, z1)`, fiber at (4,3).
    Sl4Cell211,
}

impl Fibration {
    fn to_pattern(self, x: &[C64]) -> Vec<C64> {
        match self {
            Fibration::Sl3 => vec![x[0], x[1] + x[2] * x[0], x[2]],
            Fibration::Sl4Corner => vec![x[0], x[1], x[2], x[3] + x[5] * x[1], x[4] + x[5] * x[2], x[5]],
            Fibration::Sl4Levi22 => vec![x[5], x[0], x[1], x[2] + x[4] * x[0], x[3] + x[4] * x[1], x[4]],
            Fibration::Sl4Cell211 => vec![x[0], x[1], x[2] + x[4] * x[0], x[3] + x[4] * x[1], x[4]],
        }
    }

    fn from_pattern(self, z: &[C64]) -> Vec<C64> {
        match self {
            Fibration::Sl3 => vec![z[0], z[1] - z[2] * z[0], z[2]],
            Fibration::Sl4Corner => vec![z[0], z[1], z[2], z[3] - z[5] * z[1], z[4] - z[5] * z[2], z[5]],
            Fibration::Sl4Levi22 => vec![z[1], z[2], z[3] - z[5] * z[1], z[4] - z[5] * z[2], z[5], z[0]],
            Fibration::Sl4Cell211 => vec![z[0], z[1], z[2] - z[4] * z[0], z[3] - z[4] * z[1], z[4]],
        }
    }

    /// Model indices of the fiber coordinates (always trailing).
    pub fn fibers(self) -> Vec<usize> {
        match self {
            Fibration::Sl3 => vec![2],
            Fibration::Sl4Corner => vec![5],
            Fibration::Sl4Levi22 => vec![4, 5],
            Fibration::Sl4Cell211 => vec![4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CoordModel {
    /// Unipotent coordinates of the pattern.
    Standard,
    Fibered { fibration: Fibration },
    /// One complex coordinate in a half-plane, acted on by real Möbius maps.
    HalfPlane { side: HalfPlane },
    /// `(z₂₁, x₃₁, x₃₂)`: complex `z₂₁` off the real axis, real base point.
    GelfandGraev,
}

/// For the second SL4 complementary family: which σ goes with which fiber.
///
/// Restricting the character to the Levi blocks gives `|k11/k22|^{σ₁}` on the
/// first block and `|k33/k44|^{σ₂}` on the second, so `z2 = z21` carries `σ₁`
/// and `z1 = z43` carries `σ₂`. The kernel-covariance test in this module
/// checks that this pairing is the invariant one.
pub const SL4_LEVI22_SIGMA_OF_FIBER: [usize; 2] = [1, 0];

/// A series with its parameters, coordinate model and inner product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSpec {
    pub id: SeriesId,
    pub params: CharacterParams,
    pub model: CoordModel,
    pub space: InnerProductSpec,
}

impl SeriesSpec {
    pub fn new(id: SeriesId, params: CharacterParams) -> Result<SeriesSpec> {
        use SeriesId::*;
        params.validate(id)?;
        let field = id.field();
        let dim = id.pattern().unipotent_positions().len();
        let riesz = |coords: Vec<Field>, fibration: Option<Fibration>, sigmas: Vec<f64>| -> Result<(CoordModel, InnerProductSpec)> {
            let (model, fibers) = match fibration {
                Some(f) => (CoordModel::Fibered { fibration: f }, f.fibers()),
                None => (CoordModel::Standard, vec![0]),
            };
            let powers = sigmas
                .iter()
                .map(|s| if field == Field::Complex { 2.0 * s - 2.0 } else { s - 1.0 })
                .collect();
            let prefactor = if id == Sl2rComplementary { 1.0 / statrs::function::gamma::gamma(sigmas[0]) } else { 1.0 };
            Ok((model, InnerProductSpec::riesz(coords, fibers, powers, prefactor)?))
        };
        let s = &params.sigma;
        let (model, space) = match id {
            Sl2cComplementary | Sl2rComplementary => riesz(vec![field], None, vec![s[0]])?,
            Sl3cComplementary | Sl3rComplementary => riesz(vec![field; 3], Some(Fibration::Sl3), vec![s[0]])?,
            Sl4cComplementary1 => riesz(vec![field; 6], Some(Fibration::Sl4Corner), vec![s[0]])?,
            Sl4cComplementary2 => {
                let sig = SL4_LEVI22_SIGMA_OF_FIBER.iter().map(|&i| s[i]).collect();
                riesz(vec![field; 6], Some(Fibration::Sl4Levi22), sig)?
            }
            Sl4cComplementary3 => riesz(vec![field; 5], Some(Fibration::Sl4Cell211), vec![s[0]])?,
            Sl4cStein => (CoordModel::Standard, InnerProductSpec::det_kernel(s[0])),
            Sl2rDiscrete => {
                let side = params.half_plane.unwrap_or(HalfPlane::Upper);
                let sp = params.s_or_n.unwrap_or(1);
                (CoordModel::HalfPlane { side }, InnerProductSpec::bergman(sp, side))
            }
            Sl2rLimitDiscrete => {
                let side = params.half_plane.unwrap_or(HalfPlane::Upper);
                (CoordModel::HalfPlane { side }, InnerProductSpec::hardy(side))
            }
            Sl3rGelfandGraev => (CoordModel::GelfandGraev, InnerProductSpec::gg(params.s_or_n.unwrap_or(2))),
            _ => (CoordModel::Standard, InnerProductSpec::plain(vec![field; dim])),
        };
        Ok(SeriesSpec { id, params, model, space })
    }

    /// The series at representative parameters.
    pub fn with_defaults(id: SeriesId) -> SeriesSpec {
        SeriesSpec::new(id, default_params(id)).expect("default parameters are valid")
    }

    /// Replaces the inner product (for experiments with alternative kernels).
    pub fn with_space(mut self, space: InnerProductSpec) -> Result<SeriesSpec> {
        space.validate()?;
        if space.coords != self.space.coords {
            return Err(Error::DimensionMismatch("space coordinates differ from the model".into()));
        }
        self.space = space;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.id.n()
    }

    pub fn field(&self) -> Field {
        self.id.field()
    }

    pub fn pattern(&self) -> BlockPattern {
        self.id.pattern()
    }

    pub fn coords(&self) -> &[Field] {
        &self.space.coords
    }

    pub fn requires_analyticity(&self) -> bool {
        matches!(self.model, CoordModel::HalfPlane { .. } | CoordModel::GelfandGraev)
    }

    pub fn space_kind(&self) -> &'static str {
        match self.space.kind {
            InnerKind::PlainL2 => "plain-l2",
            InnerKind::RieszKernel { .. } => "riesz-kernel",
            InnerKind::BergmanWeight { .. } => "bergman-weight",
            InnerKind::HardyBoundary { .. } => "hardy-boundary",
            InnerKind::GgWeight { .. } => "gg-weight",
            InnerKind::DetKernel { .. } => "det-kernel",
        }
    }

    /// The shipped test family of the space.
    pub fn family(&self, count: usize) -> Vec<Box<dyn TestFunction>> {
        match (&self.model, &self.space.kind) {
            (CoordModel::HalfPlane { side }, InnerKind::BergmanWeight { s, .. }) => halfplane_family(*side, s + 2, count, false)
                .into_iter()
                .map(|f| Box::new(f) as Box<dyn TestFunction>)
                .collect(),
            (CoordModel::HalfPlane { side }, _) => halfplane_family(*side, 2, count, true)
                .into_iter()
                .map(|f| Box::new(f) as Box<dyn TestFunction>)
                .collect(),
            (CoordModel::GelfandGraev, InnerKind::GgWeight { n1 }) => gg_family(*n1, count)
                .into_iter()
                .map(|f| Box::new(f) as Box<dyn TestFunction>)
                .collect(),
            _ => gaussian_family(self.coords(), count)
                .into_iter()
                .map(|f| Box::new(f) as Box<dyn TestFunction>)
                .collect(),
        }
    }

    /// Quadrature used by unitarity checks: Monte Carlo for kernel spaces, a
    /// tensor grid for weighted-L² spaces small enough for one.
    pub fn default_quadrature(&self, seed: u64) -> QuadratureConfig {
        let axes = match self.space.kind {
            InnerKind::HardyBoundary { .. } => 1,
            _ => crate::repspaces::real_dim(self.coords()),
        };
        if self.space.is_kernel() {
            QuadratureConfig::monte_carlo(KERNEL_SAMPLES, seed)
        } else if axes <= TENSOR_AXES {
            QuadratureConfig::tensor(TENSOR_POINTS, None)
        } else {
            QuadratureConfig::monte_carlo(PLAIN_SAMPLES, seed)
        }
    }

    /// A point of the model drawn from unit Gaussians, kept off the real axis
    /// where the model needs a half-plane.
    pub fn sample_point(&self, rng: &mut ChaCha8Rng) -> Vec<C64> {
        match &self.model {
            CoordModel::HalfPlane { side } => {
                let z = sample_scalar(rng, Field::Complex);
                vec![C64::new(z.re, side.sign() * z.im.abs().max(1e-3))]
            }
            CoordModel::GelfandGraev => {
                let z = sample_scalar(rng, Field::Complex);
                let z = if z.im.abs() < 1e-3 { C64::new(z.re, 1e-3f64.copysign(z.im)) } else { z };
                vec![z, sample_scalar(rng, Field::Real), sample_scalar(rng, Field::Real)]
            }
            _ => self.coords().iter().map(|&f| sample_scalar(rng, f)).collect(),
        }
    }
}

/// Representative parameters per series.
pub fn default_params(id: SeriesId) -> CharacterParams {
    use SeriesId::*;
    match id {
        Sl2cPrincipal | Sl2rPrincipal => CharacterParams::new(&[1], &[0.7], &[]),
        Sl2cComplementary | Sl2rComplementary | Sl4cStein => CharacterParams::new(&[], &[], &[0.5]),
        Sl2rDiscrete => CharacterParams::discrete(2, HalfPlane::Upper),
        Sl2rLimitDiscrete => CharacterParams::limit(HalfPlane::Upper),
        Sl3cPrincipal => CharacterParams::new(&[1, -2], &[0.3, 0.8], &[]),
        Sl3rPrincipal => CharacterParams::new(&[1, 0], &[0.3, 0.8], &[]),
        Sl3cComplementary | Sl3rComplementary | Sl4cComplementary3 => CharacterParams::new(&[1], &[0.4], &[0.5]),
        Sl3cDegenerate | Sl3rDegenerate | Sl4cDegenerate31 | Sl4cDegenerate22 => CharacterParams::new(&[1], &[0.6], &[]),
        Sl3rGelfandGraev => CharacterParams::gelfand_graev(3, 0.5),
        Sl4cPrincipal => CharacterParams::new(&[1, -1, 2], &[0.2, 0.5, 0.9], &[]),
        Sl4cDegenerate211 => CharacterParams::new(&[1, -1], &[0.3, 0.6], &[]),
        Sl4cComplementary1 => CharacterParams::new(&[1, -1], &[0.3, 0.6], &[0.5]),
        Sl4cComplementary2 => CharacterParams::new(&[1], &[0.4], &[0.3, 0.7]),
    }
}

/// Random valid parameters: integers in [−3, 3] (or {0, 1}), `ρ` in [−2, 2], `σ` in (0, 1).
pub fn random_params(id: SeriesId, rng: &mut ChaCha8Rng) -> CharacterParams {
    let a = id.arity();
    let m: Vec<i64> = (0..a.m)
        .map(|_| if a.m_binary { rng.random_range(0..2) } else { rng.random_range(-3..=3) })
        .collect();
    let rho: Vec<f64> = (0..a.rho).map(|_| rng.random_range(-2.0..2.0)).collect();
    let sigma: Vec<f64> = (0..a.sigma).map(|_| rng.random_range(0.05..0.95)).collect();
    let mut p = CharacterParams::new(&m, &rho, &sigma);
    if a.half_plane {
        p.half_plane = Some(if rng.random::<bool>() { HalfPlane::Upper } else { HalfPlane::Lower });
    }
    if a.s_or_n {
        let lo = if id == SeriesId::Sl3rGelfandGraev { 2 } else { 1 };
        p.s_or_n = Some(rng.random_range(lo..=4));
    }
    p
}

/// `T(g)` for one series.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorInstance {
    spec: SeriesSpec,
    g: GroupElement,
}

impl OperatorInstance {
    pub fn new(spec: SeriesSpec, g: GroupElement) -> Result<OperatorInstance> {
        if g.n() != spec.n() || g.field() != spec.field() {
            return Err(Error::DimensionMismatch(format!(
                "{} acts by SL{}({}), got an element of SL{}({})",
                spec.id,
                spec.n(),
                spec.field(),
                g.n(),
                g.field()
            )));
        }
        Ok(OperatorInstance { spec, g })
    }

    pub fn spec(&self) -> &SeriesSpec {
        &self.spec
    }

    pub fn g(&self) -> &GroupElement {
        &self.g
    }

    fn check_point(&self, x: &[C64]) -> Result<()> {
        let coords = self.spec.coords();
        if x.len() != coords.len() {
            return Err(Error::DimensionMismatch(format!("{} coordinates, expected {}", x.len(), coords.len())));
        }
        if coords.iter().zip(x).any(|(f, v)| *f == Field::Real && v.im != 0.0) {
            return Err(Error::InvalidParams("complex value in a real coordinate".into()));
        }
        Ok(())
    }

    /// `(m(x, g), x·ḡ)` through the closed-form decomposition.
    pub fn act(&self, x: &[C64]) -> Result<(C64, Vec<C64>)> {
        self.act_with_route(x, Route::ClosedForm)
    }

    pub fn act_with_route(&self, x: &[C64], route: Route) -> Result<(C64, Vec<C64>)> {
        self.check_point(x)?;
        let id = self.spec.id;
        let params = &self.spec.params;
        match &self.spec.model {
            CoordModel::GelfandGraev => self.act_gg(x, route),
            CoordModel::HalfPlane { .. } => {
                let pattern = id.pattern().with_field(Field::Complex);
                let z = UnipotentPoint::new(pattern, x.to_vec())?;
                let d = decompose(&z, &self.g.as_complex(), route)?;
                let m = multiplier_from_data(id, params, &d.k.block_dets())?;
                Ok((m, d.z_out.coords().to_vec()))
            }
            CoordModel::Standard => {
                let z = UnipotentPoint::new(id.pattern(), x.to_vec())?;
                let d = decompose(&z, &self.g, route)?;
                let m = multiplier_from_data(id, params, &d.k.block_dets())?;
                Ok((m, d.z_out.coords().to_vec()))
            }
            CoordModel::Fibered { fibration } => {
                let z = UnipotentPoint::new(id.pattern(), fibration.to_pattern(x))?;
                let d = decompose(&z, &self.g, route)?;
                let m = multiplier_from_data(id, params, &d.k.block_dets())?;
                Ok((m, fibration.from_pattern(d.z_out.coords())))
            }
        }
    }

    /// `|Δ|^{3/2+n₁/2+iρ₁}·(β z₂₁ + δ)^{−n₁}` with `Δ = αδ − βγ` from the (2,1) frame.
    fn act_gg(&self, x: &[C64], route: Route) -> Result<(C64, Vec<C64>)> {
        let (x31, x32) = (x[1].re, x[2].re);
        let (alpha, beta, gamma, delta, x31p, x32p) = match route {
            Route::ClosedForm => {
                let f = gg_frame(x31, x32, &self.g)?;
                (f.alpha, f.beta, f.gamma, f.delta, f.x31, f.x32)
            }
            Route::Oracle => {
                let pattern = BlockPattern::new(&[2, 1], Field::Real)?;
                let z = UnipotentPoint::new(pattern, vec![x[1], x[2]])?;
                let d = decompose(&z, &self.g, Route::Oracle)?;
                let KFactor::Full(k) = &d.k else {
                    return Err(Error::Unsupported("oracle returned block data only".into()));
                };
                let k = k.mat();
                let c = d.z_out.coords();
                (k[(0, 0)].re, k[(0, 1)].re, k[(1, 0)].re, k[(1, 1)].re, c[0].re, c[1].re)
            }
        };
        let n1 = self.spec.params.s_or_n.unwrap_or(2);
        let rho = self.spec.params.rho[0];
        let det = alpha * delta - beta * gamma;
        let z = x[0];
        let den = z * beta + delta;
        if den.norm() < crate::charmod::ZERO_DIAGONAL_TOL * (1.0 + z.norm()) {
            return Err(Error::ZeroDiagonal(den.norm()));
        }
        let modulus = C64::new(1.5 + n1 as f64 / 2.0, rho);
        let mut m = (modulus * det.abs().ln()).exp();
        for _ in 0..n1 {
            m /= den;
        }
        let zp = (z * alpha + gamma) / den;
        Ok((m, vec![zp, C64::new(x31p, 0.0), C64::new(x32p, 0.0)]))
    }
}

/// `(T(g)f)(x)`.
pub fn apply(op: &OperatorInstance, f: &dyn TestFunction, x: &[C64]) -> Result<C64> {
    apply_with_route(op, f, x, Route::ClosedForm)
}

pub fn apply_with_route(op: &OperatorInstance, f: &dyn TestFunction, x: &[C64], route: Route) -> Result<C64> {
    check_function(op.spec(), f)?;
    let (m, xp) = op.act_with_route(x, route)?;
    Ok(m * f.eval(&xp))
}

fn check_function(spec: &SeriesSpec, f: &dyn TestFunction) -> Result<()> {
    if f.coords() != spec.coords() {
        return Err(Error::DimensionMismatch(format!("{} does not live on the {} model", f.label(), spec.id)));
    }
    if spec.requires_analyticity() && (f.analytic_vars() != [0] || f.decay_class() == crate::repspaces::DecayClass::GaussianBump) {
        return Err(Error::AnalyticityViolation(format!(
            "{} needs functions holomorphic in the first coordinate; {} is not declared so",
            spec.id,
            f.label()
        )));
    }
    Ok(())
}

/// Draws a point for which `accept` succeeds, redrawing singular ones.
fn draw_generic<T>(
    spec: &SeriesSpec,
    rng: &mut ChaCha8Rng,
    budget: usize,
    resamples: &mut u64,
    mut accept: impl FnMut(&[C64]) -> Result<T>,
) -> Result<T> {
    for _ in 0..budget {
        let x = spec.sample_point(rng);
        match accept(&x) {
            Ok(v) => return Ok(v),
            Err(Error::DecompositionSingular { .. } | Error::ZeroDiagonal(_) | Error::ChartExit) => *resamples += 1,
            Err(e) => return Err(e),
        }
    }
    Err(Error::RejectionExhausted(budget))
}

fn rel_diff(a: C64, b: C64) -> f64 {
    let scale = a.norm().max(b.norm()).max(1e-250);
    (a - b).norm() / scale
}

/// `|T(g₁g₂)f − T(g₁)T(g₂)f| / scale` over seeded sample points.
pub fn compose_check(
    name: &str,
    spec: &SeriesSpec,
    g1: &GroupElement,
    g2: &GroupElement,
    f: &dyn TestFunction,
    points: usize,
    seed: u64,
    tolerance: f64,
) -> VerificationReport {
    let mut t = Tally::new().keep_details(4);
    let run = |t: &mut Tally| -> Result<()> {
        check_function(spec, f)?;
        let op1 = OperatorInstance::new(spec.clone(), g1.clone())?;
        let op2 = OperatorInstance::new(spec.clone(), g2.clone())?;
        let op12 = OperatorInstance::new(spec.clone(), g1.compose(g2))?;
        let mut rng = rng_for(seed, 0);
        let mut resamples = 0;
        for i in 0..points {
            let err = draw_generic(spec, &mut rng, RESAMPLE_FACTOR, &mut resamples, |x| {
                let lhs = apply(&op12, f, x)?;
                let (m1, x1) = op1.act(x)?;
                let rhs = m1 * apply(&op2, f, &x1)?;
                Ok(rel_diff(lhs, rhs))
            })?;
            t.record(format!("point {i}"), err);
        }
        t.add_resamples(resamples);
        Ok(())
    };
    if let Err(e) = run(&mut t) {
        t.record_failure("compose", e.to_string());
    }
    t.finish(name, tolerance, seed)
}

/// Closed-form against elimination-oracle evaluation of `T(g)f`.
pub fn route_check(name: &str, spec: &SeriesSpec, g: &GroupElement, f: &dyn TestFunction, points: usize, seed: u64, tolerance: f64) -> VerificationReport {
    let mut t = Tally::new().keep_details(4);
    let run = |t: &mut Tally| -> Result<()> {
        let op = OperatorInstance::new(spec.clone(), g.clone())?;
        let mut rng = rng_for(seed, 0);
        let mut resamples = 0;
        for i in 0..points {
            let err = draw_generic(spec, &mut rng, RESAMPLE_FACTOR, &mut resamples, |x| {
                let a = apply_with_route(&op, f, x, Route::ClosedForm)?;
                let b = apply_with_route(&op, f, x, Route::Oracle)?;
                Ok(rel_diff(a, b))
            })?;
            t.record(format!("point {i}"), err);
        }
        t.add_resamples(resamples);
        Ok(())
    };
    if let Err(e) = run(&mut t) {
        t.record_failure("route", e.to_string());
    }
    t.finish(name, tolerance, seed)
}

/// `∂(z·ḡ)/∂z` on the pattern coordinates, by differentiating `z·g = k·z′`:
/// `k⁻¹·dz·g·z′⁻¹ = k⁻¹dk + dz′·z′⁻¹` splits into its block-upper and
/// block-lower parts, so `dz′ = L(z′g⁻¹z⁻¹·dz·g·z′⁻¹)·z′`.
pub fn pattern_jacobian(z: &UnipotentPoint, z_out: &UnipotentPoint, g: &GroupElement) -> Result<DMatrix<C64>> {
    let zm = z.embed().to_nalgebra();
    let zp = z_out.embed().to_nalgebra();
    let gm = g.mat().to_nalgebra();
    let inv = |m: &DMatrix<C64>| m.clone().try_inverse().ok_or(Error::DecompositionSingular { margin: 0.0 });
    let left = &zp * inv(&gm)? * inv(&zm)?;
    let right = &gm * inv(&zp)?;
    let positions = z.pattern().unipotent_positions();
    let k = positions.len();
    let mut jac = DMatrix::<C64>::zeros(k, k);
    for (j, &(p, q)) in positions.iter().enumerate() {
        let a = left.column(p) * right.row(q);
        let mut lower = DMatrix::<C64>::zeros(a.nrows(), a.ncols());
        for &pos in &positions {
            lower[pos] = a[pos];
        }
        let dz = lower * &zp;
        for (i, &pos) in positions.iter().enumerate() {
            jac[(i, j)] = dz[pos];
        }
    }
    Ok(jac)
}

/// Jacobian of a polynomial map of degree at most two; central differences are exact.
fn quadratic_jacobian(f: impl Fn(&[C64]) -> Vec<C64>, x: &[C64]) -> DMatrix<C64> {
    let k = x.len();
    let mut jac = DMatrix::<C64>::zeros(k, k);
    for j in 0..k {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += 1.0;
        xm[j] -= 1.0;
        let (fp, fm) = (f(&xp), f(&xm));
        for i in 0..k {
            jac[(i, j)] = (fp[i] - fm[i]) / 2.0;
        }
    }
    jac
}

/// `|det ∂(x·ḡ)/∂x|` over the model coordinates `block` (as both inputs and
/// outputs), as a real Jacobian; on a boundary line (`line`) the holomorphic
/// derivative enters once instead of squared.
pub fn abs_jacobian(op: &OperatorInstance, x: &[C64], block: std::ops::Range<usize>, line: bool) -> Result<f64> {
    let spec = op.spec();
    let id = spec.id;
    let (jac, complex) = match &spec.model {
        CoordModel::GelfandGraev => return gg_jacobian(op, x, block),
        CoordModel::HalfPlane { .. } => {
            let g = op.g().as_complex();
            let z = UnipotentPoint::new(id.pattern().with_field(Field::Complex), x.to_vec())?;
            let d = decompose(&z, &g, Route::ClosedForm)?;
            (pattern_jacobian(&z, &d.z_out, &g)?, !line)
        }
        CoordModel::Standard => {
            let z = UnipotentPoint::new(id.pattern(), x.to_vec())?;
            let d = decompose(&z, op.g(), Route::ClosedForm)?;
            (pattern_jacobian(&z, &d.z_out, op.g())?, spec.field() == Field::Complex)
        }
        CoordModel::Fibered { fibration } => {
            let f = *fibration;
            let z = UnipotentPoint::new(id.pattern(), f.to_pattern(x))?;
            let d = decompose(&z, op.g(), Route::ClosedForm)?;
            let inner = pattern_jacobian(&z, &d.z_out, op.g())?;
            let to = quadratic_jacobian(|y| f.to_pattern(y), x);
            let from = quadratic_jacobian(|y| f.from_pattern(y), d.z_out.coords());
            (from * inner * to, spec.field() == Field::Complex)
        }
    };
    let k = block.len();
    let sub = jac.view((block.start, block.start), (k, k)).into_owned();
    let det = sub.determinant().norm();
    Ok(if complex { det * det } else { det })
}

/// Real Jacobian of the Gelfand–Graev model.
/// The frame `(α, β, γ, δ)` depends only on `(x₃₁, x₃₂)`, so the Jacobian is
/// block-triangular: `|Δ/(βz+δ)²|²` on the complex coordinate times the real
/// `(2,1)` pattern Jacobian.
fn gg_jacobian(op: &OperatorInstance, x: &[C64], block: std::ops::Range<usize>) -> Result<f64> {
    let mut jac = 1.0;
    if block.contains(&0) {
        let f = gg_frame(x[1].re, x[2].re, op.g())?;
        let det = f.alpha * f.delta - f.beta * f.gamma;
        let den = x[0] * f.beta + f.delta;
        jac *= (det / (den * den)).norm_sqr();
    }
    if block.contains(&1) || block.contains(&2) {
        let pattern = BlockPattern::new(&[2, 1], Field::Real)?;
        let z = UnipotentPoint::new(pattern, vec![x[1], x[2]])?;
        let d = decompose(&z, op.g(), Route::ClosedForm)?;
        jac *= pattern_jacobian(&z, &d.z_out, op.g())?.determinant().norm();
    }
    Ok(jac)
}

fn is_singular(e: &Error) -> bool {
    matches!(e, Error::DecompositionSingular { .. } | Error::ZeroDiagonal(_) | Error::ChartExit | Error::KernelSingular)
}

/// `((f, f), (T(g)f, T(g)f))` computed on shared nodes, the second through the
/// change of variables `x = x′·(g⁻¹)‾`. Nodes at which the action is singular
/// are dropped from both integrals; their count is returned alongside.
pub fn norm_pair(spec: &SeriesSpec, g: &GroupElement, f: &dyn TestFunction, quad: &QuadratureConfig) -> Result<([Estimate; 2], u64)> {
    check_function(spec, f)?;
    let op = OperatorInstance::new(spec.clone(), g.clone())?;
    let inv = OperatorInstance::new(spec.clone(), g.inverse())?;
    let space = &spec.space;
    let layout = Layout::new(space, &[f])?;
    let n = spec.coords().len();
    let line = matches!(space.kind, InnerKind::HardyBoundary { .. });
    let fiber_block = space.fibers.first().copied().unwrap_or(n)..n;
    let dropped = AtomicU64::new(0);
    let pulled_back = |p: &Point, out: &mut [C64]| -> Result<()> {
        let fx = f.eval(&p.x);
        match &p.y {
            None => {
                let w = space.weight(&p.x);
                out[0] = C64::new(fx.norm_sqr() * w, 0.0);
                out[1] = C64::new(0.0, 0.0);
                if w == 0.0 || fx.norm_sqr() == 0.0 {
                    return Ok(());
                }
                let (_, z) = inv.act(&p.x)?;
                let jac = abs_jacobian(&inv, &p.x, 0..n, line)?;
                let (m, _) = op.act(&z)?;
                out[1] = C64::new(fx.norm_sqr() * m.norm_sqr() * space.weight(&z) * jac, 0.0);
            }
            Some(y) => {
                let a = fx * f.eval(y).conj();
                out[0] = C64::new(a.re * space.kernel(&p.x, y)?, 0.0);
                out[1] = C64::new(0.0, 0.0);
                if a.norm() == 0.0 {
                    return Ok(());
                }
                let (_, zx) = inv.act(&p.x)?;
                let (_, zy) = inv.act(y)?;
                let jac = abs_jacobian(&inv, &p.x, 0..n, false)? * abs_jacobian(&inv, y, fiber_block.clone(), false)?;
                let (mx, _) = op.act(&zx)?;
                let (my, _) = op.act(&zy)?;
                out[1] = C64::new((a * mx * my.conj()).re * space.kernel(&zx, &zy)? * jac, 0.0);
            }
        }
        Ok(())
    };
    let est = integrate(&layout, quad, 2, &|p: &Point, out: &mut [C64]| match pulled_back(p, out) {
        Err(e) if is_singular(&e) => {
            dropped.fetch_add(1, Ordering::Relaxed);
            out.fill(C64::new(0.0, 0.0));
            Ok(())
        }
        r => r,
    })?;
    Ok(([est[0], est[1]], dropped.into_inner()))
}

/// Norm preservation over a family: relative deviation against `tolerance` for
/// weighted-L² spaces; for kernel spaces the deviation in units of
/// `KERNEL_SIGMAS` combined standard errors against 1.
pub fn unitarity_check(
    name: &str,
    spec: &SeriesSpec,
    g: &GroupElement,
    family: &[&dyn TestFunction],
    quad: &QuadratureConfig,
    tolerance: Option<f64>,
) -> VerificationReport {
    let kernel = spec.space.is_kernel();
    let tol = tolerance.unwrap_or(if kernel { 1.0 } else { UNITARITY_TOL });
    let mut t = Tally::new();
    for f in family {
        match norm_pair(spec, g, *f, quad) {
            Ok(([a, b], dropped)) => {
                let d = (b.value.re - a.value.re).abs();
                let (err, note) = if kernel {
                    let se = a.error.hypot(b.error);
                    (d / (KERNEL_SIGMAS * se), format!("(f,f) = {:.6e} ± {:.1e}, (Tf,Tf) = {:.6e} ± {:.1e}", a.value.re, a.error, b.value.re, b.error))
                } else {
                    (d / a.value.re, format!("(f,f) = {:.9e}, (Tf,Tf) = {:.9e}, quadrature error {:.1e}", a.value.re, b.value.re, a.error.max(b.error)))
                };
                t.add_resamples(dropped);
                t.record_with_note(f.label(), err, format!("{note}, {dropped} singular nodes dropped"));
            }
            Err(e) => t.record_failure(f.label(), e.to_string()),
        }
    }
    let seed = match quad.scheme {
        crate::repspaces::Scheme::MonteCarlo { seed, .. } => seed,
        _ => 0,
    };
    t.finish(name, tol, seed)
}

/// Pointwise invariance of the kernel: `m(ψx)·conj m(ψy)·K(ψx, ψy)·J = K(x, y)`
/// with `ψ` the action of `g⁻¹` and `J` the Jacobian of the joint substitution.
pub fn kernel_covariance_check(name: &str, spec: &SeriesSpec, g: &GroupElement, points: usize, seed: u64, tolerance: f64) -> VerificationReport {
    let mut t = Tally::new().keep_details(4);
    let run = |t: &mut Tally| -> Result<()> {
        if !spec.space.is_kernel() {
            return Err(Error::Unsupported(format!("{} has no kernel", spec.id)));
        }
        let op = OperatorInstance::new(spec.clone(), g.clone())?;
        let inv = OperatorInstance::new(spec.clone(), g.inverse())?;
        let n = spec.coords().len();
        let fibers = spec.space.fibers.clone();
        let fiber_block = fibers[0]..n;
        let mut rng = rng_for(seed, 0);
        let mut resamples = 0;
        for i in 0..points {
            let err = draw_generic(spec, &mut rng, RESAMPLE_FACTOR, &mut resamples, |x| {
                let mut y = x.to_vec();
                for &j in &fibers {
                    y[j] = x[j] + sample_scalar(&mut rng_for(seed, (i as u64 + 1) << 8 | j as u64), spec.coords()[j]);
                }
                let (_, zx) = inv.act(x)?;
                let (_, zy) = inv.act(&y)?;
                let jac = abs_jacobian(&inv, x, 0..n, false)? * abs_jacobian(&inv, &y, fiber_block.clone(), false)?;
                let (mx, _) = op.act(&zx)?;
                let (my, _) = op.act(&zy)?;
                let lhs = mx * my.conj() * spec.space.kernel(&zx, &zy)? * jac;
                let rhs = spec.space.kernel(x, &y)?;
                Ok(rel_diff(lhs, C64::new(rhs, 0.0)))
            })?;
            t.record(format!("pair {i}"), err);
        }
        t.add_resamples(resamples);
        Ok(())
    };
    if let Err(e) = run(&mut t) {
        t.record_failure("covariance", e.to_string());
    }
    t.finish(name, tolerance, seed)
}

/// Sign law `sign Im z′ = sign(Δ)·sign Im z` for the half-plane coordinate,
/// where `Δ = 1` for SL2 and `Δ = αδ − βγ` for the Gelfand–Graev frame.
pub fn halfplane_preservation_check(name: &str, spec: &SeriesSpec, g: &GroupElement, points: usize, seed: u64) -> VerificationReport {
    let mut t = Tally::new().keep_details(4);
    let run = |t: &mut Tally| -> Result<()> {
        if !spec.requires_analyticity() {
            return Err(Error::Unsupported(format!("{} has no half-plane coordinate", spec.id)));
        }
        let op = OperatorInstance::new(spec.clone(), g.clone())?;
        let mut rng = rng_for(seed, 0);
        let mut resamples = 0;
        let mut mismatches = 0u64;
        for i in 0..points {
            let bad = draw_generic(spec, &mut rng, RESAMPLE_FACTOR, &mut resamples, |x| {
                if x[0].im.abs() < SIGN_GUARD * (1.0 + x[0].norm()) {
                    return Err(Error::ZeroDiagonal(x[0].im));
                }
                let (_, xp) = op.act(x)?;
                let det = match spec.model {
                    CoordModel::GelfandGraev => {
                        let f = gg_frame(x[1].re, x[2].re, g)?;
                        f.alpha * f.delta - f.beta * f.gamma
                    }
                    _ => g.mat().det().re,
                };
                Ok(xp[0].im.signum() != det.signum() * x[0].im.signum())
            })?;
            if bad {
                mismatches += 1;
                t.record(format!("point {i}"), 1.0);
            } else {
                t.record(format!("point {i}"), 0.0);
            }
        }
        t.add_resamples(resamples);
        if mismatches > 0 {
            t.note("mismatches", mismatches.to_string());
        }
        Ok(())
    };
    if let Err(e) = run(&mut t) {
        t.record_failure("halfplane", e.to_string());
    }
    // Any mismatch (error 1) fails; agreement (error 0) passes.
    t.finish(name, 0.5, seed)
}

/// Levels of the Hardy norm for the limit-of-discrete family, as a report
/// entry: `Ok(true)` if every member's level integrals are nondecreasing.
pub fn hardy_levels_nondecreasing(spec: &SeriesSpec) -> Result<bool> {
    let InnerKind::HardyBoundary { side } = spec.space.kind else {
        return Err(Error::Unsupported(format!("{} has no Hardy norm", spec.id)));
    };
    let quad = QuadratureConfig::tensor(40, None);
    for f in spec.family(FAMILY_SIZE) {
        let (_, rep) = crate::repspaces::hardy_norm(f.as_ref(), side, &HARDY_LEVELS, &quad)?;
        if !rep.nondecreasing {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{random_group_element, Mat};
    use crate::repspaces::{GaussianBump, HalfPlaneRational};

    fn g_for(spec: &SeriesSpec, seed: u64) -> GroupElement {
        random_group_element(spec.n(), spec.field(), seed, 8.0).unwrap()
    }

    #[test]
    fn identity_acts_trivially() {
        for id in SeriesId::ALL {
            let spec = SeriesSpec::with_defaults(id);
            let op = OperatorInstance::new(spec.clone(), GroupElement::identity(spec.n(), spec.field())).unwrap();
            let fam = spec.family(2);
            let mut rng = rng_for(1, id as u64);
            let x = spec.sample_point(&mut rng);
            let v = apply(&op, fam[1].as_ref(), &x).unwrap();
            assert!(rel_diff(v, fam[1].eval(&x)) < 1e-13, "{id}");
        }
    }

    #[test]
    fn discrete_series_inversion() {
        // s = 1, g = [[0,1],[−1,0]], z = i: z^{−2} f(−1/z) = −f(i).
        let spec = SeriesSpec::new(SeriesId::Sl2rDiscrete, CharacterParams::discrete(1, HalfPlane::Upper)).unwrap();
        let g = GroupElement::new(Mat::from_real_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).unwrap(), Field::Real).unwrap();
        let op = OperatorInstance::new(spec, g).unwrap();
        let f = HalfPlaneRational::new(C64::new(0.3, -1.4), 3, HalfPlane::Upper).unwrap();
        let i = C64::new(0.0, 1.0);
        let v = apply(&op, &f, &[i]).unwrap();
        assert!((v + f.eval(&[i])).norm() < 1e-14);
    }

    #[test]
    fn analyticity_is_required() {
        let spec = SeriesSpec::with_defaults(SeriesId::Sl2rDiscrete);
        let op = OperatorInstance::new(spec, GroupElement::identity(2, Field::Real)).unwrap();
        let b = GaussianBump::standard(vec![Field::Complex]);
        assert!(matches!(apply(&op, &b, &[C64::new(0.0, 1.0)]), Err(Error::AnalyticityViolation(_))));
    }

    #[test]
    fn fibrations_round_trip() {
        let mut rng = rng_for(3, 0);
        for f in [Fibration::Sl3, Fibration::Sl4Corner, Fibration::Sl4Levi22, Fibration::Sl4Cell211] {
            let n = f.to_pattern(&[C64::new(0.0, 0.0); 6]).len();
            let x: Vec<C64> = (0..n).map(|_| sample_scalar(&mut rng, Field::Complex)).collect();
            let back = f.from_pattern(&f.to_pattern(&x));
            assert!(crate::flagdecomp::coord_rel_err(&back, &x) < 1e-15);
        }
    }

    #[test]
    fn compose_all_series() {
        for id in SeriesId::ALL {
            let spec = SeriesSpec::with_defaults(id);
            let fam = spec.family(2);
            let r = compose_check("c", &spec, &g_for(&spec, 1), &g_for(&spec, 2), fam[1].as_ref(), 20, 9, COMPOSE_TOL);
            assert!(r.passed(), "{id}: {:?}", r.details);
        }
    }

    #[test]
    fn closed_form_matches_oracle_route() {
        for id in SeriesId::ALL {
            let spec = SeriesSpec::with_defaults(id);
            let fam = spec.family(2);
            let r = route_check("r", &spec, &g_for(&spec, 5), fam[0].as_ref(), 20, 4, ROUTE_TOL);
            assert!(r.passed(), "{id}: {:?}", r.details);
        }
    }

    #[test]
    fn sl2c_principal_inversion_preserves_norm() {
        let spec = SeriesSpec::new(SeriesId::Sl2cPrincipal, CharacterParams::new(&[0], &[0.0], &[])).unwrap();
        let g = GroupElement::new(Mat::from_real_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).unwrap().scale(C64::new(1.0, 0.0)), Field::Complex)
            .unwrap();
        let f = GaussianBump::standard(vec![Field::Complex]);
        let r = unitarity_check("u", &spec, &g, &[&f], &QuadratureConfig::default(), None);
        assert!(r.passed(), "{:?}", r.details);
    }

    #[test]
    fn covariance_of_all_kernels() {
        for id in SeriesId::ALL
            .into_iter()
            .filter(|id| id.is_complementary() && *id != SeriesId::Sl3rComplementary)
        {
            let spec = SeriesSpec::with_defaults(id);
            let r = kernel_covariance_check("k", &spec, &g_for(&spec, 7), 20, 3, 1e-6);
            assert!(r.passed(), "{id}: {:?}", r.details);
        }
    }

    #[test]
    fn levi_pairing_is_the_invariant_one() {
        let spec = SeriesSpec::with_defaults(SeriesId::Sl4cComplementary2);
        let s = &spec.params.sigma;
        // Pair z1 with σ1 and z2 with σ2 instead.
        let swapped = InnerProductSpec::riesz(spec.coords().to_vec(), vec![4, 5], vec![2.0 * s[0] - 2.0, 2.0 * s[1] - 2.0], 1.0).unwrap();
        let alt = spec.clone().with_space(swapped).unwrap();
        let g = g_for(&spec, 11);
        assert!(kernel_covariance_check("k", &spec, &g, 20, 1, 1e-6).passed());
        assert!(!kernel_covariance_check("k", &alt, &g, 20, 1, 1e-6).passed());
    }

    #[test]
    fn sl3r_kernel_is_covariant_only_at_doubled_power() {
        // The character differs by 2σ between the Levi blocks, so the fiber
        // kernel that intertwines is |x1 − y1|^{2σ−1}, not |x1 − y1|^{σ−1}.
        for sigma in [0.3, 0.7] {
            let spec = SeriesSpec::new(SeriesId::Sl3rComplementary, CharacterParams::new(&[1], &[0.4], &[sigma])).unwrap();
            let g = g_for(&spec, 7);
            assert!(!kernel_covariance_check("k", &spec, &g, 10, 3, 1e-6).passed());
            let doubled = InnerProductSpec::riesz(spec.coords().to_vec(), vec![2], vec![2.0 * sigma - 1.0], 1.0).unwrap();
            let alt = spec.clone().with_space(doubled).unwrap();
            assert!(kernel_covariance_check("k", &alt, &g, 10, 3, 1e-6).passed());
        }
    }

    #[test]
    fn halfplane_signs() {
        for id in [SeriesId::Sl2rDiscrete, SeriesId::Sl2rLimitDiscrete, SeriesId::Sl3rGelfandGraev] {
            let spec = SeriesSpec::with_defaults(id);
            let r = halfplane_preservation_check("h", &spec, &g_for(&spec, 2), 200, 8);
            assert!(r.passed(), "{id}: {:?}", r.details);
        }
    }

    #[test]
    fn gg_direct_formula_agrees_with_frame() {
        let spec = SeriesSpec::with_defaults(SeriesId::Sl3rGelfandGraev);
        let g = g_for(&spec, 3);
        let op = OperatorInstance::new(spec.clone(), g.clone()).unwrap();
        let mut rng = rng_for(4, 0);
        for _ in 0..20 {
            let x = spec.sample_point(&mut rng);
            let (_, xp) = op.act(&x).unwrap();
            let direct = crate::flagdecomp::gg_z21_direct(x[0], x[1].re, x[2].re, &g);
            assert!(rel_diff(xp[0], direct) < 1e-10);
        }
    }
}
