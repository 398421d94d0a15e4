//! Haar densities on the parabolic groups, checked against finite-difference
//! Jacobians of left and right translations.
//!
//! A chart parameterizes the unit-determinant parabolic group by all allowed
//! entries but one; the eliminated entry is solved from the block determinant
//! constraint, which is affine in it.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::charmod::modular_from_data;
use crate::error::{Error, Result};
use crate::flagdecomp::{BlockPattern, ParabolicElement};
use crate::matcore::{rng_for, sample_scalar, Field, Mat, C64};
use crate::report::{Tally, VerificationReport};

pub const INVARIANCE_TOL: f64 = 1e-5;
pub const MODULAR_RATIO_TOL: f64 = 1e-12;
/// Relative finite-difference step.
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// A scalar function of the chart point raised to a power.
#[derive(Clone, Debug, PartialEq)]
pub enum Datum {
    /// 0-based matrix entry.
    Entry(usize, usize),
    /// Determinant of a diagonal block.
    BlockDet(usize),
    /// Minor on the given 0-based rows and columns.
    Minor(Vec<usize>, Vec<usize>),
}

/// `Π |datum|^exponent`.
#[derive(Clone, Debug, PartialEq)]
pub struct Density(pub Vec<(Datum, f64)>);

impl Density {
    pub fn eval(&self, pattern: &BlockPattern, k: &Mat) -> f64 {
        self.0
            .iter()
            .map(|(d, e)| {
                let v = match d {
                    Datum::Entry(i, j) => k[(*i, *j)],
                    Datum::BlockDet(b) => {
                        let r: Vec<usize> = pattern.block_range(*b).collect();
                        k.det_of(&r, &r)
                    }
                    Datum::Minor(r, c) => k.det_of(r, c),
                };
                v.norm().powf(*e)
            })
            .product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateChart {
    pub name: String,
    pub pattern: BlockPattern,
    pub eliminated: (usize, usize),
    pub free_positions: Vec<(usize, usize)>,
    pub density_left: Density,
    pub density_right: Density,
}

/// Haar densities of the unit-determinant slice: the block-parabolic densities of the
/// general linear group divided by `|∂det/∂k_elim|^c`.
pub fn block_formula_density(pattern: &BlockPattern, eliminated: (usize, usize), side: Side) -> Density {
    let c = pattern.field().c();
    let blocks = pattern.blocks();
    let mut terms = Vec::new();
    for b in 0..blocks.len() {
        let weight: usize = match side {
            Side::Left => blocks[b..].iter().sum(),
            Side::Right => blocks[..=b].iter().sum(),
        };
        terms.push((Datum::BlockDet(b), -c * weight as f64));
    }
    let eb = pattern.block_of(eliminated.0);
    for b in 0..blocks.len() {
        if b != eb {
            terms.push((Datum::BlockDet(b), -c));
        }
    }
    let r = pattern.block_range(eb);
    if r.len() > 1 {
        let rows: Vec<usize> = r.clone().filter(|&i| i != eliminated.0).collect();
        let cols: Vec<usize> = r.filter(|&j| j != eliminated.1).collect();
        terms.push((Datum::Minor(rows, cols), -c));
    }
    Density(terms)
}

impl CoordinateChart {
    /// A chart whose densities come from [`block_formula_density`].
    pub fn derived(name: &str, pattern: BlockPattern, eliminated: (usize, usize)) -> CoordinateChart {
        let free_positions = pattern
            .parabolic_positions()
            .into_iter()
            .filter(|&p| p != eliminated)
            .collect();
        CoordinateChart {
            name: name.to_string(),
            density_left: block_formula_density(&pattern, eliminated, Side::Left),
            density_right: block_formula_density(&pattern, eliminated, Side::Right),
            pattern,
            eliminated,
            free_positions,
        }
    }

    /// A chart carrying explicitly tabulated densities.
    pub fn displayed(
        name: &str,
        pattern: BlockPattern,
        eliminated: (usize, usize),
        left: Density,
        right: Density,
    ) -> CoordinateChart {
        let mut c = CoordinateChart::derived(name, pattern, eliminated);
        c.density_left = left;
        c.density_right = right;
        c
    }

    pub fn field(&self) -> Field {
        self.pattern.field()
    }

    pub fn dim(&self) -> usize {
        self.free_positions.len()
    }

    pub fn real_dim(&self) -> usize {
        self.dim() * self.field().real_dim()
    }

    pub fn density(&self, side: Side, k: &Mat) -> f64 {
        match side {
            Side::Left => self.density_left.eval(&self.pattern, k),
            Side::Right => self.density_right.eval(&self.pattern, k),
        }
    }

    /// Fills the free entries and solves the eliminated one from the unit determinant.
    pub fn to_matrix(&self, point: &[C64]) -> Result<Mat> {
        if point.len() != self.dim() {
            return Err(Error::DimensionMismatch("chart point length".into()));
        }
        let mut k = Mat::zeros(self.pattern.n());
        for (&p, &v) in self.free_positions.iter().zip(point) {
            k[p] = v;
        }
        let total = |k: &Mat| -> C64 { self.pattern.block_dets(k).iter().product() };
        k[self.eliminated] = C64::new(0.0, 0.0);
        let b = total(&k);
        k[self.eliminated] = C64::new(1.0, 0.0);
        let a = total(&k) - b;
        let scale = point.iter().map(|c| c.norm()).fold(1.0, f64::max);
        if a.norm() < 1e-12 * scale.powi(self.pattern.n() as i32 - 1) {
            return Err(Error::ChartExit);
        }
        k[self.eliminated] = (C64::new(1.0, 0.0) - b) / a;
        if self.field() == Field::Real {
            k[self.eliminated].im = 0.0;
        }
        Ok(k)
    }

    pub fn from_matrix(&self, k: &Mat) -> Vec<C64> {
        self.free_positions.iter().map(|&p| k[p]).collect()
    }

    fn to_real(&self, point: &[C64]) -> Vec<f64> {
        match self.field() {
            Field::Real => point.iter().map(|c| c.re).collect(),
            Field::Complex => point.iter().flat_map(|c| [c.re, c.im]).collect(),
        }
    }

    fn from_real(&self, x: &[f64]) -> Vec<C64> {
        match self.field() {
            Field::Real => x.iter().map(|&r| C64::new(r, 0.0)).collect(),
            Field::Complex => x.chunks(2).map(|c| C64::new(c[0], c[1])).collect(),
        }
    }

    /// Samples a chart point with O(1) entries whose eliminated entry is moderate.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<C64>, u64) {
        let mut resamples = 0;
        loop {
            let p: Vec<C64> = (0..self.dim()).map(|_| sample_scalar(rng, self.field())).collect();
            match self.to_matrix(&p) {
                Ok(k) if k[self.eliminated].norm() < 20.0 && diag_ok(&self.pattern, &k) => return (p, resamples),
                _ => resamples += 1,
            }
        }
    }
}

fn diag_ok(pattern: &BlockPattern, k: &Mat) -> bool {
    pattern.block_dets(k).iter().all(|d| d.norm() > 0.05 && d.norm() < 20.0)
}

fn tabulated_density(terms: &[((usize, usize), f64)]) -> Density {
    Density(terms.iter().map(|&((i, j), e)| (Datum::Entry(i - 1, j - 1), e)).collect())
}

/// The shipped charts: SL3 over R and C (full and (2,1)), SL4 over C (full, (3,1), (2,1,1)),
/// plus the SL2 charts.
///
/// The SL3 charts carry the tabulated densities (SL3 full: `|k33|^2 / |k22|^{-4}|k33|^{-6}` over C,
/// `|k33| / |k22|^{-2}|k33|^{-3}` over R; (2,1) with `k33` eliminated: `|k33|^6, 1` over C,
/// `|k33|^3, 1` over R). The others carry the block formula.
pub fn shipped_charts() -> Vec<CoordinateChart> {
    let pat = |b: &[usize], f| BlockPattern::new(b, f).expect("supported");
    vec![
        CoordinateChart::derived("sl2c-full", pat(&[1, 1], Field::Complex), (0, 0)),
        CoordinateChart::derived("sl2r-full", pat(&[1, 1], Field::Real), (0, 0)),
        CoordinateChart::displayed(
            "sl3c-full",
            pat(&[1, 1, 1], Field::Complex),
            (0, 0),
            tabulated_density(&[((3, 3), 2.0)]),
            tabulated_density(&[((2, 2), -4.0), ((3, 3), -6.0)]),
        ),
        CoordinateChart::displayed(
            "sl3r-full",
            pat(&[1, 1, 1], Field::Real),
            (0, 0),
            tabulated_density(&[((3, 3), 1.0)]),
            tabulated_density(&[((2, 2), -2.0), ((3, 3), -3.0)]),
        ),
        CoordinateChart::displayed(
            "sl3c-21",
            pat(&[2, 1], Field::Complex),
            (2, 2),
            tabulated_density(&[((3, 3), 6.0)]),
            tabulated_density(&[]),
        ),
        CoordinateChart::displayed(
            "sl3r-21",
            pat(&[2, 1], Field::Real),
            (2, 2),
            tabulated_density(&[((3, 3), 3.0)]),
            tabulated_density(&[]),
        ),
        CoordinateChart::derived("sl4c-full", pat(&[1, 1, 1, 1], Field::Complex), (0, 0)),
        CoordinateChart::derived("sl4c-31", pat(&[3, 1], Field::Complex), (0, 0)),
        CoordinateChart::derived("sl4c-211", pat(&[2, 1, 1], Field::Complex), (0, 0)),
    ]
}

pub fn chart_by_name(name: &str) -> Result<CoordinateChart> {
    shipped_charts()
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::Config(format!("unknown chart '{name}'")))
}

fn translate(chart: &CoordinateChart, h: &Mat, k: &Mat, side: Side) -> Mat {
    let _ = chart;
    match side {
        Side::Left => h * k,
        Side::Right => k * h,
    }
}

/// `|det|` of the real Jacobian of `k ↦ hk` (or `kh`) in chart coordinates, by central differences
/// with step `step · max(|coordinate|, 1)`.
pub fn translation_jacobian_with_step(
    chart: &CoordinateChart,
    h: &ParabolicElement,
    point: &[C64],
    side: Side,
    step: f64,
) -> Result<f64> {
    let x0 = chart.to_real(point);
    let d = x0.len();
    let magnitude: Vec<f64> = match chart.field() {
        Field::Real => point.iter().map(|c| c.norm()).collect(),
        Field::Complex => point.iter().flat_map(|c| [c.norm(), c.norm()]).collect(),
    };
    let image = |x: &[f64]| -> Result<Vec<f64>> {
        let k = chart.to_matrix(&chart.from_real(x))?;
        let t = translate(chart, h.mat(), &k, side);
        // Leaving the chart: the eliminated entry is no longer solvable.
        let back = chart.from_matrix(&t);
        chart.to_matrix(&back)?;
        Ok(chart.to_real(&back))
    };
    image(&x0)?;
    let mut jac = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let hstep = step * magnitude[j].max(1.0);
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += hstep;
        xm[j] -= hstep;
        let fp = image(&xp)?;
        let fm = image(&xm)?;
        for i in 0..d {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * hstep);
        }
    }
    Ok(jac.determinant().abs())
}

pub fn translation_jacobian(chart: &CoordinateChart, h: &ParabolicElement, point: &[C64], side: Side) -> Result<f64> {
    translation_jacobian_with_step(chart, h, point, side, FD_STEP)
}

/// Jacobian of `k ↦ h k h^{-1}` in chart coordinates.
pub fn conjugation_jacobian(chart: &CoordinateChart, h: &ParabolicElement, point: &[C64]) -> Result<f64> {
    let hinv = h.mat().inverse().ok_or(Error::ChartExit)?;
    let hi = ParabolicElement::from_parts(chart.pattern.clone(), hinv);
    let l = translation_jacobian(chart, h, point, Side::Left)?;
    let k = chart.to_matrix(point)?;
    let moved = chart.from_matrix(&(h.mat() * &k));
    let r = translation_jacobian(chart, &hi, &moved, Side::Right)?;
    Ok(l * r)
}

/// Relative violation of `ρ(hk)·J(k) = ρ(k)` at one point.
pub fn invariance_violation(chart: &CoordinateChart, side: Side, h: &ParabolicElement, point: &[C64]) -> Result<f64> {
    let k = chart.to_matrix(point)?;
    let j = translation_jacobian(chart, h, point, side)?;
    let moved = translate(chart, h.mat(), &k, side);
    let rho0 = chart.density(side, &k);
    let rho1 = chart.density(side, &moved);
    Ok((rho1 * j - rho0).abs() / rho0)
}

/// Maximum relative invariance violation over seeded `(h, k)` pairs; pass iff `≤ 1e-5`.
pub fn verify_invariance(chart: &CoordinateChart, side: Side, trials: usize, seed: u64) -> VerificationReport {
    let mut tally = Tally::new().keep_details(8);
    for t in 0..trials {
        let mut rng = rng_for(seed, t as u64);
        let (hp, r1) = chart.sample_point(&mut rng);
        let (kp, r2) = chart.sample_point(&mut rng);
        tally.add_resamples(r1 + r2);
        let h = match chart.to_matrix(&hp) {
            Ok(h) => ParabolicElement::from_parts(chart.pattern.clone(), h),
            Err(e) => {
                tally.record_failure(format!("trial {t}"), e.to_string());
                continue;
            }
        };
        match invariance_violation(chart, side, &h, &kp) {
            Ok(v) => tally.record(format!("trial {t}"), v),
            Err(Error::ChartExit) => tally.add_resamples(1),
            Err(e) => tally.record_failure(format!("trial {t}"), e.to_string()),
        }
    }
    let name = format!("haar-{}-{:?}", chart.name, side).to_lowercase();
    tally.finish(&name, INVARIANCE_TOL, seed)
}

/// Pointwise agreement of `ρ_l/ρ_r` with the modular function; pass iff `≤ 1e-12`.
pub fn verify_modular_ratio(chart: &CoordinateChart, trials: usize, seed: u64) -> VerificationReport {
    let mut tally = Tally::new().keep_details(8);
    for t in 0..trials {
        let mut rng = rng_for(seed, t as u64);
        let (p, r) = chart.sample_point(&mut rng);
        tally.add_resamples(r);
        let k = match chart.to_matrix(&p) {
            Ok(k) => k,
            Err(e) => {
                tally.record_failure(format!("trial {t}"), e.to_string());
                continue;
            }
        };
        let ratio = chart.density(Side::Left, &k) / chart.density(Side::Right, &k);
        match modular_from_data(&chart.pattern, &chart.pattern.block_dets(&k)) {
            Ok(beta) => tally.record(format!("trial {t}"), (ratio - beta).abs() / beta),
            Err(e) => tally.record_failure(format!("trial {t}"), e.to_string()),
        }
    }
    let name = format!("modular-{}", chart.name);
    tally.finish(&name, MODULAR_RATIO_TOL, seed)
}
