//! The factorization `z·g = k_g·(zḡ)` of a lower block-unipotent `z` times a group
//! element into an upper block-parabolic `k_g` and a new unipotent point.
//!
//! Two independent routes are provided: block elimination ([`decompose_oracle`])
//! and explicit rational minor formulas ([`decompose_closed_form`]).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{sample_scalar, Field, GroupElement, Mat, C64};

/// Points whose trailing minors fall below this fraction of the local scale are singular.
pub const GENERICITY_TOL: f64 = 1e-8;

/// A composition of `n` selecting a block upper-triangular subgroup, plus the field.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockPattern {
    blocks: Vec<usize>,
    field: Field,
}

impl BlockPattern {
    pub fn new(blocks: &[usize], field: Field) -> Result<BlockPattern> {
        let supported: &[&[usize]] = &[
            &[1, 1],
            &[1, 1, 1],
            &[2, 1],
            &[1, 1, 1, 1],
            &[3, 1],
            &[2, 1, 1],
            &[2, 2],
        ];
        if !supported.contains(&blocks) {
            return Err(Error::Unsupported(format!("block pattern {blocks:?}")));
        }
        Ok(BlockPattern {
            blocks: blocks.to_vec(),
            field,
        })
    }

    /// The full (Borel) pattern `(1,…,1)` of size `n`.
    pub fn full(n: usize, field: Field) -> Result<BlockPattern> {
        BlockPattern::new(&vec![1; n], field)
    }

    /// Parses a composition such as `"2,1,1"`.
    pub fn parse(s: &str, field: Field) -> Result<BlockPattern> {
        let blocks: std::result::Result<Vec<usize>, _> =
            s.split(',').map(|t| usize::from_str(t.trim())).collect();
        let blocks = blocks.map_err(|_| Error::Config(format!("bad pattern '{s}'")))?;
        BlockPattern::new(&blocks, field)
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn with_field(&self, field: Field) -> BlockPattern {
        BlockPattern {
            blocks: self.blocks.clone(),
            field,
        }
    }

    pub fn n(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_full(&self) -> bool {
        self.blocks.iter().all(|&b| b == 1)
    }

    /// First index of each block.
    pub fn block_starts(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.blocks.len());
        let mut acc = 0;
        for &b in &self.blocks {
            s.push(acc);
            acc += b;
        }
        s
    }

    pub fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        let start: usize = self.blocks[..b].iter().sum();
        start..start + self.blocks[b]
    }

    pub fn block_of(&self, i: usize) -> usize {
        let mut acc = 0;
        for (b, &size) in self.blocks.iter().enumerate() {
            acc += size;
            if i < acc {
                return b;
            }
        }
        panic!("index {i} outside pattern");
    }

    /// Free coordinates of the unipotent cell, row-major (0-based `(p, q)` with `p > q`).
    pub fn unipotent_positions(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for p in 0..n {
            for q in 0..p {
                if self.block_of(p) > self.block_of(q) {
                    out.push((p, q));
                }
            }
        }
        out
    }

    /// Positions allowed to be nonzero in the parabolic group.
    pub fn parabolic_positions(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for p in 0..n {
            for q in 0..n {
                if self.block_of(p) <= self.block_of(q) {
                    out.push((p, q));
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        self.blocks
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Determinants of the diagonal blocks of `m`.
    pub fn block_dets(&self, m: &Mat) -> Vec<C64> {
        (0..self.num_blocks())
            .map(|b| {
                let r: Vec<usize> = self.block_range(b).collect();
                m.det_of(&r, &r)
            })
            .collect()
    }
}

impl fmt::Display for BlockPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) over {}", self.label(), self.field)
    }
}

/// A point of the lower block-unipotent cell.
#[derive(Clone, Debug, PartialEq)]
pub struct UnipotentPoint {
    pattern: BlockPattern,
    coords: Vec<C64>,
}

impl UnipotentPoint {
    /// Coordinates ordered as [`BlockPattern::unipotent_positions`].
    pub fn new(pattern: BlockPattern, coords: Vec<C64>) -> Result<UnipotentPoint> {
        let d = pattern.unipotent_positions().len();
        if coords.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "pattern ({}) has {d} coordinates, got {}",
                pattern.label(),
                coords.len()
            )));
        }
        if pattern.field() == Field::Real && coords.iter().any(|c| c.im != 0.0) {
            return Err(Error::InvalidParams("real point with complex coordinates".into()));
        }
        Ok(UnipotentPoint { pattern, coords })
    }

    pub fn origin(pattern: BlockPattern) -> UnipotentPoint {
        let d = pattern.unipotent_positions().len();
        UnipotentPoint {
            pattern,
            coords: vec![C64::new(0.0, 0.0); d],
        }
    }

    /// Reads the free coordinates of a matrix (no structural check).
    pub fn from_matrix(pattern: BlockPattern, m: &Mat) -> UnipotentPoint {
        let coords = pattern.unipotent_positions().iter().map(|&p| m[p]).collect();
        UnipotentPoint { pattern, coords }
    }

    pub fn pattern(&self) -> &BlockPattern {
        &self.pattern
    }

    pub fn coords(&self) -> &[C64] {
        &self.coords
    }

    /// Coordinate at the 0-based position `(p, q)`, zero if not free.
    pub fn at(&self, p: usize, q: usize) -> C64 {
        self.pattern
            .unipotent_positions()
            .iter()
            .position(|&pos| pos == (p, q))
            .map(|i| self.coords[i])
            .unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn embed(&self) -> Mat {
        let mut m = Mat::identity(self.pattern.n());
        for (&pos, &c) in self.pattern.unipotent_positions().iter().zip(&self.coords) {
            m[pos] = c;
        }
        m
    }
}

/// Draws unit-variance Gaussian coordinates.
pub fn sample_unipotent<R: Rng + ?Sized>(rng: &mut R, pattern: &BlockPattern) -> UnipotentPoint {
    let d = pattern.unipotent_positions().len();
    let coords = (0..d).map(|_| sample_scalar(rng, pattern.field())).collect();
    UnipotentPoint {
        pattern: pattern.clone(),
        coords,
    }
}

/// An element of the block upper-triangular group of a pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct ParabolicElement {
    pattern: BlockPattern,
    mat: Mat,
}

impl ParabolicElement {
    /// Checks the block structure and unit determinant (1e-10 relative).
    pub fn new(pattern: BlockPattern, mat: Mat) -> Result<ParabolicElement> {
        if mat.n() != pattern.n() {
            return Err(Error::DimensionMismatch("parabolic size".into()));
        }
        let allowed = pattern.parabolic_positions();
        for p in 0..mat.n() {
            for q in 0..mat.n() {
                if !allowed.contains(&(p, q)) && mat[(p, q)].norm() != 0.0 {
                    return Err(Error::InvalidParams(format!(
                        "nonzero entry below the block diagonal at ({}, {})",
                        p + 1,
                        q + 1
                    )));
                }
            }
        }
        let d: C64 = pattern.block_dets(&mat).iter().product();
        let scale = mat.max_norm().max(1.0).powi(mat.n() as i32);
        if (d - 1.0).norm() > 1e-10 * scale {
            return Err(Error::InvalidParams(format!("block determinant product {d}")));
        }
        Ok(ParabolicElement { pattern, mat })
    }

    /// Builds without validation; used for intermediate products.
    pub(crate) fn from_parts(pattern: BlockPattern, mat: Mat) -> ParabolicElement {
        ParabolicElement { pattern, mat }
    }

    pub fn identity(pattern: BlockPattern) -> ParabolicElement {
        let n = pattern.n();
        ParabolicElement {
            pattern,
            mat: Mat::identity(n),
        }
    }

    pub fn pattern(&self) -> &BlockPattern {
        &self.pattern
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn block_dets(&self) -> Vec<C64> {
        self.pattern.block_dets(&self.mat)
    }

    pub fn compose(&self, other: &ParabolicElement) -> ParabolicElement {
        ParabolicElement {
            pattern: self.pattern.clone(),
            mat: &self.mat * &other.mat,
        }
    }
}

/// The parabolic factor of a decomposition.
#[derive(Clone, Debug, PartialEq)]
pub enum KFactor {
    Full(ParabolicElement),
    /// Only the diagonal block determinants (pattern (2,2) closed form).
    BlockDets(Vec<C64>),
}

impl KFactor {
    pub fn block_dets(&self) -> Vec<C64> {
        match self {
            KFactor::Full(k) => k.block_dets(),
            KFactor::BlockDets(d) => d.clone(),
        }
    }

    pub fn as_full(&self) -> Option<&ParabolicElement> {
        match self {
            KFactor::Full(k) => Some(k),
            KFactor::BlockDets(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecompResult {
    pub k: KFactor,
    pub z_out: UnipotentPoint,
    pub genericity_margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Route {
    ClosedForm,
    Oracle,
}

pub fn decompose(z: &UnipotentPoint, g: &GroupElement, route: Route) -> Result<DecompResult> {
    match route {
        Route::ClosedForm => decompose_closed_form(z, g),
        Route::Oracle => decompose_oracle(z, g),
    }
}

fn check_inputs(z: &UnipotentPoint, g: &GroupElement) -> Result<()> {
    if z.pattern().n() != g.n() {
        return Err(Error::DimensionMismatch(format!(
            "point of size {} with group element of size {}",
            z.pattern().n(),
            g.n()
        )));
    }
    if z.pattern().field() != g.field() {
        return Err(Error::DimensionMismatch("field mismatch".into()));
    }
    Ok(())
}

fn local_scale(m: &Mat) -> f64 {
    m.max_norm().max(f64::MIN_POSITIVE)
}

/// Bottom-up block elimination of `m = z·g`.
pub fn decompose_oracle(z: &UnipotentPoint, g: &GroupElement) -> Result<DecompResult> {
    check_inputs(z, g)?;
    let pattern = z.pattern().clone();
    let n = pattern.n();
    let m = &z.embed() * g.mat();
    let scale = local_scale(&m);
    let mut work = m;
    let mut k = Mat::zeros(n);
    let mut zp = Mat::identity(n);
    let mut margin = f64::INFINITY;
    let mut trailing = C64::new(1.0, 0.0);
    for b in (0..pattern.num_blocks()).rev() {
        let r = pattern.block_range(b);
        let (r0, r1) = (r.start, r.end);
        let size = r1 - r0;
        let block = Mat::from_fn(size, |i, j| work[(r0 + i, r0 + j)]);
        trailing *= block.det();
        if r0 > 0 {
            margin = margin.min(trailing.norm() / scale.powi((n - r0) as i32));
            if margin < GENERICITY_TOL {
                return Err(Error::DecompositionSingular { margin });
            }
        }
        for p in 0..r1 {
            for q in r0..r1 {
                k[(p, q)] = work[(p, q)];
            }
        }
        if r0 == 0 {
            break;
        }
        let inv = block.inverse().ok_or(Error::DecompositionSingular { margin: 0.0 })?;
        let mut y = vec![vec![C64::new(0.0, 0.0); r0]; size];
        for (i, row) in y.iter_mut().enumerate() {
            for (q, entry) in row.iter_mut().enumerate() {
                *entry = (0..size).map(|l| inv[(i, l)] * work[(r0 + l, q)]).sum();
            }
        }
        for i in 0..size {
            for q in 0..r0 {
                zp[(r0 + i, q)] = y[i][q];
            }
        }
        for p in 0..r0 {
            for q in 0..r0 {
                let s: C64 = (0..size).map(|l| work[(p, r0 + l)] * y[l][q]).sum();
                work[(p, q)] -= s;
            }
        }
    }
    let k = if pattern.field() == Field::Real { realify(&k) } else { k };
    let zp = if pattern.field() == Field::Real { realify(&zp) } else { zp };
    Ok(DecompResult {
        k: KFactor::Full(ParabolicElement::from_parts(pattern.clone(), k)),
        z_out: UnipotentPoint::from_matrix(pattern, &zp),
        genericity_margin: margin,
    })
}

fn realify(m: &Mat) -> Mat {
    Mat::from_fn(m.n(), |i, j| C64::new(m[(i, j)].re, 0.0))
}

/// 1-based entry accessor used to transcribe the displayed formulas.
struct Ent<'a>(&'a Mat);

impl Ent<'_> {
    fn e(&self, i: usize, j: usize) -> C64 {
        self.0[(i - 1, j - 1)]
    }
    fn d2(&self, (a, b): (usize, usize), (c, d): (usize, usize)) -> C64 {
        self.e(a, c) * self.e(b, d) - self.e(a, d) * self.e(b, c)
    }
}

/// Sum over column sets `S` of `minor_z(rows, S)·minor_g(S, cols)` (Cauchy–Binet).
fn cauchy_binet(z: &Mat, g: &Mat, rows: &[usize], cols: &[usize]) -> C64 {
    let n = z.n();
    let k = rows.len();
    let mut sum = C64::new(0.0, 0.0);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let s: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let zm = z.det_of(rows, &s);
        if zm.norm() == 0.0 {
            continue;
        }
        sum += zm * g.det_of(&s, cols);
    }
    sum
}

struct Denominator {
    value: C64,
    degree: i32,
}

fn require(dens: &[Denominator], scale: f64) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for d in dens {
        margin = margin.min(d.value.norm() / scale.powi(d.degree));
    }
    if margin < GENERICITY_TOL {
        return Err(Error::DecompositionSingular { margin });
    }
    Ok(margin)
}

/// Explicit rational minor formulas for every supported pattern.
///
/// Parabolic entries without a listed formula come from `k = (z·g)·z′⁻¹`.
pub fn decompose_closed_form(z: &UnipotentPoint, g: &GroupElement) -> Result<DecompResult> {
    check_inputs(z, g)?;
    let pattern = z.pattern().clone();
    let zm = z.embed();
    let m = &zm * g.mat();
    let scale = local_scale(&m);
    let gm = Ent(g.mat());
    let z1 = |p: usize, q: usize| z.at(p - 1, q - 1);
    let one = C64::new(1.0, 0.0);

    // Listed entries as 1-based ((p, q), value) for k and z′.
    let mut k_entries: Vec<((usize, usize), C64)> = Vec::new();
    let mut z_entries: Vec<((usize, usize), C64)> = Vec::new();
    let margin;
    let mut k_dets_only: Option<Vec<C64>> = None;

    match pattern.blocks() {
        [1, 1] => {
            let x = z1(2, 1);
            let k22 = gm.e(1, 2) * x + gm.e(2, 2);
            margin = require(&[Denominator { value: k22, degree: 1 }], scale)?;
            let zp = (gm.e(1, 1) * x + gm.e(2, 1)) / k22;
            k_entries.extend([((1, 1), one / k22), ((1, 2), gm.e(1, 2)), ((2, 2), k22)]);
            z_entries.push(((2, 1), zp));
        }
        [1, 1, 1] => {
            let (z21, z31, z32) = (z1(2, 1), z1(3, 1), z1(3, 2));
            let zz = z21 * z32 - z31;
            let den2 = gm.d2((2, 3), (2, 3)) + gm.d2((1, 3), (2, 3)) * z21 + gm.d2((1, 2), (2, 3)) * zz;
            let k33 = gm.e(3, 3) + gm.e(2, 3) * z32 + gm.e(1, 3) * z31;
            margin = require(
                &[
                    Denominator { value: k33, degree: 1 },
                    Denominator { value: den2, degree: 2 },
                ],
                scale,
            )?;
            let num21 = gm.d2((2, 3), (1, 3)) + gm.d2((1, 3), (1, 3)) * z21 + gm.d2((1, 2), (1, 3)) * zz;
            k_entries.extend([((1, 1), one / den2), ((2, 2), den2 / k33), ((3, 3), k33)]);
            z_entries.extend([
                ((2, 1), num21 / den2),
                ((3, 1), (gm.e(3, 1) + gm.e(2, 1) * z32 + gm.e(1, 1) * z31) / k33),
                ((3, 2), (gm.e(3, 2) + gm.e(2, 2) * z32 + gm.e(1, 2) * z31) / k33),
            ]);
        }
        [2, 1] => {
            let (z31, z32) = (z1(3, 1), z1(3, 2));
            let k33 = gm.e(3, 3) + gm.e(2, 3) * z32 + gm.e(1, 3) * z31;
            margin = require(&[Denominator { value: k33, degree: 1 }], scale)?;
            k_entries.extend([
                ((1, 1), (gm.d2((1, 3), (1, 3)) + gm.d2((1, 2), (1, 3)) * z32) / k33),
                ((1, 2), (gm.d2((1, 3), (2, 3)) + gm.d2((1, 2), (2, 3)) * z32) / k33),
                ((2, 1), (gm.d2((2, 3), (1, 3)) - gm.d2((1, 2), (1, 3)) * z31) / k33),
                ((2, 2), (gm.d2((2, 3), (2, 3)) - gm.d2((1, 2), (2, 3)) * z31) / k33),
                ((1, 3), gm.e(1, 3)),
                ((2, 3), gm.e(2, 3)),
                ((3, 3), k33),
            ]);
            z_entries.extend([
                ((3, 1), (gm.e(3, 1) + gm.e(2, 1) * z32 + gm.e(1, 1) * z31) / k33),
                ((3, 2), (gm.e(3, 2) + gm.e(2, 2) * z32 + gm.e(1, 2) * z31) / k33),
            ]);
        }
        blocks => {
            // n = 4: minors of z·g in Cauchy–Binet form over z-minors and g-minors.
            let cb = |rows: &[usize], cols: &[usize]| {
                let r: Vec<usize> = rows.iter().map(|i| i - 1).collect();
                let c: Vec<usize> = cols.iter().map(|i| i - 1).collect();
                cauchy_binet(&zm, g.mat(), &r, &c)
            };
            let d1 = cb(&[4], &[4]);
            let d2 = cb(&[3, 4], &[3, 4]);
            let d3 = cb(&[2, 3, 4], &[2, 3, 4]);
            match blocks {
                [1, 1, 1, 1] => {
                    margin = require(
                        &[
                            Denominator { value: d1, degree: 1 },
                            Denominator { value: d2, degree: 2 },
                            Denominator { value: d3, degree: 3 },
                        ],
                        scale,
                    )?;
                    k_entries.extend([
                        ((1, 1), one / d3),
                        ((2, 2), d3 / d2),
                        ((3, 3), d2 / d1),
                        ((4, 4), d1),
                    ]);
                    z_entries.extend([
                        ((2, 1), cb(&[2, 3, 4], &[1, 3, 4]) / d3),
                        ((3, 1), cb(&[3, 4], &[1, 4]) / d2),
                        ((3, 2), cb(&[3, 4], &[2, 4]) / d2),
                        ((4, 1), cb(&[4], &[1]) / d1),
                        ((4, 2), cb(&[4], &[2]) / d1),
                        ((4, 3), cb(&[4], &[3]) / d1),
                    ]);
                }
                [3, 1] => {
                    margin = require(&[Denominator { value: d1, degree: 1 }], scale)?;
                    k_entries.push(((4, 4), d1));
                    z_entries.extend([
                        ((4, 1), cb(&[4], &[1]) / d1),
                        ((4, 2), cb(&[4], &[2]) / d1),
                        ((4, 3), cb(&[4], &[3]) / d1),
                    ]);
                }
                [2, 1, 1] => {
                    margin = require(
                        &[
                            Denominator { value: d1, degree: 1 },
                            Denominator { value: d2, degree: 2 },
                        ],
                        scale,
                    )?;
                    k_entries.extend([((3, 3), d2 / d1), ((4, 4), d1)]);
                    z_entries.extend([
                        ((3, 1), cb(&[3, 4], &[1, 4]) / d2),
                        ((3, 2), cb(&[3, 4], &[2, 4]) / d2),
                        ((4, 1), cb(&[4], &[1]) / d1),
                        ((4, 2), cb(&[4], &[2]) / d1),
                        ((4, 3), cb(&[4], &[3]) / d1),
                    ]);
                }
                [2, 2] => {
                    margin = require(&[Denominator { value: d2, degree: 2 }], scale)?;
                    z_entries.extend([
                        ((3, 1), cb(&[3, 4], &[1, 4]) / d2),
                        ((3, 2), cb(&[3, 4], &[2, 4]) / d2),
                        ((4, 1), cb(&[3, 4], &[3, 1]) / d2),
                        ((4, 2), cb(&[3, 4], &[3, 2]) / d2),
                    ]);
                    k_dets_only = Some(vec![one / d2, d2]);
                }
                _ => unreachable!("pattern validated on construction"),
            }
        }
    }

    let real = pattern.field() == Field::Real;
    let fix = |c: C64| if real { C64::new(c.re, 0.0) } else { c };
    let mut zp = Mat::identity(pattern.n());
    for &((p, q), v) in &z_entries {
        zp[(p - 1, q - 1)] = fix(v);
    }
    let z_out = UnipotentPoint::from_matrix(pattern.clone(), &zp);
    let k = match k_dets_only {
        Some(d) => KFactor::BlockDets(d.into_iter().map(fix).collect()),
        None => {
            let zinv = zp.inverse().expect("unipotent");
            let mut k = &m * &zinv;
            for (p, q) in (0..pattern.n()).flat_map(|p| (0..pattern.n()).map(move |q| (p, q))) {
                if pattern.block_of(p) > pattern.block_of(q) {
                    k[(p, q)] = C64::new(0.0, 0.0);
                }
            }
            for &((p, q), v) in &k_entries {
                k[(p - 1, q - 1)] = v;
            }
            let k = Mat::from_fn(k.n(), |i, j| fix(k[(i, j)]));
            KFactor::Full(ParabolicElement::from_parts(pattern.clone(), k))
        }
    };
    Ok(DecompResult {
        k,
        z_out,
        genericity_margin: margin,
    })
}

/// The induced birational action `z ↦ zḡ`.
pub fn birational_action(z: &UnipotentPoint, g: &GroupElement) -> Result<UnipotentPoint> {
    Ok(decompose_closed_form(z, g)?.z_out)
}

/// Entries with an explicit formula, as 0-based positions, for comparison against the oracle.
pub fn listed_k_positions(pattern: &BlockPattern) -> Vec<(usize, usize)> {
    let l: &[(usize, usize)] = match pattern.blocks() {
        [1, 1] => &[(1, 1), (1, 2), (2, 2)],
        [1, 1, 1] => &[(1, 1), (2, 2), (3, 3)],
        [2, 1] => &[(1, 1), (1, 2), (2, 1), (2, 2), (1, 3), (2, 3), (3, 3)],
        [1, 1, 1, 1] => &[(1, 1), (2, 2), (3, 3), (4, 4)],
        [3, 1] => &[(4, 4)],
        [2, 1, 1] => &[(3, 3), (4, 4)],
        _ => &[],
    };
    l.iter().map(|&(p, q)| (p - 1, q - 1)).collect()
}

/// Maximum relative disagreement between the closed form and the oracle over all
/// listed parabolic entries, block determinants and output coordinates.
pub fn closed_form_vs_oracle(z: &UnipotentPoint, g: &GroupElement) -> Result<f64> {
    let cf = decompose_closed_form(z, g)?;
    let or = decompose_oracle(z, g)?;
    let ko = or.k.as_full().expect("oracle returns the full factor");
    let mut err: f64 = 0.0;
    let scale = ko.mat().max_norm().max(1.0);
    if let Some(kc) = cf.k.as_full() {
        for &(p, q) in &listed_k_positions(z.pattern()) {
            err = err.max((kc.mat()[(p, q)] - ko.mat()[(p, q)]).norm() / scale);
        }
    }
    for (a, b) in cf.k.block_dets().iter().zip(or.k.block_dets()) {
        err = err.max((a - b).norm() / b.norm().max(1.0));
    }
    err = err.max(coord_rel_err(cf.z_out.coords(), or.z_out.coords()));
    Ok(err)
}

/// `‖a − b‖∞ / max(‖b‖∞, 1)`.
pub fn coord_rel_err(a: &[C64], b: &[C64]) -> f64 {
    let sb = b.iter().map(|c| c.norm()).fold(1.0, f64::max);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
        / sb
}

/// Relative defects of `k_{g1g2}(z) = k_{g1}(z)·k_{g2}(zḡ1)` and `zḡ1ḡ2 = z(g1g2)‾`.
pub fn cocycle_defect(z: &UnipotentPoint, g1: &GroupElement, g2: &GroupElement, route: Route) -> Result<(f64, f64)> {
    let g12 = g1.compose(g2);
    let d12 = decompose(z, &g12, route)?;
    let d1 = decompose(z, g1, route)?;
    let d2 = decompose(&d1.z_out, g2, route)?;
    let k_err = match (&d12.k, &d1.k, &d2.k) {
        (KFactor::Full(k12), KFactor::Full(k1), KFactor::Full(k2)) => {
            let prod = k1.compose(k2);
            k12.mat().max_abs_diff(prod.mat()) / k12.mat().max_norm().max(1.0)
        }
        _ => {
            let a = d12.k.block_dets();
            let b: Vec<C64> = d1
                .k
                .block_dets()
                .iter()
                .zip(d2.k.block_dets())
                .map(|(x, y)| x * y)
                .collect();
            coord_rel_err(&b, &a)
        }
    };
    let z_err = coord_rel_err(d2.z_out.coords(), d12.z_out.coords());
    Ok((k_err, z_err))
}

/// The real 2×2 Möbius frame on `z21` and the transformed base point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GgFrame {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub k33: f64,
    pub x31: f64,
    pub x32: f64,
}

impl GgFrame {
    pub fn det(&self) -> f64 {
        self.alpha * self.delta - self.beta * self.gamma
    }

    /// `(α z + γ) / (β z + δ)`.
    pub fn mobius(&self, z: C64) -> C64 {
        (z * self.alpha + self.gamma) / (z * self.beta + self.delta)
    }
}

/// Frame read off `x·g = k·x′` on pattern (2,1) over the reals.
pub fn gg_frame(x31: f64, x32: f64, g: &GroupElement) -> Result<GgFrame> {
    if g.n() != 3 || g.field() != Field::Real {
        return Err(Error::DimensionMismatch("frame needs a real 3x3 element".into()));
    }
    let gr = |i: usize, j: usize| g.mat()[(i - 1, j - 1)].re;
    let d2 = |(a, b): (usize, usize), (c, d): (usize, usize)| gr(a, c) * gr(b, d) - gr(a, d) * gr(b, c);
    let k33 = gr(3, 3) + gr(2, 3) * x32 + gr(1, 3) * x31;
    let scale = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| {
            let z = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [x31, x32, 1.0]];
            (0..3).map(|l| z[i][l] * g.mat()[(l, j)].re).sum::<f64>().abs()
        })
        .fold(f64::MIN_POSITIVE, f64::max);
    let margin = k33.abs() / scale;
    if margin < GENERICITY_TOL {
        return Err(Error::DecompositionSingular { margin });
    }
    Ok(GgFrame {
        alpha: (d2((1, 3), (1, 3)) + d2((1, 2), (1, 3)) * x32) / k33,
        beta: (d2((1, 3), (2, 3)) + d2((1, 2), (2, 3)) * x32) / k33,
        gamma: (d2((2, 3), (1, 3)) - d2((1, 2), (1, 3)) * x31) / k33,
        delta: (d2((2, 3), (2, 3)) - d2((1, 2), (2, 3)) * x31) / k33,
        k33,
        x31: (gr(3, 1) + gr(2, 1) * x32 + gr(1, 1) * x31) / k33,
        x32: (gr(3, 2) + gr(2, 2) * x32 + gr(1, 2) * x31) / k33,
    })
}

/// The displayed formula for `z′21` on the full SL3 pattern with `x31, x32` substituted.
pub fn gg_z21_direct(z21: C64, x31: f64, x32: f64, g: &GroupElement) -> C64 {
    let gm = Ent(g.mat());
    let zz = z21 * x32 - x31;
    let num = gm.d2((2, 3), (1, 3)) + gm.d2((1, 3), (1, 3)) * z21 + gm.d2((1, 2), (1, 3)) * zz;
    let den = gm.d2((2, 3), (2, 3)) + gm.d2((1, 3), (2, 3)) * z21 + gm.d2((1, 2), (2, 3)) * zz;
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::random_group_element;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_patterns(field: Field) -> Vec<BlockPattern> {
        let blocks: &[&[usize]] = &[&[1, 1], &[1, 1, 1], &[2, 1], &[1, 1, 1, 1], &[3, 1], &[2, 1, 1], &[2, 2]];
        blocks.iter().map(|b| BlockPattern::new(b, field).unwrap()).collect()
    }

    #[test]
    fn positions_match_the_cells() {
        let p = BlockPattern::new(&[2, 2], Field::Complex).unwrap();
        assert_eq!(p.unipotent_positions(), vec![(2, 0), (2, 1), (3, 0), (3, 1)]);
        let p = BlockPattern::new(&[2, 1], Field::Complex).unwrap();
        assert_eq!(p.unipotent_positions(), vec![(2, 0), (2, 1)]);
        assert!(BlockPattern::new(&[1, 2], Field::Real).is_err());
    }

    #[test]
    fn identity_and_upper_inputs() {
        for p in all_patterns(Field::Complex) {
            let n = p.n();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let z = sample_unipotent(&mut rng, &p);
            let id = GroupElement::identity(n, Field::Complex);
            for route in [Route::Oracle, Route::ClosedForm] {
                let d = decompose(&z, &id, route).unwrap();
                assert!(coord_rel_err(d.z_out.coords(), z.coords()) < 1e-14, "{p}");
                assert!(d.k.block_dets().iter().all(|b| (b - 1.0).norm() < 1e-14));
            }
            // m already factored: g in the parabolic group, z = origin.
            let mut k = Mat::identity(n);
            for &(a, b) in &p.parabolic_positions() {
                if p.block_of(a) < p.block_of(b) {
                    k[(a, b)] = C64::new(0.3 * (a + 2 * b) as f64, -0.1);
                }
            }
            let g = GroupElement::new(k, Field::Complex).unwrap();
            let o = UnipotentPoint::origin(p.clone());
            let d = decompose_oracle(&o, &g).unwrap();
            assert!(d.k.as_full().unwrap().mat().max_abs_diff(&k) < 1e-14);
            assert!(d.z_out.coords().iter().all(|c| c.norm() < 1e-14));
        }
    }

    #[test]
    fn lower_unipotent_g_keeps_k_trivial() {
        let p = BlockPattern::full(3, Field::Complex).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = sample_unipotent(&mut rng, &p);
        let u = sample_unipotent(&mut rng, &p);
        let g = GroupElement::new(u.embed(), Field::Complex).unwrap();
        let d = decompose_closed_form(&z, &g).unwrap();
        let k = d.k.as_full().unwrap().mat();
        assert!(k.max_abs_diff(&Mat::identity(3)) < 1e-13);
        let expect = UnipotentPoint::from_matrix(p, &(&z.embed() * &u.embed()));
        assert!(coord_rel_err(d.z_out.coords(), expect.coords()) < 1e-13);
    }

    #[test]
    fn mobius_law_on_sl2r() {
        let g = GroupElement::new(Mat::from_real_rows(&[&[2.0, 1.0], &[3.0, 2.0]]).unwrap(), Field::Real).unwrap();
        let p = BlockPattern::full(2, Field::Real).unwrap();
        let x = 0.7;
        let z = UnipotentPoint::new(p, vec![C64::new(x, 0.0)]).unwrap();
        let out = birational_action(&z, &g).unwrap();
        assert!((out.coords()[0].re - (2.0 * x + 3.0) / (1.0 * x + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_oracle_spot() {
        for field in [Field::Real, Field::Complex] {
            for p in all_patterns(field) {
                if field == Field::Real && p.n() == 4 {
                    continue;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(17);
                for s in 0..50 {
                    let g = random_group_element(p.n(), field, 1000 + s, 1e3).unwrap();
                    let z = sample_unipotent(&mut rng, &p);
                    let e = closed_form_vs_oracle(&z, &g).unwrap();
                    assert!(e < 1e-10, "{p}: {e}");
                }
            }
        }
    }

    #[test]
    fn singular_point_detected_by_both_routes() {
        // Trailing entry of z·g vanishes: g33 + g23 z32 + g13 z31 = 0.
        let g = GroupElement::new(
            Mat::from_real_rows(&[&[1.0, 0.0, 1.0], &[0.0, 1.0, 1.0], &[0.0, 0.0, 1.0]]).unwrap(),
            Field::Complex,
        )
        .unwrap();
        for blocks in [&[1usize, 1, 1][..], &[2, 1]] {
            let p = BlockPattern::new(blocks, Field::Complex).unwrap();
            let mut coords = vec![C64::new(0.0, 0.0); p.unipotent_positions().len()];
            let i31 = p.unipotent_positions().iter().position(|&x| x == (2, 0)).unwrap();
            coords[i31] = C64::new(-1.0, 0.0);
            let z = UnipotentPoint::new(p, coords).unwrap();
            assert!(matches!(decompose_oracle(&z, &g), Err(Error::DecompositionSingular { .. })));
            assert!(matches!(decompose_closed_form(&z, &g), Err(Error::DecompositionSingular { .. })));
        }
    }

    #[test]
    fn gg_frame_of_diagonal() {
        let g = GroupElement::new(Mat::from_real_rows(&[&[2.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 0.5]]).unwrap(), Field::Real).unwrap();
        let f = gg_frame(0.0, 0.0, &g).unwrap();
        assert_eq!((f.alpha, f.beta, f.gamma, f.delta, f.k33), (2.0, 0.0, 0.0, 1.0, 0.5));
        let f = gg_frame(1.0, -2.0, &g).unwrap();
        assert_eq!((f.x31, f.x32), (4.0, -4.0));
        let id = gg_frame(0.3, 0.4, &GroupElement::identity(3, Field::Real)).unwrap();
        assert_eq!((id.alpha, id.beta, id.gamma, id.delta, id.k33, id.x31, id.x32), (1.0, 0.0, 0.0, 1.0, 1.0, 0.3, 0.4));
    }

    #[test]
    fn gg_frame_matches_oracle_and_direct_formula() {
        let p = BlockPattern::new(&[2, 1], Field::Real).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for s in 0..100 {
            let g = random_group_element(3, Field::Real, s, 1e3).unwrap();
            let z = sample_unipotent(&mut rng, &p);
            let (x31, x32) = (z.coords()[0].re, z.coords()[1].re);
            let f = gg_frame(x31, x32, &g).unwrap();
            let o = decompose_oracle(&z, &g).unwrap();
            let k = o.k.as_full().unwrap().mat();
            let sc = k.max_norm();
            for (a, b) in [(f.alpha, k[(0, 0)]), (f.beta, k[(0, 1)]), (f.gamma, k[(1, 0)]), (f.delta, k[(1, 1)]), (f.k33, k[(2, 2)])] {
                assert!((a - b.re).abs() < 1e-10 * sc);
            }
            let z21 = C64::new(0.4, 0.9);
            let a = f.mobius(z21);
            let b = gg_z21_direct(z21, x31, x32, &g);
            assert!((a - b).norm() < 1e-10 * b.norm().max(1.0));
        }
    }
}
