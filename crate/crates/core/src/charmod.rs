//! Characters of the parabolic groups, modular functions, the multiplier
//! `χ(k_g)·β^{-1/2}(k_g)`, and the parameter-equivalence relations.
//!
//! Every character is a product of factors `|d|^λ · d^{-j}` over block data `d`
//! (diagonal entries for the full pattern, block determinants otherwise).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flagdecomp::{decompose, BlockPattern, ParabolicElement, Route, UnipotentPoint};
use crate::matcore::{Field, GroupElement, C64};

/// Relative floor below which a block datum counts as zero.
pub const ZERO_DIAGONAL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SeriesId {
    Sl2cPrincipal,
    Sl2cComplementary,
    Sl2rPrincipal,
    Sl2rComplementary,
    Sl2rDiscrete,
    Sl2rLimitDiscrete,
    Sl3cPrincipal,
    Sl3cComplementary,
    Sl3cDegenerate,
    Sl3rPrincipal,
    Sl3rComplementary,
    Sl3rDegenerate,
    Sl3rGelfandGraev,
    Sl4cPrincipal,
    Sl4cDegenerate31,
    Sl4cDegenerate211,
    Sl4cDegenerate22,
    Sl4cComplementary1,
    Sl4cComplementary2,
    Sl4cComplementary3,
    Sl4cStein,
}

/// Number of parameters of each kind a series takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Arity {
    pub m: usize,
    pub rho: usize,
    pub sigma: usize,
    pub s_or_n: bool,
    pub half_plane: bool,
    /// Integer parameters restricted to {0, 1}.
    pub m_binary: bool,
}

impl SeriesId {
    pub const ALL: [SeriesId; 21] = [
        SeriesId::Sl2cPrincipal,
        SeriesId::Sl2cComplementary,
        SeriesId::Sl2rPrincipal,
        SeriesId::Sl2rComplementary,
        SeriesId::Sl2rDiscrete,
        SeriesId::Sl2rLimitDiscrete,
        SeriesId::Sl3cPrincipal,
        SeriesId::Sl3cComplementary,
        SeriesId::Sl3cDegenerate,
        SeriesId::Sl3rPrincipal,
        SeriesId::Sl3rComplementary,
        SeriesId::Sl3rDegenerate,
        SeriesId::Sl3rGelfandGraev,
        SeriesId::Sl4cPrincipal,
        SeriesId::Sl4cDegenerate31,
        SeriesId::Sl4cDegenerate211,
        SeriesId::Sl4cDegenerate22,
        SeriesId::Sl4cComplementary1,
        SeriesId::Sl4cComplementary2,
        SeriesId::Sl4cComplementary3,
        SeriesId::Sl4cStein,
    ];

    pub fn as_str(self) -> &'static str {
        use SeriesId::*;
        match self {
            Sl2cPrincipal => "sl2c-principal",
            Sl2cComplementary => "sl2c-complementary",
            Sl2rPrincipal => "sl2r-principal",
            Sl2rComplementary => "sl2r-complementary",
            Sl2rDiscrete => "sl2r-discrete",
            Sl2rLimitDiscrete => "sl2r-limit-discrete",
            Sl3cPrincipal => "sl3c-principal",
            Sl3cComplementary => "sl3c-complementary",
            Sl3cDegenerate => "sl3c-degenerate",
            Sl3rPrincipal => "sl3r-principal",
            Sl3rComplementary => "sl3r-complementary",
            Sl3rDegenerate => "sl3r-degenerate",
            Sl3rGelfandGraev => "sl3r-gg",
            Sl4cPrincipal => "sl4c-principal",
            Sl4cDegenerate31 => "sl4c-degenerate-31",
            Sl4cDegenerate211 => "sl4c-degenerate-211",
            Sl4cDegenerate22 => "sl4c-degenerate-22",
            Sl4cComplementary1 => "sl4c-complementary-1",
            Sl4cComplementary2 => "sl4c-complementary-2",
            Sl4cComplementary3 => "sl4c-complementary-3",
            Sl4cStein => "sl4c-stein",
        }
    }

    pub fn n(self) -> usize {
        let s = self.as_str();
        (s.as_bytes()[2] - b'0') as usize
    }

    pub fn field(self) -> Field {
        if self.as_str().as_bytes()[3] == b'r' {
            Field::Real
        } else {
            Field::Complex
        }
    }

    /// The block pattern of the parabolic group the series is induced from.
    pub fn blocks(self) -> &'static [usize] {
        use SeriesId::*;
        match self {
            Sl2cPrincipal | Sl2cComplementary | Sl2rPrincipal | Sl2rComplementary | Sl2rDiscrete
            | Sl2rLimitDiscrete => &[1, 1],
            Sl3cPrincipal | Sl3cComplementary | Sl3rPrincipal | Sl3rComplementary => &[1, 1, 1],
            Sl3cDegenerate | Sl3rDegenerate | Sl3rGelfandGraev => &[2, 1],
            Sl4cPrincipal | Sl4cComplementary1 | Sl4cComplementary2 => &[1, 1, 1, 1],
            Sl4cDegenerate31 => &[3, 1],
            Sl4cDegenerate211 | Sl4cComplementary3 => &[2, 1, 1],
            Sl4cDegenerate22 | Sl4cStein => &[2, 2],
        }
    }

    pub fn pattern(self) -> BlockPattern {
        BlockPattern::new(self.blocks(), self.field()).expect("catalogue patterns are supported")
    }

    pub fn arity(self) -> Arity {
        use SeriesId::*;
        let a = |m, rho, sigma| Arity {
            m,
            rho,
            sigma,
            s_or_n: false,
            half_plane: false,
            m_binary: false,
        };
        match self {
            Sl2cPrincipal => a(1, 1, 0),
            Sl2cComplementary | Sl2rComplementary | Sl4cStein => a(0, 0, 1),
            Sl2rPrincipal => Arity { m_binary: true, ..a(1, 1, 0) },
            Sl2rDiscrete => Arity { s_or_n: true, half_plane: true, ..a(0, 0, 0) },
            Sl2rLimitDiscrete => Arity { half_plane: true, ..a(0, 0, 0) },
            Sl3cPrincipal => a(2, 2, 0),
            Sl3cComplementary => a(1, 1, 1),
            Sl3cDegenerate | Sl4cDegenerate31 | Sl4cDegenerate22 => a(1, 1, 0),
            Sl3rPrincipal => Arity { m_binary: true, ..a(2, 2, 0) },
            Sl3rComplementary => Arity { m_binary: true, ..a(1, 1, 1) },
            Sl3rDegenerate => Arity { m_binary: true, ..a(1, 1, 0) },
            Sl3rGelfandGraev => Arity { s_or_n: true, ..a(0, 1, 0) },
            Sl4cPrincipal => a(3, 3, 0),
            Sl4cDegenerate211 => a(2, 2, 0),
            Sl4cComplementary1 => a(2, 2, 1),
            Sl4cComplementary2 => a(1, 1, 2),
            Sl4cComplementary3 => a(1, 1, 1),
        }
    }

    /// Whether the character has unit modulus.
    pub fn is_principal_type(self) -> bool {
        use SeriesId::*;
        matches!(
            self,
            Sl2cPrincipal
                | Sl2rPrincipal
                | Sl3cPrincipal
                | Sl3cDegenerate
                | Sl3rPrincipal
                | Sl3rDegenerate
                | Sl4cPrincipal
                | Sl4cDegenerate31
                | Sl4cDegenerate211
                | Sl4cDegenerate22
        )
    }

    pub fn is_complementary(self) -> bool {
        self.arity().sigma > 0
    }

    /// The multiplier law in closed form, for the catalogue.
    pub fn formula(self) -> &'static str {
        use SeriesId::*;
        match self {
            Sl2cPrincipal => "|a12 z+a22|^(-2+m+i rho) (a12 z+a22)^(-m) f((a11 z+a21)/(a12 z+a22))",
            Sl2cComplementary => "|a12 z+a22|^(-2-2 sigma) f((a11 z+a21)/(a12 z+a22))",
            Sl2rPrincipal => "|a12 x+a22|^(-1+i rho) sgn(a12 x+a22)^m f((a11 x+a21)/(a12 x+a22))",
            Sl2rComplementary => "|a12 x+a22|^(-1-sigma) f((a11 x+a21)/(a12 x+a22))",
            Sl2rDiscrete => "(a12 z+a22)^(-1-s) f((a11 z+a21)/(a12 z+a22)) on a half-plane",
            Sl2rLimitDiscrete => "(a12 z+a22)^(-1) f((a11 z+a21)/(a12 z+a22)) on a Hardy space",
            Sl3cPrincipal => "|k22|^(-2+m2+i rho2) k22^(-m2) |k33|^(-4+m3+i rho3) k33^(-m3) f(z g)",
            Sl3cComplementary => "|k22|^(-2+m+i rho+sigma) k22^(-m) |k33|^(-4+m+i rho-sigma) k33^(-m) f(z g)",
            Sl3cDegenerate => "|k33|^(-3+m+i rho) k33^(-m) f(z g) on Z(2,1)",
            Sl3rPrincipal => "|k22|^(-1+i rho2) sgn(k22)^m2 |k33|^(-2+i rho3) sgn(k33)^m3 f(x g)",
            Sl3rComplementary => "|k22|^(-1+i rho+sigma) sgn(k22)^(-m) |k33|^(-2+i rho-sigma) sgn(k33)^(-m) f(x g)",
            Sl3rDegenerate => "|k33|^(-3/2+m+i rho) k33^(-m) f(x g) on X(2,1)",
            Sl3rGelfandGraev => "|a d-b c|^(3/2+n/2+i rho) (b z21+d)^(-n) f((a z21+c)/(b z21+d), x31', x32')",
            Sl4cPrincipal => "|k22|^(-2+m2+i rho2) k22^(-m2) |k33|^(-4+m3+i rho3) k33^(-m3) |k44|^(-6+m4+i rho4) k44^(-m4) f(z g)",
            Sl4cDegenerate31 => "|k44|^(-4+m+i rho) k44^(-m) f(z g) on Z(3,1)",
            Sl4cDegenerate211 => "|k33|^(-3+m2+i rho2) k33^(-m2) |k44|^(-5+m3+i rho3) k44^(-m3) f(z g) on Z(2,1,1)",
            Sl4cDegenerate22 => "|det D|^(-4+m+i rho) (det D)^(-m) f(z g) on Z(2,2)",
            Sl4cComplementary1 => "|k22|^(-2+m2+i rho2) k22^(-m2) |k33|^(-4+m3+i rho3+sigma) k33^(-m3) |k44|^(-6+m3+i rho3-sigma) k44^(-m3) f(z g)",
            Sl4cComplementary2 => "|k22|^(-2-2 sigma1) |k33|^(-4+m+i rho+sigma2-sigma1) k33^(-m) |k44|^(-6+m+i rho-sigma2-sigma1) k44^(-m) f(z g)",
            Sl4cComplementary3 => "|k33|^(-3+m+i rho+sigma) k33^(-m) |k44|^(-5+m+i rho-sigma) k44^(-m) f(z g) on Z(2,1,1)",
            Sl4cStein => "|det D|^(-4-2 sigma) f(z g) on Z(2,2)",
        }
    }
}

impl fmt::Display for SeriesId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SeriesId {
    type Err = Error;
    fn from_str(s: &str) -> Result<SeriesId> {
        SeriesId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown series '{s}'")))
    }
}

impl Serialize for SeriesId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SeriesId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<SeriesId, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HalfPlane {
    Upper,
    Lower,
}

impl HalfPlane {
    pub fn sign(self) -> f64 {
        match self {
            HalfPlane::Upper => 1.0,
            HalfPlane::Lower => -1.0,
        }
    }

    pub fn contains(self, z: C64) -> bool {
        z.im * self.sign() > 0.0
    }
}

/// Parameters of a character.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CharacterParams {
    #[serde(default)]
    pub m: Vec<i64>,
    #[serde(default)]
    pub rho: Vec<f64>,
    #[serde(default)]
    pub sigma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_or_n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_plane: Option<HalfPlane>,
}

impl CharacterParams {
    pub fn new(m: &[i64], rho: &[f64], sigma: &[f64]) -> CharacterParams {
        CharacterParams {
            m: m.to_vec(),
            rho: rho.to_vec(),
            sigma: sigma.to_vec(),
            s_or_n: None,
            half_plane: None,
        }
    }

    pub fn discrete(s: u32, side: HalfPlane) -> CharacterParams {
        CharacterParams {
            s_or_n: Some(s),
            half_plane: Some(side),
            ..Default::default()
        }
    }

    pub fn limit(side: HalfPlane) -> CharacterParams {
        CharacterParams {
            half_plane: Some(side),
            ..Default::default()
        }
    }

    pub fn gelfand_graev(n1: u32, rho1: f64) -> CharacterParams {
        CharacterParams {
            rho: vec![rho1],
            s_or_n: Some(n1),
            ..Default::default()
        }
    }

    /// Checks arity and ranges (`0 < σ < 1`, binary `m` for real principal types,
    /// `s ≥ 1` for the discrete series, `n1 ≥ 2` for Gelfand–Graev).
    pub fn validate(&self, series: SeriesId) -> Result<()> {
        self.validate_shape(series)?;
        if let Some(s) = self.sigma.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
            return Err(Error::InvalidParams(format!("sigma = {s} outside (0, 1)")));
        }
        Ok(())
    }

    /// Arity and integer-range checks only; `σ` may be out of range (test-only inversions).
    pub fn validate_shape(&self, series: SeriesId) -> Result<()> {
        let a = series.arity();
        let bad = |what: &str| Err(Error::InvalidParams(format!("{series}: {what}")));
        if self.m.len() != a.m || self.rho.len() != a.rho || self.sigma.len() != a.sigma {
            return bad(&format!(
                "expected {} integer, {} rho and {} sigma parameters, got {}, {}, {}",
                a.m,
                a.rho,
                a.sigma,
                self.m.len(),
                self.rho.len(),
                self.sigma.len()
            ));
        }
        if a.s_or_n != self.s_or_n.is_some() {
            return bad("s / n1 parameter arity");
        }
        if a.half_plane != self.half_plane.is_some() {
            return bad("half-plane parameter arity");
        }
        if a.m_binary && self.m.iter().any(|m| !(0..=1).contains(m)) {
            return bad("integer parameters must lie in {0, 1}");
        }
        if self.rho.iter().chain(&self.sigma).any(|x| !x.is_finite()) {
            return bad("non-finite parameter");
        }
        match series {
            SeriesId::Sl2rDiscrete if self.s_or_n < Some(1) => bad("s must be >= 1"),
            SeriesId::Sl3rGelfandGraev if self.s_or_n < Some(2) => bad("n1 must be >= 2"),
            _ => Ok(()),
        }
    }
}

/// One factor `|d_block|^modulus · d_block^{-power}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CharFactor {
    pub block: usize,
    pub modulus: C64,
    pub power: i64,
}

fn factor(block: usize, modulus: C64, power: i64) -> CharFactor {
    CharFactor {
        block,
        modulus,
        power,
    }
}

/// A real sign factor `(d/|d|)^m` folded into `|d|^{-m}·d^{m}`.
fn with_sign(block: usize, modulus: C64, m: i64) -> CharFactor {
    factor(block, modulus - m as f64, -m)
}

/// The character as a list of factors on block data (block 0 is never used).
pub fn character_factors(series: SeriesId, p: &CharacterParams) -> Vec<CharFactor> {
    use SeriesId::*;
    let c = |re: f64, im: f64| C64::new(re, im);
    let mi = |i: usize| p.m[i];
    let mf = |i: usize| p.m[i] as f64;
    let r = |i: usize| p.rho[i];
    let s = |i: usize| p.sigma[i];
    match series {
        Sl2cPrincipal => vec![factor(1, c(mf(0), r(0)), mi(0))],
        Sl2cComplementary => vec![factor(1, c(-2.0 * s(0), 0.0), 0)],
        Sl2rPrincipal => vec![with_sign(1, c(0.0, r(0)), mi(0))],
        Sl2rComplementary => vec![factor(1, c(-s(0), 0.0), 0)],
        Sl2rDiscrete => vec![factor(1, c(1.0, 0.0), 1 + p.s_or_n.unwrap_or(1) as i64)],
        Sl2rLimitDiscrete => vec![factor(1, c(1.0, 0.0), 1)],
        Sl3cPrincipal => vec![
            factor(1, c(mf(0), r(0)), mi(0)),
            factor(2, c(mf(1), r(1)), mi(1)),
        ],
        Sl3cComplementary => vec![
            factor(1, c(mf(0) + s(0), r(0)), mi(0)),
            factor(2, c(mf(0) - s(0), r(0)), mi(0)),
        ],
        Sl3cDegenerate | Sl4cDegenerate31 | Sl4cDegenerate22 => {
            vec![factor(1, c(mf(0), r(0)), mi(0))]
        }
        Sl3rPrincipal => vec![
            with_sign(1, c(0.0, r(0)), mi(0)),
            with_sign(2, c(0.0, r(1)), mi(1)),
        ],
        // Sign exponent as in the operator law, (k/|k|)^{-m}.
        Sl3rComplementary => vec![
            with_sign(1, c(s(0), r(0)), -mi(0)),
            with_sign(2, c(-s(0), r(0)), -mi(0)),
        ],
        Sl3rDegenerate => vec![factor(1, c(mf(0), r(0)), mi(0))],
        // Modulus part only; the GL2 block also acts through (β z21 + δ)^{-n1}.
        Sl3rGelfandGraev => vec![factor(0, c(p.s_or_n.unwrap_or(2) as f64 / 2.0, r(0)), 0)],
        Sl4cPrincipal => vec![
            factor(1, c(mf(0), r(0)), mi(0)),
            factor(2, c(mf(1), r(1)), mi(1)),
            factor(3, c(mf(2), r(2)), mi(2)),
        ],
        Sl4cDegenerate211 => vec![
            factor(1, c(mf(0), r(0)), mi(0)),
            factor(2, c(mf(1), r(1)), mi(1)),
        ],
        Sl4cComplementary1 => vec![
            factor(1, c(mf(0), r(0)), mi(0)),
            factor(2, c(mf(1) + s(0), r(1)), mi(1)),
            factor(3, c(mf(1) - s(0), r(1)), mi(1)),
        ],
        Sl4cComplementary2 => vec![
            factor(1, c(-2.0 * s(0), 0.0), 0),
            factor(2, c(mf(0) + s(1) - s(0), r(0)), mi(0)),
            factor(3, c(mf(0) - s(1) - s(0), r(0)), mi(0)),
        ],
        Sl4cComplementary3 => vec![
            factor(1, c(mf(0) + s(0), r(0)), mi(0)),
            factor(2, c(mf(0) - s(0), r(0)), mi(0)),
        ],
        Sl4cStein => vec![factor(1, c(-2.0 * s(0), 0.0), 0)],
    }
}

/// Exponents `e_b` with `β(k) = Π_b |d_b|^{e_b}`; block 0 is eliminated by the unit
/// determinant and always gets exponent 0.
pub fn modular_exponents(pattern: &BlockPattern) -> Vec<f64> {
    let c = pattern.field().c();
    let blocks = pattern.blocks();
    let raw: Vec<f64> = (0..blocks.len())
        .map(|b| {
            let before: usize = blocks[..b].iter().sum();
            let after: usize = blocks[b + 1..].iter().sum();
            c * (before as f64 - after as f64)
        })
        .collect();
    raw.iter().map(|e| e - raw[0]).collect()
}

fn check_data(d: &[C64]) -> Result<()> {
    let scale = d.iter().map(|x| x.norm()).fold(1.0, f64::max);
    for x in d {
        if x.norm() < ZERO_DIAGONAL_TOL * scale || !x.norm().is_finite() {
            return Err(Error::ZeroDiagonal(x.norm()));
        }
    }
    Ok(())
}

/// `d^{-j}` by repeated multiplication.
fn int_power(d: C64, j: i64) -> C64 {
    let mut out = C64::new(1.0, 0.0);
    let base = if j >= 0 { d.inv() } else { d };
    for _ in 0..j.unsigned_abs() {
        out *= base;
    }
    out
}

fn eval_factors(factors: &[CharFactor], data: &[C64]) -> C64 {
    let mut out = C64::new(1.0, 0.0);
    for f in factors {
        let d = data[f.block];
        out *= (f.modulus * d.norm().ln()).exp() * int_power(d, f.power);
    }
    out
}

/// `χ(k)` from the block data of `k`.
pub fn character_from_data(series: SeriesId, params: &CharacterParams, data: &[C64]) -> Result<C64> {
    check_data(data)?;
    Ok(eval_factors(&character_factors(series, params), data))
}

pub fn character_eval(series: SeriesId, params: &CharacterParams, k: &ParabolicElement) -> Result<C64> {
    if k.pattern().blocks() != series.blocks() {
        return Err(Error::DimensionMismatch(format!(
            "{series} needs pattern ({}), got ({})",
            series.pattern().label(),
            k.pattern().label()
        )));
    }
    character_from_data(series, params, &k.block_dets())
}

pub fn modular_from_data(pattern: &BlockPattern, data: &[C64]) -> Result<f64> {
    check_data(data)?;
    Ok(modular_exponents(pattern)
        .iter()
        .zip(data)
        .map(|(e, d)| d.norm().powf(*e))
        .product())
}

pub fn modular_eval(pattern: &BlockPattern, k: &ParabolicElement) -> Result<f64> {
    modular_from_data(pattern, &k.block_dets())
}

/// `χ·β^{-1/2}` on block data.
pub fn multiplier_from_data(series: SeriesId, params: &CharacterParams, data: &[C64]) -> Result<C64> {
    let chi = character_from_data(series, params, data)?;
    let beta = modular_from_data(&series.pattern(), data)?;
    Ok(chi / beta.sqrt())
}

/// The multiplier at `(z, g)` through the chosen decomposition route.
///
/// Not defined for the Gelfand–Graev series, whose multiplier lives on its own frame.
pub fn multiplier(
    series: SeriesId,
    params: &CharacterParams,
    z: &UnipotentPoint,
    g: &GroupElement,
    route: Route,
) -> Result<C64> {
    if series == SeriesId::Sl3rGelfandGraev {
        return Err(Error::Unsupported("the Gelfand-Graev multiplier needs the frame".into()));
    }
    if z.pattern().blocks() != series.blocks() {
        return Err(Error::DimensionMismatch("point pattern differs from the series".into()));
    }
    let d = decompose(z, g, route)?;
    multiplier_from_data(series, params, &d.k.block_dets())
}

/// `(m2, m3, ρ2, ρ3)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sl3Params {
    pub m2: i64,
    pub m3: i64,
    pub rho2: f64,
    pub rho3: f64,
}

impl Sl3Params {
    pub fn new(m2: i64, m3: i64, rho2: f64, rho3: f64) -> Sl3Params {
        Sl3Params { m2, m3, rho2, rho3 }
    }

    fn reduce_mod2(self) -> Sl3Params {
        Sl3Params {
            m2: self.m2.rem_euclid(2),
            m3: self.m3.rem_euclid(2),
            ..self
        }
    }

    fn close(&self, o: &Sl3Params) -> bool {
        self.m2 == o.m2
            && self.m3 == o.m3
            && (self.rho2 - o.rho2).abs() <= 1e-12 * (1.0 + self.rho2.abs())
            && (self.rho3 - o.rho3).abs() <= 1e-12 * (1.0 + self.rho3.abs())
    }
}

/// The six listed equivalence transformations, in the listed order.
pub const WEYL_MAPS: [fn(Sl3Params) -> Sl3Params; 6] = [
    |p| p,
    |p| Sl3Params::new(-p.m2, p.m3 - p.m2, -p.rho2, p.rho3 - p.rho2),
    |p| Sl3Params::new(p.m3 - p.m2, -p.m2, p.rho3 - p.rho2, -p.rho2),
    |p| Sl3Params::new(-p.m3, p.m2 - p.m3, -p.rho3, p.rho2 - p.rho3),
    |p| Sl3Params::new(p.m3, p.m2, p.rho3, p.rho2),
    |p| Sl3Params::new(p.m2 - p.m3, -p.m3, p.rho2 - p.rho3, -p.rho3),
];

/// The set of images under [`WEYL_MAPS`]; integer parts reduced into {0, 1} when `real`.
pub fn weyl_orbit_sl3(p: Sl3Params, real: bool) -> Vec<Sl3Params> {
    let mut out: Vec<Sl3Params> = Vec::with_capacity(6);
    for map in WEYL_MAPS {
        let mut q = map(p);
        if real {
            q = q.reduce_mod2();
        }
        if !out.iter().any(|o| o.close(&q)) {
            out.push(q);
        }
    }
    out
}

fn params_equal(a: &CharacterParams, b: &CharacterParams) -> bool {
    let close = |x: &[f64], y: &[f64]| {
        x.len() == y.len() && x.iter().zip(y).all(|(u, v)| (u - v).abs() <= 1e-12 * (1.0 + u.abs()))
    };
    a.m == b.m
        && close(&a.rho, &b.rho)
        && close(&a.sigma, &b.sigma)
        && a.s_or_n == b.s_or_n
        && a.half_plane == b.half_plane
}

fn sl3_tuple(p: &CharacterParams) -> Sl3Params {
    Sl3Params::new(p.m[0], p.m[1], p.rho[0], p.rho[1])
}

/// Equivalence of two parameter records of the same series.
pub fn are_equivalent(series: SeriesId, a: &CharacterParams, b: &CharacterParams) -> bool {
    if a.validate_shape(series).is_err() || b.validate_shape(series).is_err() {
        return false;
    }
    let eq = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs());
    match series {
        SeriesId::Sl2cPrincipal => {
            (a.m[0] == b.m[0] && eq(a.rho[0], b.rho[0])) || (a.m[0] == -b.m[0] && eq(a.rho[0], -b.rho[0]))
        }
        SeriesId::Sl2rPrincipal => a.m[0] == b.m[0] && (eq(a.rho[0], b.rho[0]) || eq(a.rho[0], -b.rho[0])),
        SeriesId::Sl3cPrincipal | SeriesId::Sl3rPrincipal => {
            let real = series == SeriesId::Sl3rPrincipal;
            let target = sl3_tuple(b);
            weyl_orbit_sl3(sl3_tuple(a), real).iter().any(|q| q.close(&target))
        }
        _ => params_equal(a, b),
    }
}

/// False exactly at `(m2, ρ2) = (1, 0)`.
pub fn irreducibility_flag_sl2r(params: &CharacterParams) -> bool {
    !(params.m.first() == Some(&1) && params.rho.first() == Some(&0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::Mat;

    fn data(v: &[(f64, f64)]) -> Vec<C64> {
        v.iter().map(|&(a, b)| C64::new(a, b)).collect()
    }

    #[test]
    fn catalogue_round_trips() {
        for id in SeriesId::ALL {
            assert_eq!(id.as_str().parse::<SeriesId>().unwrap(), id);
            assert_eq!(id.pattern().n(), id.n());
        }
        assert!("sl5c-principal".parse::<SeriesId>().is_err());
    }

    #[test]
    fn sl2c_principal_value() {
        let p = CharacterParams::new(&[1], &[0.0], &[]);
        let v = character_from_data(SeriesId::Sl2cPrincipal, &p, &data(&[(0.0, -0.5), (0.0, 2.0)])).unwrap();
        assert!((v - C64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn modular_tables() {
        let e = |b: &[usize], f| modular_exponents(&BlockPattern::new(b, f).unwrap());
        assert_eq!(e(&[1, 1], Field::Complex), vec![0.0, 4.0]);
        assert_eq!(e(&[1, 1], Field::Real), vec![0.0, 2.0]);
        assert_eq!(e(&[1, 1, 1], Field::Complex), vec![0.0, 4.0, 8.0]);
        assert_eq!(e(&[1, 1, 1], Field::Real), vec![0.0, 2.0, 4.0]);
        assert_eq!(e(&[2, 1], Field::Complex), vec![0.0, 6.0]);
        assert_eq!(e(&[2, 1], Field::Real), vec![0.0, 3.0]);
        assert_eq!(e(&[1, 1, 1, 1], Field::Complex), vec![0.0, 4.0, 8.0, 12.0]);
        assert_eq!(e(&[3, 1], Field::Complex), vec![0.0, 8.0]);
        assert_eq!(e(&[2, 1, 1], Field::Complex), vec![0.0, 6.0, 10.0]);
        assert_eq!(e(&[2, 2], Field::Complex), vec![0.0, 8.0]);
    }

    #[test]
    fn modular_values() {
        let p3 = BlockPattern::full(3, Field::Complex).unwrap();
        let b = modular_from_data(&p3, &data(&[(0.5, 0.0), (0.0, 2.0), (1.0, 0.0)])).unwrap();
        assert!((b - 16.0).abs() < 1e-12);
        let p22 = BlockPattern::new(&[2, 2], Field::Complex).unwrap();
        let b = modular_from_data(&p22, &data(&[(0.5, 0.0), (2.0, 0.0)])).unwrap();
        assert!((b - 256.0).abs() < 1e-10);
    }

    #[test]
    fn identity_gives_one() {
        for id in SeriesId::ALL {
            let p = sample_params(id);
            let k = ParabolicElement::identity(id.pattern());
            assert_eq!(character_eval(id, &p, &k).unwrap(), C64::new(1.0, 0.0));
        }
    }

    #[test]
    fn zero_datum_rejected() {
        let p = CharacterParams::new(&[1], &[0.0], &[]);
        let r = character_from_data(SeriesId::Sl2cPrincipal, &p, &data(&[(1.0, 0.0), (0.0, 0.0)]));
        assert!(matches!(r, Err(Error::ZeroDiagonal(_))));
    }

    #[test]
    fn multiplier_at_rotation() {
        let g = GroupElement::new(Mat::from_real_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).unwrap(), Field::Complex).unwrap();
        let z = UnipotentPoint::new(BlockPattern::full(2, Field::Complex).unwrap(), vec![C64::new(1.0, 0.0)]).unwrap();
        let p = CharacterParams::new(&[0], &[0.0], &[]);
        let v = multiplier(SeriesId::Sl2cPrincipal, &p, &z, &g, Route::ClosedForm).unwrap();
        assert!((v - 1.0).norm() < 1e-15);
    }

    #[test]
    fn listed_equivalences() {
        let c = |m: &[i64], r: &[f64]| CharacterParams::new(m, r, &[]);
        assert!(are_equivalent(SeriesId::Sl2cPrincipal, &c(&[1], &[2.0]), &c(&[-1], &[-2.0])));
        assert!(!are_equivalent(SeriesId::Sl2cPrincipal, &c(&[1], &[2.0]), &c(&[-1], &[2.0])));
        assert!(!are_equivalent(SeriesId::Sl2rPrincipal, &c(&[1], &[2.0]), &c(&[0], &[2.0])));
        assert!(are_equivalent(SeriesId::Sl2rPrincipal, &c(&[1], &[2.0]), &c(&[1], &[-2.0])));
        assert!(are_equivalent(SeriesId::Sl3cPrincipal, &c(&[1, 2], &[0.5, 1.5]), &c(&[2, 1], &[1.5, 0.5])));
    }

    #[test]
    fn orbit_of_listed_example() {
        let o = weyl_orbit_sl3(Sl3Params::new(1, 2, 0.5, 1.5), false);
        let expect = [
            Sl3Params::new(1, 2, 0.5, 1.5),
            Sl3Params::new(-1, 1, -0.5, 1.0),
            Sl3Params::new(1, -1, 1.0, -0.5),
            Sl3Params::new(-2, -1, -1.5, -1.0),
            Sl3Params::new(2, 1, 1.5, 0.5),
            Sl3Params::new(-1, -2, -1.0, -1.5),
        ];
        assert_eq!(o.len(), 6);
        for e in expect {
            assert!(o.iter().any(|q| q.close(&e)), "{e:?}");
        }
        assert_eq!(weyl_orbit_sl3(Sl3Params::new(0, 0, 0.0, 0.0), false).len(), 1);
    }

    #[test]
    fn irreducibility() {
        let c = |m: i64, r: f64| CharacterParams::new(&[m], &[r], &[]);
        assert!(!irreducibility_flag_sl2r(&c(1, 0.0)));
        assert!(irreducibility_flag_sl2r(&c(0, 0.0)));
        assert!(irreducibility_flag_sl2r(&c(1, 1e-9)));
    }

    #[test]
    fn param_validation() {
        assert!(CharacterParams::new(&[], &[], &[1.0]).validate(SeriesId::Sl4cStein).is_err());
        assert!(CharacterParams::new(&[], &[], &[0.5]).validate(SeriesId::Sl4cStein).is_ok());
        assert!(CharacterParams::new(&[2], &[0.0], &[]).validate(SeriesId::Sl2rPrincipal).is_err());
        assert!(CharacterParams::gelfand_graev(1, 0.0).validate(SeriesId::Sl3rGelfandGraev).is_err());
        assert!(CharacterParams::discrete(0, HalfPlane::Upper).validate(SeriesId::Sl2rDiscrete).is_err());
    }

    /// A representative valid parameter record per series.
    pub(crate) fn sample_params(id: SeriesId) -> CharacterParams {
        let a = id.arity();
        let m: Vec<i64> = (0..a.m).map(|i| if a.m_binary { (i % 2) as i64 } else { i as i64 - 1 }).collect();
        let rho: Vec<f64> = (0..a.rho).map(|i| 0.3 + 0.7 * i as f64).collect();
        let sigma: Vec<f64> = (0..a.sigma).map(|i| 0.4 + 0.2 * i as f64).collect();
        CharacterParams {
            m,
            rho,
            sigma,
            s_or_n: a.s_or_n.then_some(2),
            half_plane: a.half_plane.then_some(HalfPlane::Upper),
        }
    }
}
